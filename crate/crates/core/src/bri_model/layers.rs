//! Graph layers on a batch of dialogs laid out block-diagonally: `n` vertices
//! in total, dense `n × n` matrices for the per-batch adjacency.

use candle_core::{DType, Device, Tensor, D};

use crate::dialog_graph::{EdgeType, WEIGHT_EPS};
use crate::error::{Error, Result};
use crate::nn::{linear, softmax_last};

/// Topology of a batch: global edge list (replier → replied), edge types and
/// the vertex span of every dialog.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchTopology {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub types: Vec<EdgeType>,
    pub spans: Vec<(usize, usize)>,
}

impl BatchTopology {
    pub fn push(&mut self, vertices: usize, edges: &[(usize, usize)], types: &[EdgeType]) {
        let off = self.n;
        self.edges.extend(edges.iter().map(|&(i, j)| (i + off, j + off)));
        self.types.extend_from_slice(types);
        self.spans.push((off, vertices));
        self.n += vertices;
    }

    fn dense(&self, entries: impl Iterator<Item = (usize, usize, f64)>, dtype: DType) -> Result<Tensor> {
        let mut m = vec![0.0; self.n * self.n];
        for (i, j, v) in entries {
            m[i * self.n + j] += v;
        }
        Ok(Tensor::from_vec(m, (self.n, self.n), &Device::Cpu)?.to_dtype(dtype)?)
    }

    /// `m[i][j] = 1` for every edge `i → j`.
    pub fn edge_mask(&self, dtype: DType) -> Result<Tensor> {
        self.dense(self.edges.iter().map(|&(i, j)| (i, j, 1.0)), dtype)
    }

    /// Per-type aggregation matrices: `a_t[i][j] = 1 / c_{i,t}` when `j`
    /// replies to `i` through an edge of type `t`, where `c_{i,t}` counts such
    /// in-edges of `i`.
    pub fn type_matrices(&self, dtype: DType) -> Result<Vec<Tensor>> {
        EdgeType::ALL
            .iter()
            .map(|&t| {
                let mut indeg = vec![0usize; self.n];
                for (&(_, i), &et) in self.edges.iter().zip(&self.types) {
                    if et == t {
                        indeg[i] += 1;
                    }
                }
                self.dense(
                    self.edges
                        .iter()
                        .zip(&self.types)
                        .filter(|(_, &et)| et == t)
                        .map(|(&(j, i), _)| (i, j, 1.0 / indeg[i] as f64)),
                    dtype,
                )
            })
            .collect()
    }
}

/// Dense edge-weight matrix `w[i][j]` from vertex vectors `u` (n × d) and the
/// bilinear similarity matrix `w_e`: clipped scores normalized per source,
/// uniform over the out-edges when they sum to (almost) zero.
pub fn edge_weights(u: &Tensor, w_e: &Tensor, topo: &BatchTopology) -> Result<Tensor> {
    let dtype = u.dtype();
    let mask = topo.edge_mask(dtype)?;
    let scores = u.matmul(w_e)?.matmul(&u.t()?)?;
    let clipped = (scores.relu()? * &mask)?;
    let sums = clipped.sum_keepdim(1)?;
    let sums_host: Vec<f64> = sums.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    let mut degree = vec![0.0f64; topo.n];
    for &(i, _) in &topo.edges {
        degree[i] += 1.0;
    }
    let mut keep = vec![0.0; topo.n];
    let mut fallback = vec![0.0; topo.n];
    let mut extra = vec![0.0; topo.n];
    for i in 0..topo.n {
        if degree[i] == 0.0 {
            extra[i] = 1.0;
        } else if sums_host[i] > WEIGHT_EPS {
            keep[i] = 1.0;
        } else {
            fallback[i] = 1.0;
            extra[i] = degree[i];
        }
    }
    let col = |v: Vec<f64>| -> Result<Tensor> { Ok(Tensor::from_vec(v, (topo.n, 1), &Device::Cpu)?.to_dtype(dtype)?) };
    let (keep, fallback, extra) = (col(keep)?, col(fallback)?, col(extra)?);
    let numer = (clipped.broadcast_mul(&keep)? + mask.broadcast_mul(&fallback)?)?;
    let denom = (sums.broadcast_mul(&keep)? + extra)?;
    Ok(numer.broadcast_div(&denom)?)
}

/// `v¹_i = ReLU(W1 u_i + W2 Σ_{j→i} w_ji u_j)` for all vertices at once.
pub fn structure_layer(u: &Tensor, weights: &Tensor, w1: &Tensor, w2: &Tensor) -> Result<Tensor> {
    let incoming = weights.t()?.matmul(u)?;
    Ok((linear(u, w1, None)? + linear(&incoming, w2, None)?)?.relu()?)
}

/// `h_i = ReLU(W1 v_i + Σ_t Σ_{j→i, type t} W_t v_j / c_{i,t})`.
pub fn role_layer(v: &Tensor, type_mats: &[Tensor], w1: &Tensor, w_types: &[Tensor]) -> Result<Tensor> {
    if type_mats.len() != w_types.len() {
        return Err(Error::Shape("one relation matrix per edge type is required".into()));
    }
    let mut acc = linear(v, w1, None)?;
    for (a, w) in type_mats.iter().zip(w_types) {
        acc = (acc + linear(&a.matmul(v)?, w, None)?)?;
    }
    Ok(acc.relu()?)
}

pub fn combine(u: &Tensor, h: &Tensor) -> Result<Tensor> {
    Ok(Tensor::cat(&[u, h], D::Minus1)?)
}

/// Sum-pool ⊕ max-pool over the vertices of each dialog, `(dialogs, 2·d)`.
pub fn dialog_embedding(c: &Tensor, spans: &[(usize, usize)]) -> Result<Tensor> {
    let rows = spans
        .iter()
        .map(|&(start, len)| {
            if len == 0 {
                return Err(Error::Shape("dialog without vertices".into()));
            }
            let block = c.narrow(0, start, len)?;
            Ok(Tensor::cat(&[block.sum(0)?, block.max(0)?], 0)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&rows, 0)?)
}

/// Two dense layers with a ReLU in between; returns logits `(batch, 2)`.
pub fn classifier_logits(g: &Tensor, fc1: (&Tensor, &Tensor), fc2: (&Tensor, &Tensor)) -> Result<Tensor> {
    let h = linear(g, fc1.0, Some(fc1.1))?.relu()?;
    linear(&h, fc2.0, Some(fc2.1))
}

pub fn probabilities(logits: &Tensor) -> Result<Tensor> {
    softmax_last(logits)
}

/// Mean focal loss `−α_y (1 − p_y)^γ log p_y` over a batch of probability
/// rows, with `p_y` clamped at 1e-12.
pub fn focal_loss(probs: &Tensor, targets: &[usize], alpha: &[f64], gamma: f64) -> Result<Tensor> {
    let (b, k) = probs.dims2()?;
    if targets.len() != b || alpha.len() != k {
        return Err(Error::Shape(format!(
            "{b} predictions, {} targets, {} class weights for {k} classes",
            targets.len(),
            alpha.len()
        )));
    }
    let idx = Tensor::from_vec(targets.iter().map(|&t| t as u32).collect::<Vec<_>>(), (b, 1), probs.device())?;
    let p = probs.gather(&idx, 1)?.squeeze(1)?.clamp(1e-12, 1.0)?;
    let a = Tensor::from_vec(targets.iter().map(|&t| alpha[t]).collect::<Vec<_>>(), b, probs.device())?
        .to_dtype(probs.dtype())?;
    let modulating = if gamma == 0.0 {
        Tensor::ones_like(&p)?
    } else {
        p.affine(-1.0, 1.0)?.powf(gamma)?
    };
    Ok((a * modulating)?.mul(&p.log()?)?.neg()?.mean_all()?)
}
