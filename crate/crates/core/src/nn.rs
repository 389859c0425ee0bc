//! Small tensor toolkit on top of candle: a named parameter store with seeded
//! initialization, seeded dropout, and a few differentiable building blocks.
//!
//! Everything random here draws from a caller-supplied `ChaCha8Rng`, never
//! from candle's thread-local generator, so runs are reproducible.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub type Rng8 = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng8 {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Derives an independent stream for a named component.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, mixed with the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Normal(f64),
    /// Uniform in `[-a, a]`.
    Uniform(f64),
    Zeros,
    Ones,
}

/// Named trainable tensors. Names follow the `a.b.c` convention so that
/// checkpoints written by other tooling can be loaded.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Returns the parameter `name`, creating it with `init` if absent.
    /// A pre-existing (e.g. loaded) tensor must have the requested shape.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut Rng8) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    v.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Uniform(a) => (0..n).map(|_| rng.random_range(-a..=a)).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    /// Stores `value` under `name`, replacing any previous tensor.
    pub fn insert(&mut self, name: &str, value: &Tensor) -> Result<()> {
        self.vars.insert(name.to_string(), Var::from_tensor(value)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars_where(&self, pred: impl Fn(&str) -> bool) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| pred(k))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    /// Drops every parameter whose name satisfies `pred` so it gets
    /// re-initialized on the next `param` call.
    pub fn remove_where(&mut self, pred: impl Fn(&str) -> bool) {
        self.vars.retain(|k, _| !pred(k));
    }

    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let v = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Validation(format!("unknown parameter {name}")))?;
        Ok(v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors, path)?;
        Ok(())
    }

    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        if !path.exists() {
            return Err(Error::CheckpointNotFound(path.to_path_buf()));
        }
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        let mut store = Self::new(dtype);
        for (k, t) in tensors {
            store.vars.insert(k, Var::from_tensor(&t.to_dtype(dtype)?)?);
        }
        Ok(store)
    }

    /// Sum of squares over the selected parameters.
    pub fn squared_norm(&self, pred: impl Fn(&str) -> bool) -> Result<Tensor> {
        let mut total = Tensor::zeros((), self.dtype, &self.device)?;
        for (k, v) in &self.vars {
            if pred(k) {
                total = (total + v.as_tensor().sqr()?.sum_all()?)?;
            }
        }
        Ok(total)
    }
}

/// Inverted dropout with a seeded mask. Identity when `p == 0` or not training.
pub fn dropout(x: &Tensor, p: f64, train: bool, rng: &mut Rng8) -> Result<Tensor> {
    if !train || p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let n = x.elem_count();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn layer_norm(x: &Tensor, weight: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed.broadcast_mul(weight)?.broadcast_add(bias)?)
}

/// `x · Wᵀ + b` for `x` of shape `(.., in)` and `W` of shape `(out, in)`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let y = match x.rank() {
        2 => x.matmul(&weight.t()?)?,
        _ => x.broadcast_matmul(&weight.t()?)?,
    };
    Ok(match bias {
        Some(b) => y.broadcast_add(b)?,
        None => y,
    })
}

/// Mean cross-entropy of `logits` (batch, classes) against class indices.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let logp = log_softmax_last(logits)?;
    let idx = Tensor::from_vec(
        targets.iter().map(|&t| t as u32).collect::<Vec<_>>(),
        (targets.len(), 1),
        logits.device(),
    )?;
    let picked = logp.gather(&idx, 1)?;
    Ok(picked.neg()?.mean_all()?)
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut total = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v) {
            total += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for v in vars {
            if let Some(g) = grads.get(v) {
                let scaled = (g * scale)?;
                grads.insert(v, scaled);
            }
        }
    }
    Ok(norm)
}

pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)
}

pub fn to_f64_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec2()?)
}

pub fn from_rows(rows: &[Vec<f64>], dtype: DType) -> Result<Tensor> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Tensor::from_vec(flat, (n, d), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_params_are_reproducible() {
        let mk = || {
            let mut s = ParamStore::new(DType::F64);
            let mut rng = seeded(7);
            s.param("w", &[3, 4], Init::Normal(0.1), &mut rng).unwrap();
            s.values("w").unwrap()
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0], [-5.0, 0.0, 5.0]], &Device::Cpu).unwrap();
        let p = to_f64_rows(&softmax_last(&x).unwrap()).unwrap();
        for row in p {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_k() {
        let x = Tensor::zeros((5, 4), DType::F64, &Device::Cpu).unwrap();
        let l = cross_entropy(&x, &[0, 1, 2, 3, 0]).unwrap().to_scalar::<f64>().unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dropout_keeps_expectation_and_is_seeded() {
        let x = Tensor::ones(10_000, DType::F64, &Device::Cpu).unwrap();
        let a = to_f64_vec(&dropout(&x, 0.5, true, &mut seeded(1)).unwrap()).unwrap();
        let b = to_f64_vec(&dropout(&x, 0.5, true, &mut seeded(1)).unwrap()).unwrap();
        assert_eq!(a, b);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - 1.0).abs() < 0.05);
        let eval = to_f64_vec(&dropout(&x, 0.5, false, &mut seeded(1)).unwrap()).unwrap();
        assert!(eval.iter().all(|&v| v == 1.0));
    }
}
