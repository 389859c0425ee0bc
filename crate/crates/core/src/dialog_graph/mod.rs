//! Directed reply graph of one dialog with similarity-normalized edge weights
//! and role-pair edge types.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{Dialog, Role};
use crate::error::{Error, Result};

/// Below this, a vertex's summed out-scores count as zero.
pub const WEIGHT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    R2R,
    R2D,
    D2R,
    D2D,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [EdgeType::R2R, EdgeType::R2D, EdgeType::D2R, EdgeType::D2D];

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn assign_edge_types(replier: Role, replied: Role) -> EdgeType {
    match (replier, replied) {
        (Role::Reporter, Role::Reporter) => EdgeType::R2R,
        (Role::Reporter, Role::Discussant) => EdgeType::R2D,
        (Role::Discussant, Role::Reporter) => EdgeType::D2R,
        (Role::Discussant, Role::Discussant) => EdgeType::D2D,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: String,
    pub role: Role,
    pub vector: Vec<f64>,
}

/// `edges[k] = (i, j)` means vertex `i` replies to vertex `j`; `weights[k]`
/// and `types[k]` belong to that edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    pub types: Vec<EdgeType>,
}

impl DialogGraph {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vertices.first().map_or(0, |v| v.vector.len())
    }

    /// Recomputes the edge weights for a new `W_e`; topology is untouched.
    pub fn reweight(&mut self, w_e: &[Vec<f64>]) -> Result<()> {
        self.weights = compute_edge_weights(self, w_e)?;
        Ok(())
    }

    /// Dense `n × n` weight matrix, `m[i][j] = w_ij`.
    pub fn weight_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut m = vec![vec![0.0; n]; n];
        for (&(i, j), &w) in self.edges.iter().zip(&self.weights) {
            m[i][j] += w;
        }
        m
    }
}

fn bilinear(a: &[f64], w: &[Vec<f64>], b: &[f64]) -> f64 {
    a.iter()
        .zip(w)
        .map(|(ai, row)| ai * row.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

/// Per-source normalized bilinear similarities `ū_iᵀ W_e ū_j`. Negative scores
/// are clipped to zero before normalizing so every weight stays in `[0, 1]`;
/// a source whose clipped scores sum to (almost) zero spreads its weight
/// uniformly.
pub fn compute_edge_weights(g: &DialogGraph, w_e: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = g.dim();
    if w_e.len() != d || w_e.iter().any(|r| r.len() != d) {
        return Err(Error::Shape(format!("W_e must be {d}x{d}")));
    }
    let raw: Vec<f64> = g
        .edges
        .iter()
        .map(|&(i, j)| bilinear(&g.vertices[i].vector, w_e, &g.vertices[j].vector).max(0.0))
        .collect();
    let mut sums = vec![0.0; g.len()];
    let mut degree = vec![0usize; g.len()];
    for (&(i, _), &r) in g.edges.iter().zip(&raw) {
        sums[i] += r;
        degree[i] += 1;
    }
    Ok(g.edges
        .iter()
        .zip(&raw)
        .map(|(&(i, _), &r)| {
            if sums[i] > WEIGHT_EPS {
                r / sums[i]
            } else {
                1.0 / degree[i] as f64
            }
        })
        .collect())
}

/// Edges (replier → replied) and their types. A one-utterance dialog gets a
/// self-loop so graph layers have something to aggregate.
pub fn topology(dialog: &Dialog) -> (Vec<(usize, usize)>, Vec<EdgeType>) {
    let edges = if dialog.utterances.len() == 1 {
        vec![(0, 0)]
    } else {
        dialog.link_indices()
    };
    let types = edges
        .iter()
        .map(|&(i, j)| assign_edge_types(dialog.utterances[i].role(), dialog.utterances[j].role()))
        .collect();
    (edges, types)
}

/// Builds the graph of `dialog` from per-utterance vectors. A one-utterance
/// dialog gets a self-loop of weight 1.
pub fn build_graph(dialog: &Dialog, vectors: &HashMap<String, Vec<f64>>, w_e: &[Vec<f64>]) -> Result<DialogGraph> {
    let vertices = dialog
        .utterances
        .iter()
        .map(|u| {
            let vector = vectors
                .get(&u.id)
                .ok_or_else(|| Error::MissingVector(u.id.clone()))?
                .clone();
            Ok(Vertex {
                id: u.id.clone(),
                role: u.role(),
                vector,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = vertices.first() {
        if let Some(bad) = vertices.iter().find(|v| v.vector.len() != first.vector.len()) {
            return Err(Error::Shape(format!("vector of {} has a different width", bad.id)));
        }
    }
    let (edges, types) = topology(dialog);
    let mut g = DialogGraph {
        vertices,
        edges,
        weights: Vec::new(),
        types,
    };
    if g.is_empty() {
        return Ok(g);
    }
    g.reweight(w_e)?;
    Ok(g)
}

#[derive(Serialize, Deserialize)]
struct GraphWire {
    vertices: Vec<Vertex>,
    edges: Vec<(usize, usize)>,
    weights: BTreeMap<String, f64>,
    types: BTreeMap<String, EdgeType>,
}

fn edge_key(&(i, j): &(usize, usize)) -> String {
    format!("{i}->{j}")
}

impl Serialize for DialogGraph {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphWire {
            vertices: self.vertices.clone(),
            edges: self.edges.clone(),
            weights: self.edges.iter().map(edge_key).zip(self.weights.iter().copied()).collect(),
            types: self.edges.iter().map(edge_key).zip(self.types.iter().copied()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DialogGraph {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let wire = GraphWire::deserialize(d)?;
        let mut weights = Vec::with_capacity(wire.edges.len());
        let mut types = Vec::with_capacity(wire.edges.len());
        for e in &wire.edges {
            let k = edge_key(e);
            if e.0 >= wire.vertices.len() || e.1 >= wire.vertices.len() {
                return Err(D::Error::custom(format!("edge {k} points outside the vertex list")));
            }
            weights.push(*wire.weights.get(&k).ok_or_else(|| D::Error::custom(format!("no weight for {k}")))?);
            types.push(*wire.types.get(&k).ok_or_else(|| D::Error::custom(format!("no type for {k}")))?);
        }
        Ok(DialogGraph {
            vertices: wire.vertices,
            edges: wire.edges,
            weights,
            types,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ReplyLink, Utterance};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn identity(d: usize) -> Vec<Vec<f64>> {
        (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect()
    }

    fn vertex(id: &str, role: Role, v: Vec<f64>) -> Vertex {
        Vertex { id: id.into(), role, vector: v }
    }

    fn graph(vs: Vec<Vec<f64>>, edges: Vec<(usize, usize)>) -> DialogGraph {
        let n = edges.len();
        DialogGraph {
            vertices: vs.into_iter().enumerate().map(|(i, v)| vertex(&format!("u{i}"), Role::Discussant, v)).collect(),
            edges,
            weights: vec![0.0; n],
            types: vec![EdgeType::D2D; n],
        }
    }

    fn chain_dialog(authors: &[&str]) -> Dialog {
        let us: Vec<_> = authors
            .iter()
            .enumerate()
            .map(|(i, a)| Utterance::new(format!("u{i}"), Utc.timestamp_opt(i as i64, 0).unwrap(), *a, "text"))
            .collect();
        let links = (1..us.len()).map(|i| ReplyLink::new(format!("u{i}"), format!("u{}", i - 1))).collect();
        Dialog::new("d", us, links).unwrap()
    }

    fn vecs(n: usize, d: usize) -> HashMap<String, Vec<f64>> {
        (0..n).map(|i| (format!("u{i}"), (0..d).map(|k| ((i * d + k) as f64 * 0.7).sin()).collect())).collect()
    }

    #[test]
    fn hand_evaluated_weights() {
        let s = 0.5f64.sqrt();
        let g = graph(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![s, s]], vec![(0, 1), (0, 2)]);
        let w = compute_edge_weights(&g, &identity(2)).unwrap();
        let total = 1.0 + s;
        assert!((w[0] - 1.0 / total).abs() < 1e-12);
        assert!((w[1] - s / total).abs() < 1e-12);
        assert!((w[0] - 0.586).abs() < 5e-4 && (w[1] - 0.414).abs() < 5e-4);
    }

    #[test]
    fn single_and_symmetric_targets() {
        let g = graph(vec![vec![1.0, 2.0], vec![0.3, 0.1]], vec![(1, 0)]);
        assert_eq!(compute_edge_weights(&g, &identity(2)).unwrap(), vec![1.0]);
        let g = graph(vec![vec![1.0, 2.0], vec![0.3, 0.1], vec![0.3, 0.1]], vec![(0, 1), (0, 2)]);
        assert_eq!(compute_edge_weights(&g, &identity(2)).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_or_negative_scores_fall_back_to_uniform() {
        let g = graph(vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]], vec![(0, 1), (0, 2)]);
        assert_eq!(compute_edge_weights(&g, &identity(2)).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn chain_and_monologue() {
        let d = chain_dialog(&["ann", "bob", "ann"]);
        let g = build_graph(&d, &vecs(3, 4), &identity(4)).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.edges, vec![(1, 0), (2, 1)]);
        assert_eq!(g.types, vec![EdgeType::D2R, EdgeType::R2D]);

        let d = chain_dialog(&["ann"]);
        let g = build_graph(&d, &vecs(1, 4), &identity(4)).unwrap();
        assert_eq!(g.edges, vec![(0, 0)]);
        assert_eq!(g.weights, vec![1.0]);
        assert_eq!(g.types, vec![EdgeType::R2R]);
    }

    #[test]
    fn missing_vector_names_the_utterance() {
        let d = chain_dialog(&["ann", "bob"]);
        let mut v = vecs(2, 4);
        v.remove("u1");
        match build_graph(&d, &v, &identity(4)) {
            Err(Error::MissingVector(id)) => assert_eq!(id, "u1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn role_pairs_map_to_types() {
        assert_eq!(assign_edge_types(Role::Reporter, Role::Reporter), EdgeType::R2R);
        assert_eq!(assign_edge_types(Role::Discussant, Role::Reporter), EdgeType::D2R);
        assert_eq!(assign_edge_types(Role::Reporter, Role::Discussant), EdgeType::R2D);
        assert_eq!(assign_edge_types(Role::Discussant, Role::Discussant), EdgeType::D2D);
    }

    fn arb_graph() -> impl Strategy<Value = (DialogGraph, Vec<Vec<f64>>)> {
        (2usize..8, 1usize..5).prop_flat_map(|(n, d)| {
            (
                proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, d), n),
                proptest::collection::vec((1usize..n, 0usize..n), 1..12),
                proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, d), d),
            )
                .prop_map(|(vs, raw, w)| {
                    let mut edges: Vec<_> = raw.into_iter().map(|(a, b)| (a, b % a)).collect();
                    edges.sort_unstable();
                    edges.dedup();
                    (graph(vs, edges), w)
                })
        })
    }

    proptest! {
        #[test]
        fn out_weights_normalize((mut g, w) in arb_graph()) {
            g.reweight(&w).unwrap();
            let mut sums: HashMap<usize, f64> = HashMap::new();
            for (&(i, _), &x) in g.edges.iter().zip(&g.weights) {
                prop_assert!((0.0..=1.0).contains(&x));
                *sums.entry(i).or_default() += x;
            }
            for s in sums.values() {
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn reweighting_keeps_topology((mut g, w) in arb_graph()) {
            let (edges, types) = (g.edges.clone(), g.types.clone());
            g.reweight(&w).unwrap();
            let scaled: Vec<Vec<f64>> = w.iter().map(|r| r.iter().map(|x| x * 3.0 - 0.1).collect()).collect();
            g.reweight(&scaled).unwrap();
            prop_assert_eq!(g.edges, edges);
            prop_assert_eq!(g.types, types);
        }

        #[test]
        fn json_round_trip((mut g, w) in arb_graph()) {
            g.reweight(&w).unwrap();
            let text = serde_json::to_string(&g).unwrap();
            let back: DialogGraph = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back.edges, &g.edges);
            prop_assert_eq!(&back.types, &g.types);
            prop_assert_eq!(&back.vertices, &g.vertices);
            for (a, b) in back.weights.iter().zip(&g.weights) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
