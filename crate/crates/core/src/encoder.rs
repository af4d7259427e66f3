//! Shared graph-convolution encoder: `H^{l+1} = PReLU(Â · H^l · W^l)`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphstore::SubgraphSample;
use crate::numcore::{Bindings, DenseMatrix, SparseAdjacency, Tape, Var};
use crate::rng;

/// Negative-branch slope of every activation. Fixed, not learned.
pub const PRELU_SLOPE: f64 = 0.25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdjacencyMode {
    /// The stored adjacency as is.
    Raw,
    /// `D̃^{-1/2}(A + I)D̃^{-1/2}`.
    #[default]
    SymNorm,
}

impl AdjacencyMode {
    pub fn propagation(self, adj: &SparseAdjacency) -> Arc<SparseAdjacency> {
        Arc::new(match self {
            AdjacencyMode::Raw => adj.clone(),
            AdjacencyMode::SymNorm => adj.sym_normalized_with_self_loops(),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AdjacencyMode::Raw => "raw",
            AdjacencyMode::SymNorm => "sym_norm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(AdjacencyMode::Raw),
            "sym_norm" => Some(AdjacencyMode::SymNorm),
            _ => None,
        }
    }
}

/// Gradient (or any vector) over the shared encoder weights, laid out
/// layer by layer, each layer row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatGradient(Vec<f64>);

impl FlatGradient {
    pub fn new(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    dims: Vec<usize>,
    layers: Vec<DenseMatrix>,
}

impl EncoderParams {
    /// Glorot-uniform initialization for layer sizes `dims = [D, d¹, …, d]`.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("encoder dims {dims:?} need ≥2 positive sizes")));
        }
        let mut rng = rng::stream(seed, &[rng::label("encoder.init")]);
        let layers = dims
            .windows(2)
            .map(|w| glorot(w[0], w[1], &mut rng))
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn from_layers(layers: Vec<DenseMatrix>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::contract("encoder needs at least one layer"))?;
        let mut dims = vec![first.rows()];
        for w in &layers {
            if w.rows() != *dims.last().unwrap() {
                return Err(Error::contract("consecutive layer dims do not chain"));
            }
            if !w.is_finite() {
                return Err(Error::contract("non-finite encoder weight"));
            }
            dims.push(w.cols());
        }
        Ok(Self { dims, layers })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> &[DenseMatrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.layers
    }

    /// Total number of shared parameters.
    pub fn census(&self) -> usize {
        self.layers.iter().map(DenseMatrix::len).sum()
    }

    pub fn param_name(layer: usize) -> String {
        format!("enc.w{layer}")
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.layers.len()).map(Self::param_name).collect()
    }

    pub fn bind(&self, bindings: &mut Bindings) {
        for (l, w) in self.layers.iter().enumerate() {
            bindings.insert(Self::param_name(l), w.clone());
        }
    }

    pub fn flatten(&self, grads: &[DenseMatrix]) -> Result<FlatGradient> {
        if grads.len() != self.layers.len()
            || grads.iter().zip(&self.layers).any(|(g, w)| g.shape() != w.shape())
        {
            return Err(Error::contract("gradient shapes do not match the encoder layers"));
        }
        let mut out = Vec::with_capacity(self.census());
        for g in grads {
            out.extend_from_slice(g.as_slice());
        }
        Ok(FlatGradient(out))
    }

    pub fn unflatten(&self, flat: &FlatGradient) -> Result<Vec<DenseMatrix>> {
        if flat.len() != self.census() {
            return Err(Error::contract(format!(
                "flat gradient has {} entries, encoder has {}",
                flat.len(),
                self.census()
            )));
        }
        let mut offset = 0;
        self.layers
            .iter()
            .map(|w| {
                let chunk = flat.0[offset..offset + w.len()].to_vec();
                offset += w.len();
                DenseMatrix::from_vec(w.rows(), w.cols(), chunk)
            })
            .collect()
    }

    /// Appends the encoder to `tape` over `features`, reading weights from the
    /// `enc.w{l}` inputs.
    pub fn encode_on_tape(&self, tape: &mut Tape, features: Var, propagation: &Arc<SparseAdjacency>) -> Var {
        let mut h = features;
        for l in 0..self.layers.len() {
            let w = tape.input(&Self::param_name(l));
            let hw = tape.matmul(h, w);
            let ahw = tape.spmm(propagation.clone(), hw);
            h = tape.prelu(ahw, PRELU_SLOPE);
        }
        h
    }

    /// Node representations of a sample.
    pub fn encode(&self, sample: &SubgraphSample, mode: AdjacencyMode) -> Result<DenseMatrix> {
        self.encode_features(&sample.features, &sample.adjacency, mode)
    }

    pub fn encode_features(
        &self,
        features: &DenseMatrix,
        adjacency: &SparseAdjacency,
        mode: AdjacencyMode,
    ) -> Result<DenseMatrix> {
        if features.cols() != self.input_dim() {
            return Err(Error::contract(format!(
                "feature dim {} does not match encoder input {}",
                features.cols(),
                self.input_dim()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.input("x");
        let out = self.encode_on_tape(&mut tape, x, &mode.propagation(adjacency));
        let mut b = Bindings::new();
        b.insert("x".into(), features.clone());
        self.bind(&mut b);
        tape.forward(out, &b)
    }
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> DenseMatrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    DenseMatrix::from_vec(fan_in, fan_out, data).expect("sized by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphstore::{generate_sbm, Graph, SbmParams};
    use crate::numcore::finite_diff_check;
    use proptest::prelude::*;

    #[test]
    fn single_node_identity_weights() {
        let params = EncoderParams::from_layers(vec![DenseMatrix::identity(2)]).unwrap();
        let g = Graph::new(SparseAdjacency::empty(1), DenseMatrix::row_vector(&[1.0, -1.0]), None).unwrap();
        let h = params.encode(&g.as_sample(), AdjacencyMode::SymNorm).unwrap();
        assert_eq!(h.as_slice(), &[1.0, -0.25]);
    }

    fn sbm(n: usize, d: usize, seed: u64) -> Graph {
        generate_sbm(
            &SbmParams {
                blocks: 3,
                nodes: n,
                p_intra: 0.4,
                p_inter: 0.1,
                feat_dim: d,
                feat_noise: 0.5,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn permutation_equivariance() {
        let g = sbm(20, 5, 1);
        let params = EncoderParams::init(&[5, 8, 4], 2).unwrap();
        let h = params.encode(&g.as_sample(), AdjacencyMode::SymNorm).unwrap();
        // perm[i] = old index placed at new position i
        let perm: Vec<usize> = (0..20).map(|i| (i * 7 + 3) % 20).collect();
        let mut inv = vec![0; 20];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let edges: Vec<(usize, usize)> = g
            .adjacency()
            .undirected_edges()
            .into_iter()
            .map(|(u, v)| (inv[u], inv[v]))
            .collect();
        let pg = Graph::from_edges(20, &edges, g.features().gather_rows(&perm), None).unwrap();
        let ph = params.encode(&pg.as_sample(), AdjacencyMode::SymNorm).unwrap();
        let expected = h.gather_rows(&perm);
        for (a, b) in ph.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn sym_norm_on_regular_graph_is_neighbor_average() {
        // 6-cycle, degree 2: each output row averages 3 rows with weight 1/3
        let edges: Vec<(usize, usize)> = (0..6).map(|i| (i, (i + 1) % 6)).map(|(a, b)| (a.min(b), a.max(b))).collect();
        let x = DenseMatrix::from_vec(6, 2, (0..12).map(|i| i as f64 + 1.0).collect()).unwrap();
        let g = Graph::from_edges(6, &edges, x.clone(), None).unwrap();
        let params = EncoderParams::from_layers(vec![DenseMatrix::identity(2)]).unwrap();
        let h = params.encode(&g.as_sample(), AdjacencyMode::SymNorm).unwrap();
        let mut dense = DenseMatrix::identity(6);
        for &(u, v) in &edges {
            dense.set(u, v, 1.0);
            dense.set(v, u, 1.0);
        }
        let oracle = dense.scale(1.0 / 3.0).matmul(&x).unwrap();
        for (a, b) in h.as_slice().iter().zip(oracle.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn raw_mode_uses_literal_adjacency() {
        let g = Graph::from_edges(2, &[(0, 1)], DenseMatrix::from_rows(&[vec![2.0], vec![-4.0]]), None).unwrap();
        let params = EncoderParams::from_layers(vec![DenseMatrix::identity(1)]).unwrap();
        let h = params.encode(&g.as_sample(), AdjacencyMode::Raw).unwrap();
        assert_eq!(h.as_slice(), &[-1.0, 2.0]);
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        for seed in 0..5 {
            let g = sbm(12, 4, seed);
            let params = EncoderParams::init(&[4, 6, 3], seed + 100).unwrap();
            let mut tape = Tape::new();
            let x = tape.input("x");
            let h = params.encode_on_tape(&mut tape, x, &AdjacencyMode::SymNorm.propagation(g.adjacency()));
            let sq = tape.hadamard(h, h);
            let root = tape.sum(sq);
            let mut b = Bindings::new();
            b.insert("x".into(), g.features().clone());
            params.bind(&mut b);
            for name in params.param_names() {
                let err = finite_diff_check(&mut tape, root, &b, &name, 1e-5).unwrap();
                assert!(err < 1e-4, "seed {seed} {name}: {err}");
            }
        }
    }

    #[test]
    fn random_three_layer_tape_backward() {
        let g = sbm(10, 3, 9);
        let params = EncoderParams::init(&[3, 5, 4, 2], 4).unwrap();
        let mut tape = Tape::new();
        let x = tape.input("x");
        let h = params.encode_on_tape(&mut tape, x, &AdjacencyMode::SymNorm.propagation(g.adjacency()));
        let s = tape.sigmoid(h);
        let root = tape.mean(s);
        let mut b = Bindings::new();
        b.insert("x".into(), g.features().clone());
        params.bind(&mut b);
        for name in params.param_names() {
            assert!(finite_diff_check(&mut tape, root, &b, &name, 1e-5).unwrap() < 1e-4);
        }
    }

    #[test]
    fn flatten_layout_and_errors() {
        let params = EncoderParams::init(&[3, 4, 2], 1).unwrap();
        assert_eq!(params.census(), 12 + 8);
        assert_eq!(EncoderParams::init(&[3, 4, 2], 99).unwrap().census(), 20);
        let zeros: Vec<DenseMatrix> = params.layers().iter().map(|w| DenseMatrix::zeros(w.rows(), w.cols())).collect();
        assert_eq!(params.flatten(&zeros).unwrap(), FlatGradient::zeros(20));
        let grads: Vec<DenseMatrix> = params.layers().to_vec();
        let flat = params.flatten(&grads).unwrap();
        assert_eq!(&flat.as_slice()[..12], params.layers()[0].as_slice());
        assert!(params.unflatten(&FlatGradient::zeros(19)).is_err());
        assert!(params.flatten(&grads[..1]).is_err());
        assert!(EncoderParams::init(&[3], 1).is_err());
        let bad = EncoderParams::from_layers(vec![DenseMatrix::zeros(3, 4), DenseMatrix::zeros(5, 2)]);
        assert!(bad.is_err());
        let g = sbm(5, 2, 1);
        assert!(params.encode(&g.as_sample(), AdjacencyMode::SymNorm).is_err());
    }

    proptest! {
        #[test]
        fn unflatten_inverts_flatten(seed in any::<u64>()) {
            let params = EncoderParams::init(&[4, 3, 2], seed).unwrap();
            let other = EncoderParams::init(&[4, 3, 2], seed ^ 1).unwrap();
            let flat = params.flatten(other.layers()).unwrap();
            prop_assert_eq!(params.unflatten(&flat).unwrap(), other.layers().to_vec());
        }
    }
}
