use rand::Rng;
use rand_distr::StandardNormal;

use super::Graph;
use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SbmParams {
    pub blocks: usize,
    pub nodes: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feat_dim: usize,
    pub feat_noise: f64,
}

/// Stochastic block model with round-robin block labels. Node `i` belongs to
/// block `i % blocks`; its features are the unit vector `e_{block % feat_dim}`
/// plus isotropic Gaussian noise.
pub fn generate_sbm(params: &SbmParams, seed: u64) -> Result<Graph> {
    let SbmParams {
        blocks,
        nodes,
        p_intra,
        p_inter,
        feat_dim,
        feat_noise,
    } = *params;
    if blocks < 2 {
        return Err(Error::Config("an SBM needs at least two blocks".into()));
    }
    if nodes < blocks {
        return Err(Error::Config(format!("{nodes} nodes cannot fill {blocks} blocks")));
    }
    for p in [p_intra, p_inter] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("edge probability {p} outside [0,1]")));
        }
    }
    if feat_dim == 0 {
        return Err(Error::Config("feature dimension must be positive".into()));
    }
    if !(feat_noise >= 0.0 && feat_noise.is_finite()) {
        return Err(Error::Config("feature noise must be finite and nonnegative".into()));
    }

    let labels: Vec<usize> = (0..nodes).map(|i| i % blocks).collect();

    let mut edge_rng = rng::stream(seed, &[rng::label("sbm.edges")]);
    let mut edges = Vec::new();
    for u in 0..nodes {
        for v in u + 1..nodes {
            let p = if labels[u] == labels[v] { p_intra } else { p_inter };
            if edge_rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut feat_rng = rng::stream(seed, &[rng::label("sbm.features")]);
    let mut features = DenseMatrix::zeros(nodes, feat_dim);
    for i in 0..nodes {
        let row = features.row_mut(i);
        row[labels[i] % feat_dim] = 1.0;
        if feat_noise > 0.0 {
            for v in row.iter_mut() {
                let z: f64 = feat_rng.sample(StandardNormal);
                *v += feat_noise * z;
            }
        }
    }

    Graph::from_edges(nodes, &edges, features, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities_give_disjoint_cliques() {
        let p = SbmParams {
            blocks: 2,
            nodes: 4,
            p_intra: 1.0,
            p_inter: 0.0,
            feat_dim: 2,
            feat_noise: 0.0,
        };
        let g = generate_sbm(&p, 1).unwrap();
        assert_eq!(g.adjacency().undirected_edges(), vec![(0, 2), (1, 3)]);
        assert_eq!(g.features().row(0), &[1.0, 0.0]);
        assert_eq!(g.features().row(1), &[0.0, 1.0]);
        assert_eq!(g.features().row(2), &[1.0, 0.0]);
        assert_eq!(g.labels().unwrap(), &[0, 1, 0, 1]);
    }

    #[test]
    fn edge_count_matches_binomial_expectation() {
        let p = SbmParams {
            blocks: 3,
            nodes: 600,
            p_intra: 0.05,
            p_inter: 0.005,
            feat_dim: 16,
            feat_noise: 0.5,
        };
        let g = generate_sbm(&p, 7).unwrap();
        // 3 blocks of 200: 3*C(200,2) intra pairs and 3*200*200 inter pairs
        let intra: f64 = 3.0 * 200.0 * 199.0 / 2.0;
        let inter: f64 = 3.0 * 200.0 * 200.0;
        let mean = intra * 0.05 + inter * 0.005;
        let sd = (intra * 0.05 * 0.95 + inter * 0.005 * 0.995).sqrt();
        assert!((mean - 3585.0).abs() < 1e-9);
        let e = g.edge_count() as f64;
        assert!((e - mean).abs() <= 3.0 * sd, "{e} vs {mean} ± {sd}");
    }

    #[test]
    fn deterministic_and_validated() {
        let p = SbmParams {
            blocks: 3,
            nodes: 50,
            p_intra: 0.2,
            p_inter: 0.05,
            feat_dim: 4,
            feat_noise: 0.3,
        };
        assert_eq!(generate_sbm(&p, 9).unwrap(), generate_sbm(&p, 9).unwrap());
        assert_ne!(generate_sbm(&p, 9).unwrap(), generate_sbm(&p, 10).unwrap());
        let bad = SbmParams { nodes: 2, ..p };
        assert!(matches!(generate_sbm(&bad, 1), Err(Error::Config(_))));
        let bad = SbmParams { blocks: 1, ..p };
        assert!(generate_sbm(&bad, 1).is_err());
    }
}
