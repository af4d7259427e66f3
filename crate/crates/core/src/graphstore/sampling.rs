use std::collections::VecDeque;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{AugmentationSpec, Graph, Sampler, SubgraphSample};
use crate::error::{Error, Result};
use crate::numcore::SparseAdjacency;

/// Induced subgraph on `nodes` (sorted, unique original ids).
pub fn induced_subgraph(g: &Graph, nodes: &[usize], seeds: &[usize]) -> Result<SubgraphSample> {
    let n = g.n();
    let mut local = vec![usize::MAX; n];
    for (i, &v) in nodes.iter().enumerate() {
        if v >= n {
            return Err(Error::contract(format!("node {v} out of range")));
        }
        if i > 0 && nodes[i - 1] >= v {
            return Err(Error::contract("node ids must be sorted and unique"));
        }
        local[v] = i;
    }
    if let Some(s) = seeds.iter().find(|&&s| s >= n || local[s] == usize::MAX) {
        return Err(Error::contract(format!("seed {s} is not in the node set")));
    }
    let mut edges = Vec::new();
    for (i, &v) in nodes.iter().enumerate() {
        for &w in g.adjacency().neighbors(v) {
            let j = local[w];
            if j != usize::MAX && i < j {
                edges.push((i, j));
            }
        }
    }
    let mut seed_ids = seeds.to_vec();
    seed_ids.sort_unstable();
    seed_ids.dedup();
    Ok(SubgraphSample {
        node_ids: nodes.to_vec(),
        adjacency: SparseAdjacency::from_undirected_edges(nodes.len(), &edges)?,
        features: g.features().gather_rows(nodes),
        seed_ids,
    })
}

/// All nodes within `k` hops of any seed. `k = 0` returns the whole graph.
pub fn k_hop_sample(g: &Graph, seeds: &[usize], k: usize) -> Result<SubgraphSample> {
    if seeds.is_empty() {
        return Err(Error::contract("k-hop sampling needs at least one seed"));
    }
    if let Some(s) = seeds.iter().find(|&&s| s >= g.n()) {
        return Err(Error::contract(format!("seed {s} out of range")));
    }
    if k == 0 {
        let mut s = g.as_sample();
        let mut seed_ids = seeds.to_vec();
        seed_ids.sort_unstable();
        seed_ids.dedup();
        s.seed_ids = seed_ids;
        return Ok(s);
    }
    let mut dist = vec![usize::MAX; g.n()];
    let mut queue = VecDeque::new();
    for &s in seeds {
        if dist[s] == usize::MAX {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] == k {
            continue;
        }
        for &v in g.adjacency().neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let nodes: Vec<usize> = (0..g.n()).filter(|&v| dist[v] != usize::MAX).collect();
    induced_subgraph(g, &nodes, seeds)
}

/// `count` nodes drawn uniformly without replacement, induced.
pub fn uniform_node_sample(g: &Graph, count: usize, rng: &mut impl Rng) -> Result<SubgraphSample> {
    if count == 0 || count > g.n() {
        return Err(Error::contract(format!(
            "sample size {count} outside [1, {}]",
            g.n()
        )));
    }
    let mut nodes = index::sample(rng, g.n(), count).into_vec();
    nodes.sort_unstable();
    induced_subgraph(g, &nodes, &nodes.clone())
}

/// Draws the node set for a task per its sampler and seed count.
pub fn sample_nodes(g: &Graph, spec: &AugmentationSpec, rng: &mut impl Rng) -> Result<SubgraphSample> {
    let Some(count) = spec.seed_count.resolve(g.n()) else {
        return Ok(g.as_sample());
    };
    match spec.sampler {
        Sampler::UniformNodes => uniform_node_sample(g, count, rng),
        Sampler::KHop => {
            let seeds = index::sample(rng, g.n(), count).into_vec();
            k_hop_sample(g, &seeds, spec.hop_order)
        }
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::contract(format!("ratio {ratio} outside [0,1]")));
    }
    Ok(())
}

/// Removes each undirected edge independently with probability `ratio`.
pub fn drop_edges(s: &SubgraphSample, ratio: f64, rng: &mut impl Rng) -> Result<SubgraphSample> {
    check_ratio(ratio)?;
    let kept: Vec<(usize, usize)> = s
        .adjacency
        .undirected_edges()
        .into_iter()
        .filter(|_| rng.gen::<f64>() >= ratio)
        .collect();
    Ok(SubgraphSample {
        adjacency: SparseAdjacency::from_undirected_edges(s.n(), &kept)?,
        ..s.clone()
    })
}

/// Zeros the feature rows of `floor(ratio * n)` uniformly chosen nodes (at
/// least one when `ratio > 0`). Returns the per-row mask.
pub fn mask_features(
    s: &SubgraphSample,
    ratio: f64,
    rng: &mut impl Rng,
) -> Result<(SubgraphSample, Vec<bool>)> {
    check_ratio(ratio)?;
    let n = s.n();
    let mut count = (ratio * n as f64).floor() as usize;
    if ratio > 0.0 && n > 0 {
        count = count.max(1);
    }
    let mut mask = vec![false; n];
    let mut out = s.clone();
    for i in index::sample(rng, n, count.min(n)).into_iter() {
        mask[i] = true;
        out.features.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
    }
    Ok((out, mask))
}

/// Permutes feature rows uniformly at random; topology is unchanged.
pub fn shuffle_features(s: &SubgraphSample, rng: &mut impl Rng) -> SubgraphSample {
    let mut perm: Vec<usize> = (0..s.n()).collect();
    perm.shuffle(rng);
    SubgraphSample {
        features: s.features.gather_rows(&perm),
        ..s.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphstore::{generate_sbm, SbmParams};
    use crate::numcore::DenseMatrix;
    use crate::rng;
    use proptest::prelude::*;

    fn path3() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2)], DenseMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]), None)
            .unwrap()
    }

    fn sbm(n: usize, seed: u64) -> Graph {
        generate_sbm(
            &SbmParams {
                blocks: 3,
                nodes: n,
                p_intra: 0.08,
                p_inter: 0.01,
                feat_dim: 4,
                feat_noise: 0.5,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn k_hop_on_path() {
        let g = path3();
        let s = k_hop_sample(&g, &[0], 1).unwrap();
        assert_eq!(s.node_ids, vec![0, 1]);
        assert_eq!(s.edge_count(), 1);
        assert_eq!(s.seed_ids, vec![0]);
        assert!(k_hop_sample(&g, &[], 1).is_err());
        assert_eq!(k_hop_sample(&g, &[0, 1, 2], 1).unwrap().node_ids, vec![0, 1, 2]);
        assert_eq!(k_hop_sample(&g, &[0], 0).unwrap().n(), 3);
    }

    #[test]
    fn k_hop_matches_two_expansions() {
        let g = sbm(150, 3);
        let seeds = [4usize, 77, 120];
        let s = k_hop_sample(&g, &seeds, 2).unwrap();
        // oracle: expand the frontier twice by scanning every edge
        let mut inset = vec![false; g.n()];
        for &x in &seeds {
            inset[x] = true;
        }
        for _ in 0..2 {
            let prev = inset.clone();
            for (u, v) in g.adjacency().undirected_edges() {
                if prev[u] {
                    inset[v] = true;
                }
                if prev[v] {
                    inset[u] = true;
                }
            }
        }
        let expected: Vec<usize> = (0..g.n()).filter(|&v| inset[v]).collect();
        assert_eq!(s.node_ids, expected);
    }

    #[test]
    fn uniform_sample_edges() {
        let g = sbm(60, 1);
        let mut r = rng::stream(5, &[]);
        assert_eq!(uniform_node_sample(&g, 60, &mut r).unwrap().adjacency, *g.adjacency());
        let one = uniform_node_sample(&g, 1, &mut r).unwrap();
        assert_eq!(one.n(), 1);
        assert_eq!(one.edge_count(), 0);
        assert!(uniform_node_sample(&g, 0, &mut r).is_err());
        assert!(uniform_node_sample(&g, 61, &mut r).is_err());
        let a = uniform_node_sample(&g, 20, &mut rng::stream(8, &[])).unwrap();
        let b = uniform_node_sample(&g, 20, &mut rng::stream(8, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drop_edges_limits() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)], DenseMatrix::zeros(3, 1), None).unwrap();
        let s = g.as_sample();
        let mut r = rng::stream(1, &[]);
        assert_eq!(drop_edges(&s, 0.0, &mut r).unwrap(), s);
        let all = drop_edges(&s, 1.0, &mut r).unwrap();
        assert_eq!(all.edge_count(), 0);
        assert_eq!(all.n(), 3);
        assert!(drop_edges(&s, 1.5, &mut r).is_err());
    }

    #[test]
    fn drop_edges_binomial_count() {
        // 10 000 disjoint edges on 20 000 nodes
        let edges: Vec<(usize, usize)> = (0..10_000).map(|i| (2 * i, 2 * i + 1)).collect();
        let g = Graph::from_edges(20_000, &edges, DenseMatrix::zeros(20_000, 1), None).unwrap();
        let s = drop_edges(&g.as_sample(), 0.35, &mut rng::stream(2, &[])).unwrap();
        let sd = (10_000.0f64 * 0.35 * 0.65).sqrt();
        assert!((s.edge_count() as f64 - 6_500.0).abs() <= 3.0 * sd);
        assert!(s.adjacency.is_structurally_symmetric());
    }

    #[test]
    fn mask_counts() {
        let g = sbm(10, 2);
        let s = g.as_sample();
        let (m0, mask0) = mask_features(&s, 0.0, &mut rng::stream(1, &[])).unwrap();
        assert!(mask0.iter().all(|m| !m));
        assert_eq!(m0, s);
        let (m, mask) = mask_features(&s, 0.5, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), 5);
        for i in 0..10 {
            if mask[i] {
                assert!(m.features.row(i).iter().all(|&v| v == 0.0));
            } else {
                assert_eq!(m.features.row(i), s.features.row(i));
            }
        }
        // replay: same stream selects the same rows as a direct index draw
        let oracle = index::sample(&mut rng::stream(1, &[]), 10, 5).into_vec();
        let chosen: Vec<usize> = (0..10).filter(|&i| mask[i]).collect();
        let mut sorted = oracle.clone();
        sorted.sort_unstable();
        assert_eq!(chosen, sorted);
        let (_, tiny) = mask_features(&s, 0.01, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(tiny.iter().filter(|&&b| b).count(), 1);
    }

    #[test]
    fn shuffle_single_node_and_determinism() {
        let g = Graph::new(SparseAdjacency::empty(1), DenseMatrix::row_vector(&[3.0, 4.0]), None).unwrap();
        let s = g.as_sample();
        assert_eq!(shuffle_features(&s, &mut rng::stream(1, &[])), s);
        let g = sbm(30, 4);
        let a = shuffle_features(&g.as_sample(), &mut rng::stream(9, &[]));
        let b = shuffle_features(&g.as_sample(), &mut rng::stream(9, &[]));
        assert_eq!(a, b);
    }

    fn row_bits(m: &DenseMatrix) -> Vec<Vec<u64>> {
        let mut rows: Vec<Vec<u64>> = (0..m.rows()).map(|r| m.row(r).iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        rows
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn augmentations_preserve_invariants(seed in any::<u64>(), ratio in 0.0f64..0.95) {
            let g = sbm(45, seed % 1000);
            let mut r = rng::stream(seed, &[]);
            let count = 1 + (seed as usize % 45);
            let s = uniform_node_sample(&g, count, &mut r).unwrap();
            // induced closure
            for (u, v) in s.adjacency.undirected_edges() {
                prop_assert!(g.adjacency().has_edge(s.node_ids[u], s.node_ids[v]));
            }
            for (i, &orig) in s.node_ids.iter().enumerate() {
                for &w in g.adjacency().neighbors(orig) {
                    if let Ok(j) = s.node_ids.binary_search(&w) {
                        prop_assert!(s.adjacency.has_edge(i, j));
                    }
                }
            }
            let d = drop_edges(&s, ratio, &mut r).unwrap();
            for (u, v) in d.adjacency.undirected_edges() {
                prop_assert!(s.adjacency.has_edge(u, v));
            }
            prop_assert_eq!(&d.node_ids, &s.node_ids);
            let sh = shuffle_features(&s, &mut r);
            prop_assert_eq!(row_bits(&sh.features), row_bits(&s.features));
            prop_assert_eq!(&sh.adjacency, &s.adjacency);
            // replay
            let mut r1 = rng::stream(seed, &[1]);
            let mut r2 = rng::stream(seed, &[1]);
            prop_assert_eq!(mask_features(&s, ratio, &mut r1).unwrap(), mask_features(&s, ratio, &mut r2).unwrap());
        }
    }
}
