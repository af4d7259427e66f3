use std::collections::VecDeque;

use rand::seq::SliceRandom;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng;

const STREAM_PASSES: usize = 10;

/// Streaming greedy balanced partition.
///
/// Nodes arrive in BFS order (components started from a seeded shuffle).
/// Each node joins the part maximizing `neighbors already there − load /
/// capacity`, where capacity is `ceil(n / parts)` and full parts are
/// skipped. Once the nodes left equal the number of empty parts, only empty
/// parts are eligible, so every part ends up non-empty. The stream is
/// replayed up to `STREAM_PASSES` times in the same order; on later passes
/// a neighbor not yet placed counts toward its part from the pass before.
/// Replaying stops early once a pass reproduces the previous assignment.
pub fn greedy_partition(g: &Graph, parts: usize, seed: u64) -> Result<Vec<usize>> {
    let n = g.n();
    if parts < 2 {
        return Err(Error::contract("partitioning needs at least two parts"));
    }
    if parts > n {
        return Err(Error::contract(format!("{parts} parts for {n} nodes")));
    }
    let mut rng = rng::stream(seed, &[rng::label("greedy_partition")]);
    let mut starts: Vec<usize> = (0..n).collect();
    starts.shuffle(&mut rng);

    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for s in starts {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in g.adjacency().neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }

    let capacity = n.div_ceil(parts);
    let mut previous: Option<Vec<usize>> = None;
    for _ in 0..STREAM_PASSES {
        let assign = stream_pass(g, &order, parts, capacity, previous.as_deref());
        if previous.as_ref() == Some(&assign) {
            break;
        }
        previous = Some(assign);
    }
    Ok(previous.expect("at least one pass"))
}

/// One greedy pass over `order`. Nodes not yet placed in this pass count
/// toward the part they held in the previous pass, if any.
fn stream_pass(g: &Graph, order: &[usize], parts: usize, capacity: usize, previous: Option<&[usize]>) -> Vec<usize> {
    let n = order.len();
    let mut assign = vec![usize::MAX; n];
    let mut load = vec![0usize; parts];
    let mut empty = parts;
    let mut counts = vec![0usize; parts];
    for (placed, &u) in order.iter().enumerate() {
        let remaining = n - placed;
        counts.iter_mut().for_each(|c| *c = 0);
        for &v in g.adjacency().neighbors(u) {
            let part = match (assign[v], previous) {
                (usize::MAX, Some(prev)) => prev[v],
                (p, _) => p,
            };
            if part != usize::MAX {
                counts[part] += 1;
            }
        }
        let force_empty = remaining <= empty;
        let mut best: Option<(usize, f64)> = None;
        for p in 0..parts {
            if load[p] >= capacity || (force_empty && load[p] > 0) {
                continue;
            }
            let score = counts[p] as f64 - load[p] as f64 / capacity as f64;
            // ties: lighter part, then lower index
            let better = match best {
                None => true,
                Some((b, bs)) => score > bs || (score == bs && load[p] < load[b]),
            };
            if better {
                best = Some((p, score));
            }
        }
        let (p, _) = best.expect("some part has room");
        if load[p] == 0 {
            empty -= 1;
        }
        load[p] += 1;
        assign[u] = p;
    }
    assign
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphstore::{generate_sbm, SbmParams};
    use crate::numcore::DenseMatrix;

    fn cut(g: &Graph, labels: &[usize]) -> usize {
        g.adjacency()
            .undirected_edges()
            .iter()
            .filter(|&&(u, v)| labels[u] != labels[v])
            .count()
    }

    #[test]
    fn disjoint_cliques_split_cleanly() {
        let mut edges = Vec::new();
        for base in [0, 6] {
            for u in 0..6 {
                for v in u + 1..6 {
                    edges.push((base + u, base + v));
                }
            }
        }
        let g = Graph::from_edges(12, &edges, DenseMatrix::zeros(12, 1), None).unwrap();
        // brute force: best balanced 2-partition cut over all 2^11 labelings
        let mut best = usize::MAX;
        for mask in 0u32..(1 << 11) {
            let labels: Vec<usize> = (0..12).map(|i| if i == 11 { 0 } else { ((mask >> i) & 1) as usize }).collect();
            if labels.iter().filter(|&&l| l == 0).count() == 6 {
                best = best.min(cut(&g, &labels));
            }
        }
        assert_eq!(best, 0);
        for seed in 0..5 {
            let p = greedy_partition(&g, 2, seed).unwrap();
            assert_eq!(cut(&g, &p), best);
            assert!(p[..6].iter().all(|&l| l == p[0]));
            assert!(p[6..].iter().all(|&l| l == p[6]));
            assert_ne!(p[0], p[6]);
        }
    }

    #[test]
    fn singleton_parts_and_errors() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 2)], DenseMatrix::zeros(5, 1), None).unwrap();
        let mut p = greedy_partition(&g, 5, 1).unwrap();
        p.sort_unstable();
        assert_eq!(p, vec![0, 1, 2, 3, 4]);
        assert!(greedy_partition(&g, 6, 1).is_err());
        assert!(greedy_partition(&g, 1, 1).is_err());
    }

    #[test]
    fn balanced_on_sbm() {
        let g = generate_sbm(
            &SbmParams {
                blocks: 3,
                nodes: 600,
                p_intra: 0.05,
                p_inter: 0.005,
                feat_dim: 4,
                feat_noise: 0.5,
            },
            7,
        )
        .unwrap();
        let p = greedy_partition(&g, 10, 3).unwrap();
        let mut sizes = [0usize; 10];
        for &l in &p {
            sizes[l] += 1;
        }
        for s in sizes {
            assert!(s as f64 >= 60.0 / 1.5 && s as f64 <= 60.0 * 1.5, "{sizes:?}");
        }
        assert_eq!(greedy_partition(&g, 10, 3).unwrap(), p);
        // far better than a random balanced labeling
        let random_cut = g.edge_count() as f64 * 0.9;
        assert!((cut(&g, &p) as f64) < random_cut);
    }

    #[test]
    fn uneven_sizes_leave_no_part_empty() {
        let g = Graph::from_edges(9, &[(0, 1), (1, 2), (2, 3)], DenseMatrix::zeros(9, 1), None).unwrap();
        for seed in 0..10 {
            let p = greedy_partition(&g, 4, seed).unwrap();
            for part in 0..4 {
                assert!(p.contains(&part));
            }
        }
    }
}
