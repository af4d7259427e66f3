use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;
use crate::rng;

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITERS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(emb: &DenseMatrix, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = emb.rows();
    let mut centroids = vec![emb.row(rng.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(emb.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let c = emb.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(emb.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(emb: &DenseMatrix, mut centroids: Vec<Vec<f64>>) -> Clustering {
    let n = emb.rows();
    let d = emb.cols();
    let k = centroids.len();
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, a) in assignment.iter_mut().enumerate() {
            let (c, _) = nearest(emb.row(i), &centroids);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(emb.row(i)) {
                *s += x;
            }
        }
        // An empty cluster keeps its previous centroid.
        for ((c, s), &m) in centroids.iter_mut().zip(sums).zip(&counts) {
            if m > 0 {
                *c = s.into_iter().map(|v| v / m as f64).collect();
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(emb.row(i), &centroids[assignment[i]])).sum();
    Clustering {
        assignment,
        centroids,
        inertia,
    }
}

/// k-means++ seeding followed by Lloyd iterations, best inertia over
/// [`KMEANS_RESTARTS`] restarts.
pub fn kmeans(emb: &DenseMatrix, k: usize, seed: u64) -> Result<Clustering> {
    if k < 2 {
        return Err(Error::contract("k-means needs k >= 2"));
    }
    if k > emb.rows() {
        return Err(Error::contract(format!("k = {k} exceeds {} points", emb.rows())));
    }
    let mut best: Option<Clustering> = None;
    for r in 0..KMEANS_RESTARTS {
        let mut rng = rng::stream(seed, &[rng::label("kmeans"), r as u64]);
        let run = lloyd(emb, plus_plus_init(emb, k, &mut rng));
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Entropy (nats) of a count multiset; counts are summed in sorted order so
/// equal multisets give bit-identical entropies.
fn entropy(mut counts: Vec<usize>, total: usize) -> f64 {
    counts.sort_unstable();
    let n = total as f64;
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with the arithmetic-mean normalization,
/// `I / ((H(a) + H(b)) / 2)`. Two constant labelings score 1.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::contract(format!("label vectors of length {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let ha = entropy(ca.into_values().collect(), n);
    let hb = entropy(cb.into_values().collect(), n);
    let hab = entropy(joint.into_values().collect(), n);
    if ha + hb == 0.0 {
        return Ok(1.0);
    }
    let mi = ha + hb - hab;
    Ok((mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0))
}

/// Clusters the embeddings into `k` groups and scores them against `labels`.
pub fn kmeans_nmi(emb: &DenseMatrix, labels: &[usize], k: usize, seed: u64) -> Result<f64> {
    if labels.len() != emb.rows() {
        return Err(Error::contract(format!("{} labels for {} embedding rows", labels.len(), emb.rows())));
    }
    let c = kmeans(emb, k, seed)?;
    nmi(&c.assignment, labels)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    /// Textbook NMI from the contingency table, for comparison.
    fn oracle_nmi(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len() as f64;
        let ka = a.iter().max().unwrap() + 1;
        let kb = b.iter().max().unwrap() + 1;
        let mut t = vec![vec![0.0; kb]; ka];
        for (&x, &y) in a.iter().zip(b) {
            t[x][y] += 1.0;
        }
        let pa: Vec<f64> = t.iter().map(|r| r.iter().sum::<f64>() / n).collect();
        let pb: Vec<f64> = (0..kb).map(|j| t.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let h = |p: &[f64]| -> f64 { p.iter().filter(|&&v| v > 0.0).map(|v| -v * v.ln()).sum() };
        let mut mi = 0.0;
        for i in 0..ka {
            for j in 0..kb {
                let p = t[i][j] / n;
                if p > 0.0 {
                    mi += p * (p / (pa[i] * pb[j])).ln();
                }
            }
        }
        mi / ((h(&pa) + h(&pb)) / 2.0)
    }

    #[test]
    fn identical_clusterings_score_exactly_one() {
        let a = vec![0, 0, 1, 1, 2, 2, 2, 0];
        assert_eq!(nmi(&a, &a).unwrap(), 1.0);
        let relabeled: Vec<usize> = a.iter().map(|&x| [7, 3, 5][x]).collect();
        assert_eq!(nmi(&a, &relabeled).unwrap(), 1.0);
    }

    #[test]
    fn single_cluster_carries_no_information() {
        let labels = vec![0, 1, 2, 0, 1, 2];
        assert_eq!(nmi(&[0; 6], &labels).unwrap(), 0.0);
        assert_eq!(nmi(&[4; 6], &[1; 6]).unwrap(), 1.0);
    }

    #[test]
    fn matches_contingency_table_formula() {
        let a = vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 2];
        let b = vec![0, 0, 1, 1, 1, 2, 2, 2, 0, 2];
        assert!((nmi(&a, &b).unwrap() - oracle_nmi(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = rng::stream(4, &[]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let y = i % 2;
            let c = if y == 0 { -5.0 } else { 5.0 };
            let (a, b): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            rows.push(vec![c + a, b]);
            labels.push(y);
        }
        let score = kmeans_nmi(&DenseMatrix::from_rows(&rows), &labels, 2, 1).unwrap();
        assert!(score >= 0.95, "{score}");
    }

    #[test]
    fn too_many_clusters_is_a_contract_error() {
        let emb = DenseMatrix::zeros(3, 2);
        assert!(matches!(kmeans(&emb, 4, 0), Err(Error::Contract(_))));
        assert!(matches!(kmeans(&emb, 1, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let emb = DenseMatrix::filled(10, 3, 2.0);
        let c = kmeans(&emb, 3, 5).unwrap();
        assert_eq!(c.inertia, 0.0);
        assert_eq!(c, kmeans(&emb, 3, 5).unwrap());
    }

    #[test]
    fn restarts_keep_the_lowest_inertia() {
        let mut rng = rng::stream(8, &[]);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let emb = DenseMatrix::from_rows(&rows);
        let best = kmeans(&emb, 4, 2).unwrap();
        for r in 0..KMEANS_RESTARTS {
            let mut rng = rng::stream(2, &[rng::label("kmeans"), r as u64]);
            assert!(best.inertia <= lloyd(&emb, plus_plus_init(&emb, 4, &mut rng)).inertia);
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_permutation_invariant(
            pairs in prop::collection::vec((0usize..4, 0usize..3), 1..40),
            perm in Just([2usize, 0, 3, 1]).prop_shuffle(),
        ) {
            let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let v = nmi(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, nmi(&b, &a).unwrap());
            let pa: Vec<usize> = a.iter().map(|&x| perm[x]).collect();
            prop_assert!((v - nmi(&pa, &b).unwrap()).abs() < 1e-12);
        }
    }
}
