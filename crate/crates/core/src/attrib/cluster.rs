//! Spectral clustering of segment embeddings with automatic affinity
//! binarization.
//!
//! The pipeline builds a cosine affinity matrix, binarizes each row to its
//! top `p` neighbors, symmetrizes, and reads the eigengap of the normalized
//! Laplacian. The neighbor count is chosen by minimizing the ratio of `p` to
//! the (largest-eigenvalue-normalized) gap between the `K`th and `K-1`th
//! smallest eigenvalues. Rows of the first `K` eigenvectors are then
//! unit-normalized and grouped by seeded k-means.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::attrib::{AttribConfig, AttribError};
use crate::kernel::{cosine, l2_normalize, Matrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterResult {
    /// Cluster index per input embedding, relabeled to first-appearance
    /// order so identical inputs always produce identical output labels.
    pub assignments: Vec<usize>,
    pub num_clusters: usize,
}

/// Jacobi eigendecomposition of a symmetric matrix. Returns eigenvalues in
/// ascending order and the matching eigenvectors as columns.
fn jacobi_eigen(sym: &Matrix) -> (Vec<f64>, Matrix) {
    let n = sym.rows();
    assert_eq!(n, sym.cols(), "eigendecomposition needs a square matrix");
    let mut a = sym.clone();
    let mut v = Matrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 });
    for _ in 0..64 {
        let mut off = 0.0;
        for r in 0..n {
            for c in r + 1..n {
                off += a[(r, c)] * a[(r, c)];
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                a[(p, p)] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                a[(q, q)] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    a[(r, p)] = c * arp - s * arq;
                    a[(p, r)] = a[(r, p)];
                    a[(r, q)] = s * arp + c * arq;
                    a[(q, r)] = a[(r, q)];
                }
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Keeps the `p` largest off-diagonal entries of each affinity row and
/// symmetrizes with an elementwise max. The diagonal stays 1. Columns tied
/// with the `p`th largest value are all kept, so equal embeddings always
/// receive equal rows.
fn binarize(affinity: &Matrix, p: usize) -> Matrix {
    let n = affinity.rows();
    let mut bin = Matrix::zeros(n, n);
    for r in 0..n {
        let mut values: Vec<f64> = (0..n).filter(|&c| c != r).map(|c| affinity[(r, c)]).collect();
        values.sort_by(|a, b| b.total_cmp(a));
        let cutoff = values[p - 1];
        bin[(r, r)] = 1.0;
        for c in 0..n {
            if c != r && affinity[(r, c)] >= cutoff {
                bin[(r, c)] = 1.0;
            }
        }
    }
    let mut sym = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            sym[(r, c)] = bin[(r, c)].max(bin[(c, r)]);
        }
    }
    sym
}

/// Symmetric normalized Laplacian of a binarized affinity. Every row has a
/// positive degree because the diagonal is 1.
fn normalized_laplacian(bin: &Matrix) -> Matrix {
    let n = bin.rows();
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|r| {
            let d: f64 = (0..n).map(|c| bin[(r, c)]).sum();
            1.0 / d.sqrt()
        })
        .collect();
    Matrix::from_fn(n, n, |r, c| {
        let norm = inv_sqrt_deg[r] * bin[(r, c)] * inv_sqrt_deg[c];
        if r == c {
            1.0 - norm
        } else {
            -norm
        }
    })
}

fn squared_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with several seeded restarts; keeps the lowest-inertia
/// run. Ties in point assignment go to the lowest centroid index, and a
/// centroid that loses all points keeps its previous position.
fn kmeans(points: &Matrix, k: usize, restarts: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    let n = points.rows();
    let dim = points.cols();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts {
        let picks = rand::seq::index::sample(rng, n, k);
        let mut centroids: Vec<Vec<f64>> =
            picks.iter().map(|i| points.row(i).to_vec()).collect();
        let mut assignments = vec![0usize; n];
        for _ in 0..100 {
            let mut changed = false;
            for i in 0..n {
                let row = points.row(i);
                let mut c_best = 0;
                let mut d_best = squared_dist(row, &centroids[0]);
                for (c, centroid) in centroids.iter().enumerate().skip(1) {
                    let d = squared_dist(row, centroid);
                    if d < d_best {
                        c_best = c;
                        d_best = d;
                    }
                }
                if assignments[i] != c_best {
                    assignments[i] = c_best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            for (c, centroid) in centroids.iter_mut().enumerate() {
                let members: Vec<usize> =
                    (0..n).filter(|&i| assignments[i] == c).collect();
                if members.is_empty() {
                    continue;
                }
                for d in 0..dim {
                    centroid[d] =
                        members.iter().map(|&i| points[(i, d)]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        let inertia: f64 =
            (0..n).map(|i| squared_dist(points.row(i), &centroids[assignments[i]])).sum();
        if best.as_ref().map_or(true, |(b, _)| inertia < *b) {
            best = Some((inertia, assignments));
        }
    }
    best.expect("at least one restart ran").1
}

fn canonicalize(assignments: &mut [usize]) {
    let mut relabel: Vec<Option<usize>> = vec![None; assignments.len()];
    let mut next = 0;
    for a in assignments.iter_mut() {
        let new = relabel[*a].unwrap_or_else(|| {
            let fresh = next;
            relabel[*a] = Some(fresh);
            next += 1;
            fresh
        });
        *a = new;
    }
}

/// Clusters segment embeddings into exactly `oracle_k` groups.
pub fn recluster(
    embeddings: &[Vec<f64>],
    oracle_k: usize,
    config: &AttribConfig,
) -> Result<ClusterResult, AttribError> {
    assert!(oracle_k > 0, "cluster count must be positive");
    let n = embeddings.len();
    if n < oracle_k {
        return Err(AttribError::TooFewSegments { have: n, need: oracle_k });
    }
    if oracle_k == 1 {
        return Ok(ClusterResult { assignments: vec![0; n], num_clusters: 1 });
    }
    if n == oracle_k {
        return Ok(ClusterResult { assignments: (0..n).collect(), num_clusters: oracle_k });
    }
    let affinity = Matrix::from_fn(n, n, |r, c| {
        if r == c {
            1.0
        } else {
            cosine(&embeddings[r], &embeddings[c])
        }
    });
    let mut best: Option<(f64, Matrix)> = None;
    for p in 1..=config.max_binarize_neighbors.min(n - 1) {
        let laplacian = normalized_laplacian(&binarize(&affinity, p));
        let (values, vectors) = jacobi_eigen(&laplacian);
        let lambda_max = values[n - 1];
        if lambda_max <= 1e-12 {
            continue;
        }
        let gap = (values[oracle_k] - values[oracle_k - 1]) / lambda_max;
        if gap <= 0.0 {
            continue;
        }
        let ratio = p as f64 / gap;
        if best.as_ref().map_or(true, |(b, _)| ratio < *b) {
            best = Some((ratio, vectors));
        }
    }
    // A degenerate affinity where no neighbor count produces a gap falls
    // back to the densest graph.
    let vectors = match best {
        Some((_, v)) => v,
        None => jacobi_eigen(&normalized_laplacian(&binarize(&affinity, n - 1))).1,
    };
    let mut spectral = Matrix::from_fn(n, oracle_k, |r, c| vectors[(r, c)]);
    for r in 0..n {
        l2_normalize(spectral.row_mut(r));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut assignments = kmeans(&spectral, oracle_k, 10, &mut rng);
    canonicalize(&mut assignments);
    Ok(ClusterResult { assignments, num_clusters: oracle_k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_unit(rng: &mut ChaCha12Rng, dim: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        l2_normalize(&mut v);
        v
    }

    /// Enumerates every assignment of `n` points into exactly `k` non-empty
    /// clusters (labels in first-appearance form) and returns the one with
    /// the largest summed within-cluster pairwise cosine.
    fn brute_force_best_partition(embeddings: &[Vec<f64>], k: usize) -> Vec<usize> {
        let n = embeddings.len();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut assignment = vec![0usize; n];
        fn visit(
            embeddings: &[Vec<f64>],
            k: usize,
            idx: usize,
            used: usize,
            assignment: &mut Vec<usize>,
            best: &mut Option<(f64, Vec<usize>)>,
        ) {
            let n = embeddings.len();
            if idx == n {
                if used != k {
                    return;
                }
                let mut score = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        if assignment[i] == assignment[j] {
                            score += cosine(&embeddings[i], &embeddings[j]);
                        }
                    }
                }
                if best.as_ref().map_or(true, |(b, _)| score > *b) {
                    *best = Some((score, assignment.clone()));
                }
                return;
            }
            let limit = (used + 1).min(k);
            for label in 0..limit {
                assignment[idx] = label;
                visit(embeddings, k, idx + 1, used.max(label + 1), assignment, best);
            }
        }
        visit(embeddings, k, 0, 0, &mut assignment, &mut best);
        best.expect("some partition exists").1
    }

    #[test]
    fn jacobi_recovers_a_hand_computed_spectrum() {
        let m = Matrix::from_vec(2, 2, vec![2.0, 1.0, 1.0, 2.0]);
        let (values, vectors) = jacobi_eigen(&m);
        assert!((values[0] - 1.0).abs() < 1e-12);
        assert!((values[1] - 3.0).abs() < 1e-12);
        for c in 0..2 {
            for r in 0..2 {
                let mv: f64 = (0..2).map(|k| m[(r, k)] * vectors[(k, c)]).sum();
                assert!((mv - values[c] * vectors[(r, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric_matrices() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..9);
            let mut m = Matrix::zeros(n, n);
            for r in 0..n {
                for c in r..n {
                    let x = rng.gen_range(-2.0..2.0);
                    m[(r, c)] = x;
                    m[(c, r)] = x;
                }
            }
            let (values, v) = jacobi_eigen(&m);
            for w in values.windows(2) {
                assert!(w[0] <= w[1]);
            }
            // Columns are orthonormal and V diag(values) V^T rebuilds the
            // input.
            for a in 0..n {
                for b in 0..n {
                    let dot: f64 = (0..n).map(|r| v[(r, a)] * v[(r, b)]).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-8, "column dot {dot} vs {want}");
                    let rebuilt: f64 =
                        (0..n).map(|k| v[(a, k)] * values[k] * v[(b, k)]).sum();
                    assert!((rebuilt - m[(a, b)]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn single_cluster_assigns_everything_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let embeddings: Vec<Vec<f64>> = (0..7).map(|_| random_unit(&mut rng, 5)).collect();
        let result = recluster(&embeddings, 1, &AttribConfig::default()).unwrap();
        assert_eq!(result.assignments, vec![0; 7]);
    }

    #[test]
    fn as_many_clusters_as_segments_yields_singletons() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let embeddings: Vec<Vec<f64>> = (0..5).map(|_| random_unit(&mut rng, 5)).collect();
        let result = recluster(&embeddings, 5, &AttribConfig::default()).unwrap();
        assert_eq!(result.assignments, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn too_few_segments_is_an_error() {
        let embeddings = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        match recluster(&embeddings, 3, &AttribConfig::default()) {
            Err(AttribError::TooFewSegments { have: 2, need: 3 }) => {}
            other => panic!("expected TooFewSegments, got {other:?}"),
        }
    }

    #[test]
    fn orthogonal_groups_split_exactly_and_match_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for trial in 0..20 {
            let k = rng.gen_range(2..4usize);
            let dim = 6;
            let per = rng.gen_range(2..4usize);
            let mut embeddings = Vec::new();
            let mut truth = Vec::new();
            for g in 0..k {
                for _ in 0..per {
                    let mut v = vec![0.0; dim];
                    v[g] = 1.0;
                    for d in 0..dim {
                        v[d] += 0.01 * rng.gen_range(-1.0..1.0);
                    }
                    embeddings.push(v);
                    truth.push(g);
                }
            }
            // Shuffle so group order does not leak into labels.
            for i in (1..embeddings.len()).rev() {
                let j = rng.gen_range(0..=i);
                embeddings.swap(i, j);
                truth.swap(i, j);
            }
            let result = recluster(&embeddings, k, &AttribConfig::default()).unwrap();
            let brute = brute_force_best_partition(&embeddings, k);
            assert_eq!(
                same_partition(&result.assignments, &truth),
                true,
                "trial {trial}: {:?} vs truth {truth:?}",
                result.assignments
            );
            assert!(same_partition(&result.assignments, &brute));
        }
    }

    #[test]
    fn duplicate_embeddings_land_in_the_same_cluster() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..20 {
            let mut embeddings: Vec<Vec<f64>> =
                (0..8).map(|_| random_unit(&mut rng, 6)).collect();
            embeddings[6] = embeddings[3].clone();
            let result = recluster(&embeddings, 3, &AttribConfig::default()).unwrap();
            assert_eq!(result.assignments[6], result.assignments[3]);
        }
    }

    #[test]
    fn relabeling_is_stable_under_input_permutation() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let mut embeddings = Vec::new();
        let mut truth = Vec::new();
        for g in 0..3 {
            for _ in 0..3 {
                let mut v = vec![0.0; 5];
                v[g] = 1.0;
                v[4] = 0.05 * rng.gen_range(-1.0..1.0);
                embeddings.push(v);
                truth.push(g);
            }
        }
        let base = recluster(&embeddings, 3, &AttribConfig::default()).unwrap();
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..embeddings.len()).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| embeddings[i].clone()).collect();
            let result = recluster(&shuffled, 3, &AttribConfig::default()).unwrap();
            // The partition must match the base run carried through the
            // permutation.
            let carried: Vec<usize> = perm.iter().map(|&i| base.assignments[i]).collect();
            assert!(same_partition(&result.assignments, &carried));
            // First-appearance relabeling means the first element is always
            // cluster 0.
            assert_eq!(result.assignments[0], 0);
        }
        assert!(same_partition(&base.assignments, &truth));
    }

    #[test]
    fn reclustering_is_deterministic_for_a_seed() {
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let embeddings: Vec<Vec<f64>> = (0..9).map(|_| random_unit(&mut rng, 4)).collect();
        let a = recluster(&embeddings, 3, &AttribConfig::default()).unwrap();
        let b = recluster(&embeddings, 3, &AttribConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        assert_eq!(a.len(), b.len());
        let mut fwd = std::collections::BTreeMap::new();
        let mut rev = std::collections::BTreeMap::new();
        for (&x, &y) in a.iter().zip(b) {
            if *fwd.entry(x).or_insert(y) != y || *rev.entry(y).or_insert(x) != x {
                return false;
            }
        }
        true
    }
}
