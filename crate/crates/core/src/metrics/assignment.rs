//! Minimum-cost assignment on a square cost matrix.

/// Solves the square assignment problem, returning for each row the column
/// it is matched to together with the total cost.
///
/// Runs the O(n^3) potential-based shortest augmenting path method on
/// integer costs, so results are exact.
pub fn min_cost_assignment(cost: &[Vec<i64>]) -> (Vec<usize>, i64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0);
    }
    for row in cost {
        assert_eq!(row.len(), n, "cost matrix must be square");
    }
    // potentials and matching use 1-based indexing with 0 as the virtual
    // unmatched slot
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut match_col = vec![0usize; n + 1];
    for row in 1..=n {
        let mut min_v = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        let mut way = vec![0usize; n + 1];
        let mut j0 = 0usize;
        match_col[0] = row;
        loop {
            used[j0] = true;
            let i0 = match_col[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if match_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if match_col[j] != 0 {
            row_to_col[match_col[j] - 1] = j - 1;
        }
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(r, &c)| cost[r][c])
        .sum();
    (row_to_col, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn brute_force(cost: &[Vec<i64>]) -> i64 {
        let n = cost.len();
        let mut cols: Vec<usize> = (0..n).collect();
        let mut best = i64::MAX;
        permute(&mut cols, 0, cost, &mut best);
        best
    }

    fn permute(cols: &mut Vec<usize>, k: usize, cost: &[Vec<i64>], best: &mut i64) {
        let n = cols.len();
        if k == n {
            let total: i64 = (0..n).map(|r| cost[r][cols[r]]).sum();
            *best = (*best).min(total);
            return;
        }
        for i in k..n {
            cols.swap(k, i);
            permute(cols, k + 1, cost, best);
            cols.swap(k, i);
        }
    }

    #[test]
    fn empty_matrix() {
        let (perm, total) = min_cost_assignment(&[]);
        assert!(perm.is_empty());
        assert_eq!(total, 0);
    }

    #[test]
    fn identity_is_optimal_on_diagonal_favoring_matrix() {
        let cost = vec![
            vec![0, 9, 9],
            vec![9, 0, 9],
            vec![9, 9, 0],
        ];
        let (perm, total) = min_cost_assignment(&cost);
        assert_eq!(perm, vec![0, 1, 2]);
        assert_eq!(total, 0);
    }

    #[test]
    fn forced_off_diagonal() {
        let cost = vec![vec![10, 1], vec![1, 10]];
        let (perm, total) = min_cost_assignment(&cost);
        assert_eq!(perm, vec![1, 0]);
        assert_eq!(total, 2);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha12Rng::seed_from_u64(404);
        for trial in 0..200 {
            let n = rng.gen_range(1..=6);
            let cost: Vec<Vec<i64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(0..100)).collect())
                .collect();
            let (perm, total) = min_cost_assignment(&cost);
            let mut seen = vec![false; n];
            for &c in &perm {
                assert!(!seen[c], "trial {trial}: column used twice");
                seen[c] = true;
            }
            assert_eq!(total, brute_force(&cost), "trial {trial}");
        }
    }
}
