//! Minimum-cost linear assignment with a lexicographic tie-break.

use crate::error::{Error, Result};

/// Shortest-augmenting-path assignment with row/column potentials, O(n^3).
/// Returns the optimal total and `assign[row] = column`.
fn solve(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    (total, assign)
}

/// Permutation `perm` minimizing `sum_i cost[i][perm[i]]`. Among optimal
/// permutations the lexicographically smallest is returned.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::Empty("assignment of an empty cost matrix".into()));
    }
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::shape("assignment cost matrix must be square"));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("assignment cost matrix holds non-finite values".into()));
    }
    let (best, _) = solve(cost);
    let scale = cost.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-10 * scale * n as f64;

    // Fix rows in order to the smallest column that keeps the optimum.
    let mut perm = Vec::with_capacity(n);
    let mut taken = vec![false; n];
    let mut fixed_cost = 0.0;
    for i in 0..n {
        for j in 0..n {
            if taken[j] {
                continue;
            }
            let free: Vec<usize> = (0..n).filter(|&c| !taken[c] && c != j).collect();
            let sub: Vec<Vec<f64>> = cost[i + 1..]
                .iter()
                .map(|row| free.iter().map(|&c| row[c]).collect())
                .collect();
            let (rest, _) = solve(&sub);
            if fixed_cost + cost[i][j] + rest <= best + tol {
                perm.push(j);
                taken[j] = true;
                fixed_cost += cost[i][j];
                break;
            }
        }
    }
    debug_assert_eq!(perm.len(), n);
    Ok(perm)
}
