//! Linear assignment (Kuhn-Munkres with potentials, `O(n²m)`).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Result of a thresholded assignment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

fn shape<T>(cost: &[Vec<T>]) -> Result<(usize, usize)> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if let Some((i, r)) = cost.iter().enumerate().find(|(_, r)| r.len() != m) {
        return Err(Error::shape(format!(
            "cost row {i} has {} columns, expected {m}",
            r.len()
        )));
    }
    Ok((n, m))
}

/// Minimum-cost assignment of rows to columns.
///
/// Every row (or every column, whichever side is smaller) is assigned. `+∞` entries are
/// forbidden: the solver first maximizes the number of finite pairs, then minimizes their
/// cost, and pairs that could only be completed through an infinite entry come back as
/// `None`. `NaN` and `-∞` are rejected.
pub fn solve_assignment<T: Scalar>(cost: &[Vec<T>]) -> Result<Vec<Option<usize>>> {
    let (n, m) = shape(cost)?;
    if n == 0 || m == 0 {
        return Ok(vec![None; n]);
    }
    let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
    for v in cost.iter().flatten() {
        if v.is_nan() || *v == T::neg_infinity() {
            return Err(Error::invalid(format!("cost entry {v} not allowed")));
        }
        if v.is_finite() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if lo > hi {
        return Ok(vec![None; n]);
    }
    // Larger than any difference in total finite cost between two assignments.
    let k = T::from_usize_lossy(n.min(m) + 1);
    let big = hi + (hi - lo + T::one()) * k;
    let at = |i: usize, j: usize| {
        let v = cost[i][j];
        if v.is_finite() {
            v
        } else {
            big
        }
    };

    let row_to_col = if n <= m {
        kuhn_munkres(n, m, at)
    } else {
        let col_to_row = kuhn_munkres(m, n, |j, i| at(i, j));
        let mut r = vec![None; n];
        for (j, i) in col_to_row.into_iter().enumerate() {
            if let Some(i) = i {
                r[i] = Some(j);
            }
        }
        r
    };
    Ok(row_to_col
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.filter(|&j| cost[i][j].is_finite()))
        .collect())
}

/// Rows ≤ columns. Returns the column of every row.
fn kuhn_munkres<T: Scalar>(
    n: usize,
    m: usize,
    cost: impl Fn(usize, usize) -> T,
) -> Vec<Option<usize>> {
    debug_assert!(n <= m);
    // 1-based potentials; index 0 is the virtual source column.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![T::infinity(); m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = T::infinity();
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            row_to_col[owner[j] - 1] = Some(j - 1);
        }
    }
    row_to_col
}

/// Assignment that leaves rows and columns unmatched rather than pair them above
/// `max_cost`.
///
/// Minimizes `Σ (cost − max_cost)` over the chosen pairs, i.e. every unmatched row and
/// column is charged `max_cost / 2`; entries above `max_cost` and `+∞` are never chosen.
/// With an infinite `max_cost` this is [`solve_assignment`].
pub fn hungarian<T: Scalar>(cost: &[Vec<T>], max_cost: T) -> Result<Assignment> {
    let (n, m) = shape(cost)?;
    if max_cost.is_nan() {
        return Err(Error::invalid("max_cost is NaN"));
    }
    let row_to_col = if n == 0 || m == 0 {
        vec![None; n]
    } else if max_cost == T::infinity() {
        solve_assignment(cost)?
    } else {
        let half = max_cost / T::lit(2.0);
        let size = n + m;
        let mut ext = vec![vec![T::infinity(); size]; size];
        for i in 0..n {
            for j in 0..m {
                let c = cost[i][j];
                if c.is_nan() {
                    return Err(Error::invalid("cost entry NaN not allowed"));
                }
                if c <= max_cost {
                    ext[i][j] = c;
                }
            }
            ext[i][m + i] = half;
        }
        for j in 0..m {
            ext[n + j][j] = half;
            for k in 0..n {
                ext[n + j][m + k] = T::zero();
            }
        }
        solve_assignment(&ext)?
            .into_iter()
            .take(n)
            .map(|c| c.filter(|&j| j < m))
            .collect()
    };

    let mut out = Assignment::default();
    let mut col_used = vec![false; m];
    for (i, c) in row_to_col.into_iter().enumerate() {
        match c {
            Some(j) if cost[i][j] <= max_cost => {
                out.matches.push((i, j));
                col_used[j] = true;
            }
            _ => out.unmatched_rows.push(i),
        }
    }
    out.unmatched_cols = (0..m).filter(|&j| !col_used[j]).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(cost: &[Vec<f64>], matches: &[(usize, usize)]) -> f64 {
        matches.iter().map(|&(i, j)| cost[i][j]).sum()
    }

    #[test]
    fn identity_on_zero_diagonal() {
        let cost: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                (0..5)
                    .map(|j| if i == j { 0.0 } else { 1.0 + (i * j) as f64 })
                    .collect()
            })
            .collect();
        let a = hungarian(&cost, f64::INFINITY).unwrap();
        assert_eq!(a.matches, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn two_by_two() {
        let cost = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let a = hungarian(&cost, f64::INFINITY).unwrap();
        assert_eq!(a.matches, vec![(0, 0), (1, 1)]);
        assert_eq!(total(&cost, &a.matches), 2.0);
    }

    #[test]
    fn empty_inputs() {
        let a = hungarian::<f64>(&[], 1.0).unwrap();
        assert_eq!(a, Assignment::default());
        let a = hungarian::<f64>(&[vec![], vec![]], 1.0).unwrap();
        assert_eq!(a.unmatched_rows, vec![0, 1]);
        let a = hungarian(&[vec![0.3, 0.2]], 1.0).unwrap();
        assert_eq!(a.matches, vec![(0, 1)]);
        assert_eq!(a.unmatched_cols, vec![0]);
    }

    #[test]
    fn threshold_leaves_unmatched() {
        let cost = vec![vec![0.1, 0.9], vec![0.8, 0.95]];
        let a = hungarian(&cost, 0.5).unwrap();
        assert_eq!(a.matches, vec![(0, 0)]);
        assert_eq!(a.unmatched_rows, vec![1]);
        assert_eq!(a.unmatched_cols, vec![1]);
    }

    #[test]
    fn infinite_entries_are_forbidden() {
        let inf = f64::INFINITY;
        let cost = vec![vec![inf, 0.2], vec![inf, 0.1]];
        let a = hungarian(&cost, inf).unwrap();
        assert_eq!(a.matches.len(), 1);
        assert_eq!(a.unmatched_cols, vec![0]);
        let a = hungarian(&cost, 0.5).unwrap();
        assert_eq!(a.matches, vec![(1, 1)]);
        let all_inf = vec![vec![inf; 3]; 2];
        assert!(hungarian(&all_inf, inf).unwrap().matches.is_empty());
    }

    #[test]
    fn finite_pairs_are_maximized_first() {
        let inf = f64::INFINITY;
        // cheapest single pair (0,0) would block row 1
        let cost = vec![vec![0.0, 5.0], vec![1.0, inf]];
        let a = solve_assignment(&cost).unwrap();
        assert_eq!(a, vec![Some(1), Some(0)]);
    }

    #[test]
    fn rejects_nan_and_ragged() {
        assert!(hungarian(&[vec![f64::NAN]], 1.0).is_err());
        assert!(hungarian(&[vec![1.0, 2.0], vec![1.0]], 1.0).is_err());
    }

    #[test]
    fn works_for_f32() {
        let cost = vec![
            vec![4.0f32, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = hungarian(&cost, f32::INFINITY).unwrap();
        let t: f32 = a.matches.iter().map(|&(i, j)| cost[i][j]).sum();
        assert_eq!(t, 5.0);
    }
}
