//! Minimum-cost rectangular linear assignment (shortest augmenting paths with
//! dual potentials, O(n^2 m)).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[r]` is the column matched to row `r`, if any.
    pub row_to_col: Vec<Option<usize>>,
    pub cost: f64,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col.iter().enumerate().filter_map(|(r, c)| c.map(|c| (r, c)))
    }
}

/// Matches `min(rows, cols)` pairs one-to-one with minimal total cost.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidArgument("cost matrix rows differ in length".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("cost matrix has non-finite entries".into()));
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment { row_to_col: vec![None; rows], cost: 0.0 });
    }
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };

    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
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

    let mut row_to_col = vec![None; rows];
    let mut total = 0.0;
    for (j, &i) in owner.iter().enumerate().skip(1) {
        if i != 0 {
            let (r, c) = if transposed { (j - 1, i - 1) } else { (i - 1, j - 1) };
            row_to_col[r] = Some(c);
            total += cost[r][c];
        }
    }
    Ok(Assignment { row_to_col, cost: total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Minimum over all injective maps from the smaller side to the larger.
    pub(crate) fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        let rows = cost.len();
        let cols = cost[0].len();
        fn go(cost: &[Vec<f64>], r: usize, used: &mut Vec<bool>, transposed: bool) -> f64 {
            let (n, m) = if transposed { (cost[0].len(), cost.len()) } else { (cost.len(), cost[0].len()) };
            if r == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..m {
                if used[c] {
                    continue;
                }
                used[c] = true;
                let v = if transposed { cost[c][r] } else { cost[r][c] };
                best = best.min(v + go(cost, r + 1, used, transposed));
                used[c] = false;
            }
            best
        }
        let transposed = rows > cols;
        let m = rows.max(cols);
        go(cost, 0, &mut vec![false; m], transposed)
    }

    #[test]
    fn two_by_two_fixture() {
        let a = solve_assignment(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(a.row_to_col, vec![Some(1), Some(0)]);
        assert_eq!(a.cost, 4.0);
        assert_eq!(brute_force_min(&[vec![1.0, 2.0], vec![2.0, 4.0]]), 4.0);
    }

    #[test]
    fn diagonal_preferred() {
        let cost: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| if i == j { 0.0 } else { 1.0 }).collect()).collect();
        let a = solve_assignment(&cost).unwrap();
        assert_eq!(a.row_to_col, (0..5).map(Some).collect::<Vec<_>>());
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn rectangular_and_empty() {
        let wide = solve_assignment(&[vec![5.0, 1.0, 3.0]]).unwrap();
        assert_eq!(wide.row_to_col, vec![Some(1)]);
        let tall = solve_assignment(&[vec![5.0], vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(tall.row_to_col, vec![None, Some(0), None]);
        assert_eq!(tall.cost, 1.0);
        assert!(solve_assignment(&[]).unwrap().row_to_col.is_empty());
        assert_eq!(solve_assignment(&[vec![], vec![]]).unwrap().row_to_col, vec![None, None]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(solve_assignment(&[vec![1.0, f64::INFINITY]]).is_err());
        assert!(solve_assignment(&[vec![1.0, f64::NAN]]).is_err());
        assert!(solve_assignment(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            rows in 1usize..6, cols in 1usize..6,
            vals in prop::collection::vec(-10.0f64..10.0, 36),
        ) {
            let cost: Vec<Vec<f64>> = (0..rows).map(|r| vals[r * 6..r * 6 + cols].to_vec()).collect();
            let a = solve_assignment(&cost).unwrap();
            prop_assert!((a.cost - brute_force_min(&cost)).abs() < 1e-9);
            prop_assert_eq!(a.pairs().count(), rows.min(cols));
            let mut seen = std::collections::HashSet::new();
            for (_, c) in a.pairs() {
                prop_assert!(seen.insert(c));
            }
        }
    }
}
