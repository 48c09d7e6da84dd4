//! Minimum-cost perfect matching on small square cost matrices
//! (Hungarian method with row/column potentials, O(n³)).

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    /// Sum of the chosen costs, accumulated in row order.
    pub total: f64,
}

/// Solves the assignment problem for a square matrix of finite costs.
///
/// # Panics
/// If the matrix is not square.
pub fn solve(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    assert!(cost.iter().all(|r| r.len() == n), "cost matrix must be square");
    if n == 0 {
        return Assignment {
            row_to_col: Vec::new(),
            total: 0.0,
        };
    }
    // 1-based indexing; column 0 is the virtual start of each augmenting path
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    let total = row_to_col.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Assignment { row_to_col, total }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let a = solve(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(a.row_to_col, vec![0, 1]);
        assert_eq!(a.total, 2.0);
    }

    #[test]
    fn anti_diagonal() {
        let a = solve(&[vec![5.0, 1.0, 9.0], vec![1.0, 7.0, 9.0], vec![9.0, 9.0, 0.5]]);
        assert_eq!(a.row_to_col, vec![1, 0, 2]);
        assert_eq!(a.total, 2.5);
    }

    #[test]
    fn empty_and_single() {
        assert_eq!(solve(&[]).total, 0.0);
        assert_eq!(solve(&[vec![3.5]]).row_to_col, vec![0]);
    }
}
