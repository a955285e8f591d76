//! Exact minimum-cost perfect matching and uniform-marginal transport between
//! finite point sets.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssignmentError {
    #[error("cost matrix must be square, got {rows} x {cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("cost matrix has {len} entries, expected {rows} x {cols}")]
    BadShape { rows: usize, cols: usize, len: usize },
    #[error("cost matrix is empty")]
    Empty,
    #[error("cost entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
}

/// Optimal matching: `permutation[i]` is the column assigned to row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<T> {
    pub permutation: Vec<usize>,
    pub total_cost: T,
}

fn check_matrix<T: Scalar>(cost: &[T], rows: usize, cols: usize) -> Result<(), AssignmentError> {
    if rows == 0 || cols == 0 {
        return Err(AssignmentError::Empty);
    }
    if cost.len() != rows * cols {
        return Err(AssignmentError::BadShape { rows, cols, len: cost.len() });
    }
    if let Some(p) = cost.iter().position(|c| !c.is_finite()) {
        return Err(AssignmentError::NonFinite { row: p / cols, col: p % cols });
    }
    Ok(())
}

/// Minimum-cost perfect matching of a row-major `rows x cols` matrix.
///
/// Among optimal matchings the lexicographically smallest permutation is
/// returned: the Hungarian method supplies optimal duals, every optimal
/// matching uses only edges of zero reduced cost, and rows are then fixed in
/// order to their smallest admissible column by alternating-cycle exchanges.
pub fn assignment_solve<T: Scalar>(cost: &[T], rows: usize, cols: usize) -> Result<Assignment<T>, AssignmentError> {
    if rows != cols {
        return Err(AssignmentError::NotSquare { rows, cols });
    }
    check_matrix(cost, rows, cols)?;
    let n = rows;
    let (mut row_to_col, u, v) = hungarian(cost, n);

    let scale = cost.iter().fold(T::one(), |m, c| m.max(c.abs()));
    let tol = scale * T::epsilon() * T::of_usize(64 * n);
    let tight = |i: usize, j: usize| (cost[i * n + j] - u[i] - v[j]).abs() <= tol;
    lexicographic_refine(n, &tight, &mut row_to_col);

    let total_cost = (0..n).map(|i| cost[i * n + row_to_col[i]]).sum();
    Ok(Assignment { permutation: row_to_col, total_cost })
}

/// Shortest-augmenting-path Hungarian method, `O(n^3)`. Returns the matching
/// and dual potentials with `cost[i][j] - u[i] - v[j] >= 0`, equality on the
/// matching.
fn hungarian<T: Scalar>(cost: &[T], n: usize) -> (Vec<usize>, Vec<T>, Vec<T>) {
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    // col_row[j]: row (1-based) matched to column j (1-based); 0 = free.
    let mut col_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] = u[col_row[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[col_row[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites `row_to_col`, a perfect matching on tight edges, into the
/// lexicographically smallest one.
fn lexicographic_refine(n: usize, tight: &impl Fn(usize, usize) -> bool, row_to_col: &mut [usize]) {
    let mut col_to_row = vec![0; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    let mut seen_row = vec![false; n];
    let mut parent_col = vec![usize::MAX; n];
    for i in 0..n {
        let current = row_to_col[i];
        for j in 0..current {
            // Columns of earlier rows are fixed.
            if col_to_row[j] < i || !tight(i, j) {
                continue;
            }
            // Row r = col_to_row[j] must move; search an alternating path of
            // tight edges among rows > i that ends in column `current`.
            let r = col_to_row[j];
            if let Some(path) = alternating_path(n, i, r, current, tight, row_to_col, &col_to_row, &mut seen_row, &mut parent_col) {
                // path: columns visited from r to `current`, each paired with
                // the row that takes it.
                for (row, col) in path {
                    row_to_col[row] = col;
                    col_to_row[col] = row;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
                break;
            }
        }
    }
}

/// Breadth-first search from row `start` over tight edges to column `target`
/// through rows after `fixed`; the column of `start` is reserved for `fixed`.
/// Returns the (row, new column) reassignments along the path found.
#[allow(clippy::too_many_arguments)]
fn alternating_path(
    n: usize,
    fixed: usize,
    start: usize,
    target: usize,
    tight: &impl Fn(usize, usize) -> bool,
    row_to_col: &[usize],
    col_to_row: &[usize],
    seen_row: &mut [bool],
    parent_col: &mut [usize],
) -> Option<Vec<(usize, usize)>> {
    seen_row.iter_mut().for_each(|s| *s = false);
    // parent_col[c] = row from which column c was reached.
    parent_col.iter_mut().for_each(|p| *p = usize::MAX);
    let mut queue = std::collections::VecDeque::new();
    seen_row[start] = true;
    queue.push_back(start);
    while let Some(r) = queue.pop_front() {
        for c in 0..n {
            if parent_col[c] != usize::MAX || c == row_to_col[r] || c == row_to_col[start] || !tight(r, c) {
                continue;
            }
            let owner = col_to_row[c];
            if c != target && owner <= fixed {
                continue;
            }
            parent_col[c] = r;
            if c == target {
                let mut path = Vec::new();
                let mut col = c;
                loop {
                    let row = parent_col[col];
                    path.push((row, col));
                    if row == start {
                        return Some(path);
                    }
                    col = row_to_col[row];
                }
            }
            if !seen_row[owner] {
                seen_row[owner] = true;
                queue.push_back(owner);
            }
        }
    }
    None
}

/// Optimal transport between uniform measures on `rows` and `cols` points
/// with a row-major cost matrix; returns the minimal expected cost.
///
/// Square inputs go through [`assignment_solve`]. Otherwise the problem is a
/// transportation problem with integer supplies `cols` per row and demands
/// `rows` per column, solved by successive shortest paths with potentials.
pub fn uniform_transport<T: Scalar>(cost: &[T], rows: usize, cols: usize) -> Result<T, AssignmentError> {
    check_matrix(cost, rows, cols)?;
    if rows == cols {
        let a = assignment_solve(cost, rows, cols)?;
        return Ok(a.total_cost / T::of_usize(rows));
    }
    let total = transportation_cost(cost, rows, cols);
    Ok(total / T::of_usize(rows * cols))
}

fn transportation_cost<T: Scalar>(cost: &[T], m: usize, k: usize) -> T {
    let inf = T::infinity();
    // Nodes: rows 0..m, columns m..m+k, source s, sink t.
    let (s, t) = (m + k, m + k + 1);
    let nodes = m + k + 2;
    let mut supply = vec![k; m];
    let mut demand = vec![m; k];
    let mut flow = vec![0usize; m * k];
    let mut pot = vec![T::zero(); nodes];
    for j in 0..k {
        pot[m + j] = (0..m).map(|i| cost[i * k + j]).fold(inf, T::min);
    }
    pot[t] = pot[m..m + k].iter().copied().fold(inf, T::min);
    let mut remaining = m * k;

    let mut dist = vec![inf; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];
    while remaining > 0 {
        dist.iter_mut().for_each(|d| *d = inf);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        dist[s] = T::zero();
        let relax = |dist: &mut Vec<T>, prev: &mut Vec<usize>, from: usize, to: usize, rc: T| {
            let nd = dist[from] + rc.max(T::zero());
            if nd < dist[to] {
                dist[to] = nd;
                prev[to] = from;
            }
        };
        // Dense Dijkstra on reduced costs.
        loop {
            let mut best = usize::MAX;
            for v in 0..nodes {
                if !done[v] && dist[v] < inf && (best == usize::MAX || dist[v] < dist[best]) {
                    best = v;
                }
            }
            if best == usize::MAX || best == t {
                break;
            }
            done[best] = true;
            if best == s {
                for i in (0..m).filter(|&i| supply[i] > 0) {
                    relax(&mut dist, &mut prev, s, i, pot[s] - pot[i]);
                }
            } else if best < m {
                let i = best;
                for j in 0..k {
                    relax(&mut dist, &mut prev, i, m + j, cost[i * k + j] + pot[i] - pot[m + j]);
                }
            } else {
                let j = best - m;
                for i in (0..m).filter(|&i| flow[i * k + j] > 0) {
                    relax(&mut dist, &mut prev, best, i, pot[best] - pot[i] - cost[i * k + j]);
                }
                if demand[j] > 0 {
                    relax(&mut dist, &mut prev, best, t, pot[best] - pot[t]);
                }
            }
        }
        let reach = dist[t];
        if !(reach < inf) {
            break;
        }
        for v in 0..nodes {
            pot[v] = pot[v] + dist[v].min(reach);
        }
        // Bottleneck along t <- column <- row (<- column <- row)* <- s.
        let sink_col = prev[t];
        let mut amount = demand[sink_col - m];
        let mut v = sink_col;
        let source_row = loop {
            let row = prev[v];
            let before = prev[row];
            if before == s {
                amount = amount.min(supply[row]);
                break row;
            }
            amount = amount.min(flow[row * k + (before - m)]);
            v = before;
        };
        let mut v = sink_col;
        loop {
            let row = prev[v];
            flow[row * k + (v - m)] += amount;
            let before = prev[row];
            if before == s {
                break;
            }
            flow[row * k + (before - m)] -= amount;
            v = before;
        }
        supply[source_row] -= amount;
        demand[sink_col - m] -= amount;
        remaining -= amount;
    }
    flow.iter().zip(cost).filter(|(f, _)| **f > 0).map(|(f, c)| T::of_usize(*f) * *c).sum()
}
