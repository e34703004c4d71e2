//! Minimum-cost rectangular assignment with a deterministic tie-break.
//!
//! Rows are prediction slots, columns are targets, `rows >= cols`. Among
//! all optimal assignments the one whose `target -> row` sequence is
//! lexicographically smallest is returned, by both the Hungarian solver and
//! the brute-force oracle.

use super::MatchError;

/// Largest column count accepted by [`brute_force_assign`].
pub const BRUTE_FORCE_MAX_COLS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatchError> {
        if data.len() != rows * cols {
            return Err(MatchError::Contract(format!(
                "cost matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MatchError::Contract("cost matrix has non-finite entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, MatchError> {
        let data = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `target_to_row[t]` is the prediction row matched to target `t`.
    pub target_to_row: Vec<usize>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn empty() -> Self {
        Self {
            target_to_row: Vec::new(),
            total_cost: 0.0,
        }
    }

    /// Target matched to each row, `None` for unmatched rows.
    pub fn row_targets(&self, rows: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; rows];
        for (t, &r) in self.target_to_row.iter().enumerate() {
            out[r] = Some(t);
        }
        out
    }
}

fn tie_tolerance(best: f64) -> f64 {
    1e-12 * (1.0 + best.abs())
}

/// Minimum total cost of assigning `targets` to distinct `rows`, with the
/// assignment (indices into `rows`). Shortest augmenting path with
/// potentials, O(targets² · rows).
fn solve(cost: &CostMatrix, targets: &[usize], rows: &[usize]) -> (f64, Vec<usize>) {
    let n = targets.len();
    let m = rows.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let a = |i: usize, j: usize| cost.get(rows[j - 1], targets[i - 1]);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // owner[j]: target (1-based) currently holding row j, 0 if free
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
                let cur = a(i0, j) - u[i0] - v[j];
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
    let mut assign = vec![0usize; n];
    for j in 1..=m {
        if owner[j] > 0 {
            assign[owner[j] - 1] = j - 1;
        }
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost.get(rows[j], targets[i])).sum();
    (total, assign)
}

fn check_capacity(cost: &CostMatrix) -> Result<(), MatchError> {
    if cost.rows < cost.cols {
        return Err(MatchError::Capacity {
            rows: cost.rows,
            cols: cost.cols,
        });
    }
    Ok(())
}

/// Optimal assignment of every target (column) to a distinct row.
pub fn hungarian_assign(cost: &CostMatrix) -> Result<Assignment, MatchError> {
    check_capacity(cost)?;
    let all_targets: Vec<usize> = (0..cost.cols).collect();
    let all_rows: Vec<usize> = (0..cost.rows).collect();
    let (best, initial) = solve(cost, &all_targets, &all_rows);
    let tol = tie_tolerance(best);

    // Fix targets one at a time to the smallest row that still admits an
    // optimal completion. The row from the latest optimal solution is always
    // admissible, so only smaller rows need probing.
    let mut free_rows = all_rows;
    let mut fixed_cost = 0.0;
    let mut current: Vec<usize> = initial.iter().map(|&j| j).collect();
    let mut target_to_row = Vec::with_capacity(cost.cols);
    for t in 0..cost.cols {
        let rest: Vec<usize> = (t + 1..cost.cols).collect();
        let known = free_rows[current[0]];
        let mut chosen = known;
        let mut chosen_rest: Option<Vec<usize>> = None;
        for &r in free_rows.iter().take_while(|&&r| r < known) {
            let rows: Vec<usize> = free_rows.iter().copied().filter(|&x| x != r).collect();
            let (sub, sub_assign) = solve(cost, &rest, &rows);
            if fixed_cost + cost.get(r, t) + sub <= best + tol {
                chosen = r;
                chosen_rest = Some(sub_assign.iter().map(|&j| rows[j]).collect());
                break;
            }
        }
        let rest_rows: Vec<usize> = match chosen_rest {
            Some(rows) => rows,
            None => current[1..].iter().map(|&j| free_rows[j]).collect(),
        };
        fixed_cost += cost.get(chosen, t);
        target_to_row.push(chosen);
        free_rows.retain(|&x| x != chosen);
        current = rest_rows
            .iter()
            .map(|r| free_rows.iter().position(|x| x == r).expect("row still free"))
            .collect();
    }
    let total_cost = target_to_row.iter().enumerate().map(|(t, &r)| cost.get(r, t)).sum();
    Ok(Assignment {
        target_to_row,
        total_cost,
    })
}

/// Exhaustive search over injective `target -> row` maps, for small
/// problems. Same tie-break as [`hungarian_assign`].
pub fn brute_force_assign(cost: &CostMatrix) -> Result<Assignment, MatchError> {
    check_capacity(cost)?;
    if cost.cols > BRUTE_FORCE_MAX_COLS {
        return Err(MatchError::TooLarge {
            cols: cost.cols,
            max: BRUTE_FORCE_MAX_COLS,
        });
    }
    // lower bound on the cost of targets t.. from per-column minima
    let mut tail_bound = vec![0.0; cost.cols + 1];
    for t in (0..cost.cols).rev() {
        let col_min = (0..cost.rows).map(|r| cost.get(r, t)).fold(f64::INFINITY, f64::min);
        tail_bound[t] = tail_bound[t + 1] + col_min;
    }

    struct Search<'a> {
        cost: &'a CostMatrix,
        tail_bound: Vec<f64>,
        used: Vec<bool>,
        path: Vec<usize>,
    }

    impl Search<'_> {
        /// Visits complete assignments in lexicographic order; `visit`
        /// returns a pruning threshold on the final cost.
        fn walk(&mut self, partial: f64, visit: &mut dyn FnMut(&[usize], f64) -> f64, limit: &mut f64) {
            let t = self.path.len();
            if t == self.cost.cols {
                *limit = visit(&self.path, partial);
                return;
            }
            for r in 0..self.cost.rows {
                if self.used[r] {
                    continue;
                }
                let c = partial + self.cost.get(r, t);
                if c + self.tail_bound[t + 1] > *limit {
                    continue;
                }
                self.used[r] = true;
                self.path.push(r);
                self.walk(c, visit, limit);
                self.path.pop();
                self.used[r] = false;
            }
        }
    }

    let mut search = Search {
        cost,
        tail_bound,
        used: vec![false; cost.rows],
        path: Vec::with_capacity(cost.cols),
    };
    // pass 1: optimum
    let mut best = f64::INFINITY;
    let mut limit = f64::INFINITY;
    search.walk(
        0.0,
        &mut |_, c| {
            best = best.min(c);
            best + tie_tolerance(best)
        },
        &mut limit,
    );
    // pass 2: lexicographically first assignment within tolerance
    let mut limit = best + tie_tolerance(best);
    let mut found: Option<(Vec<usize>, f64)> = None;
    let cap = limit;
    search.walk(
        0.0,
        &mut |path, c| {
            if found.is_none() && c <= cap {
                found = Some((path.to_vec(), c));
                return f64::NEG_INFINITY;
            }
            if found.is_some() {
                f64::NEG_INFINITY
            } else {
                cap
            }
        },
        &mut limit,
    );
    let (target_to_row, total_cost) = found.expect("an assignment exists when rows >= cols");
    Ok(Assignment {
        target_to_row,
        total_cost,
    })
}
