//! Rectangular min-cost assignment with a cost ceiling.
//!
//! Pairs whose cost is not strictly below `cost_limit` are forbidden. Among the
//! matchings built from allowed pairs, the solver returns one with the largest
//! number of pairs and, among those, the smallest total cost.
//!
//! Internally this is the O(n²m) shortest-augmenting-path Hungarian method run
//! over lexicographic costs `(forbidden_count, cost)`. The lexicographic pair
//! keeps the cardinality objective exact instead of relying on a large
//! penalty constant that would swamp the real costs in floating point.

use std::ops::{Add, AddAssign, Sub, SubAssign};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum AssignmentError {
    #[error("cost matrix entry ({row}, {col}) is NaN")]
    NaN { row: usize, col: usize },
    #[error("cost matrix entry ({row}, {col}) is -inf")]
    NegativeInfinity { row: usize, col: usize },
    #[error("cost matrix has {len} entries, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, len: usize },
}

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        if data.len() != rows * cols {
            return Err(AssignmentError::Shape {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Panics when the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
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

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.matches.iter().map(|&(r, c)| cost.get(r, c)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Lex {
    forbidden: i64,
    cost: f64,
}

impl Lex {
    const ZERO: Lex = Lex {
        forbidden: 0,
        cost: 0.0,
    };
    const INF: Lex = Lex {
        forbidden: i64::MAX / 4,
        cost: 0.0,
    };

    fn less(self, other: Lex) -> bool {
        self.forbidden < other.forbidden
            || (self.forbidden == other.forbidden && self.cost < other.cost)
    }
}

impl Add for Lex {
    type Output = Lex;
    fn add(self, o: Lex) -> Lex {
        Lex {
            forbidden: self.forbidden + o.forbidden,
            cost: self.cost + o.cost,
        }
    }
}

impl Sub for Lex {
    type Output = Lex;
    fn sub(self, o: Lex) -> Lex {
        Lex {
            forbidden: self.forbidden - o.forbidden,
            cost: self.cost - o.cost,
        }
    }
}

impl AddAssign for Lex {
    fn add_assign(&mut self, o: Lex) {
        *self = *self + o;
    }
}

impl SubAssign for Lex {
    fn sub_assign(&mut self, o: Lex) {
        *self = *self - o;
    }
}

/// Full assignment of every row (`n <= m`) minimising the lexicographic total.
/// Returns the column assigned to each row.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> Lex) -> Vec<usize> {
    debug_assert!(n <= m);
    let mut u = vec![Lex::ZERO; n + 1];
    let mut v = vec![Lex::ZERO; m + 1];
    // p[j]: row (1-based) holding column j; 0 = free
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![Lex::INF; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.fill(Lex::INF);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = Lex::INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur.less(minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j].less(delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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

    let mut assigned = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] > 0 {
            assigned[p[j] - 1] = j - 1;
        }
    }
    assigned
}

/// Solve the assignment problem described in the module docs.
pub fn solve_assignment(cost: &CostMatrix, cost_limit: f64) -> Result<Assignment, AssignmentError> {
    for r in 0..cost.rows {
        for c in 0..cost.cols {
            let v = cost.get(r, c);
            if v.is_nan() {
                return Err(AssignmentError::NaN { row: r, col: c });
            }
            if v == f64::NEG_INFINITY {
                return Err(AssignmentError::NegativeInfinity { row: r, col: c });
            }
        }
    }
    let allowed = |r: usize, c: usize| cost.get(r, c) < cost_limit;
    let lex = |r: usize, c: usize| {
        if allowed(r, c) {
            Lex {
                forbidden: 0,
                cost: cost.get(r, c),
            }
        } else {
            Lex {
                forbidden: 1,
                cost: 0.0,
            }
        }
    };

    let mut matches = Vec::new();
    if cost.rows > 0 && cost.cols > 0 {
        if cost.rows <= cost.cols {
            for (r, c) in hungarian(cost.rows, cost.cols, lex).into_iter().enumerate() {
                if allowed(r, c) {
                    matches.push((r, c));
                }
            }
        } else {
            for (c, r) in hungarian(cost.cols, cost.rows, |i, j| lex(j, i))
                .into_iter()
                .enumerate()
            {
                if allowed(r, c) {
                    matches.push((r, c));
                }
            }
            matches.sort_unstable();
        }
    }

    let mut row_used = vec![false; cost.rows];
    let mut col_used = vec![false; cost.cols];
    for &(r, c) in &matches {
        row_used[r] = true;
        col_used[c] = true;
    }
    Ok(Assignment {
        matches,
        unmatched_rows: (0..cost.rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..cost.cols).filter(|&c| !col_used[c]).collect(),
    })
}
