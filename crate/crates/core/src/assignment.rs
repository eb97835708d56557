//! Optimal and k-best 2-D assignment.
//!
//! Rows are assigned to distinct columns; `+inf` entries are forbidden pairs.
//! The Hungarian solver is the primary backend; the auction solver is kept as
//! an independent cross-check on integer-valued matrices.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::contract("cost entries must be finite or +inf"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                got: bad.len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// All entries `+inf`.
    pub fn forbidden(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![f64::INFINITY; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(!v.is_nan() && v != f64::NEG_INFINITY, "invalid cost {v}");
        self.data[r * self.cols + c] = v;
    }

    /// Sum of the selected entries, accumulated in row order.
    pub fn cost_of(&self, assignment: &[usize]) -> f64 {
        assignment
            .iter()
            .enumerate()
            .map(|(r, &c)| self.get(r, c))
            .fold(0.0, |acc, v| acc + v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column chosen for each row.
    pub cols: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost assignment of every row to a distinct column.
///
/// Among optimal assignments the lexicographically smallest row-to-column
/// map is returned.
pub fn solve_assignment(c: &CostMatrix) -> Result<Assignment> {
    if c.rows > c.cols {
        return Err(Error::contract(format!(
            "assignment needs rows <= cols, got {}x{}",
            c.rows, c.cols
        )));
    }
    if c.rows == 0 {
        return Ok(Assignment {
            cols: Vec::new(),
            cost: 0.0,
        });
    }
    let (cols, u, v) = hungarian(c)?;
    let cost = c.cost_of(&cols);
    let refined = lexicographic_refine(c, &cols, &u, &v);
    let refined_cost = c.cost_of(&refined);
    if refined_cost <= cost {
        Ok(Assignment {
            cols: refined,
            cost: refined_cost,
        })
    } else {
        Ok(Assignment { cols, cost })
    }
}

/// Shortest-augmenting-path Hungarian method with dual potentials.
/// Returns the assignment and the row/column potentials.
fn hungarian(c: &CostMatrix) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let (n, m) = (c.rows, c.cols);
    // 1-based internal indexing; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(Error::Infeasible);
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
    let mut cols = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            cols[p[j] - 1] = j - 1;
        }
    }
    Ok((cols, u[1..].to_vec(), v[1..].to_vec()))
}

/// Walks the tight-edge graph of the optimal duals to find the
/// lexicographically smallest optimal assignment.
///
/// Left vertices are the real rows followed by `cols - rows` dummy rows that
/// may take any column whose dual is zero (columns with a negative dual must
/// be covered by a real row).
fn lexicographic_refine(c: &CostMatrix, start: &[usize], u: &[f64], v: &[f64]) -> Vec<usize> {
    let (n, m) = (c.rows, c.cols);
    let scale = c
        .data
        .iter()
        .filter(|x| x.is_finite())
        .fold(1.0f64, |a, x| a.max(x.abs()));
    let tol = 1e-9 * scale;
    let must = |j: usize| v[j] < -tol;
    let tight = |l: usize, j: usize| -> bool {
        if l < n {
            let x = c.get(l, j);
            x.is_finite() && x - u[l] - v[j] <= tol
        } else {
            !must(j)
        }
    };

    // owner[j] = left vertex holding column j
    let mut owner = vec![usize::MAX; m];
    for (r, &j) in start.iter().enumerate() {
        owner[j] = r;
    }
    let mut next_dummy = n;
    for j in 0..m {
        if owner[j] == usize::MAX {
            if must(j) {
                return start.to_vec();
            }
            owner[j] = next_dummy;
            next_dummy += 1;
        }
    }
    let mut held = start.to_vec();

    // Augment from left vertex `l` to a free column, avoiding columns owned
    // by fixed rows (< `fixed`).
    fn augment(
        l: usize,
        owner: &mut [usize],
        visited: &mut [bool],
        fixed: usize,
        tight: &dyn Fn(usize, usize) -> bool,
    ) -> bool {
        for j in 0..owner.len() {
            if visited[j] || !tight(l, j) {
                continue;
            }
            let o = owner[j];
            if o != usize::MAX && o < fixed {
                continue;
            }
            visited[j] = true;
            if o == usize::MAX || augment(o, owner, visited, fixed, tight) {
                owner[j] = l;
                return true;
            }
        }
        false
    }

    for i in 0..n {
        let current = held[i];
        for j in 0..current {
            if !tight(i, j) || (owner[j] < i) {
                continue;
            }
            let saved = owner.clone();
            let displaced = owner[j];
            owner[j] = i;
            owner[current] = usize::MAX;
            let mut visited = vec![false; m];
            visited[j] = true;
            if augment(displaced, &mut owner, &mut visited, i + 1, &tight) {
                for (col, &o) in owner.iter().enumerate() {
                    if o < n {
                        held[o] = col;
                    }
                }
                break;
            }
            owner = saved;
        }
    }
    held
}

/// Auction algorithm with ε-scaling. Costs are treated as integers (the
/// result is optimal when every finite entry is integral).
pub fn auction_assignment(c: &CostMatrix) -> Result<Assignment> {
    if c.rows > c.cols {
        return Err(Error::contract("assignment needs rows <= cols"));
    }
    if c.rows == 0 {
        return Ok(Assignment {
            cols: Vec::new(),
            cost: 0.0,
        });
    }
    if !has_feasible_assignment(c) {
        return Err(Error::Infeasible);
    }
    let (n, m) = (c.rows, c.cols);
    let finite: Vec<f64> = c.data.iter().copied().filter(|x| x.is_finite()).collect();
    let max_abs = finite.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    // forbidden pairs become strongly dominated benefits
    let big = (max_abs * 2.0 + 1.0) * (m as f64 + 1.0);
    // square problem: dummy persons n..m have zero benefit everywhere
    let benefit = |i: usize, j: usize| -> f64 {
        if i < n {
            let x = c.get(i, j);
            if x.is_finite() {
                -x
            } else {
                -big
            }
        } else {
            0.0
        }
    };
    let final_eps = 1.0 / (m as f64 + 1.0);
    let mut eps = (big.max(max_abs) / 2.0).max(final_eps);
    let mut price = vec![0.0f64; m];
    let mut person_of = vec![usize::MAX; m];
    let mut object_of = vec![usize::MAX; m];
    loop {
        person_of.iter_mut().for_each(|x| *x = usize::MAX);
        object_of.iter_mut().for_each(|x| *x = usize::MAX);
        let mut queue: std::collections::VecDeque<usize> = (0..m).collect();
        while let Some(i) = queue.pop_front() {
            let (mut best, mut v1, mut v2) = (0usize, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for j in 0..m {
                let val = benefit(i, j) - price[j];
                if val > v1 {
                    v2 = v1;
                    v1 = val;
                    best = j;
                } else if val > v2 {
                    v2 = val;
                }
            }
            let increment = if v2.is_finite() { v1 - v2 } else { 0.0 };
            price[best] += increment + eps;
            let prev = person_of[best];
            person_of[best] = i;
            object_of[i] = best;
            if prev != usize::MAX {
                object_of[prev] = usize::MAX;
                queue.push_back(prev);
            }
        }
        if eps < final_eps {
            break;
        }
        eps /= 5.0;
    }
    let cols = object_of[..n].to_vec();
    let cost = c.cost_of(&cols);
    if !cost.is_finite() {
        return Err(Error::Infeasible);
    }
    Ok(Assignment { cols, cost })
}

fn has_feasible_assignment(c: &CostMatrix) -> bool {
    fn try_row(r: usize, c: &CostMatrix, owner: &mut [usize], seen: &mut [bool]) -> bool {
        for j in 0..c.cols {
            if seen[j] || !c.get(r, j).is_finite() {
                continue;
            }
            seen[j] = true;
            if owner[j] == usize::MAX || try_row(owner[j], c, owner, seen) {
                owner[j] = r;
                return true;
            }
        }
        false
    }
    let mut owner = vec![usize::MAX; c.cols];
    (0..c.rows).all(|r| {
        let mut seen = vec![false; c.cols];
        try_row(r, c, &mut owner, &mut seen)
    })
}

struct Node {
    solution: Assignment,
    matrix: CostMatrix,
    /// Rows `< first_free` are pinned to their solution column.
    first_free: usize,
    seq: u64,
}

impl Node {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.solution
            .cost
            .total_cmp(&other.solution.cost)
            .then_with(|| self.solution.cols.cmp(&other.solution.cols))
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap
        other.key_cmp(self)
    }
}

/// The `k` lowest-cost distinct assignments in nondecreasing cost order
/// (Murty partitioning). Returns fewer when fewer exist, none if infeasible.
pub fn k_best_assignments(c: &CostMatrix, k: usize) -> Result<Vec<Assignment>> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    let first = match solve_assignment(c) {
        Ok(a) => a,
        Err(Error::Infeasible) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node {
        solution: first,
        matrix: c.clone(),
        first_free: 0,
        seq,
    });
    let mut out = Vec::with_capacity(k);
    while let Some(node) = heap.pop() {
        let sol = node.solution.cols.clone();
        out.push(Assignment {
            cost: c.cost_of(&sol),
            cols: sol.clone(),
        });
        if out.len() == k {
            break;
        }
        let mut m = node.matrix;
        for t in node.first_free..c.rows {
            // child t: rows < t pinned, (t, sol[t]) forbidden
            let mut child = m.clone();
            child.set(t, sol[t], f64::INFINITY);
            match solve_assignment(&child) {
                Ok(a) => {
                    seq += 1;
                    heap.push(Node {
                        solution: Assignment {
                            cost: c.cost_of(&a.cols),
                            cols: a.cols,
                        },
                        matrix: child,
                        first_free: t,
                        seq,
                    });
                }
                Err(Error::Infeasible) => {}
                Err(e) => return Err(e),
            }
            // pin row t to sol[t] for subsequent children
            for j in 0..c.cols {
                if j != sol[t] {
                    m.set(t, j, f64::INFINITY);
                }
            }
            for r in 0..c.rows {
                if r != t {
                    m.set(r, sol[t], f64::INFINITY);
                }
            }
        }
    }
    Ok(out)
}
