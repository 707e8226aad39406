//! Column-support grouping of a constraint matrix.
//!
//! Stratum rows vanish outside their stratum, so the columns of `C` fall into
//! a few groups sharing one nonzero-row pattern. Products like `C D C'` then
//! split into small dense blocks, one per group.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
struct Group {
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// `C[rows, cols]`
    block: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct SupportGroups {
    m: usize,
    groups: Vec<Group>,
}

impl SupportGroups {
    pub fn new(c: &DMatrix<f64>) -> Self {
        let (m, n) = c.shape();
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut members: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        for j in 0..n {
            let pattern: Vec<usize> =
                c.column(j).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(r, _)| r).collect();
            let g = *index.entry(pattern.clone()).or_insert_with(|| {
                members.push((pattern, Vec::new()));
                members.len() - 1
            });
            members[g].1.push(j);
        }
        let groups = members
            .into_iter()
            .filter(|(rows, _)| !rows.is_empty())
            .map(|(rows, cols)| {
                let block = DMatrix::from_fn(rows.len(), cols.len(), |a, b| c[(rows[a], cols[b])]);
                Group { rows, cols, block }
            })
            .collect();
        Self { m, groups }
    }

    /// `C diag(w) C'`, symmetric by construction.
    pub fn weighted_gram(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.m, self.m);
        for g in &self.groups {
            let mut scaled = g.block.clone();
            for (b, mut col) in scaled.column_iter_mut().enumerate() {
                col *= w[g.cols[b]].sqrt();
            }
            let local = &scaled * scaled.transpose();
            for (a, &ra) in g.rows.iter().enumerate() {
                for (b, &rb) in g.rows.iter().enumerate().take(a + 1) {
                    h[(ra, rb)] += local[(a, b)];
                }
            }
        }
        for i in 0..self.m {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
        }
        h
    }

    /// A matrix `A` (r×m, r ≤ n) with `A'A = C C'`: each group block is
    /// replaced by the triangular factor of its QR decomposition.
    pub fn compressed(&self) -> DMatrix<f64> {
        let height: usize = self.groups.iter().map(|g| g.rows.len().min(g.cols.len())).sum();
        let mut a = DMatrix::zeros(height, self.m);
        let mut top = 0;
        for g in &self.groups {
            let bt = g.block.transpose();
            let factor = if g.cols.len() > g.rows.len() { bt.qr().r() } else { bt };
            for i in 0..factor.nrows() {
                for (b, &rb) in g.rows.iter().enumerate() {
                    a[(top + i, rb)] = factor[(i, b)];
                }
            }
            top += factor.nrows();
        }
        a
    }
}
