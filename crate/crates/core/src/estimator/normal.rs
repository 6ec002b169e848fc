use nalgebra::{DMatrix, DVector};

use super::evaluate::Evaluation;
use super::layout::StateLayout;

/// Gauss-Newton normal equations `H dx = b` (with `b = -J^T r`) stored by
/// blocks: a dense camera block, per-point camera-point couplings and
/// per-point diagonal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSystem {
    pub layout: StateLayout,
    pub hcc: DMatrix<f64>,
    pub bc: DVector<f64>,
    pub hcp: Vec<DMatrix<f64>>,
    pub hpp: Vec<DMatrix<f64>>,
    pub bp: Vec<DVector<f64>>,
}

impl BlockSystem {
    /// Accumulates the blocks of `eval` in observation order.
    pub fn from_evaluation(layout: StateLayout, eval: &Evaluation) -> Self {
        let c = layout.pose_dim();
        let mut sys = Self {
            layout,
            hcc: DMatrix::zeros(c, c),
            bc: DVector::zeros(c),
            hcp: (0..layout.num_points).map(|p| DMatrix::zeros(c, layout.point_dim(p))).collect(),
            hpp: (0..layout.num_points).map(|p| DMatrix::zeros(layout.point_dim(p), layout.point_dim(p))).collect(),
            bp: (0..layout.num_points).map(|p| DVector::zeros(layout.point_dim(p))).collect(),
        };
        for b in &eval.blocks {
            let r = &b.residuals;
            let jp = &b.point_jacobian;
            for (ca, ja) in &b.pose_jacobians {
                let mut bc = sys.bc.rows_mut(*ca, 6);
                bc -= ja.transpose() * r;
                for (cb, jb) in &b.pose_jacobians {
                    let mut h = sys.hcc.view_mut((*ca, *cb), (6, 6));
                    h += ja.transpose() * jb;
                }
                if jp.ncols() > 0 {
                    let mut h = sys.hcp[b.point].rows_mut(*ca, 6);
                    h += ja.transpose() * jp;
                }
            }
            if jp.ncols() > 0 {
                sys.hpp[b.point] += jp.transpose() * jp;
                sys.bp[b.point] -= jp.transpose() * r;
            }
        }
        sys
    }

    /// Dense gauge-reduced `H`.
    pub fn dense(&self) -> DMatrix<f64> {
        let c = self.layout.pose_dim();
        let n = self.layout.dim();
        let mut h = DMatrix::zeros(n, n);
        h.view_mut((0, 0), (c, c)).copy_from(&self.hcc);
        for p in 0..self.layout.num_points {
            let d = self.layout.point_dim(p);
            if d == 0 {
                continue;
            }
            let o = c + self.layout.point_offset(p);
            h.view_mut((0, o), (c, d)).copy_from(&self.hcp[p]);
            h.view_mut((o, 0), (d, c)).copy_from(&self.hcp[p].transpose());
            h.view_mut((o, o), (d, d)).copy_from(&self.hpp[p]);
        }
        h
    }

    pub fn dense_rhs(&self) -> DVector<f64> {
        let c = self.layout.pose_dim();
        let mut b = DVector::zeros(self.layout.dim());
        b.rows_mut(0, c).copy_from(&self.bc);
        for p in 0..self.layout.num_points {
            let d = self.layout.point_dim(p);
            b.rows_mut(c + self.layout.point_offset(p), d).copy_from(&self.bp[p]);
        }
        b
    }

    /// Solves `(H + lambda diag(H)) dx = b` by eliminating the point blocks
    /// (Schur complement on the cameras). `None` if a factorization fails.
    pub fn solve_damped(&self, lambda: f64) -> Option<DVector<f64>> {
        let c = self.layout.pose_dim();
        let mut s = damp(&self.hcc, lambda);
        let mut rhs = self.bc.clone();
        let mut hpp_inv = Vec::with_capacity(self.hpp.len());
        for p in 0..self.layout.num_points {
            if self.hpp[p].nrows() == 0 {
                hpp_inv.push(DMatrix::zeros(0, 0));
                continue;
            }
            let inv = damp(&self.hpp[p], lambda).cholesky()?.inverse();
            let w = &self.hcp[p] * &inv;
            s -= &w * self.hcp[p].transpose();
            rhs -= &w * &self.bp[p];
            hpp_inv.push(inv);
        }
        let dc = if c == 0 { DVector::zeros(0) } else { symmetrize(s).cholesky()?.solve(&rhs) };
        let mut dx = DVector::zeros(self.layout.dim());
        dx.rows_mut(0, c).copy_from(&dc);
        for p in 0..self.layout.num_points {
            let d = self.layout.point_dim(p);
            if d == 0 {
                continue;
            }
            let dp = &hpp_inv[p] * (&self.bp[p] - self.hcp[p].transpose() * &dc);
            dx.rows_mut(c + self.layout.point_offset(p), d).copy_from(&dp);
        }
        if dx.iter().all(|v| v.is_finite()) {
            Some(dx)
        } else {
            None
        }
    }

    /// Information on the cameras with the points marginalized out.
    pub fn camera_marginal(&self) -> Option<DMatrix<f64>> {
        let mut s = self.hcc.clone();
        for p in 0..self.layout.num_points {
            if self.hpp[p].nrows() == 0 {
                continue;
            }
            let inv = self.hpp[p].clone().cholesky()?.inverse();
            s -= &self.hcp[p] * inv * self.hcp[p].transpose();
        }
        Some(symmetrize(s))
    }
}

/// `H + lambda diag(H)`, with a tiny floor on the diagonal so parameters
/// that no residual touches stay solvable (their right-hand side is 0).
fn damp(h: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut d = h.clone();
    for i in 0..h.nrows() {
        d[(i, i)] += lambda * h[(i, i)].max(1e-12);
    }
    d
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
