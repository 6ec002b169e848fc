use nalgebra::{DVector, Vector6};

use super::problem::{BAProblem, BAState, Mode};

/// Ordering of the gauge-reduced parameter vector: the poses of views
/// `1..n` (6 each, translation then rotation), followed by the point
/// parameters in point order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub mode: Mode,
    pub num_views: usize,
    pub num_points: usize,
}

impl StateLayout {
    pub fn new(problem: &BAProblem) -> Self {
        Self { mode: problem.mode(), num_views: problem.num_views, num_points: problem.num_points() }
    }

    pub fn pose_dim(&self) -> usize {
        6 * (self.num_views - 1)
    }

    pub fn pose_offset(&self, view: usize) -> Option<usize> {
        (view > 0).then(|| 6 * (view - 1))
    }

    /// Free parameters of a point: 1 (inverse depth) or 3 (position); the
    /// gauge-fixing point 0 has 0 or 2.
    pub fn point_dim(&self, point: usize) -> usize {
        match (self.mode, point) {
            (Mode::Photometric, 0) => 0,
            (Mode::Photometric, _) => 1,
            (Mode::Feature, 0) => 2,
            (Mode::Feature, _) => 3,
        }
    }

    /// Offset of a point's parameters within the point segment.
    pub fn point_offset(&self, point: usize) -> usize {
        match (self.mode, point) {
            (_, 0) => 0,
            (Mode::Photometric, p) => p - 1,
            (Mode::Feature, p) => 2 + 3 * (p - 1),
        }
    }

    pub fn points_dim(&self) -> usize {
        if self.num_points == 0 {
            0
        } else {
            self.point_offset(self.num_points - 1) + self.point_dim(self.num_points - 1)
        }
    }

    pub fn dim(&self) -> usize {
        self.pose_dim() + self.points_dim()
    }

    /// `exp(xi) * T` on free poses and additive updates on points.
    pub fn retract(&self, state: &BAState, step: &DVector<f64>) -> BAState {
        let mut out = state.clone();
        for v in 1..self.num_views {
            let o = self.pose_offset(v).unwrap();
            let xi = Vector6::from_iterator(step.rows(o, 6).iter().copied());
            out.poses[v] = state.poses[v].retract(&xi);
        }
        let base = self.pose_dim();
        for p in 0..self.num_points {
            let o = base + self.point_offset(p);
            match self.mode {
                Mode::Photometric => {
                    if p > 0 {
                        out.inverse_depths[p] += step[o];
                    }
                }
                Mode::Feature => {
                    for i in 0..self.point_dim(p) {
                        out.positions[p][i] += step[o + i];
                    }
                }
            }
        }
        out
    }
}
