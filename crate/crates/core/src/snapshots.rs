//! Snapshot data: state trajectories on uniform grids, optionally with input
//! samples and derivative snapshots.

use crate::integrator::{InputSignal, TimeGrid};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot set has no trajectories")]
    Empty,
    #[error("trajectory {index}: {reason}")]
    Inconsistent { index: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// `n x (steps + 1)`, one column per grid node.
    pub states: Matrix,
    pub inputs: Option<InputSignal>,
    /// Same shape as `states`.
    pub derivatives: Option<Matrix>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, states: Matrix) -> Self {
        Self {
            grid,
            states,
            inputs: None,
            derivatives: None,
        }
    }

    pub fn with_inputs(mut self, inputs: InputSignal) -> Self {
        self.inputs = Some(inputs);
        self
    }

    pub fn with_derivatives(mut self, derivatives: Matrix) -> Self {
        self.derivatives = Some(derivatives);
        self
    }

    pub fn samples(&self) -> usize {
        self.states.cols()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.states.column(0)
    }

    fn check(&self, index: usize) -> Result<(), SnapshotError> {
        let bad = |reason: String| Err(SnapshotError::Inconsistent { index, reason });
        if self.states.cols() != self.grid.nodes() {
            return bad(format!(
                "{} state columns for a grid with {} nodes",
                self.states.cols(),
                self.grid.nodes()
            ));
        }
        if let Some(u) = &self.inputs {
            if u.nodes() != self.grid.nodes() {
                return bad(format!("{} input columns for {} grid nodes", u.nodes(), self.grid.nodes()));
            }
        }
        if let Some(d) = &self.derivatives {
            if d.shape() != self.states.shape() {
                return bad(format!(
                    "derivative shape {:?} differs from state shape {:?}",
                    d.shape(),
                    self.states.shape()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub trajectories: Vec<Trajectory>,
}

impl SnapshotSet {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self, SnapshotError> {
        let s = Self { trajectories };
        s.validate()?;
        Ok(s)
    }

    pub fn single(traj: Trajectory) -> Result<Self, SnapshotError> {
        Self::new(vec![traj])
    }

    pub fn validate(&self) -> Result<(), SnapshotError> {
        let first = self.trajectories.first().ok_or(SnapshotError::Empty)?;
        let n = first.states.rows();
        let m = first.inputs.as_ref().map(|u| u.dim());
        for (k, t) in self.trajectories.iter().enumerate() {
            t.check(k)?;
            if t.states.rows() != n {
                return Err(SnapshotError::Inconsistent {
                    index: k,
                    reason: format!("state dimension {} differs from {n}", t.states.rows()),
                });
            }
            if t.inputs.as_ref().map(|u| u.dim()) != m {
                return Err(SnapshotError::Inconsistent {
                    index: k,
                    reason: "input presence or dimension differs between trajectories".into(),
                });
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.states.rows())
    }

    /// Input dimension, 0 if the data are autonomous.
    pub fn input_dim(&self) -> usize {
        self.trajectories
            .first()
            .and_then(|t| t.inputs.as_ref())
            .map_or(0, |u| u.dim())
    }

    pub fn has_inputs(&self) -> bool {
        self.input_dim() > 0
    }

    pub fn has_derivatives(&self) -> bool {
        !self.trajectories.is_empty() && self.trajectories.iter().all(|t| t.derivatives.is_some())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn total_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.samples()).sum()
    }

    /// All state snapshots side by side, `n x Σ samples`.
    pub fn stacked_states(&self) -> Matrix {
        stack(self.trajectories.iter().map(|t| &t.states))
    }

    /// All derivative snapshots side by side, if every trajectory has them.
    pub fn stacked_derivatives(&self) -> Option<Matrix> {
        if !self.has_derivatives() {
            return None;
        }
        Some(stack(self.trajectories.iter().filter_map(|t| t.derivatives.as_ref())))
    }

    pub fn stacked_inputs(&self) -> Option<Matrix> {
        if !self.has_inputs() {
            return None;
        }
        Some(stack(self.trajectories.iter().filter_map(|t| t.inputs.as_ref().map(|u| &u.samples))))
    }

    /// Applies `f` to every state (and derivative) matrix, keeping grids and
    /// inputs. Used for projection onto and lifting from a reduced basis.
    pub fn map_states(&self, mut f: impl FnMut(&Matrix) -> Matrix) -> Self {
        Self {
            trajectories: self
                .trajectories
                .iter()
                .map(|t| Trajectory {
                    grid: t.grid,
                    states: f(&t.states),
                    inputs: t.inputs.clone(),
                    derivatives: t.derivatives.as_ref().map(&mut f),
                })
                .collect(),
        }
    }

    /// Keeps only the trajectories with the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, SnapshotError> {
        let trajectories = indices
            .iter()
            .map(|&i| {
                self.trajectories.get(i).cloned().ok_or(SnapshotError::Inconsistent {
                    index: i,
                    reason: "no such trajectory".into(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(trajectories)
    }
}

fn stack<'a>(mats: impl Iterator<Item = &'a Matrix>) -> Matrix {
    let mats: Vec<&Matrix> = mats.collect();
    let rows = mats[0].rows();
    let cols: usize = mats.iter().map(|m| m.cols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut offset = 0;
    for m in mats {
        for i in 0..rows {
            out.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
        }
        offset += m.cols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::MidpointRule;

    fn traj(n: usize, steps: usize) -> Trajectory {
        Trajectory::new(
            TimeGrid::new(0.0, 0.1, steps).unwrap(),
            Matrix::from_fn(n, steps + 1, |i, j| (i * 10 + j) as f64),
        )
    }

    #[test]
    fn validation() {
        assert_eq!(SnapshotSet::new(vec![]), Err(SnapshotError::Empty));
        assert!(SnapshotSet::new(vec![traj(2, 3), traj(3, 3)]).is_err());
        let mut t = traj(2, 3);
        t.states = Matrix::zeros(2, 3);
        assert!(SnapshotSet::single(t).is_err());
        let t = traj(2, 3).with_inputs(InputSignal::new(Matrix::zeros(1, 4), MidpointRule::default()));
        assert!(SnapshotSet::new(vec![t.clone(), traj(2, 3)]).is_err());
        let s = SnapshotSet::new(vec![t.clone(), t]).unwrap();
        assert_eq!(s.input_dim(), 1);
        assert!(SnapshotSet::single(traj(2, 3).with_derivatives(Matrix::zeros(2, 2))).is_err());
    }

    #[test]
    fn stacking_and_selection() {
        let s = SnapshotSet::new(vec![traj(2, 2), traj(2, 4)]).unwrap();
        let x = s.stacked_states();
        assert_eq!(x.shape(), (2, 8));
        assert_eq!(x[(1, 3)], 10.0);
        assert_eq!(s.total_samples(), 8);
        assert!(s.stacked_derivatives().is_none());
        let sel = s.select(&[1]).unwrap();
        assert_eq!(sel.trajectories[0].samples(), 5);
        assert!(s.select(&[5]).is_err());
    }
}
