use serde::{Deserialize, Serialize};

use crate::equilibrium::SampledPath;
use crate::exppoly::ExpPoly;
use crate::simulate::{PathGrid, SimError};

/// An open-loop path, either closed-form or sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeterministicPath {
    ExpPoly(ExpPoly),
    Grid(SampledPath),
}

impl DeterministicPath {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            DeterministicPath::ExpPoly(f) => f.eval(t),
            DeterministicPath::Grid(p) => p.eval(t),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            DeterministicPath::ExpPoly(f) => f.terms().iter().all(|t| t.coeff.re.is_finite() && t.coeff.im.is_finite()),
            DeterministicPath::Grid(p) => p.dt > 0.0 && p.values.iter().all(|v| v.is_finite()),
        }
    }
}

/// Step function: `values[j]` on `[breakpoints[j-1], breakpoints[j])`, the
/// first value from `0`, the last one extending to infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, SimError> {
        let pc = Self { breakpoints, values };
        pc.validate()?;
        Ok(pc)
    }

    /// `k` segments with log-spaced interior breakpoints, the first at
    /// `T/(2k)`, denser near zero.
    pub fn log_spaced(horizon: f64, k: usize) -> Vec<f64> {
        if k < 2 {
            return Vec::new();
        }
        let first = horizon / (2.0 * k as f64);
        let ratio = (horizon / first).ln();
        (0..k - 1).map(|j| first * (ratio * j as f64 / (k - 1) as f64).exp()).collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.values.len() != self.breakpoints.len() + 1 {
            return Err(SimError::InvalidLaw(format!(
                "{} values for {} breakpoints",
                self.values.len(),
                self.breakpoints.len()
            )));
        }
        if !self.values.iter().chain(&self.breakpoints).all(|v| v.is_finite()) {
            return Err(SimError::InvalidLaw("non-finite piecewise-constant entry".into()));
        }
        if self.breakpoints.windows(2).any(|w| w[1] <= w[0]) || self.breakpoints.first().is_some_and(|b| *b <= 0.0) {
            return Err(SimError::InvalidLaw("breakpoints must be positive and increasing".into()));
        }
        Ok(())
    }

    pub fn segment(&self, t: f64) -> usize {
        self.breakpoints.partition_point(|b| *b <= t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.values[self.segment(t)]
    }

    /// Segment bounds `[start, end)`, `end` possibly infinite.
    pub fn bounds(&self, j: usize) -> (f64, f64) {
        let start = if j == 0 { 0.0 } else { self.breakpoints[j - 1] };
        let end = self.breakpoints.get(j).copied().unwrap_or(f64::INFINITY);
        (start, end)
    }
}

/// A firm's strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlLaw {
    Deterministic {
        path: DeterministicPath,
    },
    Constant {
        value: f64,
    },
    PiecewiseConstant {
        schedule: PiecewiseConstant,
    },
    /// `u = a(t) + b·X + k·P`.
    LinearFeedback {
        a: SampledPath,
        b: f64,
        k: f64,
    },
    /// `u = base(t) + offset(t)`.
    Offset {
        base: DeterministicPath,
        offset: PiecewiseConstant,
    },
}

impl ControlLaw {
    pub fn zero() -> Self {
        ControlLaw::Constant { value: 0.0 }
    }

    pub fn exppoly(f: ExpPoly) -> Self {
        ControlLaw::Deterministic { path: DeterministicPath::ExpPoly(f) }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            ControlLaw::Deterministic { path } if !path.is_finite() => {
                Err(SimError::InvalidLaw("non-finite deterministic path".into()))
            }
            ControlLaw::Constant { value } if !value.is_finite() => {
                Err(SimError::InvalidLaw("non-finite constant".into()))
            }
            ControlLaw::PiecewiseConstant { schedule } => schedule.validate(),
            ControlLaw::LinearFeedback { a, b, k } => {
                if !(b.is_finite() && k.is_finite() && a.dt > 0.0 && a.values.iter().all(|v| v.is_finite())) {
                    Err(SimError::InvalidLaw("non-finite feedback law".into()))
                } else {
                    Ok(())
                }
            }
            ControlLaw::Offset { base, offset } => {
                if !base.is_finite() {
                    return Err(SimError::InvalidLaw("non-finite offset base".into()));
                }
                offset.validate()
            }
            _ => Ok(()),
        }
    }

    /// Open-loop laws do not read the state.
    pub fn is_open_loop(&self) -> bool {
        !matches!(self, ControlLaw::LinearFeedback { .. })
    }

    /// Control at time `t` given own output `x` and price `p`.
    pub fn value(&self, t: f64, x: f64, p: f64) -> f64 {
        match self {
            ControlLaw::Deterministic { path } => path.eval(t),
            ControlLaw::Constant { value } => *value,
            ControlLaw::PiecewiseConstant { schedule } => schedule.eval(t),
            ControlLaw::LinearFeedback { a, b, k } => a.eval(t) + b * x + k * p,
            ControlLaw::Offset { base, offset } => base.eval(t) + offset.eval(t),
        }
    }

    pub fn open_loop_value(&self, t: f64) -> Option<f64> {
        self.is_open_loop().then(|| self.value(t, 0.0, 0.0))
    }

    /// Short label for reports.
    pub fn id(&self) -> String {
        match self {
            ControlLaw::Deterministic { path: DeterministicPath::ExpPoly(_) } => "deterministic_exppoly".into(),
            ControlLaw::Deterministic { path: DeterministicPath::Grid(_) } => "deterministic_grid".into(),
            ControlLaw::Constant { value } => format!("constant({value})"),
            ControlLaw::PiecewiseConstant { schedule } => format!("piecewise_constant({})", schedule.values.len()),
            ControlLaw::LinearFeedback { .. } => "linear_feedback".into(),
            ControlLaw::Offset { offset, .. } => format!("offset_piecewise_constant({})", offset.values.len()),
        }
    }

    pub(crate) fn compile(&self, grid: &PathGrid) -> CompiledLaw {
        match self {
            ControlLaw::LinearFeedback { a, b, k } => {
                CompiledLaw::Feedback { a: (0..=grid.n_steps).map(|s| a.eval(grid.time(s))).collect(), b: *b, k: *k }
            }
            law => CompiledLaw::OpenLoop((0..=grid.n_steps).map(|s| law.value(grid.time(s), 0.0, 0.0)).collect()),
        }
    }
}

/// A law sampled on the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CompiledLaw {
    OpenLoop(Vec<f64>),
    Feedback { a: Vec<f64>, b: f64, k: f64 },
}

impl CompiledLaw {
    #[inline]
    pub(crate) fn value(&self, step: usize, x: f64, p: f64) -> f64 {
        match self {
            CompiledLaw::OpenLoop(v) => v[step],
            CompiledLaw::Feedback { a, b, k } => a[step] + b * x + k * p,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_segments() {
        let pc = PiecewiseConstant::new(vec![1.0, 2.0], vec![5.0, 6.0, 7.0]).unwrap();
        assert_eq!(pc.eval(0.0), 5.0);
        assert_eq!(pc.eval(0.999), 5.0);
        assert_eq!(pc.eval(1.0), 6.0);
        assert_eq!(pc.eval(100.0), 7.0);
        assert_eq!(pc.bounds(2), (2.0, f64::INFINITY));
    }

    #[test]
    fn piecewise_validation() {
        assert!(PiecewiseConstant::new(vec![2.0, 1.0], vec![0.0; 3]).is_err());
        assert!(PiecewiseConstant::new(vec![1.0], vec![0.0; 3]).is_err());
        assert!(PiecewiseConstant::new(vec![1.0], vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn log_spaced_breakpoints() {
        let b = PiecewiseConstant::log_spaced(20.0, 16);
        assert_eq!(b.len(), 15);
        assert!((b[0] - 20.0 / 32.0).abs() < 1e-12);
        assert!(b.windows(2).all(|w| w[1] > w[0] && (w[1] - w[0]) > 0.0));
        assert!(*b.last().unwrap() < 20.0);
        let widths: Vec<f64> = b.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(widths.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn feedback_value() {
        let law = ControlLaw::LinearFeedback { a: SampledPath::new(1.0, vec![1.0, 1.0]), b: 2.0, k: -1.0 };
        assert_eq!(law.value(0.5, 3.0, 4.0), 1.0 + 6.0 - 4.0);
        assert!(!law.is_open_loop());
        assert_eq!(law.open_loop_value(0.0), None);
    }
}
