//! Model parameters, assumption checks and population construction.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, StreamTag};

/// Per-firm type vector `(μ, σ, γ, λ, r, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirmType {
    /// Depreciation rate of output.
    pub mu: f64,
    /// Output volatility.
    pub sigma: f64,
    /// Fraction of output lost per jump.
    pub gamma: f64,
    /// Intensity of loss jumps.
    pub lambda: f64,
    /// Quadratic control cost coefficient.
    pub r: f64,
    /// Production cost ratio, in `(0, 1)`.
    pub c: f64,
}

/// Shared market constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Speed of price adjustment.
    pub alpha: f64,
    /// Demand level of the inverse demand function.
    pub beta: f64,
    /// Discount rate.
    pub rho: f64,
    /// Initial price.
    pub p0: f64,
    /// Limiting mean initial output.
    pub x0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NonFinite {
        field: &'static str,
    },
    NonPositive {
        field: &'static str,
        value: f64,
    },
    CostRatioOutsideUnit {
        value: f64,
    },
    /// `σ² < 2μ` fails.
    VolatilityBound {
        sigma_sq: f64,
        two_mu: f64,
    },
    /// `1 - γλ > 0` fails.
    LossIntensityBound {
        one_minus_gamma_lambda: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { field } => write!(f, "{field} must be finite"),
            Violation::NonPositive { field, value } => write!(f, "{field} > 0 violated ({value})"),
            Violation::CostRatioOutsideUnit { value } => write!(f, "0 < c < 1 violated (c = {value})"),
            Violation::VolatilityBound { sigma_sq, two_mu } => {
                write!(f, "sigma²<2mu violated ({sigma_sq} ≥ {two_mu})")
            }
            Violation::LossIntensityBound { one_minus_gamma_lambda } => {
                write!(f, "1−gamma·lambda>0 violated ({one_minus_gamma_lambda} ≤ 0)")
            }
        }
    }
}

/// Outcome of a validation pass. Failure is data, not an error.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
        self.warnings.extend(other.warnings);
    }
}

fn check_positive(report: &mut ValidationReport, field: &'static str, value: f64) {
    if !value.is_finite() {
        report.violations.push(Violation::NonFinite { field });
    } else if value <= 0.0 {
        report.violations.push(Violation::NonPositive { field, value });
    }
}

pub fn validate_firm(theta: &FirmType) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_positive(&mut report, "mu", theta.mu);
    check_positive(&mut report, "sigma", theta.sigma);
    check_positive(&mut report, "gamma", theta.gamma);
    check_positive(&mut report, "lambda", theta.lambda);
    check_positive(&mut report, "r", theta.r);
    if !theta.c.is_finite() {
        report.violations.push(Violation::NonFinite { field: "c" });
    } else if theta.c <= 0.0 || theta.c >= 1.0 {
        report.violations.push(Violation::CostRatioOutsideUnit { value: theta.c });
    }
    let sigma_sq = theta.sigma * theta.sigma;
    if !(sigma_sq < 2.0 * theta.mu) {
        report.violations.push(Violation::VolatilityBound { sigma_sq, two_mu: 2.0 * theta.mu });
    }
    let slack = 1.0 - theta.gamma * theta.lambda;
    if !(slack > 0.0) {
        report.violations.push(Violation::LossIntensityBound { one_minus_gamma_lambda: slack });
    }
    report
}

pub fn validate_market(market: &MarketParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_positive(&mut report, "alpha", market.alpha);
    check_positive(&mut report, "beta", market.beta);
    check_positive(&mut report, "rho", market.rho);
    if !market.p0.is_finite() {
        report.violations.push(Violation::NonFinite { field: "p0" });
    } else if market.p0 <= 0.0 {
        report.warnings.push(format!("p0 = {} is not positive; negative prices are permitted by the model", market.p0));
    }
    if !market.x0.is_finite() {
        report.violations.push(Violation::NonFinite { field: "x0" });
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitFamily {
    LogNormal,
    PointMass,
}

/// Law of a firm's initial output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialOutput {
    pub family: InitFamily,
    pub mean: f64,
    #[serde(default)]
    pub variance: f64,
}

impl InitialOutput {
    pub fn point(value: f64) -> Self {
        Self { family: InitFamily::PointMass, mean: value, variance: 0.0 }
    }

    pub fn lognormal(mean: f64, variance: f64) -> Self {
        Self { family: InitFamily::LogNormal, mean, variance }
    }

    pub fn second_moment(&self) -> f64 {
        match self.family {
            InitFamily::PointMass => self.mean * self.mean,
            InitFamily::LogNormal => self.variance + self.mean * self.mean,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !self.mean.is_finite() || !self.variance.is_finite() || self.variance < 0.0 {
            return Err(ParamError::InvalidInit(format!("{self:?}")));
        }
        if self.family == InitFamily::LogNormal && self.mean <= 0.0 {
            return Err(ParamError::InvalidInit("lognormal initial output needs a positive mean".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            InitFamily::PointMass => self.mean,
            InitFamily::LogNormal => {
                if self.variance == 0.0 {
                    return self.mean;
                }
                let s2 = (1.0 + self.variance / (self.mean * self.mean)).ln();
                let m = self.mean.ln() - 0.5 * s2;
                LogNormal::new(m, s2.sqrt()).expect("validated lognormal parameters").sample(rng)
            }
        }
    }
}

/// Relative perturbation amplitudes per type field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TypeDeltas {
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub r: f64,
    pub c: f64,
}

impl TypeDeltas {
    fn as_array(&self) -> [f64; 6] {
        [self.mu, self.sigma, self.gamma, self.lambda, self.r, self.c]
    }
}

/// Firm `i` (1-based) gets field `f` multiplied by `1 + δ_f·(1 - jitter·U)/i`
/// with `U ~ U[0,1)` drawn from the population stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Heterogeneity {
    pub delta: TypeDeltas,
    pub jitter: f64,
}

impl Heterogeneity {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_none(&self) -> bool {
        self.delta.as_array().iter().all(|d| *d == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Population {
    pub types: Vec<FirmType>,
    pub init: InitialOutput,
    pub limit_type: FirmType,
}

impl Population {
    pub fn symmetric(n: usize, theta: FirmType, init: InitialOutput) -> Self {
        Self { types: vec![theta; n], init, limit_type: theta }
    }

    pub fn n(&self) -> usize {
        self.types.len()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for theta in &self.types {
            report.merge(validate_firm(theta));
        }
        if let Err(e) = self.init.validate() {
            report.warnings.push(e.to_string());
        }
        report
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParamError {
    #[error("population needs at least one firm")]
    NoFirms,
    #[error("limit type is invalid: {0:?}")]
    InvalidLimitType(Vec<Violation>),
    #[error("heterogeneity schedule can violate the type assumptions: {0:?}")]
    UnsafeSchedule(Vec<Violation>),
    #[error("jitter must lie in [0, 1], got {0}")]
    BadJitter(f64),
    #[error("invalid initial output law: {0}")]
    InvalidInit(String),
}

fn apply_factors(theta: &FirmType, f: [f64; 6]) -> FirmType {
    FirmType {
        mu: theta.mu * f[0],
        sigma: theta.sigma * f[1],
        gamma: theta.gamma * f[2],
        lambda: theta.lambda * f[3],
        r: theta.r * f[4],
        c: theta.c * f[5],
    }
}

/// Build `n` firm types converging to `limit_type`.
///
/// The schedule is rejected up front if the worst-case corner of its
/// perturbation box (reached at `i = 1`) breaks any type assumption; all later
/// firms lie inside that box, so every generated type is then valid.
pub fn make_population(
    n: usize,
    limit_type: FirmType,
    heterogeneity: &Heterogeneity,
    init: InitialOutput,
    seed: u64,
) -> Result<Population, ParamError> {
    if n == 0 {
        return Err(ParamError::NoFirms);
    }
    let report = validate_firm(&limit_type);
    if !report.passed() {
        return Err(ParamError::InvalidLimitType(report.violations));
    }
    if !(0.0..=1.0).contains(&heterogeneity.jitter) {
        return Err(ParamError::BadJitter(heterogeneity.jitter));
    }
    init.validate()?;

    let deltas = heterogeneity.delta.as_array();
    let lo: Vec<f64> = deltas.iter().map(|d| (1.0 + d).min(1.0)).collect();
    let hi: Vec<f64> = deltas.iter().map(|d| (1.0 + d).max(1.0)).collect();
    // Corners that stress each constraint: small μ with large σ, large γ and λ, large c.
    let corners = [[lo[0], hi[1], hi[2], hi[3], lo[4], hi[5]], [lo[0], lo[1], lo[2], lo[3], lo[4], lo[5]]];
    let mut bad = Vec::new();
    for corner in corners {
        bad.extend(validate_firm(&apply_factors(&limit_type, corner)).violations);
    }
    if !bad.is_empty() {
        return Err(ParamError::UnsafeSchedule(bad));
    }

    let types = (1..=n)
        .map(|i| {
            if heterogeneity.is_none() {
                return limit_type;
            }
            let mut rng = stream(seed, 0, i as u64, StreamTag::Population);
            let mut factors = [1.0; 6];
            for (f, d) in factors.iter_mut().zip(deltas) {
                let u: f64 = rng.random();
                *f = 1.0 + d * (1.0 - heterogeneity.jitter * u) / i as f64;
            }
            apply_factors(&limit_type, factors)
        })
        .collect();
    Ok(Population { types, init, limit_type })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> FirmType {
        FirmType { mu: 1.0, sigma: 1.0, gamma: 0.5, lambda: 0.5, r: 0.25, c: 0.5 }
    }

    #[test]
    fn validate_firm_examples() {
        assert!(validate_firm(&base()).passed());

        let r = validate_firm(&FirmType { sigma: 1.5, ..base() });
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].to_string().contains("sigma²<2mu"));

        let r = validate_firm(&FirmType { gamma: 2.0, lambda: 0.6, ..base() });
        assert_eq!(r.violations.len(), 1);
        assert!(matches!(r.violations[0], Violation::LossIntensityBound { .. }));
        assert!(r.violations[0].to_string().contains("1−gamma·lambda>0"));
    }

    #[test]
    fn cost_ratio_and_positivity() {
        assert!(!validate_firm(&FirmType { c: 1.0, ..base() }).passed());
        assert!(!validate_firm(&FirmType { r: 0.0, ..base() }).passed());
        assert!(!validate_firm(&FirmType { mu: f64::NAN, ..base() }).passed());
    }

    #[test]
    fn market_warns_on_nonpositive_price() {
        let m = MarketParams { alpha: 1.0, beta: 2.0, rho: 0.5, p0: -0.1, x0: 1.0 };
        let r = validate_market(&m);
        assert!(r.passed());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn population_identity_cases() {
        let init = InitialOutput::point(1.0);
        let p = make_population(1, base(), &Heterogeneity::none(), init, 3).unwrap();
        assert_eq!(p.types, vec![base()]);
        let p = make_population(100, base(), &Heterogeneity::none(), init, 99).unwrap();
        assert!(p.types.iter().all(|t| *t == base()));
    }

    #[test]
    fn population_mu_schedule_converges() {
        let het = Heterogeneity { delta: TypeDeltas { mu: 0.5, ..Default::default() }, jitter: 0.0 };
        let p = make_population(4, base(), &het, InitialOutput::point(1.0), 0).unwrap();
        let gaps: Vec<f64> = p.types.iter().map(|t| (t.mu - base().mu).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]));
        assert!(p.validate().passed());
    }

    #[test]
    fn unsafe_schedule_rejected() {
        // σ² = 1, 2μ = 2; growing σ by 50% breaks the bound at i = 1.
        let het = Heterogeneity { delta: TypeDeltas { sigma: 0.5, ..Default::default() }, jitter: 0.0 };
        let err = make_population(3, base(), &het, InitialOutput::point(1.0), 0).unwrap_err();
        assert!(matches!(err, ParamError::UnsafeSchedule(_)));
    }

    #[test]
    fn population_is_deterministic() {
        let het = Heterogeneity {
            delta: TypeDeltas { mu: 0.2, sigma: -0.1, gamma: 0.1, lambda: 0.1, r: 0.3, c: 0.2 },
            jitter: 0.7,
        };
        let a = make_population(50, base(), &het, InitialOutput::lognormal(1.0, 0.2), 11).unwrap();
        let b = make_population(50, base(), &het, InitialOutput::lognormal(1.0, 0.2), 11).unwrap();
        let c = make_population(50, base(), &het, InitialOutput::lognormal(1.0, 0.2), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.validate().passed());
    }

    #[test]
    fn lognormal_moments() {
        let init = InitialOutput::lognormal(2.0, 0.5);
        let mut rng = stream(1, 0, 0, StreamTag::InitialOutput);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| init.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.01);
        assert!((var - 0.5).abs() < 0.02);
        assert!((init.second_moment() - 4.5).abs() < 1e-15);
    }
}
