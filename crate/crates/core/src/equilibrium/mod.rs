//! The limiting mean-field equilibrium.
//!
//! The bounded solution of the mean price ODE lives on the span of the two
//! characteristic roots with negative real part; its coefficients follow from
//! the value `p₀` and the slope `α[β − (1−λγ)x₀ − p₀]` at `t = 0`. Output,
//! control and the value-function coefficients `g`, `h` are then exact
//! [`ExpPoly`] manipulations of the mean price.

mod cubic;
pub mod fixed_point;

pub use cubic::MonicCubic;
pub use fixed_point::{
    apply_l, picard_solve, LOptions, LOutput, PicardOptions, PicardResult, PicardStatus, SampledPath,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exppoly::{ExpPoly, ExpPolyError, Term};
use crate::params::{validate_firm, validate_market, FirmType, MarketParams, Violation};

/// Relative band around `Δ = 0` treated as the repeated-root case.
pub const REPEATED_ROOT_TOL: f64 = 1e-8;

/// Sup-norm agreement required between the repeated-root and split-root
/// branches near the classification boundary.
pub const BRANCH_AGREEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EquilibriumError {
    #[error("invalid parameters: {0:?}")]
    InvalidParams(Vec<Violation>),
    #[error("characteristic cubic has no positive real root (largest root {0})")]
    NoPositiveRoot(f64),
    #[error("characteristic case {case:?} inconsistent with roots {roots:?}")]
    InconsistentRoots { case: CaseTag, roots: Vec<Complex64> },
    #[error("repeated-root and split-root branches disagree by {0:e}")]
    BranchMismatch(f64),
    #[error(transparent)]
    ExpPoly(#[from] ExpPolyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    ThreeReal,
    RepeatedRoot,
    ComplexPair,
}

/// Roots of `K³ + (α−ρ)K² − AK − B`, by case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case")]
pub enum CharRoots {
    /// `k1 < k2 < 0 < k3`.
    ThreeReal { k1: f64, k2: f64, k3: f64 },
    /// `k1 < 0` double, `k2 > 0` simple.
    RepeatedRoot { k1: f64, k2: f64 },
    /// `re ± i·im` with `re < 0`, and `k3 > 0`.
    ComplexPair { re: f64, im: f64, k3: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicData {
    /// `α − ρ`, the quadratic coefficient.
    pub alpha_minus_rho: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub delta: f64,
    pub roots: CharRoots,
    /// The two non-positive roots as computed, before any case projection.
    pub split_roots: [Complex64; 2],
}

impl CharacteristicData {
    pub fn case_tag(&self) -> CaseTag {
        match self.roots {
            CharRoots::ThreeReal { .. } => CaseTag::ThreeReal,
            CharRoots::RepeatedRoot { .. } => CaseTag::RepeatedRoot,
            CharRoots::ComplexPair { .. } => CaseTag::ComplexPair,
        }
    }

    pub fn cubic(&self) -> MonicCubic {
        MonicCubic::new(self.alpha_minus_rho, -self.a, -self.b)
    }

    pub fn positive_root(&self) -> f64 {
        match self.roots {
            CharRoots::ThreeReal { k3, .. } | CharRoots::ComplexPair { k3, .. } => k3,
            CharRoots::RepeatedRoot { k2, .. } => k2,
        }
    }

    /// Every stored root with multiplicity.
    pub fn all_roots(&self) -> Vec<Complex64> {
        let r = |x: f64| Complex64::new(x, 0.0);
        match self.roots {
            CharRoots::ThreeReal { k1, k2, k3 } => vec![r(k1), r(k2), r(k3)],
            CharRoots::RepeatedRoot { k1, k2 } => vec![r(k1), r(k1), r(k2)],
            CharRoots::ComplexPair { re, im, k3 } => vec![Complex64::new(re, im), Complex64::new(re, -im), r(k3)],
        }
    }

    /// `|Δ|` below which the repeated-root case is selected.
    pub fn classification_band(&self) -> f64 {
        REPEATED_ROOT_TOL * 1f64.max(self.b * self.b).max(self.a.powi(3)).max(self.alpha_minus_rho.abs().powi(6))
    }
}

/// `A = μ² + ρμ + αρ`.
pub fn coefficient_a(market: &MarketParams, theta: &FirmType) -> f64 {
    theta.mu * theta.mu + market.rho * theta.mu + market.alpha * market.rho
}

/// `B = α[μ(μ+ρ) + (1−λγ)(1−c)/(2r)]`.
pub fn coefficient_b(market: &MarketParams, theta: &FirmType) -> f64 {
    market.alpha
        * (theta.mu * (theta.mu + market.rho) + (1.0 - theta.lambda * theta.gamma) * (1.0 - theta.c) / (2.0 * theta.r))
}

pub fn characteristic(market: &MarketParams, theta: &FirmType) -> Result<CharacteristicData, EquilibriumError> {
    let a = coefficient_a(market, theta);
    let b = coefficient_b(market, theta);
    let amr = market.alpha - market.rho;
    let cubic = MonicCubic::new(amr, -a, -b);
    let delta = -27.0 * b * b + (18.0 * amr * a + 4.0 * amr.powi(3)) * b + (amr * amr * a * a + 4.0 * a.powi(3));
    let (k3, pair) = cubic.roots();
    if !(k3 > 0.0) {
        return Err(EquilibriumError::NoPositiveRoot(k3));
    }
    let mut data = CharacteristicData {
        alpha_minus_rho: amr,
        a,
        b,
        delta,
        roots: CharRoots::RepeatedRoot { k1: 0.0, k2: k3 },
        split_roots: pair,
    };
    let band = data.classification_band();
    data.roots = if delta.abs() <= band {
        // Double root at the negative critical point of the cubic.
        let k1 = (-amr - (amr * amr + 3.0 * a).sqrt()) / 3.0;
        CharRoots::RepeatedRoot { k1, k2: k3 }
    } else if delta > 0.0 {
        CharRoots::ThreeReal { k1: pair[0].re, k2: pair[1].re, k3 }
    } else {
        CharRoots::ComplexPair { re: pair[1].re, im: pair[1].im.abs(), k3 }
    };
    let consistent = match data.roots {
        CharRoots::ThreeReal { k1, k2, .. } => pair[0].im == 0.0 && k1 < k2 && k2 < 0.0,
        CharRoots::RepeatedRoot { k1, .. } => k1 < 0.0,
        CharRoots::ComplexPair { re, im, .. } => re < 0.0 && im > 0.0,
    };
    if !consistent {
        return Err(EquilibriumError::InconsistentRoots { case: data.case_tag(), roots: data.all_roots() });
    }
    Ok(data)
}

/// `p* = αμβ(μ+ρ)/B`.
pub fn stationary_price(market: &MarketParams, theta: &FirmType) -> f64 {
    market.alpha * theta.mu * market.beta * (theta.mu + market.rho) / coefficient_b(market, theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfgEquilibrium {
    pub market: MarketParams,
    pub theta: FirmType,
    /// Mean price path.
    pub m_p: ExpPoly,
    /// Mean output path.
    pub m_x: ExpPoly,
    /// Equilibrium control of the representative firm.
    pub u_star: ExpPoly,
    pub g: ExpPoly,
    pub h: ExpPoly,
    pub p_star: f64,
    pub characteristic: CharacteristicData,
}

/// Bounded transient `c₁e^{K₁t} + c₂e^{K₂t}` with `c₁+c₂ = d`, `c₁K₁+c₂K₂ = s`.
fn distinct_root_transient(k1: Complex64, k2: Complex64, d: f64, s: f64) -> Result<ExpPoly, ExpPolyError> {
    let c1 = (d * k2 - s) / (k2 - k1);
    let c2 = (s - d * k1) / (k2 - k1);
    ExpPoly::new(vec![Term::new(c1, k1, 0), Term::new(c2, k2, 0)])
}

/// `e^{Kt}[d + (s − Kd)t]`.
fn double_root_transient(k: f64, d: f64, s: f64) -> Result<ExpPoly, ExpPolyError> {
    ExpPoly::new(vec![Term::real(d, k, 0), Term::real(s - k * d, k, 1)])
}

/// Initial slope of the mean price, `α[β − (1−λγ)x₀ − p₀]`.
pub fn initial_price_slope(market: &MarketParams, theta: &FirmType) -> f64 {
    market.alpha * (market.beta - (1.0 - theta.lambda * theta.gamma) * market.x0 - market.p0)
}

/// `(e^z − 1)/z`, accurate for small `|z|`.
fn phi(z: Complex64) -> Complex64 {
    if z.norm() < 1e-3 {
        Complex64::new(1.0, 0.0) + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        (z.exp() - 1.0) / z
    }
}

/// Split-root transient `e^{k₁t}[d + (s − k₁d)·t·φ((k₂−k₁)t)]`, which stays
/// well conditioned as `k₂ → k₁`.
fn split_transient_at(k1: Complex64, k2: Complex64, d: f64, s: f64, t: f64) -> f64 {
    ((k1 * t).exp() * (d + (s - k1 * d) * t * phi((k2 - k1) * t))).re
}

pub fn solve_mfg(market: &MarketParams, theta: &FirmType) -> Result<MfgEquilibrium, EquilibriumError> {
    let mut report = validate_market(market);
    report.merge(validate_firm(theta));
    // The closed form does not involve σ and uses λ, γ only through λγ, so
    // the degenerate limits σ = 0, λ = 0, γ = 0 are admitted here.
    report.violations.retain(
        |v| !matches!(v, Violation::NonPositive { field: "sigma" | "lambda" | "gamma", value } if *value == 0.0),
    );
    if !report.passed() {
        return Err(EquilibriumError::InvalidParams(report.violations));
    }
    let ch = characteristic(market, theta)?;
    let p_star = stationary_price(market, theta);
    let d = market.p0 - p_star;
    let s = initial_price_slope(market, theta);

    let transient = match ch.roots {
        CharRoots::ThreeReal { k1, k2, .. } => {
            distinct_root_transient(Complex64::new(k1, 0.0), Complex64::new(k2, 0.0), d, s)?
        }
        CharRoots::ComplexPair { re, im, .. } => {
            distinct_root_transient(Complex64::new(re, im), Complex64::new(re, -im), d, s)?
        }
        CharRoots::RepeatedRoot { k1, .. } => {
            let double = double_root_transient(k1, d, s)?;
            let [r1, r2] = ch.split_roots;
            let gap = (0..=2000)
                .map(|k| {
                    let t = 50.0 * k as f64 / 2000.0;
                    (double.eval(t) - split_transient_at(r1, r2, d, s, t)).abs()
                })
                .fold(0.0, f64::max);
            if gap > BRANCH_AGREEMENT_TOL {
                return Err(EquilibriumError::BranchMismatch(gap));
            }
            double
        }
    };
    let m_p = transient.add(&ExpPoly::constant(p_star));
    let slack = 1.0 - theta.lambda * theta.gamma;
    let m_x = ExpPoly::constant(market.beta)
        .add(&m_p.scale(-1.0))
        .add(&m_p.derivative().scale(-1.0 / market.alpha))
        .scale(1.0 / slack);
    let u_star = m_x.derivative().add(&m_x.scale(theta.mu));
    let g = m_p.tail_transform(theta.mu + market.rho)?.scale(1.0 - theta.c);
    let h = g.product(&g)?.tail_transform(market.rho)?.scale(1.0 / (4.0 * theta.r));
    Ok(MfgEquilibrium { market: *market, theta: *theta, m_p, m_x, u_star, g, h, p_star, characteristic: ch })
}

/// Largest-coefficient ratio of `Σ pieces` to the largest piece: zero for an
/// exact identity, about machine epsilon for a rounded one.
pub fn relative_residual(pieces: &[ExpPoly]) -> f64 {
    let scale = pieces.iter().map(ExpPoly::max_abs_coeff).fold(0.0, f64::max);
    let sum = pieces.iter().fold(ExpPoly::zero(), |acc, p| acc.add(p));
    if scale == 0.0 {
        return 0.0;
    }
    sum.max_abs_coeff() / scale
}

/// Relative residuals of every defining identity of an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub price_third_order: f64,
    pub price_dynamics: f64,
    pub output_dynamics: f64,
    pub control_dynamics: f64,
    pub g_equation: f64,
    pub h_equation: f64,
    pub control_matches_g: f64,
    pub initial_price: f64,
    pub initial_output: f64,
}

impl ResidualReport {
    pub fn max_identity(&self) -> f64 {
        [
            self.price_third_order,
            self.price_dynamics,
            self.output_dynamics,
            self.control_dynamics,
            self.g_equation,
            self.h_equation,
            self.control_matches_g,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn within(&self, identity_tol: f64, initial_tol: f64) -> bool {
        self.max_identity() <= identity_tol && self.initial_price <= initial_tol && self.initial_output <= initial_tol
    }
}

impl MfgEquilibrium {
    pub fn residuals(&self) -> Result<ResidualReport, ExpPolyError> {
        let (m, th) = (&self.market, &self.theta);
        let slack = 1.0 - th.lambda * th.gamma;
        let p1 = self.m_p.derivative();
        let p2 = p1.derivative();
        let p3 = p2.derivative();
        let forcing = m.alpha * th.mu * m.beta * (th.mu + m.rho);
        let price_third_order = relative_residual(&[
            p3.clone(),
            p2.scale(self.characteristic.alpha_minus_rho),
            p1.scale(-self.characteristic.a),
            self.m_p.scale(-self.characteristic.b),
            ExpPoly::constant(forcing),
        ]);
        let price_dynamics = relative_residual(&[
            p1.clone(),
            ExpPoly::constant(-m.alpha * m.beta),
            self.m_x.scale(m.alpha * slack),
            self.m_p.scale(m.alpha),
        ]);
        let output_dynamics =
            relative_residual(&[self.m_x.derivative(), self.m_x.scale(th.mu), self.u_star.scale(-1.0)]);
        let control_dynamics = relative_residual(&[
            self.u_star.derivative(),
            self.u_star.scale(-(th.mu + m.rho)),
            self.m_p.scale((1.0 - th.c) / (2.0 * th.r)),
        ]);
        let g_equation =
            relative_residual(&[self.g.derivative(), self.g.scale(-(th.mu + m.rho)), self.m_p.scale(1.0 - th.c)]);
        let h_equation = relative_residual(&[
            self.h.derivative(),
            self.h.scale(-m.rho),
            self.g.product(&self.g)?.scale(1.0 / (4.0 * th.r)),
        ]);
        let control_matches_g = relative_residual(&[self.u_star.clone(), self.g.scale(-1.0 / (2.0 * th.r))]);
        Ok(ResidualReport {
            price_third_order,
            price_dynamics,
            output_dynamics,
            control_dynamics,
            g_equation,
            h_equation,
            control_matches_g,
            initial_price: (self.m_p.eval(0.0) - m.p0).abs(),
            initial_output: (self.m_x.eval(0.0) - m.x0).abs(),
        })
    }

    /// Limits `(p*, (β−p*)/(1−λγ), μ(β−p*)/(1−λγ))` as `t → ∞`.
    pub fn stationary_limits(&self) -> (f64, f64, f64) {
        let slack = 1.0 - self.theta.lambda * self.theta.gamma;
        let x = (self.market.beta - self.p_star) / slack;
        (self.p_star, x, self.theta.mu * x)
    }

    /// Optimal reward of the representative firm, `g(0)x₀ + h(0)`.
    pub fn optimal_reward(&self) -> f64 {
        self.g.eval(0.0) * self.market.x0 + self.h.eval(0.0)
    }

    /// Time by which every transient has decayed to `e^{-decades·ln 10}` of its size.
    pub fn settling_time(&self, decades: f64) -> f64 {
        match self.m_p.slowest_decay_rate() {
            Some(rate) => decades * std::f64::consts::LN_10 / rate.abs(),
            None => 0.0,
        }
    }
}

/// `u* = g/(2r)`.
pub fn representative_control(eq: &MfgEquilibrium, theta: &FirmType) -> ExpPoly {
    eq.g.scale(1.0 / (2.0 * theta.r))
}

/// `ḡⁱ = (1−cᵢ)∫_t^∞ e^{-(μᵢ+ρ)(s−t)} m_P(s) ds`.
pub fn decentralized_g(eq: &MfgEquilibrium, theta_i: &FirmType) -> Result<ExpPoly, ExpPolyError> {
    Ok(eq.m_p.tail_transform(theta_i.mu + eq.market.rho)?.scale(1.0 - theta_i.c))
}

/// Decentralized strategy `u^{*,i} = ḡⁱ/(2rᵢ)` of a firm with type `theta_i`.
pub fn decentralized_control(eq: &MfgEquilibrium, theta_i: &FirmType) -> Result<ExpPoly, ExpPolyError> {
    Ok(decentralized_g(eq, theta_i)?.scale(1.0 / (2.0 * theta_i.r)))
}
