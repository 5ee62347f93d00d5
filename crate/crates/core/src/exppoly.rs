//! Exponential-polynomial functions.
//!
//! An [`ExpPoly`] represents `f(t) = Re Σ_j c_j · t^{m_j} · e^{K_j t}` with complex
//! coefficients `c_j` and rates `K_j`. The class is closed under addition,
//! products, differentiation and the discounted tail integral
//! `t ↦ ∫_t^∞ e^{-κ(s-t)} f(s) ds`, which is everything the closed-form
//! equilibrium needs. Oscillatory modes are carried as conjugate pairs, so the
//! real parts of the evaluations are the function values and the imaginary
//! parts cancel.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rates closer than this (absolute, in the complex plane) are merged.
pub const RATE_MERGE_TOL: f64 = 1e-12;

/// Highest power of `t` a term may carry.
pub const MAX_POWER: u32 = 4;

/// Relative size of a tolerated imaginary residual in [`ExpPoly::eval_checked`].
pub const IMAG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpPolyError {
    #[error("term power {power} exceeds the cap of {MAX_POWER}")]
    PowerOverflow { power: u32 },
    #[error("tail integral diverges: kappa = {kappa} but a term has Re(rate) = {rate_re}")]
    Divergent { kappa: f64, rate_re: f64 },
    #[error("evaluation at t = {t} left imaginary residual {residual:e} (scale {scale:e})")]
    ImaginaryResidual { t: f64, residual: f64, scale: f64 },
}

/// One term `coeff · t^power · e^{rate·t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: Complex64,
    pub rate: Complex64,
    pub power: u32,
}

impl Term {
    pub fn new(coeff: Complex64, rate: Complex64, power: u32) -> Self {
        Self { coeff, rate, power }
    }

    pub fn real(coeff: f64, rate: f64, power: u32) -> Self {
        Self::new(Complex64::new(coeff, 0.0), Complex64::new(rate, 0.0), power)
    }

    fn eval(&self, t: f64) -> Complex64 {
        self.coeff * t.powi(self.power as i32) * (self.rate * t).exp()
    }
}

/// A normalized exponential-polynomial: no two terms share `(rate, power)` and
/// no coefficient is exactly zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Term>", into = "Vec<Term>")]
pub struct ExpPoly {
    terms: Vec<Term>,
}

impl TryFrom<Vec<Term>> for ExpPoly {
    type Error = ExpPolyError;

    fn try_from(terms: Vec<Term>) -> Result<Self, Self::Error> {
        Self::new(terms)
    }
}

impl From<ExpPoly> for Vec<Term> {
    fn from(f: ExpPoly) -> Self {
        f.terms
    }
}

impl ExpPoly {
    pub fn new(terms: Vec<Term>) -> Result<Self, ExpPolyError> {
        if let Some(t) = terms.iter().find(|t| t.power > MAX_POWER) {
            return Err(ExpPolyError::PowerOverflow { power: t.power });
        }
        Ok(Self::normalized(terms))
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        Self::normalized(vec![Term::real(value, 0.0, 0)])
    }

    /// `coeff · e^{rate·t}` with real coefficient and rate.
    pub fn exponential(coeff: f64, rate: f64) -> Self {
        Self::normalized(vec![Term::real(coeff, rate, 0)])
    }

    /// A conjugate pair `c e^{Kt} + conj(c) e^{conj(K)t}`; real-valued by construction.
    pub fn conjugate_pair(coeff: Complex64, rate: Complex64, power: u32) -> Result<Self, ExpPolyError> {
        Self::new(vec![Term::new(coeff, rate, power), Term::new(coeff.conj(), rate.conj(), power)])
    }

    fn normalized(terms: Vec<Term>) -> Self {
        let mut merged: Vec<Term> = Vec::with_capacity(terms.len());
        for term in terms {
            match merged.iter_mut().find(|m| m.power == term.power && (m.rate - term.rate).norm() <= RATE_MERGE_TOL) {
                Some(m) => m.coeff += term.coeff,
                None => merged.push(term),
            }
        }
        merged.retain(|t| t.coeff != Complex64::new(0.0, 0.0));
        merged.sort_by(|a, b| {
            a.power.cmp(&b.power).then(a.rate.re.total_cmp(&b.rate.re)).then(a.rate.im.total_cmp(&b.rate.im))
        });
        Self { terms: merged }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn eval_complex(&self, t: f64) -> (Complex64, f64) {
        let mut sum = Complex64::new(0.0, 0.0);
        let mut scale = 0.0;
        for term in &self.terms {
            let v = term.eval(t);
            sum += v;
            scale += v.norm();
        }
        (sum, scale)
    }

    /// Real part of the term sum at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        self.eval_complex(t).0.re
    }

    /// [`eval`](Self::eval), failing if the imaginary parts do not cancel.
    pub fn eval_checked(&self, t: f64) -> Result<f64, ExpPolyError> {
        let (sum, scale) = self.eval_complex(t);
        if sum.im.abs() > IMAG_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(ExpPolyError::ImaginaryResidual { t, residual: sum.im.abs(), scale });
        }
        Ok(sum.re)
    }

    /// Evaluate on `t_k = k·dt`, `k = 0..=n_steps`.
    pub fn sample(&self, dt: f64, n_steps: usize) -> Vec<f64> {
        (0..=n_steps).map(|k| self.eval(k as f64 * dt)).collect()
    }

    pub fn derivative(&self) -> Self {
        let mut out = Vec::with_capacity(2 * self.terms.len());
        for t in &self.terms {
            if t.power > 0 {
                out.push(Term::new(t.coeff * t.power as f64, t.rate, t.power - 1));
            }
            out.push(Term::new(t.coeff * t.rate, t.rate, t.power));
        }
        Self::normalized(out)
    }

    /// Closed form of `t ↦ ∫_t^∞ e^{-κ(s-t)} f(s) ds`.
    ///
    /// For a term `c s^m e^{Ks}` with `a = κ - K`, the integral equals
    /// `c e^{Kt} Σ_{j=0..m} m!/(m-j)! · t^{m-j} / a^{j+1}`.
    pub fn tail_transform(&self, kappa: f64) -> Result<Self, ExpPolyError> {
        let mut out = Vec::new();
        for t in &self.terms {
            let a = Complex64::new(kappa, 0.0) - t.rate;
            if a.re <= 0.0 {
                return Err(ExpPolyError::Divergent { kappa, rate_re: t.rate.re });
            }
            let mut falling = 1.0;
            let mut a_pow = a;
            for j in 0..=t.power {
                if j > 0 {
                    falling *= (t.power - j + 1) as f64;
                    a_pow *= a;
                }
                out.push(Term::new(t.coeff * falling / a_pow, t.rate, t.power - j));
            }
        }
        Ok(Self::normalized(out))
    }

    pub fn product(&self, other: &Self) -> Result<Self, ExpPolyError> {
        let mut out = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let power = a.power + b.power;
                if power > MAX_POWER {
                    return Err(ExpPolyError::PowerOverflow { power });
                }
                out.push(Term::new(a.coeff * b.coeff, a.rate + b.rate, power));
            }
        }
        Ok(Self::normalized(out))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::normalized(self.terms.iter().chain(other.terms.iter()).copied().collect())
    }

    pub fn scale(&self, a: f64) -> Self {
        Self::normalized(self.terms.iter().map(|t| Term::new(t.coeff * a, t.rate, t.power)).collect())
    }

    /// Multiply by `e^{shift·t}`.
    pub fn shift_rate(&self, shift: f64) -> Self {
        Self::normalized(self.terms.iter().map(|t| Term::new(t.coeff, t.rate + shift, t.power)).collect())
    }

    /// An antiderivative `F` with `F' = f`, constant of integration dropped.
    pub fn antiderivative(&self) -> Result<Self, ExpPolyError> {
        let mut out = Vec::new();
        for t in &self.terms {
            if t.rate.norm() <= RATE_MERGE_TOL {
                let power = t.power + 1;
                if power > MAX_POWER {
                    return Err(ExpPolyError::PowerOverflow { power });
                }
                out.push(Term::new(t.coeff / power as f64, t.rate, power));
                continue;
            }
            // ∫ s^m e^{Ks} = e^{Ks} Σ_j (-1)^j m!/(m-j)! s^{m-j} / K^{j+1}
            let mut falling = 1.0;
            let mut k_pow = t.rate;
            for j in 0..=t.power {
                if j > 0 {
                    falling *= (t.power - j + 1) as f64;
                    k_pow *= t.rate;
                }
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                out.push(Term::new(t.coeff * (sign * falling) / k_pow, t.rate, t.power - j));
            }
        }
        Ok(Self::normalized(out))
    }

    /// `∫_a^b e^{-ρs} f(s) ds`, exact; `b = ∞` is allowed when the integral converges.
    pub fn discounted_integral(&self, a: f64, b: f64, rho: f64) -> Result<f64, ExpPolyError> {
        if b.is_infinite() {
            let tail = self.tail_transform(rho)?;
            return Ok((-rho * a).exp() * tail.eval(a));
        }
        let anti = self.shift_rate(-rho).antiderivative()?;
        Ok(anti.eval(b) - anti.eval(a))
    }

    /// Bounded on `[0, ∞)`: every rate has non-positive real part, and rates on
    /// the imaginary axis carry no power of `t`.
    pub fn is_bounded(&self) -> bool {
        self.terms.iter().all(|t| t.rate.re < -RATE_MERGE_TOL || (t.rate.re.abs() <= RATE_MERGE_TOL && t.power == 0))
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff.norm()).fold(0.0, f64::max)
    }

    /// True when every coefficient is at most `tol` in modulus.
    pub fn is_negligible(&self, tol: f64) -> bool {
        self.terms.iter().all(|t| t.coeff.norm() <= tol)
    }

    /// Largest real part among decaying rates (the slowest transient), if any.
    pub fn slowest_decay_rate(&self) -> Option<f64> {
        self.terms.iter().map(|t| t.rate.re).filter(|re| *re < -RATE_MERGE_TOL).max_by(f64::total_cmp)
    }

    /// Sum of the constant (rate zero, power zero) terms: the limit at infinity
    /// of a bounded function whose other modes decay.
    pub fn constant_part(&self) -> f64 {
        self.terms.iter().filter(|t| t.power == 0 && t.rate.norm() <= RATE_MERGE_TOL).map(|t| t.coeff.re).sum()
    }

    /// Plain-text form: one `coeff_re coeff_im rate_re rate_im power` line per term.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.terms {
            s.push_str(&format!(
                "{:.16e} {:.16e} {:.16e} {:.16e} {}\n",
                t.coeff.re, t.coeff.im, t.rate.re, t.rate.im, t.power
            ));
        }
        s
    }
}

impl fmt::Display for ExpPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, t) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({})", t.coeff)?;
            if t.power > 0 {
                write!(f, "·t^{}", t.power)?;
            }
            if t.rate.norm() > 0.0 {
                write!(f, "·e^({}·t)", t.rate)?;
            }
        }
        Ok(())
    }
}

impl Add for &ExpPoly {
    type Output = ExpPoly;
    fn add(self, rhs: &ExpPoly) -> ExpPoly {
        ExpPoly::add(self, rhs)
    }
}

impl Sub for &ExpPoly {
    type Output = ExpPoly;
    fn sub(self, rhs: &ExpPoly) -> ExpPoly {
        ExpPoly::add(self, &rhs.scale(-1.0))
    }
}

impl Neg for &ExpPoly {
    type Output = ExpPoly;
    fn neg(self) -> ExpPoly {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &ExpPoly {
    type Output = ExpPoly;
    fn mul(self, rhs: f64) -> ExpPoly {
        self.scale(rhs)
    }
}
