//! Shared generators and independent oracles for the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sticky_mfg::equilibrium::CaseTag;
use sticky_mfg::{ExpPoly, FirmType, MarketParams, Term};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `Δ` of `K³ + aK² − AK − B` seen as a quadratic in `B`.
fn delta(amr: f64, a: f64, b: f64) -> f64 {
    -27.0 * b * b + (18.0 * amr * a + 4.0 * amr.powi(3)) * b + amr * amr * a * a + 4.0 * a.powi(3)
}

/// Positive root of `Δ(B) = 0`.
fn repeated_root_b(amr: f64, a: f64) -> f64 {
    let (qa, qb, qc) = (-27.0, 18.0 * amr * a + 4.0 * amr.powi(3), amr * amr * a * a + 4.0 * a.powi(3));
    let disc = (qb * qb - 4.0 * qa * qc).sqrt();
    // qa < 0 and qc > 0: the roots have opposite signs.
    let q = -0.5 * (qb + qb.signum() * disc);
    let (r1, r2) = (q / qa, qc / q);
    r1.max(r2)
}

/// A valid parameter set whose characteristic cubic falls in `case`.
///
/// Everything but `r` is drawn directly; `r` is then solved from a target
/// `B` on the correct side of (or exactly at) the repeated-root value.
pub fn random_params<R: Rng>(rng: &mut R, case: CaseTag) -> (MarketParams, FirmType) {
    loop {
        let alpha = rng.random_range(0.3..2.0);
        let rho = rng.random_range(0.1..1.0);
        let mu: f64 = rng.random_range(0.3..2.0);
        let sigma = rng.random_range(0.05..0.8) * (2.0 * mu).sqrt();
        let gamma: f64 = rng.random_range(0.1..0.9);
        let lambda = rng.random_range(0.1..0.9 / gamma).min(1.5f64);
        let c = rng.random_range(0.1..0.8);
        let market = MarketParams {
            alpha,
            beta: rng.random_range(1.0..4.0),
            rho,
            p0: rng.random_range(0.2..3.0),
            x0: rng.random_range(0.2..2.0),
        };
        let amr = alpha - rho;
        let a = mu * mu + rho * mu + alpha * rho;
        let b_min = alpha * mu * (mu + rho);
        let b_rep = repeated_root_b(amr, a);
        let b = match case {
            CaseTag::ThreeReal if b_rep > b_min => b_min + rng.random_range(0.05..0.9) * (b_rep - b_min),
            CaseTag::RepeatedRoot if b_rep > b_min * 1.01 => b_rep,
            CaseTag::ComplexPair => b_rep.max(b_min) * rng.random_range(1.2..4.0),
            _ => continue,
        };
        let slack = 1.0 - gamma * lambda;
        let r = slack * (1.0 - c) / (2.0 * (b / alpha - mu * (mu + rho)));
        debug_assert!(matches!(case, CaseTag::RepeatedRoot) || delta(amr, a, b).signum() != 0.0);
        return (market, FirmType { mu, sigma, gamma, lambda, r, c });
    }
}

/// Largest real root of the characteristic cubic by Newton from above.
pub fn positive_root(amr: f64, a: f64, b: f64) -> f64 {
    let f = |k: f64| ((k + amr) * k - a) * k - b;
    let df = |k: f64| (3.0 * k + 2.0 * amr) * k - a;
    let mut k = 1.0 + amr.abs().max(a).max(b);
    for _ in 0..200 {
        let step = f(k) / df(k);
        k -= step;
        if step.abs() <= 1e-15 * k.abs() {
            break;
        }
    }
    k
}

/// Mean price by RK4 on the third-order price ODE, with the unstable mode
/// projected out after every step. Returns samples on `[0, horizon]`.
pub fn integrate_price(market: &MarketParams, theta: &FirmType, dt: f64, horizon: f64) -> Vec<f64> {
    let (al, rho, mu) = (market.alpha, market.rho, theta.mu);
    let amr = al - rho;
    let a = mu * mu + rho * mu + al * rho;
    let b = al * (mu * (mu + rho) + (1.0 - theta.lambda * theta.gamma) * (1.0 - theta.c) / (2.0 * theta.r));
    let forcing = al * mu * market.beta * (mu + rho);
    let p_star = forcing / b;
    let k3 = positive_root(amr, a, b);
    // Left eigenvector of the companion matrix for K3.
    let w0 = b / k3;
    let w1 = (w0 + a) / k3;
    let w = [w0, w1, 1.0];
    let v = [1.0, k3, k3 * k3];
    let wv = w[0] * v[0] + w[1] * v[1] + w[2] * v[2];
    let project = |y: &mut [f64; 3]| {
        let c = (w[0] * y[0] + w[1] * y[1] + w[2] * y[2]) / wv;
        for j in 0..3 {
            y[j] -= c * v[j];
        }
    };
    let rhs = |y: &[f64; 3]| [y[1], y[2], b * y[0] + a * y[1] - amr * y[2]];
    let slope = al * (market.beta - (1.0 - theta.lambda * theta.gamma) * market.x0 - market.p0);
    let mut y = [market.p0 - p_star, slope, 0.0];
    y[2] = -(w0 * y[0] + w1 * y[1]);
    let steps = (horizon / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(p_star + y[0]);
    let axpy = |y: &[f64; 3], k: &[f64; 3], h: f64| [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]];
    for _ in 0..steps {
        let k1 = rhs(&y);
        let k2 = rhs(&axpy(&y, &k1, dt / 2.0));
        let k3 = rhs(&axpy(&y, &k2, dt / 2.0));
        let k4 = rhs(&axpy(&y, &k3, dt));
        for j in 0..3 {
            y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        project(&mut y);
        out.push(p_star + y[0]);
    }
    out
}

/// A bounded exponential polynomial with one to four components.
pub fn random_bounded_exppoly<R: Rng>(rng: &mut R) -> ExpPoly {
    let n = rng.random_range(1..=4);
    let mut f = ExpPoly::zero();
    for _ in 0..n {
        let part = match rng.random_range(0..4) {
            0 => ExpPoly::constant(rng.random_range(-2.0..2.0)),
            1 | 2 => ExpPoly::new(vec![Term::real(
                rng.random_range(-2.0..2.0),
                rng.random_range(-3.0..-0.2),
                rng.random_range(0..=2),
            )])
            .unwrap(),
            _ => ExpPoly::conjugate_pair(
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                Complex64::new(rng.random_range(-3.0..-0.2), rng.random_range(0.5..4.0)),
                rng.random_range(0..=1),
            )
            .unwrap(),
        };
        f = f.add(&part);
    }
    f
}

/// `∫_t^∞ e^{−κ(s−t)} f(s) ds` by adaptive double-exponential quadrature on
/// unit panels, truncated once `e^{−κu}` and the decay of `f` make the rest
/// negligible. Returns `(value, ∫|integrand|)`.
pub fn tail_by_quadrature(f: &ExpPoly, kappa: f64, t: f64) -> (f64, f64) {
    let decay = f.terms().iter().map(|term| kappa - term.rate.re).fold(f64::INFINITY, f64::min);
    // Panel width 0.5, until the envelope is far below 1e-16 of the head.
    let length = 45.0 / decay + 10.0;
    let panels = (length / 0.5).ceil() as usize;
    let (mut value, mut mass) = (0.0, 0.0);
    for j in 0..panels {
        let (a, b) = (0.5 * j as f64, 0.5 * (j + 1) as f64);
        let g = |u: f64| (-kappa * u).exp() * f.eval(t + u);
        value += quadrature::double_exponential::integrate(g, a, b, 1e-15).integral;
        mass += quadrature::double_exponential::integrate(|u| g(u).abs(), a, b, 1e-14).integral;
    }
    (value, mass)
}
