//! Roots of monic real cubics `K³ + a K² + b K + c`.
//!
//! One real root comes from the trigonometric or Cardano formula on the
//! depressed cubic and is polished by Newton; the remaining pair comes from
//! deflation to a quadratic, also polished.

use std::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonicCubic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MonicCubic {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn eval(&self, k: f64) -> f64 {
        ((k + self.a) * k + self.b) * k + self.c
    }

    pub fn eval_complex(&self, k: Complex64) -> Complex64 {
        ((k + self.a) * k + self.b) * k + self.c
    }

    pub fn derivative(&self, k: f64) -> f64 {
        (3.0 * k + 2.0 * self.a) * k + self.b
    }

    /// `18abc - 4a³c + a²b² - 4b³ - 27c²`; positive iff three distinct real roots.
    pub fn discriminant(&self) -> f64 {
        let (a, b, c) = (self.a, self.b, self.c);
        18.0 * a * b * c - 4.0 * a.powi(3) * c + a * a * b * b - 4.0 * b.powi(3) - 27.0 * c * c
    }

    fn newton(&self, mut k: f64, steps: usize) -> f64 {
        for _ in 0..steps {
            let d = self.derivative(k);
            if d == 0.0 {
                break;
            }
            let next = k - self.eval(k) / d;
            // Near a double root f' vanishes and a full step can overshoot.
            if !next.is_finite() || self.eval(next).abs() > self.eval(k).abs() {
                break;
            }
            if (next - k).abs() <= f64::EPSILON * k.abs() {
                k = next;
                break;
            }
            k = next;
        }
        k
    }

    fn newton_complex(&self, k: Complex64) -> Complex64 {
        let d = (3.0 * k + 2.0 * self.a) * k + self.b;
        if d.norm() == 0.0 {
            return k;
        }
        let next = k - self.eval_complex(k) / d;
        if next.re.is_finite() && next.im.is_finite() && self.eval_complex(next).norm() <= self.eval_complex(k).norm() {
            next
        } else {
            k
        }
    }

    /// Largest real root.
    pub fn largest_real_root(&self) -> f64 {
        let a3 = self.a / 3.0;
        let p = self.b - self.a * a3;
        let q = 2.0 * a3.powi(3) - self.b * a3 + self.c;
        let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
        let t = if disc > 0.0 {
            let s = disc.sqrt();
            let u = (-q / 2.0 - s.copysign(q)).cbrt();
            if u == 0.0 {
                0.0
            } else {
                u - p / (3.0 * u)
            }
        } else if p == 0.0 {
            0.0
        } else {
            let m = 2.0 * (-p / 3.0).sqrt();
            let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
            let theta = arg.acos() / 3.0;
            (0..3).map(|k| m * (theta - 2.0 * PI * k as f64 / 3.0).cos()).fold(f64::NEG_INFINITY, f64::max)
        };
        self.newton(t - a3, 4)
    }

    /// All three roots: the largest real root and the deflated pair, the pair
    /// ordered by real part (ascending) then imaginary part.
    pub fn roots(&self) -> (f64, [Complex64; 2]) {
        let k3 = self.largest_real_root();
        let e1 = self.a + k3;
        let e0 = if k3.abs() > 1e-8 { -self.c / k3 } else { self.b + k3 * e1 };
        let disc = e1 * e1 - 4.0 * e0;
        let pair = if disc >= 0.0 {
            let s = disc.sqrt();
            let q = -0.5 * (e1 + s.copysign(e1));
            let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q, e0 / q) };
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            [Complex64::new(self.newton(lo, 2), 0.0), Complex64::new(self.newton(hi, 2), 0.0)]
        } else {
            let z = self.newton_complex(Complex64::new(-e1 / 2.0, (-disc).sqrt() / 2.0));
            let z = Complex64::new(z.re, z.im.abs());
            [z.conj(), z]
        };
        (k3, pair)
    }
}
