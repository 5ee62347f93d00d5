//! Cached opponents for repeated unilateral deviations.
//!
//! When every firm other than `i` plays an open-loop law, their outputs do
//! not react to firm `i`. One pass stores, per path and step, the opponents'
//! output sum and jump term together with firm `i`'s own noise; any deviating
//! law for firm `i` is then evaluated by re-running only firm `i` and the
//! price. The noise is the same keyed stream the full engine draws, so the
//! result agrees with [`crate::simulate::simulate_deviation`] up to the order
//! of floating-point summation.

use rayon::prelude::*;

use crate::exppoly::ExpPoly;
use crate::params::{FirmType, MarketParams, Population};
use crate::reward::{running_reward, DiscountedTrapezoid};
use crate::simulate::{
    initial_output, CompiledLaw, ControlLaw, Engine, FirmNoise, PriceMode, SimConfig, SimError, OVERFLOW_LIMIT,
};

pub struct DeviationKernel {
    cfg: SimConfig,
    firm: usize,
    theta: FirmType,
    market: MarketParams,
    n: usize,
    rho: f64,
    len: usize,
    /// `Σ_{j≠i} X^j_k`, path-major.
    background: Vec<f64>,
    /// `Σ_{j≠i} γ_j X^j_k ΔN^j_{k+1}`.
    background_jumps: Vec<f64>,
    z: Vec<f64>,
    dn: Vec<u32>,
    x0: Vec<f64>,
    flagged: Vec<bool>,
    prescribed: Option<Vec<f64>>,
}

impl DeviationKernel {
    pub fn new(
        pop: &Population,
        base_laws: &[ControlLaw],
        i: usize,
        market: &MarketParams,
        cfg: &SimConfig,
    ) -> Result<Self, SimError> {
        Self::build(pop, base_laws, i, market, cfg, PriceMode::Market)
    }

    /// Firm `i` alone against a prescribed price path.
    pub fn with_price(
        theta: &FirmType,
        init: &crate::params::InitialOutput,
        market: &MarketParams,
        cfg: &SimConfig,
        price: &ExpPoly,
    ) -> Result<Self, SimError> {
        let pop = Population::symmetric(1, *theta, *init);
        Self::build(&pop, &[ControlLaw::zero()], 0, market, cfg, PriceMode::Prescribed(price.clone()))
    }

    fn build(
        pop: &Population,
        base_laws: &[ControlLaw],
        i: usize,
        market: &MarketParams,
        cfg: &SimConfig,
        price: PriceMode,
    ) -> Result<Self, SimError> {
        // Full validation of the profile.
        Engine::with_price(pop, base_laws, market, cfg, price.clone())?;
        let n = pop.n();
        if i >= n {
            return Err(SimError::FirmIndex { index: i, n });
        }
        if base_laws.iter().enumerate().any(|(j, l)| j != i && !l.is_open_loop()) {
            return Err(SimError::InvalidLaw("opponents of the deviating firm must play open-loop laws".into()));
        }
        let grid = cfg.grid;
        let (dt, steps, len) = (grid.dt, grid.n_steps, grid.n_steps + 1);
        let sqdt = dt.sqrt();
        let compiled: Vec<CompiledLaw> = base_laws.iter().map(|l| l.compile(&grid)).collect();
        let prescribed = match &price {
            PriceMode::Market => None,
            PriceMode::Prescribed(f) => Some(f.sample(dt, steps)),
        };

        struct PathCache {
            background: Vec<f64>,
            jumps: Vec<f64>,
            z: Vec<f64>,
            dn: Vec<u32>,
            x0: f64,
            flagged: bool,
        }
        let caches: Vec<PathCache> = (0..cfg.n_paths)
            .into_par_iter()
            .map(|path| {
                let mut c = PathCache {
                    background: vec![0.0; len],
                    jumps: vec![0.0; len],
                    z: vec![0.0; steps],
                    dn: vec![0; steps],
                    x0: initial_output(&pop.init, cfg.seed, path, i),
                    flagged: false,
                };
                let mut own = FirmNoise::new(cfg.seed, path, i, pop.types[i].lambda, cfg);
                for k in 0..steps {
                    let (z, dn) = own.draw(k);
                    c.z[k] = z;
                    c.dn[k] = dn;
                }
                for j in (0..n).filter(|&j| j != i) {
                    let theta = &pop.types[j];
                    let mut noise = FirmNoise::new(cfg.seed, path, j, theta.lambda, cfg);
                    let mut x = initial_output(&pop.init, cfg.seed, path, j);
                    for k in 0..=steps {
                        c.background[k] += x;
                        if k == steps {
                            break;
                        }
                        let (z, dn) = noise.draw(k);
                        if dn > 0 {
                            c.jumps[k] += theta.gamma * x * dn as f64;
                        }
                        x += x * (-theta.mu * dt + theta.sigma * sqdt * z) + compiled[j].value(k, 0.0, 0.0) * dt;
                        if !(x.abs() <= OVERFLOW_LIMIT) {
                            c.flagged = true;
                            break;
                        }
                    }
                    if c.flagged {
                        break;
                    }
                }
                c
            })
            .collect();

        let mut kernel = Self {
            cfg: cfg.clone(),
            firm: i,
            theta: pop.types[i],
            market: *market,
            n,
            rho: market.rho,
            len,
            background: Vec::with_capacity(cfg.n_paths * len),
            background_jumps: Vec::with_capacity(cfg.n_paths * len),
            z: Vec::with_capacity(cfg.n_paths * steps),
            dn: Vec::with_capacity(cfg.n_paths * steps),
            x0: Vec::with_capacity(cfg.n_paths),
            flagged: Vec::with_capacity(cfg.n_paths),
            prescribed,
        };
        for c in caches {
            kernel.background.extend(c.background);
            kernel.background_jumps.extend(c.jumps);
            kernel.z.extend(c.z);
            kernel.dn.extend(c.dn);
            kernel.x0.push(c.x0);
            kernel.flagged.push(c.flagged);
        }
        Ok(kernel)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn firm(&self) -> usize {
        self.firm
    }

    /// Per-path `(reward integral, |integrand at T|)` of firm `i` playing
    /// `law`; `None` where the path overflowed.
    pub fn evaluate(&self, law: &ControlLaw) -> Result<Vec<Option<(f64, f64)>>, SimError> {
        law.validate()?;
        let grid = self.cfg.grid;
        let compiled = law.compile(&grid);
        Ok((0..self.cfg.n_paths).into_par_iter().map(|p| self.run(p, &compiled)).collect())
    }

    fn run(&self, path: usize, law: &CompiledLaw) -> Option<(f64, f64)> {
        if self.flagged[path] {
            return None;
        }
        let grid = self.cfg.grid;
        let (dt, steps) = (grid.dt, grid.n_steps);
        let sqdt = dt.sqrt();
        let (th, m) = (&self.theta, &self.market);
        let inv_n = 1.0 / self.n as f64;
        let bg = &self.background[path * self.len..(path + 1) * self.len];
        let bj = &self.background_jumps[path * self.len..(path + 1) * self.len];
        let z = &self.z[path * steps..(path + 1) * steps];
        let dn = &self.dn[path * steps..(path + 1) * steps];
        let mut acc = DiscountedTrapezoid::new(self.rho, dt, steps);
        let mut x = self.x0[path];
        let mut p = match &self.prescribed {
            Some(v) => v[0],
            None => m.p0,
        };
        for k in 0..=steps {
            let u = law.value(k, x, p);
            acc.add(k, running_reward(th, p, x, u));
            if k == steps {
                break;
            }
            let mean = (bg[k] + x) * inv_n;
            let jump = bj[k] + if dn[k] > 0 { th.gamma * x * dn[k] as f64 } else { 0.0 };
            x += x * (-th.mu * dt + th.sigma * sqdt * z[k]) + u * dt;
            p = match &self.prescribed {
                Some(v) => v[k + 1],
                None => p + m.alpha * (m.beta - mean - p) * dt + m.alpha * inv_n * jump,
            };
            if !(x.abs() <= OVERFLOW_LIMIT) {
                return None;
            }
        }
        Some((acc.sum, acc.end.abs()))
    }
}
