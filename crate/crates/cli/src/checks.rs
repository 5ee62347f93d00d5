//! Every validation a run depends on, gathered into one report.

use std::path::Path;

use sticky_mfg::params::{make_population, validate_firm, validate_market, ValidationReport};
use sticky_mfg::simulate::Record;
use sticky_mfg::solve_mfg;

use crate::config::RunConfig;

#[derive(Debug, Default)]
pub struct Findings {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl Findings {
    fn absorb(&mut self, scope: &str, report: ValidationReport) {
        self.errors.extend(report.violations.iter().map(|v| format!("{scope}: {v}")));
        self.warnings.extend(report.warnings.iter().map(|w| format!("{scope}: {w}")));
    }

    fn require(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.errors.push(msg());
        }
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn check_horizon(f: &mut Findings, scope: &str, h: Option<f64>) {
    if let Some(h) = h {
        f.require(positive(h), || format!("{scope}.horizon must be positive and finite ({h})"));
    }
}

fn check_output_dir(f: &mut Findings, dir: &Path) {
    if dir.exists() {
        if !dir.is_dir() {
            f.errors.push(format!("output_dir {} is not a directory", dir.display()));
            return;
        }
        let probe = dir.join(".sticky-mfg-write-probe");
        match std::fs::write(&probe, b"") {
            Ok(()) => {
                let _ = std::fs::remove_file(&probe);
            }
            Err(e) => f.errors.push(format!("output_dir {} is not writable: {e}", dir.display())),
        }
        return;
    }
    // Walk up to the first existing ancestor; it must be a writable directory.
    let mut parent = dir.parent();
    while let Some(p) = parent {
        let p = if p.as_os_str().is_empty() { Path::new(".") } else { p };
        if p.exists() {
            match std::fs::metadata(p) {
                Ok(m) if m.is_dir() && !m.permissions().readonly() => {}
                _ => f.errors.push(format!("output_dir {} cannot be created under {}", dir.display(), p.display())),
            }
            return;
        }
        parent = p.parent();
    }
}

pub fn check(cfg: &RunConfig) -> Findings {
    let mut f = Findings::default();
    f.absorb("market", validate_market(&cfg.market));
    let limit = validate_firm(&cfg.limit_type);
    let limit_ok = limit.passed();
    f.absorb("limit_type", limit);

    let init = cfg.init();
    if let Err(e) = init.validate() {
        f.errors.push(format!("population.init: {e}"));
    } else if (init.mean - cfg.market.x0).abs() > 1e-12 * cfg.market.x0.abs().max(1.0) {
        f.warnings.push(format!(
            "population.init: mean {} differs from market.x0 {}; the mean-field limit starts at x0",
            init.mean, cfg.market.x0
        ));
    }

    let pop = &cfg.population;
    f.require(pop.n >= 1, || "population.n must be at least 1".into());
    f.require(!pop.n_list.is_empty() && pop.n_list[0] >= 1 && pop.n_list.windows(2).all(|w| w[0] < w[1]), || {
        format!("population.n_list must be non-empty and strictly ascending ({:?})", pop.n_list)
    });
    if limit_ok {
        // The schedule is checked at its worst-case corner, so one size suffices.
        if let Err(e) = make_population(1, cfg.limit_type, &pop.heterogeneity, init, cfg.seed) {
            f.errors.push(format!("population.heterogeneity: {e}"));
        }
    }

    let sim = &cfg.sim;
    f.require(positive(sim.dt), || format!("sim.dt must be positive and finite ({})", sim.dt));
    f.require(sim.n_paths >= 1, || "sim.n_paths must be at least 1".into());
    check_horizon(&mut f, "sim", sim.horizon);
    if positive(sim.dt) && cfg.limit_type.lambda * sim.dt > 0.1 {
        f.warnings.push(format!(
            "sim.dt: lambda·dt = {} is large; multiple jumps per step are likely",
            cfg.limit_type.lambda * sim.dt
        ));
    }
    if let Record::Firms(ids) = &cfg.simulate.record {
        f.require(ids.iter().all(|&i| i < pop.n), || {
            format!("simulate.record: firm ids {ids:?} out of range for n = {}", pop.n)
        });
    }

    let eq = &cfg.equilibrium;
    f.require(positive(eq.dt), || format!("equilibrium.dt must be positive and finite ({})", eq.dt));
    check_horizon(&mut f, "equilibrium", eq.horizon);
    f.require(positive(eq.identity_tol) && positive(eq.initial_tol), || {
        "equilibrium tolerances must be positive".into()
    });

    let gap = &cfg.nashgap;
    let dim = gap.family.dimension();
    f.require(dim >= 1, || "nashgap.family has no parameters".into());
    f.require(gap.search.budget > dim, || {
        format!("nashgap.search.budget {} is below the family dimension + 1 = {}", gap.search.budget, dim + 1)
    });

    let fp = &cfg.fixedpoint;
    f.require(positive(fp.dt), || format!("fixedpoint.dt must be positive and finite ({})", fp.dt));
    check_horizon(&mut f, "fixedpoint", fp.horizon);
    f.require(positive(fp.window), || format!("fixedpoint.window must be positive ({})", fp.window));
    f.require(fp.max_iter >= 1, || "fixedpoint.max_iter must be at least 1".into());
    f.require(positive(fp.tol) && positive(fp.tail_tol), || "fixedpoint tolerances must be positive".into());
    f.require(fp.relaxation > 0.0 && fp.relaxation <= 1.0, || {
        format!("fixedpoint.relaxation must lie in (0, 1] ({})", fp.relaxation)
    });

    if f.errors.is_empty() {
        if let Err(e) = solve_mfg(&cfg.market, &cfg.limit_type) {
            f.errors.push(format!("equilibrium: {e}"));
        }
    }
    check_output_dir(&mut f, &cfg.output_dir);
    f
}
