use serde::Serialize;
use serde_json::json;
use sticky_mfg::equilibrium::{apply_l, picard_solve, representative_control, LOptions, PicardOptions, SampledPath};
use sticky_mfg::export::{
    fmt_f64, write_equilibrium_csv, write_gap_csv, write_reward_csv, write_trajectories_binary, write_trajectories_csv,
    RewardRow,
};
use sticky_mfg::nashgap::{convergence_check, decentralized_laws, gap_curve, GapConfig};
use sticky_mfg::params::make_population;
use sticky_mfg::reward::{limiting_reward_closed_form, representative_reward, reward_samples_all, summarize};
use sticky_mfg::rng::derive_seed;
use sticky_mfg::simulate::{simulate_market, Engine, Record};
use sticky_mfg::{solve_mfg, ControlLaw, MfgEquilibrium, PathGrid, Population, SimConfig};

use crate::config::{RunConfig, TrajectoryFormat};
use crate::error::CliError;
use crate::output::RunOutput;

/// Salt of the seed used for the representative-firm check in `reward`.
const REPRESENTATIVE_SALT: u64 = 0x7265_7072;

fn solve(cfg: &RunConfig) -> Result<MfgEquilibrium, CliError> {
    Ok(solve_mfg(&cfg.market, &cfg.limit_type)?)
}

fn sim_config(cfg: &RunConfig, eq: &MfgEquilibrium, seed: u64, record: Record) -> SimConfig {
    SimConfig {
        grid: PathGrid::covering(cfg.sim.dt, cfg.sim_horizon(eq)),
        n_paths: cfg.sim.n_paths,
        seed,
        scheme: Default::default(),
        jump_scheme: cfg.sim.jump_scheme,
        record,
    }
}

fn population(cfg: &RunConfig, n: usize, seed: u64) -> Result<Population, CliError> {
    Ok(make_population(n, cfg.limit_type, &cfg.population.heterogeneity, cfg.init(), seed)?)
}

pub fn equilibrium(cfg: &RunConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let eq = solve(cfg)?;
    let grid = PathGrid::covering(cfg.equilibrium.dt, cfg.equilibrium_horizon(&eq));
    let residuals = eq.residuals()?;
    let spec = &cfg.equilibrium;
    let passed = residuals.within(spec.identity_tol, spec.initial_tol);
    let hash = out.hash().to_string();

    out.write("equilibrium.csv", |w| write_equilibrium_csv(w, &eq, &grid, &hash))?;
    let paths = [("m_P", &eq.m_p), ("m_X", &eq.m_x), ("u_star", &eq.u_star), ("g", &eq.g), ("h", &eq.h)];
    out.write("terms.txt", |w| {
        use std::io::Write;
        writeln!(w, "# config_hash: {hash}")?;
        writeln!(w, "# coeff_re coeff_im rate_re rate_im power")?;
        for (name, f) in paths {
            writeln!(w, "[{name}]")?;
            write!(w, "{}", f.to_text())?;
        }
        Ok(())
    })?;

    let ch = &eq.characteristic;
    let (p_inf, x_inf, u_inf) = eq.stationary_limits();
    let summary = json!({
        "characteristic": {
            "alpha_minus_rho": ch.alpha_minus_rho,
            "A": ch.a,
            "B": ch.b,
            "delta": ch.delta,
            "case": ch.case_tag(),
            "roots": ch.roots,
            "p_star": eq.p_star,
        },
        "stationary": { "price": p_inf, "output": x_inf, "control": u_inf },
        "optimal_reward": eq.optimal_reward(),
        "terms": {
            "m_P": eq.m_p, "m_X": eq.m_x, "u_star": eq.u_star, "g": eq.g, "h": eq.h,
        },
        "residuals": residuals,
        "thresholds": { "identity": spec.identity_tol, "initial": spec.initial_tol },
        "passed": passed,
        "grid": grid,
    });
    out.write_json("equilibrium.json", &summary)?;

    println!("case        {:?}", ch.case_tag());
    println!("A, B        {}, {}", ch.a, ch.b);
    println!("delta       {}", ch.delta);
    let roots: Vec<String> = ch.all_roots().iter().map(|r| format!("{r:.12}")).collect();
    println!("roots       {}", roots.join(", "));
    println!("p*          {}", eq.p_star);
    println!("g0 x0 + h0  {}", eq.optimal_reward());
    println!(
        "residual    {:e} (identities), {:e} / {:e} (initial)",
        residuals.max_identity(),
        residuals.initial_price,
        residuals.initial_output
    );
    if !passed {
        return Err(CliError::Numerical(format!(
            "equilibrium residuals exceed thresholds: identities {:e} > {:e} or initial {:e}, {:e} > {:e}",
            residuals.max_identity(),
            spec.identity_tol,
            residuals.initial_price,
            residuals.initial_output,
            spec.initial_tol
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    n: usize,
    n_paths: usize,
    n_flagged: usize,
    grid: PathGrid,
    engine_hash: String,
    /// `sup_k |mean P(t_k) − m_P(t_k)|` over unflagged paths.
    sup_mean_price_gap: f64,
    sup_mean_output_gap: f64,
}

pub fn simulate(cfg: &RunConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let eq = solve(cfg)?;
    let pop = population(cfg, cfg.population.n, cfg.seed)?;
    let laws = decentralized_laws(&eq, &pop)?;
    let sim = sim_config(cfg, &eq, cfg.seed, cfg.simulate.record.clone());
    let mut traj = simulate_market(&pop, &laws, &cfg.market, &sim)?;
    let engine_hash = std::mem::replace(&mut traj.config_hash, out.hash().to_string());

    match cfg.simulate.format {
        TrajectoryFormat::Csv => out.write("trajectories.csv", |w| write_trajectories_csv(w, &traj))?,
        TrajectoryFormat::Binary => out.write("trajectories.bin", |w| write_trajectories_binary(w, &traj))?,
    }

    let kept: Vec<usize> = (0..traj.n_paths).filter(|p| !traj.is_flagged(*p)).collect();
    let len = sim.grid.n_steps + 1;
    let m_p = eq.m_p.sample(sim.grid.dt, sim.grid.n_steps);
    let m_x = eq.m_x.sample(sim.grid.dt, sim.grid.n_steps);
    let sup_gap = |value: &dyn Fn(usize, usize) -> f64, target: &[f64]| {
        (0..len)
            .map(|k| (kept.iter().map(|&p| value(p, k)).sum::<f64>() / kept.len() as f64 - target[k]).abs())
            .fold(0.0, f64::max)
    };
    let summary = SimulateSummary {
        n: pop.n(),
        n_paths: traj.n_paths,
        n_flagged: traj.flagged.len(),
        grid: sim.grid,
        engine_hash,
        sup_mean_price_gap: sup_gap(&|p, k| traj.price(p)[k], &m_p),
        sup_mean_output_gap: sup_gap(&|p, k| traj.mean_output(p)[k], &m_x),
    };
    out.write_json("simulate.json", &summary)?;
    println!(
        "n = {}, {} paths ({} flagged), T = {}",
        summary.n,
        summary.n_paths,
        summary.n_flagged,
        sim.grid.horizon()
    );
    println!("sup |E P - m_P|  {:e}", summary.sup_mean_price_gap);
    println!("sup |E X - m_X|  {:e}", summary.sup_mean_output_gap);
    Ok(())
}

pub fn convergence(cfg: &RunConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let eq = solve(cfg)?;
    let pops = cfg
        .population
        .n_list
        .iter()
        .map(|&n| population(cfg, n, derive_seed(cfg.seed, n as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let sim = sim_config(cfg, &eq, cfg.seed, Record::All);
    let table = convergence_check(&pops, &cfg.market, &sim)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                fmt_f64(r.sup_price_gap),
                fmt_f64(r.sup_output_gap),
                fmt_f64(r.max_second_moment),
                r.seed.to_string(),
                r.n_flagged.to_string(),
            ]
        })
        .collect();
    out.write_csv("convergence.csv", "n,sup_price_gap,sup_output_gap,max_second_moment,seed,n_flagged", &rows)?;
    out.write_json("convergence.json", &table)?;
    for r in &table.rows {
        println!(
            "n = {:>5}  price {:.6e}  output {:.6e}  moment {:.6}",
            r.n, r.sup_price_gap, r.sup_output_gap, r.max_second_moment
        );
    }
    println!("log-log slopes: price {:.3}, output {:.3}", table.price_slope, table.output_slope);
    Ok(())
}

pub fn reward(cfg: &RunConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let eq = solve(cfg)?;
    let pop = population(cfg, cfg.population.n, cfg.seed)?;
    let laws = decentralized_laws(&eq, &pop)?;
    let sim = sim_config(cfg, &eq, cfg.seed, Record::All);
    let rho = cfg.market.rho;
    let engine = Engine::new(&pop, &laws, &cfg.market, &sim)?;
    let samples = reward_samples_all(&engine, &pop.types, rho);
    let horizon = sim.grid.horizon();
    let rows = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(RewardRow {
                n: pop.n(),
                firm: i,
                law_id: laws[i].id(),
                estimate: summarize(s, horizon, rho)?,
                seed: cfg.seed,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let hash = out.hash().to_string();
    out.write("reward.csv", |w| write_reward_csv(w, &rows, &hash))?;

    let star = ControlLaw::exppoly(representative_control(&eq, &cfg.limit_type));
    let closed = limiting_reward_closed_form(&star, &eq, &cfg.limit_type, cfg.market.x0)?;
    let rep_seed = derive_seed(cfg.seed, REPRESENTATIVE_SALT);
    let rep_cfg = SimConfig { seed: rep_seed, ..sim.clone() };
    let rep = representative_reward(&eq, &cfg.limit_type, &star, &cfg.init(), &rep_cfg)?;
    let summary = json!({
        "optimum": eq.optimal_reward(),
        "closed_form": closed,
        "representative": rep,
        "representative_seed": rep_seed,
        "firms": rows,
    });
    out.write_json("reward.json", &summary)?;

    println!("g0 x0 + h0        {}", eq.optimal_reward());
    println!("representative MC {} ± {} (tail ≤ {:e})", rep.mean, rep.std_err, rep.tail_bound);
    for r in rows.iter().take(8) {
        println!("firm {:>3}  {} ± {}", r.firm, r.estimate.mean, r.estimate.std_err);
    }
    if rows.len() > 8 {
        println!("... {} more rows in reward.csv", rows.len() - 8);
    }
    Ok(())
}

pub fn gap(cfg: &RunConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let eq = solve(cfg)?;
    let gap_cfg = GapConfig {
        sim: sim_config(cfg, &eq, cfg.seed, Record::All),
        family: cfg.nashgap.family,
        search: cfg.nashgap.search,
        heterogeneity: cfg.population.heterogeneity,
        init: cfg.init(),
        extra_firms: cfg.nashgap.extra_firms,
    };
    let reports = gap_curve(&cfg.market, &cfg.limit_type, &cfg.population.n_list, &gap_cfg)?;
    let hash = out.hash().to_string();
    out.write("gap.csv", |w| write_gap_csv(w, &reports, &hash))?;
    out.write_json("gap.json", &json!({ "reports": reports }))?;
    for r in &reports {
        println!(
            "n = {:>5}  firm {:>3}  gap {:.6e} ± {:.2e}  ({} evaluations, {:?})",
            r.n, r.firm, r.gap, r.gap_stderr, r.evaluations, r.status
        );
    }
    Ok(())
}

pub fn fixedpoint(cfg: &RunConfig, out: &mut RunOutput) -> Result<(), CliError> {
    let eq = solve(cfg)?;
    let fp = &cfg.fixedpoint;
    let grid = PathGrid::covering(fp.dt, cfg.fixedpoint_horizon(&eq));
    let l_options = LOptions { tail_tol: fp.tail_tol, max_error: None };
    let opts = PicardOptions { max_iter: fp.max_iter, tol: fp.tol, relaxation: fp.relaxation, l_options };
    let result = picard_solve(&cfg.market, &cfg.limit_type, &grid, &opts)?;
    let window = fp.window.min(grid.horizon());
    let closed = |t: f64| eq.m_x.eval(t);
    let distance = result.path.sup_diff_fn(closed, window);
    // How far the operator moves the closed form itself.
    let exact = SampledPath::from_fn(&grid, closed);
    let image = apply_l(&exact, &cfg.market, &cfg.limit_type, &l_options)?;
    let closed_form_residual = image.path.sup_diff_fn(closed, window);

    let trace: Vec<Vec<String>> =
        result.residuals.iter().enumerate().map(|(k, r)| vec![(k + 1).to_string(), fmt_f64(*r)]).collect();
    out.write_csv("picard_trace.csv", "iteration,sup_change", &trace)?;
    let rows: Vec<Vec<String>> = (0..=grid.n_steps)
        .map(|k| {
            let t = grid.time(k);
            let (p, c) = (result.path.values[k], closed(t));
            vec![fmt_f64(t), fmt_f64(p), fmt_f64(c), fmt_f64((p - c).abs())]
        })
        .collect();
    out.write_csv("fixedpoint.csv", "t,m_X_picard,m_X_closed_form,abs_diff", &rows)?;
    let summary = json!({
        "status": result.status,
        "converged": result.converged(),
        "iterations": result.residuals.len(),
        "final_change": result.residuals.last(),
        "error_bound": result.error_bound,
        "window": window,
        "sup_distance_to_closed_form": distance,
        "closed_form_residual": closed_form_residual,
        "grid": grid,
        "options": opts,
    });
    out.write_json("fixedpoint.json", &summary)?;

    for (k, r) in result.residuals.iter().enumerate() {
        println!("iter {:>4}  sup change {:.6e}", k + 1, r);
    }
    println!("quadrature error bound          {:.6e}", result.error_bound);
    println!("sup |m_X - closed form| on [0, {window}]  {distance:.6e}");
    println!("sup |L(closed form) - closed form|  {closed_form_residual:.6e}");
    if !result.converged() {
        return Err(CliError::Numerical(format!(
            "Picard iteration did not converge in {} iterations (last change {:e})",
            fp.max_iter,
            result.residuals.last().copied().unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}
