//! File formats. Every writer stamps the config hash; floats are printed with
//! 17 significant digits so they round-trip exactly.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::equilibrium::MfgEquilibrium;
use crate::nashgap::GapReport;
use crate::reward::RewardEstimate;
use crate::simulate::{PathGrid, TrajectorySet};

pub const BINARY_MAGIC: &[u8; 8] = b"STKYMFG\0";
pub const BINARY_VERSION: u32 = 1;

/// `x` in scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn hash_line<W: Write>(w: &mut W, hash: &str) -> io::Result<()> {
    writeln!(w, "# config_hash: {hash}")
}

/// Grid table of the equilibrium paths: `t, m_P, m_X, u_star, g, h`.
pub fn write_equilibrium_csv<W: Write>(w: &mut W, eq: &MfgEquilibrium, grid: &PathGrid, hash: &str) -> io::Result<()> {
    hash_line(w, hash)?;
    writeln!(w, "t,m_P,m_X,u_star,g,h")?;
    for k in 0..=grid.n_steps {
        let t = grid.time(k);
        let row = [t, eq.m_p.eval(t), eq.m_x.eval(t), eq.u_star.eval(t), eq.g.eval(t), eq.h.eval(t)];
        writeln!(w, "{}", row.map(fmt_f64).join(","))?;
    }
    Ok(())
}

/// Long format: `path, firm, t, X, P, jumps`.
pub fn write_trajectories_csv<W: Write>(w: &mut W, traj: &TrajectorySet) -> io::Result<()> {
    hash_line(w, &traj.config_hash)?;
    writeln!(w, "path,firm,t,X,P,jumps")?;
    for path in 0..traj.n_paths {
        let price = traj.price(path);
        for (slot, firm) in traj.firms.iter().enumerate() {
            let (x, jumps) = (traj.output(path, slot), traj.jumps(path, slot));
            for k in 0..=traj.grid.n_steps {
                writeln!(
                    w,
                    "{path},{firm},{},{},{},{}",
                    fmt_f64(traj.grid.time(k)),
                    fmt_f64(x[k]),
                    fmt_f64(price[k]),
                    jumps[k]
                )?;
            }
        }
    }
    Ok(())
}

/// Self-describing header of the binary trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryHeader {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub n_firms: usize,
    pub firms: Vec<usize>,
    pub flagged: Vec<usize>,
    /// Blocks in file order with their shapes.
    pub layout: Vec<(String, Vec<usize>)>,
}

/// `magic, u32 header length, JSON header`, then little-endian blocks:
/// outputs `f64[path][firm][step]`, price and mean output `f64[path][step]`,
/// jumps `u32[path][firm][step]`.
pub fn write_trajectories_binary<W: Write>(w: &mut W, traj: &TrajectorySet) -> io::Result<()> {
    let len = traj.grid.n_steps + 1;
    let header = BinaryHeader {
        version: BINARY_VERSION,
        config_hash: traj.config_hash.clone(),
        seed: traj.seed,
        dt: traj.grid.dt,
        n_steps: traj.grid.n_steps,
        n_paths: traj.n_paths,
        n_firms: traj.n_firms,
        firms: traj.firms.clone(),
        flagged: traj.flagged.clone(),
        layout: vec![
            ("outputs_f64".into(), vec![traj.n_paths, traj.firms.len(), len]),
            ("price_f64".into(), vec![traj.n_paths, len]),
            ("mean_output_f64".into(), vec![traj.n_paths, len]),
            ("jumps_u32".into(), vec![traj.n_paths, traj.firms.len(), len]),
        ],
    };
    let json = serde_json::to_vec(&header).map_err(io::Error::other)?;
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let (outputs, jumps, price, mean_output) = traj.raw();
    for block in [outputs, price, mean_output] {
        for v in block {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for j in jumps {
        w.write_all(&j.to_le_bytes())?;
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn read_trajectories_binary<R: Read>(r: &mut R) -> io::Result<TrajectorySet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(bad("not a trajectory dump"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json)?;
    let h: BinaryHeader = serde_json::from_slice(&json).map_err(|e| bad(e.to_string()))?;
    if h.version != BINARY_VERSION {
        return Err(bad(format!("unsupported version {}", h.version)));
    }
    let len = h.n_steps + 1;
    let series = h.n_paths * h.firms.len() * len;
    let read_f64 = |r: &mut R, count: usize| -> io::Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let outputs = read_f64(r, series)?;
    let price = read_f64(r, h.n_paths * len)?;
    let mean_output = read_f64(r, h.n_paths * len)?;
    let mut jumps = Vec::with_capacity(series);
    for _ in 0..series {
        r.read_exact(&mut word)?;
        jumps.push(u32::from_le_bytes(word));
    }
    Ok(TrajectorySet::from_raw(
        PathGrid::new(h.dt, h.n_steps),
        h.n_paths,
        h.n_firms,
        h.firms,
        h.seed,
        h.config_hash,
        h.flagged,
        (outputs, jumps, price, mean_output),
    ))
}

/// One row of a reward report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardRow {
    pub n: usize,
    pub firm: usize,
    pub law_id: String,
    pub estimate: RewardEstimate,
    pub seed: u64,
}

pub fn write_reward_csv<W: Write>(w: &mut W, rows: &[RewardRow], hash: &str) -> io::Result<()> {
    hash_line(w, hash)?;
    writeln!(w, "n,firm,law_id,mean,std_err,T,tail_bound,seed")?;
    for r in rows {
        let e = &r.estimate;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.n,
            r.firm,
            r.law_id,
            fmt_f64(e.mean),
            fmt_f64(e.std_err),
            fmt_f64(e.horizon),
            fmt_f64(e.tail_bound),
            r.seed
        )?;
    }
    Ok(())
}

pub fn write_gap_csv<W: Write>(w: &mut W, reports: &[GapReport], hash: &str) -> io::Result<()> {
    hash_line(w, hash)?;
    writeln!(w, "n,i,family,budget,baseline,best,gap,gap_stderr,seed")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            r.firm,
            r.family,
            r.budget,
            fmt_f64(r.baseline.mean),
            fmt_f64(r.best.mean),
            fmt_f64(r.gap),
            fmt_f64(r.gap_stderr),
            r.seed
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{FirmType, InitialOutput, MarketParams, Population};
    use crate::simulate::{simulate_market, ControlLaw, SimConfig};

    fn traj() -> TrajectorySet {
        let th = FirmType { mu: 1.0, sigma: 0.5, gamma: 0.5, lambda: 2.0, r: 0.5, c: 0.4 };
        let pop = Population::symmetric(2, th, InitialOutput::lognormal(1.0, 0.1));
        let m = MarketParams { alpha: 0.8, beta: 2.0, rho: 0.5, p0: 1.2, x0: 1.0 };
        let cfg = SimConfig::new(PathGrid::new(0.1, 10), 3, 4);
        simulate_market(&pop, &[ControlLaw::zero(), ControlLaw::Constant { value: 0.2 }], &m, &cfg).unwrap()
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn binary_round_trip() {
        let t = traj();
        let mut buf = Vec::new();
        write_trajectories_binary(&mut buf, &t).unwrap();
        let back = read_trajectories_binary(&mut buf.as_slice()).unwrap();
        assert!(back.bit_identical(&t));
        assert_eq!(back.config_hash, t.config_hash);
        buf[0] = b'X';
        assert!(read_trajectories_binary(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn csv_shape() {
        let t = traj();
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# config_hash: {}", t.config_hash));
        assert_eq!(lines[1], "path,firm,t,X,P,jumps");
        assert_eq!(lines.len(), 2 + 3 * 2 * 11);
        assert!(lines[2].starts_with("0,0,0.0000000000000000e0,"));
    }
}
