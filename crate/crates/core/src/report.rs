//! Persistence: trajectory CSVs, state tables, manifests and analysis
//! reports. Floats are written in exponent form, which round-trips and
//! keeps repeated runs bit-identical.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::analysis::{CurveAnalysis, StructureReport};
use crate::config::RunConfig;
use crate::discretization::{DiscreteSpace, LoadingProgram, State};
use crate::error::CoreError;
use crate::reparam::{self, ParamTrajectory};
use crate::solver::ParamTriple;
use crate::tensor::Dev2;

pub const TRAJECTORY_COLUMNS: &[&str] = &[
    "idx",
    "s",
    "t",
    "tprime",
    "speed",
    "norm_uprime_h1d",
    "norm_zprime_hm",
    "norm_zprime_l2",
    "norm_pprime_l2",
    "energy0",
    "energy_mu",
    "dt_energy",
    "su",
    "wp",
    "dtilde",
    "wp_mu",
    "dstar0",
    "dstar_nu_mu",
    "calr",
    "calr_violation",
    "calh",
    "m0_cl",
    "m0_cl_viol",
    "m0_cr",
    "m0_cr_viol",
    "m0_mu0",
    "m0_mu0_viol",
    "m0_munu",
    "m0_munu_viol",
    "lambda_z",
    "lambda_up",
    "lambda_tilde",
    "lambda_fit",
    "switch_tz",
    "switch_tup",
    "switch_upz",
    "chain_rate",
    "chain_expansion",
    "hill",
    "regime",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub kind: String,
    pub params: ParamTriple,
    pub arclength: f64,
    pub n_samples: usize,
    pub columns: Vec<String>,
    pub trajectory_file: String,
    pub states_file: String,
    pub config_digest: String,
    pub seed: u64,
    pub config: RunConfig,
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

fn regime_name(r: crate::contact::Regime) -> &'static str {
    match r {
        crate::contact::Regime::RateIndependent => "rate-independent",
        crate::contact::Regime::ViscousZ => "viscous-z",
        crate::contact::Regime::ViscousUp => "viscous-up",
        crate::contact::Regime::Static => "static",
    }
}

/// Writes `<name>.csv`, `<name>_states.csv` and `<name>_manifest.json`
/// under `dir`; returns the manifest path.
pub fn write_trajectory(
    dir: &Path,
    name: &str,
    space: &DiscreteSpace,
    cfg: &RunConfig,
    traj: &ParamTrajectory,
    analysis: &CurveAnalysis,
) -> Result<PathBuf, CoreError> {
    fs::create_dir_all(dir)?;
    let traj_file = format!("{name}.csv");
    let states_file = format!("{name}_states.csv");

    let mut w = fs::File::create(dir.join(&traj_file))?;
    writeln!(w, "{}", TRAJECTORY_COLUMNS.join(","))?;
    for (i, s) in analysis.samples.iter().enumerate() {
        let r = &traj.rates[i];
        let row = [
            i.to_string(),
            fmt(traj.s[i]),
            fmt(traj.t[i]),
            fmt(r.tprime),
            fmt(traj.speed(space, i)),
            fmt(space.norm_h1d(&r.udot)),
            fmt(space.norm_hm(&r.zdot)),
            fmt(s.inputs.znorm),
            fmt(space.norm_l2_p(&r.pdot)),
            fmt(s.energy0),
            fmt(s.energy_mu),
            fmt(s.dt_energy),
            fmt(s.inputs.su),
            fmt(s.inputs.wp),
            fmt(s.inputs.dtilde),
            fmt(s.inputs.wp_mu),
            fmt(s.inputs.dstar0()),
            fmt(s.inputs.dstar_nu_mu),
            fmt(s.inputs.calr.finite_part()),
            fmt(match s.inputs.calr {
                crate::dissipation::ExtValue::Finite(_) => 0.0,
                crate::dissipation::ExtValue::Infinite { violation } => violation,
            }),
            fmt(s.inputs.calh),
            fmt(s.m0_cl.finite_part),
            fmt(s.m0_cl.max_violation()),
            fmt(s.m0_cr.finite_part),
            fmt(s.m0_cr.max_violation()),
            fmt(s.m0_mu0.finite_part),
            fmt(s.m0_mu0.max_violation()),
            fmt(s.m0_munu.finite_part),
            fmt(s.m0_munu.max_violation()),
            fmt(s.lambda_z),
            fmt(s.lambda_up),
            fmt(s.lambda_tilde),
            fmt(s.lambda_fit_residual),
            fmt(s.switching[0]),
            fmt(s.switching[1]),
            fmt(s.switching[2]),
            fmt(s.chain_energy_rate),
            fmt(s.chain_expansion),
            fmt(s.hill_residual),
            regime_name(s.m0_cr.regime).to_string(),
        ];
        writeln!(w, "{}", row.join(","))?;
    }

    let mut w = fs::File::create(dir.join(&states_file))?;
    let nn = space.n_nodes();
    let nc = space.n_cells();
    let mut header = vec!["idx".to_string(), "s".to_string(), "t".to_string()];
    for d in 0..2 * nn {
        header.push(format!("u{d}"));
    }
    for i in 0..nn {
        header.push(format!("z{i}"));
    }
    for c in 0..nc {
        header.push(format!("pd{c}"));
        header.push(format!("pm{c}"));
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..traj.len() {
        let q = &traj.states[i];
        let mut row = vec![i.to_string(), fmt(traj.s[i]), fmt(traj.t[i])];
        for d in 0..2 * nn {
            row.push(fmt(q.u[d]));
        }
        for j in 0..nn {
            row.push(fmt(q.z[j]));
        }
        for c in 0..nc {
            row.push(fmt(q.p[c].d));
            row.push(fmt(q.p[c].m));
        }
        writeln!(w, "{}", row.join(","))?;
    }

    let manifest = RunManifest {
        schema_version: crate::config::SCHEMA_VERSION,
        kind: "trajectory".into(),
        params: traj.params,
        arclength: traj.total_length(),
        n_samples: traj.len(),
        columns: TRAJECTORY_COLUMNS.iter().map(|s| s.to_string()).collect(),
        trajectory_file: traj_file,
        states_file,
        config_digest: cfg.digest(),
        seed: cfg.seed,
        config: cfg.clone(),
    };
    let manifest_path = dir.join(format!("{name}_manifest.json"));
    write_json(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

/// Reloads a trajectory from its manifest; rates are recomputed from the
/// stored samples.
pub fn load_trajectory(
    manifest_path: &Path,
) -> Result<(RunConfig, DiscreteSpace, LoadingProgram, ParamTrajectory), CoreError> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let cfg = manifest.config.clone();
    cfg.validate()?;
    let space = cfg.build_space()?;
    let loading = cfg.build_loading(&space)?;

    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(dir.join(&manifest.states_file))?;
    let mut lines = text.lines();
    let _header = lines.next().ok_or_else(|| CoreError::Config("empty states file".into()))?;
    let nn = space.n_nodes();
    let nc = space.n_cells();
    let mut s = Vec::new();
    let mut t = Vec::new();
    let mut states = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expect = 3 + 2 * nn + nn + 2 * nc;
        if fields.len() != expect {
            return Err(CoreError::Config(format!(
                "states row has {} fields, expected {expect}",
                fields.len()
            )));
        }
        let parse = |x: &str| -> Result<f64, CoreError> {
            x.parse::<f64>()
                .map_err(|e| CoreError::Config(format!("bad float {x:?}: {e}")))
        };
        s.push(parse(fields[1])?);
        t.push(parse(fields[2])?);
        let mut u = DVector::zeros(2 * nn);
        for d in 0..2 * nn {
            u[d] = parse(fields[3 + d])?;
        }
        let mut z = DVector::zeros(nn);
        for i in 0..nn {
            z[i] = parse(fields[3 + 2 * nn + i])?;
        }
        let mut p = Vec::with_capacity(nc);
        for c in 0..nc {
            p.push(Dev2 {
                d: parse(fields[3 + 3 * nn + 2 * c])?,
                m: parse(fields[3 + 3 * nn + 2 * c + 1])?,
            });
        }
        states.push(State { u, z, p });
    }
    if states.len() < 2 {
        return Err(CoreError::DegenerateRun);
    }
    let rates = reparam::discrete_rates(&space, &loading, &s, &t, &states);
    let traj = ParamTrajectory { params: manifest.params, s, t, states, rates };
    Ok((cfg, space, loading, traj))
}

/// Summary emitted by the single-curve analysis command.
#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub params: ParamTriple,
    pub n_samples: usize,
    pub arclength: f64,
    pub max_violation_cl: f64,
    pub max_violation_cr: f64,
    pub balance_residual_cl: f64,
    pub balance_residual_cr: f64,
    pub fenchel_excess_cr: f64,
    pub max_switching: [f64; 3],
    pub max_hill_rate_independent: f64,
    pub t_variation_on_damage_set: f64,
    pub t_variation_on_slope_set: f64,
    pub normalization_drift: f64,
    pub structure: StructureReport,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value)?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}
