//! Command-line driver: single runs, curve analysis, limit-path sweeps,
//! the commutation report, and the oracle-backed self test.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use viscoflow_core::analysis::{self, StructureThresholds};
use viscoflow_core::config::{self, RunConfig, SweepPath};
use viscoflow_core::contact::Tolerances;
use viscoflow_core::report::{self, AnalyzeReport};
use viscoflow_core::solver;

#[derive(Parser)]
#[command(name = "viscoflow", version, about)]
struct Cli {
    /// Output directory (overrides the config's output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweep grids.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// Seed recorded in manifests and used by randomized self tests.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Multiplies the classification tolerances tol_eq and tol_rate.
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the viscous solver at the configured parameters and write the
    /// reparameterized trajectory.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Analyze a stored trajectory (pass the *_manifest.json path).
    Analyze { trajectory: PathBuf },
    /// Run the limit sweep of the path chosen in the config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run all three limit paths and emit the commutation report.
    Commute {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the oracle-backed property suites on built-in tiny instances.
    Selftest,
    /// Print a built-in configuration (reference | tiny).
    PrintConfig { kind: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("VISCOFLOW_LOG", "error"),
    )
    .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            println!(
                "{}",
                json!({ "status": "error", "message": format!("{e:#}") })
            );
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli, path: &Path) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.analysis.tol_eq *= cli.tol_scale;
    cfg.analysis.tol_rate *= cli.tol_scale;
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn tolerances(cfg: &RunConfig) -> Tolerances {
    Tolerances { eq: cfg.analysis.tol_eq, rate: cfg.analysis.tol_rate }
}

fn structure_thresholds() -> StructureThresholds {
    StructureThresholds { var: 1e-6, transition: 1e-3, bv0: 1e-3 }
}

fn analyze_report(
    traj: &viscoflow_core::reparam::ParamTrajectory,
    curve: &viscoflow_core::analysis::CurveAnalysis,
    structure: viscoflow_core::analysis::StructureReport,
    tol: &Tolerances,
) -> AnalyzeReport {
    AnalyzeReport {
        params: traj.params,
        n_samples: traj.len(),
        arclength: traj.total_length(),
        max_violation_cl: curve.max_violation(|s| &s.m0_cl),
        max_violation_cr: curve.max_violation(|s| &s.m0_cr),
        balance_residual_cl: curve.balance_residual(|s| &s.m0_cl),
        balance_residual_cr: curve.balance_residual(|s| &s.m0_cr),
        fenchel_excess_cr: curve.fenchel_excess(|s| &s.m0_cr),
        max_switching: curve.max_switching(),
        max_hill_rate_independent: curve.max_hill_on_rate_independent(tol),
        t_variation_on_damage_set: curve.t_variation_on_damage_set,
        t_variation_on_slope_set: curve.t_variation_on_slope_set,
        normalization_drift: curve.normalization_drift,
        structure,
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Solve { config } => {
            let cfg = load_config(cli, config)?;
            let dir = out_dir(cli, &cfg);
            let space = cfg.build_space()?;
            let loading = cfg.build_loading(&space)?;
            let q0 = cfg.initial_state(&space, &loading)?;
            let params = solver::ParamTriple {
                eps: cfg.params.eps,
                mu: cfg.params.mu,
                nu: cfg.params.nu,
            };
            log::info!(
                "solving: {} steps, eps {:.1e}, mu {:.1e}, nu {:.1e}",
                cfg.solver.n_steps,
                params.eps,
                params.mu,
                params.nu
            );
            let run = solver::solve(&space, &loading, q0, params, &cfg.solver)?;
            if let Some(f) = &run.aborted {
                anyhow::bail!("step {} failed: {}", f.step_index, f.message);
            }
            log::info!(
                "balance residual {:.3e} over {} steps",
                run.total_balance_residual(),
                cfg.solver.n_steps
            );
            let traj = viscoflow_core::reparam::reparameterize(
                &space,
                &loading,
                &run,
                cfg.analysis.resample_factor,
            )?;
            let tol = tolerances(&cfg);
            let curve = analysis::analyze_curve(
                &space,
                &loading,
                &traj,
                &tol,
                cfg.solver.tol_unidir,
            )?;
            let manifest =
                report::write_trajectory(&dir, "run", &space, &cfg, &traj, &curve)?;
            let structure = analysis::structure_detect(
                &space,
                &loading,
                &traj,
                &curve,
                &tol,
                &structure_thresholds(),
            );
            report::write_json(
                &dir.join("run_report.json"),
                &analyze_report(&traj, &curve, structure, &tol),
            )?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::Analyze { trajectory } => {
            let (cfg, space, loading, traj) = report::load_trajectory(trajectory)?;
            let mut tol = tolerances(&cfg);
            tol = tol.scaled(cli.tol_scale);
            let curve = analysis::analyze_curve(
                &space,
                &loading,
                &traj,
                &tol,
                cfg.solver.tol_unidir,
            )?;
            let structure = analysis::structure_detect(
                &space,
                &loading,
                &traj,
                &curve,
                &tol,
                &structure_thresholds(),
            );
            let rep = analyze_report(&traj, &curve, structure, &tol);
            let dir = cli
                .out
                .clone()
                .unwrap_or_else(|| trajectory.parent().unwrap_or(Path::new(".")).to_path_buf());
            let path = dir.join("analyze_report.json");
            report::write_json(&path, &rep)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(())
        }
        Command::Sweep { config } => {
            let cfg = load_config(cli, config)?;
            let sweep = cfg
                .sweep
                .clone()
                .ok_or_else(|| anyhow::anyhow!("config has no sweep block"))?;
            let dir = out_dir(cli, &cfg);
            let tol = tolerances(&cfg);
            let outcome = analysis::limit_sweep(&cfg, sweep.path, cli.workers, &tol)?;
            write_sweep(&dir, &cfg, &outcome)?;
            println!("{}", serde_json::to_string_pretty(&outcome.report)?);
            Ok(())
        }
        Command::Commute { config } => {
            let cfg = load_config(cli, config)?;
            let dir = out_dir(cli, &cfg);
            let tol = tolerances(&cfg);
            let (rep, outcomes) = analysis::commute(&cfg, cli.workers, &tol, 1e-3)?;
            for outcome in &outcomes {
                write_sweep(&dir, &cfg, outcome)?;
            }
            report::write_json(&dir.join("commute_report.json"), &rep)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            if !rep.commutes {
                anyhow::bail!(
                    "terminal balance residuals {:?} exceed {:.1e}",
                    rep.terminal_balance_residuals,
                    rep.notion_tolerance
                );
            }
            Ok(())
        }
        Command::Selftest => selftest(cli),
        Command::PrintConfig { kind } => {
            let cfg = match kind.as_str() {
                "reference" => config::reference_config(),
                "tiny" => config::tiny_config(),
                other => anyhow::bail!("unknown config kind {other:?} (reference | tiny)"),
            };
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
    }
}

fn path_dir_name(path: SweepPath) -> &'static str {
    match path {
        SweepPath::EpsFirst => "sweep_eps_first",
        SweepPath::EpsnuFirst => "sweep_epsnu_first",
        SweepPath::Joint => "sweep_joint",
    }
}

fn write_sweep(
    dir: &Path,
    cfg: &RunConfig,
    outcome: &analysis::SweepOutcome,
) -> anyhow::Result<()> {
    let sub = dir.join(path_dir_name(outcome.report.path));
    let space = cfg.build_space()?;
    for (i, curve) in outcome.curves.iter().enumerate() {
        report::write_trajectory(
            &sub,
            &format!("point{i:02}"),
            &space,
            cfg,
            &curve.traj,
            &curve.analysis,
        )?;
    }
    report::write_json(&sub.join("sweep_report.json"), &outcome.report)?;
    Ok(())
}

// ---- self test ----

struct SelfTest {
    failures: Vec<String>,
}

impl SelfTest {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        if ok {
            println!("ok   {name}");
        } else {
            println!("FAIL {name}: {detail}");
            self.failures.push(name.to_string());
        }
    }
}

fn selftest(cli: &Cli) -> anyhow::Result<()> {
    use nalgebra::DVector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use viscoflow_core::discretization::State;
    use viscoflow_core::tensor::Dev2;
    use viscoflow_core::{dissipation, energy, oracle};

    let seed = cli.seed.unwrap_or(oracle::ORACLE_SEED);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = SelfTest { failures: Vec::new() };

    let cfg = config::tiny_config();
    let space = cfg.build_space()?;
    let loading = cfg.build_loading(&space)?;

    // constitutive hypotheses on random samples
    {
        let el = space.material.elastic;
        let k = space.material.constraint;
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let z: f64 = rng.gen_range(0.0..2.0);
            let z2: f64 = rng.gen_range(0.0..2.0);
            let xi = viscoflow_core::tensor::Sym2 {
                xx: rng.gen_range(-1.0..1.0),
                yy: rng.gen_range(-1.0..1.0),
                xy: rng.gen_range(-1.0..1.0),
            };
            let quad = el.apply(z, &xi).inner(&xi);
            let n2 = xi.inner(&xi);
            if quad < el.gamma1 * n2 - 1e-12 || quad > el.gamma2 * n2 + 1e-12 {
                worst = worst.max(1.0);
            }
            let (zl, zh) = if z <= z2 { (z, z2) } else { (z2, z) };
            if el.apply(zl, &xi).inner(&xi) > el.apply(zh, &xi).inner(&xi) + 1e-12 {
                worst = worst.max(1.0);
            }
            let dh = (k.radius(z) - k.radius(z2)).abs();
            worst = worst.max(dh - k.lipschitz() * (z - z2).abs());
        }
        t.check("constitutive-hypotheses", worst <= 1e-12, format!("excess {worst:.2e}"));
    }

    // finite-difference gradients
    {
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let mut st = State::zeros(&space, 0.9);
            for &d in &space.free_dofs {
                st.u[d] = rng.gen_range(-0.3..0.3);
            }
            for i in 0..space.n_nodes() {
                st.z[i] = rng.gen_range(0.5..1.0);
            }
            for p in st.p.iter_mut() {
                *p = Dev2 { d: rng.gen_range(-0.3..0.3), m: rng.gen_range(-0.3..0.3) };
            }
            let flat0 = st.to_flat(&space);
            let f = |v: &DVector<f64>| {
                let s = State::from_flat(&space, v);
                energy::energy(&space, &loading, 0.5, &s, 0.1)
                    .map(|e| e.total())
                    .unwrap_or(f64::NAN)
            };
            let fd = oracle::fd_gradient(&f, &flat0, 1e-6)?;
            let gu = energy::grad_u(&space, &loading, 0.5, &st);
            for k in 0..space.n_free() {
                worst = worst.max((fd[k] - gu[k]).abs() / (1.0 + gu[k].abs()));
            }
        }
        t.check("fd-gradients", worst <= 1e-6, format!("rel err {worst:.2e}"));
    }

    // incremental step against the brute-force oracle
    {
        let params = solver::ParamTriple { eps: 0.1, mu: 0.1, nu: 0.1 };
        let q0 = cfg.initial_state(&space, &loading)?;
        let step = solver::step(&space, &loading, &q0, 0.5, 0.05, params, &cfg.solver)?;
        let oracle_q =
            oracle::brute_force_step(&space, &loading, &q0, 0.5, 0.05, params, 1e-10)?;
        let du = &step.u - &oracle_q.u;
        let dz = &step.z - &oracle_q.z;
        let dp: Vec<Dev2> = step
            .p
            .iter()
            .zip(&oracle_q.p)
            .map(|(a, b)| *a - *b)
            .collect();
        let diff = space.norm_h1d(&du) + space.norm_hm(&dz) + space.norm_l2_p(&dp);
        t.check("step-oracle", diff <= 1e-6, format!("state diff {diff:.2e}"));
    }

    // Fenchel-Young gap sign and optimality at the resolvent
    {
        let mut min_gap = f64::INFINITY;
        let mut max_resolvent_gap = 0.0f64;
        for _ in 0..200 {
            let mut st = State::zeros(&space, 0.9);
            for &d in &space.free_dofs {
                st.u[d] = rng.gen_range(-0.3..0.3);
            }
            for i in 0..space.n_nodes() {
                st.z[i] = rng.gen_range(0.5..1.0);
            }
            let udot = space.scatter_free(&DVector::from_iterator(
                space.n_free(),
                (0..space.n_free()).map(|_| rng.gen_range(-1.0..1.0)),
            ));
            let zdot = DVector::from_iterator(
                space.n_nodes(),
                (0..space.n_nodes()).map(|_| -rng.gen_range(0.0f64..1.0)),
            );
            let pdot: Vec<Dev2> = (0..space.n_cells())
                .map(|_| Dev2 { d: rng.gen_range(-1.0..1.0), m: rng.gen_range(-1.0..1.0) })
                .collect();
            let gap = dissipation::fenchel_dual_gap(
                &space, &loading, 0.5, &st.z.clone(), &st, &udot, &zdot, &pdot, 0.1, 0.1,
                0.1, 1e-10,
            )?
            .finite()
            .unwrap();
            min_gap = min_gap.min(gap);

            let xi_u = energy::grad_u(&space, &loading, 0.5, &st);
            let xi_z = energy::grad_z_density(&space, &loading, 0.5, &st)?;
            let xi_p = energy::grad_p(&space, &loading, 0.5, &st, 0.1);
            let (ud, zd, pd) =
                dissipation::resolvent_rates(&space, &st.z, &xi_u, &xi_z, &xi_p, 0.1, 0.1);
            let gap0 = dissipation::fenchel_dual_gap(
                &space, &loading, 0.5, &st.z.clone(), &st, &ud, &zd, &pd, 0.1, 0.1, 0.1,
                1e-10,
            )?
            .finite()
            .unwrap();
            max_resolvent_gap = max_resolvent_gap.max(gap0.abs());
        }
        t.check(
            "fenchel-gap",
            min_gap >= -1e-10 && max_resolvent_gap <= 1e-9,
            format!("min gap {min_gap:.2e}, resolvent gap {max_resolvent_gap:.2e}"),
        );
    }

    // manufactured jump recovery
    {
        let mut cfg_z = config::tiny_config();
        cfg_z.loading.w_profile.p0 = 3.0;
        let space_z = cfg_z.build_space()?;
        let loading_z = cfg_z.build_loading(&space_z)?;
        let q0 = cfg_z.initial_state(&space_z, &loading_z)?;
        let traj = oracle::manufactured_jump(
            &space_z,
            &loading_z,
            0.0,
            &q0,
            oracle::JumpKind::ViscousZ,
            0.5,
            10,
            0.02,
        )?;
        let tol = Tolerances { eq: 1e-6, rate: 1e-6 };
        let curve = analysis::analyze_curve(&space_z, &loading_z, &traj, &tol, 1e-10)?;
        let worst = curve
            .samples
            .iter()
            .map(|s| (s.lambda_z - 0.5).abs())
            .fold(0.0, f64::max);
        t.check("lambda-recovery", worst <= 1e-6, format!("error {worst:.2e}"));
    }

    if t.failures.is_empty() {
        println!("selftest: all suites passed");
        Ok(())
    } else {
        anyhow::bail!("selftest failures: {}", t.failures.join(", "))
    }
}
