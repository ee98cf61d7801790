//! Command-line front end.
//!
//! Three subcommands map onto the library pipeline: `evolve` integrates one
//! initial state and writes the Bloch trajectory, `nm` evaluates the
//! trace-distance non-Markovianity of an antipodal pair, and `sweep` drives
//! parameter scans. Every run takes a JSON config (`--config FILE` or a
//! committed `--preset NAME`), optionally patched with `--set key=value`
//! overrides, and writes its outputs together with a config echo that
//! reproduces the run exactly when fed back in.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical/runtime
//! failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{
    load_config, preset_json, MaximizeConfig, OutputFormat, RunConfig, SweepConfig, SweepKind,
};
use crate::dynamics::{evolve, write_trajectory_csv, QubitTrajectory};
use crate::nmeasure::{
    error_chain, nm_maximized, pair_result_from_trajectories, write_pair_csv, BlochErrors,
    PairResult,
};
use crate::noise::{branch_tag, sample_pair, sample_trajectory};
use crate::sweep::{
    circle_scan, convergence_study, nm_vs_omega, write_sweep_csv, AxisName, AxisScale, AxisSpec,
    StudyKind, SweepBase, SweepOutcome,
};
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "iontrap-nm",
    version,
    about = "Trapped-ion qubit dynamics and non-Markovianity in the strong-field regime"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one initial state and write the Bloch trajectory.
    Evolve(RunArgs),
    /// Evaluate the trace-distance NM of an antipodal state pair.
    Nm(NmArgs),
    /// Scan NM over a parameter grid (requires a `sweep` config section).
    Sweep(SweepArgs),
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Committed figure preset (fig2, fig3a–fig3d, fig4, fig5, figS1–figS3).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Override one config field: dotted path, JSON or bare-string value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (default: $IONTRAP_NM_WORKERS, then all cores).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Shot-noise base seed (shorthand for --set shots.seed=S).
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Shots per component per time point (shorthand for --set shots.n_cycles=N).
    #[arg(long, value_name = "N")]
    shots: Option<usize>,
    /// Output directory (shorthand for --set output_dir=DIR).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NmArgs {
    #[command(flatten)]
    base: RunArgs,
    /// Maximize NM over a THETAxPHI grid of initial pairs (e.g. 11x12).
    #[arg(long, value_name = "TxP")]
    maximize: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    base: RunArgs,
    /// Continue an interrupted sweep from its JSON-lines stream.
    #[arg(long)]
    resume: bool,
    /// Run identifier used in output file names (default: a Unix timestamp;
    /// with --resume and no id, the newest matching stream is picked up).
    #[arg(long, value_name = "ID")]
    run_id: Option<String>,
}

/// Parse args, run, and translate the outcome into the exit-code contract.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Validation(_) => 2,
                _ => 3,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Evolve(args) => {
            init_workers(args.workers)?;
            let cfg = load(&args, &[])?;
            cmd_evolve(&cfg)
        }
        Cmd::Nm(args) => {
            init_workers(args.base.workers)?;
            let extra = match &args.maximize {
                Some(spec) => {
                    let (nt, np) = parse_maximize(spec)?;
                    vec![
                        format!("maximize.n_theta={nt}"),
                        format!("maximize.n_phi={np}"),
                    ]
                }
                None => vec![],
            };
            let cfg = load(&args.base, &extra)?;
            cmd_nm(&cfg)
        }
        Cmd::Sweep(args) => {
            init_workers(args.base.workers)?;
            let cfg = load(&args.base, &[])?;
            cmd_sweep(&cfg, args.resume, args.run_id.as_deref())
        }
    }
}

/// Materialize the config: source document, `--set` list, then the
/// dedicated flags (which take precedence over `--set`).
fn load(args: &RunArgs, extra_sets: &[String]) -> Result<RunConfig> {
    let text = match (&args.config, &args.preset) {
        (None, None) => {
            return Err(Error::Config(
                "one of --config FILE or --preset NAME is required".into(),
            ))
        }
        (Some(path), None) => std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?,
        (None, Some(name)) => preset_json(name)?.to_string(),
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };
    let mut sets = args.set.clone();
    sets.extend_from_slice(extra_sets);
    if let Some(n) = args.shots {
        sets.push(format!("shots.n_cycles={n}"));
    }
    if let Some(s) = args.seed {
        sets.push(format!("shots.seed={s}"));
    }
    if let Some(dir) = &args.out {
        sets.push(format!("output_dir={}", serde_json::to_string(dir)?));
    }
    let cfg = load_config(&text, &sets).map_err(|e| match &e {
        // A bare --seed materializes a shots section that lacks n_cycles;
        // surface the actionable flag instead of the raw schema error.
        Error::Config(msg)
            if args.seed.is_some()
                && args.shots.is_none()
                && msg.contains("missing field `n_cycles`") =>
        {
            Error::Config(
                "--seed given but no shots configured; add --shots N or a shots section".into(),
            )
        }
        _ => e,
    })?;
    if args.seed.is_some() && cfg.shots.is_none() {
        return Err(Error::Config(
            "--seed given but no shots configured; add --shots N or a shots section".into(),
        ));
    }
    Ok(cfg)
}

/// Spawn the global worker pool: flag, then env, then rayon's default.
fn init_workers(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("IONTRAP_NM_WORKERS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                Error::Config(format!("IONTRAP_NM_WORKERS: not a worker count: '{v}'"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("workers: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("workers: {e}")))?;
    }
    Ok(())
}

/// Parse a THETAxPHI maximization grid such as "11x12".
fn parse_maximize(spec: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = spec.split('x').collect();
    if parts.len() == 2 {
        if let (Ok(nt), Ok(np)) = (parts[0].parse(), parts[1].parse()) {
            return Ok((nt, np));
        }
    }
    Err(Error::Config(format!(
        "--maximize {spec}: expected THETAxPHI, e.g. 11x12"
    )))
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(())
}

fn write_echo(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let path = cfg.output_dir.join(name);
    std::fs::write(&path, cfg.echo_json())?;
    Ok(path)
}

/// Trajectory CSV with the per-component shot-noise error columns.
fn write_noisy_trajectory_csv<W: std::io::Write>(
    mut w: W,
    traj: &QubitTrajectory,
    errs: &BlochErrors,
) -> Result<()> {
    writeln!(w, "t_us,sx,sy,sz,sx_err,sy_err,sz_err")?;
    for i in 0..traj.len() {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            traj.times[i],
            traj.sx[i],
            traj.sy[i],
            traj.sz[i],
            errs.ex[i],
            errs.ey[i],
            errs.ez[i]
        )?;
    }
    Ok(())
}

fn trajectory_json(traj: &QubitTrajectory, errs: Option<&BlochErrors>) -> serde_json::Value {
    let mut v = json!({
        "t_us": traj.times,
        "sx": traj.sx,
        "sy": traj.sy,
        "sz": traj.sz,
    });
    if let Some(e) = errs {
        v["sx_err"] = json!(e.ex);
        v["sy_err"] = json!(e.ey);
        v["sz_err"] = json!(e.ez);
    }
    v
}

fn write_json_file(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_evolve(cfg: &RunConfig) -> Result<()> {
    ensure_out_dir(cfg)?;
    let echo = write_echo(cfg, "evolve_config.json")?;
    let init = cfg.initial.resolve(&cfg.model)?;
    let opts = cfg.integrator.options();
    let out = evolve(&cfg.model, &init, &cfg.grid, cfg.frame, &opts)?;
    let sampled = match &cfg.shots {
        Some(shots) => Some(sample_trajectory(&out.traj, shots, branch_tag(false))?),
        None => None,
    };
    let data_path = match cfg.format {
        OutputFormat::Csv => {
            let path = cfg.output_dir.join("evolve.csv");
            let file = std::fs::File::create(&path)?;
            let buf = std::io::BufWriter::new(file);
            match &sampled {
                Some((traj, errs)) => write_noisy_trajectory_csv(buf, traj, errs)?,
                None => write_trajectory_csv(buf, &out.traj)?,
            }
            path
        }
        OutputFormat::Json => {
            let path = cfg.output_dir.join("evolve.json");
            let value = match &sampled {
                Some((traj, errs)) => trajectory_json(traj, Some(errs)),
                None => trajectory_json(&out.traj, None),
            };
            write_json_file(&path, &value)?;
            path
        }
    };
    if out.report.truncation_warning {
        eprintln!(
            "warning: motional truncation tail reached {:.2e} — increase fock_dim",
            out.report
                .max_mode_tail
                .iter()
                .cloned()
                .fold(0.0_f64, f64::max)
        );
    }
    println!(
        "evolved {} points ({} substeps of {:.3e} us); wrote {} and {}",
        cfg.grid.n_points,
        out.report.n_substeps,
        out.report.substep,
        data_path.display(),
        echo.display()
    );
    Ok(())
}

/// The NM pipeline outcome the `nm` command reports.
struct NmOutcome {
    pair: PairResult,
    chain: Option<crate::nmeasure::ErrorChain>,
    noisy: Option<(QubitTrajectory, BlochErrors, QubitTrajectory, BlochErrors)>,
    best_angles: Option<(f64, f64)>,
}

fn run_nm_pipeline(cfg: &RunConfig) -> Result<NmOutcome> {
    let init = cfg.initial.resolve(&cfg.model)?;
    let opts = cfg.integrator.options();
    if let Some(m) = &cfg.maximize {
        let res = nm_maximized(
            &cfg.model,
            &init.motion,
            &cfg.grid,
            cfg.frame,
            &opts,
            m.n_theta,
            m.n_phi,
        )?;
        return Ok(NmOutcome {
            pair: res.best,
            chain: None,
            noisy: None,
            best_angles: Some((res.best_theta, res.best_phi)),
        });
    }
    let exact = crate::nmeasure::nm_for_pair(&cfg.model, &init, &cfg.grid, cfg.frame, &opts)?;
    match &cfg.shots {
        None => Ok(NmOutcome { pair: exact, chain: None, noisy: None, best_angles: None }),
        Some(shots) => {
            let noisy = sample_pair(&exact.traj1, &exact.traj2, shots)?;
            let pair = pair_result_from_trajectories(
                noisy.traj1.clone(),
                noisy.traj2.clone(),
                exact.report1.clone(),
                exact.report2.clone(),
            )?;
            let chain = error_chain(
                &pair.traj1,
                &noisy.err1,
                &pair.traj2,
                &noisy.err2,
                &pair.sigma,
            );
            Ok(NmOutcome {
                pair,
                chain: Some(chain),
                noisy: Some((noisy.traj1, noisy.err1, noisy.traj2, noisy.err2)),
                best_angles: None,
            })
        }
    }
}

fn cmd_nm(cfg: &RunConfig) -> Result<()> {
    ensure_out_dir(cfg)?;
    let echo = write_echo(cfg, "nm_config.json")?;
    let outcome = run_nm_pipeline(cfg)?;
    let pr = &outcome.pair;

    let data_path = match cfg.format {
        OutputFormat::Csv => {
            let path = cfg.output_dir.join("nm.csv");
            let file = std::fs::File::create(&path)?;
            let buf = std::io::BufWriter::new(file);
            write_pair_csv(buf, pr, outcome.chain.as_ref())?;
            path
        }
        OutputFormat::Json => {
            let path = cfg.output_dir.join("nm.json");
            let mut value = json!({
                "t_us": pr.times,
                "d": pr.d,
                "sigma": pr.sigma.values,
            });
            if let Some(chain) = &outcome.chain {
                value["d_err"] = json!(chain.delta_d);
                value["sigma_err"] = json!(chain.delta_sigma);
            }
            write_json_file(&path, &value)?;
            path
        }
    };
    if let Some((t1, e1, t2, e2)) = &outcome.noisy {
        // The synthetic datasets behind the noisy analysis, for plotting.
        for (name, traj, errs) in [("branch1", t1, e1), ("branch2", t2, e2)] {
            let path = cfg.output_dir.join(format!("nm_shots_{name}.csv"));
            let file = std::fs::File::create(&path)?;
            write_noisy_trajectory_csv(std::io::BufWriter::new(file), traj, errs)?;
        }
    }

    let mut summary = json!({
        "nm": pr.nm,
        "nm_err": outcome.chain.as_ref().map(|c| c.delta_nm),
        "model": cfg.model,
        "grid": cfg.grid,
    });
    if let Some((theta, phi)) = outcome.best_angles {
        summary["best_theta"] = json!(theta);
        summary["best_phi"] = json!(phi);
    }
    let summary_path = cfg.output_dir.join("nm_summary.json");
    write_json_file(&summary_path, &summary)?;

    match outcome.chain.as_ref() {
        Some(c) => println!("NM = {:.6} ± {:.6}", pr.nm, c.delta_nm),
        None => println!("NM = {:.6}", pr.nm),
    }
    println!(
        "wrote {}, {} and {}",
        data_path.display(),
        summary_path.display(),
        echo.display()
    );
    Ok(())
}

/// Default axes for sweep kinds whose config omits them.
fn default_axes(kind: SweepKind) -> Vec<AxisSpec> {
    match kind {
        SweepKind::Omega => vec![AxisSpec {
            name: AxisName::RabiMhz,
            min: 0.3,
            max: 3.8,
            n_points: 15,
            scale: AxisScale::Linear,
        }],
        SweepKind::Circle => vec![
            AxisSpec {
                name: AxisName::DetuningMhz,
                min: 0.0,
                max: 3.5,
                n_points: 15,
                scale: AxisScale::Linear,
            },
            AxisSpec {
                name: AxisName::RabiMhz,
                min: 0.1,
                max: 3.6,
                n_points: 15,
                scale: AxisScale::Linear,
            },
        ],
        SweepKind::Window => vec![crate::sweep::default_study_axis(StudyKind::Window)],
        SweepKind::Resolution => vec![crate::sweep::default_study_axis(StudyKind::Resolution)],
        SweepKind::Repetitions => vec![crate::sweep::default_study_axis(StudyKind::Repetitions)],
        SweepKind::Dephasing => vec![crate::sweep::default_study_axis(StudyKind::Dephasing)],
    }
}

/// The newest stream file `sweep_<kind>_<id>.jsonl` in the output dir.
fn newest_run_id(dir: &Path, kind: SweepKind) -> Result<String> {
    let prefix = format!("sweep_{}_", kind.as_str());
    let mut best: Option<(std::time::SystemTime, String)> = None;
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name
            .strip_prefix(&prefix)
            .and_then(|rest| rest.strip_suffix(".jsonl"))
        {
            let modified = entry.metadata()?.modified()?;
            if best.as_ref().map(|(t, _)| modified > *t).unwrap_or(true) {
                best = Some((modified, id.to_string()));
            }
        }
    }
    best.map(|(_, id)| id).ok_or_else(|| {
        Error::Config(format!(
            "--resume: no sweep_{}_*.jsonl stream found in {}",
            kind.as_str(),
            dir.display()
        ))
    })
}

fn cmd_sweep(cfg: &RunConfig, resume: bool, run_id: Option<&str>) -> Result<()> {
    let sw: &SweepConfig = cfg.sweep.as_ref().ok_or_else(|| {
        Error::Config("sweep subcommand needs a `sweep` section in the config".into())
    })?;
    ensure_out_dir(cfg)?;
    let kind = sw.kind;
    let run_id: String = match run_id {
        Some(id) => id.to_string(),
        None if resume => newest_run_id(&cfg.output_dir, kind)?,
        None => {
            let epoch = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .expect("system clock after 1970");
            format!("{}", epoch.as_secs())
        }
    };
    let stem = format!("sweep_{}_{run_id}", kind.as_str());
    let echo = write_echo(cfg, &format!("{stem}_config.json"))?;
    let stream = cfg.output_dir.join(format!("{stem}.jsonl"));
    if !resume && stream.exists() {
        // A fresh run must not append to a stale stream.
        std::fs::remove_file(&stream)?;
    }

    let axes = if sw.axes.is_empty() { default_axes(kind) } else { sw.axes.clone() };
    let expected = if kind == SweepKind::Circle { 2 } else { 1 };
    if axes.len() != expected {
        return Err(Error::Config(format!(
            "sweep kind {} needs exactly {expected} axis(es), got {}",
            kind.as_str(),
            axes.len()
        )));
    }

    let base = SweepBase {
        params: cfg.model.clone(),
        init: cfg.initial.resolve(&cfg.model)?,
        grid: cfg.grid.clone(),
        frame: cfg.frame,
        opts: cfg.integrator.options(),
        shots: cfg.shots,
        maximize: cfg.maximize.map(|MaximizeConfig { n_theta, n_phi }| (n_theta, n_phi)),
    };

    let (outcome, summary): (SweepOutcome, serde_json::Value) = match kind {
        SweepKind::Omega => {
            let s = nm_vs_omega(&base, &axes[0], Some(&stream), resume)?;
            let summary = json!({
                "kind": kind.as_str(),
                "argmax_rabi_mhz": s.argmax_rabi_mhz,
                "max_nm": s.max_nm,
            });
            (s.outcome, summary)
        }
        SweepKind::Circle => {
            let s = circle_scan(&base, &axes[0], &axes[1], Some(&stream), resume)?;
            let summary = json!({
                "kind": kind.as_str(),
                "ridges": s.ridges,
            });
            (s.outcome, summary)
        }
        SweepKind::Window
        | SweepKind::Resolution
        | SweepKind::Repetitions
        | SweepKind::Dephasing => {
            let study = match kind {
                SweepKind::Window => StudyKind::Window,
                SweepKind::Resolution => StudyKind::Resolution,
                SweepKind::Repetitions => StudyKind::Repetitions,
                SweepKind::Dephasing => StudyKind::Dephasing,
                _ => unreachable!(),
            };
            let out =
                convergence_study(study, &base, Some(axes[0].clone()), Some(&stream), resume)?;
            let summary = json!({
                "kind": kind.as_str(),
                "n_points": out.points.len(),
            });
            (out, summary)
        }
    };

    let data_path = match cfg.format {
        OutputFormat::Csv => {
            let path = cfg.output_dir.join(format!("{stem}.csv"));
            write_sweep_csv(&outcome, &path)?;
            path
        }
        OutputFormat::Json => {
            let path = cfg.output_dir.join(format!("{stem}.json"));
            write_json_file(&path, &serde_json::to_value(&outcome)?)?;
            path
        }
    };
    let summary_path = cfg.output_dir.join(format!("{stem}_summary.json"));
    write_json_file(&summary_path, &summary)?;
    println!(
        "swept {} points; wrote {}, {} and {}",
        outcome.points.len(),
        data_path.display(),
        summary_path.display(),
        echo.display()
    );
    Ok(())
}
