//! Parameter sweeps over the non-Markovianity pipeline.
//!
//! Three scan families cover the interesting structure of the model:
//! NM versus drive strength Ω at fixed detuning (non-monotone, peaking near
//! the mode frequencies), the two-dimensional (δ, Ω) plane where the NM
//! maxima trace out circles δ² + Ω² = ν², and one-dimensional convergence
//! studies (evolution window, grid resolution, shot count, dephasing rate).
//!
//! Grid points are independent; they run in parallel on the global rayon
//! pool and stream to a JSON-lines file as they complete, so an interrupted
//! scan resumes by skipping already-recorded indices. Results are sorted by
//! grid index on finalize, making the ordered output independent of
//! scheduling; per-point noise seeds derive from the point index, so a
//! parallel run and a serial run produce bit-identical numbers.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write as IoWrite};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{EvolveOptions, Frame, InitialCondition, TimeGrid};
use crate::hilbert::ModelParams;
use crate::nmeasure::{nm_for_pair, nm_maximized};
use crate::noise::{derive_seed, noisy_nm, sample_pair, ShotConfig};
use crate::{Error, Result};

/// Stream-seed tag separating sweep-point noise from other noise consumers.
const SWEEP_SEED_TAG: u64 = 0x5EE7;

/// Sweepable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    /// Drive strength Ω/2π in MHz.
    RabiMhz,
    /// Detuning δ/2π in MHz.
    DetuningMhz,
    /// Evolution window end in μs (output spacing is preserved).
    TEnd,
    /// Number of output samples of the time grid (integer axis).
    NPointsTime,
    /// Shots per Pauli component per time point (integer axis).
    NCycles,
    /// Dephasing rate of the first pair branch.
    GammaPlusMhz,
}

impl AxisName {
    /// Column header / config spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            AxisName::RabiMhz => "rabi_mhz",
            AxisName::DetuningMhz => "detuning_mhz",
            AxisName::TEnd => "t_end",
            AxisName::NPointsTime => "n_points_time",
            AxisName::NCycles => "n_cycles",
            AxisName::GammaPlusMhz => "gamma_plus_mhz",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, AxisName::NPointsTime | AxisName::NCycles)
    }
}

/// Spacing rule of an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisScale {
    #[default]
    Linear,
    /// Geometric spacing — the natural choice for shot-count scans spanning
    /// decades.
    Log,
}

/// One sweep axis: `n_points` samples from `min` to `max` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub name: AxisName,
    pub min: f64,
    pub max: f64,
    pub n_points: usize,
    #[serde(default)]
    pub scale: AxisScale,
}

impl AxisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::Validation(format!(
                "sweep axis {}: n_points must be at least 2, got {}",
                self.name.as_str(),
                self.n_points
            )));
        }
        if !self.min.is_finite() || !self.max.is_finite() || self.min >= self.max {
            return Err(Error::Validation(format!(
                "sweep axis {}: need finite min < max, got [{}, {}]",
                self.name.as_str(),
                self.min,
                self.max
            )));
        }
        if self.scale == AxisScale::Log && self.min <= 0.0 {
            return Err(Error::Validation(format!(
                "sweep axis {}: log scale needs min > 0, got {}",
                self.name.as_str(),
                self.min
            )));
        }
        Ok(())
    }

    /// The sampled values, endpoints included; integer axes are rounded.
    pub fn values(&self) -> Vec<f64> {
        let n = self.n_points;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let f = i as f64 / (n - 1) as f64;
            let v = match self.scale {
                AxisScale::Linear => self.min + f * (self.max - self.min),
                AxisScale::Log => self.min * (self.max / self.min).powf(f),
            };
            out.push(if self.name.is_integer() { v.round() } else { v });
        }
        out
    }
}

/// Everything a sweep point needs besides the scanned values.
#[derive(Debug, Clone)]
pub struct SweepBase {
    pub params: ModelParams,
    pub init: InitialCondition,
    pub grid: TimeGrid,
    pub frame: Frame,
    pub opts: EvolveOptions,
    /// When set, each point reports the noisy finite-shot NM and its
    /// propagated uncertainty; the noise seed is derived per point.
    pub shots: Option<ShotConfig>,
    /// When set, each point maximizes NM over a (θ_steps, φ_steps) grid of
    /// initial pairs instead of using the configured pair. Incompatible
    /// with `shots`.
    pub maximize: Option<(usize, usize)>,
}

impl SweepBase {
    fn validate(&self) -> Result<()> {
        if self.shots.is_some() && self.maximize.is_some() {
            return Err(Error::Validation(
                "sweep: shot noise on top of state-pair maximization is not \
                 supported — drop one of the two"
                    .into(),
            ));
        }
        if let Some(s) = &self.shots {
            s.validate()?;
        }
        Ok(())
    }
}

/// Apply one axis assignment to a working copy of the base configuration.
fn apply_axis(base: &mut SweepBase, name: AxisName, value: f64) -> Result<()> {
    match name {
        AxisName::RabiMhz => base.params.rabi_mhz = value,
        AxisName::DetuningMhz => base.params.detuning_mhz = value,
        AxisName::TEnd => {
            // Preserve the output spacing: window scans compare NM values
            // accumulated at the same Δt, not the same sample count.
            let dt = base.grid.dt();
            if !(value > base.grid.t_start) {
                return Err(Error::Validation(format!(
                    "sweep t_end = {value}: must exceed t_start = {}",
                    base.grid.t_start
                )));
            }
            let n = ((value - base.grid.t_start) / dt).round() as usize + 1;
            base.grid = TimeGrid::new(base.grid.t_start, value, n.max(2));
        }
        AxisName::NPointsTime => {
            let n = value.round() as usize;
            if n < 3 {
                return Err(Error::Validation(format!(
                    "sweep n_points_time = {n}: need at least 3 samples"
                )));
            }
            base.grid = TimeGrid::new(base.grid.t_start, base.grid.t_end, n);
        }
        AxisName::NCycles => match &mut base.shots {
            Some(s) => {
                let n = value.round() as usize;
                if n == 0 {
                    return Err(Error::Validation(
                        "sweep n_cycles = 0: need at least one shot".into(),
                    ));
                }
                s.n_cycles = n;
            }
            None => {
                return Err(Error::Validation(
                    "sweep over n_cycles requires a shots configuration \
                     (base seed and cycle count)"
                        .into(),
                ));
            }
        },
        AxisName::GammaPlusMhz => base.params.gamma_plus_mhz = value,
    }
    Ok(())
}

/// One completed sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Row-major index into the axis grid (first axis outermost).
    pub index: usize,
    /// Applied axis values, in axis order (integer axes already rounded).
    pub values: Vec<f64>,
    pub nm: f64,
    /// Propagated δN when shot noise is simulated.
    pub nm_err: Option<f64>,
    /// Wall-clock cost of this point in seconds (timing metadata; excluded
    /// from reproducibility comparisons).
    pub wall_time_s: f64,
}

/// A finished sweep: the axes and one point per grid cell, in index order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub axes: Vec<AxisSpec>,
    pub points: Vec<SweepPoint>,
}

impl SweepOutcome {
    /// The point with the largest NM (first one on ties).
    pub fn argmax(&self) -> Option<&SweepPoint> {
        self.points
            .iter()
            .max_by(|a, b| a.nm.partial_cmp(&b.nm).unwrap_or(std::cmp::Ordering::Equal))
    }
}

/// Evaluate one grid point: apply assignments, run the pipeline, return
/// (nm, nm_err).
fn evaluate_point(
    base: &SweepBase,
    names: &[AxisName],
    values: &[f64],
    index: usize,
) -> Result<(f64, Option<f64>)> {
    let mut cfg = base.clone();
    for (&name, &value) in names.iter().zip(values) {
        apply_axis(&mut cfg, name, value)?;
    }
    if let Some((n_theta, n_phi)) = cfg.maximize {
        let m = nm_maximized(
            &cfg.params,
            &cfg.init.motion,
            &cfg.grid,
            cfg.frame,
            &cfg.opts,
            n_theta,
            n_phi,
        )?;
        return Ok((m.best.nm, None));
    }
    let pair = nm_for_pair(&cfg.params, &cfg.init, &cfg.grid, cfg.frame, &cfg.opts)?;
    match &cfg.shots {
        None => Ok((pair.nm, None)),
        Some(shots) => {
            let point_cfg = ShotConfig {
                n_cycles: shots.n_cycles,
                seed: derive_seed(shots.seed, &[SWEEP_SEED_TAG, index as u64]),
            };
            let noisy = sample_pair(&pair.traj1, &pair.traj2, &point_cfg)?;
            let (nm, delta_nm) = noisy_nm(&noisy)?;
            Ok((nm, Some(delta_nm)))
        }
    }
}

/// Row-major index → per-axis value indices.
fn unflatten(index: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    let mut rem = index;
    for k in (0..dims.len()).rev() {
        idx[k] = rem % dims[k];
        rem /= dims[k];
    }
    idx
}

/// Read the completed points out of an interrupted stream file.
fn read_stream(path: &Path) -> Result<HashMap<usize, SweepPoint>> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let reader = BufReader::new(std::fs::File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let point: SweepPoint = serde_json::from_str(&line).map_err(|e| {
            Error::Validation(format!(
                "resume stream {}: unparseable line ({e})",
                path.display()
            ))
        })?;
        done.insert(point.index, point);
    }
    Ok(done)
}

/// Run a sweep over one or two axes.
///
/// `stream`: append-only JSON-lines sink, one line per completed point, in
/// completion order. With `resume`, indices already present in the stream
/// are not recomputed — their recorded values are reused. The returned
/// outcome is always sorted by grid index.
pub fn run_sweep(
    base: &SweepBase,
    axes: &[AxisSpec],
    stream: Option<&Path>,
    resume: bool,
) -> Result<SweepOutcome> {
    if axes.is_empty() || axes.len() > 2 {
        return Err(Error::Validation(format!(
            "sweep: expected 1 or 2 axes, got {}",
            axes.len()
        )));
    }
    for a in axes {
        a.validate()?;
    }
    base.validate()?;

    let names: Vec<AxisName> = axes.iter().map(|a| a.name).collect();
    let value_grid: Vec<Vec<f64>> = axes.iter().map(|a| a.values()).collect();
    let dims: Vec<usize> = value_grid.iter().map(|v| v.len()).collect();
    let total: usize = dims.iter().product();

    let done = match (stream, resume) {
        (Some(p), true) => read_stream(p)?,
        _ => HashMap::new(),
    };
    let sink = match stream {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let file = OpenOptions::new().create(true).append(true).open(p)?;
            Some(Mutex::new(file))
        }
        None => None,
    };

    let pending: Vec<usize> = (0..total).filter(|i| !done.contains_key(i)).collect();
    let mut fresh: Vec<SweepPoint> = pending
        .into_par_iter()
        .map(|index| {
            let at = unflatten(index, &dims);
            let values: Vec<f64> = at
                .iter()
                .enumerate()
                .map(|(k, &j)| value_grid[k][j])
                .collect();
            let started = Instant::now();
            let (nm, nm_err) = evaluate_point(base, &names, &values, index)?;
            let point = SweepPoint {
                index,
                values,
                nm,
                nm_err,
                wall_time_s: started.elapsed().as_secs_f64(),
            };
            if let Some(sink) = &sink {
                let line = serde_json::to_string(&point)?;
                let mut f = sink.lock().expect("sweep sink poisoned");
                writeln!(f, "{line}")?;
                f.flush()?;
            }
            Ok(point)
        })
        .collect::<Result<Vec<_>>>()?;

    fresh.extend(done.into_values());
    fresh.sort_by_key(|p| p.index);
    if fresh.len() != total {
        return Err(Error::Validation(format!(
            "sweep: stream holds {} points for a {total}-cell grid — \
             was it produced by a different configuration?",
            fresh.len()
        )));
    }
    Ok(SweepOutcome { axes: axes.to_vec(), points: fresh })
}

/// NM versus drive strength at fixed detuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmegaSweepSummary {
    pub outcome: SweepOutcome,
    /// Ω/2π at the NM maximum.
    pub argmax_rabi_mhz: f64,
    pub max_nm: f64,
}

/// Scan NM over a `rabi_mhz` axis.
pub fn nm_vs_omega(
    base: &SweepBase,
    axis: &AxisSpec,
    stream: Option<&Path>,
    resume: bool,
) -> Result<OmegaSweepSummary> {
    if axis.name != AxisName::RabiMhz {
        return Err(Error::Validation(format!(
            "nm_vs_omega: axis must be rabi_mhz, got {}",
            axis.name.as_str()
        )));
    }
    let outcome = run_sweep(base, std::slice::from_ref(axis), stream, resume)?;
    let best = outcome.argmax().expect("validated non-empty axis");
    Ok(OmegaSweepSummary {
        argmax_rabi_mhz: best.values[0],
        max_nm: best.nm,
        outcome,
    })
}

/// One ridge point of the (δ, Ω) NM landscape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgePoint {
    pub delta_mhz: f64,
    pub omega_mhz: f64,
    pub nm: f64,
}

/// Locate the per-column local maxima of NM as a function of Ω.
///
/// `nm` is row-major over δ (outer) × Ω (inner). Each column is smoothed
/// with a 3-point moving average before maxima are read off; endpoint cells
/// count as maxima when they dominate their single neighbor, so ridges
/// running into Ω → 0 are still reported. Flat noise floors are suppressed
/// by requiring a maximum to carry at least 10% of its column's peak NM
/// (and to be nonzero at all).
pub fn extract_ridges(
    delta_values: &[f64],
    omega_values: &[f64],
    nm: &[f64],
) -> Vec<RidgePoint> {
    assert_eq!(nm.len(), delta_values.len() * omega_values.len());
    let n_omega = omega_values.len();
    let mut ridges = Vec::new();
    for (row, &delta) in delta_values.iter().enumerate() {
        let col = &nm[row * n_omega..(row + 1) * n_omega];
        if n_omega < 2 {
            continue;
        }
        // 3-point moving average; ends averaged over the available pair.
        let smooth: Vec<f64> = (0..n_omega)
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(n_omega - 1);
                col[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();
        let col_max = smooth.iter().cloned().fold(0.0_f64, f64::max);
        let floor = (0.1 * col_max).max(1e-9);
        for i in 0..n_omega {
            let up_ok = i == 0 || smooth[i] > smooth[i - 1];
            let down_ok = i == n_omega - 1 || smooth[i] >= smooth[i + 1];
            if up_ok && down_ok && smooth[i] >= floor {
                ridges.push(RidgePoint {
                    delta_mhz: delta,
                    omega_mhz: omega_values[i],
                    nm: col[i],
                });
            }
        }
    }
    ridges
}

/// A (δ, Ω) plane scan with extracted NM ridges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CircleScanSummary {
    pub outcome: SweepOutcome,
    pub ridges: Vec<RidgePoint>,
}

/// Scan the (δ, Ω) plane and extract the NM ridge locations.
///
/// The detuning axis is the outer loop; the drive axis the inner one.
pub fn circle_scan(
    base: &SweepBase,
    delta_axis: &AxisSpec,
    omega_axis: &AxisSpec,
    stream: Option<&Path>,
    resume: bool,
) -> Result<CircleScanSummary> {
    if delta_axis.name != AxisName::DetuningMhz || omega_axis.name != AxisName::RabiMhz {
        return Err(Error::Validation(
            "circle_scan: axes must be (detuning_mhz, rabi_mhz)".into(),
        ));
    }
    let axes = [delta_axis.clone(), omega_axis.clone()];
    let outcome = run_sweep(base, &axes, stream, resume)?;
    let nm: Vec<f64> = outcome.points.iter().map(|p| p.nm).collect();
    let ridges = extract_ridges(&delta_axis.values(), &omega_axis.values(), &nm);
    Ok(CircleScanSummary { outcome, ridges })
}

/// The four one-dimensional convergence studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    /// NM versus evolution window t_end at fixed output spacing.
    Window,
    /// NM versus number of time samples at fixed window.
    Resolution,
    /// Noisy NM versus shots per point.
    Repetitions,
    /// NM versus the first branch's dephasing rate.
    Dephasing,
}

impl StudyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::Window => "window",
            StudyKind::Resolution => "resolution",
            StudyKind::Repetitions => "repetitions",
            StudyKind::Dephasing => "dephasing",
        }
    }
}

/// The default axis scanned by each convergence study.
pub fn default_study_axis(kind: StudyKind) -> AxisSpec {
    match kind {
        StudyKind::Window => AxisSpec {
            name: AxisName::TEnd,
            min: 20.0,
            max: 100.0,
            n_points: 9,
            scale: AxisScale::Linear,
        },
        StudyKind::Resolution => AxisSpec {
            name: AxisName::NPointsTime,
            min: 51.0,
            max: 401.0,
            n_points: 8,
            scale: AxisScale::Linear,
        },
        StudyKind::Repetitions => AxisSpec {
            name: AxisName::NCycles,
            min: 10.0,
            max: 100_000.0,
            n_points: 9,
            scale: AxisScale::Log,
        },
        StudyKind::Dephasing => AxisSpec {
            name: AxisName::GammaPlusMhz,
            min: 0.0,
            max: 0.02,
            n_points: 11,
            scale: AxisScale::Linear,
        },
    }
}

/// Run one convergence study over its default axis (or an explicit one).
///
/// The `Repetitions` study varies only the sampling, so the underlying pair
/// is evolved once and resampled per point — bit-identical to the generic
/// path (the per-point noise seeds depend only on the grid index), but
/// without redundant integrations.
pub fn convergence_study(
    kind: StudyKind,
    base: &SweepBase,
    axis: Option<AxisSpec>,
    stream: Option<&Path>,
    resume: bool,
) -> Result<SweepOutcome> {
    let axis = axis.unwrap_or_else(|| default_study_axis(kind));
    let expected = match kind {
        StudyKind::Window => AxisName::TEnd,
        StudyKind::Resolution => AxisName::NPointsTime,
        StudyKind::Repetitions => AxisName::NCycles,
        StudyKind::Dephasing => AxisName::GammaPlusMhz,
    };
    if axis.name != expected {
        return Err(Error::Validation(format!(
            "convergence study {}: axis must be {}, got {}",
            kind.as_str(),
            expected.as_str(),
            axis.name.as_str()
        )));
    }
    if kind == StudyKind::Repetitions {
        return repetitions_study(base, &axis, stream, resume);
    }
    run_sweep(base, &[axis], stream, resume)
}

/// Shot-count study specialization: one evolution, many samplings.
fn repetitions_study(
    base: &SweepBase,
    axis: &AxisSpec,
    stream: Option<&Path>,
    resume: bool,
) -> Result<SweepOutcome> {
    axis.validate()?;
    base.validate()?;
    let shots = base.shots.as_ref().ok_or_else(|| {
        Error::Validation(
            "sweep over n_cycles requires a shots configuration \
             (base seed and cycle count)"
                .into(),
        )
    })?;
    let pair = nm_for_pair(&base.params, &base.init, &base.grid, base.frame, &base.opts)?;
    let values = axis.values();
    let done = match (stream, resume) {
        (Some(p), true) => read_stream(p)?,
        _ => HashMap::new(),
    };
    let mut sink = match stream {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            Some(OpenOptions::new().create(true).append(true).open(p)?)
        }
        None => None,
    };
    let mut points = Vec::with_capacity(values.len());
    for (index, &v) in values.iter().enumerate() {
        if let Some(p) = done.get(&index) {
            points.push(p.clone());
            continue;
        }
        let started = Instant::now();
        let point_cfg = ShotConfig {
            n_cycles: v.round() as usize,
            seed: derive_seed(shots.seed, &[SWEEP_SEED_TAG, index as u64]),
        };
        point_cfg.validate()?;
        let noisy = sample_pair(&pair.traj1, &pair.traj2, &point_cfg)?;
        let (nm, delta_nm) = noisy_nm(&noisy)?;
        let point = SweepPoint {
            index,
            values: vec![v],
            nm,
            nm_err: Some(delta_nm),
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        if let Some(f) = &mut sink {
            writeln!(f, "{}", serde_json::to_string(&point)?)?;
            f.flush()?;
        }
        points.push(point);
    }
    points.sort_by_key(|p| p.index);
    Ok(SweepOutcome { axes: vec![axis.clone()], points })
}

/// Write a sweep outcome as CSV: one axis column per axis, then nm, nm_err
/// (empty when not simulated), wall_time_s.
pub fn write_sweep_csv(out: &SweepOutcome, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = out
        .axes
        .iter()
        .map(|a| a.name.as_str().to_string())
        .collect();
    header.extend(["nm".into(), "nm_err".into(), "wall_time_s".into()]);
    w.write_record(&header)?;
    for p in &out.points {
        let mut rec: Vec<String> = p.values.iter().map(|v| format!("{v:.16e}")).collect();
        rec.push(format!("{:.16e}", p.nm));
        rec.push(match p.nm_err {
            Some(e) => format!("{e:.16e}"),
            None => String::new(),
        });
        rec.push(format!("{:.6e}", p.wall_time_s));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
