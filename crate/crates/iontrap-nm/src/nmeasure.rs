//! Trace-distance non-Markovianity and its measurement-error chain.
//!
//! The measure quantifies information backflow between an orthogonal pair of
//! initial qubit states ρ₁(0) ⊥ ρ₂(0) evolved under identical dynamics:
//!
//! * trace distance  D(t) = ½ tr|ρ₁(t) − ρ₂(t)| = ½‖S⃗⁽¹⁾ − S⃗⁽²⁾‖,
//! * its slope       σ(tᵢ) = (D(tᵢ₊₁) − D(tᵢ₋₁)) / (2Δt)  (interior points),
//! * the NM integral N = Σ_{σ>0} σ(tᵢ)·Δt.
//!
//! Any σ > 0 interval means the distinguishability of the two states is
//! *growing* — information is flowing back from the motional environment —
//! which is impossible for a Markovian (CP-divisible) evolution.
//!
//! The error chain mirrors how a shot-noise-limited experiment propagates
//! tomography uncertainties through exactly these formulas, including the
//! conservative factor conventions and the degenerate-distance fallback.

use ndarray::ArrayView2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    evolve, ConservationReport, EvolveOptions, Frame, InitialCondition, PairBranch,
    QubitTrajectory, TimeGrid,
};
use crate::hilbert::{ModelParams, MotionalState};
use crate::linalg::herm2_eigvals;
use crate::{Error, Result};

/// Below this the trace distance is treated as degenerate in the error chain.
pub const DEGENERATE_D: f64 = 1e-12;

/// Trace distance of two qubit density matrices, D = ½ Σ|λᵢ(ρ₁−ρ₂)|.
///
/// The difference of two unit-trace Hermitian 2×2 matrices is traceless, so
/// its eigenvalues come in a ± pair and the closed 2×2 formula is exact.
pub fn trace_distance(rho1: &ArrayView2<C64>, rho2: &ArrayView2<C64>) -> f64 {
    assert!(
        rho1.nrows() == 2 && rho2.nrows() == 2,
        "trace_distance operates on reduced 2×2 qubit states"
    );
    let diff = rho1.to_owned() - rho2;
    let (lo, hi) = herm2_eigvals(&diff.view());
    0.5 * (lo.abs() + hi.abs())
}

/// Trace distance from two Bloch vectors: D = ½‖S⃗⁽¹⁾ − S⃗⁽²⁾‖.
pub fn trace_distance_bloch(s1: [f64; 3], s2: [f64; 3]) -> f64 {
    let dx = s1[0] - s2[0];
    let dy = s1[1] - s2[1];
    let dz = s1[2] - s2[2];
    0.5 * (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Trace-distance series of two Bloch trajectories on a common grid.
pub fn distance_series(a: &QubitTrajectory, b: &QubitTrajectory) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "trajectories must share the time grid");
    (0..a.len())
        .map(|i| trace_distance_bloch(a.bloch(i), b.bloch(i)))
        .collect()
}

/// σ(t) on the interior grid points (central differences).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSeries {
    /// Interior sample times t₁ … t_{n−2}.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Grid spacing the derivative was taken at.
    pub dt: f64,
}

/// Central-difference slope of the trace distance, interior points only.
///
/// σ(tᵢ) = (D(tᵢ₊₁) − D(tᵢ₋₁)) / (2Δt) for i = 1 … n−2; the endpoints have
/// no centered stencil and are deliberately not extrapolated. The grid must
/// be uniform — the symmetric stencil and the rectangle-rule NM sum both
/// assume a single Δt.
pub fn sigma_series(times: &[f64], d: &[f64]) -> Result<SigmaSeries> {
    if times.len() != d.len() {
        return Err(Error::Validation(format!(
            "sigma_series: {} times vs {} distances",
            times.len(),
            d.len()
        )));
    }
    if times.len() < 3 {
        return Err(Error::Validation(format!(
            "sigma_series: need at least 3 points for a central difference, got {}",
            times.len()
        )));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Validation(format!(
            "sigma_series: non-increasing time grid (Δt = {dt})"
        )));
    }
    let n = times.len();
    for i in 1..n - 1 {
        let step = times[i + 1] - times[i];
        if (step - dt).abs() > 1e-6 * dt {
            return Err(Error::Validation(format!(
                "sigma_series: non-uniform grid (Δt₀ = {dt}, Δt_{i} = {step})"
            )));
        }
    }
    let mut out_t = Vec::with_capacity(n - 2);
    let mut out_v = Vec::with_capacity(n - 2);
    for i in 1..n - 1 {
        out_t.push(times[i]);
        out_v.push((d[i + 1] - d[i - 1]) / (2.0 * dt));
    }
    Ok(SigmaSeries { times: out_t, values: out_v, dt })
}

/// NM integral: rectangle-rule sum of the strictly positive slope samples,
/// N = Σ_{σ(tᵢ)>0} σ(tᵢ)·Δt.
pub fn nm_integral(sigma: &[f64], dt: f64) -> f64 {
    // Float `Sum` folds from −0.0, so a Markovian (empty) sum would
    // serialize as "-0.0"; adding +0.0 canonicalizes the sign.
    sigma.iter().filter(|&&s| s > 0.0).sum::<f64>() * dt + 0.0
}

/// Everything produced by one orthogonal-pair NM evaluation.
#[derive(Debug, Clone)]
pub struct PairResult {
    /// Grid times (same as the trajectories').
    pub times: Vec<f64>,
    /// Trace distance at every grid time.
    pub d: Vec<f64>,
    /// Slope series on the interior points.
    pub sigma: SigmaSeries,
    /// The non-Markovianity integral.
    pub nm: f64,
    /// Bloch trajectory of the first state (dephasing rate γ₁).
    pub traj1: QubitTrajectory,
    /// Bloch trajectory of the antipodal state (dephasing rate γ₂).
    pub traj2: QubitTrajectory,
    pub report1: ConservationReport,
    pub report2: ConservationReport,
}

/// Evolve an orthogonal pair and compute D(t), σ(t), and the NM integral.
///
/// The first branch starts from `init` and dephases at γ₁; the second from
/// the antipodal qubit state (same motional state) at γ₂. The trace distance
/// is frame-invariant — both states rotate identically — so the NM value does
/// not depend on the frame chosen for the evolution.
pub fn nm_for_pair(
    p: &ModelParams,
    init: &InitialCondition,
    grid: &TimeGrid,
    frame: Frame,
    opts: &EvolveOptions,
) -> Result<PairResult> {
    let init2 = init.antipodal();
    let opts1 = EvolveOptions { branch: PairBranch::First, ..opts.clone() };
    let opts2 = EvolveOptions { branch: PairBranch::Second, ..opts.clone() };
    let out1 = evolve(p, init, grid, frame, &opts1)?;
    let out2 = evolve(p, &init2, grid, frame, &opts2)?;
    pair_result_from_trajectories(out1.traj, out2.traj, out1.report, out2.report)
}

/// Assemble D/σ/NM from two already-computed trajectories.
pub fn pair_result_from_trajectories(
    traj1: QubitTrajectory,
    traj2: QubitTrajectory,
    report1: ConservationReport,
    report2: ConservationReport,
) -> Result<PairResult> {
    let d = distance_series(&traj1, &traj2);
    let sigma = sigma_series(&traj1.times, &d)?;
    let nm = nm_integral(&sigma.values, sigma.dt);
    Ok(PairResult {
        times: traj1.times.clone(),
        d,
        sigma,
        nm,
        traj1,
        traj2,
        report1,
        report2,
    })
}

/// One cell of the (θ, φ) maximization grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub theta: f64,
    pub phi: f64,
    pub nm: f64,
}

/// Result of maximizing NM over initial qubit pairs.
#[derive(Debug, Clone)]
pub struct MaximizeResult {
    pub best_theta: f64,
    pub best_phi: f64,
    pub best: PairResult,
    /// NM at every grid cell, in row-major (θ outer, φ inner) order.
    pub grid: Vec<GridCell>,
}

/// θ grid: endpoints included; the single-point grid is the equator.
fn theta_grid(n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![std::f64::consts::FRAC_PI_2];
    }
    (0..n)
        .map(|k| std::f64::consts::PI * k as f64 / (n - 1) as f64)
        .collect()
}

/// φ grid: n equally spaced points on [0, 2π).
fn phi_grid(n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..n)
        .map(|k| std::f64::consts::TAU * k as f64 / n as f64)
        .collect()
}

/// Maximize the NM integral over the initial orthogonal pair.
///
/// Scans an n_θ × n_φ grid of Bloch angles (default 11 × 12), evaluating
/// [`nm_for_pair`] at each cell in parallel, and returns the best cell with
/// its full pair result. The degenerate 1 × 1 grid evaluates exactly the
/// |+⟩/|−⟩ pair along x (θ = π/2, φ = 0).
pub fn nm_maximized(
    p: &ModelParams,
    motion: &[MotionalState],
    grid: &TimeGrid,
    frame: Frame,
    opts: &EvolveOptions,
    n_theta: usize,
    n_phi: usize,
) -> Result<MaximizeResult> {
    let thetas = theta_grid(n_theta);
    let phis = phi_grid(n_phi);
    let cells: Vec<(f64, f64)> = thetas
        .iter()
        .flat_map(|&t| phis.iter().map(move |&f| (t, f)))
        .collect();

    let evaluated: Vec<Result<(f64, f64, PairResult)>> = cells
        .par_iter()
        .map(|&(theta, phi)| {
            let init = InitialCondition { theta, phi, motion: motion.to_vec() };
            let pr = nm_for_pair(p, &init, grid, frame, opts)?;
            Ok((theta, phi, pr))
        })
        .collect();

    let mut grid_cells = Vec::with_capacity(evaluated.len());
    let mut best: Option<(f64, f64, PairResult)> = None;
    for item in evaluated {
        let (theta, phi, pr) = item?;
        grid_cells.push(GridCell { theta, phi, nm: pr.nm });
        let better = match &best {
            None => true,
            Some((_, _, b)) => pr.nm > b.nm,
        };
        if better {
            best = Some((theta, phi, pr));
        }
    }
    let (best_theta, best_phi, best) = best.expect("maximization grid is never empty");
    Ok(MaximizeResult { best_theta, best_phi, best, grid: grid_cells })
}

/// Quantum-projection-noise error of a Pauli expectation from N shots.
///
/// With p̂ the estimator of the excitation probability, ⟨σ⟩ = 2p̂ − 1 carries
/// the binomial standard error δ⟨σ⟩ = 2√(p̂(1−p̂)/N).
pub fn qpn_error(p_hat: f64, n_shots: usize) -> f64 {
    assert!(n_shots > 0, "qpn_error needs at least one shot");
    let p = p_hat.clamp(0.0, 1.0);
    2.0 * (p * (1.0 - p) / n_shots as f64).sqrt()
}

/// Per-component 1σ uncertainties of a Bloch trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochErrors {
    pub ex: Vec<f64>,
    pub ey: Vec<f64>,
    pub ez: Vec<f64>,
}

impl BlochErrors {
    pub fn zeros(n: usize) -> Self {
        BlochErrors { ex: vec![0.0; n], ey: vec![0.0; n], ez: vec![0.0; n] }
    }

    pub fn at(&self, i: usize) -> [f64; 3] {
        [self.ex[i], self.ey[i], self.ez[i]]
    }

    pub fn len(&self) -> usize {
        self.ex.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ex.is_empty()
    }
}

/// Propagated uncertainties of D(t), σ(t) and the NM integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorChain {
    /// δD at every grid point.
    pub delta_d: Vec<f64>,
    /// δσ at the interior points.
    pub delta_sigma: Vec<f64>,
    /// δN over the strictly positive σ samples.
    pub delta_nm: f64,
    /// Grid points where D < 1e-12 forced the degenerate fallback.
    pub degenerate: Vec<bool>,
}

/// Propagate per-point Bloch uncertainties through D → σ → NM.
///
/// Conventions follow the measurement analysis this models:
///
/// * δD = (1/(2D)) · √(Σ_l ΔS_l²·(δS_l⁽¹⁾² + δS_l⁽²⁾²)), a deliberately
///   conservative prefactor (twice the first-order propagation value);
/// * at degenerate distance (D < 1e-12) the direction of ΔS⃗ is undefined and
///   δD falls back to ½·max_l √(δS_l⁽¹⁾² + δS_l⁽²⁾²), with the point flagged;
/// * δσ(tᵢ) = (1/Δt) · √(δD(tᵢ₊₁)² + δD(tᵢ₋₁)²), again conservative;
/// * δN = √(Σ_{σ(tᵢ)>0} (δσ(tᵢ)·Δt)²).
pub fn error_chain(
    traj1: &QubitTrajectory,
    err1: &BlochErrors,
    traj2: &QubitTrajectory,
    err2: &BlochErrors,
    sigma: &SigmaSeries,
) -> ErrorChain {
    let n = traj1.len();
    assert_eq!(n, traj2.len());
    assert_eq!(n, err1.len());
    assert_eq!(n, err2.len());
    assert_eq!(n.saturating_sub(2), sigma.values.len());

    let mut delta_d = Vec::with_capacity(n);
    let mut degenerate = vec![false; n];
    for i in 0..n {
        let s1 = traj1.bloch(i);
        let s2 = traj2.bloch(i);
        let e1 = err1.at(i);
        let e2 = err2.at(i);
        let d = trace_distance_bloch(s1, s2);
        if d < DEGENERATE_D {
            degenerate[i] = true;
            let worst = (0..3)
                .map(|l| (e1[l] * e1[l] + e2[l] * e2[l]).sqrt())
                .fold(0.0_f64, f64::max);
            delta_d.push(0.5 * worst);
        } else {
            let mut acc = 0.0;
            for l in 0..3 {
                let ds = s1[l] - s2[l];
                acc += ds * ds * (e1[l] * e1[l] + e2[l] * e2[l]);
            }
            delta_d.push(acc.sqrt() / (2.0 * d));
        }
    }

    let dt = sigma.dt;
    let mut delta_sigma = Vec::with_capacity(n.saturating_sub(2));
    for i in 1..n - 1 {
        let v = (delta_d[i + 1].powi(2) + delta_d[i - 1].powi(2)).sqrt() / dt;
        delta_sigma.push(v);
    }

    let mut acc = 0.0;
    for (i, &s) in sigma.values.iter().enumerate() {
        if s > 0.0 {
            let term = delta_sigma[i] * dt;
            acc += term * term;
        }
    }
    ErrorChain { delta_d, delta_sigma, delta_nm: acc.sqrt(), degenerate }
}

/// Write the pair analysis as CSV: distance, slope, and (optionally) errors.
///
/// σ and δσ are defined only on interior points; boundary rows leave those
/// fields empty rather than inventing one-sided values.
pub fn write_pair_csv<W: std::io::Write>(
    mut w: W,
    pr: &PairResult,
    errors: Option<&ErrorChain>,
) -> Result<()> {
    if errors.is_some() {
        writeln!(w, "t_us,d,delta_d,sigma,delta_sigma")?;
    } else {
        writeln!(w, "t_us,d,sigma")?;
    }
    let n = pr.times.len();
    for i in 0..n {
        let interior = i >= 1 && i + 1 < n;
        let sigma = if interior {
            format!("{:.16e}", pr.sigma.values[i - 1])
        } else {
            String::new()
        };
        match errors {
            Some(ec) => {
                let ds = if interior {
                    format!("{:.16e}", ec.delta_sigma[i - 1])
                } else {
                    String::new()
                };
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},{sigma},{ds}",
                    pr.times[i], pr.d[i], ec.delta_d[i]
                )?;
            }
            None => {
                writeln!(w, "{:.16e},{:.16e},{sigma}", pr.times[i], pr.d[i])?;
            }
        }
    }
    Ok(())
}
