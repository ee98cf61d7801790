//! Operators and states on the qubit ⊗ motion Hilbert space.
//!
//! Basis conventions, fixed here once and relied on everywhere else:
//!
//! * Qubit index 0 is the excited state |e⟩ and index 1 the ground state
//!   |g⟩, so σz = diag(+1, −1) and σ₊ = |e⟩⟨g|.
//! * The full space is ordered qubit ⊗ mode₁ (⊗ mode₂); a basis index is
//!   q·M + m with M the motion dimension.
//! * Angular frequencies in rad/μs: a config value of x MHz enters the
//!   Hamiltonian as 2π·x, and time is measured in μs throughout.
//!
//! The laser-frame Hamiltonian for modes i = 1..k (k ≤ 2) is
//!
//! H = (δ/2)σz + Σᵢ νᵢ aᵢ†aᵢ + (Ω/2) (σ₊ e^{iφ} e^{iΣᵢηᵢ(aᵢ+aᵢ†)} + h.c.),
//!
//! with the full displacement coupling e^{iΣηᵢ(aᵢ+aᵢ†)} — one recoil kick
//! displacing every mode — kept to all orders in η: neither the
//! rotating-wave nor the Lamb-Dicke approximation is taken, which is what
//! makes the Ω ~ νᵢ regime accessible.

use ndarray::linalg::kron;
use ndarray::{array, Array1, Array2, ArrayView2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::linalg::{dagger, expm};
use crate::{Error, Result};

/// Default trap and drive parameters (the hardware this tool models).
pub mod defaults {
    /// Radial mode frequencies in MHz (×2π internally).
    pub const NU1_MHZ: f64 = 2.32;
    pub const NU2_MHZ: f64 = 3.16;
    /// Lamb-Dicke parameters of the two radial modes.
    pub const ETA1: f64 = 0.069;
    pub const ETA2: f64 = 0.072;
    /// Default drive strength in MHz.
    pub const RABI_MHZ: f64 = 2.245;
    /// Default qubit dephasing rate in 1/μs.
    pub const GAMMA_PER_US: f64 = 0.0049;
    /// Default thermal occupation after Doppler + sideband cooling.
    pub const NBAR: f64 = 0.05;
}

const TWO_PI: f64 = std::f64::consts::TAU;

/// How the configured dephasing values are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaUnits {
    /// Value is a rate in 1/μs, used in the dissipator as-is (default).
    #[default]
    PerUs,
    /// Value is an ordinary frequency in MHz; the rate is 2π × value.
    MhzAngular,
}

impl GammaUnits {
    /// Convert a configured dephasing value into a rate in 1/μs.
    pub fn rate(self, value: f64) -> f64 {
        match self {
            GammaUnits::PerUs => value,
            GammaUnits::MhzAngular => TWO_PI * value,
        }
    }
}

/// One quantized motional mode: trap frequency, coupling, and truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    /// Mode frequency ν/2π in MHz.
    pub frequency_mhz: f64,
    /// Lamb-Dicke parameter η.
    pub lamb_dicke: f64,
    /// Fock-space truncation dimension.
    pub fock_dim: usize,
    /// Mean thermal occupation n̄ used when no explicit motional state is
    /// configured for this mode.
    #[serde(default)]
    pub nbar: f64,
}

impl ModeSpec {
    /// Angular frequency ν in rad/μs.
    pub fn nu(&self) -> f64 {
        TWO_PI * self.frequency_mhz
    }

    /// Thermal population that the truncation cuts off: (n̄/(1+n̄))^fock_dim.
    ///
    /// A sanity figure for truncation adequacy — below ~10⁻⁶ the missing
    /// tail cannot influence results at the tolerances used here.
    pub fn truncation_tail(&self) -> f64 {
        if self.nbar <= 0.0 {
            0.0
        } else {
            (self.nbar / (1.0 + self.nbar)).powi(self.fock_dim as i32)
        }
    }
}

/// Initial state of one motional mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionalState {
    Ground,
    Thermal { nbar: f64 },
    Coherent { alpha_re: f64, alpha_im: f64 },
}

impl MotionalState {
    /// Density matrix of this state in a `dim`-dimensional Fock space.
    pub fn density(&self, dim: usize) -> Array2<C64> {
        match *self {
            MotionalState::Ground => {
                let mut rho = Array2::zeros((dim, dim));
                rho[[0, 0]] = C64::new(1.0, 0.0);
                rho
            }
            MotionalState::Thermal { nbar } => thermal_state(nbar, dim),
            MotionalState::Coherent { alpha_re, alpha_im } => {
                let v = coherent_vector(C64::new(alpha_re, alpha_im), dim);
                let mut rho = Array2::zeros((dim, dim));
                for i in 0..dim {
                    for j in 0..dim {
                        rho[[i, j]] = v[i] * v[j].conj();
                    }
                }
                rho
            }
        }
    }
}

/// Physical parameters of one simulation: drive, dephasing, and modes.
///
/// Frequencies are stored in ordinary MHz exactly as configured; the
/// accessor methods do the single ×2π conversion to angular units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Rabi frequency Ω/2π in MHz.
    pub rabi_mhz: f64,
    /// Laser detuning δ/2π in MHz.
    pub detuning_mhz: f64,
    /// Laser phase φ in radians.
    #[serde(default)]
    pub laser_phase: f64,
    /// Dephasing value for the first state of a pair (units per `gamma_units`).
    pub gamma_plus_mhz: f64,
    /// Dephasing value for the second state of a pair.
    pub gamma_minus_mhz: f64,
    /// Interpretation of the two dephasing values.
    #[serde(default)]
    pub gamma_units: GammaUnits,
    /// One or two quantized motional modes.
    pub modes: Vec<ModeSpec>,
}

impl ModelParams {
    /// Single-mode setup at the first radial mode with sensible defaults.
    pub fn single_mode(dim: usize) -> Self {
        ModelParams {
            rabi_mhz: defaults::RABI_MHZ,
            detuning_mhz: 0.0,
            laser_phase: 0.0,
            gamma_plus_mhz: defaults::GAMMA_PER_US,
            gamma_minus_mhz: defaults::GAMMA_PER_US,
            gamma_units: GammaUnits::PerUs,
            modes: vec![ModeSpec {
                frequency_mhz: defaults::NU1_MHZ,
                lamb_dicke: defaults::ETA1,
                fock_dim: dim,
                nbar: defaults::NBAR,
            }],
        }
    }

    /// Two-mode setup with both radial modes at their default parameters.
    pub fn two_mode(dim1: usize, dim2: usize) -> Self {
        let mut p = Self::single_mode(dim1);
        p.modes.push(ModeSpec {
            frequency_mhz: defaults::NU2_MHZ,
            lamb_dicke: defaults::ETA2,
            fock_dim: dim2,
            nbar: defaults::NBAR,
        });
        p
    }

    /// Angular Rabi frequency Ω in rad/μs.
    pub fn omega(&self) -> f64 {
        TWO_PI * self.rabi_mhz
    }

    /// Angular detuning δ in rad/μs.
    pub fn delta(&self) -> f64 {
        TWO_PI * self.detuning_mhz
    }

    /// Dephasing rate (1/μs) for the first member of a state pair.
    pub fn gamma1(&self) -> f64 {
        self.gamma_units.rate(self.gamma_plus_mhz)
    }

    /// Dephasing rate (1/μs) for the second member of a state pair.
    pub fn gamma2(&self) -> f64 {
        self.gamma_units.rate(self.gamma_minus_mhz)
    }

    /// Fock dimensions of the modes, in embedding order.
    pub fn mode_dims(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m.fock_dim).collect()
    }

    /// Default motional preparation: every mode thermal at its configured n̄.
    pub fn thermal_motion(&self) -> Vec<MotionalState> {
        self.modes
            .iter()
            .map(|m| MotionalState::Thermal { nbar: m.nbar })
            .collect()
    }

    /// Dimension of the motion factor, Πᵢ dimᵢ.
    pub fn motion_dim(&self) -> usize {
        self.modes.iter().map(|m| m.fock_dim).product()
    }

    /// Dimension of the full qubit ⊗ motion space.
    pub fn total_dim(&self) -> usize {
        2 * self.motion_dim()
    }

    /// Largest angular frequency scale in the problem, max(ν_max, Ω, |δ|).
    ///
    /// Fixed-step integrators size their substeps against this.
    pub fn max_angular_scale(&self) -> f64 {
        let nu_max = self
            .modes
            .iter()
            .map(|m| m.nu())
            .fold(0.0_f64, f64::max);
        nu_max.max(self.omega()).max(self.delta().abs())
    }

    /// Validate physical sanity; error messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.modes.len() > 2 {
            return Err(Error::Validation(format!(
                "modes: expected 1 or 2 motional modes, got {}",
                self.modes.len()
            )));
        }
        for (i, m) in self.modes.iter().enumerate() {
            if m.fock_dim < 2 {
                return Err(Error::Validation(format!(
                    "modes[{i}].fock_dim: Fock truncation must be at least 2, got {}",
                    m.fock_dim
                )));
            }
            if !(m.nbar >= 0.0) || !m.nbar.is_finite() {
                return Err(Error::Validation(format!(
                    "modes[{i}].nbar: must be a non-negative finite occupation, got {}",
                    m.nbar
                )));
            }
            if !(m.frequency_mhz > 0.0) || !m.frequency_mhz.is_finite() {
                return Err(Error::Validation(format!(
                    "modes[{i}].frequency_mhz: must be a positive finite frequency, got {}",
                    m.frequency_mhz
                )));
            }
            if !(m.lamb_dicke >= 0.0) || !m.lamb_dicke.is_finite() {
                return Err(Error::Validation(format!(
                    "modes[{i}].lamb_dicke: must be a non-negative finite number, got {}",
                    m.lamb_dicke
                )));
            }
        }
        if !(self.rabi_mhz >= 0.0) || !self.rabi_mhz.is_finite() {
            return Err(Error::Validation(format!(
                "rabi_mhz: must be non-negative and finite, got {}",
                self.rabi_mhz
            )));
        }
        if !self.detuning_mhz.is_finite() {
            return Err(Error::Validation(format!(
                "detuning_mhz: must be finite, got {}",
                self.detuning_mhz
            )));
        }
        for (name, g) in [("gamma_plus_mhz", self.gamma_plus_mhz), ("gamma_minus_mhz", self.gamma_minus_mhz)] {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::Validation(format!(
                    "{name}: dephasing must be non-negative and finite, got {g}"
                )));
            }
        }
        Ok(())
    }
}

/// 2×2 Pauli matrices and ladder operators in the |e⟩, |g⟩ basis.
pub fn sigma_x() -> Array2<C64> {
    array![
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
    ]
}

pub fn sigma_y() -> Array2<C64> {
    array![
        [C64::new(0.0, 0.0), C64::new(0.0, -1.0)],
        [C64::new(0.0, 1.0), C64::new(0.0, 0.0)]
    ]
}

pub fn sigma_z() -> Array2<C64> {
    array![
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(-1.0, 0.0)]
    ]
}

/// σ₊ = |e⟩⟨g|.
pub fn sigma_plus() -> Array2<C64> {
    array![
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(0.0, 0.0)]
    ]
}

/// Annihilation operator on a truncated Fock space: ⟨n−1|a|n⟩ = √n.
pub fn annihilation(dim: usize) -> Array2<C64> {
    let mut a = Array2::zeros((dim, dim));
    for n in 1..dim {
        a[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Number operator a†a.
pub fn number_op(dim: usize) -> Array2<C64> {
    let mut n = Array2::zeros((dim, dim));
    for k in 0..dim {
        n[[k, k]] = C64::new(k as f64, 0.0);
    }
    n
}

/// Displacement coupling V = e^{iη(a+a†)}, the laser photon-recoil kick.
///
/// Computed as a matrix exponential of the truncated i·η(a+a†); the result
/// is unitary on the truncated space and its low-n block converges very
/// rapidly to the infinite-dimensional matrix elements for the η ≲ 0.1
/// couplings this tool targets.
pub fn displacement_coupling(eta: f64, dim: usize) -> Array2<C64> {
    let a = annihilation(dim);
    let x = &a + &dagger(&a.view());
    let gen = x.mapv(|z| z * C64::new(0.0, eta));
    expm(&gen.view())
}

/// Truncated thermal state, renormalized to unit trace.
///
/// Populations follow the geometric law pₙ ∝ (n̄/(1+n̄))ⁿ; after truncation
/// at `dim` levels the distribution is rescaled so the trace is exactly 1.
pub fn thermal_state(nbar: f64, dim: usize) -> Array2<C64> {
    assert!(nbar >= 0.0, "thermal occupation must be non-negative");
    let mut rho = Array2::zeros((dim, dim));
    if nbar == 0.0 {
        rho[[0, 0]] = C64::new(1.0, 0.0);
        return rho;
    }
    let r = nbar / (1.0 + nbar);
    let mut p = 1.0;
    let mut total = 0.0;
    for n in 0..dim {
        rho[[n, n]] = C64::new(p, 0.0);
        total += p;
        p *= r;
    }
    rho.mapv_inplace(|z| z / total);
    rho
}

/// Truncated coherent state |α⟩ as a normalized ket.
pub fn coherent_vector(alpha: C64, dim: usize) -> Array1<C64> {
    let mut v = Array1::zeros(dim);
    let mut amp = C64::new(1.0, 0.0);
    for n in 0..dim {
        v[n] = amp;
        amp *= alpha / C64::new(((n + 1) as f64).sqrt(), 0.0);
    }
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv_inplace(|z| z / norm);
    v
}

/// Embed a single-mode operator into the motion factor (identity elsewhere).
pub fn embed_motion_op(op: &ArrayView2<C64>, mode_idx: usize, dims: &[usize]) -> Array2<C64> {
    let mut m = Array2::<C64>::eye(1);
    for (i, &d) in dims.iter().enumerate() {
        if i == mode_idx {
            m = kron(&m, &op.to_owned());
        } else {
            m = kron(&m, &Array2::<C64>::eye(d));
        }
    }
    m
}

/// Motional free Hamiltonian Σᵢ νᵢ aᵢ†aᵢ on the full space (qubit ⊗ motion).
fn motion_hamiltonian(p: &ModelParams) -> Array2<C64> {
    let dims = p.mode_dims();
    let m = p.motion_dim();
    let mut h_mot = Array2::<C64>::zeros((m, m));
    for (i, mode) in p.modes.iter().enumerate() {
        let n_i = embed_motion_op(&number_op(mode.fock_dim).view(), i, &dims);
        h_mot = h_mot + n_i.mapv(|z| z * mode.nu());
    }
    kron(&Array2::<C64>::eye(2), &h_mot)
}

/// Drive coupling C = (Ω/2) e^{iφ} σ₊ ⊗ V with V = e^{iΣᵢηᵢ(aᵢ+aᵢ†)}.
///
/// The Hamiltonian contains C + C† (laser frame) or e^{iδt}C + h.c.
/// (interaction frame). One photon recoil kicks every motional mode at
/// once, so the motion factor is the exponential of the *summed*
/// displacement generators — equivalently the tensor product of per-mode
/// displacement operators, V = V₁ ⊗ V₂, since generators of different
/// modes commute. (A sum V₁⊗I + I⊗V₂ would instead describe two
/// independent drive tones and, among other defects, doubles the carrier
/// Rabi rate at η = 0.)
fn coupling_op(p: &ModelParams) -> Array2<C64> {
    let mut w = Array2::<C64>::eye(1);
    for mode in &p.modes {
        w = kron(&w, &displacement_coupling(mode.lamb_dicke, mode.fock_dim));
    }
    let phase = C64::new(0.0, p.laser_phase).exp();
    let amp = phase * (0.5 * p.omega());
    kron(&sigma_plus(), &w.mapv(|z| z * amp))
}

/// The two time-independent pieces of the interaction-frame Hamiltonian:
/// (Σᵢνᵢaᵢ†aᵢ, C). H_int(t) = h_mot + e^{iδt}·C + e^{−iδt}·C†.
pub fn interaction_parts(p: &ModelParams) -> (Array2<C64>, Array2<C64>) {
    (motion_hamiltonian(p), coupling_op(p))
}

/// Full laser-frame Hamiltonian in rad/μs.
///
/// H = (δ/2)σz + Σᵢ νᵢaᵢ†aᵢ + (Ω/2)(σ₊ e^{iφ} e^{iΣᵢηᵢ(aᵢ+aᵢ†)} + h.c.).
pub fn build_hamiltonian(p: &ModelParams) -> Array2<C64> {
    let (h_mot, c) = interaction_parts(p);
    let m = p.motion_dim();
    let sz = kron(&sigma_z(), &Array2::<C64>::eye(m));
    h_mot + sz.mapv(|z| z * (0.5 * p.delta())) + &c + dagger(&c.view())
}

/// Interaction-frame Hamiltonian at time t (rotating at the qubit detuning):
/// H_int(t) = Σᵢ νᵢaᵢ†aᵢ + (Ω/2)(σ₊ e^{iΣᵢηᵢ(aᵢ+aᵢ†)} e^{i(δt+φ)} + h.c.).
pub fn interaction_hamiltonian(p: &ModelParams, t: f64) -> Array2<C64> {
    let (h_mot, c) = interaction_parts(p);
    let phase = C64::new(0.0, p.delta() * t).exp();
    let rotating = c.mapv(|z| z * phase);
    h_mot + &rotating + dagger(&rotating.view())
}

/// Reduced qubit state: trace out all motional modes from a (2M)×(2M) ρ.
pub fn partial_trace_motion(rho: &ArrayView2<C64>, motion_dim: usize) -> Array2<C64> {
    let n = rho.nrows();
    debug_assert_eq!(n, 2 * motion_dim, "state dimension must be 2 × motion");
    let mut q = Array2::zeros((2, 2));
    for a in 0..2 {
        for b in 0..2 {
            let mut s = C64::new(0.0, 0.0);
            for m in 0..motion_dim {
                s += rho[[a * motion_dim + m, b * motion_dim + m]];
            }
            q[[a, b]] = s;
        }
    }
    q
}

/// σz sign s(idx) = ±1 of each basis index: +1 on the |e⟩ block, −1 on |g⟩.
///
/// The pure-dephasing map multiplies ρ entry (a,b) by e^{−2γt} exactly when
/// s(a)·s(b) = −1; this vector is what the split-step integrator needs.
pub fn qubit_signs(motion_dim: usize) -> Array1<f64> {
    let mut s = Array1::zeros(2 * motion_dim);
    for i in 0..motion_dim {
        s[i] = 1.0;
        s[motion_dim + i] = -1.0;
    }
    s
}

/// Total population in the top `levels` Fock states of one mode.
///
/// Used as a truncation-leakage diagnostic: if this grows past ~1e−4 the
/// Fock space is too small for the run.
pub fn mode_tail_population(
    rho: &ArrayView2<C64>,
    dims: &[usize],
    mode_idx: usize,
    levels: usize,
) -> f64 {
    let motion_dim: usize = dims.iter().product();
    let d = dims[mode_idx];
    let cutoff = d.saturating_sub(levels);
    // Stride layout: index = q·M + Σᵢ nᵢ·(Π_{j>i} dⱼ).
    let stride: usize = dims[mode_idx + 1..].iter().product();
    let mut tail = 0.0;
    for q in 0..2 {
        for m in 0..motion_dim {
            let n_i = (m / stride) % d;
            if n_i >= cutoff {
                tail += rho[[q * motion_dim + m, q * motion_dim + m]].re;
            }
        }
    }
    tail
}

/// Assemble the initial product state ρ_qubit ⊗ ρ_mode1 (⊗ ρ_mode2).
pub fn compose_initial(
    qubit: &ArrayView2<C64>,
    motion: &[Array2<C64>],
) -> Array2<C64> {
    let mut rho = qubit.to_owned();
    for m in motion {
        rho = kron(&rho, m);
    }
    rho
}

/// Sanity-check a density matrix: unit trace and Hermiticity within `tol`.
pub fn check_density(rho: &ArrayView2<C64>, tol: f64) -> Result<()> {
    let tr = crate::linalg::trace(rho);
    if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
        return Err(Error::Validation(format!(
            "density matrix trace is {} + {}i, expected 1",
            tr.re, tr.im
        )));
    }
    let defect = crate::linalg::herm_defect(rho);
    if defect > tol {
        return Err(Error::Validation(format!(
            "density matrix deviates from Hermiticity by {defect:.3e}"
        )));
    }
    Ok(())
}
