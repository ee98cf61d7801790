//! Dense complex linear-algebra kernels shared by the rest of the crate.
//!
//! Everything operates on `ndarray::Array2<Complex64>`. The centerpiece is
//! [`expm`], a Padé(13) scaling-and-squaring matrix exponential that works on
//! a general complex matrix without any eigendecomposition, so it handles the
//! non-normal matrices produced by dissipative generators just as well as
//! Hermitian Hamiltonians. Linear solves use LU with partial pivoting; the
//! positivity check is a shifted Cholesky factorization, which costs n³/6 and
//! avoids pulling in a full eigensolver.

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64 as C64;

use crate::{Error, Result};

/// Conjugate transpose A†.
pub fn dagger(a: &ArrayView2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Matrix trace Σᵢ Aᵢᵢ.
pub fn trace(a: &ArrayView2<C64>) -> C64 {
    a.diag().iter().sum()
}

/// Induced 1-norm: the maximum absolute column sum.
pub fn one_norm(a: &ArrayView2<C64>) -> f64 {
    let mut worst = 0.0_f64;
    for col in a.columns() {
        let s: f64 = col.iter().map(|z| z.norm()).sum();
        if s > worst {
            worst = s;
        }
    }
    worst
}

/// Largest entrywise deviation from Hermiticity, max |Aᵢⱼ − Āⱼᵢ|.
pub fn herm_defect(a: &ArrayView2<C64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            let d = (a[[i, j]] - a[[j, i]].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Replace A by its Hermitian part (A + A†)/2.
///
/// Used as numerical hygiene on density matrices at output samples; the
/// anti-Hermitian residue of a well-behaved integration is at roundoff level,
/// and discarding it keeps downstream eigenvalue formulas honest.
pub fn hermitize(a: &mut Array2<C64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[[i, j]] + a[[j, i]].conj());
            a[[i, j]] = m;
            a[[j, i]] = m.conj();
        }
        a[[i, i]] = C64::new(a[[i, i]].re, 0.0);
    }
}

/// Padé(13) order threshold from the scaling-and-squaring analysis.
const PADE13_THETA: f64 = 5.371_920_351_148_152;

/// Matrix exponential e^A by Padé(13) approximation with scaling and squaring.
///
/// The matrix is scaled by 2^{-s} until its 1-norm is below the Padé(13)
/// threshold, the rational approximant p(A)/q(A) is evaluated with a single
/// LU solve, and the result is squared s times. Exact for nilpotent and
/// diagonal inputs to roundoff; backward-stable for everything this crate
/// feeds it (anti-Hermitian generators −iHt and small dissipative blocks).
pub fn expm(a: &ArrayView2<C64>) -> Array2<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");
    let b: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    let norm = one_norm(a);
    let s = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let scale = (2.0_f64).powi(s as i32).recip();
    let a = a.mapv(|z| z * scale);

    let id = Array2::<C64>::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let u_inner = a6.mapv(|z| z * b[13]) + a4.mapv(|z| z * b[11]) + a2.mapv(|z| z * b[9]);
    let u_poly = a6.dot(&u_inner)
        + a6.mapv(|z| z * b[7])
        + a4.mapv(|z| z * b[5])
        + a2.mapv(|z| z * b[3])
        + id.mapv(|z| z * b[1]);
    let u = a.dot(&u_poly);

    let v = a6.dot(&(a6.mapv(|z| z * b[12]) + a4.mapv(|z| z * b[10]) + a2.mapv(|z| z * b[8])))
        + a6.mapv(|z| z * b[6])
        + a4.mapv(|z| z * b[4])
        + a2.mapv(|z| z * b[2])
        + id.mapv(|z| z * b[0]);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = solve(&q.view(), &p.view())
        .expect("Padé(13) denominator is nonsingular after scaling");
    for _ in 0..s {
        r = r.dot(&r);
    }
    r
}

/// Solve A·X = B for X with LU factorization and partial pivoting.
pub fn solve(a: &ArrayView2<C64>, rhs: &ArrayView2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "solve requires a square coefficient matrix");
    assert_eq!(
        n,
        rhs.nrows(),
        "solve requires compatible right-hand-side dimensions"
    );
    let mut lu = a.to_owned();
    let mut x = rhs.to_owned();
    let zero = C64::new(0.0, 0.0);

    for k in 0..n {
        let mut p = k;
        let mut best = lu[[k, k]].norm();
        for i in (k + 1)..n {
            let mag = lu[[i, k]].norm();
            if mag > best {
                best = mag;
                p = i;
            }
        }
        if !(best > 0.0) || !best.is_finite() {
            return Err(Error::SingularMatrix);
        }
        if p != k {
            for j in 0..n {
                lu.swap([k, j], [p, j]);
            }
            for j in 0..x.ncols() {
                x.swap([k, j], [p, j]);
            }
        }
        let pivot = lu[[k, k]];
        for i in (k + 1)..n {
            let m = lu[[i, k]] / pivot;
            lu[[i, k]] = m;
            if m == zero {
                continue;
            }
            let (row_k, mut row_i) = lu.multi_slice_mut((s![k, k + 1..], s![i, k + 1..]));
            row_i.scaled_add(-m, &row_k);
            let (xrow_k, mut xrow_i) = x.multi_slice_mut((s![k, ..], s![i, ..]));
            xrow_i.scaled_add(-m, &xrow_k);
        }
    }

    for k in (0..n).rev() {
        for i in (k + 1)..n {
            let m = lu[[k, i]];
            if m == zero {
                continue;
            }
            let (xrow_i, mut xrow_k) = x.multi_slice_mut((s![i, ..], s![k, ..]));
            xrow_k.scaled_add(-m, &xrow_i);
        }
        let pivot = lu[[k, k]];
        x.row_mut(k).mapv_inplace(|z| z / pivot);
    }
    Ok(x)
}

/// Check that a Hermitian matrix has no eigenvalue below −`floor`.
///
/// Attempts a Cholesky factorization of M + floor·I; success certifies
/// λ_min(M) > −floor without computing any eigenvalue. This is the cheapest
/// reliable positivity test for a density matrix and costs n³/6 flops.
pub fn is_psd_within(m: &ArrayView2<C64>, floor: f64) -> bool {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let mut a = m.to_owned();
    for i in 0..n {
        a[[i, i]] += floor;
    }
    for j in 0..n {
        let off: f64 = a.slice(s![j, ..j]).iter().map(|z| z.norm_sqr()).sum();
        let d = a[[j, j]].re - off;
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[[j, j]] = C64::new(d, 0.0);
        for i in (j + 1)..n {
            let dot: C64 = a
                .slice(s![i, ..j])
                .iter()
                .zip(a.slice(s![j, ..j]).iter())
                .map(|(x, y)| x * y.conj())
                .sum();
            let v = (a[[i, j]] - dot) / d;
            a[[i, j]] = v;
        }
    }
    true
}

/// Eigenvalues (λ₋, λ₊) of a 2×2 Hermitian matrix, in ascending order.
///
/// The off-diagonal is symmetrized first, so inputs that are Hermitian only
/// to roundoff still produce real eigenvalues:
/// λ± = (a+d)/2 ± √(((a−d)/2)² + |b|²).
pub fn herm2_eigvals(m: &ArrayView2<C64>) -> (f64, f64) {
    debug_assert!(m.nrows() == 2 && m.ncols() == 2);
    let a = m[[0, 0]].re;
    let d = m[[1, 1]].re;
    let off = 0.5 * (m[[0, 1]] + m[[1, 0]].conj());
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + off.norm_sqr()).sqrt();
    (mid - rad, mid + rad)
}
