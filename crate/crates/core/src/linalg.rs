//! Small dense complex matrix helpers shared by the solver and priors.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Replaces `m` by `(m + m^H) / 2`.
pub fn symmetrize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = C64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Largest absolute entry of `m - m^H`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Real part of `a^H m b`.
pub fn quad_form(m: &CMatrix, v: &CVector) -> f64 {
    v.dotc(&(m * v)).re
}

/// Solves `a x = b`, returning `None` when `a` is numerically singular.
pub fn solve(a: &CMatrix, b: &CVector) -> Option<CVector> {
    let lu = a.clone().lu();
    let x = lu.solve(b)?;
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite()).then_some(x)
}

pub fn inverse(a: &CMatrix) -> Option<CMatrix> {
    let inv = a.clone().try_inverse()?;
    inv.iter()
        .all(|z| z.re.is_finite() && z.im.is_finite())
        .then_some(inv)
}

/// `log |det a|`, `-inf` for an exactly singular matrix.
pub fn log_abs_det(a: &CMatrix) -> f64 {
    let d = a.clone().lu().determinant();
    let n = d.norm();
    if n == 0.0 {
        f64::NEG_INFINITY
    } else {
        n.ln()
    }
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut h = m.clone();
    symmetrize(&mut h);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Rank-one update `m += scale * v v^H`. Only the upper triangle is computed
/// and mirrored, so a Hermitian `m` stays exactly Hermitian.
pub fn add_outer(m: &mut CMatrix, v: &[C64], scale: f64) {
    let n = v.len();
    for i in 0..n {
        let vi = v[i] * scale;
        m[(i, i)] += C64::new(vi.re * v[i].re + vi.im * v[i].im, 0.0);
        for j in i + 1..n {
            let z = vi * v[j].conj();
            m[(i, j)] += z;
            m[(j, i)] += z.conj();
        }
    }
}

pub fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}
