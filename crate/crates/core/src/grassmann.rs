//! Fourier truncations of the Hardy-space picture: Toeplitz operators, the
//! subspace W_m through its operator A_W, tau-functions det(I + R_W(g)), the
//! characteristic series φ, ψ and the duality between W and its annihilator.
//!
//! Coefficients are taken in normalized modes (z/s)^k on |z| = s. In the
//! λ = z² picture the circle is |λ| = s² with modes (λ/s²)^k, so z-mode 2k
//! and z-mode 2k+1 correspond to λ-mode k of the even and odd component.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::gamma::{GammaElement, GammaError};
use crate::herglotz::{HerglotzError, MFunction};
use crate::linalg::{cond1_estimate, fourier_coeffs, lu_log_det, trace_norm, LinalgError};
use crate::tau::{log_phi_coeffs, rho_from_coeffs, Route, TauError, TauResult};
use crate::C64;

const TOEPLITZ_COND_LIMIT: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrassmannError {
    #[error("Toeplitz matrix condition {cond:e} exceeds {limit:e}")]
    IllConditioned { cond: f64, limit: f64 },
    #[error("tau vanishes in the truncation")]
    TauZero,
    #[error("1 + φ vanishes on the contour")]
    ZeroOnContour,
    #[error("1 + φ vanishes at {z}")]
    DivZero { z: C64 },
    #[error("bad truncation: {0}")]
    BadTruncation(String),
    #[error("element has atoms inside |z| ≤ {s}")]
    AtomInsideCircle { s: f64 },
    #[error(transparent)]
    Herglotz(#[from] HerglotzError),
    #[error(transparent)]
    Gamma(#[from] GammaError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Modes −n..n on |z| = s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourierTruncation {
    pub s: f64,
    pub n: usize,
}

impl FourierTruncation {
    pub fn new(s: f64, n: usize) -> Result<Self, GrassmannError> {
        if !(s > 0.0) || n < 2 {
            return Err(GrassmannError::BadTruncation(format!("s = {s}, N = {n}")));
        }
        Ok(FourierTruncation { s, n })
    }

    /// Default radius 1.1·max(r, 1).
    pub fn for_radius(r: f64, n: usize) -> Self {
        FourierTruncation { s: 1.1 * r.max(1.0), n }
    }

    /// Trapezoid size, at least 8N.
    pub fn samples(&self) -> usize {
        (8 * self.n).max(64)
    }
}

/// Normalized Laurent coefficients of a function sampled on a circle.
#[derive(Debug, Clone)]
pub struct Laurent {
    coeffs: Vec<C64>,
}

impl Laurent {
    pub fn sample(
        f: impl Fn(C64) -> Result<C64, GrassmannError>,
        radius: f64,
        m: usize,
    ) -> Result<Self, GrassmannError> {
        let samples: Vec<C64> = (0..m)
            .map(|j| f(C64::from_polar(radius, std::f64::consts::TAU * j as f64 / m as f64)))
            .collect::<Result<_, _>>()?;
        Ok(Laurent { coeffs: fourier_coeffs(&samples) })
    }

    /// Coefficient of (z/radius)^k; zero beyond the aliasing range.
    pub fn get(&self, k: i64) -> C64 {
        let m = self.coeffs.len() as i64;
        if 2 * k.abs() >= m {
            C64::new(0.0, 0.0)
        } else {
            self.coeffs[k.rem_euclid(m) as usize]
        }
    }

    /// Matrix of multiplication restricted to the given row and column modes.
    pub fn block(&self, rows: &[i64], cols: &[i64]) -> DMatrix<C64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i] - cols[j]))
    }
}

fn modes(lo: i64, hi: i64) -> Vec<i64> {
    (lo..=hi).collect()
}

/// T[j][k] = a_{j−k}, 0 ≤ j, k ≤ N.
pub fn toeplitz(
    symbol: impl Fn(C64) -> Result<C64, GrassmannError>,
    radius: f64,
    n: usize,
) -> Result<DMatrix<C64>, GrassmannError> {
    let l = Laurent::sample(symbol, radius, (8 * n).max(64))?;
    let plus = modes(0, n as i64);
    Ok(l.block(&plus, &plus))
}

fn parity(m: &MFunction, lambda: C64) -> Result<(C64, C64), GrassmannError> {
    Ok(m.parity_eval(lambda)?)
}

/// (m_e, m_o) coefficients on |λ| = s².
fn m_parity_laurent(m: &MFunction, tr: &FourierTruncation) -> Result<(Laurent, Laurent, Laurent), GrassmannError> {
    let big_s = tr.s * tr.s;
    let k = tr.samples();
    let me = Laurent::sample(|l| Ok(parity(m, l)?.0), big_s, k)?;
    let mo = Laurent::sample(|l| Ok(parity(m, l)?.1), big_s, k)?;
    let mo_inv = Laurent::sample(|l| Ok(1.0 / parity(m, l)?.1), big_s, k)?;
    Ok((me, mo, mo_inv))
}

fn check_atoms(g: &GammaElement, s: f64) -> Result<(), GrassmannError> {
    if g.min_atom_modulus() <= s {
        return Err(GrassmannError::AtomInsideCircle { s });
    }
    Ok(())
}

/// ‖T_N(m_o)⁻¹ − T_N(m_o⁻¹)‖∞ (max row sum).
pub fn toeplitz_inverse_gap(m: &MFunction, tr: &FourierTruncation) -> Result<f64, GrassmannError> {
    let (_, mo, mo_inv) = m_parity_laurent(m, tr)?;
    let plus = modes(0, tr.n as i64);
    let t = mo.block(&plus, &plus);
    let ti = mo_inv.block(&plus, &plus);
    let inv = invert_checked(t)?;
    let d = inv - ti;
    Ok((0..d.nrows()).map(|i| d.row(i).iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max))
}

fn invert_checked(t: DMatrix<C64>) -> Result<DMatrix<C64>, GrassmannError> {
    let copy = t.clone();
    let lu = t.lu();
    let cond = cond1_estimate(&copy, &lu);
    if !(cond <= TOEPLITZ_COND_LIMIT) {
        return Err(GrassmannError::IllConditioned { cond, limit: TOEPLITZ_COND_LIMIT });
    }
    lu.try_inverse().ok_or(GrassmannError::Linalg(LinalgError::Singular { index: 0 }))
}

/// det(I + (T(ĝ_o)T((gm̃)_e) + T(ĝ_e)T((gm̃)_o) − T(m̃_o))·T(m_o)⁻¹) on λ-modes 0..N.
pub fn tau_truncated(m: &MFunction, g: &GammaElement, tr: &FourierTruncation) -> Result<TauResult, GrassmannError> {
    if m.is_free() {
        return Ok(TauResult::one(Route::Truncation));
    }
    check_atoms(g, tr.s)?;
    let big_s = tr.s * tr.s;
    let k = tr.samples();
    let split = |f: &dyn Fn(C64) -> Result<C64, GrassmannError>, l: C64| -> Result<(C64, C64), GrassmannError> {
        let r = l.sqrt();
        let (a, b) = (f(r)?, f(-r)?);
        Ok(((a + b) * 0.5, (a - b) / (r * 2.0)))
    };
    let gm = |z: C64| -> Result<C64, GrassmannError> { Ok(g.eval(z)? * (m.eval(z)? - z)) };
    let gh = |z: C64| -> Result<C64, GrassmannError> { Ok(g.eval_inv(z)?) };
    let lap = |f: &dyn Fn(C64) -> Result<C64, GrassmannError>, odd: bool| {
        Laurent::sample(|l| split(f, l).map(|(e, o)| if odd { o } else { e }), big_s, k)
    };
    let plus = modes(0, tr.n as i64);
    let t = |l: Laurent| l.block(&plus, &plus);
    let gme = t(lap(&gm, false)?);
    let gmo = t(lap(&gm, true)?);
    let ghe = t(lap(&gh, false)?);
    let gho = t(lap(&gh, true)?);
    let (_, mo, _) = m_parity_laurent(m, tr)?;
    let tmo = mo.block(&plus, &plus);
    let mut tmto = tmo.clone();
    for i in 0..tmto.nrows() {
        tmto[(i, i)] -= C64::new(1.0, 0.0);
    }
    let x = &gho * &gme + &ghe * &gmo - tmto;
    let inv = invert_checked(tmo)?;
    let mut a = x * inv;
    for i in 0..a.nrows() {
        a[(i, i)] += C64::new(1.0, 0.0);
    }
    let (ld, _) = lu_log_det(a)?;
    Ok(TauResult { log_abs: ld.log_abs, phase: ld.phase, route: Route::Truncation, condition: None })
}

/// Σ_k c_k (s/z)^k, k = 1..: an element of H₋ in normalized modes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardySeries {
    pub s: f64,
    /// c_1, c_2, … (coefficient of (z/s)^{−k}).
    pub coeffs: Vec<C64>,
}

impl HardySeries {
    pub fn zero(s: f64, n: usize) -> Self {
        HardySeries { s, coeffs: vec![C64::new(0.0, 0.0); n] }
    }

    pub fn eval(&self, z: C64) -> C64 {
        let w = self.s / z;
        self.coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| (acc + c) * w)
    }

    /// lim z·φ(z).
    pub fn a1(&self) -> C64 {
        self.coeffs.first().copied().unwrap_or_default() * self.s
    }

    pub fn sup_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// A subspace of H given by A_W: H₊ → H₋ in the z-mode truncation.
/// Rows are modes −1..−N, columns modes 0..N.
#[derive(Debug, Clone)]
pub struct SubspaceModel {
    pub trunc: FourierTruncation,
    pub a: DMatrix<C64>,
}

impl SubspaceModel {
    fn plus(&self) -> Vec<i64> {
        modes(0, self.trunc.n as i64)
    }

    fn minus(&self) -> Vec<i64> {
        (1..=self.trunc.n as i64).map(|k| -k).collect()
    }

    /// W_m: A_W z^{2j} = 0 and A_W z^{2j+1} from 𝔭₋(m_e v), 𝔭₋(m_o v), v = T(m_o⁻¹)λ^j.
    pub fn from_mfunction(m: &MFunction, trunc: FourierTruncation) -> Result<Self, GrassmannError> {
        let n = trunc.n;
        let mut a = DMatrix::<C64>::zeros(n, n + 1);
        if m.is_free() {
            return Ok(SubspaceModel { trunc, a });
        }
        let (me, mo, mo_inv) = m_parity_laurent(m, &trunc)?;
        let nl = n as i64;
        for col in (1..=n).step_by(2) {
            let j = ((col - 1) / 2) as i64;
            let v: Vec<C64> = (0..=nl).map(|i| mo_inv.get(i - j)).collect();
            for k in 1..=nl {
                let even: C64 = v.iter().enumerate().map(|(i, vi)| me.get(-k - i as i64) * vi).sum();
                let odd: C64 = v.iter().enumerate().map(|(i, vi)| mo.get(-k - i as i64) * vi).sum();
                // (z/s)^{2j+1} has odd part (λ/S)^j/s; λ-mode −k of the even
                // component is z-mode −2k, of the odd one (times z = s·(z/s)) z-mode −2k+1
                let (ze, zo) = (2 * k, 2 * k - 1);
                if ze <= nl {
                    a[((ze - 1) as usize, col)] = even / trunc.s;
                }
                if zo <= nl {
                    a[((zo - 1) as usize, col)] = odd;
                }
            }
        }
        Ok(SubspaceModel { trunc, a })
    }

    fn laurent(&self, g: &GammaElement, inverse: bool) -> Result<Laurent, GrassmannError> {
        check_atoms(g, self.trunc.s)?;
        Laurent::sample(
            |z| Ok(if inverse { g.eval_inv(z)? } else { g.eval(z)? }),
            self.trunc.s,
            self.trunc.samples(),
        )
    }

    /// R_W(g) = g⁻¹𝔭₊g A_W on H₊.
    pub fn r_matrix(&self, g: &GammaElement) -> Result<DMatrix<C64>, GrassmannError> {
        let (plus, minus) = (self.plus(), self.minus());
        let gl = self.laurent(g, false)?;
        let gi = self.laurent(g, true)?;
        Ok(gi.block(&plus, &plus) * gl.block(&plus, &minus) * &self.a)
    }

    /// τ_W(g) = det(I + R_W(g)).
    pub fn tau(&self, g: &GammaElement) -> Result<TauResult, GrassmannError> {
        let mut r = self.r_matrix(g)?;
        for i in 0..r.nrows() {
            r[(i, i)] += C64::new(1.0, 0.0);
        }
        let (ld, _) = lu_log_det(r)?;
        Ok(TauResult { log_abs: ld.log_abs, phase: ld.phase, route: Route::Truncation, condition: None })
    }

    /// A_{gW} = 𝔭₋ g⁻¹ A_W (I + R_W(g))⁻¹ g.
    pub fn transform(&self, g: &GammaElement) -> Result<SubspaceModel, GrassmannError> {
        let (plus, minus) = (self.plus(), self.minus());
        let gl = self.laurent(g, false)?;
        let gi = self.laurent(g, true)?;
        let mut ir = gi.block(&plus, &plus) * gl.block(&plus, &minus) * &self.a;
        for i in 0..ir.nrows() {
            ir[(i, i)] += C64::new(1.0, 0.0);
        }
        let lu = ir.lu();
        // A_{gW} = p₋ g A_W (I + R)⁻¹ g⁻¹ on H₊.
        let rhs = gi.block(&plus, &plus);
        let solved = lu.solve(&rhs).ok_or(GrassmannError::TauZero)?;
        let a = gl.block(&minus, &minus) * &self.a * solved;
        Ok(SubspaceModel { trunc: self.trunc, a })
    }

    fn column_series(&self, col: usize) -> HardySeries {
        HardySeries { s: self.trunc.s, coeffs: self.a.column(col).iter().copied().collect() }
    }

    /// φ_W = A_W 1.
    pub fn phi(&self) -> HardySeries {
        self.column_series(0)
    }

    /// ψ_W = A_W z (column 1 is A_W (z/s)).
    pub fn psi(&self) -> HardySeries {
        let mut p = self.column_series(1);
        p.coeffs.iter_mut().for_each(|c| *c *= self.trunc.s);
        p
    }
}

/// (φ_{gW_m}, ψ_{gW_m}) via the transformed model.
pub fn char_matrix(
    m: &MFunction,
    g: &GammaElement,
    trunc: &FourierTruncation,
) -> Result<(HardySeries, HardySeries), GrassmannError> {
    let w = SubspaceModel::from_mfunction(m, *trunc)?;
    if w.tau(g)?.log_abs < -700.0 {
        return Err(GrassmannError::TauZero);
    }
    let gw = w.transform(g)?;
    Ok((gw.phi(), gw.psi()))
}

/// m_W(z) = (z + ψ(z))/(1 + φ(z)) + a₁.
#[derive(Debug, Clone)]
pub struct SubspaceMFunction {
    pub phi: HardySeries,
    pub psi: HardySeries,
}

impl SubspaceMFunction {
    pub fn eval(&self, z: C64) -> Result<C64, GrassmannError> {
        let d = C64::new(1.0, 0.0) + self.phi.eval(z);
        if d.norm() < 1e-14 {
            return Err(GrassmannError::DivZero { z });
        }
        Ok((z + self.psi.eval(z)) / d + self.phi.a1())
    }
}

pub fn m_from_subspace(phi: HardySeries, psi: HardySeries) -> SubspaceMFunction {
    SubspaceMFunction { phi, psi }
}

/// ρ_W(g) = exp(Σ k b_k h_k) with log(1 + φ) = Σ b_k z^{−k} sampled on |z| = r_w.
pub fn rho(phi: &HardySeries, g: &GammaElement, r_w: f64) -> Result<TauResult, GrassmannError> {
    let count = phi.coeffs.len().max(32);
    let b = log_phi_coeffs(|z| Ok(C64::new(1.0, 0.0) + phi.eval(z)), r_w, count).map_err(|e| match e {
        TauError::TauZero => GrassmannError::ZeroOnContour,
        other => GrassmannError::BadTruncation(other.to_string()),
    })?;
    Ok(TauResult { route: Route::Truncation, ..rho_from_coeffs(&b, g) })
}

#[derive(Debug, Clone, Serialize)]
pub struct DualityReport {
    pub n: usize,
    pub residual: f64,
}

/// sup ‖Π_W(λ)·ᵗconj(Π_W̃(λ̄)) − I‖ at |z| = 1.05 s, with A_W̃ = −S⁻²JA_W*J
/// built in the two-component λ-model.
pub fn duality_check(m: &MFunction, tr: &FourierTruncation) -> Result<DualityReport, GrassmannError> {
    let n = tr.n as i64;
    if m.is_free() {
        return Ok(DualityReport { n: tr.n, residual: 0.0 });
    }
    let (me, mo, mo_inv) = m_parity_laurent(m, tr)?;
    let big_s = tr.s * tr.s;
    // A_W e_{2,k}: components (𝔭₋(m_e v), 𝔭₋(m_o v)), v = T(m_o⁻¹)e_k
    let column = |k: i64, comp: &Laurent, mode: i64| -> C64 {
        (0..=n).map(|i| comp.get(mode - i) * mo_inv.get(i - k)).sum()
    };
    // Π_W = [[1, ψ₁], [0, 1 + ψ₂]] with ψ = A_W e_{2,0}
    let psi1: Vec<C64> = (1..=n).map(|p| column(0, &me, -p)).collect();
    let psi2: Vec<C64> = (1..=n).map(|p| column(0, &mo, -p)).collect();
    // φ̃ and ψ̃ live in the second component at modes −k−1
    let phit: Vec<C64> = (0..n).map(|k| -column(k, &me, -1).conj()).collect();
    let psit: Vec<C64> = (0..n).map(|k| -column(k, &mo, -1).conj()).collect();
    let series = |c: &[C64], l: C64| -> C64 {
        let w = big_s / l;
        c.iter().rev().fold(C64::new(0.0, 0.0), |acc, &v| (acc + v) * w)
    };
    let one = C64::new(1.0, 0.0);
    let mut worst: f64 = 0.0;
    let samples = 64;
    for j in 0..samples {
        let z = C64::from_polar(1.05 * tr.s, std::f64::consts::TAU * (j as f64 + 0.5) / samples as f64);
        let l = z * z;
        let lb = l.conj();
        let p11 = one;
        let p12 = series(&psi1, l);
        let p22 = one + series(&psi2, l);
        // ᵗconj(Π̃(λ̄)) = [[1, conj φ̃₂(λ̄)], [0, conj(1 + ψ̃₂(λ̄))]]
        let d12 = series(&phit, lb).conj();
        let d22 = (one + series(&psit, lb)).conj();
        let e11 = p11 - one;
        let e12 = p11 * d12 + p12 * d22;
        let e22 = p22 * d22 - one;
        worst = worst.max(e11.norm()).max(e12.norm()).max(e22.norm());
    }
    Ok(DualityReport { n: tr.n, residual: worst })
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Trace norm of g₁⁻¹𝔭₊g₁ − g₂⁻¹𝔭₊g₂ on H₋ against the bound
/// 3s^{−1/2}(‖g₁⁻¹−g₂⁻¹‖(‖g₁−1‖ + s²‖g₁″‖) + ‖g₂⁻¹‖(‖g₁−g₂‖ + s²‖g₁″−g₂″‖)).
pub fn trace_bound_check(
    g1: &GammaElement,
    g2: &GammaElement,
    tr: &FourierTruncation,
) -> Result<TraceBoundReport, GrassmannError> {
    if !g1.atoms.is_empty() || !g2.atoms.is_empty() {
        return Err(GrassmannError::Gamma(GammaError::AtomsPresent));
    }
    let s = tr.s;
    let k = tr.samples();
    let plus = modes(0, tr.n as i64);
    let minus: Vec<i64> = (1..=tr.n as i64).map(|k| -k).collect();
    let op = |g: &GammaElement| -> Result<DMatrix<C64>, GrassmannError> {
        let gl = Laurent::sample(|z| Ok(g.eval(z)?), s, k)?;
        let gi = Laurent::sample(|z| Ok(g.eval_inv(z)?), s, k)?;
        Ok(gi.block(&plus, &plus) * gl.block(&plus, &minus))
    };
    let lhs = trace_norm(&(op(g1)? - op(g2)?));
    let mut sup_dinv: f64 = 0.0;
    let mut sup_g2inv: f64 = 0.0;
    let (mut n_g1m1, mut n_g1pp, mut n_d, mut n_dpp) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..k {
        let z = C64::from_polar(s, std::f64::consts::TAU * j as f64 / k as f64);
        let (a1, a2) = (g1.eval(z)?, g2.eval(z)?);
        let (i1, i2) = (g1.eval_inv(z)?, g2.eval_inv(z)?);
        let (p1, p2) = (g1.second_derivative(z)?, g2.second_derivative(z)?);
        sup_dinv = sup_dinv.max((i1 - i2).norm());
        sup_g2inv = sup_g2inv.max(i2.norm());
        n_g1m1 += (a1 - 1.0).norm_sqr();
        n_g1pp += p1.norm_sqr();
        n_d += (a1 - a2).norm_sqr();
        n_dpp += (p1 - p2).norm_sqr();
    }
    // ‖f‖² = (s/2π)∫|f|² dθ
    let l2 = |acc: f64| (s * acc / k as f64).sqrt();
    let rhs = 3.0 / s.sqrt()
        * (sup_dinv * (l2(n_g1m1) + s * s * l2(n_g1pp)) + sup_g2inv * (l2(n_d) + s * s * l2(n_dpp)));
    Ok(TraceBoundReport { lhs, rhs, holds: lhs <= rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamma::{exp_line, Atom};
    use crate::herglotz::{mfun_free, mfun_from_sigma};
    use crate::linalg::singular_values;
    use crate::tau::tau_product;

    fn z(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn one_mass() -> MFunction {
        mfun_from_sigma(1.0, &[(0.0, 0.5)]).unwrap()
    }

    fn tr(s: f64, n: usize) -> FourierTruncation {
        FourierTruncation::new(s, n).unwrap()
    }

    #[test]
    fn toeplitz_basics() {
        let id = toeplitz(|_| Ok(z(1.0, 0.0)), 1.0, 6).unwrap();
        assert!((id - DMatrix::<C64>::identity(7, 7)).norm() < 1e-14);
        let sh = toeplitz(|w| Ok(w), 1.0, 4).unwrap();
        for j in 0..5 {
            for k in 0..5 {
                let want = if j == k + 1 { 1.0 } else { 0.0 };
                assert!((sh[(j, k)] - want).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn toeplitz_inverse_small_gap() {
        let gap = toeplitz_inverse_gap(&one_mass(), &FourierTruncation::for_radius(1.0, 256)).unwrap();
        assert!(gap < 1e-6, "{gap}");
    }

    #[test]
    fn truncated_matches_product() {
        let m = one_mass();
        let zs = [z(3.0, 0.0), z(4.0, 0.0)];
        let tt = tau_truncated(&m, &GammaElement::q_product(&zs), &FourierTruncation::for_radius(1.0, 128)).unwrap();
        let tp = tau_product(&m, &zs).unwrap();
        assert!(tt.rel_diff(&tp) < 1e-4, "{}", tt.rel_diff(&tp));
        let one = tau_truncated(&m, &GammaElement::q_product(&[z(3.0, 0.0)]), &FourierTruncation::for_radius(1.0, 64))
            .unwrap();
        assert!((one.value() - 1.0).norm() < 1e-8);
        let free = tau_truncated(&mfun_free(), &exp_line(0.3), &FourierTruncation::for_radius(1.0, 16)).unwrap();
        assert_eq!(free.value(), z(1.0, 0.0));
    }

    #[test]
    fn base_characteristic_series() {
        let m = one_mass();
        let w = SubspaceModel::from_mfunction(&m, tr(1.6, 96)).unwrap();
        assert!(w.phi().sup_coeff() < 1e-14);
        let p = z(2.0, 1.0);
        assert!((w.psi().eval(p) - (m.eval(p).unwrap() - p)).norm() < 1e-10);
        let mw = m_from_subspace(w.phi(), w.psi());
        assert!((mw.eval(p).unwrap() - m.eval(p).unwrap()).norm() < 1e-10);
    }

    #[test]
    fn scalar_tau_matches_product() {
        let m = one_mass();
        let w = SubspaceModel::from_mfunction(&m, tr(1.6, 96)).unwrap();
        let zs = [z(3.0, 0.0), z(2.0, 2.0)];
        let ts = w.tau(&GammaElement::q_product(&zs)).unwrap();
        let tp = tau_product(&m, &zs).unwrap();
        assert!(ts.rel_diff(&tp) < 1e-8, "{}", ts.rel_diff(&tp));
    }

    #[test]
    fn q_transform_matches_d_transform() {
        let m = one_mass();
        let zeta = z(3.0, 0.0);
        let (phi, psi) = char_matrix(&m, &GammaElement::q_product(&[zeta]), &tr(1.6, 96)).unwrap();
        let w = z(2.2, 1.1);
        let want = (m.eval(zeta).unwrap() - m.eval(w).unwrap()) / (zeta - w);
        assert!((C64::new(1.0, 0.0) + phi.eval(w) - want).norm() < 1e-8);
        let mw = m_from_subspace(phi, psi);
        let d = m.d_transform(zeta).unwrap();
        assert!((mw.eval(w).unwrap() - d.eval(w).unwrap()).norm() < 1e-5);
    }

    #[test]
    fn free_is_invariant() {
        let (phi, _) = char_matrix(&mfun_free(), &GammaElement::q_product(&[z(3.0, 0.0)]), &tr(1.6, 32)).unwrap();
        assert!(phi.sup_coeff() < 1e-14);
    }

    #[test]
    fn rank_one_and_cocycle() {
        let m = one_mass();
        let w = SubspaceModel::from_mfunction(&m, tr(1.6, 96)).unwrap();
        let g1 = GammaElement::q_product(&[z(3.0, 0.0)]);
        let w1 = w.transform(&g1).unwrap();
        let gz = GammaElement::q_product(&[z(2.5, 1.0)]);
        let sv = singular_values(&w1.r_matrix(&gz).unwrap());
        assert!(sv[1] < 1e-8 * sv[0].max(1.0), "{sv:?}");
        let t = w1.tau(&gz).unwrap();
        assert!((t.value() - (C64::new(1.0, 0.0) + w1.phi().eval(z(2.5, 1.0)))).norm() < 1e-9);
        let g2 = &GammaElement::q_product(&[z(4.0, 0.0)]) * &exp_line(0.3);
        let lhs = w.tau(&(&g1 * &g2)).unwrap();
        let rhs = w.tau(&g1).unwrap().mul(&w1.tau(&g2).unwrap());
        assert!(lhs.rel_diff(&rhs) < 1e-8, "{}", lhs.rel_diff(&rhs));
    }

    #[test]
    fn rho_values() {
        let zero = HardySeries::zero(1.6, 8);
        assert!((rho(&zero, &exp_line(0.4), 2.0).unwrap().value() - 1.0).norm() < 1e-15);
        let m = one_mass();
        let (phi, _) = char_matrix(&m, &GammaElement::q_product(&[z(3.0, 0.0)]), &tr(1.6, 96)).unwrap();
        let zeta = z(2.5, 2.0);
        let r = rho(&phi, &GammaElement::from_atoms(vec![Atom::QPole(zeta)]), 2.0).unwrap();
        assert!((r.value() - (1.0 + phi.eval(zeta))).norm() < 1e-9);
    }

    #[test]
    fn duality_small_and_decreasing() {
        let m = one_mass();
        let a = duality_check(&m, &FourierTruncation::for_radius(1.0, 64)).unwrap().residual;
        let b = duality_check(&m, &FourierTruncation::for_radius(1.0, 128)).unwrap().residual;
        assert!(b < 1e-5 && b < a, "{a} {b}");
        assert_eq!(duality_check(&mfun_free(), &FourierTruncation::for_radius(1.0, 16)).unwrap().residual, 0.0);
    }

    #[test]
    fn trace_bound_examples() {
        let t = tr(1.1, 48);
        let same = trace_bound_check(&exp_line(0.1), &exp_line(0.1), &t).unwrap();
        assert!(same.lhs < 1e-12 && same.holds);
        let r = trace_bound_check(&exp_line(0.1), &GammaElement::identity(), &t).unwrap();
        assert!(r.holds && r.lhs < r.rhs, "{r:?}");
    }
}
