//! m-functions of class M_r, Herglotz samplers and the transforms d_ζ, D_ζ.
//!
//! An [`MFunction`] is a rational function of the branch variable
//! `w(z) = z·sqrt(1 + ρ²/z²)` followed by a lazily evaluated chain of
//! `d_ζ` transforms
//!
//! ```text
//! (d_ζ m)(z) = (z² − ζ²) / (m(z) − m(ζ)) − m(ζ)
//! ```

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::poly_eval;
use crate::C64;

pub const BRANCH_TOL: f64 = 1e-9;
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HerglotzError {
    #[error("mass point ξ = {xi} lies outside the open band (−{bound}, {bound})")]
    MassOutOfBand { xi: f64, bound: f64 },
    #[error("normality bound violated: Σ w/(2r² − ξ²) = {sum} > 1")]
    NormalityViolated { sum: f64 },
    #[error("duplicate mass point ξ = {xi}")]
    DuplicateMass { xi: f64 },
    #[error("mass weight {w} at ξ = {xi} is not positive")]
    NonPositiveMass { xi: f64, w: f64 },
    #[error("branch radius {r} must be positive and finite")]
    BadRadius { r: f64 },
    #[error("evaluation point {z} lies on the branch cross of radius {r}")]
    OnBranchCross { z: C64, r: f64 },
    #[error("parity point λ = {lambda} lies on the branch interval [−{r2}, {r2}]")]
    OnBranchInterval { lambda: C64, r2: f64 },
    #[error("transform point ζ = {zeta} lies on or inside the branch cross of radius {r}")]
    PointOnBranchCross { zeta: C64, r: f64 },
    #[error("transform point ζ = {zeta} must avoid the real and imaginary axes")]
    PointOnAxis { zeta: C64 },
    #[error("degenerate denominator {value:e} at z = {z}")]
    DegenerateDenominator { z: C64, value: f64 },
    #[error("rational data malformed: {0}")]
    BadRational(String),
}

type Memo = Arc<RwLock<HashMap<(usize, u64, u64), C64>>>;

/// An m-function `m = P(w)/Q(w)` with a lazy `d_ζ` chain.
#[derive(Clone)]
pub struct MFunction {
    /// Spectral radius r: the cross `I_r ∪ iI_r` is excluded.
    pub branch_radius: f64,
    /// Radius entering `w(z)`; equals `branch_radius` for band backgrounds, 0 for decaying ones.
    pub w_radius: f64,
    /// Ascending numerator coefficients in `w`.
    pub numer: Vec<C64>,
    /// Ascending denominator coefficients in `w`, monic.
    pub denom: Vec<C64>,
    pub transform_chain: Vec<C64>,
    memo: Memo,
}

impl std::fmt::Debug for MFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MFunction")
            .field("branch_radius", &self.branch_radius)
            .field("w_radius", &self.w_radius)
            .field("numer", &self.numer)
            .field("denom", &self.denom)
            .field("transform_chain", &self.transform_chain)
            .finish()
    }
}

fn key(z: C64) -> (u64, u64) {
    // +0.0 and -0.0 must hit the same slot
    ((z.re + 0.0).to_bits(), (z.im + 0.0).to_bits())
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Product of `(w − ξ_i)` over the listed points, ascending coefficients.
fn monic_from_roots(roots: &[f64]) -> Vec<C64> {
    let mut p = vec![c(1.0)];
    for &r in roots {
        let mut q = vec![c(0.0); p.len() + 1];
        for (k, &a) in p.iter().enumerate() {
            q[k + 1] += a;
            q[k] -= a * r;
        }
        p = q;
    }
    p
}

fn poly_add(a: &[C64], b: &[C64]) -> Vec<C64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| a.get(k).copied().unwrap_or_default() + b.get(k).copied().unwrap_or_default())
        .collect()
}

fn poly_scale(a: &[C64], s: C64) -> Vec<C64> {
    a.iter().map(|&v| v * s).collect()
}

fn poly_shift(a: &[C64]) -> Vec<C64> {
    let mut out = vec![c(0.0)];
    out.extend_from_slice(a);
    out
}

/// Builds `w + Σ w_j/(ξ_j − w)` as `(P, Q)` in the variable `w`.
fn sigma_rational(masses: &[(f64, f64)]) -> (Vec<C64>, Vec<C64>) {
    let xis: Vec<f64> = masses.iter().map(|m| m.0).collect();
    let d = monic_from_roots(&xis);
    let mut p = poly_shift(&d);
    for (j, &(_, wj)) in masses.iter().enumerate() {
        let others: Vec<f64> = xis.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, &x)| x).collect();
        let part = monic_from_roots(&others);
        p = poly_add(&p, &poly_scale(&part, c(-wj)));
    }
    (p, d)
}

/// The zero potential: m(z) = z.
pub fn mfun_free() -> MFunction {
    MFunction::from_parts(0.0, 0.0, vec![c(0.0), c(1.0)], vec![c(1.0)])
}

/// `m(z) = w + Σ w_j/(ξ_j − w)` with `w = z·sqrt(1 + r²/z²)`.
pub fn mfun_from_sigma(r: f64, masses: &[(f64, f64)]) -> Result<MFunction, HerglotzError> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(HerglotzError::BadRadius { r });
    }
    let bound = std::f64::consts::SQRT_2 * r;
    let mut sum = 0.0;
    for (i, &(xi, w)) in masses.iter().enumerate() {
        if !(xi.abs() < bound) {
            return Err(HerglotzError::MassOutOfBand { xi, bound });
        }
        if !(w > 0.0) {
            return Err(HerglotzError::NonPositiveMass { xi, w });
        }
        if masses[..i].iter().any(|m| m.0 == xi) {
            return Err(HerglotzError::DuplicateMass { xi });
        }
        sum += w / (2.0 * r * r - xi * xi);
    }
    if sum > 1.0 {
        return Err(HerglotzError::NormalityViolated { sum });
    }
    Ok(mfun_from_sigma_unchecked(r, masses))
}

/// As [`mfun_from_sigma`] without validation; used to build counterexamples.
pub fn mfun_from_sigma_unchecked(r: f64, masses: &[(f64, f64)]) -> MFunction {
    let (p, q) = sigma_rational(masses);
    MFunction::from_parts(r, r, p, q)
}

/// Decaying-background m-function `m(z) = z + Σ w_j/(ξ_j − z)` with spectral radius `r`.
///
/// One mass `(0, κ²)` with `r = κ` gives the one-soliton `−2κ² sech²(κx)`.
pub fn mfun_zero_background(r: f64, masses: &[(f64, f64)]) -> Result<MFunction, HerglotzError> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(HerglotzError::BadRadius { r });
    }
    for (i, &(xi, w)) in masses.iter().enumerate() {
        if xi.abs() > r {
            return Err(HerglotzError::MassOutOfBand { xi, bound: r });
        }
        if !(w > 0.0) {
            return Err(HerglotzError::NonPositiveMass { xi, w });
        }
        if masses[..i].iter().any(|m| m.0 == xi) {
            return Err(HerglotzError::DuplicateMass { xi });
        }
    }
    let (p, q) = sigma_rational(masses);
    Ok(MFunction::from_parts(r, 0.0, p, q))
}

impl MFunction {
    /// Raw constructor; `denom` is normalized to be monic.
    pub fn from_parts(branch_radius: f64, w_radius: f64, numer: Vec<C64>, denom: Vec<C64>) -> Self {
        let lead = *denom.last().expect("empty denominator");
        MFunction {
            branch_radius,
            w_radius,
            numer: numer.iter().map(|v| v / lead).collect(),
            denom: denom.iter().map(|v| v / lead).collect(),
            transform_chain: Vec::new(),
            memo: Arc::new(RwLock::new(HashMap::new())),
        }
    }

    /// Validated constructor: `deg P = deg Q + 1` and leading ratio 1.
    pub fn from_rational(branch_radius: f64, w_radius: f64, numer: Vec<C64>, denom: Vec<C64>) -> Result<Self, HerglotzError> {
        if denom.is_empty() || numer.len() != denom.len() + 1 {
            return Err(HerglotzError::BadRational(format!(
                "degrees {} / {} (need deg P = deg Q + 1)",
                numer.len() as isize - 1,
                denom.len() as isize - 1
            )));
        }
        let ratio = numer[numer.len() - 1] / denom[denom.len() - 1];
        if (ratio - c(1.0)).norm() > 1e-12 {
            return Err(HerglotzError::BadRational(format!("leading ratio {ratio} ≠ 1")));
        }
        Ok(Self::from_parts(branch_radius, w_radius, numer, denom))
    }

    pub fn is_free(&self) -> bool {
        self.w_radius == 0.0
            && self.denom.len() == 1
            && self.numer.len() == 2
            && self.numer[0].norm() == 0.0
            && (self.numer[1] - c(1.0)).norm() == 0.0
    }

    /// Degree of the base denominator; preserved by every `d_ζ`.
    pub fn degree(&self) -> usize {
        self.denom.len() - 1
    }

    /// The branch variable `w(z) = z·sqrt(1 + ρ²/z²)`.
    pub fn w(&self, z: C64) -> C64 {
        if self.w_radius == 0.0 {
            z
        } else {
            z * (c(1.0) + self.w_radius * self.w_radius / (z * z)).sqrt()
        }
    }

    fn base(&self, z: C64) -> C64 {
        let w = self.w(z);
        poly_eval(&self.numer, w) / poly_eval(&self.denom, w)
    }

    /// Distance from `z` to `[−r, r] ∪ i[−r, r]`.
    pub fn cross_distance(&self, z: C64) -> f64 {
        let r = self.branch_radius;
        let seg = |along: f64, across: f64| {
            let d = (along.abs() - r).max(0.0);
            (d * d + across * across).sqrt()
        };
        seg(z.re, z.im).min(seg(z.im, z.re))
    }

    fn check_point(&self, z: C64) -> Result<(), HerglotzError> {
        if !(self.cross_distance(z) > BRANCH_TOL) || !z.re.is_finite() || !z.im.is_finite() {
            return Err(HerglotzError::OnBranchCross { z, r: self.branch_radius });
        }
        Ok(())
    }

    fn chain_const(&self, k: usize) -> Result<C64, HerglotzError> {
        let zeta = self.transform_chain[k];
        let (a, b) = key(zeta);
        if let Some(v) = self.memo.read().expect("memo poisoned").get(&(k, a, b)) {
            return Ok(*v);
        }
        let v = self.eval_prefix(k, zeta)?;
        self.memo.write().expect("memo poisoned").insert((k, a, b), v);
        Ok(v)
    }

    fn eval_prefix(&self, n: usize, z: C64) -> Result<C64, HerglotzError> {
        let mut v = self.base(z);
        let z2 = z * z;
        for k in 0..n {
            let zeta = self.transform_chain[k];
            let cst = self.chain_const(k)?;
            let den = v - cst;
            let scale = 1.0 + v.norm() + cst.norm();
            if !(den.norm() > DEGENERATE_TOL * scale) {
                return Err(HerglotzError::DegenerateDenominator { z, value: den.norm() });
            }
            v = (z2 - zeta * zeta) / den - cst;
        }
        Ok(v)
    }

    /// Value of the full chain at `z`.
    pub fn eval(&self, z: C64) -> Result<C64, HerglotzError> {
        self.check_point(z)?;
        self.eval_prefix(self.transform_chain.len(), z)
    }

    /// `(m_e(λ), m_o(λ))` with principal `sqrt(λ)`.
    pub fn parity_eval(&self, lambda: C64) -> Result<(C64, C64), HerglotzError> {
        let r2 = self.branch_radius * self.branch_radius;
        if lambda.im.abs() <= BRANCH_TOL && lambda.re.abs() <= r2 + BRANCH_TOL {
            return Err(HerglotzError::OnBranchInterval { lambda, r2 });
        }
        let s = lambda.sqrt();
        let a = self.eval(s)?;
        let b = self.eval(-s)?;
        Ok(((a + b) * 0.5, (a - b) / (s * 2.0)))
    }

    /// Appends `ζ` to the transform chain.
    pub fn d_transform(&self, zeta: C64) -> Result<MFunction, HerglotzError> {
        let r = self.branch_radius;
        if !(zeta.norm() > r) || !(self.cross_distance(zeta) > BRANCH_TOL) {
            return Err(HerglotzError::PointOnBranchCross { zeta, r });
        }
        let snapshot = self.memo.read().expect("memo poisoned").clone();
        let mut chain = self.transform_chain.clone();
        chain.push(zeta);
        Ok(MFunction {
            branch_radius: r,
            w_radius: self.w_radius,
            numer: self.numer.clone(),
            denom: self.denom.clone(),
            transform_chain: chain,
            memo: Arc::new(RwLock::new(snapshot)),
        })
    }

    /// Applies every point of `zetas` in order.
    pub fn d_chain(&self, zetas: &[C64]) -> Result<MFunction, HerglotzError> {
        let mut m = self.clone();
        for &z in zetas {
            m = m.d_transform(z)?;
        }
        Ok(m)
    }

    /// `d_conj(ζ) ∘ d_ζ` for `ζ` off both axes.
    pub fn dd_bar_transform(&self, zeta: C64) -> Result<MFunction, HerglotzError> {
        if zeta.re == 0.0 || zeta.im == 0.0 {
            return Err(HerglotzError::PointOnAxis { zeta });
        }
        self.d_transform(zeta)?.d_transform(zeta.conj())
    }

    /// Collapses the chain into a single rational function of `w` by exact
    /// synthetic division of the common factor `(w − w_ζ)`.
    pub fn normal_form(&self) -> Result<MFunction, HerglotzError> {
        let mut p = self.numer.clone();
        let mut q = self.denom.clone();
        for &zeta in &self.transform_chain {
            let wz = self.w(zeta);
            let cst = poly_eval(&p, wz) / poly_eval(&q, wz);
            // P − cQ vanishes at w_ζ; divide it out
            let diff = poly_add(&p, &poly_scale(&q, -cst));
            let n = diff.len() - 1;
            let mut quo = vec![c(0.0); n];
            let mut carry = diff[n];
            for k in (0..n).rev() {
                quo[k] = carry;
                carry = diff[k] + carry * wz;
            }
            let lead = quo[n - 1];
            if lead.norm() == 0.0 {
                return Err(HerglotzError::DegenerateDenominator { z: zeta, value: 0.0 });
            }
            // d m = ((w + w_ζ) Q − c R) / R
            let wq = poly_add(&poly_shift(&q), &poly_scale(&q, wz));
            let num = poly_add(&wq, &poly_scale(&quo, -cst));
            p = poly_scale(&num, c(1.0) / lead);
            q = poly_scale(&quo, c(1.0) / lead);
            while p.len() > q.len() + 1 && p.last().map_or(false, |v| v.norm() < 1e-300) {
                p.pop();
            }
        }
        Ok(MFunction::from_parts(self.branch_radius, self.w_radius, p, q))
    }
}

/// A Herglotz function sampled pointwise on ℂ∖ℝ.
#[derive(Clone)]
pub struct HerglotzSampler {
    f: Arc<dyn Fn(C64) -> Result<C64, HerglotzError> + Send + Sync>,
    /// Set when the representing measure has a nontrivial part.
    pub irrational: bool,
}

impl HerglotzSampler {
    pub fn new(irrational: bool, f: impl Fn(C64) -> C64 + Send + Sync + 'static) -> Self {
        HerglotzSampler { f: Arc::new(move |z| Ok(f(z))), irrational }
    }

    pub fn eval(&self, lambda: C64) -> Result<C64, HerglotzError> {
        (self.f)(lambda)
    }
}

/// `λ ↦ (λ − ζ)/(h(λ) − h(ζ)) − h(ζ)`.
pub fn big_d_transform(h: &HerglotzSampler, zeta: C64) -> Result<HerglotzSampler, HerglotzError> {
    if zeta.im == 0.0 {
        return Err(HerglotzError::PointOnAxis { zeta });
    }
    let hz = h.eval(zeta)?;
    let inner = h.clone();
    Ok(HerglotzSampler {
        f: Arc::new(move |lambda| {
            let v = inner.eval(lambda)?;
            let den = v - hz;
            let scale = 1.0 + v.norm() + hz.norm();
            if !(den.norm() > DEGENERATE_TOL * scale) {
                return Err(HerglotzError::DegenerateDenominator { z: lambda, value: den.norm() });
            }
            Ok((lambda - zeta) / den - hz)
        }),
        irrational: h.irrational,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Clause {
    pub name: String,
    pub passed: bool,
    pub metric: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ValidationReport {
    pub clauses: Vec<Clause>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }

    pub fn push(&mut self, name: &str, passed: bool, metric: f64, detail: String) {
        self.clauses.push(Clause { name: name.to_string(), passed, metric, detail });
    }
}

/// Random point with modulus in `[lo, hi]`, kept away from both axes.
pub fn sample_off_axes(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> C64 {
    loop {
        let rad = rng.random_range(lo..hi);
        let th = rng.random_range(0.0..std::f64::consts::TAU);
        if th.cos().abs() > 1e-3 && th.sin().abs() > 1e-3 {
            return C64::from_polar(rad, th);
        }
    }
}

/// Membership test for M_r by sampling, with a fixed seed.
pub fn check_mr(m: &MFunction, sample_budget: usize) -> ValidationReport {
    check_mr_seeded(m, sample_budget, 0x6d5f72)
}

pub fn check_mr_seeded(m: &MFunction, sample_budget: usize, seed: u64) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = m.branch_radius;
    let scale = r.max(1.0);
    let r_plus = if r > 0.0 { r * (1.0 + 1e-3) } else { 1e-3 };
    let mut rep = ValidationReport::default();

    // (i) Herglotz sign and conjugation symmetry
    let mut min_sign = f64::INFINITY;
    let mut sym_err: f64 = 0.0;
    let mut failures = 0usize;
    for _ in 0..sample_budget {
        let z = sample_off_axes(&mut rng, r_plus, r_plus + 4.0 * scale);
        match (m.eval(z), m.eval(z.conj())) {
            (Ok(v), Ok(vc)) => {
                let s = v.im * z.im;
                min_sign = min_sign.min(s / (z.im * z.im));
                if !(s > 0.0) {
                    failures += 1;
                }
                sym_err = sym_err.max((vc - v.conj()).norm() / (1.0 + v.norm()));
            }
            _ => failures += 1,
        }
    }
    rep.push(
        "herglotz",
        failures == 0 && sym_err <= 1e-10,
        min_sign,
        format!("{failures} sign violations in {sample_budget} samples; min Im m·Im z/|Im z|² = {min_sign:.3e}; conjugation error {sym_err:.1e}"),
    );

    // (ii) parity single-valuedness, continuity near ∂D_r, m(r+) > m(−r+)
    let mut parity_err: f64 = 0.0;
    let mut jump: f64 = 0.0;
    let mut ok = true;
    let n_ring = 64;
    for k in 0..n_ring {
        let th = std::f64::consts::TAU * (k as f64 + 0.37) / n_ring as f64;
        let lam = C64::from_polar((r_plus * 1.5).powi(2), 2.0 * th);
        let s = lam.sqrt();
        match (m.eval(s), m.eval(-s)) {
            (Ok(a), Ok(b)) => {
                let (e1, o1) = ((a + b) * 0.5, (a - b) / (s * 2.0));
                let (e2, o2) = ((b + a) * 0.5, (b - a) / (-s * 2.0));
                parity_err = parity_err.max((e1 - e2).norm() + (o1 - o2).norm());
            }
            _ => ok = false,
        }
        let z1 = C64::from_polar(r_plus, th);
        let z2 = C64::from_polar(if r > 0.0 { r * (1.0 + 2e-3) } else { 2e-3 }, th);
        match (m.eval(z1), m.eval(z2)) {
            (Ok(a), Ok(b)) => jump = jump.max((a - b).norm() / (1.0 + a.norm().max(b.norm()))),
            _ => ok = false,
        }
    }
    let edge = match (m.eval(c(r_plus)), m.eval(c(-r_plus))) {
        (Ok(a), Ok(b)) => a.re - b.re,
        _ => f64::NAN,
    };
    rep.push(
        "holomorphy",
        ok && parity_err <= 1e-12 && jump <= 0.1 && edge > 0.0,
        edge,
        format!("parity mismatch {parity_err:.1e}; near-circle variation {jump:.3e}; m(r+) − m(−r+) = {edge:.6e}"),
    );

    // (iii) m(z) = z + O(1/z)
    let mut coefs = Vec::new();
    let mut ok = true;
    for &rad in &[1e3, 1e4, 1e5] {
        for &dir in &[C64::new(1.0, 0.0), C64::from_polar(1.0, 0.7)] {
            let z = dir * rad * scale;
            match m.eval(z) {
                Ok(v) => coefs.push((v - z) * z),
                Err(_) => ok = false,
            }
        }
    }
    let drift = if coefs.len() == 6 {
        let a = (coefs[0] - coefs[4]).norm() / (1.0 + coefs[0].norm());
        let b = (coefs[1] - coefs[5]).norm() / (1.0 + coefs[1].norm());
        a.max(b)
    } else {
        f64::INFINITY
    };
    rep.push(
        "asymptotics",
        ok && drift <= 1e-2,
        drift,
        format!("relative drift of z·(m(z) − z) over |z| ∈ [1e3, 1e5]·{scale}: {drift:.2e}"),
    );

    // Corollary-type monotonicity on the real axis outside [−r, r]
    let mut min_deriv = f64::INFINITY;
    let mut min_odd = f64::INFINITY;
    let mut ok = true;
    for k in 0..40 {
        let x = r_plus + 10.0 * scale * (k as f64 + 0.5) / 40.0;
        let h = 1e-5 * x;
        match (m.eval(c(x + h)), m.eval(c(x - h)), m.eval(c(x)), m.eval(c(-x))) {
            (Ok(a), Ok(b), Ok(p), Ok(n)) => {
                min_deriv = min_deriv.min(((a - b) / (2.0 * h)).re);
                min_odd = min_odd.min(((p - n) / (2.0 * x)).re);
            }
            _ => ok = false,
        }
    }
    rep.push(
        "monotone",
        ok && min_deriv > 0.0 && min_odd > 0.0,
        min_deriv.min(min_odd),
        format!("min m'(x) = {min_deriv:.4e}; min (m(x) − m(−x))/2x = {min_odd:.4e}"),
    );
    rep
}

/// Jump of `f` across the imaginary axis on `i[ξ_lo, ξ_hi]`.
pub fn check_reflectionless_with(
    f: impl Fn(C64) -> Result<C64, HerglotzError>,
    xi_lo: f64,
    xi_hi: f64,
    eps: f64,
) -> ValidationReport {
    let n = 64;
    let jump_at = |e: f64| -> Option<f64> {
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let xi = xi_lo + (xi_hi - xi_lo) * k as f64 / (n - 1) as f64;
            let a = f(C64::new(e, xi)).ok()?;
            let b = f(C64::new(-e, xi)).ok()?;
            worst = worst.max((a - b).norm());
        }
        Some(worst)
    };
    let mut rep = ValidationReport::default();
    match (jump_at(eps), jump_at(eps / 10.0)) {
        (Some(j), Some(j10)) => {
            let ratio = if j10 > 0.0 { j / j10 } else { f64::INFINITY };
            rep.push(
                "jump",
                j <= 10.0 * eps,
                j,
                format!("max jump {j:.3e} at ε = {eps:.1e}; ratio to ε/10 jump {ratio:.2}"),
            );
        }
        _ => rep.push("jump", false, f64::NAN, "evaluation failed on the window".into()),
    }
    rep
}

pub fn check_reflectionless(m: &MFunction, xi_lo: f64, xi_hi: f64, eps: f64) -> ValidationReport {
    if !(xi_lo > m.branch_radius && xi_hi > xi_lo) {
        let mut rep = ValidationReport::default();
        rep.push("jump", false, f64::NAN, format!("window [{xi_lo}, {xi_hi}] must lie above r = {}", m.branch_radius));
        return rep;
    }
    check_reflectionless_with(|z| m.eval(z), xi_lo, xi_hi, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn one_mass() -> MFunction {
        mfun_from_sigma(1.0, &[(0.0, 0.5)]).unwrap()
    }

    #[test]
    fn free_is_identity() {
        let m = mfun_free();
        assert_eq!(m.eval(z(2.0, 3.0)).unwrap(), z(2.0, 3.0));
        assert_eq!(m.eval(z(-5.0, 0.0)).unwrap(), z(-5.0, 0.0));
        let d = m.d_transform(z(4.0, 3.0)).unwrap();
        for p in [z(1.0, 1.0), z(-2.0, 0.5), z(7.0, -3.0)] {
            assert!((d.eval(p).unwrap() - p).norm() < 1e-12 * p.norm());
        }
    }

    #[test]
    fn sigma_examples() {
        let m0 = mfun_from_sigma(1.0, &[]).unwrap();
        assert!((m0.eval(z(2.0, 0.0)).unwrap() - z(5f64.sqrt(), 0.0)).norm() < 1e-15);
        assert!((m0.eval(z(-2.0, 0.0)).unwrap() + z(5f64.sqrt(), 0.0)).norm() < 1e-15);
        let m1 = one_mass();
        let expect = 5f64.sqrt() - 0.5 / 5f64.sqrt();
        assert!((m1.eval(z(2.0, 0.0)).unwrap() - z(expect, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn sigma_validation() {
        assert!(matches!(mfun_from_sigma(1.0, &[(1.5, 0.1)]), Err(HerglotzError::MassOutOfBand { .. })));
        assert!(matches!(mfun_from_sigma(1.0, &[(2f64.sqrt(), 0.1)]), Err(HerglotzError::MassOutOfBand { .. })));
        assert!(matches!(mfun_from_sigma(1.0, &[(0.0, 3.0)]), Err(HerglotzError::NormalityViolated { .. })));
        assert!(matches!(
            mfun_from_sigma(1.0, &[(0.3, 0.1), (0.3, 0.1)]),
            Err(HerglotzError::DuplicateMass { .. })
        ));
    }

    #[test]
    fn parity_examples() {
        let f = mfun_free();
        let (e, o) = f.parity_eval(z(4.0, 0.0)).unwrap();
        assert!(e.norm() < 1e-15 && (o - z(1.0, 0.0)).norm() < 1e-15);
        let (e, o) = f.parity_eval(z(-9.0, 0.5)).unwrap();
        assert!(e.norm() < 1e-14 && (o - z(1.0, 0.0)).norm() < 1e-14);
        let m0 = mfun_from_sigma(1.0, &[]).unwrap();
        let (e, o) = m0.parity_eval(z(4.0, 0.0)).unwrap();
        assert!(e.norm() < 1e-15 && (o - z(5f64.sqrt() / 2.0, 0.0)).norm() < 1e-15);
        assert!(matches!(m0.parity_eval(z(0.5, 0.0)), Err(HerglotzError::OnBranchInterval { .. })));
    }

    #[test]
    fn cross_rejected() {
        let m = one_mass();
        assert!(matches!(m.eval(z(0.0, 0.5)), Err(HerglotzError::OnBranchCross { .. })));
        assert!(matches!(m.eval(z(0.99, 0.0)), Err(HerglotzError::OnBranchCross { .. })));
        assert!(m.eval(z(0.5, 0.5)).is_ok());
        assert!(matches!(m.d_transform(z(0.5, 0.0)), Err(HerglotzError::PointOnBranchCross { .. })));
    }

    #[test]
    fn chain_matches_normal_form() {
        // oracle: direct closure composition, independent of the memo
        let m = one_mass();
        let d = m.d_transform(z(3.0, 0.0)).unwrap();
        let direct = |p: C64| {
            let c0 = m.eval(z(3.0, 0.0)).unwrap();
            (p * p - z(9.0, 0.0)) / (m.eval(p).unwrap() - c0) - c0
        };
        let nf = d.normal_form().unwrap();
        for p in [z(4.0, 0.0), z(2.0, 1.5), z(-3.0, 0.7)] {
            let a = d.eval(p).unwrap();
            assert!((a - direct(p)).norm() < 1e-12 * a.norm());
            assert!((a - nf.eval(p).unwrap()).norm() < 1e-12 * a.norm());
        }
    }

    #[test]
    fn commutativity() {
        let m = mfun_from_sigma(1.0, &[(1.0, 0.15), (-1.0, 0.15)]).unwrap();
        let a = m.d_transform(z(2.0, 1.0)).unwrap().d_transform(z(-1.5, 3.0)).unwrap();
        let b = m.d_transform(z(-1.5, 3.0)).unwrap().d_transform(z(2.0, 1.0)).unwrap();
        for p in [z(4.0, 0.3), z(1.3, 2.2), z(-5.0, -1.0)] {
            let (va, vb) = (a.eval(p).unwrap(), b.eval(p).unwrap());
            assert!((va - vb).norm() <= 1e-10 * va.norm());
        }
    }

    #[test]
    fn transform_has_no_constant_term() {
        let d = one_mass().d_transform(z(2.0, 1.0)).unwrap();
        let big = 1e6;
        assert!((d.eval(z(big, 0.0)).unwrap() - big).norm() < 1e-5);
    }

    #[test]
    fn siblings_do_not_share_memo() {
        let m = one_mass();
        let a = m.d_transform(z(3.0, 0.0)).unwrap().d_transform(z(4.0, 0.0)).unwrap();
        let b = m.d_transform(z(5.0, 0.0)).unwrap().d_transform(z(4.0, 0.0)).unwrap();
        let p = z(2.5, 1.0);
        let va = a.eval(p).unwrap();
        let vb = b.eval(p).unwrap();
        let na = a.normal_form().unwrap().eval(p).unwrap();
        let nb = b.normal_form().unwrap().eval(p).unwrap();
        assert!((va - na).norm() < 1e-12 * na.norm());
        assert!((vb - nb).norm() < 1e-12 * nb.norm());
    }

    #[test]
    fn big_d_identity_is_degenerate_constant() {
        let h = HerglotzSampler::new(false, |l| l);
        let zeta = z(0.5, 2.0);
        let d = big_d_transform(&h, zeta).unwrap();
        let v = d.eval(z(3.0, 1.0)).unwrap();
        assert!((v - (z(1.0, 0.0) - zeta)).norm() < 1e-14);
        // Im(1 − ζ) < 0: not Herglotz
        assert!(v.im < 0.0);
    }

    #[test]
    fn check_mr_examples() {
        assert!(check_mr(&mfun_free(), 300).passed());
        assert!(check_mr(&one_mass(), 300).passed());
        assert!(check_mr(&mfun_from_sigma(1.0, &[(1.2, 0.3)]).unwrap(), 300).passed());
        let bad = mfun_from_sigma_unchecked(1.0, &[(0.0, -0.5)]);
        let rep = check_mr(&bad, 1000);
        assert!(!rep.clause("herglotz").unwrap().passed);
    }

    #[test]
    fn one_mass_real_part_symmetry_on_imaginary_segment() {
        let m = mfun_from_sigma(1.0, &[(1.2, 0.3)]).unwrap();
        for y in [1.3, 2.0, 3.5] {
            let a = m.eval(z(1e-3, y)).unwrap();
            let b = m.eval(z(-1e-3, y)).unwrap();
            assert!((a.im - b.im).abs() < 1e-2);
        }
    }

    #[test]
    fn reflectionless_examples() {
        let free = check_reflectionless(&mfun_free(), 1.5, 3.0, 1e-6);
        assert!(free.passed());
        assert!((free.clause("jump").unwrap().metric - 2e-6).abs() < 1e-15);
        let m = mfun_from_sigma(1.0, &[(1.0, 0.2)]).unwrap();
        assert!(check_reflectionless(&m, 1.5, 3.0, 1e-6).passed());
        // a genuine cut on i[1.2, 2]
        let cut = |p: C64| Ok(p + 0.3 * ((p - z(0.0, 1.2)) / (p - z(0.0, 2.0))).ln());
        let rep = check_reflectionless_with(cut, 1.5, 3.0, 1e-6);
        assert!(!rep.passed());
        assert!(rep.clause("jump").unwrap().metric > 1.0);
    }

    #[test]
    fn zero_background_soliton_values() {
        let m = mfun_zero_background(1.0, &[(0.0, 1.0)]).unwrap();
        let p = z(2.0, 0.5);
        assert!((m.eval(p).unwrap() - (p - 1.0 / p)).norm() < 1e-15);
        assert!(check_mr(&m, 300).passed());
    }
}
