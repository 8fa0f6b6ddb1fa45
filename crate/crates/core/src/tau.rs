//! Tau-functions of W_m by the divided-difference recursion and by a
//! Nyström discretization of the contour Fredholm determinant.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::gamma::{GammaElement, GammaError};
use crate::herglotz::{HerglotzError, MFunction};
use crate::linalg::{cond1_estimate, lu_log_det, LinalgError};
use crate::C64;

const TWO_PI_I: C64 = C64::new(0.0, std::f64::consts::TAU);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TauError {
    #[error("points {a} and {b} coincide within tolerance")]
    CoincidentPoints { a: C64, b: C64 },
    #[error("point {zeta} violates |ζ| > r = {r}")]
    BranchViolation { zeta: C64, r: f64 },
    #[error("atom point {zeta} has modulus below the contour bound {bound}")]
    RadiusViolation { zeta: C64, bound: f64 },
    #[error("m_o is {value:e} at outer node {lambda}")]
    ModdVanishes { lambda: C64, value: f64 },
    #[error("determinant condition estimate {cond:e} exceeds {limit:e}")]
    IllConditioned { cond: f64, limit: f64 },
    #[error("kernel evaluated on its diagonal at {z}")]
    DiagonalHit { z: C64 },
    #[error("contour invalid: {0}")]
    BadContour(String),
    #[error("tau vanishes")]
    TauZero,
    #[error(transparent)]
    Herglotz(#[from] HerglotzError),
    #[error(transparent)]
    Gamma(#[from] GammaError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Trapezoidal ellipse `λ(θ) = c + a cos θ + i b sin θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub center: C64,
    pub semi_axes: (f64, f64),
    pub node_count: usize,
    pub nodes: Vec<C64>,
    pub weights: Vec<C64>,
}

impl Contour {
    pub fn ellipse(center: C64, a: f64, b: f64, m: usize) -> Self {
        let h = std::f64::consts::TAU / m as f64;
        let (nodes, weights) = (0..m)
            .map(|j| {
                let th = h * j as f64;
                let (s, c) = th.sin_cos();
                (center + C64::new(a * c, b * s), C64::new(-a * s, b * c) * h)
            })
            .unzip();
        Contour { center, semi_axes: (a, b), node_count: m, nodes, weights }
    }

    /// Strictly encloses `[−r², r²]`.
    pub fn encloses_interval(&self, r2: f64) -> bool {
        let (a, b) = self.semi_axes;
        // the ellipse interior contains the segment iff both endpoints are inside
        let inside = |x: f64| {
            let d = C64::new(x, 0.0) - self.center;
            (d.re / a).powi(2) + (d.im / b).powi(2) < 1.0
        };
        inside(r2) && inside(-r2)
    }

    /// Strictly inside the other contour (both centered ellipses).
    pub fn inside(&self, other: &Contour) -> bool {
        let (a, b) = other.semi_axes;
        self.nodes.iter().all(|l| {
            let d = l - other.center;
            (d.re / a).powi(2) + (d.im / b).powi(2) < 1.0
        })
    }

    pub fn max_modulus(&self) -> f64 {
        self.nodes.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Recursion,
    Determinant,
    Truncation,
}

impl std::fmt::Display for Route {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Route::Recursion => "recursion",
            Route::Determinant => "determinant",
            Route::Truncation => "truncation",
        })
    }
}

/// Regularizer tag; only δ(z) = z is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    #[default]
    Identity,
}

const MIN_NODES: usize = 8;

#[derive(Debug, Clone)]
pub struct TauConfig {
    pub r: f64,
    pub s: f64,
    pub inner: Contour,
    pub outer: Contour,
    pub fd_step: f64,
    pub regularizer: Regularizer,
    pub cond_limit: f64,
    /// Atoms must exceed `margin · sup|sqrt(λ′)|`.
    pub atom_margin: f64,
    /// Spacing of the translation anchors used for long x-ranges.
    pub anchor_spacing: f64,
    /// Combine stencils at h and h/2 to cancel the leading error term.
    pub richardson: bool,
}

impl TauConfig {
    /// Default geometry for spectral radius `r` (the contour scale is `max(r, 1)`).
    pub fn for_radius(r: f64) -> Self {
        Self::with_nodes(r, 128)
    }

    pub fn with_nodes(r: f64, m: usize) -> Self {
        let rc = r.max(1.0);
        let r2 = rc * rc;
        let zero = C64::new(0.0, 0.0);
        TauConfig {
            r,
            s: 1.6 * rc,
            inner: Contour::ellipse(zero, 1.5 * r2, 0.75 * r2, m),
            outer: Contour::ellipse(zero, 2.25 * r2, 1.5 * r2, m),
            fd_step: 1e-2,
            regularizer: Regularizer::Identity,
            cond_limit: 1e12,
            atom_margin: 1.05,
            anchor_spacing: 3.0,
            richardson: false,
        }
    }

    pub fn with_axes(mut self, inner: (f64, f64), outer: (f64, f64), m: usize) -> Self {
        let zero = C64::new(0.0, 0.0);
        self.inner = Contour::ellipse(zero, inner.0, inner.1, m);
        self.outer = Contour::ellipse(zero, outer.0, outer.1, m);
        self
    }

    pub fn validate(&self) -> Result<(), TauError> {
        let r2 = self.r * self.r;
        if self.inner.nodes.len() < MIN_NODES || self.outer.nodes.len() < MIN_NODES {
            return Err(TauError::BadContour(format!("need at least {MIN_NODES} nodes per contour")));
        }
        if !self.inner.encloses_interval(r2) {
            return Err(TauError::BadContour(format!("inner contour does not enclose [−{r2}, {r2}]")));
        }
        if !self.inner.inside(&self.outer) {
            return Err(TauError::BadContour("inner contour not strictly inside outer".into()));
        }
        if self.outer.max_modulus() >= self.s * self.s {
            return Err(TauError::BadContour(format!("outer contour leaves |λ| < s² = {}", self.s * self.s)));
        }
        if !(self.fd_step > 0.0) {
            return Err(TauError::BadContour("fd_step must be positive".into()));
        }
        if !(self.anchor_spacing > 0.0) || !(self.cond_limit > 1.0) {
            return Err(TauError::BadContour("anchor_spacing must be positive and cond_limit above 1".into()));
        }
        Ok(())
    }

    /// Smallest atom modulus accepted by the determinant route.
    pub fn atom_bound(&self) -> f64 {
        self.atom_margin * self.outer.max_modulus().sqrt()
    }
}

/// τ = exp(log_abs)·phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauResult {
    pub log_abs: f64,
    pub phase: C64,
    pub route: Route,
    pub condition: Option<f64>,
}

impl Serialize for TauResult {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Record {
            log_abs: f64,
            phase_re: f64,
            phase_im: f64,
            route: Route,
        }
        Record { log_abs: self.log_abs, phase_re: self.phase.re, phase_im: self.phase.im, route: self.route }
            .serialize(s)
    }
}

impl TauResult {
    pub fn one(route: Route) -> Self {
        TauResult { log_abs: 0.0, phase: C64::new(1.0, 0.0), route, condition: None }
    }

    pub fn from_value(v: C64, route: Route) -> Self {
        let r = v.norm();
        let phase = if r > 0.0 { v / r } else { C64::new(1.0, 0.0) };
        TauResult { log_abs: r.ln(), phase, route, condition: None }
    }

    pub fn value(&self) -> C64 {
        self.phase * self.log_abs.exp()
    }

    /// Complex logarithm with the principal phase.
    pub fn ln(&self) -> C64 {
        C64::new(self.log_abs, self.phase.arg())
    }

    pub fn mul(&self, o: &TauResult) -> TauResult {
        TauResult { log_abs: self.log_abs + o.log_abs, phase: self.phase * o.phase, route: self.route, condition: None }
    }

    pub fn div(&self, o: &TauResult) -> TauResult {
        TauResult { log_abs: self.log_abs - o.log_abs, phase: self.phase / o.phase, route: self.route, condition: None }
    }

    /// |τ₁ − τ₂|/|τ₂| computed on the log scale.
    pub fn rel_diff(&self, o: &TauResult) -> f64 {
        let q = (self.phase / o.phase) * (self.log_abs - o.log_abs).exp();
        (q - C64::new(1.0, 0.0)).norm()
    }
}

fn accumulate(log_abs: &mut f64, phase: &mut C64, f: C64) {
    let r = f.norm();
    *log_abs += r.ln();
    if r > 0.0 {
        *phase *= f / r;
    }
}

fn check_points(m: &MFunction, zetas: &[C64]) -> Result<(), TauError> {
    for (i, &z) in zetas.iter().enumerate() {
        if !(z.norm() > m.branch_radius) || m.cross_distance(z) <= crate::herglotz::BRANCH_TOL {
            return Err(TauError::BranchViolation { zeta: z, r: m.branch_radius });
        }
        for &w in &zetas[..i] {
            if (z - w).norm() <= 1e-10 * (1.0 + z.norm()) {
                return Err(TauError::CoincidentPoints { a: w, b: z });
            }
        }
    }
    Ok(())
}

/// τ_m(q_{ζ₁}⋯q_{ζ_n}) as the product of divided differences along the d-chain.
pub fn tau_product(m: &MFunction, zetas: &[C64]) -> Result<TauResult, TauError> {
    check_points(m, zetas)?;
    let mut log_abs = 0.0;
    let mut phase = C64::new(1.0, 0.0);
    let mut chain = m.clone();
    for (j, &zj) in zetas.iter().enumerate() {
        if j + 1 == zetas.len() {
            break;
        }
        let cj = chain.eval(zj)?;
        for &zn in &zetas[j + 1..] {
            let f = (chain.eval(zn)? - cj) / (zn - zj);
            accumulate(&mut log_abs, &mut phase, f);
        }
        chain = chain.d_transform(zj)?;
    }
    Ok(TauResult { log_abs, phase, route: Route::Recursion, condition: None })
}

/// τ for Πq_ζ · Πp_ζ′ via τ(Πq·Πq_ζ′)/Πτ(r_ζ′).
pub fn tau_product_mixed(m: &MFunction, q_zetas: &[C64], p_zetas: &[C64]) -> Result<TauResult, TauError> {
    for &p in p_zetas {
        for &q in q_zetas {
            for cand in [p, -p] {
                if (cand - q).norm() <= 1e-10 * (1.0 + q.norm()) {
                    return Err(TauError::CoincidentPoints { a: q, b: cand });
                }
            }
        }
    }
    let mut all = q_zetas.to_vec();
    all.extend_from_slice(p_zetas);
    let mut t = tau_product(m, &all)?;
    for &p in p_zetas {
        t = t.div(&tau_product(m, &[p, -p])?);
    }
    Ok(t)
}

/// 1 + φ_{gW_m}(ω) for g = Π q_ζ, i.e. τ_m(g q_ω)/τ_m(g).
pub fn one_plus_phi_after_q(m: &MFunction, zetas: &[C64], omega: C64) -> Result<C64, TauError> {
    let mut chain = m.clone();
    let mut v = C64::new(1.0, 0.0);
    for &z in zetas {
        v *= (chain.eval(z)? - chain.eval(omega)?) / (z - omega);
        chain = chain.d_transform(z)?;
    }
    Ok(v)
}

/// The kernel `M_g(z, λ)` with regularizer δ(z) = z.
pub fn kernel_m(m: &MFunction, g: &GammaElement, z: C64, lambda: C64) -> Result<C64, TauError> {
    if (lambda - z).norm() <= 1e-14 * (1.0 + z.norm()) {
        return Err(TauError::DiagonalHit { z });
    }
    let ghat = g.parity_parts(z)?;
    let s = lambda.sqrt();
    let gm = |p: C64| -> Result<C64, TauError> { Ok(g.eval(p)? * (m.eval(p)? - p)) };
    let (a, b) = (gm(s)?, gm(-s)?);
    let gme = (a + b) * 0.5;
    let gmo = (a - b) / (s * 2.0);
    Ok((ghat.gho * gme + ghat.ghe * gmo) / (lambda - z))
}

/// Everything in the determinant that depends on m and the contours only.
#[derive(Debug, Clone)]
pub struct DetPlan {
    cfg: TauConfig,
    free: bool,
    inner_sqrt: Vec<C64>,
    outer_sqrt: Vec<C64>,
    /// m̃(±sqrt λ_j) on the inner contour
    mt_plus: Vec<C64>,
    mt_minus: Vec<C64>,
    /// 1/(2πi m_o(λ′_k)) times the outer weights
    outer_scale: Vec<C64>,
    /// d_ij = λ_j − λ_i on the inner contour
    inv_gap: DMatrix<C64>,
    /// 1/(λ′_k − λ_i)
    cauchy: DMatrix<C64>,
}

impl DetPlan {
    pub fn new(m: &MFunction, cfg: &TauConfig) -> Result<Self, TauError> {
        cfg.validate()?;
        let inner = &cfg.inner;
        let outer = &cfg.outer;
        let inner_sqrt: Vec<C64> = inner.nodes.iter().map(|l| l.sqrt()).collect();
        let outer_sqrt: Vec<C64> = outer.nodes.iter().map(|l| l.sqrt()).collect();
        let mut mt_plus = Vec::with_capacity(inner.node_count);
        let mut mt_minus = Vec::with_capacity(inner.node_count);
        for &s in &inner_sqrt {
            mt_plus.push(m.eval(s)? - s);
            mt_minus.push(m.eval(-s)? + s);
        }
        let mut outer_scale = Vec::with_capacity(outer.node_count);
        for (k, &l) in outer.nodes.iter().enumerate() {
            let (_, mo) = m.parity_eval(l)?;
            if mo.norm() < 1e-10 {
                return Err(TauError::ModdVanishes { lambda: l, value: mo.norm() });
            }
            outer_scale.push(outer.weights[k] / (TWO_PI_I * mo));
        }
        let n = inner.node_count;
        let inv_gap = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(0.0, 0.0)
            } else {
                C64::new(1.0, 0.0) / (inner.nodes[j] - inner.nodes[i])
            }
        });
        let cauchy = DMatrix::from_fn(n, outer.node_count, |i, k| C64::new(1.0, 0.0) / (outer.nodes[k] - inner.nodes[i]));
        Ok(DetPlan {
            cfg: cfg.clone(),
            free: m.is_free(),
            inner_sqrt,
            outer_sqrt,
            mt_plus,
            mt_minus,
            outer_scale,
            inv_gap,
            cauchy,
        })
    }

    pub fn config(&self) -> &TauConfig {
        &self.cfg
    }

    /// (g(s), g(−s)) on the inner contour and (ĝ(s), ĝ(−s)) on the outer one.
    fn samples(&self, g: &GammaElement) -> Result<(Vec<(C64, C64)>, Vec<(C64, C64)>), TauError> {
        let bound = self.cfg.atom_bound();
        for a in &g.atoms {
            if a.point().norm() < bound {
                return Err(TauError::RadiusViolation { zeta: a.point(), bound });
            }
        }
        let inner = self.inner_sqrt.iter().map(|&s| Ok((g.eval(s)?, g.eval(-s)?))).collect::<Result<_, TauError>>()?;
        let outer =
            self.outer_sqrt.iter().map(|&s| Ok((g.eval_inv(s)?, g.eval_inv(-s)?))).collect::<Result<_, TauError>>()?;
        Ok((inner, outer))
    }

    /// K with I + K the Nyström matrix; bilinear in the inner and outer samples.
    fn kernel(&self, inner: &[(C64, C64)], outer: &[(C64, C64)]) -> DMatrix<C64> {
        let n = self.inner_sqrt.len();
        let mo = self.outer_sqrt.len();
        let mut e1 = Vec::with_capacity(mo);
        let mut e2 = Vec::with_capacity(mo);
        for k in 0..mo {
            let s = self.outer_sqrt[k];
            let (a, b) = outer[k];
            let ghe = (a + b) * 0.5;
            let gho = (a - b) / (s * 2.0);
            e1.push(self.outer_scale[k] * gho);
            e2.push(self.outer_scale[k] * ghe);
        }
        let mut ae = Vec::with_capacity(n);
        let mut bo = Vec::with_capacity(n);
        for j in 0..n {
            let s = self.inner_sqrt[j];
            let a = inner[j].0 * self.mt_plus[j];
            let b = inner[j].1 * self.mt_minus[j];
            let wj = self.cfg.inner.weights[j] / TWO_PI_I;
            ae.push(wj * (a + b) * 0.5);
            bo.push(wj * (a - b) / (s * 2.0));
        }
        // F_p(λ_i) = Σ_k e_pk/(λ′_k − λ_i) and its derivative
        let mut f1 = vec![C64::new(0.0, 0.0); n];
        let mut f2 = vec![C64::new(0.0, 0.0); n];
        let mut d1 = vec![C64::new(0.0, 0.0); n];
        let mut d2 = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let row = self.cauchy.row(i);
            for k in 0..mo {
                let c = row[k];
                let c2 = c * c;
                f1[i] += e1[k] * c;
                f2[i] += e2[k] * c;
                d1[i] += e1[k] * c2;
                d2[i] += e2[k] * c2;
            }
        }
        let mut a = DMatrix::<C64>::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                let (s1, s2) = if i == j {
                    (-d1[i], -d2[i])
                } else {
                    let ig = self.inv_gap[(i, j)];
                    ((f1[i] - f1[j]) * ig, (f2[i] - f2[j]) * ig)
                };
                a[(i, j)] = ae[j] * s1 + bo[j] * s2;
            }
        }
        a
    }

    fn factor(&self, mut a: DMatrix<C64>) -> Result<(TauResult, nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>), TauError> {
        for j in 0..a.nrows() {
            a[(j, j)] += C64::new(1.0, 0.0);
        }
        let copy = a.clone();
        let (ld, lu) = lu_log_det(a)?;
        let cond = cond1_estimate(&copy, &lu);
        if !(cond <= self.cfg.cond_limit) {
            return Err(TauError::IllConditioned { cond, limit: self.cfg.cond_limit });
        }
        Ok((TauResult { log_abs: ld.log_abs, phase: ld.phase, route: Route::Determinant, condition: Some(cond) }, lu))
    }

    /// det(I + K) for the element g.
    pub fn tau(&self, g: &GammaElement) -> Result<TauResult, TauError> {
        let (inner, outer) = self.samples(g)?;
        if self.free {
            return Ok(TauResult { condition: Some(1.0), ..TauResult::one(Route::Determinant) });
        }
        Ok(self.factor(self.kernel(&inner, &outer))?.0)
    }

    /// τ(g) together with d/dε log τ(e_ε g) at ε = 0, the latter as tr((I + K)⁻¹ ∂K).
    pub fn tau_with_line_derivative(&self, g: &GammaElement) -> Result<(TauResult, C64), TauError> {
        let (inner, outer) = self.samples(g)?;
        if self.free {
            return Ok((TauResult { condition: Some(1.0), ..TauResult::one(Route::Determinant) }, C64::new(0.0, 0.0)));
        }
        // e_ε multiplies g(±s) by e^{±εs} and ĝ(±s) by e^{∓εs}
        let d_inner: Vec<(C64, C64)> =
            inner.iter().zip(&self.inner_sqrt).map(|(&(a, b), &s)| (a * s, -b * s)).collect();
        let d_outer: Vec<(C64, C64)> =
            outer.iter().zip(&self.outer_sqrt).map(|(&(a, b), &s)| (-a * s, b * s)).collect();
        let dk = self.kernel(&d_inner, &outer) + self.kernel(&inner, &d_outer);
        let (t, lu) = self.factor(self.kernel(&inner, &outer))?;
        let x = lu.solve(&dk).ok_or(TauError::Linalg(LinalgError::Singular { index: 0 }))?;
        Ok((t, x.trace()))
    }
}

/// det(I + N_m(g)) on the configured contours.
pub fn tau_det(m: &MFunction, g: &GammaElement, cfg: &TauConfig) -> Result<TauResult, TauError> {
    DetPlan::new(m, cfg)?.tau(g)
}

/// A dispatched tau value with an optional second-route comparison.
#[derive(Debug, Clone, Serialize)]
pub struct TauAny {
    pub result: TauResult,
    pub cross: Option<CrossCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub other: TauResult,
    pub discrepancy: f64,
    pub method: String,
}

/// b_k with log(1 + φ(ω)) = Σ b_k ω^{−k}, sampled on |ω| = radius.
pub fn log_phi_coeffs(
    one_plus_phi: impl Fn(C64) -> Result<C64, TauError>,
    radius: f64,
    count: usize,
) -> Result<Vec<C64>, TauError> {
    let m = 4 * count.max(16);
    let mut samples = Vec::with_capacity(m);
    let mut prev: Option<C64> = None;
    for j in 0..m {
        let w = C64::from_polar(radius, std::f64::consts::TAU * j as f64 / m as f64);
        let v = one_plus_phi(w)?;
        if v.norm() == 0.0 {
            return Err(TauError::TauZero);
        }
        // continuous branch of the logarithm around the circle
        let mut l = v.ln();
        if let Some(p) = prev {
            let k = ((p.im - l.im) / std::f64::consts::TAU).round();
            l.im += k * std::f64::consts::TAU;
        }
        prev = Some(l);
        samples.push(l);
    }
    let c = crate::linalg::fourier_coeffs(&samples);
    // coefficient of e^{−ikθ} is c[m−k]; ω^{−k} = radius^{−k} e^{−ikθ}
    Ok((1..=count).map(|k| c[m - k] * radius.powi(k as i32)).collect())
}

/// ρ(g) = exp(Σ k b_k h_k) with h_k the Taylor coefficients of log g.
pub fn rho_from_coeffs(b: &[C64], g: &GammaElement) -> TauResult {
    let h = g.log_coeffs(b.len());
    let s: C64 = b.iter().zip(&h).enumerate().map(|(k, (bk, hk))| bk * hk * (k as f64 + 1.0)).sum();
    TauResult { log_abs: s.re, phase: C64::from_polar(1.0, s.im), route: Route::Recursion, condition: None }
}

/// Dispatcher: atoms-only elements use the recursion, anything with an
/// exponential part uses the determinant.
pub fn tau_any(m: &MFunction, g: &GammaElement, cfg: &TauConfig, cross_validate: bool) -> Result<TauAny, TauError> {
    if !g.has_exp() {
        let (q, p) = g.expanded_atoms();
        let result = if p.is_empty() { tau_product(m, &q)? } else { tau_product_mixed(m, &q, &p)? };
        let cross = if cross_validate {
            let other = tau_det(m, g, cfg)?;
            Some(CrossCheck { discrepancy: other.rel_diff(&result), other, method: "determinant".into() })
        } else {
            None
        };
        return Ok(TauAny { result, cross });
    }
    let result = tau_det(m, g, cfg)?;
    let cross = if cross_validate && !g.atoms.is_empty() {
        let (q, p) = g.expanded_atoms();
        if p.is_empty() {
            // cocycle: τ_m(g_a e^h) = τ_m(g_a) ρ_{g_a W}(e^h) τ_{m′}(e^h)
            let ta = tau_product(m, &q)?;
            let mprime = m.d_chain(&q)?;
            let exp = GammaElement::from_exp(g.exp_part.clone());
            let radius = 1.2 * m.branch_radius.max(1.0);
            let b = log_phi_coeffs(|w| one_plus_phi_after_q(m, &q, w), radius, 48)?;
            let rho = rho_from_coeffs(&b, &exp);
            let te = tau_det(&mprime, &exp, cfg)?;
            let other = TauResult { route: Route::Recursion, ..ta.mul(&rho).mul(&te) };
            Some(CrossCheck { discrepancy: other.rel_diff(&result), other, method: "cocycle".into() })
        } else {
            None
        }
    } else {
        None
    };
    Ok(TauAny { result, cross })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamma::{exp_line, Atom};
    use crate::herglotz::{mfun_free, mfun_from_sigma};

    fn z(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn one_mass() -> MFunction {
        mfun_from_sigma(1.0, &[(0.0, 0.5)]).unwrap()
    }

    #[test]
    fn trapezoid_reproduces_cauchy() {
        let c = Contour::ellipse(z(0.0, 0.0), 1.5, 0.75, 128);
        let z0 = z(3.0, 1.0);
        // ∮ dλ/(λ − z0) = 0 for z0 outside; ∮ dλ/(λ − 0.2) = 2πi
        let out: C64 = c.nodes.iter().zip(&c.weights).map(|(l, w)| w / (l - z0)).sum();
        let inn: C64 = c.nodes.iter().zip(&c.weights).map(|(l, w)| w / (l - 0.2)).sum();
        assert!(out.norm() < 1e-10);
        assert!((inn - TWO_PI_I).norm() < 1e-10);
    }

    #[test]
    fn product_basics() {
        let m = one_mass();
        let t = tau_product(&m, &[z(3.0, 0.0)]).unwrap();
        assert_eq!(t.value(), z(1.0, 0.0));
        let f = mfun_free();
        let t = tau_product(&f, &[z(3.0, 0.0), z(0.0, 4.0)]).unwrap();
        assert!((t.value() - z(1.0, 0.0)).norm() < 1e-15);
        let two = tau_product(&m, &[z(3.0, 0.0), z(0.0, 4.0)]).unwrap();
        let direct = (m.eval(z(3.0, 0.0)).unwrap() - m.eval(z(0.0, 4.0)).unwrap()) / z(3.0, -4.0);
        assert!((two.value() - direct).norm() < 1e-15);
    }

    #[test]
    fn product_errors() {
        let m = one_mass();
        assert!(matches!(tau_product(&m, &[z(3.0, 0.0), z(3.0, 0.0)]), Err(TauError::CoincidentPoints { .. })));
        assert!(matches!(tau_product(&m, &[z(0.5, 0.0)]), Err(TauError::BranchViolation { .. })));
    }

    #[test]
    fn product_matches_determinant() {
        let m = one_mass();
        let cfg = TauConfig::for_radius(1.0);
        let zs = [z(3.0, 0.0), z(0.0, 4.0)];
        let tp = tau_product(&m, &zs).unwrap();
        let td = tau_det(&m, &GammaElement::q_product(&zs), &cfg).unwrap();
        assert!(td.rel_diff(&tp) < 1e-6, "{}", td.rel_diff(&tp));
    }

    #[test]
    fn mixed_free_is_one() {
        let f = mfun_free();
        let r = tau_product(&f, &[z(2.0, 1.0), z(-2.0, -1.0)]).unwrap();
        assert!((r.value() - z(1.0, 0.0)).norm() < 1e-15);
        let p = tau_product_mixed(&f, &[], &[z(2.0, 1.0)]).unwrap();
        assert!((p.value() - z(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn mixed_matches_determinant() {
        let m = one_mass();
        let cfg = TauConfig::for_radius(1.0);
        let tp = tau_product_mixed(&m, &[z(3.0, 0.0)], &[z(4.0, 1.0)]).unwrap();
        let g = GammaElement::from_atoms(vec![Atom::QPole(z(3.0, 0.0)), Atom::PZero(z(4.0, 1.0))]);
        let td = tau_det(&m, &g, &cfg).unwrap();
        assert!(td.rel_diff(&tp) < 1e-6, "{}", td.rel_diff(&tp));
    }

    #[test]
    fn determinant_trivial_cases() {
        let cfg = TauConfig::for_radius(1.0);
        let m = one_mass();
        let t = tau_det(&m, &GammaElement::identity(), &cfg).unwrap();
        assert!((t.value() - z(1.0, 0.0)).norm() < 1e-14);
        let t = tau_det(&mfun_free(), &exp_line(0.7), &cfg).unwrap();
        assert_eq!(t.value(), z(1.0, 0.0));
    }

    #[test]
    fn kernel_zero_for_free() {
        let v = kernel_m(&mfun_free(), &GammaElement::identity(), z(4.0, 1.0), z(1.0, 0.5)).unwrap();
        assert_eq!(v, z(0.0, 0.0));
        assert!(matches!(
            kernel_m(&one_mass(), &exp_line(0.2), z(4.0, 1.0), z(4.0, 1.0)),
            Err(TauError::DiagonalHit { .. })
        ));
    }

    #[test]
    fn real_element_gives_real_tau() {
        let cfg = TauConfig::for_radius(1.0);
        let t = tau_det(&one_mass(), &exp_line(0.8), &cfg).unwrap();
        assert!(t.phase.im.abs() < 1e-8);
    }

    #[test]
    fn any_cocycle_cross_check() {
        let cfg = TauConfig::for_radius(1.0);
        let g = &GammaElement::q_product(&[z(3.0, 0.0)]) * &exp_line(0.2);
        let out = tau_any(&one_mass(), &g, &cfg, true).unwrap();
        let cross = out.cross.unwrap();
        assert!(cross.discrepancy < 1e-5, "{}", cross.discrepancy);
    }

    #[test]
    fn radius_guard() {
        let cfg = TauConfig::for_radius(1.0);
        let g = GammaElement::q_product(&[z(1.2, 0.0)]);
        assert!(matches!(tau_det(&one_mass(), &g, &cfg), Err(TauError::RadiusViolation { .. })));
    }

    #[test]
    fn json_shape() {
        let t = TauResult::from_value(z(-2.0, 0.0), Route::Determinant);
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.starts_with("{\"log_abs\":"));
        assert!(s.contains("\"phase_re\":-1.0"));
        assert!(s.contains("\"route\":\"determinant\""));
    }
}
