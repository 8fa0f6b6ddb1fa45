//! Potentials q = −2∂²ₓ log τ, the KdV flow, Baker–Akhiezer functions and
//! the evolved m-function.
//!
//! The determinant loses accuracy when |x| grows because e^{xz} is large on
//! the contours. Long x-ranges are handled with translation anchors: the
//! m-function of e_{x_a}W is recovered once (by the contour formula for m plus
//! a rational fit) and q near x_a is computed from τ of that m-function. The
//! cocycle factor relating the two tau-functions is log-linear in x and t, so
//! it drops out of every second derivative.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gamma::{exp_line, Atom, GammaElement, GammaError};
use crate::herglotz::{HerglotzError, MFunction};
use crate::linalg::{fit_monic_rational, LinalgError};
use crate::tau::{DetPlan, TauConfig, TauError, TauResult};
use crate::C64;

const STENCIL2: [f64; 5] = [-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0];
const STENCIL1: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
/// Trapezoid nodes on |ω| = R for the contour formula of m.
const OMEGA_NODES: usize = 48;
const ANCHOR_FIT_TOL: f64 = 1e-9;
/// Width in x of the band around a seam between anchors where both are blended.
const BLEND_WIDTH: f64 = 1.0;

/// 35t⁴ − 84t⁵ + 70t⁶ − 20t⁷: 0 → 1 with three vanishing derivatives at both ends.
fn smoothstep7(t: f64) -> f64 {
    t.powi(4) * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("group element is not real")]
    NotReal,
    #[error("tau vanishes at x = {x}")]
    TauZero { x: f64 },
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("grid nodes must be increasing and uniformly spaced")]
    NonUniformGrid,
    #[error("empty grid")]
    EmptyGrid,
    #[error("quadrature for m did not converge (coarse/fine gap {gap:e})")]
    QuadratureNonconvergence { gap: f64 },
    #[error("translated m-function fit at x = {x} has residual {residual:e}")]
    AnchorFit { x: f64, residual: f64 },
    #[error("need bound < R < |ζ|, got bound {bound}, R {radius}, |ζ| {zeta_abs}")]
    BadRadius { bound: f64, radius: f64, zeta_abs: f64 },
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Tau(#[from] TauError),
    #[error(transparent)]
    Gamma(#[from] GammaError),
    #[error(transparent)]
    Herglotz(#[from] HerglotzError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Time dependence attached to e_x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// e^{−4tz³}: ∂_t u = 6uu′ − u‴.
    #[default]
    Kdv,
    /// e^{tz³}: ∂_t q = ¼q‴ − (3/2)qq′.
    Scaled,
    /// e^{tz}: ∂_t q = q′.
    Translation,
}

impl Convention {
    pub fn element(self, t: f64) -> GammaElement {
        let zero = C64::new(0.0, 0.0);
        match self {
            Convention::Kdv => GammaElement::from_exp(vec![zero, zero, C64::new(-4.0 * t, 0.0)]),
            Convention::Scaled => GammaElement::from_exp(vec![zero, zero, C64::new(t, 0.0)]),
            Convention::Translation => exp_line(t),
        }
    }

    pub fn equation(self) -> &'static str {
        match self {
            Convention::Kdv => "u_t - 6 u u_x + u_xxx",
            Convention::Scaled => "q_t - q_xxx/4 + 3 q q_x/2",
            Convention::Translation => "q_t - q_x",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub m_description: String,
    pub config_hash: String,
    pub convention: Convention,
    pub max_imag_residue: f64,
    pub anchors: Vec<f64>,
}

/// q(x_i, t_j) stored as `q_values[i][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowGrid {
    pub x_nodes: Vec<f64>,
    pub t_nodes: Vec<f64>,
    pub q_values: Vec<Vec<f64>>,
    pub pole_flags: Vec<Vec<bool>>,
    pub provenance: Provenance,
}

fn fmt17(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

impl FlowGrid {
    /// Column `j` as a vector over x.
    pub fn slice(&self, j: usize) -> Vec<f64> {
        self.q_values.iter().map(|row| row[j]).collect()
    }

    pub fn has_poles(&self) -> bool {
        self.pole_flags.iter().flatten().any(|&p| p)
    }

    /// `x,t,q,pole_flag`, t-major, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,t,q,pole_flag\n");
        for (j, &t) in self.t_nodes.iter().enumerate() {
            for (i, &x) in self.x_nodes.iter().enumerate() {
                let flag = self.pole_flags[i][j];
                let q = if flag { f64::NAN } else { self.q_values[i][j] };
                out.push_str(&format!("{},{},{},{}\n", fmt17(x), fmt17(t), fmt17(q), flag as u8));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<FlowGrid, FlowError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "x,t,q,pole_flag" => {}
            other => return Err(FlowError::Csv(format!("bad header {other:?}"))),
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(FlowError::Csv(format!("line {}: expected 4 fields", n + 2)));
            }
            let p = |s: &str| s.trim().parse::<f64>().map_err(|e| FlowError::Csv(format!("line {}: {e}", n + 2)));
            rows.push((p(f[0])?, p(f[1])?, p(f[2])?, f[3].trim() == "1"));
        }
        let mut xs: Vec<f64> = Vec::new();
        let mut ts: Vec<f64> = Vec::new();
        for r in &rows {
            if !xs.contains(&r.0) {
                xs.push(r.0);
            }
            if !ts.contains(&r.1) {
                ts.push(r.1);
            }
        }
        if xs.is_empty() || rows.len() != xs.len() * ts.len() {
            return Err(FlowError::Csv("rows do not form a full x × t grid".into()));
        }
        let mut q = vec![vec![f64::NAN; ts.len()]; xs.len()];
        let mut flags = vec![vec![false; ts.len()]; xs.len()];
        for r in rows {
            let i = xs.iter().position(|&x| x == r.0).unwrap();
            let j = ts.iter().position(|&t| t == r.1).unwrap();
            q[i][j] = r.2;
            flags[i][j] = r.3;
        }
        Ok(FlowGrid {
            x_nodes: xs,
            t_nodes: ts,
            q_values: q,
            pole_flags: flags,
            provenance: Provenance {
                m_description: "csv".into(),
                config_hash: String::new(),
                convention: Convention::Kdv,
                max_imag_residue: 0.0,
                anchors: Vec::new(),
            },
        })
    }

    pub fn metadata_json(&self) -> String {
        #[derive(Serialize)]
        struct Meta<'a> {
            x_count: usize,
            t_count: usize,
            x_range: (f64, f64),
            t_range: (f64, f64),
            poles: usize,
            equation: &'a str,
            provenance: &'a Provenance,
        }
        let first_last = |v: &[f64]| (v.first().copied().unwrap_or(f64::NAN), v.last().copied().unwrap_or(f64::NAN));
        let meta = Meta {
            x_count: self.x_nodes.len(),
            t_count: self.t_nodes.len(),
            x_range: first_last(&self.x_nodes),
            t_range: first_last(&self.t_nodes),
            poles: self.pole_flags.iter().flatten().filter(|&&p| p).count(),
            equation: self.provenance.convention.equation(),
            provenance: &self.provenance,
        };
        serde_json::to_string_pretty(&meta).expect("metadata serializes")
    }
}

pub fn describe_mfunction(m: &MFunction) -> String {
    let poly = |c: &[C64]| c.iter().map(|v| format!("{:e}{:+e}i", v.re, v.im)).collect::<Vec<_>>().join(" ");
    let chain = m.transform_chain.iter().map(|v| format!("{:e}{:+e}i", v.re, v.im)).collect::<Vec<_>>().join(" ");
    format!(
        "r={:e} rho={:e} numer=[{}] denom=[{}] chain=[{}]",
        m.branch_radius,
        m.w_radius,
        poly(&m.numer),
        poly(&m.denom),
        chain
    )
}

/// FNV-1a over the canonical description of the configuration.
pub fn config_hash(cfg: &TauConfig) -> String {
    let canon = format!(
        "r={:e};s={:e};inner={:e},{:e},{};outer={:e},{:e},{};h={:e};cond={:e};margin={:e};anchor={:e};rich={}",
        cfg.r,
        cfg.s,
        cfg.inner.semi_axes.0,
        cfg.inner.semi_axes.1,
        cfg.inner.node_count,
        cfg.outer.semi_axes.0,
        cfg.outer.semi_axes.1,
        cfg.outer.node_count,
        cfg.fd_step,
        cfg.cond_limit,
        cfg.atom_margin,
        cfg.anchor_spacing,
        cfg.richardson
    );
    let mut h: u64 = 0xcbf29ce484222325;
    for b in canon.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Values of m_{e_xW}(ζ) on several ζ from one plan, by the contour formula
/// on |ω| = R. Returns (fine, coarse) pairs; the coarse rule uses every other node.
fn m_translated_values(
    plan: &DetPlan,
    x: f64,
    zetas: &[C64],
    radius: f64,
) -> Result<Vec<(C64, C64)>, FlowError> {
    let ex = exp_line(x);
    let t0 = plan.tau(&ex)?;
    if t0.log_abs < -700.0 {
        return Err(FlowError::TauZero { x });
    }
    let omegas: Vec<C64> =
        (0..OMEGA_NODES).map(|j| C64::from_polar(radius, TAU * (j as f64 + 0.5) / OMEGA_NODES as f64)).collect();
    let rel = |g: GammaElement| -> Result<C64, FlowError> { Ok(plan.tau(&g)?.div(&t0).value()) };
    let with_atoms = |atoms: Vec<Atom>| GammaElement { atoms, exp_part: ex.exp_part.clone() };
    let a: Vec<C64> = omegas.iter().map(|&w| rel(with_atoms(vec![Atom::QPole(w)]))).collect::<Result<_, _>>()?;
    zetas
        .iter()
        .map(|&z| {
            let b = rel(with_atoms(vec![Atom::QPole(z)]))?;
            if b.norm() == 0.0 {
                return Err(FlowError::TauZero { x });
            }
            let mut fine = C64::new(0.0, 0.0);
            let mut coarse = C64::new(0.0, 0.0);
            for (j, &w) in omegas.iter().enumerate() {
                let c = rel(with_atoms(vec![Atom::QPole(z), Atom::QPole(w)]))?;
                let term = (a[j] - c / b) * w;
                fine += term;
                if j % 2 == 0 {
                    coarse += term;
                }
            }
            let n = OMEGA_NODES as f64;
            Ok((z + fine / n, z + coarse * (2.0 / n)))
        })
        .collect()
}

fn check_radii(cfg: &TauConfig, zeta: C64, radius: f64) -> Result<(), FlowError> {
    let bound = cfg.atom_bound().max(cfg.r);
    if !(radius > bound && zeta.norm() > radius) {
        return Err(FlowError::BadRadius { bound, radius, zeta_abs: zeta.norm() });
    }
    Ok(())
}

/// m_{e_xW_m}(ζ) by the contour formula on |ω| = R, with the tau-values of
/// e_xW obtained by cocycle division.
pub fn m_evolve(m: &MFunction, x: f64, zeta: C64, radius: f64, cfg: &TauConfig) -> Result<C64, FlowError> {
    check_radii(cfg, zeta, radius)?;
    if m.is_free() {
        return Ok(zeta);
    }
    let plan = DetPlan::new(m, cfg)?;
    let (fine, coarse) = m_translated_values(&plan, x, &[zeta], radius)?[0];
    let gap = (fine - coarse).norm();
    if gap > 1e-6 * (1.0 + fine.norm()) {
        return Err(FlowError::QuadratureNonconvergence { gap });
    }
    Ok(fine)
}

/// Default (ζ-radius, ω-radius) for the contour formula.
fn evolve_radii(cfg: &TauConfig) -> (f64, f64) {
    let rc = cfg.r.max(1.0);
    let radius = (2.5 * rc).max(1.2 * cfg.atom_bound());
    (1.4 * radius, radius)
}

/// m_{e_xW}(ζ) = ζ − ∂ₓ log τ(e_x q_ζ) + ∂ₓ log τ(e_x), i.e. −f′/f of the
/// Baker–Akhiezer function, with the x-derivatives taken analytically.
fn m_translated_by_derivative(plan: &DetPlan, x: f64, zetas: &[C64]) -> Result<Vec<C64>, FlowError> {
    let ex = exp_line(x);
    let (t0, d0) = plan.tau_with_line_derivative(&ex)?;
    if t0.log_abs < -700.0 {
        return Err(FlowError::TauZero { x });
    }
    zetas
        .par_iter()
        .map(|&z| {
            let g = GammaElement { atoms: vec![Atom::QPole(z)], exp_part: ex.exp_part.clone() };
            let (t1, d1) = plan.tau_with_line_derivative(&g)?;
            if t1.log_abs < -700.0 {
                return Err(FlowError::TauZero { x });
            }
            Ok(z - d1 + d0)
        })
        .collect()
}

/// The m-function of e_{dx}W_m as an explicit rational function of the same
/// degree (or lower, when a mass has decayed away), fitted to Baker–Akhiezer
/// values. Returns it with the relative residual at held-out check points.
pub fn translate_mfunction(m: &MFunction, dx: f64, cfg: &TauConfig) -> Result<(MFunction, f64), FlowError> {
    if m.is_free() || dx == 0.0 {
        return Ok((m.clone(), 0.0));
    }
    let n = m.degree();
    let plan = DetPlan::new(m, cfg)?;
    let (zr, _) = evolve_radii(cfg);
    let nfit = (4 * n + 8).max(12);
    let ncheck = 4;
    let zetas: Vec<C64> = (0..nfit + ncheck)
        .map(|k| C64::from_polar(zr, TAU * (k as f64 + 0.37) / (nfit + ncheck) as f64))
        .collect();
    let vals = m_translated_by_derivative(&plan, dx, &zetas)?;
    // interleave: every (nfit+ncheck)/ncheck-th point is held out
    let stride = (nfit + ncheck) / ncheck;
    let (mut fw, mut fv, mut cz, mut cv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, (&z, &v)) in zetas.iter().zip(&vals).enumerate() {
        if k % stride == stride - 1 && cz.len() < ncheck {
            cz.push(z);
            cv.push(v);
        } else {
            fw.push(m.w(z));
            fv.push(v);
        }
    }
    // A mass whose weight has decayed below the fit tolerance makes the
    // full-degree system rank deficient; drop degrees until the fit holds.
    let real = |c: Vec<C64>| c.into_iter().map(|v| C64::new(v.re, 0.0)).collect::<Vec<_>>();
    let mut best: Option<(MFunction, f64)> = None;
    let mut last_err = None;
    for deg in (0..=n).rev() {
        let (p, q) = match fit_monic_rational(&fw, &fv, deg) {
            Ok(pq) => pq,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let fitted = MFunction::from_parts(m.branch_radius, m.w_radius, real(p), real(q));
        let mut residual: f64 = 0.0;
        for (&z, &v) in cz.iter().zip(&cv) {
            residual = residual.max((fitted.eval(z)? - v).norm() / v.norm());
        }
        if best.as_ref().is_none_or(|b| residual < b.1) {
            best = Some((fitted, residual));
        }
        if residual <= ANCHOR_FIT_TOL {
            break;
        }
    }
    best.ok_or_else(|| last_err.map(FlowError::from).unwrap_or(FlowError::AnchorFit { x: dx, residual: f64::INFINITY }))
}

#[derive(Debug, Clone)]
pub struct Anchor {
    pub x: f64,
    pub m: MFunction,
    pub fit_residual: f64,
    pub plan: DetPlan,
}

/// Lazily built chain of translation anchors at multiples of the spacing.
#[derive(Debug, Clone)]
pub struct TranslationAtlas {
    cfg: TauConfig,
    anchors: BTreeMap<i64, Anchor>,
}

impl TranslationAtlas {
    pub fn new(m: &MFunction, cfg: &TauConfig) -> Result<Self, FlowError> {
        let plan = DetPlan::new(m, cfg)?;
        let mut anchors = BTreeMap::new();
        anchors.insert(0, Anchor { x: 0.0, m: m.clone(), fit_residual: 0.0, plan });
        Ok(TranslationAtlas { cfg: cfg.clone(), anchors })
    }

    pub fn spacing(&self) -> f64 {
        self.cfg.anchor_spacing
    }

    pub fn config(&self) -> &TauConfig {
        &self.cfg
    }

    pub fn base(&self) -> &MFunction {
        &self.anchors[&0].m
    }

    pub fn index_for(&self, x: f64) -> i64 {
        if self.cfg.anchor_spacing > 0.0 && self.cfg.anchor_spacing.is_finite() {
            (x / self.cfg.anchor_spacing).round() as i64
        } else {
            0
        }
    }

    pub fn ensure(&mut self, k: i64) -> Result<(), FlowError> {
        let step = k.signum();
        let mut cur = 0i64;
        while cur != k {
            let next = cur + step;
            if !self.anchors.contains_key(&next) {
                let prev = &self.anchors[&cur];
                let dx = step as f64 * self.cfg.anchor_spacing;
                let x = next as f64 * self.cfg.anchor_spacing;
                let (m, residual) = translate_mfunction(&prev.m, dx, &self.cfg)?;
                let residual = residual.max(prev.fit_residual);
                if residual > ANCHOR_FIT_TOL {
                    return Err(FlowError::AnchorFit { x, residual });
                }
                let plan = DetPlan::new(&m, &self.cfg)?;
                self.anchors.insert(next, Anchor { x, m, fit_residual: residual, plan });
            }
            cur = next;
        }
        Ok(())
    }

    /// Anchors and weights used for q at x: one anchor away from seams, and a
    /// smooth (C³) blend of the two neighbours within BLEND_WIDTH of a seam,
    /// so that fit mismatch between anchors never shows up as a jump in q.
    pub fn blend(&self, x: f64) -> Vec<(i64, f64)> {
        let sp = self.cfg.anchor_spacing;
        if !(sp > 0.0 && sp.is_finite()) {
            return vec![(0, 1.0)];
        }
        let p = x / sp;
        let k0 = p.floor();
        let half_band = (0.5 * BLEND_WIDTH / sp).min(0.25);
        let t = (p - k0 - (0.5 - half_band)) / (2.0 * half_band);
        if t <= 0.0 {
            vec![(k0 as i64, 1.0)]
        } else if t >= 1.0 {
            vec![(k0 as i64 + 1, 1.0)]
        } else {
            let w = smoothstep7(t);
            vec![(k0 as i64, 1.0 - w), (k0 as i64 + 1, w)]
        }
    }

    pub fn anchor(&self, k: i64) -> Option<&Anchor> {
        self.anchors.get(&k)
    }

    pub fn anchor_positions(&self) -> Vec<f64> {
        self.anchors.values().map(|a| a.x).collect()
    }
}

fn lin_coeff(g: &GammaElement) -> f64 {
    g.exp_part.first().map(|h| h.re).unwrap_or(0.0)
}

enum Sample {
    Value { q: f64, imag: f64 },
    Pole,
}

fn is_pole_error(e: &TauError) -> bool {
    matches!(e, TauError::IllConditioned { .. } | TauError::Linalg(LinalgError::Singular { .. }) | TauError::TauZero)
}

/// Where a stencil point sits: on the shared half-step lattice (in units of
/// h/2) or at an exact offset private to one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Point {
    Lattice(i64),
    Private { cell: usize, slot: usize },
}

/// Offsets in units of h/(2d) for the 5-point stencil (and its half-step copy).
fn stencil_offsets(richardson: bool, d: i64) -> Vec<i64> {
    let mut v: Vec<i64> = (-2..=2).map(|s| 2 * d * s).collect();
    if richardson {
        v.extend((-2..=2).map(|s| d * s));
    }
    v
}

fn aligned(x: f64, unit: f64) -> bool {
    let u = x / unit;
    (u - u.round()).abs() < 1e-7
}

/// Smallest subdivision d ≤ 10 of h/2 on which every node lies; 0 if none.
fn lattice_divisor(x_nodes: &[f64], half: f64) -> i64 {
    (1..=10).find(|&d| x_nodes.iter().all(|&x| aligned(x, half / d as f64))).unwrap_or(0)
}

fn second_difference(t: &[Option<TauResult>], h: f64) -> Sample {
    let mut logs = [C64::new(0.0, 0.0); 5];
    let c = match t[2] {
        Some(v) => v.phase,
        None => return Sample::Pole,
    };
    for k in 0..5 {
        let v = match t[k] {
            Some(v) if v.log_abs.is_finite() && v.log_abs > -30.0 => v,
            _ => return Sample::Pole,
        };
        // phases unwrapped relative to the center
        let rel = v.phase / c;
        if rel.re <= 0.0 {
            return Sample::Pole;
        }
        logs[k] = C64::new(v.log_abs, rel.arg());
    }
    let d2: C64 = logs.iter().zip(STENCIL2).map(|(l, w)| l * w).sum::<C64>() / (h * h);
    let q = -2.0 * d2;
    Sample::Value { q: q.re, imag: q.im.abs() }
}

fn combine(values: &[Option<TauResult>], h: f64, richardson: bool) -> Sample {
    let coarse = second_difference(&values[..5], h);
    if !richardson {
        return coarse;
    }
    match (coarse, second_difference(&values[5..10], h / 2.0)) {
        (Sample::Value { q: a, imag: ia }, Sample::Value { q: b, imag: ib }) => {
            Sample::Value { q: (16.0 * b - a) / 15.0, imag: ia.max(ib) }
        }
        _ => Sample::Pole,
    }
}

/// Sweeps q over x_nodes × t_nodes for g·conv(t)·e_x.
///
/// Stencil points that fall on the common lattice hZ/2 are evaluated once and
/// shared between neighbouring cells.
pub fn flow_grid(
    m: &MFunction,
    g: &GammaElement,
    x_nodes: &[f64],
    t_nodes: &[f64],
    convention: Convention,
    cfg: &TauConfig,
) -> Result<FlowGrid, FlowError> {
    let mut atlas = TranslationAtlas::new(m, cfg)?;
    flow_grid_with_atlas(&mut atlas, g, x_nodes, t_nodes, convention)
}

/// As [`flow_grid`], reusing (and extending) the anchors of `atlas`.
pub fn flow_grid_with_atlas(
    atlas: &mut TranslationAtlas,
    g: &GammaElement,
    x_nodes: &[f64],
    t_nodes: &[f64],
    convention: Convention,
) -> Result<FlowGrid, FlowError> {
    if x_nodes.is_empty() || t_nodes.is_empty() {
        return Err(FlowError::EmptyGrid);
    }
    if !g.is_real() {
        return Err(FlowError::NotReal);
    }
    let cfg = atlas.config().clone();
    let cfg = &cfg;
    let m = atlas.base().clone();
    let m = &m;
    let h = cfg.fd_step;
    let half = h / 2.0;
    let elements: Vec<GammaElement> = t_nodes.iter().map(|&t| g * &convention.element(t)).collect();
    let shifts: Vec<f64> = elements.iter().map(lin_coeff).collect();
    let nt = t_nodes.len();
    let cells: Vec<(usize, usize)> = (0..x_nodes.len()).flat_map(|i| (0..nt).map(move |j| (i, j))).collect();
    let parts_of = |atlas: &TranslationAtlas, i: usize, j: usize| -> Vec<(i64, f64)> {
        if m.is_free() {
            vec![(0, 1.0)]
        } else {
            atlas.blend(x_nodes[i] + shifts[j])
        }
    };
    let parts: Vec<Vec<(i64, f64)>> = cells.iter().map(|&(i, j)| parts_of(atlas, i, j)).collect();
    let mut needed: Vec<i64> = parts.iter().flatten().map(|p| p.0).collect();
    needed.sort_unstable();
    needed.dedup();
    for &k in &needed {
        atlas.ensure(k)?;
    }
    let d = lattice_divisor(x_nodes, half);
    let unit = half / d.max(1) as f64;
    let offsets = stencil_offsets(cfg.richardson, d.max(1));
    // (anchor, t index, point) for every stencil entry of every part
    let mut keys: Vec<Vec<Vec<(i64, usize, Point)>>> = Vec::with_capacity(cells.len());
    for (c, &(i, j)) in cells.iter().enumerate() {
        let units = (x_nodes[i] / unit).round() as i64;
        keys.push(
            parts[c]
                .iter()
                .map(|&(k, _)| {
                    offsets
                        .iter()
                        .enumerate()
                        .map(|(slot, &o)| {
                            let p = if d > 0 { Point::Lattice(units + o) } else { Point::Private { cell: c, slot } };
                            (k, j, p)
                        })
                        .collect()
                })
                .collect(),
        );
    }
    let mut unique: Vec<(i64, usize, Point)> = keys.iter().flatten().flatten().copied().collect();
    unique.sort_unstable();
    unique.dedup();
    let evaluated: Vec<Option<TauResult>> = unique
        .par_iter()
        .map(|&(k, j, p)| {
            let a = atlas.anchor(k).expect("anchor built");
            let x = match p {
                Point::Lattice(u) => u as f64 * unit,
                Point::Private { cell, slot } => x_nodes[cells[cell].0] + offsets[slot] as f64 * unit,
            };
            match a.plan.tau(&(&elements[j] * &exp_line(x - a.x))) {
                Ok(t) => Ok(Some(t)),
                Err(e) if is_pole_error(&e) => Ok(None),
                Err(e) => Err(FlowError::from(e)),
            }
        })
        .collect::<Result<_, _>>()?;
    let lookup: BTreeMap<(i64, usize, Point), Option<TauResult>> = unique.into_iter().zip(evaluated).collect();
    let mut q = vec![vec![0.0; nt]; x_nodes.len()];
    let mut flags = vec![vec![false; nt]; x_nodes.len()];
    let mut imag: f64 = 0.0;
    for ((&(i, j), key), part) in cells.iter().zip(&keys).zip(&parts) {
        let mut value: Option<(f64, f64)> = Some((0.0, 0.0));
        for (kk, &(_, w)) in key.iter().zip(part) {
            let vals: Vec<Option<TauResult>> = kk.iter().map(|k| lookup[k]).collect();
            value = match (value, combine(&vals, h, cfg.richardson)) {
                (Some((acc, im)), Sample::Value { q: v, imag: iv }) => Some((acc + w * v, im.max(iv))),
                _ => None,
            };
        }
        match value {
            Some((v, im)) => {
                q[i][j] = v;
                imag = imag.max(im / (1.0 + v.abs()));
            }
            None => {
                q[i][j] = f64::NAN;
                flags[i][j] = true;
            }
        }
    }
    Ok(FlowGrid {
        x_nodes: x_nodes.to_vec(),
        t_nodes: t_nodes.to_vec(),
        q_values: q,
        pole_flags: flags,
        provenance: Provenance {
            m_description: describe_mfunction(m),
            config_hash: config_hash(cfg),
            convention,
            max_imag_residue: imag,
            anchors: atlas.anchor_positions(),
        },
    })
}

/// q(x) = −2∂²ₓ log τ_m(e_x).
pub fn potential(m: &MFunction, x_nodes: &[f64], cfg: &TauConfig) -> Result<FlowGrid, FlowError> {
    flow_grid(m, &GammaElement::identity(), x_nodes, &[0.0], Convention::Kdv, cfg)
}

/// (K(g)q)(x) = −2∂²ₓ log τ_m(g e_x).
pub fn flow_apply(m: &MFunction, g: &GammaElement, x_nodes: &[f64], cfg: &TauConfig) -> Result<FlowGrid, FlowError> {
    flow_grid(m, g, x_nodes, &[0.0], Convention::Kdv, cfg)
}

/// q(x, t) for e^{xz − 4tz³}.
pub fn kdv_evolve(m: &MFunction, x_nodes: &[f64], t_nodes: &[f64], cfg: &TauConfig) -> Result<FlowGrid, FlowError> {
    flow_grid(m, &GammaElement::identity(), x_nodes, t_nodes, Convention::Kdv, cfg)
}

/// a₁(x) = ∂ₓ log τ_m(e_x), direct determinant.
pub fn a1_diagnostic(m: &MFunction, x: f64, cfg: &TauConfig) -> Result<f64, FlowError> {
    let plan = DetPlan::new(m, cfg)?;
    let h = cfg.fd_step;
    let mut d = 0.0;
    for (k, w) in STENCIL1.iter().enumerate() {
        if *w != 0.0 {
            d += w * plan.tau(&exp_line(x + (k as f64 - 2.0) * h))?.log_abs;
        }
    }
    Ok(d / h)
}

fn ba_with_plan(plan: &DetPlan, x: f64, zeta: C64) -> Result<C64, FlowError> {
    let ex = exp_line(x);
    let t0 = plan.tau(&ex)?;
    if t0.log_abs < -700.0 {
        return Err(FlowError::TauZero { x });
    }
    let g = GammaElement { atoms: vec![Atom::QPole(zeta)], exp_part: ex.exp_part.clone() };
    let t1 = plan.tau(&g)?;
    Ok((-zeta * x).exp() * t1.div(&t0).value())
}

/// f(x, ζ) = e^{−xζ} τ_m(e_x q_ζ)/τ_m(e_x).
pub fn baker_akhiezer(m: &MFunction, x: f64, zeta: C64, cfg: &TauConfig) -> Result<C64, FlowError> {
    let plan = DetPlan::new(m, cfg)?;
    ba_with_plan(&plan, x, zeta)
}

/// |−f″ + qf + ζ²f| / (|ζ²||f|) with a 5-point stencil of step h.
pub fn schrodinger_residual_with_step(
    m: &MFunction,
    x: f64,
    zeta: C64,
    h: f64,
    cfg: &TauConfig,
) -> Result<f64, FlowError> {
    let plan = DetPlan::new(m, cfg)?;
    let f: Vec<C64> =
        (-2..=2).map(|k| ba_with_plan(&plan, x + k as f64 * h, zeta)).collect::<Result<_, _>>()?;
    let f2: C64 = f.iter().zip(STENCIL2).map(|(v, w)| v * w).sum::<C64>() / (h * h);
    let q = potential(m, &[x], cfg)?;
    if q.pole_flags[0][0] {
        return Err(FlowError::TauZero { x });
    }
    let qv = q.q_values[0][0];
    let z2 = zeta * zeta;
    Ok((-f2 + f[2] * qv + z2 * f[2]).norm() / (z2.norm() * f[2].norm()))
}

pub fn schrodinger_residual(m: &MFunction, x: f64, zeta: C64, cfg: &TauConfig) -> Result<f64, FlowError> {
    schrodinger_residual_with_step(m, x, zeta, cfg.fd_step, cfg)
}

/// −f′/f from a 5-point stencil of Baker–Akhiezer values.
pub fn ba_log_derivative(m: &MFunction, x: f64, zeta: C64, h: f64, cfg: &TauConfig) -> Result<C64, FlowError> {
    let plan = DetPlan::new(m, cfg)?;
    let f: Vec<C64> =
        (-2..=2).map(|k| ba_with_plan(&plan, x + k as f64 * h, zeta)).collect::<Result<_, _>>()?;
    let d: C64 = f.iter().zip(STENCIL1).map(|(v, w)| v * w).sum::<C64>() / h;
    Ok(-d / f[2])
}

fn uniform_step(v: &[f64]) -> Result<f64, FlowError> {
    let h = v[1] - v[0];
    if !(h > 0.0) {
        return Err(FlowError::NonUniformGrid);
    }
    for w in v.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0) {
            return Err(FlowError::NonUniformGrid);
        }
    }
    Ok(h)
}

/// Sup-norm of the evolution equation residual over interior nodes, with
/// 4th-order x-derivatives and a central t-difference.
pub fn kdv_residual(grid: &FlowGrid) -> Result<f64, FlowError> {
    let (nx, nt) = (grid.x_nodes.len(), grid.t_nodes.len());
    if nx < 7 || nt < 3 {
        return Err(FlowError::GridTooCoarse(format!("need ≥ 7 x-nodes and ≥ 3 t-nodes, got {nx} × {nt}")));
    }
    let hx = uniform_step(&grid.x_nodes)?;
    let ht = uniform_step(&grid.t_nodes)?;
    let q = &grid.q_values;
    let mut worst: f64 = 0.0;
    for j in 1..nt - 1 {
        for i in 3..nx - 3 {
            let u = |di: isize| q[(i as isize + di) as usize][j];
            let ut = (q[i][j + 1] - q[i][j - 1]) / (2.0 * ht);
            let ux = (u(-2) - 8.0 * u(-1) + 8.0 * u(1) - u(2)) / (12.0 * hx);
            let uxxx =
                (u(-3) - 8.0 * u(-2) + 13.0 * u(-1) - 13.0 * u(1) + 8.0 * u(2) - u(3)) / (8.0 * hx * hx * hx);
            let v = q[i][j];
            let r = match grid.provenance.convention {
                Convention::Kdv => ut - 6.0 * v * ux + uxxx,
                Convention::Scaled => ut - 0.25 * uxxx + 1.5 * v * ux,
                Convention::Translation => ut - ux,
            };
            if r.is_finite() {
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

/// Evenly spaced nodes from `lo` to `hi` with step `h` (endpoint included when it lands).
pub fn linspace_step(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let n = ((hi - lo) / h + 1e-9).floor() as usize;
    (0..=n).map(|k| lo + k as f64 * h).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamma::exp_kdv;
    use crate::herglotz::{mfun_free, mfun_from_sigma, mfun_zero_background};

    fn soliton() -> MFunction {
        mfun_zero_background(1.0, &[(0.0, 1.0)]).unwrap()
    }

    fn cfg() -> TauConfig {
        TauConfig::for_radius(1.0)
    }

    #[test]
    fn free_potential_vanishes() {
        let g = potential(&mfun_free(), &[-3.0, 0.0, 2.5], &cfg()).unwrap();
        assert!(g.q_values.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn soliton_shape_near_center() {
        let xs = [-2.0, -0.5, 0.0, 1.0, 2.5];
        let g = potential(&soliton(), &xs, &cfg()).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            let exact = -2.0 / x.cosh().powi(2);
            assert!((g.q_values[i][0] - exact).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn anchors_reach_far_tails() {
        let xs = [-7.0, -5.0, 5.0, 7.5];
        let g = potential(&soliton(), &xs, &cfg()).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            let exact = -2.0 / x.cosh().powi(2);
            assert!((g.q_values[i][0] - exact).abs() < 1e-8 * (1.0 + 1e4 * exact.abs()), "x={x} q={}", g.q_values[i][0]);
        }
    }

    #[test]
    fn one_mass_profile() {
        let m = mfun_from_sigma(1.0, &[(0.0, 0.5)]).unwrap();
        let xs = [-4.5, 0.7, 3.2, 6.0];
        let g = potential(&m, &xs, &cfg()).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            let exact = 1.0 - 1.0 / (0.5f64.sqrt() * x).cosh().powi(2);
            assert!((g.q_values[i][0] - exact).abs() < 1e-7, "x={x}");
        }
    }

    #[test]
    fn translation_fit_is_tight() {
        let (m3, res) = translate_mfunction(&soliton(), 3.0, &cfg()).unwrap();
        assert!(res < 1e-10, "{res}");
        assert_eq!(m3.degree(), 1);
    }

    #[test]
    fn m_evolve_at_origin() {
        let m = mfun_from_sigma(1.0, &[(0.0, 0.5)]).unwrap();
        let z = C64::new(3.0, 1.0);
        let v = m_evolve(&m, 0.0, z, 2.5, &cfg()).unwrap();
        assert!((v - m.eval(z).unwrap()).norm() < 1e-8);
        assert_eq!(m_evolve(&mfun_free(), 2.0, z, 2.5, &cfg()).unwrap(), z);
        assert!(matches!(m_evolve(&m, 0.0, C64::new(2.0, 0.0), 2.5, &cfg()), Err(FlowError::BadRadius { .. })));
    }

    #[test]
    fn baker_akhiezer_basics() {
        let z = C64::new(3.0, 0.0);
        let f = baker_akhiezer(&mfun_free(), 0.7, z, &cfg()).unwrap();
        assert!((f - (-z * 0.7).exp()).norm() < 1e-15);
        let f0 = baker_akhiezer(&soliton(), 0.0, z, &cfg()).unwrap();
        assert!((f0 - 1.0).norm() < 1e-10);
    }

    #[test]
    fn schrodinger_residual_small() {
        let r = schrodinger_residual(&soliton(), 0.4, C64::new(3.0, 0.0), &cfg()).unwrap();
        assert!(r < 1e-5, "{r}");
        // the 5-point truncation term h⁴ζ⁴/90 is ~9e-9 at h = 0.01, ζ = 3
        let r0 = schrodinger_residual_with_step(&mfun_free(), 0.4, C64::new(3.0, 0.0), 0.0025, &cfg()).unwrap();
        assert!(r0 < 1e-10, "{r0}");
    }

    #[test]
    fn kdv_matches_travelling_soliton() {
        let xs = linspace_step(-2.0, 2.0, 0.5);
        let ts = [0.0, 0.1];
        let g = kdv_evolve(&soliton(), &xs, &ts, &cfg()).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            for (j, &t) in ts.iter().enumerate() {
                let exact = -2.0 / (x - 4.0 * t).cosh().powi(2);
                assert!((g.q_values[i][j] - exact).abs() < 1e-6, "x={x} t={t}");
            }
        }
    }

    #[test]
    fn not_real_rejected() {
        let g = GammaElement::from_exp(vec![C64::new(0.0, 1.0)]);
        assert!(matches!(flow_apply(&soliton(), &g, &[0.0], &cfg()), Err(FlowError::NotReal)));
    }

    #[test]
    fn residual_needs_grid() {
        let g = potential(&soliton(), &[0.0, 0.1], &cfg()).unwrap();
        assert!(matches!(kdv_residual(&g), Err(FlowError::GridTooCoarse(_))));
    }

    #[test]
    fn csv_round_trip() {
        let g = kdv_evolve(&soliton(), &[-0.5, 0.0, 0.5], &[0.0, 0.01], &cfg()).unwrap();
        let text = g.to_csv();
        assert!(text.starts_with("x,t,q,pole_flag\n"));
        assert!(!text.contains('\r'));
        let back = FlowGrid::from_csv(&text).unwrap();
        assert_eq!(back.q_values, g.q_values);
        assert_eq!(back.t_nodes, g.t_nodes);
    }

    #[test]
    fn flow_law_composition() {
        let m = soliton();
        let g12 = &exp_kdv(0.0, 0.05) * &exp_kdv(0.0, 0.07);
        let a = flow_apply(&m, &g12, &[0.3], &cfg()).unwrap();
        let b = flow_apply(&m, &exp_kdv(0.0, 0.12), &[0.3], &cfg()).unwrap();
        assert!((a.q_values[0][0] - b.q_values[0][0]).abs() < 1e-9);
    }
}
