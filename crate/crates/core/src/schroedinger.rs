//! Weyl functions of a gridded potential by Riccati integration, the
//! m-function glued from them, reflectionless windows and the spectral floor.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::flow::{Convention, FlowError, FlowGrid, Provenance};
use crate::linalg::tridiag_min_eigen;
use crate::C64;

/// Default bound on tail variation accepted for WKB initialization.
pub const TAIL_TOL: f64 = 1e-8;
/// Tail length over which flatness is checked.
const TAIL_WINDOW: f64 = 1.0;
/// Largest |u|·Δx the Riccati route accepts; beyond it a pole is near and
/// the linear system takes over.
const POLE_GUARD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchroedingerError {
    #[error("Riccati solution crossed a pole at λ = {lambda} and the linear system gives f(0) = 0")]
    BlowUp { lambda: C64 },
    #[error("potential not flat at the {side} end: variation {variation:e} over the last unit")]
    TailNotFlat { side: Side, variation: f64 },
    #[error("λ = {lambda} lies on [{floor}, ∞) of the tail; need Im λ ≠ 0")]
    NotResolvent { lambda: C64, floor: f64 },
    #[error("Re z = 0 is not allowed")]
    ImaginaryAxis,
    #[error("grid must be uniform, symmetric and contain x = 0")]
    BadGrid,
    #[error("non-finite potential value at x = {x}")]
    NonFinite { x: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Plus,
    Minus,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Plus => "+",
            Side::Minus => "−",
        })
    }
}

/// Potential on a uniform grid over [−L, L] that contains 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialGrid {
    pub x_nodes: Vec<f64>,
    pub q_values: Vec<f64>,
    /// Tail variation bound used when deciding whether WKB data can be trusted.
    pub tail_tol: f64,
    dx: f64,
    origin: usize,
}

impl PotentialGrid {
    pub fn new(x_nodes: Vec<f64>, q_values: Vec<f64>) -> Result<Self, SchroedingerError> {
        let n = x_nodes.len();
        if n < 5 || q_values.len() != n {
            return Err(SchroedingerError::BadGrid);
        }
        let dx = (x_nodes[n - 1] - x_nodes[0]) / (n - 1) as f64;
        if !(dx > 0.0) {
            return Err(SchroedingerError::BadGrid);
        }
        for (i, &x) in x_nodes.iter().enumerate() {
            if (x - (x_nodes[0] + i as f64 * dx)).abs() > 1e-9 * dx.max(1.0) {
                return Err(SchroedingerError::BadGrid);
            }
        }
        let origin = x_nodes.iter().position(|x| x.abs() < 1e-9 * dx).ok_or(SchroedingerError::BadGrid)?;
        if origin == 0 || origin == n - 1 {
            return Err(SchroedingerError::BadGrid);
        }
        if let Some(i) = q_values.iter().position(|q| !q.is_finite()) {
            return Err(SchroedingerError::NonFinite { x: x_nodes[i] });
        }
        Ok(PotentialGrid { x_nodes, q_values, tail_tol: TAIL_TOL, dx, origin })
    }

    /// Samples `q` on [−L, L] with step `dx` (L rounded to a whole number of steps).
    pub fn from_fn(half_width: f64, dx: f64, q: impl Fn(f64) -> f64) -> Result<Self, SchroedingerError> {
        let k = (half_width / dx).round() as i64;
        let xs: Vec<f64> = (-k..=k).map(|i| i as f64 * dx).collect();
        let qs = xs.iter().map(|&x| q(x)).collect();
        Self::new(xs, qs)
    }

    /// Slice `j` of a flow grid. Pole-flagged nodes are rejected.
    pub fn from_flow_grid(grid: &FlowGrid, j: usize) -> Result<Self, SchroedingerError> {
        if j >= grid.t_nodes.len() {
            return Err(SchroedingerError::BadGrid);
        }
        Self::new(grid.x_nodes.clone(), grid.slice(j))
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn half_width(&self) -> f64 {
        self.x_nodes[self.x_nodes.len() - 1].min(-self.x_nodes[0])
    }

    pub fn tail_value(&self, side: Side) -> f64 {
        match side {
            Side::Plus => self.q_values[self.q_values.len() - 1],
            Side::Minus => self.q_values[0],
        }
    }

    /// Largest |q(x) − q(±L)| over the last unit at each end.
    pub fn tail_variation(&self, side: Side) -> f64 {
        let n = self.q_values.len();
        let w = ((TAIL_WINDOW / self.dx).ceil() as usize).min(n - 1);
        let end = self.tail_value(side);
        let range: Vec<usize> = match side {
            Side::Plus => (n - 1 - w..n).collect(),
            Side::Minus => (0..=w).collect(),
        };
        range.into_iter().map(|i| (self.q_values[i] - end).abs()).fold(0.0, f64::max)
    }

    fn check_tail(&self, side: Side) -> Result<(), SchroedingerError> {
        let variation = self.tail_variation(side);
        if variation > self.tail_tol {
            return Err(SchroedingerError::TailNotFlat { side, variation });
        }
        Ok(())
    }

    /// q at node i + 1/2 (cubic interpolation, indices clamped at the ends).
    fn mid(&self, i: usize) -> f64 {
        let n = self.q_values.len() as i64;
        let at = |k: i64| self.q_values[k.clamp(0, n - 1) as usize];
        let i = i as i64;
        (9.0 * (at(i) + at(i + 1)) - at(i - 1) - at(i + 2)) / 16.0
    }

    /// Single-t flow grid with the same CSV schema.
    pub fn to_flow_grid(&self) -> FlowGrid {
        FlowGrid {
            x_nodes: self.x_nodes.clone(),
            t_nodes: vec![0.0],
            q_values: self.q_values.iter().map(|&q| vec![q]).collect(),
            pole_flags: vec![vec![false]; self.q_values.len()],
            provenance: Provenance {
                m_description: "potential grid".into(),
                config_hash: String::new(),
                convention: Convention::Kdv,
                max_imag_residue: 0.0,
                anchors: Vec::new(),
            },
        }
    }

    pub fn to_csv(&self) -> String {
        self.to_flow_grid().to_csv()
    }

    pub fn from_csv(text: &str) -> Result<Self, SchroedingerError> {
        let grid = FlowGrid::from_csv(text)?;
        if grid.t_nodes.len() != 1 || grid.has_poles() {
            return Err(SchroedingerError::BadGrid);
        }
        Self::from_flow_grid(&grid, 0)
    }
}

/// Principal square root with Re ≥ 0.
fn sqrt_re(v: C64) -> C64 {
    let s = v.sqrt();
    if s.re < 0.0 {
        -s
    } else {
        s
    }
}

fn check_lambda(q: &PotentialGrid, lambda: C64, side: Side) -> Result<(), SchroedingerError> {
    let floor = q.tail_value(side);
    if lambda.im == 0.0 && !(lambda.re < floor) {
        return Err(SchroedingerError::NotResolvent { lambda, floor });
    }
    Ok(())
}

/// Node indices walked from the end of `side` toward the origin.
fn path(q: &PotentialGrid, side: Side) -> (usize, Vec<usize>) {
    let n = q.x_nodes.len();
    match side {
        Side::Plus => (n - 1, (q.origin..n - 1).rev().collect()),
        Side::Minus => (0, (1..=q.origin).collect()),
    }
}

/// Integrates u′ = (q − λ) − u² from the tail to 0. `None` on blow-up.
fn riccati_u0(q: &PotentialGrid, lambda: C64, side: Side, u_start: C64) -> Option<C64> {
    let (start, steps) = path(q, side);
    let h = match side {
        Side::Plus => -q.dx,
        Side::Minus => q.dx,
    };
    let f = |qx: f64, u: C64| (qx - lambda) - u * u;
    let mut u = u_start;
    let mut prev = start;
    for i in steps {
        let (q0, q1) = (q.q_values[prev], q.q_values[i]);
        let qm = q.mid(prev.min(i));
        let k1 = f(q0, u);
        let k2 = f(qm, u + k1 * (h / 2.0));
        let k3 = f(qm, u + k2 * (h / 2.0));
        let k4 = f(q1, u + k3 * h);
        u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !(u.norm() * q.dx < POLE_GUARD) {
            return None;
        }
        prev = i;
    }
    Some(u)
}

/// f′/f at 0 from the linear system (f, f′)′ = (f′, (q − λ)f), renormalized each step.
fn linear_u0(q: &PotentialGrid, lambda: C64, side: Side, u_start: C64) -> Option<C64> {
    let (start, steps) = path(q, side);
    let h = match side {
        Side::Plus => -q.dx,
        Side::Minus => q.dx,
    };
    let f = |qx: f64, y: [C64; 2]| [y[1], (qx - lambda) * y[0]];
    let mut y = [C64::new(1.0, 0.0), u_start];
    let mut prev = start;
    for i in steps {
        let (q0, q1) = (q.q_values[prev], q.q_values[i]);
        let qm = q.mid(prev.min(i));
        let add = |a: [C64; 2], b: [C64; 2], s: f64| [a[0] + b[0] * s, a[1] + b[1] * s];
        let k1 = f(q0, y);
        let k2 = f(qm, add(y, k1, h / 2.0));
        let k3 = f(qm, add(y, k2, h / 2.0));
        let k4 = f(q1, add(y, k3, h));
        for c in 0..2 {
            y[c] += (k1[c] + k2[c] * 2.0 + k3[c] * 2.0 + k4[c]) * (h / 6.0);
        }
        let scale = y[0].norm() + y[1].norm();
        if !(scale.is_finite() && scale > 0.0) {
            return None;
        }
        y = [y[0] / scale, y[1] / scale];
        prev = i;
    }
    if y[0].norm() <= 1e-14 * y[1].norm() {
        return None;
    }
    Some(y[1] / y[0])
}

fn wkb_start(q: &PotentialGrid, lambda: C64, side: Side) -> C64 {
    let root = sqrt_re(q.tail_value(side) - lambda);
    match side {
        Side::Plus => -root,
        Side::Minus => root,
    }
}

fn finish(u0: C64, side: Side) -> C64 {
    match side {
        Side::Plus => u0,
        Side::Minus => -u0,
    }
}

/// m₊(λ) = u(0) or m₋(λ) = −u(0) for u = f′/f of the solution decaying at ±∞.
pub fn riccati_weyl(q: &PotentialGrid, lambda: C64, side: Side) -> Result<C64, SchroedingerError> {
    check_lambda(q, lambda, side)?;
    q.check_tail(side)?;
    let start = wkb_start(q, lambda, side);
    let u0 = match riccati_u0(q, lambda, side, start) {
        Some(u) => u,
        None => linear_u0(q, lambda, side, start).ok_or(SchroedingerError::BlowUp { lambda })?,
    };
    Ok(finish(u0, side))
}

/// Same Weyl function through the linear system only.
pub fn linear_weyl(q: &PotentialGrid, lambda: C64, side: Side) -> Result<C64, SchroedingerError> {
    check_lambda(q, lambda, side)?;
    q.check_tail(side)?;
    let start = wkb_start(q, lambda, side);
    let u0 = linear_u0(q, lambda, side, start).ok_or(SchroedingerError::BlowUp { lambda })?;
    Ok(finish(u0, side))
}

/// −m₊(−z²) for Re z > 0, m₋(−z²) for Re z < 0.
pub fn assemble_m(q: &PotentialGrid, z: C64) -> Result<C64, SchroedingerError> {
    let lambda = -z * z;
    if z.re > 0.0 {
        Ok(-riccati_weyl(q, lambda, Side::Plus)?)
    } else if z.re < 0.0 {
        riccati_weyl(q, lambda, Side::Minus)
    } else {
        Err(SchroedingerError::ImaginaryAxis)
    }
}

/// [`assemble_m`] over a panel of points, in parallel.
pub fn assemble_m_panel(q: &PotentialGrid, zs: &[C64]) -> Result<Vec<C64>, SchroedingerError> {
    zs.par_iter().map(|&z| assemble_m(q, z)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ReflectionlessReport {
    pub xi_lo: f64,
    pub xi_hi: f64,
    pub eps: f64,
    /// max_ξ |m₊(ξ + iε) + conj m₋(ξ + iε)|
    pub max_deviation: f64,
    pub worst_xi: f64,
    /// Same maximum at 2ε; about 2·max_deviation when the defect is O(ε).
    pub deviation_2eps: f64,
    pub passed: bool,
}

impl ReflectionlessReport {
    pub fn eps_ratio(&self) -> f64 {
        self.deviation_2eps / self.max_deviation
    }
}

const XI_SAMPLES: usize = 17;

fn max_deviation(q: &PotentialGrid, xis: &[f64], eps: f64) -> Result<(f64, f64), SchroedingerError> {
    let devs: Vec<f64> = xis
        .par_iter()
        .map(|&xi| {
            let lambda = C64::new(xi, eps);
            let mp = riccati_weyl(q, lambda, Side::Plus)?;
            let mm = riccati_weyl(q, lambda, Side::Minus)?;
            Ok((mp + mm.conj()).norm())
        })
        .collect::<Result<_, SchroedingerError>>()?;
    let (k, d) = devs.iter().copied().enumerate().fold((0, 0.0), |a, (k, d)| if d > a.1 { (k, d) } else { a });
    Ok((d, xis[k]))
}

/// Checks m₊(ξ + i0) = −conj m₋(ξ + i0) on a ξ-grid through ξ + iε.
/// Passes when the deviation is at most 10ε.
pub fn reflectionless_check(
    q: &PotentialGrid,
    window: (f64, f64),
    eps: f64,
) -> Result<ReflectionlessReport, SchroedingerError> {
    let (lo, hi) = window;
    let xis: Vec<f64> = (0..XI_SAMPLES).map(|k| lo + (hi - lo) * k as f64 / (XI_SAMPLES - 1) as f64).collect();
    let (dev, worst) = max_deviation(q, &xis, eps)?;
    let (dev2, _) = max_deviation(q, &xis, 2.0 * eps)?;
    Ok(ReflectionlessReport {
        xi_lo: lo,
        xi_hi: hi,
        eps,
        max_deviation: dev,
        worst_xi: worst,
        deviation_2eps: dev2,
        passed: dev <= 10.0 * eps,
    })
}

fn dirichlet_min(q: &[f64], dx: f64) -> f64 {
    let interior = &q[1..q.len() - 1];
    let inv = 1.0 / (dx * dx);
    let diag: Vec<f64> = interior.iter().map(|v| 2.0 * inv + v).collect();
    let off = vec![-inv; interior.len().saturating_sub(1)];
    tridiag_min_eigen(&diag, &off)
}

/// Lowest Dirichlet eigenvalue of −∂²ₓ + q on the grid.
pub fn spectral_floor(q: &PotentialGrid) -> f64 {
    dirichlet_min(&q.q_values, q.dx)
}

/// As [`spectral_floor`], extrapolated from Δx and 2Δx (needs an even number of intervals).
pub fn spectral_floor_richardson(q: &PotentialGrid) -> f64 {
    let fine = spectral_floor(q);
    if (q.q_values.len() - 1) % 2 != 0 {
        return fine;
    }
    let coarse: Vec<f64> = q.q_values.iter().step_by(2).copied().collect();
    let c = dirichlet_min(&coarse, 2.0 * q.dx);
    (4.0 * fine - c) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero(l: f64) -> PotentialGrid {
        PotentialGrid::from_fn(l, 0.01, |_| 0.0).unwrap()
    }

    fn soliton(dx: f64) -> PotentialGrid {
        PotentialGrid::from_fn(14.0, dx, |x| -2.0 / x.cosh().powi(2)).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn free_weyl_values() {
        let q = zero(6.0);
        let lam = c(-4.0, 0.0);
        assert!((riccati_weyl(&q, lam, Side::Plus).unwrap() - c(-2.0, 0.0)).norm() < 1e-13);
        assert!((riccati_weyl(&q, lam, Side::Minus).unwrap() - c(-2.0, 0.0)).norm() < 1e-13);
        let lam = c(1.0, 1.0);
        let mp = riccati_weyl(&q, lam, Side::Plus).unwrap();
        assert!((mp + sqrt_re(-lam)).norm() < 1e-12);
        assert!(mp.im > 0.0);
    }

    #[test]
    fn soliton_jost_closed_form() {
        // f₊ = e^{−kx}(k + tanh x) so m₊(−k²) = −k + 1/k
        let q = soliton(0.01);
        for k in [2.0, 1.5, 3.0] {
            let want = -k + 1.0 / k;
            let mp = riccati_weyl(&q, c(-k * k, 0.0), Side::Plus).unwrap();
            let mm = riccati_weyl(&q, c(-k * k, 0.0), Side::Minus).unwrap();
            assert!((mp.re - want).abs() < 1e-6, "k={k} {mp}");
            assert!((mm.re - want).abs() < 1e-6, "k={k} {mm}");
        }
    }

    #[test]
    fn assemble_free_and_soliton() {
        let q = zero(6.0);
        for z in [c(2.5, 0.0), c(3.0, 2.0), c(-1.0, 0.5)] {
            assert!((assemble_m(&q, z).unwrap() - z).norm() < 1e-10, "{z}");
        }
        let s = soliton(0.01);
        for z in [c(2.5, 0.0), c(4.0, 0.0), c(3.0, 2.0), c(-3.0, 2.0)] {
            let want = z - 1.0 / z;
            assert!((assemble_m(&s, z).unwrap() - want).norm() < 1e-7 * want.norm(), "{z}");
        }
        assert_eq!(assemble_m(&s, c(0.0, 2.0)), Err(SchroedingerError::ImaginaryAxis));
    }

    #[test]
    fn no_jump_across_imaginary_axis() {
        let s = soliton(0.01);
        for y in [1.3, 2.0, 3.0] {
            let d = 1e-6;
            let jump = (assemble_m(&s, c(d, y)).unwrap() - assemble_m(&s, c(-d, y)).unwrap()).norm();
            assert!(jump <= 1e-4, "y={y} jump={jump}");
        }
    }

    #[test]
    fn herglotz_and_conjugation() {
        let s = soliton(0.01);
        for lam in [c(-1.5, 0.3), c(2.0, 1.0), c(0.5, 4.0), c(-6.0, 0.01)] {
            for side in [Side::Plus, Side::Minus] {
                let m = riccati_weyl(&s, lam, side).unwrap();
                let mc = riccati_weyl(&s, lam.conj(), side).unwrap();
                assert!(m.im * lam.im > 0.0, "{lam} {side}");
                assert!((mc - m.conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn riccati_agrees_with_linear() {
        let s = soliton(0.01);
        for lam in [c(-4.0, 0.0), c(2.0, 0.5), c(-0.5, 1.0), c(5.0, 0.1)] {
            for side in [Side::Plus, Side::Minus] {
                let a = riccati_weyl(&s, lam, side).unwrap();
                let b = linear_weyl(&s, lam, side).unwrap();
                assert!((a - b).norm() < 1e-8 * (1.0 + a.norm()), "{lam}");
            }
        }
    }

    #[test]
    fn pole_crossing_falls_back_to_linear() {
        // λ = −0.5 lies between the bound state −1 and the continuum; f₊ has a zero
        // for the shifted soliton whose well sits to the right of the origin.
        let q = PotentialGrid::from_fn(16.0, 0.01, |x| -6.0 / (x - 3.0).cosh().powi(2)).unwrap();
        let lam = c(-0.5, 0.0);
        let m = riccati_weyl(&q, lam, Side::Plus).unwrap();
        let l = linear_weyl(&q, lam, Side::Plus).unwrap();
        assert!((m - l).norm() < 1e-8 * (1.0 + l.norm()));
    }

    #[test]
    fn tail_and_lambda_guards() {
        let q = PotentialGrid::from_fn(4.0, 0.01, |x| -2.0 / x.cosh().powi(2)).unwrap();
        assert!(matches!(riccati_weyl(&q, c(-4.0, 0.0), Side::Plus), Err(SchroedingerError::TailNotFlat { .. })));
        let z = zero(3.0);
        assert!(matches!(riccati_weyl(&z, c(1.0, 0.0), Side::Plus), Err(SchroedingerError::NotResolvent { .. })));
        assert!(PotentialGrid::new(vec![0.1, 0.2, 0.3, 0.4, 0.5], vec![0.0; 5]).is_err());
    }

    #[test]
    fn constant_tail_is_accepted() {
        // q → 1: m₊(λ) = −√(1 − λ)
        let q = PotentialGrid::from_fn(6.0, 0.01, |_| 1.0).unwrap();
        let lam = c(-3.0, 0.0);
        assert!((riccati_weyl(&q, lam, Side::Plus).unwrap() + c(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn reflectionless_reports() {
        let z = zero(8.0);
        let r = reflectionless_check(&z, (1.5, 3.0), 1e-6).unwrap();
        // exact at finite ε: m₊ + conj m₋ = −2 Re √(−ξ − iε) ≈ ε/√ξ
        assert!((r.max_deviation - 1e-6 / 1.5f64.sqrt()).abs() < 1e-12, "{}", r.max_deviation);
        assert!(r.passed);
        let s = soliton(0.01);
        let r = reflectionless_check(&s, (1.5, 3.0), 1e-6).unwrap();
        assert!(r.passed, "{}", r.max_deviation);
        let bump = PotentialGrid::from_fn(14.0, 0.01, |x| -2.0 / x.cosh().powi(2) + 0.1 * (-x * x).exp()).unwrap();
        let r = reflectionless_check(&bump, (1.5, 3.0), 1e-6).unwrap();
        assert!(r.max_deviation >= 1e-2, "{}", r.max_deviation);
        assert!(!r.passed);
        assert!((r.eps_ratio() - 1.0).abs() < 0.01);
    }

    #[test]
    fn spectral_floor_examples() {
        let z = PotentialGrid::from_fn(10.0, 0.01, |_| 0.0).unwrap();
        let f = spectral_floor(&z);
        let exact = std::f64::consts::PI.powi(2) / 400.0;
        assert!(f > 0.0 && (f - exact).abs() < 1e-5, "{f}");
        let s = soliton(0.02);
        assert!((spectral_floor_richardson(&s) + 1.0).abs() < 1e-6, "{}", spectral_floor_richardson(&s));
        assert!((spectral_floor(&s) + 1.0).abs() < 1e-3);
    }

    #[test]
    fn csv_round_trip() {
        let s = PotentialGrid::from_fn(2.0, 0.25, |x| -2.0 / x.cosh().powi(2)).unwrap();
        let back = PotentialGrid::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back, s);
    }
}
