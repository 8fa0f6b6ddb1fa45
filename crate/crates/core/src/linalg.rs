//! Dense numerical kernels shared by the tau, grassmann and schroedinger modules.

use nalgebra::{DMatrix, DVector};
use rustfft::FftPlanner;
use thiserror::Error;

use crate::C64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular (pivot {index} vanished)")]
    Singular { index: usize },
    #[error("root finder did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("polynomial has degree zero")]
    ConstantPolynomial,
    #[error("least-squares system is rank deficient")]
    RankDeficient,
}

/// Determinant kept as `exp(log_abs) * phase` so large matrices never overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    pub log_abs: f64,
    pub phase: C64,
}

impl LogDet {
    pub fn value(&self) -> C64 {
        self.phase * self.log_abs.exp()
    }
}

/// LU with partial pivoting; returns the log-scale determinant and the factorization.
pub fn lu_log_det(a: DMatrix<C64>) -> Result<(LogDet, nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>), LinalgError> {
    let n = a.nrows();
    let lu = a.lu();
    let u = lu.u();
    let mut log_abs = 0.0;
    let mut phase = C64::new(lu.p().determinant::<f64>(), 0.0);
    for i in 0..n {
        let d = u[(i, i)];
        let r = d.norm();
        if r == 0.0 || !r.is_finite() {
            return Err(LinalgError::Singular { index: i });
        }
        log_abs += r.ln();
        phase *= d / r;
    }
    // renormalize accumulated rounding in the unit phase
    phase /= phase.norm();
    Ok((LogDet { log_abs, phase }, lu))
}

fn norm1(a: &DMatrix<C64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Hager/Higham 1-norm condition estimate using an existing LU factorization.
pub fn cond1_estimate(a: &DMatrix<C64>, lu: &nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 1.0;
    }
    let l_h = lu.l().adjoint();
    let u_h = lu.u().adjoint();
    let p = lu.p();
    let solve_adj = |b: &DVector<C64>| -> Option<DVector<C64>> {
        // A = P^-1 L U  =>  A^H x = b  <=>  U^H L^H (P x) = b
        let y = u_h.solve_lower_triangular(b)?;
        let mut z = l_h.solve_upper_triangular(&y)?;
        p.inv_permute_rows(&mut z);
        Some(z)
    };
    let mut x = DVector::from_element(n, C64::new(1.0 / n as f64, 0.0));
    let mut est = 0.0;
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let y = match lu.solve(&x) {
            Some(y) => y,
            None => return f64::INFINITY,
        };
        est = y.iter().map(|v| v.norm()).sum::<f64>();
        let xi = y.map(|v| if v.norm() > 0.0 { v / v.norm() } else { C64::new(1.0, 0.0) });
        let z = match solve_adj(&xi) {
            Some(z) => z,
            None => return f64::INFINITY,
        };
        let (j, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, -1.0), |acc, it| if it.1 > acc.1 { it } else { acc });
        let ztx = z.dotc(&x).re;
        if zmax <= ztx || j == last_j {
            break;
        }
        last_j = j;
        x = DVector::from_element(n, C64::new(0.0, 0.0));
        x[j] = C64::new(1.0, 0.0);
    }
    norm1(a) * est
}

/// Smallest eigenvalue of a real symmetric tridiagonal matrix by Sturm bisection.
pub fn tridiag_min_eigen(diag: &[f64], off: &[f64]) -> f64 {
    let n = diag.len();
    assert!(off.len() + 1 == n || n == 0);
    if n == 0 {
        return f64::NAN;
    }
    // Gershgorin interval
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let mut rad = 0.0;
        if i > 0 {
            rad += off[i - 1].abs();
        }
        if i + 1 < n {
            rad += off[i].abs();
        }
        lo = lo.min(diag[i] - rad);
        hi = hi.max(diag[i] + rad);
    }
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut d = diag[0] - x;
        if d < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let prev = if d == 0.0 { f64::EPSILON * (off[i - 1].abs() + 1.0) } else { d };
            d = diag[i] - x - off[i - 1] * off[i - 1] / prev;
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn horner(coeffs: &[C64], z: C64) -> C64 {
    coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Evaluate a polynomial given by ascending coefficients.
pub fn poly_eval(coeffs: &[C64], z: C64) -> C64 {
    horner(coeffs, z)
}

/// Aberth-Ehrlich simultaneous iteration; `coeffs` ascending, leading term nonzero.
pub fn aberth_roots(coeffs: &[C64]) -> Result<Vec<C64>, LinalgError> {
    let mut c: Vec<C64> = coeffs.to_vec();
    while c.len() > 1 && c.last().map_or(false, |v| v.norm() == 0.0) {
        c.pop();
    }
    let deg = c.len().saturating_sub(1);
    if deg == 0 {
        return Err(LinalgError::ConstantPolynomial);
    }
    let lead = c[deg];
    let monic: Vec<C64> = c.iter().map(|v| v / lead).collect();
    let deriv: Vec<C64> = (1..=deg).map(|k| monic[k] * k as f64).collect();
    // Cauchy-type bound for the starting circle
    let bound = 1.0 + monic[..deg].iter().map(|v| v.norm()).fold(0.0, f64::max);
    let radius = bound.max(1.0);
    let mut z: Vec<C64> = (0..deg)
        .map(|k| C64::from_polar(radius, 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / deg as f64))
        .collect();
    let max_iter = 500;
    for _ in 0..max_iter {
        let mut max_step: f64 = 0.0;
        for i in 0..deg {
            let p = horner(&monic, z[i]);
            let dp = horner(&deriv, z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let mut s = C64::new(0.0, 0.0);
            for j in 0..deg {
                if j != i {
                    s += C64::new(1.0, 0.0) / (z[i] - z[j]);
                }
            }
            let step = ratio / (C64::new(1.0, 0.0) - ratio * s);
            z[i] -= step;
            max_step = max_step.max(step.norm() / (1.0 + z[i].norm()));
        }
        if max_step < 1e-15 {
            return Ok(z);
        }
    }
    // accept if residuals are tiny even without step convergence
    let ok = z.iter().all(|&zi| horner(&monic, zi).norm() <= 1e-10 * (1.0 + zi.norm()).powi(deg as i32));
    if ok {
        Ok(z)
    } else {
        Err(LinalgError::NoConvergence { iterations: max_iter })
    }
}

/// Least-squares fit of `vals ≈ P(w)/Q(w)` with `deg P = n + 1`, `deg Q = n`, both monic.
/// Returns ascending coefficients `(p, q)`.
pub fn fit_monic_rational(ws: &[C64], vals: &[C64], n: usize) -> Result<(Vec<C64>, Vec<C64>), LinalgError> {
    let rows = ws.len();
    let cols = 2 * n + 1;
    if rows < cols {
        return Err(LinalgError::RankDeficient);
    }
    let mut a = DMatrix::<C64>::zeros(rows, cols);
    let mut b = DVector::<C64>::zeros(rows);
    for (i, (&w, &v)) in ws.iter().zip(vals).enumerate() {
        let mut wk = C64::new(1.0, 0.0);
        for k in 0..=n {
            a[(i, k)] = wk;
            if k < n {
                a[(i, n + 1 + k)] = -v * wk;
            }
            if k < n {
                wk *= w;
            }
        }
        let wn = w.powu(n as u32);
        b[i] = v * wn - wn * w;
    }
    // column scaling keeps the Vandermonde blocks comparable
    let scales: Vec<f64> = (0..cols)
        .map(|j| a.column(j).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt().max(1e-300))
        .collect();
    for j in 0..cols {
        let s = scales[j];
        a.column_mut(j).iter_mut().for_each(|v| *v /= s);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-13 * smax {
        return Err(LinalgError::RankDeficient);
    }
    let sol = svd.solve(&b, 0.0).map_err(|_| LinalgError::RankDeficient)?;
    let mut p: Vec<C64> = (0..=n).map(|k| sol[k] / scales[k]).collect();
    p.push(C64::new(1.0, 0.0));
    let mut q: Vec<C64> = (0..n).map(|k| sol[n + 1 + k] / scales[n + 1 + k]).collect();
    q.push(C64::new(1.0, 0.0));
    Ok((p, q))
}

/// Sum of singular values.
pub fn trace_norm(a: &DMatrix<C64>) -> f64 {
    a.clone().svd(false, false).singular_values.iter().sum()
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<C64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Fourier coefficients `c_k` of samples `f(θ_j)`, `θ_j = 2πj/M`, so `f ≈ Σ c_k e^{ikθ}`.
/// Index `k mod M` holds `c_k`.
pub fn fourier_coeffs(samples: &[C64]) -> Vec<C64> {
    let m = samples.len();
    let mut buf = samples.to_vec();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(m).process(&mut buf);
    let inv = 1.0 / m as f64;
    buf.iter_mut().for_each(|v| *v *= inv);
    buf
}
