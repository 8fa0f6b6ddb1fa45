//! Elements of Γ: products of the atoms q_ζ, p_ζ, r_ζ with an entire factor e^h.

use std::ops::Mul;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{aberth_roots, poly_eval, LinalgError};
use crate::C64;

/// Largest allowed |Re h(z)| before evaluation refuses.
pub const OVERFLOW_GUARD: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GammaError {
    #[error("evaluation point {z} hits the pole of q_{zeta}")]
    PoleHit { z: C64, zeta: C64 },
    #[error("evaluation point {z} hits the zero of p_{zeta}")]
    ZeroHit { z: C64, zeta: C64 },
    #[error("|Re h({z})| = {value} exceeds the overflow guard")]
    OverflowGuard { z: C64, value: f64 },
    #[error("element has atoms; only pure exponentials are accepted here")]
    AtomsPresent,
    #[error("exponent polynomial is empty")]
    EmptyExponent,
    #[error("root of modulus {modulus} does not exceed s = {s}; increase n")]
    RootsTooClose { modulus: f64, s: f64 },
    #[error(transparent)]
    NoConvergence(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Atom {
    /// q_ζ(z) = (1 − z/ζ)⁻¹
    QPole(C64),
    /// p_ζ(z) = 1 + z/ζ
    PZero(C64),
    /// r_ζ(z) = (1 − z²/ζ²)⁻¹
    REven(C64),
}

impl Atom {
    pub fn point(&self) -> C64 {
        match *self {
            Atom::QPole(z) | Atom::PZero(z) | Atom::REven(z) => z,
        }
    }

    fn eval(&self, z: C64) -> Result<C64, GammaError> {
        let one = C64::new(1.0, 0.0);
        match *self {
            Atom::QPole(zeta) => {
                let d = one - z / zeta;
                if d.norm() < 1e-14 {
                    return Err(GammaError::PoleHit { z, zeta });
                }
                Ok(one / d)
            }
            Atom::PZero(zeta) => Ok(one + z / zeta),
            Atom::REven(zeta) => {
                let d = one - z * z / (zeta * zeta);
                if d.norm() < 1e-14 {
                    return Err(GammaError::PoleHit { z, zeta });
                }
                Ok(one / d)
            }
        }
    }

    fn eval_inv(&self, z: C64) -> Result<C64, GammaError> {
        let one = C64::new(1.0, 0.0);
        match *self {
            Atom::QPole(zeta) => Ok(one - z / zeta),
            Atom::PZero(zeta) => {
                let d = one + z / zeta;
                if d.norm() < 1e-14 {
                    return Err(GammaError::ZeroHit { z, zeta });
                }
                Ok(one / d)
            }
            Atom::REven(zeta) => Ok(one - z * z / (zeta * zeta)),
        }
    }

    /// Taylor coefficients h_1..h_n of log(atom).
    fn log_coeffs(&self, n: usize) -> Vec<C64> {
        (1..=n)
            .map(|k| {
                let kf = k as f64;
                match *self {
                    Atom::QPole(zeta) => zeta.powi(-(k as i32)) / kf,
                    Atom::PZero(zeta) => {
                        let s = if k % 2 == 1 { 1.0 } else { -1.0 };
                        zeta.powi(-(k as i32)) * (s / kf)
                    }
                    Atom::REven(zeta) => {
                        if k % 2 == 0 {
                            zeta.powi(-(k as i32)) * (2.0 / kf)
                        } else {
                            C64::new(0.0, 0.0)
                        }
                    }
                }
            })
            .collect()
    }
}

/// `g = Π atoms · exp(Σ h_k z^k)`, k ≥ 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GammaElement {
    pub atoms: Vec<Atom>,
    /// h_1, h_2, … (h_0 = 0 is implicit).
    pub exp_part: Vec<C64>,
}

/// Even and odd parts of g and ĝ = 1/g at λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParityParts {
    pub ge: C64,
    pub go: C64,
    pub ghe: C64,
    pub gho: C64,
}

impl GammaElement {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_atoms(atoms: Vec<Atom>) -> Self {
        GammaElement { atoms, exp_part: Vec::new() }
    }

    pub fn q_product(zetas: &[C64]) -> Self {
        Self::from_atoms(zetas.iter().map(|&z| Atom::QPole(z)).collect())
    }

    pub fn from_exp(h: Vec<C64>) -> Self {
        GammaElement { atoms: Vec::new(), exp_part: h }
    }

    pub fn has_exp(&self) -> bool {
        self.exp_part.iter().any(|h| h.norm() != 0.0)
    }

    /// h(z) = Σ_{k≥1} h_k z^k.
    pub fn h(&self, z: C64) -> C64 {
        self.exp_part.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| (acc + c) * z)
    }

    fn h_prime(&self, z: C64) -> C64 {
        self.exp_part
            .iter()
            .enumerate()
            .rev()
            .fold(C64::new(0.0, 0.0), |acc, (k, &c)| acc * z + c * (k as f64 + 1.0))
    }

    fn h_second(&self, z: C64) -> C64 {
        self.exp_part
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(C64::new(0.0, 0.0), |acc, (k, &c)| acc * z + c * ((k + 1) * k) as f64)
    }

    fn exp_h(&self, z: C64, sign: f64) -> Result<C64, GammaError> {
        let hz = self.h(z) * sign;
        if hz.re.abs() > OVERFLOW_GUARD {
            return Err(GammaError::OverflowGuard { z, value: hz.re.abs() });
        }
        Ok(hz.exp())
    }

    pub fn eval(&self, z: C64) -> Result<C64, GammaError> {
        let mut v = self.exp_h(z, 1.0)?;
        for a in &self.atoms {
            v *= a.eval(z)?;
        }
        Ok(v)
    }

    /// ĝ(z) = 1/g(z), computed factor by factor.
    pub fn eval_inv(&self, z: C64) -> Result<C64, GammaError> {
        let mut v = self.exp_h(z, -1.0)?;
        for a in &self.atoms {
            v *= a.eval_inv(z)?;
        }
        Ok(v)
    }

    /// g″(z) for a pure exponential: (h″ + h′²)·g.
    pub fn second_derivative(&self, z: C64) -> Result<C64, GammaError> {
        if !self.atoms.is_empty() {
            return Err(GammaError::AtomsPresent);
        }
        let hp = self.h_prime(z);
        Ok((self.h_second(z) + hp * hp) * self.eval(z)?)
    }

    pub fn parity_parts(&self, lambda: C64) -> Result<ParityParts, GammaError> {
        let s = lambda.sqrt();
        let (a, b) = (self.eval(s)?, self.eval(-s)?);
        let (ai, bi) = (self.eval_inv(s)?, self.eval_inv(-s)?);
        let two_s = s * 2.0;
        Ok(ParityParts {
            ge: (a + b) * 0.5,
            go: if s.norm() == 0.0 { C64::new(0.0, 0.0) } else { (a - b) / two_s },
            ghe: (ai + bi) * 0.5,
            gho: if s.norm() == 0.0 { C64::new(0.0, 0.0) } else { (ai - bi) / two_s },
        })
    }

    /// conj(g) = g: real exponent and atom multiset closed under conjugation.
    pub fn is_real(&self) -> bool {
        if self.exp_part.iter().any(|h| h.im != 0.0) {
            return false;
        }
        let mut used = vec![false; self.atoms.len()];
        for (i, a) in self.atoms.iter().enumerate() {
            if used[i] {
                continue;
            }
            let target = match *a {
                Atom::QPole(z) => Atom::QPole(z.conj()),
                Atom::PZero(z) => Atom::PZero(z.conj()),
                Atom::REven(z) => Atom::REven(z.conj()),
            };
            if a.point().im == 0.0 {
                used[i] = true;
                continue;
            }
            let partner = (0..self.atoms.len()).find(|&j| {
                j != i
                    && !used[j]
                    && std::mem::discriminant(&self.atoms[j]) == std::mem::discriminant(&target)
                    && (self.atoms[j].point() - target.point()).norm() <= 1e-14 * target.point().norm()
            });
            match partner {
                Some(j) => {
                    used[i] = true;
                    used[j] = true;
                }
                None => return false,
            }
        }
        true
    }

    /// Taylor coefficients of log g up to order n (atoms expanded as power series).
    pub fn log_coeffs(&self, n: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (k, h) in self.exp_part.iter().enumerate().take(n) {
            out[k] += h;
        }
        for a in &self.atoms {
            for (k, v) in a.log_coeffs(n).into_iter().enumerate() {
                out[k] += v;
            }
        }
        out
    }

    /// Minimum modulus of the atom points (∞ if none).
    pub fn min_atom_modulus(&self) -> f64 {
        self.atoms.iter().map(|a| a.point().norm()).fold(f64::INFINITY, f64::min)
    }

    /// Atoms rewritten over q and p only, with r_ζ = q_ζ q_{−ζ}.
    pub fn expanded_atoms(&self) -> (Vec<C64>, Vec<C64>) {
        let mut q = Vec::new();
        let mut p = Vec::new();
        for a in &self.atoms {
            match *a {
                Atom::QPole(z) => q.push(z),
                Atom::PZero(z) => p.push(z),
                Atom::REven(z) => {
                    q.push(z);
                    q.push(-z);
                }
            }
        }
        (q, p)
    }
}

impl Mul for &GammaElement {
    type Output = GammaElement;
    fn mul(self, rhs: &GammaElement) -> GammaElement {
        let n = self.exp_part.len().max(rhs.exp_part.len());
        let exp_part = (0..n)
            .map(|k| {
                self.exp_part.get(k).copied().unwrap_or_default() + rhs.exp_part.get(k).copied().unwrap_or_default()
            })
            .collect();
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&rhs.atoms);
        GammaElement { atoms, exp_part }
    }
}

impl Mul for GammaElement {
    type Output = GammaElement;
    fn mul(self, rhs: GammaElement) -> GammaElement {
        &self * &rhs
    }
}

/// e_x(z) = e^{xz}.
pub fn exp_line(x: f64) -> GammaElement {
    GammaElement::from_exp(vec![C64::new(x, 0.0)])
}

/// e^{xz − 4tz³}.
pub fn exp_kdv(x: f64, t: f64) -> GammaElement {
    GammaElement::from_exp(vec![C64::new(x, 0.0), C64::new(0.0, 0.0), C64::new(-4.0 * t, 0.0)])
}

/// Splits e^h into e^{h_e(z²)} (even powers) and e^{z h_o(z²)} (odd powers).
pub fn split_parity(g: &GammaElement) -> Result<(GammaElement, GammaElement), GammaError> {
    if !g.atoms.is_empty() {
        return Err(GammaError::AtomsPresent);
    }
    let zero = C64::new(0.0, 0.0);
    let even = g.exp_part.iter().enumerate().map(|(k, &h)| if (k + 1) % 2 == 0 { h } else { zero }).collect();
    let odd = g.exp_part.iter().enumerate().map(|(k, &h)| if (k + 1) % 2 == 1 { h } else { zero }).collect();
    Ok((GammaElement::from_exp(even), GammaElement::from_exp(odd)))
}

/// Result of [`factorize`].
#[derive(Debug, Clone)]
pub struct Factorization {
    pub element: GammaElement,
    pub roots: Vec<C64>,
    /// sup over |z| = s of |g_n − g|.
    pub sup_error: f64,
}

/// g_n = (1 − h/n)^{−n} written as q-atoms, each root repeated n times.
pub fn factorize(g: &GammaElement, n: usize, s: f64) -> Result<Factorization, GammaError> {
    if !g.atoms.is_empty() {
        return Err(GammaError::AtomsPresent);
    }
    if !g.has_exp() {
        return Err(GammaError::EmptyExponent);
    }
    let nf = n as f64;
    let mut coeffs = vec![C64::new(1.0, 0.0)];
    coeffs.extend(g.exp_part.iter().map(|h| -h / nf));
    while coeffs.len() > 1 && coeffs.last().map_or(false, |c| c.norm() == 0.0) {
        coeffs.pop();
    }
    let mut roots = aberth_roots(&coeffs)?;
    // real polynomials: snap conjugate pairs so the element is exactly real
    if g.exp_part.iter().all(|h| h.im == 0.0) {
        for r in roots.iter_mut() {
            if r.im.abs() <= 1e-13 * r.norm() {
                r.im = 0.0;
            }
        }
        let mut fixed = roots.clone();
        for i in 0..fixed.len() {
            if fixed[i].im > 0.0 {
                if let Some(j) = (0..fixed.len()).find(|&j| j != i && (fixed[j] - fixed[i].conj()).norm() < 1e-8 * fixed[i].norm()) {
                    fixed[j] = fixed[i].conj();
                }
            }
        }
        roots = fixed;
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    if let Some(min) = roots.iter().map(|r| r.norm()).reduce(f64::min) {
        if min <= s {
            return Err(GammaError::RootsTooClose { modulus: min, s });
        }
    }
    let mut atoms = Vec::with_capacity(roots.len() * n);
    for &r in &roots {
        atoms.extend(std::iter::repeat(Atom::QPole(r)).take(n));
    }
    let element = GammaElement::from_atoms(atoms);
    let mut sup_error: f64 = 0.0;
    for k in 0..256 {
        let z = C64::from_polar(s, std::f64::consts::TAU * k as f64 / 256.0);
        // evaluate (1 − h/n)^{−n} directly; the atom product is the same function
        let base = poly_eval(&coeffs, z);
        let gn = base.powi(-(n as i32));
        sup_error = sup_error.max((gn - g.eval(z)?).norm());
    }
    Ok(Factorization { element, roots, sup_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn atom_values() {
        let q = GammaElement::from_atoms(vec![Atom::QPole(z(2.0, 0.0))]);
        assert!((q.eval(z(1.0, 0.0)).unwrap() - z(2.0, 0.0)).norm() < 1e-15);
        let r = GammaElement::from_atoms(vec![Atom::REven(z(2.0, 0.0))]);
        let qq = GammaElement::q_product(&[z(2.0, 0.0), z(-2.0, 0.0)]);
        assert!((r.eval(z(1.0, 0.0)).unwrap() - z(4.0 / 3.0, 0.0)).norm() < 1e-15);
        assert!((qq.eval(z(1.0, 0.0)).unwrap() - z(4.0 / 3.0, 0.0)).norm() < 1e-15);
        let e = exp_line(0.5);
        assert!((e.eval(z(2.0, 0.0)).unwrap() - z(std::f64::consts::E, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn p_is_inverse_of_q_minus() {
        let zeta = z(1.5, -2.0);
        let p = GammaElement::from_atoms(vec![Atom::PZero(zeta)]);
        let q = GammaElement::from_atoms(vec![Atom::QPole(-zeta)]);
        for w in [z(0.3, 0.2), z(-1.0, 1.0)] {
            assert!((p.eval(w).unwrap() * q.eval(w).unwrap() - z(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn pole_and_overflow_errors() {
        let q = GammaElement::q_product(&[z(2.0, 0.0)]);
        assert!(matches!(q.eval(z(2.0, 0.0)), Err(GammaError::PoleHit { .. })));
        assert!(matches!(exp_line(800.0).eval(z(1.0, 0.0)), Err(GammaError::OverflowGuard { .. })));
    }

    #[test]
    fn parity_examples() {
        let id = GammaElement::identity();
        let pp = id.parity_parts(z(2.0, 1.0)).unwrap();
        assert_eq!((pp.ge, pp.go, pp.ghe, pp.gho), (z(1.0, 0.0), z(0.0, 0.0), z(1.0, 0.0), z(0.0, 0.0)));
        let q = GammaElement::q_product(&[z(2.0, 0.0)]);
        let pp = q.parity_parts(z(1.0, 0.0)).unwrap();
        assert!((pp.ge - z(4.0 / 3.0, 0.0)).norm() < 1e-15);
        assert!((pp.go - z(2.0 / 3.0, 0.0)).norm() < 1e-15);
        let x = 0.7;
        let lam = z(2.0, 0.5);
        let pp = exp_line(x).parity_parts(lam).unwrap();
        let s = lam.sqrt();
        assert!((pp.ge - (s * x).cosh()).norm() < 1e-14);
        assert!((pp.go - (s * x).sinh() / s).norm() < 1e-14);
    }

    #[test]
    fn exp_group_law_and_kdv() {
        let ab = &exp_line(0.3) * &exp_line(1.1);
        assert!((ab.exp_part[0] - z(1.4, 0.0)).norm() < 1e-15);
        assert_eq!(exp_kdv(0.4, 0.0).eval(z(0.9, 0.1)).unwrap(), exp_line(0.4).eval(z(0.9, 0.1)).unwrap());
        let w = z(0.5, 0.3);
        assert!((exp_kdv(0.0, 0.2).eval(w).unwrap() - (w * w * w * -0.8).exp()).norm() < 1e-15);
        assert!(exp_kdv(0.3, 0.2).is_real());
        assert!(exp_line(0.0).eval(w).unwrap() == z(1.0, 0.0));
    }

    #[test]
    fn split_parity_examples() {
        let g = GammaElement::from_exp(vec![z(1.0, 0.0), z(1.0, 0.0)]);
        let (g1, g2) = split_parity(&g).unwrap();
        let w = z(0.7, 0.0);
        assert!((g1.eval(w).unwrap() - (w * w).exp()).norm() < 1e-15);
        assert!((g2.eval(w).unwrap() - w.exp()).norm() < 1e-15);
        assert!((g1.eval(w).unwrap() * g2.eval(w).unwrap() - g.eval(w).unwrap()).norm() < 1e-14);
        assert!(split_parity(&GammaElement::q_product(&[z(3.0, 0.0)])).is_err());
    }

    #[test]
    fn factorize_single_exponential() {
        let g = exp_line(1.0);
        let f = factorize(&g, 50, 0.5).unwrap();
        assert_eq!(f.roots.len(), 1);
        assert!((f.roots[0] - z(50.0, 0.0)).norm() < 1e-12);
        assert_eq!(f.element.atoms.len(), 50);
        let w = z(0.4, 0.0);
        assert!((f.element.eval(w).unwrap() - (1.0 - 0.4 / 50.0f64).powi(-50)).norm() < 1e-12);
    }

    #[test]
    fn factorize_kdv_type_converges() {
        let g = GammaElement::from_exp(vec![z(1.0, 0.0), z(0.0, 0.0), z(-0.4, 0.0)]);
        let mut last = f64::INFINITY;
        for n in [64, 128, 256] {
            let f = factorize(&g, n, 2.0).unwrap();
            assert_eq!(f.roots.len(), 3);
            assert!(f.roots.iter().all(|r| r.norm() > 2.0));
            assert!(f.element.is_real());
            assert!(f.sup_error < last);
            last = f.sup_error;
        }
    }

    #[test]
    fn log_coeffs_of_q() {
        let zeta = z(3.0, 1.0);
        let g = GammaElement::q_product(&[zeta]);
        let h = g.log_coeffs(30);
        let w = z(0.4, -0.2);
        let s: C64 = h.iter().enumerate().map(|(k, c)| c * w.powi(k as i32 + 1)).sum();
        assert!((s.exp() - g.eval(w).unwrap()).norm() < 1e-14);
    }
}
