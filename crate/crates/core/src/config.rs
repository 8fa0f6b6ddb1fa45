//! TOML run configuration shared by the command-line front end.
//!
//! ```toml
//! seed = 7
//!
//! [m]
//! kind = "sigma"            # "free" | "sigma" | "zero-background"
//! r = 1.0
//! masses = [[0.0, 0.5]]     # (ξ, w) pairs
//!
//! [gamma]
//! atoms = [{ kind = "q", re = 3.0, im = 0.0 }]   # kind: "q" | "p" | "r"
//! exp = [[0.0, 0.0]]        # h₁, h₂, … as (re, im)
//!
//! [numerics]
//! nodes = 128
//! truncation = 256
//! fd_step = 0.01
//! route_tol = 1e-6
//! residual_gate = 1e-3
//!
//! [flow]
//! x = { lo = -4.0, hi = 4.0, step = 0.05 }
//! t = { lo = 0.0, hi = 0.0, step = 0.01 }
//! convention = "kdv"        # "kdv" | "scaled" | "translation"
//!
//! [output]
//! dir = "out"
//! ```
//! Every section and key is optional; omitted values take the defaults of
//! [`RunConfig::default`].

use serde::{Deserialize, Serialize};

use crate::flow::{linspace_step, Convention};
use crate::gamma::{Atom, GammaElement};
use crate::herglotz::{mfun_free, mfun_from_sigma, mfun_from_sigma_unchecked, mfun_zero_background, MFunction};
use crate::tau::TauConfig;
use crate::{Error, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MKind {
    Free,
    #[default]
    Sigma,
    ZeroBackground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MSpec {
    pub kind: MKind,
    pub r: f64,
    pub masses: Vec<[f64; 2]>,
}

impl Default for MSpec {
    fn default() -> Self {
        MSpec { kind: MKind::Sigma, r: 1.0, masses: vec![[0.0, 0.5]] }
    }
}

impl MSpec {
    pub fn build(&self) -> Result<MFunction, Error> {
        let masses: Vec<(f64, f64)> = self.masses.iter().map(|p| (p[0], p[1])).collect();
        Ok(match self.kind {
            MKind::Free => mfun_free(),
            MKind::Sigma => mfun_from_sigma(self.r, &masses)?,
            MKind::ZeroBackground => mfun_zero_background(self.r, &masses)?,
        })
    }

    /// Builds without validation so that a checker can report what is wrong.
    pub fn build_unchecked(&self) -> MFunction {
        let masses: Vec<(f64, f64)> = self.masses.iter().map(|p| (p[0], p[1])).collect();
        match self.kind {
            MKind::Free => mfun_free(),
            _ => mfun_from_sigma_unchecked(self.r, &masses),
        }
    }

    /// Spectral radius used to size contours.
    pub fn radius(&self) -> f64 {
        match self.kind {
            MKind::Free => 1.0,
            _ => self.r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomKind {
    Q,
    P,
    R,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub kind: AtomKind,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaSpec {
    pub atoms: Vec<AtomSpec>,
    pub exp: Vec<[f64; 2]>,
}

impl Default for GammaSpec {
    fn default() -> Self {
        GammaSpec {
            atoms: vec![AtomSpec { kind: AtomKind::Q, re: 3.0, im: 0.0 }, AtomSpec { kind: AtomKind::Q, re: 4.0, im: 0.0 }],
            exp: Vec::new(),
        }
    }
}

impl GammaSpec {
    pub fn build(&self) -> GammaElement {
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let z = C64::new(a.re, a.im);
                match a.kind {
                    AtomKind::Q => Atom::QPole(z),
                    AtomKind::P => Atom::PZero(z),
                    AtomKind::R => Atom::REven(z),
                }
            })
            .collect();
        GammaElement { atoms, exp_part: self.exp.iter().map(|p| C64::new(p[0], p[1])).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Quadrature nodes per contour (M).
    pub nodes: usize,
    /// Hardy-space truncation (N).
    pub truncation: usize,
    pub inner_axes: Option<[f64; 2]>,
    pub outer_axes: Option<[f64; 2]>,
    pub fd_step: f64,
    pub cond_limit: f64,
    pub anchor_spacing: f64,
    pub richardson: bool,
    /// Largest accepted discrepancy between tau routes.
    pub route_tol: f64,
    /// Largest accepted evolution-equation residual for `flow`.
    pub residual_gate: f64,
    /// Samples for sampling-based m-function checks.
    pub sample_budget: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            nodes: 128,
            truncation: 256,
            inner_axes: None,
            outer_axes: None,
            fd_step: 0.01,
            cond_limit: 1e12,
            anchor_spacing: 3.0,
            richardson: false,
            route_tol: 1e-6,
            residual_gate: 1e-3,
            sample_budget: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Range {
    pub fn nodes(&self) -> Result<Vec<f64>, Error> {
        if !(self.step > 0.0 && self.hi >= self.lo && self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::Config(format!("bad range {self:?}")));
        }
        if (self.hi - self.lo) / self.step > 1e6 {
            return Err(Error::Config(format!("range {self:?} has too many nodes")));
        }
        Ok(linspace_step(self.lo, self.hi, self.step))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSpec {
    pub x: Range,
    pub t: Range,
    pub convention: Convention,
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec {
            x: Range { lo: -4.0, hi: 4.0, step: 0.05 },
            t: Range { lo: 0.0, hi: 0.0, step: 0.01 },
            convention: Convention::Kdv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub m: MSpec,
    pub gamma: GammaSpec,
    pub numerics: Numerics,
    pub flow: FlowSpec,
    pub output: OutputSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: crate::battery::DEFAULT_SEED,
            m: MSpec::default(),
            gamma: GammaSpec::default(),
            numerics: Numerics::default(),
            flow: FlowSpec::default(),
            output: OutputSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn tau_config(&self) -> Result<TauConfig, Error> {
        let n = &self.numerics;
        let mut cfg = TauConfig::with_nodes(self.m.radius(), n.nodes);
        if let (Some(i), Some(o)) = (n.inner_axes, n.outer_axes) {
            cfg = cfg.with_axes((i[0], i[1]), (o[0], o[1]), n.nodes);
        } else if n.inner_axes.is_some() || n.outer_axes.is_some() {
            return Err(Error::Config("inner_axes and outer_axes must be given together".into()));
        }
        cfg.fd_step = n.fd_step;
        cfg.cond_limit = n.cond_limit;
        cfg.anchor_spacing = n.anchor_spacing;
        cfg.richardson = n.richardson;
        cfg.validate()?;
        if n.truncation == 0 || n.sample_budget == 0 {
            return Err(Error::Config("truncation and sample_budget must be positive".into()));
        }
        Ok(cfg)
    }
}
