//! Seeded simulation designs with right censoring, plus a censoring injector
//! for fully observed data.
//!
//! Random numbers come from `ChaCha8Rng::seed_from_u64(seed)`. Uniforms are
//! the top 53 bits of a 64-bit draw scaled to `[0, 1)`. Normals use one
//! Box-Muller transform per pair of uniforms (`u1` mapped to `(0, 1]`, cosine
//! branch only); exponentials use the inverse CDF `-ln(1 - u) / rate`. Each row
//! draws its covariates first, then the noise, then the censoring time. Any
//! implementation following these rules reproduces the same datasets.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{CqrfError, Result};

pub const AFT_NOISE_SD: f64 = 0.3;
pub const AFT_CENSORING_RATE: f64 = 0.08;
pub const HETERO_MEAN: f64 = 10.0;
pub const HETERO_CENSORING_SHIFT: f64 = 8.0;
pub const HETERO_CENSORING_RATE: f64 = 0.10;
pub const SINE_OFFSET: f64 = 2.5;
pub const SINE_NOISE_SD: f64 = 0.3;
pub const SINE_CENSORING_RATE: f64 = 0.2;
pub const DEFAULT_RATE_MULTIPLIER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimModel {
    /// `log T = x0 + N(0, 0.3^2)`, `X ~ U[0,2]^p`, `C ~ Exp(0.08)`.
    Aft,
    /// `T ~ N(10, (1 + 1{x0 > 0})^2)`, `X ~ U[-1,1]^p`, `C ~ 8 + Exp(0.1)`.
    Hetero,
    /// `T = 2.5 + sin X + N(0, 0.3^2)`, `X ~ U(0, 2 pi)`, `C ~ 1 + sin X + Exp(0.2)`.
    Sine,
}

impl std::str::FromStr for SimModel {
    type Err = CqrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aft" => Ok(Self::Aft),
            "hetero" => Ok(Self::Hetero),
            "sine" => Ok(Self::Sine),
            other => Err(CqrfError::Parameter(format!(
                "unknown model {other:?}; expected aft, hetero or sine"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub model: SimModel,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(model: SimModel, n: usize, p: usize, seed: u64) -> Self {
        Self { model, n, p, seed }
    }

    fn check(&self, expected: SimModel) -> Result<()> {
        if self.model != expected {
            return Err(CqrfError::Parameter(format!(
                "spec is for {:?}, generator is {:?}",
                self.model, expected
            )));
        }
        if self.n == 0 || self.p == 0 {
            return Err(CqrfError::Parameter("n and p must be positive".into()));
        }
        if self.model == SimModel::Sine && self.p != 1 {
            return Err(CqrfError::Parameter(format!("the sine model has p = 1, got {}", self.p)));
        }
        Ok(())
    }
}

/// The documented sampling primitives on top of ChaCha8.
struct Stream(ChaCha8Rng);

impl Stream {
    fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    fn uniform(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    fn exponential(&mut self, rate: f64) -> f64 {
        -(1.0 - self.uniform()).ln() / rate
    }
}

fn censor(t: f64, c: f64) -> (f64, u8) {
    if t <= c {
        (t, 1)
    } else {
        (c, 0)
    }
}

fn assemble(p: usize, features: Vec<f64>, t: Vec<f64>, c: Vec<f64>) -> Result<Dataset> {
    let (y, delta): (Vec<f64>, Vec<u8>) = t.iter().zip(&c).map(|(&ti, &ci)| censor(ti, ci)).unzip();
    let d = Dataset::new(features, p, y, delta, Some(t))?;
    d.validate()?;
    Ok(d)
}

pub fn gen_aft(spec: SimSpec) -> Result<Dataset> {
    spec.check(SimModel::Aft)?;
    let mut s = Stream::new(spec.seed);
    let mut features = Vec::with_capacity(spec.n * spec.p);
    let (mut t, mut c) = (Vec::with_capacity(spec.n), Vec::with_capacity(spec.n));
    for _ in 0..spec.n {
        let start = features.len();
        for _ in 0..spec.p {
            features.push(s.uniform_in(0.0, 2.0));
        }
        let x0 = features[start];
        t.push((x0 + AFT_NOISE_SD * s.standard_normal()).exp());
        c.push(s.exponential(AFT_CENSORING_RATE));
    }
    assemble(spec.p, features, t, c)
}

pub fn gen_hetero(spec: SimSpec) -> Result<Dataset> {
    spec.check(SimModel::Hetero)?;
    let mut s = Stream::new(spec.seed);
    let mut features = Vec::with_capacity(spec.n * spec.p);
    let (mut t, mut c) = (Vec::with_capacity(spec.n), Vec::with_capacity(spec.n));
    for _ in 0..spec.n {
        let start = features.len();
        for _ in 0..spec.p {
            features.push(s.uniform_in(-1.0, 1.0));
        }
        let sd = hetero_sd(features[start]);
        t.push(HETERO_MEAN + sd * s.standard_normal());
        c.push(HETERO_CENSORING_SHIFT + s.exponential(HETERO_CENSORING_RATE));
    }
    assemble(spec.p, features, t, c)
}

pub fn gen_sine(spec: SimSpec) -> Result<Dataset> {
    spec.check(SimModel::Sine)?;
    let mut s = Stream::new(spec.seed);
    let mut features = Vec::with_capacity(spec.n);
    let (mut t, mut c) = (Vec::with_capacity(spec.n), Vec::with_capacity(spec.n));
    for _ in 0..spec.n {
        let x = s.uniform_in(0.0, 2.0 * PI);
        features.push(x);
        t.push(SINE_OFFSET + x.sin() + SINE_NOISE_SD * s.standard_normal());
        c.push(1.0 + x.sin() + s.exponential(SINE_CENSORING_RATE));
    }
    assemble(1, features, t, c)
}

pub fn generate(spec: SimSpec) -> Result<Dataset> {
    match spec.model {
        SimModel::Aft => gen_aft(spec),
        SimModel::Hetero => gen_hetero(spec),
        SimModel::Sine => gen_sine(spec),
    }
}

/// Censors a fully observed response with `C ~ Exp(rate = 1 / (multiplier * mean(y)))`.
/// The original response becomes the latent `t` column.
pub fn inject_censoring(d: &Dataset, rate_multiplier: f64, seed: u64) -> Result<Dataset> {
    if d.delta().contains(&0) {
        return Err(CqrfError::Parameter(
            "censoring can only be injected into fully observed data".into(),
        ));
    }
    if !(rate_multiplier > 0.0 && rate_multiplier.is_finite()) {
        return Err(CqrfError::Parameter(format!(
            "rate multiplier {rate_multiplier} must be positive"
        )));
    }
    let mean = d.y().iter().sum::<f64>() / d.n() as f64;
    if mean.is_nan() || mean <= 0.0 {
        return Err(CqrfError::Parameter(format!(
            "mean response {mean} must be positive to set the censoring rate"
        )));
    }
    let rate = 1.0 / (rate_multiplier * mean);
    let mut s = Stream::new(seed);
    let t = d.y().to_vec();
    let (y, delta) = t.iter().map(|&ti| censor(ti, s.exponential(rate))).unzip();
    let out = d.with_response(y, delta, t);
    out.validate()?;
    Ok(out)
}

fn hetero_sd(x0: f64) -> f64 {
    if x0 > 0.0 {
        2.0
    } else {
        1.0
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Standard normal quantile.
pub fn normal_quantile(tau: f64) -> f64 {
    std_normal().inverse_cdf(tau)
}

pub fn normal_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

/// Closed-form conditional distributions of each design, used as ground truth.
pub mod truth {
    use super::*;

    /// `tau`-quantile of the latent response at covariate row `x`.
    pub fn latent_quantile(model: SimModel, x: &[f64], tau: f64) -> f64 {
        let z = normal_quantile(tau);
        match model {
            SimModel::Aft => (x[0] + AFT_NOISE_SD * z).exp(),
            SimModel::Hetero => HETERO_MEAN + hetero_sd(x[0]) * z,
            SimModel::Sine => SINE_OFFSET + x[0].sin() + SINE_NOISE_SD * z,
        }
    }

    /// `P(T <= q | x)`.
    pub fn latent_cdf(model: SimModel, x: &[f64], q: f64) -> f64 {
        match model {
            SimModel::Aft if q <= 0.0 => 0.0,
            SimModel::Aft => normal_cdf((q.ln() - x[0]) / AFT_NOISE_SD),
            SimModel::Hetero => normal_cdf((q - HETERO_MEAN) / hetero_sd(x[0])),
            SimModel::Sine => normal_cdf((q - SINE_OFFSET - x[0].sin()) / SINE_NOISE_SD),
        }
    }

    /// `G(q | x) = P(C > q | x)`.
    pub fn censoring_survival(model: SimModel, x: &[f64], q: f64) -> f64 {
        let shifted_exp = |shift: f64, rate: f64| {
            if q <= shift {
                1.0
            } else {
                (-rate * (q - shift)).exp()
            }
        };
        match model {
            SimModel::Aft => shifted_exp(0.0, AFT_CENSORING_RATE),
            SimModel::Hetero => shifted_exp(HETERO_CENSORING_SHIFT, HETERO_CENSORING_RATE),
            SimModel::Sine => shifted_exp(1.0 + x[0].sin(), SINE_CENSORING_RATE),
        }
    }

    /// Population estimating function `(1 - tau) G(q) - P(Y > q)`.
    pub fn score(model: SimModel, x: &[f64], q: f64, tau: f64) -> f64 {
        let g = censoring_survival(model, x, q);
        (1.0 - tau) * g - (1.0 - latent_cdf(model, x, q)) * g
    }
}
