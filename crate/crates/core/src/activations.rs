//! The activation-function zoo used inside encoder feed-forward blocks.
//!
//! An [`ActivationSpec`] describes a family together with its fixed
//! hyperparameters. Learnable coefficients (PReLU slope, polynomial
//! coefficients) are stored separately so the optimizer can own them; every
//! evaluation routine takes them as a `params` slice whose length must equal
//! [`ActivationSpec::param_count`].

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Input clamp bound for the learnable polynomial families.
pub const POLY_CLAMP: f64 = 3.0;
pub const DEFAULT_ELU_ALPHA: f64 = 1.0;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const PRELU_INIT_SLOPE: f64 = 0.25;
/// Half-width of the uniform noise added to polynomial coefficients at init.
pub const POLY_INIT_NOISE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Swish,
    Gelu,
    Elu,
    LeakyRelu,
    Prelu,
    Sine,
    Chebyshev,
    LearnablePoly,
    NegPosPoly,
}

impl ActivationKind {
    pub fn has_degree(self) -> bool {
        matches!(self, Self::Chebyshev | Self::LearnablePoly | Self::NegPosPoly)
    }

    pub fn is_learnable(self) -> bool {
        matches!(self, Self::Prelu | Self::LearnablePoly | Self::NegPosPoly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    pub degree: Option<usize>,
    pub elu_alpha: f64,
    pub leaky_slope: f64,
}

/// Every spelling accepted in config files and on the command line.
pub const ACTIVATION_NAMES: [&str; 12] = [
    "relu",
    "swish",
    "gelu",
    "elu",
    "leaky_relu",
    "prelu",
    "sine",
    "chebyshev2",
    "chebyshev3",
    "poly2",
    "poly3",
    "neg_pos_poly",
];

impl ActivationSpec {
    pub fn new(kind: ActivationKind, degree: Option<usize>) -> Result<Self> {
        let spec = Self {
            kind,
            degree,
            elu_alpha: DEFAULT_ELU_ALPHA,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn relu() -> Self {
        Self::new(ActivationKind::Relu, None).expect("valid")
    }

    pub fn gelu() -> Self {
        Self::new(ActivationKind::Gelu, None).expect("valid")
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        match (self.kind.has_degree(), self.degree) {
            (true, Some(2 | 3)) | (false, None) => {}
            (true, Some(d)) => problems.push(format!("{:?} degree must be 2 or 3, got {d}", self.kind)),
            (true, None) => problems.push(format!("{:?} requires a degree", self.kind)),
            (false, Some(_)) => problems.push(format!("{:?} takes no degree", self.kind)),
        }
        if !(self.elu_alpha > 0.0) {
            problems.push(format!("elu_alpha must be > 0, got {}", self.elu_alpha));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            problems.push(format!("leaky_slope must lie in (0, 1), got {}", self.leaky_slope));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn deg(&self) -> usize {
        self.degree.unwrap_or(0)
    }

    /// Number of learnable coefficients this family carries.
    pub fn param_count(&self) -> usize {
        match self.kind {
            ActivationKind::Prelu => 1,
            ActivationKind::LearnablePoly => self.deg() + 1,
            ActivationKind::NegPosPoly => 1 + 2 * self.deg(),
            _ => 0,
        }
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Contract(format!(
                "{} expects {} learnable parameters, got {}",
                self,
                self.param_count(),
                params.len()
            )));
        }
        Ok(())
    }

    /// Points where the function is not differentiable (or its clamp engages).
    pub fn kinks(&self) -> &'static [f64] {
        match self.kind {
            ActivationKind::Relu | ActivationKind::LeakyRelu | ActivationKind::Prelu | ActivationKind::Elu => &[0.0],
            ActivationKind::LearnablePoly => &[-POLY_CLAMP, POLY_CLAMP],
            ActivationKind::NegPosPoly => &[-POLY_CLAMP, 0.0, POLY_CLAMP],
            _ => &[],
        }
    }

    /// Scalar forward pass.
    pub fn eval(&self, params: &[f64], x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Swish => x * sigmoid(x),
            ActivationKind::Gelu => x * normal_cdf(x),
            ActivationKind::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    self.elu_alpha * x.exp_m1()
                }
            }
            ActivationKind::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    self.leaky_slope * x
                }
            }
            ActivationKind::Prelu => {
                if x >= 0.0 {
                    x
                } else {
                    params[0] * x
                }
            }
            ActivationKind::Sine => x.sin(),
            ActivationKind::Chebyshev => chebyshev_t(self.deg(), x.tanh()),
            ActivationKind::LearnablePoly => horner(params, clamp_poly(x)),
            ActivationKind::NegPosPoly => {
                let (c0, branch) = self.neg_pos_branch(params, x);
                c0 + clamp_poly(x) * horner(branch, clamp_poly(x))
            }
        }
    }

    /// Scalar derivative with respect to the input; right-hand at kinks.
    pub fn grad_input(&self, params: &[f64], x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => step(x, 0.0),
            ActivationKind::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            ActivationKind::Gelu => normal_cdf(x) + x * normal_pdf(x),
            ActivationKind::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    self.elu_alpha * x.exp()
                }
            }
            ActivationKind::LeakyRelu => step(x, self.leaky_slope),
            ActivationKind::Prelu => step(x, params[0]),
            ActivationKind::Sine => x.cos(),
            ActivationKind::Chebyshev => {
                let t = x.tanh();
                chebyshev_t_derivative(self.deg(), t) * (1.0 - t * t)
            }
            ActivationKind::LearnablePoly => {
                if inside_clamp(x) {
                    horner_derivative(params, x)
                } else {
                    0.0
                }
            }
            ActivationKind::NegPosPoly => {
                if !inside_clamp(x) {
                    return 0.0;
                }
                let (_, branch) = self.neg_pos_branch(params, x);
                // branch[k] multiplies x^(k+1)
                branch
                    .iter()
                    .enumerate()
                    .rev()
                    .fold(0.0, |acc, (k, c)| acc * x + (k + 1) as f64 * c)
            }
        }
    }

    /// Writes `∂y/∂params` at `x` into `out` (length [`Self::param_count`]).
    pub fn grad_params_into(&self, x: f64, out: &mut [f64]) {
        match self.kind {
            ActivationKind::Prelu => out[0] = x.min(0.0),
            ActivationKind::LearnablePoly => {
                let z = clamp_poly(x);
                let mut p = 1.0;
                for o in out.iter_mut() {
                    *o = p;
                    p *= z;
                }
            }
            ActivationKind::NegPosPoly => {
                let d = self.deg();
                let z = clamp_poly(x);
                out.fill(0.0);
                out[0] = 1.0;
                let offset = if x < 0.0 { 1 } else { 1 + d };
                let mut p = z;
                for o in &mut out[offset..offset + d] {
                    *o = p;
                    p *= z;
                }
            }
            _ => {}
        }
    }

    /// Splits neg_pos_poly coefficients into the shared constant and the
    /// branch (degree 1..d) selected by the sign of `x`.
    fn neg_pos_branch<'p>(&self, params: &'p [f64], x: f64) -> (f64, &'p [f64]) {
        let d = self.deg();
        if x < 0.0 {
            (params[0], &params[1..1 + d])
        } else {
            (params[0], &params[1 + d..1 + 2 * d])
        }
    }
}

impl fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match (self.kind, self.degree) {
            (ActivationKind::Relu, _) => "relu",
            (ActivationKind::Swish, _) => "swish",
            (ActivationKind::Gelu, _) => "gelu",
            (ActivationKind::Elu, _) => "elu",
            (ActivationKind::LeakyRelu, _) => "leaky_relu",
            (ActivationKind::Prelu, _) => "prelu",
            (ActivationKind::Sine, _) => "sine",
            (ActivationKind::Chebyshev, Some(2)) => "chebyshev2",
            (ActivationKind::Chebyshev, _) => "chebyshev3",
            (ActivationKind::LearnablePoly, Some(2)) => "poly2",
            (ActivationKind::LearnablePoly, _) => "poly3",
            (ActivationKind::NegPosPoly, _) => "neg_pos_poly",
        };
        f.write_str(name)
    }
}

impl FromStr for ActivationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use ActivationKind::*;
        let (kind, degree) = match s {
            "relu" => (Relu, None),
            "swish" => (Swish, None),
            "gelu" => (Gelu, None),
            "elu" => (Elu, None),
            "leaky_relu" => (LeakyRelu, None),
            "prelu" => (Prelu, None),
            "sine" => (Sine, None),
            "chebyshev2" => (Chebyshev, Some(2)),
            "chebyshev3" => (Chebyshev, Some(3)),
            "poly2" => (LearnablePoly, Some(2)),
            "poly3" => (LearnablePoly, Some(3)),
            "neg_pos_poly" => (NegPosPoly, Some(3)),
            other => {
                return Err(Error::Config(vec![format!(
                    "unknown activation `{other}` (expected one of {})",
                    ACTIVATION_NAMES.join(", ")
                )]))
            }
        };
        Self::new(kind, degree)
    }
}

fn step(x: f64, negative_slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        negative_slope
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF via `erf`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn clamp_poly(x: f64) -> f64 {
    x.clamp(-POLY_CLAMP, POLY_CLAMP)
}

fn inside_clamp(x: f64) -> bool {
    (-POLY_CLAMP..POLY_CLAMP).contains(&x)
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn horner_derivative(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (i, c)| acc * x + i as f64 * c)
}

/// `T_n(t)` by the three-term recurrence; no domain check.
fn chebyshev_t(n: usize, t: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, t);
    if n == 0 {
        return prev;
    }
    for _ in 1..n {
        let next = 2.0 * t * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `T_n'(t) = n·U_{n-1}(t)`.
fn chebyshev_t_derivative(n: usize, t: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let (mut prev, mut cur) = (1.0, 2.0 * t);
    if n == 1 {
        return 1.0;
    }
    for _ in 2..n {
        let next = 2.0 * t * cur - prev;
        prev = cur;
        cur = next;
    }
    n as f64 * cur
}

/// Chebyshev polynomial of the first kind on `[-1, 1]`.
pub fn chebyshev_eval(degree: usize, t: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::Domain {
            what: "chebyshev_eval",
            value: t,
        });
    }
    Ok(chebyshev_t(degree, t))
}

/// Elementwise forward pass over a tensor.
pub fn act_forward(spec: &ActivationSpec, params: &[f64], x: &Tensor) -> Result<Tensor> {
    spec.check_params(params)?;
    Ok(x.map(|v| spec.eval(params, v)))
}

pub fn act_grad_input(spec: &ActivationSpec, params: &[f64], x: &Tensor) -> Result<Tensor> {
    spec.check_params(params)?;
    Ok(x.map(|v| spec.grad_input(params, v)))
}

/// One tensor per learnable parameter, each shaped like `x`.
pub fn act_grad_params(spec: &ActivationSpec, params: &[f64], x: &Tensor) -> Result<Vec<Tensor>> {
    if !spec.kind.is_learnable() {
        return Err(Error::Contract(format!("{spec} has no learnable parameters")));
    }
    spec.check_params(params)?;
    let n = spec.param_count();
    let mut out: Vec<Tensor> = (0..n).map(|_| Tensor::zeros(x.shape())).collect();
    let mut buf = vec![0.0; n];
    for (i, &v) in x.data().iter().enumerate() {
        spec.grad_params_into(v, &mut buf);
        for (t, g) in out.iter_mut().zip(&buf) {
            t.data_mut()[i] = *g;
        }
    }
    Ok(out)
}

/// Initial learnable parameters: PReLU slope 0.25, polynomials start at the
/// identity plus uniform noise in `[-noise, noise]`.
pub fn init_params(spec: &ActivationSpec, seed: u64, noise: f64) -> Result<Vec<f64>> {
    if !spec.kind.is_learnable() {
        return Err(Error::Contract(format!("{spec} has no learnable parameters")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |v: f64| {
        if noise > 0.0 {
            v + rng.random_range(-noise..=noise)
        } else {
            v
        }
    };
    let d = spec.deg();
    Ok(match spec.kind {
        ActivationKind::Prelu => vec![PRELU_INIT_SLOPE],
        ActivationKind::LearnablePoly => (0..=d).map(|i| jitter(if i == 1 { 1.0 } else { 0.0 })).collect(),
        ActivationKind::NegPosPoly => (0..1 + 2 * d)
            .map(|i| jitter(if i == 1 || i == 1 + d { 1.0 } else { 0.0 }))
            .collect(),
        _ => unreachable!("checked above"),
    })
}
