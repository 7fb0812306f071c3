//! Differentiable parametric surrogate families `f_w(x)` with exact gradients in `w`.

use std::fmt;

use crate::domain::{BoxDomain, ParamVector};
use crate::error::{check_dim, Error, Result};

/// Value of `f_w(x)` together with its gradient with respect to `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEval {
    pub value: f64,
    pub grad_w: Vec<f64>,
}

/// A family `F = { f_w : w in W }` of functions that are differentiable in `w`.
///
/// Implementations are immutable after construction and shared freely between threads.
/// The `*_into`/`value_at` fast paths skip dimension checks; callers validate once
/// up front (see [`SurrogateFamily::check_dims`]).
pub trait SurrogateFamily: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn input_dim(&self) -> usize;

    fn param_dim(&self) -> usize;

    /// Box used for initialization and optional projection of parameters.
    fn param_box(&self) -> &BoxDomain;

    /// Writes `grad_w f_x(w)` into `grad` and returns `f_x(w)`.
    fn value_grad_into(&self, w: &[f64], x: &[f64], grad: &mut [f64]) -> f64;

    fn value_at(&self, w: &[f64], x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.param_dim()];
        self.value_grad_into(w, x, &mut g)
    }

    /// Upper bound on `||grad_w f_x(w)||_2` over the parameter box and `input_box`.
    fn gradient_norm_bound(&self, input_box: &BoxDomain) -> f64;

    /// Upper bound on `|f_x(w)|` over the parameter box and `input_box`.
    fn output_bound(&self, input_box: &BoxDomain) -> f64;

    fn check_dims(&self, w: &[f64], x: &[f64]) -> Result<()> {
        check_dim("parameter vector", self.param_dim(), w.len())?;
        check_dim("input point", self.input_dim(), x.len())
    }

    fn evaluate(&self, w: &[f64], x: &[f64]) -> Result<ModelEval> {
        self.check_dims(w, x)?;
        let mut grad_w = vec![0.0; self.param_dim()];
        let value = self.value_grad_into(w, x, &mut grad_w);
        if !value.is_finite() || grad_w.iter().any(|g| !g.is_finite()) {
            return Err(Error::numerical(
                format!("{} produced a non-finite value or gradient", self.name()),
                None,
            ));
        }
        Ok(ModelEval { value, grad_w })
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `x -> w2 . sigmoid(W1 x + b1) + b2`, one hidden layer of width `hidden`.
///
/// Parameter layout: `W1` row-major (`hidden x d_x`), then `b1`, `w2`, `b2`.
#[derive(Debug, Clone)]
pub struct SigmoidNet {
    input_dim: usize,
    hidden: usize,
    param_box: BoxDomain,
}

impl SigmoidNet {
    pub const DEFAULT_HIDDEN: usize = 5;

    /// Network with the default `[0, 1]^{d_w}` parameter box.
    pub fn new(input_dim: usize, hidden: usize) -> Result<Self> {
        let d_w = Self::param_count(input_dim, hidden);
        Self::with_param_box(input_dim, hidden, BoxDomain::cube(d_w.max(1), 0.0, 1.0)?)
    }

    pub fn with_param_box(input_dim: usize, hidden: usize, param_box: BoxDomain) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("network input dimension must be at least 1"));
        }
        if hidden == 0 {
            return Err(Error::invalid("network hidden width must be at least 1"));
        }
        check_dim(
            "parameter box",
            Self::param_count(input_dim, hidden),
            param_box.dim(),
        )?;
        param_box.require_nondegenerate()?;
        Ok(Self {
            input_dim,
            hidden,
            param_box,
        })
    }

    pub fn param_count(input_dim: usize, hidden: usize) -> usize {
        hidden * input_dim + 2 * hidden + 1
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn b1_offset(&self) -> usize {
        self.hidden * self.input_dim
    }

    fn w2_offset(&self) -> usize {
        self.b1_offset() + self.hidden
    }

    fn b2_offset(&self) -> usize {
        self.w2_offset() + self.hidden
    }

    /// Hidden activations `sigmoid(W1 x + b1)`.
    pub fn activations(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let b1 = self.b1_offset();
        (0..self.hidden)
            .map(|k| {
                let row = &w[k * self.input_dim..(k + 1) * self.input_dim];
                let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[b1 + k];
                sigmoid(z)
            })
            .collect()
    }
}

impl SurrogateFamily for SigmoidNet {
    fn name(&self) -> &str {
        "sigmoid-net"
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn param_dim(&self) -> usize {
        Self::param_count(self.input_dim, self.hidden)
    }

    fn param_box(&self) -> &BoxDomain {
        &self.param_box
    }

    fn value_grad_into(&self, w: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(w.len(), self.param_dim());
        debug_assert_eq!(x.len(), self.input_dim);
        let (d, b1, w2, b2) = (
            self.input_dim,
            self.b1_offset(),
            self.w2_offset(),
            self.b2_offset(),
        );
        let mut value = w[b2];
        for k in 0..self.hidden {
            let row = &w[k * d..(k + 1) * d];
            let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[b1 + k];
            let a = sigmoid(z);
            value += w[w2 + k] * a;
            // d f / d z_k
            let dz = w[w2 + k] * a * (1.0 - a);
            for (g, xi) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                *g = dz * xi;
            }
            grad[b1 + k] = dz;
            grad[w2 + k] = a;
        }
        grad[b2] = 1.0;
        value
    }

    fn value_at(&self, w: &[f64], x: &[f64]) -> f64 {
        let (d, b1, w2) = (self.input_dim, self.b1_offset(), self.w2_offset());
        let mut value = w[self.b2_offset()];
        for k in 0..self.hidden {
            let row = &w[k * d..(k + 1) * d];
            let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[b1 + k];
            value += w[w2 + k] * sigmoid(z);
        }
        value
    }

    fn gradient_norm_bound(&self, input_box: &BoxDomain) -> f64 {
        // |sigmoid'| <= 1/4 and 0 < sigmoid < 1 per hidden unit.
        let x_sq: f64 = (0..input_box.dim())
            .map(|i| input_box.abs_max(i).powi(2))
            .sum();
        let w2 = self.w2_offset();
        let mut total = 1.0;
        for k in 0..self.hidden {
            let w2_max = self.param_box.abs_max(w2 + k);
            total += (w2_max / 4.0).powi(2) * (x_sq + 1.0) + 1.0;
        }
        total.sqrt()
    }

    fn output_bound(&self, _input_box: &BoxDomain) -> f64 {
        let w2 = self.w2_offset();
        let layer: f64 = (0..self.hidden)
            .map(|k| self.param_box.abs_max(w2 + k))
            .sum();
        layer + self.param_box.abs_max(self.b2_offset())
    }
}

/// `f_w(x) = w . x`. Useful as a test family: the closed-form centre reduces to ridge regression.
#[derive(Debug, Clone)]
pub struct LinearModel {
    param_box: BoxDomain,
}

impl LinearModel {
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_param_box(BoxDomain::cube(dim, 0.0, 1.0)?)
    }

    pub fn with_param_box(param_box: BoxDomain) -> Result<Self> {
        param_box.require_nondegenerate()?;
        Ok(Self { param_box })
    }
}

impl SurrogateFamily for LinearModel {
    fn name(&self) -> &str {
        "linear"
    }

    fn input_dim(&self) -> usize {
        self.param_box.dim()
    }

    fn param_dim(&self) -> usize {
        self.param_box.dim()
    }

    fn param_box(&self) -> &BoxDomain {
        &self.param_box
    }

    fn value_grad_into(&self, w: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        grad.copy_from_slice(x);
        w.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn gradient_norm_bound(&self, input_box: &BoxDomain) -> f64 {
        (0..input_box.dim())
            .map(|i| input_box.abs_max(i).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn output_bound(&self, input_box: &BoxDomain) -> f64 {
        (0..input_box.dim())
            .map(|i| self.param_box.abs_max(i) * input_box.abs_max(i))
            .sum()
    }
}

/// `f_w(x) = w_0`, ignoring `x`.
#[derive(Debug, Clone)]
pub struct ConstantModel {
    input_dim: usize,
    param_box: BoxDomain,
}

impl ConstantModel {
    pub fn new(input_dim: usize, lo: f64, hi: f64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be at least 1"));
        }
        let param_box = BoxDomain::cube(1, lo, hi)?;
        param_box.require_nondegenerate()?;
        Ok(Self {
            input_dim,
            param_box,
        })
    }
}

impl SurrogateFamily for ConstantModel {
    fn name(&self) -> &str {
        "constant"
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn param_box(&self) -> &BoxDomain {
        &self.param_box
    }

    fn value_grad_into(&self, w: &[f64], _x: &[f64], grad: &mut [f64]) -> f64 {
        grad[0] = 1.0;
        w[0]
    }

    fn gradient_norm_bound(&self, _input_box: &BoxDomain) -> f64 {
        1.0
    }

    fn output_bound(&self, _input_box: &BoxDomain) -> f64 {
        self.param_box.abs_max(0)
    }
}

/// Convenience wrapper returning a [`ModelEval`] for a [`ParamVector`].
pub fn evaluate(model: &dyn SurrogateFamily, w: &ParamVector, x: &[f64]) -> Result<ModelEval> {
    model.evaluate(w, x)
}
