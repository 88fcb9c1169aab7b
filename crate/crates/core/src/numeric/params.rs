use super::graph::{Gradients, Graph, Var};
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// A named trainable tensor with its gradient and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Parameter {
            name: name.into(),
            shape,
            value,
            grad: vec![T::zero(); n],
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    /// Shape as a matrix: vectors become `1 x n`.
    pub fn matrix_shape(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => (1, other.iter().product()),
        }
    }
}

/// Ordered parameter collection plus the shared Adam step counter.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    pub params: Vec<Parameter<T>>,
    pub step: u64,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            params: Vec::new(),
            step: 0,
        }
    }

    pub fn push(&mut self, p: Parameter<T>) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| {
                let (r, c) = p.matrix_shape();
                g.param(p.value.clone(), r, c)
            })
            .collect()
    }

    /// Places every parameter on `g` as a constant (no gradient).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| {
                let (r, c) = p.matrix_shape();
                g.constant(p.value.clone(), r, c)
            })
            .collect()
    }

    /// Adds `scale * grad` for each bound variable into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients<T>, vars: &[Var], scale: f64) {
        let s = T::lit(scale);
        for (p, &v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = grads.get(v) {
                for (d, &x) in p.grad.iter_mut().zip(g) {
                    *d += x * s;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect::<Vec<U>>();
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: conv(&p.value),
                    grad: conv(&p.grad),
                    m: conv(&p.m),
                    v: conv(&p.v),
                })
                .collect(),
            step: self.step,
        }
    }

    /// `self <- momentum * self + (1 - momentum) * other`, value-wise.
    pub fn ema_from(&mut self, other: &ParamSet<T>, momentum: f64) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::shape("ema", format!("{} vs {} params", self.len(), other.len())));
        }
        let m = T::lit(momentum);
        let one_m = T::lit(1.0 - momentum);
        for (k, q) in self.params.iter_mut().zip(&other.params) {
            if k.value.len() != q.value.len() {
                return Err(Error::shape("ema", format!("{} vs {}", k.name, q.name)));
            }
            for (kv, &qv) in k.value.iter_mut().zip(&q.value) {
                *kv = m * *kv + one_m * qv;
            }
        }
        Ok(())
    }

    pub fn copy_values_from(&mut self, other: &ParamSet<T>) {
        for (d, s) in self.params.iter_mut().zip(&other.params) {
            d.value.copy_from_slice(&s.value);
        }
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam { lr, ..Self::default() }
    }

    /// One update of every parameter from its gradient buffer, then clears
    /// the gradients. A non-finite gradient aborts before anything changes.
    pub fn step<T: Scalar>(&self, set: &mut ParamSet<T>) -> Result<()> {
        self.step_scaled(set, |_| 1.0)
    }

    /// Like [`Adam::step`] with a per-parameter learning-rate multiplier.
    pub fn step_scaled<T: Scalar>(&self, set: &mut ParamSet<T>, lr_scale: impl Fn(&str) -> f64) -> Result<()> {
        for p in &set.params {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in parameter {}", p.name)));
            }
        }
        set.step += 1;
        let t = set.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (ob1, ob2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let eps = T::lit(self.eps);
        for p in &mut set.params {
            let lr = T::lit(self.lr * lr_scale(&p.name));
            let (c1, c2) = (T::lit(1.0 / bc1), T::lit(1.0 / bc2));
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = b1 * p.m[i] + ob1 * g;
                p.v[i] = b2 * p.v[i] + ob2 * g * g;
                let mhat = p.m[i] * c1;
                let vhat = p.v[i] * c2;
                p.value[i] -= lr * mhat / (vhat.sqrt() + eps);
                p.grad[i] = T::zero();
            }
        }
        Ok(())
    }
}
