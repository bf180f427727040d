use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::Real;
use crate::error::{Error, Result};

/// Shape of the classifier: a stack of LSTM layers followed by a two-layer
/// feed-forward head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_channels: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head_hidden: usize,
    pub n_classes: usize,
    /// Apply ReLU to the logits as well (ablation; off by default).
    #[serde(default)]
    pub relu_on_logits: bool,
}

impl Architecture {
    pub const HIDDEN: usize = 16;
    pub const LAYERS: usize = 3;
    pub const HEAD_HIDDEN: usize = 8;

    /// Three LSTM layers of 16 units, head 16 -> 8 -> classes.
    pub fn standard(n_channels: usize, n_classes: usize) -> Self {
        Self {
            n_channels,
            hidden: Self::HIDDEN,
            layers: Self::LAYERS,
            head_hidden: Self::HEAD_HIDDEN,
            n_classes,
            relu_on_logits: false,
        }
    }

    /// Small model for finite-difference checks.
    pub fn tiny(n_channels: usize, n_classes: usize) -> Self {
        Self {
            n_channels,
            hidden: 3,
            layers: 3,
            head_hidden: 4,
            n_classes,
            relu_on_logits: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.hidden == 0 || self.layers == 0 || self.head_hidden == 0 {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        Ok(())
    }

    pub fn layer_in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.n_channels
        } else {
            self.hidden
        }
    }

    fn layer_len(&self, layer: usize) -> usize {
        let g = 4 * self.hidden;
        g * self.layer_in_dim(layer) + g * self.hidden + g
    }

    fn head_len(&self) -> usize {
        self.head_hidden * self.hidden
            + self.head_hidden
            + self.n_classes * self.head_hidden
            + self.n_classes
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        (0..self.layers).map(|l| self.layer_len(l)).sum::<usize>() + self.head_len()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.layer_len(l)).sum()
    }
}

/// Gate order within the stacked `4 * hidden` rows of every LSTM matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

/// Borrowed view of one LSTM layer. Rows are stacked gate-major:
/// `[input; forget; cell; output]`, each block `hidden` rows.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayerParams<'a, T> {
    pub in_dim: usize,
    pub hidden: usize,
    /// `(4 * hidden) × in_dim`, row-major.
    pub w_input: &'a [T],
    /// `(4 * hidden) × hidden`, row-major.
    pub w_recurrent: &'a [T],
    /// `4 * hidden`.
    pub bias: &'a [T],
}

impl<'a, T> LstmLayerParams<'a, T> {
    pub fn gate_input_weights(&self, gate: Gate) -> &'a [T] {
        let n = self.hidden * self.in_dim;
        &self.w_input[gate as usize * n..(gate as usize + 1) * n]
    }

    pub fn gate_recurrent_weights(&self, gate: Gate) -> &'a [T] {
        let n = self.hidden * self.hidden;
        &self.w_recurrent[gate as usize * n..(gate as usize + 1) * n]
    }

    pub fn gate_bias(&self, gate: Gate) -> &'a [T] {
        &self.bias[gate as usize * self.hidden..(gate as usize + 1) * self.hidden]
    }
}

pub struct LstmLayerParamsMut<'a, T> {
    pub w_input: &'a mut [T],
    pub w_recurrent: &'a mut [T],
    pub bias: &'a mut [T],
}

#[derive(Debug, Clone, Copy)]
pub struct HeadParams<'a, T> {
    /// `head_hidden × hidden`
    pub w1: &'a [T],
    pub b1: &'a [T],
    /// `n_classes × head_hidden`
    pub w2: &'a [T],
    pub b2: &'a [T],
}

pub struct HeadParamsMut<'a, T> {
    pub w1: &'a mut [T],
    pub b1: &'a mut [T],
    pub w2: &'a mut [T],
    pub b2: &'a mut [T],
}

/// All weights and biases in one flat buffer. Gradients use the same type
/// and layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    arch: Architecture,
    values: Vec<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            values: vec![T::zero(); arch.param_count()],
        }
    }

    pub fn from_values(arch: Architecture, values: Vec<T>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters for {arch:?}, found {}",
                arch.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("parameters contain non-finite values".into()));
        }
        Ok(Self { arch, values })
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; zero biases except
    /// the forget gate, which starts at 1.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        let mut uniform = |buf: &mut [T], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in buf {
                *w = T::lit(rng.random_range(-bound..bound));
            }
        };
        for l in 0..arch.layers {
            let in_dim = arch.layer_in_dim(l);
            let hidden = arch.hidden;
            let layer = p.layer_mut(l);
            uniform(layer.w_input, in_dim);
            uniform(layer.w_recurrent, hidden);
            layer.bias[hidden..2 * hidden].fill(T::one());
        }
        let head = p.head_mut();
        uniform(head.w1, arch.hidden);
        uniform(head.w2, arch.head_hidden);
        p
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn fill_zero(&mut self) {
        self.values.fill(T::zero());
    }

    pub fn layer(&self, layer: usize) -> LstmLayerParams<'_, T> {
        let a = &self.arch;
        let in_dim = a.layer_in_dim(layer);
        let g = 4 * a.hidden;
        let start = a.layer_offset(layer);
        let (w_input, rest) = self.values[start..start + a.layer_len(layer)].split_at(g * in_dim);
        let (w_recurrent, bias) = rest.split_at(g * a.hidden);
        LstmLayerParams {
            in_dim,
            hidden: a.hidden,
            w_input,
            w_recurrent,
            bias,
        }
    }

    pub fn layer_mut(&mut self, layer: usize) -> LstmLayerParamsMut<'_, T> {
        let a = self.arch;
        let in_dim = a.layer_in_dim(layer);
        let g = 4 * a.hidden;
        let start = a.layer_offset(layer);
        let (w_input, rest) =
            self.values[start..start + a.layer_len(layer)].split_at_mut(g * in_dim);
        let (w_recurrent, bias) = rest.split_at_mut(g * a.hidden);
        LstmLayerParamsMut {
            w_input,
            w_recurrent,
            bias,
        }
    }

    pub fn head(&self) -> HeadParams<'_, T> {
        let a = &self.arch;
        let start = a.layer_offset(a.layers);
        let (w1, rest) = self.values[start..].split_at(a.head_hidden * a.hidden);
        let (b1, rest) = rest.split_at(a.head_hidden);
        let (w2, b2) = rest.split_at(a.n_classes * a.head_hidden);
        HeadParams { w1, b1, w2, b2 }
    }

    pub fn head_mut(&mut self) -> HeadParamsMut<'_, T> {
        let a = self.arch;
        let start = a.layer_offset(a.layers);
        let (w1, rest) = self.values[start..].split_at_mut(a.head_hidden * a.hidden);
        let (b1, rest) = rest.split_at_mut(a.head_hidden);
        let (w2, b2) = rest.split_at_mut(a.n_classes * a.head_hidden);
        HeadParamsMut { w1, b1, w2, b2 }
    }

    /// Named contiguous parameter groups, in storage order.
    pub fn groups(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let a = &self.arch;
        let g = 4 * a.hidden;
        let mut out = Vec::new();
        let mut at = 0;
        let mut push = |name: String, len: usize| {
            out.push((name, at..at + len));
            at += len;
        };
        for l in 0..a.layers {
            push(format!("lstm{l}.w_input"), g * a.layer_in_dim(l));
            push(format!("lstm{l}.w_recurrent"), g * a.hidden);
            push(format!("lstm{l}.bias"), g);
        }
        push("head.w1".into(), a.head_hidden * a.hidden);
        push("head.b1".into(), a.head_hidden);
        push("head.w2".into(), a.n_classes * a.head_hidden);
        push("head.b2".into(), a.n_classes);
        out
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}
