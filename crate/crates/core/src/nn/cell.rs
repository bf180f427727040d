use super::params::{Gate, LstmLayerParams};
use super::scalar::Real;
use crate::error::{Error, Result};

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// One LSTM time step for a single sequence:
///
/// ```text
/// i = σ(W_i x + U_i h + b_i)    f = σ(W_f x + U_f h + b_f)
/// g = tanh(W_g x + U_g h + b_g) o = σ(W_o x + U_o h + b_o)
/// c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
/// ```
///
/// This is the scalar reference; the batched engine in `network` must agree
/// with it.
pub fn lstm_cell_forward<T: Real>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    params: &LstmLayerParams<'_, T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let hidden = params.hidden;
    if x.len() != params.in_dim || h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(Error::Shape(format!(
            "cell expects x[{}], h[{hidden}], c[{hidden}]; got x[{}], h[{}], c[{}]",
            params.in_dim,
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    if x.iter().chain(h_prev).chain(c_prev).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "cell input",
            layer: 0,
            frame: 0,
        });
    }
    let pre = |gate: Gate, j: usize| -> T {
        let wi = &params.gate_input_weights(gate)[j * params.in_dim..(j + 1) * params.in_dim];
        let wh = &params.gate_recurrent_weights(gate)[j * hidden..(j + 1) * hidden];
        let mut acc = params.gate_bias(gate)[j];
        for (w, v) in wi.iter().zip(x) {
            acc = acc + *w * *v;
        }
        for (w, v) in wh.iter().zip(h_prev) {
            acc = acc + *w * *v;
        }
        acc
    };
    let mut h = Vec::with_capacity(hidden);
    let mut c = Vec::with_capacity(hidden);
    for j in 0..hidden {
        let i = sigmoid(pre(Gate::Input, j));
        let f = sigmoid(pre(Gate::Forget, j));
        let g = pre(Gate::Cell, j).tanh();
        let o = sigmoid(pre(Gate::Output, j));
        let cj = f * c_prev[j] + i * g;
        c.push(cj);
        h.push(o * cj.tanh());
    }
    if h.iter().chain(&c).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            stage: "cell output",
            layer: 0,
            frame: 0,
        });
    }
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{Architecture, ModelParams};

    fn scalar_arch() -> Architecture {
        Architecture {
            n_channels: 1,
            hidden: 1,
            layers: 1,
            head_hidden: 1,
            n_classes: 2,
            relu_on_logits: false,
        }
    }

    #[test]
    fn zero_params_give_half_gates() {
        let p = ModelParams::<f64>::zeros(Architecture::standard(3, 2));
        let (h, c) =
            lstm_cell_forward(&[1.0, -2.0, 3.0], &[0.0; 16], &[0.0; 16], &p.layer(0)).unwrap();
        assert!(h.iter().chain(&c).all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_carries_cell() {
        let mut p = ModelParams::<f64>::zeros(scalar_arch());
        p.layer_mut(0).bias[1] = 20.0;
        let (h, c) = lstm_cell_forward(&[0.7], &[0.0], &[1.25], &p.layer(0)).unwrap();
        assert!((c[0] - 1.25).abs() < 1e-8);
        // output gate 0.5, so h = 0.5 tanh(c)
        assert!((h[0] - 0.5 * 1.25f64.tanh()).abs() < 1e-8);
    }

    #[test]
    fn scalar_hand_evaluation() {
        let mut p = ModelParams::<f64>::zeros(scalar_arch());
        {
            let l = p.layer_mut(0);
            l.w_input.copy_from_slice(&[0.3, -0.2, 0.5, 0.1]);
            l.w_recurrent.copy_from_slice(&[0.4, 0.25, -0.6, 0.2]);
            l.bias.copy_from_slice(&[0.05, 1.0, -0.1, 0.2]);
        }
        let (x, h0, c0) = (0.8, -0.3, 0.6);
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let i = s(0.3 * x + 0.4 * h0 + 0.05);
        let f = s(-0.2 * x + 0.25 * h0 + 1.0);
        let g = (0.5 * x - 0.6 * h0 - 0.1).tanh();
        let o = s(0.1 * x + 0.2 * h0 + 0.2);
        let c1 = f * c0 + i * g;
        let h1 = o * c1.tanh();
        let (h, c) = lstm_cell_forward(&[x], &[h0], &[c0], &p.layer(0)).unwrap();
        assert!((c[0] - c1).abs() < 1e-15);
        assert!((h[0] - h1).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        let p = ModelParams::<f64>::zeros(scalar_arch());
        assert!(matches!(
            lstm_cell_forward(&[f64::NAN], &[0.0], &[0.0], &p.layer(0)),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            lstm_cell_forward(&[0.0, 1.0], &[0.0], &[0.0], &p.layer(0)),
            Err(Error::Shape(_))
        ));
    }
}
