//! Batched forward pass and backpropagation through time.
//!
//! A batch is split into fixed-size chunks; each chunk is processed by its own
//! [`Worker`] (in parallel with the `parallel` feature) and the per-chunk
//! gradient sums are reduced in chunk order, so the result does not depend on
//! scheduling.
//!
//! Within a chunk all buffers are time-major, `[step][sample][unit]`, which
//! turns the input projection and all weight gradients into single large
//! matrix products over `steps × samples` rows.

use super::loss::softmax_into;
use super::params::{Architecture, LstmLayerParams, LstmLayerParamsMut, ModelParams};
use super::scalar::Real;
use crate::error::{Error, Result};
use crate::frame::FrameMatrix;
use crate::parallel::{self, Execution};

#[derive(Default)]
struct LayerState<T> {
    /// Gate activations `[steps][b][4H]` after the forward pass; overwritten
    /// with pre-activation gradients during the backward pass.
    gates: Vec<T>,
    /// Cell state `[(steps + 1)][b][H]`, slot 0 is the zero initial state.
    c: Vec<T>,
    tanh_c: Vec<T>,
    /// Hidden state `[(steps + 1)][b][H]`, slot 0 is the zero initial state.
    h: Vec<T>,
}

#[derive(Default)]
struct Worker<T> {
    steps: usize,
    batch: usize,
    input: Vec<T>,
    layers: Vec<LayerState<T>>,
    head_pre: Vec<T>,
    head_act: Vec<T>,
    logits_pre: Vec<T>,
    logits: Vec<T>,
    dh: Vec<T>,
    dx: Vec<T>,
    dh_next: Vec<T>,
    dc_next: Vec<T>,
    grad: Option<ModelParams<T>>,
}

fn resize<T: Real>(v: &mut Vec<T>, n: usize) {
    v.clear();
    v.resize(n, T::zero());
}

/// Sets the length without clearing; for buffers that are fully overwritten.
fn ensure_len<T: Real>(v: &mut Vec<T>, n: usize) {
    v.resize(n, T::zero());
}

fn first_non_finite<T: Real>(v: &[T]) -> Option<usize> {
    v.iter().position(|x| !x.is_finite())
}

/// Runs `f` compiled for AVX2 when the CPU has it. Floating-point results are
/// identical either way: only the instruction selection changes.
#[inline(always)]
fn dispatch<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    {
        #[target_feature(enable = "avx2")]
        unsafe fn avx2<R>(f: impl FnOnce() -> R) -> R {
            f()
        }
        if is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { avx2(f) };
        }
    }
    f()
}

fn layer_forward<T: Real>(
    p: &LstmLayerParams<'_, T>,
    x: &[T],
    steps: usize,
    batch: usize,
    st: &mut LayerState<T>,
) {
    dispatch(
        #[inline(always)]
        || layer_forward_impl(p, x, steps, batch, st),
    )
}

#[inline(always)]
fn layer_forward_impl<T: Real>(
    p: &LstmLayerParams<'_, T>,
    x: &[T],
    steps: usize,
    batch: usize,
    st: &mut LayerState<T>,
) {
    let hsz = p.hidden;
    let g4 = 4 * hsz;
    let in_dim = p.in_dim;
    let bh = batch * hsz;
    let two = T::lit(2.0);
    ensure_len(&mut st.gates, steps * batch * g4);
    ensure_len(&mut st.c, (steps + 1) * bh);
    ensure_len(&mut st.tanh_c, steps * bh);
    ensure_len(&mut st.h, (steps + 1) * bh);
    st.c[..bh].fill(T::zero());
    st.h[..bh].fill(T::zero());

    // Z = 1 b^T + X W^T for every step at once.
    for row in st.gates.chunks_exact_mut(g4) {
        row.copy_from_slice(p.bias);
    }
    T::gemm(
        steps * batch,
        in_dim,
        g4,
        T::one(),
        x,
        in_dim as isize,
        1,
        p.w_input,
        1,
        in_dim as isize,
        T::one(),
        &mut st.gates,
        g4 as isize,
        1,
    );

    for t in 0..steps {
        let z = &mut st.gates[t * batch * g4..(t + 1) * batch * g4];
        let (h_done, h_rest) = st.h.split_at_mut((t + 1) * bh);
        let h_prev = &h_done[t * bh..];
        let h_next = &mut h_rest[..bh];
        T::gemm(
            batch,
            hsz,
            g4,
            T::one(),
            h_prev,
            hsz as isize,
            1,
            p.w_recurrent,
            1,
            hsz as isize,
            T::one(),
            z,
            g4 as isize,
            1,
        );
        // tanh(x) = 2 sigmoid(2x) - 1 lets one sigmoid pass cover all gates.
        for row in z.chunks_exact_mut(g4) {
            for v in &mut row[2 * hsz..3 * hsz] {
                *v = two * *v;
            }
        }
        T::sigmoid_in_place(z);
        let (c_done, c_rest) = st.c.split_at_mut((t + 1) * bh);
        let c_prev = &c_done[t * bh..];
        let c_next = &mut c_rest[..bh];
        for (s, row) in z.chunks_exact_mut(g4).enumerate() {
            let (ig, rest) = row.split_at_mut(hsz);
            let (fg, rest) = rest.split_at_mut(hsz);
            let (gg, _) = rest.split_at_mut(hsz);
            let cp = &c_prev[s * hsz..(s + 1) * hsz];
            let cn = &mut c_next[s * hsz..(s + 1) * hsz];
            for j in 0..hsz {
                gg[j] = two * gg[j] - T::one();
                cn[j] = fg[j] * cp[j] + ig[j] * gg[j];
            }
        }
        let tc = &mut st.tanh_c[t * bh..(t + 1) * bh];
        tc.copy_from_slice(c_next);
        T::tanh_in_place(tc);
        for (s, row) in z.chunks_exact(g4).enumerate() {
            let og = &row[3 * hsz..];
            let tcs = &tc[s * hsz..(s + 1) * hsz];
            let hn = &mut h_next[s * hsz..(s + 1) * hsz];
            for j in 0..hsz {
                hn[j] = og[j] * tcs[j];
            }
        }
    }
}

/// Backward through one layer. `dh` holds the loss gradient with respect to
/// this layer's outputs `[steps][b][H]`; on return `dx` (when given) holds
/// the gradient with respect to its inputs `[steps][b][in]`.
#[allow(clippy::too_many_arguments)]
fn layer_backward<T: Real>(
    p: &LstmLayerParams<'_, T>,
    x: &[T],
    steps: usize,
    batch: usize,
    st: &mut LayerState<T>,
    dh: &[T],
    dh_next: &mut Vec<T>,
    dc_next: &mut Vec<T>,
    grad: LstmLayerParamsMut<'_, T>,
    dx: Option<&mut [T]>,
) {
    dispatch(
        #[inline(always)]
        || layer_backward_impl(p, x, steps, batch, st, dh, dh_next, dc_next, grad, dx),
    )
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn layer_backward_impl<T: Real>(
    p: &LstmLayerParams<'_, T>,
    x: &[T],
    steps: usize,
    batch: usize,
    st: &mut LayerState<T>,
    dh: &[T],
    dh_next: &mut Vec<T>,
    dc_next: &mut Vec<T>,
    grad: LstmLayerParamsMut<'_, T>,
    dx: Option<&mut [T]>,
) {
    let hsz = p.hidden;
    let g4 = 4 * hsz;
    let in_dim = p.in_dim;
    let bh = batch * hsz;
    let one = T::one();
    resize(dh_next, bh);
    resize(dc_next, bh);

    for t in (0..steps).rev() {
        let z = &mut st.gates[t * batch * g4..(t + 1) * batch * g4];
        let c_prev = &st.c[t * bh..(t + 1) * bh];
        let tc = &st.tanh_c[t * bh..(t + 1) * bh];
        let dh_t = &dh[t * bh..(t + 1) * bh];
        for (s, row) in z.chunks_exact_mut(g4).enumerate() {
            let r = s * hsz..(s + 1) * hsz;
            let (zi, rest) = row.split_at_mut(hsz);
            let (zf, rest) = rest.split_at_mut(hsz);
            let (zg, zo) = rest.split_at_mut(hsz);
            let zo = &mut zo[..hsz];
            let (dht, dhn) = (&dh_t[r.clone()], &dh_next[r.clone()]);
            let (tcs, cps) = (&tc[r.clone()], &c_prev[r.clone()]);
            let dcn = &mut dc_next[r];
            for j in 0..hsz {
                let (i, f, g, o) = (zi[j], zf[j], zg[j], zo[j]);
                let dhv = dht[j] + dhn[j];
                let tcv = tcs[j];
                let dc = dcn[j] + dhv * o * (one - tcv * tcv);
                dcn[j] = dc * f;
                zi[j] = dc * g * i * (one - i);
                zf[j] = dc * cps[j] * f * (one - f);
                zg[j] = dc * i * (one - g * g);
                zo[j] = dhv * tcv * o * (one - o);
            }
        }
        // dh_{t-1} = dZ_t U
        T::gemm(
            batch,
            g4,
            hsz,
            one,
            z,
            g4 as isize,
            1,
            p.w_recurrent,
            hsz as isize,
            1,
            T::zero(),
            dh_next,
            hsz as isize,
            1,
        );
    }

    let rows = steps * batch;
    let dz = &st.gates[..rows * g4];
    // dU += dZ^T H_prev
    T::gemm(
        g4,
        rows,
        hsz,
        one,
        dz,
        1,
        g4 as isize,
        &st.h[..rows * hsz],
        hsz as isize,
        1,
        one,
        grad.w_recurrent,
        hsz as isize,
        1,
    );
    // dW += dZ^T X
    T::gemm(
        g4,
        rows,
        in_dim,
        one,
        dz,
        1,
        g4 as isize,
        x,
        in_dim as isize,
        1,
        one,
        grad.w_input,
        in_dim as isize,
        1,
    );
    for r in dz.chunks_exact(g4) {
        for (b, v) in grad.bias.iter_mut().zip(r) {
            *b = *b + *v;
        }
    }
    if let Some(dx) = dx {
        T::gemm(
            rows,
            g4,
            in_dim,
            one,
            dz,
            g4 as isize,
            1,
            p.w_input,
            in_dim as isize,
            1,
            T::zero(),
            dx,
            in_dim as isize,
            1,
        );
    }
}

impl<T: Real> Worker<T> {
    fn forward(&mut self, params: &ModelParams<T>, samples: &[&FrameMatrix]) -> Result<()> {
        let arch = *params.arch();
        let batch = samples.len();
        let steps = samples[0].frames();
        let ch = arch.n_channels;
        for (i, s) in samples.iter().enumerate() {
            if s.channels() != ch || s.frames() != steps {
                return Err(Error::Shape(format!(
                    "sample {i} is {}x{}, model expects {steps}x{ch}",
                    s.frames(),
                    s.channels()
                )));
            }
        }
        if steps == 0 {
            return Err(Error::Shape("empty sequence".into()));
        }
        self.steps = steps;
        self.batch = batch;
        ensure_len(&mut self.input, steps * batch * ch);
        for (s, sample) in samples.iter().enumerate() {
            let data = sample.as_slice();
            for t in 0..steps {
                let dst = &mut self.input[(t * batch + s) * ch..(t * batch + s + 1) * ch];
                for (d, v) in dst.iter_mut().zip(&data[t * ch..(t + 1) * ch]) {
                    *d = T::lit(*v as f64);
                }
            }
        }
        if let Some(idx) = first_non_finite(&self.input) {
            return Err(Error::NonFinite {
                stage: "input",
                layer: 0,
                frame: idx / (batch * ch),
            });
        }

        self.layers.resize_with(arch.layers, Default::default);
        for l in 0..arch.layers {
            let (below, here) = self.layers.split_at_mut(l);
            let x: &[T] = if l == 0 {
                &self.input
            } else {
                &below[l - 1].h[batch * arch.hidden..]
            };
            layer_forward(&params.layer(l), x, steps, batch, &mut here[0]);
            if let Some(idx) = first_non_finite(&here[0].h) {
                return Err(Error::NonFinite {
                    stage: "forward",
                    layer: l,
                    frame: (idx / (batch * arch.hidden)).saturating_sub(1),
                });
            }
        }

        let hsz = arch.hidden;
        let k = arch.head_hidden;
        let nc = arch.n_classes;
        let head = params.head();
        let top = &self.layers[arch.layers - 1].h[steps * batch * hsz..];
        resize(&mut self.head_pre, batch * k);
        resize(&mut self.head_act, batch * k);
        resize(&mut self.logits_pre, batch * nc);
        resize(&mut self.logits, batch * nc);
        for s in 0..batch {
            let hv = &top[s * hsz..(s + 1) * hsz];
            for u in 0..k {
                let w = &head.w1[u * hsz..(u + 1) * hsz];
                let mut acc = head.b1[u];
                for (a, b) in w.iter().zip(hv) {
                    acc = acc + *a * *b;
                }
                self.head_pre[s * k + u] = acc;
                self.head_act[s * k + u] = acc.max(T::zero());
            }
            let act = &self.head_act[s * k..(s + 1) * k];
            for c in 0..nc {
                let w = &head.w2[c * k..(c + 1) * k];
                let mut acc = head.b2[c];
                for (a, b) in w.iter().zip(act) {
                    acc = acc + *a * *b;
                }
                self.logits_pre[s * nc + c] = acc;
                self.logits[s * nc + c] = if arch.relu_on_logits {
                    acc.max(T::zero())
                } else {
                    acc
                };
            }
        }
        if let Some(idx) = first_non_finite(&self.logits) {
            return Err(Error::NonFinite {
                stage: "head",
                layer: arch.layers,
                frame: idx / nc,
            });
        }
        Ok(())
    }

    /// Weighted loss summed over the chunk, from the stored logits.
    fn loss_sum(&self, nc: usize, labels: &[usize], weights: &[T]) -> T {
        let mut total = T::zero();
        for (s, &y) in labels.iter().enumerate() {
            let x = &self.logits[s * nc..(s + 1) * nc];
            total = total + weights[y] * (super::loss::log_sum_exp(x) - x[y]);
        }
        total
    }

    /// Gradient of the summed (not averaged) weighted loss; forward must have
    /// run on the same chunk.
    fn backward(&mut self, params: &ModelParams<T>, labels: &[usize], weights: &[T]) -> Result<()> {
        let arch = *params.arch();
        let (steps, batch) = (self.steps, self.batch);
        let hsz = arch.hidden;
        let k = arch.head_hidden;
        let nc = arch.n_classes;
        let grad = self.grad.get_or_insert_with(|| ModelParams::zeros(arch));
        if grad.arch() != &arch {
            *grad = ModelParams::zeros(arch);
        }
        grad.fill_zero();

        resize(&mut self.dh, steps * batch * hsz);
        {
            let head = params.head();
            let top = &self.layers[arch.layers - 1].h[steps * batch * hsz..];
            let hg = grad.head_mut();
            let dh_last = &mut self.dh[(steps - 1) * batch * hsz..];
            let mut probs = vec![T::zero(); nc];
            let mut dpre = vec![T::zero(); k];
            for (s, &y) in labels.iter().enumerate() {
                if y >= nc {
                    return Err(Error::Shape(format!("label {y} with {nc} classes")));
                }
                let x = &self.logits[s * nc..(s + 1) * nc];
                softmax_into(x, &mut probs);
                let w = weights[y];
                for c in 0..nc {
                    let onehot = if c == y { T::one() } else { T::zero() };
                    let mut d = w * (probs[c] - onehot);
                    if arch.relu_on_logits && self.logits_pre[s * nc + c] <= T::zero() {
                        d = T::zero();
                    }
                    probs[c] = d;
                }
                let act = &self.head_act[s * k..(s + 1) * k];
                for c in 0..nc {
                    hg.b2[c] = hg.b2[c] + probs[c];
                    for u in 0..k {
                        hg.w2[c * k + u] = hg.w2[c * k + u] + probs[c] * act[u];
                    }
                }
                for u in 0..k {
                    let mut da = T::zero();
                    for c in 0..nc {
                        da = da + head.w2[c * k + u] * probs[c];
                    }
                    dpre[u] = if self.head_pre[s * k + u] > T::zero() {
                        da
                    } else {
                        T::zero()
                    };
                }
                let hv = &top[s * hsz..(s + 1) * hsz];
                let dhs = &mut dh_last[s * hsz..(s + 1) * hsz];
                for u in 0..k {
                    hg.b1[u] = hg.b1[u] + dpre[u];
                    for j in 0..hsz {
                        hg.w1[u * hsz + j] = hg.w1[u * hsz + j] + dpre[u] * hv[j];
                        dhs[j] = dhs[j] + head.w1[u * hsz + j] * dpre[u];
                    }
                }
            }
        }

        for l in (0..arch.layers).rev() {
            let in_dim = arch.layer_in_dim(l);
            let (below, here) = self.layers.split_at_mut(l);
            let x: &[T] = if l == 0 {
                &self.input
            } else {
                &below[l - 1].h[batch * hsz..]
            };
            let dx = if l > 0 {
                ensure_len(&mut self.dx, steps * batch * in_dim);
                Some(&mut self.dx[..])
            } else {
                None
            };
            layer_backward(
                &params.layer(l),
                x,
                steps,
                batch,
                &mut here[0],
                &self.dh,
                &mut self.dh_next,
                &mut self.dc_next,
                grad.layer_mut(l),
                dx,
            );
            if let Some(idx) = first_non_finite(&here[0].gates) {
                return Err(Error::NonFinite {
                    stage: "backward",
                    layer: l,
                    frame: idx / (batch * 4 * hsz),
                });
            }
            if l > 0 {
                std::mem::swap(&mut self.dh, &mut self.dx);
            }
        }
        if first_non_finite(grad.values()).is_some() {
            return Err(Error::NonFinite {
                stage: "gradient",
                layer: 0,
                frame: 0,
            });
        }
        Ok(())
    }
}

/// Reusable forward/backward driver with per-chunk scratch buffers.
pub struct Engine<T> {
    exec: Execution,
    workers: Vec<Worker<T>>,
}

impl<T: Real> Engine<T> {
    pub fn new(exec: Execution) -> Self {
        Self {
            exec,
            workers: Vec::new(),
        }
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    fn check_batch(params: &ModelParams<T>, samples: &[&FrameMatrix]) -> Result<()> {
        params.arch().validate()?;
        if samples.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let steps = samples[0].frames();
        if samples.iter().any(|s| s.frames() != steps) {
            return Err(Error::Shape("batch mixes sequence lengths".into()));
        }
        Ok(())
    }

    fn prepare(&mut self, n: usize) -> usize {
        let chunk = self.exec.chunk_size(n);
        let n_chunks = n.div_ceil(chunk);
        if self.workers.len() < n_chunks {
            self.workers.resize_with(n_chunks, Default::default);
        }
        chunk
    }

    /// Logits for every sample, in order.
    pub fn logits(
        &mut self,
        params: &ModelParams<T>,
        samples: &[&FrameMatrix],
    ) -> Result<Vec<Vec<T>>> {
        Self::check_batch(params, samples)?;
        let chunk = self.prepare(samples.len());
        let n_chunks = samples.len().div_ceil(chunk);
        let nc = params.arch().n_classes;
        let out: Vec<Result<_>> =
            parallel::map_mut(self.exec, &mut self.workers[..n_chunks], |i, w| {
                let part = &samples[i * chunk..((i + 1) * chunk).min(samples.len())];
                w.forward(params, part)?;
                Ok(w.logits
                    .chunks_exact(nc)
                    .map(<[T]>::to_vec)
                    .collect::<Vec<_>>())
            });
        let mut all = Vec::with_capacity(samples.len());
        for r in out {
            all.extend(r?);
        }
        Ok(all)
    }

    /// Mean weighted loss over the batch, forward only.
    pub fn loss(
        &mut self,
        params: &ModelParams<T>,
        samples: &[&FrameMatrix],
        labels: &[usize],
        weights: &[T],
    ) -> Result<T> {
        Ok(self.loss_sum(params, samples, labels, weights)? / T::lit(samples.len() as f64))
    }

    /// Summed weighted loss over the batch, forward only.
    pub fn loss_sum(
        &mut self,
        params: &ModelParams<T>,
        samples: &[&FrameMatrix],
        labels: &[usize],
        weights: &[T],
    ) -> Result<T> {
        Self::check_batch(params, samples)?;
        Self::check_labels(params.arch(), samples, labels, weights)?;
        let chunk = self.prepare(samples.len());
        let n_chunks = samples.len().div_ceil(chunk);
        let nc = params.arch().n_classes;
        let out: Vec<Result<_>> =
            parallel::map_mut(self.exec, &mut self.workers[..n_chunks], |i, w| {
                let range = i * chunk..((i + 1) * chunk).min(samples.len());
                w.forward(params, &samples[range.clone()])?;
                Ok(w.loss_sum(nc, &labels[range], weights))
            });
        let mut total = T::zero();
        for r in out {
            total = total + r?;
        }
        Ok(total)
    }

    fn check_labels(
        arch: &Architecture,
        samples: &[&FrameMatrix],
        labels: &[usize],
        weights: &[T],
    ) -> Result<()> {
        if labels.len() != samples.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.len()
            )));
        }
        if weights.len() != arch.n_classes {
            return Err(Error::Shape(format!(
                "{} class weights for {} classes",
                weights.len(),
                arch.n_classes
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= arch.n_classes) {
            return Err(Error::Shape(format!(
                "label {y} with {} classes",
                arch.n_classes
            )));
        }
        Ok(())
    }

    /// Mean weighted loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(
        &mut self,
        params: &ModelParams<T>,
        samples: &[&FrameMatrix],
        labels: &[usize],
        weights: &[T],
    ) -> Result<(T, ModelParams<T>)> {
        Self::check_batch(params, samples)?;
        Self::check_labels(params.arch(), samples, labels, weights)?;
        let chunk = self.prepare(samples.len());
        let n_chunks = samples.len().div_ceil(chunk);
        let nc = params.arch().n_classes;
        let out: Vec<Result<_>> =
            parallel::map_mut(self.exec, &mut self.workers[..n_chunks], |i, w| {
                let range = i * chunk..((i + 1) * chunk).min(samples.len());
                w.forward(params, &samples[range.clone()])?;
                let loss = w.loss_sum(nc, &labels[range.clone()], weights);
                w.backward(params, &labels[range], weights)?;
                Ok(loss)
            });
        let mut loss = T::zero();
        for r in out {
            loss = loss + r?;
        }
        let mut grad = ModelParams::zeros(*params.arch());
        for w in &self.workers[..n_chunks] {
            let g = w.grad.as_ref().expect("backward ran");
            for (a, b) in grad.values_mut().iter_mut().zip(g.values()) {
                *a = *a + *b;
            }
        }
        let scale = T::one() / T::lit(samples.len() as f64);
        for v in grad.values_mut() {
            *v = *v * scale;
        }
        Ok((loss * scale, grad))
    }
}

/// Logits of a single sample, starting from zero hidden and cell state.
pub fn forward<T: Real>(sample: &FrameMatrix, params: &ModelParams<T>) -> Result<Vec<T>> {
    let mut e = Engine::new(Execution::sequential());
    Ok(e.logits(params, &[sample])?.remove(0))
}

/// Mean-over-batch weighted loss and gradients.
pub fn backward<T: Real>(
    samples: &[&FrameMatrix],
    labels: &[usize],
    params: &ModelParams<T>,
    loss: &super::loss::LossSpec,
) -> Result<(T, ModelParams<T>)> {
    let mut e = Engine::new(Execution::sequential());
    e.loss_and_gradient(params, samples, labels, &loss.weights_as::<T>())
}
