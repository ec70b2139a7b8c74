//! Forward and backward passes for a single instance.

use super::arch::Layer;
use super::{Architecture, WeightSet};
use crate::Scalar;

/// Per-instance buffers reused across forward/backward calls.
pub(crate) struct Workspace<T> {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<T>>,
    /// Winning input offset for every pooled output.
    pool_argmax: Vec<Vec<usize>>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub(crate) fn new(arch: &Architecture) -> Self {
        let mut acts = vec![vec![T::zero(); arch.input_len()]];
        let mut pool_argmax = Vec::new();
        for layer in arch.layers() {
            acts.push(vec![T::zero(); layer.output_size()]);
            pool_argmax.push(match layer {
                Layer::Pool { .. } => vec![0; layer.output_size()],
                _ => Vec::new(),
            });
        }
        let widest = acts.iter().map(Vec::len).max().unwrap_or(0);
        Self {
            acts,
            pool_argmax,
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }

    pub(crate) fn probabilities(&self) -> &[T] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    fn logits(&self) -> &[T] {
        &self.acts[self.acts.len() - 2]
    }

    /// Cross-entropy of the last forward pass against `label`, computed from
    /// the logits through log-sum-exp.
    pub(crate) fn loss(&self, label: usize) -> T {
        let z = self.logits();
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = z.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        lse - z[label]
    }

    pub(crate) fn forward(&mut self, arch: &Architecture, weights: &WeightSet<T>, x: &[T]) {
        self.acts[0].copy_from_slice(x);
        let tensors = weights.tensors();
        for (i, layer) in arch.layers().iter().enumerate() {
            let (before, after) = self.acts.split_at_mut(i + 1);
            let input = &before[i];
            let out = &mut after[0];
            match *layer {
                Layer::Conv {
                    in_channels,
                    in_len,
                    filters,
                    kernel,
                    stride,
                    out_len,
                } => {
                    let slot = arch.param_slot(i).unwrap();
                    let w = &tensors[slot].values;
                    let b = &tensors[slot + 1].values;
                    for o in 0..filters {
                        let row = &mut out[o * out_len..(o + 1) * out_len];
                        row.fill(b[o]);
                        for c in 0..in_channels {
                            let x = &input[c * in_len..(c + 1) * in_len];
                            let wk = &w[(o * in_channels + c) * kernel..][..kernel];
                            for (t, y) in row.iter_mut().enumerate() {
                                let xs = &x[t * stride..t * stride + kernel];
                                let mut acc = T::zero();
                                for k in 0..kernel {
                                    acc += wk[k] * xs[k];
                                }
                                *y += acc;
                            }
                        }
                    }
                }
                Layer::Pool {
                    channels,
                    in_len,
                    size,
                    out_len,
                } => {
                    let argmax = &mut self.pool_argmax[i];
                    for c in 0..channels {
                        for t in 0..out_len {
                            let start = c * in_len + t * size;
                            let mut best = start;
                            for j in start + 1..start + size {
                                if input[j] > input[best] {
                                    best = j;
                                }
                            }
                            out[c * out_len + t] = input[best];
                            argmax[c * out_len + t] = best;
                        }
                    }
                }
                Layer::Dense { inputs, units } => {
                    let slot = arch.param_slot(i).unwrap();
                    let w = &tensors[slot].values;
                    let b = &tensors[slot + 1].values;
                    for u in 0..units {
                        let row = &w[u * inputs..(u + 1) * inputs];
                        let mut acc = b[u];
                        for (wv, xv) in row.iter().zip(input.iter()) {
                            acc += *wv * *xv;
                        }
                        out[u] = acc;
                    }
                }
                Layer::Relu { .. } => {
                    for (y, &v) in out.iter_mut().zip(input.iter()) {
                        *y = if v > T::zero() { v } else { T::zero() };
                    }
                }
                Layer::Softmax { .. } => {
                    let max = input.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut sum = T::zero();
                    for (y, &v) in out.iter_mut().zip(input.iter()) {
                        *y = (v - max).exp();
                        sum += *y;
                    }
                    for y in out.iter_mut() {
                        *y = *y / sum;
                    }
                }
            }
        }
    }

    /// Adds the cross-entropy gradient of the last forward pass to `grads`.
    pub(crate) fn backward(
        &mut self,
        arch: &Architecture,
        weights: &WeightSet<T>,
        label: usize,
        grads: &mut WeightSet<T>,
    ) {
        let layers = arch.layers();
        let tensors = weights.tensors();
        // softmax + cross-entropy: dL/dz = p - onehot
        self.delta.clear();
        self.delta.extend_from_slice(self.acts.last().unwrap());
        self.delta[label] -= T::one();

        for i in (0..layers.len() - 1).rev() {
            let input = &self.acts[i];
            let need_input_grad = i > 0;
            self.delta_prev.clear();
            self.delta_prev.resize(input.len(), T::zero());
            let dy = &self.delta;
            let dx = &mut self.delta_prev;
            match layers[i] {
                Layer::Conv {
                    in_channels,
                    in_len,
                    filters,
                    kernel,
                    stride,
                    out_len,
                } => {
                    let slot = arch.param_slot(i).unwrap();
                    let w = &tensors[slot].values;
                    let (gw, gb) = grad_pair(grads, slot);
                    for o in 0..filters {
                        let dro = &dy[o * out_len..(o + 1) * out_len];
                        gb[o] += dro.iter().copied().sum::<T>();
                        for c in 0..in_channels {
                            let x = &input[c * in_len..(c + 1) * in_len];
                            let base = (o * in_channels + c) * kernel;
                            for k in 0..kernel {
                                let mut acc = T::zero();
                                for (t, &g) in dro.iter().enumerate() {
                                    acc += g * x[t * stride + k];
                                }
                                gw[base + k] += acc;
                            }
                            if need_input_grad {
                                let wk = &w[base..base + kernel];
                                let dxc = &mut dx[c * in_len..(c + 1) * in_len];
                                for (t, &g) in dro.iter().enumerate() {
                                    let seg = &mut dxc[t * stride..t * stride + kernel];
                                    for k in 0..kernel {
                                        seg[k] += g * wk[k];
                                    }
                                }
                            }
                        }
                    }
                }
                Layer::Pool { .. } => {
                    for (&g, &src) in dy.iter().zip(&self.pool_argmax[i]) {
                        dx[src] += g;
                    }
                }
                Layer::Dense { inputs, units } => {
                    let slot = arch.param_slot(i).unwrap();
                    let w = &tensors[slot].values;
                    let (gw, gb) = grad_pair(grads, slot);
                    for u in 0..units {
                        let g = dy[u];
                        gb[u] += g;
                        if g == T::zero() {
                            continue;
                        }
                        let grow = &mut gw[u * inputs..(u + 1) * inputs];
                        for (gv, &xv) in grow.iter_mut().zip(input.iter()) {
                            *gv += g * xv;
                        }
                        if need_input_grad {
                            let wrow = &w[u * inputs..(u + 1) * inputs];
                            for (d, &wv) in dx.iter_mut().zip(wrow) {
                                *d += g * wv;
                            }
                        }
                    }
                }
                Layer::Relu { .. } => {
                    for ((d, &g), &v) in dx.iter_mut().zip(dy.iter()).zip(input.iter()) {
                        if v > T::zero() {
                            *d = g;
                        }
                    }
                }
                Layer::Softmax { .. } => unreachable!("softmax is only the final layer"),
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

fn grad_pair<T: Scalar>(grads: &mut WeightSet<T>, slot: usize) -> (&mut [T], &mut [T]) {
    let (a, b) = grads.tensors_mut()[slot..].split_at_mut(1);
    (&mut a[0].values, &mut b[0].values)
}
