//! Fully connected networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>` per net: for each layer, the
//! weight matrix (out x in, row-major) followed by the bias vector. The
//! layout is fixed so checkpoints restore bit-identically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a = f(z)`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseNet {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

/// Scratch space for one forward pass, reused across samples to avoid
/// per-sample allocation in training loops.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l]` the output of layer l.
    pub acts: Vec<Vec<f64>>,
}

impl DenseNet {
    /// Creates a net with zeroed parameters. `layer_sizes` includes the input
    /// dimension; `activations` has one entry per weight layer.
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Self {
        assert!(
            layer_sizes.len() >= 2,
            "need at least input and output sizes"
        );
        assert_eq!(activations.len(), layer_sizes.len() - 1);
        let params = vec![0.0; Self::param_count_for(&layer_sizes)];
        DenseNet {
            layer_sizes,
            activations,
            params,
        }
    }

    /// Convenience constructor: hidden layers with one activation, identity
    /// output layer.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, hidden_act: Activation) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(Activation::Identity);
        Self::new(sizes, acts)
    }

    pub fn param_count_for(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = rng::rng_from(seed);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            for p in &mut self.params[offset..offset + n_in * n_out] {
                *p = rng::uniform(&mut rng, -bound, bound);
            }
            offset += n_in * n_out;
            for p in &mut self.params[offset..offset + n_out] {
                *p = 0.0;
            }
            offset += n_out;
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        Ok(cache.acts.last().unwrap().clone())
    }

    /// Forward pass recording every layer output into `cache`.
    pub fn forward_cached(&self, input: &[f64], cache: &mut ForwardCache) -> Result<()> {
        if input.len() != self.layer_sizes[0] {
            return Err(Error::invalid(format!(
                "input length {} != expected {}",
                input.len(),
                self.layer_sizes[0]
            )));
        }
        let n_layers = self.layer_sizes.len() - 1;
        cache.acts.resize(n_layers + 1, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);

        let mut offset = 0;
        for l in 0..n_layers {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            let (w, rest) = self.params[offset..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (prev, out) = split_two(&mut cache.acts, l, l + 1);
            out.clear();
            out.reserve(n_out);
            let act = self.activations[l];
            for j in 0..n_out {
                let z = b[j] + dot(&w[j * n_in..(j + 1) * n_in], prev);
                out.push(act.apply(z));
            }
            offset += n_in * n_out + n_out;
        }
        Ok(())
    }

    /// Reverse pass. `upstream` is dL/d(output); parameter gradients are
    /// accumulated into `param_grad` (same layout as `params`) and the
    /// gradient with respect to the input is written into `input_grad`.
    ///
    /// `cache` must come from `forward_cached` on the same input. The two
    /// buffers are reused storage for the per-layer deltas; no allocation
    /// happens after they warm up.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        param_grad: &mut [f64],
        input_grad: &mut Vec<f64>,
        scratch: &mut Vec<f64>,
    ) {
        debug_assert_eq!(param_grad.len(), self.params.len());
        let n_layers = self.layer_sizes.len() - 1;
        debug_assert_eq!(upstream.len(), self.layer_sizes[n_layers]);
        const MAX_LAYERS: usize = 16;
        assert!(n_layers <= MAX_LAYERS, "dense net too deep");
        let mut offsets = [0usize; MAX_LAYERS];
        let mut off = 0;
        for l in 0..n_layers {
            offsets[l] = off;
            off += self.layer_sizes[l] * self.layer_sizes[l + 1] + self.layer_sizes[l + 1];
        }

        // Delta for the current layer output, ping-ponging between the two
        // buffers as we walk back.
        scratch.clear();
        scratch.extend_from_slice(upstream);

        for l in (0..n_layers).rev() {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            let offset = offsets[l];
            let w = &self.params[offset..offset + n_in * n_out];
            let act = self.activations[l];
            let out = &cache.acts[l + 1];
            let prev = &cache.acts[l];

            // dz = upstream * f'(z), via the stored outputs.
            for (d, a) in scratch.iter_mut().zip(out.iter()) {
                *d *= act.derivative_from_output(*a);
            }

            let (wg, bg) =
                param_grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            input_grad.clear();
            input_grad.resize(n_in, 0.0);
            for j in 0..n_out {
                let dz = scratch[j];
                if dz == 0.0 {
                    continue;
                }
                bg[j] += dz;
                let wrow = &w[j * n_in..(j + 1) * n_in];
                let grow = &mut wg[j * n_in..(j + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += dz * prev[i];
                }
                for i in 0..n_in {
                    input_grad[i] += dz * wrow[i];
                }
            }
            std::mem::swap(scratch, input_grad);
        }
        std::mem::swap(scratch, input_grad);
    }

    /// One-shot forward + backward, returning `(param_grad, input_grad)`.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::invalid("upstream gradient length != output dim"));
        }
        let mut param_grad = vec![0.0; self.params.len()];
        let mut input_grad = Vec::new();
        let mut scratch = Vec::new();
        self.backward_cached(
            &cache,
            upstream,
            &mut param_grad,
            &mut input_grad,
            &mut scratch,
        );
        Ok((param_grad, input_grad))
    }
}

/// Borrows two distinct elements of a Vec mutably/immutably.
fn split_two(v: &mut [Vec<f64>], a: usize, b: usize) -> (&Vec<f64>, &mut Vec<f64>) {
    debug_assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&lo[a], &mut hi[0])
}

/// Layer activations for a whole sample batch: `acts[l]` holds the batch
/// row-major as `[batch * layer_sizes[l]]`.
#[derive(Clone, Debug, Default)]
pub struct BatchCache {
    pub acts: Vec<Vec<f64>>,
}

impl BatchCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

impl DenseNet {
    /// Forward pass over `batch` samples at once (inputs row-major,
    /// `batch * input_dim`). Weight rows stream once per layer instead of
    /// once per sample, which is what makes large-batch training fast.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize, cache: &mut BatchCache) {
        let n_layers = self.layer_sizes.len() - 1;
        debug_assert_eq!(inputs.len(), batch * self.layer_sizes[0]);
        cache.acts.resize(n_layers + 1, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(inputs);
        let mut offset = 0;
        for l in 0..n_layers {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            let (w, rest) = self.params[offset..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let act = self.activations[l];
            let (prev, out) = split_two(&mut cache.acts, l, l + 1);
            out.clear();
            out.resize(batch * n_out, 0.0);
            // Blocks of four samples share each weight-row pass; the four
            // independent accumulator chains hide FMA latency.
            let blocks = batch / 4;
            for j in 0..n_out {
                let wrow = &w[j * n_in..(j + 1) * n_in];
                let bias = b[j];
                for blk in 0..blocks {
                    let s = blk * 4;
                    let x0 = &prev[s * n_in..(s + 1) * n_in];
                    let x1 = &prev[(s + 1) * n_in..(s + 2) * n_in];
                    let x2 = &prev[(s + 2) * n_in..(s + 3) * n_in];
                    let x3 = &prev[(s + 3) * n_in..(s + 4) * n_in];
                    let (mut d0, mut d1, mut d2, mut d3) = (0.0, 0.0, 0.0, 0.0);
                    for i in 0..n_in {
                        let wv = wrow[i];
                        d0 += wv * x0[i];
                        d1 += wv * x1[i];
                        d2 += wv * x2[i];
                        d3 += wv * x3[i];
                    }
                    out[s * n_out + j] = act.apply(bias + d0);
                    out[(s + 1) * n_out + j] = act.apply(bias + d1);
                    out[(s + 2) * n_out + j] = act.apply(bias + d2);
                    out[(s + 3) * n_out + j] = act.apply(bias + d3);
                }
                for s in blocks * 4..batch {
                    let x = &prev[s * n_in..(s + 1) * n_in];
                    out[s * n_out + j] = act.apply(bias + dot(wrow, x));
                }
            }
            offset += n_in * n_out + n_out;
        }
    }

    /// Reverse pass over the batch; `upstream` is row-major
    /// `[batch * output_dim]`. Parameter gradients accumulate into
    /// `param_grad`; `input_grad` receives the per-sample input gradients.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        batch: usize,
        upstream: &[f64],
        param_grad: &mut [f64],
        input_grad: &mut Vec<f64>,
        scratch: &mut Vec<f64>,
    ) {
        let n_layers = self.layer_sizes.len() - 1;
        debug_assert_eq!(upstream.len(), batch * self.layer_sizes[n_layers]);
        const MAX_LAYERS: usize = 16;
        assert!(n_layers <= MAX_LAYERS, "dense net too deep");
        let mut offsets = [0usize; MAX_LAYERS];
        let mut off = 0;
        for l in 0..n_layers {
            offsets[l] = off;
            off += self.layer_sizes[l] * self.layer_sizes[l + 1] + self.layer_sizes[l + 1];
        }

        scratch.clear();
        scratch.extend_from_slice(upstream);
        for l in (0..n_layers).rev() {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            let offset = offsets[l];
            let w = &self.params[offset..offset + n_in * n_out];
            let act = self.activations[l];
            let out = &cache.acts[l + 1];
            let prev = &cache.acts[l];

            for (d, a) in scratch.iter_mut().zip(out.iter()) {
                *d *= act.derivative_from_output(*a);
            }

            let (wg, bg) =
                param_grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            input_grad.clear();
            input_grad.resize(batch * n_in, 0.0);
            for j in 0..n_out {
                let wrow = &w[j * n_in..(j + 1) * n_in];
                let grow = &mut wg[j * n_in..(j + 1) * n_in];
                for s in 0..batch {
                    let dz = scratch[s * n_out + j];
                    if dz == 0.0 {
                        continue;
                    }
                    bg[j] += dz;
                    let x = &prev[s * n_in..(s + 1) * n_in];
                    for i in 0..n_in {
                        grow[i] += dz * x[i];
                    }
                    let dprev = &mut input_grad[s * n_in..(s + 1) * n_in];
                    for i in 0..n_in {
                        dprev[i] += dz * wrow[i];
                    }
                }
            }
            std::mem::swap(scratch, input_grad);
        }
        std::mem::swap(scratch, input_grad);
    }
}

/// Dot product with four independent accumulators. The fixed reassociation
/// both vectorizes and keeps results bitwise reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = k * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

#[cfg(test)]
pub(crate) mod gradcheck {
    /// Central-difference gradient of `f` with respect to `params`.
    pub fn finite_diff(params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64, h: f64) -> Vec<f64> {
        let mut grad = vec![0.0; params.len()];
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let plus = f(params);
            params[i] = orig - h;
            let minus = f(params);
            params[i] = orig;
            grad[i] = (plus - minus) / (2.0 * h);
        }
        grad
    }

    /// Worst relative error with an absolute floor, so components whose true
    /// gradient is at numerical-noise scale do not dominate.
    pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric.iter())
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
            .fold(0.0, f64::max)
    }
}
