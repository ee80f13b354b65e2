//! Permutation-invariant point-set encoder: shared per-point MLP, max-pool
//! over points, then a head MLP on the pooled vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::dense::{DenseNet, ForwardCache};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SetEncoder {
    pub point_mlp: DenseNet,
    pub head: DenseNet,
}

/// Caches for a full set-encoder pass, reusable across samples.
#[derive(Clone, Debug, Default)]
pub struct SetEncoderCache {
    pub point_caches: Vec<ForwardCache>,
    pub pooled: Vec<f64>,
    /// For each pooled dimension, the index of the point that won the max.
    pub argmax: Vec<usize>,
    pub head_cache: ForwardCache,
}

impl SetEncoder {
    pub fn new(point_mlp: DenseNet, head: DenseNet) -> Self {
        assert_eq!(point_mlp.output_dim(), head.input_dim());
        SetEncoder { point_mlp, head }
    }

    pub fn init_params(&mut self, seed: u64) {
        self.point_mlp.init_params(seed);
        self.head.init_params(seed.wrapping_add(1));
    }

    pub fn param_count(&self) -> usize {
        self.point_mlp.param_count() + self.head.param_count()
    }

    /// Flat parameter vector: point MLP params followed by head params.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = self.point_mlp.params.clone();
        out.extend_from_slice(&self.head.params);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let np = self.point_mlp.param_count();
        if flat.len() != np + self.head.param_count() {
            return Err(Error::Format(format!(
                "set encoder expects {} params, got {}",
                np + self.head.param_count(),
                flat.len()
            )));
        }
        self.point_mlp.params.copy_from_slice(&flat[..np]);
        self.head.params.copy_from_slice(&flat[np..]);
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn encode(&self, points: &[[f64; 2]]) -> Result<Vec<f64>> {
        let mut cache = SetEncoderCache::default();
        self.encode_cached(points, &mut cache)?;
        Ok(cache.head_cache.acts.last().unwrap().clone())
    }

    pub fn encode_cached(&self, points: &[[f64; 2]], cache: &mut SetEncoderCache) -> Result<()> {
        if points.is_empty() {
            return Err(Error::invalid("set encoder requires at least one point"));
        }
        let feat_dim = self.point_mlp.output_dim();
        cache
            .point_caches
            .resize(points.len(), ForwardCache::default());
        cache.pooled.clear();
        cache.pooled.resize(feat_dim, f64::NEG_INFINITY);
        cache.argmax.clear();
        cache.argmax.resize(feat_dim, 0);
        for (i, p) in points.iter().enumerate() {
            self.point_mlp
                .forward_cached(&p[..], &mut cache.point_caches[i])?;
            let feat = cache.point_caches[i].acts.last().unwrap();
            for (d, f) in feat.iter().enumerate() {
                // Strict > keeps the first maximizer, so ties break
                // deterministically by point order.
                if *f > cache.pooled[d] {
                    cache.pooled[d] = *f;
                    cache.argmax[d] = i;
                }
            }
        }
        self.head
            .forward_cached(&cache.pooled, &mut cache.head_cache)
    }

    /// Backward through head, max-pool routing, and the per-point MLP.
    /// Gradients accumulate into flat buffers matching `params_flat` layout.
    pub fn backward_cached(
        &self,
        cache: &SetEncoderCache,
        upstream: &[f64],
        point_grad: &mut [f64],
        head_grad: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        let mut pooled_grad = Vec::new();
        self.head.backward_cached(
            &cache.head_cache,
            upstream,
            head_grad,
            &mut pooled_grad,
            scratch,
        );
        // Route each pooled dimension's gradient to its winning point.
        let feat_dim = pooled_grad.len();
        let mut per_point: Vec<Vec<f64>> = Vec::new();
        per_point.resize(cache.point_caches.len(), Vec::new());
        for d in 0..feat_dim {
            let g = pooled_grad[d];
            if g == 0.0 {
                continue;
            }
            let winner = cache.argmax[d];
            if per_point[winner].is_empty() {
                per_point[winner].resize(feat_dim, 0.0);
            }
            per_point[winner][d] += g;
        }
        let mut input_grad = Vec::new();
        for (i, up) in per_point.iter().enumerate() {
            if up.is_empty() {
                continue;
            }
            self.point_mlp.backward_cached(
                &cache.point_caches[i],
                up,
                point_grad,
                &mut input_grad,
                scratch,
            );
        }
    }
}

/// Spec-level operation: permutation-invariant embedding of a 2D point set.
pub fn set_encode(enc: &SetEncoder, points: &[[f64; 2]]) -> Result<Vec<f64>> {
    enc.encode(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dense::gradcheck::{finite_diff, max_rel_err};
    use crate::nn::dense::Activation;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn small_encoder(seed: u64) -> SetEncoder {
        let mut enc = SetEncoder::new(
            DenseNet::mlp(2, &[8], 6, Activation::Relu),
            DenseNet::mlp(6, &[5], 4, Activation::Relu),
        );
        enc.init_params(seed);
        enc
    }

    #[test]
    fn empty_set_rejected() {
        let enc = small_encoder(0);
        assert!(set_encode(&enc, &[]).is_err());
    }

    #[test]
    fn single_point_is_head_of_point_mlp() {
        let enc = small_encoder(1);
        let p = [[0.3, -0.7]];
        let direct = enc
            .head
            .forward(&enc.point_mlp.forward(&p[0]).unwrap())
            .unwrap();
        assert_eq!(set_encode(&enc, &p).unwrap(), direct);
    }

    #[test]
    fn duplicated_points_do_not_change_output() {
        let enc = small_encoder(2);
        let pts = vec![[0.1, 0.2], [-0.5, 0.9], [0.4, -0.4]];
        let mut doubled = pts.clone();
        doubled.extend_from_slice(&pts);
        assert_eq!(
            set_encode(&enc, &pts).unwrap(),
            set_encode(&enc, &doubled).unwrap()
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let enc = small_encoder(3);
        let mut rng = rng_from(17);
        let pts: Vec<[f64; 2]> = (0..7)
            .map(|_| {
                [
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                ]
            })
            .collect();
        let weights: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();

        let mut cache = SetEncoderCache::default();
        enc.encode_cached(&pts, &mut cache).unwrap();
        let mut pg = vec![0.0; enc.point_mlp.param_count()];
        let mut hg = vec![0.0; enc.head.param_count()];
        let mut scratch = Vec::new();
        enc.backward_cached(&cache, &weights, &mut pg, &mut hg, &mut scratch);
        let mut analytic = pg;
        analytic.extend_from_slice(&hg);

        let mut flat = enc.params_flat();
        let numeric = finite_diff(
            &mut flat,
            |p| {
                let mut e2 = enc.clone();
                e2.set_params_flat(p).unwrap();
                let out = e2.encode(&pts).unwrap();
                out.iter().zip(weights.iter()).map(|(o, w)| o * w).sum()
            },
            1e-5,
        );
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "rel err {err}");
    }

    proptest! {
        #[test]
        fn output_invariant_under_permutation(seed in 0u64..50, shuffle_seed in 0u64..50) {
            let enc = small_encoder(seed);
            let mut rng = rng_from(seed ^ 0xabcd);
            let pts: Vec<[f64; 2]> = (0..10)
                .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
                .collect();
            let base = enc.encode(&pts).unwrap();
            let mut shuffled = pts.clone();
            let mut srng = rng_from(shuffle_seed);
            shuffled.shuffle(&mut srng);
            prop_assert_eq!(base, enc.encode(&shuffled).unwrap());
        }
    }
}
