//! Variational autoencoder over state-action pairs, used by the behavior
//! retrieval baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::dense::{Activation, DenseNet, ForwardCache};
use crate::nn::AdamState;
use crate::parallel;
use crate::rng;

pub const VAE_LATENT_DIM: usize = 32;
const KL_WEIGHT: f64 = 1e-3;
const LOGVAR_CLAMP: f64 = 10.0;
const GRAD_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub latent_dim: usize,
    pub kl_weight: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            steps: 1500,
            batch: 128,
            lr: 1e-3,
            latent_dim: VAE_LATENT_DIM,
            kl_weight: KL_WEIGHT,
        }
    }
}

/// Encoder emits `[mu, logvar]`; decoder reconstructs the input from a
/// latent draw.
#[derive(Clone, Debug)]
pub struct BehaviorVae {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub latent_dim: usize,
}

impl BehaviorVae {
    pub fn new(input_dim: usize, cfg: &VaeConfig, seed: u64) -> Self {
        let mut encoder = DenseNet::mlp(
            input_dim,
            &[256, 128, 64],
            2 * cfg.latent_dim,
            Activation::Relu,
        );
        encoder.init_params(rng::mix_seed(seed, 1));
        let mut decoder =
            DenseNet::mlp(cfg.latent_dim, &[256, 128, 64], input_dim, Activation::Relu);
        decoder.init_params(rng::mix_seed(seed, 2));
        BehaviorVae {
            encoder,
            decoder,
            latent_dim: cfg.latent_dim,
        }
    }

    /// Posterior mean for an input, the embedding used at retrieval time.
    pub fn latent_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.encoder.forward(x)?;
        Ok(out[..self.latent_dim].to_vec())
    }

    pub fn reconstruct_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mu = self.latent_mean(x)?;
        self.decoder.forward(&mu)
    }
}

/// KL(q || N(0, I)) for a diagonal Gaussian posterior, summed over
/// dimensions; zero when mu = 0 and logvar = 0.
pub fn kl_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar.iter())
        .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum()
}

struct VaePartial {
    recon: f64,
    kl: f64,
    enc_grad: Vec<f64>,
    dec_grad: Vec<f64>,
}

/// Trains the VAE with the reparameterization trick: per-sample loss is the
/// mean squared reconstruction error plus `kl_weight` times the KL to the
/// standard normal prior. Returns the model and the per-step loss curve.
pub fn train_behavior_vae(
    pairs: &[Vec<f64>],
    cfg: &VaeConfig,
    seed: u64,
) -> Result<(BehaviorVae, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::invalid(
            "behavior VAE needs at least one state-action pair",
        ));
    }
    let input_dim = pairs[0].len();
    let mut vae = BehaviorVae::new(input_dim, cfg, seed);
    let latent = cfg.latent_dim;
    let mut opt_enc = AdamState::new(vae.encoder.param_count(), cfg.lr);
    let mut opt_dec = AdamState::new(vae.decoder.param_count(), cfg.lr);
    let mut batch_rng = rng::rng_from(rng::mix_seed(seed, 3));
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        // Pre-draw indices and latent noise so chunked work is deterministic.
        let batch: Vec<(usize, Vec<f64>)> = (0..cfg.batch)
            .map(|_| {
                let idx = batch_rng.random_range(0..pairs.len());
                let eps: Vec<f64> = (0..latent).map(|_| rng::normal(&mut batch_rng)).collect();
                (idx, eps)
            })
            .collect();

        let partials = parallel::map_chunks(batch.len(), GRAD_CHUNK, |range| {
            let mut partial = VaePartial {
                recon: 0.0,
                kl: 0.0,
                enc_grad: vec![0.0; vae.encoder.param_count()],
                dec_grad: vec![0.0; vae.decoder.param_count()],
            };
            let mut enc_cache = ForwardCache::default();
            let mut dec_cache = ForwardCache::default();
            let mut scratch = Vec::new();
            for bi in range {
                let (idx, eps) = &batch[bi];
                let x = &pairs[*idx];
                vae.encoder.forward_cached(x, &mut enc_cache).unwrap();
                let enc_out = enc_cache.acts.last().unwrap().clone();
                let (mu, logvar_raw) = enc_out.split_at(latent);
                let logvar: Vec<f64> = logvar_raw
                    .iter()
                    .map(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP))
                    .collect();
                let sigma: Vec<f64> = logvar.iter().map(|v| (0.5 * v).exp()).collect();
                let z: Vec<f64> = (0..latent).map(|d| mu[d] + sigma[d] * eps[d]).collect();
                vae.decoder.forward_cached(&z, &mut dec_cache).unwrap();
                let recon = dec_cache.acts.last().unwrap();

                let inv_dim = 1.0 / input_dim as f64;
                let mut upstream = vec![0.0; input_dim];
                for d in 0..input_dim {
                    let err = recon[d] - x[d];
                    partial.recon += inv_dim * err * err;
                    upstream[d] = 2.0 * inv_dim * err;
                }
                partial.kl += kl_standard_normal(mu, &logvar);

                let mut z_grad = Vec::new();
                vae.decoder.backward_cached(
                    &dec_cache,
                    &upstream,
                    &mut partial.dec_grad,
                    &mut z_grad,
                    &mut scratch,
                );
                // Chain into the encoder heads: dz/dmu = 1,
                // dz/dlogvar = eps * sigma / 2; KL adds its own terms.
                let mut enc_upstream = vec![0.0; 2 * latent];
                for d in 0..latent {
                    enc_upstream[d] = z_grad[d] + cfg.kl_weight * mu[d];
                    let clamped = logvar_raw[d].abs() <= LOGVAR_CLAMP;
                    if clamped {
                        enc_upstream[latent + d] = z_grad[d] * eps[d] * sigma[d] * 0.5
                            + cfg.kl_weight * 0.5 * (logvar[d].exp() - 1.0);
                    }
                }
                let mut x_grad = Vec::new();
                vae.encoder.backward_cached(
                    &enc_cache,
                    &enc_upstream,
                    &mut partial.enc_grad,
                    &mut x_grad,
                    &mut scratch,
                );
            }
            partial
        });

        let mut enc_grad = vec![0.0; vae.encoder.param_count()];
        let mut dec_grad = vec![0.0; vae.decoder.param_count()];
        let mut recon_sum = 0.0;
        let mut kl_sum = 0.0;
        for p in &partials {
            recon_sum += p.recon;
            kl_sum += p.kl;
            parallel::fold_grads(&mut enc_grad, std::slice::from_ref(&p.enc_grad));
            parallel::fold_grads(&mut dec_grad, std::slice::from_ref(&p.dec_grad));
        }
        let inv = 1.0 / cfg.batch as f64;
        enc_grad.iter_mut().for_each(|g| *g *= inv);
        dec_grad.iter_mut().for_each(|g| *g *= inv);
        let loss = (recon_sum + cfg.kl_weight * kl_sum) * inv;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "VAE loss became {loss} at step {step}"
            )));
        }
        opt_enc.step(&mut vae.encoder.params, &enc_grad)?;
        opt_dec.step(&mut vae.decoder.params, &dec_grad)?;
        curve.push(loss);
    }
    Ok((vae, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_of_standard_normal_posterior_is_zero() {
        assert_eq!(kl_standard_normal(&[0.0; 4], &[0.0; 4]), 0.0);
        assert!(kl_standard_normal(&[1.0, 0.0], &[0.0, 0.0]) > 0.0);
        assert!(kl_standard_normal(&[0.0], &[1.0]) > 0.0);
    }

    #[test]
    fn overfits_a_single_pair() {
        let pair = vec![0.3, -0.8, 0.1, 0.9, -0.2];
        let cfg = VaeConfig {
            steps: 2500,
            batch: 8,
            ..VaeConfig::default()
        };
        let (vae, curve) = train_behavior_vae(&[pair.clone()], &cfg, 1).unwrap();
        let recon = vae.reconstruct_mean(&pair).unwrap();
        let mse: f64 = recon
            .iter()
            .zip(pair.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / pair.len() as f64;
        assert!(mse < 1e-3, "mse {mse}");
        assert!(curve.last().unwrap() < curve.first().unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let pairs: Vec<Vec<f64>> = (0..10)
            .map(|i| (0..5).map(|d| (i * 5 + d) as f64 * 0.01).collect())
            .collect();
        let cfg = VaeConfig {
            steps: 15,
            batch: 8,
            ..VaeConfig::default()
        };
        let (a, ca) = train_behavior_vae(&pairs, &cfg, 5).unwrap();
        let (b, cb) = train_behavior_vae(&pairs, &cfg, 5).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.encoder.params, b.encoder.params);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(train_behavior_vae(&[], &VaeConfig::default(), 0).is_err());
    }

    #[test]
    fn vae_gradients_match_finite_differences() {
        use crate::nn::dense::gradcheck::{finite_diff, max_rel_err};
        // Single sample, fixed noise: check the encoder gradient chain.
        let pair = vec![0.2, -0.4, 0.6];
        let cfg = VaeConfig {
            latent_dim: 3,
            ..VaeConfig::default()
        };
        let vae = BehaviorVae::new(3, &cfg, 7);
        let eps = vec![0.3, -1.1, 0.7];

        let loss_fn = |enc_params: &[f64]| -> f64 {
            let mut v = vae.clone();
            v.encoder.params = enc_params.to_vec();
            let enc_out = v.encoder.forward(&pair).unwrap();
            let (mu, logvar) = enc_out.split_at(3);
            let sigma: Vec<f64> = logvar.iter().map(|l| (0.5 * l).exp()).collect();
            let z: Vec<f64> = (0..3).map(|d| mu[d] + sigma[d] * eps[d]).collect();
            let recon = v.decoder.forward(&z).unwrap();
            let recon_loss: f64 = recon
                .iter()
                .zip(pair.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / 3.0;
            recon_loss + cfg.kl_weight * kl_standard_normal(mu, logvar)
        };

        // Analytic gradient via the training path on a batch of one.
        let mut enc_cache = ForwardCache::default();
        let mut dec_cache = ForwardCache::default();
        let mut scratch = Vec::new();
        vae.encoder.forward_cached(&pair, &mut enc_cache).unwrap();
        let enc_out = enc_cache.acts.last().unwrap().clone();
        let (mu, logvar) = enc_out.split_at(3);
        let sigma: Vec<f64> = logvar.iter().map(|l| (0.5 * l).exp()).collect();
        let z: Vec<f64> = (0..3).map(|d| mu[d] + sigma[d] * eps[d]).collect();
        vae.decoder.forward_cached(&z, &mut dec_cache).unwrap();
        let recon = dec_cache.acts.last().unwrap().clone();
        let mut upstream = vec![0.0; 3];
        for d in 0..3 {
            upstream[d] = 2.0 / 3.0 * (recon[d] - pair[d]);
        }
        let mut dec_grad = vec![0.0; vae.decoder.param_count()];
        let mut z_grad = Vec::new();
        vae.decoder.backward_cached(
            &dec_cache,
            &upstream,
            &mut dec_grad,
            &mut z_grad,
            &mut scratch,
        );
        let mut enc_upstream = vec![0.0; 6];
        for d in 0..3 {
            enc_upstream[d] = z_grad[d] + cfg.kl_weight * mu[d];
            enc_upstream[3 + d] =
                z_grad[d] * eps[d] * sigma[d] * 0.5 + cfg.kl_weight * 0.5 * (logvar[d].exp() - 1.0);
        }
        let mut enc_grad = vec![0.0; vae.encoder.param_count()];
        let mut x_grad = Vec::new();
        vae.encoder.backward_cached(
            &enc_cache,
            &enc_upstream,
            &mut enc_grad,
            &mut x_grad,
            &mut scratch,
        );

        // Small probe step: a wider one can straddle a ReLU kink and blend
        // two different slopes.
        let mut probe = vae.encoder.params.clone();
        let numeric = finite_diff(&mut probe, loss_fn, 1e-7);
        let err = max_rel_err(&enc_grad, &numeric);
        assert!(err < 1e-4, "rel err {err}");
    }
}
