//! Geometry autoencoder: set encoder to a 32-dim latent, dense decoder back
//! to a fixed-size point cloud, trained on the Chamfer distance.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::chamfer::chamfer_grad_q;
use crate::features::{geometry_decoder_arch, geometry_encoder_arch, FeatureConfig};
use crate::nn::dense::{DenseNet, ForwardCache};
use crate::nn::set_encoder::{SetEncoder, SetEncoderCache};
use crate::nn::AdamState;
use crate::parallel;
use crate::rng;

const GRAD_CHUNK: usize = 8;

struct GeomPartial {
    loss: f64,
    enc_point_grad: Vec<f64>,
    enc_head_grad: Vec<f64>,
    dec_grad: Vec<f64>,
}

/// Trains the geometry autoencoder on a set of point clouds. Each step draws
/// a batch of clouds with replacement and minimizes the symmetric Chamfer
/// distance to the reconstruction. Returns the encoder, decoder, and the
/// per-step loss curve.
pub fn train_geometry_ae(
    clouds: &[Vec<[f64; 2]>],
    cfg: &FeatureConfig,
    seed: u64,
) -> Result<(SetEncoder, DenseNet, Vec<f64>)> {
    if clouds.len() < 2 {
        return Err(Error::invalid(
            "geometry autoencoder needs at least 2 clouds",
        ));
    }
    let mut enc = geometry_encoder_arch(cfg);
    enc.init_params(rng::mix_seed(seed, 1));
    let mut dec = geometry_decoder_arch(cfg);
    dec.init_params(rng::mix_seed(seed, 2));

    let mut opt_point = AdamState::new(enc.point_mlp.param_count(), cfg.geom_lr);
    let mut opt_head = AdamState::new(enc.head.param_count(), cfg.geom_lr);
    let mut opt_dec = AdamState::new(dec.param_count(), cfg.geom_lr);

    let mut batch_rng = rng::rng_from(rng::mix_seed(seed, 3));
    let mut curve = Vec::with_capacity(cfg.geom_steps);

    for step in 0..cfg.geom_steps {
        let batch: Vec<usize> = (0..cfg.geom_batch)
            .map(|_| batch_rng.random_range(0..clouds.len()))
            .collect();
        let partials = parallel::map_chunks(batch.len(), GRAD_CHUNK, |range| {
            let mut partial = GeomPartial {
                loss: 0.0,
                enc_point_grad: vec![0.0; enc.point_mlp.param_count()],
                enc_head_grad: vec![0.0; enc.head.param_count()],
                dec_grad: vec![0.0; dec.param_count()],
            };
            let mut enc_cache = SetEncoderCache::default();
            let mut dec_cache = ForwardCache::default();
            let mut scratch = Vec::new();
            for i in range {
                let cloud = &clouds[batch[i]];
                enc.encode_cached(cloud, &mut enc_cache).unwrap();
                let latent = enc_cache.head_cache.acts.last().unwrap().clone();
                dec.forward_cached(&latent, &mut dec_cache).unwrap();
                let flat = dec_cache.acts.last().unwrap();
                let recon: Vec<[f64; 2]> = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
                let mut grad_pts = vec![[0.0, 0.0]; recon.len()];
                let loss = chamfer_grad_q(cloud, &recon, &mut grad_pts).unwrap();
                partial.loss += loss;
                let upstream: Vec<f64> = grad_pts.iter().flat_map(|g| [g[0], g[1]]).collect();
                let mut latent_grad = Vec::new();
                dec.backward_cached(
                    &dec_cache,
                    &upstream,
                    &mut partial.dec_grad,
                    &mut latent_grad,
                    &mut scratch,
                );
                enc.backward_cached(
                    &enc_cache,
                    &latent_grad,
                    &mut partial.enc_point_grad,
                    &mut partial.enc_head_grad,
                    &mut scratch,
                );
            }
            partial
        });

        let mut point_grad = vec![0.0; enc.point_mlp.param_count()];
        let mut head_grad = vec![0.0; enc.head.param_count()];
        let mut dec_grad = vec![0.0; dec.param_count()];
        let mut loss_sum = 0.0;
        for p in &partials {
            loss_sum += p.loss;
            parallel::fold_grads(&mut point_grad, std::slice::from_ref(&p.enc_point_grad));
            parallel::fold_grads(&mut head_grad, std::slice::from_ref(&p.enc_head_grad));
            parallel::fold_grads(&mut dec_grad, std::slice::from_ref(&p.dec_grad));
        }
        let inv = 1.0 / cfg.geom_batch as f64;
        point_grad.iter_mut().for_each(|g| *g *= inv);
        head_grad.iter_mut().for_each(|g| *g *= inv);
        dec_grad.iter_mut().for_each(|g| *g *= inv);
        let mean_loss = loss_sum * inv;
        if !mean_loss.is_finite() {
            return Err(Error::Training(format!(
                "geometry AE loss became {mean_loss} at step {step}"
            )));
        }
        opt_point.step(&mut enc.point_mlp.params, &point_grad)?;
        opt_head.step(&mut enc.head.params, &head_grad)?;
        opt_dec.step(&mut dec.params, &dec_grad)?;
        curve.push(mean_loss);
    }
    Ok((enc, dec, curve))
}
