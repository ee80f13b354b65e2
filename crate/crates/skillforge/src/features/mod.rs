//! Task feature learning: a geometry autoencoder on boundary point clouds,
//! a dynamics context encoder trained by next-state prediction, and an
//! expert-action autoencoder, plus assembly of the per-task feature vector.

pub mod chamfer;
pub mod geometry_ae;
pub mod segment;
pub mod trainers;

pub use chamfer::chamfer;
pub use geometry_ae::train_geometry_ae;
pub use segment::{
    sample_segment, segment_at, window_count, Segment, SegmentSample, StateNormalizer, SEGMENT_LEN,
};
pub use trainers::{train_action_ae, train_dynamics, SegmentDataset};

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::disassembly::gen_disassembly;
use crate::env::{sample_point_cloud, CloudPart};
use crate::error::{Error, Result};
use crate::mdp::Trajectory;
use crate::nn::dense::{Activation, DenseNet};
use crate::nn::set_encoder::SetEncoder;
use crate::nn::{checkpoint, SetEncoderCache};
use crate::rng;
use crate::task::TaskSpec;

/// Dimension of the full task feature: three geometry embeddings plus the
/// dynamics and action embeddings, 32 each.
pub const TASK_FEATURE_DIM: usize = 160;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Transition segment length h.
    pub segment_len: usize,
    /// Points per sampled boundary cloud.
    pub cloud_points: usize,
    /// Output dimension of each encoder.
    pub embed_dim: usize,
    /// Points emitted by the geometry decoder.
    pub decoder_points: usize,
    pub geom_steps: usize,
    pub geom_batch: usize,
    pub geom_lr: f64,
    pub seg_steps: usize,
    pub seg_batch: usize,
    pub seg_lr: f64,
    /// Cap on segment windows drawn per task when building the training set.
    pub windows_per_task: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            segment_len: SEGMENT_LEN,
            cloud_points: 256,
            embed_dim: 32,
            decoder_points: 256,
            geom_steps: 2000,
            geom_batch: 64,
            geom_lr: 1e-3,
            seg_steps: 2000,
            seg_batch: 128,
            seg_lr: 1e-3,
            windows_per_task: 600,
        }
    }
}

impl FeatureConfig {
    pub fn segment_input_dim(&self) -> usize {
        self.segment_len * (crate::env::ENV_STATE_DIM + crate::env::ENV_ACTION_DIM)
    }
}

/// The 160-dim task feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFeature(pub Vec<f64>);

/// All trained encoders and decoders plus the state normalizer.
#[derive(Clone, Debug)]
pub struct FeatureEncoders {
    pub geom: SetEncoder,
    pub geom_dec: DenseNet,
    pub dynamics: DenseNet,
    pub dynamics_dec: DenseNet,
    pub action: DenseNet,
    pub action_dec: DenseNet,
    pub normalizer: StateNormalizer,
    pub cfg: FeatureConfig,
}

/// Network shapes for a given config; used by construction and loading.
pub fn geometry_encoder_arch(cfg: &FeatureConfig) -> SetEncoder {
    SetEncoder::new(
        DenseNet::mlp(2, &[64], 64, Activation::Relu),
        DenseNet::mlp(64, &[64], cfg.embed_dim, Activation::Relu),
    )
}

pub fn geometry_decoder_arch(cfg: &FeatureConfig) -> DenseNet {
    DenseNet::mlp(
        cfg.embed_dim,
        &[128, 256],
        cfg.decoder_points * 2,
        Activation::Relu,
    )
}

pub fn dynamics_encoder_arch(cfg: &FeatureConfig) -> DenseNet {
    DenseNet::mlp(
        cfg.segment_input_dim(),
        &[256, 128, 64],
        cfg.embed_dim,
        Activation::Relu,
    )
}

pub fn dynamics_decoder_arch(cfg: &FeatureConfig) -> DenseNet {
    let input = cfg.embed_dim + crate::env::ENV_STATE_DIM + crate::env::ENV_ACTION_DIM;
    DenseNet::mlp(
        input,
        &[200, 200, 200, 200],
        crate::env::ENV_STATE_DIM,
        Activation::Relu,
    )
}

pub fn action_encoder_arch(cfg: &FeatureConfig) -> DenseNet {
    DenseNet::mlp(
        cfg.segment_input_dim(),
        &[256, 128, 64],
        cfg.embed_dim,
        Activation::Relu,
    )
}

pub fn action_decoder_arch(cfg: &FeatureConfig) -> DenseNet {
    let out = cfg.segment_len * crate::env::ENV_ACTION_DIM;
    DenseNet::mlp(cfg.embed_dim, &[200, 200, 200, 200], out, Activation::Relu)
}

impl FeatureEncoders {
    /// Feature checkpoint net names, in file order.
    pub const NET_NAMES: [&'static str; 6] = ["E_G", "D_G", "E_D", "D_D", "E_A", "D_A"];

    pub fn save(&self, ckpt_path: &Path, sidecar_path: &Path) -> Result<()> {
        let eg = self.geom.params_flat();
        checkpoint::save_checkpoint(
            ckpt_path,
            &[
                ("E_G", &eg),
                ("D_G", &self.geom_dec.params),
                ("E_D", &self.dynamics.params),
                ("D_D", &self.dynamics_dec.params),
                ("E_A", &self.action.params),
                ("D_A", &self.action_dec.params),
            ],
        )?;
        let sidecar = serde_json::json!({
            "normalizer": self.normalizer,
            "config": self.cfg,
        });
        std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(ckpt_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
        let normalizer: StateNormalizer = serde_json::from_value(sidecar["normalizer"].clone())?;
        let cfg: FeatureConfig = serde_json::from_value(sidecar["config"].clone())?;
        let nets = checkpoint::load_checkpoint(ckpt_path)?;
        let mut geom = geometry_encoder_arch(&cfg);
        geom.set_params_flat(checkpoint::find_net(&nets, "E_G")?)?;
        let mut out = FeatureEncoders {
            geom,
            geom_dec: geometry_decoder_arch(&cfg),
            dynamics: dynamics_encoder_arch(&cfg),
            dynamics_dec: dynamics_decoder_arch(&cfg),
            action: action_encoder_arch(&cfg),
            action_dec: action_decoder_arch(&cfg),
            normalizer,
            cfg,
        };
        for (name, net) in [
            ("D_G", &mut out.geom_dec),
            ("E_D", &mut out.dynamics),
            ("D_D", &mut out.dynamics_dec),
            ("E_A", &mut out.action),
            ("D_A", &mut out.action_dec),
        ] {
            let params = checkpoint::find_net(&nets, name)?;
            if params.len() != net.params.len() {
                return Err(Error::Format(format!(
                    "net {name} has {} params, expected {}",
                    params.len(),
                    net.params.len()
                )));
            }
            net.params.copy_from_slice(params);
        }
        Ok(out)
    }
}

/// One point cloud per part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskClouds {
    pub plug: Vec<[f64; 2]>,
    pub socket: Vec<[f64; 2]>,
    pub assembled: Vec<[f64; 2]>,
}

/// Everything needed to embed one task: the spec (for resampling clouds),
/// one stored cloud triple, and the disassembly trajectories.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub task: TaskSpec,
    pub clouds: TaskClouds,
    pub disassembly: Vec<Trajectory>,
}

impl TaskData {
    /// Generates clouds and disassembly paths for a task, deterministically
    /// in the seed.
    pub fn generate(
        task: &TaskSpec,
        n_paths: usize,
        cloud_points: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng::rng_from(seed);
        let clouds = TaskClouds {
            plug: sample_point_cloud(task, CloudPart::Plug, cloud_points, &mut rng)?,
            socket: sample_point_cloud(task, CloudPart::Socket, cloud_points, &mut rng)?,
            assembled: sample_point_cloud(task, CloudPart::Assembled, cloud_points, &mut rng)?,
        };
        let disassembly = gen_disassembly(task, n_paths, &mut rng)?;
        Ok(TaskData {
            task: task.clone(),
            clouds,
            disassembly,
        })
    }
}

/// One joint feature draw: a fresh cloud triple sampled from the task
/// geometry and a fresh segment from its disassembly trajectories, mapped
/// through the frozen encoders and concatenated into the 160-dim feature.
pub fn embed_task(
    task: &TaskSpec,
    disassembly: &[Trajectory],
    encoders: &FeatureEncoders,
    rng: &mut ChaCha8Rng,
) -> Result<TaskFeature> {
    if disassembly.is_empty() {
        return Err(Error::invalid(format!(
            "task {}: no disassembly trajectories",
            task.id
        )));
    }
    let cfg = &encoders.cfg;
    let mut z = Vec::with_capacity(TASK_FEATURE_DIM);
    let mut cache = SetEncoderCache::default();
    for part in [CloudPart::Plug, CloudPart::Socket, CloudPart::Assembled] {
        let cloud = sample_point_cloud(task, part, cfg.cloud_points, rng)?;
        encoders.geom.encode_cached(&cloud, &mut cache)?;
        z.extend_from_slice(cache.head_cache.acts.last().unwrap());
    }
    let traj = &disassembly[rng.random_range(0..disassembly.len())];
    let seg = sample_segment(traj, cfg.segment_len, rng)?;
    let flat = seg.flatten(&encoders.normalizer);
    z.extend(encoders.dynamics.forward(&flat)?);
    z.extend(encoders.action.forward(&flat)?);
    debug_assert_eq!(z.len(), TASK_FEATURE_DIM);
    Ok(TaskFeature(z))
}
