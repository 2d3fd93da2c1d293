//! Toy latent codec and the conditional denoising network.

pub mod checkpoint;
pub mod codec;
pub(crate) mod network;
pub mod params;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta, DEFAULT_LATENT_SCALE};
pub use codec::ToyCodec;
pub use network::DenoiseMode;
pub use params::{NetworkConfig, ParamGroup, ParamStore, Trainable};

use crate::conditioning::{block_id, GuidanceSignals, MemoryBank};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use network::CondVars;
use params::{Binder, COMPOSITE_CHANNELS, LATENT_CHANNELS, LEVELS};

/// Network configuration plus its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    config: NetworkConfig,
    params: ParamStore,
}

impl Model {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        let params = ParamStore::init(&config)?;
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking them against a fresh init.
    pub fn from_parts(config: NetworkConfig, params: ParamStore) -> Result<Self> {
        ParamStore::init(&config)?.check_compatible(&params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

pub const DEFAULT_FRAME_RATE: f64 = 8.0;

/// `[F, 4, h, w]` latent frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVideo {
    data: Tensor,
    pub frame_rate: f64,
}

impl LatentVideo {
    pub fn new(data: Tensor, frame_rate: f64) -> Result<Self> {
        let (_, c, _, _) = data.dims4()?;
        if c != LATENT_CHANNELS {
            return Err(Error::invalid(format!("latent video needs 4 channels, got {c}")));
        }
        if !data.all_finite() {
            return Err(Error::invalid("latent video has non-finite entries"));
        }
        Ok(Self { data, frame_rate })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn frames(&self) -> usize {
        self.data.dim(0)
    }
}

/// `[F, 12, h, w]`: channels 0..4 the noisy latent, 4..8 the background
/// latent, 8..12 the foreground-mask latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeInput {
    data: Tensor,
}

impl CompositeInput {
    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.data.dim(0)
    }

    /// The noisy latent, channels 0..4.
    pub fn z_t(&self) -> Tensor {
        self.data.narrow(1, 0, LATENT_CHANNELS).expect("composite layout")
    }
}

pub fn assemble_input(z_t: &Tensor, z_bg: &Tensor, z_fg: &Tensor) -> Result<CompositeInput> {
    let (_, c, _, _) = z_t.dims4()?;
    if c != LATENT_CHANNELS {
        return Err(Error::ShapeMismatch {
            expected: vec![z_t.dim(0), LATENT_CHANNELS, z_t.dim(2), z_t.dim(3)],
            actual: z_t.shape().to_vec(),
        });
    }
    z_bg.ensure_same_shape(z_t)?;
    z_fg.ensure_same_shape(z_t)?;
    Ok(CompositeInput {
        data: Tensor::concat(&[z_t, z_bg, z_fg], 1)?,
    })
}

/// Binds every block of `bank` as `[1, tokens, width]` constants.
pub(crate) fn bank_vars(g: &mut Graph, cfg: &NetworkConfig, bank: &MemoryBank) -> Result<Vec<(Var, Var)>> {
    (0..LEVELS)
        .map(|l| {
            let e = bank.get(&block_id(l))?;
            let (n, d) = (e.keys.dim(0), e.keys.dim(1));
            if d != cfg.width(l) {
                return Err(Error::ShapeMismatch {
                    expected: vec![n, cfg.width(l)],
                    actual: e.keys.shape().to_vec(),
                });
            }
            let k = g.constant(e.keys.clone().reshape(&[1, n, d])?);
            let v = g.constant(e.values.clone().reshape(&[1, n, d])?);
            Ok((k, v))
        })
        .collect()
}

pub(crate) fn check_frames(cfg: &NetworkConfig, frames: usize, mode: DenoiseMode) -> Result<()> {
    if frames == 0 {
        return Err(Error::invalid("zero frames"));
    }
    if frames > cfg.max_frames {
        return Err(Error::TooManyFrames {
            frames,
            max: cfg.max_frames,
        });
    }
    if mode == DenoiseMode::TwoD && frames != 1 {
        return Err(Error::invalid(format!("2D mode takes one frame, got {frames}")));
    }
    Ok(())
}

/// Predicts `v` for a composite input at timestep `t`.
pub fn denoise(
    model: &Model,
    input: &CompositeInput,
    bank: &MemoryBank,
    c_proj: &Tensor,
    signals: &GuidanceSignals,
    t: usize,
    mode: DenoiseMode,
) -> Result<LatentVideo> {
    let cfg = model.config();
    let (f, c, h, w) = input.data.dims4()?;
    debug_assert_eq!(c, COMPOSITE_CHANNELS);
    check_frames(cfg, f, mode)?;
    crate::conditioning::check_latent_extent(h, w)?;
    c_proj.ensure_shape(&[cfg.context_dim])?;
    signals.p_body.ensure_shape(&[f, cfg.base_width, h, w])?;
    signals.p_normal.ensure_shape(&[f, 1, cfg.normal_dim])?;

    let mut g = Graph::new();
    let bank = bank_vars(&mut g, cfg, bank)?;
    let mut b = Binder::new(model.params(), Trainable::None);
    let cond = CondVars {
        bank: &bank,
        c_proj: g.constant(c_proj.clone().reshape(&[1, 1, cfg.context_dim])?),
        p_body: g.constant(signals.p_body.clone()),
        p_normal: g.constant(signals.p_normal.clone().reshape(&[f, cfg.normal_dim])?),
    };
    let x = g.constant(input.data.clone());
    let out = network::unet_graph(&mut g, &mut b, model, x, &cond, t, mode);
    LatentVideo::new(g.value(out).clone(), DEFAULT_FRAME_RATE)
}
