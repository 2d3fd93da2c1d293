//! Named parameter storage with a spatial/temporal partition.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Which training stage owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Denoiser body, reference network, guiders and projector (stage 1).
    Spatial,
    /// Motion modules (stage 2).
    Temporal,
}

/// Architecture hyper-parameters of the full generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Channel width of the first resolution level; doubles per level.
    pub base_width: usize,
    /// Width of the appearance context consumed by cross-attention.
    pub context_dim: usize,
    /// Width of the appearance embedding fed to the projector.
    pub clip_dim: usize,
    pub geglu_hidden: usize,
    /// Widths of the first two pose-guider convolutions (the third emits `base_width`).
    pub pose_widths: [usize; 2],
    pub normal_widths: [usize; 3],
    /// The normal backbone output is pooled to `normal_grid x normal_grid`.
    pub normal_grid: usize,
    pub normal_dim: usize,
    pub temporal_heads: usize,
    /// Temporal position-encoding table length.
    pub max_frames: usize,
    /// Resolution level of each motion module, in insertion order.
    pub motion_levels: Vec<usize>,
    /// Zero the output projection of every motion module at init.
    pub zero_init_temporal_out: bool,
    pub init_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_width: 32,
            context_dim: 64,
            clip_dim: 48,
            geglu_hidden: 128,
            pose_widths: [16, 32],
            normal_widths: [8, 16, 16],
            normal_grid: 4,
            normal_dim: 512,
            temporal_heads: 8,
            max_frames: 32,
            // insertion resolutions 1, 2, 4, 8; the last two share the
            // bottleneck of a three-level network
            motion_levels: vec![0, 1, 2, 2],
            zero_init_temporal_out: true,
            init_seed: 0,
        }
    }
}

pub const LEVELS: usize = 3;
pub const LATENT_CHANNELS: usize = 4;
pub const COMPOSITE_CHANNELS: usize = 12;
pub const CONTROL_CHANNELS: usize = 3;

impl NetworkConfig {
    /// A configuration small enough for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            base_width: 1,
            context_dim: 4,
            clip_dim: 12,
            geglu_hidden: 4,
            pose_widths: [2, 2],
            normal_widths: [2, 2, 2],
            normal_grid: 4,
            normal_dim: 8,
            temporal_heads: 1,
            max_frames: 32,
            motion_levels: vec![0, 1, 2, 2],
            zero_init_temporal_out: false,
            init_seed: 0,
        }
    }

    /// Narrow channels with the default attention heads and normal
    /// descriptor; sized for toy experiments on a single core.
    pub fn compact() -> Self {
        Self {
            base_width: 8,
            context_dim: 16,
            geglu_hidden: 32,
            ..Self::default()
        }
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.context_dim == 0 || self.clip_dim == 0 || self.normal_dim == 0 {
            return Err(Error::invalid("network widths must be positive"));
        }
        if self.temporal_heads == 0 || self.base_width % self.temporal_heads != 0 {
            return Err(Error::invalid(format!(
                "base width {} must be divisible by {} temporal heads",
                self.base_width, self.temporal_heads
            )));
        }
        if let Some(&l) = self.motion_levels.iter().find(|&&l| l >= LEVELS) {
            return Err(Error::invalid(format!("motion module level {l} out of range")));
        }
        if self.max_frames == 0 || self.normal_grid == 0 {
            return Err(Error::invalid("max_frames and normal_grid must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub group: ParamGroup,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

enum Init {
    /// Normal with std `gain / sqrt(fan_in)`.
    Fan { fan_in: usize, gain: f64 },
    Zeros,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn add(&mut self, name: &str, group: ParamGroup, shape: &[usize], init: Init) {
        let value = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Fan { fan_in, gain } => {
                Tensor::randn(shape, &mut self.rng).scale(gain / (fan_in.max(1) as f64).sqrt())
            }
        };
        self.store.params.insert(name.to_string(), Param { group, value });
    }

    fn conv(&mut self, name: &str, group: ParamGroup, out: usize, inp: usize, k: usize, gain: f64) {
        self.add(
            &format!("{name}.w"),
            group,
            &[out, inp, k, k],
            Init::Fan {
                fan_in: inp * k * k,
                gain,
            },
        );
        self.add(&format!("{name}.b"), group, &[out], Init::Zeros);
    }

    fn linear(&mut self, name: &str, group: ParamGroup, inp: usize, out: usize, bias: bool, gain: f64) {
        let init = if gain == 0.0 {
            Init::Zeros
        } else {
            Init::Fan { fan_in: inp, gain }
        };
        self.add(&format!("{name}.w"), group, &[inp, out], init);
        if bias {
            self.add(&format!("{name}.b"), group, &[out], Init::Zeros);
        }
    }
}

impl ParamStore {
    /// Seeded initialisation of every parameter of the generator.
    pub fn init(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::default();
        let mut b = Builder {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(cfg.init_seed),
        };
        use ParamGroup::{Spatial as S, Temporal as T};
        let c0 = cfg.base_width;

        for prefix in ["unet", "ref"] {
            b.linear(&format!("{prefix}.time.fc1"), S, c0, c0, true, 1.0);
            for l in 0..LEVELS {
                b.linear(&format!("{prefix}.time.level{l}"), S, c0, cfg.width(l), true, 1.0);
            }
        }

        // denoiser body
        b.conv("unet.conv_in", S, c0, COMPOSITE_CHANNELS, 3, 1.0);
        for l in 0..LEVELS {
            let c = cfg.width(l);
            b.conv(&format!("unet.enc{l}.res1"), S, c, c, 3, 1.0);
            b.conv(&format!("unet.enc{l}.res2"), S, c, c, 3, 0.5);
            if l + 1 < LEVELS {
                b.conv(&format!("unet.down{l}"), S, cfg.width(l + 1), c, 3, 1.0);
            }
            let a = format!("unet.attn{l}");
            b.linear(&format!("{a}.ref.q"), S, c, c, false, 1.0);
            b.linear(&format!("{a}.ref.o"), S, c, c, false, 0.5);
            b.linear(&format!("{a}.ctx.q"), S, c, c, false, 1.0);
            b.linear(&format!("{a}.ctx.k"), S, cfg.context_dim, c, false, 1.0);
            b.linear(&format!("{a}.ctx.v"), S, cfg.context_dim, c, false, 1.0);
            b.linear(&format!("{a}.ctx.o"), S, c, c, false, 0.5);
            b.linear(&format!("{a}.normal.q"), S, c, c, false, 1.0);
            b.linear(&format!("{a}.normal.k"), S, cfg.normal_dim, c, false, 1.0);
            b.linear(&format!("{a}.normal.v"), S, cfg.normal_dim, c, false, 0.5);
        }
        for l in (0..LEVELS - 1).rev() {
            let c = cfg.width(l);
            b.conv(&format!("unet.up{l}"), S, c, cfg.width(l + 1), 3, 1.0);
            b.conv(&format!("unet.dec{l}.res1"), S, c, c, 3, 1.0);
            b.conv(&format!("unet.dec{l}.res2"), S, c, c, 3, 0.5);
        }
        b.conv("unet.conv_out", S, LATENT_CHANNELS, c0, 3, 0.5);

        // motion modules
        for (i, &l) in cfg.motion_levels.iter().enumerate() {
            let c = cfg.width(l);
            let m = format!("unet.mm{i}");
            b.linear(&format!("{m}.q"), T, c, c, false, 1.0);
            b.linear(&format!("{m}.k"), T, c, c, false, 1.0);
            b.linear(&format!("{m}.v"), T, c, c, false, 1.0);
            let gain = if cfg.zero_init_temporal_out { 0.0 } else { 0.5 };
            b.linear(&format!("{m}.o"), T, c, c, true, gain);
        }

        // reference network
        b.conv("ref.conv_in", S, c0, LATENT_CHANNELS, 3, 1.0);
        for l in 0..LEVELS {
            let c = cfg.width(l);
            b.conv(&format!("ref.enc{l}.res1"), S, c, c, 3, 1.0);
            b.conv(&format!("ref.enc{l}.res2"), S, c, c, 3, 0.5);
            if l + 1 < LEVELS {
                b.conv(&format!("ref.down{l}"), S, cfg.width(l + 1), c, 3, 1.0);
            }
            b.linear(&format!("ref.block{l}.k"), S, c, c, false, 1.0);
            b.linear(&format!("ref.block{l}.v"), S, c, c, false, 1.0);
        }

        // appearance projector
        b.linear("proj.ffn.w1", S, cfg.clip_dim, 2 * cfg.geglu_hidden, true, 1.0);
        b.linear("proj.ffn.w2", S, cfg.geglu_hidden, cfg.context_dim, true, 1.0);
        b.linear("proj.skip", S, cfg.clip_dim, cfg.context_dim, false, 1.0);

        // pose guider
        let pin = 2 * CONTROL_CHANNELS;
        b.conv("pose.gate", S, c0, pin, 8, 1.0);
        b.conv("pose.conv0", S, cfg.pose_widths[0], pin, 3, 1.0);
        b.conv("pose.conv1", S, cfg.pose_widths[1], cfg.pose_widths[0], 3, 1.0);
        b.conv("pose.conv2", S, c0, cfg.pose_widths[1], 3, 1.0);

        // normal guider
        let nw = cfg.normal_widths;
        b.conv("normal.conv0", S, nw[0], CONTROL_CHANNELS, 3, 1.0);
        b.conv("normal.conv1", S, nw[1], nw[0], 3, 1.0);
        b.conv("normal.conv2", S, nw[2], nw[1], 3, 1.0);
        b.linear(
            "normal.fc",
            S,
            nw[2] * cfg.normal_grid * cfg.normal_grid,
            cfg.normal_dim,
            true,
            1.0,
        );

        Ok(store)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) {
        self.params.insert(name.into(), Param { group, value });
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn group_count(&self, group: ParamGroup) -> usize {
        self.params
            .values()
            .filter(|p| p.group == group)
            .map(|p| p.value.len())
            .sum()
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for p in self.params.values_mut() {
            p.value.data_mut().fill(0.0);
        }
    }

    /// Names and groups must agree exactly; shapes must match.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (name, p) in &self.params {
            let q = other
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if q.group != p.group {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` is {:?} here but {:?} in the other store",
                    p.group, q.group
                )));
            }
            if q.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?} vs {:?}",
                    p.value.shape(),
                    q.value.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Which parameters receive gradients when bound into a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    None,
    All,
    Only(ParamGroup),
}

impl Trainable {
    fn allows(self, group: ParamGroup) -> bool {
        match self {
            Trainable::None => false,
            Trainable::All => true,
            Trainable::Only(g) => g == group,
        }
    }
}

/// Lazily binds stored parameters into a [`Graph`], once per name.
pub struct Binder<'a> {
    store: &'a ParamStore,
    trainable: Trainable,
    bound: HashMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore, trainable: Trainable) -> Self {
        Self {
            store,
            trainable,
            bound: HashMap::new(),
        }
    }

    pub fn var(&mut self, g: &mut Graph, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let p = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not defined for this network"));
        let v = if self.trainable.allows(p.group) {
            g.param(p.value.clone())
        } else {
            g.constant(p.value.clone())
        };
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Bound trainable parameters, for gradient collection.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        let mut out: Vec<(String, Var)> = self
            .bound
            .iter()
            .filter(|(name, _)| self.trainable.allows(self.store.get(name.as_str()).unwrap().group))
            .map(|(n, &v)| (n.clone(), v))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_partitioned() {
        let cfg = NetworkConfig::default();
        let a = ParamStore::init(&cfg).unwrap();
        let b = ParamStore::init(&cfg).unwrap();
        assert_eq!(a, b);
        for (name, p) in a.iter() {
            let temporal = name.contains(".mm");
            assert_eq!(p.group == ParamGroup::Temporal, temporal, "{name}");
        }
        assert_eq!(
            a.group_count(ParamGroup::Spatial) + a.group_count(ParamGroup::Temporal),
            a.scalar_count()
        );
        // zero-initialised motion module outputs
        assert_eq!(a.tensor("unet.mm0.o.w").unwrap().max_abs(), 0.0);
    }

    #[test]
    fn tiny_network_is_small() {
        let p = ParamStore::init(&NetworkConfig::tiny()).unwrap();
        assert!(p.scalar_count() <= 5000, "{} parameters", p.scalar_count());
        assert!(p.group_count(ParamGroup::Temporal) > 0);
    }

    #[test]
    fn validate_rejects_bad_heads() {
        let cfg = NetworkConfig {
            base_width: 12,
            ..NetworkConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
