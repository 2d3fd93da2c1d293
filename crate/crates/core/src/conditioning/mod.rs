//! Control pathways into the denoiser: the reference write/read bank, the
//! appearance projector, the gated pose guider, the normal-map descriptor
//! guider with its cross-attention injection, and control dropout.
//!
//! Each pathway is built on the autodiff [`crate::graph::Graph`] so training can reach its
//! parameters; the free functions in this module are the evaluation-mode
//! entry points and run the same graph code with every parameter frozen.

mod appearance;
mod controls;
mod guiders;
mod reference;

pub use appearance::{project_appearance, AppearanceEmbedding, GridColorEmbedder, ImageEmbedder};
pub use controls::{drop_controls, ControlBundle, Modality};
pub use guiders::{inject_normal, normal_guide, pose_guide, pose_guide_with_gate, GuidanceSignals};
pub use reference::{block_id, reference_read, reference_write, BankEntry, MemoryBank};

pub(crate) use appearance::projector_graph;
pub(crate) use guiders::{inject_normal_graph, normal_graph, pose_graph};
pub(crate) use reference::{check_latent_extent, read_graph, reference_graph};
