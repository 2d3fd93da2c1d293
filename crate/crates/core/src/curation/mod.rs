//! Dataset generation, manifests, mixing and targeted selection.

pub mod embed;
pub mod manifest;
pub mod media;
pub mod mix;
pub mod select;
pub mod toy;

pub use embed::{embed_manifest, embed_video, ToyVideoEmbedder, VideoEmbedder};
pub use manifest::{ControlLocators, Domain, Manifest, ManifestEntry, VideoSample, MANIFEST_SCHEMA};
pub use mix::mix_datasets;
pub use select::{
    apply_selection, cosine_similarity, select_manual, select_random, select_top_n, Aggregation, SelectionResult,
    Strategy,
};
pub use toy::{classify_domain, generate_toy_dataset, high_frequency_level, render_toy_video, MotionFamily, ToySpec};
