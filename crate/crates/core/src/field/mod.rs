//! The radiance field: triplane, encodings, reference features and MLPs.

pub mod checkpoint;
pub mod encoding;
pub mod features;
pub mod mlp;
pub mod model;
pub mod triplane;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoding::{positional_encode, sh_encode};
pub use features::{aggregate_reference, extract_reference_features, FeatureMap, ReferenceFeatureMaps};
pub use mlp::Mlp;
pub use model::{ModelConfig, TriDF};
pub use triplane::Triplane;
