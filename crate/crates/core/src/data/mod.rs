//! Samples, saliency maps, on-disk corpora and the synthetic task generator.

pub mod manifest;
pub mod pgm;
mod saliency;
mod sample;
mod split;
pub mod synthetic;

pub use manifest::{load_manifest, write_dataset, Fusion, ManifestRecord};
pub use saliency::{fuse_annotations_max, fuse_annotations_mean, resize_plane, Resize, SaliencyMap};
pub use sample::{Sample, SampleSet, Split, SplitSummary, ANOMALOUS, NORMAL};
pub use split::split_subject_disjoint;
pub use synthetic::{generate_synthetic_task, AnomalyKind, SyntheticTaskSpec};
