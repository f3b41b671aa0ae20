//! Dataset manifests, synthetic multi-domain generation, SIE index schemes,
//! the domain-balanced PK sampler, and the IoU identity-labeling rule.

mod image;
mod iou;
mod manifest;
mod records;
mod sampler;
mod sie;
mod synth;

pub use image::Image;
pub use iou::{assign_identity_by_iou, iou, BBox, IouAssignment, IOU_DISCARD_THRESHOLD};
pub use manifest::{load_image_blob, load_manifest, save_image_blob, write_dataset, MANIFEST_HEADER};
pub use records::{Dataset, ImageRecord, RangeTag};
pub use sampler::{sample_batch, BatchPlan};
pub use sie::{assign_sie_index, SieScheme};
pub use synth::{synth_generate, SynthConfig};
