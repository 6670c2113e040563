//! Feature and annotation IO, audio-video alignment, clip segmentation,
//! and the synthetic dataset generator.

mod align;
mod annotations;
mod clips;
mod dataset;
mod format;
mod synth;

pub use align::align_audio;
pub use annotations::{
    parse_annotations, write_annotations, AnnotationTrack, INVALID_SENTINEL,
};
pub use clips::{segment_clips, ClipIndex, ClipSpan, DEFAULT_CLIP_LEN, DEFAULT_STRIDE};
pub use dataset::{load_dataset, load_video, scan_video_ids, write_video, VideoRecord};
pub(crate) use format::write_atomic;
pub use format::{read_feature_file, write_feature_file, FeatureSequence, Modality};
pub use synth::{synth_dataset, CorruptionSpec, SynthConfig, SYNTH_FPS};
