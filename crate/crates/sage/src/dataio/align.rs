//! Audio-to-video temporal alignment.

use crate::error::{Result, SageError};
use crate::numerics::Tensor;

use super::format::FeatureSequence;

/// Resamples `audio` onto the video frame grid by nearest index: video
/// frame `t` takes audio row `round(t * audio_fps / video_fps)`, clamped
/// to the audio's range. The output has exactly `video_frames` rows and
/// keeps the audio feature values unchanged.
pub fn align_audio(
    audio: &FeatureSequence,
    video_frames: usize,
    video_fps: f32,
) -> Result<FeatureSequence> {
    if !(video_fps > 0.0 && video_fps.is_finite()) {
        return Err(SageError::Config(format!(
            "video fps must be positive and finite, got {video_fps}"
        )));
    }
    if video_frames == 0 {
        return Err(SageError::Config("video frame count must be >= 1".into()));
    }

    let ratio = audio.fps() as f64 / video_fps as f64;
    let last = audio.frames() - 1;
    let d = audio.dim();
    let mut data = Vec::with_capacity(video_frames * d);
    for t in 0..video_frames {
        let src = ((t as f64 * ratio).round() as usize).min(last);
        data.extend_from_slice(&audio.values().data()[src * d..(src + 1) * d]);
    }
    FeatureSequence::new(audio.modality(), video_fps, Tensor::new(vec![video_frames, d], data)?)
}
