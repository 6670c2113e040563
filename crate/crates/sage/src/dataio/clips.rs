//! Fixed-length clip segmentation with overlapping strides.

use crate::error::{Result, SageError};

/// Default clip length in frames.
pub const DEFAULT_CLIP_LEN: usize = 300;
/// Default stride between clip starts.
pub const DEFAULT_STRIDE: usize = 200;

/// Half-open frame interval `[start, end)` of one clip within one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipSpan {
    pub start: usize,
    pub end: usize,
}

impl ClipSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// A clip span tagged with the video it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipIndex {
    pub video_id: String,
    pub start: usize,
    pub end: usize,
}

impl ClipIndex {
    pub fn new(video_id: impl Into<String>, span: ClipSpan) -> Self {
        ClipIndex { video_id: video_id.into(), start: span.start, end: span.end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Segments a `frames`-long video into clips of `clip_len` frames whose
/// starts step by `stride`. If the strided clips stop short of the end,
/// a final right-aligned clip covers the tail. Videos shorter than
/// `clip_len` yield a single full-video clip. With `stride <= clip_len`
/// the spans cover `[0, frames)` with no gaps.
pub fn segment_clips(frames: usize, clip_len: usize, stride: usize) -> Result<Vec<ClipSpan>> {
    if clip_len == 0 || stride == 0 {
        return Err(SageError::Config(format!(
            "clip_len and stride must be >= 1, got {clip_len} and {stride}"
        )));
    }
    if frames == 0 {
        return Err(SageError::Config("cannot segment a zero-frame video".into()));
    }
    if frames < clip_len {
        return Ok(vec![ClipSpan { start: 0, end: frames }]);
    }
    let mut spans = Vec::new();
    let mut start = 0;
    while start + clip_len <= frames {
        spans.push(ClipSpan { start, end: start + clip_len });
        start += stride;
    }
    let covered = spans.last().expect("frames >= clip_len yields at least one span").end;
    if covered < frames {
        spans.push(ClipSpan { start: frames - clip_len, end: frames });
    }
    Ok(spans)
}
