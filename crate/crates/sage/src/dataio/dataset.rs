//! Dataset directory layout: per video `<id>_visual.sagf`,
//! `<id>_audio.sagf`, and `<id>.csv`.

use std::path::Path;

use crate::error::{Result, SageError};

use super::align::align_audio;
use super::annotations::{parse_annotations, write_annotations, AnnotationTrack};
use super::format::{read_feature_file, write_feature_file, FeatureSequence, Modality};

/// One video as used downstream: audio already on the video frame grid.
#[derive(Debug, Clone)]
pub struct VideoRecord {
    pub id: String,
    pub visual: FeatureSequence,
    pub audio: FeatureSequence,
    pub annotations: AnnotationTrack,
}

impl VideoRecord {
    pub fn frames(&self) -> usize {
        self.visual.frames()
    }
}

/// Writes one video's three files into `dir`.
pub fn write_video(
    dir: &Path,
    id: &str,
    visual: &FeatureSequence,
    audio: &FeatureSequence,
    annotations: &AnnotationTrack,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_feature_file(&dir.join(format!("{id}_visual.sagf")), visual)?;
    write_feature_file(&dir.join(format!("{id}_audio.sagf")), audio)?;
    write_annotations(&dir.join(format!("{id}.csv")), annotations)
}

/// Loads one video by id, aligning its audio onto the video frame grid.
pub fn load_video(dir: &Path, id: &str) -> Result<VideoRecord> {
    let visual_path = dir.join(format!("{id}_visual.sagf"));
    let audio_path = dir.join(format!("{id}_audio.sagf"));
    let ann_path = dir.join(format!("{id}.csv"));
    for p in [&visual_path, &audio_path, &ann_path] {
        if !p.exists() {
            return Err(SageError::Config(format!("missing dataset file {}", p.display())));
        }
    }

    let visual = read_feature_file(&visual_path)?;
    if visual.modality() != Modality::Visual {
        return Err(SageError::Alignment(format!(
            "{} is tagged {} but holds the visual slot",
            visual_path.display(),
            visual.modality()
        )));
    }
    let audio = read_feature_file(&audio_path)?;
    if audio.modality() != Modality::Audio {
        return Err(SageError::Alignment(format!(
            "{} is tagged {} but holds the audio slot",
            audio_path.display(),
            audio.modality()
        )));
    }
    let annotations = parse_annotations(&ann_path)?;
    if annotations.frames() != visual.frames() {
        return Err(SageError::Alignment(format!(
            "video {id}: {} annotation rows vs {} visual frames",
            annotations.frames(),
            visual.frames()
        )));
    }

    let audio = align_audio(&audio, visual.frames(), visual.fps())?;
    Ok(VideoRecord { id: id.to_string(), visual, audio, annotations })
}

/// Video ids present in `dir`, sorted; an id is anything with a
/// `_visual.sagf` file.
pub fn scan_video_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if let Some(name) = entry.file_name().to_str() {
            if let Some(id) = name.strip_suffix("_visual.sagf") {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Loads every video in `dir`, sorted by id.
pub fn load_dataset(dir: &Path) -> Result<Vec<VideoRecord>> {
    scan_video_ids(dir)?.iter().map(|id| load_video(dir, id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{synth_dataset, SynthConfig};

    fn write_synth(dir: &Path, n_videos: usize, seed: u64) -> Vec<String> {
        let cfg = SynthConfig {
            n_videos,
            frames_per_video: 40,
            dim_visual: 4,
            dim_audio: 3,
            corruption_schedule: vec![],
            seed,
        };
        let videos = synth_dataset(&cfg).unwrap();
        let mut ids = Vec::new();
        for (i, (v, a, t)) in videos.iter().enumerate() {
            let id = format!("video_{i:03}");
            write_video(dir, &id, v, a, t).unwrap();
            ids.push(id);
        }
        ids
    }

    #[test]
    fn dataset_round_trips_through_the_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let ids = write_synth(dir.path(), 3, 1);
        assert_eq!(scan_video_ids(dir.path()).unwrap(), ids);
        let records = load_dataset(dir.path()).unwrap();
        assert_eq!(records.len(), 3);
        for r in &records {
            assert_eq!(r.frames(), 40);
            assert_eq!(r.audio.frames(), 40);
            assert_eq!(r.annotations.frames(), 40);
        }
    }

    #[test]
    fn empty_directory_yields_no_ids() {
        let dir = tempfile::tempdir().unwrap();
        assert!(scan_video_ids(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn missing_audio_file_is_reported_with_its_path() {
        let dir = tempfile::tempdir().unwrap();
        write_synth(dir.path(), 1, 2);
        std::fs::remove_file(dir.path().join("video_000_audio.sagf")).unwrap();
        let err = load_video(dir.path(), "video_000").unwrap_err();
        match err {
            SageError::Config(msg) => assert!(msg.contains("video_000_audio.sagf"), "{msg}"),
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn swapped_modality_tag_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_synth(dir.path(), 1, 3);
        // Copy the audio file over the visual slot.
        std::fs::copy(
            dir.path().join("video_000_audio.sagf"),
            dir.path().join("video_000_visual.sagf"),
        )
        .unwrap();
        let err = load_video(dir.path(), "video_000").unwrap_err();
        assert!(matches!(err, SageError::Alignment(_)));
    }

    #[test]
    fn annotation_length_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_synth(dir.path(), 1, 4);
        let short = AnnotationTrack::all_valid(vec![0.0; 10], vec![0.0; 10]).unwrap();
        write_annotations(&dir.path().join("video_000.csv"), &short).unwrap();
        let err = load_video(dir.path(), "video_000").unwrap_err();
        assert!(matches!(err, SageError::Alignment(_)));
    }
}
