use std::path::Path;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};

use super::{Bbox, DatasetError, FrameSource, Identity, UtteranceRecord};

pub const DEFAULT_TIMESTEPS: usize = 20;
pub const DEFAULT_SIDE: u32 = 224;

/// A fixed-length run of square RGB frames for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub identity: Identity,
    pub frames: Vec<RgbImage>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Edge length of the (square) frames, 0 for an empty sequence.
    pub fn side(&self) -> u32 {
        self.frames.first().map_or(0, |f| f.width())
    }
}

/// Source frame indices kept for a clip of `n` frames: evenly spaced
/// `floor(i * n / target_len)` when the clip is too long, every frame otherwise.
pub fn sample_indices(n: usize, target_len: usize) -> Vec<usize> {
    if n <= target_len {
        (0..n).collect()
    } else {
        (0..target_len).map(|i| i * n / target_len).collect()
    }
}

/// Loads, samples, crops and resizes the frames of `record`.
pub fn preprocess_sequence(
    record: &UtteranceRecord,
    target_len: usize,
    side: u32,
) -> Result<FrameSequence, DatasetError> {
    check_geometry(target_len, side)?;
    let FrameSource::Frames(paths) = &record.source else {
        return Err(DatasetError::NotFrames(record.identity.clone()));
    };
    if paths.is_empty() {
        return Err(DatasetError::NoFrames(record.identity.clone()));
    }
    let keep = sample_indices(paths.len(), target_len);
    let mut frames = Vec::with_capacity(keep.len());
    let mut boxes = record.bbox.as_ref().map(|_| Vec::with_capacity(keep.len()));
    for &index in &keep {
        frames.push(decode_rgb(&paths[index])?);
        if let (Some(out), Some(all)) = (boxes.as_mut(), record.bbox.as_ref()) {
            out.push(all[index]);
        }
    }
    // `keep` already thinned the clip, so the in-memory path sees <= target_len frames.
    preprocess_frames(record.identity.clone(), frames, boxes.as_deref(), target_len, side)
}

/// Same as [`preprocess_sequence`] over frames already in memory.
/// `bboxes`, when given, must align with `frames`.
pub fn preprocess_frames(
    identity: Identity,
    frames: Vec<RgbImage>,
    bboxes: Option<&[Bbox]>,
    target_len: usize,
    side: u32,
) -> Result<FrameSequence, DatasetError> {
    check_geometry(target_len, side)?;
    if frames.is_empty() {
        return Err(DatasetError::NoFrames(identity));
    }
    if let Some(b) = bboxes {
        if b.len() != frames.len() {
            return Err(DatasetError::InvalidParameter(format!(
                "{} bounding boxes for {} frames",
                b.len(),
                frames.len()
            )));
        }
    }
    let keep = sample_indices(frames.len(), target_len);
    let mut out = Vec::with_capacity(target_len);
    for index in keep {
        let frame = &frames[index];
        let cropped = match bboxes.map(|b| b[index]) {
            Some(b) => crop(frame, b, &identity)?,
            None => frame.clone(),
        };
        out.push(fit(cropped, side));
    }
    let white = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    out.resize(target_len, white);
    Ok(FrameSequence { identity, frames: out })
}

fn check_geometry(target_len: usize, side: u32) -> Result<(), DatasetError> {
    if target_len == 0 {
        return Err(DatasetError::InvalidParameter("target length must be at least 1".into()));
    }
    if side == 0 {
        return Err(DatasetError::InvalidParameter("frame side must be at least 1".into()));
    }
    Ok(())
}

fn decode_rgb(path: &Path) -> Result<RgbImage, DatasetError> {
    let frame_err = |message: String| DatasetError::Frame { path: path.to_path_buf(), message };
    let image = image::open(path).map_err(|e| frame_err(e.to_string()))?;
    if !image.color().has_color() {
        return Err(frame_err(format!("expected a colour image, found {:?}", image.color())));
    }
    Ok(image.into_rgb8())
}

fn crop(frame: &RgbImage, b: Bbox, identity: &Identity) -> Result<RgbImage, DatasetError> {
    let fits = b.w > 0
        && b.h > 0
        && u64::from(b.x) + u64::from(b.w) <= u64::from(frame.width())
        && u64::from(b.y) + u64::from(b.h) <= u64::from(frame.height());
    if !fits {
        return Err(DatasetError::InvalidParameter(format!(
            "bbox {b:?} of {identity} outside {}x{} frame",
            frame.width(),
            frame.height()
        )));
    }
    Ok(imageops::crop_imm(frame, b.x, b.y, b.w, b.h).to_image())
}

fn fit(frame: RgbImage, side: u32) -> RgbImage {
    if frame.width() == side && frame.height() == side {
        frame
    } else {
        imageops::resize(&frame, side, side, FilterType::Triangle)
    }
}
