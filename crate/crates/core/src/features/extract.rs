use std::path::PathBuf;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cache, EmbeddingSequence, FeatureError};
use crate::dataset::FrameSequence;

/// Geometry and seed of the projection extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub seed: u64,
    /// Output feature width.
    pub width: usize,
    /// Expected frame side in pixels.
    pub side: u32,
    /// Frames are area-averaged onto a `pool x pool` grid before projecting.
    pub pool: u32,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self { seed: 0, width: super::DEFAULT_WIDTH, side: crate::dataset::DEFAULT_SIDE, pool: 16 }
    }
}

/// A fixed random linear map from pooled, `[0,1]`-scaled pixels to
/// `width` features, followed by `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    params: ProjectionParams,
    /// `width x (pool * pool * 3)`, row-major.
    weights: Vec<f64>,
}

impl Projection {
    pub fn new(params: ProjectionParams) -> Result<Self, FeatureError> {
        if params.width == 0 || params.side == 0 || params.pool == 0 || params.pool > params.side {
            return Err(FeatureError::Shape(format!(
                "invalid projection geometry: width {}, side {}, pool {}",
                params.width, params.side, params.pool
            )));
        }
        let fan_in = (params.pool * params.pool * 3) as usize;
        let bound = (3.0 / fan_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let weights = (0..params.width * fan_in).map(|_| rng.gen_range(-bound..bound)).collect();
        Ok(Self { params, weights })
    }

    pub fn params(&self) -> &ProjectionParams {
        &self.params
    }

    pub fn tag(&self) -> String {
        let p = &self.params;
        format!("projection:v1:seed={}:side={}:pool={}:width={}", p.seed, p.side, p.pool, p.width)
    }

    /// Embeds one frame.
    pub fn embed(&self, frame: &RgbImage) -> Result<Vec<f32>, FeatureError> {
        let side = self.params.side;
        if frame.width() != side || frame.height() != side {
            return Err(FeatureError::Shape(format!(
                "frame is {}x{}, extractor expects {side}x{side}",
                frame.width(),
                frame.height()
            )));
        }
        let pooled = pool(frame, self.params.pool);
        Ok(self
            .weights
            .chunks_exact(pooled.len())
            .map(|row| row.iter().zip(&pooled).map(|(w, x)| w * x).sum::<f64>().tanh() as f32)
            .collect())
    }
}

/// Area-average of `[0,1]`-scaled channels onto a `grid x grid` layout,
/// channel-interleaved.
fn pool(frame: &RgbImage, grid: u32) -> Vec<f64> {
    let side = frame.width();
    let bounds = |i: u32| (i * side / grid, (i + 1) * side / grid);
    let mut out = Vec::with_capacity((grid * grid * 3) as usize);
    for gy in 0..grid {
        let (y0, y1) = bounds(gy);
        for gx in 0..grid {
            let (x0, x1) = bounds(gx);
            let mut acc = [0.0f64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = frame.get_pixel(x, y).0;
                    for c in 0..3 {
                        acc[c] += f64::from(p[c]);
                    }
                }
            }
            let area = f64::from((y1 - y0) * (x1 - x0)) * 255.0;
            out.extend(acc.iter().map(|a| a / area));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExtractorBackend {
    /// Reads `<speaker>__<word>__<take>.emb` files produced elsewhere.
    PrecomputedLoader { cache_dir: PathBuf, timesteps: usize, width: usize },
    DeterministicProjection(Projection),
}

impl ExtractorBackend {
    pub fn projection(params: ProjectionParams) -> Result<Self, FeatureError> {
        Projection::new(params).map(Self::DeterministicProjection)
    }

    pub fn width(&self) -> usize {
        match self {
            Self::PrecomputedLoader { width, .. } => *width,
            Self::DeterministicProjection(p) => p.params.width,
        }
    }
}

pub fn extract_sequence(
    seq: &FrameSequence,
    backend: &ExtractorBackend,
) -> Result<EmbeddingSequence, FeatureError> {
    match backend {
        ExtractorBackend::PrecomputedLoader { cache_dir, timesteps, width } => {
            let path = cache::cache_path(cache_dir, &seq.identity);
            if !path.exists() {
                return Err(FeatureError::CacheMiss { identity: seq.identity.clone(), path });
            }
            cache::cache_read_checked(&path, seq.identity.clone(), *timesteps, *width)
        }
        ExtractorBackend::DeterministicProjection(projection) => {
            if seq.is_empty() {
                return Err(FeatureError::Shape(format!("{} has no frames", seq.identity)));
            }
            let mut values = Vec::with_capacity(seq.len() * projection.params.width);
            for frame in &seq.frames {
                values.extend(projection.embed(frame)?);
            }
            let out = EmbeddingSequence {
                identity: seq.identity.clone(),
                timesteps: seq.len(),
                width: projection.params.width,
                values,
                extractor_tag: projection.tag(),
            };
            out.check()?;
            Ok(out)
        }
    }
}
