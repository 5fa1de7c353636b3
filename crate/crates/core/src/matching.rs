//! Proposal scoring against a template.
//!
//! IOU matching combines box and mask overlap with weights that sum to one.
//! Appearance matching compares embeddings of the box crops and maps their L2
//! distance `d` to `1 / (1 + d)`.

use crate::error::{Error, Result};
use crate::geometry::{box_iou, mask_iou, BBox};
use crate::proposals::Proposal;
use crate::template::{Image, TargetTemplate};

/// Box/mask weights for IOU matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchWeights {
    alpha: f64,
    beta: f64,
}

impl MatchWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 || (alpha + beta - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "match weights",
                format!("alpha={alpha}, beta={beta} must be >= 0 and sum to 1"),
            ));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

pub fn score_iou(t: &TargetTemplate, p: &Proposal, w: &MatchWeights) -> Result<f64> {
    let m = if w.beta == 0.0 {
        t.mask().same_dims(&p.mask)?;
        0.0
    } else {
        mask_iou(t.mask(), &p.mask)?
    };
    Ok(w.alpha * box_iou(t.bbox(), &p.bbox) + w.beta * m)
}

/// Normalized appearance descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn l2_distance(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Maps an image patch to an [`Embedding`].
pub trait Embedder: Send + Sync {
    fn embed(&self, patch: &Image) -> Result<Embedding>;

    /// Embeds the pixels of `image` inside `region`.
    fn embed_region(&self, image: &Image, region: &BBox) -> Result<Embedding> {
        self.embed(&image.crop(region)?)
    }
}

/// Joint RGB histogram with `bins` buckets per channel, L1-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HistogramEmbedder {
    bins: usize,
}

impl Default for HistogramEmbedder {
    fn default() -> Self {
        Self { bins: 8 }
    }
}

impl HistogramEmbedder {
    pub fn new(bins: usize) -> Result<Self> {
        if !(1..=256).contains(&bins) {
            return Err(Error::invalid("bins", format!("{bins} not in 1..=256")));
        }
        Ok(Self { bins })
    }

    pub fn len(&self) -> usize {
        self.bins * self.bins * self.bins
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bin_of(&self, rgb: [u8; 3]) -> usize {
        let b = |v: u8| v as usize * self.bins / 256;
        (b(rgb[0]) * self.bins + b(rgb[1])) * self.bins + b(rgb[2])
    }

    fn histogram(&self, image: &Image, region: &BBox) -> Result<Embedding> {
        region.check_within(image.width(), image.height())?;
        let mut counts = vec![0u64; self.len()];
        let (x0, x1) = (region.x0() as usize, region.x1() as usize);
        for y in region.y0() as usize..region.y1() as usize {
            for px in image.row(y)[x0 * 3..x1 * 3].chunks_exact(3) {
                counts[self.bin_of([px[0], px[1], px[2]])] += 1;
            }
        }
        let total = region.area() as f64;
        Ok(Embedding(counts.into_iter().map(|c| c as f64 / total).collect()))
    }
}

impl Embedder for HistogramEmbedder {
    fn embed(&self, patch: &Image) -> Result<Embedding> {
        let region = BBox::frame(patch.width(), patch.height()).map_err(|_| Error::Empty("zero-area patch"))?;
        self.histogram(patch, &region)
    }

    fn embed_region(&self, image: &Image, region: &BBox) -> Result<Embedding> {
        self.histogram(image, region)
    }
}

/// Appearance similarity of the template box crop and the proposal box crop
/// taken from `frame`.
pub fn score_appearance(t: &TargetTemplate, p: &Proposal, frame: &Image, embedder: &dyn Embedder) -> Result<f64> {
    let a = embedder.embed_region(t.frame(), t.bbox())?;
    let b = embedder.embed_region(frame, &p.bbox)?;
    Ok(1.0 / (1.0 + a.l2_distance(&b)))
}

/// Index of the highest score, lowest index on ties; `None` when there are no
/// proposals.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ if s.is_nan() => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}
