//! Target template, predicted result, and the two blackened views fed to the
//! feature extractor.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, BitMask};

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&fill);
        }
        Self { width, height, pixels }
    }

    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::LengthMismatch {
                expected: width * height * 3,
                found: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn raw(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.pixels
    }

    /// RGB bytes of row `y`.
    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[y * self.width * 3..(y + 1) * self.width * 3]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy of the pixels inside `b`, which must lie within the image.
    pub fn crop(&self, b: &BBox) -> Result<Image> {
        b.check_within(self.width, self.height)?;
        let (x0, x1) = (b.x0() as usize, b.x1() as usize);
        let mut pixels = Vec::with_capacity(b.area() as usize * 3);
        for y in b.y0() as usize..b.y1() as usize {
            pixels.extend_from_slice(&self.row(y)[x0 * 3..x1 * 3]);
        }
        Ok(Image {
            width: x1 - x0,
            height: b.height() as usize,
            pixels,
        })
    }
}

/// One of the agent's two actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    /// a0: replace the template with the predicted result.
    Update,
    /// a1: discard the prediction and keep the template.
    Keep,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Update => 0,
            Action::Keep => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        match i {
            0 => Some(Action::Update),
            1 => Some(Action::Keep),
            _ => None,
        }
    }
}

fn check_parts(frame: &Image, b: &BBox, mask: &BitMask) -> Result<()> {
    if frame.dims() != mask.dims() {
        return Err(Error::dims(frame.dims(), mask.dims()));
    }
    b.check_within(frame.width(), frame.height())
}

/// The tracker's stored belief about one object.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTemplate {
    frame: Arc<Image>,
    bbox: BBox,
    mask: BitMask,
    bootstrap: bool,
}

impl TargetTemplate {
    pub fn new(frame: Arc<Image>, bbox: BBox, mask: BitMask) -> Result<Self> {
        check_parts(&frame, &bbox, &mask)?;
        if mask.is_empty() {
            return Err(Error::Empty("template mask has no foreground"));
        }
        Ok(Self {
            frame,
            bbox,
            mask,
            bootstrap: false,
        })
    }

    pub fn frame(&self) -> &Arc<Image> {
        &self.frame
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn mask(&self) -> &BitMask {
        &self.mask
    }

    /// True while the mask is still the filled first-frame box.
    pub fn is_bootstrap(&self) -> bool {
        self.bootstrap
    }
}

/// Template from box-level ground truth: the mask is the filled box.
pub fn init_template(frame: Arc<Image>, bbox: BBox) -> Result<TargetTemplate> {
    bbox.check_within(frame.width(), frame.height())?;
    let mask = BitMask::from_box(frame.width(), frame.height(), &bbox);
    let mut t = TargetTemplate::new(frame, bbox, mask)?;
    t.bootstrap = true;
    Ok(t)
}

/// Candidate result for the current frame before the accept/reject decision.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedResult {
    frame: Arc<Image>,
    bbox: BBox,
    mask: BitMask,
    score: f64,
}

impl PredictedResult {
    pub fn new(frame: Arc<Image>, bbox: BBox, mask: BitMask, score: f64) -> Result<Self> {
        check_parts(&frame, &bbox, &mask)?;
        if mask.is_empty() {
            return Err(Error::Empty("predicted mask has no foreground"));
        }
        Ok(Self {
            frame,
            bbox,
            mask,
            score,
        })
    }

    /// The template restated as a prediction on its own frame.
    pub fn from_template(t: &TargetTemplate, score: f64) -> Self {
        Self {
            frame: t.frame.clone(),
            bbox: t.bbox,
            mask: t.mask.clone(),
            score,
        }
    }

    pub fn frame(&self) -> &Arc<Image> {
        &self.frame
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn mask(&self) -> &BitMask {
        &self.mask
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

/// Applies the agent's decision. `Update` adopts the prediction wholesale,
/// `Keep` returns the template untouched.
pub fn apply_decision(t: &TargetTemplate, p: &PredictedResult, action: Action) -> Result<TargetTemplate> {
    if t.frame.dims() != p.frame.dims() {
        return Err(Error::dims(t.frame.dims(), p.frame.dims()));
    }
    Ok(match action {
        Action::Keep => t.clone(),
        Action::Update => TargetTemplate {
            frame: p.frame.clone(),
            bbox: p.bbox,
            mask: p.mask.clone(),
            bootstrap: false,
        },
    })
}

/// The template frame with everything outside the template box set to black.
pub fn compose_template_view(t: &TargetTemplate) -> Image {
    let src = &t.frame;
    let mut out = Image::new(src.width(), src.height(), [0, 0, 0]);
    let (x0, x1) = (t.bbox.x0() as usize * 3, t.bbox.x1() as usize * 3);
    let w3 = src.width() * 3;
    for y in t.bbox.y0() as usize..t.bbox.y1() as usize {
        out.pixels[y * w3 + x0..y * w3 + x1].copy_from_slice(&src.row(y)[x0..x1]);
    }
    out
}

/// The prediction frame with everything outside the predicted mask set to black.
pub fn compose_prediction_view(p: &PredictedResult) -> Image {
    let src = &p.frame;
    let mut out = Image::new(src.width(), src.height(), [0, 0, 0]);
    p.mask.for_each_foreground(|x, y| out.put_pixel(x, y, src.pixel(x, y)));
    out
}
