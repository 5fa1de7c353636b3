//! Sequence storage and the synthetic moving-shapes generator.
//!
//! On disk a sequence is a directory with `frames/%05d.png` (8-bit RGB) and
//! `masks/%05d.png` (indexed, value `k` is object `k`, 0 is background).
//! Frames without a mask file are unannotated. Synthetic sequences also write
//! `distractors/%05d.png` plus `distractors/sources.txt` so that a scripted
//! detector can be rebuilt from disk.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config;
use crate::error::{Error, Result};
use crate::geometry::{BBox, BitMask};
use crate::pipeline::FrameTruth;
use crate::proposals::{DetectorScript, InstanceKind, SceneInstance, SceneTruth, ScriptOverride};
use crate::template::Image;

/// Rendered look-alike of one object, visible on some frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DistractorTrack {
    pub source: u8,
    pub masks: Vec<Option<BitMask>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceData {
    pub name: String,
    pub frames: Vec<Arc<Image>>,
    /// Ascending object ids, all present on the first frame.
    pub object_ids: Vec<u8>,
    /// Per frame: `None` if unannotated, else one entry per object where
    /// `None` means the object is absent.
    pub gt: Vec<Option<Vec<Option<BitMask>>>>,
    /// Tight boxes of the first-frame ground truth, aligned with `object_ids`.
    pub first_boxes: Vec<BBox>,
    pub distractors: Vec<DistractorTrack>,
}

impl SequenceData {
    /// Builds a sequence and derives the first-frame boxes.
    pub fn new(
        name: impl Into<String>,
        frames: Vec<Arc<Image>>,
        object_ids: Vec<u8>,
        gt: Vec<Option<Vec<Option<BitMask>>>>,
        distractors: Vec<DistractorTrack>,
    ) -> Result<Self> {
        let name = name.into();
        let bad = |reason: String| Error::Dataset {
            path: PathBuf::from(&name),
            reason,
        };
        if frames.is_empty() {
            return Err(bad("sequence has no frames".into()));
        }
        let first = match gt.first() {
            Some(Some(g)) => g,
            _ => return Err(bad("first frame has no ground truth".into())),
        };
        let mut first_boxes = Vec::with_capacity(object_ids.len());
        for (id, m) in object_ids.iter().zip(first) {
            let b = m
                .as_ref()
                .and_then(BitMask::tight_box)
                .ok_or_else(|| bad(format!("object {id} missing on the first frame")))?;
            first_boxes.push(b);
        }
        let seq = Self {
            name,
            frames,
            object_ids,
            gt,
            first_boxes,
            distractors,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames.first().map_or((0, 0), |f| f.dims())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::Dataset {
            path: PathBuf::from(&self.name),
            reason,
        };
        if self.frames.is_empty() {
            return Err(bad("sequence has no frames".into()));
        }
        let dims = self.dims();
        if let Some(i) = self.frames.iter().position(|f| f.dims() != dims) {
            return Err(bad(format!("frame {i} size differs from frame 0")));
        }
        if self.object_ids.is_empty() {
            return Err(bad("no objects".into()));
        }
        if self.object_ids.windows(2).any(|w| w[0] >= w[1]) || self.object_ids[0] == 0 {
            return Err(bad("object ids must be ascending and nonzero".into()));
        }
        if self.gt.len() != self.frames.len() {
            return Err(bad(format!(
                "{} ground-truth entries for {} frames",
                self.gt.len(),
                self.frames.len()
            )));
        }
        if self.first_boxes.len() != self.object_ids.len() {
            return Err(bad("first-frame box count differs from object count".into()));
        }
        for (t, g) in self.gt.iter().enumerate() {
            let Some(g) = g else { continue };
            if g.len() != self.object_ids.len() {
                return Err(bad(format!("frame {t}: wrong number of object masks")));
            }
            for m in g.iter().flatten() {
                if m.dims() != dims {
                    return Err(bad(format!("frame {t}: mask size differs from frame size")));
                }
                if m.is_empty() {
                    return Err(bad(format!("frame {t}: present object with empty mask")));
                }
            }
        }
        for d in &self.distractors {
            if d.masks.len() != self.frames.len() {
                return Err(bad("distractor track length differs from frame count".into()));
            }
            if d.masks.iter().flatten().any(|m| m.dims() != dims) {
                return Err(bad("distractor mask size differs from frame size".into()));
            }
        }
        Ok(())
    }

    pub fn truth(&self, t: usize) -> Option<FrameTruth<'_>> {
        self.gt.get(t)?.as_ref().map(|masks| FrameTruth {
            ids: &self.object_ids,
            masks,
        })
    }

    /// `(id, tight box)` for every object visible on annotated frame `t`.
    pub fn present_boxes(&self, t: usize) -> Result<Vec<(u8, BBox)>> {
        let g = self
            .gt
            .get(t)
            .and_then(Option::as_ref)
            .ok_or(Error::MissingGroundTruth { frame: t })?;
        Ok(self
            .object_ids
            .iter()
            .zip(g)
            .filter_map(|(&id, m)| Some((id, m.as_ref()?.tight_box()?)))
            .collect())
    }

    /// Visible instances per frame, for a scripted detector.
    pub fn scene_truth(&self) -> SceneTruth {
        let (width, height) = self.dims();
        let frames = (0..self.frames.len())
            .map(|t| {
                let mut inst = Vec::new();
                if let Some(Some(g)) = self.gt.get(t) {
                    for (&id, m) in self.object_ids.iter().zip(g) {
                        if let Some(m) = m {
                            inst.push(SceneInstance {
                                kind: InstanceKind::Object(id),
                                mask: m.clone(),
                            });
                        }
                    }
                }
                for d in &self.distractors {
                    if let Some(m) = &d.masks[t] {
                        inst.push(SceneInstance {
                            kind: InstanceKind::Distractor { source: d.source },
                            mask: m.clone(),
                        });
                    }
                }
                inst
            })
            .collect();
        SceneTruth { width, height, frames }
    }
}

fn png_err_dec(path: &Path, source: png::DecodingError) -> Error {
    Error::PngDecode {
        context: path.display().to_string(),
        source,
    }
}

fn png_err_enc(path: &Path, source: png::EncodingError) -> Error {
    Error::PngEncode {
        context: path.display().to_string(),
        source,
    }
}

fn dataset_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads any 8-bit-representable PNG as RGB.
pub fn read_rgb_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| png_err_dec(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| dataset_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err_dec(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(dataset_err(path, "unexpanded palette image")),
    };
    let mut rgb = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &data[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            match channels {
                1 | 2 => rgb.extend_from_slice(&[px[0], px[0], px[0]]),
                _ => rgb.extend_from_slice(&px[..3]),
            }
        }
    }
    Image::from_raw(w, h, rgb)
}

pub fn write_rgb_png(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width() as u32, image.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| png_err_enc(path, e))?;
    writer.write_image_data(image.raw()).map_err(|e| png_err_enc(path, e))?;
    writer.finish().map_err(|e| png_err_enc(path, e))
}

/// The usual segmentation-benchmark colormap: bits of the label spread over
/// the high bits of each channel.
pub fn label_palette() -> Vec<u8> {
    let mut pal = Vec::with_capacity(256 * 3);
    for label in 0..256u32 {
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        let mut c = label;
        for j in 0..8 {
            r |= ((c & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        pal.extend_from_slice(&[r, g, b]);
    }
    pal
}

/// Reads an indexed (or 8-bit grayscale) PNG as raw label values.
pub fn read_index_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let dec = png::Decoder::new(BufReader::new(file));
    let mut reader = dec.read_info().map_err(|e| png_err_dec(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| dataset_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err_dec(path, e))?;
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale)
    {
        return Err(dataset_err(path, "label image must be 8-bit indexed or grayscale"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        out.extend_from_slice(&buf[y * info.line_size..y * info.line_size + w]);
    }
    Ok((w, h, out))
}

pub fn write_index_png(path: &Path, width: usize, height: usize, labels: &[u8]) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::LengthMismatch {
            expected: width * height,
            found: labels.len(),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(label_palette());
    let mut writer = enc.write_header().map_err(|e| png_err_enc(path, e))?;
    writer.write_image_data(labels).map_err(|e| png_err_enc(path, e))?;
    writer.finish().map_err(|e| png_err_enc(path, e))
}

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("frames").join(format!("{t:05}.png"))
}

pub fn mask_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("masks").join(format!("{t:05}.png"))
}

fn distractor_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("distractors").join(format!("{t:05}.png"))
}

/// Sorted `%05d.png` indices in `dir`; other files are ignored.
fn numbered_pngs(dir: &Path) -> Result<Vec<usize>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if let Ok(i) = stem.parse::<usize>() {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Splits a label map into one mask per listed label; empty labels are `None`.
pub fn split_labels(width: usize, height: usize, labels: &[u8], ids: &[u8]) -> Vec<Option<BitMask>> {
    let mut masks: Vec<BitMask> = ids.iter().map(|_| BitMask::new(width, height)).collect();
    let mut slot = [usize::MAX; 256];
    for (i, &id) in ids.iter().enumerate() {
        slot[id as usize] = i;
    }
    for y in 0..height {
        for x in 0..width {
            let s = slot[labels[y * width + x] as usize];
            if s != usize::MAX {
                masks[s].set(x, y, true);
            }
        }
    }
    masks
        .into_iter()
        .map(|m| if m.is_empty() { None } else { Some(m) })
        .collect()
}

/// Reads a sequence directory. Objects are the labels present in the first
/// mask; any other label on a later frame is an error.
pub fn load_sequence(dir: &Path) -> Result<SequenceData> {
    let frame_ids = numbered_pngs(&dir.join("frames"))?;
    if frame_ids.is_empty() {
        return Err(dataset_err(&dir.join("frames"), "no frames"));
    }
    for (expect, &i) in frame_ids.iter().enumerate() {
        if i != expect {
            return Err(dataset_err(&frame_path(dir, expect), "missing frame"));
        }
    }
    let n = frame_ids.len();
    let frames = (0..n)
        .map(|t| read_rgb_png(&frame_path(dir, t)).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = frames[0].dims();
    for (t, f) in frames.iter().enumerate() {
        if f.dims() != (w, h) {
            return Err(dataset_err(&frame_path(dir, t), "frame size differs from frame 0"));
        }
    }

    let read_labels = |path: &Path| -> Result<Vec<u8>> {
        let (mw, mh, labels) = read_index_png(path)?;
        if (mw, mh) != (w, h) {
            return Err(dataset_err(path, format!("mask is {mw}x{mh}, frames are {w}x{h}")));
        }
        Ok(labels)
    };

    let first_path = mask_path(dir, 0);
    if !first_path.exists() {
        return Err(dataset_err(&first_path, "missing first-frame mask"));
    }
    let first = read_labels(&first_path)?;
    let mut present = [false; 256];
    for &v in &first {
        present[v as usize] = true;
    }
    let ids: Vec<u8> = (1..=255u8).filter(|&k| present[k as usize]).collect();
    if ids.is_empty() {
        return Err(dataset_err(&first_path, "first-frame mask has no objects"));
    }

    let mut gt = Vec::with_capacity(n);
    for t in 0..n {
        let path = mask_path(dir, t);
        if !path.exists() {
            gt.push(None);
            continue;
        }
        let labels = if t == 0 { first.clone() } else { read_labels(&path)? };
        if let Some(&v) = labels.iter().find(|&&v| v != 0 && !present[v as usize]) {
            return Err(dataset_err(&path, format!("unknown object index {v}")));
        }
        gt.push(Some(split_labels(w, h, &labels, &ids)));
    }
    if let Some(&extra) = numbered_pngs(&dir.join("masks"))?.iter().find(|&&i| i >= n) {
        return Err(dataset_err(&mask_path(dir, extra), "mask without a frame"));
    }

    let distractors = load_distractors(dir, n, w, h)?;
    let name = dir
        .file_name()
        .map_or_else(|| "sequence".to_string(), |s| s.to_string_lossy().into_owned());
    SequenceData::new(name, frames, ids, gt, distractors).map_err(|e| match e {
        Error::Dataset { reason, .. } => dataset_err(dir, reason),
        other => other,
    })
}

fn load_distractors(dir: &Path, n: usize, w: usize, h: usize) -> Result<Vec<DistractorTrack>> {
    let sources_path = dir.join("distractors").join("sources.txt");
    if !sources_path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&sources_path).map_err(|e| Error::io(sources_path.display().to_string(), e))?;
    let sources = text
        .split_whitespace()
        .map(|s| {
            s.parse::<u8>()
                .map_err(|e| dataset_err(&sources_path, format!("bad source `{s}`: {e}")))
        })
        .collect::<Result<Vec<u8>>>()?;
    if sources.len() > 255 {
        return Err(dataset_err(&sources_path, "more than 255 distractors"));
    }
    let mut tracks: Vec<DistractorTrack> = sources
        .iter()
        .map(|&source| DistractorTrack {
            source,
            masks: Vec::with_capacity(n),
        })
        .collect();
    let labels_of: Vec<u8> = (1..=sources.len() as u8).collect();
    for t in 0..n {
        let path = distractor_path(dir, t);
        let masks = if path.exists() {
            let (mw, mh, labels) = read_index_png(&path)?;
            if (mw, mh) != (w, h) {
                return Err(dataset_err(&path, "distractor map size differs from frames"));
            }
            split_labels(w, h, &labels, &labels_of)
        } else {
            vec![None; sources.len()]
        };
        for (track, m) in tracks.iter_mut().zip(masks) {
            track.masks.push(m);
        }
    }
    Ok(tracks)
}

fn labels_from_masks(width: usize, height: usize, masks: &[(u8, &BitMask)]) -> Vec<u8> {
    let mut labels = vec![0u8; width * height];
    for &(id, m) in masks {
        m.for_each_foreground(|x, y| labels[y * width + x] = id);
    }
    labels
}

/// Writes `seq` under `dir`. Refuses to touch an existing sequence unless
/// `overwrite` is set, in which case the old frame, mask, and distractor
/// directories are replaced.
pub fn write_sequence(seq: &SequenceData, dir: &Path, overwrite: bool) -> Result<()> {
    seq.validate()?;
    let subdirs = ["frames", "masks", "distractors"];
    if subdirs.iter().any(|s| dir.join(s).exists()) {
        if !overwrite {
            return Err(dataset_err(dir, "sequence already exists (overwrite not allowed)"));
        }
        for s in subdirs {
            let p = dir.join(s);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
            }
        }
    }
    for s in ["frames", "masks"] {
        let p = dir.join(s);
        fs::create_dir_all(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
    }
    let (w, h) = seq.dims();
    for (t, frame) in seq.frames.iter().enumerate() {
        write_rgb_png(&frame_path(dir, t), frame)?;
        if let Some(g) = &seq.gt[t] {
            let pairs: Vec<(u8, &BitMask)> = seq
                .object_ids
                .iter()
                .zip(g)
                .filter_map(|(&id, m)| Some((id, m.as_ref()?)))
                .collect();
            write_index_png(&mask_path(dir, t), w, h, &labels_from_masks(w, h, &pairs))?;
        }
    }
    if !seq.distractors.is_empty() {
        if seq.distractors.len() > 255 {
            return Err(dataset_err(dir, "more than 255 distractors"));
        }
        let p = dir.join("distractors");
        fs::create_dir_all(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
        let sources: Vec<String> = seq.distractors.iter().map(|d| d.source.to_string()).collect();
        let sp = p.join("sources.txt");
        fs::write(&sp, sources.join("\n") + "\n").map_err(|e| Error::io(sp.display().to_string(), e))?;
        for t in 0..seq.frames.len() {
            let pairs: Vec<(u8, &BitMask)> = seq
                .distractors
                .iter()
                .enumerate()
                .filter_map(|(j, d)| Some((j as u8 + 1, d.masks[t].as_ref()?)))
                .collect();
            if !pairs.is_empty() {
                write_index_png(&distractor_path(dir, t), w, h, &labels_from_masks(w, h, &pairs))?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

impl std::str::FromStr for ShapeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rectangle" => Ok(ShapeKind::Rectangle),
            "ellipse" => Ok(ShapeKind::Ellipse),
            _ => Err(format!("unknown shape `{s}`")),
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Ellipse => "ellipse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
}

/// Piecewise-linear position; clamps outside the waypoint span.
pub fn position_at(path: &[Waypoint], t: usize) -> (f64, f64) {
    let Some(first) = path.first() else {
        return (0.0, 0.0);
    };
    if t <= first.frame {
        return (first.x, first.y);
    }
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        if t <= b.frame {
            let s = if b.frame == a.frame {
                1.0
            } else {
                (t - a.frame) as f64 / (b.frame - a.frame) as f64
            };
            return (a.x + s * (b.x - a.x), a.y + s * (b.y - a.y));
        }
    }
    let last = path[path.len() - 1];
    (last.x, last.y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub shape: ShapeKind,
    pub half_w: f64,
    pub half_h: f64,
    pub color: [u8; 3],
    pub path: Vec<Waypoint>,
}

/// A recolored copy of object `source`'s shape, visible from its first to its
/// last waypoint frame inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct DistractorSpec {
    pub source: u8,
    pub color: [u8; 3],
    pub path: Vec<Waypoint>,
}

/// Object `object` is not rendered on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub object: u8,
    pub start: usize,
    pub end: usize,
}

/// An opaque gray rectangle shown on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OccluderSpec {
    pub rect: BBox,
    pub start: usize,
    pub end: usize,
}

pub const OBJECT_COLORS: [[u8; 3]; 6] = [
    [235, 200, 60],
    [80, 215, 240],
    [240, 120, 200],
    [150, 240, 110],
    [250, 160, 80],
    [200, 190, 255],
];

pub const DISTRACTOR_COLORS: [[u8; 3]; 4] = [[150, 60, 60], [60, 130, 70], [70, 80, 160], [140, 110, 40]];

pub const OCCLUDER_COLOR: [u8; 3] = [128, 128, 128];

fn background(x: usize, y: usize) -> [u8; 3] {
    let g = 40 + 10 * (((x / 32) + (y / 32)) % 3) as u8;
    [g, g, g]
}

/// Generator settings. Explicit specs come first; the counts are totals and
/// any shortfall is filled with seeded random items.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
    /// Shape of randomly generated objects.
    pub shape: ShapeKind,
    pub objects: usize,
    pub occluders: usize,
    pub disappearances: usize,
    pub distractors: usize,
    pub object_specs: Vec<ObjectSpec>,
    pub occluder_specs: Vec<OccluderSpec>,
    pub absences: Vec<Interval>,
    pub distractor_specs: Vec<DistractorSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            width: 256,
            height: 256,
            frames: 40,
            seed: 0,
            shape: ShapeKind::Ellipse,
            objects: 2,
            occluders: 1,
            disappearances: 0,
            distractors: 1,
            object_specs: Vec::new(),
            occluder_specs: Vec::new(),
            absences: Vec::new(),
            distractor_specs: Vec::new(),
        }
    }
}

fn parse_color(key: &str, s: &str) -> Result<[u8; 3]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::invalid(key, format!("color `{s}` must be r,g,b")));
    }
    Ok([
        config::value(key, parts[0])?,
        config::value(key, parts[1])?,
        config::value(key, parts[2])?,
    ])
}

fn parse_path(key: &str, fields: &[&str]) -> Result<Vec<Waypoint>> {
    fields
        .iter()
        .map(|f| {
            let p: Vec<&str> = f.split(':').collect();
            if p.len() != 3 {
                return Err(Error::invalid(key, format!("waypoint `{f}` must be frame:x:y")));
            }
            Ok(Waypoint {
                frame: config::value(key, p[0])?,
                x: config::value(key, p[1])?,
                y: config::value(key, p[2])?,
            })
        })
        .collect()
}

fn fmt_path(path: &[Waypoint]) -> String {
    path.iter()
        .map(|w| format!("{}:{}:{}", w.frame, w.x, w.y))
        .collect::<Vec<_>>()
        .join(" ")
}

fn fmt_color(c: [u8; 3]) -> String {
    format!("{},{},{}", c[0], c[1], c[2])
}

impl SynthConfig {
    /// Applies one setting. `object`, `occluder`, `absent` and `distractor`
    /// append explicit specs.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "name" => self.name = value.to_string(),
            "width" => self.width = config::value(key, value)?,
            "height" => self.height = config::value(key, value)?,
            "frames" => self.frames = config::value(key, value)?,
            "seed" => self.seed = config::value(key, value)?,
            "shape" => self.shape = config::value(key, value)?,
            "objects" => self.objects = config::value(key, value)?,
            "occluders" => self.occluders = config::value(key, value)?,
            "disappearances" => self.disappearances = config::value(key, value)?,
            "distractors" => self.distractors = config::value(key, value)?,
            "object" => {
                // shape half_w half_h r,g,b frame:x:y ...
                let f: Vec<&str> = value.split_whitespace().collect();
                if f.len() < 5 {
                    return Err(Error::invalid(key, "expected shape half_w half_h color waypoints..."));
                }
                self.object_specs.push(ObjectSpec {
                    shape: config::value(key, f[0])?,
                    half_w: config::value(key, f[1])?,
                    half_h: config::value(key, f[2])?,
                    color: parse_color(key, f[3])?,
                    path: parse_path(key, &f[4..])?,
                });
            }
            "distractor" => {
                // source r,g,b frame:x:y ...
                let f: Vec<&str> = value.split_whitespace().collect();
                if f.len() < 3 {
                    return Err(Error::invalid(key, "expected source color waypoints..."));
                }
                self.distractor_specs.push(DistractorSpec {
                    source: config::value(key, f[0])?,
                    color: parse_color(key, f[1])?,
                    path: parse_path(key, &f[2..])?,
                });
            }
            "occluder" => {
                let f = config::fields(key, value, 6)?;
                let c: Vec<i32> = f[..4].iter().map(|v| config::value(key, v)).collect::<Result<_>>()?;
                self.occluder_specs.push(OccluderSpec {
                    rect: BBox::new(c[0], c[1], c[2], c[3])?,
                    start: config::value(key, f[4])?,
                    end: config::value(key, f[5])?,
                });
            }
            "absent" => {
                let f = config::fields(key, value, 3)?;
                self.absences.push(Interval {
                    object: config::value(key, f[0])?,
                    start: config::value(key, f[1])?,
                    end: config::value(key, f[2])?,
                });
            }
            _ => return Err(config::unknown(key)),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = [
            ("name", self.name.clone()),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("frames", self.frames.to_string()),
            ("seed", self.seed.to_string()),
            ("shape", self.shape.to_string()),
            ("objects", self.objects.to_string()),
            ("occluders", self.occluders.to_string()),
            ("disappearances", self.disappearances.to_string()),
            ("distractors", self.distractors.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        for o in &self.object_specs {
            out.push((
                "object".into(),
                format!(
                    "{} {} {} {} {}",
                    o.shape,
                    o.half_w,
                    o.half_h,
                    fmt_color(o.color),
                    fmt_path(&o.path)
                ),
            ));
        }
        for d in &self.distractor_specs {
            out.push((
                "distractor".into(),
                format!("{} {} {}", d.source, fmt_color(d.color), fmt_path(&d.path)),
            ));
        }
        for o in &self.occluder_specs {
            out.push((
                "occluder".into(),
                format!(
                    "{} {} {} {} {} {}",
                    o.rect.x0(),
                    o.rect.y0(),
                    o.rect.x1(),
                    o.rect.y1(),
                    o.start,
                    o.end
                ),
            ));
        }
        for a in &self.absences {
            out.push(("absent".into(), format!("{} {} {}", a.object, a.start, a.end)));
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for e in config::parse(text)? {
            c.set(&e.key, &e.value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn object_count(&self) -> usize {
        self.objects.max(self.object_specs.len())
    }

    pub fn validate(&self) -> Result<()> {
        if !(8..=4096).contains(&self.width) || !(8..=4096).contains(&self.height) {
            return Err(Error::invalid("synth.size", "width and height must be in 8..=4096"));
        }
        if self.frames == 0 {
            return Err(Error::invalid("synth.frames", "must be >= 1"));
        }
        let n = self.object_count();
        if n == 0 || n > 255 {
            return Err(Error::invalid("synth.objects", "must be in 1..=255"));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let check_path = |key: &str, path: &[Waypoint]| -> Result<()> {
            if path.is_empty() {
                return Err(Error::invalid(key, "needs at least one waypoint"));
            }
            for p in path {
                if p.frame >= self.frames || !(0.0..=w).contains(&p.x) || !(0.0..=h).contains(&p.y) {
                    return Err(Error::invalid(
                        key,
                        format!("waypoint {}:{}:{} outside the sequence", p.frame, p.x, p.y),
                    ));
                }
            }
            if path.windows(2).any(|p| p[0].frame > p[1].frame) {
                return Err(Error::invalid(key, "waypoint frames must be nondecreasing"));
            }
            Ok(())
        };
        for o in &self.object_specs {
            check_path("synth.object", &o.path)?;
            if !(o.half_w > 0.0 && o.half_h > 0.0 && o.half_w.is_finite() && o.half_h.is_finite()) {
                return Err(Error::invalid("synth.object", "half sizes must be positive"));
            }
        }
        for d in &self.distractor_specs {
            check_path("synth.distractor", &d.path)?;
            if d.source == 0 || d.source as usize > n {
                return Err(Error::invalid(
                    "synth.distractor",
                    format!("unknown source {}", d.source),
                ));
            }
        }
        for o in &self.occluder_specs {
            if o.start >= o.end || o.end > self.frames || !o.rect.is_within(self.width, self.height) {
                return Err(Error::invalid(
                    "synth.occluder",
                    "interval or rectangle outside the sequence",
                ));
            }
        }
        for a in &self.absences {
            if a.object == 0 || a.object as usize > n {
                return Err(Error::invalid("synth.absent", format!("unknown object {}", a.object)));
            }
            if a.start == 0 || a.start >= a.end || a.end > self.frames {
                return Err(Error::invalid(
                    "synth.absent",
                    format!("[{}, {}) must lie within frames 1..{}", a.start, a.end, self.frames),
                ));
            }
        }
        if self.disappearances > self.absences.len() && self.frames < 8 {
            return Err(Error::invalid(
                "synth.disappearances",
                "random intervals need >= 8 frames",
            ));
        }
        Ok(())
    }

    /// Fills every count with seeded random specs.
    fn resolve(&self) -> Resolved {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (w, h) = (self.width as f64, self.height as f64);
        let min_dim = w.min(h);
        let last = self.frames - 1;

        let mut objects = self.object_specs.clone();
        while objects.len() < self.object_count() {
            let k = objects.len();
            let half_w = rng.gen_range(min_dim / 20.0..=min_dim / 10.0);
            let half_h = rng.gen_range(min_dim / 20.0..=min_dim / 10.0);
            // Per-frame motion stays under 0.4 of the smaller half-size.
            let step = 0.4 * half_w.min(half_h);
            let mut x = rng.gen_range(half_w..=w - half_w);
            let mut y = rng.gen_range(half_h..=h - half_h);
            let mut path = vec![Waypoint { frame: 0, x, y }];
            for i in 1..4 {
                let frame = i * last / 3;
                let reach = step * (frame - path[i - 1].frame) as f64;
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let dist = rng.gen_range(0.0..=reach);
                x = (x + dist * angle.cos()).clamp(half_w, w - half_w);
                y = (y + dist * angle.sin()).clamp(half_h, h - half_h);
                path.push(Waypoint { frame, x, y });
            }
            objects.push(ObjectSpec {
                shape: self.shape,
                half_w,
                half_h,
                color: OBJECT_COLORS[k % OBJECT_COLORS.len()],
                path,
            });
        }
        let n = objects.len();

        let mut absences = self.absences.clone();
        while absences.len() < self.disappearances {
            let len = rng.gen_range(3..=6usize).min(self.frames - 2);
            let start = rng.gen_range(1..=self.frames - len);
            absences.push(Interval {
                object: rng.gen_range(1..=n as u8),
                start,
                end: start + len,
            });
        }

        let mut occluders = self.occluder_specs.clone();
        while occluders.len() < self.occluders {
            let ow = rng.gen_range(self.width / 8..=self.width / 5).max(1) as i32;
            let oh = rng.gen_range(self.height / 8..=self.height / 5).max(1) as i32;
            let x0 = rng.gen_range(0..=self.width as i32 - ow);
            let y0 = rng.gen_range(0..=self.height as i32 - oh);
            let start = rng.gen_range(1..self.frames.max(2));
            let end = (start + rng.gen_range(4..=8)).min(self.frames);
            occluders.push(OccluderSpec {
                rect: BBox::new(x0, y0, x0 + ow, y0 + oh).expect("positive size"),
                start: start.min(end.saturating_sub(1)),
                end,
            });
        }

        let mut distractors = self.distractor_specs.clone();
        while distractors.len() < self.distractors {
            let j = distractors.len();
            let source = rng.gen_range(1..=n as u8);
            let src = &objects[source as usize - 1];
            let start = rng.gen_range(0..=last / 2);
            let end = (start + self.frames / 2).min(last);
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let reach = 2.5 * src.half_w.max(src.half_h);
            let (dx, dy) = (angle.cos() * reach, angle.sin() * reach);
            let clamp = |x: f64, y: f64| Waypoint {
                frame: 0,
                x: x.clamp(0.0, w),
                y: y.clamp(0.0, h),
            };
            let (sx, sy) = position_at(&src.path, start);
            let (ex, ey) = position_at(&src.path, end);
            let a = Waypoint {
                frame: start,
                ..clamp(sx + dx, sy + dy)
            };
            let b = Waypoint {
                frame: end,
                ..clamp(ex - dx, ey - dy)
            };
            distractors.push(DistractorSpec {
                source,
                color: DISTRACTOR_COLORS[j % DISTRACTOR_COLORS.len()],
                path: vec![a, b],
            });
        }

        Resolved {
            objects,
            absences,
            occluders,
            distractors,
        }
    }
}

struct Resolved {
    objects: Vec<ObjectSpec>,
    absences: Vec<Interval>,
    occluders: Vec<OccluderSpec>,
    distractors: Vec<DistractorSpec>,
}

/// Calls `f` on every pixel whose center lies inside the shape.
#[allow(clippy::too_many_arguments)]
pub fn rasterize_shape(
    shape: ShapeKind,
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    width: usize,
    height: usize,
    mut f: impl FnMut(usize, usize),
) {
    let x0 = (cx - half_w).floor().max(0.0) as usize;
    let y0 = (cy - half_h).floor().max(0.0) as usize;
    let x1 = ((cx + half_w).ceil().max(0.0) as usize).min(width);
    let y1 = ((cy + half_h).ceil().max(0.0) as usize).min(height);
    for y in y0..y1 {
        let dy = y as f64 + 0.5 - cy;
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - cx;
            let inside = match shape {
                ShapeKind::Rectangle => dx.abs() <= half_w && dy.abs() <= half_h,
                ShapeKind::Ellipse => (dx / half_w).powi(2) + (dy / half_h).powi(2) <= 1.0,
            };
            if inside {
                f(x, y);
            }
        }
    }
}

const OWNER_BG: u16 = 0;
const OWNER_DISTRACTOR: u16 = 1000;
const OWNER_OCCLUDER: u16 = 2000;

/// Renders a synthetic sequence. Distractors are drawn below objects and
/// occluders above everything; ground truth is each object's visible support.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SequenceData> {
    cfg.validate()?;
    let r = cfg.resolve();
    let (w, h) = (cfg.width, cfg.height);
    let n = r.objects.len();
    let ids: Vec<u8> = (1..=n as u8).collect();
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut gt = Vec::with_capacity(cfg.frames);
    let mut distractors: Vec<DistractorTrack> = r
        .distractors
        .iter()
        .map(|d| DistractorTrack {
            source: d.source,
            masks: Vec::with_capacity(cfg.frames),
        })
        .collect();
    let mut owner = vec![OWNER_BG; w * h];

    for t in 0..cfg.frames {
        owner.fill(OWNER_BG);
        for (j, d) in r.distractors.iter().enumerate() {
            let (first, last) = (d.path[0].frame, d.path[d.path.len() - 1].frame);
            if t < first || t > last {
                continue;
            }
            let src = &r.objects[d.source as usize - 1];
            let (cx, cy) = position_at(&d.path, t);
            rasterize_shape(src.shape, cx, cy, src.half_w, src.half_h, w, h, |x, y| {
                owner[y * w + x] = OWNER_DISTRACTOR + j as u16
            });
        }
        for (k, o) in r.objects.iter().enumerate() {
            let id = k as u8 + 1;
            if r.absences
                .iter()
                .any(|a| a.object == id && (a.start..a.end).contains(&t))
            {
                continue;
            }
            let (cx, cy) = position_at(&o.path, t);
            rasterize_shape(o.shape, cx, cy, o.half_w, o.half_h, w, h, |x, y| {
                owner[y * w + x] = id as u16
            });
        }
        for oc in &r.occluders {
            if (oc.start..oc.end).contains(&t) {
                for y in oc.rect.y0() as usize..oc.rect.y1() as usize {
                    owner[y * w + oc.rect.x0() as usize..y * w + oc.rect.x1() as usize].fill(OWNER_OCCLUDER);
                }
            }
        }

        let image = Image::from_fn(w, h, |x, y| match owner[y * w + x] {
            OWNER_BG => background(x, y),
            OWNER_OCCLUDER => OCCLUDER_COLOR,
            v if v >= OWNER_DISTRACTOR => r.distractors[(v - OWNER_DISTRACTOR) as usize].color,
            v => r.objects[v as usize - 1].color,
        });
        frames.push(Arc::new(image));

        let mut masks: Vec<BitMask> = (0..n).map(|_| BitMask::new(w, h)).collect();
        let mut dmasks: Vec<BitMask> = (0..r.distractors.len()).map(|_| BitMask::new(w, h)).collect();
        for y in 0..h {
            for x in 0..w {
                match owner[y * w + x] {
                    OWNER_BG | OWNER_OCCLUDER => {}
                    v if v >= OWNER_DISTRACTOR => dmasks[(v - OWNER_DISTRACTOR) as usize].set(x, y, true),
                    v => masks[v as usize - 1].set(x, y, true),
                }
            }
        }
        let present = |m: BitMask| if m.is_empty() { None } else { Some(m) };
        let frame_gt: Vec<Option<BitMask>> = masks.into_iter().map(present).collect();
        if t == 0 {
            if let Some(k) = frame_gt.iter().position(Option::is_none) {
                return Err(Error::invalid(
                    "synth.objects",
                    format!("object {} is not visible on the first frame", k + 1),
                ));
            }
        }
        gt.push(Some(frame_gt));
        for (track, m) in distractors.iter_mut().zip(dmasks) {
            track.masks.push(present(m));
        }
    }
    SequenceData::new(cfg.name.clone(), frames, ids, gt, distractors)
}

pub const DRIFT_SEED: u64 = 7;
pub const DRIFT_SEQUENCES: usize = 10;

/// Frames on which a swap distractor stays visible.
const SWAP_VISIBLE: usize = 8;

/// Shape of the swap events in a drift dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriftParams {
    /// Swap events per sequence.
    pub events: usize,
    /// Frames at the start of a swap on which the true object goes undetected.
    pub dropout: usize,
    /// Cycle the swapped object through all objects instead of only object 1.
    pub every_object: bool,
}

impl DriftParams {
    /// The pinned benchmark: two swaps of object 1 per sequence.
    pub const BENCHMARK: Self = Self {
        events: 2,
        dropout: 2,
        every_object: false,
    };

    pub fn validate(&self) -> Result<()> {
        if self.events == 0 || self.events > 13 {
            return Err(Error::invalid("events", "must be in 1..=13"));
        }
        if self.dropout == 0 || self.dropout >= SWAP_VISIBLE {
            return Err(Error::invalid("dropout", format!("must be in 1..{SWAP_VISIBLE}")));
        }
        Ok(())
    }
}
/// Distractor speed away from the object, pixels per frame.
const SWAP_SPEED: f64 = 6.0;

/// Configs and detector scripts of the identity-swap drift benchmark.
///
/// Each sequence has one or two slow objects. On every swap event a recolored
/// copy of an object appears overlapping it while the detector misses the
/// true object, then moves away. Accepting the copy drags the template along.
pub fn drift_configs(seed: u64, count: usize, params: DriftParams) -> Result<Vec<(SynthConfig, DetectorScript)>> {
    params.validate()?;
    let events = params.events;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        let (w, h, frames) = (256usize, 256usize, 40usize);
        let (wf, hf) = (w as f64, h as f64);
        let n = 1 + i % 2;
        let mut cfg = SynthConfig {
            name: format!("drift_{i:02}"),
            width: w,
            height: h,
            frames,
            seed: rng.gen(),
            objects: n,
            occluders: 0,
            disappearances: 0,
            distractors: 0,
            ..Default::default()
        };
        for k in 0..n {
            let shape = if rng.gen_bool(0.5) {
                ShapeKind::Ellipse
            } else {
                ShapeKind::Rectangle
            };
            let half_w = rng.gen_range(16.0..24.0);
            let half_h = rng.gen_range(16.0..24.0);
            let margin_x = half_w + 70.0;
            let margin_y = half_h + 70.0;
            let mut x = rng.gen_range(margin_x..wf - margin_x);
            let mut y = rng.gen_range(margin_y..hf - margin_y);
            let mut path = vec![Waypoint { frame: 0, x, y }];
            for f in [13, 26, 39] {
                x = (x + rng.gen_range(-30.0..30.0)).clamp(margin_x, wf - margin_x);
                y = (y + rng.gen_range(-30.0..30.0)).clamp(margin_y, hf - margin_y);
                path.push(Waypoint { frame: f, x, y });
            }
            cfg.object_specs.push(ObjectSpec {
                shape,
                half_w,
                half_h,
                color: OBJECT_COLORS[(i + k) % OBJECT_COLORS.len()],
                path,
            });
        }

        let mut script = DetectorScript {
            seed: rng.gen(),
            box_jitter: 0.04,
            ..Default::default()
        };
        let mut distractors = Vec::new();
        // Swap starts are spread over [4, 30) so every copy leaves the frame
        // window before the sequence ends.
        let span = 26 / events;
        for j in 0..events {
            let k = if params.every_object { j % n } else { 0 };
            let target = &cfg.object_specs[k];
            let (hw, hh) = (target.half_w, target.half_h);
            let lo = 4 + j * span;
            let start = rng.gen_range(lo..=lo + span / 2);
            let end = start + SWAP_VISIBLE - 1;
            let (tx, ty) = position_at(&target.path, start);
            // Head toward the frame center so the copy stays on screen.
            let base = (hf / 2.0 - ty).atan2(wf / 2.0 - tx);
            let angle = base + rng.gen_range(-0.6..0.6);
            let (ux, uy) = (angle.cos(), angle.sin());
            let offset = 0.6 * 2.0 * hw.max(hh);
            let travel = SWAP_SPEED * (end - start) as f64;
            let a = Waypoint {
                frame: start,
                x: (tx + ux * offset).clamp(0.0, wf),
                y: (ty + uy * offset).clamp(0.0, hf),
            };
            let b = Waypoint {
                frame: end,
                x: (a.x + ux * travel).clamp(0.0, wf),
                y: (a.y + uy * travel).clamp(0.0, hf),
            };
            distractors.push(DistractorSpec {
                source: k as u8 + 1,
                color: DISTRACTOR_COLORS[(i + j) % DISTRACTOR_COLORS.len()],
                path: vec![a, b],
            });
            script.overrides.push(ScriptOverride {
                object: k as u8 + 1,
                start,
                end: start + params.dropout,
                dropout: Some(1.0),
                ..Default::default()
            });
        }
        cfg.distractors = distractors.len();
        cfg.distractor_specs = distractors;
        out.push((cfg, script));
    }
    Ok(out)
}

/// Rendered drift sequences with their detector scripts.
pub fn drift_benchmark(seed: u64, count: usize, params: DriftParams) -> Result<Vec<(SequenceData, DetectorScript)>> {
    drift_configs(seed, count, params)?
        .into_iter()
        .map(|(cfg, script)| Ok((generate_synthetic(&cfg)?, script)))
        .collect()
}
