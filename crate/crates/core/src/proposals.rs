//! Candidate detections.
//!
//! [`ScriptedDetector`] stands in for an instance segmentation network: it
//! perturbs ground-truth instances according to a [`DetectorScript`].
//! [`FileProposals`] replays proposals stored as `props_%05d.txt` files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config;
use crate::error::{Error, Result};
use crate::geometry::{mask_iou, BBox, BitMask};
use crate::template::Image;

/// One candidate detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub mask: BitMask,
    pub confidence: f64,
}

impl Proposal {
    /// Checks that the confidence is in `[0, 1]` and that the box covers the
    /// mask foreground.
    pub fn new(bbox: BBox, mask: BitMask, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid("confidence", format!("{confidence} not in [0,1]")));
        }
        if let Some(tight) = mask.tight_box() {
            if !bbox.contains(&tight) {
                return Err(Error::invalid("box", "does not cover mask foreground"));
            }
        }
        Ok(Self { bbox, mask, confidence })
    }

    /// Restricts the proposal to `region`; `None` if no foreground remains.
    pub fn clipped(&self, region: &BBox) -> Option<Proposal> {
        let bbox = self.bbox.intersect(region)?;
        let mask = self.mask.clip_to_box(region);
        if mask.is_empty() {
            return None;
        }
        Some(Proposal {
            bbox,
            mask,
            confidence: self.confidence,
        })
    }
}

/// Anything that turns a frame (or a region of it) into candidate detections.
pub trait ProposalSource: Send + Sync {
    fn detect_region(&self, frame: &Image, region: &BBox, frame_index: usize) -> Result<Vec<Proposal>>;

    fn detect_full_frame(&self, frame: &Image, frame_index: usize) -> Result<Vec<Proposal>> {
        let whole = BBox::frame(frame.width(), frame.height())?;
        self.detect_region(frame, &whole, frame_index)
    }
}

/// What a ground-truth instance in the scene is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceKind {
    /// A tracked object with the given id.
    Object(u8),
    /// A rendered look-alike of the object with the given id.
    Distractor { source: u8 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstance {
    pub kind: InstanceKind,
    pub mask: BitMask,
}

/// Every visible instance per frame, which the scripted detector perturbs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneTruth {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<SceneInstance>>,
}

impl SceneTruth {
    fn object_mask(&self, frame: usize, id: u8) -> Option<&BitMask> {
        self.frames.get(frame)?.iter().find_map(|inst| match inst.kind {
            InstanceKind::Object(k) if k == id => Some(&inst.mask),
            _ => None,
        })
    }
}

/// The object's true proposal is replaced by a displaced clone on `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapEvent {
    pub object: u8,
    pub start: usize,
    pub end: usize,
    pub dx: i32,
    pub dy: i32,
}

/// Per-object, per-interval parameter overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScriptOverride {
    pub object: u8,
    pub start: usize,
    pub end: usize,
    pub box_jitter: Option<f64>,
    pub mask_radius: Option<i32>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorScript {
    pub seed: u64,
    /// Max per-side box offset as a fraction of box width/height.
    pub box_jitter: f64,
    /// Mask dilation (> 0) or erosion (< 0) radius in pixels.
    pub mask_radius: i32,
    pub dropout: f64,
    /// Random shifted clones of true objects emitted per frame.
    pub distractors: usize,
    /// Whether rendered distractors in the scene are detected.
    pub detect_scene_distractors: bool,
    pub swaps: Vec<SwapEvent>,
    pub overrides: Vec<ScriptOverride>,
    /// Maximum proposals returned per call.
    pub cap: usize,
}

impl Default for DetectorScript {
    fn default() -> Self {
        Self {
            seed: 0,
            box_jitter: 0.05,
            mask_radius: 0,
            dropout: 0.0,
            distractors: 0,
            detect_scene_distractors: true,
            swaps: Vec::new(),
            overrides: Vec::new(),
            cap: 20,
        }
    }
}

impl DetectorScript {
    /// No perturbation at all: proposals are the ground-truth objects.
    pub fn identity(seed: u64) -> Self {
        Self {
            seed,
            box_jitter: 0.0,
            mask_radius: 0,
            dropout: 0.0,
            distractors: 0,
            detect_scene_distractors: false,
            swaps: Vec::new(),
            overrides: Vec::new(),
            cap: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{p} not in [0,1]")))
            }
        };
        prob("detector.dropout", self.dropout)?;
        if !(self.box_jitter >= 0.0 && self.box_jitter.is_finite()) {
            return Err(Error::invalid("detector.box_jitter", "must be finite and >= 0"));
        }
        for o in &self.overrides {
            if let Some(p) = o.dropout {
                prob("override.dropout", p)?;
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting. `swap` and `override` append.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = config::value(key, value)?,
            "box_jitter" => self.box_jitter = config::value(key, value)?,
            "mask_radius" => self.mask_radius = config::value(key, value)?,
            "dropout" => self.dropout = config::value(key, value)?,
            "distractors" => self.distractors = config::value(key, value)?,
            "detect_scene_distractors" => self.detect_scene_distractors = config::value(key, value)?,
            "cap" => self.cap = config::value(key, value)?,
            "swap" => {
                let f = config::fields(key, value, 5)?;
                self.swaps.push(SwapEvent {
                    object: config::value(key, f[0])?,
                    start: config::value(key, f[1])?,
                    end: config::value(key, f[2])?,
                    dx: config::value(key, f[3])?,
                    dy: config::value(key, f[4])?,
                });
            }
            "override" => {
                let f = config::fields(key, value, 6)?;
                fn opt<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>>
                where
                    T::Err: std::fmt::Display,
                {
                    if v == "-" {
                        Ok(None)
                    } else {
                        config::value(key, v).map(Some)
                    }
                }
                self.overrides.push(ScriptOverride {
                    object: config::value(key, f[0])?,
                    start: config::value(key, f[1])?,
                    end: config::value(key, f[2])?,
                    box_jitter: opt(key, f[3])?,
                    mask_radius: opt(key, f[4])?,
                    dropout: opt(key, f[5])?,
                });
            }
            _ => return Err(config::unknown(key)),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("seed".to_string(), self.seed.to_string()),
            ("box_jitter".to_string(), self.box_jitter.to_string()),
            ("mask_radius".to_string(), self.mask_radius.to_string()),
            ("dropout".to_string(), self.dropout.to_string()),
            ("distractors".to_string(), self.distractors.to_string()),
            (
                "detect_scene_distractors".to_string(),
                self.detect_scene_distractors.to_string(),
            ),
            ("cap".to_string(), self.cap.to_string()),
        ];
        for s in &self.swaps {
            out.push((
                "swap".to_string(),
                format!("{} {} {} {} {}", s.object, s.start, s.end, s.dx, s.dy),
            ));
        }
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map_or_else(|| "-".to_string(), T::to_string)
        }
        for o in &self.overrides {
            out.push((
                "override".to_string(),
                format!(
                    "{} {} {} {} {} {}",
                    o.object,
                    o.start,
                    o.end,
                    opt(&o.box_jitter),
                    opt(&o.mask_radius),
                    opt(&o.dropout)
                ),
            ));
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Starts from the defaults and applies every entry of `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for e in config::parse(text)? {
            s.set(&e.key, &e.value)?;
        }
        s.validate()?;
        Ok(s)
    }

    fn params_for(&self, object: u8, frame: usize) -> (f64, i32, f64) {
        let mut params = (self.box_jitter, self.mask_radius, self.dropout);
        for o in &self.overrides {
            if o.object == object && (o.start..o.end).contains(&frame) {
                params.0 = o.box_jitter.unwrap_or(params.0);
                params.1 = o.mask_radius.unwrap_or(params.1);
                params.2 = o.dropout.unwrap_or(params.2);
            }
        }
        params
    }

    fn swap_for(&self, object: u8, frame: usize) -> Option<&SwapEvent> {
        self.swaps
            .iter()
            .find(|s| s.object == object && (s.start..s.end).contains(&frame))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn instance_rng(seed: u64, frame: usize, salt: u64) -> ChaCha8Rng {
    let s = splitmix(splitmix(seed ^ splitmix(frame as u64)) ^ salt);
    ChaCha8Rng::seed_from_u64(s)
}

fn jitter_box(b: &BBox, jitter: f64, width: usize, height: usize, rng: &mut ChaCha8Rng) -> BBox {
    let mut off = [0f64; 4];
    for o in &mut off {
        *o = rng.gen_range(-1.0..=1.0);
    }
    if jitter == 0.0 {
        return *b;
    }
    let (w, h) = (b.width() as f64, b.height() as f64);
    let moved = BBox::new(
        b.x0() + (off[0] * jitter * w).round() as i32,
        b.y0() + (off[1] * jitter * h).round() as i32,
        b.x1() + (off[2] * jitter * w).round() as i32,
        b.y1() + (off[3] * jitter * h).round() as i32,
    );
    moved.ok().and_then(|m| m.clamp_to(width, height)).unwrap_or(*b)
}

/// Deterministic stand-in for an instance segmentation network.
#[derive(Debug, Clone)]
pub struct ScriptedDetector {
    script: DetectorScript,
    scene: Arc<SceneTruth>,
}

impl ScriptedDetector {
    pub fn new(script: DetectorScript, scene: Arc<SceneTruth>) -> Result<Self> {
        script.validate()?;
        Ok(Self { script, scene })
    }

    pub fn script(&self) -> &DetectorScript {
        &self.script
    }

    /// Full-frame proposals before region clipping and capping.
    fn generate(&self, frame_index: usize) -> Vec<Proposal> {
        let (w, h) = (self.scene.width, self.scene.height);
        let Some(instances) = self.scene.frames.get(frame_index) else {
            return Vec::new();
        };
        let s = &self.script;
        let mut out = Vec::new();
        let finish = |mask: BitMask, jitter: f64, rng: &mut ChaCha8Rng, reference: &BitMask, scale: f64| {
            let tight = mask.tight_box()?;
            let bbox = jitter_box(&tight, jitter, w, h, rng);
            let mask = mask.clip_to_box(&bbox);
            if mask.is_empty() {
                return None;
            }
            let confidence = scale * mask_iou(&mask, reference).ok()?;
            Some(Proposal { bbox, mask, confidence })
        };

        for (i, inst) in instances.iter().enumerate() {
            let mut rng = instance_rng(s.seed, frame_index, i as u64);
            let roll: f64 = rng.gen();
            match inst.kind {
                InstanceKind::Object(id) => {
                    let (jitter, radius, dropout) = s.params_for(id, frame_index);
                    if roll < dropout {
                        continue;
                    }
                    let prop = match s.swap_for(id, frame_index) {
                        Some(swap) => {
                            let clone = inst.mask.shifted(swap.dx, swap.dy);
                            finish(clone, jitter, &mut rng, &inst.mask, 0.5)
                        }
                        None => finish(inst.mask.morph(radius), jitter, &mut rng, &inst.mask, 1.0),
                    };
                    out.extend(prop);
                }
                InstanceKind::Distractor { source } => {
                    if !s.detect_scene_distractors {
                        continue;
                    }
                    let empty = BitMask::new(w, h);
                    let reference = self.scene.object_mask(frame_index, source).unwrap_or(&empty);
                    out.extend(finish(
                        inst.mask.morph(s.mask_radius),
                        s.box_jitter,
                        &mut rng,
                        reference,
                        0.5,
                    ));
                }
            }
        }

        let objects: Vec<&SceneInstance> = instances
            .iter()
            .filter(|i| matches!(i.kind, InstanceKind::Object(_)))
            .collect();
        if !objects.is_empty() {
            for j in 0..s.distractors {
                let mut rng = instance_rng(s.seed, frame_index, 0x1_0000 + j as u64);
                let src = objects[rng.gen_range(0..objects.len())];
                let Some(tb) = src.mask.tight_box() else { continue };
                let mut shift = |extent: i32| {
                    let mag = rng.gen_range(0.5..1.5) * extent as f64;
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    (sign * mag).round() as i32
                };
                let dx = shift(tb.width());
                let dy = shift(tb.height());
                let clone = src.mask.shifted(dx, dy);
                out.extend(finish(clone, s.box_jitter, &mut rng, &src.mask, 0.5));
            }
        }
        out
    }
}

impl ProposalSource for ScriptedDetector {
    fn detect_region(&self, frame: &Image, region: &BBox, frame_index: usize) -> Result<Vec<Proposal>> {
        region.check_within(frame.width(), frame.height())?;
        if frame.dims() != (self.scene.width, self.scene.height) {
            return Err(Error::dims(frame.dims(), (self.scene.width, self.scene.height)));
        }
        let mut props: Vec<Proposal> = self
            .generate(frame_index)
            .iter()
            .filter_map(|p| p.clipped(region))
            .collect();
        props.truncate(self.script.cap);
        Ok(props)
    }
}

pub fn proposal_file(dir: &Path, frame_index: usize) -> PathBuf {
    dir.join(format!("props_{frame_index:05}.txt"))
}

/// Writes proposals in the `confidence x0 y0 x1 y1 rle` line format.
pub fn write_proposals(dir: &Path, frame_index: usize, proposals: &[Proposal]) -> Result<()> {
    let mut text = String::new();
    for p in proposals {
        let rle: Vec<String> = p.mask.to_rle().iter().map(u64::to_string).collect();
        let _ = writeln!(
            text,
            "{} {} {} {} {} {}",
            p.confidence,
            p.bbox.x0(),
            p.bbox.y0(),
            p.bbox.x1(),
            p.bbox.y1(),
            rle.join(",")
        );
    }
    let path = proposal_file(dir, frame_index);
    fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parses `props_%05d.txt` for one frame. Masks are full-frame, so the frame
/// size is needed to decode them.
pub fn load_proposals(dir: &Path, frame_index: usize, width: usize, height: usize) -> Result<Vec<Proposal>> {
    let path = proposal_file(dir, frame_index);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |field: &'static str, reason: String| Error::ProposalFormat {
            frame: frame_index,
            line: n + 1,
            field,
            reason,
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 6 {
            return Err(err("line", format!("expected 6 fields, found {}", parts.len())));
        }
        let confidence: f64 = parts[0].parse().map_err(|e| err("confidence", format!("{e}")))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(err("confidence", format!("{confidence} not in [0,1]")));
        }
        const NAMES: [&str; 4] = ["x0", "y0", "x1", "y1"];
        let mut c = [0i32; 4];
        for (k, slot) in c.iter_mut().enumerate() {
            *slot = parts[k + 1].parse().map_err(|e| err(NAMES[k], format!("{e}")))?;
        }
        let bbox = BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| err("box", e.to_string()))?;
        bbox.check_within(width, height)
            .map_err(|e| err("box", e.to_string()))?;
        let runs = parts[5]
            .split(',')
            .map(str::parse::<u64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err("rle", format!("{e}")))?;
        let mask = BitMask::from_rle(width, height, &runs).map_err(|e| err("rle", e.to_string()))?;
        let prop = Proposal::new(bbox, mask, confidence).map_err(|e| err("box", e.to_string()))?;
        out.push(prop);
    }
    Ok(out)
}

/// Replays proposals from a directory of `props_%05d.txt` files.
#[derive(Debug, Clone)]
pub struct FileProposals {
    dir: PathBuf,
}

impl FileProposals {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl ProposalSource for FileProposals {
    fn detect_region(&self, frame: &Image, region: &BBox, frame_index: usize) -> Result<Vec<Proposal>> {
        region.check_within(frame.width(), frame.height())?;
        let props = load_proposals(&self.dir, frame_index, frame.width(), frame.height())?;
        Ok(props.iter().filter_map(|p| p.clipped(region)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: i32, y0: i32, x1: i32, y1: i32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn scene() -> Arc<SceneTruth> {
        let (w, h) = (64, 48);
        let frames = (0..5)
            .map(|t| {
                vec![
                    SceneInstance {
                        kind: InstanceKind::Object(1),
                        mask: BitMask::from_box(w, h, &bx(4 + t, 4, 14 + t, 12)),
                    },
                    SceneInstance {
                        kind: InstanceKind::Object(2),
                        mask: BitMask::from_box(w, h, &bx(40, 30, 50, 44)),
                    },
                ]
            })
            .collect();
        Arc::new(SceneTruth {
            width: w,
            height: h,
            frames,
        })
    }

    fn frame() -> Image {
        Image::new(64, 48, [50, 50, 50])
    }

    #[test]
    fn script_text_round_trip() {
        let mut s = DetectorScript {
            seed: 9,
            dropout: 0.25,
            ..Default::default()
        };
        s.swaps.push(SwapEvent {
            object: 1,
            start: 3,
            end: 5,
            dx: -7,
            dy: 2,
        });
        s.overrides.push(ScriptOverride {
            object: 2,
            start: 0,
            end: 4,
            box_jitter: None,
            mask_radius: Some(-1),
            dropout: Some(1.0),
        });
        assert_eq!(DetectorScript::from_text(&s.to_text()).unwrap(), s);
        let err = DetectorScript::from_text("bogus = 1").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn identity_script_returns_ground_truth() {
        let sc = scene();
        let det = ScriptedDetector::new(DetectorScript::identity(3), sc.clone()).unwrap();
        let props = det.detect_full_frame(&frame(), 2).unwrap();
        assert_eq!(props.len(), 2);
        for (p, inst) in props.iter().zip(&sc.frames[2]) {
            assert_eq!(p.mask, inst.mask);
            assert_eq!(Some(p.bbox), inst.mask.tight_box());
            assert_eq!(p.confidence, 1.0);
        }
        // Region containing only object 1.
        let region = bx(0, 0, 30, 30);
        let props = det.detect_region(&frame(), &region, 2).unwrap();
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].mask, sc.frames[2][0].mask);
    }

    #[test]
    fn full_dropout_removes_object() {
        let mut script = DetectorScript::identity(1);
        script.overrides.push(ScriptOverride {
            object: 2,
            start: 0,
            end: 5,
            dropout: Some(1.0),
            ..Default::default()
        });
        let sc = scene();
        let det = ScriptedDetector::new(script, sc.clone()).unwrap();
        for t in 0..5 {
            let props = det.detect_full_frame(&frame(), t).unwrap();
            let gt = &sc.frames[t][1].mask;
            assert!(props.iter().all(|p| mask_iou(&p.mask, gt).unwrap() == 0.0));
        }
    }

    #[test]
    fn deterministic_and_region_contained() {
        let script = DetectorScript {
            seed: 42,
            box_jitter: 0.2,
            mask_radius: 1,
            dropout: 0.3,
            distractors: 4,
            ..Default::default()
        };
        let det = ScriptedDetector::new(script, scene()).unwrap();
        let region = bx(10, 5, 45, 40);
        for t in 0..5 {
            let a = det.detect_region(&frame(), &region, t).unwrap();
            let b = det.detect_region(&frame(), &region, t).unwrap();
            assert_eq!(a, b);
            for p in &a {
                assert!(region.contains(&p.mask.tight_box().unwrap()));
                assert!(p.bbox.contains(&p.mask.tight_box().unwrap()));
                assert!((0.0..=1.0).contains(&p.confidence));
            }
            let whole = bx(0, 0, 64, 48);
            assert_eq!(
                det.detect_region(&frame(), &whole, t).unwrap(),
                det.detect_full_frame(&frame(), t).unwrap()
            );
        }
    }

    #[test]
    fn swap_event_replaces_true_proposal() {
        let mut script = DetectorScript::identity(0);
        script.swaps.push(SwapEvent {
            object: 1,
            start: 1,
            end: 2,
            dx: 20,
            dy: 20,
        });
        let sc = scene();
        let det = ScriptedDetector::new(script, sc.clone()).unwrap();
        let props = det.detect_full_frame(&frame(), 1).unwrap();
        assert_eq!(props[0].mask, sc.frames[1][0].mask.shifted(20, 20));
        assert_eq!(props[0].confidence, 0.0);
    }

    #[test]
    fn proposal_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let det = ScriptedDetector::new(
            DetectorScript {
                seed: 9,
                box_jitter: 0.3,
                distractors: 3,
                ..Default::default()
            },
            scene(),
        )
        .unwrap();
        let props = det.detect_full_frame(&frame(), 3).unwrap();
        assert!(!props.is_empty());
        write_proposals(dir.path(), 3, &props).unwrap();
        let back = load_proposals(dir.path(), 3, 64, 48).unwrap();
        assert_eq!(back, props);
        for (a, b) in back.iter().zip(&props) {
            assert_eq!(a.confidence.to_bits(), b.confidence.to_bits());
        }

        write_proposals(dir.path(), 4, &[]).unwrap();
        assert!(load_proposals(dir.path(), 4, 64, 48).unwrap().is_empty());
        assert!(load_proposals(dir.path(), 5, 64, 48).is_err());
    }

    #[test]
    fn malformed_confidence_names_field() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(proposal_file(dir.path(), 7), "1.5 0 0 1 1 0,1,5\n").unwrap();
        let err = load_proposals(dir.path(), 7, 7, 1).unwrap_err();
        match &err {
            Error::ProposalFormat { frame, field, .. } => {
                assert_eq!(*frame, 7);
                assert_eq!(*field, "confidence");
            }
            other => panic!("unexpected error {other}"),
        }
        assert!(err.to_string().contains("confidence"));
    }
}
