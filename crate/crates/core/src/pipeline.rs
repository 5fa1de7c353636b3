//! The per-frame tracking loop, sequence driver, and episodic training.
//!
//! Every frame runs three steps per object: IOU matching inside a shared
//! search region, the agent's accept/reject decision, and, after `N`
//! consecutive rejections, appearance-based re-detection over the full frame.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{reward, sample_action, AgentNet, SampleMode, Transition};
use crate::datasets::SequenceData;
use crate::error::{Error, Result};
use crate::features::{build_state, FeatureConfig, StateVec};
use crate::geometry::{box_iou, enclosing_box, expand_box, mask_iou, BBox, BitMask};
use crate::matching::{score_appearance, score_iou, select_best, Embedder, HistogramEmbedder, MatchWeights};
use crate::proposals::{Proposal, ProposalSource};
use crate::template::{apply_decision, init_template, Action, Image, PredictedResult, TargetTemplate};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Weights while the template is still the initial box.
    pub first_weights: MatchWeights,
    pub weights: MatchWeights,
    /// Consecutive rejections that trigger re-detection.
    pub keep_limit: usize,
    pub ratio_big: f64,
    pub ratio_mid: f64,
    pub ratio_small: f64,
    /// Displacement threshold as a fraction of the previous box diagonal.
    pub displacement: f64,
    pub proposal_cap: usize,
    /// Per-frame decay of the reported confidence while the template is kept.
    pub confidence_decay: f64,
    pub features: FeatureConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            first_weights: MatchWeights::new(1.0, 0.0).expect("valid weights"),
            weights: MatchWeights::new(0.5, 0.5).expect("valid weights"),
            keep_limit: 3,
            ratio_big: 2.0,
            ratio_mid: 1.5,
            ratio_small: 1.2,
            displacement: 0.35,
            proposal_cap: 20,
            confidence_decay: 0.9,
            features: FeatureConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keep_limit == 0 {
            return Err(Error::invalid("tracker.keep_limit", "must be >= 1"));
        }
        for (name, r) in [
            ("tracker.ratio_big", self.ratio_big),
            ("tracker.ratio_mid", self.ratio_mid),
            ("tracker.ratio_small", self.ratio_small),
        ] {
            if !(r >= 1.0 && r.is_finite()) {
                return Err(Error::invalid(name, format!("{r} must be finite and >= 1")));
            }
        }
        if !(self.displacement >= 0.0 && self.displacement.is_finite()) {
            return Err(Error::invalid("tracker.displacement", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.confidence_decay) {
            return Err(Error::invalid("tracker.confidence_decay", "must be in [0,1]"));
        }
        if self.features.grid == 0 {
            return Err(Error::invalid("tracker.grid", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchRatio {
    Big,
    Mid,
    Small,
}

/// Picks the expansion ratio and returns the search region around all targets.
///
/// `previous[i]` is the template box of object `i` before its latest update.
pub fn search_region(
    current: &[BBox],
    previous: &[Option<BBox>],
    width: usize,
    height: usize,
    cfg: &TrackerConfig,
) -> Result<(BBox, SearchRatio)> {
    if current.is_empty() {
        return Err(Error::Empty("tracks"));
    }
    if previous.len() != current.len() {
        return Err(Error::LengthMismatch {
            expected: current.len(),
            found: previous.len(),
        });
    }
    let moved_far = current.iter().zip(previous).any(|(c, p)| match p {
        Some(p) => {
            let (cx, cy) = c.center();
            let (px, py) = p.center();
            (cx - px).hypot(cy - py) > cfg.displacement * p.diagonal()
        }
        None => false,
    });
    let close = (0..current.len()).any(|i| (i + 1..current.len()).any(|j| box_iou(&current[i], &current[j]) > 0.0));
    let (ratio, kind) = if moved_far {
        (cfg.ratio_big, SearchRatio::Big)
    } else if close {
        (cfg.ratio_small, SearchRatio::Small)
    } else {
        (cfg.ratio_mid, SearchRatio::Mid)
    };
    let merged = enclosing_box(current)?;
    Ok((expand_box(&merged, ratio, width, height), kind))
}

#[derive(Debug, Clone)]
pub struct ObjectTrack {
    pub id: u8,
    pub template: TargetTemplate,
    pub keep_streak: usize,
    pub last_score: f64,
    pub redetected_this_frame: bool,
    /// Template box before the most recent update.
    pub previous_box: Option<BBox>,
    pub redetections: usize,
}

impl ObjectTrack {
    fn accept(&mut self, template: TargetTemplate, score: f64) {
        self.previous_box = Some(*self.template.bbox());
        self.template = template;
        self.keep_streak = 0;
        self.last_score = score;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionStage {
    Preliminary,
    Redetection,
}

/// Everything a policy may look at when deciding.
pub struct DecisionQuery<'a> {
    pub object: u8,
    pub frame_index: usize,
    pub stage: DecisionStage,
    pub template: &'a TargetTemplate,
    pub prediction: &'a PredictedResult,
    pub state: &'a StateVec,
    /// Ground truth when known; an absent object is an empty mask.
    pub ground_truth: Option<&'a BitMask>,
}

/// What happened after a decision was applied.
pub struct DecisionOutcome<'a> {
    pub object: u8,
    pub frame_index: usize,
    pub stage: DecisionStage,
    pub action: Action,
    pub template: &'a TargetTemplate,
    pub ground_truth: Option<&'a BitMask>,
}

pub trait DecisionPolicy {
    fn decide(&mut self, q: &DecisionQuery<'_>) -> Result<Action>;

    fn observe(&mut self, _outcome: &DecisionOutcome<'_>) -> Result<()> {
        Ok(())
    }
}

/// Always returns the same action.
#[derive(Debug, Clone, Copy)]
pub struct FixedPolicy(pub Action);

impl DecisionPolicy for FixedPolicy {
    fn decide(&mut self, _q: &DecisionQuery<'_>) -> Result<Action> {
        Ok(self.0)
    }
}

/// Per-(frame, object) actions for the preliminary stage, with fallbacks.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub preliminary: BTreeMap<(usize, u8), Action>,
    pub default: Action,
    pub redetection: Action,
}

impl DecisionPolicy for ScriptedPolicy {
    fn decide(&mut self, q: &DecisionQuery<'_>) -> Result<Action> {
        Ok(match q.stage {
            DecisionStage::Preliminary => *self
                .preliminary
                .get(&(q.frame_index, q.object))
                .unwrap_or(&self.default),
            DecisionStage::Redetection => self.redetection,
        })
    }
}

/// Picks whichever action leaves the template closer to the ground truth.
/// Ties go to `Update`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl DecisionPolicy for OraclePolicy {
    fn decide(&mut self, q: &DecisionQuery<'_>) -> Result<Action> {
        let gt = q
            .ground_truth
            .ok_or(Error::MissingGroundTruth { frame: q.frame_index })?;
        let update = mask_iou(q.prediction.mask(), gt)?;
        let keep = mask_iou(q.template.mask(), gt)?;
        Ok(if update >= keep { Action::Update } else { Action::Keep })
    }
}

/// Runs the actor network on the state.
#[derive(Debug, Clone)]
pub struct AgentPolicy {
    net: Arc<AgentNet>,
    mode: SampleMode,
    rng: ChaCha8Rng,
}

impl AgentPolicy {
    pub fn new(net: Arc<AgentNet>, mode: SampleMode, seed: u64) -> Self {
        Self {
            net,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl DecisionPolicy for AgentPolicy {
    fn decide(&mut self, q: &DecisionQuery<'_>) -> Result<Action> {
        let probs = self.net.actor_forward(q.state)?;
        Ok(sample_action(probs, self.mode, &mut self.rng))
    }
}

/// Ground truth for one frame, looked up by object id.
#[derive(Debug, Clone, Copy)]
pub struct FrameTruth<'a> {
    pub ids: &'a [u8],
    /// Aligned with `ids`; `None` means the object is absent.
    pub masks: &'a [Option<BitMask>],
}

impl<'a> FrameTruth<'a> {
    /// `None` for an unknown id, `Some(None)` when the object is absent.
    pub fn get(&self, id: u8) -> Option<Option<&'a BitMask>> {
        let i = self.ids.iter().position(|&k| k == id)?;
        Some(self.masks.get(i)?.as_ref())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub detection: f64,
    pub matching: f64,
    pub decision: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.detection + self.matching + self.decision
    }

    pub fn add(&mut self, other: &PhaseTimings) {
        self.detection += other.detection;
        self.matching += other.matching;
        self.decision += other.decision;
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed().as_secs_f64();
    out
}

/// One line of the diagnostics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDiagnostics {
    pub frame: usize,
    pub object: u8,
    pub proposals: usize,
    /// Best three matching scores, descending.
    pub top_scores: Vec<f64>,
    /// `None` when the search region held no proposal.
    pub preliminary: Option<Action>,
    pub redetected: bool,
    pub redetection_candidates: usize,
    pub redetection_action: Option<Action>,
    pub keep_streak: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectOutput {
    pub id: u8,
    pub mask: BitMask,
    pub bbox: BBox,
    pub confidence: f64,
    /// `None` on the initialization frame.
    pub diagnostics: Option<ObjectDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame_index: usize,
    pub objects: Vec<ObjectOutput>,
    pub search_region: Option<BBox>,
    pub ratio: Option<SearchRatio>,
    pub timings: PhaseTimings,
}

fn top_scores(scores: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = scores.iter().copied().filter(|v| !v.is_nan()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.truncate(3);
    s
}

/// Multi-object tracker state for one sequence.
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<ObjectTrack>,
    width: usize,
    height: usize,
    embedder: Arc<dyn Embedder>,
}

impl Tracker {
    /// Starts one track per `(id, box)` on the first frame.
    pub fn new(cfg: TrackerConfig, frame: Arc<Image>, objects: &[(u8, BBox)]) -> Result<Self> {
        cfg.validate()?;
        if objects.is_empty() {
            return Err(Error::Empty("objects"));
        }
        let (width, height) = frame.dims();
        let tracks = objects
            .iter()
            .map(|&(id, b)| {
                Ok(ObjectTrack {
                    id,
                    template: init_template(frame.clone(), b)?,
                    keep_streak: 0,
                    last_score: 1.0,
                    redetected_this_frame: false,
                    previous_box: None,
                    redetections: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            tracks,
            width,
            height,
            embedder: Arc::new(HistogramEmbedder::default()),
        })
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn tracks(&self) -> &[ObjectTrack] {
        &self.tracks
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Outputs for the initialization frame.
    pub fn initial_output(&self, frame_index: usize) -> FrameOutput {
        FrameOutput {
            frame_index,
            objects: self
                .tracks
                .iter()
                .map(|t| ObjectOutput {
                    id: t.id,
                    mask: t.template.mask().clone(),
                    bbox: *t.template.bbox(),
                    confidence: t.last_score,
                    diagnostics: None,
                })
                .collect(),
            search_region: None,
            ratio: None,
            timings: PhaseTimings::default(),
        }
    }

    /// Processes one frame for every track.
    pub fn step(
        &mut self,
        frame_index: usize,
        frame: Arc<Image>,
        detector: &dyn ProposalSource,
        policy: &mut dyn DecisionPolicy,
        truth: Option<&FrameTruth<'_>>,
    ) -> Result<FrameOutput> {
        if frame.dims() != (self.width, self.height) {
            return Err(Error::dims(frame.dims(), (self.width, self.height)));
        }
        let mut timings = PhaseTimings::default();
        let current: Vec<BBox> = self.tracks.iter().map(|t| *t.template.bbox()).collect();
        let previous: Vec<Option<BBox>> = self.tracks.iter().map(|t| t.previous_box).collect();
        let (region, ratio) = search_region(&current, &previous, self.width, self.height, &self.cfg)?;

        let mut proposals = timed(&mut timings.detection, || {
            detector.detect_region(&frame, &region, frame_index)
        })?;
        proposals.truncate(self.cfg.proposal_cap);

        let empty = truth.map(|_| BitMask::new(self.width, self.height));
        let mut objects = Vec::with_capacity(self.tracks.len());
        for i in 0..self.tracks.len() {
            let id = self.tracks[i].id;
            let gt = match truth {
                Some(t) => Some(t.get(id).ok_or(Error::MissingGroundTruth { frame: frame_index })?),
                None => None,
            };
            let gt = gt.map(|m| m.or(empty.as_ref()).expect("empty mask exists with truth"));
            let out = self
                .step_object(i, frame_index, &frame, &proposals, detector, policy, gt, &mut timings)
                .map_err(|e| Error::Frame {
                    frame: frame_index,
                    object: id,
                    source: Box::new(e),
                })?;
            objects.push(out);
        }
        Ok(FrameOutput {
            frame_index,
            objects,
            search_region: Some(region),
            ratio: Some(ratio),
            timings,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn step_object(
        &mut self,
        i: usize,
        frame_index: usize,
        frame: &Arc<Image>,
        proposals: &[Proposal],
        detector: &dyn ProposalSource,
        policy: &mut dyn DecisionPolicy,
        gt: Option<&BitMask>,
        timings: &mut PhaseTimings,
    ) -> Result<ObjectOutput> {
        let cfg = &self.cfg;
        let track = &mut self.tracks[i];
        track.redetected_this_frame = false;
        let weights = if track.template.is_bootstrap() {
            &cfg.first_weights
        } else {
            &cfg.weights
        };

        let scores = timed(&mut timings.matching, || {
            proposals
                .iter()
                .map(|p| score_iou(&track.template, p, weights))
                .collect::<Result<Vec<f64>>>()
        })?;
        let best = select_best(&scores);

        let preliminary = match best {
            None => {
                track.keep_streak += 1;
                track.last_score *= cfg.confidence_decay;
                None
            }
            Some(b) => Some(timed(&mut timings.decision, || {
                let p = &proposals[b];
                decide_and_apply(
                    track,
                    frame_index,
                    DecisionStage::Preliminary,
                    frame,
                    p,
                    scores[b],
                    cfg,
                    policy,
                    gt,
                )
            })?),
        };

        let mut redetection_candidates = 0;
        let mut redetection_action = None;
        if track.keep_streak >= cfg.keep_limit && !track.redetected_this_frame {
            track.redetected_this_frame = true;
            track.redetections += 1;
            let mut full = timed(&mut timings.detection, || {
                detector.detect_full_frame(frame, frame_index)
            })?;
            full.truncate(cfg.proposal_cap);
            redetection_candidates = full.len();
            let embedder = self.embedder.as_ref();
            let appearance = timed(&mut timings.matching, || {
                full.iter()
                    .map(|p| score_appearance(&track.template, p, frame, embedder))
                    .collect::<Result<Vec<f64>>>()
            })?;
            if let Some(b) = select_best(&appearance) {
                redetection_action = Some(timed(&mut timings.decision, || {
                    decide_and_apply(
                        track,
                        frame_index,
                        DecisionStage::Redetection,
                        frame,
                        &full[b],
                        appearance[b],
                        cfg,
                        policy,
                        gt,
                    )
                })?);
            }
            track.keep_streak = 0;
        }

        Ok(timed(&mut timings.decision, || ObjectOutput {
            id: track.id,
            mask: track.template.mask().clone(),
            bbox: *track.template.bbox(),
            confidence: track.last_score,
            diagnostics: Some(ObjectDiagnostics {
                frame: frame_index,
                object: track.id,
                proposals: proposals.len(),
                top_scores: top_scores(&scores),
                preliminary,
                redetected: track.redetected_this_frame,
                redetection_candidates,
                redetection_action,
                keep_streak: track.keep_streak,
                confidence: track.last_score,
            }),
        }))
    }
}

#[allow(clippy::too_many_arguments)]
fn decide_and_apply(
    track: &mut ObjectTrack,
    frame_index: usize,
    stage: DecisionStage,
    frame: &Arc<Image>,
    proposal: &Proposal,
    score: f64,
    cfg: &TrackerConfig,
    policy: &mut dyn DecisionPolicy,
    gt: Option<&BitMask>,
) -> Result<Action> {
    let prediction = PredictedResult::new(frame.clone(), proposal.bbox, proposal.mask.clone(), score)?;
    let state = build_state(&track.template, &prediction, &cfg.features)?;
    let action = policy.decide(&DecisionQuery {
        object: track.id,
        frame_index,
        stage,
        template: &track.template,
        prediction: &prediction,
        state: &state,
        ground_truth: gt,
    })?;
    let next = apply_decision(&track.template, &prediction, action)?;
    match action {
        Action::Update => track.accept(next, score),
        Action::Keep => {
            track.keep_streak += 1;
            track.last_score *= cfg.confidence_decay;
        }
    }
    policy.observe(&DecisionOutcome {
        object: track.id,
        frame_index,
        stage,
        action,
        template: &track.template,
        ground_truth: gt,
    })?;
    Ok(action)
}

/// Per-frame outputs of a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRun {
    pub frames: Vec<FrameOutput>,
    pub timings: PhaseTimings,
    /// Wall time of the tracked frames, initialization excluded.
    pub wall: Duration,
}

impl SequenceRun {
    pub fn diagnostics(&self) -> impl Iterator<Item = &ObjectDiagnostics> {
        self.frames
            .iter()
            .flat_map(|f| f.objects.iter().filter_map(|o| o.diagnostics.as_ref()))
    }
}

impl SequenceRun {
    /// Output masks per frame, per object in track order.
    pub fn masks(&self) -> Vec<Vec<Option<BitMask>>> {
        self.frames
            .iter()
            .map(|f| f.objects.iter().map(|o| Some(o.mask.clone())).collect())
            .collect()
    }

    pub fn confidences(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.objects.iter().map(|o| o.confidence).collect())
            .collect()
    }
}

/// Tracks every object of `seq` from its first frame.
///
/// The first frame reports the given ground-truth masks when the sequence has
/// them, and the initial box masks otherwise.
pub fn run_sequence(
    seq: &SequenceData,
    detector: &dyn ProposalSource,
    policy: &mut dyn DecisionPolicy,
    cfg: &TrackerConfig,
) -> Result<SequenceRun> {
    let first = seq.frames.first().ok_or(Error::Empty("sequence frames"))?;
    let init: Vec<(u8, BBox)> = seq
        .object_ids
        .iter()
        .copied()
        .zip(seq.first_boxes.iter().copied())
        .collect();
    let mut tracker = Tracker::new(cfg.clone(), first.clone(), &init)?;
    let mut head = tracker.initial_output(0);
    if let Some(Some(masks)) = seq.gt.first() {
        for (o, m) in head.objects.iter_mut().zip(masks) {
            if let Some(m) = m {
                o.mask = m.clone();
            }
        }
    }
    let mut frames = vec![head];
    let mut timings = PhaseTimings::default();
    let start = Instant::now();
    for (t, frame) in seq.frames.iter().enumerate().skip(1) {
        let truth = seq.truth(t);
        let out = tracker.step(t, frame.clone(), detector, policy, truth.as_ref())?;
        timings.add(&out.timings);
        frames.push(out);
    }
    Ok(SequenceRun {
        frames,
        timings,
        wall: start.elapsed(),
    })
}

/// Combined label map: each pixel goes to the covering object with the highest
/// confidence, lower id on ties. Background is 0.
pub fn render_labels(objects: &[ObjectOutput], width: usize, height: usize) -> Vec<u8> {
    let mut order: Vec<&ObjectOutput> = objects.iter().collect();
    order.sort_by(|a, b| a.confidence.total_cmp(&b.confidence).then(b.id.cmp(&a.id)));
    let mut labels = vec![0u8; width * height];
    for o in order {
        o.mask.for_each_foreground(|x, y| labels[y * width + x] = o.id);
    }
    labels
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub clip_len: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            clip_len: 10,
            batch: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("train.gamma", "must be in [0,1]"));
        }
        if self.clip_len < 2 {
            return Err(Error::invalid("train.clip_len", "must be >= 2"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("train.batch", "must be >= 1"));
        }
        Ok(())
    }
}

/// A training sequence and the detector that runs on it.
#[derive(Clone, Copy)]
pub struct TrainItem<'a> {
    pub seq: &'a SequenceData,
    pub detector: &'a dyn ProposalSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clip {
    pub item: usize,
    pub start: usize,
    pub len: usize,
}

/// Non-overlapping clips of exactly `len` frames, in order.
pub fn split_clips(items: &[TrainItem<'_>], len: usize) -> Vec<Clip> {
    let mut clips = Vec::new();
    for (item, it) in items.iter().enumerate() {
        let n = it.seq.frames.len();
        let mut start = 0;
        while len > 0 && start + len <= n {
            clips.push(Clip { item, start, len });
            start += len;
        }
    }
    clips
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub sequence: String,
    pub start: usize,
    pub transitions: usize,
    pub total_reward: f64,
    pub mean_reward: f64,
    pub mean_j: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub episodes: Vec<EpisodeLog>,
}

impl TrainingCurve {
    pub fn transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions).sum()
    }
}

struct Pending {
    state: StateVec,
    action: Action,
    reward: f64,
}

/// Samples actions stochastically and learns online. A decision's transition
/// is completed by the same object's next decision, or closed as terminal at
/// the end of the clip.
struct Learner<'a> {
    net: &'a mut AgentNet,
    gamma: f64,
    rng: ChaCha8Rng,
    remaining: u64,
    decided: BTreeMap<u8, (StateVec, Action)>,
    pending: BTreeMap<u8, Pending>,
    transitions: usize,
    total_reward: f64,
    total_j: f64,
}

impl Learner<'_> {
    fn learn(&mut self, p: Pending, next: Option<&StateVec>) -> Result<()> {
        if self.remaining == 0 {
            return Ok(());
        }
        let terminal = next.is_none();
        let tr = Transition {
            next_state: next.cloned().unwrap_or_else(|| p.state.clone()),
            state: p.state,
            action: p.action,
            reward: p.reward,
            terminal,
        };
        self.net.learn(&tr, self.gamma)?;
        self.remaining -= 1;
        self.transitions += 1;
        self.total_reward += p.reward;
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        for (_, p) in std::mem::take(&mut self.pending) {
            self.learn(p, None)?;
        }
        Ok(())
    }
}

impl DecisionPolicy for Learner<'_> {
    fn decide(&mut self, q: &DecisionQuery<'_>) -> Result<Action> {
        if let Some(p) = self.pending.remove(&q.object) {
            self.learn(p, Some(q.state))?;
        }
        let probs = self.net.actor_forward(q.state)?;
        let action = sample_action(probs, SampleMode::Stochastic, &mut self.rng);
        self.decided.insert(q.object, (q.state.clone(), action));
        Ok(action)
    }

    fn observe(&mut self, o: &DecisionOutcome<'_>) -> Result<()> {
        let gt = o
            .ground_truth
            .ok_or(Error::MissingGroundTruth { frame: o.frame_index })?;
        let j = mask_iou(o.template.mask(), gt)?;
        let (state, action) = self
            .decided
            .remove(&o.object)
            .ok_or_else(|| Error::Config("outcome without a decision".into()))?;
        self.total_j += j;
        self.pending.insert(
            o.object,
            Pending {
                state,
                action,
                reward: reward(j)?,
            },
        );
        Ok(())
    }
}

/// Runs one clip as an episode, updating `net` online. Learning stops once
/// `budget` transitions have been consumed.
pub fn train_episode(
    item: &TrainItem<'_>,
    clip: &Clip,
    net: &mut AgentNet,
    tracker_cfg: &TrackerConfig,
    gamma: f64,
    seed: u64,
    budget: u64,
) -> Result<EpisodeLog> {
    let seq = item.seq;
    if clip.start + clip.len > seq.frames.len() {
        return Err(Error::invalid("clip", "extends past the sequence"));
    }
    for t in clip.start..clip.start + clip.len {
        if seq.gt.get(t).is_none_or(|g| g.is_none()) {
            return Err(Error::MissingGroundTruth { frame: t });
        }
    }
    let mut learner = Learner {
        net,
        gamma,
        rng: ChaCha8Rng::seed_from_u64(seed),
        remaining: budget,
        decided: BTreeMap::new(),
        pending: BTreeMap::new(),
        transitions: 0,
        total_reward: 0.0,
        total_j: 0.0,
    };
    let mut log = EpisodeLog {
        episode: 0,
        sequence: seq.name.clone(),
        start: clip.start,
        transitions: 0,
        total_reward: 0.0,
        mean_reward: 0.0,
        mean_j: 0.0,
    };
    let init = seq.present_boxes(clip.start)?;
    if init.is_empty() {
        return Ok(log);
    }
    let mut tracker = Tracker::new(tracker_cfg.clone(), seq.frames[clip.start].clone(), &init)?;
    let mut decisions = 0usize;
    for t in clip.start + 1..clip.start + clip.len {
        let truth = seq.truth(t);
        let out = tracker.step(t, seq.frames[t].clone(), item.detector, &mut learner, truth.as_ref())?;
        decisions += out
            .objects
            .iter()
            .filter_map(|o| o.diagnostics.as_ref())
            .map(|d| d.preliminary.is_some() as usize + d.redetection_action.is_some() as usize)
            .sum::<usize>();
    }
    learner.finish()?;
    log.transitions = learner.transitions;
    log.total_reward = learner.total_reward;
    if learner.transitions > 0 {
        log.mean_reward = learner.total_reward / learner.transitions as f64;
    }
    if decisions > 0 {
        log.mean_j = learner.total_j / decisions as f64;
    }
    Ok(log)
}

/// Trains on random batches of clips until `budget` transitions are used.
pub fn train(
    items: &[TrainItem<'_>],
    net: &mut AgentNet,
    tracker_cfg: &TrackerConfig,
    cfg: &TrainConfig,
    budget: u64,
) -> Result<TrainingCurve> {
    cfg.validate()?;
    tracker_cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let clips = split_clips(items, cfg.clip_len);
    if clips.is_empty() {
        return Err(Error::Empty("training clips"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = TrainingCurve::default();
    let mut remaining = budget;
    while remaining > 0 {
        let batch: Vec<Clip> = clips
            .choose_multiple(&mut rng, cfg.batch.min(clips.len()))
            .copied()
            .collect();
        let mut used = 0;
        for clip in &batch {
            if remaining == 0 {
                break;
            }
            let mut log = train_episode(
                &items[clip.item],
                clip,
                net,
                tracker_cfg,
                cfg.gamma,
                rng.gen(),
                remaining,
            )?;
            log.episode = curve.episodes.len();
            remaining -= log.transitions as u64;
            used += log.transitions;
            curve.episodes.push(log);
        }
        if used == 0 {
            break;
        }
    }
    Ok(curve)
}
