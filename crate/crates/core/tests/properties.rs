use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tmrl_core::agent::{reward, AgentConfig, AgentNet};
use tmrl_core::features::{build_state, FeatureConfig, StateVec};
use tmrl_core::geometry::{box_iou, mask_iou, BBox, BitMask};
use tmrl_core::matching::{score_appearance, score_iou, select_best, HistogramEmbedder, MatchWeights};
use tmrl_core::metrics::{contour_accuracy, longterm_f_score, region_similarity};
use tmrl_core::proposals::{
    load_proposals, write_proposals, DetectorScript, Proposal, ProposalSource, ScriptedDetector,
};
use tmrl_core::template::{
    apply_decision, compose_prediction_view, compose_template_view, Action, Image, PredictedResult, TargetTemplate,
};

const W: usize = 48;
const H: usize = 40;

fn arb_box() -> impl Strategy<Value = BBox> {
    (0..W as i32 - 1, 0..H as i32 - 1, 1..20i32, 1..20i32)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, (x + w).min(W as i32), (y + h).min(H as i32)).unwrap())
}

fn arb_mask() -> impl Strategy<Value = BitMask> {
    proptest::collection::vec(any::<bool>(), W * H).prop_map(|bits| BitMask::from_bools(W, H, &bits).unwrap())
}

fn frame(seed: u64) -> Arc<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Arc::new(Image::from_fn(W, H, |_, _| {
        [rng.gen_range(1..=255), rng.gen_range(1..=255), rng.gen_range(1..=255)]
    }))
}

fn template(seed: u64, b: BBox) -> TargetTemplate {
    TargetTemplate::new(frame(seed), b, BitMask::from_box(W, H, &b)).unwrap()
}

fn prediction(seed: u64, b: BBox) -> PredictedResult {
    PredictedResult::new(frame(seed), b, BitMask::from_box(W, H, &b), 0.5).unwrap()
}

fn random_net(seed: u64, grid: usize) -> AgentNet {
    let cfg = AgentConfig {
        feature_dim: grid * grid + 6,
        hidden: 8,
        ..Default::default()
    };
    AgentNet::new(&cfg, seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ious_are_symmetric_and_bounded(a in arb_box(), b in arb_box(), m in arb_mask(), n in arb_mask()) {
        let ab = box_iou(&a, &b);
        prop_assert_eq!(ab, box_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(box_iou(&a, &a), 1.0);
        let mn = mask_iou(&m, &n).unwrap();
        prop_assert_eq!(mn, mask_iou(&n, &m).unwrap());
        prop_assert!((0.0..=1.0).contains(&mn));
        prop_assert_eq!(mn == 1.0, m == n);
    }

    #[test]
    fn keep_is_identity_and_update_is_a_projection(seed in 0u64..1000, a in arb_box(), b in arb_box()) {
        let t = template(seed, a);
        let p = prediction(seed + 1, b);
        prop_assert_eq!(apply_decision(&t, &p, Action::Keep).unwrap(), t.clone());
        let once = apply_decision(&t, &p, Action::Update).unwrap();
        let twice = apply_decision(&once, &p, Action::Update).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn views_keep_the_region_and_black_out_the_rest(seed in 0u64..1000, a in arb_box(), m in arb_mask()) {
        let t = template(seed, a);
        let view = compose_template_view(&t);
        for y in 0..H {
            for x in 0..W {
                let inside = a.contains_point(x as i32, y as i32);
                let expect = if inside { t.frame().pixel(x, y) } else { [0, 0, 0] };
                prop_assert_eq!(view.pixel(x, y), expect);
            }
        }
        if let Some(b) = m.tight_box() {
            let p = PredictedResult::new(frame(seed), b, m.clone(), 0.5).unwrap();
            let view = compose_prediction_view(&p);
            for y in 0..H {
                for x in 0..W {
                    let expect = if m.get(x, y) { p.frame().pixel(x, y) } else { [0, 0, 0] };
                    prop_assert_eq!(view.pixel(x, y), expect);
                }
            }
        }
    }

    #[test]
    fn iou_score_is_symmetric_and_bounded(a in arb_box(), b in arb_box(), alpha in 0.0f64..=1.0) {
        let w = MatchWeights::new(alpha, 1.0 - alpha).unwrap();
        let ta = template(1, a);
        let tb = template(1, b);
        let pa = Proposal::new(a, BitMask::from_box(W, H, &a), 1.0).unwrap();
        let pb = Proposal::new(b, BitMask::from_box(W, H, &b), 1.0).unwrap();
        let s = score_iou(&ta, &pb, &w).unwrap();
        prop_assert!((s - score_iou(&tb, &pa, &w).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn appearance_of_itself_is_one(seed in 0u64..1000, a in arb_box()) {
        let t = template(seed, a);
        let p = Proposal::new(a, BitMask::from_box(W, H, &a), 1.0).unwrap();
        let s = score_appearance(&t, &p, t.frame(), &HistogramEmbedder::default()).unwrap();
        prop_assert_eq!(s, 1.0);
    }

    #[test]
    fn argmax_survives_scaling_distances(d in proptest::collection::vec(0.0f64..10.0, 1..12), k in 0.01f64..100.0) {
        let base: Vec<f64> = d.iter().map(|x| 1.0 / (1.0 + x)).collect();
        let scaled: Vec<f64> = d.iter().map(|x| 1.0 / (1.0 + k * x)).collect();
        prop_assert_eq!(select_best(&base), select_best(&scaled));
    }

    #[test]
    fn state_is_deterministic_and_bounded(seed in 0u64..1000, a in arb_box(), b in arb_box()) {
        let cfg = FeatureConfig::default();
        let t = template(seed, a);
        let p = prediction(seed + 7, b);
        let s1 = build_state(&t, &p, &cfg).unwrap();
        let s2 = build_state(&t, &p, &cfg).unwrap();
        prop_assert_eq!(s1.as_slice(), s2.as_slice());
        prop_assert_eq!(s1.len(), cfg.state_dim());
        prop_assert!(s1.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn reward_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(reward(lo).unwrap() <= reward(hi).unwrap());
    }

    #[test]
    fn positive_advantage_raises_the_taken_action(seed in 0u64..500, keep in any::<bool>(), lr in 1e-6f64..=1e-3) {
        let mut net = random_net(seed, 2);
        net.set_learning_rates(lr, lr);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = StateVec::from_vec((0..net.input_dim()).map(|_| rng.gen()).collect()).unwrap();
        let a = if keep { Action::Keep } else { Action::Update };
        let before = net.actor_forward(&s).unwrap()[a.index()];
        net.update_actor(&s, a, 1.0).unwrap();
        let after = net.actor_forward(&s).unwrap()[a.index()];
        prop_assert!(after >= before, "{before} -> {after}");
        prop_assert!(net.actor().flat().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn region_and_contour_scores_are_bounded(m in arb_mask(), n in arb_mask()) {
        let j = region_similarity(&m, &n).unwrap();
        let f = contour_accuracy(&m, &n, 1.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(j, region_similarity(&n, &m).unwrap());
        prop_assert_eq!(contour_accuracy(&m, &m, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn contour_accuracy_is_translation_invariant(a in arb_box(), b in arb_box(), dx in -3i32..=3, dy in -3i32..=3) {
        // Work on a larger canvas so shifted shapes stay clear of the border.
        let (cw, ch) = (W + 16, H + 16);
        let put = |b: &BBox, sx: i32, sy: i32| {
            let moved = BBox::new(b.x0() + 8 + sx, b.y0() + 8 + sy, b.x1() + 8 + sx, b.y1() + 8 + sy).unwrap();
            BitMask::from_box(cw, ch, &moved)
        };
        let f0 = contour_accuracy(&put(&a, 0, 0), &put(&b, 0, 0), 2.0).unwrap();
        let f1 = contour_accuracy(&put(&a, dx, dy), &put(&b, dx, dy), 2.0).unwrap();
        prop_assert!((f0 - f1).abs() < 1e-12);
    }

    #[test]
    fn longterm_f_ignores_monotone_confidence_maps(
        rows in proptest::collection::vec((0.0f64..1.0, any::<bool>(), any::<bool>(), 0.0f64..1.0), 1..12)
    ) {
        let conf: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let pred: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let gt: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let ov: Vec<f64> = rows.iter().map(|r| if r.1 && r.2 { r.3 } else { 0.0 }).collect();
        let warped: Vec<f64> = conf.iter().map(|c| (3.0 * c).exp() - 7.0).collect();
        let a = longterm_f_score(&conf, &pred, &gt, &ov).unwrap();
        let b = longterm_f_score(&warped, &pred, &gt, &ov).unwrap();
        prop_assert_eq!(a.f, b.f);
        prop_assert_eq!(a.precision, b.precision);
        prop_assert_eq!(a.recall, b.recall);
    }
}

fn scene_detector(seed: u64) -> (ScriptedDetector, Arc<Image>) {
    let cfg = tmrl_core::datasets::SynthConfig {
        width: 96,
        height: 80,
        frames: 6,
        seed,
        ..Default::default()
    };
    let seq = tmrl_core::datasets::generate_synthetic(&cfg).unwrap();
    let script = DetectorScript {
        seed,
        distractors: 2,
        mask_radius: 1,
        ..Default::default()
    };
    let det = ScriptedDetector::new(script, Arc::new(seq.scene_truth())).unwrap();
    (det, seq.frames[3].clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn detector_is_deterministic_and_stays_in_region(seed in 0u64..200, x in 0i32..60, y in 0i32..50, w in 8i32..36, h in 8i32..30) {
        let (det, img) = scene_detector(seed);
        let region = BBox::new(x, y, (x + w).min(96), (y + h).min(80)).unwrap();
        let a = det.detect_region(&img, &region, 3).unwrap();
        let b = det.detect_region(&img, &region, 3).unwrap();
        prop_assert_eq!(&a, &b);
        for p in &a {
            prop_assert!(region.contains(&p.bbox));
            let mut outside = false;
            p.mask.for_each_foreground(|px, py| outside |= !region.contains_point(px as i32, py as i32));
            prop_assert!(!outside);
        }
    }

    #[test]
    fn proposal_files_round_trip(seed in 0u64..200) {
        let (det, img) = scene_detector(seed);
        let props = det.detect_full_frame(&img, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_proposals(dir.path(), 3, &props).unwrap();
        let back = load_proposals(dir.path(), 3, 96, 80).unwrap();
        prop_assert_eq!(back, props);
    }
}
