use tmrl_core::geometry::{BBox, BitMask};
use tmrl_core::metrics::{contour_accuracy, evaluate_sequence, region_similarity, MetricsReport, SequenceInput};

fn boxed(w: usize, h: usize, x0: i32, y0: i32, x1: i32, y1: i32) -> BitMask {
    BitMask::from_box(w, h, &BBox::new(x0, y0, x1, y1).unwrap())
}

type Truth = Vec<Option<Vec<Option<BitMask>>>>;
type Predictions = Vec<Vec<Option<BitMask>>>;

fn three_frames() -> (Truth, Predictions) {
    let a = boxed(32, 24, 4, 4, 14, 12);
    let b = boxed(32, 24, 18, 8, 28, 20);
    let gt = vec![Some(vec![Some(a.clone()), Some(b.clone())]); 3];
    let pred = vec![vec![Some(a), Some(b)]; 3];
    (gt, pred)
}

#[test]
fn perfect_predictions_score_one() {
    let (gt, pred) = three_frames();
    let r = evaluate_sequence(&SequenceInput {
        name: "s",
        ids: &[1, 2],
        pred: &pred,
        gt: &gt,
        confidences: None,
        tolerance: 1.0,
    })
    .unwrap();
    assert_eq!((r.j_mean, r.f_mean, r.jf_mean, r.longterm.f), (1.0, 1.0, 1.0, 1.0));
    assert_eq!(r.objects[0].j, vec![None, Some(1.0), Some(1.0)]);
}

#[test]
fn background_predictions_score_zero() {
    let (gt, _) = three_frames();
    let pred = vec![vec![None, None]; 3];
    let r = evaluate_sequence(&SequenceInput {
        name: "s",
        ids: &[1, 2],
        pred: &pred,
        gt: &gt,
        confidences: None,
        tolerance: 1.0,
    })
    .unwrap();
    assert_eq!((r.j_mean, r.f_mean, r.longterm.f), (0.0, 0.0, 0.0));
    assert_eq!(r.longterm.threshold, None);
}

#[test]
fn report_layout_is_fixed() {
    let (gt, pred) = three_frames();
    let mut half = pred.clone();
    half[2][1] = None;
    let input = |name, pred| SequenceInput {
        name,
        ids: &[1, 2],
        pred,
        gt: &gt,
        confidences: None,
        tolerance: 1.0,
    };
    let a = evaluate_sequence(&input("alpha", &pred)).unwrap();
    let b = evaluate_sequence(&input("beta", &half)).unwrap();
    let text = MetricsReport::new(vec![a, b]).to_text();
    let expected = "sequence\tJ_mean\tF_mean\tJF_mean\tLT_F\tLT_precision\tLT_recall\tLT_threshold\n\
alpha\t1.000000\t1.000000\t1.000000\t1.000000\t1.000000\t1.000000\t1.000000\n\
beta\t0.750000\t0.750000\t0.750000\t0.857143\t1.000000\t0.750000\t1.000000\n\
mean\t0.875000\t0.875000\t0.875000\t0.928571\t-\t-\t-\n";
    assert_eq!(text, expected);
}

#[test]
fn unannotated_frames_are_skipped() {
    let (mut gt, pred) = three_frames();
    gt[1] = None;
    let r = evaluate_sequence(&SequenceInput {
        name: "s",
        ids: &[1, 2],
        pred: &pred,
        gt: &gt,
        confidences: None,
        tolerance: 1.0,
    })
    .unwrap();
    assert_eq!(r.objects[1].j, vec![None, None, Some(1.0)]);
}

#[test]
fn contour_and_region_examples() {
    let a = boxed(40, 40, 2, 2, 10, 10);
    let far = boxed(40, 40, 28, 28, 36, 36);
    assert_eq!(contour_accuracy(&a, &a, 1.0).unwrap(), 1.0);
    assert_eq!(contour_accuracy(&a, &far, 1.0).unwrap(), 0.0);
    assert_eq!(region_similarity(&a, &far).unwrap(), 0.0);
    let empty = BitMask::new(40, 40);
    assert_eq!(region_similarity(&empty, &empty).unwrap(), 1.0);
    assert_eq!(contour_accuracy(&empty, &empty, 1.0).unwrap(), 1.0);
    assert_eq!(contour_accuracy(&a, &empty, 1.0).unwrap(), 0.0);
}

/// Foreground pixels 4-adjacent to background or the border.
fn boundary_oracle(m: &BitMask) -> Vec<(i64, i64)> {
    let (w, h) = m.dims();
    let on = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && m.get(x as usize, y as usize);
    let mut out = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if on(x, y)
                && [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .any(|(dx, dy)| !on(x + dx, y + dy))
            {
                out.push((x, y));
            }
        }
    }
    out
}

#[test]
fn dilated_square_is_within_one_pixel() {
    let square = boxed(8, 8, 2, 2, 6, 6);
    let dilated = BitMask::from_fn(8, 8, |x, y| {
        let (x, y) = (x as i32, y as i32);
        [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .any(|(dx, dy)| (2..6).contains(&(x + dx)) && (2..6).contains(&(y + dy)))
    });
    let (a, b) = (boundary_oracle(&square), boundary_oracle(&dilated));
    let near = |p: &(i64, i64), set: &[(i64, i64)]| set.iter().any(|q| ((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) <= 1);
    assert!(a.iter().all(|p| near(p, &b)) && b.iter().all(|p| near(p, &a)));
    assert_eq!(contour_accuracy(&dilated, &square, 1.0).unwrap(), 1.0);
}
