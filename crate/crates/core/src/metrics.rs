//! Region similarity J, boundary F-measure, and the long-term tracking F-score.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mask_iou, BitMask};

pub fn region_similarity(pred: &BitMask, gt: &BitMask) -> Result<f64> {
    mask_iou(pred, gt)
}

/// Foreground pixels with a 4-neighbor that is background or off the image.
pub fn boundary(m: &BitMask) -> Vec<(usize, usize)> {
    let (w, h) = m.dims();
    let mut out = Vec::new();
    m.for_each_foreground(|x, y| {
        let edge = x == 0
            || y == 0
            || x + 1 == w
            || y + 1 == h
            || !m.get(x - 1, y)
            || !m.get(x + 1, y)
            || !m.get(x, y - 1)
            || !m.get(x, y + 1);
        if edge {
            out.push((x, y));
        }
    });
    out
}

/// Default boundary tolerance: 0.8% of the image diagonal, rounded up, at
/// least one pixel.
pub fn default_tolerance(width: usize, height: usize) -> f64 {
    let diag = (width as f64).hypot(height as f64);
    (0.008 * diag).ceil().max(1.0)
}

/// Marks every pixel within Euclidean distance `tol` of some point.
fn near_map(points: &[(usize, usize)], width: usize, height: usize, tol: f64) -> Vec<bool> {
    let r = tol.floor() as i64;
    let tol2 = tol * tol;
    let disk: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= tol2)
        .collect();
    let mut near = vec![false; width * height];
    for &(x, y) in points {
        for &(dx, dy) in &disk {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height {
                near[ny as usize * width + nx as usize] = true;
            }
        }
    }
    near
}

/// Boundary F-measure with tolerance `tol` pixels.
pub fn contour_accuracy(pred: &BitMask, gt: &BitMask, tol: f64) -> Result<f64> {
    pred.same_dims(gt)?;
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::invalid("tol", format!("{tol} must be finite and >= 0")));
    }
    let (w, h) = pred.dims();
    let bp = boundary(pred);
    let bg = boundary(gt);
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let near_gt = near_map(&bg, w, h, tol);
    let near_pred = near_map(&bp, w, h, tol);
    let hits = |pts: &[(usize, usize)], near: &[bool]| pts.iter().filter(|&&(x, y)| near[y * w + x]).count();
    let precision = hits(&bp, &near_gt) as f64 / bp.len() as f64;
    let recall = hits(&bg, &near_pred) as f64 / bg.len() as f64;
    Ok(f_measure(precision, recall))
}

fn f_measure(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongTermScore {
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
    /// `None` when nothing was ever reported.
    pub threshold: Option<f64>,
}

/// Maximum tracking F-score over confidence thresholds.
///
/// At threshold `tau`, frames with a prediction and confidence `>= tau` are
/// reported. Precision is the mean overlap over reported frames; recall is the
/// summed overlap of reported frames over the number of frames where the
/// target is present. Overlap should be 0 wherever the target is absent.
pub fn longterm_f_score(
    confidences: &[f64],
    pred_present: &[bool],
    gt_present: &[bool],
    overlaps: &[f64],
) -> Result<LongTermScore> {
    let n = confidences.len();
    for len in [pred_present.len(), gt_present.len(), overlaps.len()] {
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: len,
            });
        }
    }
    if confidences.iter().chain(overlaps).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("confidence or overlap"));
    }
    let mut thresholds: Vec<f64> = (0..n).filter(|&i| pred_present[i]).map(|i| confidences[i]).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let positives = gt_present.iter().filter(|&&g| g).count();

    let mut best = LongTermScore {
        f: 0.0,
        precision: 0.0,
        recall: 0.0,
        threshold: None,
    };
    for &tau in &thresholds {
        let (mut reported, mut sum_all, mut sum_pos) = (0usize, 0.0, 0.0);
        for i in 0..n {
            if pred_present[i] && confidences[i] >= tau {
                reported += 1;
                sum_all += overlaps[i];
                if gt_present[i] {
                    sum_pos += overlaps[i];
                }
            }
        }
        let precision = if reported > 0 { sum_all / reported as f64 } else { 0.0 };
        let recall = if positives > 0 { sum_pos / positives as f64 } else { 0.0 };
        let f = f_measure(precision, recall);
        if best.threshold.is_none() || f > best.f {
            best = LongTermScore {
                f,
                precision,
                recall,
                threshold: Some(tau),
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScores {
    pub id: u8,
    /// Per frame; `None` on the first frame and on unannotated frames.
    pub j: Vec<Option<f64>>,
    pub f: Vec<Option<f64>>,
    pub j_mean: f64,
    pub f_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub name: String,
    pub objects: Vec<ObjectScores>,
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf_mean: f64,
    pub longterm: LongTermScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequences: Vec<SequenceReport>,
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf_mean: f64,
    pub longterm_f: f64,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Predictions and ground truth for one sequence, aligned by object.
pub struct SequenceInput<'a> {
    pub name: &'a str,
    pub ids: &'a [u8],
    /// Per frame, per object; `None` is an empty prediction.
    pub pred: &'a [Vec<Option<BitMask>>],
    /// Per frame (`None` if unannotated), per object (`None` if absent).
    pub gt: &'a [Option<Vec<Option<BitMask>>>],
    /// Per frame, per object; every prediction counts as confidence 1 when absent.
    pub confidences: Option<&'a [Vec<f64>]>,
    pub tolerance: f64,
}

/// Scores frames `1..T`; the first frame is the given initialization.
pub fn evaluate_sequence(input: &SequenceInput<'_>) -> Result<SequenceReport> {
    let n = input.gt.len();
    if input.pred.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: input.pred.len(),
        });
    }
    if let Some(c) = input.confidences {
        if c.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: c.len(),
            });
        }
    }
    let (mut lt_conf, mut lt_pred, mut lt_gt, mut lt_overlap) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut objects = Vec::with_capacity(input.ids.len());
    for (k, &id) in input.ids.iter().enumerate() {
        let mut js = vec![None; n];
        let mut fs = vec![None; n];
        for t in 1..n {
            let Some(g) = &input.gt[t] else { continue };
            let gt_mask = g.get(k).ok_or(Error::LengthMismatch {
                expected: input.ids.len(),
                found: g.len(),
            })?;
            let pred_mask = input.pred[t].get(k).ok_or(Error::LengthMismatch {
                expected: input.ids.len(),
                found: input.pred[t].len(),
            })?;
            let dims = gt_mask
                .as_ref()
                .or(pred_mask.as_ref())
                .map(BitMask::dims)
                .unwrap_or((0, 0));
            let empty = BitMask::new(dims.0, dims.1);
            let pm = pred_mask.as_ref().filter(|m| !m.is_empty()).unwrap_or(&empty);
            let gm = gt_mask.as_ref().unwrap_or(&empty);
            let j = region_similarity(pm, gm)?;
            js[t] = Some(j);
            fs[t] = Some(contour_accuracy(pm, gm, input.tolerance)?);

            let present = !pm.is_empty();
            let visible = !gm.is_empty();
            let conf = input.confidences.and_then(|c| c[t].get(k).copied()).unwrap_or(1.0);
            lt_conf.push(conf);
            lt_pred.push(present);
            lt_gt.push(visible);
            lt_overlap.push(if present && visible { j } else { 0.0 });
        }
        objects.push(ObjectScores {
            id,
            j_mean: mean(js.iter().flatten().copied()),
            f_mean: mean(fs.iter().flatten().copied()),
            j: js,
            f: fs,
        });
    }
    let j_mean = mean(objects.iter().map(|o| o.j_mean));
    let f_mean = mean(objects.iter().map(|o| o.f_mean));
    Ok(SequenceReport {
        name: input.name.to_string(),
        j_mean,
        f_mean,
        jf_mean: (j_mean + f_mean) / 2.0,
        longterm: longterm_f_score(&lt_conf, &lt_pred, &lt_gt, &lt_overlap)?,
        objects,
    })
}

impl MetricsReport {
    pub fn new(sequences: Vec<SequenceReport>) -> Self {
        let j_mean = mean(sequences.iter().map(|s| s.j_mean));
        let f_mean = mean(sequences.iter().map(|s| s.f_mean));
        Self {
            j_mean,
            f_mean,
            jf_mean: (j_mean + f_mean) / 2.0,
            longterm_f: mean(sequences.iter().map(|s| s.longterm.f)),
            sequences,
        }
    }

    /// One row per sequence, then the aggregate row. Field order is fixed.
    pub fn to_text(&self) -> String {
        let mut s = String::from("sequence\tJ_mean\tF_mean\tJF_mean\tLT_F\tLT_precision\tLT_recall\tLT_threshold\n");
        for q in &self.sequences {
            let thr = q
                .longterm
                .threshold
                .map_or_else(|| "-".to_string(), |t| format!("{t:.6}"));
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                q.name, q.j_mean, q.f_mean, q.jf_mean, q.longterm.f, q.longterm.precision, q.longterm.recall, thr
            );
        }
        let _ = writeln!(
            s,
            "mean\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t-\t-\t-",
            self.j_mean, self.f_mean, self.jf_mean, self.longterm_f
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(w: usize, x0: i32, y0: i32, x1: i32, y1: i32) -> BitMask {
        BitMask::from_box(w, w, &BBox::new(x0, y0, x1, y1).unwrap())
    }

    #[test]
    fn contour_examples() {
        let a = square(8, 2, 2, 6, 6);
        assert_eq!(contour_accuracy(&a, &a, 1.0).unwrap(), 1.0);
        let far = square(32, 0, 0, 3, 3);
        let other = square(32, 20, 20, 23, 23);
        assert_eq!(contour_accuracy(&far, &other, 1.0).unwrap(), 0.0);
        // Dilation by the radius-1 disk: every pixel within distance 1 of the square.
        let grown = BitMask::from_fn(8, 8, |x, y| {
            a.get(x, y)
                || (x > 0 && a.get(x - 1, y))
                || (x < 7 && a.get(x + 1, y))
                || (y > 0 && a.get(x, y - 1))
                || (y < 7 && a.get(x, y + 1))
        });
        assert_eq!(grown.count(), 16 + 16);
        assert_eq!(contour_accuracy(&grown, &a, 1.0).unwrap(), 1.0);
        let empty = BitMask::new(8, 8);
        assert_eq!(contour_accuracy(&empty, &empty, 1.0).unwrap(), 1.0);
        assert_eq!(contour_accuracy(&a, &empty, 1.0).unwrap(), 0.0);
    }

    /// Brute force: every boundary pair distance.
    fn contour_oracle(p: &BitMask, g: &BitMask, tol: f64) -> f64 {
        let bp = boundary(p);
        let bg = boundary(g);
        if bp.is_empty() && bg.is_empty() {
            return 1.0;
        }
        if bp.is_empty() || bg.is_empty() {
            return 0.0;
        }
        let within = |a: (usize, usize), set: &[(usize, usize)]| {
            set.iter().any(|&b| {
                let dx = a.0 as f64 - b.0 as f64;
                let dy = a.1 as f64 - b.1 as f64;
                (dx * dx + dy * dy).sqrt() <= tol
            })
        };
        let pr = bp.iter().filter(|&&a| within(a, &bg)).count() as f64 / bp.len() as f64;
        let rc = bg.iter().filter(|&&a| within(a, &bp)).count() as f64 / bg.len() as f64;
        f_measure(pr, rc)
    }

    #[test]
    fn contour_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = BitMask::from_fn(16, 12, |_, _| rng.gen_bool(0.4));
            let g = BitMask::from_fn(16, 12, |_, _| rng.gen_bool(0.4));
            let tol = rng.gen_range(0.0..3.0);
            let a = contour_accuracy(&p, &g, tol).unwrap();
            assert!((a - contour_oracle(&p, &g, tol)).abs() < 1e-12);
        }
    }

    #[test]
    fn contour_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = BitMask::from_fn(40, 40, |x, y| {
            (10..20).contains(&x) && (8..22).contains(&y) && rng.gen_bool(0.8)
        });
        let g = square(40, 11, 9, 21, 20);
        let a = contour_accuracy(&p, &g, 2.0).unwrap();
        let b = contour_accuracy(&p.shifted(5, 3), &g.shifted(5, 3), 2.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn default_tolerance_rounds_up() {
        assert_eq!(default_tolerance(10, 10), 1.0);
        // Diagonal of 854x480 is about 979.6; 0.8% is 7.84.
        assert_eq!(default_tolerance(854, 480), 8.0);
    }

    #[test]
    fn longterm_examples() {
        let r = longterm_f_score(&[1.0; 3], &[true; 3], &[true; 3], &[1.0; 3]).unwrap();
        assert_eq!(r.f, 1.0);
        assert_eq!(r.threshold, Some(1.0));
        let r = longterm_f_score(&[0.5; 3], &[false; 3], &[true; 3], &[0.0; 3]).unwrap();
        assert_eq!(r.f, 0.0);
        assert_eq!(r.threshold, None);
        assert!(longterm_f_score(&[1.0], &[], &[true], &[1.0]).is_err());
    }

    #[test]
    fn longterm_threshold_choice() {
        // The low-confidence frame is a false positive; dropping it raises precision.
        let r = longterm_f_score(
            &[0.9, 0.8, 0.2],
            &[true, true, true],
            &[true, true, false],
            &[0.9, 0.7, 0.0],
        )
        .unwrap();
        assert_eq!(r.threshold, Some(0.8));
        assert!((r.precision - 0.8).abs() < 1e-12);
        assert!((r.recall - 0.8).abs() < 1e-12);
    }

    #[test]
    fn report_text_layout() {
        let seq = SequenceReport {
            name: "a".into(),
            objects: Vec::new(),
            j_mean: 0.5,
            f_mean: 0.25,
            jf_mean: 0.375,
            longterm: LongTermScore {
                f: 0.5,
                precision: 0.5,
                recall: 0.5,
                threshold: Some(1.0),
            },
        };
        let text = MetricsReport::new(vec![seq]).to_text();
        assert_eq!(
            text,
            "sequence\tJ_mean\tF_mean\tJF_mean\tLT_F\tLT_precision\tLT_recall\tLT_threshold\n\
             a\t0.500000\t0.250000\t0.375000\t0.500000\t0.500000\t0.500000\t1.000000\n\
             mean\t0.500000\t0.250000\t0.375000\t0.500000\t-\t-\t-\n"
        );
    }
}
