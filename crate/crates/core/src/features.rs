//! Engineered state features.
//!
//! Each stream is a `grid x grid` mean-pooled luminance map of a blackened
//! view followed by six geometry features of the retained box. The agent state
//! concatenates the template stream and the prediction stream.

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::template::{compose_prediction_view, compose_template_view, Image, PredictedResult, TargetTemplate};

pub const GEOMETRY_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub grid: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { grid: 16 }
    }
}

impl FeatureConfig {
    /// Length of one stream.
    pub fn dim(&self) -> usize {
        self.grid * self.grid + GEOMETRY_FEATURES
    }

    pub fn state_dim(&self) -> usize {
        2 * self.dim()
    }
}

/// Agent input: template stream followed by prediction stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVec(Vec<f64>);

impl StateVec {
    pub fn from_vec(v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("state entry"));
        }
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Maps each pixel coordinate to its grid cell; boundaries are rounded.
fn cell_table(extent: usize, grid: usize) -> Vec<usize> {
    let bound = |i: usize| (2 * i * extent + grid) / (2 * grid);
    let mut table = vec![0; extent];
    for cell in 0..grid {
        for slot in &mut table[bound(cell)..bound(cell + 1)] {
            *slot = cell;
        }
    }
    table
}

fn cell_sizes(extent: usize, grid: usize) -> Vec<u64> {
    let bound = |i: usize| (2 * i * extent + grid) / (2 * grid);
    (0..grid).map(|c| (bound(c + 1) - bound(c)) as u64).collect()
}

fn finish_grid(sums: &[u64], width: usize, height: usize, grid: usize, out: &mut Vec<f64>) {
    let cw = cell_sizes(width, grid);
    let ch = cell_sizes(height, grid);
    for (gy, &h) in ch.iter().enumerate() {
        for (gx, &w) in cw.iter().enumerate() {
            let n = w * h;
            out.push(if n == 0 {
                0.0
            } else {
                sums[gy * grid + gx] as f64 / (n as f64 * 765.0)
            });
        }
    }
}

fn geometry(b: &BBox, width: usize, height: usize, out: &mut Vec<f64>) {
    let (w, h) = (width as f64, height as f64);
    let (cx, cy) = b.center();
    let (bw, bh) = (b.width() as f64, b.height() as f64);
    out.push(cx / w);
    out.push(cy / h);
    out.push(bw / w);
    out.push(bh / h);
    out.push(bw * bh / (w * h));
    out.push((bw / bh).clamp(0.0, 4.0) / 4.0);
}

/// Features of an already composed view.
pub fn extract(view: &Image, region_box: &BBox, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let (w, h) = view.dims();
    if w == 0 || h == 0 {
        return Err(Error::Empty("feature view"));
    }
    let cols = cell_table(w, cfg.grid);
    let rows = cell_table(h, cfg.grid);
    let mut sums = vec![0u64; cfg.grid * cfg.grid];
    for (y, &gy) in rows.iter().enumerate() {
        let base = gy * cfg.grid;
        for (px, &gx) in view.row(y).chunks_exact(3).zip(&cols) {
            sums[base + gx] += px[0] as u64 + px[1] as u64 + px[2] as u64;
        }
    }
    let mut out = Vec::with_capacity(cfg.dim());
    finish_grid(&sums, w, h, cfg.grid, &mut out);
    geometry(region_box, w, h, &mut out);
    Ok(out)
}

/// Template stream without materializing the blackened view.
fn template_stream(t: &TargetTemplate, cfg: &FeatureConfig, out: &mut Vec<f64>) {
    let frame = t.frame();
    let (w, h) = frame.dims();
    let b = t.bbox();
    let cols = cell_table(w, cfg.grid);
    let rows = cell_table(h, cfg.grid);
    let mut sums = vec![0u64; cfg.grid * cfg.grid];
    let (x0, x1) = (b.x0() as usize, b.x1() as usize);
    for (y, &gy) in rows.iter().enumerate().take(b.y1() as usize).skip(b.y0() as usize) {
        let base = gy * cfg.grid;
        let row = &frame.row(y)[x0 * 3..x1 * 3];
        for (px, &gx) in row.chunks_exact(3).zip(&cols[x0..x1]) {
            sums[base + gx] += px[0] as u64 + px[1] as u64 + px[2] as u64;
        }
    }
    finish_grid(&sums, w, h, cfg.grid, out);
    geometry(b, w, h, out);
}

/// Prediction stream without materializing the blackened view.
fn prediction_stream(p: &PredictedResult, cfg: &FeatureConfig, out: &mut Vec<f64>) {
    let frame = p.frame();
    let (w, h) = frame.dims();
    let cols = cell_table(w, cfg.grid);
    let rows = cell_table(h, cfg.grid);
    let mut sums = vec![0u64; cfg.grid * cfg.grid];
    let raw = frame.raw();
    p.mask().for_each_foreground(|x, y| {
        let i = (y * w + x) * 3;
        sums[rows[y] * cfg.grid + cols[x]] += raw[i] as u64 + raw[i + 1] as u64 + raw[i + 2] as u64;
    });
    finish_grid(&sums, w, h, cfg.grid, out);
    geometry(p.bbox(), w, h, out);
}

/// Concatenated template and prediction features.
pub fn build_state(t: &TargetTemplate, p: &PredictedResult, cfg: &FeatureConfig) -> Result<StateVec> {
    if t.frame().dims() != p.frame().dims() {
        return Err(Error::dims(t.frame().dims(), p.frame().dims()));
    }
    let mut v = Vec::with_capacity(cfg.state_dim());
    template_stream(t, cfg, &mut v);
    prediction_stream(p, cfg, &mut v);
    StateVec::from_vec(v)
}

/// Reference path: composes both views, then extracts.
pub fn build_state_composed(t: &TargetTemplate, p: &PredictedResult, cfg: &FeatureConfig) -> Result<StateVec> {
    if t.frame().dims() != p.frame().dims() {
        return Err(Error::dims(t.frame().dims(), p.frame().dims()));
    }
    let mut v = extract(&compose_template_view(t), t.bbox(), cfg)?;
    v.extend(extract(&compose_prediction_view(p), p.bbox(), cfg)?);
    StateVec::from_vec(v)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::BitMask;
    use crate::template::init_template;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x0: i32, y0: i32, x1: i32, y1: i32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn extract_examples() {
        let cfg = FeatureConfig::default();
        let b = bx(10, 10, 30, 20);
        let black = extract(&Image::new(50, 40, [0, 0, 0]), &b, &cfg).unwrap();
        assert_eq!(black.len(), 262);
        assert!(black[..256].iter().all(|&v| v == 0.0));
        let white = extract(&Image::new(50, 40, [255, 255, 255]), &b, &cfg).unwrap();
        assert!(white[..256].iter().all(|&v| v == 1.0));
        let g = &white[256..];
        assert_eq!(g, &[0.4, 0.375, 0.4, 0.25, 0.1, 0.5]);
        assert!(extract(&Image::new(0, 0, [0, 0, 0]), &b, &cfg).is_err());
    }

    #[test]
    fn cell_means_match_naive_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = FeatureConfig { grid: 4 };
        let img = Image::from_fn(10, 7, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let f = extract(&img, &bx(0, 0, 10, 7), &cfg).unwrap();
        let edges = |n: usize| -> Vec<usize> { (0..=4).map(|i| ((i * n) as f64 / 4.0).round() as usize).collect() };
        let (ex, ey) = (edges(10), edges(7));
        for gy in 0..4 {
            for gx in 0..4 {
                let mut s = 0.0;
                let mut n = 0.0;
                for y in ey[gy]..ey[gy + 1] {
                    for x in ex[gx]..ex[gx + 1] {
                        let [r, g, b] = img.pixel(x, y);
                        s += (r as f64 + g as f64 + b as f64) / 765.0;
                        n += 1.0;
                    }
                }
                assert!((f[gy * 4 + gx] - s / n).abs() < 1e-12);
            }
        }
    }

    fn random_pair(seed: u64) -> (TargetTemplate, PredictedResult) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.gen_range(20..70), rng.gen_range(20..70));
        let f1 = Arc::new(Image::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()]));
        let f2 = Arc::new(Image::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()]));
        let t = init_template(f1, bx(2, 3, w as i32 / 2, h as i32 - 1)).unwrap();
        let mask = BitMask::from_fn(w, h, |x, y| x > 4 && y > 4 && rng.gen_bool(0.4));
        let p = PredictedResult::new(f2, mask.tight_box().unwrap(), mask, 0.3).unwrap();
        (t, p)
    }

    #[test]
    fn fused_state_equals_composed_state() {
        for seed in 0..10 {
            let (t, p) = random_pair(seed);
            let cfg = FeatureConfig::default();
            let fused = build_state(&t, &p, &cfg).unwrap();
            assert_eq!(fused, build_state_composed(&t, &p, &cfg).unwrap());
            assert_eq!(fused.len(), 524);
            assert!(fused.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn swapping_streams_swaps_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let f1 = Arc::new(Image::from_fn(40, 30, |_, _| [rng.gen(), rng.gen(), rng.gen()]));
        let f2 = Arc::new(Image::from_fn(40, 30, |_, _| [rng.gen(), rng.gen(), rng.gen()]));
        // Filled-box masks make the box view and the mask view coincide.
        let t = init_template(f1, bx(2, 3, 17, 20)).unwrap();
        let u = init_template(f2, bx(20, 5, 38, 29)).unwrap();
        let cfg = FeatureConfig::default();
        let d = cfg.dim();
        let s = build_state(&t, &PredictedResult::from_template(&u, 0.0), &cfg).unwrap();
        let r = build_state(&u, &PredictedResult::from_template(&t, 0.0), &cfg).unwrap();
        assert_eq!(&s.as_slice()[..d], &r.as_slice()[d..]);
        assert_eq!(&s.as_slice()[d..], &r.as_slice()[..d]);
        assert_ne!(&s.as_slice()[..d], &s.as_slice()[d..]);
    }

    #[test]
    fn black_views_give_zero_grids() {
        let f = Arc::new(Image::new(32, 32, [0, 0, 0]));
        let t = init_template(f.clone(), bx(1, 1, 9, 9)).unwrap();
        let p = PredictedResult::from_template(&t, 1.0);
        let s = build_state(&t, &p, &FeatureConfig::default()).unwrap();
        assert!(s.as_slice()[..256].iter().all(|&v| v == 0.0));
        assert!(s.as_slice()[262..518].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pixel_outside_retained_region_has_no_effect() {
        let (t, p) = random_pair(5);
        let cfg = FeatureConfig::default();
        let s = build_state(&t, &p, &cfg).unwrap();
        let (w, h) = t.frame().dims();
        let mut f1 = (**t.frame()).clone();
        let mut f2 = (**p.frame()).clone();
        for y in 0..h {
            for x in 0..w {
                if !t.bbox().contains_point(x as i32, y as i32) {
                    f1.put_pixel(x, y, [7, 7, 7]);
                }
                if !p.mask().get(x, y) {
                    f2.put_pixel(x, y, [200, 1, 3]);
                }
            }
        }
        let t2 = init_template(Arc::new(f1), *t.bbox()).unwrap();
        let p2 = PredictedResult::new(Arc::new(f2), *p.bbox(), p.mask().clone(), 0.3).unwrap();
        assert_eq!(build_state(&t2, &p2, &cfg).unwrap(), s);
    }
}
