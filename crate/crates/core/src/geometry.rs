//! Integer boxes and packed binary masks.
//!
//! Boxes use half-open pixel ranges `[x0, x1) x [y0, y1)`. Masks pack each
//! row into `u64` words so that IOU reduces to word-wise AND/OR plus popcount.
//! Padding bits past `width` in the last word of a row are always zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box with half-open integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    x0: i32,
    y0: i32,
    x1: i32,
    y1: i32,
}

impl BBox {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Result<Self> {
        if x0 < x1 && y0 < y1 {
            Ok(Self { x0, y0, x1, y1 })
        } else {
            Err(Error::DegenerateBox { x0, y0, x1, y1 })
        }
    }

    /// The box covering a whole `width x height` frame.
    pub fn frame(width: usize, height: usize) -> Result<Self> {
        Self::new(0, 0, width as i32, height as i32)
    }

    pub fn x0(&self) -> i32 {
        self.x0
    }
    pub fn y0(&self) -> i32 {
        self.y0
    }
    pub fn x1(&self) -> i32 {
        self.x1
    }
    pub fn y1(&self) -> i32 {
        self.y1
    }

    pub fn width(&self) -> i32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) as f64 / 2.0, (self.y0 + self.y1) as f64 / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        (self.width() as f64).hypot(self.height() as f64)
    }

    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        BBox::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        )
        .ok()
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn contains_point(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn is_within(&self, width: usize, height: usize) -> bool {
        self.x0 >= 0 && self.y0 >= 0 && self.x1 as i64 <= width as i64 && self.y1 as i64 <= height as i64
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.is_within(width, height) {
            Ok(())
        } else {
            Err(Error::BoxOutOfFrame {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
                width,
                height,
            })
        }
    }

    pub fn translate(&self, dx: i32, dy: i32) -> BBox {
        BBox {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    /// Clamps to a frame; `None` if nothing of the box is inside it.
    pub fn clamp_to(&self, width: usize, height: usize) -> Option<BBox> {
        BBox::frame(width, height).ok().and_then(|f| self.intersect(&f))
    }
}

/// Intersection-over-union of two boxes.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersect(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Smallest box containing every input box.
pub fn enclosing_box(boxes: &[BBox]) -> Result<BBox> {
    let (first, rest) = boxes
        .split_first()
        .ok_or(Error::Empty("enclosing_box needs at least one box"))?;
    Ok(rest.iter().fold(*first, |acc, b| BBox {
        x0: acc.x0.min(b.x0),
        y0: acc.y0.min(b.y0),
        x1: acc.x1.max(b.x1),
        y1: acc.y1.max(b.y1),
    }))
}

/// Scales a box about its center by `ratio`, rounding outward and clamping to
/// the frame. A box lying entirely outside the frame expands to the whole frame.
pub fn expand_box(b: &BBox, ratio: f64, width: usize, height: usize) -> BBox {
    // Absorbs float noise such as 10 * 1.2 = 12.000000000000002 so that
    // outward rounding does not add a spurious pixel.
    const EPS: f64 = 1e-9;
    let grow = |lo: i32, hi: i32| {
        let extent = (hi - lo) as f64 * ratio;
        let sum = (lo + hi) as f64;
        let new_lo = ((sum - extent) / 2.0 + EPS).floor() as i32;
        let new_hi = ((sum + extent) / 2.0 - EPS).ceil() as i32;
        (new_lo.min(lo), new_hi.max(hi))
    };
    let (x0, x1) = grow(b.x0, b.x1);
    let (y0, y1) = grow(b.y0, b.y1);
    let expanded = BBox { x0, y0, x1, y1 };
    expanded.clamp_to(width, height).unwrap_or(BBox {
        x0: 0,
        y0: 0,
        x1: width as i32,
        y1: height as i32,
    })
}

/// Row-major binary mask packed into 64-bit words per row.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: usize,
    height: usize,
    stride: usize,
    words: Vec<u64>,
}

impl BitMask {
    pub fn new(width: usize, height: usize) -> Self {
        let stride = width.div_ceil(64);
        Self {
            width,
            height,
            stride,
            words: vec![0; stride * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Self::new(width, height);
        if width > 0 && height > 0 {
            m.fill_rect(0, 0, width, height);
        }
        m
    }

    /// Mask whose foreground is the box interior clipped to the frame.
    pub fn from_box(width: usize, height: usize, b: &BBox) -> Self {
        let mut m = Self::new(width, height);
        if let Some(c) = b.clamp_to(width, height) {
            m.fill_rect(c.x0 as usize, c.y0 as usize, c.x1 as usize, c.y1 as usize);
        }
        m
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn from_bools(width: usize, height: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                found: bits.len(),
            });
        }
        Ok(Self::from_fn(width, height, |x, y| bits[y * width + x]))
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

    pub fn same_dims(&self, other: &BitMask) -> Result<()> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(Error::dims(self.dims(), other.dims()))
        }
    }

    /// Packed words of row `y`.
    pub fn row(&self, y: usize) -> &[u64] {
        &self.words[y * self.stride..(y + 1) * self.stride]
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.words[y * self.stride + x / 64] >> (x % 64) & 1 == 1
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) outside mask");
        let w = &mut self.words[y * self.stride + x / 64];
        if value {
            *w |= 1 << (x % 64);
        } else {
            *w &= !(1 << (x % 64));
        }
    }

    /// Sets `[x0, x1) x [y0, y1)`; the range must lie inside the mask.
    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        assert!(x1 <= self.width && y1 <= self.height);
        if x0 >= x1 || y0 >= y1 {
            return;
        }
        for y in y0..y1 {
            let row = &mut self.words[y * self.stride..(y + 1) * self.stride];
            for (wi, word) in row.iter_mut().enumerate() {
                let lo = (wi * 64).max(x0);
                let hi = ((wi + 1) * 64).min(x1);
                if lo < hi {
                    *word |= span_bits(lo - wi * 64, hi - wi * 64);
                }
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Foreground AND, dimensions must agree.
    pub fn and(&self, other: &BitMask) -> Result<BitMask> {
        self.same_dims(other)?;
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect();
        Ok(self.with_words(words))
    }

    pub fn or(&self, other: &BitMask) -> Result<BitMask> {
        self.same_dims(other)?;
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect();
        Ok(self.with_words(words))
    }

    /// Keeps only the foreground inside `b`.
    pub fn clip_to_box(&self, b: &BBox) -> BitMask {
        let region = BitMask::from_box(self.width, self.height, b);
        self.and(&region).expect("same dimensions by construction")
    }

    fn with_words(&self, words: Vec<u64>) -> BitMask {
        BitMask {
            width: self.width,
            height: self.height,
            stride: self.stride,
            words,
        }
    }

    /// Tight bounding box of the foreground.
    pub fn tight_box(&self) -> Option<BBox> {
        let mut x0 = usize::MAX;
        let mut x1 = 0;
        let mut y0 = usize::MAX;
        let mut y1 = 0;
        for y in 0..self.height {
            let row = self.row(y);
            let first = row.iter().position(|&w| w != 0);
            let Some(first) = first else { continue };
            let last = row.iter().rposition(|&w| w != 0).expect("row has a set word");
            let lo = first * 64 + row[first].trailing_zeros() as usize;
            let hi = last * 64 + 64 - row[last].leading_zeros() as usize;
            x0 = x0.min(lo);
            x1 = x1.max(hi);
            y0 = y0.min(y);
            y1 = y + 1;
        }
        if x0 == usize::MAX {
            None
        } else {
            Some(BBox {
                x0: x0 as i32,
                y0: y0 as i32,
                x1: x1 as i32,
                y1: y1 as i32,
            })
        }
    }

    /// Calls `f(x, y)` for every foreground pixel in row-major order.
    pub fn for_each_foreground(&self, mut f: impl FnMut(usize, usize)) {
        for y in 0..self.height {
            for (wi, &word) in self.row(y).iter().enumerate() {
                let mut w = word;
                while w != 0 {
                    let bit = w.trailing_zeros() as usize;
                    f(wi * 64 + bit, y);
                    w &= w - 1;
                }
            }
        }
    }

    /// Moves the foreground by `(dx, dy)`; pixels leaving the frame are dropped.
    pub fn shifted(&self, dx: i32, dy: i32) -> BitMask {
        let mut out = BitMask::new(self.width, self.height);
        let (w, h) = (self.width as i64, self.height as i64);
        self.for_each_foreground(|x, y| {
            let nx = x as i64 + dx as i64;
            let ny = y as i64 + dy as i64;
            if nx >= 0 && ny >= 0 && nx < w && ny < h {
                out.set(nx as usize, ny as usize, true);
            }
        });
        out
    }

    /// Square-element morphology: `radius > 0` dilates, `radius < 0` erodes.
    /// Outside the frame counts as background for erosion.
    pub fn morph(&self, radius: i32) -> BitMask {
        if radius == 0 || self.width == 0 || self.height == 0 {
            return self.clone();
        }
        let dilate = radius > 0;
        let r = radius.unsigned_abs() as usize;
        let (w, h) = (self.width, self.height);
        // Separable passes using prefix counts of foreground pixels.
        let mut horiz = vec![false; w * h];
        let mut prefix = vec![0usize; w.max(h) + 1];
        for y in 0..h {
            for x in 0..w {
                prefix[x + 1] = prefix[x] + self.get(x, y) as usize;
            }
            for x in 0..w {
                let lo = x.saturating_sub(r);
                let hi = (x + r + 1).min(w);
                let n = prefix[hi] - prefix[lo];
                horiz[y * w + x] = if dilate {
                    n > 0
                } else {
                    x >= r && x + r < w && n == 2 * r + 1
                };
            }
        }
        let mut out = BitMask::new(w, h);
        for x in 0..w {
            for y in 0..h {
                prefix[y + 1] = prefix[y] + horiz[y * w + x] as usize;
            }
            for y in 0..h {
                let lo = y.saturating_sub(r);
                let hi = (y + r + 1).min(h);
                let n = prefix[hi] - prefix[lo];
                let on = if dilate {
                    n > 0
                } else {
                    y >= r && y + r < h && n == 2 * r + 1
                };
                if on {
                    out.set(x, y, true);
                }
            }
        }
        out
    }

    /// Run lengths over the row-major pixel sequence, alternating
    /// background/foreground and starting with background (possibly 0).
    pub fn to_rle(&self) -> Vec<u64> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u64;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                if v != current {
                    runs.push(len);
                    len = 0;
                    current = v;
                }
                len += 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_rle(width: usize, height: usize, runs: &[u64]) -> Result<Self> {
        let total: u64 = runs.iter().sum();
        if total != (width * height) as u64 {
            return Err(Error::invalid(
                "rle",
                format!("runs cover {total} pixels, mask has {}", width * height),
            ));
        }
        let mut m = BitMask::new(width, height);
        let mut pos = 0usize;
        for (i, &run) in runs.iter().enumerate() {
            let run = run as usize;
            if i % 2 == 1 {
                for p in pos..pos + run {
                    m.set(p % width, p / width, true);
                }
            }
            pos += run;
        }
        Ok(m)
    }
}

fn span_bits(lo: usize, hi: usize) -> u64 {
    debug_assert!(lo < hi && hi <= 64);
    let upper = if hi == 64 { u64::MAX } else { (1u64 << hi) - 1 };
    upper & !((1u64 << lo) - 1)
}

/// Foreground IOU; two empty masks count as full agreement.
pub fn mask_iou(a: &BitMask, b: &BitMask) -> Result<f64> {
    a.same_dims(b)?;
    let (inter, union) = a.words.iter().zip(&b.words).fold((0u64, 0u64), |(i, u), (x, y)| {
        (i + (x & y).count_ones() as u64, u + (x | y).count_ones() as u64)
    });
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Tight box of the mask foreground.
pub fn box_from_mask(m: &BitMask) -> Result<BBox> {
    m.tight_box().ok_or(Error::Empty("mask has no foreground"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x0: i32, y0: i32, x1: i32, y1: i32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn naive_iou(a: &BitMask, b: &BitMask) -> f64 {
        let (mut i, mut u) = (0u64, 0u64);
        for y in 0..a.height() {
            for x in 0..a.width() {
                let (p, q) = (a.get(x, y), b.get(x, y));
                i += (p && q) as u64;
                u += (p || q) as u64;
            }
        }
        if u == 0 {
            1.0
        } else {
            i as f64 / u as f64
        }
    }

    #[test]
    fn box_iou_examples() {
        assert_eq!(box_iou(&bx(0, 0, 10, 10), &bx(0, 0, 10, 10)), 1.0);
        assert_eq!(box_iou(&bx(0, 0, 10, 10), &bx(20, 20, 30, 30)), 0.0);
        assert_eq!(box_iou(&bx(0, 0, 10, 10), &bx(5, 0, 15, 10)), 50.0 / 150.0);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(BBox::new(3, 0, 3, 5).is_err());
        assert!(BBox::new(0, 5, 4, 2).is_err());
    }

    #[test]
    fn mask_iou_examples() {
        let a = BitMask::from_box(16, 16, &bx(2, 2, 8, 8));
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let b = BitMask::from_box(16, 16, &bx(9, 9, 12, 12));
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        let empty = BitMask::new(16, 16);
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 1.0);
        assert!(mask_iou(&a, &BitMask::new(16, 15)).is_err());
    }

    #[test]
    fn mask_iou_random_32x32_matches_pixel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let density: f64 = rng.gen();
            let a = BitMask::from_fn(32, 32, |_, _| rng.gen_bool(density));
            let b = BitMask::from_fn(32, 32, |_, _| rng.gen_bool(density));
            assert_eq!(mask_iou(&a, &b).unwrap(), naive_iou(&a, &b));
        }
    }

    #[test]
    fn enclosing_box_examples() {
        assert_eq!(enclosing_box(&[bx(0, 0, 2, 2)]).unwrap(), bx(0, 0, 2, 2));
        assert_eq!(
            enclosing_box(&[bx(0, 0, 2, 2), bx(5, 5, 8, 9)]).unwrap(),
            bx(0, 0, 8, 9)
        );
        assert!(enclosing_box(&[]).is_err());
    }

    #[test]
    fn expand_box_examples() {
        assert_eq!(expand_box(&bx(10, 10, 20, 20), 2.0, 100, 100), bx(5, 5, 25, 25));
        assert_eq!(expand_box(&bx(0, 0, 10, 10), 2.0, 100, 100), bx(0, 0, 15, 15));
        assert_eq!(expand_box(&bx(3, 7, 41, 9), 1.0, 100, 100), bx(3, 7, 41, 9));
        // 10 * 1.2 is not exactly 12 in binary; must still give 12 wide.
        assert_eq!(
            expand_box(&bx(0, 0, 10, 10), 1.2, 100, 100),
            bx(-1, -1, 11, 11).clamp_to(100, 100).unwrap()
        );
        assert_eq!(expand_box(&bx(20, 20, 30, 30), 1.2, 100, 100), bx(19, 19, 31, 31));
    }

    #[test]
    fn box_from_mask_examples() {
        let mut m = BitMask::new(10, 10);
        m.set(3, 4, true);
        assert_eq!(box_from_mask(&m).unwrap(), bx(3, 4, 4, 5));
        assert_eq!(box_from_mask(&BitMask::full(70, 3)).unwrap(), bx(0, 0, 70, 3));
        assert!(box_from_mask(&BitMask::new(10, 10)).is_err());
    }

    #[test]
    fn tight_box_across_word_boundary() {
        let mut m = BitMask::new(200, 4);
        m.set(63, 1, true);
        m.set(130, 2, true);
        assert_eq!(m.tight_box().unwrap(), bx(63, 1, 131, 3));
    }

    #[test]
    fn morph_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for radius in [-2, -1, 1, 2] {
            let m = BitMask::from_fn(20, 13, |_, _| rng.gen_bool(0.5));
            let got = m.morph(radius);
            let r = radius.abs() as i64;
            let naive = BitMask::from_fn(20, 13, |x, y| {
                let mut any = false;
                let mut all = true;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        let v = nx >= 0 && ny >= 0 && nx < 20 && ny < 13 && m.get(nx as usize, ny as usize);
                        any |= v;
                        all &= v;
                    }
                }
                if radius > 0 {
                    any
                } else {
                    all
                }
            });
            assert_eq!(got, naive, "radius {radius}");
        }
    }

    #[test]
    fn rle_layout() {
        let mut m = BitMask::new(3, 2);
        m.set(0, 0, true);
        m.set(2, 1, true);
        assert_eq!(m.to_rle(), vec![0, 1, 4, 1]);
        assert_eq!(BitMask::new(2, 2).to_rle(), vec![4]);
        assert!(BitMask::from_rle(3, 2, &[1, 1]).is_err());
    }

    fn arb_box(w: i32, h: i32) -> impl Strategy<Value = BBox> {
        (0..w, 0..h, 1..=w, 1..=h).prop_filter_map("degenerate", move |(a, b, c, d)| {
            BBox::new(a.min(c), b.min(d), a.max(c), b.max(d)).ok()
        })
    }

    fn arb_mask(w: usize, h: usize) -> impl Strategy<Value = BitMask> {
        proptest::collection::vec(any::<bool>(), w * h).prop_map(move |bits| BitMask::from_bools(w, h, &bits).unwrap())
    }

    proptest! {
        #[test]
        fn box_iou_symmetric_bounded(a in arb_box(40, 40), b in arb_box(40, 40)) {
            let ab = box_iou(&a, &b);
            prop_assert_eq!(ab, box_iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab == 1.0, a == b);
        }

        #[test]
        fn mask_iou_matches_oracle(a in arb_mask(8, 8), b in arb_mask(8, 8)) {
            let v = mask_iou(&a, &b).unwrap();
            prop_assert_eq!(v, naive_iou(&a, &b));
            prop_assert_eq!(v, mask_iou(&b, &a).unwrap());
            prop_assert_eq!(v == 1.0, a == b);
        }

        #[test]
        fn expand_monotone_and_bounded(b in arb_box(60, 50), r1 in 1.0f64..3.0, dr in 0.0f64..2.0) {
            let small = expand_box(&b, r1, 60, 50);
            let big = expand_box(&b, r1 + dr, 60, 50);
            prop_assert!(big.contains(&small));
            prop_assert!(small.contains(&b));
            prop_assert!(big.is_within(60, 50));
        }

        #[test]
        fn enclosing_contains_and_touches(boxes in proptest::collection::vec(arb_box(50, 50), 1..6)) {
            let e = enclosing_box(&boxes).unwrap();
            prop_assert!(boxes.iter().all(|b| e.contains(b)));
            prop_assert!(boxes.iter().any(|b| b.x0() == e.x0()));
            prop_assert!(boxes.iter().any(|b| b.y0() == e.y0()));
            prop_assert!(boxes.iter().any(|b| b.x1() == e.x1()));
            prop_assert!(boxes.iter().any(|b| b.y1() == e.y1()));
        }

        #[test]
        fn rle_round_trip(m in arb_mask(13, 7)) {
            prop_assert_eq!(BitMask::from_rle(13, 7, &m.to_rle()).unwrap(), m);
        }
    }
}
