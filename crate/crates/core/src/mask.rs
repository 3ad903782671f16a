//! Binary masks stored as column-major run lengths.
//!
//! A mask of `width x height` pixels is flattened column by column (all rows of
//! column 0 top to bottom, then column 1, ...). `runs` alternates background and
//! foreground lengths, starting with background; the first run may be zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense boolean grid, column-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "bitmap must be non-empty, got {width}x{height}"
            )));
        }
        Ok(Bitmap {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        })
    }

    /// Build from row-major nested rows: `rows[row][col]`.
    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let mut bm = Bitmap::new(width as u32, height as u32)?;
        for (row, cells) in rows.iter().enumerate() {
            for (col, &v) in cells.iter().enumerate() {
                bm.set(col as u32, row as u32, v);
            }
        }
        Ok(bm)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn index(&self, col: u32, row: u32) -> usize {
        debug_assert!(col < self.width && row < self.height);
        col as usize * self.height as usize + row as usize
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        self.data[self.index(col, row)]
    }

    pub fn set(&mut self, col: u32, row: u32, value: bool) {
        let i = self.index(col, row);
        self.data[i] = value;
    }

    /// Pixels in column-major order.
    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> u64 {
        self.data.iter().filter(|&&v| v).count() as u64
    }

    /// Row-major nested rows, the inverse of [`Bitmap::from_rows`].
    pub fn to_rows(&self) -> Vec<Vec<bool>> {
        (0..self.height)
            .map(|row| (0..self.width).map(|col| self.get(col, row)).collect())
            .collect()
    }
}

/// Axis-aligned rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::Geometry(format!("bbox extent must be positive, got {w}x{h}")));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let iw = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let ih = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        if inter == 0.0 {
            return 0.0;
        }
        inter / (self.area() + other.area() - inter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    runs: Vec<u64>,
}

impl BinaryMask {
    /// Validate run lengths. Zero-length runs after the first are merged away
    /// (they carry no pixels), so the stored runs are always canonical.
    pub fn from_runs(width: u32, height: u32, runs: Vec<u64>) -> Result<Self> {
        check_dims(width, height)?;
        let total = pixel_count(width, height);
        let mut sum = 0u64;
        for &r in &runs {
            sum = sum
                .checked_add(r)
                .ok_or_else(|| Error::Corrupt("run lengths overflow".into()))?;
        }
        if sum != total {
            return Err(Error::Corrupt(format!(
                "runs sum to {sum}, expected {width}x{height} = {total}"
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            runs: canonicalize(runs),
        })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        check_dims(width, height)?;
        Ok(BinaryMask {
            width,
            height,
            runs: vec![pixel_count(width, height)],
        })
    }

    /// Build from sorted, non-overlapping foreground intervals `[start, end)`
    /// in column-major pixel indices. Adjacent intervals are coalesced.
    pub(crate) fn from_intervals(
        width: u32,
        height: u32,
        intervals: impl IntoIterator<Item = (u64, u64)>,
    ) -> Self {
        let total = pixel_count(width, height);
        let mut runs = Vec::new();
        let mut cursor = 0u64;
        for (start, end) in intervals {
            debug_assert!(start >= cursor && end <= total);
            if start == end {
                continue;
            }
            if start == cursor && !runs.is_empty() {
                // extend the previous foreground run
                *runs.last_mut().unwrap() += end - start;
            } else {
                runs.push(start - cursor);
                runs.push(end - start);
            }
            cursor = end;
        }
        if cursor < total || runs.is_empty() {
            runs.push(total - cursor);
        }
        BinaryMask {
            width,
            height,
            runs,
        }
    }

    pub fn encode(bitmap: &Bitmap) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u64;
        for &v in bitmap.as_slice() {
            if v != current {
                runs.push(len);
                len = 0;
                current = v;
            }
            len += 1;
        }
        runs.push(len);
        BinaryMask {
            width: bitmap.width,
            height: bitmap.height,
            runs,
        }
    }

    pub fn decode(&self) -> Bitmap {
        let mut bm = Bitmap::new(self.width, self.height).expect("mask dimensions are positive");
        for (start, end) in self.intervals() {
            for v in &mut bm.data[start as usize..end as usize] {
                *v = true;
            }
        }
        bm
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u64] {
        &self.runs
    }

    /// Foreground intervals `[start, end)` in column-major pixel indices.
    pub fn intervals(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.iter().enumerate().filter_map(move |(i, &len)| {
            let start = pos;
            pos += len;
            (i % 2 == 1).then_some((start, pos))
        })
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::Geometry(format!(
                "mask dimensions differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Tight pixel bounding box of the foreground.
    pub fn bbox(&self) -> Result<BBox> {
        let h = self.height as u64;
        let (mut x0, mut x1, mut y0, mut y1) = (u64::MAX, 0u64, u64::MAX, 0u64);
        let mut any = false;
        for (start, end) in self.intervals() {
            any = true;
            let last = end - 1;
            let (c0, r0) = (start / h, start % h);
            let (c1, r1) = (last / h, last % h);
            x0 = x0.min(c0);
            x1 = x1.max(c1 + 1);
            if c0 == c1 {
                y0 = y0.min(r0);
                y1 = y1.max(r1 + 1);
            } else {
                // crossing a column boundary covers the bottom row of c0 and the top row of c1
                y0 = 0;
                y1 = h;
            }
        }
        if !any {
            return Err(Error::EmptyObject("mask has no foreground pixels".into()));
        }
        Ok(BBox {
            x: x0 as f64,
            y: y0 as f64,
            w: (x1 - x0) as f64,
            h: (y1 - y0) as f64,
        })
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64> {
        self.check_same_dims(other)?;
        let mut a = self.intervals().peekable();
        let mut b = other.intervals().peekable();
        let mut inter = 0u64;
        while let (Some(&(as_, ae)), Some(&(bs, be))) = (a.peek(), b.peek()) {
            let lo = as_.max(bs);
            let hi = ae.min(be);
            if hi > lo {
                inter += hi - lo;
            }
            if ae <= be {
                a.next();
            } else {
                b.next();
            }
        }
        Ok(inter)
    }

    /// |a ∩ b| / |a ∪ b|, defined as 0 when both masks are empty.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        let inter = self.intersection_area(other)?;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            return Ok(0.0);
        }
        Ok(inter as f64 / union as f64)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_dims(other)?;
        let mut merged: Vec<(u64, u64)> = Vec::new();
        let mut all: Vec<(u64, u64)> = self.intervals().chain(other.intervals()).collect();
        all.sort_unstable();
        for (s, e) in all {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        Ok(BinaryMask::from_intervals(self.width, self.height, merged))
    }
}

fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        Err(Error::Dimension(format!(
            "mask must be non-empty, got {width}x{height}"
        )))
    } else {
        Ok(())
    }
}

fn pixel_count(width: u32, height: u32) -> u64 {
    width as u64 * height as u64
}

fn canonicalize(runs: Vec<u64>) -> Vec<u64> {
    if runs.iter().skip(1).all(|&r| r > 0) {
        return runs;
    }
    let mut out: Vec<u64> = Vec::with_capacity(runs.len());
    for (i, r) in runs.into_iter().enumerate() {
        let is_fg = i % 2 == 1;
        if out.is_empty() {
            if is_fg {
                out.push(0);
            }
            out.push(r);
            continue;
        }
        if r == 0 {
            continue;
        }
        let next_is_fg = out.len() % 2 == 1;
        if is_fg == next_is_fg {
            out.push(r);
        } else {
            *out.last_mut().unwrap() += r;
        }
    }
    out
}
