//! Polygon outlines and their conversion to masks.
//!
//! A pixel `(col, row)` is foreground iff its center `(col + 0.5, row + 0.5)`
//! lies inside the polygon under the even-odd rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Geometry(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(&(x, y)) = vertices
            .iter()
            .find(|&&(x, y)| !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0)
        {
            return Err(Error::Geometry(format!("invalid vertex ({x}, {y})")));
        }
        Ok(Polygon { vertices })
    }

    /// From the flat `[x0, y0, x1, y1, ...]` layout used by annotation files.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(2) {
            return Err(Error::Geometry(format!(
                "odd number of polygon coordinates ({})",
                coords.len()
            )));
        }
        Polygon::new(coords.chunks_exact(2).map(|c| (c[0], c[1])).collect())
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|&(x, y)| [x, y]).collect()
    }

    /// Even-odd crossing test. Edges are half-open in y so a horizontal ray
    /// through a shared vertex is counted once.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let mut inside = false;
        let n = self.vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = self.vertices[i];
            let (xj, yj) = self.vertices[j];
            if (yi > py) != (yj > py) && px < edge_x_at(xi, yi, xj, yj, py) {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    pub fn rasterize(&self, width: u32, height: u32) -> Result<BinaryMask> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "raster must be non-empty, got {width}x{height}"
            )));
        }
        let (wf, hf) = (width as f64, height as f64);
        let verts: Vec<(f64, f64)> = self
            .vertices
            .iter()
            .map(|&(x, y)| (x.clamp(0.0, wf), y.clamp(0.0, hf)))
            .collect();

        // Scan each row once, then walk columns; each column's foreground rows
        // become intervals in column-major order.
        let mut inside_rows: Vec<Vec<bool>> = Vec::with_capacity(height as usize);
        let mut crossings: Vec<f64> = Vec::new();
        let n = verts.len();
        for row in 0..height {
            let py = row as f64 + 0.5;
            crossings.clear();
            let mut j = n - 1;
            for i in 0..n {
                let (xi, yi) = verts[i];
                let (xj, yj) = verts[j];
                if (yi > py) != (yj > py) {
                    crossings.push(edge_x_at(xi, yi, xj, yj, py));
                }
                j = i;
            }
            crossings.sort_by(f64::total_cmp);
            let mut cells = vec![false; width as usize];
            if !crossings.is_empty() {
                // number of crossings strictly right of px decides parity
                let mut k = 0;
                for (col, cell) in cells.iter_mut().enumerate() {
                    let px = col as f64 + 0.5;
                    while k < crossings.len() && crossings[k] <= px {
                        k += 1;
                    }
                    *cell = (crossings.len() - k) % 2 == 1;
                }
            }
            inside_rows.push(cells);
        }

        let h = height as u64;
        let mut intervals = Vec::new();
        for col in 0..width as usize {
            let mut row = 0usize;
            while row < height as usize {
                if inside_rows[row][col] {
                    let start = row;
                    while row < height as usize && inside_rows[row][col] {
                        row += 1;
                    }
                    let base = col as u64 * h;
                    intervals.push((base + start as u64, base + row as u64));
                } else {
                    row += 1;
                }
            }
        }
        Ok(BinaryMask::from_intervals(width, height, intervals))
    }
}

#[inline]
fn edge_x_at(xi: f64, yi: f64, xj: f64, yj: f64, py: f64) -> f64 {
    (xj - xi) * (py - yi) / (yj - yi) + xi
}

/// Union of the rasterized parts of a multi-part outline.
pub fn rasterize_all(parts: &[Polygon], width: u32, height: u32) -> Result<BinaryMask> {
    let mut acc = BinaryMask::empty(width, height)?;
    for p in parts {
        acc = acc.union(&p.rasterize(width, height)?)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(v: &[(f64, f64)]) -> Polygon {
        Polygon::new(v.to_vec()).unwrap()
    }

    #[test]
    fn integer_rectangle() {
        let m = poly(&[(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)])
            .rasterize(4, 4)
            .unwrap();
        assert_eq!(m.area(), 4);
        let bm = m.decode();
        for col in 0..4 {
            for row in 0..4 {
                assert_eq!(bm.get(col, row), col < 2 && row < 2);
            }
        }
    }

    #[test]
    fn collinear_polygon_is_empty() {
        let m = poly(&[(0.0, 0.0), (2.0, 2.0), (4.0, 4.0)]).rasterize(4, 4).unwrap();
        assert!(m.is_empty());
        let m = poly(&[(0.0, 1.0), (2.0, 1.0), (4.0, 1.0)]).rasterize(4, 4).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn right_triangle_matches_center_rule() {
        let m = poly(&[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)]).rasterize(4, 4).unwrap();
        let bm = m.decode();
        for col in 0..4u32 {
            for row in 0..4u32 {
                let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
                assert_eq!(bm.get(col, row), x + y < 4.0, "pixel ({col},{row})");
            }
        }
        // (col + row) <= 2: 3 + 2 + 1 centers
        assert_eq!(m.area(), 6);
    }

    #[test]
    fn vertices_are_clamped() {
        let m = poly(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)])
            .rasterize(3, 2)
            .unwrap();
        assert_eq!(m.area(), 6);
    }

    #[test]
    fn too_few_vertices() {
        assert!(matches!(
            Polygon::new(vec![(0.0, 0.0), (1.0, 1.0)]),
            Err(Error::Geometry(_))
        ));
        assert!(Polygon::new(vec![(-1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).is_err());
        assert!(Polygon::from_flat(&[0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn multi_part_union() {
        let a = poly(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let b = poly(&[(2.0, 2.0), (3.0, 2.0), (3.0, 3.0), (2.0, 3.0)]);
        assert_eq!(rasterize_all(&[a, b], 3, 3).unwrap().area(), 2);
    }
}
