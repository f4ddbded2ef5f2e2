//! Patch grids and per-view confidence maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `rows × cols` partition of a `width × height` image. Patch boundaries sit at
/// `⌊r·height/rows⌋` and `⌊c·width/cols⌋`, so patch sizes differ by at most one pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub width: usize,
    pub height: usize,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize, width: usize, height: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("patch grid dimensions must be at least 1".into()));
        }
        if rows > height || cols > width {
            return Err(Error::InvalidInput(format!(
                "a {rows}x{cols} patch grid does not fit a {width}x{height} image"
            )));
        }
        Ok(Self { rows, cols, width, height })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        r * self.height / self.rows..(r + 1) * self.height / self.rows
    }

    pub fn col_range(&self, c: usize) -> std::ops::Range<usize> {
        c * self.width / self.cols..(c + 1) * self.width / self.cols
    }

    pub fn patch_pixels(&self, patch: usize) -> usize {
        self.row_range(patch / self.cols).len() * self.col_range(patch % self.cols).len()
    }

    /// Patch index of every pixel, row-major.
    pub fn pixel_patches(&self) -> Vec<usize> {
        let col_of: Vec<usize> = (0..self.cols).flat_map(|c| self.col_range(c).map(move |_| c)).collect();
        let mut out = Vec::with_capacity(self.width * self.height);
        for r in 0..self.rows {
            for _ in self.row_range(r) {
                out.extend(col_of.iter().map(|c| r * self.cols + c));
            }
        }
        out
    }

    /// Patch containing pixel `(x, y)`.
    pub fn patch_at(&self, x: usize, y: usize) -> usize {
        // largest r with ⌊r·h/rows⌋ ≤ y
        let r = ((y + 1) * self.rows - 1) / self.height;
        let c = ((x + 1) * self.cols - 1) / self.width;
        r.min(self.rows - 1) * self.cols + c.min(self.cols - 1)
    }

    /// Mean of a per-pixel map within each patch.
    pub fn patch_means(&self, map: &[f64]) -> Vec<f64> {
        assert_eq!(map.len(), self.width * self.height);
        let mut sum = vec![0.0; self.len()];
        for (v, p) in map.iter().zip(self.pixel_patches()) {
            sum[p] += v;
        }
        sum.iter().enumerate().map(|(p, s)| s / self.patch_pixels(p) as f64).collect()
    }
}

/// Per-view patch confidences. `values` gate supervision; `scores` keep the raw
/// patch similarities they were thresholded from.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    pub view_id: u32,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub values: Vec<f64>,
    pub scores: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(view_id: u32, grid_rows: usize, grid_cols: usize, values: Vec<f64>, scores: Vec<f64>) -> Result<Self> {
        if grid_rows == 0 || grid_cols == 0 {
            return Err(Error::InvalidInput("confidence grid dimensions must be at least 1".into()));
        }
        let n = grid_rows * grid_cols;
        if values.len() != n {
            return Err(Error::LengthMismatch { left: values.len(), right: n });
        }
        if scores.len() != n {
            return Err(Error::LengthMismatch { left: scores.len(), right: n });
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("confidence values must lie in [0, 1]".into()));
        }
        Ok(Self { view_id, grid_rows, grid_cols, values, scores })
    }

    pub fn uniform(view_id: u32, grid_rows: usize, grid_cols: usize, value: f64) -> Self {
        let n = grid_rows * grid_cols;
        Self { view_id, grid_rows, grid_cols, values: vec![value; n], scores: vec![value; n] }
    }

    /// Binary map: 1 where `score ≥ tau`.
    pub fn from_scores(view_id: u32, grid_rows: usize, grid_cols: usize, scores: Vec<f64>, tau: f64) -> Result<Self> {
        let values = scores.iter().map(|&s| if s >= tau { 1.0 } else { 0.0 }).collect();
        Self::new(view_id, grid_rows, grid_cols, values, scores)
    }

    pub fn coverage(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn grid(&self, width: usize, height: usize) -> Result<PatchGrid> {
        PatchGrid::new(self.grid_rows, self.grid_cols, width, height)
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid_cols + col]
    }

    /// Expands patch values to a per-pixel weight map.
    pub fn pixel_weights(&self, width: usize, height: usize) -> Result<Vec<f64>> {
        let grid = self.grid(width, height)?;
        Ok(grid.pixel_patches().into_iter().map(|p| self.values[p]).collect())
    }

    /// Values on another grid: each target patch takes the value of the source patch
    /// containing its centre.
    pub fn resampled_values(&self, rows: usize, cols: usize, width: usize, height: usize) -> Result<Vec<f64>> {
        let src = self.grid(width, height)?;
        let dst = PatchGrid::new(rows, cols, width, height)?;
        let mut out = Vec::with_capacity(dst.len());
        for r in 0..rows {
            let yr = dst.row_range(r);
            let yc = (yr.start + yr.end - 1) / 2;
            for c in 0..cols {
                let xr = dst.col_range(c);
                let xc = (xr.start + xr.end - 1) / 2;
                out.push(self.values[src.patch_at(xc, yc)]);
            }
        }
        Ok(out)
    }

    pub fn to_record(&self) -> ConfidenceRecord {
        ConfidenceRecord {
            view_id: self.view_id,
            grid: [self.grid_rows, self.grid_cols],
            values: self.values.clone(),
            scores: self.scores.clone(),
        }
    }
}

/// Serialized form: `{view_id, grid: [rows, cols], values, scores}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub view_id: u32,
    pub grid: [usize; 2],
    pub values: Vec<f64>,
    pub scores: Vec<f64>,
}

impl ConfidenceRecord {
    pub fn to_map(&self) -> Result<ConfidenceMap> {
        ConfidenceMap::new(self.view_id, self.grid[0], self.grid[1], self.values.clone(), self.scores.clone())
    }
}

/// Mean coverage over a set of maps; 0 for an empty set.
pub fn mean_coverage(maps: &[ConfidenceMap]) -> f64 {
    if maps.is_empty() {
        return 0.0;
    }
    maps.iter().map(ConfidenceMap::coverage).sum::<f64>() / maps.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_partitions_image() {
        for (rows, cols, w, h) in [(16, 16, 128, 96), (32, 32, 128, 96), (3, 5, 17, 10), (1, 1, 16, 16)] {
            let g = PatchGrid::new(rows, cols, w, h).unwrap();
            let total: usize = (0..g.len()).map(|p| g.patch_pixels(p)).sum();
            assert_eq!(total, w * h);
            let pp = g.pixel_patches();
            assert_eq!(pp.len(), w * h);
            for y in 0..h {
                for x in 0..w {
                    assert_eq!(pp[y * w + x], g.patch_at(x, y));
                }
            }
        }
        assert!(PatchGrid::new(0, 4, 16, 16).is_err());
        assert!(PatchGrid::new(40, 4, 32, 32).is_err());
    }

    #[test]
    fn thresholding_example() {
        let m = ConfidenceMap::from_scores(0, 2, 2, vec![0.85, 0.50, 0.92, 0.79], 0.8).unwrap();
        assert_eq!(m.values, vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(m.coverage(), 0.5);
        let exact = ConfidenceMap::from_scores(0, 1, 1, vec![0.92], 0.92).unwrap();
        assert_eq!(exact.values, vec![1.0]);
    }

    #[test]
    fn nested_resampling_preserves_coverage() {
        let values: Vec<f64> = (0..256).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        let m = ConfidenceMap::new(1, 16, 16, values, vec![0.0; 256]).unwrap();
        let fine = m.resampled_values(32, 32, 128, 96).unwrap();
        let cov = fine.iter().sum::<f64>() / fine.len() as f64;
        assert!((cov - m.coverage()).abs() < 1e-12);
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(fine[r * 32 + c], m.value(r / 2, c / 2));
            }
        }
    }

    #[test]
    fn record_round_trip() {
        let m = ConfidenceMap::from_scores(3, 2, 3, vec![0.1, 0.9, 0.5, 0.8, 0.81, 0.0], 0.8).unwrap();
        let json = serde_json::to_string(&m.to_record()).unwrap();
        let back: ConfidenceRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_map().unwrap(), m);
        assert!(json.contains("\"grid\":[2,3]"));
    }

    #[test]
    fn invalid_maps_rejected() {
        assert!(ConfidenceMap::new(0, 2, 2, vec![1.0; 3], vec![0.0; 4]).is_err());
        assert!(ConfidenceMap::new(0, 1, 1, vec![1.5], vec![0.0]).is_err());
        assert!(ConfidenceMap::new(0, 0, 1, vec![], vec![]).is_err());
    }

    #[test]
    fn patch_means_average_within_patches() {
        let g = PatchGrid::new(2, 2, 4, 4).unwrap();
        let map: Vec<f64> = (0..16).map(|i| i as f64).collect();
        assert_eq!(g.patch_means(&map), vec![2.5, 4.5, 10.5, 12.5]);
    }
}
