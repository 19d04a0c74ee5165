//! Occupancy mapping: log-odds local submaps and the fused cumulative map.

pub mod cumulative;
pub mod submap;

pub use cumulative::{build_cumulative, query_point, CumulativeMap, FusionParams, QueryResult};
pub use submap::{occluded_increment, Beam, CellEvidence, LocalSubmap, Scan, SensorModelParams, SubmapStore};

/// Integer cell index. Planar maps keep the third component at zero.
pub type CellIndex = [i64; 3];

pub fn logistic(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Cell containing `p`.
pub fn cell_of(p: &[f64], h: f64) -> CellIndex {
    let mut c = [0i64; 3];
    for (i, v) in p.iter().enumerate().take(3) {
        c[i] = (v / h).floor() as i64;
    }
    c
}

/// Centre of a cell, truncated to `dim` coordinates.
pub fn cell_center(c: &CellIndex, h: f64, dim: usize) -> Vec<f64> {
    (0..dim).map(|i| (c[i] as f64 + 0.5) * h).collect()
}

/// Dense axis-aligned block of cells with a fixed index origin.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid<T> {
    pub lo: CellIndex,
    pub size: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Clone> DenseGrid<T> {
    pub fn new(lo: CellIndex, size: [usize; 3], fill: T) -> Self {
        let n = size[0] * size[1] * size[2];
        DenseGrid { lo, size, data: vec![fill; n] }
    }

    /// Grid spanning `lo..=hi`.
    pub fn spanning(lo: CellIndex, hi: CellIndex, fill: T) -> Self {
        let size = [
            (hi[0] - lo[0] + 1).max(0) as usize,
            (hi[1] - lo[1] + 1).max(0) as usize,
            (hi[2] - lo[2] + 1).max(0) as usize,
        ];
        Self::new(lo, size, fill)
    }

    pub fn hi(&self) -> CellIndex {
        [
            self.lo[0] + self.size[0] as i64 - 1,
            self.lo[1] + self.size[1] as i64 - 1,
            self.lo[2] + self.size[2] as i64 - 1,
        ]
    }

    #[inline]
    pub fn offset(&self, c: &CellIndex) -> Option<usize> {
        let mut idx = 0usize;
        for a in 0..3 {
            let d = c[a] - self.lo[a];
            if d < 0 || d as usize >= self.size[a] {
                return None;
            }
            idx = idx * self.size[a] + d as usize;
        }
        Some(idx)
    }

    #[inline]
    pub fn strides(&self) -> [usize; 3] {
        [self.size[1] * self.size[2], self.size[2], 1]
    }

    pub fn get(&self, c: &CellIndex) -> Option<&T> {
        self.offset(c).map(|i| &self.data[i])
    }

    pub fn get_mut(&mut self, c: &CellIndex) -> Option<&mut T> {
        self.offset(c).map(move |i| &mut self.data[i])
    }

    pub fn index_of(&self, flat: usize) -> CellIndex {
        let s = self.strides();
        let i0 = flat / s[0];
        let i1 = (flat % s[0]) / s[1];
        let i2 = flat % s[1];
        [self.lo[0] + i0 as i64, self.lo[1] + i1 as i64, self.lo[2] + i2 as i64]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

impl DenseGrid<f64> {
    /// Correlate in place with a symmetric 1-D factor along `axis`.
    pub fn correlate_axis(&mut self, axis: usize, f: &[f64]) {
        if f.len() <= 1 {
            if let Some(&w) = f.first() {
                if w != 1.0 {
                    self.data.iter_mut().for_each(|v| *v *= w);
                }
            }
            return;
        }
        let k = (f.len() / 2) as i64;
        let s = self.strides();
        let n = self.size[axis] as i64;
        let stride = s[axis];
        let mut line = vec![0.0; n as usize];
        let mut out = vec![0.0; n as usize];
        for start in self.line_starts(axis) {
            for i in 0..n as usize {
                line[i] = self.data[start + i * stride];
            }
            for i in 0..n {
                let mut acc = 0.0;
                let j0 = (k - i).max(0);
                let j1 = (k + n - 1 - i).min(2 * k);
                for j in j0..=j1 {
                    acc += line[(i + j - k) as usize] * f[j as usize];
                }
                out[i as usize] = acc;
            }
            for i in 0..n as usize {
                self.data[start + i * stride] = out[i];
            }
        }
    }

    fn line_starts(&self, axis: usize) -> Vec<usize> {
        let s = self.strides();
        let mut starts = Vec::new();
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for i in 0..self.size[a] {
            for j in 0..self.size[b] {
                starts.push(i * s[a] + j * s[b]);
            }
        }
        starts
    }
}

impl DenseGrid<bool> {
    /// Dilate in place by `k` cells along `axis`.
    pub fn dilate_axis(&mut self, axis: usize, k: usize) {
        if k == 0 {
            return;
        }
        let s = self.strides();
        let n = self.size[axis];
        let stride = s[axis];
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut prefix = vec![0usize; n + 1];
        for i in 0..self.size[a] {
            for j in 0..self.size[b] {
                let start = i * s[a] + j * s[b];
                for t in 0..n {
                    prefix[t + 1] = prefix[t] + self.data[start + t * stride] as usize;
                }
                for t in 0..n {
                    let lo = t.saturating_sub(k);
                    let hi = (t + k + 1).min(n);
                    self.data[start + t * stride] = prefix[hi] > prefix[lo];
                }
            }
        }
    }
}
