use serde::{Deserialize, Serialize};

use crate::{Error, Point3, Result};

/// Search-grid extent and spacing, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x: [-3.0, 3.0],
            y: [-0.1, 4.0],
            z: [1.3, 1.75],
            step: 0.02,
        }
    }
}

impl GridSpec {
    pub fn with_step(self, step: f64) -> Self {
        Self { step, ..self }
    }
}

/// Regular lattice `lo + i * step` per axis, enumerated x fastest, then y,
/// then z.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3D {
    spec: GridSpec,
    lower: Point3,
    counts: [usize; 3],
}

fn axis_count(range: [f64; 2], step: f64) -> usize {
    ((range[1] - range[0]) / step + 1e-9).floor() as usize + 1
}

impl Grid3D {
    pub fn new(spec: GridSpec) -> Result<Self> {
        if !(spec.step > 0.0) || !spec.step.is_finite() {
            return Err(Error::invalid(format!("grid step {} must be positive", spec.step)));
        }
        for (name, r) in [("x", spec.x), ("y", spec.y), ("z", spec.z)] {
            if !(r[1] > r[0]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::invalid(format!(
                    "grid {name} range [{}, {}] is degenerate",
                    r[0], r[1]
                )));
            }
        }
        Ok(Self {
            spec,
            lower: Point3::new(spec.x[0], spec.y[0], spec.z[0]),
            counts: [
                axis_count(spec.x, spec.step),
                axis_count(spec.y, spec.step),
                axis_count(spec.z, spec.step),
            ],
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn step(&self) -> f64 {
        self.spec.step
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Corners of the box the grid was declared over.
    pub fn bounds(&self) -> (Point3, Point3) {
        (
            self.lower,
            Point3::new(self.spec.x[1], self.spec.y[1], self.spec.z[1]),
        )
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.counts[0] * (iy + self.counts[1] * iz)
    }

    pub fn axis_indices(&self, index: usize) -> [usize; 3] {
        let ix = index % self.counts[0];
        let rest = index / self.counts[0];
        [ix, rest % self.counts[1], rest / self.counts[1]]
    }

    pub fn point(&self, index: usize) -> Point3 {
        let [ix, iy, iz] = self.axis_indices(index);
        self.lower + Point3::new(ix as f64, iy as f64, iz as f64) * self.spec.step
    }

    /// Index of the grid point nearest to `p` (coordinates clamped to the
    /// lattice).
    pub fn nearest_index(&self, p: &Point3) -> usize {
        let mut idx = [0usize; 3];
        for axis in 0..3 {
            let f = ((p[axis] - self.lower[axis]) / self.spec.step).round();
            idx[axis] = if f.is_nan() || f <= 0.0 {
                0
            } else {
                (f as usize).min(self.counts[axis] - 1)
            };
        }
        self.index(idx[0], idx[1], idx[2])
    }

    /// Clamps `p` into the declared box.
    pub fn clamp(&self, p: &Point3) -> Point3 {
        let (lo, hi) = self.bounds();
        Point3::new(
            p.x.clamp(lo.x, hi.x),
            p.y.clamp(lo.y, hi.y),
            p.z.clamp(lo.z, hi.z),
        )
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = Point3> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }
}
