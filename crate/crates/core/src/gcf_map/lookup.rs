use rayon::prelude::*;

use super::Grid3D;
use crate::audio_io::MicArrayGeometry;
use crate::gcc_phat::max_lag_for;
use crate::{Error, Point3, Result};

/// Time difference of arrival of `p` at `first` relative to `second`, in
/// samples. Positive when `p` is closer to `second`.
#[inline]
pub fn pair_lag(p: &Point3, first: &Point3, second: &Point3, speed_of_sound: f64, sample_rate: f64) -> f64 {
    ((p - first).norm() - (p - second).norm()) / speed_of_sound * sample_rate
}

/// Per-pair lag (samples) of every grid point, stored point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaLookup {
    pair_count: usize,
    sample_rate: f64,
    max_lags: Vec<usize>,
    lags: Vec<f64>,
}

impl TdoaLookup {
    /// Lookup for a static array, in array-local coordinates.
    pub fn build(
        grid: &Grid3D,
        geom: &MicArrayGeometry,
        speed_of_sound: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        let positions: Vec<Point3> = geom.mics().iter().map(|m| m.position).collect();
        Self::build_with_positions(grid, &positions, geom.pairs(), speed_of_sound, sample_rate)
    }

    /// Lookup for explicit microphone positions (e.g. a moving array at one
    /// timestamp). `pairs` index into `positions`.
    pub fn build_with_positions(
        grid: &Grid3D,
        positions: &[Point3],
        pairs: &[(usize, usize)],
        speed_of_sound: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("no microphone pairs"));
        }
        if !(speed_of_sound > 0.0) || !(sample_rate > 0.0) {
            return Err(Error::invalid("speed of sound and sample rate must be positive"));
        }
        let mut max_lags = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            let (pa, pb) = match (positions.get(a), positions.get(b)) {
                (Some(pa), Some(pb)) => (pa, pb),
                _ => return Err(Error::invalid(format!("pair ({a}, {b}) out of range"))),
            };
            let d = (pa - pb).norm();
            if !(d > 0.0) {
                return Err(Error::invalid(format!("pair ({a}, {b}) has zero distance")));
            }
            max_lags.push(max_lag_for(d, speed_of_sound, sample_rate));
        }

        let m = pairs.len();
        let mut lags = vec![0.0; grid.len() * m];
        lags.par_chunks_mut(m * 1024)
            .enumerate()
            .for_each(|(chunk, out)| {
                let first = chunk * 1024;
                for (offset, row) in out.chunks_exact_mut(m).enumerate() {
                    let p = grid.point(first + offset);
                    for (slot, &(a, b)) in row.iter_mut().zip(pairs) {
                        *slot = pair_lag(&p, &positions[a], &positions[b], speed_of_sound, sample_rate);
                    }
                }
            });
        Ok(Self {
            pair_count: m,
            sample_rate,
            max_lags,
            lags,
        })
    }

    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    pub fn point_count(&self) -> usize {
        self.lags.len() / self.pair_count
    }

    pub fn max_lags(&self) -> &[usize] {
        &self.max_lags
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Lags of all pairs at grid point `index`.
    #[inline]
    pub fn lags_at(&self, index: usize) -> &[f64] {
        &self.lags[index * self.pair_count..(index + 1) * self.pair_count]
    }

    pub fn lag(&self, pair: usize, index: usize) -> f64 {
        self.lags[index * self.pair_count + pair]
    }

    /// Time difference in seconds.
    pub fn tau(&self, pair: usize, index: usize) -> f64 {
        self.lag(pair, index) / self.sample_rate
    }

    /// Whether the point's lag for `pair` lies inside the stored correlation
    /// window. Unusable points contribute zero for that pair.
    pub fn usable(&self, pair: usize, index: usize) -> bool {
        self.lag(pair, index).abs() <= self.max_lags[pair] as f64
    }
}
