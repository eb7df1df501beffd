//! Global Coherence Field: the average of per-pair GCC-PHAT values at each
//! grid point's geometric lags, its per-frame peak, and the modal estimate
//! for a static source.

mod grid;
mod lookup;

use std::collections::HashMap;

use rayon::prelude::*;

pub use grid::{Grid3D, GridSpec};
pub use lookup::{pair_lag, TdoaLookup};

use crate::gcc_phat::Correlation;
use crate::{Error, Point3, Result};

/// Points per parallel work item. Only affects scheduling, never results.
const CHUNK: usize = 4096;

/// Peak of the coherence field at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct GcfFrame {
    pub timestamp: f64,
    /// Enumeration index of the peak in the grid.
    pub peak_index: usize,
    pub peak_position: Point3,
    pub peak_value: f64,
    pub map: Option<Vec<f64>>,
}

/// Field value from per-pair correlations and the matching per-pair lags.
#[inline]
fn field_value(correlations: &[Correlation], lags: &[f64]) -> f64 {
    let sum: f64 = correlations
        .iter()
        .zip(lags)
        .map(|(c, &lag)| c.value_or_zero(lag))
        .sum();
    sum / correlations.len() as f64
}

fn check_pairs(correlations: &[Correlation], lookup: &TdoaLookup) -> Result<()> {
    if correlations.is_empty() {
        return Err(Error::invalid("no pair correlations"));
    }
    if correlations.len() != lookup.pair_count() {
        return Err(Error::invalid(format!(
            "{} correlations for a lookup of {} pairs",
            correlations.len(),
            lookup.pair_count()
        )));
    }
    Ok(())
}

/// Field values at every grid point, in enumeration order.
pub fn gcf_map(correlations: &[Correlation], lookup: &TdoaLookup) -> Result<Vec<f64>> {
    check_pairs(correlations, lookup)?;
    let mut map = vec![0.0; lookup.point_count()];
    map.par_chunks_mut(CHUNK).enumerate().for_each(|(c, out)| {
        for (i, v) in out.iter_mut().enumerate() {
            *v = field_value(correlations, lookup.lags_at(c * CHUNK + i));
        }
    });
    Ok(map)
}

/// Highest value first, lowest index on ties.
#[inline]
fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

/// Evaluates the field over the whole grid and returns its peak. Ties are
/// broken by the lowest enumeration index, so the result does not depend on
/// how the grid is split across threads.
pub fn gcf_frame(
    timestamp: f64,
    correlations: &[Correlation],
    lookup: &TdoaLookup,
    grid: &Grid3D,
    keep_map: bool,
) -> Result<GcfFrame> {
    check_pairs(correlations, lookup)?;
    if lookup.point_count() != grid.len() {
        return Err(Error::invalid("lookup was built for a different grid"));
    }
    let (peak_value, peak_index, map) = if keep_map {
        let map = gcf_map(correlations, lookup)?;
        let (v, i) = map
            .iter()
            .enumerate()
            .fold((f64::NEG_INFINITY, 0), |acc, (i, &v)| better(acc, (v, i)));
        (v, i, Some(map))
    } else {
        let n = grid.len();
        let (v, i) = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let v = field_value(correlations, lookup.lags_at(i));
                    if v > best.0 {
                        best = (v, i);
                    }
                }
                best
            })
            .reduce(|| (f64::NEG_INFINITY, usize::MAX), better);
        (v, i, None)
    };
    Ok(GcfFrame {
        timestamp,
        peak_index,
        peak_position: grid.point(peak_index),
        peak_value,
        map,
    })
}

/// Field for one timestamp evaluated point by point from the pair
/// correlations and microphone positions, without a precomputed lookup.
/// Values are bit-identical to those of [`gcf_map`] at grid points.
#[derive(Debug, Clone)]
pub struct CoherenceField<'a> {
    pub correlations: &'a [Correlation],
    /// Microphone positions in the grid's frame.
    pub positions: &'a [Point3],
    pub pairs: &'a [(usize, usize)],
    pub speed_of_sound: f64,
    pub sample_rate: f64,
}

impl CoherenceField<'_> {
    pub fn value_at(&self, p: &Point3) -> f64 {
        let sum: f64 = self
            .correlations
            .iter()
            .zip(self.pairs)
            .map(|(c, &(a, b))| {
                let lag = pair_lag(
                    p,
                    &self.positions[a],
                    &self.positions[b],
                    self.speed_of_sound,
                    self.sample_rate,
                );
                c.value_or_zero(lag)
            })
            .sum();
        sum / self.correlations.len() as f64
    }

    /// Value at the grid point nearest to `p`.
    pub fn value_near(&self, grid: &Grid3D, p: &Point3) -> f64 {
        self.value_at(&grid.point(grid.nearest_index(p)))
    }
}

/// Most frequent peak over a recording; ties go to the estimate that first
/// occurred earliest.
pub fn static_estimate(peaks: &[GcfFrame]) -> Result<Point3> {
    if peaks.is_empty() {
        return Err(Error::invalid("no frames to take the mode of"));
    }
    // index -> (count, first occurrence)
    let mut counts: HashMap<usize, (usize, usize)> = HashMap::new();
    for (order, f) in peaks.iter().enumerate() {
        counts.entry(f.peak_index).or_insert((0, order)).0 += 1;
    }
    let (_, &(_, first)) = counts
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .expect("non-empty");
    Ok(peaks[first].peak_position)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::MicArrayGeometry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid3D {
        Grid3D::new(GridSpec {
            x: [-1.0, 1.0],
            y: [0.0, 2.0],
            z: [1.3, 1.7],
            step: 0.1,
        })
        .unwrap()
    }

    fn random_correlations(rng: &mut ChaCha8Rng, lookup: &TdoaLookup) -> Vec<Correlation> {
        lookup
            .max_lags()
            .iter()
            .map(|&l| {
                Correlation::new(l, (0..2 * l + 1).map(|_| rng.random_range(-0.3..1.0)).collect())
                    .unwrap()
            })
            .collect()
    }

    fn frame(index: usize) -> GcfFrame {
        GcfFrame {
            timestamp: 0.0,
            peak_index: index,
            peak_position: Point3::new(index as f64, 0.0, 0.0),
            peak_value: 1.0,
            map: None,
        }
    }

    #[test]
    fn single_pair_field_is_the_pair_correlation() {
        let g = grid();
        let geom = MicArrayGeometry::dicit().with_pairs(vec![(0, 1)]).unwrap();
        let lookup = TdoaLookup::build(&g, &geom, 343.0, 48_000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let corr = random_correlations(&mut rng, &lookup);
        let map = gcf_map(&corr, &lookup).unwrap();
        for (i, v) in map.iter().enumerate() {
            assert_eq!(*v, corr[0].correlation_at(lookup.tau(0, i), 48_000.0).unwrap());
        }
    }

    #[test]
    fn zero_correlations_peak_at_first_point() {
        let g = grid();
        let lookup = TdoaLookup::build(&g, &MicArrayGeometry::dicit(), 343.0, 48_000.0).unwrap();
        let corr: Vec<Correlation> = lookup
            .max_lags()
            .iter()
            .map(|&l| Correlation::new(l, vec![0.0; 2 * l + 1]).unwrap())
            .collect();
        let f = gcf_frame(0.0, &corr, &lookup, &g, false).unwrap();
        assert_eq!(f.peak_value, 0.0);
        assert_eq!(f.peak_index, 0);
        assert_eq!(f.peak_position, g.point(0));
    }

    #[test]
    fn empty_or_mismatched_pairs() {
        let g = grid();
        let lookup = TdoaLookup::build(&g, &MicArrayGeometry::dicit(), 343.0, 48_000.0).unwrap();
        assert!(gcf_frame(0.0, &[], &lookup, &g, false).is_err());
        let one = vec![Correlation::new(1, vec![0.0; 3]).unwrap()];
        assert!(gcf_frame(0.0, &one, &lookup, &g, false).is_err());
    }

    #[test]
    fn mode_and_tie_rule() {
        assert_eq!(
            static_estimate(&[frame(1), frame(1), frame(2)]).unwrap(),
            frame(1).peak_position
        );
        assert_eq!(
            static_estimate(&[frame(2), frame(1)]).unwrap(),
            frame(2).peak_position
        );
        assert_eq!(
            static_estimate(&[frame(3), frame(1), frame(1), frame(3)]).unwrap(),
            frame(3).peak_position
        );
        assert!(static_estimate(&[]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut frames: Vec<GcfFrame> = (0..85).map(|_| frame(42)).collect();
        frames.extend((0..15).map(|_| frame(rng.random_range(0..1000))));
        // shuffle so the true point is not necessarily first
        for i in (1..frames.len()).rev() {
            frames.swap(i, rng.random_range(0..=i));
        }
        assert_eq!(static_estimate(&frames).unwrap(), frame(42).peak_position);
    }

    proptest! {
        #[test]
        fn field_properties(seed in any::<u64>()) {
            let g = grid();
            let geom = MicArrayGeometry::dicit();
            let lookup = TdoaLookup::build(&g, &geom, 343.0, 48_000.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let corr = random_correlations(&mut rng, &lookup);
            let map = gcf_map(&corr, &lookup).unwrap();

            // mean of single-pair fields
            let singles: Vec<Vec<f64>> = (0..corr.len()).map(|m| {
                let gm = geom.clone().with_pairs(vec![geom.pairs()[m]]).unwrap();
                let lm = TdoaLookup::build(&g, &gm, 343.0, 48_000.0).unwrap();
                gcf_map(&corr[m..=m], &lm).unwrap()
            }).collect();
            for i in 0..map.len() {
                let mean = singles.iter().map(|s| s[i]).sum::<f64>() / corr.len() as f64;
                prop_assert!((map[i] - mean).abs() < 1e-12);
                prop_assert!(map[i].abs() <= 1.0 + 1e-6);
            }

            // peak with and without the map agree, and match the direct field
            let a = gcf_frame(0.0, &corr, &lookup, &g, false).unwrap();
            let b = gcf_frame(0.0, &corr, &lookup, &g, true).unwrap();
            prop_assert_eq!(a.peak_index, b.peak_index);
            prop_assert_eq!(a.peak_value, b.peak_value);
            let positions: Vec<Point3> = geom.mics().iter().map(|m| m.position).collect();
            let field = CoherenceField {
                correlations: &corr,
                positions: &positions,
                pairs: geom.pairs(),
                speed_of_sound: 343.0,
                sample_rate: 48_000.0,
            };
            for i in (0..map.len()).step_by(37) {
                prop_assert_eq!(field.value_at(&g.point(i)), map[i]);
            }
        }
    }
}
