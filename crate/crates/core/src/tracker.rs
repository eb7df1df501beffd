//! Particle filter over the per-frame coherence field.
//!
//! Each frame the particles are diffused by Gaussian noise, weighted by a
//! likelihood whose form depends on how strong the frame's field peak is
//! relative to the strongest peak of the recording (`gamma`), reduced to a
//! weighted-mean estimate and resampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gcf_map::Grid3D;
use crate::smooth_eval::{CoordFrame, Trajectory, TrajectoryEntry};
use crate::{Error, Point3, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub particles: usize,
    /// Diagonal of the per-frame diffusion covariance, m².
    pub process_variance: [f64; 3],
    /// Standard deviation of the Gaussian likelihood around the field peak, m.
    pub likelihood_std: f64,
    /// Fraction of `gamma` above which the field peak is trusted directly.
    pub alpha: f64,
    /// Fraction of `gamma` above which the field itself weights particles.
    pub beta: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            particles: 100,
            process_variance: [0.1, 0.1, 0.005],
            likelihood_std: 0.2,
            alpha: 0.2,
            beta: 0.1,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::invalid("particle count must be positive"));
        }
        if self.process_variance.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("process variances must be positive"));
        }
        if !(self.likelihood_std > 0.0) {
            return Err(Error::invalid("likelihood std must be positive"));
        }
        if !(self.alpha > self.beta && self.beta > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "need 1 >= alpha > beta > 0, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Which likelihood a frame used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodBranch {
    /// Gaussian around the field peak.
    Peak,
    /// Field value at each particle.
    Map,
    /// No information; all particles weighted equally.
    Uniform,
}

/// Branch for a frame whose field peak is `peak_value`. Depends on nothing
/// else.
pub fn select_branch(peak_value: f64, gamma: f64, alpha: f64, beta: f64) -> LikelihoodBranch {
    if peak_value >= alpha * gamma {
        LikelihoodBranch::Peak
    } else if peak_value >= beta * gamma {
        LikelihoodBranch::Map
    } else {
        LikelihoodBranch::Uniform
    }
}

/// Field value near a point, used by the [`LikelihoodBranch::Map`] branch.
pub trait FieldLookup {
    fn value_near(&self, p: &Point3) -> f64;
}

impl<F: Fn(&Point3) -> f64> FieldLookup for F {
    fn value_near(&self, p: &Point3) -> f64 {
        self(p)
    }
}

/// What the tracker sees of one frame.
pub struct Observation<'a> {
    pub timestamp: f64,
    pub peak_position: Point3,
    pub peak_value: f64,
    pub field: &'a dyn FieldLookup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub states: Vec<Point3>,
    pub weights: Vec<f64>,
    /// Set when an update left every weight at zero.
    pub degenerate: bool,
}

impl ParticleSet {
    pub fn new(states: Vec<Point3>) -> Self {
        let n = states.len();
        Self {
            states,
            weights: vec![1.0 / n as f64; n],
            degenerate: false,
        }
    }

    /// `n` particles uniform over the box `[lo, hi]`.
    pub fn uniform<R: Rng>(n: usize, lo: &Point3, hi: &Point3, rng: &mut R) -> Self {
        let states = (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(lo.x..=hi.x),
                    rng.random_range(lo.y..=hi.y),
                    rng.random_range(lo.z..=hi.z),
                )
            })
            .collect();
        Self::new(states)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn set_uniform_weights(&mut self) {
        let w = 1.0 / self.len() as f64;
        self.weights.iter_mut().for_each(|x| *x = w);
        self.degenerate = false;
    }

    pub fn unweighted_mean(&self) -> Point3 {
        self.states.iter().sum::<Point3>() / self.len() as f64
    }
}

/// Adds independent zero-mean Gaussian noise with per-axis `variance` to
/// every particle, then clamps to the box `[lo, hi]`.
pub fn propagate<R: Rng>(
    set: &mut ParticleSet,
    variance: [f64; 3],
    lo: &Point3,
    hi: &Point3,
    rng: &mut R,
) {
    let std = variance.map(f64::sqrt);
    for s in &mut set.states {
        for axis in 0..3 {
            let n: f64 = StandardNormal.sample(rng);
            s[axis] = (s[axis] + std[axis] * n).clamp(lo[axis], hi[axis]);
        }
    }
}

/// Weights the particles with the frame's selective likelihood and
/// normalizes them to sum to one. Returns the branch used.
///
/// If every weight comes out zero the set is flagged degenerate and its
/// weights are left at zero.
pub fn update_weights(
    set: &mut ParticleSet,
    obs: &Observation<'_>,
    gamma: f64,
    cfg: &TrackerConfig,
) -> Result<LikelihoodBranch> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    let branch = select_branch(obs.peak_value, gamma, cfg.alpha, cfg.beta);
    match branch {
        LikelihoodBranch::Peak => {
            // in log space: the density can underflow far from the peak
            let two_var = 2.0 * cfg.likelihood_std * cfg.likelihood_std;
            let log_w: Vec<f64> = set
                .states
                .iter()
                .map(|s| -(s - obs.peak_position).norm_squared() / two_var)
                .collect();
            let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (w, l) in set.weights.iter_mut().zip(&log_w) {
                *w = (l - max).exp();
            }
        }
        LikelihoodBranch::Map => {
            for (w, s) in set.weights.iter_mut().zip(&set.states) {
                *w = obs.field.value_near(s).max(0.0);
            }
        }
        LikelihoodBranch::Uniform => set.weights.iter_mut().for_each(|w| *w = 1.0),
    }
    let total: f64 = set.weights.iter().sum();
    if total > 0.0 && total.is_finite() {
        set.weights.iter_mut().for_each(|w| *w /= total);
        set.degenerate = false;
    } else {
        set.weights.iter_mut().for_each(|w| *w = 0.0);
        set.degenerate = true;
    }
    Ok(branch)
}

/// Weighted mean of the particle states.
pub fn estimate(set: &ParticleSet) -> Result<Point3> {
    let total: f64 = set.weights.iter().sum();
    if set.degenerate || !(total > 0.0) {
        return Err(Error::Degenerate("all particle weights are zero".into()));
    }
    let sum: Point3 = set
        .states
        .iter()
        .zip(&set.weights)
        .map(|(s, &w)| s * w)
        .sum();
    Ok(sum / total)
}

/// Systematic resampling: the ancestors selected by the comb
/// `(offset + i) / draws`, `i = 0..draws`, over the cumulative weights.
/// `offset` lies in `[0, 1)`.
pub fn systematic_indices(weights: &[f64], draws: usize, offset: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(draws);
    let mut cumulative = weights[0] / total;
    let mut j = 0;
    for i in 0..draws {
        let u = (offset + i as f64) / draws as f64;
        while u >= cumulative && j + 1 < n {
            j += 1;
            cumulative += weights[j] / total;
        }
        out.push(j);
    }
    out
}

/// Sequential importance resampling with the systematic scheme. Output
/// weights are uniform.
pub fn resample_sir<R: Rng>(set: &mut ParticleSet, rng: &mut R) -> Result<()> {
    let total: f64 = set.weights.iter().sum();
    if set.degenerate || !(total > 0.0) {
        return Err(Error::Degenerate("cannot resample all-zero weights".into()));
    }
    let offset: f64 = rng.random_range(0.0..1.0);
    let idx = systematic_indices(&set.weights, set.len(), offset);
    set.states = idx.iter().map(|&i| set.states[i]).collect();
    set.set_uniform_weights();
    Ok(())
}

/// Per-frame bookkeeping from [`ParticleFilter::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub estimate: Point3,
    pub branch: LikelihoodBranch,
    /// The update zeroed every weight and the unweighted mean was used.
    pub degenerate: bool,
}

/// Particle filter confined to a grid's bounding box.
#[derive(Debug, Clone)]
pub struct ParticleFilter {
    cfg: TrackerConfig,
    lo: Point3,
    hi: Point3,
    particles: ParticleSet,
    rng: ChaCha8Rng,
}

impl ParticleFilter {
    /// Particles start uniform over the grid box.
    pub fn new(cfg: TrackerConfig, grid: &Grid3D, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = grid.bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = ParticleSet::uniform(cfg.particles, &lo, &hi, &mut rng);
        Ok(Self {
            cfg,
            lo,
            hi,
            particles,
            rng,
        })
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    /// propagate → update → estimate → resample.
    pub fn step(&mut self, obs: &Observation<'_>, gamma: f64) -> Result<StepOutcome> {
        propagate(
            &mut self.particles,
            self.cfg.process_variance,
            &self.lo,
            &self.hi,
            &mut self.rng,
        );
        let branch = update_weights(&mut self.particles, obs, gamma, &self.cfg)?;
        let (estimate, degenerate) = match estimate(&self.particles) {
            Ok(p) => (p, false),
            Err(_) => {
                self.particles.set_uniform_weights();
                (self.particles.unweighted_mean(), true)
            }
        };
        resample_sir(&mut self.particles, &mut self.rng)?;
        Ok(StepOutcome {
            estimate,
            branch,
            degenerate,
        })
    }
}

/// Tracking result: one estimate per frame plus the branch each frame took.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub trajectory: Trajectory,
    pub branches: Vec<LikelihoodBranch>,
    pub degenerate_frames: usize,
}

/// Runs the filter over time-ordered observations. `gamma` is the largest
/// field peak over the whole recording.
pub fn track<'a>(
    observations: impl IntoIterator<Item = Observation<'a>>,
    gamma: f64,
    cfg: &TrackerConfig,
    grid: &Grid3D,
    seed: u64,
    frame: CoordFrame,
) -> Result<TrackOutput> {
    let mut pf = ParticleFilter::new(cfg.clone(), grid, seed)?;
    let mut entries = Vec::new();
    let mut branches = Vec::new();
    let mut degenerate_frames = 0;
    for obs in observations {
        let out = pf.step(&obs, gamma)?;
        entries.push(TrajectoryEntry {
            timestamp: obs.timestamp,
            position: out.estimate,
        });
        branches.push(out.branch);
        degenerate_frames += usize::from(out.degenerate);
    }
    if entries.is_empty() {
        return Err(Error::invalid("no frames to track"));
    }
    Ok(TrackOutput {
        trajectory: Trajectory::new(entries, frame)?,
        branches,
        degenerate_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcf_map::GridSpec;
    use proptest::prelude::*;

    fn grid() -> Grid3D {
        Grid3D::new(GridSpec::default()).unwrap()
    }

    fn no_field(_: &Point3) -> f64 {
        0.0
    }

    fn obs(peak_value: f64, peak: Point3, field: &dyn FieldLookup) -> Observation<'_> {
        Observation {
            timestamp: 0.0,
            peak_position: peak,
            peak_value,
            field,
        }
    }

    #[test]
    fn tiny_noise_leaves_states_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let states = vec![Point3::new(0.1, 1.0, 1.5), Point3::new(-1.0, 2.0, 1.4)];
        let mut set = ParticleSet::new(states.clone());
        let (lo, hi) = grid().bounds();
        propagate(&mut set, [1e-20; 3], &lo, &hi, &mut rng);
        for (a, b) in set.states.iter().zip(&states) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn diffusion_variance_matches_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let var = [0.1, 0.1, 0.005];
        let big = Point3::new(1e6, 1e6, 1e6);
        let n = 100_000;
        let mut set = ParticleSet::new(vec![Point3::zeros(); n]);
        propagate(&mut set, var, &-big, &big, &mut rng);
        for axis in 0..3 {
            let mean = set.states.iter().map(|s| s[axis]).sum::<f64>() / n as f64;
            let v = set.states.iter().map(|s| (s[axis] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((v / var[axis] - 1.0).abs() < 0.05, "axis {axis}: {v}");
        }
    }

    #[test]
    fn escaping_particles_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (lo, hi) = grid().bounds();
        let mut set = ParticleSet::new(vec![hi; 50]);
        propagate(&mut set, [1.0; 3], &lo, &hi, &mut rng);
        for s in &set.states {
            for a in 0..3 {
                assert!(s[a] >= lo[a] && s[a] <= hi[a]);
            }
        }
        assert!(set.states.iter().any(|s| s.z == hi.z));
    }

    #[test]
    fn branch_thresholds() {
        let (a, b) = (0.2, 0.1);
        assert_eq!(select_branch(0.2, 1.0, a, b), LikelihoodBranch::Peak);
        assert_eq!(select_branch(0.19, 1.0, a, b), LikelihoodBranch::Map);
        assert_eq!(select_branch(0.1, 1.0, a, b), LikelihoodBranch::Map);
        assert_eq!(select_branch(0.099, 1.0, a, b), LikelihoodBranch::Uniform);
    }

    #[test]
    fn peak_branch_favours_particle_at_peak() {
        let peak = Point3::new(0.5, 2.0, 1.5);
        let mut set = ParticleSet::new(vec![
            Point3::new(0.0, 2.0, 1.5),
            peak,
            Point3::new(0.5, 2.3, 1.5),
            Point3::new(2.9, 0.0, 1.3),
        ]);
        let cfg = TrackerConfig::default();
        let b = update_weights(&mut set, &obs(0.9, peak, &no_field), 1.0, &cfg).unwrap();
        assert_eq!(b, LikelihoodBranch::Peak);
        let best = (0..4).max_by(|&i, &j| set.weights[i].total_cmp(&set.weights[j])).unwrap();
        assert_eq!(best, 1);
        assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // very far particles underflow gracefully
        assert!(set.weights[3] >= 0.0);
    }

    #[test]
    fn silence_branch_is_uniform() {
        let mut set = ParticleSet::new(vec![Point3::new(0.0, 1.0, 1.5); 7]);
        set.weights = vec![0.5, 0.1, 0.1, 0.1, 0.1, 0.1, 0.0];
        let cfg = TrackerConfig::default();
        let b = update_weights(&mut set, &obs(0.05, Point3::zeros(), &no_field), 1.0, &cfg).unwrap();
        assert_eq!(b, LikelihoodBranch::Uniform);
        assert!(set.weights.iter().all(|&w| (w - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn map_branch_uses_field_values() {
        let field = |p: &Point3| p.x;
        let mut set = ParticleSet::new(vec![
            Point3::new(0.1, 1.0, 1.5),
            Point3::new(0.3, 1.0, 1.5),
            Point3::new(-0.4, 1.0, 1.5),
            Point3::new(0.6, 1.0, 1.5),
        ]);
        let cfg = TrackerConfig::default();
        let b = update_weights(&mut set, &obs(0.15, Point3::zeros(), &field), 1.0, &cfg).unwrap();
        assert_eq!(b, LikelihoodBranch::Map);
        let expect = [0.1, 0.3, 0.0, 0.6].map(|v| v / 1.0);
        for (w, e) in set.weights.iter().zip(expect) {
            assert!((w - e).abs() < 1e-12);
        }
    }

    #[test]
    fn all_negative_field_is_degenerate() {
        let field = |_: &Point3| -0.5;
        let mut set = ParticleSet::new(vec![Point3::zeros(); 3]);
        let cfg = TrackerConfig::default();
        update_weights(&mut set, &obs(0.15, Point3::zeros(), &field), 1.0, &cfg).unwrap();
        assert!(set.degenerate);
        assert!(matches!(estimate(&set), Err(Error::Degenerate(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(resample_sir(&mut set, &mut rng).is_err());
    }

    #[test]
    fn gamma_must_be_positive() {
        let mut set = ParticleSet::new(vec![Point3::zeros(); 3]);
        let cfg = TrackerConfig::default();
        assert!(update_weights(&mut set, &obs(0.1, Point3::zeros(), &no_field), 0.0, &cfg).is_err());
    }

    #[test]
    fn estimates() {
        let p = Point3::new(1.0, 2.0, 1.5);
        assert!((estimate(&ParticleSet::new(vec![p; 5])).unwrap() - p).norm() < 1e-12);
        let mut set = ParticleSet::new(vec![p, Point3::zeros()]);
        set.weights = vec![1.0, 0.0];
        assert_eq!(estimate(&set).unwrap(), p);
    }

    #[test]
    fn systematic_hand_execution() {
        let idx = systematic_indices(&[0.75, 0.25, 0.0, 0.0], 4, 0.1);
        assert_eq!(idx, vec![0, 0, 0, 1]);
        let mut set = ParticleSet::new((0..6).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect());
        set.weights = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        resample_sir(&mut set, &mut rng).unwrap();
        assert!(set.states.iter().all(|s| *s == Point3::zeros()));
        assert!(set.weights.iter().all(|&w| w == 1.0 / 6.0));
    }

    #[test]
    fn systematic_counts_for_two_particles() {
        // comb at 0.025, 0.275, 0.525, 0.775 against cumulative 0.75, 1.0
        let mut counts = [0usize; 2];
        for i in systematic_indices(&[0.75, 0.25], 4, 0.1) {
            counts[i] += 1;
        }
        assert_eq!(counts, [3, 1]);
    }

    #[test]
    fn uniform_weights_resample_to_each_particle_once() {
        // with uniform weights the systematic comb lands once in every bin
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10;
        let mut tally = vec![0usize; n];
        let trials = 10_000;
        for _ in 0..trials {
            let mut set = ParticleSet::new((0..n).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect());
            resample_sir(&mut set, &mut rng).unwrap();
            for s in &set.states {
                tally[s.x as usize] += 1;
            }
        }
        // chi-square against the input multiset (each particle once per trial)
        let expected = trials as f64;
        let chi2: f64 = tally.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 9 dof, p = 0.01 critical value
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    #[test]
    fn silence_keeps_estimates_in_box() {
        let g = grid();
        let (lo, hi) = g.bounds();
        let observations = (0..200).map(|k| Observation {
            timestamp: k as f64 * 0.1,
            peak_position: Point3::zeros(),
            peak_value: 0.01,
            field: &no_field,
        });
        let out = track(observations, 1.0, &TrackerConfig::default(), &g, 7, CoordFrame::ArrayLocal)
            .unwrap();
        assert_eq!(out.trajectory.len(), 200);
        assert!(out.branches.iter().all(|&b| b == LikelihoodBranch::Uniform));
        for e in out.trajectory.entries() {
            for a in 0..3 {
                assert!(e.position[a] >= lo[a] && e.position[a] <= hi[a]);
            }
        }
    }

    #[test]
    fn converges_on_a_steady_peak() {
        let g = grid();
        let truth = Point3::new(0.7, 2.1, 1.6);
        let observations = (0..100).map(|k| Observation {
            timestamp: k as f64 * 0.1,
            peak_position: truth,
            peak_value: 0.8,
            field: &no_field,
        });
        let out = track(observations, 0.9, &TrackerConfig::default(), &g, 3, CoordFrame::ArrayLocal)
            .unwrap();
        let tail = &out.trajectory.entries()[75..];
        for e in tail {
            assert!((e.position - truth).norm() < 0.1);
        }
    }

    #[test]
    fn empty_track_is_an_error() {
        let g = grid();
        let none: Vec<Observation<'_>> = Vec::new();
        assert!(track(none, 1.0, &TrackerConfig::default(), &g, 0, CoordFrame::ArrayLocal).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrackerConfig::default();
        assert!(c.validate().is_ok());
        c.beta = 0.3;
        assert!(c.validate().is_err());
        let c = TrackerConfig {
            process_variance: [0.1, 0.0, 0.1],
            ..TrackerConfig::default()
        };
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn seeded_runs_are_reproducible_and_scale_free(seed in any::<u64>(), scale_pow in -3i32..4) {
            let g = grid();
            let field = |p: &Point3| (-(p - Point3::new(0.5, 1.5, 1.5)).norm_squared()).exp() - 0.2;
            let peaks: Vec<f64> = (0..40).map(|k| [0.9, 0.15, 0.02, 0.5][k % 4]).collect();
            let run = |scale: f64| {
                let scaled = move |p: &Point3| field(p) * scale;
                let observations: Vec<(f64, f64)> = peaks.iter().enumerate().map(|(k, &v)| (k as f64 * 0.1, v * scale)).collect();
                track(
                    observations.iter().map(|&(t, v)| Observation {
                        timestamp: t,
                        peak_position: Point3::new(0.5, 1.5, 1.5),
                        peak_value: v,
                        field: &scaled,
                    }),
                    0.9 * scale,
                    &TrackerConfig::default(),
                    &g,
                    seed,
                    CoordFrame::ArrayLocal,
                ).unwrap()
            };
            let a = run(1.0);
            let b = run(1.0);
            prop_assert_eq!(&a, &b);
            // power-of-two scaling is exact in floating point
            let c = run(2f64.powi(scale_pow));
            prop_assert_eq!(&a.branches, &c.branches);
            prop_assert_eq!(&a.trajectory, &c.trajectory);
        }
    }
}
