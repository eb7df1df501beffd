//! Two-pass batch pipeline.
//!
//! Pass 1 computes, per output frame, the pair correlations and the peak of
//! the coherence field, and with them the recording-wide peak maximum that
//! the tracker's likelihood thresholds are relative to. Pass 2 runs the
//! particle filter over the cached records, then front/back correction,
//! smoothing and, if a reference is available, evaluation.

mod cache;
mod config;

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

pub use cache::{CacheHeader, PassOne, PeakRecord};
pub use config::{Mode, PipelineConfig, RunOptions, STATIC_WINDOW, TRACKING_WINDOW};

use crate::audio_io::{timestamps_at_rate, AudioClip, FrameTransformer, MicArrayGeometry};
use crate::front_back::{apply_correction, default_t0, detect_turning, TurningDecision, TurningKind};
use crate::gcc_phat::{max_lag_for, GccPhat, PHAT_EPSILON};
use crate::gcf_map::{gcf_frame, static_estimate, CoherenceField, Grid3D, TdoaLookup};
use crate::smooth_eval::{
    evaluate_with, read_activity_csv, smooth_outliers, to_angles, CoordFrame, EvalOptions, EvalReport,
    GroundTruth, Trajectory, TrajectoryEntry,
};
use crate::tracker::{track, FieldLookup, LikelihoodBranch, Observation};
use crate::{Error, Point3, Result};

/// Peak values below this are treated as no signal at all.
const SILENCE: f64 = 1e-9;

/// Timing of the first pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PassOneStats {
    /// Time spent evaluating coherence fields, summed over frames.
    pub gcf: Duration,
    /// Time spent building lag lookups.
    pub lookup: Duration,
    pub total: Duration,
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Geometry with the configured pair override applied.
fn effective_geometry(cfg: &PipelineConfig, geometry: &MicArrayGeometry) -> Result<MicArrayGeometry> {
    let Some(pairs) = &cfg.pairs else {
        return Ok(geometry.clone());
    };
    let index_of = |id: usize| {
        geometry
            .mics()
            .iter()
            .position(|m| m.id == id)
            .ok_or_else(|| Error::invalid(format!("pair references unknown microphone {id}")))
    };
    let pairs = pairs
        .iter()
        .map(|&[a, b]| Ok((index_of(a)?, index_of(b)?)))
        .collect::<Result<Vec<_>>>()?;
    geometry.clone().with_pairs(pairs)
}

/// First pass with the given analysis window.
pub fn pass_one(
    cfg: &PipelineConfig,
    clip: &AudioClip,
    geometry: &MicArrayGeometry,
    window_length: usize,
    opts: &RunOptions,
) -> Result<(PassOne, PassOneStats)> {
    cfg.validate()?;
    with_pool(opts.threads, || pass_one_inner(cfg, clip, geometry, window_length))?
}

fn pass_one_inner(
    cfg: &PipelineConfig,
    clip: &AudioClip,
    geometry: &MicArrayGeometry,
    window_length: usize,
) -> Result<(PassOne, PassOneStats)> {
    let started = Instant::now();
    let geometry = effective_geometry(cfg, geometry)?;
    let channels = geometry.used_channels();
    if let Some(&c) = channels.iter().find(|&&c| c >= clip.channel_count()) {
        return Err(Error::invalid(format!(
            "geometry uses channel {c} but the audio has {} channels",
            clip.channel_count()
        )));
    }
    if window_length > clip.len() {
        return Err(Error::invalid(format!(
            "window of {window_length} samples is longer than the clip ({} samples)",
            clip.len()
        )));
    }
    let grid = Grid3D::new(cfg.grid)?;
    let fs = f64::from(clip.sample_rate());
    let c = cfg.speed_of_sound;
    let transformer = FrameTransformer::new(window_length, cfg.window)?;
    let gcc = GccPhat::new(window_length, PHAT_EPSILON)?;

    let max_lags: Vec<usize> = (0..geometry.pairs().len())
        .map(|p| max_lag_for(geometry.pair_distance(p), c, fs))
        .collect();
    if let Some(&l) = max_lags.iter().find(|&&l| l >= window_length / 2) {
        return Err(Error::invalid(format!(
            "pair needs lags up to {l}, too many for a {window_length}-sample window"
        )));
    }
    // spectrum slot of each pair member
    let slot = |mic: usize| {
        let id = geometry.mics()[mic].id;
        channels.binary_search(&id).expect("used channel")
    };
    // Lookup lags are the delay of the first microphone relative to the
    // second, while a correlation peaks at a positive lag when its second
    // input is the delayed one, so each pair is correlated as (second, first).
    let pair_slots: Vec<(usize, usize)> = geometry
        .pairs()
        .iter()
        .map(|&(a, b)| (slot(b), slot(a)))
        .collect();

    let lookup_started = Instant::now();
    let static_lookup = if geometry.is_moving() {
        None
    } else {
        Some(TdoaLookup::build(&grid, &geometry, c, fs)?)
    };
    let mut lookup_time = lookup_started.elapsed();

    let timestamps = timestamps_at_rate(clip.duration(), cfg.output_rate);
    type Computed = Option<(PeakRecord, Duration, Duration)>;
    let computed: Vec<Computed> = timestamps
        .par_iter()
        .map(|&t| -> Result<Computed> {
            let Some(frame) = transformer.frame_at(clip, &channels, t) else {
                return Ok(None);
            };
            let correlations = pair_slots
                .iter()
                .zip(&max_lags)
                .map(|(&(a, b), &l)| gcc.correlate(&frame.spectra[a], &frame.spectra[b], l))
                .collect::<Result<Vec<_>>>()?;
            let lk = Instant::now();
            let moving_lookup;
            let lookup = match &static_lookup {
                Some(l) => l,
                None => {
                    moving_lookup = TdoaLookup::build_with_positions(
                        &grid,
                        &geometry.mic_positions_at(t),
                        geometry.pairs(),
                        c,
                        fs,
                    )?;
                    &moving_lookup
                }
            };
            let lk = lk.elapsed();
            let g = Instant::now();
            let peak = gcf_frame(t, &correlations, lookup, &grid, false)?;
            let g = g.elapsed();
            Ok(Some((
                PeakRecord {
                    timestamp: t,
                    peak_index: peak.peak_index,
                    peak_position: peak.peak_position,
                    peak_value: peak.peak_value,
                    correlations,
                },
                g,
                lk,
            )))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(computed.len());
    let mut dropped = Vec::new();
    let mut gcf_time = Duration::ZERO;
    for (t, item) in timestamps.iter().zip(computed) {
        match item {
            Some((r, g, lk)) => {
                gcf_time += g;
                lookup_time += lk;
                records.push(r);
            }
            None => dropped.push(*t),
        }
    }
    if records.is_empty() {
        return Err(Error::invalid("no analysis window fits inside the clip"));
    }
    let header = CacheHeader {
        sample_rate: clip.sample_rate(),
        duration: clip.duration(),
        speed_of_sound: c,
        window_length,
        window: cfg.window,
        grid: cfg.grid,
        geometry: geometry.to_file(),
        max_lags,
        frame_count: records.len(),
        dropped,
    };
    Ok((
        PassOne { header, records },
        PassOneStats {
            gcf: gcf_time,
            lookup: lookup_time,
            total: started.elapsed(),
        },
    ))
}

/// Runs pass 1 and, with a cache path, round-trips the result through it.
fn cached_pass_one(
    cfg: &PipelineConfig,
    clip: &AudioClip,
    geometry: &MicArrayGeometry,
    window_length: usize,
    opts: &RunOptions,
) -> Result<PassOne> {
    let (pass, _) = pass_one(cfg, clip, geometry, window_length, opts)?;
    match &opts.cache_path {
        Some(path) => {
            pass.write(path)?;
            PassOne::read(path)
        }
        None => Ok(pass),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FramePeak {
    pub timestamp: f64,
    pub peak_index: usize,
    pub position: [f64; 3],
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaticResult {
    pub position: [f64; 3],
    /// Direction from the array reference point.
    pub azimuth_deg: Option<f64>,
    pub elevation_deg: Option<f64>,
    pub gamma: f64,
    pub low_confidence: bool,
    pub warnings: Vec<String>,
    pub peaks: Vec<FramePeak>,
}

impl StaticResult {
    pub fn point(&self) -> Point3 {
        Point3::from(self.position)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// Location of a static source: the most frequent per-frame field peak.
pub fn run_static(
    cfg: &PipelineConfig,
    clip: &AudioClip,
    geometry: &MicArrayGeometry,
    opts: &RunOptions,
) -> Result<StaticResult> {
    let pass = cached_pass_one(cfg, clip, geometry, cfg.window_for(Mode::Static), opts)?;
    static_from_pass(&pass)
}

pub fn static_from_pass(pass: &PassOne) -> Result<StaticResult> {
    let grid = pass.header.grid()?;
    let geometry = pass.header.geometry()?;
    let frames: Vec<crate::gcf_map::GcfFrame> = pass
        .records
        .iter()
        .map(|r| crate::gcf_map::GcfFrame {
            timestamp: r.timestamp,
            peak_index: r.peak_index,
            peak_position: r.peak_position,
            peak_value: r.peak_value,
            map: None,
        })
        .collect();
    let position = static_estimate(&frames)?;
    debug_assert_eq!(grid.point(grid.nearest_index(&position)), position);
    let gamma = pass.gamma();
    let mut warnings = Vec::new();
    let low_confidence = !(gamma > SILENCE);
    if low_confidence {
        warnings.push(format!(
            "largest field peak is {gamma:.3e}; the clip looks silent and the estimate is arbitrary"
        ));
    }
    for w in &warnings {
        warn!("{w}");
    }
    let angles = to_angles(position - geometry.reference()).ok();
    Ok(StaticResult {
        position: [position.x, position.y, position.z],
        azimuth_deg: angles.map(|a| a.0),
        elevation_deg: angles.map(|a| a.1),
        gamma,
        low_confidence,
        warnings,
        peaks: frames
            .iter()
            .map(|f| FramePeak {
                timestamp: f.timestamp,
                peak_index: f.peak_index,
                position: [f.peak_position.x, f.peak_position.y, f.peak_position.z],
                value: f.peak_value,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    /// Final trajectory after correction and smoothing.
    pub trajectory: Trajectory,
    /// Filter output before any post-processing.
    pub raw: Trajectory,
    pub branches: Vec<LikelihoodBranch>,
    pub gamma: f64,
    /// Present when the front/back stage ran.
    pub turning: Option<TurningDecision>,
    pub smoothing_converged: bool,
    pub smoothing_iterations: usize,
    pub report: Option<EvalReport>,
    pub warnings: Vec<String>,
}

impl TrackingResult {
    /// Whether the run hit a condition the warnings describe as unreliable.
    pub fn is_degenerate(&self) -> bool {
        !self.warnings.is_empty()
    }
}

struct FieldAt<'a> {
    field: CoherenceField<'a>,
    grid: &'a Grid3D,
}

impl FieldLookup for FieldAt<'_> {
    fn value_near(&self, p: &Point3) -> f64 {
        self.field.value_near(self.grid, p)
    }
}

pub fn run_tracking(
    cfg: &PipelineConfig,
    clip: &AudioClip,
    geometry: &MicArrayGeometry,
    truth: Option<&GroundTruth>,
    opts: &RunOptions,
) -> Result<TrackingResult> {
    let pass = cached_pass_one(cfg, clip, geometry, cfg.window_for(Mode::Tracking), opts)?;
    track_from_pass(cfg, &pass, truth)
}

/// Second pass over first-pass records.
pub fn track_from_pass(cfg: &PipelineConfig, pass: &PassOne, truth: Option<&GroundTruth>) -> Result<TrackingResult> {
    cfg.validate()?;
    let grid = pass.header.grid()?;
    let geometry = pass.header.geometry()?;
    let fs = f64::from(pass.header.sample_rate);
    let c = pass.header.speed_of_sound;
    let frame = if geometry.is_moving() {
        CoordFrame::World
    } else {
        CoordFrame::ArrayLocal
    };
    let mut warnings = Vec::new();

    let mut gamma = pass.gamma();
    if !(gamma > SILENCE) {
        warnings.push(format!(
            "largest field peak is {gamma:.3e}; every frame is treated as silent"
        ));
        gamma = SILENCE;
    }

    let positions: Vec<Vec<Point3>> = pass
        .records
        .iter()
        .map(|r| geometry.mic_positions_at(r.timestamp))
        .collect();
    let fields: Vec<FieldAt<'_>> = pass
        .records
        .iter()
        .zip(&positions)
        .map(|(r, pos)| FieldAt {
            field: CoherenceField {
                correlations: &r.correlations,
                positions: pos,
                pairs: geometry.pairs(),
                speed_of_sound: c,
                sample_rate: fs,
            },
            grid: &grid,
        })
        .collect();
    let observations = pass.records.iter().zip(&fields).map(|(r, f)| Observation {
        timestamp: r.timestamp,
        peak_position: r.peak_position,
        peak_value: r.peak_value,
        field: f,
    });
    let out = track(observations, gamma, &cfg.tracker, &grid, cfg.seed, frame)?;
    if out.degenerate_frames > 0 {
        warnings.push(format!(
            "{} frame(s) left every particle weight at zero",
            out.degenerate_frames
        ));
    }
    let raw = out.trajectory;

    let mut current = raw.clone();
    let mut turning = None;
    if geometry.is_planar() {
        let peaks = pass.peak_values();
        let t0 = default_t0(peaks.len(), cfg.t0_fraction);
        if 2 * t0 < peaks.len() {
            let decision = detect_turning(&peaks, t0, cfg.kappa)?;
            if decision.kind != TurningKind::None {
                let local = to_array_local(&current, &geometry)?;
                let flipped = apply_correction(&local, &decision);
                current = from_array_local(&flipped, &geometry, frame)?;
            }
            turning = Some(decision);
        } else {
            warnings.push(format!(
                "only {} frames; front/back detection skipped",
                peaks.len()
            ));
        }
    }

    let (mut converged, mut iterations) = (true, 0);
    if current.len() >= 4 {
        let s = smooth_outliers(&current, cfg.v_max, cfg.max_smoothing_iterations)?;
        converged = s.converged;
        iterations = s.iterations;
        current = s.trajectory;
        if !converged {
            warnings.push(format!(
                "smoothing stopped after {iterations} iterations with speeds above {} m/s",
                cfg.v_max
            ));
        }
    }

    let report = match truth {
        Some(gt) => Some(evaluate_against(cfg, &current, gt, &geometry, pass.header.duration)?),
        None => None,
    };
    for w in &warnings {
        warn!("{w}");
    }
    Ok(TrackingResult {
        trajectory: current,
        raw,
        branches: out.branches,
        gamma: pass.gamma(),
        turning,
        smoothing_converged: converged,
        smoothing_iterations: iterations,
        report,
        warnings,
    })
}

fn map_entries(traj: &Trajectory, frame: CoordFrame, f: impl Fn(f64, &Point3) -> Point3) -> Result<Trajectory> {
    Trajectory::new(
        traj.entries()
            .iter()
            .map(|e| TrajectoryEntry {
                timestamp: e.timestamp,
                position: f(e.timestamp, &e.position),
            })
            .collect(),
        frame,
    )
}

fn to_array_local(traj: &Trajectory, geometry: &MicArrayGeometry) -> Result<Trajectory> {
    if traj.frame() == CoordFrame::ArrayLocal {
        return Ok(traj.clone());
    }
    map_entries(traj, CoordFrame::ArrayLocal, |t, p| geometry.pose_at(t).to_local(p))
}

fn from_array_local(traj: &Trajectory, geometry: &MicArrayGeometry, frame: CoordFrame) -> Result<Trajectory> {
    if frame == CoordFrame::ArrayLocal {
        return Ok(traj.clone());
    }
    map_entries(traj, frame, |t, p| geometry.pose_at(t).to_world(p))
}

/// Errors over estimate frames inside the trimmed span whose nearest truth
/// entry is active.
fn evaluate_against(
    cfg: &PipelineConfig,
    est: &Trajectory,
    truth: &GroundTruth,
    geometry: &MicArrayGeometry,
    duration: f64,
) -> Result<EvalReport> {
    let gt = &truth.trajectory;
    let tol = 0.5 * gt.period().unwrap_or(f64::INFINITY) + 1e-9;
    let lo = cfg.boundary_trim_s;
    let hi = duration - cfg.boundary_trim_s;
    let active: Vec<f64> = est
        .timestamps()
        .filter(|&t| t >= lo && t <= hi)
        .filter(|&t| {
            let i = gt.nearest_index(t);
            i.is_some_and(|i| (gt.entries()[i].timestamp - t).abs() <= tol && truth.active[i])
        })
        .collect();
    if active.is_empty() {
        return Err(Error::invalid(
            "no active reference frames inside the evaluated span",
        ));
    }
    let opts = EvalOptions {
        origin: geometry.reference(),
        azimuth_offset_deg: cfg.azimuth_offset_deg,
    };
    let est_local = to_array_local(est, geometry)?;
    let gt_local = if gt.frame() == CoordFrame::ArrayLocal {
        gt.clone()
    } else {
        to_array_local(gt, geometry)?
    };
    evaluate_with(&est_local, &gt_local, &active, &opts)
}

/// Reads a reference trajectory. The truth CSV either carries an `active`
/// column or comes with a separate activity CSV; an activity file, when
/// given, takes precedence.
pub fn load_truth(truth: &Path, activity: Option<&Path>, frame: CoordFrame) -> Result<GroundTruth> {
    let text = std::fs::read_to_string(truth).map_err(|e| Error::io(truth, e))?;
    let header = text.lines().next().unwrap_or_default();
    let trajectory = if header.split(',').count() == 5 {
        GroundTruth::from_csv(&text, frame)?
    } else {
        let tr = Trajectory::from_csv(&text, frame)?;
        let n = tr.len();
        GroundTruth::new(tr, vec![true; n])?
    };
    let Some(path) = activity else {
        if header.split(',').count() != 5 {
            return Err(Error::invalid(
                "truth CSV has no active column and no activity CSV was given",
            ));
        }
        return Ok(trajectory);
    };
    let flags = read_activity_csv(path)?;
    if flags.is_empty() {
        return Err(Error::invalid("activity CSV is empty"));
    }
    let active = trajectory
        .trajectory
        .timestamps()
        .map(|t| {
            let i = flags.partition_point(|f| f.0 < t);
            [i.checked_sub(1), Some(i)]
                .into_iter()
                .flatten()
                .filter_map(|j| flags.get(j))
                .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
                .map(|f| f.1)
                .unwrap_or(false)
        })
        .collect();
    GroundTruth::new(trajectory.trajectory, active)
}

/// Field values on the grid plane nearest to height `z` for one cached frame.
pub fn map_slice(pass: &PassOne, frame_index: usize, z: f64) -> Result<Vec<(Point3, f64)>> {
    let record = pass.records.get(frame_index).ok_or_else(|| {
        Error::invalid(format!(
            "frame index {frame_index} out of range (cache has {} frames)",
            pass.records.len()
        ))
    })?;
    let grid = pass.header.grid()?;
    let geometry = pass.header.geometry()?;
    let positions = geometry.mic_positions_at(record.timestamp);
    let field = CoherenceField {
        correlations: &record.correlations,
        positions: &positions,
        pairs: geometry.pairs(),
        speed_of_sound: pass.header.speed_of_sound,
        sample_rate: f64::from(pass.header.sample_rate),
    };
    let (lo, _) = grid.bounds();
    let iz = grid.axis_indices(grid.nearest_index(&Point3::new(lo.x, lo.y, z)))[2];
    let [nx, ny, _] = grid.counts();
    Ok((0..ny)
        .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
        .map(|(ix, iy)| {
            let p = grid.point(grid.index(ix, iy, iz));
            (p, field.value_at(&p))
        })
        .collect())
}

pub fn slice_csv(slice: &[(Point3, f64)]) -> String {
    let mut out = String::from("x_m,y_m,z_m,gcf\n");
    for (p, v) in slice {
        let _ = writeln!(out, "{:.6},{:.6},{:.6},{:.9}", p.x, p.y, p.z, v);
    }
    out
}

#[cfg(test)]
#[allow(clippy::field_reassign_with_default)]
mod tests;
