//! Free-field scene renderer used as ground truth.
//!
//! Every microphone receives the source signal delayed by the propagation
//! time and scaled by `1 / max(d, 0.1)`. While the source is behind the
//! array (`y < 0` in array-local coordinates) an extra gain is applied,
//! standing in for the shadow of the array frame.

mod delay;
mod signal;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use delay::FractionalDelay;
pub use signal::SourceSignal;

use crate::audio_io::{write_wav, AudioClip, GeometryFile, MicArrayGeometry};
use crate::smooth_eval::{write_activity_csv, CoordFrame, GroundTruth, Trajectory, TrajectoryEntry};
use crate::{Error, Point3, Result, SPEED_OF_SOUND};

const MIN_DISTANCE: f64 = 0.1;
/// Sources farther than this from the array reference are rejected.
const MAX_RANGE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryPreset {
    Dicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneGeometry {
    Preset(GeometryPreset),
    Custom(GeometryFile),
}

impl SceneGeometry {
    pub fn resolve(&self) -> Result<MicArrayGeometry> {
        match self {
            Self::Preset(GeometryPreset::Dicit) => Ok(MicArrayGeometry::dicit()),
            Self::Custom(file) => file.clone().try_into(),
        }
    }
}

/// Knot of the source path: time in seconds and world position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub t: f64,
    pub position: [f64; 3],
}

fn default_c() -> f64 {
    SPEED_OF_SOUND
}
fn default_gain() -> f64 {
    1.0
}
fn default_truth_rate() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub geometry: SceneGeometry,
    /// Piecewise-linear source path; must cover `[0, duration]`.
    pub trajectory: Vec<Knot>,
    pub signal: SourceSignal,
    /// Noise level relative to the loudest channel; `None` renders no noise.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Gain in (0, 1] applied while the source is behind the array.
    #[serde(default = "default_gain")]
    pub back_attenuation: f64,
    #[serde(default = "default_c")]
    pub speed_of_sound: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Cadence of the emitted ground truth, Hz.
    #[serde(default = "default_truth_rate")]
    pub truth_rate: f64,
}

impl SceneSpec {
    /// A motionless source for `duration` seconds.
    pub fn stationary(geometry: SceneGeometry, at: Point3, signal: SourceSignal, duration: f64) -> Self {
        Self::path(geometry, vec![(0.0, at), (duration, at)], signal, duration)
    }

    pub fn path(
        geometry: SceneGeometry,
        knots: Vec<(f64, Point3)>,
        signal: SourceSignal,
        duration: f64,
    ) -> Self {
        Self {
            geometry,
            trajectory: knots
                .into_iter()
                .map(|(t, p)| Knot {
                    t,
                    position: [p.x, p.y, p.z],
                })
                .collect(),
            signal,
            snr_db: None,
            back_attenuation: 1.0,
            speed_of_sound: SPEED_OF_SOUND,
            duration,
            seed: 0,
            truth_rate: default_truth_rate(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            what: "scene",
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Source position at time `t`, held constant outside the knots.
    pub fn source_at(&self, t: f64) -> Point3 {
        let k = &self.trajectory;
        let p = |i: usize| Point3::from(k[i].position);
        let i = k.partition_point(|kn| kn.t <= t);
        if i == 0 {
            return p(0);
        }
        if i == k.len() {
            return p(k.len() - 1);
        }
        let (a, b) = (&k[i - 1], &k[i]);
        let f = (t - a.t) / (b.t - a.t);
        p(i - 1) + (p(i) - p(i - 1)) * f
    }

    fn validate(&self, geometry: &MicArrayGeometry) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::invalid("scene duration must be positive"));
        }
        if !(self.back_attenuation > 0.0 && self.back_attenuation <= 1.0) {
            return Err(Error::invalid("back attenuation must lie in (0, 1]"));
        }
        if !(self.speed_of_sound > 0.0) || !(self.truth_rate > 0.0) {
            return Err(Error::invalid("speed of sound and truth rate must be positive"));
        }
        if self.snr_db.is_some_and(|s| !s.is_finite()) {
            return Err(Error::invalid("SNR must be finite"));
        }
        self.signal.validate()?;
        let k = &self.trajectory;
        if k.is_empty() {
            return Err(Error::invalid("source trajectory is empty"));
        }
        if k.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::invalid("trajectory knot times must be strictly increasing"));
        }
        if k[0].t > 0.0 || k[k.len() - 1].t < self.duration {
            return Err(Error::invalid("trajectory must cover [0, duration]"));
        }
        for kn in k {
            let p = Point3::from(kn.position);
            if !p.iter().all(|v| v.is_finite())
                || (p - geometry.pose_at(kn.t).to_world(&geometry.reference())).norm() > MAX_RANGE
            {
                return Err(Error::invalid(format!(
                    "source position {:?} at t = {} is implausible",
                    kn.position, kn.t
                )));
            }
        }
        Ok(())
    }
}

/// Rendered audio plus the matching ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub clip: AudioClip,
    pub geometry: MicArrayGeometry,
    /// Source positions at the truth cadence.
    pub truth: Trajectory,
    /// Source activity per truth entry.
    pub active: Vec<bool>,
}

impl Scene {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth::new(self.truth.clone(), self.active.clone()).expect("one flag per entry")
    }

    /// Writes `audio.wav`, `geometry.json`, `truth.csv` and `activity.csv`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_wav(dir.join("audio.wav"), &self.clip)?;
        let geo = serde_json::to_string_pretty(&self.geometry.to_file()).expect("geometry serializes");
        let gpath = dir.join("geometry.json");
        std::fs::write(&gpath, geo).map_err(|e| Error::io(gpath, e))?;
        self.ground_truth().write_csv(dir.join("truth.csv"))?;
        let ts: Vec<f64> = self.truth.timestamps().collect();
        write_activity_csv(dir.join("activity.csv"), &ts, &self.active)
    }
}

/// Renders `spec` at `sample_rate`.
pub fn render(spec: &SceneSpec, sample_rate: u32) -> Result<Scene> {
    let geometry = spec.geometry.resolve()?;
    spec.validate(&geometry)?;
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let fs = sample_rate as f64;
    let len = (spec.duration * fs).round() as usize;
    let source = spec.signal.generate(len, sample_rate, spec.seed)?;

    // world positions of every microphone and array-local source per sample
    let moving = geometry.is_moving();
    let static_mics: Vec<Point3> = geometry.mic_positions_at(0.0);
    let fd = FractionalDelay::new();
    let channel_count = geometry.mics().iter().map(|m| m.id).max().unwrap_or(0) + 1;

    let rendered: Vec<(usize, Vec<f64>)> = geometry
        .mics()
        .par_iter()
        .enumerate()
        .map(|(mi, mic)| {
            let out = (0..len)
                .map(|n| {
                    let t = n as f64 / fs;
                    let src = spec.source_at(t);
                    let (mic_pos, local_y) = if moving {
                        let pose = geometry.pose_at(t);
                        (pose.to_world(&mic.position), pose.to_local(&src).y)
                    } else {
                        (static_mics[mi], src.y)
                    };
                    let d = (src - mic_pos).norm();
                    let gain = if local_y < 0.0 { spec.back_attenuation } else { 1.0 };
                    let u = n as f64 - d / spec.speed_of_sound * fs;
                    gain * fd.sample(&source, u) / d.max(MIN_DISTANCE)
                })
                .collect();
            (mic.id, out)
        })
        .collect();

    let mut channels = vec![vec![0.0; len]; channel_count];
    for (id, data) in rendered {
        channels[id] = data;
    }

    if let Some(snr) = spec.snr_db {
        let loudest = channels
            .iter()
            .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt())
            .fold(0.0, f64::max);
        let std = loudest / 10f64.powf(snr / 20.0);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
            for (ch, data) in channels.iter_mut().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(ch as u64 + 1);
                for v in data.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
        }
    }

    let clip = AudioClip::new(channels, sample_rate)?;
    let step = 1.0 / spec.truth_rate;
    let count = (spec.duration * spec.truth_rate + 1e-9).floor() as usize + 1;
    let mut entries = Vec::with_capacity(count);
    let mut active = Vec::with_capacity(count);
    for k in 0..count {
        let t = k as f64 * step;
        let world = spec.source_at(t);
        entries.push(TrajectoryEntry {
            timestamp: t,
            position: world,
        });
        active.push(spec.signal.is_active(t));
    }
    let frame = if moving {
        CoordFrame::World
    } else {
        CoordFrame::ArrayLocal
    };
    Ok(Scene {
        clip,
        geometry,
        truth: Trajectory::new(entries, frame)?,
        active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::{FrameTransformer, Microphone, WindowKind};
    use crate::gcc_phat::gcc_phat;

    fn two_mics(a: Point3, b: Point3) -> SceneGeometry {
        let g = MicArrayGeometry::new(
            vec![
                Microphone { id: 0, position: a },
                Microphone { id: 1, position: b },
            ],
            vec![(0, 1)],
        )
        .unwrap();
        SceneGeometry::Custom(g.to_file())
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn equidistant_mics_are_identical() {
        let g = two_mics(Point3::new(-0.2, 0.0, 0.0), Point3::new(0.2, 0.0, 0.0));
        let spec = SceneSpec::stationary(g, Point3::new(0.0, 1.5, 0.3), SourceSignal::WhiteNoise { std: 0.1 }, 0.5);
        let s = render(&spec, 16_000).unwrap();
        assert_eq!(s.clip.channel(0), s.clip.channel(1));
    }

    #[test]
    fn integer_delay_is_recovered() {
        // source on the mic axis: path difference equals the spacing
        let fs = 48_000.0;
        let spacing = 12.0 * SPEED_OF_SOUND / fs;
        let g = two_mics(Point3::zeros(), Point3::new(spacing, 0.0, 0.0));
        let spec = SceneSpec::stationary(g, Point3::new(-1.0, 0.0, 0.0), SourceSignal::WhiteNoise { std: 0.1 }, 0.5);
        let s = render(&spec, 48_000).unwrap();
        let ft = FrameTransformer::new(4096, WindowKind::Blackman).unwrap();
        let a = ft.transform(s.clip.channel(0), 8000);
        let b = ft.transform(s.clip.channel(1), 8000);
        let c = gcc_phat(&a, &b, 20, crate::gcc_phat::PHAT_EPSILON).unwrap();
        assert_eq!(c.peak().0, 12);
    }

    #[test]
    fn causality() {
        let g = two_mics(Point3::zeros(), Point3::new(0.5, 0.0, 0.0));
        let src = Point3::new(-3.0, 0.0, 0.0);
        let spec = SceneSpec::stationary(g, src, SourceSignal::WhiteNoise { std: 0.1 }, 0.2);
        let s = render(&spec, 16_000).unwrap();
        for (ch, d) in [(0, 3.0), (1, 3.5)] {
            let arrival = d / SPEED_OF_SOUND * 16_000.0;
            let silent = (arrival.floor() as usize).saturating_sub(FractionalDelay::reach() + 1);
            assert!(s.clip.channel(ch)[..silent].iter().all(|&v| v == 0.0));
            assert!(s.clip.channel(ch)[arrival.ceil() as usize + 1] != 0.0);
        }
    }

    #[test]
    fn inverse_distance_law() {
        let near = two_mics(Point3::new(-0.1, 0.0, 0.0), Point3::new(0.1, 0.0, 0.0));
        let far = two_mics(Point3::new(-0.2, 0.0, 0.0), Point3::new(0.2, 0.0, 0.0));
        let sig = SourceSignal::WhiteNoise { std: 0.1 };
        let a = render(&SceneSpec::stationary(near, Point3::new(0.3, 0.8, 0.2), sig.clone(), 1.0), 16_000).unwrap();
        let b = render(&SceneSpec::stationary(far, Point3::new(0.6, 1.6, 0.4), sig, 1.0), 16_000).unwrap();
        for ch in 0..2 {
            let ra = rms(&a.clip.channel(ch)[2000..]);
            let rb = rms(&b.clip.channel(ch)[2000..]);
            assert!((rb / ra - 0.5).abs() < 0.005, "ratio {}", rb / ra);
        }
    }

    #[test]
    fn back_attenuation_rms() {
        let fs = 16_000u32;
        let mut spec = SceneSpec::path(
            SceneGeometry::Preset(GeometryPreset::Dicit),
            vec![(0.0, Point3::new(0.3, 1.5, 1.5)), (4.0, Point3::new(0.3, -1.5, 1.5))],
            SourceSignal::WhiteNoise { std: 0.1 },
            4.0,
        );
        spec.back_attenuation = 0.3;
        let s = render(&spec, fs).unwrap();
        let seg = |t0: f64, t1: f64| -> f64 {
            let (a, b) = ((t0 * fs as f64) as usize, (t1 * fs as f64) as usize);
            let used = s.geometry.used_channels();
            used.iter().map(|&c| rms(&s.clip.channel(c)[a..b])).sum::<f64>() / used.len() as f64
        };
        let ratio = seg(2.5, 3.5) / seg(0.5, 1.5);
        assert!((ratio - 0.3).abs() <= 0.03, "ratio {ratio}");
    }

    #[test]
    fn noise_level_and_determinism() {
        let mut spec = SceneSpec::stationary(
            SceneGeometry::Preset(GeometryPreset::Dicit),
            Point3::new(0.0, 1.0, 1.5),
            SourceSignal::WhiteNoise { std: 0.1 },
            0.5,
        );
        let clean = render(&spec, 16_000).unwrap();
        spec.snr_db = Some(20.0);
        let noisy = render(&spec, 16_000).unwrap();
        assert_eq!(noisy, render(&spec, 16_000).unwrap());
        let loudest = clean.clip.channels().iter().map(|c| rms(c)).fold(0.0, f64::max);
        let resid: Vec<f64> = noisy.clip.channel(3).iter().zip(clean.clip.channel(3)).map(|(a, b)| a - b).collect();
        let want = loudest / 10.0;
        assert!((rms(&resid) / want - 1.0).abs() < 0.05);
    }

    #[test]
    fn truth_and_activity() {
        let spec = SceneSpec::path(
            SceneGeometry::Preset(GeometryPreset::Dicit),
            vec![(0.0, Point3::new(-1.0, 2.0, 1.5)), (3.0, Point3::new(0.5, 2.0, 1.5))],
            SourceSignal::speech_like(),
            3.0,
        );
        let s = render(&spec, 8_000).unwrap();
        assert_eq!(s.truth.len(), 31);
        assert!((s.truth.entries()[10].position.x - -0.5).abs() < 1e-12);
        assert_eq!(s.active.iter().filter(|a| !**a).count(), 4);
        assert_eq!(s.truth.frame(), CoordFrame::ArrayLocal);
    }

    #[test]
    fn rejects_bad_specs() {
        let base = SceneSpec::stationary(
            SceneGeometry::Preset(GeometryPreset::Dicit),
            Point3::new(0.0, 1.0, 1.5),
            SourceSignal::WhiteNoise { std: 0.1 },
            1.0,
        );
        let mut s = base.clone();
        s.duration = 0.0;
        assert!(render(&s, 8000).is_err());
        let mut s = base.clone();
        s.back_attenuation = 1.5;
        assert!(render(&s, 8000).is_err());
        let mut s = base.clone();
        s.trajectory[1].t = 0.5;
        assert!(render(&s, 8000).is_err());
        let mut s = base.clone();
        s.trajectory[0].position = [500.0, 0.0, 0.0];
        assert!(render(&s, 8000).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let text = r#"{
            "geometry": "dicit",
            "trajectory": [{"t": 0.0, "position": [0.0, 1.0, 1.5]}, {"t": 2.0, "position": [1.0, 1.0, 1.5]}],
            "signal": {"kind": "speech_like"},
            "snr_db": 20.0,
            "duration": 2.0,
            "seed": 4
        }"#;
        let spec = SceneSpec::from_json_str(text).unwrap();
        assert_eq!(spec.back_attenuation, 1.0);
        let again = SceneSpec::from_json_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(again, spec);
        assert!(SceneSpec::from_json_str(r#"{"geometry":"dicit"}"#).is_err());
    }
}
