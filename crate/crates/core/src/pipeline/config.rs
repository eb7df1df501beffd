use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio_io::WindowKind;
use crate::front_back::{DEFAULT_KAPPA, DEFAULT_T0_FRACTION};
use crate::gcf_map::{Grid3D, GridSpec};
use crate::tracker::TrackerConfig;
use crate::{Error, Result, SPEED_OF_SOUND};

/// Window for a static source, samples.
pub const STATIC_WINDOW: usize = 1 << 14;
/// Window for a moving source, samples.
pub const TRACKING_WINDOW: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Static,
    #[default]
    Tracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Kind of run this configuration is meant for; picks the default window.
    pub mode: Mode,
    /// Analysis window in samples. `None` uses the default for the run.
    pub window_length: Option<usize>,
    pub window: WindowKind,
    /// Output frames per second.
    pub output_rate: f64,
    pub grid: GridSpec,
    /// Microphone id pairs overriding the geometry's own list.
    pub pairs: Option<Vec<[usize; 2]>>,
    pub tracker: TrackerConfig,
    /// Crossings are searched after this fraction of the frames and before
    /// the same fraction from the end.
    pub t0_fraction: f64,
    pub kappa: f64,
    /// Speed above which an estimate counts as an outlier, m/s.
    pub v_max: f64,
    pub max_smoothing_iterations: usize,
    /// Seconds ignored at each end of the recording when evaluating.
    pub boundary_trim_s: f64,
    pub seed: u64,
    pub speed_of_sound: f64,
    /// Added to estimated azimuths before comparing with the truth.
    pub azimuth_offset_deg: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Tracking,
            window_length: None,
            window: WindowKind::Blackman,
            output_rate: 10.0,
            grid: GridSpec::default(),
            pairs: None,
            tracker: TrackerConfig::default(),
            t0_fraction: DEFAULT_T0_FRACTION,
            kappa: DEFAULT_KAPPA,
            v_max: 2.0,
            max_smoothing_iterations: 15,
            boundary_trim_s: 1.0,
            seed: 0,
            speed_of_sound: SPEED_OF_SOUND,
            azimuth_offset_deg: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn for_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn window_for(&self, mode: Mode) -> usize {
        self.window_length.unwrap_or(match mode {
            Mode::Static => STATIC_WINDOW,
            Mode::Tracking => TRACKING_WINDOW,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.window_length {
            if w < 2 || !w.is_power_of_two() {
                return Err(Error::invalid(format!("window length {w} is not a power of two")));
            }
        }
        let positive = [
            ("output_rate", self.output_rate),
            ("kappa", self.kappa),
            ("v_max", self.v_max),
            ("speed_of_sound", self.speed_of_sound),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.t0_fraction > 0.0 && self.t0_fraction < 0.5) {
            return Err(Error::invalid("t0_fraction must lie in (0, 0.5)"));
        }
        if !(self.boundary_trim_s >= 0.0) {
            return Err(Error::invalid("boundary_trim_s must be non-negative"));
        }
        if !self.azimuth_offset_deg.is_finite() {
            return Err(Error::invalid("azimuth_offset_deg must be finite"));
        }
        self.tracker.validate()?;
        Grid3D::new(self.grid)?;
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            what: "pipeline config",
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

/// Execution settings that never change results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Worker threads for the first pass; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Where the first-pass cache is written and read back from.
    pub cache_path: Option<PathBuf>,
}
