use std::f64::consts::PI;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio_io::load_audio;
use crate::{Error, Result};

/// Noise sources are low-passed to this fraction of the Nyquist frequency so
/// that fractional delays keep their level.
const BANDWIDTH: f64 = 0.8;
const LOWPASS_HALF: isize = 32;

fn lowpass(x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = (-LOWPASS_HALF..=LOWPASS_HALF)
        .map(|k| {
            let k = k as f64;
            let sinc = if k == 0.0 {
                BANDWIDTH
            } else {
                (PI * BANDWIDTH * k).sin() / (PI * k)
            };
            let r = k / (LOWPASS_HALF as f64 + 1.0);
            sinc * (0.42 + 0.5 * (PI * r).cos() + 0.08 * (2.0 * PI * r).cos())
        })
        .collect();
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            h.iter()
                .enumerate()
                .map(|(j, c)| {
                    let idx = i + j as isize - LOWPASS_HALF;
                    if idx >= 0 && idx < n {
                        c * x[idx as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

/// What the source emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSignal {
    /// Gaussian noise, flat up to 80% of the Nyquist frequency.
    WhiteNoise {
        #[serde(default = "default_level")]
        std: f64,
    },
    /// The same noise under a raised-cosine envelope, switched on and off in
    /// talk and pause segments starting with talk at t = 0.
    SpeechLike {
        #[serde(default = "default_level")]
        std: f64,
        #[serde(default = "default_modulation")]
        modulation_hz: f64,
        #[serde(default = "default_depth")]
        depth: f64,
        #[serde(default = "default_talk")]
        talk_s: f64,
        #[serde(default = "default_pause")]
        pause_s: f64,
    },
    /// First channel of a WAV file at the scene sample rate; silent past its end.
    File { path: PathBuf },
}

fn default_level() -> f64 {
    0.1
}
fn default_modulation() -> f64 {
    4.0
}
fn default_depth() -> f64 {
    0.8
}
fn default_talk() -> f64 {
    1.6
}
fn default_pause() -> f64 {
    0.4
}

impl SourceSignal {
    pub fn speech_like() -> Self {
        Self::SpeechLike {
            std: default_level(),
            modulation_hz: default_modulation(),
            depth: default_depth(),
            talk_s: default_talk(),
            pause_s: default_pause(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Self::WhiteNoise { std } if !(*std > 0.0) => {
                Err(Error::invalid("signal level must be positive"))
            }
            Self::SpeechLike {
                std,
                modulation_hz,
                depth,
                talk_s,
                pause_s,
            } => {
                if !(*std > 0.0 && *modulation_hz > 0.0 && *talk_s > 0.0 && *pause_s >= 0.0)
                    || !(0.0..=1.0).contains(depth)
                {
                    Err(Error::invalid("invalid speech-like signal parameters"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Whether the source is emitting at time `t`.
    pub fn is_active(&self, t: f64) -> bool {
        match self {
            Self::SpeechLike {
                talk_s, pause_s, ..
            } => t >= 0.0 && t.rem_euclid(talk_s + pause_s) < *talk_s,
            _ => t >= 0.0,
        }
    }

    /// `len` samples at `sample_rate`.
    pub fn generate(&self, len: usize, sample_rate: u32, seed: u64) -> Result<Vec<f64>> {
        let fs = sample_rate as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Self::WhiteNoise { std } => {
                let n = Normal::new(0.0, *std).map_err(|e| Error::invalid(e.to_string()))?;
                let raw: Vec<f64> = (0..len).map(|_| n.sample(&mut rng)).collect();
                Ok(lowpass(&raw))
            }
            Self::SpeechLike {
                std,
                modulation_hz,
                depth,
                ..
            } => {
                let n = Normal::new(0.0, *std).map_err(|e| Error::invalid(e.to_string()))?;
                let raw: Vec<f64> = (0..len).map(|_| n.sample(&mut rng)).collect();
                let noise = lowpass(&raw);
                Ok((0..len)
                    .map(|i| {
                        let t = i as f64 / fs;
                        let x = noise[i];
                        if !self.is_active(t) {
                            return 0.0;
                        }
                        let rc = 0.5 * (1.0 - (2.0 * PI * modulation_hz * t).cos());
                        x * ((1.0 - depth) + depth * rc)
                    })
                    .collect())
            }
            Self::File { path } => {
                let clip = load_audio(path)?;
                if clip.sample_rate() != sample_rate {
                    return Err(Error::invalid(format!(
                        "source file is at {} Hz, scene renders at {sample_rate} Hz",
                        clip.sample_rate()
                    )));
                }
                let mut s = clip.channel(0).to_vec();
                s.resize(len, 0.0);
                Ok(s)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speech_like_gaps() {
        let s = SourceSignal::speech_like();
        let x = s.generate(48_000 * 4, 48_000, 3).unwrap();
        assert!(s.is_active(0.0) && s.is_active(1.59) && !s.is_active(1.7) && s.is_active(2.1));
        let gap = &x[(1.65 * 48_000.0) as usize..(1.95 * 48_000.0) as usize];
        assert!(gap.iter().all(|&v| v == 0.0));
        let talk = &x[..48_000];
        let rms = (talk.iter().map(|v| v * v).sum::<f64>() / talk.len() as f64).sqrt();
        assert!(rms > 0.03 && rms < 0.1);
    }

    #[test]
    fn deterministic() {
        let s = SourceSignal::WhiteNoise { std: 0.1 };
        assert_eq!(s.generate(100, 16_000, 9).unwrap(), s.generate(100, 16_000, 9).unwrap());
        assert_ne!(s.generate(100, 16_000, 9).unwrap(), s.generate(100, 16_000, 10).unwrap());
    }

    #[test]
    fn json_form() {
        let s: SourceSignal = serde_json::from_str(r#"{"kind":"speech_like"}"#).unwrap();
        assert_eq!(s, SourceSignal::speech_like());
        assert!(serde_json::from_str::<SourceSignal>(r#"{"kind":"pink"}"#).is_err());
    }
}
