use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Rectangular,
    Hann,
    Blackman,
}

/// Periodic (DFT-even) taper of length `len`; the sample at `len / 2` is the
/// peak.
pub fn window(kind: WindowKind, len: usize) -> Vec<f64> {
    let n = len as f64;
    (0..len)
        .map(|i| {
            let phase = 2.0 * PI * i as f64 / n;
            match kind {
                WindowKind::Rectangular => 1.0,
                WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                WindowKind::Blackman => 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos(),
            }
        })
        .collect()
}

/// Spectra of all requested channels at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    /// One-sided spectra (`window_length / 2 + 1` bins), indexed like the
    /// `channels` argument the frame was computed with.
    pub spectra: Vec<Vec<Complex64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub frames: Vec<Frame>,
    pub window_length: usize,
    /// Mean spacing between consecutive frames, samples.
    pub hop: f64,
    pub window_kind: WindowKind,
    pub sample_rate: u32,
    /// Requested timestamps whose window did not fit inside the clip.
    pub dropped: Vec<f64>,
}

/// Windowed one-sided DFT of fixed length. Cheap to clone and shareable
/// across threads.
#[derive(Clone)]
pub struct FrameTransformer {
    window_length: usize,
    kind: WindowKind,
    taper: Arc<[f64]>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FrameTransformer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameTransformer")
            .field("window_length", &self.window_length)
            .field("kind", &self.kind)
            .finish()
    }
}

impl FrameTransformer {
    pub fn new(window_length: usize, kind: WindowKind) -> Result<Self> {
        if window_length < 2 || !window_length.is_power_of_two() {
            return Err(Error::invalid(format!(
                "window length {window_length} is not a power of two >= 2"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(window_length);
        Ok(Self {
            window_length,
            kind,
            taper: window(kind, window_length).into(),
            fft,
        })
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// First sample of the window centered on `timestamp`, or `None` if the
    /// window does not fit in `len` samples.
    pub fn window_start(&self, timestamp: f64, sample_rate: u32, len: usize) -> Option<usize> {
        let center = (timestamp * f64::from(sample_rate)).round();
        let start = center - (self.window_length / 2) as f64;
        if !start.is_finite() || start < 0.0 || start + self.window_length as f64 > len as f64 {
            return None;
        }
        Some(start as usize)
    }

    /// Tapers `samples[start..start + window_length]` and returns its
    /// one-sided spectrum.
    pub fn transform(&self, samples: &[f64], start: usize) -> Vec<Complex64> {
        let segment = &samples[start..start + self.window_length];
        let mut buf: Vec<Complex64> = segment
            .iter()
            .zip(self.taper.iter())
            .map(|(&x, &w)| Complex64::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf.truncate(self.bins());
        buf
    }

    /// Spectra of `channels` for the window centered on `timestamp`.
    pub fn frame_at(&self, clip: &AudioClip, channels: &[usize], timestamp: f64) -> Option<Frame> {
        let start = self.window_start(timestamp, clip.sample_rate(), clip.len())?;
        let spectra = channels
            .iter()
            .map(|&c| self.transform(clip.channel(c), start))
            .collect();
        Some(Frame { timestamp, spectra })
    }
}

/// Timestamps `k / rate` for `k = 0, 1, ...` up to `duration`.
pub fn timestamps_at_rate(duration: f64, rate: f64) -> Vec<f64> {
    if !(rate > 0.0) || !(duration >= 0.0) {
        return Vec::new();
    }
    let count = (duration * rate).floor() as usize + 1;
    (0..count).map(|k| k as f64 / rate).collect()
}

/// One frame per timestamp (all channels), each window centered on its
/// timestamp. Timestamps whose window would overrun the clip are dropped and
/// listed in [`FrameSeries::dropped`].
pub fn frame_and_transform(
    clip: &AudioClip,
    window_length: usize,
    timestamps: &[f64],
    window_kind: WindowKind,
) -> Result<FrameSeries> {
    if timestamps.is_empty() {
        return Err(Error::invalid("empty timestamp list"));
    }
    if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("timestamps must be strictly increasing"));
    }
    if window_length > clip.len() {
        return Err(Error::invalid(format!(
            "window of {window_length} samples is longer than the clip ({} samples)",
            clip.len()
        )));
    }
    let transformer = FrameTransformer::new(window_length, window_kind)?;
    let channels: Vec<usize> = (0..clip.channel_count()).collect();
    let computed: Vec<(f64, Option<Frame>)> = timestamps
        .par_iter()
        .map(|&t| (t, transformer.frame_at(clip, &channels, t)))
        .collect();

    let mut frames = Vec::with_capacity(computed.len());
    let mut dropped = Vec::new();
    for (t, frame) in computed {
        match frame {
            Some(f) => frames.push(f),
            None => dropped.push(t),
        }
    }
    let hop = match (frames.first(), frames.last()) {
        (Some(a), Some(b)) if frames.len() > 1 => {
            (b.timestamp - a.timestamp) * f64::from(clip.sample_rate()) / (frames.len() - 1) as f64
        }
        _ => 0.0,
    };
    Ok(FrameSeries {
        frames,
        window_length,
        hop,
        window_kind,
        sample_rate: clip.sample_rate(),
        dropped,
    })
}
