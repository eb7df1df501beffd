//! Audio ingestion, array geometry and windowed spectral frames.

mod frames;
mod geometry;

use std::path::Path;

pub use frames::{
    frame_and_transform, timestamps_at_rate, window, Frame, FrameSeries, FrameTransformer,
    WindowKind,
};
pub use geometry::{GeometryFile, MicArrayGeometry, Microphone, RigidTransform, TimedTransform};

use crate::{Error, Result};

/// Multichannel audio with samples normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if channels.len() < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 channels, got {}",
                channels.len()
            )));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::invalid("channels have different lengths"));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }
}

/// Reads a PCM WAV file (16/24/32-bit integer or 32-bit float).
///
/// Integer samples are divided by `2^(bits-1)`.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let n_channels = usize::from(spec.channels);
    if n_channels < 2 {
        return Err(Error::invalid(format!(
            "{} has {} channel(s); a microphone array needs at least 2",
            path.display(),
            n_channels
        )));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / f64::from(1u32 << (bits - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{bits}-bit {format:?} in {}",
                path.display()
            )))
        }
    };

    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for frame in interleaved.chunks_exact(n_channels) {
        for (ch, &v) in channels.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    AudioClip::new(channels, spec.sample_rate)
}

/// Writes the clip as 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let channels = u16::try_from(clip.channel_count())
        .map_err(|_| Error::invalid("too many channels for WAV"))?;
    let spec = hound::WavSpec {
        channels,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for i in 0..clip.len() {
        for ch in clip.channels() {
            writer.write_sample(ch[i] as f32).map_err(wav_err)?;
        }
    }
    writer.finalize().map_err(wav_err)
}
