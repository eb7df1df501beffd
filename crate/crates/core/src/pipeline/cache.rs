//! On-disk form of the first pass.
//!
//! Layout, little-endian:
//! `b"GCFCACHE"`, `u32` version, `u64` header length, JSON header, then per
//! frame `f64` timestamp, `u64` peak index, three `f64` peak coordinates,
//! `f64` peak value and, per pair, the `2 * max_lag + 1` correlation values.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_io::{GeometryFile, MicArrayGeometry, WindowKind};
use crate::gcc_phat::Correlation;
use crate::gcf_map::{Grid3D, GridSpec};
use crate::{Error, Point3, Result};

const MAGIC: &[u8; 8] = b"GCFCACHE";
const VERSION: u32 = 1;

/// Everything needed to interpret the per-frame records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub sample_rate: u32,
    /// Clip length in seconds.
    pub duration: f64,
    pub speed_of_sound: f64,
    pub window_length: usize,
    pub window: WindowKind,
    pub grid: GridSpec,
    /// Geometry with the pairs actually correlated.
    pub geometry: GeometryFile,
    pub max_lags: Vec<usize>,
    pub frame_count: usize,
    /// Requested timestamps whose window did not fit in the clip.
    pub dropped: Vec<f64>,
}

impl CacheHeader {
    pub fn geometry(&self) -> Result<MicArrayGeometry> {
        self.geometry.clone().try_into()
    }

    pub fn grid(&self) -> Result<Grid3D> {
        Grid3D::new(self.grid)
    }
}

/// Field peak and pair correlations of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakRecord {
    pub timestamp: f64,
    pub peak_index: usize,
    pub peak_position: Point3,
    pub peak_value: f64,
    pub correlations: Vec<Correlation>,
}

/// Output of the first pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PassOne {
    pub header: CacheHeader,
    pub records: Vec<PeakRecord>,
}

impl PassOne {
    /// Largest field peak of the recording.
    pub fn gamma(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.peak_value)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn peak_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.peak_value).collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for r in &self.records {
            w.write_all(&r.timestamp.to_le_bytes())?;
            w.write_all(&(r.peak_index as u64).to_le_bytes())?;
            for v in r.peak_position.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&r.peak_value.to_le_bytes())?;
            for c in &r.correlations {
                for v in c.values() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Cache("not a gcftrack cache file".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(Error::Cache(format!("unsupported cache version {version}")));
        }
        let header_len = u64::from_le_bytes(take(&mut r)?) as usize;
        if header_len > r.len() {
            return Err(Error::Cache("truncated header".into()));
        }
        let header: CacheHeader = serde_json::from_slice(&r[..header_len])
            .map_err(|e| Error::Cache(format!("bad header: {e}")))?;
        r = &r[header_len..];

        let mut records = Vec::with_capacity(header.frame_count);
        for _ in 0..header.frame_count {
            let timestamp = f64::from_le_bytes(take(&mut r)?);
            let peak_index = u64::from_le_bytes(take(&mut r)?) as usize;
            let mut pos = [0.0; 3];
            for v in &mut pos {
                *v = f64::from_le_bytes(take(&mut r)?);
            }
            let peak_value = f64::from_le_bytes(take(&mut r)?);
            let correlations = header
                .max_lags
                .iter()
                .map(|&l| {
                    let values = (0..2 * l + 1)
                        .map(|_| take(&mut r).map(f64::from_le_bytes))
                        .collect::<Result<Vec<_>>>()?;
                    Correlation::new(l, values)
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(PeakRecord {
                timestamp,
                peak_index,
                peak_position: Point3::from(pos),
                peak_value,
                correlations,
            });
        }
        if !r.is_empty() {
            return Err(Error::Cache(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { header, records })
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Cache("unexpected end of cache file".into()))
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}
