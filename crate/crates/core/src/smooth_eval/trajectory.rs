use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Point3, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordFrame {
    ArrayLocal,
    World,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub timestamp: f64,
    pub position: Point3,
}

/// Timestamped positions with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    entries: Vec<TrajectoryEntry>,
    frame: CoordFrame,
}

impl Trajectory {
    pub fn new(entries: Vec<TrajectoryEntry>, frame: CoordFrame) -> Result<Self> {
        if entries
            .windows(2)
            .any(|w| !(w[1].timestamp > w[0].timestamp))
        {
            return Err(Error::invalid("trajectory timestamps must be strictly increasing"));
        }
        Ok(Self { entries, frame })
    }

    pub fn entries(&self) -> &[TrajectoryEntry] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [TrajectoryEntry] {
        &mut self.entries
    }

    pub fn frame(&self) -> CoordFrame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.timestamp)
    }

    /// Median spacing between consecutive timestamps.
    pub fn period(&self) -> Option<f64> {
        let mut d: Vec<f64> = self
            .entries
            .windows(2)
            .map(|w| w[1].timestamp - w[0].timestamp)
            .collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f64::total_cmp);
        Some(d[d.len() / 2])
    }

    /// Entry whose timestamp is nearest to `t`.
    pub fn nearest(&self, t: f64) -> Option<&TrajectoryEntry> {
        self.nearest_index(t).map(|i| &self.entries[i])
    }

    pub fn nearest_index(&self, t: f64) -> Option<usize> {
        let i = self.entries.partition_point(|e| e.timestamp < t);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&j| j < self.entries.len())
            .min_by(|&a, &b| {
                (self.entries[a].timestamp - t)
                    .abs()
                    .total_cmp(&(self.entries[b].timestamp - t).abs())
            })
    }

    /// `timestamp_s,x_m,y_m,z_m` with six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp_s,x_m,y_m,z_m\n");
        for e in &self.entries {
            let p = e.position;
            let _ = writeln!(out, "{:.6},{:.6},{:.6},{:.6}", e.timestamp, p.x, p.y, p.z);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(text: &str, frame: CoordFrame) -> Result<Self> {
        let rows = parse_rows(text, &["timestamp_s", "x_m", "y_m", "z_m"])?;
        let entries = rows
            .into_iter()
            .map(|r| TrajectoryEntry {
                timestamp: r[0],
                position: Point3::new(r[1], r[2], r[3]),
            })
            .collect();
        Self::new(entries, frame)
    }

    pub fn read_csv(path: impl AsRef<Path>, frame: CoordFrame) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, frame)
    }
}

/// Reference trajectory with a voice-activity flag per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub trajectory: Trajectory,
    pub active: Vec<bool>,
}

impl GroundTruth {
    pub fn new(trajectory: Trajectory, active: Vec<bool>) -> Result<Self> {
        if trajectory.len() != active.len() {
            return Err(Error::invalid("one activity flag per ground-truth entry required"));
        }
        Ok(Self { trajectory, active })
    }

    pub fn active_timestamps(&self) -> Vec<f64> {
        self.trajectory
            .entries()
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(e, _)| e.timestamp)
            .collect()
    }

    /// `timestamp_s,x_m,y_m,z_m,active`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp_s,x_m,y_m,z_m,active\n");
        for (e, &a) in self.trajectory.entries().iter().zip(&self.active) {
            let p = e.position;
            let _ = writeln!(
                out,
                "{:.6},{:.6},{:.6},{:.6},{}",
                e.timestamp,
                p.x,
                p.y,
                p.z,
                u8::from(a)
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(text: &str, frame: CoordFrame) -> Result<Self> {
        let rows = parse_rows(text, &["timestamp_s", "x_m", "y_m", "z_m", "active"])?;
        let mut entries = Vec::with_capacity(rows.len());
        let mut active = Vec::with_capacity(rows.len());
        for r in rows {
            entries.push(TrajectoryEntry {
                timestamp: r[0],
                position: Point3::new(r[1], r[2], r[3]),
            });
            active.push(parse_flag(r[4])?);
        }
        Self::new(Trajectory::new(entries, frame)?, active)
    }

    pub fn read_csv(path: impl AsRef<Path>, frame: CoordFrame) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, frame)
    }
}

fn parse_flag(v: f64) -> Result<bool> {
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(Error::invalid(format!("activity flag must be 0 or 1, got {v}")))
    }
}

/// `timestamp_s,active` rows.
pub fn write_activity_csv(path: impl AsRef<Path>, timestamps: &[f64], active: &[bool]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("timestamp_s,active\n");
    for (t, &a) in timestamps.iter().zip(active) {
        let _ = writeln!(out, "{t:.6},{}", u8::from(a));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_activity_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, bool)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rows(&text, &["timestamp_s", "active"])?
        .into_iter()
        .map(|r| Ok((r[0], parse_flag(r[1])?)))
        .collect()
}

fn parse_rows(text: &str, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::invalid("empty CSV"))?
        .split(',')
        .map(str::trim)
        .collect();
    if head != header {
        return Err(Error::invalid(format!(
            "expected CSV header {}, got {}",
            header.join(","),
            head.join(",")
        )));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::invalid(format!("CSV row {}: {e}", i + 2)))?;
            if vals.len() != header.len() {
                return Err(Error::invalid(format!(
                    "CSV row {} has {} fields, expected {}",
                    i + 2,
                    vals.len(),
                    header.len()
                )));
            }
            Ok(vals)
        })
        .collect()
}
