//! Front/back crossing detection for planar arrays.
//!
//! A source behind the array frame reaches the microphones through an
//! attenuated path, so its GCF peaks drop. The ratio of the mean peak before
//! a frame to the mean peak after it exposes a single crossing.

use serde::{Deserialize, Serialize};

use crate::smooth_eval::Trajectory;
use crate::{Error, Result};

pub const DEFAULT_KAPPA: f64 = 1.9;
pub const DEFAULT_T0_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurningKind {
    FrontToBack,
    BackToFront,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurningDecision {
    pub kind: TurningKind,
    /// 1-based frame of the crossing.
    pub frame: Option<usize>,
    /// forward/backward mean ratio per frame (index 0 is frame 1).
    pub ratio_fb: Vec<Option<f64>>,
    /// Reciprocal of `ratio_fb`.
    pub ratio_bf: Vec<Option<f64>>,
}

impl TurningDecision {
    pub fn none() -> Self {
        Self {
            kind: TurningKind::None,
            frame: None,
            ratio_fb: Vec::new(),
            ratio_bf: Vec::new(),
        }
    }

    /// `frame,ratio_fb,ratio_bf` with empty cells where undefined.
    pub fn ratio_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        let mut out = String::from("frame,ratio_fb,ratio_bf\n");
        for (i, (a, b)) in self.ratio_fb.iter().zip(&self.ratio_bf).enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, cell(*a), cell(*b)));
        }
        out
    }
}

/// Forward and backward running means. `forward[t-1]` averages frames
/// `1..=t`, `backward[t-1]` averages frames `t..=T`.
pub fn peak_averages(peaks: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if peaks.is_empty() {
        return Err(Error::invalid("no peaks"));
    }
    let n = peaks.len();
    let mut forward = Vec::with_capacity(n);
    let mut acc = 0.0;
    for (i, &g) in peaks.iter().enumerate() {
        acc += g;
        forward.push(acc / (i + 1) as f64);
    }
    let mut backward = vec![0.0; n];
    acc = 0.0;
    for i in (0..n).rev() {
        acc += peaks[i];
        backward[i] = acc / (n - i) as f64;
    }
    Ok((forward, backward))
}

pub fn default_t0(frames: usize, fraction: f64) -> usize {
    ((fraction * frames as f64).round() as usize).max(1)
}

/// Looks for one crossing strictly inside frames `(t0, T - t0)`.
pub fn detect_turning(peaks: &[f64], t0: usize, kappa: f64) -> Result<TurningDecision> {
    let n = peaks.len();
    if t0 < 1 || 2 * t0 >= n {
        return Err(Error::invalid(format!(
            "search window (t0 = {t0}, T = {n}) is empty"
        )));
    }
    if peaks.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::invalid("peaks must be finite and non-negative"));
    }
    let (forward, backward) = peak_averages(peaks)?;
    let ratio_fb: Vec<Option<f64>> = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| (b > 0.0).then(|| f / b))
        .collect();
    let ratio_bf: Vec<Option<f64>> = ratio_fb
        .iter()
        .map(|r| r.filter(|&v| v > 0.0).map(|v| 1.0 / v))
        .collect();

    let argmax = |curve: &[Option<f64>]| {
        let mut best: Option<(usize, f64)> = None;
        for t in t0 + 1..n - t0 {
            if let Some(v) = curve[t - 1] {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((t, v));
                }
            }
        }
        best
    };
    let fb = argmax(&ratio_fb);
    let bf = argmax(&ratio_bf);
    let (kind, frame) = match (fb, bf) {
        (Some((t, v)), other) if v >= kappa && other.is_none_or(|(_, w)| v > w) => {
            (TurningKind::FrontToBack, Some(t))
        }
        (other, Some((t, v))) if v >= kappa && other.is_none_or(|(_, w)| v > w) => {
            (TurningKind::BackToFront, Some(t))
        }
        _ => (TurningKind::None, None),
    };
    Ok(TurningDecision {
        kind,
        frame,
        ratio_fb,
        ratio_bf,
    })
}

/// Mirrors `y` on one side of the crossing. Entry `i` is frame `i + 1`;
/// front-to-back flips frames from the crossing on, back-to-front flips the
/// frames before it. Coordinates must be array-local.
pub fn apply_correction(traj: &Trajectory, decision: &TurningDecision) -> Trajectory {
    let mut out = traj.clone();
    let Some(tp) = decision.frame else {
        return out;
    };
    for (i, e) in out.entries_mut().iter_mut().enumerate() {
        let frame = i + 1;
        let flip = match decision.kind {
            TurningKind::FrontToBack => frame >= tp,
            TurningKind::BackToFront => frame < tp,
            TurningKind::None => false,
        };
        if flip {
            e.position.y = -e.position.y;
        }
    }
    out
}
