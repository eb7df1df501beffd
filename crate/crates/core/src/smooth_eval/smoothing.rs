use super::Trajectory;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothResult {
    pub trajectory: Trajectory,
    /// Max speed is within the threshold.
    pub converged: bool,
    pub iterations: usize,
    /// Inclusive index ranges that were rewritten, in order.
    pub replaced: Vec<(usize, usize)>,
}

/// Largest speed between consecutive entries, m/s.
pub fn max_speed(traj: &Trajectory) -> f64 {
    traj.entries()
        .windows(2)
        .map(|w| (w[1].position - w[0].position).norm() / (w[1].timestamp - w[0].timestamp))
        .fold(0.0, f64::max)
}

fn first_violation(traj: &Trajectory, v_max: f64) -> Option<usize> {
    traj.entries()
        .windows(2)
        .position(|w| (w[1].position - w[0].position).norm() / (w[1].timestamp - w[0].timestamp) > v_max)
        .map(|i| i + 1)
}

/// Removes velocity outliers. While some step between consecutive entries
/// is faster than `v_max`, the entries `t-1..=t+2` around the earliest such
/// step `t` are replaced by linear interpolation (in time) between the
/// nearest entries outside that window. A window touching either end of the
/// trajectory holds the one available neighbour. Stops when no step exceeds
/// `v_max` or after `max_iters` replacements.
pub fn smooth_outliers(traj: &Trajectory, v_max: f64, max_iters: usize) -> Result<SmoothResult> {
    if traj.len() < 4 {
        return Err(Error::invalid(format!(
            "smoothing needs at least 4 entries, got {}",
            traj.len()
        )));
    }
    if !(v_max > 0.0) {
        return Err(Error::invalid("speed threshold must be positive"));
    }
    let mut out = traj.clone();
    let mut replaced = Vec::new();
    let mut iterations = 0;
    let n = out.len();
    while iterations < max_iters {
        let Some(t) = first_violation(&out, v_max) else {
            break;
        };
        iterations += 1;
        let lo = t - 1;
        let hi = (t + 2).min(n - 1);
        let entries = out.entries_mut();
        let left = lo.checked_sub(1).map(|i| entries[i]);
        let right = entries.get(hi + 1).copied();
        for e in &mut entries[lo..=hi] {
            e.position = match (left, right) {
                (Some(l), Some(r)) => {
                    let f = (e.timestamp - l.timestamp) / (r.timestamp - l.timestamp);
                    l.position + (r.position - l.position) * f
                }
                (Some(l), None) => l.position,
                (None, Some(r)) => r.position,
                (None, None) => e.position,
            };
        }
        replaced.push((lo, hi));
    }
    let converged = first_violation(&out, v_max).is_none();
    Ok(SmoothResult {
        trajectory: out,
        converged,
        iterations,
        replaced,
    })
}
