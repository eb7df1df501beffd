use std::fmt;

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::{Error, Point3, Result};

/// Azimuth and elevation in degrees. Azimuth is 0 along +y and grows
/// toward +x; elevation is measured from the x-y plane.
pub fn to_angles(p: Point3) -> Result<(f64, f64)> {
    if p.norm() == 0.0 || !p.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("direction of a zero or non-finite vector is undefined"));
    }
    let az = p.x.atan2(p.y).to_degrees();
    let el = p.z.atan2(p.x.hypot(p.y)).to_degrees();
    Ok((az, el))
}

/// Wraps an angle difference into [-180, 180].
pub fn wrap_degrees(d: f64) -> f64 {
    let w = (d + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 && d > 0.0 {
        180.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae_3d: f64,
    pub mae_azimuth: f64,
    pub mae_elevation: f64,
    pub active_frame_count: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric            value")?;
        writeln!(f, "mae_3d [m]        {:.4}", self.mae_3d)?;
        writeln!(f, "mae_azimuth [deg] {:.3}", self.mae_azimuth)?;
        writeln!(f, "mae_elev [deg]    {:.3}", self.mae_elevation)?;
        write!(f, "active frames     {}", self.active_frame_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Point the angles are measured from.
    pub origin: Point3,
    /// Added to every estimated azimuth before comparison.
    pub azimuth_offset_deg: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            origin: Point3::zeros(),
            azimuth_offset_deg: 0.0,
        }
    }
}

pub fn evaluate(est: &Trajectory, truth: &Trajectory, active: &[f64]) -> Result<EvalReport> {
    evaluate_with(est, truth, active, &EvalOptions::default())
}

/// Mean errors over the `active` timestamps. Each timestamp is matched to
/// the nearest entry of each trajectory, which must lie within half of that
/// trajectory's frame period.
pub fn evaluate_with(
    est: &Trajectory,
    truth: &Trajectory,
    active: &[f64],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if active.is_empty() {
        return Err(Error::invalid("no active frames to evaluate"));
    }
    if est.frame() != truth.frame() {
        return Err(Error::invalid("estimate and truth are in different coordinate frames"));
    }
    let pick = |tr: &Trajectory, t: f64, what: &str| -> Result<Point3> {
        let tol = 0.5 * tr.period().unwrap_or(f64::INFINITY) + 1e-9;
        match tr.nearest(t) {
            Some(e) if (e.timestamp - t).abs() <= tol => Ok(e.position),
            _ => Err(Error::invalid(format!("{what} has no entry near t = {t:.6} s"))),
        }
    };
    let (mut e3, mut eaz, mut eel) = (0.0, 0.0, 0.0);
    for &t in active {
        let p = pick(est, t, "estimate")?;
        let q = pick(truth, t, "truth")?;
        e3 += (p - q).norm();
        let (az_p, el_p) = to_angles(p - opts.origin)?;
        let (az_q, el_q) = to_angles(q - opts.origin)?;
        eaz += wrap_degrees(az_p + opts.azimuth_offset_deg - az_q).abs();
        eel += (el_p - el_q).abs();
    }
    let n = active.len() as f64;
    Ok(EvalReport {
        mae_3d: e3 / n,
        mae_azimuth: eaz / n,
        mae_elevation: eel / n,
        active_frame_count: active.len(),
    })
}
