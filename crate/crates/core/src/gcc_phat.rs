//! Generalized cross correlation with phase transform (GCC-PHAT).
//!
//! Lag convention: a positive lag `k` means the second signal is delayed by
//! `k` samples relative to the first.

use std::sync::Arc;

use rustfft::{num_complex::Complex64, Fft, FftPlanner};

use crate::{Error, Result};

/// Cross-spectrum bins whose magnitude falls below this are zeroed.
pub const PHAT_EPSILON: f64 = 1e-12;

/// Slack added to the physically admissible lag range, samples.
const LAG_SLACK: usize = 2;

/// Largest lag worth storing for a pair `distance` meters apart.
pub fn max_lag_for(distance: f64, speed_of_sound: f64, sample_rate: f64) -> usize {
    (distance / speed_of_sound * sample_rate).ceil() as usize + LAG_SLACK
}

/// Real correlation values over integer lags `-max_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    max_lag: usize,
    values: Vec<f64>,
}

impl Correlation {
    pub fn new(max_lag: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != 2 * max_lag + 1 {
            return Err(Error::invalid(format!(
                "correlation of max lag {max_lag} needs {} values, got {}",
                2 * max_lag + 1,
                values.len()
            )));
        }
        Ok(Self { max_lag, values })
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// Values ordered from lag `-max_lag` to `+max_lag`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at_lag(&self, lag: isize) -> Option<f64> {
        let idx = lag + self.max_lag as isize;
        usize::try_from(idx).ok().and_then(|i| self.values.get(i).copied())
    }

    /// Largest stored value and its lag; ties go to the most negative lag.
    pub fn peak(&self) -> (isize, f64) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best as isize - self.max_lag as isize, self.values[best])
    }

    /// Linearly interpolated value at a fractional lag in samples.
    pub fn value_at_lag(&self, lag: f64) -> Result<f64> {
        self.interpolate(lag).ok_or(Error::LagOutOfRange {
            lag,
            max_lag: self.max_lag,
        })
    }

    /// Value at the time difference `tau` seconds.
    pub fn correlation_at(&self, tau: f64, sample_rate: f64) -> Result<f64> {
        self.value_at_lag(tau * sample_rate)
    }

    /// Like [`value_at_lag`](Self::value_at_lag) but out-of-range lags
    /// contribute zero. This is the form the coherence field sums.
    #[inline]
    pub fn value_or_zero(&self, lag: f64) -> f64 {
        self.interpolate(lag).unwrap_or(0.0)
    }

    #[inline]
    fn interpolate(&self, lag: f64) -> Option<f64> {
        let max = self.max_lag as f64;
        if !(lag.abs() <= max) {
            return None;
        }
        let nearest = lag.round();
        // lags that are integers up to rounding noise read the stored value
        if (lag - nearest).abs() < 1e-9 {
            return Some(self.values[(nearest + max) as usize]);
        }
        let lower = lag.floor();
        let frac = lag - lower;
        let i = (lower + max) as usize;
        Some((1.0 - frac) * self.values[i] + frac * self.values[i + 1])
    }
}

/// Correlation of one microphone pair at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct GccFrame {
    pub pair_index: usize,
    pub timestamp: f64,
    pub correlation: Correlation,
    pub peak_lag: isize,
    pub peak_value: f64,
}

impl GccFrame {
    pub fn new(pair_index: usize, timestamp: f64, correlation: Correlation) -> Self {
        let (peak_lag, peak_value) = correlation.peak();
        Self {
            pair_index,
            timestamp,
            correlation,
            peak_lag,
            peak_value,
        }
    }
}

/// GCC-PHAT for one-sided spectra of a fixed window length, with the inverse
/// transform planned once.
#[derive(Clone)]
pub struct GccPhat {
    window_length: usize,
    epsilon: f64,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GccPhat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GccPhat")
            .field("window_length", &self.window_length)
            .field("epsilon", &self.epsilon)
            .finish()
    }
}

impl GccPhat {
    pub fn new(window_length: usize, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid("PHAT epsilon must be positive"));
        }
        if window_length < 2 || !window_length.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "window length {window_length} must be even and >= 2"
            )));
        }
        Ok(Self {
            window_length,
            epsilon,
            ifft: FftPlanner::new().plan_fft_inverse(window_length),
        })
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    /// Correlates two one-sided spectra of `window_length / 2 + 1` bins.
    pub fn correlate(
        &self,
        spec_a: &[Complex64],
        spec_b: &[Complex64],
        max_lag: usize,
    ) -> Result<Correlation> {
        let n = self.window_length;
        let bins = n / 2 + 1;
        if spec_a.len() != bins || spec_b.len() != bins {
            return Err(Error::invalid(format!(
                "spectra of {} and {} bins, expected {bins}",
                spec_a.len(),
                spec_b.len()
            )));
        }
        if max_lag >= n / 2 {
            return Err(Error::invalid(format!(
                "max lag {max_lag} must be below half the window ({})",
                n / 2
            )));
        }

        let mut full = vec![Complex64::new(0.0, 0.0); n];
        for (k, (a, b)) in spec_a.iter().zip(spec_b).enumerate() {
            let cross = a.conj() * b;
            let mag = cross.norm();
            let whitened = if mag < self.epsilon {
                Complex64::new(0.0, 0.0)
            } else {
                cross / mag
            };
            full[k] = whitened;
            if k != 0 && k != n / 2 {
                full[n - k] = whitened.conj();
            }
        }
        self.ifft.process(&mut full);

        let scale = 1.0 / n as f64;
        let values = (-(max_lag as isize)..=max_lag as isize)
            .map(|lag| full[lag.rem_euclid(n as isize) as usize].re * scale)
            .collect();
        Correlation::new(max_lag, values)
    }
}

/// One-shot GCC-PHAT; plans the inverse transform on every call.
pub fn gcc_phat(
    spec_a: &[Complex64],
    spec_b: &[Complex64],
    max_lag: usize,
    epsilon: f64,
) -> Result<Correlation> {
    if spec_a.len() != spec_b.len() {
        return Err(Error::invalid("spectra have different lengths"));
    }
    if spec_a.len() < 2 {
        return Err(Error::invalid("spectrum needs at least 2 bins"));
    }
    GccPhat::new(2 * (spec_a.len() - 1), epsilon)?.correlate(spec_a, spec_b, max_lag)
}
