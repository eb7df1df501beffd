use std::f64::consts::PI;

/// Taps of the fractional-delay interpolator.
pub const TAPS: usize = 31;
const HALF: isize = (TAPS as isize - 1) / 2;
const PHASES: usize = 1024;

/// Blackman-windowed sinc kernels tabulated at `PHASES` fractional offsets.
#[derive(Debug, Clone)]
pub struct FractionalDelay {
    table: Vec<[f64; TAPS]>,
}

impl Default for FractionalDelay {
    fn default() -> Self {
        Self::new()
    }
}

impl FractionalDelay {
    pub fn new() -> Self {
        let half_width = HALF as f64 + 1.0;
        let table = (0..PHASES)
            .map(|ph| {
                let frac = ph as f64 / PHASES as f64;
                let mut k = [0.0; TAPS];
                for (i, tap) in k.iter_mut().enumerate() {
                    let x = (i as isize - HALF) as f64 - frac;
                    if ph == 0 {
                        *tap = if x == 0.0 { 1.0 } else { 0.0 };
                        continue;
                    }
                    let sinc = (PI * x).sin() / (PI * x);
                    let w = 0.42
                        + 0.5 * (PI * x / half_width).cos()
                        + 0.08 * (2.0 * PI * x / half_width).cos();
                    *tap = sinc * w;
                }
                k
            })
            .collect();
        Self { table }
    }

    /// Value of `signal` at the fractional sample position `u`, zero outside
    /// the signal.
    pub fn sample(&self, signal: &[f64], u: f64) -> f64 {
        let mut base = u.floor();
        let mut phase = ((u - base) * PHASES as f64).round() as usize;
        if phase == PHASES {
            phase = 0;
            base += 1.0;
        }
        let base = base as isize;
        let kernel = &self.table[phase];
        let lo = base - HALF;
        let n = signal.len() as isize;
        if lo + TAPS as isize <= 0 || lo >= n {
            return 0.0;
        }
        let mut acc = 0.0;
        for (i, k) in kernel.iter().enumerate() {
            let j = lo + i as isize;
            if j >= 0 && j < n {
                acc += k * signal[j as usize];
            }
        }
        acc
    }

    /// Samples a kernel reaches on either side of its centre.
    pub fn reach() -> usize {
        HALF as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_positions_are_exact() {
        let d = FractionalDelay::new();
        let s: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        for i in 0..64 {
            assert_eq!(d.sample(&s, i as f64), s[i]);
        }
        assert_eq!(d.sample(&s, -20.0), 0.0);
        assert_eq!(d.sample(&s, 100.0), 0.0);
    }

    #[test]
    fn interpolates_band_limited_signal() {
        let d = FractionalDelay::new();
        let f = 0.05;
        let s: Vec<f64> = (0..400).map(|i| (2.0 * PI * f * i as f64).sin()).collect();
        for k in 0..50 {
            let u = 150.0 + k as f64 * 1.37;
            let want = (2.0 * PI * f * u).sin();
            assert!((d.sample(&s, u) - want).abs() < 5e-3, "u = {u}");
        }
    }
}
