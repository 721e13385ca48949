//! Short-time Fourier analysis used by mel extraction and Griffin-Lim.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window of length `n`.
pub(crate) fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Number of analysis frames for a signal of `len` samples:
/// 1 + floor((len - n_fft) / hop). Returns 0 when the signal is shorter
/// than one frame.
pub(crate) fn frame_count(len: usize, n_fft: usize, hop: usize) -> usize {
    if len < n_fft {
        0
    } else {
        1 + (len - n_fft) / hop
    }
}

/// Complex STFT frames, stored frame-major (`bins` per frame).
pub(crate) struct Spectra {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex<f64>>,
}

impl Spectra {
    pub fn frame(&self, t: usize) -> &[Complex<f64>] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex<f64>] {
        &mut self.data[t * self.bins..(t + 1) * self.bins]
    }
}

pub(crate) struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Stft {
            n_fft,
            hop,
            window: hann_window(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Windowed STFT keeping the non-redundant half spectrum.
    pub fn forward(&self, signal: &[f64]) -> Spectra {
        let frames = frame_count(signal.len(), self.n_fft, self.hop);
        let bins = self.bins();
        let mut data = vec![Complex::new(0.0, 0.0); frames * bins];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for t in 0..frames {
            let start = t * self.hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(signal[start + i] * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            data[t * bins..(t + 1) * bins].copy_from_slice(&buf[..bins]);
        }
        Spectra { frames, bins, data }
    }

    /// Least-squares inverse of a half-spectrum STFT for a signal of fixed
    /// length `len`: windowed overlap-add of per-frame inverse transforms,
    /// normalized by the accumulated squared window. Samples covered by no
    /// frame are unconstrained and set to zero.
    pub fn inverse_least_squares(&self, spec: &Spectra, len: usize) -> Vec<f64> {
        let mut num = vec![0.0f64; len];
        let mut den = vec![0.0f64; len];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for t in 0..spec.frames {
            let frame = spec.frame(t);
            buf[..spec.bins].copy_from_slice(frame);
            // conjugate-symmetric extension of the half spectrum
            for k in spec.bins..self.n_fft {
                buf[k] = frame[self.n_fft - k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for (i, (c, w)) in buf.iter().zip(&self.window).enumerate() {
                let n = start + i;
                if n >= len {
                    break;
                }
                // rustfft's inverse is unnormalized
                num[n] += w * (c.re / self.n_fft as f64);
                den[n] += w * w;
            }
        }
        for n in 0..len {
            if den[n] > 1e-12 {
                num[n] /= den[n];
            } else {
                num[n] = 0.0;
            }
        }
        num
    }

    /// Distance between the magnitudes of `spec` and a target magnitude
    /// spectrogram, as the Frobenius norm over the full (mirrored) spectrum:
    /// interior bins count twice, DC and Nyquist once.
    pub fn magnitude_distance(&self, spec: &Spectra, target: &[f64]) -> f64 {
        debug_assert_eq!(spec.data.len(), target.len());
        let bins = spec.bins;
        let mut acc = 0.0;
        for (i, (s, m)) in spec.data.iter().zip(target).enumerate() {
            let d = s.norm() - m;
            let bin = i % bins;
            let weight = if bin == 0 || bin == bins - 1 {
                1.0
            } else {
                2.0
            };
            acc += weight * d * d;
        }
        acc.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_matches_formula() {
        assert_eq!(frame_count(22050, 1024, 256), 83);
        assert_eq!(frame_count(1024, 1024, 256), 1);
        assert_eq!(frame_count(1023, 1024, 256), 0);
        assert_eq!(frame_count(1024 + 255, 1024, 256), 1);
        assert_eq!(frame_count(1024 + 256, 1024, 256), 2);
    }

    #[test]
    fn round_trip_reconstructs_interior_samples() {
        let n_fft = 64;
        let hop = 16;
        let stft = Stft::new(n_fft, hop);
        let signal: Vec<f64> = (0..400)
            .map(|i| (i as f64 * 0.17).sin() * 0.5 + (i as f64 * 0.031).cos() * 0.25)
            .collect();
        let spec = stft.forward(&signal);
        let back = stft.inverse_least_squares(&spec, signal.len());
        // interior samples (full window coverage) must match closely
        let covered_end = n_fft + (spec.frames - 1) * hop;
        for n in n_fft..covered_end - n_fft {
            assert!(
                (signal[n] - back[n]).abs() < 1e-9,
                "sample {n}: {} vs {}",
                signal[n],
                back[n]
            );
        }
    }

    #[test]
    fn hann_window_is_periodic() {
        let w = hann_window(8);
        assert!(w[0].abs() < 1e-12);
        assert!((w[4] - 1.0).abs() < 1e-12);
        // periodic window: w[k] == w[n-k] for k >= 1
        for k in 1..8 {
            assert!((w[k] - w[8 - k]).abs() < 1e-12);
        }
    }
}
