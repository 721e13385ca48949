//! Triangular mel filterbank and its clamped least-squares pseudo-inverse.

use super::{MelConfig, SignalError};

/// Triangular filterbank projecting a half-spectrum magnitude frame onto
/// mel bins. Break frequencies are spaced uniformly on the HTK mel scale.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    nu: usize,
    n_bins: usize,
    /// nu x n_bins, row-major.
    weights: Vec<f64>,
    /// nu + 2 Hz values delimiting the triangles.
    break_frequencies: Vec<f64>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10.0f64.powf(m / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Result<Self, SignalError> {
        if cfg.n_mels == 0 {
            return Err(SignalError::InvalidSpectrogram(
                "n_mels must be >= 1".into(),
            ));
        }
        if cfg.fmax <= cfg.fmin || cfg.fmax > cfg.sample_rate as f64 / 2.0 {
            return Err(SignalError::InvalidSpectrogram(format!(
                "invalid band [{}, {}] Hz for sample rate {}",
                cfg.fmin, cfg.fmax, cfg.sample_rate
            )));
        }
        let nu = cfg.n_mels;
        let n_bins = cfg.n_fft / 2 + 1;
        let mel_lo = hz_to_mel(cfg.fmin);
        let mel_hi = hz_to_mel(cfg.fmax);
        let breaks: Vec<f64> = (0..nu + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (nu + 1) as f64))
            .collect();

        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let mut weights = vec![0.0f64; nu * n_bins];
        for row in 0..nu {
            let (lo, mid, hi) = (breaks[row], breaks[row + 1], breaks[row + 2]);
            let mut any = false;
            for bin in 0..n_bins {
                let f = bin as f64 * bin_hz;
                let rising = (f - lo) / (mid - lo);
                let falling = (hi - f) / (hi - mid);
                let w = rising.min(falling).max(0.0);
                if w > 0.0 {
                    weights[row * n_bins + bin] = w;
                    any = true;
                }
            }
            if !any {
                // triangle narrower than one FFT bin: keep the row usable by
                // assigning unit weight at the bin nearest its center
                let bin = ((mid / bin_hz).round() as usize).min(n_bins - 1);
                weights[row * n_bins + bin] = 1.0;
            }
        }

        Ok(MelFilterbank {
            nu,
            n_bins,
            weights,
            break_frequencies: breaks,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.nu
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn weight(&self, row: usize, bin: usize) -> f64 {
        self.weights[row * self.n_bins + bin]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.weights[row * self.n_bins..(row + 1) * self.n_bins]
    }

    /// The nu + 2 Hz break points of the triangles.
    pub fn break_frequencies(&self) -> &[f64] {
        &self.break_frequencies
    }

    /// Index of the mel bin whose triangle contains `hz` closest to its
    /// center, i.e. the row with maximal weight at that frequency.
    pub fn bin_for_frequency(&self, hz: f64) -> usize {
        let mut best = 0;
        let mut best_w = f64::NEG_INFINITY;
        for row in 0..self.nu {
            let (lo, mid, hi) = (
                self.break_frequencies[row],
                self.break_frequencies[row + 1],
                self.break_frequencies[row + 2],
            );
            let w = ((hz - lo) / (mid - lo)).min((hi - hz) / (hi - mid));
            if w > best_w {
                best_w = w;
                best = row;
            }
        }
        best
    }

    /// Project a half-spectrum magnitude frame onto the mel bins.
    pub fn apply(&self, magnitudes: &[f64]) -> Vec<f64> {
        debug_assert_eq!(magnitudes.len(), self.n_bins);
        (0..self.nu)
            .map(|row| {
                self.row(row)
                    .iter()
                    .zip(magnitudes)
                    .map(|(w, m)| w * m)
                    .sum()
            })
            .collect()
    }

    /// Prepare the clamped least-squares inverse: solve W Wᵀ y = m once per
    /// frame and back-project, clamping negatives to zero.
    pub fn pseudo_inverse(&self) -> MelPseudoInverse {
        let nu = self.nu;
        // gram = W Wᵀ + ridge, symmetric positive definite
        let mut gram = vec![0.0f64; nu * nu];
        for i in 0..nu {
            for j in i..nu {
                let dot: f64 = self
                    .row(i)
                    .iter()
                    .zip(self.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                gram[i * nu + j] = dot;
                gram[j * nu + i] = dot;
            }
        }
        for i in 0..nu {
            gram[i * nu + i] += 1e-10;
        }
        let chol = cholesky(&gram, nu);
        MelPseudoInverse {
            fb: self.clone(),
            chol,
        }
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                l[i * n + i] = sum.max(1e-300).sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    l
}

/// Clamped least-squares inversion of the mel projection.
pub struct MelPseudoInverse {
    fb: MelFilterbank,
    chol: Vec<f64>,
}

impl MelPseudoInverse {
    /// Recover a non-negative linear magnitude frame whose mel projection
    /// best matches `mel` in the least-squares sense.
    pub fn invert_frame(&self, mel: &[f64]) -> Vec<f64> {
        let nu = self.fb.nu;
        debug_assert_eq!(mel.len(), nu);
        // forward solve L z = mel
        let mut z = mel.to_vec();
        for i in 0..nu {
            for k in 0..i {
                let v = self.chol[i * nu + k] * z[k];
                z[i] -= v;
            }
            z[i] /= self.chol[i * nu + i];
        }
        // back solve Lᵀ y = z
        let mut y = z;
        for i in (0..nu).rev() {
            for k in i + 1..nu {
                let v = self.chol[k * nu + i] * y[k];
                y[i] -= v;
            }
            y[i] /= self.chol[i * nu + i];
        }
        // magnitudes = Wᵀ y, clamped at zero
        let mut out = vec![0.0f64; self.fb.n_bins];
        for (row, &yr) in y.iter().enumerate() {
            for (o, wv) in out.iter_mut().zip(self.fb.row(row)) {
                *o += wv * yr;
            }
        }
        for o in out.iter_mut() {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_nonnegative_and_nonempty() {
        let fb = MelFilterbank::new(&MelConfig::default()).unwrap();
        for row in 0..fb.n_mels() {
            let r = fb.row(row);
            assert!(r.iter().all(|&w| w >= 0.0));
            assert!(r.iter().any(|&w| w > 0.0), "row {row} has no support");
        }
    }

    #[test]
    fn rows_are_unimodal() {
        let fb = MelFilterbank::new(&MelConfig::default()).unwrap();
        for row in 0..fb.n_mels() {
            let r = fb.row(row);
            let peak = r
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            for k in 1..=peak {
                assert!(r[k] >= r[k - 1] || r[k - 1] == 0.0);
            }
            for k in peak + 1..r.len() {
                assert!(r[k] <= r[k - 1] || r[k] == 0.0);
            }
        }
    }

    #[test]
    fn column_sums_positive_inside_band() {
        let cfg = MelConfig::default();
        let fb = MelFilterbank::new(&cfg).unwrap();
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        for bin in 0..fb.n_bins() {
            let f = bin as f64 * bin_hz;
            if f > cfg.fmin && f < cfg.fmax {
                let sum: f64 = (0..fb.n_mels()).map(|r| fb.weight(r, bin)).sum();
                assert!(sum > 0.0, "column {bin} ({f:.1} Hz) sums to zero");
            }
        }
    }

    #[test]
    fn pseudo_inverse_recovers_projection() {
        let cfg = MelConfig::default();
        let fb = MelFilterbank::new(&cfg).unwrap();
        let inv = fb.pseudo_inverse();
        // a smooth positive spectrum projected and recovered should give
        // nearly the same mel projection back
        let spectrum: Vec<f64> = (0..fb.n_bins())
            .map(|k| 1.0 + (k as f64 * 0.01).sin().abs())
            .collect();
        let mel = fb.apply(&spectrum);
        let rec = inv.invert_frame(&mel);
        let mel2 = fb.apply(&rec);
        for (a, b) in mel.iter().zip(&mel2) {
            assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}
