//! Audio front-end: WAV I/O, log-mel extraction and Griffin-Lim inversion.

mod filterbank;
mod melfile;
mod stft;
mod wav;

pub use filterbank::{MelFilterbank, MelPseudoInverse};
pub use melfile::{mels_from_bytes, mels_to_bytes, read_mels, write_mels};
pub use wav::{load_wav, wav_from_bytes, wav_to_bytes, write_wav};

use stft::Stft;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("malformed WAV: {0}")]
    Format(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedFormat(String),
    #[error("audio too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("sample rate mismatch: waveform is {got} Hz, config expects {want} Hz")]
    SampleRateMismatch { got: u32, want: u32 },
    #[error("invalid mel spectrogram: {0}")]
    InvalidSpectrogram(String),
    #[error("griffin-lim needs at least one iteration")]
    ZeroIterations,
    #[error("malformed mel file: {0}")]
    MelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio, amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-mel extraction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Linear-magnitude floor applied before the log.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 22050,
            n_fft: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    /// Frames a signal of `len` samples yields: 1 + floor((len - n_fft) / hop),
    /// or 0 when shorter than one frame.
    pub fn frames_for_len(&self, len: usize) -> usize {
        stft::frame_count(len, self.n_fft, self.hop)
    }
}

/// Extraction metadata carried with every spectrogram (and serialized in
/// the MELS file format).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelMeta {
    pub sample_rate: f64,
    pub n_fft: u32,
    pub hop: u32,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl MelMeta {
    pub fn from_config(cfg: &MelConfig) -> Self {
        MelMeta {
            sample_rate: cfg.sample_rate as f64,
            n_fft: cfg.n_fft as u32,
            hop: cfg.hop as u32,
            fmin: cfg.fmin,
            fmax: cfg.fmax,
            log_floor: cfg.log_floor,
        }
    }

    pub fn to_config(self, n_mels: usize) -> MelConfig {
        MelConfig {
            sample_rate: self.sample_rate as u32,
            n_fft: self.n_fft as usize,
            hop: self.hop as usize,
            n_mels,
            fmin: self.fmin,
            fmax: self.fmax,
            log_floor: self.log_floor,
        }
    }

    /// Floor of the stored log values, in the f32 precision the values use.
    pub fn floor_log(&self) -> f32 {
        self.log_floor.ln() as f32
    }
}

/// A log-mel spectrogram: `nu` mel bins by `tau` frames, stored frame-major
/// (frame 0's bins first). Every value is >= ln(log_floor).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    nu: usize,
    tau: usize,
    values: Vec<f32>,
    pub meta: MelMeta,
}

impl MelSpectrogram {
    /// Build a spectrogram from frame-major values, validating the shape,
    /// finiteness and the log floor.
    pub fn from_values(
        nu: usize,
        tau: usize,
        values: Vec<f32>,
        meta: MelMeta,
    ) -> Result<Self, SignalError> {
        if nu == 0 || tau == 0 {
            return Err(SignalError::InvalidSpectrogram(format!(
                "empty shape {nu}x{tau}"
            )));
        }
        if values.len() != nu * tau {
            return Err(SignalError::InvalidSpectrogram(format!(
                "expected {} values for {nu}x{tau}, got {}",
                nu * tau,
                values.len()
            )));
        }
        let floor = meta.floor_log();
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < floor) {
            return Err(SignalError::InvalidSpectrogram(format!(
                "value {v} below log floor {floor} or not finite"
            )));
        }
        Ok(MelSpectrogram {
            nu,
            tau,
            values,
            meta,
        })
    }

    pub(crate) fn from_values_unchecked(
        nu: usize,
        tau: usize,
        values: Vec<f32>,
        meta: MelMeta,
    ) -> Self {
        debug_assert_eq!(values.len(), nu * tau);
        MelSpectrogram {
            nu,
            tau,
            values,
            meta,
        }
    }

    /// Frequency bin count (mel bins).
    pub fn nu(&self) -> usize {
        self.nu
    }

    /// Frame count.
    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn at(&self, bin: usize, frame: usize) -> f32 {
        self.values[frame * self.nu + bin]
    }

    /// One frame's bins, contiguous.
    pub fn frame(&self, frame: usize) -> &[f32] {
        &self.values[frame * self.nu..(frame + 1) * self.nu]
    }

    /// All values, frame-major.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn min_value(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max_value(&self) -> f32 {
        self.values
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Extract a log-mel spectrogram. The frame count is
/// 1 + floor((len - n_fft) / hop); each frame is ln(max(W |STFT|, floor)).
pub fn extract_mel(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram, SignalError> {
    if w.sample_rate != cfg.sample_rate {
        return Err(SignalError::SampleRateMismatch {
            got: w.sample_rate,
            want: cfg.sample_rate,
        });
    }
    if w.samples.len() < cfg.n_fft {
        return Err(SignalError::TooShort {
            got: w.samples.len(),
            need: cfg.n_fft,
        });
    }
    let fb = MelFilterbank::new(cfg)?;
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let signal: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();
    let spec = stft.forward(&signal);

    let meta = MelMeta::from_config(cfg);
    let floor = meta.floor_log();
    let mut values = Vec::with_capacity(cfg.n_mels * spec.frames);
    let mut mags = vec![0.0f64; stft.bins()];
    for t in 0..spec.frames {
        for (m, c) in mags.iter_mut().zip(spec.frame(t)) {
            *m = c.norm();
        }
        for e in fb.apply(&mags) {
            let v = e.max(cfg.log_floor).ln() as f32;
            values.push(v.max(floor));
        }
    }
    Ok(MelSpectrogram::from_values_unchecked(
        cfg.n_mels,
        spec.frames,
        values,
        meta,
    ))
}

/// Griffin-Lim inversion of a log-mel spectrogram back to a waveform,
/// peak-normalized to 0.95. An all-floor spectrogram yields silence.
pub fn griffin_lim(m: &MelSpectrogram, iterations: usize) -> Result<Waveform, SignalError> {
    griffin_lim_with_trace(m, iterations).map(|(w, _)| w)
}

/// Like [`griffin_lim`] but also returns the per-iteration consistency
/// error ||  |STFT(x_k)| - M ||_F (full-spectrum weighting). The classic
/// magnitude-projection / least-squares-inversion iteration makes this
/// sequence non-increasing.
pub fn griffin_lim_with_trace(
    m: &MelSpectrogram,
    iterations: usize,
) -> Result<(Waveform, Vec<f64>), SignalError> {
    if iterations == 0 {
        return Err(SignalError::ZeroIterations);
    }
    let cfg = m.meta.to_config(m.nu());
    let len = cfg.n_fft + (m.tau() - 1) * cfg.hop;
    let sample_rate = cfg.sample_rate;

    // Degenerate all-floor input decodes to silence.
    let floor = m.meta.floor_log();
    if m.values().iter().all(|&v| v <= floor + 1e-6) {
        return Ok((
            Waveform {
                samples: vec![0.0; len],
                sample_rate,
            },
            vec![0.0; iterations],
        ));
    }

    // Undo the log and pseudo-invert the filterbank frame by frame. The
    // target is padded with zero-magnitude frames on both sides so every
    // sample of the returned range has full window coverage; otherwise the
    // least-squares inversion blows up edge samples where the accumulated
    // squared window is nearly zero.
    let fb = MelFilterbank::new(&cfg)?;
    let inv = fb.pseudo_inverse();
    let stft = Stft::new(cfg.n_fft, cfg.hop);
    let bins = stft.bins();
    let pad = cfg.n_fft.div_ceil(cfg.hop);
    let frames_ext = m.tau() + 2 * pad;
    let len_ext = cfg.n_fft + (frames_ext - 1) * cfg.hop;
    let mut target = vec![0.0f64; frames_ext * bins];
    let mut mel = vec![0.0f64; m.nu()];
    for t in 0..m.tau() {
        for (dst, &v) in mel.iter_mut().zip(m.frame(t)) {
            *dst = (v as f64).exp();
        }
        let at = (t + pad) * bins;
        target[at..at + bins].copy_from_slice(&inv.invert_frame(&mel));
    }

    // Random-phase start (a fixed keyed hash per cell, so decoding is
    // reproducible), then alternate least-squares inversion with magnitude
    // projection. Zero-phase starts collapse into impulse trains.
    let mut estimate = stft::Spectra {
        frames: frames_ext,
        bins,
        data: target
            .iter()
            .enumerate()
            .map(|(i, &mag)| {
                let bin = i % bins;
                if bin == 0 || bin == bins - 1 {
                    // DC and Nyquist stay real for a real signal
                    rustfft::num_complex::Complex::new(mag, 0.0)
                } else {
                    let phase = (unit_hash(i as u64) * 2.0 - 1.0) * std::f64::consts::PI;
                    rustfft::num_complex::Complex::from_polar(mag, phase)
                }
            })
            .collect(),
    };
    let mut trace = Vec::with_capacity(iterations);
    let mut signal = Vec::new();
    for _ in 0..iterations {
        signal = stft.inverse_least_squares(&estimate, len_ext);
        let rebuilt = stft.forward(&signal);
        trace.push(stft.magnitude_distance(&rebuilt, &target));
        for t in 0..rebuilt.frames {
            let frame = rebuilt.frame(t);
            let out = estimate.frame_mut(t);
            for ((e, s), &mag) in out
                .iter_mut()
                .zip(frame)
                .zip(&target[t * bins..(t + 1) * bins])
            {
                let norm = s.norm();
                *e = if norm > 0.0 {
                    s * (mag / norm)
                } else {
                    rustfft::num_complex::Complex::new(mag, 0.0)
                };
            }
        }
    }

    let body = &signal[pad * cfg.hop..pad * cfg.hop + len];
    let peak = body.iter().fold(0.0f64, |a, &s| a.max(s.abs()));
    let scale = if peak > 1e-6 { 0.95 / peak } else { 1.0 };
    let samples = body.iter().map(|&s| (s * scale) as f32).collect();
    Ok((
        Waveform {
            samples,
            sample_rate,
        },
        trace,
    ))
}

/// splitmix64 scrambling of `x`, mapped to [0, 1).
fn unit_hash(x: u64) -> f64 {
    let mut z = x.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^= z >> 31;
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tone(freq: f64, secs: f64, sample_rate: u32) -> Waveform {
        let n = (secs * sample_rate as f64) as usize;
        let samples = (0..n)
            .map(|i| {
                (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate as f64).sin() as f32
                    * 0.8
            })
            .collect();
        Waveform {
            samples,
            sample_rate,
        }
    }

    #[test]
    fn one_second_default_config_gives_83_frames() {
        let w = tone(440.0, 1.0, 22050);
        let m = extract_mel(&w, &MelConfig::default()).unwrap();
        assert_eq!(m.nu(), 80);
        assert_eq!(m.tau(), 83);
    }

    proptest::proptest! {
        #[test]
        fn extraction_dims_follow_the_frame_formula(len in 256usize..4096) {
            let cfg = MelConfig {
                n_fft: 256,
                hop: 64,
                n_mels: 24,
                ..MelConfig::default()
            };
            let w = Waveform {
                samples: (0..len).map(|i| ((i as f32 * 0.37).sin()) * 0.5).collect(),
                sample_rate: cfg.sample_rate,
            };
            let m = extract_mel(&w, &cfg).unwrap();
            proptest::prop_assert_eq!(m.nu(), cfg.n_mels);
            proptest::prop_assert_eq!(m.tau(), 1 + (len - cfg.n_fft) / cfg.hop);
        }
    }

    #[test]
    fn silence_extracts_to_all_floor() {
        let w = Waveform {
            samples: vec![0.0; 4096],
            sample_rate: 22050,
        };
        let cfg = MelConfig::default();
        let m = extract_mel(&w, &cfg).unwrap();
        let floor = m.meta.floor_log();
        assert!(m.values().iter().all(|&v| v == floor));
    }

    #[test]
    fn tone_energy_peaks_in_the_matching_mel_bin() {
        let cfg = MelConfig::default();
        let w = tone(1000.0, 1.0, cfg.sample_rate);
        let m = extract_mel(&w, &cfg).unwrap();
        // time-averaged energy per bin
        let mut avg = vec![0.0f64; m.nu()];
        for t in 0..m.tau() {
            for (a, &v) in avg.iter_mut().zip(m.frame(t)) {
                *a += v as f64;
            }
        }
        let argmax = avg
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        // oracle: locate the bin from the filterbank break frequencies
        let fb = MelFilterbank::new(&cfg).unwrap();
        let expected = fb.bin_for_frequency(1000.0);
        assert_eq!(argmax, expected);
    }

    #[test]
    fn too_short_audio_is_rejected() {
        let w = Waveform {
            samples: vec![0.0; 512],
            sample_rate: 22050,
        };
        assert!(matches!(
            extract_mel(&w, &MelConfig::default()),
            Err(SignalError::TooShort { .. })
        ));
    }

    #[test]
    fn sample_rate_mismatch_is_rejected() {
        let w = tone(440.0, 0.5, 16000);
        assert!(matches!(
            extract_mel(&w, &MelConfig::default()),
            Err(SignalError::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn all_floor_spectrogram_inverts_to_silence() {
        let cfg = MelConfig::default();
        let meta = MelMeta::from_config(&cfg);
        let floor = meta.floor_log();
        let m = MelSpectrogram::from_values(80, 20, vec![floor; 80 * 20], meta).unwrap();
        let w = griffin_lim(&m, 5).unwrap();
        let peak = w.samples.iter().fold(0.0f32, |a, &s| a.max(s.abs()));
        assert!(peak < 1e-6);
        assert_eq!(w.samples.len(), 1024 + 19 * 256);
    }

    #[test]
    fn griffin_lim_consistency_error_is_non_increasing() {
        let cfg = MelConfig::default();
        let w = tone(440.0, 0.5, cfg.sample_rate);
        let m = extract_mel(&w, &cfg).unwrap();
        let (_, trace) = griffin_lim_with_trace(&m, 30).unwrap();
        for k in 1..trace.len() {
            assert!(
                trace[k] <= trace[k - 1] * (1.0 + 1e-12),
                "iteration {k}: {} > {}",
                trace[k],
                trace[k - 1]
            );
        }
    }

    #[test]
    fn round_trip_spectrogram_stays_correlated() {
        let cfg = MelConfig::default();
        let w = tone(440.0, 0.5, cfg.sample_rate);
        let m = extract_mel(&w, &cfg).unwrap();
        let rec = griffin_lim(&m, 60).unwrap();
        let m2 = extract_mel(&rec, &cfg).unwrap();
        assert_eq!(m2.tau(), m.tau());
        let dot: f64 = m
            .values()
            .iter()
            .zip(m2.values())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let na: f64 = m.values().iter().map(|&a| (a as f64).powi(2)).sum();
        let nb: f64 = m2.values().iter().map(|&b| (b as f64).powi(2)).sum();
        let cosine = dot / (na.sqrt() * nb.sqrt());
        assert!(cosine > 0.9, "cosine similarity {cosine}");
    }

    #[test]
    fn zero_iterations_is_an_error() {
        let cfg = MelConfig::default();
        let meta = MelMeta::from_config(&cfg);
        let m = MelSpectrogram::from_values(2, 2, vec![0.0; 4], meta).unwrap();
        assert!(matches!(
            griffin_lim(&m, 0),
            Err(SignalError::ZeroIterations)
        ));
    }

    #[test]
    fn from_values_validates_shape_and_floor() {
        let meta = MelMeta::from_config(&MelConfig::default());
        assert!(MelSpectrogram::from_values(2, 2, vec![0.0; 3], meta).is_err());
        assert!(MelSpectrogram::from_values(0, 2, vec![], meta).is_err());
        let below = meta.floor_log() - 1.0;
        assert!(MelSpectrogram::from_values(1, 1, vec![below], meta).is_err());
        assert!(MelSpectrogram::from_values(1, 1, vec![f32::NAN], meta).is_err());
    }
}
