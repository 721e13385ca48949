//! Shared input builders for the benchmarks.

use melaug::signal::{MelConfig, MelMeta, MelSpectrogram, Waveform};

/// A deterministic pseudo-random spectrogram above the default log floor.
pub fn bench_mel(nu: usize, tau: usize, seed: u64) -> MelSpectrogram {
    let meta = MelMeta::from_config(&MelConfig::default());
    let floor = meta.floor_log();
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    let values = (0..nu * tau)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            floor + ((state >> 11) as f64 / (1u64 << 53) as f64 * 12.0) as f32
        })
        .collect();
    MelSpectrogram::from_values(nu, tau, values, meta).unwrap()
}

/// A fixed-amplitude sine, the benchmark audio input.
pub fn bench_tone(secs: f64) -> Waveform {
    let sample_rate = MelConfig::default().sample_rate;
    let n = (secs * sample_rate as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            (2.0 * std::f64::consts::PI * 440.0 * i as f64 / sample_rate as f64).sin() as f32 * 0.8
        })
        .collect();
    Waveform {
        samples,
        sample_rate,
    }
}
