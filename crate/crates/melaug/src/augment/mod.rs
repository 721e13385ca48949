//! The six Mel-spectrogram augmentation policies.
//!
//! Each policy is a pure transform of a [`MelSpectrogram`] given a policy
//! parameter and an [`AugSeed`]; the same seed, parameters and input always
//! produce a bit-identical output. The random ops draw their variables in a
//! fixed order and delegate to deterministic kernels (`warp_time_at`,
//! `warp_freq_at`, `mask_*_spans`, `loudness_scale`, `resample_time`) which
//! are public so tests and callers can force specific draws.
//!
//! Policies:
//! - time warp: an interior frame is moved by a random distance, linearly
//!   resampling the two segments around it (speeding one up, slowing the
//!   other down); endpoints stay fixed.
//! - frequency / time masking: random bands of bins / frames are replaced
//!   by the spectrogram's global minimum, repeated a configured number of
//!   times.
//! - frequency warp: an interior bin is moved by a random integer distance,
//!   with the same piecewise-linear bin remap applied to every frame.
//! - loudness control: values are contracted toward the minimum by a
//!   random factor.
//! - time length control: the whole time axis is linearly resampled to a
//!   random new length, changing speech rate; the paired variant applies
//!   one shared rate ratio to a source/target pair.

mod rng;

pub use rng::{substream, AugSeed};

use crate::signal::MelSpectrogram;
use rng::DrawRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("parameter out of range: {0}")]
    ParamOutOfRange(String),
    #[error("input too short: {0}")]
    InputTooShort(String),
    #[error("invalid parameter string '{0}': {1}")]
    BadParam(String, String),
}

/// Identifies one augmentation policy. String forms are the lowercase tags
/// used on the command line and in TSV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyTag {
    TimeMask,
    FreqMask,
    TimeWarp,
    FreqWarp,
    TimeLenCtl,
    LoudnessCtl,
}

impl PolicyTag {
    /// All policies, in report order.
    pub const ALL: [PolicyTag; 6] = [
        PolicyTag::TimeMask,
        PolicyTag::FreqMask,
        PolicyTag::TimeWarp,
        PolicyTag::FreqWarp,
        PolicyTag::TimeLenCtl,
        PolicyTag::LoudnessCtl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyTag::TimeMask => "tm",
            PolicyTag::FreqMask => "fm",
            PolicyTag::TimeWarp => "tw",
            PolicyTag::FreqWarp => "fw",
            PolicyTag::TimeLenCtl => "tlc",
            PolicyTag::LoudnessCtl => "lc",
        }
    }

    pub fn parse(s: &str) -> Option<PolicyTag> {
        match s {
            "tm" => Some(PolicyTag::TimeMask),
            "fm" => Some(PolicyTag::FreqMask),
            "tw" => Some(PolicyTag::TimeWarp),
            "fw" => Some(PolicyTag::FreqWarp),
            "tlc" => Some(PolicyTag::TimeLenCtl),
            "lc" => Some(PolicyTag::LoudnessCtl),
            _ => None,
        }
    }
}

impl std::fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-policy hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyParams {
    /// Max time-warp distance as a fraction of the frame count, in [0, 1).
    TimeWarp { max_shift: f64 },
    /// Mask up to `max_width` bins, `repeats` times.
    FreqMask { max_width: usize, repeats: usize },
    /// Mask up to `max_width` frames, `repeats` times.
    TimeMask { max_width: usize, repeats: usize },
    /// Max frequency-warp distance in bins.
    FreqWarp { max_shift: usize },
    /// Max loudness contraction factor, in [0, 1].
    LoudnessCtl { max_drop: f64 },
    /// Max relative length change, in [0, 1).
    TimeLenCtl { max_stretch: f64 },
}

impl PolicyParams {
    pub fn tag(&self) -> PolicyTag {
        match self {
            PolicyParams::TimeWarp { .. } => PolicyTag::TimeWarp,
            PolicyParams::FreqMask { .. } => PolicyTag::FreqMask,
            PolicyParams::TimeMask { .. } => PolicyTag::TimeMask,
            PolicyParams::FreqWarp { .. } => PolicyTag::FreqWarp,
            PolicyParams::LoudnessCtl { .. } => PolicyTag::LoudnessCtl,
            PolicyParams::TimeLenCtl { .. } => PolicyTag::TimeLenCtl,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |msg: String| Err(AugmentError::ParamOutOfRange(msg));
        match *self {
            PolicyParams::TimeWarp { max_shift } => {
                if !max_shift.is_finite() || !(0.0..1.0).contains(&max_shift) {
                    return bad(format!("time-warp fraction {max_shift} not in [0, 1)"));
                }
            }
            PolicyParams::FreqMask { repeats, .. } | PolicyParams::TimeMask { repeats, .. } => {
                if repeats == 0 {
                    return bad("mask repeat count must be >= 1".into());
                }
            }
            PolicyParams::FreqWarp { .. } => {}
            PolicyParams::LoudnessCtl { max_drop } => {
                if !max_drop.is_finite() || !(0.0..=1.0).contains(&max_drop) {
                    return bad(format!("loudness fraction {max_drop} not in [0, 1]"));
                }
            }
            PolicyParams::TimeLenCtl { max_stretch } => {
                if !max_stretch.is_finite() || !(0.0..1.0).contains(&max_stretch) {
                    return bad(format!(
                        "length-control fraction {max_stretch} not in [0, 1)"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical textual form, used as the parameter key in measurement and
    /// report files. Fractions print with three decimals.
    pub fn repr(&self) -> String {
        match *self {
            PolicyParams::TimeWarp { max_shift } => format!("W={max_shift:.3}"),
            PolicyParams::FreqMask { max_width, repeats } => format!("F={max_width},Nf={repeats}"),
            PolicyParams::TimeMask { max_width, repeats } => format!("T={max_width},Nt={repeats}"),
            PolicyParams::FreqWarp { max_shift } => format!("H={max_shift}"),
            PolicyParams::LoudnessCtl { max_drop } => format!("lambda={max_drop:.3}"),
            PolicyParams::TimeLenCtl { max_stretch } => format!("L={max_stretch:.3}"),
        }
    }

    /// Parse a parameter string for a known policy. Accepts the canonical
    /// `repr` form and bare values ("0.08" or "3,2").
    pub fn parse(tag: PolicyTag, s: &str) -> Result<PolicyParams, AugmentError> {
        let bad = |msg: &str| AugmentError::BadParam(s.to_string(), msg.to_string());
        let strip = |s: &str, key: &str| -> String { s.strip_prefix(key).unwrap_or(s).to_string() };
        let parse_f64 = |v: &str, what: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| bad(&format!("expected a number for {what}")))
        };
        let parse_usize = |v: &str, what: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| bad(&format!("expected a non-negative integer for {what}")))
        };
        let parse_pair =
            |width_key: &str, count_key: &str| -> Result<(usize, usize), AugmentError> {
                let mut width = None;
                let mut count = None;
                let parts: Vec<&str> = s.split(',').collect();
                if parts.len() != 2 {
                    return Err(bad("expected two comma-separated values"));
                }
                for part in parts {
                    let part = part.trim();
                    if let Some(v) = part.strip_prefix(width_key) {
                        width = Some(parse_usize(v, "mask width")?);
                    } else if let Some(v) = part.strip_prefix(count_key) {
                        count = Some(parse_usize(v, "mask count")?);
                    } else if width.is_none() {
                        width = Some(parse_usize(part, "mask width")?);
                    } else {
                        count = Some(parse_usize(part, "mask count")?);
                    }
                }
                match (width, count) {
                    (Some(w), Some(c)) => Ok((w, c)),
                    _ => Err(bad("missing width or count")),
                }
            };

        let params = match tag {
            PolicyTag::TimeWarp => PolicyParams::TimeWarp {
                max_shift: parse_f64(&strip(s, "W="), "warp fraction")?,
            },
            PolicyTag::FreqMask => {
                let (max_width, repeats) = parse_pair("F=", "Nf=")?;
                PolicyParams::FreqMask { max_width, repeats }
            }
            PolicyTag::TimeMask => {
                let (max_width, repeats) = parse_pair("T=", "Nt=")?;
                PolicyParams::TimeMask { max_width, repeats }
            }
            PolicyTag::FreqWarp => PolicyParams::FreqWarp {
                max_shift: parse_usize(&strip(s, "H="), "warp distance")?,
            },
            PolicyTag::LoudnessCtl => PolicyParams::LoudnessCtl {
                max_drop: parse_f64(&strip(s, "lambda="), "loudness fraction")?,
            },
            PolicyTag::TimeLenCtl => PolicyParams::TimeLenCtl {
                max_stretch: parse_f64(&strip(s, "L="), "length fraction")?,
            },
        };
        params.validate()?;
        Ok(params)
    }
}

/// Interpolate between two cell values, clamped so rounding can never leave
/// the interval they span.
#[inline]
fn lerp(a: f32, b: f32, frac: f64) -> f32 {
    if frac == 0.0 {
        return a;
    }
    let lo = a.min(b) as f64;
    let hi = a.max(b) as f64;
    let v = a as f64 + (b as f64 - a as f64) * frac;
    v.clamp(lo, hi) as f32
}

/// The two-segment piecewise-linear source position for output index `i`
/// when the pivot moves from `pivot_src` to `pivot_dst` on an axis of
/// `len` points with fixed endpoints.
#[inline]
fn warp_source(i: usize, pivot_src: f64, pivot_dst: f64, len: usize) -> f64 {
    let i = i as f64;
    let end = (len - 1) as f64;
    let src = if i <= pivot_dst {
        i * (pivot_src / pivot_dst)
    } else {
        pivot_src + (i - pivot_dst) * ((end - pivot_src) / (end - pivot_dst))
    };
    src.clamp(0.0, end)
}

fn check_pivot(pivot: usize, shifted: f64, len: usize, axis: &str) -> Result<(), AugmentError> {
    if len < 3 {
        return Err(AugmentError::InputTooShort(format!(
            "{axis} axis has {len} points, warping needs at least 3"
        )));
    }
    if pivot < 1 || pivot > len - 2 {
        return Err(AugmentError::ParamOutOfRange(format!(
            "{axis} pivot {pivot} outside interior [1, {}]",
            len - 2
        )));
    }
    if shifted < 1.0 || shifted > (len - 2) as f64 {
        return Err(AugmentError::ParamOutOfRange(format!(
            "warped {axis} pivot {shifted} outside interior [1, {}]",
            len - 2
        )));
    }
    Ok(())
}

/// Deterministic time-warp kernel: move `source_frame` by `shift` frames,
/// linearly resampling the segments on each side. Frames 0 and tau-1 are
/// copied unchanged.
pub fn warp_time_at(
    m: &MelSpectrogram,
    source_frame: usize,
    shift: f64,
) -> Result<MelSpectrogram, AugmentError> {
    let (nu, tau) = (m.nu(), m.tau());
    let pivot_dst = source_frame as f64 + shift;
    check_pivot(source_frame, pivot_dst, tau, "time")?;
    if shift == 0.0 {
        return Ok(m.clone());
    }
    let mut out = m.clone();
    let values = out.values_mut();
    for j in 1..tau - 1 {
        let src = warp_source(j, source_frame as f64, pivot_dst, tau);
        let i0 = src.floor() as usize;
        let frac = src - i0 as f64;
        let i1 = if frac == 0.0 {
            i0
        } else {
            (i0 + 1).min(tau - 1)
        };
        for bin in 0..nu {
            values[j * nu + bin] = lerp(m.at(bin, i0), m.at(bin, i1), frac);
        }
    }
    Ok(out)
}

/// Deterministic frequency-warp kernel: move `source_bin` by `shift` bins,
/// applying the same piecewise-linear bin remap to every frame. Bins 0 and
/// nu-1 are copied unchanged.
pub fn warp_freq_at(
    m: &MelSpectrogram,
    source_bin: usize,
    shift: i64,
) -> Result<MelSpectrogram, AugmentError> {
    let (nu, tau) = (m.nu(), m.tau());
    let pivot_dst = source_bin as f64 + shift as f64;
    check_pivot(source_bin, pivot_dst, nu, "frequency")?;
    if shift == 0 {
        return Ok(m.clone());
    }
    // one bin remap shared by all frames
    let remap: Vec<(usize, usize, f64)> = (1..nu - 1)
        .map(|i| {
            let src = warp_source(i, source_bin as f64, pivot_dst, nu);
            let i0 = src.floor() as usize;
            let frac = src - i0 as f64;
            let i1 = if frac == 0.0 {
                i0
            } else {
                (i0 + 1).min(nu - 1)
            };
            (i0, i1, frac)
        })
        .collect();
    let mut out = m.clone();
    let values = out.values_mut();
    for t in 0..tau {
        for (i, &(i0, i1, frac)) in remap.iter().enumerate() {
            values[t * nu + i + 1] = lerp(m.at(i0, t), m.at(i1, t), frac);
        }
    }
    Ok(out)
}

/// Linearly resample the time axis to `new_tau` frames, per mel channel.
pub fn resample_time(m: &MelSpectrogram, new_tau: usize) -> Result<MelSpectrogram, AugmentError> {
    if new_tau < 2 {
        return Err(AugmentError::ParamOutOfRange(format!(
            "target length {new_tau} must be >= 2"
        )));
    }
    let (nu, tau) = (m.nu(), m.tau());
    let mut values = vec![0.0f32; nu * new_tau];
    for j in 0..new_tau {
        // exact integer product first, so an unchanged grid copies exactly
        let src = (j * (tau - 1)) as f64 / (new_tau - 1) as f64;
        let i0 = (src.floor() as usize).min(tau - 1);
        let frac = src - i0 as f64;
        let i1 = if frac == 0.0 {
            i0
        } else {
            (i0 + 1).min(tau - 1)
        };
        for bin in 0..nu {
            values[j * nu + bin] = lerp(m.at(bin, i0), m.at(bin, i1), frac);
        }
    }
    Ok(MelSpectrogram::from_values_unchecked(
        nu, new_tau, values, m.meta,
    ))
}

/// Target frame count after shifting the time axis by `shift` frames.
pub fn stretched_length(tau: usize, shift: f64) -> usize {
    ((tau as f64 + shift).round() as usize).max(2)
}

/// Replace the bin bands `[start, start+width)` with the spectrogram's
/// global minimum.
pub fn mask_freq_spans(m: &MelSpectrogram, spans: &[(usize, usize)]) -> MelSpectrogram {
    let (nu, tau) = (m.nu(), m.tau());
    let min = m.min_value();
    let mut out = m.clone();
    let values = out.values_mut();
    for &(start, width) in spans {
        for t in 0..tau {
            for bin in start..(start + width).min(nu) {
                values[t * nu + bin] = min;
            }
        }
    }
    out
}

/// Replace the frame bands `[start, start+width)` with the spectrogram's
/// global minimum.
pub fn mask_time_spans(m: &MelSpectrogram, spans: &[(usize, usize)]) -> MelSpectrogram {
    let (nu, tau) = (m.nu(), m.tau());
    let min = m.min_value();
    let mut out = m.clone();
    let values = out.values_mut();
    for &(start, width) in spans {
        for t in start..(start + width).min(tau) {
            values[t * nu..(t + 1) * nu].fill(min);
        }
    }
    out
}

/// The mask spans `(start, width)` drawn by [`freq_mask`] for these
/// arguments: per repeat, width uniform in [0, max_width], then start
/// uniform in [0, axis_len - width].
pub fn draw_mask_spans(
    axis_len: usize,
    max_width: usize,
    repeats: usize,
    seed: AugSeed,
) -> Vec<(usize, usize)> {
    let mut rng = DrawRng::new(seed);
    (0..repeats)
        .map(|_| {
            let width = rng.range_int(0, max_width as i64) as usize;
            let start = rng.range_int(0, (axis_len - width) as i64) as usize;
            (start, width)
        })
        .collect()
}

/// Contract all values toward the minimum: out = min + (in - min) * (1 - drop).
pub fn loudness_scale(m: &MelSpectrogram, drop: f64) -> MelSpectrogram {
    if drop == 0.0 {
        return m.clone();
    }
    let min = m.min_value() as f64;
    let keep = 1.0 - drop;
    let mut out = m.clone();
    for v in out.values_mut() {
        *v = (min + (*v as f64 - min) * keep) as f32;
    }
    out
}

/// Time warping: draw an interior source frame from
/// [tau/4, tau - tau/4], a shift from [-W*tau, W*tau] (clamped so the
/// moved frame stays interior), and warp. Requires tau >= 8.
pub fn time_warp(
    m: &MelSpectrogram,
    max_shift: f64,
    seed: AugSeed,
) -> Result<MelSpectrogram, AugmentError> {
    PolicyParams::TimeWarp { max_shift }.validate()?;
    let tau = m.tau();
    if tau < 8 {
        return Err(AugmentError::InputTooShort(format!(
            "time warp needs at least 8 frames, got {tau}"
        )));
    }
    let mut rng = DrawRng::new(seed);
    let quarter = (tau / 4) as i64;
    let source = rng.range_int(quarter, tau as i64 - quarter) as usize;
    let limit = max_shift * tau as f64;
    let shift = rng
        .range_f64(-limit, limit)
        .clamp(1.0 - source as f64, (tau - 2) as f64 - source as f64);
    if shift == 0.0 {
        return Ok(m.clone());
    }
    warp_time_at(m, source, shift)
}

/// Frequency masking: `repeats` bands of up to `max_width` bins set to the
/// global minimum. Requires max_width <= nu.
pub fn freq_mask(
    m: &MelSpectrogram,
    max_width: usize,
    repeats: usize,
    seed: AugSeed,
) -> Result<MelSpectrogram, AugmentError> {
    PolicyParams::FreqMask { max_width, repeats }.validate()?;
    if max_width > m.nu() {
        return Err(AugmentError::ParamOutOfRange(format!(
            "mask width {max_width} exceeds {} bins",
            m.nu()
        )));
    }
    let spans = draw_mask_spans(m.nu(), max_width, repeats, seed);
    Ok(mask_freq_spans(m, &spans))
}

/// Time masking: `repeats` bands of up to `max_width` frames set to the
/// global minimum. Requires max_width <= tau.
pub fn time_mask(
    m: &MelSpectrogram,
    max_width: usize,
    repeats: usize,
    seed: AugSeed,
) -> Result<MelSpectrogram, AugmentError> {
    PolicyParams::TimeMask { max_width, repeats }.validate()?;
    if max_width > m.tau() {
        return Err(AugmentError::ParamOutOfRange(format!(
            "mask width {max_width} exceeds {} frames",
            m.tau()
        )));
    }
    let spans = draw_mask_spans(m.tau(), max_width, repeats, seed);
    Ok(mask_time_spans(m, &spans))
}

/// Frequency warping: draw an interior source bin from [nu/4, nu - nu/4]
/// and an integer shift from [-H, H] (clamped interior), then warp every
/// frame identically. Requires nu >= 8.
pub fn freq_warp(
    m: &MelSpectrogram,
    max_shift: usize,
    seed: AugSeed,
) -> Result<MelSpectrogram, AugmentError> {
    let nu = m.nu();
    if nu < 8 {
        return Err(AugmentError::InputTooShort(format!(
            "frequency warp needs at least 8 bins, got {nu}"
        )));
    }
    let mut rng = DrawRng::new(seed);
    let quarter = (nu / 4) as i64;
    let source = rng.range_int(quarter, nu as i64 - quarter) as usize;
    let shift = rng
        .range_int(-(max_shift as i64), max_shift as i64)
        .clamp(1 - source as i64, (nu - 2) as i64 - source as i64);
    if shift == 0 {
        return Ok(m.clone());
    }
    warp_freq_at(m, source, shift)
}

/// Loudness control: contract toward the minimum by a factor drawn from
/// [0, max_drop].
pub fn loudness_ctl(
    m: &MelSpectrogram,
    max_drop: f64,
    seed: AugSeed,
) -> Result<MelSpectrogram, AugmentError> {
    PolicyParams::LoudnessCtl { max_drop }.validate()?;
    let mut rng = DrawRng::new(seed);
    let drop = rng.range_f64(0.0, max_drop);
    Ok(loudness_scale(m, drop))
}

/// Time length control: resample the time axis to
/// max(2, round(tau + l)) frames where l is drawn from
/// [-max_stretch*tau, max_stretch*tau]. Returns the drawn l alongside the
/// output so a caller can mirror the draw. Requires tau >= 2.
pub fn time_len_ctl(
    m: &MelSpectrogram,
    max_stretch: f64,
    seed: AugSeed,
) -> Result<(MelSpectrogram, f64), AugmentError> {
    PolicyParams::TimeLenCtl { max_stretch }.validate()?;
    let tau = m.tau();
    if tau < 2 {
        return Err(AugmentError::InputTooShort(
            "time length control needs at least 2 frames".into(),
        ));
    }
    let mut rng = DrawRng::new(seed);
    let limit = max_stretch * tau as f64;
    let shift = rng.range_f64(-limit, limit);
    let out = resample_time(m, stretched_length(tau, shift))?;
    Ok((out, shift))
}

/// The relative stretch ratio [`time_len_ctl_pair`] draws for a given seed:
/// uniform in [-max_stretch, max_stretch], its first and only draw.
pub fn draw_stretch_ratio(max_stretch: f64, seed: AugSeed) -> f64 {
    DrawRng::new(seed).range_f64(-max_stretch, max_stretch)
}

/// Paired time length control: one relative ratio r drawn from
/// [-max_stretch, max_stretch] stretches both spectrograms, preserving the
/// one-to-one pairing of source and target.
pub fn time_len_ctl_pair(
    src: &MelSpectrogram,
    tgt: &MelSpectrogram,
    max_stretch: f64,
    seed: AugSeed,
) -> Result<(MelSpectrogram, MelSpectrogram), AugmentError> {
    PolicyParams::TimeLenCtl { max_stretch }.validate()?;
    if src.tau() < 2 || tgt.tau() < 2 {
        return Err(AugmentError::InputTooShort(
            "time length control needs at least 2 frames".into(),
        ));
    }
    let ratio = draw_stretch_ratio(max_stretch, seed);
    let src_out = resample_time(src, stretched_length(src.tau(), src.tau() as f64 * ratio))?;
    let tgt_out = resample_time(tgt, stretched_length(tgt.tau(), tgt.tau() as f64 * ratio))?;
    Ok((src_out, tgt_out))
}

/// Dispatch a policy. Time length control discards the drawn shift; use
/// [`time_len_ctl`] directly when it is needed.
pub fn apply(
    m: &MelSpectrogram,
    params: &PolicyParams,
    seed: AugSeed,
) -> Result<MelSpectrogram, AugmentError> {
    match *params {
        PolicyParams::TimeWarp { max_shift } => time_warp(m, max_shift, seed),
        PolicyParams::FreqMask { max_width, repeats } => freq_mask(m, max_width, repeats, seed),
        PolicyParams::TimeMask { max_width, repeats } => time_mask(m, max_width, repeats, seed),
        PolicyParams::FreqWarp { max_shift } => freq_warp(m, max_shift, seed),
        PolicyParams::LoudnessCtl { max_drop } => loudness_ctl(m, max_drop, seed),
        PolicyParams::TimeLenCtl { max_stretch } => {
            time_len_ctl(m, max_stretch, seed).map(|(out, _)| out)
        }
    }
}
