//! Objective evaluation: edit distance / CER / WER, DTW alignment and
//! mel-cepstral distortion.

use crate::signal::MelSpectrogram;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reference transcript is empty after normalization")]
    EmptyReference,
    #[error("cepstral dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cepstral sequences must be non-empty")]
    EmptySequence,
    #[error("cepstral order {order} must be < mel bin count {nu}")]
    OrderTooLarge { order: usize, nu: usize },
    #[error("invalid cepstral frames: {0}")]
    InvalidFrames(String),
}

/// A normalized transcript. Normalization is NFC, runs of whitespace
/// collapsed to single spaces, ends trimmed; no case folding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub text: String,
    pub utterance_id: String,
}

impl Transcript {
    pub fn new(utterance_id: impl Into<String>, raw_text: &str) -> Self {
        Transcript {
            text: normalize_text(raw_text),
            utterance_id: utterance_id.into(),
        }
    }
}

/// NFC-normalize, collapse whitespace runs to single spaces, trim.
pub fn normalize_text(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    let mut out = String::with_capacity(nfc.len());
    let mut pending_space = false;
    for ch in nfc.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

/// Levenshtein distance over unicode scalar values (spaces included),
/// unit costs for insertion, deletion and substitution.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character error rate: edit distance divided by the reference length in
/// characters. Not clamped; can exceed 1 for long hypotheses.
pub fn cer(hyp: &Transcript, reference: &Transcript) -> Result<f64, MetricsError> {
    let ref_len = reference.text.chars().count();
    if ref_len == 0 {
        return Err(MetricsError::EmptyReference);
    }
    Ok(edit_distance(&hyp.text, &reference.text) as f64 / ref_len as f64)
}

/// Word error rate: token-level Levenshtein over whitespace-split tokens,
/// divided by the reference token count.
pub fn wer(hyp: &Transcript, reference: &Transcript) -> Result<f64, MetricsError> {
    let ref_tokens: Vec<&str> = reference.text.split_whitespace().collect();
    if ref_tokens.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let hyp_tokens: Vec<&str> = hyp.text.split_whitespace().collect();
    let n = ref_tokens.len();
    let m = hyp_tokens.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for (i, rt) in ref_tokens.iter().enumerate() {
        cur[0] = i + 1;
        for (j, ht) in hyp_tokens.iter().enumerate() {
            let sub = prev[j] + usize::from(rt != ht);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m] as f64 / n as f64)
}

/// A sequence of mel-cepstral coefficient vectors with a uniform dimension
/// of at least 2 (coefficient 0 plus at least one higher coefficient).
#[derive(Debug, Clone, PartialEq)]
pub struct McepSequence {
    data: Vec<f64>,
    dim: usize,
}

impl McepSequence {
    pub fn new(frames: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        if frames.is_empty() {
            return Err(MetricsError::EmptySequence);
        }
        let dim = frames[0].len();
        if dim < 2 {
            return Err(MetricsError::InvalidFrames(format!(
                "frame dimension {dim} must be >= 2"
            )));
        }
        let mut data = Vec::with_capacity(frames.len() * dim);
        for f in &frames {
            if f.len() != dim {
                return Err(MetricsError::InvalidFrames(format!(
                    "mixed frame dimensions {} and {dim}",
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(MetricsError::InvalidFrames("non-finite value".into()));
            }
            data.extend_from_slice(f);
        }
        Ok(McepSequence { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Per-pair mel-cepstral distance in dB, excluding coefficient 0:
/// (10 / ln 10) * sqrt(2 * sum_{k>=1} (a_k - b_k)^2).
pub fn mcd_frame_distance(a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a[1..]
        .iter()
        .zip(&b[1..])
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    10.0 / std::f64::consts::LN_10 * (2.0 * sq).sqrt()
}

/// Dynamic time warping with steps (1,0), (0,1), (1,1), minimizing the
/// summed [`mcd_frame_distance`] along a monotone path from (0,0) to
/// (len_x - 1, len_y - 1). Returns the path and its total cost.
pub fn dtw_align(
    x: &McepSequence,
    y: &McepSequence,
) -> Result<(Vec<(usize, usize)>, f64), MetricsError> {
    if x.dim() != y.dim() {
        return Err(MetricsError::DimensionMismatch(x.dim(), y.dim()));
    }
    let n = x.len();
    let m = y.len();
    let mut cost = vec![f64::INFINITY; n * m];
    // predecessor per cell: 0 = diagonal, 1 = from (i-1, j), 2 = from (i, j-1)
    let mut step = vec![0u8; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = mcd_frame_distance(x.frame(i), y.frame(j));
            let idx = i * m + j;
            if i == 0 && j == 0 {
                cost[idx] = d;
                continue;
            }
            let mut best = f64::INFINITY;
            let mut s = 0u8;
            if i > 0 && j > 0 && cost[(i - 1) * m + (j - 1)] < best {
                best = cost[(i - 1) * m + (j - 1)];
                s = 0;
            }
            if i > 0 && cost[(i - 1) * m + j] < best {
                best = cost[(i - 1) * m + j];
                s = 1;
            }
            if j > 0 && cost[i * m + (j - 1)] < best {
                best = cost[i * m + (j - 1)];
                s = 2;
            }
            cost[idx] = best + d;
            step[idx] = s;
        }
    }

    let mut path = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        path.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        match step[i * m + j] {
            0 if i > 0 && j > 0 => {
                i -= 1;
                j -= 1;
            }
            1 if i > 0 => i -= 1,
            _ => j -= 1,
        }
    }
    path.reverse();
    Ok((path, cost[n * m - 1]))
}

/// Mel-cepstral distortion in dB: the mean frame distance along the DTW
/// alignment path.
pub fn mcd(x: &McepSequence, y: &McepSequence) -> Result<f64, MetricsError> {
    let (path, cost) = dtw_align(x, y)?;
    Ok(cost / path.len() as f64)
}

/// Orthonormal type-II DCT of each log-mel frame, keeping coefficients
/// 0..=order. Requires order < nu.
pub fn mel_to_mcep(m: &MelSpectrogram, order: usize) -> Result<McepSequence, MetricsError> {
    let nu = m.nu();
    if order >= nu {
        return Err(MetricsError::OrderTooLarge { order, nu });
    }
    let n = nu as f64;
    let scale0 = (1.0 / n).sqrt();
    let scale = (2.0 / n).sqrt();
    let mut frames = Vec::with_capacity(m.tau());
    for t in 0..m.tau() {
        let col = m.frame(t);
        let mut coeffs = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let mut acc = 0.0f64;
            for (i, &v) in col.iter().enumerate() {
                acc += v as f64
                    * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos();
            }
            coeffs.push(acc * if k == 0 { scale0 } else { scale });
        }
        frames.push(coeffs);
    }
    McepSequence::new(frames)
}
