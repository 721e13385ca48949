//! The MELS binary format.
//!
//! Layout, all little-endian:
//! magic "MELS", u8 version (= 1), u32 nu, u64 tau, f64 sample_rate,
//! u32 n_fft, u32 hop, f64 fmin, f64 fmax, f64 log_floor, then nu*tau f32
//! values in frame-major order.

use std::fs;
use std::path::Path;

use super::{MelMeta, MelSpectrogram, SignalError};

const MAGIC: &[u8; 4] = b"MELS";
const VERSION: u8 = 1;

pub fn write_mels(m: &MelSpectrogram, path: &Path) -> Result<(), SignalError> {
    fs::write(path, mels_to_bytes(m)).map_err(SignalError::from)
}

pub fn read_mels(path: &Path) -> Result<MelSpectrogram, SignalError> {
    let bytes = fs::read(path)?;
    mels_from_bytes(&bytes)
}

pub fn mels_to_bytes(m: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 1 + 4 + 8 + 40 + m.values().len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(m.nu() as u32).to_le_bytes());
    out.extend_from_slice(&(m.tau() as u64).to_le_bytes());
    out.extend_from_slice(&m.meta.sample_rate.to_le_bytes());
    out.extend_from_slice(&m.meta.n_fft.to_le_bytes());
    out.extend_from_slice(&m.meta.hop.to_le_bytes());
    out.extend_from_slice(&m.meta.fmin.to_le_bytes());
    out.extend_from_slice(&m.meta.fmax.to_le_bytes());
    out.extend_from_slice(&m.meta.log_floor.to_le_bytes());
    for &v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn mels_from_bytes(bytes: &[u8]) -> Result<MelSpectrogram, SignalError> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], SignalError> {
        if bytes.len() - *pos < n {
            return Err(SignalError::MelFile("unexpected end of file".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 4)? != MAGIC {
        return Err(SignalError::MelFile("bad magic".into()));
    }
    let version = take(&mut pos, 1)?[0];
    if version != VERSION {
        return Err(SignalError::MelFile(format!(
            "unsupported version {version}"
        )));
    }
    let nu = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let tau = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let f64_at = |pos: &mut usize| -> Result<f64, SignalError> {
        Ok(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
    };
    let sample_rate = f64_at(&mut pos)?;
    let n_fft = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let hop = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let fmin = f64_at(&mut pos)?;
    let fmax = f64_at(&mut pos)?;
    let log_floor = f64_at(&mut pos)?;
    let meta = MelMeta {
        sample_rate,
        n_fft,
        hop,
        fmin,
        fmax,
        log_floor,
    };

    let count = nu
        .checked_mul(tau)
        .ok_or_else(|| SignalError::MelFile("value count overflow".into()))?;
    let payload = take(&mut pos, count * 4)?;
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MelSpectrogram::from_values(nu, tau, values, meta)
        .map_err(|e| SignalError::MelFile(e.to_string()))
}
