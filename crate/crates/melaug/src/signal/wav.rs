//! RIFF/WAVE reading and writing, 16-bit PCM only.

use std::fs;
use std::path::Path;

use super::{SignalError, Waveform};

const PCM_SCALE: f32 = 32768.0;

/// Load a 16-bit PCM WAV file. Multichannel audio is averaged down to mono
/// and samples are scaled by 1/32768.
pub fn load_wav(path: &Path) -> Result<Waveform, SignalError> {
    let bytes = fs::read(path)?;
    wav_from_bytes(&bytes)
}

/// Write a waveform as a 16-bit PCM mono WAV file. Samples are rounded to
/// the nearest PCM step and clamped to [-32768, 32767].
pub fn write_wav(w: &Waveform, path: &Path) -> Result<(), SignalError> {
    fs::write(path, wav_to_bytes(w)).map_err(SignalError::from)
}

/// Parse WAV bytes. See [`load_wav`].
pub fn wav_from_bytes(bytes: &[u8]) -> Result<Waveform, SignalError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != b"RIFF" {
        return Err(SignalError::Format("missing RIFF tag".into()));
    }
    let _riff_size = r.u32()?;
    if r.take(4)? != b"WAVE" {
        return Err(SignalError::Format("missing WAVE tag".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    while r.remaining() >= 8 {
        let id: [u8; 4] = r.take(4)?.try_into().unwrap();
        let size = r.u32()? as usize;
        let body = r.take(size)?;
        match &id {
            b"fmt " => fmt = Some(FmtChunk::parse(body)?),
            b"data" => {
                data = Some(body);
                break;
            }
            _ => {} // LIST, fact, ... skipped
        }
        // chunk bodies are word-aligned
        if size % 2 == 1 && r.remaining() > 0 {
            r.take(1)?;
        }
    }

    let fmt = fmt.ok_or_else(|| SignalError::Format("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| SignalError::Format("missing data chunk".into()))?;
    if fmt.audio_format != 1 {
        return Err(SignalError::UnsupportedFormat(format!(
            "audio format code {} (only PCM = 1 is supported)",
            fmt.audio_format
        )));
    }
    if fmt.bits_per_sample != 16 {
        return Err(SignalError::UnsupportedFormat(format!(
            "{}-bit samples (only 16-bit is supported)",
            fmt.bits_per_sample
        )));
    }
    if fmt.channels == 0 {
        return Err(SignalError::Format("zero channels".into()));
    }
    if fmt.sample_rate == 0 {
        return Err(SignalError::Format("zero sample rate".into()));
    }

    let channels = fmt.channels as usize;
    let frame_bytes = 2 * channels;
    let n_frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(n_frames);
    for frame in 0..n_frames {
        let mut acc = 0.0f32;
        for ch in 0..channels {
            let off = frame * frame_bytes + ch * 2;
            let v = i16::from_le_bytes([data[off], data[off + 1]]);
            acc += v as f32 / PCM_SCALE;
        }
        samples.push(acc / channels as f32);
    }

    Ok(Waveform {
        samples,
        sample_rate: fmt.sample_rate,
    })
}

/// Serialize a waveform as 16-bit PCM mono WAV bytes. See [`write_wav`].
pub fn wav_to_bytes(w: &Waveform) -> Vec<u8> {
    let data_len = w.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &w.samples {
        let q = (s * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

struct FmtChunk {
    audio_format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

impl FmtChunk {
    fn parse(body: &[u8]) -> Result<Self, SignalError> {
        if body.len() < 16 {
            return Err(SignalError::Format("fmt chunk truncated".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([body[i], body[i + 1]]);
        Ok(FmtChunk {
            audio_format: u16_at(0),
            channels: u16_at(2),
            sample_rate: u32::from_le_bytes([body[4], body[5], body[6], body[7]]),
            bits_per_sample: u16_at(14),
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SignalError> {
        if self.remaining() < n {
            return Err(SignalError::Format("unexpected end of file".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, SignalError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
