//! Pluggable transcriber backends for the DPD search: an HTTP client for a
//! remote ASR service and a directory of fixture transcripts for offline
//! runs.
//!
//! The remote protocol is a single POST of complete WAV bytes with
//! `Content-Type: audio/wav` (plus `X-Language` when a language hint is
//! configured); the response is a JSON object with a string field
//! `transcript`. Vendor-specific services are expected to sit behind a thin
//! shim speaking this protocol.

use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::metrics::Transcript;
use crate::signal::{wav_to_bytes, Waveform};

#[derive(Debug, Error)]
pub enum AsrError {
    #[error("transient failure after {attempts} attempt(s): {msg}")]
    Transient { attempts: u32, msg: String },
    #[error("service returned status {status}")]
    Service { status: u16 },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("missing fixture transcript for key '{0}'")]
    FixtureMiss(String),
    #[error("invalid transcriber config: {0}")]
    Config(String),
    #[error("cannot transcribe an empty waveform")]
    EmptyWaveform,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TranscriberBackend {
    Remote { endpoint: String },
    Fixture { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriberConfig {
    pub backend: TranscriberBackend,
    pub timeout: Duration,
    /// Maximum attempts for transport-level failures; backoff starts at
    /// 0.5 s and doubles per retry.
    pub retries: u32,
    /// BCP-47 tag forwarded as the `X-Language` header.
    pub language_hint: Option<String>,
    /// In-flight request bound for the remote backend.
    pub max_in_flight: usize,
}

impl TranscriberConfig {
    pub fn fixture(dir: impl Into<PathBuf>) -> Self {
        TranscriberConfig {
            backend: TranscriberBackend::Fixture { dir: dir.into() },
            timeout: Duration::from_secs(30),
            retries: 3,
            language_hint: None,
            max_in_flight: 4,
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        TranscriberConfig {
            backend: TranscriberBackend::Remote {
                endpoint: endpoint.into(),
            },
            timeout: Duration::from_secs(30),
            retries: 3,
            language_hint: None,
            max_in_flight: 4,
        }
    }

    pub fn validate(&self) -> Result<(), AsrError> {
        if self.timeout.is_zero() {
            return Err(AsrError::Config("timeout must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(AsrError::Config("max_in_flight must be >= 1".into()));
        }
        match &self.backend {
            TranscriberBackend::Remote { endpoint } if endpoint.is_empty() => {
                Err(AsrError::Config("remote backend needs an endpoint".into()))
            }
            TranscriberBackend::Fixture { dir } if dir.as_os_str().is_empty() => {
                Err(AsrError::Config("fixture backend needs a directory".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Request key for an augmented trial; fixture transcripts live at
/// `<dir>/<key>.txt`. Pure function of its inputs, stable across runs.
pub fn request_key(utt_id: &str, policy: &str, param_index: usize, repeat: usize) -> String {
    format!("{utt_id}__{policy}__{param_index}__{repeat}")
}

/// Request key for the unaugmented baseline of an utterance.
pub fn baseline_key(utt_id: &str) -> String {
    format!("{utt_id}__baseline")
}

pub trait Transcriber: Send + Sync {
    fn transcribe(&self, audio: &Waveform, key: &str) -> Result<Transcript, AsrError>;
}

/// Build the backend described by a config.
pub fn make_transcriber(cfg: &TranscriberConfig) -> Result<Box<dyn Transcriber>, AsrError> {
    cfg.validate()?;
    match &cfg.backend {
        TranscriberBackend::Fixture { dir } => {
            Ok(Box::new(FixtureTranscriber { dir: dir.clone() }))
        }
        TranscriberBackend::Remote { endpoint } => {
            Ok(Box::new(RemoteTranscriber::new(endpoint.clone(), cfg)?))
        }
    }
}

/// Deterministic transcriber reading `<dir>/<key>.txt`.
pub struct FixtureTranscriber {
    dir: PathBuf,
}

impl FixtureTranscriber {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureTranscriber { dir: dir.into() }
    }
}

impl Transcriber for FixtureTranscriber {
    fn transcribe(&self, audio: &Waveform, key: &str) -> Result<Transcript, AsrError> {
        if audio.samples.is_empty() {
            return Err(AsrError::EmptyWaveform);
        }
        let path = self.dir.join(format!("{key}.txt"));
        let raw =
            std::fs::read_to_string(&path).map_err(|_| AsrError::FixtureMiss(key.to_string()))?;
        Ok(Transcript::new(key, &raw))
    }
}

/// HTTP client for the remote protocol described in the module docs.
pub struct RemoteTranscriber {
    endpoint: String,
    client: reqwest::blocking::Client,
    retries: u32,
    language_hint: Option<String>,
    limiter: Semaphore,
}

impl RemoteTranscriber {
    pub fn new(endpoint: String, cfg: &TranscriberConfig) -> Result<Self, AsrError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| AsrError::Config(e.to_string()))?;
        Ok(RemoteTranscriber {
            endpoint,
            client,
            retries: cfg.retries.max(1),
            language_hint: cfg.language_hint.clone(),
            limiter: Semaphore::new(cfg.max_in_flight),
        })
    }

    fn post_once(&self, body: Vec<u8>) -> Result<Transcript, PostError> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .header("Content-Type", "audio/wav")
            .body(body);
        if let Some(lang) = &self.language_hint {
            req = req.header("X-Language", lang);
        }
        let resp = req
            .send()
            .map_err(|e| PostError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(PostError::Fatal(AsrError::Service { status }));
        }
        let text = resp
            .text()
            .map_err(|e| PostError::Transport(e.to_string()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| PostError::Fatal(AsrError::InvalidResponse(e.to_string())))?;
        match value.get("transcript").and_then(|v| v.as_str()) {
            Some(t) => Ok(Transcript::new("", t)),
            None => Err(PostError::Fatal(AsrError::InvalidResponse(
                "missing string field 'transcript'".into(),
            ))),
        }
    }
}

enum PostError {
    /// Worth retrying: connect failures, timeouts.
    Transport(String),
    /// Not worth retrying: bad status, malformed body.
    Fatal(AsrError),
}

impl Transcriber for RemoteTranscriber {
    fn transcribe(&self, audio: &Waveform, key: &str) -> Result<Transcript, AsrError> {
        if audio.samples.is_empty() {
            return Err(AsrError::EmptyWaveform);
        }
        let body = wav_to_bytes(audio);
        let _permit = self.limiter.acquire();
        let mut backoff = Duration::from_millis(500);
        let mut last = String::new();
        for attempt in 1..=self.retries {
            match self.post_once(body.clone()) {
                Ok(mut t) => {
                    t.utterance_id = key.to_string();
                    return Ok(t);
                }
                Err(PostError::Fatal(e)) => return Err(e),
                Err(PostError::Transport(msg)) => {
                    last = msg;
                    if attempt < self.retries {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(AsrError::Transient {
            attempts: self.retries,
            msg: last,
        })
    }
}

/// Counting semaphore bounding in-flight remote requests.
struct Semaphore {
    state: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(count: usize) -> Self {
        Semaphore {
            state: Mutex::new(count),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut avail = self.state.lock().unwrap();
        while *avail == 0 {
            avail = self.cv.wait(avail).unwrap();
        }
        *avail -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut avail = self.0.state.lock().unwrap();
        *avail += 1;
        self.0.cv.notify_one();
    }
}
