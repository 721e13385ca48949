//! Mel-spectrogram augmentation toolkit.
//!
//! The crate bundles everything needed to run a deformation-per-deteriorating
//! (DPD) hyperparameter search over spectrogram augmentation policies:
//!
//! - [`signal`] — WAV I/O, STFT analysis, mel filterbank projection and
//!   Griffin-Lim inversion back to audio.
//! - [`augment`] — the six augmentation policies (time/frequency warping and
//!   masking, loudness and time-length control), each deterministic given a
//!   seed, plus a paired mode that stretches a source/target pair by one ratio.
//! - [`metrics`] — character/word error rate, DTW alignment and mel-cepstral
//!   distortion.
//! - [`search`] — deformation ratios, the DPD ratio, parameter schedules, the
//!   per-policy search and the two-stage masking search, with TSV measurement
//!   and report files for offline reproduction.
//! - [`asr`] — a pluggable transcriber: an HTTP client for a remote ASR
//!   service and a directory-backed fixture for offline runs.
//! - [`manifest`] — the utterance manifest (id, audio path, transcript) that
//!   drives the search.

pub mod asr;
pub mod augment;
pub mod manifest;
pub mod metrics;
pub mod search;
pub mod signal;

pub use asr::{AsrError, Transcriber, TranscriberBackend, TranscriberConfig};
pub use augment::{AugSeed, AugmentError, PolicyParams, PolicyTag};
pub use manifest::{ManifestEntry, ManifestError};
pub use metrics::{McepSequence, MetricsError, Transcript};
pub use search::{DatasetStats, Dpd, DpdRecord, ScheduleKind, SearchError, SearchSchedule};
pub use signal::{MelConfig, MelFilterbank, MelSpectrogram, SignalError, Waveform};
