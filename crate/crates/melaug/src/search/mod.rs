//! DPD-based hyperparameter search.
//!
//! The deformation-per-deteriorating ratio of a policy hyperparameter p is
//! DPD_p = D_p / |E_p - E_o|, where D_p is the policy's maximum deformation
//! ratio, E_p the mean CER of Griffin-Lim-decoded audio under the policy and
//! E_o the mean CER without augmentation. A larger ratio means more
//! deformation bought per unit of intelligibility lost; each policy's
//! parameter is chosen by maximizing it over a schedule. Masking policies
//! get a second stage: with the width*count product fixed at the stage-1
//! winner, every integer divisor pair is evaluated and the best pair wins.
//!
//! Report values follow a fixed rounding convention: D_p, E_p and E_o are
//! quantized to three decimals before the ratio is formed, so reports are
//! comparable across runs and with hand-computed tables regardless of the
//! precision the raw trial CERs carried.

mod tsv;

pub use tsv::{
    measurements_to_string, parse_measurements_str, read_measurements, report_to_string,
    write_measurements, write_report, MeasurementRow, MEASUREMENTS_HEADER, REPORT_HEADER,
};

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::asr::{baseline_key, request_key, Transcriber};
use crate::augment::{apply, substream, AugSeed, AugmentError, PolicyParams, PolicyTag};
use crate::manifest::ManifestEntry;
use crate::metrics::{cer, MetricsError, Transcript};
use crate::signal::{extract_mel, griffin_lim, load_wav, MelConfig, MelSpectrogram, SignalError};

/// Repetitions used to estimate E_p for one parameter value.
pub const DEFAULT_REPEATS: usize = 10;
/// Griffin-Lim iterations used when decoding trials.
pub const DEFAULT_GL_ITERATIONS: usize = 60;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("negative input: {0}")]
    NegativeInput(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("measurements line {line}: {msg}")]
    MeasurementsParse { line: usize, msg: String },
    #[error("measurements contain no data rows")]
    EmptyMeasurements,
    #[error("measurements contain no baseline rows (policy = 'baseline')")]
    MissingBaseline,
    #[error("no measurements for policy {policy} at {repr}")]
    MissingMeasurement { policy: String, repr: String },
    #[error("unknown policy tag '{0}'")]
    UnknownPolicy(String),
    #[error("bad parameter '{repr}' for policy {policy}: {msg}")]
    BadParamRepr {
        policy: String,
        repr: String,
        msg: String,
    },
    #[error("all utterances failed transcription; first error: {0}")]
    AllFailed(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Manifest(#[from] crate::manifest::ManifestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The DPD ratio: finite value, or flagged infinite when E_p equals E_o.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dpd {
    Finite(f64),
    Infinite,
}

impl Dpd {
    pub fn is_infinite(self) -> bool {
        matches!(self, Dpd::Infinite)
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Dpd::Finite(v) => Some(v),
            Dpd::Infinite => None,
        }
    }
}

/// One evaluated search cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DpdRecord {
    pub policy: PolicyTag,
    pub params: PolicyParams,
    /// Maximum deformation ratio, rounded per the report convention.
    pub d_p: f64,
    /// Mean CER under the policy, rounded per the report convention.
    pub e_p: f64,
    /// Baseline mean CER, rounded per the report convention.
    pub e_o: f64,
    pub dpd: Dpd,
    pub selected: bool,
}

/// Statistics of the search dataset used by the deformation ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    /// Arithmetic mean frame count over the manifest.
    pub mean_tau: f64,
    /// Mel bin count.
    pub nu: usize,
    pub utterance_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Arithmetic,
    Geometric,
}

/// Parameter sequence for one policy: arithmetic (start + k*step) or
/// geometric (start * ratio^k).
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSchedule {
    pub kind: ScheduleKind,
    pub start: f64,
    pub step_or_ratio: f64,
    pub count: usize,
}

impl SearchSchedule {
    pub fn arithmetic(start: f64, step: f64, count: usize) -> Self {
        SearchSchedule {
            kind: ScheduleKind::Arithmetic,
            start,
            step_or_ratio: step,
            count,
        }
    }

    pub fn geometric(start: f64, ratio: f64, count: usize) -> Self {
        SearchSchedule {
            kind: ScheduleKind::Geometric,
            start,
            step_or_ratio: ratio,
            count,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.count < 1 {
            return Err(SearchError::InvalidSchedule("count must be >= 1".into()));
        }
        if !self.start.is_finite() || self.start < 0.0 {
            return Err(SearchError::InvalidSchedule(format!(
                "start {} must be finite and non-negative",
                self.start
            )));
        }
        match self.kind {
            ScheduleKind::Arithmetic if self.step_or_ratio <= 0.0 => Err(
                SearchError::InvalidSchedule("arithmetic step must be > 0".into()),
            ),
            ScheduleKind::Geometric if self.step_or_ratio <= 1.0 => Err(
                SearchError::InvalidSchedule("geometric ratio must be > 1".into()),
            ),
            ScheduleKind::Geometric if self.start <= 0.0 => Err(SearchError::InvalidSchedule(
                "geometric start must be > 0".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count)
            .map(|k| match self.kind {
                ScheduleKind::Arithmetic => self.start + k as f64 * self.step_or_ratio,
                ScheduleKind::Geometric => self.start * self.step_or_ratio.powi(k as i32),
            })
            .collect()
    }
}

/// Per-policy schedules. Defaults: 2..16 step 2 for the bin/frame-valued
/// parameters, 0.02..0.16 step 0.02 for the fractional ones, and six
/// geometric doublings from 0.02 for loudness.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedules {
    pub time_mask: SearchSchedule,
    pub freq_mask: SearchSchedule,
    pub time_warp: SearchSchedule,
    pub freq_warp: SearchSchedule,
    pub time_len_ctl: SearchSchedule,
    pub loudness_ctl: SearchSchedule,
}

impl Default for Schedules {
    fn default() -> Self {
        Schedules {
            time_mask: SearchSchedule::arithmetic(2.0, 2.0, 8),
            freq_mask: SearchSchedule::arithmetic(2.0, 2.0, 8),
            time_warp: SearchSchedule::arithmetic(0.02, 0.02, 8),
            freq_warp: SearchSchedule::arithmetic(2.0, 2.0, 8),
            time_len_ctl: SearchSchedule::arithmetic(0.02, 0.02, 8),
            loudness_ctl: SearchSchedule::geometric(0.02, 2.0, 6),
        }
    }
}

impl Schedules {
    pub fn for_policy(&self, tag: PolicyTag) -> &SearchSchedule {
        match tag {
            PolicyTag::TimeMask => &self.time_mask,
            PolicyTag::FreqMask => &self.freq_mask,
            PolicyTag::TimeWarp => &self.time_warp,
            PolicyTag::FreqWarp => &self.freq_warp,
            PolicyTag::TimeLenCtl => &self.time_len_ctl,
            PolicyTag::LoudnessCtl => &self.loudness_ctl,
        }
    }

    pub fn for_policy_mut(&mut self, tag: PolicyTag) -> &mut SearchSchedule {
        match tag {
            PolicyTag::TimeMask => &mut self.time_mask,
            PolicyTag::FreqMask => &mut self.freq_mask,
            PolicyTag::TimeWarp => &mut self.time_warp,
            PolicyTag::FreqWarp => &mut self.freq_warp,
            PolicyTag::TimeLenCtl => &mut self.time_len_ctl,
            PolicyTag::LoudnessCtl => &mut self.loudness_ctl,
        }
    }
}

/// The maximum deformation ratio D_p of a parameter choice:
/// width*count normalized by mean frames (time mask) or bins (frequency
/// mask), the warp distance normalized by bins (frequency warp), and the
/// fraction itself for the fractional policies.
pub fn deformation_ratio(params: &PolicyParams, stats: &DatasetStats) -> f64 {
    match *params {
        PolicyParams::TimeMask { max_width, repeats } => {
            (max_width * repeats) as f64 / stats.mean_tau
        }
        PolicyParams::FreqMask { max_width, repeats } => {
            (max_width * repeats) as f64 / stats.nu as f64
        }
        PolicyParams::TimeWarp { max_shift } => max_shift,
        PolicyParams::FreqWarp { max_shift } => max_shift as f64 / stats.nu as f64,
        PolicyParams::TimeLenCtl { max_stretch } => max_stretch,
        PolicyParams::LoudnessCtl { max_drop } => max_drop,
    }
}

/// The DPD ratio d_p / |e_p - e_o|; flagged infinite when e_p equals e_o.
pub fn dpd(d_p: f64, e_p: f64, e_o: f64) -> Result<Dpd, SearchError> {
    if d_p < 0.0 || e_p < 0.0 || e_o < 0.0 {
        return Err(SearchError::NegativeInput(format!(
            "d_p {d_p}, e_p {e_p}, e_o {e_o}"
        )));
    }
    let delta = (e_p - e_o).abs();
    if delta > 0.0 {
        Ok(Dpd::Finite(d_p / delta))
    } else {
        Ok(Dpd::Infinite)
    }
}

/// Quantize to three decimals (the report convention).
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn build_record(
    params: PolicyParams,
    e_p_raw: f64,
    e_o_raw: f64,
    stats: &DatasetStats,
) -> Result<DpdRecord, SearchError> {
    let d_p = round3(deformation_ratio(&params, stats));
    let e_p = round3(e_p_raw);
    let e_o = round3(e_o_raw);
    let ratio = dpd(d_p, e_p, e_o)?;
    Ok(DpdRecord {
        policy: params.tag(),
        params,
        d_p,
        e_p,
        e_o,
        dpd: ratio,
        selected: false,
    })
}

/// Index of the best record: infinite DPD beats finite, then larger DPD,
/// then larger D_p; remaining ties keep the earliest record.
pub fn choose_best(records: &[DpdRecord]) -> usize {
    let rank = |r: &DpdRecord| -> (u8, f64, f64) {
        match r.dpd {
            Dpd::Infinite => (1, f64::INFINITY, r.d_p),
            Dpd::Finite(v) => (0, v, r.d_p),
        }
    };
    let mut best = 0;
    for i in 1..records.len() {
        if rank(&records[i]) > rank(&records[best]) {
            best = i;
        }
    }
    best
}

/// One per-trial CER.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialCer {
    pub utt_id: String,
    pub repeat: usize,
    pub cer: f64,
}

/// Outcome of estimating E_o or E_p: the mean over trials plus the trials
/// themselves and any per-trial exclusions.
#[derive(Debug, Clone, PartialEq)]
pub struct EpEstimate {
    pub mean: f64,
    pub trials: Vec<TrialCer>,
    pub excluded: Vec<String>,
}

/// Mean CER with a fixed reduction order: trials are sorted by
/// (utterance id, repeat) before summation, so the result does not depend
/// on evaluation or thread order.
fn aggregate(mut trials: Vec<TrialCer>, excluded: Vec<String>) -> Result<EpEstimate, SearchError> {
    if trials.is_empty() {
        return Err(SearchError::AllFailed(
            excluded
                .first()
                .cloned()
                .unwrap_or_else(|| "no trials".into()),
        ));
    }
    trials.sort_by(|a, b| (a.utt_id.as_str(), a.repeat).cmp(&(b.utt_id.as_str(), b.repeat)));
    let sum: f64 = trials.iter().map(|t| t.cer).sum();
    Ok(EpEstimate {
        mean: sum / trials.len() as f64,
        trials,
        excluded,
    })
}

/// Source of E_o / E_p estimates. The live pipeline and the offline
/// measurement table both implement this, so the search logic is identical
/// in both modes.
pub trait EpEstimator: Sync {
    /// Mean CER of the unaugmented decode-and-transcribe pipeline.
    fn baseline(&self) -> Result<EpEstimate, SearchError>;
    /// Mean CER under `params`; `param_index` keys the RNG substreams and
    /// request keys.
    fn estimate(
        &self,
        params: &PolicyParams,
        param_index: usize,
    ) -> Result<EpEstimate, SearchError>;
}

enum Trial {
    Scored(TrialCer),
    /// Transcriber failure: dropped from the mean and reported, never
    /// counted as a CER of 1.
    Excluded(String),
}

/// Live estimator: extract mel once per utterance, then per trial apply the
/// policy, Griffin-Lim decode, transcribe and score CER against the
/// manifest transcript.
pub struct PipelineEstimator<'a> {
    items: Vec<PipelineItem>,
    gl_iterations: usize,
    repeats: usize,
    seed: AugSeed,
    transcriber: &'a dyn Transcriber,
    /// Evaluate trials on the rayon pool. Results are bit-identical either
    /// way: substreams are keyed and the aggregation order is fixed.
    pub parallel: bool,
}

struct PipelineItem {
    utt_id: String,
    mel: MelSpectrogram,
    reference: Transcript,
}

impl<'a> PipelineEstimator<'a> {
    pub fn from_manifest(
        entries: &[ManifestEntry],
        cfg: &MelConfig,
        gl_iterations: usize,
        repeats: usize,
        seed: AugSeed,
        transcriber: &'a dyn Transcriber,
    ) -> Result<(Self, DatasetStats), SearchError> {
        if entries.is_empty() {
            return Err(SearchError::EmptyMeasurements);
        }
        if repeats == 0 {
            return Err(SearchError::InvalidSchedule("repeats must be >= 1".into()));
        }
        let mut items = Vec::with_capacity(entries.len());
        let mut tau_sum = 0usize;
        for e in entries {
            let wav = load_wav(&e.audio_path)?;
            let mel = extract_mel(&wav, cfg)?;
            tau_sum += mel.tau();
            items.push(PipelineItem {
                utt_id: e.utt_id.clone(),
                mel,
                reference: Transcript::new(e.utt_id.clone(), &e.transcript),
            });
        }
        let stats = DatasetStats {
            mean_tau: tau_sum as f64 / items.len() as f64,
            nu: cfg.n_mels,
            utterance_count: items.len(),
        };
        Ok((
            PipelineEstimator {
                items,
                gl_iterations,
                repeats,
                seed,
                transcriber,
                parallel: false,
            },
            stats,
        ))
    }

    fn score(
        &self,
        item: &PipelineItem,
        mel: &MelSpectrogram,
        key: &str,
        repeat: usize,
    ) -> Result<Trial, SearchError> {
        let audio = griffin_lim(mel, self.gl_iterations)?;
        match self.transcriber.transcribe(&audio, key) {
            Ok(hyp) => Ok(Trial::Scored(TrialCer {
                utt_id: item.utt_id.clone(),
                repeat,
                cer: cer(&hyp, &item.reference)?,
            })),
            Err(e) => Ok(Trial::Excluded(format!("{key}: {e}"))),
        }
    }

    fn run_trials<F>(&self, jobs: Vec<(usize, usize)>, eval: F) -> Result<EpEstimate, SearchError>
    where
        F: Fn(&PipelineItem, usize) -> Result<Trial, SearchError> + Sync,
    {
        let results: Vec<Result<Trial, SearchError>> = if self.parallel {
            jobs.par_iter()
                .map(|&(i, r)| eval(&self.items[i], r))
                .collect()
        } else {
            jobs.iter().map(|&(i, r)| eval(&self.items[i], r)).collect()
        };
        let mut trials = Vec::with_capacity(results.len());
        let mut excluded = Vec::new();
        for res in results {
            match res? {
                Trial::Scored(t) => trials.push(t),
                Trial::Excluded(msg) => excluded.push(msg),
            }
        }
        aggregate(trials, excluded)
    }
}

impl EpEstimator for PipelineEstimator<'_> {
    fn baseline(&self) -> Result<EpEstimate, SearchError> {
        let jobs: Vec<(usize, usize)> = (0..self.items.len()).map(|i| (i, 0)).collect();
        self.run_trials(jobs, |item, repeat| {
            self.score(item, &item.mel, &baseline_key(&item.utt_id), repeat)
        })
    }

    fn estimate(
        &self,
        params: &PolicyParams,
        param_index: usize,
    ) -> Result<EpEstimate, SearchError> {
        let tag = params.tag();
        let jobs: Vec<(usize, usize)> = (0..self.items.len())
            .flat_map(|i| (0..self.repeats).map(move |r| (i, r)))
            .collect();
        self.run_trials(jobs, move |item, repeat| {
            let sub = substream(self.seed, &item.utt_id, tag.as_str(), param_index, repeat);
            let augmented = apply(&item.mel, params, sub)?;
            let key = request_key(&item.utt_id, tag.as_str(), param_index, repeat);
            self.score(item, &augmented, &key, repeat)
        })
    }
}

/// Offline estimator backed by a measurements table, keyed by
/// (policy, param_repr).
pub struct TableEpEstimator {
    baseline: Vec<TrialCer>,
    by_param: HashMap<(PolicyTag, String), Vec<TrialCer>>,
}

impl TableEpEstimator {
    pub fn from_measurements(rows: &[MeasurementRow]) -> Result<Self, SearchError> {
        if rows.is_empty() {
            return Err(SearchError::EmptyMeasurements);
        }
        let mut baseline = Vec::new();
        let mut by_param: HashMap<(PolicyTag, String), Vec<TrialCer>> = HashMap::new();
        for row in rows {
            let trial = TrialCer {
                utt_id: row.utt_id.clone(),
                repeat: row.repeat,
                cer: row.cer,
            };
            if row.policy == "baseline" {
                baseline.push(trial);
            } else {
                let tag = PolicyTag::parse(&row.policy)
                    .ok_or_else(|| SearchError::UnknownPolicy(row.policy.clone()))?;
                by_param
                    .entry((tag, row.param_repr.clone()))
                    .or_default()
                    .push(trial);
            }
        }
        if baseline.is_empty() {
            return Err(SearchError::MissingBaseline);
        }
        Ok(TableEpEstimator { baseline, by_param })
    }
}

impl EpEstimator for TableEpEstimator {
    fn baseline(&self) -> Result<EpEstimate, SearchError> {
        aggregate(self.baseline.clone(), Vec::new())
    }

    fn estimate(
        &self,
        params: &PolicyParams,
        _param_index: usize,
    ) -> Result<EpEstimate, SearchError> {
        let key = (params.tag(), params.repr());
        match self.by_param.get(&key) {
            Some(trials) => aggregate(trials.clone(), Vec::new()),
            None => Err(SearchError::MissingMeasurement {
                policy: key.0.as_str().to_string(),
                repr: key.1,
            }),
        }
    }
}

/// Mean CER of the unaugmented pipeline over a manifest.
pub fn estimate_e_o(
    entries: &[ManifestEntry],
    cfg: &MelConfig,
    transcriber: &dyn Transcriber,
    gl_iterations: usize,
) -> Result<EpEstimate, SearchError> {
    let (est, _) =
        PipelineEstimator::from_manifest(entries, cfg, gl_iterations, 1, AugSeed(0), transcriber)?;
    est.baseline()
}

/// Mean CER under one policy parameter, `repeats` trials per utterance.
pub fn estimate_e_p(
    entries: &[ManifestEntry],
    cfg: &MelConfig,
    params: &PolicyParams,
    repeats: usize,
    transcriber: &dyn Transcriber,
    seed: AugSeed,
    gl_iterations: usize,
) -> Result<EpEstimate, SearchError> {
    let (est, _) =
        PipelineEstimator::from_manifest(entries, cfg, gl_iterations, repeats, seed, transcriber)?;
    est.estimate(params, 0)
}

/// Map a schedule value to policy parameters; masking policies take the
/// rounded value as the width with a single repeat.
pub fn params_for_value(tag: PolicyTag, value: f64) -> Result<PolicyParams, SearchError> {
    if !value.is_finite() || value < 0.0 {
        return Err(SearchError::InvalidSchedule(format!(
            "schedule value {value} for {tag}"
        )));
    }
    let params = match tag {
        PolicyTag::TimeWarp => PolicyParams::TimeWarp { max_shift: value },
        PolicyTag::FreqWarp => PolicyParams::FreqWarp {
            max_shift: value.round() as usize,
        },
        PolicyTag::TimeLenCtl => PolicyParams::TimeLenCtl { max_stretch: value },
        PolicyTag::LoudnessCtl => PolicyParams::LoudnessCtl { max_drop: value },
        PolicyTag::TimeMask => PolicyParams::TimeMask {
            max_width: value.round() as usize,
            repeats: 1,
        },
        PolicyTag::FreqMask => PolicyParams::FreqMask {
            max_width: value.round() as usize,
            repeats: 1,
        },
    };
    params.validate()?;
    Ok(params)
}

/// Result of searching one policy (or one masking stage).
#[derive(Debug)]
pub struct PolicyOutcome {
    /// Records in schedule order, `selected` set on the winner.
    pub records: Vec<DpdRecord>,
    pub best: usize,
    pub measurements: Vec<MeasurementRow>,
    pub exclusions: Vec<String>,
}

/// Evaluate every schedule point for one policy and mark the DPD argmax.
pub fn search_policy(
    tag: PolicyTag,
    schedule: &SearchSchedule,
    estimator: &dyn EpEstimator,
    stats: &DatasetStats,
    e_o: f64,
) -> Result<PolicyOutcome, SearchError> {
    schedule.validate()?;
    let mut records = Vec::with_capacity(schedule.count);
    let mut measurements = Vec::new();
    let mut exclusions = Vec::new();
    for (index, value) in schedule.values().into_iter().enumerate() {
        let params = params_for_value(tag, value)?;
        let est = estimator.estimate(&params, index)?;
        push_rows(&mut measurements, tag, index, &params, &est);
        exclusions.extend(est.excluded);
        records.push(build_record(params, est.mean, e_o, stats)?);
    }
    let best = choose_best(&records);
    records[best].selected = true;
    Ok(PolicyOutcome {
        records,
        best,
        measurements,
        exclusions,
    })
}

/// Result of the two-stage masking search.
#[derive(Debug)]
pub struct TwoStageOutcome {
    /// Stage 1: widths from the schedule with a single repeat.
    pub stage1: Vec<DpdRecord>,
    /// Stage 2: one record per divisor-pair candidate, including the
    /// (width, 1) cell reused from stage 1.
    pub stage2: Vec<DpdRecord>,
    /// The stage-2 candidate set (width, count), width ascending.
    pub candidates: Vec<(usize, usize)>,
    /// Index into `stage2` of the record reused from stage 1.
    reused: Option<usize>,
    pub measurements: Vec<MeasurementRow>,
    pub exclusions: Vec<String>,
}

impl TwoStageOutcome {
    /// Report rows: stage-1 records followed by the stage-2 records that
    /// were actually re-estimated (the reused (width, 1) cell appears only
    /// once, in its stage-1 position).
    pub fn merged_records(&self) -> Vec<DpdRecord> {
        let mut all = self.stage1.clone();
        for (i, r) in self.stage2.iter().enumerate() {
            if Some(i) != self.reused {
                all.push(r.clone());
            }
        }
        all
    }

    /// The overall winner.
    pub fn best_record(&self) -> &DpdRecord {
        self.stage2
            .iter()
            .chain(self.stage1.iter())
            .find(|r| r.selected)
            .expect("two-stage outcome always marks a winner")
    }
}

/// Two-stage masking search: stage 1 fixes the repeat count at one and
/// finds the best width by DPD; stage 2 evaluates every integer
/// (width, count) pair whose product equals that width and the overall
/// argmax wins. The stage-1 winner's estimate is reused for its own
/// (width, 1) candidate rather than re-estimated.
pub fn search_masking_two_stage(
    tag: PolicyTag,
    stage1_schedule: &SearchSchedule,
    estimator: &dyn EpEstimator,
    stats: &DatasetStats,
    e_o: f64,
) -> Result<TwoStageOutcome, SearchError> {
    if !matches!(tag, PolicyTag::TimeMask | PolicyTag::FreqMask) {
        return Err(SearchError::InvalidSchedule(format!(
            "two-stage search applies to masking policies, not {tag}"
        )));
    }
    let stage1_run = search_policy(tag, stage1_schedule, estimator, stats, e_o)?;
    let mut stage1 = stage1_run.records;
    let stage1_best = stage1_run.best;
    stage1[stage1_best].selected = false; // the overall winner is decided below
    let best_width = match stage1[stage1_best].params {
        PolicyParams::TimeMask { max_width, .. } | PolicyParams::FreqMask { max_width, .. } => {
            max_width
        }
        _ => unreachable!("stage 1 searched a masking policy"),
    };

    let candidates: Vec<(usize, usize)> = if best_width == 0 {
        vec![(0, 1)]
    } else {
        (1..=best_width)
            .filter(|d| best_width % d == 0)
            .map(|d| (d, best_width / d))
            .collect()
    };

    let mut measurements = stage1_run.measurements;
    let mut exclusions = stage1_run.exclusions;
    let mut stage2 = Vec::with_capacity(candidates.len());
    let mut reused = None;
    for (index, &(width, count)) in candidates.iter().enumerate() {
        if count == 1 {
            reused = Some(index);
            stage2.push(stage1[stage1_best].clone());
            continue;
        }
        let params = match tag {
            PolicyTag::TimeMask => PolicyParams::TimeMask {
                max_width: width,
                repeats: count,
            },
            _ => PolicyParams::FreqMask {
                max_width: width,
                repeats: count,
            },
        };
        // param indices continue past stage 1 so substreams and request
        // keys stay distinct
        let param_index = stage1_schedule.count + index;
        let est = estimator.estimate(&params, param_index)?;
        push_rows(&mut measurements, tag, param_index, &params, &est);
        exclusions.extend(est.excluded);
        stage2.push(build_record(params, est.mean, e_o, stats)?);
    }

    // overall winner over the merged rows; flag every instance of it
    let merged: Vec<DpdRecord> = {
        let mut all = stage1.clone();
        for (i, r) in stage2.iter().enumerate() {
            if Some(i) != reused {
                all.push(r.clone());
            }
        }
        all
    };
    let winner = merged[choose_best(&merged)].params.clone();
    for r in stage1.iter_mut().chain(stage2.iter_mut()) {
        r.selected = r.params == winner;
    }

    Ok(TwoStageOutcome {
        stage1,
        stage2,
        candidates,
        reused,
        measurements,
        exclusions,
    })
}

fn push_rows(
    measurements: &mut Vec<MeasurementRow>,
    tag: PolicyTag,
    param_index: usize,
    params: &PolicyParams,
    est: &EpEstimate,
) {
    let repr = params.repr();
    for t in &est.trials {
        measurements.push(MeasurementRow {
            policy: tag.as_str().to_string(),
            param_index,
            param_repr: repr.clone(),
            utt_id: t.utt_id.clone(),
            repeat: t.repeat,
            cer: t.cer,
        });
    }
}

/// Recompute a DPD table from raw measurements: trials are averaged per
/// (policy, parameter), D_p comes from the parameter and the dataset
/// stats, and the per-policy argmax is flagged selected. Record order
/// follows first appearance in the file.
pub fn dpd_table_from_measurements(
    rows: &[MeasurementRow],
    stats: &DatasetStats,
) -> Result<Vec<DpdRecord>, SearchError> {
    if rows.is_empty() {
        return Err(SearchError::EmptyMeasurements);
    }
    let mut baseline = Vec::new();
    let mut order: Vec<(PolicyTag, String)> = Vec::new();
    let mut groups: HashMap<(PolicyTag, String), Vec<TrialCer>> = HashMap::new();
    for row in rows {
        let trial = TrialCer {
            utt_id: row.utt_id.clone(),
            repeat: row.repeat,
            cer: row.cer,
        };
        if row.policy == "baseline" {
            baseline.push(trial);
            continue;
        }
        let tag = PolicyTag::parse(&row.policy)
            .ok_or_else(|| SearchError::UnknownPolicy(row.policy.clone()))?;
        let key = (tag, row.param_repr.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(trial);
    }
    if baseline.is_empty() {
        return Err(SearchError::MissingBaseline);
    }
    if order.is_empty() {
        return Err(SearchError::EmptyMeasurements);
    }
    let e_o = aggregate(baseline, Vec::new())?.mean;

    let mut records = Vec::with_capacity(order.len());
    for (tag, repr) in &order {
        let params = PolicyParams::parse(*tag, repr).map_err(|e| SearchError::BadParamRepr {
            policy: tag.as_str().to_string(),
            repr: repr.clone(),
            msg: e.to_string(),
        })?;
        let est = aggregate(groups[&(*tag, repr.clone())].clone(), Vec::new())?;
        records.push(build_record(params, est.mean, e_o, stats)?);
    }

    for tag in PolicyTag::ALL {
        let idx: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].policy == tag)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let group: Vec<DpdRecord> = idx.iter().map(|&i| records[i].clone()).collect();
        let winner_params = group[choose_best(&group)].params.clone();
        for &i in &idx {
            records[i].selected = records[i].params == winner_params;
        }
    }
    Ok(records)
}

/// A full search over several policies: masking policies run the two-stage
/// search, the rest a plain schedule sweep.
#[derive(Debug)]
pub struct SearchRun {
    /// All report rows in policy order (stage-1 rows before stage-2 rows
    /// for the masking policies).
    pub records: Vec<DpdRecord>,
    /// Raw per-trial measurements, baseline rows first.
    pub measurements: Vec<MeasurementRow>,
    pub exclusions: Vec<String>,
    /// Unrounded baseline mean CER.
    pub e_o: f64,
}

pub fn run_dpd_search(
    tags: &[PolicyTag],
    schedules: &Schedules,
    estimator: &dyn EpEstimator,
    stats: &DatasetStats,
) -> Result<SearchRun, SearchError> {
    let base = estimator.baseline()?;
    let mut measurements: Vec<MeasurementRow> = base
        .trials
        .iter()
        .map(|t| MeasurementRow {
            policy: "baseline".into(),
            param_index: 0,
            param_repr: "-".into(),
            utt_id: t.utt_id.clone(),
            repeat: t.repeat,
            cer: t.cer,
        })
        .collect();
    let mut exclusions = base.excluded.clone();
    let mut records = Vec::new();
    for &tag in tags {
        let schedule = schedules.for_policy(tag);
        match tag {
            PolicyTag::TimeMask | PolicyTag::FreqMask => {
                let out = search_masking_two_stage(tag, schedule, estimator, stats, base.mean)?;
                records.extend(out.merged_records());
                measurements.extend(out.measurements);
                exclusions.extend(out.exclusions);
            }
            _ => {
                let out = search_policy(tag, schedule, estimator, stats, base.mean)?;
                records.extend(out.records);
                measurements.extend(out.measurements);
                exclusions.extend(out.exclusions);
            }
        }
    }
    Ok(SearchRun {
        records,
        measurements,
        exclusions,
        e_o: base.mean,
    })
}
