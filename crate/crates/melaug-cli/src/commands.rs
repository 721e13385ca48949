//! Command implementations. Exit-code contract: usage and parameter
//! problems map to 2, runtime failures (I/O, format, service) to 1.

use std::io::Write;
use std::path::{Path, PathBuf};

use melaug::asr::make_transcriber;
use melaug::augment::{apply, time_len_ctl_pair, AugSeed, AugmentError, PolicyParams, PolicyTag};
use melaug::manifest::parse_manifest;
use melaug::metrics::{cer, mcd, mel_to_mcep, wer, Transcript};
use melaug::search::{
    dpd_table_from_measurements, measurements_to_string, read_measurements, report_to_string,
    run_dpd_search, DatasetStats, PipelineEstimator,
};
use melaug::signal::{extract_mel, griffin_lim, load_wav, mels_to_bytes, read_mels, wav_to_bytes};

use crate::config::ToolConfig;

pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }
}

/// Write through a temp file in the target directory and rename, so
/// concurrent invocations never observe partial output.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| {
        CliError::runtime(format!("cannot create temp file in {}: {e}", dir.display()))
    })?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::runtime(format!("write failed: {e}")))?;
    tmp.persist(path)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn cmd_extract(input: &Path, out: &Path, cfg: &ToolConfig) -> Result<(), CliError> {
    let wav =
        load_wav(input).map_err(|e| CliError::runtime(format!("{}: {e}", input.display())))?;
    let mel = extract_mel(&wav, &cfg.extraction).map_err(CliError::runtime)?;
    write_atomic(out, &mels_to_bytes(&mel))?;
    println!("frames\t{}", mel.tau());
    println!("mel_bins\t{}", mel.nu());
    Ok(())
}

pub fn cmd_augment(
    policy: &str,
    param: &str,
    seed: u64,
    input: &Path,
    out: &Path,
    pair_in: Option<&Path>,
    pair_out: Option<&Path>,
) -> Result<(), CliError> {
    let tag = PolicyTag::parse(policy).ok_or_else(|| {
        CliError::usage(format!("unknown policy '{policy}' (tm|fm|tw|fw|tlc|lc)"))
    })?;
    let params = PolicyParams::parse(tag, param).map_err(|e| CliError::usage(e.to_string()))?;
    let mel = read_mels(input).map_err(CliError::runtime)?;

    match (pair_in, pair_out) {
        (None, None) => {
            let augmented = apply(&mel, &params, AugSeed(seed)).map_err(map_augment)?;
            write_atomic(out, &mels_to_bytes(&augmented))?;
        }
        (Some(pin), Some(pout)) => {
            let max_stretch = match params {
                PolicyParams::TimeLenCtl { max_stretch } => max_stretch,
                _ => {
                    return Err(CliError::usage(
                        "--pair-in/--pair-out apply to --policy tlc only",
                    ))
                }
            };
            let pair_mel = read_mels(pin).map_err(CliError::runtime)?;
            let (a, b) = time_len_ctl_pair(&mel, &pair_mel, max_stretch, AugSeed(seed))
                .map_err(map_augment)?;
            write_atomic(out, &mels_to_bytes(&a))?;
            write_atomic(pout, &mels_to_bytes(&b))?;
        }
        _ => {
            return Err(CliError::usage(
                "--pair-in and --pair-out must be given together",
            ))
        }
    }
    Ok(())
}

fn map_augment(e: AugmentError) -> CliError {
    match e {
        AugmentError::ParamOutOfRange(_) | AugmentError::BadParam(..) => {
            CliError::usage(e.to_string())
        }
        AugmentError::InputTooShort(_) => CliError::runtime(e),
    }
}

pub fn cmd_invert(
    input: &Path,
    out: &Path,
    iters: Option<usize>,
    cfg: &ToolConfig,
) -> Result<(), CliError> {
    let mel = read_mels(input).map_err(CliError::runtime)?;
    let iterations = iters.unwrap_or(cfg.gl_iterations);
    if iterations == 0 {
        return Err(CliError::usage("--iters must be >= 1"));
    }
    let wav = griffin_lim(&mel, iterations).map_err(CliError::runtime)?;
    write_atomic(out, &wav_to_bytes(&wav))?;
    Ok(())
}

pub fn cmd_stats(manifest: &Path, cfg: &ToolConfig) -> Result<(), CliError> {
    let entries = parse_manifest(manifest).map_err(CliError::runtime)?;
    let mut frames = Vec::new();
    let mut failed = Vec::new();
    for e in &entries {
        match load_wav(&e.audio_path) {
            Ok(w) if w.sample_rate != cfg.extraction.sample_rate => failed.push(format!(
                "{}: sample rate {} does not match configured {}",
                e.utt_id, w.sample_rate, cfg.extraction.sample_rate
            )),
            Ok(w) => {
                let tau = cfg.extraction.frames_for_len(w.samples.len());
                if tau == 0 {
                    failed.push(format!("{}: audio shorter than one frame", e.utt_id));
                } else {
                    frames.push(tau);
                }
            }
            Err(err) => failed.push(format!("{}: {err}", e.utt_id)),
        }
    }
    for f in &failed {
        eprintln!("skipped {f}");
    }
    if frames.is_empty() {
        return Err(CliError::runtime("no readable utterances in manifest"));
    }
    let mean = frames.iter().sum::<usize>() as f64 / frames.len() as f64;
    println!("utterances\t{}", frames.len());
    println!("mean_frames\t{mean:.1}");
    println!("mel_bins\t{}", cfg.extraction.n_mels);
    Ok(())
}

pub struct DpdSearchArgs {
    pub manifest: Option<PathBuf>,
    pub policy: String,
    pub out_report: PathBuf,
    pub measurements_in: Option<PathBuf>,
    pub measurements_out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mean_tau: Option<f64>,
    pub nu: Option<usize>,
    pub parallel: bool,
}

pub fn cmd_dpd_search(args: &DpdSearchArgs, cfg: &ToolConfig) -> Result<(), CliError> {
    let tags: Vec<PolicyTag> = if args.policy == "all" {
        PolicyTag::ALL.to_vec()
    } else {
        vec![PolicyTag::parse(&args.policy).ok_or_else(|| {
            CliError::usage(format!(
                "unknown policy '{}' (all|tm|fm|tw|fw|tlc|lc)",
                args.policy
            ))
        })?]
    };

    if let Some(measurements) = &args.measurements_in {
        // offline: recompute the table from recorded trials
        let mean_tau = args.mean_tau.ok_or_else(|| {
            CliError::usage("offline mode (--measurements-in) requires --mean-tau")
        })?;
        let rows = read_measurements(measurements).map_err(CliError::runtime)?;
        let utterances: std::collections::HashSet<&str> =
            rows.iter().map(|r| r.utt_id.as_str()).collect();
        let stats = DatasetStats {
            mean_tau,
            nu: args.nu.unwrap_or(cfg.extraction.n_mels),
            utterance_count: utterances.len(),
        };
        let mut records = dpd_table_from_measurements(&rows, &stats).map_err(CliError::runtime)?;
        if args.policy != "all" {
            records.retain(|r| tags.contains(&r.policy));
            if records.is_empty() {
                return Err(CliError::runtime(format!(
                    "no rows for policy '{}' in {}",
                    args.policy,
                    measurements.display()
                )));
            }
        }
        write_atomic(&args.out_report, report_to_string(&records).as_bytes())?;
        if let Some(out) = &args.measurements_out {
            write_atomic(out, measurements_to_string(&rows).as_bytes())?;
        }
        eprintln!("report: {} rows", records.len());
        return Ok(());
    }

    // live mode
    let manifest = args
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::usage("live mode requires --manifest"))?;
    let transcriber_cfg = cfg.transcriber.as_ref().ok_or_else(|| {
        CliError::usage("live mode needs a transcriber: set transcriber.* keys in the config")
    })?;
    let seed = args
        .seed
        .or(cfg.seed)
        .ok_or_else(|| CliError::usage("live mode requires --seed (or 'seed' in the config)"))?;

    let entries = parse_manifest(manifest).map_err(CliError::runtime)?;
    let transcriber = make_transcriber(transcriber_cfg).map_err(CliError::runtime)?;
    let (mut estimator, stats) = PipelineEstimator::from_manifest(
        &entries,
        &cfg.extraction,
        cfg.gl_iterations,
        cfg.repeats,
        AugSeed(seed),
        transcriber.as_ref(),
    )
    .map_err(CliError::runtime)?;
    estimator.parallel = args.parallel;

    let run =
        run_dpd_search(&tags, &cfg.schedules, &estimator, &stats).map_err(CliError::runtime)?;
    write_atomic(&args.out_report, report_to_string(&run.records).as_bytes())?;
    if let Some(out) = &args.measurements_out {
        write_atomic(out, measurements_to_string(&run.measurements).as_bytes())?;
    }
    if !run.exclusions.is_empty() {
        let log = args.out_report.with_extension("exclusions.log");
        write_atomic(&log, (run.exclusions.join("\n") + "\n").as_bytes())?;
        eprintln!(
            "warning: {} trial(s) excluded; see {}",
            run.exclusions.len(),
            log.display()
        );
    }
    eprintln!(
        "searched {} utterances (mean_frames {:.1}), e_o {:.4}, {} report rows",
        stats.utterance_count,
        stats.mean_tau,
        run.e_o,
        run.records.len()
    );
    Ok(())
}

pub fn cmd_metrics_cer(hyp: &Path, reference: &Path, word_level: bool) -> Result<(), CliError> {
    let read = |p: &Path| {
        std::fs::read_to_string(p)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", p.display())))
    };
    let hyp_t = Transcript::new("hyp", &read(hyp)?);
    let ref_t = Transcript::new("ref", &read(reference)?);
    let value = if word_level {
        wer(&hyp_t, &ref_t)
    } else {
        cer(&hyp_t, &ref_t)
    }
    .map_err(|e| CliError::usage(e.to_string()))?;
    println!("{value:.3}");
    Ok(())
}

pub fn cmd_metrics_mcd(
    a: &Path,
    b: &Path,
    order: Option<usize>,
    cfg: &ToolConfig,
) -> Result<(), CliError> {
    let order = order.unwrap_or(cfg.mcd_order);
    let load =
        |p: &Path| read_mels(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())));
    let ma = load(a)?;
    let mb = load(b)?;
    let xa = mel_to_mcep(&ma, order).map_err(|e| CliError::usage(e.to_string()))?;
    let xb = mel_to_mcep(&mb, order).map_err(|e| CliError::usage(e.to_string()))?;
    let value = mcd(&xa, &xb).map_err(|e| CliError::usage(e.to_string()))?;
    println!("{value:.3}");
    Ok(())
}
