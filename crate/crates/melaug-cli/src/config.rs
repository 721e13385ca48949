//! Flat key-value tool configuration.
//!
//! Format: one `key = value` per line, `#` comments, dotted keys for
//! sections (e.g. `schedule.tw.start = 0.02`). Every key has a default;
//! unknown keys are rejected so typos surface instead of silently using a
//! default.

use std::path::Path;
use std::time::Duration;

use melaug::asr::{TranscriberBackend, TranscriberConfig};
use melaug::augment::PolicyTag;
use melaug::search::{ScheduleKind, Schedules, DEFAULT_GL_ITERATIONS, DEFAULT_REPEATS};
use melaug::signal::MelConfig;

#[derive(Debug, Clone)]
pub struct ToolConfig {
    pub extraction: MelConfig,
    pub gl_iterations: usize,
    pub repeats: usize,
    pub seed: Option<u64>,
    pub mcd_order: usize,
    pub schedules: Schedules,
    pub transcriber: Option<TranscriberConfig>,
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            extraction: MelConfig::default(),
            gl_iterations: DEFAULT_GL_ITERATIONS,
            repeats: DEFAULT_REPEATS,
            seed: None,
            mcd_order: 13,
            schedules: Schedules::default(),
            transcriber: None,
        }
    }
}

/// Transcriber settings accumulate across keys and are assembled at the end.
#[derive(Default)]
struct TranscriberDraft {
    backend: Option<String>,
    endpoint: Option<String>,
    fixture_dir: Option<String>,
    timeout_secs: Option<f64>,
    retries: Option<u32>,
    language_hint: Option<String>,
    max_in_flight: Option<usize>,
}

pub fn load_config(path: &Path) -> Result<ToolConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ToolConfig, String> {
    let mut cfg = ToolConfig::default();
    let mut draft = TranscriberDraft::default();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| format!("line {line}: expected 'key = value'"))?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut cfg, &mut draft, key, value).map_err(|msg| format!("line {line}: {msg}"))?;
    }

    if let Some(backend) = &draft.backend {
        let backend = match backend.as_str() {
            "fixture" => TranscriberBackend::Fixture {
                dir: draft
                    .fixture_dir
                    .clone()
                    .ok_or("transcriber.backend = fixture needs transcriber.fixture_dir")?
                    .into(),
            },
            "remote" => TranscriberBackend::Remote {
                endpoint: draft
                    .endpoint
                    .clone()
                    .ok_or("transcriber.backend = remote needs transcriber.endpoint")?,
            },
            other => return Err(format!("unknown transcriber.backend '{other}'")),
        };
        let mut t = TranscriberConfig {
            backend,
            timeout: Duration::from_secs(30),
            retries: 3,
            language_hint: draft.language_hint.clone(),
            max_in_flight: 4,
        };
        if let Some(secs) = draft.timeout_secs {
            if secs <= 0.0 {
                return Err("transcriber.timeout_secs must be positive".into());
            }
            t.timeout = Duration::from_secs_f64(secs);
        }
        if let Some(r) = draft.retries {
            t.retries = r;
        }
        if let Some(m) = draft.max_in_flight {
            t.max_in_flight = m;
        }
        t.validate().map_err(|e| e.to_string())?;
        cfg.transcriber = Some(t);
    } else if draft.endpoint.is_some() || draft.fixture_dir.is_some() {
        return Err("transcriber keys set without transcriber.backend".into());
    }

    Ok(cfg)
}

fn apply_key(
    cfg: &mut ToolConfig,
    draft: &mut TranscriberDraft,
    key: &str,
    value: &str,
) -> Result<(), String> {
    let parse_usize = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| format!("'{v}' is not an integer"))
    };
    let parse_f64 = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| format!("'{v}' is not a number"))
    };

    match key {
        "extraction.sample_rate" => {
            cfg.extraction.sample_rate = value
                .parse::<u32>()
                .map_err(|_| format!("'{value}' is not a sample rate"))?
        }
        "extraction.n_fft" => cfg.extraction.n_fft = parse_usize(value)?,
        "extraction.hop" => cfg.extraction.hop = parse_usize(value)?,
        "extraction.n_mels" => cfg.extraction.n_mels = parse_usize(value)?,
        "extraction.fmin" => cfg.extraction.fmin = parse_f64(value)?,
        "extraction.fmax" => cfg.extraction.fmax = parse_f64(value)?,
        "extraction.log_floor" => cfg.extraction.log_floor = parse_f64(value)?,
        "griffin_lim.iterations" => cfg.gl_iterations = parse_usize(value)?,
        "repeats" => cfg.repeats = parse_usize(value)?,
        "seed" => {
            cfg.seed = Some(
                value
                    .parse::<u64>()
                    .map_err(|_| format!("'{value}' is not a 64-bit seed"))?,
            )
        }
        "mcd.order" => cfg.mcd_order = parse_usize(value)?,
        "transcriber.backend" => draft.backend = Some(value.to_string()),
        "transcriber.endpoint" => draft.endpoint = Some(value.to_string()),
        "transcriber.fixture_dir" => draft.fixture_dir = Some(value.to_string()),
        "transcriber.timeout_secs" => draft.timeout_secs = Some(parse_f64(value)?),
        "transcriber.retries" => {
            draft.retries = Some(
                value
                    .parse::<u32>()
                    .map_err(|_| format!("'{value}' is not a retry count"))?,
            )
        }
        "transcriber.language_hint" => draft.language_hint = Some(value.to_string()),
        "transcriber.max_in_flight" => draft.max_in_flight = Some(parse_usize(value)?),
        _ => {
            if let Some(rest) = key.strip_prefix("schedule.") {
                return apply_schedule_key(cfg, rest, value);
            }
            return Err(format!("unknown key '{key}'"));
        }
    }
    Ok(())
}

fn apply_schedule_key(cfg: &mut ToolConfig, rest: &str, value: &str) -> Result<(), String> {
    let (tag_str, field) = rest
        .split_once('.')
        .ok_or_else(|| format!("schedule key 'schedule.{rest}' needs a policy and a field"))?;
    let tag = PolicyTag::parse(tag_str)
        .ok_or_else(|| format!("unknown policy '{tag_str}' in schedule key"))?;
    let schedule = cfg.schedules.for_policy_mut(tag);
    match field {
        "kind" => {
            schedule.kind = match value {
                "arithmetic" => ScheduleKind::Arithmetic,
                "geometric" => ScheduleKind::Geometric,
                other => return Err(format!("unknown schedule kind '{other}'")),
            }
        }
        "start" => {
            schedule.start = value
                .parse::<f64>()
                .map_err(|_| format!("'{value}' is not a number"))?
        }
        "step" | "ratio" => {
            schedule.step_or_ratio = value
                .parse::<f64>()
                .map_err(|_| format!("'{value}' is not a number"))?
        }
        "count" => {
            schedule.count = value
                .parse::<usize>()
                .map_err(|_| format!("'{value}' is not an integer"))?
        }
        other => return Err(format!("unknown schedule field '{other}'")),
    }
    Ok(())
}
