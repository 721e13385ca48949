//! TSV formats for the search: raw per-trial measurements and the DPD
//! report.
//!
//! Measurements: header `policy param_index param_repr utt_id repeat cer`
//! (tab-separated, required), one row per transcribed trial; `#` lines are
//! ignored. Baseline trials use policy `baseline` with param_repr `-`.
//!
//! Report: header `policy param_repr d_p e_p e_o dpd selected infinite_flag`;
//! d_p/e_p/e_o carry three decimals, dpd prints `inf` when the flag is set.

use std::fs;
use std::path::Path;

use super::{Dpd, DpdRecord, SearchError};

/// One transcribed trial: the CER of one utterance under one policy
/// parameter and repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRow {
    /// Policy tag, or "baseline" for unaugmented trials.
    pub policy: String,
    pub param_index: usize,
    pub param_repr: String,
    pub utt_id: String,
    pub repeat: usize,
    pub cer: f64,
}

pub const MEASUREMENTS_HEADER: &str = "policy\tparam_index\tparam_repr\tutt_id\trepeat\tcer";
pub const REPORT_HEADER: &str = "policy\tparam_repr\td_p\te_p\te_o\tdpd\tselected\tinfinite_flag";

pub fn measurements_to_string(rows: &[MeasurementRow]) -> String {
    let mut out = String::from(MEASUREMENTS_HEADER);
    out.push('\n');
    for r in rows {
        // `{}` prints the shortest representation that round-trips exactly
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.policy, r.param_index, r.param_repr, r.utt_id, r.repeat, r.cer
        ));
    }
    out
}

pub fn write_measurements(rows: &[MeasurementRow], path: &Path) -> Result<(), SearchError> {
    fs::write(path, measurements_to_string(rows))?;
    Ok(())
}

pub fn parse_measurements_str(text: &str) -> Result<Vec<MeasurementRow>, SearchError> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        if !header_seen {
            if raw.trim_end() != MEASUREMENTS_HEADER {
                return Err(SearchError::MeasurementsParse {
                    line,
                    msg: format!("expected header '{MEASUREMENTS_HEADER}'"),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 6 {
            return Err(SearchError::MeasurementsParse {
                line,
                msg: format!("expected 6 tab-separated fields, got {}", fields.len()),
            });
        }
        let param_index =
            fields[1]
                .trim()
                .parse::<usize>()
                .map_err(|_| SearchError::MeasurementsParse {
                    line,
                    msg: format!("bad param_index '{}'", fields[1]),
                })?;
        let repeat =
            fields[4]
                .trim()
                .parse::<usize>()
                .map_err(|_| SearchError::MeasurementsParse {
                    line,
                    msg: format!("bad repeat '{}'", fields[4]),
                })?;
        let cer = fields[5]
            .trim()
            .parse::<f64>()
            .map_err(|_| SearchError::MeasurementsParse {
                line,
                msg: format!("bad cer '{}'", fields[5]),
            })?;
        if !cer.is_finite() || cer < 0.0 {
            return Err(SearchError::MeasurementsParse {
                line,
                msg: format!("cer {cer} must be finite and non-negative"),
            });
        }
        rows.push(MeasurementRow {
            policy: fields[0].trim().to_string(),
            param_index,
            param_repr: fields[2].trim().to_string(),
            utt_id: fields[3].trim().to_string(),
            repeat,
            cer,
        });
    }
    if !header_seen {
        return Err(SearchError::MeasurementsParse {
            line: 1,
            msg: "missing header row".into(),
        });
    }
    Ok(rows)
}

pub fn read_measurements(path: &Path) -> Result<Vec<MeasurementRow>, SearchError> {
    parse_measurements_str(&fs::read_to_string(path)?)
}

pub fn report_to_string(records: &[DpdRecord]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in records {
        let (dpd, infinite) = match r.dpd {
            Dpd::Finite(v) => (format!("{v:.3}"), 0),
            Dpd::Infinite => ("inf".to_string(), 1),
        };
        out.push_str(&format!(
            "{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{}\t{}\t{}\n",
            r.policy.as_str(),
            r.params.repr(),
            r.d_p,
            r.e_p,
            r.e_o,
            dpd,
            u8::from(r.selected),
            infinite
        ));
    }
    out
}

pub fn write_report(records: &[DpdRecord], path: &Path) -> Result<(), SearchError> {
    fs::write(path, report_to_string(records))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measurements_round_trip_exactly() {
        let rows = vec![
            MeasurementRow {
                policy: "baseline".into(),
                param_index: 0,
                param_repr: "-".into(),
                utt_id: "utt1".into(),
                repeat: 0,
                cer: 0.201,
            },
            MeasurementRow {
                policy: "tw".into(),
                param_index: 3,
                param_repr: "W=0.080".into(),
                utt_id: "utt1".into(),
                repeat: 7,
                cer: 1.0 / 3.0,
            },
        ];
        let text = measurements_to_string(&rows);
        let back = parse_measurements_str(&text).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[1].cer, 1.0 / 3.0);
    }

    #[test]
    fn parse_reports_the_failing_line() {
        let text = format!("{MEASUREMENTS_HEADER}\ntw\t0\tW=0.080\tu\t0\tnot-a-number\n");
        match parse_measurements_str(&text) {
            Err(SearchError::MeasurementsParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_measurements_str("tw\t0\tx\tu\t0\t0.5\n"),
            Err(SearchError::MeasurementsParse { line: 1, .. })
        ));
        // comments and blank lines are fine
        let ok =
            format!("# comment\n\n{MEASUREMENTS_HEADER}\n# more\ntw\t0\tW=0.080\tu\t0\t0.25\n");
        assert_eq!(parse_measurements_str(&ok).unwrap().len(), 1);
    }
}
