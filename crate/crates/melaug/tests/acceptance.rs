//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured numbers once its assertions hold.
//!
//! Run with `cargo test -p melaug --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use melaug::asr::FixtureTranscriber;
use melaug::augment::{
    self, apply, time_len_ctl, time_len_ctl_pair, AugSeed, PolicyParams, PolicyTag,
};
use melaug::manifest::ManifestEntry;
use melaug::metrics::{dtw_align, edit_distance, mcd_frame_distance, McepSequence};
use melaug::search::{
    deformation_ratio, dpd, dpd_table_from_measurements, parse_measurements_str, report_to_string,
    run_dpd_search, search_masking_two_stage, write_report, DatasetStats, Dpd, DpdRecord,
    MeasurementRow, PipelineEstimator, Schedules, SearchSchedule, TableEpEstimator,
};
use melaug::signal::{
    extract_mel, griffin_lim, griffin_lim_with_trace, mels_from_bytes, mels_to_bytes, write_wav,
    MelConfig, MelMeta, MelSpectrogram, Waveform,
};

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn fixture_rows(name: &str) -> Vec<MeasurementRow> {
    parse_measurements_str(&std::fs::read_to_string(fixture_path(name)).unwrap()).unwrap()
}

fn kss_stats() -> DatasetStats {
    DatasetStats {
        mean_tau: 217.0,
        nu: 80,
        utterance_count: 64,
    }
}

struct Lcg(u64);

impl Lcg {
    fn new(seed: u64) -> Self {
        Lcg(seed.wrapping_mul(0x9E3779B97F4A7C15) | 1)
    }

    fn next_u64(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0
    }

    fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }
}

fn random_mel(nu: usize, tau: usize, rng: &mut Lcg) -> MelSpectrogram {
    let meta = MelMeta::from_config(&MelConfig::default());
    let floor = meta.floor_log();
    let values = (0..nu * tau)
        .map(|_| floor + (rng.unit() * 12.0) as f32)
        .collect();
    MelSpectrogram::from_values(nu, tau, values, meta).unwrap()
}

fn tone(freq: f64, secs: f64, sample_rate: u32) -> Waveform {
    let n = (secs * sample_rate as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate as f64).sin() as f32 * 0.8
        })
        .collect();
    Waveform {
        samples,
        sample_rate,
    }
}

fn dpd_value(r: &DpdRecord) -> f64 {
    match r.dpd {
        Dpd::Finite(v) => v,
        Dpd::Infinite => f64::INFINITY,
    }
}

fn records_for(records: &[DpdRecord], tag: PolicyTag) -> Vec<&DpdRecord> {
    records.iter().filter(|r| r.policy == tag).collect()
}

#[test]
fn criterion_01_table2_dpd_reproduction() {
    let started = Instant::now();
    let rows = fixture_rows("table2_measurements.tsv");
    let records = dpd_table_from_measurements(&rows, &kss_stats()).unwrap();

    let expected: &[(PolicyTag, &[f64], &str)] = &[
        (
            PolicyTag::TimeMask,
            &[0.643, 1.125, 1.167, 1.762, 1.484, 1.667, 1.667, 1.574],
            "T=8,Nt=1",
        ),
        (
            PolicyTag::FreqMask,
            &[1.563, 1.923, 2.206, 1.429, 1.923, 1.485, 1.259, 1.370],
            "F=6,Nf=1",
        ),
        (
            PolicyTag::TimeWarp,
            &[1.176, 2.500, 3.158, 3.636, 2.439, 2.182, 2.188, 2.025],
            "W=0.080",
        ),
        (
            PolicyTag::FreqWarp,
            &[1.042, 1.389, 0.882, 0.714, 0.628, 0.636, 0.557, 0.581],
            "H=4",
        ),
        (
            PolicyTag::TimeLenCtl,
            &[2.000, 4.444, 3.158, 8.000, 6.667, 30.00, 7.778, 13.333],
            "L=0.120",
        ),
        (
            PolicyTag::LoudnessCtl,
            &[1.667, 2.500, 4.706, 8.000, 6.038, 3.122],
            "lambda=0.160",
        ),
    ];

    let mut cells = 0;
    for (tag, dpds, selected_repr) in expected {
        let group = records_for(&records, *tag);
        assert_eq!(group.len(), dpds.len(), "{tag}: row count");
        for (rec, want) in group.iter().zip(dpds.iter()) {
            let got = dpd_value(rec);
            assert!(
                (got - want).abs() <= 0.01,
                "{tag} {}: dpd {got:.4} vs printed {want}",
                rec.params.repr()
            );
            cells += 1;
        }
        let winner: Vec<_> = group.iter().filter(|r| r.selected).collect();
        assert_eq!(winner.len(), 1, "{tag}: exactly one selected row");
        assert_eq!(winner[0].params.repr(), *selected_repr, "{tag}: selection");
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 1 PASS: {cells} DPD cells within 0.01, all six selections match, {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    );
}

#[test]
fn criterion_02_table3_two_stage_reproduction() {
    let started = Instant::now();
    let mut rows = fixture_rows("table2_measurements.tsv");
    rows.extend(fixture_rows("table3_measurements.tsv"));
    let estimator = TableEpEstimator::from_measurements(&rows).unwrap();
    let stats = kss_stats();
    let e_o = 0.201;
    let stage1 = SearchSchedule::arithmetic(2.0, 2.0, 8);

    let tm =
        search_masking_two_stage(PolicyTag::TimeMask, &stage1, &estimator, &stats, e_o).unwrap();
    assert_eq!(tm.candidates, vec![(1, 8), (2, 4), (4, 2), (8, 1)]);
    let tm_best = tm.best_record();
    assert_eq!(
        tm_best.params,
        PolicyParams::TimeMask {
            max_width: 4,
            repeats: 2
        }
    );
    assert!(
        (dpd_value(tm_best) - 3.364).abs() <= 0.01,
        "{}",
        dpd_value(tm_best)
    );

    let fm =
        search_masking_two_stage(PolicyTag::FreqMask, &stage1, &estimator, &stats, e_o).unwrap();
    assert_eq!(fm.candidates, vec![(1, 6), (2, 3), (3, 2), (6, 1)]);
    let fm_best = fm.best_record();
    assert_eq!(
        fm_best.params,
        PolicyParams::FreqMask {
            max_width: 3,
            repeats: 2
        }
    );
    assert!(
        (dpd_value(fm_best) - 6.818).abs() <= 0.01,
        "{}",
        dpd_value(fm_best)
    );

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 2 PASS: candidate sets exact, selections (4,2) dpd {:.3} and (3,2) dpd {:.3}, {:.0} ms",
        dpd_value(tm_best),
        dpd_value(fm_best),
        elapsed.as_secs_f64() * 1e3
    );
}

#[test]
fn criterion_03_spot_formula_checks() {
    let a = dpd(0.037, 0.222, 0.201).unwrap().value().unwrap();
    assert!((a - 1.762).abs() <= 0.001, "{a}");
    let b = dpd(0.12, 0.205, 0.201).unwrap().value().unwrap();
    assert!((b - 30.00).abs() <= 0.01, "{b}");
    let c = deformation_ratio(&PolicyParams::FreqWarp { max_shift: 4 }, &kss_stats());
    assert_eq!(c, 0.050);
    println!(
        "criterion 3 PASS: dpd(0.037,0.222,0.201)={a:.4}, dpd(0.12,0.205,0.201)={b:.4}, D_H={c}"
    );
}

#[test]
fn criterion_04_zero_parameter_identity_suite() {
    let started = Instant::now();
    let zero_params = [
        PolicyParams::TimeMask {
            max_width: 0,
            repeats: 1,
        },
        PolicyParams::FreqMask {
            max_width: 0,
            repeats: 1,
        },
        PolicyParams::TimeWarp { max_shift: 0.0 },
        PolicyParams::FreqWarp { max_shift: 0 },
        PolicyParams::TimeLenCtl { max_stretch: 0.0 },
        PolicyParams::LoudnessCtl { max_drop: 0.0 },
    ];
    let mut rng = Lcg::new(404);
    for case in 0..100 {
        let nu = rng.range(8, 48);
        let tau = rng.range(8, 64);
        let m = random_mel(nu, tau, &mut rng);
        for p in &zero_params {
            let out = apply(&m, p, AugSeed(case)).unwrap();
            assert_eq!(out.tau(), m.tau(), "{:?}", p.tag());
            assert_eq!(out.nu(), m.nu());
            let same = out
                .values()
                .iter()
                .zip(m.values())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "case {case}: {:?} not bit-identical", p.tag());
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 4 PASS: 100 spectrograms x 6 policies bit-identical, {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    );
}

fn selected_params() -> Vec<PolicyParams> {
    vec![
        PolicyParams::TimeMask {
            max_width: 4,
            repeats: 2,
        },
        PolicyParams::FreqMask {
            max_width: 3,
            repeats: 2,
        },
        PolicyParams::TimeWarp { max_shift: 0.08 },
        PolicyParams::FreqWarp { max_shift: 4 },
        PolicyParams::TimeLenCtl { max_stretch: 0.12 },
        PolicyParams::LoudnessCtl { max_drop: 0.16 },
    ]
}

/// Builds a small live-search fixture: two tone utterances on disk plus a
/// fixture transcript for every request key the search will issue.
fn live_fixture(
    dir: &Path,
    tags: &[PolicyTag],
    schedules: &Schedules,
    repeats: usize,
) -> Vec<ManifestEntry> {
    let cfg = MelConfig::default();
    let audio_dir = dir.join("audio");
    let fx_dir = dir.join("fixture");
    std::fs::create_dir_all(&audio_dir).unwrap();
    std::fs::create_dir_all(&fx_dir).unwrap();

    let refs = [
        ("utt-a", 330.0, "안녕하세요 좋은 아침"),
        ("utt-b", 523.0, "오늘 날씨가 맑다"),
    ];
    let mut entries = Vec::new();
    for (utt, freq, transcript) in refs {
        let path = audio_dir.join(format!("{utt}.wav"));
        write_wav(&tone(freq, 0.25, cfg.sample_rate), &path).unwrap();
        entries.push(ManifestEntry {
            utt_id: utt.into(),
            audio_path: path,
            transcript: transcript.into(),
        });
    }

    // transcript per key: the reference with a key-dependent number of
    // characters replaced, so CERs vary but stay deterministic
    let mutate = |reference: &str, key: &str| -> String {
        let hash: u64 = key.bytes().fold(0xcbf29ce484222325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100000001b3)
        });
        let chars: Vec<char> = reference.chars().collect();
        let errors = (hash % 4) as usize;
        let mut out = chars.clone();
        for e in 0..errors {
            let pos = (hash >> (8 * e)) as usize % chars.len();
            out[pos] = '별';
        }
        out.into_iter().collect()
    };

    for (utt, _, transcript) in refs {
        std::fs::write(
            fx_dir.join(format!("{utt}__baseline.txt")),
            mutate(transcript, &format!("{utt}__baseline")),
        )
        .unwrap();
        for &tag in tags {
            let schedule = schedules.for_policy(tag);
            // stage-2 masking indices continue past the stage-1 schedule
            let max_index = schedule.count + 24;
            for index in 0..max_index {
                for repeat in 0..repeats {
                    let key = melaug::asr::request_key(utt, tag.as_str(), index, repeat);
                    std::fs::write(fx_dir.join(format!("{key}.txt")), mutate(transcript, &key))
                        .unwrap();
                }
            }
        }
    }
    entries
}

#[test]
fn criterion_05_determinism_suite() {
    // per-policy: same seed bit-identical, different seed differs somewhere
    let mut rng = Lcg::new(7);
    let m = random_mel(80, 120, &mut rng);
    let mut any_differ = false;
    for p in selected_params() {
        let a = apply(&m, &p, AugSeed(7)).unwrap();
        let b = apply(&m, &p, AugSeed(7)).unwrap();
        assert_eq!(
            a.values(),
            b.values(),
            "{:?} seed 7 not reproducible",
            p.tag()
        );
        assert_eq!(a.tau(), b.tau());
        let c = apply(&m, &p, AugSeed(8)).unwrap();
        if a.tau() != c.tau() || a.values() != c.values() {
            any_differ = true;
        }
    }
    assert!(any_differ, "no policy draw differed between seeds 7 and 8");

    // parallel vs serial fixture search: 3 policies x 4 params
    let dir = tempfile::tempdir().unwrap();
    let tags = [
        PolicyTag::TimeWarp,
        PolicyTag::TimeLenCtl,
        PolicyTag::LoudnessCtl,
    ];
    let schedules = Schedules {
        time_warp: SearchSchedule::arithmetic(0.02, 0.02, 4),
        time_len_ctl: SearchSchedule::arithmetic(0.02, 0.02, 4),
        loudness_ctl: SearchSchedule::geometric(0.02, 2.0, 4),
        ..Schedules::default()
    };
    let entries = live_fixture(dir.path(), &tags, &schedules, 2);
    let transcriber = FixtureTranscriber::new(dir.path().join("fixture"));
    let cfg = MelConfig::default();

    let run = |parallel: bool| {
        let (mut est, stats) =
            PipelineEstimator::from_manifest(&entries, &cfg, 8, 2, AugSeed(7), &transcriber)
                .unwrap();
        est.parallel = parallel;
        let out = if parallel {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(4)
                .build()
                .unwrap();
            pool.install(|| run_dpd_search(&tags, &schedules, &est, &stats).unwrap())
        } else {
            run_dpd_search(&tags, &schedules, &est, &stats).unwrap()
        };
        (
            report_to_string(&out.records),
            melaug::search::measurements_to_string(&out.measurements),
        )
    };
    let (report_serial, meas_serial) = run(false);
    let (report_parallel, meas_parallel) = run(true);
    assert_eq!(
        report_serial, report_parallel,
        "reports differ across parallelism"
    );
    assert_eq!(
        meas_serial, meas_parallel,
        "measurements differ across parallelism"
    );

    println!("criterion 5 PASS: seed-7 runs bit-identical, seeds differ, 4-way parallel report equals serial");
}

#[test]
fn criterion_06_oracle_equivalence() {
    // exhaustive recursive edit distance (memoized recurrence)
    fn edit_oracle(
        a: &[char],
        b: &[char],
        i: usize,
        j: usize,
        memo: &mut Vec<Vec<Option<usize>>>,
    ) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let sub = edit_oracle(a, b, i - 1, j - 1, memo) + usize::from(a[i - 1] != b[j - 1]);
        let del = edit_oracle(a, b, i - 1, j, memo) + 1;
        let ins = edit_oracle(a, b, i, j - 1, memo) + 1;
        let v = sub.min(del).min(ins);
        memo[i][j] = Some(v);
        v
    }

    let alphabet = ['ㄱ', 'ㄴ', 'a', ' '];
    let mut rng = Lcg::new(606);
    let mut mismatches = 0;
    for _ in 0..200 {
        let la = rng.range(0, 12);
        let lb = rng.range(0, 12);
        let a: String = (0..la).map(|_| alphabet[rng.range(0, 3)]).collect();
        let b: String = (0..lb).map(|_| alphabet[rng.range(0, 3)]).collect();
        let ac: Vec<char> = a.chars().collect();
        let bc: Vec<char> = b.chars().collect();
        let mut memo = vec![vec![None; bc.len() + 1]; ac.len() + 1];
        if edit_distance(&a, &b) != edit_oracle(&ac, &bc, ac.len(), bc.len(), &mut memo) {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);

    // brute-force DTW path enumeration
    fn dtw_oracle(x: &McepSequence, y: &McepSequence, i: usize, j: usize) -> f64 {
        let d = mcd_frame_distance(x.frame(i), y.frame(j));
        if i == 0 && j == 0 {
            return d;
        }
        let mut best = f64::INFINITY;
        if i > 0 && j > 0 {
            best = best.min(dtw_oracle(x, y, i - 1, j - 1));
        }
        if i > 0 {
            best = best.min(dtw_oracle(x, y, i - 1, j));
        }
        if j > 0 {
            best = best.min(dtw_oracle(x, y, i, j - 1));
        }
        best + d
    }

    let mut max_err = 0.0f64;
    for _ in 0..50 {
        let seq = |rng: &mut Lcg, len: usize| {
            McepSequence::new(
                (0..len)
                    .map(|_| (0..3).map(|_| rng.unit() * 4.0 - 2.0).collect())
                    .collect(),
            )
            .unwrap()
        };
        let len_x = rng.range(1, 8);
        let x = seq(&mut rng, len_x);
        let len_y = rng.range(1, 8);
        let y = seq(&mut rng, len_y);
        let (_, cost) = dtw_align(&x, &y).unwrap();
        let expected = dtw_oracle(&x, &y, x.len() - 1, y.len() - 1);
        max_err = max_err.max((cost - expected).abs());
    }
    assert!(max_err < 1e-9, "max dtw deviation {max_err}");

    println!("criterion 6 PASS: 200 edit-distance pairs exact, 50 DTW pairs within 1e-9 (max {max_err:.2e})");
}

#[test]
fn criterion_07_signal_properties() {
    let started = Instant::now();
    let cfg = MelConfig::default();
    let w = tone(440.0, 0.5, cfg.sample_rate);
    let m = extract_mel(&w, &cfg).unwrap();

    let (_, trace) = griffin_lim_with_trace(&m, 60).unwrap();
    assert_eq!(trace.len(), 60);
    for k in 1..trace.len() {
        assert!(
            trace[k] <= trace[k - 1] * (1.0 + 1e-12),
            "iteration {k}: {} > {}",
            trace[k],
            trace[k - 1]
        );
    }
    let gl_elapsed = started.elapsed();
    assert!(gl_elapsed.as_secs_f64() < 10.0, "took {gl_elapsed:?}");

    let rec = griffin_lim(&m, 60).unwrap();
    let m2 = extract_mel(&rec, &cfg).unwrap();
    assert_eq!(m2.tau(), m.tau());
    let dot: f64 = m
        .values()
        .iter()
        .zip(m2.values())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum();
    let na: f64 = m.values().iter().map(|&a| (a as f64).powi(2)).sum();
    let nb: f64 = m2.values().iter().map(|&b| (b as f64).powi(2)).sum();
    let cosine = dot / (na.sqrt() * nb.sqrt());
    assert!(cosine > 0.9, "cosine {cosine}");

    let bytes = mels_to_bytes(&m);
    let back = mels_from_bytes(&bytes).unwrap();
    assert_eq!(back.meta, m.meta);
    assert!(m
        .values()
        .iter()
        .zip(back.values())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(bytes, mels_to_bytes(&back));

    println!(
        "criterion 7 PASS: 60-iteration descent monotone ({:.0} ms), round-trip cosine {cosine:.4}, MELS bit-exact",
        gl_elapsed.as_secs_f64() * 1e3
    );
}

#[test]
fn criterion_08_time_length_contracts() {
    let mut rng = Lcg::new(808);
    for case in 0..100 {
        let tau = rng.range(10, 300);
        let max_stretch = rng.unit() * 0.5;
        let m = random_mel(6, tau, &mut rng);
        let (out, shift) = time_len_ctl(&m, max_stretch, AugSeed(case)).unwrap();
        let expected = (tau as f64 + shift).round() as usize;
        assert_eq!(out.tau(), expected, "case {case}: tau {tau} shift {shift}");
    }

    for case in 0..100 {
        let tau_src = rng.range(20, 400);
        let tau_tgt = rng.range(20, 400);
        let max_ratio = 0.05 + rng.unit() * 0.4;
        let src = random_mel(4, tau_src, &mut rng);
        let tgt = random_mel(4, tau_tgt, &mut rng);
        let seed = AugSeed(1000 + case);
        let (s, t) = time_len_ctl_pair(&src, &tgt, max_ratio, seed).unwrap();
        // both outputs sit within one frame of exact proportional scaling
        // by the shared drawn ratio
        let ratio = augment::draw_stretch_ratio(max_ratio, seed);
        let exact_src = tau_src as f64 * (1.0 + ratio);
        let exact_tgt = tau_tgt as f64 * (1.0 + ratio);
        assert!(
            (s.tau() as f64 - exact_src).abs() <= 1.0,
            "case {case}: src {} vs proportional {exact_src:.2}",
            s.tau()
        );
        assert!(
            (t.tau() as f64 - exact_tgt).abs() <= 1.0,
            "case {case}: tgt {} vs proportional {exact_tgt:.2}",
            t.tau()
        );
    }
    println!("criterion 8 PASS: 100 length draws exact, 100 pair draws within one frame of proportionality");
}

#[test]
fn criterion_09_stated_substitutions() {
    // The reference E_o = 0.201 and the per-policy E_p means were measured
    // by decoding a KSS validation set through a commercial ASR service;
    // the downstream voice-conversion scores additionally need full model
    // training and listener panels. None of that runs here. The shipped
    // fixtures stand in for the measured CER means so criteria 1-3 can
    // verify the arithmetic, and criteria 4-8 cover the code paths with
    // property and oracle suites.
    for name in ["table2_measurements.tsv", "table3_measurements.tsv"] {
        let rows = fixture_rows(name);
        assert!(!rows.is_empty());
        assert!(rows
            .iter()
            .any(|r| r.policy == "baseline" && r.cer == 0.201));
    }
    println!(
        "criterion 9 PASS: live ASR / VC-training results substituted by fixture measurements (criteria 1-3) and property suites (criteria 4-8)"
    );
}

#[test]
fn criterion_10_throughput() {
    let mut rng = Lcg::new(1010);
    let m = random_mel(80, 1000, &mut rng);
    let mut slowest = ("", 0.0f64);
    for p in selected_params() {
        // warm once, then time
        apply(&m, &p, AugSeed(1)).unwrap();
        let started = Instant::now();
        apply(&m, &p, AugSeed(2)).unwrap();
        let ms = started.elapsed().as_secs_f64() * 1e3;
        if ms > slowest.1 {
            slowest = (p.tag().as_str(), ms);
        }
        assert!(ms < 50.0, "{} took {ms:.2} ms on 80x1000", p.tag());
    }

    let started = Instant::now();
    let mut rows = fixture_rows("table2_measurements.tsv");
    rows.extend(fixture_rows("table3_measurements.tsv"));
    let records = dpd_table_from_measurements(&rows, &kss_stats()).unwrap();
    let out = tempfile::NamedTempFile::new().unwrap();
    write_report(&records, out.path()).unwrap();
    let pipeline_s = started.elapsed().as_secs_f64();
    assert!(pipeline_s < 5.0, "offline pipeline took {pipeline_s:.2} s");

    println!(
        "criterion 10 PASS: slowest policy {} at {:.2} ms on 80x1000, offline table pipeline {:.0} ms",
        slowest.0,
        slowest.1,
        pipeline_s * 1e3
    );
}
