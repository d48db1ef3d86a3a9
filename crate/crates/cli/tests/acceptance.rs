//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the lines are always
//! printed.

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use subevent::encoders::EncoderKind;
use subevent::evalkit::{
    burst_baseline, eval_bin_level, eval_binary_event, Aggregation, BurstConfig,
};
use subevent::ingest::{to_examples, RawStream, StreamExample, Vocab};
use subevent::labeler::{train, LabelScheme, Model, ModelConfig};
use subevent::synth::{generate, SynthConfig};

const BIN: &str = env!("CARGO_BIN_EXE_subevent");
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().expect("run subevent");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let (code, stdout, stderr) = cli(&["gradcheck"]);
    let elapsed = t.elapsed();
    let Ok(report) = serde_json::from_str::<Value>(&stdout) else {
        return outcome(false, format!("exit {code}, unreadable report: {stderr}"));
    };
    let cases = report["cases"].as_array().cloned().unwrap_or_default();
    let covered: BTreeSet<(String, bool, bool)> = cases
        .iter()
        .filter(|c| c["head"] == "bio")
        .map(|c| {
            (
                c["variant"].as_str().unwrap_or_default().to_string(),
                c["chronological"].as_bool().unwrap_or_default(),
                c["tweet_lstm"].as_bool().unwrap_or_default(),
            )
        })
        .collect();
    let mut missing = Vec::new();
    for kind in EncoderKind::ALL {
        let tl: &[bool] = if kind.is_tweet_level() {
            &[false, true]
        } else {
            &[false]
        };
        for chrono in [false, true] {
            for &tl in tl {
                if !covered.contains(&(kind.name().to_string(), chrono, tl)) {
                    missing.push(format!("{}/chrono={chrono}/tl={tl}", kind.name()));
                }
            }
        }
    }
    let worst = cases
        .iter()
        .filter_map(|c| c["report"]["max_relative_error"].as_f64())
        .fold(0.0, f64::max);
    let passed =
        code == 0 && report["passed"] == true && missing.is_empty() && within(elapsed, 120);
    outcome(
        passed,
        format!(
            "{} configs, worst relative error {worst:.2e} (< 1e-4), missing {missing:?}, {:.1}s (< 120s)",
            cases.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn metric_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failure = None;
    for _ in 0..10_000 {
        if let Err(e) = oracle::check_metric_case(&mut rng) {
            failure = Some(e);
            break;
        }
    }
    let elapsed = t.elapsed();
    match failure {
        None => outcome(
            within(elapsed, 30),
            format!(
                "10^4 random cases, 3 protocols x 2 aggregations exact, {:.2}s (< 30s)",
                elapsed.as_secs_f64()
            ),
        ),
        Some(e) => outcome(false, e),
    }
}

fn bio_codec() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut result = oracle::check_repair_examples();
    for _ in 0..10_000 {
        if result.is_err() {
            break;
        }
        result = oracle::check_codec_case(&mut rng);
    }
    let elapsed = t.elapsed();
    match result {
        Ok(()) => outcome(
            within(elapsed, 10),
            format!(
                "10^4 round trips and repair examples, {:.2}s (< 10s)",
                elapsed.as_secs_f64()
            ),
        ),
        Err(e) => outcome(false, e),
    }
}

struct Prepared {
    scheme: LabelScheme,
    vocab: Vocab,
    train: Vec<StreamExample>,
    dev: Vec<StreamExample>,
    test: Vec<StreamExample>,
}

fn prepare(synth: &SynthConfig) -> Prepared {
    let data = generate(synth).expect("default synthetic data");
    let scheme = synth.scheme().unwrap();
    let docs: Vec<Vec<String>> = data.train.iter().flat_map(RawStream::token_docs).collect();
    let vocab = Vocab::build(docs.iter().map(Vec::as_slice), 1);
    let ex = |streams: &[RawStream]| to_examples(streams, &vocab, &scheme).unwrap().0;
    Prepared {
        train: ex(&data.train),
        dev: ex(&data.dev),
        test: ex(&data.test),
        scheme,
        vocab,
    }
}

fn bin_level_f1(model: &Model, streams: &[StreamExample]) -> f64 {
    let gold: Vec<_> = streams.iter().map(|s| s.gold_labels.clone()).collect();
    let pred: Vec<_> = streams
        .iter()
        .map(|s| model.predict_bio(s).unwrap())
        .collect();
    eval_bin_level(&gold, &pred, Aggregation::Micro).unwrap().f1
}

fn overfit() -> Outcome {
    let t = Instant::now();
    let data = prepare(&SynthConfig::default());
    let stream = std::slice::from_ref(&data.train[0]);
    let config = ModelConfig {
        variant: EncoderKind::TweetAvg,
        chronological: true,
        epochs: 200,
        patience: 200,
        ..ModelConfig::default()
    };
    let out = train(config, data.scheme.clone(), data.vocab.clone(), stream, &[]).unwrap();
    let f1 = bin_level_f1(&out.model, stream);
    // with no dev streams the curve's F1 column scores the training stream
    let first = out.curve.iter().find(|r| r.dev_f1 >= 0.99).map(|r| r.epoch);
    let elapsed = t.elapsed();
    outcome(
        f1 >= 0.99 && within(elapsed, 300),
        format!(
            "tweet-avg + chronological on `{}` ({} bins): training bin-level F1 {f1:.4} (>= 0.99), first reached at epoch {first:?} of {}, {:.1}s (< 300s)",
            stream[0].stream_id,
            stream[0].bins.len(),
            out.curve.len(),
            elapsed.as_secs_f64()
        ),
    )
}

struct SeedResult {
    chrono: f64,
    flat: f64,
    binary: f64,
    burst: f64,
}

fn seed_run(seed: u64) -> SeedResult {
    let data = prepare(&SynthConfig {
        seed,
        ..SynthConfig::default()
    });
    let fit = |config: ModelConfig| {
        train(
            ModelConfig { seed, ..config },
            data.scheme.clone(),
            data.vocab.clone(),
            &data.train,
            &data.dev,
        )
        .unwrap()
        .model
    };
    let chrono = fit(ModelConfig {
        variant: EncoderKind::TweetAvg,
        chronological: true,
        ..ModelConfig::default()
    });
    let flat = fit(ModelConfig {
        variant: EncoderKind::TweetAvg,
        chronological: false,
        ..ModelConfig::default()
    });
    let binary = fit(ModelConfig::binary_baseline());

    let gold: Vec<_> = data.test.iter().map(|s| s.gold_spans.clone()).collect();
    let flags: Vec<_> = data
        .test
        .iter()
        .map(|s| binary.predict_binary(s).unwrap())
        .collect();
    let bursts: Vec<_> = data
        .test
        .iter()
        .map(|s| burst_baseline(&s.counts(), BurstConfig::default()).unwrap())
        .collect();
    SeedResult {
        chrono: bin_level_f1(&chrono, &data.test),
        flat: bin_level_f1(&flat, &data.test),
        binary: eval_binary_event(&gold, &flags, Aggregation::Micro)
            .unwrap()
            .f1,
        burst: eval_binary_event(&gold, &bursts, Aggregation::Micro)
            .unwrap()
            .f1,
    }
}

fn chronological_benefit(results: &[SeedResult], elapsed: Duration) -> Outcome {
    let wins = results.iter().filter(|r| r.chrono - r.flat >= 0.01).count();
    let per_seed: Vec<String> = results
        .iter()
        .zip(SEEDS)
        .map(|(r, s)| format!("seed {s}: {:.3} vs {:.3}", r.chrono, r.flat))
        .collect();
    outcome(
        wins >= 4 && within(elapsed, 1800),
        format!(
            "tweet-avg test bin-level micro F1, chronological vs not, +1 point on {wins}/5 seeds (>= 4) [{}], {:.0}s (< 1800s)",
            per_seed.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

fn binary_beats_burst(results: &[SeedResult], elapsed: Duration) -> Outcome {
    let wins = results
        .iter()
        .filter(|r| r.binary - r.burst >= 0.05)
        .count();
    let per_seed: Vec<String> = results
        .iter()
        .zip(SEEDS)
        .map(|(r, s)| format!("seed {s}: {:.3} vs {:.3}", r.binary, r.burst))
        .collect();
    outcome(
        wins >= 3 && within(elapsed, 900),
        format!(
            "binary event-level micro F1, binary baseline vs burst, +5 points on {wins}/5 seeds (>= 3) [{}]",
            per_seed.join("; ")
        ),
    )
}

fn fragmentation() -> Outcome {
    let (relaxed, bin) = oracle::fragmentation_fixture();
    outcome(
        relaxed == 1.0 && bin == 0.25,
        format!("relaxed {relaxed} (= 1.0), bin-level {bin} (= 0.25)"),
    )
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |path: &Path| path.to_str().unwrap().to_string();
    let data = root.join("data");
    let (code, _, err) = cli(&["generate", "--out", &p(&data)]);
    if code != 0 {
        return outcome(false, format!("generate failed: {err}"));
    }
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(run);
        let (code, _, err) = cli(&[
            "train",
            "--train",
            &p(&data.join("train")),
            "--dev",
            &p(&data.join("dev")),
            "--out",
            &p(&out),
            "--seed",
            "3",
        ]);
        if code != 0 {
            return outcome(false, format!("train failed: {err}"));
        }
        let read = |f: &str| std::fs::read(out.join(f)).unwrap();
        bytes.push((read("model.ckpt"), read("learning_curve.csv")));
    }
    let same_ckpt = bytes[0].0 == bytes[1].0;
    let same_curve = bytes[0].1 == bytes[1].1;
    outcome(
        same_ckpt && same_curve,
        format!(
            "two default train runs (seed 3): checkpoint {} bytes identical={same_ckpt}, learning curve identical={same_curve}",
            bytes[0].0.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut all_passed = true;
    let mut report = |n: usize, name: &str, o: Outcome| {
        all_passed &= o.passed;
        println!(
            "{} criterion {n} ({name}): {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    };
    report(1, "gradient correctness", gradient_correctness());
    report(2, "metric oracle equivalence", metric_oracle());
    report(3, "BIO codec", bio_codec());
    report(4, "overfit", overfit());
    let t = Instant::now();
    let results: Vec<SeedResult> = SEEDS.iter().map(|&s| seed_run(s)).collect();
    let elapsed = t.elapsed();
    report(
        5,
        "chronological benefit",
        chronological_benefit(&results, elapsed),
    );
    report(6, "relaxed fragmentation flaw", fragmentation());
    report(
        7,
        "binary baseline beats burst",
        binary_beats_burst(&results, elapsed),
    );
    report(8, "determinism", determinism());
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
