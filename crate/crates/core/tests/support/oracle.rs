//! Brute-force reference implementations of the evaluation protocols and the
//! BIO decoder, plus random case generators. Shared by the evalkit property
//! tests and the acceptance suite; deliberately written from the definitions
//! without reusing any evalkit helper.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use subevent::evalkit::{
    bio_to_spans, eval_bin_level, eval_binary_event, eval_relaxed, spans_to_bio, Aggregation,
    EvalReport, SubEventSpan,
};
use subevent::labeler::LabelScheme;

pub const TYPES: [&str; 3] = ["goal", "card", "kick-off"];

pub fn scheme() -> LabelScheme {
    LabelScheme::new(TYPES).unwrap()
}

/// Type index of a label id: `None` for O, else `(id - 1) / 2`.
fn label_type(label: usize) -> Option<usize> {
    if label == 0 {
        None
    } else {
        Some((label - 1) / 2)
    }
}

fn is_begin(label: usize) -> bool {
    label != 0 && label % 2 == 1
}

/// (correct predictions, predictions, correct gold items, gold items)
type Tally = (usize, usize, usize, usize);

fn prf(t: Tally) -> (f64, f64, f64) {
    let p = if t.1 == 0 {
        0.0
    } else {
        t.0 as f64 / t.1 as f64
    };
    let r = if t.3 == 0 {
        0.0
    } else {
        t.2 as f64 / t.3 as f64
    };
    let f = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    (p, r, f)
}

/// Scores per aggregation plus pooled counts, in the report's own terms.
#[derive(Debug, PartialEq)]
pub struct Expected {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub correct_predicted: usize,
    pub gold: usize,
    pub correct_gold: usize,
    pub streams: usize,
}

fn combine(tallies: &[Tally], agg: Aggregation) -> Expected {
    let mut pooled = (0, 0, 0, 0);
    for t in tallies {
        pooled = (
            pooled.0 + t.0,
            pooled.1 + t.1,
            pooled.2 + t.2,
            pooled.3 + t.3,
        );
    }
    let (precision, recall, f1) = match agg {
        Aggregation::Micro => prf(pooled),
        Aggregation::Macro => {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for &t in tallies {
                let (p, r, f) = prf(t);
                a += p;
                b += r;
                c += f;
            }
            let n = tallies.len().max(1) as f64;
            (a / n, b / n, c / n)
        }
    };
    Expected {
        precision,
        recall,
        f1,
        predicted: pooled.1,
        correct_predicted: pooled.0,
        gold: pooled.3,
        correct_gold: pooled.2,
        streams: tallies.len(),
    }
}

pub fn observed(r: &EvalReport) -> Expected {
    Expected {
        precision: r.precision,
        recall: r.recall,
        f1: r.f1,
        predicted: r.support["predicted"],
        correct_predicted: r.support["correct_predicted"],
        gold: r.support["gold"],
        correct_gold: r.support["correct_gold"],
        streams: r.support["streams"],
    }
}

pub fn bin_level(gold: &[Vec<usize>], pred: &[Vec<usize>], agg: Aggregation) -> Expected {
    let tallies: Vec<Tally> = gold
        .iter()
        .zip(pred)
        .map(|(g, p)| {
            let mut t = (0, 0, 0, 0);
            for i in 0..g.len() {
                let (gt, pt) = (label_type(g[i]), label_type(p[i]));
                if pt.is_some() {
                    t.1 += 1;
                }
                if gt.is_some() {
                    t.3 += 1;
                }
                if pt.is_some() && pt == gt {
                    t.0 += 1;
                    t.2 += 1;
                }
            }
            t
        })
        .collect();
    combine(&tallies, agg)
}

pub fn relaxed(gold: &[Vec<SubEventSpan>], pred: &[Vec<usize>], agg: Aggregation) -> Expected {
    let tallies: Vec<Tally> = gold
        .iter()
        .zip(pred)
        .map(|(spans, p)| {
            let mut correct = 0;
            for s in spans {
                let want = TYPES.iter().position(|&t| t == s.kind);
                let mut hit = false;
                for &label in &p[s.first_bin..=s.last_bin] {
                    if want.is_some() && label_type(label) == want {
                        hit = true;
                    }
                }
                correct += usize::from(hit);
            }
            (correct, spans.len(), correct, spans.len())
        })
        .collect();
    combine(&tallies, agg)
}

/// Every interval `[a, b]` of flagged bins that cannot be extended.
fn maximal_runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let n = flags.len();
    let mut runs = Vec::new();
    for a in 0..n {
        for b in a..n {
            let all = (a..=b).all(|i| flags[i]);
            let left_closed = a == 0 || !flags[a - 1];
            let right_closed = b + 1 == n || !flags[b + 1];
            if all && left_closed && right_closed {
                runs.push((a, b));
            }
        }
    }
    runs
}

pub fn binary_event(gold: &[Vec<SubEventSpan>], flags: &[Vec<bool>], agg: Aggregation) -> Expected {
    let tallies: Vec<Tally> = gold
        .iter()
        .zip(flags)
        .map(|(spans, f)| {
            let runs = maximal_runs(f);
            let overlaps = |a: usize, b: usize, s: &SubEventSpan| {
                (a..=b).any(|i| s.first_bin <= i && i <= s.last_bin)
            };
            let good_runs = runs
                .iter()
                .filter(|&&(a, b)| spans.iter().any(|s| overlaps(a, b, s)))
                .count();
            let recalled = spans
                .iter()
                .filter(|s| (s.first_bin..=s.last_bin).any(|i| f[i]))
                .count();
            (good_runs, runs.len(), recalled, spans.len())
        })
        .collect();
    combine(&tallies, agg)
}

/// A span starts at every non-O bin that is a `B`, opens the stream, or
/// follows a bin of another type; it extends over following `I` bins of
/// its type.
pub fn decode(labels: &[usize]) -> Vec<SubEventSpan> {
    let mut out = Vec::new();
    for i in 0..labels.len() {
        let Some(t) = label_type(labels[i]) else {
            continue;
        };
        let starts = is_begin(labels[i]) || i == 0 || label_type(labels[i - 1]) != Some(t);
        if !starts {
            continue;
        }
        let mut j = i;
        while j + 1 < labels.len()
            && label_type(labels[j + 1]) == Some(t)
            && !is_begin(labels[j + 1])
        {
            j += 1;
        }
        out.push(SubEventSpan::new(TYPES[t], i, j));
    }
    out
}

/// Disjoint typed spans over `n` bins, in bin order.
pub fn random_spans(rng: &mut ChaCha8Rng, n: usize) -> Vec<SubEventSpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.random_bool(0.35) {
            let len = rng.random_range(1..=(n - i).min(4));
            let kind = TYPES[rng.random_range(0..TYPES.len())];
            spans.push(SubEventSpan::new(kind, i, i + len - 1));
            i += len;
        } else {
            i += 1;
        }
    }
    spans
}

/// Arbitrary label ids, including illegal BIO sequences.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let o_bias = rng.random_range(0.0..1.0);
    (0..n)
        .map(|_| {
            if rng.random_bool(o_bias) {
                0
            } else {
                rng.random_range(1..=2 * TYPES.len())
            }
        })
        .collect()
}

/// Gold labels with a random fraction of bins overwritten, so predictions
/// overlap gold often enough to exercise the hit paths.
pub fn perturb(rng: &mut ChaCha8Rng, gold: &[usize]) -> Vec<usize> {
    let noise = rng.random_range(0.0..1.0);
    let mut out = gold.to_vec();
    let fresh = random_labels(rng, gold.len());
    for (o, f) in out.iter_mut().zip(fresh) {
        if rng.random_bool(noise) {
            *o = f;
        }
    }
    out
}

/// One random multi-stream case checked against every protocol and
/// aggregation; returns a description of the first disagreement.
pub fn check_metric_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let s = scheme();
    let streams = rng.random_range(1..=4);
    let (mut gold_spans, mut gold_labels, mut pred, mut flags) = (vec![], vec![], vec![], vec![]);
    for _ in 0..streams {
        let n = rng.random_range(1..=12);
        let spans = random_spans(rng, n);
        let labels = spans_to_bio(n, &spans, &s).map_err(|e| e.to_string())?;
        let p = if rng.random_bool(0.5) {
            perturb(rng, &labels)
        } else {
            random_labels(rng, n)
        };
        let density = rng.random_range(0.0..1.0);
        flags.push(
            (0..n)
                .map(|_| rng.random_bool(density))
                .collect::<Vec<bool>>(),
        );
        gold_spans.push(spans);
        gold_labels.push(labels);
        pred.push(p);
    }
    for agg in [Aggregation::Micro, Aggregation::Macro] {
        let pairs = [
            (
                "bin-level",
                observed(&eval_bin_level(&gold_labels, &pred, agg).map_err(|e| e.to_string())?),
                bin_level(&gold_labels, &pred, agg),
            ),
            (
                "relaxed",
                observed(&eval_relaxed(&gold_spans, &pred, &s, agg).map_err(|e| e.to_string())?),
                relaxed(&gold_spans, &pred, agg),
            ),
            (
                "binary-event",
                observed(&eval_binary_event(&gold_spans, &flags, agg).map_err(|e| e.to_string())?),
                binary_event(&gold_spans, &flags, agg),
            ),
        ];
        for (name, got, want) in pairs {
            if got != want {
                return Err(format!(
                    "{name} {agg:?} disagrees on gold {gold_spans:?} pred {pred:?} flags {flags:?}: {got:?} vs {want:?}"
                ));
            }
        }
    }
    Ok(())
}

/// Round trip of one random legal span set, plus the decoder against
/// [`decode`] on an arbitrary label sequence.
pub fn check_codec_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let s = scheme();
    let n = rng.random_range(1..=20);
    let spans = random_spans(rng, n);
    let labels = spans_to_bio(n, &spans, &s).map_err(|e| e.to_string())?;
    let back = bio_to_spans(&labels, &s);
    if back != spans {
        return Err(format!("round trip {spans:?} -> {labels:?} -> {back:?}"));
    }
    let arbitrary = random_labels(rng, n);
    let (got, want) = (bio_to_spans(&arbitrary, &s), decode(&arbitrary));
    if got != want {
        return Err(format!("decoding {arbitrary:?}: {got:?} vs {want:?}"));
    }
    Ok(())
}

/// The three decode examples for illegal or adjacent sequences.
pub fn check_repair_examples() -> Result<(), String> {
    let s = scheme();
    let ids = |names: &[&str]| {
        names
            .iter()
            .map(|n| s.label_id(n).unwrap())
            .collect::<Vec<_>>()
    };
    let cases = [
        (
            ids(&["O", "B-goal", "I-goal", "O"]),
            vec![SubEventSpan::new("goal", 1, 2)],
        ),
        (
            ids(&["I-goal", "I-goal", "O"]),
            vec![SubEventSpan::new("goal", 0, 1)],
        ),
        (
            ids(&["B-goal", "B-goal"]),
            vec![
                SubEventSpan::new("goal", 0, 0),
                SubEventSpan::new("goal", 1, 1),
            ],
        ),
    ];
    for (labels, want) in cases {
        let got = bio_to_spans(&labels, &s);
        if got != want {
            return Err(format!("{labels:?} decoded to {got:?}, expected {want:?}"));
        }
    }
    Ok(())
}

/// Gold goal over four bins, predicted as one goal bin then three card bins.
/// Returns (relaxed F1, bin-level F1).
pub fn fragmentation_fixture() -> (f64, f64) {
    let s = scheme();
    let gold = vec![vec![SubEventSpan::new("goal", 0, 3)]];
    let ids = |names: &[&str]| {
        names
            .iter()
            .map(|n| s.label_id(n).unwrap())
            .collect::<Vec<_>>()
    };
    let pred = vec![ids(&["B-goal", "B-card", "I-card", "I-card"])];
    let relaxed = eval_relaxed(&gold, &pred, &s, Aggregation::Micro)
        .unwrap()
        .f1;
    let gold_bio = vec![spans_to_bio(4, &gold[0], &s).unwrap()];
    let bin = eval_bin_level(&gold_bio, &pred, Aggregation::Micro)
        .unwrap()
        .f1;
    (relaxed, bin)
}
