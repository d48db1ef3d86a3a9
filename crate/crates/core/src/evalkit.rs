//! BIO span codec, the bin-level / relaxed / binary event-level scoring
//! protocols, and the rate-threshold burst baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::{LabelScheme, Tag, OUTSIDE};

/// Typed run of bins, inclusive on both ends.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubEventSpan {
    #[serde(rename = "type")]
    pub kind: String,
    pub first_bin: usize,
    pub last_bin: usize,
}

impl SubEventSpan {
    pub fn new(kind: impl Into<String>, first_bin: usize, last_bin: usize) -> Self {
        SubEventSpan {
            kind: kind.into(),
            first_bin,
            last_bin,
        }
    }

    pub fn len(&self) -> usize {
        self.last_bin + 1 - self.first_bin
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, bin: usize) -> bool {
        (self.first_bin..=self.last_bin).contains(&bin)
    }
}

/// Checks ordering, range and pairwise disjointness of `spans`.
pub fn validate_spans(n_bins: usize, spans: &[SubEventSpan]) -> Result<()> {
    for s in spans {
        if s.first_bin > s.last_bin || s.last_bin >= n_bins {
            return Err(Error::Annotation(format!(
                "span {}({}, {}) is outside bins [0, {n_bins})",
                s.kind, s.first_bin, s.last_bin
            )));
        }
    }
    let mut sorted: Vec<&SubEventSpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.first_bin, s.last_bin));
    for pair in sorted.windows(2) {
        if pair[1].first_bin <= pair[0].last_bin {
            return Err(Error::Annotation(format!(
                "overlapping spans {}({}, {}) and {}({}, {})",
                pair[0].kind,
                pair[0].first_bin,
                pair[0].last_bin,
                pair[1].kind,
                pair[1].first_bin,
                pair[1].last_bin
            )));
        }
    }
    Ok(())
}

pub fn spans_to_bio(
    n_bins: usize,
    spans: &[SubEventSpan],
    scheme: &LabelScheme,
) -> Result<Vec<usize>> {
    validate_spans(n_bins, spans)?;
    let mut labels = vec![OUTSIDE; n_bins];
    for s in spans {
        let t = scheme
            .type_id(&s.kind)
            .ok_or_else(|| Error::Annotation(format!("unknown sub-event type `{}`", s.kind)))?;
        labels[s.first_bin] = LabelScheme::begin(t);
        for l in &mut labels[s.first_bin + 1..=s.last_bin] {
            *l = LabelScheme::inside(t);
        }
    }
    Ok(labels)
}

/// Decodes maximal typed runs, repairing illegal sequences: an `I-t` that
/// does not continue an open `t` span opens a new one, and `B-t` always
/// opens a new span.
pub fn bio_to_spans(labels: &[usize], scheme: &LabelScheme) -> Vec<SubEventSpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    let mut close = |open: &mut Option<(usize, usize)>, end: usize| {
        if let Some((t, start)) = open.take() {
            spans.push(SubEventSpan::new(scheme.type_name(t), start, end));
        }
    };
    for (i, &l) in labels.iter().enumerate() {
        match LabelScheme::tag(l) {
            Tag::Outside => close(&mut open, i.wrapping_sub(1)),
            Tag::Begin(t) => {
                close(&mut open, i.wrapping_sub(1));
                open = Some((t, i));
            }
            Tag::Inside(t) => {
                if open.is_some_and(|(ot, _)| ot == t) {
                    continue;
                }
                close(&mut open, i.wrapping_sub(1));
                open = Some((t, i));
            }
        }
    }
    close(&mut open, labels.len().wrapping_sub(1));
    spans
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    BinaryEvent,
    Relaxed,
    BinLevel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Micro,
    Macro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub aggregation: Aggregation,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: BTreeMap<String, usize>,
}

/// Raw counts behind one stream's precision and recall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    /// numerator of precision
    hit_pred: usize,
    predicted: usize,
    /// numerator of recall
    hit_gold: usize,
    gold: usize,
}

impl Counts {
    fn scores(&self) -> (f64, f64, f64) {
        let p = ratio(self.hit_pred, self.predicted);
        let r = ratio(self.hit_gold, self.gold);
        (p, r, f1(p, r))
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn aggregate(protocol: Protocol, aggregation: Aggregation, per_stream: &[Counts]) -> EvalReport {
    let total = per_stream.iter().fold(Counts::default(), |a, c| Counts {
        hit_pred: a.hit_pred + c.hit_pred,
        predicted: a.predicted + c.predicted,
        hit_gold: a.hit_gold + c.hit_gold,
        gold: a.gold + c.gold,
    });
    let (precision, recall, f1) = match aggregation {
        Aggregation::Micro => total.scores(),
        Aggregation::Macro => {
            let n = per_stream.len().max(1) as f64;
            let sums = per_stream
                .iter()
                .map(Counts::scores)
                .fold((0.0, 0.0, 0.0), |a, s| (a.0 + s.0, a.1 + s.1, a.2 + s.2));
            (sums.0 / n, sums.1 / n, sums.2 / n)
        }
    };
    let support = BTreeMap::from([
        ("streams".to_string(), per_stream.len()),
        ("predicted".to_string(), total.predicted),
        ("correct_predicted".to_string(), total.hit_pred),
        ("gold".to_string(), total.gold),
        ("correct_gold".to_string(), total.hit_gold),
    ]);
    EvalReport {
        protocol,
        aggregation,
        precision,
        recall,
        f1,
        support,
    }
}

fn check_lengths(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(
            "evaluation",
            format!("{what}: {a} gold vs {b} predicted"),
        ));
    }
    Ok(())
}

/// Per-bin type match: B-/I- prefixes are ignored, each predicted non-O bin
/// is correct iff its gold bin has the same type.
pub fn eval_bin_level(
    gold: &[Vec<usize>],
    predicted: &[Vec<usize>],
    aggregation: Aggregation,
) -> Result<EvalReport> {
    check_lengths("stream count", gold.len(), predicted.len())?;
    let mut per_stream = Vec::with_capacity(gold.len());
    for (g, p) in gold.iter().zip(predicted) {
        check_lengths("bin count", g.len(), p.len())?;
        let mut c = Counts::default();
        for (&gl, &pl) in g.iter().zip(p) {
            let (gt, pt) = (LabelScheme::type_of(gl), LabelScheme::type_of(pl));
            c.gold += usize::from(gt.is_some());
            c.predicted += usize::from(pt.is_some());
            if pt.is_some() && gt == pt {
                c.hit_pred += 1;
                c.hit_gold += 1;
            }
        }
        per_stream.push(c);
    }
    Ok(aggregate(Protocol::BinLevel, aggregation, &per_stream))
}

/// A gold span is correct iff at least one of its bins carries its type.
/// Each gold span yields exactly one decision, so P = R = F1 = accuracy.
pub fn eval_relaxed(
    gold: &[Vec<SubEventSpan>],
    predicted: &[Vec<usize>],
    scheme: &LabelScheme,
    aggregation: Aggregation,
) -> Result<EvalReport> {
    check_lengths("stream count", gold.len(), predicted.len())?;
    let mut per_stream = Vec::with_capacity(gold.len());
    for (spans, p) in gold.iter().zip(predicted) {
        let mut c = Counts::default();
        for s in spans {
            if s.last_bin >= p.len() {
                return Err(Error::Annotation(format!(
                    "span {}({}, {}) beyond {} predicted bins",
                    s.kind,
                    s.first_bin,
                    s.last_bin,
                    p.len()
                )));
            }
            let t = scheme.type_id(&s.kind);
            let hit = t.is_some()
                && p[s.first_bin..=s.last_bin]
                    .iter()
                    .any(|&l| LabelScheme::type_of(l) == t);
            c.gold += 1;
            c.predicted += 1;
            c.hit_gold += usize::from(hit);
            c.hit_pred += usize::from(hit);
        }
        per_stream.push(c);
    }
    Ok(aggregate(Protocol::Relaxed, aggregation, &per_stream))
}

/// Maximal runs of consecutive `true` bins, as inclusive ranges.
pub fn positive_runs(bins: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &b) in bins.iter().enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, bins.len() - 1));
    }
    runs
}

/// Presence/absence scoring. A gold span is recalled when any of its bins is
/// flagged; each maximal flagged run is one predicted event, correct when it
/// overlaps some gold span.
pub fn eval_binary_event(
    gold: &[Vec<SubEventSpan>],
    predicted: &[Vec<bool>],
    aggregation: Aggregation,
) -> Result<EvalReport> {
    check_lengths("stream count", gold.len(), predicted.len())?;
    let mut per_stream = Vec::with_capacity(gold.len());
    for (spans, p) in gold.iter().zip(predicted) {
        let runs = positive_runs(p);
        let mut c = Counts {
            gold: spans.len(),
            predicted: runs.len(),
            ..Counts::default()
        };
        c.hit_gold = spans
            .iter()
            .filter(|s| (s.first_bin..=s.last_bin).any(|b| p.get(b).copied().unwrap_or(false)))
            .count();
        c.hit_pred = runs
            .iter()
            .filter(|&&(a, b)| spans.iter().any(|s| s.first_bin <= b && a <= s.last_bin))
            .count();
        per_stream.push(c);
    }
    Ok(aggregate(Protocol::BinaryEvent, aggregation, &per_stream))
}

/// Rate-threshold detector parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurstConfig {
    pub threshold: f64,
    pub window: usize,
}

impl Default for BurstConfig {
    fn default() -> Self {
        BurstConfig {
            threshold: 3.0,
            window: 5,
        }
    }
}

/// Flags bins whose post count reaches `threshold` (absolute, `window = 0`)
/// or `threshold` times the mean of the previous `window` counts. Missing
/// history at the start of the stream is filled with the stream mean.
pub fn burst_baseline(counts: &[usize], config: BurstConfig) -> Result<Vec<bool>> {
    if config.threshold.is_nan() || config.threshold <= 0.0 {
        return Err(Error::config(format!(
            "burst threshold must be positive, got {}",
            config.threshold
        )));
    }
    if counts.is_empty() {
        return Ok(Vec::new());
    }
    let global = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let w = config.window;
    Ok((0..counts.len())
        .map(|i| {
            let c = counts[i] as f64;
            if w == 0 {
                return c >= config.threshold;
            }
            let history: f64 = (0..w)
                .map(|k| match (i + k).checked_sub(w) {
                    Some(j) => counts[j] as f64,
                    None => global,
                })
                .sum();
            c > 0.0 && c >= config.threshold * history / w as f64
        })
        .collect())
}
