//! Browser demo bindings. Each export takes and returns JSON strings; the
//! `*_json` functions hold the logic and are what the native tests call.

use serde::{Deserialize, Serialize};
use serde_json::json;
use subevent::evalkit::{
    burst_baseline, eval_bin_level, eval_binary_event, eval_relaxed, Aggregation, BurstConfig,
    EvalReport, SubEventSpan,
};
use subevent::ingest::{tokenize, Vocab};
use subevent::labeler::{LabelScheme, OUTSIDE};
use subevent::synth::{generate, SynthConfig};
use wasm_bindgen::prelude::*;

/// Posts kept per bin for the hover preview.
const PREVIEW_POSTS: usize = 3;

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub seed: u64,
    pub n_bins: usize,
    pub spans: usize,
    pub base_rate: f64,
    pub burst_rate: f64,
    pub cue_prob: f64,
    pub theta: f64,
    pub window: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let burst = BurstConfig::default();
        SimulateParams {
            seed: 0,
            n_bins: 60,
            spans: 8,
            base_rate: synth.base_rate,
            burst_rate: synth.burst_rate,
            cue_prob: synth.cue_prob,
            theta: burst.threshold,
            window: burst.window,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Simulation {
    pub types: Vec<String>,
    pub counts: Vec<usize>,
    /// Gold sub-event type per bin, `"O"` outside spans.
    pub gold: Vec<String>,
    pub spans: Vec<SubEventSpan>,
    pub burst: Vec<bool>,
    pub burst_report: EvalReport,
    pub posts: Vec<Vec<String>>,
}

pub fn simulate_json(params: &str) -> Result<String, String> {
    let p: SimulateParams = serde_json::from_str(params).map_err(|e| e.to_string())?;
    let synth = SynthConfig {
        n_streams: 1,
        split: [0, 0, 1],
        n_bins: p.n_bins,
        spans_per_stream: p.spans,
        base_rate: p.base_rate,
        burst_rate: p.burst_rate,
        cue_prob: p.cue_prob,
        seed: p.seed,
        ..SynthConfig::default()
    };
    synth.validate().map_err(|e| e.to_string())?;
    let scheme = synth.scheme().map_err(|e| e.to_string())?;
    let raw = generate(&synth).map_err(|e| e.to_string())?.test.remove(0);
    let (example, _) = raw
        .to_example(&Vocab::from_tokens(std::iter::empty()), &scheme)
        .map_err(|e| e.to_string())?;
    let counts = example.counts();
    let burst = burst_baseline(
        &counts,
        BurstConfig {
            threshold: p.theta,
            window: p.window,
        },
    )
    .map_err(|e| e.to_string())?;
    let burst_report = eval_binary_event(
        std::slice::from_ref(&example.gold_spans),
        std::slice::from_ref(&burst),
        Aggregation::Micro,
    )
    .map_err(|e| e.to_string())?;
    let mut posts = vec![Vec::new(); counts.len()];
    let (start, interval) = (raw.annotation.start, raw.annotation.interval);
    for t in &raw.tweets {
        let bin = ((t.timestamp - start) / interval) as usize;
        if let Some(slot) = posts.get_mut(bin).filter(|s| s.len() < PREVIEW_POSTS) {
            slot.push(t.text.clone());
        }
    }
    let gold = example
        .gold_labels
        .iter()
        .map(|&l| type_name(&scheme, l))
        .collect();
    let sim = Simulation {
        types: scheme.types().to_vec(),
        counts,
        gold,
        spans: example.gold_spans,
        burst,
        burst_report,
        posts,
    };
    serde_json::to_string(&sim).map_err(|e| e.to_string())
}

fn type_name(scheme: &LabelScheme, label: usize) -> String {
    match LabelScheme::type_of(label) {
        Some(t) => scheme.type_name(t).to_string(),
        None => "O".to_string(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreInput {
    pub types: Vec<String>,
    pub spans: Vec<SubEventSpan>,
    /// Predicted type per bin, `"O"` for none.
    pub predicted: Vec<String>,
}

/// Converts per-bin types to BIO ids, opening a span wherever the type
/// changes.
fn types_to_labels(types: &[String], scheme: &LabelScheme) -> Result<Vec<usize>, String> {
    let mut prev = None;
    types
        .iter()
        .map(|name| {
            let t = if name == "O" {
                None
            } else {
                Some(
                    scheme
                        .type_id(name)
                        .ok_or_else(|| format!("unknown type `{name}`"))?,
                )
            };
            let label = match t {
                None => OUTSIDE,
                Some(t) if prev == Some(t) => LabelScheme::inside(t),
                Some(t) => LabelScheme::begin(t),
            };
            prev = t;
            Ok(label)
        })
        .collect()
}

/// Bin-level, relaxed and binary event-level micro reports for one
/// hand-edited prediction.
pub fn score_json(input: &str) -> Result<String, String> {
    let input: ScoreInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let scheme = LabelScheme::new(input.types.iter().cloned()).map_err(|e| e.to_string())?;
    let n = input.predicted.len();
    let gold =
        subevent::evalkit::spans_to_bio(n, &input.spans, &scheme).map_err(|e| e.to_string())?;
    let pred = types_to_labels(&input.predicted, &scheme)?;
    let flags: Vec<bool> = pred.iter().map(|&l| l != OUTSIDE).collect();
    let spans = [input.spans];
    let report = json!({
        "bin_level": eval_bin_level(&[gold], std::slice::from_ref(&pred), Aggregation::Micro).map_err(|e| e.to_string())?,
        "relaxed": eval_relaxed(&spans, &[pred], &scheme, Aggregation::Micro).map_err(|e| e.to_string())?,
        "binary_event": eval_binary_event(&spans, &[flags], Aggregation::Micro).map_err(|e| e.to_string())?,
    });
    Ok(report.to_string())
}

pub fn tokenize_json(text: &str) -> String {
    serde_json::to_string(&tokenize(text)).expect("strings serialize")
}

#[wasm_bindgen]
pub fn simulate(params: &str) -> Result<String, JsError> {
    simulate_json(params).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn score(input: &str) -> Result<String, JsError> {
    score_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = tokenize)]
pub fn tokenize_text(text: &str) -> String {
    tokenize_json(text)
}
