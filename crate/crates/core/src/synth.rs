//! Synthetic match streams: Poisson post counts with bursts inside gold
//! sub-events, and post texts in which type-specific cue words appear with
//! a probability that fades over the course of each sub-event.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::autodiff::Rng;
use crate::error::{Error, Result};
use crate::evalkit::SubEventSpan;
use crate::ingest::{write_stream, Annotation, RawStream, TweetRecord};
use crate::labeler::LabelScheme;

pub const MAX_REJECTIONS: usize = 10_000;
pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubEventType {
    pub name: String,
    /// Words that signal this type.
    pub cues: Vec<String>,
    /// Mean span length in bins; lengths are `1 + Geometric(1 / mean)`.
    #[serde(default = "default_mean_length")]
    pub mean_length: f64,
}

fn default_mean_length() -> f64 {
    2.0
}

impl SubEventType {
    fn new(name: &str, cues: [&str; 5]) -> Self {
        SubEventType {
            name: name.into(),
            cues: cues.map(String::from).to_vec(),
            mean_length: default_mean_length(),
        }
    }
}

pub fn default_types() -> Vec<SubEventType> {
    vec![
        SubEventType::new("goal", ["goal", "scores", "net", "equaliser", "header"]),
        SubEventType::new(
            "kick-off",
            ["kickoff", "underway", "lineup", "anthem", "begins"],
        ),
        SubEventType::new(
            "half-time",
            ["halftime", "break", "interval", "tea", "sheets"],
        ),
        SubEventType::new(
            "yellow-card",
            ["yellow", "booked", "caution", "card", "tackle"],
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_streams: usize,
    /// Train / dev / test stream counts, in stream-id order.
    pub split: [usize; 3],
    pub n_bins: usize,
    pub interval: i64,
    pub start_time: i64,
    /// Mean posts per bin outside sub-events.
    pub base_rate: f64,
    /// Mean posts per bin in the first bin of a sub-event.
    pub burst_rate: f64,
    pub spans_per_stream: usize,
    pub types: Vec<SubEventType>,
    pub noise_vocab: usize,
    /// Probability that a post in the first bin of a sub-event carries a cue.
    pub cue_prob: f64,
    /// Probability that a post outside any sub-event carries a random cue,
    /// and separately a random excitement word.
    pub stray_cue_prob: f64,
    /// Per-bin factor applied to the cue probability after the first bin of
    /// a sub-event.
    pub tail_decay: f64,
    /// Per-bin factor applied to the burst's excess rate after the first bin.
    pub rate_decay: f64,
    /// Type-agnostic words that accompany every kind of sub-event.
    pub excitement: Vec<String>,
    /// Probability that a post inside a sub-event carries an excitement word.
    pub excitement_prob: f64,
    /// Unannotated single-bin bursts of cue-free chatter per stream.
    pub distractors: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that a post mentions a user, and that it carries a link.
    pub mention_prob: f64,
    pub url_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_streams: 20,
            split: [3, 7, 10],
            n_bins: 95,
            interval: 60,
            start_time: 1_402_500_000,
            base_rate: 8.0,
            burst_rate: 40.0,
            spans_per_stream: 16,
            types: default_types(),
            noise_vocab: 500,
            cue_prob: 0.7,
            stray_cue_prob: 0.02,
            tail_decay: 0.05,
            rate_decay: 0.7,
            excitement: ["wow", "unbelievable", "scenes", "omg", "incredible"]
                .map(String::from)
                .to_vec(),
            excitement_prob: 0.6,
            distractors: 3,
            min_words: 4,
            max_words: 12,
            mention_prob: 0.1,
            url_prob: 0.05,
            seed: 0,
        }
    }
}

fn noise_word(i: usize) -> String {
    format!("w{i:03}")
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {p} is not a probability")))
            }
        };
        prob("cue_prob", self.cue_prob)?;
        prob("stray_cue_prob", self.stray_cue_prob)?;
        prob("tail_decay", self.tail_decay)?;
        prob("rate_decay", self.rate_decay)?;
        prob("excitement_prob", self.excitement_prob)?;
        prob("mention_prob", self.mention_prob)?;
        prob("url_prob", self.url_prob)?;
        if !(self.base_rate > 0.0
            && self.burst_rate > 0.0
            && self.base_rate.is_finite()
            && self.burst_rate.is_finite())
        {
            return Err(Error::config("base_rate and burst_rate must be positive"));
        }
        if self.split.iter().sum::<usize>() != self.n_streams {
            return Err(Error::config(format!(
                "split {:?} does not add up to n_streams = {}",
                self.split, self.n_streams
            )));
        }
        if self.n_bins == 0 || self.interval <= 0 {
            return Err(Error::config("n_bins and interval must be positive"));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::config("need 1 <= min_words <= max_words"));
        }
        if self.types.is_empty() {
            return Err(Error::config("type inventory is empty"));
        }
        LabelScheme::new(self.types.iter().map(|t| t.name.clone()))?;
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.types {
            if t.cues.is_empty() {
                return Err(Error::config(format!("type `{}` has no cue words", t.name)));
            }
            if !(t.mean_length >= 1.0 && t.mean_length.is_finite()) {
                return Err(Error::config(format!(
                    "type `{}`: mean_length must be >= 1",
                    t.name
                )));
            }
        }
        if self.excitement.is_empty() && self.excitement_prob > 0.0 {
            return Err(Error::config("excitement_prob > 0 needs excitement words"));
        }
        {
            let words = self
                .types
                .iter()
                .flat_map(|t| &t.cues)
                .chain(&self.excitement);
            for c in words {
                let tokens = crate::ingest::tokenize(c);
                if tokens.len() != 1 || tokens[0] != *c {
                    return Err(Error::config(format!(
                        "cue `{c}` is not a single lowercase word"
                    )));
                }
                if !seen.insert(c.clone()) {
                    return Err(Error::config(format!("cue `{c}` is listed twice")));
                }
                if c.len() == 4
                    && c.starts_with('w')
                    && c[1..].parse::<usize>().is_ok_and(|i| i < self.noise_vocab)
                {
                    return Err(Error::config(format!(
                        "cue `{c}` collides with the noise vocabulary"
                    )));
                }
            }
        }
        if self.noise_vocab == 0 || self.noise_vocab > 1000 {
            return Err(Error::config("noise_vocab must be in 1..=1000"));
        }
        Ok(())
    }

    pub fn scheme(&self) -> Result<LabelScheme> {
        LabelScheme::new(self.types.iter().map(|t| t.name.clone()))
    }

    pub fn stream_id(&self, index: usize) -> String {
        format!("match-{index:02}")
    }

    /// Split name of the stream at `index`.
    pub fn split_of(&self, index: usize) -> &'static str {
        if index < self.split[0] {
            SPLITS[0]
        } else if index < self.split[0] + self.split[1] {
            SPLITS[1]
        } else {
            SPLITS[2]
        }
    }
}

/// Generated streams grouped by split.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub train: Vec<RawStream>,
    pub dev: Vec<RawStream>,
    pub test: Vec<RawStream>,
}

impl SynthDataset {
    pub fn splits(&self) -> [(&'static str, &[RawStream]); 3] {
        [
            (SPLITS[0], &self.train),
            (SPLITS[1], &self.dev),
            (SPLITS[2], &self.test),
        ]
    }

    /// Writes `train/`, `dev/` and `test/` subdirectories under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, streams) in self.splits() {
            let sub = dir.join(name);
            std::fs::create_dir_all(&sub)?;
            for s in streams {
                write_stream(&sub, s)?;
            }
        }
        Ok(())
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let root = Rng::new(config.seed);
    let mut out = SynthDataset {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for i in 0..config.n_streams {
        let id = config.stream_id(i);
        let stream = generate_stream(config, &id, &mut root.substream(&id))?;
        match config.split_of(i) {
            "train" => out.train.push(stream),
            "dev" => out.dev.push(stream),
            _ => out.test.push(stream),
        }
    }
    Ok(out)
}

/// What a bin looks like to the generator.
#[derive(Clone, Copy, Debug, PartialEq)]
enum BinKind {
    Quiet,
    /// Type index and offset from the span's first bin.
    Event(usize, usize),
    Distractor,
}

/// Consecutive failed placements after which the whole layout is redrawn,
/// so that one unlucky early span cannot wedge the stream.
const RESTART_AFTER: usize = 100;

fn try_place(
    n_bins: usize,
    len: usize,
    occupied: &[bool],
    rng: &mut ChaCha8Rng,
    rejections: &mut usize,
) -> Result<Option<usize>> {
    for _ in 0..RESTART_AFTER {
        if len <= n_bins {
            let start = rng.random_range(0..=n_bins - len);
            if !occupied[start..start + len].iter().any(|&o| o) {
                return Ok(Some(start));
            }
        }
        *rejections += 1;
        if *rejections > MAX_REJECTIONS {
            return Err(Error::config(format!(
                "could not place non-overlapping spans after {MAX_REJECTIONS} rejections; \
                 lower spans_per_stream or distractors, or raise n_bins"
            )));
        }
    }
    Ok(None)
}

fn sample_layout(
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<BinKind>, Vec<SubEventSpan>)> {
    let mut rejections = 0;
    'layout: loop {
        let n = config.n_bins;
        let mut kinds = vec![BinKind::Quiet; n];
        let mut occupied = vec![false; n];
        let mut spans = Vec::with_capacity(config.spans_per_stream);
        for _ in 0..config.spans_per_stream {
            let t = rng.random_range(0..config.types.len());
            let p = 1.0 / config.types[t].mean_length;
            let extra = if p >= 1.0 {
                0
            } else {
                Geometric::new(p).expect("0 < p < 1").sample(rng) as usize
            };
            let len = 1 + extra;
            let Some(start) = try_place(n, len, &occupied, rng, &mut rejections)? else {
                continue 'layout;
            };
            for (k, b) in (start..start + len).enumerate() {
                occupied[b] = true;
                kinds[b] = BinKind::Event(t, k);
            }
            spans.push(SubEventSpan::new(
                config.types[t].name.clone(),
                start,
                start + len - 1,
            ));
        }
        for _ in 0..config.distractors {
            let Some(b) = try_place(n, 1, &occupied, rng, &mut rejections)? else {
                continue 'layout;
            };
            occupied[b] = true;
            kinds[b] = BinKind::Distractor;
        }
        spans.sort_by_key(|s| s.first_bin);
        return Ok((kinds, spans));
    }
}

fn post_text(
    config: &SynthConfig,
    cue: Option<usize>,
    excited: bool,
    rng: &mut ChaCha8Rng,
) -> String {
    let len = rng.random_range(config.min_words..=config.max_words);
    let mut words: Vec<String> = (0..len)
        .map(|_| noise_word(rng.random_range(0..config.noise_vocab)))
        .collect();
    if let Some(t) = cue {
        let cue = config.types[t]
            .cues
            .choose(rng)
            .expect("validated non-empty");
        let at = rng.random_range(0..words.len());
        words[at] = cue.clone();
    }
    if excited {
        let word = config.excitement.choose(rng).expect("validated non-empty");
        let at = rng.random_range(0..=words.len());
        words.insert(at, word.clone());
    }
    if rng.random_bool(config.mention_prob) {
        words.insert(0, format!("@fan{}", rng.random_range(0..1000)));
    }
    if rng.random_bool(config.url_prob) {
        words.push(format!("https://t.co/{:08x}", rng.random::<u32>()));
    }
    words.join(" ")
}

fn generate_stream(config: &SynthConfig, id: &str, rng: &mut ChaCha8Rng) -> Result<RawStream> {
    let (kinds, spans) = sample_layout(config, rng)?;
    let excess = config.burst_rate - config.base_rate;
    let mut tweets = Vec::new();
    for (b, kind) in kinds.iter().enumerate() {
        let (rate, cue_prob, excitement_prob) = match *kind {
            BinKind::Quiet => (
                config.base_rate,
                config.stray_cue_prob,
                config.stray_cue_prob,
            ),
            BinKind::Event(_, k) => (
                config.base_rate + excess * config.rate_decay.powi(k as i32),
                config.cue_prob * config.tail_decay.powi(k as i32),
                config.excitement_prob,
            ),
            BinKind::Distractor => (config.burst_rate, 0.0, 0.0),
        };
        let count = Poisson::new(rate.max(1e-9))
            .expect("positive rate")
            .sample(rng) as usize;
        let bin_start = config.start_time + b as i64 * config.interval;
        for _ in 0..count {
            let cue = rng.random_bool(cue_prob).then(|| match *kind {
                BinKind::Event(t, _) => t,
                _ => rng.random_range(0..config.types.len()),
            });
            let excited = rng.random_bool(excitement_prob);
            let text = post_text(config, cue, excited, rng);
            tweets.push(TweetRecord {
                id: format!("{id}-{:05}", tweets.len()),
                timestamp: bin_start + rng.random_range(0..config.interval),
                text,
            });
        }
    }
    Ok(RawStream {
        annotation: Annotation {
            stream_id: id.to_string(),
            start: config.start_time,
            end: config.start_time + config.n_bins as i64 * config.interval,
            interval: config.interval,
            spans,
        },
        tweets,
    })
}
