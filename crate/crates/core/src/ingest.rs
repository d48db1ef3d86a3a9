//! Post streams on disk, tokenization, vocabulary and time binning.
//!
//! A dataset directory holds one pair of files per stream:
//! `<stream_id>.tweets.jsonl` (one `{"id", "ts", "text"}` object per line)
//! and `<stream_id>.annotation.json` (window, bin width and gold spans).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{spans_to_bio, SubEventSpan};
use crate::labeler::LabelScheme;

pub const TWEETS_SUFFIX: &str = ".tweets.jsonl";
pub const ANNOTATION_SUFFIX: &str = ".annotation.json";

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const URL: usize = 2;
pub const USER: usize = 3;
pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";
const RESERVED: [&str; 4] = ["<pad>", "<unk>", URL_TOKEN, USER_TOKEN];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    #[serde(rename = "ts")]
    pub timestamp: i64,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub stream_id: String,
    pub start: i64,
    pub end: i64,
    pub interval: i64,
    pub spans: Vec<SubEventSpan>,
}

impl Annotation {
    /// Number of bins covering `[start, end)`.
    pub fn num_bins(&self) -> Result<usize> {
        if self.interval <= 0 {
            return Err(Error::config(format!(
                "bin interval must be positive, got {}",
                self.interval
            )));
        }
        if self.end <= self.start {
            return Err(Error::config(format!(
                "stream window [{}, {}) is empty",
                self.start, self.end
            )));
        }
        Ok(((self.end - self.start + self.interval - 1) / self.interval) as usize)
    }
}

/// A stream as stored on disk, before tokenization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawStream {
    pub annotation: Annotation,
    pub tweets: Vec<TweetRecord>,
}

/// Lowercases, maps URLs and @-mentions to marker tokens, strips `#`, and
/// splits on whitespace and punctuation, dropping the punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        if lower.starts_with("http://")
            || lower.starts_with("https://")
            || lower.starts_with("www.")
        {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        if let Some(rest) = lower.strip_prefix('@') {
            if rest
                .chars()
                .next()
                .is_some_and(|c| c.is_alphanumeric() || c == '_')
            {
                out.push(USER_TOKEN.to_string());
                continue;
            }
        }
        out.extend(
            lower
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(str::to_string),
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps tokens seen at least `min_count` times; ids follow descending
    /// frequency, ties broken lexicographically.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a [String]>, min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            for t in doc {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count.max(1) && !RESERVED.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Rebuilds a vocabulary from its non-reserved tokens in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(tokens)
            .collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Non-reserved tokens in id order.
    pub fn entries(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// Token ids of `text`; an empty result becomes a single UNK.
    pub fn encode(&self, text: &str) -> TokenizedTweet {
        let mut tokens: Vec<usize> = tokenize(text).iter().map(|t| self.id(t)).collect();
        if tokens.is_empty() {
            tokens.push(UNK);
        }
        TokenizedTweet { tokens }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedTweet {
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bin {
    pub index: usize,
    pub start_time: i64,
    pub tweets: Vec<TokenizedTweet>,
}

impl Bin {
    pub fn num_tweets(&self) -> usize {
        self.tweets.len()
    }

    pub fn num_words(&self) -> usize {
        self.tweets.iter().map(|t| t.tokens.len()).sum()
    }

    /// Words of all tweets, concatenated in chronological order.
    pub fn words(&self) -> Vec<usize> {
        self.tweets
            .iter()
            .flat_map(|t| t.tokens.iter().copied())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamExample {
    pub stream_id: String,
    pub bins: Vec<Bin>,
    pub gold_labels: Vec<usize>,
    pub gold_spans: Vec<SubEventSpan>,
}

impl StreamExample {
    pub fn counts(&self) -> Vec<usize> {
        self.bins.iter().map(Bin::num_tweets).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Binning {
    pub bins: Vec<Bin>,
    /// Posts outside the stream window.
    pub discarded: usize,
}

/// Places each post in bin `⌊(ts − start) / interval⌋`. Posts are ordered by
/// `(timestamp, id)` first so the result does not depend on input order.
pub fn assign_bins(
    tweets: &[TweetRecord],
    start: i64,
    end: i64,
    interval: i64,
    vocab: &Vocab,
) -> Result<Binning> {
    if interval <= 0 {
        return Err(Error::config(format!(
            "bin interval must be positive, got {interval}"
        )));
    }
    if end <= start {
        return Err(Error::config(format!(
            "stream window [{start}, {end}) is empty"
        )));
    }
    let n = ((end - start + interval - 1) / interval) as usize;
    let mut bins: Vec<Bin> = (0..n)
        .map(|i| Bin {
            index: i,
            start_time: start + i as i64 * interval,
            tweets: Vec::new(),
        })
        .collect();
    let mut sorted: Vec<&TweetRecord> = tweets.iter().collect();
    sorted.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
    let mut discarded = 0;
    for t in sorted {
        if t.timestamp < start || t.timestamp >= end {
            discarded += 1;
            continue;
        }
        let i = ((t.timestamp - start) / interval) as usize;
        bins[i].tweets.push(vocab.encode(&t.text));
    }
    Ok(Binning { bins, discarded })
}

pub fn align_labels(
    bins: &[Bin],
    spans: &[SubEventSpan],
    scheme: &LabelScheme,
) -> Result<Vec<usize>> {
    spans_to_bio(bins.len(), spans, scheme)
}

impl RawStream {
    pub fn to_example(
        &self,
        vocab: &Vocab,
        scheme: &LabelScheme,
    ) -> Result<(StreamExample, usize)> {
        let a = &self.annotation;
        let binning = assign_bins(&self.tweets, a.start, a.end, a.interval, vocab)?;
        let gold_labels = align_labels(&binning.bins, &a.spans, scheme)
            .map_err(|e| Error::Annotation(format!("stream `{}`: {e}", a.stream_id)))?;
        Ok((
            StreamExample {
                stream_id: a.stream_id.clone(),
                bins: binning.bins,
                gold_labels,
                gold_spans: a.spans.clone(),
            },
            binning.discarded,
        ))
    }

    /// Tokenized texts, for vocabulary building.
    pub fn token_docs(&self) -> Vec<Vec<String>> {
        self.tweets.iter().map(|t| tokenize(&t.text)).collect()
    }
}

fn validate_tweet(t: &TweetRecord, location: impl FnOnce() -> String) -> Result<()> {
    if t.timestamp < 0 {
        return Err(Error::Parse {
            location: location(),
            message: format!("negative timestamp {}", t.timestamp),
        });
    }
    if t.text.trim().is_empty() {
        return Err(Error::Parse {
            location: location(),
            message: format!("post `{}` has empty text", t.id),
        });
    }
    Ok(())
}

pub fn read_tweets(reader: impl BufRead, source: &str) -> Result<Vec<TweetRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let location = || format!("{source}:{}", i + 1);
        let t: TweetRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: location(),
            message: e.to_string(),
        })?;
        validate_tweet(&t, location)?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_tweets(mut w: impl Write, tweets: &[TweetRecord]) -> Result<()> {
    for t in tweets {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_stream(dir: &Path, stream_id: &str) -> Result<RawStream> {
    let ann_path = dir.join(format!("{stream_id}{ANNOTATION_SUFFIX}"));
    let tw_path = dir.join(format!("{stream_id}{TWEETS_SUFFIX}"));
    let annotation: Annotation =
        serde_json::from_slice(&fs::read(&ann_path)?).map_err(|e| Error::Parse {
            location: ann_path.display().to_string(),
            message: e.to_string(),
        })?;
    annotation.num_bins()?;
    let file = fs::File::open(&tw_path)?;
    let tweets = read_tweets(
        std::io::BufReader::new(file),
        &tw_path.display().to_string(),
    )?;
    Ok(RawStream { annotation, tweets })
}

pub fn write_stream(dir: &Path, stream: &RawStream) -> Result<()> {
    fs::create_dir_all(dir)?;
    let id = &stream.annotation.stream_id;
    let mut ann = serde_json::to_vec_pretty(&stream.annotation)?;
    ann.push(b'\n');
    fs::write(dir.join(format!("{id}{ANNOTATION_SUFFIX}")), ann)?;
    let mut buf = Vec::new();
    write_tweets(&mut buf, &stream.tweets)?;
    fs::write(dir.join(format!("{id}{TWEETS_SUFFIX}")), buf)?;
    Ok(())
}

/// Every stream of a dataset directory, ordered by stream id.
pub fn read_dataset(dir: &Path) -> Result<Vec<RawStream>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        if let Some(id) = name
            .to_str()
            .and_then(|n| n.strip_suffix(ANNOTATION_SUFFIX))
        {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::config(format!(
            "no `*{ANNOTATION_SUFFIX}` files in {}",
            dir.display()
        )));
    }
    ids.iter().map(|id| read_stream(dir, id)).collect()
}

/// Converts raw streams, returning the total number of discarded posts.
pub fn to_examples(
    streams: &[RawStream],
    vocab: &Vocab,
    scheme: &LabelScheme,
) -> Result<(Vec<StreamExample>, usize)> {
    let mut discarded = 0;
    let mut out = Vec::with_capacity(streams.len());
    for s in streams {
        let (ex, d) = s.to_example(vocab, scheme)?;
        discarded += d;
        out.push(ex);
    }
    Ok((out, discarded))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tw(id: &str, ts: i64, text: &str) -> TweetRecord {
        TweetRecord {
            id: id.into(),
            timestamp: ts,
            text: text.into(),
        }
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("GOAL!!! #WorldCup http://t.co/x"),
            ["goal", "worldcup", "<url>"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("@ref Yellow card"), ["<user>", "yellow", "card"]);
        assert_eq!(
            tokenize("what a save... @gk_1: WWW.fifa.com"),
            ["what", "a", "save", "<user>", "<url>"]
        );
        assert!(tokenize("!!! ...").is_empty());
    }

    #[test]
    fn vocab_reserves_ids_and_applies_floor() {
        let docs = [tokenize("goal goal card"), tokenize("goal card rare <url>")];
        let v = Vocab::build(docs.iter().map(Vec::as_slice), 2);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("goal"), 4);
        assert_eq!(v.id("card"), 5);
        assert_eq!(v.id("rare"), UNK);
        assert_eq!(v.id(URL_TOKEN), URL);
        assert_eq!(v.id(USER_TOKEN), USER);
        assert_eq!(v.encode("!!!").tokens, [UNK]);
        assert_eq!(Vocab::from_tokens(v.entries().to_vec()), v);
    }

    #[test]
    fn binning_examples() {
        let v = Vocab::from_tokens(Vec::new());
        let b = assign_bins(
            &[tw("a", 1005, "x"), tw("b", 1061, "y")],
            1000,
            1120,
            60,
            &v,
        )
        .unwrap();
        assert_eq!(b.bins.len(), 2);
        assert_eq!(b.bins[0].num_tweets(), 1);
        assert_eq!(b.bins[1].num_tweets(), 1);
        assert_eq!(b.bins[1].start_time, 1060);

        let b = assign_bins(&[], 0, 95 * 60, 60, &v).unwrap();
        assert_eq!(b.bins.len(), 95);
        let b = assign_bins(&[], 0, 180, 60, &v).unwrap();
        assert!(b.bins.iter().all(|bin| bin.tweets.is_empty()));
        assert_eq!(b.bins.len(), 3);

        let b = assign_bins(
            &[tw("a", 10, "x"), tw("b", 400, "y"), tw("c", 0, "z")],
            5,
            125,
            60,
            &v,
        )
        .unwrap();
        assert_eq!(b.discarded, 2);

        assert!(matches!(
            assign_bins(&[], 0, 10, 0, &v),
            Err(Error::Config(_))
        ));
        // partial last interval still yields a bin
        assert_eq!(assign_bins(&[], 0, 61, 60, &v).unwrap().bins.len(), 2);
    }

    #[test]
    fn binning_ignores_input_order() {
        let v = Vocab::build([tokenize("a b c d")].iter().map(Vec::as_slice), 1);
        let tweets = vec![tw("2", 30, "b"), tw("1", 30, "a"), tw("3", 5, "c d")];
        let mut rev = tweets.clone();
        rev.reverse();
        let x = assign_bins(&tweets, 0, 60, 60, &v).unwrap();
        let y = assign_bins(&rev, 0, 60, 60, &v).unwrap();
        assert_eq!(x, y);
        assert_eq!(
            x.bins[0].words(),
            [v.id("c"), v.id("d"), v.id("a"), v.id("b")]
        );
    }

    #[test]
    fn parse_rejects_empty_text_and_negative_time() {
        let input =
            "{\"id\":\"1\",\"ts\":3,\"text\":\"ok\"}\n{\"id\":\"2\",\"ts\":4,\"text\":\"   \"}\n";
        let err = read_tweets(input.as_bytes(), "t.jsonl")
            .unwrap_err()
            .to_string();
        assert!(err.starts_with("t.jsonl:2"), "{err}");
        let input = "{\"id\":\"1\",\"ts\":-3,\"text\":\"ok\"}\n";
        assert!(read_tweets(input.as_bytes(), "t").is_err());
    }

    #[test]
    fn align_labels_reports_overlap() {
        let v = Vocab::from_tokens(Vec::new());
        let scheme = LabelScheme::new(["goal", "card"]).unwrap();
        let bins = assign_bins(&[], 0, 300, 60, &v).unwrap().bins;
        let spans = [
            SubEventSpan::new("goal", 0, 2),
            SubEventSpan::new("card", 2, 3),
        ];
        assert!(matches!(
            align_labels(&bins, &spans, &scheme),
            Err(Error::Annotation(_))
        ));
        let spans = [SubEventSpan::new("card", 3, 4)];
        assert_eq!(
            align_labels(&bins, &spans, &scheme).unwrap(),
            [0, 0, 0, 3, 4]
        );
    }

    #[test]
    fn stream_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stream = RawStream {
            annotation: Annotation {
                stream_id: "m01".into(),
                start: 100,
                end: 400,
                interval: 60,
                spans: vec![SubEventSpan::new("goal", 1, 2)],
            },
            tweets: vec![tw("x", 130, "Goal \"quoted\" ü"), tw("y", 101, "kick off")],
        };
        write_stream(dir.path(), &stream).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), vec![stream]);
    }
}
