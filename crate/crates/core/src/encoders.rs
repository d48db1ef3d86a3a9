//! Bin representations: one fixed-size vector per time bin, built either from
//! the bin's concatenated words or from per-tweet vectors.

use serde::{Deserialize, Serialize};

use crate::autodiff::{
    init, lstm_sequence, Graph, LstmWeights, ParamStore, PoolKind, Rng, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::ingest::Bin;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    WordTfIdf,
    WordAvg,
    WordCnnAvg,
    WordAttention,
    TweetAvg,
    TweetAttention,
    TweetCnn,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 7] = [
        EncoderKind::WordTfIdf,
        EncoderKind::WordAvg,
        EncoderKind::WordCnnAvg,
        EncoderKind::WordAttention,
        EncoderKind::TweetAvg,
        EncoderKind::TweetAttention,
        EncoderKind::TweetCnn,
    ];

    pub fn is_tweet_level(self) -> bool {
        matches!(
            self,
            EncoderKind::TweetAvg | EncoderKind::TweetAttention | EncoderKind::TweetCnn
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::WordTfIdf => "word-tf-idf",
            EncoderKind::WordAvg => "word-avg",
            EncoderKind::WordCnnAvg => "word-cnn-avg",
            EncoderKind::WordAttention => "word-attention",
            EncoderKind::TweetAvg => "tweet-avg",
            EncoderKind::TweetAttention => "tweet-attention",
            EncoderKind::TweetCnn => "tweet-cnn",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown encoder variant `{s}`")))
    }
}

/// Encoder architecture and sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    /// Per-tweet LSTM; tweet-level variants only.
    pub tweet_lstm: bool,
    pub d_embed: usize,
    pub d_tweet_lstm: usize,
    /// Output width of the tf-idf projection and of the CNN variants.
    pub d_bin: usize,
    /// Final pooling of the AVG variants.
    pub pooling: PoolKind,
    /// Word attention inside each tweet, then attention over tweets.
    pub hierarchical_attention: bool,
}

pub const CNN_WINDOW: usize = 3;

/// Embeddings start uniform in `±EMBED_INIT`. Bin vectors are means of means,
/// so a small initial scale leaves the first layers with near-zero inputs.
pub const EMBED_INIT: f64 = 1.0;

/// Initial value of biases feeding a ReLU. Zero would put units whose input
/// vanishes (an all-negative convolution, say) exactly on the kink.
pub const RELU_BIAS_INIT: f64 = 0.01;

pub(crate) fn relu_bias(d: usize) -> Tensor {
    Tensor::vector(vec![RELU_BIAS_INIT; d])
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tweet_lstm && !self.kind.is_tweet_level() {
            return Err(Error::config(format!(
                "tweet-level LSTM requested for word-level variant `{}`",
                self.kind.name()
            )));
        }
        if self.hierarchical_attention && self.kind != EncoderKind::WordAttention {
            return Err(Error::config(
                "hierarchical attention applies to word-attention only",
            ));
        }
        if self.d_embed == 0 || self.d_bin == 0 || (self.tweet_lstm && self.d_tweet_lstm == 0) {
            return Err(Error::config("encoder dimensions must be positive"));
        }
        Ok(())
    }

    fn tweet_dim(&self) -> usize {
        if self.tweet_lstm {
            self.d_tweet_lstm
        } else {
            self.d_embed
        }
    }

    /// Width of the bin vector produced by this encoder.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::WordTfIdf | EncoderKind::WordCnnAvg | EncoderKind::TweetCnn => self.d_bin,
            EncoderKind::WordAvg | EncoderKind::WordAttention => self.d_embed,
            EncoderKind::TweetAvg | EncoderKind::TweetAttention => self.tweet_dim(),
        }
    }

    /// Adds this encoder's freshly initialized parameters to `store`.
    pub fn init_params(&self, vocab_size: usize, store: &mut ParamStore, rng: &Rng) -> Result<()> {
        self.validate()?;
        let (d, t) = (self.d_embed, self.tweet_dim());
        if self.kind == EncoderKind::WordTfIdf {
            let w = init::glorot(
                &[vocab_size, self.d_bin],
                vocab_size,
                self.d_bin,
                &mut rng.substream("tfidf.w"),
            );
            store.insert("tfidf.w", w)?;
            store.insert("tfidf.b", relu_bias(self.d_bin))?;
            return Ok(());
        }
        store.insert(
            "embed",
            init::uniform(&[vocab_size, d], EMBED_INIT, &mut rng.substream("embed")),
        )?;
        if self.tweet_lstm {
            init_lstm("tweet_lstm", d, self.d_tweet_lstm, store, rng)?;
        }
        match self.kind {
            EncoderKind::WordCnnAvg => init_conv(d, self.d_bin, store, rng)?,
            EncoderKind::TweetCnn => init_conv(t, self.d_bin, store, rng)?,
            EncoderKind::WordAttention => {
                init_attention("attn", d, store, rng)?;
                if self.hierarchical_attention {
                    init_attention("attn_tweet", d, store, rng)?;
                }
            }
            EncoderKind::TweetAttention => init_attention("attn", t, store, rng)?,
            _ => {}
        }
        Ok(())
    }
}

pub(crate) fn init_lstm(
    prefix: &str,
    d_in: usize,
    hidden: usize,
    store: &mut ParamStore,
    rng: &Rng,
) -> Result<()> {
    let wx = format!("{prefix}.wx");
    let wh = format!("{prefix}.wh");
    store.insert(
        &wx,
        init::glorot(
            &[d_in, 4 * hidden],
            d_in,
            4 * hidden,
            &mut rng.substream(&wx),
        ),
    )?;
    store.insert(
        &wh,
        init::glorot(
            &[hidden, 4 * hidden],
            hidden,
            4 * hidden,
            &mut rng.substream(&wh),
        ),
    )?;
    let mut bias = vec![0.0; 4 * hidden];
    bias[hidden..2 * hidden].fill(1.0);
    store.insert(format!("{prefix}.b"), Tensor::vector(bias))?;
    Ok(())
}

pub(crate) fn lstm_weights(
    g: &mut Graph,
    params: &ParamStore,
    prefix: &str,
) -> Result<LstmWeights> {
    Ok(LstmWeights {
        input: g.param(params, &format!("{prefix}.wx"))?,
        recurrent: g.param(params, &format!("{prefix}.wh"))?,
        bias: g.param(params, &format!("{prefix}.b"))?,
    })
}

fn init_conv(d_in: usize, d_out: usize, store: &mut ParamStore, rng: &Rng) -> Result<()> {
    let k = init::glorot(
        &[CNN_WINDOW, d_in, d_out],
        CNN_WINDOW * d_in,
        CNN_WINDOW * d_out,
        &mut rng.substream("conv.kernel"),
    );
    store.insert("conv.kernel", k)?;
    store.insert("conv.bias", relu_bias(d_out))?;
    Ok(())
}

fn init_attention(prefix: &str, d: usize, store: &mut ParamStore, rng: &Rng) -> Result<()> {
    let w = format!("{prefix}.w");
    let v = format!("{prefix}.context");
    store.insert(&w, init::glorot(&[d, d], d, d, &mut rng.substream(&w)))?;
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[d]))?;
    store.insert(&v, init::glorot(&[d, 1], d, 1, &mut rng.substream(&v)))?;
    Ok(())
}

/// Document frequencies over training bins, each bin being one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfIdfStats {
    pub doc_freq: Vec<usize>,
    pub num_docs: usize,
}

impl TfIdfStats {
    pub fn fit<'a>(bins: impl IntoIterator<Item = &'a Bin>, vocab_size: usize) -> Result<Self> {
        let mut doc_freq = vec![0; vocab_size];
        let mut num_docs = 0;
        let mut seen = vec![usize::MAX; vocab_size];
        for bin in bins {
            for t in &bin.tweets {
                for &id in &t.tokens {
                    if seen[id] != num_docs {
                        seen[id] = num_docs;
                        doc_freq[id] += 1;
                    }
                }
            }
            num_docs += 1;
        }
        if num_docs == 0 {
            return Err(Error::config("tf-idf needs at least one training bin"));
        }
        Ok(TfIdfStats { doc_freq, num_docs })
    }

    /// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, id: usize) -> f64 {
        let df = self.doc_freq.get(id).copied().unwrap_or(0);
        ((1 + self.num_docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    /// L2-normalized tf-idf vector of a bin, raw counts as term frequency.
    pub fn vectorize(&self, bin: &Bin) -> Vec<f64> {
        let mut v = vec![0.0; self.doc_freq.len()];
        for t in &bin.tweets {
            for &id in &t.tokens {
                v[id] += 1.0;
            }
        }
        for (id, x) in v.iter_mut().enumerate() {
            if *x > 0.0 {
                *x *= self.idf(id);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// Additive attention over the rows of `x` (`[n, d]`): scores
/// `tanh(x W + b) · context`, softmax-normalized. Returns the weighted sum of
/// rows and the weights.
pub fn attend(g: &mut Graph, params: &ParamStore, prefix: &str, x: Var) -> Result<(Var, Var)> {
    let w = g.param(params, &format!("{prefix}.w"))?;
    let b = g.param(params, &format!("{prefix}.b"))?;
    let v = g.param(params, &format!("{prefix}.context"))?;
    let u = g.matmul(x, w)?;
    let u = g.add_row(u, b)?;
    let u = g.tanh(u);
    let scores = g.matmul(u, v)?;
    let alpha = g.softmax(scores);
    let alpha_t = g.transpose(alpha)?;
    let pooled = g.matmul(alpha_t, x)?;
    let d = g.value(x).shape()[1];
    Ok((g.reshape(pooled, &[d])?, alpha))
}

/// Bin encoder bound to a spec and, for the tf-idf variant, fitted statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub tfidf: Option<TfIdfStats>,
}

impl Encoder {
    pub fn new(spec: EncoderSpec, tfidf: Option<TfIdfStats>) -> Result<Self> {
        spec.validate()?;
        if spec.kind == EncoderKind::WordTfIdf && tfidf.is_none() {
            return Err(Error::config("word-tf-idf needs fitted tf-idf statistics"));
        }
        Ok(Encoder { spec, tfidf })
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Vector for one bin; empty bins map to the zero vector without touching
    /// any parameter.
    pub fn encode_bin(&self, g: &mut Graph, params: &ParamStore, bin: &Bin) -> Result<Var> {
        if bin.tweets.is_empty() {
            return Ok(g.constant(Tensor::zeros(&[self.output_dim()])));
        }
        let spec = &self.spec;
        match spec.kind {
            EncoderKind::WordTfIdf => {
                let stats = self.tfidf.as_ref().expect("checked in Encoder::new");
                if stats.doc_freq.len() != params.by_name("tfidf.w")?.shape()[0] {
                    return Err(Error::config(
                        "tf-idf statistics do not match the vocabulary",
                    ));
                }
                let x = g.constant(Tensor::vector(stats.vectorize(bin)));
                let w = g.param(params, "tfidf.w")?;
                let b = g.param(params, "tfidf.b")?;
                let h = g.matmul(x, w)?;
                let h = g.add_row(h, b)?;
                Ok(g.relu(h))
            }
            EncoderKind::WordAvg => {
                let e = self.embed_words(g, params, bin)?;
                g.pool(spec.pooling, e)
            }
            EncoderKind::WordCnnAvg => {
                let e = self.embed_words(g, params, bin)?;
                self.conv_pool(g, params, e)
            }
            EncoderKind::WordAttention if spec.hierarchical_attention => {
                let table = g.param(params, "embed")?;
                let mut per_tweet = Vec::with_capacity(bin.tweets.len());
                for t in &bin.tweets {
                    let e = g.embedding(table, &t.tokens)?;
                    per_tweet.push(attend(g, params, "attn", e)?.0);
                }
                let tweets = g.concat_rows(&per_tweet)?;
                Ok(attend(g, params, "attn_tweet", tweets)?.0)
            }
            EncoderKind::WordAttention => {
                let e = self.embed_words(g, params, bin)?;
                Ok(attend(g, params, "attn", e)?.0)
            }
            EncoderKind::TweetAvg => {
                let t = self.tweet_vectors(g, params, bin)?;
                g.pool(spec.pooling, t)
            }
            EncoderKind::TweetAttention => {
                let t = self.tweet_vectors(g, params, bin)?;
                Ok(attend(g, params, "attn", t)?.0)
            }
            EncoderKind::TweetCnn => {
                let t = self.tweet_vectors(g, params, bin)?;
                self.conv_pool(g, params, t)
            }
        }
    }

    fn embed_words(&self, g: &mut Graph, params: &ParamStore, bin: &Bin) -> Result<Var> {
        let table = g.param(params, "embed")?;
        g.embedding(table, &bin.words())
    }

    fn conv_pool(&self, g: &mut Graph, params: &ParamStore, x: Var) -> Result<Var> {
        let k = g.param(params, "conv.kernel")?;
        let b = g.param(params, "conv.bias")?;
        let c = g.conv1d(x, k, b)?;
        let c = g.relu(c);
        g.pool(PoolKind::Mean, c)
    }

    /// `[m, d]` matrix with one row per tweet: the mean word embedding, or the
    /// last hidden state of the tweet-level LSTM.
    pub fn tweet_vectors(&self, g: &mut Graph, params: &ParamStore, bin: &Bin) -> Result<Var> {
        let table = g.param(params, "embed")?;
        if self.spec.tweet_lstm {
            let w = lstm_weights(g, params, "tweet_lstm")?;
            let mut last = Vec::with_capacity(bin.tweets.len());
            for t in &bin.tweets {
                let e = g.embedding(table, &t.tokens)?;
                let hs = lstm_sequence(g, e, &w)?;
                last.push(*hs.last().expect("tweets hold at least one token"));
            }
            g.concat_rows(&last)
        } else {
            let e = g.embedding(table, &bin.words())?;
            let lens: Vec<usize> = bin.tweets.iter().map(|t| t.tokens.len()).collect();
            g.segment_mean(e, &lens)
        }
    }
}
