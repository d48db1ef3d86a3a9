//! Per-bin sub-event labeling: bin encoder, optional chronological LSTM over
//! the bins, and a dense classifier producing BIO or binary logits.

mod check;
mod scheme;
mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    init, lstm_sequence, read_checkpoint, write_checkpoint, Graph, Mode, ParamStore, PoolKind, Rng,
    Tensor, Var,
};
use crate::encoders::{init_lstm, lstm_weights, Encoder, EncoderKind, EncoderSpec, TfIdfStats};
use crate::error::{Error, Result};
use crate::ingest::{StreamExample, Vocab};

pub use check::{gradcheck_configs, gradcheck_model, toy_stream, GradCheckCase};
pub use scheme::{LabelScheme, Tag, OUTSIDE};
pub use train::{
    train, train_with_progress, write_learning_curve, EpochRecord, TrainOutcome, CURVE_HEADER,
};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SIDECAR_FILE: &str = "model.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Bio,
    Binary,
}

/// Event / no-event class ids of the binary head.
pub const NO_EVENT: usize = 0;
pub const EVENT: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: EncoderKind,
    pub tweet_lstm: bool,
    pub chronological: bool,
    pub head: Head,
    pub d_embed: usize,
    pub d_tweet_lstm: usize,
    pub d_bin: usize,
    pub d_chrono: usize,
    pub dropout_p: f64,
    pub seed: u64,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub pooling: PoolKind,
    pub hierarchical_attention: bool,
    /// Inverse-frequency class weights in the loss.
    pub class_weighting: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: EncoderKind::TweetAvg,
            tweet_lstm: false,
            chronological: true,
            head: Head::Bio,
            d_embed: 64,
            d_tweet_lstm: 64,
            d_bin: 64,
            d_chrono: 128,
            dropout_p: 0.3,
            seed: 0,
            epochs: 100,
            patience: 10,
            lr: 1e-2,
            pooling: PoolKind::Mean,
            hierarchical_attention: false,
            class_weighting: false,
        }
    }
}

impl ModelConfig {
    /// The binary presence/absence baseline: word averages and an MLP.
    pub fn binary_baseline() -> Self {
        ModelConfig {
            variant: EncoderKind::WordAvg,
            chronological: false,
            head: Head::Binary,
            ..ModelConfig::default()
        }
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            kind: self.variant,
            tweet_lstm: self.tweet_lstm,
            d_embed: self.d_embed,
            d_tweet_lstm: self.d_tweet_lstm,
            d_bin: self.d_bin,
            pooling: self.pooling,
            hierarchical_attention: self.hierarchical_attention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_spec().validate()?;
        if self.d_chrono == 0 {
            return Err(Error::config("d_chrono must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.head == Head::Binary && self.chronological {
            return Err(Error::config(
                "the binary head classifies bins independently; set chronological to false",
            ));
        }
        Ok(())
    }

    pub fn num_classes(&self, scheme: &LabelScheme) -> usize {
        match self.head {
            Head::Bio => scheme.num_labels(),
            Head::Binary => 2,
        }
    }
}

/// Everything needed to run a trained labeler.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub scheme: LabelScheme,
    pub vocab: Vocab,
    pub encoder: Encoder,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    config: ModelConfig,
    scheme: LabelScheme,
    labels: Vec<String>,
    vocab: Vec<String>,
    tfidf: Option<TfIdfStats>,
}

impl Model {
    /// Fresh parameters seeded from `config.seed`. Tf-idf statistics are fitted
    /// on `train` when the variant needs them.
    pub fn new(
        config: ModelConfig,
        scheme: LabelScheme,
        vocab: Vocab,
        train: &[StreamExample],
    ) -> Result<Self> {
        config.validate()?;
        let tfidf = if config.variant == EncoderKind::WordTfIdf {
            Some(TfIdfStats::fit(
                train.iter().flat_map(|s| &s.bins),
                vocab.len(),
            )?)
        } else {
            None
        };
        let params = init_params(&config, &scheme, vocab.len())?;
        let encoder = Encoder::new(config.encoder_spec(), tfidf)?;
        Ok(Model {
            config,
            scheme,
            vocab,
            encoder,
            params,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes(&self.scheme)
    }

    /// Gold class ids of a stream under this model's head.
    pub fn targets(&self, stream: &StreamExample) -> Vec<usize> {
        match self.config.head {
            Head::Bio => stream.gold_labels.clone(),
            Head::Binary => stream
                .gold_labels
                .iter()
                .map(|&l| if l == OUTSIDE { NO_EVENT } else { EVENT })
                .collect(),
        }
    }

    /// `[n_bins, C]` logits for `stream` computed with `params`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        stream: &StreamExample,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if stream.bins.is_empty() {
            return Err(Error::config(format!(
                "stream `{}` has no bins",
                stream.stream_id
            )));
        }
        let p = self.config.dropout_p;
        let bins = stream
            .bins
            .iter()
            .map(|b| self.encoder.encode_bin(g, params, b))
            .collect::<Result<Vec<_>>>()?;
        let x = g.concat_rows(&bins)?;
        let x = g.dropout(x, p, mode, rng)?;
        let hidden = if self.config.chronological {
            let w = lstm_weights(g, params, "chrono")?;
            let hs = lstm_sequence(g, x, &w)?;
            let h = g.concat_rows(&hs)?;
            g.dropout(h, p, mode, rng)?
        } else {
            let w = g.param(params, "mlp.w")?;
            let b = g.param(params, "mlp.b")?;
            let h = g.matmul(x, w)?;
            let h = g.add_row(h, b)?;
            g.relu(h)
        };
        let w = g.param(params, "out.w")?;
        let b = g.param(params, "out.b")?;
        let logits = g.matmul(hidden, w)?;
        g.add_row(logits, b)
    }

    /// Mean cross-entropy of the stream's gold classes.
    pub fn loss(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        stream: &StreamExample,
        mode: Mode,
        rng: &mut ChaCha8Rng,
        class_weights: Option<&[f64]>,
    ) -> Result<Var> {
        let logits = self.forward(g, params, stream, mode, rng)?;
        g.weighted_cross_entropy(logits, &self.targets(stream), class_weights)
    }

    /// Evaluation-mode logits with the model's own parameters.
    pub fn logits(&self, stream: &StreamExample) -> Result<Tensor> {
        let mut g = Graph::new();
        // dropout is the identity in eval mode, so this stream is never drawn from
        let mut rng = Rng::new(0).substream("unused");
        let out = self.forward(&mut g, &self.params, stream, Mode::Eval, &mut rng)?;
        Ok(g.value(out).clone())
    }

    pub fn predict_bio(&self, stream: &StreamExample) -> Result<Vec<usize>> {
        self.expect_head(Head::Bio)?;
        Ok(argmax_rows(&self.logits(stream)?))
    }

    pub fn predict_binary(&self, stream: &StreamExample) -> Result<Vec<bool>> {
        self.expect_head(Head::Binary)?;
        Ok(argmax_rows(&self.logits(stream)?)
            .into_iter()
            .map(|c| c == EVENT)
            .collect())
    }

    fn expect_head(&self, head: Head) -> Result<()> {
        if self.config.head != head {
            return Err(Error::config(format!(
                "model has a {:?} head, {:?} prediction requested",
                self.config.head, head
            )));
        }
        Ok(())
    }

    /// Writes the binary checkpoint and its JSON sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(CHECKPOINT_FILE))?);
        write_checkpoint(&self.params, &mut w)?;
        w.flush()?;
        let sidecar = Sidecar {
            config: self.config.clone(),
            scheme: self.scheme.clone(),
            labels: (0..self.scheme.num_labels())
                .map(|l| self.scheme.label_name(l))
                .collect(),
            vocab: self.vocab.entries().to_vec(),
            tfidf: self.encoder.tfidf.clone(),
        };
        let mut text = serde_json::to_string_pretty(&sidecar)?;
        text.push('\n');
        std::fs::write(dir.join(SIDECAR_FILE), text)?;
        Ok(())
    }

    /// Loads a model saved by [`Model::save`], checking every tensor name and
    /// shape against what the stored config implies.
    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar: Sidecar =
            serde_json::from_reader(BufReader::new(File::open(dir.join(SIDECAR_FILE))?))?;
        sidecar.config.validate()?;
        let expected_labels: Vec<String> = (0..sidecar.scheme.num_labels())
            .map(|l| sidecar.scheme.label_name(l))
            .collect();
        if expected_labels != sidecar.labels {
            return Err(Error::Checkpoint(
                "label table does not match the sub-event types".into(),
            ));
        }
        let params = read_checkpoint(BufReader::new(File::open(dir.join(CHECKPOINT_FILE))?))?;
        let vocab = Vocab::from_tokens(sidecar.vocab);
        let expected = init_params(&sidecar.config, &sidecar.scheme, vocab.len())?;
        let layout = |s: &ParamStore| -> Vec<(String, Vec<usize>)> {
            s.iter()
                .map(|(_, n, t)| (n.to_string(), t.shape().to_vec()))
                .collect()
        };
        if layout(&params) != layout(&expected) {
            return Err(Error::Checkpoint(
                "tensor names or shapes do not match the model config".into(),
            ));
        }
        let encoder = Encoder::new(sidecar.config.encoder_spec(), sidecar.tfidf)?;
        Ok(Model {
            config: sidecar.config,
            scheme: sidecar.scheme,
            vocab,
            encoder,
            params,
        })
    }
}

/// Row-wise argmax, ties to the lowest class id.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let (n, c) = logits.matrix_dims().unwrap_or((0, 0));
    (0..n)
        .map(|i| {
            let row = &logits.data()[i * c..(i + 1) * c];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Parameters for `config`; names and shapes depend only on the config, the
/// label count and the vocabulary size.
pub fn init_params(
    config: &ModelConfig,
    scheme: &LabelScheme,
    vocab_size: usize,
) -> Result<ParamStore> {
    let rng = Rng::new(config.seed).split("init");
    let mut store = ParamStore::new();
    let spec = config.encoder_spec();
    spec.init_params(vocab_size, &mut store, &rng)?;
    let d = spec.output_dim();
    let h = config.d_chrono;
    let c = config.num_classes(scheme);
    if config.chronological {
        init_lstm("chrono", d, h, &mut store, &rng)?;
    } else {
        store.insert(
            "mlp.w",
            init::glorot(&[d, h], d, h, &mut rng.substream("mlp.w")),
        )?;
        store.insert("mlp.b", crate::encoders::relu_bias(h))?;
    }
    store.insert(
        "out.w",
        init::glorot(&[h, c], h, c, &mut rng.substream("out.w")),
    )?;
    store.insert("out.b", Tensor::zeros(&[c]))?;
    Ok(store)
}
