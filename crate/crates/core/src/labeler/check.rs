use serde::Serialize;

use super::{Head, LabelScheme, Model, ModelConfig};
use crate::autodiff::{gradient_check, GradCheckOptions, GradCheckReport, Mode, Rng};
use crate::encoders::EncoderKind;
use crate::error::Result;
use crate::evalkit::{spans_to_bio, SubEventSpan};
use crate::ingest::{assign_bins, StreamExample, TweetRecord, Vocab};

/// One model configuration checked against finite differences.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckCase {
    pub variant: EncoderKind,
    pub tweet_lstm: bool,
    pub chronological: bool,
    pub head: Head,
    pub report: GradCheckReport,
}

/// Small-dimension configurations covering every encoder variant with and
/// without the chronological layer, the tweet-level LSTM where it applies,
/// and the binary head.
pub fn gradcheck_configs() -> Vec<ModelConfig> {
    let small = ModelConfig {
        d_embed: 3,
        d_tweet_lstm: 3,
        d_bin: 4,
        d_chrono: 4,
        dropout_p: 0.0,
        seed: 7,
        ..ModelConfig::default()
    };
    let mut out = Vec::new();
    for variant in EncoderKind::ALL {
        for tweet_lstm in [false, true] {
            if tweet_lstm && !variant.is_tweet_level() {
                continue;
            }
            for chronological in [false, true] {
                out.push(ModelConfig {
                    variant,
                    tweet_lstm,
                    chronological,
                    ..small.clone()
                });
            }
        }
    }
    out.push(ModelConfig {
        hierarchical_attention: true,
        variant: EncoderKind::WordAttention,
        ..small.clone()
    });
    out.push(ModelConfig {
        pooling: crate::autodiff::PoolKind::Max,
        variant: EncoderKind::TweetAvg,
        ..small.clone()
    });
    out.push(ModelConfig {
        head: Head::Binary,
        chronological: false,
        variant: EncoderKind::WordAvg,
        ..small
    });
    out
}

/// A three-bin stream with a two-bin goal, uneven tweet lengths and mixed
/// tweet counts per bin.
pub fn toy_stream() -> (StreamExample, LabelScheme, Vocab) {
    let scheme = LabelScheme::new(["goal", "card"]).expect("valid types");
    let vocab =
        Vocab::from_tokens(["goal", "score", "ref", "card", "ball", "fans"].map(String::from));
    let tweets = [
        (0, "goal score fans"),
        (10, "ball"),
        (70, "goal goal"),
        (80, "score ref ball fans"),
        (95, "fans"),
        (130, "card ref"),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (ts, text))| TweetRecord {
        id: format!("t{i}"),
        timestamp: ts,
        text: text.into(),
    })
    .collect::<Vec<_>>();
    let bins = assign_bins(&tweets, 0, 180, 60, &vocab)
        .expect("valid window")
        .bins;
    let spans = vec![SubEventSpan::new("goal", 0, 1)];
    let gold_labels = spans_to_bio(bins.len(), &spans, &scheme).expect("legal spans");
    let stream = StreamExample {
        stream_id: "toy".into(),
        bins,
        gold_labels,
        gold_spans: spans,
    };
    (stream, scheme, vocab)
}

/// Finite-difference check of the training loss of `config` on the toy
/// stream, over every parameter coordinate.
pub fn gradcheck_model(config: &ModelConfig, options: GradCheckOptions) -> Result<GradCheckCase> {
    let (stream, scheme, vocab) = toy_stream();
    let model = Model::new(config.clone(), scheme, vocab, std::slice::from_ref(&stream))?;
    let report = gradient_check(&model.params, options, |g, params| {
        let mut rng = Rng::new(0).substream("dropout");
        model.loss(g, params, &stream, Mode::Eval, &mut rng, None)
    })?;
    Ok(GradCheckCase {
        variant: config.variant,
        tweet_lstm: config.tweet_lstm,
        chronological: config.chronological,
        head: config.head,
        report,
    })
}
