//! Sentence encoders producing one vector per semantic view.
//!
//! A `cross` encoder is a single backbone conditioned on the view word:
//! the input is `[CLS] s [SEP] explicit` or `[CLS] s [SEP] implicit`. A `bi`
//! encoder routes each view to its own backbone over `[CLS] s [SEP]`. Both
//! read the final hidden state at the `[CLS]` position. Vectors are not
//! normalized; every consumer compares them by cosine.

pub mod checkpoint;
pub mod tokenizer;
pub mod transformer;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use tokenizer::{Tokenizer, CLS, SEP};
use transformer::{Tower, TowerConfig, Trace};

pub use checkpoint::{load_encoder, load_external_backbone, save_encoder};

/// Semantic view selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Explicit,
    Implicit,
}

impl View {
    pub const BOTH: [View; 2] = [View::Explicit, View::Implicit];

    /// The word appended after the separator by a cross encoder.
    pub fn word(self) -> &'static str {
        match self {
            View::Explicit => tokenizer::VIEW_WORDS[0],
            View::Implicit => tokenizer::VIEW_WORDS[1],
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit" => Ok(View::Explicit),
            "implicit" => Ok(View::Implicit),
            other => Err(Error::Config(format!("unknown view `{other}`"))),
        }
    }
}

/// Explicit-view (`r`) and implicit-view (`u`) vectors of one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualEmbedding {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
}

impl DualEmbedding {
    /// Rejects mismatched lengths and vectors that are zero or non-finite.
    pub fn new(r: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        if r.len() != u.len() {
            return Err(Error::DimensionMismatch {
                expected: r.len(),
                actual: u.len(),
            });
        }
        for v in [&r, &u] {
            let finite = v.iter().all(|x| x.is_finite());
            if !finite || v.iter().all(|&x| x == 0.0) {
                return Err(Error::ZeroVector);
            }
        }
        Ok(Self { r, u })
    }

    pub fn view(&self, view: View) -> &[f64] {
        match view {
            View::Explicit => &self.r,
            View::Implicit => &self.u,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Cross,
    Bi,
}

impl Architecture {
    pub fn num_towers(self) -> usize {
        match self {
            Architecture::Cross => 1,
            Architecture::Bi => 2,
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(Architecture::Cross),
            "bi" => Ok(Architecture::Bi),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 64,
            ffn: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backbone {
    /// Randomly initialized small transformer.
    Toy(ToyConfig),
    /// A saved checkpoint directory whose first tower seeds every tower.
    External { locator: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub architecture: Architecture,
    pub backbone: Backbone,
    pub embedding_dim: usize,
    pub max_sequence_length: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self::toy(Architecture::Cross, ToyConfig::default())
    }
}

impl EncoderSpec {
    pub fn toy(architecture: Architecture, config: ToyConfig) -> Self {
        Self {
            architecture,
            embedding_dim: config.hidden,
            backbone: Backbone::Toy(config),
            max_sequence_length: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        // [CLS] + at least one word + [SEP] + view word
        if self.max_sequence_length < 4 {
            return Err(Error::Config("max_sequence_length must be at least 4".into()));
        }
        if let Backbone::Toy(toy) = &self.backbone {
            if toy.hidden != self.embedding_dim {
                return Err(Error::Config(format!(
                    "toy hidden size {} differs from embedding_dim {}",
                    toy.hidden, self.embedding_dim
                )));
            }
            if toy.layers == 0 || toy.heads == 0 || toy.ffn == 0 || toy.hidden % toy.heads != 0 {
                return Err(Error::Config(format!(
                    "invalid toy backbone {toy:?}: need layers, heads, ffn > 0 and heads dividing hidden"
                )));
            }
        }
        Ok(())
    }
}

/// Token ids for one encoder input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedInput {
    pub ids: Vec<u32>,
    /// The sentence lost trailing tokens to fit `max_sequence_length`.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub vector: Vec<f64>,
    pub truncated: bool,
}

/// Anything that maps a sentence and a view to a vector.
pub trait SentenceEncoder {
    fn embedding_dim(&self) -> usize;

    fn encode(&self, sentence: &str, view: View) -> Result<Vec<f64>>;

    fn encode_dual(&self, sentence: &str) -> Result<DualEmbedding> {
        DualEmbedding::new(
            self.encode(sentence, View::Explicit)?,
            self.encode(sentence, View::Implicit)?,
        )
    }
}

/// Row 0 of the final hidden states, where `[CLS]` sits.
pub fn pool_cls(hidden_states: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if hidden_states.nrows() == 0 {
        return Err(Error::Empty("cannot pool an empty sequence"));
    }
    Ok(hidden_states.row(0).to_owned())
}

/// Forward state kept for one training sequence.
pub struct SequenceTrace {
    tower: usize,
    trace: Trace,
}

/// Tokenizer plus one or two transformer towers.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    spec: EncoderSpec,
    tokenizer: Tokenizer,
    towers: Vec<Tower>,
}

impl Encoder {
    /// Fresh toy encoder. Bi-encoder towers start from identical weights.
    pub fn new_toy(spec: EncoderSpec, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        spec.validate()?;
        let Backbone::Toy(toy) = spec.backbone else {
            return Err(Error::Config("new_toy needs a toy backbone".into()));
        };
        let config = TowerConfig {
            vocab_size: tokenizer.len(),
            max_positions: spec.max_sequence_length,
            hidden: toy.hidden,
            layers: toy.layers,
            heads: toy.heads,
            ffn: toy.ffn,
        };
        let tower = Tower::random(config, seed);
        let towers = vec![tower; spec.architecture.num_towers()];
        Self::from_parts(spec, tokenizer, towers)
    }

    pub fn from_parts(spec: EncoderSpec, tokenizer: Tokenizer, towers: Vec<Tower>) -> Result<Self> {
        spec.validate()?;
        if towers.len() != spec.architecture.num_towers() {
            return Err(Error::Config(format!(
                "{:?} architecture needs {} tower(s), got {}",
                spec.architecture,
                spec.architecture.num_towers(),
                towers.len()
            )));
        }
        for tower in &towers {
            let c = tower.config;
            if c.hidden != spec.embedding_dim {
                return Err(Error::DimensionMismatch {
                    expected: spec.embedding_dim,
                    actual: c.hidden,
                });
            }
            if c.vocab_size != tokenizer.len() {
                return Err(Error::Config(format!(
                    "tower vocabulary {} differs from tokenizer vocabulary {}",
                    c.vocab_size,
                    tokenizer.len()
                )));
            }
            if c.max_positions < spec.max_sequence_length {
                return Err(Error::Config(format!(
                    "tower supports {} positions, spec asks for {}",
                    c.max_positions, spec.max_sequence_length
                )));
            }
        }
        Ok(Self {
            spec,
            tokenizer,
            towers,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn towers(&self) -> &[Tower] {
        &self.towers
    }

    pub fn towers_mut(&mut self) -> &mut [Tower] {
        &mut self.towers
    }

    pub fn tower_index(&self, view: View) -> usize {
        match (self.spec.architecture, view) {
            (Architecture::Cross, _) | (Architecture::Bi, View::Explicit) => 0,
            (Architecture::Bi, View::Implicit) => 1,
        }
    }

    /// Builds the token ids for `sentence` under `view`, truncating the
    /// sentence tail so `[CLS]`, `[SEP]` and the view word always survive.
    pub fn render(&self, sentence: &str, view: View) -> RenderedInput {
        let tok = &self.tokenizer;
        let suffix: Vec<u32> = match self.spec.architecture {
            Architecture::Cross => std::iter::once(tok.id(SEP))
                .chain(tok.encode_words(view.word()))
                .collect(),
            Architecture::Bi => vec![tok.id(SEP)],
        };
        let mut words = tok.encode_words(sentence);
        let budget = self.spec.max_sequence_length - 1 - suffix.len();
        let truncated = words.len() > budget;
        words.truncate(budget);
        let ids = std::iter::once(tok.id(CLS))
            .chain(words)
            .chain(suffix)
            .collect();
        RenderedInput { ids, truncated }
    }

    /// Rendered input as token strings, for inspection.
    pub fn render_tokens(&self, sentence: &str, view: View) -> Vec<String> {
        self.render(sentence, view)
            .ids
            .iter()
            .map(|&id| self.tokenizer.token(id).to_string())
            .collect()
    }

    pub fn encode_with_flag(&self, sentence: &str, view: View) -> Result<Encoding> {
        let input = self.render(sentence, view);
        if input.truncated {
            log::debug!("truncated input to {} tokens", self.spec.max_sequence_length);
        }
        let (hidden, _) = self.towers[self.tower_index(view)].forward(&input.ids);
        let vector = pool_cls(hidden.view())?.to_vec();
        Ok(Encoding {
            vector,
            truncated: input.truncated,
        })
    }

    /// Forward pass that keeps what [`Encoder::backward`] needs.
    pub fn forward_train(&self, sentence: &str, view: View) -> (Vec<f64>, SequenceTrace) {
        let input = self.render(sentence, view);
        let tower = self.tower_index(view);
        let (hidden, trace) = self.towers[tower].forward(&input.ids);
        (hidden.row(0).to_vec(), SequenceTrace { tower, trace })
    }

    /// Zeroed gradient buffers shaped like the towers.
    pub fn zero_grads(&self) -> Vec<Tower> {
        self.towers.iter().map(Tower::zeros_like).collect()
    }

    /// Accumulates the parameter gradient for one sequence given the
    /// gradient with respect to its pooled vector.
    pub fn backward(&self, seq: &SequenceTrace, d_pooled: &[f64], grads: &mut [Tower]) {
        let mut d_hidden = Array2::zeros((seq.trace.len(), self.spec.embedding_dim));
        d_hidden
            .row_mut(0)
            .assign(&ndarray::ArrayView1::from(d_pooled));
        self.towers[seq.tower].backward(&seq.trace, d_hidden.view(), &mut grads[seq.tower]);
    }
}

impl SentenceEncoder for Encoder {
    fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim
    }

    fn encode(&self, sentence: &str, view: View) -> Result<Vec<f64>> {
        Ok(self.encode_with_flag(sentence, view)?.vector)
    }
}
