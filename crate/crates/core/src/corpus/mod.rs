//! Entailment data with four hypotheses per premise, pairwise implicitness
//! data, and the batching used by the trainer.
//!
//! Both on-disk formats are JSONL with one object per line:
//!
//! ```text
//! {"id": "...", "premise": "...", "implied_entailment": "...",
//!  "explicit_entailment": "...", "neutral": "...", "contradiction": "..."}
//! {"implicit_sentence": "...", "explicit_sentence": "..."}
//! ```

pub mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub use synthetic::{
    make_synthetic_corpus, synthetic_splits, DEFAULT_VOCAB_SIZE, SyntheticCorpus, SyntheticSplits, SyntheticVocab,
    TemplateRecord,
};

/// One premise with its four labeled hypotheses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InliSample {
    pub id: String,
    pub premise: String,
    pub implied_entailment: String,
    pub explicit_entailment: String,
    pub neutral: String,
    pub contradiction: String,
}

impl InliSample {
    pub fn hypothesis(&self, kind: HypothesisKind) -> &str {
        match kind {
            HypothesisKind::ExplicitEntailment => &self.explicit_entailment,
            HypothesisKind::ImpliedEntailment => &self.implied_entailment,
            HypothesisKind::Neutral => &self.neutral,
            HypothesisKind::Contradiction => &self.contradiction,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for (field, text) in self.text_fields() {
            if text.trim().is_empty() {
                return Err(format!("sample {:?}: field `{field}` is empty", self.id));
            }
        }
        Ok(())
    }

    fn text_fields(&self) -> [(&'static str, &str); 5] {
        [
            ("premise", &self.premise),
            ("implied_entailment", &self.implied_entailment),
            ("explicit_entailment", &self.explicit_entailment),
            ("neutral", &self.neutral),
            ("contradiction", &self.contradiction),
        ]
    }
}

/// The label a hypothesis carries relative to its premise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisKind {
    ExplicitEntailment,
    ImpliedEntailment,
    Neutral,
    Contradiction,
}

impl HypothesisKind {
    pub const ALL: [HypothesisKind; 4] = [
        HypothesisKind::ExplicitEntailment,
        HypothesisKind::ImpliedEntailment,
        HypothesisKind::Neutral,
        HypothesisKind::Contradiction,
    ];

    pub fn field_name(self) -> &'static str {
        match self {
            HypothesisKind::ExplicitEntailment => "explicit_entailment",
            HypothesisKind::ImpliedEntailment => "implied_entailment",
            HypothesisKind::Neutral => "neutral",
            HypothesisKind::Contradiction => "contradiction",
        }
    }

    /// Column name in reports: `exp`, `imp`, `neu`, `con`.
    pub fn short_name(self) -> &'static str {
        match self {
            HypothesisKind::ExplicitEntailment => "exp",
            HypothesisKind::ImpliedEntailment => "imp",
            HypothesisKind::Neutral => "neu",
            HypothesisKind::Contradiction => "con",
        }
    }

    pub fn is_entailment(self) -> bool {
        matches!(
            self,
            HypothesisKind::ExplicitEntailment | HypothesisKind::ImpliedEntailment
        )
    }
}

impl FromStr for HypothesisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HypothesisKind::ALL
            .into_iter()
            .find(|k| k.field_name() == s || k.short_name() == s)
            .ok_or_else(|| Error::Config(format!("unknown hypothesis field `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Development,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Development => "development",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" | "development" => Ok(SplitName::Development),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// An ordered, validated, immutable list of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    name: SplitName,
    samples: Vec<InliSample>,
}

impl DatasetSplit {
    /// Validates non-empty text fields and id uniqueness.
    pub fn new(name: SplitName, samples: Vec<InliSample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for sample in &samples {
            sample.validate().map_err(Error::Validation)?;
            if !seen.insert(sample.id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate id {:?} in {name} split",
                    sample.id
                )));
            }
        }
        Ok(Self { name, samples })
    }

    pub fn name(&self) -> SplitName {
        self.name
    }

    pub fn samples(&self) -> &[InliSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes the split in the same JSONL layout [`load_inli`] reads.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for sample in &self.samples {
            serde_json::to_writer(&mut out, sample)?;
            out.push(b'\n');
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Declared split sizes. INLI publishes its statistics in premise-hypothesis
/// pairs (four per sample), so the unit is explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    #[serde(default)]
    pub unit: CountUnit,
    #[serde(flatten)]
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountUnit {
    #[default]
    Samples,
    Pairs,
}

impl SplitManifest {
    /// Published INLI sizes: 32,000 / 4,000 / 4,000 premise-hypothesis pairs.
    pub fn inli() -> Self {
        let counts = [("train", 32_000), ("development", 4_000), ("test", 4_000)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self {
            unit: CountUnit::Pairs,
            counts,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks `split` against its declared size; splits the manifest does not
    /// mention pass.
    pub fn check(&self, split: &DatasetSplit) -> Result<()> {
        let declared = self
            .counts
            .get(split.name().as_str())
            .or_else(|| match split.name() {
                SplitName::Development => self.counts.get("dev"),
                _ => None,
            });
        let Some(&declared) = declared else {
            return Ok(());
        };
        let actual = match self.unit {
            CountUnit::Samples => split.len(),
            CountUnit::Pairs => split.len() * HypothesisKind::ALL.len(),
        };
        if actual != declared {
            return Err(Error::Validation(format!(
                "{} split has {actual} {:?} but the manifest declares {declared}",
                split.name(),
                self.unit
            )));
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| (i + 1, line.to_string()))
        .collect())
}

fn parse_object(path: &Path, line_no: usize, line: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::Schema {
            path: path.to_path_buf(),
            line: line_no,
            message: "expected a JSON object".into(),
        }),
        Err(e) => Err(Error::Schema {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("malformed JSON: {e}"),
        }),
    }
}

fn text_field(path: &Path, line_no: usize, obj: &Map<String, Value>, field: &str) -> Result<String> {
    let schema = |message: String| Error::Schema {
        path: path.to_path_buf(),
        line: line_no,
        message,
    };
    match obj.get(field) {
        None => Err(schema(format!("missing field `{field}`"))),
        Some(Value::String(s)) => Ok(s.clone()),
        // ids are opaque; some dumps store them as integers
        Some(Value::Number(n)) if field == "id" => Ok(n.to_string()),
        Some(_) => Err(schema(format!("field `{field}` must be a string"))),
    }
}

/// Reads an INLI-format JSONL file, preserving file order.
pub fn load_inli(path: &Path, split: SplitName) -> Result<DatasetSplit> {
    let mut samples = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let obj = parse_object(path, line_no, &line)?;
        let field = |name: &str| text_field(path, line_no, &obj, name);
        let sample = InliSample {
            id: field("id")?,
            premise: field("premise")?,
            implied_entailment: field("implied_entailment")?,
            explicit_entailment: field("explicit_entailment")?,
            neutral: field("neutral")?,
            contradiction: field("contradiction")?,
        };
        sample.validate().map_err(|message| Error::Schema {
            path: path.to_path_buf(),
            line: line_no,
            message,
        })?;
        samples.push(sample);
    }
    DatasetSplit::new(split, samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RteLabel {
    Entailment,
    NonEntailment,
}

/// One premise-hypothesis pair for binary entailment recognition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RteInstance {
    pub premise: String,
    pub hypothesis: String,
    pub gold: RteLabel,
    pub origin: HypothesisKind,
}

/// Four instances per sample; explicit and implied entailments are
/// `Entailment`, neutral and contradiction collapse to `NonEntailment`.
pub fn to_rte_instances(split: &DatasetSplit) -> Vec<RteInstance> {
    split
        .samples()
        .iter()
        .flat_map(|sample| {
            HypothesisKind::ALL.into_iter().map(move |kind| RteInstance {
                premise: sample.premise.clone(),
                hypothesis: sample.hypothesis(kind).to_string(),
                gold: if kind.is_entailment() {
                    RteLabel::Entailment
                } else {
                    RteLabel::NonEntailment
                },
                origin: kind,
            })
        })
        .collect()
}

/// Which sentence of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum PairSide {
    First,
    Second,
}

impl PairSide {
    pub fn index(self) -> u8 {
        match self {
            PairSide::First => 1,
            PairSide::Second => 2,
        }
    }

    pub fn other(self) -> Self {
        match self {
            PairSide::First => PairSide::Second,
            PairSide::Second => PairSide::First,
        }
    }
}

impl From<PairSide> for u8 {
    fn from(side: PairSide) -> u8 {
        side.index()
    }
}

impl TryFrom<u8> for PairSide {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(PairSide::First),
            2 => Ok(PairSide::Second),
            other => Err(format!("pair side must be 1 or 2, got {other}")),
        }
    }
}

/// Two sentences and which of them is more implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EisPair {
    pub s1: String,
    pub s2: String,
    pub gold_more_implicit: PairSide,
}

impl EisPair {
    /// Places `implicit` on a side drawn from `rng`.
    fn randomized(implicit: &str, explicit: &str, rng: &mut impl Rng) -> Self {
        if rng.random_bool(0.5) {
            EisPair {
                s1: implicit.to_string(),
                s2: explicit.to_string(),
                gold_more_implicit: PairSide::First,
            }
        } else {
            EisPair {
                s1: explicit.to_string(),
                s2: implicit.to_string(),
                gold_more_implicit: PairSide::Second,
            }
        }
    }

    pub fn sentence(&self, side: PairSide) -> &str {
        match side {
            PairSide::First => &self.s1,
            PairSide::Second => &self.s2,
        }
    }
}

/// Premise-versus-hypothesis pairs over all four hypothesis fields, with the
/// premise as the more implicit side. Sides are shuffled under `seed` so the
/// position carries no signal.
pub fn to_eis_pairs_from_inli(split: &DatasetSplit, seed: u64) -> Vec<EisPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(split.len() * 4);
    for sample in split.samples() {
        for kind in HypothesisKind::ALL {
            let hypothesis = sample.hypothesis(kind);
            if hypothesis == sample.premise {
                log::warn!(
                    "sample {:?}: {} equals the premise, pair skipped",
                    sample.id,
                    kind.field_name()
                );
                continue;
            }
            pairs.push(EisPair::randomized(&sample.premise, hypothesis, &mut rng));
        }
    }
    pairs
}

/// Reads implicit/explicit sentence pairs; the implicit sentence is gold.
pub fn load_pairwise(path: &Path, seed: u64) -> Result<Vec<EisPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let obj = parse_object(path, line_no, &line)?;
        let implicit = text_field(path, line_no, &obj, "implicit_sentence")?;
        let explicit = text_field(path, line_no, &obj, "explicit_sentence")?;
        let schema = |message: &str| Error::Schema {
            path: path.to_path_buf(),
            line: line_no,
            message: message.to_string(),
        };
        if implicit.trim().is_empty() || explicit.trim().is_empty() {
            return Err(schema("empty sentence"));
        }
        if implicit == explicit {
            return Err(schema("implicit and explicit sentences are identical"));
        }
        pairs.push(EisPair::randomized(&implicit, &explicit, &mut rng));
    }
    Ok(pairs)
}

/// A contiguous slice of one shuffled epoch.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub index: usize,
    pub samples: Vec<&'a InliSample>,
}

impl Batch<'_> {
    pub fn size(&self) -> usize {
        self.samples.len()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }
}

/// Iterator over one epoch of batches.
#[derive(Debug)]
pub struct Batches<'a> {
    split: &'a DatasetSplit,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl<'a> Iterator for Batches<'a> {
    type Item = Batch<'a>;

    fn next(&mut self) -> Option<Batch<'a>> {
        let start = self.next * self.batch_size;
        if start >= self.order.len() {
            return None;
        }
        let end = (start + self.batch_size).min(self.order.len());
        let batch = Batch {
            index: self.next,
            samples: self.order[start..end]
                .iter()
                .map(|&i| &self.split.samples[i])
                .collect(),
        };
        self.next += 1;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let remaining = self.order.len().div_ceil(self.batch_size) - self.next;
        (remaining, Some(remaining))
    }
}

impl ExactSizeIterator for Batches<'_> {}

/// Shuffles the split under `epoch_seed` and yields `ceil(len / batch_size)`
/// batches; the last one may be short.
pub fn batch_iter(split: &DatasetSplit, batch_size: usize, epoch_seed: u64) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if split.is_empty() {
        return Err(Error::Empty("cannot batch an empty split"));
    }
    let mut order: Vec<usize> = (0..split.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(Batches {
        split,
        order,
        batch_size,
        next: 0,
    })
}
