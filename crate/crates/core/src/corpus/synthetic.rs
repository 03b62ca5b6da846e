//! Seeded synthetic corpus whose entailment structure is known exactly.
//!
//! The vocabulary is split into four pools: fillers, literal tokens, hidden
//! tokens and anti tokens. Every premise mixes a literal pattern `L` (two
//! literal tokens), a hidden pattern `H` (two hidden tokens) and two fillers.
//! Its hypotheses are built from the template:
//!
//! | field               | tokens                                  |
//! |---------------------|-----------------------------------------|
//! | explicit_entailment | `L` + one filler                        |
//! | implied_entailment  | `H` + one filler                        |
//! | contradiction       | the anti tokens of every token in L, H  |
//! | neutral             | two literal tokens outside `L` + filler |
//!
//! Pools depend only on `vocab_size`, so splits generated with different
//! seeds share one vocabulary.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, InliSample, SplitName};
use crate::error::{Error, Result};

const LITERAL_PER_SAMPLE: usize = 2;
const HIDDEN_PER_SAMPLE: usize = 2;
const PREMISE_FILLERS: usize = 2;

/// Vocabulary size used by the command-line tool and the end-to-end tests.
pub const DEFAULT_VOCAB_SIZE: usize = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticVocab {
    pub fillers: Vec<String>,
    pub literal: Vec<String>,
    pub hidden: Vec<String>,
    pub anti: Vec<String>,
}

impl SyntheticVocab {
    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size < 20 {
            return Err(Error::Config(format!(
                "synthetic vocabulary needs at least 20 tokens, got {vocab_size}"
            )));
        }
        let n_fillers = (vocab_size / 10).max(2);
        let rest = vocab_size - n_fillers;
        let n_literal = rest * 2 / 5;
        let n_hidden = (rest - n_literal) / 2;
        let n_anti = rest - n_literal - n_hidden;
        let names = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect();
        Ok(Self {
            fillers: names("fil", n_fillers),
            literal: names("lit", n_literal),
            hidden: names("hid", n_hidden),
            anti: names("anti", n_anti),
        })
    }

    pub fn len(&self) -> usize {
        self.fillers.len() + self.literal.len() + self.hidden.len() + self.anti.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The anti token paired with a literal or hidden token.
    pub fn anti_of(&self, token: &str) -> Option<&str> {
        let pos = self
            .literal
            .iter()
            .chain(&self.hidden)
            .position(|t| t == token)?;
        Some(&self.anti[pos % self.anti.len()])
    }

    pub fn is_template_token(&self, token: &str) -> bool {
        self.literal.iter().chain(&self.hidden).chain(&self.anti).any(|t| t == token)
    }
}

/// The ground-truth template behind one generated sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub id: String,
    pub literal: Vec<String>,
    pub hidden: Vec<String>,
    pub anti: Vec<String>,
    pub neutral: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub split: DatasetSplit,
    pub records: Vec<TemplateRecord>,
    pub vocab: SyntheticVocab,
}

fn sentence(mut tokens: Vec<&str>, rng: &mut ChaCha8Rng) -> String {
    tokens.shuffle(rng);
    tokens.join(" ")
}

fn pick<'a>(pool: &'a [String], n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    pool.choose_multiple(rng, n).map(String::as_str).collect()
}

/// Generates `n_samples` samples from the latent two-factor template.
pub fn make_synthetic_corpus(seed: u64, n_samples: usize, vocab_size: usize) -> Result<SyntheticCorpus> {
    make_split(seed, n_samples, vocab_size, SplitName::Train)
}

fn make_split(seed: u64, n_samples: usize, vocab_size: usize, name: SplitName) -> Result<SyntheticCorpus> {
    if n_samples == 0 {
        return Err(Error::Config("synthetic corpus needs at least one sample".into()));
    }
    let vocab = SyntheticVocab::new(vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    let mut records = Vec::with_capacity(n_samples);

    for i in 0..n_samples {
        let literal = pick(&vocab.literal, LITERAL_PER_SAMPLE, &mut rng);
        let hidden = pick(&vocab.hidden, HIDDEN_PER_SAMPLE, &mut rng);
        let outside: Vec<String> = vocab
            .literal
            .iter()
            .filter(|t| !literal.contains(&t.as_str()))
            .cloned()
            .collect();
        let neutral = pick(&outside, LITERAL_PER_SAMPLE, &mut rng);
        let mut anti: Vec<&str> = Vec::new();
        for t in literal.iter().chain(&hidden) {
            let a = vocab.anti_of(t).expect("template tokens come from the pools");
            if !anti.contains(&a) {
                anti.push(a);
            }
        }
        let fillers = pick(&vocab.fillers, PREMISE_FILLERS, &mut rng);
        let hyp_filler = |rng: &mut ChaCha8Rng| *pick(&vocab.fillers, 1, rng).first().unwrap();

        let premise = sentence(
            literal.iter().chain(&hidden).chain(&fillers).copied().collect(),
            &mut rng,
        );
        let f = hyp_filler(&mut rng);
        let explicit = sentence(literal.iter().copied().chain([f]).collect(), &mut rng);
        let f = hyp_filler(&mut rng);
        let implied = sentence(hidden.iter().copied().chain([f]).collect(), &mut rng);
        let f = hyp_filler(&mut rng);
        let neutral_text = sentence(neutral.iter().copied().chain([f]).collect(), &mut rng);
        let contradiction = sentence(anti.clone(), &mut rng);

        let id = format!("syn-{}-{seed}-{i}", name.as_str());
        samples.push(InliSample {
            id: id.clone(),
            premise,
            implied_entailment: implied,
            explicit_entailment: explicit,
            neutral: neutral_text,
            contradiction,
        });
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        records.push(TemplateRecord {
            id,
            literal: owned(&literal),
            hidden: owned(&hidden),
            anti: owned(&anti),
            neutral: owned(&neutral),
        });
    }

    Ok(SyntheticCorpus {
        split: DatasetSplit::new(name, samples)?,
        records,
        vocab,
    })
}

#[derive(Debug, Clone)]
pub struct SyntheticSplits {
    pub train: SyntheticCorpus,
    pub dev: SyntheticCorpus,
    pub test: SyntheticCorpus,
}

/// Train / development / test splits over one vocabulary with seeds derived
/// from `seed`.
pub fn synthetic_splits(
    seed: u64,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    vocab_size: usize,
) -> Result<SyntheticSplits> {
    Ok(SyntheticSplits {
        train: make_split(seed, n_train, vocab_size, SplitName::Train)?,
        dev: make_split(seed.wrapping_add(1_000_003), n_dev, vocab_size, SplitName::Development)?,
        test: make_split(seed.wrapping_add(2_000_006), n_test, vocab_size, SplitName::Test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn generation_is_deterministic() {
        let dump = |c: SyntheticCorpus| {
            let f = tempfile::NamedTempFile::new().unwrap();
            c.split.write_jsonl(f.path()).unwrap();
            std::fs::read(f.path()).unwrap()
        };
        let a = dump(make_synthetic_corpus(0, 10, 50).unwrap());
        let b = dump(make_synthetic_corpus(0, 10, 50).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, dump(make_synthetic_corpus(1, 10, 50).unwrap()));
    }

    #[test]
    fn hypotheses_follow_their_templates() {
        for (seed, vocab) in [(0, 20), (3, 50), (9, 200)] {
            let corpus = make_synthetic_corpus(seed, 64, vocab).unwrap();
            for (sample, record) in corpus.split.samples().iter().zip(&corpus.records) {
                let premise = tokens(&sample.premise);
                let shared = |text: &str, pattern: &[String]| {
                    tokens(text)
                        .into_iter()
                        .filter(|t| pattern.iter().any(|p| p == t) && premise.contains(t))
                        .count()
                };
                assert!(shared(&sample.explicit_entailment, &record.literal) >= 1);
                assert_eq!(shared(&sample.explicit_entailment, &record.hidden), 0);
                assert!(shared(&sample.implied_entailment, &record.hidden) >= 1);
                assert_eq!(shared(&sample.implied_entailment, &record.literal), 0);
                for t in tokens(&sample.neutral) {
                    assert!(
                        !(corpus.vocab.is_template_token(t) && premise.contains(&t)),
                        "neutral shares {t} with premise"
                    );
                }
                for t in tokens(&sample.contradiction) {
                    assert!(record.anti.iter().any(|a| a == t));
                    assert!(!premise.contains(&t));
                }
                // the premise is the longest sentence of its sample
                for kind in super::super::HypothesisKind::ALL {
                    assert!(sample.premise.len() > sample.hypothesis(kind).len());
                }
            }
        }
    }

    #[test]
    fn splits_share_the_vocabulary() {
        let s = synthetic_splits(5, 20, 10, 10, 60).unwrap();
        assert_eq!(s.train.vocab, s.dev.vocab);
        assert_eq!(s.dev.split.name(), SplitName::Development);
        assert_ne!(s.train.split.samples()[0].premise, s.dev.split.samples()[0].premise);
    }

    #[test]
    fn rejects_tiny_inputs() {
        assert!(make_synthetic_corpus(0, 0, 50).is_err());
        assert!(make_synthetic_corpus(0, 5, 19).is_err());
        assert_eq!(SyntheticVocab::new(50).unwrap().len(), 50);
    }
}
