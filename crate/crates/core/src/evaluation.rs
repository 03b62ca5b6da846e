//! Entailment recognition (RTE) and pairwise implicitness estimation (EIS).
//!
//! RTE predicts entailment when `max(cos(r_p, r_h), cos(u_p, r_h)) > γ`, with
//! `γ` tuned on development data. EIS scores a sentence by
//! `imp(s) = 1 - cos(r, u)` and picks the more implicit side of a pair.
//! Accuracies are fractions in `[0, 1]`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{EisPair, HypothesisKind, PairSide, RteInstance, RteLabel};
use crate::encoder::{DualEmbedding, SentenceEncoder, View};
use crate::error::{Error, Result};
use crate::objective::cosine;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct RteThreshold(pub f64);

impl RteThreshold {
    pub fn gamma(self) -> f64 {
        self.0
    }
}

/// Entailment score: the better of the premise's
/// two views against the hypothesis' explicit view.
pub fn rte_score(premise: &DualEmbedding, hypothesis_r: &[f64]) -> Result<f64> {
    Ok(cosine(&premise.r, hypothesis_r)?.max(cosine(&premise.u, hypothesis_r)?))
}

/// Entailment iff the score strictly exceeds `gamma`.
pub fn rte_predict(premise: &DualEmbedding, hypothesis_r: &[f64], gamma: RteThreshold) -> Result<RteLabel> {
    Ok(label_for(rte_score(premise, hypothesis_r)?, gamma))
}

fn label_for(score: f64, gamma: RteThreshold) -> RteLabel {
    if score > gamma.0 {
        RteLabel::Entailment
    } else {
        RteLabel::NonEntailment
    }
}

fn accuracy_at(scores: &[(f64, RteLabel)], gamma: f64) -> usize {
    scores
        .iter()
        .filter(|&&(s, gold)| label_for(s, RteThreshold(gamma)) == gold)
        .count()
}

/// Threshold maximizing accuracy on `(score, gold)` pairs.
///
/// Candidates are `-1`, the midpoints between consecutive distinct scores,
/// and the largest score; the smallest best candidate wins ties.
pub fn tune_threshold(dev_scores: &[(f64, RteLabel)]) -> Result<RteThreshold> {
    if dev_scores.is_empty() {
        return Err(Error::Empty("threshold tuning needs scores"));
    }
    let has = |label| dev_scores.iter().any(|&(_, g)| g == label);
    if !has(RteLabel::Entailment) || !has(RteLabel::NonEntailment) {
        return Err(Error::Validation(
            "threshold tuning needs both entailment and non-entailment examples".into(),
        ));
    }
    if dev_scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Validation("non-finite score in threshold tuning".into()));
    }

    let mut sorted: Vec<(f64, RteLabel)> = dev_scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sweep γ upward. Below every score all predictions are entailment;
    // passing a group of equal scores flips that group to non-entailment.
    let lowest = sorted[0].0;
    let mut correct = sorted.iter().filter(|(_, g)| *g == RteLabel::Entailment).count();
    let (mut best_gamma, mut best_correct) = (-1.0_f64, accuracy_at(&sorted, -1.0));
    if lowest <= -1.0 {
        // -1 cannot sit below a score of exactly -1; the sweep starts above it
        best_correct = 0;
    }

    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].0;
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == value {
            match sorted[j].1 {
                RteLabel::Entailment => correct -= 1,
                RteLabel::NonEntailment => correct += 1,
            }
            j += 1;
        }
        let gamma = if j < sorted.len() {
            (value + sorted[j].0) / 2.0
        } else {
            value
        };
        if correct > best_correct {
            best_correct = correct;
            best_gamma = gamma;
        }
        i = j;
    }
    debug_assert_eq!(accuracy_at(dev_scores, best_gamma), best_correct);
    Ok(RteThreshold(best_gamma))
}

/// Per-origin-class accuracies; the average is the unweighted mean of the
/// classes that are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RteReport {
    pub exp: Option<f64>,
    pub imp: Option<f64>,
    pub neu: Option<f64>,
    pub con: Option<f64>,
    pub avg: f64,
}

impl RteReport {
    pub fn class(&self, kind: HypothesisKind) -> Option<f64> {
        match kind {
            HypothesisKind::ExplicitEntailment => self.exp,
            HypothesisKind::ImpliedEntailment => self.imp,
            HypothesisKind::Neutral => self.neu,
            HypothesisKind::Contradiction => self.con,
        }
    }

    /// Builds the report from per-instance predictions.
    pub fn from_predictions(items: &[(HypothesisKind, RteLabel)]) -> Self {
        let class_acc = |kind: HypothesisKind| {
            let of_kind: Vec<_> = items.iter().filter(|(k, _)| *k == kind).collect();
            if of_kind.is_empty() {
                log::warn!("no {} instances; class excluded from the average", kind.short_name());
                return None;
            }
            let expected = if kind.is_entailment() {
                RteLabel::Entailment
            } else {
                RteLabel::NonEntailment
            };
            let correct = of_kind.iter().filter(|(_, p)| *p == expected).count();
            Some(correct as f64 / of_kind.len() as f64)
        };
        let [exp, imp, neu, con] = HypothesisKind::ALL.map(class_acc);
        let present: Vec<f64> = [exp, imp, neu, con].into_iter().flatten().collect();
        let avg = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        Self { exp, imp, neu, con, avg }
    }
}

/// Caches embeddings per distinct text within one evaluation.
struct EmbeddingCache<'a, E: SentenceEncoder + ?Sized> {
    encoder: &'a E,
    duals: HashMap<String, DualEmbedding>,
    explicit: HashMap<String, Vec<f64>>,
}

impl<'a, E: SentenceEncoder + ?Sized> EmbeddingCache<'a, E> {
    fn new(encoder: &'a E) -> Self {
        Self {
            encoder,
            duals: HashMap::new(),
            explicit: HashMap::new(),
        }
    }

    fn dual(&mut self, text: &str) -> Result<&DualEmbedding> {
        if !self.duals.contains_key(text) {
            let d = self.encoder.encode_dual(text)?;
            self.duals.insert(text.to_string(), d);
        }
        Ok(&self.duals[text])
    }

    fn explicit(&mut self, text: &str) -> Result<Vec<f64>> {
        if let Some(d) = self.duals.get(text) {
            return Ok(d.r.clone());
        }
        if !self.explicit.contains_key(text) {
            let v = self.encoder.encode(text, View::Explicit)?;
            self.explicit.insert(text.to_string(), v);
        }
        Ok(self.explicit[text].clone())
    }
}

/// `(score, gold)` for each instance, in order.
pub fn rte_scores<E: SentenceEncoder + ?Sized>(
    encoder: &E,
    instances: &[RteInstance],
) -> Result<Vec<(f64, RteLabel)>> {
    let mut cache = EmbeddingCache::new(encoder);
    instances
        .iter()
        .map(|inst| {
            let h = cache.explicit(&inst.hypothesis)?;
            let p = cache.dual(&inst.premise)?;
            Ok((rte_score(p, &h)?, inst.gold))
        })
        .collect()
}

pub fn rte_evaluate<E: SentenceEncoder + ?Sized>(
    encoder: &E,
    instances: &[RteInstance],
    gamma: RteThreshold,
) -> Result<RteReport> {
    let scores = rte_scores(encoder, instances)?;
    Ok(report_from_scores(instances, &scores, gamma))
}

pub fn report_from_scores(
    instances: &[RteInstance],
    scores: &[(f64, RteLabel)],
    gamma: RteThreshold,
) -> RteReport {
    let items: Vec<(HypothesisKind, RteLabel)> = instances
        .iter()
        .zip(scores)
        .map(|(inst, &(s, _))| (inst.origin, label_for(s, gamma)))
        .collect();
    RteReport::from_predictions(&items)
}

/// `1 - cos(r, u)`, in `[0, 2]`.
pub fn imp_score(dual: &DualEmbedding) -> Result<f64> {
    Ok(1.0 - cosine(&dual.r, &dual.u)?)
}

/// The more implicit side; an exact tie goes to the first sentence.
pub fn eis_predict(s1: &DualEmbedding, s2: &DualEmbedding) -> Result<PairSide> {
    let (a, b) = (imp_score(s1)?, imp_score(s2)?);
    if a == b {
        log::debug!("implicitness tie at {a}; choosing the first sentence");
    }
    Ok(if b > a { PairSide::Second } else { PairSide::First })
}

/// Picks the longer sentence by trimmed character count; ties go to the first.
pub fn length_baseline(pair: &EisPair) -> PairSide {
    let len = |s: &str| s.trim().chars().count();
    if len(&pair.s2) > len(&pair.s1) {
        PairSide::Second
    } else {
        PairSide::First
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EisReport {
    pub accuracy: f64,
}

fn eis_accuracy(pairs: &[EisPair], predictions: &[PairSide]) -> Result<EisReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("no implicitness pairs to evaluate"));
    }
    let correct = pairs
        .iter()
        .zip(predictions)
        .filter(|(p, pred)| p.gold_more_implicit == **pred)
        .count();
    Ok(EisReport {
        accuracy: correct as f64 / pairs.len() as f64,
    })
}

pub fn eis_evaluate<E: SentenceEncoder + ?Sized>(encoder: &E, pairs: &[EisPair]) -> Result<EisReport> {
    let mut cache = EmbeddingCache::new(encoder);
    let mut predictions = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let a = cache.dual(&pair.s1)?.clone();
        let b = cache.dual(&pair.s2)?;
        predictions.push(eis_predict(&a, b)?);
    }
    eis_accuracy(pairs, &predictions)
}

pub fn length_evaluate(pairs: &[EisPair]) -> Result<EisReport> {
    let predictions: Vec<PairSide> = pairs.iter().map(length_baseline).collect();
    eis_accuracy(pairs, &predictions)
}

/// Serialized form of an RTE evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RteOutput {
    pub rte: RteReport,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EisOutput {
    pub eis: EisReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dual(r: &[f64], u: &[f64]) -> DualEmbedding {
        DualEmbedding::new(r.to_vec(), u.to_vec()).unwrap()
    }

    /// Premise views and a hypothesis realizing a chosen pair of cosines.
    fn with_cosines(c_r: f64, c_u: f64) -> (DualEmbedding, Vec<f64>) {
        let h = vec![1.0, 0.0, 0.0];
        let at = |c: f64, axis: usize| {
            let mut v = vec![c, 0.0, 0.0];
            v[axis] = (1.0 - c * c).sqrt();
            v
        };
        (dual(&at(c_r, 1), &at(c_u, 2)), h)
    }

    #[test]
    fn rte_decision_rule() {
        let g = RteThreshold(0.5);
        let (p, h) = with_cosines(0.9, 0.1);
        assert_eq!(rte_predict(&p, &h, g).unwrap(), RteLabel::Entailment);
        let (p, h) = with_cosines(-0.2, 0.6);
        assert_eq!(rte_predict(&p, &h, g).unwrap(), RteLabel::Entailment);
        // exact boundary: strict inequality
        let p = dual(&[1.0, 1.0], &[1.0, 1.0]);
        let h = [1.0, 0.0];
        let boundary = RteThreshold(rte_score(&p, &h).unwrap());
        assert_eq!(rte_predict(&p, &h, boundary).unwrap(), RteLabel::NonEntailment);
        assert!(rte_predict(&p, &[0.0, 0.0], g).is_err());
    }

    #[test]
    fn tuner_midpoint_and_degenerate_cases() {
        use RteLabel::*;
        assert_eq!(tune_threshold(&[(0.9, Entailment), (0.1, NonEntailment)]).unwrap().0, 0.5);

        // inverted: best is predicting one class everywhere, at an extreme
        let inverted = [(0.1, Entailment), (0.9, NonEntailment)];
        let g = tune_threshold(&inverted).unwrap().0;
        assert_eq!(accuracy_at(&inverted, g), 1);
        assert_eq!(g, -1.0);

        // equal scores: accuracy is the majority prior, smallest γ on ties
        let flat = [(0.3, Entailment), (0.3, Entailment), (0.3, NonEntailment)];
        let g = tune_threshold(&flat).unwrap().0;
        assert_eq!((g, accuracy_at(&flat, g)), (-1.0, 2));
        let flat = [(0.3, Entailment), (0.3, NonEntailment), (0.3, NonEntailment)];
        let g = tune_threshold(&flat).unwrap().0;
        assert_eq!((g, accuracy_at(&flat, g)), (0.3, 2));

        assert!(tune_threshold(&[(0.2, Entailment)]).is_err());
        assert!(tune_threshold(&[]).is_err());
    }

    #[test]
    fn report_layout() {
        use HypothesisKind::*;
        use RteLabel::*;
        let all_right = [
            (ExplicitEntailment, Entailment),
            (ImpliedEntailment, Entailment),
            (Neutral, NonEntailment),
            (Contradiction, NonEntailment),
        ];
        let r = RteReport::from_predictions(&all_right);
        assert_eq!((r.exp, r.con, r.avg), (Some(1.0), Some(1.0), 1.0));

        let all_ent = HypothesisKind::ALL.map(|k| (k, Entailment));
        let r = RteReport::from_predictions(&all_ent);
        assert_eq!([r.exp, r.imp, r.neu, r.con], [Some(1.0), Some(1.0), Some(0.0), Some(0.0)]);
        assert_eq!(r.avg, 0.5);

        let r = RteReport::from_predictions(&[(Neutral, NonEntailment), (Contradiction, Entailment)]);
        assert_eq!((r.exp, r.avg), (None, 0.5));

        let json = serde_json::to_value(RteOutput { rte: r, gamma: 0.25 }).unwrap();
        assert_eq!(json["rte"]["neu"], 1.0);
        assert!(json["rte"]["exp"].is_null());
    }

    #[test]
    fn implicitness_scores() {
        assert!(imp_score(&dual(&[1.0, 2.0], &[1.0, 2.0])).unwrap().abs() < 1e-12);
        assert_eq!(imp_score(&dual(&[3.0, 0.0], &[1.0, 0.0])).unwrap(), 0.0);
        assert_eq!(imp_score(&dual(&[1.0, 0.0], &[0.0, 3.0])).unwrap(), 1.0);
        assert_eq!(imp_score(&dual(&[1.0, 0.0], &[-1.0, 0.0])).unwrap(), 2.0);
    }

    #[test]
    fn eis_rules() {
        let high = dual(&[1.0, 0.0], &[0.6, 0.8]); // imp 0.4
        let low = dual(&[1.0, 0.0], &[0.96, 0.28]); // imp 0.04
        assert_eq!(eis_predict(&high, &low).unwrap(), PairSide::First);
        assert_eq!(eis_predict(&low, &high).unwrap(), PairSide::Second);
        assert_eq!(eis_predict(&low, &low).unwrap(), PairSide::First);

        let pair = |a: &str, b: &str| EisPair {
            s1: a.into(),
            s2: b.into(),
            gold_more_implicit: PairSide::First,
        };
        assert_eq!(length_baseline(&pair("a bb", "a")), PairSide::First);
        assert_eq!(length_baseline(&pair("a", "  a bb ")), PairSide::Second);
        assert_eq!(length_baseline(&pair("ab  ", "  cd")), PairSide::First);
        let pairs = [pair("long sentence", "short"), pair("x", "longer")];
        assert_eq!(length_evaluate(&pairs).unwrap().accuracy, 0.5);
    }

    fn scores_strategy() -> impl Strategy<Value = Vec<(f64, RteLabel)>> {
        proptest::collection::vec((-1.0f64..=1.0, any::<bool>()), 2..40).prop_map(|v| {
            let mut v: Vec<(f64, RteLabel)> = v
                .into_iter()
                .map(|(s, e)| (s, if e { RteLabel::Entailment } else { RteLabel::NonEntailment }))
                .collect();
            v[0].1 = RteLabel::Entailment;
            v[1].1 = RteLabel::NonEntailment;
            v
        })
    }

    proptest! {
        #[test]
        fn tuner_beats_every_candidate(scores in scores_strategy()) {
            let best = accuracy_at(&scores, tune_threshold(&scores).unwrap().0);
            let mut candidates: Vec<f64> = scores.iter().map(|s| s.0).collect();
            candidates.extend(scores.iter().map(|s| s.0 - 1e-9));
            candidates.push(-1.0);
            for g in candidates {
                prop_assert!(best >= accuracy_at(&scores, g));
            }
        }

        #[test]
        fn raising_gamma_never_adds_entailments(c_r in -0.99f64..0.99, c_u in -0.99f64..0.99, g1 in -1.0f64..1.0, g2 in -1.0f64..1.0) {
            let (p, h) = with_cosines(c_r, c_u);
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            if rte_predict(&p, &h, RteThreshold(lo)).unwrap() == RteLabel::NonEntailment {
                prop_assert_eq!(rte_predict(&p, &h, RteThreshold(hi)).unwrap(), RteLabel::NonEntailment);
            }
        }

        #[test]
        fn imp_score_ignores_scale(r in proptest::collection::vec(-1.0f64..1.0, 4), u in proptest::collection::vec(-1.0f64..1.0, 4), a in 0.01f64..100.0, b in 0.01f64..100.0) {
            prop_assume!(r.iter().any(|x| x.abs() > 1e-3) && u.iter().any(|x| x.abs() > 1e-3));
            let base = imp_score(&dual(&r, &u)).unwrap();
            let scaled = imp_score(&dual(
                &r.iter().map(|x| x * a).collect::<Vec<_>>(),
                &u.iter().map(|x| x * b).collect::<Vec<_>>(),
            )).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
        }

        #[test]
        fn eis_is_antisymmetric(r1 in proptest::collection::vec(-1.0f64..1.0, 3), u1 in proptest::collection::vec(-1.0f64..1.0, 3),
                                r2 in proptest::collection::vec(-1.0f64..1.0, 3), u2 in proptest::collection::vec(-1.0f64..1.0, 3)) {
            prop_assume!([&r1, &u1, &r2, &u2].iter().all(|v| v.iter().any(|x| x.abs() > 1e-3)));
            let (a, b) = (dual(&r1, &u1), dual(&r2, &u2));
            prop_assume!(imp_score(&a).unwrap() != imp_score(&b).unwrap());
            prop_assert_eq!(eis_predict(&a, &b).unwrap(), eis_predict(&b, &a).unwrap().other());
        }

        #[test]
        fn report_average_recomputes(preds in proptest::collection::vec((0usize..4, any::<bool>()), 1..50)) {
            let items: Vec<(HypothesisKind, RteLabel)> = preds.iter().map(|&(k, e)| (
                HypothesisKind::ALL[k],
                if e { RteLabel::Entailment } else { RteLabel::NonEntailment },
            )).collect();
            let r = RteReport::from_predictions(&items);
            let present: Vec<f64> = HypothesisKind::ALL.iter().filter_map(|&k| r.class(k)).collect();
            prop_assert_eq!(r.avg, present.iter().sum::<f64>() / present.len() as f64);
        }
    }
}
