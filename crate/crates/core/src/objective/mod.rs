//! The dual contrastive objective.
//!
//! For a premise `s_i` with explicit-entailment `s⁺_i1`, implied-entailment
//! `s⁺_i2` and contradiction `s⁻_i`, each sentence has an explicit-view
//! embedding `r` and an implicit-view embedding `u`. With
//! `v(a, b) = exp(cos(a, b) / τ)` the per-instance loss is a sum of
//! `-ln(v(anchor_i, positive_i) / Σ_j Σ_families v(anchor_i, family_j))`
//! terms:
//!
//! | term | anchor  | positive | denominator families (over all j)      |
//! |------|---------|----------|----------------------------------------|
//! | 1    | r_i     | r⁺_i1    | r⁺_j1, r⁻_j, u_j                       |
//! | 2    | u_i     | r⁺_i2    | r⁺_j2, r⁻_j, r_j                       |
//! | 3    | r⁺_i1   | u⁺_i1    | u⁺_j1                                  |
//! | 4    | r⁺_i2   | u⁺_i2    | u⁺_j2                                  |
//! | 5    | r⁻_i    | u⁻_i     | u⁻_j                                   |
//!
//! The ablations drop the contradiction entries and term 5
//! ([`LossVariant::NoContradiction`]), the cross-view entries and terms 3–5
//! ([`LossVariant::NoIntra`]), or both ([`LossVariant::Neither`]).
//! The batch loss is the mean of the per-instance losses.

pub mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{DualEmbedding, View};
use crate::error::{Error, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn checked_norm(v: &[f64]) -> Result<f64> {
    let n = norm(v);
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(Error::ZeroVector)
    }
}

/// Cosine similarity; undefined (an error) for zero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (checked_norm(a)?, checked_norm(b)?);
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `exp(cos(a, b) / τ)`.
pub fn pair_score(a: &[f64], b: &[f64], tau: Temperature) -> Result<f64> {
    Ok((cosine(a, b)? / tau.get()).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const DEFAULT: Temperature = Temperature(0.05);

    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self(tau))
        } else {
            Err(Error::Config(format!("temperature must be positive, got {tau}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        Temperature::new(tau)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    Full,
    NoContradiction,
    NoIntra,
    Neither,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::Full,
        LossVariant::NoContradiction,
        LossVariant::NoIntra,
        LossVariant::Neither,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::Full => "full",
            LossVariant::NoContradiction => "no_contradiction",
            LossVariant::NoIntra => "no_intra",
            LossVariant::Neither => "neither",
        }
    }

    fn uses_contradiction(self) -> bool {
        matches!(self, LossVariant::Full | LossVariant::NoIntra)
    }

    fn uses_intra(self) -> bool {
        matches!(self, LossVariant::Full | LossVariant::NoContradiction)
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown loss variant `{s}` (expected full, no_contradiction, no_intra or neither)"
                ))
            })
    }
}

/// Which sentence of a sample a vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Premise,
    ExplicitEntailment,
    ImpliedEntailment,
    Contradiction,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::Premise,
        Role::ExplicitEntailment,
        Role::ImpliedEntailment,
        Role::Contradiction,
    ];
}

/// One of the eight vector families of a batch, e.g. `(Premise, Implicit)` is `u_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub role: Role,
    pub view: View,
}

impl Slot {
    pub const fn new(role: Role, view: View) -> Self {
        Self { role, view }
    }

    fn index(self) -> usize {
        let r = match self.role {
            Role::Premise => 0,
            Role::ExplicitEntailment => 1,
            Role::ImpliedEntailment => 2,
            Role::Contradiction => 3,
        };
        let v = match self.view {
            View::Explicit => 0,
            View::Implicit => 1,
        };
        2 * r + v
    }

    pub fn all() -> impl Iterator<Item = Slot> {
        Role::ALL
            .into_iter()
            .flat_map(|role| [View::Explicit, View::Implicit].map(|view| Slot { role, view }))
    }
}

/// One `-ln(v(anchor_i, positive_i) / Σ_j Σ_f v(anchor_i, f_j))` term. The
/// positive is always `denominators[0]` at `j = i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub anchor: Slot,
    pub positive: Slot,
    pub denominators: Vec<Slot>,
}

/// The term expansion of a loss variant.
pub fn terms(variant: LossVariant) -> Vec<Term> {
    use Role::*;
    use View::*;
    let s = Slot::new;
    let mut out = Vec::with_capacity(5);

    let mut first = vec![s(ExplicitEntailment, Explicit)];
    let mut second = vec![s(ImpliedEntailment, Explicit)];
    if variant.uses_contradiction() {
        first.push(s(Contradiction, Explicit));
        second.push(s(Contradiction, Explicit));
    }
    if variant.uses_intra() {
        first.push(s(Premise, Implicit));
        second.push(s(Premise, Explicit));
    }
    out.push(Term {
        anchor: s(Premise, Explicit),
        positive: s(ExplicitEntailment, Explicit),
        denominators: first,
    });
    out.push(Term {
        anchor: s(Premise, Implicit),
        positive: s(ImpliedEntailment, Explicit),
        denominators: second,
    });

    if variant.uses_intra() {
        let mut hypotheses = vec![ExplicitEntailment, ImpliedEntailment];
        if variant.uses_contradiction() {
            hypotheses.push(Contradiction);
        }
        for role in hypotheses {
            out.push(Term {
                anchor: s(role, Explicit),
                positive: s(role, Implicit),
                denominators: vec![s(role, Implicit)],
            });
        }
    }
    out
}

/// The eight families of vectors for a batch of `N` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEmbeddings {
    slots: [Vec<Vec<f64>>; 8],
    dim: usize,
}

impl BatchEmbeddings {
    /// Duals in sample order for the premise, explicit-entailment,
    /// implied-entailment and contradiction of each sample.
    pub fn new(
        premise: Vec<DualEmbedding>,
        explicit: Vec<DualEmbedding>,
        implied: Vec<DualEmbedding>,
        contradiction: Vec<DualEmbedding>,
    ) -> Result<Self> {
        let n = premise.len();
        let mut slots: [Vec<Vec<f64>>; 8] = Default::default();
        for (role, duals) in Role::ALL.into_iter().zip([premise, explicit, implied, contradiction]) {
            if duals.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: duals.len(),
                });
            }
            let (rs, us): (Vec<_>, Vec<_>) = duals.into_iter().map(|d| (d.r, d.u)).unzip();
            slots[Slot::new(role, View::Explicit).index()] = rs;
            slots[Slot::new(role, View::Implicit).index()] = us;
        }
        Self::from_slots(slots)
    }

    fn from_slots(slots: [Vec<Vec<f64>>; 8]) -> Result<Self> {
        let n = slots[0].len();
        if n == 0 {
            return Err(Error::Empty("contrastive batch"));
        }
        let dim = slots[0][0].len();
        for family in &slots {
            if family.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: family.len(),
                });
            }
            for v in family {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: v.len(),
                    });
                }
                checked_norm(v)?;
            }
        }
        Ok(Self { slots, dim })
    }

    pub fn len(&self) -> usize {
        self.slots[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, slot: Slot, i: usize) -> &[f64] {
        &self.slots[slot.index()][i]
    }

    pub fn get_mut(&mut self, slot: Slot, i: usize) -> &mut [f64] {
        &mut self.slots[slot.index()][i]
    }

    pub fn dual(&self, role: Role, i: usize) -> DualEmbedding {
        DualEmbedding {
            r: self.get(Slot::new(role, View::Explicit), i).to_vec(),
            u: self.get(Slot::new(role, View::Implicit), i).to_vec(),
        }
    }

    /// Reorders every family by `perm` (`new[k] = old[perm[k]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let slots = self
            .slots
            .clone()
            .map(|family| perm.iter().map(|&k| family[k].clone()).collect());
        Self { slots, dim: self.dim }
    }
}

/// Gradient of the batch loss with respect to every vector of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    slots: [Vec<Vec<f64>>; 8],
}

impl BatchGradients {
    pub fn get(&self, slot: Slot, i: usize) -> &[f64] {
        &self.slots[slot.index()][i]
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Mean dual contrastive loss over the batch.
pub fn dual_loss(batch: &BatchEmbeddings, tau: Temperature, variant: LossVariant) -> Result<f64> {
    Ok(evaluate(batch, tau, variant, false).0)
}

/// Loss together with its analytic gradient.
pub fn dual_loss_with_grad(
    batch: &BatchEmbeddings,
    tau: Temperature,
    variant: LossVariant,
) -> Result<(f64, BatchGradients)> {
    let (loss, grads) = evaluate(batch, tau, variant, true);
    Ok((loss, grads.expect("gradients requested")))
}

fn evaluate(
    batch: &BatchEmbeddings,
    tau: Temperature,
    variant: LossVariant,
    with_grad: bool,
) -> (f64, Option<BatchGradients>) {
    let n = batch.len();
    let dim = batch.dim();
    let inv_tau = 1.0 / tau.get();

    // unit vectors and norms; validated nonzero at construction
    let norms: [Vec<f64>; 8] = std::array::from_fn(|s| batch.slots[s].iter().map(|v| norm(v)).collect());
    let units: [Vec<Vec<f64>>; 8] = std::array::from_fn(|s| {
        batch.slots[s]
            .iter()
            .zip(&norms[s])
            .map(|(v, &nv)| v.iter().map(|x| x / nv).collect())
            .collect()
    });
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // d loss / d cos(anchor, other) is accumulated into these unit-space grads
    let mut unit_grads: Option<[Vec<Vec<f64>>; 8]> =
        with_grad.then(|| std::array::from_fn(|_| vec![vec![0.0; dim]; n]));
    let mut total = 0.0;
    let scale = 1.0 / n as f64;
    let mut logits = Vec::new();

    for term in terms(variant) {
        let a_slot = term.anchor.index();
        for i in 0..n {
            let anchor = &units[a_slot][i];
            logits.clear();
            let mut cosines = Vec::with_capacity(term.denominators.len() * n);
            for family in &term.denominators {
                for other in &units[family.index()] {
                    let c = dot(anchor, other);
                    cosines.push(c);
                    logits.push(c * inv_tau);
                }
            }
            // positive = first family at j = i
            let positive = logits[i];
            let lse = log_sum_exp(&logits);
            total += lse - positive;

            if let Some(grads) = unit_grads.as_mut() {
                for (f_idx, family) in term.denominators.iter().enumerate() {
                    let fs = family.index();
                    for j in 0..n {
                        let k = f_idx * n + j;
                        let mut coef = (logits[k] - lse).exp() * inv_tau;
                        if k == i {
                            coef -= inv_tau;
                        }
                        coef *= scale;
                        let c = cosines[k];
                        let (a_norm, o_norm) = (norms[a_slot][i], norms[fs][j]);
                        let other = &units[fs][j];
                        // ∂cos/∂a = (ô - cos·â)/|a|, and symmetrically for o
                        for d in 0..dim {
                            grads[a_slot][i][d] += coef * (other[d] - c * anchor[d]) / a_norm;
                            grads[fs][j][d] += coef * (anchor[d] - c * other[d]) / o_norm;
                        }
                    }
                }
            }
        }
    }
    (total * scale, unit_grads.map(|slots| BatchGradients { slots }))
}
