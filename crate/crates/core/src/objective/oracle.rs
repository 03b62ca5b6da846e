//! Brute-force reference for the dual loss.
//!
//! Every term is written out by hand as a ratio of exponentials with its own
//! cosine, its own exponential kernel and a plain left-to-right sum. Nothing
//! here is shared with the log-sum-exp implementation in the parent module,
//! so the two can check each other.

use crate::encoder::View;
use crate::error::{Error, Result};

use super::{BatchEmbeddings, LossVariant, Role, Slot, Temperature};

/// Largest batch the oracle accepts.
pub const MAX_ORACLE_BATCH: usize = 8;

fn scalar_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

fn kernel(a: &[f64], b: &[f64], tau: f64) -> f64 {
    (scalar_cosine(a, b) / tau).exp()
}

/// The dual loss by explicit scalar loops (batch size at most
/// [`MAX_ORACLE_BATCH`]).
pub fn oracle_dual_loss(batch: &BatchEmbeddings, tau: Temperature, variant: LossVariant) -> Result<f64> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Empty("contrastive batch"));
    }
    if n > MAX_ORACLE_BATCH {
        return Err(Error::Config(format!(
            "oracle supports batches of at most {MAX_ORACLE_BATCH}, got {n}"
        )));
    }
    let t = tau.get();
    let r = |role, i: usize| batch.get(Slot::new(role, View::Explicit), i);
    let u = |role, i: usize| batch.get(Slot::new(role, View::Implicit), i);
    use Role::{Contradiction as Con, ExplicitEntailment as Exp, ImpliedEntailment as Imp, Premise as Pre};

    let (contradiction, intra) = match variant {
        LossVariant::Full => (true, true),
        LossVariant::NoContradiction => (false, true),
        LossVariant::NoIntra => (true, false),
        LossVariant::Neither => (false, false),
    };

    let mut per_instance = Vec::with_capacity(n);
    for i in 0..n {
        let mut li = 0.0;

        // r_i against r⁺_j1 (+ r⁻_j) (+ u_j)
        let mut den = 0.0;
        for j in 0..n {
            den += kernel(r(Pre, i), r(Exp, j), t);
            if contradiction {
                den += kernel(r(Pre, i), r(Con, j), t);
            }
            if intra {
                den += kernel(r(Pre, i), u(Pre, j), t);
            }
        }
        li -= (kernel(r(Pre, i), r(Exp, i), t) / den).ln();

        // u_i against r⁺_j2 (+ r⁻_j) (+ r_j)
        let mut den = 0.0;
        for j in 0..n {
            den += kernel(u(Pre, i), r(Imp, j), t);
            if contradiction {
                den += kernel(u(Pre, i), r(Con, j), t);
            }
            if intra {
                den += kernel(u(Pre, i), r(Pre, j), t);
            }
        }
        li -= (kernel(u(Pre, i), r(Imp, i), t) / den).ln();

        if intra {
            let mut hypotheses = vec![Exp, Imp];
            if contradiction {
                hypotheses.push(Con);
            }
            for role in hypotheses {
                let mut den = 0.0;
                for j in 0..n {
                    den += kernel(r(role, i), u(role, j), t);
                }
                li -= (kernel(r(role, i), u(role, i), t) / den).ln();
            }
        }
        per_instance.push(li);
    }

    let mut sum = 0.0;
    for li in per_instance.iter().rev() {
        sum += li;
    }
    Ok(sum / n as f64)
}
