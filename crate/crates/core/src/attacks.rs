//! Byzantine message generators.
//!
//! What an adversary uploads depends on the protocol: a gradient for
//! aggregation SGD, a primal for RSA, a box-bounded dual for ADMM. Value
//! attacks (small value, large value, copy) are phrased as a fake primal
//! `u`; under ADMM the adversary pushes `u` through the same projected dual
//! recursion an honest worker uses, so the master cannot reject the message.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::algorithms::{dual_update, proj_box, HyperParams};
use crate::model::ModelVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AttackKind {
    None,
    /// i.i.d. `N(0, std²)` coordinates.
    Gaussian {
        std: f64,
    },
    /// Honest message scaled by `epsilon < 0`.
    SignFlip {
        epsilon: f64,
    },
    /// `u = x₀ − ε / max{k(k+1), 1}`
    SmallValue {
        epsilon: f64,
    },
    /// `u = x₀ − (4λ/β)(−1)ᵏ`
    LargeValue,
    /// Replay regular worker `target`'s primal.
    CopyRegular {
        target: usize,
    },
}

impl AttackKind {
    pub fn label(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Gaussian { .. } => "gaussian",
            AttackKind::SignFlip { .. } => "sign-flip",
            AttackKind::SmallValue { .. } => "small-value",
            AttackKind::LargeValue => "large-value",
            AttackKind::CopyRegular { .. } => "copy-regular",
        }
    }

    /// Whether the adversary needs the honest message it would have sent.
    pub fn needs_honest_value(&self) -> bool {
        matches!(self, AttackKind::SignFlip { .. })
    }
}

/// Attack model plus the identities of the Byzantine workers.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub byzantine_ids: BTreeSet<usize>,
}

impl AttackSpec {
    pub fn none() -> Self {
        AttackSpec {
            kind: AttackKind::None,
            byzantine_ids: BTreeSet::new(),
        }
    }

    pub fn new(kind: AttackKind, byzantine_ids: impl IntoIterator<Item = usize>) -> Self {
        AttackSpec {
            kind,
            byzantine_ids: byzantine_ids.into_iter().collect(),
        }
    }

    pub fn q(&self) -> usize {
        self.byzantine_ids.len()
    }

    pub fn is_byzantine(&self, worker: usize) -> bool {
        self.byzantine_ids.contains(&worker)
    }

    pub fn regular_ids(&self, m: usize) -> Vec<usize> {
        (0..m).filter(|w| !self.is_byzantine(*w)).collect()
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if let Some(&bad) = self.byzantine_ids.iter().find(|&&w| w >= m) {
            return Err(Error::config(format!(
                "byzantine id {bad} is not a worker (m = {m})"
            )));
        }
        if self.q() >= m {
            return Err(Error::config("at least one worker must be regular"));
        }
        match self.kind {
            AttackKind::None if self.q() > 0 => Err(Error::config(
                "attack kind none with byzantine workers; use an attack or an empty id set",
            )),
            AttackKind::Gaussian { std } if !(std >= 0.0 && std.is_finite()) => {
                Err(Error::config("gaussian std must be a finite value >= 0"))
            }
            AttackKind::SignFlip { epsilon } if !(epsilon < 0.0) => Err(Error::config(format!(
                "sign-flip epsilon must be < 0 (got {epsilon})"
            ))),
            AttackKind::SmallValue { epsilon } if !(epsilon > 0.0) => Err(Error::config(format!(
                "small-value epsilon must be > 0 (got {epsilon})"
            ))),
            AttackKind::CopyRegular { target } if target >= m || self.is_byzantine(target) => Err(
                Error::config(format!("copy target {target} is not a regular worker")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Admm,
    Rsa,
    AggSgd,
}

/// What an adversary can see when forging its round-`k` message.
///
/// `k` and `x0` refer to the round index of the message being sent. For ADMM
/// that is the freshly broadcast `x₀ᵏ⁺¹` together with index `k+1`. For RSA
/// and SGD it is the current `x₀ᵏ`.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub k: usize,
    pub x0: &'a ModelVector,
    pub hyper: &'a HyperParams,
    /// The adversary's own dual `ηⱼᵏ` (ADMM only).
    pub own_dual: Option<&'a ModelVector>,
    /// What an honest worker in its position would send.
    pub honest: Option<&'a ModelVector>,
    /// The copy target's primal (value under SGD: its gradient).
    pub copy_target: Option<&'a ModelVector>,
}

fn required<'a>(
    field: Option<&'a ModelVector>,
    what: &str,
    kind: &AttackKind,
) -> Result<&'a ModelVector> {
    field.ok_or_else(|| {
        Error::config(format!(
            "{} attack needs {what} in its context",
            kind.label()
        ))
    })
}

/// The fake primal behind a value attack.
fn forged_primal(kind: &AttackKind, ctx: &AttackContext) -> Result<ModelVector> {
    let k = ctx.k as f64;
    match *kind {
        AttackKind::SmallValue { epsilon } => {
            let shift = epsilon / (k * (k + 1.0)).max(1.0);
            Ok(ctx.x0.iter().map(|x| x - shift).collect())
        }
        AttackKind::LargeValue => {
            let sign = if ctx.k.is_multiple_of(2) { 1.0 } else { -1.0 };
            let shift = 4.0 * ctx.hyper.lambda / ctx.hyper.beta * sign;
            Ok(ctx.x0.iter().map(|x| x - shift).collect())
        }
        AttackKind::CopyRegular { .. } => {
            Ok(required(ctx.copy_target, "the target's primal", kind)?.clone())
        }
        _ => unreachable!("not a value attack"),
    }
}

/// Forge one Byzantine upload.
pub fn byzantine_payload<R: Rng + ?Sized>(
    kind: &AttackKind,
    protocol: Protocol,
    ctx: &AttackContext,
    rng: &mut R,
) -> Result<ModelVector> {
    let d = ctx.x0.len();
    let lambda = ctx.hyper.lambda;
    match (*kind, protocol) {
        (AttackKind::None, _) => Ok(required(ctx.honest, "the honest message", kind)?.clone()),
        (AttackKind::Gaussian { std }, _) => {
            let normal = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
            let raw: ModelVector = (0..d).map(|_| normal.sample(rng)).collect();
            Ok(match protocol {
                Protocol::Admm => proj_box(&raw, lambda),
                _ => raw,
            })
        }
        (AttackKind::SignFlip { epsilon }, _) => {
            let flipped = required(ctx.honest, "the honest message", kind)?.scaled(epsilon);
            Ok(match protocol {
                Protocol::Admm => proj_box(&flipped, lambda),
                _ => flipped,
            })
        }
        (AttackKind::CopyRegular { .. }, Protocol::AggSgd) => {
            Ok(required(ctx.copy_target, "the target's gradient", kind)?.clone())
        }
        (AttackKind::SmallValue { .. } | AttackKind::LargeValue, Protocol::AggSgd) => {
            Err(Error::config(format!(
                "{} is a primal-value attack and has no gradient form",
                kind.label()
            )))
        }
        (_, Protocol::Rsa) => forged_primal(kind, ctx),
        (_, Protocol::Admm) => {
            let u = forged_primal(kind, ctx)?;
            let eta = required(ctx.own_dual, "its own dual", kind)?;
            dual_update(eta, &u, ctx.x0, ctx.hyper)
        }
    }
}
