//! Reference DPO preference logit and sigmoid loss over sequence
//! log-probabilities, with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::compensated_sum;

/// Sequence log-probabilities (nats) of the chosen (`w`) and rejected (`l`)
/// responses under the trained policy and the frozen reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoInstance {
    pub logp_policy_w: f64,
    pub logp_policy_l: f64,
    pub logp_ref_w: f64,
    pub logp_ref_l: f64,
}

impl DpoInstance {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("logp_policy_w", self.logp_policy_w),
            ("logp_policy_l", self.logp_policy_l),
            ("logp_ref_w", self.logp_ref_w),
            ("logp_ref_l", self.logp_ref_l),
        ] {
            if !v.is_finite() || v > 0.0 {
                return Err(Error::validation(name, format!("must be finite and <= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Swaps chosen and rejected.
    pub fn swapped(&self) -> Self {
        DpoInstance {
            logp_policy_w: self.logp_policy_l,
            logp_policy_l: self.logp_policy_w,
            logp_ref_w: self.logp_ref_l,
            logp_ref_l: self.logp_ref_w,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoConfig {
    pub beta: f64,
    /// Weight of the chosen-response negative log-likelihood term.
    pub rpo_alpha: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            beta: 0.1,
            rpo_alpha: 0.1,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::validation("beta", format!("must be > 0, got {}", self.beta)));
        }
        if !(self.rpo_alpha >= 0.0 && self.rpo_alpha.is_finite()) {
            return Err(Error::validation(
                "rpo_alpha",
                format!("must be >= 0, got {}", self.rpo_alpha),
            ));
        }
        Ok(())
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn preference_logit(inst: &DpoInstance, beta: f64) -> f64 {
    beta * ((inst.logp_policy_w - inst.logp_ref_w) - (inst.logp_policy_l - inst.logp_ref_l))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpoLoss {
    pub delta: f64,
    /// `-ln σ(Δ)`.
    pub base_loss: f64,
    /// Base loss plus the weighted chosen NLL.
    pub loss: f64,
    /// d loss / d logp_policy_w.
    pub grad_w: f64,
    /// d loss / d logp_policy_l.
    pub grad_l: f64,
}

pub fn dpo_loss(inst: &DpoInstance, cfg: &DpoConfig) -> DpoLoss {
    let delta = preference_logit(inst, cfg.beta);
    let base_loss = softplus(-delta);
    let s = sigmoid(-delta);
    DpoLoss {
        delta,
        base_loss,
        loss: base_loss - cfg.rpo_alpha * inst.logp_policy_w,
        grad_w: -cfg.beta * s - cfg.rpo_alpha,
        grad_l: cfg.beta * s,
    }
}

/// Mean total loss over a batch.
pub fn batch_loss(instances: &[DpoInstance], cfg: &DpoConfig) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::EmptyBatch);
    }
    cfg.validate()?;
    for inst in instances {
        inst.validate()?;
    }
    let total = compensated_sum(instances.iter().map(|i| dpo_loss(i, cfg).loss));
    Ok(total / instances.len() as f64)
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Central finite-difference gradients of the total loss, taken term by
/// term so the linear likelihood term does not swamp the base term in
/// cancellation.
pub fn finite_difference_grads(inst: &DpoInstance, cfg: &DpoConfig, h: f64) -> (f64, f64) {
    let base = |i: DpoInstance| softplus(-preference_logit(&i, cfg.beta));
    let nll = |i: DpoInstance| -cfg.rpo_alpha * i.logp_policy_w;
    let central =
        |f: &dyn Fn(DpoInstance) -> f64, plus: DpoInstance, minus: DpoInstance| (f(plus) - f(minus)) / (2.0 * h);
    let w = (
        DpoInstance {
            logp_policy_w: inst.logp_policy_w + h,
            ..*inst
        },
        DpoInstance {
            logp_policy_w: inst.logp_policy_w - h,
            ..*inst
        },
    );
    let l = (
        DpoInstance {
            logp_policy_l: inst.logp_policy_l + h,
            ..*inst
        },
        DpoInstance {
            logp_policy_l: inst.logp_policy_l - h,
            ..*inst
        },
    );
    (
        central(&base, w.0, w.1) + central(&nll, w.0, w.1),
        central(&base, l.0, l.1) + central(&nll, l.0, l.1),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub analytic: (f64, f64),
    pub numeric: (f64, f64),
    pub max_relative_error: f64,
    pub passed: bool,
}

pub fn check_gradients(inst: &DpoInstance, cfg: &DpoConfig) -> GradientCheck {
    let out = dpo_loss(inst, cfg);
    let (nw, nl) = finite_difference_grads(inst, cfg, FD_STEP);
    let err = relative_error(out.grad_w, nw).max(relative_error(out.grad_l, nl));
    GradientCheck {
        analytic: (out.grad_w, out.grad_l),
        numeric: (nw, nl),
        max_relative_error: err,
        passed: err <= FD_TOLERANCE,
    }
}
