//! Closed-form robustness quantities: rate envelopes, weight bounds,
//! expected margins, and the accuracy lower bounds they imply.
//!
//! Every operation here is a pure function of a [`RateProfile`]. Rates
//! are clamped to `[RATE_CLAMP, 1 - RATE_CLAMP]` before any logarithm so
//! all bounds stay finite; degenerate preconditions surface as explicit
//! `None` values, never as silent numbers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AuxKind, Dist, GraphSpec, Weights};

pub const RATE_CLAMP: f64 = 1e-6;

/// A quantity held per distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerDist {
    pub benign: f64,
    pub adversarial: f64,
}

impl PerDist {
    pub fn uniform(v: f64) -> PerDist {
        PerDist { benign: v, adversarial: v }
    }

    pub fn get(&self, d: Dist) -> f64 {
        match d {
            Dist::Benign => self.benign,
            Dist::Adversarial => self.adversarial,
        }
    }

    pub fn min(&self) -> f64 {
        self.benign.min(self.adversarial)
    }

    pub fn max(&self) -> f64 {
        self.benign.max(self.adversarial)
    }
}

/// Truth and false rates of one auxiliary sensor, per distribution.
///
/// For a permissive sensor, `alpha` is the firing probability when the
/// label is the target class and `eps` the firing probability otherwise.
/// For a preventative sensor, `alpha` is the probability of staying
/// silent off-target and `eps` the probability of staying silent on the
/// target class. Truth and false rates are not complementary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxRates {
    pub alpha: PerDist,
    pub eps: PerDist,
}

/// Per-model rates, the benign/adversarial mixture weight, and the class
/// prior. Model ordering matches the governing [`GraphSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateProfile {
    /// Mixture weight of the adversarial distribution.
    pub pi_adv: f64,
    pub class_prior: Vec<f64>,
    /// Accuracy of the main model per distribution.
    pub main_alpha: PerDist,
    pub aux: Vec<AuxRates>,
}

impl RateProfile {
    pub fn validate(&self, spec: &GraphSpec) -> Result<()> {
        if self.aux.len() != spec.aux_models.len() {
            return Err(Error::InvalidArgument(format!(
                "profile lists {} aux models, spec declares {}",
                self.aux.len(),
                spec.aux_models.len()
            )));
        }
        if self.class_prior.len() != spec.num_classes {
            return Err(Error::InvalidArgument(format!(
                "class_prior has {} entries, spec declares {} classes",
                self.class_prior.len(),
                spec.num_classes
            )));
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.pi_adv) {
            return Err(Error::InvalidArgument(format!("pi_adv {} outside [0,1]", self.pi_adv)));
        }
        let prior_sum: f64 = self.class_prior.iter().sum();
        if self.class_prior.iter().any(|p| !in_unit(*p)) || (prior_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("class_prior must sum to 1, got {prior_sum}")));
        }
        for d in Dist::BOTH {
            if !in_unit(self.main_alpha.get(d)) {
                return Err(Error::InvalidArgument("main alpha outside [0,1]".into()));
            }
            for r in &self.aux {
                if !in_unit(r.alpha.get(d)) || !in_unit(r.eps.get(d)) {
                    return Err(Error::InvalidArgument("aux rate outside [0,1]".into()));
                }
            }
        }
        Ok(())
    }

    /// Mixture truth rate of the main model, Σ_D π_D α_{*,D}.
    pub fn main_mixture_alpha(&self) -> f64 {
        (1.0 - self.pi_adv) * self.main_alpha.benign + self.pi_adv * self.main_alpha.adversarial
    }

    /// Binary log prior odds, ln(P[y=1]/P[y=0]); rates clamped.
    pub fn log_prior_odds(&self) -> f64 {
        (clamp_rate(self.class_prior[1]) / clamp_rate(self.class_prior[0])).ln()
    }
}

fn clamp_rate(r: f64) -> f64 {
    r.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP)
}

/// Min/max of one sensor's rates across the two distributions, clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelEnvelope {
    pub lo_alpha: f64,
    pub hi_alpha: f64,
    pub lo_eps: f64,
    pub hi_eps: f64,
}

/// Rate envelopes for the whole graph. The main model only has the alpha
/// pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEnvelope {
    pub main_lo_alpha: f64,
    pub main_hi_alpha: f64,
    pub aux: Vec<ModelEnvelope>,
}

/// Componentwise min/max over the two distributions, clamped away from 0
/// and 1 before any downstream logarithm.
pub fn envelopes(profile: &RateProfile) -> RateEnvelope {
    RateEnvelope {
        main_lo_alpha: clamp_rate(profile.main_alpha.min()),
        main_hi_alpha: clamp_rate(profile.main_alpha.max()),
        aux: profile
            .aux
            .iter()
            .map(|r| ModelEnvelope {
                lo_alpha: clamp_rate(r.alpha.min()),
                hi_alpha: clamp_rate(r.alpha.max()),
                lo_eps: clamp_rate(r.eps.min()),
                hi_eps: clamp_rate(r.eps.max()),
            })
            .collect(),
    }
}

/// Interval `[lo, hi]` for one factor weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightBounds {
    pub main: Interval,
    pub aux: Vec<Interval>,
}

/// Intervals bracketing the optimal factor weights.
///
/// Main: `[ln(∧α*/(1-∧α*)), ln(∨α*/(1-∨α*))]`. Auxiliary:
/// `[ln(∧α(1-∨ε)/((1-∧α)∨ε)), ln(∨α(1-∧ε)/((1-∨α)∧ε))]`; the lower end
/// is the one-sided bound quoted with the envelope definitions.
pub fn weight_bounds(env: &RateEnvelope) -> WeightBounds {
    WeightBounds {
        main: Interval {
            lo: (env.main_lo_alpha / (1.0 - env.main_lo_alpha)).ln(),
            hi: (env.main_hi_alpha / (1.0 - env.main_hi_alpha)).ln(),
        },
        aux: env
            .aux
            .iter()
            .map(|m| Interval {
                lo: (m.lo_alpha * (1.0 - m.hi_eps) / ((1.0 - m.lo_alpha) * m.hi_eps)).ln(),
                hi: (m.hi_alpha * (1.0 - m.lo_eps) / ((1.0 - m.hi_alpha) * m.lo_eps)).ln(),
            })
            .collect(),
    }
}

/// Expected margin contribution of the main model under distribution `d`.
pub fn mu_main(profile: &RateProfile, env: &RateEnvelope, d: Dist) -> f64 {
    let a = profile.main_alpha.get(d);
    a * (env.main_lo_alpha / (1.0 - env.main_lo_alpha)).ln()
        + (1.0 - a) * ((1.0 - env.main_hi_alpha) / env.main_hi_alpha).ln()
}

/// Which auxiliary block drives the margin (the true label's side).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Permissive models succeed, preventative models interfere.
    Permissive,
    /// Preventative models succeed, permissive models interfere.
    Preventative,
}

/// Expected auxiliary margin contribution for one block.
///
/// The named block contributes its truth-rate term; the opposite block
/// enters negatively through its false rate.
pub fn mu_block(spec: &GraphSpec, profile: &RateProfile, env: &RateEnvelope, d: Dist, block: Block) -> f64 {
    let succeeding = match block {
        Block::Permissive => AuxKind::Permissive,
        Block::Preventative => AuxKind::Preventative,
    };
    let mut total = 0.0;
    for ((model, rates), m) in spec.aux_models.iter().zip(&profile.aux).zip(&env.aux) {
        if model.kind == succeeding {
            let a = rates.alpha.get(d);
            total += a * (m.lo_alpha / m.hi_eps).ln()
                + (1.0 - a) * ((1.0 - m.hi_alpha) / (1.0 - m.lo_eps)).ln();
        } else {
            let e = rates.eps.get(d);
            total -= e * (m.hi_alpha / m.lo_eps).ln()
                + (1.0 - e) * ((1.0 - m.lo_alpha) / (1.0 - m.hi_eps)).ln();
        }
    }
    total
}

/// Expected margin μ_{y,D} for the binary graph.
pub fn expected_margin(
    spec: &GraphSpec,
    profile: &RateProfile,
    env: &RateEnvelope,
    y: usize,
    d: Dist,
) -> Result<f64> {
    if !spec.is_binary() {
        return Err(Error::UnsupportedShape("expected_margin requires a binary graph".into()));
    }
    let r_y = profile.log_prior_odds();
    let block = if y == 1 { Block::Permissive } else { Block::Preventative };
    let sign = if y == 1 { 1.0 } else { -1.0 };
    Ok(mu_main(profile, env, d) + mu_block(spec, profile, env, d, block) + sign * r_y)
}

/// Variance upper bound v² of the margin.
pub fn variance_bound(env: &RateEnvelope) -> f64 {
    let main = (env.main_hi_alpha / (1.0 - env.main_lo_alpha)).ln();
    let mut v2 = 4.0 * main * main;
    for m in &env.aux {
        let t = (m.hi_alpha * (1.0 - m.lo_eps) / (m.lo_eps * (1.0 - m.hi_alpha))).ln();
        v2 += t * t;
    }
    v2
}

/// Margin-concentration accuracy lower bound.
///
/// `None` when a precondition fails: a nonpositive block margin, a
/// nonpositive expected margin μ_{y,D}, or a degenerate v². Valid values
/// are clipped to `[0, 1]`.
pub fn convergence_bound(spec: &GraphSpec, profile: &RateProfile) -> Result<Option<f64>> {
    if !spec.is_binary() {
        return Err(Error::UnsupportedShape("convergence_bound requires a binary graph".into()));
    }
    let env = envelopes(profile);
    let v2 = variance_bound(&env);
    if v2 <= 0.0 {
        return Ok(None);
    }
    for d in Dist::BOTH {
        if mu_block(spec, profile, &env, d, Block::Permissive) <= 0.0
            || mu_block(spec, profile, &env, d, Block::Preventative) <= 0.0
        {
            return Ok(None);
        }
    }
    let mut tail = 0.0;
    for (d, pi) in dist_mixture(profile) {
        if pi == 0.0 {
            continue;
        }
        for y in 0..2 {
            let mu = expected_margin(spec, profile, &env, y, d)?;
            if mu <= 0.0 {
                return Ok(None);
            }
            tail += pi * profile.class_prior[y] * (-2.0 * mu * mu / v2).exp();
        }
    }
    Ok(Some((1.0 - tail).clamp(0.0, 1.0)))
}

fn dist_mixture(profile: &RateProfile) -> [(Dist, f64); 2] {
    [(Dist::Benign, 1.0 - profile.pi_adv), (Dist::Adversarial, profile.pi_adv)]
}

/// Accuracy lower bound in the homogeneous setting: `1 - exp(-2n(α-ε)²)`.
/// Returns 0 when `α <= ε` (the bound is vacuous there).
pub fn homogeneous_bound(n: usize, alpha: f64, eps: f64) -> f64 {
    if alpha <= eps {
        return 0.0;
    }
    let gap = alpha - eps;
    1.0 - (-2.0 * n as f64 * gap * gap).exp()
}

/// Closed-form optimal weights for the homogeneous setting: every
/// auxiliary weight `ln(α/ε)`, main weight and biases zero.
pub fn optimal_weights_homogeneous(spec: &GraphSpec, alpha: f64, eps: f64) -> Result<Weights> {
    if !(0.0..1.0).contains(&alpha) && alpha != 1.0 || alpha <= 0.0 || alpha >= 1.0 || eps <= 0.0 || eps >= 1.0 {
        return Err(Error::InvalidArgument(format!("alpha and eps must lie in (0,1), got ({alpha}, {eps})")));
    }
    Ok(Weights {
        w_main: 0.0,
        w_aux: vec![(alpha / eps).ln(); spec.aux_models.len()],
        bias: vec![0.0; spec.num_classes],
    })
}

/// Log-odds weights implied by a profile's mixture rates.
///
/// Each auxiliary weight is the full log-likelihood-ratio span of its
/// sensor, the main weight the (clamped) log-odds of the mixture truth
/// rate, and the per-class biases absorb the sensors' silent-state
/// offsets plus the class prior.
pub fn bayes_weights(spec: &GraphSpec, profile: &RateProfile) -> Result<Weights> {
    profile.validate(spec)?;
    let c = spec.num_classes as f64;
    let a_star = clamp_rate(profile.main_mixture_alpha());
    let w_main = (a_star * (c - 1.0) / (1.0 - a_star)).ln();
    let mut bias: Vec<f64> = profile.class_prior.iter().map(|p| clamp_rate(*p).ln()).collect();
    let mut w_aux = Vec::with_capacity(spec.aux_models.len());
    for (model, rates) in spec.aux_models.iter().zip(&profile.aux) {
        let a = clamp_rate((1.0 - profile.pi_adv) * rates.alpha.benign + profile.pi_adv * rates.alpha.adversarial);
        let e = clamp_rate((1.0 - profile.pi_adv) * rates.eps.benign + profile.pi_adv * rates.eps.adversarial);
        w_aux.push((a * (1.0 - e) / (e * (1.0 - a))).ln());
        bias[model.target_class] += match model.kind {
            AuxKind::Permissive => ((1.0 - a) / (1.0 - e)).ln(),
            AuxKind::Preventative => ((1.0 - e) / (1.0 - a)).ln(),
        };
    }
    Ok(Weights { w_main, w_aux, bias })
}

/// Combined truth rate γ_D: the ensemble's worst-case normalized
/// advantage over a random classifier.
///
/// Requires equally sized permissive and preventative blocks.
pub fn gamma_combined_truth_rate(spec: &GraphSpec, profile: &RateProfile, d: Dist) -> Result<f64> {
    let (m, n) = spec.block_sizes();
    if m != n {
        return Err(Error::UnsupportedShape(format!(
            "combined truth rate requires equally sized blocks, got {m} permissive / {n} preventative"
        )));
    }
    let base = profile.main_alpha.get(d) - 0.5;
    let mut perm_adv = base;
    let mut prev_adv = base;
    for (model, rates) in spec.aux_models.iter().zip(&profile.aux) {
        match model.kind {
            AuxKind::Permissive => {
                perm_adv += rates.alpha.get(d);
                prev_adv -= rates.eps.get(d);
            }
            AuxKind::Preventative => {
                prev_adv += rates.alpha.get(d);
                perm_adv -= rates.eps.get(d);
            }
        }
    }
    Ok(perm_adv.min(prev_adv) / (n as f64 + 1.0))
}

/// Outcome of the sufficient-condition test for improving on the main
/// model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientCondition {
    pub gamma: PerDist,
    /// `None` when the mixture truth rate is 1: no improvement is
    /// possible and the condition is unsatisfiable.
    pub threshold: Option<f64>,
    pub holds_benign: bool,
    pub holds_adversarial: bool,
    /// True iff γ_D exceeds the threshold for both distributions.
    pub holds: bool,
}

/// Tests `γ_D > sqrt((4/(n+1)) ln(1/(1-α*)))` for both distributions.
pub fn sufficient_condition(spec: &GraphSpec, profile: &RateProfile) -> Result<SufficientCondition> {
    let gamma = PerDist {
        benign: gamma_combined_truth_rate(spec, profile, Dist::Benign)?,
        adversarial: gamma_combined_truth_rate(spec, profile, Dist::Adversarial)?,
    };
    let (_, n) = spec.block_sizes();
    let a_star = profile.main_mixture_alpha();
    if a_star >= 1.0 {
        return Ok(SufficientCondition {
            gamma,
            threshold: None,
            holds_benign: false,
            holds_adversarial: false,
            holds: false,
        });
    }
    let threshold = (4.0 / (n as f64 + 1.0) * (1.0 / (1.0 - a_star)).ln()).sqrt();
    let hb = gamma.benign > threshold;
    let ha = gamma.adversarial > threshold;
    Ok(SufficientCondition {
        gamma,
        threshold: Some(threshold),
        holds_benign: hb,
        holds_adversarial: ha,
        holds: hb && ha,
    })
}

/// Mixture accuracy lower bound driven by the combined truth rates:
/// `1 - Σ_D π_D exp(-(n+1) γ_D² / (2(γ_D+1)))`.
///
/// `None` when either γ_D is nonpositive.
pub fn proposition_bound(spec: &GraphSpec, profile: &RateProfile) -> Result<Option<f64>> {
    let mut total = 0.0;
    let (_, n) = spec.block_sizes();
    for (d, pi) in dist_mixture(profile) {
        let gamma = gamma_combined_truth_rate(spec, profile, d)?;
        if pi == 0.0 {
            continue;
        }
        if gamma <= 0.0 {
            return Ok(None);
        }
        total += pi * (-(n as f64 + 1.0) * gamma * gamma / (2.0 * (gamma + 1.0))).exp();
    }
    Ok(Some((1.0 - total).clamp(0.0, 1.0)))
}

/// Weighted accuracy of the main model alone: Σ_D π_D α_{*,D}.
pub fn main_weighted_accuracy(profile: &RateProfile) -> f64 {
    profile.main_mixture_alpha()
}

/// π-weighted average of clean and robust accuracy.
pub fn weighted_accuracy(clean_acc: f64, robust_acc: f64, pi_adv: f64) -> f64 {
    (1.0 - pi_adv) * clean_acc + pi_adv * robust_acc
}

/// Every derived theory quantity for one (spec, profile) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub mu_main: PerDist,
    pub mu_i_block: PerDist,
    pub mu_j_block: PerDist,
    pub mu_y0: PerDist,
    pub mu_y1: PerDist,
    pub v2: f64,
    /// Margin-concentration bound; `None` when its preconditions fail.
    pub thm1_bound: Option<f64>,
    /// Homogeneous-setting bound; `None` when the profile is not
    /// homogeneous with equal blocks and α > ε.
    pub cor1_bound: Option<f64>,
    /// `None` when the blocks are not equally sized.
    pub sufficient: Option<SufficientCondition>,
    /// Combined-truth-rate bound; `None` when unavailable.
    pub prop_bound: Option<f64>,
    pub a_main: f64,
}

/// Detects a profile where every auxiliary sensor shares one (α, ε) pair
/// across models and distributions.
pub fn homogeneous_rates(spec: &GraphSpec, profile: &RateProfile) -> Option<(f64, f64)> {
    let (m, n) = spec.block_sizes();
    if m != n || profile.aux.is_empty() {
        return None;
    }
    let a = profile.aux[0].alpha.benign;
    let e = profile.aux[0].eps.benign;
    let tol = 1e-12;
    for r in &profile.aux {
        for d in Dist::BOTH {
            if (r.alpha.get(d) - a).abs() > tol || (r.eps.get(d) - e).abs() > tol {
                return None;
            }
        }
    }
    Some((a, e))
}

/// Evaluates every bound for a binary graph and profile.
pub fn bound_report(spec: &GraphSpec, profile: &RateProfile) -> Result<BoundReport> {
    if !spec.is_binary() {
        return Err(Error::UnsupportedShape("bound_report requires a binary graph".into()));
    }
    profile.validate(spec)?;
    let env = envelopes(profile);
    let per = |f: &dyn Fn(Dist) -> f64| PerDist { benign: f(Dist::Benign), adversarial: f(Dist::Adversarial) };
    let mu_i = per(&|d| mu_block(spec, profile, &env, d, Block::Permissive));
    let mu_j = per(&|d| mu_block(spec, profile, &env, d, Block::Preventative));
    let mu_y = |y: usize| -> Result<PerDist> {
        Ok(PerDist {
            benign: expected_margin(spec, profile, &env, y, Dist::Benign)?,
            adversarial: expected_margin(spec, profile, &env, y, Dist::Adversarial)?,
        })
    };
    let (m, n) = spec.block_sizes();
    let cor1_bound = homogeneous_rates(spec, profile)
        .filter(|(a, e)| a > e)
        .map(|(a, e)| homogeneous_bound(n, a, e));
    let sufficient = if m == n { Some(sufficient_condition(spec, profile)?) } else { None };
    let prop_bound = if m == n { proposition_bound(spec, profile)? } else { None };
    Ok(BoundReport {
        mu_main: per(&|d| mu_main(profile, &env, d)),
        mu_i_block: mu_i,
        mu_j_block: mu_j,
        mu_y0: mu_y(0)?,
        mu_y1: mu_y(1)?,
        v2: variance_bound(&env),
        thm1_bound: convergence_bound(spec, profile)?,
        cor1_bound,
        sufficient,
        prop_bound,
        a_main: main_weighted_accuracy(profile),
    })
}
