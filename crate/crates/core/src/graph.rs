//! Factor graph over a main classifier and auxiliary rule sensors.
//!
//! The graph couples one untrusted main model with a set of auxiliary
//! binary sensors. A *permissive* sensor firing is sufficient evidence for
//! its target class; a *preventative* sensor captures a necessary
//! condition of its target class and penalizes the class when it fails to
//! fire. Prediction is the argmax of a log-linear score over classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role of an auxiliary sensor relative to its target class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxKind {
    /// Firing implies the target class (sufficient condition).
    Permissive,
    /// Target class implies firing (necessary condition).
    Preventative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxModel {
    pub id: String,
    pub kind: AuxKind,
    pub target_class: usize,
}

/// Declares the class set and the auxiliary sensors. The order of
/// `aux_models` is canonical: `Weights::w_aux` and `Example::aux` index
/// into it positionally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub num_classes: usize,
    pub aux_models: Vec<AuxModel>,
}

/// Which distribution an example was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dist {
    Benign,
    Adversarial,
}

impl Dist {
    pub const BOTH: [Dist; 2] = [Dist::Benign, Dist::Adversarial];

    pub fn as_str(self) -> &'static str {
        match self {
            Dist::Benign => "benign",
            Dist::Adversarial => "adversarial",
        }
    }
}

impl std::str::FromStr for Dist {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "benign" => Ok(Dist::Benign),
            "adversarial" => Ok(Dist::Adversarial),
            other => Err(format!("unknown dist tag {other:?} (expected \"benign\" or \"adversarial\")")),
        }
    }
}

/// One observation: ground truth, distribution tag, and all sensor outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub label: usize,
    pub dist: Dist,
    /// Prediction of the main model.
    pub main: usize,
    /// One bit per auxiliary model, in `GraphSpec` order. 1 = fired.
    pub aux: Vec<u8>,
}

/// Factor weights plus per-class biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub w_main: f64,
    pub w_aux: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Weights {
    pub fn zeros(spec: &GraphSpec) -> Weights {
        Weights {
            w_main: 0.0,
            w_aux: vec![0.0; spec.aux_models.len()],
            bias: vec![0.0; spec.num_classes],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w_main.is_finite()
            && self.w_aux.iter().all(|w| w.is_finite())
            && self.bias.iter().all(|b| b.is_finite())
    }
}

/// Selects the main model or an auxiliary model by position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelIndex {
    Main,
    Aux(usize),
}

impl GraphSpec {
    pub fn binary(aux_models: Vec<AuxModel>) -> GraphSpec {
        GraphSpec { num_classes: 2, aux_models }
    }

    pub fn num_aux(&self) -> usize {
        self.aux_models.len()
    }

    pub fn is_binary(&self) -> bool {
        self.num_classes == 2
    }

    /// Count of (permissive, preventative) sensors.
    pub fn block_sizes(&self) -> (usize, usize) {
        let m = self.aux_models.iter().filter(|a| a.kind == AuxKind::Permissive).count();
        (m, self.aux_models.len() - m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for aux in &self.aux_models {
            if !seen.insert(aux.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate model id {:?}", aux.id)));
            }
            if aux.target_class >= self.num_classes {
                return Err(Error::InvalidArgument(format!(
                    "model {:?} targets class {} but num_classes is {}",
                    aux.id, aux.target_class, self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn validate_example(&self, ex: &Example) -> Result<()> {
        if ex.aux.len() != self.aux_models.len() {
            return Err(Error::InvalidArgument(format!(
                "example carries {} aux outputs, spec declares {}",
                ex.aux.len(),
                self.aux_models.len()
            )));
        }
        if ex.label >= self.num_classes || ex.main >= self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "class index out of range (label {}, main {}, num_classes {})",
                ex.label, ex.main, self.num_classes
            )));
        }
        Ok(())
    }

    pub fn validate_weights(&self, w: &Weights) -> Result<()> {
        if w.w_aux.len() != self.aux_models.len() || w.bias.len() != self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "weights shape ({} aux, {} bias) does not match spec ({} aux, {} classes)",
                w.w_aux.len(),
                w.bias.len(),
                self.aux_models.len(),
                self.num_classes
            )));
        }
        if !w.is_finite() {
            return Err(Error::InvalidArgument("weights must be finite".into()));
        }
        Ok(())
    }

    /// Value of one factor at output candidate `o`.
    ///
    /// Main: 1 iff `o` equals the main prediction. Permissive with target
    /// `c`: 1 unless the sensor fired and `o != c`. Preventative with
    /// target `c`: 1 unless `o == c` and the sensor did not fire.
    pub fn factor_value(&self, model: ModelIndex, o: usize, ex: &Example) -> Result<u8> {
        self.validate_example(ex)?;
        if o >= self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "candidate class {o} out of range (num_classes {})",
                self.num_classes
            )));
        }
        match model {
            ModelIndex::Main => Ok(u8::from(o == ex.main)),
            ModelIndex::Aux(k) => {
                let aux = self.aux_models.get(k).ok_or_else(|| {
                    Error::InvalidArgument(format!("aux index {k} out of range ({})", self.aux_models.len()))
                })?;
                let fired = ex.aux[k] != 0;
                Ok(match aux.kind {
                    AuxKind::Permissive => u8::from(!fired || o == aux.target_class),
                    AuxKind::Preventative => u8::from(o != aux.target_class || fired),
                })
            }
        }
    }

    /// Per-class log-linear scores. Constant offsets common to all classes
    /// are dropped, so scores are argmax-equivalent to summing weighted
    /// raw factor values.
    pub fn class_scores(&self, weights: &Weights, ex: &Example) -> Result<Vec<f64>> {
        self.validate_example(ex)?;
        self.validate_weights(weights)?;
        let mut scores = weights.bias.clone();
        scores[ex.main] += weights.w_main;
        for (k, aux) in self.aux_models.iter().enumerate() {
            let fired = ex.aux[k] != 0;
            match aux.kind {
                AuxKind::Permissive => {
                    if fired {
                        scores[aux.target_class] += weights.w_aux[k];
                    }
                }
                AuxKind::Preventative => {
                    if !fired {
                        scores[aux.target_class] -= weights.w_aux[k];
                    }
                }
            }
        }
        Ok(scores)
    }

    /// Signed log-odds margin for the binary graph.
    ///
    /// `delta(.., 1)` is the log-odds of class 1 over class 0; the value
    /// for `y_tilde = 0` is the exact negation (same arithmetic path,
    /// sign flipped once at the end).
    pub fn delta(&self, weights: &Weights, ex: &Example, y_tilde: usize) -> Result<f64> {
        if !self.is_binary() {
            return Err(Error::UnsupportedShape(format!(
                "delta is defined for binary graphs only ({} classes); use class_scores",
                self.num_classes
            )));
        }
        if y_tilde > 1 {
            return Err(Error::InvalidArgument(format!("y_tilde must be 0 or 1, got {y_tilde}")));
        }
        let scores = self.class_scores(weights, ex)?;
        let d = scores[1] - scores[0];
        Ok(if y_tilde == 1 { d } else { -d })
    }

    /// Class posterior under the log-linear model.
    pub fn posterior(&self, weights: &Weights, ex: &Example) -> Result<Vec<f64>> {
        if self.is_binary() {
            let d = self.delta(weights, ex, 1)?;
            let p1 = sigmoid(d);
            return Ok(vec![1.0 - p1, p1]);
        }
        let scores = self.class_scores(weights, ex)?;
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        if !z.is_finite() || z == 0.0 {
            return Err(Error::NumericalOverflow(format!("softmax normalizer {z}")));
        }
        Ok(exps.iter().map(|e| e / z).collect())
    }

    /// Predicted class: argmax of `class_scores`, exact ties resolved
    /// toward the main model's prediction when it is among the tied
    /// classes, otherwise toward the lowest tied index.
    pub fn infer(&self, weights: &Weights, ex: &Example) -> Result<usize> {
        let scores = self.class_scores(weights, ex)?;
        Ok(argmax_with_main_tie(&scores, ex.main))
    }
}

/// Argmax with the tie rule shared by `infer` and the exact enumerator.
///
/// Scores that agree in real arithmetic (e.g. equal weights canceling)
/// can differ by accumulated rounding, so ties are detected with a tiny
/// relative tolerance: classes within it of the maximum count as tied,
/// the main prediction wins among them, lowest index otherwise.
pub(crate) fn argmax_with_main_tie(scores: &[f64], main: usize) -> usize {
    let mut best = 0usize;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    let tol = 1e-9 * scores[best].abs().max(1.0);
    if scores[best] - scores[main] <= tol {
        return main;
    }
    scores
        .iter()
        .position(|&s| scores[best] - s <= tol)
        .unwrap_or(best)
}

/// Branch-stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_one_spec() -> GraphSpec {
        GraphSpec::binary(vec![
            AuxModel { id: "perm".into(), kind: AuxKind::Permissive, target_class: 1 },
            AuxModel { id: "prev".into(), kind: AuxKind::Preventative, target_class: 1 },
        ])
    }

    fn ex(label: usize, main: usize, aux: Vec<u8>) -> Example {
        Example { label, dist: Dist::Benign, main, aux }
    }

    #[test]
    fn factor_truth_tables() {
        let spec = one_one_spec();
        // (fired, o-matches-target) -> value, permissive then preventative
        for (fired, o, want_perm, want_prev) in [
            (0u8, 0usize, 1u8, 1u8), // silent sensor, off-target candidate
            (0, 1, 1, 0),            // preventative violated: target without firing
            (1, 0, 0, 1),            // permissive violated: fired but candidate off-target
            (1, 1, 1, 1),
        ] {
            let e = ex(0, 0, vec![fired, fired]);
            assert_eq!(spec.factor_value(ModelIndex::Aux(0), o, &e).unwrap(), want_perm, "perm fired={fired} o={o}");
            assert_eq!(spec.factor_value(ModelIndex::Aux(1), o, &e).unwrap(), want_prev, "prev fired={fired} o={o}");
        }
        let e = ex(0, 1, vec![0, 0]);
        assert_eq!(spec.factor_value(ModelIndex::Main, 1, &e).unwrap(), 1);
        assert_eq!(spec.factor_value(ModelIndex::Main, 0, &e).unwrap(), 0);
    }

    #[test]
    fn factor_index_out_of_range() {
        let spec = one_one_spec();
        let e = ex(0, 0, vec![0, 0]);
        assert!(matches!(spec.factor_value(ModelIndex::Aux(2), 0, &e), Err(Error::InvalidArgument(_))));
        assert!(matches!(spec.factor_value(ModelIndex::Main, 2, &e), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn delta_hand_example() {
        // b = 0.5, w_* = 2, w_perm = 1, w_prev = 3, s_* = 0, s_i = 1, s_j = 0:
        // delta(1) = 0.5 - 2 + 1 - 3 = -3.5
        let spec = one_one_spec();
        let w = Weights { w_main: 2.0, w_aux: vec![1.0, 3.0], bias: vec![0.0, 0.5] };
        let e = ex(1, 0, vec![1, 0]);
        let d = spec.delta(&w, &e, 1).unwrap();
        assert!((d - (-3.5)).abs() < 1e-12);
        // factor-by-factor inner product <w, f_1 - f_0> must agree
        let mut ip = w.bias[1] - w.bias[0];
        let models = [ModelIndex::Main, ModelIndex::Aux(0), ModelIndex::Aux(1)];
        let ws = [w.w_main, w.w_aux[0], w.w_aux[1]];
        for (m, wk) in models.iter().zip(ws) {
            let f1 = spec.factor_value(*m, 1, &e).unwrap() as f64;
            let f0 = spec.factor_value(*m, 0, &e).unwrap() as f64;
            ip += wk * (f1 - f0);
        }
        assert_eq!(d, ip);
    }

    #[test]
    fn delta_zero_params_and_sign_symmetry() {
        let spec = one_one_spec();
        let zero = Weights::zeros(&spec);
        let e = ex(1, 0, vec![1, 0]);
        assert_eq!(spec.delta(&zero, &e, 1).unwrap(), 0.0);
        let w = Weights { w_main: 0.3, w_aux: vec![1.7, 0.2], bias: vec![-0.1, 0.9] };
        let d1 = spec.delta(&w, &e, 1).unwrap();
        let d0 = spec.delta(&w, &e, 0).unwrap();
        assert_eq!(d0.to_bits(), (-d1).to_bits());
    }

    #[test]
    fn delta_rejects_multiclass() {
        let spec = GraphSpec { num_classes: 3, aux_models: vec![] };
        let w = Weights::zeros(&spec);
        let e = Example { label: 0, dist: Dist::Benign, main: 2, aux: vec![] };
        assert!(matches!(spec.delta(&w, &e, 1), Err(Error::UnsupportedShape(_))));
    }

    #[test]
    fn posterior_values() {
        let spec = one_one_spec();
        let zero = Weights::zeros(&spec);
        let e = ex(1, 0, vec![1, 0]);
        assert_eq!(spec.posterior(&zero, &e).unwrap(), vec![0.5, 0.5]);
        // delta(1) = -3.5 from the hand example
        let w = Weights { w_main: 2.0, w_aux: vec![1.0, 3.0], bias: vec![0.0, 0.5] };
        let p = spec.posterior(&w, &e).unwrap();
        assert!((p[1] - 0.029312).abs() < 1e-6);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn class_scores_multiclass_indicator() {
        let spec = GraphSpec { num_classes: 3, aux_models: vec![] };
        let w = Weights { w_main: 1.0, w_aux: vec![], bias: vec![0.0; 3] };
        let e = Example { label: 2, dist: Dist::Benign, main: 2, aux: vec![] };
        assert_eq!(spec.class_scores(&w, &e).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn scores_all_zero_weights_equal_bias() {
        let spec = one_one_spec();
        let w = Weights { w_main: 0.0, w_aux: vec![0.0, 0.0], bias: vec![0.25, -0.75] };
        let e = ex(0, 1, vec![1, 1]);
        assert_eq!(spec.class_scores(&w, &e).unwrap(), vec![0.25, -0.75]);
    }

    #[test]
    fn binary_score_difference_matches_delta() {
        let spec = one_one_spec();
        let w = Weights { w_main: 2.0, w_aux: vec![1.0, 3.0], bias: vec![0.0, 0.5] };
        let e = ex(1, 0, vec![1, 0]);
        let s = spec.class_scores(&w, &e).unwrap();
        assert!((s[1] - s[0] - (-3.5)).abs() < 1e-12);
    }

    #[test]
    fn infer_hand_cases() {
        let spec = one_one_spec();
        let w = Weights { w_main: 2.0, w_aux: vec![1.0, 3.0], bias: vec![0.0, 0.5] };
        let e = ex(1, 0, vec![1, 0]);
        assert_eq!(spec.infer(&w, &e).unwrap(), 0); // delta(1) = -3.5

        // global tie resolves toward the main prediction
        let zero = Weights::zeros(&spec);
        let e = ex(0, 1, vec![0, 1]);
        assert_eq!(spec.infer(&zero, &e).unwrap(), 1);

        // main dominates when aux weights are zero
        let w = Weights { w_main: 1.0, w_aux: vec![0.0, 0.0], bias: vec![0.0, 0.0] };
        for main in 0..2 {
            for bits in 0..4u8 {
                let e = ex(0, main, vec![bits & 1, bits >> 1]);
                assert_eq!(spec.infer(&w, &e).unwrap(), main);
            }
        }
    }
}
