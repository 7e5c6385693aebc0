//! Maximum-likelihood weight learning by mini-batch gradient descent,
//! with optional adversarial augmentation of the training set.
//!
//! Parameters live in one flat vector laid out as
//! `[bias_0 .. bias_{C-1}, w_main, w_aux_0 .. w_aux_{K-1}]`; the
//! [`Weights`] struct is the public view of the same numbers.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{softplus, Example, GraphSpec, Weights};
use crate::rng::stream_rng;

const STREAM_AUGMENT: u64 = 0x41;
const STREAM_SHUFFLE: u64 = 0x53;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Fraction of the training set to duplicate with a corrupted main
    /// prediction before fitting.
    pub beta: f64,
    pub seed: u64,
    /// Early stop when the mini-batch gradient infinity norm drops below
    /// this.
    pub grad_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            iterations: 4000,
            batch_size: 50,
            beta: 0.0,
            seed: 0,
            grad_tolerance: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!("beta must lie in [0,1], got {}", self.beta)));
        }
        if !(self.grad_tolerance.is_finite() && self.grad_tolerance >= 0.0) {
            return Err(Error::InvalidArgument(format!("grad_tolerance must be nonnegative, got {}", self.grad_tolerance)));
        }
        Ok(())
    }
}

pub fn num_params(spec: &GraphSpec) -> usize {
    spec.num_classes + 1 + spec.aux_models.len()
}

pub fn weights_to_params(w: &Weights) -> Vec<f64> {
    let mut p = w.bias.clone();
    p.push(w.w_main);
    p.extend_from_slice(&w.w_aux);
    p
}

pub fn params_to_weights(spec: &GraphSpec, params: &[f64]) -> Result<Weights> {
    if params.len() != num_params(spec) {
        return Err(Error::InvalidArgument(format!(
            "expected {} parameters, got {}",
            num_params(spec),
            params.len()
        )));
    }
    let c = spec.num_classes;
    Ok(Weights {
        bias: params[..c].to_vec(),
        w_main: params[c],
        w_aux: params[c + 1..].to_vec(),
    })
}

/// Mean negative log-likelihood of the labels under the log-linear model.
pub fn negative_log_likelihood(spec: &GraphSpec, weights: &Weights, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate likelihood on an empty dataset".into()));
    }
    let mut total = 0.0;
    for ex in data {
        if spec.is_binary() {
            total += softplus(-spec.delta(weights, ex, ex.label)?);
        } else {
            let scores = spec.class_scores(weights, ex)?;
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
            total += lse - scores[ex.label];
        }
    }
    Ok(total / data.len() as f64)
}

/// Mean gradient of the negative log-likelihood, in parameter layout.
pub fn nll_gradient(spec: &GraphSpec, weights: &Weights, data: &[Example]) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate gradient on an empty dataset".into()));
    }
    let c = spec.num_classes;
    let mut grad = vec![0.0; num_params(spec)];
    for ex in data {
        let p = spec.posterior(weights, ex)?;
        // residual_c = p_c - 1{c = y}; each parameter's gradient is the
        // residual contracted with that parameter's class indicator.
        for (cls, &pc) in p.iter().enumerate() {
            let r = pc - f64::from(cls == ex.label);
            grad[cls] += r;
            if cls == ex.main {
                grad[c] += r;
            }
        }
        for (k, aux) in spec.aux_models.iter().enumerate() {
            let r = p[aux.target_class] - f64::from(aux.target_class == ex.label);
            let fired = ex.aux[k] != 0;
            match aux.kind {
                crate::graph::AuxKind::Permissive => {
                    if fired {
                        grad[c + 1 + k] += r;
                    }
                }
                crate::graph::AuxKind::Preventative => {
                    if !fired {
                        grad[c + 1 + k] -= r;
                    }
                }
            }
        }
    }
    let inv = 1.0 / data.len() as f64;
    for g in &mut grad {
        *g *= inv;
    }
    Ok(grad)
}

/// Appends adversarial copies of a ⌊βN⌋-element random subset, chosen
/// without replacement. Each copy keeps the label and sensor outputs but
/// replaces the main prediction with a wrong class (the complement in
/// the binary case, uniform over wrong classes otherwise) and tags the
/// row adversarial.
pub fn augment_adversarial(spec: &GraphSpec, data: &[Example], beta: f64, seed: u64) -> Result<Vec<Example>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0,1], got {beta}")));
    }
    let mut out = data.to_vec();
    let count = (beta * data.len() as f64).floor() as usize;
    if count == 0 {
        return Ok(out);
    }
    let mut rng = stream_rng(seed, STREAM_AUGMENT);
    // partial Fisher-Yates: the first `count` slots hold the subset
    let mut idx: Vec<usize> = (0..data.len()).collect();
    for i in 0..count {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut chosen = idx[..count].to_vec();
    chosen.sort_unstable();
    for i in chosen {
        let mut ex = data[i].clone();
        ex.main = if spec.is_binary() {
            1 - ex.main
        } else {
            let wrong = rng.gen_range(0..spec.num_classes - 1);
            wrong + usize::from(wrong >= ex.main)
        };
        ex.dist = crate::graph::Dist::Adversarial;
        out.push(ex);
    }
    Ok(out)
}

/// Fits weights by mini-batch gradient descent from a zero start.
///
/// The (possibly augmented) dataset is reshuffled at every epoch from a
/// seeded stream, so results are a pure function of the inputs. Stops
/// early when the mini-batch gradient infinity norm falls below
/// `grad_tolerance`; errors if the parameters ever leave finite range or
/// the full-data likelihood ends up worse than at initialization.
pub fn train_weights(spec: &GraphSpec, data: &[Example], config: &TrainConfig) -> Result<Weights> {
    spec.validate()?;
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    for ex in data {
        spec.validate_example(ex)?;
    }
    let data = augment_adversarial(spec, data, config.beta, config.seed)?;
    let n = data.len();
    let batch = config.batch_size.min(n);

    let mut params = vec![0.0; num_params(spec)];
    let initial_nll = negative_log_likelihood(spec, &params_to_weights(spec, &params)?, &data)?;

    let mut rng = stream_rng(config.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n; // forces a shuffle before the first batch
    let mut scratch: Vec<Example> = Vec::with_capacity(batch);

    for iteration in 0..config.iterations {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        scratch.clear();
        scratch.extend(order[cursor..cursor + batch].iter().map(|&i| data[i].clone()));
        cursor += batch;

        let weights = params_to_weights(spec, &params)?;
        let grad = nll_gradient(spec, &weights, &scratch)?;
        let inf_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if !inf_norm.is_finite() {
            return Err(Error::TrainingDiverged { iteration, detail: format!("gradient norm {inf_norm}") });
        }
        if inf_norm < config.grad_tolerance {
            break;
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= config.learning_rate * g;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { iteration, detail: "non-finite parameter".into() });
        }
    }

    let weights = params_to_weights(spec, &params)?;
    let final_nll = negative_log_likelihood(spec, &weights, &data)?;
    if final_nll.is_nan() || final_nll > initial_nll + 1e-9 {
        return Err(Error::TrainingDiverged {
            iteration: config.iterations,
            detail: format!("likelihood worsened from {initial_nll} to {final_nll}"),
        });
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AuxKind, AuxModel, Dist};

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
    fn nll_at_zero_is_log_two() {
        let spec = one_one_spec();
        let data = vec![ex(1, 0, vec![1, 0]), ex(0, 1, vec![0, 1])];
        let nll = negative_log_likelihood(&spec, &Weights::zeros(&spec), &data).unwrap();
        assert!((nll - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let spec = one_one_spec();
        let data = vec![
            ex(1, 1, vec![1, 1]),
            ex(0, 0, vec![0, 0]),
            ex(1, 0, vec![1, 0]),
            ex(0, 1, vec![1, 1]),
        ];
        let w = Weights { w_main: 0.4, w_aux: vec![-0.3, 0.9], bias: vec![0.1, -0.2] };
        let grad = nll_gradient(&spec, &w, &data).unwrap();
        let params = weights_to_params(&w);
        let h = 1e-6;
        for k in 0..params.len() {
            let mut lo = params.clone();
            let mut hi = params.clone();
            lo[k] -= h;
            hi[k] += h;
            let f_lo = negative_log_likelihood(&spec, &params_to_weights(&spec, &lo).unwrap(), &data).unwrap();
            let f_hi = negative_log_likelihood(&spec, &params_to_weights(&spec, &hi).unwrap(), &data).unwrap();
            let fd = (f_hi - f_lo) / (2.0 * h);
            assert!((grad[k] - fd).abs() < 1e-7, "param {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }

    #[test]
    fn gradient_at_zero_hand_value() {
        // single example y=1, main=1, both sensors fired; posterior 0.5
        let spec = one_one_spec();
        let data = vec![ex(1, 1, vec![1, 1])];
        let g = nll_gradient(&spec, &Weights::zeros(&spec), &data).unwrap();
        // layout [b0, b1, w_main, w_perm, w_prev]
        assert!((g[0] - 0.5).abs() < 1e-12);
        assert!((g[1] + 0.5).abs() < 1e-12);
        assert!((g[2] + 0.5).abs() < 1e-12);
        assert!((g[3] + 0.5).abs() < 1e-12);
        assert_eq!(g[4], 0.0); // preventative fired: factor constant in w
    }

    #[test]
    fn training_is_deterministic_and_improves_fit() {
        let spec = one_one_spec();
        // main is 80% accurate, permissive fires mostly on class 1
        let mut data = Vec::new();
        for k in 0..50 {
            let y = k % 2;
            let main = if k % 5 == 0 { 1 - y } else { y };
            let fired = u8::from(y == 1 && k % 7 != 0);
            let silent_ok = u8::from(y == 1 || k % 9 == 0);
            data.push(ex(y, main, vec![fired, silent_ok]));
        }
        let cfg = TrainConfig { iterations: 500, seed: 11, ..TrainConfig::default() };
        let w1 = train_weights(&spec, &data, &cfg).unwrap();
        let w2 = train_weights(&spec, &data, &cfg).unwrap();
        assert_eq!(w1, w2);
        let nll0 = negative_log_likelihood(&spec, &Weights::zeros(&spec), &data).unwrap();
        let nll1 = negative_log_likelihood(&spec, &w1, &data).unwrap();
        assert!(nll1 < nll0);
        assert!(w1.w_main > 0.0 && w1.w_aux[0] > 0.0);
    }

    #[test]
    fn augment_counts_and_flip_semantics() {
        let spec = one_one_spec();
        let data: Vec<Example> = (0..10).map(|k| ex(k % 2, k % 2, vec![0, 1])).collect();
        let out = augment_adversarial(&spec, &data, 0.5, 7).unwrap();
        assert_eq!(out.len(), 15);
        assert_eq!(out[..10], data[..]);
        for added in &out[10..] {
            assert_eq!(added.dist, Dist::Adversarial);
            let orig = data.iter().find(|e| e.label == added.label && e.aux == added.aux).unwrap();
            assert_eq!(added.main, 1 - orig.label);
            let _ = orig;
        }
        // same seed reproduces the augmentation exactly
        assert_eq!(out, augment_adversarial(&spec, &data, 0.5, 7).unwrap());
        // beta = 0 is the identity
        assert_eq!(augment_adversarial(&spec, &data, 0.0, 7).unwrap(), data);
    }

    #[test]
    fn augment_multiclass_flips_to_wrong_class() {
        let spec = GraphSpec { num_classes: 4, aux_models: vec![] };
        let data: Vec<Example> = (0..40)
            .map(|k| Example { label: k % 4, dist: Dist::Benign, main: k % 4, aux: vec![] })
            .collect();
        let out = augment_adversarial(&spec, &data, 1.0, 3).unwrap();
        assert_eq!(out.len(), 80);
        let mut seen_mains = std::collections::HashSet::new();
        for (orig, added) in data.iter().zip(&out[40..]) {
            assert_ne!(added.main, orig.main);
            seen_mains.insert(added.main);
        }
        assert!(seen_mains.len() > 1); // uniform draw actually varies
    }

    #[test]
    fn train_rejects_bad_config_and_empty_data() {
        let spec = one_one_spec();
        let data = vec![ex(0, 0, vec![0, 0])];
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(matches!(train_weights(&spec, &data, &bad), Err(Error::InvalidArgument(_))));
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(matches!(train_weights(&spec, &data, &bad), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            train_weights(&spec, &[], &TrainConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn params_round_trip() {
        let spec = one_one_spec();
        let w = Weights { w_main: 1.5, w_aux: vec![-0.5, 2.0], bias: vec![0.1, 0.2] };
        let p = weights_to_params(&w);
        assert_eq!(p, vec![0.1, 0.2, 1.5, -0.5, 2.0]);
        assert_eq!(params_to_weights(&spec, &p).unwrap(), w);
        assert!(params_to_weights(&spec, &p[..4]).is_err());
    }
}
