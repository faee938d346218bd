//! Supervised hashing network: the code layer is the last layer and its
//! code inner products are pushed toward the pairwise label matrix.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::BinaryCodes;
use crate::data_io::group_by_class;
use crate::error::{Error, Result};
use crate::hashnet::{forward_until, init_params, ForwardCache, Mode, NetConfig, NetParams};
use crate::itq;
use crate::lbfgs::LbfgsConfig;
use crate::numerics::{frob_sq, matmul, matmul_tn, Mat};
use crate::objective::{
    backpropagate, code_penalty_gradient, code_penalty_terms, weight_decay, weight_step,
    HalfStep, Lambdas, Terms, Trace, TraceRecord,
};

/// `m x m` matrix with `+1` for same-class pairs and `−1` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseLabels(Mat);

impl PairwiseLabels {
    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn pairwise_label_matrix(labels: &[u32]) -> Result<PairwiseLabels> {
    let m = labels.len();
    if m == 0 {
        return Err(Error::validation("pairwise labels need at least one sample"));
    }
    Ok(PairwiseLabels(Mat::from_fn(m, m, |i, j| {
        if labels[i] == labels[j] {
            1.0
        } else {
            -1.0
        }
    })))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShHyperParams {
    pub lambdas: Lambdas,
    /// Outer alternations `T`.
    pub iterations: usize,
    /// Training samples drawn per class; `usize::MAX` keeps every sample.
    pub per_class_sample: usize,
    pub itq_iterations: usize,
}

impl Default for ShHyperParams {
    fn default() -> Self {
        ShHyperParams {
            lambdas: Lambdas::new(1e-3, 5.0, 1.0, 1e-4),
            iterations: 5,
            per_class_sample: 300,
            itq_iterations: itq::DEFAULT_ITERS,
        }
    }
}

impl ShHyperParams {
    pub fn validate(&self) -> Result<()> {
        self.lambdas.validate()?;
        if self.iterations == 0 {
            return Err(Error::validation("at least one outer iteration is required"));
        }
        if self.per_class_sample == 0 {
            return Err(Error::validation("per-class sample size must be at least 1"));
        }
        Ok(())
    }
}

fn check_mode(config: &NetConfig) -> Result<()> {
    if config.mode() != Mode::Supervised {
        return Err(Error::validation("expected a supervised network configuration"));
    }
    Ok(())
}

/// `V = (1/L) Hᵀ H − S`
pub fn similarity_residual(code_output: &Mat, s: &PairwiseLabels) -> Result<Mat> {
    let bits = code_output.rows() as f64;
    if s.len() != code_output.cols() {
        return Err(Error::shape(
            "pairwise labels vs code layer",
            s.0.shape(),
            (code_output.cols(), code_output.cols()),
        ));
    }
    let mut v = matmul_tn(code_output, code_output)?.scale(1.0 / bits);
    v.axpy(-1.0, &s.0)?;
    Ok(v)
}

fn terms_from(
    params: &NetParams,
    code_output: &Mat,
    s: &PairwiseLabels,
    b: &BinaryCodes,
    lambdas: &Lambdas,
) -> Result<(Terms, Mat)> {
    let m = code_output.cols() as f64;
    let v = similarity_residual(code_output, s)?;
    let mut terms = code_penalty_terms(code_output, b, lambdas)?;
    terms.fit = frob_sq(&v) / (2.0 * m);
    terms.decay = weight_decay(params, lambdas.decay);
    Ok((terms, v))
}

pub fn sh_terms(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    s: &PairwiseLabels,
    b: &BinaryCodes,
    h: &ShHyperParams,
) -> Result<Terms> {
    check_mode(config)?;
    let cache = forward_until(params, config, x, config.code_layer())?;
    Ok(terms_from(params, cache.activation(config.code_layer()), s, b, &h.lambdas)?.0)
}

pub fn sh_objective(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    s: &PairwiseLabels,
    b: &BinaryCodes,
    h: &ShHyperParams,
) -> Result<f64> {
    Ok(sh_terms(params, config, x, s, b, h)?.total())
}

pub fn sh_objective_and_gradients(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    s: &PairwiseLabels,
    b: &BinaryCodes,
    h: &ShHyperParams,
) -> Result<(Terms, NetParams)> {
    check_mode(config)?;
    let top = config.code_layer();
    let cache = forward_until(params, config, x, top)?;
    let hcode = cache.activation(top);
    let (terms, v) = terms_from(params, hcode, s, b, &h.lambdas)?;
    let grads = gradients_from(params, config, x, b, h, &cache, &v)?;
    Ok((terms, grads))
}

fn gradients_from(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    b: &BinaryCodes,
    h: &ShHyperParams,
    cache: &ForwardCache,
    v: &Mat,
) -> Result<NetParams> {
    let top = config.code_layer();
    let hcode = cache.activation(top);
    let (bits, m) = hcode.shape();
    // (1/(mL)) H (V + Vᵀ); V is symmetric
    let mut delta = matmul(hcode, v)?.scale(2.0 / (m as f64 * bits as f64));
    delta.axpy(1.0, &code_penalty_gradient(hcode, b, &h.lambdas)?)?;
    // the output layer is linear, so f′ = 1
    let mut grads = NetParams::zeros(config);
    backpropagate(params, config, x, cache, top, delta, h.lambdas.decay, &mut grads)?;
    Ok(grads)
}

pub fn sh_gradients(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    s: &PairwiseLabels,
    b: &BinaryCodes,
    h: &ShHyperParams,
) -> Result<NetParams> {
    Ok(sh_objective_and_gradients(params, config, x, s, b, h)?.1)
}

/// `B = sign(H⁽ⁿ⁾)`, the exact minimizer of `‖H − B‖²` over binary `B`.
pub fn b_step_sign(cache: &ForwardCache) -> BinaryCodes {
    BinaryCodes::from_sign(cache.activation(cache.top()))
}

/// Draws up to `per_class` samples from every class without replacement.
/// Returns sorted indices.
pub fn sample_per_class(labels: &[u32], per_class: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for (_, mut members) in group_by_class(labels) {
        if members.len() > per_class {
            members.shuffle(&mut rng);
            members.truncate(per_class);
        }
        picked.extend(members);
    }
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone)]
pub struct ShTraining {
    pub params: NetParams,
    pub codes: BinaryCodes,
    pub trace: Trace,
    /// Indices (into the input) of the samples used for training.
    pub sampled: Vec<usize>,
}

/// Alternating optimization for the supervised network. Every `W⁽ˡ⁾` is
/// eigenvector-initialized, there is no identity layer.
pub fn train_sh(
    x: &Mat,
    labels: &[u32],
    config: &NetConfig,
    h: &ShHyperParams,
    lbfgs_cfg: &LbfgsConfig,
    seed: u64,
) -> Result<ShTraining> {
    check_mode(config)?;
    h.validate()?;
    lbfgs_cfg.validate().map_err(Error::Validation)?;
    if labels.len() != x.cols() {
        return Err(Error::validation(format!(
            "{} labels for {} samples",
            labels.len(),
            x.cols()
        )));
    }
    if labels.is_empty() {
        return Err(Error::validation("no labelled samples"));
    }

    let sampled = sample_per_class(labels, h.per_class_sample, seed);
    let x = x.select_cols(&sampled);
    let labels: Vec<u32> = sampled.iter().map(|&j| labels[j]).collect();
    let s = pairwise_label_matrix(&labels)?;

    let mut b = itq::itq_train(&x, config.bits(), h.itq_iterations, seed)?.codes;
    let mut params = init_params(config, &x, seed)?;
    let mut trace = Trace::default();
    let terms = sh_terms(&params, config, &x, &s, &b, h)?;
    trace.push(TraceRecord {
        iteration: 0,
        step: HalfStep::Init,
        objective: terms.total(),
        terms,
        inner_iterations: 0,
        flipped: 0,
        note: None,
    })?;

    let step = |params: &NetParams, b: &BinaryCodes| {
        weight_step(config, params, lbfgs_cfg, |p| {
            let (t, g) = sh_objective_and_gradients(p, config, &x, &s, b, h)?;
            Ok((t.total(), g))
        })
    };
    let record = |t: usize, tag: HalfStep, params: &NetParams, b: &BinaryCodes, value: f64, inner, note| {
        Ok::<_, Error>(TraceRecord {
            iteration: t,
            step: tag,
            objective: value,
            terms: sh_terms(params, config, &x, &s, b, h)?,
            inner_iterations: inner,
            flipped: 0,
            note,
        })
    };

    let ws = step(&params, &b)?;
    params = ws.params;
    trace.push(record(0, HalfStep::WarmUp, &params, &b, ws.value, ws.iterations, Some(format!("{:?}", ws.status)))?)?;

    for t in 1..=h.iterations {
        let cache = forward_until(&params, config, &x, config.code_layer())?;
        let next = b_step_sign(&cache);
        let flipped = next
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .filter(|(a, c)| a != c)
            .count();
        b = next;
        let terms = sh_terms(&params, config, &x, &s, &b, h)?;
        trace.push(TraceRecord {
            iteration: t,
            step: HalfStep::BStep,
            objective: terms.total(),
            terms,
            inner_iterations: 1,
            flipped,
            note: None,
        })?;

        let ws = step(&params, &b)?;
        params = ws.params;
        trace.push(record(t, HalfStep::WeightStep, &params, &b, ws.value, ws.iterations, Some(format!("{:?}", ws.status)))?)?;
    }

    Ok(ShTraining {
        params,
        codes: b,
        trace,
        sampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_matrix_examples() {
        let s = pairwise_label_matrix(&[0, 0, 1]).unwrap();
        assert_eq!(
            s.as_mat(),
            &Mat::from_rows(&[[1.0, 1.0, -1.0], [1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
        );
        let same = pairwise_label_matrix(&[4, 4, 4, 4]).unwrap();
        assert!(same.as_mat().as_slice().iter().all(|&v| v == 1.0));
        let distinct = pairwise_label_matrix(&[0, 1, 2]).unwrap();
        assert_eq!(distinct.as_mat(), &Mat::identity(3).scale(2.0).map(|v| v - 1.0));
        assert!(pairwise_label_matrix(&[]).is_err());
    }

    #[test]
    fn identical_codes_with_same_label_have_zero_similarity_residual() {
        let h = Mat::from_rows(&[[1.0, 1.0], [-1.0, -1.0], [1.0, 1.0]]);
        let s = pairwise_label_matrix(&[3, 3]).unwrap();
        let v = similarity_residual(&h, &s).unwrap();
        assert_eq!(v.get(0, 1), 0.0);
        assert_eq!(v.get(1, 0), 0.0);
    }

    #[test]
    fn sign_step_examples() {
        let config = NetConfig::supervised(vec![2, 2]).unwrap();
        let params = NetParams {
            weights: vec![Mat::identity(2)],
            biases: vec![vec![0.0, 0.0]],
        };
        let x = Mat::from_rows(&[[0.2, -3.0, 0.0], [-0.1, 4.0, 0.0]]);
        let cache = forward_until(&params, &config, &x, 1).unwrap();
        let b = b_step_sign(&cache);
        assert_eq!(b.row(0), &[1, -1, 1]);
        assert_eq!(b.row(1), &[-1, 1, 1]);
    }

    #[test]
    fn per_class_sampling_caps_each_class() {
        let labels: Vec<u32> = (0..20).map(|j| if j < 15 { 0 } else { 1 }).collect();
        let picked = sample_per_class(&labels, 4, 9);
        assert_eq!(picked.iter().filter(|&&j| labels[j] == 0).count(), 4);
        assert_eq!(picked.iter().filter(|&&j| labels[j] == 1).count(), 4);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_per_class(&labels, usize::MAX, 9), (0..20).collect::<Vec<_>>());
        assert_eq!(sample_per_class(&labels, 4, 9), picked);
    }

    #[test]
    fn training_rejects_label_count_mismatch_and_unsupervised_configs() {
        let x = Mat::zeros(3, 4);
        let sh = NetConfig::supervised(vec![3, 2]).unwrap();
        let lc = LbfgsConfig::default();
        let h = ShHyperParams::default();
        assert!(train_sh(&x, &[0, 1, 0], &sh, &h, &lc, 0).is_err());
        let uh = NetConfig::unsupervised(vec![3, 2, 3]).unwrap();
        assert!(train_sh(&x, &[0, 1, 0, 1], &uh, &h, &lc, 0).is_err());
    }
}
