//! Unsupervised hashing network: reconstruction objective with binary,
//! independence and balance penalties on the penultimate layer, trained by
//! alternating L-BFGS `(W, c)` steps with discrete cyclic coordinate descent
//! on `B`.

use crate::codes::{sign, BinaryCodes};
use crate::error::{Error, Result};
use crate::hashnet::{forward_until, init_params, ForwardCache, Mode, NetConfig, NetParams};
use crate::itq;
use crate::lbfgs::LbfgsConfig;
use crate::numerics::{frob_sq, matmul, matmul_nt, matmul_tn, Mat};
use crate::objective::{
    backpropagate, code_penalty_gradient, code_penalty_terms, weight_decay, weight_step,
    HalfStep, Lambdas, Terms, Trace, TraceRecord,
};

/// Cap on full passes over the rows of `B` in one B step.
pub const MAX_B_SWEEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UhHyperParams {
    pub lambdas: Lambdas,
    /// Outer alternations `T`.
    pub iterations: usize,
    /// ITQ iterations used to produce `B₍₀₎`.
    pub itq_iterations: usize,
}

impl Default for UhHyperParams {
    fn default() -> Self {
        UhHyperParams {
            lambdas: Lambdas::new(1e-5, 5e-2, 1e-2, 1e-6),
            iterations: 10,
            itq_iterations: itq::DEFAULT_ITERS,
        }
    }
}

impl UhHyperParams {
    pub fn validate(&self) -> Result<()> {
        self.lambdas.validate()?;
        if self.iterations == 0 {
            return Err(Error::validation("at least one outer iteration is required"));
        }
        Ok(())
    }
}

fn check_mode(config: &NetConfig) -> Result<()> {
    if config.mode() != Mode::Unsupervised {
        return Err(Error::validation("expected an unsupervised network configuration"));
    }
    Ok(())
}

/// `X − W⁽ⁿ⁻¹⁾ B − c⁽ⁿ⁻¹⁾ 1ᵀ`
fn reconstruction_residual(params: &NetParams, x: &Mat, b: &BinaryCodes) -> Result<Mat> {
    let last = params.weights.len() - 1;
    let w = &params.weights[last];
    if w.cols() != b.bits() || x.cols() != b.len() {
        return Err(Error::shape("reconstruction W·B", w.shape(), (b.bits(), b.len())));
    }
    let mut r = matmul(w, &b.to_mat())?.scale(-1.0);
    r.axpy(1.0, x)?;
    let neg: Vec<f64> = params.biases[last].iter().map(|c| -c).collect();
    r.add_col_broadcast(&neg)?;
    Ok(r)
}

fn terms_from(
    params: &NetParams,
    x: &Mat,
    b: &BinaryCodes,
    code: &Mat,
    lambdas: &Lambdas,
) -> Result<(Terms, Mat)> {
    let m = x.cols() as f64;
    let resid = reconstruction_residual(params, x, b)?;
    let mut terms = code_penalty_terms(code, b, lambdas)?;
    terms.fit = frob_sq(&resid) / (2.0 * m);
    terms.decay = weight_decay(params, lambdas.decay);
    Ok((terms, resid))
}

/// Term-by-term value of the unsupervised objective.
pub fn uh_terms(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    b: &BinaryCodes,
    h: &UhHyperParams,
) -> Result<Terms> {
    check_mode(config)?;
    let cache = forward_until(params, config, x, config.code_layer())?;
    Ok(terms_from(params, x, b, cache.activation(config.code_layer()), &h.lambdas)?.0)
}

pub fn uh_objective(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    b: &BinaryCodes,
    h: &UhHyperParams,
) -> Result<f64> {
    Ok(uh_terms(params, config, x, b, h)?.total())
}

/// Objective terms and gradient in one forward/backward pass.
pub fn uh_objective_and_gradients(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    b: &BinaryCodes,
    h: &UhHyperParams,
) -> Result<(Terms, NetParams)> {
    check_mode(config)?;
    let code = config.code_layer();
    let cache = forward_until(params, config, x, code)?;
    let hcode = cache.activation(code);
    let (terms, resid) = terms_from(params, x, b, hcode, &h.lambdas)?;
    let grads = gradients_from(params, config, x, b, h, &cache, &resid)?;
    Ok((terms, grads))
}

fn gradients_from(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    b: &BinaryCodes,
    h: &UhHyperParams,
    cache: &ForwardCache,
    resid: &Mat,
) -> Result<NetParams> {
    let m = x.cols() as f64;
    let code = config.code_layer();
    let last = params.weights.len() - 1;
    let mut grads = NetParams::zeros(config);

    let mut gw = matmul_nt(resid, &b.to_mat())?.scale(-1.0 / m);
    gw.axpy(h.lambdas.decay, &params.weights[last])?;
    grads.weights[last] = gw;
    grads.biases[last] = resid.row_sums().into_iter().map(|s| -s / m).collect();

    // the code layer is linear, so f′ = 1
    let delta = code_penalty_gradient(cache.activation(code), b, &h.lambdas)?;
    backpropagate(params, config, x, cache, code, delta, h.lambdas.decay, &mut grads)?;
    Ok(grads)
}

/// Gradients of the unsupervised objective with respect to every `W⁽ˡ⁾` and
/// `c⁽ˡ⁾`.
pub fn uh_gradients(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    b: &BinaryCodes,
    h: &UhHyperParams,
) -> Result<NetParams> {
    Ok(uh_objective_and_gradients(params, config, x, b, h)?.1)
}

/// The B-step objective `‖X − W B − c 1ᵀ‖² + λ₂ ‖H − B‖²`, the part of the
/// full objective (scaled by `2m`) that depends on `B`.
pub fn b_step_objective(
    params: &NetParams,
    x: &Mat,
    code_output: &Mat,
    b: &BinaryCodes,
    lambda2: f64,
) -> Result<f64> {
    let resid = reconstruction_residual(params, x, b)?;
    let diff = crate::objective::binary_residual(code_output, b)?;
    Ok(frob_sq(&resid) + lambda2 * frob_sq(&diff))
}

/// Quantities shared by every row update of one B step.
#[derive(Debug, Clone)]
pub struct BStepWorkspace {
    /// `V = X − c 1ᵀ`
    pub v: Mat,
    /// `Q = Wᵀ V + λ₂ H`
    pub q: Mat,
    /// `Wᵀ W`; row `k` off the diagonal is `w_kᵀ W₁`.
    pub gram: Mat,
}

impl BStepWorkspace {
    pub fn new(params: &NetParams, code_output: &Mat, x: &Mat, lambda2: f64) -> Result<Self> {
        let last = params.weights.len() - 1;
        let w = &params.weights[last];
        let mut v = x.clone();
        let neg: Vec<f64> = params.biases[last].iter().map(|c| -c).collect();
        v.add_col_broadcast(&neg)?;
        let mut q = matmul_tn(w, &v)?;
        q.axpy(lambda2, code_output)?;
        let gram = matmul_tn(w, w)?;
        Ok(BStepWorkspace { v, q, gram })
    }
}

#[derive(Debug, Clone)]
pub struct BStepOutcome {
    pub codes: BinaryCodes,
    pub sweeps: usize,
    pub flipped: usize,
}

/// Discrete cyclic coordinate descent over the rows of `B`, starting at
/// `start`. Row `k` is set to `sign(q_kᵀ − w_kᵀ W₁ B₁)` given the other rows;
/// sweeps stop once a full pass changes nothing or after [`MAX_B_SWEEPS`].
pub fn b_step(
    params: &NetParams,
    cache: &ForwardCache,
    config: &NetConfig,
    x: &Mat,
    h: &UhHyperParams,
    start: &BinaryCodes,
) -> Result<BStepOutcome> {
    check_mode(config)?;
    let code = config.code_layer();
    if cache.top() < code {
        return Err(Error::validation("forward cache does not reach the code layer"));
    }
    b_step_with(params, cache.activation(code), x, h.lambdas.binary, start)
}

/// [`b_step`] on an explicit code-layer output.
pub fn b_step_with(
    params: &NetParams,
    code_output: &Mat,
    x: &Mat,
    lambda2: f64,
    start: &BinaryCodes,
) -> Result<BStepOutcome> {
    let ws = BStepWorkspace::new(params, code_output, x, lambda2)?;
    let (bits, m) = ws.q.shape();
    if (start.bits(), start.len()) != (bits, m) {
        return Err(Error::shape("b_step start codes", (start.bits(), start.len()), (bits, m)));
    }
    let mut b = start.clone();
    let mut sweeps = 0;
    let mut flipped = 0;
    let mut coupling = vec![0.0; m];
    for _ in 0..MAX_B_SWEEPS {
        sweeps += 1;
        let mut changed = false;
        for k in 0..bits {
            // w_kᵀ W₁ B₁
            coupling.iter_mut().for_each(|v| *v = 0.0);
            for i in (0..bits).filter(|&i| i != k) {
                let p = ws.gram.get(k, i);
                if p == 0.0 {
                    continue;
                }
                for (acc, &bi) in coupling.iter_mut().zip(b.row(i)) {
                    *acc += p * bi as f64;
                }
            }
            let qk = ws.q.row(k);
            for (j, slot) in b.row_mut(k).iter_mut().enumerate() {
                let nb = sign(qk[j] - coupling[j]);
                if nb != *slot {
                    *slot = nb;
                    changed = true;
                    flipped += 1;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(BStepOutcome {
        codes: b,
        sweeps,
        flipped,
    })
}

#[derive(Debug, Clone)]
pub struct UhTraining {
    pub params: NetParams,
    pub codes: BinaryCodes,
    pub trace: Trace,
}

fn weight_record(
    iteration: usize,
    step: HalfStep,
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    b: &BinaryCodes,
    h: &UhHyperParams,
    objective: f64,
    inner: usize,
    note: Option<String>,
) -> Result<TraceRecord> {
    Ok(TraceRecord {
        iteration,
        step,
        objective,
        terms: uh_terms(params, config, x, b, h)?,
        inner_iterations: inner,
        flipped: 0,
        note,
    })
}

/// Alternating optimization: ITQ codes for `B₍₀₎`, eigenvector
/// initialization, a warm-up `(W, c)` step, then `T` rounds of
/// `{B step, (W, c) step}` with every `(W, c)` step warm-started from the
/// previous parameters.
pub fn train_uh(
    x: &Mat,
    config: &NetConfig,
    h: &UhHyperParams,
    lbfgs_cfg: &LbfgsConfig,
    seed: u64,
) -> Result<UhTraining> {
    check_mode(config)?;
    h.validate()?;
    lbfgs_cfg.validate().map_err(Error::Validation)?;
    if x.rows() != config.input_dim() {
        return Err(Error::shape(
            "train_uh (data rows vs network input)",
            x.shape(),
            (config.input_dim(), x.cols()),
        ));
    }
    let bits = config.bits();
    if x.cols() < bits {
        return Err(Error::validation(format!(
            "need at least L = {bits} samples, got {}",
            x.cols()
        )));
    }

    let mut b = itq::itq_train(x, bits, h.itq_iterations, seed)?.codes;
    let mut params = init_params(config, x, seed)?;
    let mut trace = Trace::default();
    let init_terms = uh_terms(&params, config, x, &b, h)?;
    trace.push(TraceRecord {
        iteration: 0,
        step: HalfStep::Init,
        objective: init_terms.total(),
        terms: init_terms,
        inner_iterations: 0,
        flipped: 0,
        note: None,
    })?;

    let step = |params: &NetParams, b: &BinaryCodes| {
        weight_step(config, params, lbfgs_cfg, |p| {
            let (t, g) = uh_objective_and_gradients(p, config, x, b, h)?;
            Ok((t.total(), g))
        })
    };

    let ws = step(&params, &b)?;
    params = ws.params;
    trace.push(weight_record(
        0,
        HalfStep::WarmUp,
        &params,
        config,
        x,
        &b,
        h,
        ws.value,
        ws.iterations,
        Some(format!("{:?}", ws.status)),
    )?)?;

    for t in 1..=h.iterations {
        let cache = forward_until(&params, config, x, config.code_layer())?;
        let out = b_step(&params, &cache, config, x, h, &b)?;
        b = out.codes;
        let terms = uh_terms(&params, config, x, &b, h)?;
        trace.push(TraceRecord {
            iteration: t,
            step: HalfStep::BStep,
            objective: terms.total(),
            terms,
            inner_iterations: out.sweeps,
            flipped: out.flipped,
            note: None,
        })?;

        let ws = step(&params, &b)?;
        params = ws.params;
        trace.push(weight_record(
            t,
            HalfStep::WeightStep,
            &params,
            config,
            x,
            &b,
            h,
            ws.value,
            ws.iterations,
            Some(format!("{:?}", ws.status)),
        )?)?;
    }

    Ok(UhTraining {
        params,
        codes: b,
        trace,
    })
}
