//! Pieces shared by the unsupervised and supervised objectives: the penalty
//! terms on the code layer, weight decay, backpropagation below the code
//! layer, the `(W, c)` step, and the training trace.

use std::fmt;
use std::io::Write;

use crate::codes::BinaryCodes;
use crate::error::{Error, Result};
use crate::hashnet::{Activation, ForwardCache, NetConfig, NetParams};
use crate::lbfgs::{self, LbfgsConfig, Status};
use crate::numerics::{frob_sq, hadamard, matmul, matmul_nt, matmul_tn, Mat};

/// Penalty weights `λ₁ … λ₄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas {
    /// Weight decay.
    pub decay: f64,
    /// Distance between the code layer and `B`.
    pub binary: f64,
    /// Independence: `(1/m) H Hᵀ ≈ I`.
    pub independence: f64,
    /// Balance: `H 1 ≈ 0`.
    pub balance: f64,
}

impl Lambdas {
    pub fn new(l1: f64, l2: f64, l3: f64, l4: f64) -> Self {
        Lambdas {
            decay: l1,
            binary: l2,
            independence: l3,
            balance: l4,
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.decay, self.binary, self.independence, self.balance]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::validation(format!(
                "penalty weights must be finite and non-negative, got {:?}",
                self.as_array()
            )));
        }
        Ok(())
    }
}

/// The five additive terms of either objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Terms {
    /// Reconstruction (unsupervised) or label similarity (supervised).
    pub fit: f64,
    pub decay: f64,
    pub binary: f64,
    pub independence: f64,
    pub balance: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        self.fit + self.decay + self.binary + self.independence + self.balance
    }
}

/// λ₂, λ₃ and λ₄ terms evaluated on the code layer output `h` (`L x m`).
pub fn code_penalty_terms(h: &Mat, b: &BinaryCodes, lambdas: &Lambdas) -> Result<Terms> {
    let m = h.cols() as f64;
    let diff = binary_residual(h, b)?;
    let gram = independence_residual(h)?;
    let sums = h.row_sums();
    Ok(Terms {
        binary: lambdas.binary / (2.0 * m) * frob_sq(&diff),
        independence: lambdas.independence / 2.0 * frob_sq(&gram),
        balance: lambdas.balance / (2.0 * m) * sums.iter().map(|s| s * s).sum::<f64>(),
        ..Terms::default()
    })
}

/// Gradient of the λ₂, λ₃ and λ₄ terms with respect to the code layer output.
pub fn code_penalty_gradient(h: &Mat, b: &BinaryCodes, lambdas: &Lambdas) -> Result<Mat> {
    let m = h.cols() as f64;
    let mut grad = binary_residual(h, b)?.scale(lambdas.binary / m);
    if lambdas.independence != 0.0 {
        let gram = independence_residual(h)?;
        grad.axpy(2.0 * lambdas.independence / m, &matmul(&gram, h)?)?;
    }
    if lambdas.balance != 0.0 {
        // (λ₄/m) H 1_{m×m}: every column equals the row sums
        let sums = h.row_sums();
        for (r, s) in sums.iter().enumerate() {
            let add = lambdas.balance / m * s;
            for v in grad.row_mut(r) {
                *v += add;
            }
        }
    }
    Ok(grad)
}

/// `H − B`
pub fn binary_residual(h: &Mat, b: &BinaryCodes) -> Result<Mat> {
    if h.shape() != (b.bits(), b.len()) {
        return Err(Error::shape("code layer vs B", h.shape(), (b.bits(), b.len())));
    }
    let mut d = h.clone();
    for (v, &s) in d.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *v -= s as f64;
    }
    Ok(d)
}

/// `(1/m) H Hᵀ − I`
pub fn independence_residual(h: &Mat) -> Result<Mat> {
    let mut g = matmul_nt(h, h)?.scale(1.0 / h.cols() as f64);
    for i in 0..g.rows() {
        g.set(i, i, g.get(i, i) - 1.0);
    }
    Ok(g)
}

/// `(λ₁/2) Σ ‖W⁽ˡ⁾‖²`
pub fn weight_decay(params: &NetParams, lambda: f64) -> f64 {
    lambda / 2.0 * params.weights.iter().map(frob_sq).sum::<f64>()
}

/// Fills the gradients of layers `0..top` given `Δ` at layer `top`:
/// `∂W⁽ˡ⁾ = Δ⁽ˡ⁺¹⁾ H⁽ˡ⁾ᵀ + λ₁ W⁽ˡ⁾`, `∂c⁽ˡ⁾ = Δ⁽ˡ⁺¹⁾ 1`, and
/// `Δ⁽ˡ⁾ = (W⁽ˡ⁾ᵀ Δ⁽ˡ⁺¹⁾) ⊙ f⁽ˡ⁾′(Z⁽ˡ⁾)`.
pub fn backpropagate(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    cache: &ForwardCache,
    top: usize,
    top_delta: Mat,
    decay: f64,
    grads: &mut NetParams,
) -> Result<()> {
    let mut delta = top_delta;
    for l in (0..top).rev() {
        let input = if l == 0 { x } else { cache.activation(l) };
        let mut gw = matmul_nt(&delta, input)?;
        gw.axpy(decay, &params.weights[l])?;
        grads.weights[l] = gw;
        grads.biases[l] = delta.row_sums();
        if l > 0 {
            let back = matmul_tn(&params.weights[l], &delta)?;
            delta = match config.activations()[l] {
                Activation::Sigmoid => hadamard(&back, &cache.sigmoid_derivative(l))?,
                Activation::Identity => back,
            };
        }
    }
    Ok(())
}

/// Result of one `(W, c)` step.
#[derive(Debug, Clone)]
pub struct WeightStep {
    pub params: NetParams,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: Status,
}

/// Runs L-BFGS over the flattened parameters starting from `start`.
/// `eval` returns the objective and its gradient (as a parameter set).
pub fn weight_step<F>(
    config: &NetConfig,
    start: &NetParams,
    lbfgs_cfg: &LbfgsConfig,
    mut eval: F,
) -> Result<WeightStep>
where
    F: FnMut(&NetParams) -> Result<(f64, NetParams)>,
{
    let mut failure: Option<Error> = None;
    let result = lbfgs::minimize(
        |flat: &[f64]| {
            let outcome = NetParams::from_flat(config, flat).and_then(|p| eval(&p));
            match outcome {
                Ok((v, g)) => (v, g.to_flat()),
                Err(e) => {
                    failure.get_or_insert(e);
                    (f64::NAN, vec![f64::NAN; flat.len()])
                }
            }
        },
        &start.to_flat(),
        lbfgs_cfg,
    );
    // a non-finite trial point is reported by the minimizer, not raised here
    if let Some(e) = failure {
        if !matches!(e, Error::NonFinite(_)) {
            return Err(e);
        }
    }
    if !result.value.is_finite() {
        return Err(Error::Numeric(
            "objective is not finite at the starting parameters".into(),
        ));
    }
    Ok(WeightStep {
        params: NetParams::from_flat(config, &result.x)?,
        value: result.value,
        iterations: result.iterations,
        evaluations: result.evaluations,
        status: result.status,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfStep {
    /// Initial parameters with `B₍₀₎`.
    Init,
    /// The `(W, c)` step taken before the alternating loop.
    WarmUp,
    BStep,
    WeightStep,
}

impl fmt::Display for HalfStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HalfStep::Init => "init",
            HalfStep::WarmUp => "warmup",
            HalfStep::BStep => "b",
            HalfStep::WeightStep => "wc",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub step: HalfStep,
    pub objective: f64,
    pub terms: Terms,
    /// L-BFGS iterations for weight steps, coordinate sweeps for B steps.
    pub inner_iterations: usize,
    /// Bits of `B` that changed (B steps only).
    pub flipped: usize,
    pub note: Option<String>,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.terms;
        write!(
            f,
            "iter={}\tstep={}\tJ={:.17e}\tfit={:.17e}\tdecay={:.17e}\tbinary={:.17e}\tindependence={:.17e}\tbalance={:.17e}\tinner={}\tflipped={}",
            self.iteration,
            self.step,
            self.objective,
            t.fit,
            t.decay,
            t.binary,
            t.independence,
            t.balance,
            self.inner_iterations,
            self.flipped
        )?;
        if let Some(n) = &self.note {
            write!(f, "\tnote={n}")?;
        }
        Ok(())
    }
}

/// Training trace, one record per half-step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if !record.objective.is_finite() {
            return Err(Error::Numeric(format!(
                "objective became non-finite at iteration {} ({} step)",
                record.iteration, record.step
            )));
        }
        log::debug!("{record}");
        self.records.push(record);
        Ok(())
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn last_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    /// Writes one tab-separated `key=value` line per record.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        for r in &self.records {
            writeln!(w, "{r}")?;
        }
        Ok(())
    }
}
