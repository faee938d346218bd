//! The feed-forward hash network.
//!
//! Layers are indexed from 0 here (layer 0 is the input, `H⁽⁰⁾ = X`), so the
//! weight `weights[l]` maps layer `l` to layer `l + 1`. In unsupervised mode
//! the code layer is the penultimate one and the last layer reconstructs the
//! input; in supervised mode the code layer is the last one.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codes::BinaryCodes;
use crate::error::{Error, Result};
use crate::itq::{covariance, psd_eigen};
use crate::numerics::{matmul, sigmoid, Mat};

/// Scale of the random rows used when a layer asks for more eigenvectors
/// than its input has dimensions.
const PAD_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Reconstruction network; codes come from the penultimate layer.
    Unsupervised,
    /// Label-driven network; codes come from the last layer.
    Supervised,
}

impl Mode {
    pub fn tag(self) -> &'static str {
        match self {
            Mode::Unsupervised => "UH",
            Mode::Supervised => "SH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    mode: Mode,
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    code_layer: usize,
}

impl NetConfig {
    /// Unsupervised network `D → s₂ → … → L → D`. `layer_sizes` must start
    /// and end with the input dimension and have at least three entries.
    pub fn unsupervised(layer_sizes: Vec<usize>) -> Result<Self> {
        let n = layer_sizes.len();
        if n < 3 {
            return Err(Error::validation(format!(
                "unsupervised network needs at least 3 layers, got {n}"
            )));
        }
        if layer_sizes[0] != layer_sizes[n - 1] {
            return Err(Error::validation(format!(
                "output layer size {} must equal input size {}",
                layer_sizes[n - 1],
                layer_sizes[0]
            )));
        }
        let activations = (0..n)
            .map(|l| {
                if l == 0 || l >= n - 2 {
                    Activation::Identity
                } else {
                    Activation::Sigmoid
                }
            })
            .collect();
        Self::checked(Mode::Unsupervised, layer_sizes, activations, n - 2)
    }

    /// Supervised network `D → s₂ → … → L`.
    pub fn supervised(layer_sizes: Vec<usize>) -> Result<Self> {
        let n = layer_sizes.len();
        if n < 2 {
            return Err(Error::validation(format!(
                "supervised network needs at least 2 layers, got {n}"
            )));
        }
        let activations = (0..n)
            .map(|l| {
                if l == 0 || l == n - 1 {
                    Activation::Identity
                } else {
                    Activation::Sigmoid
                }
            })
            .collect();
        Self::checked(Mode::Supervised, layer_sizes, activations, n - 1)
    }

    pub fn new(mode: Mode, layer_sizes: Vec<usize>) -> Result<Self> {
        match mode {
            Mode::Unsupervised => Self::unsupervised(layer_sizes),
            Mode::Supervised => Self::supervised(layer_sizes),
        }
    }

    fn checked(
        mode: Mode,
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        code_layer: usize,
    ) -> Result<Self> {
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::validation("layer sizes must be positive"));
        }
        Ok(NetConfig {
            mode,
            layer_sizes,
            activations,
            code_layer,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of layers including input and output.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn code_layer(&self) -> usize {
        self.code_layer
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Code length `L`.
    pub fn bits(&self) -> usize {
        self.layer_sizes[self.code_layer]
    }

    /// Total number of scalars in the flattened parameter vector.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }
}

/// Per-layer weights `W⁽ˡ⁾ ∈ ℝ^{s_{l+1} × s_l}` and biases `c⁽ˡ⁾ ∈ ℝ^{s_{l+1}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl NetParams {
    pub fn zeros(config: &NetConfig) -> Self {
        let sizes = config.layer_sizes();
        NetParams {
            weights: sizes.windows(2).map(|w| Mat::zeros(w[1], w[0])).collect(),
            biases: sizes.windows(2).map(|w| vec![0.0; w[1]]).collect(),
        }
    }

    /// Flattens layer by layer, each layer as `W` (row-major) then `c`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, c) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(c);
        }
        out
    }

    /// Inverse of [`NetParams::to_flat`].
    pub fn from_flat(config: &NetConfig, flat: &[f64]) -> Result<Self> {
        if flat.len() != config.param_count() {
            return Err(Error::validation(format!(
                "flat parameter vector has {} entries, network needs {}",
                flat.len(),
                config.param_count()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut off = 0;
        for w in config.layer_sizes().windows(2) {
            let (rows, cols) = (w[1], w[0]);
            weights.push(Mat::from_vec(rows, cols, flat[off..off + rows * cols].to_vec())?);
            off += rows * cols;
            biases.push(flat[off..off + rows].to_vec());
            off += rows;
        }
        Ok(NetParams { weights, biases })
    }

    pub fn check(&self, config: &NetConfig) -> Result<()> {
        let sizes = config.layer_sizes();
        if self.weights.len() != sizes.len() - 1 || self.biases.len() != sizes.len() - 1 {
            return Err(Error::validation(format!(
                "parameters have {} layers, network has {}",
                self.weights.len(),
                sizes.len() - 1
            )));
        }
        for (l, w) in sizes.windows(2).enumerate() {
            if self.weights[l].shape() != (w[1], w[0]) {
                return Err(Error::shape("weights", self.weights[l].shape(), (w[1], w[0])));
            }
            if self.biases[l].len() != w[1] {
                return Err(Error::shape("bias", (self.biases[l].len(), 1), (w[1], 1)));
            }
        }
        Ok(())
    }
}

/// Pre-activations `Z` and outputs `H` of layers `1..=top`. The input layer is
/// not copied: `H⁽⁰⁾` is the `X` the cache was built from.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pre: Vec<Mat>,
    out: Vec<Mat>,
}

impl ForwardCache {
    /// Highest layer computed.
    pub fn top(&self) -> usize {
        self.out.len()
    }

    /// `Z⁽ˡ⁾` for `l >= 1`.
    pub fn pre_activation(&self, layer: usize) -> &Mat {
        &self.pre[layer - 1]
    }

    /// `H⁽ˡ⁾` for `l >= 1`.
    pub fn activation(&self, layer: usize) -> &Mat {
        &self.out[layer - 1]
    }

    /// `f⁽ˡ⁾′(Z⁽ˡ⁾)` for a sigmoid layer, computed from the stored output.
    pub(crate) fn sigmoid_derivative(&self, layer: usize) -> Mat {
        self.activation(layer).map(|h| h * (1.0 - h))
    }
}

fn apply_layer(params: &NetParams, config: &NetConfig, l: usize, input: &Mat) -> Result<(Mat, Mat)> {
    let mut z = matmul(&params.weights[l], input)?;
    z.add_col_broadcast(&params.biases[l])?;
    let h = match config.activations[l + 1] {
        Activation::Sigmoid => sigmoid(&z),
        Activation::Identity => z.clone(),
    };
    Ok((z, h))
}

/// Forward pass through layers `1..=top`.
pub fn forward_until(
    params: &NetParams,
    config: &NetConfig,
    x: &Mat,
    top: usize,
) -> Result<ForwardCache> {
    if x.rows() != config.input_dim() {
        return Err(Error::shape(
            "forward (input rows vs network input size)",
            x.shape(),
            (config.input_dim(), x.cols()),
        ));
    }
    params.check(config)?;
    let top = top.min(config.depth() - 1);
    let mut pre = Vec::with_capacity(top);
    let mut out: Vec<Mat> = Vec::with_capacity(top);
    for l in 0..top {
        let input = if l == 0 { x } else { &out[l - 1] };
        let (z, h) = apply_layer(params, config, l, input)?;
        pre.push(z);
        out.push(h);
    }
    Ok(ForwardCache { pre, out })
}

/// Full forward pass through every layer.
pub fn forward(params: &NetParams, config: &NetConfig, x: &Mat) -> Result<ForwardCache> {
    forward_until(params, config, x, config.depth() - 1)
}

/// `sign(H⁽code⁾)` with ties to +1.
pub fn encode(params: &NetParams, config: &NetConfig, x: &Mat) -> Result<BinaryCodes> {
    let cache = forward_until(params, config, x, config.code_layer())?;
    Ok(BinaryCodes::from_sign(cache.activation(config.code_layer())))
}

/// Layer-wise eigenvector initialization with zero biases.
///
/// Each weight is initialized with the top covariance eigenvectors of the
/// previous layer's activations, propagating through the partially
/// initialized network. In unsupervised mode the reconstruction weight is the
/// rectangular identity `I_{D×L}`. Rows that cannot be filled by eigenvectors
/// (a layer wider than its input) are small random rows.
pub fn init_params(config: &NetConfig, x: &Mat, seed: u64) -> Result<NetParams> {
    if x.rows() != config.input_dim() {
        return Err(Error::shape(
            "init_params (input rows vs network input size)",
            x.shape(),
            (config.input_dim(), x.cols()),
        ));
    }
    let m = x.cols();
    let sizes = config.layer_sizes();
    let n = sizes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetParams::zeros(config);
    let mut h = x.clone();
    for l in 0..n - 1 {
        let (s_in, s_out) = (sizes[l], sizes[l + 1]);
        if config.mode == Mode::Unsupervised && l == n - 2 {
            params.weights[l] = Mat::rect_identity(s_out, s_in);
            break;
        }
        if m < s_in {
            return Err(Error::validation(format!(
                "eigen initialization of layer {} needs at least {s_in} samples, got {m}",
                l + 1
            )));
        }
        let (vals, vecs) = psd_eigen(&covariance(&h))?;
        let vmax = vals.first().copied().unwrap_or(0.0);
        let rank = vals.iter().filter(|&&v| v > 1e-12 * vmax && v > 0.0).count();
        if rank < s_out {
            warn!(
                "layer {}: covariance rank {rank} < {s_out} requested eigenvectors{}",
                l + 1,
                if s_out > s_in { "; padding with small random rows" } else { "" }
            );
        }
        let mut w = Mat::zeros(s_out, s_in);
        for r in 0..s_out {
            if r < s_in {
                for i in 0..s_in {
                    w.set(r, i, vecs.get(i, r));
                }
            } else {
                for i in 0..s_in {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    w.set(r, i, PAD_SCALE * g);
                }
            }
        }
        params.weights[l] = w;
        if l + 1 < n - 1 {
            h = apply_layer(&params, config, l, &h)?.1;
        }
    }
    Ok(params)
}
