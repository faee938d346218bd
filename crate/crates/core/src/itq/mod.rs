//! Iterative Quantization: PCA to `L` dimensions followed by an orthogonal
//! rotation that minimizes the binary quantization loss `‖B − RᵀY‖²`.
//!
//! Serves both as the `B₍₀₎` initializer for the network trainers and as the
//! baseline hashing method.

pub mod jacobi;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codes::BinaryCodes;
use crate::error::{Error, Result};
use crate::numerics::{matmul_nt, matmul_tn, Mat};

pub use jacobi::{psd_eigen, svd, Svd};

pub const DEFAULT_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ItqModel {
    /// `D x L`, top-`L` principal directions as columns.
    pub projection: Mat,
    /// `−Pᵀμ` for the training mean `μ` (length `L`).
    pub offset: Vec<f64>,
    /// `L x L` orthogonal rotation.
    pub rotation: Mat,
}

/// Everything `itq_train` produces besides the model.
#[derive(Debug, Clone)]
pub struct ItqTraining {
    pub model: ItqModel,
    /// `sign(Rᵀ Y)` for the final rotation; equals `itq_encode` on the
    /// training set.
    pub codes: BinaryCodes,
    /// Quantization loss after each iteration (B update then R update).
    pub losses: Vec<f64>,
}

impl ItqModel {
    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn bits(&self) -> usize {
        self.projection.cols()
    }
}

/// Mean of each row of a `D x m` matrix.
pub fn column_mean(x: &Mat) -> Vec<f64> {
    let m = x.cols() as f64;
    x.row_sums().into_iter().map(|s| s / m).collect()
}

/// `x - mean * 1ᵀ`
pub fn center(x: &Mat, mean: &[f64]) -> Mat {
    let neg: Vec<f64> = mean.iter().map(|v| -v).collect();
    let mut c = x.clone();
    c.add_col_broadcast(&neg).expect("mean has one entry per row");
    c
}

/// Covariance `(1/m) (X − μ)(X − μ)ᵀ` of column samples.
pub fn covariance(x: &Mat) -> Mat {
    let centered = center(x, &column_mean(x));
    matmul_nt(&centered, &centered)
        .expect("square product")
        .scale(1.0 / x.cols() as f64)
}

/// Haar-distributed random orthogonal `n x n` matrix from the SVD of a
/// Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Result<Mat> {
    let g = Mat::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let d = svd(&g)?;
    matmul_nt(&d.u, &d.v)
}

fn quantization_loss(codes: &BinaryCodes, rotated: &Mat) -> f64 {
    codes
        .as_slice()
        .iter()
        .zip(rotated.as_slice())
        .map(|(&b, &v)| (b as f64 - v).powi(2))
        .sum()
}

pub fn itq_train(x: &Mat, bits: usize, iters: usize, seed: u64) -> Result<ItqTraining> {
    let (dim, m) = x.shape();
    if bits == 0 || bits > dim {
        return Err(Error::validation(format!(
            "code length {bits} must be in 1..={dim}"
        )));
    }
    if m <= bits {
        return Err(Error::validation(format!(
            "ITQ needs more samples than bits (m = {m}, L = {bits})"
        )));
    }
    let mean = column_mean(x);
    let centered = center(x, &mean);
    let cov = matmul_nt(&centered, &centered)?.scale(1.0 / m as f64);
    let (_, vecs) = psd_eigen(&cov)?;
    let projection = Mat::from_fn(dim, bits, |i, k| vecs.get(i, k));
    let offset = project_mean(&projection, &mean)?;
    // Y = Pᵀ X − Pᵀ μ, computed exactly as `itq_encode` does
    let projected = project(&projection, &offset, x)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rotation = random_orthogonal(bits, &mut rng)?;
    let mut losses = Vec::with_capacity(iters);
    for _ in 0..iters {
        let codes = BinaryCodes::from_sign(&matmul_tn(&rotation, &projected)?);
        // maximize tr(Rᵀ Y Bᵀ): R = U Wᵀ for Y Bᵀ = U S Wᵀ
        let cross = matmul_nt(&projected, &codes.to_mat())?;
        let d = svd(&cross)?;
        rotation = matmul_nt(&d.u, &d.v)?;
        losses.push(quantization_loss(&codes, &matmul_tn(&rotation, &projected)?));
    }
    let codes = BinaryCodes::from_sign(&matmul_tn(&rotation, &projected)?);
    Ok(ItqTraining {
        model: ItqModel {
            projection,
            offset,
            rotation,
        },
        codes,
        losses,
    })
}

fn project_mean(projection: &Mat, mean: &[f64]) -> Result<Vec<f64>> {
    let mu = Mat::from_vec(mean.len(), 1, mean.to_vec())?;
    Ok(matmul_tn(projection, &mu)?.as_slice().iter().map(|v| -v).collect())
}

fn project(projection: &Mat, offset: &[f64], x: &Mat) -> Result<Mat> {
    let mut y = matmul_tn(projection, x)?;
    y.add_col_broadcast(offset)?;
    Ok(y)
}

/// `Rᵀ (Pᵀ x − Pᵀ μ)`, the real-valued codes before taking signs.
pub fn rotated_projection(model: &ItqModel, x: &Mat) -> Result<Mat> {
    if x.rows() != model.dim() {
        return Err(Error::shape("itq_encode", (model.dim(), model.bits()), x.shape()));
    }
    let projected = project(&model.projection, &model.offset, x)?;
    matmul_tn(&model.rotation, &projected)
}

/// `sign(Rᵀ Pᵀ (x − μ))`, ties to +1.
pub fn itq_encode(model: &ItqModel, x: &Mat) -> Result<BinaryCodes> {
    Ok(BinaryCodes::from_sign(&rotated_projection(model, x)?))
}
