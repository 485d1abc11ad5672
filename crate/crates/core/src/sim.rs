//! Synthetic data, sample covariance and correlation matrices, and the
//! normalized spiked statistics.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{symmetrize_upper, MatrixKind, PopulationModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceDistribution {
    Gaussian,
    Rademacher,
    Uniform,
    Laplace,
}

impl SourceDistribution {
    /// Fourth cumulant `E x⁴ − 3` of the standardized law.
    pub fn nu4(self) -> f64 {
        match self {
            SourceDistribution::Gaussian => 0.0,
            SourceDistribution::Rademacher => -2.0,
            SourceDistribution::Uniform => -1.2,
            SourceDistribution::Laplace => 3.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SourceDistribution::Gaussian => "gaussian",
            SourceDistribution::Rademacher => "rademacher",
            SourceDistribution::Uniform => "uniform",
            SourceDistribution::Laplace => "laplace",
        }
    }

    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            SourceDistribution::Gaussian => StandardNormal.sample(rng),
            SourceDistribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            SourceDistribution::Uniform => {
                let root3 = 3.0f64.sqrt();
                rng.random_range(-root3..root3)
            }
            SourceDistribution::Laplace => {
                let e: f64 = Exp1.sample(rng);
                let magnitude = e * core::f64::consts::FRAC_1_SQRT_2;
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
        }
    }
}

/// SplitMix64 finalizer applied to `master ⊕ golden·(index + 1)`.
///
/// Used to derive per-replication seeds so that replication `r` depends only
/// on `(master, r)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn column_rng(seed: u64, column: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(column as u64);
    rng
}

/// `rows × cols` matrix of i.i.d. standardized draws. Column `j` is read from
/// ChaCha stream `j` of the seed, so entries do not depend on evaluation order.
pub fn draw_source(rows: usize, cols: usize, dist: SourceDistribution, seed: u64) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(rows, cols);
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let mut rng = column_rng(seed, j);
        for v in col.iter_mut() {
            *v = dist.sample(&mut rng);
        }
    }
    x
}

pub(crate) fn normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    draw_source(rows, cols, SourceDistribution::Gaussian, seed)
}

/// `Y = G X`.
pub fn observe(model: &PopulationModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != model.p() {
        return Err(Error::Domain(format!(
            "source matrix has {} rows, model dimension is {}",
            x.nrows(),
            model.p()
        )));
    }
    Ok(model.factor() * x)
}

/// `S = Y Yᵀ / n` with `n` the number of columns; exactly symmetric.
pub fn sample_cov(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = y.ncols();
    if n == 0 {
        return Err(Error::Domain("sample covariance needs n ≥ 1".to_string()));
    }
    let mut s = y * y.transpose();
    s /= n as f64;
    symmetrize_upper(&mut s);
    Ok(s)
}

/// `R̂ = diag(S)^{-1/2} S diag(S)^{-1/2}` with an exactly unit diagonal.
pub fn sample_corr(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = s.nrows();
    let mut scale = Vec::with_capacity(p);
    for i in 0..p {
        let d = s[(i, i)];
        if !(d > 0.0) {
            return Err(Error::DegenerateVariance { index: i });
        }
        scale.push(1.0 / d.sqrt());
    }
    let mut r = DMatrix::zeros(p, p);
    for j in 0..p {
        for i in 0..j {
            let v = s[(i, j)] * scale[i] * scale[j];
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
        r[(j, j)] = 1.0;
    }
    Ok(r)
}

/// Leading eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikedEigen {
    /// Top-`M` eigenvalues in decreasing order.
    pub values: Vec<f64>,
    /// Matching orthonormal eigenvectors as columns (`p × M`).
    pub vectors: DMatrix<f64>,
}

/// Top-`m` eigenpairs, each eigenvector signed so that its largest-magnitude
/// entry is positive.
pub fn extract_spiked(matrix: &DMatrix<f64>, m: usize) -> Result<SpikedEigen> {
    let p = matrix.nrows();
    if matrix.ncols() != p || m == 0 || m > p {
        return Err(Error::Domain(format!(
            "cannot take {m} eigenpairs of a {p}×{} matrix",
            matrix.ncols()
        )));
    }
    let eig = SymmetricEigen::try_new(matrix.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".to_string()))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".to_string()));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vectors = DMatrix::zeros(p, m);
    let mut values = Vec::with_capacity(m);
    for (dst, &src) in order.iter().take(m).enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = col.iter().copied().fold(
            0.0f64,
            |best, x| if x.abs() > best.abs() { x } else { best },
        );
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(dst, &(col * sign));
        values.push(eig.eigenvalues[src]);
    }
    Ok(SpikedEigen { values, vectors })
}

/// `√n (λ/φ − 1)`.
pub fn eig_stat(lambda: f64, phi: f64, n: usize) -> f64 {
    (n as f64).sqrt() * (lambda / phi - 1.0)
}

/// `Σ_{j∈I_k} (ẑ_jᵀ P)²`, the squared norm of the projection of `P` onto the
/// sample eigenspace spanned by columns `cols` of `z`.
pub fn vec_stat(z: &DMatrix<f64>, cols: Range<usize>, direction: &DVector<f64>) -> f64 {
    cols.map(|j| {
        let c = z.column(j).dot(direction);
        c * c
    })
    .sum()
}

/// Statistics of one replication for one matrix kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub rep_index: usize,
    pub kind: MatrixKind,
    /// Top-`M` sample eigenvalues, decreasing.
    pub lambda: Vec<f64>,
    /// `√n(λ_j/φ_k − 1)` for every spiked rank `j ∈ I_k`.
    pub theta: Vec<f64>,
    /// `proj[q][k]`: projection statistic of direction `q` on spike group `k`.
    pub proj: Vec<Vec<f64>>,
    pub seed_used: u64,
}
