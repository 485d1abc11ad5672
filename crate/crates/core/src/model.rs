//! Generalized spiked population models.
//!
//! A model is described by orthogonal factors `V`, `U` and a spectrum
//! `Λ = Diag[Λ_s, Λ_b]`, giving the loading matrix `G = V Λ^{1/2} Uᵀ` and the
//! population matrix `R = G Gᵀ`. In covariance mode `G` plays the role of `Γ`
//! and `R` the role of `Σ`; in correlation mode `R` has unit diagonal.

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::rmt;
use crate::sim::normal_matrix;

/// Default value of the separation constant `d` between distinct spikes.
pub const DEFAULT_SEPARATION: f64 = 0.05;

/// Tolerance on `|diag(R) - 1|` accepted when assembling a correlation model.
pub const UNIT_DIAGONAL_TOL: f64 = 1e-8;

/// Tolerance used by [`validate`] for orthonormality and the unit diagonal.
pub const VALIDATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Covariance,
    Correlation,
}

/// Which sample matrix a statistic or theoretical quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MatrixKind {
    /// `S = Y Yᵀ / n`.
    Covariance,
    /// `R̂ = diag(S)^{-1/2} S diag(S)^{-1/2}`.
    Correlation,
}

impl MatrixKind {
    pub fn label(self) -> &'static str {
        match self {
            MatrixKind::Covariance => "covariance_matrix",
            MatrixKind::Correlation => "correlation_matrix",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    /// Spike directions are the first `M` coordinate axes (`V = U = I`).
    IdentityEmbedding,
    /// `V` and `U` are independent seeded Haar-like orthogonal matrices.
    RandomOrthogonal,
    /// `V₁ = p^{-1/2}·1`, remaining columns seeded, and `U = V`.
    EqualWeightLeading,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spike {
    pub alpha: f64,
    pub mult: usize,
}

impl Spike {
    pub fn new(alpha: f64, mult: usize) -> Self {
        Spike { alpha, mult }
    }
}

/// Distinct spiked eigenvalues in decreasing order with their multiplicities.
///
/// Spike `k` owns the consecutive ranks `index_set(k)` of the descending
/// eigenvalue order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeSet {
    spikes: Vec<Spike>,
    offsets: Vec<usize>,
}

impl SpikeSet {
    pub fn new(mut spikes: Vec<Spike>) -> Result<Self> {
        if spikes.is_empty() {
            return Err(Error::Domain("at least one spike is required".to_string()));
        }
        for s in &spikes {
            if !s.alpha.is_finite() || s.alpha <= 0.0 {
                return Err(Error::Domain(format!(
                    "spike value {} must be positive and finite",
                    s.alpha
                )));
            }
            if s.mult == 0 {
                return Err(Error::Domain(format!(
                    "spike {} has zero multiplicity",
                    s.alpha
                )));
            }
        }
        spikes.sort_by(|a, b| b.alpha.total_cmp(&a.alpha));
        if spikes.windows(2).any(|w| w[0].alpha == w[1].alpha) {
            return Err(Error::Domain(
                "spike values must be distinct; use the multiplicity instead".to_string(),
            ));
        }
        let mut offsets = Vec::with_capacity(spikes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for s in &spikes {
            acc += s.mult;
            offsets.push(acc);
        }
        Ok(SpikeSet { spikes, offsets })
    }

    /// Groups values already sorted in decreasing order, merging neighbours
    /// that agree to a relative tolerance `rel_tol`.
    pub fn from_sorted_values(values: &[f64], rel_tol: f64) -> Result<Self> {
        let mut spikes: Vec<Spike> = Vec::new();
        for &v in values {
            match spikes.last_mut() {
                Some(last) if (last.alpha - v).abs() <= rel_tol * last.alpha.abs() => {
                    last.mult += 1
                }
                _ => spikes.push(Spike::new(v, 1)),
            }
        }
        SpikeSet::new(spikes)
    }

    /// Number of distinct spikes `K`.
    pub fn len(&self) -> usize {
        self.spikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spikes.is_empty()
    }

    /// Total number of spiked eigenvalues `M = Σ m_k`.
    pub fn total(&self) -> usize {
        self.offsets[self.spikes.len()]
    }

    pub fn get(&self, k: usize) -> Spike {
        self.spikes[k]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.spikes[k].alpha
    }

    pub fn mult(&self, k: usize) -> usize {
        self.spikes[k].mult
    }

    pub fn index_set(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Spike group that owns global rank `idx`.
    pub fn group_of(&self, idx: usize) -> usize {
        debug_assert!(idx < self.total());
        self.offsets[1..]
            .iter()
            .position(|&end| idx < end)
            .unwrap_or(self.len() - 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Spike> {
        self.spikes.iter()
    }

    /// Spike values repeated by multiplicity, in decreasing order.
    pub fn expanded(&self) -> Vec<f64> {
        self.spikes
            .iter()
            .flat_map(|s| core::iter::repeat_n(s.alpha, s.mult))
            .collect()
    }

    /// `min_{j≠k} |α_k/α_j − 1|`, or `None` with a single spike.
    pub fn min_ratio_gap(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (k, a) in self.spikes.iter().enumerate() {
            for (j, b) in self.spikes.iter().enumerate() {
                if j != k {
                    let gap = (a.alpha / b.alpha - 1.0).abs();
                    best = Some(best.map_or(gap, |g| g.min(gap)));
                }
            }
        }
        best
    }

    pub fn check_gap(&self, d: f64) -> Result<()> {
        match self.min_ratio_gap() {
            Some(gap) if gap <= d => Err(Error::Separation(format!(
                "minimum ratio gap {gap} does not exceed d = {d}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Discrete spectral distribution: atoms with probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BulkSpectrum {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl BulkSpectrum {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::Domain(
                "atoms and weights must be non-empty and equally long".to_string(),
            ));
        }
        if atoms.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Domain(
                "atoms must be finite and nonnegative".to_string(),
            ));
        }
        if atoms.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Domain(
                "atoms must be listed in nondecreasing order".to_string(),
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Domain(
                "weights must be strictly positive".to_string(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("weights sum to {total}, not 1")));
        }
        Ok(BulkSpectrum { atoms, weights })
    }

    pub fn point_mass(atom: f64) -> Result<Self> {
        BulkSpectrum::new(vec![atom], vec![1.0])
    }

    /// Empirical distribution of a list of eigenvalues. Values that agree to
    /// a relative `1e-12` share one atom.
    pub fn from_eigenvalues(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("empty bulk spectrum".to_string()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut atoms: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for v in sorted {
            match atoms.last() {
                Some(&a) if (v - a).abs() <= 1e-12 * a.abs().max(1.0) => {
                    *counts.last_mut().unwrap() += 1;
                }
                _ => {
                    atoms.push(v);
                    counts.push(1);
                }
            }
        }
        let total = values.len() as f64;
        let weights = counts.iter().map(|&c| c as f64 / total).collect();
        BulkSpectrum::new(atoms, weights)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn max_atom(&self) -> f64 {
        *self.atoms.last().expect("non-empty by construction")
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(t, w)| t * w).sum()
    }

    /// `(atom, weight)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.atoms.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Everything needed to build a [`PopulationModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub p: usize,
    pub mode: Mode,
    pub spikes: Vec<Spike>,
    /// The `p − M` bulk eigenvalues.
    pub bulk: Vec<f64>,
    pub structure: Structure,
    pub seed: u64,
}

impl ModelSpec {
    pub fn build(&self) -> Result<PopulationModel> {
        self.build_with_separation(DEFAULT_SEPARATION)
    }

    pub fn build_with_separation(&self, d: f64) -> Result<PopulationModel> {
        let spikes = SpikeSet::new(self.spikes.clone())?;
        let p = self.p;
        let m = spikes.total();
        if p < 2 || m >= p {
            return Err(Error::Domain(format!(
                "need p ≥ 2 and M < p (p = {p}, M = {m})"
            )));
        }
        if self.bulk.len() != p - m {
            return Err(Error::Domain(format!(
                "expected {} bulk eigenvalues, got {}",
                p - m,
                self.bulk.len()
            )));
        }
        if self.bulk.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Domain(
                "bulk eigenvalues must be finite and nonnegative".to_string(),
            ));
        }
        spikes.check_gap(d)?;

        let (v, u) = match self.structure {
            Structure::IdentityEmbedding => (DMatrix::identity(p, p), DMatrix::identity(p, p)),
            Structure::RandomOrthogonal => (
                orthonormalize(normal_matrix(p, p, mix_seed(self.seed, 1))),
                orthonormalize(normal_matrix(p, p, mix_seed(self.seed, 2))),
            ),
            Structure::EqualWeightLeading => {
                let mut raw = normal_matrix(p, p, mix_seed(self.seed, 1));
                raw.column_mut(0).fill(1.0);
                let v = orthonormalize(raw);
                (v.clone(), v)
            }
        };
        let mut lambda = spikes.expanded();
        lambda.extend_from_slice(&self.bulk);
        let lambda = DVector::from_vec(lambda);

        match (self.mode, self.structure) {
            (Mode::Correlation, Structure::RandomOrthogonal) => {
                let raw = loading(&v, &lambda, &u);
                let model = PopulationModel::normalized(&raw, m, self.structure)?;
                model.spikes.check_gap(d)?;
                Ok(model)
            }
            (mode, structure) => PopulationModel::assemble(mode, structure, spikes, v, u, lambda),
        }
    }
}

/// A fully assembled spiked population model with its derived matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    mode: Mode,
    structure: Structure,
    spikes: SpikeSet,
    v: DMatrix<f64>,
    u: DMatrix<f64>,
    lambda: DVector<f64>,
    factor: DMatrix<f64>,
    factor_bulk: DMatrix<f64>,
    cov: DMatrix<f64>,
    cov_bulk: DMatrix<f64>,
}

impl PopulationModel {
    fn assemble(
        mode: Mode,
        structure: Structure,
        spikes: SpikeSet,
        v: DMatrix<f64>,
        u: DMatrix<f64>,
        lambda: DVector<f64>,
    ) -> Result<Self> {
        let p = v.nrows();
        let m = spikes.total();
        let factor = loading(&v, &lambda, &u);
        let factor_bulk = loading(
            &v.columns(m, p - m).into_owned(),
            &lambda.rows(m, p - m).into_owned(),
            &u.columns(m, p - m).into_owned(),
        );
        let mut cov = gram(&factor);
        if mode == Mode::Correlation {
            let max_deviation = (0..p)
                .map(|i| (cov[(i, i)] - 1.0).abs())
                .fold(0.0, f64::max);
            if max_deviation > UNIT_DIAGONAL_TOL {
                return Err(Error::NotACorrelationModel { max_deviation });
            }
            cov.fill_diagonal(1.0);
        }
        let cov_bulk = gram(&factor_bulk);
        Ok(PopulationModel {
            mode,
            structure,
            spikes,
            v,
            u,
            lambda,
            factor,
            factor_bulk,
            cov,
            cov_bulk,
        })
    }

    /// Rescales the rows of `raw` to unit norm and re-extracts `(V, U, Λ)` by
    /// SVD, treating the top `m` singular directions as spiked.
    fn normalized(raw: &DMatrix<f64>, m: usize, structure: Structure) -> Result<Self> {
        let p = raw.nrows();
        let mut g = raw.clone();
        for (i, mut row) in g.row_iter_mut().enumerate() {
            let norm = row.norm();
            if !(norm > 0.0) {
                return Err(Error::DegenerateVariance { index: i });
            }
            row /= norm;
        }
        let svd = g.clone().svd(true, true);
        let left = svd
            .u
            .ok_or_else(|| Error::Numerical("SVD did not return U".to_string()))?;
        let right_t = svd
            .v_t
            .ok_or_else(|| Error::Numerical("SVD did not return Vᵀ".to_string()))?;
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

        let mut v = DMatrix::zeros(p, p);
        let mut u = DMatrix::zeros(p, p);
        let mut lambda = DVector::zeros(p);
        for (dst, &src) in order.iter().enumerate() {
            let sign = leading_sign(left.column(src));
            v.set_column(dst, &(left.column(src) * sign));
            u.set_column(dst, &(right_t.row(src).transpose() * sign));
            lambda[dst] = svd.singular_values[src] * svd.singular_values[src];
        }
        let spikes = SpikeSet::from_sorted_values(&lambda.as_slice()[..m], 1e-9)?;

        let factor_bulk = loading(
            &v.columns(m, p - m).into_owned(),
            &lambda.rows(m, p - m).into_owned(),
            &u.columns(m, p - m).into_owned(),
        );
        let mut cov = gram(&g);
        cov.fill_diagonal(1.0);
        let cov_bulk = gram(&factor_bulk);
        Ok(PopulationModel {
            mode: Mode::Correlation,
            structure,
            spikes,
            v,
            u,
            lambda,
            factor: g,
            factor_bulk,
            cov,
            cov_bulk,
        })
    }

    /// The model whose `(G, R)` drive the theory for `kind`.
    ///
    /// The covariance view of any model is the model itself. The correlation
    /// view of a covariance-mode model is `G = diag(Σ)^{-1/2} Γ` re-factored.
    pub fn view(&self, kind: MatrixKind) -> Result<Cow<'_, PopulationModel>> {
        match (kind, self.mode) {
            (MatrixKind::Correlation, Mode::Covariance) => Ok(Cow::Owned(
                PopulationModel::normalized(&self.factor, self.spikes.total(), self.structure)?,
            )),
            _ => Ok(Cow::Borrowed(self)),
        }
    }

    pub fn p(&self) -> usize {
        self.v.nrows()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn spikes(&self) -> &SpikeSet {
        &self.spikes
    }

    /// Left factors `V`; columns are population eigenvectors of `R`.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Right factors `U`.
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v_col(&self, j: usize) -> DVectorView<'_, f64> {
        self.v.column(j)
    }

    pub fn u_col(&self, j: usize) -> DVectorView<'_, f64> {
        self.u.column(j)
    }

    /// Full spectrum `(Λ_s, Λ_b)`.
    pub fn lambda(&self) -> &[f64] {
        self.lambda.as_slice()
    }

    pub fn spiked_eigenvalues(&self) -> &[f64] {
        &self.lambda.as_slice()[..self.spikes.total()]
    }

    pub fn bulk_eigenvalues(&self) -> &[f64] {
        &self.lambda.as_slice()[self.spikes.total()..]
    }

    /// `G` (correlation mode) or `Γ` (covariance mode).
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `G_b = V_b Λ_b^{1/2} U_bᵀ`.
    pub fn factor_bulk(&self) -> &DMatrix<f64> {
        &self.factor_bulk
    }

    /// `R = G Gᵀ` (or `Σ`).
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `R_b = G_b G_bᵀ`.
    pub fn cov_bulk(&self) -> &DMatrix<f64> {
        &self.cov_bulk
    }

    /// Spectral norm of `R_b`, i.e. the largest bulk eigenvalue.
    pub fn bulk_norm(&self) -> f64 {
        self.bulk_eigenvalues().iter().copied().fold(0.0, f64::max)
    }
}

/// Canonical single-spike equicorrelation model `(1−ρ)I + ρJ`.
pub fn build_equicorrelation(p: usize, rho: f64) -> Result<PopulationModel> {
    if p < 2 {
        return Err(Error::Domain(format!(
            "equicorrelation needs p ≥ 2, got {p}"
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("correlation {rho} outside (0, 1)")));
    }
    ModelSpec {
        p,
        mode: Mode::Correlation,
        spikes: vec![Spike::new(1.0 + (p as f64 - 1.0) * rho, 1)],
        bulk: vec![1.0 - rho; p - 1],
        structure: Structure::EqualWeightLeading,
        seed: 0,
    }
    .build()
}

pub fn build_general(
    p: usize,
    spikes: Vec<Spike>,
    bulk: Vec<f64>,
    seed: u64,
    mode: Mode,
    structure: Structure,
) -> Result<PopulationModel> {
    ModelSpec {
        p,
        mode,
        spikes,
        bulk,
        structure,
        seed,
    }
    .build()
}

/// Bulk spectrum `H_n` over the `p − M` bulk eigenvalues.
pub fn bulk_esd(model: &PopulationModel) -> BulkSpectrum {
    BulkSpectrum::from_eigenvalues(model.bulk_eigenvalues())
        .expect("bulk eigenvalues are validated at construction")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, value: f64) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            value,
        });
    }
}

/// Checks the model assumptions at sample size `n` and separation `d`.
pub fn validate(model: &PopulationModel, n: usize, d: f64) -> ValidationReport {
    let mut report = ValidationReport::default();
    let v_dev = orthonormality_defect(model.v());
    let u_dev = orthonormality_defect(model.u());
    report.push("orthonormal_v", v_dev <= VALIDATION_TOL, v_dev);
    report.push("orthonormal_u", u_dev <= VALIDATION_TOL, u_dev);
    if model.mode() == Mode::Correlation {
        let dev = (0..model.p())
            .map(|i| (model.cov()[(i, i)] - 1.0).abs())
            .fold(0.0, f64::max);
        report.push("unit_diagonal", dev <= VALIDATION_TOL, dev);
    }
    let spikes = model.spikes();
    let bulk_norm = model.bulk_norm();
    report.push(
        "bulk_norm_bounded",
        bulk_norm.is_finite() && bulk_norm < spikes.alpha(spikes.len() - 1),
        bulk_norm,
    );
    let y = model.p() as f64 / n.max(1) as f64;
    let sep = rmt::check_separation(spikes, &bulk_esd(model), y, d);
    for s in &sep.spikes {
        report.push(
            format!("phase_transition_{}", s.k + 1),
            s.above_transition,
            s.phi1,
        );
    }
    report.push(
        "ratio_gap",
        sep.gap_ok,
        sep.min_ratio_gap.unwrap_or(f64::INFINITY),
    );
    report
}

fn loading(v: &DMatrix<f64>, lambda: &DVector<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= lambda[j].sqrt();
    }
    scaled * u.transpose()
}

/// `A Aᵀ` with the lower triangle mirrored from the upper one.
pub(crate) fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = a * a.transpose();
    symmetrize_upper(&mut g);
    g
}

pub(crate) fn symmetrize_upper(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Orthonormal basis from the QR factorization of `m`, with the first
/// non-negligible entry of each column made positive.
fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mut q = m.qr().q();
    for mut col in q.column_iter_mut() {
        let sign = leading_sign(col.as_view());
        col *= sign;
    }
    q
}

fn leading_sign(col: DVectorView<'_, f64>) -> f64 {
    match col.iter().find(|x| x.abs() > 1e-12) {
        Some(x) if *x < 0.0 => -1.0,
        _ => 1.0,
    }
}

fn orthonormality_defect(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let n = gram.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    crate::sim::derive_seed(seed, salt)
}
