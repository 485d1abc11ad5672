//! First-order limits and CLT parameters of the spiked eigenvalues and of the
//! eigenvector projections, for both sample covariance and sample correlation
//! matrices.
//!
//! Every quantity is a finite-`n` plug-in: `φ`, `ℒ₀`, … are evaluated at the
//! bulk spectrum of the model and the aspect ratio `y = p/n`. For the
//! correlation kind the model must be in correlation mode; obtain one from a
//! covariance-mode model with [`PopulationModel::view`].

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{bulk_esd, MatrixKind, Mode, PopulationModel};
use crate::rmt::{phi_suite, RmtPoint};

/// Tolerance on `‖P‖ = 1`.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Slack below zero tolerated on eigenvalues of a covariance matrix.
pub const PSD_SLACK: f64 = 1e-10;

/// Relative distance below which two spikes are considered coincident.
pub const COINCIDENT_SPIKE_TOL: f64 = 1e-8;

/// Plug-in RMT point of spike `k` at sample size `n`.
pub fn plugin_point(model: &PopulationModel, n: usize, k: usize) -> Result<RmtPoint> {
    check_spike(model, k)?;
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".to_string()));
    }
    let y = model.p() as f64 / n as f64;
    phi_suite(model.spikes().alpha(k), &bulk_esd(model), y)
}

/// `φ_{y_n,H_n}(α_k)`, the almost-sure limit of every `λ_j`, `j ∈ I_k`.
pub fn eigenvalue_limit(model: &PopulationModel, n: usize, k: usize) -> Result<f64> {
    Ok(plugin_point(model, n, k)?.phi)
}

/// Covariance tensor of the Gaussian block `𝔾_k` driving
/// `√n(λ_j/φ(α_k) − 1)`, `j ∈ I_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CltBlock {
    pub kind: MatrixKind,
    pub k: usize,
    pub mult: usize,
    pub nu4: f64,
    /// `Cov(𝒢_ab, 𝒢_cd)` at `((a·m + b)·m + c)·m + d`, local indices in `I_k`.
    pub cov: Vec<f64>,
}

impl CltBlock {
    pub fn entry(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let m = self.mult;
        self.cov[((a * m + b) * m + c) * m + d]
    }

    /// `Var(𝒢_aa)`.
    pub fn diagonal_variance(&self, a: usize) -> f64 {
        self.entry(a, a, a, a)
    }

    /// `Var(tr 𝔾_k) = Σ_{a,c} Cov(𝒢_aa, 𝒢_cc)`, the limiting variance of
    /// `Σ_{j∈I_k} √n(λ_j/φ − 1)`.
    pub fn trace_variance(&self) -> f64 {
        let m = self.mult;
        let mut total = 0.0;
        for a in 0..m {
            for c in 0..m {
                total += self.entry(a, a, c, c);
            }
        }
        total
    }

    /// The `m² × m²` matrix with rows `(a, b)` and columns `(c, d)`.
    pub fn matricized(&self) -> DMatrix<f64> {
        let m2 = self.mult * self.mult;
        DMatrix::from_row_slice(m2, m2, &self.cov)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matricized())
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue() >= -PSD_SLACK
    }
}

/// Hadamard squares and the `ℜ` quadratic form.
struct Hadamard {
    gg: DMatrix<f64>,
    rr: DMatrix<f64>,
    nu4: f64,
}

impl Hadamard {
    fn new(model: &PopulationModel, nu4: f64) -> Self {
        let g = model.factor();
        let r = model.cov();
        Hadamard {
            gg: g.component_mul(g),
            rr: r.component_mul(r),
            nu4,
        }
    }

    /// `xᵀ (G∘G) y`.
    fn gg_form(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.gg * y))
    }

    /// `xᵀ ℜ y` with `ℜ = 2(R∘R) + ν₄ (G∘G)(Gᵀ∘Gᵀ)`.
    fn rfrak_form(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let mut value = 2.0 * x.dot(&(&self.rr * y));
        if self.nu4 != 0.0 {
            let gx = self.gg.tr_mul(x);
            let gy = self.gg.tr_mul(y);
            value += self.nu4 * gx.dot(&gy);
        }
        value
    }

    fn rfrak(&self) -> DMatrix<f64> {
        let mut m = &self.rr * 2.0;
        if self.nu4 != 0.0 {
            m += (&self.gg * self.gg.transpose()) * self.nu4;
        }
        m
    }
}

fn had(x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    x.component_mul(y)
}

fn col(m: &DMatrix<f64>, j: usize) -> DVector<f64> {
    m.column(j).into_owned()
}

/// The four-term covariance `Cov(𝒢_ab, 𝒢_cd)` for global spike columns
/// `a, b` in group `i` and `c, d` in group `j`, without the Kronecker pair term.
#[allow(clippy::too_many_arguments)]
fn hadamard_cov(
    model: &PopulationModel,
    had_mats: &Hadamard,
    kind: MatrixKind,
    alpha_sum: f64,
    scale: f64,
    (a, b): (usize, usize),
    (c, d): (usize, usize),
) -> f64 {
    let u = model.u();
    let v = model.v();
    let uab = had(&col(u, a), &col(u, b));
    let ucd = had(&col(u, c), &col(u, d));
    let mut value = had_mats.nu4 * uab.dot(&ucd);
    if kind == MatrixKind::Correlation {
        let vab = had(&col(v, a), &col(v, b));
        let vcd = had(&col(v, c), &col(v, d));
        if had_mats.nu4 != 0.0 {
            value -= had_mats.nu4 * (had_mats.gg_form(&vab, &ucd) + had_mats.gg_form(&vcd, &uab));
        }
        value -= 2.0 * alpha_sum * vab.dot(&vcd);
        value += had_mats.rfrak_form(&vab, &vcd);
    }
    scale * value
}

fn check_kind(model: &PopulationModel, kind: MatrixKind) -> Result<()> {
    if kind == MatrixKind::Correlation && model.mode() != Mode::Correlation {
        return Err(Error::Scope(
            "correlation-kind limits need a correlation-mode model; take the correlation view first".to_string(),
        ));
    }
    Ok(())
}

fn check_spike(model: &PopulationModel, k: usize) -> Result<()> {
    if k >= model.spikes().len() {
        return Err(Error::Domain(format!(
            "spike index {k} out of range ({} spikes)",
            model.spikes().len()
        )));
    }
    Ok(())
}

/// Covariance tensor of `𝔾_k` for `kind`.
pub fn eigenvalue_clt_block(
    model: &PopulationModel,
    n: usize,
    k: usize,
    kind: MatrixKind,
    nu4: f64,
) -> Result<CltBlock> {
    check_kind(model, kind)?;
    let pt = plugin_point(model, n, k)?;
    let m = model.spikes().mult(k);
    let base = model.spikes().index_set(k).start;
    let l0sq = pt.l0 * pt.l0;
    let mats = Hadamard::new(model, nu4);
    let mut cov = vec![0.0; m * m * m * m];
    for a in 0..m {
        for b in 0..m {
            for c in 0..m {
                for d in 0..m {
                    let delta = |x: usize, y: usize| if x == y { 1.0 } else { 0.0 };
                    let pair =
                        l0sq * (delta(a, c) * delta(b, d) + delta(a, d) * delta(c, b)) / pt.phi1;
                    let rest = hadamard_cov(
                        model,
                        &mats,
                        kind,
                        2.0 * pt.alpha,
                        l0sq,
                        (base + a, base + b),
                        (base + c, base + d),
                    );
                    cov[((a * m + b) * m + c) * m + d] = pair + rest;
                }
            }
        }
    }
    Ok(CltBlock {
        kind,
        k,
        mult: m,
        nu4,
        cov,
    })
}

/// `K × K` covariance of `(√n(λ_k/φ(α_k) − 1))_k` when every spike is simple.
pub fn simple_spike_joint_cov(
    model: &PopulationModel,
    n: usize,
    kind: MatrixKind,
    nu4: f64,
) -> Result<DMatrix<f64>> {
    check_kind(model, kind)?;
    let spikes = model.spikes();
    for (k, s) in spikes.iter().enumerate() {
        if s.mult > 1 {
            return Err(Error::Multiplicity {
                spike: k,
                mult: s.mult,
            });
        }
    }
    let points = (0..spikes.len())
        .map(|k| plugin_point(model, n, k))
        .collect::<Result<Vec<_>>>()?;
    let mats = Hadamard::new(model, nu4);
    let kk = spikes.len();
    let mut c = DMatrix::zeros(kk, kk);
    for i in 0..kk {
        for j in i..kk {
            let (pi, pj) = (&points[i], &points[j]);
            let scale = pi.l0 * pj.l0;
            let mut value = hadamard_cov(
                model,
                &mats,
                kind,
                pi.alpha + pj.alpha,
                scale,
                (i, i),
                (j, j),
            );
            if i == j {
                value += 2.0 * pi.l0 * pi.l0 / pi.phi1;
            }
            c[(i, j)] = value;
            c[(j, i)] = value;
        }
    }
    Ok(c)
}

/// Projections of a unit direction `P` on the population eigenstructure.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionContext {
    pub p: DVector<f64>,
    /// `τ = Vᵀ P`.
    pub tau: DVector<f64>,
    /// `𝒯_{G,k} = Σ_{j∈I_k} U_j V_jᵀ P`, one per spike group.
    pub t_g: Vec<DVector<f64>>,
    /// `𝒯_{R,k} = Σ_{j∈I_k} V_j V_jᵀ P`.
    pub t_r: Vec<DVector<f64>>,
    /// `G_bᵀ P`.
    pub gb_p: DVector<f64>,
}

impl ProjectionContext {
    /// `Σ_{j∈I_k} τ_j²`.
    pub fn tau_sq(&self, range: core::ops::Range<usize>) -> f64 {
        self.tau.rows(range.start, range.len()).norm_squared()
    }
}

pub fn projection_context(model: &PopulationModel, p: &DVector<f64>) -> Result<ProjectionContext> {
    if p.len() != model.p() {
        return Err(Error::Domain(format!(
            "direction has length {}, model dimension is {}",
            p.len(),
            model.p()
        )));
    }
    let norm = p.norm();
    if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
        return Err(Error::Domain(format!(
            "direction must be a unit vector, ‖P‖ = {norm}"
        )));
    }
    let tau = model.v().tr_mul(p);
    let spikes = model.spikes();
    let mut t_g = Vec::with_capacity(spikes.len());
    let mut t_r = Vec::with_capacity(spikes.len());
    for k in 0..spikes.len() {
        let range = spikes.index_set(k);
        let coef = tau.rows(range.start, range.len());
        t_g.push(model.u().columns(range.start, range.len()) * coef);
        t_r.push(model.v().columns(range.start, range.len()) * coef);
    }
    let gb_p = model.factor_bulk().tr_mul(p);
    Ok(ProjectionContext {
        p: p.clone(),
        tau,
        t_g,
        t_r,
        gb_p,
    })
}

/// `ℒ₀(α_k) Σ_{j∈I_k} τ_j²`, the limit of `P_{s,k}ᵀ P_{s,k}`.
pub fn eigvec_limit(model: &PopulationModel, n: usize, p: &DVector<f64>, k: usize) -> Result<f64> {
    let ctx = projection_context(model, p)?;
    let pt = plugin_point(model, n, k)?;
    Ok(pt.l0 * ctx.tau_sq(model.spikes().index_set(k)))
}

/// Limiting variance of `√n(P_{s,k}ᵀP_{s,k} − ℒ₀Στ²)` with its breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct EigvecVariance {
    pub kind: MatrixKind,
    pub k: usize,
    pub nu4: f64,
    pub sigma2: f64,
    /// `("V11", 𝒱₁₁)`, `("V12", 𝒱₁₂)`, … in row-major upper-triangular order.
    pub terms: Vec<(&'static str, f64)>,
    pub rfrak: DMatrix<f64>,
}

impl EigvecVariance {
    pub fn term(&self, label: &str) -> Option<f64> {
        self.terms
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, v)| *v)
    }
}

const TERM_LABELS: [[&str; 6]; 6] = [
    ["V11", "V12", "V13", "V14", "V15", "V16"],
    ["", "V22", "V23", "V24", "V25", "V26"],
    ["", "", "V33", "V34", "V35", "V36"],
    ["", "", "", "V44", "V45", "V46"],
    ["", "", "", "", "V55", "V56"],
    ["", "", "", "", "", "V66"],
];

/// `σ² = Σ_j 𝒱_jj + 2 Σ_{j<ℓ} 𝒱_jℓ`, accumulated in label order.
fn accumulate(terms: &[(&'static str, f64)]) -> f64 {
    terms
        .iter()
        .map(|(label, v)| {
            let b = label.as_bytes();
            if b[1] == b[2] {
                *v
            } else {
                2.0 * v
            }
        })
        .fold(0.0, |acc, x| acc + x)
}

struct Other {
    alpha: f64,
    t_g: DVector<f64>,
    t_r: DVector<f64>,
    g_tg: DVector<f64>,
}

pub fn eigvec_variance(
    model: &PopulationModel,
    n: usize,
    p: &DVector<f64>,
    k: usize,
    kind: MatrixKind,
    nu4: f64,
) -> Result<EigvecVariance> {
    check_kind(model, kind)?;
    let ctx = projection_context(model, p)?;
    let pt = plugin_point(model, n, k)?;
    let spikes = model.spikes();
    let alpha = pt.alpha;
    for j in 0..spikes.len() {
        if j != k && (alpha - spikes.alpha(j)).abs() < COINCIDENT_SPIKE_TOL * alpha {
            return Err(Error::Separation(format!(
                "spikes {k} and {j} coincide ({alpha} vs {})",
                spikes.alpha(j)
            )));
        }
    }

    let g = model.factor();
    let mats = Hadamard::new(model, nu4);
    let (l0, lp, l2, phi1, psi) = (pt.l0, pt.l0p, pt.l2, pt.phi1, pt.psi);
    let a_coef = l0 + alpha * lp;
    let sa = alpha.sqrt();

    let t_r = &ctx.t_r[k];
    let t_g = &ctx.t_g[k];
    let pv = &ctx.p;
    let gb_p = &ctx.gb_p;
    let g_tg = g * t_g;
    let others: Vec<Other> = (0..spikes.len())
        .filter(|&j| j != k)
        .map(|j| Other {
            alpha: spikes.alpha(j),
            t_g: ctx.t_g[j].clone(),
            t_r: ctx.t_r[j].clone(),
            g_tg: g * &ctx.t_g[j],
        })
        .collect();

    // w = (I − R_b/α)^{-1} P
    let p_dim = model.p();
    let shifted = DMatrix::identity(p_dim, p_dim) - model.cov_bulk() / alpha;
    let w = shifted
        .lu()
        .solve(pv)
        .ok_or_else(|| Error::Numerical("I − R_b/α is singular".to_string()))?;
    let rb_w = model.cov_bulk() * &w;
    let gb_w = model.factor_bulk().tr_mul(&w);

    let tr_sq = t_r.norm_squared();
    let tg2 = had(t_g, t_g);
    let tr_p = had(t_r, pv);
    let tr_tr = had(t_r, t_r);
    let gtg2 = had(&g_tg, &g_tg);

    // 2 xᵀ(a∘b) + ν₄ xᵀ(G∘G)(c∘d), the recurring bracket.
    let bracket = |x: &DVector<f64>, ab: &DVector<f64>, cd: &DVector<f64>| {
        2.0 * x.dot(ab) + nu4 * mats.gg_form(x, cd)
    };

    let mut v = [[0.0f64; 6]; 6];

    v[0][0] =
        2.0 * alpha * alpha * l2 * tr_sq * tr_sq + nu4 * alpha * alpha * lp * lp * tg2.dot(&tg2);
    v[0][1] = others
        .iter()
        .map(|o| {
            2.0 * nu4 * alpha.powf(1.5) * o.alpha.sqrt() * l0 * lp / (alpha - o.alpha)
                * tg2.dot(&had(t_g, &o.t_g))
        })
        .sum();
    v[0][2] = -2.0 * nu4 * sa * l0 * lp * tg2.dot(&had(t_g, gb_p));
    v[1][1] = {
        let mut s = 0.0;
        for o1 in &others {
            for o2 in &others {
                let coef = 4.0 * l0 * l0 * alpha * o1.alpha.sqrt() * o2.alpha.sqrt()
                    / ((alpha - o1.alpha) * (alpha - o2.alpha));
                s += coef
                    * (t_g.norm_squared() * o1.t_g.dot(&o2.t_g) / phi1
                        + nu4 * had(t_g, &o1.t_g).dot(&had(t_g, &o2.t_g)));
            }
        }
        s
    };
    v[1][2] = -others
        .iter()
        .map(|o| {
            4.0 * l0 * l0 * o.alpha.sqrt() / (alpha - o.alpha)
                * nu4
                * had(t_g, &o.t_g).dot(&had(t_g, gb_p))
        })
        .sum::<f64>();
    v[2][2] = 4.0 * l0 * l0 / alpha
        * (tr_sq * w.dot(&rb_w) / phi1 + nu4 * had(&gb_w, t_g).norm_squared());

    let mut terms = Vec::new();
    if kind == MatrixKind::Correlation {
        let tg_gbw = had(t_g, &gb_w);
        let rbw_gtg = had(&rb_w, &g_tg);

        v[0][3] = alpha * l0 * lp * bracket(&tr_p, &gtg2, &tg2);
        v[0][4] = -alpha * a_coef * lp * bracket(&tr_tr, &gtg2, &tg2);
        v[0][5] = -others
            .iter()
            .map(|o| {
                2.0 * alpha * alpha * l0 * lp / (alpha - o.alpha)
                    * bracket(&had(t_r, &o.t_r), &gtg2, &tg2)
            })
            .sum::<f64>();
        v[1][3] = others
            .iter()
            .map(|o| {
                2.0 * l0 * l0 * sa * o.alpha.sqrt() / (alpha - o.alpha)
                    * bracket(&tr_p, &had(&g_tg, &o.g_tg), &had(t_g, &o.t_g))
            })
            .sum();
        v[1][4] = -others
            .iter()
            .map(|o| {
                2.0 * l0 * sa * o.alpha.sqrt() * a_coef / (psi * (alpha - o.alpha))
                    * bracket(&tr_tr, &had(&g_tg, &o.g_tg), &had(t_g, &o.t_g))
            })
            .sum::<f64>();
        v[1][5] = {
            let mut s = 0.0;
            for o1 in &others {
                for o2 in &others {
                    let coef = 4.0 * l0 * l0 * alpha.powf(1.5) * o1.alpha.sqrt()
                        / (psi * (alpha - o1.alpha) * (alpha - o2.alpha));
                    s += coef
                        * bracket(
                            &had(t_r, &o2.t_r),
                            &had(&g_tg, &o1.g_tg),
                            &had(t_g, &o1.t_g),
                        );
                }
            }
            -s
        };
        v[2][3] = -2.0 * l0 * l0 / (psi * sa) * bracket(&tr_p, &rbw_gtg, &tg_gbw);
        v[2][4] = 2.0 * l0 * a_coef / (psi * sa) * bracket(&tr_tr, &rbw_gtg, &tg_gbw);
        v[2][5] = others
            .iter()
            .map(|o| {
                4.0 * l0 * l0 * sa / (psi * (alpha - o.alpha))
                    * bracket(&had(t_r, &o.t_r), &rbw_gtg, &tg_gbw)
            })
            .sum();
        v[3][3] = l0 * l0 * mats.rfrak_form(&tr_p, &tr_p);
        v[3][4] = -l0 * a_coef * mats.rfrak_form(&tr_tr, &tr_p);
        v[3][5] = -others
            .iter()
            .map(|o| {
                2.0 * alpha * l0 * l0 / (alpha - o.alpha)
                    * mats.rfrak_form(&had(t_r, &o.t_r), &tr_p)
            })
            .sum::<f64>();
        v[4][4] = a_coef * a_coef * mats.rfrak_form(&tr_tr, &tr_tr);
        v[4][5] = others
            .iter()
            .map(|o| {
                2.0 * alpha * l0 * a_coef / (alpha - o.alpha)
                    * mats.rfrak_form(&tr_tr, &had(t_r, &o.t_r))
            })
            .sum();
        v[5][5] = {
            let mut s = 0.0;
            for o1 in &others {
                for o2 in &others {
                    let coef =
                        4.0 * alpha * alpha * l0 * l0 / ((alpha - o1.alpha) * (alpha - o2.alpha));
                    s += coef * mats.rfrak_form(&had(t_r, &o2.t_r), &had(t_r, &o1.t_r));
                }
            }
            s
        };
        for (i, row) in TERM_LABELS.iter().enumerate() {
            for j in i..6 {
                terms.push((row[j], v[i][j]));
            }
        }
    } else {
        for (i, row) in TERM_LABELS.iter().enumerate().take(3) {
            for j in i..3 {
                terms.push((row[j], v[i][j]));
            }
        }
    }

    let sigma2 = accumulate(&terms);
    Ok(EigvecVariance {
        kind,
        k,
        nu4,
        sigma2,
        terms,
        rfrak: mats.rfrak(),
    })
}

/// Contribution of the diagonal normalization to the leading-eigenvalue CLT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationEffect {
    /// `−[2α(V∘V)ᵀ(V∘V) − (V∘V)ᵀ(R∘R)(V∘V)]`; its sign decides whether
    /// normalization reduces the variance when `ν₄ = 0`.
    pub effective_term: f64,
    /// Correlation-kind variance minus covariance-kind variance of `𝒢₁₁`.
    pub full_delta: f64,
    pub covariance_variance: f64,
    pub correlation_variance: f64,
}

pub fn normalization_effect(
    model: &PopulationModel,
    n: usize,
    nu4: f64,
) -> Result<NormalizationEffect> {
    if model.mode() != Mode::Correlation {
        return Err(Error::Scope(
            "normalization effect needs a correlation-mode model".to_string(),
        ));
    }
    let spikes = model.spikes();
    if spikes.len() != 1 || spikes.mult(0) != 1 {
        return Err(Error::Scope(format!(
            "normalization effect is defined for a single simple spike, model has {} spiked eigenvalues",
            spikes.total()
        )));
    }
    let pt = plugin_point(model, n, 0)?;
    let mats = Hadamard::new(model, nu4);
    let v1 = col(model.v(), 0);
    let u1 = col(model.u(), 0);
    let vv = had(&v1, &v1);
    let uu = had(&u1, &u1);
    let vv_rr_vv = vv.dot(&(&mats.rr * &vv));
    let effective_term = -(2.0 * pt.alpha * vv.dot(&vv) - vv_rr_vv);
    let l0sq = pt.l0 * pt.l0;
    let full_delta = -2.0 * l0sq * (2.0 * pt.alpha * vv.dot(&vv) + nu4 * mats.gg_form(&vv, &uu))
        + l0sq * mats.rfrak_form(&vv, &vv);
    let covariance_variance =
        eigenvalue_clt_block(model, n, 0, MatrixKind::Covariance, nu4)?.diagonal_variance(0);
    let correlation_variance =
        eigenvalue_clt_block(model, n, 0, MatrixKind::Correlation, nu4)?.diagonal_variance(0);
    Ok(NormalizationEffect {
        effective_term,
        full_delta,
        covariance_variance,
        correlation_variance,
    })
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
