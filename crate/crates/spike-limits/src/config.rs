//! JSON documents: population models and experiment configurations.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spiked_core::model::ModelSpec;
use spiked_core::{MatrixKind, Mode, PopulationModel, SourceDistribution, Spike, Structure};

use crate::error::{HarnessError, Result};

pub const MODEL_SCHEMA: &str = "model_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeDoc {
    Covariance,
    Correlation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureDoc {
    IdentityEmbedding,
    RandomOrthogonal,
    EqualWeightLeading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistDoc {
    Gaussian,
    Rademacher,
    Uniform,
    Laplace,
}

impl From<DistDoc> for SourceDistribution {
    fn from(d: DistDoc) -> Self {
        match d {
            DistDoc::Gaussian => SourceDistribution::Gaussian,
            DistDoc::Rademacher => SourceDistribution::Rademacher,
            DistDoc::Uniform => SourceDistribution::Uniform,
            DistDoc::Laplace => SourceDistribution::Laplace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KindDoc {
    #[serde(rename = "covariance_matrix", alias = "covariance")]
    Covariance,
    #[serde(rename = "correlation_matrix", alias = "correlation")]
    Correlation,
}

impl From<KindDoc> for MatrixKind {
    fn from(k: KindDoc) -> Self {
        match k {
            KindDoc::Covariance => MatrixKind::Covariance,
            KindDoc::Correlation => MatrixKind::Correlation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeDoc {
    pub alpha: f64,
    pub mult: usize,
}

fn default_schema() -> String {
    MODEL_SCHEMA.to_string()
}

/// Serialized population model. Matrices are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub p: usize,
    pub mode: ModeDoc,
    pub spikes: Vec<SpikeDoc>,
    pub bulk: Vec<f64>,
    pub structure: StructureDoc,
    #[serde(default)]
    pub seed: u64,
}

impl ModelDoc {
    pub fn equicorrelation(p: usize, rho: f64) -> Self {
        ModelDoc {
            schema: default_schema(),
            p,
            mode: ModeDoc::Correlation,
            spikes: vec![SpikeDoc {
                alpha: 1.0 + (p as f64 - 1.0) * rho,
                mult: 1,
            }],
            bulk: vec![1.0 - rho; p.saturating_sub(1)],
            structure: StructureDoc::EqualWeightLeading,
            seed: 0,
        }
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        if self.schema != MODEL_SCHEMA {
            return Err(HarnessError::Input(format!(
                "unsupported model schema {:?}, expected {MODEL_SCHEMA:?}",
                self.schema
            )));
        }
        let m: usize = self.spikes.iter().map(|s| s.mult).sum();
        if m + self.bulk.len() != self.p {
            return Err(HarnessError::Input(format!(
                "{} spiked + {} bulk eigenvalues do not add up to p = {}",
                m,
                self.bulk.len(),
                self.p
            )));
        }
        Ok(ModelSpec {
            p: self.p,
            mode: match self.mode {
                ModeDoc::Covariance => Mode::Covariance,
                ModeDoc::Correlation => Mode::Correlation,
            },
            spikes: self
                .spikes
                .iter()
                .map(|s| Spike::new(s.alpha, s.mult))
                .collect(),
            bulk: self.bulk.clone(),
            structure: match self.structure {
                StructureDoc::IdentityEmbedding => Structure::IdentityEmbedding,
                StructureDoc::RandomOrthogonal => Structure::RandomOrthogonal,
                StructureDoc::EqualWeightLeading => Structure::EqualWeightLeading,
            },
            seed: self.seed,
        })
    }

    pub fn build(&self) -> Result<PopulationModel> {
        Ok(self.spec()?.build()?)
    }
}

/// A unit direction: symbolic (`"V1"`, `"e3"`, `"orthogonal"`) or explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProjectionDoc {
    Symbolic(String),
    Explicit { name: String, vector: Vec<f64> },
}

impl ProjectionDoc {
    pub fn name(&self) -> &str {
        match self {
            ProjectionDoc::Symbolic(s) => s,
            ProjectionDoc::Explicit { name, .. } => name,
        }
    }

    /// Resolves the direction against `model`. `Vk` is the first population
    /// eigenvector of spike `k` (1-based); `orthogonal` is the leading bulk
    /// eigenvector, orthogonal to every spiked direction.
    pub fn resolve(&self, model: &PopulationModel) -> Result<DVector<f64>> {
        let p = model.p();
        let v = match self {
            ProjectionDoc::Explicit { vector, .. } => {
                if vector.len() != p {
                    return Err(HarnessError::Input(format!(
                        "projection {:?} has length {}, expected {p}",
                        self.name(),
                        vector.len()
                    )));
                }
                DVector::from_vec(vector.clone())
            }
            ProjectionDoc::Symbolic(s) => {
                let spikes = model.spikes();
                if s == "orthogonal" {
                    if spikes.total() >= p {
                        return Err(HarnessError::Input(
                            "no bulk direction available".to_string(),
                        ));
                    }
                    model.v().column(spikes.total()).into_owned()
                } else if let Some(k) = s.strip_prefix('V').and_then(|r| r.parse::<usize>().ok()) {
                    if k == 0 || k > spikes.len() {
                        return Err(HarnessError::Input(format!(
                            "projection {s}: model has {} spikes",
                            spikes.len()
                        )));
                    }
                    model.v().column(spikes.index_set(k - 1).start).into_owned()
                } else if let Some(i) = s.strip_prefix('e').and_then(|r| r.parse::<usize>().ok()) {
                    if i == 0 || i > p {
                        return Err(HarnessError::Input(format!(
                            "projection {s}: coordinate out of range 1..={p}"
                        )));
                    }
                    let mut e = DVector::zeros(p);
                    e[i - 1] = 1.0;
                    e
                } else {
                    return Err(HarnessError::Input(format!(
                        "unknown projection {s:?}; use Vk, ek, orthogonal or an explicit vector"
                    )));
                }
            }
        };
        let norm = v.norm();
        if (norm - 1.0).abs() > 1e-12 || norm.is_nan() {
            return Err(HarnessError::Input(format!(
                "projection {:?} is not a unit vector (norm {norm})",
                self.name()
            )));
        }
        Ok(v)
    }
}

fn default_kinds() -> Vec<KindDoc> {
    vec![KindDoc::Covariance, KindDoc::Correlation]
}

fn default_dist() -> DistDoc {
    DistDoc::Gaussian
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelDoc,
    pub n: usize,
    pub reps: usize,
    #[serde(default = "default_dist")]
    pub dist: DistDoc,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<KindDoc>,
    #[serde(default)]
    pub projections: Vec<ProjectionDoc>,
    #[serde(default)]
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(HarnessError::Input(format!(
                "reps must be at least 2, got {}",
                self.reps
            )));
        }
        if self.n == 0 || self.n * 10 < self.model.p {
            return Err(HarnessError::Input(format!(
                "n = {} is too small for p = {} (need n ≥ p/10)",
                self.n, self.model.p
            )));
        }
        if self.kinds.is_empty() {
            return Err(HarnessError::Input(
                "at least one matrix kind is required".to_string(),
            ));
        }
        for (i, a) in self.kinds.iter().enumerate() {
            if self.kinds[..i].contains(a) {
                return Err(HarnessError::Input(
                    "matrix kinds must be distinct".to_string(),
                ));
            }
        }
        for (i, q) in self.projections.iter().enumerate() {
            if self.projections[..i].iter().any(|o| o.name() == q.name()) {
                return Err(HarnessError::Input(format!(
                    "duplicate projection name {:?}",
                    q.name()
                )));
            }
        }
        Ok(())
    }

    pub fn dist_nu4(&self) -> f64 {
        SourceDistribution::from(self.dist).nu4()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration documents serialize");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}
