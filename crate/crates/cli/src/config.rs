//! Run configuration and the manifest written next to `infer` outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tfce_core::prelude::{Connectivity, EnhanceParams, MassConvention, StatisticKind, Tails};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path} changed since the recorded run (sha256 {found}, manifest has {expected})")]
    DigestMismatch { path: PathBuf, expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputSource {
    /// One 4D file, subjects along the fourth dimension.
    Stack(PathBuf),
    /// Text file listing one 3D map per line.
    List(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Design {
    OneSample,
    /// `true` marks membership of the first group.
    TwoSample { groups: Vec<bool> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: InputSource,
    pub mask: Option<PathBuf>,
    /// Neighbor count: 4 or 8 (2D), 6, 18 or 26 (3D).
    pub connectivity: u32,
    pub extent_exponent: f64,
    pub height_exponent: f64,
    pub h0: f64,
    pub design: Design,
    pub n_perm: usize,
    pub seed: u64,
    pub exhaustive: bool,
    pub permutation_matrix: Option<PathBuf>,
    pub tails: Tails,
    pub tfce: bool,
    pub cluster_extent_cdt: Option<f64>,
    pub cluster_mass_cdt: Option<f64>,
    pub mass_convention: MassConvention,
    /// Fixed-step TFCE baseline instead of the exact integral.
    pub discretized_steps: Option<usize>,
    pub output: PathBuf,
    /// 0 uses every available core.
    pub workers: usize,
}

impl RunConfig {
    pub fn connectivity(&self) -> Result<Connectivity, ConfigError> {
        Connectivity::from_neighbor_count(self.connectivity)
            .ok_or_else(|| ConfigError::Invalid(format!("connectivity {} is not one of 4, 8, 6, 18, 26", self.connectivity)))
    }

    pub fn enhance_params(&self) -> Result<EnhanceParams, ConfigError> {
        EnhanceParams::new(self.extent_exponent, self.height_exponent, self.h0)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn statistics(&self) -> Vec<StatisticKind> {
        let mut out = Vec::new();
        if self.tfce {
            out.push(StatisticKind::Tfce);
        }
        if let Some(cdt) = self.cluster_extent_cdt {
            out.push(StatisticKind::ClusterExtent { cdt });
        }
        if let Some(cdt) = self.cluster_mass_cdt {
            out.push(StatisticKind::ClusterMass { cdt });
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.connectivity()?;
        self.enhance_params()?;
        if self.statistics().is_empty() {
            return Err(ConfigError::Invalid("no statistic requested".into()));
        }
        if self.discretized_steps == Some(0) {
            return Err(ConfigError::Invalid("--discretized needs at least one step".into()));
        }
        if self.permutation_matrix.is_some() && (self.exhaustive || matches!(self.design, Design::TwoSample { .. })) {
            return Err(ConfigError::Invalid("a permutation matrix replaces random and exhaustive sign flips".into()));
        }
        if !self.exhaustive && self.permutation_matrix.is_none() && self.n_perm == 0 {
            return Err(ConfigError::Invalid("n_perm must be at least 1".into()));
        }
        Ok(())
    }

    /// Hash of every field that affects results (output location and worker
    /// count excluded).
    pub fn hash(&self) -> String {
        let canonical = RunConfig { output: PathBuf::new(), workers: 0, ..self.clone() };
        sha256_hex(serde_json::to_string(&canonical).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Ok(Self { path: path.to_path_buf(), sha256: sha256_hex(&bytes) })
    }

    pub fn verify(&self) -> Result<(), ConfigError> {
        let now = Self::of(&self.path)?;
        if now.sha256 != self.sha256 {
            return Err(ConfigError::DigestMismatch {
                path: self.path.clone(),
                expected: self.sha256.clone(),
                found: now.sha256,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_s: f64,
    pub inference_s: f64,
    pub write_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_perm: usize,
    pub n_subjects: usize,
    pub n_voxels: usize,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub timings: Timings,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Json { path: path.to_path_buf(), source })
    }

    /// Fail if the recorded configuration or any input differs from disk.
    pub fn verify(&self) -> Result<(), ConfigError> {
        if self.config.hash() != self.config_hash {
            return Err(ConfigError::Invalid("manifest config does not match its recorded hash".into()));
        }
        self.inputs.iter().try_for_each(FileDigest::verify)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> RunConfig {
        RunConfig {
            input: InputSource::Stack("subjects.nii".into()),
            mask: None,
            connectivity: 26,
            extent_exponent: 0.5,
            height_exponent: 2.0,
            h0: 0.0,
            design: Design::OneSample,
            n_perm: 19,
            seed: 7,
            exhaustive: false,
            permutation_matrix: None,
            tails: Tails::Positive,
            tfce: true,
            cluster_extent_cdt: Some(2.3),
            cluster_mass_cdt: None,
            mass_convention: MassConvention::Sum,
            discretized_steps: None,
            output: "out".into(),
            workers: 1,
        }
    }

    #[test]
    fn hash_ignores_output_and_workers() {
        let a = config();
        let b = RunConfig { output: "elsewhere".into(), workers: 8, ..config() };
        let c = RunConfig { seed: 8, ..config() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn json_round_trip() {
        let a = RunConfig { design: Design::TwoSample { groups: vec![true, false, true] }, ..config() };
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn validation() {
        assert!(config().validate().is_ok());
        assert!(RunConfig { connectivity: 10, ..config() }.validate().is_err());
        assert!(RunConfig { tfce: false, cluster_extent_cdt: None, ..config() }.validate().is_err());
        assert!(RunConfig { extent_exponent: -1.0, ..config() }.validate().is_err());
        assert!(RunConfig { n_perm: 0, ..config() }.validate().is_err());
    }
}
