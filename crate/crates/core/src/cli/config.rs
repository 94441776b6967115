// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration read from `--config`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::CampaignConfig;
use crate::probes::{decomposition::NmfConfig, CvConfig};
use crate::similarity::FingerprintParams;
use crate::trainer::TrainConfig;

/// Top-level document. `seed` is required and is the only source of randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub probes: ProbeSection,
    #[serde(default)]
    pub steering: SteeringSection,
    #[serde(default)]
    pub similarity: SimilaritySection,
    #[serde(default)]
    pub bridge: BridgeSection,
}

/// Input locations. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Text file with one SMILES per line, for `embed`.
    pub smiles: Option<PathBuf>,
    /// Ask the bridge to curate (canonicalize and deduplicate) before embedding.
    pub curate: bool,
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub substructures: Option<PathBuf>,
    pub descriptors: Option<PathBuf>,
    pub toxicity: Option<PathBuf>,
    /// JSON array with one list of target names per eval row.
    pub targets: Option<PathBuf>,
    /// JSON `{"nbits": N, "fingerprints": [[bit, …] | null, …]}`, one entry per eval row.
    pub fingerprints: Option<PathBuf>,
    /// Directory holding earlier outputs, for `export-plots`. Defaults to `--out`.
    pub run_dir: Option<PathBuf>,
    /// Plot series to export; all of them when absent.
    pub plots: Option<Vec<PlotKind>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Landscape,
    Sweep,
    Steering,
    Tanimoto,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::Landscape, PlotKind::Sweep, PlotKind::Steering, PlotKind::Tanimoto];
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaLossSource {
    #[default]
    Proxy,
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub delta_loss: DeltaLossSource,
    pub proxy_classes: usize,
    /// Input scale of the readout proxy; `1 / normalizer` of the eval data when absent.
    pub proxy_input_scale: Option<f64>,
    /// Decode reconstructions through the bridge and score them.
    pub functional: bool,
    pub taxonomy: Option<PathBuf>,
    pub expansions: Vec<usize>,
    pub ks: Vec<usize>,
    pub save_checkpoints: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            delta_loss: DeltaLossSource::Proxy,
            proxy_classes: 32,
            proxy_input_scale: None,
            functional: false,
            taxonomy: None,
            expansions: vec![8, 16, 32],
            ks: vec![40, 80, 160],
            save_checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmartsPattern {
    pub name: String,
    pub smarts: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub folds: usize,
    pub class_balanced: bool,
    /// Patterns matched by `embed` into a substructure label file.
    pub smarts: Vec<SmartsPattern>,
    /// Have `embed` compute the descriptor label file.
    pub compute_descriptors: bool,
    pub rho_threshold: f64,
    pub alpha: f64,
    pub top_n: usize,
    pub redundancy_pairs: usize,
    /// Baseline components; `d_model` when absent.
    pub pca_components: Option<usize>,
    pub nmf_components: Option<usize>,
    pub nmf_max_iter: usize,
    pub nmf_tol: f64,
    /// Label column for `probe-toxicity`; the first column when absent.
    pub toxicity_column: Option<String>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let nmf = NmfConfig::default();
        Self {
            folds: 5,
            class_balanced: true,
            smarts: vec![],
            compute_descriptors: false,
            rho_threshold: 0.3,
            alpha: 0.05,
            top_n: 10,
            redundancy_pairs: 100_000,
            pca_components: None,
            nmf_components: None,
            nmf_max_iter: nmf.max_iter,
            nmf_tol: nmf.tol,
            toxicity_column: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringSection {
    pub max_molecules: usize,
    pub batch_rows: usize,
    pub features: Option<Vec<u32>>,
    pub neurons: Option<Vec<u32>>,
    /// Intervention index to resume from.
    pub start: usize,
}

impl Default for SteeringSection {
    fn default() -> Self {
        let c = CampaignConfig::default();
        Self {
            max_molecules: c.max_molecules,
            batch_rows: c.batch_rows,
            features: None,
            neurons: None,
            start: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySection {
    pub fingerprint: FingerprintParams,
    pub pilot_pairs: usize,
    /// Null size; derived from the pilot when absent.
    pub n_pairs: Option<usize>,
    pub z: f64,
    pub epsilon: f64,
    pub bins: usize,
    /// Molecules per feature for the coherence test.
    pub top_molecules: usize,
    pub target_threshold: f64,
    pub min_molecules: usize,
}

impl Default for SimilaritySection {
    fn default() -> Self {
        Self {
            fingerprint: FingerprintParams::default(),
            pilot_pairs: 100_000,
            n_pairs: None,
            z: 2.576,
            epsilon: 1e-4,
            bins: 100,
            top_molecules: 10,
            target_threshold: 0.5,
            min_molecules: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSection {
    /// Program and arguments of the bridge process.
    pub command: Vec<String>,
    /// Serve responses from a recorded transcript instead of a process.
    pub replay: Option<PathBuf>,
    /// Save the session transcript as `bridge_transcript.jsonl` under `--out`.
    pub record: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Checks cross-field constraints that serde cannot express.
    pub fn validate(&self) -> Result<(), String> {
        if self.train.seed != 0 && self.train.seed != self.seed {
            return Err("train.seed conflicts with the top-level seed; set only `seed`".into());
        }
        self.train.validate().map_err(|e| e.to_string())?;
        self.cv().validate().map_err(|e| e.to_string())?;
        if self.eval.proxy_classes < 2 {
            return Err("eval.proxy_classes must be at least 2".into());
        }
        if self.eval.expansions.is_empty() || self.eval.ks.is_empty() {
            return Err("eval.expansions and eval.ks must be non-empty".into());
        }
        if self.steering.max_molecules == 0 || self.steering.batch_rows == 0 {
            return Err("steering.max_molecules and steering.batch_rows must be positive".into());
        }
        let s = &self.similarity;
        if s.pilot_pairs == 0 || s.bins == 0 || s.top_molecules < 2 {
            return Err("similarity.pilot_pairs and bins must be positive, top_molecules at least 2".into());
        }
        if !(s.epsilon > 0.0) || !(s.z > 0.0) {
            return Err("similarity.z and epsilon must be positive".into());
        }
        Ok(())
    }

    /// Applies the `--seed` override and propagates the seed into every section.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self
    }

    pub fn cv(&self) -> CvConfig {
        CvConfig {
            folds: self.probes.folds,
            seed: self.seed,
            class_balanced: self.probes.class_balanced,
        }
    }

    pub fn campaign(&self) -> CampaignConfig {
        CampaignConfig {
            max_molecules: self.steering.max_molecules,
            batch_rows: self.steering.batch_rows,
            seed: self.seed,
        }
    }

    pub fn nmf(&self) -> NmfConfig {
        NmfConfig {
            max_iter: self.probes.nmf_max_iter,
            tol: self.probes.nmf_tol,
            seed: self.seed,
        }
    }

    /// Hex SHA-256 of the compact JSON form of the effective configuration.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Makes every relative data path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        let d = &mut self.data;
        for p in [
            &mut d.smiles,
            &mut d.train,
            &mut d.eval,
            &mut d.checkpoint,
            &mut d.substructures,
            &mut d.descriptors,
            &mut d.toxicity,
            &mut d.targets,
            &mut d.fingerprints,
            &mut d.run_dir,
        ] {
            fix(p);
        }
        fix(&mut self.eval.taxonomy);
        fix(&mut self.bridge.replay);
    }
}
