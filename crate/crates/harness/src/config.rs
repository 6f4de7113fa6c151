//! Experiment configuration and backend construction.

use std::path::PathBuf;
use std::sync::Arc;

use hcb_core::backend::{fit_empirical, ConditionalBackend, ExactMarginalModel, JointTable, PerturbedModel};
use hcb_core::rng::rng_for;
use hcb_core::sampling::SamplerConfig;
use hcb_core::search::BeamConfig;
use hcb_core::{Error, Result, TokenId};
use serde::{Deserialize, Serialize};

const JOINT_STREAM: u64 = 0x6a6f_696e;
const CORPUS_STREAM: u64 = 0x636f_7270;
const FIT_STREAM: u64 = 0x6669_7400;

/// A random joint table identified by its shape and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticJoint {
    pub alphabet: usize,
    pub length: usize,
    pub seed: u64,
    /// Standard deviation of the Gaussian log-weights.
    pub spread: f64,
}

impl SyntheticJoint {
    pub fn build(&self) -> Result<JointTable> {
        JointTable::random(
            self.alphabet,
            self.length,
            self.spread,
            &mut rng_for(&[self.seed, JOINT_STREAM]),
        )
    }

    /// `count` sequences drawn from the joint.
    pub fn corpus(&self, count: usize) -> Result<Vec<Vec<TokenId>>> {
        Ok(self
            .build()?
            .sample_corpus(count, &mut rng_for(&[self.seed, CORPUS_STREAM])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Exact {
        joint: SyntheticJoint,
    },
    Empirical {
        joint: SyntheticJoint,
        mask_rate: f64,
        num_samples: usize,
        /// Training sequences drawn from the joint before masking.
        corpus_size: usize,
    },
    Perturbed {
        joint: SyntheticJoint,
        delta: f64,
    },
    Remote {
        endpoint: String,
        timeout_ms: u64,
        batch_size: usize,
    },
}

impl BackendSpec {
    pub fn joint(&self) -> Option<&SyntheticJoint> {
        match self {
            BackendSpec::Exact { joint }
            | BackendSpec::Empirical { joint, .. }
            | BackendSpec::Perturbed { joint, .. } => Some(joint),
            BackendSpec::Remote { .. } => None,
        }
    }

    pub fn build(&self) -> Result<BuiltBackend> {
        match self {
            BackendSpec::Exact { joint } => {
                let exact = ExactMarginalModel::new(joint.build()?);
                Ok(BuiltBackend::synthetic(Arc::new(exact.clone()), exact))
            }
            BackendSpec::Empirical {
                joint,
                mask_rate,
                num_samples,
                corpus_size,
            } => {
                let exact = ExactMarginalModel::new(joint.build()?);
                let corpus = joint.corpus(*corpus_size)?;
                let fitted = fit_empirical(
                    &corpus,
                    joint.alphabet,
                    *mask_rate,
                    *num_samples,
                    hcb_core::rng::hash_words([joint.seed, FIT_STREAM]),
                )?;
                Ok(BuiltBackend::synthetic(Arc::new(fitted), exact))
            }
            BackendSpec::Perturbed { joint, delta } => {
                let exact = ExactMarginalModel::new(joint.build()?);
                let perturbed = PerturbedModel::new(exact.clone(), *delta, joint.seed)?;
                Ok(BuiltBackend::synthetic(Arc::new(perturbed), exact))
            }
            #[cfg(feature = "remote")]
            BackendSpec::Remote {
                endpoint,
                timeout_ms,
                batch_size,
            } => {
                let remote = Arc::new(hcb_core::backend::RemoteBackend::connect(
                    endpoint,
                    std::time::Duration::from_millis(*timeout_ms),
                    *batch_size,
                )?);
                Ok(BuiltBackend {
                    backend: remote.clone(),
                    reference: None,
                    remote: Some(remote),
                })
            }
            #[cfg(not(feature = "remote"))]
            BackendSpec::Remote { .. } => Err(Error::Config("built without remote backend support".into())),
        }
    }
}

/// A constructed backend plus, for synthetic backends, the exact model of
/// the underlying joint.
#[derive(Clone)]
pub struct BuiltBackend {
    pub backend: Arc<dyn ConditionalBackend>,
    pub reference: Option<ExactMarginalModel>,
    #[cfg(feature = "remote")]
    pub remote: Option<Arc<hcb_core::backend::RemoteBackend>>,
}

impl BuiltBackend {
    fn synthetic(backend: Arc<dyn ConditionalBackend>, reference: ExactMarginalModel) -> Self {
        Self {
            backend,
            reference: Some(reference),
            #[cfg(feature = "remote")]
            remote: None,
        }
    }
}

/// Where examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Sequences sampled from the synthetic joint.
    Synthetic { num_sequences: usize },
    /// Newline-delimited file: space-separated ids, or raw text for remote
    /// backends.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Beam(BeamConfig),
    /// The sampler seed is mixed with the run seed and task index.
    Sample(SamplerConfig),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Beam(cfg) => cfg.label(),
            Method::Sample(cfg) => cfg.label(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Mask log-prob replaced by a random one of the previous 1,000 reads.
    ContextScramble,
    /// Mask log-prob replaced by the log-prob of a random content token.
    TokenSwap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub backend: BackendSpec,
    pub data: DataSource,
    pub gap: usize,
    pub num_examples: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub ablation: Ablation,
    pub seed: u64,
    /// Worker threads; 0 uses all available cores.
    #[serde(default)]
    pub workers: usize,
    /// Cutoffs for top-k accuracy in the summary.
    pub top_k: Vec<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_examples == 0 {
            return Err(Error::Config("num_examples must be at least 1".into()));
        }
        if self.gap == 0 {
            return Err(Error::Config("gap length must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        if self.top_k.is_empty() || self.top_k.contains(&0) {
            return Err(Error::Config("top-k cutoffs must be positive".into()));
        }
        for m in &self.methods {
            match m {
                Method::Beam(cfg) if cfg.beam_size == 0 => {
                    return Err(Error::Config("beam size must be at least 1".into()))
                }
                Method::Sample(cfg) => cfg.validate()?,
                _ => {}
            }
        }
        if let Some(j) = self.backend.joint() {
            if self.gap >= j.length {
                return Err(Error::Config(format!(
                    "gap {} leaves no context in length-{} sequences",
                    self.gap, j.length
                )));
            }
        }
        if matches!(self.data, DataSource::Synthetic { .. }) && self.backend.joint().is_none() {
            return Err(Error::Config("synthetic data needs a synthetic backend".into()));
        }
        Ok(())
    }
}
