use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::safety::CbfParams;
use crate::store;

/// Sampling method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Plain Euler flow from noise, no filter.
    #[serde(rename = "fm_unsafe")]
    FmUnsafe,
    /// Euler flow from noise with the safety filter on every step.
    #[serde(rename = "safe_fm_naive")]
    SafeFmNaive,
    /// Unfiltered prediction followed by filtered VTFD correction.
    #[serde(rename = "safeflowmatcher")]
    SafeFlowMatcher,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::FmUnsafe, Method::SafeFmNaive, Method::SafeFlowMatcher];

    pub fn name(self) -> &'static str {
        match self {
            Method::FmUnsafe => "fm_unsafe",
            Method::SafeFmNaive => "safe_fm_naive",
            Method::SafeFlowMatcher => "safeflowmatcher",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method {s:?}; expected one of fm_unsafe, safe_fm_naive, safeflowmatcher"
                ))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which field drives the flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// Exact marginal field of the mixture fitted to the reference dataset.
    Gmm,
    /// A trained network checkpoint.
    Mlp { checkpoint: String },
}

/// Reference dataset the mixture surrogate is fitted to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_paths: usize,
    pub seed: u64,
    pub components: usize,
    /// Load this dataset file instead of generating one.
    pub file: Option<String>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_paths: 1000,
            seed: 0,
            components: 4,
            file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub d: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "T_pred")]
    pub t_pred: usize,
    #[serde(rename = "T_corr")]
    pub t_corr: usize,
    pub alpha: f64,
    pub cbf: CbfParams,
    pub method: Method,
    /// Disables the filter in every phase.
    pub safety: bool,
    pub field: FieldSpec,
    pub dataset: DatasetSpec,
    pub environment: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            d: 2,
            horizon: 31,
            t_pred: 1,
            t_corr: 256,
            alpha: 2.0,
            cbf: CbfParams::default(),
            method: Method::SafeFlowMatcher,
            safety: true,
            field: FieldSpec::Gmm,
            dataset: DatasetSpec::default(),
            environment: "corridor".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_pred < 1 || self.t_corr < 1 {
            return Err(Error::invalid("T_pred and T_corr must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 1.0) {
            return Err(Error::invalid(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        if self.d < 1 {
            return Err(Error::invalid("d must be at least 1"));
        }
        if self.environment.is_empty() {
            return Err(Error::invalid("environment name is empty"));
        }
        if self.dataset.components < 1 || self.dataset.n_paths < self.dataset.components {
            return Err(Error::invalid(
                "dataset needs at least one component and n_paths >= components",
            ));
        }
        self.cbf.validate()
    }

    /// Steps that evaluate the field: both phases for the two-phase method,
    /// a single flow of `T_corr` steps otherwise.
    pub fn field_steps(&self) -> usize {
        match self.method {
            Method::SafeFlowMatcher => self.t_pred + self.t_corr,
            Method::FmUnsafe | Method::SafeFmNaive => self.t_corr,
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parses TOML or JSON (by extension; anything other than `.toml` is JSON).
    pub fn load(path: &FsPath) -> Result<Self> {
        let text = store::read_to_string(path)?;
        let value: serde_json::Value = if path.extension().is_some_and(|e| e == "toml") {
            let table: toml::Table = toml::from_str(&text).map_err(|e| Error::malformed(path, e))?;
            serde_json::to_value(table).map_err(|e| Error::malformed(path, e))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))?
        };
        let cfg: RunConfig = store::from_versioned_value(path, value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        store::save_json(path, self)
    }
}
