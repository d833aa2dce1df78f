//! Run configuration: one JSON document per run, with every stochastic
//! stage seeded from a single global seed by fixed offsets.

use std::path::{Path, PathBuf};

use neuropmd::baselines::TpbConfig;
use neuropmd::encoding::{EncodingConfig, EncodingVariant};
use neuropmd::field::{Activation, FieldConfig};
use neuropmd::manifold::ProductManifoldSpec;
use neuropmd::objective::TrainConfig;
use neuropmd::{Error, Result};
use serde::{Deserialize, Serialize};

/// Offset of the encoding draw from the global seed.
pub const ENCODING_STREAM: u64 = 1;
/// Offset of the parameter initialisation from the global seed.
pub const INIT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSection {
    pub k: usize,
    pub max_freq: Vec<u32>,
    #[serde(default)]
    pub variant: EncodingVariant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub width: usize,
    /// Number of weight layers `L`.
    pub depth: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Multiplier on the default first-layer initialisation range.
    #[serde(default)]
    pub first_layer_gain: Option<f64>,
}

/// A product manifold as a list of `{"kind": "circle" | "sphere2"}` or a
/// shorthand such as `S1xS2` or `T2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifoldField {
    Factors(ProductManifoldSpec),
    Name(String),
}

impl ManifoldField {
    pub fn spec(&self) -> Result<ProductManifoldSpec> {
        match self {
            Self::Factors(s) => Ok(s.clone()),
            Self::Name(n) => n.parse(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifold: ManifoldField,
    /// Data CSV; relative paths are taken from the config file's directory.
    pub data: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub encoding: Option<EncodingSection>,
    #[serde(default)]
    pub field: Option<FieldSection>,
    pub train: TrainConfig,
    /// Candidate penalties; when present, training selects among them.
    #[serde(default)]
    pub tau_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub tpb: Option<TpbConfig>,
    pub checkpoint_out: PathBuf,
    #[serde(default)]
    pub history_out: Option<PathBuf>,
    /// Per-penalty criteria from selection.
    #[serde(default)]
    pub criteria_out: Option<PathBuf>,
}

/// A configuration with paths resolved and seeds derived.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub spec: ProductManifoldSpec,
    pub seed: u64,
    pub data: PathBuf,
    pub encoding: Option<EncodingConfig>,
    pub field: Option<FieldConfig>,
    pub train: TrainConfig,
    pub tau_grid: Option<Vec<f64>>,
    pub tpb: Option<TpbConfig>,
    pub checkpoint_out: PathBuf,
    pub history_out: Option<PathBuf>,
    pub criteria_out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    /// Applies the global seed (`override_seed` first, then the file's) to
    /// every stage and resolves paths against `base`.
    pub fn resolve(&self, base: &Path, override_seed: Option<u64>) -> Result<Resolved> {
        let seed = override_seed
            .or(self.seed)
            .ok_or_else(|| Error::Config("no seed given; pass --seed or set \"seed\" in the config".into()))?;
        let spec = self.manifold.spec()?;
        let encoding = self.encoding.as_ref().map(|e| EncodingConfig {
            k: e.k,
            max_freq: e.max_freq.clone(),
            variant: e.variant,
            seed: seed.wrapping_add(ENCODING_STREAM),
        });
        let field = match (&self.field, &self.encoding) {
            (Some(f), Some(e)) => {
                let mut fc = FieldConfig::new(e.k, f.width, f.depth);
                fc.activation = f.activation;
                fc.init_seed = seed.wrapping_add(INIT_STREAM);
                if let Some(g) = f.first_layer_gain {
                    fc.first_layer_gain = g;
                }
                fc.validate()?;
                Some(fc)
            }
            (Some(_), None) => return Err(Error::Config("a field section needs an encoding section".into())),
            _ => None,
        };
        let tpb = self.tpb.clone().map(|t| TpbConfig { init_seed: seed, ..t });
        let train = TrainConfig { seed, ..self.train.clone() };
        train.validate()?;
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        Ok(Resolved {
            spec,
            seed,
            data: at(&self.data),
            encoding,
            field,
            train,
            tau_grid: self.tau_grid.clone(),
            tpb,
            checkpoint_out: at(&self.checkpoint_out),
            history_out: self.history_out.as_deref().map(at),
            criteria_out: self.criteria_out.as_deref().map(at),
        })
    }
}

impl Resolved {
    pub fn field_parts(&self) -> Result<(&EncodingConfig, &FieldConfig)> {
        match (&self.encoding, &self.field) {
            (Some(e), Some(f)) => Ok((e, f)),
            _ => Err(Error::Config("this command needs \"encoding\" and \"field\" sections".into())),
        }
    }
}
