//! Loading anything that evaluates a density: field or TPB checkpoints,
//! KDE model files, mixture specifications and `uniform:<manifold>`.

use std::path::{Path, PathBuf};

use neuropmd::baselines::KdeModel;
use neuropmd::checkpoint::{Checkpoint, ModelConfig};
use neuropmd::manifold::{Point, ProductManifoldSpec};
use neuropmd::metrics::{Density, Uniform};
use neuropmd::synthetic::MixtureSpec;
use neuropmd::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::io::read_torus_points;

/// A persisted KDE: the concentration and a reference to its data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdeFile {
    pub kind: String,
    pub kappa: f64,
    /// Absolute path of the data CSV.
    pub data: PathBuf,
    pub seed: u64,
    pub folds: usize,
    /// `(kappa, criterion)` from cross-validation.
    pub scores: Vec<(f64, f64)>,
}

pub const KDE_KIND: &str = "kde";

pub enum Model {
    Checkpoint(Box<Checkpoint>),
    Kde { model: KdeModel, seed: u64 },
    Mixture(MixtureSpec),
    Uniform(ProductManifoldSpec),
}

impl Model {
    pub fn load(source: &str) -> Result<Self> {
        if let Some(m) = source.strip_prefix("uniform:") {
            return Ok(Self::Uniform(m.parse()?));
        }
        let path = Path::new(source);
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read model {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Input(format!("{} is not JSON: {e}", path.display())))?;
        if value.get("version").is_some() {
            Ok(Self::Checkpoint(Box::new(Checkpoint::from_json(&text)?)))
        } else if value.get("kind").and_then(|k| k.as_str()) == Some(KDE_KIND) {
            let f: KdeFile = serde_json::from_value(value)?;
            let (_, data) = read_torus_points(&f.data)?;
            Ok(Self::Kde { model: KdeModel::new(data, f.kappa)?, seed: f.seed })
        } else if value.get("components").is_some() {
            Ok(Self::Mixture(serde_json::from_value(value)?))
        } else {
            Err(Error::Input(format!("{} is not a checkpoint, KDE model or mixture", path.display())))
        }
    }

    pub fn density(&self) -> Result<Box<dyn Density + '_>> {
        Ok(match self {
            Self::Checkpoint(c) => c.density()?,
            Self::Kde { model, .. } => Box::new(model),
            Self::Mixture(m) => Box::new(m),
            Self::Uniform(s) => Box::new(Uniform(s.clone())),
        })
    }

    pub fn spec(&self) -> Result<ProductManifoldSpec> {
        Ok(self.density()?.spec())
    }

    /// Default method label.
    pub fn method(&self) -> &'static str {
        match self {
            Self::Checkpoint(c) => match c.config {
                ModelConfig::Field { .. } => "neuropmd",
                ModelConfig::Tpb { .. } => "tpb",
            },
            Self::Kde { .. } => "kde",
            Self::Mixture(_) => "mixture",
            Self::Uniform(_) => "uniform",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::Checkpoint(c) => Some(c.seed),
            Self::Kde { seed, .. } => Some(*seed),
            _ => None,
        }
    }

    /// Log-density for models that carry one directly.
    pub fn log_density(&self, points: &[Point<f64>]) -> Result<Vec<f64>> {
        match self {
            Self::Checkpoint(c) => match c.config {
                ModelConfig::Field { .. } => {
                    let s = c.field_state::<f64>()?;
                    neuropmd::field::FieldDensity::new(s.encoding, s.params)?.log_density_batch(points)
                }
                ModelConfig::Tpb { .. } => c.tpb_model::<f64>()?.log_density_batch(points),
            },
            _ => Ok(self.density()?.density_batch(points)?.into_iter().map(f64::ln).collect()),
        }
    }
}
