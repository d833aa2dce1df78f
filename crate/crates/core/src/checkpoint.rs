//! Self-contained JSON checkpoints for fields and tensor-product-basis
//! models. Parameters are stored as a flat decimal array that round-trips
//! `f64` exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::TpbModel;
use crate::encoding::Encoding;
use crate::error::{config, Error, Result};
use crate::field::{FieldConfig, FieldDensity, FieldParams};
use crate::metrics::Density;
use crate::objective::{TrainConfig, TrainState};
use crate::Scalar;

pub const CHECKPOINT_VERSION: &str = "neuropmd-ckpt-1";

/// Architecture of the stored model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelConfig {
    Field {
        field: FieldConfig,
    },
    /// A single linear layer over the full tensor basis.
    Tpb {
        max_freq: Vec<u32>,
        penalty_exponent: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: String,
    pub config: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    pub encoding: Encoding,
    pub theta: Vec<f64>,
    pub seed: u64,
    pub epoch: usize,
}

impl Checkpoint {
    /// `init` records how the parameters were initialised.
    pub fn from_field<T: Scalar>(
        state: &TrainState<T>,
        init: &FieldConfig,
        train: Option<&TrainConfig>,
        seed: u64,
    ) -> Self {
        let mut field = state.params.config(init.init_seed);
        field.first_layer_gain = init.first_layer_gain;
        Self {
            version: CHECKPOINT_VERSION.into(),
            config: ModelConfig::Field { field },
            train: train.cloned(),
            encoding: state.encoding.clone(),
            theta: state.params.flatten().iter().map(|x| x.f64()).collect(),
            seed,
            epoch: state.epoch,
        }
    }

    pub fn from_tpb<T: Scalar>(
        model: &TpbModel<T>,
        max_freq: &[u32],
        train: Option<&TrainConfig>,
        seed: u64,
        epoch: usize,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION.into(),
            config: ModelConfig::Tpb { max_freq: max_freq.to_vec(), penalty_exponent: model.penalty_exponent() },
            train: train.cloned(),
            encoding: model.encoding().clone(),
            theta: model.coeffs().iter().map(|x| x.f64()).collect(),
            seed,
            epoch,
        }
    }

    /// Parses and validates a checkpoint document.
    pub fn from_json(s: &str) -> Result<Self> {
        let mut ck: Self = serde_json::from_str(s)?;
        if ck.version != CHECKPOINT_VERSION {
            return config(format!("unsupported checkpoint version {:?}", ck.version));
        }
        // rebuild so the stored eigenvalues cannot disagree with the basis
        ck.encoding = Encoding::from_basis(ck.encoding.spec().clone(), ck.encoding.basis().to_vec())?;
        if ck.theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("checkpoint parameters are not finite".into()));
        }
        match &ck.config {
            ModelConfig::Field { .. } => drop(ck.field_state::<f64>()?),
            ModelConfig::Tpb { .. } => drop(ck.tpb_model::<f64>()?),
        }
        Ok(ck)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn field_state<T: Scalar>(&self) -> Result<TrainState<T>> {
        let ModelConfig::Field { field } = &self.config else {
            return config("checkpoint holds a TPB model, not a field");
        };
        if field.widths.first() != Some(&self.encoding.len()) {
            return config("field input width does not match the stored encoding");
        }
        let theta: Vec<T> = self.theta.iter().map(|&x| T::lit(x)).collect();
        let params = FieldParams::unflatten(field, &theta)?;
        Ok(TrainState { encoding: self.encoding.clone(), params, epoch: self.epoch })
    }

    pub fn tpb_model<T: Scalar>(&self) -> Result<TpbModel<T>> {
        let ModelConfig::Tpb { max_freq, penalty_exponent } = &self.config else {
            return config("checkpoint holds a field, not a TPB model");
        };
        let theta: Vec<T> = self.theta.iter().map(|&x| T::lit(x)).collect();
        let model = TpbModel::new(self.encoding.spec(), max_freq, *penalty_exponent, &theta)?;
        if model.encoding() != &self.encoding {
            return config("stored encoding is not the full tensor basis");
        }
        Ok(model)
    }

    /// The stored model as an `f64` density.
    pub fn density(&self) -> Result<Box<dyn Density>> {
        Ok(match &self.config {
            ModelConfig::Field { .. } => {
                let s = self.field_state::<f64>()?;
                Box::new(FieldDensity::new(s.encoding, s.params)?)
            }
            ModelConfig::Tpb { .. } => Box::new(self.tpb_model::<f64>()?),
        })
    }

    pub fn field_config(&self) -> Option<&FieldConfig> {
        match &self.config {
            ModelConfig::Field { field } => Some(field),
            ModelConfig::Tpb { .. } => None,
        }
    }
}
