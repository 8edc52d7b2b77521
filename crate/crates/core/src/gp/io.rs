use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GpModel, InputSpace, MeanKind, TrainingData};
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// Serialized form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub space: InputSpace,
    pub mean_kind: MeanKind,
    pub latent_dim: usize,
    /// Flat hyperparameters, see [`GpModel::parameters`].
    pub parameters: Vec<f64>,
    pub is_weight: f64,
    pub nu: f64,
    pub y_mean: f64,
    pub y_std: f64,
    pub beta: Vec<f64>,
    pub loss: f64,
    pub data_digest: String,
    pub data: TrainingData,
}

fn digest(data: &TrainingData) -> Result<String> {
    let bytes = serde_json::to_vec(data).map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl GpModel {
    pub fn to_file(&self) -> Result<ModelFile> {
        let (eps, nu) = self.loss_settings();
        let (y_mean, y_std) = self.standardization();
        Ok(ModelFile {
            version: FORMAT_VERSION,
            space: self.space().clone(),
            mean_kind: self.mean_kind(),
            latent_dim: self.latent_dim(),
            parameters: self.parameters().to_vec(),
            is_weight: eps,
            nu,
            y_mean,
            y_std,
            beta: self.mean_spec().beta,
            loss: self.loss().total,
            data_digest: digest(self.training_data())?,
            data: self.training_data().clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_file()?).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Rebuilds a model, checking the data digest and the stored
    /// standardization.
    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.version != FORMAT_VERSION {
            return Err(Error::Serialization(format!("unsupported model format version {}", file.version)));
        }
        if digest(&file.data)? != file.data_digest {
            return Err(Error::Serialization("training data does not match its digest".into()));
        }
        let model = GpModel::from_parameters(
            file.space,
            file.data,
            file.mean_kind,
            file.latent_dim,
            file.parameters,
            file.is_weight,
            file.nu,
        )?;
        let (m, s) = model.standardization();
        if m != file.y_mean || s != file.y_std {
            return Err(Error::Serialization("standardization constants do not match the data".into()));
        }
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        Self::from_file(file)
    }
}
