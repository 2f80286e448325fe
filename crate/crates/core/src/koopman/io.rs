//! JSON model files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Normalizer;
use crate::linalg::{from_rows, to_rows};
use crate::neuralnet::{LiftingNetwork, NetworkSpec};
use crate::{Error, Result};

use super::{KoopmanModel, Variant};

pub const MODEL_FORMAT: &str = "kmpc-koopman-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Dims {
    state: usize,
    input: usize,
    disturbance: usize,
    lifted: usize,
    phi: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    variant: Variant,
    dims: Dims,
    a: Vec<Vec<f64>>,
    b_u: Vec<Vec<f64>>,
    b_p: Vec<Vec<f64>>,
    b_phi: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    psi: NetworkSpec,
    phi: Option<NetworkSpec>,
    normalizer: Normalizer,
    #[serde(default)]
    metadata: serde_json::Value,
}

impl KoopmanModel {
    pub fn to_json(&self, metadata: serde_json::Value) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            variant: self.variant,
            dims: Dims {
                state: self.state_dim(),
                input: self.input_dim(),
                disturbance: self.disturbance_dim(),
                lifted: self.lifted_dim(),
                phi: self.phi_dim(),
            },
            a: to_rows(&self.a),
            b_u: to_rows(&self.b_u),
            b_p: to_rows(&self.b_p),
            b_phi: to_rows(&self.b_phi),
            c: to_rows(&self.c),
            psi: self.psi.to_spec(),
            phi: self.phi.as_ref().map(LiftingNetwork::to_spec),
            normalizer: self.normalizer.clone(),
            metadata,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parse a model file, returning the model and its metadata block.
    pub fn from_json(text: &str) -> Result<(Self, serde_json::Value)> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unexpected format tag `{}`", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        let d = &file.dims;
        let model = KoopmanModel {
            variant: file.variant,
            a: from_rows(&file.a, d.lifted, d.lifted, "A")?,
            b_u: from_rows(&file.b_u, d.lifted, d.input, "B_u")?,
            b_p: from_rows(&file.b_p, d.lifted, d.disturbance, "B_p")?,
            b_phi: from_rows(&file.b_phi, d.lifted, d.phi, "B_phi")?,
            c: from_rows(&file.c, d.state, d.lifted, "C")?,
            psi: LiftingNetwork::from_spec(&file.psi, "psi")?,
            phi: file
                .phi
                .as_ref()
                .map(|s| LiftingNetwork::from_spec(s, "phi"))
                .transpose()?,
            normalizer: file.normalizer,
        };
        model.validate()?;
        Ok((model, file.metadata))
    }
}

pub fn save_model(model: &KoopmanModel, path: &Path, metadata: serde_json::Value) -> Result<()> {
    let text = model.to_json(metadata)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(KoopmanModel, serde_json::Value)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    KoopmanModel::from_json(&text)
}
