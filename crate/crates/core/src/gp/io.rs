use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{GpChannel, GpError, GpVectorModel, Hyperparams, InputSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChannelRecord {
    weights: Vec<f64>,
    sigma_f: f64,
    noise: f64,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    alpha: Vec<f64>,
}

/// On-disk representation of a trained vector model (JSON). Stored alphas
/// are reused verbatim on load so predictions reproduce exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub input_spec: InputSpec,
    channels: Vec<ChannelRecord>,
}

impl ModelFile {
    pub fn from_model(model: &GpVectorModel) -> Self {
        let channels = model
            .channels
            .iter()
            .map(|c| ChannelRecord {
                weights: c.hyper().weights.clone(),
                sigma_f: c.hyper().sigma_f,
                noise: c.hyper().noise,
                x: c.training_inputs().iter().map(|v| v.as_slice().to_vec()).collect(),
                y: c.targets().as_slice().to_vec(),
                alpha: c.alpha().as_slice().to_vec(),
            })
            .collect();
        Self { input_spec: model.input_spec, channels }
    }

    pub fn into_model(self) -> Result<GpVectorModel, GpError> {
        let mut channels = Vec::with_capacity(self.channels.len());
        for rec in self.channels {
            let hyper = Hyperparams::new(rec.weights, rec.sigma_f, rec.noise)?;
            let x: Vec<DVector<f64>> = rec.x.into_iter().map(DVector::from_vec).collect();
            let y = DVector::from_vec(rec.y);
            let alpha = DVector::from_vec(rec.alpha);
            channels.push(GpChannel::fit_with_stored_alpha(x, y, hyper, alpha)?);
        }
        Ok(GpVectorModel::new(channels, self.input_spec))
    }
}

pub fn save_model(model: &GpVectorModel, path: &Path) -> Result<(), GpError> {
    let file = ModelFile::from_model(model);
    let text = serde_json::to_string_pretty(&file).map_err(|e| GpError::Io(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| GpError::Io(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<GpVectorModel, GpError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| GpError::Io(format!("{}: {e}", path.display())))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| GpError::Io(e.to_string()))?;
    file.into_model()
}
