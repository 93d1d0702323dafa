use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::toynet::{ToyNet, ToyNetConfig};
use super::train::Objective;
use super::PredictorHandle;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "crowdprm-toynet";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub seed: u64,
    pub objective: Objective,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_total: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub class_weight: f64,
    /// `c_max` of the split the training labels were derived from.
    #[serde(default)]
    pub c_max: Option<u32>,
}

/// On-disk form of a trained [`ToyNet`]. Weights are little-endian `f64`,
/// base64-encoded.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub config: ToyNetConfig,
    pub param_count: usize,
    pub weights: String,
    #[serde(default)]
    pub provenance: Option<TrainingProvenance>,
}

impl ModelFile {
    pub fn from_net(net: &ToyNet, provenance: Option<TrainingProvenance>) -> Self {
        let bytes: Vec<u8> = net.params().iter().flat_map(|p| p.to_le_bytes()).collect();
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            config: net.config().clone(),
            param_count: net.param_count(),
            weights: STANDARD.encode(bytes),
            provenance,
        }
    }

    pub fn into_net(self) -> Result<(ToyNet, Option<TrainingProvenance>)> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Format(format!(
                "not a toynet model file: `{}`",
                self.format
            )));
        }
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let bytes = STANDARD
            .decode(self.weights.as_bytes())
            .map_err(|e| Error::Format(format!("model weights: {e}")))?;
        if bytes.len() != self.param_count * 8 {
            return Err(Error::Truncated(format!(
                "model weights hold {} bytes, expected {}",
                bytes.len(),
                self.param_count * 8
            )));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((ToyNet::from_params(self.config, params)?, self.provenance))
    }
}

pub fn save_model(
    path: &Path,
    net: &ToyNet,
    provenance: Option<&TrainingProvenance>,
) -> Result<()> {
    let file = ModelFile::from_net(net, provenance.cloned());
    let text = serde_json::to_string_pretty(&file)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<PredictorHandle> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text)?;
    let (net, provenance) = file.into_net()?;
    Ok(PredictorHandle::ToyNet { net, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = ToyNet::new(ToyNetConfig::default(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&path, &net, None).unwrap();
        match load_model(&path).unwrap() {
            PredictorHandle::ToyNet {
                net: back,
                provenance,
            } => {
                assert_eq!(back, net);
                assert!(provenance.is_none());
            }
            _ => panic!("wrong handle kind"),
        }
    }

    #[test]
    fn rejects_damaged_files() {
        let net = ToyNet::new(ToyNetConfig::default(), 5).unwrap();
        let mut f = ModelFile::from_net(&net, None);
        f.version = 7;
        assert!(matches!(
            f.into_net(),
            Err(Error::VersionMismatch { found: 7, .. })
        ));
        let mut f = ModelFile::from_net(&net, None);
        f.weights.truncate(100);
        assert!(f.into_net().is_err());
    }
}
