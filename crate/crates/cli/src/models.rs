//! Model specs accepted on the command line:
//! `oracle`, `fixed:<count>`, `external:<command line>`, or a model file path.

use std::path::Path;

use crowdprm::labeling::{AnnotatedImage, DatasetProfile};
use crowdprm::predict::{
    load_model, CountPredictor, ExternalPredictor, FixedPredictor, OraclePredictor, PredictorHandle,
};
use crowdprm::prm::DensityClass;

use crate::config::usage;

pub enum Model {
    Handle(PredictorHandle),
    Fixed(FixedPredictor),
}

impl Model {
    pub fn predictor(&self) -> &dyn CountPredictor {
        match self {
            Model::Handle(h) => h,
            Model::Fixed(f) => f,
        }
    }

    /// `c_max` recorded when the model was trained, if any.
    pub fn trained_cmax(&self) -> Option<u32> {
        match self {
            Model::Handle(PredictorHandle::ToyNet { provenance, .. }) => {
                provenance.as_ref().and_then(|p| p.c_max)
            }
            _ => None,
        }
    }
}

pub fn is_oracle(spec: &str) -> bool {
    spec == "oracle"
}

/// Builds the predictor named by `spec`. The oracle needs a profile and the
/// annotated images it will be asked about.
pub fn resolve(
    spec: &str,
    profile: Option<&DatasetProfile>,
    images: &[AnnotatedImage],
) -> anyhow::Result<Model> {
    if is_oracle(spec) {
        let Some(profile) = profile else {
            return usage("the oracle model needs --cmax or --cmax-from");
        };
        if images.is_empty() {
            return usage("the oracle model needs annotated images (pass a manifest)");
        }
        let o = OraclePredictor::with_images(profile.clone(), images);
        return Ok(Model::Handle(PredictorHandle::Oracle(o)));
    }
    if let Some(rest) = spec.strip_prefix("fixed:") {
        let mut parts = rest.split(':');
        let count: f64 = match parts.next().map(str::parse) {
            Some(Ok(c)) => c,
            _ => {
                return usage(format!(
                    "bad fixed model `{spec}`; expected fixed:<count>[:<class>]"
                ))
            }
        };
        let class = match parts.next() {
            None => DensityClass::MediumCrowd,
            Some(c) => match c.parse() {
                Ok(c) => c,
                Err(e) => return usage(format!("bad fixed model `{spec}`: {e}")),
            },
        };
        return Ok(Model::Fixed(FixedPredictor { class, count }));
    }
    if let Some(cmd) = spec.strip_prefix("external:") {
        return Ok(Model::Handle(PredictorHandle::External(
            ExternalPredictor::spawn(cmd)?,
        )));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return usage(format!(
            "model `{spec}` is neither oracle, fixed:<count>, external:<cmd> nor an existing file"
        ));
    }
    Ok(Model::Handle(load_model(path)?))
}
