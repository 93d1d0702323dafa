//! Patch Rescaling Module: a parameter-free router that sends a classified
//! patch to the Down-scaler (LC), the Iso-scaler (MC), the Up-scaler (HC), or
//! discards it (NC).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{downscale_pad, iso, upscale_split, Patch};

/// Crowd-density label. The derived ordering is NC < LC < MC < HC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DensityClass {
    #[serde(rename = "NC")]
    NoCrowd,
    #[serde(rename = "LC")]
    LowCrowd,
    #[serde(rename = "MC")]
    MediumCrowd,
    #[serde(rename = "HC")]
    HighCrowd,
}

impl DensityClass {
    pub const ALL: [DensityClass; 4] = [
        DensityClass::NoCrowd,
        DensityClass::LowCrowd,
        DensityClass::MediumCrowd,
        DensityClass::HighCrowd,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn short_name(self) -> &'static str {
        match self {
            DensityClass::NoCrowd => "NC",
            DensityClass::LowCrowd => "LC",
            DensityClass::MediumCrowd => "MC",
            DensityClass::HighCrowd => "HC",
        }
    }

    /// Number of patches the PRM emits for this class.
    pub fn routed_len(self) -> usize {
        match self {
            DensityClass::NoCrowd => 0,
            DensityClass::LowCrowd | DensityClass::MediumCrowd => 1,
            DensityClass::HighCrowd => 4,
        }
    }
}

impl fmt::Display for DensityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for DensityClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NC" => Ok(DensityClass::NoCrowd),
            "LC" => Ok(DensityClass::LowCrowd),
            "MC" => Ok(DensityClass::MediumCrowd),
            "HC" => Ok(DensityClass::HighCrowd),
            other => Err(format!("unknown density class `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RescaleOp {
    Discard,
    DownScale,
    Iso,
    UpScale,
}

impl RescaleOp {
    pub fn for_class(class: DensityClass) -> Self {
        match class {
            DensityClass::NoCrowd => RescaleOp::Discard,
            DensityClass::LowCrowd => RescaleOp::DownScale,
            DensityClass::MediumCrowd => RescaleOp::Iso,
            DensityClass::HighCrowd => RescaleOp::UpScale,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrmOutput {
    pub patches: Vec<Patch>,
    pub op: RescaleOp,
}

pub fn route(p: &Patch, class: DensityClass) -> PrmOutput {
    let op = RescaleOp::for_class(class);
    let patches = match op {
        RescaleOp::Discard => Vec::new(),
        RescaleOp::DownScale => vec![downscale_pad(p)],
        RescaleOp::Iso => vec![iso(p)],
        RescaleOp::UpScale => upscale_split(p).into(),
    };
    PrmOutput { patches, op }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PixelGrid, PATCH_SIZE};

    fn patch() -> Patch {
        Patch::from_pixels(PixelGrid::from_fn(224, 224, 1, |y, x, _| {
            ((x ^ y) & 0xff) as f32 / 255.0
        }))
        .unwrap()
    }

    #[test]
    fn cardinality_by_class() {
        let p = patch();
        for class in DensityClass::ALL {
            let out = route(&p, class);
            assert_eq!(out.patches.len(), class.routed_len());
            assert_eq!(out.op, RescaleOp::for_class(class));
            for q in &out.patches {
                assert_eq!(q.pixels().height(), PATCH_SIZE);
                assert_eq!(q.pixels().width(), PATCH_SIZE);
            }
        }
    }

    #[test]
    fn medium_crowd_is_bit_identical() {
        let p = patch();
        let out = route(&p, DensityClass::MediumCrowd);
        assert_eq!(out.op, RescaleOp::Iso);
        assert_eq!(out.patches[0], p);
        let again = route(&out.patches[0], DensityClass::MediumCrowd);
        assert_eq!(again, out);
    }

    #[test]
    fn ordering_and_parsing() {
        assert!(DensityClass::NoCrowd < DensityClass::LowCrowd);
        assert!(DensityClass::MediumCrowd < DensityClass::HighCrowd);
        for c in DensityClass::ALL {
            assert_eq!(c.short_name().parse::<DensityClass>().unwrap(), c);
            assert_eq!(DensityClass::from_index(c.index()), Some(c));
        }
        assert_eq!(
            serde_json::to_string(&DensityClass::HighCrowd).unwrap(),
            "\"HC\""
        );
    }
}
