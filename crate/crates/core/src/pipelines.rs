//! Whole-image counting: tile, classify, route through the PRM, count, sum.
//!
//! Patches are scored in parallel; per-patch results are gathered and summed
//! in patch-index order so the totals do not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{tile_with_id, Patch, PixelGrid};
use crate::predict::{CountPredictor, Prediction, SinglePassPredictor};
use crate::prm::{route, DensityClass, RescaleOp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchResult {
    pub patch_index: usize,
    pub assigned_class: DensityClass,
    /// Count from the first pass of a shared network; CC-2P only.
    pub first_pass_count: Option<f64>,
    /// Counts of the PRM-routed patches, in routing order.
    pub routed_counts: Vec<f64>,
    pub final_count: f64,
    pub op: RescaleOp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image_id: String,
    pub patch_results: Vec<PatchResult>,
    pub total_count: f64,
    /// Patches per class, indexed NC, LC, MC, HC.
    pub class_histogram: [usize; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    CcMod,
    Cc2p,
    Cc1p,
    NoPrm,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [
        Pipeline::CcMod,
        Pipeline::Cc2p,
        Pipeline::Cc1p,
        Pipeline::NoPrm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::CcMod => "ccmod",
            Pipeline::Cc2p => "cc2p",
            Pipeline::Cc1p => "cc1p",
            Pipeline::NoPrm => "noprm",
        }
    }

    /// Runs this pipeline. `classifier` is consulted only by CC-Mod and
    /// defaults to `counter` when absent.
    pub fn run(
        self,
        image_id: &str,
        image: &PixelGrid,
        counter: &dyn CountPredictor,
        classifier: Option<&dyn CountPredictor>,
    ) -> Result<ImageResult> {
        match self {
            Pipeline::CcMod => run_ccmod(image_id, image, classifier.unwrap_or(counter), counter),
            Pipeline::Cc2p => run_cc2p(image_id, image, counter),
            Pipeline::Cc1p => run_cc1p(image_id, image, counter),
            Pipeline::NoPrm => run_no_prm(image_id, image, counter),
        }
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Pipeline {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ccmod" | "cc-mod" => Ok(Pipeline::CcMod),
            "cc2p" | "cc-2p" => Ok(Pipeline::Cc2p),
            "cc1p" | "cc-1p" => Ok(Pipeline::Cc1p),
            "noprm" | "no-prm" => Ok(Pipeline::NoPrm),
            other => Err(format!("unknown pipeline `{other}`")),
        }
    }
}

fn run_patches<F>(image_id: &str, image: &PixelGrid, per_patch: F) -> Result<ImageResult>
where
    F: Fn(usize, &Patch) -> Result<PatchResult> + Sync,
{
    let tiles = tile_with_id(image_id, image)?;
    let patch_results = tiles
        .par_iter()
        .enumerate()
        .map(|(i, p)| per_patch(i, p).map_err(|e| Error::at_patch(i, e)))
        .collect::<Result<Vec<_>>>()?;
    let mut total_count = 0.0;
    let mut class_histogram = [0; 4];
    for r in &patch_results {
        total_count += r.final_count;
        class_histogram[r.assigned_class.index()] += 1;
    }
    Ok(ImageResult {
        image_id: image_id.to_owned(),
        patch_results,
        total_count,
        class_histogram,
    })
}

fn class_from_scores(scores: [f64; 4]) -> DensityClass {
    Prediction { scores, count: 0.0 }.class()
}

/// Separate classifier and regressor: the regressor counts each routed patch
/// and the patch estimate is their sum.
pub fn run_ccmod(
    image_id: &str,
    image: &PixelGrid,
    classifier: &(impl CountPredictor + ?Sized),
    regressor: &(impl CountPredictor + ?Sized),
) -> Result<ImageResult> {
    run_patches(image_id, image, |i, p| {
        let class = classifier.predict(p)?.class();
        let routed = route(p, class);
        let routed_counts = routed
            .patches
            .iter()
            .map(|q| Ok(regressor.predict(q)?.count))
            .collect::<Result<Vec<f64>>>()?;
        Ok(PatchResult {
            patch_index: i,
            assigned_class: class,
            first_pass_count: None,
            final_count: routed_counts.iter().sum(),
            routed_counts,
            op: routed.op,
        })
    })
}

/// One dual-head network used twice. The first pass classifies and counts;
/// LC and HC patches are rescaled and counted again, and the two estimates
/// are averaged. MC keeps the first-pass count, NC is dropped.
pub fn run_cc2p(
    image_id: &str,
    image: &PixelGrid,
    base: &(impl CountPredictor + ?Sized),
) -> Result<ImageResult> {
    run_patches(image_id, image, |i, p| {
        let first = base.predict(p)?;
        let class = first.class();
        let fp = first.count;
        let (routed_counts, op, final_count) = match class {
            DensityClass::NoCrowd => (Vec::new(), RescaleOp::Discard, 0.0),
            DensityClass::MediumCrowd => (Vec::new(), RescaleOp::Iso, fp),
            DensityClass::LowCrowd | DensityClass::HighCrowd => {
                let routed = route(p, class);
                let counts = routed
                    .patches
                    .iter()
                    .map(|q| Ok(base.predict(q)?.count))
                    .collect::<Result<Vec<f64>>>()?;
                let second: f64 = counts.iter().sum();
                (counts, routed.op, (fp + second) / 2.0)
            }
        };
        Ok(PatchResult {
            patch_index: i,
            assigned_class: class,
            first_pass_count: Some(fp),
            routed_counts,
            final_count,
            op,
        })
    })
}

/// Single network with a mid-level classification branch: the branch picks
/// the route and the count path scores every routed patch.
pub fn run_cc1p(
    image_id: &str,
    image: &PixelGrid,
    net: &(impl SinglePassPredictor + ?Sized),
) -> Result<ImageResult> {
    run_patches(image_id, image, |i, p| {
        let class = class_from_scores(net.classify(p)?);
        let routed = route(p, class);
        let routed_counts = routed
            .patches
            .iter()
            .map(|q| net.count_routed(p, q))
            .collect::<Result<Vec<f64>>>()?;
        Ok(PatchResult {
            patch_index: i,
            assigned_class: class,
            first_pass_count: None,
            final_count: routed_counts.iter().sum(),
            routed_counts,
            op: routed.op,
        })
    })
}

/// Ablation baseline: every patch is counted as-is. Patches are reported as
/// MC with the identity route.
pub fn run_no_prm(
    image_id: &str,
    image: &PixelGrid,
    regressor: &(impl CountPredictor + ?Sized),
) -> Result<ImageResult> {
    run_patches(image_id, image, |i, p| {
        let c = regressor.predict(p)?.count;
        Ok(PatchResult {
            patch_index: i,
            assigned_class: DensityClass::MediumCrowd,
            first_pass_count: None,
            routed_counts: vec![c],
            final_count: c,
            op: RescaleOp::Iso,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{render_synthetic, CountLaw, Placement, SyntheticSpec};
    use crate::geometry::{Rect, Scale};
    use crate::labeling::compute_cmax;
    use crate::predict::{FixedPredictor, OraclePredictor};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn blank(h: usize, w: usize) -> PixelGrid {
        PixelGrid::filled(h, w, 1, 0.5)
    }

    #[test]
    fn all_nc_totals_zero() {
        let nc = FixedPredictor {
            class: DensityClass::NoCrowd,
            count: 61.0,
        };
        for pl in Pipeline::ALL.into_iter().filter(|p| *p != Pipeline::NoPrm) {
            let r = pl.run("x", &blank(500, 700), &nc, None).unwrap();
            assert_eq!(r.total_count, 0.0, "{pl}");
            assert_eq!(r.class_histogram, [12, 0, 0, 0]);
            for pr in &r.patch_results {
                assert!(pr.routed_counts.is_empty());
                assert_eq!(pr.op, RescaleOp::Discard);
            }
        }
    }

    #[test]
    fn oracle_pipelines_recover_ground_truth() {
        let spec = SyntheticSpec {
            width: 700,
            height: 500,
            count: CountLaw::Fixed { count: 123 },
            placement: Placement::Clustered { clusters: 4 },
            ..SyntheticSpec::default()
        };
        let imgs = render_synthetic(&spec, 2, "o").unwrap();
        let profile = compute_cmax(&imgs, "train").unwrap();
        let oracle = OraclePredictor::with_images(profile, &imgs);
        for img in &imgs {
            for pl in Pipeline::ALL {
                let r = pl.run(&img.id, &img.image, &oracle, Some(&oracle)).unwrap();
                assert_eq!(r.total_count, 123.0, "{pl}");
            }
        }
    }

    #[test]
    fn medium_patch_passes_through() {
        let mc = FixedPredictor {
            class: DensityClass::MediumCrowd,
            count: 40.0,
        };
        let r = run_ccmod("m", &blank(224, 224), &mc, &mc).unwrap();
        let pr = &r.patch_results[0];
        assert_eq!(pr.final_count, 40.0);
        assert_eq!(pr.op, RescaleOp::Iso);
        assert_eq!(pr.routed_counts, vec![40.0]);
        let r = run_cc2p("m", &blank(224, 224), &mc).unwrap();
        assert_eq!(r.patch_results[0].final_count, 40.0);
        assert!(r.patch_results[0].routed_counts.is_empty());
    }

    /// Class and count keyed on the patch's provenance, so first and second
    /// passes can be told apart.
    struct Scripted {
        class: DensityClass,
        calls: AtomicUsize,
    }

    impl CountPredictor for Scripted {
        fn predict(&self, p: &Patch) -> Result<Prediction> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let count = match (p.scale(), p.source()) {
                (Scale::One, _) if self.class == DensityClass::HighCrowd => 100.0,
                (Scale::One, _) => 10.0,
                (Scale::Half, _) => 20.0,
                (Scale::Two, r) if r == Rect::new(0, 0, 112, 112) => 30.0,
                (Scale::Two, r) if r == Rect::new(112, 0, 112, 112) => 30.0,
                (Scale::Two, r) if r == Rect::new(0, 112, 112, 112) => 20.0,
                (Scale::Two, _) => 24.0,
            };
            Ok(Prediction::one_hot(self.class, count))
        }
    }

    fn scripted(class: DensityClass) -> Scripted {
        Scripted {
            class,
            calls: AtomicUsize::new(0),
        }
    }

    #[test]
    fn two_pass_averaging() {
        let lc = scripted(DensityClass::LowCrowd);
        let r = run_cc2p("s", &blank(224, 224), &lc).unwrap();
        let pr = &r.patch_results[0];
        assert_eq!(pr.first_pass_count, Some(10.0));
        assert_eq!(pr.routed_counts, vec![20.0]);
        assert_eq!(pr.final_count, 15.0);

        let hc = scripted(DensityClass::HighCrowd);
        let r = run_cc2p("s", &blank(224, 224), &hc).unwrap();
        let pr = &r.patch_results[0];
        assert_eq!(pr.routed_counts, vec![30.0, 30.0, 20.0, 24.0]);
        assert_eq!(pr.final_count, 102.0);
        assert_eq!(pr.op, RescaleOp::UpScale);

        let mc = scripted(DensityClass::MediumCrowd);
        let r = run_cc2p("s", &blank(224, 224), &mc).unwrap();
        assert_eq!(r.patch_results[0].final_count, 10.0);
        assert_eq!(mc.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn single_pass_invocations() {
        let nc = scripted(DensityClass::NoCrowd);
        let r = run_cc1p("s", &blank(224, 224), &nc).unwrap();
        assert_eq!(r.patch_results[0].final_count, 0.0);
        assert_eq!(nc.calls.load(Ordering::SeqCst), 1, "only the branch ran");

        let mc = scripted(DensityClass::MediumCrowd);
        run_cc1p("s", &blank(224, 224), &mc).unwrap();
        assert_eq!(mc.calls.load(Ordering::SeqCst), 2);

        let hc = FixedPredictor {
            class: DensityClass::HighCrowd,
            count: 10.0,
        };
        let r = run_cc1p("s", &blank(224, 224), &hc).unwrap();
        assert_eq!(r.patch_results[0].final_count, 40.0);
    }

    #[test]
    fn discard_beats_overestimating_baseline() {
        let spec = SyntheticSpec {
            width: 672,
            height: 448,
            count: CountLaw::Cycle {
                counts: vec![0, 0, 0, 0, 8, 0],
            },
            placement: Placement::PerTile,
            ..SyntheticSpec::default()
        };
        let imgs = render_synthetic(&spec, 1, "b").unwrap();
        let profile = compute_cmax(&imgs, "train").unwrap();
        let oracle = OraclePredictor::with_images(profile, &imgs);
        let five = FixedPredictor {
            class: DensityClass::MediumCrowd,
            count: 5.0,
        };
        let img = &imgs[0];
        let with = run_ccmod(&img.id, &img.image, &oracle, &five).unwrap();
        let without = run_no_prm(&img.id, &img.image, &five).unwrap();
        assert_eq!(without.total_count, 30.0);
        assert!(without.total_count > with.total_count);

        let mc_everywhere = FixedPredictor {
            class: DensityClass::MediumCrowd,
            count: 3.5,
        };
        let a = run_ccmod("b", &img.image, &mc_everywhere, &mc_everywhere).unwrap();
        let b = run_no_prm("b", &img.image, &mc_everywhere).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_image_zero_regressor() {
        let zero = FixedPredictor {
            class: DensityClass::MediumCrowd,
            count: 0.0,
        };
        let r = run_no_prm("z", &PixelGrid::zeros(300, 300, 1), &zero).unwrap();
        assert_eq!(r.total_count, 0.0);
    }

    #[test]
    fn errors_carry_patch_index() {
        let spec = SyntheticSpec {
            width: 448,
            height: 224,
            count: CountLaw::Fixed { count: 2 },
            ..SyntheticSpec::default()
        };
        let imgs = render_synthetic(&spec, 1, "e").unwrap();
        let oracle = OraclePredictor::new(compute_cmax(&imgs, "train").unwrap());
        match run_no_prm("unknown", &imgs[0].image, &oracle) {
            Err(Error::AtPatch { index: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scheduling_does_not_change_results() {
        let spec = SyntheticSpec {
            width: 900,
            height: 700,
            count: CountLaw::Fixed { count: 400 },
            ..SyntheticSpec::default()
        };
        let imgs = render_synthetic(&spec, 1, "d").unwrap();
        let net = crate::predict::ToyNet::new(Default::default(), 3).unwrap();
        let img = &imgs[0];
        let a = run_cc2p(&img.id, &img.image, &net).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| run_cc2p(&img.id, &img.image, &net).unwrap());
        assert_eq!(a, b);
        let sum: f64 = a.patch_results.iter().map(|r| r.final_count).sum();
        assert!((a.total_count - sum).abs() < 1e-6);
    }
}
