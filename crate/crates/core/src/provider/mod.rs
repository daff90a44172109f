//! Sources of heatmap correspondences: file-backed predictions and a
//! synthetic oracle driven by ground-truth motion.

mod file;
mod heatmap;
mod oracle;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::energy::LearnedConstraint;
use crate::error::{Error, Result};
use crate::geometry::{Image, RgbdFrame};
use crate::scalar::Real;

pub use file::{export_heatmaps, read_heatmap_file, write_heatmap_file, FileProvider, Manifest, ManifestEntry};
pub use heatmap::Heatmap;
pub use oracle::{GroundTruthFlow, SyntheticOracle, OCCLUDED_VISIBILITY, ORACLE_SIGMA_PX};

/// Name of the ordered frame pair `source -> target`.
pub fn pair_name(source: usize, target: usize) -> String {
    format!("{source}-{target}")
}

/// One predicted correspondence for a source query pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapPrediction<T: Real> {
    pub heatmap: Heatmap<T>,
    /// Predicted depth of the matched point (m).
    pub depth: T,
    pub visibility: T,
    pub query: (u32, u32),
}

impl<T: Real> HeatmapPrediction<T> {
    pub fn validate(&self) -> Result<()> {
        if !self
            .heatmap
            .window()
            .data()
            .iter()
            .all(|x| x.is_finite_real() && *x >= T::zero())
        {
            return Err(Error::invalid("heatmap values must be finite and >= 0"));
        }
        if !(self.visibility >= T::zero() && self.visibility <= T::one()) {
            return Err(Error::invalid("visibility outside [0, 1]"));
        }
        if !(self.depth > T::zero()) || !self.depth.is_finite_real() {
            return Err(Error::invalid("predicted depth must be > 0"));
        }
        Ok(())
    }
}

/// Produces heatmap correspondences from `source` pixels into `target`.
pub trait CorrespondenceProvider<T: Real>: Send + Sync {
    /// One prediction per query, in query order. `pair` names the frame pair.
    fn predict(
        &self,
        pair: &str,
        source: &RgbdFrame<T>,
        target: &RgbdFrame<T>,
        queries: &[(u32, u32)],
    ) -> Result<Vec<HeatmapPrediction<T>>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    File {
        directory: std::path::PathBuf,
    },
    SyntheticOracle {
        #[serde(default)]
        noise_px: f64,
        #[serde(default)]
        noise_depth: f64,
        #[serde(default = "default_true")]
        simulate_occlusion: bool,
        #[serde(default)]
        seed: u64,
    },
}

fn default_true() -> bool {
    true
}

impl ProviderSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProviderSpec::File { directory } => {
                if directory.as_os_str().is_empty() {
                    return Err(Error::invalid("file provider needs a directory"));
                }
            }
            ProviderSpec::SyntheticOracle {
                noise_px, noise_depth, ..
            } => {
                if !(*noise_px >= 0.0 && noise_px.is_finite() && *noise_depth >= 0.0 && noise_depth.is_finite()) {
                    return Err(Error::invalid("oracle noise must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// Elementwise product of a sigmoid map in `[0, 1]` and a softmax map summing to one.
pub fn compose_heatmap<T: Real>(h_sg: &Image<T>, h_sm: &Image<T>) -> Result<Image<T>> {
    if !h_sg.same_dims(h_sm) {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", h_sg.dims()),
            actual: format!("{:?}", h_sm.dims()),
        });
    }
    let sum = h_sm.data().iter().fold(T::zero(), |a, &b| a + b);
    if (sum - T::one()).abs() > T::lit(1e-5) {
        return Err(Error::invalid(format!(
            "softmax map sums to {}, expected 1",
            sum.to_f64_lossy()
        )));
    }
    let data = h_sg
        .data()
        .iter()
        .zip(h_sm.data())
        .map(|(a, b)| *a * *b)
        .collect();
    Image::from_vec(h_sg.width(), h_sg.height(), data)
}

/// Divides by the maximum so the peak is exactly one.
pub fn normalize_to_max_one<T: Real>(h: &Heatmap<T>) -> Result<Heatmap<T>> {
    let max = h.max_value();
    if !(max > T::zero()) {
        return Err(Error::invalid("heatmap has no positive value"));
    }
    Ok(h.map(|x| if *x == max { T::one() } else { *x / max }))
}

/// Argmax pixel of the heatmap and the target point back-projected there,
/// `None` when the target depth is missing.
pub fn peak_and_backproject<T: Real>(
    pred: &HeatmapPrediction<T>,
    target: &RgbdFrame<T>,
) -> ((usize, usize), Option<Vector3<T>>) {
    let (u, v) = pred.heatmap.argmax();
    let p = (u < target.width() && v < target.height())
        .then(|| target.point_at(u, v))
        .flatten();
    ((u, v), p)
}

/// Turns a prediction into a node constraint. `None` when the heatmap is
/// all zero or the peak has no target depth.
pub fn learned_constraint<T: Real>(
    node: usize,
    pred: &HeatmapPrediction<T>,
    target: &RgbdFrame<T>,
) -> Option<LearnedConstraint<T>> {
    let heatmap = normalize_to_max_one(&pred.heatmap).ok()?;
    let (peak, point) = peak_and_backproject(pred, target);
    Some(LearnedConstraint {
        node,
        heatmap,
        peak,
        point: point?,
        visibility: pred.visibility,
        predicted_depth: pred.depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn softmax(w: usize, h: usize, seed: u64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0f64..3.0).exp()).collect();
        let s: f64 = raw.iter().sum();
        Image::from_vec(w, h, raw.into_iter().map(|x| x / s).collect()).unwrap()
    }

    #[test]
    fn compose_identity_and_one_hot() {
        let sm = softmax(6, 4, 1);
        assert_eq!(compose_heatmap(&Image::filled(6, 4, 1.0), &sm).unwrap(), sm);
        let mut hot = Image::filled(6, 4, 0.0);
        hot.set(2, 3, 1.0);
        let sg = Image::filled(6, 4, 0.8);
        let out = compose_heatmap(&sg, &hot).unwrap();
        assert_eq!(out.data().iter().filter(|x| **x != 0.0).count(), 1);
        assert_eq!(*out.get(2, 3), 0.8);
    }

    #[test]
    fn compose_checks_inputs() {
        assert!(compose_heatmap(&Image::filled(3, 3, 1.0), &softmax(3, 4, 0)).is_err());
        assert!(compose_heatmap(&Image::filled(3, 3, 1.0), &Image::filled(3, 3, 1.0)).is_err());
    }

    #[test]
    fn normalize_examples() {
        let h = Heatmap::dense(Image::filled(4, 4, 0.2));
        assert_eq!(normalize_to_max_one(&h).unwrap(), Heatmap::dense(Image::filled(4, 4, 1.0)));
        let mut img = Image::filled(4, 4, 0.5);
        img.set(1, 1, 1.0);
        let h = Heatmap::dense(img);
        assert_eq!(normalize_to_max_one(&h).unwrap(), h);
        assert!(normalize_to_max_one(&Heatmap::<f64>::zeros(4, 4)).is_err());
    }

    fn pred(img: Image<f64>) -> HeatmapPrediction<f64> {
        HeatmapPrediction {
            heatmap: Heatmap::dense(img),
            depth: 1.0,
            visibility: 1.0,
            query: (0, 0),
        }
    }

    #[test]
    fn peak_back_projects_target_depth() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 5, 5).unwrap();
        let mut depth = Image::filled(5, 5, 1.5);
        depth.set(4, 4, 0.0);
        let frame = RgbdFrame::from_depth(depth, k).unwrap();
        let mut img = Image::filled(5, 5, 0.0);
        img.set(3, 2, 1.0);
        let ((u, v), p) = peak_and_backproject(&pred(img), &frame);
        assert_eq!((u, v), (3, 2));
        assert!((p.unwrap() - Vector3::new(0.15, 0.0, 1.5)).norm() < 1e-12);
        let mut img = Image::filled(5, 5, 0.0);
        img.set(4, 4, 1.0);
        assert_eq!(peak_and_backproject(&pred(img), &frame).1, None);
    }

    proptest! {
        #[test]
        fn compose_bounded_by_factors(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sg = Image::from_fn(7, 5, |_, _| rng.random_range(0.0..=1.0));
            let sm = softmax(7, 5, seed);
            let out = compose_heatmap(&sg, &sm).unwrap();
            for ((o, a), b) in out.data().iter().zip(sg.data()).zip(sm.data()) {
                prop_assert_eq!(*o, a * b);
                prop_assert!(*o >= 0.0 && *o <= a.min(*b));
            }
        }

        #[test]
        fn peak_invariant_under_normalization(vals in prop::collection::vec(0.0f64..2.0, 20), bump in 0usize..20) {
            let mut vals = vals;
            vals[bump] += 0.5;
            let img = Image::from_vec(5, 4, vals).unwrap();
            let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 5, 4).unwrap();
            let frame = RgbdFrame::from_depth(Image::filled(5, 4, 1.0), k).unwrap();
            let p = pred(img);
            let n = HeatmapPrediction { heatmap: normalize_to_max_one(&p.heatmap).unwrap(), ..p.clone() };
            prop_assert_eq!(peak_and_backproject(&p, &frame), peak_and_backproject(&n, &frame));
            prop_assert_eq!(n.heatmap.max_value(), 1.0);
        }
    }
}
