//! Dataset indexing and the matching and reconstruction metrics.

mod dataset;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rasterize, RgbdFrame};
use crate::pipeline::Tracking;
use crate::scalar::Real;

pub use dataset::{
    load_dataset, pixel_point, AnnotatedMatch, DatasetIndex, FrameFiles, Occlusion, PairAnnotation, SequenceIndex,
    Split,
};

/// A match is accurate in 2D at this pixel distance or closer.
pub const ACCURACY_PX: f64 = 20.0;
/// A match is accurate in 3D at this distance (m) or closer.
pub const ACCURACY_M: f64 = 0.05;

/// A correspondence location: target pixel and target point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPoint {
    pub px: [f64; 2],
    pub point: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingEval {
    pub mean_2d_error_px: f64,
    pub mean_3d_error_m: f64,
    pub accuracy_2d: f64,
    pub accuracy_3d: f64,
    pub count: usize,
}

/// Mean 2D/3D errors and inclusive-threshold accuracies.
pub fn eval_matching(pred: &[MatchPoint], gt: &[MatchPoint]) -> Result<MatchingEval> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} ground-truth matches", gt.len()),
            actual: format!("{} predictions", pred.len()),
        });
    }
    if gt.is_empty() {
        return Err(Error::invalid("no matches to evaluate"));
    }
    let (mut e2, mut e3, mut a2, mut a3) = (0.0, 0.0, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        let d2 = (p.px[0] - g.px[0]).hypot(p.px[1] - g.px[1]);
        let d3 = (Vector3::from(p.point) - Vector3::from(g.point)).norm();
        e2 += d2;
        e3 += d3;
        a2 += (d2 <= ACCURACY_PX) as usize;
        a3 += (d3 <= ACCURACY_M) as usize;
    }
    let n = gt.len() as f64;
    Ok(MatchingEval {
        mean_2d_error_px: e2 / n,
        mean_3d_error_m: e3 / n,
        accuracy_2d: a2 as f64 / n,
        accuracy_3d: a3 as f64 / n,
        count: gt.len(),
    })
}

/// Pools several evaluations weighted by their match counts.
pub fn pool_matching(evals: &[MatchingEval]) -> Option<MatchingEval> {
    let n: usize = evals.iter().map(|e| e.count).sum();
    if n == 0 {
        return None;
    }
    let avg = |f: fn(&MatchingEval) -> f64| evals.iter().map(|e| f(e) * e.count as f64).sum::<f64>() / n as f64;
    Some(MatchingEval {
        mean_2d_error_px: avg(|e| e.mean_2d_error_px),
        mean_3d_error_m: avg(|e| e.mean_3d_error_m),
        accuracy_2d: avg(|e| e.accuracy_2d),
        accuracy_3d: avg(|e| e.accuracy_3d),
        count: n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconEval {
    pub deformation_error_cm: f64,
    pub geometry_error_cm: f64,
    /// Masked pixels with valid depth that the tracked model did not cover.
    pub uncovered_fraction: f64,
    pub correspondences: usize,
    /// Masked pixels compared against the model.
    pub pixels: usize,
    pub uncovered_pixels: usize,
}

/// Deformation and geometry error of a tracked sequence.
///
/// Deformation error: mean distance between each annotated target point and
/// the annotated source point tracked into the target frame. Geometry error:
/// mean `|depth - rendered model depth|` over masked pixels of every frame
/// with a mask, skipping pixels the model does not cover.
pub fn eval_reconstruction<T: Real>(
    tracking: &Tracking<'_, T>,
    annotations: &[PairAnnotation],
    frames: &[RgbdFrame<T>],
) -> Result<ReconEval> {
    let n = tracking.frame_count().min(frames.len());
    let mut def_sum = 0.0;
    let mut def_count = 0usize;
    for ann in annotations {
        let (s, t) = (ann.source_frame, ann.target_frame);
        if s >= n || t >= n {
            return Err(Error::invalid(format!("annotation {s}-{t} references an unprocessed frame")));
        }
        for m in &ann.matches {
            let src = match m.source_point {
                Some(p) => Some(Vector3::from(p)),
                None => pixel_point(&frames[s], m.source),
            };
            let tgt = match m.target_point {
                Some(p) => Some(Vector3::from(p)),
                None => pixel_point(&frames[t], m.target),
            };
            let (Some(src), Some(tgt)) = (src, tgt) else {
                continue;
            };
            let tracked = tracking.track_point(s, t, &src.map(T::lit)).map(|x| x.to_f64_lossy());
            def_sum += (tracked - tgt).norm();
            def_count += 1;
        }
    }
    if def_count == 0 {
        return Err(Error::invalid("no annotated correspondences with depth"));
    }

    let mut geo_sum = 0.0;
    let mut covered = 0usize;
    let mut uncovered = 0usize;
    for (frame, mesh) in frames.iter().zip(tracking.warped).take(n) {
        let Some(mask) = &frame.mask else {
            continue;
        };
        let raster = rasterize(&mesh.vertices, &mesh.triangles, &frame.intrinsics);
        for (u, v, m) in mask.enumerate() {
            let Some(d) = frame.depth_at(u, v).filter(|_| *m) else {
                continue;
            };
            let r = *raster.depth.get(u, v);
            if r > T::zero() {
                geo_sum += (d - r).abs().to_f64_lossy();
                covered += 1;
            } else {
                uncovered += 1;
            }
        }
    }
    if covered == 0 {
        return Err(Error::invalid("tracked model covers no masked pixel"));
    }
    Ok(ReconEval {
        deformation_error_cm: 100.0 * def_sum / def_count as f64,
        geometry_error_cm: 100.0 * geo_sum / covered as f64,
        uncovered_fraction: uncovered as f64 / (covered + uncovered) as f64,
        correspondences: def_count,
        pixels: covered,
        uncovered_pixels: uncovered,
    })
}

/// Combines per-sequence results: the mean of per-sequence means, or with
/// `pooled` the mean over all correspondences and pixels.
pub fn combine_reconstruction(evals: &[ReconEval], pooled: bool) -> Option<ReconEval> {
    if evals.is_empty() {
        return None;
    }
    let corr: usize = evals.iter().map(|e| e.correspondences).sum();
    let pix: usize = evals.iter().map(|e| e.pixels).sum();
    let unc: usize = evals.iter().map(|e| e.uncovered_pixels).sum();
    let (def, geo) = if pooled {
        (
            evals.iter().map(|e| e.deformation_error_cm * e.correspondences as f64).sum::<f64>() / corr as f64,
            evals.iter().map(|e| e.geometry_error_cm * e.pixels as f64).sum::<f64>() / pix as f64,
        )
    } else {
        let k = evals.len() as f64;
        (
            evals.iter().map(|e| e.deformation_error_cm).sum::<f64>() / k,
            evals.iter().map(|e| e.geometry_error_cm).sum::<f64>() / k,
        )
    };
    Some(ReconEval {
        deformation_error_cm: def,
        geometry_error_cm: geo,
        uncovered_fraction: unc as f64 / (unc + pix) as f64,
        correspondences: corr,
        pixels: pix,
        uncovered_pixels: unc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{frame_to_mesh, CameraIntrinsics, Image};
    use crate::graph::DeformationGraph;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mp(px: [f64; 2], point: [f64; 3]) -> MatchPoint {
        MatchPoint { px, point }
    }

    #[test]
    fn perfect_predictions() {
        let gt = vec![mp([1.0, 2.0], [0.0, 0.0, 1.0]), mp([5.0, 5.0], [0.1, 0.0, 1.0])];
        let e = eval_matching(&gt, &gt).unwrap();
        assert_eq!((e.mean_2d_error_px, e.mean_3d_error_m, e.accuracy_2d, e.accuracy_3d), (0.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn thresholds_are_inclusive() {
        let gt = vec![mp([0.0, 0.0], [0.0, 0.0, 1.0])];
        let e = eval_matching(&[mp([20.0, 0.0], [0.05, 0.0, 1.0])], &gt).unwrap();
        assert_eq!((e.accuracy_2d, e.accuracy_3d), (1.0, 1.0));
        let e = eval_matching(&[mp([20.001, 0.0], [0.0501, 0.0, 1.0])], &gt).unwrap();
        assert_eq!((e.accuracy_2d, e.accuracy_3d), (0.0, 0.0));
    }

    #[test]
    fn length_mismatch_and_empty() {
        let gt = vec![mp([0.0, 0.0], [0.0, 0.0, 1.0])];
        assert!(eval_matching(&[], &gt).is_err());
        assert!(eval_matching(&[], &[]).is_err());
    }

    fn random_set(seed: u64, n: usize) -> (Vec<MatchPoint>, Vec<MatchPoint>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pt = || mp(
            [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)],
            [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(0.9..1.1)],
        );
        let gt: Vec<_> = (0..n).map(|_| pt()).collect();
        let pred: Vec<_> = (0..n).map(|_| pt()).collect();
        (pred, gt)
    }

    #[test]
    fn matches_direct_recomputation() {
        let (pred, gt) = random_set(5, 100);
        let e = eval_matching(&pred, &gt).unwrap();
        let mut sum = 0.0;
        let mut acc = 0.0;
        for i in 0..100 {
            let d = ((pred[i].px[0] - gt[i].px[0]).powi(2) + (pred[i].px[1] - gt[i].px[1]).powi(2)).sqrt();
            sum += d;
            if d <= 20.0 {
                acc += 1.0;
            }
        }
        assert!((e.mean_2d_error_px - sum / 100.0).abs() < 1e-9);
        assert_eq!(e.accuracy_2d, acc / 100.0);
    }

    proptest! {
        #[test]
        fn permutation_invariant(seed in 0u64..100, rot in 0usize..30) {
            let (mut pred, mut gt) = random_set(seed, 30);
            let a = eval_matching(&pred, &gt).unwrap();
            pred.rotate_left(rot);
            gt.rotate_left(rot);
            let b = eval_matching(&pred, &gt).unwrap();
            prop_assert!((a.mean_2d_error_px - b.mean_2d_error_px).abs() < 1e-9);
            prop_assert!((a.mean_3d_error_m - b.mean_3d_error_m).abs() < 1e-12);
            prop_assert_eq!(a.accuracy_2d, b.accuracy_2d);
        }

        #[test]
        fn scaling_3d_errors_scales_mean(seed in 0u64..100, s in 0.1f64..10.0) {
            let (pred, gt) = random_set(seed, 20);
            let scaled: Vec<_> = pred
                .iter()
                .zip(&gt)
                .map(|(p, g)| {
                    let d = (Vector3::from(p.point) - Vector3::from(g.point)) * s;
                    mp(p.px, (Vector3::from(g.point) + d).into())
                })
                .collect();
            let a = eval_matching(&pred, &gt).unwrap();
            let b = eval_matching(&scaled, &gt).unwrap();
            prop_assert!((b.mean_3d_error_m - s * a.mean_3d_error_m).abs() < 1e-12 * s.max(1.0));
        }
    }

    fn plane_frame() -> RgbdFrame<f64> {
        let k = CameraIntrinsics::new(50.0, 50.0, 20.0, 15.0, 40, 30).unwrap();
        let mask = Image::from_fn(40, 30, |u, v| (5..35).contains(&u) && (5..25).contains(&v));
        RgbdFrame::new(Image::filled(40, 30, [0.5; 3]), Image::filled(40, 30, 1.0), k, Some(mask)).unwrap()
    }

    #[test]
    fn identical_model_has_zero_geometry_error() {
        let f = plane_frame();
        let mesh = frame_to_mesh(&f, 0.05).unwrap();
        let g = DeformationGraph::sample_from_mesh(&mesh, 0.1, 4).unwrap();
        let frames = vec![f.clone(), f];
        let graphs = vec![g.clone(), g];
        let warped = vec![mesh.clone(), mesh];
        let tracking = Tracking { graphs: &graphs, warped: &warped, influences: 4 };
        let ann = PairAnnotation {
            source_frame: 0,
            target_frame: 1,
            matches: vec![AnnotatedMatch { source: [10.0, 10.0], target: [10.0, 10.0], source_point: None, target_point: None }],
            occlusions: vec![],
        };
        let e = eval_reconstruction(&tracking, &[ann], &frames).unwrap();
        assert!(e.geometry_error_cm.abs() < 1e-9);
        assert!(e.deformation_error_cm.abs() < 1e-9);
        // the mesh spans pixel centers 5..=34 x 5..=24: everything is covered
        assert_eq!(e.uncovered_fraction, 0.0);
    }

    #[test]
    fn static_track_of_moving_point() {
        let f = plane_frame();
        let mesh = frame_to_mesh(&f, 0.05).unwrap();
        let g = DeformationGraph::sample_from_mesh(&mesh, 0.1, 4).unwrap();
        let frames = vec![f.clone(), f];
        let graphs = vec![g.clone(), g];
        let warped = vec![mesh.clone(), mesh];
        let tracking = Tracking { graphs: &graphs, warped: &warped, influences: 4 };
        let ann = PairAnnotation {
            source_frame: 0,
            target_frame: 1,
            matches: vec![AnnotatedMatch {
                source: [10.0, 10.0],
                target: [10.0, 10.0],
                source_point: Some([0.0, 0.0, 1.0]),
                target_point: Some([0.1, 0.0, 1.0]),
            }],
            occlusions: vec![],
        };
        let e = eval_reconstruction(&tracking, std::slice::from_ref(&ann), &frames).unwrap();
        assert!((e.deformation_error_cm - 10.0).abs() < 1e-9);
        let empty = PairAnnotation { matches: vec![], ..ann };
        assert!(eval_reconstruction(&tracking, &[empty], &frames).is_err());
    }

    #[test]
    fn combine_modes() {
        let a = ReconEval { deformation_error_cm: 1.0, geometry_error_cm: 1.0, uncovered_fraction: 0.0, correspondences: 1, pixels: 1, uncovered_pixels: 0 };
        let b = ReconEval { deformation_error_cm: 4.0, geometry_error_cm: 2.0, uncovered_fraction: 0.0, correspondences: 3, pixels: 1, uncovered_pixels: 0 };
        assert_eq!(combine_reconstruction(&[a, b], false).unwrap().deformation_error_cm, 2.5);
        assert_eq!(combine_reconstruction(&[a, b], true).unwrap().deformation_error_cm, 3.25);
        assert!(combine_reconstruction(&[], true).is_none());
    }
}
