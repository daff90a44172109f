use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

use warpfuse::energy::{EnergyWeights, IcpConfig, SparseMatch, TermKind};
use warpfuse::geometry::RgbdFrame;
use warpfuse::graph::DeformationGraph;
use warpfuse::pipeline::{
    align_pair, forward_backward_interpolate, reconstruct_sequence, AlignmentConfig, PairAlignment,
    ReconstructionConfig,
};
use warpfuse::provider::{CorrespondenceProvider, HeatmapPrediction, SyntheticOracle};
use warpfuse::solver::SolveReport;
use warpfuse::synth::{Scene, SceneKind, SceneSpec, SyntheticSequence};
use warpfuse::Result;

fn small(kind: SceneKind, frames: usize) -> SceneSpec {
    SceneSpec {
        kind,
        frames,
        width: 320,
        height: 240,
        ..Default::default()
    }
}

fn generate(spec: SceneSpec) -> SyntheticSequence {
    Scene::new(spec).unwrap().generate().unwrap()
}

#[test]
fn static_scene_tracks_identity() {
    let seq = generate(SceneSpec {
        motion_scale: 0.0,
        ..small(SceneKind::BendingCylinder, 4)
    });
    let frames = seq.frames();
    let oracle = seq.oracle(0.0, 0.0, true, 0);
    let res = reconstruct_sequence(
        &frames,
        frames[0].mask.as_ref().unwrap(),
        Some(&oracle),
        &EnergyWeights::reconstruction(),
        &ReconstructionConfig::default(),
    )
    .unwrap();
    assert_eq!(res.frame_count(), 4);
    for g in &res.graphs {
        for n in &g.nodes {
            assert!(n.translation.norm() < 1e-3, "{}", n.translation.norm());
        }
    }
}

#[test]
fn rigid_motion_has_no_arap_energy() {
    let seq = generate(SceneSpec {
        motion_scale: 0.0,
        camera_orbit_deg: 10.0,
        ..small(SceneKind::Sheet, 4)
    });
    let frames = seq.frames();
    let res = reconstruct_sequence(
        &frames,
        frames[0].mask.as_ref().unwrap(),
        None,
        &EnergyWeights {
            lambda_learned: 0.0,
            ..EnergyWeights::reconstruction()
        },
        &ReconstructionConfig {
            icp: IcpConfig {
                point_weight: 0.0,
                ..IcpConfig::default()
            },
            ..ReconstructionConfig::default()
        },
    )
    .unwrap();
    for report in &res.reports[1..] {
        let last = report.iterations.last().unwrap();
        assert!(last.per_term[TermKind::Arap.index()] < 1e-6, "{:?}", last.per_term);
    }
    for (f, g) in res.graphs.iter().enumerate() {
        for n in &g.nodes {
            let dev = (n.position + n.translation - seq.scene.warp(f, &n.position)).norm();
            assert!(dev < 1e-3, "frame {f}: node off by {dev}");
        }
    }
}

/// Passes predictions through with zero visibility.
struct Blind(SyntheticOracle);

impl CorrespondenceProvider<f64> for Blind {
    fn predict(
        &self,
        pair: &str,
        source: &RgbdFrame<f64>,
        target: &RgbdFrame<f64>,
        queries: &[(u32, u32)],
    ) -> Result<Vec<HeatmapPrediction<f64>>> {
        let mut preds = self.0.predict(pair, source, target, queries)?;
        for p in &mut preds {
            p.visibility = 0.0;
        }
        Ok(preds)
    }
}

#[test]
fn invisible_predictions_fall_back_to_data_and_regularizer() {
    let seq = generate(small(SceneKind::BendingCylinder, 3));
    let frames = seq.frames();
    let mask = frames[0].mask.clone().unwrap();
    let cfg = ReconstructionConfig::default();
    let blind = Blind(seq.oracle(0.0, 0.0, true, 0));
    let with_blind = reconstruct_sequence(&frames, &mask, Some(&blind), &EnergyWeights::reconstruction(), &cfg).unwrap();
    let no_learned = EnergyWeights {
        lambda_learned: 0.0,
        ..EnergyWeights::reconstruction()
    };
    let without = reconstruct_sequence(&frames, &mask, None, &no_learned, &cfg).unwrap();
    assert_eq!(with_blind.graphs, without.graphs);
    for r in &with_blind.reports[1..] {
        assert!(r.iterations.iter().all(|it| it.per_term[TermKind::LearnedHeatmap.index()] == 0.0));
    }
}

#[test]
fn learned_weight_without_provider_is_rejected() {
    let seq = generate(small(SceneKind::Sheet, 2));
    let frames = seq.frames();
    let err = reconstruct_sequence(
        &frames,
        frames[0].mask.as_ref().unwrap(),
        None,
        &EnergyWeights::reconstruction(),
        &ReconstructionConfig::default(),
    );
    assert!(err.is_err());
}

#[test]
fn identical_frames_align_to_identity_both_ways() {
    let seq = generate(small(SceneKind::Arm, 2));
    let f = seq.frame(0);
    let a = align_pair(f, f, &[], &EnergyWeights::alignment(), &AlignmentConfig::default()).unwrap();
    assert_eq!(a.valid_count(), a.len());
    for (s, m) in a.source_points.iter().zip(&a.matches) {
        assert!((s - m).norm() < 1e-3);
    }
}

fn sparse_matches(seq: &SyntheticSequence, target: usize, count: usize) -> Vec<SparseMatch<f64>> {
    seq.annotate(0, target, count, 11)
        .matches
        .iter()
        .map(|m| SparseMatch::new(Vector3::from(m.source_point.unwrap()), Vector3::from(m.target_point.unwrap())).unwrap())
        .collect()
}

fn dense_error(seq: &SyntheticSequence, target: usize, a: &PairAlignment<f64>) -> f64 {
    let errs: Vec<f64> = a
        .source_pixels
        .iter()
        .zip(&a.matches)
        .map(|(px, m)| (m - seq.correspondence(0, target, px.0 as usize, px.1 as usize).unwrap()).norm())
        .collect();
    errs.iter().sum::<f64>() / errs.len() as f64
}

#[test]
fn known_warp_with_sparse_matches() {
    let seq = generate(small(SceneKind::BendingCylinder, 8));
    let sparse = sparse_matches(&seq, 2, 20);
    assert_eq!(sparse.len(), 20);
    let cfg = AlignmentConfig::default();
    let full = align_pair(seq.frame(0), seq.frame(2), &sparse, &EnergyWeights::alignment(), &cfg).unwrap();
    let e_full = dense_error(&seq, 2, &full);
    assert!(e_full < 0.01, "{e_full}");

    let sparse_only_cfg = AlignmentConfig {
        icp: IcpConfig {
            plane_weight: 0.0,
            point_weight: 0.0,
            ..IcpConfig::default()
        },
        ..cfg
    };
    let sparse_only = EnergyWeights {
        lambda_photo: 0.0,
        lambda_silh: 0.0,
        ..EnergyWeights::alignment()
    };
    let ablated = align_pair(seq.frame(0), seq.frame(2), &sparse, &sparse_only, &sparse_only_cfg).unwrap();
    let e_sparse = dense_error(&seq, 2, &ablated);
    assert!(e_full <= e_sparse, "{e_full} vs {e_sparse}");
}

#[test]
fn alignment_requires_masks() {
    let seq = generate(small(SceneKind::Sheet, 2));
    let unmasked = RgbdFrame {
        mask: None,
        ..seq.frame(1).clone()
    };
    assert!(align_pair(seq.frame(0), &unmasked, &[], &EnergyWeights::alignment(), &AlignmentConfig::default()).is_err());
}

// Forward-backward interpolation on rigid warps, where inverses are exact.

fn rigid_graph(nodes: &[Vector3<f64>], rot: &Rotation3<f64>, t: &Vector3<f64>) -> DeformationGraph<f64> {
    let mut g = DeformationGraph::from_positions(nodes, 0.05, 3).unwrap();
    for n in &mut g.nodes {
        n.rotation = rot.scaled_axis();
        // R (p - g) + g + t_n = R p + t
        n.translation = t + rot * n.position - n.position;
    }
    g
}

struct RigidPair {
    fwd: PairAlignment<f64>,
    rot: Rotation3<f64>,
    t: Vector3<f64>,
    target_nodes: Vec<Vector3<f64>>,
}

fn rigid_pair(offset: Vector3<f64>) -> RigidPair {
    let rot = Rotation3::new(Vector3::new(0.05, -0.1, 0.08));
    let t = Vector3::new(0.02, -0.01, 0.03);
    let nodes: Vec<_> = (0..6).map(|i| Vector3::new(-0.1 + 0.04 * i as f64, 0.01 * (i % 2) as f64, 1.0)).collect();
    let source_points: Vec<_> = (0..40)
        .map(|i| Vector3::new(-0.1 + 0.005 * i as f64, 0.02 * ((i % 5) as f64 - 2.0), 1.0 + 0.002 * (i % 3) as f64))
        .collect();
    let graph = rigid_graph(&nodes, &rot, &t);
    let matches = source_points.iter().map(|p| rot * p + t + offset).collect();
    let target_nodes = nodes.iter().map(|p| rot * p + t).collect();
    let fwd = PairAlignment {
        source_pixels: (0..40).map(|i| (i, 0)).collect(),
        source_points,
        matches,
        valid: vec![true; 40],
        graph,
        backward: None,
        influences: 4,
        report: SolveReport {
            initial_energy: 0.0,
            final_energy: 0.0,
            iterations: Vec::new(),
        },
    };
    RigidPair {
        fwd,
        rot,
        t,
        target_nodes,
    }
}

/// Backward alignment over the target whose warp is `x -> R^T (x + shift - t)`.
fn backward(pair: &RigidPair, shift: Vector3<f64>) -> PairAlignment<f64> {
    let inv = pair.rot.inverse();
    let g = rigid_graph(&pair.target_nodes, &inv, &(inv * (shift - pair.t)));
    PairAlignment {
        graph: g,
        ..pair.fwd.clone()
    }
}

#[test]
fn exact_inverse_keeps_forward_matches() {
    let pair = rigid_pair(Vector3::zeros());
    let out = forward_backward_interpolate(&pair.fwd, &backward(&pair, Vector3::zeros()), 0.02, 20);
    assert_eq!(out.valid_count(), out.len());
    for (a, b) in out.matches.iter().zip(&pair.fwd.matches) {
        assert!((a - b).norm() < 1e-9);
    }
    assert!(out.backward.is_some());
}

#[test]
fn five_centimeter_cycle_error_is_invalidated() {
    let pair = rigid_pair(Vector3::zeros());
    let out = forward_backward_interpolate(&pair.fwd, &backward(&pair, Vector3::new(0.05, 0.0, 0.0)), 0.02, 20);
    assert_eq!(out.valid_count(), 0);
}

#[test]
fn symmetric_disagreement_lands_on_midpoint() {
    // forward overshoots by d, backward's inverse undershoots by d
    let d = Vector3::new(0.003, -0.002, 0.004);
    let pair = rigid_pair(d);
    let out = forward_backward_interpolate(&pair.fwd, &backward(&pair, d), 0.02, 20);
    assert_eq!(out.valid_count(), out.len());
    for (m, s) in out.matches.iter().zip(&pair.fwd.source_points) {
        assert!((m - (pair.rot * s + pair.t)).norm() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn invalid_in_invalid_out(flags in prop::collection::vec(any::<bool>(), 40), shift in 0.0f64..0.06) {
        let mut pair = rigid_pair(Vector3::zeros());
        pair.fwd.valid = flags.clone();
        let out = forward_backward_interpolate(&pair.fwd, &backward(&pair, Vector3::new(shift, 0.0, 0.0)), 0.02, 20);
        prop_assert_eq!(out.len(), 40);
        for (o, i) in out.valid.iter().zip(&flags) {
            prop_assert!(!*o || *i);
        }
    }
}
