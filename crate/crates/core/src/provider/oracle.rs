use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{CorrespondenceProvider, Heatmap, HeatmapPrediction};
use crate::error::{Error, Result};
use crate::geometry::{Image, RgbdFrame};
use crate::scalar::Real;

/// Standard deviation of the oracle Gaussian heatmap (px).
pub const ORACLE_SIGMA_PX: f64 = 7.0;
/// Visibility reported for points hidden in the target frame.
pub const OCCLUDED_VISIBILITY: f64 = 0.1;
/// The Gaussian is stored out to this many standard deviations.
const WINDOW_SIGMAS: f64 = 4.0;
/// Depth agreement (m) between a moved point and the target depth map for
/// the point to count as visible.
const VISIBLE_DEPTH_TOLERANCE: f64 = 0.01;

/// Where each source pixel moved to, as a target-camera point (m).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruthFlow {
    pub points: HashMap<(u32, u32), Vector3<f64>>,
}

impl GroundTruthFlow {
    pub fn get(&self, u: u32, v: u32) -> Option<Vector3<f64>> {
        self.points.get(&(u, v)).copied()
    }
}

/// Stand-in for a trained network: Gaussian heatmaps centered on the
/// ground-truth target pixel, with optional pixel and depth noise.
#[derive(Clone, Debug, Default)]
pub struct SyntheticOracle {
    flows: HashMap<String, GroundTruthFlow>,
    noise_px: f64,
    noise_depth: f64,
    simulate_occlusion: bool,
    seed: u64,
}

impl SyntheticOracle {
    pub fn new(noise_px: f64, noise_depth: f64, simulate_occlusion: bool, seed: u64) -> Self {
        Self {
            flows: HashMap::new(),
            noise_px,
            noise_depth,
            simulate_occlusion,
            seed,
        }
    }

    pub fn insert_flow(&mut self, pair: impl Into<String>, flow: GroundTruthFlow) {
        self.flows.insert(pair.into(), flow);
    }

    pub fn has_pair(&self, pair: &str) -> bool {
        self.flows.contains_key(pair)
    }

    fn rng(&self, pair: &str, query: (u32, u32)) -> ChaCha8Rng {
        // FNV-1a over the pair name keeps the stream stable across runs and platforms
        let pair_hash = pair
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ pair_hash);
        rng.set_stream(((query.1 as u64) << 32) | query.0 as u64);
        rng
    }

    fn predict_one<T: Real>(
        &self,
        flow: &GroundTruthFlow,
        pair: &str,
        source: &RgbdFrame<T>,
        target: &RgbdFrame<T>,
        query: (u32, u32),
    ) -> HeatmapPrediction<T> {
        let (w, h) = (target.width(), target.height());
        let mut rng = self.rng(pair, query);
        let source_depth = source
            .depth_at(query.0 as usize, query.1 as usize)
            .unwrap_or(T::one());
        let missing = |depth: T| HeatmapPrediction {
            heatmap: Heatmap::zeros(w, h),
            depth,
            visibility: T::zero(),
            query,
        };
        let Some(x) = flow.get(query.0, query.1) else {
            return missing(source_depth);
        };
        let k = &target.intrinsics;
        if !(x.z > 0.0) {
            return missing(source_depth);
        }
        let mut center = Vector2::new(
            k.fx.to_f64_lossy() * x.x / x.z + k.cx.to_f64_lossy(),
            k.fy.to_f64_lossy() * x.y / x.z + k.cy.to_f64_lossy(),
        );
        if self.noise_px > 0.0 {
            let n = Normal::new(0.0, self.noise_px).expect("valid sigma");
            center += Vector2::new(n.sample(&mut rng), n.sample(&mut rng));
        }
        let mut depth = x.z;
        if self.noise_depth > 0.0 {
            depth += Normal::new(0.0, self.noise_depth).expect("valid sigma").sample(&mut rng);
        }
        let depth = T::lit(depth.max(1e-3));
        let inside = center.x >= -0.5 && center.y >= -0.5 && center.x < w as f64 - 0.5 && center.y < h as f64 - 0.5;
        if !inside {
            return missing(depth);
        }
        let (pu, pv) = (center.x.round() as usize, center.y.round() as usize);
        let visible = !self.simulate_occlusion
            || target
                .depth_at(pu, pv)
                .is_some_and(|d| (d.to_f64_lossy() - x.z).abs() <= VISIBLE_DEPTH_TOLERANCE);
        HeatmapPrediction {
            heatmap: gaussian_window(center, ORACLE_SIGMA_PX, w, h),
            depth,
            visibility: T::lit(if visible { 1.0 } else { OCCLUDED_VISIBILITY }),
            query,
        }
    }
}

/// Peak-one Gaussian around `center`, zero beyond four standard deviations.
fn gaussian_window<T: Real>(center: Vector2<f64>, sigma: f64, w: usize, h: usize) -> Heatmap<T> {
    let r = (WINDOW_SIGMAS * sigma).ceil();
    let u0 = (center.x - r).floor().max(0.0) as usize;
    let v0 = (center.y - r).floor().max(0.0) as usize;
    let u1 = ((center.x + r).ceil() as usize).min(w - 1);
    let v1 = ((center.y + r).ceil() as usize).min(h - 1);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let window = Image::from_fn(u1 - u0 + 1, v1 - v0 + 1, |u, v| {
        let du = (u0 + u) as f64 - center.x;
        let dv = (v0 + v) as f64 - center.y;
        let d2 = du * du + dv * dv;
        if d2 <= r * r {
            T::lit((-d2 * inv).exp())
        } else {
            T::zero()
        }
    });
    Heatmap::windowed(w, h, (u0, v0), window).expect("window clipped to image")
}

impl<T: Real> CorrespondenceProvider<T> for SyntheticOracle {
    fn predict(
        &self,
        pair: &str,
        source: &RgbdFrame<T>,
        target: &RgbdFrame<T>,
        queries: &[(u32, u32)],
    ) -> Result<Vec<HeatmapPrediction<T>>> {
        let flow = self.flows.get(pair).ok_or_else(|| Error::Lookup {
            pair: pair.to_string(),
            u: queries.first().map_or(0, |q| q.0),
            v: queries.first().map_or(0, |q| q.1),
        })?;
        use rayon::prelude::*;
        Ok(queries
            .par_iter()
            .map(|&q| self.predict_one(flow, pair, source, target, q))
            .collect())
    }
}
