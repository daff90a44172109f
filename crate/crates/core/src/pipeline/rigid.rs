//! Rigid fitting of sparse matches and the displacement-based sampling
//! weights derived from it.

use nalgebra::{Matrix3, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::SparseMatch;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    /// Inlier distance (m).
    pub threshold: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Added to every residual so rigid matches keep a nonzero weight (m).
    pub floor: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 0.01,
            iterations: 200,
            seed: 0,
            floor: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacFit {
    pub transform: RigidTransform,
    pub inliers: Vec<bool>,
}

/// Least-squares rigid transform taking `src` onto `dst`.
pub fn procrustes(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::invalid("procrustes needs equally many, non-zero points"));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let h = src
        .iter()
        .zip(dst)
        .fold(Matrix3::zeros(), |acc, (s, d)| acc + (s - cs) * (d - cd).transpose());
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    })
}

fn degenerate(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> bool {
    let area = (b - a).cross(&(c - a)).norm();
    let scale = (b - a).norm().max((c - a).norm()).max(1e-12);
    area <= 1e-6 * scale * scale
}

/// RANSAC over 3-point samples, refit on the inliers of the best sample.
/// Collinear samples are redrawn.
pub fn ransac_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>], config: &RansacConfig) -> Result<RansacFit> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::invalid("source and target counts differ"));
    }
    if n < 3 {
        return Err(Error::invalid(format!("rigid fit needs >= 3 matches, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let count = |t: &RigidTransform| -> (usize, f64) {
        src.iter().zip(dst).fold((0, 0.0), |(c, e), (s, d)| {
            let r = (t.apply(s) - d).norm();
            if r <= config.threshold {
                (c + 1, e + r)
            } else {
                (c, e)
            }
        })
    };
    let mut best: Option<(usize, f64, RigidTransform)> = None;
    let mut draws = 0usize;
    let mut accepted = 0usize;
    let max_draws = config.iterations.max(1) * 50;
    while accepted < config.iterations.max(1) && draws < max_draws {
        draws += 1;
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k || degenerate(&src[i], &src[j], &src[k]) || degenerate(&dst[i], &dst[j], &dst[k]) {
            continue;
        }
        accepted += 1;
        let t = procrustes(&[src[i], src[j], src[k]], &[dst[i], dst[j], dst[k]])?;
        let (c, e) = count(&t);
        let better = match &best {
            None => true,
            Some((bc, be, _)) => c > *bc || (c == *bc && e < *be),
        };
        if better {
            best = Some((c, e, t));
        }
    }
    let Some((_, _, t)) = best else {
        return Err(Error::invalid("every minimal sample was degenerate"));
    };
    let inliers: Vec<bool> = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (t.apply(s) - d).norm() <= config.threshold)
        .collect();
    let (is, id): (Vec<_>, Vec<_>) = src
        .iter()
        .zip(dst)
        .zip(&inliers)
        .filter(|(_, ok)| **ok)
        .map(|((s, d), _)| (*s, *d))
        .unzip();
    let transform = if is.len() >= 3 { procrustes(&is, &id)? } else { t };
    let inliers = src
        .iter()
        .zip(dst)
        .map(|(s, d)| (transform.apply(s) - d).norm() <= config.threshold)
        .collect();
    Ok(RansacFit { transform, inliers })
}

/// Sampling distribution over matches proportional to their deviation from
/// the dominant rigid motion plus `config.floor`.
pub fn deformation_weights<T: Real>(matches: &[SparseMatch<T>], config: &RansacConfig) -> Result<Vec<f64>> {
    let to64 = |v: &Vector3<T>| v.map(|x| x.to_f64_lossy());
    let src: Vec<_> = matches.iter().map(|m| to64(&m.s)).collect();
    let dst: Vec<_> = matches.iter().map(|m| to64(&m.t)).collect();
    let fit = ransac_rigid(&src, &dst, config)?;
    let raw: Vec<f64> = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (fit.transform.apply(s) - d).norm() + config.floor)
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Draws `count` match indices from the weight distribution.
pub fn sample_by_weight(weights: &[f64], count: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights).map_err(|e| Error::invalid(format!("sampling weights: {e}")))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::rotation_exp;
    use proptest::prelude::*;

    fn planted(seed: u64, n: usize) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, RigidTransform) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = RigidTransform {
            rotation: rotation_exp(&Vector3::new(0.3, -0.5, 0.8)),
            translation: Vector3::new(0.1, -0.2, 0.05),
        };
        let src: Vec<_> = (0..n)
            .map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.5..1.5)))
            .collect();
        let dst = src.iter().map(|p| t.apply(p)).collect();
        (src, dst, t)
    }

    fn matches(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Vec<SparseMatch<f64>> {
        src.iter().zip(dst).map(|(s, d)| SparseMatch::new(*s, *d).unwrap()).collect()
    }

    #[test]
    fn recovers_planted_transform() {
        let (src, dst, t) = planted(1, 40);
        let fit = ransac_rigid(&src, &dst, &RansacConfig::default()).unwrap();
        assert!((fit.transform.rotation - t.rotation).norm() < 1e-9);
        assert!((fit.transform.translation - t.translation).norm() < 1e-9);
        let direct = procrustes(&src, &dst).unwrap();
        for s in &src {
            assert!((fit.transform.apply(s) - direct.apply(s)).norm() < 1e-9);
        }
        assert!(fit.inliers.iter().all(|x| *x));
    }

    #[test]
    fn rigid_set_gives_uniform_weights() {
        let (src, dst, _) = planted(2, 25);
        let w = deformation_weights(&matches(&src, &dst), &RansacConfig::default()).unwrap();
        for x in &w {
            assert!((x - 1.0 / 25.0).abs() < 1e-6);
        }
    }

    #[test]
    fn displaced_match_gets_largest_weight() {
        let (src, mut dst, _) = planted(3, 25);
        dst[7].x += 0.1;
        let w = deformation_weights(&matches(&src, &dst), &RansacConfig::default()).unwrap();
        let argmax = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 7);
    }

    #[test]
    fn rejects_too_few_and_collinear() {
        let p = vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 1.0)];
        assert!(ransac_rigid(&p, &p, &RansacConfig::default()).is_err());
        let line: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 1.0)).collect();
        assert!(ransac_rigid(&line, &line, &RansacConfig::default()).is_err());
    }

    #[test]
    fn procrustes_handles_reflection_case() {
        // planar points: the SVD can produce a reflection that must be corrected
        let src: Vec<_> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
            .iter()
            .map(|&(x, y)| Vector3::new(x, y, 0.0))
            .collect();
        let t = procrustes(&src, &src).unwrap();
        assert!((t.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_follows_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx = sample_by_weight(&[0.0, 1.0, 0.0], 20, &mut rng).unwrap();
        assert!(idx.iter().all(|i| *i == 1));
    }

    proptest! {
        #[test]
        fn weights_are_a_distribution(seed in 0u64..200, bump in 0usize..12, amount in 0.0f64..0.3) {
            let (src, mut dst, _) = planted(seed, 12);
            dst[bump].y += amount;
            let w = deformation_weights(&matches(&src, &dst), &RansacConfig { seed, ..Default::default() }).unwrap();
            prop_assert!(w.iter().all(|x| *x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
