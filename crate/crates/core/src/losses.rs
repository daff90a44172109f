//! Training losses of the correspondence network: heatmap, depth and
//! visibility terms and their weighted sum.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Image;
use crate::scalar::Real;

/// Standard deviation of the ground-truth Gaussian (px).
pub const GAUSSIAN_SIGMA_PX: f64 = 7.0;
/// Extra heatmap weight at the ground-truth pixel: `w_H = 1 + 10 G`.
pub const HEATMAP_PEAK_WEIGHT: f64 = 10.0;
pub const LAMBDA_NLL: f64 = 10.0;
pub const LAMBDA_DEPTH: f64 = 100.0;
pub const LAMBDA_VISIBILITY: f64 = 1.0;
/// Probabilities are clamped to `[ε, 1 - ε]` before taking logs.
pub const PROB_EPSILON: f64 = 1e-7;

/// Supervision for one query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSample {
    pub gt_pixel: [f64; 2],
    pub gt_depth: f64,
    pub visible: bool,
}

/// Raw network outputs for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput<T: Real> {
    pub h_sg: Image<T>,
    pub h_sm: Image<T>,
    pub depth: Image<T>,
    pub visibility: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub heatmap: f64,
    pub depth: f64,
    pub visibility: f64,
    pub total: f64,
}

/// `exp(-|x - x_gt|² / 2σ²)` with σ = 7 px, one at the ground-truth pixel.
pub fn gaussian_gt_heatmap<T: Real>(gt: &Vector2<T>, width: usize, height: usize) -> Result<Image<T>> {
    let max_u = T::from_usize_lossy(width.saturating_sub(1));
    let max_v = T::from_usize_lossy(height.saturating_sub(1));
    if width == 0 || height == 0 || !(gt.x >= T::zero() && gt.y >= T::zero() && gt.x <= max_u && gt.y <= max_v) {
        return Err(Error::OutOfBounds {
            u: gt.x.to_f64_lossy(),
            v: gt.y.to_f64_lossy(),
            width,
            height,
        });
    }
    let inv = T::one() / T::lit(2.0 * GAUSSIAN_SIGMA_PX * GAUSSIAN_SIGMA_PX);
    Ok(Image::from_fn(width, height, |u, v| {
        let du = T::from_usize_lossy(u) - gt.x;
        let dv = T::from_usize_lossy(v) - gt.y;
        (-(du * du + dv * dv) * inv).exp()
    }))
}

/// Heatmap pixel weight `1 + 10 G(x)`.
pub fn heatmap_weight<T: Real>(g: T) -> T {
    T::one() + T::lit(HEATMAP_PEAK_WEIGHT) * g
}

fn clamp_prob<T: Real>(p: T) -> T {
    p.clamp(T::lit(PROB_EPSILON), T::one() - T::lit(PROB_EPSILON))
}

fn bce<T: Real>(p: T, target: T) -> T {
    let p = clamp_prob(p);
    -(target * p.ln() + (T::one() - target) * (T::one() - p).ln())
}

fn check_dims<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.dims()),
            actual: format!("{:?}", b.dims()),
        })
    }
}

/// `Σ w_H BCE(h_sg, gt) + 10 Σ w_H (-gt log h_sm)`.
pub fn heatmap_loss<T: Real>(h_sg: &Image<T>, h_sm: &Image<T>, gt: &Image<T>) -> Result<T> {
    check_dims(gt, h_sg)?;
    check_dims(gt, h_sm)?;
    let mut bce_sum = T::zero();
    let mut nll_sum = T::zero();
    for ((sg, sm), g) in h_sg.data().iter().zip(h_sm.data()).zip(gt.data()) {
        let w = heatmap_weight(*g);
        bce_sum += w * bce(*sg, *g);
        nll_sum -= w * *g * clamp_prob(*sm).ln();
    }
    Ok(bce_sum + T::lit(LAMBDA_NLL) * nll_sum)
}

/// `Σ G(x) (pred(x) - gt_depth)²`.
pub fn depth_loss<T: Real>(pred: &Image<T>, gt_depth: T, gt_pixel: &Vector2<T>) -> Result<T> {
    let g = gaussian_gt_heatmap(gt_pixel, pred.width(), pred.height())?;
    Ok(pred
        .data()
        .iter()
        .zip(g.data())
        .fold(T::zero(), |acc, (p, w)| acc + *w * (*p - gt_depth) * (*p - gt_depth)))
}

/// Binary cross entropy of the visibility score against its label.
pub fn visibility_loss<T: Real>(pred: T, visible: bool) -> T {
    bce(pred, if visible { T::one() } else { T::zero() })
}

/// `L_H + 100 L_D + L_V`.
pub fn total_loss<T: Real>(heatmap: T, depth: T, visibility: T) -> T {
    heatmap + T::lit(LAMBDA_DEPTH) * depth + T::lit(LAMBDA_VISIBILITY) * visibility
}

/// All loss terms for one query. The heatmap and depth terms are only
/// supervised for visible samples.
pub fn evaluate_losses<T: Real>(out: &NetworkOutput<T>, gt: &GroundTruthSample) -> Result<LossBreakdown> {
    check_dims(&out.h_sg, &out.h_sm)?;
    check_dims(&out.h_sg, &out.depth)?;
    let (lh, ld) = if gt.visible {
        let px = Vector2::new(T::lit(gt.gt_pixel[0]), T::lit(gt.gt_pixel[1]));
        let g = gaussian_gt_heatmap(&px, out.h_sg.width(), out.h_sg.height())?;
        (
            heatmap_loss(&out.h_sg, &out.h_sm, &g)?,
            depth_loss(&out.depth, T::lit(gt.gt_depth), &px)?,
        )
    } else {
        (T::zero(), T::zero())
    };
    let lv = visibility_loss(out.visibility, gt.visible);
    Ok(LossBreakdown {
        heatmap: lh.to_f64_lossy(),
        depth: ld.to_f64_lossy(),
        visibility: lv.to_f64_lossy(),
        total: total_loss(lh, ld, lv).to_f64_lossy(),
    })
}
