//! Residual terms of the tracking and alignment energies.
//!
//! Every term produces [`ResidualBlock`]s with the term weight `√λ` already
//! applied, so the total energy is the plain sum of squared residuals.

mod arap;
mod icp;
mod learned;
mod photometric;
mod silhouette;
mod sparse;

use std::fmt;

use nalgebra::{Matrix3x6, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DeformationGraph, WarpCache};
use crate::scalar::Real;

pub use arap::ArapTerm;
pub use icp::{DenseIcpTerm, IcpConfig};
pub use learned::{filter_learned, LearnedConstraint, LearnedTerm, DEPTH_GAP_MAX, VISIBILITY_MIN};
pub use photometric::PhotometricTerm;
pub use silhouette::SilhouetteTerm;
pub use sparse::{SparseMatch, SparseTerm};

/// Residual families, in stacking order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TermKind {
    IcpPlane,
    IcpPoint,
    Arap,
    LearnedHeatmap,
    LearnedPoint,
    Sparse,
    Silhouette,
    Photometric,
}

impl TermKind {
    pub const ALL: [TermKind; 8] = [
        TermKind::IcpPlane,
        TermKind::IcpPoint,
        TermKind::Arap,
        TermKind::LearnedHeatmap,
        TermKind::LearnedPoint,
        TermKind::Sparse,
        TermKind::Silhouette,
        TermKind::Photometric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TermKind::IcpPlane => "icp_plane",
            TermKind::IcpPoint => "icp_point",
            TermKind::Arap => "arap",
            TermKind::LearnedHeatmap => "learned_heatmap",
            TermKind::LearnedPoint => "learned_point",
            TermKind::Sparse => "sparse",
            TermKind::Silhouette => "silhouette",
            TermKind::Photometric => "photometric",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TermKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Term weights. Defaults differ between sequence tracking and pair alignment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyWeights {
    pub lambda_learned: f64,
    pub lambda_reg: f64,
    pub lambda_point: f64,
    pub lambda_photo: f64,
    pub lambda_silh: f64,
    pub lambda_sparse: f64,
}

impl EnergyWeights {
    /// Sequence tracking: data + learned + ARAP.
    pub const fn reconstruction() -> Self {
        Self {
            lambda_learned: 1.0,
            lambda_reg: 1.0,
            lambda_point: 10.0,
            lambda_photo: 0.0,
            lambda_silh: 0.0,
            lambda_sparse: 0.0,
        }
    }

    /// Frame-pair alignment: data + photometric + silhouette + sparse + ARAP.
    pub const fn alignment() -> Self {
        Self {
            lambda_learned: 0.0,
            lambda_reg: 10.0,
            lambda_point: 10.0,
            lambda_photo: 0.001,
            lambda_silh: 0.0001,
            lambda_sparse: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_learned,
            self.lambda_reg,
            self.lambda_point,
            self.lambda_photo,
            self.lambda_silh,
            self.lambda_sparse,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("energy weights must be finite and >= 0"));
        }
        Ok(())
    }
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self::reconstruction()
    }
}

/// One stacked residual of dimension 1..=3 with its sparse Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T: Real> {
    pub kind: TermKind,
    /// Index of the originating element within its term (vertex, edge, match...).
    pub source: usize,
    pub dim: usize,
    /// Weighted residual; entries past `dim` are zero.
    pub residual: Vector3<T>,
    /// Per touched node, `d residual / d [θ, t]`; rows past `dim` are zero.
    pub jacobian: Vec<(usize, Matrix3x6<T>)>,
    /// The `√λ` already folded into residual and Jacobian.
    pub weight: T,
    /// Association identity (e.g. the target pixel of an ICP match).
    pub tag: u64,
    /// Continuous pixel where an image was sampled, if any.
    pub sample_at: Option<Vector2<T>>,
}

impl<T: Real> ResidualBlock<T> {
    pub fn squared_norm(&self) -> T {
        self.residual.norm_squared()
    }

    pub fn residual_slice(&self) -> &[T] {
        &self.residual.as_slice()[..self.dim]
    }
}

/// A family of residuals evaluated at the current graph parameters.
pub trait ResidualTerm<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// False when the term weight is zero or it has nothing to constrain.
    fn is_active(&self) -> bool;

    fn evaluate(&self, graph: &DeformationGraph<T>, cache: &WarpCache<T>) -> Vec<ResidualBlock<T>>;
}

/// The active terms of `E_total`, stacked into one residual field.
pub struct EnergySpec<'a, T: Real> {
    terms: Vec<Box<dyn ResidualTerm<T> + 'a>>,
}

impl<'a, T: Real> fmt::Debug for EnergySpec<'a, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.terms.iter().map(|t| t.name()))
            .finish()
    }
}

/// Stacked residuals at one parameter vector.
#[derive(Clone, Debug)]
pub struct Evaluation<T: Real> {
    pub blocks: Vec<ResidualBlock<T>>,
}

impl<T: Real> Evaluation<T> {
    pub fn total(&self) -> T {
        self.blocks
            .iter()
            .fold(T::zero(), |acc, b| acc + b.squared_norm())
    }

    /// Energy per [`TermKind`], indexed by `TermKind::index`.
    pub fn per_kind(&self) -> [T; 8] {
        let mut out = [T::zero(); 8];
        for b in &self.blocks {
            out[b.kind.index()] += b.squared_norm();
        }
        out
    }

    pub fn row_count(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.residual.iter().all(|x| x.is_finite_real()))
    }
}

impl<'a, T: Real> EnergySpec<'a, T> {
    /// Keeps the active terms; fails if none remain.
    pub fn assemble(terms: Vec<Box<dyn ResidualTerm<T> + 'a>>) -> Result<Self> {
        let terms: Vec<_> = terms.into_iter().filter(|t| t.is_active()).collect();
        if terms.is_empty() {
            return Err(Error::NoActiveTerms);
        }
        Ok(Self { terms })
    }

    pub fn term_names(&self) -> Vec<&'static str> {
        self.terms.iter().map(|t| t.name()).collect()
    }

    /// Evaluates all terms; blocks are ordered by term kind, then source index.
    pub fn evaluate(&self, graph: &DeformationGraph<T>) -> Evaluation<T> {
        let cache = graph.cache();
        let mut blocks: Vec<ResidualBlock<T>> = self
            .terms
            .par_iter()
            .map(|t| t.evaluate(graph, &cache))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        blocks.sort_by_key(|b| (b.kind, b.source));
        Evaluation { blocks }
    }

    pub fn energy(&self, graph: &DeformationGraph<T>) -> T {
        self.evaluate(graph).total()
    }
}

/// Residual weight `√λ`.
pub(crate) fn sqrt_weight<T: Real>(lambda: f64) -> T {
    T::lit(lambda.max(0.0).sqrt())
}

/// Chain rule for a scalar image lookup at the projection of a warped point:
/// `d/dx = ∇I · Jπ · J_W`.
pub(crate) fn image_chain<T: Real>(
    image_grad: &Vector2<T>,
    proj_jac: &nalgebra::Matrix2x3<T>,
    warp_jac: &[(usize, Matrix3x6<T>)],
    scale: T,
) -> Vec<(usize, Matrix3x6<T>)> {
    let row = (image_grad.transpose() * proj_jac) * scale;
    warp_jac
        .iter()
        .map(|(n, j)| {
            let mut m = Matrix3x6::zeros();
            m.row_mut(0).copy_from(&(row * j));
            (*n, m)
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod test_support {
    //! Central-difference oracle for residual Jacobians.

    use super::*;
    use nalgebra::DVector;
    use std::collections::HashMap;

    /// Largest relative deviation between analytic and central-difference
    /// Jacobian columns over every block whose association is unchanged by
    /// the perturbation and whose image samples stay clear of bilinear kinks.
    pub fn max_jacobian_error(spec: &EnergySpec<'_, f64>, graph: &DeformationGraph<f64>, h: f64) -> (f64, usize) {
        let x0 = graph.params();
        let base = spec.evaluate(graph);
        let key = |b: &ResidualBlock<f64>| (b.kind, b.source);
        let mut worst = 0.0f64;
        let mut checked = 0usize;
        for col in 0..x0.len() {
            let eval_at = |delta: f64| {
                let mut x = x0.clone();
                x[col] += delta;
                let e = spec.evaluate(&graph.with_params(&x));
                e.blocks
                    .into_iter()
                    .map(|b| (key(&b), b))
                    .collect::<HashMap<_, _>>()
            };
            let plus = eval_at(h);
            let minus = eval_at(-h);
            let node = col / 6;
            let c = col % 6;
            for b in &base.blocks {
                if let Some(at) = b.sample_at {
                    let near_kink = |x: f64| (x - x.round()).abs() < 1e-3;
                    if near_kink(at.x) || near_kink(at.y) {
                        continue;
                    }
                }
                let (Some(p), Some(m)) = (plus.get(&key(b)), minus.get(&key(b))) else {
                    continue;
                };
                if p.tag != b.tag || m.tag != b.tag {
                    continue;
                }
                let analytic: DVector<f64> = b
                    .jacobian
                    .iter()
                    .filter(|(n, _)| *n == node)
                    .fold(DVector::zeros(b.dim), |acc, (_, j)| {
                        acc + DVector::from_iterator(b.dim, j.column(c).iter().take(b.dim).copied())
                    });
                for r in 0..b.dim {
                    let fd = (p.residual[r] - m.residual[r]) / (2.0 * h);
                    let scale = fd.abs().max(analytic[r].abs()).max(1e-2);
                    worst = worst.max((fd - analytic[r]).abs() / scale);
                    checked += 1;
                }
            }
        }
        (worst, checked)
    }
}
