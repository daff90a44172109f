use nalgebra::Vector3;

use crate::scalar::Real;

/// Largest supported number of influencing nodes per point.
pub const MAX_INFLUENCES: usize = 8;

/// Default number of nodes blended per point.
pub const DEFAULT_INFLUENCES: usize = 4;

/// Convex blend of up to [`MAX_INFLUENCES`] nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkinningWeights<T: Real> {
    len: u8,
    nodes: [u32; MAX_INFLUENCES],
    weights: [T; MAX_INFLUENCES],
}

impl<T: Real> SkinningWeights<T> {
    /// Builds weights from `(node, weight)` pairs; the caller guarantees convexity.
    pub fn from_pairs(pairs: &[(usize, T)]) -> Self {
        assert!(pairs.len() <= MAX_INFLUENCES, "too many influences");
        let mut s = Self {
            len: pairs.len() as u8,
            nodes: [0; MAX_INFLUENCES],
            weights: [T::zero(); MAX_INFLUENCES],
        };
        for (i, &(n, w)) in pairs.iter().enumerate() {
            s.nodes[i] = n as u32;
            s.weights[i] = w;
        }
        s
    }

    pub fn single(node: usize) -> Self {
        Self::from_pairs(&[(node, T::one())])
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        (0..self.len as usize).map(move |i| (self.nodes[i] as usize, self.weights[i]))
    }

    pub fn weight_sum(&self) -> T {
        self.iter().fold(T::zero(), |acc, (_, w)| acc + w)
    }
}

/// Indices of the `k` positions nearest to `p`, nearest first (ties by index).
pub fn nearest_nodes<T: Real>(positions: &[Vector3<T>], p: &Vector3<T>, k: usize) -> Vec<(usize, T)> {
    let mut d: Vec<(usize, T)> = positions
        .iter()
        .enumerate()
        .map(|(i, g)| (i, (g - p).norm_squared()))
        .collect();
    let k = k.min(d.len());
    let cmp = |a: &(usize, T), b: &(usize, T)| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    };
    if k < d.len() && k > 0 {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.truncate(k);
    d
}

/// Gaussian falloff `exp(-|p - g|^2 / (2 σ^2))` over the `k` nearest nodes,
/// renormalized to sum to one; falls back to the nearest node when every
/// raw weight underflows.
pub fn skinning<T: Real>(
    positions: &[Vector3<T>],
    sigma: T,
    p: &Vector3<T>,
    k: usize,
) -> SkinningWeights<T> {
    assert!(!positions.is_empty(), "skinning needs at least one node");
    let k = k.clamp(1, MAX_INFLUENCES);
    let near = nearest_nodes(positions, p, k);
    let denom = T::lit(2.0) * sigma * sigma;
    let raw: Vec<(usize, T)> = near
        .iter()
        .map(|&(i, d2)| (i, (-d2 / denom).exp().max(T::zero())))
        .collect();
    let sum = raw.iter().fold(T::zero(), |a, &(_, w)| a + w);
    if !(sum > T::zero()) || !sum.is_finite_real() {
        return SkinningWeights::single(near[0].0);
    }
    let normalized: Vec<(usize, T)> = raw.into_iter().map(|(i, w)| (i, w / sum)).collect();
    SkinningWeights::from_pairs(&normalized)
}
