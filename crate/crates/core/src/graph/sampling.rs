use std::collections::{BTreeSet, HashMap};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform hash grid over points for radius queries.
pub(crate) struct SpatialHash<T: Real> {
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<usize>>,
    points: Vec<Vector3<T>>,
}

impl<T: Real> SpatialHash<T> {
    pub fn new(cell: T) -> Self {
        Self {
            cell: cell.to_f64_lossy(),
            buckets: HashMap::new(),
            points: Vec::new(),
        }
    }

    fn key(&self, p: &Vector3<T>) -> (i64, i64, i64) {
        let f = |x: T| (x.to_f64_lossy() / self.cell).floor() as i64;
        (f(p.x), f(p.y), f(p.z))
    }

    pub fn insert(&mut self, p: Vector3<T>) {
        let k = self.key(&p);
        self.buckets.entry(k).or_default().push(self.points.len());
        self.points.push(p);
    }

    /// True when some stored point lies strictly closer than `radius`
    /// (radius must not exceed the cell size).
    pub fn any_within(&self, p: &Vector3<T>, radius: T) -> bool {
        let (x, y, z) = self.key(p);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&(x + dx, y + dy, z + dz)) {
                        if b.iter().any(|&i| (self.points[i] - p).norm_squared() < r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Greedy Poisson-disk cover of `points`: visits points in order and keeps
/// one when no kept point lies within `radius`. Every input point ends up
/// closer than `radius` to a kept point (or is one), and kept points are at
/// least `radius` apart.
pub fn sample_nodes<T: Real>(points: &[Vector3<T>], radius: T) -> Result<Vec<Vector3<T>>> {
    if points.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if !(radius > T::zero()) {
        return Err(Error::invalid("sampling radius must be positive"));
    }
    let mut hash = SpatialHash::new(radius);
    let mut kept = Vec::new();
    for p in points {
        if !hash.any_within(p, radius) {
            hash.insert(*p);
            kept.push(*p);
        }
    }
    Ok(kept)
}

/// Adds new sample points for every input point farther than `radius` from
/// `existing` and from previously added points.
pub fn sample_uncovered<T: Real>(
    existing: &[Vector3<T>],
    points: &[Vector3<T>],
    radius: T,
) -> Vec<Vector3<T>> {
    let mut hash = SpatialHash::new(radius);
    for p in existing {
        hash.insert(*p);
    }
    let mut added = Vec::new();
    for p in points {
        if !hash.any_within(p, radius) {
            hash.insert(*p);
            added.push(*p);
        }
    }
    added
}

/// Connects each node to its `k` nearest neighbours; edges are undirected
/// `(i, j)` pairs with `i < j`, sorted.
pub fn build_edges<T: Real>(positions: &[Vector3<T>], k: usize) -> Vec<(usize, usize)> {
    let mut edges = BTreeSet::new();
    if positions.len() < 2 || k == 0 {
        return Vec::new();
    }
    for (i, p) in positions.iter().enumerate() {
        let mut d: Vec<(usize, T)> = positions
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, q)| (j, (q - p).norm_squared()))
            .collect();
        d.sort_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        for &(j, _) in d.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    edges.into_iter().collect()
}
