use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{Evaluation, ResidualBlock};
use crate::graph::NODE_DOF;
use crate::scalar::Real;

/// How per-block contributions are summed into parameter-sized vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accumulation {
    /// Fixed block chunks and a fixed pairwise reduction tree. Bit-identical
    /// across runs and thread counts.
    #[default]
    Deterministic,
    /// Work-stealing fold/reduce; summation order follows the scheduler.
    Unordered,
}

const CHUNK: usize = 256;

/// Linearization `J`, `F` of the stacked residual field at one parameter vector.
#[derive(Clone, Debug)]
pub struct LinearSystem<T: Real> {
    dim: usize,
    blocks: Vec<ResidualBlock<T>>,
    diagonal: DVector<T>,
    gradient: DVector<T>,
    accumulation: Accumulation,
}

impl<T: Real> LinearSystem<T> {
    pub fn from_evaluation(eval: &Evaluation<T>, dim: usize, accumulation: Accumulation) -> Self {
        Self::from_blocks(eval.blocks.clone(), dim, accumulation)
    }

    pub fn from_blocks(blocks: Vec<ResidualBlock<T>>, dim: usize, accumulation: Accumulation) -> Self {
        for b in &blocks {
            for (n, _) in &b.jacobian {
                assert!(NODE_DOF * n + NODE_DOF <= dim, "Jacobian node {n} outside parameter vector");
            }
        }
        let mut sys = Self {
            dim,
            blocks,
            diagonal: DVector::zeros(dim),
            gradient: DVector::zeros(dim),
            accumulation,
        };
        sys.diagonal = sys.accumulate(|b, out| {
            for (n, j) in &b.jacobian {
                for c in 0..NODE_DOF {
                    let col = j.column(c);
                    let mut s = T::zero();
                    for r in 0..b.dim {
                        s += col[r] * col[r];
                    }
                    out[NODE_DOF * n + c] += s;
                }
            }
        });
        sys.gradient = sys.accumulate(|b, out| {
            for (n, j) in &b.jacobian {
                let g = j.transpose() * b.residual;
                let mut seg = out.fixed_rows_mut::<NODE_DOF>(NODE_DOF * n);
                seg += g;
            }
        });
        sys
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[ResidualBlock<T>] {
        &self.blocks
    }

    /// Diagonal of `JᵀJ`.
    pub fn diagonal(&self) -> &DVector<T> {
        &self.diagonal
    }

    /// `JᵀF`.
    pub fn gradient(&self) -> &DVector<T> {
        &self.gradient
    }

    /// `(JᵀJ + εI) x` as `Jᵀ(Jx) + εx`, never forming `JᵀJ`.
    pub fn apply_normal_matrix(&self, x: &DVector<T>, damping: T) -> DVector<T> {
        assert_eq!(x.len(), self.dim, "vector size");
        let mut out = self.accumulate(|b, out| {
            let mut y = Vector3::zeros();
            for (n, j) in &b.jacobian {
                y += j * x.fixed_rows::<NODE_DOF>(NODE_DOF * n);
            }
            for r in b.dim..3 {
                y[r] = T::zero();
            }
            for (n, j) in &b.jacobian {
                let mut seg = out.fixed_rows_mut::<NODE_DOF>(NODE_DOF * n);
                seg += j.transpose() * y;
            }
        });
        if damping != T::zero() {
            out.axpy(damping, x, T::one());
        }
        out
    }

    /// Dense `J` with one row per residual component.
    pub fn dense_jacobian(&self) -> DMatrix<T> {
        let rows: usize = self.blocks.iter().map(|b| b.dim).sum();
        let mut j = DMatrix::zeros(rows, self.dim);
        let mut row = 0;
        for b in &self.blocks {
            for (n, m) in &b.jacobian {
                for r in 0..b.dim {
                    for c in 0..NODE_DOF {
                        j[(row + r, NODE_DOF * n + c)] += m[(r, c)];
                    }
                }
            }
            row += b.dim;
        }
        j
    }

    /// Stacked residual vector `F`.
    pub fn dense_residual(&self) -> DVector<T> {
        DVector::from_iterator(
            self.blocks.iter().map(|b| b.dim).sum(),
            self.blocks.iter().flat_map(|b| b.residual_slice().iter().copied()),
        )
    }

    fn accumulate<F>(&self, f: F) -> DVector<T>
    where
        F: Fn(&ResidualBlock<T>, &mut DVector<T>) + Sync,
    {
        let dim = self.dim;
        match self.accumulation {
            Accumulation::Deterministic => {
                let mut partials: Vec<DVector<T>> = self
                    .blocks
                    .par_chunks(CHUNK)
                    .map(|chunk| {
                        let mut out = DVector::zeros(dim);
                        for b in chunk {
                            f(b, &mut out);
                        }
                        out
                    })
                    .collect();
                tree_reduce(&mut partials, dim)
            }
            Accumulation::Unordered => self
                .blocks
                .par_iter()
                .fold(
                    || DVector::zeros(dim),
                    |mut out, b| {
                        f(b, &mut out);
                        out
                    },
                )
                .reduce(|| DVector::zeros(dim), |a, b| a + b),
        }
    }
}

/// Pairwise reduction with a shape fixed by the number of partials.
fn tree_reduce<T: Real>(parts: &mut Vec<DVector<T>>, dim: usize) -> DVector<T> {
    if parts.is_empty() {
        return DVector::zeros(dim);
    }
    while parts.len() > 1 {
        let next: Vec<DVector<T>> = parts
            .par_chunks(2)
            .map(|pair| match pair {
                [a, b] => a + b,
                [a] => a.clone(),
                _ => unreachable!(),
            })
            .collect();
        *parts = next;
    }
    parts.pop().unwrap_or_else(|| DVector::zeros(dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::TermKind;
    use nalgebra::Matrix3x6;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random blocks over `k` nodes; each touches up to 4 nodes.
    pub(crate) fn random_blocks(k: usize, count: usize, seed: u64) -> Vec<ResidualBlock<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|source| {
                let dim = [1, 2, 3][rng.random_range(0..3)];
                let touched = rng.random_range(1..=k.min(4));
                let mut nodes: Vec<usize> = (0..k).collect();
                for i in 0..touched {
                    let j = rng.random_range(i..k);
                    nodes.swap(i, j);
                }
                let jacobian = nodes[..touched]
                    .iter()
                    .map(|&n| {
                        let mut m = Matrix3x6::from_fn(|_, _| rng.random_range(-1.0..1.0));
                        for r in dim..3 {
                            m.row_mut(r).fill(0.0);
                        }
                        (n, m)
                    })
                    .collect();
                let mut residual = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                for r in dim..3 {
                    residual[r] = 0.0;
                }
                ResidualBlock {
                    kind: TermKind::Sparse,
                    source,
                    dim,
                    residual,
                    jacobian,
                    weight: 1.0,
                    tag: 0,
                    sample_at: None,
                }
            })
            .collect()
    }

    fn random_vec(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let sys = LinearSystem::from_blocks(random_blocks(5, 40, 1), 30, Accumulation::Deterministic);
        assert_eq!(sys.apply_normal_matrix(&DVector::zeros(30), 1e-6), DVector::zeros(30));
    }

    #[test]
    fn damping_only_without_jacobian() {
        let sys = LinearSystem::<f64>::from_blocks(vec![], 12, Accumulation::Deterministic);
        let x = random_vec(12, 3);
        assert_eq!(sys.apply_normal_matrix(&x, 0.5), &x * 0.5);
    }

    #[test]
    fn matches_materialized_normal_matrix() {
        for seed in 0..20 {
            let blocks = random_blocks(5, 60, seed);
            for acc in [Accumulation::Deterministic, Accumulation::Unordered] {
                let sys = LinearSystem::from_blocks(blocks.clone(), 30, acc);
                let j = sys.dense_jacobian();
                let jtj = j.transpose() * &j;
                let x = random_vec(30, seed + 100);
                let dense = &jtj * &x + &x * 1e-6;
                let fast = sys.apply_normal_matrix(&x, 1e-6);
                assert!((dense - fast).amax() < 1e-10);
                let diag = jtj.diagonal();
                assert!((diag - sys.diagonal()).amax() < 1e-10);
                let grad = j.transpose() * sys.dense_residual();
                assert!((grad - sys.gradient()).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn deterministic_mode_is_bit_identical() {
        let blocks = random_blocks(8, 5000, 9);
        let x = random_vec(48, 10);
        let a = LinearSystem::from_blocks(blocks.clone(), 48, Accumulation::Deterministic);
        let ra = a.apply_normal_matrix(&x, 1e-6);
        for threads in [1, 2, 5] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let rb = pool.install(|| {
                LinearSystem::from_blocks(blocks.clone(), 48, Accumulation::Deterministic).apply_normal_matrix(&x, 1e-6)
            });
            assert_eq!(ra, rb);
        }
        let u = LinearSystem::from_blocks(blocks, 48, Accumulation::Unordered).apply_normal_matrix(&x, 1e-6);
        assert!((&u - &ra).amax() <= 1e-8 * ra.amax());
    }

    proptest! {
        #[test]
        fn symmetric_and_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let sys = LinearSystem::from_blocks(random_blocks(4, 20, seed), 24, Accumulation::Deterministic);
            let x = random_vec(24, seed ^ 0xabc);
            let y = random_vec(24, seed ^ 0xdef);
            let ax = sys.apply_normal_matrix(&x, 1e-6);
            let ay = sys.apply_normal_matrix(&y, 1e-6);
            let scale = 1.0 + ax.norm() * y.norm();
            prop_assert!((y.dot(&ax) - x.dot(&ay)).abs() < 1e-10 * scale);
            let lin = sys.apply_normal_matrix(&(&x * a + &y * b), 1e-6);
            prop_assert!((lin - (ax * a + ay * b)).amax() < 1e-10 * scale);
        }
    }
}
