//! Gauss-Newton over the stacked residual field with a PCG inner solver.

mod pcg;
mod system;

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergySpec, Evaluation, TermKind};
use crate::error::{Error, Result};
use crate::graph::DeformationGraph;
use crate::scalar::Real;

pub use pcg::{pcg_solve, NormalOperator, PcgOutcome, SpdOperator};
pub use system::{Accumulation, LinearSystem};

/// Maximum number of step halvings before a step is rejected.
pub const MAX_HALVINGS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub gn_iterations: usize,
    pub pcg_iterations: usize,
    /// Relative residual at which PCG stops.
    pub pcg_tolerance: f64,
    /// Levenberg damping added to the normal-matrix diagonal.
    pub damping: f64,
    /// Halve steps that increase the energy, rejecting after six halvings.
    pub step_acceptance: bool,
    pub accumulation: Accumulation,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gn_iterations: 10,
            pcg_iterations: 20,
            pcg_tolerance: 1e-4,
            damping: 1e-6,
            step_acceptance: true,
            accumulation: Accumulation::Deterministic,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gn_iterations == 0 || self.pcg_iterations == 0 {
            return Err(Error::invalid("solver iteration counts must be >= 1"));
        }
        if !(self.pcg_tolerance > 0.0) {
            return Err(Error::invalid("pcg_tolerance must be > 0"));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::invalid("damping must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One outer iteration, recorded after its step was applied or rejected.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub energy: f64,
    pub per_term: [f64; 8],
    pub pcg_iterations: usize,
    /// Fraction of the PCG step that was applied; 0 for a rejected step.
    pub step_scale: f64,
    /// PCG broke down and a steepest-descent step was used instead.
    pub gradient_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub initial_energy: f64,
    pub final_energy: f64,
    pub iterations: Vec<IterationLog>,
}

impl SolveReport {
    /// CSV with one row per iteration: energies, PCG iterations, step scale.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(out, "gn_iter,E_total")?;
        for k in TermKind::ALL {
            write!(out, ",{}", k.name())?;
        }
        writeln!(out, ",pcg_iters,step_scale")?;
        for it in &self.iterations {
            write!(out, "{},{:e}", it.iteration, it.energy)?;
            for e in it.per_term {
                write!(out, ",{e:e}")?;
            }
            writeln!(out, ",{},{}", it.pcg_iterations, it.step_scale)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn per_term_f64<T: Real>(eval: &Evaluation<T>) -> [f64; 8] {
    eval.per_kind().map(|e| e.to_f64_lossy())
}

/// Minimizes `Σ r²` over the graph parameters, updating `graph` in place.
pub fn gauss_newton<T: Real>(
    spec: &EnergySpec<'_, T>,
    graph: &mut DeformationGraph<T>,
    config: &SolverConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let dim = graph.param_count();
    let mut x = graph.params();
    let mut eval = spec.evaluate(graph);
    let mut energy = eval.total();
    if !eval.is_finite() || !energy.is_finite_real() {
        return Err(Error::Numerical("non-finite energy at initialization".into()));
    }
    let initial_energy = energy.to_f64_lossy();
    let damping = T::lit(config.damping);
    let tolerance = T::lit(config.pcg_tolerance);
    let mut log = Vec::with_capacity(config.gn_iterations);

    for iteration in 0..config.gn_iterations {
        let system = LinearSystem::from_evaluation(&eval, dim, config.accumulation);
        let rhs = -system.gradient();
        let op = NormalOperator {
            system: &system,
            damping,
        };
        let outcome = pcg_solve(&op, &rhs, config.pcg_iterations, tolerance);
        let (delta, fallback) = if outcome.breakdown && outcome.iterations == 0 {
            (cauchy_step(&op, &rhs), true)
        } else {
            (outcome.x, outcome.breakdown)
        };

        let mut scale = T::one();
        let mut accepted = None;
        if delta.iter().all(|d| d.is_finite_real()) && delta.amax() > T::zero() {
            for _ in 0..=MAX_HALVINGS {
                let trial = &x + &delta * scale;
                let trial_graph = graph.with_params(&trial);
                let trial_eval = spec.evaluate(&trial_graph);
                let e = trial_eval.total();
                let finite = trial_eval.is_finite() && e.is_finite_real();
                if finite && (!config.step_acceptance || e <= energy) {
                    accepted = Some((trial, trial_eval, e));
                    break;
                }
                if !config.step_acceptance {
                    break;
                }
                scale *= T::lit(0.5);
            }
        }
        let step_scale = match accepted {
            Some((trial, trial_eval, e)) => {
                x = trial;
                eval = trial_eval;
                energy = e;
                scale.to_f64_lossy()
            }
            None => 0.0,
        };
        log.push(IterationLog {
            iteration,
            energy: energy.to_f64_lossy(),
            per_term: per_term_f64(&eval),
            pcg_iterations: outcome.iterations,
            step_scale,
            gradient_fallback: fallback,
        });
    }
    graph.set_params(&x);
    graph.renormalize_rotations();
    Ok(SolveReport {
        initial_energy,
        final_energy: energy.to_f64_lossy(),
        iterations: log,
    })
}

/// Minimizer of the quadratic model along the preconditioner-free gradient.
fn cauchy_step<T: Real, A: SpdOperator<T>>(a: &A, rhs: &DVector<T>) -> DVector<T> {
    let curvature = rhs.dot(&a.apply(rhs));
    if curvature > T::zero() {
        rhs * (rhs.norm_squared() / curvature)
    } else {
        DVector::zeros(rhs.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{ArapTerm, ResidualTerm, SparseMatch, SparseTerm};
    use nalgebra::Vector3;

    fn single() -> DeformationGraph<f64> {
        DeformationGraph::from_positions(&[Vector3::new(0.1, 0.2, 1.0)], 0.05, 1).unwrap()
    }

    #[test]
    fn zero_residual_start_stays_put() {
        let mut g = single();
        let s = g.nodes[0].position;
        let spec = EnergySpec::assemble(vec![Box::new(SparseTerm::new(&g, vec![SparseMatch::new(s, s).unwrap()], 100.0, 4))
            as Box<dyn ResidualTerm<f64>>])
        .unwrap();
        let report = gauss_newton(&spec, &mut g, &SolverConfig::default()).unwrap();
        assert_eq!(g.params(), DVector::zeros(6));
        assert!(report.iterations.iter().all(|it| it.energy == 0.0));
    }

    #[test]
    fn single_sparse_match_converges() {
        let mut g = single();
        let s = g.nodes[0].position;
        let target = s + Vector3::new(0.05, 0.0, 0.0);
        let term = SparseTerm::new(&g, vec![SparseMatch::new(s, target).unwrap()], 100.0, 4);
        let spec = EnergySpec::assemble(vec![Box::new(term) as Box<dyn ResidualTerm<f64>>]).unwrap();
        let config = SolverConfig {
            gn_iterations: 3,
            ..SolverConfig::default()
        };
        gauss_newton(&spec, &mut g, &config).unwrap();
        assert!((g.nodes[0].translation - Vector3::new(0.05, 0.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn energy_never_increases() {
        let pos: Vec<_> = (0..6)
            .map(|i| Vector3::new(i as f64 * 0.04, (i as f64).sin() * 0.02, 1.0))
            .collect();
        let mut g = DeformationGraph::from_positions(&pos, 0.05, 3).unwrap();
        let matches: Vec<_> = (0..12)
            .map(|i| {
                let s = Vector3::new(i as f64 * 0.018, 0.01, 1.0);
                let t = Vector3::new(s.x + 0.05 * (s.x * 20.0).sin(), s.y + 0.04, s.z - 0.02 * s.x);
                SparseMatch::new(s, t).unwrap()
            })
            .collect();
        let spec = EnergySpec::assemble(vec![
            Box::new(SparseTerm::new(&g, matches, 100.0, 4)) as Box<dyn ResidualTerm<f64>>,
            Box::new(ArapTerm::new(10.0)),
        ])
        .unwrap();
        let report = gauss_newton(&spec, &mut g, &SolverConfig::default()).unwrap();
        let mut prev = report.initial_energy;
        for it in &report.iterations {
            assert!(it.energy <= prev);
            prev = it.energy;
        }
        assert!(report.final_energy < 0.5 * report.initial_energy);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let mut g = single();
        let s = g.nodes[0].position;
        let t = Vector3::new(f64::NAN, 0.0, 0.0);
        let term = SparseTerm::new(&g, vec![SparseMatch { s, t }], 1.0, 4);
        let spec = EnergySpec::assemble(vec![Box::new(term) as Box<dyn ResidualTerm<f64>>]).unwrap();
        assert!(matches!(gauss_newton(&spec, &mut g, &SolverConfig::default()), Err(Error::Numerical(_))));
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let mut g = single();
        let s = g.nodes[0].position;
        let term = SparseTerm::new(&g, vec![SparseMatch::new(s, s * 1.01).unwrap()], 1.0, 4);
        let spec = EnergySpec::assemble(vec![Box::new(term) as Box<dyn ResidualTerm<f64>>]).unwrap();
        let report = gauss_newton(&spec, &mut g, &SolverConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        report.write_trace_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 11);
        assert!(lines[0].starts_with("gn_iter,E_total,icp_plane"));
        assert!(lines[0].ends_with("pcg_iters,step_scale"));
        assert_eq!(lines[1].split(',').count(), 12);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = SolverConfig {
            gn_iterations: 0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
