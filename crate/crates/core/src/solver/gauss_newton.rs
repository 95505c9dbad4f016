use std::fmt;

use super::normal::{back_substitute, schur_eliminate_depth, Layout, SolveScope, SolveState};
use super::sparse::sparse_factor_solve;
use crate::error::{Error, Result};
use crate::graph::BAGraph;
use crate::residuals::{evaluate_energy, linearize, EnergyConfig, EnergyTerms};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub step_tolerance: f64,
    /// Initial multiplicative damping.
    pub lambda: f64,
    pub optimize_intrinsics: bool,
    /// Hold the first keyframe's pose fixed.
    pub gauge: bool,
    pub energy: EnergyConfig,
}

impl SolverConfig {
    pub fn frontend() -> Self {
        Self {
            max_iters: 10,
            step_tolerance: 1e-6,
            lambda: 1e-4,
            optimize_intrinsics: false,
            gauge: true,
            energy: EnergyConfig::default(),
        }
    }

    pub fn backend() -> Self {
        Self {
            max_iters: 16,
            optimize_intrinsics: true,
            ..Self::frontend()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !(self.step_tolerance >= 0.0) {
            return Err(Error::Config(
                "damping and step tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::frontend()
    }
}

/// One accepted (or final) iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub energy: f64,
    pub lambda: f64,
    pub step_norm: f64,
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter {} {:.12e} {:.3e} {:.6e}",
            self.iter, self.energy, self.lambda, self.step_norm
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial: EnergyTerms,
    pub final_energy: EnergyTerms,
    /// True when the step fell below tolerance or no further decrease was possible.
    pub converged: bool,
    pub log: Vec<IterationRecord>,
}

impl SolveReport {
    pub fn log_lines(&self) -> String {
        self.log.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// Damping escalations tried within one iteration before giving up.
const MAX_ESCALATIONS: usize = 8;
/// Relative energy increase below which a rejected step counts as a stall.
const STALL_TOLERANCE: f64 = 1e-9;

/// Solves over every keyframe, edge and depth of `graph`.
pub fn gauss_newton(graph: &mut BAGraph, config: &SolverConfig) -> Result<SolveReport> {
    let mut scope = SolveScope::full(graph, config.optimize_intrinsics);
    if !config.gauge {
        scope.pose_free.iter_mut().for_each(|f| *f = true);
    }
    solve_scoped(graph, &scope, config)
}

/// Solves for the unknowns freed by `scope` using only its active edges and
/// writes the result back into `graph`.
pub fn solve_scoped(
    graph: &mut BAGraph,
    scope: &SolveScope,
    config: &SolverConfig,
) -> Result<SolveReport> {
    config.validate()?;
    if graph.len() < 2 || scope.active_edges.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let layout = Layout::new(graph, scope);
    let mut state = SolveState::from_graph(graph);
    let (mut terms, mut ne) = linearize(graph, &state, &layout, &config.energy)?;
    if !terms.total.is_finite() {
        return Err(Error::DivergedEnergy(0));
    }
    let initial = terms;
    let mut lambda = config.lambda;
    let mut log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    'outer: for iter in 1..=config.max_iters {
        iterations = iter;
        let mut increases = 0;
        loop {
            let damped = ne.damped(lambda);
            let reduced = schur_eliminate_depth(&damped);
            let dx = sparse_factor_solve(&reduced.matrix, &reduced.rhs)?.x;
            let dy = back_substitute(&damped, &reduced, &dx);
            let step_norm = (dx.norm_squared() + dy.iter().map(|v| v * v).sum::<f64>()).sqrt();
            if step_norm < config.step_tolerance {
                converged = true;
                record(&mut log, iter, terms.total, lambda, step_norm);
                break 'outer;
            }
            let candidate = state.apply(&layout, &dx, &dy);
            let new_terms = evaluate_energy(graph, &candidate, &layout, &config.energy)?;
            if new_terms.total.is_finite() && new_terms.total <= terms.total {
                state = candidate;
                lambda /= 2.0;
                let (t, n) = linearize(graph, &state, &layout, &config.energy)?;
                terms = t;
                ne = n;
                record(&mut log, iter, terms.total, lambda, step_norm);
                break;
            }
            let stalled = new_terms.total.is_finite()
                && new_terms.total - terms.total <= STALL_TOLERANCE * terms.total.max(1e-300);
            if stalled {
                converged = true;
                record(&mut log, iter, terms.total, lambda, step_norm);
                break 'outer;
            }
            increases += 1;
            lambda *= 10.0;
            if increases > MAX_ESCALATIONS {
                return Err(Error::DivergedEnergy(increases));
            }
        }
    }
    state.write_back(graph, &layout);
    Ok(SolveReport {
        iterations,
        initial,
        final_energy: terms,
        converged,
        log,
    })
}

fn record(log: &mut Vec<IterationRecord>, iter: usize, energy: f64, lambda: f64, step_norm: f64) {
    let r = IterationRecord {
        iter,
        energy,
        lambda,
        step_norm,
    };
    log::debug!("{r}");
    log.push(r);
}
