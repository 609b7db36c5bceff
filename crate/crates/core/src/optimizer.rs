//! Gradient descent on rotor control points with a backtracking line search.

use crate::adjoint::{DesignSpace, Evaluation, ThdProblem};
use crate::assembly::vector_metric_from_elements;
use crate::config::OptimizerConfig;
use crate::error::{Error, Result};
use crate::geometry::{check_mesh_validity, MultipatchModel};
use crate::linalg::{SparseMatrix, SymmetricFactor};

/// `W = B^{-1} g`.
pub fn descent_field(g: &[f64], metric: &SparseMatrix) -> Result<Vec<f64>> {
    if g.len() != metric.n_rows {
        return Err(Error::DimensionMismatch {
            expected: metric.n_rows,
            found: g.len(),
        });
    }
    if g.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; g.len()]);
    }
    let f = SymmetricFactor::cholesky(metric)
        .map_err(|e| Error::Metric(format!("metric matrix is not positive definite: {e}")))?;
    f.solve(g)
}

/// Step sizes `1, 1/2, 1/4, ...` down to `min_step`.
pub fn step_sizes(min_step: f64) -> impl Iterator<Item = f64> {
    std::iter::successors(Some(1.0f64), |d| Some(d / 2.0)).take_while(move |&d| d >= min_step)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LineSearch<T> {
    Accepted { step: f64, value: f64, data: T },
    NoProgress,
}

/// Tries the steps in order. `trial(step)` returns `None` for an invalid
/// candidate and `Some((J, data))` otherwise; the first candidate with
/// `J < current` is accepted.
pub fn line_search<T>(
    current: f64,
    min_step: f64,
    mut trial: impl FnMut(f64) -> Result<Option<(f64, T)>>,
) -> Result<LineSearch<T>> {
    for step in step_sizes(min_step) {
        if let Some((value, data)) = trial(step)? {
            if value < current {
                return Ok(LineSearch::Accepted { step, value, data });
            }
        }
    }
    Ok(LineSearch::NoProgress)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub thd: f64,
    pub step: f64,
    pub min_det: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Tolerance,
    NoProgress,
    MaxIterations,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Tolerance => "tolerance",
            Termination::NoProgress => "no_progress",
            Termination::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub history: Vec<HistoryRow>,
    pub model: MultipatchModel,
    pub termination: Termination,
    pub eps_j: f64,
    /// `g^T W` of every accepted step.
    pub certificates: Vec<f64>,
}

/// Runs the descent loop. `on_accept` sees every history row with the
/// geometry it belongs to, including the initial one.
pub fn run_optimization(
    problem: &ThdProblem,
    cfg: &OptimizerConfig,
    mut on_accept: impl FnMut(&HistoryRow, &MultipatchModel) -> Result<()>,
) -> Result<OptimizationResult> {
    cfg.validate()?;
    let dofmap = problem.rotor_dofmap();
    let mut model = problem.rotor_model().clone();
    let design = DesignSpace::new(&model, dofmap, cfg.move_magnets)?;
    let (_, det0) = check_mesh_validity(&model, 0.0);
    if !(det0 > 0.0) {
        return Err(Error::Geometry(format!(
            "initial rotor has min det J = {det0}"
        )));
    }
    let eps_j = cfg.eps_j_rel * det0;
    let mut eval: Evaluation = problem.evaluate(&model, true)?;
    let j0 = eval.thd;
    let first = HistoryRow {
        iteration: 0,
        thd: j0,
        step: 0.0,
        min_det: det0,
    };
    on_accept(&first, &model)?;
    let mut history = vec![first];
    let mut certificates = Vec::new();
    let mut termination = Termination::MaxIterations;
    for it in 1..=cfg.max_iterations {
        let g = problem.gradient(&eval, &design)?;
        let metric = vector_metric_from_elements(&eval.rotor.elements, dofmap, &design.mask())?;
        let w = descent_field(&g, &metric)?;
        let gw: f64 = g.iter().zip(&w).map(|(a, b)| a * b).sum();
        if !(gw > 0.0) {
            termination = Termination::NoProgress;
            break;
        }
        let current = eval.thd;
        let res = line_search(current, cfg.min_step, |step| {
            let moved = dofmap.displace(&model, &design.displacement(&w, -step));
            let (ok, min_det) = check_mesh_validity(&moved, eps_j);
            if !ok {
                return Ok(None);
            }
            let ev = problem.evaluate(&moved, true)?;
            Ok(Some((ev.thd, (moved, ev, min_det))))
        })?;
        match res {
            LineSearch::NoProgress => {
                termination = Termination::NoProgress;
                break;
            }
            LineSearch::Accepted {
                step,
                value,
                data: (moved, ev, min_det),
            } => {
                model = moved;
                eval = ev;
                certificates.push(gw);
                let row = HistoryRow {
                    iteration: it,
                    thd: value,
                    step,
                    min_det,
                };
                on_accept(&row, &model)?;
                history.push(row);
                if current - value < cfg.tol_rel * j0 {
                    termination = Termination::Tolerance;
                    break;
                }
            }
        }
    }
    Ok(OptimizationResult {
        history,
        model,
        termination,
        eps_j,
        certificates,
    })
}
