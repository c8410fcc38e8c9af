use serde::{Deserialize, Serialize};

use super::sparse::SkylineMatrix;
use super::{Factor, FactorGraph};
use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            relative_tolerance: 1e-5,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.1,
        }
    }
}

const LAMBDA_CEILING: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport<T> {
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_cost: T,
    pub final_cost: T,
    /// Total cost after every accepted step.
    pub accepted_costs: Vec<T>,
    /// False when the iteration cap stopped the solver.
    pub converged: bool,
}

pub fn total_cost<T: Real>(factors: &[Factor<T>], poses: &[Pose2<T>]) -> T {
    factors.iter().map(|f| f.cost(poses)).sum()
}

pub fn optimize<T: Real>(g: &FactorGraph<T>) -> Result<(Vec<Pose2<T>>, OptimizeReport<T>)> {
    optimize_with(g, &LmOptions::default())
}

/// Leftmost coupled variable per row, from the factor connectivity.
fn skyline_profile<T: Real>(g: &FactorGraph<T>) -> Vec<usize> {
    let n = g.len();
    let mut lowest: Vec<usize> = (0..n).collect();
    for f in &g.factors {
        if let (a, Some(b)) = f.nodes() {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            lowest[hi] = lowest[hi].min(lo);
        }
    }
    (0..3 * n).map(|v| 3 * lowest[v / 3]).collect()
}

fn normal_equations<T: Real>(g: &FactorGraph<T>, poses: &[Pose2<T>], profile: &[usize]) -> (SkylineMatrix<T>, Vec<T>) {
    let mut h = SkylineMatrix::new(profile.to_vec());
    let mut rhs = vec![T::zero(); 3 * poses.len()];
    for f in &g.factors {
        let lin = f.linearize(poses);
        let (a, b) = f.nodes();
        let mut blocks: [(usize, &[[T; 3]; 3]); 2] = [(a, &lin.ja), (0, &lin.jb)];
        let count = if let Some(b) = b {
            blocks[1].0 = b;
            2
        } else {
            1
        };
        for row in 0..lin.dim {
            for &(na, ja) in &blocks[..count] {
                for ca in 0..3 {
                    let va = ja[row][ca];
                    if va == T::zero() {
                        continue;
                    }
                    let ia = 3 * na + ca;
                    rhs[ia] -= va * lin.r[row];
                    for &(nb, jb) in &blocks[..count] {
                        for cb in 0..3 {
                            let ib = 3 * nb + cb;
                            if ib > ia {
                                continue;
                            }
                            let vb = jb[row][cb];
                            if vb != T::zero() {
                                h.add(ia, ib, va * vb);
                            }
                        }
                    }
                }
            }
        }
    }
    (h, rhs)
}

fn apply_step<T: Real>(poses: &[Pose2<T>], dx: &[T]) -> Vec<Pose2<T>> {
    poses
        .iter()
        .enumerate()
        .map(|(k, p)| Pose2::new(p.x() + dx[3 * k], p.y() + dx[3 * k + 1], p.theta() + dx[3 * k + 2]))
        .collect()
}

pub fn optimize_with<T: Real>(g: &FactorGraph<T>, opts: &LmOptions) -> Result<(Vec<Pose2<T>>, OptimizeReport<T>)> {
    g.check_determined()?;
    if g.initial.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("initial graph poses"));
    }
    let profile = skyline_profile(g);
    let mut poses = g.initial.clone();
    let mut cost = total_cost(&g.factors, &poses);
    let initial_cost = cost;
    let mut lambda: T = lit(opts.initial_lambda);
    let mut report = OptimizeReport {
        iterations: 0,
        accepted_steps: 0,
        initial_cost,
        final_cost: cost,
        accepted_costs: Vec::new(),
        converged: false,
    };
    if cost == T::zero() {
        report.converged = true;
        return Ok((poses, report));
    }
    let (mut h, mut rhs) = normal_equations(g, &poses, &profile);
    while report.iterations < opts.max_iterations {
        report.iterations += 1;
        let mut damped = h.clone();
        damped.add_diagonal(lambda);
        let Some(chol) = damped.cholesky() else {
            if report.accepted_steps == 0 && lambda == lit(opts.initial_lambda) {
                return Err(Error::RankDeficient("normal equations are not positive definite".into()));
            }
            lambda *= lit(opts.lambda_up);
            continue;
        };
        let dx = chol.solve(&rhs);
        let candidate = apply_step(&poses, &dx);
        let new_cost = total_cost(&g.factors, &candidate);
        if new_cost.is_finite() && new_cost <= cost {
            let decrease = (cost - new_cost) / cost.max(T::min_positive_value());
            poses = candidate;
            cost = new_cost;
            report.accepted_steps += 1;
            report.accepted_costs.push(cost);
            lambda *= lit(opts.lambda_down);
            if decrease < lit(opts.relative_tolerance) || cost == T::zero() {
                report.converged = true;
                break;
            }
            (h, rhs) = normal_equations(g, &poses, &profile);
        } else {
            lambda *= lit(opts.lambda_up);
            if lambda > lit(LAMBDA_CEILING) {
                report.converged = true;
                break;
            }
        }
    }
    report.final_cost = cost;
    Ok((poses, report))
}
