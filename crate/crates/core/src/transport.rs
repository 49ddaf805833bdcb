//! Optimal-transport assignment of ground-truths (suppliers) to control codes
//! (demanders).
//!
//! Every code demands exactly one unit. A real truth supplies
//! `ceil(sum of its top-k mu values)` units and the null target absorbs the
//! rest, so total supply always equals the number of codes. Costs are the
//! negated mu values, zero for the null row. The entropic problem is solved
//! with log-domain Sinkhorn-Knopp iterations and each code then takes the
//! row holding the largest share of its column.
//!
//! Mu values shrink towards `1/N` as `tau` grows, so at the default `tau = 10`
//! the cost gaps between competing assignments are often well below 1e-2.
//! A fixed regularization of that size smears each truth's supply over many
//! codes and the null row then wins every column. The default configuration
//! therefore anneals the regularization from the cost range down to 1e-5.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{self, MuMatrix, NormAxis, PredictionSet, TokenId};

/// Top-k sums within this distance above an integer round down to it, so that
/// a row summing to `1 + ulp` still supplies one unit.
const CEIL_SLACK: f64 = 1e-9;

/// Largest problem [`exact_solve`] will enumerate.
pub const ORACLE_MAX_ROWS: usize = 6;
pub const ORACLE_MAX_COLS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    supplies: Vec<u64>,
    demands: Vec<u64>,
    costs: Array2<f64>,
    has_null: bool,
}

impl TransportProblem {
    /// Validates feasibility: matching dimensions, unit demands, equal
    /// totals, finite costs and an all-zero null row (the last row when
    /// `has_null`).
    pub fn new(
        supplies: Vec<u64>,
        demands: Vec<u64>,
        costs: Array2<f64>,
        has_null: bool,
    ) -> Result<Self> {
        let (m, n) = costs.dim();
        if supplies.len() != m || demands.len() != n {
            return Err(Error::InfeasibleProblem(format!(
                "{} supplies and {} demands for a {m}x{n} cost matrix",
                supplies.len(),
                demands.len()
            )));
        }
        if m == 0 || n == 0 {
            return Err(Error::InfeasibleProblem("empty problem".into()));
        }
        if let Some(j) = demands.iter().position(|&d| d != 1) {
            return Err(Error::InfeasibleProblem(format!(
                "demand of code {j} is not 1"
            )));
        }
        let total_supply: u64 = supplies.iter().sum();
        let total_demand: u64 = demands.iter().sum();
        if total_supply != total_demand {
            return Err(Error::InfeasibleProblem(format!(
                "total supply {total_supply} differs from total demand {total_demand}"
            )));
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InfeasibleProblem("non-finite cost".into()));
        }
        if has_null && costs.row(m - 1).iter().any(|&c| c != 0.0) {
            return Err(Error::InfeasibleProblem(
                "null row has non-zero cost".into(),
            ));
        }
        Ok(TransportProblem {
            supplies,
            demands,
            costs,
            has_null,
        })
    }

    pub fn supplies(&self) -> &[u64] {
        &self.supplies
    }

    pub fn demands(&self) -> &[u64] {
        &self.demands
    }

    pub fn costs(&self) -> &Array2<f64> {
        &self.costs
    }

    pub fn has_null(&self) -> bool {
        self.has_null
    }

    pub fn n_rows(&self) -> usize {
        self.supplies.len()
    }

    pub fn n_codes(&self) -> usize {
        self.demands.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub pi: Array2<f64>,
    pub objective: f64,
    pub has_null: bool,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute row or column marginal violation.
    pub marginal_error: f64,
}

/// One target per control code; `None` is the null target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub targets: Vec<Option<usize>>,
}

impl AssignmentPlan {
    pub fn all_null(n: usize) -> Self {
        AssignmentPlan {
            targets: vec![None; n],
        }
    }

    /// Cost of the assignment under `costs`, where `None` maps to the last
    /// row when `has_null` is set. Summed over codes in order.
    pub fn cost(&self, costs: &Array2<f64>, has_null: bool) -> f64 {
        let null_row = costs.nrows() - 1;
        self.targets
            .iter()
            .enumerate()
            .map(|(j, t)| match t {
                Some(i) => costs[[*i, j]],
                None if has_null => costs[[null_row, j]],
                None => 0.0,
            })
            .sum()
    }
}

/// Hyper-parameters of the assignment pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignConfig {
    pub tau: f64,
    /// How many of a truth's largest mu values feed its supply.
    pub k: usize,
    pub axis: NormAxis,
    /// Final entropic regularization.
    pub epsilon: f64,
    /// Per-stage shrink factor of the regularization schedule; values
    /// outside (0, 1) solve at `epsilon` directly.
    pub epsilon_scaling: f64,
    /// Iteration budget per regularization stage.
    pub max_iters: usize,
    pub tol: f64,
    /// Total number of control codes; the first half serves present truths.
    #[serde(rename = "N")]
    pub n_codes: usize,
    /// Tokens decoded per code.
    #[serde(rename = "K")]
    pub k_tokens: usize,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig {
            tau: 10.0,
            k: 3,
            axis: NormAxis::OverCodes,
            epsilon: 1e-5,
            epsilon_scaling: 0.5,
            max_iters: 1000,
            tol: 1e-6,
            n_codes: 20,
            k_tokens: 2,
        }
    }
}

impl AssignConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.tau.is_nan() || self.tau <= 0.0 {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 || self.tol.is_nan() || self.tol <= 0.0 {
            return bad("epsilon and tol must be positive".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if self.n_codes == 0 || !self.n_codes.is_multiple_of(2) {
            return bad(format!("N must be even and positive, got {}", self.n_codes));
        }
        if self.k_tokens == 0 {
            return bad("K must be at least 1".into());
        }
        Ok(())
    }
}

fn top_k_sum(row: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut values: Vec<f64> = row.collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values.iter().take(k).sum()
}

/// Integer supplies for every row of `mu`, null row last.
///
/// When the real supplies exceed the number of codes, the row with the
/// smallest top-k sum that still supplies more than one unit gives up a unit,
/// repeatedly, until they fit.
pub fn build_supplies(mu: &MuMatrix, k: usize) -> Result<Vec<u64>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if !mu.has_null {
        return Err(Error::InvalidInput("supplies need a null row".into()));
    }
    let n = mu.n_codes();
    let n_real = mu.n_real();
    if n_real > n {
        return Err(Error::TooManyTruths {
            truths: n_real,
            codes: n,
        });
    }
    let sums: Vec<f64> = (0..n_real)
        .map(|i| top_k_sum(mu.mu.row(i).iter().copied(), k))
        .collect();
    let mut supplies: Vec<u64> = sums
        .iter()
        .map(|&s| (s - CEIL_SLACK).ceil().max(0.0) as u64)
        .collect();

    let mut total: u64 = supplies.iter().sum();
    while total > n as u64 {
        // smallest sum first; among equal sums the later row gives way
        let victim = (0..n_real)
            .filter(|&i| supplies[i] > 1)
            .min_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(b.cmp(&a)))
            .expect("n_real <= n leaves a row above one unit");
        supplies[victim] -= 1;
        total -= 1;
    }
    supplies.push(n as u64 - total);
    Ok(supplies)
}

/// Negated mu for real rows, zeros for the null row.
pub fn build_costs(mu: &MuMatrix) -> Array2<f64> {
    let mut costs = mu.mu.mapv(|v| -v);
    if mu.has_null {
        let last = costs.nrows() - 1;
        costs.row_mut(last).fill(0.0);
    }
    costs
}

pub fn build_problem(mu: &MuMatrix, k: usize) -> Result<TransportProblem> {
    let supplies = build_supplies(mu, k)?;
    let costs = build_costs(mu);
    let n = mu.n_codes();
    TransportProblem::new(supplies, vec![1; n], costs, mu.has_null)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT by log-domain Sinkhorn-Knopp.
///
/// Rows with zero supply are removed before iterating and come back as
/// all-zero rows of the plan. Hitting `max_iters` is not an error: the plan
/// is returned with `converged == false`.
pub fn sinkhorn_solve(
    p: &TransportProblem,
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan> {
    sinkhorn_annealed(p, &[epsilon], max_iters, tol)
}

/// Sinkhorn-Knopp with epsilon scaling: the regularization starts at the
/// cost range and shrinks by `factor` per stage down to `epsilon`, each stage
/// warm-started from the previous potentials and given up to `max_iters`
/// iterations. Convergence is judged on the final stage only.
pub fn sinkhorn_solve_scaled(
    p: &TransportProblem,
    epsilon: f64,
    factor: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::InvalidInput(format!(
            "scaling factor must lie in (0, 1), got {factor}"
        )));
    }
    let range = p.costs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - p.costs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let mut schedule = Vec::new();
    let mut eps = range.max(epsilon);
    while eps > epsilon {
        schedule.push(eps);
        eps *= factor;
    }
    schedule.push(epsilon);
    sinkhorn_annealed(p, &schedule, max_iters, tol)
}

fn sinkhorn_annealed(
    p: &TransportProblem,
    schedule: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan> {
    if schedule.iter().any(|&e| e.is_nan() || e <= 0.0) || tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidInput(
            "epsilon and tol must be positive".into(),
        ));
    }
    let (m, n) = p.costs.dim();
    let active: Vec<usize> = (0..m).filter(|&i| p.supplies[i] > 0).collect();
    let log_supply: Vec<f64> = active
        .iter()
        .map(|&i| (p.supplies[i] as f64).ln())
        .collect();
    let log_demand: Vec<f64> = p.demands.iter().map(|&d| (d as f64).ln()).collect();
    let cost = |a: usize, j: usize| p.costs[[active[a], j]];

    let mut f = vec![0.0; active.len()];
    let mut g = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    let mut col_error = f64::INFINITY;
    let epsilon = *schedule.last().expect("non-empty schedule");

    for &eps in schedule {
        converged = false;
        for _ in 0..max_iters {
            iterations += 1;
            for (j, gj) in g.iter_mut().enumerate() {
                let lse = log_sum_exp((0..active.len()).map(|a| (f[a] - cost(a, j)) / eps));
                *gj = eps * (log_demand[j] - lse);
            }
            for (a, fa) in f.iter_mut().enumerate() {
                let lse = log_sum_exp((0..n).map(|j| (g[j] - cost(a, j)) / eps));
                *fa = eps * (log_supply[a] - lse);
            }
            if f.iter().chain(&g).any(|v| !v.is_finite()) {
                return Err(Error::NumericalFailure(format!(
                    "non-finite dual potential after {iterations} iterations"
                )));
            }
            // rows are exact after the f update; columns carry the residual
            col_error = (0..n)
                .map(|j| {
                    let mass: f64 = (0..active.len())
                        .map(|a| ((f[a] + g[j] - cost(a, j)) / eps).exp())
                        .sum();
                    (mass - p.demands[j] as f64).abs()
                })
                .fold(0.0, f64::max);
            if col_error < tol {
                converged = true;
                break;
            }
        }
    }

    let mut pi = Array2::zeros((m, n));
    for (a, &i) in active.iter().enumerate() {
        for j in 0..n {
            pi[[i, j]] = ((f[a] + g[j] - cost(a, j)) / epsilon).exp();
        }
    }
    if pi.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite transport plan".into()));
    }
    let row_error = (0..m)
        .map(|i| (pi.row(i).sum() - p.supplies[i] as f64).abs())
        .fold(0.0, f64::max);
    let objective = (&pi * &p.costs).sum();
    Ok(TransportPlan {
        pi,
        objective,
        has_null: p.has_null,
        converged,
        iterations,
        marginal_error: row_error.max(col_error),
    })
}

/// Exhaustive minimum over all integer plans (each code's unit goes to one
/// row, row capacities respected). Among equal objectives the first plan in
/// lexicographic column-to-row order wins.
pub fn exact_solve(p: &TransportProblem) -> Result<TransportPlan> {
    let (targets, _) = enumerate_optimum(p, 0.0)?;
    let (m, n) = p.costs.dim();
    let mut pi = Array2::zeros((m, n));
    for (j, &i) in targets.iter().enumerate() {
        pi[[i, j]] = 1.0;
    }
    let objective = row_cost(&p.costs, &targets);
    Ok(TransportPlan {
        pi,
        objective,
        has_null: p.has_null,
        converged: true,
        iterations: 0,
        marginal_error: 0.0,
    })
}

/// Number of integer plans whose objective lies within `tie_tol` of the
/// optimum. More than one means the optimum is tied.
pub fn exact_optimum_multiplicity(p: &TransportProblem, tie_tol: f64) -> Result<usize> {
    enumerate_optimum(p, tie_tol).map(|(_, count)| count)
}

fn row_cost(costs: &Array2<f64>, rows: &[usize]) -> f64 {
    rows.iter().enumerate().map(|(j, &i)| costs[[i, j]]).sum()
}

fn enumerate_optimum(p: &TransportProblem, tie_tol: f64) -> Result<(Vec<usize>, usize)> {
    let (m, n) = p.costs.dim();
    if m > ORACLE_MAX_ROWS || n > ORACLE_MAX_COLS {
        return Err(Error::OracleTooLarge(format!(
            "{m}x{n} exceeds {ORACLE_MAX_ROWS}x{ORACLE_MAX_COLS}"
        )));
    }
    let mut all = Vec::new();
    let mut remaining = p.supplies.clone();
    let mut current = Vec::with_capacity(n);
    collect_plans(p, &mut remaining, &mut current, &mut all);

    let mut best: Option<(f64, &Vec<usize>)> = None;
    for (cost, plan) in &all {
        if best.is_none_or(|(b, _)| *cost < b) {
            best = Some((*cost, plan));
        }
    }
    let (best_cost, best_plan) =
        best.ok_or_else(|| Error::InfeasibleProblem("no integer plan".into()))?;
    let ties = all
        .iter()
        .filter(|(c, _)| (c - best_cost).abs() <= tie_tol)
        .count();
    Ok((best_plan.clone(), ties))
}

fn collect_plans(
    p: &TransportProblem,
    remaining: &mut [u64],
    current: &mut Vec<usize>,
    out: &mut Vec<(f64, Vec<usize>)>,
) {
    let j = current.len();
    if j == p.n_codes() {
        out.push((row_cost(&p.costs, current), current.clone()));
        return;
    }
    for i in 0..remaining.len() {
        if remaining[i] == 0 {
            continue;
        }
        remaining[i] -= 1;
        current.push(i);
        collect_plans(p, remaining, current, out);
        current.pop();
        remaining[i] += 1;
    }
}

/// Per-code argmax over rows. Ties go to the lowest real row; the null row
/// (last, when present) wins only with a strictly larger share.
pub fn harden(plan: &TransportPlan) -> AssignmentPlan {
    let (m, n) = plan.pi.dim();
    let n_real = m - usize::from(plan.has_null);
    let targets = (0..n)
        .map(|j| {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..n_real {
                let v = plan.pi[[i, j]];
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            match best {
                Some((i, v)) if !plan.has_null || v >= plan.pi[[m - 1, j]] => Some(i),
                _ => None,
            }
        })
        .collect();
    AssignmentPlan { targets }
}

/// Result of assigning one half (present or absent) of the control codes.
#[derive(Debug, Clone)]
pub struct HalfAssignment {
    pub plan: AssignmentPlan,
    pub problem: TransportProblem,
    pub converged: bool,
}

pub fn assign_half(mu: &MuMatrix, cfg: &AssignConfig) -> Result<HalfAssignment> {
    let problem = build_problem(mu, cfg.k)?;
    let solved = if cfg.epsilon_scaling > 0.0 && cfg.epsilon_scaling < 1.0 {
        sinkhorn_solve_scaled(
            &problem,
            cfg.epsilon,
            cfg.epsilon_scaling,
            cfg.max_iters,
            cfg.tol,
        )?
    } else {
        sinkhorn_solve(&problem, cfg.epsilon, cfg.max_iters, cfg.tol)?
    };
    Ok(HalfAssignment {
        plan: harden(&solved),
        converged: solved.converged,
        problem,
    })
}

/// Independent present and absent assignments.
pub fn assign_one2set(
    mu_present: &MuMatrix,
    mu_absent: &MuMatrix,
    cfg: &AssignConfig,
) -> Result<(AssignmentPlan, AssignmentPlan)> {
    cfg.validate()?;
    let half = cfg.n_codes / 2;
    if mu_present.n_codes() != half || mu_absent.n_codes() != half {
        return Err(Error::InvalidInput(format!(
            "each half needs {half} codes, got {} and {}",
            mu_present.n_codes(),
            mu_absent.n_codes()
        )));
    }
    let present = assign_half(mu_present, cfg)?;
    let absent = assign_half(mu_absent, cfg)?;
    Ok((present.plan, absent.plan))
}

/// Both halves of one instance, with the intermediate matrices kept for
/// inspection.
#[derive(Debug, Clone)]
pub struct InstanceAssignment {
    pub present: HalfAssignment,
    pub absent: HalfAssignment,
    pub mu_present: MuMatrix,
    pub mu_absent: MuMatrix,
}

/// Full OT pipeline from token-id truths and a generator's prediction set:
/// codes `0..N/2` serve `present`, codes `N/2..N` serve `absent`.
pub fn assign_from_predictions(
    present: &[Vec<TokenId>],
    absent: &[Vec<TokenId>],
    preds: &PredictionSet,
    cfg: &AssignConfig,
) -> Result<InstanceAssignment> {
    cfg.validate()?;
    check_shape(preds, cfg)?;
    let half = cfg.n_codes / 2;
    let mu_of = |truths: &[Vec<TokenId>], range| {
        let mm = matching::match_matrix(truths, &preds.slice(range));
        matching::normalize_mu(&mm, cfg.tau, cfg.axis)
    };
    let mu_present = mu_of(present, 0..half)?;
    let mu_absent = mu_of(absent, half..cfg.n_codes)?;
    Ok(InstanceAssignment {
        present: assign_half(&mu_present, cfg)?,
        absent: assign_half(&mu_absent, cfg)?,
        mu_present,
        mu_absent,
    })
}

pub(crate) fn check_shape(preds: &PredictionSet, cfg: &AssignConfig) -> Result<()> {
    if preds.n_codes() != cfg.n_codes || preds.k() != cfg.k_tokens {
        return Err(Error::InvalidInput(format!(
            "predictions have N={} K={}, config expects N={} K={}",
            preds.n_codes(),
            preds.k(),
            cfg.n_codes,
            cfg.k_tokens
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn mu_from(rows: Array2<f64>, axis: NormAxis) -> MuMatrix {
        MuMatrix {
            mu: rows,
            tau: 1.0,
            axis,
            has_null: true,
        }
    }

    #[test]
    fn supplies_examples() {
        // real row with top-3 (0.4, 0.3, 0.2), 4 codes
        let mu = mu_from(
            array![[0.4, 0.3, 0.2, 0.1], [0.0, 0.0, 0.0, 0.0]],
            NormAxis::OverCodes,
        );
        assert_eq!(build_supplies(&mu, 3).unwrap(), vec![1, 3]);

        let mu = mu_from(
            array![[1.2, 0.9, 0.4, 0.1, 0.0, 0.0], [0.0; 6]],
            NormAxis::OverTruths,
        );
        assert_eq!(build_supplies(&mu, 3).unwrap(), vec![3, 3]);
    }

    #[test]
    fn null_supply_is_complement() {
        // supplies [1, 2] on 6 codes leave 3 for the null row
        let mu = mu_from(
            array![
                [0.5, 0.3, 0.0, 0.0, 0.0, 0.0],
                [0.9, 0.6, 0.3, 0.0, 0.0, 0.0],
                [0.0; 6]
            ],
            NormAxis::OverTruths,
        );
        assert_eq!(build_supplies(&mu, 3).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn unit_row_sum_supplies_one() {
        let third = 1.0 / 3.0;
        let mu = mu_from(
            array![[third, third, third], [0.0, 0.0, 0.0]],
            NormAxis::OverCodes,
        );
        assert_eq!(build_supplies(&mu, 3).unwrap(), vec![1, 2]);
    }

    #[test]
    fn overflow_trims_weakest_rows() {
        // sums 2.5 and 1.5 on 3 codes: 3 + 2 = 5 > 3, the weaker row drops first
        let mu = mu_from(
            array![[1.0, 1.0, 0.5], [0.5, 0.5, 0.5], [0.0, 0.0, 0.0]],
            NormAxis::OverTruths,
        );
        assert_eq!(build_supplies(&mu, 3).unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn too_many_truths() {
        let mu = mu_from(array![[1.0], [1.0], [0.0]], NormAxis::OverCodes);
        assert!(matches!(
            build_supplies(&mu, 3),
            Err(Error::TooManyTruths { .. })
        ));
    }

    #[test]
    fn costs_examples() {
        let mu = mu_from(array![[0.7, 0.3], [0.0, 0.0]], NormAxis::OverCodes);
        assert_eq!(build_costs(&mu), array![[-0.7, -0.3], [0.0, 0.0]]);
        let mu = mu_from(array![[0.0, 0.0]], NormAxis::OverCodes);
        assert_eq!(build_costs(&mu), array![[0.0, 0.0]]);
    }

    #[test]
    fn problem_rejects_infeasible() {
        let costs = array![[0.0, 0.0], [0.0, 0.0]];
        assert!(TransportProblem::new(vec![1, 2], vec![1, 1], costs.clone(), false).is_err());
        assert!(TransportProblem::new(vec![1, 1], vec![2, 0], costs.clone(), false).is_err());
        assert!(TransportProblem::new(
            vec![1, 1],
            vec![1, 1],
            array![[0.0, 0.0], [1.0, 0.0]],
            true
        )
        .is_err());
        assert!(TransportProblem::new(vec![1, 1], vec![1, 1], costs, true).is_ok());
    }

    #[test]
    fn sinkhorn_zero_costs() {
        let p =
            TransportProblem::new(vec![2, 1], vec![1, 1, 1], Array2::zeros((2, 3)), false).unwrap();
        let plan = sinkhorn_solve(&p, 0.01, 1000, 1e-6).unwrap();
        assert!(plan.converged);
        assert!(plan.marginal_error < 1e-6);
        assert_abs_diff_eq!(plan.objective, 0.0);
    }

    #[test]
    fn sinkhorn_identity() {
        let p = TransportProblem::new(
            vec![1, 1],
            vec![1, 1],
            array![[0.0, 1.0], [1.0, 0.0]],
            false,
        )
        .unwrap();
        let plan = sinkhorn_solve(&p, 0.01, 1000, 1e-6).unwrap();
        assert!(plan.pi[[0, 0]] > 1.0 - 1e-9 && plan.pi[[1, 1]] > 1.0 - 1e-9);
        assert!(plan.objective.abs() < 1e-9);
        assert_eq!(harden(&plan).targets, vec![Some(0), Some(1)]);
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let costs = array![[0.0, 1.0, 3.0], [2.0, 0.5, 0.0]];
        let p = TransportProblem::new(vec![2, 1], vec![1, 1, 1], costs, false).unwrap();
        let plan = sinkhorn_solve(&p, 0.1, 1, 1e-15).unwrap();
        assert!(!plan.converged);
        assert_eq!(plan.iterations, 1);
    }

    #[test]
    fn sinkhorn_drops_zero_supply_rows() {
        let costs = array![[-1.0, -0.5], [-0.2, -0.9], [0.0, 0.0]];
        let p = TransportProblem::new(vec![0, 2, 0], vec![1, 1], costs, true).unwrap();
        let plan = sinkhorn_solve(&p, 0.01, 1000, 1e-6).unwrap();
        assert_eq!(plan.pi.row(0).sum(), 0.0);
        assert_eq!(plan.pi.row(2).sum(), 0.0);
        assert_eq!(harden(&plan).targets, vec![Some(1), Some(1)]);
    }

    #[test]
    fn exact_examples() {
        let p = TransportProblem::new(
            vec![1, 1],
            vec![1, 1],
            array![[0.0, 1.0], [1.0, 0.0]],
            false,
        )
        .unwrap();
        let plan = exact_solve(&p).unwrap();
        assert_eq!(plan.pi, array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(plan.objective, 0.0);

        let p = TransportProblem::new(
            vec![2, 1],
            vec![1, 1, 1],
            array![[0.0, 0.0, 5.0], [1.0, 1.0, 0.0]],
            false,
        )
        .unwrap();
        let plan = exact_solve(&p).unwrap();
        assert_eq!(plan.pi, array![[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(plan.objective, 0.0);
        assert_eq!(exact_optimum_multiplicity(&p, 0.0).unwrap(), 1);
    }

    #[test]
    fn exact_guard() {
        let p =
            TransportProblem::new(vec![10], vec![1; 10], Array2::zeros((1, 10)), false).unwrap();
        assert!(matches!(exact_solve(&p), Err(Error::OracleTooLarge(_))));
    }

    #[test]
    fn harden_ties() {
        let plan = TransportPlan {
            pi: array![[0.5], [0.5]],
            objective: 0.0,
            has_null: true,
            converged: true,
            iterations: 0,
            marginal_error: 0.0,
        };
        assert_eq!(harden(&plan).targets, vec![Some(0)]);

        let plan = TransportPlan {
            pi: array![[0.3, 0.0], [0.3, 0.0], [0.4, 1.0]],
            ..plan
        };
        assert_eq!(harden(&plan).targets, vec![None, None]);
    }

    #[test]
    fn null_only_halves() {
        let mu = mu_from(Array2::zeros((1, 10)), NormAxis::OverCodes);
        let (p, a) = assign_one2set(&mu, &mu, &AssignConfig::default()).unwrap();
        assert_eq!(p, AssignmentPlan::all_null(10));
        assert_eq!(a, AssignmentPlan::all_null(10));
    }

    #[test]
    fn default_config_matches_reported_setup() {
        let cfg = AssignConfig::default();
        assert_eq!(
            (cfg.n_codes, cfg.k_tokens, cfg.tau, cfg.k),
            (20, 2, 10.0, 3)
        );
        assert!(cfg.validate().is_ok());
        let odd = AssignConfig { n_codes: 7, ..cfg };
        assert!(odd.validate().is_err());
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg: AssignConfig =
            serde_json::from_str(r#"{"tau": 5.0, "axis": "over_truths", "N": 8}"#).unwrap();
        assert_eq!(cfg.tau, 5.0);
        assert_eq!(cfg.axis, NormAxis::OverTruths);
        assert_eq!(cfg.n_codes, 8);
        assert_eq!(cfg.k, 3);
    }
}
