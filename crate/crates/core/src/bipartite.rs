//! Minimum-cost bipartite matching between truths and control codes, the
//! one-to-one assignment baseline.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::matching::{self, PredictionSet, TokenId};
use crate::transport::{check_shape, AssignConfig, AssignmentPlan};

pub const BRUTE_FORCE_MAX: usize = 8;

/// Square matrix of finite costs; `costs[[row, code]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareCost {
    costs: Array2<f64>,
}

impl SquareCost {
    pub fn new(costs: Array2<f64>) -> Result<Self> {
        let (r, c) = costs.dim();
        if r != c {
            return Err(Error::InvalidInput(format!(
                "cost matrix is {r}x{c}, not square"
            )));
        }
        if costs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite cost".into()));
        }
        Ok(SquareCost { costs })
    }

    /// Appends zero-cost null rows below a `rows x n` matrix with `rows <= n`.
    pub fn pad_rows(costs: &Array2<f64>) -> Result<Self> {
        let (r, n) = costs.dim();
        if r > n {
            return Err(Error::TooManyTruths {
                truths: r,
                codes: n,
            });
        }
        let mut square = Array2::zeros((n, n));
        square.slice_mut(ndarray::s![..r, ..]).assign(costs);
        Self::new(square)
    }

    pub fn n(&self) -> usize {
        self.costs.nrows()
    }

    pub fn costs(&self) -> &Array2<f64> {
        &self.costs
    }

    /// Total cost of `perm` (code `j` -> row `perm[j]`), summed over codes in order.
    pub fn cost_of(&self, perm: &[usize]) -> f64 {
        perm.iter()
            .enumerate()
            .map(|(j, &i)| self.costs[[i, j]])
            .sum()
    }
}

/// Hungarian algorithm with row/column potentials, O(n^3).
/// Returns `perm` with `perm[code] = row`.
pub fn hungarian(c: &SquareCost) -> Vec<usize> {
    let n = c.n();
    if n == 0 {
        return Vec::new();
    }
    // 1-based with a sentinel column 0, rows are matched to columns
    let a = |i: usize, j: usize| c.costs[[i - 1, j - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let slack = a(i0, j) - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| matched_row[j] - 1).collect()
}

/// Exhaustive search over all `n!` permutations, visited in lexicographic
/// order; the first minimum wins.
pub fn brute_force_match(c: &SquareCost) -> Result<Vec<usize>> {
    let n = c.n();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::OracleTooLarge(format!(
            "{n}x{n} exceeds {BRUTE_FORCE_MAX}x{BRUTE_FORCE_MAX}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = c.cost_of(&perm);
    while next_permutation(&mut perm) {
        let cost = c.cost_of(&perm);
        if cost < best_cost {
            best_cost = cost;
            best.copy_from_slice(&perm);
        }
    }
    Ok(best)
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let Some(i) = (0..p.len() - 1).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..p.len())
        .rev()
        .find(|&j| p[j] > p[i])
        .expect("successor exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

fn assign_half_with(
    truths: &[Vec<TokenId>],
    preds: &PredictionSet,
    solve: impl Fn(&SquareCost) -> Result<Vec<usize>>,
) -> Result<AssignmentPlan> {
    let mm = matching::match_matrix(truths, preds);
    let n_real = mm.n_real();
    let real = mm.scores.slice(ndarray::s![..n_real, ..]).to_owned();
    let perm = solve(&SquareCost::pad_rows(&real)?)?;
    Ok(AssignmentPlan {
        targets: perm
            .into_iter()
            .map(|i| (i < n_real).then_some(i))
            .collect(),
    })
}

/// One-to-one assignment of a half: real truths take the codes that minimize
/// the summed raw match score, padded null rows take the rest.
pub fn assign_half_bipartite(
    truths: &[Vec<TokenId>],
    preds: &PredictionSet,
) -> Result<AssignmentPlan> {
    assign_half_with(truths, preds, |c| Ok(hungarian(c)))
}

/// [`assign_half_bipartite`] solved by exhaustive search.
pub fn assign_half_brute_force(
    truths: &[Vec<TokenId>],
    preds: &PredictionSet,
) -> Result<AssignmentPlan> {
    assign_half_with(truths, preds, brute_force_match)
}

/// Bipartite counterpart of [`crate::transport::assign_from_predictions`].
pub fn assign_from_predictions(
    present: &[Vec<TokenId>],
    absent: &[Vec<TokenId>],
    preds: &PredictionSet,
    cfg: &AssignConfig,
) -> Result<(AssignmentPlan, AssignmentPlan)> {
    cfg.validate()?;
    check_shape(preds, cfg)?;
    let half = cfg.n_codes / 2;
    Ok((
        assign_half_bipartite(present, &preds.slice(0..half))?,
        assign_half_bipartite(absent, &preds.slice(half..cfg.n_codes))?,
    ))
}
