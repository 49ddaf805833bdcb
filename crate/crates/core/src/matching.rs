//! Pairwise matching scores between ground-truths and control-code
//! predictions, and their temperature-normalized form.
//!
//! The raw score of truth `y` against code `j` is the negated sum of the
//! probabilities the code assigns to the truth's tokens over the first
//! `min(|y|, K)` steps, so it lies in `[-K, 0]`. The null target always
//! scores 0.
//!
//! Normalization works on magnitudes `g = -score`: `mu = g^(1/tau)` divided
//! by its sum along the chosen axis.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Tolerance on the total mass of a step distribution.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Sparse per-step predictive distribution. Ids missing from `probs` share
/// `residual`, but lookups of missing ids return 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDistribution {
    pub probs: BTreeMap<TokenId, f64>,
    #[serde(default)]
    pub residual: f64,
}

impl StepDistribution {
    pub fn new(probs: BTreeMap<TokenId, f64>, residual: f64) -> Self {
        StepDistribution { probs, residual }
    }

    /// A distribution placing all mass on `id`.
    pub fn point(id: TokenId) -> Self {
        StepDistribution {
            probs: BTreeMap::from([(id, 1.0)]),
            residual: 0.0,
        }
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs.get(&id).copied().unwrap_or(0.0)
    }

    /// Highest-probability listed id, lowest id on ties.
    pub fn argmax(&self) -> Option<TokenId> {
        let mut best: Option<(TokenId, f64)> = None;
        for (&id, &p) in &self.probs {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((id, p));
            }
        }
        best.map(|(id, _)| id)
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |p: f64| (0.0..=1.0).contains(&p);
        if !in_range(self.residual) || !self.probs.values().all(|&p| in_range(p)) {
            return Err(Error::InvalidInput("probability outside [0, 1]".into()));
        }
        let total: f64 = self.probs.values().sum::<f64>() + self.residual;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "step distribution sums to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// What one control code produced: its K decoded tokens, the K step
/// distributions they were decoded from, and the mean token log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodePrediction {
    pub tokens: Vec<TokenId>,
    pub dists: Vec<StepDistribution>,
    pub avg_logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub codes: Vec<CodePrediction>,
}

impl PredictionSet {
    pub fn new(codes: Vec<CodePrediction>) -> Result<Self> {
        let set = PredictionSet { codes };
        set.validate()?;
        Ok(set)
    }

    /// Number of control codes.
    pub fn n_codes(&self) -> usize {
        self.codes.len()
    }

    /// Tokens predicted per code.
    pub fn k(&self) -> usize {
        self.codes.first().map_or(0, |c| c.dists.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.codes.is_empty() {
            return Err(Error::InvalidInput("prediction set has no codes".into()));
        }
        let k = self.k();
        for (j, code) in self.codes.iter().enumerate() {
            if code.dists.len() != k || code.tokens.len() != k {
                return Err(Error::InvalidInput(format!(
                    "code {j} has {} tokens / {} distributions, expected {k}",
                    code.tokens.len(),
                    code.dists.len()
                )));
            }
            for d in &code.dists {
                d.validate()?;
            }
        }
        Ok(())
    }

    /// Sub-set of codes `range`, e.g. the present or absent half.
    pub fn slice(&self, range: std::ops::Range<usize>) -> PredictionSet {
        PredictionSet {
            codes: self.codes[range].to_vec(),
        }
    }
}

/// Score of `truth` against one code's step distributions. `None` is the
/// null target.
pub fn match_score(truth: Option<&[TokenId]>, dists: &[StepDistribution]) -> f64 {
    let Some(truth) = truth else {
        return 0.0;
    };
    -truth
        .iter()
        .zip(dists)
        .map(|(&id, d)| d.prob(id))
        .sum::<f64>()
}

/// Raw scores, one row per real truth followed by the null row when
/// `has_null` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchMatrix {
    pub scores: Array2<f64>,
    pub has_null: bool,
}

impl MatchMatrix {
    pub fn n_real(&self) -> usize {
        self.scores.nrows() - usize::from(self.has_null)
    }

    pub fn n_codes(&self) -> usize {
        self.scores.ncols()
    }
}

/// Scores every real truth against every code and appends the null row.
pub fn match_matrix(truths: &[Vec<TokenId>], preds: &PredictionSet) -> MatchMatrix {
    let m = truths.len() + 1;
    let n = preds.n_codes();
    let mut scores = Array2::zeros((m, n));
    for (i, truth) in truths.iter().enumerate() {
        for (j, code) in preds.codes.iter().enumerate() {
            scores[[i, j]] = match_score(Some(truth), &code.dists);
        }
    }
    MatchMatrix {
        scores,
        has_null: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormAxis {
    /// Each truth's row sums to 1 over codes.
    #[default]
    OverCodes,
    /// Each code's column sums to 1 over real truths.
    OverTruths,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuMatrix {
    pub mu: Array2<f64>,
    pub tau: f64,
    pub axis: NormAxis,
    pub has_null: bool,
}

impl MuMatrix {
    pub fn n_real(&self) -> usize {
        self.mu.nrows() - usize::from(self.has_null)
    }

    pub fn n_codes(&self) -> usize {
        self.mu.ncols()
    }
}

pub fn normalize_mu(m: &MatchMatrix, tau: f64, axis: NormAxis) -> Result<MuMatrix> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let n_real = m.n_real();
    let n = m.n_codes();
    let inv_tau = 1.0 / tau;
    let mut mu = Array2::zeros(m.scores.raw_dim());
    for i in 0..n_real {
        for j in 0..n {
            // -0.0 and tiny positive rounding noise both clamp to 0
            let g = (-m.scores[[i, j]]).max(0.0);
            mu[[i, j]] = g.powf(inv_tau);
        }
    }
    match axis {
        NormAxis::OverCodes => {
            for i in 0..n_real {
                let mut row = mu.row_mut(i);
                let total: f64 = row.sum();
                if total > 0.0 {
                    row.mapv_inplace(|v| v / total);
                } else {
                    row.fill(1.0 / n as f64);
                }
            }
        }
        NormAxis::OverTruths if n_real > 0 => {
            for j in 0..n {
                let total: f64 = (0..n_real).map(|i| mu[[i, j]]).sum();
                for i in 0..n_real {
                    mu[[i, j]] = if total > 0.0 {
                        mu[[i, j]] / total
                    } else {
                        1.0 / n_real as f64
                    };
                }
            }
        }
        NormAxis::OverTruths => {}
    }
    Ok(MuMatrix {
        mu,
        tau,
        axis,
        has_null: m.has_null,
    })
}
