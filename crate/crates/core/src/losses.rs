//! Training objectives evaluated on externally supplied probabilities.
//!
//! Both losses are negated log-likelihoods, so lower is better.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{PredictionSet, StepDistribution, TokenId};
use crate::selector::{Label, LabelSequence};
use crate::transport::AssignmentPlan;

/// Stand-in for probabilities missing from a sparse distribution (or zero).
pub const PROB_FLOOR: f64 = 1e-12;

/// Down-weighting of codes supervised with the null target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorLossConfig {
    pub lambda_pre: f64,
    pub lambda_abs: f64,
}

impl Default for GeneratorLossConfig {
    fn default() -> Self {
        GeneratorLossConfig {
            lambda_pre: 0.2,
            lambda_abs: 0.1,
        }
    }
}

impl GeneratorLossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v <= 1.0;
        if ok(self.lambda_pre) && ok(self.lambda_abs) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "lambda weights must lie in (0, 1], got {} / {}",
                self.lambda_pre, self.lambda_abs
            )))
        }
    }
}

/// Sum of floored log-probabilities of `tokens` under consecutive steps.
/// Tokens beyond the available steps are ignored.
pub fn sequence_log_likelihood(tokens: &[TokenId], dists: &[StepDistribution]) -> f64 {
    tokens
        .iter()
        .zip(dists)
        .map(|(&id, d)| d.prob(id).max(PROB_FLOOR).ln())
        .sum()
}

/// Negated, lambda-weighted log-likelihood of every code's assigned target.
///
/// Codes `0..N/2` follow `plan_p` and index into `present`; codes `N/2..N`
/// follow `plan_a` and index into `absent`. A null target is the one-token
/// sequence `[null_token]`, weighted by `lambda_pre` or `lambda_abs`.
pub fn generator_loss(
    plan_p: &AssignmentPlan,
    plan_a: &AssignmentPlan,
    preds: &PredictionSet,
    present: &[Vec<TokenId>],
    absent: &[Vec<TokenId>],
    null_token: TokenId,
    cfg: &GeneratorLossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let half = plan_p.targets.len();
    if plan_a.targets.len() != half || preds.n_codes() != 2 * half {
        return Err(Error::InvalidInput(format!(
            "plans cover {} + {} codes, predictions have {}",
            half,
            plan_a.targets.len(),
            preds.n_codes()
        )));
    }
    let halves = [
        (plan_p, present, cfg.lambda_pre, 0),
        (plan_a, absent, cfg.lambda_abs, half),
    ];
    let mut total = 0.0;
    for (plan, truths, lambda, offset) in halves {
        for (j, target) in plan.targets.iter().enumerate() {
            let dists = &preds.codes[offset + j].dists;
            total += match target {
                Some(i) => {
                    let truth = truths.get(*i).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "code {} targets missing truth {i}",
                            offset + j
                        ))
                    })?;
                    sequence_log_likelihood(truth, dists)
                }
                None => lambda * sequence_log_likelihood(&[null_token], dists),
            };
        }
    }
    Ok(-total)
}

/// Label sequence paired with the log-probability of each emitted label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelLogProbs {
    labels: LabelSequence,
    logprobs: Vec<f64>,
}

impl LabelLogProbs {
    pub fn new(labels: LabelSequence, logprobs: Vec<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("empty label sequence".into()));
        }
        if labels.len() != logprobs.len() {
            return Err(Error::LabelLengthMismatch {
                labels: logprobs.len(),
                candidates: labels.len(),
            });
        }
        if logprobs.iter().any(|&l| l.is_nan() || l > 0.0) {
            return Err(Error::InvalidInput("log-probabilities must be <= 0".into()));
        }
        Ok(LabelLogProbs { labels, logprobs })
    }

    pub fn labels(&self) -> &LabelSequence {
        &self.labels
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }
}

/// Class-balanced label loss: the mean negative log-probability of the
/// T positions plus that of the F positions. An absent class contributes 0.
pub fn selector_loss(x: &LabelLogProbs) -> f64 {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (label, &lp) in x.labels.iter().zip(&x.logprobs) {
        let k = usize::from(label == Label::F);
        sums[k] += lp;
        counts[k] += 1;
    }
    let mean = |k: usize| {
        if counts[k] == 0 {
            0.0
        } else {
            sums[k] / counts[k] as f64
        }
    };
    -(mean(0) + mean(1))
}
