#![allow(dead_code)]

pub mod fixtures;

use std::collections::BTreeMap;

use kpgen::bipartite::SquareCost;
use kpgen::losses::GeneratorLossConfig;
use kpgen::matching::{
    normalize_mu, CodePrediction, MatchMatrix, NormAxis, PredictionSet, StepDistribution, TokenId,
};
use kpgen::transport::{
    build_problem, sinkhorn_solve_scaled, AssignConfig, TransportPlan, TransportProblem,
};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random step distribution over ids `0..vocab`, listing a random subset
/// and leaving the rest of the mass as residual.
pub fn random_step(rng: &mut ChaCha8Rng, vocab: TokenId) -> StepDistribution {
    let mut weights: BTreeMap<TokenId, f64> = BTreeMap::new();
    for id in 0..vocab {
        if rng.gen_bool(0.7) {
            weights.insert(id, rng.gen_range(0.01..1.0));
        }
    }
    let residual_w: f64 = rng.gen_range(0.0..0.5);
    let total: f64 = weights.values().sum::<f64>() + residual_w;
    let probs: BTreeMap<_, _> = weights.into_iter().map(|(k, v)| (k, v / total)).collect();
    let residual = (1.0 - probs.values().sum::<f64>()).max(0.0);
    StepDistribution::new(probs, residual)
}

pub fn random_code(rng: &mut ChaCha8Rng, k: usize, vocab: TokenId) -> CodePrediction {
    let dists: Vec<StepDistribution> = (0..k).map(|_| random_step(rng, vocab)).collect();
    let tokens: Vec<TokenId> = dists.iter().map(|d| d.argmax().unwrap_or(0)).collect();
    let avg_logprob = tokens
        .iter()
        .zip(&dists)
        .map(|(&t, d)| d.prob(t).max(1e-12).ln())
        .sum::<f64>()
        / k as f64;
    CodePrediction {
        tokens,
        dists,
        avg_logprob,
    }
}

pub fn random_predictions(
    rng: &mut ChaCha8Rng,
    n_codes: usize,
    k: usize,
    vocab: TokenId,
) -> PredictionSet {
    PredictionSet::new((0..n_codes).map(|_| random_code(rng, k, vocab)).collect()).unwrap()
}

pub fn random_truth(rng: &mut ChaCha8Rng, max_len: usize, vocab: TokenId) -> Vec<TokenId> {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| rng.gen_range(0..vocab)).collect()
}

/// Transport problem built the way the assignment pipeline builds it, from
/// continuous match scores: up to 5 real truths plus the null row, up to 8
/// codes. A single real truth normalized over truths has mu identically 1,
/// which makes every feasible plan optimal, so that axis is only drawn with
/// two or more truths.
pub fn random_pipeline_problem(rng: &mut ChaCha8Rng, tau: f64) -> TransportProblem {
    let n_real = rng.gen_range(0..=5);
    let n = rng.gen_range(n_real.max(1)..=8);
    let mut scores = Array2::zeros((n_real + 1, n));
    for i in 0..n_real {
        for j in 0..n {
            scores[[i, j]] = -rng.gen_range(1e-6..2.0);
        }
    }
    let axis = if n_real < 2 || rng.gen_bool(0.5) {
        NormAxis::OverCodes
    } else {
        NormAxis::OverTruths
    };
    let mu = normalize_mu(
        &MatchMatrix {
            scores,
            has_null: true,
        },
        tau,
        axis,
    )
    .unwrap();
    build_problem(&mu, 3).unwrap()
}

/// Solves with the default assignment configuration.
pub fn default_sinkhorn(p: &TransportProblem) -> TransportPlan {
    let cfg = AssignConfig::default();
    sinkhorn_solve_scaled(p, cfg.epsilon, cfg.epsilon_scaling, cfg.max_iters, cfg.tol).unwrap()
}

pub fn random_square(rng: &mut ChaCha8Rng, n: usize) -> SquareCost {
    SquareCost::new(Array2::from_shape_fn((n, n), |_| rng.gen_range(-5.0..5.0))).unwrap()
}

/// Small integer costs, so ties are common.
pub fn random_integer_square(rng: &mut ChaCha8Rng, n: usize) -> SquareCost {
    SquareCost::new(Array2::from_shape_fn((n, n), |_| {
        f64::from(rng.gen_range(0..6))
    }))
    .unwrap()
}

/// Per-token double loop, written without the library's helpers.
pub fn generator_loss_oracle(
    plan_p: &[Option<usize>],
    plan_a: &[Option<usize>],
    preds: &PredictionSet,
    present: &[Vec<TokenId>],
    absent: &[Vec<TokenId>],
    null: TokenId,
    cfg: &GeneratorLossConfig,
) -> f64 {
    let mut total = 0.0;
    let half = plan_p.len();
    for j in 0..2 * half {
        let (target, truths, lambda) = if j < half {
            (plan_p[j], present, cfg.lambda_pre)
        } else {
            (plan_a[j - half], absent, cfg.lambda_abs)
        };
        let dists = &preds.codes[j].dists;
        match target {
            Some(i) => {
                for t in 0..truths[i].len().min(dists.len()) {
                    let p = dists[t].probs.get(&truths[i][t]).copied().unwrap_or(0.0);
                    total += if p > 1e-12 { p.ln() } else { 1e-12f64.ln() };
                }
            }
            None => {
                let p = dists[0].probs.get(&null).copied().unwrap_or(0.0);
                total += lambda * if p > 1e-12 { p.ln() } else { 1e-12f64.ln() };
            }
        }
    }
    -total
}

/// Class-balanced label loss from the two per-class means.
pub fn selector_loss_oracle(flags: &[bool], logprobs: &[f64]) -> f64 {
    let class = |want: bool| -> Vec<f64> {
        flags
            .iter()
            .zip(logprobs)
            .filter(|(f, _)| **f == want)
            .map(|(_, &l)| l)
            .collect()
    };
    let nll = |xs: Vec<f64>| {
        if xs.is_empty() {
            0.0
        } else {
            -xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    nll(class(true)) + nll(class(false))
}
