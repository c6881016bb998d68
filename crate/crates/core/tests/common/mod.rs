//! Independent reference computations for dense tabular games. Nothing here
//! calls the library's flow, DP or exploitability code; only the model
//! description and the log clip are shared.

#![allow(dead_code)]

pub mod criteria;

use mfglab::base::LOG_CLIP;
use mfglab::envs::TabularModel;
use rand::Rng;

/// Stochastic master policy as a plain function of `(n, x, mu)`.
pub type PolicyFn = dyn Fn(usize, usize, &[f64]) -> Vec<f64>;

pub fn reward(m: &TabularModel, horizon: usize, n: usize, x: usize, a: usize, mu: &[f64]) -> f64 {
    let crowd = -m.crowd * mu[x].max(LOG_CLIP).ln();
    match (&m.terminal, n >= horizon) {
        (Some(t), true) => t[x] + crowd,
        _ => m.base_reward[x][a] + crowd,
    }
}

pub fn step(m: &TabularModel, dist: &[f64], probs: &dyn Fn(usize) -> Vec<f64>) -> Vec<f64> {
    let ns = dist.len();
    let mut next = vec![0.0; ns];
    for x in 0..ns {
        if dist[x] == 0.0 {
            continue;
        }
        for (a, p) in probs(x).into_iter().enumerate() {
            for y in 0..ns {
                next[y] += dist[x] * p * m.transitions[x][a][y];
            }
        }
    }
    next
}

/// `mu_0 .. mu_N` generated by `policy`.
pub fn flow(m: &TabularModel, horizon: usize, mu0: &[f64], policy: &PolicyFn) -> Vec<Vec<f64>> {
    let mut out = vec![mu0.to_vec()];
    for n in 0..horizon {
        let mu = out[n].clone();
        let next = step(m, &mu, &|x| policy(n, x, &mu));
        out.push(next);
    }
    out
}

/// Return of an agent playing `agent(n, x)` from `start` against `flow`.
pub fn agent_return(
    m: &TabularModel,
    horizon: usize,
    flow: &[Vec<f64>],
    start: &[f64],
    agent: &dyn Fn(usize, usize) -> Vec<f64>,
) -> f64 {
    let mut dist = start.to_vec();
    let mut total = 0.0;
    for n in 0..=horizon {
        for (x, &w) in dist.iter().enumerate() {
            for (a, p) in agent(n, x).into_iter().enumerate() {
                total += w * p * reward(m, horizon, n, x, a, &flow[n]);
            }
        }
        if n < horizon {
            dist = step(m, &dist, &|x| agent(n, x));
        }
    }
    total
}

/// Maximum return over every deterministic Markov policy.
pub fn enumerate_best(m: &TabularModel, horizon: usize, flow: &[Vec<f64>], start: &[f64]) -> f64 {
    let ns = start.len();
    let na = m.base_reward[0].len();
    let slots = ns * (horizon + 1);
    let total = na.pow(slots as u32);
    let mut best = f64::NEG_INFINITY;
    for code in 0..total {
        let mut choice = vec![0usize; slots];
        let mut c = code;
        for s in choice.iter_mut() {
            *s = c % na;
            c /= na;
        }
        let agent = |n: usize, x: usize| {
            let mut row = vec![0.0; na];
            row[choice[n * ns + x]] = 1.0;
            row
        };
        best = best.max(agent_return(m, horizon, flow, start, &agent));
    }
    best
}

/// Softmax policy whose logits depend on time, state and the local mass.
pub fn random_master_policy(states: usize, actions: usize, horizon: usize, rng: &mut impl Rng) -> Box<PolicyFn> {
    let theta: Vec<f64> = (0..(horizon + 1) * states * actions).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let beta: Vec<f64> = (0..actions).map(|_| rng.gen_range(-3.0..3.0)).collect();
    Box::new(move |n, x, mu| {
        let logits: Vec<f64> = (0..actions)
            .map(|a| theta[(n * states + x) * actions + a] + beta[a] * mu[x])
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    })
}

pub fn random_distribution(states: usize, rng: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..states).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}
