//! Dynamic programming against a frozen flow: policy evaluation, best
//! response, exact returns, exploitability, a brute-force oracle, and the
//! Lasry-Lions monotonicity probe.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use crate::base::{distribution_key, DistributionKey, StateDistribution};
use crate::envs::{Env, InitialDistributionSet};
use crate::error::{Error, Result};
use crate::meanfield::{csv_err, induced_flow, push_forward, InducedFlow, MeanFieldFlow};
use crate::noise::{NoiseKey, NoiseTree};
use crate::policy::{MasterPolicy, NoiseContext, PolicyTable};

/// Largest number of deterministic policies the brute-force oracle visits.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// State-action values keyed by `(n, distribution key, noise history)`.
#[derive(Debug, Clone, Default)]
pub struct TabularQ {
    num_actions: usize,
    entries: HashMap<(DistributionKey, NoiseKey), Vec<f64>>,
}

impl TabularQ {
    pub fn new(num_actions: usize) -> Self {
        TabularQ {
            num_actions,
            entries: HashMap::new(),
        }
    }

    pub fn insert(&mut self, key: DistributionKey, noise: NoiseKey, values: Vec<f64>) -> Result<()> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i % self.num_actions.max(1) });
        }
        self.entries.insert((key, noise), values);
        Ok(())
    }

    pub fn get(&self, key: &DistributionKey, noise: &NoiseKey) -> Option<&[f64]> {
        self.entries.get(&(key.clone(), noise.clone())).map(|v| v.as_slice())
    }

    /// Values of state `x` at a flow node.
    pub fn row(&self, flow: &MeanFieldFlow, node: usize, x: usize) -> Option<&[f64]> {
        let n = flow.tree().node(node).n;
        let key = distribution_key(flow.at(node), n);
        let noise = flow.tree().observation(node).key();
        self.get(&key, &noise)
            .map(|v| &v[x * self.num_actions..(x + 1) * self.num_actions])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn from_nodes(flow: &MeanFieldFlow, num_actions: usize, q: Vec<Vec<f64>>) -> Result<Self> {
        let mut t = TabularQ::new(num_actions);
        for (id, values) in q.into_iter().enumerate() {
            let n = flow.tree().node(id).n;
            t.insert(
                distribution_key(flow.at(id), n),
                flow.tree().observation(id).key(),
                values,
            )?;
        }
        Ok(t)
    }
}

fn check_flow(env: &Env, flow: &MeanFieldFlow) -> Result<()> {
    if flow.horizon() != env.horizon() {
        return Err(Error::Domain(format!(
            "flow horizon {} differs from env horizon {}",
            flow.horizon(),
            env.horizon()
        )));
    }
    if flow.nodes()[0].len() != env.num_states() {
        return Err(Error::Domain("flow state count does not match the environment".into()));
    }
    Ok(())
}

/// Backward recursion on the noise tree. `choose` turns a node's Q table into
/// the per-state continuation value.
fn backward<F>(env: &Env, flow: &MeanFieldFlow, gamma: f64, mut choose: F) -> Vec<Vec<f64>>
where
    F: FnMut(usize, &[f64], &mut [f64]),
{
    let tree = flow.tree();
    let (ns, na) = (env.num_states(), env.num_actions());
    let count = tree.nodes().len();
    let mut q = vec![Vec::new(); count];
    let mut v: Vec<Vec<f64>> = vec![Vec::new(); count];
    let mut ev = vec![0.0; ns];
    for id in (0..count).rev() {
        let node = tree.node(id);
        let mu = flow.at(id);
        let mut table = env.reward_table(node.n, mu, node.xi);
        if node.n < env.horizon() && gamma != 0.0 {
            ev.iter_mut().for_each(|e| *e = 0.0);
            for &c in &node.children {
                let pc = tree.child_prob(c);
                for (e, vc) in ev.iter_mut().zip(&v[c]) {
                    *e += pc * vc;
                }
            }
            let kernel = env.kernel(node.n, mu, node.xi);
            for x in 0..ns {
                for a in 0..na {
                    let cont: f64 = kernel.row(x, a).map(|(y, p)| p * ev[y]).sum();
                    table[x * na + a] += gamma * cont;
                }
            }
        }
        let mut value = vec![0.0; ns];
        choose(id, &table, &mut value);
        v[id] = value;
        q[id] = table;
    }
    q
}

/// `Q^pi` on every node of the flow for node-indexed policy tables.
pub fn evaluate_tables(env: &Env, flow: &MeanFieldFlow, tables: &[PolicyTable], gamma: f64) -> Result<Vec<Vec<f64>>> {
    check_flow(env, flow)?;
    let na = env.num_actions();
    Ok(backward(env, flow, gamma, |id, q, value| {
        for (x, v) in value.iter_mut().enumerate() {
            *v = tables[id].row(x).iter().zip(&q[x * na..(x + 1) * na]).map(|(p, q)| p * q).sum();
        }
    }))
}

/// `Q*` on every node of the flow (undiscounted).
pub fn best_response_tables(env: &Env, flow: &MeanFieldFlow) -> Result<Vec<Vec<f64>>> {
    check_flow(env, flow)?;
    let na = env.num_actions();
    Ok(backward(env, flow, 1.0, |_, q, value| {
        for (x, v) in value.iter_mut().enumerate() {
            *v = q[x * na..(x + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }))
}

/// Greedy tables over node Q values; ties go to the lowest action index.
pub fn greedy_tables(q: &[Vec<f64>], num_actions: usize) -> Vec<PolicyTable> {
    q.iter()
        .map(|values| {
            let choice: Vec<usize> = values.chunks(num_actions).map(argmax).collect();
            PolicyTable::deterministic(num_actions, &choice)
        })
        .collect()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn query_tables(env: &Env, policy: &dyn MasterPolicy, flow: &MeanFieldFlow) -> Result<Vec<PolicyTable>> {
    let tree = flow.tree();
    (0..tree.nodes().len())
        .map(|id| {
            let t = policy.table(tree.node(id).n, flow.at(id), NoiseContext::new(tree, id))?;
            if t.num_states() != env.num_states() || t.num_actions() != env.num_actions() {
                return Err(Error::Domain("policy table shape does not match the environment".into()));
            }
            Ok(t)
        })
        .collect()
}

/// Q of `policy` along `flow`, discounted by `gamma`.
pub fn evaluate_policy_q(env: &Env, policy: &dyn MasterPolicy, flow: &MeanFieldFlow, gamma: f64) -> Result<TabularQ> {
    let tables = query_tables(env, policy, flow)?;
    TabularQ::from_nodes(flow, env.num_actions(), evaluate_tables(env, flow, &tables, gamma)?)
}

pub fn best_response_q(env: &Env, flow: &MeanFieldFlow) -> Result<TabularQ> {
    TabularQ::from_nodes(flow, env.num_actions(), best_response_tables(env, flow)?)
}

/// Expected reward collected by a representative agent playing
/// `agent[node]` against the frozen flow, following the agent's own state
/// distribution forward. With `path = Some(p)` only that path is followed;
/// otherwise nodes are weighted by the fraction of paths through them.
pub fn agent_return(
    env: &Env,
    flow: &MeanFieldFlow,
    agent: &[PolicyTable],
    start: &StateDistribution,
    path: Option<usize>,
) -> Result<f64> {
    check_flow(env, flow)?;
    let tree = flow.tree();
    let na = env.num_actions();
    let visit: Vec<usize> = match path {
        Some(p) => tree.path_nodes(p).to_vec(),
        None => (0..tree.nodes().len()).collect(),
    };
    let mut nu: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut total = 0.0;
    for id in visit {
        let node = tree.node(id);
        let dist = match node.parent {
            None => start.as_slice().to_vec(),
            Some(p) => {
                let parent = tree.node(p);
                let kernel = env.kernel(parent.n, flow.at(p), parent.xi);
                push_forward(&kernel, &nu[&p], &agent[p])
            }
        };
        let rewards = env.reward_table(node.n, flow.at(id), node.xi);
        let mut stage = 0.0;
        for (x, &m) in dist.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let row = agent[id].row(x);
            stage += m * row.iter().zip(&rewards[x * na..(x + 1) * na]).map(|(p, r)| p * r).sum::<f64>();
        }
        let weight = if path.is_some() { 1.0 } else { node.weight };
        total += weight * stage;
        nu.insert(id, dist);
    }
    Ok(total)
}

/// `J(pi; mu)` from `mu0` against the frozen flow, averaged over the flow's
/// noise paths.
pub fn policy_return(env: &Env, policy: &dyn MasterPolicy, flow: &MeanFieldFlow, mu0: &StateDistribution) -> Result<f64> {
    let tables = query_tables(env, policy, flow)?;
    agent_return(env, flow, &tables, mu0, None)
}

/// `sup_pi' J(pi'; mu)` via dynamic programming.
pub fn best_response_value(env: &Env, flow: &MeanFieldFlow, mu0: &StateDistribution) -> Result<f64> {
    let q = best_response_tables(env, flow)?;
    let greedy = greedy_tables(&q, env.num_actions());
    agent_return(env, flow, &greedy, mu0, None)
}

/// Exhaustive maximum over deterministic Markov policies (one action per
/// node and state).
pub fn brute_force_best_return(env: &Env, flow: &MeanFieldFlow, mu0: &StateDistribution) -> Result<f64> {
    check_flow(env, flow)?;
    let (ns, na) = (env.num_states(), env.num_actions());
    let slots = ns * flow.tree().nodes().len();
    let count = (na as u128).checked_pow(slots as u32).unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let nodes = flow.tree().nodes().len();
    let mut digits = vec![0usize; slots];
    let mut best = f64::NEG_INFINITY;
    loop {
        let tables: Vec<PolicyTable> = (0..nodes)
            .map(|v| PolicyTable::deterministic(na, &digits[v * ns..(v + 1) * ns]))
            .collect();
        best = best.max(agent_return(env, flow, &tables, mu0, None)?);
        let mut i = 0;
        loop {
            if i == slots {
                return Ok(best);
            }
            digits[i] += 1;
            if digits[i] < na {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// One exploitability term.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRecord {
    pub mu0_label: String,
    pub noise_label: String,
    pub br_value: f64,
    pub policy_value: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExploitabilityReport {
    pub iteration: usize,
    pub seed: u64,
    pub records: Vec<GapRecord>,
    /// How the evaluation flows were produced.
    pub flow_kind: &'static str,
}

impl ExploitabilityReport {
    /// Uniform average over all `(mu0, path)` terms.
    pub fn mean(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.gap).sum::<f64>() / self.records.len() as f64
    }

    /// Average gap per initial distribution, in first-seen order.
    pub fn per_mu0(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64, usize)> = Vec::new();
        for r in &self.records {
            match out.iter_mut().find(|e| e.0 == r.mu0_label) {
                Some(e) => {
                    e.1 += r.gap;
                    e.2 += 1;
                }
                None => out.push((r.mu0_label.clone(), r.gap, 1)),
            }
        }
        out.into_iter().map(|(l, g, c)| (l, g / c as f64)).collect()
    }

    pub fn csv_header() -> [&'static str; 7] {
        ["iteration", "seed", "mu0_label", "noise_label", "br_value", "policy_value", "gap"]
    }

    pub fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for r in &self.records {
            w.write_record([
                self.iteration.to_string(),
                self.seed.to_string(),
                r.mu0_label.clone(),
                r.noise_label.clone(),
                r.br_value.to_string(),
                r.policy_value.to_string(),
                r.gap.to_string(),
            ])
            .map_err(csv_err)?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header()).map_err(csv_err)?;
        self.write_rows(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Gap records of an already-induced flow: one per configured noise path.
pub fn gaps_for_flow(env: &Env, induced: &InducedFlow) -> Result<Vec<GapRecord>> {
    let flow = &induced.flow;
    let q = best_response_tables(env, flow)?;
    let greedy = greedy_tables(&q, env.num_actions());
    let tree = flow.tree();
    let mut out = Vec::with_capacity(tree.paths().len());
    for p in 0..tree.paths().len() {
        let start = flow.at(tree.path_nodes(p)[0]);
        let br_value = agent_return(env, flow, &greedy, start, Some(p))?;
        let policy_value = agent_return(env, flow, &induced.tables, start, Some(p))?;
        out.push(GapRecord {
            mu0_label: flow.mu0_label.clone(),
            noise_label: tree.paths()[p].label.clone(),
            br_value,
            policy_value,
            gap: br_value - policy_value,
        });
    }
    Ok(out)
}

/// Exploitability of `policy` from every member of `set`, averaged
/// uniformly over members and over the paths of `tree`.
///
/// On branching trees the best response only sees the revealed history, so
/// single-path terms may be slightly negative; their average per member is
/// never below zero.
pub fn exploitability(
    env: &Env,
    policy: &dyn MasterPolicy,
    set: &InitialDistributionSet,
    tree: &Arc<NoiseTree>,
) -> Result<ExploitabilityReport> {
    let mut records = Vec::new();
    for (label, mu0) in &set.members {
        let induced = induced_flow(env, policy, label, mu0, tree)?;
        records.extend(gaps_for_flow(env, &induced)?);
    }
    Ok(ExploitabilityReport {
        iteration: 0,
        seed: 0,
        records,
        flow_kind: "exact",
    })
}

/// `sum_x (mu(x) - mu'(x)) (rbar(x, mu) - rbar(x, mu'))`; non-positive for
/// monotone interactions.
pub fn monotonicity_probe(env: &Env, mu: &StateDistribution, mu_prime: &StateDistribution, xi: f64) -> Result<f64> {
    if mu.len() != env.num_states() || mu_prime.len() != env.num_states() {
        return Err(Error::Domain("distribution size does not match the state space".into()));
    }
    let mut total = 0.0;
    for x in 0..env.num_states() {
        let r = env
            .interaction_reward(x, mu, xi)
            .ok_or_else(|| Error::Domain("environment declares no interaction reward".into()))?;
        let r_prime = env
            .interaction_reward(x, mu_prime, xi)
            .ok_or_else(|| Error::Domain("environment declares no interaction reward".into()))?;
        total += (mu[x] - mu_prime[x]) * (r - r_prime);
    }
    Ok(total)
}
