//! Lineage-exact master OMD.
//!
//! The iteration-`i` policy at an arbitrary `(node, mu)` is defined by the
//! flow that `pi^{i-1}` generates from `(node, mu)` and the backward value
//! recursion along it. Evaluating it therefore recurses into iteration
//! `i - 1` at every node of the continuation. Results are memoized on
//! `(iteration, node, distribution key)`.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;
use std::time::Instant;

use crate::base::{clipped_ln, distribution_key, softmax_into, DistributionKey, StateDistribution};
use crate::envs::{Env, InitialDistributionSet};
use crate::error::{Error, Result};
use crate::exact::{exploitability, ExploitabilityReport};
use crate::meanfield::{checked, induced_flow, push_forward};
use crate::noise::{NoiseKey, NoiseTree};
use crate::policy::{MasterPolicy, NoiseContext, PolicyTable};

use super::{validate_inputs, IterationRecord, SolverTrace};

/// Default refusal threshold for the estimated number of cache entries.
pub const DEFAULT_LINEAGE_BOUND: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineageMode {
    /// `Q~ = r + tau ln pi^{i-1} + E[sum pi^i (Q~' - tau ln pi'^{i-1})]`.
    Munchausen,
    /// `pi^i = softmax(sum_{j<=i} Q^j / tau)` with `Q^i` evaluated under the
    /// new policy at the next step.
    ExplicitSum,
}

#[derive(Debug, Clone)]
pub struct LineageConfig {
    pub tau: f64,
    pub bound: u128,
    pub cache: bool,
}

impl LineageConfig {
    pub fn new(tau: f64) -> Self {
        LineageConfig {
            tau,
            bound: DEFAULT_LINEAGE_BOUND,
            cache: true,
        }
    }
}

#[derive(Debug)]
struct Entry {
    pi: PolicyTable,
    /// Per-state value handed to the parent's backward step.
    cont: Vec<f64>,
    /// Accumulated `sum Q^j` (explicit mode only).
    sum: Option<Vec<f64>>,
}

type CacheKey = (u32, u32, DistributionKey);

/// Estimated number of memoized entries for `iterations` iterations from
/// `members` initial distributions, including evaluation of the last
/// policy along its own flow.
pub fn estimate_lineage_entries(iterations: usize, tree: &NoiseTree, members: usize) -> u128 {
    let k = iterations;
    let roots = tree.roots().len() as u128;
    let mut f = vec![1u128; k + 1];
    let mut total = (k as u128).saturating_mul(roots);
    for n in 1..=tree.horizon() {
        let level: u128 = f
            .iter()
            .enumerate()
            .map(|(j, &c)| c.saturating_mul((j + 1).min(k) as u128))
            .fold(0u128, |a, b| a.saturating_add(b));
        total = total.saturating_add(level.saturating_mul(tree.nodes_at(n) as u128));
        let mut next = vec![0u128; k + 1];
        let mut acc = 0u128;
        for j in (0..=k).rev() {
            acc = acc.saturating_add(f[j]);
            next[j] = acc;
        }
        f = next;
    }
    total.saturating_mul(members as u128)
}

pub struct LineageEngine {
    env: Arc<Env>,
    tree: Arc<NoiseTree>,
    mode: LineageMode,
    cfg: LineageConfig,
    uniform: Rc<Entry>,
    cache: RefCell<HashMap<CacheKey, Rc<Entry>>>,
    by_key: HashMap<NoiseKey, usize>,
    hits: Cell<u64>,
    computed: Cell<u64>,
}

impl LineageEngine {
    pub fn new(env: Arc<Env>, tree: Arc<NoiseTree>, mode: LineageMode, cfg: LineageConfig) -> Result<Self> {
        if !(cfg.tau > 0.0 && cfg.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", cfg.tau)));
        }
        if tree.horizon() != env.horizon() {
            return Err(Error::Domain("noise horizon differs from env horizon".into()));
        }
        let (ns, na) = (env.num_states(), env.num_actions());
        let uniform = Rc::new(Entry {
            pi: PolicyTable::uniform(ns, na),
            cont: vec![0.0; ns],
            sum: Some(vec![0.0; ns * na]),
        });
        let by_key = (0..tree.nodes().len()).map(|id| (tree.observation(id).key(), id)).collect();
        Ok(LineageEngine {
            env,
            tree,
            mode,
            cfg,
            uniform,
            cache: RefCell::new(HashMap::new()),
            by_key,
            hits: Cell::new(0),
            computed: Cell::new(0),
        })
    }

    pub fn env(&self) -> &Arc<Env> {
        &self.env
    }

    pub fn tree(&self) -> &Arc<NoiseTree> {
        &self.tree
    }

    pub fn mode(&self) -> LineageMode {
        self.mode
    }

    /// Refuses when running `iterations` iterations is estimated to exceed
    /// the configured bound.
    pub fn check_budget(&self, iterations: usize, members: usize) -> Result<()> {
        let estimated = estimate_lineage_entries(iterations, &self.tree, members);
        if estimated > self.cfg.bound {
            return Err(Error::LineageGuard {
                estimated,
                bound: self.cfg.bound,
            });
        }
        Ok(())
    }

    pub fn cache_len(&self) -> usize {
        self.cache.borrow().len()
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits.get()
    }

    /// Number of entries computed, cached or not.
    pub fn computed(&self) -> u64 {
        self.computed.get()
    }

    pub fn clear_cache(&self) {
        self.cache.borrow_mut().clear();
    }

    pub fn policy(&self, iteration: usize) -> LineagePolicy<'_> {
        LineagePolicy { engine: self, iteration }
    }

    /// `pi^k` at `(node, mu)`.
    pub fn table(&self, iteration: usize, node: usize, mu: &StateDistribution) -> Result<PolicyTable> {
        if mu.len() != self.env.num_states() {
            return Err(Error::Domain("distribution size does not match the state space".into()));
        }
        Ok(self.entry(iteration, node, mu)?.pi.clone())
    }

    /// Exploitability of `pi^k` from every member of `set`.
    pub fn report(&self, iteration: usize, set: &InitialDistributionSet) -> Result<ExploitabilityReport> {
        let mut rep = exploitability(&self.env, &self.policy(iteration), set, &self.tree)?;
        rep.iteration = iteration;
        Ok(rep)
    }

    fn lookup(&self, key: &CacheKey) -> Option<Rc<Entry>> {
        if !self.cfg.cache {
            return None;
        }
        let found = self.cache.borrow().get(key).cloned();
        if found.is_some() {
            self.hits.set(self.hits.get() + 1);
        }
        found
    }

    fn store(&self, key: CacheKey, entry: &Rc<Entry>) {
        self.computed.set(self.computed.get() + 1);
        if self.cfg.cache {
            self.cache.borrow_mut().insert(key, entry.clone());
        }
    }

    fn key(&self, iteration: usize, node: usize, mu: &StateDistribution) -> CacheKey {
        (iteration as u32, node as u32, distribution_key(mu, self.tree.node(node).n))
    }

    fn entry(&self, i: usize, v: usize, mu: &StateDistribution) -> Result<Rc<Entry>> {
        if i == 0 {
            return Ok(self.uniform.clone());
        }
        if let Some(e) = self.lookup(&self.key(i, v, mu)) {
            return Ok(e);
        }
        let order = self.tree.subtree(v);
        let pos: HashMap<usize, usize> = order.iter().enumerate().map(|(j, &u)| (u, j)).collect();
        let m = order.len();
        let mut mus: Vec<Option<StateDistribution>> = vec![None; m];
        let mut prev: Vec<Option<Rc<Entry>>> = vec![None; m];
        let mut done: Vec<Option<Rc<Entry>>> = vec![None; m];
        mus[0] = Some(mu.clone());

        // forward: continuation of mu under pi^{i-1}, stopping at known entries
        for j in 0..m {
            let Some(mu_u) = mus[j].take() else { continue };
            let u = order[j];
            if j > 0 {
                if let Some(e) = self.lookup(&self.key(i, u, &mu_u)) {
                    done[j] = Some(e);
                    continue;
                }
            }
            let p = self.entry(i - 1, u, &mu_u)?;
            let node = self.tree.node(u);
            if node.n < self.env.horizon() {
                let kernel = self.env.kernel(node.n, &mu_u, node.xi);
                let next = checked(push_forward(&kernel, mu_u.as_slice(), &p.pi), node.n + 1)?;
                for &c in &node.children {
                    mus[pos[&c]] = Some(next.clone());
                }
            }
            prev[j] = Some(p);
            mus[j] = Some(mu_u);
        }

        // backward: value recursion along the continuation
        let ns = self.env.num_states();
        for j in (0..m).rev() {
            let Some(p) = prev[j].take() else { continue };
            let u = order[j];
            let node = self.tree.node(u);
            let mu_u = mus[j].take().expect("visited node keeps its distribution");
            let mut ev = vec![0.0; ns];
            for &c in &node.children {
                let child = done[pos[&c]].as_ref().expect("children resolved before parents");
                let pc = self.tree.child_prob(c);
                for (e, v) in ev.iter_mut().zip(&child.cont) {
                    *e += pc * v;
                }
            }
            let e = Rc::new(self.local(node.n, node.xi, &mu_u, &p, &ev)?);
            self.store(self.key(i, u, &mu_u), &e);
            done[j] = Some(e);
        }
        Ok(done[0].take().expect("root entry computed"))
    }

    fn local(&self, n: usize, xi: f64, mu: &StateDistribution, prev: &Entry, ev: &[f64]) -> Result<Entry> {
        let env = &*self.env;
        let (ns, na) = (env.num_states(), env.num_actions());
        let tau = self.cfg.tau;
        let mut q = env.reward_table(n, mu, xi);
        if n < env.horizon() {
            let kernel = env.kernel(n, mu, xi);
            for x in 0..ns {
                for a in 0..na {
                    q[x * na + a] += kernel.row(x, a).map(|(y, p)| p * ev[y]).sum::<f64>();
                }
            }
        }
        let mut pi = vec![0.0; ns * na];
        let mut cont = vec![0.0; ns];
        let sum = match self.mode {
            LineageMode::Munchausen => {
                let lp: Vec<f64> = prev.pi.as_slice().iter().map(|&p| tau * clipped_ln(p)).collect();
                for (qv, l) in q.iter_mut().zip(&lp) {
                    *qv += l;
                }
                finite(&q, na)?;
                for x in 0..ns {
                    let r = x * na..(x + 1) * na;
                    softmax_into(&q[r.clone()], tau, &mut pi[r.clone()]);
                    cont[x] = r.map(|k| pi[k] * (q[k] - lp[k])).sum();
                }
                None
            }
            LineageMode::ExplicitSum => {
                let prev_sum = prev.sum.as_ref().expect("explicit entries carry sums");
                let s: Vec<f64> = prev_sum.iter().zip(&q).map(|(a, b)| a + b).collect();
                finite(&s, na)?;
                for x in 0..ns {
                    let r = x * na..(x + 1) * na;
                    softmax_into(&s[r.clone()], tau, &mut pi[r.clone()]);
                    cont[x] = r.map(|k| pi[k] * q[k]).sum();
                }
                Some(s)
            }
        };
        Ok(Entry {
            pi: PolicyTable::from_raw(na, pi),
            cont,
            sum,
        })
    }
}

fn finite(values: &[f64], na: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite { index: i % na }),
        None => Ok(()),
    }
}

/// `pi^k` of a lineage engine as a master policy.
pub struct LineagePolicy<'a> {
    engine: &'a LineageEngine,
    iteration: usize,
}

impl LineagePolicy<'_> {
    pub fn iteration(&self) -> usize {
        self.iteration
    }
}

impl MasterPolicy for LineagePolicy<'_> {
    fn table(&self, n: usize, mu: &StateDistribution, ctx: NoiseContext<'_>) -> Result<PolicyTable> {
        let node = if std::ptr::eq(ctx.tree, &*self.engine.tree) {
            ctx.node
        } else {
            let key = ctx.key();
            *self.engine.by_key.get(&key).ok_or_else(|| Error::PolicyMiss {
                n,
                key: format!("unseen noise history of length {}", key.len()),
            })?
        };
        if self.engine.tree.node(node).n != n {
            return Err(Error::Domain(format!("timestep {n} does not match the noise node")));
        }
        self.engine.table(self.iteration, node, mu)
    }
}

fn run_lineage(
    env: Arc<Env>,
    set: &InitialDistributionSet,
    tree: &Arc<NoiseTree>,
    iterations: usize,
    cfg: LineageConfig,
    mode: LineageMode,
) -> Result<(LineageEngine, SolverTrace)> {
    validate_inputs(&env, set, tree)?;
    let engine = LineageEngine::new(env, tree.clone(), mode, cfg)?;
    engine.check_budget(iterations, set.len())?;
    let mut trace = SolverTrace::default();
    for k in 1..=iterations {
        let start = Instant::now();
        let report = engine.report(k, set)?;
        trace.push(IterationRecord {
            report,
            seconds: start.elapsed().as_secs_f64(),
            cache_entries: engine.cache_len(),
            cache_hits: engine.cache_hits(),
        });
    }
    Ok((engine, trace))
}

/// Tabular master OMD with the Munchausen recursion, evaluated exactly at
/// every distribution the lineage reaches.
pub fn master_omd_reference(
    env: Arc<Env>,
    set: &InitialDistributionSet,
    tree: &Arc<NoiseTree>,
    iterations: usize,
    cfg: LineageConfig,
) -> Result<(LineageEngine, SolverTrace)> {
    run_lineage(env, set, tree, iterations, cfg, LineageMode::Munchausen)
}

/// Same lineage, policy from the explicit running sum of Q functions.
pub fn explicit_sum_omd_reference(
    env: Arc<Env>,
    set: &InitialDistributionSet,
    tree: &Arc<NoiseTree>,
    iterations: usize,
    cfg: LineageConfig,
) -> Result<(LineageEngine, SolverTrace)> {
    run_lineage(env, set, tree, iterations, cfg, LineageMode::ExplicitSum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    /// Max sup-norm policy difference over visited flow states.
    pub residual: f64,
    pub per_iteration: Vec<f64>,
    /// Number of `(iteration, member, node)` states compared.
    pub visited: usize,
    pub divergence: Option<String>,
    pub entries: [usize; 2],
}

struct Visited {
    flows: Vec<Vec<StateDistribution>>,
    tables: Vec<Vec<PolicyTable>>,
}

fn visit(
    env: &Arc<Env>,
    set: &InitialDistributionSet,
    tree: &Arc<NoiseTree>,
    iterations: usize,
    cfg: &LineageConfig,
    mode: LineageMode,
) -> Result<(Vec<Visited>, usize)> {
    let engine = LineageEngine::new(env.clone(), tree.clone(), mode, cfg.clone())?;
    engine.check_budget(iterations, set.len())?;
    let mut out = Vec::with_capacity(iterations);
    for k in 1..=iterations {
        let mut v = Visited {
            flows: Vec::new(),
            tables: Vec::new(),
        };
        for (label, mu0) in &set.members {
            let induced = induced_flow(env, &engine.policy(k - 1), label, mu0, tree)?;
            let nodes = induced.flow.nodes().to_vec();
            let tables = (0..nodes.len())
                .map(|u| engine.table(k, u, &nodes[u]))
                .collect::<Result<Vec<_>>>()?;
            v.flows.push(nodes);
            v.tables.push(tables);
        }
        out.push(v);
    }
    Ok((out, engine.cache_len()))
}

/// Runs the Munchausen and explicit-sum lineages on identical inputs and
/// compares `pi^k` on the flows `mu^k` both generate. The two runs are
/// sequential so that only one cache is alive at a time.
pub fn theorem1_residual(
    env: Arc<Env>,
    set: &InitialDistributionSet,
    tree: &Arc<NoiseTree>,
    iterations: usize,
    cfg: LineageConfig,
) -> Result<Theorem1Report> {
    validate_inputs(&env, set, tree)?;
    let (m, m_entries) = visit(&env, set, tree, iterations, &cfg, LineageMode::Munchausen)?;
    let (e, e_entries) = visit(&env, set, tree, iterations, &cfg, LineageMode::ExplicitSum)?;
    let mut rep = Theorem1Report {
        residual: 0.0,
        per_iteration: Vec::with_capacity(iterations),
        visited: 0,
        divergence: None,
        entries: [m_entries, e_entries],
    };
    for (k, (a, b)) in m.iter().zip(&e).enumerate() {
        let mut worst: f64 = 0.0;
        for (member, (fa, fb)) in a.flows.iter().zip(&b.flows).enumerate() {
            for (u, (ma, mb)) in fa.iter().zip(fb).enumerate() {
                let gap = ma.sup_distance(mb);
                if gap > 1e-9 {
                    rep.residual = 1.0;
                    rep.divergence = Some(format!(
                        "flows differ by {gap} at iteration {}, member {}, node {u}",
                        k + 1,
                        set.members[member].0
                    ));
                    return Ok(rep);
                }
                worst = worst.max(a.tables[member][u].sup_distance(&b.tables[member][u]));
                rep.visited += 1;
            }
        }
        rep.per_iteration.push(worst);
        rep.residual = rep.residual.max(worst);
    }
    Ok(rep)
}
