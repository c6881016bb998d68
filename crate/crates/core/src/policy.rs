//! Master policies: maps from `(n, x, mu, noise history)` to action
//! distributions, queried one whole state table at a time.

use std::collections::HashMap;
use std::sync::Arc;

use crate::base::{StateDistribution, MASS_TOL};
use crate::error::{Error, Result};
use crate::noise::{NoiseKey, NoiseObservation, NoiseTree};

/// Action probabilities for every state at one `(n, mu, noise)` point,
/// stored row-major as `probs[x * |A| + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    num_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_actions == 0 || probs.len() % num_actions != 0 {
            return Err(Error::Domain(format!(
                "policy table of length {} is not a multiple of {num_actions} actions",
                probs.len()
            )));
        }
        let table = PolicyTable { num_actions, probs };
        table.validate()?;
        Ok(table)
    }

    pub(crate) fn from_raw(num_actions: usize, probs: Vec<f64>) -> Self {
        PolicyTable { num_actions, probs }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        PolicyTable {
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Deterministic table choosing `choice[x]` in each state.
    pub fn deterministic(num_actions: usize, choice: &[usize]) -> Self {
        let mut probs = vec![0.0; choice.len() * num_actions];
        for (x, &a) in choice.iter().enumerate() {
            probs[x * num_actions + a] = 1.0;
        }
        PolicyTable { num_actions, probs }
    }

    pub fn validate(&self) -> Result<()> {
        for x in 0..self.num_states() {
            let row = self.row(x);
            if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
                return Err(Error::InvalidPolicyRow {
                    state: x,
                    reason: format!("entry {p} is not a probability"),
                });
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > MASS_TOL {
                return Err(Error::InvalidPolicyRow {
                    state: x,
                    reason: format!("row sums to {s}"),
                });
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.probs.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.num_actions..(x + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn sup_distance(&self, other: &PolicyTable) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Where in the noise history a query happens.
#[derive(Debug, Clone, Copy)]
pub struct NoiseContext<'a> {
    pub tree: &'a NoiseTree,
    pub node: usize,
}

impl<'a> NoiseContext<'a> {
    pub fn new(tree: &'a NoiseTree, node: usize) -> Self {
        NoiseContext { tree, node }
    }

    pub fn timestep(&self) -> usize {
        self.tree.node(self.node).n
    }

    pub fn xi(&self) -> f64 {
        self.tree.node(self.node).xi
    }

    pub fn observation(&self) -> NoiseObservation {
        self.tree.observation(self.node)
    }

    pub fn key(&self) -> NoiseKey {
        self.observation().key()
    }
}

/// A population-dependent policy `pi_n(a | x, mu, Xi_n)`.
pub trait MasterPolicy {
    /// Action distributions for every state at timestep `n` when the
    /// population is at `mu`.
    fn table(&self, n: usize, mu: &StateDistribution, ctx: NoiseContext<'_>) -> Result<PolicyTable>;

    /// False for policies that ignore `mu` entirely.
    fn population_dependent(&self) -> bool {
        true
    }
}

impl<P: MasterPolicy + ?Sized> MasterPolicy for &P {
    fn table(&self, n: usize, mu: &StateDistribution, ctx: NoiseContext<'_>) -> Result<PolicyTable> {
        (**self).table(n, mu, ctx)
    }

    fn population_dependent(&self) -> bool {
        (**self).population_dependent()
    }
}

impl<P: MasterPolicy + ?Sized> MasterPolicy for Box<P> {
    fn table(&self, n: usize, mu: &StateDistribution, ctx: NoiseContext<'_>) -> Result<PolicyTable> {
        (**self).table(n, mu, ctx)
    }

    fn population_dependent(&self) -> bool {
        (**self).population_dependent()
    }
}

#[derive(Debug, Clone)]
pub struct UniformPolicy {
    pub num_states: usize,
    pub num_actions: usize,
}

impl MasterPolicy for UniformPolicy {
    fn table(&self, _n: usize, _mu: &StateDistribution, _ctx: NoiseContext<'_>) -> Result<PolicyTable> {
        Ok(PolicyTable::uniform(self.num_states, self.num_actions))
    }

    fn population_dependent(&self) -> bool {
        false
    }
}

/// Population-independent policy with one table per noise-tree node.
#[derive(Debug, Clone)]
pub struct NodePolicy {
    tree: Arc<NoiseTree>,
    tables: Vec<PolicyTable>,
    by_key: HashMap<NoiseKey, usize>,
}

impl NodePolicy {
    pub fn new(tree: Arc<NoiseTree>, tables: Vec<PolicyTable>) -> Result<Self> {
        if tables.len() != tree.nodes().len() {
            return Err(Error::Domain(format!(
                "{} tables for a tree of {} nodes",
                tables.len(),
                tree.nodes().len()
            )));
        }
        let by_key = (0..tree.nodes().len())
            .map(|id| (tree.observation(id).key(), id))
            .collect();
        Ok(NodePolicy { tree, tables, by_key })
    }

    pub fn tree(&self) -> &Arc<NoiseTree> {
        &self.tree
    }

    pub fn tables(&self) -> &[PolicyTable] {
        &self.tables
    }

    fn resolve(&self, ctx: NoiseContext<'_>) -> Result<usize> {
        if std::ptr::eq(ctx.tree, &*self.tree) {
            return Ok(ctx.node);
        }
        let key = ctx.key();
        self.by_key.get(&key).copied().ok_or_else(|| Error::PolicyMiss {
            n: ctx.timestep(),
            key: format!("noise history of length {}", key.len()),
        })
    }
}

impl MasterPolicy for NodePolicy {
    fn table(&self, _n: usize, _mu: &StateDistribution, ctx: NoiseContext<'_>) -> Result<PolicyTable> {
        Ok(self.tables[self.resolve(ctx)?].clone())
    }

    fn population_dependent(&self) -> bool {
        false
    }
}

/// Adapter for closures.
pub struct FnPolicy<F> {
    f: F,
    population_dependent: bool,
}

impl<F> FnPolicy<F>
where
    F: Fn(usize, &StateDistribution, NoiseContext<'_>) -> Result<PolicyTable>,
{
    pub fn new(f: F) -> Self {
        FnPolicy {
            f,
            population_dependent: true,
        }
    }

    pub fn independent(f: F) -> Self {
        FnPolicy {
            f,
            population_dependent: false,
        }
    }
}

impl<F> MasterPolicy for FnPolicy<F>
where
    F: Fn(usize, &StateDistribution, NoiseContext<'_>) -> Result<PolicyTable>,
{
    fn table(&self, n: usize, mu: &StateDistribution, ctx: NoiseContext<'_>) -> Result<PolicyTable> {
        (self.f)(n, mu, ctx)
    }

    fn population_dependent(&self) -> bool {
        self.population_dependent
    }
}

/// Action-level mixture of node-indexed policies in which component `k`
/// contributes in proportion to `weights[k] * flows[k][node](x)`. Playing
/// the result reproduces the weighted average of the component flows.
/// States no component reaches fall back to the plain weighted average.
pub fn population_mixture(
    components: &[(&[PolicyTable], &[StateDistribution])],
    weights: &[f64],
) -> Result<Vec<PolicyTable>> {
    let (first, _) = components
        .first()
        .ok_or_else(|| Error::Domain("mixture of zero components".into()))?;
    if weights.len() != components.len() {
        return Err(Error::Domain("mixture weights do not match components".into()));
    }
    let num_nodes = first.len();
    let na = first[0].num_actions();
    let ns = first[0].num_states();
    let wsum: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(num_nodes);
    for node in 0..num_nodes {
        let mut probs = vec![0.0; ns * na];
        for x in 0..ns {
            let mass: f64 = components
                .iter()
                .zip(weights)
                .map(|((_, flows), w)| w * flows[node][x])
                .sum();
            let row = &mut probs[x * na..(x + 1) * na];
            for ((tables, flows), w) in components.iter().zip(weights) {
                let c = if mass > 0.0 { w * flows[node][x] / mass } else { w / wsum };
                if c == 0.0 {
                    continue;
                }
                for (r, p) in row.iter_mut().zip(tables[node].row(x)) {
                    *r += c * p;
                }
            }
        }
        out.push(PolicyTable::from_raw(na, probs));
    }
    Ok(out)
}
