//! Forward propagation of the population: exact flows on the noise tree and
//! sampled flows from a finite number of agents.

use std::io::Write;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::base::{StateDistribution, MASS_TOL};
use crate::envs::{inject_adhoc_team, Env, Kernel};
use crate::error::{Error, Result};
use crate::noise::{CommonNoisePath, NoiseTree};
use crate::policy::{MasterPolicy, NoiseContext, PolicyTable};

/// One step of the mean field recursion
/// `mu'(y) = sum_{x,a} mu(x) pi(a|x) p(y|x,a)`.
pub fn propagate(
    env: &Env,
    n: usize,
    mu: &StateDistribution,
    policy: &PolicyTable,
    xi: f64,
) -> Result<StateDistribution> {
    if policy.num_states() != env.num_states() || mu.len() != env.num_states() {
        return Err(Error::Domain("policy or distribution size does not match the state space".into()));
    }
    policy.validate()?;
    let kernel = env.kernel(n, mu, xi);
    checked(push_forward(&kernel, mu.as_slice(), policy), n + 1)
}

pub(crate) fn push_forward(kernel: &Kernel, mu: &[f64], policy: &PolicyTable) -> Vec<f64> {
    let mut next = vec![0.0; mu.len()];
    for (x, &m) in mu.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for (a, &pa) in policy.row(x).iter().enumerate() {
            let w = m * pa;
            if w == 0.0 {
                continue;
            }
            for (y, p) in kernel.row(x, a) {
                next[y] += w * p;
            }
        }
    }
    next
}

pub(crate) fn checked(mass: Vec<f64>, n: usize) -> Result<StateDistribution> {
    let total: f64 = mass.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidDistribution(format!("mass {total} at timestep {n}")));
    }
    Ok(StateDistribution::from_raw(mass))
}

/// Population distributions on every node of a noise tree, started from one
/// initial distribution.
#[derive(Debug, Clone)]
pub struct MeanFieldFlow {
    pub mu0_label: String,
    tree: Arc<NoiseTree>,
    mus: Vec<StateDistribution>,
}

impl MeanFieldFlow {
    pub fn new(mu0_label: impl Into<String>, tree: Arc<NoiseTree>, mus: Vec<StateDistribution>) -> Result<Self> {
        if mus.len() != tree.nodes().len() {
            return Err(Error::Domain(format!(
                "{} distributions for {} tree nodes",
                mus.len(),
                tree.nodes().len()
            )));
        }
        Ok(MeanFieldFlow {
            mu0_label: mu0_label.into(),
            tree,
            mus,
        })
    }

    pub fn tree(&self) -> &Arc<NoiseTree> {
        &self.tree
    }

    pub fn horizon(&self) -> usize {
        self.tree.horizon()
    }

    pub fn at(&self, node: usize) -> &StateDistribution {
        &self.mus[node]
    }

    pub fn nodes(&self) -> &[StateDistribution] {
        &self.mus
    }

    pub fn mu0(&self) -> &StateDistribution {
        &self.mus[self.tree.roots()[0]]
    }

    /// `mu_0 .. mu_{N_T}` along configured path `p`.
    pub fn path(&self, p: usize) -> Vec<&StateDistribution> {
        self.tree.path_nodes(p).iter().map(|&v| &self.mus[v]).collect()
    }

    pub fn num_paths(&self) -> usize {
        self.tree.paths().len()
    }

    /// Writes the flow along path `p` as rows `n, s0, s1, ...`.
    pub fn write_csv<W: Write>(&self, p: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let size = self.mus[0].len();
        let mut header = vec!["n".to_string()];
        header.extend((0..size).map(|x| format!("s{x}")));
        w.write_record(&header).map_err(csv_err)?;
        for (n, mu) in self.path(p).into_iter().enumerate() {
            let mut row = vec![n.to_string()];
            row.extend(mu.as_slice().iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// A flow together with the policy tables the population played on it.
#[derive(Debug, Clone)]
pub struct InducedFlow {
    pub flow: MeanFieldFlow,
    pub tables: Vec<PolicyTable>,
}

/// Exact flow generated by `policy` from `mu0`, with `mu_n` and the revealed
/// noise fed into the policy at every node.
pub fn induced_flow(
    env: &Env,
    policy: &dyn MasterPolicy,
    label: &str,
    mu0: &StateDistribution,
    tree: &Arc<NoiseTree>,
) -> Result<InducedFlow> {
    if tree.horizon() != env.horizon() {
        return Err(Error::Domain(format!(
            "noise horizon {} differs from env horizon {}",
            tree.horizon(),
            env.horizon()
        )));
    }
    if mu0.len() != env.num_states() {
        return Err(Error::Domain("initial distribution size does not match the state space".into()));
    }
    let count = tree.nodes().len();
    let mut mus: Vec<Option<StateDistribution>> = vec![None; count];
    let mut tables = Vec::with_capacity(count);
    // parents always precede children in node order
    for id in 0..count {
        let node = tree.node(id);
        let mu = match node.parent {
            None => mu0.clone(),
            Some(p) => {
                let parent = tree.node(p);
                let mu_p = mus[p].as_ref().expect("parent visited first");
                let kernel = env.kernel(parent.n, mu_p, parent.xi);
                checked(push_forward(&kernel, mu_p.as_slice(), &tables[p]), node.n)?
            }
        };
        let table = policy.table(node.n, &mu, NoiseContext::new(tree, id))?;
        if table.num_states() != env.num_states() || table.num_actions() != env.num_actions() {
            return Err(Error::Domain("policy table shape does not match the environment".into()));
        }
        tables.push(table);
        mus[id] = Some(mu);
    }
    let flow = MeanFieldFlow::new(label, tree.clone(), mus.into_iter().map(|m| m.expect("filled")).collect())?;
    Ok(InducedFlow { flow, tables })
}

/// Flow of a population-independent policy given as one table per node.
pub fn flow_from_tables(
    env: &Env,
    label: &str,
    mu0: &StateDistribution,
    tree: &Arc<NoiseTree>,
    tables: &[PolicyTable],
) -> Result<MeanFieldFlow> {
    let count = tree.nodes().len();
    if tables.len() != count {
        return Err(Error::Domain(format!("{} tables for {count} tree nodes", tables.len())));
    }
    let mut mus: Vec<StateDistribution> = Vec::with_capacity(count);
    for id in 0..count {
        let node = tree.node(id);
        let mu = match node.parent {
            None => mu0.clone(),
            Some(p) => {
                let parent = tree.node(p);
                let kernel = env.kernel(parent.n, &mus[p], parent.xi);
                checked(push_forward(&kernel, mus[p].as_slice(), &tables[p]), node.n)?
            }
        };
        mus.push(mu);
    }
    MeanFieldFlow::new(label, tree.clone(), mus)
}

/// Flow along a single path.
pub fn induced_flow_on_path(
    env: &Env,
    policy: &dyn MasterPolicy,
    label: &str,
    mu0: &StateDistribution,
    path: &CommonNoisePath,
) -> Result<InducedFlow> {
    let tree = Arc::new(NoiseTree::new(std::slice::from_ref(path))?);
    induced_flow(env, policy, label, mu0, &tree)
}

/// Flow along `path` in which `newcomers` join right after the transition
/// out of `join_step`: `mu_{j+1} = (1 - f) P(mu_j) + f newcomers`. The
/// policy keeps seeing the joined population afterwards.
#[allow(clippy::too_many_arguments)]
pub fn flow_with_injection(
    env: &Env,
    policy: &dyn MasterPolicy,
    label: &str,
    mu0: &StateDistribution,
    path: &CommonNoisePath,
    join_step: usize,
    newcomers: &StateDistribution,
    fraction: f64,
) -> Result<MeanFieldFlow> {
    if join_step >= env.horizon() {
        return Err(Error::Config(format!(
            "join step {join_step} must be below the horizon {}",
            env.horizon()
        )));
    }
    let tree = Arc::new(NoiseTree::new(std::slice::from_ref(path))?);
    let nodes = tree.path_nodes(0).to_vec();
    let mut mus = vec![mu0.clone()];
    for n in 0..env.horizon() {
        let mu = &mus[n];
        let table = policy.table(n, mu, NoiseContext::new(&tree, nodes[n]))?;
        let mut next = propagate(env, n, mu, &table, path.at(n))?;
        if n == join_step {
            next = inject_adhoc_team(&next, newcomers, fraction)?;
        }
        mus.push(next);
    }
    MeanFieldFlow::new(label, tree, mus)
}

/// Empirical flow of `n_agents` sampled trajectories sharing the common
/// noise path. The policy sees the empirical histogram.
pub fn empirical_flow(
    env: &Env,
    policy: &dyn MasterPolicy,
    mu0: &StateDistribution,
    n_agents: usize,
    path: &CommonNoisePath,
    seed: u64,
) -> Result<MeanFieldFlow> {
    if n_agents == 0 {
        return Err(Error::Config("n_agents must be at least 1".into()));
    }
    let tree = Arc::new(NoiseTree::new(std::slice::from_ref(path))?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = WeightedIndex::new(mu0.as_slice())
        .map_err(|e| Error::InvalidDistribution(format!("initial distribution: {e}")))?;
    let mut agents: Vec<usize> = (0..n_agents).map(|_| init.sample(&mut rng)).collect();
    let histogram = |agents: &[usize]| {
        let mut h = vec![0.0; env.num_states()];
        for &x in agents {
            h[x] += 1.0;
        }
        h.iter_mut().for_each(|v| *v /= n_agents as f64);
        StateDistribution::from_raw(h)
    };
    let nodes = tree.path_nodes(0).to_vec();
    let mut mus = Vec::with_capacity(nodes.len());
    for (n, &id) in nodes.iter().enumerate() {
        let mu = histogram(&agents);
        if n < env.horizon() {
            let table = policy.table(n, &mu, NoiseContext::new(&tree, id))?;
            let kernel = env.kernel(n, &mu, path.at(n));
            for x in agents.iter_mut() {
                let a = sample_row(table.row(*x), &mut rng);
                let row: Vec<(usize, f64)> = kernel.row(*x, a).collect();
                *x = sample_pairs(&row, &mut rng);
            }
        }
        mus.push(mu);
    }
    MeanFieldFlow::new("empirical", tree, mus)
}

pub(crate) fn sample_row(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub(crate) fn sample_pairs(row: &[(usize, f64)], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(y, p) in row {
        acc += p;
        if u < acc {
            return y;
        }
    }
    row.last().map(|e| e.0).expect("non-empty kernel row")
}
