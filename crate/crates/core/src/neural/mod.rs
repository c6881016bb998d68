//! Master deep OMD: a Q-network trained on Munchausen targets along the
//! flows of the previous iteration's softmax policy.

pub mod checkpoint;
pub mod mlp;

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::base::{clipped_ln, softmax_into, StateDistribution};
use crate::envs::{Env, InitialDistributionSet};
use crate::error::{Error, Result};
use crate::exact::{argmax, exploitability};
use crate::meanfield::{empirical_flow, induced_flow, sample_pairs, sample_row, MeanFieldFlow};
use crate::noise::{NoiseObservation, NoiseTree};
use crate::policy::{MasterPolicy, NoiseContext, PolicyTable};
use crate::solvers::{IterationRecord, SolverTrace};

pub use checkpoint::Checkpoint;
pub use mlp::{gradient_step, Mlp, Optimizer, OptimizerKind};

/// Layout of the network input:
/// `[one-hot(n) | one-hot(x) | mu | padded noise history]`, where the last
/// two segments are optional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputEncoding {
    pub horizon: usize,
    pub num_states: usize,
    pub population: bool,
    pub noise: bool,
}

impl InputEncoding {
    pub fn for_env(env: &Env, population: bool) -> Self {
        InputEncoding {
            horizon: env.horizon(),
            num_states: env.num_states(),
            population,
            noise: env.has_common_noise(),
        }
    }

    pub fn len(&self) -> usize {
        let t = self.horizon + 1;
        let mut len = t + self.num_states;
        if self.population {
            len += self.num_states;
        }
        if self.noise {
            len += t;
        }
        len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode_into(&self, n: usize, x: usize, mu: &StateDistribution, obs: Option<&NoiseObservation>, out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.len(), 0.0);
        let t = self.horizon + 1;
        out[n] = 1.0;
        out[t + x] = 1.0;
        let mut off = t + self.num_states;
        if self.population {
            out[off..off + self.num_states].copy_from_slice(mu.as_slice());
            off += self.num_states;
        }
        if self.noise {
            if let Some(obs) = obs {
                out[off..off + t].copy_from_slice(&obs.padded);
            }
        }
    }

    pub fn encode(&self, n: usize, x: usize, mu: &StateDistribution, obs: Option<&NoiseObservation>) -> Result<Vec<f64>> {
        if n > self.horizon || x >= self.num_states || mu.len() != self.num_states {
            return Err(Error::Domain(format!("cannot encode n={n}, x={x} for this layout")));
        }
        if let Some(o) = obs {
            if o.padded.len() != self.horizon + 1 {
                return Err(Error::Domain("noise observation has the wrong length".into()));
            }
        }
        let mut out = Vec::new();
        self.encode_into(n, x, mu, obs, &mut out);
        Ok(out)
    }

    /// Recovers `(n, x)` from the one-hot segments.
    pub fn decode_time_state(&self, input: &[f64]) -> Option<(usize, usize)> {
        let t = self.horizon + 1;
        let n = input[..t].iter().position(|v| *v == 1.0)?;
        let x = input[t..t + self.num_states].iter().position(|v| *v == 1.0)?;
        Some((n, x))
    }
}

/// Input vector for `(n, x, mu)` and, for common-noise envs, the revealed
/// history.
pub fn encode_input(
    n: usize,
    x: usize,
    mu: &StateDistribution,
    obs: Option<&NoiseObservation>,
    horizon: usize,
) -> Result<Vec<f64>> {
    InputEncoding {
        horizon,
        num_states: mu.len(),
        population: true,
        noise: obs.is_some(),
    }
    .encode(n, x, mu, obs)
}

/// Uniform action with probability `epsilon`, otherwise the lowest-index
/// argmax.
pub fn epsilon_greedy(q_row: &[f64], epsilon: f64, rng: &mut impl Rng) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q_row.len())
    } else {
        argmax(q_row)
    }
}

/// One stored transition. States are referenced through the member's flow
/// for the iteration that produced the sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionSample {
    pub iteration: usize,
    pub member: usize,
    pub node: usize,
    pub x: usize,
    pub a: usize,
    pub r: f64,
    /// `(node, state)` at `n + 1`; `None` for the terminal step.
    pub next: Option<(usize, usize)>,
}

impl TransitionSample {
    pub fn terminal(&self) -> bool {
        self.next.is_none()
    }
}

/// Bounded FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<TransitionSample>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.clamp(1, 1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn reset(&mut self) {
        self.items.clear();
    }

    pub fn push(&mut self, sample: TransitionSample) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(sample);
    }

    /// Uniform draws with replacement.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Vec<TransitionSample> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..count).map(|_| self.items[rng.gen_range(0..self.items.len())]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionSample> {
        self.items.iter()
    }
}

/// Which policy weighs the continuation in the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Continuation {
    /// `softmax(Q_target / tau)` of the iteration being learned.
    Current,
    /// The frozen previous-iteration policy (older Munchausen OMD variant).
    Previous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpec {
    pub tau: f64,
    pub gamma: f64,
    /// Weight of the Munchausen bonus on the taken action.
    pub alpha: f64,
    pub continuation: Continuation,
}

/// Encoded pieces of one sample needed for its target.
#[derive(Debug, Clone, Copy)]
pub struct TargetInput<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub reward: f64,
    /// `None` for terminal samples.
    pub next: Option<&'a [f64]>,
}

fn log_policy(q: &[f64], tau: f64, out: &mut Vec<f64>) {
    out.resize(q.len(), 0.0);
    softmax_into(q, tau, out);
    for p in out.iter_mut() {
        *p = clipped_ln(*p);
    }
}

/// `T = r + alpha tau ln pi_prev(a|s) + gamma sum_b pi_c(b|s') (Q_target(s', b) - tau ln pi_prev(b|s'))`,
/// with logs clipped and `pi_prev = softmax(Q_prev / tau)`.
pub fn munchausen_target(batch: &[TargetInput<'_>], target: &Mlp, prev: &Mlp, spec: &TargetSpec) -> Result<Vec<f64>> {
    let tau = spec.tau;
    let mut lp = Vec::new();
    let mut pc = Vec::new();
    batch
        .iter()
        .map(|s| {
            log_policy(&prev.forward(s.state)?, tau, &mut lp);
            let mut t = s.reward + spec.alpha * tau * lp[s.action];
            if let (Some(next), true) = (s.next, spec.gamma != 0.0) {
                let qt = target.forward(next)?;
                let qp = prev.forward(next)?;
                log_policy(&qp, tau, &mut lp);
                pc.resize(qt.len(), 0.0);
                match spec.continuation {
                    Continuation::Current => softmax_into(&qt, tau, &mut pc),
                    Continuation::Previous => softmax_into(&qp, tau, &mut pc),
                }
                let cont: f64 = pc.iter().zip(&qt).zip(&lp).map(|((p, q), l)| p * (q - tau * l)).sum();
                t += spec.gamma * cont;
            }
            Ok(t)
        })
        .collect()
}

/// `softmax(Q_theta / tau)` as a master policy.
#[derive(Debug, Clone)]
pub struct NeuralPolicy {
    net: Arc<Mlp>,
    tau: f64,
    encoding: InputEncoding,
    num_actions: usize,
}

impl NeuralPolicy {
    pub fn new(net: Arc<Mlp>, tau: f64, encoding: InputEncoding) -> Result<Self> {
        if net.input_len() != encoding.len() {
            return Err(Error::Domain(format!(
                "network input {} does not match encoding length {}",
                net.input_len(),
                encoding.len()
            )));
        }
        let num_actions = net.output_len();
        Ok(NeuralPolicy {
            net,
            tau,
            encoding,
            num_actions,
        })
    }

    pub fn from_checkpoint(cp: Checkpoint, env: &Env) -> Result<Self> {
        if cp.encoding != InputEncoding::for_env(env, cp.encoding.population) || cp.net.output_len() != env.num_actions() {
            return Err(Error::Checkpoint(format!(
                "checkpoint shape does not fit environment {}",
                env.name()
            )));
        }
        NeuralPolicy::new(Arc::new(cp.net), cp.tau, cp.encoding)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            net: (*self.net).clone(),
            tau: self.tau,
            encoding: self.encoding,
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn encoding(&self) -> InputEncoding {
        self.encoding
    }
}

impl MasterPolicy for NeuralPolicy {
    fn table(&self, n: usize, mu: &StateDistribution, ctx: NoiseContext<'_>) -> Result<PolicyTable> {
        let ns = self.encoding.num_states;
        if mu.len() != ns || n > self.encoding.horizon {
            return Err(Error::Domain(format!("query at n={n} outside the network's layout")));
        }
        let obs = self.encoding.noise.then(|| ctx.observation());
        let mut input = Vec::new();
        let mut probs = vec![0.0; ns * self.num_actions];
        for x in 0..ns {
            self.encoding.encode_into(n, x, mu, obs.as_ref(), &mut input);
            let q = self.net.forward(&input)?;
            if let Some(index) = q.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
            softmax_into(&q, self.tau, &mut probs[x * self.num_actions..(x + 1) * self.num_actions]);
        }
        Ok(PolicyTable::from_raw(self.num_actions, probs))
    }

    fn population_dependent(&self) -> bool {
        self.encoding.population
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowMode {
    Exact,
    /// Histogram of this many sampled agents (single-path trees only).
    Empirical { agents: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Episode cap per iteration; `max_steps` usually binds first.
    pub episodes: usize,
    pub max_steps: usize,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub continuation: Continuation,
    pub exploration_fraction: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub batch_size: usize,
    pub gradient_steps: usize,
    pub train_every: usize,
    /// Gradient steps between target syncs.
    pub target_period: usize,
    pub capacity: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub hidden: Vec<usize>,
    pub population_input: bool,
    pub flow: FlowMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 200,
            episodes: 1_000_000,
            max_steps: 30000,
            tau: 50.0,
            gamma: 0.99,
            alpha: 1.0,
            continuation: Continuation::Current,
            exploration_fraction: 0.1,
            eps_start: 1.0,
            eps_end: 0.05,
            batch_size: 32,
            gradient_steps: 1,
            train_every: 1,
            target_period: 4,
            capacity: 30000,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            hidden: vec![64, 64],
            population_input: true,
            flow: FlowMode::Exact,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            bad.push(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            bad.push(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.exploration_fraction > 0.0 && self.exploration_fraction <= 1.0) {
            bad.push(format!(
                "exploration fraction must lie in (0, 1], got {}",
                self.exploration_fraction
            ));
        }
        for (name, v) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&v) {
                bad.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("episodes", self.episodes),
            ("max_steps", self.max_steps),
            ("batch_size", self.batch_size),
            ("gradient_steps", self.gradient_steps),
            ("train_every", self.train_every),
            ("target_period", self.target_period),
            ("capacity", self.capacity),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be positive"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad.push(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !self.alpha.is_finite() {
            bad.push("alpha must be finite".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            bad.push("hidden layer widths must be positive".into());
        }
        if let FlowMode::Empirical { agents: 0 } = self.flow {
            bad.push("empirical flows need at least one agent".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    fn epsilon(&self, step: usize) -> f64 {
        let span = (self.exploration_fraction * self.max_steps as f64).max(1.0);
        let f = (step as f64 / span).min(1.0);
        self.eps_start + f * (self.eps_end - self.eps_start)
    }
}

/// Counters exposed for inspection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainStats {
    pub gradient_steps: u64,
    pub target_syncs: u64,
    /// Version of `theta` (bumped on every gradient step).
    pub theta_version: u64,
    /// `theta_version` at the last target sync.
    pub target_version: u64,
    pub transitions: u64,
}

/// Trainer state across iterations.
pub struct Trainer {
    env: Arc<Env>,
    set: InitialDistributionSet,
    tree: Arc<NoiseTree>,
    cfg: TrainConfig,
    encoding: InputEncoding,
    theta: Mlp,
    target: Mlp,
    prev: Arc<Mlp>,
    opt: Optimizer,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    k: usize,
    stats: TrainStats,
    flows: Vec<MeanFieldFlow>,
    last_loss: f64,
}

impl Trainer {
    pub fn new(env: Arc<Env>, set: &InitialDistributionSet, tree: Arc<NoiseTree>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if tree.horizon() != env.horizon() {
            return Err(Error::Domain("noise tree horizon differs from the environment".into()));
        }
        if set.is_empty() {
            return Err(Error::Config("empty initial distribution set".into()));
        }
        if matches!(cfg.flow, FlowMode::Empirical { .. }) && !tree.is_chain() {
            return Err(Error::Config("empirical flows need a single noise path".into()));
        }
        let encoding = InputEncoding::for_env(&env, cfg.population_input);
        let mut sizes = vec![encoding.len()];
        sizes.extend(&cfg.hidden);
        sizes.push(env.num_actions());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let theta = Mlp::glorot(&sizes, &mut rng)?;
        let opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, theta.num_params());
        Ok(Trainer {
            buffer: ReplayBuffer::new(cfg.capacity),
            target: theta.clone(),
            prev: Arc::new(theta.clone()),
            theta,
            env,
            set: set.clone(),
            tree,
            encoding,
            opt,
            rng,
            k: 0,
            stats: TrainStats::default(),
            flows: Vec::new(),
            last_loss: 0.0,
            cfg,
        })
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn stats(&self) -> TrainStats {
        self.stats
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// `pi^k = softmax(Q_theta / tau)` for the latest completed iteration.
    pub fn policy(&self) -> NeuralPolicy {
        NeuralPolicy::new(self.prev.clone(), self.cfg.tau, self.encoding).expect("shapes fixed at construction")
    }

    fn update_flows(&mut self, policy: &NeuralPolicy) -> Result<()> {
        self.flows.clear();
        for (i, (label, mu0)) in self.set.members.iter().enumerate() {
            let flow = match self.cfg.flow {
                FlowMode::Exact => induced_flow(&self.env, policy, label, mu0, &self.tree)?.flow,
                FlowMode::Empirical { agents } => {
                    let seed = self.cfg.seed ^ ((self.k as u64) << 32) ^ i as u64;
                    let f = empirical_flow(&self.env, policy, mu0, agents, &self.tree.paths()[0], seed)?;
                    MeanFieldFlow::new(label.clone(), self.tree.clone(), f.nodes().to_vec())?
                }
            };
            self.flows.push(flow);
        }
        Ok(())
    }

    fn encode(&self, member: usize, node: usize, x: usize, out: &mut Vec<f64>) {
        let flow = &self.flows[member];
        let n = self.tree.node(node).n;
        let obs = self.encoding.noise.then(|| self.tree.observation(node));
        self.encoding.encode_into(n, x, flow.at(node), obs.as_ref(), out);
    }

    fn train_batch(&mut self) -> Result<()> {
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.rng);
        debug_assert!(batch.iter().all(|s| s.iteration == self.k));
        let mut states = Vec::with_capacity(batch.len());
        let mut nexts = Vec::with_capacity(batch.len());
        for s in &batch {
            let mut v = Vec::new();
            self.encode(s.member, s.node, s.x, &mut v);
            states.push(v);
            nexts.push(s.next.map(|(node, x)| {
                let mut v = Vec::new();
                self.encode(s.member, node, x, &mut v);
                v
            }));
        }
        let inputs: Vec<TargetInput<'_>> = batch
            .iter()
            .zip(&states)
            .zip(&nexts)
            .map(|((s, st), nx)| TargetInput {
                state: st,
                action: s.a,
                reward: s.r,
                next: nx.as_deref(),
            })
            .collect();
        let spec = TargetSpec {
            tau: self.cfg.tau,
            gamma: self.cfg.gamma,
            alpha: self.cfg.alpha,
            continuation: self.cfg.continuation,
        };
        let targets = munchausen_target(&inputs, &self.target, &self.prev, &spec)?;
        let actions: Vec<usize> = batch.iter().map(|s| s.a).collect();
        self.last_loss = gradient_step(&mut self.theta, &mut self.opt, &states, &actions, &targets)?;
        self.stats.gradient_steps += 1;
        self.stats.theta_version += 1;
        if self.stats.gradient_steps % self.cfg.target_period as u64 == 0 {
            self.target = self.theta.clone();
            self.stats.target_syncs += 1;
            self.stats.target_version = self.stats.theta_version;
        }
        Ok(())
    }

    /// One outer iteration: flows under `pi^{k-1}`, buffer reset, rollouts
    /// with periodic gradient steps, then `pi^k`.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let start = Instant::now();
        self.k += 1;
        let previous = self.policy();
        self.update_flows(&previous)?;
        self.buffer.reset();
        let env = self.env.clone();
        let tree = self.tree.clone();
        let horizon = env.horizon();
        let mut steps = 0usize;
        let mut input = Vec::new();
        'episodes: for _ in 0..self.cfg.episodes {
            for member in 0..self.set.len() {
                let path = self.rng.gen_range(0..tree.paths().len());
                let nodes = tree.path_nodes(path).to_vec();
                let mu0 = self.flows[member].at(nodes[0]).clone();
                let mut x = sample_row(mu0.as_slice(), &mut self.rng);
                for n in 0..=horizon {
                    let node = nodes[n];
                    let xi = tree.node(node).xi;
                    self.encode(member, node, x, &mut input);
                    let q = self.theta.forward(&input)?;
                    let a = epsilon_greedy(&q, self.cfg.epsilon(steps), &mut self.rng);
                    let mu = self.flows[member].at(node);
                    let r = env.reward(n, x, a, mu, xi);
                    let next = if n < horizon {
                        let kernel = env.kernel(n, mu, xi);
                        let row: Vec<(usize, f64)> = kernel.row(x, a).collect();
                        Some((nodes[n + 1], sample_pairs(&row, &mut self.rng)))
                    } else {
                        None
                    };
                    self.buffer.push(TransitionSample {
                        iteration: self.k,
                        member,
                        node,
                        x,
                        a,
                        r,
                        next,
                    });
                    steps += 1;
                    self.stats.transitions += 1;
                    if steps % self.cfg.train_every == 0 && self.buffer.len() >= self.cfg.batch_size {
                        for _ in 0..self.cfg.gradient_steps {
                            self.train_batch()?;
                        }
                    }
                    if steps >= self.cfg.max_steps {
                        break 'episodes;
                    }
                    if let Some((_, y)) = next {
                        x = y;
                    }
                }
            }
        }
        self.prev = Arc::new(self.theta.clone());
        let mut report = exploitability(&self.env, &self.policy(), &self.set, &self.tree)?;
        report.iteration = self.k;
        report.seed = self.cfg.seed;
        report.flow_kind = match self.cfg.flow {
            FlowMode::Exact => "exact",
            FlowMode::Empirical { .. } => "empirical",
        };
        Ok(IterationRecord {
            report,
            seconds: start.elapsed().as_secs_f64(),
            cache_entries: self.buffer.len(),
            cache_hits: 0,
        })
    }
}

/// Runs the trainer for `cfg.iterations` iterations.
pub fn train_master_omd(
    env: Arc<Env>,
    set: &InitialDistributionSet,
    tree: Arc<NoiseTree>,
    cfg: TrainConfig,
) -> Result<(NeuralPolicy, SolverTrace)> {
    let iterations = cfg.iterations;
    let mut trainer = Trainer::new(env, set, tree, cfg)?;
    let mut trace = SolverTrace::default();
    for _ in 0..iterations {
        trace.push(trainer.step()?);
    }
    Ok((trainer.policy(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_exploration, make_linear_quadratic, LqNoise, LqParams, RoomLayout, SetRole};
    use crate::noise::{reveal, CommonNoisePath};
    use approx::assert_abs_diff_eq;

    #[test]
    fn encoding_lengths() {
        let env = make_exploration(RoomLayout::OneRoom, 11, 11, 30).unwrap();
        assert_eq!(InputEncoding::for_env(&env, true).len(), 31 + 121 + 121);
        let lq = make_linear_quadratic(
            LqParams {
                noise: LqNoise::Xi1,
                ..LqParams::default()
            },
            30,
        )
        .unwrap();
        assert_eq!(InputEncoding::for_env(&lq, true).len(), 31 + 101 + 101 + 31);
        assert_eq!(InputEncoding::for_env(&lq, false).len(), 31 + 101 + 31);
    }

    #[test]
    fn encoding_round_trips_time_and_state() {
        let mu = StateDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let path = CommonNoisePath::new("p", vec![1.0, -1.0, 0.5]).unwrap();
        for n in 0..=2 {
            let obs = reveal(&path, n).unwrap();
            for x in 0..3 {
                let v = encode_input(n, x, &mu, Some(&obs), 2).unwrap();
                let enc = InputEncoding {
                    horizon: 2,
                    num_states: 3,
                    population: true,
                    noise: true,
                };
                assert_eq!(enc.decode_time_state(&v), Some((n, x)));
                assert_eq!(&v[6..9], mu.as_slice());
                assert_eq!(&v[9..], obs.padded.as_slice());
            }
        }
        let v = encode_input(0, 1, &mu, None, 2).unwrap();
        assert_eq!(&v[..3], &[1.0, 0.0, 0.0]);
        assert!(encode_input(3, 0, &mu, None, 2).is_err());
    }

    #[test]
    fn greedy_choices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(epsilon_greedy(&[0.0, 5.0, 1.0], 0.0, &mut rng), 1);
        assert_eq!(epsilon_greedy(&[2.0, 2.0], 0.0, &mut rng), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[epsilon_greedy(&[3.0, 0.0, 0.0, 0.0], 1.0, &mut rng)] += 1;
        }
        let p = 0.25;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn buffer_is_bounded_fifo() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(TransitionSample {
                iteration: i,
                member: 0,
                node: 0,
                x: 0,
                a: 0,
                r: 0.0,
                next: None,
            });
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.iter().map(|s| s.iteration).collect::<Vec<_>>(), vec![2, 3, 4]);
        b.reset();
        assert!(b.is_empty());
        assert!(b.sample(4, &mut ChaCha8Rng::seed_from_u64(0)).is_empty());
    }

    fn spec(tau: f64, gamma: f64) -> TargetSpec {
        TargetSpec {
            tau,
            gamma,
            alpha: 1.0,
            continuation: Continuation::Current,
        }
    }

    #[test]
    fn terminal_target_by_hand() {
        let zero = Mlp::zeros(&[2, 5]).unwrap();
        let s = [1.0, 0.0];
        let t = munchausen_target(
            &[TargetInput {
                state: &s,
                action: 3,
                reward: 1.0,
                next: None,
            }],
            &zero,
            &zero,
            &spec(50.0, 0.99),
        )
        .unwrap();
        assert_abs_diff_eq!(t[0], 1.0 + 50.0 * 0.2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn zero_discount_drops_continuation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::glorot(&[3, 4, 2], &mut rng).unwrap();
        let s = [0.5, -1.0, 2.0];
        let next = [1.0, 1.0, 1.0];
        let with = |gamma| {
            munchausen_target(
                &[TargetInput {
                    state: &s,
                    action: 0,
                    reward: 0.3,
                    next: Some(&next),
                }],
                &net,
                &net,
                &spec(2.0, gamma),
            )
            .unwrap()[0]
        };
        let terminal = munchausen_target(
            &[TargetInput {
                state: &s,
                action: 0,
                reward: 0.3,
                next: None,
            }],
            &net,
            &net,
            &spec(2.0, 0.0),
        )
        .unwrap()[0];
        assert_eq!(with(0.0), terminal);
        assert_ne!(with(0.9), terminal);
    }

    #[test]
    fn clip_keeps_log_term_finite() {
        // previous policy puts ~e^-1000 on action 1
        let prev = Mlp::from_params(&[1, 2], vec![0.0, -1000.0, 0.0, 0.0]).unwrap();
        let s = [1.0];
        let t = munchausen_target(
            &[TargetInput {
                state: &s,
                action: 1,
                reward: 0.0,
                next: None,
            }],
            &prev,
            &prev,
            &spec(1.0, 1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(t[0], 1e-6f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn continuation_with_equal_nets_is_soft_value() {
        // with target == prev and Current continuation the bracket is
        // sum_b pi(b) (q_b - tau ln pi(b)) = tau ln sum exp(q/tau)
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::glorot(&[2, 3], &mut rng).unwrap();
        let (s, next) = ([0.0, 0.0], [0.7, -0.4]);
        let tau = 0.8;
        let t = munchausen_target(
            &[TargetInput {
                state: &s,
                action: 0,
                reward: 0.0,
                next: Some(&next),
            }],
            &net,
            &net,
            &TargetSpec {
                tau,
                gamma: 1.0,
                alpha: 0.0,
                continuation: Continuation::Current,
            },
        )
        .unwrap()[0];
        let q = net.forward(&next).unwrap();
        let lse = tau * q.iter().map(|v| (v / tau).exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(t, lse, epsilon = 1e-10);
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            iterations: 2,
            max_steps: 400,
            batch_size: 8,
            hidden: vec![8],
            learning_rate: 1e-3,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn tiny_setup() -> (Arc<Env>, InitialDistributionSet, Arc<NoiseTree>) {
        let env = Arc::new(make_exploration(RoomLayout::OneRoom, 3, 3, 4).unwrap());
        let set = InitialDistributionSet::single(SetRole::Training, "corner", StateDistribution::point_mass(9, 0).unwrap());
        let tree = Arc::new(NoiseTree::new(&[CommonNoisePath::silent(4)]).unwrap());
        (env, set, tree)
    }

    #[test]
    fn buffer_only_holds_current_iteration() {
        let (env, set, tree) = tiny_setup();
        let mut trainer = Trainer::new(env, &set, tree, tiny_cfg()).unwrap();
        for k in 1..=3 {
            trainer.step().unwrap();
            assert!(trainer.buffer().iter().all(|s| s.iteration == k));
            assert!(trainer.buffer().iter().all(|s| s.terminal() == (s.node == 4)));
        }
    }

    #[test]
    fn target_lags_theta() {
        let (env, set, tree) = tiny_setup();
        let mut trainer = Trainer::new(env, &set, tree, tiny_cfg()).unwrap();
        trainer.step().unwrap();
        let st = trainer.stats();
        assert!(st.gradient_steps > 0);
        assert!(st.target_version <= st.theta_version);
        assert_eq!(st.target_syncs, st.gradient_steps / 4);
        assert_eq!(st.target_version, st.target_syncs * 4);
    }

    #[test]
    fn zero_iterations_returns_untrained_softmax() {
        let (env, set, tree) = tiny_setup();
        let cfg = TrainConfig {
            iterations: 0,
            ..tiny_cfg()
        };
        let (policy, trace) = train_master_omd(env.clone(), &set, tree.clone(), cfg.clone()).unwrap();
        assert!(trace.records.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let sizes = [InputEncoding::for_env(&env, true).len(), 8, 5];
        assert_eq!(policy.net(), &Mlp::glorot(&sizes, &mut rng).unwrap());
        let report = exploitability(&env, &policy, &set, &tree).unwrap();
        assert!(report.mean().is_finite());
    }

    #[test]
    fn training_is_deterministic() {
        let (env, set, tree) = tiny_setup();
        let run = || train_master_omd(env.clone(), &set, tree.clone(), tiny_cfg()).unwrap();
        let (p1, t1) = run();
        let (p2, t2) = run();
        assert_eq!(p1.net(), p2.net());
        assert_eq!(t1.gaps(), t2.gaps());
    }

    #[test]
    fn checkpoint_restores_policy() {
        let (env, set, tree) = tiny_setup();
        let (policy, _) = train_master_omd(env.clone(), &set, tree.clone(), tiny_cfg()).unwrap();
        let bytes = policy.checkpoint().encode();
        let restored = NeuralPolicy::from_checkpoint(Checkpoint::decode(&bytes).unwrap(), &env).unwrap();
        let mu = StateDistribution::uniform(env.states());
        let ctx = NoiseContext::new(&tree, 0);
        assert_eq!(policy.table(0, &mu, ctx).unwrap(), restored.table(0, &mu, ctx).unwrap());
        let other = make_exploration(RoomLayout::OneRoom, 5, 5, 4).unwrap();
        assert!(NeuralPolicy::from_checkpoint(Checkpoint::decode(&bytes).unwrap(), &other).is_err());
    }

    #[test]
    fn config_validation_lists_every_problem() {
        let cfg = TrainConfig {
            tau: -1.0,
            batch_size: 0,
            exploration_fraction: 0.0,
            ..TrainConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("tau") && msg.contains("batch_size") && msg.contains("exploration"));
    }
}
