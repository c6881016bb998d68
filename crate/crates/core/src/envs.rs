//! Finite mean field game environments: crowd-averse exploration on grids,
//! the beach bar, the discretized linear-quadratic model and hand-built
//! tabular games, together with the initial-distribution sets used for
//! training and testing.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::base::{clipped_ln, ActionSpace, Geometry, StateDistribution, StateSpace};
use crate::error::{Error, Result};
use crate::noise::{self, CommonNoisePath, LqNoiseVariant};

/// Probability that the intended move is not perturbed.
pub const NO_PERTURBATION: f64 = 0.9;
/// Probability of each of the four perturbation directions.
pub const PERTURBATION: f64 = 0.025;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoomLayout {
    OneRoom,
    FourRooms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeachDimension {
    OneD,
    TwoD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LqNoise {
    None,
    Xi1,
    Xi2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqParams {
    pub half_width: usize,
    pub max_move: usize,
    pub sigma: f64,
    pub q: f64,
    pub kappa: f64,
    pub c_term: f64,
    pub delta: f64,
    pub rho: f64,
    pub noise: LqNoise,
}

impl Default for LqParams {
    fn default() -> Self {
        LqParams {
            half_width: 50,
            max_move: 3,
            sigma: 1.0,
            q: 0.01,
            kappa: 0.5,
            c_term: 1.0,
            delta: 1.0,
            rho: 0.5,
            noise: LqNoise::None,
        }
    }
}

/// Dense time-homogeneous game used for oracles and small instances.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    /// `transitions[x][a]` is the next-state distribution.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `base_reward[x][a]`.
    pub base_reward: Vec<Vec<f64>>,
    /// Weight of the `-ln mu(x)` crowd term.
    pub crowd: f64,
    /// Replaces the stage reward at the final timestep when present.
    pub terminal: Option<Vec<f64>>,
}

impl TabularModel {
    /// Random instance: Dirichlet-like rows, base rewards in [-1, 1].
    pub fn random(states: usize, actions: usize, crowd: f64, rng: &mut impl Rng) -> Self {
        let transitions = (0..states)
            .map(|_| {
                (0..actions)
                    .map(|_| {
                        let w: Vec<f64> = (0..states).map(|_| -rng.gen::<f64>().max(1e-12).ln()).collect();
                        let s: f64 = w.iter().sum();
                        w.into_iter().map(|v| v / s).collect()
                    })
                    .collect()
            })
            .collect();
        let base_reward = (0..states)
            .map(|_| (0..actions).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        TabularModel {
            transitions,
            base_reward,
            crowd,
            terminal: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseProcess {
    /// Bar open/closed switch sampled in `window.0..window.1`.
    Closure { window: (usize, usize) },
    /// Deterministic step noise for the LQ model.
    LqStep(LqNoiseVariant),
}

#[derive(Debug, Clone)]
enum Model {
    Exploration,
    BeachBar { attractiveness: Vec<f64>, closure: bool },
    LinearQuadratic(LqParams),
    Tabular(TabularModel),
}

/// Sparse transition kernel; row `x * |A| + a` lists `(x', p)`.
#[derive(Debug, Clone)]
pub struct Kernel {
    num_actions: usize,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    probs: Vec<f64>,
}

impl Kernel {
    fn from_rows(num_actions: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut targets = Vec::new();
        let mut probs = Vec::new();
        offsets.push(0);
        for row in rows {
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (t, p) in row {
                match merged.iter_mut().find(|(u, _)| *u == t) {
                    Some(e) => e.1 += p,
                    None => merged.push((t, p)),
                }
            }
            merged.sort_by_key(|e| e.0);
            for (t, p) in merged {
                targets.push(t as u32);
                probs.push(p);
            }
            offsets.push(targets.len());
        }
        Kernel {
            num_actions,
            offsets,
            targets,
            probs,
        }
    }

    #[inline]
    pub fn row(&self, x: usize, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = x * self.num_actions + a;
        let (lo, hi) = (self.offsets[r], self.offsets[r + 1]);
        self.targets[lo..hi]
            .iter()
            .zip(&self.probs[lo..hi])
            .map(|(&t, &p)| (t as usize, p))
    }
}

/// A finite-horizon MFG: spaces, horizon, kernel and rewards.
#[derive(Debug)]
pub struct Env {
    name: String,
    states: StateSpace,
    actions: ActionSpace,
    horizon: usize,
    model: Model,
    noise: Option<NoiseProcess>,
    reward_scale: f64,
    warnings: Vec<String>,
    kernels: Mutex<HashMap<u64, Arc<Kernel>>>,
}

impl Clone for Env {
    fn clone(&self) -> Self {
        Env {
            name: self.name.clone(),
            states: self.states.clone(),
            actions: self.actions.clone(),
            horizon: self.horizon,
            model: self.model.clone(),
            noise: self.noise.clone(),
            reward_scale: self.reward_scale,
            warnings: self.warnings.clone(),
            kernels: Mutex::new(HashMap::new()),
        }
    }
}

fn grid_dims(space: &StateSpace) -> (usize, usize) {
    match space.geometry() {
        Geometry::Grid { width, height, .. } => (*width, *height),
        Geometry::Line { len } => (*len, 1),
        Geometry::Unstructured => (space.size(), 1),
    }
}

/// Destination of a displacement; leaving the domain or entering a wall
/// leaves the agent in place.
fn displace(space: &StateSpace, x: usize, dx: i64, dy: i64) -> usize {
    let (w, h) = grid_dims(space);
    let (c, r) = ((x % w) as i64 + dx, (x / w) as i64 + dy);
    if c < 0 || r < 0 || c >= w as i64 || r >= h as i64 {
        return x;
    }
    let t = r as usize * w + c as usize;
    if space.is_blocked(t) {
        x
    } else {
        t
    }
}

fn four_rooms_walls(width: usize, height: usize) -> BTreeSet<usize> {
    let (cc, cr) = (width / 2, height / 2);
    let door_up = (cr - 1) / 2;
    let door_down = (cr + 1 + height - 1) / 2;
    let door_left = (cc - 1) / 2;
    let door_right = (cc + 1 + width - 1) / 2;
    let mut walls = BTreeSet::new();
    for r in 0..height {
        if r != door_up && r != door_down {
            walls.insert(r * width + cc);
        }
    }
    for c in 0..width {
        if c != door_left && c != door_right {
            walls.insert(cr * width + c);
        }
    }
    walls
}

impl Env {
    fn build(
        name: String,
        states: StateSpace,
        actions: ActionSpace,
        horizon: usize,
        model: Model,
        noise: Option<NoiseProcess>,
    ) -> Self {
        Env {
            name,
            states,
            actions,
            horizon,
            model,
            noise,
            reward_scale: 1.0,
            warnings: Vec::new(),
            kernels: Mutex::new(HashMap::new()),
        }
    }

    /// Multiplies every reward (including the crowd term) by `scale`.
    pub fn with_reward_scale(mut self, scale: f64) -> Self {
        self.reward_scale = scale;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn num_states(&self) -> usize {
        self.states.size()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn noise_process(&self) -> Option<&NoiseProcess> {
        self.noise.as_ref()
    }

    pub fn has_common_noise(&self) -> bool {
        self.noise.is_some()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Every shipped model has transitions that ignore `n` and `mu`.
    pub fn population_independent_transitions(&self) -> bool {
        true
    }

    /// Transition kernel at `(n, mu, xi)`.
    pub fn kernel(&self, _n: usize, _mu: &StateDistribution, xi: f64) -> Arc<Kernel> {
        let key = match self.model {
            Model::LinearQuadratic(_) => xi.to_bits(),
            _ => 0,
        };
        let mut cache = self.kernels.lock().expect("kernel cache poisoned");
        cache.entry(key).or_insert_with(|| Arc::new(self.build_kernel(xi))).clone()
    }

    /// `p_n(. | x, a, mu)` under noise value `xi`, merged and sorted by state.
    pub fn transition(&self, n: usize, x: usize, a: usize, mu: &StateDistribution, xi: f64) -> Vec<(usize, f64)> {
        self.kernel(n, mu, xi).row(x, a).collect()
    }

    fn build_kernel(&self, xi: f64) -> Kernel {
        let (s, na) = (self.num_states(), self.num_actions());
        let mut rows = Vec::with_capacity(s * na);
        match &self.model {
            Model::Exploration | Model::BeachBar { .. } => {
                let perturb = [(0i64, -1i64), (0, 1), (-1, 0), (1, 0)];
                for x in 0..s {
                    for a in 0..na {
                        if self.states.is_blocked(x) {
                            rows.push(vec![(x, 1.0)]);
                            continue;
                        }
                        let act = self.actions.get(a);
                        let t = displace(&self.states, x, act.dx, act.dy);
                        let mut row = vec![(t, NO_PERTURBATION)];
                        for &(dx, dy) in &perturb {
                            row.push((displace(&self.states, t, dx, dy), PERTURBATION));
                        }
                        rows.push(row);
                    }
                }
            }
            Model::LinearQuadratic(p) => {
                let l = p.half_width as i64;
                let support = lq_noise_support(p.sigma);
                let (rho, common) = match p.noise {
                    LqNoise::None => (0.0, 0.0),
                    _ => (p.rho, xi),
                };
                let sd = p.delta.sqrt();
                let idio = (1.0 - rho * rho).sqrt() * sd;
                for x in 0..s {
                    let pos = x as i64 - l;
                    for a in 0..na {
                        let act = (a as i64 - p.max_move as i64) as f64;
                        let drift = pos as f64 + act * p.delta + p.sigma * rho * common * sd;
                        let row = support
                            .iter()
                            .map(|&(v, pv)| {
                                let target = round_half_away(drift + idio * v).clamp(-l, l);
                                ((target + l) as usize, pv)
                            })
                            .collect();
                        rows.push(row);
                    }
                }
            }
            Model::Tabular(t) => {
                for x in 0..s {
                    for a in 0..na {
                        rows.push(
                            t.transitions[x][a]
                                .iter()
                                .enumerate()
                                .filter(|(_, &p)| p > 0.0)
                                .map(|(y, &p)| (y, p))
                                .collect(),
                        );
                    }
                }
            }
        }
        Kernel::from_rows(na, rows)
    }

    /// Population-interaction part of the reward, used by the monotonicity
    /// probe. `None` when the model declares no such component.
    pub fn interaction_reward(&self, x: usize, mu: &StateDistribution, xi: f64) -> Option<f64> {
        let v = match &self.model {
            Model::Exploration => -clipped_ln(mu[x]),
            Model::BeachBar { closure, .. } => -self.crowd_weight(*closure, xi) * clipped_ln(mu[x]),
            Model::LinearQuadratic(p) => {
                let d = mean_position(mu, p.half_width) - (x as f64 - p.half_width as f64);
                -0.5 * p.kappa * d * d * p.delta
            }
            Model::Tabular(t) => -t.crowd * clipped_ln(mu[x]),
        };
        Some(self.reward_scale * v)
    }

    fn crowd_weight(&self, closure: bool, xi: f64) -> f64 {
        if closure {
            if xi != 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0
        }
    }

    pub fn reward(&self, n: usize, x: usize, a: usize, mu: &StateDistribution, xi: f64) -> f64 {
        let size = self.num_states() as f64;
        let v = match &self.model {
            Model::Exploration => -clipped_ln(mu[x]) - self.actions.get(a).magnitude() / size,
            Model::BeachBar { attractiveness, closure } => {
                attractiveness[x] - self.actions.get(a).magnitude() / size
                    - self.crowd_weight(*closure, xi) * clipped_ln(mu[x])
            }
            Model::LinearQuadratic(p) => {
                let d = mean_position(mu, p.half_width) - (x as f64 - p.half_width as f64);
                if n >= self.horizon {
                    -0.5 * p.c_term * d * d
                } else {
                    let act = a as f64 - p.max_move as f64;
                    (-0.5 * act * act + p.q * act * d - 0.5 * p.kappa * d * d) * p.delta
                }
            }
            Model::Tabular(t) => match (&t.terminal, n >= self.horizon) {
                (Some(term), true) => term[x] - t.crowd * clipped_ln(mu[x]),
                _ => t.base_reward[x][a] - t.crowd * clipped_ln(mu[x]),
            },
        };
        self.reward_scale * v
    }

    /// Rewards for every `(x, a)` at `(n, mu, xi)`, row-major by state.
    pub fn reward_table(&self, n: usize, mu: &StateDistribution, xi: f64) -> Vec<f64> {
        let na = self.num_actions();
        let mut out = Vec::with_capacity(self.num_states() * na);
        for x in 0..self.num_states() {
            for a in 0..na {
                out.push(self.reward(n, x, a, mu, xi));
            }
        }
        out
    }

    /// Paths for this environment: one silent path without common noise,
    /// the configured step path for LQ, or `count` sampled closure paths.
    pub fn default_paths(&self, count: usize, seed: u64) -> Result<Vec<CommonNoisePath>> {
        match &self.noise {
            None => Ok(vec![CommonNoisePath::silent(self.horizon)]),
            Some(NoiseProcess::LqStep(v)) => Ok(vec![noise::lq_step_process(*v, self.horizon)]),
            Some(NoiseProcess::Closure { window }) => {
                let mut paths = Vec::with_capacity(count.max(1));
                let mut seen = BTreeSet::new();
                for i in 0..count.max(1) {
                    let p = noise::closure_process(self.horizon, *window, seed.wrapping_add(i as u64))?;
                    if seen.insert(p.label.clone()) {
                        paths.push(p);
                    }
                }
                Ok(paths)
            }
        }
    }
}

fn round_half_away(v: f64) -> i64 {
    v.round() as i64
}

fn mean_position(mu: &StateDistribution, half_width: usize) -> f64 {
    mu.as_slice()
        .iter()
        .enumerate()
        .map(|(i, m)| (i as f64 - half_width as f64) * m)
        .sum()
}

/// Population mean position on the LQ line.
pub fn population_mean(env: &Env, mu: &StateDistribution) -> Option<f64> {
    match &env.model {
        Model::LinearQuadratic(p) => Some(mean_position(mu, p.half_width)),
        _ => None,
    }
}

/// Integer support `-ceil(3 sigma)..=ceil(3 sigma)` of the discretized
/// idiosyncratic noise with Gaussian bin masses, renormalized.
pub fn lq_noise_support(sigma: f64) -> Vec<(f64, f64)> {
    if sigma <= 0.0 {
        return vec![(0.0, 1.0)];
    }
    let s = (3.0 * sigma).ceil() as i64;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let raw: Vec<(f64, f64)> = (-s..=s)
        .map(|j| {
            let j = j as f64;
            (j, normal.cdf((j + 0.5) / sigma) - normal.cdf((j - 0.5) / sigma))
        })
        .collect();
    let total: f64 = raw.iter().map(|e| e.1).sum();
    raw.into_iter().map(|(j, p)| (j, p / total)).collect()
}

pub fn make_exploration(layout: RoomLayout, width: usize, height: usize, horizon: usize) -> Result<Env> {
    if width < 2 || height < 2 {
        return Err(Error::Config(format!("exploration grid {width}x{height} must be at least 2x2")));
    }
    let blocked = match layout {
        RoomLayout::OneRoom => BTreeSet::new(),
        RoomLayout::FourRooms => {
            if width.is_multiple_of(2) || height.is_multiple_of(2) {
                return Err(Error::Config(format!(
                    "four_rooms requires odd width and height, got {width}x{height}"
                )));
            }
            four_rooms_walls(width, height)
        }
    };
    let states = StateSpace::grid(width, height, blocked)?;
    let name = match layout {
        RoomLayout::OneRoom => "exploration_one_room",
        RoomLayout::FourRooms => "exploration_four_rooms",
    };
    Ok(Env::build(
        name.into(),
        states,
        ActionSpace::grid_moves(),
        horizon,
        Model::Exploration,
        None,
    ))
}

pub fn make_beach_bar(dimension: BeachDimension, size: usize, closure_noise: bool, horizon: usize) -> Result<Env> {
    if size < 3 {
        return Err(Error::Config(format!("beach size {size} must be at least 3")));
    }
    let (states, actions, bar) = match dimension {
        BeachDimension::OneD => (StateSpace::line(size)?, ActionSpace::line_moves(), size / 2),
        BeachDimension::TwoD => (
            StateSpace::grid(size, size, BTreeSet::new())?,
            ActionSpace::grid_moves(),
            (size / 2) * size + size / 2,
        ),
    };
    let (w, _) = grid_dims(&states);
    let total = states.size() as f64;
    let attractiveness = (0..states.size())
        .map(|x| {
            let dist = (x % w).abs_diff(bar % w) + (x / w).abs_diff(bar / w);
            1.0 - dist as f64 / total
        })
        .collect();
    let noise = closure_noise.then(|| NoiseProcess::Closure {
        window: noise::default_closure_window(horizon),
    });
    Ok(Env::build(
        match dimension {
            BeachDimension::OneD => "beach_bar_1d".into(),
            BeachDimension::TwoD => "beach_bar_2d".into(),
        },
        states,
        actions,
        horizon,
        Model::BeachBar {
            attractiveness,
            closure: closure_noise,
        },
        noise,
    ))
}

impl Env {
    /// Overrides the closure window of a beach bar with closure noise.
    pub fn with_closure_window(mut self, window: (usize, usize)) -> Result<Self> {
        match &mut self.noise {
            Some(NoiseProcess::Closure { window: w }) => {
                if window.0 >= window.1 || window.1 > self.horizon {
                    return Err(Error::Config(format!("closure window {window:?} invalid for horizon {}", self.horizon)));
                }
                *w = window;
                Ok(self)
            }
            _ => Err(Error::Config("closure window set on an environment without closure noise".into())),
        }
    }

    /// Index of the bar cell for beach-bar environments.
    pub fn bar_location(&self) -> Option<usize> {
        match &self.model {
            Model::BeachBar { attractiveness, .. } => attractiveness
                .iter()
                .enumerate()
                .find(|(_, &v)| v == 1.0)
                .map(|(x, _)| x),
            _ => None,
        }
    }
}

pub fn make_linear_quadratic(params: LqParams, horizon: usize) -> Result<Env> {
    if params.half_width < 1 || params.max_move < 1 {
        return Err(Error::Config("LQ requires L >= 1 and M >= 1".into()));
    }
    if !(0.0..=1.0).contains(&params.rho) {
        return Err(Error::Config(format!("rho {} outside [0, 1]", params.rho)));
    }
    if !(params.sigma >= 0.0) || !(params.delta > 0.0) {
        return Err(Error::Config("LQ requires sigma >= 0 and delta > 0".into()));
    }
    for (name, v) in [("q", params.q), ("kappa", params.kappa), ("c_term", params.c_term)] {
        if !v.is_finite() {
            return Err(Error::Config(format!("LQ parameter {name} must be finite")));
        }
    }
    let states = StateSpace::line(2 * params.half_width + 1)?;
    let actions = ActionSpace::integer_moves(params.max_move);
    let noise = match params.noise {
        LqNoise::None => None,
        LqNoise::Xi1 => Some(NoiseProcess::LqStep(LqNoiseVariant::Xi1)),
        LqNoise::Xi2 => Some(NoiseProcess::LqStep(LqNoiseVariant::Xi2)),
    };
    let sd = params.delta.sqrt();
    let common = if noise.is_some() { params.sigma * params.rho * 10.0 * sd } else { 0.0 };
    let reach = params.max_move as f64 * params.delta + 3.0 * params.sigma * sd + common;
    let mut env = Env::build(
        "linear_quadratic".into(),
        states,
        actions,
        horizon,
        Model::LinearQuadratic(params.clone()),
        noise,
    );
    if reach > 2.0 * params.half_width as f64 {
        env.warnings.push(format!(
            "one-step reach {reach} exceeds the domain width {}; flows will pin at the boundary",
            2 * params.half_width
        ));
    }
    Ok(env)
}

pub fn make_tabular(model: TabularModel, horizon: usize) -> Result<Env> {
    let s = model.transitions.len();
    if s == 0 {
        return Err(Error::Config("tabular model needs at least one state".into()));
    }
    let na = model.transitions[0].len();
    for (x, rows) in model.transitions.iter().enumerate() {
        if rows.len() != na || model.base_reward.get(x).map(|r| r.len()) != Some(na) {
            return Err(Error::Config(format!("state {x}: inconsistent action count")));
        }
        for (a, row) in rows.iter().enumerate() {
            StateDistribution::new(row.clone())
                .map_err(|e| Error::Config(format!("transition row ({x}, {a}): {e}")))?;
        }
    }
    if let Some(t) = &model.terminal {
        if t.len() != s {
            return Err(Error::Config("terminal reward length mismatch".into()));
        }
    }
    Ok(Env::build(
        "tabular".into(),
        StateSpace::unstructured(s)?,
        ActionSpace::abstract_actions(na)?,
        horizon,
        Model::Tabular(model),
        None,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetRole {
    Training,
    Testing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialKind {
    FixedPoints,
    Gaussians,
    RandomPoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistributionSet {
    pub role: SetRole,
    pub members: Vec<(String, StateDistribution)>,
}

impl InitialDistributionSet {
    pub fn new(role: SetRole, members: Vec<(String, StateDistribution)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("initial distribution set is empty".into()));
        }
        Ok(InitialDistributionSet { role, members })
    }

    pub fn single(role: SetRole, label: impl Into<String>, mu: StateDistribution) -> Self {
        InitialDistributionSet {
            role,
            members: vec![(label.into(), mu)],
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn extend(&mut self, other: InitialDistributionSet) {
        self.members.extend(other.members);
    }
}

fn coords(env: &Env, x: usize) -> (f64, f64) {
    let (w, _) = grid_dims(env.states());
    ((x % w) as f64, (x / w) as f64)
}

pub fn make_initial_set(
    kind: InitialKind,
    count: usize,
    env: &Env,
    seed: u64,
    role: SetRole,
) -> Result<InitialDistributionSet> {
    if count == 0 {
        return Err(Error::Config("initial set count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = env.states();
    let open = space.open_states();
    let (w, h) = grid_dims(space);
    let prefix = match kind {
        InitialKind::FixedPoints => "fixed",
        InitialKind::Gaussians => "gauss",
        InitialKind::RandomPoints => "points",
    };
    let mut members = Vec::with_capacity(count);
    match kind {
        InitialKind::FixedPoints => {
            if count > open.len() {
                return Err(Error::Config(format!(
                    "{count} fixed points requested but only {} open states",
                    open.len()
                )));
            }
            let mut cells = open.clone();
            cells.shuffle(&mut rng);
            for &x in cells.iter().take(count) {
                members.push((format!("{prefix}_{x}"), StateDistribution::point_mass(space.size(), x)?));
            }
        }
        InitialKind::Gaussians => {
            let max_sd = (w.max(h) as f64 / 3.0).max(1.0);
            for i in 0..count {
                let center = open[rng.gen_range(0..open.len())];
                let sd = rng.gen_range(0.5..=max_sd);
                let (cx, cy) = coords(env, center);
                let weights = (0..space.size())
                    .map(|x| {
                        let (px, py) = coords(env, x);
                        let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                        (-d2 / (2.0 * sd * sd)).exp()
                    })
                    .collect();
                members.push((format!("{prefix}_{i}"), StateDistribution::from_weights(space, weights)?));
            }
        }
        InitialKind::RandomPoints => {
            for i in 0..count {
                let k = rng.gen_range(2..=4usize).min(open.len());
                let mut cells = open.clone();
                cells.shuffle(&mut rng);
                let mut weights = vec![0.0; space.size()];
                for &x in cells.iter().take(k) {
                    weights[x] = rng.gen_range(0.2..1.0);
                }
                members.push((format!("{prefix}_{i}"), StateDistribution::from_weights(space, weights)?));
            }
        }
    }
    InitialDistributionSet::new(role, members)
}

/// `(1 - fraction) mu + fraction newcomers`.
pub fn inject_adhoc_team(
    mu: &StateDistribution,
    newcomers: &StateDistribution,
    fraction: f64,
) -> Result<StateDistribution> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("join fraction {fraction} outside (0, 1)")));
    }
    if mu.len() != newcomers.len() {
        return Err(Error::Domain("newcomer distribution has a different state count".into()));
    }
    let mass = mu
        .as_slice()
        .iter()
        .zip(newcomers.as_slice())
        .map(|(a, b)| (1.0 - fraction) * a + fraction * b)
        .collect();
    StateDistribution::new(mass)
}

/// Mass fraction of `joining` agents among `existing + joining`.
pub fn join_fraction(existing: usize, joining: usize) -> f64 {
    joining as f64 / (existing + joining) as f64
}
