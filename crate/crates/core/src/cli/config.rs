//! Experiment configuration: a TOML document with fixed sections.
//!
//! Parsing never stops at the first problem. Every unknown key, type
//! mismatch and precondition violation is collected with its dotted path.

use std::fmt;
use std::path::PathBuf;

use toml::{Table, Value};

use crate::envs::{
    make_beach_bar, make_exploration, make_linear_quadratic, BeachDimension, Env, InitialKind, LqNoise, LqParams,
    RoomLayout,
};
use crate::error::Result;
use crate::neural::{Continuation, FlowMode, OptimizerKind, TrainConfig};
use crate::solvers::DEFAULT_LINEAGE_BOUND;

/// Default seeds for multi-run experiments.
pub const DEFAULT_SEEDS: [u64; 5] = [42, 3407, 303, 109, 312];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// All problems found in one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl ConfigErrors {
    pub fn mentions(&self, path: &str) -> bool {
        self.0.iter().any(|i| i.path == path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Exploration {
        layout: RoomLayout,
        width: usize,
        height: usize,
    },
    BeachBar {
        dimension: BeachDimension,
        size: usize,
        closure_noise: bool,
        closure_window: Option<(usize, usize)>,
    },
    LinearQuadratic(LqParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub spec: EnvSpec,
    pub horizon: usize,
    pub reward_scale: f64,
}

impl EnvConfig {
    pub fn build(&self) -> Result<Env> {
        let env = match &self.spec {
            EnvSpec::Exploration { layout, width, height } => make_exploration(*layout, *width, *height, self.horizon)?,
            EnvSpec::BeachBar {
                dimension,
                size,
                closure_noise,
                closure_window,
            } => {
                let env = make_beach_bar(*dimension, *size, *closure_noise, self.horizon)?;
                match closure_window {
                    Some(w) => env.with_closure_window(*w)?,
                    None => env,
                }
            }
            EnvSpec::LinearQuadratic(p) => make_linear_quadratic(p.clone(), self.horizon)?,
        };
        Ok(if self.reward_scale == 1.0 {
            env
        } else {
            env.with_reward_scale(self.reward_scale)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Fp,
    Omd,
    MasterOmdReference,
    MasterOmdNeural,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Fp => "fp",
            SolverKind::Omd => "omd",
            SolverKind::MasterOmdReference => "master_omd_reference",
            SolverKind::MasterOmdNeural => "master_omd_neural",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub iterations: usize,
    pub tau: f64,
    pub lineage_bound: u128,
    /// Neural hyperparameters; `iterations`, `tau` and `seed` are filled
    /// from the enclosing solver section and the run seed.
    pub neural: TrainConfig,
}

impl SolverConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            tau: self.tau,
            seed,
            ..self.neural.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetConfig {
    pub kind: InitialKind,
    pub count: usize,
    /// `None` draws the set with each run seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub paths: usize,
    pub seed: Option<u64>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportConfig {
    pub flows: bool,
    pub svg: bool,
    pub checkpoint: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub solver: SolverConfig,
    pub train: SetConfig,
    pub test: Option<SetConfig>,
    pub noise: NoiseConfig,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub export: ExportConfig,
}

/// Typed reads from one table, recording problems and which keys were seen.
struct Section<'a> {
    prefix: String,
    table: Option<&'a Table>,
    known: Vec<&'static str>,
}

struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ConfigIssue {
            path: path.into(),
            message: message.into(),
        });
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &str, issues: &mut Issues) -> Self {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(other) => {
                issues.push(name, format!("expected a table, found {}", type_name(other)));
                None
            }
        };
        Section {
            prefix: name.to_string(),
            table,
            known: Vec::new(),
        }
    }

    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.prefix)
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.known.push(key);
        self.table.and_then(|t| t.get(key))
    }

    fn int(&mut self, key: &'static str, issues: &mut Issues) -> Option<i64> {
        match self.raw(key)? {
            Value::Integer(i) => Some(*i),
            other => {
                issues.push(self.path(key), format!("expected integer, found {}", type_name(other)));
                None
            }
        }
    }

    fn count(&mut self, key: &'static str, default: usize, min: usize, issues: &mut Issues) -> usize {
        match self.int(key, issues) {
            None => default,
            Some(v) if v < min as i64 => {
                issues.push(self.path(key), format!("must be at least {min}, got {v}"));
                default
            }
            Some(v) => v as usize,
        }
    }

    fn seed(&mut self, key: &'static str, issues: &mut Issues) -> Option<u64> {
        match self.int(key, issues) {
            Some(v) if v < 0 => {
                issues.push(self.path(key), format!("seeds are non-negative, got {v}"));
                None
            }
            v => v.map(|v| v as u64),
        }
    }

    fn float(&mut self, key: &'static str, default: f64, issues: &mut Issues) -> f64 {
        match self.raw(key) {
            None => default,
            Some(Value::Float(f)) => *f,
            Some(Value::Integer(i)) => *i as f64,
            Some(other) => {
                issues.push(self.path(key), format!("expected number, found {}", type_name(other)));
                default
            }
        }
    }

    /// Float that must satisfy `ok`; `rule` names the requirement.
    fn float_where(
        &mut self,
        key: &'static str,
        default: f64,
        ok: impl Fn(f64) -> bool,
        rule: &str,
        issues: &mut Issues,
    ) -> f64 {
        let v = self.float(key, default, issues);
        if !ok(v) {
            issues.push(self.path(key), format!("{rule}, got {v}"));
            return default;
        }
        v
    }

    fn boolean(&mut self, key: &'static str, default: bool, issues: &mut Issues) -> bool {
        match self.raw(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                issues.push(self.path(key), format!("expected boolean, found {}", type_name(other)));
                default
            }
        }
    }

    fn string(&mut self, key: &'static str, issues: &mut Issues) -> Option<&'a str> {
        match self.raw(key)? {
            Value::String(s) => Some(s),
            other => {
                issues.push(self.path(key), format!("expected string, found {}", type_name(other)));
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, key: &'static str, default: T, options: &[(&str, T)], issues: &mut Issues) -> T {
        match self.string(key, issues) {
            None => default,
            Some(s) => match options.iter().find(|(name, _)| *name == s) {
                Some((_, v)) => *v,
                None => {
                    let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                    issues.push(self.path(key), format!("unknown value {s:?}, expected one of {}", names.join(", ")));
                    default
                }
            },
        }
    }

    fn int_list(&mut self, key: &'static str, issues: &mut Issues) -> Option<Vec<i64>> {
        match self.raw(key)? {
            Value::Array(items) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, v) in items.iter().enumerate() {
                    match v {
                        Value::Integer(x) => out.push(*x),
                        other => {
                            issues.push(
                                format!("{}[{i}]", self.path(key)),
                                format!("expected integer, found {}", type_name(other)),
                            );
                            return None;
                        }
                    }
                }
                Some(out)
            }
            other => {
                issues.push(self.path(key), format!("expected array, found {}", type_name(other)));
                None
            }
        }
    }

    /// Reports keys that no read asked for.
    fn finish(self, issues: &mut Issues) {
        if let Some(t) = self.table {
            for key in t.keys() {
                if !self.known.iter().any(|k| k == key) {
                    issues.push(format!("{}.{key}", self.prefix), "unknown key");
                }
            }
        }
    }
}

const SECTIONS: [&str; 6] = ["env", "solver", "train", "test", "noise", "run"];

const LAYOUTS: [(&str, RoomLayout); 2] = [("one_room", RoomLayout::OneRoom), ("four_rooms", RoomLayout::FourRooms)];
const DIMENSIONS: [(&str, BeachDimension); 2] = [("1d", BeachDimension::OneD), ("2d", BeachDimension::TwoD)];
const LQ_NOISE: [(&str, LqNoise); 3] = [("none", LqNoise::None), ("xi1", LqNoise::Xi1), ("xi2", LqNoise::Xi2)];
const SOLVERS: [(&str, SolverKind); 4] = [
    ("fp", SolverKind::Fp),
    ("omd", SolverKind::Omd),
    ("master_omd_reference", SolverKind::MasterOmdReference),
    ("master_omd_neural", SolverKind::MasterOmdNeural),
];
pub const SET_KINDS: [(&str, InitialKind); 3] = [
    ("fixed_points", InitialKind::FixedPoints),
    ("gaussians", InitialKind::Gaussians),
    ("random_points", InitialKind::RandomPoints),
];
const CONTINUATIONS: [(&str, Continuation); 2] = [("current", Continuation::Current), ("previous", Continuation::Previous)];
const OPTIMIZERS: [(&str, OptimizerKind); 2] = [("adam", OptimizerKind::Adam), ("sgd", OptimizerKind::Sgd)];

#[derive(Clone, Copy, PartialEq)]
enum EnvName {
    Exploration,
    BeachBar,
    LinearQuadratic,
}

const ENV_NAMES: [(&str, EnvName); 3] = [
    ("exploration", EnvName::Exploration),
    ("beach_bar", EnvName::BeachBar),
    ("linear_quadratic", EnvName::LinearQuadratic),
];

fn name_of<T: Copy + PartialEq>(options: &[(&'static str, T)], v: T) -> &'static str {
    options.iter().find(|(_, x)| *x == v).map(|(n, _)| *n).expect("listed option")
}

fn parse_env(root: &Table, issues: &mut Issues) -> Option<EnvConfig> {
    let mut s = Section::new(root, "env", issues);
    if s.table.is_none() && !root.contains_key("env") {
        issues.push("env", "missing section");
    }
    let name = match s.string("name", issues) {
        None => {
            if s.table.is_some() {
                issues.push("env.name", "missing key");
            }
            None
        }
        Some(n) => match ENV_NAMES.iter().find(|(k, _)| *k == n) {
            Some((_, v)) => Some(*v),
            None => {
                issues.push(
                    "env.name",
                    format!("unknown environment {n:?}, expected exploration, beach_bar or linear_quadratic"),
                );
                None
            }
        },
    };
    let horizon = s.count("horizon", 10, 1, issues);
    let reward_scale = s.float_where("reward_scale", 1.0, f64::is_finite, "must be finite", issues);
    let before = issues.0.len();
    let spec = match name? {
        EnvName::Exploration => EnvSpec::Exploration {
            layout: s.choice("layout", RoomLayout::OneRoom, &LAYOUTS, issues),
            width: s.count("width", 5, 2, issues),
            height: s.count("height", 5, 2, issues),
        },
        EnvName::BeachBar => {
            let dimension = s.choice("dimension", BeachDimension::OneD, &DIMENSIONS, issues);
            let size = s.count("size", 11, 3, issues);
            let closure_noise = s.boolean("closure_noise", false, issues);
            let closure_window = match s.int_list("closure_window", issues) {
                None => None,
                Some(w) if w.len() == 2 && w[0] >= 0 && w[0] < w[1] => Some((w[0] as usize, w[1] as usize)),
                Some(w) => {
                    issues.push("env.closure_window", format!("expected [lo, hi] with 0 <= lo < hi, got {w:?}"));
                    None
                }
            };
            EnvSpec::BeachBar {
                dimension,
                size,
                closure_noise,
                closure_window,
            }
        }
        EnvName::LinearQuadratic => {
            let d = LqParams::default();
            let positive = |v: f64| v > 0.0 && v.is_finite();
            let finite = |v: f64| v.is_finite();
            EnvSpec::LinearQuadratic(LqParams {
                half_width: s.count("half_width", d.half_width, 1, issues),
                max_move: s.count("max_move", d.max_move, 1, issues),
                sigma: s.float_where("sigma", d.sigma, |v| v >= 0.0 && v.is_finite(), "must be non-negative", issues),
                q: s.float_where("q", d.q, finite, "must be finite", issues),
                kappa: s.float_where("kappa", d.kappa, finite, "must be finite", issues),
                c_term: s.float_where("c_term", d.c_term, finite, "must be finite", issues),
                delta: s.float_where("delta", d.delta, positive, "must be positive", issues),
                rho: s.float_where("rho", d.rho, |v| (0.0..=1.0).contains(&v), "must lie in [0, 1]", issues),
                noise: s.choice("noise", LqNoise::None, &LQ_NOISE, issues),
            })
        }
    };
    s.finish(issues);
    let cfg = EnvConfig {
        spec,
        horizon,
        reward_scale,
    };
    if issues.0.len() == before {
        // constraints owned by the environment constructors
        if let Err(e) = cfg.build() {
            issues.push("env", e.to_string());
            return None;
        }
    }
    Some(cfg)
}

fn parse_solver(root: &Table, issues: &mut Issues) -> SolverConfig {
    let mut s = Section::new(root, "solver", issues);
    let kind = s.choice("kind", SolverKind::MasterOmdReference, &SOLVERS, issues);
    let iterations = s.count("iterations", 10, 1, issues);
    let tau = s.float_where("tau", 1.0, |v| v > 0.0 && v.is_finite(), "must be positive", issues);
    let lineage_bound = s.count("lineage_bound", DEFAULT_LINEAGE_BOUND as usize, 1, issues) as u128;
    let d = TrainConfig::default();
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    let positive = |v: f64| v > 0.0 && v.is_finite();
    let mut neural = TrainConfig {
        episodes: s.count("episodes", d.episodes, 1, issues),
        max_steps: s.count("max_steps", d.max_steps, 1, issues),
        gamma: s.float_where("gamma", d.gamma, unit, "must lie in [0, 1]", issues),
        alpha: s.float_where("alpha", d.alpha, f64::is_finite, "must be finite", issues),
        continuation: s.choice("continuation", d.continuation, &CONTINUATIONS, issues),
        exploration_fraction: s.float_where(
            "exploration_fraction",
            d.exploration_fraction,
            |v| v > 0.0 && v <= 1.0,
            "must lie in (0, 1]",
            issues,
        ),
        eps_start: s.float_where("eps_start", d.eps_start, unit, "must lie in [0, 1]", issues),
        eps_end: s.float_where("eps_end", d.eps_end, unit, "must lie in [0, 1]", issues),
        batch_size: s.count("batch_size", d.batch_size, 1, issues),
        gradient_steps: s.count("gradient_steps", d.gradient_steps, 1, issues),
        train_every: s.count("train_every", d.train_every, 1, issues),
        target_period: s.count("target_period", d.target_period, 1, issues),
        capacity: s.count("capacity", d.capacity, 1, issues),
        learning_rate: s.float_where("learning_rate", d.learning_rate, positive, "must be positive", issues),
        optimizer: s.choice("optimizer", d.optimizer, &OPTIMIZERS, issues),
        population_input: s.boolean("population_input", d.population_input, issues),
        ..d
    };
    if let Some(h) = s.int_list("hidden", issues) {
        if h.iter().any(|&v| v < 1) {
            issues.push("solver.hidden", format!("widths must be positive, got {h:?}"));
        } else {
            neural.hidden = h.into_iter().map(|v| v as usize).collect();
        }
    }
    let empirical = s.choice("flow", false, &[("exact", false), ("empirical", true)], issues);
    let agents = s.count("agents", 500, 1, issues);
    if empirical {
        neural.flow = FlowMode::Empirical { agents };
    }
    s.finish(issues);
    SolverConfig {
        kind,
        iterations,
        tau,
        lineage_bound,
        neural,
    }
}

fn parse_set(root: &Table, name: &str, issues: &mut Issues) -> SetConfig {
    let mut s = Section::new(root, name, issues);
    let kind = s.choice("kind", InitialKind::FixedPoints, &SET_KINDS, issues);
    let count = s.count("count", 1, 1, issues);
    let seed = s.seed("seed", issues);
    s.finish(issues);
    SetConfig { kind, count, seed }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, ConfigErrors> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| {
        ConfigErrors(vec![ConfigIssue {
            path: "<document>".into(),
            message: e.message().to_string(),
        }])
    })?;
    let mut issues = Issues(Vec::new());
    for key in root.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            issues.push(key.clone(), "unknown section");
        }
    }
    let env = parse_env(&root, &mut issues);
    let solver = parse_solver(&root, &mut issues);
    let train = parse_set(&root, "train", &mut issues);
    let test = root.contains_key("test").then(|| parse_set(&root, "test", &mut issues));

    let mut ns = Section::new(&root, "noise", &mut issues);
    let noise = NoiseConfig {
        paths: ns.count("paths", 1, 1, &mut issues),
        seed: ns.seed("seed", &mut issues),
        file: ns.string("file", &mut issues).map(PathBuf::from),
    };
    ns.finish(&mut issues);

    let mut rs = Section::new(&root, "run", &mut issues);
    let seeds = match rs.int_list("seeds", &mut issues) {
        None => DEFAULT_SEEDS.to_vec(),
        Some(v) if v.is_empty() => {
            issues.push("run.seeds", "at least one seed is required");
            DEFAULT_SEEDS.to_vec()
        }
        Some(v) if v.iter().any(|&s| s < 0) => {
            issues.push("run.seeds", "seeds are non-negative");
            DEFAULT_SEEDS.to_vec()
        }
        Some(v) => v.into_iter().map(|s| s as u64).collect(),
    };
    let output = PathBuf::from(rs.string("output", &mut issues).unwrap_or("out"));
    let export = ExportConfig {
        flows: rs.boolean("export_flows", true, &mut issues),
        svg: rs.boolean("export_svg", true, &mut issues),
        checkpoint: rs.boolean("export_checkpoint", true, &mut issues),
    };
    rs.finish(&mut issues);

    if let Some(env) = &env {
        let states = env.build().map(|e| e.num_states()).unwrap_or(usize::MAX);
        for (name, set) in std::iter::once(("train", &train)).chain(test.as_ref().map(|t| ("test", t))) {
            if set.kind == InitialKind::FixedPoints && set.count > states {
                issues.push(
                    format!("{name}.count"),
                    format!("{} fixed points exceed the {states} states", set.count),
                );
            }
        }
        let noisy = match &env.spec {
            EnvSpec::BeachBar { closure_noise, .. } => *closure_noise,
            EnvSpec::LinearQuadratic(p) => p.noise != LqNoise::None,
            EnvSpec::Exploration { .. } => false,
        };
        if !noisy && (noise.paths > 1 || noise.file.is_some()) {
            issues.push("noise", "noise paths configured for an environment without common noise");
        }
    }
    if solver.kind == SolverKind::MasterOmdNeural {
        if let Err(e) = solver.train_config(0).validate() {
            issues.push("solver", e.to_string());
        }
    }

    match (issues.0.is_empty(), env) {
        (true, Some(env)) => Ok(ExperimentConfig {
            env,
            solver,
            train,
            test,
            noise,
            seeds,
            output,
            export,
        }),
        _ => Err(ConfigErrors(issues.0)),
    }
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

fn set_table(set: &SetConfig) -> Table {
    let mut t = Table::new();
    t.insert("kind".into(), name_of(&SET_KINDS, set.kind).into());
    t.insert("count".into(), int(set.count));
    if let Some(seed) = set.seed {
        t.insert("seed".into(), Value::Integer(seed as i64));
    }
    t
}

impl ExperimentConfig {
    /// Every field written out explicitly, keys sorted.
    pub fn canonical(&self) -> String {
        let mut root = Table::new();
        let mut env = Table::new();
        env.insert("horizon".into(), int(self.env.horizon));
        env.insert("reward_scale".into(), self.env.reward_scale.into());
        match &self.env.spec {
            EnvSpec::Exploration { layout, width, height } => {
                env.insert("name".into(), "exploration".into());
                env.insert("layout".into(), name_of(&LAYOUTS, *layout).into());
                env.insert("width".into(), int(*width));
                env.insert("height".into(), int(*height));
            }
            EnvSpec::BeachBar {
                dimension,
                size,
                closure_noise,
                closure_window,
            } => {
                env.insert("name".into(), "beach_bar".into());
                env.insert("dimension".into(), name_of(&DIMENSIONS, *dimension).into());
                env.insert("size".into(), int(*size));
                env.insert("closure_noise".into(), (*closure_noise).into());
                if let Some((lo, hi)) = closure_window {
                    env.insert("closure_window".into(), Value::Array(vec![int(*lo), int(*hi)]));
                }
            }
            EnvSpec::LinearQuadratic(p) => {
                env.insert("name".into(), "linear_quadratic".into());
                env.insert("half_width".into(), int(p.half_width));
                env.insert("max_move".into(), int(p.max_move));
                env.insert("sigma".into(), p.sigma.into());
                env.insert("q".into(), p.q.into());
                env.insert("kappa".into(), p.kappa.into());
                env.insert("c_term".into(), p.c_term.into());
                env.insert("delta".into(), p.delta.into());
                env.insert("rho".into(), p.rho.into());
                env.insert("noise".into(), name_of(&LQ_NOISE, p.noise).into());
            }
        }
        root.insert("env".into(), Value::Table(env));

        let s = &self.solver;
        let n = &s.neural;
        let mut solver = Table::new();
        solver.insert("kind".into(), s.kind.name().into());
        solver.insert("iterations".into(), int(s.iterations));
        solver.insert("tau".into(), s.tau.into());
        solver.insert("lineage_bound".into(), Value::Integer(s.lineage_bound.min(i64::MAX as u128) as i64));
        solver.insert("episodes".into(), int(n.episodes));
        solver.insert("max_steps".into(), int(n.max_steps));
        solver.insert("gamma".into(), n.gamma.into());
        solver.insert("alpha".into(), n.alpha.into());
        solver.insert("continuation".into(), name_of(&CONTINUATIONS, n.continuation).into());
        solver.insert("exploration_fraction".into(), n.exploration_fraction.into());
        solver.insert("eps_start".into(), n.eps_start.into());
        solver.insert("eps_end".into(), n.eps_end.into());
        solver.insert("batch_size".into(), int(n.batch_size));
        solver.insert("gradient_steps".into(), int(n.gradient_steps));
        solver.insert("train_every".into(), int(n.train_every));
        solver.insert("target_period".into(), int(n.target_period));
        solver.insert("capacity".into(), int(n.capacity));
        solver.insert("learning_rate".into(), n.learning_rate.into());
        solver.insert("optimizer".into(), name_of(&OPTIMIZERS, n.optimizer).into());
        solver.insert("population_input".into(), n.population_input.into());
        solver.insert("hidden".into(), Value::Array(n.hidden.iter().map(|&h| int(h)).collect()));
        match n.flow {
            FlowMode::Exact => {
                solver.insert("flow".into(), "exact".into());
            }
            FlowMode::Empirical { agents } => {
                solver.insert("flow".into(), "empirical".into());
                solver.insert("agents".into(), int(agents));
            }
        }
        root.insert("solver".into(), Value::Table(solver));

        root.insert("train".into(), Value::Table(set_table(&self.train)));
        if let Some(test) = &self.test {
            root.insert("test".into(), Value::Table(set_table(test)));
        }
        let mut noise = Table::new();
        noise.insert("paths".into(), int(self.noise.paths));
        if let Some(seed) = self.noise.seed {
            noise.insert("seed".into(), Value::Integer(seed as i64));
        }
        if let Some(file) = &self.noise.file {
            noise.insert("file".into(), file.display().to_string().into());
        }
        root.insert("noise".into(), Value::Table(noise));
        let mut run = Table::new();
        run.insert(
            "seeds".into(),
            Value::Array(self.seeds.iter().map(|&s| Value::Integer(s as i64)).collect()),
        );
        run.insert("output".into(), self.output.display().to_string().into());
        run.insert("export_flows".into(), self.export.flows.into());
        run.insert("export_svg".into(), self.export.svg.into());
        run.insert("export_checkpoint".into(), self.export.checkpoint.into());
        root.insert("run".into(), Value::Table(run));
        toml::to_string(&root).expect("tables always serialize")
    }
}
