//! Experiment drivers behind the CLI verbs. Every CSV written here is a
//! pure function of the config and seeds; wall-clock only reaches run.log.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::cli::config::{ExperimentConfig, SetConfig, SolverKind};
use crate::cli::svg::exploitability_plot;
use crate::envs::{make_initial_set, Env, InitialDistributionSet, InitialKind, SetRole};
use crate::error::{Error, Result};
use crate::exact::{exploitability, ExploitabilityReport};
use crate::meanfield::{csv_err, flow_with_injection, induced_flow, MeanFieldFlow};
use crate::neural::{train_master_omd, Checkpoint, NeuralPolicy, Trainer};
use crate::noise::{read_paths_csv, CommonNoisePath, NoiseTree};
use crate::policy::MasterPolicy;
use crate::solvers::{master_omd_reference, theorem1_residual, LineageConfig, Theorem1Report, run_fp, run_omd, SolverTrace};


/// Environment variable prefixed to relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "MFGLAB_OUTPUT_ROOT";

/// Largest residual accepted by the Theorem-1 check.
pub const THEOREM1_TOLERANCE: f64 = 1e-8;

pub const EXPLOITABILITY_HEADER: [&str; 5] = ["iteration", "seed", "mu0_label", "noise_label", "gap"];

/// Resolves the configured output directory against the output root.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if cfg.output.is_relative() => PathBuf::from(root).join(&cfg.output),
        _ => cfg.output.clone(),
    }
}

/// Append-only text log.
pub struct RunLog {
    out: BufWriter<File>,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(RunLog {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn line(&mut self, text: impl AsRef<str>) {
        let _ = writeln!(self.out, "{}", text.as_ref());
        let _ = self.out.flush();
    }
}

pub fn build_set(env: &Env, spec: &SetConfig, seed: u64, role: SetRole) -> Result<InitialDistributionSet> {
    make_initial_set(spec.kind, spec.count, env, spec.seed.unwrap_or(seed), role)
}

pub fn build_tree(cfg: &ExperimentConfig, env: &Env, seed: u64) -> Result<Arc<NoiseTree>> {
    let paths: Vec<CommonNoisePath> = match &cfg.noise.file {
        Some(file) => read_paths_csv(File::open(file)?)?,
        None => env.default_paths(cfg.noise.paths, cfg.noise.seed.unwrap_or(seed))?,
    };
    Ok(Arc::new(NoiseTree::new(&paths)?))
}

/// Everything one seed produces.
pub struct SeedOutput {
    pub seed: u64,
    pub trace: SolverTrace,
    pub test: Option<ExploitabilityReport>,
    pub flows: Vec<MeanFieldFlow>,
    pub checkpoint: Option<Checkpoint>,
}

fn evaluate_final(
    env: &Env,
    policy: &dyn MasterPolicy,
    train: &InitialDistributionSet,
    test: Option<&InitialDistributionSet>,
    tree: &Arc<NoiseTree>,
    iteration: usize,
    seed: u64,
) -> Result<(Option<ExploitabilityReport>, Vec<MeanFieldFlow>)> {
    let test_report = match test {
        Some(set) => {
            let mut r = exploitability(env, policy, set, tree)?;
            r.iteration = iteration;
            r.seed = seed;
            Some(r)
        }
        None => None,
    };
    let flows = train
        .members
        .iter()
        .map(|(label, mu0)| induced_flow(env, policy, label, mu0, tree).map(|f| f.flow))
        .collect::<Result<Vec<_>>>()?;
    Ok((test_report, flows))
}

/// Solves one seed with the configured solver.
pub fn solve_seed(cfg: &ExperimentConfig, seed: u64, log: &mut RunLog) -> Result<SeedOutput> {
    let env = Arc::new(cfg.env.build()?);
    let train = build_set(&env, &cfg.train, seed, SetRole::Training)?;
    let test = cfg
        .test
        .as_ref()
        .map(|t| build_set(&env, t, seed, SetRole::Testing))
        .transpose()?;
    let tree = build_tree(cfg, &env, seed)?;
    let k = cfg.solver.iterations;
    let start = Instant::now();
    let (mut trace, test_report, flows, checkpoint) = match cfg.solver.kind {
        SolverKind::Fp => {
            let (result, trace) = run_fp(&env, &train, &tree, k)?;
            let policy = result.combined_policy()?;
            let (t, f) = evaluate_final(&env, &policy, &train, test.as_ref(), &tree, k, seed)?;
            (trace, t, f, None)
        }
        SolverKind::Omd => {
            let (policy, trace) = run_omd(&env, &train, &tree, k, cfg.solver.tau)?;
            let (t, f) = evaluate_final(&env, &policy, &train, test.as_ref(), &tree, k, seed)?;
            (trace, t, f, None)
        }
        SolverKind::MasterOmdReference => {
            let lc = LineageConfig {
                bound: cfg.solver.lineage_bound,
                ..LineageConfig::new(cfg.solver.tau)
            };
            let (engine, trace) = master_omd_reference(env.clone(), &train, &tree, k, lc)?;
            let policy = engine.policy(k);
            let (t, f) = evaluate_final(&env, &policy, &train, test.as_ref(), &tree, k, seed)?;
            (trace, t, f, None)
        }
        SolverKind::MasterOmdNeural => {
            let (policy, trace) = train_master_omd(env.clone(), &train, tree.clone(), cfg.solver.train_config(seed))?;
            let (t, f) = evaluate_final(&env, &policy, &train, test.as_ref(), &tree, k, seed)?;
            (trace, t, f, Some(policy.checkpoint()))
        }
    };
    for rec in trace.records.iter_mut() {
        rec.report.seed = seed;
        log.line(format!(
            "seed {seed} iteration {} gap {} ({:.3}s)",
            rec.report.iteration,
            rec.report.mean(),
            rec.seconds
        ));
    }
    log.line(format!("seed {seed} done in {:.3}s", start.elapsed().as_secs_f64()));
    Ok(SeedOutput {
        seed,
        trace,
        test: test_report,
        flows,
        checkpoint,
    })
}

fn write_gap_rows<W: Write>(w: &mut csv::Writer<W>, report: &ExploitabilityReport) -> Result<()> {
    for r in &report.records {
        w.write_record([
            report.iteration.to_string(),
            report.seed.to_string(),
            r.mu0_label.clone(),
            r.noise_label.clone(),
            r.gap.to_string(),
        ])
        .map_err(csv_err)?;
    }
    Ok(())
}

/// Rows of `(iteration, mean, std)`.
pub type Summary = Vec<(usize, f64, f64)>;

/// `(iteration, mean, std)` of the per-seed mean gaps. The standard
/// deviation uses the `n - 1` denominator and is 0 for a single seed.
pub fn summarize(traces: &[&SolverTrace]) -> Summary {
    let k = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    (0..k)
        .map(|i| {
            let gaps: Vec<f64> = traces.iter().map(|t| t.records[i].report.mean()).collect();
            let n = gaps.len() as f64;
            let mean = gaps.iter().sum::<f64>() / n;
            let std = if gaps.len() > 1 {
                (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (traces[0].records[i].report.iteration, mean, std)
        })
        .collect()
}

fn write_summary(path: &Path, rows: &[(usize, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["iteration", "mean", "std"]).map_err(csv_err)?;
    for (k, m, s) in rows {
        w.write_record([k.to_string(), m.to_string(), s.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: Summary,
    pub seeds: Vec<SeedOutput>,
}

/// Runs every seed and writes the artifacts into `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(dir)?;
    let mut log = RunLog::create(&dir.join("run.log"))?;
    let result = run_into(cfg, dir, &mut log);
    if let Err(e) = &result {
        log.line(format!("error: {e}"));
    }
    result
}

fn run_into(cfg: &ExperimentConfig, dir: &Path, log: &mut RunLog) -> Result<RunOutcome> {
    fs::write(dir.join("config.toml"), cfg.canonical())?;
    log.line(format!("solver {} over seeds {:?}", cfg.solver.kind.name(), cfg.seeds));
    let env = cfg.env.build()?;
    for w in env.warnings() {
        log.line(format!("warning: {w}"));
    }
    let mut outputs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        outputs.push(solve_seed(cfg, seed, log)?);
    }

    let mut w = csv::Writer::from_path(dir.join("exploitability.csv")).map_err(csv_err)?;
    w.write_record(EXPLOITABILITY_HEADER).map_err(csv_err)?;
    for out in &outputs {
        for rec in &out.trace.records {
            write_gap_rows(&mut w, &rec.report)?;
        }
    }
    w.flush()?;

    if cfg.test.is_some() {
        let mut w = csv::Writer::from_path(dir.join("test_exploitability.csv")).map_err(csv_err)?;
        w.write_record(EXPLOITABILITY_HEADER).map_err(csv_err)?;
        for report in outputs.iter().filter_map(|o| o.test.as_ref()) {
            write_gap_rows(&mut w, report)?;
        }
        w.flush()?;
    }

    let traces: Vec<&SolverTrace> = outputs.iter().map(|o| &o.trace).collect();
    let summary = summarize(&traces);
    write_summary(&dir.join("summary.csv"), &summary)?;

    if cfg.export.flows {
        let flows_dir = dir.join("flows");
        fs::create_dir_all(&flows_dir)?;
        for out in &outputs {
            for flow in &out.flows {
                for p in 0..flow.num_paths() {
                    let label = &flow.tree().paths()[p].label;
                    let name = format!(
                        "seed{}_{}_{}.csv",
                        out.seed,
                        sanitize(&flow.mu0_label),
                        sanitize(label)
                    );
                    flow.write_csv(p, File::create(flows_dir.join(name))?)?;
                }
            }
        }
    }
    if cfg.export.svg {
        let title = format!("{} on {}: exploitability", cfg.solver.kind.name(), env.name());
        fs::write(dir.join("exploitability.svg"), exploitability_plot(&title, &summary))?;
    }
    if cfg.export.checkpoint {
        for out in &outputs {
            if let Some(cp) = &out.checkpoint {
                fs::write(dir.join(format!("checkpoint_seed{}.bin", out.seed)), cp.encode())?;
            }
        }
    }
    if let Some(last) = summary.last() {
        log.line(format!("final mean gap {} (std {})", last.1, last.2));
    }
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        summary,
        seeds: outputs,
    })
}

/// Theorem-1 check on the training set of the first seed.
pub fn run_theorem1(cfg: &ExperimentConfig, dir: &Path) -> Result<Theorem1Report> {
    fs::create_dir_all(dir)?;
    let mut log = RunLog::create(&dir.join("run.log"))?;
    let seed = cfg.seeds[0];
    let result = (|| {
        let env = Arc::new(cfg.env.build()?);
        let train = build_set(&env, &cfg.train, seed, SetRole::Training)?;
        let tree = build_tree(cfg, &env, seed)?;
        let lc = LineageConfig {
            bound: cfg.solver.lineage_bound,
            ..LineageConfig::new(cfg.solver.tau)
        };
        let start = Instant::now();
        let report = theorem1_residual(env, &train, &tree, cfg.solver.iterations, lc)?;
        log.line(format!(
            "max residual {:e} over {} states, cache entries {:?} ({:.3}s)",
            report.residual,
            report.visited,
            report.entries,
            start.elapsed().as_secs_f64()
        ));
        let mut w = csv::Writer::from_path(dir.join("theorem1.csv")).map_err(csv_err)?;
        w.write_record(["iteration", "residual"]).map_err(csv_err)?;
        for (k, r) in report.per_iteration.iter().enumerate() {
            w.write_record([(k + 1).to_string(), r.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        if let Some(d) = &report.divergence {
            return Err(Error::Domain(format!("flows diverged: {d}")));
        }
        if report.residual > THEOREM1_TOLERANCE {
            return Err(Error::Domain(format!(
                "residual {:e} exceeds {THEOREM1_TOLERANCE:e}",
                report.residual
            )));
        }
        Ok(report)
    })();
    if let Err(e) = &result {
        log.line(format!("error: {e}"));
    }
    result
}

pub struct AdhocSpec {
    pub checkpoint: PathBuf,
    pub join_step: usize,
    pub fraction: f64,
    pub newcomers: InitialKind,
    pub newcomers_seed: u64,
}

/// Flows with and without a joining team, for the first training member.
pub fn run_adhoc_eval(cfg: &ExperimentConfig, spec: &AdhocSpec, dir: &Path) -> Result<(MeanFieldFlow, MeanFieldFlow)> {
    fs::create_dir_all(dir)?;
    let mut log = RunLog::create(&dir.join("run.log"))?;
    let result = (|| {
        let env = cfg.env.build()?;
        let bytes = fs::read(&spec.checkpoint)?;
        let policy = NeuralPolicy::from_checkpoint(Checkpoint::decode(&bytes)?, &env)?;
        if !policy.population_dependent() {
            log.line("warning: the checkpoint ignores the population, so joining agents cannot change its actions");
        }
        let seed = cfg.seeds[0];
        let train = build_set(&env, &cfg.train, seed, SetRole::Training)?;
        let (label, mu0) = &train.members[0];
        let newcomers = make_initial_set(spec.newcomers, 1, &env, spec.newcomers_seed, SetRole::Testing)?;
        let tree = build_tree(cfg, &env, seed)?;
        let path = &tree.paths()[0];
        let base = induced_flow(&env, &policy, label, mu0, &Arc::new(NoiseTree::new(std::slice::from_ref(path))?))?.flow;
        let joined = flow_with_injection(
            &env,
            &policy,
            label,
            mu0,
            path,
            spec.join_step,
            &newcomers.members[0].1,
            spec.fraction,
        )?;
        base.write_csv(0, File::create(dir.join("adhoc_base.csv"))?)?;
        joined.write_csv(0, File::create(dir.join("adhoc_joined.csv"))?)?;
        log.line(format!(
            "join step {} fraction {} newcomers {}",
            spec.join_step, spec.fraction, newcomers.members[0].0
        ));
        Ok((base, joined))
    })();
    if let Err(e) = &result {
        log.line(format!("error: {e}"));
    }
    result
}

/// Neural training once per buffer capacity; returns per-capacity summaries.
pub fn run_buffer_sweep(
    cfg: &ExperimentConfig,
    capacities: &[usize],
    dir: &Path,
) -> Result<Vec<(usize, Summary)>> {
    if cfg.solver.kind != SolverKind::MasterOmdNeural {
        return Err(Error::Config("the buffer sweep needs solver.kind = \"master_omd_neural\"".into()));
    }
    if capacities.is_empty() || capacities.contains(&0) {
        return Err(Error::Config("capacities must be a non-empty list of positive sizes".into()));
    }
    fs::create_dir_all(dir)?;
    let mut log = RunLog::create(&dir.join("run.log"))?;
    let result = (|| {
        let env = Arc::new(cfg.env.build()?);
        let mut rows = csv::Writer::from_path(dir.join("sweep_buffer.csv")).map_err(csv_err)?;
        rows.write_record(["capacity", "iteration", "seed", "gap"]).map_err(csv_err)?;
        let mut out = Vec::new();
        for &cap in capacities {
            let mut traces = Vec::new();
            for &seed in &cfg.seeds {
                let train = build_set(&env, &cfg.train, seed, SetRole::Training)?;
                let tree = build_tree(cfg, &env, seed)?;
                let tc = crate::neural::TrainConfig {
                    capacity: cap,
                    ..cfg.solver.train_config(seed)
                };
                let mut trainer = Trainer::new(env.clone(), &train, tree, tc)?;
                let mut trace = SolverTrace::default();
                for _ in 0..cfg.solver.iterations {
                    let rec = trainer.step()?;
                    rows.write_record([
                        cap.to_string(),
                        rec.report.iteration.to_string(),
                        seed.to_string(),
                        rec.report.mean().to_string(),
                    ])
                    .map_err(csv_err)?;
                    trace.push(rec);
                }
                log.line(format!("capacity {cap} seed {seed} final gap {:?}", trace.last_gap()));
                traces.push(trace);
            }
            let refs: Vec<&SolverTrace> = traces.iter().collect();
            out.push((cap, summarize(&refs)));
        }
        rows.flush()?;
        let mut w = csv::Writer::from_path(dir.join("sweep_summary.csv")).map_err(csv_err)?;
        w.write_record(["capacity", "iteration", "mean", "std"]).map_err(csv_err)?;
        for (cap, summary) in &out {
            for (k, m, s) in summary {
                w.write_record([cap.to_string(), k.to_string(), m.to_string(), s.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(out)
    })();
    if let Err(e) = &result {
        log.line(format!("error: {e}"));
    }
    result
}
