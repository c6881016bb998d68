//! Tabular reference learners: fictitious play, classic online mirror
//! descent, and lineage-exact master OMD with its explicit-sum twin.

mod lineage;

pub use lineage::{
    estimate_lineage_entries, explicit_sum_omd_reference, master_omd_reference, theorem1_residual, LineageConfig,
    LineageEngine, LineageMode, LineagePolicy, Theorem1Report, DEFAULT_LINEAGE_BOUND,
};

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use crate::base::{softmax_into, StateDistribution};
use crate::envs::{Env, InitialDistributionSet};
use crate::error::{Error, Result};
use crate::exact::{best_response_tables, evaluate_tables, gaps_for_flow, greedy_tables, ExploitabilityReport};
use crate::meanfield::{csv_err, flow_from_tables, InducedFlow, MeanFieldFlow};
use crate::noise::NoiseTree;
use crate::policy::{population_mixture, NodePolicy, PolicyTable};

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub report: ExploitabilityReport,
    pub seconds: f64,
    pub cache_entries: usize,
    pub cache_hits: u64,
}

/// Per-iteration exploitability plus cost counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
}

impl SolverTrace {
    pub fn push(&mut self, record: IterationRecord) {
        if let Some(last) = self.records.last() {
            assert!(
                record.report.iteration > last.report.iteration,
                "trace iterations must increase"
            );
        }
        self.records.push(record);
    }

    /// Mean gap per iteration.
    pub fn gaps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.report.mean()).collect()
    }

    pub fn last_gap(&self) -> Option<f64> {
        self.records.last().map(|r| r.report.mean())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = ExploitabilityReport::csv_header().to_vec();
        header.extend(["seconds", "cache_entries", "cache_hits"]);
        w.write_record(&header).map_err(csv_err)?;
        for rec in &self.records {
            for r in &rec.report.records {
                w.write_record([
                    rec.report.iteration.to_string(),
                    rec.report.seed.to_string(),
                    r.mu0_label.clone(),
                    r.noise_label.clone(),
                    r.br_value.to_string(),
                    r.policy_value.to_string(),
                    r.gap.to_string(),
                    rec.seconds.to_string(),
                    rec.cache_entries.to_string(),
                    rec.cache_hits.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn validate_inputs(env: &Env, set: &InitialDistributionSet, tree: &NoiseTree) -> Result<()> {
    if tree.horizon() != env.horizon() {
        return Err(Error::Domain(format!(
            "noise horizon {} differs from env horizon {}",
            tree.horizon(),
            env.horizon()
        )));
    }
    if set.is_empty() {
        return Err(Error::Config("empty initial distribution set".into()));
    }
    if let Some((label, _)) = set.members.iter().find(|(_, m)| m.len() != env.num_states()) {
        return Err(Error::Domain(format!("initial distribution {label} has the wrong size")));
    }
    Ok(())
}

fn uniform_tables(env: &Env, tree: &NoiseTree) -> Vec<PolicyTable> {
    vec![PolicyTable::uniform(env.num_states(), env.num_actions()); tree.nodes().len()]
}

fn report(iteration: usize, records: Vec<crate::exact::GapRecord>) -> ExploitabilityReport {
    ExploitabilityReport {
        iteration,
        seed: 0,
        records,
        flow_kind: "exact",
    }
}

/// Fictitious play state for one initial distribution.
#[derive(Debug, Clone)]
pub struct FpMember {
    pub label: String,
    /// Best responses `pi^1 .. pi^K`, node-indexed.
    pub best_responses: Vec<Vec<PolicyTable>>,
    /// Flows generated by each best response.
    pub response_flows: Vec<Vec<StateDistribution>>,
    /// Running average `mu_bar^K`.
    pub average_flow: MeanFieldFlow,
    /// Population-weighted mixture of all best responses.
    pub mixture: Vec<PolicyTable>,
}

#[derive(Debug, Clone)]
pub struct FpResult {
    pub tree: Arc<NoiseTree>,
    pub members: Vec<FpMember>,
}

impl FpResult {
    pub fn member_policy(&self, i: usize) -> Result<NodePolicy> {
        NodePolicy::new(self.tree.clone(), self.members[i].mixture.clone())
    }

    /// One population-independent policy for all members: every member's
    /// best responses mixed with equal member weight.
    pub fn combined_policy(&self) -> Result<NodePolicy> {
        let mut comps: Vec<(&[PolicyTable], &[StateDistribution])> = Vec::new();
        let mut weights = Vec::new();
        let m = self.members.len() as f64;
        for member in &self.members {
            let k = member.best_responses.len() as f64;
            for (t, f) in member.best_responses.iter().zip(&member.response_flows) {
                comps.push((t, f));
                weights.push(1.0 / (m * k));
            }
        }
        NodePolicy::new(self.tree.clone(), population_mixture(&comps, &weights)?)
    }
}

/// Classic fictitious play, run separately from each initial distribution.
/// Iteration `k` best-responds to the average of the flows generated by
/// the previous policies; the reported policy at `k` mixes `pi^1 .. pi^k`.
pub fn run_fp(
    env: &Env,
    set: &InitialDistributionSet,
    tree: &Arc<NoiseTree>,
    iterations: usize,
) -> Result<(FpResult, SolverTrace)> {
    if iterations == 0 {
        return Err(Error::Config("fictitious play needs at least one iteration".into()));
    }
    let mut states = Vec::new();
    let mut trace = SolverTrace::default();
    let mut steppers = fp_steppers(env, set, tree)?;
    for k in 1..=iterations {
        let start = Instant::now();
        let mut records = Vec::new();
        for s in steppers.iter_mut() {
            records.extend(s.step(env)?);
        }
        trace.push(IterationRecord {
            report: report(k, records),
            seconds: start.elapsed().as_secs_f64(),
            cache_entries: 0,
            cache_hits: 0,
        });
    }
    for s in steppers {
        states.push(s.finish()?);
    }
    Ok((
        FpResult {
            tree: tree.clone(),
            members: states,
        },
        trace,
    ))
}

/// Incremental fictitious play for one initial distribution.
pub struct FpStepper {
    label: String,
    mu0: StateDistribution,
    tree: Arc<NoiseTree>,
    current: Vec<PolicyTable>,
    average: Option<Vec<Vec<f64>>>,
    k: usize,
    best_responses: Vec<Vec<PolicyTable>>,
    response_flows: Vec<Vec<StateDistribution>>,
    mixture: Vec<PolicyTable>,
}

pub fn fp_steppers(env: &Env, set: &InitialDistributionSet, tree: &Arc<NoiseTree>) -> Result<Vec<FpStepper>> {
    validate_inputs(env, set, tree)?;
    Ok(set
        .members
        .iter()
        .map(|(label, mu0)| FpStepper {
            label: label.clone(),
            mu0: mu0.clone(),
            tree: tree.clone(),
            current: uniform_tables(env, tree),
            average: None,
            k: 0,
            best_responses: Vec::new(),
            response_flows: Vec::new(),
            mixture: Vec::new(),
        })
        .collect())
}

impl FpStepper {
    pub fn iteration(&self) -> usize {
        self.k
    }

    /// Runs one iteration and returns the gap records of the new mixture.
    pub fn step(&mut self, env: &Env) -> Result<Vec<crate::exact::GapRecord>> {
        self.k += 1;
        let k = self.k as f64;
        let flow = match self.response_flows.last() {
            Some(f) => f.clone(),
            None => flow_from_tables(env, &self.label, &self.mu0, &self.tree, &self.current)?
                .nodes()
                .to_vec(),
        };
        let avg = match self.average.take() {
            None => flow.iter().map(|m| m.as_slice().to_vec()).collect::<Vec<_>>(),
            Some(mut a) => {
                for (node, m) in a.iter_mut().zip(&flow) {
                    for (v, x) in node.iter_mut().zip(m.as_slice()) {
                        *v = ((k - 1.0) * *v + x) / k;
                    }
                }
                a
            }
        };
        let avg_flow = MeanFieldFlow::new(
            self.label.clone(),
            self.tree.clone(),
            avg.iter().map(|v| StateDistribution::from_raw(v.clone())).collect(),
        )?;
        let br = greedy_tables(&best_response_tables(env, &avg_flow)?, env.num_actions());
        let br_flow = flow_from_tables(env, &self.label, &self.mu0, &self.tree, &br)?;
        self.average = Some(avg);
        self.current = br.clone();
        self.best_responses.push(br);
        self.response_flows.push(br_flow.nodes().to_vec());
        let comps: Vec<(&[PolicyTable], &[StateDistribution])> = self
            .best_responses
            .iter()
            .zip(&self.response_flows)
            .map(|(t, f)| (t.as_slice(), f.as_slice()))
            .collect();
        let weights = vec![1.0 / k; comps.len()];
        self.mixture = population_mixture(&comps, &weights)?;
        let flow = flow_from_tables(env, &self.label, &self.mu0, &self.tree, &self.mixture)?;
        gaps_for_flow(
            env,
            &InducedFlow {
                flow,
                tables: self.mixture.clone(),
            },
        )
    }

    /// The running average `mu_bar^k` as a flow.
    pub fn average_flow(&self) -> Option<MeanFieldFlow> {
        self.average.as_ref().map(|a| {
            MeanFieldFlow::new(
                self.label.clone(),
                self.tree.clone(),
                a.iter().map(|v| StateDistribution::from_raw(v.clone())).collect(),
            )
            .expect("node count matches")
        })
    }

    pub fn finish(self) -> Result<FpMember> {
        let average_flow = self
            .average_flow()
            .ok_or_else(|| Error::Config("fictitious play needs at least one iteration".into()))?;
        Ok(FpMember {
            label: self.label,
            best_responses: self.best_responses,
            response_flows: self.response_flows,
            average_flow,
            mixture: self.mixture,
        })
    }
}

/// Classic OMD: `qbar += Q^{pi^{k-1}, mu^k} / tau`, `pi^k = softmax(qbar)`.
/// With several initial distributions the evaluations are averaged, which
/// yields one population-independent policy for the whole set.
pub fn run_omd(
    env: &Env,
    set: &InitialDistributionSet,
    tree: &Arc<NoiseTree>,
    iterations: usize,
    tau: f64,
) -> Result<(NodePolicy, SolverTrace)> {
    let mut stepper = OmdStepper::new(env, set, tree, tau)?;
    let mut trace = SolverTrace::default();
    for _ in 0..iterations {
        let start = Instant::now();
        let rep = stepper.step(env)?;
        trace.push(IterationRecord {
            report: rep,
            seconds: start.elapsed().as_secs_f64(),
            cache_entries: 0,
            cache_hits: 0,
        });
    }
    Ok((stepper.policy()?, trace))
}

pub struct OmdStepper {
    set: InitialDistributionSet,
    tree: Arc<NoiseTree>,
    tau: f64,
    qbar: Vec<Vec<f64>>,
    tables: Vec<PolicyTable>,
    k: usize,
}

impl OmdStepper {
    pub fn new(env: &Env, set: &InitialDistributionSet, tree: &Arc<NoiseTree>, tau: f64) -> Result<Self> {
        validate_inputs(env, set, tree)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {tau}")));
        }
        Ok(OmdStepper {
            set: set.clone(),
            tree: tree.clone(),
            tau,
            qbar: vec![vec![0.0; env.num_states() * env.num_actions()]; tree.nodes().len()],
            tables: uniform_tables(env, tree),
            k: 0,
        })
    }

    pub fn tables(&self) -> &[PolicyTable] {
        &self.tables
    }

    pub fn policy(&self) -> Result<NodePolicy> {
        NodePolicy::new(self.tree.clone(), self.tables.clone())
    }

    pub fn step(&mut self, env: &Env) -> Result<ExploitabilityReport> {
        self.k += 1;
        let na = env.num_actions();
        let weight = 1.0 / (self.tau * self.set.len() as f64);
        for (label, mu0) in &self.set.members {
            let flow = flow_from_tables(env, label, mu0, &self.tree, &self.tables)?;
            let q = evaluate_tables(env, &flow, &self.tables, 1.0)?;
            for (acc, qn) in self.qbar.iter_mut().zip(&q) {
                for (a, v) in acc.iter_mut().zip(qn) {
                    *a += weight * v;
                }
            }
        }
        self.tables = self
            .qbar
            .iter()
            .map(|q| {
                let mut probs = vec![0.0; q.len()];
                for (row, out) in q.chunks(na).zip(probs.chunks_mut(na)) {
                    softmax_into(row, 1.0, out);
                }
                PolicyTable::from_raw(na, probs)
            })
            .collect();
        let mut records = Vec::new();
        for (label, mu0) in &self.set.members {
            let flow = flow_from_tables(env, label, mu0, &self.tree, &self.tables)?;
            records.extend(gaps_for_flow(
                env,
                &InducedFlow {
                    flow,
                    tables: self.tables.clone(),
                },
            )?);
        }
        Ok(report(self.k, records))
    }
}
