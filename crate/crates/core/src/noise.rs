//! Common-noise paths, the progressive-reveal observation encoding, and the
//! scenario tree that a finite set of paths induces.
//!
//! A population conditioned on the revealed history `Ξ_n` cannot tell apart
//! two paths that share a prefix, so learners and best responses work on the
//! prefix tree: one node per distinct `(ξ_0, ..., ξ_n)`, weighted by the
//! fraction of configured paths passing through it.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A realized noise sequence `ξ_0..ξ_{N_T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonNoisePath {
    pub label: String,
    values: Vec<f64>,
}

impl CommonNoisePath {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::NoisePath("path must contain at least xi_0".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NoisePath(format!("value at n={i} is not finite")));
        }
        Ok(CommonNoisePath {
            label: label.into(),
            values,
        })
    }

    /// The all-zero path used by environments without common noise.
    pub fn silent(horizon: usize) -> Self {
        CommonNoisePath {
            label: "none".into(),
            values: vec![0.0; horizon + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, n: usize) -> f64 {
        self.values[n]
    }
}

/// The noise history visible at timestep `reveal_index`, zero-padded to a
/// constant length.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseObservation {
    pub padded: Vec<f64>,
    pub reveal_index: usize,
}

impl NoiseObservation {
    pub fn key(&self) -> NoiseKey {
        NoiseKey(self.padded[..=self.reveal_index].iter().map(|v| v.to_bits()).collect())
    }
}

/// Exact identity of a revealed prefix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NoiseKey(Box<[u64]>);

impl NoiseKey {
    pub fn of_prefix(values: &[f64]) -> Self {
        NoiseKey(values.iter().map(|v| v.to_bits()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LqNoiseVariant {
    Xi1,
    Xi2,
}

/// Open/closed bar status: 1 until a switch time drawn uniformly from
/// `window.0..window.1`, 0 afterwards.
pub fn closure_process(horizon: usize, window: (usize, usize), seed: u64) -> Result<CommonNoisePath> {
    let (lo, hi) = window;
    if lo >= hi || hi > horizon {
        return Err(Error::Config(format!(
            "closure window ({lo}, {hi}) must satisfy lo < hi <= horizon ({horizon})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let switch = rng.gen_range(lo..hi);
    Ok(closure_path_with_switch(horizon, switch))
}

pub fn closure_path_with_switch(horizon: usize, switch: usize) -> CommonNoisePath {
    let values = (0..=horizon).map(|n| if n < switch { 1.0 } else { 0.0 }).collect();
    CommonNoisePath {
        label: format!("closure_{switch}"),
        values,
    }
}

/// The default closure window `[N_T/3, 2N_T/3)`, widened to be non-empty.
pub fn default_closure_window(horizon: usize) -> (usize, usize) {
    let lo = horizon / 3;
    let hi = (2 * horizon / 3).max(lo + 1).min(horizon.max(1));
    (lo.min(hi.saturating_sub(1)), hi)
}

/// Piecewise step noise: `xi1` is -10 for n <= 8, 0 for 8 < n <= 20 and
/// +10 afterwards; `xi2` is its negation.
pub fn lq_step_process(variant: LqNoiseVariant, horizon: usize) -> CommonNoisePath {
    let sign = match variant {
        LqNoiseVariant::Xi1 => 1.0,
        LqNoiseVariant::Xi2 => -1.0,
    };
    let values = (0..=horizon)
        .map(|n| {
            let v: f64 = if n <= 8 {
                -10.0
            } else if n <= 20 {
                0.0
            } else {
                10.0
            };
            // keep +0.0 in the flat segment for both variants
            if v == 0.0 {
                0.0
            } else {
                sign * v
            }
        })
        .collect();
    CommonNoisePath {
        label: match variant {
            LqNoiseVariant::Xi1 => "xi1".into(),
            LqNoiseVariant::Xi2 => "xi2".into(),
        },
        values,
    }
}

pub fn reveal(path: &CommonNoisePath, n: usize) -> Result<NoiseObservation> {
    let horizon = path.horizon();
    if n > horizon {
        return Err(Error::Domain(format!("reveal index {n} beyond horizon {horizon}")));
    }
    let mut padded = vec![0.0; horizon + 1];
    padded[..=n].copy_from_slice(&path.values[..=n]);
    Ok(NoiseObservation { padded, reveal_index: n })
}

/// Writes one CSV row per path: label, xi_0, ..., xi_{N_T}.
pub fn write_paths_csv<W: Write>(paths: &[CommonNoisePath], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).has_headers(false).from_writer(out);
    for p in paths {
        let mut record = vec![p.label.clone()];
        record.extend(p.values.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(|e| Error::NoisePath(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the format produced by [`write_paths_csv`]. All rows must share one
/// horizon.
pub fn read_paths_csv<R: Read>(input: R) -> Result<Vec<CommonNoisePath>> {
    let mut r = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_reader(input);
    let mut paths = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::NoisePath(format!("row {row}: {e}")))?;
        let mut fields = record.iter();
        let label = fields
            .next()
            .ok_or_else(|| Error::NoisePath(format!("row {row}: missing label")))?;
        let values = fields
            .enumerate()
            .map(|(i, f)| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::NoisePath(format!("row {row}, xi_{i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let path = CommonNoisePath::new(label, values).map_err(|e| Error::NoisePath(format!("row {row}: {e}")))?;
        if let Some(first) = paths.first() {
            let first: &CommonNoisePath = first;
            if first.horizon() != path.horizon() {
                return Err(Error::NoisePath(format!(
                    "row {row}: horizon {} differs from {}",
                    path.horizon(),
                    first.horizon()
                )));
            }
        }
        paths.push(path);
    }
    if paths.is_empty() {
        return Err(Error::NoisePath("no paths".into()));
    }
    Ok(paths)
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub n: usize,
    pub xi: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Fraction of paths through this node.
    pub weight: f64,
    /// Index of one path through this node, used to rebuild observations.
    pub witness: usize,
}

/// Prefix tree of a finite path set with uniform path weights.
#[derive(Debug, Clone)]
pub struct NoiseTree {
    horizon: usize,
    nodes: Vec<TreeNode>,
    roots: Vec<usize>,
    path_nodes: Vec<Vec<usize>>,
    paths: Vec<CommonNoisePath>,
    index: HashMap<NoiseKey, usize>,
}

impl NoiseTree {
    pub fn new(paths: &[CommonNoisePath]) -> Result<Self> {
        let first = paths.first().ok_or_else(|| Error::NoisePath("empty path set".into()))?;
        let horizon = first.horizon();
        if let Some(p) = paths.iter().find(|p| p.horizon() != horizon) {
            return Err(Error::NoisePath(format!("path {} has a different horizon", p.label)));
        }
        let w = 1.0 / paths.len() as f64;
        let mut nodes: Vec<TreeNode> = Vec::new();
        let mut roots = Vec::new();
        let mut index: HashMap<NoiseKey, usize> = HashMap::new();
        let mut path_nodes = Vec::with_capacity(paths.len());
        for (pi, path) in paths.iter().enumerate() {
            let mut seq = Vec::with_capacity(horizon + 1);
            let mut parent: Option<usize> = None;
            for n in 0..=horizon {
                let key = NoiseKey::of_prefix(&path.values[..=n]);
                let id = match index.get(&key) {
                    Some(&id) => {
                        nodes[id].weight += w;
                        id
                    }
                    None => {
                        let id = nodes.len();
                        nodes.push(TreeNode {
                            n,
                            xi: path.values[n],
                            parent,
                            children: Vec::new(),
                            weight: w,
                            witness: pi,
                        });
                        match parent {
                            Some(p) => nodes[p].children.push(id),
                            None => roots.push(id),
                        }
                        index.insert(key, id);
                        id
                    }
                };
                seq.push(id);
                parent = Some(id);
            }
            path_nodes.push(seq);
        }
        Ok(NoiseTree {
            horizon,
            nodes,
            roots,
            path_nodes,
            paths: paths.to_vec(),
            index,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn paths(&self) -> &[CommonNoisePath] {
        &self.paths
    }

    /// Node ids visited by path `p`, one per timestep.
    pub fn path_nodes(&self, p: usize) -> &[usize] {
        &self.path_nodes[p]
    }

    pub fn observation(&self, id: usize) -> NoiseObservation {
        let node = &self.nodes[id];
        reveal(&self.paths[node.witness], node.n).expect("node timestep within horizon")
    }

    pub fn lookup(&self, obs: &NoiseObservation) -> Option<usize> {
        self.index.get(&obs.key()).copied()
    }

    pub fn nodes_at(&self, n: usize) -> usize {
        self.nodes.iter().filter(|v| v.n == n).count()
    }

    /// Node ids of the subtree rooted at `id`, parents before children.
    pub fn subtree(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.nodes[out[i]].children);
            i += 1;
        }
        out
    }

    /// Conditional probability of moving from the parent to `child`.
    pub fn child_prob(&self, child: usize) -> f64 {
        let c = &self.nodes[child];
        match c.parent {
            Some(p) => c.weight / self.nodes[p].weight,
            None => c.weight,
        }
    }

    pub fn is_chain(&self) -> bool {
        self.paths.len() == 1 || self.nodes.len() == self.horizon + 1
    }
}
