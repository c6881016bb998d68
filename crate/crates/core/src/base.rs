//! State and action spaces, probability vectors, softmax policies and the
//! distribution keys used to index population-dependent tables.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Probabilities below this floor are clipped before every logarithm.
pub const LOG_CLIP: f64 = 1e-6;

/// Default quantization resolution for [`DistributionKey`].
pub const DEFAULT_KEY_RESOLUTION: f64 = 1e-9;

/// Tolerance on the total mass of a probability vector.
pub const MASS_TOL: f64 = 1e-9;

/// `ln(max(p, LOG_CLIP))`.
#[inline]
pub fn clipped_ln(p: f64) -> f64 {
    p.max(LOG_CLIP).ln()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Geometry {
    /// Row-major grid; cell `(col, row)` has index `row * width + col`.
    Grid {
        width: usize,
        height: usize,
        blocked: BTreeSet<usize>,
    },
    /// Cells `0..len` on a line.
    Line { len: usize },
    /// No spatial structure (hand-built tabular games).
    Unstructured,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    size: usize,
    geometry: Geometry,
}

impl StateSpace {
    pub fn grid(width: usize, height: usize, blocked: BTreeSet<usize>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        let size = width * height;
        if let Some(&b) = blocked.iter().find(|&&b| b >= size) {
            return Err(Error::Config(format!("blocked cell {b} outside {width}x{height} grid")));
        }
        if blocked.len() == size {
            return Err(Error::Config("every grid cell is blocked".into()));
        }
        let space = StateSpace {
            size,
            geometry: Geometry::Grid {
                width,
                height,
                blocked,
            },
        };
        if size > 1 {
            for x in 0..size {
                if space.is_blocked(x) {
                    continue;
                }
                let (c, r) = (x % width, x / width);
                let has_neighbor = [(0i64, -1i64), (0, 1), (-1, 0), (1, 0)].iter().any(|&(dc, dr)| {
                    let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                    nc >= 0
                        && nr >= 0
                        && (nc as usize) < width
                        && (nr as usize) < height
                        && !space.is_blocked(nr as usize * width + nc as usize)
                });
                if !has_neighbor {
                    return Err(Error::Config(format!("cell {x} has no admissible neighbor")));
                }
            }
        }
        Ok(space)
    }

    pub fn line(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("line length must be positive".into()));
        }
        Ok(StateSpace {
            size: len,
            geometry: Geometry::Line { len },
        })
    }

    pub fn unstructured(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Config("state space must be non-empty".into()));
        }
        Ok(StateSpace {
            size,
            geometry: Geometry::Unstructured,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn is_blocked(&self, x: usize) -> bool {
        match &self.geometry {
            Geometry::Grid { blocked, .. } => blocked.contains(&x),
            _ => false,
        }
    }

    /// Indices of states that can carry mass.
    pub fn open_states(&self) -> Vec<usize> {
        (0..self.size).filter(|&x| !self.is_blocked(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    pub name: String,
    pub dx: i64,
    pub dy: i64,
}

impl Action {
    pub fn new(name: impl Into<String>, dx: i64, dy: i64) -> Self {
        Action {
            name: name.into(),
            dx,
            dy,
        }
    }

    /// L1 size of the displacement; 0 for "stay".
    pub fn magnitude(&self) -> f64 {
        (self.dx.abs() + self.dy.abs()) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    actions: Vec<Action>,
}

impl ActionSpace {
    pub fn new(actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::Config("action space must be non-empty".into()));
        }
        Ok(ActionSpace { actions })
    }

    /// up, down, left, right, stay.
    pub fn grid_moves() -> Self {
        ActionSpace {
            actions: vec![
                Action::new("up", 0, -1),
                Action::new("down", 0, 1),
                Action::new("left", -1, 0),
                Action::new("right", 1, 0),
                Action::new("stay", 0, 0),
            ],
        }
    }

    /// left, stay, right.
    pub fn line_moves() -> Self {
        ActionSpace {
            actions: vec![
                Action::new("left", -1, 0),
                Action::new("stay", 0, 0),
                Action::new("right", 1, 0),
            ],
        }
    }

    /// Integer moves `-max..=max`.
    pub fn integer_moves(max: usize) -> Self {
        let m = max as i64;
        ActionSpace {
            actions: (-m..=m).map(|d| Action::new(format!("{d:+}"), d, 0)).collect(),
        }
    }

    /// Abstract actions without displacement semantics.
    pub fn abstract_actions(count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| Action::new(format!("a{i}"), 0, 0)).collect())
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, a: usize) -> &Action {
        &self.actions[a]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter()
    }
}

fn check_simplex(mass: &[f64]) -> std::result::Result<(), String> {
    if mass.is_empty() {
        return Err("empty probability vector".into());
    }
    let mut total = 0.0;
    for (i, &m) in mass.iter().enumerate() {
        if !m.is_finite() {
            return Err(format!("entry {i} is not finite"));
        }
        if m < 0.0 {
            return Err(format!("entry {i} is negative ({m})"));
        }
        total += m;
    }
    if (total - 1.0).abs() > MASS_TOL {
        return Err(format!("entries sum to {total}"));
    }
    Ok(())
}

/// Population distribution over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution(Vec<f64>);

impl StateDistribution {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        check_simplex(&mass).map_err(Error::InvalidDistribution)?;
        Ok(StateDistribution(mass))
    }

    /// Validates against a state space, including zero mass on blocked cells.
    pub fn on(space: &StateSpace, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != space.size() {
            return Err(Error::InvalidDistribution(format!(
                "length {} does not match {} states",
                mass.len(),
                space.size()
            )));
        }
        if let Some(x) = (0..mass.len()).find(|&x| space.is_blocked(x) && mass[x] != 0.0) {
            return Err(Error::InvalidDistribution(format!("mass on blocked cell {x}")));
        }
        Self::new(mass)
    }

    /// Normalizes non-negative weights; blocked cells are zeroed first.
    pub fn from_weights(space: &StateSpace, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != space.size() {
            return Err(Error::InvalidDistribution("weight length mismatch".into()));
        }
        for (x, w) in weights.iter_mut().enumerate() {
            if space.is_blocked(x) {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidDistribution("weights must be non-negative with positive total".into()));
        }
        Self::on(space, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn point_mass(size: usize, x: usize) -> Result<Self> {
        if x >= size {
            return Err(Error::InvalidDistribution(format!("state {x} out of range {size}")));
        }
        let mut mass = vec![0.0; size];
        mass[x] = 1.0;
        Ok(StateDistribution(mass))
    }

    pub fn uniform(space: &StateSpace) -> Self {
        let open = space.open_states();
        let w = 1.0 / open.len() as f64;
        let mut mass = vec![0.0; space.size()];
        for x in open {
            mass[x] = w;
        }
        StateDistribution(mass)
    }

    pub(crate) fn from_raw(mass: Vec<f64>) -> Self {
        StateDistribution(mass)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn sup_distance(&self, other: &StateDistribution) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for StateDistribution {
    type Output = f64;
    fn index(&self, x: usize) -> &f64 {
        &self.0[x]
    }
}

/// Mixed action at a single state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution(Vec<f64>);

impl ActionDistribution {
    pub fn new(prob: Vec<f64>) -> Result<Self> {
        check_simplex(&prob).map_err(Error::InvalidDistribution)?;
        Ok(ActionDistribution(prob))
    }

    pub fn uniform(n: usize) -> Self {
        ActionDistribution(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ActionDistribution {
    type Output = f64;
    fn index(&self, a: usize) -> &f64 {
        &self.0[a]
    }
}

/// `softmax(q / tau)` with max-subtraction.
pub fn softmax_policy(q_row: &[f64], tau: f64) -> Result<ActionDistribution> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("temperature must be positive and finite, got {tau}")));
    }
    if q_row.is_empty() {
        return Err(Error::InvalidDistribution("empty q row".into()));
    }
    if let Some(index) = q_row.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut out = vec![0.0; q_row.len()];
    softmax_into(q_row, tau, &mut out);
    Ok(ActionDistribution(out))
}

/// Unchecked kernel behind [`softmax_policy`]; inputs must be finite.
pub(crate) fn softmax_into(q_row: &[f64], tau: f64, out: &mut [f64]) {
    let max = q_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &q) in out.iter_mut().zip(q_row) {
        *o = ((q - max) / tau).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `KL(p || q)` with `q` clipped at [`LOG_CLIP`] inside the logarithm.
pub fn kl_divergence(p: &ActionDistribution, q: &ActionDistribution) -> Result<f64> {
    if p.0.len() != q.0.len() {
        return Err(Error::Domain(format!(
            "action distributions of length {} and {}",
            p.0.len(),
            q.0.len()
        )));
    }
    let kl: f64 = p
        .0
        .iter()
        .zip(&q.0)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - clipped_ln(qi)))
        .sum();
    Ok(kl.max(0.0))
}

/// Quantized fingerprint of a distribution at a timestep.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DistributionKey {
    pub timestep: usize,
    pub quantized: Box<[i64]>,
}

impl DistributionKey {
    pub fn with_resolution(mu: &StateDistribution, n: usize, resolution: f64) -> Self {
        DistributionKey {
            timestep: n,
            quantized: mu.0.iter().map(|m| (m / resolution).round() as i64).collect(),
        }
    }
}

impl fmt::Display for DistributionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} [", self.timestep)?;
        for (i, q) in self.quantized.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{q}")?;
        }
        write!(f, "]")
    }
}

/// Key at the default resolution.
pub fn distribution_key(mu: &StateDistribution, n: usize) -> DistributionKey {
    DistributionKey::with_resolution(mu, n, DEFAULT_KEY_RESOLUTION)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax_policy(&[0.0; 5], 50.0).unwrap();
        for a in 0..5 {
            assert_abs_diff_eq!(p[a], 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_two_actions_by_hand() {
        let p = softmax_policy(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / (1.0 + e), epsilon = 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite_with_index() {
        match softmax_policy(&[0.0, f64::NAN, 1.0], 1.0) {
            Err(Error::NonFinite { index }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(softmax_policy(&[0.0], 0.0).is_err());
    }

    #[test]
    fn softmax_large_values_do_not_overflow() {
        let p = softmax_policy(&[1000.0, 999.0, -1000.0], 1.0).unwrap();
        assert!(p.as_slice().iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0] + p[1] + p[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_hand_values() {
        let u = ActionDistribution::new(vec![0.5, 0.5]).unwrap();
        let d = ActionDistribution::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(kl_divergence(&u, &u).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_divergence(&d, &u).unwrap(), 2f64.ln(), epsilon = 1e-15);
        let expected = 0.5 * (0.5f64 / 1.0).ln() + 0.5 * (0.5f64 / 1e-6).ln();
        assert_abs_diff_eq!(kl_divergence(&u, &d).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn keys_absorb_float_noise_and_separate_points() {
        let mu = StateDistribution::new(vec![0.3, 0.3, 0.4]).unwrap();
        let nudged = StateDistribution::from_raw(vec![0.3 + 1e-12, 0.3 - 1e-12, 0.4]);
        assert_eq!(distribution_key(&mu, 2), distribution_key(&mu, 2));
        assert_eq!(distribution_key(&mu, 2), distribution_key(&nudged, 2));
        let a = StateDistribution::point_mass(3, 0).unwrap();
        let b = StateDistribution::point_mass(3, 1).unwrap();
        assert_ne!(distribution_key(&a, 0), distribution_key(&b, 0));
        assert_ne!(distribution_key(&a, 0), distribution_key(&a, 1));
    }

    #[test]
    fn distributions_validate() {
        assert!(StateDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(StateDistribution::new(vec![-0.1, 1.1]).is_err());
        let space = StateSpace::grid(3, 3, [4].into_iter().collect()).unwrap();
        let mut mass = vec![0.0; 9];
        mass[4] = 1.0;
        assert!(StateDistribution::on(&space, mass).is_err());
        let u = StateDistribution::uniform(&space);
        assert_eq!(u[4], 0.0);
        assert_abs_diff_eq!(u.total(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn grid_rejects_isolated_cells() {
        // Cell 0 of a 3x3 grid walled off by 1 and 3.
        let blocked = [1, 3].into_iter().collect();
        assert!(StateSpace::grid(3, 3, blocked).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(q in prop::collection::vec(-1e3f64..1e3, 1..8), log_tau in -3.0f64..3.0) {
            let tau = 10f64.powf(log_tau);
            let p = softmax_policy(&q, tau).unwrap();
            let total: f64 = p.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn softmax_is_shift_invariant(q in prop::collection::vec(-10f64..10.0, 1..8), c in -100f64..100.0, tau in 0.1f64..10.0) {
            let p = softmax_policy(&q, tau).unwrap();
            let shifted: Vec<f64> = q.iter().map(|v| v + c).collect();
            let ps = softmax_policy(&shifted, tau).unwrap();
            for (a, b) in p.as_slice().iter().zip(ps.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_flattens_at_high_temperature(q in prop::collection::vec(-1f64..1.0, 1..8)) {
            let p = softmax_policy(&q, 1e6).unwrap();
            let u = 1.0 / q.len() as f64;
            for v in p.as_slice() {
                prop_assert!((v - u).abs() <= 1e-5);
            }
        }

        #[test]
        fn kl_is_non_negative(a in prop::collection::vec(0f64..1.0, 2..6), b in prop::collection::vec(0f64..1.0, 2..6)) {
            let n = a.len().min(b.len());
            let norm = |v: &[f64]| {
                let s: f64 = v.iter().sum::<f64>() + 1e-3 * n as f64;
                v.iter().map(|x| (x + 1e-3) / s).collect::<Vec<_>>()
            };
            let p = ActionDistribution::new(norm(&a[..n])).unwrap();
            let q = ActionDistribution::new(norm(&b[..n])).unwrap();
            let kl = kl_divergence(&p, &q).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12);
        }
    }
}
