//! Explicit Q-sum OMD against the Munchausen recursion.

mod common;

use std::sync::Arc;

use mfglab::noise::{CommonNoisePath, NoiseTree};
use mfglab::solvers::{theorem1_residual, LineageConfig};

#[test]
fn policies_coincide_on_grid_and_two_state_games() {
    let v = common::criteria::theorem1();
    assert!(v.pass, "{}", v.detail);
}

#[test]
fn log_clip_breakdown_is_reported_not_hidden() {
    // At a low temperature the lineage policies saturate below the log
    // clip, where the two recursions legitimately part ways. The check must
    // surface that as a divergence rather than a small residual.
    let (env, set) = common::criteria::two_state_instance();
    let tree = Arc::new(NoiseTree::new(&[CommonNoisePath::silent(3)]).unwrap());
    let r = theorem1_residual(env, &set, &tree, 25, LineageConfig::new(1.0)).unwrap();
    assert!(r.divergence.is_some());
    assert!(r.per_iteration[..10].iter().all(|&v| v <= 1e-12), "{:?}", r.per_iteration);
}
