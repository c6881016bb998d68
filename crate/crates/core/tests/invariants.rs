//! Structural invariants over fuzzed policies, distributions and noise.

mod common;

use common::criteria;

#[test]
fn flows_conserve_mass_and_exploitability_is_nonnegative() {
    let (mass, gap) = criteria::mass_and_exploitability(100).unwrap();
    assert!(mass <= 1e-9 && gap >= -1e-8);
}

#[test]
fn transition_rows_are_distributions() {
    assert!(criteria::transition_rows(10_000).unwrap() <= 1e-12);
}

#[test]
fn crowd_aversion_is_monotone() {
    assert!(criteria::monotonicity(1000).unwrap() <= 1e-12);
}
