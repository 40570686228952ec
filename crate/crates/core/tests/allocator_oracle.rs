//! Cross-checks the active-set allocator against two independent reference
//! solvers on seeded random instances: exhaustive bound-pattern enumeration
//! for small problems and a preconditioned projected-gradient method for the
//! full 4×11 allocation problem. Every instance is also certified by its KKT
//! conditions.

mod common;

#[test]
fn small_instances_match_bound_pattern_enumeration() {
    if let Err(msg) = common::run_enumeration_suite(500, 0x5EED_0001) {
        panic!("{msg}");
    }
}

#[test]
fn full_size_instances_match_projected_gradient() {
    if let Err(msg) = common::run_wls_suite(500, 0x5EED_0002) {
        panic!("{msg}");
    }
}
