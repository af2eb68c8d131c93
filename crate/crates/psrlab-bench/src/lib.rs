//! Shared fixtures for the criterion benches: deterministic instances large
//! enough to exercise the hot paths without blowing the enumeration budget.

use psrlab_core::env::{make_lock, random_pomdp, Family, GeneratorSpec};
use psrlab_core::lift::lift_weakly_revealing_model;
use psrlab_core::{Pomdp, PsrModel};

/// A 3-state, 3-observation, horizon-4 random instance passing the
/// revealing gate.
pub fn bench_pomdp() -> Pomdp {
    random_pomdp(&GeneratorSpec {
        family: Family::RandomRevealing,
        states: 3,
        obs: 3,
        act: 2,
        horizon: 4,
        m: 1,
        d_trans: None,
        alpha: None,
        sigma_floor: 0.15,
        seed: 99,
    })
    .expect("bench instance generates")
}

/// Its one-step weakly-revealing lift.
pub fn bench_model() -> PsrModel {
    lift_weakly_revealing_model(&bench_pomdp(), 1).expect("bench instance lifts")
}

/// A horizon-5 lock lift, the planner's worst case among the fixtures.
pub fn bench_lock_model() -> PsrModel {
    let lock = make_lock(0.2, 2, 5, 1).expect("lock generates");
    lift_weakly_revealing_model(&lock, 1).expect("lock lifts")
}
