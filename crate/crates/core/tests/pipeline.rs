//! Cross-module checks from scenario loading through cooling.

use sideband::dynamics::{build_rate_model, evolve, observables, steady_state, PopulationVector, DEFAULT_CHUNK};
use sideband::scenario::{Resolved, Scenario};

fn resolved(overrides: &[&str]) -> Resolved {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Scenario::load(None, &o).unwrap().resolve().unwrap()
}

#[test]
fn uniform_start_reaches_steady_ground_population_in_cooling_time() {
    let r = resolved(&[]);
    let model = build_rate_model(&r.scheme, &r.params).unwrap();
    let p0 = PopulationVector::uniform(&model.space, 3);
    let cooled = observables(&model.space, &evolve(&model, &p0, r.cooling_time(), DEFAULT_CHUNK).unwrap());
    let steady = observables(&model.space, &steady_state(&model).unwrap());
    assert!((cooled.pi0 / steady.pi0 - 1.0).abs() <= 0.05, "{} vs {}", cooled.pi0, steady.pi0);
    assert!((cooled.pi0 - steady.pi0).abs() < 0.02);
}

#[test]
fn detuned_field_cools_less_than_resonant_field() {
    let resonant = resolved(&[]);
    let detuned = resolved(&["cooling.b_z=-60"]);
    let pi0 = |r: &Resolved| {
        let model = build_rate_model(&r.scheme, &r.params).unwrap();
        observables(&model.space, &steady_state(&model).unwrap()).pi0
    };
    let (on, off) = (pi0(&resonant), pi0(&detuned));
    assert!(on > 0.95, "{on}");
    assert!(off < on - 0.1, "{off} vs {on}");
}
