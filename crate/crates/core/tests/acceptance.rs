//! End-to-end acceptance checks. Each test prints one PASS/FAIL line; run with
//! `cargo test --test acceptance -- --nocapture --test-threads=1` to see them.

use std::time::{Duration, Instant};

use sideband::diagnostics::{
    boltzmann_from_temperature, fit_temperature, gaussian_momenta, ground_state_population, momentum_distribution,
    sideband_scan, simulate_tof, stern_gerlach_populations, ScanMode, ScanThermometry,
};
use sideband::dynamics::{
    build_rate_model, evolve, monte_carlo, observables, sampled_observables, steady_state, Channel, CoolingParameters,
    RecoilModel, StateIndex, DEFAULT_CHUNK,
};
use sideband::field::{field_at, standard_beam_set, PhaseChoice};
use sideband::levels::{ground_state_temperature, spacing_temperature, Axis, LevelModel, LevelScheme};
use sideband::potential::{coupling_matrix_element, principal_well, LatticePotential, LambDickeOrder, WellSite};
use sideband::scenario::{Resolved, Scenario};
use sideband::units::AtomSpecies;
use sideband::Vec2;

fn report(id: u32, name: &str, checks: &[(bool, String)], elapsed: Duration, budget: Duration) {
    let in_time = elapsed <= budget;
    let ok = checks.iter().all(|c| c.0) && in_time;
    let detail: Vec<&str> = checks.iter().map(|c| c.1.as_str()).collect();
    println!(
        "[{id:2}] {} {name}: {}; {:.2} s (budget {} s)",
        if ok { "PASS" } else { "FAIL" },
        detail.join("; "),
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    for (good, what) in checks {
        assert!(*good, "{name}: {what}");
    }
    assert!(in_time, "{name}: took {elapsed:?}, budget {budget:?}");
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value / target - 1.0).abs() <= rel
}

fn resolved(overrides: &[&str]) -> Resolved {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Scenario::load(None, &o).unwrap().resolve().unwrap()
}

fn operating_potential(epi: f64) -> LatticePotential {
    let cs = AtomSpecies::cesium();
    let beams = standard_beam_set(1.0, epi, std::f64::consts::FRAC_PI_2, PhaseChoice::SigmaPlusAtOrigin).unwrap();
    LatticePotential::new(beams, 54.0, &cs).unwrap()
}

#[test]
fn potential_scale() {
    let start = Instant::now();
    let w = principal_well(&operating_potential(0.0)).unwrap();
    let elapsed = start.elapsed();
    let op = principal_well(&operating_potential(0.3)).unwrap();
    report(
        1,
        "potential scale",
        &[
            ((w.depth_u0 / 54.0 - 4.5).abs() < 1e-6, format!("U0 = {:.6} Er, U0/U1 = {:.8}", w.depth_u0, w.depth_u0 / 54.0)),
            (within(w.depth_u0, 243.0, 1e-6), "U0 = 243 Er without pi admixture".into()),
            (op.depth_u0 > w.depth_u0, format!("operating point U0 = {:.2} Er", op.depth_u0)),
        ],
        elapsed,
        Duration::from_secs(1),
    );
}

#[test]
fn vibrational_scale() {
    let start = Instant::now();
    let w = principal_well(&operating_potential(0.3)).unwrap();
    let elapsed = start.elapsed();
    // η = √(Eᵣ/ħω); the quoted ħω ≈ 20 Er fixes η ≈ 0.224
    let eta_quoted_omega = (1.0f64 / 20.0).sqrt();
    report(
        2,
        "vibrational scale",
        &[
            (within(w.omega_x, 20.0, 0.1) && within(w.omega_y, 20.0, 0.1), format!("hbar omega = {:.4}, {:.4} Er", w.omega_x, w.omega_y)),
            (
                within(w.eta_x, eta_quoted_omega, 0.1) && within(w.eta_y, eta_quoted_omega, 0.1),
                format!(
                    "eta = {:.4} ({:+.1}% from 0.2, {:+.1}% from sqrt(1/20))",
                    w.eta_x,
                    100.0 * (w.eta_x / 0.2 - 1.0),
                    100.0 * (w.eta_x / eta_quoted_omega - 1.0)
                ),
            ),
            (((w.eta_x * w.eta_x * w.omega_x) - 1.0).abs() < 1e-12, "eta^2 hbar omega = Er".into()),
        ],
        elapsed,
        Duration::from_secs(1),
    );
}

#[test]
fn coupling_matrix_elements() {
    let start = Instant::now();
    let w = principal_well(&operating_potential(0.3)).unwrap();
    let mx = coupling_matrix_element(&w, (1, 0), (0, 0)).norm();
    let my = coupling_matrix_element(&w, (0, 1), (0, 0)).norm();
    let ratio = w.coupling_y.norm() / w.coupling_x.norm();
    let elapsed = start.elapsed();
    report(
        3,
        "coupling matrix elements",
        &[
            (within(mx, 0.7, 0.2), format!("|M(1,0 -> 0,0)| = {mx:.4} Er")),
            (within(my, 2.0, 0.2), format!("|M(0,1 -> 0,0)| = {my:.4} Er")),
            (within(ratio, 3.0, 0.05), format!("y:x coefficient ratio = {ratio:.5}")),
        ],
        elapsed,
        Duration::from_secs(1),
    );
}

#[test]
fn ground_state_thermometry() {
    let start = Instant::now();
    let cs = AtomSpecies::cesium();
    let units = sideband::units::UnitSystem::new(&cs);
    let p = operating_potential(0.3);
    let w = principal_well(&p).unwrap();
    let harmonic = LevelScheme::new(&p, &w, 3, LevelModel::Harmonic).unwrap();
    let anharmonic = LevelScheme::new(&p, &w, 3, LevelModel::Anharmonic).unwrap();
    let t_h = ground_state_temperature(&harmonic, Axis::X, &units);
    let t_a = ground_state_temperature(&anharmonic, Axis::X, &units);
    let t_ay = ground_state_temperature(&anharmonic, Axis::Y, &units);
    // spacing E(2) − E(1) of the stretched ladder, inverted back to a depth
    let spacing = anharmonic.axis_spacing(Axis::X, 2) - anharmonic.axis_spacing(Axis::X, 1);
    let site = WellSite { center: w.center, helicity: w.helicity };
    let t_s = spacing_temperature(&p, &site, spacing, Axis::X, LevelModel::Harmonic, &units).unwrap();
    let t_sa = spacing_temperature(&p, &site, spacing, Axis::X, LevelModel::Anharmonic, &units).unwrap();
    let elapsed = start.elapsed();
    let t_ideal = units.energy_to_nk(10.0);
    report(
        4,
        "ground-state thermometry",
        &[
            (within(t_h, t_ideal, 0.02), format!("harmonic T0 = {t_h:.1} nK ({t_ideal:.1} nK at 20 Er)")),
            ((921.0..=981.0).contains(&t_a) && (921.0..=981.0).contains(&t_ay), format!("anharmonic T0 = {t_a:.1}, {t_ay:.1} nK")),
            (
                (947.0..=1047.0).contains(&t_sa),
                format!("spacing {spacing:.3} Er -> depth -> T0 = {t_sa:.1} nK (naive spacing/2 reading {t_s:.1} nK)"),
            ),
        ],
        elapsed,
        Duration::from_secs(10),
    );
}

#[test]
fn cooling_endpoint() {
    let start = Instant::now();
    let r = resolved(&[]);
    let model = build_rate_model(&r.scheme, &r.params).unwrap();
    let o = observables(&model.space, &steady_state(&model).unwrap());
    let elapsed = start.elapsed();
    let band = 0.005..=0.02;
    report(
        5,
        "cooling endpoint",
        &[
            (band.contains(&o.nbar[0]) && band.contains(&o.nbar[1]), format!("nbar = {:.4}, {:.4}", o.nbar[0], o.nbar[1])),
            (o.pi0 >= 0.97, format!("pi0 = {:.4}", o.pi0)),
        ],
        elapsed,
        Duration::from_secs(30),
    );
}

#[test]
fn detailed_balance() {
    let start = Instant::now();
    let r = resolved(&[]);
    let params = CoolingParameters {
        n_max: 1,
        axes: [true, false],
        lamb_dicke_order: LambDickeOrder::First,
        recoil: RecoilModel::LambDicke,
        ..r.params.clone()
    };
    let model = build_rate_model(&r.scheme, &params).unwrap();
    let sp = &model.space;
    let idx = |n, m| sp.index(&StateIndex::new(n, 0, m)).unwrap();
    let (g4, e4, g3, e3) = (idx(0, 4), idx(1, 4), idx(0, 3), idx(1, 3));
    let p = steady_state(&model).unwrap();
    let ratio = p.p[g4] / p.p[e4];
    // cooling: Raman from |1,4⟩ to |0,3⟩, then the fraction of departures from
    // |0,3⟩ that land in |0,4⟩
    let raman = model.rate_between(e4, g3, Some(Channel::RedSideband));
    let out = model.exit_rates()[g3];
    let gamma_cool = raman * model.rate_between(g3, g4, Some(Channel::Pump)) / out;
    let gamma_heat = model.rate_between(g4, e4, None);
    let predicted = gamma_cool / gamma_heat;
    let elapsed = start.elapsed();
    report(
        6,
        "detailed balance",
        &[
            (sp.len() == 4 && e3 < sp.len(), format!("{} states", sp.len())),
            (
                within(ratio, predicted, 0.01),
                format!("pi0/pi1 = {ratio:.3}, Gcool/Gheat = {predicted:.3} ({:+.3}%)", 100.0 * (ratio / predicted - 1.0)),
            ),
        ],
        elapsed,
        Duration::from_secs(1),
    );
}

#[test]
fn sideband_spectrum() {
    let start = Instant::now();
    let r = resolved(&["scan.points=40"]);
    let s = &r.scenario;
    let base = LevelScheme::new(&r.potential, &r.well, s.cooling.n_max as usize, s.levels.model).unwrap();
    let scan = sideband_scan(
        &base,
        &r.params,
        &s.scan_fields(),
        &ScanMode::SteadyState,
        &ScanThermometry::Observables,
        s.tof.axis.unit(),
        &r.units,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let expected_mean = {
        let e = |a| base.axis_spacing(a, 2) - base.axis_spacing(a, 1);
        0.5 * (e(Axis::X) + e(Axis::Y))
    };
    let (sep, fwhm, r2, peaks) = match &scan.fit {
        Some(f) => (
            r.units.zeeman_energy(f.separation()),
            r.units.zeeman_energy(f.peaks[0].fwhm),
            f.r_squared,
            format!("peaks at {:.2}, {:.2} mG", f.peaks[0].center, f.peaks[1].center),
        ),
        None => (f64::NAN, f64::NAN, f64::NAN, scan.fit_error.clone().unwrap_or_default()),
    };
    let maxima = scan.fit.as_ref().is_some_and(|f| f.peaks.iter().all(|p| p.amplitude > 0.0));
    report(
        7,
        "sideband spectrum",
        &[
            (scan.points.len() == 40 && maxima, format!("40 points, two maxima, {peaks}, R^2 = {r2:.4}")),
            (within(sep, expected_mean, 0.05), format!("separation {sep:.3} Er vs E(2)-E(1) = {expected_mean:.3} Er")),
            (within(fwhm, 3.0, 0.4), format!("first-sideband FWHM = {fwhm:.3} Er")),
        ],
        elapsed,
        Duration::from_secs(300),
    );
}

#[test]
fn tof_closed_loop() {
    let start = Instant::now();
    let r = resolved(&[]);
    let geo = r.scenario.tof.geometry();
    let mut checks = Vec::new();
    for (i, t) in [500.0, 1000.0, 2000.0, 5000.0].into_iter().enumerate() {
        let samples = gaussian_momenta(t, &[(4, 1.0)], 100_000, 40 + i as u64, &r.units);
        let sig = simulate_tof(&samples, &geo, 0.0, 40 + i as u64, &r.units).unwrap();
        let fit = fit_temperature(&sig, &r.units).unwrap();
        checks.push((within(fit.t_nk, t, 0.02), format!("{t:.0} nK -> {:.1} nK", fit.t_nk)));
    }
    let q = boltzmann_from_temperature(966.0, 951.0).unwrap().q_b;
    checks.push((
        (q - 15.0 / 1917.0).abs() < 1e-15 && (q - 0.008).abs() < 5e-4,
        format!("q_B(966, 951) = {q:.5}, pi0 = {:.4}", ground_state_population(q).unwrap()),
    ));
    // cooled populations, sublevel readout with a gradient
    let model = build_rate_model(&r.scheme, &r.params).unwrap();
    let p0 = r.scenario.cooling.initial.populations(&model.space, &r.well, &r.units).unwrap();
    let p = evolve(&model, &p0, r.cooling_time(), DEFAULT_CHUNK).unwrap();
    let dist = momentum_distribution(&model.space, &p, &r.well, r.scenario.tof.axis.unit()).unwrap();
    let samples = dist.sample(100_000, 7);
    let sig = simulate_tof(&samples, &geo, 10.0, 7, &r.units).unwrap();
    let fractions = stern_gerlach_populations(&sig, &[3, 4], &r.units).unwrap();
    let f4 = fractions.iter().find(|f| f.0 == 4).unwrap().1;
    checks.push((f4 >= 0.9, format!("Stern-Gerlach m=4 fraction = {f4:.4}")));
    report(8, "time-of-flight closed loop", &checks, start.elapsed(), Duration::from_secs(120));
}

#[test]
fn stochastic_equivalence() {
    let start = Instant::now();
    let base = resolved(&[]);
    let scenarios = [
        ("on resonance", base.clone()),
        ("off resonance", resolved(&["cooling.b_z=-60"])),
        ("no heating", resolved(&["cooling.heat_rate=0"])),
    ];
    let mut checks = Vec::new();
    for (k, (name, r)) in scenarios.iter().enumerate() {
        let model = build_rate_model(&r.scheme, &r.params).unwrap();
        let p0 = r.scenario.cooling.initial.populations(&model.space, &r.well, &r.units).unwrap();
        let t = r.cooling_time();
        let p = evolve(&model, &p0, t, DEFAULT_CHUNK).unwrap();
        let exact = observables(&model.space, &p);
        let n = 20_000;
        let ens = monte_carlo(&model, &p0, t, n, 100 + k as u64, false).unwrap();
        let mc = sampled_observables(&model.space, &ens);
        // sampling errors implied by the master-equation distribution
        let n = n as f64;
        let nbar_sigma = |a: usize| {
            let second: f64 = model.space.states().iter().zip(&p.p).map(|(s, x)| (s.n(a) as f64).powi(2) * x).sum();
            ((second - exact.nbar[a].powi(2)) / n).sqrt()
        };
        let stretched = exact.m_populations[0].1;
        let z = |a: f64, b: f64, s: f64| if s > 0.0 { (a - b).abs() / s } else if a == b { 0.0 } else { f64::INFINITY };
        let zs = [
            z(mc.value.nbar[0], exact.nbar[0], nbar_sigma(0)),
            z(mc.value.nbar[1], exact.nbar[1], nbar_sigma(1)),
            z(mc.value.pi0, exact.pi0, (exact.pi0 * (1.0 - exact.pi0) / (n * stretched)).sqrt()),
            z(stretched, mc.value.m_populations[0].1, (stretched * (1.0 - stretched) / n).sqrt()),
        ];
        let worst = zs.iter().copied().fold(0.0, f64::max);
        checks.push((worst < 4.0, format!("{name}: worst deviation {worst:.2} sigma")));
    }
    report(9, "stochastic/deterministic equivalence", &checks, start.elapsed(), Duration::from_secs(120));
}

#[test]
fn property_suite() {
    let start = Instant::now();
    let r = resolved(&[]);
    let mut checks = Vec::new();

    let mut herm = 0.0f64;
    let mut periodic = 0.0f64;
    let [a1, a2] = r.potential.beams.lattice_vectors();
    for i in 0..20 {
        let x = Vec2::new(0.37 * i as f64 - 3.0, 0.61 * i as f64 - 5.0);
        herm = herm.max(r.potential.operator(x).hermiticity_defect());
        let f0 = field_at(&r.potential.beams, x);
        for shift in [a1, a2, a1 - a2 * 2.0] {
            let f1 = field_at(&r.potential.beams, x + shift);
            periodic = periodic.max((f1.eps - f0.eps).norm());
        }
    }
    checks.push((herm < 1e-12, format!("hermiticity defect {herm:.1e}")));
    checks.push((periodic < 1e-10, format!("field periodicity {periodic:.1e}")));

    let model = build_rate_model(&r.scheme, &r.params).unwrap();
    let g = model.generator();
    let col = (0..g.ncols()).map(|j| g.column(j).sum().abs()).fold(0.0, f64::max);
    let p0 = r.scenario.cooling.initial.populations(&model.space, &r.well, &r.units).unwrap();
    let p = evolve(&model, &p0, r.cooling_time(), DEFAULT_CHUNK).unwrap();
    checks.push((col < 1e-12 && (p.total() - 1.0).abs() < 1e-9, format!("generator column sums {col:.1e}, total {:.12}", p.total())));

    let dark = resolved(&["cooling.heat_rate=0"]);
    let m = build_rate_model(&dark.scheme, &dark.params).unwrap();
    let o = observables(&m.space, &steady_state(&m).unwrap());
    checks.push(((o.pi0 - 1.0).abs() < 1e-6, format!("dark state pi0 = {:.9}", o.pi0)));

    let o10 = observables(&model.space, &steady_state(&model).unwrap());
    let r14 = resolved(&["cooling.n_max=14"]);
    let m14 = build_rate_model(&r14.scheme, &r14.params).unwrap();
    let o14 = observables(&m14.space, &steady_state(&m14).unwrap());
    let d = [
        o10.nbar[0] - o14.nbar[0],
        o10.nbar[1] - o14.nbar[1],
        o10.pi0 - o14.pi0,
        o10.q_b[0] - o14.q_b[0],
        o10.q_b[1] - o14.q_b[1],
        o10.m_populations[0].1 - o14.m_populations[0].1,
    ]
    .iter()
    .map(|v| v.abs())
    .fold(0.0, f64::max);
    checks.push((d < 1e-4, format!("n_max 10 vs 14 largest change {d:.1e}")));

    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let ens = monte_carlo(&model, &p0, 20.0, 2000, 5, true).unwrap();
            let dist = momentum_distribution(&model.space, &p, &r.well, Vec2::y()).unwrap();
            let samples = dist.sample(20_000, 3);
            let sig = simulate_tof(&samples, &r.scenario.tof.geometry(), 10.0, 3, &r.units).unwrap();
            (ens.trajectories, sig.counts)
        })
    };
    let one = run(1);
    let many = run(4);
    checks.push((one == many, "Monte Carlo and time of flight identical on 1 and 4 threads".into()));
    report(10, "property suite", &checks, start.elapsed(), Duration::from_secs(120));
}
