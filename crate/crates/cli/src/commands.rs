use sideband::diagnostics::{
    boltzmann_from_temperature, fit_temperature, ground_state_population, momentum_distribution, population_temperature,
    reference_temperature, sideband_scan, simulate_tof, stern_gerlach_populations, tof_bin_probabilities,
    MomentumDistribution, TemperatureFit, TofSignal,
};
use sideband::dynamics::{
    build_rate_model, evolve, long_time_limit, monte_carlo, observables, sampled_observables, Observables, PopulationVector,
    RateModel, StateSpace, DEFAULT_CHUNK,
};
use sideband::field::{field_map, polarization_components, GridSpec};
use sideband::levels::{ground_state_temperature, level_energies, resonance_field, Axis, LevelModel, LevelScheme};
use sideband::potential::{coupling_matrix_element, diabatic_surfaces, find_wells};
use sideband::scenario::Resolved;
use sideband::Error;

use crate::output::{num, Run};
use crate::svg::{ColorMap, HeatMap, Panel, Rect, Series};
use crate::CliError;

const BLUE: &str = "#1f4e9c";
const RED: &str = "#b2182b";
const GREY: &str = "#666666";
const GREEN: &str = "#1b7837";

fn flag(b: bool) -> String {
    if b { "true" } else { "false" }.into()
}

pub(crate) fn field(run: &mut Run, r: &Resolved) -> Result<(), CliError> {
    let s = &r.scenario;
    let n = s.field_map.points;
    let beams = &r.potential.beams;
    let grid = GridSpec::lattice_cell(beams, n, n);
    let map = field_map(beams, &grid)?;
    let meta = [
        ("epi_ratio", num(s.lattice.epi_ratio)),
        ("phi", num(s.lattice.phi)),
        ("grid", format!("{n} x {n} over the rectangular unit cell, lengths in 1/k")),
        ("field", "single-beam in-plane amplitude 1".into()),
    ];
    let header = [
        "x", "y", "re_sigma_plus", "im_sigma_plus", "re_pi", "im_pi", "re_sigma_minus", "im_sigma_minus", "intensity", "helicity",
    ];
    let rows = map.values.iter().map(|f| {
        let c = polarization_components(f);
        vec![
            num(f.position.x),
            num(f.position.y),
            num(c.sigma_plus.re),
            num(c.sigma_plus.im),
            num(c.pi.re),
            num(c.pi.im),
            num(c.sigma_minus.re),
            num(c.sigma_minus.im),
            num(f.intensity()),
            num(f.helicity()),
        ]
    });
    run.write_csv("field.csv", &meta, &header, rows)?;

    let surfaces = diabatic_surfaces(beams, s.lattice.u1, &s.species, &grid)?;
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend(surfaces.m_values.iter().map(|m| format!("u_m{m:+}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = surfaces.values.iter().enumerate().map(|(i, u)| {
        let x = grid.point(i);
        let mut row = vec![num(x.x), num(x.y)];
        row.extend(u.iter().map(|v| num(*v)));
        row
    });
    let meta = [("u1", num(s.lattice.u1)), ("units", "energies in Er, lengths in 1/k".into())];
    run.write_csv("surfaces.csv", &meta, &header_refs, rows)?;

    let intensity: Vec<f64> = map.values.iter().map(|f| f.intensity()).collect();
    let helicity: Vec<f64> = map.values.iter().map(|f| f.helicity()).collect();
    let i_max = intensity.iter().copied().fold(0.0, f64::max);
    let h_max = helicity.iter().map(|h| h.abs()).fold(0.0, f64::max);
    let pi_max = map.values.iter().map(|f| polarization_components(f).pi.norm()).fold(0.0, f64::max);
    let (arg_hi, arg_lo) = extrema(&helicity);
    let extent = ((grid.x_min, grid.x_max), (grid.y_min, grid.y_max));
    let aspect = (grid.y_max - grid.y_min) / (grid.x_max - grid.x_min);
    let (w, h) = if aspect > 1.0 { (360.0 / aspect, 360.0) } else { (360.0, 360.0 * aspect) };
    let mut fig = run.figure(860.0, h + 100.0, "Lattice intensity and helicity over one unit cell");
    fig.heatmap(&HeatMap {
        frame: Rect { x: 40.0, y: 50.0, w, h },
        title: "intensity |E|^2".into(),
        nx: n,
        ny: n,
        values: &intensity,
        range: (0.0, i_max),
        map: ColorMap::Heat,
        x_extent: extent.0,
        y_extent: extent.1,
    });
    fig.heatmap(&HeatMap {
        frame: Rect { x: 460.0, y: 50.0, w, h },
        title: "helicity i(E* x E).z (blue: sigma+ sites, red: sigma- sites)".into(),
        nx: n,
        ny: n,
        values: &helicity,
        range: (-h_max, h_max),
        map: ColorMap::Diverging,
        x_extent: extent.0,
        y_extent: extent.1,
    });
    run.write_svg("field.svg", fig)?;

    run.record("grid_points", n * n);
    run.record("intensity_max", num(i_max));
    run.record("helicity_max", num(helicity[arg_hi]));
    run.record("helicity_max_at", format!("({}, {})", num(grid.point(arg_hi).x), num(grid.point(arg_hi).y)));
    run.record("helicity_min", num(helicity[arg_lo]));
    run.record("helicity_min_at", format!("({}, {})", num(grid.point(arg_lo).x), num(grid.point(arg_lo).y)));
    run.record("pi_amplitude_max", num(pi_max));
    Ok(())
}

fn extrema(v: &[f64]) -> (usize, usize) {
    let mut hi = 0;
    let mut lo = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[hi] {
            hi = i;
        }
        if *x < v[lo] {
            lo = i;
        }
    }
    (hi, lo)
}

pub(crate) fn wells(run: &mut Run, r: &Resolved) -> Result<(), CliError> {
    let w = &r.well;
    let harmonic = LevelScheme::new(&r.potential, w, 3, LevelModel::Harmonic)?;
    let anharmonic = LevelScheme::new(&r.potential, w, 3, LevelModel::Anharmonic)?;
    let axis = r.scenario.tof.axis.unit();
    let sites = find_wells(&r.potential)?;
    let mut lines: Vec<(String, String)> = vec![
        ("center_x".into(), num(w.center.x)),
        ("center_y".into(), num(w.center.y)),
        ("helicity".into(), w.helicity.sign().to_string()),
        ("stretched_m".into(), w.stretched_m.to_string()),
        ("partner_m".into(), w.partner_m.to_string()),
        ("depth_u0".into(), num(w.depth_u0)),
        ("omega_x".into(), num(w.omega_x)),
        ("omega_y".into(), num(w.omega_y)),
        ("hessian_xy".into(), num(w.hessian_xy)),
        ("eta_x".into(), num(w.eta_x)),
        ("eta_y".into(), num(w.eta_y)),
    ];
    for (name, c) in [
        ("const", w.coupling_const),
        ("x", w.coupling_x),
        ("y", w.coupling_y),
        ("xx", w.coupling_xx),
        ("xy", w.coupling_xy),
        ("yy", w.coupling_yy),
    ] {
        lines.push((format!("coupling_{name}_re"), num(c.re)));
        lines.push((format!("coupling_{name}_im"), num(c.im)));
    }
    lines.push(("raman_10_to_00".into(), num(coupling_matrix_element(w, (1, 0), (0, 0)).norm())));
    lines.push(("raman_01_to_00".into(), num(coupling_matrix_element(w, (0, 1), (0, 0)).norm())));
    for (axis_name, a) in [("x", Axis::X), ("y", Axis::Y)] {
        lines.push((format!("t0_harmonic_{axis_name}_nk"), num(ground_state_temperature(&harmonic, a, &r.units))));
    }
    for (axis_name, a) in [("x", Axis::X), ("y", Axis::Y)] {
        lines.push((format!("t0_anharmonic_{axis_name}_nk"), num(ground_state_temperature(&anharmonic, a, &r.units))));
    }
    lines.push(("t0_measurement_axis_nk".into(), num(reference_temperature(w, axis, &r.units))));
    for (axis_name, a) in [("x", Axis::X), ("y", Axis::Y)] {
        let spacing = anharmonic.axis_spacing(a, 2) - anharmonic.axis_spacing(a, 1);
        lines.push((format!("anharmonic_spacing_21_{axis_name}"), num(spacing)));
    }
    lines.push(("wells_per_cell".into(), sites.len().to_string()));
    for (i, site) in sites.iter().enumerate() {
        lines.push((format!("well_{i}_x"), num(site.center.x)));
        lines.push((format!("well_{i}_y"), num(site.center.y)));
        lines.push((format!("well_{i}_helicity"), site.helicity.sign().to_string()));
    }
    let mut text = String::new();
    for (k, v) in &lines {
        run.record(k, v);
        text.push_str(&format!("{k} = {v}\n"));
    }
    run.write_text("wells.txt", &text)
}

pub(crate) fn levels(run: &mut Run, r: &Resolved) -> Result<(), CliError> {
    let s = &r.scenario;
    let scheme = &r.scheme;
    let meta = [
        ("u1", num(s.lattice.u1)),
        ("epi_ratio", num(s.lattice.epi_ratio)),
        ("b_z_mg", num(r.b_z)),
        ("model", format!("{:?}", scheme.model).to_lowercase()),
        ("n_max", scheme.n_max.to_string()),
        ("energy", "Er, relative to the bottom of each diabatic well plus the Zeeman shift".into()),
    ];
    let mut rows = Vec::new();
    for m in [scheme.stretched.m, scheme.partner.m] {
        for l in level_energies(scheme, m)? {
            rows.push(vec![l.n_x.to_string(), l.n_y.to_string(), l.m.to_string(), num(l.energy)]);
        }
    }
    run.write_csv("levels.csv", &meta, &["n_x", "n_y", "m", "energy"], rows)?;
    run.record("b_z_mg", num(r.b_z));
    run.record("zeeman_per_m", num(scheme.zeeman_per_m));
    for (axis_name, a) in [("x", Axis::X), ("y", Axis::Y)] {
        run.record(&format!("excitation_1_{axis_name}"), num(scheme.axis_spacing(a, 1)));
        run.record(&format!("excitation_2_{axis_name}"), num(scheme.axis_spacing(a, 2)));
    }
    for order in 1..=2 {
        match resonance_field(scheme, order, s.levels.sideband_axis, 1e4, &r.units) {
            Ok(res) => run.record(&format!("resonance_r{order}_mg"), num(res.b_z)),
            Err(e @ Error::NoResonance { .. }) => run.note(&e.to_string()),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

struct Cooled {
    model: RateModel,
    initial: PopulationVector,
    last: PopulationVector,
}

fn cool_populations(r: &Resolved) -> Result<Cooled, CliError> {
    let model = build_rate_model(&r.scheme, &r.params)?;
    let initial = r.scenario.cooling.initial.populations(&model.space, &r.well, &r.units)?;
    let last = evolve(&model, &initial, r.cooling_time(), DEFAULT_CHUNK)?;
    Ok(Cooled { model, initial, last })
}

fn record_observables(run: &mut Run, prefix: &str, o: &Observables, t_nk: f64, t0_nk: f64) {
    run.record(&format!("{prefix}_nbar_x"), num(o.nbar[0]));
    run.record(&format!("{prefix}_nbar_y"), num(o.nbar[1]));
    run.record(&format!("{prefix}_pi0"), num(o.pi0));
    run.record(&format!("{prefix}_q_b_x"), num(o.q_b[0]));
    run.record(&format!("{prefix}_q_b_y"), num(o.q_b[1]));
    for (m, p) in &o.m_populations {
        run.record(&format!("{prefix}_m{m:+}_fraction"), num(*p));
    }
    run.record(&format!("{prefix}_temperature_nk"), num(t_nk));
    if let Ok(q) = boltzmann_from_temperature(t_nk, t0_nk) {
        run.record(&format!("{prefix}_thermometric_q_b"), num(q.q_b));
    }
}

pub(crate) fn cool(run: &mut Run, r: &Resolved) -> Result<(), CliError> {
    let s = &r.scenario;
    let c = cool_populations(r)?;
    let space = &c.model.space;
    let classes = c.model.closed_classes().len();
    if classes != 1 {
        run.note(&format!("no unique steady state: {classes} closed classes, long-time limit taken from the initial populations"));
    }
    let steady = long_time_limit(&c.model, &c.initial)?;
    let mc = if s.cooling.monte_carlo_atoms > 0 {
        let ens = monte_carlo(&c.model, &c.initial, r.cooling_time(), s.cooling.monte_carlo_atoms, s.run.seed, false)?;
        Some((ens.final_populations(space), sampled_observables(space, &ens)))
    } else {
        None
    };

    let meta = [
        ("b_z_mg", num(r.b_z)),
        ("cooling_time_ms", num(s.cooling.time_ms)),
        ("initial", format!("{:?}", s.cooling.initial)),
        ("states", space.len().to_string()),
    ];
    let mut header = vec!["n_x", "n_y", "m", "initial", "final", "long_time"];
    if mc.is_some() {
        header.push("monte_carlo");
    }
    let rows = space.states().iter().enumerate().map(|(i, st)| {
        let mut row = vec![
            st.n_x.to_string(),
            st.n_y.to_string(),
            st.m.to_string(),
            num(c.initial.p[i]),
            num(c.last.p[i]),
            num(steady.p[i]),
        ];
        if let Some((p, _)) = &mc {
            row.push(num(p.p[i]));
        }
        row
    });
    run.write_csv("populations.csv", &meta, &header, rows.collect::<Vec<_>>())?;

    let axis = s.tof.axis.unit();
    let t0 = reference_temperature(&r.well, axis, &r.units);
    let temp = |p: &PopulationVector| population_temperature(space, p, &r.well, axis, &r.units);
    run.record("cooling_time_ms", num(s.cooling.time_ms));
    run.record("reference_t0_nk", num(t0));
    record_observables(run, "initial", &observables(space, &c.initial), temp(&c.initial), t0);
    record_observables(run, "final", &observables(space, &c.last), temp(&c.last), t0);
    record_observables(run, "long_time", &observables(space, &steady), temp(&steady), t0);
    if let Some((p, so)) = &mc {
        record_observables(run, "monte_carlo", &so.value, temp(p), t0);
        run.record("monte_carlo_nbar_x_error", num(so.nbar_error[0]));
        run.record("monte_carlo_nbar_y_error", num(so.nbar_error[1]));
        run.record("monte_carlo_pi0_error", num(so.pi0_error));
    }
    run.write_text("observables.txt", &run.report().to_string())?;

    momentum_outputs(run, r, space, &c)
}

fn momentum_outputs(run: &mut Run, r: &Resolved, space: &StateSpace, c: &Cooled) -> Result<(), CliError> {
    let axis = r.scenario.tof.axis.unit();
    let before = momentum_distribution(space, &c.initial, &r.well, axis)?;
    let after = momentum_distribution(space, &c.last, &r.well, axis)?;
    let ground = MomentumDistribution::ground(&r.well, r.well.stretched_m, axis);
    let p_max = 4.0 * before.variance().max(after.variance()).sqrt();
    let n = 321;
    let grid: Vec<f64> = (0..n).map(|i| -p_max + 2.0 * p_max * i as f64 / (n - 1) as f64).collect();
    let dens = |d: &MomentumDistribution| grid.iter().map(|&p| d.density(p)).collect::<Vec<_>>();
    let (d0, d1, dg) = (dens(&before), dens(&after), dens(&ground));
    let meta = [
        ("axis", format!("{:?}", r.scenario.tof.axis)),
        ("momentum", "hbar k; densities normalized to unit area".into()),
        ("after_temperature_nk", num(after.temperature(&r.units))),
        ("ground_temperature_nk", num(ground.temperature(&r.units))),
    ];
    let rows = (0..n).map(|i| vec![num(grid[i]), num(d0[i]), num(d1[i]), num(dg[i])]);
    run.write_csv("momentum.csv", &meta, &["p", "initial", "cooled", "ground_state"], rows)?;

    let pts = |d: &[f64]| grid.iter().copied().zip(d.iter().copied()).collect::<Vec<_>>();
    let panel = Panel::new(
        Rect { x: 80.0, y: 40.0, w: 560.0, h: 340.0 },
        "Momentum distribution along the measurement axis",
        "p (hbar k)",
        "probability density",
    )
    .with(Series::line("before cooling", pts(&d0), GREY))
    .with(Series::line(format!("after {} ms", num(r.scenario.cooling.time_ms)), pts(&d1), BLUE))
    .with(Series::dashed("ground state", pts(&dg), RED));
    let mut fig = run.figure(680.0, 430.0, "Momentum distribution");
    fig.panel(&panel);
    run.write_svg("momentum.svg", fig)
}

pub(crate) fn scan(run: &mut Run, r: &Resolved) -> Result<(), CliError> {
    let s = &r.scenario;
    let fields = s.scan_fields();
    let axis = s.tof.axis.unit();
    let scan = sideband_scan(&r.scheme, &r.params, &fields, &s.scan_mode(&r.units), &s.scan_thermometry(), axis, &r.units)?;
    let meta = [
        ("t0_nk", num(scan.t0_nk)),
        ("expected_r1_mg", num(scan.expected_centers[0])),
        ("expected_r2_mg", num(scan.expected_centers[1])),
        ("mode", format!("{:?}", s.scan.mode)),
        ("thermometry", format!("{:?}", s.scan.thermometry)),
        ("flagged", "T <= T0 so 1/q_B is raw and excluded from the fit".into()),
    ];
    let rows = scan.points.iter().map(|p| {
        vec![num(p.b_z), num(p.inv_qb), num(p.t_nk), num(p.nbar[0]), num(p.nbar[1]), flag(p.flagged)]
    });
    run.write_csv("scan.csv", &meta, &["b_z_mg", "inv_q_b", "t_nk", "nbar_x", "nbar_y", "flagged"], rows)?;

    run.record("points", scan.points.len());
    run.record("flagged_points", scan.points.iter().filter(|p| p.flagged).count());
    run.record("t0_nk", num(scan.t0_nk));
    run.record("expected_r1_mg", num(scan.expected_centers[0]));
    run.record("expected_r2_mg", num(scan.expected_centers[1]));
    let e = |a| r.scheme.axis_spacing(a, 2) - r.scheme.axis_spacing(a, 1);
    let expected_sep = 0.5 * (e(Axis::X) + e(Axis::Y));
    run.record("expected_separation_er", num(expected_sep));
    if let Some(f) = &scan.fit {
        for (i, p) in f.peaks.iter().enumerate() {
            run.record(&format!("peak{}_center_mg", i + 1), num(p.center));
            run.record(&format!("peak{}_fwhm_mg", i + 1), num(p.fwhm));
            run.record(&format!("peak{}_fwhm_er", i + 1), num(r.units.zeeman_energy(p.fwhm)));
            run.record(&format!("peak{}_amplitude", i + 1), num(p.amplitude));
        }
        let sep = r.units.zeeman_energy(f.separation());
        run.record("offset", num(f.offset));
        run.record("r_squared", num(f.r_squared));
        run.record("separation_mg", num(f.separation()));
        run.record("separation_er", num(sep));
        run.record("separation_consistent", flag((sep / expected_sep - 1.0).abs() <= 0.05));
    }
    if let Some(err) = &scan.fit_error {
        run.note(&format!("fit failed: {err}"));
    }
    run.write_text("fit.txt", &run.report().to_string())?;

    let points = |flagged: bool| {
        scan.points.iter().filter(|p| p.flagged == flagged).map(|p| (p.b_z, p.inv_qb)).collect::<Vec<_>>()
    };
    let (lo, hi) = (s.scan.b_min, s.scan.b_max);
    let mut main = Panel::new(Rect { x: 90.0, y: 40.0, w: 580.0, h: 330.0 }, "Sideband scan", "B_z (mG)", "1/q_B")
        .with(Series::markers("computed", points(false), BLUE, false));
    main.x_range = Some((lo, hi));
    main.log_y = true;
    let flagged = points(true);
    if !flagged.is_empty() {
        main = main.with(Series::markers("flagged (T <= T0)", flagged, GREY, true));
    }
    if let Some(f) = &scan.fit {
        let curve = (0..=600).map(|i| lo + (hi - lo) * i as f64 / 600.0).map(|b| (b, f.eval(b))).collect();
        main = main.with(Series::line("double Lorentzian fit", curve, RED));
        let ys: Vec<f64> = scan.points.iter().map(|p| p.inv_qb).filter(|v| v.is_finite() && *v > 0.0).collect();
        let top = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bottom = ys.iter().copied().fold(f64::INFINITY, f64::min);
        for (k, c) in scan.expected_centers.iter().enumerate() {
            let label = if k == 0 { "resonance condition" } else { "" };
            main = main.with(Series::dashed(label, vec![(*c, bottom), (*c, top)], GREEN));
        }
    }
    let temps: Vec<(f64, f64)> = scan.points.iter().map(|p| (p.b_z, p.t_nk)).collect();
    let mut inset = Panel::new(Rect { x: 90.0, y: 440.0, w: 580.0, h: 170.0 }, "Kinetic temperature", "B_z (mG)", "T (nK)")
        .with(Series::markers("", temps.clone(), BLUE, false))
        .with(Series::dashed("ground-state T0", vec![(lo, scan.t0_nk), (hi, scan.t0_nk)], RED));
    inset.x_range = Some((lo, hi));
    let t_max = temps.iter().map(|t| t.1).fold(scan.t0_nk, f64::max);
    let t_min = temps.iter().map(|t| t.1).fold(scan.t0_nk, f64::min);
    let pad = 0.08 * (t_max - t_min).max(1.0);
    inset.y_range = Some((t_min - pad, t_max + pad));
    let mut fig = run.figure(720.0, 660.0, "Inverse Boltzmann factor and temperature versus field");
    fig.panel(&main);
    fig.panel(&inset);
    run.write_svg("scan.svg", fig)?;

    match scan.fit_error {
        None => Ok(()),
        Some(e) => Err(CliError::Fit(e)),
    }
}

fn tof_rows(signal: &TofSignal, models: &[Vec<f64>]) -> Vec<Vec<String>> {
    (0..signal.t_ms.len())
        .map(|i| {
            let mut row = vec![num(signal.t_ms[i]), num(signal.counts[i])];
            row.extend(models.iter().map(|m| num(m[i])));
            row
        })
        .collect()
}

fn tof_panel(signal: &TofSignal, models: &[(String, Vec<f64>, &'static str)], title: &str, frame: Rect) -> Panel {
    // show the populated part of the record
    let first = signal.counts.iter().position(|c| *c > 0.0).unwrap_or(0);
    let last = signal.counts.iter().rposition(|c| *c > 0.0).unwrap_or(signal.counts.len().saturating_sub(1));
    let window = first..=last;
    let pts = |v: &[f64]| window.clone().map(|i| (signal.t_ms[i], v[i])).collect::<Vec<_>>();
    let mut p = Panel::new(frame, title, "arrival time (ms)", "atoms per bin").with(Series::steps("simulated counts", pts(&signal.counts), GREY));
    for (label, m, color) in models {
        p = p.with(Series::line(label.clone(), pts(m), color));
    }
    p
}

pub(crate) fn tof(run: &mut Run, r: &Resolved) -> Result<(), CliError> {
    let s = &r.scenario;
    let c = cool_populations(r)?;
    let space = &c.model.space;
    let axis = s.tof.axis.unit();
    let dist = momentum_distribution(space, &c.last, &r.well, axis)?;
    let samples = dist.sample(s.tof.atoms, s.run.seed);
    let geo = s.tof.geometry();
    let signal = simulate_tof(&samples, &geo, 0.0, s.run.seed, &r.units)?;
    let fit = fit_temperature(&signal, &r.units);
    let t0 = reference_temperature(&r.well, axis, &r.units);
    let t_obs = dist.temperature(&r.units);

    let meta = [
        ("atoms", s.tof.atoms.to_string()),
        ("escaped", signal.escaped.to_string()),
        ("drop_height_cm", num(geo.drop_height_cm)),
        ("probe_thickness_um", num(geo.probe_thickness_um)),
        ("cloud_diameter_um", num(geo.cloud_diameter_um)),
        ("bin_width_ms", num(geo.bin_width_ms)),
        ("axis", format!("{:?}", s.tof.axis)),
    ];
    let model = |t_nk: f64| -> Vec<f64> {
        tof_bin_probabilities(&signal, t_nk, r.well.stretched_m, &r.units).into_iter().map(|p| p * signal.n_atoms as f64).collect()
    };
    let fitted: Option<TemperatureFit> = fit.as_ref().ok().cloned();
    let models: Vec<Vec<f64>> = fitted.iter().map(|f| model(f.t_nk)).collect();
    let mut header = vec!["t_ms", "counts"];
    if fitted.is_some() {
        header.push("fit");
    }
    run.write_csv("tof.csv", &meta, &header, tof_rows(&signal, &models))?;

    run.record("atoms", s.tof.atoms);
    run.record("arrived", num(signal.arrived()));
    run.record("escaped", signal.escaped);
    run.record("free_fall_time_ms", num(geo.free_fall_time_ms()));
    run.record("observables_temperature_nk", num(t_obs));
    run.record("reference_t0_nk", num(t0));

    let mut labelled = Vec::new();
    if let Some(f) = &fitted {
        run.record("fit_temperature_nk", num(f.t_nk));
        run.record("fit_std_error_nk", num(f.std_error));
        run.record("fit_reduced_chi2", num(f.reduced_chi2));
        run.record("moment_temperature_nk", num(f.moment_t_nk));
        run.record("cloud_limited", flag(f.cloud_limited));
        let z = (f.t_nk - t_obs).abs() / f.std_error;
        run.record("deviation_from_observables_sigma", num(z));
        let q = boltzmann_from_temperature(f.t_nk, t0)?;
        run.record("q_b", num(q.q_b));
        match ground_state_population(q.q_b) {
            Ok(pi0) => run.record("pi0", num(pi0)),
            Err(_) => run.note("fitted temperature at or below T0: q_B unphysical, pi0 not defined"),
        }
        labelled.push((format!("fit T = {:.1} nK", f.t_nk), models[0].clone(), RED));
    }
    let mut fig = run.figure(680.0, 430.0, "Time-of-flight arrival histogram");
    fig.panel(&tof_panel(&signal, &labelled, "Time of flight", Rect { x: 90.0, y: 40.0, w: 550.0, h: 330.0 }));
    run.write_svg("tof.svg", fig)?;

    let mut failure = fit.err().map(CliError::from);
    if s.tof.gradient != 0.0 {
        let sg = simulate_tof(&samples, &geo, s.tof.gradient, s.run.seed, &r.units)?;
        let m_values = [r.well.partner_m, r.well.stretched_m];
        let fractions = stern_gerlach_populations(&sg, &m_values, &r.units);
        run.record("gradient_g_per_cm", num(s.tof.gradient));
        let mut models = Vec::new();
        match &fractions {
            Ok(fr) => {
                let t = fitted.as_ref().map_or(t_obs, |f| f.t_nk);
                for &(m, f) in fr {
                    run.record(&format!("stern_gerlach_m{m:+}_fraction"), num(f));
                    let counts: Vec<f64> =
                        tof_bin_probabilities(&sg, t, m, &r.units).into_iter().map(|p| p * f * sg.n_atoms as f64).collect();
                    models.push((format!("m = {m:+}"), counts, if m == r.well.stretched_m { BLUE } else { GREEN }));
                }
            }
            Err(e) => run.note(&format!("Stern-Gerlach decomposition failed: {e}")),
        }
        let meta = [
            ("gradient_g_per_cm", num(s.tof.gradient)),
            ("atoms", s.tof.atoms.to_string()),
            ("escaped", sg.escaped.to_string()),
            ("model_temperature", "fitted free-fall temperature".into()),
        ];
        let mut header = vec!["t_ms".to_string(), "counts".to_string()];
        if let Ok(fr) = &fractions {
            header.extend(fr.iter().map(|(m, _)| format!("model_m{m:+}")));
        }
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let columns: Vec<Vec<f64>> = models.iter().map(|m| m.1.clone()).collect();
        run.write_csv("stern_gerlach.csv", &meta, &header_refs, tof_rows(&sg, &columns))?;
        let mut fig = run.figure(680.0, 430.0, "Stern-Gerlach time of flight");
        let title = format!("Stern-Gerlach separation at {} G/cm", num(s.tof.gradient));
        let mut panel = tof_panel(&sg, &models, &title, Rect { x: 90.0, y: 40.0, w: 550.0, h: 330.0 });
        panel.log_y = true;
        let peak = sg.counts.iter().copied().fold(1.0, f64::max);
        panel.y_range = Some((0.5, 2.0 * peak));
        fig.panel(&panel);
        run.write_svg("stern_gerlach.svg", fig)?;
        if let Err(e) = fractions {
            failure = failure.or(Some(e.into()));
        }
    }
    run.write_text("tof.txt", &run.report().to_string())?;
    match failure {
        None => Ok(()),
        Some(e) => Err(e),
    }
}
