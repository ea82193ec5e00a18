//! Rate-equation model of the cooling cycle over product states
//! |n_x, n_y⟩ ⊗ |m⟩ with m the stretched sublevel or its Raman partner.
//!
//! Channels:
//! * stimulated Raman transfer between the two sublevels, Lorentzian in the
//!   Zeeman-shifted detuning and broadened by optical pumping,
//! * optical pumping from the partner back to the stretched sublevel with
//!   photon recoil,
//! * heating of every vibrational degree of freedom at a constant rate.
//!
//! Rates are in Eᵣ/ħ. Steady states use the Grassmann–Taksar–Heyman
//! elimination on the unique closed communicating class; time evolution uses
//! uniformization.

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::levels::LevelScheme;
use crate::potential::{coupling_element, LambDickeOrder};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateIndex {
    pub n_x: u32,
    pub n_y: u32,
    pub m: i32,
}

impl StateIndex {
    pub fn new(n_x: u32, n_y: u32, m: i32) -> Self {
        Self { n_x, n_y, m }
    }

    pub fn n(&self, axis: usize) -> u32 {
        [self.n_x, self.n_y][axis]
    }

    pub fn quanta(&self) -> u32 {
        self.n_x + self.n_y
    }
}

impl std::fmt::Display for StateIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "|{},{};{}>", self.n_x, self.n_y, self.m)
    }
}

/// Truncated basis n_x + n_y ≤ n_max, optionally frozen along y.
/// States are ordered stretched sublevel first, then by total quanta, then n_y.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub n_max: u32,
    pub axes: [bool; 2],
    pub stretched_m: i32,
    pub partner_m: i32,
    states: Vec<StateIndex>,
    lookup: HashMap<StateIndex, usize>,
}

impl StateSpace {
    pub fn new(n_max: u32, axes: [bool; 2], stretched_m: i32, partner_m: i32) -> Result<Self> {
        if !axes[0] && !axes[1] {
            return Err(Error::invalid("axes", "at least one vibrational axis must be active"));
        }
        let mut states = Vec::new();
        for m in [stretched_m, partner_m] {
            for total in 0..=n_max {
                for n_y in 0..=total {
                    let n_x = total - n_y;
                    if (!axes[0] && n_x > 0) || (!axes[1] && n_y > 0) {
                        continue;
                    }
                    states.push(StateIndex::new(n_x, n_y, m));
                }
            }
        }
        let lookup = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Ok(Self {
            n_max,
            axes,
            stretched_m,
            partner_m,
            states,
            lookup,
        })
    }

    pub fn planar(n_max: u32) -> Result<Self> {
        Self::new(n_max, [true, true], 4, 3)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[StateIndex] {
        &self.states
    }

    pub fn state(&self, i: usize) -> StateIndex {
        self.states[i]
    }

    pub fn index(&self, s: &StateIndex) -> Option<usize> {
        self.lookup.get(s).copied()
    }

    pub fn ground(&self) -> usize {
        self.index(&StateIndex::new(0, 0, self.stretched_m)).expect("ground state is always present")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationVector {
    pub p: Vec<f64>,
}

impl PopulationVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("populations", "entries must be finite and non-negative"));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("populations", "must sum to one"));
        }
        Ok(Self { p })
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn delta(space: &StateSpace, index: usize) -> Self {
        let mut p = vec![0.0; space.len()];
        p[index] = 1.0;
        Self { p }
    }

    /// Uniform over all states with at most `n` total quanta, both sublevels.
    pub fn uniform(space: &StateSpace, n: u32) -> Self {
        let w: Vec<f64> = space.states().iter().map(|s| if s.quanta() <= n { 1.0 } else { 0.0 }).collect();
        let total: f64 = w.iter().sum();
        Self {
            p: w.into_iter().map(|x| x / total).collect(),
        }
    }

    /// Geometric distribution with ratio `q[a]` per axis in the stretched sublevel.
    pub fn thermal(space: &StateSpace, q: [f64; 2]) -> Self {
        let w: Vec<f64> = space
            .states()
            .iter()
            .map(|s| {
                if s.m == space.stretched_m {
                    q[0].powi(s.n_x as i32) * q[1].powi(s.n_y as i32)
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        Self {
            p: w.into_iter().map(|x| x / total).collect(),
        }
    }
}

/// Stimulated Raman rate |c|² γ / (δ² + γ²/4) with ħ = 1.
pub fn raman_rate(coupling: f64, detuning: f64, gamma_p: f64) -> f64 {
    coupling * coupling * gamma_p / (detuning * detuning + 0.25 * gamma_p * gamma_p)
}

/// Recoil weight bound beyond which first-order Lamb-Dicke pumping weights
/// turn negative.
pub const LAMB_DICKE_BOUND: f64 = 0.5;

/// Pumping rates out of a partner-sublevel state from the first-order
/// Lamb-Dicke recoil weights, restricted to single-axis Δn = 0, ±1.
pub fn pump_transition_rates(
    from: StateIndex,
    stretched_m: i32,
    eta: [f64; 2],
    gamma_p: f64,
    photons_per_cycle: u32,
) -> Result<Vec<(StateIndex, f64)>> {
    let photons = photons_per_cycle as f64;
    let mut stay = 1.0;
    let mut out = Vec::new();
    for a in 0..2 {
        let n = from.n(a) as f64;
        let e2 = eta[a] * eta[a];
        let value = e2 * (2.0 * n + 1.0);
        if value > LAMB_DICKE_BOUND {
            return Err(Error::LambDickeViolation {
                n: from.n(a),
                value,
                bound: LAMB_DICKE_BOUND,
            });
        }
        stay -= photons * value;
        let mut up = from;
        let mut down = from;
        up.m = stretched_m;
        down.m = stretched_m;
        if a == 0 {
            up.n_x += 1;
        } else {
            up.n_y += 1;
        }
        out.push((up, photons * e2 * (n + 1.0)));
        if from.n(a) > 0 {
            if a == 0 {
                down.n_x -= 1;
            } else {
                down.n_y -= 1;
            }
            out.push((down, photons * e2 * n));
        }
    }
    if stay < 0.0 {
        return Err(Error::LambDickeViolation {
            n: from.quanta(),
            value: 1.0 - stay,
            bound: 1.0,
        });
    }
    out.insert(0, (StateIndex::new(from.n_x, from.n_y, stretched_m), stay));
    out.retain(|(_, w)| *w > 0.0);
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    Ok(out.into_iter().map(|(s, w)| (s, gamma_p * w / total)).collect())
}

/// |⟨n′| exp(iη(a + a†)) |n⟩|² for n, n′ ≤ `dim` − 1.
pub fn recoil_kernel(eta: f64, dim: usize) -> DMatrix<f64> {
    let x = eta * eta;
    DMatrix::from_fn(dim, dim, |to, from| {
        if x == 0.0 {
            return if to == from { 1.0 } else { 0.0 };
        }
        let (lo, hi) = (to.min(from), to.max(from));
        let d = (hi - lo) as f64;
        // generalized Laguerre L_lo^(d)(x)
        let (mut l0, mut l1) = (1.0, 1.0 + d - x);
        let lag = if lo == 0 {
            1.0
        } else {
            for k in 1..lo {
                let kf = k as f64;
                let l2 = ((2.0 * kf + 1.0 + d - x) * l1 - (kf + d) * l0) / (kf + 1.0);
                l0 = l1;
                l1 = l2;
            }
            l1
        };
        let log_ratio: f64 = (lo + 1..=hi).map(|k| -(k as f64).ln()).sum();
        let log_pre = -x + d * x.ln() + log_ratio;
        log_pre.exp() * lag * lag
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoilModel {
    /// Photon kicks with the full displacement-operator kernel.
    Exact,
    /// First-order Lamb-Dicke weights.
    LambDicke,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoolingParameters {
    /// Optical pumping rate out of the partner sublevel, Eᵣ/ħ.
    pub gamma_p: f64,
    /// Heating rate per axis, Eᵣ/ħ.
    pub heat_rate: [f64; 2],
    pub photons_per_cycle: u32,
    pub n_max: u32,
    /// Include Δn = 0 Raman transfer.
    pub carrier: bool,
    pub blue_sidebands: bool,
    pub lamb_dicke_order: LambDickeOrder,
    pub recoil: RecoilModel,
    /// Downward heating rate as a fraction of the upward one.
    pub bath_factor: f64,
    /// Active vibrational axes.
    pub axes: [bool; 2],
}

impl Default for CoolingParameters {
    fn default() -> Self {
        Self {
            gamma_p: 0.8,
            heat_rate: [0.0; 2],
            photons_per_cycle: 2,
            n_max: 10,
            carrier: false,
            blue_sidebands: false,
            lamb_dicke_order: LambDickeOrder::Second,
            recoil: RecoilModel::Exact,
            bath_factor: 0.0,
            axes: [true, true],
        }
    }
}

impl CoolingParameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_p > 0.0 && self.gamma_p.is_finite()) {
            return Err(Error::invalid("gamma_p", "pumping rate must be positive"));
        }
        if self.heat_rate.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
            return Err(Error::invalid("heat_rate", "must be non-negative"));
        }
        if !(self.bath_factor >= 0.0 && self.bath_factor < 1.0) {
            return Err(Error::invalid("bath_factor", "must lie in [0, 1)"));
        }
        if self.photons_per_cycle == 0 {
            return Err(Error::invalid("photons_per_cycle", "at least one photon closes the cycle"));
        }
        if self.n_max == 0 {
            return Err(Error::invalid("n_max", "must be at least 1"));
        }
        Ok(())
    }
}

/// Heating rates out of one state: Δn_a = +1 at h_a (n_a + 1) and
/// Δn_a = −1 at bath · h_a · n_a, same sublevel.
pub fn heating_rates(state: StateIndex, heat_rate: [f64; 2], bath_factor: f64) -> Vec<(StateIndex, f64)> {
    let mut out = Vec::new();
    for a in 0..2 {
        let h = heat_rate[a];
        if h <= 0.0 {
            continue;
        }
        let n = state.n(a);
        let mut up = state;
        if a == 0 {
            up.n_x += 1;
        } else {
            up.n_y += 1;
        }
        out.push((up, h * (n as f64 + 1.0)));
        if n > 0 && bath_factor > 0.0 {
            let mut down = state;
            if a == 0 {
                down.n_x -= 1;
            } else {
                down.n_y -= 1;
            }
            out.push((down, bath_factor * h * n as f64));
        }
    }
    out
}

/// Lattice photon scattering rate (Γ/Δ) U₀ in Eᵣ/ħ.
pub fn lattice_scattering_rate(depth_u0: f64, detuning_linewidths: f64) -> f64 {
    depth_u0 / detuning_linewidths
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    RedSideband,
    BlueSideband,
    Carrier,
    Pump,
    Heat,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
    pub channel: Channel,
}

#[derive(Clone, Debug)]
pub struct RateModel {
    pub space: StateSpace,
    pub transitions: Vec<Transition>,
    pub pump_rate: f64,
    pub heat_rate_per_axis: [f64; 2],
    pub b_z: f64,
}

/// Sideband classification from the change of total vibrational quanta
/// going from the stretched state to the partner state.
fn classify(from: &StateIndex, to: &StateIndex) -> Channel {
    match to.quanta().cmp(&from.quanta()) {
        std::cmp::Ordering::Less => Channel::RedSideband,
        std::cmp::Ordering::Greater => Channel::BlueSideband,
        std::cmp::Ordering::Equal => Channel::Carrier,
    }
}

pub fn build_rate_model(scheme: &LevelScheme, params: &CoolingParameters) -> Result<RateModel> {
    params.validate()?;
    if params.n_max as usize > scheme.n_max {
        return Err(Error::invalid("n_max", "exceeds the level scheme truncation"));
    }
    let w = &scheme.well;
    let space = StateSpace::new(params.n_max, params.axes, w.stretched_m, w.partner_m)?;
    let eta = [w.eta_x, w.eta_y];
    let mut transitions = Vec::new();
    let mut energies = Vec::with_capacity(space.len());
    for s in space.states() {
        energies.push(scheme.energy(s.n_x as usize, s.n_y as usize, s.m)?);
    }

    // Raman transfer, symmetric in direction
    for (i, a) in space.states().iter().enumerate().filter(|(_, s)| s.m == w.stretched_m) {
        for (j, b) in space.states().iter().enumerate().filter(|(_, s)| s.m == w.partner_m) {
            let channel = classify(a, b);
            let enabled = match channel {
                Channel::RedSideband => true,
                Channel::BlueSideband => params.blue_sidebands,
                _ => params.carrier,
            };
            if !enabled {
                continue;
            }
            let c = coupling_element(w, (a.n_x, a.n_y), (b.n_x, b.n_y), params.lamb_dicke_order).norm();
            if c == 0.0 {
                continue;
            }
            let rate = raman_rate(c, energies[j] - energies[i], params.gamma_p);
            if rate > 0.0 {
                transitions.push(Transition { from: i, to: j, rate, channel });
                transitions.push(Transition { from: j, to: i, rate, channel });
            }
        }
    }

    // optical pumping with recoil
    let kernel_dim = params.n_max as usize + 1;
    let kernels: Vec<DMatrix<f64>> = eta
        .iter()
        .map(|&e| {
            let k = recoil_kernel(e, kernel_dim + 24);
            let mut p = k.clone();
            for _ in 1..params.photons_per_cycle {
                p = &k * &p;
            }
            p
        })
        .collect();
    for (i, s) in space.states().iter().enumerate().filter(|(_, s)| s.m == w.partner_m) {
        let targets: Vec<(usize, f64)> = match params.recoil {
            RecoilModel::LambDicke => {
                let mut eta_active = eta;
                for a in 0..2 {
                    if !params.axes[a] {
                        eta_active[a] = 0.0;
                    }
                }
                pump_transition_rates(*s, w.stretched_m, eta_active, params.gamma_p, params.photons_per_cycle)?
                    .into_iter()
                    .filter_map(|(t, r)| space.index(&t).map(|k| (k, r)))
                    .collect()
            }
            RecoilModel::Exact => space
                .states()
                .iter()
                .enumerate()
                .filter(|(_, t)| t.m == w.stretched_m)
                .map(|(k, t)| {
                    let wx = if params.axes[0] { kernels[0][(t.n_x as usize, s.n_x as usize)] } else { 1.0 };
                    let wy = if params.axes[1] { kernels[1][(t.n_y as usize, s.n_y as usize)] } else { 1.0 };
                    (k, wx * wy)
                })
                .collect(),
        };
        let total: f64 = targets.iter().map(|(_, r)| r).sum();
        for (k, r) in targets {
            let rate = params.gamma_p * r / total;
            if rate > 0.0 {
                transitions.push(Transition {
                    from: i,
                    to: k,
                    rate,
                    channel: Channel::Pump,
                });
            }
        }
    }

    // heating, truncated at the basis edge
    let mut heat = params.heat_rate;
    for a in 0..2 {
        if !params.axes[a] {
            heat[a] = 0.0;
        }
    }
    for (i, s) in space.states().iter().enumerate() {
        for (t, rate) in heating_rates(*s, heat, params.bath_factor) {
            if let Some(k) = space.index(&t) {
                transitions.push(Transition {
                    from: i,
                    to: k,
                    rate,
                    channel: Channel::Heat,
                });
            }
        }
    }

    Ok(RateModel {
        space,
        transitions,
        pump_rate: params.gamma_p,
        heat_rate_per_axis: heat,
        b_z: scheme.b_z,
    })
}

impl RateModel {
    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    /// Off-diagonal rate matrix Q[i][j] = total rate i → j.
    pub fn rate_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut q = DMatrix::zeros(n, n);
        for t in &self.transitions {
            q[(t.from, t.to)] += t.rate;
        }
        q
    }

    /// Generator G with dp/dt = G p (columns sum to zero).
    pub fn generator(&self) -> DMatrix<f64> {
        let n = self.len();
        let q = self.rate_matrix();
        let mut g = q.transpose();
        for i in 0..n {
            g[(i, i)] = -q.row(i).sum();
        }
        g
    }

    pub fn exit_rates(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for t in &self.transitions {
            out[t.from] += t.rate;
        }
        out
    }

    /// Sum of rates of a channel between two states.
    pub fn rate_between(&self, from: usize, to: usize, channel: Option<Channel>) -> f64 {
        self.transitions
            .iter()
            .filter(|t| t.from == from && t.to == to && channel.is_none_or(|c| c == t.channel))
            .map(|t| t.rate)
            .sum()
    }

    /// Outgoing (target, rate) per state, targets ordered by index.
    fn jump_table(&self) -> Vec<Vec<(usize, f64)>> {
        let q = self.rate_matrix();
        (0..self.len())
            .map(|i| (0..self.len()).filter(|&j| q[(i, j)] > 0.0).map(|j| (j, q[(i, j)])).collect())
            .collect()
    }

    /// Communicating classes with no outgoing transitions.
    pub fn closed_classes(&self) -> Vec<Vec<usize>> {
        let mut g = DiGraph::<(), ()>::new();
        let nodes: Vec<NodeIndex> = (0..self.len()).map(|_| g.add_node(())).collect();
        for t in &self.transitions {
            if t.rate > 0.0 && t.from != t.to {
                g.update_edge(nodes[t.from], nodes[t.to], ());
            }
        }
        let sccs = tarjan_scc(&g);
        let mut class_of = vec![0usize; self.len()];
        for (c, comp) in sccs.iter().enumerate() {
            for n in comp {
                class_of[n.index()] = c;
            }
        }
        let mut closed = vec![true; sccs.len()];
        for e in g.raw_edges() {
            let (a, b) = (class_of[e.source().index()], class_of[e.target().index()]);
            if a != b {
                closed[a] = false;
            }
        }
        let mut out: Vec<Vec<usize>> = sccs
            .into_iter()
            .zip(closed)
            .filter(|(_, c)| *c)
            .map(|(comp, _)| {
                let mut v: Vec<usize> = comp.iter().map(|n| n.index()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        out.sort();
        out
    }
}

/// Stationary distribution of the unique closed class.
pub fn steady_state(model: &RateModel) -> Result<PopulationVector> {
    let classes = model.closed_classes();
    if classes.len() != 1 {
        return Err(Error::Singular {
            closed_classes: classes.len(),
        });
    }
    let pi = class_stationary(&model.rate_matrix(), &classes[0]);
    let mut p = vec![0.0; model.len()];
    for (k, &idx) in classes[0].iter().enumerate() {
        p[idx] = pi[k];
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular { closed_classes: 1 });
    }
    Ok(PopulationVector { p })
}

/// Normalized stationary weights of one closed class by GTH elimination.
fn class_stationary(full: &DMatrix<f64>, class: &[usize]) -> Vec<f64> {
    let n = class.len();
    let mut q = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { full[(class[i], class[j])] });
    // last state first
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| q[(k, j)]).sum();
        for i in 0..k {
            let f = q[(i, k)] / s;
            if f == 0.0 {
                continue;
            }
            for j in 0..k {
                if i != j {
                    q[(i, j)] += f * q[(k, j)];
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        let s: f64 = (0..k).map(|j| q[(k, j)]).sum();
        pi[k] = (0..k).map(|i| pi[i] * q[(i, k)]).sum::<f64>() / s;
    }
    let total: f64 = pi.iter().sum();
    pi.iter().map(|x| x / total).collect()
}

/// lim p(t) for t → ∞ from `p0`. Equals [`steady_state`] when the closed
/// class is unique; otherwise each class receives its absorption probability.
pub fn long_time_limit(model: &RateModel, p0: &PopulationVector) -> Result<PopulationVector> {
    if p0.p.len() != model.len() {
        return Err(Error::invalid("p0", "length does not match the state space"));
    }
    let classes = model.closed_classes();
    if classes.len() == 1 {
        return steady_state(model);
    }
    let n = model.len();
    let mut class_of = vec![usize::MAX; n];
    for (c, class) in classes.iter().enumerate() {
        for &i in class {
            class_of[i] = c;
        }
    }
    let transient: Vec<usize> = (0..n).filter(|&i| class_of[i] == usize::MAX).collect();
    let g = model.generator();
    let mut mass: Vec<f64> = classes.iter().map(|c| c.iter().map(|&i| p0.p[i]).sum()).collect();
    if !transient.is_empty() {
        // time-integrated transient occupation: (−G_TT) x = p0_T
        let m = transient.len();
        let a = DMatrix::from_fn(m, m, |i, j| -g[(transient[i], transient[j])]);
        let b = nalgebra::DVector::from_iterator(m, transient.iter().map(|&i| p0.p[i]));
        let x = a.lu().solve(&b).ok_or(Error::Singular {
            closed_classes: classes.len(),
        })?;
        for (c, class) in classes.iter().enumerate() {
            mass[c] += class
                .iter()
                .map(|&i| transient.iter().zip(x.iter()).map(|(&j, xj)| g[(i, j)] * xj).sum::<f64>())
                .sum::<f64>();
        }
    }
    let full = model.rate_matrix();
    let mut p = vec![0.0; n];
    for (class, w) in classes.iter().zip(&mass) {
        for (k, pi) in class.iter().zip(class_stationary(&full, class)) {
            p[*k] = w * pi;
        }
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular {
            closed_classes: classes.len(),
        });
    }
    Ok(PopulationVector { p })
}

/// Largest Λ·Δt per uniformization chunk.
pub const DEFAULT_CHUNK: f64 = 50.0;

/// p(t) = exp(G t) p₀ by uniformization in chunks of at most `max_chunk`
/// expected jumps.
pub fn evolve(model: &RateModel, p0: &PopulationVector, t: f64, max_chunk: f64) -> Result<PopulationVector> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid("t", "evolution time must be finite and non-negative"));
    }
    if !(max_chunk > 0.0) {
        return Err(Error::invalid("max_chunk", "must be positive"));
    }
    if p0.p.len() != model.len() {
        return Err(Error::invalid("p0", "length does not match the state space"));
    }
    let mut p = nalgebra::DVector::from_column_slice(&p0.p);
    let exit = model.exit_rates();
    let lambda = exit.iter().copied().fold(0.0, f64::max) * 1.02;
    if t == 0.0 || lambda == 0.0 {
        return Ok(p0.clone());
    }
    let n = model.len();
    // P = I + G/Λ
    let mut step = model.generator() / lambda;
    for i in 0..n {
        step[(i, i)] += 1.0;
    }
    let chunks = (lambda * t / max_chunk).ceil().max(1.0) as usize;
    let dt = t / chunks as f64;
    let mu = lambda * dt;
    let mut elapsed = 0.0;
    for _ in 0..chunks {
        let mut term = p.clone();
        let mut weight = (-mu).exp();
        let mut acc = &term * weight;
        let mut cumulative = weight;
        let mut k = 0usize;
        while cumulative < 1.0 - 1e-15 && k < 10_000 {
            k += 1;
            term = &step * term;
            weight *= mu / k as f64;
            cumulative += weight;
            acc += &term * weight;
        }
        if acc.iter().any(|x| !x.is_finite()) {
            return Err(Error::Integration {
                t: elapsed,
                detail: format!("non-finite populations after {k} uniformization terms (Λ = {lambda:.3e})"),
            });
        }
        for x in acc.iter_mut() {
            *x = x.max(0.0);
        }
        let total = acc.sum();
        p = acc / total;
        elapsed += dt;
    }
    Ok(PopulationVector { p: p.iter().copied().collect() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial: usize,
    /// (time, new state) per jump, strictly increasing in time.
    pub events: Vec<(f64, usize)>,
    pub final_state: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    pub seed: u64,
    pub n_atoms: usize,
    pub t: f64,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryEnsemble {
    pub fn final_populations(&self, space: &StateSpace) -> PopulationVector {
        let mut p = vec![0.0; space.len()];
        for tr in &self.trajectories {
            p[tr.final_state] += 1.0;
        }
        let n = self.n_atoms as f64;
        PopulationVector {
            p: p.into_iter().map(|c| c / n).collect(),
        }
    }

    pub fn total_jumps(&self) -> usize {
        self.trajectories.iter().map(|t| t.events.len()).sum()
    }
}

fn sample_index(cumulative: &[f64], u: f64) -> usize {
    let total = *cumulative.last().expect("non-empty distribution");
    let target = u * total;
    cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1)
}

/// Continuous-time jump simulation of independent atoms. Atom `i` draws from
/// the ChaCha8 stream `i` of `seed`, so results do not depend on threading.
pub fn monte_carlo(
    model: &RateModel,
    p0: &PopulationVector,
    t: f64,
    n_atoms: usize,
    seed: u64,
    record_events: bool,
) -> Result<TrajectoryEnsemble> {
    if n_atoms == 0 {
        return Err(Error::invalid("n_atoms", "must be at least 1"));
    }
    if p0.p.len() != model.len() {
        return Err(Error::invalid("p0", "length does not match the state space"));
    }
    let table = model.jump_table();
    let cumulative_tables: Vec<(f64, Vec<f64>)> = table
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            let cum: Vec<f64> = row
                .iter()
                .map(|(_, r)| {
                    acc += r;
                    acc
                })
                .collect();
            (acc, cum)
        })
        .collect();
    let mut acc = 0.0;
    let p0_cum: Vec<f64> = p0
        .p
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    let trajectories = (0..n_atoms)
        .into_par_iter()
        .map(|atom| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(atom as u64);
            let initial = sample_index(&p0_cum, rng.random::<f64>());
            let mut state = initial;
            let mut now = 0.0;
            let mut events = Vec::new();
            loop {
                let (total, ref cum) = cumulative_tables[state];
                if total <= 0.0 {
                    break;
                }
                let wait: f64 = Exp1.sample(&mut rng);
                let next_time = now + wait / total;
                if next_time > t {
                    break;
                }
                now = next_time;
                state = table[state][sample_index(cum, rng.random::<f64>())].0;
                if record_events {
                    events.push((now, state));
                }
            }
            Trajectory {
                initial,
                events,
                final_state: state,
            }
        })
        .collect();
    Ok(TrajectoryEnsemble {
        seed,
        n_atoms,
        t,
        trajectories,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observables {
    pub nbar: [f64; 2],
    /// Ground-state fraction within the stretched sublevel.
    pub pi0: f64,
    /// Ratio of a population-weighted geometric fit to the lowest marginal
    /// populations per axis.
    pub q_b: [f64; 2],
    /// n̄/(1 + n̄) per axis.
    pub q_b_harmonic: [f64; 2],
    /// (m, population) pairs, stretched sublevel first.
    pub m_populations: Vec<(i32, f64)>,
}

impl Observables {
    pub fn nbar_mean(&self) -> f64 {
        0.5 * (self.nbar[0] + self.nbar[1])
    }
}

/// Marginal population of each n along one axis.
pub fn marginal(space: &StateSpace, p: &PopulationVector, axis: usize) -> Vec<f64> {
    let mut out = vec![0.0; space.n_max as usize + 1];
    for (s, &x) in space.states().iter().zip(&p.p) {
        out[s.n(axis) as usize] += x;
    }
    out
}

const GEOMETRIC_FIT_LEVELS: usize = 4;

/// Slope of ln p_n against n, each level weighted by its population.
fn geometric_ratio(marg: &[f64]) -> f64 {
    let pts: Vec<(f64, f64, f64)> = marg
        .iter()
        .take(GEOMETRIC_FIT_LEVELS)
        .enumerate()
        .filter(|(_, &v)| v > 1e-300)
        .map(|(n, &v)| (n as f64, v.ln(), v))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|(x, _, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y, w)| w * (x - mx) * (y - my)).sum();
    (sxy / sxx).exp()
}

pub fn observables(space: &StateSpace, p: &PopulationVector) -> Observables {
    let mut nbar = [0.0; 2];
    let mut stretched = 0.0;
    for (s, &x) in space.states().iter().zip(&p.p) {
        nbar[0] += s.n_x as f64 * x;
        nbar[1] += s.n_y as f64 * x;
        if s.m == space.stretched_m {
            stretched += x;
        }
    }
    let ground = p.p[space.ground()];
    let pi0 = if stretched > 0.0 { ground / stretched } else { 0.0 };
    let q_b = [0, 1].map(|a| {
        if space.axes[a] {
            geometric_ratio(&marginal(space, p, a))
        } else {
            0.0
        }
    });
    Observables {
        nbar,
        pi0,
        q_b,
        q_b_harmonic: nbar.map(|n| n / (1.0 + n)),
        m_populations: vec![(space.stretched_m, stretched), (space.partner_m, 1.0 - stretched)],
    }
}

/// Observables of an ensemble together with their one-sigma sampling errors.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledObservables {
    pub value: Observables,
    pub nbar_error: [f64; 2],
    pub pi0_error: f64,
    pub stretched_error: f64,
}

pub fn sampled_observables(space: &StateSpace, ens: &TrajectoryEnsemble) -> SampledObservables {
    let p = ens.final_populations(space);
    let value = observables(space, &p);
    let n = ens.n_atoms as f64;
    let mut nbar_error = [0.0; 2];
    for (a, err) in nbar_error.iter_mut().enumerate() {
        let second: f64 = space.states().iter().zip(&p.p).map(|(s, x)| (s.n(a) as f64).powi(2) * x).sum();
        *err = ((second - value.nbar[a].powi(2)).max(0.0) / n).sqrt();
    }
    let stretched = value.m_populations[0].1;
    let n_stretched = stretched * n;
    let pi0_error = if n_stretched > 0.0 {
        (value.pi0 * (1.0 - value.pi0) / n_stretched).sqrt()
    } else {
        0.0
    };
    SampledObservables {
        nbar_error,
        pi0_error,
        stretched_error: (stretched * (1.0 - stretched) / n).sqrt(),
        value,
    }
}
