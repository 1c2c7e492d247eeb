use super::{Instance, Slot};
use crate::error::{Error, Result};
use crate::lfw::BlockedSets;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementMode {
    /// Binary placement held constant; only selection and routing move.
    Fixed,
    /// Relaxed placement `y` optimized jointly with selection and routing.
    Joint,
}

/// Selection `s`, routing `phi` and placement `y`.
///
/// Layouts: `s[i * n_slots + slot]`, `phi[svc * n_links + link]`,
/// `y[i * n_services + svc]`. A service with `y == 0` at every node is
/// undeployed: nobody may select it and it carries no routing.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionState {
    n_nodes: usize,
    n_slots: usize,
    n_services: usize,
    n_links: usize,
    pub s: Vec<f64>,
    pub phi: Vec<f64>,
    pub y: Vec<f64>,
}

impl DecisionState {
    pub fn zeros(inst: &Instance) -> Self {
        let n = inst.num_nodes();
        let ns = inst.catalog.num_slots();
        let nsv = inst.num_services();
        let nl = inst.num_links();
        DecisionState {
            n_nodes: n,
            n_slots: ns,
            n_services: nsv,
            n_links: nl,
            s: vec![0.0; n * ns],
            phi: vec![0.0; nsv * nl],
            y: vec![0.0; n * nsv],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n_nodes
    }
    pub fn num_services(&self) -> usize {
        self.n_services
    }
    pub fn num_links(&self) -> usize {
        self.n_links
    }
    pub fn num_slots(&self) -> usize {
        self.n_slots
    }

    #[inline]
    pub fn s(&self, i: usize, slot: usize) -> f64 {
        self.s[i * self.n_slots + slot]
    }
    #[inline]
    pub fn set_s(&mut self, i: usize, slot: usize, v: f64) {
        self.s[i * self.n_slots + slot] = v;
    }
    #[inline]
    pub fn phi(&self, svc: usize, link: usize) -> f64 {
        self.phi[svc * self.n_links + link]
    }
    #[inline]
    pub fn set_phi(&mut self, svc: usize, link: usize, v: f64) {
        self.phi[svc * self.n_links + link] = v;
    }
    #[inline]
    pub fn y(&self, i: usize, svc: usize) -> f64 {
        self.y[i * self.n_services + svc]
    }
    #[inline]
    pub fn set_y(&mut self, i: usize, svc: usize, v: f64) {
        self.y[i * self.n_services + svc] = v;
    }

    pub fn phi_row(&self, svc: usize) -> &[f64] {
        &self.phi[svc * self.n_links..(svc + 1) * self.n_links]
    }

    pub fn is_deployed(&self, svc: usize) -> bool {
        (0..self.n_nodes).any(|i| self.y(i, svc) > 0.0)
    }

    /// Nodes with `y >= threshold` for a service.
    pub fn hosts(&self, svc: usize, threshold: f64) -> Vec<bool> {
        (0..self.n_nodes).map(|i| self.y(i, svc) >= threshold).collect()
    }

    /// Whether selecting `slot` is permitted (local, or a deployed service).
    pub fn slot_available(&self, inst: &Instance, slot: usize) -> bool {
        match inst.catalog.slot(slot) {
            Slot::Local { .. } => true,
            Slot::Remote { service } => self.is_deployed(service),
        }
    }

    /// Per-node storage used by `y`.
    pub fn storage_used(&self, inst: &Instance, i: usize) -> f64 {
        (0..self.n_services)
            .map(|s| inst.catalog.service(s).model_size * self.y(i, s))
            .sum()
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let tot: f64 = w.iter().sum();
    w.into_iter().map(|x| x / tot).collect()
}

/// Random binary placement: every service gets at most one primary host in a
/// random order, then extra replicas are added where storage remains.
fn random_placement(inst: &Instance, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    let n = inst.num_nodes();
    let nsv = inst.num_services();
    let mut remaining = inst.network.storage_capacity.clone();
    let mut hosts = vec![vec![false; n]; nsv];
    let mut order: Vec<usize> = (0..nsv).collect();
    order.shuffle(rng);
    for &s in &order {
        let size = inst.catalog.service(s).model_size;
        let fits: Vec<usize> = (0..n).filter(|&i| remaining[i] + 1e-12 >= size).collect();
        if let Some(&i) = fits.choose(rng) {
            hosts[s][i] = true;
            remaining[i] -= size;
        }
    }
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(rng);
    for &i in &nodes {
        order.shuffle(rng);
        for &s in &order {
            let size = inst.catalog.service(s).model_size;
            let deployed = hosts[s].iter().any(|&h| h);
            if deployed && !hosts[s][i] && remaining[i] + 1e-12 >= size && rng.random_bool(0.3) {
                hosts[s][i] = true;
                remaining[i] -= size;
            }
        }
    }
    hosts
}

/// Builds a random feasible, loop-free state. Deterministic per seed.
///
/// Services that cannot be placed anywhere stay undeployed. In joint mode
/// non-host nodes additionally get random fractional `y < 0.5` within storage.
pub fn random_feasible_state(inst: &Instance, seed: u64, mode: PlacementMode) -> Result<DecisionState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hosts = random_placement(inst, &mut rng);
    state_from_hosts(inst, &hosts, mode, &mut rng)
}

/// Random selection and routing on top of a given binary placement.
pub fn state_from_hosts(
    inst: &Instance,
    hosts: &[Vec<bool>],
    mode: PlacementMode,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionState> {
    let n = inst.num_nodes();
    let nsv = inst.num_services();
    let mut state = DecisionState::zeros(inst);
    for s in 0..nsv {
        for i in 0..n {
            if hosts[s][i] {
                state.set_y(i, s, 1.0);
            }
        }
    }
    let blocked = BlockedSets::build(inst, &state, mode)?;

    if mode == PlacementMode::Joint {
        let mut remaining: Vec<f64> = (0..n)
            .map(|i| inst.network.storage_capacity[i] - state.storage_used(inst, i))
            .collect();
        for s in 0..nsv {
            if !state.is_deployed(s) {
                continue;
            }
            let size = inst.catalog.service(s).model_size;
            for i in 0..n {
                if hosts[s][i] || remaining[i] <= 0.0 || !rng.random_bool(0.3) {
                    continue;
                }
                // below the host threshold, so the blocked sets stay the same
                let cap = if size > 0.0 { (remaining[i] / size).min(0.49) } else { 0.49 };
                let y = rng.random_range(0.0..1.0) * cap;
                state.set_y(i, s, y);
                remaining[i] -= y * size;
            }
        }
    }

    for s in 0..nsv {
        if !state.is_deployed(s) {
            continue;
        }
        for i in 0..n {
            let mass = 1.0 - state.y(i, s);
            if mass <= 0.0 {
                continue;
            }
            let allowed: Vec<usize> = blocked.allowed_out(inst, s, i).collect();
            if allowed.is_empty() {
                return Err(Error::UnreachableHost { node: i, service: s });
            }
            let chosen: Vec<usize> = allowed
                .iter()
                .copied()
                .filter(|_| rng.random_bool(0.6))
                .collect();
            let chosen = if chosen.is_empty() {
                vec![*allowed.choose(rng).unwrap()]
            } else {
                chosen
            };
            let w = random_simplex(rng, chosen.len());
            for (&l, wl) in chosen.iter().zip(w) {
                state.set_phi(s, l, mass * wl);
            }
        }
    }

    for i in 0..n {
        for k in 0..inst.catalog.num_tasks() {
            let avail: Vec<usize> = inst
                .catalog
                .task_slots(k)
                .filter(|&slot| state.slot_available(inst, slot))
                .collect();
            if avail.is_empty() {
                return Err(Error::NoFeasiblePlacement(format!(
                    "task {k} has no local model and no deployed service"
                )));
            }
            let w = random_simplex(rng, avail.len());
            for (&slot, ws) in avail.iter().zip(w) {
                state.set_s(i, slot, ws);
            }
        }
    }
    Ok(state)
}
