//! Local Frank–Wolfe over selection, routing and (optionally) placement.

use crate::dmp::{self, DmpOptions, OverheadStats};
use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions};
use crate::grad::{self, GradientBundle, KktResidual};
use crate::model::{validate, DecisionState, Instance, PlacementMode, Slot};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Per-service allowed out-edges. A node may only forward to nodes that
/// precede it in the order (hop distance to nearest host, node id).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedSets {
    n_nodes: usize,
    n_links: usize,
    allowed: Vec<bool>,
    rank: Vec<usize>,
    deployed: Vec<bool>,
}

impl BlockedSets {
    /// Hosts are nodes with `y >= 0.5`, or the nodes of largest `y` when a
    /// deployed service has no such node. In fixed mode hosts never forward.
    pub fn build(inst: &Instance, state: &DecisionState, mode: PlacementMode) -> Result<BlockedSets> {
        let net = &inst.network;
        let n = net.num_nodes();
        let nl = net.num_links();
        let nsv = inst.num_services();
        let mut allowed = vec![false; nsv * nl];
        let mut rank = vec![0; nsv * n];
        let mut deployed = vec![false; nsv];
        for svc in 0..nsv {
            if !state.is_deployed(svc) {
                continue;
            }
            deployed[svc] = true;
            let mut is_host = state.hosts(svc, 0.5);
            if !is_host.iter().any(|&h| h) {
                let best = (0..n).map(|i| state.y(i, svc)).fold(0.0, f64::max);
                is_host = (0..n).map(|i| state.y(i, svc) == best).collect();
            }
            let sources: Vec<usize> = (0..n).filter(|&i| is_host[i]).collect();
            let dist = net.hop_distances(&sources);
            let mut order: Vec<(usize, usize)> = Vec::with_capacity(n);
            for (i, d) in dist.iter().enumerate() {
                let d = d.ok_or(Error::UnreachableHost { node: i, service: svc })?;
                order.push((d, i));
            }
            order.sort_unstable();
            for (r, &(_, i)) in order.iter().enumerate() {
                rank[svc * n + i] = r;
            }
            for l in 0..nl {
                let lk = net.link(l);
                let forward = rank[svc * n + lk.dst] < rank[svc * n + lk.src];
                let host_blocked = mode == PlacementMode::Fixed && is_host[lk.src];
                allowed[svc * nl + l] = forward && !host_blocked;
            }
        }
        Ok(BlockedSets {
            n_nodes: n,
            n_links: nl,
            allowed,
            rank,
            deployed,
        })
    }

    pub fn allowed(&self, svc: usize, link: usize) -> bool {
        self.allowed[svc * self.n_links + link]
    }

    pub fn allowed_out<'a>(&'a self, inst: &'a Instance, svc: usize, i: usize) -> impl Iterator<Item = usize> + 'a {
        inst.network
            .out_links(i)
            .iter()
            .copied()
            .filter(move |&l| self.allowed(svc, l))
    }

    /// Position of node `i` in the order of `svc` (0 = order-minimal).
    pub fn rank(&self, svc: usize, i: usize) -> usize {
        self.rank[svc * self.n_nodes + i]
    }

    /// Whether the service was deployed when the sets were built.
    pub fn deployed(&self, svc: usize) -> bool {
        self.deployed[svc]
    }

    pub fn num_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// `a / (n + b)`.
    Diminishing { a: f64, b: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Constant { alpha: 0.05 }
    }
}

impl StepSchedule {
    pub fn alpha(&self, n: usize) -> f64 {
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::Diminishing { a, b } => (a / (n as f64 + b)).min(1.0),
        }
    }
}

/// A vertex of the feasible set, same layout as [`DecisionState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub s: Vec<f64>,
    pub phi: Vec<f64>,
    pub y: Vec<f64>,
}

fn argmin_by<I: Iterator<Item = usize>>(it: I, f: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for k in it {
        let v = f(k);
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

fn selection_direction(inst: &Instance, blocked: &BlockedSets, grads: &GradientBundle) -> Vec<f64> {
    let cat = &inst.catalog;
    let ns = cat.num_slots();
    let mut d = vec![0.0; inst.num_nodes() * ns];
    for i in 0..inst.num_nodes() {
        for k in 0..cat.num_tasks() {
            let avail = cat.task_slots(k).filter(|&sl| match cat.slot(sl) {
                Slot::Local { .. } => true,
                Slot::Remote { service } => blocked.deployed(service),
            });
            if let Some(sl) = argmin_by(avail, |sl| grads.ds[i * ns + sl]) {
                d[i * ns + sl] = 1.0;
            }
        }
    }
    d
}

fn best_edge(inst: &Instance, blocked: &BlockedSets, grads: &GradientBundle, svc: usize, i: usize) -> Option<usize> {
    let nl = inst.num_links();
    argmin_by(blocked.allowed_out(inst, svc, i), |l| grads.dphi[svc * nl + l])
}

/// Closed-form direction with placement held at `state.y`.
pub fn fw_direction_fixed(inst: &Instance, grads: &GradientBundle, blocked: &BlockedSets, state: &DecisionState) -> Direction {
    let nl = inst.num_links();
    let mut phi = vec![0.0; inst.num_services() * nl];
    for svc in (0..inst.num_services()).filter(|&s| blocked.deployed(s)) {
        for i in 0..inst.num_nodes() {
            let mass = 1.0 - state.y(i, svc);
            if mass <= 0.0 {
                continue;
            }
            if let Some(l) = best_edge(inst, blocked, grads, svc, i) {
                phi[svc * nl + l] = mass;
            }
        }
    }
    Direction {
        s: selection_direction(inst, blocked, grads),
        phi,
        y: state.y.clone(),
    }
}

/// Exact minimizer of the linearized objective over each node's polytope
/// `{y + sum phi = 1, sum L_mod y <= R, >= 0}`: a fractional knapsack on
/// the saving `min_j dJ/dphi_ij - dJ/dy_i` per unit of storage.
pub fn fw_direction_joint(inst: &Instance, grads: &GradientBundle, blocked: &BlockedSets) -> Direction {
    let n = inst.num_nodes();
    let nsv = inst.num_services();
    let nl = inst.num_links();
    let mut phi = vec![0.0; nsv * nl];
    let mut y = vec![0.0; n * nsv];
    for i in 0..n {
        let mut cap = inst.network.storage_capacity[i];
        // (ratio, saving, svc, best edge)
        let mut cands: Vec<(f64, f64, usize, usize)> = Vec::new();
        for svc in (0..nsv).filter(|&s| blocked.deployed(s)) {
            let size = inst.catalog.service(svc).model_size;
            match best_edge(inst, blocked, grads, svc, i) {
                None => {
                    y[i * nsv + svc] = 1.0;
                    cap -= size;
                }
                Some(l) => {
                    let saving = grads.dphi[svc * nl + l] - grads.dy[i * nsv + svc];
                    let ratio = if size > 0.0 { saving / size } else { f64::INFINITY };
                    cands.push((ratio, saving, svc, l));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
        for (_, saving, svc, l) in cands {
            let size = inst.catalog.service(svc).model_size;
            let mut host = 0.0;
            if saving > 0.0 {
                host = if size <= 0.0 { 1.0 } else { (cap.max(0.0) / size).min(1.0) };
                cap -= host * size;
            }
            y[i * nsv + svc] = host;
            phi[svc * nl + l] = 1.0 - host;
        }
    }
    Direction {
        s: selection_direction(inst, blocked, grads),
        phi,
        y,
    }
}

fn renormalize(inst: &Instance, state: &mut DecisionState, blocked: &BlockedSets) {
    let cat = &inst.catalog;
    let ns = cat.num_slots();
    for i in 0..inst.num_nodes() {
        for k in 0..cat.num_tasks() {
            let r = cat.task_slots(k);
            let row = &mut state.s[i * ns + r.start..i * ns + r.end];
            row.iter_mut().for_each(|x| *x = x.max(0.0));
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|x| *x /= sum);
            }
        }
    }
    let nl = inst.num_links();
    let nsv = inst.num_services();
    for svc in (0..nsv).filter(|&s| blocked.deployed(s)) {
        for i in 0..inst.num_nodes() {
            let out = inst.network.out_links(i);
            let mut sum = state.y(i, svc).max(0.0);
            for &l in out {
                sum += state.phi[svc * nl + l].max(0.0);
            }
            if sum <= 0.0 {
                continue;
            }
            state.set_y(i, svc, state.y(i, svc).max(0.0) / sum);
            for &l in out {
                let v = state.phi[svc * nl + l].max(0.0) / sum;
                state.phi[svc * nl + l] = v;
            }
        }
    }
}

/// `x <- x + alpha (d - x)` followed by drift renormalization.
pub fn apply_step(inst: &Instance, state: &mut DecisionState, dir: &Direction, alpha: f64, blocked: &BlockedSets) {
    if alpha == 0.0 {
        return;
    }
    for (x, d) in state.s.iter_mut().zip(&dir.s) {
        *x += alpha * (d - *x);
    }
    for (x, d) in state.phi.iter_mut().zip(&dir.phi) {
        *x += alpha * (d - *x);
    }
    for (x, d) in state.y.iter_mut().zip(&dir.y) {
        *x += alpha * (d - *x);
    }
    renormalize(inst, state, blocked);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GradSource {
    #[default]
    Oracle,
    Dmp,
    /// Tunneling-unaware `dJ/dF_o = D'`.
    Static,
}

#[derive(Debug, Clone)]
pub struct LfwConfig {
    pub mode: PlacementMode,
    pub schedule: StepSchedule,
    pub max_iter: usize,
    /// Stop once every KKT residual is at or below this value.
    pub tol: Option<f64>,
    pub grad_source: GradSource,
    pub flow: FlowOptions,
    pub dmp: DmpOptions,
    /// Re-place greedily by local traffic every this many iterations (fixed mode).
    pub greedy_every: Option<usize>,
    /// Assert feasibility of every iterate.
    pub check_feasible: bool,
    pub record_time: bool,
}

impl Default for LfwConfig {
    fn default() -> Self {
        LfwConfig {
            mode: PlacementMode::Joint,
            schedule: StepSchedule::default(),
            max_iter: 500,
            tol: None,
            grad_source: GradSource::Oracle,
            flow: FlowOptions::default(),
            dmp: DmpOptions::default(),
            greedy_every: None,
            check_feasible: false,
            record_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub iter: usize,
    pub j: f64,
    pub q: f64,
    pub res_s: f64,
    pub res_phi: f64,
    pub res_y: f64,
    pub max_gain: f64,
    /// DMP messages and flops per node spent on this iterate's gradients.
    pub msgs_per_node: f64,
    pub flops_per_node: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct LfwOutcome {
    pub state: DecisionState,
    pub trajectory: Vec<TrajectoryRow>,
    pub kkt: KktResidual,
    pub converged: bool,
    /// Error that ended the run early, if any.
    pub aborted: Option<Error>,
    pub overhead: Option<OverheadStats>,
}

impl LfwOutcome {
    pub fn final_j(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |r| r.j)
    }
}

/// Gradients at a converged flow state from the requested source.
pub fn gradients_from(
    source: GradSource,
    inst: &Instance,
    state: &DecisionState,
    flow_state: &flow::FlowState,
    dmp_opts: &DmpOptions,
) -> Result<(GradientBundle, Option<OverheadStats>)> {
    match source {
        GradSource::Oracle => Ok((grad::gradients(inst, state, flow_state)?, None)),
        GradSource::Static => Ok((grad::static_gradients(inst, state, flow_state), None)),
        GradSource::Dmp => {
            let (g, stats) = dmp::run_dmp_round(inst, state, flow_state, dmp_opts)?;
            Ok((g, Some(stats)))
        }
    }
}

pub fn lfw_run(inst: &Instance, init: &DecisionState, cfg: &LfwConfig) -> Result<LfwOutcome> {
    let mut state = init.clone();
    let mut blocked = BlockedSets::build(inst, &state, cfg.mode)?;
    let mut trajectory = Vec::with_capacity(cfg.max_iter + 1);
    let mut overhead: Option<OverheadStats> = None;
    let mut kkt = KktResidual::default();
    let mut converged = false;
    let mut aborted = None;
    let start = Instant::now();

    for n in 0..=cfg.max_iter {
        if let Some(every) = cfg.greedy_every {
            if n > 0 && every > 0 && n % every == 0 {
                let fs = match flow::solve_flow_fixed_point(inst, &state, &cfg.flow) {
                    Ok(f) => f,
                    Err(e) => {
                        aborted = Some(e);
                        break;
                    }
                };
                let hosts = greedy_hosts(inst, &fs.traffic.t);
                state = repair(inst, &state, &hosts)?;
                blocked = BlockedSets::build(inst, &state, PlacementMode::Fixed)?;
            }
        }
        if cfg.check_feasible {
            let rep = validate(inst, &state, cfg.mode);
            if !rep.is_feasible() {
                return Err(Error::InvalidModel(format!("iterate {n} infeasible: {}", rep.violations[0])));
            }
        }
        let fs = match flow::solve_flow_fixed_point(inst, &state, &cfg.flow) {
            Ok(f) => f,
            Err(e) if n == 0 => return Err(e),
            Err(e) => {
                aborted = Some(e);
                break;
            }
        };
        let (grads, stats) = match gradients_from(cfg.grad_source, inst, &state, &fs, &cfg.dmp) {
            Ok(g) => g,
            Err(e) if n == 0 => return Err(e),
            Err(e) => {
                aborted = Some(e);
                break;
            }
        };
        let (msgs, flops) = stats.as_ref().map_or((0.0, 0.0), |s| (s.mean_msgs_per_node(), s.mean_flops_per_node()));
        if let Some(s) = stats {
            match overhead.as_mut() {
                Some(o) => o.accumulate(&s),
                None => overhead = Some(s),
            }
        }
        let obj = flow::evaluate_objective(inst, &state, &fs);
        kkt = grad::kkt_residual(inst, &state, &grads, &blocked, cfg.mode);
        trajectory.push(TrajectoryRow {
            iter: n,
            j: obj.j,
            q: obj.q,
            res_s: kkt.res_s,
            res_phi: kkt.res_phi,
            res_y: kkt.res_y,
            max_gain: grads.b.iter().copied().fold(0.0, f64::max),
            msgs_per_node: msgs,
            flops_per_node: flops,
            wall_ms: if cfg.record_time { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 },
        });
        if let Some(tol) = cfg.tol {
            if kkt.res_s.max(kkt.res_phi).max(kkt.res_y) <= tol {
                converged = true;
                break;
            }
        }
        if n == cfg.max_iter {
            break;
        }
        let dir = match cfg.mode {
            PlacementMode::Fixed => fw_direction_fixed(inst, &grads, &blocked, &state),
            PlacementMode::Joint => fw_direction_joint(inst, &grads, &blocked),
        };
        apply_step(inst, &mut state, &dir, cfg.schedule.alpha(n), &blocked);
    }

    Ok(LfwOutcome {
        state,
        trajectory,
        kkt,
        converged,
        aborted,
        overhead,
    })
}

/// Per node, hosts services in decreasing order of local traffic `t`
/// (ties by service id) while storage remains. Returns `hosts[svc][node]`.
pub fn greedy_hosts(inst: &Instance, t: &[f64]) -> Vec<Vec<bool>> {
    let n = inst.num_nodes();
    let nsv = inst.num_services();
    let mut hosts = vec![vec![false; n]; nsv];
    for i in 0..n {
        let mut order: Vec<usize> = (0..nsv).filter(|&s| t[i * nsv + s] > 0.0).collect();
        order.sort_by(|&a, &b| t[i * nsv + b].total_cmp(&t[i * nsv + a]).then(a.cmp(&b)));
        let mut cap = inst.network.storage_capacity[i];
        for s in order {
            let size = inst.catalog.service(s).model_size;
            if size <= cap + 1e-12 {
                hosts[s][i] = true;
                cap -= size;
            }
        }
    }
    hosts
}

/// Rounds relaxed placement to binary: per node, services in decreasing
/// `y` (ties by id) are hosted while they fit. The stored order-minimal
/// host of each service is always kept.
pub fn round_placement(inst: &Instance, state: &DecisionState, blocked: &BlockedSets) -> Vec<Vec<bool>> {
    let n = inst.num_nodes();
    let nsv = inst.num_services();
    let mut hosts = vec![vec![false; n]; nsv];
    for i in 0..n {
        let mut cap = inst.network.storage_capacity[i];
        let mut order: Vec<usize> = Vec::new();
        for s in (0..nsv).filter(|&s| blocked.deployed(s)) {
            if blocked.rank(s, i) == 0 {
                hosts[s][i] = true;
                cap -= inst.catalog.service(s).model_size;
            } else if state.y(i, s) > 0.0 {
                order.push(s);
            }
        }
        order.sort_by(|&a, &b| state.y(i, b).total_cmp(&state.y(i, a)).then(a.cmp(&b)));
        for s in order {
            let size = inst.catalog.service(s).model_size;
            if size <= cap + 1e-12 {
                hosts[s][i] = true;
                cap -= size;
            }
        }
    }
    hosts
}

/// Applies a binary placement to a state: routing is rescaled onto the
/// edges allowed by the new fixed-mode blocked sets (uniform if none of the
/// old mass survives) and selection of newly undeployed services moves to
/// the local model, or to the first deployed service of the task.
pub fn repair(inst: &Instance, state: &DecisionState, hosts: &[Vec<bool>]) -> Result<DecisionState> {
    let n = inst.num_nodes();
    let nsv = inst.num_services();
    let nl = inst.num_links();
    let cat = &inst.catalog;
    let mut out = DecisionState::zeros(inst);
    for s in 0..nsv {
        for i in 0..n {
            if hosts[s][i] {
                out.set_y(i, s, 1.0);
            }
        }
    }
    let blocked = BlockedSets::build(inst, &out, PlacementMode::Fixed)?;
    for s in (0..nsv).filter(|&s| blocked.deployed(s)) {
        for i in (0..n).filter(|&i| !hosts[s][i]) {
            let allowed: Vec<usize> = blocked.allowed_out(inst, s, i).collect();
            if allowed.is_empty() {
                return Err(Error::UnreachableHost { node: i, service: s });
            }
            let sum: f64 = allowed.iter().map(|&l| state.phi(s, l)).sum();
            for &l in &allowed {
                let v = if sum > 1e-12 { state.phi(s, l) / sum } else { 1.0 / allowed.len() as f64 };
                out.phi[s * nl + l] = v;
            }
        }
    }
    for i in 0..n {
        for k in 0..cat.num_tasks() {
            let slots = cat.task_slots(k);
            let avail: Vec<usize> = slots.clone().filter(|&sl| out.slot_available(inst, sl)).collect();
            let Some(&fallback) = avail.first() else {
                return Err(Error::NoFeasiblePlacement(format!("task {k} has no local model and no deployed service")));
            };
            let mut moved = 0.0;
            for sl in slots {
                if avail.contains(&sl) {
                    out.set_s(i, sl, state.s(i, sl));
                } else {
                    moved += state.s(i, sl);
                }
            }
            out.set_s(i, fallback, out.s(i, fallback) + moved);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::check_loop_free;

    #[test]
    fn line_host_at_end_points_toward_host() {
        let inst = fixtures::line(3, 1, 10.0);
        let mut st = DecisionState::zeros(&inst);
        st.set_y(2, 0, 1.0);
        let b = BlockedSets::build(&inst, &st, PlacementMode::Fixed).unwrap();
        let net = &inst.network;
        let allowed: Vec<(usize, usize)> = (0..net.num_links())
            .filter(|&l| b.allowed(0, l))
            .map(|l| (net.link(l).src, net.link(l).dst))
            .collect();
        assert_eq!(allowed, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn host_everywhere_blocks_all_edges() {
        let inst = fixtures::grid(3, 1);
        let mut st = DecisionState::zeros(&inst);
        for i in 0..9 {
            st.set_y(i, 0, 1.0);
        }
        let b = BlockedSets::build(&inst, &st, PlacementMode::Fixed).unwrap();
        assert_eq!(b.num_allowed(), 0);
    }

    #[test]
    fn grid_corner_host_is_acyclic_and_reaches_host() {
        let inst = fixtures::grid(3, 1);
        let mut st = DecisionState::zeros(&inst);
        st.set_y(0, 0, 1.0);
        let b = BlockedSets::build(&inst, &st, PlacementMode::Fixed).unwrap();
        let mut all = DecisionState::zeros(&inst);
        for l in 0..inst.num_links() {
            if b.allowed(0, l) {
                all.set_phi(0, l, 1.0);
            }
        }
        assert!(check_loop_free(&inst.network, &all, 0));
        for i in 1..9 {
            assert!(b.allowed_out(&inst, 0, i).next().is_some());
        }
        assert_eq!(b.allowed_out(&inst, 0, 0).count(), 0);
    }

    fn bundle(inst: &Instance) -> GradientBundle {
        let n = inst.num_nodes();
        let nsv = inst.num_services();
        let nl = inst.num_links();
        GradientBundle {
            ds: vec![0.0; n * inst.catalog.num_slots()],
            dphi: vec![0.0; nsv * nl],
            dy: vec![0.0; n * nsv],
            delta: vec![0.0; n * nsv],
            tau: vec![0.0; n * nsv],
            b: vec![0.0; nl],
            big_m: vec![0.0; n * nsv],
            m_small: vec![0.0; n * nsv],
            dj_dfo: vec![0.0; nl],
            xi: vec![0.0; n * nsv],
        }
    }

    #[test]
    fn selection_direction_is_argmin() {
        let inst = fixtures::pair_with_services(&[1.0, 1.0, 1.0], 10.0);
        let st = DecisionState::zeros(&inst);
        let mut st = st;
        for s in 0..3 {
            st.set_y(1, s, 1.0);
        }
        let b = BlockedSets::build(&inst, &st, PlacementMode::Fixed).unwrap();
        let mut g = bundle(&inst);
        g.ds[..3].copy_from_slice(&[0.5, 0.2, 0.9]);
        let d = fw_direction_fixed(&inst, &g, &b, &st);
        assert_eq!(&d.s[..3], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn routing_tie_picks_lower_node_id() {
        // square 0-1, 0-2, 1-3, 2-3 with host at 3
        let inst = fixtures::diamond(10.0);
        let mut st = DecisionState::zeros(&inst);
        st.set_y(3, 0, 1.0);
        let b = BlockedSets::build(&inst, &st, PlacementMode::Fixed).unwrap();
        let g = bundle(&inst);
        let d = fw_direction_fixed(&inst, &g, &b, &st);
        let net = &inst.network;
        assert_eq!(d.phi[net.link_id(0, 1).unwrap()], 1.0);
        assert_eq!(d.phi[net.link_id(0, 2).unwrap()], 0.0);
    }

    #[test]
    fn single_allowed_edge_is_forced() {
        let inst = fixtures::line(3, 1, 10.0);
        let mut st = DecisionState::zeros(&inst);
        st.set_y(2, 0, 1.0);
        let b = BlockedSets::build(&inst, &st, PlacementMode::Fixed).unwrap();
        let mut g = bundle(&inst);
        g.dphi.iter_mut().for_each(|x| *x = 5.0);
        let d = fw_direction_fixed(&inst, &g, &b, &st);
        assert_eq!(d.phi[inst.network.link_id(1, 2).unwrap()], 1.0);
    }

    /// Minimum of the linearized objective over one node's polytope by
    /// enumerating vertices: any subset hosted fully plus at most one
    /// fractional service filling the remaining storage.
    fn vertex_oracle(savings: &[f64], sizes: &[f64], cap: f64) -> f64 {
        let k = savings.len();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << k) {
            let used: f64 = (0..k).filter(|&s| mask >> s & 1 == 1).map(|s| sizes[s]).sum();
            if used > cap + 1e-12 {
                continue;
            }
            let gain: f64 = (0..k).filter(|&s| mask >> s & 1 == 1).map(|s| savings[s]).sum();
            best = best.max(gain);
            for f in (0..k).filter(|&s| mask >> s & 1 == 0) {
                let frac = ((cap - used) / sizes[f]).min(1.0);
                best = best.max(gain + frac * savings[f]);
            }
        }
        best
    }

    fn knapsack_instance(sizes: &[f64], cap: f64) -> (Instance, DecisionState, BlockedSets) {
        let inst = fixtures::pair_with_services(sizes, cap);
        let mut st = DecisionState::zeros(&inst);
        for s in 0..sizes.len() {
            st.set_y(1, s, 1.0);
        }
        let b = BlockedSets::build(&inst, &st, PlacementMode::Joint).unwrap();
        (inst, st, b)
    }

    #[test]
    fn knapsack_fills_by_ratio() {
        let sizes = [10.0, 20.0, 30.0];
        let (inst, _, b) = knapsack_instance(&sizes, 30.0);
        let mut g = bundle(&inst);
        let nl = inst.num_links();
        let l01 = inst.network.link_id(0, 1).unwrap();
        for (s, per_unit) in [0.05, 0.03, 0.01].iter().enumerate() {
            g.dphi[s * nl + l01] = per_unit * sizes[s];
        }
        let d = fw_direction_joint(&inst, &g, &b);
        assert_eq!(&d.y[..3], &[1.0, 1.0, 0.0]);
        assert_eq!(d.phi[2 * nl + l01], 1.0);
    }

    #[test]
    fn zero_storage_reduces_to_fixed() {
        let (inst, st, b) = knapsack_instance(&[10.0], 0.0);
        let mut g = bundle(&inst);
        g.dphi[inst.network.link_id(0, 1).unwrap()] = 1.0;
        let d = fw_direction_joint(&inst, &g, &b);
        assert_eq!(d.y[0], 0.0);
        let f = fw_direction_fixed(&inst, &g, &b, &st);
        assert_eq!(d.phi, f.phi);
    }

    #[test]
    fn dominant_saving_hosts_fully() {
        let (inst, _, b) = knapsack_instance(&[10.0], 20.0);
        let mut g = bundle(&inst);
        let l01 = inst.network.link_id(0, 1).unwrap();
        g.dphi[l01] = 1.0;
        g.dy[0] = 0.1;
        let d = fw_direction_joint(&inst, &g, &b);
        assert_eq!(d.y[0], 1.0);
        assert_eq!(d.phi[l01], 0.0);
    }

    proptest::proptest! {
        #[test]
        fn knapsack_matches_vertex_enumeration(
            sizes in proptest::collection::vec(1.0f64..30.0, 1..=4),
            raw in proptest::collection::vec(-1.0f64..1.0, 4),
            cap in 0.0f64..60.0,
        ) {
            let k = sizes.len();
            let (inst, _, b) = knapsack_instance(&sizes, cap);
            let mut g = bundle(&inst);
            let nl = inst.num_links();
            let l01 = inst.network.link_id(0, 1).unwrap();
            let savings: Vec<f64> = raw[..k].to_vec();
            for s in 0..k {
                g.dphi[s * nl + l01] = 1.0;
                g.dy[s] = 1.0 - savings[s];
            }
            let d = fw_direction_joint(&inst, &g, &b);
            let gain: f64 = (0..k).map(|s| d.y[s] * savings[s]).sum();
            let used: f64 = (0..k).map(|s| d.y[s] * sizes[s]).sum();
            proptest::prop_assert!(used <= cap + 1e-9);
            for s in 0..k {
                proptest::prop_assert!((d.y[s] + d.phi[s * nl + l01] - 1.0).abs() < 1e-12);
            }
            let oracle = vertex_oracle(&savings, &sizes, cap);
            proptest::prop_assert!((gain - oracle).abs() < 1e-9, "gain {} oracle {}", gain, oracle);
        }
    }

    #[test]
    fn zero_step_keeps_state() {
        let inst = fixtures::grid(3, 2);
        let init = crate::model::random_feasible_state(&inst, 3, PlacementMode::Fixed).unwrap();
        let cfg = LfwConfig {
            mode: PlacementMode::Fixed,
            schedule: StepSchedule::Constant { alpha: 0.0 },
            max_iter: 5,
            ..Default::default()
        };
        let out = lfw_run(&inst, &init, &cfg).unwrap();
        assert_eq!(out.state, init);
        let j0 = out.trajectory[0].j;
        assert!(out.trajectory.iter().all(|r| r.j == j0));
    }

    #[test]
    fn unique_feasible_point_does_not_move() {
        let inst = fixtures::line(3, 1, 10.0);
        let mut st = DecisionState::zeros(&inst);
        st.set_y(2, 0, 1.0);
        st.set_phi(0, inst.network.link_id(0, 1).unwrap(), 1.0);
        st.set_phi(0, inst.network.link_id(1, 2).unwrap(), 1.0);
        for i in 0..3 {
            st.set_s(i, 0, 1.0);
        }
        let cfg = LfwConfig {
            mode: PlacementMode::Fixed,
            max_iter: 10,
            ..Default::default()
        };
        let out = lfw_run(&inst, &st, &cfg).unwrap();
        assert_eq!(out.state, st);
    }

    #[test]
    fn iterates_stay_feasible() {
        let inst = fixtures::grid(3, 3);
        for mode in [PlacementMode::Fixed, PlacementMode::Joint] {
            let init = crate::model::random_feasible_state(&inst, 11, mode).unwrap();
            let cfg = LfwConfig {
                mode,
                max_iter: 40,
                check_feasible: true,
                ..Default::default()
            };
            let out = lfw_run(&inst, &init, &cfg).unwrap();
            assert!(validate(&inst, &out.state, mode).is_feasible());
        }
    }

    #[test]
    fn repair_moves_selection_to_local() {
        let inst = fixtures::grid(3, 2);
        let init = crate::model::random_feasible_state(&inst, 5, PlacementMode::Fixed).unwrap();
        let mut hosts = vec![vec![false; 9]; inst.num_services()];
        hosts[0][4] = true;
        let st = repair(&inst, &init, &hosts).unwrap();
        assert!(validate(&inst, &st, PlacementMode::Fixed).is_feasible());
        assert_eq!(st.s(0, inst.catalog.slot_of_service(1)), 0.0);
    }

    #[test]
    fn greedy_prefers_popular_service() {
        let inst = fixtures::pair_with_services(&[10.0, 10.0], 10.0);
        let t = vec![5.0, 1.0, 0.0, 0.0];
        let hosts = greedy_hosts(&inst, &t);
        assert!(hosts[0][0] && !hosts[1][0]);
    }
}
