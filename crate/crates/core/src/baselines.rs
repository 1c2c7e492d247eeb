//! The proposed method and the comparison schemes, all evaluated by the
//! same flow engine.

use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions, TunnelPayload};
use crate::grad::{self, GradientBundle, KktResidual};
use crate::lfw::{self, apply_step, fw_direction_joint, BlockedSets, GradSource, LfwConfig, LfwOutcome, TrajectoryRow};
use crate::model::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "dmp-lfw-p")]
    DmpLfwP,
    #[serde(rename = "lfw-greedy")]
    LfwGreedy,
    #[serde(rename = "static-lfw")]
    StaticLfw,
    #[serde(rename = "lpr")]
    Lpr,
    #[serde(rename = "maxtp")]
    MaxTp,
    /// Model migration instead of tunneling; not comparable across scenarios.
    #[serde(rename = "sm")]
    Sm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::DmpLfwP,
        Algorithm::LfwGreedy,
        Algorithm::StaticLfw,
        Algorithm::Lpr,
        Algorithm::MaxTp,
        Algorithm::Sm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DmpLfwP => "dmp-lfw-p",
            Algorithm::LfwGreedy => "lfw-greedy",
            Algorithm::StaticLfw => "static-lfw",
            Algorithm::Lpr => "lpr",
            Algorithm::MaxTp => "maxtp",
            Algorithm::Sm => "sm",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// Joint-mode random start shared by every algorithm for one seed: one
/// random host per service (where it fits), random fractional placement,
/// selection and routing elsewhere.
pub fn common_initial_state(inst: &Instance, seed: u64) -> Result<DecisionState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = inst.num_nodes();
    let nsv = inst.num_services();
    let mut remaining = inst.network.storage_capacity.clone();
    let mut hosts = vec![vec![false; n]; nsv];
    let mut order: Vec<usize> = (0..nsv).collect();
    order.shuffle(&mut rng);
    for s in order {
        let size = inst.catalog.service(s).model_size;
        let fits: Vec<usize> = (0..n).filter(|&i| remaining[i] + 1e-12 >= size).collect();
        if let Some(&i) = fits.choose(&mut rng) {
            hosts[s][i] = true;
            remaining[i] -= size;
        }
    }
    state_from_hosts(inst, &hosts, PlacementMode::Joint, &mut rng)
}

/// Binary placement chosen greedily from the traffic seen at `state`.
pub fn greedy_placement(inst: &Instance, state: &DecisionState, opts: &FlowOptions) -> Result<DecisionState> {
    let fs = flow::solve_flow_fixed_point(inst, state, opts)?;
    let hosts = lfw::greedy_hosts(inst, &fs.traffic.t);
    lfw::repair(inst, state, &hosts)
}

/// Runs `alg` from `init`. `base` supplies the iteration budget, step
/// schedule, flow options and the gradient source of the proposed method.
pub fn run_algorithm(inst: &Instance, alg: Algorithm, init: &DecisionState, base: &LfwConfig) -> Result<LfwOutcome> {
    match alg {
        Algorithm::DmpLfwP => lfw::lfw_run(inst, init, &LfwConfig { mode: PlacementMode::Joint, ..base.clone() }),
        Algorithm::LfwGreedy => {
            let start = greedy_placement(inst, init, &base.flow)?;
            let cfg = LfwConfig {
                mode: PlacementMode::Fixed,
                greedy_every: Some(50),
                ..base.clone()
            };
            lfw::lfw_run(inst, &start, &cfg)
        }
        Algorithm::StaticLfw => {
            let cfg = LfwConfig {
                mode: PlacementMode::Joint,
                grad_source: GradSource::Static,
                ..base.clone()
            };
            lfw::lfw_run(inst, init, &cfg)
        }
        Algorithm::Sm => {
            let cfg = LfwConfig {
                mode: PlacementMode::Joint,
                grad_source: GradSource::Static,
                flow: FlowOptions {
                    payload: migration_payload(inst),
                    ..base.flow.clone()
                },
                ..base.clone()
            };
            lfw::lfw_run(inst, init, &cfg)
        }
        Algorithm::Lpr => {
            let placed = greedy_placement(inst, init, &base.flow)?;
            let state = run_lpr(inst, &placed)?;
            single_row_outcome(inst, state, base, PlacementMode::Fixed)
        }
        Algorithm::MaxTp => run_maxtp(inst, init, base),
    }
}

fn single_row_outcome(inst: &Instance, state: DecisionState, base: &LfwConfig, mode: PlacementMode) -> Result<LfwOutcome> {
    let start = Instant::now();
    let blocked = BlockedSets::build(inst, &state, mode)?;
    let (fs, obj) = flow::objective(inst, &state, &base.flow)?;
    let grads = grad::gradients(inst, &state, &fs)?;
    let kkt = grad::kkt_residual(inst, &state, &grads, &blocked, mode);
    let row = trajectory_row(0, obj, &kkt, &grads, base.record_time.then(|| start.elapsed().as_secs_f64() * 1e3));
    Ok(LfwOutcome {
        state,
        trajectory: vec![row],
        kkt,
        converged: false,
        aborted: None,
        overhead: None,
    })
}

fn trajectory_row(iter: usize, obj: flow::Objective, kkt: &KktResidual, grads: &GradientBundle, wall_ms: Option<f64>) -> TrajectoryRow {
    TrajectoryRow {
        iter,
        j: obj.j,
        q: obj.q,
        res_s: kkt.res_s,
        res_phi: kkt.res_phi,
        res_y: kkt.res_y,
        max_gain: grads.b.iter().copied().fold(0.0, f64::max),
        msgs_per_node: 0.0,
        flops_per_node: 0.0,
        wall_ms: wall_ms.unwrap_or(0.0),
    }
}

/// Links whose endpoints share a layer: the annotation if present, else
/// hop distance from node 0.
pub fn same_layer_links(net: &NetworkModel) -> Vec<bool> {
    let layer = net.layer.clone().unwrap_or_else(|| net.layers(0));
    net.links().iter().map(|l| layer[l.src] == layer[l.dst]).collect()
}

pub fn migration_payload(inst: &Instance) -> TunnelPayload {
    TunnelPayload::Migration {
        same_layer: same_layer_links(&inst.network),
    }
}

/// Per-unit delays at zero load.
fn idle_delays(inst: &Instance) -> (Vec<f64>, Vec<f64>) {
    let net = &inst.network;
    let d = net
        .link_capacity
        .iter()
        .map(|&mu| inst.cost.link.delay(0.0, mu).unwrap())
        .collect();
    let c = net
        .node_capacity
        .iter()
        .map(|&nu| inst.cost.node.delay(0.0, nu).unwrap())
        .collect();
    (d, c)
}

/// Shortest constant-cost round trip from every node to a host of `svc`
/// over the allowed edges, with the chosen next hop.
fn idle_round_trips(inst: &Instance, state: &DecisionState, blocked: &BlockedSets, svc: usize, d: &[f64], c: &[f64]) -> (Vec<f64>, Vec<Option<usize>>) {
    let net = &inst.network;
    let s = inst.catalog.service(svc);
    let n = net.num_nodes();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| blocked.rank(svc, i));
    let mut dist = vec![f64::INFINITY; n];
    let mut next = vec![None; n];
    for i in order {
        if state.y(i, svc) >= 0.5 {
            dist[i] = s.workload * c[i];
            continue;
        }
        for l in blocked.allowed_out(inst, svc, i) {
            let j = net.link(l).dst;
            let cost = s.req_size * d[l] + s.res_size * d[net.reverse(l)] + dist[j];
            if cost < dist[i] {
                dist[i] = cost;
                next[i] = Some(l);
            }
        }
    }
    (dist, next)
}

/// Constant-cost selection and routing on the placement of `placed`:
/// per node and task the cheapest model by idle round trip minus utility,
/// routed along its idle shortest path.
pub fn run_lpr(inst: &Instance, placed: &DecisionState) -> Result<DecisionState> {
    let net = &inst.network;
    let cat = &inst.catalog;
    let nsv = inst.num_services();
    let n = net.num_nodes();
    let blocked = BlockedSets::build(inst, placed, PlacementMode::Fixed)?;
    let (d, c) = idle_delays(inst);
    let mut out = DecisionState::zeros(inst);
    out.y = placed.y.iter().map(|&y| if y >= 0.5 { 1.0 } else { 0.0 }).collect();
    let mut rtt = vec![f64::INFINITY; n * nsv];
    for svc in (0..nsv).filter(|&s| blocked.deployed(s)) {
        let (dist, next) = idle_round_trips(inst, &out, &blocked, svc, &d, &c);
        for i in 0..n {
            rtt[i * nsv + svc] = dist[i];
            if let Some(l) = next[i] {
                out.set_phi(svc, l, 1.0);
            } else if out.y(i, svc) < 0.5 {
                return Err(Error::UnreachableHost { node: i, service: svc });
            }
        }
    }
    for i in 0..n {
        for k in 0..cat.num_tasks() {
            let mut best: Option<(f64, usize)> = None;
            for sl in cat.task_slots(k) {
                let cost = match cat.slot(sl) {
                    Slot::Local { task } => cat.local(task).map(|m| m.workload * net.local_delay),
                    Slot::Remote { service } if blocked.deployed(service) => Some(net.ap_delay + rtt[i * nsv + service]),
                    Slot::Remote { .. } => None,
                };
                if let Some(cost) = cost.map(|x| x - cat.eta * cat.slot_utility(sl)) {
                    if best.is_none_or(|(b, _)| cost < b) {
                        best = Some((cost, sl));
                    }
                }
            }
            let Some((_, sl)) = best else {
                return Err(Error::NoFeasiblePlacement(format!("task {k} has no local model and no deployed service")));
            };
            out.set_s(i, sl, 1.0);
        }
    }
    Ok(out)
}

/// Queue proxies in gradient layout: `F_l / mu_l` on every routing entry
/// and `G_i / nu_i` on every placement entry.
fn queue_proxy(inst: &Instance, fs: &flow::FlowState) -> GradientBundle {
    let net = &inst.network;
    let nsv = inst.num_services();
    let nl = net.num_links();
    let n = net.num_nodes();
    let rho: Vec<f64> = (0..nl).map(|l| fs.f_total[l] / net.link_capacity[l]).collect();
    let mut dphi = vec![0.0; nsv * nl];
    for svc in 0..nsv {
        dphi[svc * nl..(svc + 1) * nl].copy_from_slice(&rho);
    }
    let mut dy = vec![0.0; n * nsv];
    for i in 0..n {
        let h = fs.workload[i] / net.node_capacity[i];
        dy[i * nsv..(i + 1) * nsv].iter_mut().for_each(|x| *x = h);
    }
    GradientBundle {
        ds: vec![0.0; n * inst.catalog.num_slots()],
        dphi,
        dy,
        delta: Vec::new(),
        tau: Vec::new(),
        b: Vec::new(),
        big_m: Vec::new(),
        m_small: Vec::new(),
        dj_dfo: Vec::new(),
        xi: Vec::new(),
    }
}

/// Flow-level backpressure: each node moves routing (and hosting) mass
/// toward its least-loaded option. Selection stays at `init`.
pub fn run_maxtp(inst: &Instance, init: &DecisionState, cfg: &LfwConfig) -> Result<LfwOutcome> {
    let mode = PlacementMode::Joint;
    let blocked = BlockedSets::build(inst, init, mode)?;
    let mut state = init.clone();
    let mut trajectory = Vec::with_capacity(cfg.max_iter + 1);
    let mut kkt = KktResidual::default();
    let mut aborted = None;
    let start = Instant::now();
    for n in 0..=cfg.max_iter {
        let step = flow::solve_flow_fixed_point(inst, &state, &cfg.flow).and_then(|fs| {
            let grads = grad::gradients(inst, &state, &fs)?;
            Ok((fs, grads))
        });
        let (fs, grads) = match step {
            Ok(x) => x,
            Err(e) if n == 0 => return Err(e),
            Err(e) => {
                aborted = Some(e);
                break;
            }
        };
        let obj = flow::evaluate_objective(inst, &state, &fs);
        kkt = grad::kkt_residual(inst, &state, &grads, &blocked, mode);
        trajectory.push(trajectory_row(n, obj, &kkt, &grads, cfg.record_time.then(|| start.elapsed().as_secs_f64() * 1e3)));
        if n == cfg.max_iter {
            break;
        }
        let mut dir = fw_direction_joint(inst, &queue_proxy(inst, &fs), &blocked);
        dir.s = state.s.clone();
        apply_step(inst, &mut state, &dir, cfg.schedule.alpha(n), &blocked);
    }
    Ok(LfwOutcome {
        state,
        trajectory,
        kkt,
        converged: false,
        aborted,
        overhead: None,
    })
}

/// Minimum `J` over every deterministic selection and routing on the
/// allowed edges of `placed`'s fixed placement.
///
/// Requires load-independent delays and no mobility; then each node's
/// round trip is independent of selection, so the best model per node and
/// task is picked after the routing is fixed.
pub fn enumerate_deterministic(inst: &Instance, placed: &DecisionState) -> Result<(f64, DecisionState)> {
    if inst.cost.link != DelayFamily::Constant || inst.cost.node != DelayFamily::Constant || !inst.mobility.is_static() {
        return Err(Error::Config("enumeration needs constant delays and static users".into()));
    }
    let net = &inst.network;
    let cat = &inst.catalog;
    let n = net.num_nodes();
    let nsv = inst.num_services();
    let ns = cat.num_slots();
    let blocked = BlockedSets::build(inst, placed, PlacementMode::Fixed)?;
    let mut base = DecisionState::zeros(inst);
    base.y = placed.y.iter().map(|&y| if y >= 0.5 { 1.0 } else { 0.0 }).collect();
    for i in 0..n {
        for k in 0..cat.num_tasks() {
            let sl = cat.task_slots(k).start;
            base.set_s(i, sl, 1.0);
        }
    }
    // one routing choice per (service, non-host node)
    let mut choices: Vec<(usize, Vec<usize>)> = Vec::new();
    for svc in (0..nsv).filter(|&s| blocked.deployed(s)) {
        for i in (0..n).filter(|&i| base.y(i, svc) < 0.5) {
            choices.push((svc, blocked.allowed_out(inst, svc, i).collect()));
        }
    }
    if let Some((svc, _)) = choices.iter().find(|(_, c)| c.is_empty()) {
        return Err(Error::UnreachableHost { node: 0, service: *svc });
    }
    let opts = FlowOptions::default();
    let mut pick = vec![0usize; choices.len()];
    let mut best: Option<(f64, DecisionState)> = None;
    loop {
        let mut st = base.clone();
        for (c, &(svc, ref links)) in choices.iter().enumerate() {
            st.set_phi(svc, links[pick[c]], 1.0);
        }
        let fs = flow::solve_flow_fixed_point(inst, &st, &opts)?;
        st.s = vec![0.0; n * ns];
        let mut j = 0.0;
        for i in 0..n {
            for k in 0..cat.num_tasks() {
                let mut bk: Option<(f64, usize)> = None;
                for sl in cat.task_slots(k) {
                    let lat = match cat.slot(sl) {
                        Slot::Local { task } if cat.local(task).is_some() => flow::local_latency(inst, task),
                        Slot::Remote { service } if blocked.deployed(service) => fs.d_total[i * nsv + service],
                        _ => continue,
                    };
                    let cost = lat - cat.eta * cat.slot_utility(sl);
                    if bk.is_none_or(|(b, _)| cost < b) {
                        bk = Some((cost, sl));
                    }
                }
                let (cost, sl) = bk.ok_or_else(|| Error::NoFeasiblePlacement(format!("task {k}")))?;
                j += inst.profile.rate(i, k) * cost;
                st.set_s(i, sl, 1.0);
            }
        }
        if best.as_ref().is_none_or(|(b, _)| j < *b) {
            best = Some((j, st));
        }
        // odometer increment
        let mut c = 0;
        while c < pick.len() {
            pick[c] += 1;
            if pick[c] < choices[c].1.len() {
                break;
            }
            pick[c] = 0;
            c += 1;
        }
        if c == pick.len() {
            break;
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lfw::StepSchedule;
    use crate::scenarios::{generate, ScenarioSpec};

    fn budget(iters: usize) -> LfwConfig {
        LfwConfig {
            max_iter: iters,
            ..Default::default()
        }
    }

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("nope".parse::<Algorithm>().is_err());
    }

    #[test]
    fn greedy_hosts_popular_service() {
        let inst = fixtures::pair_with_services(&[10.0, 10.0], 10.0);
        let t = vec![5.0, 1.0, 0.0, 0.0];
        let hosts = lfw::greedy_hosts(&inst, &t);
        assert!(hosts[0][0]);
        assert!(!hosts[1][0]);
    }

    #[test]
    fn greedy_with_room_hosts_everything_seen() {
        let inst = fixtures::pair_with_services(&[1.0, 1.0], 10.0);
        let hosts = lfw::greedy_hosts(&inst, &[1.0, 2.0, 3.0, 4.0]);
        assert!(hosts.iter().all(|h| h.iter().all(|&x| x)));
    }

    #[test]
    fn every_output_is_feasible() {
        let inst = generate(&ScenarioSpec::preset("grid").unwrap()).unwrap();
        let init = common_initial_state(&inst, 3).unwrap();
        for alg in Algorithm::ALL {
            let out = run_algorithm(&inst, alg, &init, &budget(20)).unwrap();
            let mode = if matches!(alg, Algorithm::LfwGreedy | Algorithm::Lpr) {
                PlacementMode::Fixed
            } else {
                PlacementMode::Joint
            };
            let rep = validate(&inst, &out.state, mode);
            assert!(rep.is_feasible(), "{alg}: {:?}", rep.violations.first());
            assert!(out.final_j().is_finite(), "{alg}");
        }
    }

    #[test]
    fn static_lfw_equals_proposed_without_mobility() {
        let inst = fixtures::grid(3, 2).with_mobility_total(0.0);
        let init = common_initial_state(&inst, 1).unwrap();
        let a = run_algorithm(&inst, Algorithm::DmpLfwP, &init, &budget(30)).unwrap();
        let b = run_algorithm(&inst, Algorithm::StaticLfw, &init, &budget(30)).unwrap();
        for (ra, rb) in a.trajectory.iter().zip(&b.trajectory) {
            assert!((ra.j - rb.j).abs() <= 1e-12 * (1.0 + ra.j.abs()));
        }
    }

    #[test]
    fn static_gradient_differs_by_mobility_correction() {
        let inst = fixtures::grid(3, 2);
        let st = random_feasible_state(&inst, 2, PlacementMode::Joint).unwrap();
        let fs = flow::solve_flow_fixed_point(&inst, &st, &FlowOptions::default()).unwrap();
        let exact = grad::gradients(&inst, &st, &fs).unwrap();
        let stat = grad::static_gradients(&inst, &st, &fs);
        assert!(exact.max_abs_diff(&stat) > 1e-6);
        let still = inst.with_mobility_total(0.0);
        let fs0 = flow::solve_flow_fixed_point(&still, &st, &FlowOptions::default()).unwrap();
        let e0 = grad::gradients(&still, &st, &fs0).unwrap();
        assert!(e0.max_abs_diff(&grad::static_gradients(&still, &st, &fs0)) < 1e-12);
    }

    #[test]
    fn lpr_uses_shortest_round_trips() {
        // line 0-1-2 with the only host at 2, equal models
        let inst = fixtures::line(3, 1, 10.0);
        let mut placed = DecisionState::zeros(&inst);
        placed.set_y(2, 0, 1.0);
        let st = run_lpr(&inst, &placed).unwrap();
        let net = &inst.network;
        assert_eq!(st.phi(0, net.link_id(0, 1).unwrap()), 1.0);
        assert_eq!(st.phi(0, net.link_id(1, 2).unwrap()), 1.0);
        assert!(validate(&inst, &st, PlacementMode::Fixed).is_feasible());
    }

    #[test]
    fn lpr_picks_cheaper_of_two_hosts() {
        // line 0-1-2-3-4, hosts at 0 and 4: node 1 goes left, node 3 right
        let inst = fixtures::line(5, 1, 10.0);
        let mut placed = DecisionState::zeros(&inst);
        placed.set_y(0, 0, 1.0);
        placed.set_y(4, 0, 1.0);
        let st = run_lpr(&inst, &placed).unwrap();
        let net = &inst.network;
        assert_eq!(st.phi(0, net.link_id(1, 0).unwrap()), 1.0);
        assert_eq!(st.phi(0, net.link_id(3, 4).unwrap()), 1.0);
    }

    #[test]
    fn maxtp_single_path_is_noop() {
        let inst = fixtures::line(3, 1, 10.0);
        let mut inst = inst;
        inst.network.storage_capacity = vec![0.0, 0.0, 100.0];
        let mut init = DecisionState::zeros(&inst);
        init.set_y(2, 0, 1.0);
        init.set_phi(0, inst.network.link_id(0, 1).unwrap(), 1.0);
        init.set_phi(0, inst.network.link_id(1, 2).unwrap(), 1.0);
        for i in 0..3 {
            init.set_s(i, 0, 1.0);
        }
        let out = run_maxtp(&inst, &init, &budget(10)).unwrap();
        assert!(out.state.phi.iter().zip(&init.phi).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(out.trajectory.windows(2).all(|w| w[0].j == w[1].j));
    }

    #[test]
    fn maxtp_splits_symmetric_paths() {
        let mut inst = fixtures::diamond(10.0);
        inst.network.storage_capacity = vec![0.0, 0.0, 0.0, 10.0];
        let mut init = DecisionState::zeros(&inst);
        let net = &inst.network;
        init.set_y(3, 0, 1.0);
        init.set_phi(0, net.link_id(0, 1).unwrap(), 1.0);
        init.set_phi(0, net.link_id(1, 3).unwrap(), 1.0);
        init.set_phi(0, net.link_id(2, 3).unwrap(), 1.0);
        for i in 0..4 {
            init.set_s(i, 0, 1.0);
        }
        let cfg = LfwConfig {
            max_iter: 400,
            schedule: StepSchedule::Diminishing { a: 1.0, b: 2.0 },
            ..Default::default()
        };
        let out = run_maxtp(&inst, &init, &cfg).unwrap();
        let a = out.state.phi(0, net.link_id(0, 1).unwrap());
        let b = out.state.phi(0, net.link_id(0, 2).unwrap());
        assert!((a - 0.5).abs() < 0.02 && (b - 0.5).abs() < 0.02, "{a} {b}");
    }

    #[test]
    fn migration_without_mobility_is_static() {
        let inst = generate(&ScenarioSpec::preset("mec").unwrap()).unwrap().with_mobility_total(0.0);
        let st = common_initial_state(&inst, 4).unwrap();
        let opts = FlowOptions {
            payload: migration_payload(&inst),
            ..Default::default()
        };
        let (fm, om) = flow::objective(&inst, &st, &opts).unwrap();
        let (_, os) = flow::objective(&inst, &st, &FlowOptions::default()).unwrap();
        assert!(fm.f_tun.iter().all(|&x| x == 0.0));
        assert!((om.j - os.j).abs() < 1e-12);
    }

    #[test]
    fn migration_flow_on_tree() {
        let inst = generate(&ScenarioSpec::preset("mec").unwrap()).unwrap();
        let st = common_initial_state(&inst, 5).unwrap();
        let same = same_layer_links(&inst.network);
        assert!(same.iter().filter(|&&x| x).count() == 2 * (3 - 1 + 9 - 3));
        let opts = FlowOptions {
            payload: migration_payload(&inst),
            ..Default::default()
        };
        let fs = flow::solve_flow_fixed_point(&inst, &st, &opts).unwrap();
        let nsv = inst.num_services();
        for l in 0..inst.num_links() {
            let i = inst.network.link(l).src;
            let mut expect = 0.0;
            for svc in 0..nsv {
                let s = inst.catalog.service(svc);
                let rate = inst.profile.rate(i, s.task) * st.s(i, inst.catalog.slot_of_service(svc));
                let size = if same[l] { s.model_size } else { s.res_size };
                let p = inst.mobility.q(l) * (1.0 - (-inst.mobility.total(i) * fs.d_static[i * nsv + svc]).exp());
                expect += size * rate * p;
            }
            assert!((fs.f_tun[l] - expect).abs() <= 1e-9 * (1.0 + expect), "link {l}");
        }
        // migration moves more than tunneling whenever L_mod > L_res
        let tun = flow::solve_flow_fixed_point(&inst, &st, &FlowOptions::default()).unwrap();
        let (m, t): (f64, f64) = (0..inst.num_links())
            .filter(|&l| same[l])
            .map(|l| (fs.f_tun[l], tun.f_tun[l]))
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        assert!(m > t);
    }

    #[test]
    fn lpr_is_exact_for_constant_costs() {
        for seed in 0..10 {
            let (inst, st) = fixtures::tiny_constant(seed);
            let (best, _) = enumerate_deterministic(&inst, &st).unwrap();
            let lpr = run_lpr(&inst, &st).unwrap();
            let (_, obj) = flow::objective(&inst, &lpr, &FlowOptions::default()).unwrap();
            assert!((obj.j - best).abs() < 1e-12, "seed {seed}: {} vs {best}", obj.j);
        }
    }

    #[test]
    fn enumeration_rejects_congestion() {
        let inst = fixtures::grid(2, 1);
        let st = random_feasible_state(&inst, 0, PlacementMode::Fixed).unwrap();
        assert!(matches!(enumerate_deterministic(&inst, &st), Err(Error::Config(_))));
    }
}
