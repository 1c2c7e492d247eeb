//! Steady-state traffic, flows, delays, latencies and tunneling.
//!
//! Node-service arrays are laid out `i * n_services + svc`; service-link
//! arrays `svc * n_links + link`.

use crate::error::{Error, Result};
use crate::model::{support_order, DecisionState, Instance, Slot};

/// Request rates per node and service.
#[derive(Debug, Clone)]
pub struct Traffic {
    /// Total received rate `t_i`.
    pub t: Vec<f64>,
    /// Endogenous part of `t_i` (forwarded in by neighbors).
    pub t_tilde: Vec<f64>,
    /// Per-link service rate `f_ij = phi_ij * t_i`.
    pub f: Vec<f64>,
    /// Topological order of each service's routing support.
    pub orders: Vec<Vec<usize>>,
}

/// Payload carried by the extra hop after a user has moved.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum TunnelPayload {
    /// The anchor forwards the result (`L_res` per request).
    #[default]
    Result,
    /// Whole models migrate across same-layer links (`L_mod` per request);
    /// other links still tunnel results.
    Migration { same_layer: Vec<bool> },
}

impl TunnelPayload {
    #[inline]
    pub fn size(&self, inst: &Instance, svc: usize, link: usize) -> f64 {
        let s = inst.catalog.service(svc);
        match self {
            TunnelPayload::Result => s.res_size,
            TunnelPayload::Migration { same_layer } if same_layer[link] => s.model_size,
            TunnelPayload::Migration { .. } => s.res_size,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowOptions {
    /// Absolute tolerance on the max tunneling-flow change.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra exogenous flow per link, added before delays are evaluated.
    pub injection: Option<Vec<f64>>,
    pub payload: TunnelPayload,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            tol: 1e-10,
            max_iter: 1000,
            injection: None,
            payload: TunnelPayload::Result,
        }
    }
}

impl FlowOptions {
    pub fn with_tol(tol: f64) -> Self {
        FlowOptions {
            tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub n_services: usize,
    pub n_links: usize,
    pub traffic: Traffic,
    pub f_static: Vec<f64>,
    pub f_tun: Vec<f64>,
    pub f_total: Vec<f64>,
    /// Node workload `G_i`.
    pub workload: Vec<f64>,
    pub link_delay: Vec<f64>,
    pub node_delay: Vec<f64>,
    /// Residual round trip from a node to completion, excluding `d_AP`.
    pub rtt_tail: Vec<f64>,
    /// Static round-trip latency `D^o`.
    pub d_static: Vec<f64>,
    /// Tunneling probability per service and origin out-link.
    pub p: Vec<f64>,
    /// Expected end-to-end latency `D`.
    pub d_total: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub payload: TunnelPayload,
}

impl FlowState {
    #[inline]
    pub fn ns(&self, i: usize, svc: usize) -> usize {
        i * self.n_services + svc
    }
    #[inline]
    pub fn t(&self, i: usize, svc: usize) -> f64 {
        self.traffic.t[self.ns(i, svc)]
    }
    #[inline]
    pub fn d_o(&self, i: usize, svc: usize) -> f64 {
        self.d_static[self.ns(i, svc)]
    }
    #[inline]
    pub fn p(&self, svc: usize, link: usize) -> f64 {
        self.p[svc * self.n_links + link]
    }
}

/// `t_i = r_i s_i + sum_j f_ji`, processed in topological order.
pub fn compute_traffic(inst: &Instance, state: &DecisionState) -> Result<Traffic> {
    let net = &inst.network;
    let n = net.num_nodes();
    let nsv = inst.num_services();
    let nl = net.num_links();
    let mut t = vec![0.0; n * nsv];
    let mut t_tilde = vec![0.0; n * nsv];
    let mut f = vec![0.0; nsv * nl];
    let mut orders = Vec::with_capacity(nsv);
    for svc in 0..nsv {
        let order = support_order(net, state, svc).ok_or(Error::LoopDetected { service: svc })?;
        let slot = inst.catalog.slot_of_service(svc);
        let task = inst.catalog.service(svc).task;
        for &i in &order {
            let idx = i * nsv + svc;
            let ti = inst.profile.rate(i, task) * state.s(i, slot) + t_tilde[idx];
            t[idx] = ti;
            for &l in net.out_links(i) {
                let phi = state.phi(svc, l);
                if phi != 0.0 {
                    let fl = phi * ti;
                    f[svc * nl + l] = fl;
                    t_tilde[net.link(l).dst * nsv + svc] += fl;
                }
            }
        }
        orders.push(order);
    }
    Ok(Traffic { t, t_tilde, f, orders })
}

/// `F_o(i,j) = sum (L_req f_ij + L_res f_ji)`.
pub fn compute_static_flows(inst: &Instance, f: &[f64]) -> Vec<f64> {
    let net = &inst.network;
    let nl = net.num_links();
    let mut fo = vec![0.0; nl];
    for (svc, s) in inst.catalog.services().iter().enumerate() {
        let row = &f[svc * nl..(svc + 1) * nl];
        for l in 0..nl {
            fo[l] += s.req_size * row[l] + s.res_size * row[net.reverse(l)];
        }
    }
    fo
}

/// `G_i = sum W y_i t_i`.
pub fn compute_workload(inst: &Instance, state: &DecisionState, t: &[f64]) -> Vec<f64> {
    let nsv = inst.num_services();
    (0..inst.num_nodes())
        .map(|i| {
            (0..nsv)
                .map(|svc| inst.catalog.service(svc).workload * state.y(i, svc) * t[i * nsv + svc])
                .sum()
        })
        .collect()
}

/// Residual round trip from each node by backward recursion:
/// `R_i = y_i W c_i + sum_j phi_ij (L_req d_ij + L_res d_ji + R_j)`.
pub fn compute_rtt_tail(
    inst: &Instance,
    state: &DecisionState,
    orders: &[Vec<usize>],
    link_delay: &[f64],
    node_delay: &[f64],
) -> Vec<f64> {
    let net = &inst.network;
    let nsv = inst.num_services();
    let mut tail = vec![0.0; net.num_nodes() * nsv];
    for (svc, order) in orders.iter().enumerate() {
        let s = inst.catalog.service(svc);
        for &i in order.iter().rev() {
            let mut r = state.y(i, svc) * s.workload * node_delay[i];
            for &l in net.out_links(i) {
                let phi = state.phi(svc, l);
                if phi != 0.0 {
                    let j = net.link(l).dst;
                    r += phi
                        * (s.req_size * link_delay[l]
                            + s.res_size * link_delay[net.reverse(l)]
                            + tail[j * nsv + svc]);
                }
            }
            tail[i * nsv + svc] = r;
        }
    }
    tail
}

/// Static round-trip latency: `d_AP` once at the origin plus the residual.
pub fn compute_static_rtt(
    inst: &Instance,
    state: &DecisionState,
    orders: &[Vec<usize>],
    link_delay: &[f64],
    node_delay: &[f64],
) -> Vec<f64> {
    let ap = inst.network.ap_delay;
    compute_rtt_tail(inst, state, orders, link_delay, node_delay)
        .into_iter()
        .map(|r| r + ap)
        .collect()
}

/// `p_ij = q_ij (1 - exp(-Lambda_i D^o_i))` and the flow it induces.
pub fn compute_tunneling(
    inst: &Instance,
    state: &DecisionState,
    d_static: &[f64],
    payload: &TunnelPayload,
) -> (Vec<f64>, Vec<f64>) {
    let net = &inst.network;
    let nsv = inst.num_services();
    let nl = net.num_links();
    let mob = &inst.mobility;
    let mut p = vec![0.0; nsv * nl];
    let mut f_tun = vec![0.0; nl];
    for i in 0..net.num_nodes() {
        let lam = mob.total(i);
        if lam == 0.0 {
            continue;
        }
        for svc in 0..nsv {
            let task = inst.catalog.service(svc).task;
            let slot = inst.catalog.slot_of_service(svc);
            let origin_rate = inst.profile.rate(i, task) * state.s(i, slot);
            let leave = 1.0 - (-lam * d_static[i * nsv + svc]).exp();
            for &l in net.out_links(i) {
                let pl = mob.q(l) * leave;
                p[svc * nl + l] = pl;
                f_tun[l] += payload.size(inst, svc, l) * origin_rate * pl;
            }
        }
    }
    (p, f_tun)
}

fn check_link_domain(inst: &Instance, f_total: &[f64]) -> Result<()> {
    if !inst.cost.link.has_capacity_limit() {
        return Ok(());
    }
    for (l, &x) in f_total.iter().enumerate() {
        let mu = inst.network.link_capacity[l];
        if x >= mu {
            let lk = inst.network.link(l);
            return Err(Error::InfeasibleLoad {
                location: format!("link ({},{})", lk.src, lk.dst),
                load: x,
                capacity: mu,
            });
        }
    }
    Ok(())
}

fn link_delays(inst: &Instance, f_total: &[f64]) -> Result<Vec<f64>> {
    check_link_domain(inst, f_total)?;
    Ok(f_total
        .iter()
        .enumerate()
        .map(|(l, &x)| inst.cost.link.delay(x, inst.network.link_capacity[l]).unwrap())
        .collect())
}

fn node_delays(inst: &Instance, workload: &[f64]) -> Result<Vec<f64>> {
    workload
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let nu = inst.network.node_capacity[i];
            inst.cost.node.delay(g, nu).ok_or_else(|| Error::InfeasibleLoad {
                location: format!("node {i}"),
                load: g,
                capacity: nu,
            })
        })
        .collect()
}

/// Resolves the coupling `F_tun -> d -> D^o -> p -> F_tun` by Picard
/// iteration, switching to half-step damping once the residual grows.
pub fn solve_flow_fixed_point(inst: &Instance, state: &DecisionState, opts: &FlowOptions) -> Result<FlowState> {
    let net = &inst.network;
    let nl = net.num_links();
    let nsv = inst.num_services();
    let traffic = compute_traffic(inst, state)?;
    let f_static = compute_static_flows(inst, &traffic.f);
    let workload = compute_workload(inst, state, &traffic.t);
    let node_delay = node_delays(inst, &workload)?;

    let base: Vec<f64> = match &opts.injection {
        Some(inj) => f_static.iter().zip(inj).map(|(a, b)| a + b).collect(),
        None => f_static.clone(),
    };

    let mut f_tun = vec![0.0; nl];
    let mut damping = 1.0;
    let mut prev_res = f64::INFINITY;
    let mut iterations = 0;
    let mut residual;
    loop {
        iterations += 1;
        let f_total: Vec<f64> = base.iter().zip(&f_tun).map(|(a, b)| a + b).collect();
        let d = link_delays(inst, &f_total)?;
        let d_o = compute_static_rtt(inst, state, &traffic.orders, &d, &node_delay);
        let (_, next) = compute_tunneling(inst, state, &d_o, &opts.payload);
        residual = next
            .iter()
            .zip(&f_tun)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual <= opts.tol {
            f_tun = next;
            break;
        }
        if residual > prev_res {
            damping = 0.5;
        }
        prev_res = residual;
        for (cur, nx) in f_tun.iter_mut().zip(&next) {
            *cur += damping * (nx - *cur);
        }
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergent { iterations, residual });
        }
    }

    // Final consistent pass: delays at the converged flow, then p and F_tun
    // from those delays so that F_tun is exactly the tunneling of p.
    let f_total: Vec<f64> = base.iter().zip(&f_tun).map(|(a, b)| a + b).collect();
    let link_delay = link_delays(inst, &f_total)?;
    let rtt_tail = compute_rtt_tail(inst, state, &traffic.orders, &link_delay, &node_delay);
    let d_static: Vec<f64> = rtt_tail.iter().map(|r| r + net.ap_delay).collect();
    let (p, f_tun) = compute_tunneling(inst, state, &d_static, &opts.payload);
    let f_total: Vec<f64> = base.iter().zip(&f_tun).map(|(a, b)| a + b).collect();

    let mut d_total = d_static.clone();
    for i in 0..net.num_nodes() {
        for svc in 0..nsv {
            let extra: f64 = net
                .out_links(i)
                .iter()
                .map(|&l| opts.payload.size(inst, svc, l) * p[svc * nl + l] * link_delay[l])
                .sum();
            d_total[i * nsv + svc] += extra;
        }
    }

    Ok(FlowState {
        n_services: nsv,
        n_links: nl,
        traffic,
        f_static,
        f_tun,
        f_total,
        workload,
        link_delay,
        node_delay,
        rtt_tail,
        d_static,
        p,
        d_total,
        iterations,
        residual,
        payload: opts.payload.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// Total cost to minimize.
    pub j: f64,
    /// Average utility minus latency per request.
    pub q: f64,
}

/// Latency of a local-model request.
#[inline]
pub fn local_latency(inst: &Instance, task: usize) -> f64 {
    inst.catalog.local(task).map_or(0.0, |l| l.workload * inst.network.local_delay)
}

pub fn evaluate_objective(inst: &Instance, state: &DecisionState, flow: &FlowState) -> Objective {
    let net = &inst.network;
    let cat = &inst.catalog;
    let nsv = inst.num_services();
    let mut j: f64 = flow.f_total.iter().zip(&flow.link_delay).map(|(f, d)| f * d).sum();
    j += flow.workload.iter().zip(&flow.node_delay).map(|(g, c)| g * c).sum::<f64>();
    let mut q_num = 0.0;
    for i in 0..net.num_nodes() {
        for slot in 0..cat.num_slots() {
            let task = cat.slot_task(slot);
            let rs = inst.profile.rate(i, task) * state.s(i, slot);
            if rs == 0.0 {
                continue;
            }
            let latency = match cat.slot(slot) {
                Slot::Local { task } => {
                    let lat = local_latency(inst, task);
                    j += rs * lat;
                    lat
                }
                Slot::Remote { service } => flow.d_total[i * nsv + service],
            };
            j -= cat.modified_utility(slot, net.ap_delay) * rs;
            q_num += rs * (cat.eta * cat.slot_utility(slot) - latency);
        }
    }
    let total = inst.profile.total();
    let q = if total > 0.0 { q_num / total } else { 0.0 };
    Objective { j, q }
}

/// Convenience: solve and evaluate.
pub fn objective(inst: &Instance, state: &DecisionState, opts: &FlowOptions) -> Result<(FlowState, Objective)> {
    let flow = solve_flow_fixed_point(inst, state, opts)?;
    let obj = evaluate_objective(inst, state, &flow);
    Ok((flow, obj))
}

/// Average utility and average latency per request.
pub fn qos_latency(inst: &Instance, state: &DecisionState, flow: &FlowState) -> (f64, f64) {
    let cat = &inst.catalog;
    let nsv = inst.num_services();
    let (mut qos, mut lat) = (0.0, 0.0);
    for i in 0..inst.num_nodes() {
        for slot in 0..cat.num_slots() {
            let rs = inst.profile.rate(i, cat.slot_task(slot)) * state.s(i, slot);
            qos += rs * cat.slot_utility(slot);
            lat += rs
                * match cat.slot(slot) {
                    Slot::Local { task } => local_latency(inst, task),
                    Slot::Remote { service } => flow.d_total[i * nsv + service],
                };
        }
    }
    let total = inst.profile.total();
    if total > 0.0 {
        (qos / total, lat / total)
    } else {
        (0.0, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{random_feasible_state, MobilityModel, NetworkModel, PlacementMode};
    use nalgebra::{DMatrix, DVector};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn two_node_traffic() {
        let inst = fixtures::two_node_line(0.0);
        let st = fixtures::two_node_state(&inst);
        let tr = compute_traffic(&inst, &st).unwrap();
        assert_eq!(tr.t, vec![1.0, 1.0]);
        assert_eq!(tr.f[inst.network.link_id(0, 1).unwrap()], 1.0);
    }

    #[test]
    fn diamond_traffic_splits_and_joins() {
        let inst = fixtures::diamond(10.0);
        let net = &inst.network;
        let mut st = DecisionState::zeros(&inst);
        st.set_s(0, 0, 1.0);
        st.set_y(3, 0, 1.0);
        for (a, b, p) in [(0, 1, 0.5), (0, 2, 0.5), (1, 3, 1.0), (2, 3, 1.0)] {
            st.set_phi(0, net.link_id(a, b).unwrap(), p);
        }
        let tr = compute_traffic(&inst, &st).unwrap();
        assert_eq!(tr.t[3], 1.0);
        assert_eq!(tr.f[net.link_id(1, 3).unwrap()], 0.5);
        assert_eq!(tr.f[net.link_id(2, 3).unwrap()], 0.5);
    }

    #[test]
    fn grid_traffic_solves_linear_system() {
        let inst = fixtures::grid(3, 2);
        let st = random_feasible_state(&inst, 7, PlacementMode::Fixed).unwrap();
        let tr = compute_traffic(&inst, &st).unwrap();
        let net = &inst.network;
        let n = net.num_nodes();
        let nsv = inst.num_services();
        for svc in 0..nsv {
            let mut a = DMatrix::<f64>::identity(n, n);
            for l in 0..net.num_links() {
                let lk = net.link(l);
                a[(lk.dst, lk.src)] -= st.phi(svc, l);
            }
            let task = inst.catalog.service(svc).task;
            let slot = inst.catalog.slot_of_service(svc);
            let rhs = DVector::from_fn(n, |i, _| inst.profile.rate(i, task) * st.s(i, slot));
            let t = a.lu().solve(&rhs).unwrap();
            for i in 0..n {
                close(tr.t[i * nsv + svc], t[i], 1e-12);
            }
        }
    }

    #[test]
    fn static_flow_uses_reverse_service_flow() {
        let inst = fixtures::two_node_line(0.0);
        let st = fixtures::two_node_state(&inst);
        let tr = compute_traffic(&inst, &st).unwrap();
        let fo = compute_static_flows(&inst, &tr.f);
        let net = &inst.network;
        assert_eq!(fo[net.link_id(0, 1).unwrap()], 0.25);
        assert_eq!(fo[net.link_id(1, 0).unwrap()], 0.75);
        assert!(compute_static_flows(&inst, &vec![0.0; tr.f.len()]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_node_round_trip_and_objective() {
        let inst = fixtures::two_node_line(0.0);
        let st = fixtures::two_node_state(&inst);
        let (fs, obj) = objective(&inst, &st, &FlowOptions::default()).unwrap();
        let net = &inst.network;
        close(fs.link_delay[net.link_id(0, 1).unwrap()], 0.1025641, 1e-7);
        close(fs.link_delay[net.link_id(1, 0).unwrap()], 0.1081081, 1e-7);
        close(fs.node_delay[1], 0.1111111, 1e-7);
        // size-weighted: 0.25 * 0.1025641 + 0.75 * 0.1081081 + 0.1111111
        close(fs.d_o(0, 0), 0.2178332, 1e-7);
        close(fs.d_o(1, 0), 0.1111111, 1e-7);
        close(obj.j, 0.1178332, 1e-7);
        close(obj.q, -0.1178332, 1e-7);
        assert_eq!(fs.iterations, 1);
        assert!(fs.f_tun.iter().all(|&x| x == 0.0));
    }

    /// Sum over explicit paths of probability times path round trip.
    fn path_oracle(inst: &Instance, st: &DecisionState, fs: &FlowState, svc: usize, i: usize) -> f64 {
        let s = inst.catalog.service(svc);
        let net = &inst.network;
        let mut total = st.y(i, svc) * s.workload * fs.node_delay[i];
        for &l in net.out_links(i) {
            let p = st.phi(svc, l);
            if p > 0.0 {
                let j = net.link(l).dst;
                let hop = s.req_size * fs.link_delay[l] + s.res_size * fs.link_delay[net.reverse(l)];
                total += p * (hop + path_oracle(inst, st, fs, svc, j));
            }
        }
        total
    }

    #[test]
    fn round_trip_matches_path_enumeration() {
        let inst = fixtures::diamond(10.0);
        let net = &inst.network;
        let mut st = DecisionState::zeros(&inst);
        st.set_s(0, 0, 1.0);
        st.set_y(3, 0, 1.0);
        for (a, b, p) in [(0, 1, 0.5), (0, 2, 0.5), (1, 3, 1.0), (2, 3, 1.0)] {
            st.set_phi(0, net.link_id(a, b).unwrap(), p);
        }
        let fs = solve_flow_fixed_point(&inst, &st, &FlowOptions::default()).unwrap();
        close(fs.d_o(0, 0), path_oracle(&inst, &st, &fs, 0, 0), 1e-15);
        let bd = net.link_id(1, 3).unwrap();
        let cd = net.link_id(2, 3).unwrap();
        let path = |a: usize, b: usize| {
            0.25 * fs.link_delay[a] + 0.75 * fs.link_delay[net.reverse(a)] + 0.25 * fs.link_delay[b] + 0.75 * fs.link_delay[net.reverse(b)]
        };
        let mean = 0.5 * path(net.link_id(0, 1).unwrap(), bd) + 0.5 * path(net.link_id(0, 2).unwrap(), cd) + fs.node_delay[3];
        close(fs.d_o(0, 0), mean, 1e-15);

        let inst = fixtures::grid(3, 2);
        let st = random_feasible_state(&inst, 9, PlacementMode::Joint).unwrap();
        let fs = solve_flow_fixed_point(&inst, &st, &FlowOptions::default()).unwrap();
        for svc in 0..inst.num_services() {
            for i in 0..9 {
                close(fs.d_o(i, svc), path_oracle(&inst, &st, &fs, svc, i), 1e-12);
            }
        }
    }

    #[test]
    fn host_round_trip_is_node_delay() {
        let inst = fixtures::two_node_line(0.0);
        let st = fixtures::two_node_state(&inst);
        let fs = solve_flow_fixed_point(&inst, &st, &FlowOptions::default()).unwrap();
        assert_eq!(fs.d_o(1, 0), fs.node_delay[1] + inst.network.ap_delay);
    }

    #[test]
    fn tunneling_probability() {
        let net = NetworkModel::new(3, &[(0, 1, 10.0), (0, 2, 10.0)], vec![10.0; 3], vec![10.0; 3]).unwrap();
        let mut inst = fixtures::two_node_line(0.0);
        inst.mobility = MobilityModel::from_totals(&net, &[0.1, 0.0, 0.0], &[0.5; 4]).unwrap();
        inst.profile = crate::model::RequestProfile::uniform(3, 1, 1.0);
        inst.network = net;
        let mut st = DecisionState::zeros(&inst);
        st.set_s(0, 0, 1.0);
        let (p, f_tun) = compute_tunneling(&inst, &st, &[0.3217833, 0.0, 0.0], &TunnelPayload::Result);
        let l01 = inst.network.link_id(0, 1).unwrap();
        let expected = 0.5 * (1.0 - (-0.1f64 * 0.3217833).exp());
        close(p[l01], expected, 1e-15);
        close(p[l01], 0.0158331, 1e-7);
        close(f_tun[l01], 0.75 * expected, 1e-15);

        inst.mobility = MobilityModel::from_totals(&inst.network, &[1e6, 0.0, 0.0], &[0.5; 4]).unwrap();
        let (p, _) = compute_tunneling(&inst, &st, &[0.3217833, 0.0, 0.0], &TunnelPayload::Result);
        close(p[l01], 0.5, 1e-12);
    }

    #[test]
    fn fixed_point_matches_scalar_bisection() {
        let lam = 0.1;
        let inst = fixtures::two_node_line(lam);
        let st = fixtures::two_node_state(&inst);
        let fs = solve_flow_fixed_point(&inst, &st, &FlowOptions::with_tol(1e-14)).unwrap();
        // D = 0.25 d(0.25 + 0.75 p(D)) + 0.75 d(0.75) + c(1), p(D) = 1 - exp(-lam D)
        let d = |x: f64| 1.0 / (10.0 - x);
        let h = |dd: f64| 0.25 * d(0.25 + 0.75 * (1.0 - (-lam * dd).exp())) + 0.75 * d(0.75) + 1.0 / 9.0;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - h(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        close(fs.d_o(0, 0), 0.5 * (lo + hi), 1e-13);
        assert!(fs.f_tun[inst.network.link_id(0, 1).unwrap()] > 0.0);
    }

    #[test]
    fn overload_is_reported() {
        let mut inst = fixtures::two_node_line(0.0);
        inst.profile.set_rate(0, 0, 40.0);
        let st = fixtures::two_node_state(&inst);
        assert!(matches!(
            solve_flow_fixed_point(&inst, &st, &FlowOptions::default()),
            Err(Error::InfeasibleLoad { .. })
        ));
    }

    #[test]
    fn zero_demand_gives_zero_objective() {
        let mut inst = fixtures::two_node_line(0.1);
        inst.profile.set_rate(0, 0, 0.0);
        let st = fixtures::two_node_state(&inst);
        let (_, obj) = objective(&inst, &st, &FlowOptions::default()).unwrap();
        assert_eq!(obj.j, 0.0);
        assert_eq!(obj.q, 0.0);
    }

    #[test]
    fn identity_and_residual_on_random_states() {
        let inst = fixtures::grid(3, 3);
        for seed in 0..20 {
            let mode = if seed % 2 == 0 { PlacementMode::Fixed } else { PlacementMode::Joint };
            let st = random_feasible_state(&inst, seed, mode).unwrap();
            let (fs, obj) = objective(&inst, &st, &FlowOptions::default()).unwrap();
            let total = inst.profile.total();
            assert!((obj.j + total * obj.q).abs() <= 1e-9 * (1.0 + obj.j.abs()));
            let d = link_delays(&inst, &fs.f_total).unwrap();
            let d_o = compute_static_rtt(&inst, &st, &fs.traffic.orders, &d, &fs.node_delay);
            let (_, again) = compute_tunneling(&inst, &st, &d_o, &TunnelPayload::Result);
            let res = again.iter().zip(&fs.f_tun).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(res <= 1e-10, "residual {res}");
        }
    }

    #[test]
    fn more_mobility_never_lowers_cost() {
        let inst = fixtures::grid(3, 3);
        for seed in 0..20 {
            let st = random_feasible_state(&inst, 100 + seed, PlacementMode::Fixed).unwrap();
            let mut last = f64::NEG_INFINITY;
            for lam in [0.0, 0.05, 0.1, 0.2] {
                let (_, obj) = objective(&inst.with_mobility_total(lam), &st, &FlowOptions::default()).unwrap();
                assert!(obj.j >= last - 1e-12);
                last = obj.j;
            }
        }
    }
}
