//! Centralized gradient oracle.
//!
//! `dJ/dF_o(l)` is the total marginal cost of one extra unit of exogenous
//! flow on link `l`, including the tunneling feedback it triggers through
//! `D^o`. Writing `g` for that vector, the feedback satisfies
//!
//! ```text
//! g_uv  = D'_uv + d'_uv * sum_s (L_req phi_uv M_u + L_res phi_vu M_v)
//! m_i   = L_res r_i s_i Lambda_i exp(-Lambda_i D^o_i) * sum_j q_ij g_ij
//! M_i   = m_i + sum_l phi_li M_l
//! ```
//!
//! The oracle eliminates `m` and `M` and solves the resulting linear system
//! in `g` directly; the message protocol in [`crate::dmp`] reaches the same
//! fixed point by local sweeps.

use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions, FlowState};
use crate::lfw::BlockedSets;
use crate::model::{DecisionState, Instance, PlacementMode, Slot};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct Marginals {
    /// `d'_ij`.
    pub d_prime: Vec<f64>,
    /// `D'_ij = d_ij + F_ij d'_ij`.
    pub big_d_prime: Vec<f64>,
    /// `c'_i`.
    pub c_prime: Vec<f64>,
    /// `C'_i = c_i + G_i c'_i`.
    pub big_c_prime: Vec<f64>,
}

pub fn compute_marginals(inst: &Instance, flow: &FlowState) -> Marginals {
    let net = &inst.network;
    let d_prime: Vec<f64> = (0..net.num_links())
        .map(|l| {
            inst.cost
                .link
                .delay_prime(flow.f_total[l], net.link_capacity[l])
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let big_d_prime = (0..net.num_links())
        .map(|l| flow.link_delay[l] + flow.f_total[l] * d_prime[l])
        .collect();
    let c_prime: Vec<f64> = (0..net.num_nodes())
        .map(|i| {
            inst.cost
                .node
                .delay_prime(flow.workload[i], net.node_capacity[i])
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let big_c_prime = (0..net.num_nodes())
        .map(|i| flow.node_delay[i] + flow.workload[i] * c_prime[i])
        .collect();
    Marginals {
        d_prime,
        big_d_prime,
        c_prime,
        big_c_prime,
    }
}

#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// `dJ/ds`, layout of `DecisionState::s`.
    pub ds: Vec<f64>,
    /// `dJ/dphi`, layout of `DecisionState::phi`.
    pub dphi: Vec<f64>,
    /// `dJ/dy`, layout of `DecisionState::y`.
    pub dy: Vec<f64>,
    pub delta: Vec<f64>,
    pub tau: Vec<f64>,
    /// Self-feedback gain of each link.
    pub b: Vec<f64>,
    pub big_m: Vec<f64>,
    pub m_small: Vec<f64>,
    pub dj_dfo: Vec<f64>,
    /// `min_j dJ/dphi_ij / L_mod` per node and service.
    pub xi: Vec<f64>,
}

impl GradientBundle {
    /// Largest absolute difference over the decision gradients.
    pub fn max_abs_diff(&self, other: &GradientBundle) -> f64 {
        [(&self.ds, &other.ds), (&self.dphi, &other.dphi), (&self.dy, &other.dy)]
            .iter()
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// `r_i s_i Lambda_i exp(-Lambda_i D^o_i)` per node and service.
pub fn origin_coefficients(inst: &Instance, state: &DecisionState, d_static: &[f64]) -> Vec<f64> {
    let nsv = inst.num_services();
    let mut kappa = vec![0.0; inst.num_nodes() * nsv];
    for i in 0..inst.num_nodes() {
        let lam = inst.mobility.total(i);
        if lam == 0.0 {
            continue;
        }
        for svc in 0..nsv {
            let task = inst.catalog.service(svc).task;
            let rs = inst.profile.rate(i, task) * state.s(i, inst.catalog.slot_of_service(svc));
            kappa[i * nsv + svc] = rs * lam * (-lam * d_static[i * nsv + svc]).exp();
        }
    }
    kappa
}

/// Link self-feedback `B_ij` and origin terms `m_i` for a given estimate
/// of `dJ/dF_o` (`g = D'` gives the first-order terms).
pub fn compute_b_and_m(
    inst: &Instance,
    state: &DecisionState,
    kappa: &[f64],
    marg: &Marginals,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let net = &inst.network;
    let nsv = inst.num_services();
    let mut b = vec![0.0; net.num_links()];
    let mut m = vec![0.0; net.num_nodes() * nsv];
    for i in 0..net.num_nodes() {
        if inst.mobility.total(i) == 0.0 {
            continue;
        }
        let qg: f64 = net.out_links(i).iter().map(|&l| inst.mobility.q(l) * g[l]).sum();
        for svc in 0..nsv {
            let k = kappa[i * nsv + svc];
            if k == 0.0 {
                continue;
            }
            let s = inst.catalog.service(svc);
            m[i * nsv + svc] = s.res_size * k * qg;
            for &l in net.out_links(i) {
                let phi = state.phi(svc, l);
                if phi != 0.0 {
                    b[l] += marg.d_prime[l] * inst.mobility.q(l) * s.req_size * s.res_size * phi * k;
                }
            }
        }
    }
    (b, m)
}

/// Downstream propagation `M_i = m_i + sum_l phi_li M_l`.
pub fn compute_m_recursion(inst: &Instance, state: &DecisionState, orders: &[Vec<usize>], m: &[f64]) -> Vec<f64> {
    let net = &inst.network;
    let nsv = inst.num_services();
    let mut big_m = m.to_vec();
    for (svc, order) in orders.iter().enumerate() {
        for &i in order {
            let mi = big_m[i * nsv + svc];
            if mi == 0.0 {
                continue;
            }
            for &l in net.out_links(i) {
                let phi = state.phi(svc, l);
                if phi != 0.0 {
                    big_m[net.link(l).dst * nsv + svc] += phi * mi;
                }
            }
        }
    }
    big_m
}

/// Right-hand side of the `g` equation given `M` (no self-loop elimination).
pub fn dj_dfo_from_m(inst: &Instance, state: &DecisionState, marg: &Marginals, big_m: &[f64]) -> Vec<f64> {
    let net = &inst.network;
    let nsv = inst.num_services();
    (0..net.num_links())
        .map(|l| {
            let lk = net.link(l);
            let rev = net.reverse(l);
            let mut acc = 0.0;
            for svc in 0..nsv {
                let s = inst.catalog.service(svc);
                acc += s.req_size * state.phi(svc, l) * big_m[lk.src * nsv + svc]
                    + s.res_size * state.phi(svc, rev) * big_m[lk.dst * nsv + svc];
            }
            marg.big_d_prime[l] + marg.d_prime[l] * acc
        })
        .collect()
}

fn check_feedback(b: &[f64]) -> Result<()> {
    match b.iter().position(|&x| !(x < 1.0)) {
        Some(link) => Err(Error::FeedbackUnstable { link, gain: b[link] }),
        None => Ok(()),
    }
}

/// Exact `dJ/dF_o` by eliminating the origin terms and solving `(I - A) g = D'`.
pub fn compute_dj_dfo(inst: &Instance, state: &DecisionState, flow: &FlowState, kappa: &[f64], marg: &Marginals) -> Result<Vec<f64>> {
    let net = &inst.network;
    let n = net.num_nodes();
    let nl = net.num_links();
    let nsv = inst.num_services();

    let (b, _) = compute_b_and_m(inst, state, kappa, marg, &marg.big_d_prime);
    check_feedback(&b)?;
    if inst.mobility.is_static() {
        return Ok(marg.big_d_prime.clone());
    }

    // h[l][a]: response of g_l to a unit of sum_j q_aj g_aj at origin a.
    let mut h = DMatrix::<f64>::zeros(nl, n);
    let mut reach = vec![0.0; n];
    for svc in 0..nsv {
        let s = inst.catalog.service(svc);
        let order = &flow.traffic.orders[svc];
        let pos: Vec<usize> = {
            let mut p = vec![0; n];
            for (k, &i) in order.iter().enumerate() {
                p[i] = k;
            }
            p
        };
        for a in 0..n {
            let k = kappa[a * nsv + svc];
            if k == 0.0 {
                continue;
            }
            reach.iter_mut().for_each(|x| *x = 0.0);
            reach[a] = 1.0;
            for &u in &order[pos[a]..] {
                let ru = reach[u];
                if ru == 0.0 {
                    continue;
                }
                for &l in net.out_links(u) {
                    let phi = state.phi(svc, l);
                    if phi != 0.0 {
                        reach[net.link(l).dst] += phi * ru;
                    }
                }
            }
            let weight = s.res_size * k;
            for l in 0..nl {
                let lk = net.link(l);
                let contrib = s.req_size * state.phi(svc, l) * reach[lk.src]
                    + s.res_size * state.phi(svc, net.reverse(l)) * reach[lk.dst];
                if contrib != 0.0 {
                    h[(l, a)] += marg.d_prime[l] * weight * contrib;
                }
            }
        }
    }

    let mut sys = DMatrix::<f64>::identity(nl, nl);
    for lp in 0..nl {
        let a = net.link(lp).src;
        let q = inst.mobility.q(lp);
        if q == 0.0 {
            continue;
        }
        for l in 0..nl {
            sys[(l, lp)] -= h[(l, a)] * q;
        }
    }
    let rhs = DVector::from_column_slice(&marg.big_d_prime);
    let g = sys
        .lu()
        .solve(&rhs)
        .ok_or(Error::FeedbackUnstable { link: 0, gain: f64::INFINITY })?;
    Ok(g.iter().copied().collect())
}

/// Effective node marginal, including the tunneling that node delay causes
/// through `D^o`: `C'_h + c'_h sum_s W_s y_h M_h`.
pub fn effective_node_marginal(inst: &Instance, state: &DecisionState, marg: &Marginals, big_m: &[f64]) -> Vec<f64> {
    let nsv = inst.num_services();
    (0..inst.num_nodes())
        .map(|h| {
            let fb: f64 = (0..nsv)
                .map(|svc| inst.catalog.service(svc).workload * state.y(h, svc) * big_m[h * nsv + svc])
                .sum();
            marg.big_c_prime[h] + marg.c_prime[h] * fb
        })
        .collect()
}

/// `tau_i = L_res sum_j g_ij p_ij` and the backward `delta` recursion.
pub fn compute_delta_tau(
    inst: &Instance,
    state: &DecisionState,
    flow: &FlowState,
    g: &[f64],
    node_marginal: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let net = &inst.network;
    let nsv = inst.num_services();
    let mut delta = vec![0.0; net.num_nodes() * nsv];
    let mut tau = vec![0.0; net.num_nodes() * nsv];
    for svc in 0..nsv {
        let s = inst.catalog.service(svc);
        for &i in flow.traffic.orders[svc].iter().rev() {
            let mut dl = state.y(i, svc) * s.workload * node_marginal[i];
            let mut tu = 0.0;
            for &l in net.out_links(i) {
                tu += g[l] * flow.p(svc, l);
                let phi = state.phi(svc, l);
                if phi != 0.0 {
                    let j = net.link(l).dst;
                    dl += phi * (s.req_size * g[l] + s.res_size * g[net.reverse(l)] + delta[j * nsv + svc]);
                }
            }
            delta[i * nsv + svc] = dl;
            tau[i * nsv + svc] = s.res_size * tu;
        }
    }
    (delta, tau)
}

/// Intermediates needed to assemble a gradient bundle.
pub struct GradientParts<'a> {
    pub g: Vec<f64>,
    pub big_m: Vec<f64>,
    pub m_small: Vec<f64>,
    pub b: Vec<f64>,
    pub node_marginal: Vec<f64>,
    pub delta: Vec<f64>,
    pub tau: Vec<f64>,
    /// Residual round trips used for routing sensitivity (measured `D^o - d_AP`).
    pub rtt_tail: &'a [f64],
}

pub fn assemble_gradients(inst: &Instance, flow: &FlowState, parts: GradientParts<'_>) -> GradientBundle {
    let net = &inst.network;
    let cat = &inst.catalog;
    let n = net.num_nodes();
    let nsv = inst.num_services();
    let nl = net.num_links();
    let GradientParts {
        g,
        big_m,
        m_small,
        b,
        node_marginal,
        delta,
        tau,
        rtt_tail,
    } = parts;

    let mut ds = vec![0.0; n * cat.num_slots()];
    for i in 0..n {
        for slot in 0..cat.num_slots() {
            let task = cat.slot_task(slot);
            let r = inst.profile.rate(i, task);
            let uhat = cat.modified_utility(slot, net.ap_delay);
            ds[i * cat.num_slots() + slot] = match cat.slot(slot) {
                Slot::Local { task } => r * (flow::local_latency(inst, task) - uhat),
                Slot::Remote { service } => {
                    let idx = i * nsv + service;
                    r * (delta[idx] + tau[idx] - uhat)
                }
            };
        }
    }

    let mut dphi = vec![0.0; nsv * nl];
    let mut dy = vec![0.0; n * nsv];
    let mut xi = vec![0.0; n * nsv];
    for svc in 0..nsv {
        let s = cat.service(svc);
        for i in 0..n {
            let idx = i * nsv + svc;
            let ti = flow.traffic.t[idx];
            let mi = big_m[idx];
            let mut best = f64::INFINITY;
            for &l in net.out_links(i) {
                let j = net.link(l).dst;
                let rev = net.reverse(l);
                let jdx = j * nsv + svc;
                let val = ti * (s.req_size * g[l] + s.res_size * g[rev] + delta[jdx])
                    + mi * (s.req_size * flow.link_delay[l] + s.res_size * flow.link_delay[rev] + rtt_tail[jdx]);
                dphi[svc * nl + l] = val;
                best = best.min(val);
            }
            dy[idx] = ti * s.workload * node_marginal[i] + mi * s.workload * flow.node_delay[i];
            xi[idx] = if s.model_size > 0.0 { best / s.model_size } else { f64::INFINITY };
        }
    }

    GradientBundle {
        ds,
        dphi,
        dy,
        delta,
        tau,
        b,
        big_m,
        m_small,
        dj_dfo: g,
        xi,
    }
}

/// Exact gradients at a converged flow state.
pub fn gradients(inst: &Instance, state: &DecisionState, flow: &FlowState) -> Result<GradientBundle> {
    let marg = compute_marginals(inst, flow);
    let kappa = origin_coefficients(inst, state, &flow.d_static);
    let g = compute_dj_dfo(inst, state, flow, &kappa, &marg)?;
    let (b, m_small) = compute_b_and_m(inst, state, &kappa, &marg, &g);
    let big_m = compute_m_recursion(inst, state, &flow.traffic.orders, &m_small);
    let node_marginal = effective_node_marginal(inst, state, &marg, &big_m);
    let (delta, tau) = compute_delta_tau(inst, state, flow, &g, &node_marginal);
    Ok(assemble_gradients(
        inst,
        flow,
        GradientParts {
            g,
            big_m,
            m_small,
            b,
            node_marginal,
            delta,
            tau,
            rtt_tail: &flow.rtt_tail,
        },
    ))
}

/// Tunneling-unaware gradients: `dJ/dF_o = D'`, no origin feedback.
pub fn static_gradients(inst: &Instance, state: &DecisionState, flow: &FlowState) -> GradientBundle {
    let marg = compute_marginals(inst, flow);
    let size = inst.num_nodes() * inst.num_services();
    let g = marg.big_d_prime.clone();
    let (delta, tau) = compute_delta_tau(inst, state, flow, &g, &marg.big_c_prime);
    assemble_gradients(
        inst,
        flow,
        GradientParts {
            g,
            big_m: vec![0.0; size],
            m_small: vec![0.0; size],
            b: vec![0.0; inst.num_links()],
            node_marginal: marg.big_c_prime.clone(),
            delta,
            tau,
            rtt_tail: &flow.rtt_tail,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResidual {
    pub res_s: f64,
    pub res_phi: f64,
    pub res_y: f64,
}

const KKT_EPS: f64 = 1e-9;

/// Gap between active decisions and the best alternative in each choice set.
pub fn kkt_residual(
    inst: &Instance,
    state: &DecisionState,
    grads: &GradientBundle,
    blocked: &BlockedSets,
    mode: PlacementMode,
) -> KktResidual {
    let net = &inst.network;
    let cat = &inst.catalog;
    let n = net.num_nodes();
    let nsv = inst.num_services();
    let nl = net.num_links();
    let nslots = cat.num_slots();
    let deployed: Vec<bool> = (0..nsv).map(|s| state.is_deployed(s)).collect();
    let available = |slot: usize| match cat.slot(slot) {
        Slot::Local { .. } => true,
        Slot::Remote { service } => deployed[service],
    };

    let mut res_s: f64 = 0.0;
    for i in 0..n {
        for k in 0..cat.num_tasks() {
            let slots: Vec<usize> = cat.task_slots(k).filter(|&sl| available(sl)).collect();
            let best = slots.iter().map(|&sl| grads.ds[i * nslots + sl]).fold(f64::INFINITY, f64::min);
            for &sl in &slots {
                if state.s(i, sl) > KKT_EPS {
                    res_s = res_s.max(grads.ds[i * nslots + sl] - best);
                }
            }
        }
    }

    let mut res_phi: f64 = 0.0;
    let mut res_y: f64 = 0.0;
    for i in 0..n {
        let mut ratios: Vec<(f64, f64)> = Vec::new();
        for svc in (0..nsv).filter(|&s| deployed[s]) {
            let allowed: Vec<usize> = blocked.allowed_out(inst, svc, i).collect();
            if allowed.is_empty() {
                continue;
            }
            let best = allowed.iter().map(|&l| grads.dphi[svc * nl + l]).fold(f64::INFINITY, f64::min);
            for &l in &allowed {
                if state.phi(svc, l) > KKT_EPS {
                    res_phi = res_phi.max(grads.dphi[svc * nl + l] - best);
                }
            }
            let size = cat.service(svc).model_size;
            if mode == PlacementMode::Joint && size > 0.0 {
                let saving = (best - grads.dy[i * nsv + svc]) / size;
                ratios.push((saving, state.y(i, svc)));
            }
        }
        if mode == PlacementMode::Joint && !ratios.is_empty() {
            let slack = net.storage_capacity[i] - state.storage_used(inst, i) > KKT_EPS;
            let threshold = if slack {
                0.0
            } else {
                ratios
                    .iter()
                    .filter(|(_, y)| *y > KKT_EPS)
                    .map(|(r, _)| *r)
                    .fold(f64::INFINITY, f64::min)
                    .max(0.0)
                    .min(f64::MAX)
            };
            for &(rho, y) in &ratios {
                if y < 1.0 - KKT_EPS && rho > threshold {
                    res_y = res_y.max(rho - threshold);
                }
                if y > KKT_EPS && rho < threshold {
                    res_y = res_y.max(threshold - rho);
                }
            }
        }
    }
    KktResidual { res_s, res_phi, res_y }
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Default)]
pub struct FdReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares every decision-gradient coordinate with a central difference
/// of the solved objective. `phi` is only perturbed on allowed edges.
pub fn finite_difference_check(
    inst: &Instance,
    state: &DecisionState,
    grads: &GradientBundle,
    blocked: &BlockedSets,
    step: f64,
    flow_tol: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<FdReport> {
    let opts = FlowOptions::with_tol(flow_tol);
    let eval = |st: &DecisionState| -> Result<f64> { Ok(flow::objective(inst, st, &opts)?.1.j) };
    let mut report = FdReport::default();
    let mut record = |name: String, analytic: f64, fd: f64| {
        report.checked += 1;
        let err = (analytic - fd).abs();
        let rel = err / analytic.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
        if err > abs_tol {
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{name}: analytic {analytic:e}, fd {fd:e}");
            }
            if rel > rel_tol {
                report.failures += 1;
            }
        }
    };

    let nsv = inst.num_services();
    let nl = inst.num_links();
    let nslots = inst.catalog.num_slots();
    let deployed: Vec<bool> = (0..nsv).map(|s| state.is_deployed(s)).collect();
    let mut work = state.clone();

    let central = |work: &mut DecisionState, get: &dyn Fn(&mut DecisionState) -> &mut f64| -> Result<f64> {
        let orig = *get(work);
        *get(work) = orig + step;
        let jp = eval(work)?;
        *get(work) = orig - step;
        let jm = eval(work)?;
        *get(work) = orig;
        Ok((jp - jm) / (2.0 * step))
    };

    for i in 0..inst.num_nodes() {
        for slot in 0..nslots {
            if !state.slot_available(inst, slot) {
                continue;
            }
            let idx = i * nslots + slot;
            let fd = central(&mut work, &|w| &mut w.s[idx])?;
            record(format!("ds[{i},{slot}]"), grads.ds[idx], fd);
        }
    }
    for svc in (0..nsv).filter(|&s| deployed[s]) {
        for l in 0..nl {
            if !blocked.allowed(svc, l) {
                continue;
            }
            let idx = svc * nl + l;
            let fd = central(&mut work, &|w| &mut w.phi[idx])?;
            record(format!("dphi[{svc},{l}]"), grads.dphi[idx], fd);
        }
        for i in 0..inst.num_nodes() {
            let idx = i * nsv + svc;
            let fd = central(&mut work, &|w| &mut w.y[idx])?;
            record(format!("dy[{i},{svc}]"), grads.dy[idx], fd);
        }
    }
    Ok(report)
}

/// Central difference of `J` w.r.t. an exogenous flow injection on one link.
pub fn fd_dj_dfo(inst: &Instance, state: &DecisionState, link: usize, step: f64, flow_tol: f64) -> Result<f64> {
    let mut inj = vec![0.0; inst.num_links()];
    let mut eval = |h: f64| -> Result<f64> {
        inj[link] = h;
        let opts = FlowOptions {
            tol: flow_tol,
            injection: Some(inj.clone()),
            ..Default::default()
        };
        Ok(flow::objective(inst, state, &opts)?.1.j)
    };
    Ok((eval(step)? - eval(-step)?) / (2.0 * step))
}
