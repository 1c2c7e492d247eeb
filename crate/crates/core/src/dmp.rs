//! Round-based simulation of the decentralized messaging protocol.
//!
//! Every node sees only its own measurements and those of its out-links.
//! An outer round sends `Msg1` downstream in topological order (the share
//! `phi_ij M_i`), after which each node refines `dJ/dF_o` of its out-links
//! locally. Outer rounds repeat until no node's estimate moves. `Msg2` then
//! travels upstream carrying `delta_j`, `dJ/dF_o(j,i)` and the residual
//! round trip seen from `i`.

use crate::error::{Error, Result};
use crate::flow::{self, FlowState};
use crate::grad::GradientBundle;
use crate::model::{DecisionState, Instance, Slot};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct DmpOptions {
    /// Relative noise `sigma` on measured round trips.
    pub rtt_noise: f64,
    pub seed: u64,
    /// Relative change below which a node's estimate is settled.
    pub tol: f64,
    pub max_rounds: usize,
}

impl Default for DmpOptions {
    fn default() -> Self {
        DmpOptions {
            rtt_noise: 0.0,
            seed: 0,
            tol: 1e-14,
            max_rounds: 200,
        }
    }
}

/// Messages and floating-point work per node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverheadStats {
    pub msgs_sent: Vec<usize>,
    pub msgs_received: Vec<usize>,
    pub flops: Vec<u64>,
    pub rounds: usize,
    /// Number of gradient evaluations folded into the counters.
    pub evaluations: usize,
}

impl OverheadStats {
    fn new(n: usize) -> Self {
        OverheadStats {
            msgs_sent: vec![0; n],
            msgs_received: vec![0; n],
            flops: vec![0; n],
            rounds: 0,
            evaluations: 1,
        }
    }

    pub fn accumulate(&mut self, other: &OverheadStats) {
        for (a, b) in self.msgs_sent.iter_mut().zip(&other.msgs_sent) {
            *a += b;
        }
        for (a, b) in self.msgs_received.iter_mut().zip(&other.msgs_received) {
            *a += b;
        }
        for (a, b) in self.flops.iter_mut().zip(&other.flops) {
            *a += b;
        }
        self.rounds += other.rounds;
        self.evaluations += other.evaluations;
    }

    /// Mean messages sent per node per evaluation.
    pub fn mean_msgs_per_node(&self) -> f64 {
        let n = self.msgs_sent.len().max(1) as f64;
        self.msgs_sent.iter().sum::<usize>() as f64 / n / self.evaluations.max(1) as f64
    }

    pub fn mean_flops_per_node(&self) -> f64 {
        let n = self.flops.len().max(1) as f64;
        self.flops.iter().sum::<u64>() as f64 / n / self.evaluations.max(1) as f64
    }
}

/// Measured `D^o` per node and service, with optional multiplicative noise.
pub fn measure_rtt(flow: &FlowState, sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return flow.d_static.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    flow.d_static
        .iter()
        .map(|&d| {
            let z: f64 = StandardNormal.sample(&mut rng);
            d * (1.0 + sigma * z)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct OutLink {
    pub link: usize,
    pub reverse: usize,
    pub neighbor: usize,
    pub delay: f64,
    pub d_prime: f64,
    pub big_d_prime: f64,
    pub q: f64,
}

/// Per-service quantities a node measures about itself.
#[derive(Debug, Clone)]
pub struct LocalService {
    pub deployed: bool,
    /// `r_i s_i`: exogenous rate assigned to this service.
    pub origin_rate: f64,
    pub t: f64,
    pub y: f64,
    /// `phi` per out-link, aligned with `NodeLocalView::out`.
    pub phi: Vec<f64>,
    /// Out-link indices of neighbors that forward this service to the node.
    pub upstream: Vec<usize>,
    pub d_o: f64,
}

/// What node `i` knows: its own state and its out-links. Fields of a
/// neighbor arrive only through messages.
#[derive(Debug, Clone)]
pub struct NodeLocalView {
    pub id: usize,
    pub out: Vec<OutLink>,
    pub lambda: f64,
    pub node_delay: f64,
    pub c_prime: f64,
    pub big_c_prime: f64,
    pub services: Vec<LocalService>,
}

impl NodeLocalView {
    pub fn observe(inst: &Instance, state: &DecisionState, flow_state: &FlowState, d_o: &[f64], i: usize) -> Self {
        let net = &inst.network;
        let nsv = inst.num_services();
        let out: Vec<OutLink> = net
            .out_links(i)
            .iter()
            .map(|&l| {
                let f = flow_state.f_total[l];
                let cap = net.link_capacity[l];
                let d = flow_state.link_delay[l];
                let dp = inst.cost.link.delay_prime(f, cap).unwrap_or(f64::INFINITY);
                OutLink {
                    link: l,
                    reverse: net.reverse(l),
                    neighbor: net.link(l).dst,
                    delay: d,
                    d_prime: dp,
                    big_d_prime: d + f * dp,
                    q: inst.mobility.q(l),
                }
            })
            .collect();
        let g = flow_state.workload[i];
        let c = flow_state.node_delay[i];
        let cp = inst.cost.node.delay_prime(g, net.node_capacity[i]).unwrap_or(f64::INFINITY);
        let services = (0..nsv)
            .map(|svc| {
                let task = inst.catalog.service(svc).task;
                LocalService {
                    deployed: state.is_deployed(svc),
                    origin_rate: inst.profile.rate(i, task) * state.s(i, inst.catalog.slot_of_service(svc)),
                    t: flow_state.t(i, svc),
                    y: state.y(i, svc),
                    phi: out.iter().map(|o| state.phi(svc, o.link)).collect(),
                    upstream: (0..out.len()).filter(|&k| state.phi(svc, out[k].reverse) > 0.0).collect(),
                    d_o: d_o[i * nsv + svc],
                }
            })
            .collect();
        NodeLocalView {
            id: i,
            out,
            lambda: inst.mobility.total(i),
            node_delay: c,
            c_prime: cp,
            big_c_prime: c + g * cp,
            services,
        }
    }

    fn kappa(&self, svc: &LocalService) -> f64 {
        if self.lambda == 0.0 {
            0.0
        } else {
            svc.origin_rate * self.lambda * (-self.lambda * svc.d_o).exp()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Msg1 {
    pub service: usize,
    pub sender: usize,
    /// `phi_{sender,receiver} * M_sender`.
    pub share: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Msg2 {
    pub service: usize,
    pub sender: usize,
    pub delta: f64,
    /// `dJ/dF_o(sender, receiver)`.
    pub dj_dfo_rev: f64,
    /// `L_res d_{sender,receiver} + R_sender`.
    pub tail: f64,
}

/// Per-node protocol state.
struct NodeRun {
    g: Vec<f64>,
    b: Vec<f64>,
    big_m: Vec<f64>,
    m_small: Vec<f64>,
    /// Last `Msg1` share per (service, out-link index).
    share_in: Vec<f64>,
    delta: Vec<f64>,
    /// Last `Msg2` per (service, out-link index): (delta, g_rev, tail).
    msg2_in: Vec<Option<(f64, f64, f64)>>,
}

/// Runs the protocol to completion and assembles the node-local gradients.
pub fn run_dmp_round(inst: &Instance, state: &DecisionState, flow_state: &FlowState, opts: &DmpOptions) -> Result<(GradientBundle, OverheadStats)> {
    let n = inst.num_nodes();
    let nsv = inst.num_services();
    let cat = &inst.catalog;
    let d_o = measure_rtt(flow_state, opts.rtt_noise, opts.seed);
    let views: Vec<NodeLocalView> = (0..n).map(|i| NodeLocalView::observe(inst, state, flow_state, &d_o, i)).collect();
    let ap = inst.network.ap_delay;
    let mut stats = OverheadStats::new(n);

    let mut runs: Vec<NodeRun> = views
        .iter()
        .map(|v| {
            let deg = v.out.len();
            let mut b = vec![0.0; deg];
            for (sv, ls) in v.services.iter().enumerate() {
                let k = v.kappa(ls);
                if k == 0.0 {
                    continue;
                }
                let s = cat.service(sv);
                for (o, ol) in v.out.iter().enumerate() {
                    b[o] += ol.d_prime * ol.q * s.req_size * s.res_size * ls.phi[o] * k;
                }
            }
            NodeRun {
                g: v.out.iter().map(|o| o.big_d_prime).collect(),
                b,
                big_m: vec![0.0; nsv],
                m_small: vec![0.0; nsv],
                share_in: vec![0.0; nsv * deg],
                delta: vec![0.0; nsv],
                msg2_in: vec![None; nsv * deg],
            }
        })
        .collect();
    for (i, r) in runs.iter().enumerate() {
        if let Some(o) = r.b.iter().position(|&x| !(x < 1.0)) {
            return Err(Error::FeedbackUnstable {
                link: views[i].out[o].link,
                gain: r.b[o],
            });
        }
    }
    let mobile = views.iter().any(|v| v.lambda > 0.0);

    // Index of `i` in each neighbor's out-list, to address replies.
    let back: Vec<Vec<usize>> = views
        .iter()
        .map(|v| {
            v.out
                .iter()
                .map(|o| views[o.neighbor].out.iter().position(|x| x.neighbor == v.id).unwrap())
                .collect()
        })
        .collect();

    // Phase 1: Msg1 downstream, then local g refinement, until settled.
    loop {
        stats.rounds += 1;
        let mut fired = vec![false; n * nsv];
        let mut got = vec![0usize; n * nsv];
        let mut pending: usize = (0..n)
            .map(|i| views[i].services.iter().filter(|s| s.deployed).count())
            .sum();
        while pending > 0 {
            let mut outbox: Vec<(usize, Msg1)> = Vec::new();
            for i in 0..n {
                let v = &views[i];
                for (sv, ls) in v.services.iter().enumerate() {
                    let idx = i * nsv + sv;
                    if !ls.deployed || fired[idx] || got[idx] < ls.upstream.len() {
                        continue;
                    }
                    fired[idx] = true;
                    pending -= 1;
                    let run = &mut runs[i];
                    let deg = v.out.len();
                    let k = v.kappa(ls);
                    let qg: f64 = v.out.iter().zip(&run.g).map(|(o, g)| o.q * g).sum();
                    let mu = cat.service(sv).res_size * k * qg;
                    let inflow: f64 = ls.upstream.iter().map(|&o| run.share_in[sv * deg + o]).sum();
                    run.m_small[sv] = mu;
                    run.big_m[sv] = mu + inflow;
                    stats.flops[i] += (2 * deg + ls.upstream.len() + 4) as u64;
                    for (o, ol) in v.out.iter().enumerate() {
                        if ls.phi[o] > 0.0 {
                            outbox.push((
                                ol.neighbor,
                                Msg1 {
                                    service: sv,
                                    sender: i,
                                    share: ls.phi[o] * run.big_m[sv],
                                },
                            ));
                            stats.msgs_sent[i] += 1;
                            stats.flops[i] += 1;
                        }
                    }
                }
            }
            if outbox.is_empty() && pending > 0 {
                return Err(Error::Stalled { phase: 1, pending });
            }
            for (dst, msg) in outbox {
                let deg = views[dst].out.len();
                let o = views[dst].out.iter().position(|x| x.neighbor == msg.sender).unwrap();
                runs[dst].share_in[msg.service * deg + o] = msg.share;
                got[dst * nsv + msg.service] += 1;
                stats.msgs_received[dst] += 1;
            }
        }
        if !mobile {
            break;
        }

        let mut settled = true;
        for i in 0..n {
            let v = &views[i];
            let run = &mut runs[i];
            let deg = v.out.len();
            let mut next = run.g.clone();
            for (o, ol) in v.out.iter().enumerate() {
                let mut acc = 0.0;
                for (sv, ls) in v.services.iter().enumerate() {
                    if !ls.deployed {
                        continue;
                    }
                    let s = cat.service(sv);
                    if ls.phi[o] > 0.0 {
                        let own = s.res_size * v.kappa(ls) * ol.q * run.g[o];
                        acc += s.req_size * ls.phi[o] * (run.big_m[sv] - own);
                    }
                    acc += s.res_size * run.share_in[sv * deg + o];
                }
                next[o] = (ol.big_d_prime + ol.d_prime * acc) / (1.0 - run.b[o]);
                stats.flops[i] += (6 * v.services.len() + 3) as u64;
                if (next[o] - run.g[o]).abs() > opts.tol * (1.0 + next[o].abs()) {
                    settled = false;
                }
            }
            run.g = next;
        }
        if settled {
            break;
        }
        if stats.rounds >= opts.max_rounds {
            let residual = 0.0;
            return Err(Error::NonConvergent {
                iterations: stats.rounds,
                residual,
            });
        }
    }

    // Phase 2: Msg2 upstream from hosts.
    let node_marginal: Vec<f64> = (0..n)
        .map(|i| {
            let v = &views[i];
            let fb: f64 = v
                .services
                .iter()
                .enumerate()
                .map(|(sv, ls)| cat.service(sv).workload * ls.y * runs[i].big_m[sv])
                .sum();
            v.big_c_prime + v.c_prime * fb
        })
        .collect();
    let mut fired = vec![false; n * nsv];
    let mut pending: usize = (0..n)
        .map(|i| views[i].services.iter().filter(|s| s.deployed).count())
        .sum();
    while pending > 0 {
        let mut outbox: Vec<(usize, usize, Msg2)> = Vec::new();
        for i in 0..n {
            let v = &views[i];
            let deg = v.out.len();
            for (sv, ls) in v.services.iter().enumerate() {
                let idx = i * nsv + sv;
                if !ls.deployed || fired[idx] {
                    continue;
                }
                let run = &runs[i];
                let ready = (0..deg).all(|o| ls.phi[o] == 0.0 || run.msg2_in[sv * deg + o].is_some());
                if !ready {
                    continue;
                }
                fired[idx] = true;
                pending -= 1;
                let s = cat.service(sv);
                let mut dl = ls.y * s.workload * node_marginal[i];
                for o in 0..deg {
                    if ls.phi[o] > 0.0 {
                        let (dj, grev, _) = run.msg2_in[sv * deg + o].unwrap();
                        dl += ls.phi[o] * (s.req_size * run.g[o] + s.res_size * grev + dj);
                    }
                }
                stats.flops[i] += (5 * deg + 3) as u64;
                let tail = ls.d_o - ap;
                for (o, ol) in v.out.iter().enumerate() {
                    outbox.push((
                        ol.neighbor,
                        back[i][o],
                        Msg2 {
                            service: sv,
                            sender: i,
                            delta: dl,
                            dj_dfo_rev: run.g[o],
                            tail: s.res_size * ol.delay + tail,
                        },
                    ));
                    stats.msgs_sent[i] += 1;
                    stats.flops[i] += 2;
                }
                runs[i].delta[sv] = dl;
            }
        }
        if outbox.is_empty() && pending > 0 {
            return Err(Error::Stalled { phase: 2, pending });
        }
        for (dst, o, msg) in outbox {
            let deg = views[dst].out.len();
            runs[dst].msg2_in[msg.service * deg + o] = Some((msg.delta, msg.dj_dfo_rev, msg.tail));
            stats.msgs_received[dst] += 1;
        }
    }

    // Node-local assembly.
    let nl = inst.num_links();
    let ns = cat.num_slots();
    let mut out = GradientBundle {
        ds: vec![0.0; n * ns],
        dphi: vec![0.0; nsv * nl],
        dy: vec![0.0; n * nsv],
        delta: vec![0.0; n * nsv],
        tau: vec![0.0; n * nsv],
        b: vec![0.0; nl],
        big_m: vec![0.0; n * nsv],
        m_small: vec![0.0; n * nsv],
        dj_dfo: vec![0.0; nl],
        xi: vec![0.0; n * nsv],
    };
    for i in 0..n {
        let v = &views[i];
        let run = &runs[i];
        let deg = v.out.len();
        for (o, ol) in v.out.iter().enumerate() {
            out.dj_dfo[ol.link] = run.g[o];
            out.b[ol.link] = run.b[o];
        }
        for (sv, ls) in v.services.iter().enumerate() {
            let idx = i * nsv + sv;
            let s = cat.service(sv);
            out.big_m[idx] = run.big_m[sv];
            out.m_small[idx] = run.m_small[sv];
            out.delta[idx] = run.delta[sv];
            let p_base = if v.lambda == 0.0 { 0.0 } else { 1.0 - (-v.lambda * ls.d_o).exp() };
            let tau: f64 = s.res_size * v.out.iter().zip(&run.g).map(|(ol, g)| g * ol.q * p_base).sum::<f64>();
            out.tau[idx] = tau;
            let mut best = f64::INFINITY;
            for (o, ol) in v.out.iter().enumerate() {
                let val = match run.msg2_in[sv * deg + o] {
                    Some((dj, grev, tail)) => {
                        ls.t * (s.req_size * run.g[o] + s.res_size * grev + dj) + run.big_m[sv] * (s.req_size * ol.delay + tail)
                    }
                    None => 0.0,
                };
                out.dphi[sv * nl + ol.link] = val;
                best = best.min(val);
            }
            stats.flops[i] += (8 * deg + 4) as u64;
            out.dy[idx] = ls.t * s.workload * node_marginal[i] + run.big_m[sv] * s.workload * v.node_delay;
            out.xi[idx] = if s.model_size > 0.0 { best / s.model_size } else { f64::INFINITY };
        }
        for slot in 0..ns {
            let task = cat.slot_task(slot);
            let r = inst.profile.rate(i, task);
            let uhat = cat.modified_utility(slot, ap);
            out.ds[i * ns + slot] = match cat.slot(slot) {
                Slot::Local { task } => r * (flow::local_latency(inst, task) - uhat),
                Slot::Remote { service } => r * (out.delta[i * nsv + service] + out.tau[i * nsv + service] - uhat),
            };
        }
    }
    Ok((out, stats))
}
