//! Network, service catalog, demand, mobility and decision variables.
//!
//! Nodes are dense integers `0..n`. Links are directed and stored sorted by
//! `(src, dst)`; every link has its reverse. Network-hosted services are
//! indexed by a flat service id; selection variables live in per-task
//! "slots" that also cover the optional local model (`m = 0`) of each task.

mod cost;
mod state;
pub mod text;
mod validate;

pub use cost::{CostModel, DelayFamily};
pub use state::{random_feasible_state, state_from_hosts, DecisionState, PlacementMode};
pub use validate::{check_loop_free, support_order, validate, ValidationReport, Violation};

use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Link {
    pub src: usize,
    pub dst: usize,
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    n: usize,
    links: Vec<Link>,
    /// `mu_ij` per link.
    pub link_capacity: Vec<f64>,
    /// `nu_i` per node.
    pub node_capacity: Vec<f64>,
    /// `R_i` per node.
    pub storage_capacity: Vec<f64>,
    /// Optional layer annotation used by the migration baseline.
    pub layer: Option<Vec<usize>>,
    pub ap_delay: f64,
    pub local_delay: f64,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
    reverse: Vec<usize>,
    index: HashMap<(usize, usize), usize>,
}

impl NetworkModel {
    /// Builds a network from `(src, dst, mu)` triples. Missing reverse links
    /// are added with the same capacity.
    pub fn new(
        n: usize,
        edges: &[(usize, usize, f64)],
        node_capacity: Vec<f64>,
        storage_capacity: Vec<f64>,
    ) -> Result<Self> {
        if node_capacity.len() != n || storage_capacity.len() != n {
            return Err(Error::InvalidModel("per-node vectors must have one entry per node".into()));
        }
        let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, mu) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidModel(format!("link ({i},{j}) references unknown node")));
            }
            if i == j {
                return Err(Error::InvalidModel(format!("self loop at node {i}")));
            }
            if directed.insert((i, j), mu).is_some() {
                return Err(Error::InvalidModel(format!("duplicate link ({i},{j})")));
            }
        }
        let missing: Vec<_> = directed
            .iter()
            .filter(|(&(i, j), _)| !directed.contains_key(&(j, i)))
            .map(|(&(i, j), &mu)| ((j, i), mu))
            .collect();
        directed.extend(missing);

        let mut links = Vec::with_capacity(directed.len());
        let mut link_capacity = Vec::with_capacity(directed.len());
        let mut index = HashMap::with_capacity(directed.len());
        let mut out_links = vec![Vec::new(); n];
        let mut in_links = vec![Vec::new(); n];
        for (l, (&(i, j), &mu)) in directed.iter().enumerate() {
            links.push(Link { src: i, dst: j });
            link_capacity.push(mu);
            index.insert((i, j), l);
            out_links[i].push(l);
            in_links[j].push(l);
        }
        let reverse = links.iter().map(|lk| index[&(lk.dst, lk.src)]).collect();
        let net = NetworkModel {
            n,
            links,
            link_capacity,
            node_capacity,
            storage_capacity,
            layer: None,
            ap_delay: 0.0,
            local_delay: 0.0,
            out_links,
            in_links,
            reverse,
            index,
        };
        net.check()?;
        Ok(net)
    }

    pub fn with_delays(mut self, ap_delay: f64, local_delay: f64) -> Self {
        self.ap_delay = ap_delay;
        self.local_delay = local_delay;
        self
    }

    /// Connectivity and positivity checks.
    pub fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidModel("empty network".into()));
        }
        if let Some(l) = self.link_capacity.iter().position(|&mu| !(mu > 0.0)) {
            return Err(Error::InvalidModel(format!("link {l} has non-positive capacity")));
        }
        if let Some(i) = self.node_capacity.iter().position(|&nu| !(nu > 0.0)) {
            return Err(Error::InvalidModel(format!("node {i} has non-positive computation capacity")));
        }
        if let Some(i) = self.storage_capacity.iter().position(|&r| !(r >= 0.0)) {
            return Err(Error::InvalidModel(format!("node {i} has negative storage capacity")));
        }
        if let Some(layer) = &self.layer {
            if layer.len() != self.n {
                return Err(Error::InvalidModel("layer annotation length mismatch".into()));
            }
        }
        if !self.is_connected() {
            return Err(Error::InvalidModel("graph is not connected".into()));
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        let dist = self.hop_distances(&[0]);
        dist.iter().all(|d| d.is_some())
    }

    /// Multi-source BFS hop distances.
    pub fn hop_distances(&self, sources: &[usize]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &l in &self.in_links[u] {
                let v = self.links[l].src;
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, l: usize) -> Link {
        self.links[l]
    }

    pub fn out_links(&self, i: usize) -> &[usize] {
        &self.out_links[i]
    }

    pub fn in_links(&self, i: usize) -> &[usize] {
        &self.in_links[i]
    }

    pub fn reverse(&self, l: usize) -> usize {
        self.reverse[l]
    }

    pub fn link_id(&self, i: usize, j: usize) -> Option<usize> {
        self.index.get(&(i, j)).copied()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_links[i].iter().map(move |&l| self.links[l].dst)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.out_links[i].len()
    }

    /// Layer of every node: the annotation if present, otherwise hop
    /// distance from `root`.
    pub fn layers(&self, root: usize) -> Vec<usize> {
        match &self.layer {
            Some(l) => l.clone(),
            None => self
                .hop_distances(&[root])
                .into_iter()
                .map(|d| d.unwrap_or(usize::MAX))
                .collect(),
        }
    }
}

/// A network-hosted service `(k, m)` with `m != 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Service {
    pub task: usize,
    pub model: usize,
    pub req_size: f64,
    pub res_size: f64,
    pub model_size: f64,
    pub workload: f64,
    pub utility: f64,
}

/// The on-device model `(k, 0)` of a task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalModel {
    pub workload: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Local { task: usize },
    Remote { service: usize },
}

#[derive(Debug, Clone)]
pub struct ServiceCatalog {
    pub eta: f64,
    n_tasks: usize,
    services: Vec<Service>,
    local: Vec<Option<LocalModel>>,
    slots: Vec<Slot>,
    task_slots: Vec<Range<usize>>,
    service_slot: Vec<usize>,
}

impl ServiceCatalog {
    pub fn new(
        n_tasks: usize,
        local: Vec<Option<LocalModel>>,
        services: Vec<Service>,
        eta: f64,
    ) -> Result<Self> {
        if local.len() != n_tasks {
            return Err(Error::InvalidModel("one local-model entry per task required".into()));
        }
        for (sid, svc) in services.iter().enumerate() {
            if svc.task >= n_tasks {
                return Err(Error::InvalidModel(format!("service {sid} has unknown task {}", svc.task)));
            }
            if svc.model == 0 {
                return Err(Error::InvalidModel(format!("service {sid}: model id 0 is reserved for local models")));
            }
            let vals = [svc.req_size, svc.res_size, svc.model_size, svc.workload, svc.utility];
            if vals.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidModel(format!("service {sid} has a negative parameter")));
            }
        }
        let mut slots = Vec::new();
        let mut task_slots = Vec::with_capacity(n_tasks);
        let mut service_slot = vec![0; services.len()];
        for k in 0..n_tasks {
            let start = slots.len();
            if local[k].is_some() {
                slots.push(Slot::Local { task: k });
            }
            let mut remote: Vec<usize> = (0..services.len()).filter(|&s| services[s].task == k).collect();
            remote.sort_by_key(|&s| services[s].model);
            for s in remote {
                service_slot[s] = slots.len();
                slots.push(Slot::Remote { service: s });
            }
            if slots.len() == start {
                return Err(Error::InvalidModel(format!("task {k} has no models")));
            }
            task_slots.push(start..slots.len());
        }
        Ok(ServiceCatalog {
            eta,
            n_tasks,
            services,
            local,
            slots,
            task_slots,
            service_slot,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.n_tasks
    }
    pub fn num_services(&self) -> usize {
        self.services.len()
    }
    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }
    pub fn services(&self) -> &[Service] {
        &self.services
    }
    pub fn service(&self, s: usize) -> &Service {
        &self.services[s]
    }
    pub fn local(&self, k: usize) -> Option<LocalModel> {
        self.local[k]
    }
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }
    pub fn slot(&self, idx: usize) -> Slot {
        self.slots[idx]
    }
    pub fn task_slots(&self, k: usize) -> Range<usize> {
        self.task_slots[k].clone()
    }
    pub fn slot_of_service(&self, s: usize) -> usize {
        self.service_slot[s]
    }
    pub fn slot_task(&self, idx: usize) -> usize {
        match self.slots[idx] {
            Slot::Local { task } => task,
            Slot::Remote { service } => self.services[service].task,
        }
    }

    pub fn slot_utility(&self, idx: usize) -> f64 {
        match self.slots[idx] {
            Slot::Local { task } => self.local[task].map_or(0.0, |l| l.utility),
            Slot::Remote { service } => self.services[service].utility,
        }
    }

    /// `eta * u - d_AP * 1{m != 0}`.
    pub fn modified_utility(&self, idx: usize, ap_delay: f64) -> f64 {
        match self.slots[idx] {
            Slot::Local { .. } => self.eta * self.slot_utility(idx),
            Slot::Remote { .. } => self.eta * self.slot_utility(idx) - ap_delay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestProfile {
    n_tasks: usize,
    rates: Vec<f64>,
}

impl RequestProfile {
    pub fn new(n_nodes: usize, n_tasks: usize, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != n_nodes * n_tasks {
            return Err(Error::InvalidModel("rate table has wrong size".into()));
        }
        if rates.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidModel("negative request rate".into()));
        }
        Ok(RequestProfile { n_tasks, rates })
    }

    pub fn uniform(n_nodes: usize, n_tasks: usize, rate: f64) -> Self {
        RequestProfile {
            n_tasks,
            rates: vec![rate; n_nodes * n_tasks],
        }
    }

    pub fn rate(&self, i: usize, k: usize) -> f64 {
        self.rates[i * self.n_tasks + k]
    }

    pub fn set_rate(&mut self, i: usize, k: usize, r: f64) {
        self.rates[i * self.n_tasks + k] = r;
    }

    pub fn total(&self) -> f64 {
        self.rates.iter().sum()
    }
}

/// Continuous-time Markov user mobility over single-hop transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityModel {
    rate: Vec<f64>,
    total: Vec<f64>,
    prob: Vec<f64>,
}

impl MobilityModel {
    /// From per-link transition rates `lambda_ij`.
    pub fn new(net: &NetworkModel, rate: Vec<f64>) -> Result<Self> {
        if rate.len() != net.num_links() {
            return Err(Error::InvalidModel("one transition rate per link required".into()));
        }
        if rate.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidModel("negative transition rate".into()));
        }
        let total: Vec<f64> = (0..net.num_nodes())
            .map(|i| net.out_links(i).iter().map(|&l| rate[l]).sum())
            .collect();
        let prob = (0..net.num_links())
            .map(|l| {
                let tot = total[net.link(l).src];
                if tot > 0.0 {
                    rate[l] / tot
                } else {
                    0.0
                }
            })
            .collect();
        Ok(MobilityModel { rate, total, prob })
    }

    pub fn none(net: &NetworkModel) -> Self {
        MobilityModel {
            rate: vec![0.0; net.num_links()],
            total: vec![0.0; net.num_nodes()],
            prob: vec![0.0; net.num_links()],
        }
    }

    /// From per-node total rates `Lambda_i` and per-link probabilities `q_ij`.
    pub fn from_totals(net: &NetworkModel, totals: &[f64], q: &[f64]) -> Result<Self> {
        let rate = (0..net.num_links())
            .map(|l| totals[net.link(l).src] * q[l])
            .collect();
        MobilityModel::new(net, rate)
    }

    /// Same transition probabilities, every `Lambda_i` replaced by `total`.
    pub fn with_uniform_total(&self, net: &NetworkModel, total: f64) -> Self {
        let totals = vec![total; net.num_nodes()];
        let q = self.q_or_uniform(net);
        MobilityModel::from_totals(net, &totals, &q).expect("valid rates")
    }

    fn q_or_uniform(&self, net: &NetworkModel) -> Vec<f64> {
        (0..net.num_links())
            .map(|l| {
                let i = net.link(l).src;
                if self.total[i] > 0.0 {
                    self.prob[l]
                } else {
                    1.0 / net.degree(i) as f64
                }
            })
            .collect()
    }

    pub fn rate(&self, l: usize) -> f64 {
        self.rate[l]
    }
    pub fn rates(&self) -> &[f64] {
        &self.rate
    }
    pub fn total(&self, i: usize) -> f64 {
        self.total[i]
    }
    pub fn q(&self, l: usize) -> f64 {
        self.prob[l]
    }
    pub fn is_static(&self) -> bool {
        self.total.iter().all(|&t| t == 0.0)
    }
}

/// Everything that defines a problem instance apart from the decisions.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub network: NetworkModel,
    pub catalog: ServiceCatalog,
    pub profile: RequestProfile,
    pub mobility: MobilityModel,
    pub cost: CostModel,
}

impl Instance {
    pub fn num_nodes(&self) -> usize {
        self.network.num_nodes()
    }
    pub fn num_services(&self) -> usize {
        self.catalog.num_services()
    }
    pub fn num_links(&self) -> usize {
        self.network.num_links()
    }

    pub fn with_mobility_total(&self, total: f64) -> Instance {
        let mut inst = self.clone();
        inst.mobility = self.mobility.with_uniform_total(&self.network, total);
        inst
    }

    pub fn with_eta(&self, eta: f64) -> Instance {
        let mut inst = self.clone();
        inst.catalog.eta = eta;
        inst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reverse_links_are_added() {
        let net = NetworkModel::new(3, &[(0, 1, 5.0), (1, 2, 7.0)], vec![1.0; 3], vec![1.0; 3]).unwrap();
        assert_eq!(net.num_links(), 4);
        let l = net.link_id(2, 1).unwrap();
        assert_eq!(net.link_capacity[l], 7.0);
        assert_eq!(net.reverse(net.reverse(l)), l);
    }

    #[test]
    fn disconnected_graph_rejected() {
        let err = NetworkModel::new(3, &[(0, 1, 5.0)], vec![1.0; 3], vec![1.0; 3]).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn zero_capacity_rejected() {
        assert!(NetworkModel::new(2, &[(0, 1, 0.0)], vec![1.0; 2], vec![1.0; 2]).is_err());
        assert!(NetworkModel::new(2, &[(0, 1, 1.0)], vec![0.0, 1.0], vec![1.0; 2]).is_err());
    }

    #[test]
    fn mobility_probabilities() {
        let net = NetworkModel::new(3, &[(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)], vec![1.0; 3], vec![1.0; 3]).unwrap();
        let mut rate = vec![0.0; net.num_links()];
        rate[net.link_id(0, 1).unwrap()] = 0.3;
        rate[net.link_id(0, 2).unwrap()] = 0.1;
        let mob = MobilityModel::new(&net, rate).unwrap();
        assert!((mob.total(0) - 0.4).abs() < 1e-15);
        assert!((mob.q(net.link_id(0, 1).unwrap()) - 0.75).abs() < 1e-15);
        // static node: q defined as zero
        assert_eq!(mob.total(1), 0.0);
        assert_eq!(mob.q(net.link_id(1, 0).unwrap()), 0.0);
    }

    #[test]
    fn slots_put_local_model_first() {
        let services = vec![
            Service { task: 0, model: 2, req_size: 1.0, res_size: 1.0, model_size: 1.0, workload: 1.0, utility: 0.3 },
            Service { task: 0, model: 1, req_size: 1.0, res_size: 1.0, model_size: 1.0, workload: 1.0, utility: 0.1 },
        ];
        let local = vec![Some(LocalModel { workload: 0.1, utility: 0.05 })];
        let cat = ServiceCatalog::new(1, local, services, 2.0).unwrap();
        assert_eq!(cat.task_slots(0), 0..3);
        assert_eq!(cat.slot(0), Slot::Local { task: 0 });
        assert_eq!(cat.slot(1), Slot::Remote { service: 1 });
        assert!((cat.modified_utility(2, 0.05) - (0.6 - 0.05)).abs() < 1e-15);
        assert!((cat.modified_utility(0, 0.05) - 0.1).abs() < 1e-15);
    }
}
