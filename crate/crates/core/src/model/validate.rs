use super::{DecisionState, Instance, NetworkModel, PlacementMode};
use std::fmt;

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutOfRange { what: &'static str, index: usize, value: f64 },
    SelectionSum { node: usize, task: usize, sum: f64 },
    UndeployedSelected { node: usize, slot: usize, value: f64 },
    FlowConservation { node: usize, service: usize, sum: f64, expected: f64 },
    NonBinaryPlacement { node: usize, service: usize, value: f64 },
    StorageExceeded { node: usize, used: f64, capacity: f64 },
    RoutingLoop { service: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfRange { what, index, value } => write!(f, "{what}[{index}] = {value} outside [0,1]"),
            Violation::SelectionSum { node, task, sum } => write!(f, "selection at node {node}, task {task} sums to {sum}"),
            Violation::UndeployedSelected { node, slot, value } => {
                write!(f, "node {node} selects undeployed slot {slot} with weight {value}")
            }
            Violation::FlowConservation { node, service, sum, expected } => {
                write!(f, "flow conservation at node {node}, service {service}: {sum} != {expected}")
            }
            Violation::NonBinaryPlacement { node, service, value } => {
                write!(f, "fixed placement y[{node},{service}] = {value} is not binary")
            }
            Violation::StorageExceeded { node, used, capacity } => {
                write!(f, "node {node} stores {used} > capacity {capacity}")
            }
            Violation::RoutingLoop { service } => write!(f, "routing loop in service {service}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Topological order of all nodes under the support `{(i,j): phi_ij != 0}`
/// of one service, or `None` when the support has a cycle.
pub fn support_order(net: &NetworkModel, state: &DecisionState, svc: usize) -> Option<Vec<usize>> {
    let n = net.num_nodes();
    let row = state.phi_row(svc);
    let mut indeg = vec![0usize; n];
    for (l, &p) in row.iter().enumerate() {
        if p != 0.0 {
            indeg[net.link(l).dst] += 1;
        }
    }
    let mut stack: Vec<usize> = (0..n).rev().filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = stack.pop() {
        order.push(u);
        for &l in net.out_links(u).iter().rev() {
            if row[l] != 0.0 {
                let v = net.link(l).dst;
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    stack.push(v);
                }
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// True iff the support digraph of `phi` for `svc` is acyclic.
pub fn check_loop_free(net: &NetworkModel, state: &DecisionState, svc: usize) -> bool {
    support_order(net, state, svc).is_some()
}

/// Lists every violated constraint. An empty report means feasible.
pub fn validate(inst: &Instance, state: &DecisionState, mode: PlacementMode) -> ValidationReport {
    let net = &inst.network;
    let cat = &inst.catalog;
    let mut v = Vec::new();

    for (what, vals) in [("s", &state.s), ("phi", &state.phi), ("y", &state.y)] {
        for (index, &value) in vals.iter().enumerate() {
            if !(-TOL..=1.0 + TOL).contains(&value) {
                v.push(Violation::OutOfRange { what, index, value });
            }
        }
    }

    let deployed: Vec<bool> = (0..cat.num_services()).map(|s| state.is_deployed(s)).collect();

    for i in 0..net.num_nodes() {
        for k in 0..cat.num_tasks() {
            let range = cat.task_slots(k);
            let sum: f64 = range.clone().map(|slot| state.s(i, slot)).sum();
            if (sum - 1.0).abs() > TOL {
                v.push(Violation::SelectionSum { node: i, task: k, sum });
            }
            for slot in range {
                if let super::Slot::Remote { service } = cat.slot(slot) {
                    let value = state.s(i, slot);
                    if !deployed[service] && value.abs() > TOL {
                        v.push(Violation::UndeployedSelected { node: i, slot, value });
                    }
                }
            }
        }
        let used = state.storage_used(inst, i);
        if used > net.storage_capacity[i] + TOL {
            v.push(Violation::StorageExceeded {
                node: i,
                used,
                capacity: net.storage_capacity[i],
            });
        }
    }

    for svc in 0..cat.num_services() {
        for i in 0..net.num_nodes() {
            let y = state.y(i, svc);
            if mode == PlacementMode::Fixed && y != 0.0 && y != 1.0 {
                v.push(Violation::NonBinaryPlacement { node: i, service: svc, value: y });
            }
            let sum: f64 = net.out_links(i).iter().map(|&l| state.phi(svc, l)).sum();
            let expected = if deployed[svc] { 1.0 } else { 0.0 };
            if (y + sum - expected).abs() > TOL {
                v.push(Violation::FlowConservation {
                    node: i,
                    service: svc,
                    sum: y + sum,
                    expected,
                });
            }
        }
        if !check_loop_free(net, state, svc) {
            v.push(Violation::RoutingLoop { service: svc });
        }
    }

    ValidationReport { violations: v }
}
