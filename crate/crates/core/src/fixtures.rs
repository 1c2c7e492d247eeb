//! Small hand-checkable instances shared by tests and benches.

use crate::model::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn service(model: usize, model_size: f64, utility: f64) -> Service {
    Service {
        task: 0,
        model,
        req_size: 0.25,
        res_size: 0.75,
        model_size,
        workload: 1.0,
        utility,
    }
}

fn assemble(name: &str, network: NetworkModel, catalog: ServiceCatalog, profile: RequestProfile, mobility: MobilityModel, cost: CostModel) -> Instance {
    Instance {
        name: name.to_string(),
        network,
        catalog,
        profile,
        mobility,
        cost,
    }
}

/// Nodes A=0, B=1, one link pair, `mu = nu = 10`, mm1 delays, one service
/// with `u = 0.1`, demand `r_A = 1` only. Mobility `Lambda_A` on A→B.
pub fn two_node_line(lambda_a: f64) -> Instance {
    let network = NetworkModel::new(2, &[(0, 1, 10.0)], vec![10.0; 2], vec![10.0; 2]).unwrap();
    let catalog = ServiceCatalog::new(1, vec![None], vec![service(1, 1.0, 0.1)], 1.0).unwrap();
    let mut profile = RequestProfile::uniform(2, 1, 0.0);
    profile.set_rate(0, 0, 1.0);
    let mobility = MobilityModel::from_totals(&network, &[lambda_a, 0.0], &[1.0, 1.0]).unwrap();
    assemble("two_node_line", network, catalog, profile, mobility, CostModel::uniform(DelayFamily::Mm1))
}

/// The two-node state: A selects the service, B hosts it, A forwards to B.
pub fn two_node_state(inst: &Instance) -> DecisionState {
    let mut st = DecisionState::zeros(inst);
    st.set_s(0, 0, 1.0);
    st.set_s(1, 0, 1.0);
    st.set_y(1, 0, 1.0);
    st.set_phi(0, inst.network.link_id(0, 1).unwrap(), 1.0);
    st
}

/// Path 0-1-...-(n-1), `nsv` services of task 0 and no local model.
pub fn line(n: usize, nsv: usize, mu: f64) -> Instance {
    let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, mu)).collect();
    let network = NetworkModel::new(n, &edges, vec![mu; n], vec![100.0; n]).unwrap();
    let services = (0..nsv).map(|m| service(m + 1, 1.0, 0.1 * (m + 1) as f64)).collect();
    let catalog = ServiceCatalog::new(1, vec![None], services, 1.0).unwrap();
    let profile = RequestProfile::uniform(n, 1, 1.0);
    let mobility = MobilityModel::none(&network);
    assemble("line", network, catalog, profile, mobility, CostModel::default())
}

/// `side x side` grid, `mu = nu = 10`, `R = 20`, `Lambda = 0.1` with
/// uniform `q`. Each of `n_tasks` tasks has a local model and two services
/// of size 10.
pub fn grid(side: usize, n_tasks: usize) -> Instance {
    let n = side * side;
    let mut edges = Vec::new();
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            if c + 1 < side {
                edges.push((i, i + 1, 10.0));
            }
            if r + 1 < side {
                edges.push((i, i + side, 10.0));
            }
        }
    }
    let network = NetworkModel::new(n, &edges, vec![10.0; n], vec![20.0; n]).unwrap();
    let mut services = Vec::new();
    for k in 0..n_tasks {
        for m in 1..=2 {
            services.push(Service {
                task: k,
                model: m,
                req_size: 0.25,
                res_size: 0.75,
                model_size: 10.0,
                workload: 1.0,
                utility: 0.2 * m as f64,
            });
        }
    }
    let local = vec![Some(LocalModel { workload: 0.1, utility: 0.1 }); n_tasks];
    let catalog = ServiceCatalog::new(n_tasks, local, services, 1.0).unwrap();
    let profile = RequestProfile::uniform(n, n_tasks, 0.5);
    let mobility = MobilityModel::none(&network).with_uniform_total(&network, 0.1);
    let network = network.with_delays(0.0, 1.0);
    assemble("grid", network, catalog, profile, mobility, CostModel::default())
}

/// Diamond 0→{1,2}→3 (links in both directions), one service, no local model.
pub fn diamond(mu: f64) -> Instance {
    let edges = [(0, 1, mu), (0, 2, mu), (1, 3, mu), (2, 3, mu)];
    let network = NetworkModel::new(4, &edges, vec![mu; 4], vec![10.0; 4]).unwrap();
    let catalog = ServiceCatalog::new(1, vec![None], vec![service(1, 1.0, 0.1)], 1.0).unwrap();
    let mut profile = RequestProfile::uniform(4, 1, 0.0);
    profile.set_rate(0, 0, 1.0);
    let mobility = MobilityModel::none(&network);
    assemble("diamond", network, catalog, profile, mobility, CostModel::uniform(DelayFamily::Mm1))
}

/// Two nodes; node 0 has storage `cap`, node 1 fits every service.
/// One task, no local model, services with the given model sizes.
pub fn pair_with_services(sizes: &[f64], cap: f64) -> Instance {
    let total: f64 = sizes.iter().sum();
    let network = NetworkModel::new(2, &[(0, 1, 10.0)], vec![10.0; 2], vec![cap, total]).unwrap();
    let services = sizes
        .iter()
        .enumerate()
        .map(|(m, &sz)| service(m + 1, sz, 0.1))
        .collect();
    let catalog = ServiceCatalog::new(1, vec![None], services, 1.0).unwrap();
    let profile = RequestProfile::uniform(2, 1, 1.0);
    let mobility = MobilityModel::none(&network);
    assemble("pair", network, catalog, profile, mobility, CostModel::default())
}

/// Random connected instance with 3 to 5 nodes, constant delays, one task
/// and one or two unit-size services, plus a fixed placement drawn from the
/// same seed.
pub fn tiny_constant(seed: u64) -> (Instance, DecisionState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=5);
    let mut edges: Vec<(usize, usize, f64)> = (1..n).map(|i| (rng.random_range(0..i), i, rng.random_range(2.0..10.0))).collect();
    for a in 0..n {
        for b in a + 1..n {
            if !edges.iter().any(|e| (e.0, e.1) == (a, b)) && rng.random_bool(0.3) {
                edges.push((a, b, rng.random_range(2.0..10.0)));
            }
        }
    }
    let nu: Vec<f64> = (0..n).map(|_| rng.random_range(2.0..10.0)).collect();
    let network = NetworkModel::new(n, &edges, nu, vec![10.0; n]).unwrap().with_delays(0.05, 1.0);
    let nsv = rng.random_range(1..=2);
    let services = (0..nsv).map(|m| service(m + 1, 1.0, rng.random_range(0.0..0.5))).collect();
    let local = vec![rng.random_bool(0.5).then_some(LocalModel { workload: 0.5, utility: 0.1 })];
    let catalog = ServiceCatalog::new(1, local, services, 1.0).unwrap();
    let rates = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let profile = RequestProfile::new(n, 1, rates).unwrap();
    let mobility = MobilityModel::none(&network);
    let inst = assemble("tiny", network, catalog, profile, mobility, CostModel::uniform(DelayFamily::Constant));
    let mut hosts = vec![vec![false; n]; nsv];
    for h in hosts.iter_mut() {
        h[rng.random_range(0..n)] = true;
        if rng.random_bool(0.4) {
            h[rng.random_range(0..n)] = true;
        }
    }
    let st = state_from_hosts(&inst, &hosts, PlacementMode::Fixed, &mut rng).unwrap();
    (inst, st)
}
