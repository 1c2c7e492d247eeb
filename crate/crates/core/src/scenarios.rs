//! Evaluation topologies and their default parameters.

use crate::error::{Error, Result};
use crate::model::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::PathBuf;

const DTEL_EDGES: &str = include_str!("../data/dtel.edges");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Topology {
    Grid { rows: usize, cols: usize },
    /// Complete `arity`-ary tree; children of one parent are chained.
    MecTree { levels: usize, arity: usize },
    ErdosRenyi { nodes: usize, p: f64 },
    /// Undirected edge list; `None` loads the bundled 68-node backbone.
    EdgeListFile { path: Option<PathBuf> },
    SmallWorld { nodes: usize, degree: usize, rewire: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MobilityKind {
    /// `q_ij` drawn uniformly and normalized per node.
    #[default]
    Rand,
    /// `q_ij = 1 / |N_i|`.
    Uni,
}

impl MobilityKind {
    pub fn name(self) -> &'static str {
        match self {
            MobilityKind::Rand => "rand",
            MobilityKind::Uni => "uni",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub topology: Topology,
    pub tasks: usize,
    pub services: usize,
    pub mu: f64,
    pub nu: f64,
    pub lambda: f64,
    pub storage: f64,
    #[serde(default)]
    pub mobility: MobilityKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub eta: f64,
    #[serde(default = "default_one")]
    pub local_delay: f64,
    #[serde(default)]
    pub ap_delay: f64,
}

fn default_one() -> f64 {
    1.0
}

impl ScenarioSpec {
    /// Table rows: grid, mec, er, dtel, sw.
    pub fn preset(name: &str) -> Result<ScenarioSpec> {
        let (topology, tasks, services, mu, lambda, storage) = match name {
            "grid" => (Topology::Grid { rows: 3, cols: 3 }, 5, 15, 10.0, 0.10, 20.0),
            "mec" => (Topology::MecTree { levels: 3, arity: 3 }, 5, 20, 10.0, 0.10, 20.0),
            "er" => (Topology::ErdosRenyi { nodes: 30, p: 0.15 }, 20, 40, 15.0, 0.15, 30.0),
            "dtel" => (Topology::EdgeListFile { path: None }, 30, 100, 15.0, 0.15, 30.0),
            "sw" => (
                Topology::SmallWorld {
                    nodes: 120,
                    degree: 4,
                    rewire: 0.1,
                },
                45,
                150,
                20.0,
                0.15,
                30.0,
            ),
            other => return Err(Error::Config(format!("unknown scenario preset `{other}`"))),
        };
        Ok(ScenarioSpec {
            name: name.to_string(),
            topology,
            tasks,
            services,
            mu,
            nu: mu,
            lambda,
            storage,
            mobility: MobilityKind::Rand,
            seed: 0,
            eta: 1.0,
            local_delay: 1.0,
            ap_delay: 0.0,
        })
    }

    pub fn with_mobility(mut self, kind: MobilityKind) -> Self {
        self.mobility = kind;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

pub const PRESETS: [&str; 5] = ["grid", "mec", "er", "dtel", "sw"];

fn grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                e.push((i, i + 1));
            }
            if r + 1 < rows {
                e.push((i, i + cols));
            }
        }
    }
    e
}

/// Edges and per-node depth of the chained tree.
fn mec_tree(levels: usize, arity: usize) -> (usize, Vec<(usize, usize)>, Vec<usize>) {
    let mut depth = vec![0];
    let mut edges = Vec::new();
    let mut frontier = vec![0usize];
    for d in 1..levels {
        let mut next = Vec::new();
        for &parent in &frontier {
            let mut prev: Option<usize> = None;
            for _ in 0..arity {
                let c = depth.len();
                depth.push(d);
                edges.push((parent, c));
                if let Some(p) = prev {
                    edges.push((p, c));
                }
                prev = Some(c);
                next.push(c);
            }
        }
        frontier = next;
    }
    (depth.len(), edges, depth)
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn erdos_renyi(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    for _ in 0..100 {
        let mut e = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random_bool(p) {
                    e.push((a, b));
                }
            }
        }
        if connected(n, &e) {
            return Ok(e);
        }
    }
    Err(Error::DisconnectedAfterRetries(100))
}

fn watts_strogatz(n: usize, k: usize, beta: f64, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    for _ in 0..100 {
        let mut set: BTreeSet<(usize, usize)> = BTreeSet::new();
        for i in 0..n {
            for h in 1..=k / 2 {
                set.insert(key(i, (i + h) % n));
            }
        }
        for h in 1..=k / 2 {
            for i in 0..n {
                let old = key(i, (i + h) % n);
                if !rng.random_bool(beta) || !set.contains(&old) {
                    continue;
                }
                let cands: Vec<usize> = (0..n).filter(|&j| j != i && !set.contains(&key(i, j))).collect();
                if let Some(&j) = cands.as_slice().choose(rng) {
                    set.remove(&old);
                    set.insert(key(i, j));
                }
            }
        }
        let e: Vec<_> = set.into_iter().collect();
        if connected(n, &e) {
            return Ok(e);
        }
    }
    Err(Error::DisconnectedAfterRetries(100))
}

/// Parses `src dst` rows (comments with `#`); node count is max id + 1.
pub fn parse_edge_list(text: &str) -> Result<(usize, Vec<(usize, usize)>)> {
    let mut edges = Vec::new();
    let mut n = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 2 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: "edge row needs `src dst`".into(),
            });
        }
        let parse = |t: &str| {
            t.parse::<usize>().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("cannot parse `{t}`"),
            })
        };
        let (a, b) = (parse(toks[0])?, parse(toks[1])?);
        n = n.max(a + 1).max(b + 1);
        edges.push((a, b));
    }
    Ok((n, edges))
}

/// Builds the instance for a spec; deterministic per seed.
pub fn generate(spec: &ScenarioSpec) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut layer = None;
    let (n, edges) = match &spec.topology {
        Topology::Grid { rows, cols } => (rows * cols, grid_edges(*rows, *cols)),
        Topology::MecTree { levels, arity } => {
            let (n, e, depth) = mec_tree(*levels, *arity);
            layer = Some(depth);
            (n, e)
        }
        Topology::ErdosRenyi { nodes, p } => (*nodes, erdos_renyi(*nodes, *p, &mut rng)?),
        Topology::EdgeListFile { path } => {
            let text = match path {
                None => DTEL_EDGES.to_string(),
                Some(p) => std::fs::read_to_string(p).map_err(|_| Error::FileNotFound(p.display().to_string()))?,
            };
            parse_edge_list(&text)?
        }
        Topology::SmallWorld { nodes, degree, rewire } => (*nodes, watts_strogatz(*nodes, *degree, *rewire, &mut rng)?),
    };
    let links: Vec<(usize, usize, f64)> = edges.iter().map(|&(a, b)| (a, b, spec.mu)).collect();
    let mut network = NetworkModel::new(n, &links, vec![spec.nu; n], vec![spec.storage; n])?
        .with_delays(spec.ap_delay, spec.local_delay);
    network.layer = layer;

    let size_period = ((spec.storage / 10.0).floor() as usize).max(1);
    let mut services = Vec::with_capacity(spec.services);
    for s in 0..spec.services {
        let task = s % spec.tasks;
        let m = s / spec.tasks + 1;
        services.push(Service {
            task,
            model: m,
            req_size: 0.25,
            res_size: 0.75,
            model_size: 10.0 * ((m - 1) % size_period + 1) as f64,
            workload: 1.0,
            utility: 0.1 + 0.2 * (m - 1) as f64,
        });
    }
    let local = vec![Some(LocalModel { workload: 0.1, utility: 0.1 }); spec.tasks];
    let catalog = ServiceCatalog::new(spec.tasks, local, services, spec.eta)?;
    let profile = RequestProfile::uniform(n, spec.tasks, 1.0);

    let q: Vec<f64> = match spec.mobility {
        MobilityKind::Uni => (0..network.num_links())
            .map(|l| 1.0 / network.degree(network.link(l).src) as f64)
            .collect(),
        MobilityKind::Rand => {
            let mut q = vec![0.0; network.num_links()];
            for i in 0..n {
                let out = network.out_links(i);
                let w: Vec<f64> = out.iter().map(|_| rng.random_range(0.0..1.0) + 1e-12).collect();
                let tot: f64 = w.iter().sum();
                for (&l, wl) in out.iter().zip(w) {
                    q[l] = wl / tot;
                }
            }
            q
        }
    };
    let mobility = MobilityModel::from_totals(&network, &vec![spec.lambda; n], &q)?;
    Ok(Instance {
        name: spec.name.clone(),
        network,
        catalog,
        profile,
        mobility,
        cost: CostModel::default(),
    })
}

/// Header comment for serialized scenario files.
pub fn describe(spec: &ScenarioSpec) -> String {
    let mut s = format!("scenario {} seed {}", spec.name, spec.seed);
    if let Topology::Grid { rows: 3, cols: 3 } = spec.topology {
        s.push_str("\ngrid is 3x3 (9 nodes); set rows/cols for larger grids");
    }
    s
}
