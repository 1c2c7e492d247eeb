//! Plain-text scenario files.
//!
//! ```text
//! # comment
//! name = grid
//! nodes = 9
//! tasks = 5
//! eta = 1
//! ap_delay = 0
//! local_delay = 1
//! link_delay = taylor3      # mm1 | taylor3 | constant
//! node_delay = taylor3
//! default_rate = 1          # r_i^k for pairs not listed under [rates]
//!
//! [nodes]                   # i nu R [layer]
//! [links]                   # src dst mu   (reverse added if missing)
//! [mobility]                # src dst lambda
//! [services]                # k m L_req L_res L_mod W u   (m = 0: local model)
//! [rates]                   # i k r
//! ```

use super::*;
use std::fmt::Write as _;
use std::path::Path;

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse::<T>()
        .map_err(|_| perr(line, format!("cannot parse `{tok}`")))
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Header,
    Nodes,
    Links,
    Mobility,
    Services,
    Rates,
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    let mut section = Section::Header;
    let mut keys: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut nodes: Vec<(usize, f64, f64, Option<usize>)> = Vec::new();
    let mut links: Vec<(usize, usize, f64)> = Vec::new();
    let mut mobility: Vec<(usize, usize, f64, usize)> = Vec::new();
    let mut services: Vec<(usize, usize, [f64; 5])> = Vec::new();
    let mut rates: Vec<(usize, usize, f64, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = match &line[1..line.len() - 1] {
                "nodes" => Section::Nodes,
                "links" => Section::Links,
                "mobility" => Section::Mobility,
                "services" => Section::Services,
                "rates" => Section::Rates,
                other => return Err(perr(lineno, format!("unknown section [{other}]"))),
            };
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::Header => {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| perr(lineno, "expected `key = value`"))?;
                keys.insert(k.trim().to_string(), (v.trim().to_string(), lineno));
            }
            Section::Nodes => {
                if toks.len() != 3 && toks.len() != 4 {
                    return Err(perr(lineno, "node row needs `i nu R [layer]`"));
                }
                let layer = match toks.get(3) {
                    Some(t) => Some(num(t, lineno)?),
                    None => None,
                };
                nodes.push((num(toks[0], lineno)?, num(toks[1], lineno)?, num(toks[2], lineno)?, layer));
            }
            Section::Links => {
                if toks.len() != 3 {
                    return Err(perr(lineno, "link row needs `src dst mu`"));
                }
                links.push((num(toks[0], lineno)?, num(toks[1], lineno)?, num(toks[2], lineno)?));
            }
            Section::Mobility => {
                if toks.len() != 3 {
                    return Err(perr(lineno, "mobility row needs `src dst lambda`"));
                }
                mobility.push((num(toks[0], lineno)?, num(toks[1], lineno)?, num(toks[2], lineno)?, lineno));
            }
            Section::Services => {
                if toks.len() != 7 {
                    return Err(perr(lineno, "service row needs `k m L_req L_res L_mod W u`"));
                }
                let mut vals = [0.0; 5];
                for (v, t) in vals.iter_mut().zip(&toks[2..]) {
                    *v = num(t, lineno)?;
                }
                services.push((num(toks[0], lineno)?, num(toks[1], lineno)?, vals));
            }
            Section::Rates => {
                if toks.len() != 3 {
                    return Err(perr(lineno, "rate row needs `i k r`"));
                }
                rates.push((num(toks[0], lineno)?, num(toks[1], lineno)?, num(toks[2], lineno)?, lineno));
            }
        }
    }

    let get = |k: &str| keys.get(k).map(|(v, l)| (v.as_str(), *l));
    let req = |k: &str| get(k).ok_or_else(|| perr(0, format!("missing key `{k}`")));
    let getf = |k: &str, default: f64| -> Result<f64> {
        match get(k) {
            Some((v, l)) => num(v, l),
            None => Ok(default),
        }
    };

    let name = get("name").map_or("unnamed".to_string(), |(v, _)| v.to_string());
    let (nv, nl) = req("nodes")?;
    let n: usize = num(nv, nl)?;
    let (kv, kl) = req("tasks")?;
    let n_tasks: usize = num(kv, kl)?;
    let family = |k: &str| -> Result<DelayFamily> {
        match get(k) {
            Some((v, l)) => v.parse().map_err(|e: String| perr(l, e)),
            None => Ok(DelayFamily::Taylor3),
        }
    };
    let cost = CostModel::new(family("link_delay")?, family("node_delay")?);

    let mut nu = vec![f64::NAN; n];
    let mut storage = vec![f64::NAN; n];
    let mut layer = vec![None; n];
    for &(i, a, b, lay) in &nodes {
        if i >= n {
            return Err(perr(0, format!("node {i} out of range")));
        }
        nu[i] = a;
        storage[i] = b;
        layer[i] = lay;
    }
    if let Some(i) = nu.iter().position(|x| x.is_nan()) {
        return Err(perr(0, format!("node {i} missing from [nodes]")));
    }
    let mut network = NetworkModel::new(n, &links, nu, storage)?.with_delays(getf("ap_delay", 0.0)?, getf("local_delay", 0.0)?);
    if layer.iter().any(|l| l.is_some()) {
        if layer.iter().any(|l| l.is_none()) {
            return Err(perr(0, "layer annotation must be given for all nodes or none"));
        }
        network.layer = Some(layer.into_iter().map(|l| l.unwrap()).collect());
    }

    let mut lam = vec![0.0; network.num_links()];
    for &(i, j, r, l) in &mobility {
        let id = network
            .link_id(i, j)
            .ok_or_else(|| perr(l, format!("mobility on unknown link ({i},{j})")))?;
        lam[id] = r;
    }
    let mobility = MobilityModel::new(&network, lam)?;

    let mut local = vec![None; n_tasks];
    let mut remote = Vec::new();
    for &(k, m, [lreq, lres, lmod, w, u]) in &services {
        if k >= n_tasks {
            return Err(perr(0, format!("service references task {k} >= tasks")));
        }
        if m == 0 {
            local[k] = Some(LocalModel { workload: w, utility: u });
        } else {
            remote.push(Service {
                task: k,
                model: m,
                req_size: lreq,
                res_size: lres,
                model_size: lmod,
                workload: w,
                utility: u,
            });
        }
    }
    let catalog = ServiceCatalog::new(n_tasks, local, remote, getf("eta", 1.0)?)?;

    let mut profile = RequestProfile::uniform(n, n_tasks, getf("default_rate", 1.0)?);
    for &(i, k, r, l) in &rates {
        if i >= n || k >= n_tasks {
            return Err(perr(l, "rate row out of range"));
        }
        profile.set_rate(i, k, r);
    }

    Ok(Instance {
        name,
        network,
        catalog,
        profile,
        mobility,
        cost,
    })
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::FileNotFound(path.display().to_string()))?;
    parse_instance(&text)
}

/// Serializes an instance; output is a pure function of the instance.
pub fn write_instance(inst: &Instance, header_comment: &str) -> String {
    let net = &inst.network;
    let cat = &inst.catalog;
    let mut out = String::new();
    for line in header_comment.lines() {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "name = {}", inst.name);
    let _ = writeln!(out, "nodes = {}", net.num_nodes());
    let _ = writeln!(out, "tasks = {}", cat.num_tasks());
    let _ = writeln!(out, "eta = {}", cat.eta);
    let _ = writeln!(out, "ap_delay = {}", net.ap_delay);
    let _ = writeln!(out, "local_delay = {}", net.local_delay);
    let _ = writeln!(out, "link_delay = {}", inst.cost.link);
    let _ = writeln!(out, "node_delay = {}", inst.cost.node);
    let default_rate = inst.profile.rate(0, 0);
    let _ = writeln!(out, "default_rate = {default_rate}");

    let _ = writeln!(out, "\n[nodes]");
    for i in 0..net.num_nodes() {
        match &net.layer {
            Some(l) => {
                let _ = writeln!(out, "{i} {} {} {}", net.node_capacity[i], net.storage_capacity[i], l[i]);
            }
            None => {
                let _ = writeln!(out, "{i} {} {}", net.node_capacity[i], net.storage_capacity[i]);
            }
        }
    }
    let _ = writeln!(out, "\n[links]");
    for (l, lk) in net.links().iter().enumerate() {
        let _ = writeln!(out, "{} {} {}", lk.src, lk.dst, net.link_capacity[l]);
    }
    let _ = writeln!(out, "\n[mobility]");
    for (l, lk) in net.links().iter().enumerate() {
        if inst.mobility.rate(l) > 0.0 {
            let _ = writeln!(out, "{} {} {}", lk.src, lk.dst, inst.mobility.rate(l));
        }
    }
    let _ = writeln!(out, "\n[services]");
    for k in 0..cat.num_tasks() {
        if let Some(lm) = cat.local(k) {
            let _ = writeln!(out, "{k} 0 0 0 0 {} {}", lm.workload, lm.utility);
        }
    }
    for s in cat.services() {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            s.task, s.model, s.req_size, s.res_size, s.model_size, s.workload, s.utility
        );
    }
    let _ = writeln!(out, "\n[rates]");
    for i in 0..net.num_nodes() {
        for k in 0..cat.num_tasks() {
            let r = inst.profile.rate(i, k);
            if r != default_rate {
                let _ = writeln!(out, "{i} {k} {r}");
            }
        }
    }
    out
}
