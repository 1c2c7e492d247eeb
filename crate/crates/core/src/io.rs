//! CSV output. Files are written to a sibling temp file and renamed, so a
//! reader never sees a half-written file.

use crate::dmp::OverheadStats;
use crate::error::{Error, Result};
use crate::grad::GradientBundle;
use crate::model::Instance;
use serde::Serialize;
use std::fs;
use std::path::Path;

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct OverheadRow {
    pub node: usize,
    pub degree: usize,
    pub msgs_sent: usize,
    pub msgs_received: usize,
    pub flops: u64,
}

pub fn overhead_rows(inst: &Instance, stats: &OverheadStats) -> Vec<OverheadRow> {
    (0..inst.num_nodes())
        .map(|i| OverheadRow {
            node: i,
            degree: inst.network.degree(i),
            msgs_sent: stats.msgs_sent[i],
            msgs_received: stats.msgs_received[i],
            flops: stats.flops[i],
        })
        .collect()
}

/// One gradient component, `kind` is `s`, `phi` or `y`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct GradientRow {
    pub kind: String,
    /// Node for `s` and `y`, link source for `phi`.
    pub node: usize,
    /// Slot for `s`, service otherwise.
    pub index: usize,
    /// Link destination for `phi`, empty otherwise.
    pub to: Option<usize>,
    pub value: f64,
}

pub fn gradient_rows(inst: &Instance, g: &GradientBundle) -> Vec<GradientRow> {
    let n = inst.num_nodes();
    let ns = inst.catalog.num_slots();
    let nsv = inst.num_services();
    let nl = inst.num_links();
    let mut rows = Vec::with_capacity(g.ds.len() + g.dphi.len() + g.dy.len());
    for i in 0..n {
        for slot in 0..ns {
            rows.push(GradientRow {
                kind: "s".into(),
                node: i,
                index: slot,
                to: None,
                value: g.ds[i * ns + slot],
            });
        }
    }
    for svc in 0..nsv {
        for l in 0..nl {
            let link = inst.network.link(l);
            rows.push(GradientRow {
                kind: "phi".into(),
                node: link.src,
                index: svc,
                to: Some(link.dst),
                value: g.dphi[svc * nl + l],
            });
        }
    }
    for i in 0..n {
        for svc in 0..nsv {
            rows.push(GradientRow {
                kind: "y".into(),
                node: i,
                index: svc,
                to: None,
                value: g.dy[i * nsv + svc],
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{fixtures, flow, grad, FlowOptions};

    #[test]
    fn gradient_dump_round_trips() {
        let inst = fixtures::two_node_line(0.1);
        let st = fixtures::two_node_state(&inst);
        let fs = flow::solve_flow_fixed_point(&inst, &st, &FlowOptions::default()).unwrap();
        let g = grad::gradients(&inst, &st, &fs).unwrap();
        let rows = gradient_rows(&inst, &g);
        assert_eq!(rows.len(), g.ds.len() + g.dphi.len() + g.dy.len());
        let dir = std::env::temp_dir().join(format!("tunnelroute-io-{}", std::process::id()));
        let path = dir.join("grad.csv");
        write_csv(&path, &rows).unwrap();
        let back: Vec<GradientRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
        assert!(!dir.join("grad.csv.tmp").exists());
        fs::remove_dir_all(dir).unwrap();
    }
}
