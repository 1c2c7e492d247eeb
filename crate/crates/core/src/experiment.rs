//! Batch experiments: runs, parameter sweeps and verification reports
//! driven by a TOML config.

use crate::baselines::{common_initial_state, run_algorithm, Algorithm};
use crate::dmp::{run_dmp_round, DmpOptions};
use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions, FlowState};
use crate::grad::{self, GradientBundle};
use crate::io;
use crate::lfw::{BlockedSets, GradSource, LfwConfig, LfwOutcome, StepSchedule};
use crate::model::{random_feasible_state, DecisionState, Instance, PlacementMode};
use crate::scenarios::{self, MobilityKind, ScenarioSpec, Topology};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

fn default_iterations() -> usize {
    2000
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_gradients() -> GradSource {
    GradSource::Dmp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    #[default]
    None,
    Lambda,
    Eta,
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Eta => "eta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRef {
    pub preset: String,
    #[serde(default)]
    pub mobility: Option<MobilityKind>,
    /// Label used in output files; defaults to the preset name, suffixed
    /// with the mobility kind when one is given.
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub file: PathBuf,
}

/// A scenario entry: a preset name, a preset with overrides, a scenario
/// file, or an inline spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Name(String),
    Preset(PresetRef),
    File(FileRef),
    Spec(ScenarioSpec),
}

impl ScenarioRef {
    /// Resolves to a spec. Relative scenario and edge-list paths are taken
    /// relative to `base`.
    pub fn resolve(&self, base: &Path) -> Result<ScenarioSpec> {
        let mut spec = match self {
            ScenarioRef::Name(n) => ScenarioSpec::preset(n)?,
            ScenarioRef::Preset(p) => {
                let mut s = ScenarioSpec::preset(&p.preset)?;
                if let Some(m) = p.mobility {
                    s = s.with_mobility(m);
                    s.name = format!("{}-{}", p.preset, m.name());
                }
                if let Some(l) = &p.label {
                    s.name = l.clone();
                }
                s
            }
            ScenarioRef::File(f) => load_scenario(&base.join(&f.file))?,
            ScenarioRef::Spec(s) => s.clone(),
        };
        if let Topology::EdgeListFile { path: Some(p) } = &mut spec.topology {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(Error::FileNotFound(p.display().to_string()));
            }
        }
        Ok(spec)
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec> {
    let text = fs::read_to_string(path).map_err(|_| Error::FileNotFound(path.display().to_string()))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Scenario file text: the description as comments, then the fields.
pub fn scenario_toml(spec: &ScenarioSpec) -> Result<String> {
    let body = toml::to_string(spec).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = String::new();
    for line in scenarios::describe(spec).lines() {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str(&body);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenarios: Vec<ScenarioRef>,
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sweep: SweepAxis,
    /// Sweep points: total transition rate per node, or eta.
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Gradient source for dmp-lfw-p.
    #[serde(default = "default_gradients")]
    pub gradients: GradSource,
    #[serde(default)]
    pub rtt_noise: f64,
    #[serde(default)]
    pub record_time: bool,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
    /// Directory relative scenario paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::FileNotFound(path.display().to_string()))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.specs()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        if self.sweep != SweepAxis::None && self.values.is_empty() {
            return Err(Error::Config(format!("sweep over {} needs values", self.sweep.name())));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("sweep values must be finite and nonnegative".into()));
        }
        match self.schedule {
            StepSchedule::Constant { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
                return Err(Error::Config(format!("step size {alpha} outside (0, 1]")))
            }
            StepSchedule::Diminishing { a, b } if !(a > 0.0 && b >= 0.0) => {
                return Err(Error::Config("diminishing schedule needs a > 0, b >= 0".into()))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn specs(&self) -> Result<Vec<ScenarioSpec>> {
        self.scenarios.iter().map(|s| s.resolve(&self.base_dir)).collect()
    }

    fn lfw_config(&self) -> LfwConfig {
        LfwConfig {
            max_iter: self.iterations,
            schedule: self.schedule,
            grad_source: self.gradients,
            dmp: DmpOptions {
                rtt_noise: self.rtt_noise,
                ..DmpOptions::default()
            },
            record_time: self.record_time,
            ..LfwConfig::default()
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub algorithm: String,
    pub seed: u64,
    pub iter: usize,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub res_s: f64,
    pub res_phi: f64,
    pub res_y: f64,
    pub msgs_per_node: f64,
    pub flops_per_node: f64,
    pub wall_ms: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub algorithm: String,
    pub runs: usize,
    /// Mean converged J over the runs that completed.
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    /// `(J + U) / max over algorithms of (J + U)`, where `U` is the
    /// best attainable utility term, so values lie in (0, 1].
    pub normalized_j: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub scenario: String,
    pub algorithm: String,
    pub seed: u64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub avg_qos: f64,
    pub avg_latency: f64,
    pub status: String,
}

fn status_of(err: Option<&Error>) -> String {
    match err {
        None => "ok".into(),
        Some(Error::InfeasibleLoad { .. }) => "infeasible".into(),
        Some(_) => "error".into(),
    }
}

/// `eta * sum_i sum_k r_ik max_m u_km`: adding it makes `J` a positive
/// latency-plus-regret total.
pub fn utility_offset(inst: &Instance) -> f64 {
    let cat = &inst.catalog;
    let mut total = 0.0;
    for k in 0..cat.num_tasks() {
        let umax = cat.task_slots(k).map(|sl| cat.slot_utility(sl)).fold(f64::NEG_INFINITY, f64::max);
        let rk: f64 = (0..inst.num_nodes()).map(|i| inst.profile.rate(i, k)).sum();
        total += cat.eta * umax * rk;
    }
    total
}

struct Prepared {
    label: String,
    seed: u64,
    inst: Instance,
    init: DecisionState,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Vec<Prepared>> {
    let mut out = Vec::new();
    for spec in cfg.specs()? {
        for &seed in &cfg.seeds {
            let inst = scenarios::generate(&spec.clone().with_seed(spec.seed.wrapping_add(seed)))?;
            let init = common_initial_state(&inst, seed)?;
            out.push(Prepared {
                label: spec.name.clone(),
                seed,
                inst,
                init,
            });
        }
    }
    Ok(out)
}

fn outcome_rows(p: &Prepared, alg: Algorithm, res: &Result<LfwOutcome>) -> Vec<ResultRow> {
    let row = |iter, j, q, res_s, res_phi, res_y, msgs, flops, wall, status: &str| ResultRow {
        scenario: p.label.clone(),
        algorithm: alg.to_string(),
        seed: p.seed,
        iter,
        j,
        q,
        res_s,
        res_phi,
        res_y,
        msgs_per_node: msgs,
        flops_per_node: flops,
        wall_ms: wall,
        status: status.to_string(),
    };
    match res {
        Ok(o) => {
            let status = status_of(o.aborted.as_ref());
            o.trajectory
                .iter()
                .map(|r| row(r.iter, r.j, r.q, r.res_s, r.res_phi, r.res_y, r.msgs_per_node, r.flops_per_node, r.wall_ms, &status))
                .collect()
        }
        Err(e) => vec![row(0, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, 0.0, 0.0, 0.0, &status_of(Some(e)))],
    }
}

pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

pub fn summarize(rows: &[ResultRow], offsets: &[(String, f64)]) -> Vec<SummaryRow> {
    // Last row of each (scenario, algorithm, seed) run, in first-seen order.
    let mut finals: Vec<&ResultRow> = Vec::new();
    for r in rows {
        match finals.iter_mut().find(|f| f.scenario == r.scenario && f.algorithm == r.algorithm && f.seed == r.seed) {
            Some(f) => *f = r,
            None => finals.push(r),
        }
    }
    let mut out: Vec<SummaryRow> = Vec::new();
    for f in &finals {
        if out.iter().any(|s| s.scenario == f.scenario && s.algorithm == f.algorithm) {
            continue;
        }
        let group: Vec<&&ResultRow> = finals.iter().filter(|g| g.scenario == f.scenario && g.algorithm == f.algorithm).collect();
        let done: Vec<&&ResultRow> = group.iter().copied().filter(|g| g.j.is_finite()).collect();
        let n = done.len().max(1) as f64;
        let status = group.iter().map(|g| g.status.as_str()).find(|s| *s != "ok").unwrap_or("ok");
        out.push(SummaryRow {
            scenario: f.scenario.clone(),
            algorithm: f.algorithm.clone(),
            runs: group.len(),
            j: if done.is_empty() { f64::NAN } else { done.iter().map(|g| g.j).sum::<f64>() / n },
            q: if done.is_empty() { f64::NAN } else { done.iter().map(|g| g.q).sum::<f64>() / n },
            normalized_j: f64::NAN,
            status: status.to_string(),
        });
    }
    for (scen, off) in offsets {
        let max = out
            .iter()
            .filter(|s| &s.scenario == scen && s.j.is_finite())
            .map(|s| s.j + off)
            .fold(f64::NEG_INFINITY, f64::max);
        for s in out.iter_mut().filter(|s| &s.scenario == scen && s.j.is_finite()) {
            s.normalized_j = (s.j + off) / max;
        }
    }
    out
}

const RUN_MANIFEST: &str = "\
results.csv      convergence: J and res_* versus iter per (scenario, algorithm, seed)
results.csv      overhead per iterate: msgs_per_node, flops_per_node (dmp gradients only)
summary.csv      normalized converged objective per scenario and algorithm (sm is a separate cost model; leave it out of cross-scenario bars)
overhead_*.csv   one DMP evaluation at the initial state: per-node messages and flops against degree
";

pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    let prepared = prepare(cfg)?;
    let lfw = cfg.lfw_config();
    let jobs: Vec<(usize, Algorithm)> = (0..prepared.len()).flat_map(|p| cfg.algorithms.iter().map(move |&a| (p, a))).collect();
    let pool = cfg.pool()?;
    let per_job: Vec<Vec<ResultRow>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, alg)| {
                let pr = &prepared[p];
                outcome_rows(pr, alg, &run_algorithm(&pr.inst, alg, &pr.init, &lfw))
            })
            .collect()
    });
    let rows: Vec<ResultRow> = per_job.into_iter().flatten().collect();

    let mut offsets: Vec<(String, f64)> = Vec::new();
    for p in &prepared {
        if !offsets.iter().any(|(s, _)| *s == p.label) {
            offsets.push((p.label.clone(), utility_offset(&p.inst)));
        }
    }
    let summary = summarize(&rows, &offsets);

    let mut files = Vec::new();
    let path = out_dir.join("results.csv");
    io::write_csv(&path, &rows)?;
    files.push(path);
    let path = out_dir.join("summary.csv");
    io::write_csv(&path, &summary)?;
    files.push(path);
    for p in &prepared {
        let fs = flow::solve_flow_fixed_point(&p.inst, &p.init, &FlowOptions::default())?;
        let (_, stats) = run_dmp_round(&p.inst, &p.init, &fs, &lfw.dmp)?;
        let path = out_dir.join(format!("overhead_{}_{}.csv", p.label, p.seed));
        io::write_csv(&path, &io::overhead_rows(&p.inst, &stats))?;
        files.push(path);
    }
    let path = out_dir.join("plots.txt");
    io::write_atomic(&path, RUN_MANIFEST.as_bytes())?;
    files.push(path);
    Ok(RunOutput { rows, summary, files })
}

const SWEEP_MANIFEST: &str = "\
sweep.csv   axis=lambda: J versus value per algorithm (mobility trend)
sweep.csv   axis=eta: avg_latency versus avg_qos along increasing value (tradeoff frontier)
";

pub fn cmd_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<SweepRow>> {
    if cfg.sweep == SweepAxis::None {
        return Err(Error::Config("sweep needs `sweep = \"lambda\"` or `\"eta\"`".into()));
    }
    let prepared = prepare(cfg)?;
    let lfw = cfg.lfw_config();
    let mut jobs = Vec::new();
    for (vi, _) in cfg.values.iter().enumerate() {
        for p in 0..prepared.len() {
            for &a in &cfg.algorithms {
                jobs.push((vi, p, a));
            }
        }
    }
    let pool = cfg.pool()?;
    let rows: Vec<SweepRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(vi, p, alg)| {
                let pr = &prepared[p];
                let value = cfg.values[vi];
                let inst = match cfg.sweep {
                    SweepAxis::Lambda => pr.inst.with_mobility_total(value),
                    _ => pr.inst.with_eta(value),
                };
                let res = run_algorithm(&inst, alg, &pr.init, &lfw);
                let mut row = SweepRow {
                    axis: cfg.sweep.name().into(),
                    value,
                    scenario: pr.label.clone(),
                    algorithm: alg.to_string(),
                    seed: pr.seed,
                    j: f64::NAN,
                    q: f64::NAN,
                    avg_qos: f64::NAN,
                    avg_latency: f64::NAN,
                    status: String::new(),
                };
                let out = match res {
                    Ok(o) => o,
                    Err(e) => {
                        row.status = status_of(Some(&e));
                        return row;
                    }
                };
                row.status = status_of(out.aborted.as_ref());
                match flow::solve_flow_fixed_point(&inst, &out.state, &FlowOptions::default()) {
                    Ok(fs) => {
                        let obj = flow::evaluate_objective(&inst, &out.state, &fs);
                        let (qos, lat) = flow::qos_latency(&inst, &out.state, &fs);
                        row.j = obj.j;
                        row.q = obj.q;
                        row.avg_qos = qos;
                        row.avg_latency = lat;
                    }
                    Err(e) => row.status = status_of(Some(&e)),
                }
                row
            })
            .collect()
    });
    io::write_csv(&out_dir.join("sweep.csv"), &rows)?;
    io::write_atomic(&out_dir.join("plots.txt"), SWEEP_MANIFEST.as_bytes())?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect()
    }
}

pub type GradientFn = fn(&Instance, &DecisionState, &FlowState) -> Result<GradientBundle>;

/// Verification with the exact oracle gradients.
pub fn cmd_verify(inst: &Instance, seed: u64, dump: Option<&Path>) -> Result<VerifyReport> {
    verify_with(inst, seed, grad::gradients, dump)
}

/// Checks `gradient` against finite differences and DMP, plus the
/// objective identity and fixed-point residual, on one fixed-mode and one
/// joint-mode random state.
pub fn verify_with(inst: &Instance, seed: u64, gradient: GradientFn, dump: Option<&Path>) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let mut fd_fail = 0;
    let mut fd_checked = 0;
    let mut fd_worst = String::new();
    let mut dmp_diff = 0.0f64;
    let mut static_diff = 0.0f64;
    let mut ident = 0.0f64;
    let mut resid = 0.0f64;
    let tight = FlowOptions::with_tol(1e-12);
    let no_mobility = inst.mobility.rates().iter().all(|&r| r == 0.0);
    for (k, mode) in [PlacementMode::Fixed, PlacementMode::Joint].into_iter().enumerate() {
        let st = random_feasible_state(inst, seed.wrapping_add(k as u64), mode)?;
        let fs = flow::solve_flow_fixed_point(inst, &st, &tight)?;
        resid = resid.max(fs.residual);
        let g = gradient(inst, &st, &fs)?;
        let blocked = BlockedSets::build(inst, &st, mode)?;
        let fd = grad::finite_difference_check(inst, &st, &g, &blocked, 1e-6, 1e-12, 1e-4, 1e-9)?;
        fd_checked += fd.checked;
        fd_fail += fd.failures;
        if !fd.passed() && fd_worst.is_empty() {
            fd_worst = fd.worst.clone();
        }
        let (dmp, _) = run_dmp_round(inst, &st, &fs, &DmpOptions::default())?;
        dmp_diff = dmp_diff.max(dmp.max_abs_diff(&g));
        if no_mobility {
            static_diff = static_diff.max(dmp.max_abs_diff(&grad::static_gradients(inst, &st, &fs)));
        }
        let obj = flow::evaluate_objective(inst, &st, &fs);
        ident = ident.max((obj.j + inst.profile.total() * obj.q).abs() / (1.0 + obj.j.abs()));
        if k == 0 {
            if let Some(path) = dump {
                io::write_csv(path, &io::gradient_rows(inst, &g))?;
            }
        }
    }
    report.checks.push(Check {
        name: "finite-difference",
        pass: fd_fail == 0,
        detail: format!("{fd_checked} components, {fd_fail} above rel 1e-4 {fd_worst}"),
    });
    report.checks.push(Check {
        name: "dmp-vs-oracle",
        pass: dmp_diff <= 1e-9,
        detail: format!("max abs diff {dmp_diff:.3e}"),
    });
    if no_mobility {
        report.checks.push(Check {
            name: "dmp-equals-static",
            pass: static_diff == 0.0,
            detail: format!("max abs diff {static_diff:.3e}"),
        });
    }
    report.checks.push(Check {
        name: "objective-identity",
        pass: ident <= 1e-9,
        detail: format!("max |J + r Q| / (1 + |J|) = {ident:.3e}"),
    });
    report.checks.push(Check {
        name: "fixed-point-residual",
        pass: resid <= tight.tol,
        detail: format!("max residual {resid:.3e}"),
    });
    Ok(report)
}
