//! Command orchestration for the five-step protocol: estimate effects, score
//! the actual assignment against the optimum, then search threshold rules,
//! build scenario menus and trace the decision boundary. Every command
//! writes JSON (plus CSV sidecars for plotting) into the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::boundary::{self, BoundaryError};
use crate::cate::{self, CateEstimates, EstimationError};
use crate::config::{ConfigError, RunConfig};
use crate::data::{self, DataError, PolicyDataset};
use crate::output::{self, cell, opt_cell, Table, SCHEMA_VERSION};
use crate::search::{
    self, CurvePoint, SearchError, SelectionVar, ThresholdGrid, ThresholdSearchResult,
};
use crate::welfare::{self, AssignmentVector, WelfareError};

pub const ENV_DATA_DIR: &str = "POLOPT_DATA_DIR";
pub const ENV_THREADS: &str = "POLOPT_THREADS";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Io(String),
    #[error("estimation: {0}")]
    Estimation(#[from] EstimationError),
    #[error("boundary: {0}")]
    Boundary(#[from] BoundaryError),
    #[error("welfare: {0}")]
    Welfare(#[from] WelfareError),
    #[error("search: {0}")]
    Search(SearchError),
    #[error("no feasible threshold for {0}")]
    Infeasible(String),
    #[error("input checksum mismatch: manifest has {expected}, file has {actual}")]
    ChecksumMismatch { expected: String, actual: String },
}

impl From<SearchError> for RunError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::NoFeasiblePoint => RunError::Infeasible("search".into()),
            other => RunError::Search(other),
        }
    }
}

impl RunError {
    /// 2 for bad input or configuration, 3 for model failures, 4 when the
    /// search has no feasible point.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Data(_) | RunError::Io(_) => 2,
            RunError::Search(SearchError::UnknownVariable(_)) => 2,
            RunError::Estimation(_) | RunError::Boundary(_) | RunError::Welfare(_) => 3,
            RunError::Search(_) => 3,
            RunError::ChecksumMismatch { .. } => 2,
            RunError::Infeasible(_) => 4,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Estimate,
    Welfare,
    Search {
        vars: Vec<String>,
    },
    Menu {
        fixed: String,
        fixed_threshold: Option<f64>,
        varying: String,
    },
    Boundary {
        x: String,
        z: String,
    },
    All,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Welfare => "welfare",
            Command::Search { .. } => "search",
            Command::Menu { .. } => "menu",
            Command::Boundary { .. } => "boundary",
            Command::All => "all",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: String,
    pub outputs: Vec<String>,
    pub wall_clock_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub artifact_version: String,
    pub command: String,
    pub config: RunConfig,
    pub input: InputRecord,
    pub steps: Vec<StepRecord>,
}

/// Result of a command: the manifest, printed summary lines and, when a
/// search had no feasible point, the error to report after outputs are
/// written.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub summary: Vec<String>,
    pub deferred: Option<RunError>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.deferred.as_ref().map_or(0, RunError::exit_code)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Finds the data file: as given, then next to the config file, then under
/// `POLOPT_DATA_DIR`.
pub fn resolve_data_path(data: &Path, config_dir: Option<&Path>) -> PathBuf {
    if data.is_absolute() || data.exists() {
        return data.to_path_buf();
    }
    let candidates = config_dir
        .map(|d| d.join(data))
        .into_iter()
        .chain(std::env::var_os(ENV_DATA_DIR).map(|d| PathBuf::from(d).join(data)));
    for c in candidates {
        if c.exists() {
            return c;
        }
    }
    data.to_path_buf()
}

/// A loaded run: config, dataset, input fingerprint and effects.
struct Session<'a> {
    cfg: &'a RunConfig,
    ds: PolicyDataset,
    input: InputRecord,
    estimates: Option<CateEstimates>,
    tau: Vec<f64>,
    out_dir: PathBuf,
}

impl<'a> Session<'a> {
    fn open(cfg: &'a RunConfig, config_dir: Option<&Path>) -> Result<Self, RunError> {
        let path = resolve_data_path(&cfg.data, config_dir);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        let mut schema = cfg.schema.clone();
        if let Some(tau_col) = &cfg.tau_col {
            if !schema.covariate_cols.contains(tau_col) {
                schema.covariate_cols.push(tau_col.clone());
            }
        }
        let ds = data::load_dataset(bytes.as_slice(), &schema, cfg.delimiter as u8)?;
        let input = InputRecord {
            path: cfg.data.display().to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        };
        let out_dir = cfg.output.clone();
        fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
        Ok(Self {
            cfg,
            ds,
            input,
            estimates: None,
            tau: Vec::new(),
            out_dir,
        })
    }

    /// τ from the configured column, or from regression adjustment.
    fn ensure_effects(&mut self) -> Result<(), RunError> {
        if !self.tau.is_empty() {
            return Ok(());
        }
        if let Some(col) = &self.cfg.tau_col {
            self.tau = self.ds.numeric_column(col)?.to_vec();
        } else {
            self.ensure_estimates()?;
        }
        Ok(())
    }

    fn ensure_estimates(&mut self) -> Result<&CateEstimates, RunError> {
        if self.estimates.is_none() {
            let est = cate::estimate_cate(&self.ds, &self.cfg.model)?;
            if self.cfg.tau_col.is_none() {
                self.tau = est.tau.clone();
            }
            self.estimates = Some(est);
        }
        Ok(self.estimates.as_ref().expect("just set"))
    }

    fn t_star(&self) -> AssignmentVector {
        welfare::optimal_assignment(&self.tau)
    }

    /// T*, or everybody when screening is switched off.
    fn screen(&self) -> AssignmentVector {
        if self.cfg.star_screen {
            self.t_star()
        } else {
            AssignmentVector::all(self.tau.len())
        }
    }

    /// Benchmark effect for the decomposition: DIM when estimated, else mean τ.
    fn alpha(&self) -> f64 {
        match &self.estimates {
            Some(e) => e.ate_dim,
            None => crate::numeric::mean(&self.tau).unwrap_or(0.0),
        }
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<String, RunError> {
        let path = self.out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        Ok(name.to_string())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<String, RunError> {
        let bytes = output::to_json_bytes(value).map_err(|e| RunError::Io(e.to_string()))?;
        self.write(name, &bytes)
    }

    fn grid(&self, var: &str) -> Result<ThresholdGrid, RunError> {
        Ok(search::build_grid(&self.ds, var, &self.cfg.grid)?)
    }

    fn var<'s>(&'s self, name: &'s str) -> Result<SelectionVar<'s>, RunError> {
        Ok(SelectionVar::from_dataset(&self.ds, name)?)
    }
}

fn timed<T>(
    steps: &mut Vec<StepRecord>,
    step: &str,
    f: impl FnOnce() -> Result<(Vec<String>, T), RunError>,
) -> Result<T, RunError> {
    let start = Instant::now();
    let (outputs, value) = f()?;
    steps.push(StepRecord {
        step: step.to_string(),
        outputs,
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
    });
    Ok(value)
}

fn step_estimate(s: &mut Session) -> Result<(Vec<String>, String), RunError> {
    let bins = s.cfg.bins;
    let est = s.ensure_estimates()?.clone();
    let (treated, control) = (
        cate::fit_arm(&s.ds, crate::data::Arm::Treated, &s.cfg.model)?,
        cate::fit_arm(&s.ds, crate::data::Arm::Control, &s.cfg.model)?,
    );
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "model": s.cfg.model,
        "n": s.ds.n(),
        "n_treated": s.ds.treated_count(),
        "ate_dim": est.ate_dim,
        "dim_se": est.dim_se,
        "ate_ra": est.ate_ra,
        "att_ra": est.att_ra(),
        "arms": [treated, control],
        "ids": s.ds.ids(),
        "tau": est.tau,
        "tau_treated": est.tau_treated,
    });
    let hist = cate::cate_histogram(&est, bins);
    let hist_doc = json!({
        "schema_version": SCHEMA_VERSION,
        "bins": bins,
        "edges": hist.edges,
        "counts_all": hist.counts_all,
        "counts_treated": hist.counts_treated,
    });
    let outputs = vec![
        s.write_json("cate.json", &doc)?,
        s.write_json("hist.json", &hist_doc)?,
    ];
    let line = format!(
        "estimate: ate_dim={} (se {}) ate_ra={} n={} treated={}",
        cell(est.ate_dim),
        cell(est.dim_se),
        cell(est.ate_ra),
        s.ds.n(),
        s.ds.treated_count()
    );
    Ok((outputs, line))
}

fn step_welfare(s: &mut Session) -> Result<(Vec<String>, String), RunError> {
    s.ensure_effects()?;
    let actual = AssignmentVector::new(s.ds.treatment().to_vec())?;
    let t_star = s.t_star();
    let report = welfare::actual_welfare(&s.tau, &actual)?;
    let optimal = welfare::actual_welfare(&s.tau, &t_star)?;
    let decomposition = welfare::decompose_effect(&s.tau, &actual, s.alpha()).ok();
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "tau_source": s.cfg.tau_col.as_deref().unwrap_or("regression_adjustment"),
        "actual": report,
        "optimal": optimal,
        "decomposition": decomposition,
    });
    let outputs = vec![s.write_json("welfare.json", &doc)?];
    let line = format!(
        "welfare: W={} W*={} regret={} treated={} optimal_treated={}",
        cell(report.total_welfare),
        cell(report.w_star),
        cell(report.regret),
        report.n_treated,
        optimal.n_treated
    );
    Ok((outputs, line))
}

fn curve_table(vars: &[String], curve: &[CurvePoint]) -> Table {
    let mut header: Vec<String> = vars.iter().map(|v| format!("c_{v}")).collect();
    header.extend(
        [
            "total_welfare",
            "avg_welfare",
            "n_treated",
            "share_treated",
            "feasible",
        ]
        .map(String::from),
    );
    let mut t = Table::new(header);
    for p in curve {
        let mut row: Vec<String> = p.c.iter().map(|&c| cell(c)).collect();
        row.push(cell(p.report.total_welfare));
        row.push(opt_cell(p.report.avg_welfare));
        row.push(p.report.n_treated.to_string());
        row.push(cell(p.report.share_treated));
        row.push(p.feasible.to_string());
        t.push(row);
    }
    t
}

fn grid_doc(var: &str, g: &ThresholdGrid) -> serde_json::Value {
    json!({
        "var": var,
        "source": g.source().to_string(),
        "degenerate": g.degenerate,
        "values": g.values(),
    })
}

fn run_search(s: &mut Session, vars: &[String]) -> Result<ThresholdSearchResult, RunError> {
    s.ensure_effects()?;
    let grids = vars
        .iter()
        .map(|v| s.grid(v))
        .collect::<Result<Vec<_>, _>>()?;
    let sel = vars
        .iter()
        .map(|v| s.var(v))
        .collect::<Result<Vec<_>, _>>()?;
    let grid_refs: Vec<&ThresholdGrid> = grids.iter().collect();
    Ok(search::search_multivariate(
        &s.tau,
        &s.screen(),
        &sel,
        &grid_refs,
        s.cfg.objective,
        &s.cfg.constraints,
    )?)
}

/// Summary line plus the infeasibility reported after outputs are written.
type SearchLine = (String, Option<RunError>);

fn step_search(s: &mut Session, vars: &[String]) -> Result<(Vec<String>, SearchLine), RunError> {
    if vars.is_empty() {
        return Err(RunError::Config(ConfigError::Missing("select")));
    }
    let result = run_search(s, vars)?;
    let grids = vars
        .iter()
        .map(|v| s.grid(v))
        .collect::<Result<Vec<_>, _>>()?;
    let decomposition = result.best.as_ref().and_then(|b| {
        let rules: Vec<(&[f64], f64)> = vars
            .iter()
            .zip(&b.c)
            .map(|(v, &c)| (s.ds.numeric_column(v).expect("checked"), c))
            .collect();
        let assign = search::assign_conjunction(&s.screen(), &rules).ok()?;
        welfare::decompose_effect(&s.tau, &assign, s.alpha()).ok()
    });
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "selection_vars": result.selection_vars,
        "objective": result.objective,
        "constraints": s.cfg.constraints,
        "star_screen": s.cfg.star_screen,
        "grids": vars.iter().zip(&grids).map(|(v, g)| grid_doc(v, g)).collect::<Vec<_>>(),
        "angle_solution": result.angle_solution,
        "best": result.best,
        "decomposition": decomposition,
        "curve": result.curve,
    });
    let tag = vars.join("_");
    let outputs = vec![
        s.write_json(&format!("search_{tag}.json"), &doc)?,
        s.write(
            &format!("curve_{tag}.csv"),
            &curve_table(vars, &result.curve).to_csv_bytes(),
        )?,
    ];
    let (line, deferred) = match &result.best {
        Some(b) => (
            format!(
                "search {}: best c=({}) objective={} n_treated={} share={} angle_solution={}",
                vars.join(","),
                b.c.iter().map(|&c| cell(c)).collect::<Vec<_>>().join(","),
                opt_cell(result.objective.value(&b.report)),
                b.report.n_treated,
                cell(b.report.share_treated),
                result.angle_solution
            ),
            None,
        ),
        None => (
            format!("search {}: no feasible threshold", vars.join(",")),
            Some(RunError::Infeasible(vars.join(","))),
        ),
    };
    Ok((outputs, (line, deferred)))
}

fn step_menu(
    s: &mut Session,
    fixed: &str,
    fixed_threshold: Option<f64>,
    varying: &str,
) -> Result<(Vec<String>, String), RunError> {
    s.ensure_effects()?;
    let fixed_c = match fixed_threshold {
        Some(c) => c,
        None => {
            let r = run_search(s, &[fixed.to_string()])?;
            r.best
                .map(|b| b.c[0])
                .ok_or_else(|| RunError::Infeasible(fixed.to_string()))?
        }
    };
    let grid = s.grid(varying)?;
    let rows = search::scenario_menu(
        &s.tau,
        &s.screen(),
        (s.var(fixed)?, fixed_c),
        s.var(varying)?,
        &grid,
        s.cfg.objective,
    )?;
    let best_row = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| s.cfg.objective.value(&r.report).map(|v| (i, v)))
        .fold(None, |acc: Option<(usize, f64)>, (i, v)| match acc {
            Some((_, b)) if b >= v => acc,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i);
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "fixed": {"var": fixed, "threshold": fixed_c},
        "varying": varying,
        "objective": s.cfg.objective,
        "star_screen": s.cfg.star_screen,
        "best_row": best_row,
        "rows": rows,
    });
    let tag = format!("{fixed}_{varying}");
    let mut table = Table::new([
        format!("c_{varying}"),
        "total_welfare".into(),
        "avg_welfare".into(),
        "n_treated".into(),
        "share_treated".into(),
    ]);
    for r in &rows {
        table.push(vec![
            cell(r.c[0]),
            cell(r.report.total_welfare),
            opt_cell(r.report.avg_welfare),
            r.report.n_treated.to_string(),
            cell(r.report.share_treated),
        ]);
    }
    let outputs = vec![
        s.write_json(&format!("menu_{tag}.json"), &doc)?,
        s.write(&format!("menu_{tag}.csv"), &table.to_csv_bytes())?,
    ];
    let line = match best_row.map(|i| &rows[i]) {
        Some(r) => format!(
            "menu {fixed}>={} by {varying}: {} rows, best {varying}>={} objective={} n_treated={}",
            cell(fixed_c),
            rows.len(),
            cell(r.c[0]),
            opt_cell(s.cfg.objective.value(&r.report)),
            r.report.n_treated
        ),
        None => format!(
            "menu {fixed}>={} by {varying}: no row treats anyone",
            cell(fixed_c)
        ),
    };
    Ok((outputs, line))
}

fn step_boundary(s: &mut Session, x: &str, z: &str) -> Result<(Vec<String>, String), RunError> {
    s.ensure_effects()?;
    let xv = s.var(x)?.values;
    let zv = s.var(z)?.values;
    let t_star = s.t_star();
    let k = s
        .cfg
        .boundary_k
        .unwrap_or_else(|| boundary::default_k(s.ds.n()));
    let grid = boundary::estimate_probability_grid_named(
        (x, xv),
        (z, zv),
        &t_star,
        s.cfg.boundary_resolution,
        k,
    )?;
    let polyline = boundary::extract_boundary(&grid, 0.5)?;
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "vars": [x, z],
        "level": 0.5,
        "grid": grid,
        "polyline": polyline,
        "scatter": {"x": xv, "z": zv, "t_star": t_star},
    });
    let outputs = vec![s.write_json("boundary.json", &doc)?];
    let line = format!(
        "boundary {x},{z}: k={k} resolution={} segments={}",
        s.cfg.boundary_resolution,
        polyline.segments.len()
    );
    Ok((outputs, line))
}

/// Runs one command. Data and model errors abort; an infeasible search still
/// writes its outputs and is reported through [`RunOutcome::deferred`].
pub fn run(
    cmd: &Command,
    cfg: &RunConfig,
    config_dir: Option<&Path>,
) -> Result<RunOutcome, RunError> {
    let mut s = Session::open(cfg, config_dir)?;
    let mut steps = Vec::new();
    let mut summary = Vec::new();
    let mut deferred = None;

    match cmd {
        Command::Estimate => summary.push(timed(&mut steps, "estimate", || step_estimate(&mut s))?),
        Command::Welfare => summary.push(timed(&mut steps, "welfare", || step_welfare(&mut s))?),
        Command::Search { vars } => {
            let (line, d) = timed(&mut steps, "search", || step_search(&mut s, vars))?;
            summary.push(line);
            deferred = d;
        }
        Command::Menu {
            fixed,
            fixed_threshold,
            varying,
        } => summary.push(timed(&mut steps, "menu", || {
            step_menu(&mut s, fixed, *fixed_threshold, varying)
        })?),
        Command::Boundary { x, z } => summary.push(timed(&mut steps, "boundary", || {
            step_boundary(&mut s, x, z)
        })?),
        Command::All => {
            if cfg.tau_col.is_none() {
                summary.push(timed(&mut steps, "estimate", || step_estimate(&mut s))?);
            }
            summary.push(timed(&mut steps, "welfare", || step_welfare(&mut s))?);
            let mut searches: Vec<Vec<String>> =
                cfg.select.iter().map(|v| vec![v.clone()]).collect();
            if let Some((a, b)) = &cfg.pair {
                searches.push(vec![a.clone(), b.clone()]);
            }
            for vars in &searches {
                let (line, d) = timed(&mut steps, &format!("search {}", vars.join(",")), || {
                    step_search(&mut s, vars)
                })?;
                summary.push(line);
                deferred = deferred.or(d);
            }
            if let (Some((fixed, c)), Some(varying)) = (&cfg.menu_fixed, &cfg.menu_varying) {
                match timed(&mut steps, "menu", || step_menu(&mut s, fixed, *c, varying)) {
                    Ok(line) => summary.push(line),
                    Err(e @ RunError::Infeasible(_)) => {
                        summary.push(format!("menu: {e}"));
                        deferred = deferred.or(Some(e));
                    }
                    Err(e) => return Err(e),
                }
            }
            if let Some((x, z)) = &cfg.pair {
                summary.push(timed(&mut steps, "boundary", || {
                    step_boundary(&mut s, x, z)
                })?);
            }
        }
    }

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        command: cmd.name().to_string(),
        config: cfg.clone(),
        input: s.input.clone(),
        steps,
    };
    let name = match cmd {
        Command::All => "manifest.json".to_string(),
        other => format!("manifest_{}.json", other.name()),
    };
    s.write_json(&name, &manifest)?;
    Ok(RunOutcome {
        manifest,
        summary,
        deferred,
    })
}

/// Recomputes the checksum of the input a manifest was produced from.
pub fn verify_manifest(manifest_path: &Path, config_dir: Option<&Path>) -> Result<(), RunError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| io_err(manifest_path, e))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| RunError::Io(e.to_string()))?;
    let expected = doc["input"]["sha256"]
        .as_str()
        .ok_or_else(|| RunError::Io("manifest has no input checksum".into()))?
        .to_string();
    let data = doc["input"]["path"]
        .as_str()
        .ok_or_else(|| RunError::Io("manifest has no input path".into()))?;
    let path = resolve_data_path(Path::new(data), config_dir);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let actual = sha256_hex(&bytes);
    if actual == expected {
        Ok(())
    } else {
        Err(RunError::ChecksumMismatch { expected, actual })
    }
}
