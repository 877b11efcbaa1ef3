//! Experiment runner for the `rokhlin-core` pipelines.
//!
//! Every subcommand writes `report.json` (schema 1) plus CSV tables into
//! the output directory and exits with 0 when all configured predicates
//! hold, 1 when one fails and 2 on a usage or configuration error.

pub mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rokhlin_core::dynamics::circle_grid;
use rokhlin_core::ktheory::{
    check_intertwining_squares, compose_standard, furstenberg_k1, induced_limit_map, k1_by_winding, standard_map, winding_matrix, LimitGroupModel,
};
use rokhlin_core::limitalg::{replay, run_intertwining, sample_stages, seeded_basepoints, trace_claims, RunManifest, RunParams};
use rokhlin_core::matching::{find_matching, min_bottleneck};
use rokhlin_core::measure::{box_count, check_measure_comparison, epsilon_dense_sample, grid_arcs, min_sample_size, reference_grid};
use rokhlin_core::tower::{build_tower, run_rokhlin, verify_tower, RokhlinParams};
use rokhlin_core::{Error, MinimalMap, TorusPoint, C64};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, ExperimentConfig};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "rokhlin", version, about = "Finite-stage Rokhlin property experiments")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set tower.height=3`.
    #[arg(long = "set", value_name = "K=V", global = true)]
    pub set: Vec<String>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for basepoint sampling (overrides `seed` in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bottleneck matching of a sample against its image.
    Match,
    /// Rokhlin tower and the stage-level Rokhlin check.
    Tower,
    /// Multi-stage intertwiners and their defects.
    Intertwine,
    /// Trace of stage images and its ψ-invariance.
    Trace,
    /// Standard maps, commuting squares and K₁ of skew products.
    Ktheory,
    /// Re-run a recorded `intertwine` manifest and compare byte for byte.
    Replay {
        manifest: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Match => "match",
            Self::Tower => "tower",
            Self::Intertwine => "intertwine",
            Self::Trace => "trace",
            Self::Ktheory => "ktheory",
            Self::Replay { .. } => "replay",
        }
    }
}

/// One checked statement in a report.
#[derive(Debug, Serialize)]
pub struct Claim {
    pub name: String,
    /// The library operation that produced `value`.
    pub op: &'static str,
    pub value: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relation: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema: u32,
    pub command: &'static str,
    pub seed: u64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub claims: Vec<Claim>,
    /// Structured outputs keyed by the operation that produced them.
    pub details: BTreeMap<String, Value>,
    pub files: Vec<String>,
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    report: Report,
}

impl Ctx {
    fn claim(&mut self, name: impl Into<String>, op: &'static str, value: impl Serialize, relation: Option<&'static str>, bound: Option<f64>, pass: bool) {
        let value = serde_json::to_value(value).unwrap_or(Value::Null);
        self.report.claims.push(Claim { name: name.into(), op, value, relation, bound, pass });
    }

    fn less(&mut self, name: impl Into<String>, op: &'static str, value: f64, bound: f64) {
        self.claim(name, op, value, Some("<"), Some(bound), value < bound);
    }

    fn holds(&mut self, name: impl Into<String>, op: &'static str, ok: bool) {
        self.claim(name, op, ok, None, None, ok);
    }

    fn detail(&mut self, op: &str, value: impl Serialize) {
        self.report.details.insert(op.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), Error> {
        let mut w = csv::Writer::from_path(self.out.join(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        self.report.files.push(name.to_string());
        Ok(())
    }
}

/// Errors that mean the request itself was unusable.
fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidPermutation(..)
            | Error::NotMinimal
            | Error::UnknownInvariantMeasure
            | Error::Io(_)
            | Error::Parse(_)
    )
}

fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Parses arguments, runs the subcommand and returns the exit status.
pub fn run(cli: Cli) -> i32 {
    let mut cfg = match ExperimentConfig::load(cli.config.as_deref(), &cli.set) {
        Ok(c) => c,
        Err(ConfigError(msg)) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Err(e) = std::fs::create_dir_all(&cfg.out) {
        eprintln!("error: cannot create {}: {e}", cfg.out.display());
        return 2;
    }
    let jobs = cli.jobs.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let name = cli.command.name();
    let out = cfg.out.clone();
    let mut ctx = Ctx {
        report: Report { schema: REPORT_SCHEMA, command: name, seed: cfg.seed, pass: false, error: None, claims: Vec::new(), details: BTreeMap::new(), files: Vec::new() },
        cfg,
        out: out.clone(),
    };
    let result = pool.install(|| match &cli.command {
        Command::Match => cmd_match(&mut ctx),
        Command::Tower => cmd_tower(&mut ctx),
        Command::Intertwine => cmd_intertwine(&mut ctx),
        Command::Trace => cmd_trace(&mut ctx),
        Command::Ktheory => cmd_ktheory(&mut ctx),
        Command::Replay { manifest } => cmd_replay(&mut ctx, manifest),
    });
    if let Err(e) = result {
        if is_config_error(&e) {
            eprintln!("error: {e}");
            return 2;
        }
        ctx.report.error = Some(e.to_string());
    }
    let report = &mut ctx.report;
    report.pass = report.error.is_none() && report.claims.iter().all(|c| c.pass);
    report.files.push("report.json".into());
    if let Err(e) = write_json(&out.join("report.json"), report) {
        eprintln!("error: cannot write report: {e}");
        return 2;
    }
    let failed: Vec<&str> = report.claims.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if report.pass {
        println!("PASS {name} ({} claims) -> {}", report.claims.len(), out.join("report.json").display());
        0
    } else {
        match &report.error {
            Some(e) => println!("FAIL {name}: {e}"),
            None => println!("FAIL {name}: {}", failed.join(", ")),
        }
        1
    }
}

fn fmt_point(p: &TorusPoint) -> Vec<String> {
    p.coords().iter().map(|c| c.to_string()).collect()
}

fn cmd_match(ctx: &mut Ctx) -> Result<(), Error> {
    let map = ctx.cfg.map.clone();
    let m = ctx.cfg.matching.clone();
    let points: Vec<TorusPoint> = if let Some(p) = &m.points {
        p.clone()
    } else if let Some(e) = m.sample_eps {
        let sizes = if m.sizes.is_empty() { vec![min_sample_size(box_count(e, map.dim()))] } else { m.sizes.clone() };
        let mu = epsilon_dense_sample(&map, e, &sizes)?;
        if map.dim() == 1 {
            let report = check_measure_comparison(&mu, &map, e, &grid_arcs(m.arc_steps))?;
            let failures = report.failures().count();
            ctx.claim("measure comparison failures", "measure::check_measure_comparison", failures, Some("=="), Some(0.0), report.all_pass);
            let rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| {
                    vec![r.index, r.count_mu1, r.count_mu2_dilated, r.count_mu2, r.count_mu1_dilated].into_iter().map(|v| v.to_string()).chain([r.pass.to_string()]).collect()
                })
                .collect();
            ctx.csv("comparison.csv", &["arc", "count_mu1", "count_mu2_dilated", "count_mu2", "count_mu1_dilated", "pass"], rows)?;
        }
        ctx.detail("measure::epsilon_dense_sample", json!({ "eps": e, "size": mu.len() }));
        mu.support().to_vec()
    } else if map.dim() == 1 {
        circle_grid(m.grid)
    } else {
        reference_grid(map.dim(), m.grid)
    };
    let best = min_bottleneck(&points, &map)?;
    ctx.less("min bottleneck", "matching::min_bottleneck", best.epsilon, m.eps);
    let found = find_matching(&points, &map, m.eps)?;
    ctx.holds("matching below threshold exists", "matching::find_matching", found.is_some());
    let dim = map.dim();
    let header: Vec<String> = std::iter::once("index".to_string()).chain((0..dim).map(|i| format!("x{i}"))).collect();
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = points.iter().enumerate().map(|(i, p)| std::iter::once(i.to_string()).chain(fmt_point(p)).collect()).collect();
    ctx.csv("points.csv", &header_ref, rows)?;
    let mut rows = Vec::new();
    for (j, &sj) in best.permutation.images().iter().enumerate() {
        let d = rokhlin_core::dynamics::dist(&points[j], &map.apply(&points[sj])?)?;
        rows.push(vec![j.to_string(), sj.to_string(), d.to_string()]);
    }
    ctx.csv("matching.csv", &["j", "s_j", "dist"], rows)?;
    ctx.detail("matching::min_bottleneck", json!({ "points": points.len(), "epsilon": best.epsilon, "permutation": best.permutation }));
    Ok(())
}

fn cmd_tower(ctx: &mut Ctx) -> Result<(), Error> {
    let map = ctx.cfg.map.clone();
    let t = ctx.cfg.tower.clone();
    let tower = build_tower(&map, t.height, t.delta, t.eta)?;
    let check = verify_tower(&tower, t.grid_resolution)?;
    let op = "tower::verify_tower";
    ctx.claim("coverage", op, check.coverage, Some(">"), Some(1.0 - t.delta), check.coverage_ok);
    ctx.holds("levels disjoint (exact)", op, check.levels_disjoint);
    ctx.holds("bases disjoint (exact)", op, check.bases_disjoint);
    ctx.holds("inner sets", op, check.inner_ok);
    ctx.less("base diameter", op, check.max_diameter, t.eta);
    ctx.claim("sampled level multiplicity", op, check.grid_max_multiplicity, Some("<="), Some(1.0), check.grid_max_multiplicity <= 1);
    ctx.detail(op, &check);
    ctx.detail("tower::build_tower", json!({ "bases": tower.num_bases(), "columns": tower.columns.len(), "beta": tower.beta, "shrink": tower.shrink }));
    let theta = map.theta();
    let mut rows = Vec::new();
    for (c, col) in tower.columns.iter().enumerate() {
        for level in 0..t.height {
            let (lo, hi) = col.base.translate(level as i64, theta).endpoints(theta);
            rows.push(vec![c.to_string(), level.to_string(), lo.to_string(), hi.to_string(), col.base.start.q.to_string(), (col.base.start.j + level as i64).to_string()]);
        }
    }
    ctx.csv("tower_levels.csv", &["column", "level", "start", "end", "start_q", "start_j"], rows)?;
    write_json(&ctx.out.join("tower.json"), &tower)?;
    ctx.report.files.push("tower.json".into());

    if let Some(r) = t.rokhlin.clone() {
        let params = RokhlinParams {
            map,
            height: t.height,
            eps: r.eps,
            delta: t.delta,
            eta: t.eta,
            sample_eps: r.sample_eps,
            min_points: r.min_points,
            k1: ctx.cfg.stages.k1,
            a1: r.a1,
            testset: ctx.cfg.tests.clone(),
            basepoints: ctx.cfg.stages.basepoints,
            seed: ctx.cfg.seed,
            cyclic: r.cyclic,
        };
        let (run, family) = run_rokhlin(&params)?;
        let op = "tower::check_tracial_rokhlin";
        ctx.less("rokhlin commutator", op, run.aligned.commutator, r.eps);
        ctx.less(if r.cyclic { "rokhlin cyclic shift" } else { "rokhlin shift" }, op, run.aligned.shift, r.eps);
        ctx.less("rokhlin residual trace", op, run.aligned.residual_trace, r.eps);
        ctx.holds("rokhlin projections orthogonal", op, run.aligned.orthogonal);
        ctx.detail("tower::run_rokhlin", &run);
        let n = family.height();
        let header: Vec<String> = std::iter::once("slot".to_string()).chain((1..=n).map(|j| format!("e{j}"))).chain((1..=n).map(|j| format!("h{j}"))).collect();
        let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = (0..family.slots())
            .map(|s| {
                std::iter::once(s.to_string())
                    .chain(family.masks.iter().map(|m| u8::from(m[s]).to_string()))
                    .chain(family.bumps.iter().map(|b| b[s].to_string()))
                    .collect()
            })
            .collect();
        ctx.csv("projections.csv", &header_ref, rows)?;
    }
    Ok(())
}

fn run_params(cfg: &ExperimentConfig) -> RunParams {
    RunParams {
        map: cfg.map.clone(),
        k1: cfg.stages.k1,
        a: cfg.stages.a.clone(),
        eps: cfg.stages.eps.clone(),
        testset: cfg.tests.clone(),
        basepoints: cfg.stages.basepoints,
        seed: cfg.seed,
    }
}

fn report_manifest(ctx: &mut Ctx, manifest: &RunManifest) -> Result<(), Error> {
    let op = "limitalg::build_intertwiners";
    let mut rows = Vec::new();
    for s in &manifest.run.stages {
        ctx.less(format!("stage {} defect", s.stage), op, s.defect, s.eps);
        ctx.claim(format!("stage {} certificate", s.stage), "matalg::modulus_defect_bound", s.defect, Some("<="), Some(s.certificate), s.defect <= s.certificate + 1e-12);
        rows.push(
            [s.stage as f64, s.points as f64, s.eps, s.threshold, s.bottleneck, s.defect, s.pointwise_defect, s.certificate]
                .iter()
                .map(|v| v.to_string())
                .chain([s.pass.to_string()])
                .collect(),
        );
    }
    ctx.less("telescoped defect", op, manifest.run.telescoped, manifest.run.telescoped_bound);
    ctx.csv("stages.csv", &["stage", "points", "eps", "threshold", "bottleneck", "defect", "pointwise_defect", "certificate", "pass"], rows)?;
    let model = &manifest.model;
    ctx.detail(
        "limitalg::StageModel",
        json!({ "k": (1..=model.stages() + 1).map(|n| model.k(n)).collect::<Vec<_>>(), "l": (1..=model.stages()).map(|n| model.l(n)).collect::<Vec<_>>() }),
    );
    Ok(())
}

fn cmd_intertwine(ctx: &mut Ctx) -> Result<(), Error> {
    let manifest = run_intertwining(&run_params(&ctx.cfg))?;
    report_manifest(ctx, &manifest)?;
    write_json(&ctx.out.join("manifest.json"), &manifest)?;
    ctx.report.files.push("manifest.json".into());
    Ok(())
}

fn cmd_replay(ctx: &mut Ctx, path: &Path) -> Result<(), Error> {
    let original = std::fs::read(path)?;
    let manifest: RunManifest = serde_json::from_slice(&original)?;
    let again = replay(&manifest)?;
    report_manifest(ctx, &again)?;
    let target = ctx.out.join("manifest.json");
    write_json(&target, &again)?;
    ctx.report.files.push("manifest.json".into());
    let identical = std::fs::read(&target)? == original;
    ctx.holds("manifest byte-identical", "limitalg::replay", identical);
    ctx.report.seed = manifest.params.seed;
    Ok(())
}

fn cmd_trace(ctx: &mut Ctx) -> Result<(), Error> {
    let cfg = ctx.cfg.clone();
    let params = run_params(&cfg);
    let tests = params.test_matrices()?;
    let model = sample_stages(&cfg.map, cfg.stages.k1, &cfg.stages.a, &tests, &cfg.stages.eps)?;
    let f = cfg.trace.function.to_matrix(cfg.map.dim(), cfg.stages.k1)?;
    let basepoint = seeded_basepoints(cfg.map.dim(), 1, cfg.seed).remove(0);
    let integral = C64::new(cfg.trace.integral[0], cfg.trace.integral[1]);
    let rows = trace_claims(&model, &cfg.map, &f, integral, &cfg.stages.eps, &basepoint)?;
    let op = "limitalg::stage_trace";
    let mut csv_rows = Vec::new();
    for r in &rows {
        let bound = r.ratio + r.slack;
        ctx.less(format!("stage {} trace error", r.stage), op, r.error, bound);
        ctx.less(format!("stage {} invariance gap", r.stage), op, r.invariance_gap, bound);
        csv_rows.push([r.stage as f64, r.value_re, r.value_im, r.error, r.oscillation_bound, r.invariance_gap, r.ratio, r.slack].iter().map(|v| v.to_string()).collect());
    }
    ctx.csv("trace.csv", &["stage", "re", "im", "error", "oscillation_bound", "invariance_gap", "ratio", "slack"], csv_rows)?;
    ctx.detail("limitalg::trace_claims", json!({ "basepoint": basepoint, "rows": rows }));
    Ok(())
}

fn cmd_ktheory(ctx: &mut Ctx) -> Result<(), Error> {
    let k = ctx.cfg.ktheory.clone();
    let mut rows = Vec::new();
    let squares = check_intertwining_squares(&k.h, &k.hbar, &k.kappa)?;
    ctx.claim("commuting squares", "ktheory::check_intertwining_squares", squares.squares_checked, None, None, squares.pass);
    ctx.detail("ktheory::check_intertwining_squares", &squares);
    rows.push(vec!["squares".into(), "all".into(), squares.pass.to_string()]);
    for (n, kappa) in k.kappa.iter().enumerate() {
        let ok = match winding_matrix(&standard_map(kappa.clone()), k.winding_samples) {
            Ok(w) => w == *kappa,
            Err(e) => {
                ctx.detail(&format!("ktheory::winding_matrix[{n}]"), e.to_string());
                false
            }
        };
        ctx.holds(format!("winding of standard map {n}"), "ktheory::winding_matrix", ok);
        rows.push(vec!["winding".into(), n.to_string(), ok.to_string()]);
    }
    for n in 0..k.kappa.len().saturating_sub(1) {
        let ok = match (compose_standard(&standard_map(k.kappa[n + 1].clone()), &standard_map(k.kappa[n].clone())), k.kappa[n + 1].mul(&k.kappa[n])) {
            (Ok(s), Ok(p)) => *s.matrix() == p,
            _ => false,
        };
        ctx.holds(format!("composition {n}"), "ktheory::compose_standard", ok);
        rows.push(vec!["composition".into(), n.to_string(), ok.to_string()]);
    }
    if let Some(f) = &k.furstenberg {
        let dim = f.d.len() + 1;
        let exact = furstenberg_k1(&f.d, dim)?;
        let map = MinimalMap::furstenberg(f.theta, f.d.clone(), Vec::new())?;
        let ok = match k1_by_winding(&map, k.winding_samples) {
            Ok(w) => w == exact,
            Err(e) => {
                ctx.detail("ktheory::k1_by_winding", e.to_string());
                false
            }
        };
        ctx.holds("furstenberg K1 matches winding", "ktheory::furstenberg_k1", ok);
        ctx.detail("ktheory::furstenberg_k1", &exact);
        rows.push(vec!["furstenberg".into(), "0".into(), ok.to_string()]);
    }
    if let Some(l) = &k.limit {
        let model = LimitGroupModel::new(l.rank00, l.rank1, l.a.clone(), l.b.clone())?;
        let induced = induced_limit_map(&l.gamma0, &l.gamma1, &model)?;
        ctx.holds("induced maps commute", "ktheory::induced_limit_map", induced.all_commute);
        ctx.detail("ktheory::induced_limit_map", &induced);
        rows.push(vec!["induced".into(), "all".into(), induced.all_commute.to_string()]);
    }
    ctx.csv("ktheory.csv", &["check", "index", "pass"], rows)?;
    Ok(())
}
