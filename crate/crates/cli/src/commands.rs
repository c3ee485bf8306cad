//! Subcommand pipelines. [`execute`] is a pure function of the resolved
//! config and returns the artifacts in memory; [`run`] adds config loading,
//! overrides, the manifest and file output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use qloc::analysis::{self, CenterRule};
use qloc::eig::{self, InexactOptions, LocalSpace, Spectrum, StartBlock};
use qloc::fem::{assemble_with_limit, build_cutoff, AssembledSystem, SubgridSpec};
use qloc::geometry::{analyze_geometry, estimate_k, GeometryStats};
use qloc::io::{self, CsvHeader, Encoding, MatrixSidecar};
use qloc::potential::{self, DominoSpec};
use qloc::schwarz::{calibrate_c_l, ContractionEstimate, SchwarzPreconditioner};
use qloc::{svg, CellMask, Error, GridSpec, PotentialField};

use crate::config::{
    fig1_config, fig2_config, load_config, ArtifactDigest, ConfigSource, ExperimentConfig, Generator, Manifest, OracleKind, StartKind,
    MANIFEST_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Gen,
    Geometry,
    Assemble,
    Oracle,
    Pinvit,
    Block,
    GreenDecay,
    EigenDecay,
    GapScan,
    Friedrichs,
    SpectraCompare,
    Fig1,
    Fig2,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Geometry => "geometry",
            Command::Assemble => "assemble",
            Command::Oracle => "oracle",
            Command::Pinvit => "pinvit",
            Command::Block => "block",
            Command::GreenDecay => "green-decay",
            Command::EigenDecay => "eigen-decay",
            Command::GapScan => "gap-scan",
            Command::Friedrichs => "friedrichs",
            Command::SpectraCompare => "spectra-compare",
            Command::Fig1 => "fig1",
            Command::Fig2 => "fig2",
        }
    }

    fn canned(&self, full: bool) -> Option<ExperimentConfig> {
        match self {
            Command::Fig1 => Some(fig1_config(full)),
            Command::Fig2 => Some(fig2_config(full)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug)]
pub enum RunError {
    /// Unreadable or invalid configuration, or unusable output location.
    Config(String),
    /// A solver failed on a valid configuration.
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "configuration error: {m}"),
            RunError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

/// Library errors caused by parameter values count as config errors.
fn classify(context: &str, e: Error) -> RunError {
    let msg = format!("{context}: {e}");
    match e {
        Error::InvalidGrid(_) | Error::InvalidArgument(_) | Error::TooLarge { .. } | Error::Parse(_) | Error::Json(_) => {
            RunError::Config(msg)
        }
        Error::Io(_) => RunError::Config(msg),
        Error::DimensionMismatch { .. } | Error::Singular(_) | Error::NoConvergence(_) | Error::Precondition(_) => RunError::Numerical(msg),
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub full: bool,
    /// Value of the output-root environment override.
    pub env_out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

/// The config a run would use, after overrides and resolution.
pub fn resolve(cmd: Command, opts: &RunOptions) -> Result<ExperimentConfig, RunError> {
    let where_ = opts.config.as_ref().map_or("<canned>".to_string(), |p| p.display().to_string());
    let mut cfg = match &opts.config {
        Some(p) => {
            let src = load_config(p).map_err(|e| RunError::Config(format!("{where_}: {e}")))?;
            if let ConfigSource::Manifest(m) = &src {
                if m.subcommand != cmd.name() {
                    return Err(RunError::Config(format!("{where_}: manifest was written by `{}`, not `{}`", m.subcommand, cmd.name())));
                }
            }
            let mut c = src.config().clone();
            if opts.full {
                if let Some(canned) = cmd.canned(true) {
                    c.subgrid.m = canned.subgrid.m;
                }
            }
            c
        }
        None => cmd.canned(opts.full).ok_or_else(|| RunError::Config(format!("`{}` needs --config", cmd.name())))?,
    };
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let errors = cfg.validate();
    if !errors.is_empty() {
        return Err(RunError::Config(format!("{where_}: {}", errors.join("; "))));
    }
    let mut cfg = cfg.resolved();
    if let Some(o) = opts.out.clone().or_else(|| opts.env_out.clone()) {
        cfg.output.dir = o;
    }
    Ok(cfg)
}

/// Resolves the config, runs the pipeline and writes artifacts plus
/// `manifest.json` into the output directory.
pub fn run(cmd: Command, opts: &RunOptions) -> Result<Outcome, RunError> {
    let cfg = resolve(cmd, opts)?;
    let artifacts = execute(cmd, &cfg)?;
    let dir = cfg.output.dir.clone();
    write_artifacts(&dir, cmd, &cfg, &artifacts)
}

fn write_artifacts(dir: &Path, cmd: Command, cfg: &ExperimentConfig, artifacts: &[Artifact]) -> Result<Outcome, RunError> {
    let io_err = |e: std::io::Error| RunError::Config(format!("output directory {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io_err)?;
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.contents).map_err(io_err)?;
    }
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        subcommand: cmd.name().to_string(),
        config_hash: cfg.content_hash(),
        config: cfg.clone(),
        artifacts: artifacts
            .iter()
            .map(|a| ArtifactDigest { name: a.name.clone(), sha256: io::sha256_hex(a.contents.as_bytes()) })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(dir.join("manifest.json"), text).map_err(io_err)?;
    Ok(Outcome { out_dir: dir.to_path_buf(), manifest })
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    hash: String,
    out: Vec<Artifact>,
}

impl Ctx<'_> {
    fn header(&self, units: &str) -> CsvHeader {
        CsvHeader { config_hash: self.hash.clone(), units: units.to_string() }
    }

    fn emit(&mut self, name: &str, contents: String) {
        self.out.push(Artifact { name: name.to_string(), contents });
    }

    /// JSON artifact carrying the config hash and a unit legend.
    fn emit_json(&mut self, name: &str, units: &[(&str, &str)], body: Value) {
        let mut obj = serde_json::Map::new();
        obj.insert("config_hash".into(), Value::String(self.hash.clone()));
        obj.insert("units".into(), Value::Object(units.iter().map(|(k, v)| (k.to_string(), Value::String(v.to_string()))).collect()));
        if let Value::Object(b) = body {
            obj.extend(b);
        }
        self.emit(name, serde_json::to_string_pretty(&Value::Object(obj)).expect("json serializes") + "\n");
    }
}

fn ctx_err(what: &'static str) -> impl Fn(Error) -> RunError {
    move |e| classify(what, e)
}

pub fn build_field(cfg: &ExperimentConfig) -> qloc::Result<PotentialField> {
    let f = &cfg.field;
    let grid = GridSpec::new(f.d, f.inv_eps, cfg.seed)?;
    let (a, b) = (f.alpha, cfg.beta());
    let base = match &f.generator {
        Generator::Periodic => potential::gen_periodic(grid, a, b)?,
        Generator::Constant => PotentialField::constant_beta(grid, a, b)?,
        Generator::Iid { p_beta } => potential::gen_iid(grid, *p_beta, a, b)?,
        Generator::Tensor { p_alpha_1d } => potential::gen_tensor(grid, *p_alpha_1d, a, b)?,
        Generator::Domino { level_decay, max_level } => potential::gen_domino(grid, &DominoSpec::new(*level_decay, *max_level), a, b)?,
    };
    match cfg.plant_cuboid() {
        Some(c) => potential::plant_valley(&base, c),
        None => Ok(base),
    }
}

pub fn build_system(cfg: &ExperimentConfig, field: &PotentialField) -> qloc::Result<AssembledSystem> {
    let sub = SubgridSpec::new(field.grid, cfg.subgrid.m)?;
    assemble_with_limit(field, sub, cfg.subgrid.dof_limit)
}

pub fn run_oracle(cfg: &ExperimentConfig, sys: &AssembledSystem, n_ev: usize) -> qloc::Result<Spectrum> {
    let n_ev = n_ev.min(sys.n());
    match cfg.analysis.oracle {
        OracleKind::Auto if cfg.analysis.shift == 0.0 => eig::oracle(sys, n_ev, eig::AUTO_DENSE_MAX),
        OracleKind::Auto if sys.n() <= eig::AUTO_DENSE_MAX => eig::dense_oracle(sys, n_ev),
        OracleKind::Dense => eig::dense_oracle(sys, n_ev),
        OracleKind::Auto | OracleKind::ShiftInvert => eig::shift_invert_oracle(sys, n_ev, cfg.analysis.shift),
    }
}

/// Preconditioner with measured contraction; `c_L` is recalibrated first
/// when requested, and `P̄` is composed to `target` if given.
pub fn build_preconditioner(
    cfg: &ExperimentConfig,
    sys: &AssembledSystem,
    stats: &GeometryStats,
    target: Option<f64>,
) -> qloc::Result<(SchwarzPreconditioner, ContractionEstimate)> {
    let pc = &cfg.preconditioner;
    let mut prec = SchwarzPreconditioner::new(sys, stats, pc.c_l, pc.mode)?;
    let mut est = prec.estimate_contraction(sys, pc.estimate_iters, cfg.seed)?;
    if pc.calibrate_c_l {
        let c_l = calibrate_c_l(est.lambda_min, stats.d, stats.l);
        prec = SchwarzPreconditioner::new(sys, stats, c_l, pc.mode)?;
        est = prec.estimate_contraction(sys, pc.estimate_iters, cfg.seed)?;
    }
    if let Some(t) = target.or(pc.target_gamma) {
        prec.compose_pbar(t)?;
    }
    Ok((prec, est))
}

/// Cells carrying at least `rel` of the peak cell mass of any of the first
/// `k` eigenvectors, dilated by `layers`.
pub fn mass_mask(sys: &AssembledSystem, spectrum: &Spectrum, k: usize, rel: f64, layers: usize) -> qloc::Result<CellMask> {
    let mut mask = CellMask::empty(sys.sub.grid.cells());
    for u in spectrum.vectors.iter().take(k) {
        let mass = sys.cell_masses(u)?;
        let peak = mass.iter().copied().fold(0.0, f64::max);
        for (c, &w) in mass.iter().enumerate() {
            if w >= rel * peak {
                mask.insert(c);
            }
        }
    }
    Ok(mask.dilate(layers))
}

pub fn start_block(
    cfg: &ExperimentConfig,
    field: &PotentialField,
    stats: &GeometryStats,
    sys: &AssembledSystem,
    spectrum: &Spectrum,
    k: usize,
) -> qloc::Result<StartBlock> {
    let it = &cfg.iteration;
    match it.start {
        StartKind::Valleys => {
            let mut b = eig::build_start_valleys(field, stats, sys, k)?;
            b.attach_oracle(sys, spectrum)?;
            Ok(b)
        }
        StartKind::Projection => {
            let mask = mass_mask(sys, spectrum, k, it.mask_rel, it.layers)?;
            eig::build_start_projection(sys, spectrum, &LocalSpace { mask, m_tilde: it.m_tilde }, k)
        }
    }
}

fn center_cell(grid: GridSpec) -> usize {
    let lat = grid.cells();
    let mut c = [0; 3];
    for x in c.iter_mut().take(grid.d) {
        *x = grid.inv_eps / 2;
    }
    lat.index(c)
}

fn grid_shape(grid: GridSpec) -> Option<(usize, usize)> {
    match grid.d {
        1 => Some((grid.inv_eps, 1)),
        2 => Some((grid.inv_eps, grid.inv_eps)),
        _ => None,
    }
}

const U_ENERGY: &str = "energy, same units as the potential";
const U_ENORM: &str = "energy norm |||.|||";
const U_CELLS: &str = "count of epsilon-cells";
const U_LAYERS: &str = "epsilon-layers";
const U_NONE: &str = "dimensionless";

/// Runs one pipeline on a resolved, validated config.
pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> Result<Vec<Artifact>, RunError> {
    let mut cx = Ctx { cfg, hash: cfg.content_hash(), out: Vec::new() };
    let field = build_field(cfg).map_err(ctx_err("field generation"))?;
    match cmd {
        Command::Gen => gen(&mut cx, &field),
        Command::Geometry => geometry(&mut cx, &field),
        Command::Assemble => assemble_cmd(&mut cx, &field),
        Command::Oracle => oracle_cmd(&mut cx, &field),
        Command::Pinvit => pinvit_cmd(&mut cx, &field),
        Command::Block => block_cmd(&mut cx, &field),
        Command::GreenDecay => green_cmd(&mut cx, &field),
        Command::EigenDecay => eigen_decay_cmd(&mut cx, &field),
        Command::GapScan => gap_cmd(&mut cx, &field),
        Command::Friedrichs => friedrichs_cmd(&mut cx, &field),
        Command::SpectraCompare => spectra_cmd(&mut cx, &field),
        Command::Fig1 => fig1(&mut cx, &field),
        Command::Fig2 => fig2(&mut cx, &field),
    }?;
    Ok(cx.out)
}

type Step = Result<(), RunError>;

fn field_svg(cx: &mut Ctx, field: &PotentialField, name: &str) {
    if let Some((nx, ny)) = grid_shape(field.grid) {
        let vals: Vec<f64> = field.occupancy.iter().map(|&b| f64::from(u8::from(b))).collect();
        let title = format!("{} field, black = beta", field.kind.name());
        cx.emit(name, svg::heatmap(&vals, nx, ny, &title, &cx.hash));
    }
}

fn gen(cx: &mut Ctx, field: &PotentialField) -> Step {
    cx.emit("field.json", io::field_to_json(field, Encoding::Hex) + "\n");
    field_svg(cx, field, "field.svg");
    Ok(())
}

fn geometry(cx: &mut Ctx, field: &PotentialField) -> Step {
    let stats = analyze_geometry(field);
    let ell = cx.cfg.analysis.ell_tilde;
    let k_est = estimate_k(&stats, ell).ok();
    cx.emit_json(
        "geometry.json",
        &[("l", "epsilon-units"), ("maximal_alpha_cubes", "anchor in cells, side in epsilon-units"), ("k_estimate", U_NONE)],
        json!({
            "field_hash": io::field_hash(field),
            "beta_cells": field.beta_count(),
            "stats": stats,
            "ell_tilde": ell,
            "k_estimate": k_est,
        }),
    );
    Ok(())
}

fn assemble_cmd(cx: &mut Ctx, field: &PotentialField) -> Step {
    let sys = build_system(cx.cfg, field).map_err(ctx_err("assembly"))?;
    for (name, a) in [("stiffness.mtx", &sys.k), ("mass.mtx", &sys.m), ("potential_mass.mtx", &sys.mv), ("system.mtx", &sys.a)] {
        cx.emit(name, io::matrix_to_coordinate(a));
    }
    let side = MatrixSidecar { n: sys.n(), h: sys.sub.h(), field_hash: io::field_hash(field) };
    cx.emit_json(
        "matrices.json",
        &[("h", "length, unit torus side = 1"), ("entries", "stiffness: 1/length^(2-d); mass: length^d; potential_mass: energy*length^d")],
        json!({ "sidecar": side, "nnz": sys.a.nnz(), "files": ["stiffness.mtx", "mass.mtx", "potential_mass.mtx", "system.mtx"] }),
    );
    Ok(())
}

fn states_csv(header: &CsvHeader, vectors: &[&[f64]], names: &[String]) -> String {
    let mut s = format!("# config_hash={}\n# units: {}\nindex", header.config_hash, header.units);
    for n in names {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    let len = vectors.first().map_or(0, |v| v.len());
    for i in 0..len {
        let _ = write!(s, "{i}");
        for v in vectors {
            let _ = write!(s, ",{:?}", v[i]);
        }
        s.push('\n');
    }
    s
}

fn oracle_cmd(cx: &mut Ctx, field: &PotentialField) -> Step {
    let sys = build_system(cx.cfg, field).map_err(ctx_err("assembly"))?;
    let spec = run_oracle(cx.cfg, &sys, cx.cfg.analysis.n_ev).map_err(ctx_err("oracle"))?;
    cx.emit("spectrum.csv", io::spectrum_to_csv(&cx.header(&format!("eigenvalue: {U_ENERGY}; residual: relative")), &spec));
    let k = cx.cfg.analysis.states.min(spec.len());
    let vs: Vec<&[f64]> = spec.vectors[..k].iter().map(|v| v.as_slice()).collect();
    let names: Vec<String> = (1..=k).map(|j| format!("u{j}")).collect();
    cx.emit("eigenvectors.csv", states_csv(&cx.header("nodal values of M-normalized eigenvectors"), &vs, &names));
    cx.emit_json(
        "oracle.json",
        &[("values", U_ENERGY), ("max_residual", "relative residual")],
        json!({
            "method": spec.method,
            "tol": spec.tol,
            "n": sys.n(),
            "values": spec.values,
            "max_residual": spec.residuals.iter().copied().fold(0.0, f64::max),
        }),
    );
    Ok(())
}

fn pinvit_cmd(cx: &mut Ctx, field: &PotentialField) -> Step {
    let cfg = cx.cfg;
    let stats = analyze_geometry(field);
    let sys = build_system(cfg, field).map_err(ctx_err("assembly"))?;
    let spec = run_oracle(cfg, &sys, cfg.analysis.n_ev.max(2)).map_err(ctx_err("oracle"))?;
    let (prec, est) = build_preconditioner(cfg, &sys, &stats, None).map_err(ctx_err("preconditioner"))?;
    let start = start_block(cfg, field, &stats, &sys, &spec, 1).map_err(ctx_err("starting vector"))?;
    let (e1, e2) = (spec.values[0], spec.values[1]);
    let st = eig::pinvit(&sys, &prec, e1, &start.vectors[0], &start.masks[0], cfg.iteration.steps, Some(&spec.vectors[0]))
        .map_err(ctx_err("PINVIT"))?;
    cx.emit("pinvit.csv", io::iteration_to_csv(&cx.header(&format!("err: {U_ENORM}; rate: {U_NONE}; support_cells: {U_CELLS}")), &st));
    let gamma_bar = est.gamma.powi(prec.k_inner as i32);
    cx.emit_json(
        "pinvit.json",
        &[("e1", U_ENERGY), ("e2", U_ENERGY), ("rho", U_NONE), ("gamma", U_NONE), ("rates", U_NONE)],
        json!({
            "e1": e1, "e2": e2, "rho": e1 / e2,
            "gamma": est.gamma, "gamma_composed": gamma_bar, "k_inner": prec.k_inner, "theta": prec.theta,
            "contraction": est, "constants": prec.constants,
            "rates": st.rates(), "rate_bound": e1 / e2 + gamma_bar,
            "start": start.labels,
        }),
    );
    Ok(())
}

fn block_cmd(cx: &mut Ctx, field: &PotentialField) -> Step {
    let cfg = cx.cfg;
    let it = &cfg.iteration;
    let stats = analyze_geometry(field);
    let sys = build_system(cfg, field).map_err(ctx_err("assembly"))?;
    let n_ev = cfg.analysis.n_ev.max(it.k.map_or(it.k_max, |k| k) + 1);
    let spec = run_oracle(cfg, &sys, n_ev).map_err(ctx_err("oracle"))?;
    let (k, gap) = match it.k {
        Some(k) => {
            if spec.len() <= k {
                return Err(RunError::Config(format!("iteration.K = {k} exceeds the {} computed eigenvalues", spec.len())));
            }
            (k, spec.values[0] / spec.values[k])
        }
        None => {
            let g = analysis::gap_scan(&spec.values, it.k_max.min(spec.len() - 1), it.gap_target).map_err(ctx_err("gap scan"))?;
            (g.chosen_k, g.gap)
        }
    };
    let outer = eig::outer_steps(it.tol, gap).map_err(ctx_err("block iteration"))?;
    let target = gap.powi(outer.max(1) as i32);
    let (prec, est) = build_preconditioner(cfg, &sys, &stats, Some(target)).map_err(ctx_err("preconditioner"))?;
    let start = start_block(cfg, field, &stats, &sys, &spec, k).map_err(ctx_err("starting block"))?;
    let opts = InexactOptions { tol: it.tol, gap, u1: Some(spec.vectors[0].clone()), track_exact: true };
    let res = eig::inexact_block_iteration(&sys, &prec, spec.values[0], &start, &opts).map_err(ctx_err("block iteration"))?;
    let start_union = start.masks.iter().fold(CellMask::empty(sys.sub.grid.cells()), |a, m| a.union(m));
    let layers = res.steps * prec.k_inner;
    let support_ok = res.mask.is_subset_of(&start_union.dilate(layers));
    cx.emit(
        "block.csv",
        io::iteration_to_csv(&cx.header(&format!("err: {U_ENORM}; rate: {U_NONE}; support_cells: {U_CELLS}")), &res.state),
    );
    cx.emit("start_block.json", io::start_block_report(&start, &cx.hash) + "\n");
    cx.emit("block_vector.csv", io::vector_to_csv(&cx.header("nodal values"), &res.v));
    let err0 = res.state.history.first().copied();
    let err_final = res.state.history.last().copied();
    cx.emit_json(
        "block.json",
        &[("gap", U_NONE), ("tol", U_NONE), ("errors", U_ENORM), ("support", U_CELLS), ("layers", U_LAYERS)],
        json!({
            "K": k, "gap": gap, "tol": it.tol, "outer_steps": res.steps, "k_inner": prec.k_inner,
            "gamma": est.gamma, "gamma_composed": est.gamma.powi(prec.k_inner as i32),
            "err0": err0, "err_final": err_final,
            "errors": res.state.history, "exact_distance": res.exact_distance,
            "support_history": res.state.support_history,
            "start_support": start_union.count(), "layers": layers, "support_within_bound": support_ok,
        }),
    );
    Ok(())
}

fn green_cmd(cx: &mut Ctx, field: &PotentialField) -> Step {
    let cfg = cx.cfg;
    let stats = analyze_geometry(field);
    let sys = build_system(cfg, field).map_err(ctx_err("assembly"))?;
    let (prec, est) = build_preconditioner(cfg, &sys, &stats, None).map_err(ctx_err("preconditioner"))?;
    let source = cfg.analysis.source_cell.unwrap_or_else(|| center_cell(field.grid));
    let g = analysis::green_decay(&sys, &prec, source, cfg.analysis.decay_k_max).map_err(ctx_err("Green's function decay"))?;
    cx.emit(
        "richardson.csv",
        io::richardson_to_csv(&cx.header(&format!("energy_error and residual_a_norm: {U_ENORM}; support_cells: {U_CELLS}")), &g.history),
    );
    let bound: Vec<f64> = (1..=g.errors.len()).map(|k| est.gamma.powi(k as i32)).collect();
    cx.emit_json(
        "green_decay.json",
        &[
            ("errors", "relative energy norm"),
            ("rates", "per step"),
            ("annulus_energies", U_ENORM),
            ("radii", U_LAYERS),
            ("support_cells", U_CELLS),
        ],
        json!({ "gamma": est.gamma, "gamma_powers": bound, "decay": g }),
    );
    Ok(())
}

fn center_rule(cfg: &ExperimentConfig) -> CenterRule {
    CenterRule::Threshold { rel: cfg.analysis.center_rel, max_centers: cfg.analysis.max_centers }
}

fn decay_reports(cx: &mut Ctx, sys: &AssembledSystem, spec: &Spectrum) -> Result<Vec<Value>, RunError> {
    let a = &cx.cfg.analysis;
    let mut out = Vec::new();
    for (j, u) in spec.vectors.iter().take(a.states).enumerate() {
        let d = analysis::eigen_decay(sys, u, &center_rule(cx.cfg), a.decay_k_max, a.schedule).map_err(ctx_err("eigenstate decay"))?;
        out.push(json!({ "state": j + 1, "eigenvalue": spec.values[j], "decay": d }));
    }
    Ok(out)
}

fn state_heatmaps(cx: &mut Ctx, sys: &AssembledSystem, spec: &Spectrum, log: bool) -> Step {
    let Some((nx, ny)) = grid_shape(sys.sub.grid) else { return Ok(()) };
    if sys.sub.d() != 2 {
        return Ok(());
    }
    for (j, u) in spec.vectors.iter().take(cx.cfg.analysis.states).enumerate() {
        let mass = sys.cell_masses(u).map_err(ctx_err("cell masses"))?;
        let amp: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
        cx.emit(&format!("state_{}.svg", j + 1), svg::heatmap(&amp, nx, ny, &format!("|u{}| per cell (L2 norm)", j + 1), &cx.hash));
        if log {
            let peak = amp.iter().copied().fold(0.0, f64::max);
            let lg: Vec<f64> = amp.iter().map(|a| (a / peak).max(1e-16).log10()).collect();
            cx.emit(
                &format!("state_{}_log.svg", j + 1),
                svg::heatmap(&lg, nx, ny, &format!("log10 |u{}| relative to peak", j + 1), &cx.hash),
            );
        }
    }
    Ok(())
}

fn eigen_decay_cmd(cx: &mut Ctx, field: &PotentialField) -> Step {
    let cfg = cx.cfg;
    let sys = build_system(cfg, field).map_err(ctx_err("assembly"))?;
    let spec = run_oracle(cfg, &sys, cfg.analysis.states.max(1)).map_err(ctx_err("oracle"))?;
    let reports = decay_reports(cx, &sys, &spec)?;
    cx.emit_json(
        "eigen_decay.json",
        &[("eigenvalue", U_ENERGY), ("annulus_energies", U_ENORM), ("radii", U_LAYERS), ("fitted_rate", "per radius step")],
        json!({ "states": reports }),
    );
    state_heatmaps(cx, &sys, &spec, false)
}

fn gap_cmd(cx: &mut Ctx, field: &PotentialField) -> Step {
    let cfg = cx.cfg;
    let sys = build_system(cfg, field).map_err(ctx_err("assembly"))?;
    let k_max = cfg.iteration.k_max.min(sys.n() - 1);
    let spec = run_oracle(cfg, &sys, k_max + 1).map_err(ctx_err("oracle"))?;
    let g = analysis::gap_scan(&spec.values, k_max, cfg.iteration.gap_target).map_err(ctx_err("gap scan"))?;
    cx.emit("spectrum.csv", io::spectrum_to_csv(&cx.header(&format!("eigenvalue: {U_ENERGY}; residual: relative")), &spec));
    cx.emit_json("gap_scan.json", &[("head", U_ENERGY), ("gaps", U_NONE)], json!({ "scan": g }));
    Ok(())
}

fn friedrichs_cmd(cx: &mut Ctx, field: &PotentialField) -> Step {
    let cfg = cx.cfg;
    let stats = analyze_geometry(field);
    let sys = build_system(cfg, field).map_err(ctx_err("assembly"))?;
    let cut = build_cutoff(field, &sys.sub).map_err(ctx_err("cut-off"))?;
    let r =
        analysis::friedrichs_ratio(&sys, &cut, stats.l, cfg.analysis.friedrichs_samples, cfg.seed).map_err(ctx_err("Friedrichs ratio"))?;
    cx.emit_json(
        "friedrichs.json",
        &[("sampled_max", "length"), ("exact_sup", "length"), ("eps", "length"), ("ratios", "dimensionless, divided by eps*L")],
        json!({ "report": r, "cutoff_gradient_bound": cut.grad_constant }),
    );
    Ok(())
}

fn two_series_csv(header: &CsvHeader, names: [&str; 2], a: &[f64], b: &[f64]) -> String {
    let mut s = format!("# config_hash={}\n# units: {}\nindex,{},{}\n", header.config_hash, header.units, names[0], names[1]);
    for i in 0..a.len().max(b.len()) {
        let f = |v: &[f64]| v.get(i).map_or(String::new(), |x| format!("{x:?}"));
        let _ = writeln!(s, "{},{},{}", i + 1, f(a), f(b));
    }
    s
}

fn periodic_twin(field: &PotentialField) -> qloc::Result<PotentialField> {
    potential::gen_periodic(field.grid, field.alpha, field.beta)
}

fn spectra_cmd(cx: &mut Ctx, field: &PotentialField) -> Step {
    let cfg = cx.cfg;
    let per = periodic_twin(field).map_err(ctx_err("periodic field"))?;
    let sub = SubgridSpec::new(field.grid, cfg.subgrid.m).map_err(ctx_err("subgrid"))?;
    let t = analysis::spectra_compare(&per, field, sub, cfg.analysis.n_ev).map_err(ctx_err("spectra"))?;
    let name = field.kind.name();
    cx.emit("spectra.csv", two_series_csv(&cx.header(U_ENERGY), ["periodic", name], &t.a, &t.b));
    cx.emit("spectra.svg", svg::scatter(&[("periodic", &t.a), (name, &t.b)], "lowest eigenvalues", "eigenvalue (energy)", &cx.hash));
    Ok(())
}

fn fig1(cx: &mut Ctx, field: &PotentialField) -> Step {
    let cfg = cx.cfg;
    field_svg(cx, field, "field.svg");
    let sys = build_system(cfg, field).map_err(ctx_err("assembly"))?;
    let spec = run_oracle(cfg, &sys, cfg.analysis.n_ev.max(cfg.analysis.states)).map_err(ctx_err("oracle"))?;
    cx.emit("spectrum.csv", io::spectrum_to_csv(&cx.header(&format!("eigenvalue: {U_ENERGY}; residual: relative")), &spec));
    let reports = decay_reports(cx, &sys, &spec)?;
    cx.emit_json(
        "eigen_decay.json",
        &[("eigenvalue", U_ENERGY), ("annulus_energies", U_ENORM), ("radii", U_LAYERS), ("fitted_rate", "per radius step")],
        json!({ "states": reports }),
    );
    state_heatmaps(cx, &sys, &spec, true)
}

fn fig2(cx: &mut Ctx, field: &PotentialField) -> Step {
    let cfg = cx.cfg;
    let per = periodic_twin(field).map_err(ctx_err("periodic field"))?;
    let n_ev = cfg.analysis.n_ev;
    let mut spectra = Vec::new();
    for (label, f) in [("periodic", &per), ("random", field)] {
        let sys = build_system(cfg, f).map_err(ctx_err("assembly"))?;
        let spec = run_oracle(cfg, &sys, n_ev).map_err(ctx_err("oracle"))?;
        let k = cfg.analysis.states.min(spec.len());
        let vs: Vec<&[f64]> = spec.vectors[..k].iter().map(|v| v.as_slice()).collect();
        let names: Vec<String> = (1..=k).map(|j| format!("u{j}")).collect();
        cx.emit(&format!("states_{label}.csv"), states_csv(&cx.header("nodal values of M-normalized eigenvectors"), &vs, &names));
        let scan = analysis::gap_scan(&spec.values, cfg.iteration.k_max.min(spec.len() - 1), cfg.iteration.gap_target)
            .map_err(ctx_err("gap scan"))?;
        spectra.push((label, spec.values, scan));
    }
    let (a, b) = (&spectra[0], &spectra[1]);
    cx.emit("spectra.csv", two_series_csv(&cx.header(U_ENERGY), ["periodic", "random"], &a.1, &b.1));
    cx.emit("spectra.svg", svg::scatter(&[("periodic", &a.1), ("random", &b.1)], "lowest eigenvalues", "eigenvalue (energy)", &cx.hash));
    cx.emit_json("gaps.json", &[("head", U_ENERGY), ("gaps", U_NONE)], json!({ "periodic": a.2, "random": b.2 }));
    Ok(())
}
