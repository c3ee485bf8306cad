//! Experiment configuration, resolution and run manifests.
//!
//! A config is one JSON object with flat sections (`field`, `subgrid`,
//! `preconditioner`, `iteration`, `analysis`, `output`) plus `seed`. Unknown
//! keys are rejected. Resolution fills every default and turns relative
//! quantities (`beta_scale`) into absolute ones, so the resolved config
//! written to `manifest.json` reproduces the run on its own.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qloc::analysis::RadiusSchedule;
use qloc::potential::Cuboid;
use qloc::schwarz::PrecondMode;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub field: FieldConfig,
    #[serde(default)]
    pub subgrid: SubgridConfig,
    #[serde(default)]
    pub preconditioner: PreconditionerConfig,
    #[serde(default)]
    pub iteration: IterationConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    Periodic,
    /// Every cell β.
    Constant,
    Iid {
        #[serde(default = "half")]
        p_beta: f64,
    },
    Tensor {
        #[serde(default = "half")]
        p_alpha_1d: f64,
    },
    Domino {
        #[serde(default = "half")]
        level_decay: f64,
        #[serde(default = "four")]
        max_level: usize,
    },
}

fn half() -> f64 {
    0.5
}

fn four() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub d: usize,
    pub inv_eps: usize,
    pub generator: Generator,
    #[serde(default = "one")]
    pub alpha: f64,
    /// Absolute β; exclusive with `beta_scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// `β = beta_scale / ε²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_scale: Option<f64>,
    /// α-box planted on top of the generated field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantConfig>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub anchor: Vec<usize>,
    pub sides: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubgridConfig {
    pub m: usize,
    pub dof_limit: usize,
}

impl Default for SubgridConfig {
    fn default() -> Self {
        Self { m: 4, dof_limit: qloc::fem::DEFAULT_DOF_LIMIT }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreconditionerConfig {
    pub mode: PrecondMode,
    pub c_l: f64,
    /// Replace `c_l` by the value matching the measured `λ_min(P)`.
    pub calibrate_c_l: bool,
    /// Contraction the composed step `P̄` must reach; `null` means one
    /// Richardson step per application (block runs derive it from the gap).
    pub target_gamma: Option<f64>,
    pub estimate_iters: usize,
}

impl Default for PreconditionerConfig {
    fn default() -> Self {
        Self { mode: PrecondMode::Adaptive, c_l: 1.0, calibrate_c_l: false, target_gamma: None, estimate_iters: 300 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    /// Dirichlet modes of the α-valleys.
    Valleys,
    /// Projections of oracle eigenvectors onto hats around their mass.
    Projection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IterationConfig {
    /// Block size; `null` picks the smallest `K` meeting `gap_target`.
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub k_max: usize,
    pub gap_target: f64,
    pub tol: f64,
    pub steps: usize,
    pub start: StartKind,
    /// Hat width `ε/m̃` of the projection space.
    pub m_tilde: usize,
    /// ε-layers added around the projection masks.
    pub layers: usize,
    /// Cells whose mass exceeds this fraction of the peak seed a projection mask.
    pub mask_rel: f64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            k: None,
            k_max: 16,
            gap_target: 0.5,
            tol: 1e-3,
            steps: 20,
            start: StartKind::Projection,
            m_tilde: 2,
            layers: 2,
            mask_rel: 1e-2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Auto,
    Dense,
    ShiftInvert,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub n_ev: usize,
    pub oracle: OracleKind,
    pub shift: f64,
    pub decay_k_max: usize,
    pub schedule: RadiusSchedule,
    pub center_rel: f64,
    pub max_centers: Option<usize>,
    /// Eigenstates analysed by `eigen-decay`.
    pub states: usize,
    /// Green's-function source; `null` is the cell at the domain centre.
    pub source_cell: Option<usize>,
    pub friedrichs_samples: usize,
    /// `ℓ̃` for the tensor-field `K` estimate.
    pub ell_tilde: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            n_ev: 16,
            oracle: OracleKind::Auto,
            shift: 0.0,
            decay_k_max: 8,
            schedule: RadiusSchedule::Linear,
            center_rel: 0.5,
            max_centers: Some(1),
            states: 1,
            source_cell: None,
            friedrichs_samples: 50,
            ell_tilde: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("qloc-out") }
    }
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub subcommand: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<ArtifactDigest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactDigest {
    pub name: String,
    pub sha256: String,
}

/// Anything a `--config` file may contain.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfigSource {
    Plain(ExperimentConfig),
    Manifest(Manifest),
}

impl ConfigSource {
    pub fn config(&self) -> &ExperimentConfig {
        match self {
            ConfigSource::Plain(c) => c,
            ConfigSource::Manifest(m) => &m.config,
        }
    }
}

/// Parses a config or a manifest (recognized by `manifest_version`).
pub fn parse_config(text: &str) -> Result<ConfigSource, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if value.get("manifest_version").is_some() {
        let m: Manifest = serde_json::from_value(value).map_err(|e| format!("manifest: {e}"))?;
        if m.manifest_version != MANIFEST_VERSION {
            return Err(format!("unsupported manifest version {}", m.manifest_version));
        }
        Ok(ConfigSource::Manifest(m))
    } else {
        serde_json::from_value(value).map(ConfigSource::Plain).map_err(|e| e.to_string())
    }
}

pub fn load_config(path: &Path) -> Result<ConfigSource, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read: {e}"))?;
    parse_config(&text)
}

fn check(ok: bool, errors: &mut Vec<String>, msg: impl FnOnce() -> String) {
    if !ok {
        errors.push(msg());
    }
}

impl ExperimentConfig {
    /// All violated constraints, each prefixed by its key path.
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        let f = &self.field;
        check((1..=3).contains(&f.d), &mut e, || format!("field.d: {} not in 1..=3", f.d));
        check(f.inv_eps >= 2, &mut e, || format!("field.inv_eps: {} must be at least 2", f.inv_eps));
        check(f.alpha.is_finite() && f.alpha >= 0.0, &mut e, || format!("field.alpha: {} must be finite and >= 0", f.alpha));
        match (f.beta, f.beta_scale) {
            (Some(_), Some(_)) => e.push("field: give either beta or beta_scale, not both".into()),
            (None, None) => e.push("field: one of beta or beta_scale is required".into()),
            (Some(b), None) => {
                check(b.is_finite() && b > 0.0 && b >= f.alpha, &mut e, || format!("field.beta: {b} must be finite, positive and >= alpha"))
            }
            (None, Some(s)) => check(s.is_finite() && s > 0.0, &mut e, || format!("field.beta_scale: {s} must be finite and positive")),
        }
        match &f.generator {
            Generator::Iid { p_beta: p } | Generator::Tensor { p_alpha_1d: p } => {
                check((0.0..=1.0).contains(p), &mut e, || format!("field.generator: probability {p} not in [0, 1]"))
            }
            Generator::Domino { level_decay, max_level } => {
                check(level_decay.is_finite() && *level_decay > 0.0, &mut e, || {
                    format!("field.generator.level_decay: {level_decay} must be positive")
                });
                check(*max_level >= 1, &mut e, || "field.generator.max_level: must be at least 1".into());
            }
            Generator::Periodic | Generator::Constant => {}
        }
        if let Some(p) = &f.plant {
            check(p.anchor.len() == f.d && p.sides.len() == f.d, &mut e, || format!("field.plant: anchor and sides need {} entries", f.d));
            check(p.anchor.iter().all(|&a| a < f.inv_eps), &mut e, || "field.plant.anchor: coordinates must be < inv_eps".into());
            check(p.sides.iter().all(|&s| s >= 1 && s <= f.inv_eps), &mut e, || "field.plant.sides: must lie in 1..=inv_eps".into());
        }
        let s = &self.subgrid;
        check(s.m >= 1, &mut e, || "subgrid.m: must be at least 1".into());
        check(s.dof_limit >= 1, &mut e, || "subgrid.dof_limit: must be at least 1".into());
        let p = &self.preconditioner;
        check(p.c_l.is_finite() && p.c_l > 0.0, &mut e, || format!("preconditioner.c_l: {} must be positive", p.c_l));
        if let Some(g) = p.target_gamma {
            check(g > 0.0 && g < 1.0, &mut e, || format!("preconditioner.target_gamma: {g} not in (0, 1)"));
        }
        check(p.estimate_iters >= 2, &mut e, || "preconditioner.estimate_iters: must be at least 2".into());
        let it = &self.iteration;
        if let Some(k) = it.k {
            check(k >= 1, &mut e, || "iteration.K: must be at least 1".into());
        }
        check(it.k_max >= 1, &mut e, || "iteration.k_max: must be at least 1".into());
        check(it.gap_target > 0.0 && it.gap_target < 1.0, &mut e, || format!("iteration.gap_target: {} not in (0, 1)", it.gap_target));
        check(it.tol > 0.0 && it.tol < 1.0, &mut e, || format!("iteration.tol: {} not in (0, 1)", it.tol));
        check(it.m_tilde >= 1 && s.m.is_multiple_of(it.m_tilde.max(1)), &mut e, || {
            format!("iteration.m_tilde: {} must divide subgrid.m = {}", it.m_tilde, s.m)
        });
        check(it.mask_rel > 0.0 && it.mask_rel <= 1.0, &mut e, || format!("iteration.mask_rel: {} not in (0, 1]", it.mask_rel));
        let a = &self.analysis;
        check(a.n_ev >= 1, &mut e, || "analysis.n_ev: must be at least 1".into());
        check(a.shift.is_finite(), &mut e, || "analysis.shift: must be finite".into());
        check(a.decay_k_max >= 2, &mut e, || "analysis.decay_k_max: must be at least 2".into());
        check(a.center_rel > 0.0 && a.center_rel <= 1.0, &mut e, || format!("analysis.center_rel: {} not in (0, 1]", a.center_rel));
        check(a.max_centers != Some(0), &mut e, || "analysis.max_centers: must be at least 1".into());
        check(a.states >= 1, &mut e, || "analysis.states: must be at least 1".into());
        check(a.ell_tilde >= 1, &mut e, || "analysis.ell_tilde: must be at least 1".into());
        e
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.field.inv_eps as f64
    }

    /// Fills derived values; the result validates iff `self` does.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        if let (None, Some(s)) = (c.field.beta, c.field.beta_scale) {
            let eps = c.eps();
            c.field.beta = Some(s / (eps * eps));
            c.field.beta_scale = None;
        }
        c
    }

    pub fn beta(&self) -> f64 {
        match (self.field.beta, self.field.beta_scale) {
            (Some(b), _) => b,
            (None, Some(s)) => s / (self.eps() * self.eps()),
            (None, None) => f64::NAN,
        }
    }

    pub fn plant_cuboid(&self) -> Option<Cuboid> {
        self.field.plant.as_ref().map(|p| {
            let mut c = Cuboid { anchor: [0; 3], sides: [1; 3] };
            for k in 0..p.anchor.len().min(3) {
                c.anchor[k] = p.anchor[k];
                c.sides[k] = p.sides[k];
            }
            c
        })
    }

    /// Content hash of the config without its output location, in the style
    /// of a git object id: SHA-256 of `config <len>\0<canonical json>`.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig { dir: PathBuf::new() };
        let json = serde_json::to_string(&c).expect("config serializes");
        let mut bytes = format!("config {}\0", json.len()).into_bytes();
        bytes.extend_from_slice(json.as_bytes());
        qloc::io::sha256_hex(&bytes)
    }
}

/// `fig1`: 2D i.i.d. checkerboard, ε = 2⁻⁶, β = 4/ε², α = 1.
pub fn fig1_config(full: bool) -> ExperimentConfig {
    ExperimentConfig {
        seed: 1,
        field: FieldConfig {
            d: 2,
            inv_eps: 64,
            generator: Generator::Iid { p_beta: 0.5 },
            alpha: 1.0,
            beta: None,
            beta_scale: Some(4.0),
            plant: None,
        },
        subgrid: SubgridConfig { m: if full { 4 } else { 2 }, ..Default::default() },
        preconditioner: PreconditionerConfig::default(),
        iteration: IterationConfig::default(),
        analysis: AnalysisConfig { n_ev: 3, states: 3, decay_k_max: 12, ..Default::default() },
        output: OutputConfig::default(),
    }
    .resolved()
}

/// `fig2`: 1D, ε = 2⁻⁸, β = 8/ε², α = 1; the random field is compared
/// against the periodic one.
pub fn fig2_config(full: bool) -> ExperimentConfig {
    ExperimentConfig {
        seed: 1,
        field: FieldConfig {
            d: 1,
            inv_eps: 256,
            generator: Generator::Iid { p_beta: 0.5 },
            alpha: 1.0,
            beta: None,
            beta_scale: Some(8.0),
            plant: None,
        },
        subgrid: SubgridConfig { m: if full { 8 } else { 2 }, ..Default::default() },
        preconditioner: PreconditionerConfig::default(),
        iteration: IterationConfig::default(),
        analysis: AnalysisConfig { n_ev: 64, states: 4, ..Default::default() },
        output: OutputConfig::default(),
    }
    .resolved()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"field": {"d": 1, "inv_eps": 16, "generator": {"type": "iid"}, "beta_scale": 8}}"#
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse_config(minimal()).unwrap();
        let c = c.config();
        assert!(c.validate().is_empty());
        assert_eq!(c.subgrid.m, 4);
        assert_eq!(c.field.generator, Generator::Iid { p_beta: 0.5 });
        assert_eq!(c.beta(), 8.0 * 256.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let t = r#"{"field": {"d": 1, "inv_eps": 16, "generator": {"type": "iid", "q": 1}, "beta": 8}}"#;
        assert!(parse_config(t).is_err());
        let t = r#"{"field": {"d": 1, "inv_eps": 16, "generator": {"type": "periodic"}, "beta": 8}, "extra": 0}"#;
        assert!(parse_config(t).is_err());
    }

    #[test]
    fn validation_names_the_key() {
        let t = r#"{"field": {"d": 4, "inv_eps": 1, "generator": {"type": "periodic"}, "beta": 8, "beta_scale": 1}}"#;
        let errs = parse_config(t).unwrap().config().validate();
        assert!(errs.iter().any(|e| e.starts_with("field.d")));
        assert!(errs.iter().any(|e| e.starts_with("field.inv_eps")));
        assert!(errs.iter().any(|e| e.contains("not both")));
    }

    #[test]
    fn resolution_is_idempotent_and_hash_ignores_output() {
        let c = parse_config(minimal()).unwrap().config().resolved();
        assert_eq!(c.field.beta, Some(2048.0));
        assert_eq!(c.resolved(), c);
        let mut d = c.clone();
        d.output.dir = PathBuf::from("elsewhere");
        assert_eq!(c.content_hash(), d.content_hash());
        d.seed += 1;
        assert_ne!(c.content_hash(), d.content_hash());
    }

    #[test]
    fn manifest_round_trip() {
        let c = fig2_config(false);
        let m = Manifest {
            manifest_version: MANIFEST_VERSION,
            subcommand: "fig2".into(),
            config_hash: c.content_hash(),
            config: c.clone(),
            artifacts: vec![],
        };
        let text = serde_json::to_string_pretty(&m).unwrap();
        assert_eq!(parse_config(&text).unwrap(), ConfigSource::Manifest(m));
    }

    #[test]
    fn canned_configs_match_the_figures() {
        let c = fig1_config(false);
        assert_eq!((c.field.d, c.field.inv_eps), (2, 64));
        assert_eq!(c.field.beta, Some(4.0 * 64.0 * 64.0));
        let c = fig2_config(false);
        assert_eq!((c.field.d, c.field.inv_eps), (1, 256));
        assert_eq!(c.field.beta, Some(8.0 * 256.0 * 256.0));
        assert!(fig1_config(true).validate().is_empty() && fig2_config(true).validate().is_empty());
    }
}
