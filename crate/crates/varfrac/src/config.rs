//! Flat key-value experiment configuration.
//!
//! The format is `section.key = value` per line, `#` starts a comment,
//! lists are comma-separated. Parsing is total: every violation in the file
//! is collected and reported at once, each named by its key path.

use crate::grid::GridSpec;
use crate::kernel::VarOrderField;
use crate::profiles::DataProfile;
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

pub const P_RANGE: (f64, f64) = (1.1, 10.0);

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// Variable-order selector, mirroring the built-in order fields.
#[derive(Debug, Clone, PartialEq)]
pub enum OrderSpec {
    Constant { s0: f64 },
    Affine { base: f64, slope: f64, saturate: f64 },
    Bump { base: f64, amplitude: f64, width: f64 },
}

impl OrderSpec {
    pub fn order_field(&self) -> VarOrderField {
        match *self {
            OrderSpec::Constant { s0 } => VarOrderField::constant(s0),
            OrderSpec::Affine {
                base,
                slope,
                saturate,
            } => VarOrderField::affine(base, slope, saturate),
            OrderSpec::Bump {
                base,
                amplitude,
                width,
            } => VarOrderField::bump(base, amplitude, width),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckKind {
    Contraction,
    Comparison,
    Energy,
    Tail,
    Renormalized,
    Entropy,
    Poincare,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::Contraction,
        CheckKind::Comparison,
        CheckKind::Energy,
        CheckKind::Tail,
        CheckKind::Renormalized,
        CheckKind::Entropy,
        CheckKind::Poincare,
    ];
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CheckKind::Contraction => "contraction",
            CheckKind::Comparison => "comparison",
            CheckKind::Energy => "energy",
            CheckKind::Tail => "tail",
            CheckKind::Renormalized => "renormalized",
            CheckKind::Entropy => "entropy",
            CheckKind::Poincare => "poincare",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub order: OrderSpec,
    pub p: f64,
    pub initial: DataProfile,
    pub source: DataProfile,
    pub steps: usize,
    pub cascade_levels: Vec<f64>,
    pub cascade_energy_k: Vec<f64>,
    pub checks: Vec<CheckKind>,
    /// Amplitude of the bump test functions used by the identity checks.
    pub phi_amplitude: f64,
    /// Truncation levels evaluated by the entropy check.
    pub entropy_k: Vec<f64>,
    /// Size of the nonnegative data bump defining the second, larger problem
    /// for the contraction and comparison checks.
    pub perturbation: f64,
    /// Optional trajectory CSV inputs replacing the check run's own solves;
    /// `traj_u` is the primary trajectory, `traj_v` the companion.
    pub traj_u: Option<String>,
    pub traj_v: Option<String>,
    pub solver_tolerance: Option<f64>,
    pub solver_max_iters: usize,
    /// Grid sizes exercised by the bench command.
    pub bench_sizes: Vec<usize>,
    /// Output directory; a CLI `--out` flag takes precedence.
    pub output_dir: Option<String>,
    pub seed: u64,
}

const KNOWN_KEYS: &[&str] = &[
    "grid.dimension",
    "grid.box_lo_x",
    "grid.box_lo_y",
    "grid.box_hi_x",
    "grid.box_hi_y",
    "grid.cells",
    "grid.collar",
    "grid.horizon",
    "order.kind",
    "order.base",
    "order.slope",
    "order.saturate",
    "order.amplitude",
    "order.width",
    "model.p",
    "initial.kind",
    "initial.value",
    "initial.center_x",
    "initial.center_y",
    "initial.width",
    "initial.alpha",
    "initial.amplitude",
    "source.kind",
    "source.value",
    "source.center_x",
    "source.center_y",
    "source.width",
    "source.alpha",
    "source.amplitude",
    "time.steps",
    "cascade.levels",
    "cascade.energy_k",
    "checks.select",
    "checks.phi_amplitude",
    "checks.entropy_k",
    "checks.perturbation",
    "checks.traj_u",
    "checks.traj_v",
    "solver.tolerance",
    "solver.max_iters",
    "bench.sizes",
    "output.dir",
    "run.seed",
];

struct Raw {
    entries: HashMap<String, (usize, String)>,
    errors: Vec<String>,
}

impl Raw {
    fn lex(text: &str) -> Self {
        let mut entries: HashMap<String, (usize, String)> = HashMap::new();
        let mut errors = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {lineno}: expected `key = value`, got `{line}`"));
                continue;
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                errors.push(format!("line {lineno}: unknown key `{key}`"));
                continue;
            }
            if let Some(&(first, _)) = entries.get(&key) {
                errors.push(format!(
                    "line {lineno}: duplicate key `{key}` (first set at line {first})"
                ));
                continue;
            }
            entries.insert(key, (lineno, value));
        }
        Self { entries, errors }
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> f64 {
        match self.take(key) {
            None => default,
            Some(v) => v.parse().unwrap_or_else(|_| {
                self.errors.push(format!("{key}: not a number: `{v}`"));
                default
            }),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> usize {
        match self.take(key) {
            None => default,
            Some(v) => v.parse().unwrap_or_else(|_| {
                self.errors
                    .push(format!("{key}: not a nonnegative integer: `{v}`"));
                default
            }),
        }
    }

    fn f64_list_or(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        match self.take(key) {
            None => default.to_vec(),
            Some(v) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    match part.trim().parse() {
                        Ok(x) => out.push(x),
                        Err(_) => self
                            .errors
                            .push(format!("{key}: not a number: `{}`", part.trim())),
                    }
                }
                out
            }
        }
    }

    fn require(&mut self, key: &str, cond: bool, message: &str) {
        if !cond {
            self.errors.push(format!("{key}: {message}"));
        }
    }
}

fn parse_profile(raw: &mut Raw, section: &str, default_kind: &str) -> DataProfile {
    let kind = raw
        .take(&format!("{section}.kind"))
        .unwrap_or_else(|| default_kind.to_string());
    let center = |raw: &mut Raw| {
        [
            raw.f64_or(&format!("{section}.center_x"), 0.5),
            raw.f64_or(&format!("{section}.center_y"), 0.5),
        ]
    };
    match kind.as_str() {
        "zero" => DataProfile::Zero,
        "constant" => DataProfile::Constant {
            value: raw.f64_or(&format!("{section}.value"), 1.0),
        },
        "gaussian" => DataProfile::Gaussian {
            center: center(raw),
            width: raw.f64_or(&format!("{section}.width"), 0.2),
            amplitude: raw.f64_or(&format!("{section}.amplitude"), 1.0),
        },
        "inverse_power" => DataProfile::InversePower {
            center: center(raw),
            alpha: raw.f64_or(&format!("{section}.alpha"), 0.5),
            amplitude: raw.f64_or(&format!("{section}.amplitude"), 1.0),
        },
        "random" => DataProfile::Random {
            amplitude: raw.f64_or(&format!("{section}.amplitude"), 1.0),
        },
        other => {
            raw.errors.push(format!(
                "{section}.kind: no such profile `{other}` (zero, constant, gaussian, inverse_power, random)"
            ));
            DataProfile::Zero
        }
    }
}

fn parse_order(raw: &mut Raw) -> OrderSpec {
    let kind = raw
        .take("order.kind")
        .unwrap_or_else(|| "constant".to_string());
    let base = raw.f64_or("order.base", 0.4);
    let spec = match kind.as_str() {
        "constant" => OrderSpec::Constant { s0: base },
        "affine" => OrderSpec::Affine {
            base,
            slope: raw.f64_or("order.slope", 0.2),
            saturate: raw.f64_or("order.saturate", 1.0),
        },
        "bump" => OrderSpec::Bump {
            base,
            amplitude: raw.f64_or("order.amplitude", 0.1),
            width: raw.f64_or("order.width", 0.25),
        },
        other => {
            raw.errors.push(format!(
                "order.kind: no such order field `{other}` (constant, affine, bump)"
            ));
            OrderSpec::Constant { s0: base }
        }
    };
    let bounds_ok = |s_minus: f64, s_plus: f64| s_minus > 0.0 && s_minus <= s_plus && s_plus < 1.0;
    let ok = match spec {
        OrderSpec::Constant { s0 } => bounds_ok(s0, s0),
        OrderSpec::Affine { base, slope, .. } => bounds_ok(base, base + slope.abs()),
        OrderSpec::Bump {
            base, amplitude, ..
        } => bounds_ok(base.min(base + amplitude), base.max(base + amplitude)),
    };
    raw.require(
        "order.base",
        ok,
        "order values must stay strictly inside (0, 1)",
    );
    spec
}

fn parse_checks(raw: &mut Raw) -> Vec<CheckKind> {
    let Some(list) = raw.take("checks.select") else {
        return CheckKind::ALL.to_vec();
    };
    let mut out = Vec::new();
    for part in list.split(',') {
        let part = part.trim();
        let kind = match part {
            "all" => {
                out.extend(CheckKind::ALL);
                continue;
            }
            "contraction" => CheckKind::Contraction,
            "comparison" => CheckKind::Comparison,
            "energy" => CheckKind::Energy,
            "tail" => CheckKind::Tail,
            "renormalized" => CheckKind::Renormalized,
            "entropy" => CheckKind::Entropy,
            "poincare" => CheckKind::Poincare,
            other => {
                raw.errors
                    .push(format!("checks.select: no such check `{other}`"));
                continue;
            }
        };
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    out
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = Raw::lex(text);

    let dimension = raw.usize_or("grid.dimension", 1);
    raw.require("grid.dimension", dimension == 1 || dimension == 2, "must be 1 or 2");
    let cells = raw.usize_or("grid.cells", 16);
    raw.require("grid.cells", cells >= 2, "needs at least 2 cells per axis");
    let box_lo = [raw.f64_or("grid.box_lo_x", 0.0), raw.f64_or("grid.box_lo_y", 0.0)];
    let box_hi = [raw.f64_or("grid.box_hi_x", 1.0), raw.f64_or("grid.box_hi_y", 1.0)];
    for axis in 0..dimension.min(2) {
        raw.require(
            if axis == 0 { "grid.box_hi_x" } else { "grid.box_hi_y" },
            box_hi[axis] > box_lo[axis],
            "box upper bound must exceed the lower bound",
        );
    }
    let default_collar = if cells >= 2 && box_hi[0] > box_lo[0] {
        (box_hi[0] - box_lo[0]) / cells as f64
    } else {
        0.1
    };
    let collar = raw.f64_or("grid.collar", default_collar);
    raw.require("grid.collar", collar > 0.0, "collar must be positive");
    let horizon = raw.f64_or("grid.horizon", 1.0);
    raw.require("grid.horizon", horizon > 0.0, "time horizon must be positive");

    let order = parse_order(&mut raw);

    let p = raw.f64_or("model.p", 2.0);
    raw.require(
        "model.p",
        (P_RANGE.0..=P_RANGE.1).contains(&p),
        &format!("p = {p} outside the supported range [{}, {}]", P_RANGE.0, P_RANGE.1),
    );

    let initial = parse_profile(&mut raw, "initial", "gaussian");
    let source = parse_profile(&mut raw, "source", "zero");
    if let Err(e) = initial.validate(dimension.clamp(1, 2)) {
        raw.errors.push(format!("initial: {e}"));
    }
    if let Err(e) = source.validate(dimension.clamp(1, 2)) {
        raw.errors.push(format!("source: {e}"));
    }

    let steps = raw.usize_or("time.steps", 8);
    raw.require("time.steps", steps >= 1, "needs at least one time step");

    let cascade_levels = raw.f64_list_or("cascade.levels", &[]);
    let cascade_energy_k = raw.f64_list_or("cascade.energy_k", &[1.0]);
    let checks = parse_checks(&mut raw);
    let phi_amplitude = raw.f64_or("checks.phi_amplitude", 0.2);
    let entropy_k = raw.f64_list_or("checks.entropy_k", &[1.0, 2.0]);
    for &k in &entropy_k {
        raw.require("checks.entropy_k", k > 0.0, "truncation levels must be positive");
    }
    let perturbation = raw.f64_or("checks.perturbation", 0.5);
    raw.require(
        "checks.perturbation",
        perturbation >= 0.0,
        "perturbation must be nonnegative",
    );
    let traj_u = raw.take("checks.traj_u");
    let traj_v = raw.take("checks.traj_v");

    let solver_tolerance = raw.take("solver.tolerance").map(|v| {
        v.parse().unwrap_or_else(|_| {
            raw.errors
                .push(format!("solver.tolerance: not a number: `{v}`"));
            1e-10
        })
    });
    if let Some(t) = solver_tolerance {
        raw.require("solver.tolerance", t > 0.0, "tolerance must be positive");
    }
    let solver_max_iters = raw.usize_or("solver.max_iters", 100_000);
    raw.require("solver.max_iters", solver_max_iters >= 1, "needs at least one iteration");

    let bench_sizes = raw
        .f64_list_or("bench.sizes", &[16.0, 32.0])
        .into_iter()
        .map(|v| v as usize)
        .collect::<Vec<_>>();
    for &m in &bench_sizes {
        raw.require("bench.sizes", m >= 2, "bench grids need at least 2 cells");
    }

    let output_dir = raw.take("output.dir");
    let seed = raw.usize_or("run.seed", 0) as u64;

    // Anything still unconsumed was recognized but unreachable for the
    // selected kinds; flag it rather than silently ignoring.
    let mut leftovers: Vec<_> = raw.entries.iter().collect();
    leftovers.sort_by_key(|(_, &(line, _))| line);
    for (key, (line, _)) in leftovers {
        raw.errors.push(format!(
            "line {line}: key `{key}` does not apply to the selected kinds"
        ));
    }

    if !raw.errors.is_empty() {
        raw.errors.sort();
        return Err(ConfigError::Invalid(raw.errors));
    }

    Ok(ExperimentConfig {
        grid: GridSpec {
            dimension,
            box_lo,
            box_hi,
            cells_per_axis: cells,
            collar_radius: collar,
            time_horizon: horizon,
        },
        order,
        p,
        initial,
        source,
        steps,
        cascade_levels,
        cascade_energy_k,
        checks,
        phi_amplitude,
        entropy_k,
        perturbation,
        traj_u,
        traj_v,
        solver_tolerance,
        solver_max_iters,
        bench_sizes,
        output_dir,
        seed,
    })
}
