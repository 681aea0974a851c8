//! Experiment configuration: one TOML or JSON file, overridden by flags.

use std::path::{Path, PathBuf};

use rvlab_core::inverse::RecoveryConfig;
use rvlab_core::solver::SolverOptions;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    RieszDemo,
    Rigidity,
    Selftest,
    Recover,
    ConstantsTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub n_cheb: usize,
    pub n_fourier: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            n_cheb: 23,
            n_fourier: 24,
        }
    }
}

impl Grid {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            n_cheb: self.n_cheb,
            n_fourier: self.n_fourier,
            ..Default::default()
        }
    }
}

/// Pass/fail thresholds, all scaled by `--tol-scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Distance of every `V(HS²)` route from `−2π`.
    pub hemisphere: f64,
    /// Spread of the split-point columns of the primitive table.
    pub eta_spread: f64,
    /// Round circle: distance from `−2π`.
    pub round: f64,
    /// Perturbed circles may exceed `−2π` by at most this much.
    pub ceiling: f64,
    /// Aspect ratios at or above `strict_aspect` must fall below `−2π` by this much.
    pub strict_gap: f64,
    pub gauss_bonnet: f64,
    /// Largest relative error of a recovered coefficient.
    pub recovery: f64,
    /// Generic floating-point agreement used by the self-test.
    pub numeric: f64,
    /// Monte-Carlo agreement used by the self-test.
    pub monte_carlo: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            hemisphere: 1e-6,
            eta_spread: 1e-12,
            round: 1e-5,
            ceiling: 1e-4,
            strict_gap: 1e-3,
            gauss_bonnet: 5e-3,
            recovery: 5e-2,
            numeric: 1e-10,
            monte_carlo: 1e-3,
        }
    }
}

impl Tolerances {
    fn all(&self) -> [f64; 9] {
        [
            self.hemisphere,
            self.eta_spread,
            self.round,
            self.ceiling,
            self.strict_gap,
            self.gauss_bonnet,
            self.recovery,
            self.numeric,
            self.monte_carlo,
        ]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let [hemisphere, eta_spread, round, ceiling, strict_gap, gauss_bonnet, recovery, numeric, monte_carlo] =
            self.all().map(|t| t * s);
        Tolerances {
            hemisphere,
            eta_spread,
            round,
            ceiling,
            strict_gap,
            gauss_bonnet,
            recovery,
            numeric,
            monte_carlo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RieszSection {
    /// Split points of the finite-part integral; the table must not depend on them.
    pub etas: Vec<f64>,
    /// Truncation heights for the `ε`-fit route, strictly decreasing.
    pub eps: Vec<f64>,
    /// Powers `x^a` tabulated, `a ∈ [a_min, a_max]`.
    pub a_min: i64,
    pub a_max: i64,
    pub max_log: u32,
}

impl Default for RieszSection {
    fn default() -> Self {
        RieszSection {
            etas: vec![1.0],
            eps: vec![0.3, 0.2, 0.15, 0.1, 0.07, 0.05, 0.03, 0.02],
            a_min: -3,
            a_max: 2,
            max_log: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigiditySection {
    /// Semi-axis ratios of the boundary ellipses.
    pub aspects: Vec<f64>,
    pub strict_aspect: f64,
    /// Number of randomly perturbed circles.
    pub perturbed: usize,
    /// Highest Fourier mode of the perturbations.
    pub modes: u32,
    /// Largest amplitude of each mode in `log r`.
    pub amplitude: f64,
    pub grid: Grid,
}

impl Default for RigiditySection {
    fn default() -> Self {
        RigiditySection {
            aspects: vec![1.0, 1.1, 1.25, 1.5, 1.75, 2.0],
            strict_aspect: 1.5,
            perturbed: 20,
            modes: 4,
            amplitude: 0.05,
            grid: Grid {
                n_cheb: 23,
                n_fourier: 32,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsSection {
    pub max_k: u32,
    pub max_m: u32,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        ConstantsSection {
            max_k: 10,
            max_m: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// `ω₀` is taken from the jet file.
    Known,
    /// The conformal class of `ω₀(p)` is detected from limit areas.
    Detect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverSection {
    /// Ground-truth jet in the metric-jet JSON schema; relative to the config file.
    pub jet: Option<PathBuf>,
    pub point: Vec<f64>,
    pub max_order: u32,
    pub boundary: Boundary,
    pub grid: Grid,
    pub pipeline: RecoveryConfig,
}

impl Default for RecoverSection {
    fn default() -> Self {
        RecoverSection {
            jet: None,
            point: vec![0.0, 0.0],
            max_order: 2,
            boundary: Boundary::Known,
            grid: Grid::default(),
            pipeline: RecoveryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present it must name the subcommand being run.
    pub experiment: Option<Experiment>,
    pub seed: u64,
    pub out: PathBuf,
    pub tolerances: Tolerances,
    pub riesz: RieszSection,
    pub rigidity: RigiditySection,
    pub constants: ConstantsSection,
    pub recover: RecoverSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            seed: 0,
            out: PathBuf::from("rvlab-out"),
            tolerances: Tolerances::default(),
            riesz: RieszSection::default(),
            rigidity: RigiditySection::default(),
            constants: ConstantsSection::default(),
            recover: RecoverSection::default(),
        }
    }
}

fn strictly_decreasing_positive(v: &[f64]) -> bool {
    v.iter().all(|&x| x > 0.0) && v.windows(2).all(|w| w[0] > w[1])
}

fn grid_ok(g: &Grid) -> bool {
    g.n_cheb >= 5 && g.n_cheb % 2 == 1 && g.n_fourier >= 4 && g.n_fourier % 2 == 0
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`. A relative jet path
    /// is resolved against the directory of the file.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        } else {
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        };
        if let (Some(jet), Some(dir)) = (&cfg.recover.jet, path.parent()) {
            if jet.is_relative() {
                cfg.recover.jet = Some(dir.join(jet));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        if !self
            .tolerances
            .all()
            .iter()
            .all(|&t| t > 0.0 && t.is_finite())
        {
            problems.push("every tolerance must be positive".to_string());
        }
        if !strictly_decreasing_positive(&self.riesz.eps)
            || self.riesz.eps.first().is_some_and(|&e| e >= 1.0)
        {
            problems.push("riesz.eps must be strictly decreasing in (0, 1)".into());
        }
        if self.riesz.etas.is_empty() || !self.riesz.etas.iter().all(|&e| e > 0.0 && e <= 1.0) {
            problems.push("riesz.etas must be non-empty and in (0, 1]".into());
        }
        if self.riesz.a_min > self.riesz.a_max {
            problems.push("riesz.a_min exceeds riesz.a_max".into());
        }
        let r = &self.rigidity;
        if r.aspects.iter().any(|&a| !(a >= 1.0)) || r.amplitude < 0.0 || !grid_ok(&r.grid) {
            problems.push("rigidity: aspects must be ≥ 1, amplitude ≥ 0, grid odd × even".into());
        }
        if self.constants.max_k == 0 || self.constants.max_m == 0 {
            problems.push("constants: max_k and max_m must be positive".into());
        }
        if !grid_ok(&self.recover.grid) {
            problems.push("recover.grid must have odd n_cheb ≥ 5 and even n_fourier ≥ 4".into());
        }
        if let Err(e) = self.recover.pipeline.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}
