//! Experiment configuration: a JSON file with defaults for every section.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use twofold::fields::{PolyTrigField, SmoothField};
use twofold::hamiltonian::{HamiltonianParams, MODEL_NAME};
use twofold::{FilippovModel, FlowOptions};

/// A configuration problem, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Analyze,
    Melnikov,
    Predict,
    Simulate,
    Verify,
}

/// Inline model: polynomial fields with sinusoidal forcing. `f_plus`
/// defaults to the reflection of `f_minus`, the perturbations to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub f_minus: PolyTrigField,
    #[serde(default)]
    pub f_plus: Option<PolyTrigField>,
    #[serde(default)]
    pub g_minus: Option<PolyTrigField>,
    #[serde(default)]
    pub g_plus: Option<PolyTrigField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Registry(String),
    Inline(Box<InlineModel>),
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::Registry(MODEL_NAME.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub alpha: f64,
    pub lambda: f64,
    pub sigma: f64,
    /// Sorted descending.
    pub epsilons: Vec<f64>,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda: 2.0,
            sigma: 2.0,
            epsilons: vec![1e-2, 1e-3, 1e-4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    pub theta: usize,
    pub x: usize,
    pub sigma_table: usize,
    /// Interval searched for the folds of `F-`.
    pub x_range: [f64; 2],
    /// Interior points per integration step in trajectory files.
    pub substeps: usize,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            theta: 64,
            x: 32,
            sigma_table: 128,
            x_range: [-3.0, 3.0],
            substeps: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub tol_event: f64,
    pub tol_tangency: f64,
    pub newton: f64,
    pub newton_max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let f = FlowOptions::default();
        Self {
            rtol: f.rtol,
            atol: f.atol,
            tol_event: f.tol_event,
            tol_tangency: f.tol_tangency,
            newton: twofold::verify::TOL_FP,
            newton_max_iter: 40,
        }
    }
}

/// Initial condition of `simulate`; unset values fall back to phase 0, the
/// middle of the annulus on Σ and two forcing periods.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSpec {
    pub theta0: Option<f64>,
    pub x0: Option<f64>,
    pub y0: f64,
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    /// `(θ, x)` points for the displacement–Melnikov Richardson table.
    pub richardson: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub params: Params,
    pub run: Option<RunKind>,
    pub grids: Grids,
    pub tolerances: Tolerances,
    pub simulate: SimulateSpec,
    pub verify: VerifySpec,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError::new(json_field(&text, &e), e.to_string()))
    }

    pub fn validate(&self, run: RunKind) -> Result<(), ConfigError> {
        if let Some(r) = self.run {
            if r != run {
                return Err(ConfigError::new(
                    "run",
                    format!("config is for `{r:?}` but `{run:?}` was requested"),
                ));
            }
        }
        let p = &self.params;
        if p.epsilons.is_empty() {
            return Err(ConfigError::new("params.epsilons", "must not be empty"));
        }
        if p.epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(ConfigError::new(
                "params.epsilons",
                "entries must be positive and finite",
            ));
        }
        if p.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(ConfigError::new(
                "params.epsilons",
                "must be sorted strictly descending",
            ));
        }
        if !(p.sigma > 0.0) {
            return Err(ConfigError::new("params.sigma", "must be positive"));
        }
        if let ModelSpec::Registry(name) = &self.model {
            if name != MODEL_NAME {
                return Err(ConfigError::new(
                    "model",
                    format!("unknown model `{name}`; known: {MODEL_NAME}"),
                ));
            }
            if !(p.alpha > 0.0) {
                return Err(ConfigError::new("params.alpha", "must be positive"));
            }
            self.hamiltonian()
                .validate()
                .map_err(|e| ConfigError::new("params.sigma", e.to_string()))?;
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.rtol", t.rtol),
            ("tolerances.atol", t.atol),
            ("tolerances.tol_event", t.tol_event),
            ("tolerances.tol_tangency", t.tol_tangency),
            ("tolerances.newton", t.newton),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ConfigError::new(name, "must be positive"));
            }
        }
        let g = &self.grids;
        if g.theta < 2 || g.x < 2 || g.sigma_table < 2 {
            return Err(ConfigError::new(
                "grids",
                "theta, x and sigma_table need at least 2 points",
            ));
        }
        if !(g.x_range[0] < g.x_range[1]) {
            return Err(ConfigError::new(
                "grids.x_range",
                "lower bound must be below upper bound",
            ));
        }
        if let Some(d) = self.simulate.duration {
            if !d.is_finite() || d == 0.0 {
                return Err(ConfigError::new(
                    "simulate.duration",
                    "must be finite and nonzero",
                ));
            }
        }
        Ok(())
    }

    pub fn hamiltonian(&self) -> HamiltonianParams {
        HamiltonianParams::new(self.params.alpha, self.params.lambda, self.params.sigma)
    }

    /// The unperturbed-at-ε=0 model; callers set ε per run.
    pub fn model(&self) -> FilippovModel {
        let sigma = self.params.sigma;
        let m = match &self.model {
            ModelSpec::Registry(_) => self.hamiltonian().model(0.0),
            ModelSpec::Inline(spec) => {
                let field = |f: &PolyTrigField| SmoothField::new(f.clone());
                let opt =
                    |f: &Option<PolyTrigField>| f.as_ref().map_or_else(SmoothField::zero, field);
                let f_minus = field(&spec.f_minus);
                let f_plus = spec
                    .f_plus
                    .as_ref()
                    .map_or_else(|| f_minus.reflected(), field);
                FilippovModel::new(
                    f_minus,
                    f_plus,
                    opt(&spec.g_minus),
                    opt(&spec.g_plus),
                    sigma,
                )
            }
        };
        m.with_tol_tangency(self.tolerances.tol_tangency)
    }

    pub fn flow_options(&self) -> FlowOptions {
        let t = &self.tolerances;
        FlowOptions {
            rtol: t.rtol,
            atol: t.atol,
            tol_event: t.tol_event,
            tol_tangency: t.tol_tangency,
            ..FlowOptions::default()
        }
    }

    /// SHA-256 of the canonical JSON of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Best-effort name of the offending field from a serde_json error.
fn json_field(text: &str, e: &serde_json::Error) -> String {
    let msg = e.to_string();
    if let Some(rest) = msg.split("unknown field `").nth(1) {
        if let Some(name) = rest.split('`').next() {
            return name.to_string();
        }
    }
    if let Some(rest) = msg.split("missing field `").nth(1) {
        if let Some(name) = rest.split('`').next() {
            return name.to_string();
        }
    }
    // Fall back to the key on the reported line.
    text.lines()
        .nth(e.line().saturating_sub(1))
        .and_then(|l| l.split('"').nth(1))
        .map_or_else(|| "<config>".to_string(), str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for run in [
            RunKind::Analyze,
            RunKind::Melnikov,
            RunKind::Predict,
            RunKind::Simulate,
            RunKind::Verify,
        ] {
            ExperimentConfig::default().validate(run).unwrap();
        }
    }

    #[test]
    fn epsilon_order_is_enforced() {
        let mut c = ExperimentConfig::default();
        c.params.epsilons = vec![1e-3, 1e-2];
        assert_eq!(
            c.validate(RunKind::Verify).unwrap_err().field,
            "params.epsilons"
        );
    }

    #[test]
    fn sigma_beyond_the_annulus_is_rejected() {
        let mut c = ExperimentConfig::default();
        c.params.sigma = 4.0;
        assert_eq!(
            c.validate(RunKind::Predict).unwrap_err().field,
            "params.sigma"
        );
    }

    #[test]
    fn run_mismatch_is_rejected() {
        let c = ExperimentConfig {
            run: Some(RunKind::Analyze),
            ..Default::default()
        };
        assert_eq!(c.validate(RunKind::Verify).unwrap_err().field, "run");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.params.lambda = -1.5;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn inline_model_parses() {
        let text = r#"{
            "model": {
                "f_minus": {"x": [{"coeff": -1}], "y": [{"coeff": 1, "px": 2}, {"coeff": -1}]},
                "g_minus": {"x": [], "y": [{"coeff": 1, "forcing": {"freq": 1.5707963267948966}}]}
            },
            "params": {"sigma": 2.0}
        }"#;
        let c: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert!(matches!(c.model, ModelSpec::Inline(_)));
        c.validate(RunKind::Analyze).unwrap();
        let m = c.model();
        let z = twofold::Vec2::new(0.5, -0.1);
        assert_eq!(
            m.f_minus.eval(0.0, z),
            c.hamiltonian().f_minus().eval(0.0, z)
        );
        assert_eq!(
            m.f_plus.eval(0.0, z),
            c.hamiltonian().model(0.0).f_plus.eval(0.0, z)
        );
    }

    #[test]
    fn unknown_field_is_named() {
        let err =
            serde_json::from_str::<ExperimentConfig>(r#"{"params": {"alpah": 1}}"#).unwrap_err();
        assert_eq!(json_field("", &err), "alpah");
    }
}
