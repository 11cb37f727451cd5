//! Run configuration: TOML file, `key=value` overrides, validation.
//!
//! The file is flat `key = value` text. Tables such as `[quantum]` may be
//! used to group keys; their names are ignored and their keys merged into
//! the top level, so every key must be unique across the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fidelity_core::action::{PerturbationFamily, PerturbationSpec};
use fidelity_core::classical::{MapKind, MapSpec};
use fidelity_core::quantum::QuantumDims;
use fidelity_core::rng::Region;

use crate::error::{RunError, RunResult};

/// Initial-state family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Point,
    Gaussian,
}

/// Where ensemble centres are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    /// The whole torus.
    Full,
    /// `[pi/2, 3pi/2)` in both coordinates.
    Central,
}

impl RegionKind {
    pub fn region(self) -> Region {
        match self {
            RegionKind::Full => Region::FULL,
            RegionKind::Central => Region::CENTRAL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format '{other}' (expected csv or json)")),
        }
    }
}

/// Every parameter a subcommand may read; unused keys are ignored by the
/// commands that do not need them but are still recorded in the metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `standard` (kicked rotator) or `sawtooth`.
    pub map: String,
    #[serde(rename = "K")]
    pub k: f64,
    /// Hilbert-space dimension.
    #[serde(rename = "N")]
    pub n: usize,
    /// Quantum perturbation strength `eps / hbar`.
    pub sigma: Option<f64>,
    /// Classical perturbation strength; exclusive with `sigma`.
    pub epsilon: Option<f64>,
    /// `cosine` or a monomial order such as `v2`.
    pub perturbation: String,
    pub state: StateKind,
    /// `hbar / xi^2`; 1 gives `xi = sqrt(hbar)`.
    pub kappa: f64,
    pub region: RegionKind,
    /// Number of initial states.
    pub ensemble: usize,
    /// Number of kicks.
    #[serde(rename = "T")]
    pub t_max: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub format: Format,
    /// Strength sweep for scans.
    pub sigmas: Vec<f64>,
    /// Dimension sweep for the regime diagram.
    pub sizes: Vec<usize>,
    /// Times for action dumps and variance reports.
    pub times: Vec<usize>,
    /// Classical Monte Carlo sample count.
    pub samples: usize,
    /// Correlation lag cut-off for `K(E)`.
    pub l_max: usize,
    /// Action diffusion constant; estimated by Monte Carlo when absent.
    pub k_e: Option<f64>,
    /// Extra curves for `fidelity`: any of `lambda`, `lambda1`, `fgr`, `pt`.
    pub predictors: Vec<String>,
    /// Emit every member's `M(t)` as well as the averages.
    pub per_state: bool,
    /// Rate-fit window `[t_lo, t_hi]`; automatic when absent.
    pub fit_window: Option<[f64; 2]>,
    /// Saturation constant `c` of the automatic fit window floor `c / N`.
    pub saturation_c: f64,
    /// Histogram bin count.
    pub bins: usize,
    /// Fixed Lévy index; free when absent.
    pub fix_alpha: Option<f64>,
    /// Also fit a Lévy law with free index.
    pub fit_free_alpha: bool,
    /// Phase tolerance of the piecewise-linear point-source estimate.
    pub chord_tol: f64,
    /// Relative-error threshold defining the breakdown time.
    pub threshold: f64,
    /// Breakdown runs use `sigma = sigma_fraction * sigma_p(N)`.
    pub sigma_fraction: f64,
    /// Breakdown runs follow `horizon * N` kicks.
    pub horizon: f64,
    /// Smallest `|k_p|` at a packet centre for short-time runs; 0 disables.
    pub min_kp: f64,
    /// Initial position for action-curve dumps.
    pub r0: f64,
    /// Points per action-curve dump.
    pub curve_points: usize,
    /// `tau` estimator inputs.
    pub a1: f64,
    pub b_bar: f64,
    pub c0: f64,
    /// Second-order factor used in the regime-diagram window; measured when absent.
    pub d_factor: Option<f64>,
    /// Phase tolerance in radians defining the first-kick linear width.
    pub phase_tol: f64,
    /// Smallest `sigma` entering the large-`sigma` slope of `M(1)`.
    pub slope_min_sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            map: "sawtooth".into(),
            k: 1.0,
            n: 4096,
            sigma: None,
            epsilon: None,
            perturbation: "v2".into(),
            state: StateKind::Point,
            kappa: 1.0,
            region: RegionKind::Full,
            ensemble: 100,
            t_max: 50,
            seed: 1,
            out: PathBuf::from("out"),
            threads: 0,
            format: Format::Csv,
            sigmas: Vec::new(),
            sizes: Vec::new(),
            times: Vec::new(),
            samples: 1_000_000,
            l_max: 10,
            k_e: None,
            predictors: Vec::new(),
            per_state: false,
            fit_window: None,
            saturation_c: 1.0,
            bins: 200,
            fix_alpha: Some(1.0),
            fit_free_alpha: false,
            chord_tol: 0.1,
            threshold: 0.1,
            sigma_fraction: 0.25,
            horizon: 3.0,
            min_kp: 0.0,
            r0: 1.0,
            curve_points: 4096,
            a1: 5.0,
            b_bar: 1.0,
            c0: 0.45,
            d_factor: None,
            phase_tol: 1.0,
            slope_min_sigma: 100.0,
        }
    }
}

fn flatten(table: toml::Table) -> RunResult<toml::Table> {
    let mut flat = toml::Table::new();
    for (key, value) in table {
        match value {
            toml::Value::Table(inner) => {
                for (k, v) in inner {
                    if flat.insert(k.clone(), v).is_some() {
                        return Err(RunError::Config(format!("key '{k}' appears more than once")));
                    }
                }
            }
            v => {
                if flat.insert(key.clone(), v).is_some() {
                    return Err(RunError::Config(format!("key '{key}' appears more than once")));
                }
            }
        }
    }
    Ok(flat)
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Parses TOML text.
    pub fn from_toml(text: &str) -> RunResult<Self> {
        Self::from_parts(Some(text), &[])
    }

    /// Reads a config file, if any, then applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> RunResult<Self> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p)
                    .map_err(|e| RunError::Config(format!("cannot read config {}: {e}", p.display())))?,
            ),
            None => None,
        };
        Self::from_parts(text.as_deref(), overrides)
    }

    fn from_parts(text: Option<&str>, overrides: &[String]) -> RunResult<Self> {
        let table = match text {
            Some(t) => t
                .parse::<toml::Table>()
                .map_err(|e| RunError::Config(format!("cannot parse config: {e}")))?,
            None => toml::Table::new(),
        };
        let mut flat = flatten(table)?;
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| RunError::Config(format!("override '{item}' is not key=value")))?;
            flat.insert(key.trim().to_string(), parse_value(value.trim()));
        }
        let cfg: RunConfig = toml::Value::Table(flat)
            .try_into()
            .map_err(|e: toml::de::Error| RunError::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    /// Checks the fields every command relies on.
    pub fn validate(&self) -> RunResult<()> {
        let bad = |msg: String| Err(RunError::Config(msg));
        self.map_spec()?;
        self.family()?;
        QuantumDims::new(self.n).map_err(RunError::from)?;
        if self.sigma.is_some() && self.epsilon.is_some() {
            return bad("give either sigma or epsilon, not both".into());
        }
        if let Some(s) = self.sigma.or(self.epsilon) {
            if !s.is_finite() {
                return bad("perturbation strength must be finite".into());
            }
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if self.ensemble == 0 {
            return bad("ensemble must hold at least one state".into());
        }
        if self.sigmas.iter().any(|s| !s.is_finite()) {
            return bad("sigmas must be finite".into());
        }
        if self.sizes.iter().any(|&n| n < 2 || n % 2 == 1) {
            return bad("sizes must be even and at least 2".into());
        }
        if let Some([lo, hi]) = self.fit_window {
            if !(lo <= hi) {
                return bad(format!("fit_window [{lo}, {hi}] is empty"));
            }
        }
        if !(self.phase_tol > 0.0) || !(self.chord_tol > 0.0) {
            return bad("phase_tol and chord_tol must be positive".into());
        }
        if !(self.threshold >= 0.0) || !(self.sigma_fraction > 0.0) || !(self.horizon > 0.0) {
            return bad("threshold, sigma_fraction and horizon must be positive".into());
        }
        for p in &self.predictors {
            if !["lambda", "lambda1", "fgr", "pt"].contains(&p.as_str()) {
                return bad(format!("unknown predictor '{p}'"));
            }
        }
        Ok(())
    }

    pub fn map_spec(&self) -> RunResult<MapSpec> {
        let kind: MapKind = self.map.parse().map_err(RunError::from)?;
        MapSpec::new(kind, self.k).map_err(RunError::from)
    }

    pub fn family(&self) -> RunResult<PerturbationFamily> {
        self.perturbation.parse().map_err(RunError::from)
    }

    pub fn dims(&self) -> RunResult<QuantumDims> {
        Ok(QuantumDims::new(self.n)?)
    }

    pub fn dims_for(&self, n: usize) -> RunResult<QuantumDims> {
        Ok(QuantumDims::new(n)?)
    }

    /// Perturbation at the configured strength and `hbar = 2 pi / N`.
    pub fn perturbation_spec(&self, hbar: f64) -> RunResult<PerturbationSpec> {
        let family = self.family()?;
        let spec = match (self.sigma, self.epsilon) {
            (Some(s), None) => PerturbationSpec::from_sigma(family, s, hbar)?,
            (None, Some(e)) => PerturbationSpec::from_epsilon(family, e, hbar)?,
            (None, None) => {
                return Err(RunError::Config("this command needs sigma or epsilon".into()));
            }
            (Some(_), Some(_)) => {
                return Err(RunError::Config("give either sigma or epsilon, not both".into()));
            }
        };
        Ok(spec)
    }

    /// `sigmas` with duplicates removed and in ascending order; falls back
    /// to the single configured `sigma`.
    pub fn sigma_list(&self) -> RunResult<Vec<f64>> {
        let mut list = if self.sigmas.is_empty() {
            vec![self.sigma.ok_or_else(|| RunError::Config("need sigmas or sigma".into()))?]
        } else {
            self.sigmas.clone()
        };
        list.sort_by(f64::total_cmp);
        list.dedup();
        Ok(list)
    }

    /// `xi = sqrt(hbar / kappa)`
    pub fn xi(&self, hbar: f64) -> f64 {
        (hbar / self.kappa).sqrt()
    }

    /// Canonical JSON rendering.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }

    /// SHA-256 of the canonical JSON rendering, as hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let mut c = RunConfig::default();
        c.sigma = Some(0.5);
        c.validate().unwrap();
        assert_eq!(c.xi(0.01), 0.1);
    }

    #[test]
    fn sections_and_overrides() {
        let text = "map = \"standard\"\n[quantum]\nN = 512\nsigma = 2.0\n[sweep]\nsigmas = [1.0, 0.5, 1.0]\n";
        let c = RunConfig::load_text(text, &["K=7".into(), "state=gaussian".into(), "N=1024".into()]);
        assert_eq!(c.map, "standard");
        assert_eq!(c.k, 7.0);
        assert_eq!(c.n, 1024);
        assert_eq!(c.state, StateKind::Gaussian);
        assert_eq!(c.sigma_list().unwrap(), vec![0.5, 1.0]);
    }

    impl RunConfig {
        fn load_text(text: &str, overrides: &[String]) -> Self {
            Self::from_parts(Some(text), overrides).unwrap()
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_toml("N = 511").unwrap().validate().is_err());
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("sigma = 1.0\nepsilon = 0.1").unwrap().validate().is_err());
        assert!(RunConfig::from_toml("map = \"baker\"").unwrap().validate().is_err());
        assert!(RunConfig::from_toml("[a]\nN = 4\n[b]\nN = 8").is_err());
        let err = RunConfig::from_toml("N = 511").unwrap().validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
