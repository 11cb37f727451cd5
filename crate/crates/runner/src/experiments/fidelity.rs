//! Ensemble-averaged fidelity with optional predictor curves.

use fidelity_core::export::{ensemble_table, Cell, Table};
use fidelity_core::quantum::EnsembleCurve;
use fidelity_core::semiclassical::{fgr_m, lambda1_decay_curve, lambda_decay_curve, perturbative_m};
use fidelity_core::stats::{decay_rate_fit, RateFit, WindowPolicy};

use super::{action_diffusion, run_ensemble, times, Emit, InitialStates};
use crate::config::RunConfig;
use crate::error::RunResult;
use crate::output::Sink;

#[derive(Debug, Clone)]
pub struct FidelityReport {
    pub ensemble: EnsembleCurve,
    /// Every member's `M(t)` when requested.
    pub members: Option<Vec<Vec<f64>>>,
    /// Named predictor curves on the same time grid.
    pub predictors: Vec<(String, Vec<f64>)>,
    pub k_e: Option<f64>,
    /// Decay rate of the mean; absent when the window holds too few points.
    pub fit: Option<RateFit>,
}

impl FidelityReport {
    pub fn predictor(&self, name: &str) -> Option<&[f64]> {
        self.predictors.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_slice())
    }
}

/// Rate-fit window from the config.
pub fn window_policy(cfg: &RunConfig, n: usize) -> WindowPolicy {
    match cfg.fit_window {
        Some([t_lo, t_hi]) => WindowPolicy::Range { t_lo, t_hi },
        None => WindowPolicy::auto_for(n, cfg.saturation_c),
    }
}

pub fn run(cfg: &RunConfig) -> RunResult<FidelityReport> {
    cfg.validate()?;
    let map = cfg.map_spec()?;
    let dims = cfg.dims()?;
    let pert = cfg.perturbation_spec(dims.hbar)?;
    let states = InitialStates::from_config(cfg, &dims)?;
    let curves = run_ensemble(&dims, &map, &pert, &states, cfg.t_max)?;
    let ensemble = EnsembleCurve::from_members(&curves)?;

    let needs_k_e = cfg.predictors.iter().any(|p| p == "fgr" || p == "pt");
    let k_e = if needs_k_e { Some(action_diffusion(cfg, &map)?) } else { None };
    let ts = times(cfg.t_max + 1);
    let mut predictors = Vec::new();
    for name in &cfg.predictors {
        let curve = match name.as_str() {
            "lambda" => lambda_decay_curve(&map, cfg.t_max, cfg.samples, cfg.seed),
            "lambda1" => lambda1_decay_curve(&map, cfg.t_max, cfg.samples, cfg.seed),
            "fgr" => ts.iter().map(|&t| fgr_m(k_e.unwrap_or_default(), pert.sigma, t)).collect(),
            "pt" => ts
                .iter()
                .map(|&t| perturbative_m(k_e.unwrap_or_default(), pert.sigma, t, dims.n))
                .collect(),
            _ => unreachable!("predictor names are validated"),
        };
        predictors.push((name.clone(), curve));
    }
    let fit = decay_rate_fit(&ts, &ensemble.mean, window_policy(cfg, dims.n)).ok();
    Ok(FidelityReport {
        ensemble,
        members: cfg.per_state.then_some(curves),
        predictors,
        k_e,
        fit,
    })
}

/// Columns `gamma, intercept, t_lo, t_hi, residual, points, method`.
pub fn fit_table(fits: &[(f64, &RateFit)], key: &str) -> Table {
    let mut t = Table::new(&[key, "gamma", "intercept", "t_lo", "t_hi", "residual", "points", "method"]);
    for (x, f) in fits {
        t.push(vec![
            Cell::from(*x),
            f.gamma.into(),
            f.intercept.into(),
            f.t_lo.into(),
            f.t_hi.into(),
            f.residual.into(),
            f.points.into(),
            f.method.clone().into(),
        ]);
    }
    t
}

impl Emit for FidelityReport {
    fn emit(&self, sink: &mut Sink) -> RunResult<()> {
        let mut table = ensemble_table(&self.ensemble);
        for (name, curve) in &self.predictors {
            table.columns.push(format!("M_{name}"));
            for (row, v) in table.rows.iter_mut().zip(curve) {
                row.push((*v).into());
            }
        }
        sink.table("fidelity", "ensemble fidelity", &table)?;
        if let Some(members) = &self.members {
            let mut t = Table::new(&["member", "t", "M"]);
            for (i, curve) in members.iter().enumerate() {
                for (k, m) in curve.iter().enumerate() {
                    t.push(vec![i.into(), k.into(), (*m).into()]);
                }
            }
            sink.table("members", "per-state fidelity", &t)?;
        }
        if let Some(fit) = &self.fit {
            let mut t = fit_table(&[(self.ensemble.members as f64, fit)], "members");
            if let Some(k) = self.k_e {
                t.columns.push("K_E".into());
                t.rows[0].push(k.into());
            }
            sink.table("fit", "decay rate of the mean", &t)?;
        }
        Ok(())
    }
}
