//! Decay rate of the mean fidelity across a strength sweep.

use fidelity_core::action::PerturbationSpec;
use fidelity_core::export::{Cell, Table};
use fidelity_core::quantum::EnsembleCurve;
use fidelity_core::stats::{correlation, decay_rate_fit, ols, RateFit};

use super::fidelity::{fit_table, window_policy};
use super::{action_diffusion, run_ensemble, summary_table, times, Emit, InitialStates};
use crate::config::RunConfig;
use crate::error::RunResult;
use crate::output::Sink;

#[derive(Debug, Clone)]
pub struct ScanPoint {
    pub sigma: f64,
    pub curve: EnsembleCurve,
    /// Absent when the fit window holds fewer than two points.
    pub fit: Option<RateFit>,
}

#[derive(Debug, Clone)]
pub struct FgrScanReport {
    pub k_e: f64,
    pub points: Vec<ScanPoint>,
}

impl FgrScanReport {
    /// `(sigma, gamma)` for every successful fit.
    pub fn gammas(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| p.fit.as_ref().map(|f| (p.sigma, f.gamma)))
            .collect()
    }

    /// Pearson correlation of `gamma` against `sigma`.
    pub fn linear_correlation(&self) -> f64 {
        correlation(&self.gammas())
    }

    /// `a` in the least-squares fit `gamma = a sigma^2`.
    pub fn quadratic_coefficient(&self) -> f64 {
        let g = self.gammas();
        let num: f64 = g.iter().map(|(s, y)| y * s * s).sum();
        let den: f64 = g.iter().map(|(s, _)| s.powi(4)).sum();
        num / den
    }
}

pub fn run(cfg: &RunConfig) -> RunResult<FgrScanReport> {
    cfg.validate()?;
    let map = cfg.map_spec()?;
    let dims = cfg.dims()?;
    let family = cfg.family()?;
    let states = InitialStates::from_config(cfg, &dims)?;
    let k_e = action_diffusion(cfg, &map)?;
    let policy = window_policy(cfg, dims.n);
    let ts = times(cfg.t_max + 1);
    let mut points = Vec::new();
    for sigma in cfg.sigma_list()? {
        let pert = PerturbationSpec::from_sigma(family, sigma, dims.hbar)?;
        let curve = EnsembleCurve::from_members(&run_ensemble(&dims, &map, &pert, &states, cfg.t_max)?)?;
        let fit = decay_rate_fit(&ts, &curve.mean, policy).ok();
        points.push(ScanPoint { sigma, curve, fit });
    }
    Ok(FgrScanReport { k_e, points })
}

impl Emit for FgrScanReport {
    fn emit(&self, sink: &mut Sink) -> RunResult<()> {
        let fitted: Vec<(f64, &RateFit)> = self
            .points
            .iter()
            .filter_map(|p| p.fit.as_ref().map(|f| (p.sigma, f)))
            .collect();
        let mut gamma = fit_table(&fitted, "sigma");
        gamma.columns.extend(["fgr_gamma".to_string(), "gamma_over_fgr".to_string()]);
        for row in gamma.rows.iter_mut() {
            let (Cell::Float(sigma), Cell::Float(g)) = (&row[0], &row[1]) else {
                unreachable!("sigma and gamma are floats")
            };
            let fgr = 2.0 * sigma * sigma * self.k_e;
            let ratio = g / fgr;
            row.extend([Cell::from(fgr), Cell::from(ratio)]);
        }
        sink.table("gamma", "decay rate versus strength", &gamma)?;

        let mut curves = Table::new(&["sigma", "t", "M_mean", "M_mean_err", "geo_mean"]);
        for p in &self.points {
            let geo = p.curve.geometric_mean();
            for t in 0..p.curve.t.len() {
                curves.push(vec![
                    p.sigma.into(),
                    t.into(),
                    p.curve.mean[t].into(),
                    p.curve.mean_std_err[t].into(),
                    geo[t].into(),
                ]);
            }
        }
        sink.table("curves", "mean fidelity per strength", &curves)?;

        let g = self.gammas();
        let (slope, intercept) = if g.len() >= 2 {
            let (s, i, _) = ols(&g);
            (s, i)
        } else {
            (f64::NAN, f64::NAN)
        };
        let summary = summary_table(&[
            ("K_E", self.k_e),
            ("linear_slope", slope),
            ("linear_intercept", intercept),
            ("linear_correlation", if g.len() >= 2 { self.linear_correlation() } else { f64::NAN }),
            ("quadratic_coefficient", self.quadratic_coefficient()),
            ("fgr_quadratic_coefficient", 2.0 * self.k_e),
        ]);
        sink.table("summary", "fits of gamma against sigma", &summary)
    }
}
