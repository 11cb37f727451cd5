//! Regime-diagram data: perturbative border, breakdown times, `tau` scales.

use rayon::prelude::*;

use fidelity_core::action::PerturbationSpec;
use fidelity_core::classical::{lyapunov_closed_form, stretch_curve, MapKind};
use fidelity_core::export::Table;
use fidelity_core::quantum::{EnsembleCurve, GaussianPacketSpec};
use fidelity_core::rng::sample_points;
use fidelity_core::semiclassical::{
    fgr_m, linear_width_within, perturbative_border, sc_window, tau1_estimate, tau2_estimate, window_width,
};
use fidelity_core::stats::{breakdown_time, ols};

use super::{action_diffusion, point_sources, quadratic_curvature, run_ensemble, summary_table, Emit, InitialStates};
use crate::config::RunConfig;
use crate::error::RunResult;
use crate::output::Sink;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreakdownRow {
    pub n: usize,
    pub sigma_p: f64,
    pub sigma: f64,
    /// First time the mean departs from the golden-rule curve by more than
    /// the threshold; `None` when it never does within the horizon.
    pub t_b: Option<usize>,
    /// Second derivative of `ln M` over `[N, 2N]`.
    pub curvature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauRow {
    pub sigma: f64,
    /// Mean first-kick linear width.
    pub dp0_1: f64,
    pub d: f64,
    pub w_p: f64,
    pub tau1: f64,
    pub tau1_at_most_one: bool,
    /// NaN when `c0 w_p >= pi`.
    pub tau2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimesReport {
    pub k_e: f64,
    pub lambda: f64,
    pub border: Vec<(usize, f64)>,
    pub breakdown: Vec<BreakdownRow>,
    pub tau: Vec<TauRow>,
}

impl RegimesReport {
    /// Log-log slope of `t_B` against `N`.
    pub fn breakdown_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .breakdown
            .iter()
            .filter_map(|r| r.t_b.filter(|&t| t > 0).map(|t| ((r.n as f64).ln(), (t as f64).ln())))
            .collect();
        if pts.len() < 2 {
            return f64::NAN;
        }
        ols(&pts).0
    }

    /// Mean of `t_B / N`.
    pub fn breakdown_prefactor(&self) -> f64 {
        let ratios: Vec<f64> = self
            .breakdown
            .iter()
            .filter_map(|r| r.t_b.map(|t| t as f64 / r.n as f64))
            .collect();
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }
}

fn border_grid(sizes: &[usize]) -> Vec<usize> {
    let mut ns: Vec<usize> = (6..=17).map(|k| 1usize << k).chain(sizes.iter().copied()).collect();
    ns.sort_unstable();
    ns.dedup();
    ns
}

pub fn run(cfg: &RunConfig) -> RunResult<RegimesReport> {
    cfg.validate()?;
    let map = cfg.map_spec()?;
    let family = cfg.family()?;
    let k_e = action_diffusion(cfg, &map)?;
    let sizes = if cfg.sizes.is_empty() { vec![cfg.n] } else { cfg.sizes.clone() };

    let border = border_grid(&sizes)
        .into_iter()
        .map(|n| Ok((n, perturbative_border(k_e, n)?)))
        .collect::<RunResult<Vec<_>>>()?;

    let mut breakdown = Vec::new();
    for &n in &sizes {
        let dims = cfg.dims_for(n)?;
        let sigma_p = perturbative_border(k_e, n)?;
        let sigma = cfg.sigma_fraction * sigma_p;
        let pert = PerturbationSpec::from_sigma(family, sigma, dims.hbar)?;
        let horizon = (cfg.horizon * n as f64).ceil() as usize;
        let states = InitialStates::Point(point_sources(n, cfg.ensemble, cfg.seed));
        let curve = EnsembleCurve::from_members(&run_ensemble(&dims, &map, &pert, &states, horizon)?)?;
        let pred: Vec<f64> = (0..=horizon).map(|t| fgr_m(k_e, sigma, t as f64)).collect();
        let t_b = breakdown_time(&curve.mean, &pred, cfg.threshold)?;
        let late: Vec<(f64, f64)> = (n..=(2 * n).min(horizon))
            .filter(|&t| curve.mean[t] > 0.0)
            .map(|t| (t as f64, curve.mean[t].ln()))
            .collect();
        let curvature = if late.len() >= 3 { quadratic_curvature(&late) } else { f64::NAN };
        breakdown.push(BreakdownRow {
            n,
            sigma_p,
            sigma,
            t_b,
            curvature,
        });
    }

    let lambda = match map.kind {
        MapKind::Sawtooth => lyapunov_closed_form(map.k)?,
        MapKind::Standard => stretch_curve(&map, 20, cfg.samples, cfg.seed)
            .last()
            .map_or(f64::NAN, |s| s.lambda_t),
    };
    let mut tau = Vec::new();
    if cfg.sigma.is_some() || !cfg.sigmas.is_empty() {
        let dims = cfg.dims()?;
        let xi = cfg.xi(dims.hbar);
        let centres = sample_points(cfg.region.region(), cfg.ensemble, cfg.seed);
        let d = match cfg.d_factor {
            Some(d) => d,
            None => {
                let ds = centres
                    .par_iter()
                    .map(|c| Ok(sc_window(&map, &GaussianPacketSpec::new(c.r, c.p, xi)?, dims.hbar, 1)?.d))
                    .collect::<RunResult<Vec<f64>>>()?;
                ds.iter().sum::<f64>() / ds.len() as f64
            }
        };
        let w_p = window_width(dims.hbar, xi, d);
        for sigma in cfg.sigma_list()? {
            let pert = PerturbationSpec::from_sigma(family, sigma, dims.hbar)?;
            let tol = cfg.phase_tol / sigma.abs();
            let widths: Vec<f64> = centres
                .par_iter()
                .map(|c| linear_width_within(&map, &pert, c.r, c.p, 1, tol))
                .collect();
            let dp0_1 = widths.iter().sum::<f64>() / widths.len() as f64;
            let t1 = tau1_estimate(lambda, dp0_1, cfg.a1, cfg.b_bar, w_p)?;
            tau.push(TauRow {
                sigma,
                dp0_1,
                d,
                w_p,
                tau1: t1.value,
                tau1_at_most_one: t1.at_most_one,
                tau2: tau2_estimate(lambda, cfg.c0, w_p).unwrap_or(f64::NAN),
            });
        }
    }
    Ok(RegimesReport {
        k_e,
        lambda,
        border,
        breakdown,
        tau,
    })
}

impl Emit for RegimesReport {
    fn emit(&self, sink: &mut Sink) -> RunResult<()> {
        let mut t = Table::new(&["N", "sigma_p", "t_H"]);
        for &(n, s) in &self.border {
            t.push(vec![n.into(), s.into(), n.into()]);
        }
        sink.table("border", "perturbative border and Heisenberg time", &t)?;

        let mut t = Table::new(&["N", "sigma_p", "sigma", "t_B", "t_B_over_N", "curvature_lnM"]);
        for r in &self.breakdown {
            let t_b = r.t_b.map_or(f64::NAN, |t| t as f64);
            t.push(vec![
                r.n.into(),
                r.sigma_p.into(),
                r.sigma.into(),
                t_b.into(),
                (t_b / r.n as f64).into(),
                r.curvature.into(),
            ]);
        }
        sink.table("breakdown", "golden-rule breakdown time per dimension", &t)?;

        if !self.tau.is_empty() {
            let mut t = Table::new(&["sigma", "dp0_1", "D", "w_p", "tau1", "tau1_at_most_one", "tau2"]);
            for r in &self.tau {
                t.push(vec![
                    r.sigma.into(),
                    r.dp0_1.into(),
                    r.d.into(),
                    r.w_p.into(),
                    r.tau1.into(),
                    (r.tau1_at_most_one as usize).into(),
                    r.tau2.into(),
                ]);
            }
            sink.table("tau", "early time scales of packet fidelity", &t)?;
        }

        let summary = summary_table(&[
            ("K_E", self.k_e),
            ("lambda", self.lambda),
            ("t_B_slope", self.breakdown_slope()),
            ("t_B_prefactor", self.breakdown_prefactor()),
        ]);
        sink.table("summary", "breakdown scaling", &summary)
    }
}
