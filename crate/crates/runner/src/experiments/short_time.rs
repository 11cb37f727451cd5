//! First-kick fidelity: packet-resolved short-time formula, or the
//! point-source strength scan with its piecewise-linear estimate.

use rayon::prelude::*;

use fidelity_core::action::{slope_kp, PerturbationSpec};
use fidelity_core::export::Table;
use fidelity_core::quantum::{fidelity_series, prepare_gaussian, EnsembleCurve, GaussianPacketSpec};
use fidelity_core::rng::member_rng;
use fidelity_core::semiclassical::{appendix_sigma_scaling, fgr_m, sc_window, short_time_m};
use fidelity_core::stats::ols;

use super::{action_diffusion, point_sources, run_ensemble, shape, summary_table, Emit, InitialStates};
use crate::config::{RunConfig, StateKind};
use crate::error::{RunError, RunResult};
use crate::output::Sink;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRow {
    pub packet: usize,
    pub r0: f64,
    pub p0: f64,
    /// `d(dS/eps)/dp0` at the centre after one kick.
    pub kp: f64,
    pub d: f64,
    pub w_p: f64,
    pub sigma: f64,
    pub m_exact: f64,
    pub m_pred: f64,
}

impl PacketRow {
    /// `|ln M_pred - ln M_exact| / |ln M_exact|`
    pub fn rel_ln_err(&self) -> f64 {
        (self.m_pred.ln() - self.m_exact.ln()).abs() / self.m_exact.ln().abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRow {
    pub sigma: f64,
    pub m_mean: f64,
    pub m_err: f64,
    pub m_fgr: f64,
    /// NaN at `sigma = 0`.
    pub m_appendix: f64,
    pub n_x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShortTimeReport {
    Packets(Vec<PacketRow>),
    Points { k_e: f64, slope_min_sigma: f64, rows: Vec<PointRow> },
}

impl ShortTimeReport {
    /// Log-log slopes of the exact and piecewise-linear `M(1)` over
    /// `sigma >= slope_min_sigma`.
    pub fn large_sigma_slopes(&self) -> Option<(f64, f64)> {
        let ShortTimeReport::Points { slope_min_sigma, rows, .. } = self else {
            return None;
        };
        let big: Vec<&PointRow> = rows.iter().filter(|r| r.sigma >= *slope_min_sigma).collect();
        if big.len() < 2 {
            return None;
        }
        let exact: Vec<(f64, f64)> = big.iter().map(|r| (r.sigma.ln(), r.m_mean.ln())).collect();
        let appendix: Vec<(f64, f64)> = big.iter().map(|r| (r.sigma.ln(), r.m_appendix.ln())).collect();
        Some((ols(&exact).0, ols(&appendix).0))
    }
}

/// Packets whose centre has `|k_p| >= min_kp` at the first kick, drawn in
/// order from the member streams of `seed`.
fn filtered_packets(cfg: &RunConfig, pert: &PerturbationSpec, xi: f64) -> RunResult<Vec<GaussianPacketSpec>> {
    let map = cfg.map_spec()?;
    let region = cfg.region.region();
    let mut out = Vec::with_capacity(cfg.ensemble);
    let limit = 1000 * cfg.ensemble as u64;
    let mut index = 0u64;
    while out.len() < cfg.ensemble {
        if index >= limit {
            return Err(RunError::Config(format!(
                "fewer than {} of {limit} candidate packets satisfy |k_p| >= {}",
                cfg.ensemble, cfg.min_kp
            )));
        }
        let c = region.sample(&mut member_rng(cfg.seed, index));
        index += 1;
        if cfg.min_kp > 0.0 {
            match slope_kp(&map, pert, c.p, c.r, 1) {
                Ok(kp) if kp.abs() >= cfg.min_kp => {}
                _ => continue,
            }
        }
        out.push(GaussianPacketSpec::new(c.r, c.p, xi)?);
    }
    Ok(out)
}

fn run_packets(cfg: &RunConfig) -> RunResult<ShortTimeReport> {
    let map = cfg.map_spec()?;
    let dims = cfg.dims()?;
    let family = cfg.family()?;
    let unit = shape(family)?;
    let packets = filtered_packets(cfg, &unit, cfg.xi(dims.hbar))?;
    let sigmas = cfg.sigma_list()?;
    let rows: Vec<Vec<PacketRow>> = packets
        .par_iter()
        .enumerate()
        .map(|(i, packet)| -> RunResult<Vec<PacketRow>> {
            let psi = prepare_gaussian(&dims, packet)?;
            let kp = slope_kp(&map, &unit, packet.p0, packet.r0, 1)?;
            let window = sc_window(&map, packet, dims.hbar, 1)?;
            sigmas
                .iter()
                .map(|&sigma| {
                    let pert = PerturbationSpec::from_sigma(family, sigma, dims.hbar)?;
                    let m_exact = fidelity_series(&dims, &map, &pert, &psi, 1)?.fidelity[1];
                    Ok(PacketRow {
                        packet: i,
                        r0: packet.r0,
                        p0: packet.p0,
                        kp,
                        d: window.d,
                        w_p: window.w_p,
                        sigma,
                        m_exact,
                        m_pred: short_time_m(kp, window.w_p, sigma),
                    })
                })
                .collect()
        })
        .collect::<RunResult<_>>()?;
    Ok(ShortTimeReport::Packets(rows.concat()))
}

fn run_points(cfg: &RunConfig) -> RunResult<ShortTimeReport> {
    let map = cfg.map_spec()?;
    let dims = cfg.dims()?;
    let family = cfg.family()?;
    let k_e = action_diffusion(cfg, &map)?;
    let js = point_sources(dims.n, cfg.ensemble, cfg.seed);
    let r0s: Vec<f64> = js.iter().map(|&j| dims.position(j)).collect();
    let states = InitialStates::Point(js);
    let mut rows = Vec::new();
    for sigma in cfg.sigma_list()? {
        let pert = PerturbationSpec::from_sigma(family, sigma, dims.hbar)?;
        let curve = EnsembleCurve::from_members(&run_ensemble(&dims, &map, &pert, &states, 1)?)?;
        let (m_appendix, n_x) = if sigma == 0.0 {
            (f64::NAN, f64::NAN)
        } else {
            let a = appendix_sigma_scaling(&map, &pert, &r0s, 1, cfg.chord_tol)?;
            (a.m_bar, a.n_x)
        };
        rows.push(PointRow {
            sigma,
            m_mean: curve.mean[1],
            m_err: curve.mean_std_err[1],
            m_fgr: fgr_m(k_e, sigma, 1.0),
            m_appendix,
            n_x,
        });
    }
    Ok(ShortTimeReport::Points {
        k_e,
        slope_min_sigma: cfg.slope_min_sigma,
        rows,
    })
}

pub fn run(cfg: &RunConfig) -> RunResult<ShortTimeReport> {
    cfg.validate()?;
    match cfg.state {
        StateKind::Gaussian => run_packets(cfg),
        StateKind::Point => run_points(cfg),
    }
}

impl Emit for ShortTimeReport {
    fn emit(&self, sink: &mut Sink) -> RunResult<()> {
        match self {
            ShortTimeReport::Packets(rows) => {
                let mut t = Table::new(&[
                    "packet", "r0", "p0", "kp", "D", "w_p", "sigma", "M_exact", "M_pred", "rel_ln_err",
                ]);
                for r in rows {
                    t.push(vec![
                        r.packet.into(),
                        r.r0.into(),
                        r.p0.into(),
                        r.kp.into(),
                        r.d.into(),
                        r.w_p.into(),
                        r.sigma.into(),
                        r.m_exact.into(),
                        r.m_pred.into(),
                        r.rel_ln_err().into(),
                    ]);
                }
                sink.table("short_time", "first-kick fidelity against the short-time formula", &t)
            }
            ShortTimeReport::Points { k_e, rows, .. } => {
                let mut t = Table::new(&["sigma", "M1_mean", "M1_mean_err", "M1_fgr", "M1_appendix", "n_x"]);
                for r in rows {
                    t.push(vec![
                        r.sigma.into(),
                        r.m_mean.into(),
                        r.m_err.into(),
                        r.m_fgr.into(),
                        r.m_appendix.into(),
                        r.n_x.into(),
                    ]);
                }
                sink.table("first_kick", "point-source fidelity after one kick", &t)?;
                let (exact, appendix) = self.large_sigma_slopes().unwrap_or((f64::NAN, f64::NAN));
                let summary = summary_table(&[("K_E", *k_e), ("slope_exact", exact), ("slope_appendix", appendix)]);
                sink.table("summary", "large-sigma log-log slopes", &summary)
            }
        }
    }
}
