//! Action-difference curves, variance growth and distribution.

use fidelity_core::action::{action_curve, action_samples, ActionCurve};
use fidelity_core::export::Table;
use fidelity_core::stats::{histogram, ols, Histogram, RangePolicy};
use fidelity_core::TWO_PI;

use super::{action_diffusion, action_moments, shape, summary_table, Emit};
use crate::config::RunConfig;
use crate::error::RunResult;
use crate::output::Sink;

#[derive(Debug, Clone, PartialEq)]
pub struct ActionStatsReport {
    /// `dS/eps` against `p0` at fixed `r0`, one curve per requested time.
    pub curves: Vec<ActionCurve>,
    /// `(t, mean, variance)` of `dS/eps` for `t = 1..=T`.
    pub moments: Vec<(usize, f64, f64)>,
    pub k_e: f64,
    /// Time of the histogram.
    pub hist_t: usize,
    pub hist: Histogram,
}

impl ActionStatsReport {
    /// Slope and intercept of the variance against `t`.
    pub fn variance_fit(&self) -> (f64, f64) {
        let pts: Vec<(f64, f64)> = self.moments.iter().map(|&(t, _, v)| (t as f64, v)).collect();
        let (slope, intercept, _) = ols(&pts);
        (slope, intercept)
    }
}

pub fn run(cfg: &RunConfig) -> RunResult<ActionStatsReport> {
    cfg.validate()?;
    let map = cfg.map_spec()?;
    let pert = shape(cfg.family()?)?;
    let times = if cfg.times.is_empty() { vec![1, 2, 3] } else { cfg.times.clone() };
    let curves = times
        .iter()
        .map(|&t| action_curve(&map, &pert, cfg.r0, t, (0.0, TWO_PI), cfg.curve_points))
        .collect::<fidelity_core::Result<Vec<_>>>()?;
    let (mean, var) = action_moments(&map, &pert, cfg.t_max, cfg.samples, cfg.seed, cfg.region.region());
    let moments = (0..cfg.t_max).map(|k| (k + 1, mean[k], var[k])).collect();
    let hist_t = *times.iter().max().expect("times is non-empty");
    let samples = action_samples(&map, &pert, hist_t, cfg.samples, cfg.seed);
    let hist = histogram(&samples, cfg.bins, RangePolicy::default())?;
    Ok(ActionStatsReport {
        curves,
        moments,
        k_e: action_diffusion(cfg, &map)?,
        hist_t,
        hist,
    })
}

/// Columns `center, count, density`.
pub fn histogram_table(h: &Histogram) -> Table {
    let mut t = Table::new(&["center", "count", "density"]);
    for ((c, n), d) in h.centers.iter().zip(&h.counts).zip(h.absolute_density()) {
        t.push(vec![(*c).into(), (*n as usize).into(), d.into()]);
    }
    t
}

impl Emit for ActionStatsReport {
    fn emit(&self, sink: &mut Sink) -> RunResult<()> {
        let mut t = Table::new(&["t", "r0", "p0", "dS_over_eps"]);
        for c in &self.curves {
            for (p, s) in c.p0.iter().zip(&c.ds_over_eps) {
                t.push(vec![c.t.into(), c.r0.into(), (*p).into(), (*s).into()]);
            }
        }
        sink.table("action_curves", "dS/eps against initial momentum", &t)?;

        let mut t = Table::new(&["t", "mean", "variance"]);
        for &(k, m, v) in &self.moments {
            t.push(vec![k.into(), m.into(), v.into()]);
        }
        sink.table("variance", "moments of dS/eps against time", &t)?;

        let mut h = histogram_table(&self.hist);
        h.columns.insert(0, "t".into());
        for row in h.rows.iter_mut() {
            row.insert(0, self.hist_t.into());
        }
        sink.table("histogram", "distribution of dS/eps", &h)?;

        let (slope, intercept) = self.variance_fit();
        let summary = summary_table(&[
            ("variance_slope", slope),
            ("variance_intercept", intercept),
            ("two_K_E", 2.0 * self.k_e),
            ("slope_over_two_K_E", slope / (2.0 * self.k_e)),
        ]);
        sink.table("summary", "variance growth against 2 K(E)", &summary)
    }
}
