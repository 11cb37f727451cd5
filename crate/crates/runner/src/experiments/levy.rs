//! Stable-law and Gaussian fits to the distribution of `dS/eps`.

use fidelity_core::action::action_samples;
use fidelity_core::export::{Cell, Table};
use fidelity_core::stats::{
    gaussian_fit, histogram, levy_density_grid, levy_fit, levy_ma_prediction, GaussianFit, Histogram, LevyFit,
    RangePolicy,
};

use super::action_stats::histogram_table;
use super::{shape, Emit};
use crate::config::RunConfig;
use crate::error::RunResult;
use crate::output::Sink;

#[derive(Debug, Clone, PartialEq)]
pub struct LevyReport {
    pub t: usize,
    /// Histogram of `dS/eps - t <V>`.
    pub hist: Histogram,
    /// Fit with the configured index, or free when none is configured.
    pub levy: LevyFit,
    /// Free-index fit, when requested in addition to a fixed one.
    pub levy_free: Option<LevyFit>,
    pub gaussian: GaussianFit,
    pub sigmas: Vec<f64>,
}

impl LevyReport {
    /// `(sigma, M from the stable fit, M from the Gaussian fit)`
    pub fn ma_predictions(&self) -> Vec<(f64, f64, f64)> {
        self.sigmas
            .iter()
            .map(|&s| {
                (
                    s,
                    levy_ma_prediction(&self.levy.params, s),
                    (-s * s * self.gaussian.variance).exp(),
                )
            })
            .collect()
    }
}

pub fn run(cfg: &RunConfig) -> RunResult<LevyReport> {
    cfg.validate()?;
    let map = cfg.map_spec()?;
    let pert = shape(cfg.family()?)?;
    let t = cfg.t_max;
    let shift = t as f64 * pert.mean_value();
    let samples: Vec<f64> = action_samples(&map, &pert, t, cfg.samples, cfg.seed)
        .into_iter()
        .map(|x| x - shift)
        .collect();
    let hist = histogram(&samples, cfg.bins, RangePolicy::default())?;
    let levy = levy_fit(&hist, cfg.fix_alpha)?;
    let levy_free = if cfg.fit_free_alpha && cfg.fix_alpha.is_some() {
        Some(levy_fit(&hist, None)?)
    } else {
        None
    };
    let gaussian = gaussian_fit(&hist)?;
    Ok(LevyReport {
        t,
        hist,
        levy,
        levy_free,
        gaussian,
        sigmas: cfg.sigmas.clone(),
    })
}

fn gaussian_density(x: f64, g: &GaussianFit) -> f64 {
    (-(x - g.mean).powi(2) / (2.0 * g.variance)).exp() / (std::f64::consts::TAU * g.variance).sqrt()
}

impl Emit for LevyReport {
    fn emit(&self, sink: &mut Sink) -> RunResult<()> {
        let mut h = histogram_table(&self.hist);
        let mut models = vec![("levy", levy_density_grid(&self.hist.centers, &self.levy.params)?)];
        if let Some(f) = &self.levy_free {
            models.push(("levy_free", levy_density_grid(&self.hist.centers, &f.params)?));
        }
        let gauss: Vec<f64> = self.hist.centers.iter().map(|&x| gaussian_density(x, &self.gaussian)).collect();
        models.push(("gaussian", gauss));
        for (name, values) in &models {
            h.columns.push(format!("density_{name}"));
            for (row, v) in h.rows.iter_mut().zip(values) {
                row.push((*v).into());
            }
        }
        sink.table("histogram", "centred dS/eps distribution with fitted densities", &h)?;

        let mut f = Table::new(&[
            "model", "alpha", "beta", "g", "D_l", "variance", "residual", "bins_used", "window_lo", "window_hi",
        ]);
        let mut levy_row = |name: &str, fit: &LevyFit| {
            f.push(vec![
                Cell::from(name),
                fit.params.alpha.into(),
                fit.params.beta.into(),
                fit.params.g.into(),
                fit.params.d_l.into(),
                f64::NAN.into(),
                fit.residual.into(),
                fit.bins_used.into(),
                fit.window.0.into(),
                fit.window.1.into(),
            ]);
        };
        levy_row("levy", &self.levy);
        if let Some(free) = &self.levy_free {
            levy_row("levy_free", free);
        }
        let g = &self.gaussian;
        f.push(vec![
            Cell::from("gaussian"),
            2.0.into(),
            0.0.into(),
            g.mean.into(),
            f64::NAN.into(),
            g.variance.into(),
            g.residual.into(),
            g.bins_used.into(),
            g.window.0.into(),
            g.window.1.into(),
        ]);
        sink.table("fits", "density fits on the central mass window", &f)?;

        if !self.sigmas.is_empty() {
            let mut m = Table::new(&["sigma", "M_levy", "M_gaussian"]);
            for (s, l, gm) in self.ma_predictions() {
                m.push(vec![s.into(), l.into(), gm.into()]);
            }
            sink.table("ma", "fidelity predicted by the fitted distributions", &m)?;
        }
        Ok(())
    }
}
