//! Histograms, stable-law densities and fits, decay-rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::nelder_mead;
use crate::quadrature::{gauss_legendre, integrate_panels};
use gauss_quad::legendre::GaussLegendre;
use std::f64::consts::PI;

/// Stable-law parameters for the characteristic function
/// `exp{-i g z - D |z|^alpha [1 + i beta sgn(z) omega(z, alpha)]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevyParams {
    pub alpha: f64,
    pub beta: f64,
    pub g: f64,
    pub d_l: f64,
}

/// Smallest index accepted by [`levy_density`].
pub const MIN_ALPHA: f64 = 0.3;

impl LevyParams {
    pub fn new(alpha: f64, beta: f64, g: f64, d_l: f64) -> Result<Self> {
        if !(MIN_ALPHA..=2.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [{MIN_ALPHA}, 2], got {alpha}"
            )));
        }
        if !(-1.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta must lie in [-1, 1], got {beta}")));
        }
        if !(d_l.is_finite() && d_l > 0.0) || !g.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "need finite g and D_l > 0, got g = {g}, D_l = {d_l}"
            )));
        }
        Ok(LevyParams { alpha, beta, g, d_l })
    }
}

const PANEL_RULE: usize = 16;
const TAIL_TOL: f64 = 1e-13;
const TRUNCATION_LIMIT: f64 = 1e-8;

/// Stable density at `x`, by Gauss-Legendre panels on the half-line
/// `(1/pi) int_0^Z exp(-D z^a) cos(z (x - g) - beta D z^a omega(z)) dz`.
pub fn levy_density(x: f64, params: &LevyParams) -> Result<f64> {
    let rule = gauss_legendre(PANEL_RULE);
    levy_density_with(x, params, &rule)
}

fn cutoff(params: &LevyParams) -> Result<f64> {
    let (a, d) = (params.alpha, params.d_l);
    let mut z = (30.0 / d).powf(1.0 / a);
    for _ in 0..60 {
        // int_Z^inf exp(-D z^a) dz <= exp(-D Z^a) / (a D Z^(a - 1))
        let tail = (-d * z.powf(a)).exp() / (a * d * z.powf(a - 1.0)) / PI;
        if tail < TAIL_TOL {
            return Ok(z);
        }
        z *= 1.5;
    }
    let tail = (-d * z.powf(a)).exp() / (a * d * z.powf(a - 1.0)) / PI;
    if tail > TRUNCATION_LIMIT {
        return Err(Error::QuadratureUnconverged(tail));
    }
    Ok(z)
}

fn levy_density_with(x: f64, params: &LevyParams, rule: &GaussLegendre) -> Result<f64> {
    let LevyParams { alpha, beta, g, d_l } = *params;
    let z_max = cutoff(params)?;
    let u = x - g;
    let width = (z_max / 32.0).min(4.0 / u.abs().max(1e-300));
    let mut edges = vec![0.0];
    // geometric refinement towards z = 0 for the |z|^alpha and ln z cusps
    let first = width.min(z_max);
    for k in (1..=24).rev() {
        edges.push(first * 0.5f64.powi(k));
    }
    let mut e = first;
    while e < z_max {
        edges.push(e);
        e += width;
    }
    edges.push(z_max);
    let omega_const = (PI * alpha / 2.0).tan();
    let integrand = |z: f64| {
        if z <= 0.0 {
            return 1.0;
        }
        let za = d_l * z.powf(alpha);
        let omega = if alpha == 1.0 { 2.0 / PI * z.ln() } else { omega_const };
        (-za).exp() * (z * u - beta * za * omega).cos()
    };
    let v = integrate_panels(&edges, rule, integrand) / PI;
    Ok(v.max(0.0))
}

/// Density on a grid of points.
pub fn levy_density_grid(xs: &[f64], params: &LevyParams) -> Result<Vec<f64>> {
    let rule = gauss_legendre(PANEL_RULE);
    xs.iter().map(|&x| levy_density_with(x, params, &rule)).collect()
}

/// `exp(-2 D_l sigma^alpha)`
pub fn levy_ma_prediction(params: &LevyParams, sigma: f64) -> f64 {
    (-2.0 * params.d_l * sigma.abs().powf(params.alpha)).exp()
}

/// How the histogram range is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RangePolicy {
    /// Central fraction of the samples.
    Central(f64),
    Fixed(f64, f64),
}

impl Default for RangePolicy {
    fn default() -> Self {
        RangePolicy::Central(0.999)
    }
}

/// Unit-mass density estimate over the chosen range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub centers: Vec<f64>,
    pub counts: Vec<u64>,
    /// Normalised so that `sum(density) * bin_width = 1` over the range.
    pub density: Vec<f64>,
    pub bin_width: f64,
    pub total: usize,
    pub below: usize,
    pub above: usize,
}

impl Histogram {
    /// Fraction of all samples falling inside the range.
    pub fn in_range_fraction(&self) -> f64 {
        (self.total - self.below - self.above) as f64 / self.total as f64
    }

    /// Density normalised by the full sample count.
    pub fn absolute_density(&self) -> Vec<f64> {
        let f = self.in_range_fraction();
        self.density.iter().map(|d| d * f).collect()
    }

    /// Bin-centre positions of the given lower and upper mass quantiles.
    pub fn mass_window(&self, lower: f64, upper: f64) -> (f64, f64) {
        let n = self.total as f64;
        let mut cum = self.below as f64 / n;
        let mut lo = self.lo;
        let mut hi = self.hi;
        let mut found_lo = false;
        for (c, &k) in self.centers.iter().zip(&self.counts) {
            let next = cum + k as f64 / n;
            if !found_lo && next >= lower {
                lo = *c;
                found_lo = true;
            }
            if next >= upper {
                hi = *c;
                break;
            }
            cum = next;
        }
        (lo, hi)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

pub fn histogram(samples: &[f64], bins: usize, range: RangePolicy) -> Result<Histogram> {
    if bins == 0 || samples.len() < bins {
        return Err(Error::InvalidParameter(format!(
            "histogram needs at least as many samples ({}) as bins ({bins})",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("samples must be finite".into()));
    }
    let (lo, hi) = match range {
        RangePolicy::Fixed(a, b) => (a, b),
        RangePolicy::Central(mass) => {
            if !(mass > 0.0 && mass <= 1.0) {
                return Err(Error::InvalidParameter(format!("central mass must lie in (0, 1], got {mass}")));
            }
            let mut sorted = samples.to_vec();
            sorted.sort_by(f64::total_cmp);
            let tail = (1.0 - mass) / 2.0;
            (quantile(&sorted, tail), quantile(&sorted, 1.0 - tail))
        }
    };
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!("empty histogram range [{lo}, {hi})")));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    let (mut below, mut above) = (0, 0);
    for &x in samples {
        if x < lo {
            below += 1;
        } else if x > hi {
            above += 1;
        } else {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    let inside = (samples.len() - below - above) as f64;
    let density = counts.iter().map(|&c| c as f64 / (inside * width)).collect();
    Ok(Histogram {
        lo,
        hi,
        centers: (0..bins).map(|k| lo + width * (k as f64 + 0.5)).collect(),
        counts,
        density,
        bin_width: width,
        total: samples.len(),
        below,
        above,
    })
}

/// Least-squares fit of a density model over a mass window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevyFit {
    pub params: LevyParams,
    /// Sum of squared density residuals over the window.
    pub residual: f64,
    pub window: (f64, f64),
    pub bins_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: f64,
    pub variance: f64,
    pub residual: f64,
    pub window: (f64, f64),
    pub bins_used: usize,
}

/// Lower and upper mass quantiles of the fit window.
pub const FIT_WINDOW: (f64, f64) = (0.02, 0.98);
const MIN_FIT_BINS: usize = 20;

fn fit_points(hist: &Histogram) -> Result<(Vec<f64>, Vec<f64>, (f64, f64))> {
    let window = hist.mass_window(FIT_WINDOW.0, FIT_WINDOW.1);
    let abs = hist.absolute_density();
    let (xs, ys): (Vec<f64>, Vec<f64>) = hist
        .centers
        .iter()
        .zip(&abs)
        .filter(|(c, _)| **c >= window.0 && **c <= window.1)
        .map(|(c, d)| (*c, *d))
        .unzip();
    if xs.len() < MIN_FIT_BINS {
        return Err(Error::InvalidParameter(format!(
            "fit window holds {} bins, need at least {MIN_FIT_BINS}",
            xs.len()
        )));
    }
    Ok((xs, ys, window))
}

/// Location and half inter-quartile range of the histogram.
fn robust_scale(hist: &Histogram) -> (f64, f64) {
    let (q1, q3) = hist.mass_window(0.25, 0.75);
    let (med, _) = hist.mass_window(0.5, 0.5);
    (med, ((q3 - q1) / 2.0).max(hist.bin_width))
}

fn squashed(u: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) / (1.0 + (-u).exp())
}

/// Fit `levy_density` to the 2-98 % mass window; `alpha` is free unless fixed.
pub fn levy_fit(hist: &Histogram, fix_alpha: Option<f64>) -> Result<LevyFit> {
    let (xs, ys, window) = fit_points(hist)?;
    if let Some(a) = fix_alpha {
        LevyParams::new(a, 0.0, 0.0, 1.0)?;
    }
    let (med, half_iqr) = robust_scale(hist);
    let rule = gauss_legendre(PANEL_RULE);
    let unpack = |v: &[f64]| -> Option<LevyParams> {
        let alpha = match fix_alpha {
            Some(a) => a,
            None => squashed(v[3], MIN_ALPHA + 0.05, 2.0),
        };
        let beta = if alpha == 2.0 { 0.0 } else { v[1].tanh() };
        LevyParams::new(alpha, beta, v[0], v[2].exp()).ok()
    };
    let objective = |v: &[f64]| -> f64 {
        let Some(p) = unpack(v) else {
            return f64::INFINITY;
        };
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| match levy_density_with(x, &p, &rule) {
                Ok(f) => (f - y).powi(2),
                Err(_) => f64::INFINITY,
            })
            .sum()
    };
    let alpha0 = fix_alpha.unwrap_or(1.5);
    // half-IQR of a symmetric stable law is about D^(1/alpha)
    let d0 = half_iqr.powf(alpha0).max(1e-300).ln();
    let mut x0 = vec![med, 0.0, d0];
    let mut step = vec![half_iqr * 0.5, 0.5, 0.5];
    if fix_alpha.is_none() {
        x0.push(0.0);
        step.push(1.0);
    }
    let mut best = nelder_mead(objective, &x0, &step, 4000, 1e-12);
    // restart once from the optimum to escape early simplex collapse
    best = nelder_mead(objective, &best.0, &step.iter().map(|s| s * 0.2).collect::<Vec<_>>(), 4000, 1e-14);
    let (v, residual) = best;
    let params = unpack(&v).ok_or_else(|| Error::FitDiverged("parameters left the valid domain".into()))?;
    if !residual.is_finite() {
        return Err(Error::FitDiverged(format!("residual {residual}")));
    }
    Ok(LevyFit {
        params,
        residual,
        window,
        bins_used: xs.len(),
    })
}

/// Best Gaussian on the same window as [`levy_fit`].
pub fn gaussian_fit(hist: &Histogram) -> Result<GaussianFit> {
    let (xs, ys, window) = fit_points(hist)?;
    let (med, half_iqr) = robust_scale(hist);
    let objective = |v: &[f64]| -> f64 {
        let var = v[1].exp();
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let f = (-(x - v[0]).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
                (f - y).powi(2)
            })
            .sum()
    };
    let sd0 = half_iqr / 0.6745;
    let (v, residual) = nelder_mead(objective, &[med, (sd0 * sd0).ln()], &[half_iqr * 0.5, 0.5], 4000, 1e-14);
    if !residual.is_finite() {
        return Err(Error::FitDiverged(format!("residual {residual}")));
    }
    Ok(GaussianFit {
        mean: v[0],
        variance: v[1].exp(),
        residual,
        window,
        bins_used: xs.len(),
    })
}

/// Fitted exponential decay `M ~ exp(-gamma t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub gamma: f64,
    pub intercept: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Root-mean-square residual of `ln M`.
    pub residual: f64,
    pub points: usize,
    pub method: String,
}

/// Which samples enter a rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WindowPolicy {
    /// `t >= 1` up to the first point with `M < 10 floor`.
    Auto { floor: f64 },
    /// All points with `t_lo <= t <= t_hi` and `M > 0`.
    Range { t_lo: f64, t_hi: f64 },
}

impl WindowPolicy {
    /// Saturation floor `c / N`.
    pub fn auto_for(n: usize, c: f64) -> Self {
        WindowPolicy::Auto { floor: c / n as f64 }
    }
}

/// Ordinary least squares of `ln M` against `t`.
pub fn decay_rate_fit(t: &[f64], m: &[f64], policy: WindowPolicy) -> Result<RateFit> {
    if t.len() != m.len() {
        return Err(Error::InvalidParameter("time and fidelity columns differ in length".into()));
    }
    let (pts, method): (Vec<(f64, f64)>, String) = match policy {
        WindowPolicy::Auto { floor } => {
            let mut pts = Vec::new();
            for (&ti, &mi) in t.iter().zip(m) {
                if ti < 1.0 {
                    continue;
                }
                if !(mi >= 10.0 * floor) || mi <= 0.0 {
                    break;
                }
                pts.push((ti, mi.ln()));
            }
            (pts, format!("ols ln M, t >= 1 until M < 10 x {floor:e}"))
        }
        WindowPolicy::Range { t_lo, t_hi } => (
            t.iter()
                .zip(m)
                .filter(|(ti, mi)| **ti >= t_lo && **ti <= t_hi && **mi > 0.0)
                .map(|(ti, mi)| (*ti, mi.ln()))
                .collect(),
            format!("ols ln M on [{t_lo}, {t_hi}]"),
        ),
    };
    if pts.len() < 2 {
        return Err(Error::WindowEmpty);
    }
    let (slope, intercept, rms) = ols(&pts);
    Ok(RateFit {
        gamma: -slope,
        intercept,
        t_lo: pts[0].0,
        t_hi: pts[pts.len() - 1].0,
        residual: rms,
        points: pts.len(),
        method,
    })
}

/// Slope, intercept and RMS residual of a straight-line fit.
pub fn ols(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rms = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

/// Pearson correlation coefficient.
pub fn correlation(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Index of the first point where `|M - P| / M > threshold`; `None` when
/// the predictor holds over the whole horizon.
pub fn breakdown_time(exact: &[f64], predictor: &[f64], threshold: f64) -> Result<Option<usize>> {
    if exact.len() != predictor.len() {
        return Err(Error::InvalidParameter("curves must share a time grid".into()));
    }
    Ok(exact
        .iter()
        .zip(predictor)
        .position(|(&m, &p)| ((m - p) / m).abs() > threshold || (m == 0.0 && p != 0.0)))
}
