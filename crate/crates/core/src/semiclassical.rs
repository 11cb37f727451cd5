//! Semiclassical fidelity amplitudes and regime predictors.
//!
//! Packet amplitudes are momentum integrals over initial momenta `p0` at the
//! packet's initial position, with phase `dS(p0)/hbar = sigma * dS/eps`.
//! The first-order form uses the bare window `hbar/xi`; the second-order form
//! widens it to `w_p = hbar D / xi` with `D = sqrt(1 + (dp_s/dr0)^2 / kappa^2)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{action_jet, find_stationary_points, PerturbationSpec, StationaryPoint};
use crate::classical::{stretch_curve, MapSpec};
use crate::error::{Error, Result};
use crate::quantum::GaussianPacketSpec;
use crate::{Complex64, TWO_PI};
use std::f64::consts::PI;

/// Quadrature controls for the momentum integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSettings {
    /// Half-width of the integration window in units of the local window width.
    pub span_widths: f64,
    /// Grid points per radian of phase advance at the steepest slope.
    pub points_per_radian: f64,
    /// Grid points per radian of final-position sweep; resolves the kinks
    /// of `1/D` at conjugate points.
    pub points_per_sweep: f64,
    pub min_points: usize,
    pub max_points: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            span_widths: 6.0,
            points_per_radian: 16.0 / TWO_PI * 2.0,
            points_per_sweep: 8.0,
            min_points: 4096,
            max_points: 1 << 26,
        }
    }
}

/// Largest admissible phase advance between neighbouring grid points.
pub const MAX_PHASE_STEP: f64 = PI / 4.0;

/// Effective momentum window at one initial momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScWindow {
    /// `hbar D / xi`
    pub w_p: f64,
    /// Second-order factor, `>= 1`.
    pub d: f64,
    pub settings: QuadratureSettings,
}

/// `hbar D / xi`
pub fn window_width(hbar: f64, xi: f64, d: f64) -> f64 {
    hbar * d / xi
}

/// `D` from `dp_s/dr0` and `kappa`.
pub fn d_factor(dps_dr0: f64, kappa: f64) -> f64 {
    (1.0 + (dps_dr0 / kappa).powi(2)).sqrt()
}

/// `D` and `w_p` at the packet centre.
pub fn sc_window(map: &MapSpec, packet: &GaussianPacketSpec, hbar: f64, t: usize) -> Result<ScWindow> {
    let dps = crate::action::dps_dr0(map, packet.p0, packet.r0, t)?;
    let d = d_factor(dps, packet.kappa(hbar));
    Ok(ScWindow {
        w_p: window_width(hbar, packet.xi, d),
        d,
        settings: QuadratureSettings::default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Order {
    First,
    Second,
}

/// Offset wrapped into `(-pi, pi]`.
#[inline]
fn wrap_offset(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(TWO_PI) - PI;
    if y <= -PI {
        y + TWO_PI
    } else {
        y
    }
}

/// Normalised weight `w(x)` and Gaussian argument for offset `x = p0 - p~0`,
/// written so that conjugate points (`dr_t/dp0 = 0`) give zero weight
/// instead of an infinite `D`.
#[inline]
fn weight(order: Order, x: f64, r_p: f64, r_r: f64, hbar: f64, xi: f64) -> f64 {
    let base = xi / (PI.sqrt() * hbar);
    match order {
        Order::First => base * (-(x * xi / hbar).powi(2)).exp(),
        Order::Second => {
            let kinv = xi * xi / hbar;
            let den = (r_p * r_p + (kinv * r_r).powi(2)).sqrt();
            if den == 0.0 {
                return 0.0;
            }
            // 1/D and (x / w_p)^2
            let inv_d = r_p.abs() / den;
            base * inv_d * (-(x * xi * inv_d / hbar).powi(2)).exp()
        }
    }
}

const SCAN: usize = 4096;

/// Half-width of the region where the packet weight exceeds `1e-16` of its peak.
fn envelope_half_width(
    order: Order,
    map: &MapSpec,
    pert: &PerturbationSpec,
    packet: &GaussianPacketSpec,
    hbar: f64,
    t: usize,
    settings: &QuadratureSettings,
) -> f64 {
    let bare = settings.span_widths * hbar / packet.xi;
    if order == Order::First {
        return bare.min(PI);
    }
    let mut peak = 0.0f64;
    let mut samples = Vec::with_capacity(SCAN);
    for k in 0..SCAN {
        let x = -PI + TWO_PI * (k as f64 + 0.5) / SCAN as f64;
        let jet = action_jet(map, pert, packet.p0 + x, packet.r0, t);
        let w = weight(order, x, jet.r_p, jet.r_r, hbar, packet.xi);
        peak = peak.max(w);
        samples.push((x, w));
    }
    let floor = 1e-16 * peak;
    let reach = samples
        .iter()
        .filter(|(_, w)| *w > floor)
        .map(|(x, _)| x.abs())
        .fold(0.0f64, f64::max)
        + TWO_PI / SCAN as f64;
    reach.max(bare).min(PI)
}

/// Largest `|k_p|` and `|dr_t/dp0|` on a coarse grid over `[lo, lo + span)`.
fn scan_max_slope(map: &MapSpec, pert: &PerturbationSpec, r0: f64, lo: f64, span: f64, t: usize) -> (f64, f64) {
    (0..SCAN)
        .map(|k| action_jet(map, pert, lo + span * (k as f64 + 0.5) / SCAN as f64, r0, t))
        .fold((0.0f64, 0.0f64), |(a, b), j| (a.max(j.kp.abs()), b.max(j.r_p.abs())))
}

fn grid_points(sigma: f64, slopes: (f64, f64), span: f64, settings: &QuadratureSettings) -> Result<usize> {
    let (max_kp, max_rp) = slopes;
    let phase = sigma.abs() * max_kp * span;
    let want = (settings.points_per_radian * phase)
        .max(settings.points_per_sweep * max_rp * span)
        .ceil();
    if want > settings.max_points as f64 {
        return Err(Error::QuadratureTooLarge {
            needed: want,
            limit: settings.max_points,
        });
    }
    Ok((want as usize).max(settings.min_points))
}

const CHUNK: usize = 1 << 13;

/// `dp * sum_k f(x_k) exp(i sigma dS/eps)` on a midpoint grid, with the
/// resolution guard applied to the measured slopes.
fn midpoint_sum<W>(
    map: &MapSpec,
    pert: &PerturbationSpec,
    r0: f64,
    centre: f64,
    lo: f64,
    span: f64,
    points: usize,
    t: usize,
    weight_of: W,
) -> Result<Complex64>
where
    W: Fn(f64, f64, f64) -> f64 + Sync,
{
    let dp = span / points as f64;
    let sigma = pert.sigma;
    let parts: Vec<(Complex64, f64)> = (0..points.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut steep = 0.0f64;
            for k in (c * CHUNK)..((c + 1) * CHUNK).min(points) {
                let x = lo + dp * (k as f64 + 0.5);
                let jet = action_jet(map, pert, centre + x, r0, t);
                let w = weight_of(x, jet.r_p, jet.r_r);
                steep = steep.max(jet.kp.abs());
                if w != 0.0 {
                    acc += Complex64::from_polar(w, (sigma * jet.ds).rem_euclid(TWO_PI));
                }
            }
            (acc, steep)
        })
        .collect();
    let mut sum = Complex64::new(0.0, 0.0);
    let mut steep = 0.0f64;
    for (a, s) in parts {
        sum += a;
        steep = steep.max(s);
    }
    let step = sigma.abs() * steep * dp;
    if step > MAX_PHASE_STEP {
        return Err(Error::QuadratureUnresolved {
            phase_step: step,
            points,
        });
    }
    Ok(sum * dp)
}

fn packet_amplitude(
    order: Order,
    map: &MapSpec,
    pert: &PerturbationSpec,
    packet: &GaussianPacketSpec,
    t: usize,
    settings: &QuadratureSettings,
) -> Result<Complex64> {
    if t == 0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let hbar = pert.hbar;
    let half = envelope_half_width(order, map, pert, packet, hbar, t, settings);
    let span = 2.0 * half;
    let (max_kp, max_rp) = scan_max_slope(map, pert, packet.r0, packet.p0 - half, span, t);
    let slopes = match order {
        Order::First => (max_kp, 0.0),
        Order::Second => (max_kp, max_rp),
    };
    let points = grid_points(pert.sigma, slopes, span, settings)?;
    let xi = packet.xi;
    midpoint_sum(map, pert, packet.r0, packet.p0, -half, span, points, t, |x, rp, rr| {
        weight(order, wrap_offset(x), rp, rr, hbar, xi)
    })
}

/// First-order packet amplitude with window `hbar/xi`.
pub fn m_sc1(map: &MapSpec, pert: &PerturbationSpec, packet: &GaussianPacketSpec, t: usize) -> Result<Complex64> {
    m_sc1_with(map, pert, packet, t, &QuadratureSettings::default())
}

pub fn m_sc1_with(
    map: &MapSpec,
    pert: &PerturbationSpec,
    packet: &GaussianPacketSpec,
    t: usize,
    settings: &QuadratureSettings,
) -> Result<Complex64> {
    packet_amplitude(Order::First, map, pert, packet, t, settings)
}

/// Second-order packet amplitude with the local window `hbar D(p0) / xi`.
pub fn m_sc2(map: &MapSpec, pert: &PerturbationSpec, packet: &GaussianPacketSpec, t: usize) -> Result<Complex64> {
    m_sc2_with(map, pert, packet, t, &QuadratureSettings::default())
}

pub fn m_sc2_with(
    map: &MapSpec,
    pert: &PerturbationSpec,
    packet: &GaussianPacketSpec,
    t: usize,
    settings: &QuadratureSettings,
) -> Result<Complex64> {
    packet_amplitude(Order::Second, map, pert, packet, t, settings)
}

/// Point-source amplitude `(1/2pi) int_0^{2pi} exp(i dS / hbar) dp0`.
pub fn m_point(map: &MapSpec, pert: &PerturbationSpec, r0: f64, t: usize) -> Result<Complex64> {
    m_point_with(map, pert, r0, t, &QuadratureSettings::default())
}

pub fn m_point_with(
    map: &MapSpec,
    pert: &PerturbationSpec,
    r0: f64,
    t: usize,
    settings: &QuadratureSettings,
) -> Result<Complex64> {
    if t == 0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let (max_kp, _) = scan_max_slope(map, pert, r0, 0.0, TWO_PI, t);
    let points = grid_points(pert.sigma, (max_kp, 0.0), TWO_PI, settings)?;
    midpoint_sum(map, pert, r0, 0.0, 0.0, TWO_PI, points, t, |_, _, _| 1.0 / TWO_PI)
}

/// `exp[-(sigma w_p k_p)^2 / 2]`
pub fn short_time_m(kp: f64, w_p: f64, sigma: f64) -> f64 {
    (-(sigma * w_p * kp).powi(2) / 2.0).exp()
}

/// Width of the momentum interval around `p0` over which `dS/eps` after
/// `t` kicks stays within `fraction` of its full range from its chord.
pub fn linear_width(map: &MapSpec, pert: &PerturbationSpec, r0: f64, p0: f64, t: usize, fraction: f64) -> f64 {
    let values = width_samples(map, pert, r0, p0, t);
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    chord_width(&values, fraction * (hi - lo))
}

/// Width of the momentum interval around `p0` over which `dS/eps` after
/// `t` kicks stays within `tol` of its chord. A phase tolerance `phi`
/// corresponds to `tol = phi / sigma`.
pub fn linear_width_within(map: &MapSpec, pert: &PerturbationSpec, r0: f64, p0: f64, t: usize, tol: f64) -> f64 {
    chord_width(&width_samples(map, pert, r0, p0, t), tol)
}

const WIDTH_GRID: usize = 4096;

fn width_samples(map: &MapSpec, pert: &PerturbationSpec, r0: f64, p0: f64, t: usize) -> Vec<f64> {
    (0..=WIDTH_GRID)
        .map(|k| {
            let p = p0 - PI + TWO_PI * k as f64 / WIDTH_GRID as f64;
            crate::action::action_per_eps(map, pert, crate::classical::PhasePoint::new(r0, p), t)
        })
        .collect()
}

fn chord_width(values: &[f64], tol: f64) -> f64 {
    let mid = WIDTH_GRID / 2;
    let mut best = 0;
    for h in 1..=mid {
        let (a, b) = (mid - h, mid + h);
        let (fa, fb) = (values[a], values[b]);
        let ok = (a..=b).all(|k| {
            let chord = fa + (fb - fa) * (k - a) as f64 / (b - a) as f64;
            (values[k] - chord).abs() < tol
        });
        if !ok {
            break;
        }
        best = h;
    }
    2.0 * TWO_PI * best as f64 / WIDTH_GRID as f64
}

/// Early-time scale before which the packet window sees a linear phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tau1 {
    /// `1 + ln(b dp0 / (a1 w_p)) / Lambda`, clipped at zero.
    pub value: f64,
    /// `b dp0 <= a1 w_p`: the linear window is already lost at the first kick.
    pub at_most_one: bool,
}

pub fn tau1_estimate(lambda: f64, dp0_1: f64, a1: f64, b_bar: f64, w_p: f64) -> Result<Tau1> {
    for (name, v) in [("Lambda", lambda), ("dp0(1)", dp0_1), ("a1", a1), ("b", b_bar), ("w_p", w_p)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let ratio = b_bar * dp0_1 / (a1 * w_p);
    Ok(Tau1 {
        value: (1.0 + ratio.ln() / lambda).max(0.0),
        at_most_one: ratio <= 1.0,
    })
}

/// `tau1` with a time-dependent exponent, iterated to self-consistency.
pub fn tau1_self_consistent<F: Fn(f64) -> f64>(
    lambda_of_t: F,
    dp0_1: f64,
    a1: f64,
    b_bar: f64,
    w_p: f64,
) -> Result<Tau1> {
    let mut tau = tau1_estimate(lambda_of_t(1.0), dp0_1, a1, b_bar, w_p)?;
    for _ in 0..100 {
        let next = tau1_estimate(lambda_of_t(tau.value.max(1.0)), dp0_1, a1, b_bar, w_p)?;
        if (next.value - tau.value).abs() < 1e-12 {
            return Ok(next);
        }
        tau = next;
    }
    Ok(tau)
}

/// `ln(pi / (c0 w_p)) / lambda`
pub fn tau2_estimate(lambda: f64, c0: f64, w_p: f64) -> Result<f64> {
    if !(lambda > 0.0 && c0 > 0.0 && w_p > 0.0) {
        return Err(Error::InvalidParameter("tau2 needs positive lambda, c0 and w_p".into()));
    }
    if c0 * w_p >= PI {
        return Err(Error::InvalidParameter(format!(
            "c0 * w_p = {} must be below pi",
            c0 * w_p
        )));
    }
    Ok((PI / (c0 * w_p)).ln() / lambda)
}

/// `tau2` with a time-dependent exponent, iterated to self-consistency.
pub fn tau2_self_consistent<F: Fn(f64) -> f64>(lambda_of_t: F, c0: f64, w_p: f64) -> Result<f64> {
    let mut tau = tau2_estimate(lambda_of_t(1.0), c0, w_p)?;
    for _ in 0..100 {
        let next = tau2_estimate(lambda_of_t(tau.max(1.0)), c0, w_p)?;
        if (next - tau).abs() < 1e-12 {
            return Ok(next);
        }
        tau = next;
    }
    Ok(tau)
}

/// Stationary points of `k_p` inside the packet's integration window.
pub fn packet_stationary_points(
    map: &MapSpec,
    pert: &PerturbationSpec,
    packet: &GaussianPacketSpec,
    t: usize,
) -> Result<Vec<StationaryPoint>> {
    let settings = QuadratureSettings::default();
    let half = envelope_half_width(Order::Second, map, pert, packet, pert.hbar, t, &settings);
    let pts = find_stationary_points(
        map,
        pert,
        packet.r0,
        t,
        (packet.p0 - half, packet.p0 + half),
    )?;
    Ok(pts)
}

/// `1/w_p` at `p0`, finite at conjugate points.
fn inverse_window(map: &MapSpec, pert: &PerturbationSpec, packet: &GaussianPacketSpec, p0: f64, t: usize) -> f64 {
    let jet = action_jet(map, pert, p0, packet.r0, t);
    let hbar = pert.hbar;
    let kinv = packet.xi * packet.xi / hbar;
    let den = (jet.r_p * jet.r_p + (kinv * jet.r_r).powi(2)).sqrt();
    if den == 0.0 {
        return 0.0;
    }
    packet.xi * jet.r_p.abs() / (hbar * den)
}

fn check_degenerate(points: &[StationaryPoint]) -> Result<()> {
    if let Some(p) = points.iter().find(|p| p.degenerate) {
        return Err(Error::DegenerateStationaryPoint {
            p0: p.p0_alpha,
            ds2: p.ds2_alpha.abs(),
        });
    }
    Ok(())
}

/// Stationary-phase sum over the given points.
pub fn stationary_phase_m(
    map: &MapSpec,
    pert: &PerturbationSpec,
    points: &[StationaryPoint],
    packet: &GaussianPacketSpec,
    t: usize,
) -> Result<Complex64> {
    check_degenerate(points)?;
    let hbar = pert.hbar;
    Ok(points
        .iter()
        .map(|p| {
            let inv_w = inverse_window(map, pert, packet, p.p0_alpha, t);
            let x = wrap_offset(p.p0_alpha - packet.p0);
            let amp = (2.0 * hbar / p.ds2_alpha.abs()).sqrt() * inv_w * (-(x * inv_w).powi(2)).exp();
            let phase = p.ds_alpha / hbar + p.ds2_alpha.signum() * PI / 4.0;
            Complex64::from_polar(amp, phase.rem_euclid(TWO_PI))
        })
        .sum())
}

/// Diagonal approximation `sum_alpha |m_alpha|^2`.
pub fn diagonal_m(
    map: &MapSpec,
    pert: &PerturbationSpec,
    points: &[StationaryPoint],
    packet: &GaussianPacketSpec,
    t: usize,
) -> Result<f64> {
    check_degenerate(points)?;
    let hbar = pert.hbar;
    Ok(points
        .iter()
        .map(|p| {
            let inv_w = inverse_window(map, pert, packet, p.p0_alpha, t);
            let x = wrap_offset(p.p0_alpha - packet.p0);
            2.0 * hbar * inv_w * inv_w * (-2.0 * (x * inv_w).powi(2)).exp() / p.ds2_alpha.abs()
        })
        .sum())
}

/// `exp(-Lambda_1(t) t)` for `t = 0..=t_max`.
pub fn lambda1_decay_curve(map: &MapSpec, t_max: usize, ensemble: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![1.0];
    out.extend(
        stretch_curve(map, t_max, ensemble, seed)
            .iter()
            .map(|s| (-s.lambda1_t * s.t as f64).exp()),
    );
    out
}

/// `exp(-Lambda(t) t)` for `t = 0..=t_max`.
pub fn lambda_decay_curve(map: &MapSpec, t_max: usize, ensemble: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![1.0];
    out.extend(
        stretch_curve(map, t_max, ensemble, seed)
            .iter()
            .map(|s| (-s.lambda_t * s.t as f64).exp()),
    );
    out
}

/// `exp(-2 sigma^2 K(E) t)`
pub fn fgr_m(k_e: f64, sigma: f64, t: f64) -> f64 {
    (-2.0 * sigma * sigma * k_e * t).exp()
}

/// `exp(-(4 K(E) / N) sigma^2 t^2)`: Gaussian decay with mean level
/// density `N / 2pi` and symmetry factor 2.
pub fn perturbative_m(k_e: f64, sigma: f64, t: f64, n: usize) -> f64 {
    (-(4.0 * k_e / n as f64) * sigma * sigma * t * t).exp()
}

/// `sqrt(ln N / (2 K(E) N))`
pub fn perturbative_border(k_e: f64, n: usize) -> Result<f64> {
    if n < 2 || !(k_e > 0.0) {
        return Err(Error::InvalidParameter("perturbative border needs N >= 2 and K(E) > 0".into()));
    }
    let nf = n as f64;
    Ok((nf.ln() / (2.0 * k_e * nf)).sqrt())
}

/// `|<exp(i sigma x)>|^2` over samples `x` of `dS/eps`.
pub fn mean_value_m(ds_over_eps: &[f64], sigma: f64) -> f64 {
    if ds_over_eps.is_empty() {
        return f64::NAN;
    }
    let sum: Complex64 = ds_over_eps
        .iter()
        .map(|x| Complex64::from_polar(1.0, (sigma * x).rem_euclid(TWO_PI)))
        .sum();
    (sum / ds_over_eps.len() as f64).norm_sqr()
}

/// Piecewise-linear estimate of the point-source integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppendixEstimate {
    /// `sum_j |X_j|^2 / (2 pi sigma)^2`, averaged over initial positions.
    pub m_bar: f64,
    /// Mean number of linear segments.
    pub n_x: f64,
    pub sigma: f64,
    pub chord_tol: f64,
}

/// Segment boundaries of `phase[0..=n]` such that inside each segment the
/// samples stay within `tol` of the chord joining its ends.
pub fn chord_segments(phase: &[f64], tol: f64) -> Vec<(usize, usize)> {
    let n = phase.len() - 1;
    let fits = |a: usize, b: usize| {
        let (fa, fb) = (phase[a], phase[b]);
        let span = (b - a) as f64;
        (a + 1..b).all(|k| (phase[k] - fa - (fb - fa) * (k - a) as f64 / span).abs() < tol)
    };
    let mut out = Vec::new();
    let mut a = 0;
    while a < n {
        let mut good = a + 1;
        let mut step = 1;
        while good + step <= n && fits(a, good + step) {
            good += step;
            step *= 2;
        }
        let mut bad = (good + step).min(n + 1);
        while bad - good > 1 {
            let mid = (good + bad) / 2;
            if fits(a, mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        out.push((a, good));
        a = good;
    }
    out
}

/// `sum_j |X_j|^2 / (2 pi sigma)^2` and the segment count at one position.
pub fn appendix_segments(
    map: &MapSpec,
    pert: &PerturbationSpec,
    r0: f64,
    t: usize,
    chord_tol: f64,
) -> Result<(f64, usize)> {
    if !(chord_tol > 0.0) {
        return Err(Error::InvalidParameter("chord tolerance must be positive".into()));
    }
    let sigma = pert.sigma;
    // grid fine enough that a chord of the steepest curvature spans many points
    let max_kpp = (0..SCAN)
        .map(|k| action_jet(map, pert, TWO_PI * (k as f64 + 0.5) / SCAN as f64, r0, t).kpp.abs())
        .fold(0.0f64, f64::max);
    let seg = (8.0 * chord_tol / (sigma.abs() * max_kpp).max(1e-300)).sqrt();
    let n = ((32.0 * TWO_PI / seg).ceil() as usize).clamp(4096, 1 << 24);
    let dp = TWO_PI / n as f64;
    let phase: Vec<f64> = (0..=n)
        .map(|k| {
            sigma * crate::action::action_per_eps(map, pert, crate::classical::PhasePoint::new(r0, dp * k as f64), t)
        })
        .collect();
    let segments = chord_segments(&phase, chord_tol);
    let sum: f64 = segments
        .iter()
        .map(|&(a, b)| {
            let width = dp * (b - a) as f64;
            let rise = phase[b] - phase[a];
            // |X_j| = |exp(i sigma k p_b) - exp(i sigma k p_a)| / |k|, sigma k = rise / width
            let x = if rise.abs() < 1e-8 {
                sigma * width
            } else {
                2.0 * (0.5 * rise).sin().abs() * sigma * width / rise.abs()
            };
            x * x
        })
        .sum();
    Ok((sum / (TWO_PI * sigma).powi(2), segments.len()))
}

/// Appendix estimate averaged over the supplied initial positions.
pub fn appendix_sigma_scaling(
    map: &MapSpec,
    pert: &PerturbationSpec,
    r0s: &[f64],
    t: usize,
    chord_tol: f64,
) -> Result<AppendixEstimate> {
    if r0s.is_empty() {
        return Err(Error::InvalidParameter("need at least one initial position".into()));
    }
    let parts: Vec<(f64, usize)> = r0s
        .par_iter()
        .map(|&r0| appendix_segments(map, pert, r0, t, chord_tol))
        .collect::<Result<_>>()?;
    let n = r0s.len() as f64;
    Ok(AppendixEstimate {
        m_bar: parts.iter().map(|p| p.0).sum::<f64>() / n,
        n_x: parts.iter().map(|p| p.1 as f64).sum::<f64>() / n,
        sigma: pert.sigma,
        chord_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::PerturbationFamily;

    fn saw() -> MapSpec {
        MapSpec::sawtooth(1.0).unwrap()
    }

    #[test]
    fn zero_perturbation_gives_unity() {
        let hbar = TWO_PI / 4096.0;
        let map = MapSpec::standard(10.0).unwrap();
        let pert = PerturbationSpec::from_sigma(PerturbationFamily::Cosine, 0.0, hbar).unwrap();
        let packet = GaussianPacketSpec::with_kappa(1.0, 2.0, 1.0, hbar).unwrap();
        for t in 0..4 {
            let a = m_sc1(&map, &pert, &packet, t).unwrap();
            assert!((a - 1.0).norm() < 1e-10, "t={t} {a}");
            assert!((m_point(&map, &pert, 1.0, t).unwrap() - 1.0).norm() < 1e-12);
        }
        let packet = GaussianPacketSpec::with_kappa(1.0, 2.0, 100.0, hbar).unwrap();
        let b = m_sc2(&map, &pert, &packet, 1).unwrap();
        assert!((b.norm() - 1.0).abs() < 1e-4, "{b}");
    }

    #[test]
    fn linear_phase_matches_closed_form() {
        // V1 on the sawtooth at t = 1 is linear in p0 away from the cut:
        // dS/eps = -N1 (r1 - pi), dr1/dp0 = 1
        let hbar = TWO_PI / 8192.0;
        let pert = PerturbationSpec::from_sigma(PerturbationFamily::Monomial(1), 3.0, hbar).unwrap();
        let r0 = 2.0;
        let p0 = 2.5;
        let packet = GaussianPacketSpec::with_kappa(r0, p0, 1.0, hbar).unwrap();
        let kp = -standard_coeff(1);
        let got = m_sc1(&saw(), &pert, &packet, 1).unwrap().norm();
        let want = (-(pert.sigma * hbar / packet.xi * kp).powi(2) / 4.0).exp();
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        assert!((got * got - short_time_m(kp, hbar / packet.xi, pert.sigma)).abs() < 1e-8);
    }

    fn standard_coeff(i: usize) -> f64 {
        crate::action::standard_coefficients()[i - 1]
    }

    #[test]
    fn sc2_reduces_to_sc1_for_narrow_packets() {
        let hbar = TWO_PI / 4096.0;
        let map = MapSpec::standard(3.0).unwrap();
        let pert = PerturbationSpec::from_sigma(PerturbationFamily::Cosine, 2.0, hbar).unwrap();
        let packet = GaussianPacketSpec::with_kappa(1.3, 0.7, 1e6, hbar).unwrap();
        for t in 1..=3 {
            let a = m_sc1(&map, &pert, &packet, t).unwrap();
            let b = m_sc2(&map, &pert, &packet, t).unwrap();
            assert!((a - b).norm() < 1e-6, "t={t}: {a} {b}");
        }
    }

    #[test]
    fn parabolic_first_kick_width() {
        // r0 = pi: no kick, r1 = pi + p0, dS/eps = -N2 p0^2 over the whole window
        let pert = PerturbationSpec::from_sigma(PerturbationFamily::Monomial(2), 1.0, 1.0).unwrap();
        let grid = TWO_PI / WIDTH_GRID as f64;
        for tol in [1e-3, 1e-2, 0.1] {
            let got = linear_width_within(&saw(), &pert, PI, 0.0, 1, tol);
            let want = 2.0 * (tol / 0.5f64).sqrt();
            assert!((got - want).abs() <= 2.0 * grid, "{tol}: {got} vs {want}");
        }
        let full = linear_width(&saw(), &pert, PI, 0.0, 1, 0.01);
        let range = 0.5 * PI * PI;
        assert!((full - 2.0 * (0.01 * range / 0.5f64).sqrt()).abs() <= 2.0 * grid);
    }

    #[test]
    fn first_kick_d_factor() {
        let hbar = TWO_PI / 4096.0;
        for kappa in [0.5, 1.0, 4.0] {
            let packet = GaussianPacketSpec::with_kappa(1.1, 0.3, kappa, hbar).unwrap();
            let w = sc_window(&saw(), &packet, hbar, 1).unwrap();
            assert!((w.d - (1.0 + 4.0 / (kappa * kappa)).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_converges() {
        let hbar = TWO_PI / 4096.0;
        let map = MapSpec::standard(10.0).unwrap();
        let pert = PerturbationSpec::from_sigma(PerturbationFamily::Cosine, 1.0, hbar).unwrap();
        let packet = GaussianPacketSpec::with_kappa(2.0, 1.0, 1.0, hbar).unwrap();
        let coarse = QuadratureSettings::default();
        let fine = QuadratureSettings {
            points_per_radian: 4.0 * coarse.points_per_radian,
            points_per_sweep: 4.0 * coarse.points_per_sweep,
            min_points: 4 * coarse.min_points,
            ..coarse
        };
        for t in 1..=4 {
            let a = m_sc2_with(&map, &pert, &packet, t, &coarse).unwrap();
            let b = m_sc2_with(&map, &pert, &packet, t, &fine).unwrap();
            assert!((a - b).norm() < 5e-4, "t={t}: {a} {b}");
        }
    }

    #[test]
    fn resolution_guard_trips() {
        let hbar = TWO_PI / 4096.0;
        let pert = PerturbationSpec::from_sigma(PerturbationFamily::Monomial(2), 1e6, hbar).unwrap();
        let settings = QuadratureSettings {
            max_points: 1000,
            ..QuadratureSettings::default()
        };
        let r = m_point_with(&saw(), &pert, 1.0, 3, &settings);
        assert!(matches!(r, Err(Error::QuadratureTooLarge { .. })), "{r:?}");
    }

    #[test]
    fn point_source_first_kick_fgr() {
        let hbar = TWO_PI / 4096.0;
        let k_e = PI.powi(4) / 90.0;
        let pert = PerturbationSpec::from_sigma(PerturbationFamily::Monomial(2), 0.3, hbar).unwrap();
        let r0s: Vec<f64> = (0..64).map(|k| TWO_PI * (k as f64 + 0.37) / 64.0).collect();
        for t in [1usize, 4, 10] {
            let m: f64 = r0s
                .iter()
                .map(|&r0| m_point(&saw(), &pert, r0, t).unwrap().norm_sqr())
                .sum::<f64>()
                / r0s.len() as f64;
            let want = fgr_m(k_e, 0.3, t as f64);
            assert!((m.ln() / want.ln() - 1.0).abs() < 0.2, "t={t}: {m} vs {want}");
        }
    }

    #[test]
    fn short_time_edges() {
        assert_eq!(short_time_m(0.0, 0.1, 5.0), 1.0);
        assert_eq!(short_time_m(3.0, 0.1, 0.0), 1.0);
    }

    #[test]
    fn double_exponential_form() {
        let lam = crate::classical::lyapunov_closed_form(1.0).unwrap();
        let pts: Vec<(f64, f64)> = (1..8)
            .map(|t| {
                let kp = 0.3 * (lam * t as f64).exp();
                (t as f64, (-short_time_m(kp, 0.01, 2.0).ln()).ln())
            })
            .collect();
        for w in pts.windows(2) {
            assert!(((w[1].1 - w[0].1) - 2.0 * lam).abs() < 1e-9);
        }
    }

    #[test]
    fn time_scales_at_large_dimension() {
        let hbar = TWO_PI / 131072.0;
        let lam = crate::classical::lyapunov_closed_form(1.0).unwrap();
        let w_p = window_width(hbar, hbar.sqrt(), 1.9);
        let t2 = tau2_estimate(lam, 0.45, w_p).unwrap();
        assert!((t2 - 6.5).abs() < 0.2, "{t2}");
        let t1 = tau1_estimate(lam, TWO_PI / 100.0, 5.0, 1.0, w_p).unwrap();
        assert!((t1.value - 1.0).abs() < 0.1, "{t1:?}");
        assert!(t1.value <= t2);
        // halving hbar at xi = sqrt(hbar) adds ln(sqrt 2) / lambda
        let w_half = window_width(hbar / 2.0, (hbar / 2.0).sqrt(), 1.9);
        let t2h = tau2_estimate(lam, 0.45, w_half).unwrap();
        assert!((t2h - t2 - 2f64.sqrt().ln() / lam).abs() < 1e-12);
        assert!(tau2_estimate(lam, 0.45, PI / 0.45).is_err());
        let small = tau1_estimate(lam, 0.01, 5.0, 1.0, 0.1).unwrap();
        assert!(small.at_most_one && small.value < 1.0);
        let ehrenfest = |h: f64| tau1_estimate(lam, 0.1, 5.0, 1.0, h.sqrt()).unwrap().value;
        let slope = (ehrenfest(1e-8) - ehrenfest(1e-6)) / (1e8f64.ln() - 1e6f64.ln());
        assert!((slope - 0.5 / lam).abs() < 1e-12);
    }

    #[test]
    fn predictor_limits() {
        assert_eq!(fgr_m(1.08, 0.0, 5.0), 1.0);
        assert_eq!(fgr_m(1.08, 0.5, 0.0), 1.0);
        assert_eq!(perturbative_m(1.08, 0.0, 5.0, 512), 1.0);
        let k_e = PI.powi(4) / 90.0;
        assert!((2.0 * k_e - 2.16).abs() < 0.01);
        let sp = perturbative_border(k_e, 512).unwrap();
        assert!((sp - 0.075).abs() < 0.001, "{sp}");
        assert!(perturbative_border(k_e, 1024).unwrap() < sp);
        // exponents cross at t = N / 2
        let n = 512;
        let t = n as f64 / 2.0;
        assert!((fgr_m(k_e, 0.03, t).ln() - perturbative_m(k_e, 0.03, t, n).ln()).abs() < 1e-12);
    }

    #[test]
    fn mean_value_limits() {
        assert!((mean_value_m(&[0.7; 10], 3.0) - 1.0).abs() < 1e-12);
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(1);
        let k_e = 1.08;
        let (t, sigma) = (3.0f64, 0.4);
        let sd = (2.0 * k_e * t).sqrt();
        let samples: Vec<f64> = (0..200_000)
            .map(|_| {
                let u: f64 = rng.random::<f64>().max(1e-300);
                let v: f64 = rng.random();
                sd * (-2.0 * u.ln()).sqrt() * (TWO_PI * v).cos()
            })
            .collect();
        let got = mean_value_m(&samples, sigma);
        assert!((got - fgr_m(k_e, sigma, t)).abs() < 0.01, "{got}");
    }

    #[test]
    fn lambda_curves() {
        let lam = crate::classical::lyapunov_closed_form(1.0).unwrap();
        let c = lambda1_decay_curve(&saw(), 5, 32, 1);
        assert_eq!(c[0], 1.0);
        for (t, v) in c.iter().enumerate() {
            assert!((v - (-lam * t as f64).exp()).abs() < 1e-9 * v.max(1e-300) + 1e-15);
        }
        let std = MapSpec::standard(7.0).unwrap();
        let l1 = lambda1_decay_curve(&std, 6, 3000, 2);
        let l = lambda_decay_curve(&std, 6, 3000, 2);
        for t in 2..=6 {
            assert!(l1[t] > l[t]);
        }
    }

    #[test]
    fn single_stationary_point_sums() {
        let hbar = TWO_PI / 16384.0;
        let pert = PerturbationSpec::from_sigma(PerturbationFamily::Monomial(2), 1e5, hbar).unwrap();
        // packet centred on the first-kick stationary point, where r(1) = pi
        let p_star = crate::classical::wrap_angle(PI - 1.0 - (1.0 - PI));
        let packet = GaussianPacketSpec::with_kappa(1.0, p_star, 1.0, hbar).unwrap();
        let pts = packet_stationary_points(&saw(), &pert, &packet, 1).unwrap();
        assert_eq!(pts.len(), 1);
        let sp = stationary_phase_m(&saw(), &pert, &pts, &packet, 1).unwrap();
        let diag = diagonal_m(&saw(), &pert, &pts, &packet, 1).unwrap();
        assert!((sp.norm_sqr() - diag).abs() < 1e-12 * diag);
        let quad = m_sc2(&saw(), &pert, &packet, 1).unwrap();
        assert!((sp.norm_sqr() / quad.norm_sqr() - 1.0).abs() < 0.05, "{sp} {quad}");
        assert!((sp - quad).norm() / quad.norm() < 0.05);
        // the formula carries no action phase: the same points give the same sum
        let other = pert.with_epsilon(2.5e4 * hbar);
        assert_eq!(diagonal_m(&saw(), &other, &pts, &packet, 1).unwrap(), diag);
        // recomputed points carry dS'' proportional to eps
        let pts50 = packet_stationary_points(&saw(), &other, &packet, 1).unwrap();
        let d50 = diagonal_m(&saw(), &other, &pts50, &packet, 1).unwrap();
        assert!((d50 / diag - 4.0).abs() < 1e-9);
    }

    #[test]
    fn no_points_no_amplitude() {
        let pert = PerturbationSpec::from_sigma(PerturbationFamily::Monomial(2), 1.0, 0.01).unwrap();
        let packet = GaussianPacketSpec::new(1.0, 1.0, 0.1).unwrap();
        assert_eq!(stationary_phase_m(&saw(), &pert, &[], &packet, 2).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(diagonal_m(&saw(), &pert, &[], &packet, 2).unwrap(), 0.0);
    }

    #[test]
    fn single_linear_segment_is_exact() {
        let phase: Vec<f64> = (0..=100).map(|k| 0.3 * k as f64).collect();
        assert_eq!(chord_segments(&phase, 1e-9), vec![(0, 100)]);
        let bent: Vec<f64> = (0..=100).map(|k| (k as f64 / 10.0).powi(2)).collect();
        let segs = chord_segments(&bent, 0.1);
        assert!(segs.len() > 3);
        assert_eq!(segs[0].0, 0);
        assert_eq!(segs.last().unwrap().1, 100);
        for w in segs.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }
}
