//! First-order action differences along unperturbed orbits.
//!
//! For a perturbed kick `V_map + eps V`, the action difference accumulated
//! over `t` perturbed kicks is `dS = eps * sum_{n=1..t} V(r_n)`, where `r_n`
//! is the position after `n` steps of the unperturbed map started at
//! `(r0, p0)`. All momentum derivatives are propagated alongside the orbit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{wrap_angle, MapSpec, PhasePoint};
use crate::error::{Error, Result};
use crate::rng::{member_rng, Region};
use crate::TWO_PI;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "family", content = "order")]
pub enum PerturbationFamily {
    /// `V(r) = cos r`
    Cosine,
    /// `V(r) = -N_i (r - pi)^i`, `i` in `1..=5`
    Monomial(u8),
}

impl std::str::FromStr for PerturbationFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "cosine" || s == "cos" {
            return Ok(PerturbationFamily::Cosine);
        }
        let digits = s
            .strip_prefix("monomial")
            .or_else(|| s.strip_prefix('v'))
            .or_else(|| s.strip_prefix('i'))
            .unwrap_or(&s)
            .trim_start_matches(['-', '_', '(', '='])
            .trim_end_matches(')');
        match digits.parse::<u8>() {
            Ok(i @ 1..=5) => Ok(PerturbationFamily::Monomial(i)),
            _ => Err(Error::InvalidParameter(format!(
                "unknown perturbation family '{s}' (expected cosine or monomial order 1..5)"
            ))),
        }
    }
}

/// `N_1 .. N_5`: monomial coefficients giving every family the same
/// action diffusion constant.
pub fn standard_coefficients() -> [f64; 5] {
    [
        PI / 15f64.sqrt(),
        0.5,
        1.4f64.sqrt() / (3.0 * PI),
        5f64.sqrt() / (4.0 * PI * PI),
        2.2f64.sqrt() / (3.0 * PI.powi(3)),
    ]
}

/// Shape of a perturbing potential and its strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub family: PerturbationFamily,
    /// `N_i` for monomials, 1 for the cosine family.
    pub coefficient: f64,
    /// Classical strength.
    pub epsilon: f64,
    /// Quantum strength `epsilon / hbar`.
    pub sigma: f64,
    /// The `hbar` relating the two strengths.
    pub hbar: f64,
}

impl PerturbationSpec {
    fn build(family: PerturbationFamily, epsilon: f64, sigma: f64, hbar: f64) -> Result<Self> {
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(Error::InvalidParameter(format!("hbar must be positive, got {hbar}")));
        }
        if !epsilon.is_finite() || !sigma.is_finite() {
            return Err(Error::InvalidParameter("perturbation strength must be finite".into()));
        }
        let coefficient = match family {
            PerturbationFamily::Cosine => 1.0,
            PerturbationFamily::Monomial(i @ 1..=5) => standard_coefficients()[i as usize - 1],
            PerturbationFamily::Monomial(i) => {
                return Err(Error::InvalidParameter(format!(
                    "monomial order must be in 1..=5, got {i}"
                )))
            }
        };
        Ok(PerturbationSpec {
            family,
            coefficient,
            epsilon,
            sigma,
            hbar,
        })
    }

    pub fn from_sigma(family: PerturbationFamily, sigma: f64, hbar: f64) -> Result<Self> {
        Self::build(family, sigma * hbar, sigma, hbar)
    }

    pub fn from_epsilon(family: PerturbationFamily, epsilon: f64, hbar: f64) -> Result<Self> {
        Self::build(family, epsilon, epsilon / hbar, hbar)
    }

    /// Same shape, different coefficient.
    pub fn with_coefficient(mut self, coefficient: f64) -> Self {
        self.coefficient = coefficient;
        self
    }

    /// Same shape and `hbar`, classical strength scaled to `epsilon`.
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self.sigma = epsilon / self.hbar;
        self
    }

    /// `V(r)`, without the strength.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        match self.family {
            PerturbationFamily::Cosine => r.cos(),
            PerturbationFamily::Monomial(i) => -self.coefficient * (r - PI).powi(i as i32),
        }
    }

    /// `V'(r)`
    #[inline]
    pub fn slope(&self, r: f64) -> f64 {
        match self.family {
            PerturbationFamily::Cosine => -r.sin(),
            PerturbationFamily::Monomial(i) => {
                -self.coefficient * i as f64 * (r - PI).powi(i as i32 - 1)
            }
        }
    }

    /// `V''(r)`
    #[inline]
    pub fn curvature(&self, r: f64) -> f64 {
        match self.family {
            PerturbationFamily::Cosine => -r.cos(),
            PerturbationFamily::Monomial(1) => 0.0,
            PerturbationFamily::Monomial(i) => {
                -self.coefficient * (i as f64) * (i as f64 - 1.0) * (r - PI).powi(i as i32 - 2)
            }
        }
    }

    /// Phase-space mean of `V` under the uniform measure.
    pub fn mean_value(&self) -> f64 {
        match self.family {
            PerturbationFamily::Cosine => 0.0,
            PerturbationFamily::Monomial(i) if i % 2 == 1 => 0.0,
            PerturbationFamily::Monomial(i) => {
                -self.coefficient * PI.powi(i as i32) / (i as f64 + 1.0)
            }
        }
    }

    /// Whether `V` or `V'` jumps where the torus is cut at `r = 0`.
    pub fn has_branch_cut(&self) -> bool {
        matches!(self.family, PerturbationFamily::Monomial(_))
    }

    /// Short tag used in file names and metadata.
    pub fn tag(&self) -> String {
        match self.family {
            PerturbationFamily::Cosine => "cos".into(),
            PerturbationFamily::Monomial(i) => format!("v{i}"),
        }
    }
}

/// `C(0)` for `V = -N (r - pi)^i` under the uniform measure.
pub fn c0_closed_form(i: u8, n_i: f64) -> Result<f64> {
    if !(1..=5).contains(&i) {
        return Err(Error::InvalidParameter(format!(
            "monomial order must be in 1..=5, got {i}"
        )));
    }
    let fi = i as f64;
    let base = n_i * n_i * PI.powi(2 * i as i32) / (2.0 * fi + 1.0);
    Ok(if i % 2 == 1 {
        base
    } else {
        base * fi * fi / ((fi + 1.0) * (fi + 1.0))
    })
}

/// Orbit quantities and momentum derivatives after `t` kicks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionJet {
    /// Final point.
    pub end: PhasePoint,
    /// `dS / eps = sum_{n=1..t} V(r_n)`
    pub ds: f64,
    /// `d(dS/eps)/dp0`
    pub kp: f64,
    /// `d^2(dS/eps)/dp0^2`
    pub kpp: f64,
    /// `dr_t/dp0`
    pub r_p: f64,
    /// `dr_t/dr0`
    pub r_r: f64,
    /// `d^2 r_t/dp0^2`
    pub r_pp: f64,
}

impl ActionJet {
    /// `dp_s/dr0 = -(dr_t/dr0)/(dr_t/dp0)`
    pub fn dps_dr0(&self) -> Result<f64> {
        if self.r_p.abs() <= 1e-12 * self.r_r.abs().max(1.0) {
            return Err(Error::Caustic(self.r_p.abs()));
        }
        Ok(-self.r_r / self.r_p)
    }
}

/// Propagate the orbit of `(r0, p0)` and all derivatives needed downstream.
pub fn action_jet(map: &MapSpec, pert: &PerturbationSpec, p0: f64, r0: f64, t: usize) -> ActionJet {
    let (mut r, mut p) = (wrap_angle(r0), wrap_angle(p0));
    let (mut r_p, mut r_r, mut p_p, mut p_r) = (0.0, 1.0, 1.0, 0.0);
    let (mut r_pp, mut p_pp) = (0.0, 0.0);
    let (mut ds, mut kp, mut kpp) = (0.0, 0.0, 0.0);
    for _ in 0..t {
        let f1 = map.force_prime(r);
        let f2 = map.force_second(r);
        p = wrap_angle(p + map.force(r));
        p_pp += f2 * r_p * r_p + f1 * r_pp;
        p_p += f1 * r_p;
        p_r += f1 * r_r;
        r = wrap_angle(r + p);
        r_pp += p_pp;
        r_p += p_p;
        r_r += p_r;
        let v1 = pert.slope(r);
        ds += pert.value(r);
        kp += v1 * r_p;
        kpp += pert.curvature(r) * r_p * r_p + v1 * r_pp;
    }
    ActionJet {
        end: PhasePoint { r, p },
        ds,
        kp,
        kpp,
        r_p,
        r_r,
        r_pp,
    }
}

/// `dS/eps` only; the inner loop of every Monte Carlo estimate.
#[inline]
pub fn action_per_eps(map: &MapSpec, pert: &PerturbationSpec, x0: PhasePoint, t: usize) -> f64 {
    let mut x = x0;
    let mut s = 0.0;
    for _ in 0..t {
        x = map.step(x);
        s += pert.value(x.r);
    }
    s
}

/// `dS(p0, r0; t)` including the strength `eps`.
pub fn delta_action(map: &MapSpec, pert: &PerturbationSpec, p0: f64, r0: f64, t: usize) -> f64 {
    pert.epsilon * action_per_eps(map, pert, PhasePoint::new(r0, p0), t)
}

/// Half-width of the stencil used to detect branch-cut crossings.
pub const STENCIL_STEP: f64 = 1e-7;

/// First kick at which orbits started at `p0 - h` and `p0 + h` land on
/// opposite sides of the cut at `r = 0`, if any.
pub fn stencil_crossing(map: &MapSpec, p0: f64, r0: f64, t: usize, h: f64) -> Option<usize> {
    let mut a = PhasePoint::new(r0, p0 - h);
    let mut b = PhasePoint::new(r0, p0 + h);
    for n in 1..=t {
        a = map.step(a);
        b = map.step(b);
        if (a.r - b.r).abs() > PI {
            return Some(n);
        }
    }
    None
}

fn check_stencil(map: &MapSpec, pert: &PerturbationSpec, p0: f64, r0: f64, t: usize) -> Result<()> {
    if map.has_branch_cut() || pert.has_branch_cut() {
        if let Some(kick) = stencil_crossing(map, p0, r0, t, STENCIL_STEP) {
            return Err(Error::Discontinuity { kick });
        }
    }
    Ok(())
}

/// `k_p = d(dS/eps)/dp0` from tangent propagation.
pub fn slope_kp(map: &MapSpec, pert: &PerturbationSpec, p0: f64, r0: f64, t: usize) -> Result<f64> {
    check_stencil(map, pert, p0, r0, t)?;
    Ok(action_jet(map, pert, p0, r0, t).kp)
}

/// `d^2 dS/dp0^2` including the strength `eps`.
pub fn second_derivative(
    map: &MapSpec,
    pert: &PerturbationSpec,
    p0: f64,
    r0: f64,
    t: usize,
) -> Result<f64> {
    check_stencil(map, pert, p0, r0, t)?;
    Ok(pert.epsilon * action_jet(map, pert, p0, r0, t).kpp)
}

/// Derivative of the initial momentum with respect to the initial position
/// at fixed final position.
pub fn dps_dr0(map: &MapSpec, p0: f64, r0: f64, t: usize) -> Result<f64> {
    let m = crate::classical::monodromy(map, PhasePoint::new(r0, p0), t).matrix();
    if m.dr_dp().abs() <= 1e-12 * m.dr_dr().abs().max(1.0) {
        return Err(Error::Caustic(m.dr_dp().abs()));
    }
    Ok(-m.dr_dr() / m.dr_dp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryPoint {
    pub p0_alpha: f64,
    /// `dS` at the point, including `eps`.
    pub ds_alpha: f64,
    /// `dS''` at the point, including `eps`.
    pub ds2_alpha: f64,
    /// `|dS''|` fell below the degeneracy threshold.
    pub degenerate: bool,
}

/// Grid resolution used by [`find_stationary_points`].
pub fn stationary_scan_points(map: &MapSpec, pert: &PerturbationSpec, r0: f64, t: usize, width: f64) -> usize {
    let coarse = 512;
    let max_rp = (0..coarse)
        .map(|k| action_jet(map, pert, TWO_PI * k as f64 / coarse as f64, r0, t).r_p.abs())
        .fold(1.0f64, f64::max);
    let per_turn = (64.0 * max_rp).max(1024.0);
    ((per_turn * width / TWO_PI).ceil() as usize).clamp(64, 1 << 22)
}

/// All zeros of `k_p` in `[lo, hi)`, excluding jumps across branch cuts.
pub fn find_stationary_points(
    map: &MapSpec,
    pert: &PerturbationSpec,
    r0: f64,
    t: usize,
    window: (f64, f64),
) -> Result<Vec<StationaryPoint>> {
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite() && lo < hi && hi - lo <= TWO_PI + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "stationary-point window [{lo}, {hi}) must be a non-empty interval of length <= 2pi"
        )));
    }
    if t == 0 {
        return Ok(Vec::new());
    }
    let n = stationary_scan_points(map, pert, r0, t, hi - lo);
    let dp = (hi - lo) / n as f64;
    let cuts = map.has_branch_cut() || pert.has_branch_cut();

    let orbit = |p0: f64| -> Vec<f64> {
        let mut x = PhasePoint::new(r0, p0);
        let mut rs = Vec::with_capacity(t);
        for _ in 0..t {
            x = map.step(x);
            rs.push(x.r);
        }
        rs
    };
    let crosses = |a: &[f64], b: &[f64]| a.iter().zip(b).any(|(x, y)| (x - y).abs() > PI);

    let mut brackets = Vec::new();
    let mut prev_p = lo;
    let mut prev_k = action_jet(map, pert, lo, r0, t).kp;
    let mut prev_orbit = if cuts { orbit(lo) } else { Vec::new() };
    let mut max_kpp = 0.0f64;
    for k in 1..=n {
        let p = lo + dp * k as f64;
        let jet = action_jet(map, pert, p, r0, t);
        max_kpp = max_kpp.max(jet.kpp.abs());
        let cur_orbit = if cuts { orbit(p) } else { Vec::new() };
        let clean = !cuts || !crosses(&prev_orbit, &cur_orbit);
        if clean && prev_k != 0.0 && (prev_k < 0.0) != (jet.kp < 0.0) {
            brackets.push((prev_p, p, prev_k));
        } else if clean && prev_k == 0.0 && k > 1 {
            brackets.push((prev_p, prev_p, 0.0));
        }
        prev_p = p;
        prev_k = jet.kp;
        prev_orbit = cur_orbit;
    }

    let threshold = 1e-8 * pert.epsilon.abs() * max_kpp.clamp(1.0, 1e300);
    let mut out = Vec::with_capacity(brackets.len());
    for (mut a, mut b, ka) in brackets {
        if a != b {
            let sa = ka < 0.0;
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let km = action_jet(map, pert, m, r0, t).kp;
                if km == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if (km < 0.0) == sa {
                    a = m;
                } else {
                    b = m;
                }
            }
        }
        let root = 0.5 * (a + b);
        let jet = action_jet(map, pert, root, r0, t);
        let ds2 = pert.epsilon * jet.kpp;
        out.push(StationaryPoint {
            p0_alpha: root,
            ds_alpha: pert.epsilon * jet.ds,
            ds2_alpha: ds2,
            degenerate: ds2.abs() < threshold,
        });
    }
    Ok(out)
}

/// Number of sign changes of `k_p` on a uniform `n`-point grid over the
/// full momentum circle, counting jumps across branch cuts as well.
pub fn kp_sign_changes(map: &MapSpec, pert: &PerturbationSpec, r0: f64, t: usize, n: usize) -> usize {
    let mut count = 0;
    let mut prev = action_jet(map, pert, 0.0, r0, t).kp;
    for k in 1..=n {
        let kp = action_jet(map, pert, TWO_PI * k as f64 / n as f64, r0, t).kp;
        if (prev < 0.0) != (kp < 0.0) {
            count += 1;
        }
        prev = kp;
    }
    count
}

/// `dS/eps` sampled on a momentum grid at fixed initial position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCurve {
    pub r0: f64,
    pub t: usize,
    pub p0: Vec<f64>,
    pub ds_over_eps: Vec<f64>,
}

pub fn action_curve(
    map: &MapSpec,
    pert: &PerturbationSpec,
    r0: f64,
    t: usize,
    window: (f64, f64),
    points: usize,
) -> Result<ActionCurve> {
    let (lo, hi) = window;
    if points < 2 || !(lo < hi) {
        return Err(Error::InvalidParameter(
            "action curve needs at least two points on a non-empty window".into(),
        ));
    }
    let p0: Vec<f64> = (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / points as f64)
        .collect();
    let ds_over_eps = p0
        .iter()
        .map(|&p| action_per_eps(map, pert, PhasePoint::new(r0, p), t))
        .collect();
    Ok(ActionCurve {
        r0,
        t,
        p0,
        ds_over_eps,
    })
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
    pub samples: usize,
}

const CHUNK: usize = 1 << 14;

/// Chunked, thread-count independent accumulation of per-sample vectors.
fn sample_moments<F>(n: usize, seed: u64, width: usize, region: Region, f: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(PhasePoint, &mut [f64]) + Sync,
{
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = member_rng(seed, c as u64);
            let mut sum = vec![0.0; width];
            let mut sq = vec![0.0; width];
            let mut buf = vec![0.0; width];
            for _ in (c * CHUNK)..((c + 1) * CHUNK).min(n) {
                f(region.sample(&mut rng), &mut buf);
                for k in 0..width {
                    sum[k] += buf[k];
                    sq[k] += buf[k] * buf[k];
                }
            }
            (sum, sq)
        })
        .collect();
    let mut sum = vec![0.0; width];
    let mut sq = vec![0.0; width];
    for (s, q) in &parts {
        for k in 0..width {
            sum[k] += s[k];
            sq[k] += q[k];
        }
    }
    (sum, sq)
}

fn to_estimate(sum: f64, sq: f64, n: usize) -> Estimate {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sq / nf - mean * mean) * nf / (nf - 1.0).max(1.0)).max(0.0);
    Estimate {
        value: mean,
        std_err: (var / nf).sqrt(),
        samples: n,
    }
}

/// `C(l)` for `l = 0..=l_max` from one uniform ensemble.
pub fn autocorrelations(
    map: &MapSpec,
    pert: &PerturbationSpec,
    l_max: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    if samples < 2 {
        return Err(Error::InvalidParameter("autocorrelation needs at least 2 samples".into()));
    }
    let mean = pert.mean_value();
    let (sum, sq) = sample_moments(samples, seed, l_max + 1, Region::FULL, |x0, out| {
        let v0 = pert.value(x0.r) - mean;
        let mut x = x0;
        out[0] = v0 * v0;
        for slot in out.iter_mut().skip(1) {
            x = map.step(x);
            *slot = v0 * (pert.value(x.r) - mean);
        }
    });
    Ok((0..=l_max).map(|l| to_estimate(sum[l], sq[l], samples)).collect())
}

/// `C(l)`: correlation of `V` along orbits `l` kicks apart.
pub fn autocorrelation(
    map: &MapSpec,
    pert: &PerturbationSpec,
    l: usize,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    Ok(autocorrelations(map, pert, l, samples, seed)?[l])
}

/// `K(E) = C(0)/2 + sum_{l=1..l_max} C(l)`, estimated per sample so the
/// standard error accounts for correlations between the terms.
pub fn diffusion_constant(
    map: &MapSpec,
    pert: &PerturbationSpec,
    l_max: usize,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if samples < 2 {
        return Err(Error::InvalidParameter("diffusion constant needs at least 2 samples".into()));
    }
    let mean = pert.mean_value();
    let (sum, sq) = sample_moments(samples, seed, 1, Region::FULL, |x0, out| {
        let v0 = pert.value(x0.r) - mean;
        let mut x = x0;
        let mut acc = 0.5 * v0;
        for _ in 0..l_max {
            x = map.step(x);
            acc += pert.value(x.r) - mean;
        }
        out[0] = v0 * acc;
    });
    Ok(to_estimate(sum[0], sq[0], samples))
}

/// `dS` (including `eps`) at `n` uniform points of `region`.
pub fn action_samples_in(
    map: &MapSpec,
    pert: &PerturbationSpec,
    t: usize,
    n: usize,
    seed: u64,
    region: Region,
) -> Vec<f64> {
    let eps = pert.epsilon;
    let parts: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = member_rng(seed, c as u64);
            ((c * CHUNK)..((c + 1) * CHUNK).min(n))
                .map(|_| eps * action_per_eps(map, pert, region.sample(&mut rng), t))
                .collect()
        })
        .collect();
    parts.concat()
}

/// `dS` (including `eps`) at `n` uniform points of the torus.
pub fn action_samples(map: &MapSpec, pert: &PerturbationSpec, t: usize, n: usize, seed: u64) -> Vec<f64> {
    action_samples_in(map, pert, t, n, seed, Region::FULL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn saw() -> MapSpec {
        MapSpec::sawtooth(1.0).unwrap()
    }

    fn mono(i: u8, eps: f64) -> PerturbationSpec {
        PerturbationSpec::from_epsilon(PerturbationFamily::Monomial(i), eps, 0.01).unwrap()
    }

    #[test]
    fn potential_values() {
        assert_eq!(mono(2, 1.0).value(PI), 0.0);
        let cos = PerturbationSpec::from_sigma(PerturbationFamily::Cosine, 1.0, 0.1).unwrap();
        assert_eq!(cos.value(0.0), 1.0);
        let v3 = mono(3, 1.0).value(PI + 1.0);
        assert!((v3 + 1.4f64.sqrt() / (3.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn coefficient_table() {
        let n = standard_coefficients();
        assert!((n[0] - 0.811156).abs() < 1e-6);
        assert!((n[2] - 0.125544).abs() < 1e-6);
        let target = PI.powi(4) / 45.0;
        for i in 1..=5u8 {
            let c = c0_closed_form(i, n[i as usize - 1]).unwrap();
            assert!((c - target).abs() < 1e-12 * target, "i={i}: {c}");
        }
        assert!(c0_closed_form(0, 1.0).is_err());
        assert!(c0_closed_form(6, 1.0).is_err());
    }

    #[test]
    fn sigma_epsilon_relation() {
        let p = PerturbationSpec::from_sigma(PerturbationFamily::Cosine, 7.0, 0.003).unwrap();
        assert!((p.sigma * p.hbar - p.epsilon).abs() < 1e-14);
        let q = p.with_epsilon(0.5);
        assert!((q.sigma * q.hbar - q.epsilon).abs() < 1e-14);
        assert!(PerturbationSpec::from_sigma(PerturbationFamily::Monomial(6), 1.0, 0.1).is_err());
    }

    #[test]
    fn family_parsing() {
        assert_eq!("cosine".parse::<PerturbationFamily>().unwrap(), PerturbationFamily::Cosine);
        assert_eq!("v3".parse::<PerturbationFamily>().unwrap(), PerturbationFamily::Monomial(3));
        assert_eq!("monomial-2".parse::<PerturbationFamily>().unwrap(), PerturbationFamily::Monomial(2));
        assert_eq!("5".parse::<PerturbationFamily>().unwrap(), PerturbationFamily::Monomial(5));
        assert!("v9".parse::<PerturbationFamily>().is_err());
    }

    #[test]
    fn zero_strength_and_fixed_point() {
        assert_eq!(delta_action(&saw(), &mono(2, 0.0), 1.0, 2.0, 5), 0.0);
        for t in 1..10 {
            assert_eq!(delta_action(&saw(), &mono(2, 0.3), 0.0, PI, t), 0.0);
            assert_eq!(slope_kp(&saw(), &mono(2, 0.3), 0.0, PI, t).unwrap(), 0.0);
        }
        assert_eq!(second_derivative(&saw(), &mono(2, 0.0), 1.1, 2.0, 3).unwrap(), 0.0);
    }

    #[test]
    fn slope_matches_finite_difference() {
        let map = MapSpec::standard(3.0).unwrap();
        let pert = PerturbationSpec::from_epsilon(PerturbationFamily::Cosine, 1.0, 0.1).unwrap();
        let (p0, r0, h) = (0.731, 2.113, 1e-7);
        for t in 1..=5 {
            let kp = slope_kp(&map, &pert, p0, r0, t).unwrap();
            let fd = (delta_action(&map, &pert, p0 + h, r0, t) - delta_action(&map, &pert, p0 - h, r0, t))
                / (2.0 * h);
            assert!((kp - fd).abs() / kp.abs().max(1.0) < 1e-4, "t={t}: {kp} vs {fd}");
        }
    }

    #[test]
    fn second_derivative_matches_five_point() {
        let map = MapSpec::standard(2.5).unwrap();
        let pert = PerturbationSpec::from_epsilon(PerturbationFamily::Cosine, 0.7, 0.1).unwrap();
        let (p0, r0) = (1.37, 0.42);
        for t in 1..=4 {
            let h = 1e-3 / (2.5f64).powi(t as i32);
            let f = |d: f64| delta_action(&map, &pert, p0 + d, r0, t);
            let fd = (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h);
            let an = second_derivative(&map, &pert, p0, r0, t).unwrap();
            assert!((an - fd).abs() / an.abs().max(1.0) < 1e-3, "t={t}: {an} vs {fd}");
        }
    }

    #[test]
    fn sawtooth_monomial_slope_matches_fd_away_from_cuts() {
        let pert = mono(4, 1.0);
        let (p0, r0) = (2.2, 2.9);
        for t in 1..=4 {
            match slope_kp(&saw(), &pert, p0, r0, t) {
                Ok(kp) => {
                    let h = 1e-7;
                    let fd = (delta_action(&saw(), &pert, p0 + h, r0, t)
                        - delta_action(&saw(), &pert, p0 - h, r0, t))
                        / (2.0 * h);
                    assert!((kp - fd).abs() / kp.abs().max(1.0) < 1e-4);
                }
                Err(Error::Discontinuity { .. }) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn discontinuity_is_flagged() {
        // r(1) = r0 + p0 + (r0 - pi) crosses 2pi at p0 = 2pi + pi - 2 r0
        let r0 = 2.0;
        let p0 = wrap_angle(3.0 * PI - 2.0 * r0);
        assert_eq!(
            slope_kp(&saw(), &mono(2, 1.0), p0, r0, 1),
            Err(Error::Discontinuity { kick: 1 })
        );
    }

    #[test]
    fn dps_dr0_values() {
        assert!((dps_dr0(&saw(), 0.4, 1.9, 1).unwrap() + 2.0).abs() < 1e-14);
        // ratio of consecutive Fibonacci-like entries approaches the unstable slope
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        let d6 = dps_dr0(&saw(), 0.4, 1.9, 6).unwrap();
        assert!((d6.abs() - golden).abs() / golden < 0.01, "{d6}");
    }

    #[test]
    fn dps_dr0_matches_shooting() {
        let map = MapSpec::standard(1.7).unwrap();
        let (p0, r0) = (0.9, 1.3);
        for t in 1..=3 {
            let target = evolve_r(&map, p0, r0, t);
            let h = 1e-6;
            let shoot = |r0s: f64| {
                let mut p = p0;
                for _ in 0..50 {
                    let jet = action_jet(&map, &mono(2, 1.0), p, r0s, t);
                    let mut d = jet.end.r - target;
                    d -= TWO_PI * (d / TWO_PI).round();
                    p -= d / jet.r_p;
                }
                p
            };
            let fd = (shoot(r0 + h) - shoot(r0 - h)) / (2.0 * h);
            let an = dps_dr0(&map, p0, r0, t).unwrap();
            assert!((an - fd).abs() / an.abs().max(1e-3) < 1e-3, "t={t}: {an} vs {fd}");
        }
    }

    fn evolve_r(map: &MapSpec, p0: f64, r0: f64, t: usize) -> f64 {
        crate::classical::evolve(map, PhasePoint::new(r0, p0), t)[t].r
    }

    #[test]
    fn caustic_reported() {
        let map = MapSpec::standard(1.0).unwrap();
        assert!(matches!(dps_dr0(&map, 0.0, 0.0, 0), Err(Error::Caustic(_))));
    }

    #[test]
    fn odd_monomials_have_no_stationary_points() {
        for i in [3u8, 5] {
            for t in 1..=3 {
                for r0 in [0.3, 1.7, 4.0] {
                    let pts = find_stationary_points(&saw(), &mono(i, 1.0), r0, t, (0.0, TWO_PI)).unwrap();
                    assert!(pts.is_empty(), "i={i} t={t} r0={r0}: {pts:?}");
                }
            }
        }
    }

    #[test]
    fn first_kick_stationary_point() {
        let r0 = 1.234;
        let pts = find_stationary_points(&saw(), &mono(2, 0.5), r0, 1, (0.0, TWO_PI)).unwrap();
        assert_eq!(pts.len(), 1, "{pts:?}");
        let want = wrap_angle(PI - r0 - (r0 - PI));
        assert!((pts[0].p0_alpha - want).abs() < 1e-10);
        assert!(!pts[0].degenerate);
        // V'' = -2 N2 = -1 and (dr1/dp0)^2 = 1
        assert!((pts[0].ds2_alpha + 0.5).abs() < 1e-12);
    }

    #[test]
    fn stationary_points_are_roots() {
        let map = MapSpec::standard(4.0).unwrap();
        let pert = PerturbationSpec::from_epsilon(PerturbationFamily::Cosine, 1.0, 0.1).unwrap();
        let pts = find_stationary_points(&map, &pert, 0.8, 3, (0.0, TWO_PI)).unwrap();
        assert!(pts.len() >= 2);
        let scale = (0..256)
            .map(|k| action_jet(&map, &pert, TWO_PI * k as f64 / 256.0, 0.8, 3).kp.abs())
            .fold(0.0, f64::max);
        for p in &pts {
            let kp = action_jet(&map, &pert, p.p0_alpha, 0.8, 3).kp;
            assert!(kp.abs() < 1e-10 * scale, "{kp}");
        }
    }

    #[test]
    fn uniform_mean_of_v2() {
        let s = action_samples(&saw(), &mono(2, 1.0), 1, 400_000, 3);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean + PI * PI / 6.0).abs() < 1e-2, "{mean}");
        assert!((mono(2, 1.0).mean_value() + PI * PI / 6.0).abs() < 1e-14);
    }

    #[test]
    fn action_samples_are_linear_in_eps() {
        let a = action_samples(&saw(), &mono(3, 0.25), 4, 1000, 8);
        let b = action_samples(&saw(), &mono(3, 0.5), 4, 1000, 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn sawtooth_correlations_vanish() {
        let pert = mono(2, 1.0);
        let c = autocorrelations(&saw(), &pert, 4, 200_000, 5).unwrap();
        let c0 = PI.powi(4) / 45.0;
        assert!((c[0].value - c0).abs() < 4.0 * c[0].std_err, "{:?}", c[0]);
        for e in &c[1..] {
            assert!(e.value.abs() < 4.0 * e.std_err, "{e:?}");
        }
        let k = diffusion_constant(&saw(), &pert, 4, 200_000, 5).unwrap();
        assert!((k.value - PI.powi(4) / 90.0).abs() / (PI.powi(4) / 90.0) < 0.02);
    }

    #[test]
    fn diffusion_ignores_strength() {
        let a = diffusion_constant(&saw(), &mono(2, 1e-3), 2, 10_000, 1).unwrap();
        let b = diffusion_constant(&saw(), &mono(2, 1e-1), 2, 10_000, 1).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn kp_matches_fd_standard(p0 in 0.0f64..TWO_PI, r0 in 0.0f64..TWO_PI, t in 1usize..4) {
            let map = MapSpec::standard(2.0).unwrap();
            let pert = PerturbationSpec::from_epsilon(PerturbationFamily::Cosine, 1.0, 0.1).unwrap();
            let h = 1e-6;
            let kp = action_jet(&map, &pert, p0, r0, t).kp;
            let fd = (action_per_eps(&map, &pert, PhasePoint::new(r0, p0 + h), t)
                - action_per_eps(&map, &pert, PhasePoint::new(r0, p0 - h), t)) / (2.0 * h);
            prop_assert!((kp - fd).abs() < 1e-4 * kp.abs().max(1.0));
        }

        #[test]
        fn c0_nonnegative(i in 1u8..6, n in 0.0f64..3.0) {
            prop_assert!(c0_closed_form(i, n).unwrap() >= 0.0);
        }
    }
}
