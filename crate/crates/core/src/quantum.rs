//! Torus quantization, Floquet propagation and exact fidelity curves.
//!
//! Positions `r_j = 2 pi j / N` and momenta `p_k = 2 pi k / N` share one
//! grid with `hbar = 2 pi / N`. One Floquet period is a kick
//! `exp(-i V(r) / hbar)` followed by a free drift `exp(-i p^2 / 2 hbar)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::action::PerturbationSpec;
use crate::classical::{wrap_angle, MapSpec};
use crate::error::{Error, Result};
use crate::{Complex64, TWO_PI};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumDims {
    pub n: usize,
    pub hbar: f64,
}

impl QuantumDims {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::OddDimension(n));
        }
        Ok(QuantumDims {
            n,
            hbar: TWO_PI / n as f64,
        })
    }

    /// `r_j = 2 pi j / N`
    #[inline]
    pub fn position(&self, j: usize) -> f64 {
        TWO_PI * j as f64 / self.n as f64
    }

    /// Grid spacing in either coordinate, equal to `hbar`.
    pub fn spacing(&self) -> f64 {
        self.hbar
    }
}

/// Amplitudes in the position representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveFunction {
    pub amps: Vec<Complex64>,
}

impl WaveFunction {
    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) {
        let s = 1.0 / self.norm_sqr().sqrt();
        for a in &mut self.amps {
            *a *= s;
        }
    }

    /// `<self | other>`
    pub fn overlap(&self, other: &WaveFunction) -> Complex64 {
        overlap(&self.amps, &other.amps)
    }

    /// Circular mean of the position distribution.
    pub fn mean_position(&self) -> f64 {
        let n = self.amps.len() as f64;
        let z: Complex64 = self
            .amps
            .iter()
            .enumerate()
            .map(|(j, a)| Complex64::from_polar(a.norm_sqr(), TWO_PI * j as f64 / n))
            .sum();
        wrap_angle(z.arg())
    }

    /// Amplitudes in the momentum basis, unitary normalisation.
    pub fn momentum_amplitudes(&self) -> Vec<Complex64> {
        let n = self.amps.len();
        let mut buf = self.amps.clone();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let s = 1.0 / (n as f64).sqrt();
        for a in &mut buf {
            *a *= s;
        }
        buf
    }
}

/// `sum conj(a) b`
pub fn overlap(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPacketSpec {
    pub r0: f64,
    pub p0: f64,
    pub xi: f64,
}

impl GaussianPacketSpec {
    pub fn new(r0: f64, p0: f64, xi: f64) -> Result<Self> {
        if !(xi.is_finite() && xi > 0.0) {
            return Err(Error::InvalidParameter(format!("packet width must be positive, got {xi}")));
        }
        Ok(GaussianPacketSpec {
            r0: wrap_angle(r0),
            p0: wrap_angle(p0),
            xi,
        })
    }

    /// Packet of width `sqrt(hbar / kappa)`.
    pub fn with_kappa(r0: f64, p0: f64, kappa: f64, hbar: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        Self::new(r0, p0, (hbar / kappa).sqrt())
    }

    /// `kappa = hbar / xi^2`
    pub fn kappa(&self, hbar: f64) -> f64 {
        hbar / (self.xi * self.xi)
    }

    /// Periodic images overlap strongly.
    pub fn is_too_wide(&self) -> bool {
        self.xi > TWO_PI / 6.0
    }
}

/// Periodicised Gaussian `sum_m exp[i p0 x / hbar - (x - r0)^2 / 2 xi^2]`,
/// `x = r_j + 2 pi m`, normalised on the grid.
pub fn prepare_gaussian(dims: &QuantumDims, spec: &GaussianPacketSpec) -> Result<WaveFunction> {
    if spec.xi < dims.spacing() {
        return Err(Error::PacketTooNarrow {
            xi: spec.xi,
            spacing: dims.spacing(),
        });
    }
    // images beyond this many periods contribute below 1e-16 relative amplitude
    let reach = (2.0 * 16.0 * std::f64::consts::LN_10).sqrt() * spec.xi;
    let images = (reach / TWO_PI).ceil() as i64 + 1;
    let two_xi2 = 2.0 * spec.xi * spec.xi;
    let mut amps: Vec<Complex64> = (0..dims.n)
        .map(|j| {
            let rj = dims.position(j);
            let mut acc = Complex64::new(0.0, 0.0);
            for m in -images..=images {
                let x = rj + TWO_PI * m as f64;
                let d = x - spec.r0;
                let env = -d * d / two_xi2;
                if env < -37.0 * std::f64::consts::LN_10 {
                    continue;
                }
                acc += Complex64::from_polar(env.exp(), spec.p0 * x / dims.hbar);
            }
            acc
        })
        .collect();
    let s = 1.0 / amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    for a in &mut amps {
        *a *= s;
    }
    Ok(WaveFunction { amps })
}

/// `|j0>`
pub fn prepare_point_source(dims: &QuantumDims, j0: usize) -> Result<WaveFunction> {
    if j0 >= dims.n {
        return Err(Error::InvalidParameter(format!(
            "point source index {j0} outside 0..{}",
            dims.n
        )));
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); dims.n];
    amps[j0] = Complex64::new(1.0, 0.0);
    Ok(WaveFunction { amps })
}

/// Full kick potential: map potential plus optional perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KickPotential {
    pub map: MapSpec,
    pub pert: Option<PerturbationSpec>,
}

impl KickPotential {
    pub fn unperturbed(map: MapSpec) -> Self {
        KickPotential { map, pert: None }
    }

    pub fn perturbed(map: MapSpec, pert: PerturbationSpec) -> Self {
        KickPotential {
            map,
            pert: Some(pert),
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        let v = self.map.potential(r);
        match &self.pert {
            Some(p) => v + p.epsilon * p.value(r),
            None => v,
        }
    }

    pub fn on_grid(&self, dims: &QuantumDims) -> Vec<f64> {
        (0..dims.n).map(|j| self.value(dims.position(j))).collect()
    }

    /// `exp(-i V(r_j) / hbar)`
    pub fn phases(&self, dims: &QuantumDims) -> Vec<Complex64> {
        kick_phases(dims, &self.on_grid(dims))
    }
}

pub fn kick_phases(dims: &QuantumDims, potential: &[f64]) -> Vec<Complex64> {
    potential
        .iter()
        .map(|&v| Complex64::from_polar(1.0, -(v / dims.hbar).rem_euclid(TWO_PI)))
        .collect()
}

/// `exp(-i pi k^2 / N)` for `k = 0..N`; exact in integer arithmetic.
pub fn kinetic_phases(dims: &QuantumDims) -> Vec<Complex64> {
    let n = dims.n as u64;
    let two_n = 2 * n;
    (0..n)
        .map(|k| {
            let q = (k * k) % two_n;
            Complex64::from_polar(1.0, -PI * q as f64 / n as f64)
        })
        .collect()
}

/// Dense Floquet matrix, row-major:
/// `U[j'][j] = N^{-1/2} exp[i pi (j' - j)^2 / N - i V(r_j) / hbar - i pi / 4]`.
pub fn build_floquet_dense(dims: &QuantumDims, potential: &[f64]) -> Result<Vec<Complex64>> {
    let n = dims.n;
    if potential.len() != n {
        return Err(Error::InvalidParameter("potential length must equal N".into()));
    }
    if n > 4096 {
        return Err(Error::InvalidParameter(format!(
            "dense Floquet matrix limited to N <= 4096, got {n}"
        )));
    }
    let kick = kick_phases(dims, potential);
    let norm = 1.0 / (n as f64).sqrt();
    let two_n = 2 * n as i64;
    let mut u = vec![Complex64::new(0.0, 0.0); n * n];
    for jp in 0..n {
        for j in 0..n {
            let d = jp as i64 - j as i64;
            let q = (d * d).rem_euclid(two_n);
            let free = Complex64::from_polar(norm, PI * q as f64 / n as f64 - PI / 4.0);
            u[jp * n + j] = free * kick[j];
        }
    }
    Ok(u)
}

/// `y = U x` for a row-major square matrix.
pub fn dense_apply(u: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|i| u[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Split-step propagator for one kick potential.
#[derive(Clone)]
pub struct FloquetFft {
    n: usize,
    kick: Vec<Complex64>,
    /// kinetic phase with the `1/N` of the inverse transform folded in
    drift: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl FloquetFft {
    pub fn new(dims: &QuantumDims, potential: &[f64]) -> Result<Self> {
        if potential.len() != dims.n {
            return Err(Error::InvalidParameter("potential length must equal N".into()));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(dims.n);
        let inverse = planner.plan_fft_inverse(dims.n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let inv_n = 1.0 / dims.n as f64;
        Ok(FloquetFft {
            n: dims.n,
            kick: kick_phases(dims, potential),
            drift: kinetic_phases(dims).into_iter().map(|c| c * inv_n).collect(),
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        })
    }

    pub fn for_kick(dims: &QuantumDims, kick: &KickPotential) -> Result<Self> {
        Self::new(dims, &kick.on_grid(dims))
    }

    pub fn kick_phases(&self) -> &[Complex64] {
        &self.kick
    }

    pub fn apply_kick(&self, psi: &mut [Complex64]) {
        for (a, k) in psi.iter_mut().zip(&self.kick) {
            *a *= k;
        }
    }

    pub fn apply_drift(&mut self, psi: &mut [Complex64]) {
        self.forward.process_with_scratch(psi, &mut self.scratch);
        for (a, k) in psi.iter_mut().zip(&self.drift) {
            *a *= k;
        }
        self.inverse.process_with_scratch(psi, &mut self.scratch);
    }

    /// Kick then drift: the operator whose matrix elements the dense builder returns.
    pub fn apply(&mut self, psi: &mut [Complex64]) {
        debug_assert_eq!(psi.len(), self.n);
        self.apply_kick(psi);
        self.apply_drift(psi);
    }
}

/// One Floquet period through the FFT path.
pub fn apply_floquet_fft(dims: &QuantumDims, potential: &[f64], psi: &WaveFunction) -> Result<WaveFunction> {
    let mut f = FloquetFft::new(dims, potential)?;
    let mut amps = psi.amps.clone();
    f.apply(&mut amps);
    Ok(WaveFunction { amps })
}

/// Fidelity amplitude time series with free-form metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurve {
    pub kind: String,
    pub t: Vec<usize>,
    pub m: Vec<Complex64>,
    pub fidelity: Vec<f64>,
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl FidelityCurve {
    pub fn from_amplitudes(kind: &str, m: Vec<Complex64>) -> Self {
        let fidelity = m.iter().map(|z| z.norm_sqr()).collect();
        FidelityCurve {
            kind: kind.to_string(),
            t: (0..m.len()).collect(),
            m,
            fidelity,
            meta: BTreeMap::new(),
        }
    }

    /// A curve known only through `M(t)`; the amplitude column holds `sqrt(M)`.
    pub fn from_fidelity(kind: &str, t: Vec<usize>, fidelity: Vec<f64>) -> Self {
        let m = fidelity
            .iter()
            .map(|&f| Complex64::new(f.max(0.0).sqrt(), 0.0))
            .collect();
        FidelityCurve {
            kind: kind.to_string(),
            t,
            m,
            fidelity,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Serialize) -> Self {
        self.meta.insert(
            key.to_string(),
            serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        );
        self
    }
}

/// `m(t) = <(K1 D)^t psi | (K0 D)^t psi>` for `t = 0..=T`, where `Ki` is the
/// kick of branch `i` and `D` the drift. No preparation step.
pub fn fidelity_series_raw(
    dims: &QuantumDims,
    kick0: &KickPotential,
    kick1: &KickPotential,
    psi: &WaveFunction,
    t_max: usize,
) -> Result<Vec<Complex64>> {
    check_state(dims, psi)?;
    let mut f0 = FloquetFft::for_kick(dims, kick0)?;
    let mut f1 = FloquetFft::for_kick(dims, kick1)?;
    let mut a = psi.amps.clone();
    let mut b = psi.amps.clone();
    let mut out = Vec::with_capacity(t_max + 1);
    out.push(overlap(&b, &a));
    for _ in 0..t_max {
        f0.apply_drift(&mut a);
        f0.apply_kick(&mut a);
        f1.apply_drift(&mut b);
        f1.apply_kick(&mut b);
        out.push(overlap(&b, &a));
    }
    Ok(out)
}

fn check_state(dims: &QuantumDims, psi: &WaveFunction) -> Result<()> {
    if psi.len() != dims.n {
        return Err(Error::InvalidParameter(format!(
            "state has {} amplitudes, expected {}",
            psi.len(),
            dims.n
        )));
    }
    let norm = psi.norm_sqr();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("state is not normalised: |psi|^2 = {norm}")));
    }
    Ok(())
}

/// Propagates two branches and records `m(t)` after each kick.
///
/// The kick at `t = 0` is unperturbed in both branches; every later period
/// is a drift followed by the branch's own kick.
pub struct EchoPropagator {
    f0: FloquetFft,
    f1: FloquetFft,
    /// `exp(i (V1 - V0) / hbar)`, turning `<D1 a | D0 b>` into `<a | b>` form
    relative: Vec<Complex64>,
}

impl EchoPropagator {
    pub fn new(dims: &QuantumDims, map: &MapSpec, pert: &PerturbationSpec) -> Result<Self> {
        let f0 = FloquetFft::for_kick(dims, &KickPotential::unperturbed(*map))?;
        let f1 = FloquetFft::for_kick(dims, &KickPotential::perturbed(*map, *pert))?;
        let relative = f1
            .kick_phases()
            .iter()
            .zip(f0.kick_phases())
            .map(|(k1, k0)| k1 * k0.conj())
            .collect();
        Ok(EchoPropagator { f0, f1, relative })
    }

    /// `m(t)` for `t = 0..=t_max`.
    pub fn run(&mut self, psi: &[Complex64], t_max: usize) -> Vec<Complex64> {
        // a = U0^t psi, b = U1^{t-1} U0 psi with U = drift after kick;
        // m(t) = <K1 b | K0 a> = sum conj(b) a conj(K1) K0
        let mut a = psi.to_vec();
        let mut out = Vec::with_capacity(t_max + 1);
        out.push(Complex64::new(psi.iter().map(|z| z.norm_sqr()).sum(), 0.0));
        if t_max == 0 {
            return out;
        }
        self.f0.apply(&mut a);
        let mut b = a.clone();
        for t in 1..=t_max {
            let m: Complex64 = b
                .iter()
                .zip(&a)
                .zip(&self.relative)
                .map(|((x, y), w)| x.conj() * y * w.conj())
                .sum();
            out.push(m);
            if t < t_max {
                self.f0.apply(&mut a);
                self.f1.apply(&mut b);
            }
        }
        out
    }
}

/// Exact `m(t)`, `t = 0..=t_max`, for initial state `psi`.
pub fn fidelity_series(
    dims: &QuantumDims,
    map: &MapSpec,
    pert: &PerturbationSpec,
    psi: &WaveFunction,
    t_max: usize,
) -> Result<FidelityCurve> {
    check_state(dims, psi)?;
    let m = EchoPropagator::new(dims, map, pert)?.run(&psi.amps, t_max);
    Ok(FidelityCurve::from_amplitudes("exact", m)
        .with_meta("N", dims.n)
        .with_meta("hbar", dims.hbar)
        .with_meta("map", map)
        .with_meta("perturbation", pert))
}

/// The same series through dense matrices; for oracle checks at small `N`.
pub fn fidelity_series_dense(
    dims: &QuantumDims,
    map: &MapSpec,
    pert: &PerturbationSpec,
    psi: &WaveFunction,
    t_max: usize,
) -> Result<Vec<Complex64>> {
    check_state(dims, psi)?;
    let v0 = KickPotential::unperturbed(*map).on_grid(dims);
    let v1 = KickPotential::perturbed(*map, *pert).on_grid(dims);
    let u0 = build_floquet_dense(dims, &v0)?;
    let u1 = build_floquet_dense(dims, &v1)?;
    let k0 = kick_phases(dims, &v0);
    let k1 = kick_phases(dims, &v1);
    let apply_kick = |k: &[Complex64], x: &[Complex64]| -> Vec<Complex64> {
        x.iter().zip(k).map(|(a, b)| a * b).collect()
    };
    let mut out = vec![Complex64::new(psi.norm_sqr(), 0.0)];
    if t_max == 0 {
        return Ok(out);
    }
    let mut a = dense_apply(&u0, &psi.amps);
    let mut b = a.clone();
    for t in 1..=t_max {
        out.push(overlap(&apply_kick(&k1, &b), &apply_kick(&k0, &a)));
        if t < t_max {
            a = dense_apply(&u0, &a);
            b = dense_apply(&u1, &b);
        }
    }
    Ok(out)
}

/// Ensemble statistics of `M(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCurve {
    pub t: Vec<usize>,
    /// `<M(t)>`
    pub mean: Vec<f64>,
    pub mean_std_err: Vec<f64>,
    /// `<ln M(t)>`
    pub mean_log: Vec<f64>,
    pub mean_log_std_err: Vec<f64>,
    pub members: usize,
}

impl EnsembleCurve {
    /// `exp <ln M(t)>`
    pub fn geometric_mean(&self) -> Vec<f64> {
        self.mean_log.iter().map(|l| l.exp()).collect()
    }

    pub fn from_members(curves: &[Vec<f64>]) -> Result<Self> {
        let members = curves.len();
        if members == 0 {
            return Err(Error::InvalidParameter("ensemble is empty".into()));
        }
        let len = curves[0].len();
        if curves.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidParameter("ensemble curves differ in length".into()));
        }
        let stats = |f: &dyn Fn(f64) -> f64| -> (Vec<f64>, Vec<f64>) {
            (0..len)
                .map(|t| {
                    let n = members as f64;
                    let mean = curves.iter().map(|c| f(c[t])).sum::<f64>() / n;
                    let var = if members > 1 {
                        curves.iter().map(|c| (f(c[t]) - mean).powi(2)).sum::<f64>() / (n - 1.0)
                    } else {
                        0.0
                    };
                    (mean, (var / n).sqrt())
                })
                .unzip()
        };
        let (mean, mean_std_err) = stats(&|m| m);
        let (mean_log, mean_log_std_err) = stats(&|m| m.max(f64::MIN_POSITIVE).ln());
        Ok(EnsembleCurve {
            t: (0..len).collect(),
            mean,
            mean_std_err,
            mean_log,
            mean_log_std_err,
            members,
        })
    }
}

/// Exact `M(t)` for every state produced by `make_state(i)`, `i < members`.
///
/// States are evolved in parallel and collected in index order.
pub fn ensemble_fidelity<F>(
    dims: &QuantumDims,
    map: &MapSpec,
    pert: &PerturbationSpec,
    members: usize,
    t_max: usize,
    make_state: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize) -> Result<WaveFunction> + Sync,
{
    let proto = EchoPropagator::new(dims, map, pert)?;
    let f0 = proto.f0.clone();
    let f1 = proto.f1.clone();
    let relative = proto.relative;
    (0..members)
        .into_par_iter()
        .map_init(
            || EchoPropagator {
                f0: f0.clone(),
                f1: f1.clone(),
                relative: relative.clone(),
            },
            |prop, i| {
                let psi = make_state(i)?;
                Ok(prop.run(&psi.amps, t_max).iter().map(|z| z.norm_sqr()).collect())
            },
        )
        .collect()
}
