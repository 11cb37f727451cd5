//! Classical kicked maps on the 2-torus and their tangent dynamics.
//!
//! Both maps kick first and then drift:
//!
//! ```text
//! p' = p + F(r)        (mod 2pi)
//! r' = r + p'          (mod 2pi)
//! ```
//!
//! with `F(r) = K sin r` for the standard map and `F(r) = K (r - pi)` for the
//! sawtooth map. Tangent vectors are ordered `(dp, dr)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{member_rng, Region};
use crate::TWO_PI;
use std::f64::consts::PI;

/// Reduce an angle into `[0, 2pi)`. Exact multiples of `2pi` map to 0.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    let y = x.rem_euclid(TWO_PI);
    if y >= TWO_PI {
        0.0
    } else {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub r: f64,
    pub p: f64,
}

impl PhasePoint {
    pub fn new(r: f64, p: f64) -> Self {
        PhasePoint {
            r: wrap_angle(r),
            p: wrap_angle(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Standard,
    Sawtooth,
}

impl std::str::FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" | "kicked-rotator" | "kicked_rotator" | "rotator" => Ok(MapKind::Standard),
            "sawtooth" => Ok(MapKind::Sawtooth),
            other => Err(Error::InvalidParameter(format!("unknown map kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub kind: MapKind,
    #[serde(rename = "K")]
    pub k: f64,
}

impl MapSpec {
    pub fn new(kind: MapKind, k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kick strength K must be finite and positive, got {k}"
            )));
        }
        Ok(MapSpec { kind, k })
    }

    pub fn standard(k: f64) -> Result<Self> {
        Self::new(MapKind::Standard, k)
    }

    pub fn sawtooth(k: f64) -> Result<Self> {
        Self::new(MapKind::Sawtooth, k)
    }

    /// Kick potential `V(r)` whose negative gradient is the force.
    #[inline]
    pub fn potential(&self, r: f64) -> f64 {
        match self.kind {
            MapKind::Standard => self.k * r.cos(),
            MapKind::Sawtooth => -0.5 * self.k * (r - PI) * (r - PI),
        }
    }

    #[inline]
    pub fn force(&self, r: f64) -> f64 {
        match self.kind {
            MapKind::Standard => self.k * r.sin(),
            MapKind::Sawtooth => self.k * (r - PI),
        }
    }

    #[inline]
    pub fn force_prime(&self, r: f64) -> f64 {
        match self.kind {
            MapKind::Standard => self.k * r.cos(),
            MapKind::Sawtooth => self.k,
        }
    }

    #[inline]
    pub fn force_second(&self, r: f64) -> f64 {
        match self.kind {
            MapKind::Standard => -self.k * r.sin(),
            MapKind::Sawtooth => 0.0,
        }
    }

    /// Whether the force has a branch cut at `r = 0`.
    pub fn has_branch_cut(&self) -> bool {
        self.kind == MapKind::Sawtooth
    }

    /// One kick followed by one free drift.
    #[inline]
    pub fn step(&self, x: PhasePoint) -> PhasePoint {
        let p = wrap_angle(x.p + self.force(x.r));
        let r = wrap_angle(x.r + p);
        PhasePoint { r, p }
    }

    /// Single-step Jacobian at `x`, rows `[[1, F'], [1, 1 + F']]`.
    #[inline]
    pub fn tangent_step(&self, x: PhasePoint) -> TangentMatrix {
        let f = self.force_prime(x.r);
        TangentMatrix {
            m: [[1.0, f], [1.0, 1.0 + f]],
        }
    }
}

/// 2x2 Jacobian acting on `(dp, dr)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentMatrix {
    pub m: [[f64; 2]; 2],
}

impl TangentMatrix {
    pub const IDENTITY: TangentMatrix = TangentMatrix {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// `self * rhs`
    pub fn mul(&self, rhs: &TangentMatrix) -> TangentMatrix {
        let a = &self.m;
        let b = &rhs.m;
        TangentMatrix {
            m: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                ],
            ],
        }
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    /// `d r_t / d p_0`
    pub fn dr_dp(&self) -> f64 {
        self.m[1][0]
    }

    /// `d r_t / d r_0`
    pub fn dr_dr(&self) -> f64 {
        self.m[1][1]
    }
}

/// States after 0, 1, ..., t kicks.
pub fn evolve(map: &MapSpec, x0: PhasePoint, t: usize) -> Vec<PhasePoint> {
    let mut out = Vec::with_capacity(t + 1);
    let mut x = x0;
    out.push(x);
    for _ in 0..t {
        x = map.step(x);
        out.push(x);
    }
    out
}

/// Time-t Jacobian kept in QR form, `M = Q R` with `R` upper triangular.
///
/// The diagonal of `R` is stored as logarithms, so stretching of order
/// `e^{lambda t}` never overflows and `ln det M = l1 + l2` stays accurate
/// long after the plain matrix product has lost its determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monodromy {
    q: [[f64; 2]; 2],
    log_r11: f64,
    log_r22: f64,
    /// `r12 / r11`
    r12_scaled: f64,
    t: usize,
}

impl Monodromy {
    pub fn identity() -> Self {
        Monodromy {
            q: [[1.0, 0.0], [0.0, 1.0]],
            log_r11: 0.0,
            log_r22: 0.0,
            r12_scaled: 0.0,
            t: 0,
        }
    }

    /// Left-multiply by a single-step Jacobian.
    pub fn push(&mut self, j: &TangentMatrix) {
        // A = J Q, re-factored as Q' R'.
        let a1 = [
            j.m[0][0] * self.q[0][0] + j.m[0][1] * self.q[1][0],
            j.m[1][0] * self.q[0][0] + j.m[1][1] * self.q[1][0],
        ];
        let a2 = [
            j.m[0][0] * self.q[0][1] + j.m[0][1] * self.q[1][1],
            j.m[1][0] * self.q[0][1] + j.m[1][1] * self.q[1][1],
        ];
        let r11 = a1[0].hypot(a1[1]);
        let q1 = [a1[0] / r11, a1[1] / r11];
        let q2 = [-q1[1], q1[0]];
        let r12 = q1[0] * a2[0] + q1[1] * a2[1];
        let r22 = q2[0] * a2[0] + q2[1] * a2[1];
        // R_new = R' R_old
        self.r12_scaled += (r12 / r11) * (self.log_r22 - self.log_r11).exp();
        self.log_r11 += r11.ln();
        self.log_r22 += r22.abs().ln();
        self.q = [[q1[0], q2[0]], [q1[1], q2[1]]];
        self.t += 1;
    }

    pub fn kicks(&self) -> usize {
        self.t
    }

    /// `ln |det M|`; zero for an area-preserving product.
    pub fn log_det(&self) -> f64 {
        self.log_r11 + self.log_r22
    }

    pub fn det(&self) -> f64 {
        self.log_det().exp()
    }

    /// Logarithm of the common scale factor pulled out of [`Self::scaled_matrix`].
    pub fn log_scale(&self) -> f64 {
        self.log_r11
    }

    /// `M / exp(log_scale)`; finite for any `t`.
    pub fn scaled_matrix(&self) -> TangentMatrix {
        let d = (self.log_r22 - self.log_r11).exp();
        let r = [[1.0, self.r12_scaled], [0.0, d]];
        let q = &self.q;
        TangentMatrix {
            m: [
                [q[0][0] * r[0][0], q[0][0] * r[0][1] + q[0][1] * r[1][1]],
                [q[1][0] * r[0][0], q[1][0] * r[0][1] + q[1][1] * r[1][1]],
            ],
        }
    }

    /// The full matrix. Entries overflow to infinity once `log_scale > ~709`.
    pub fn matrix(&self) -> TangentMatrix {
        let s = self.log_r11.exp();
        let mut m = self.scaled_matrix();
        for row in m.m.iter_mut() {
            for e in row.iter_mut() {
                *e *= s;
            }
        }
        m
    }
}

/// Ordered product of single-step Jacobians along the orbit of `x0`.
pub fn monodromy(map: &MapSpec, x0: PhasePoint, t: usize) -> Monodromy {
    let mut m = Monodromy::identity();
    let mut x = x0;
    for _ in 0..t {
        m.push(&map.tangent_step(x));
        x = map.step(x);
    }
    m
}

/// `ln[(2 + K + sqrt((2 + K)^2 - 4)) / 2]`, the sawtooth Lyapunov exponent.
pub fn lyapunov_closed_form(k: f64) -> Result<f64> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "closed-form Lyapunov exponent needs K > 0, got {k}"
        )));
    }
    let b = 2.0 + k;
    // (b + sqrt(b^2 - 4)) / 2 with b^2 - 4 = K (K + 4), written to avoid cancellation
    Ok(((b + (k * (k + 4.0)).sqrt()) / 2.0).ln())
}

/// Finite-time stretching statistics at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchStats {
    pub t: usize,
    /// `(1/t) <ln g>`
    pub lambda_t: f64,
    /// `-(1/t) ln <1/g>`
    pub lambda1_t: f64,
    pub ensemble_size: usize,
    pub seed: u64,
}

/// Kicks spent aligning the seed tangent vector before measurement starts.
///
/// The vector `(1, 0)` is attached to a uniformly drawn point and carried
/// this many kicks forward; the image point is again uniform (the map is
/// area preserving) and the vector now lies along the local unstable
/// direction. For the sawtooth map the residual misalignment is
/// `e^{-2 lambda ALIGN_KICKS}`, below double precision for `K >= 0.4`.
pub const ALIGN_KICKS: usize = 40;

/// Starting point and unit tangent vector for stretch measurements.
pub fn aligned_start(map: &MapSpec, y: PhasePoint) -> (PhasePoint, [f64; 2]) {
    let mut x = y;
    let mut v = [1.0, 0.0];
    for _ in 0..ALIGN_KICKS {
        v = map.tangent_step(x).apply(v);
        let n = v[0].hypot(v[1]);
        v = [v[0] / n, v[1] / n];
        x = map.step(x);
    }
    (x, v)
}

/// `ln |M_s v| ` for `s = 1..=t`, renormalising every kick.
pub fn log_stretch_series(map: &MapSpec, x0: PhasePoint, v0: [f64; 2], t: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t);
    let mut x = x0;
    let mut v = v0;
    let mut acc = 0.0;
    for _ in 0..t {
        v = map.tangent_step(x).apply(v);
        let n = v[0].hypot(v[1]);
        acc += n.ln();
        v = [v[0] / n, v[1] / n];
        x = map.step(x);
        out.push(acc);
    }
    out
}

/// Jensen-safe accumulator for `<ln g>` and `ln <1/g>`.
#[derive(Debug, Clone, Copy)]
struct StretchAccumulator {
    sum_log: f64,
    /// running max of `-ln g`
    shift: f64,
    /// `sum exp(-ln g - shift)`
    sum_inv: f64,
    n: usize,
}

impl StretchAccumulator {
    fn new() -> Self {
        StretchAccumulator {
            sum_log: 0.0,
            shift: f64::NEG_INFINITY,
            sum_inv: 0.0,
            n: 0,
        }
    }

    fn add(&mut self, log_g: f64) {
        self.sum_log += log_g;
        self.add_inv(-log_g, 1.0);
        self.n += 1;
    }

    fn add_inv(&mut self, x: f64, weight: f64) {
        if x > self.shift {
            self.sum_inv = self.sum_inv * (self.shift - x).exp() + weight;
            self.shift = x;
        } else {
            self.sum_inv += weight * (x - self.shift).exp();
        }
    }

    fn merge(&mut self, other: &StretchAccumulator) {
        if other.n == 0 {
            return;
        }
        self.sum_log += other.sum_log;
        self.add_inv(other.shift, other.sum_inv);
        self.n += other.n;
    }

    fn mean_log(&self) -> f64 {
        self.sum_log / self.n as f64
    }

    fn log_mean_inv(&self) -> f64 {
        self.shift + (self.sum_inv / self.n as f64).ln()
    }
}

const CHUNK: usize = 2048;

/// `Lambda(t)` and `Lambda_1(t)` for `t = 1..=t_max` from one ensemble.
///
/// Member `i` is drawn from its own seeded stream and chunks are reduced in
/// index order, so the result does not depend on the thread count.
pub fn stretch_curve(map: &MapSpec, t_max: usize, ensemble: usize, seed: u64) -> Vec<StretchStats> {
    stretch_curve_in(map, Region::FULL, t_max, ensemble, seed)
}

pub fn stretch_curve_in(
    map: &MapSpec,
    region: Region,
    t_max: usize,
    ensemble: usize,
    seed: u64,
) -> Vec<StretchStats> {
    let chunks: Vec<Vec<StretchAccumulator>> = (0..ensemble.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![StretchAccumulator::new(); t_max];
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(ensemble) {
                let y = region.sample(&mut member_rng(seed, i as u64));
                let (x0, v0) = aligned_start(map, y);
                for (a, lg) in acc.iter_mut().zip(log_stretch_series(map, x0, v0, t_max)) {
                    a.add(lg);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![StretchAccumulator::new(); t_max];
    for chunk in &chunks {
        for (a, b) in total.iter_mut().zip(chunk) {
            a.merge(b);
        }
    }
    total
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let t = (k + 1) as f64;
            StretchStats {
                t: k + 1,
                lambda_t: a.mean_log() / t,
                lambda1_t: -a.log_mean_inv() / t,
                ensemble_size: ensemble,
                seed,
            }
        })
        .collect()
}

/// `Lambda(t)`: ensemble mean of the log stretch factor per kick.
pub fn finite_time_lambda(map: &MapSpec, t: usize, ensemble: usize, seed: u64) -> Result<StretchStats> {
    if t == 0 || ensemble == 0 {
        return Err(Error::InvalidParameter(
            "finite-time exponents need t >= 1 and a non-empty ensemble".into(),
        ));
    }
    Ok(*stretch_curve(map, t, ensemble, seed).last().expect("t >= 1"))
}

/// `Lambda_1(t)`: minus log of the mean inverse stretch factor per kick.
/// Both exponents come from the same ensemble; see [`finite_time_lambda`].
pub fn finite_time_lambda1(map: &MapSpec, t: usize, ensemble: usize, seed: u64) -> Result<StretchStats> {
    finite_time_lambda(map, t, ensemble, seed)
}

/// Exponents from explicit per-member log stretch factors.
pub fn exponents_from_logs(log_g: &[f64], t: usize) -> (f64, f64) {
    let mut acc = StretchAccumulator::new();
    for &l in log_g {
        acc.add(l);
    }
    let t = t as f64;
    (acc.mean_log() / t, -acc.log_mean_inv() / t)
}
