//! One module per subcommand. Each exposes `run(&RunConfig)` returning a
//! typed report and an `emit` method writing it through a [`Sink`].

pub mod action_stats;
pub mod classical;
pub mod compare_sc;
pub mod fgr_scan;
pub mod fidelity;
pub mod levy;
pub mod regimes;
pub mod short_time;

use rand::Rng;
use rayon::prelude::*;

use fidelity_core::action::{diffusion_constant, PerturbationFamily, PerturbationSpec};
use fidelity_core::classical::MapSpec;
use fidelity_core::export::{Cell, Table};
use fidelity_core::quantum::{
    ensemble_fidelity, prepare_gaussian, prepare_point_source, GaussianPacketSpec, QuantumDims, WaveFunction,
};
use fidelity_core::rng::{member_rng, sample_points, stream_rng, Region};

use crate::config::{RunConfig, StateKind};
use crate::error::{RunError, RunResult};
use crate::output::{unix_now, RunManifest, Sink};

/// Subcommand names, in the order the CLI lists them.
pub const COMMANDS: [&str; 8] = [
    "fidelity",
    "compare-sc",
    "fgr-scan",
    "short-time",
    "classical",
    "action-stats",
    "levy",
    "regimes",
];

/// Runs one subcommand and writes its outputs under `cfg.out`. Nothing is
/// written when the computation fails.
pub fn execute(command: &str, cfg: &RunConfig) -> RunResult<RunManifest> {
    cfg.validate()?;
    let started = unix_now();
    let report: Box<dyn Emit> = match command {
        "fidelity" => Box::new(fidelity::run(cfg)?),
        "compare-sc" => Box::new(compare_sc::run(cfg)?),
        "fgr-scan" => Box::new(fgr_scan::run(cfg)?),
        "short-time" => Box::new(short_time::run(cfg)?),
        "classical" => Box::new(classical::run(cfg)?),
        "action-stats" => Box::new(action_stats::run(cfg)?),
        "levy" => Box::new(levy::run(cfg)?),
        "regimes" => Box::new(regimes::run(cfg)?),
        other => return Err(RunError::Config(format!("unknown command '{other}'"))),
    };
    let mut sink = Sink::create(cfg, command)?.started_at(started);
    report.emit(&mut sink)?;
    sink.finish()
}

/// Initial states of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    /// Grid indices of position eigenstates.
    Point(Vec<usize>),
    Gaussian(Vec<GaussianPacketSpec>),
}

impl InitialStates {
    /// The ensemble described by the config, drawn from its seed.
    pub fn from_config(cfg: &RunConfig, dims: &QuantumDims) -> RunResult<Self> {
        Ok(match cfg.state {
            StateKind::Point => InitialStates::Point(point_sources(dims.n, cfg.ensemble, cfg.seed)),
            StateKind::Gaussian => {
                let xi = cfg.xi(dims.hbar);
                let packets = sample_points(cfg.region.region(), cfg.ensemble, cfg.seed)
                    .into_iter()
                    .map(|c| GaussianPacketSpec::new(c.r, c.p, xi))
                    .collect::<fidelity_core::Result<_>>()?;
                InitialStates::Gaussian(packets)
            }
        })
    }

    pub fn len(&self) -> usize {
        match self {
            InitialStates::Point(js) => js.len(),
            InitialStates::Gaussian(ps) => ps.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn prepare(&self, dims: &QuantumDims, i: usize) -> fidelity_core::Result<WaveFunction> {
        match self {
            InitialStates::Point(js) => prepare_point_source(dims, js[i]),
            InitialStates::Gaussian(ps) => prepare_gaussian(dims, &ps[i]),
        }
    }

    /// Initial position and momentum of member `i`; momentum is NaN for
    /// point sources.
    pub fn centre(&self, dims: &QuantumDims, i: usize) -> (f64, f64) {
        match self {
            InitialStates::Point(js) => (dims.position(js[i]), f64::NAN),
            InitialStates::Gaussian(ps) => (ps[i].r0, ps[i].p0),
        }
    }
}

/// `members` grid indices drawn uniformly from `0..n`.
pub fn point_sources(n: usize, members: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed);
    (0..members).map(|_| rng.random_range(0..n)).collect()
}

/// `M(t)` for every member, `t = 0..=t_max`.
pub fn run_ensemble(
    dims: &QuantumDims,
    map: &MapSpec,
    pert: &PerturbationSpec,
    states: &InitialStates,
    t_max: usize,
) -> RunResult<Vec<Vec<f64>>> {
    Ok(ensemble_fidelity(dims, map, pert, states.len(), t_max, |i| states.prepare(dims, i))?)
}

/// Unit-strength perturbation of the given shape, for classical quantities
/// that depend only on `V`.
pub fn shape(family: PerturbationFamily) -> RunResult<PerturbationSpec> {
    Ok(PerturbationSpec::from_epsilon(family, 1.0, 1.0)?)
}

/// Configured `K(E)`, or a Monte Carlo estimate for the configured map and family.
pub fn action_diffusion(cfg: &RunConfig, map: &MapSpec) -> RunResult<f64> {
    match cfg.k_e {
        Some(k) => Ok(k),
        None => Ok(diffusion_constant(map, &shape(cfg.family()?)?, cfg.l_max, cfg.samples, cfg.seed)?.value),
    }
}

pub fn times(len: usize) -> Vec<f64> {
    (0..len).map(|t| t as f64).collect()
}

/// Mean and variance of `dS/eps` at every `t = 1..=t_max` over `n` points
/// of `region`, each orbit contributing to all times.
pub fn action_moments(
    map: &MapSpec,
    pert: &PerturbationSpec,
    t_max: usize,
    n: usize,
    seed: u64,
    region: Region,
) -> (Vec<f64>, Vec<f64>) {
    const CHUNK: usize = 1 << 14;
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = member_rng(seed, c as u64);
            let mut sum = vec![0.0; t_max];
            let mut sq = vec![0.0; t_max];
            for _ in (c * CHUNK)..((c + 1) * CHUNK).min(n) {
                let mut x = region.sample(&mut rng);
                let mut s = 0.0;
                for k in 0..t_max {
                    x = map.step(x);
                    s += pert.value(x.r);
                    sum[k] += s;
                    sq[k] += s * s;
                }
            }
            (sum, sq)
        })
        .collect();
    let nf = n as f64;
    let mut mean = vec![0.0; t_max];
    let mut var = vec![0.0; t_max];
    for k in 0..t_max {
        let s: f64 = parts.iter().map(|p| p.0[k]).sum();
        let q: f64 = parts.iter().map(|p| p.1[k]).sum();
        mean[k] = s / nf;
        var[k] = (q / nf - mean[k] * mean[k]) * nf / (nf - 1.0).max(1.0);
    }
    (mean, var)
}

/// Two-column `key, value` table.
pub fn summary_table(entries: &[(&str, f64)]) -> Table {
    let mut t = Table::new(&["key", "value"]);
    for (k, v) in entries {
        t.push(vec![Cell::from(*k), Cell::from(*v)]);
    }
    t
}

/// Writes a report through a sink.
pub trait Emit {
    fn emit(&self, sink: &mut Sink) -> RunResult<()>;
}

/// Second derivative of the least-squares parabola through `pts`.
pub fn quadratic_curvature(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let scale = pts.iter().map(|p| (p.0 - mx).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    // normal equations in the centred, scaled variable u = (t - mx) / scale
    let mut s = [0.0; 5];
    let mut b = [0.0; 3];
    for &(x, y) in pts {
        let u = (x - mx) / scale;
        let mut up = 1.0;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += up;
            if k < 3 {
                b[k] += up * y;
            }
            up *= u;
        }
    }
    let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let det = det3(m);
    let mut m2 = m;
    for r in 0..3 {
        m2[r][2] = b[r];
    }
    let c2 = det3(m2) / det;
    2.0 * c2 / (scale * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curvature_of_parabola() {
        let pts: Vec<(f64, f64)> = (0..50).map(|k| {
            let t = 100.0 + k as f64;
            (t, 3.0 - 0.5 * t - 2e-3 * t * t)
        }).collect();
        assert!((quadratic_curvature(&pts) + 4e-3).abs() < 1e-9);
        let line: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 2.0 * k as f64)).collect();
        assert!(quadratic_curvature(&line).abs() < 1e-12);
    }

    #[test]
    fn moments_match_direct_sampling() {
        let map = MapSpec::sawtooth(1.0).unwrap();
        let pert = shape(PerturbationFamily::Monomial(2)).unwrap();
        let (mean, var) = action_moments(&map, &pert, 3, 200_000, 4, Region::FULL);
        let k_e = std::f64::consts::PI.powi(4) / 90.0;
        for t in 0..3 {
            assert!((mean[t] - (t + 1) as f64 * pert.mean_value()).abs() < 0.02, "{t}: {}", mean[t]);
            assert!((var[t] / (2.0 * k_e * (t + 1) as f64) - 1.0).abs() < 0.05, "{t}: {}", var[t]);
        }
    }

    #[test]
    fn point_sources_are_reproducible() {
        assert_eq!(point_sources(64, 10, 3), point_sources(64, 10, 3));
        assert_ne!(point_sources(64, 10, 3), point_sources(64, 10, 4));
        assert!(point_sources(64, 100, 1).iter().all(|&j| j < 64));
    }
}
