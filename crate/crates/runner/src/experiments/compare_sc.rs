//! Exact fidelity against the semiclassical approximants, state by state.

use rayon::prelude::*;

use fidelity_core::export::{Cell, Table};
use fidelity_core::quantum::fidelity_series;
use fidelity_core::semiclassical::{m_point, m_sc1, m_sc2, sc_window};

use super::{Emit, InitialStates};
use crate::config::RunConfig;
use crate::error::RunResult;
use crate::output::Sink;

/// One initial state: exact `M(t)` and each approximant on `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateComparison {
    pub r0: f64,
    /// NaN for point sources.
    pub p0: f64,
    /// Second-order factor at each `t`; empty for point sources.
    pub d: Vec<f64>,
    pub exact: Vec<f64>,
    pub approx: Vec<(String, Vec<f64>)>,
}

impl StateComparison {
    /// `sum_{t=1..T} |M_approx - M_exact|`
    pub fn l1(&self, name: &str) -> f64 {
        let (_, curve) = self.approx.iter().find(|(n, _)| n == name).expect("known approximant");
        curve.iter().zip(&self.exact).skip(1).map(|(a, e)| (a - e).abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub names: Vec<String>,
    pub states: Vec<StateComparison>,
}

impl CompareReport {
    /// Ensemble mean of [`StateComparison::l1`].
    pub fn mean_l1(&self, name: &str) -> f64 {
        self.states.iter().map(|s| s.l1(name)).sum::<f64>() / self.states.len() as f64
    }
}

pub fn run(cfg: &RunConfig) -> RunResult<CompareReport> {
    cfg.validate()?;
    let map = cfg.map_spec()?;
    let dims = cfg.dims()?;
    let pert = cfg.perturbation_spec(dims.hbar)?;
    let states = InitialStates::from_config(cfg, &dims)?;
    let t_max = cfg.t_max;
    let names: Vec<String> = match &states {
        InitialStates::Point(_) => vec!["point".into()],
        InitialStates::Gaussian(_) => vec!["sc1".into(), "sc2".into()],
    };
    let rows = (0..states.len())
        .into_par_iter()
        .map(|i| -> RunResult<StateComparison> {
            let psi = states.prepare(&dims, i)?;
            let exact = fidelity_series(&dims, &map, &pert, &psi, t_max)?.fidelity;
            let (r0, p0) = states.centre(&dims, i);
            Ok(match &states {
                InitialStates::Point(_) => {
                    let point = (0..=t_max)
                        .map(|t| Ok(m_point(&map, &pert, r0, t)?.norm_sqr()))
                        .collect::<RunResult<Vec<f64>>>()?;
                    StateComparison {
                        r0,
                        p0,
                        d: Vec::new(),
                        exact,
                        approx: vec![("point".into(), point)],
                    }
                }
                InitialStates::Gaussian(packets) => {
                    let packet = &packets[i];
                    let mut d = vec![1.0];
                    let mut sc1 = vec![1.0];
                    let mut sc2 = vec![1.0];
                    for t in 1..=t_max {
                        d.push(sc_window(&map, packet, dims.hbar, t)?.d);
                        sc1.push(m_sc1(&map, &pert, packet, t)?.norm_sqr());
                        sc2.push(m_sc2(&map, &pert, packet, t)?.norm_sqr());
                    }
                    StateComparison {
                        r0,
                        p0,
                        d,
                        exact,
                        approx: vec![("sc1".into(), sc1), ("sc2".into(), sc2)],
                    }
                }
            })
        })
        .collect::<RunResult<Vec<_>>>()?;
    Ok(CompareReport { names, states: rows })
}

/// `(approx - exact) / exact`
fn rel_err(approx: f64, exact: f64) -> f64 {
    (approx - exact) / exact
}

impl Emit for CompareReport {
    fn emit(&self, sink: &mut Sink) -> RunResult<()> {
        let mut cols: Vec<String> = ["state", "r0", "p0", "t", "D", "M_exact"].iter().map(|s| s.to_string()).collect();
        cols.extend(self.names.iter().map(|n| format!("M_{n}")));
        cols.extend(self.names.iter().map(|n| format!("rel_err_{n}")));
        let mut curves = Table::new(&cols);
        for (i, s) in self.states.iter().enumerate() {
            for t in 0..s.exact.len() {
                let mut row: Vec<Cell> = vec![
                    i.into(),
                    s.r0.into(),
                    s.p0.into(),
                    t.into(),
                    s.d.get(t).copied().unwrap_or(f64::NAN).into(),
                    s.exact[t].into(),
                ];
                row.extend(s.approx.iter().map(|(_, c)| Cell::from(c[t])));
                row.extend(s.approx.iter().map(|(_, c)| Cell::from(rel_err(c[t], s.exact[t]))));
                curves.push(row);
            }
        }
        sink.table("curves", "exact and semiclassical fidelity", &curves)?;

        let mut cols: Vec<String> = ["state", "r0", "p0"].iter().map(|s| s.to_string()).collect();
        cols.extend(self.names.iter().map(|n| format!("L1_{n}")));
        let mut per_state = Table::new(&cols);
        for (i, s) in self.states.iter().enumerate() {
            let mut row: Vec<Cell> = vec![i.into(), s.r0.into(), s.p0.into()];
            row.extend(self.names.iter().map(|n| Cell::from(s.l1(n))));
            per_state.push(row);
        }
        sink.table("l1", "L1 error over t >= 1 per state", &per_state)?;

        let mut mean = Table::new(&["approximant", "mean_L1", "states"]);
        for n in &self.names {
            mean.push(vec![n.clone().into(), self.mean_l1(n).into(), self.states.len().into()]);
        }
        sink.table("summary", "ensemble-mean L1 error", &mean)
    }
}
