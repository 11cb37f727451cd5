//! Classical constants: finite-time exponents, `K(E)` per family, `C(l)`.

use fidelity_core::action::{autocorrelations, c0_closed_form, diffusion_constant, Estimate, PerturbationFamily};
use fidelity_core::classical::{lyapunov_closed_form, stretch_curve, MapKind, StretchStats};
use fidelity_core::export::{Cell, Table};

use super::{shape, summary_table, Emit};
use crate::config::RunConfig;
use crate::error::RunResult;
use crate::output::Sink;

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyDiffusion {
    pub family: String,
    pub k_e: Estimate,
    /// Exact `C(0)` for the monomial families.
    pub c0_exact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalReport {
    pub stretch: Vec<StretchStats>,
    /// `ln` of the larger eigenvalue of the sawtooth tangent map.
    pub lambda_closed: Option<f64>,
    pub diffusion: Vec<FamilyDiffusion>,
    /// `C(l)` of the configured family.
    pub autocorrelation: Vec<Estimate>,
}

impl ClassicalReport {
    /// `Lambda(t)` at the largest computed time.
    pub fn lambda_final(&self) -> f64 {
        self.stretch.last().map_or(f64::NAN, |s| s.lambda_t)
    }

    pub fn lambda1_final(&self) -> f64 {
        self.stretch.last().map_or(f64::NAN, |s| s.lambda1_t)
    }
}

const FAMILIES: [&str; 6] = ["cosine", "v1", "v2", "v3", "v4", "v5"];

pub fn run(cfg: &RunConfig) -> RunResult<ClassicalReport> {
    cfg.validate()?;
    let map = cfg.map_spec()?;
    let stretch = stretch_curve(&map, cfg.t_max, cfg.samples, cfg.seed);
    let lambda_closed = match map.kind {
        MapKind::Sawtooth => Some(lyapunov_closed_form(map.k)?),
        MapKind::Standard => None,
    };
    let mut diffusion = Vec::new();
    for name in FAMILIES {
        let family: PerturbationFamily = name.parse()?;
        let pert = shape(family)?;
        let k_e = diffusion_constant(&map, &pert, cfg.l_max, cfg.samples, cfg.seed)?;
        let c0_exact = match family {
            PerturbationFamily::Monomial(i) => Some(c0_closed_form(i, pert.coefficient)?),
            PerturbationFamily::Cosine => None,
        };
        diffusion.push(FamilyDiffusion {
            family: name.to_string(),
            k_e,
            c0_exact,
        });
    }
    let autocorrelation = autocorrelations(&map, &shape(cfg.family()?)?, cfg.l_max, cfg.samples, cfg.seed)?;
    Ok(ClassicalReport {
        stretch,
        lambda_closed,
        diffusion,
        autocorrelation,
    })
}

impl Emit for ClassicalReport {
    fn emit(&self, sink: &mut Sink) -> RunResult<()> {
        let mut t = Table::new(&["t", "Lambda", "Lambda1"]);
        for s in &self.stretch {
            t.push(vec![s.t.into(), s.lambda_t.into(), s.lambda1_t.into()]);
        }
        sink.table("stretch", "finite-time stretching exponents", &t)?;

        let mut t = Table::new(&["family", "K_E", "K_E_err", "C0_exact"]);
        for d in &self.diffusion {
            t.push(vec![
                Cell::from(d.family.as_str()),
                d.k_e.value.into(),
                d.k_e.std_err.into(),
                d.c0_exact.unwrap_or(f64::NAN).into(),
            ]);
        }
        sink.table("diffusion", "action diffusion constant per perturbation family", &t)?;

        let mut t = Table::new(&["l", "C", "C_err"]);
        for (l, c) in self.autocorrelation.iter().enumerate() {
            t.push(vec![l.into(), c.value.into(), c.std_err.into()]);
        }
        sink.table("autocorrelation", "perturbation autocorrelation along orbits", &t)?;

        let summary = summary_table(&[
            ("lambda_closed_form", self.lambda_closed.unwrap_or(f64::NAN)),
            ("Lambda_final", self.lambda_final()),
            ("Lambda1_final", self.lambda1_final()),
        ]);
        sink.table("summary", "exponent summary", &summary)
    }
}
