//! TOML model files.
//!
//! ```toml
//! [branching]
//! kind = "generic"          # or "stable" with a, c, sigma, alpha
//! b = 1.0
//! c = 0.0
//! [[branching.measure]]
//! kind = "uniform"          # stable | uniform | exponential | power_law | atom
//! rate = 2.0
//! lo = 0.0
//! hi = 1.0
//!
//! [immigration]
//! beta = 1.0
//!
//! [competition]
//! kind = "power"            # none | linear | power | xlog | table
//! k = 1.0
//! p = 1.5
//!
//! [sim]
//! dt = 1e-3
//! t_end = 1.0
//!
//! [certificate]
//! weight = "v1"
//! ```

use serde::Deserialize;

use crate::ergodicity::{CertificateOptions, StationaryConfig};
use crate::error::{Error, Result};
use crate::generator::WeightFunction;
use crate::levy::{Atom, Density, LevyMeasure};
use crate::mechanisms::{
    stable_to_generic, BranchingMechanism, CompetitionMechanism, ImmigrationMechanism, ModelSpec,
};
use crate::simulator::SimConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub branching: BranchingSection,
    #[serde(default)]
    pub immigration: ImmigrationSection,
    #[serde(default)]
    pub competition: CompetitionSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub certificate: CertificateSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BranchingSection {
    Generic {
        b: f64,
        #[serde(default)]
        c: f64,
        #[serde(default)]
        measure: Vec<MeasureSection>,
    },
    /// `a l + c l^2 + sigma l^alpha` (`sigma l log l` at `alpha = 1`).
    Stable {
        #[serde(default)]
        a: f64,
        #[serde(default)]
        c: f64,
        sigma: f64,
        alpha: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSection {
    Stable {
        alpha: f64,
        sigma: f64,
    },
    Uniform {
        rate: f64,
        lo: f64,
        hi: f64,
    },
    Exponential {
        rate: f64,
        decay: f64,
    },
    PowerLaw {
        coef: f64,
        exponent: f64,
        lo: f64,
        #[serde(default = "infinity")]
        hi: f64,
    },
    Atom {
        loc: f64,
        mass: f64,
    },
}

fn infinity() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImmigrationSection {
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub measure: Vec<MeasureSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompetitionSection {
    #[default]
    None,
    Linear {
        a: f64,
    },
    Power {
        k: f64,
        p: f64,
    },
    Xlog {
        k: f64,
    },
    Table {
        xs: Vec<f64>,
        ys: Vec<f64>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub eps: Option<f64>,
    pub x0: Option<f64>,
    pub y0: Option<f64>,
    pub diffusion_correction: Option<bool>,
    pub x_max: Option<f64>,
    pub record_stride: Option<usize>,
    pub stable_fast_path: Option<bool>,
    /// Observation times for the decay curve.
    pub times: Option<Vec<f64>>,
    pub burn_in: Option<f64>,
    pub samples: Option<usize>,
    pub spacing: Option<f64>,
    pub bins: Option<usize>,
    pub starts: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    pub weight: Option<String>,
    /// Side of the validation grid.
    pub grid: Option<usize>,
    pub slack: Option<f64>,
}

fn field<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("{path}: {e}")))
}

fn measure(path: &str, specs: &[MeasureSection]) -> Result<LevyMeasure> {
    let mut parts = Vec::with_capacity(specs.len());
    for (i, s) in specs.iter().enumerate() {
        let m = match *s {
            MeasureSection::Stable { alpha, sigma } => {
                field(&format!("{path}[{i}]"), LevyMeasure::stable(alpha, sigma))?
            }
            MeasureSection::Uniform { rate, lo, hi } => LevyMeasure::uniform(rate, lo, hi),
            MeasureSection::Exponential { rate, decay } => LevyMeasure::exponential(rate, decay),
            MeasureSection::PowerLaw {
                coef,
                exponent,
                lo,
                hi,
            } => LevyMeasure::Density(Density::PowerLaw {
                coef,
                exponent,
                lo,
                hi,
            }),
            MeasureSection::Atom { loc, mass } => LevyMeasure::Atoms(vec![Atom { loc, mass }]),
        };
        field(&format!("{path}[{i}]"), m.check_parameters())?;
        parts.push(m);
    }
    Ok(match parts.len() {
        0 => LevyMeasure::zero(),
        1 => parts.pop().unwrap(),
        _ => LevyMeasure::Sum(parts),
    })
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let branching = match &self.branching {
            BranchingSection::Generic { b, c, measure: ms } => {
                let mu = measure("branching.measure", ms)?;
                field("branching", BranchingMechanism::new(*b, *c, mu))?
            }
            BranchingSection::Stable { a, c, sigma, alpha } => {
                field("branching", stable_to_generic(*a, *c, *sigma, *alpha))?
            }
        };
        let nu = measure("immigration.measure", &self.immigration.measure)?;
        let immigration = field(
            "immigration",
            ImmigrationMechanism::new(self.immigration.beta, nu),
        )?;
        let competition = match &self.competition {
            CompetitionSection::None => CompetitionMechanism::none(),
            CompetitionSection::Linear { a } => CompetitionMechanism::Linear { a: *a },
            CompetitionSection::Power { k, p } => CompetitionMechanism::Power { k: *k, p: *p },
            CompetitionSection::Xlog { k } => CompetitionMechanism::XLog { k: *k },
            CompetitionSection::Table { xs, ys } => CompetitionMechanism::Table {
                xs: xs.clone(),
                ys: ys.clone(),
            },
        };
        field(
            "competition",
            ModelSpec::new(branching, immigration, competition),
        )
    }

    pub fn sim_config(&self) -> SimConfig {
        let d = SimConfig::default();
        let s = &self.sim;
        SimConfig {
            dt: s.dt.unwrap_or(d.dt),
            t_end: s.t_end.unwrap_or(d.t_end),
            eps: s.eps.or(d.eps),
            diffusion_correction: s.diffusion_correction.unwrap_or(d.diffusion_correction),
            x_max: s.x_max.unwrap_or(d.x_max),
            seed: s.seed.unwrap_or(d.seed),
            n_paths: s.paths.unwrap_or(d.n_paths),
            record_stride: s.record_stride.unwrap_or(d.record_stride),
            stable_fast_path: s.stable_fast_path.unwrap_or(d.stable_fast_path),
        }
    }

    pub fn stationary_config(&self) -> StationaryConfig {
        let d = StationaryConfig::default();
        let s = &self.sim;
        StationaryConfig {
            burn_in: s.burn_in.unwrap_or(d.burn_in),
            n_samples: s.samples.unwrap_or(d.n_samples),
            spacing: s.spacing.unwrap_or(d.spacing),
            bins: s.bins.unwrap_or(d.bins),
            starts: s.starts.map(|[a, b]| (a, b)).unwrap_or(d.starts),
        }
    }

    pub fn weight(&self) -> Result<Option<WeightFunction>> {
        self.certificate
            .weight
            .as_deref()
            .map(parse_weight)
            .transpose()
    }

    pub fn certificate_options(&self) -> CertificateOptions {
        let mut o = CertificateOptions::default();
        if let Some(g) = self.certificate.grid {
            o.validation_grid = g;
        }
        if let Some(s) = self.certificate.slack {
            o.slack = s;
        }
        o
    }
}

pub fn parse_weight(name: &str) -> Result<WeightFunction> {
    match name {
        "v1" => Ok(WeightFunction::V1),
        "vlog" => Ok(WeightFunction::VLog),
        other => Err(Error::Config(format!(
            "certificate.weight: unknown weight {other:?} (expected v1 or vlog)"
        ))),
    }
}
