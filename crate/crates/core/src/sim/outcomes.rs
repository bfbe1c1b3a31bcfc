use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{compute_exposure, ExposureKind, ExposureSpec, InterferenceGraph};
use crate::linalg::Matrix;
use crate::panel::TreatmentMatrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFamily {
    /// `s H + 2W + X1 + X2 + e`
    #[default]
    LinearGeneral,
    /// `s g(M) + 2W + X1 + X2 + e`
    NonlinearGeneral,
    /// `s (2W + 1) H + 2W + X1 + X2 + e`
    LinearTfe,
    /// `s (2W + 1) g(M) + 2W + X1 X2 + 1{X1 > 0.5, X2 > 3.5} + e`
    NonlinearTfe,
}

impl OutcomeFamily {
    pub fn tag(self) -> &'static str {
        match self {
            OutcomeFamily::LinearGeneral => "linear_general",
            OutcomeFamily::NonlinearGeneral => "nonlinear_general",
            OutcomeFamily::LinearTfe => "linear_tfe",
            OutcomeFamily::NonlinearTfe => "nonlinear_tfe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModelConfig {
    #[serde(default)]
    pub family: OutcomeFamily,
    pub signal_strength: f64,
    /// Within-unit error correlation across experiments.
    #[serde(default)]
    pub common_variance_fraction: f64,
    /// Additive per-experiment shifts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_effects: Option<Vec<f64>>,
}

/// `m / 20 + 5 exp(min(m, 20) / 50)`
pub fn nonlinear_exposure_term(m: f64) -> f64 {
    m / 20.0 + 5.0 * (m.min(20.0) / 50.0).exp()
}

/// `n x 2` covariates: a N(0.5, 1) column and a Poisson(3) column.
pub fn gen_covariates(n: usize, rng: &mut Rng) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::input("covariates need at least one unit"));
    }
    let normal = Normal::new(0.5, 1.0).expect("valid normal");
    let poisson = Poisson::new(3.0).expect("valid poisson");
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    for _ in 0..n {
        x1.push(normal.sample(rng));
        x2.push(poisson.sample(rng));
    }
    Matrix::from_columns(n, &[x1, x2])
}

/// Independent standard normal draws from which errors for any correlation
/// are assembled, so different correlations can share randomness.
#[derive(Debug, Clone)]
pub struct ErrorDraws {
    shared: Vec<f64>,
    own: Matrix,
}

impl ErrorDraws {
    pub fn draw(n: usize, k: usize, rng: &mut Rng) -> Self {
        let mut shared = Vec::with_capacity(n);
        let mut own = Matrix::zeros(n, k);
        for i in 0..n {
            shared.push(rng.sample::<f64, _>(StandardNormal));
            for e in 0..k {
                own.set(i, e, rng.sample::<f64, _>(StandardNormal));
            }
        }
        ErrorDraws { shared, own }
    }

    /// `sqrt(rho) z_i + sqrt(1 - rho) z_ik`
    pub fn combine(&self, rho: f64) -> Result<Matrix> {
        check_rho(rho)?;
        let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
        let (n, k) = (self.own.rows(), self.own.cols());
        let mut out = Matrix::zeros(n, k);
        for e in 0..k {
            for i in 0..n {
                out.set(i, e, a * self.shared[i] + b * self.own.get(i, e));
            }
        }
        Ok(out)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::input(format!(
            "common variance fraction {rho} outside [0, 1)"
        )))
    }
}

/// Equicorrelated standard normal errors, `n x k`.
pub fn gen_errors(n: usize, k: usize, rho: f64, rng: &mut Rng) -> Result<Matrix> {
    check_rho(rho)?;
    ErrorDraws::draw(n, k, rng).combine(rho)
}

/// Outcomes for the given treatments, covariates and errors.
pub fn outcomes_with_errors(
    graph: &InterferenceGraph,
    w: &TreatmentMatrix,
    x: &Matrix,
    model: &OutcomeModelConfig,
    errors: &Matrix,
) -> Result<Matrix> {
    let (n, k) = (w.n(), w.k());
    if graph.n() != n || x.rows() != n || errors.rows() != n || errors.cols() != k {
        return Err(Error::input("outcome model inputs have inconsistent sizes"));
    }
    if x.cols() < 2 {
        return Err(Error::input("outcome models need two covariate columns"));
    }
    check_rho(model.common_variance_fraction)?;
    if let Some(u) = &model.time_effects {
        if u.len() != k {
            return Err(Error::input(format!(
                "{} time effects for {k} experiments",
                u.len()
            )));
        }
    }
    let s = model.signal_strength;
    let nonlinear = matches!(
        model.family,
        OutcomeFamily::NonlinearGeneral | OutcomeFamily::NonlinearTfe
    );
    let kind = if nonlinear {
        ExposureKind::NumFrds
    } else {
        ExposureKind::FracFrds
    };
    let (x1, x2) = (x.col(0), x.col(1));
    let mut y = Matrix::zeros(n, k);
    for e in 0..k {
        let wk = w.column(e);
        let expo = compute_exposure(graph, wk, ExposureSpec { kind })?.values;
        let shift = model.time_effects.as_ref().map_or(0.0, |u| u[e]);
        for i in 0..n {
            let wi = f64::from(wk[i]);
            let h = if nonlinear {
                nonlinear_exposure_term(expo[i])
            } else {
                expo[i]
            };
            let interaction = match model.family {
                OutcomeFamily::LinearTfe | OutcomeFamily::NonlinearTfe => 2.0 * wi + 1.0,
                _ => 1.0,
            };
            let base = if model.family == OutcomeFamily::NonlinearTfe {
                x1[i] * x2[i] + f64::from(u8::from(x1[i] > 0.5 && x2[i] > 3.5))
            } else {
                x1[i] + x2[i]
            };
            y.set(i, e, s * interaction * h + 2.0 * wi + base + shift + errors.get(i, e));
        }
    }
    Ok(y)
}

/// Draws errors and returns outcomes under `model`.
pub fn simulate_outcomes(
    graph: &InterferenceGraph,
    w: &TreatmentMatrix,
    x: &Matrix,
    model: &OutcomeModelConfig,
    rng: &mut Rng,
) -> Result<Matrix> {
    let eps = gen_errors(w.n(), w.k(), model.common_variance_fraction, rng)?;
    outcomes_with_errors(graph, w, x, model, &eps)
}
