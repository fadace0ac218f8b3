//! Forward recurrences of the dynamic linear model for mean OD flows.
//!
//! The state `θ_t` (mean OD flows) follows a local-level random walk,
//! `θ_t = θ_{t−1} + ω_t`, and the observed link counts satisfy
//! `z_t = F_t θ_t + ν_t` with `F_t = Δ P_t` and
//! `V_t = F_t Σ^x F_tᵀ + Δ Σ̂^y_t Δᵀ + Σ^z`.
//! `Σ̂^y_t` is the route-flow covariance evaluated at the one-step predicted
//! mean, floored at [`FLOW_LEVEL_FLOOR`](crate::route_choice::FLOW_LEVEL_FLOOR).

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::network::{incidence_matrix, IncidenceMatrix, LinkId, Network, RouteSet};
use crate::route_choice::{choice_structure, floored_levels, route_flow_covariance_blocks, CostHistory, PhiVector};
use crate::stochastics::{factor_psd, min_eigenvalue, symmetrize, triangularize, PsdFactor};

/// How the prior covariance grows from one day to the next.
#[derive(Debug, Clone, PartialEq)]
pub enum Evolution {
    /// `C̄_t = C_{t−1} + W`.
    Explicit(DMatrix<f64>),
    /// `C̄_t = C_{t−1} / δ`, with `0 < δ ≤ 1`.
    Discount(f64),
}

impl Evolution {
    fn validate(&self, n: usize) -> Result<()> {
        match self {
            Evolution::Explicit(w) => {
                check_dim("evolution matrix rows", n, w.nrows())?;
                check_dim("evolution matrix cols", n, w.ncols())
            }
            Evolution::Discount(d) if *d > 0.0 && *d <= 1.0 => Ok(()),
            Evolution::Discount(d) => Err(Error::Config(format!("discount factor {d} outside (0, 1]"))),
        }
    }
}

/// Fixed quantities of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Realized-flow covariance `Σ^x` (`n × n`).
    pub sigma_x: DMatrix<f64>,
    /// Measurement covariance `Σ^z` over the observed links (`m × m`).
    pub sigma_z: DMatrix<f64>,
    pub evolution: Evolution,
    /// Non-choice probability `π`.
    pub non_choice: f64,
    /// Observed link ids, in the row order of `z_t` and `Σ^z`.
    pub observed_links: Vec<LinkId>,
    pub m0: DVector<f64>,
    pub c0: DMatrix<f64>,
}

impl ModelParams {
    pub fn validate(&self, num_pairs: usize) -> Result<()> {
        let m = self.observed_links.len();
        if m == 0 {
            return Err(Error::Config("at least one observed link is required".into()));
        }
        check_dim("sigma_x", num_pairs, self.sigma_x.nrows())?;
        check_dim("sigma_x", num_pairs, self.sigma_x.ncols())?;
        check_dim("sigma_z", m, self.sigma_z.nrows())?;
        check_dim("sigma_z", m, self.sigma_z.ncols())?;
        check_dim("m0", num_pairs, self.m0.len())?;
        check_dim("c0", num_pairs, self.c0.nrows())?;
        check_dim("c0", num_pairs, self.c0.ncols())?;
        if !(self.non_choice > 0.0 && self.non_choice < 1.0) {
            return Err(Error::Config(format!("non-choice probability {} outside (0, 1)", self.non_choice)));
        }
        self.evolution.validate(num_pairs)
    }
}

/// Moments produced by one forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    /// `m̄_t`
    pub prior_mean: DVector<f64>,
    /// `C̄_t`
    pub prior_cov: DMatrix<f64>,
    /// `f_t`
    pub forecast_mean: DVector<f64>,
    /// `Q_t`
    pub forecast_cov: DMatrix<f64>,
    /// `m_t`
    pub mean: DVector<f64>,
    /// `C_t`
    pub cov: DMatrix<f64>,
    /// `F_t`
    pub assignment: DMatrix<f64>,
    /// `V_t`
    pub obs_cov: DMatrix<f64>,
    /// Lower factor of `C̄_t`.
    pub prior_factor: DMatrix<f64>,
    /// Lower factor of `C_t`.
    pub cov_factor: DMatrix<f64>,
}

pub fn predict(mean: &DVector<f64>, cov: &DMatrix<f64>, evolution: &Evolution) -> (DVector<f64>, DMatrix<f64>) {
    let prior_cov = match evolution {
        Evolution::Explicit(w) => cov + w,
        Evolution::Discount(delta) => cov / *delta,
    };
    (mean.clone(), prior_cov)
}

/// `F_t = Δ P_t` and `V_t = F_t Σ^x F_tᵀ + Δ Σ̂^y Δᵀ + Σ^z`.
pub fn assemble_observation(
    choice_matrix: &DMatrix<f64>,
    incidence: &DMatrix<f64>,
    sigma_x: &DMatrix<f64>,
    sigma_y: &DMatrix<f64>,
    sigma_z: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dim("incidence columns vs routes", choice_matrix.nrows(), incidence.ncols())?;
    check_dim("sigma_x vs OD pairs", choice_matrix.ncols(), sigma_x.nrows())?;
    check_dim("sigma_y vs routes", choice_matrix.nrows(), sigma_y.nrows())?;
    check_dim("sigma_z vs observed links", incidence.nrows(), sigma_z.nrows())?;
    let f = incidence * choice_matrix;
    let v = &f * sigma_x * f.transpose() + incidence * sigma_y * incidence.transpose() + sigma_z;
    Ok((f, symmetrize(&v)))
}

/// One-step forecast `f_t = F_t m̄_t`, `Q_t = F_t C̄_t F_tᵀ + V_t`.
pub fn forecast(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    assignment: &DMatrix<f64>,
    obs_cov: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let f = assignment * prior_mean;
    let q = assignment * prior_cov * assignment.transpose() + obs_cov;
    (f, symmetrize(&q))
}

/// Posterior moments after observing `z`.
pub fn update(
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    assignment: &DMatrix<f64>,
    obs_cov: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let prior_factor = factor_psd(prior_cov)?;
    let out = update_sqrt(prior_mean, prior_factor.lower(), assignment, obs_cov, z)?;
    Ok((out.mean, gram(&out.cov_factor)))
}

struct SqrtUpdate {
    forecast_mean: DVector<f64>,
    forecast_factor: DMatrix<f64>,
    mean: DVector<f64>,
    cov_factor: DMatrix<f64>,
}

/// Square-root Kalman update.
///
/// With `C̄ = S̄ S̄ᵀ` and `V = V½ V½ᵀ`, the array `[[V½, F S̄], [0, S̄]]` is
/// triangularized to `[[Q½, 0], [K, S]]`, giving `Q = Q½ Q½ᵀ`,
/// `C = S Sᵀ` and `m = m̄ + K Q½⁻¹ (z − F m̄)`.
fn update_sqrt(
    prior_mean: &DVector<f64>,
    prior_factor: &DMatrix<f64>,
    assignment: &DMatrix<f64>,
    obs_cov: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<SqrtUpdate> {
    let (m, n) = assignment.shape();
    let v_half = factor_psd(obs_cov)?;
    let mut pre = DMatrix::zeros(m + n, m + n);
    pre.view_mut((0, 0), (m, m)).copy_from(v_half.lower());
    pre.view_mut((0, m), (m, n)).copy_from(&(assignment * prior_factor));
    pre.view_mut((m, m), (n, n)).copy_from(prior_factor);
    let post = triangularize(&pre);
    let q_half = post.view((0, 0), (m, m)).into_owned();
    if q_half.diagonal().iter().any(|d| !(*d > 0.0)) {
        return Err(Error::NotPsd {
            min_eigenvalue: min_eigenvalue(&gram(&q_half)),
        });
    }
    let gain = post.view((m, 0), (n, m));
    let forecast_mean = assignment * prior_mean;
    let standardized = PsdFactor::from_lower(q_half.clone()).solve_lower(&(z - &forecast_mean));
    let mean = prior_mean + gain * standardized;
    Ok(SqrtUpdate {
        forecast_mean,
        forecast_factor: q_half,
        mean,
        cov_factor: post.view((m, m), (n, n)).into_owned(),
    })
}

/// `L Lᵀ`, symmetric by construction.
fn gram(lower: &DMatrix<f64>) -> DMatrix<f64> {
    lower * lower.transpose()
}

/// Lower factor of an explicit evolution covariance; `None` when `W = 0` or
/// under discounting.
pub(crate) fn evolution_factor(evolution: &Evolution) -> Result<Option<DMatrix<f64>>> {
    match evolution {
        Evolution::Explicit(w) if w.iter().any(|&x| x != 0.0) => Ok(Some(factor_psd(w)?.lower().clone())),
        _ => Ok(None),
    }
}

/// Lower factor of `C̄_t` from the factor of `C_{t−1}`.
fn predict_factor(cov_factor: &DMatrix<f64>, evolution: &Evolution, w_half: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    match (evolution, w_half) {
        (Evolution::Discount(delta), _) => cov_factor / delta.sqrt(),
        (Evolution::Explicit(_), Some(w_half)) => {
            let n = cov_factor.nrows();
            let mut wide = DMatrix::zeros(n, 2 * n);
            wide.view_mut((0, 0), (n, n)).copy_from(cov_factor);
            wide.view_mut((0, n), (n, n)).copy_from(w_half);
            triangularize(&wide)
        }
        (Evolution::Explicit(_), None) => cov_factor.clone(),
    }
}

/// Runs the forward filter with an arbitrary observation model.
///
/// `observation_model(t, m̄_t)` returns `(F_t, V_t)` for day `t` (1-based).
/// Covariances are propagated as Cholesky factors, so they stay positive
/// semi-definite even when some directions are never observed and their
/// variance grows without bound.
pub fn filter_with<M>(
    observations: &[DVector<f64>],
    m0: &DVector<f64>,
    c0: &DMatrix<f64>,
    evolution: &Evolution,
    mut observation_model: M,
) -> Result<Vec<FilterStep>>
where
    M: FnMut(usize, &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)>,
{
    let w_half = evolution_factor(evolution)?;
    let c0_factor = factor_psd(c0)?.lower().clone();
    let mut steps: Vec<FilterStep> = Vec::with_capacity(observations.len());
    for (i, z) in observations.iter().enumerate() {
        let t = i + 1;
        let (mean_prev, factor_prev) = match steps.last() {
            Some(s) => (&s.mean, &s.cov_factor),
            None => (m0, &c0_factor),
        };
        let prior_mean = mean_prev.clone();
        let prior_factor = predict_factor(factor_prev, evolution, w_half.as_ref());
        let (assignment, obs_cov) = observation_model(t, &prior_mean).map_err(|e| e.at_time(t))?;
        check_dim("observation length", assignment.nrows(), z.len()).map_err(|e| e.at_time(t))?;
        let out = update_sqrt(&prior_mean, &prior_factor, &assignment, &obs_cov, z).map_err(|e| e.at_time(t))?;
        steps.push(FilterStep {
            prior_mean,
            prior_cov: gram(&prior_factor),
            forecast_mean: out.forecast_mean,
            forecast_cov: gram(&out.forecast_factor),
            mean: out.mean,
            cov: gram(&out.cov_factor),
            assignment,
            obs_cov,
            prior_factor,
            cov_factor: out.cov_factor,
        });
    }
    Ok(steps)
}

/// Full forward pass for route-choice sensitivities `phi`.
///
/// Per day: predict, build `P_t` from `phi` and the cost history, assemble
/// `F_t` and `V_t` (with `Σ̂^y` at the floored predicted mean), forecast and
/// update.
pub fn filter_pass(
    observations: &[DVector<f64>],
    history: &CostHistory,
    phi: &PhiVector,
    params: &ModelParams,
    route_set: &RouteSet,
    incidence: &IncidenceMatrix,
) -> Result<Vec<FilterStep>> {
    params.validate(route_set.num_pairs())?;
    check_dim("observed links", params.observed_links.len(), incidence.selected().nrows())?;
    filter_with(observations, &params.m0, &params.c0, &params.evolution, |t, prior_mean| {
        let choice = choice_structure(phi, history, params.non_choice, route_set, t as i64)?;
        let sigma_y = route_flow_covariance_blocks(&floored_levels(prior_mean), &choice, route_set);
        assemble_observation(choice.matrix(), incidence.selected(), &params.sigma_x, &sigma_y, &params.sigma_z)
    })
}

/// Everything the estimator needs besides `phi`, bundled and validated.
#[derive(Debug, Clone)]
pub struct Dlm {
    pub route_set: RouteSet,
    pub incidence: IncidenceMatrix,
    pub params: ModelParams,
    pub history: CostHistory,
    /// `z_1..z_T` over `params.observed_links`.
    pub observations: Vec<DVector<f64>>,
}

impl Dlm {
    pub fn new(
        network: &Network,
        route_set: RouteSet,
        params: ModelParams,
        history: CostHistory,
        observations: Vec<DVector<f64>>,
    ) -> Result<Self> {
        params.validate(route_set.num_pairs())?;
        let incidence = incidence_matrix(&route_set, network, &params.observed_links)?;
        check_dim("cost history routes", route_set.len(), history.num_routes())?;
        for z in &observations {
            check_dim("observation length", params.observed_links.len(), z.len())?;
        }
        if observations.is_empty() {
            return Err(Error::Config("no observation days".into()));
        }
        Ok(Self {
            route_set,
            incidence,
            params,
            history,
            observations,
        })
    }

    pub fn periods(&self) -> usize {
        self.observations.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.route_set.num_pairs()
    }

    pub fn filter(&self, phi: &PhiVector) -> Result<Vec<FilterStep>> {
        filter_pass(&self.observations, &self.history, phi, &self.params, &self.route_set, &self.incidence)
    }
}
