//! Gibbs sampler over mean OD flows and route-choice sensitivities.
//!
//! Each iteration draws a full trajectory `θ_{1:T}` by forward filtering
//! backward sampling given the current `φ`, then updates `φ` with one
//! random-walk Metropolis-Hastings step conditional on that trajectory.

use nalgebra::{DMatrix, DVector};

use crate::dlm::{assemble_observation, evolution_factor, Dlm, Evolution, FilterStep};
use crate::error::{check_dim, Error, Result};
use crate::route_choice::{choice_structure, floored_levels, route_flow_covariance_blocks, PhiVector};
use crate::stochastics::{factor_psd, mvn_logpdf_factored, mvn_sample, mvn_sample_factored, min_eigenvalue, triangularize, PsdFactor, RngStream};

/// Prior on `φ`. All variants are improper (flat) on their support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiPrior {
    #[default]
    Flat,
    /// Every component non-negative.
    NonNegative,
    /// `φ_1 ≥ φ_2 ≥ … ≥ φ_r ≥ 0`.
    Decreasing,
}

impl PhiPrior {
    pub fn log_density(&self, phi: &[f64]) -> f64 {
        let ok = match self {
            PhiPrior::Flat => true,
            PhiPrior::NonNegative => phi.iter().all(|&v| v >= 0.0),
            PhiPrior::Decreasing => {
                phi.iter().all(|&v| v >= 0.0) && phi.windows(2).all(|w| w[0] >= w[1])
            }
        };
        if ok {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Proposal kernel for the Metropolis-Hastings step.
pub trait Proposal {
    fn propose(&self, current: &DVector<f64>, rng: &mut RngStream) -> DVector<f64>;

    /// `ln q(to | from)` up to a constant; only differences are used.
    fn log_density(&self, to: &DVector<f64>, from: &DVector<f64>) -> f64;

    /// Symmetric kernels skip the `q` correction.
    fn is_symmetric(&self) -> bool {
        false
    }
}

/// Gaussian random walk `φ' ~ N(φ, Σ)`.
#[derive(Debug, Clone)]
pub struct RandomWalk {
    factor: PsdFactor,
}

impl RandomWalk {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            factor: factor_psd(cov)?,
        })
    }
}

impl Proposal for RandomWalk {
    fn propose(&self, current: &DVector<f64>, rng: &mut RngStream) -> DVector<f64> {
        mvn_sample_factored(current, &self.factor, rng)
    }

    fn log_density(&self, to: &DVector<f64>, from: &DVector<f64>) -> f64 {
        mvn_logpdf_factored(to, from, &self.factor)
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    /// Total Gibbs iterations, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in draw.
    pub thin: usize,
    /// Store the full trajectory of every `theta_thin`-th kept draw.
    pub theta_thin: usize,
    pub proposal_cov: DMatrix<f64>,
    pub phi_init: Vec<f64>,
    /// `θ^{(0)}_t ~ N(theta_init_mean · 1, theta_init_var · I)`.
    pub theta_init_mean: f64,
    pub theta_init_var: f64,
    pub phi_prior: PhiPrior,
    pub seed: u64,
    pub stream: u64,
}

impl McmcConfig {
    /// 10 000 iterations, 2 000 burn-in, proposal `0.04 I`, `φ^{(0)} = 1`,
    /// `θ^{(0)} ~ N(100·1, 100 I)`, flat prior on `φ`.
    pub fn reference_defaults(memory: usize, seed: u64) -> Self {
        Self {
            iterations: 10_000,
            burn_in: 2_000,
            thin: 1,
            theta_thin: 10,
            proposal_cov: DMatrix::identity(memory, memory) * 0.04,
            phi_init: vec![1.0; memory],
            theta_init_mean: 100.0,
            theta_init_var: 100.0,
            phi_prior: PhiPrior::Flat,
            seed,
            stream: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.theta_thin == 0 {
            return Err(Error::Config("thinning factors must be positive".into()));
        }
        if self.phi_init.is_empty() {
            return Err(Error::Config("phi_init is empty".into()));
        }
        check_dim("proposal covariance", self.phi_init.len(), self.proposal_cov.nrows())?;
        check_dim("proposal covariance", self.phi_init.len(), self.proposal_cov.ncols())?;
        if self.theta_init_var < 0.0 {
            return Err(Error::Config("theta_init_var must be non-negative".into()));
        }
        Ok(())
    }
}

/// Output of [`gibbs_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub initial_phi: DVector<f64>,
    pub initial_log_posterior: f64,
    /// `φ^{(i)}` for `i = 1..=iterations`.
    pub phi_chain: Vec<DVector<f64>>,
    /// `ln p(z | φ^{(i)}, θ^{(i)}) + ln p(φ^{(i)})`.
    pub log_posterior: Vec<f64>,
    pub accepted: Vec<bool>,
    pub burn_in: usize,
    pub thin: usize,
    /// 0-based positions in `phi_chain` of the kept draws.
    pub kept: Vec<usize>,
    /// Average of the kept `θ` trajectories.
    pub theta_mean: Vec<DVector<f64>>,
    /// `(iteration, θ_{1:T})` for the stored subset of kept draws.
    pub theta_samples: Vec<(usize, Vec<DVector<f64>>)>,
}

impl Trace {
    pub fn iterations(&self) -> usize {
        self.phi_chain.len()
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }

    pub fn rejected_count(&self) -> usize {
        self.accepted.len() - self.accepted_count()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            0.0
        } else {
            self.accepted_count() as f64 / self.accepted.len() as f64
        }
    }

    pub fn phi_samples(&self) -> Vec<&DVector<f64>> {
        self.kept.iter().map(|&i| &self.phi_chain[i]).collect()
    }

    /// Kept draws of component `c` of `φ`.
    pub fn phi_component(&self, c: usize) -> Vec<f64> {
        self.kept.iter().map(|&i| self.phi_chain[i][c]).collect()
    }

    pub fn memory(&self) -> usize {
        self.initial_phi.len()
    }
}

/// Draws `θ_{1:T}` from its joint smoothing distribution.
///
/// `θ_T ~ N(m_T, C_T)`, then backwards `θ_t ~ N(h_t, H_t)` with
/// `B_t = C_t C̄_{t+1}⁻¹`, `h_t = m_t + B_t(θ_{t+1} − m̄_{t+1})` and
/// `H_t = C_t − B_t C̄_{t+1} B_tᵀ`. `H_t` is sampled through the factor of
/// `(I − B_t) C_t (I − B_t)ᵀ + B_t W B_tᵀ`, an equivalent form that cannot
/// lose definiteness. Under a discount factor, `B_t = δ I` and
/// `H_t = (1 − δ) C_t`.
pub fn ffbs(steps: &[FilterStep], evolution: &Evolution, rng: &mut RngStream) -> Result<Vec<DVector<f64>>> {
    let periods = steps.len();
    let Some(last) = steps.last() else {
        return Ok(Vec::new());
    };
    let w_half = evolution_factor(evolution)?;
    let n = last.mean.len();
    let mut out = vec![DVector::zeros(n); periods];
    out[periods - 1] = mvn_sample_factored(&last.mean, &PsdFactor::from_lower(last.cov_factor.clone()), rng);
    for i in (0..periods - 1).rev() {
        let cur = &steps[i];
        let next = &steps[i + 1];
        let (mean, h_half) = match evolution {
            Evolution::Discount(delta) => (
                &cur.mean + (&out[i + 1] - &next.prior_mean) * *delta,
                &cur.cov_factor * (1.0 - delta).sqrt(),
            ),
            Evolution::Explicit(_) => {
                if next.prior_factor.diagonal().iter().any(|d| !(*d > 0.0)) {
                    return Err(Error::NotPsd {
                        min_eigenvalue: min_eigenvalue(&next.prior_cov),
                    }
                    .at_time(i + 2));
                }
                // C̄ symmetric, so B_tᵀ = C̄_{t+1}⁻¹ C_t.
                let gain = PsdFactor::from_lower(next.prior_factor.clone()).solve_matrix(&cur.cov).transpose();
                let mean = &cur.mean + &gain * (&out[i + 1] - &next.prior_mean);
                let residual = (DMatrix::identity(n, n) - &gain) * &cur.cov_factor;
                let h_half = match &w_half {
                    Some(w_half) => {
                        let mut wide = DMatrix::zeros(n, 2 * n);
                        wide.view_mut((0, 0), (n, n)).copy_from(&residual);
                        wide.view_mut((0, n), (n, n)).copy_from(&(&gain * w_half));
                        triangularize(&wide)
                    }
                    None => triangularize(&residual),
                };
                (mean, h_half)
            }
        };
        out[i] = mvn_sample_factored(&mean, &PsdFactor::from_lower(h_half), rng);
    }
    Ok(out)
}

/// `Σ_t ln N(z_t; F_t(φ) θ_t, V_t(φ, θ_t))`.
///
/// The route-flow covariance inside `V_t` uses `max(θ_jt, 1)` as flow level.
pub fn log_likelihood_phi(phi: &PhiVector, thetas: &[DVector<f64>], dlm: &Dlm) -> Result<f64> {
    check_dim("theta trajectory length", dlm.periods(), thetas.len())?;
    let mut total = 0.0;
    for (i, (theta, z)) in thetas.iter().zip(&dlm.observations).enumerate() {
        let t = i + 1;
        let term = (|| {
            let choice = choice_structure(phi, &dlm.history, dlm.params.non_choice, &dlm.route_set, t as i64)?;
            let sigma_y = route_flow_covariance_blocks(&floored_levels(theta), &choice, &dlm.route_set);
            let (f, v) = assemble_observation(
                choice.matrix(),
                dlm.incidence.selected(),
                &dlm.params.sigma_x,
                &sigma_y,
                &dlm.params.sigma_z,
            )?;
            let factor = factor_psd(&v)?;
            Ok(mvn_logpdf_factored(z, &(f * theta), &factor))
        })()
        .map_err(|e: Error| e.at_time(t))?;
        total += term;
    }
    Ok(total)
}

/// Result of one Metropolis-Hastings transition.
#[derive(Debug, Clone, PartialEq)]
pub struct MhOutcome {
    pub state: DVector<f64>,
    pub accepted: bool,
    /// Log target at the returned state.
    pub log_target: f64,
}

/// Generic Metropolis-Hastings transition for a log target.
///
/// A candidate with non-finite log target is rejected.
pub fn metropolis_step<P, T>(
    current: &DVector<f64>,
    current_log_target: f64,
    mut log_target: T,
    proposal: &P,
    rng: &mut RngStream,
) -> MhOutcome
where
    P: Proposal + ?Sized,
    T: FnMut(&DVector<f64>) -> f64,
{
    let candidate = proposal.propose(current, rng);
    let u = rng.uniform();
    let candidate_log_target = log_target(&candidate);
    if !candidate_log_target.is_finite() {
        return MhOutcome {
            state: current.clone(),
            accepted: false,
            log_target: current_log_target,
        };
    }
    let mut log_ratio = candidate_log_target - current_log_target;
    if !proposal.is_symmetric() {
        log_ratio += proposal.log_density(current, &candidate) - proposal.log_density(&candidate, current);
    }
    // A non-finite current target (e.g. outside a constrained prior) moves to any finite candidate.
    if u.ln() < log_ratio || !current_log_target.is_finite() {
        MhOutcome {
            state: candidate,
            accepted: true,
            log_target: candidate_log_target,
        }
    } else {
        MhOutcome {
            state: current.clone(),
            accepted: false,
            log_target: current_log_target,
        }
    }
}

/// Log posterior of `φ` given `θ_{1:T}`; `-inf` where the likelihood fails.
pub fn log_posterior_phi(phi: &DVector<f64>, thetas: &[DVector<f64>], dlm: &Dlm, prior: PhiPrior) -> f64 {
    let lp = prior.log_density(phi.as_slice());
    if !lp.is_finite() || !phi.iter().all(|v| v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    match log_likelihood_phi(&PhiVector::from(phi), thetas, dlm) {
        Ok(ll) if ll.is_finite() => ll + lp,
        _ => f64::NEG_INFINITY,
    }
}

/// Metropolis-Hastings update of `φ` conditional on `θ_{1:T}`.
pub fn mh_step<P: Proposal + ?Sized>(
    current: &DVector<f64>,
    thetas: &[DVector<f64>],
    dlm: &Dlm,
    proposal: &P,
    prior: PhiPrior,
    rng: &mut RngStream,
) -> MhOutcome {
    let current_lp = log_posterior_phi(current, thetas, dlm, prior);
    metropolis_step(current, current_lp, |phi| log_posterior_phi(phi, thetas, dlm, prior), proposal, rng)
}

/// Runs the sampler; reproducible for a given `(seed, stream)`.
pub fn gibbs_run(config: &McmcConfig, dlm: &Dlm) -> Result<Trace> {
    config.validate()?;
    let n = dlm.num_pairs();
    let periods = dlm.periods();
    let mut rng = RngStream::new(config.seed, config.stream);
    let proposal = RandomWalk::new(&config.proposal_cov)?;

    let mut phi = DVector::from_vec(config.phi_init.clone());
    let init_mean = DVector::from_element(n, config.theta_init_mean);
    let init_cov = DMatrix::identity(n, n) * config.theta_init_var;
    let theta_init = (0..periods)
        .map(|_| mvn_sample(&init_mean, &init_cov, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let initial_log_posterior = log_posterior_phi(&phi, &theta_init, dlm, config.phi_prior);

    let mut trace = Trace {
        initial_phi: phi.clone(),
        initial_log_posterior,
        phi_chain: Vec::with_capacity(config.iterations),
        log_posterior: Vec::with_capacity(config.iterations),
        accepted: Vec::with_capacity(config.iterations),
        burn_in: config.burn_in,
        thin: config.thin,
        kept: Vec::new(),
        theta_mean: vec![DVector::zeros(n); periods],
        theta_samples: Vec::new(),
    };

    for iteration in 1..=config.iterations {
        let step = (|| {
            let steps = dlm.filter(&PhiVector::from(&phi))?;
            let thetas = ffbs(&steps, &dlm.params.evolution, &mut rng)?;
            let outcome = mh_step(&phi, &thetas, dlm, &proposal, config.phi_prior, &mut rng);
            Ok((thetas, outcome))
        })()
        .map_err(|e: Error| e.at_iteration(iteration))?;
        let (thetas, outcome) = step;
        phi = outcome.state;
        trace.phi_chain.push(phi.clone());
        trace.log_posterior.push(outcome.log_target);
        trace.accepted.push(outcome.accepted);

        if iteration > config.burn_in && (iteration - config.burn_in - 1) % config.thin == 0 {
            let kept_index = trace.kept.len();
            trace.kept.push(iteration - 1);
            for (acc, theta) in trace.theta_mean.iter_mut().zip(&thetas) {
                *acc += theta;
            }
            if kept_index % config.theta_thin == 0 {
                trace.theta_samples.push((iteration, thetas));
            }
        }
    }
    let kept = trace.kept.len() as f64;
    for acc in &mut trace.theta_mean {
        *acc /= kept;
    }
    Ok(trace)
}

/// Shortest interval covering `⌈p·N⌉` of the sorted samples.
pub fn hpd_interval(samples: &[f64], probability: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Config("HPD interval of an empty sample".into()));
    }
    if !(probability > 0.0 && probability < 1.0) {
        return Err(Error::Config(format!("HPD probability {probability} outside (0, 1)")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let width = ((probability * n as f64).ceil() as usize).clamp(1, n);
    let (mut lo, mut hi) = (sorted[0], sorted[width - 1]);
    for i in 1..=n - width {
        let (a, b) = (sorted[i], sorted[i + width - 1]);
        if b - a < hi - lo {
            lo = a;
            hi = b;
        }
    }
    Ok((lo, hi))
}

/// Mean squared error over all pairs and days.
pub fn mean_squared_error(estimate: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<f64> {
    check_dim("MSE periods", truth.len(), estimate.len())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (e, t) in estimate.iter().zip(truth) {
        check_dim("MSE pairs", t.len(), e.len())?;
        sum += (e - t).norm_squared();
        count += t.len();
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub phi_mean: Vec<f64>,
    pub phi_hpd: Vec<(f64, f64)>,
    pub acceptance_rate: f64,
    pub samples: usize,
    pub theta_mean: Vec<DVector<f64>>,
    pub mse: Option<f64>,
}

pub const HPD_PROBABILITY: f64 = 0.95;

pub fn posterior_summary(trace: &Trace, truth: Option<&[DVector<f64>]>) -> Result<PosteriorSummary> {
    if trace.kept.is_empty() {
        return Err(Error::Config("trace has no kept samples".into()));
    }
    let mut phi_mean = Vec::with_capacity(trace.memory());
    let mut phi_hpd = Vec::with_capacity(trace.memory());
    for c in 0..trace.memory() {
        let xs = trace.phi_component(c);
        phi_mean.push(xs.iter().sum::<f64>() / xs.len() as f64);
        phi_hpd.push(hpd_interval(&xs, HPD_PROBABILITY)?);
    }
    let mse = truth.map(|t| mean_squared_error(&trace.theta_mean, t)).transpose()?;
    Ok(PosteriorSummary {
        phi_mean,
        phi_hpd,
        acceptance_rate: trace.acceptance_rate(),
        samples: trace.kept.len(),
        theta_mean: trace.theta_mean.clone(),
        mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hpd_constant_samples() {
        assert_eq!(hpd_interval(&[2.5; 40], 0.95).unwrap(), (2.5, 2.5));
    }

    #[test]
    fn hpd_uniform_grid() {
        let n = 1001;
        let step = 1.0 / (n - 1) as f64;
        let grid: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        let (lo, hi) = hpd_interval(&grid, 0.95).unwrap();
        assert!(((hi - lo) - 0.95).abs() <= step + 1e-12);
    }

    #[test]
    fn hpd_standard_normal() {
        let mut rng = RngStream::new(5, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.standard_normal()).collect();
        let (lo, hi) = hpd_interval(&xs, 0.95).unwrap();
        assert!((lo + 1.96).abs() < 0.05 && (hi - 1.96).abs() < 0.05, "({lo}, {hi})");
    }

    #[test]
    fn hpd_errors() {
        assert!(hpd_interval(&[], 0.95).is_err());
        assert!(hpd_interval(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn mse_cases() {
        let truth = vec![DVector::from_vec(vec![10.0, 20.0]), DVector::from_vec(vec![30.0, 40.0])];
        assert_eq!(mean_squared_error(&truth, &truth).unwrap(), 0.0);
        let shifted: Vec<_> = truth.iter().map(|t| t.add_scalar(1.0)).collect();
        assert_eq!(mean_squared_error(&shifted, &truth).unwrap(), 1.0);
    }

    #[test]
    fn prior_supports() {
        assert_eq!(PhiPrior::Flat.log_density(&[-3.0, 2.0]), 0.0);
        assert_eq!(PhiPrior::NonNegative.log_density(&[-3.0, 2.0]), f64::NEG_INFINITY);
        assert_eq!(PhiPrior::Decreasing.log_density(&[0.3, 0.5]), f64::NEG_INFINITY);
        assert_eq!(PhiPrior::Decreasing.log_density(&[0.5, 0.3]), 0.0);
    }

    #[test]
    fn identical_candidate_always_accepted() {
        struct Stay;
        impl Proposal for Stay {
            fn propose(&self, current: &DVector<f64>, _: &mut RngStream) -> DVector<f64> {
                current.clone()
            }
            fn log_density(&self, _: &DVector<f64>, _: &DVector<f64>) -> f64 {
                0.0
            }
        }
        let mut rng = RngStream::new(1, 0);
        let x = DVector::from_vec(vec![0.2, -0.4]);
        for _ in 0..1000 {
            let out = metropolis_step(&x, -3.0, |_| -3.0, &Stay, &mut rng);
            assert!(out.accepted);
        }
    }

    #[test]
    fn uphill_moves_always_accepted() {
        let proposal = RandomWalk::new(&(DMatrix::identity(1, 1) * 0.25)).unwrap();
        let mut rng = RngStream::new(9, 0);
        let start = DVector::from_element(1, 0.0);
        // Strictly increasing target: any positive step is uphill.
        let target = |x: &DVector<f64>| x[0];
        let mut uphill = 0;
        for _ in 0..2000 {
            let out = metropolis_step(&start, target(&start), target, &proposal, &mut rng);
            if out.state[0] > 0.0 {
                uphill += 1;
                assert!(out.accepted);
            }
        }
        assert!(uphill > 800);
    }

    #[test]
    fn non_finite_candidate_rejected() {
        let proposal = RandomWalk::new(&DMatrix::identity(1, 1)).unwrap();
        let mut rng = RngStream::new(3, 0);
        let x = DVector::from_element(1, 1.0);
        let out = metropolis_step(&x, 0.0, |_| f64::NAN, &proposal, &mut rng);
        assert!(!out.accepted);
        assert_eq!(out.state, x);
    }

    #[test]
    fn asymmetric_proposal_uses_q_correction() {
        // Independence sampler from N(0, 4) targeting N(0, 1): the q terms are essential.
        struct Wide;
        impl Proposal for Wide {
            fn propose(&self, _: &DVector<f64>, rng: &mut RngStream) -> DVector<f64> {
                DVector::from_element(1, 2.0 * rng.standard_normal())
            }
            fn log_density(&self, to: &DVector<f64>, _: &DVector<f64>) -> f64 {
                -to[0] * to[0] / 8.0
            }
        }
        let mut rng = RngStream::new(21, 0);
        let target = |x: &DVector<f64>| -0.5 * x[0] * x[0];
        let mut x = DVector::from_element(1, 0.0);
        let mut lp = target(&x);
        let n = 50_000;
        let mut second = 0.0;
        for _ in 0..n {
            let out = metropolis_step(&x, lp, target, &Wide, &mut rng);
            x = out.state;
            lp = out.log_target;
            second += x[0] * x[0];
        }
        let var = second / n as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn stationary_distribution_matches_target() {
        use statrs::distribution::{ContinuousCDF, Normal};

        // Target: standard normal. Kolmogorov-Smirnov distance of the chain.
        let proposal = RandomWalk::new(&(DMatrix::identity(1, 1) * 5.76)).unwrap();
        let mut rng = RngStream::new(2718, 0);
        let target = |x: &DVector<f64>| -0.5 * x[0] * x[0];
        let mut x = DVector::from_element(1, 0.0);
        let mut lp = target(&x);
        for _ in 0..1000 {
            let out = metropolis_step(&x, lp, target, &proposal, &mut rng);
            x = out.state;
            lp = out.log_target;
        }
        let n = 100_000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let out = metropolis_step(&x, lp, target, &proposal, &mut rng);
            x = out.state;
            lp = out.log_target;
            draws.push(x[0]);
        }
        draws.sort_by(f64::total_cmp);
        let std_normal = Normal::standard();
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cdf = std_normal.cdf(v);
                (cdf - i as f64 / n as f64).abs().max((cdf - (i + 1) as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS distance {ks}");
    }

    #[test]
    fn config_validation() {
        let mut c = McmcConfig::reference_defaults(2, 1);
        assert!(c.validate().is_ok());
        c.iterations = 0;
        assert!(c.validate().is_err());
        let mut c = McmcConfig::reference_defaults(2, 1);
        c.burn_in = c.iterations;
        assert!(c.validate().is_err());
        let mut c = McmcConfig::reference_defaults(2, 1);
        c.proposal_cov = DMatrix::identity(3, 3);
        assert!(c.validate().is_err());
    }
}
