//! Reference optimizers that contextualise the main attack.
//!
//! Three baselines live here:
//!
//! * [`generic_alm`] — the classical augmented-Lagrangian method on small
//!   smooth problems with one inequality constraint. Used to validate the
//!   penalty functions against analytic optima and multipliers.
//! * [`penalty_attack`] — a fixed-penalty attack that minimises
//!   `D(x~, x) + c * max(d(x~), 0)` and tunes the weight `c` by the usual
//!   grow-then-bisect line search across rounds. The standard of comparison
//!   for the main attack's propagation efficiency.
//! * [`minimal_via_binary_search`] — turns any budget-constrained attack
//!   into a minimal-perturbation attack by bisecting the budget.
//!   [`pgd_l2_budget_attack`] provides a projected-gradient budget attack
//!   to plug into it.

use crate::constraint::ConstraintKind;
use crate::distance::DistanceSpec;
use crate::nn::{Model, PropagationCounter};
use crate::penalty::PenaltyKind;
use crate::solver::{init_step_size, AttackResult, OptimizerConfig, RmsPropMomentum};
use crate::tensor::Tensor;
use crate::{Error, Result};

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Known optimum of a test problem, for validation.
#[derive(Clone, Debug)]
pub struct AnalyticSolution {
    pub x: Vec<f64>,
    /// KKT multiplier of the constraint, when it is active.
    pub multiplier: Option<f64>,
}

/// A smooth objective with a single inequality constraint `h(x) <= 0`.
pub struct SmoothProblem {
    pub dimension: usize,
    pub objective: ScalarFn,
    pub objective_grad: GradFn,
    pub constraint: ScalarFn,
    pub constraint_grad: GradFn,
    /// Start of the optimization (origin when absent).
    pub initial_point: Option<Vec<f64>>,
    pub solution: Option<AnalyticSolution>,
}

impl SmoothProblem {
    /// `min ||x||^2  s.t.  1 - x_1 <= 0`: projects the origin onto a
    /// halfspace. Optimum `(1, 0, ..., 0)` with multiplier 2.
    pub fn halfspace_projection(dimension: usize) -> Self {
        SmoothProblem {
            dimension,
            objective: Box::new(|x| x.iter().map(|v| v * v).sum()),
            objective_grad: Box::new(|x| x.iter().map(|v| 2.0 * v).collect()),
            constraint: Box::new(|x| 1.0 - x[0]),
            constraint_grad: Box::new(|x| {
                let mut g = vec![0.0; x.len()];
                g[0] = -1.0;
                g
            }),
            initial_point: None,
            solution: Some(AnalyticSolution {
                x: {
                    let mut x = vec![0.0; dimension];
                    x[0] = 1.0;
                    x
                },
                multiplier: Some(2.0),
            }),
        }
    }

    /// `min (x - 2)^2  s.t.  x - 1 <= 0`: the unconstrained optimum sits
    /// outside the feasible set, so the solution is the boundary point 1
    /// with multiplier 2.
    pub fn boundary_quadratic() -> Self {
        SmoothProblem {
            dimension: 1,
            objective: Box::new(|x| (x[0] - 2.0).powi(2)),
            objective_grad: Box::new(|x| vec![2.0 * (x[0] - 2.0)]),
            constraint: Box::new(|x| x[0] - 1.0),
            constraint_grad: Box::new(|_| vec![1.0]),
            initial_point: None,
            solution: Some(AnalyticSolution {
                x: vec![1.0],
                multiplier: Some(2.0),
            }),
        }
    }

    /// `min (x - 0.5)^2  s.t.  x - 1 <= 0`: the constraint is inactive, so
    /// the multiplier must fall to (nearly) zero.
    pub fn inactive_constraint() -> Self {
        SmoothProblem {
            dimension: 1,
            objective: Box::new(|x| (x[0] - 0.5).powi(2)),
            objective_grad: Box::new(|x| vec![2.0 * (x[0] - 0.5)]),
            constraint: Box::new(|x| x[0] - 1.0),
            constraint_grad: Box::new(|_| vec![1.0]),
            initial_point: None,
            solution: Some(AnalyticSolution {
                x: vec![0.5],
                multiplier: None,
            }),
        }
    }
}

/// Options of the generic augmented-Lagrangian method.
#[derive(Clone, Copy, Debug)]
pub struct AlmOptions {
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Inner loop stops when the Lagrangian gradient norm drops below this.
    pub inner_tolerance: f64,
    /// Penalty-parameter growth when the constraint stalls (typically
    /// between 2 and 100).
    pub rho_factor: f64,
    /// Outer improvement test: grow `rho` when
    /// `h(x_new) > tau_outer * h(x_old)`.
    pub tau_outer: f64,
    pub mu_init: f64,
    pub rho_init: f64,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl Default for AlmOptions {
    fn default() -> Self {
        AlmOptions {
            outer_iters: 30,
            inner_iters: 500,
            inner_tolerance: 1e-10,
            rho_factor: 10.0,
            tau_outer: 0.5,
            mu_init: 1.0,
            rho_init: 1.0,
            mu_min: 1e-6,
            mu_max: 1e12,
        }
    }
}

/// One outer iteration of the generic method.
#[derive(Clone, Debug)]
pub struct AlmTraceRow {
    pub x: Vec<f64>,
    pub objective: f64,
    pub constraint: f64,
    pub mu: f64,
    pub rho: f64,
}

/// Result of [`generic_alm`].
#[derive(Clone, Debug)]
pub struct AlmOutcome {
    pub x: Vec<f64>,
    /// Final multiplier estimate.
    pub multiplier: f64,
    pub trace: Vec<AlmTraceRow>,
}

const DIVERGENCE_BOUND: f64 = 1e12;

/// The classical augmented-Lagrangian loop: repeatedly minimise
/// `g(x) + P(h(x), rho, mu)` with plain gradient descent (backtracking
/// halving line search), then refresh the multiplier with the penalty
/// derivative and grow `rho` whenever the constraint has not improved.
pub fn generic_alm(
    problem: &SmoothProblem,
    penalty: PenaltyKind,
    options: &AlmOptions,
) -> Result<AlmOutcome> {
    if !(2.0..=100.0).contains(&options.rho_factor) {
        return Err(Error::invalid("rho_factor must lie in [2, 100]"));
    }
    let mut x = problem
        .initial_point
        .clone()
        .unwrap_or_else(|| vec![0.0; problem.dimension]);
    if x.len() != problem.dimension {
        return Err(Error::invalid("initial point dimension mismatch"));
    }
    let mut mu = options.mu_init;
    let mut rho = options.rho_init;
    let mut h_prev = (problem.constraint)(&x);
    let mut trace = Vec::with_capacity(options.outer_iters);

    for _ in 0..options.outer_iters {
        inner_descent(problem, penalty, &mut x, mu, rho, options)?;
        let h_now = (problem.constraint)(&x);
        mu = penalty
            .derivative(h_now, rho, mu)?
            .clamp(options.mu_min, options.mu_max);
        if h_now > options.tau_outer * h_prev {
            rho *= options.rho_factor;
        }
        h_prev = h_now;
        trace.push(AlmTraceRow {
            x: x.clone(),
            objective: (problem.objective)(&x),
            constraint: h_now,
            mu,
            rho,
        });
    }
    Ok(AlmOutcome {
        x,
        multiplier: mu,
        trace,
    })
}

/// Gradient descent with halving backtracking on the augmented Lagrangian.
fn inner_descent(
    problem: &SmoothProblem,
    penalty: PenaltyKind,
    x: &mut Vec<f64>,
    mu: f64,
    rho: f64,
    options: &AlmOptions,
) -> Result<()> {
    let lagrangian = |x: &[f64]| -> Result<f64> {
        Ok((problem.objective)(x) + penalty.value((problem.constraint)(x), rho, mu)?)
    };
    for _ in 0..options.inner_iters {
        let h = (problem.constraint)(x);
        let scale = penalty.derivative(h, rho, mu)?;
        let og = (problem.objective_grad)(x);
        let hg = (problem.constraint_grad)(x);
        let grad: Vec<f64> = og.iter().zip(&hg).map(|(&a, &b)| a + scale * b).collect();
        let norm_sq: f64 = grad.iter().map(|g| g * g).sum();
        if norm_sq.sqrt() < options.inner_tolerance {
            break;
        }
        let current = lagrangian(x)?;
        if !current.is_finite() || current.abs() > DIVERGENCE_BOUND {
            return Err(Error::Divergence(format!(
                "augmented Lagrangian reached {current:.3e} at x = {x:?}"
            )));
        }
        // Armijo backtracking with halving.
        let mut t = 1.0;
        loop {
            let candidate: Vec<f64> = x.iter().zip(&grad).map(|(&v, &g)| v - t * g).collect();
            if lagrangian(&candidate)? <= current - 0.5 * t * norm_sq {
                *x = candidate;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                // No descent at machine precision; treat as converged.
                return Ok(());
            }
        }
    }
    let objective = (problem.objective)(x);
    if !objective.is_finite() || objective.abs() > DIVERGENCE_BOUND {
        return Err(Error::Divergence(format!(
            "objective reached {objective:.3e} at x = {x:?}"
        )));
    }
    Ok(())
}

/// Configuration of the fixed-penalty attack.
#[derive(Clone, Debug)]
pub struct PenaltyAttackConfig {
    /// Rounds of the penalty-weight line search.
    pub n_search_steps: usize,
    /// Gradient steps per round.
    pub inner_iters: usize,
    /// Initial penalty weight `c`.
    pub c_init: f64,
    /// First-step distance increase used to calibrate the learning rate.
    pub epsilon: f64,
    pub distance: DistanceSpec,
    pub constraint: ConstraintKind,
    pub optimizer: OptimizerConfig,
}

impl PenaltyAttackConfig {
    /// Nine search rounds, `c` starting at 1, rate calibrated once from the
    /// first-step distance increase and held constant, as in the classic
    /// fixed-penalty recipe.
    pub fn new(distance: DistanceSpec, inner_iters: usize) -> Self {
        PenaltyAttackConfig {
            n_search_steps: 9,
            inner_iters,
            c_init: 1.0,
            epsilon: distance.default_epsilon(),
            distance,
            constraint: ConstraintKind::DlrPlus,
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_search_steps == 0 || self.inner_iters == 0 {
            return Err(Error::invalid(
                "n_search_steps and inner_iters must be positive",
            ));
        }
        if !(self.c_init.is_finite() && self.c_init > 0.0) {
            return Err(Error::invalid("c_init must be positive"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Fixed-penalty baseline attack. Each round restarts from the clean input
/// and minimises `D(x~, x) + c * max(d(x~), 0)` for `inner_iters` steps;
/// the weight `c` is multiplied by 10 after a failed round and bisected
/// between the tightest failing and succeeding weights once both exist.
///
/// Inner steps use the shared optimizer at a constant learning rate,
/// calibrated once so the first step increases the distance by `epsilon` —
/// the classic recipe. The main attack's step-size annealing is deliberately
/// not applied here: it is one of the mechanisms the comparison measures.
///
/// Main-loop propagation counts are exactly
/// `n_search_steps * inner_iters` forwards and the same number of
/// backwards; the learning-rate calibration adds one of each, reported in
/// `init_counters`.
pub fn penalty_attack(
    model: &Model,
    x: &Tensor,
    label: usize,
    config: &PenaltyAttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    x.expect_shape(model.input_shape())?;
    if !x.within(0.0, 1.0) {
        return Err(Error::invalid("input must lie in the [0,1] box"));
    }
    if label >= model.num_classes() {
        return Err(Error::invalid(format!(
            "label {label} out of range for a {}-class model",
            model.num_classes()
        )));
    }

    let mut init_counters = PropagationCounter::new();
    let init = init_step_size(
        model,
        x,
        label,
        config.constraint,
        &config.distance,
        config.epsilon,
        &mut init_counters,
    )?;
    let eta0 = init.eta;

    let mut counters = PropagationCounter::new();
    let mut best: Option<(Tensor, f64)> = None;
    let mut found_iteration = None;
    let mut c = config.c_init;
    let mut c_lo: Option<f64> = None;
    let mut c_hi: Option<f64> = None;

    for round in 0..config.n_search_steps {
        let mut x_tilde = x.clone();
        let mut optimizer = RmsPropMomentum::new(x.len(), config.optimizer);
        let mut round_success = false;
        for j in 0..config.inner_iters {
            let pass = model.forward_pass(&x_tilde, &mut counters)?;
            let (d, constraint_grad) = match config.constraint.eval(pass.logits().data(), label) {
                Ok(eval) => (eval.value, Some(eval.grad)),
                Err(Error::DegenerateLogits(_)) => (1.0, None),
                Err(other) => return Err(other),
            };
            let dist = config.distance.evaluate(&x_tilde, x)?;
            if d < 0.0 {
                round_success = true;
                if found_iteration.is_none() {
                    found_iteration = Some(round * config.inner_iters + j);
                }
                if best.as_ref().is_none_or(|(_, bd)| dist.value < *bd) {
                    best = Some((x_tilde.clone(), dist.value));
                }
            }
            // max(d, 0) contributes c * grad(d) only on the infeasible side.
            let upstream = match constraint_grad {
                Some(g) if d > 0.0 => Tensor::vector(g.into_iter().map(|v| v * c).collect()),
                _ => Tensor::zeros(vec![model.num_classes()]),
            };
            let pulled = pass.backward(&upstream, &mut counters)?;
            let grad = dist.grad.zip_map(&pulled, |a, b| a + b)?;
            let update = optimizer.step(&grad, eta0)?;
            x_tilde = x_tilde.zip_map(&update, |a, b| a - b)?;
            x_tilde.clamp_in_place(0.0, 1.0);
        }
        // Standard penalty-weight line search: grow by 10 until a success
        // brackets the weight, then bisect.
        if round_success {
            c_hi = Some(c_hi.map_or(c, |hi: f64| hi.min(c)));
        } else {
            c_lo = Some(c_lo.map_or(c, |lo: f64| lo.max(c)));
        }
        if round + 1 < config.n_search_steps {
            c = match (c_lo, c_hi) {
                (Some(lo), Some(hi)) => 0.5 * (lo + hi),
                (None, Some(hi)) => 0.5 * hi,
                (Some(lo), None) => lo * 10.0,
                (None, None) => unreachable!("every round sets one bound"),
            };
        }
    }

    let (adversarial, distance) = match best {
        Some((adv, dist)) => (Some(adv), Some(dist)),
        None => (None, None),
    };
    Ok(AttackResult {
        success: adversarial.is_some(),
        adversarial,
        distance,
        counters,
        init_counters,
        init_step: eta0,
        init_saturated: init.saturated,
        found_iteration,
        trace: None,
    })
}

/// Bisects a budget-constrained attack down to a minimal successful budget.
///
/// `budget_attack(b)` must return an adversarial example found within
/// budget `b`, or `None`. The search first verifies `hi`; on failure there
/// is no result. It then bisects until `hi - lo < precision` and returns
/// the adversarial found at the final `hi` together with that budget.
pub fn minimal_via_binary_search<F>(
    mut budget_attack: F,
    lo: f64,
    hi: f64,
    precision: f64,
) -> Option<(Tensor, f64)>
where
    F: FnMut(f64) -> Option<Tensor>,
{
    assert!(
        lo >= 0.0 && hi > lo && precision > 0.0,
        "bad bisection bounds"
    );
    let mut best = budget_attack(hi)?;
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo >= precision {
        let mid = 0.5 * (lo + hi);
        match budget_attack(mid) {
            Some(adv) => {
                best = adv;
                hi = mid;
            }
            None => lo = mid,
        }
    }
    Some((best, hi))
}

/// Projected gradient descent on the constraint within an L2 ball: takes
/// normalised gradient steps on `d`, projecting onto the intersection of
/// the budget ball and the `[0,1]` box, and returns the first adversarial
/// iterate. A plain budget attack to feed [`minimal_via_binary_search`].
pub fn pgd_l2_budget_attack(
    model: &Model,
    x: &Tensor,
    label: usize,
    constraint: ConstraintKind,
    budget: f64,
    steps: usize,
    counter: &mut PropagationCounter,
) -> Result<Option<Tensor>> {
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::invalid("budget must be positive"));
    }
    let mut x_tilde = x.clone();
    // The usual PGD step size: overshoot the ball a little each step.
    let step = 2.5 * budget / steps.max(1) as f64;
    for _ in 0..steps {
        let pass = model.forward_pass(&x_tilde, counter)?;
        let eval = match constraint.eval(pass.logits().data(), label) {
            Ok(eval) => eval,
            Err(Error::DegenerateLogits(_)) => return Ok(None),
            Err(other) => return Err(other),
        };
        if eval.value < 0.0 {
            return Ok(Some(x_tilde));
        }
        let g = pass.backward(&Tensor::vector(eval.grad), counter)?;
        let norm = g.l2_norm();
        if norm == 0.0 {
            return Ok(None);
        }
        x_tilde = x_tilde.zip_map(&g, |v, gv| v - step * gv / norm)?;
        // Project onto the L2 ball around x, then the box.
        let delta = x_tilde.zip_map(x, |a, b| a - b)?;
        let dn = delta.l2_norm();
        if dn > budget {
            let shrink = budget / dn;
            x_tilde = x.zip_map(&delta, |base, d| base + shrink * d)?;
        }
        x_tilde.clamp_in_place(0.0, 1.0);
    }
    // Final feasibility check on the last iterate.
    let z = model.forward_pass(&x_tilde, counter)?;
    match constraint.eval(z.logits().data(), label) {
        Ok(eval) if eval.value < 0.0 => Ok(Some(x_tilde)),
        Ok(_) | Err(Error::DegenerateLogits(_)) => Ok(None),
        Err(other) => Err(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::DistanceKind;
    use crate::nn::Layer;

    fn linear_model() -> Model {
        Model::new(
            vec![4],
            vec![Layer::Dense {
                weights: Tensor::from_vec(
                    vec![3, 4],
                    vec![
                        0.9, -0.4, 0.6, 0.2, //
                        -0.5, 0.7, -0.3, 0.4, //
                        0.1, 0.2, -0.8, -0.6,
                    ],
                )
                .unwrap(),
                bias: Tensor::vector(vec![0.4, -0.3, -0.2]),
            }],
        )
        .unwrap()
    }

    fn centre() -> Tensor {
        Tensor::vector(vec![0.5; 4])
    }

    fn l2_oracle(model: &Model, x: &Tensor, label: usize) -> f64 {
        let z = model.forward(x, &mut PropagationCounter::new()).unwrap();
        let w = match &model.layers()[0] {
            Layer::Dense { weights, .. } => weights,
            _ => unreachable!(),
        };
        let n = x.len();
        (0..z.len())
            .filter(|&j| j != label)
            .map(|j| {
                let gap = z.data()[label] - z.data()[j];
                let dw: f64 = (0..n)
                    .map(|k| (w.data()[label * n + k] - w.data()[j * n + k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                gap / dw
            })
            .fold(f64::INFINITY, f64::min)
    }

    // ===== Generic augmented-Lagrangian method =====

    #[test]
    fn halfspace_projection_converges_for_all_penalties() {
        let problem = SmoothProblem::halfspace_projection(3);
        let target = problem.solution.as_ref().unwrap().clone();
        for kind in PenaltyKind::ALL {
            let outcome = generic_alm(&problem, kind, &AlmOptions::default()).unwrap();
            for (got, want) in outcome.x.iter().zip(&target.x) {
                assert!(
                    (got - want).abs() < 1e-4,
                    "{kind}: x = {:?} vs {:?}",
                    outcome.x,
                    target.x
                );
            }
            let mu_star = target.multiplier.unwrap();
            assert!(
                (outcome.multiplier - mu_star).abs() / mu_star < 0.05,
                "{kind}: multiplier {} vs {mu_star}",
                outcome.multiplier
            );
        }
    }

    #[test]
    fn boundary_quadratic_recovers_the_kkt_multiplier() {
        let problem = SmoothProblem::boundary_quadratic();
        for kind in PenaltyKind::ALL {
            let outcome = generic_alm(&problem, kind, &AlmOptions::default()).unwrap();
            assert!(
                (outcome.x[0] - 1.0).abs() < 1e-4,
                "{kind}: x = {:?}",
                outcome.x
            );
            assert!(
                (outcome.multiplier - 2.0).abs() < 0.1,
                "{kind}: multiplier {}",
                outcome.multiplier
            );
        }
    }

    #[test]
    fn inactive_constraint_sends_the_multiplier_to_the_floor() {
        let problem = SmoothProblem::inactive_constraint();
        for kind in PenaltyKind::ALL {
            let outcome = generic_alm(&problem, kind, &AlmOptions::default()).unwrap();
            assert!(
                (outcome.x[0] - 0.5).abs() < 1e-4,
                "{kind}: x = {:?}",
                outcome.x
            );
            assert!(
                outcome.multiplier < 1e-2,
                "{kind}: multiplier should collapse, got {}",
                outcome.multiplier
            );
        }
    }

    #[test]
    fn unbounded_objective_reports_divergence() {
        let problem = SmoothProblem {
            dimension: 1,
            objective: Box::new(|x| -x[0] * x[0]),
            objective_grad: Box::new(|x| vec![-2.0 * x[0]]),
            constraint: Box::new(|_| -1.0),
            constraint_grad: Box::new(|_| vec![0.0]),
            initial_point: Some(vec![1.0]),
            solution: None,
        };
        let err = generic_alm(&problem, PenaltyKind::P2, &AlmOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err:?}");
    }

    #[test]
    fn rho_factor_outside_the_convention_is_rejected() {
        let problem = SmoothProblem::boundary_quadratic();
        let options = AlmOptions {
            rho_factor: 1.5,
            ..AlmOptions::default()
        };
        assert!(generic_alm(&problem, PenaltyKind::P2, &options).is_err());
    }

    #[test]
    fn trace_reports_monotone_rho() {
        let problem = SmoothProblem::halfspace_projection(2);
        let outcome = generic_alm(&problem, PenaltyKind::Phr, &AlmOptions::default()).unwrap();
        for pair in outcome.trace.windows(2) {
            assert!(pair[1].rho >= pair[0].rho);
        }
    }

    // ===== Penalty attack =====

    #[test]
    fn penalty_attack_counters_are_exact() {
        let config = PenaltyAttackConfig::new(DistanceSpec::new(DistanceKind::L2), 50);
        let result = penalty_attack(&linear_model(), &centre(), 0, &config).unwrap();
        let total = (config.n_search_steps * config.inner_iters) as u64;
        assert_eq!(result.counters.forwards, total);
        assert_eq!(result.counters.backwards, total);
        assert_eq!(
            result.init_counters,
            PropagationCounter {
                forwards: 1,
                backwards: 1
            }
        );
    }

    #[test]
    fn penalty_attack_approaches_the_linear_oracle() {
        let model = linear_model();
        let x = centre();
        let config = PenaltyAttackConfig::new(DistanceSpec::new(DistanceKind::L2), 300);
        let result = penalty_attack(&model, &x, 0, &config).unwrap();
        assert!(result.success);
        let oracle = l2_oracle(&model, &x, 0);
        let got = result.distance.unwrap();
        assert!(
            got >= oracle * 0.999 && got <= oracle * 1.10,
            "distance {got} vs oracle {oracle}"
        );
        // Returned point re-verifies as adversarial.
        let adv = result.adversarial.unwrap();
        let z = model.forward(&adv, &mut PropagationCounter::new()).unwrap();
        assert!(ConstraintKind::DlrPlus.eval(z.data(), 0).unwrap().value < 0.0);
    }

    #[test]
    fn penalty_attack_on_misclassified_input_succeeds_at_zero() {
        let config = PenaltyAttackConfig::new(DistanceSpec::new(DistanceKind::L2), 20);
        // The centre is class 0, so label 1 is already misclassified.
        let result = penalty_attack(&linear_model(), &centre(), 1, &config).unwrap();
        assert!(result.success);
        assert_eq!(result.distance, Some(0.0));
        assert_eq!(result.found_iteration, Some(0));
    }

    #[test]
    fn bottom_ranked_label_has_a_flat_constraint() {
        // With 3 classes, the constraint for the lowest-ranked label is
        // identically -1 (numerator equals minus the denominator), so the
        // calibration cannot find a direction and must say so.
        let config = PenaltyAttackConfig::new(DistanceSpec::new(DistanceKind::L2), 20);
        let err = penalty_attack(&linear_model(), &centre(), 2, &config).unwrap_err();
        assert!(matches!(err, Error::ZeroGradient(_)), "{err:?}");
    }

    // ===== Binary search on the budget =====

    #[test]
    fn bisection_brackets_the_oracle_threshold() {
        let dummy = Tensor::vector(vec![0.0]);
        let calls = std::cell::Cell::new(0);
        let result = minimal_via_binary_search(
            |budget| {
                calls.set(calls.get() + 1);
                (budget >= 0.37).then(|| dummy.clone())
            },
            0.0,
            1.0,
            0.01,
        );
        let (_, budget) = result.unwrap();
        assert!((0.37..0.38).contains(&budget), "budget {budget}");
        assert!(
            calls.get() <= 9,
            "bisection should need ~7 probes, used {}",
            calls.get()
        );
    }

    #[test]
    fn bisection_gives_up_when_even_the_top_budget_fails() {
        assert!(minimal_via_binary_search(|_| None, 0.0, 1.0, 0.01).is_none());
    }

    // ===== PGD budget attack =====

    #[test]
    fn pgd_succeeds_above_the_oracle_distance_and_fails_below() {
        let model = linear_model();
        let x = centre();
        let oracle = l2_oracle(&model, &x, 0);
        let mut counter = PropagationCounter::new();

        let tight = pgd_l2_budget_attack(
            &model,
            &x,
            0,
            ConstraintKind::DlrPlus,
            oracle * 0.5,
            50,
            &mut counter,
        )
        .unwrap();
        assert!(tight.is_none(), "half the oracle budget cannot succeed");

        let roomy = pgd_l2_budget_attack(
            &model,
            &x,
            0,
            ConstraintKind::DlrPlus,
            oracle * 2.0,
            50,
            &mut counter,
        )
        .unwrap();
        let adv = roomy.expect("double the oracle budget must succeed");
        let dist = DistanceSpec::new(DistanceKind::L2).value(&adv, &x).unwrap();
        assert!(dist <= oracle * 2.0 + 1e-9, "{dist} exceeds the budget");
        let z = model.forward(&adv, &mut PropagationCounter::new()).unwrap();
        assert!(ConstraintKind::DlrPlus.eval(z.data(), 0).unwrap().value < 0.0);
    }

    #[test]
    fn bisected_pgd_lands_near_the_oracle() {
        let model = linear_model();
        let x = centre();
        let oracle = l2_oracle(&model, &x, 0);
        let mut counter = PropagationCounter::new();
        let (adv, budget) = minimal_via_binary_search(
            |b| {
                pgd_l2_budget_attack(&model, &x, 0, ConstraintKind::DlrPlus, b, 100, &mut counter)
                    .unwrap()
            },
            0.0,
            2.0,
            0.01,
        )
        .expect("search must succeed");
        assert!(
            budget >= oracle * 0.99 && budget <= oracle + 0.05,
            "budget {budget} vs oracle {oracle}"
        );
        let z = model.forward(&adv, &mut PropagationCounter::new()).unwrap();
        assert!(ConstraintKind::DlrPlus.eval(z.data(), 0).unwrap().value < 0.0);
    }
}
