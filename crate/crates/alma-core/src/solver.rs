//! The augmented-Lagrangian minimal-perturbation attack.
//!
//! Given a classifier, a clean input `x`, and a label, the attack minimises
//! a perceptual distance `D(x~, x)` subject to the misclassification
//! constraint `d(x~) < 0`, where `d` is a logit-difference constraint
//! function. Each iteration folds one step of the classical augmented
//! Lagrangian outer update (multiplier estimation) into the inner gradient
//! descent:
//!
//! 1. forward pass; evaluate the constraint `d(i)`;
//! 2. multiplier estimate `mu_hat = P'(d(i), rho(i), mu(i))`;
//! 3. EMA smoothing and safeguarding:
//!    `mu(i+1) = clamp(alpha mu(i) + (1-alpha) mu_hat, mu_min, mu_max)`;
//! 4. loss `L = D(x~, x) + P(d(i), rho(i), mu(i+1))`, differentiated with
//!    a single backward pass (the penalty derivative scales the constraint
//!    logit-gradient before pullback);
//! 5. RMSProp-with-momentum step, projected onto the `[0,1]` box;
//! 6. every `check_period` iterations, while nothing adversarial has been
//!    found and the constraint has not improved by factor `tau`, grow
//!    `rho` by `gamma`.
//!
//! The best (smallest-distance) adversarial iterate is tracked throughout
//! and returned. The main loop performs exactly `N` forward and `N`
//! backward passes; the step-size calibration adds one of each, counted
//! separately.

use crate::constraint::ConstraintKind;
use crate::distance::DistanceSpec;
use crate::nn::{Model, PropagationCounter};
use crate::penalty::PenaltyKind;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Constants of the RMSProp-with-momentum update.
#[derive(Clone, Copy, Debug)]
pub struct OptimizerConfig {
    /// Momentum coefficient (beta_1).
    pub beta1: f64,
    /// Decay of the squared-gradient EMA (beta_2).
    pub beta2: f64,
    /// Divisor guard added under the square root.
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

/// RMSProp combined with momentum. The squared-gradient EMA starts at
/// all-ones so the very first update is bounded by roughly `lr * g`
/// instead of being amplified by a near-zero divisor.
#[derive(Clone, Debug)]
pub struct RmsPropMomentum {
    momentum: Vec<f64>,
    sq_avg: Vec<f64>,
    config: OptimizerConfig,
}

impl RmsPropMomentum {
    /// Fresh optimizer state for `len` coordinates.
    pub fn new(len: usize, config: OptimizerConfig) -> Self {
        RmsPropMomentum {
            momentum: vec![0.0; len],
            sq_avg: vec![1.0; len],
            config,
        }
    }

    /// Advances the accumulators with `grad` and returns the update to
    /// subtract, `lr * m`.
    pub fn step(&mut self, grad: &Tensor, lr: f64) -> Result<Tensor> {
        if grad.len() != self.momentum.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.momentum.len()],
                got: grad.shape().to_vec(),
            });
        }
        let OptimizerConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let mut update = grad.clone();
        for ((u, s), m) in update
            .data_mut()
            .iter_mut()
            .zip(&mut self.sq_avg)
            .zip(&mut self.momentum)
        {
            let g = *u;
            *s = beta2 * *s + (1.0 - beta2) * g * g;
            *m = beta1 * *m + g / (*s + epsilon).sqrt();
            *u = lr * *m;
        }
        Ok(update)
    }
}

/// Full configuration of the attack.
#[derive(Clone, Debug)]
pub struct AlmaConfig {
    /// Iteration budget `N` (exactly this many forward/backward passes).
    pub iterations: usize,
    /// Target distance increase of the calibrated first step.
    pub epsilon: f64,
    /// EMA coefficient for multiplier smoothing, in `[0, 1)`.
    pub alpha: f64,
    /// Penalty-parameter growth factor, `> 1`.
    pub gamma: f64,
    /// Constraint-improvement rate required to keep `rho` fixed.
    pub tau: f64,
    /// Iterations between `rho` checks (`M`).
    pub check_period: usize,
    /// Initial multiplier.
    pub mu_init: f64,
    /// Initial penalty parameter.
    pub rho_init: f64,
    /// Multiplier safeguard bounds.
    pub mu_min: f64,
    pub mu_max: f64,
    /// Penalty function shaping the constraint term.
    pub penalty: PenaltyKind,
    /// Distance being minimised.
    pub distance: DistanceSpec,
    /// Misclassification constraint (untargeted or targeted).
    pub constraint: ConstraintKind,
    /// Optimizer constants.
    pub optimizer: OptimizerConfig,
    /// Learning-rate floor as a fraction of the initial step size.
    pub final_lr_fraction: f64,
    /// Record a per-iteration trace in the result.
    pub record_trace: bool,
}

impl AlmaConfig {
    /// Defaults for a given distance and budget: `mu = rho = 1`, safeguards
    /// `[1e-6, 1e12]`, `gamma = 1.2`, `tau = 0.95`, `M = 10`, penalty P2,
    /// `epsilon` from the distance, and `alpha` 0.9 for budgets of 1000 or
    /// more (0.5 below that, where smoothing has less time to pay off).
    pub fn new(distance: DistanceSpec, iterations: usize) -> Self {
        AlmaConfig {
            iterations,
            epsilon: distance.default_epsilon(),
            alpha: if iterations >= 1000 { 0.9 } else { 0.5 },
            gamma: 1.2,
            tau: 0.95,
            check_period: 10,
            mu_init: 1.0,
            rho_init: 1.0,
            mu_min: 1e-6,
            mu_max: 1e12,
            penalty: PenaltyKind::P2,
            distance,
            constraint: ConstraintKind::DlrPlus,
            optimizer: OptimizerConfig::default(),
            final_lr_fraction: 0.01,
            record_trace: false,
        }
    }

    /// Checks every invariant; attack entry points call this first.
    pub fn validate(&self) -> Result<()> {
        let want = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(msg))
            }
        };
        want(self.iterations >= 1, "iterations must be at least 1")?;
        want(
            self.epsilon.is_finite() && self.epsilon > 0.0,
            "epsilon must be a positive real",
        )?;
        want((0.0..1.0).contains(&self.alpha), "alpha must lie in [0, 1)")?;
        want(
            self.gamma.is_finite() && self.gamma > 1.0,
            "gamma must exceed 1",
        )?;
        want((0.0..=1.0).contains(&self.tau), "tau must lie in [0, 1]")?;
        want(self.check_period >= 1, "check_period must be at least 1")?;
        want(
            self.mu_min > 0.0 && self.mu_min <= self.mu_init && self.mu_init <= self.mu_max,
            "multiplier bounds must satisfy 0 < mu_min <= mu_init <= mu_max",
        )?;
        want(
            self.rho_init.is_finite() && self.rho_init > 0.0,
            "rho_init must be positive",
        )?;
        want(
            self.final_lr_fraction.is_finite() && self.final_lr_fraction > 0.0,
            "final_lr_fraction must be positive",
        )?;
        let opt = &self.optimizer;
        want(
            (0.0..1.0).contains(&opt.beta1) && (0.0..1.0).contains(&opt.beta2) && opt.epsilon > 0.0,
            "optimizer constants out of range",
        )?;
        Ok(())
    }
}

/// One row of the optional per-iteration trace.
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    /// Constraint value `d(i)` at the iterate.
    pub constraint: f64,
    /// Multiplier used in this iteration's loss (`mu(i+1)`).
    pub mu: f64,
    /// Penalty parameter used in this iteration's loss.
    pub rho: f64,
    /// Learning rate applied this iteration.
    pub lr: f64,
    /// Distance `D(x~, x)` at the iterate.
    pub distance: f64,
}

/// Outcome of an attack run.
#[derive(Clone, Debug)]
pub struct AttackResult {
    /// Whether any adversarial iterate was found.
    pub success: bool,
    /// The smallest-distance adversarial iterate.
    pub adversarial: Option<Tensor>,
    /// Distance of `adversarial` from the clean input.
    pub distance: Option<f64>,
    /// Main-loop propagations (exactly `N` forwards and `N` backwards).
    pub counters: PropagationCounter,
    /// Propagations spent calibrating the initial step size.
    pub init_counters: PropagationCounter,
    /// The calibrated initial step size.
    pub init_step: f64,
    /// Set when the box projection capped the calibration search.
    pub init_saturated: bool,
    /// First iteration at which an adversarial iterate appeared.
    pub found_iteration: Option<usize>,
    /// Per-iteration trace, when requested.
    pub trace: Option<Vec<TraceRow>>,
}

/// Result of the initial step-size calibration.
#[derive(Clone, Copy, Debug)]
pub struct InitStepSize {
    /// Step size whose first gradient step increases the distance by
    /// (approximately) epsilon.
    pub eta: f64,
    /// True when even the largest permitted step cannot reach epsilon
    /// because the box projection saturates.
    pub saturated: bool,
}

/// Largest step size the calibration search will try.
const ETA_CAP: f64 = 1e12;
/// Relative tolerance on the achieved distance.
const ETA_REL_TOL: f64 = 1e-3;
/// Bisection budget after bracketing.
const ETA_BISECTIONS: usize = 30;

/// Calibrates the initial step size: finds `eta` such that one plain
/// gradient step along the constraint gradient, projected onto the box,
/// moves the input a distance of `epsilon`.
///
/// Costs one forward and one backward pass (for the constraint gradient),
/// recorded in `counter`; the search itself only evaluates distances.
pub fn init_step_size(
    model: &Model,
    x: &Tensor,
    label: usize,
    constraint: ConstraintKind,
    distance: &DistanceSpec,
    epsilon: f64,
    counter: &mut PropagationCounter,
) -> Result<InitStepSize> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be a positive real"));
    }
    let pass = model.forward_pass(x, counter)?;
    let eval = constraint.eval(pass.logits().data(), label)?;
    let g = pass.backward(&Tensor::vector(eval.grad), counter)?;
    if g.data().iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroGradient(
            "constraint gradient vanishes at the clean input; cannot calibrate a step size".into(),
        ));
    }

    let dist_at = |eta: f64| -> Result<f64> {
        let mut moved = x.zip_map(&g, |xv, gv| xv - eta * gv)?;
        moved.clamp_in_place(0.0, 1.0);
        distance.value(&moved, x)
    };
    let close = |d: f64| (d - epsilon).abs() <= ETA_REL_TOL * epsilon;

    // Geometric search (factor 10) for a bracket [lo, hi] with
    // D(lo) < epsilon <= D(hi).
    let mut eta = 1.0;
    let d = dist_at(eta)?;
    if close(d) {
        return Ok(InitStepSize {
            eta,
            saturated: false,
        });
    }
    let (mut lo, mut hi);
    if d < epsilon {
        loop {
            let next = eta * 10.0;
            if next > ETA_CAP {
                // The projection caps the reachable distance; report the
                // largest step actually achievable.
                return Ok(InitStepSize {
                    eta: ETA_CAP,
                    saturated: true,
                });
            }
            let nd = dist_at(next)?;
            if nd >= epsilon {
                lo = eta;
                hi = next;
                break;
            }
            eta = next;
        }
    } else {
        loop {
            let next = eta / 10.0;
            if next < 1e-30 {
                return Err(Error::invalid(
                    "step-size search collapsed: distance stays above epsilon at vanishing steps",
                ));
            }
            let nd = dist_at(next)?;
            if nd < epsilon {
                lo = next;
                hi = eta;
                break;
            }
            eta = next;
        }
    }

    let mut best = hi;
    for _ in 0..ETA_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let dm = dist_at(mid)?;
        best = mid;
        if close(dm) {
            break;
        }
        if dm < epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(InitStepSize {
        eta: best,
        saturated: false,
    })
}

/// Learning rate at iteration `i`: flat at `eta0` through the exploration
/// phase, then exponential decay from the first adversarial iteration
/// `i0` down to `eta0 * final_lr_fraction` at the last iteration.
pub fn lr_at(
    i: usize,
    iterations: usize,
    eta0: f64,
    final_lr_fraction: f64,
    found_iteration: Option<usize>,
) -> f64 {
    match found_iteration {
        Some(i0) if i > i0 => {
            let span = (iterations - 1 - i0) as f64;
            eta0 * final_lr_fraction.powf((i - i0) as f64 / span)
        }
        _ => eta0,
    }
}

/// Runs the attack. See the module docs for the per-iteration structure.
pub fn alma_attack(
    model: &Model,
    x: &Tensor,
    label: usize,
    config: &AlmaConfig,
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

    let n = config.iterations;
    let mut counters = PropagationCounter::new();
    let mut optimizer = RmsPropMomentum::new(x.len(), config.optimizer);
    let mut x_tilde = x.clone();
    let mut mu = config.mu_init;
    let mut rho = config.rho_init;
    let mut history = Vec::with_capacity(n);
    let mut trace = config.record_trace.then(|| Vec::with_capacity(n));
    let mut best: Option<(Tensor, f64)> = None;
    let mut found_iteration = None;

    for i in 0..n {
        let pass = model.forward_pass(&x_tilde, &mut counters)?;
        // Degenerate logits (a flat top of the softmax ordering) leave the
        // constraint undefined; record +1 and propagate a zero gradient so
        // the iteration still runs its backward pass.
        let (d, constraint_grad) = match config.constraint.eval(pass.logits().data(), label) {
            Ok(eval) => (eval.value, Some(eval.grad)),
            Err(Error::DegenerateLogits(_)) => (1.0, None),
            Err(other) => return Err(other),
        };
        history.push(d);

        let mu_hat = config.penalty.derivative(d, rho, mu)?;
        mu =
            (config.alpha * mu + (1.0 - config.alpha) * mu_hat).clamp(config.mu_min, config.mu_max);

        let dist = config.distance.evaluate(&x_tilde, x)?;
        if d < 0.0 {
            if found_iteration.is_none() {
                found_iteration = Some(i);
            }
            if best.as_ref().is_none_or(|(_, bd)| dist.value < *bd) {
                best = Some((x_tilde.clone(), dist.value));
            }
        }

        let scale = config.penalty.derivative(d, rho, mu)?;
        let upstream = match constraint_grad {
            Some(g) => Tensor::vector(g.into_iter().map(|v| v * scale).collect()),
            None => Tensor::zeros(vec![model.num_classes()]),
        };
        let pulled = pass.backward(&upstream, &mut counters)?;
        let grad = dist.grad.zip_map(&pulled, |a, b| a + b)?;

        let lr = lr_at(i, n, eta0, config.final_lr_fraction, found_iteration);
        if let Some(rows) = trace.as_mut() {
            rows.push(TraceRow {
                constraint: d,
                mu,
                rho,
                lr,
                distance: dist.value,
            });
        }

        let update = optimizer.step(&grad, lr)?;
        x_tilde = x_tilde.zip_map(&update, |a, b| a - b)?;
        x_tilde.clamp_in_place(0.0, 1.0);

        // Penalty-parameter check, every check_period iterations, only
        // while nothing adversarial has been seen. The comparison d(i) vs
        // tau * d(i - M) needs M completed iterations of history.
        if (i + 1) % config.check_period == 0
            && found_iteration.is_none()
            && i >= config.check_period
            && history[i] > config.tau * history[i - config.check_period]
        {
            rho *= config.gamma;
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
        trace,
    })
}
