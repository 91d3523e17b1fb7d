//! Case-control PU risk estimators and the single-network training loop.
//!
//! With class prior `π = p(y = +1)`, positives drawn from `p(x | y = +1)` and
//! unlabeled samples from the marginal `p(x)`, the classification risk is
//!
//! ```text
//! R(f) = π E_p[ℓ(f, +1)] - π E_p[ℓ(f, -1)] + E_u[ℓ(f, -1)]
//! ```
//!
//! The last two terms estimate `(1 - π) E_n[ℓ(f, -1)]`, which can go negative
//! on finite samples once a flexible model overfits. The non-negative variant
//! clamps that correction at zero.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::SparseVec;
use crate::net::{Grads, Input, Loss, Mlp, OptimConfig, OptimState, NEGATIVE, POSITIVE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuConfig {
    /// `p(y = +1)` within the unlabeled marginal.
    pub prior: f64,
    pub loss: Loss,
    /// Apply the non-negative correction.
    pub nonneg: bool,
}

impl Default for PuConfig {
    fn default() -> Self {
        PuConfig {
            prior: 0.2,
            loss: Loss::Logistic,
            nonneg: true,
        }
    }
}

impl PuConfig {
    pub fn with_prior(prior: f64) -> Self {
        PuConfig {
            prior,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::config(format!(
                "class prior {} must lie in (0, 1)",
                self.prior
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskBreakdown {
    /// `π Ê_p[ℓ(f, +1)]`.
    pub term_pos: f64,
    /// `Ê_u[ℓ(f, -1)] - π Ê_p[ℓ(f, -1)]`.
    pub term_neg_correction: f64,
    pub total: f64,
    pub correction_clamped: bool,
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

fn risk_terms(pos: &[f64], unl: &[f64], cfg: &PuConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    if pos.is_empty() {
        return Err(Error::EmptyInput("positive scores"));
    }
    if unl.is_empty() {
        return Err(Error::EmptyInput("unlabeled scores"));
    }
    let loss = cfg.loss;
    let pos_plus = mean(pos.iter().map(|&s| loss.value(s, POSITIVE)));
    let pos_minus = mean(pos.iter().map(|&s| loss.value(s, NEGATIVE)));
    let unl_minus = mean(unl.iter().map(|&s| loss.value(s, NEGATIVE)));
    Ok((cfg.prior * pos_plus, unl_minus - cfg.prior * pos_minus))
}

/// Unbiased PU risk with sample means in place of expectations.
pub fn unbiased_pu_risk(pos: &[f64], unl: &[f64], cfg: &PuConfig) -> Result<RiskBreakdown> {
    let (term_pos, term_neg_correction) = risk_terms(pos, unl, cfg)?;
    Ok(RiskBreakdown {
        term_pos,
        term_neg_correction,
        total: term_pos + term_neg_correction,
        correction_clamped: false,
    })
}

/// Non-negative PU risk: the negative-class correction is clamped at zero.
pub fn nonneg_pu_risk(pos: &[f64], unl: &[f64], cfg: &PuConfig) -> Result<RiskBreakdown> {
    let (term_pos, term_neg_correction) = risk_terms(pos, unl, cfg)?;
    let clamped = term_neg_correction < 0.0;
    Ok(RiskBreakdown {
        term_pos,
        term_neg_correction,
        total: if clamped {
            term_pos
        } else {
            term_pos + term_neg_correction
        },
        correction_clamped: clamped,
    })
}

/// Dispatches on `cfg.nonneg`.
pub fn pu_risk(pos: &[f64], unl: &[f64], cfg: &PuConfig) -> Result<RiskBreakdown> {
    if cfg.nonneg {
        nonneg_pu_risk(pos, unl, cfg)
    } else {
        unbiased_pu_risk(pos, unl, cfg)
    }
}

/// Scalar whose gradient drives an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// The reported risk total (non-negative or unbiased per config).
    Total,
    /// `-(Ê_u[ℓ(f,-1)] - π Ê_p[ℓ(f,-1)])`, followed when the correction is
    /// clamped so the model is pushed back out of the overfitting region.
    NegatedCorrection,
}

/// Gradient of an objective with respect to every batch score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradients {
    pub risk: RiskBreakdown,
    pub objective: Objective,
    pub value: f64,
    pub pos: Vec<f64>,
    pub unl: Vec<f64>,
}

pub fn score_gradients(
    pos: &[f64],
    unl: &[f64],
    cfg: &PuConfig,
    objective: Objective,
) -> Result<ScoreGradients> {
    let risk = pu_risk(pos, unl, cfg)?;
    let loss = cfg.loss;
    let (np, nu) = (pos.len() as f64, unl.len() as f64);
    let prior = cfg.prior;
    let (value, gpos, gunl) = match objective {
        Objective::Total if risk.correction_clamped => (
            risk.total,
            pos.iter()
                .map(|&s| prior * loss.derivative(s, POSITIVE) / np)
                .collect(),
            vec![0.0; unl.len()],
        ),
        Objective::Total => (
            risk.total,
            pos.iter()
                .map(|&s| prior * (loss.derivative(s, POSITIVE) - loss.derivative(s, NEGATIVE)) / np)
                .collect(),
            unl.iter()
                .map(|&s| loss.derivative(s, NEGATIVE) / nu)
                .collect(),
        ),
        Objective::NegatedCorrection => (
            -risk.term_neg_correction,
            pos.iter()
                .map(|&s| prior * loss.derivative(s, NEGATIVE) / np)
                .collect(),
            unl.iter()
                .map(|&s| -loss.derivative(s, NEGATIVE) / nu)
                .collect(),
        ),
    };
    Ok(ScoreGradients {
        risk,
        objective,
        value,
        pos: gpos,
        unl: gunl,
    })
}

/// Picks the objective a training step descends: the total normally, the
/// negated correction when the non-negative clamp is active.
pub fn training_signal(pos: &[f64], unl: &[f64], cfg: &PuConfig) -> Result<ScoreGradients> {
    let risk = pu_risk(pos, unl, cfg)?;
    let objective = if cfg.nonneg && risk.correction_clamped {
        Objective::NegatedCorrection
    } else {
        Objective::Total
    };
    score_gradients(pos, unl, cfg, objective)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_pos: usize,
    pub batch_unl: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_pos: 64,
            batch_unl: 256,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_pos == 0 || self.batch_unl == 0 {
            return Err(Error::config("batch sizes must be >= 1"));
        }
        self.optim.validate()
    }

    /// Minibatch steps per pass over an unlabeled pool of `n_unl` samples.
    pub fn steps_per_epoch(&self, n_unl: usize) -> usize {
        n_unl.div_ceil(self.batch_unl).max(1)
    }
}

/// Endless shuffled pass over `0..n`, reshuffled on wrap-around.
#[derive(Debug, Clone)]
struct Cycle {
    order: Vec<usize>,
    cursor: usize,
}

impl Cycle {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Cycle { order, cursor: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let k = k.min(self.order.len());
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Draws positive/unlabeled minibatches for one task. Each task owns an
/// independent ChaCha stream of the run seed.
#[derive(Debug, Clone)]
pub(crate) struct TaskSampler {
    rng: ChaCha8Rng,
    pos: Cycle,
    unl: Cycle,
}

impl TaskSampler {
    pub(crate) fn new(seed: u64, task: usize, n_pos: usize, n_unl: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(task as u64);
        let pos = Cycle::new(n_pos, &mut rng);
        let unl = Cycle::new(n_unl, &mut rng);
        TaskSampler { rng, pos, unl }
    }

    pub(crate) fn next_batch(&mut self, batch_pos: usize, batch_unl: usize) -> (Vec<usize>, Vec<usize>) {
        let p = self.pos.take(batch_pos, &mut self.rng);
        let u = self.unl.take(batch_unl, &mut self.rng);
        (p, u)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Minibatch risk total before each update.
    pub step_risks: Vec<f64>,
    /// Full-data risk before training and after every epoch.
    pub epoch_risks: Vec<f64>,
    /// Steps that followed the negated correction.
    pub clamped_steps: usize,
}

pub fn score_all(net: &Mlp, xs: &[SparseVec]) -> Result<Vec<f64>> {
    xs.iter().map(|x| net.score(x)).collect()
}

/// Minimizes the empirical (non-negative) PU risk plus weight decay.
pub fn pu_train(
    positives: &[SparseVec],
    unlabeled: &[SparseVec],
    mut net: Mlp,
    cfg: &PuConfig,
    train: &TrainConfig,
) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    train.validate()?;
    if positives.is_empty() {
        return Err(Error::EmptyInput("positive samples"));
    }
    if unlabeled.is_empty() {
        return Err(Error::EmptyInput("unlabeled samples"));
    }
    if net.output_dim() != 1 {
        return Err(Error::config("pu_train needs a scalar-output network"));
    }
    for x in positives.iter().chain(unlabeled) {
        if x.dim() != net.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.input_dim(),
                got: x.dim(),
            });
        }
    }

    let full_risk = |net: &Mlp| -> Result<f64> {
        let r = pu_risk(&score_all(net, positives)?, &score_all(net, unlabeled)?, cfg)?;
        if !r.total.is_finite() {
            return Err(Error::NonFinite("training risk".into()));
        }
        Ok(r.total)
    };

    let mut report = TrainReport::default();
    if train.epochs == 0 {
        return Ok((net, report));
    }
    report.epoch_risks.push(full_risk(&net)?);

    let mut optim = OptimState::new(train.optim, &net)?;
    let mut sampler = TaskSampler::new(train.seed, 0, positives.len(), unlabeled.len());
    let mut grads = Grads::zeros_like(&net);
    let steps = train.steps_per_epoch(unlabeled.len());
    for _ in 0..train.epochs {
        for _ in 0..steps {
            let (pi, ui) = sampler.next_batch(train.batch_pos, train.batch_unl);
            let pcache = pi
                .iter()
                .map(|&i| net.forward(Input::Sparse(&positives[i])))
                .collect::<Result<Vec<_>>>()?;
            let ucache = ui
                .iter()
                .map(|&i| net.forward(Input::Sparse(&unlabeled[i])))
                .collect::<Result<Vec<_>>>()?;
            let ps: Vec<f64> = pcache.iter().map(|c| c.score()).collect();
            let us: Vec<f64> = ucache.iter().map(|c| c.score()).collect();
            let signal = training_signal(&ps, &us, cfg)?;
            if !signal.risk.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "minibatch risk at step {}",
                    report.step_risks.len()
                )));
            }
            report.step_risks.push(signal.risk.total);
            if signal.objective == Objective::NegatedCorrection {
                report.clamped_steps += 1;
            }
            grads.clear();
            for (cache, g) in pcache.iter().zip(&signal.pos).chain(ucache.iter().zip(&signal.unl)) {
                net.backward(cache, &[*g], &mut grads)?;
            }
            optim.step(&mut net, &grads)?;
        }
        report.epoch_risks.push(full_risk(&net)?);
    }
    Ok((net, report))
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::net::{logistic_loss, NetConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_scores_give_ln2() {
        let cfg = PuConfig::with_prior(0.2);
        let r = unbiased_pu_risk(&[0.0; 3], &[0.0; 5], &cfg).unwrap();
        assert_abs_diff_eq!(r.total, std::f64::consts::LN_2, epsilon = 1e-15);
        let n = nonneg_pu_risk(&[0.0; 3], &[0.0; 5], &cfg).unwrap();
        assert!(!n.correction_clamped);
        assert_eq!(n.total, r.total);
    }

    #[test]
    fn worked_unbiased_examples() {
        let r = unbiased_pu_risk(&[2.0], &[0.0], &PuConfig::with_prior(0.5)).unwrap();
        assert_abs_diff_eq!(r.total, -0.306_852_819_440_054_7, epsilon = 1e-12);
        let r = unbiased_pu_risk(&[2.0], &[2.0], &PuConfig::with_prior(0.2)).unwrap();
        assert_abs_diff_eq!(r.total, 1.726_928_011_042_972_5, epsilon = 1e-12);
    }

    #[test]
    fn clamped_example() {
        let r = nonneg_pu_risk(&[5.0], &[-5.0], &PuConfig::with_prior(0.2)).unwrap();
        assert!(r.correction_clamped);
        assert_abs_diff_eq!(r.term_neg_correction, -0.994_627_721_208_705_6, epsilon = 1e-12);
        assert_abs_diff_eq!(r.total, 0.001_343_069_697_823_613_8, epsilon = 1e-15);
        assert_eq!(r.total, 0.2 * logistic_loss(5.0, 1.0));
    }

    #[test]
    fn empty_inputs_rejected() {
        let cfg = PuConfig::default();
        assert!(unbiased_pu_risk(&[], &[0.0], &cfg).is_err());
        assert!(nonneg_pu_risk(&[0.0], &[], &cfg).is_err());
        assert!(unbiased_pu_risk(&[0.0], &[0.0], &PuConfig::with_prior(1.0)).is_err());
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        let cfg = PuConfig::with_prior(0.3);
        let pos = [0.4, -1.2, 2.0];
        let unl = [0.1, 0.7, -0.3, 1.5];
        for objective in [Objective::Total, Objective::NegatedCorrection] {
            let g = score_gradients(&pos, &unl, &cfg, objective).unwrap();
            let h = 1e-6;
            let value = |p: &[f64], u: &[f64]| score_gradients(p, u, &cfg, objective).unwrap().value;
            for i in 0..pos.len() {
                let (mut up, mut dn) = (pos, pos);
                up[i] += h;
                dn[i] -= h;
                let fd = (value(&up, &unl) - value(&dn, &unl)) / (2.0 * h);
                assert_abs_diff_eq!(g.pos[i], fd, epsilon = 1e-8);
            }
            for j in 0..unl.len() {
                let (mut up, mut dn) = (unl, unl);
                up[j] += h;
                dn[j] -= h;
                let fd = (value(&pos, &up) - value(&pos, &dn)) / (2.0 * h);
                assert_abs_diff_eq!(g.unl[j], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn training_signal_switches_on_clamp() {
        let cfg = PuConfig::with_prior(0.2);
        let s = training_signal(&[5.0], &[-5.0], &cfg).unwrap();
        assert_eq!(s.objective, Objective::NegatedCorrection);
        let s = training_signal(&[0.0], &[0.0], &cfg).unwrap();
        assert_eq!(s.objective, Objective::Total);
        let unbiased = PuConfig {
            nonneg: false,
            ..cfg
        };
        let s = training_signal(&[5.0], &[-5.0], &unbiased).unwrap();
        assert_eq!(s.objective, Objective::Total);
    }

    #[test]
    fn zero_epochs_returns_initial_net() {
        let net = Mlp::scorer(&[3, 4, 1], &NetConfig::default()).unwrap();
        let xs = vec![SparseVec::from_pairs(3, [(0, 1.0)]).unwrap()];
        let train = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (out, report) = pu_train(&xs, &xs, net.clone(), &PuConfig::default(), &train).unwrap();
        assert_eq!(out, net);
        assert!(report.step_risks.is_empty());
    }

    #[test]
    fn sampler_is_deterministic_and_covers_pool() {
        let mut a = TaskSampler::new(7, 0, 5, 9);
        let mut b = TaskSampler::new(7, 0, 5, 9);
        let mut c = TaskSampler::new(7, 1, 5, 9);
        let (pa, ua) = a.next_batch(3, 9);
        assert_eq!((pa.clone(), ua.clone()), b.next_batch(3, 9));
        assert_ne!((pa, ua.clone()), c.next_batch(3, 9));
        let mut sorted = ua;
        sorted.sort();
        assert_eq!(sorted, (0..9).collect::<Vec<_>>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn risk_invariants(
            pos in proptest::collection::vec(-20.0f64..20.0, 1..12),
            unl in proptest::collection::vec(-20.0f64..20.0, 1..12),
            prior in 0.01f64..0.99,
        ) {
            let cfg = PuConfig::with_prior(prior);
            let u = unbiased_pu_risk(&pos, &unl, &cfg).unwrap();
            let n = nonneg_pu_risk(&pos, &unl, &cfg).unwrap();
            prop_assert!(n.total >= 0.0);
            if !n.correction_clamped {
                prop_assert_eq!(n.total, u.total);
            } else {
                prop_assert_eq!(n.total, n.term_pos);
            }
        }

        #[test]
        fn unbiased_total_is_affine_in_prior(
            pos in proptest::collection::vec(-5.0f64..5.0, 1..8),
            unl in proptest::collection::vec(-5.0f64..5.0, 1..8),
            a in 0.05f64..0.45,
            b in 0.55f64..0.95,
        ) {
            let at = |p: f64| unbiased_pu_risk(&pos, &unl, &PuConfig::with_prior(p)).unwrap().total;
            let slope = (at(b) - at(a)) / (b - a);
            let ep_plus = pos.iter().map(|&s| logistic_loss(s, 1.0)).sum::<f64>() / pos.len() as f64;
            let ep_minus = pos.iter().map(|&s| logistic_loss(s, -1.0)).sum::<f64>() / pos.len() as f64;
            prop_assert!((slope - (ep_plus - ep_minus)).abs() < 1e-9 * (1.0 + slope.abs()));
            let mid = 0.5 * (a + b);
            prop_assert!((at(mid) - 0.5 * (at(a) + at(b))).abs() < 1e-9 * (1.0 + at(mid).abs()));
        }
    }
}
