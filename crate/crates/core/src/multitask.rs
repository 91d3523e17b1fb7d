//! Shared-trunk multi-task PU model.
//!
//! One trunk (`d → 500 → 500 → 500`, ReLU after every layer) feeds one head
//! per period (`500 → 500 → 1`). Head `t` scores only period-`t` documents, so
//! each period keeps its own classifier while the trunk learns features
//! common to all periods.

use crate::corpus::{period_slice, Corpus, SparseVec, Vocabulary};
use crate::net::{Cache, Grads, Input, Mlp, NetConfig, OptimState};
use crate::purisk::{
    pu_risk, training_signal, Objective, PuConfig, RiskBreakdown, TaskSampler, TrainConfig,
};
use crate::{Error, Result};

/// Hidden widths of the trunk and the per-period heads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub trunk: Vec<usize>,
    pub head: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            trunk: vec![500, 500, 500],
            head: vec![500],
        }
    }
}

impl Architecture {
    /// Same depth with every hidden layer `width` wide.
    pub fn uniform(width: usize) -> Self {
        Architecture {
            trunk: vec![width; 3],
            head: vec![width],
        }
    }

    /// Layer widths of the single-path network with the same shape, used by
    /// the pooled and per-period baselines.
    pub fn single_path_dims(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.trunk.iter().copied())
            .chain(self.head.iter().copied())
            .chain(std::iter::once(1))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.trunk.is_empty() {
            return Err(Error::config("trunk needs at least one layer"));
        }
        if self.trunk.iter().chain(&self.head).any(|&w| w == 0) {
            return Err(Error::config("zero hidden width"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtpuModel {
    pub trunk: Mlp,
    pub heads: Vec<Mlp>,
}

/// Builds a model for `periods` heads. The trunk is seeded with `cfg.seed`,
/// head `t` (1-based) with `cfg.seed + t`.
pub fn build_mtpu(
    input_dim: usize,
    periods: usize,
    arch: &Architecture,
    cfg: &NetConfig,
) -> Result<MtpuModel> {
    arch.validate()?;
    if input_dim == 0 || periods == 0 {
        return Err(Error::config("input dimension and period count must be >= 1"));
    }
    let trunk_dims: Vec<usize> = std::iter::once(input_dim)
        .chain(arch.trunk.iter().copied())
        .collect();
    let trunk = Mlp::new(&trunk_dims, true, cfg)?;
    let head_dims: Vec<usize> = std::iter::once(*arch.trunk.last().expect("validated"))
        .chain(arch.head.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let heads = (1..=periods)
        .map(|t| {
            let head_cfg = NetConfig {
                seed: cfg.seed.wrapping_add(t as u64),
                ..*cfg
            };
            Mlp::scorer(&head_dims, &head_cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    MtpuModel::new(trunk, heads)
}

/// Caches of one trunk+head evaluation.
#[derive(Debug, Clone)]
pub struct TaskCache {
    trunk: Cache,
    head: Cache,
}

impl TaskCache {
    pub fn score(&self) -> f64 {
        self.head.score()
    }
}

/// Gradients of a per-period objective.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGrads {
    pub trunk: Grads,
    pub head: Grads,
}

impl MtpuModel {
    pub fn new(trunk: Mlp, heads: Vec<Mlp>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::config("multi-task model needs at least one head"));
        }
        if !trunk.relu_output() {
            return Err(Error::config("trunk must end in ReLU"));
        }
        for head in &heads {
            if head.input_dim() != trunk.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: trunk.output_dim(),
                    got: head.input_dim(),
                });
            }
            if head.output_dim() != 1 || head.relu_output() {
                return Err(Error::config("heads must produce a linear scalar score"));
            }
        }
        Ok(MtpuModel { trunk, heads })
    }

    pub fn num_periods(&self) -> usize {
        self.heads.len()
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn head(&self, period: usize) -> Result<&Mlp> {
        self.check_period(period)?;
        Ok(&self.heads[period - 1])
    }

    fn check_period(&self, period: usize) -> Result<()> {
        if period == 0 || period > self.heads.len() {
            return Err(Error::PeriodOutOfRange {
                period,
                periods: self.heads.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, period: usize, x: &SparseVec) -> Result<TaskCache> {
        self.check_period(period)?;
        let trunk = self.trunk.forward(Input::Sparse(x))?;
        let head = self.heads[period - 1].forward(Input::Dense(trunk.output()))?;
        Ok(TaskCache { trunk, head })
    }

    /// `f_t(x) = head_t(trunk(x))`.
    pub fn score(&self, period: usize, x: &SparseVec) -> Result<f64> {
        Ok(self.forward(period, x)?.score())
    }

    pub fn score_all(&self, period: usize, xs: &[SparseVec]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.score(period, x)).collect()
    }

    /// Accumulates `upstream · f_t(x)` gradients into the trunk and head-`t`
    /// buffers. No other head is touched.
    pub fn backward(
        &self,
        period: usize,
        cache: &TaskCache,
        upstream: f64,
        grads: &mut TaskGrads,
    ) -> Result<()> {
        let head = self.head(period)?;
        let into_trunk = head.backward(&cache.head, &[upstream], &mut grads.head)?;
        self.trunk.backward(&cache.trunk, &into_trunk, &mut grads.trunk)?;
        Ok(())
    }

    pub fn zero_grads(&self, period: usize) -> Result<TaskGrads> {
        Ok(TaskGrads {
            trunk: Grads::zeros_like(&self.trunk),
            head: Grads::zeros_like(self.head(period)?),
        })
    }

    /// Concatenates the trunk and head `t` into one scalar network.
    pub fn single_path(&self, period: usize) -> Result<Mlp> {
        let head = self.head(period)?;
        let layers = self
            .trunk
            .layers()
            .iter()
            .chain(head.layers())
            .cloned()
            .collect();
        Mlp::from_layers(layers, false)
    }
}

/// Per-period risk of `f_t` on a positive and an unlabeled batch.
pub fn per_task_risk(
    model: &MtpuModel,
    period: usize,
    pos: &[SparseVec],
    unl: &[SparseVec],
    cfg: &PuConfig,
) -> Result<RiskBreakdown> {
    pu_risk(
        &model.score_all(period, pos)?,
        &model.score_all(period, unl)?,
        cfg,
    )
}

/// Risk of period `t` and the gradient of `objective` (or of the training
/// signal's choice when `None`) with respect to trunk and head `t`.
pub fn per_task_gradients(
    model: &MtpuModel,
    period: usize,
    pos: &[SparseVec],
    unl: &[SparseVec],
    cfg: &PuConfig,
    objective: Option<Objective>,
) -> Result<(RiskBreakdown, Objective, TaskGrads)> {
    let mut grads = model.zero_grads(period)?;
    let (risk, objective) = accumulate_task(model, period, pos, unl, cfg, objective, &mut grads)?;
    Ok((risk, objective, grads))
}

fn accumulate_task(
    model: &MtpuModel,
    period: usize,
    pos: &[SparseVec],
    unl: &[SparseVec],
    cfg: &PuConfig,
    objective: Option<Objective>,
    grads: &mut TaskGrads,
) -> Result<(RiskBreakdown, Objective)> {
    let pc = pos
        .iter()
        .map(|x| model.forward(period, x))
        .collect::<Result<Vec<_>>>()?;
    let uc = unl
        .iter()
        .map(|x| model.forward(period, x))
        .collect::<Result<Vec<_>>>()?;
    let ps: Vec<f64> = pc.iter().map(TaskCache::score).collect();
    let us: Vec<f64> = uc.iter().map(TaskCache::score).collect();
    let signal = match objective {
        Some(o) => crate::purisk::score_gradients(&ps, &us, cfg, o)?,
        None => training_signal(&ps, &us, cfg)?,
    };
    if !signal.risk.total.is_finite() {
        return Err(Error::NonFinite(format!("risk of period {period}")));
    }
    for (cache, g) in pc.iter().zip(&signal.pos).chain(uc.iter().zip(&signal.unl)) {
        model.backward(period, cache, *g, grads)?;
    }
    Ok((signal.risk, signal.objective))
}

/// How periods share trunk updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// One minibatch step per period in turn, trunk updated every step.
    #[default]
    RoundRobin,
    /// Per-period risks summed into a single step per cycle.
    Joint,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round-robin" => Ok(Schedule::RoundRobin),
            "joint" => Ok(Schedule::Joint),
            other => Err(Error::config(format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtpuTrainConfig {
    /// Per-period PU settings; a single entry applies to every period.
    pub pu: Vec<PuConfig>,
    pub schedule: Schedule,
    pub train: TrainConfig,
    pub freeze_trunk: bool,
    /// 1-based periods to train; `None` trains all of them.
    pub periods: Option<Vec<usize>>,
}

impl Default for MtpuTrainConfig {
    fn default() -> Self {
        MtpuTrainConfig {
            pu: vec![PuConfig::default()],
            schedule: Schedule::RoundRobin,
            train: TrainConfig::default(),
            freeze_trunk: false,
            periods: None,
        }
    }
}

impl MtpuTrainConfig {
    pub fn pu_for(&self, period: usize) -> &PuConfig {
        if self.pu.len() == 1 {
            &self.pu[0]
        } else {
            &self.pu[period - 1]
        }
    }

    pub fn validate(&self, periods: usize) -> Result<()> {
        if self.pu.len() != 1 && self.pu.len() != periods {
            return Err(Error::config(format!(
                "{} per-period priors given for {periods} periods",
                self.pu.len()
            )));
        }
        for pu in &self.pu {
            pu.validate()?;
        }
        if let Some(ps) = &self.periods {
            for &p in ps {
                if p == 0 || p > periods {
                    return Err(Error::PeriodOutOfRange { period: p, periods });
                }
            }
        }
        self.train.validate()
    }
}

/// Positive and unlabeled vectors of one period.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskData {
    pub positives: Vec<SparseVec>,
    pub unlabeled: Vec<SparseVec>,
}

/// Per-period vectors for every period of the corpus.
pub fn task_data(corpus: &Corpus, vocab: &Vocabulary) -> Result<Vec<TaskData>> {
    (1..=corpus.num_periods())
        .map(|t| {
            let slice = period_slice(corpus, t)?;
            let docs = corpus.documents();
            Ok(TaskData {
                positives: slice.positives.iter().map(|&i| vocab.vectorize(&docs[i])).collect(),
                unlabeled: slice.unlabeled.iter().map(|&i| vocab.vectorize(&docs[i])).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MtpuReport {
    /// `(period, minibatch risk)` in update order.
    pub step_risks: Vec<(usize, f64)>,
    pub clamped_steps: usize,
}

impl MtpuReport {
    pub fn risks_for(&self, period: usize) -> Vec<f64> {
        self.step_risks
            .iter()
            .filter(|(p, _)| *p == period)
            .map(|(_, r)| *r)
            .collect()
    }
}

/// Trains the scheduled heads (and the trunk unless frozen). Heads outside
/// the schedule are never written.
pub fn train_multitask(
    mut model: MtpuModel,
    data: &[TaskData],
    cfg: &MtpuTrainConfig,
) -> Result<(MtpuModel, MtpuReport)> {
    let periods = model.num_periods();
    if data.len() != periods {
        return Err(Error::config(format!(
            "{} task datasets for {periods} heads",
            data.len()
        )));
    }
    cfg.validate(periods)?;
    let scheduled: Vec<usize> = cfg
        .periods
        .clone()
        .unwrap_or_else(|| (1..=periods).collect());
    for &t in &scheduled {
        let d = &data[t - 1];
        if d.positives.is_empty() {
            return Err(Error::period(t, "no positive samples"));
        }
        if d.unlabeled.is_empty() {
            return Err(Error::period(t, "no unlabeled samples"));
        }
    }

    let mut report = MtpuReport::default();
    if cfg.train.epochs == 0 || scheduled.is_empty() {
        return Ok((model, report));
    }

    let train = &cfg.train;
    let mut trunk_opt = OptimState::new(train.optim, &model.trunk)?;
    let mut head_opts = model
        .heads
        .iter()
        .map(|h| OptimState::new(train.optim, h))
        .collect::<Result<Vec<_>>>()?;
    let mut samplers: Vec<TaskSampler> = (1..=periods)
        .map(|t| {
            TaskSampler::new(
                train.seed,
                t - 1,
                data[t - 1].positives.len(),
                data[t - 1].unlabeled.len(),
            )
        })
        .collect();
    let cycles = scheduled
        .iter()
        .map(|&t| train.steps_per_epoch(data[t - 1].unlabeled.len()))
        .max()
        .unwrap_or(1);

    let batch = |sampler: &mut TaskSampler, d: &TaskData| {
        let (pi, ui) = sampler.next_batch(train.batch_pos, train.batch_unl);
        let pos: Vec<SparseVec> = pi.iter().map(|&i| d.positives[i].clone()).collect();
        let unl: Vec<SparseVec> = ui.iter().map(|&i| d.unlabeled[i].clone()).collect();
        (pos, unl)
    };

    for _ in 0..train.epochs {
        for _ in 0..cycles {
            match cfg.schedule {
                Schedule::RoundRobin => {
                    for &t in &scheduled {
                        let (pos, unl) = batch(&mut samplers[t - 1], &data[t - 1]);
                        let (risk, objective, grads) =
                            per_task_gradients(&model, t, &pos, &unl, cfg.pu_for(t), None)?;
                        report.step_risks.push((t, risk.total));
                        if objective == Objective::NegatedCorrection {
                            report.clamped_steps += 1;
                        }
                        head_opts[t - 1].step(&mut model.heads[t - 1], &grads.head)?;
                        if !cfg.freeze_trunk {
                            trunk_opt.step(&mut model.trunk, &grads.trunk)?;
                        }
                    }
                }
                Schedule::Joint => {
                    let mut trunk_grads = Grads::zeros_like(&model.trunk);
                    let mut head_grads = Vec::with_capacity(scheduled.len());
                    for &t in &scheduled {
                        let (pos, unl) = batch(&mut samplers[t - 1], &data[t - 1]);
                        let mut grads = TaskGrads {
                            trunk: trunk_grads,
                            head: Grads::zeros_like(&model.heads[t - 1]),
                        };
                        let (risk, objective) = accumulate_task(
                            &model,
                            t,
                            &pos,
                            &unl,
                            cfg.pu_for(t),
                            None,
                            &mut grads,
                        )?;
                        report.step_risks.push((t, risk.total));
                        if objective == Objective::NegatedCorrection {
                            report.clamped_steps += 1;
                        }
                        trunk_grads = grads.trunk;
                        head_grads.push((t, grads.head));
                    }
                    for (t, g) in head_grads {
                        head_opts[t - 1].step(&mut model.heads[t - 1], &g)?;
                    }
                    if !cfg.freeze_trunk {
                        trunk_opt.step(&mut model.trunk, &trunk_grads)?;
                    }
                }
            }
        }
    }
    Ok((model, report))
}

/// Builds, then trains, a model for every period of `corpus`.
pub fn mtpu_train(
    corpus: &Corpus,
    vocab: &Vocabulary,
    arch: &Architecture,
    net_cfg: &NetConfig,
    cfg: &MtpuTrainConfig,
) -> Result<(MtpuModel, MtpuReport)> {
    let data = task_data(corpus, vocab)?;
    let model = build_mtpu(vocab.dim(), corpus.num_periods(), arch, net_cfg)?;
    train_multitask(model, &data, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Init;
    use crate::purisk::pu_train;

    fn small_arch() -> Architecture {
        Architecture {
            trunk: vec![6, 5, 4],
            head: vec![3],
        }
    }

    fn toy_data(dim: usize, periods: usize) -> Vec<TaskData> {
        (0..periods)
            .map(|t| TaskData {
                positives: (0..6)
                    .map(|i| SparseVec::from_pairs(dim, [(i % 3, 1.0 + t as f64), ((i + t) % dim, 1.0)]).unwrap())
                    .collect(),
                unlabeled: (0..10)
                    .map(|i| SparseVec::from_pairs(dim, [(i % dim, 2.0), ((3 + i) % dim, 1.0)]).unwrap())
                    .collect(),
            })
            .collect()
    }

    fn quick_train(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_pos: 3,
            batch_unl: 4,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_follow_architecture() {
        let m = build_mtpu(10, 3, &Architecture::default(), &NetConfig::default()).unwrap();
        assert_eq!(m.trunk.dims(), [10, 500, 500, 500]);
        assert_eq!(m.heads.len(), 3);
        for h in &m.heads {
            assert_eq!(h.dims(), [500, 500, 1]);
        }
        let single = build_mtpu(10, 1, &Architecture::default(), &NetConfig::default())
            .unwrap()
            .single_path(1)
            .unwrap();
        assert_eq!(single.dims(), [10, 500, 500, 500, 500, 1]);
        assert_eq!(single.dims(), Architecture::default().single_path_dims(10));
    }

    #[test]
    fn seeding() {
        let cfg = NetConfig {
            seed: 4,
            ..Default::default()
        };
        let a = build_mtpu(8, 3, &small_arch(), &cfg).unwrap();
        let b = build_mtpu(8, 3, &small_arch(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.heads[0], a.heads[1]);
        let x = SparseVec::from_pairs(8, [(1, 1.0), (5, 2.0)]).unwrap();
        assert_ne!(a.score(1, &x).unwrap(), a.score(2, &x).unwrap());
        assert_eq!(a.score(2, &x).unwrap(), a.score(2, &x).unwrap());
        assert!(matches!(
            a.score(4, &x),
            Err(Error::PeriodOutOfRange { period: 4, periods: 3 })
        ));
    }

    #[test]
    fn zero_model_risk_is_ln2() {
        let cfg = NetConfig {
            init: Init::Zeros,
            ..Default::default()
        };
        let m = build_mtpu(8, 2, &small_arch(), &cfg).unwrap();
        let data = toy_data(8, 2);
        assert_eq!(m.score(1, &data[0].positives[0]).unwrap(), 0.0);
        let r = per_task_risk(&m, 2, &data[1].positives, &data[1].unlabeled, &PuConfig::default()).unwrap();
        assert!((r.total - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn per_task_risk_matches_direct_scores() {
        let m = build_mtpu(8, 2, &small_arch(), &NetConfig::default()).unwrap();
        let d = &toy_data(8, 2)[1];
        let cfg = PuConfig::default();
        let direct = crate::purisk::nonneg_pu_risk(
            &m.score_all(2, &d.positives).unwrap(),
            &m.score_all(2, &d.unlabeled).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(per_task_risk(&m, 2, &d.positives, &d.unlabeled, &cfg).unwrap(), direct);
        assert!(per_task_risk(&m, 2, &[], &d.unlabeled, &cfg).is_err());
    }

    #[test]
    fn single_task_matches_pu_train_trajectory() {
        let cfg = NetConfig {
            seed: 21,
            ..Default::default()
        };
        let model = build_mtpu(8, 1, &small_arch(), &cfg).unwrap();
        let data = toy_data(8, 1);
        let train = quick_train(3);
        let mt_cfg = MtpuTrainConfig {
            train,
            ..Default::default()
        };
        let (trained, report) = train_multitask(model.clone(), &data, &mt_cfg).unwrap();
        let (net, single) = pu_train(
            &data[0].positives,
            &data[0].unlabeled,
            model.single_path(1).unwrap(),
            &PuConfig::default(),
            &train,
        )
        .unwrap();
        assert_eq!(report.risks_for(1), single.step_risks);
        assert_eq!(trained.single_path(1).unwrap(), net);
    }

    #[test]
    fn unscheduled_heads_untouched() {
        let model = build_mtpu(8, 3, &small_arch(), &NetConfig::default()).unwrap();
        let data = toy_data(8, 3);
        for schedule in [Schedule::RoundRobin, Schedule::Joint] {
            let cfg = MtpuTrainConfig {
                train: quick_train(2),
                periods: Some(vec![2]),
                schedule,
                ..Default::default()
            };
            let (trained, _) = train_multitask(model.clone(), &data, &cfg).unwrap();
            assert_eq!(trained.heads[0], model.heads[0]);
            assert_eq!(trained.heads[2], model.heads[2]);
            assert_ne!(trained.heads[1], model.heads[1]);
            assert_ne!(trained.trunk, model.trunk);
        }
        let frozen = MtpuTrainConfig {
            train: quick_train(2),
            periods: Some(vec![3]),
            freeze_trunk: true,
            ..Default::default()
        };
        let (trained, _) = train_multitask(model.clone(), &data, &frozen).unwrap();
        assert_eq!(trained.trunk, model.trunk);
        assert_eq!(&trained.heads[..2], &model.heads[..2]);
    }

    #[test]
    fn training_is_deterministic() {
        let model = build_mtpu(8, 2, &small_arch(), &NetConfig::default()).unwrap();
        let data = toy_data(8, 2);
        let cfg = MtpuTrainConfig {
            train: quick_train(2),
            ..Default::default()
        };
        let (a, ra) = train_multitask(model.clone(), &data, &cfg).unwrap();
        let (b, rb) = train_multitask(model, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn bad_configs() {
        let model = build_mtpu(8, 2, &small_arch(), &NetConfig::default()).unwrap();
        let data = toy_data(8, 2);
        let wrong_priors = MtpuTrainConfig {
            pu: vec![PuConfig::default(); 3],
            ..Default::default()
        };
        assert!(train_multitask(model.clone(), &data, &wrong_priors).is_err());
        let bad_prior = MtpuTrainConfig {
            pu: vec![PuConfig::with_prior(1.5)],
            ..Default::default()
        };
        assert!(train_multitask(model.clone(), &data, &bad_prior).is_err());
        let mut empty = data.clone();
        empty[1].unlabeled.clear();
        assert!(matches!(
            train_multitask(model, &empty, &MtpuTrainConfig::default()),
            Err(Error::Period { period: 2, .. })
        ));
    }
}
