//! Training and scoring entry points shared by the CLI and the bindings.

use crate::analysis::PeriodScores;
use crate::checkpoint::{Checkpoint, CheckpointMeta, Model};
use crate::corpus::{build_vocabulary, period_slice, Corpus, Vocabulary};
use crate::multitask::{build_mtpu, task_data, train_multitask, Architecture, MtpuTrainConfig};
use crate::net::{Mlp, NetConfig};
use crate::purisk::{pu_train, PuConfig};
use crate::{Error, Result};

/// Which model family to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Shared trunk with one head per period.
    #[default]
    Mtpu,
    /// One network on the data of every period pooled together.
    Pu1,
    /// An independent network per period.
    Pu2,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtpu" => Ok(Mode::Mtpu),
            "pu1" => Ok(Mode::Pu1),
            "pu2" => Ok(Mode::Pu2),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mtpu => "mtpu",
            Mode::Pu1 => "pu1",
            Mode::Pu2 => "pu2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub mode: Mode,
    pub arch: Architecture,
    pub net: NetConfig,
    /// Schedule, PU and optimizer settings. Only the multi-task mode uses the
    /// schedule, the trunk freeze flag and per-period priors.
    pub mtpu: MtpuTrainConfig,
    pub min_count: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            mode: Mode::Mtpu,
            arch: Architecture::default(),
            net: NetConfig::default(),
            mtpu: MtpuTrainConfig::default(),
            min_count: 1,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.min_count == 0 {
            return Err(Error::config("min_count must be >= 1"));
        }
        if self.arch.trunk.is_empty() || self.arch.trunk.iter().chain(&self.arch.head).any(|&w| w == 0) {
            return Err(Error::config("hidden widths must be >= 1"));
        }
        for pu in &self.mtpu.pu {
            pu.validate()?;
        }
        self.mtpu.train.validate()
    }

    fn single_pu(&self, period: usize) -> PuConfig {
        *self.mtpu.pu_for(period)
    }
}

/// Trained model plus the vocabulary it expects.
#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub vocab: Vocabulary,
}

/// Trains the requested model family on `corpus`.
///
/// Per-period models only ever see the documents of their own period.
pub fn train(corpus: &Corpus, opts: &TrainOptions) -> Result<Trained> {
    opts.validate()?;
    let vocab = build_vocabulary(corpus, opts.min_count)?;
    let periods = corpus.num_periods();
    opts.mtpu.validate(periods)?;
    let data = task_data(corpus, &vocab)?;
    let dims = opts.arch.single_path_dims(vocab.dim());
    let model = match opts.mode {
        Mode::Mtpu => {
            let m = build_mtpu(vocab.dim(), periods, &opts.arch, &opts.net)?;
            Model::Multitask(train_multitask(m, &data, &opts.mtpu)?.0)
        }
        Mode::Pu1 => {
            if opts.mtpu.pu.len() != 1 {
                return Err(Error::config("the pooled model takes a single prior"));
            }
            let positives: Vec<_> = data.iter().flat_map(|d| d.positives.iter().cloned()).collect();
            let unlabeled: Vec<_> = data.iter().flat_map(|d| d.unlabeled.iter().cloned()).collect();
            let net = Mlp::scorer(&dims, &opts.net)?;
            let (net, _) = pu_train(&positives, &unlabeled, net, &opts.single_pu(1), &opts.mtpu.train)?;
            Model::Single(net)
        }
        Mode::Pu2 => {
            let mut nets = Vec::with_capacity(periods);
            for (i, d) in data.iter().enumerate() {
                let t = i + 1;
                let seed = opts.net.seed.wrapping_add(i as u64);
                let net = Mlp::scorer(&dims, &NetConfig { seed, ..opts.net })?;
                let train = crate::purisk::TrainConfig {
                    seed: opts.mtpu.train.seed.wrapping_add(i as u64),
                    ..opts.mtpu.train
                };
                let (net, _) = pu_train(&d.positives, &d.unlabeled, net, &opts.single_pu(t), &train)
                    .map_err(|e| Error::period(t, e.to_string()))?;
                nets.push(net);
            }
            Model::PerPeriod(nets)
        }
    };
    let min_count = u32::try_from(opts.min_count).map_err(|_| Error::config("min_count too large"))?;
    Ok(Trained {
        checkpoint: Checkpoint {
            meta: CheckpointMeta {
                seed: opts.net.seed,
                epsilon: opts.net.epsilon,
                min_count,
            },
            model,
        },
        vocab,
    })
}

/// Rebuilds the vocabulary a checkpoint was trained with.
pub fn checkpoint_vocabulary(corpus: &Corpus, ckpt: &Checkpoint) -> Result<Vocabulary> {
    let vocab = build_vocabulary(corpus, ckpt.meta.min_count as usize)?;
    if vocab.dim() != ckpt.model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: ckpt.model.input_dim(),
            got: vocab.dim(),
        });
    }
    Ok(vocab)
}

/// Scores the unlabeled documents of every period with the model responsible
/// for that period.
pub fn score_unlabeled(corpus: &Corpus, vocab: &Vocabulary, model: &Model) -> Result<Vec<PeriodScores>> {
    if let Some(p) = model.num_periods() {
        if p < corpus.num_periods() {
            return Err(Error::period(p + 1, "checkpoint has no model for this period"));
        }
    }
    let docs = corpus.documents();
    (1..=corpus.num_periods())
        .map(|t| {
            period_slice(corpus, t)?
                .unlabeled
                .iter()
                .map(|&i| Ok((docs[i].id.clone(), model.score(t, &vocab.vectorize(&docs[i]))?)))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::purisk::TrainConfig;
    use crate::synth::{generate, SynthConfig};

    fn corpus() -> Corpus {
        generate(&SynthConfig {
            periods: 3,
            n_pos: 12,
            n_unl: 20,
            vocab_size: 30,
            ..Default::default()
        })
        .unwrap()
        .0
    }

    fn opts(mode: Mode) -> TrainOptions {
        TrainOptions {
            mode,
            arch: Architecture::uniform(6),
            mtpu: MtpuTrainConfig {
                train: TrainConfig {
                    epochs: 2,
                    batch_pos: 4,
                    batch_unl: 8,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn every_mode_scores_every_unlabeled_doc() {
        let c = corpus();
        for mode in [Mode::Mtpu, Mode::Pu1, Mode::Pu2] {
            let trained = train(&c, &opts(mode)).unwrap();
            let expected = match mode {
                Mode::Pu1 => None,
                _ => Some(3),
            };
            assert_eq!(trained.checkpoint.model.num_periods(), expected);
            let scores = score_unlabeled(&c, &trained.vocab, &trained.checkpoint.model).unwrap();
            assert_eq!(scores.iter().map(Vec::len).collect::<Vec<_>>(), [20, 20, 20]);
            assert!(scores.iter().flatten().all(|(_, s)| s.is_finite()));
        }
    }

    #[test]
    fn baseline_nets_have_five_layers() {
        let trained = train(&corpus(), &opts(Mode::Pu2)).unwrap();
        let Model::PerPeriod(nets) = &trained.checkpoint.model else {
            panic!("wrong kind")
        };
        assert_eq!(nets[0].dims(), [trained.vocab.dim(), 6, 6, 6, 6, 1]);
    }

    #[test]
    fn invalid_prior_rejected_before_training() {
        let mut o = opts(Mode::Mtpu);
        o.mtpu.pu = vec![PuConfig::with_prior(1.5)];
        assert!(train(&corpus(), &o).unwrap_err().is_validation());
    }

    #[test]
    fn missing_head_is_an_error() {
        let c = corpus();
        let trained = train(&c, &opts(Mode::Pu2)).unwrap();
        let Model::PerPeriod(mut nets) = trained.checkpoint.model else {
            panic!("wrong kind")
        };
        nets.pop();
        assert!(score_unlabeled(&c, &trained.vocab, &Model::PerPeriod(nets)).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [Mode::Mtpu, Mode::Pu1, Mode::Pu2] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
    }
}
