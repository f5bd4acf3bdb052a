use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanKind {
    /// One shared generator with category embeddings, Gumbel-softmax
    /// gradients and evolutionary selection.
    CatGan,
    /// One generator per category trained on a penalty objective with
    /// Monte Carlo rollouts.
    SentiGan,
}

impl std::str::FromStr for GanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "catgan" => Ok(GanKind::CatGan),
            "sentigan" => Ok(GanKind::SentiGan),
            other => Err(Error::Config(format!("unknown GAN kind {other:?}"))),
        }
    }
}

/// Generator loss variants used as CatGAN mutations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    NonSaturating,
    LeastSquares,
    RelativisticAverage,
}

impl Mutation {
    pub const ALL: [Mutation; 3] = [Mutation::NonSaturating, Mutation::LeastSquares, Mutation::RelativisticAverage];

    pub fn name(self) -> &'static str {
        match self {
            Mutation::NonSaturating => "non_saturating",
            Mutation::LeastSquares => "least_squares",
            Mutation::RelativisticAverage => "relativistic_average",
        }
    }
}

/// Exponential decay from `start` to `end` over the adversarial rounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TempSchedule {
    pub start: f64,
    pub end: f64,
}

impl Default for TempSchedule {
    fn default() -> Self {
        TempSchedule { start: 2.0, end: 0.5 }
    }
}

impl TempSchedule {
    pub fn at(&self, round: usize, total_rounds: usize) -> f64 {
        if total_rounds <= 1 {
            return self.start;
        }
        let frac = (round.min(total_rounds - 1)) as f64 / (total_rounds - 1) as f64;
        self.start * (self.end / self.start).powf(frac)
    }
}

/// Network sizes for a GAN bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanModelConfig {
    pub emb_dim: usize,
    pub hidden: usize,
    /// Category embedding width (CatGAN generator).
    pub cat_dim: usize,
    /// Noise-initialized hidden state (SentiGAN generators).
    pub noise_init: bool,
    /// Longest generated sequence, EOS included; also the discriminator length.
    pub max_len: usize,
    pub disc_emb_dim: usize,
    pub disc_filters: usize,
    pub disc_widths: Vec<usize>,
    pub init_scale: f64,
}

impl Default for GanModelConfig {
    fn default() -> Self {
        GanModelConfig {
            emb_dim: 32,
            hidden: 64,
            cat_dim: 8,
            noise_init: true,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
            disc_emb_dim: 32,
            disc_filters: 32,
            disc_widths: vec![2, 3, 4],
            init_scale: 0.08,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    /// Discriminator steps taken after MLE pretraining, before round 0.
    pub disc_pretrain_steps: usize,
    pub adversarial_rounds: usize,
    pub batch_size: usize,
    /// Monte Carlo completions per prefix (SentiGAN).
    pub rollout_count: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub temperature: TempSchedule,
    pub mutations: Vec<Mutation>,
    /// Weight of the diversity term in the fitness.
    pub lambda_d: f64,
    pub fitness_samples: usize,
    /// Metric snapshot every this many rounds (and after the last one).
    pub eval_every: usize,
    pub eval_samples: usize,
    pub bleu_n: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_epochs: 20,
            pretrain_lr: 5e-3,
            disc_pretrain_steps: 10,
            adversarial_rounds: 50,
            batch_size: 32,
            rollout_count: 4,
            gen_lr: 1e-3,
            disc_lr: 1e-3,
            temperature: TempSchedule::default(),
            mutations: Mutation::ALL.to_vec(),
            lambda_d: 0.05,
            fitness_samples: 64,
            eval_every: 5,
            eval_samples: 200,
            bleu_n: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("adversarial_rounds", self.adversarial_rounds),
            ("batch_size", self.batch_size),
            ("rollout_count", self.rollout_count),
            ("eval_every", self.eval_every),
            ("eval_samples", self.eval_samples),
            ("bleu_n", self.bleu_n),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.fitness_samples < 32 {
            return Err(Error::Config(format!("fitness_samples {} < 32", self.fitness_samples)));
        }
        let t = self.temperature;
        if !(t.end > 0.0 && t.end <= t.start) {
            return Err(Error::Config(format!("temperature schedule {} -> {} must decay and stay positive", t.start, t.end)));
        }
        if self.mutations.is_empty() {
            return Err(Error::Config("mutation set is empty".into()));
        }
        for lr in [self.pretrain_lr, self.gen_lr, self.disc_lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate {lr} must be positive")));
            }
        }
        Ok(())
    }
}

/// Derives an independent RNG seed for one (purpose, round) pair.
pub fn stream_seed(seed: u64, purpose: u64, round: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(purpose ^ mix(round)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = TempSchedule::default();
        assert_eq!(s.at(0, 50), 2.0);
        assert!((s.at(49, 50) - 0.5).abs() < 1e-12);
        assert!(s.at(10, 50) > s.at(11, 50));
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.temperature = TempSchedule { start: 0.5, end: 2.0 };
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.fitness_samples = 8;
        assert!(c.validate().is_err());
    }

    #[test]
    fn streams_differ() {
        assert_ne!(stream_seed(1, 0, 0), stream_seed(1, 0, 1));
        assert_ne!(stream_seed(1, 0, 0), stream_seed(1, 1, 0));
        assert_eq!(stream_seed(7, 3, 9), stream_seed(7, 3, 9));
    }
}
