//! MLE pretraining and the two adversarial training procedures: SentiGAN
//! (one generator per category, penalty minimization with Monte Carlo
//! rollouts) and CatGAN (one category-conditioned generator, Gumbel-softmax
//! gradients, evolutionary selection over loss mutations).

mod bundle;
mod config;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

pub use bundle::GanBundle;
pub use config::{stream_seed, GanKind, GanModelConfig, Mutation, TempSchedule, TrainConfig};

use crate::corpus::{LabeledCorpus, Split, EOS};
use crate::error::{Error, Result};
use crate::gantext::{CnnInput, GeneratorNet, Sample, SampleMode};
use crate::genmetrics::{bleu_with, nll_gen, with_eos, BleuConfig, BleuReferences};
use crate::numerics::{Adam, NumericsError, Optimizer, Tape, Tensor};

// RNG stream ids.
const S_PRETRAIN: u64 = 1;
const S_DISC_PRE: u64 = 2;
const S_ROUND: u64 = 3;
const S_FITNESS: u64 = 4;
const S_EVAL: u64 = 5;

/// Training and held-out text for one GAN run, grouped by category.
#[derive(Clone, Debug, PartialEq)]
pub struct GanData {
    pub num_categories: usize,
    /// Per category: model sequences (content + EOS).
    pub train: Vec<Vec<Vec<u32>>>,
    /// `(category, content)` pairs for NLL_gen.
    pub heldout: Vec<(usize, Vec<u32>)>,
}

impl GanData {
    /// Train split records feed training, val split records are held out.
    /// Content is cut to `max_len - 1` so the EOS fits.
    pub fn from_corpus(corpus: &LabeledCorpus, max_len: usize) -> Result<Self> {
        let k = corpus.num_categories();
        if k < 2 {
            return Err(Error::SingleCategory);
        }
        let cut = |t: &[u32]| t[..t.len().min(max_len.saturating_sub(1))].to_vec();
        let mut train = vec![Vec::new(); k];
        for r in corpus.split_records(Split::Train) {
            train[r.label].push(with_eos(&cut(&r.tokens)));
        }
        let heldout: Vec<(usize, Vec<u32>)> =
            corpus.split_records(Split::Val).map(|r| (r.label, cut(&r.tokens))).collect();
        for (c, seqs) in train.iter().enumerate() {
            if seqs.is_empty() {
                return Err(Error::SmallCategory { category: corpus.label_names[c].clone(), count: 0, needed: 1 });
            }
        }
        if heldout.is_empty() {
            return Err(Error::Empty("held-out slice"));
        }
        Ok(GanData { num_categories: k, train, heldout })
    }

    fn heldout_for(&self, categories: &[usize]) -> Vec<(usize, &[u32])> {
        self.heldout
            .iter()
            .filter(|(c, _)| categories.contains(c))
            .map(|(c, t)| (*c, t.as_slice()))
            .collect()
    }

    /// One random training sequence of `category`.
    fn draw_real(&self, category: usize, rng: &mut dyn RngCore) -> &[u32] {
        let pool = &self.train[category];
        &pool[rng.random_range(0..pool.len())]
    }
}

fn noise_for(gen: &GeneratorNet, batch: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    if gen.config.noise_init {
        (0..batch * gen.config.hidden).map(|_| StandardNormal.sample(&mut *rng)).collect()
    } else {
        Vec::new()
    }
}

/// Teacher-forced MLE on the training sequences of `categories`. Returns the
/// held-out NLL_gen before training and after every epoch.
pub fn pretrain_mle(gen: &mut GeneratorNet, data: &GanData, categories: &[usize], config: &TrainConfig) -> Result<Vec<f64>> {
    let mut pool: Vec<(usize, &[u32])> = Vec::new();
    for &c in categories {
        gen.check_category(c)?;
        let seqs = data.train.get(c).filter(|s| !s.is_empty()).ok_or(Error::Empty("category training slice"))?;
        pool.extend(seqs.iter().map(|s| (c, s.as_slice())));
    }
    let heldout = data.heldout_for(categories);
    let eval_seed = stream_seed(config.seed, S_EVAL, u64::MAX);
    let score = |g: &GeneratorNet| if heldout.is_empty() { Ok(f64::NAN) } else { nll_gen(g, &heldout, eval_seed) };
    let mut curve = vec![score(gen)?];
    let mut opt = Adam::new(config.pretrain_lr);
    let salt = categories.first().copied().unwrap_or(0) as u64;
    for epoch in 0..config.pretrain_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed ^ salt, S_PRETRAIN, epoch as u64));
        pool.shuffle(&mut rng);
        for batch in pool.chunks(config.batch_size) {
            let cats: Vec<usize> = batch.iter().map(|b| b.0).collect();
            let seqs: Vec<&[u32]> = batch.iter().map(|b| b.1).collect();
            let noise = noise_for(gen, batch.len(), &mut rng);
            let mut tape = Tape::new();
            let vars = gen.bind(&mut tape, true);
            let loss = gen.mle_loss(&mut tape, &vars, &cats, &seqs, &noise)?;
            tape.backward_into(loss, &mut gen.params)?;
            opt.step(&mut gen.params)?;
        }
        curve.push(score(gen)?);
    }
    Ok(curve)
}

/// Pretrains every generator of the bundle on its own categories.
pub fn pretrain_bundle(bundle: &mut GanBundle, data: &GanData, config: &TrainConfig) -> Result<Vec<Vec<f64>>> {
    let k = bundle.num_categories;
    if data.num_categories != k {
        return Err(Error::Config(format!("data has {} categories, bundle {k}", data.num_categories)));
    }
    bundle
        .generators
        .iter_mut()
        .map(|g| {
            let cats = g.categories();
            pretrain_mle(g, data, &cats, config)
        })
        .collect()
}

/// `1 - D_i(x)` clamped to [0, 1].
pub fn penalty(d_real_category: f64) -> f64 {
    (1.0 - d_real_category).clamp(0.0, 1.0)
}

/// Probability the discriminator assigns to "real text of `category`".
/// Softmax(k+1) and Sigmoid(k) heads both keep category c in column c.
fn real_prob(probs: &[f64], category: usize) -> f64 {
    probs[category]
}

/// Expected penalty of completing `prefix`, averaged over `n` rollouts.
pub fn mc_penalty(
    bundle: &GanBundle,
    category: usize,
    prefix: &[u32],
    noise: &[f64],
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("rollout count must be positive".into()));
    }
    let gen = bundle.generator_for(category)?;
    let done = gen.rollout(category, prefix, noise, n, rng)?;
    let refs: Vec<&[u32]> = done.iter().map(Vec::as_slice).collect();
    let probs = bundle.disc.discriminate(&refs)?;
    Ok(probs.iter().map(|p| penalty(real_prob(p, category))).sum::<f64>() / n as f64)
}

/// Per-step penalties for each sample: the final step scores the finished
/// sequence, earlier steps average `n` rollouts from the prefix.
pub fn step_penalties(bundle: &GanBundle, samples: &[Sample], n: usize, rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let gen = bundle.generator_for(s.category)?;
        let len = s.tokens.len();
        let mut jobs: Vec<(usize, &[u32], &[f64])> = Vec::with_capacity(len.saturating_sub(1) * n);
        for t in 1..len {
            for _ in 0..n {
                jobs.push((s.category, &s.tokens[..t], &s.noise));
            }
        }
        let mut seqs = gen.complete_many(&jobs, rng)?;
        seqs.push(s.tokens.clone());
        let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
        let probs = bundle.disc.discriminate(&refs)?;
        let pens: Vec<f64> = probs.iter().map(|p| penalty(real_prob(p, s.category))).collect();
        let mut row: Vec<f64> = pens[..pens.len() - 1].chunks(n).map(|c| c.iter().sum::<f64>() / n as f64).collect();
        row.push(pens[pens.len() - 1]);
        out.push(row);
    }
    Ok(out)
}

/// Fitness components of one CatGAN candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Fitness {
    pub quality: f64,
    pub diversity: f64,
    pub lambda_d: f64,
    pub total: f64,
}

impl Fitness {
    pub fn new(quality: f64, diversity: f64, lambda_d: f64) -> Self {
        Fitness { quality, diversity, lambda_d, total: quality + lambda_d * diversity }
    }
}

/// Scores a generator on `n_samples` fresh samples, categories taken
/// round-robin: quality is the mean discriminator score of each sample under
/// its own category head, diversity the mean per-token NLL of the samples
/// under the generator itself.
pub fn evaluate_fitness(
    gen: &GeneratorNet,
    disc: &crate::gantext::CnnNet,
    categories: &[usize],
    n_samples: usize,
    lambda_d: f64,
    seed: u64,
) -> Result<Fitness> {
    if n_samples < 32 {
        return Err(Error::Config(format!("fitness needs at least 32 samples, got {n_samples}")));
    }
    if categories.is_empty() {
        return Err(Error::Empty("fitness categories"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cats: Vec<usize> = (0..n_samples).map(|i| categories[i % categories.len()]).collect();
    let samples = gen.sample(&cats, SampleMode::Multinomial { temperature: 1.0 }, &mut rng)?;
    let refs: Vec<&[u32]> = samples.iter().map(|s| s.tokens.as_slice()).collect();
    let probs = disc.discriminate(&refs)?;
    let quality = samples.iter().zip(&probs).map(|(s, p)| p[s.category]).sum::<f64>() / n_samples as f64;
    let tokens: usize = samples.iter().map(|s| s.log_probs.len()).sum();
    let diversity = -samples.iter().map(Sample::log_prob).sum::<f64>() / tokens.max(1) as f64;
    Ok(Fitness::new(quality, diversity, lambda_d))
}

/// Index of the highest total fitness; ties go to the lowest index.
pub fn select_best(fitness: &[Option<Fitness>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, f) in fitness.iter().enumerate() {
        if let Some(f) = f {
            if best.is_none_or(|b| f.total > fitness[b].expect("kept").total) {
                best = Some(i);
            }
        }
    }
    best
}

/// One line of training history.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub aborted: bool,
    pub temperature: Option<f64>,
    pub gen_loss: Option<f64>,
    pub disc_loss: Option<f64>,
    pub penalty_mean: Option<f64>,
    pub mutation: Option<String>,
    pub f_quality: Option<f64>,
    pub f_diversity: Option<f64>,
    pub fitness: Option<f64>,
    pub bleu: Option<f64>,
    pub nll_gen: Option<f64>,
    pub nll_div: Option<f64>,
}

/// One evaluated CatGAN child.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub round: usize,
    pub mutation: String,
    pub aborted: bool,
    pub f_quality: Option<f64>,
    pub f_diversity: Option<f64>,
    pub fitness: Option<f64>,
    pub lambda_d: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub pretrain: Vec<Vec<f64>>,
    pub rounds: Vec<RoundRecord>,
    pub candidates: Vec<CandidateRecord>,
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

impl History {
    pub fn write_rounds_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(&self.rounds, w)
    }

    pub fn write_candidates_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows(&self.candidates, w)
    }
}

/// Quality and diversity snapshot of a bundle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Snapshot {
    /// Mean over categories of corpus BLEU against that category's real training text.
    pub bleu: f64,
    pub nll_gen: f64,
    pub nll_div: f64,
}

pub fn snapshot(bundle: &GanBundle, data: &GanData, config: &TrainConfig, seed: u64) -> Result<Snapshot> {
    let k = bundle.num_categories;
    let per_cat = config.eval_samples.div_ceil(k).max(1);
    let bleu_cfg = BleuConfig::with_n(config.bleu_n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut bleu_sum, mut bleu_n) = (0.0, 0);
    let (mut div_total, mut div_tokens) = (0.0, 0usize);
    let (mut gen_total, mut gen_tokens) = (0.0, 0usize);
    for c in 0..k {
        let samples = bundle.sample(c, per_cat, 1.0, &mut rng)?;
        for s in &samples {
            div_total -= s.log_prob();
            div_tokens += s.log_probs.len();
        }
        let train_refs: Vec<Vec<u32>> =
            data.train[c].iter().map(|s| s.strip_suffix(&[EOS]).unwrap_or(s).to_vec()).collect();
        if !train_refs.is_empty() {
            let hyps: Vec<Vec<u32>> = samples.iter().map(|s| s.content().to_vec()).collect();
            let table = BleuReferences::new(&train_refs, bleu_cfg.max_n);
            bleu_sum += bleu_with(&table, &hyps, &bleu_cfg)?;
            bleu_n += 1;
        }
        let refs: Vec<Vec<u32>> = data.heldout.iter().filter(|(l, _)| *l == c).map(|(_, t)| t.clone()).collect();
        if !refs.is_empty() {
            let pairs: Vec<(usize, &[u32])> = refs.iter().map(|r| (c, r.as_slice())).collect();
            let tokens: usize = refs.iter().map(|r| r.len().min(bundle.model.max_len - 1) + 1).sum();
            gen_total += nll_gen(bundle.generator_for(c)?, &pairs, seed ^ c as u64)? * tokens as f64;
            gen_tokens += tokens;
        }
    }
    Ok(Snapshot {
        bleu: if bleu_n == 0 { f64::NAN } else { bleu_sum / bleu_n as f64 },
        nll_gen: if gen_tokens == 0 { f64::NAN } else { gen_total / gen_tokens as f64 },
        nll_div: div_total / div_tokens.max(1) as f64,
    })
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Numerics(NumericsError::Diverged { .. }))
}

/// Batch of real sequences with categories round-robin.
fn real_batch<'a>(data: &'a GanData, n: usize, rng: &mut dyn RngCore) -> (Vec<usize>, Vec<&'a [u32]>) {
    let k = data.num_categories;
    let cats: Vec<usize> = (0..n).map(|i| i % k).collect();
    let seqs = cats.iter().map(|&c| data.draw_real(c, rng)).collect();
    (cats, seqs)
}

/// One discriminator update. SentiGAN: (k+1)-way cross-entropy with fakes
/// labeled k. CatGAN: per-category head BCE, real → 1 and fake → 0 on the
/// head of the sample's category.
fn disc_step(bundle: &mut GanBundle, data: &GanData, batch: usize, rng: &mut dyn RngCore) -> Result<f64> {
    let k = bundle.num_categories;
    let (real_cats, real) = real_batch(data, batch, rng);
    let fake_cats: Vec<usize> = (0..batch).map(|i| i % k).collect();
    let mut fakes: Vec<Vec<u32>> = Vec::with_capacity(batch);
    for c in 0..k {
        let n = fake_cats.iter().filter(|&&x| x == c).count();
        if n > 0 {
            fakes.extend(bundle.sample(c, n, 1.0, rng)?.into_iter().map(|s| s.tokens));
        }
    }
    let mut fake_sorted = fake_cats.clone();
    fake_sorted.sort_unstable();
    let mut seqs: Vec<&[u32]> = real.clone();
    seqs.extend(fakes.iter().map(Vec::as_slice));
    let mut tape = Tape::new();
    let vars = bundle.disc.bind(&mut tape, true);
    let logits = bundle.disc.logits(&mut tape, &vars, CnnInput::Tokens(&seqs))?;
    let loss = match bundle.kind {
        GanKind::SentiGan => {
            let mut targets = real_cats.clone();
            targets.extend(std::iter::repeat_n(k, fakes.len()));
            tape.cross_entropy(logits, &targets)?
        }
        GanKind::CatGan => {
            let mut idx = real_cats.clone();
            idx.extend(&fake_sorted);
            let z = tape.gather(logits, &idx)?;
            let n_real = real.len();
            let sign: Vec<f64> = (0..idx.len()).map(|i| if i < n_real { 1.0 } else { -1.0 }).collect();
            let s = tape.constant(Tensor::new(vec![idx.len()], sign)?);
            let signed = tape.mul(z, s)?;
            let ls = tape.log_sigmoid(signed);
            let m = tape.mean(ls);
            tape.scale(m, -2.0)
        }
    };
    let value = tape.scalar(loss);
    tape.backward_into(loss, &mut bundle.disc.params)?;
    bundle.disc_opt.step(&mut bundle.disc.params)?;
    Ok(value)
}

/// Discriminator warm-up after MLE pretraining.
pub fn pretrain_discriminator(bundle: &mut GanBundle, data: &GanData, config: &TrainConfig) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, S_DISC_PRE, 0));
    (0..config.disc_pretrain_steps).map(|_| disc_step(bundle, data, config.batch_size, &mut rng)).collect()
}

struct RoundOutcome {
    record: RoundRecord,
    candidates: Vec<CandidateRecord>,
}

fn sentigan_round(bundle: &mut GanBundle, data: &GanData, config: &TrainConfig, rng: &mut dyn RngCore) -> Result<RoundOutcome> {
    let k = bundle.num_categories;
    let per_gen = config.batch_size.div_ceil(k).max(1);
    let (mut loss_sum, mut pen_sum, mut pen_n) = (0.0, 0.0, 0usize);
    for c in 0..k {
        let samples = bundle.sample(c, per_gen, 1.0, rng)?;
        let pens = step_penalties(bundle, &samples, config.rollout_count, rng)?;
        let gen = &mut bundle.generators[c];
        let seqs: Vec<&[u32]> = samples.iter().map(|s| s.tokens.as_slice()).collect();
        let cats = vec![c; samples.len()];
        let noise: Vec<f64> = samples.iter().flat_map(|s| s.noise.iter().copied()).collect();
        let mut tape = Tape::new();
        let vars = gen.bind(&mut tape, true);
        let f = gen.forced_logits(&mut tape, &vars, &cats, &seqs, &noise)?;
        let b = f.batch;
        let mut w = vec![0.0; f.targets.len()];
        for (i, row) in pens.iter().enumerate() {
            for (t, &p) in row.iter().enumerate() {
                w[t * b + i] = p / b as f64;
                pen_sum += p;
                pen_n += 1;
            }
        }
        // Σ_t penalty_t · log G(y_t | y_<t), averaged over the batch.
        let nll = tape.weighted_nll(f.logits, &f.targets, &w)?;
        let loss = tape.neg(nll);
        loss_sum += tape.scalar(loss);
        tape.backward_into(loss, &mut gen.params)?;
        bundle.gen_opts[c].step(&mut bundle.generators[c].params)?;
    }
    let disc_loss = disc_step(bundle, data, config.batch_size, rng)?;
    Ok(RoundOutcome {
        record: RoundRecord {
            gen_loss: Some(loss_sum / k as f64),
            disc_loss: Some(disc_loss),
            penalty_mean: Some(pen_sum / pen_n.max(1) as f64),
            ..RoundRecord::default()
        },
        candidates: Vec::new(),
    })
}

/// Generator loss of one mutation given per-sample scores `f` of the
/// generated batch and constant scores `r` of a real batch.
fn mutation_loss(tape: &mut Tape, mutation: Mutation, f: crate::numerics::Var, r: &[f64]) -> Result<crate::numerics::Var> {
    Ok(match mutation {
        Mutation::NonSaturating => {
            let l = tape.log_sigmoid(f);
            let m = tape.mean(l);
            tape.neg(m)
        }
        Mutation::LeastSquares => {
            let s = tape.sigmoid(f);
            let d = tape.add_scalar(s, -1.0);
            let sq = tape.mul(d, d)?;
            tape.mean(sq)
        }
        Mutation::RelativisticAverage => {
            let mean_r = r.iter().sum::<f64>() / r.len() as f64;
            let a = tape.add_scalar(f, -mean_r);
            let la = tape.log_sigmoid(a);
            let ta = tape.mean(la);
            let mean_f = tape.mean(f);
            let rc = tape.constant(Tensor::new(vec![r.len()], r.to_vec())?);
            let d = tape.sub(rc, mean_f)?;
            let nd = tape.neg(d);
            let lb = tape.log_sigmoid(nd);
            let tb = tape.mean(lb);
            let s = tape.add(ta, tb)?;
            tape.neg(s)
        }
    })
}

/// One Gumbel straight-through step of `mutation` on `gen` against the
/// frozen discriminator.
fn mutate(
    gen: &mut GeneratorNet,
    opt: &mut Adam,
    disc: &crate::gantext::CnnNet,
    mutation: Mutation,
    real_scores: &[f64],
    categories: &[usize],
    temperature: f64,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let mut tape = Tape::new();
    let gv = gen.bind(&mut tape, true);
    let dv = disc.bind(&mut tape, false);
    let noise = noise_for(gen, categories.len(), rng);
    let g = gen.sample_gumbel(&mut tape, &gv, categories, &noise, temperature, rng)?;
    let rows = g.padded_one_hot(&mut tape, disc.config.seq_len, gen.vocab_size())?;
    let z = disc.logits(&mut tape, &dv, CnnInput::Soft { rows, batch: categories.len() })?;
    let f = tape.gather(z, categories)?;
    let loss = mutation_loss(&mut tape, mutation, f, real_scores)?;
    let value = tape.scalar(loss);
    tape.backward_into(loss, &mut gen.params)?;
    opt.step(&mut gen.params)?;
    Ok(value)
}

fn catgan_round(
    bundle: &mut GanBundle,
    data: &GanData,
    config: &TrainConfig,
    round: usize,
    rng: &mut dyn RngCore,
) -> Result<RoundOutcome> {
    let k = bundle.num_categories;
    let temperature = config.temperature.at(round, config.adversarial_rounds);
    let (cats, real) = real_batch(data, config.batch_size, rng);
    let real_scores: Vec<f64> = {
        let mut tape = Tape::new();
        let dv = bundle.disc.bind(&mut tape, false);
        let z = bundle.disc.logits(&mut tape, &dv, CnnInput::Tokens(&real))?;
        let z = tape.gather(z, &cats)?;
        tape.data(z).to_vec()
    };
    let all_cats: Vec<usize> = (0..k).collect();
    let fitness_seed = stream_seed(config.seed, S_FITNESS, round as u64);
    let mut children = Vec::with_capacity(config.mutations.len());
    let mut fits: Vec<Option<Fitness>> = Vec::with_capacity(config.mutations.len());
    let mut losses = Vec::with_capacity(config.mutations.len());
    for &m in &config.mutations {
        let mut child = bundle.generators[0].clone();
        let mut opt = bundle.gen_opts[0].clone();
        // Each child draws from its own stream so siblings do not depend on order.
        let mut crng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        match mutate(&mut child, &mut opt, &bundle.disc, m, &real_scores, &cats, temperature, &mut crng) {
            Ok(loss) => {
                let f = evaluate_fitness(&child, &bundle.disc, &all_cats, config.fitness_samples, config.lambda_d, fitness_seed)?;
                fits.push(Some(f));
                losses.push(Some(loss));
            }
            Err(e) if is_divergence(&e) => {
                fits.push(None);
                losses.push(None);
            }
            Err(e) => return Err(e),
        }
        children.push((child, opt));
    }
    let best = select_best(&fits)
        .ok_or(Error::Numerics(NumericsError::Diverged { mean_abs_grad: f64::INFINITY }))?;
    let candidates = config
        .mutations
        .iter()
        .zip(&fits)
        .enumerate()
        .map(|(i, (m, f))| CandidateRecord {
            round,
            mutation: m.name().to_string(),
            aborted: f.is_none(),
            f_quality: f.map(|f| f.quality),
            f_diversity: f.map(|f| f.diversity),
            fitness: f.map(|f| f.total),
            lambda_d: config.lambda_d,
            selected: i == best,
        })
        .collect();
    let chosen = fits[best].expect("selected child has fitness");
    let (gen, opt) = children.swap_remove(best);
    bundle.generators[0] = gen;
    bundle.gen_opts[0] = opt;
    let disc_loss = disc_step(bundle, data, config.batch_size, rng)?;
    Ok(RoundOutcome {
        record: RoundRecord {
            temperature: Some(temperature),
            gen_loss: losses[best],
            disc_loss: Some(disc_loss),
            mutation: Some(config.mutations[best].name().to_string()),
            f_quality: Some(chosen.quality),
            f_diversity: Some(chosen.diversity),
            fitness: Some(chosen.total),
            ..RoundRecord::default()
        },
        candidates,
    })
}

/// Runs the next adversarial round of `bundle`. A divergence restores the
/// state from the start of the round and records it as aborted.
pub fn adversarial_round(
    bundle: &mut GanBundle,
    data: &GanData,
    config: &TrainConfig,
    history: &mut History,
) -> Result<RoundRecord> {
    if data.num_categories != bundle.num_categories {
        return Err(Error::Config("data and bundle disagree on the category count".into()));
    }
    let round = bundle.round;
    let snapshot_state = bundle.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, S_ROUND, round as u64));
    let outcome = match bundle.kind {
        GanKind::SentiGan => sentigan_round(bundle, data, config, &mut rng),
        GanKind::CatGan => catgan_round(bundle, data, config, round, &mut rng),
    };
    let mut record = match outcome {
        Ok(o) => {
            history.candidates.extend(o.candidates);
            o.record
        }
        Err(e) if is_divergence(&e) => {
            *bundle = snapshot_state;
            RoundRecord { aborted: true, ..RoundRecord::default() }
        }
        Err(e) => return Err(e),
    };
    record.round = round;
    bundle.round = round + 1;
    if bundle.round % config.eval_every == 0 || bundle.round == config.adversarial_rounds {
        let s = snapshot(bundle, data, config, stream_seed(config.seed, S_EVAL, round as u64))?;
        record.bleu = Some(s.bleu);
        record.nll_gen = Some(s.nll_gen);
        record.nll_div = Some(s.nll_div);
    }
    history.rounds.push(record.clone());
    Ok(record)
}

/// Runs rounds until `config.adversarial_rounds` have been completed.
pub fn train_adversarial(bundle: &mut GanBundle, data: &GanData, config: &TrainConfig, history: &mut History) -> Result<()> {
    config.validate()?;
    while bundle.round < config.adversarial_rounds {
        adversarial_round(bundle, data, config, history)?;
    }
    Ok(())
}

/// Full pipeline for a fresh bundle: MLE, discriminator warm-up, rounds.
pub fn train(bundle: &mut GanBundle, data: &GanData, config: &TrainConfig) -> Result<History> {
    config.validate()?;
    let mut history = History { pretrain: pretrain_bundle(bundle, data, config)?, ..History::default() };
    pretrain_discriminator(bundle, data, config)?;
    train_adversarial(bundle, data, config, &mut history)?;
    Ok(history)
}

pub fn train_sentigan(bundle: &mut GanBundle, data: &GanData, config: &TrainConfig) -> Result<History> {
    if bundle.kind != GanKind::SentiGan {
        return Err(Error::Config("bundle is not a SentiGAN bundle".into()));
    }
    train(bundle, data, config)
}

pub fn train_catgan(bundle: &mut GanBundle, data: &GanData, config: &TrainConfig) -> Result<History> {
    if bundle.kind != GanKind::CatGan {
        return Err(Error::Config("bundle is not a CatGAN bundle".into()));
    }
    train(bundle, data, config)
}
