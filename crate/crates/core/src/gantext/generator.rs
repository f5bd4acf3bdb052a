use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{gumbel_noise, log_sum_exp, softmax_row, ParamId, ParamStore, Tape, Tensor, Var};

/// How a generator learns which category to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Conditioning {
    /// One generator instance per category.
    Fixed { category: usize },
    /// One shared generator with a learned category embedding appended to
    /// every input.
    Embedded { num_categories: usize, dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub conditioning: Conditioning,
    /// Draw the initial hidden state from a standard normal instead of zeros.
    pub noise_init: bool,
    /// Longest sequence emitted, EOS included.
    pub max_len: usize,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl GenConfig {
    pub fn new(vocab_size: usize, conditioning: Conditioning) -> Self {
        GenConfig {
            vocab_size,
            emb_dim: 32,
            hidden: 64,
            conditioning,
            noise_init: false,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
            init_scale: 0.08,
        }
    }

    fn input_dim(&self) -> usize {
        match self.conditioning {
            Conditioning::Fixed { .. } => self.emb_dim,
            Conditioning::Embedded { dim, .. } => self.emb_dim + dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size <= EOS as usize || self.emb_dim == 0 || self.hidden == 0 || self.max_len == 0 {
            return Err(Error::Config(format!("degenerate generator config {self:?}")));
        }
        if let Conditioning::Embedded { num_categories, dim } = self.conditioning {
            if num_categories == 0 || dim == 0 {
                return Err(Error::Config("category embedding needs categories and a width".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleMode {
    Greedy,
    Multinomial { temperature: f64 },
    GumbelSt { temperature: f64 },
}

/// One generated sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub category: usize,
    /// Emitted ids; ends with EOS unless the length cap was hit first.
    pub tokens: Vec<u32>,
    /// Model log-probability of each emitted token (temperature 1).
    pub log_probs: Vec<f64>,
    /// Relaxed one-hot rows, only in Gumbel mode.
    pub soft: Option<Vec<Vec<f64>>>,
    /// Initial hidden state noise, empty unless `noise_init`.
    pub noise: Vec<f64>,
}

impl Sample {
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Content ids with the trailing EOS removed.
    pub fn content(&self) -> &[u32] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Recurrent state for a batch, used by the tape-free inference path.
#[derive(Clone, Debug, PartialEq)]
pub struct GenState {
    pub categories: Vec<usize>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl GenState {
    pub fn batch(&self) -> usize {
        self.categories.len()
    }
}

pub enum StepInput<'a> {
    Tokens(&'a [u32]),
    /// `[batch * vocab]` rows mixing token embeddings.
    Soft(&'a [f64]),
}

#[derive(Clone, Copy, Debug)]
struct GenIds {
    emb: ParamId,
    cat: Option<ParamId>,
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

/// Parameters bound onto one tape.
#[derive(Clone, Copy, Debug)]
pub struct GenVars {
    pub emb: Var,
    pub cat: Option<Var>,
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
    pub w_out: Var,
    pub b_out: Var,
}

/// Teacher-forced logits for a batch, rows time-major (`t * batch + b`).
pub struct ForcedLogits {
    pub logits: Var,
    pub targets: Vec<usize>,
    /// Whether each row is a real position (false past the sequence end).
    pub mask: Vec<bool>,
    pub steps: usize,
    pub batch: usize,
}

/// Output of differentiable Gumbel straight-through sampling.
pub struct GumbelBatch {
    pub tokens: Vec<Vec<u32>>,
    /// Per-step `[batch, vocab]` one-hot rows carrying the soft gradient.
    pub steps: Vec<Var>,
}

impl GumbelBatch {
    /// Batch-major `[batch * len, vocab]` input for a sequence model, with
    /// positions after each sequence's end replaced by PAD one-hots.
    pub fn padded_one_hot(&self, tape: &mut Tape, len: usize, vocab: usize) -> Result<Var> {
        let batch = self.tokens.len();
        let stacked = tape.concat_rows(&self.steps)?;
        let mut idx = Vec::with_capacity(batch * len);
        let mut pad = vec![0.0; batch * len * vocab];
        for (b, toks) in self.tokens.iter().enumerate() {
            for t in 0..len {
                if t < toks.len() {
                    idx.push(Some(t * batch + b));
                } else {
                    idx.push(None);
                    pad[(b * len + t) * vocab + PAD as usize] = 1.0;
                }
            }
        }
        let picked = tape.select_rows(stacked, &idx)?;
        let pad = tape.constant(Tensor::new(vec![batch * len, vocab], pad)?);
        Ok(tape.add(picked, pad)?)
    }
}

/// Category-conditioned LSTM language model.
#[derive(Clone, Debug)]
pub struct GeneratorNet {
    pub config: GenConfig,
    pub params: ParamStore,
    ids: GenIds,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[n] += x[k] * w[k, n]`.
fn affine_acc(x: &[f64], w: &[f64], out: &mut [f64]) {
    let n = out.len();
    for (p, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&w[p * n..(p + 1) * n]) {
            *o += xv * wv;
        }
    }
}

impl GeneratorNet {
    pub fn new<R: Rng + ?Sized>(config: GenConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let s = config.init_scale;
        let (v, e, h) = (config.vocab_size, config.emb_dim, config.hidden);
        let mut p = ParamStore::new();
        let emb = p.add_uniform("emb", &[v, e], s, rng)?;
        let cat = match config.conditioning {
            Conditioning::Embedded { num_categories, dim } => {
                Some(p.add_uniform("cat_emb", &[num_categories, dim], s, rng)?)
            }
            Conditioning::Fixed { .. } => None,
        };
        let w_x = p.add_uniform("lstm.w_x", &[config.input_dim(), 4 * h], s, rng)?;
        let w_h = p.add_uniform("lstm.w_h", &[h, 4 * h], s, rng)?;
        let b = p.add_uniform("lstm.b", &[4 * h], s, rng)?;
        let w_out = p.add_uniform("out.w", &[h, v], s, rng)?;
        let b_out = p.add_uniform("out.b", &[v], s, rng)?;
        Ok(GeneratorNet { config, params: p, ids: GenIds { emb, cat, w_x, w_h, b, w_out, b_out } })
    }

    /// Rebuilds a generator from stored parameter records.
    pub fn from_records(config: GenConfig, records: &[(String, Tensor)]) -> Result<Self> {
        let mut g = Self::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        g.params.load_values(records)?;
        Ok(g)
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Categories this network can produce.
    pub fn categories(&self) -> Vec<usize> {
        match self.config.conditioning {
            Conditioning::Fixed { category } => vec![category],
            Conditioning::Embedded { num_categories, .. } => (0..num_categories).collect(),
        }
    }

    pub fn check_category(&self, category: usize) -> Result<()> {
        let ok = match self.config.conditioning {
            Conditioning::Fixed { category: c } => category == c,
            Conditioning::Embedded { num_categories, .. } => category < num_categories,
        };
        if ok {
            Ok(())
        } else {
            let num_categories = match self.config.conditioning {
                Conditioning::Fixed { category: c } => c + 1,
                Conditioning::Embedded { num_categories, .. } => num_categories,
            };
            Err(Error::UnknownCategory { category, num_categories })
        }
    }

    fn t(&self, id: ParamId) -> &[f64] {
        self.params.get(id).data()
    }

    // ---- tape-free inference ---------------------------------------------

    /// Initial state; draws noise from `rng` only when `noise_init` is set.
    pub fn init_state(&self, categories: &[usize], rng: &mut dyn RngCore) -> Result<GenState> {
        let noise = if self.config.noise_init {
            Some((0..categories.len() * self.config.hidden).map(|_| StandardNormal.sample(rng)).collect())
        } else {
            None
        };
        self.state_from_noise(categories, noise)
    }

    pub fn state_from_noise(&self, categories: &[usize], noise: Option<Vec<f64>>) -> Result<GenState> {
        for &c in categories {
            self.check_category(c)?;
        }
        let n = categories.len() * self.config.hidden;
        let h = match noise {
            Some(z) if !z.is_empty() => {
                if z.len() != n {
                    return Err(Error::Config(format!("noise has {} values, expected {n}", z.len())));
                }
                z
            }
            _ => vec![0.0; n],
        };
        Ok(GenState { categories: categories.to_vec(), h, c: vec![0.0; n] })
    }

    fn input_rows(&self, state: &GenState, input: &StepInput) -> Result<Vec<f64>> {
        let (v, e) = (self.config.vocab_size, self.config.emb_dim);
        let in_dim = self.config.input_dim();
        let emb = self.t(self.ids.emb);
        let batch = state.batch();
        let mut x = vec![0.0; batch * in_dim];
        for b in 0..batch {
            let row = &mut x[b * in_dim..b * in_dim + e];
            match input {
                StepInput::Tokens(toks) => {
                    let tok = toks[b] as usize;
                    if tok >= v {
                        return Err(Error::Config(format!("token id {tok} >= vocab size {v}")));
                    }
                    row.copy_from_slice(&emb[tok * e..(tok + 1) * e]);
                }
                StepInput::Soft(rows) => affine_acc(&rows[b * v..(b + 1) * v], emb, row),
            }
            if let (Some(cat), Conditioning::Embedded { dim, .. }) = (self.ids.cat, self.config.conditioning) {
                let c = state.categories[b];
                x[b * in_dim + e..(b + 1) * in_dim].copy_from_slice(&self.t(cat)[c * dim..(c + 1) * dim]);
            }
        }
        Ok(x)
    }

    /// Advances `state` one step and returns `[batch * vocab]` logits.
    pub fn step(&self, state: &mut GenState, input: StepInput) -> Result<Vec<f64>> {
        let batch = state.batch();
        match &input {
            StepInput::Tokens(t) if t.len() != batch => {
                return Err(Error::Config(format!("{} tokens for batch {batch}", t.len())))
            }
            StepInput::Soft(r) if r.len() != batch * self.config.vocab_size => {
                return Err(Error::Config(format!("{} soft values for batch {batch}", r.len())))
            }
            _ => {}
        }
        let x = self.input_rows(state, &input)?;
        let (h, in_dim, v) = (self.config.hidden, self.config.input_dim(), self.config.vocab_size);
        let (w_x, w_h, bias) = (self.t(self.ids.w_x), self.t(self.ids.w_h), self.t(self.ids.b));
        let (w_out, b_out) = (self.t(self.ids.w_out), self.t(self.ids.b_out));
        let mut logits = Vec::with_capacity(batch * v);
        let mut gates = vec![0.0; 4 * h];
        for b in 0..batch {
            gates.copy_from_slice(bias);
            affine_acc(&x[b * in_dim..(b + 1) * in_dim], w_x, &mut gates);
            affine_acc(&state.h[b * h..(b + 1) * h], w_h, &mut gates);
            let hs = &mut state.h[b * h..(b + 1) * h];
            let cs = &mut state.c[b * h..(b + 1) * h];
            for j in 0..h {
                let i = sigmoid(gates[j]);
                let f = sigmoid(gates[h + j]);
                let g = gates[2 * h + j].tanh();
                let o = sigmoid(gates[3 * h + j]);
                cs[j] = f * cs[j] + i * g;
                hs[j] = o * cs[j].tanh();
            }
            let start = logits.len();
            logits.extend_from_slice(b_out);
            affine_acc(hs, w_out, &mut logits[start..]);
        }
        Ok(logits)
    }

    /// Samples one sequence per entry of `categories` (Greedy or Multinomial).
    pub fn sample(&self, categories: &[usize], mode: SampleMode, rng: &mut dyn RngCore) -> Result<Vec<Sample>> {
        let state = self.init_state(categories, rng)?;
        let noise = if self.config.noise_init { state.h.clone() } else { Vec::new() };
        let prefixes = vec![Vec::new(); categories.len()];
        let out = self.continue_from(state, &prefixes, mode, rng)?;
        let h = self.config.hidden;
        Ok(out
            .into_iter()
            .enumerate()
            .map(|(b, (tokens, log_probs))| Sample {
                category: categories[b],
                tokens,
                log_probs,
                soft: None,
                noise: if noise.is_empty() { Vec::new() } else { noise[b * h..(b + 1) * h].to_vec() },
            })
            .collect())
    }

    /// Feeds each prefix through a fresh state and samples to completion.
    /// Returns full sequences (prefix included) with log-probs of the
    /// newly sampled tokens only.
    fn continue_from(
        &self,
        mut state: GenState,
        prefixes: &[Vec<u32>],
        mode: SampleMode,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<(Vec<u32>, Vec<f64>)>> {
        let temperature = match mode {
            SampleMode::Greedy => None,
            SampleMode::Multinomial { temperature } | SampleMode::GumbelSt { temperature } => {
                if !(temperature > 0.0) {
                    return Err(crate::numerics::NumericsError::Temperature(temperature).into());
                }
                Some(temperature)
            }
        };
        let batch = state.batch();
        let v = self.config.vocab_size;
        let max_len = self.config.max_len;
        let mut seqs: Vec<Vec<u32>> = prefixes.to_vec();
        let mut lps: Vec<Vec<f64>> = vec![Vec::new(); batch];
        let mut done: Vec<bool> =
            seqs.iter().map(|s| s.last() == Some(&EOS) || s.len() >= max_len).collect();
        let longest_prefix = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut prev = vec![BOS; batch];
        let mut probs = vec![0.0; v];
        let mut scaled = vec![0.0; v];
        for t in 0..max_len {
            if done.iter().all(|&d| d) && t >= longest_prefix {
                break;
            }
            let logits = self.step(&mut state, StepInput::Tokens(&prev))?;
            for b in 0..batch {
                if t < prefixes[b].len() {
                    prev[b] = prefixes[b][t];
                    continue;
                }
                if done[b] {
                    prev[b] = PAD;
                    continue;
                }
                let row = &logits[b * v..(b + 1) * v];
                let lse = log_sum_exp(row);
                let tok = match temperature {
                    None => crate::numerics::argmax(row),
                    Some(tau) => {
                        for (s, &l) in scaled.iter_mut().zip(row) {
                            *s = l / tau;
                        }
                        softmax_row(&scaled, &mut probs);
                        draw(&probs, rng)
                    }
                };
                seqs[b].push(tok as u32);
                lps[b].push(row[tok] - lse);
                prev[b] = tok as u32;
                if tok as u32 == EOS || seqs[b].len() >= max_len {
                    done[b] = true;
                }
            }
        }
        Ok(seqs.into_iter().zip(lps).collect())
    }

    /// `n` multinomial completions of `prefix`. A prefix already ending in
    /// EOS (or at the length cap) is returned `n` times unchanged.
    pub fn rollout(
        &self,
        category: usize,
        prefix: &[u32],
        noise: &[f64],
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<u32>>> {
        let jobs: Vec<(usize, &[u32], &[f64])> = (0..n).map(|_| (category, prefix, noise)).collect();
        self.complete_many(&jobs, rng)
    }

    /// Completes many `(category, prefix, noise)` jobs in one batch.
    pub fn complete_many(&self, jobs: &[(usize, &[u32], &[f64])], rng: &mut dyn RngCore) -> Result<Vec<Vec<u32>>> {
        if jobs.is_empty() {
            return Ok(Vec::new());
        }
        let cats: Vec<usize> = jobs.iter().map(|j| j.0).collect();
        let noise = if self.config.noise_init {
            let mut z = Vec::with_capacity(jobs.len() * self.config.hidden);
            for j in jobs {
                if j.2.len() != self.config.hidden {
                    return Err(Error::Config("rollout needs the sample's initial noise".into()));
                }
                z.extend_from_slice(j.2);
            }
            Some(z)
        } else {
            None
        };
        let state = self.state_from_noise(&cats, noise)?;
        let prefixes: Vec<Vec<u32>> = jobs.iter().map(|j| j.1.to_vec()).collect();
        let out = self.continue_from(state, &prefixes, SampleMode::Multinomial { temperature: 1.0 }, rng)?;
        Ok(out.into_iter().map(|(s, _)| s).collect())
    }

    /// Teacher-forced log-probabilities of every token of every sequence.
    pub fn log_probs(&self, categories: &[usize], seqs: &[&[u32]], noise: Option<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
        let mut state = self.state_from_noise(categories, noise)?;
        let batch = categories.len();
        let v = self.config.vocab_size;
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut out: Vec<Vec<f64>> = seqs.iter().map(|s| Vec::with_capacity(s.len())).collect();
        let mut prev = vec![BOS; batch];
        for t in 0..steps {
            let logits = self.step(&mut state, StepInput::Tokens(&prev))?;
            for b in 0..batch {
                if t < seqs[b].len() {
                    let row = &logits[b * v..(b + 1) * v];
                    let tok = seqs[b][t] as usize;
                    if tok >= v {
                        return Err(Error::Config(format!("token id {tok} >= vocab size {v}")));
                    }
                    out[b].push(row[tok] - log_sum_exp(row));
                    prev[b] = seqs[b][t];
                } else {
                    prev[b] = PAD;
                }
            }
        }
        Ok(out)
    }

    /// `-sum_t log P(y_t | y_<t)` for one sequence (nats).
    pub fn sequence_nll(&self, category: usize, tokens: &[u32], rng: &mut dyn RngCore) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::Empty("sequence"));
        }
        let state = self.init_state(&[category], rng)?;
        let noise = self.config.noise_init.then_some(state.h);
        let lp = self.log_probs(&[category], &[tokens], noise)?;
        Ok(-lp[0].iter().sum::<f64>())
    }

    /// Convenience single-sequence sampler for every mode; Gumbel mode runs
    /// on a private tape and also returns the relaxed rows.
    pub fn sample_sequence(&self, category: usize, mode: SampleMode, seed: u64) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match mode {
            SampleMode::GumbelSt { temperature } => {
                let mut tape = Tape::new();
                let vars = self.bind(&mut tape, false);
                let noise = if self.config.noise_init {
                    (0..self.config.hidden).map(|_| StandardNormal.sample(&mut rng)).collect()
                } else {
                    Vec::new()
                };
                let g = self.sample_gumbel(&mut tape, &vars, &[category], &noise, temperature, &mut rng)?;
                let tokens = g.tokens[0].clone();
                let soft: Vec<Vec<f64>> = g.steps[..tokens.len()]
                    .iter()
                    .map(|&s| tape.gumbel_soft_values(s).expect("gumbel node").to_vec())
                    .collect();
                let lp = self.log_probs(&[category], &[&tokens], (!noise.is_empty()).then(|| noise.clone()))?;
                Ok(Sample { category, tokens, log_probs: lp[0].clone(), soft: Some(soft), noise })
            }
            _ => Ok(self.sample(&[category], mode, &mut rng)?.remove(0)),
        }
    }

    // ---- tape path ---------------------------------------------------------

    /// Binds all parameters; `trainable = false` binds them as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> GenVars {
        let mut b = |id: ParamId| if trainable { tape.param(&self.params, id) } else { tape.frozen(&self.params, id) };
        GenVars {
            emb: b(self.ids.emb),
            cat: self.ids.cat.map(&mut b),
            w_x: b(self.ids.w_x),
            w_h: b(self.ids.w_h),
            b: b(self.ids.b),
            w_out: b(self.ids.w_out),
            b_out: b(self.ids.b_out),
        }
    }

    fn tape_init(&self, tape: &mut Tape, batch: usize, noise: &[f64]) -> Result<(Var, Var)> {
        let h = self.config.hidden;
        let zeros = Tensor::zeros(&[batch, h])?;
        let h0 = if self.config.noise_init {
            if noise.len() != batch * h {
                return Err(Error::Config(format!("noise has {} values, expected {}", noise.len(), batch * h)));
            }
            tape.constant(Tensor::new(vec![batch, h], noise.to_vec())?)
        } else {
            tape.constant(zeros.clone())
        };
        Ok((h0, tape.constant(zeros)))
    }

    fn cat_rows(&self, tape: &mut Tape, vars: &GenVars, categories: &[usize]) -> Result<Option<Var>> {
        for &c in categories {
            self.check_category(c)?;
        }
        Ok(match vars.cat {
            Some(table) => Some(tape.embedding(table, categories)?),
            None => None,
        })
    }

    fn tape_cell(&self, tape: &mut Tape, vars: &GenVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.config.hidden;
        let xw = tape.matmul(x, vars.w_x)?;
        let hw = tape.matmul(h, vars.w_h)?;
        let s = tape.add(xw, hw)?;
        let gates = tape.add(s, vars.b)?;
        let i = tape.slice_cols(gates, 0, hd)?;
        let f = tape.slice_cols(gates, hd, hd)?;
        let g = tape.slice_cols(gates, 2 * hd, hd)?;
        let o = tape.slice_cols(gates, 3 * hd, hd)?;
        let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c2 = tape.add(fc, ig)?;
        let tc = tape.tanh(c2);
        let h2 = tape.mul(o, tc)?;
        Ok((h2, c2))
    }

    fn with_category(&self, tape: &mut Tape, emb: Var, cat: Option<Var>) -> Result<Var> {
        Ok(match cat {
            Some(c) => tape.concat(&[emb, c])?,
            None => emb,
        })
    }

    /// Teacher-forced logits for `seqs` (content ids followed by EOS).
    pub fn forced_logits(
        &self,
        tape: &mut Tape,
        vars: &GenVars,
        categories: &[usize],
        seqs: &[&[u32]],
        noise: &[f64],
    ) -> Result<ForcedLogits> {
        let batch = seqs.len();
        if batch == 0 || categories.len() != batch {
            return Err(Error::Empty("generator batch"));
        }
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if steps == 0 {
            return Err(Error::Empty("sequence"));
        }
        let cat = self.cat_rows(tape, vars, categories)?;
        let (mut h, mut c) = self.tape_init(tape, batch, noise)?;
        let mut hs = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps * batch);
        let mut mask = Vec::with_capacity(steps * batch);
        for t in 0..steps {
            let ids: Vec<usize> = seqs
                .iter()
                .map(|s| if t == 0 { BOS as usize } else { s.get(t - 1).map_or(PAD as usize, |&x| x as usize) })
                .collect();
            let e = tape.embedding(vars.emb, &ids)?;
            let x = self.with_category(tape, e, cat)?;
            (h, c) = self.tape_cell(tape, vars, x, h, c)?;
            hs.push(h);
            for s in seqs {
                targets.push(s.get(t).map_or(PAD as usize, |&x| x as usize));
                mask.push(t < s.len());
            }
        }
        let all = tape.concat_rows(&hs)?;
        let proj = tape.matmul(all, vars.w_out)?;
        let logits = tape.add(proj, vars.b_out)?;
        Ok(ForcedLogits { logits, targets, mask, steps, batch })
    }

    /// Mean per-token teacher-forced NLL of a batch as a tape scalar.
    pub fn mle_loss(
        &self,
        tape: &mut Tape,
        vars: &GenVars,
        categories: &[usize],
        seqs: &[&[u32]],
        noise: &[f64],
    ) -> Result<Var> {
        let f = self.forced_logits(tape, vars, categories, seqs, noise)?;
        let n = f.mask.iter().filter(|&&m| m).count().max(1) as f64;
        let w: Vec<f64> = f.mask.iter().map(|&m| if m { 1.0 / n } else { 0.0 }).collect();
        Ok(tape.weighted_nll(f.logits, &f.targets, &w)?)
    }

    /// Differentiable straight-through sampling of `max_len` steps. Tokens
    /// are cut at the first EOS; every step's one-hot is returned.
    pub fn sample_gumbel(
        &self,
        tape: &mut Tape,
        vars: &GenVars,
        categories: &[usize],
        noise: &[f64],
        temperature: f64,
        rng: &mut dyn RngCore,
    ) -> Result<GumbelBatch> {
        let batch = categories.len();
        let v = self.config.vocab_size;
        let cat = self.cat_rows(tape, vars, categories)?;
        let (mut h, mut c) = self.tape_init(tape, batch, noise)?;
        let mut x_emb = tape.embedding(vars.emb, &vec![BOS as usize; batch])?;
        let mut tokens: Vec<Vec<u32>> = vec![Vec::new(); batch];
        let mut done = vec![false; batch];
        let mut steps = Vec::with_capacity(self.config.max_len);
        for _ in 0..self.config.max_len {
            let x = self.with_category(tape, x_emb, cat)?;
            (h, c) = self.tape_cell(tape, vars, x, h, c)?;
            let proj = tape.matmul(h, vars.w_out)?;
            let logits = tape.add(proj, vars.b_out)?;
            let g = gumbel_noise(batch * v, rng);
            let y = tape.gumbel_softmax_with_noise(logits, &g, temperature, true)?;
            for (b, row) in tape.data(y).chunks(v).enumerate() {
                if !done[b] {
                    let tok = crate::numerics::argmax(row) as u32;
                    tokens[b].push(tok);
                    done[b] = tok == EOS;
                }
            }
            steps.push(y);
            if done.iter().all(|&d| d) {
                break;
            }
            x_emb = tape.matmul(y, vars.emb)?;
        }
        Ok(GumbelBatch { tokens, steps })
    }
}

/// Inverse-CDF draw from a probability vector.
fn draw(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
