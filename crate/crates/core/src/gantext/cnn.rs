use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::numerics::{softmax_row, ParamId, ParamStore, Tape, Tensor, Var};

/// Output layer of the convolutional network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "outputs", rename_all = "snake_case")]
pub enum Head {
    /// One softmax over `n` classes.
    Softmax(usize),
    /// `n` independent real/fake sigmoid heads.
    Sigmoid(usize),
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Softmax(n) | Head::Sigmoid(n) => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub widths: Vec<usize>,
    pub filters: usize,
    /// Inputs are PAD-extended (or cut) to exactly this many positions.
    pub seq_len: usize,
    pub head: Head,
    pub init_scale: f64,
}

impl CnnConfig {
    pub fn new(vocab_size: usize, seq_len: usize, head: Head) -> Self {
        CnnConfig { vocab_size, emb_dim: 32, widths: vec![2, 3, 4], filters: 32, seq_len, head, init_scale: 0.08 }
    }

    /// Discriminator for `k` categories with a `k + 1`-way softmax
    /// (the extra class is "generated").
    pub fn sentigan(vocab_size: usize, seq_len: usize, k: usize) -> Self {
        Self::new(vocab_size, seq_len, Head::Softmax(k + 1))
    }

    /// Discriminator with one real/fake head per category.
    pub fn catgan(vocab_size: usize, seq_len: usize, k: usize) -> Self {
        Self::new(vocab_size, seq_len, Head::Sigmoid(k))
    }

    fn validate(&self) -> Result<()> {
        let max_w = self.widths.iter().copied().max().unwrap_or(0);
        if self.vocab_size == 0 || self.emb_dim == 0 || self.filters == 0 || self.widths.is_empty() {
            return Err(Error::Config(format!("degenerate CNN config {self:?}")));
        }
        if self.widths.contains(&0) || self.seq_len < max_w {
            return Err(Error::Config(format!("seq_len {} shorter than filter width {max_w}", self.seq_len)));
        }
        if self.head.outputs() == 0 {
            return Err(Error::Config("CNN head needs at least one output".into()));
        }
        Ok(())
    }
}

/// Input to the network: token ids, or relaxed one-hot rows shaped
/// `[batch * seq_len, vocab]` (batch-major) living on the tape.
pub enum CnnInput<'a> {
    Tokens(&'a [&'a [u32]]),
    Soft { rows: Var, batch: usize },
}

#[derive(Clone, Debug)]
struct CnnIds {
    emb: ParamId,
    convs: Vec<(ParamId, ParamId)>,
    head_w: ParamId,
    head_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct CnnVars {
    emb: Var,
    convs: Vec<(Var, Var)>,
    head_w: Var,
    head_b: Var,
}

/// Multi-width convolution over embeddings, max-pooled over time, then a
/// linear head. Serves as the GAN discriminator and as the CNN classifier.
#[derive(Clone, Debug)]
pub struct CnnNet {
    pub config: CnnConfig,
    pub params: ParamStore,
    ids: CnnIds,
}

impl CnnNet {
    pub fn new<R: Rng + ?Sized>(config: CnnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let s = config.init_scale;
        let mut p = ParamStore::new();
        let emb = p.add_uniform("emb", &[config.vocab_size, config.emb_dim], s, rng)?;
        let mut convs = Vec::new();
        for &w in &config.widths {
            let weight = p.add_uniform(format!("conv{w}.w"), &[w * config.emb_dim, config.filters], s, rng)?;
            let bias = p.add_uniform(format!("conv{w}.b"), &[config.filters], s, rng)?;
            convs.push((weight, bias));
        }
        let feat = config.filters * config.widths.len();
        let head_w = p.add_uniform("head.w", &[feat, config.head.outputs()], s, rng)?;
        let head_b = p.add_uniform("head.b", &[config.head.outputs()], s, rng)?;
        Ok(CnnNet { config, params: p, ids: CnnIds { emb, convs, head_w, head_b } })
    }

    pub fn from_records(config: CnnConfig, records: &[(String, Tensor)]) -> Result<Self> {
        let mut n = Self::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        n.params.load_values(records)?;
        Ok(n)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> CnnVars {
        let mut b = |id: ParamId| if trainable { tape.param(&self.params, id) } else { tape.frozen(&self.params, id) };
        CnnVars {
            emb: b(self.ids.emb),
            convs: self.ids.convs.iter().map(|&(w, bias)| (b(w), b(bias))).collect(),
            head_w: b(self.ids.head_w),
            head_b: b(self.ids.head_b),
        }
    }

    /// Token ids PAD-extended or cut to `seq_len`, batch-major.
    pub fn padded_ids(&self, seqs: &[&[u32]]) -> Result<Vec<usize>> {
        let l = self.config.seq_len;
        let mut ids = Vec::with_capacity(seqs.len() * l);
        for s in seqs {
            for t in 0..l {
                let id = s.get(t).copied().unwrap_or(PAD) as usize;
                if id >= self.config.vocab_size {
                    return Err(Error::Config(format!("token id {id} >= vocab size {}", self.config.vocab_size)));
                }
                ids.push(id);
            }
        }
        Ok(ids)
    }

    /// One-hot encoding of `seqs` in the soft-input layout.
    pub fn one_hot(&self, seqs: &[&[u32]]) -> Result<Tensor> {
        let v = self.config.vocab_size;
        let ids = self.padded_ids(seqs)?;
        let mut data = vec![0.0; ids.len() * v];
        for (r, &id) in ids.iter().enumerate() {
            data[r * v + id] = 1.0;
        }
        Ok(Tensor::new(vec![ids.len(), v], data)?)
    }

    /// Pooled features `[batch, filters * widths]`.
    pub fn features(&self, tape: &mut Tape, vars: &CnnVars, input: CnnInput) -> Result<Var> {
        let (emb_rows, batch) = match input {
            CnnInput::Tokens(seqs) => {
                if seqs.is_empty() {
                    return Err(Error::Empty("CNN batch"));
                }
                let ids = self.padded_ids(seqs)?;
                (tape.embedding(vars.emb, &ids)?, seqs.len())
            }
            CnnInput::Soft { rows, batch } => (tape.matmul(rows, vars.emb)?, batch),
        };
        let x = tape.reshape(emb_rows, &[batch, self.config.seq_len, self.config.emb_dim])?;
        let mut pooled = Vec::with_capacity(vars.convs.len());
        for (&(w, b), &width) in vars.convs.iter().zip(&self.config.widths) {
            let conv = tape.conv1d(x, w, b, width)?;
            let act = tape.relu(conv);
            pooled.push(tape.max_pool_over_time(act)?);
        }
        Ok(tape.concat(&pooled)?)
    }

    /// Head logits `[batch, outputs]`.
    pub fn logits(&self, tape: &mut Tape, vars: &CnnVars, input: CnnInput) -> Result<Var> {
        let f = self.features(tape, vars, input)?;
        let z = tape.matmul(f, vars.head_w)?;
        Ok(tape.add(z, vars.head_b)?)
    }

    /// Softmax probabilities or per-head sigmoid probabilities per sequence.
    pub fn discriminate(&self, seqs: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(256) {
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, false);
            let z = self.logits(&mut tape, &vars, CnnInput::Tokens(chunk))?;
            out.extend(self.activate(tape.data(z)));
        }
        Ok(out)
    }

    /// Applies the head's output nonlinearity to raw logits rows.
    pub fn activate(&self, logits: &[f64]) -> Vec<Vec<f64>> {
        let n = self.config.head.outputs();
        logits
            .chunks(n)
            .map(|row| match self.config.head {
                Head::Softmax(_) => {
                    let mut p = vec![0.0; n];
                    softmax_row(row, &mut p);
                    p
                }
                Head::Sigmoid(_) => row.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(head: Head) -> CnnNet {
        let mut cfg = CnnConfig::new(10, 6, head);
        cfg.emb_dim = 5;
        cfg.filters = 4;
        CnnNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn softmax_head_sums_to_one_and_is_near_uniform() {
        let d = net(Head::Softmax(3));
        let seqs: [&[u32]; 2] = [&[4, 5, 2], &[7]];
        for p in d.discriminate(&seqs).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 0.05), "{p:?}");
        }
    }

    #[test]
    fn sigmoid_heads_in_unit_interval() {
        let d = net(Head::Sigmoid(2));
        for p in d.discriminate(&[&[4, 5, 6, 7, 8, 9, 4, 4][..]]).unwrap() {
            assert_eq!(p.len(), 2);
            assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn hard_and_one_hot_inputs_agree_exactly() {
        let d = net(Head::Softmax(3));
        let seqs: [&[u32]; 2] = [&[4, 5, 2], &[9, 9, 9, 9, 9, 9]];
        let mut tape = Tape::new();
        let vars = d.bind(&mut tape, false);
        let hard = d.logits(&mut tape, &vars, CnnInput::Tokens(&seqs)).unwrap();
        let rows = tape.constant(d.one_hot(&seqs).unwrap());
        let soft = d.logits(&mut tape, &vars, CnnInput::Soft { rows, batch: 2 }).unwrap();
        assert_eq!(tape.data(hard), tape.data(soft));
    }

    #[test]
    fn short_seq_len_rejected() {
        let cfg = CnnConfig::new(10, 3, Head::Softmax(2));
        assert!(CnnNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
