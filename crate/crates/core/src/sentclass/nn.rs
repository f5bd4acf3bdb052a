//! Neural classifiers trained from scratch: Elman RNN, GRU, BiLSTM and a
//! multi-width CNN, all ending in a dense softmax layer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::compute_metrics;
use crate::corpus::{Provenance, Record, PAD};
use crate::error::{Error, Result};
use crate::gantext::{CnnConfig, CnnInput, CnnNet, Head};
use crate::numerics::{argmax, Adam, Optimizer, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnArch {
    Rnn,
    Gru,
    BiLstm,
    Cnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnHyper {
    pub emb_dim: usize,
    pub hidden: usize,
    pub filters: usize,
    pub widths: Vec<usize>,
    /// Inputs are cut (and, for the CNN, PAD-extended) to this length.
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without a validation macro-F1 gain before stopping.
    pub patience: usize,
    pub init_scale: f64,
}

impl Default for NnHyper {
    fn default() -> Self {
        NnHyper {
            emb_dim: 32,
            hidden: 32,
            filters: 32,
            widths: vec![2, 3, 4],
            max_len: crate::corpus::DEFAULT_MAX_LEN,
            epochs: 10,
            batch_size: 32,
            lr: 2e-3,
            patience: 3,
            init_scale: 0.08,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct CellIds {
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
}

/// Recurrent encoder (one or two directions) with a softmax head.
#[derive(Clone, Debug)]
pub struct RecurrentNet {
    pub arch: NnArch,
    pub hyper: NnHyper,
    pub num_categories: usize,
    pub params: ParamStore,
    emb: ParamId,
    cells: Vec<CellIds>,
    head_w: ParamId,
    head_b: ParamId,
}

fn gates(arch: NnArch) -> usize {
    match arch {
        NnArch::Rnn => 1,
        NnArch::Gru => 3,
        NnArch::BiLstm => 4,
        NnArch::Cnn => unreachable!("CNN has no recurrent cell"),
    }
}

struct CellVars {
    w_x: Var,
    w_h: Var,
    b: Var,
}

impl RecurrentNet {
    pub fn new<R: Rng + ?Sized>(arch: NnArch, hyper: NnHyper, vocab_size: usize, k: usize, rng: &mut R) -> Result<Self> {
        if arch == NnArch::Cnn {
            return Err(Error::Config("CNN is not a recurrent architecture".into()));
        }
        let (e, h, s) = (hyper.emb_dim, hyper.hidden, hyper.init_scale);
        let g = gates(arch);
        let dirs = if arch == NnArch::BiLstm { 2 } else { 1 };
        let mut p = ParamStore::new();
        let emb = p.add_uniform("emb", &[vocab_size, e], s, rng)?;
        let mut cells = Vec::with_capacity(dirs);
        for d in 0..dirs {
            cells.push(CellIds {
                w_x: p.add_uniform(format!("cell{d}.w_x"), &[e, g * h], s, rng)?,
                w_h: p.add_uniform(format!("cell{d}.w_h"), &[h, g * h], s, rng)?,
                b: p.add_uniform(format!("cell{d}.b"), &[g * h], s, rng)?,
            });
        }
        let head_w = p.add_uniform("head.w", &[dirs * h, k], s, rng)?;
        let head_b = p.add_uniform("head.b", &[k], s, rng)?;
        Ok(RecurrentNet { arch, hyper, num_categories: k, params: p, emb, cells, head_w, head_b })
    }

    fn cell(&self, tape: &mut Tape, v: &CellVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hyper.hidden;
        let xw = tape.matmul(x, v.w_x)?;
        let xw = tape.add(xw, v.b)?;
        let hw = tape.matmul(h, v.w_h)?;
        Ok(match self.arch {
            NnArch::Rnn => {
                let s = tape.add(xw, hw)?;
                (tape.tanh(s), c)
            }
            NnArch::Gru => {
                let xz = tape.slice_cols(xw, 0, hd)?;
                let xr = tape.slice_cols(xw, hd, hd)?;
                let xn = tape.slice_cols(xw, 2 * hd, hd)?;
                let hz = tape.slice_cols(hw, 0, hd)?;
                let hr = tape.slice_cols(hw, hd, hd)?;
                let hn = tape.slice_cols(hw, 2 * hd, hd)?;
                let z = tape.add(xz, hz)?;
                let z = tape.sigmoid(z);
                let r = tape.add(xr, hr)?;
                let r = tape.sigmoid(r);
                let rh = tape.mul(r, hn)?;
                let n = tape.add(xn, rh)?;
                let n = tape.tanh(n);
                // h' = n + z * (h - n)
                let d = tape.sub(h, n)?;
                let zd = tape.mul(z, d)?;
                (tape.add(n, zd)?, c)
            }
            NnArch::BiLstm => {
                let s = tape.add(xw, hw)?;
                let i = tape.slice_cols(s, 0, hd)?;
                let f = tape.slice_cols(s, hd, hd)?;
                let g = tape.slice_cols(s, 2 * hd, hd)?;
                let o = tape.slice_cols(s, 3 * hd, hd)?;
                let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
                let fc = tape.mul(f, c)?;
                let ig = tape.mul(i, g)?;
                let c2 = tape.add(fc, ig)?;
                let tc = tape.tanh(c2);
                (tape.mul(o, tc)?, c2)
            }
            NnArch::Cnn => unreachable!(),
        })
    }

    /// Final hidden state of one direction; finished sequences hold their
    /// state through the padded steps.
    fn encode(&self, tape: &mut Tape, emb: Var, v: &CellVars, seqs: &[Vec<u32>]) -> Result<Var> {
        let (b, hd) = (seqs.len(), self.hyper.hidden);
        let steps = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let zeros = Tensor::zeros(&[b, hd])?;
        let mut h = tape.constant(zeros.clone());
        let mut c = tape.constant(zeros);
        for t in 0..steps {
            let ids: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD) as usize).collect();
            let x = tape.embedding(emb, &ids)?;
            let (h2, c2) = self.cell(tape, v, x, h, c)?;
            let mask: Vec<f64> =
                seqs.iter().flat_map(|s| std::iter::repeat_n(if t < s.len().max(1) { 1.0 } else { 0.0 }, hd)).collect();
            let m = tape.constant(Tensor::new(vec![b, hd], mask)?);
            let dh = tape.sub(h2, h)?;
            let mdh = tape.mul(m, dh)?;
            h = tape.add(h, mdh)?;
            if self.arch == NnArch::BiLstm {
                let dc = tape.sub(c2, c)?;
                let mdc = tape.mul(m, dc)?;
                c = tape.add(c, mdc)?;
            }
        }
        Ok(h)
    }

    fn logits(&self, tape: &mut Tape, seqs: &[&[u32]], trainable: bool) -> Result<Var> {
        let mut bind = |id| if trainable { tape.param(&self.params, id) } else { tape.frozen(&self.params, id) };
        let emb = bind(self.emb);
        let cells: Vec<CellVars> =
            self.cells.iter().map(|c| CellVars { w_x: bind(c.w_x), w_h: bind(c.w_h), b: bind(c.b) }).collect();
        let (hw, hb) = (bind(self.head_w), bind(self.head_b));
        let cut: Vec<Vec<u32>> = seqs.iter().map(|s| s[..s.len().min(self.hyper.max_len)].to_vec()).collect();
        let mut finals = vec![self.encode(tape, emb, &cells[0], &cut)?];
        if cells.len() == 2 {
            let rev: Vec<Vec<u32>> = cut.iter().map(|s| s.iter().rev().copied().collect()).collect();
            finals.push(self.encode(tape, emb, &cells[1], &rev)?);
        }
        let f = if finals.len() == 1 { finals[0] } else { tape.concat(&finals)? };
        let z = tape.matmul(f, hw)?;
        Ok(tape.add(z, hb)?)
    }
}

#[derive(Clone, Debug)]
pub enum NnModel {
    Recurrent(RecurrentNet),
    Cnn(CnnNet),
}

impl NnModel {
    pub fn new(arch: NnArch, hyper: &NnHyper, vocab_size: usize, k: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match arch {
            NnArch::Cnn => {
                let mut c = CnnConfig::new(vocab_size, hyper.max_len, Head::Softmax(k));
                c.emb_dim = hyper.emb_dim;
                c.filters = hyper.filters;
                c.widths = hyper.widths.clone();
                c.init_scale = hyper.init_scale;
                NnModel::Cnn(CnnNet::new(c, &mut rng)?)
            }
            _ => NnModel::Recurrent(RecurrentNet::new(arch, hyper.clone(), vocab_size, k, &mut rng)?),
        })
    }

    /// Rebuilds a model from saved parameter records.
    pub fn from_records(
        arch: NnArch,
        hyper: &NnHyper,
        vocab_size: usize,
        k: usize,
        records: &[(String, Tensor)],
    ) -> Result<Self> {
        let mut m = Self::new(arch, hyper, vocab_size, k, 0)?;
        m.params_mut().load_values(records)?;
        Ok(m)
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            NnModel::Recurrent(r) => &r.params,
            NnModel::Cnn(c) => &c.params,
        }
    }

    pub fn arch(&self) -> NnArch {
        match self {
            NnModel::Recurrent(r) => r.arch,
            NnModel::Cnn(_) => NnArch::Cnn,
        }
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            NnModel::Recurrent(r) => &mut r.params,
            NnModel::Cnn(c) => &mut c.params,
        }
    }

    fn logits(&self, tape: &mut Tape, seqs: &[&[u32]], trainable: bool) -> Result<Var> {
        match self {
            NnModel::Recurrent(r) => r.logits(tape, seqs, trainable),
            NnModel::Cnn(c) => {
                let vars = c.bind(tape, trainable);
                c.logits(tape, &vars, CnnInput::Tokens(seqs))
            }
        }
    }

    /// Predicted category of each sequence.
    pub fn predict(&self, seqs: &[&[u32]]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(256) {
            let mut tape = Tape::new();
            let z = self.logits(&mut tape, chunk, false)?;
            let k = tape.shape(z)[1];
            out.extend(tape.data(z).chunks(k).map(argmax));
        }
        Ok(out)
    }
}

/// One line of the learning curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

fn check_real(records: &[Record], what: &str) -> Result<()> {
    if let Some(i) = records.iter().position(|r| r.provenance == Provenance::Synthetic) {
        return Err(Error::Hygiene(format!("{what} record {i} is synthetic")));
    }
    Ok(())
}

/// Cross-entropy + Adam with early stopping on validation macro-F1.
/// Returns the best-validation snapshot and the per-epoch curve.
pub fn train_nn(
    arch: NnArch,
    train: &[Record],
    val: &[Record],
    vocab_size: usize,
    k: usize,
    hyper: &NnHyper,
    seed: u64,
) -> Result<(NnModel, Vec<EpochRecord>)> {
    check_real(val, "validation")?;
    if train.is_empty() {
        return Err(Error::Empty("training slice"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation slice"));
    }
    if train.iter().all(|r| r.label == train[0].label) {
        return Err(Error::SingleCategory);
    }
    let mut model = NnModel::new(arch, hyper, vocab_size, k, seed)?;
    let mut opt = Adam::new(hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_seqs: Vec<&[u32]> = val.iter().map(|r| r.tokens.as_slice()).collect();
    let val_truth: Vec<usize> = val.iter().map(|r| r.label).collect();
    let mut best: Option<(f64, NnModel)> = None;
    let mut curve = Vec::new();
    let mut stale = 0;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0);
        for batch in order.chunks(hyper.batch_size.max(1)) {
            let seqs: Vec<&[u32]> = batch.iter().map(|&i| train[i].tokens.as_slice()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train[i].label).collect();
            let mut tape = Tape::new();
            let z = model.logits(&mut tape, &seqs, true)?;
            let loss = tape.cross_entropy(z, &labels)?;
            loss_sum += tape.scalar(loss);
            batches += 1;
            let params = model.params_mut();
            tape.backward_into(loss, params)?;
            opt.step(params)?;
        }
        let m = compute_metrics(&val_truth, &model.predict(&val_seqs)?, k)?;
        curve.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_accuracy: m.accuracy,
            val_macro_f1: m.macro_f1,
        });
        if best.as_ref().is_none_or(|(f, _)| m.macro_f1 > *f) {
            best = Some((m.macro_f1, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    Ok((best.map(|(_, m)| m).unwrap_or(model), curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn toy(n: usize, reverse: bool) -> Vec<Record> {
        // Category 0 uses ids 4..8, category 1 uses 8..12.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let len = rng.random_range(2..6);
                let mut tokens: Vec<u32> = (0..len).map(|_| 4 + 4 * label as u32 + rng.random_range(0..4)).collect();
                if reverse {
                    tokens.reverse();
                }
                Record { label, tokens, provenance: Provenance::Real, split: Split::Train }
            })
            .collect()
    }

    fn small() -> NnHyper {
        NnHyper { emb_dim: 8, hidden: 8, filters: 6, max_len: 8, epochs: 4, batch_size: 8, lr: 1e-2, ..NnHyper::default() }
    }

    #[test]
    fn every_arch_learns_disjoint_toy() {
        let train = toy(80, false);
        let val = toy(20, false);
        for arch in [NnArch::Rnn, NnArch::Gru, NnArch::BiLstm, NnArch::Cnn] {
            let (m, curve) = train_nn(arch, &train, &val, 12, 2, &small(), 3).unwrap();
            assert!(curve.iter().any(|e| e.val_accuracy >= 0.95), "{arch:?}: {curve:?}");
            let seqs: Vec<&[u32]> = val.iter().map(|r| r.tokens.as_slice()).collect();
            assert_eq!(m.predict(&seqs).unwrap().len(), val.len());
        }
    }

    #[test]
    fn bilstm_reversed_input_matches_original() {
        let best = |rev| {
            let (_, c) = train_nn(NnArch::BiLstm, &toy(80, rev), &toy(40, rev), 12, 2, &small(), 9).unwrap();
            c.iter().map(|e| e.val_accuracy).fold(0.0, f64::max)
        };
        let (a, b) = (best(false), best(true));
        assert!((a - b).abs() <= 0.02, "{a} vs {b}");
    }

    #[test]
    fn fixed_seed_fixed_curve() {
        let train = toy(40, false);
        let val = toy(10, false);
        let a = train_nn(NnArch::Gru, &train, &val, 12, 2, &small(), 5).unwrap().1;
        let b = train_nn(NnArch::Gru, &train, &val, 12, 2, &small(), 5).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_validation_rejected() {
        let train = toy(10, false);
        let mut val = toy(4, false);
        val[1].provenance = Provenance::Synthetic;
        assert!(matches!(train_nn(NnArch::Cnn, &train, &val, 12, 2, &small(), 1), Err(Error::Hygiene(_))));
    }

    #[test]
    fn padded_steps_do_not_change_recurrent_output() {
        let NnModel::Recurrent(r) = NnModel::new(NnArch::BiLstm, &small(), 12, 2, 1).unwrap() else { panic!() };
        let short: &[u32] = &[4, 5];
        let long: &[u32] = &[4, 5, 6, 7, 8];
        let mut t1 = Tape::new();
        let a = r.logits(&mut t1, &[short], false).unwrap();
        let mut t2 = Tape::new();
        let b = r.logits(&mut t2, &[short, long], false).unwrap();
        let (x, y) = (t1.data(a).to_vec(), t2.data(b)[..2].to_vec());
        assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-12));
    }
}
