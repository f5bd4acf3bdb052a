//! Shared oracles for the integration and acceptance tests.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textbalance::advtrain::{mc_penalty, GanBundle, GanKind, GanModelConfig, TrainConfig};
use textbalance::corpus::{count_matrix, EOS};
use textbalance::genmetrics::{bleu, BleuConfig};
use textbalance::numerics::{Tape, Tensor, Var};
use textbalance::sentclass::{compute_metrics, NaiveBayes};

/// Outcome of one oracle comparison.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

// ---- gradient checks -------------------------------------------------------

pub const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error.
pub const GRAD_REL_FLOOR: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;

type Builder<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

#[derive(Clone, Debug, Default)]
pub struct GradStats {
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

impl GradStats {
    pub fn merge(&mut self, o: &GradStats) {
        self.checked += o.checked;
        self.passed += o.passed;
        self.worst = self.worst.max(o.worst);
    }

    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.checked.max(1) as f64
    }
}

/// Scalar loss: the output itself if scalar, else its dot product with a
/// fixed random projection.
fn scalar_loss(tape: &mut Tape, out: Var, proj_seed: u64) -> Var {
    if tape.value(out).is_scalar() {
        return out;
    }
    let shape = tape.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(proj_seed);
    let r = Tensor::uniform(&shape, -1.0, 1.0, &mut rng).unwrap();
    let rv = tape.constant(r);
    let m = tape.mul(out, rv).unwrap();
    tape.sum(m)
}

fn eval_loss(inputs: &[Tensor], build: &Builder, proj_seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars);
    let loss = scalar_loss(&mut tape, out, proj_seed);
    tape.scalar(loss)
}

/// Central finite differences against the tape on every input coordinate.
pub fn grad_check(inputs: &[Tensor], build: &Builder, proj_seed: u64) -> GradStats {
    let inputs: Vec<Tensor> = inputs.iter().map(|t| t.clone().tracked()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars);
    let loss = scalar_loss(&mut tape, out, proj_seed);
    let grads = tape.backward(loss).unwrap();
    let mut stats = GradStats::default();
    for (i, v) in vars.iter().enumerate() {
        let n = inputs[i].numel();
        let analytic: Vec<f64> = grads.wrt(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for j in 0..n {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= FD_STEP;
            let fd = (eval_loss(&plus, build, proj_seed) - eval_loss(&minus, build, proj_seed)) / (2.0 * FD_STEP);
            let a = analytic[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(GRAD_REL_FLOOR);
            stats.checked += 1;
            if rel <= GRAD_REL_TOL {
                stats.passed += 1;
            }
            stats.worst = stats.worst.max(rel);
        }
    }
    stats
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng).unwrap()
}

fn pos_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 0.5, 2.0, rng).unwrap()
}

/// Every differentiable tape operator, each on random inputs.
pub fn operator_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor>, Box<Builder<'static>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let noise: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
    let noise2 = noise.clone();
    vec![
        ("add", vec![rand_t(&[3, 4], r), rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1]).unwrap())),
        ("add_row", vec![rand_t(&[3, 4], r), rand_t(&[4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1]).unwrap())),
        ("add_scalar_rhs", vec![rand_t(&[3, 4], r), rand_t(&[1], r)], Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1]).unwrap())),
        ("sub", vec![rand_t(&[3, 4], r), rand_t(&[4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1]).unwrap())),
        ("mul", vec![rand_t(&[3, 4], r), rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1]).unwrap())),
        ("mul_row", vec![rand_t(&[3, 4], r), rand_t(&[4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1]).unwrap())),
        ("matmul", vec![rand_t(&[3, 5], r), rand_t(&[5, 2], r)], Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1]).unwrap())),
        ("scale", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.scale(v[0], -1.7))),
        ("add_scalar", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.add_scalar(v[0], 0.3))),
        ("neg", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.neg(v[0]))),
        ("tanh", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.tanh(v[0]))),
        ("sigmoid", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.sigmoid(v[0]))),
        ("relu", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.relu(v[0]))),
        ("exp", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.exp(v[0]))),
        ("log_sigmoid", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.log_sigmoid(v[0]))),
        ("log", vec![pos_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.log(v[0]).unwrap())),
        ("softmax", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.softmax(v[0]))),
        ("log_softmax", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.log_softmax(v[0]))),
        ("embedding", vec![rand_t(&[5, 3], r)], Box::new(|t: &mut Tape, v: &[Var]| t.embedding(v[0], &[4, 0, 4, 2]).unwrap())),
        ("concat", vec![rand_t(&[3, 2], r), rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.concat(&[v[0], v[1]]).unwrap())),
        ("slice_cols", vec![rand_t(&[3, 5], r)], Box::new(|t: &mut Tape, v: &[Var]| t.slice_cols(v[0], 1, 3).unwrap())),
        ("concat_rows", vec![rand_t(&[2, 3], r), rand_t(&[1, 3], r)], Box::new(|t: &mut Tape, v: &[Var]| t.concat_rows(&[v[0], v[1]]).unwrap())),
        ("slice_rows", vec![rand_t(&[4, 3], r)], Box::new(|t: &mut Tape, v: &[Var]| t.slice_rows(v[0], 1, 2).unwrap())),
        ("select_rows", vec![rand_t(&[3, 3], r)], Box::new(|t: &mut Tape, v: &[Var]| t.select_rows(v[0], &[Some(2), None, Some(2), Some(0)]).unwrap())),
        ("reshape", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.reshape(v[0], &[2, 6]).unwrap())),
        (
            "conv1d",
            vec![rand_t(&[2, 5, 3], r), rand_t(&[6, 4], r), rand_t(&[4], r)],
            Box::new(|t: &mut Tape, v: &[Var]| t.conv1d(v[0], v[1], v[2], 2).unwrap()),
        ),
        ("max_pool_over_time", vec![rand_t(&[2, 5, 3], r)], Box::new(|t: &mut Tape, v: &[Var]| t.max_pool_over_time(v[0]).unwrap())),
        ("mean", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.mean(v[0]))),
        ("sum", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.sum(v[0]))),
        ("gather", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.gather(v[0], &[3, 0, 1]).unwrap())),
        (
            "weighted_nll",
            vec![rand_t(&[3, 4], r)],
            Box::new(|t: &mut Tape, v: &[Var]| t.weighted_nll(v[0], &[1, 3, 0], &[0.5, -0.2, 1.3]).unwrap()),
        ),
        ("cross_entropy", vec![rand_t(&[3, 4], r)], Box::new(|t: &mut Tape, v: &[Var]| t.cross_entropy(v[0], &[2, 2, 0]).unwrap())),
        (
            "gumbel_softmax_soft",
            vec![rand_t(&[3, 4], r)],
            Box::new(move |t: &mut Tape, v: &[Var]| t.gumbel_softmax_with_noise(v[0], &noise, 0.7, false).unwrap()),
        ),
        (
            "gumbel_then_matmul",
            vec![rand_t(&[3, 4], r), rand_t(&[4, 2], r)],
            Box::new(move |t: &mut Tape, v: &[Var]| {
                let g = t.gumbel_softmax_with_noise(v[0], &noise2, 1.3, false).unwrap();
                t.matmul(g, v[1]).unwrap()
            }),
        ),
    ]
}

/// x -> tanh(x W1 + b1) -> sigmoid(. W2 + b2) -> . W3 + b3 -> cross-entropy.
pub fn three_layer_case(seed: u64) -> (Vec<Tensor>, Box<Builder<'static>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let inputs = vec![
        rand_t(&[4, 5], r),
        rand_t(&[5, 6], r),
        rand_t(&[6], r),
        rand_t(&[6, 6], r),
        rand_t(&[6], r),
        rand_t(&[6, 3], r),
        rand_t(&[3], r),
    ];
    let build = |t: &mut Tape, v: &[Var]| {
        let a = t.matmul(v[0], v[1]).unwrap();
        let a = t.add(a, v[2]).unwrap();
        let a = t.tanh(a);
        let b = t.matmul(a, v[3]).unwrap();
        let b = t.add(b, v[4]).unwrap();
        let b = t.sigmoid(b);
        let c = t.matmul(b, v[5]).unwrap();
        let c = t.add(c, v[6]).unwrap();
        t.cross_entropy(c, &[0, 2, 1, 2]).unwrap()
    };
    (inputs, Box::new(build))
}

/// Criterion 1 core: returns per-case stats and the pooled total.
pub fn run_grad_checks(seeds: &[u64]) -> (Vec<(String, GradStats)>, GradStats) {
    let mut per = Vec::new();
    let mut total = GradStats::default();
    for &seed in seeds {
        for (name, inputs, build) in operator_cases(seed) {
            let s = grad_check(&inputs, build.as_ref(), seed ^ 0x9e37);
            total.merge(&s);
            per.push((format!("{name}@{seed}"), s));
        }
        let (inputs, build) = three_layer_case(seed);
        let s = grad_check(&inputs, build.as_ref(), seed);
        total.merge(&s);
        per.push((format!("three_layer@{seed}"), s));
    }
    (per, total)
}

// ---- BLEU oracle -------------------------------------------------------------

/// Clipped n-gram matches and candidate count for one hypothesis, by direct
/// position scanning.
fn brute_ngram(h: &[u32], refs: &[Vec<u32>], n: usize) -> (usize, usize) {
    if h.len() < n {
        return (0, 0);
    }
    let grams: Vec<&[u32]> = (0..=h.len() - n).map(|i| &h[i..i + n]).collect();
    let mut seen: Vec<&[u32]> = Vec::new();
    let mut matched = 0;
    for g in &grams {
        if seen.contains(g) {
            continue;
        }
        seen.push(g);
        let in_h = grams.iter().filter(|x| *x == g).count();
        let mut best = 0;
        for r in refs {
            if r.len() >= n {
                best = best.max((0..=r.len() - n).filter(|&i| &r[i..i + n] == *g).count());
            }
        }
        matched += in_h.min(best);
    }
    (matched, grams.len())
}

pub fn brute_bleu(refs: &[Vec<u32>], hyps: &[Vec<u32>], max_n: usize, eps: f64) -> f64 {
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for h in hyps {
        c += h.len();
        let mut best = refs[0].len();
        for x in refs {
            let d = x.len().abs_diff(h.len());
            let bd = best.abs_diff(h.len());
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best;
        for n in 1..=max_n {
            let (m, t) = brute_ngram(h, refs, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    if c == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let num = if matched[n] == 0 { eps } else { matched[n] as f64 };
        log_sum += (num / total[n].max(1) as f64).ln();
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    (bp * (log_sum / max_n as f64).exp()).min(1.0)
}

fn random_corpus(rng: &mut ChaCha8Rng, n: usize, vocab: u32, max_len: usize) -> Vec<Vec<u32>> {
    (0..n).map(|_| (0..rng.random_range(0..=max_len)).map(|_| rng.random_range(0..vocab)).collect()).collect()
}

/// Criterion 2: worst absolute gap over 50 random corpora, and the hand case.
pub fn bleu_oracle(corpora: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb1e0);
    let mut worst: f64 = 0.0;
    for _ in 0..corpora {
        let n = rng.random_range(1..6);
        let mut refs = random_corpus(&mut rng, n, 5, 8);
        if refs.iter().all(Vec::is_empty) {
            refs.push(vec![1, 2]);
        }
        let n = rng.random_range(1..6);
        let hyps = random_corpus(&mut rng, n, 5, 8);
        let max_n = rng.random_range(1..=4);
        let cfg = BleuConfig::with_n(max_n);
        let got = bleu(&refs, &hyps, &cfg).unwrap();
        worst = worst.max((got - brute_bleu(&refs, &hyps, max_n, cfg.epsilon)).abs());
    }
    let w = |s: &str| s.split(' ').map(str::to_string).collect::<Vec<_>>();
    let hand = bleu(&[w("the cat sat")], &[w("the cat")], &BleuConfig::with_n(1)).unwrap();
    (worst, hand)
}

// ---- NB and metric oracles -------------------------------------------------

/// Log-space NB posterior by enumerating every (category, term) pair.
pub fn brute_nb_posterior(docs: &[Vec<u32>], labels: &[usize], k: usize, v: usize, alpha: f64, query: &[u32]) -> Vec<f64> {
    let content = |t: u32| t > EOS;
    let mut joint = Vec::with_capacity(k);
    for c in 0..k {
        let n_c = labels.iter().filter(|&&y| y == c).count() as f64;
        let mut lp = (n_c / labels.len() as f64).ln();
        let mut count = vec![0.0; v];
        for (d, &y) in docs.iter().zip(labels) {
            if y == c {
                for &t in d.iter().filter(|&&t| content(t)) {
                    count[t as usize] += 1.0;
                }
            }
        }
        let total: f64 = count.iter().sum::<f64>() + alpha * v as f64;
        for term in 0..v {
            let q = query.iter().filter(|&&t| content(t) && t as usize == term).count() as f64;
            lp += q * ((count[term] + alpha) / total).ln();
        }
        joint.push(lp);
    }
    let m = joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = m + joint.iter().map(|j| (j - m).exp()).sum::<f64>().ln();
    joint.iter().map(|j| j - z).collect()
}

/// Worst gap between NB and the enumeration oracle over random ≤5-doc fixtures.
pub fn nb_oracle(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let v = rng.random_range(5..9);
        let k = rng.random_range(2..4);
        let n = rng.random_range(k..=5);
        let docs: Vec<Vec<u32>> =
            (0..n).map(|_| (0..rng.random_range(1..6)).map(|_| rng.random_range(4..v as u32)).collect()).collect();
        let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        labels.rotate_left(rng.random_range(0..n));
        let x = count_matrix(docs.iter().map(Vec::as_slice), v);
        let nb = NaiveBayes::fit(&x, &labels, k, 1.0);
        let query: Vec<u32> = (0..rng.random_range(1..5)).map(|_| rng.random_range(4..v as u32)).collect();
        let qx = count_matrix([query.as_slice()], v);
        let got = nb.log_posterior(&qx, 0);
        let want = brute_nb_posterior(&docs, &labels, k, v, 1.0, &query);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Worst gap between the metric module and direct TP/FP/FN counting.
pub fn metrics_oracle(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3e7);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let k = rng.random_range(2..5);
        let n = rng.random_range(1..80);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let m = compute_metrics(&truth, &pred, k).unwrap();
        let (mut f1s, mut ps, mut rs) = (Vec::new(), Vec::new(), Vec::new());
        for c in 0..k {
            let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
            for (&t, &p) in truth.iter().zip(&pred) {
                match (t == c, p == c) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fneg += 1.0,
                    _ => {}
                }
            }
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            worst = worst.max((m.precision[c] - p).abs()).max((m.recall[c] - r).abs()).max((m.f1[c] - f).abs());
            ps.push(p);
            rs.push(r);
            f1s.push(f);
        }
        let acc = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / n as f64;
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        worst = worst
            .max((m.accuracy - acc).abs())
            .max((m.macro_f1 - mean(&f1s)).abs())
            .max((m.macro_precision - mean(&ps)).abs())
            .max((m.macro_recall - mean(&rs)).abs());
        let mut conf: HashMap<(usize, usize), usize> = HashMap::new();
        for (&t, &p) in truth.iter().zip(&pred) {
            *conf.entry((t, p)).or_default() += 1;
        }
        for (i, row) in m.confusion.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if conf.get(&(i, j)).copied().unwrap_or(0) != c {
                    worst = f64::INFINITY;
                }
            }
        }
    }
    worst
}

// ---- Monte Carlo penalty vs exhaustive enumeration -------------------------

/// Exact expected penalty of completing `prefix`, summing over every
/// completion the generator can emit.
pub fn exact_penalty(bundle: &GanBundle, category: usize, prefix: &[u32], noise: &[f64]) -> f64 {
    let gen = bundle.generator_for(category).unwrap();
    let (v, max_len) = (bundle.vocab_size as u32, bundle.model.max_len);
    let mut finished: Vec<Vec<u32>> = Vec::new();
    let mut frontier = vec![prefix.to_vec()];
    while let Some(s) = frontier.pop() {
        if s.last() == Some(&EOS) || s.len() >= max_len {
            finished.push(s);
            continue;
        }
        for t in 0..v {
            let mut n = s.clone();
            n.push(t);
            frontier.push(n);
        }
    }
    let noise_opt = (!noise.is_empty()).then(|| noise.to_vec());
    let mut total = 0.0;
    let mut mass = 0.0;
    for s in &finished {
        let lp = gen.log_probs(&[category], &[s.as_slice()], noise_opt.clone()).unwrap();
        let p = lp[0][prefix.len()..].iter().sum::<f64>().exp();
        let d = bundle.disc.discriminate(&[s.as_slice()]).unwrap();
        total += p * (1.0 - d[0][category]).clamp(0.0, 1.0);
        mass += p;
    }
    assert!((mass - 1.0).abs() < 1e-9, "completion mass {mass}");
    total
}

/// Largest |MC - exact| over prefixes of a vocab-4, length-3 SentiGAN bundle.
pub fn mc_vs_exhaustive(rollouts: usize) -> f64 {
    let model = GanModelConfig {
        emb_dim: 3,
        hidden: 4,
        max_len: 3,
        disc_emb_dim: 3,
        disc_filters: 3,
        disc_widths: vec![2, 3],
        init_scale: 1.0,
        ..GanModelConfig::default()
    };
    let train = TrainConfig { seed: 11, ..TrainConfig::default() };
    let bundle = GanBundle::new(GanKind::SentiGan, model, 4, 2, &train).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for category in 0..2 {
        let noise = bundle.sample(category, 1, 1.0, &mut rng).unwrap()[0].noise.clone();
        for prefix in [vec![], vec![3], vec![0], vec![3, 1], vec![1, 0]] {
            let exact = exact_penalty(&bundle, category, &prefix, &noise);
            let mc = mc_penalty(&bundle, category, &prefix, &noise, rollouts, &mut rng).unwrap();
            worst = worst.max((mc - exact).abs());
        }
    }
    worst
}
