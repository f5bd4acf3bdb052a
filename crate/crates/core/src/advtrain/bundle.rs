use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{stream_seed, GanKind, GanModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::gantext::{CnnConfig, CnnNet, Conditioning, GenConfig, GeneratorNet, Sample, SampleMode};
use crate::numerics::{checkpoint, Adam, NumericsError, Optimizer, ParamStore, Tensor};

const INIT_STREAM: u64 = 0x1417;

/// Generators, discriminator, optimizer moments and the round counter of
/// one adversarial training run.
#[derive(Clone, Debug)]
pub struct GanBundle {
    pub kind: GanKind,
    pub model: GanModelConfig,
    pub vocab_size: usize,
    pub num_categories: usize,
    /// One shared generator (CatGAN) or one per category (SentiGAN).
    pub generators: Vec<GeneratorNet>,
    pub gen_opts: Vec<Adam>,
    pub disc: CnnNet,
    pub disc_opt: Adam,
    /// Adversarial rounds completed so far.
    pub round: usize,
}

fn gen_config(kind: GanKind, model: &GanModelConfig, vocab_size: usize, k: usize, i: usize) -> GenConfig {
    let conditioning = match kind {
        GanKind::CatGan => Conditioning::Embedded { num_categories: k, dim: model.cat_dim },
        GanKind::SentiGan => Conditioning::Fixed { category: i },
    };
    let mut c = GenConfig::new(vocab_size, conditioning);
    c.emb_dim = model.emb_dim;
    c.hidden = model.hidden;
    c.noise_init = kind == GanKind::SentiGan && model.noise_init;
    c.max_len = model.max_len;
    c.init_scale = model.init_scale;
    c
}

fn disc_config(kind: GanKind, model: &GanModelConfig, vocab_size: usize, k: usize) -> CnnConfig {
    let mut c = match kind {
        GanKind::CatGan => CnnConfig::catgan(vocab_size, model.max_len, k),
        GanKind::SentiGan => CnnConfig::sentigan(vocab_size, model.max_len, k),
    };
    c.emb_dim = model.disc_emb_dim;
    c.filters = model.disc_filters;
    c.widths = model.disc_widths.clone();
    c.init_scale = model.init_scale;
    c
}

fn optimizer_records(prefix: &str, opt: &Adam, store: &ParamStore) -> Vec<(String, Tensor)> {
    let st = opt.state();
    let mut out = vec![(format!("{prefix}.step"), Tensor::scalar(st.step as f64))];
    for (i, (name, t)) in store.iter().enumerate() {
        let m = st.first.get(i).cloned().unwrap_or_else(|| vec![0.0; t.numel()]);
        let v = st.second.get(i).cloned().unwrap_or_else(|| vec![0.0; t.numel()]);
        out.push((format!("{prefix}.m.{name}"), Tensor::from_parts(t.shape().to_vec(), m)));
        out.push((format!("{prefix}.v.{name}"), Tensor::from_parts(t.shape().to_vec(), v)));
    }
    out
}

struct Records<'a>(&'a [(String, Tensor)]);

impl Records<'_> {
    fn get(&self, name: &str) -> Result<&Tensor> {
        self.0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| NumericsError::Corrupt(format!("missing record {name}")).into())
    }

    fn with_prefix(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.0
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|rest| (rest.to_string(), t.clone())))
            .collect()
    }

    fn load_optimizer(&self, prefix: &str, opt: &mut Adam, store: &ParamStore) -> Result<()> {
        let step = self.get(&format!("{prefix}.step"))?.item() as u64;
        let st = opt.state_mut();
        st.step = step;
        if step == 0 {
            st.first.clear();
            st.second.clear();
            return Ok(());
        }
        st.first = Vec::new();
        st.second = Vec::new();
        for (name, _) in store.iter() {
            st.first.push(self.get(&format!("{prefix}.m.{name}"))?.data().to_vec());
            st.second.push(self.get(&format!("{prefix}.v.{name}"))?.data().to_vec());
        }
        Ok(())
    }
}

fn usize_of(x: f64, what: &str) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x < 1e15 {
        Ok(x as usize)
    } else {
        Err(NumericsError::Corrupt(format!("{what} = {x} is not a count")).into())
    }
}

impl GanBundle {
    pub fn new(
        kind: GanKind,
        model: GanModelConfig,
        vocab_size: usize,
        num_categories: usize,
        train: &TrainConfig,
    ) -> Result<Self> {
        if num_categories < 2 {
            return Err(Error::SingleCategory);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(train.seed, INIT_STREAM, 0));
        let n_gen = match kind {
            GanKind::CatGan => 1,
            GanKind::SentiGan => num_categories,
        };
        let generators = (0..n_gen)
            .map(|i| GeneratorNet::new(gen_config(kind, &model, vocab_size, num_categories, i), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let disc = CnnNet::new(disc_config(kind, &model, vocab_size, num_categories), &mut rng)?;
        Ok(GanBundle {
            kind,
            model,
            vocab_size,
            num_categories,
            gen_opts: (0..n_gen).map(|_| Adam::new(train.gen_lr)).collect(),
            generators,
            disc,
            disc_opt: Adam::new(train.disc_lr),
            round: 0,
        })
    }

    /// The generator responsible for `category`.
    pub fn generator_for(&self, category: usize) -> Result<&GeneratorNet> {
        if category >= self.num_categories {
            return Err(Error::UnknownCategory { category, num_categories: self.num_categories });
        }
        Ok(match self.kind {
            GanKind::CatGan => &self.generators[0],
            GanKind::SentiGan => &self.generators[category],
        })
    }

    /// `n` multinomial samples of `category`.
    pub fn sample(&self, category: usize, n: usize, temperature: f64, rng: &mut dyn RngCore) -> Result<Vec<Sample>> {
        let g = self.generator_for(category)?;
        let mut out = Vec::with_capacity(n);
        let mut left = n;
        while left > 0 {
            let b = left.min(256);
            out.extend(g.sample(&vec![category; b], SampleMode::Multinomial { temperature }, rng)?);
            left -= b;
        }
        Ok(out)
    }

    pub fn records(&self) -> Vec<(String, Tensor)> {
        let m = &self.model;
        let kind = match self.kind {
            GanKind::CatGan => 0.0,
            GanKind::SentiGan => 1.0,
        };
        let mut out = vec![
            (
                "meta.format".to_string(),
                Tensor::from_parts(
                    vec![4],
                    vec![kind, self.vocab_size as f64, self.num_categories as f64, self.round as f64],
                ),
            ),
            (
                "meta.model".to_string(),
                Tensor::from_parts(
                    vec![8],
                    vec![
                        m.emb_dim as f64,
                        m.hidden as f64,
                        m.cat_dim as f64,
                        if m.noise_init { 1.0 } else { 0.0 },
                        m.max_len as f64,
                        m.disc_emb_dim as f64,
                        m.disc_filters as f64,
                        m.init_scale,
                    ],
                ),
            ),
            (
                "meta.widths".to_string(),
                Tensor::from_parts(vec![m.disc_widths.len()], m.disc_widths.iter().map(|&w| w as f64).collect()),
            ),
            ("meta.lr".to_string(), Tensor::from_parts(vec![2], vec![self.gen_opts[0].lr, self.disc_opt.lr])),
        ];
        for (i, (g, opt)) in self.generators.iter().zip(&self.gen_opts).enumerate() {
            out.extend(g.params.records().into_iter().map(|(n, t)| (format!("gen{i}.{n}"), t)));
            out.extend(optimizer_records(&format!("opt.gen{i}"), opt, &g.params));
        }
        out.extend(self.disc.params.records().into_iter().map(|(n, t)| (format!("disc.{n}"), t)));
        out.extend(optimizer_records("opt.disc", &self.disc_opt, &self.disc.params));
        out
    }

    pub fn from_records(records: &[(String, Tensor)]) -> Result<Self> {
        let r = Records(records);
        let fmt = r.get("meta.format")?.data().to_vec();
        let md = r.get("meta.model")?.data().to_vec();
        if fmt.len() != 4 || md.len() != 8 {
            return Err(NumericsError::Corrupt("bad meta records".into()).into());
        }
        let kind = match fmt[0] {
            k if k == 0.0 => GanKind::CatGan,
            k if k == 1.0 => GanKind::SentiGan,
            k => return Err(NumericsError::Corrupt(format!("unknown bundle kind {k}")).into()),
        };
        let vocab_size = usize_of(fmt[1], "vocab_size")?;
        let k = usize_of(fmt[2], "num_categories")?;
        let model = GanModelConfig {
            emb_dim: usize_of(md[0], "emb_dim")?,
            hidden: usize_of(md[1], "hidden")?,
            cat_dim: usize_of(md[2], "cat_dim")?,
            noise_init: md[3] != 0.0,
            max_len: usize_of(md[4], "max_len")?,
            disc_emb_dim: usize_of(md[5], "disc_emb_dim")?,
            disc_filters: usize_of(md[6], "disc_filters")?,
            init_scale: md[7],
            disc_widths: r
                .get("meta.widths")?
                .data()
                .iter()
                .map(|&w| usize_of(w, "width"))
                .collect::<Result<_>>()?,
        };
        let lr = r.get("meta.lr")?.data().to_vec();
        let n_gen = if kind == GanKind::CatGan { 1 } else { k };
        let mut generators = Vec::with_capacity(n_gen);
        let mut gen_opts = Vec::with_capacity(n_gen);
        for i in 0..n_gen {
            let g = GeneratorNet::from_records(
                gen_config(kind, &model, vocab_size, k, i),
                &r.with_prefix(&format!("gen{i}.")),
            )?;
            let mut opt = Adam::new(lr[0]);
            r.load_optimizer(&format!("opt.gen{i}"), &mut opt, &g.params)?;
            generators.push(g);
            gen_opts.push(opt);
        }
        let disc = CnnNet::from_records(disc_config(kind, &model, vocab_size, k), &r.with_prefix("disc."))?;
        let mut disc_opt = Adam::new(lr[1]);
        r.load_optimizer("opt.disc", &mut disc_opt, &disc.params)?;
        Ok(GanBundle {
            kind,
            model,
            vocab_size,
            num_categories: k,
            generators,
            gen_opts,
            disc,
            disc_opt,
            round: usize_of(fmt[3], "round")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(path, &self.records())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_records(&checkpoint::load(path)?)
    }

    /// Parameter and optimizer equality, bit for bit.
    pub fn same_state(&self, other: &GanBundle) -> bool {
        let a = self.records();
        let b = other.records();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((na, ta), (nb, tb))| {
                na == nb
                    && ta.shape() == tb.shape()
                    && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
