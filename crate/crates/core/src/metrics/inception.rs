//! Inception score over a frozen classifier of the synthetic world.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, softmax_in_place, AdamState, ParamStore, Session, Tensor};
use crate::codec::{self, Reader};
use crate::error::{Error, Result};
use crate::models::layers::affine;
use crate::rng;
use crate::world::{Image, Scene, World, WorldConfig};

/// `exp(E_x KL(p(c|x) || p(c)))` averaged over `splits` equal parts.
///
/// Rows are assigned to parts by a shuffle keyed on `seed`; leftover rows
/// that do not fill a part are dropped.
pub fn inception_score(probs: &[Vec<f64>], splits: usize, seed: u64) -> Result<f64> {
    if splits == 0 || probs.len() < 2 * splits {
        return Err(Error::data(format!(
            "inception score needs at least {} images for {splits} splits, got {}",
            2 * splits,
            probs.len()
        )));
    }
    let k = probs[0].len();
    for (i, p) in probs.iter().enumerate() {
        let sum: f64 = p.iter().sum();
        if p.len() != k || (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| !(0.0..=1.0 + 1e-12).contains(v)) {
            return Err(Error::data(format!("classifier row {i} is not a distribution (sum {sum})")));
        }
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.shuffle(&mut rng::stream(seed, "inception-splits"));
    let part = probs.len() / splits;
    let mut total = 0.0;
    for chunk in order.chunks_exact(part).take(splits) {
        let mut marginal = vec![0.0; k];
        for &i in chunk {
            for (m, p) in marginal.iter_mut().zip(&probs[i]) {
                *m += p / part as f64;
            }
        }
        let mut kl = 0.0;
        for &i in chunk {
            for (p, m) in probs[i].iter().zip(&marginal) {
                if *p > 0.0 {
                    kl += p * (p / m).ln();
                }
            }
        }
        total += (kl / part as f64).exp();
    }
    Ok(total / splits as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub min_accuracy: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 30,
            lr: 0.01,
            min_accuracy: 0.95,
            seed: 7,
        }
    }
}

/// Object-class classifier: per-patch relu features, sum-pooled, then linear.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldClassifier {
    params: ParamStore,
    grid: usize,
    classes: usize,
    /// Accuracy on the held-out scenes at training time.
    pub dev_accuracy: f64,
}

const MAGIC: &[u8; 8] = b"MMCCLSF1";

#[derive(Serialize, Deserialize)]
struct Header {
    grid: usize,
    classes: usize,
    dev_accuracy: f64,
    tensors: Vec<(String, Vec<usize>)>,
}

impl WorldClassifier {
    /// Trains on noise-free renders of a seeded 80% of the scene space and
    /// fails unless the remaining scenes reach `cfg.min_accuracy`.
    pub fn train(world: &World, cfg: &ClassifierConfig) -> Result<Self> {
        let wc = world.config();
        let classes = wc.num_classes;
        let mut init = rng::stream(cfg.seed, "classifier/init");
        let mut params = ParamStore::new();
        let pl = wc.patch_len();
        params.insert_uniform("w1", vec![pl, cfg.hidden], (1.0 / pl as f64).sqrt(), &mut init)?;
        params.insert_uniform("b1", vec![1, cfg.hidden], 0.1, &mut init)?;
        params.insert_uniform("w2", vec![cfg.hidden, classes], (1.0 / cfg.hidden as f64).sqrt(), &mut init)?;
        params.insert("b2", Tensor::zeros(vec![1, classes]))?;

        let mut scenes: Vec<Scene> = world.scenes().collect();
        scenes.shuffle(&mut rng::stream(cfg.seed, "classifier/split"));
        let cut = scenes.len() * 4 / 5;
        let (train, dev) = scenes.split_at(cut);
        let mut clf = Self {
            params,
            grid: wc.grid,
            classes,
            dev_accuracy: 0.0,
        };
        let mut adam = AdamState::new(&clf.params, cfg.lr);
        let mut order: Vec<&Scene> = train.iter().collect();
        let mut shuffle = rng::stream(cfg.seed, "classifier/order");
        for _ in 0..cfg.epochs {
            order.shuffle(&mut shuffle);
            for batch in order.chunks(16) {
                clf.params.zero_grad();
                for sc in batch {
                    let img = world.render_image(sc);
                    let mut s = Session::new(&clf.params);
                    let logits = clf.logits(&mut s, &img)?;
                    let loss = s.cross_entropy(logits, &[sc.object_class], &[false])?;
                    let g = s.backward(loss)?;
                    clf.params.accumulate(&g)?;
                }
                clf.params.scale_grads(1.0 / batch.len() as f64);
                adam_step(&mut clf.params, &mut adam)?;
            }
        }
        clf.params.zero_grad();
        let hits = dev
            .iter()
            .filter(|sc| clf.predict(&world.render_image(sc)).ok() == Some(sc.object_class))
            .count();
        clf.dev_accuracy = hits as f64 / dev.len() as f64;
        if clf.dev_accuracy < cfg.min_accuracy {
            return Err(Error::Numerical(format!(
                "world classifier reached {:.3} held-out accuracy, below {}",
                clf.dev_accuracy, cfg.min_accuracy
            )));
        }
        Ok(clf)
    }

    fn logits(&self, s: &mut Session, img: &Image) -> Result<crate::autodiff::Var> {
        let patches = img.patches(self.grid);
        let rows = self.grid * self.grid;
        let x = s.constant(rows, patches.len() / rows, patches)?;
        let (w1, b1) = (s.param("w1")?, s.param("b1")?);
        let (w2, b2) = (s.param("w2")?, s.param("b2")?);
        let a = affine(s, x, w1, b1)?;
        let h = s.relu(a);
        let pooled = s.sum_rows(h);
        affine(s, pooled, w2, b2)
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn probs(&self, img: &Image) -> Result<Vec<f64>> {
        let mut s = Session::inference(&self.params);
        let l = self.logits(&mut s, img)?;
        let mut p = s.value(l).to_vec();
        softmax_in_place(&mut p);
        Ok(p)
    }

    pub fn predict(&self, img: &Image) -> Result<usize> {
        let p = self.probs(img)?;
        Ok(p.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("at least one class"))
    }

    /// Inception score of `images` under this classifier.
    pub fn score(&self, images: &[Image], splits: usize, seed: u64) -> Result<f64> {
        let probs = images.iter().map(|i| self.probs(i)).collect::<Result<Vec<_>>>()?;
        inception_score(&probs, splits, seed)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = Header {
            grid: self.grid,
            classes: self.classes,
            dev_accuracy: self.dev_accuracy,
            tensors: self.params.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect(),
        };
        let mut out = Vec::new();
        codec::put_header(&mut out, MAGIC, &header)?;
        for (_, t) in self.params.iter() {
            codec::put_f64s(&mut out, t.data());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], world: &WorldConfig) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let h: Header = r.header(MAGIC)?;
        if h.grid != world.grid || h.classes != world.num_classes {
            return Err(Error::data("classifier was trained for a different world"));
        }
        let mut params = ParamStore::new();
        for (name, shape) in &h.tensors {
            let n = shape.iter().product();
            params.insert(name.clone(), Tensor::new(shape.clone(), r.f64s(n)?)?)?;
        }
        r.finish()?;
        for name in ["w1", "b1", "w2", "b2"] {
            params.get(name)?;
        }
        Ok(Self {
            params,
            grid: h.grid,
            classes: h.classes,
            dev_accuracy: h.dev_accuracy,
        })
    }
}
