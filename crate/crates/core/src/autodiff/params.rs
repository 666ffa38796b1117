use std::collections::{BTreeMap, HashMap};
use std::ops::{Deref, DerefMut};

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor drawn uniformly from `[-scale, scale]`.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::data(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(name, tensor.with_grad());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::data(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::data(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Adds a map of named gradients into the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (name, g) in grads {
            self.get_mut(name)?.accumulate_grad(g)?;
        }
        Ok(())
    }

    /// Multiplies every stored gradient by `factor`.
    pub fn scale_grads(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    /// Checksum of parameter bytes, used to audit which tensors a step touched.
    pub fn fingerprint(&self) -> BTreeMap<String, u64> {
        self.tensors
            .iter()
            .map(|(k, t)| {
                let mut h: u64 = 0xcbf2_9ce4_8422_2325;
                for v in t.data() {
                    for b in v.to_le_bytes() {
                        h ^= u64::from(b);
                        h = h.wrapping_mul(0x0000_0100_0000_01b3);
                    }
                }
                (k.clone(), h)
            })
            .collect()
    }
}

/// A tape bound to one parameter store.
///
/// Parameters are copied onto the tape the first time a forward pass asks for
/// them; later lookups reuse the same node so their adjoints accumulate.
pub struct Session<'p> {
    pub tape: Tape,
    params: &'p ParamStore,
    bound: HashMap<String, Var>,
    trainable: bool,
}

impl<'p> Session<'p> {
    /// Session whose parameters receive gradients.
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: HashMap::new(),
            trainable: true,
        }
    }

    /// Session for inference: parameters enter the tape as constants.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self {
            trainable: false,
            ..Self::new(params)
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.params.get(name)?;
        let (r, c) = t.as_matrix_dims();
        let v = self.tape.leaf(r, c, t.data().to_vec(), self.trainable)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// `prefix.name`
    pub fn p(&mut self, prefix: &str, name: &str) -> Result<Var> {
        self.param(&format!("{prefix}.{name}"))
    }

    /// Backpropagates `loss` and returns adjoints keyed by parameter name.
    /// Parameters that were never bound, or that the loss does not depend on,
    /// get all-zero gradients.
    pub fn backward(&self, loss: Var) -> Result<BTreeMap<String, Vec<f64>>> {
        let value = self.tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {value}")));
        }
        let grads = self.tape.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, t) in self.params.iter() {
            let g = match self.bound.get(name).and_then(|&v| grads.get(v)) {
                Some(g) => g.to_vec(),
                None => vec![0.0; t.len()],
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

impl Deref for Session<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Session<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
