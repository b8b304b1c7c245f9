use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::shape::Shape;
use super::tape::Tape;
use crate::error::{Error, Result};
use crate::real::Real;

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// How a parameter is filled at initialisation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, std) truncated to ±2 std.
    TruncNormal(f64),
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
    pub data: Vec<T>,
    pub grad: Vec<T>,
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
    seed: u64,
    has_grad: bool,
}

impl<T: Real> ParamSet<T> {
    pub fn new(seed: u64) -> Self {
        ParamSet {
            params: Vec::new(),
            seed,
            has_grad: false,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Register a parameter. Values are zero until [`ParamSet::initialize`].
    pub fn add(&mut self, name: impl Into<String>, shape: impl Into<Shape>, init: Init) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let shape = shape.into();
        let n = shape.numel();
        self.params.push(Param {
            name,
            shape,
            init,
            data: vec![T::zero(); n],
            grad: vec![T::zero(); n],
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Fill every parameter from its [`Init`] using a generator seeded with
    /// the set's seed. Values are drawn in f64 and rounded, so the same seed
    /// gives bit-identical parameters at a given precision.
    pub fn initialize(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for p in &mut self.params {
            match p.init {
                Init::Zeros => p.data.iter_mut().for_each(|v| *v = T::zero()),
                Init::Ones => p.data.iter_mut().for_each(|v| *v = T::one()),
                Init::TruncNormal(std) => {
                    let normal = Normal::new(0.0, std).expect("finite std");
                    for v in p.data.iter_mut() {
                        let x = loop {
                            let s: f64 = normal.sample(&mut rng);
                            if s.abs() <= 2.0 * std {
                                break s;
                            }
                        };
                        *v = T::of(x);
                    }
                }
            }
        }
        self.zero_grad();
    }

    /// Add N(0, std) noise to every value. Used to move a freshly initialised
    /// model (whose velocity head starts at zero) to a generic point before
    /// gradient checking.
    pub fn perturb(&mut self, seed: u64, std: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("finite std");
        for p in &mut self.params {
            for v in p.data.iter_mut() {
                *v += T::of(normal.sample(&mut rng));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
        self.has_grad = false;
    }

    /// Whether gradients were accumulated since the last [`ParamSet::zero_grad`].
    pub fn has_grad(&self) -> bool {
        self.has_grad
    }

    /// Add the parameter gradients recorded on `tape` into the grad slots.
    pub fn accumulate(&mut self, tape: &Tape<T>) {
        for (id, g) in tape.param_grads() {
            for (a, &v) in self.params[id.0].grad.iter_mut().zip(g) {
                *a += v;
            }
        }
        self.has_grad = true;
    }

    /// Add `scale * grads[i]` into parameter `i`'s slot. `grads` is indexed
    /// like the set (see [`ParamSet::extract_grads`]).
    pub fn accumulate_dense(&mut self, grads: &[Vec<T>], scale: T) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} gradient buffers for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            if g.is_empty() {
                continue;
            }
            for (a, &v) in p.grad.iter_mut().zip(g) {
                *a += v * scale;
            }
        }
        self.has_grad = true;
        Ok(())
    }

    /// Per-parameter gradient buffers from `tape`; parameters the tape did not
    /// touch get an empty buffer.
    pub fn extract_grads(&self, tape: &Tape<T>) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = vec![Vec::new(); self.params.len()];
        for (id, g) in tape.param_grads() {
            out[id.0] = g.to_vec();
        }
        out
    }

    /// Copy with values converted to another precision.
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    init: p.init,
                    data: p.data.iter().map(|&v| U::of(v.f64())).collect(),
                    grad: vec![U::zero(); p.data.len()],
                })
                .collect(),
            seed: self.seed,
            has_grad: false,
        }
    }
}
