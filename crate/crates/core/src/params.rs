//! Named parameter storage and the session that binds it onto a tape.
//!
//! Blocks register their weights on a [`ParamBuilder`], which only records
//! names, shapes and initialisers. The resulting [`ParamLayout`] can be counted
//! without allocating (useful for full-size configurations) or materialised
//! into a [`ParamStore`] from a seed.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{numel, Scalar, Tensor};

/// Index of a parameter inside a [`ParamLayout`] / [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter is filled when a store is materialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Truncated normal (cut at two standard deviations) with
    /// `std = gain · sqrt(2 / fan_in)`.
    Fan { fan_in: usize, gain: f64 },
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }
}

/// Ordered list of parameter declarations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    /// Scalar count of every parameter whose name starts with `prefix`
    /// followed by `.` (or equals it).
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.specs
            .iter()
            .filter(|s| {
                s.name == prefix
                    || (s.name.starts_with(prefix) && s.name.as_bytes().get(prefix.len()) == Some(&b'.'))
            })
            .map(ParamSpec::numel)
            .sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }
}

/// Records parameter declarations under a dotted name prefix.
#[derive(Debug, Default)]
pub struct ParamBuilder {
    layout: ParamLayout,
    prefix: Vec<String>,
    /// Multiplier applied to every `Fan` initialiser's gain.
    pub weight_gain: f64,
}

impl ParamBuilder {
    pub fn new(weight_gain: f64) -> Self {
        Self {
            layout: ParamLayout::default(),
            prefix: Vec::new(),
            weight_gain,
        }
    }

    /// Run `f` with `name` appended to the current prefix.
    pub fn nested<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.to_string());
        let r = f(self);
        self.prefix.pop();
        r
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        debug_assert!(self.layout.find(&full).is_none(), "duplicate parameter {full}");
        let init = match init {
            Init::Fan { fan_in, gain } => Init::Fan {
                fan_in,
                gain: gain * self.weight_gain,
            },
            other => other,
        };
        self.layout.specs.push(ParamSpec {
            name: full,
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.layout.specs.len() - 1)
    }

    /// Convolution kernel `out × in/groups × k × k`.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, groups: usize) -> ParamId {
        let fan_in = cin / groups * k * k;
        self.add(name, &[cout, cin / groups, k, k], Init::Fan { fan_in, gain: 1.0 })
    }

    pub fn bias(&mut self, name: &str, c: usize) -> ParamId {
        self.add(name, &[c], Init::Const(0.0))
    }

    pub fn finish(self) -> ParamLayout {
        self.layout
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() <= 2.0 {
            return v;
        }
    }
}

/// Materialised parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T = f64> {
    layout: ParamLayout,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Fill every parameter from its initialiser. A single ChaCha stream is
    /// consumed in declaration order, so equal seeds give identical stores.
    pub fn materialize(layout: ParamLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = layout
            .specs
            .iter()
            .map(|s| match s.init {
                Init::Const(c) => Tensor::full(&s.shape, T::of(c)),
                Init::Fan { fan_in, gain } => {
                    let std = gain * libm::sqrt(2.0 / fan_in.max(1) as f64);
                    let data = (0..s.numel())
                        .map(|_| T::of(std * truncated_normal(&mut rng)))
                        .collect();
                    Tensor::new(&s.shape, data).expect("declared shape")
                }
            })
            .collect();
        Self { layout, values }
    }

    /// Wrap existing values, checking them against the layout.
    pub fn from_values(layout: ParamLayout, values: Vec<Tensor<T>>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "{} tensors for {} parameters",
                values.len(),
                layout.len()
            )));
        }
        for (s, v) in layout.specs.iter().zip(&values) {
            if s.shape != v.shape() {
                return Err(shape_err!("parameter {} is {:?}, expected {:?}", s.name, v.shape(), s.shape));
            }
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.layout.specs[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.layout.find(name)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            layout: self.layout.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// L2 norm of every parameter whose name starts with `prefix`.
    pub fn norm_prefix(&self, prefix: &str) -> f64 {
        let sq: f64 = self
            .layout
            .specs
            .iter()
            .zip(&self.values)
            .filter(|(s, _)| s.name.starts_with(prefix))
            .map(|(_, v)| v.l2_norm() * v.l2_norm())
            .sum();
        libm::sqrt(sq)
    }
}

/// A graph together with a parameter store. Parameters become tape leaves the
/// first time a block asks for them.
pub struct Session<'g, 'p, T: Scalar = f64> {
    graph: &'g mut Graph<T>,
    params: &'p ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'g, 'p, T: Scalar> Session<'g, 'p, T> {
    /// `trainable` controls whether parameter leaves record gradients.
    pub fn new(graph: &'g mut Graph<T>, params: &'p ParamStore<T>, trainable: bool) -> Self {
        Self {
            graph,
            params,
            bound: alloc::vec![None; params.len()],
            trainable,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    /// Substitute an existing node for a parameter (used to differentiate with
    /// respect to a single weight).
    pub fn bind(&mut self, id: ParamId, var: Var) -> Result<()> {
        if self.graph.shape(var) != self.params.get(id).shape() {
            return Err(shape_err!(
                "binding {:?} to parameter {} of shape {:?}",
                self.graph.shape(var),
                self.params.name(id),
                self.params.get(id).shape()
            ));
        }
        self.bound[id.0] = Some(var);
        Ok(())
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let v = self.graph.leaf(self.params.get(id).clone(), self.trainable)?;
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }

    /// Gradient for every parameter, zero when the parameter was never used.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.params
            .ids()
            .map(|id| match self.bound[id.0] {
                Some(v) => grads.wrt(v),
                None => Tensor::zeros(self.params.get(id).shape()),
            })
            .collect()
    }
}

impl<T: Scalar> Deref for Session<'_, '_, T> {
    type Target = Graph<T>;
    fn deref(&self) -> &Graph<T> {
        self.graph
    }
}

impl<T: Scalar> DerefMut for Session<'_, '_, T> {
    fn deref_mut(&mut self) -> &mut Graph<T> {
        self.graph
    }
}
