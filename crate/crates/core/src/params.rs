//! Trainable parameter storage, initialisation, and per-pass binding.
//!
//! Every parameter lives in one [`ParamStore`] tagged with the subnetwork
//! ([`Group`]) that owns it. Values are kept exactly representable as `f32`
//! so that checkpoints (which store `f32`) round-trip bit-exactly.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Ddon,
    Ilgfn,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Ddon => "ddon",
            Group::Ilgfn => "ilgfn",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "ddon" => Some(Group::Ddon),
            "ilgfn" => Some(Group::Ilgfn),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

pub fn round_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

/// Weight initialisers.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Normal(0, std) truncated to two standard deviations.
    TruncNormal(f64),
    /// Uniform in `±1/sqrt(fan_in)`.
    FanInUniform(usize),
    /// Normal(0, sqrt(2 / fan_in)).
    He(usize),
}

impl Init {
    pub fn sample(self, shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = match self {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Constant(c) => vec![c; n],
            Init::TruncNormal(std) => {
                let normal = Normal::new(0.0, 1.0).unwrap();
                (0..n)
                    .map(|_| loop {
                        let z: f64 = normal.sample(rng);
                        if z.abs() <= 2.0 {
                            break z * std;
                        }
                    })
                    .collect()
            }
            Init::FanInUniform(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            }
            Init::He(fan_in) => {
                let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).unwrap();
                (0..n).map(|_| normal.sample(rng)).collect()
            }
        };
        let mut t = Tensor::from_vec(shape.to_vec(), data);
        round_f32(&mut t);
        t
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, mut value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        round_f32(&mut value);
        self.entries.push(ParamEntry { name, group, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn init(
        &mut self,
        name: impl Into<String>,
        group: Group,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let t = init.sample(shape, rng);
        self.add(name, group, t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: Group) -> impl Iterator<Item = ParamId> + '_ {
        self.ids()
            .filter(move |id| self.entries[id.0].group == group)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    /// Overwrites a value, keeping the `f32`-exact storage invariant.
    pub fn set(&mut self, id: ParamId, mut value: Tensor) {
        assert_eq!(
            value.shape(),
            self.entries[id.0].value.shape(),
            "shape change for {}",
            self.entries[id.0].name
        );
        round_f32(&mut value);
        self.entries[id.0].value = value;
    }

    pub fn num_scalars(&self, group: Option<Group>) -> usize {
        self.entries
            .iter()
            .filter(|e| group.is_none_or(|g| e.group == g))
            .map(|e| e.value.len())
            .sum()
    }
}

/// One forward/backward pass: a graph plus lazily bound parameter leaves.
pub struct Session<'p> {
    pub g: Graph,
    params: &'p ParamStore,
    bound: Vec<Option<Var>>,
    trainable: Vec<Group>,
}

impl<'p> Session<'p> {
    /// Parameters of the listed groups become gradient-carrying leaves; all
    /// others are bound as constants.
    pub fn new(params: &'p ParamStore, trainable: &[Group]) -> Self {
        Session {
            g: Graph::new(),
            params,
            bound: vec![None; params.len()],
            trainable: trainable.to_vec(),
        }
    }

    /// Inference session: nothing is trainable.
    pub fn frozen(params: &'p ParamStore) -> Self {
        Self::new(params, &[])
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let entry = &self.params.entries[id.0];
        let rg = self.trainable.contains(&entry.group);
        let v = self.g.leaf(entry.value.clone(), rg);
        self.bound[id.0] = Some(v);
        v
    }

    /// Parameter gradients after `backward`, aligned with the store. Trainable
    /// parameters that were never used get `None`.
    pub fn param_grads(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| grads.take(v)))
            .collect()
    }

    pub fn is_bound(&self, id: ParamId) -> bool {
        self.bound[id.0].is_some()
    }
}
