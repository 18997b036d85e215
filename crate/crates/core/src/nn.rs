//! Parameter storage and the parameterized layers shared by all networks.

use std::cell::RefCell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Conv2dSpec, Conv3dSpec, Gradients, Tape, Var};
use crate::tensor::{Real, Tensor};

/// Negative slope of every leaky ReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.1;
/// Weight multiplier for layers that emit matching scores or mask logits,
/// so the first softmax starts close to uniform.
pub const HEAD_INIT_SCALE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered parameter arrays.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn num_params_with_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.values)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, v)| v.numel())
            .sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Binds a [`ParamStore`] to a [`Tape`] for one forward pass.
///
/// Each parameter becomes a tape leaf the first time a layer asks for it.
pub struct Binder<'t, 's, T: Real> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    trainable: bool,
    bound: RefCell<Vec<Option<Var<'t, T>>>>,
}

impl<'t, 's, T: Real> Binder<'t, 's, T> {
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, trainable: bool) -> Self {
        Binder {
            tape,
            store,
            trainable,
            bound: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        let var = if self.trainable {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.borrow_mut()[id.0] = Some(var);
        var
    }

    /// Gradient for every parameter, zeros for those the pass never touched.
    pub fn collect(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.bound
            .borrow()
            .iter()
            .zip(self.store.values())
            .map(|(var, value)| match var {
                Some(v) => grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(value.shape())),
                None => Tensor::zeros(value.shape()),
            })
            .collect()
    }
}

/// Kaiming-normal standard deviation for a leaky-ReLU network.
fn kaiming_std(fan_in: usize) -> f64 {
    (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu,
    Identity,
}

impl Activation {
    pub fn apply<'t, T: Real>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::LeakyRelu => x.leaky_relu(T::lit(LEAKY_SLOPE)),
            Activation::Identity => x,
        }
    }
}

/// Static description of one layer, enough to count its arithmetic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    /// `[C, spatial...]` of one sample's output.
    pub output: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: Vec<usize>,
        groups: usize,
    },
    /// A layer whose output shape depends on data; cannot be counted statically.
    Dynamic,
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv2d {
    /// Multiplies the freshly initialized weights by `factor`.
    pub fn scaled<T: Real>(self, store: &mut ParamStore<T>, factor: f64) -> Self {
        for w in store.get_mut(self.weight).data_mut() {
            *w = *w * T::lit(factor);
        }
        self
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        spec: Conv2dSpec,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let groups = spec.groups.max(1);
        assert!(
            in_ch % groups == 0 && out_ch % groups == 0,
            "{name}: channels {in_ch}->{out_ch} not divisible by {groups} groups"
        );
        let fan_in = in_ch / groups * kernel * kernel;
        let w = Tensor::randn(&[out_ch, in_ch / groups, kernel, kernel], kaiming_std(fan_in), rng);
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Conv2d {
            weight,
            bias,
            spec: Conv2dSpec { groups, ..spec },
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.conv2d(p.param(self.weight), self.bias.map(|b| p.param(b)), self.spec)
    }

    pub fn out_hw(&self, (h, w): (usize, usize)) -> (usize, usize) {
        let o = |n: usize| (n + 2 * self.spec.padding - self.kernel) / self.spec.stride + 1;
        (o(h), o(w))
    }

    pub fn describe(&self, name: &str, in_hw: (usize, usize)) -> LayerDesc {
        let (h, w) = self.out_hw(in_hw);
        LayerDesc {
            name: name.to_string(),
            kind: LayerKind::Conv {
                in_ch: self.in_ch,
                out_ch: self.out_ch,
                kernel: vec![self.kernel, self.kernel],
                groups: self.spec.groups,
            },
            output: vec![self.out_ch, h, w],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv3dSpec,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv3d {
    /// Multiplies the freshly initialized weights by `factor`.
    pub fn scaled<T: Real>(self, store: &mut ParamStore<T>, factor: f64) -> Self {
        for w in store.get_mut(self.weight).data_mut() {
            *w = *w * T::lit(factor);
        }
        self
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel.pow(3);
        let w = Tensor::randn(&[out_ch, in_ch, kernel, kernel, kernel], kaiming_std(fan_in), rng);
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Conv3d {
            weight,
            bias,
            spec: Conv3dSpec {
                stride: [stride; 3],
                padding: [kernel / 2; 3],
            },
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.conv3d(p.param(self.weight), self.bias.map(|b| p.param(b)), self.spec)
    }

    pub fn out_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for i in 0..3 {
            out[i] = (dims[i] + 2 * self.spec.padding[i] - self.kernel) / self.spec.stride[i] + 1;
        }
        out
    }

    pub fn describe(&self, name: &str, dims: [usize; 3]) -> LayerDesc {
        let [d, h, w] = self.out_dims(dims);
        LayerDesc {
            name: name.to_string(),
            kind: LayerKind::Conv {
                in_ch: self.in_ch,
                out_ch: self.out_ch,
                kernel: vec![self.kernel; 3],
                groups: 1,
            },
            output: vec![self.out_ch, d, h, w],
        }
    }
}

/// Learned per-channel scale and shift. Touches no cross-channel statistics.
#[derive(Clone, Debug)]
pub struct ChannelAffine {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl ChannelAffine {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        ChannelAffine {
            scale: store.add(format!("{name}.scale"), Tensor::full(&[channels], T::one())),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward<'t, T: Real>(&self, p: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.channel_affine(p.param(self.scale), p.param(self.shift))
    }
}

