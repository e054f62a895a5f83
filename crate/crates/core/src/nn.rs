//! Parameters, layers and the Adam optimizer.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvSpec, Gradients, Graph, Var};
use crate::tensor::Tensor;

/// Named trainable arrays, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// Parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.params.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect()
    }

    /// Registers every parameter on the graph. Those accepted by `trainable`
    /// become gradient leaves, the rest constants.
    pub fn bind(&self, g: &Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable(k) {
                    g.param(v.clone())
                } else {
                    g.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    /// Collects the gradient of every bound parameter that received one.
    pub fn gradients(&self, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(k, &v)| grads.take(v).map(|g| (k.clone(), g)))
            .collect()
    }
}

/// Stable 64-bit FNV-1a, used to derive per-tensor seeds from names.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn seeded_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label.as_bytes()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    Leaky(f64),
    Identity,
}

impl Activation {
    pub fn apply(self, g: &Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Leaky(s) => g.leaky_relu(x, s),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub spec: ConvSpec,
}

impl Conv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: [usize; 3], stride: [usize; 3]) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel,
            spec: ConvSpec::strided(kernel, stride),
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        [self.cout, self.cin, self.kernel[0], self.kernel[1], self.kernel[2]]
    }

    /// Kaiming-uniform weights scaled by `gain`, zero bias.
    pub fn init(&self, store: &mut ParamStore, seed: u64, gain: f64) {
        let shape = self.weight_shape();
        let fan_in = (self.cin * self.kernel.iter().product::<usize>()) as f64;
        let bound = gain * (6.0 / fan_in).sqrt();
        let mut rng = seeded_rng(seed, &self.weight_name());
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        store.insert(self.weight_name(), Tensor::new(shape.to_vec(), data).expect("init"));
        store.insert(self.bias_name(), Tensor::zeros(&[self.cout]));
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: Var) -> Var {
        g.conv3d(x, p.var(&self.weight_name()), Some(p.var(&self.bias_name())), self.spec)
    }

    /// Convolution with the weight multiplied by a constant 0/1 mask.
    pub fn forward_masked(&self, g: &Graph, p: &Bound, x: Var, mask: &Tensor) -> Var {
        let w = g.mul_const(p.var(&self.weight_name()), mask);
        g.conv3d(x, w, Some(p.var(&self.bias_name())), self.spec)
    }
}

/// `act(x + conv_b(act(conv_a(x))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub a: Conv,
    pub b: Conv,
    pub act: Activation,
}

impl ResBlock {
    pub fn new(name: &str, channels: usize, kernel: [usize; 3], act: Activation) -> Self {
        Self {
            a: Conv::new(format!("{name}.a"), channels, channels, kernel, [1, 1, 1]),
            b: Conv::new(format!("{name}.b"), channels, channels, kernel, [1, 1, 1]),
            act,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        self.a.init(store, seed, 1.0);
        // Start close to identity.
        self.b.init(store, seed, 0.1);
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: Var) -> Var {
        let h = self.act.apply(g, self.a.forward(g, p, x));
        let h = self.b.forward(g, p, h);
        self.act.apply(g, g.add(x, h))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamSlot {
    pub m: Tensor,
    pub v: Tensor,
    pub steps: u64,
}

/// Adam with per-parameter step counters, so parameters updated on
/// different schedules (discriminator vs codec) get correct bias correction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub slots: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn step(&mut self, config: &AdamConfig, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        for (name, grad) in grads {
            let Some(param) = params.get_mut(name) else {
                continue;
            };
            let slot = self.slots.entry(name.clone()).or_insert_with(|| AdamSlot {
                m: Tensor::zeros(grad.shape()),
                v: Tensor::zeros(grad.shape()),
                steps: 0,
            });
            slot.steps += 1;
            let bc1 = 1.0 - config.beta1.powi(slot.steps as i32);
            let bc2 = 1.0 - config.beta2.powi(slot.steps as i32);
            let m = slot.m.data_mut();
            let v = slot.v.data_mut();
            for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= config.lr * mhat / (vhat.sqrt() + config.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut adam = Adam::default();
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        for _ in 0..500 {
            let g = Graph::new();
            let p = store.bind(&g, |_| true);
            let loss = g.sum(g.square(p.var("x")));
            let mut grads = g.backward(loss);
            adam.step(&cfg, &mut store, &p.gradients(&mut grads));
        }
        assert!(store.get("x").unwrap().max_abs() < 1e-2);
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::scalar(1.0));
        store.insert("b", Tensor::scalar(2.0));
        let g = Graph::new();
        let p = store.bind(&g, |n| n == "a");
        let loss = g.mul(p.var("a"), p.var("b"));
        let mut grads = g.backward(loss);
        let named = p.gradients(&mut grads);
        assert_eq!(named.len(), 1);
        assert_eq!(named["a"].item(), 2.0);
    }
}
