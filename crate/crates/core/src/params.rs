//! Named parameters: declaration, initialization and binding to executors.
//!
//! Model weights are declared once through [`ParamSink`]; the same
//! declaration collects specs, binds stored tensors onto a [`Tape`] or binds
//! bare shapes onto a [`ShapeTracer`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Exec, ShapeTracer, Tape, TraceVar, Var};
use crate::tensor::{numel, Tensor};

/// Initialization rule of a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation, truncated at two sigma.
    TruncNormal(f64),
    /// Transposed-convolution kernel `[C×C×k×k]` that repeats each input
    /// pixel over its `k×k` output block (nearest-neighbour upsampling).
    NearestUpsample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

pub trait ParamSink {
    type V: Copy;
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Self::V>;
}

/// Collects the declaration order without allocating values.
#[derive(Debug, Default)]
pub struct SpecCollector {
    pub specs: Vec<ParamSpec>,
}

impl ParamSink for SpecCollector {
    type V = usize;

    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<usize> {
        if self.specs.iter().any(|s| s.name == name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        });
        Ok(self.specs.len() - 1)
    }
}

/// Parameter values in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        // Box-Muller, one draw per pair.
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        let z = libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2);
        if libm::fabs(z) <= 2.0 {
            return z * std;
        }
    }
}

impl ParamStore {
    pub fn from_specs(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in specs {
            let t = match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::full(&spec.shape, 1.0),
                Init::TruncNormal(std) => Tensor::from_fn(&spec.shape, |_| trunc_normal(&mut rng, std)),
                Init::NearestUpsample => {
                    let &[ci, co, k, k2] = &spec.shape[..] else {
                        return Err(Error::config(format!("{}: upsample kernel must be rank 4", spec.name)));
                    };
                    if ci != co || k != k2 {
                        return Err(Error::config(format!(
                            "{}: upsample kernel must be [C×C×k×k]",
                            spec.name
                        )));
                    }
                    Tensor::from_fn(&spec.shape, |i| if i / (k * k) % (co + 1) == 0 { 1.0 } else { 0.0 })
                }
            };
            names.push(spec.name.clone());
            tensors.push(t);
        }
        Ok(ParamStore { names, tensors })
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::config("parameter names and tensors differ in count"));
        }
        Ok(ParamStore { names, tensors })
    }

    /// Checks names and shapes against a declaration.
    pub fn matches(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.tensors.len() {
            return Err(Error::config(format!(
                "expected {} parameters, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(self.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::config(format!(
                    "parameter {name} {:?} does not match declared {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Binds stored values onto a tape, as gradient-tracked leaves or as
/// constants.
pub struct TapeBinder<'a> {
    tape: &'a mut Tape,
    store: &'a ParamStore,
    trainable: bool,
    vars: Vec<Var>,
}

impl<'a> TapeBinder<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, trainable: bool) -> Self {
        TapeBinder {
            tape,
            store,
            trainable,
            vars: Vec::with_capacity(store.len()),
        }
    }

    /// Bound handles in declaration order; errors if some stored parameters
    /// were never declared.
    pub fn finish(self) -> Result<Vec<Var>> {
        if self.vars.len() != self.store.len() {
            return Err(Error::config(format!(
                "declared {} parameters but the store holds {}",
                self.vars.len(),
                self.store.len()
            )));
        }
        Ok(self.vars)
    }
}

impl ParamSink for TapeBinder<'_> {
    type V = Var;

    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Var> {
        let i = self.vars.len();
        let (Some(stored_name), Some(t)) = (self.store.names.get(i), self.store.tensors.get(i)) else {
            return Err(Error::config(format!("parameter {name} missing from store")));
        };
        if stored_name != name || t.shape() != shape {
            return Err(Error::config(format!(
                "stored parameter {stored_name} {:?} does not match declared {name} {shape:?}",
                t.shape()
            )));
        }
        let v = if self.trainable {
            self.tape.leaf(t.clone())
        } else {
            self.tape.constant(t.clone())
        };
        self.vars.push(v);
        Ok(v)
    }
}

/// Hands out existing handles in declaration order, for callers that created
/// the parameter leaves themselves (gradient checks).
pub struct VarList<'a> {
    vars: &'a [Var],
    next: usize,
}

impl<'a> VarList<'a> {
    pub fn new(vars: &'a [Var]) -> Self {
        VarList { vars, next: 0 }
    }

    /// Number of handles consumed so far.
    pub fn consumed(&self) -> usize {
        self.next
    }
}

impl ParamSink for VarList<'_> {
    type V = Var;

    fn param(&mut self, name: &str, _shape: &[usize], _init: Init) -> Result<Var> {
        let v = self
            .vars
            .get(self.next)
            .copied()
            .ok_or_else(|| Error::config(format!("no handle left for parameter {name}")))?;
        self.next += 1;
        Ok(v)
    }
}

/// Binds declared shapes onto a tracer.
pub struct TraceBinder<'a> {
    pub tracer: &'a mut ShapeTracer,
    pub scalars: usize,
}

impl ParamSink for TraceBinder<'_> {
    type V = TraceVar;

    fn param(&mut self, _name: &str, shape: &[usize], _init: Init) -> Result<TraceVar> {
        self.scalars += numel(shape);
        Ok(self.tracer.input(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn nearest_upsample_kernel_is_channel_identity() {
        let spec = ParamSpec {
            name: "up".into(),
            shape: vec![3, 3, 2, 2],
            init: Init::NearestUpsample,
        };
        let store = ParamStore::from_specs(&[spec], 0).unwrap();
        let w = &store.tensors()[0];
        for ci in 0..3 {
            for co in 0..3 {
                let expect = if ci == co { 1.0 } else { 0.0 };
                for k in 0..4 {
                    assert_eq!(w.at(&[ci, co, k / 2, k % 2]), expect);
                }
            }
        }
    }

    #[test]
    fn trunc_normal_is_bounded_and_seeded() {
        let spec = ParamSpec {
            name: "w".into(),
            shape: vec![1000],
            init: Init::TruncNormal(0.02),
        };
        let a = ParamStore::from_specs(std::slice::from_ref(&spec), 7).unwrap();
        let b = ParamStore::from_specs(&[spec], 7).unwrap();
        assert_eq!(a, b);
        let t = &a.tensors()[0];
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
        let mean = t.sum() / 1000.0;
        assert!(mean.abs() < 0.003, "{mean}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut c = SpecCollector::default();
        c.param("a", &[1], Init::Zeros).unwrap();
        assert!(c.param("a", &[1], Init::Zeros).is_err());
    }
}
