//! Named parameter store with seeded initialization and checkpoint I/O.

use crate::{Error, Result};
use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::path::Path;

/// Ordered map of named trainable variables.
///
/// All parameter creation goes through this store so that initialization is
/// driven by an explicit RNG (reproducible across runs) and so the trainable
/// set of a training stage is exactly the contents of one store.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    device: Device,
    dtype: DType,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self { vars: BTreeMap::new(), device: Device::Cpu, dtype }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn register(&mut self, name: &str, var: Var) -> Var {
        assert!(
            self.vars.insert(name.to_string(), var.clone()).is_none(),
            "duplicate parameter name {name}"
        );
        var
    }

    /// Gaussian-initialized parameter.
    pub fn randn(
        &mut self,
        name: &str,
        dims: &[usize],
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Var {
        let normal = Normal::new(0.0, std).expect("valid std");
        let count: usize = dims.iter().product();
        let data: Vec<f64> = (0..count).map(|_| normal.sample(rng)).collect();
        let t = Tensor::from_vec(data, dims, &self.device)
            .and_then(|t| t.to_dtype(self.dtype))
            .expect("tensor from init data");
        self.register(name, Var::from_tensor(&t).expect("var"))
    }

    /// Uniform(-bound, bound) initialized parameter (Kaiming-style for linear
    /// layers when `bound = 1/sqrt(fan_in)`).
    pub fn uniform(
        &mut self,
        name: &str,
        dims: &[usize],
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Var {
        let count: usize = dims.iter().product();
        let data: Vec<f64> = (0..count).map(|_| rng.random_range(-bound..bound)).collect();
        let t = Tensor::from_vec(data, dims, &self.device)
            .and_then(|t| t.to_dtype(self.dtype))
            .expect("tensor from init data");
        self.register(name, Var::from_tensor(&t).expect("var"))
    }

    pub fn zeros(&mut self, name: &str, dims: &[usize]) -> Var {
        let t = Tensor::zeros(dims, self.dtype, &self.device).expect("zeros");
        self.register(name, Var::from_tensor(&t).expect("var"))
    }

    pub fn ones(&mut self, name: &str, dims: &[usize]) -> Var {
        let t = Tensor::ones(dims, self.dtype, &self.device).expect("ones");
        self.register(name, Var::from_tensor(&t).expect("var"))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// All variables in deterministic (name-sorted) order.
    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Flat snapshot of every parameter, for bitwise change audits.
    pub fn snapshot(&self) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let flat = v
                    .flatten_all()
                    .and_then(|t| t.to_dtype(DType::F64))
                    .and_then(|t| t.to_vec1::<f64>())
                    .expect("snapshot");
                (k.clone(), flat)
            })
            .collect()
    }

    /// Restore parameters from a [`ParamStore::snapshot`]; names must match.
    pub fn restore(&self, snapshot: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (name, var) in &self.vars {
            let flat = snapshot.get(name).ok_or_else(|| {
                Error::Data(format!("snapshot is missing parameter {name}"))
            })?;
            let t = Tensor::from_vec(flat.clone(), var.dims(), &self.device)?
                .to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: std::collections::HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors, path)?;
        Ok(())
    }

    /// Load a checkpoint into the already-constructed parameter set.
    ///
    /// Shapes must match; missing or extra tensors are an error so that a
    /// checkpoint/config mismatch is caught immediately.
    pub fn load(&self, path: &Path) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, &self.device)?;
        if tensors.len() != self.vars.len() {
            return Err(Error::Data(format!(
                "{}: checkpoint has {} tensors, model has {}",
                path.display(),
                tensors.len(),
                self.vars.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = tensors.get(name).ok_or_else(|| {
                Error::Data(format!("{}: missing tensor {name}", path.display()))
            })?;
            if t.dims() != var.dims() {
                return Err(Error::Data(format!(
                    "{}: tensor {name} has shape {:?}, expected {:?}",
                    path.display(),
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}
