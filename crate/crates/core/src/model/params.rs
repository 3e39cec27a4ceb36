//! Parameter storage with reproducible initialization.
//!
//! Every variable is drawn from its own ChaCha stream keyed by (seed, name), so
//! initial weights do not depend on construction order or on the thread RNG.

use std::path::Path;

use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::init::{FanInOut, Init, NormalOrUniform};
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone)]
pub struct SeededParams {
    varmap: VarMap,
    seed: u64,
}

impl SeededParams {
    pub fn new(seed: u64) -> Self {
        SeededParams {
            varmap: VarMap::new(),
            seed,
        }
    }

    pub fn var_builder(&self, dtype: DType, device: &Device) -> VarBuilder<'static> {
        VarBuilder::from_backend(Box::new(self.clone()), dtype, device.clone())
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    /// Trainable variables sorted by name.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().unwrap();
        let mut v: Vec<_> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub fn vars(&self) -> Vec<Var> {
        self.named_vars().into_iter().map(|(_, v)| v).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars().iter().map(|v| v.elem_count()).sum()
    }

    /// Writes all variables as one safetensors archive (JSON header of
    /// name -> dtype/shape, then raw little-endian data).
    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: Vec<(String, Tensor)> = self
            .named_vars()
            .into_iter()
            .map(|(k, v)| Ok((k, v.as_tensor().to_dtype(DType::F32)?)))
            .collect::<Result<_>>()?;
        candle_core::safetensors::save(
            &tensors.into_iter().collect::<std::collections::HashMap<_, _>>(),
            path,
        )
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Loads a checkpoint into the existing variables; names and shapes must
    /// match exactly.
    pub fn load(&self, path: &Path) -> Result<()> {
        let device = self
            .vars()
            .first()
            .map(|v| v.device().clone())
            .unwrap_or(Device::Cpu);
        let stored = candle_core::safetensors::load(path, &device)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ours = self.named_vars();
        if stored.len() != ours.len() {
            return Err(Error::Checkpoint(format!(
                "{} holds {} tensors, model has {}",
                path.display(),
                stored.len(),
                ours.len()
            )));
        }
        for (name, var) in ours {
            let t = stored.get(&name).ok_or_else(|| {
                Error::Checkpoint(format!("{} lacks tensor '{name}'", path.display()))
            })?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "'{name}' has shape {:?} in checkpoint, {:?} in model",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(var.dtype())?)?;
        }
        Ok(())
    }

    fn sample(&self, shape: &Shape, name: &str, init: Init) -> Vec<f64> {
        let n = shape.elem_count();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name));
        let (normal, a, b) = match init {
            Init::Const(v) => return vec![v; n],
            Init::Randn { mean, stdev } => (true, mean, stdev),
            Init::Uniform { lo, up } => (false, lo, up),
            Init::Kaiming {
                dist,
                fan,
                non_linearity,
            } => {
                let fan = match fan {
                    FanInOut::FanIn | FanInOut::FanOut => fan.for_shape(shape),
                };
                let std = non_linearity.gain() / (fan as f64).sqrt();
                match dist {
                    NormalOrUniform::Normal => (true, 0.0, std),
                    NormalOrUniform::Uniform => (false, -(3f64.sqrt()) * std, 3f64.sqrt() * std),
                }
            }
        };
        (0..n)
            .map(|_| {
                if normal {
                    a + b * rng.sample::<f64, _>(StandardNormal)
                } else {
                    rng.random_range(a..b)
                }
            })
            .collect()
    }
}

impl SimpleBackend for SeededParams {
    fn get(
        &self,
        s: Shape,
        name: &str,
        h: Init,
        dtype: DType,
        dev: &Device,
    ) -> candle_core::Result<Tensor> {
        let mut data = self.varmap.data().lock().unwrap();
        if let Some(v) = data.get(name) {
            if v.shape() != &s {
                candle_core::bail!("variable {name} exists with shape {:?}, requested {s:?}", v.shape());
            }
            return Ok(v.as_tensor().clone());
        }
        let values = self.sample(&s, name, h);
        let t = Tensor::from_vec(values, s, dev)?.to_dtype(dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        data.insert(name.to_string(), var);
        Ok(out)
    }

    fn get_unchecked(&self, name: &str, _dtype: DType, _dev: &Device) -> candle_core::Result<Tensor> {
        let data = self.varmap.data().lock().unwrap();
        match data.get(name) {
            Some(v) => Ok(v.as_tensor().clone()),
            None => candle_core::bail!("no variable named {name}"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.varmap.data().lock().unwrap().contains_key(name)
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_reproducible_and_name_keyed() {
        let a = SeededParams::new(3);
        let b = SeededParams::new(3);
        let va = a.var_builder(DType::F32, &Device::Cpu);
        let vb = b.var_builder(DType::F32, &Device::Cpu);
        let _ = vb.get_with_hints((4, 4), "other", candle_nn::init::DEFAULT_KAIMING_NORMAL).unwrap();
        let x = va.get_with_hints((4, 4), "w", candle_nn::init::DEFAULT_KAIMING_NORMAL).unwrap();
        let y = vb.get_with_hints((4, 4), "w", candle_nn::init::DEFAULT_KAIMING_NORMAL).unwrap();
        assert_eq!(x.to_vec2::<f32>().unwrap(), y.to_vec2::<f32>().unwrap());
        let z = va.get_with_hints((3,), "z", Init::Const(0.0)).unwrap();
        assert_eq!(z.to_vec1::<f32>().unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.safetensors");
        let a = SeededParams::new(1);
        a.var_builder(DType::F32, &Device::Cpu)
            .get_with_hints((2, 3), "w", Init::Randn { mean: 0.0, stdev: 1.0 })
            .unwrap();
        a.save(&path).unwrap();
        let b = SeededParams::new(2);
        b.var_builder(DType::F32, &Device::Cpu)
            .get_with_hints((2, 3), "w", Init::Const(0.0))
            .unwrap();
        b.load(&path).unwrap();
        let wa = a.named_vars()[0].1.as_tensor().to_vec2::<f32>().unwrap();
        let wb = b.named_vars()[0].1.as_tensor().to_vec2::<f32>().unwrap();
        assert_eq!(wa, wb);

        let c = SeededParams::new(2);
        c.var_builder(DType::F32, &Device::Cpu)
            .get_with_hints((3, 3), "w", Init::Const(0.0))
            .unwrap();
        assert!(matches!(c.load(&path), Err(Error::Checkpoint(_))));
    }
}
