//! Parameter bookkeeping shared by the image and text models.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vision::freeze::{FreezePlan, GroupInfo, GroupRole};

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub var: Var,
}

/// A named run of parameters that is frozen or trained as a unit.
#[derive(Clone, Debug)]
pub struct ParamGroup {
    pub name: String,
    pub role: GroupRole,
    pub params: Vec<Param>,
    pub frozen: bool,
}

impl ParamGroup {
    pub fn new(name: &str, role: GroupRole, params: Vec<(&str, Tensor)>) -> Result<Self> {
        Ok(ParamGroup {
            name: name.to_string(),
            role,
            params: params
                .into_iter()
                .map(|(n, t)| {
                    Ok(Param {
                        name: format!("{name}.{n}"),
                        var: Var::from_tensor(&t)?,
                    })
                })
                .collect::<Result<_>>()?,
            frozen: false,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.var.elem_count()).sum()
    }

    /// The i-th tensor, detached from the graph when the group is frozen.
    pub fn tensor(&self, i: usize) -> Tensor {
        let var = &self.params[i].var;
        if self.frozen {
            var.as_detached_tensor()
        } else {
            var.as_tensor().clone()
        }
    }

    pub fn info(&self) -> GroupInfo {
        GroupInfo {
            name: self.name.clone(),
            params: self.param_count(),
            role: self.role,
        }
    }
}

pub fn group_infos(groups: &[ParamGroup]) -> Vec<GroupInfo> {
    groups.iter().map(ParamGroup::info).collect()
}

pub fn apply_plan(groups: &mut [ParamGroup], plan: &FreezePlan) -> Result<()> {
    if plan.frozen.len() != groups.len() {
        return Err(Error::InvalidInput("freeze plan does not match model groups".into()));
    }
    for (g, &f) in groups.iter_mut().zip(&plan.frozen) {
        g.frozen = f;
    }
    Ok(())
}

pub fn trainable_vars(groups: &[ParamGroup]) -> Vec<Var> {
    groups
        .iter()
        .filter(|g| !g.frozen)
        .flat_map(|g| g.params.iter().map(|p| p.var.clone()))
        .collect()
}

/// Deep copies of every parameter, keyed by name.
pub fn snapshot(groups: &[ParamGroup]) -> Result<HashMap<String, Tensor>> {
    let mut out = HashMap::new();
    for g in groups {
        for p in &g.params {
            out.insert(p.name.clone(), p.var.as_tensor().copy()?);
        }
    }
    Ok(out)
}

/// Overwrites parameters from `tensors`. Names absent from the map are
/// left alone unless `require_all` is set.
pub fn restore(groups: &[ParamGroup], tensors: &HashMap<String, Tensor>, require_all: bool) -> Result<()> {
    for g in groups {
        for p in &g.params {
            match tensors.get(&p.name) {
                Some(t) => {
                    if t.dims() != p.var.dims() {
                        return Err(Error::InvalidInput(format!(
                            "shape mismatch for {}: {:?} vs {:?}",
                            p.name,
                            t.dims(),
                            p.var.dims()
                        )));
                    }
                    p.var.set(t)?;
                }
                None if require_all => {
                    return Err(Error::InvalidInput(format!("missing tensor {}", p.name)));
                }
                None => {}
            }
        }
    }
    Ok(())
}

pub fn save_tensors(path: &Path, tensors: &HashMap<String, Tensor>) -> Result<()> {
    candle_core::safetensors::save(tensors, path)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<HashMap<String, Tensor>> {
    Ok(candle_core::safetensors::load(path, &Device::Cpu)?)
}

/// Uniform `[-bound, bound]` tensor from a seeded generator.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f32) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?)
}

pub fn zeros(shape: &[usize]) -> Result<Tensor> {
    Ok(Tensor::zeros(shape, candle_core::DType::F32, &Device::Cpu)?)
}

/// Row-wise softmax of a `(batch, classes)` logit tensor, as f64 rows.
pub fn softmax_rows(logits: &Tensor) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f32>> = logits.to_vec2()?;
    Ok(rows
        .into_iter()
        .map(|row| {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = row.iter().map(|&v| f64::from(v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::new(&[[1f32, 2.0, 3.0], [0.0, 0.0, 0.0]], &Device::Cpu).unwrap();
        for row in softmax_rows(&t).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
