//! JSON checkpoints. Floats are written in shortest round-trip form and read
//! back with correctly rounded parsing, so save → load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BatchNorm, Block, Linear, NetworkSpec, ResidualNet};
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::stochastic::Regime;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnStateRecord {
    pub block: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// How the checkpointed network was trained; used to warn about
/// mismatched evaluation regimes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub regime: Regime,
    pub q_final: f64,
    pub dropout_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: NetworkSpec,
    pub params: Vec<TensorRecord>,
    pub bn_state: Vec<BnStateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingMeta>,
}

impl Checkpoint {
    pub fn from_net(net: &ResidualNet) -> Self {
        let params = net
            .param_layout()
            .into_iter()
            .zip(net.param_slices())
            .map(|((name, shape), data)| TensorRecord {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        let bn_state = net
            .blocks
            .iter()
            .enumerate()
            .filter_map(|(l, b)| {
                b.bn.as_ref().map(|bn| BnStateRecord {
                    block: l,
                    running_mean: bn.running_mean.clone(),
                    running_var: bn.running_var.clone(),
                    eps: bn.eps,
                    momentum: bn.momentum,
                })
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec: *net.spec(),
            params,
            bn_state,
            standardizer: None,
            training: None,
        }
    }

    pub fn with_standardizer(mut self, s: Standardizer) -> Self {
        self.standardizer = Some(s);
        self
    }

    pub fn with_training(mut self, meta: TrainingMeta) -> Self {
        self.training = Some(meta);
        self
    }

    /// Rebuilds the network, checking every tensor name and shape.
    pub fn to_net(&self) -> Result<ResidualNet> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        let spec = self.spec;
        spec.validate()?;
        let h = spec.hidden_dim;
        let blocks = (0..spec.num_blocks)
            .map(|_| Block {
                fc1: Linear::zeros(h, h),
                bn: spec.use_batchnorm.then(|| BatchNorm::new(h)),
                fc2: Linear::zeros(h, h),
            })
            .collect();
        let mut net = ResidualNet::from_parts(
            spec,
            Linear::zeros(spec.input_dim, h),
            blocks,
            Linear::zeros(h, spec.num_classes),
        )?;

        let layout = net.param_layout();
        if layout.len() != self.params.len() {
            return Err(Error::shape(format!(
                "checkpoint has {} tensors, spec needs {}",
                self.params.len(),
                layout.len()
            )));
        }
        for ((name, shape), rec) in layout.iter().zip(&self.params) {
            if *name != rec.name || *shape != rec.shape || rec.data.len() != shape[0] * shape[1] {
                return Err(Error::shape(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    rec.name, rec.shape
                )));
            }
            if rec.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("tensor {name} has non-finite values")));
            }
        }
        for (dst, rec) in net.params_mut().into_iter().zip(&self.params) {
            dst.copy_from_slice(&rec.data);
        }

        let expected_bn = if spec.use_batchnorm { spec.num_blocks } else { 0 };
        if self.bn_state.len() != expected_bn {
            return Err(Error::shape(format!(
                "checkpoint has {} batch-norm states, spec needs {expected_bn}",
                self.bn_state.len()
            )));
        }
        for rec in &self.bn_state {
            let bn = net
                .blocks
                .get_mut(rec.block)
                .and_then(|b| b.bn.as_mut())
                .ok_or_else(|| Error::shape(format!("no batch norm in block {}", rec.block)))?;
            if rec.running_mean.len() != h || rec.running_var.len() != h {
                return Err(Error::shape(format!("batch-norm state of block {} has wrong width", rec.block)));
            }
            if rec.running_var.iter().any(|v| !(v.is_finite() && *v >= 0.0))
                || rec.running_mean.iter().any(|v| !v.is_finite())
            {
                return Err(Error::invalid("batch-norm running statistics must be finite"));
            }
            bn.running_mean.clone_from(&rec.running_mean);
            bn.running_var.clone_from(&rec.running_var);
            bn.eps = rec.eps;
            bn.momentum = rec.momentum;
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}

/// Checks that a standardizer matches the network input width.
pub(crate) fn check_standardizer(s: &Standardizer, spec: &NetworkSpec) -> Result<()> {
    if s.mean.len() != spec.input_dim || s.std.len() != spec.input_dim {
        return Err(Error::shape("standardizer width does not match network input"));
    }
    Ok(())
}

impl Checkpoint {
    /// Applies the stored standardizer (if any) to raw features.
    pub fn prepare_inputs(&self, x: &Matrix) -> Result<Matrix> {
        match &self.standardizer {
            Some(s) => {
                check_standardizer(s, &self.spec)?;
                s.apply(x)
            }
            None => Ok(x.clone()),
        }
    }
}
