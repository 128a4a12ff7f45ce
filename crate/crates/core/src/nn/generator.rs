use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu, relu_backward, tanh_backward, ConvTranspose2d, Dense};
use super::{NetConfig, ParamGrads, Parameterized};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Latent vector → image. A dense projection to the bottom feature map
/// followed by `layers` transposed convolutions; ReLU between layers and a
/// `tanh` output so every pixel lies in [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    config: NetConfig,
    project: Dense,
    deconvs: Vec<ConvTranspose2d>,
}

/// Activations retained from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct GenTrace {
    z: Vec<f64>,
    /// Pre-activations: projection, then each transposed convolution.
    pre: Vec<Tensor>,
    /// Post-activation inputs to each transposed convolution.
    inputs: Vec<Tensor>,
    output: Tensor,
}

impl GenTrace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn into_output(self) -> Tensor {
        self.output
    }
}

impl Generator {
    pub fn new(config: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let s0 = config.bottom_size();
        let top = config.top_channels();
        let gain = 2f64.sqrt();
        let project = Dense::new(config.latent_dim, top * s0 * s0, gain, rng);
        let deconvs = (0..config.layers)
            .map(|i| {
                let cin = config.base_width << (config.layers - 1 - i);
                let last = i + 1 == config.layers;
                let cout = if last {
                    config.channels
                } else {
                    config.base_width << (config.layers - 2 - i)
                };
                ConvTranspose2d::new(cin, cout, if last { 1.0 } else { gain }, rng)
            })
            .collect();
        Ok(Self {
            config,
            project,
            deconvs,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Checks that deserialized parameters agree with the architecture.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let s0 = c.bottom_size();
        let mut ok = self.project.is_consistent()
            && self.project.inputs == c.latent_dim
            && self.project.outputs == c.top_channels() * s0 * s0
            && self.deconvs.len() == c.layers;
        for (i, dc) in self.deconvs.iter().enumerate() {
            let cin = c.base_width << (c.layers - 1 - i);
            let cout = if i + 1 == c.layers { c.channels } else { c.base_width << (c.layers - 2 - i) };
            ok &= dc.is_consistent() && dc.in_channels == cin && dc.out_channels == cout;
        }
        if ok {
            Ok(())
        } else {
            Err(shape_err("generator parameters do not match its configuration"))
        }
    }

    pub fn forward(&self, z: &[f64]) -> Result<Tensor> {
        Ok(self.forward_trace(z)?.output)
    }

    pub fn forward_trace(&self, z: &[f64]) -> Result<GenTrace> {
        if z.len() != self.config.latent_dim {
            return Err(shape_err(format!(
                "latent vector has {} components, generator expects {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        let s0 = self.config.bottom_size();
        let top = self.config.top_channels();
        let projected = Tensor::from_vec(top, s0, s0, self.project.forward(z)?)?;
        let mut pre = Vec::with_capacity(self.deconvs.len() + 1);
        let mut inputs = Vec::with_capacity(self.deconvs.len());
        let mut h = relu(&projected);
        pre.push(projected);
        let mut output = None;
        for (i, dc) in self.deconvs.iter().enumerate() {
            let y = dc.forward(&h)?;
            inputs.push(h);
            if i + 1 == self.deconvs.len() {
                output = Some(y.map(f64::tanh));
                pre.push(y);
                h = Tensor::zeros(0, 0, 0);
            } else {
                h = relu(&y);
                pre.push(y);
            }
        }
        Ok(GenTrace {
            z: z.to_vec(),
            pre,
            inputs,
            output: output.expect("at least one layer"),
        })
    }

    /// Backpropagates `grad_output` (dL/d image) and returns dL/dz.
    /// Parameter gradients are accumulated into `grads` when given.
    pub fn backward(&self, trace: &GenTrace, grad_output: &Tensor, mut grads: Option<&mut ParamGrads>) -> Vec<f64> {
        let mut g = grad_output.clone();
        tanh_backward(&trace.output, &mut g);
        for i in (0..self.deconvs.len()).rev() {
            let layer_grads = grads.as_deref_mut().map(|pg| pg.layer(i + 1));
            let gi = self.deconvs[i]
                .backward(&trace.inputs[i], &g, true, layer_grads)
                .expect("input gradient requested");
            g = gi;
            relu_backward(&trace.pre[i], &mut g);
        }
        let layer_grads = grads.map(|pg| pg.layer(0));
        self.project.backward(&trace.z, g.data(), layer_grads)
    }
}

impl Parameterized for Generator {
    fn param_buffers(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.project.weight, &self.project.bias];
        for dc in &self.deconvs {
            v.push(&dc.weight);
            v.push(&dc.bias);
        }
        v
    }

    fn param_buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.project.weight, &mut self.project.bias];
        for dc in &mut self.deconvs {
            v.push(&mut dc.weight);
            v.push(&mut dc.bias);
        }
        v
    }
}
