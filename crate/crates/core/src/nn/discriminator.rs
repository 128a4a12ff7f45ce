use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{leaky_relu, leaky_relu_backward, softmax, Conv2d, Dense};
use super::{NetConfig, ParamGrads, Parameterized};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Image → two-class softmax (`[real, fake]`). A stack of strided
/// convolutions with LeakyReLU, doubling channels per layer, and a dense
/// two-logit head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    config: NetConfig,
    convs: Vec<Conv2d>,
    head: Dense,
}

#[derive(Clone, Debug)]
pub struct DiscTrace {
    /// Input of each convolution (the image first).
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    /// Post-activation of the last convolution, flattened into the head.
    last: Tensor,
    probs: [f64; 2],
}

impl DiscTrace {
    pub fn real_probability(&self) -> f64 {
        self.probs[0]
    }

    pub fn probs(&self) -> [f64; 2] {
        self.probs
    }

    /// Activation of convolution `i` (post-nonlinearity).
    pub fn activation(&self, i: usize) -> &Tensor {
        if i + 1 < self.inputs.len() {
            &self.inputs[i + 1]
        } else {
            &self.last
        }
    }
}

impl Discriminator {
    pub fn new(config: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let gain = (2.0 / (1.0 + super::layers::LEAKY_SLOPE.powi(2))).sqrt();
        let convs = (0..config.layers)
            .map(|i| {
                let cin = if i == 0 {
                    config.channels
                } else {
                    config.base_width << (i - 1)
                };
                Conv2d::new(cin, config.base_width << i, gain, rng)
            })
            .collect();
        let s0 = config.bottom_size();
        let head = Dense::new(config.top_channels() * s0 * s0, 2, 1.0, rng);
        Ok(Self { config, convs, head })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Checks that deserialized parameters agree with the architecture.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let s0 = c.bottom_size();
        let mut ok = self.convs.len() == c.layers
            && self.head.is_consistent()
            && self.head.inputs == c.top_channels() * s0 * s0
            && self.head.outputs == 2;
        for (i, conv) in self.convs.iter().enumerate() {
            let cin = if i == 0 { c.channels } else { c.base_width << (i - 1) };
            ok &= conv.is_consistent() && conv.in_channels == cin && conv.out_channels == c.base_width << i;
        }
        if ok {
            Ok(())
        } else {
            Err(shape_err("discriminator parameters do not match its configuration"))
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = self.config.image_size;
        if x.shape() != (self.config.channels, s, s) {
            return Err(shape_err(format!(
                "discriminator expects {}x{s}x{s}, got {:?}",
                self.config.channels,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<DiscTrace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for conv in &self.convs {
            let y = conv.forward(&h)?;
            inputs.push(h);
            h = leaky_relu(&y);
            pre.push(y);
        }
        let logits = self.head.forward(h.data())?;
        let p = softmax(&logits);
        Ok(DiscTrace {
            inputs,
            pre,
            last: h,
            probs: [p[0], p[1]],
        })
    }

    /// Real-class probability and the designated intermediate features.
    pub fn forward(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        let trace = self.forward_trace(x)?;
        let f = trace.activation(self.config.feature_layer()).clone();
        Ok((trace.real_probability(), f))
    }

    /// Runs only up to the feature layer. Returns (inputs, pre-activations, features).
    pub fn features_trace(&self, x: &Tensor) -> Result<(Vec<Tensor>, Vec<Tensor>, Tensor)> {
        self.check_input(x)?;
        let upto = self.config.feature_layer() + 1;
        let mut inputs = Vec::with_capacity(upto);
        let mut pre = Vec::with_capacity(upto);
        let mut h = x.clone();
        for conv in &self.convs[..upto] {
            let y = conv.forward(&h)?;
            inputs.push(h);
            h = leaky_relu(&y);
            pre.push(y);
        }
        Ok((inputs, pre, h))
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.features_trace(x)?.2)
    }

    /// dL/dx given dL/d(features) for a trace produced by `features_trace`.
    pub fn features_backward(&self, inputs: &[Tensor], pre: &[Tensor], grad_features: &Tensor) -> Tensor {
        let mut g = grad_features.clone();
        for i in (0..inputs.len()).rev() {
            leaky_relu_backward(&pre[i], &mut g);
            g = self.convs[i]
                .backward(&inputs[i], &g, true, None)
                .expect("input gradient requested");
        }
        g
    }

    /// Backpropagates dL/d(logits). Returns dL/dx when `need_input`.
    pub fn backward(
        &self,
        trace: &DiscTrace,
        grad_logits: [f64; 2],
        need_input: bool,
        mut grads: Option<&mut ParamGrads>,
    ) -> Option<Tensor> {
        let n = self.convs.len();
        let head_grads = grads.as_deref_mut().map(|pg| pg.layer(n));
        let gflat = self.head.backward(trace.last.data(), &grad_logits, head_grads);
        let (c, h, w) = trace.last.shape();
        let mut g = Tensor::from_vec(c, h, w, gflat).expect("head shape");
        for i in (0..n).rev() {
            leaky_relu_backward(&trace.pre[i], &mut g);
            let want_input = i > 0 || need_input;
            let layer_grads = grads.as_deref_mut().map(|pg| pg.layer(i));
            g = self.convs[i].backward(&trace.inputs[i], &g, want_input, layer_grads)?;
        }
        Some(g)
    }
}

impl Parameterized for Discriminator {
    fn param_buffers(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        v.push(&self.head.weight);
        v.push(&self.head.bias);
        v
    }

    fn param_buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.convs {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        v.push(&mut self.head.weight);
        v.push(&mut self.head.bias);
        v
    }
}
