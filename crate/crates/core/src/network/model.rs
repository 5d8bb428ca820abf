use std::collections::BTreeMap;

use super::{GmmParams, ModelConfig, ModelWeights};
use crate::autodiff::{Graph, Tensor, TensorError, Var};

/// Mixture parameters as graph values, each `[B, K·C, h, w]` with component
/// `k` of channel `c` at channel index `k·C + c`.
#[derive(Debug, Clone, Copy)]
pub struct GmmVars<'g> {
    pub weights: Var<'g>,
    pub means: Var<'g>,
    pub scales: Var<'g>,
}

impl<'g> GmmVars<'g> {
    pub fn to_params(&self, k: usize) -> GmmParams {
        GmmParams::new(
            k,
            (*self.weights.value()).clone(),
            (*self.means.value()).clone(),
            (*self.scales.value()).clone(),
        )
    }

    /// Per-element mixture mean `Σ_k w_k μ_k`, shape `[B, C, h, w]`.
    pub fn mixture_mean(&self, k: usize) -> Result<Var<'g>, TensorError> {
        let weighted = self.weights.mul(&self.means)?;
        let c = weighted.shape()[1] / k;
        let mut acc = weighted.slice_channels(0, c)?;
        for kk in 1..k {
            acc = acc.add(&weighted.slice_channels(kk * c, c)?)?;
        }
        Ok(acc)
    }
}

/// Model weights bound into a [`Graph`], with the forward transforms.
pub struct Network<'g> {
    graph: &'g Graph,
    config: ModelConfig,
    vars: BTreeMap<String, Var<'g>>,
}

impl<'g> Network<'g> {
    /// Binds `weights` into `graph`, as gradient-carrying leaves when
    /// `trainable`.
    pub fn bind(graph: &'g Graph, weights: &ModelWeights, trainable: bool) -> Self {
        let vars = weights
            .params()
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Self {
            graph,
            config: weights.config().clone(),
            vars,
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Leaf variables by key, for reading gradients after backward.
    pub fn vars(&self) -> &BTreeMap<String, Var<'g>> {
        &self.vars
    }

    /// Rebinds `key` to another variable of the same shape.
    pub fn override_var(&mut self, key: &str, var: Var<'g>) {
        let slot = self
            .vars
            .get_mut(key)
            .unwrap_or_else(|| panic!("weight {key} not present for this config"));
        assert_eq!(slot.shape(), var.shape(), "override of {key} changes its shape");
        *slot = var;
    }

    pub fn var(&self, key: &str) -> Var<'g> {
        *self
            .vars
            .get(key)
            .unwrap_or_else(|| panic!("weight {key} not present for this config"))
    }

    fn conv(&self, x: &Var<'g>, prefix: &str, stride: usize, pad: usize) -> Result<Var<'g>, TensorError> {
        let w = self.var(&format!("{prefix}.weight"));
        let b = self.var(&format!("{prefix}.bias"));
        x.conv2d(&w, Some(&b), stride, pad)
    }

    fn up(&self, x: &Var<'g>, prefix: &str) -> Result<Var<'g>, TensorError> {
        let w = self.var(&format!("{prefix}.weight"));
        let b = self.var(&format!("{prefix}.bias"));
        x.conv_transpose2d(&w, Some(&b), 2, 1)
    }

    fn resblock(&self, x: &Var<'g>, prefix: &str) -> Result<Var<'g>, TensorError> {
        let h = self.conv(x, &format!("{prefix}.conv1"), 1, 1)?.leaky_relu();
        let h = self.conv(&h, &format!("{prefix}.conv2"), 1, 1)?;
        x.add(&h)
    }

    /// `t + trunk(t) ⊙ sigmoid(mask(t))`.
    pub fn attention(&self, t: &Var<'g>, prefix: &str) -> Result<Var<'g>, TensorError> {
        let mut trunk = *t;
        let mut mask = *t;
        for i in 0..3 {
            trunk = self.resblock(&trunk, &format!("{prefix}.trunk.res{i}"))?;
            mask = self.resblock(&mask, &format!("{prefix}.mask.res{i}"))?;
        }
        let trunk = self.conv(&trunk, &format!("{prefix}.trunk.out"), 1, 0)?;
        let gate = self.conv(&mask, &format!("{prefix}.mask.out"), 1, 0)?.sigmoid();
        t.add(&trunk.mul(&gate)?)
    }

    fn check_divisible(&self, x: &Var<'g>, op: &'static str, factor: usize) -> Result<(), TensorError> {
        let shape = x.shape();
        if shape.len() != 4
            || !shape[2].is_multiple_of(factor)
            || !shape[3].is_multiple_of(factor)
            || shape[2] == 0
            || shape[3] == 0
        {
            return Err(TensorError::Shape {
                op,
                detail: format!("spatial size of {shape:?} must be a nonzero multiple of {factor}; pad first"),
            });
        }
        Ok(())
    }

    /// Normalized image `[B, 3, H, W]` to latent `y` `[B, N, H/d, W/d]`.
    pub fn analysis(&self, x: &Var<'g>) -> Result<Var<'g>, TensorError> {
        self.check_divisible(x, "analysis", self.config.pad_multiple())?;
        let stages = self.config.down_stages();
        let mut h = *x;
        for i in 0..stages {
            h = self.conv(&h, &format!("analysis.down{i}"), 2, 2)?.leaky_relu();
            if i + 1 < stages {
                h = self.resblock(&h, &format!("analysis.res{i}"))?;
            }
        }
        if self.config.use_attention {
            h = self.attention(&h, "analysis.attn")?;
        }
        self.conv(&h, "analysis.out", 1, 1)
    }

    pub fn hyper_analysis(&self, y: &Var<'g>) -> Result<Var<'g>, TensorError> {
        self.check_divisible(y, "hyper_analysis", self.config.hyper_downsample)?;
        let stages = self.config.hyper_stages();
        let mut h = self.conv(y, "hyper_analysis.in", 1, 1)?.leaky_relu();
        for i in 0..stages {
            h = self.conv(&h, &format!("hyper_analysis.down{i}"), 2, 2)?;
            if i + 1 < stages {
                h = h.leaky_relu();
            }
        }
        Ok(h)
    }

    /// Quantized hyper-latent to `2N` hyper features at the latent's size.
    pub fn hyper_synthesis(&self, z_hat: &Var<'g>) -> Result<Var<'g>, TensorError> {
        let mut h = *z_hat;
        for i in 0..self.config.hyper_stages() {
            h = self.up(&h, &format!("hyper_synthesis.up{i}"))?.leaky_relu();
        }
        self.conv(&h, "hyper_synthesis.out", 1, 1)
    }

    /// Quantized latent to `N` pixel features at the padded image size.
    pub fn synthesis(&self, y_hat: &Var<'g>) -> Result<Var<'g>, TensorError> {
        let mut h = self.conv(y_hat, "synthesis.in", 1, 1)?.leaky_relu();
        if self.config.use_attention {
            h = self.attention(&h, "synthesis.attn")?;
        }
        let stages = self.config.down_stages();
        for i in 0..stages {
            h = self.up(&h, &format!("synthesis.up{i}"))?.leaky_relu();
            if i + 1 < stages {
                h = self.resblock(&h, &format!("synthesis.res{i}"))?;
            }
        }
        self.conv(&h, "synthesis.out", 1, 1)
    }

    fn zeros_like_branch(&self, reference: &Var<'g>, channels: usize) -> Var<'g> {
        let s = reference.shape();
        self.graph.constant(Tensor::zeros(&[s[0], channels, s[2], s[3]]))
    }

    fn head(&self, prefix: &str, merged: &Var<'g>, k: usize) -> Result<GmmVars<'g>, TensorError> {
        let h = self.conv(merged, &format!("{prefix}.fc1"), 1, 0)?.leaky_relu();
        let raw = self.conv(&h, &format!("{prefix}.fc2"), 1, 0)?;
        let kc = raw.shape()[1] / 3;
        Ok(GmmVars {
            weights: raw.slice_channels(0, kc)?.softmax_channel_groups(k)?,
            means: raw.slice_channels(kc, kc)?,
            scales: raw
                .slice_channels(2 * kc, kc)?
                .softplus()
                .add_scalar(self.config.scale_floor),
        })
    }

    fn check_same_size(op: &'static str, a: &Var<'g>, b: &Var<'g>) -> Result<(), TensorError> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(TensorError::Shape {
                op,
                detail: format!("branches {sa:?} and {sb:?} differ in batch or spatial size"),
            });
        }
        Ok(())
    }

    /// Mixture parameters for `ŷ` from hyper features and the causal latent
    /// context.
    pub fn params_y(&self, hyper: &Var<'g>, y_hat: &Var<'g>) -> Result<GmmVars<'g>, TensorError> {
        Self::check_same_size("params_y", hyper, y_hat)?;
        let n = self.config.filters_n;
        let ctx = if self.config.use_context_y {
            let w = self.var("context_y.weight");
            let b = self.var("context_y.bias");
            y_hat.masked_conv2d(&w, Some(&b), 5)?
        } else {
            self.zeros_like_branch(hyper, 2 * n)
        };
        let merged = Var::concat_channels(&[ctx, *hyper])?;
        self.head("params_y", &merged, self.config.mixtures_k)
    }

    /// Mixture parameters for the pixels from pixel features and the causal
    /// normalized image.
    pub fn params_x(&self, features: &Var<'g>, x: &Var<'g>) -> Result<GmmVars<'g>, TensorError> {
        Self::check_same_size("params_x", features, x)?;
        let n = self.config.filters_n;
        let ctx = if self.config.use_context_x {
            let w = self.var("context_x.weight");
            let b = self.var("context_x.bias");
            x.masked_conv2d(&w, Some(&b), self.config.mask_kernel_x)?
        } else {
            self.zeros_like_branch(features, n)
        };
        let merged = Var::concat_channels(&[ctx, *features])?;
        self.head("params_x", &merged, self.config.mixtures_k)
    }
}
