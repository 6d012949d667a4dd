use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Same-padded 1-D convolution with bias.
    Conv1d { filters: usize, kernel: usize },
    BatchNorm,
    Relu,
    /// `branch(x) + shortcut(x)`. An empty branch contributes zero.
    Residual { branch: Vec<LayerSpec>, shortcut: Shortcut },
    GlobalAveragePooling,
    /// Fully connected softmax head.
    Dense { units: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shortcut {
    Identity,
    /// 1×1 convolution followed by batch norm.
    Projection { filters: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub h: usize,
    pub m: usize,
    pub layers: Vec<LayerSpec>,
}

/// Output shape after a top-level layer: (steps, channels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub layer: String,
    pub steps: usize,
    pub channels: usize,
}

fn conv_block(filters: usize, kernel: usize, relu: bool) -> Vec<LayerSpec> {
    let mut v = vec![LayerSpec::Conv1d { filters, kernel }, LayerSpec::BatchNorm];
    if relu {
        v.push(LayerSpec::Relu);
    }
    v
}

fn head() -> [LayerSpec; 2] {
    [LayerSpec::GlobalAveragePooling, LayerSpec::Dense { units: 2 }]
}

/// Stacked conv/batch-norm/ReLU blocks, one per (filters, kernel) pair.
pub fn fcnn_with(h: usize, m: usize, filters: &[usize], kernels: &[usize]) -> NetworkSpec {
    let mut layers: Vec<LayerSpec> =
        filters.iter().zip(kernels).flat_map(|(&f, &k)| conv_block(f, k, true)).collect();
    layers.extend(head());
    NetworkSpec { name: "FCNN".into(), h, m, layers }
}

/// One residual block per entry of `filters`; each block stacks one
/// conv/batch-norm per kernel with ReLU between them, adds the shortcut,
/// then applies ReLU. The shortcut projects only when channels change.
pub fn resnet_with(h: usize, m: usize, filters: &[usize], kernels: &[usize]) -> NetworkSpec {
    let mut layers = Vec::new();
    let mut c = m;
    for &f in filters {
        let mut branch = Vec::new();
        for (i, &k) in kernels.iter().enumerate() {
            branch.extend(conv_block(f, k, i + 1 < kernels.len()));
        }
        let shortcut = if c == f { Shortcut::Identity } else { Shortcut::Projection { filters: f } };
        layers.push(LayerSpec::Residual { branch, shortcut });
        layers.push(LayerSpec::Relu);
        c = f;
    }
    layers.extend(head());
    NetworkSpec { name: "ResNet".into(), h, m, layers }
}

pub const FCNN_FILTERS: [usize; 3] = [128, 256, 128];
pub const FCNN_KERNELS: [usize; 3] = [8, 5, 3];
pub const RESNET_FILTERS: [usize; 3] = [64, 128, 128];
pub const RESNET_KERNELS: [usize; 3] = [8, 5, 3];

pub fn build_fcnn(h: usize, m: usize) -> NetworkSpec {
    fcnn_with(h, m, &FCNN_FILTERS, &FCNN_KERNELS)
}

pub fn build_resnet(h: usize, m: usize) -> NetworkSpec {
    resnet_with(h, m, &RESNET_FILTERS, &RESNET_KERNELS)
}

impl NetworkSpec {
    /// Checks shapes and returns the output shape of every top-level layer.
    pub fn shapes(&self) -> Result<Vec<LayerShape>> {
        if self.h == 0 || self.m == 0 {
            return Err(Error::invalid(format!("network input ({}, {}) is empty", self.h, self.m)));
        }
        let heads = count_heads(&self.layers);
        if heads != 1 || !matches!(self.layers.last(), Some(LayerSpec::Dense { units: 2 })) {
            return Err(Error::invalid("a network needs exactly one 2-class dense head, last"));
        }
        let mut steps = self.h;
        let mut c = self.m;
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            (steps, c) = shape_of(l, steps, c)?;
            out.push(LayerShape { layer: format!("{i}:{}", layer_name(l)), steps, channels: c });
        }
        if steps != 1 {
            return Err(Error::invalid("the head must follow global average pooling"));
        }
        Ok(out)
    }

    /// Number of trainable parameters.
    pub fn parameter_count(&self) -> Result<usize> {
        self.shapes()?;
        Ok(super::layers::compile(self).n_params)
    }
}

fn count_heads(layers: &[LayerSpec]) -> usize {
    layers
        .iter()
        .map(|l| match l {
            LayerSpec::Dense { .. } => 1,
            LayerSpec::Residual { branch, .. } => count_heads(branch),
            _ => 0,
        })
        .sum()
}

fn layer_name(l: &LayerSpec) -> &'static str {
    match l {
        LayerSpec::Conv1d { .. } => "conv1d",
        LayerSpec::BatchNorm => "batch_norm",
        LayerSpec::Relu => "relu",
        LayerSpec::Residual { .. } => "residual",
        LayerSpec::GlobalAveragePooling => "gap",
        LayerSpec::Dense { .. } => "dense",
    }
}

fn shape_of(l: &LayerSpec, steps: usize, c: usize) -> Result<(usize, usize)> {
    Ok(match l {
        LayerSpec::Conv1d { filters, kernel } => {
            if *filters == 0 || *kernel == 0 {
                return Err(Error::invalid("convolution with zero filters or kernel"));
            }
            (steps, *filters)
        }
        LayerSpec::BatchNorm | LayerSpec::Relu => (steps, c),
        LayerSpec::GlobalAveragePooling => (1, c),
        LayerSpec::Dense { units } => {
            if steps != 1 {
                return Err(Error::invalid("dense layer before pooling"));
            }
            (1, *units)
        }
        LayerSpec::Residual { branch, shortcut } => {
            let sc = match shortcut {
                Shortcut::Identity => c,
                Shortcut::Projection { filters } => *filters,
            };
            let mut s = (steps, c);
            for b in branch {
                if matches!(b, LayerSpec::GlobalAveragePooling | LayerSpec::Dense { .. }) {
                    return Err(Error::invalid("pooling or dense layer inside a residual branch"));
                }
                s = shape_of(b, s.0, s.1)?;
            }
            if !branch.is_empty() && s.1 != sc {
                return Err(Error::invalid(format!(
                    "residual branch ends with {} channels, shortcut has {sc}",
                    s.1
                )));
            }
            (steps, sc)
        }
    })
}
