use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_classes() -> usize {
    10
}

fn default_input() -> [usize; 3] {
    [3, 32, 32]
}

/// Compact architecture description, the JSON form accepted by the CLI:
/// `{"arch":"resnet","n":9,"widths":[16,32,64],"classes":10}` or
/// `{"arch":"plain","widths":[...]}`. `input` is `[C, H, W]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase", deny_unknown_fields)]
pub enum ArchSpec {
    Resnet {
        n: usize,
        widths: Vec<usize>,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_input")]
        input: [usize; 3],
    },
    Plain {
        widths: Vec<usize>,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_input")]
        input: [usize; 3],
    },
}

impl ArchSpec {
    pub fn resnet(n: usize, widths: &[usize], input: [usize; 3], classes: usize) -> Self {
        ArchSpec::Resnet {
            n,
            widths: widths.to_vec(),
            classes,
            input,
        }
    }

    pub fn plain(widths: &[usize], input: [usize; 3], classes: usize) -> Self {
        ArchSpec::Plain {
            widths: widths.to_vec(),
            classes,
            input,
        }
    }

    /// ResNet-56 for 32×32 CIFAR inputs.
    pub fn resnet56() -> Self {
        Self::resnet(9, &[16, 32, 64], [3, 32, 32], 10)
    }

    pub fn input(&self) -> [usize; 3] {
        match self {
            ArchSpec::Resnet { input, .. } | ArchSpec::Plain { input, .. } => *input,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ArchSpec::Resnet { classes, .. } | ArchSpec::Plain { classes, .. } => *classes,
        }
    }

    pub fn with_input(mut self, shape: [usize; 3]) -> Self {
        match &mut self {
            ArchSpec::Resnet { input, .. } | ArchSpec::Plain { input, .. } => *input = shape,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (widths, classes, input) = match self {
            ArchSpec::Resnet {
                n,
                widths,
                classes,
                input,
            } => {
                if *n == 0 {
                    return Err(Error::Config("resnet needs n >= 1 blocks per stage".into()));
                }
                (widths, classes, input)
            }
            ArchSpec::Plain {
                widths,
                classes,
                input,
            } => (widths, classes, input),
        };
        if widths.is_empty() {
            return Err(Error::Config("widths must be non-empty".into()));
        }
        if widths.contains(&0) || *classes == 0 || input.contains(&0) {
            return Err(Error::Config(format!(
                "extents must be positive: widths {widths:?}, classes {classes}, input {input:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        /// Output `[H, W]` for the model's declared input size.
        out_hw: [usize; 2],
    },
    Batchnorm {
        channels: usize,
    },
    Relu,
    Pool,
    Affine {
        in_features: usize,
        out_features: usize,
    },
}

/// Flattened description of one layer of a built model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerSpec {
    pub layer_id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub prunable: bool,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel * kernel,
            LayerKind::Batchnorm { channels } => 2 * channels,
            LayerKind::Affine {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            LayerKind::Relu | LayerKind::Pool => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShortcutSpec {
    Identity,
    Projection(LayerSpec),
}

/// One basic residual block: the two-conv branch, its shortcut and the
/// kept-channel index set used for the element-wise merge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockSpec {
    pub block_id: String,
    pub layers: Vec<LayerSpec>,
    pub shortcut: ShortcutSpec,
    /// Residual (shortcut) width; the block output width.
    pub width: usize,
    pub index_set: Vec<usize>,
}
