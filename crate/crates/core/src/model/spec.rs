use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    A,
    B,
    C,
}

/// How branch padding is chosen.
///
/// `Same`: every kernel gets `k / 2` padding, pools are padded too, so the
/// output size depends only on the stride. `Valid`: the pooling kernel runs
/// unpadded and larger kernels are padded by the size difference so that all
/// branches line up with it; the pointwise branch pools after its 1×1 conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaddingPolicy {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchWidths {
    pub horizontal: usize,
    pub vertical: usize,
    pub pointwise: usize,
    pub pool_projection: usize,
}

impl BranchWidths {
    pub fn total(&self) -> usize {
        self.horizontal + self.vertical + self.pointwise + self.pool_projection
    }
}

/// Kernels are `[freq, time]`. Rectangular kernels are factorised into a
/// `k×1` then `1×k` pair with the block stride on the second factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InceptionBlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub widths: BranchWidths,
    pub horizontal_kernel: [usize; 2],
    pub vertical_kernel: [usize; 2],
    pub pool_kernel: usize,
    pub stride: [usize; 2],
    pub padding: PaddingPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeBlockSpec {
    pub channels: usize,
    pub reduction: usize,
}

impl SeBlockSpec {
    pub fn bottleneck(&self) -> usize {
        (self.channels / self.reduction.max(1)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Inception(InceptionBlockSpec),
    Se(SeBlockSpec),
}

/// One stage of a branch after expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSpec {
    /// Conv → batch norm → ReLU.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    },
    AvgPool {
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    },
}

impl StageSpec {
    fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kernel, stride, padding) = match *self {
            StageSpec::Conv {
                kernel,
                stride,
                padding,
                ..
            }
            | StageSpec::AvgPool {
                kernel,
                stride,
                padding,
            } => (kernel, stride, padding),
        };
        let out = |len: usize, ax: usize| {
            let padded = len + 2 * padding[ax];
            (padded >= kernel[ax]).then(|| (padded - kernel[ax]) / stride[ax] + 1)
        };
        Some((out(h, 0)?, out(w, 1)?))
    }
}

impl InceptionBlockSpec {
    fn rect_padding(&self, kernel: [usize; 2]) -> Result<[usize; 2]> {
        match self.padding {
            PaddingPolicy::Same => Ok([kernel[0] / 2, kernel[1] / 2]),
            PaddingPolicy::Valid => {
                let p = self.pool_kernel;
                if kernel.iter().any(|&k| k < p || !(k - p).is_multiple_of(2)) {
                    return Err(Error::Shape(format!(
                        "kernel {kernel:?} cannot be aligned with a {p}x{p} valid pool"
                    )));
                }
                Ok([(kernel[0] - p) / 2, (kernel[1] - p) / 2])
            }
        }
    }

    fn factorised(&self, kernel: [usize; 2], out: usize) -> Result<Vec<StageSpec>> {
        let pad = self.rect_padding(kernel)?;
        Ok(vec![
            StageSpec::Conv {
                in_channels: self.in_channels,
                out_channels: out,
                kernel: [kernel[0], 1],
                stride: [1, 1],
                padding: [pad[0], 0],
            },
            StageSpec::Conv {
                in_channels: out,
                out_channels: out,
                kernel: [1, kernel[1]],
                stride: self.stride,
                padding: [0, pad[1]],
            },
        ])
    }

    /// Expands the block into its four branches: horizontal, vertical,
    /// pointwise, pooling.
    pub fn branches(&self) -> Result<[Vec<StageSpec>; 4]> {
        let p = self.pool_kernel;
        let w = self.widths;
        let pointwise = |cin: usize, cout: usize, stride: [usize; 2]| StageSpec::Conv {
            in_channels: cin,
            out_channels: cout,
            kernel: [1, 1],
            stride,
            padding: [0, 0],
        };
        let (pool_pad, unit) = match self.padding {
            PaddingPolicy::Same => ([p / 2, p / 2], [1, 1]),
            PaddingPolicy::Valid => ([0, 0], [1, 1]),
        };
        let pool = StageSpec::AvgPool {
            kernel: [p, p],
            stride: self.stride,
            padding: pool_pad,
        };
        let point_branch = match self.padding {
            PaddingPolicy::Same => vec![pointwise(self.in_channels, w.pointwise, self.stride)],
            PaddingPolicy::Valid => vec![pointwise(self.in_channels, w.pointwise, unit), pool],
        };
        Ok([
            self.factorised(self.horizontal_kernel, w.horizontal)?,
            self.factorised(self.vertical_kernel, w.vertical)?,
            point_branch,
            vec![pool, pointwise(self.in_channels, w.pool_projection, unit)],
        ])
    }

    /// Output `(channels, h, w)` for an `h × w` input.
    pub fn output_shape(&self, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let mut dims = None;
        for (b, branch) in self.branches()?.iter().enumerate() {
            let mut hw = (h, w);
            for stage in branch {
                hw = stage.output_hw(hw.0, hw.1).ok_or_else(|| {
                    Error::Shape(format!(
                        "branch {b} kernel exceeds a {}x{} input",
                        hw.0, hw.1
                    ))
                })?;
            }
            match dims {
                None => dims = Some(hw),
                Some(d) if d != hw => {
                    return Err(Error::Shape(format!(
                        "branch {b} yields {}x{}, branch 0 yields {}x{}",
                        hw.0, hw.1, d.0, d.1
                    )))
                }
                _ => {}
            }
        }
        let (ho, wo) = dims.expect("four branches");
        Ok((self.widths.total(), ho, wo))
    }
}

/// Declarative description of the full regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `[channels, bands, frames]`.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub pooled: [usize; 2],
    /// Output widths of the fully connected layers; the last must be 1.
    pub fc: Vec<usize>,
    pub dropout: f64,
    /// Inference-time output range.
    pub output_clamp: [f64; 2],
}

fn block(
    kind: BlockKind,
    in_channels: usize,
    widths: [usize; 4],
    horizontal_kernel: [usize; 2],
    vertical_kernel: [usize; 2],
    pool_kernel: usize,
    stride: [usize; 2],
) -> LayerSpec {
    LayerSpec::Inception(InceptionBlockSpec {
        kind,
        in_channels,
        widths: BranchWidths {
            horizontal: widths[0],
            vertical: widths[1],
            pointwise: widths[2],
            pool_projection: widths[3],
        },
        horizontal_kernel,
        vertical_kernel,
        pool_kernel,
        stride,
        padding: if kind == BlockKind::C {
            PaddingPolicy::Valid
        } else {
            PaddingPolicy::Same
        },
    })
}

impl ModelSpec {
    /// The full-size network (≈15.4M parameters).
    pub fn standard() -> Self {
        Self::with_width(64, 16)
    }

    /// Same topology with every 64-wide branch narrowed to `width`; used for
    /// fast experiments on small CPUs.
    pub fn reduced(width: usize) -> Self {
        Self::with_width(width, 4)
    }

    fn with_width(w: usize, se_reduction: usize) -> Self {
        let frac = |num: usize, den: usize| (w * num / den).max(1);
        let a1 = [w, w, w, frac(1, 4)];
        let a2 = [w, w, w, frac(1, 2)];
        let b = [w, w, w, w];
        let c1 = a1.iter().sum::<usize>();
        let c2 = a2.iter().sum::<usize>();
        let c3 = 4 * w;
        let se = |channels| {
            LayerSpec::Se(SeBlockSpec {
                channels,
                reduction: se_reduction,
            })
        };
        Self {
            input_shape: [2, 32, 360],
            layers: vec![
                block(BlockKind::A, 2, a1, [3, 7], [7, 3], 5, [2, 2]),
                block(BlockKind::A, c1, a2, [3, 7], [7, 3], 5, [1, 2]),
                se(c2),
                block(BlockKind::B, c2, b, [3, 5], [5, 3], 5, [1, 2]),
                se(c3),
                block(BlockKind::C, c3, b, [3, 3], [5, 5], 3, [1, 2]),
                se(c3),
            ],
            pooled: [4, 4],
            fc: vec![frac(50, 1), frac(8, 1), 1],
            dropout: 0.5,
            output_clamp: [1.0, 5.0],
        }
    }

    /// A tiny double-precision-friendly variant: one Inception block with
    /// 4-wide branches, one SE block and a single 64→1 output layer.
    pub fn miniature() -> Self {
        Self {
            input_shape: [2, 8, 12],
            layers: vec![
                block(BlockKind::A, 2, [4, 4, 4, 4], [3, 5], [5, 3], 3, [2, 2]),
                LayerSpec::Se(SeBlockSpec {
                    channels: 16,
                    reduction: 4,
                }),
            ],
            pooled: [2, 2],
            fc: vec![1],
            dropout: 0.0,
            output_clamp: [1.0, 5.0],
        }
    }

    /// Validates the layer chain and returns the feature shape `(c, h, w)`
    /// after each layer.
    pub fn feature_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let [c0, h0, w0] = self.input_shape;
        let mut cur = (c0, h0, w0);
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                LayerSpec::Inception(b) => {
                    if b.in_channels != cur.0 {
                        return Err(Error::Shape(format!(
                            "layer {i} (Inception {:?}) expects {} channels, receives {}",
                            b.kind, b.in_channels, cur.0
                        )));
                    }
                    b.output_shape(cur.1, cur.2).map_err(|e| {
                        Error::Shape(format!("layer {i} (Inception {:?}): {e}", b.kind))
                    })?
                }
                LayerSpec::Se(s) => {
                    if s.channels != cur.0 {
                        return Err(Error::Shape(format!(
                            "layer {i} (SE) expects {} channels, receives {}",
                            s.channels, cur.0
                        )));
                    }
                    cur
                }
            };
            shapes.push(cur);
        }
        if cur.1 < self.pooled[0] || cur.2 < self.pooled[1] {
            return Err(Error::Shape(format!(
                "adaptive pool to {:?} from {}x{}",
                self.pooled, cur.1, cur.2
            )));
        }
        if self.fc.last() != Some(&1) {
            return Err(Error::Shape(
                "fully connected head must end in one output".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Argument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(shapes)
    }

    pub fn fc_input(&self) -> Result<usize> {
        let last = self
            .feature_shapes()?
            .last()
            .map(|s| s.0)
            .unwrap_or(self.input_shape[0]);
        Ok(last * self.pooled[0] * self.pooled[1])
    }
}
