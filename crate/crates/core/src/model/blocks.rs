use rand::Rng;

use super::spec::{InceptionBlockSpec, SeBlockSpec, StageSpec};
use crate::nn::{
    self, prefixed, AvgPool2d, BatchNorm2d, Conv2d, Linear, Param, Parameterized, Scalar, Tensor,
};

/// Convolution followed by batch normalisation and ReLU.
#[derive(Debug, Clone)]
pub struct ConvUnit<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    output: Option<Tensor<T>>,
}

impl<T: Scalar> ConvUnit<T> {
    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.bn.infer(&self.conv.infer(x));
        nn::relu_in_place(&mut y);
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let c = self.conv.forward(x);
        let mut y = self.bn.forward(&c);
        nn::relu_in_place(&mut y);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let out = self
            .output
            .take()
            .expect("conv unit backward without forward");
        let mut g = grad.clone();
        nn::relu_backward(&out, &mut g);
        let g = self.bn.backward(&g);
        self.conv.backward(&g)
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Stage<T: Scalar> {
    Conv(ConvUnit<T>),
    Pool(AvgPool2d),
}

impl<T: Scalar> Stage<T> {
    fn build(spec: &StageSpec, rng: &mut impl Rng) -> Self {
        match *spec {
            StageSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Stage::Conv(ConvUnit {
                conv: Conv2d::new(in_channels, out_channels, kernel, stride, padding, rng),
                bn: BatchNorm2d::new(out_channels),
                output: None,
            }),
            StageSpec::AvgPool {
                kernel,
                stride,
                padding,
            } => Stage::Pool(AvgPool2d::new(kernel, stride, padding)),
        }
    }
}

/// Four parallel branches concatenated on the channel axis.
#[derive(Debug, Clone)]
pub struct InceptionBlock<T: Scalar> {
    branches: Vec<Vec<Stage<T>>>,
    in_channels: usize,
    widths: Vec<usize>,
}

impl<T: Scalar> InceptionBlock<T> {
    pub fn new(spec: &InceptionBlockSpec, rng: &mut impl Rng) -> crate::Result<Self> {
        let specs = spec.branches()?;
        let branches = specs
            .iter()
            .map(|b| b.iter().map(|s| Stage::build(s, rng)).collect())
            .collect();
        let w = spec.widths;
        Ok(Self {
            branches,
            in_channels: spec.in_channels,
            widths: vec![w.horizontal, w.vertical, w.pointwise, w.pool_projection],
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Conv stages in branch order, for inspection.
    pub fn conv_units(&self) -> impl Iterator<Item = &ConvUnit<T>> {
        self.branches.iter().flatten().filter_map(|s| match s {
            Stage::Conv(u) => Some(u),
            Stage::Pool(_) => None,
        })
    }

    /// Pre-normalisation output of the first convolution in every branch.
    pub fn first_conv_outputs(&self, x: &Tensor<T>) -> Vec<Tensor<T>> {
        self.branches
            .iter()
            .map(|branch| {
                let mut cur = x.clone();
                for stage in branch {
                    match stage {
                        Stage::Pool(p) => cur = p.infer(&cur),
                        Stage::Conv(u) => return u.conv.infer(&cur),
                    }
                }
                cur
            })
            .collect()
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.shape()[1], self.in_channels, "inception input channels");
        let outs: Vec<Tensor<T>> = self
            .branches
            .iter()
            .map(|branch| {
                branch.iter().fold(x.clone(), |cur, stage| match stage {
                    Stage::Conv(u) => u.infer(&cur),
                    Stage::Pool(p) => p.infer(&cur),
                })
            })
            .collect();
        Tensor::concat_channels(&outs)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.shape()[1], self.in_channels, "inception input channels");
        let outs: Vec<Tensor<T>> = self
            .branches
            .iter_mut()
            .map(|branch| {
                let mut cur = x.clone();
                for stage in branch.iter_mut() {
                    cur = match stage {
                        Stage::Conv(u) => u.forward(&cur),
                        Stage::Pool(p) => p.forward(&cur),
                    };
                }
                cur
            })
            .collect();
        Tensor::concat_channels(&outs)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut start = 0;
        let mut dx: Option<Tensor<T>> = None;
        for (branch, &width) in self.branches.iter_mut().zip(&self.widths) {
            let mut g = grad.channel_slice(start, width);
            start += width;
            for stage in branch.iter_mut().rev() {
                g = match stage {
                    Stage::Conv(u) => u.backward(&g),
                    Stage::Pool(p) => p.backward(&g),
                };
            }
            match dx.as_mut() {
                None => dx = Some(g),
                Some(acc) => acc.add_assign(&g),
            }
        }
        dx.expect("four branches")
    }
}

impl<T: Scalar> Parameterized<T> for InceptionBlock<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (b, branch) in self.branches.iter().enumerate() {
            for (s, stage) in branch.iter().enumerate() {
                if let Stage::Conv(u) = stage {
                    out.extend(prefixed(&format!("branch{b}.{s}.conv"), u.conv.params()));
                    out.extend(prefixed(&format!("branch{b}.{s}.bn"), u.bn.params()));
                }
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (b, branch) in self.branches.iter_mut().enumerate() {
            for (s, stage) in branch.iter_mut().enumerate() {
                if let Stage::Conv(u) = stage {
                    out.extend(prefixed(
                        &format!("branch{b}.{s}.conv"),
                        u.conv.params_mut(),
                    ));
                    out.extend(prefixed(&format!("branch{b}.{s}.bn"), u.bn.params_mut()));
                }
            }
        }
        out
    }
}

/// Squeeze-and-excitation: global average pool, bottleneck with ReLU,
/// expansion, sigmoid gate multiplied onto each channel.
#[derive(Debug, Clone)]
pub struct SeBlock<T: Scalar> {
    pub squeeze: Linear<T>,
    pub excite: Linear<T>,
    cache: Option<SeCache<T>>,
}

#[derive(Debug, Clone)]
struct SeCache<T: Scalar> {
    input: Tensor<T>,
    hidden: Tensor<T>,
    gates: Tensor<T>,
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn channel_means<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let inv = T::one() / T::from_usize(plane).unwrap();
    let data = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec([n, c, 1, 1], data)
}

fn scale_channels<T: Scalar>(x: &Tensor<T>, gates: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = x.shape();
    let mut y = x.clone();
    for (plane, &g) in y.data_mut().chunks_mut(h * w).zip(gates.data()) {
        plane.iter_mut().for_each(|v| *v *= g);
    }
    y
}

impl<T: Scalar> SeBlock<T> {
    pub fn new(spec: &SeBlockSpec, rng: &mut impl Rng) -> Self {
        let hidden = spec.bottleneck();
        Self {
            squeeze: Linear::new(spec.channels, hidden, rng),
            excite: Linear::new(hidden, spec.channels, rng),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.squeeze.in_features()
    }

    /// Per-sample, per-channel gate values in (0, 1).
    pub fn gates(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut hidden = self.squeeze.infer(&channel_means(x));
        nn::relu_in_place(&mut hidden);
        let mut gates = self.excite.infer(&hidden);
        gates.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        gates
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        scale_channels(x, &self.gates(x))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut hidden = self.squeeze.forward(&channel_means(x));
        nn::relu_in_place(&mut hidden);
        let mut gates = self.excite.forward(&hidden);
        gates.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        let y = scale_channels(x, &gates);
        self.cache = Some(SeCache {
            input: x.clone(),
            hidden,
            gates,
        });
        y
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let SeCache {
            input,
            hidden,
            gates,
        } = self.cache.take().expect("SE backward without forward");
        let [n, c, h, w] = input.shape();
        let plane = h * w;
        // d gate = sum over the plane of dy * x, then through the sigmoid.
        let mut dpre = Tensor::zeros([n, c, 1, 1]);
        for (((d, gp), xp), &g) in dpre
            .data_mut()
            .iter_mut()
            .zip(grad.data().chunks(plane))
            .zip(input.data().chunks(plane))
            .zip(gates.data())
        {
            let s: T = gp.iter().zip(xp).map(|(&a, &b)| a * b).sum();
            *d = s * g * (T::one() - g);
        }
        let mut dhidden = self.excite.backward(&dpre);
        nn::relu_backward(&hidden, &mut dhidden);
        let dmeans = self.squeeze.backward(&dhidden);
        let inv = T::one() / T::from_usize(plane).unwrap();
        let mut dx = scale_channels(grad, &gates);
        for (plane_dx, &dm) in dx.data_mut().chunks_mut(plane).zip(dmeans.data()) {
            plane_dx.iter_mut().for_each(|v| *v += dm * inv);
        }
        dx
    }
}

impl<T: Scalar> Parameterized<T> for SeBlock<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        prefixed("squeeze", self.squeeze.params())
            .chain(prefixed("excite", self.excite.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let (s, e) = (&mut self.squeeze, &mut self.excite);
        prefixed("squeeze", s.params_mut())
            .chain(prefixed("excite", e.params_mut()))
            .collect()
    }
}
