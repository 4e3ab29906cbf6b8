use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{InceptionBlock, SeBlock};
use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::frontend::PairedInput;
use crate::nn::{
    self, prefixed, AdaptiveAvgPool2d, Dropout, Linear, Param, Parameterized, Scalar, Tensor,
};

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum FeatureLayer<T: Scalar> {
    Inception(InceptionBlock<T>),
    Se(SeBlock<T>),
}

/// Output shape recorded by [`Model::infer_traced`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTrace {
    pub name: String,
    pub shape: Vec<usize>,
}

/// The paired-spectrogram regressor.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    spec: ModelSpec,
    features: Vec<FeatureLayer<T>>,
    pool: AdaptiveAvgPool2d,
    fc: Vec<Linear<T>>,
    dropout: Vec<Dropout<T>>,
    hidden_outputs: Vec<Tensor<T>>,
    dropout_rng: ChaCha8Rng,
}

impl<T: Scalar> Model<T> {
    /// Builds and initialises a model; identical seeds give identical weights.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let fc_in = spec.fc_input()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            features.push(match layer {
                LayerSpec::Inception(b) => {
                    FeatureLayer::Inception(InceptionBlock::new(b, &mut rng)?)
                }
                LayerSpec::Se(s) => FeatureLayer::Se(SeBlock::new(s, &mut rng)),
            });
        }
        let mut fc = Vec::with_capacity(spec.fc.len());
        let mut width = fc_in;
        for &out in &spec.fc {
            fc.push(Linear::new(width, out, &mut rng));
            width = out;
        }
        // Start the output at the centre of the score range.
        let centre = (spec.output_clamp[0] + spec.output_clamp[1]) / 2.0;
        if let Some(last) = fc.last_mut() {
            last.bias
                .value
                .iter_mut()
                .for_each(|b| *b = T::from_f64_lossy(centre));
        }
        let dropout = (1..spec.fc.len())
            .map(|_| Dropout::new(spec.dropout))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            features,
            pool: AdaptiveAvgPool2d::new(spec.pooled),
            fc,
            dropout,
            hidden_outputs: Vec::new(),
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d40f),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn features(&self) -> &[FeatureLayer<T>] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [FeatureLayer<T>] {
        &mut self.features
    }

    pub fn fc_layers(&self) -> &[Linear<T>] {
        &self.fc
    }

    /// Reseeds the dropout mask generator.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        if [c, h, w] != self.spec.input_shape {
            return Err(Error::Shape(format!(
                "model expects {:?}, got {:?}",
                self.spec.input_shape,
                [c, h, w]
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass returning raw (unclamped) scores, one per sample.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.infer_traced(x)?.0)
    }

    /// Inference with the output shape of every layer recorded.
    pub fn infer_traced(&self, x: &Tensor<T>) -> Result<(Vec<T>, Vec<LayerTrace>)> {
        self.check_input(x)?;
        let mut trace = Vec::new();
        let mut record = |name: String, t: &Tensor<T>| {
            let [_, c, h, w] = t.shape();
            let shape = if h == 1 && w == 1 {
                vec![c]
            } else {
                vec![c, h, w]
            };
            trace.push(LayerTrace { name, shape });
        };
        let mut cur = x.clone();
        for (i, layer) in self.features.iter().enumerate() {
            cur = match layer {
                FeatureLayer::Inception(b) => b.infer(&cur),
                FeatureLayer::Se(s) => s.infer(&cur),
            };
            record(layer_name(i, layer), &cur);
        }
        cur = self.pool.infer(&cur);
        record("pool".into(), &cur);
        cur = cur.flatten();
        let last = self.fc.len() - 1;
        for (i, fc) in self.fc.iter().enumerate() {
            cur = fc.infer(&cur);
            if i < last {
                nn::relu_in_place(&mut cur);
            }
            record(format!("fc{i}"), &cur);
        }
        Ok((cur.into_data(), trace))
    }

    /// Training-mode forward pass (batch statistics, dropout active).
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &mut self.features {
            cur = match layer {
                FeatureLayer::Inception(b) => b.forward(&cur),
                FeatureLayer::Se(s) => s.forward(&cur),
            };
        }
        cur = self.pool.forward(&cur).flatten();
        self.hidden_outputs.clear();
        let last = self.fc.len() - 1;
        for i in 0..self.fc.len() {
            cur = self.fc[i].forward(&cur);
            if i < last {
                nn::relu_in_place(&mut cur);
                self.hidden_outputs.push(cur.clone());
                cur = self.dropout[i].forward(&cur, &mut self.dropout_rng);
            }
        }
        Ok(cur.into_data())
    }

    /// Back-propagates d(loss)/d(score) for the last [`Model::forward`] batch,
    /// accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, dscores: &[T]) -> Tensor<T> {
        let mut g = Tensor::from_vec([dscores.len(), 1, 1, 1], dscores.to_vec());
        for i in (0..self.fc.len()).rev() {
            if i < self.fc.len() - 1 {
                g = self.dropout[i].backward(&g);
                nn::relu_backward(&self.hidden_outputs[i], &mut g);
            }
            g = self.fc[i].backward(&g);
        }
        let [ph, pw] = self.spec.pooled;
        let channels = self.fc[0].in_features() / (ph * pw);
        g = self
            .pool
            .backward(&g.reshape([dscores.len(), channels, ph, pw]));
        for layer in self.features.iter_mut().rev() {
            g = match layer {
                FeatureLayer::Inception(b) => b.backward(&g),
                FeatureLayer::Se(s) => s.backward(&g),
            };
        }
        g
    }

    /// Number of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.params()
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.len())
            .sum()
    }
}

fn layer_name<T: Scalar>(i: usize, layer: &FeatureLayer<T>) -> String {
    match layer {
        FeatureLayer::Inception(_) => format!("inception{i}"),
        FeatureLayer::Se(_) => format!("se{i}"),
    }
}

impl<T: Scalar> Parameterized<T> for Model<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.features.iter().enumerate() {
            let name = layer_name(i, layer);
            match layer {
                FeatureLayer::Inception(b) => out.extend(prefixed(&name, b.params())),
                FeatureLayer::Se(s) => out.extend(prefixed(&name, s.params())),
            }
        }
        for (i, fc) in self.fc.iter().enumerate() {
            out.extend(prefixed(&format!("fc{i}"), fc.params()));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.features.iter_mut().enumerate() {
            let name = layer_name(i, layer);
            match layer {
                FeatureLayer::Inception(b) => out.extend(prefixed(&name, b.params_mut())),
                FeatureLayer::Se(s) => out.extend(prefixed(&name, s.params_mut())),
            }
        }
        for (i, fc) in self.fc.iter_mut().enumerate() {
            out.extend(prefixed(&format!("fc{i}"), fc.params_mut()));
        }
        out
    }
}

/// Stacks paired inputs into a batch tensor.
pub fn batch_tensor<T: Scalar>(pairs: &[&PairedInput]) -> Result<Tensor<T>> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Argument("empty batch".into()))?
        .shape();
    let mut data = Vec::with_capacity(pairs.len() * first.iter().product::<usize>());
    for p in pairs {
        if p.shape() != first {
            return Err(Error::Shape(format!(
                "batch mixes {:?} and {:?}",
                first,
                p.shape()
            )));
        }
        data.extend(p.data().iter().map(|&v| T::from_f64_lossy(f64::from(v))));
    }
    Ok(Tensor::from_vec(
        [pairs.len(), first[0], first[1], first[2]],
        data,
    ))
}

impl Model<f32> {
    /// Scores normalised pairs, clamped to the configured output range.
    pub fn predict(&self, pairs: &[&PairedInput]) -> Result<Vec<f32>> {
        if let Some(p) = pairs.iter().find(|p| !p.is_normalized()) {
            return Err(Error::State(format!(
                "input of shape {:?} has not been normalized",
                p.shape()
            )));
        }
        let [lo, hi] = self.spec.output_clamp;
        let scores = self.infer(&batch_tensor(pairs)?)?;
        Ok(scores
            .into_iter()
            .map(|s| s.clamp(lo as f32, hi as f32))
            .collect())
    }
}
