use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{gemm, Param, Parameterized, Scalar, Tensor};

/// Fully connected layer on `[n, in, 1, 1]` activations.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect()
        };
        Self {
            weight: Param::new(
                &[out_features, in_features],
                draw(in_features * out_features),
            ),
            bias: Param::new(&[out_features], draw(out_features)),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        let (fi, fo) = (self.in_features(), self.out_features());
        assert_eq!(x.sample_len(), fi, "linear input features");
        let mut out = Tensor::zeros([n, fo, 1, 1]);
        for row in out.data_mut().chunks_mut(fo) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(
            n,
            fi,
            fo,
            x.data(),
            false,
            &self.weight.value,
            true,
            T::one(),
            out.data_mut(),
        );
        out
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let out = self.infer(x);
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("linear backward without forward");
        let n = x.batch();
        let (fi, fo) = (self.in_features(), self.out_features());
        gemm(
            fo,
            n,
            fi,
            grad.data(),
            true,
            x.data(),
            false,
            T::one(),
            &mut self.weight.grad,
        );
        for row in grad.data().chunks(fo) {
            for (b, &g) in self.bias.grad.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros([n, fi, 1, 1]);
        gemm(
            n,
            fo,
            fi,
            grad.data(),
            false,
            &self.weight.value,
            false,
            T::zero(),
            dx.data_mut(),
        );
        dx.reshape(x.shape())
    }
}

impl<T: Scalar> Parameterized<T> for Linear<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

/// Inverted dropout; identity at inference.
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    rate: f64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Self {
        Self { rate, mask: None }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, x: &Tensor<T>, rng: &mut ChaCha8Rng) -> Tensor<T> {
        if self.rate <= 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.data().len())
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut out = x.clone();
        for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut dx = grad.clone();
        if let Some(mask) = self.mask.take() {
            for (g, m) in dx.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
        }
        dx
    }
}
