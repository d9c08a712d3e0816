use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TcnConfig, TcnError};

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// `filters x in_channels x kernel`; tap `k` reads the input `k * dilation` steps back.
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
    /// `filters x in_channels`, present where the channel count changes.
    pub proj: Option<Array2<f64>>,
    pub dilation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnParameters {
    pub config: TcnConfig,
    pub blocks: Vec<Block>,
    /// `embed_dim x filters`
    pub w_embed: Array2<f64>,
    pub b_embed: Array1<f64>,
    /// `classes x embed_dim`
    pub w_class: Array2<f64>,
    pub b_class: Array1<f64>,
}

fn uniform2(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize) -> Array2<f64> {
    let bound = (3.0 / fan_in as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
}

impl TcnParameters {
    /// Scaled uniform initialisation, variance `1 / fan_in`, biases zero.
    pub fn init(config: &TcnConfig) -> Result<Self, TcnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let f = config.filters;
        let mut blocks = Vec::with_capacity(config.dilations.len());
        let mut channels = config.in_features;
        for &d in &config.dilations {
            let fan_in = channels * config.kernel;
            // Residual branches start scaled by 1/sqrt(depth) so the sum stays near unit scale.
            let bound = (3.0 / (fan_in * config.dilations.len()) as f64).sqrt();
            let weight = Array3::from_shape_simple_fn((f, channels, config.kernel), || rng.random_range(-bound..bound));
            let proj = (channels != f).then(|| uniform2(&mut rng, (f, channels), channels));
            blocks.push(Block { weight, bias: Array1::zeros(f), proj, dilation: d });
            channels = f;
        }
        let w_embed = uniform2(&mut rng, (config.embed_dim, f), f);
        let w_class = uniform2(&mut rng, (config.classes, config.embed_dim), config.embed_dim);
        Ok(TcnParameters {
            config: config.clone(),
            blocks,
            w_embed,
            b_embed: Array1::zeros(config.embed_dim),
            b_class: Array1::zeros(config.classes),
            w_class,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Tensor names and shapes in serialisation order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.weight"), b.weight.shape().to_vec()));
            out.push((format!("block{i}.bias"), b.bias.shape().to_vec()));
            if let Some(p) = &b.proj {
                out.push((format!("block{i}.proj"), p.shape().to_vec()));
            }
        }
        out.push(("embed.weight".into(), self.w_embed.shape().to_vec()));
        out.push(("embed.bias".into(), self.b_embed.shape().to_vec()));
        out.push(("class.weight".into(), self.w_class.shape().to_vec()));
        out.push(("class.bias".into(), self.b_class.shape().to_vec()));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.push(b.weight.as_slice().unwrap());
            out.push(b.bias.as_slice().unwrap());
            if let Some(p) = &b.proj {
                out.push(p.as_slice().unwrap());
            }
        }
        out.push(self.w_embed.as_slice().unwrap());
        out.push(self.b_embed.as_slice().unwrap());
        out.push(self.w_class.as_slice().unwrap());
        out.push(self.b_class.as_slice().unwrap());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.weight.as_slice_mut().unwrap());
            out.push(b.bias.as_slice_mut().unwrap());
            if let Some(p) = &mut b.proj {
                out.push(p.as_slice_mut().unwrap());
            }
        }
        out.push(self.w_embed.as_slice_mut().unwrap());
        out.push(self.b_embed.as_slice_mut().unwrap());
        out.push(self.w_class.as_slice_mut().unwrap());
        out.push(self.b_class.as_slice_mut().unwrap());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Rebuilds parameters from flat tensors laid out as in [`Self::layout`].
    pub fn from_tensors(config: &TcnConfig, data: &[f64]) -> Result<Self, TcnError> {
        let mut p = Self::init(config)?;
        let need = p.parameter_count();
        if data.len() != need {
            return Err(TcnError::ShapeMismatch(format!("expected {need} parameters, found {}", data.len())));
        }
        let mut at = 0;
        for t in p.tensors_mut() {
            t.copy_from_slice(&data[at..at + t.len()]);
            at += t.len();
        }
        Ok(p)
    }
}
