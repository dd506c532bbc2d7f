use std::hash::{DefaultHasher, Hash, Hasher};

use super::conv::{self, Shape};
use super::{NnError, ParamSet, Tensor};
use crate::geometry::Image;
use crate::seed;

pub const CONV1_CHANNELS: usize = 16;
pub const CONV2_CHANNELS: usize = 32;

/// Weights `[3][3][cin][cout]`, biases `[cout]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams2D {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub conv3_w: Tensor,
    pub conv3_b: Tensor,
}

const NAMES: [&str; 6] = [
    "enc2d.conv1.weight",
    "enc2d.conv1.bias",
    "enc2d.conv2.weight",
    "enc2d.conv2.bias",
    "enc2d.conv3.weight",
    "enc2d.conv3.bias",
];

impl EncoderParams2D {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, &[0x2d]));
        let (c1, c2) = (CONV1_CHANNELS, CONV2_CHANNELS);
        Self {
            conv1_w: Tensor::he_uniform(NAMES[0], &[3, 3, 3, c1], 27, &mut rng),
            conv1_b: Tensor::zeros(NAMES[1], &[c1]),
            conv2_w: Tensor::he_uniform(NAMES[2], &[3, 3, c1, c2], 9 * c1, &mut rng),
            conv2_b: Tensor::zeros(NAMES[3], &[c2]),
            conv3_w: Tensor::he_uniform(NAMES[4], &[3, 3, c2, dim], 9 * c2, &mut rng),
            conv3_b: Tensor::zeros(NAMES[5], &[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.conv3_b.len()
    }

    /// Rebuilds from named tensors, checking every declared shape.
    pub fn from_tensors(tensors: &[Tensor]) -> Result<Self, NnError> {
        let get = |name: &str| {
            tensors.iter().find(|t| t.name == name).cloned().ok_or_else(|| NnError::MissingTensor(name.to_string()))
        };
        let p = Self {
            conv1_w: get(NAMES[0])?,
            conv1_b: get(NAMES[1])?,
            conv2_w: get(NAMES[2])?,
            conv2_b: get(NAMES[3])?,
            conv3_w: get(NAMES[4])?,
            conv3_b: get(NAMES[5])?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let d = self.dim();
        let (c1, c2) = (CONV1_CHANNELS, CONV2_CHANNELS);
        let expect: [(&Tensor, Vec<usize>); 6] = [
            (&self.conv1_w, vec![3, 3, 3, c1]),
            (&self.conv1_b, vec![c1]),
            (&self.conv2_w, vec![3, 3, c1, c2]),
            (&self.conv2_b, vec![c2]),
            (&self.conv3_w, vec![3, 3, c2, d]),
            (&self.conv3_b, vec![d]),
        ];
        for (t, dims) in expect {
            if t.dims != dims || t.data.len() != dims.iter().product::<usize>() {
                return Err(NnError::Shape(format!("{}: expected {:?}, got {:?}", t.name, dims, t.dims)));
            }
        }
        if !self.all_finite() {
            return Err(NnError::Shape("non-finite 2D encoder weights".into()));
        }
        Ok(())
    }

    fn shapes(&self, height: usize, width: usize) -> [Shape; 3] {
        [
            Shape { height, width, cin: 3, cout: CONV1_CHANNELS },
            Shape { height, width, cin: CONV1_CHANNELS, cout: CONV2_CHANNELS },
            Shape { height, width, cin: CONV2_CHANNELS, cout: self.dim() },
        ]
    }
}

impl ParamSet for EncoderParams2D {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b, &self.conv3_w, &self.conv3_b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.conv3_w,
            &mut self.conv3_b,
        ]
    }
}

/// `H×W×D` channel-last feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap2D {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMap2D {
    pub fn get(&self, x: usize, y: usize) -> &[f64] {
        &self.data[(y * self.width + x) * self.dim..][..self.dim]
    }
}

fn check_size(img: &Image) -> Result<(), NnError> {
    if img.width < 3 || img.height < 3 {
        return Err(NnError::InputTooSmall(format!("{}x{} image, need at least 3x3", img.width, img.height)));
    }
    Ok(())
}

/// Dense forward pass over every pixel.
pub fn encode_image(params: &EncoderParams2D, img: &Image) -> Result<FeatureMap2D, NnError> {
    check_size(img)?;
    let [s1, s2, s3] = params.shapes(img.height, img.width);
    let mut a1 = conv::forward(&img.pixels, &params.conv1_w.data, &params.conv1_b.data, s1);
    conv::relu_in_place(&mut a1);
    let mut a2 = conv::forward(&a1, &params.conv2_w.data, &params.conv2_b.data, s2);
    conv::relu_in_place(&mut a2);
    let data = conv::forward(&a2, &params.conv3_w.data, &params.conv3_b.data, s3);
    Ok(FeatureMap2D { width: img.width, height: img.height, dim: params.dim(), data })
}

/// Forward state for evaluating the encoder at a subset of pixels and back-propagating
/// from those pixels only.
#[derive(Clone, Debug)]
pub struct Encoder2dTape {
    height: usize,
    width: usize,
    input: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    pixels: Vec<usize>,
    /// `pixels.len() × D` encoder outputs, in request order.
    pub features: Vec<f64>,
}

impl Encoder2dTape {
    /// `pixels` are `[x, y]`.
    pub fn forward_at(params: &EncoderParams2D, img: &Image, pixels: &[[usize; 2]]) -> Result<Self, NnError> {
        check_size(img)?;
        let [s1, s2, s3] = params.shapes(img.height, img.width);
        let mut a1 = conv::forward(&img.pixels, &params.conv1_w.data, &params.conv1_b.data, s1);
        conv::relu_in_place(&mut a1);
        let mut a2 = conv::forward(&a1, &params.conv2_w.data, &params.conv2_b.data, s2);
        conv::relu_in_place(&mut a2);
        let d = params.dim();
        let mut features = vec![0.0; pixels.len() * d];
        let mut flat = Vec::with_capacity(pixels.len());
        for (k, &[x, y]) in pixels.iter().enumerate() {
            if x >= img.width || y >= img.height {
                return Err(NnError::Shape(format!("pixel ({x}, {y}) outside {}x{}", img.width, img.height)));
            }
            conv::forward_pixel(&a2, &params.conv3_w.data, &params.conv3_b.data, s3, y, x, &mut features[k * d..][..d]);
            flat.push(y * img.width + x);
        }
        Ok(Self { height: img.height, width: img.width, input: img.pixels.clone(), a1, a2, pixels: flat, features })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Adds the gradient of a loss whose derivative w.r.t. `features` is `d_features`.
    pub fn backward(&self, params: &EncoderParams2D, d_features: &[f64], grads: &mut EncoderParams2D) {
        let [s1, s2, s3] = params.shapes(self.height, self.width);
        let n_pix = self.height * self.width;

        let mut d_a2 = vec![0.0; n_pix * CONV2_CHANNELS];
        conv::backward_at(
            &self.a2,
            &params.conv3_w.data,
            s3,
            &self.pixels,
            d_features,
            &mut grads.conv3_w.data,
            &mut grads.conv3_b.data,
            Some(&mut d_a2),
        );
        // ReLU: gradient passes only where the forward activation was positive.
        for (g, &a) in d_a2.iter_mut().zip(&self.a2) {
            if !(a > 0.0) {
                *g = 0.0;
            }
        }
        let all: Vec<usize> = (0..n_pix).collect();
        let mut d_a1 = vec![0.0; n_pix * CONV1_CHANNELS];
        conv::backward_at(
            &self.a1,
            &params.conv2_w.data,
            s2,
            &all,
            &d_a2,
            &mut grads.conv2_w.data,
            &mut grads.conv2_b.data,
            Some(&mut d_a1),
        );
        for (g, &a) in d_a1.iter_mut().zip(&self.a1) {
            if !(a > 0.0) {
                *g = 0.0;
            }
        }
        conv::backward_at(&self.input, &params.conv1_w.data, s1, &all, &d_a1, &mut grads.conv1_w.data, &mut grads.conv1_b.data, None);
    }

    /// Hash of the ReLU activation pattern; equal hashes mean the same linear piece.
    pub fn regime(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for a in self.a1.iter().chain(&self.a2) {
            (*a > 0.0).hash(&mut h);
        }
        h.finish()
    }
}
