use super::embedding::dot;
use super::{EmbeddingSet, NnError, ParamSet, Tensor};
use crate::seed;

/// Norms below this are clamped before dividing.
pub const NORM_EPS: f64 = 1e-8;
/// Norms below this abort with [`NnError::DegenerateEmbedding`].
pub const NORM_HARD_MIN: f64 = 1e-12;

/// Linear decoder `z_raw = W·v + b` with `W` stored `[M][D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl HeadParams {
    /// Tensors are named `<prefix>.weight` and `<prefix>.bias`.
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, seed: u64) -> Self {
        assert!(out_dim <= in_dim, "head output dim {out_dim} exceeds input dim {in_dim}");
        let mut rng = seed::rng(seed::derive(seed, &[0x4ead]));
        Self {
            weight: Tensor::he_uniform(format!("{prefix}.weight"), &[out_dim, in_dim], in_dim, &mut rng),
            bias: Tensor::zeros(format!("{prefix}.bias"), &[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims[0]
    }

    pub fn from_tensors(prefix: &str, tensors: &[Tensor]) -> Result<Self, NnError> {
        let get = |suffix: &str| {
            let name = format!("{prefix}.{suffix}");
            tensors.iter().find(|t| t.name == name).cloned().ok_or(NnError::MissingTensor(name))
        };
        let h = Self { weight: get("weight")?, bias: get("bias")? };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.weight.dims.len() == 2
            && self.bias.dims == [self.weight.dims[0]]
            && self.out_dim() <= self.in_dim()
            && self.weight.data.len() == self.out_dim() * self.in_dim()
            && self.bias.data.len() == self.out_dim();
        if !ok {
            return Err(NnError::Shape(format!("head {:?} / {:?}", self.weight.dims, self.bias.dims)));
        }
        if !self.all_finite() {
            return Err(NnError::Shape("non-finite head weights".into()));
        }
        Ok(())
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let d = self.in_dim();
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.bias.data[m] + dot(&self.weight.data[m * d..][..d], v);
        }
    }
}

impl ParamSet for HeadParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Decodes and L2-normalises each `D`-dimensional row of `features`.
pub fn decode_normalize(head: &HeadParams, features: &[f64]) -> Result<EmbeddingSet, NnError> {
    HeadTape::forward(head, features).map(|t| t.embeddings)
}

#[derive(Clone, Debug)]
pub struct HeadTape {
    features: Vec<f64>,
    norms: Vec<f64>,
    pub embeddings: EmbeddingSet,
}

impl HeadTape {
    pub fn forward(head: &HeadParams, features: &[f64]) -> Result<Self, NnError> {
        let (d, m) = (head.in_dim(), head.out_dim());
        if !features.len().is_multiple_of(d) {
            return Err(NnError::Shape(format!("{} feature values for dim {d}", features.len())));
        }
        let n = features.len() / d;
        let mut z = vec![0.0; n * m];
        let mut norms = Vec::with_capacity(n);
        for i in 0..n {
            let row = &mut z[i * m..][..m];
            head.apply(&features[i * d..][..d], row);
            let norm = dot(row, row).sqrt();
            if !(norm >= NORM_HARD_MIN) {
                return Err(NnError::DegenerateEmbedding { row: i, norm });
            }
            let denom = norm.max(NORM_EPS);
            row.iter_mut().for_each(|x| *x /= denom);
            norms.push(norm);
        }
        Ok(Self { features: features.to_vec(), norms, embeddings: EmbeddingSet::new(m, z) })
    }

    /// Accumulates head gradients and returns the gradient w.r.t. the input features.
    pub fn backward(&self, head: &HeadParams, d_z: &[f64], grads: &mut HeadParams) -> Vec<f64> {
        let (d, m) = (head.in_dim(), head.out_dim());
        let mut d_feat = vec![0.0; self.features.len()];
        let mut d_raw = vec![0.0; m];
        for (i, &norm) in self.norms.iter().enumerate() {
            let g = &d_z[i * m..][..m];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let z = self.embeddings.row(i);
            if norm >= NORM_EPS {
                let zg = dot(z, g);
                for k in 0..m {
                    d_raw[k] = (g[k] - z[k] * zg) / norm;
                }
            } else {
                for k in 0..m {
                    d_raw[k] = g[k] / NORM_EPS;
                }
            }
            let v = &self.features[i * d..][..d];
            let dv = &mut d_feat[i * d..][..d];
            for k in 0..m {
                let r = d_raw[k];
                grads.bias.data[k] += r;
                let w = &head.weight.data[k * d..][..d];
                let dw = &mut grads.weight.data[k * d..][..d];
                for j in 0..d {
                    dw[j] += r * v[j];
                    dv[j] += r * w[j];
                }
            }
        }
        d_feat
    }
}
