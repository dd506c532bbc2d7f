use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use super::knn::knn_canonical;
use super::{NnError, ParamSet, Tensor};
use crate::geometry::PointCloud;
use crate::seed;

pub const POINT_HIDDEN: usize = 32;
pub const POST_HIDDEN: usize = 64;
pub const DEFAULT_K: usize = 8;

/// Dense layer weights are stored `[in][out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams3D {
    pub k: usize,
    pub mlp1_w: Tensor,
    pub mlp1_b: Tensor,
    pub mlp2_w: Tensor,
    pub mlp2_b: Tensor,
    pub post1_w: Tensor,
    pub post1_b: Tensor,
    pub post2_w: Tensor,
    pub post2_b: Tensor,
}

const NAMES: [&str; 8] = [
    "enc3d.mlp1.weight",
    "enc3d.mlp1.bias",
    "enc3d.mlp2.weight",
    "enc3d.mlp2.bias",
    "enc3d.post1.weight",
    "enc3d.post1.bias",
    "enc3d.post2.weight",
    "enc3d.post2.bias",
];

/// Stored as a one-element tensor so checkpoints stay self-describing.
const K_NAME: &str = "enc3d.k";

impl EncoderParams3D {
    pub fn new(dim: usize, k: usize, seed: u64) -> Self {
        assert!(k >= 1, "k must be positive");
        let mut rng = seed::rng(seed::derive(seed, &[0x3d]));
        let (h, p) = (POINT_HIDDEN, POST_HIDDEN);
        Self {
            k,
            mlp1_w: Tensor::he_uniform(NAMES[0], &[6, h], 6, &mut rng),
            mlp1_b: Tensor::zeros(NAMES[1], &[h]),
            mlp2_w: Tensor::he_uniform(NAMES[2], &[h, h], h, &mut rng),
            mlp2_b: Tensor::zeros(NAMES[3], &[h]),
            post1_w: Tensor::he_uniform(NAMES[4], &[2 * h, p], 2 * h, &mut rng),
            post1_b: Tensor::zeros(NAMES[5], &[p]),
            post2_w: Tensor::he_uniform(NAMES[6], &[p, dim], p, &mut rng),
            post2_b: Tensor::zeros(NAMES[7], &[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.post2_b.len()
    }

    /// Trainable tensors plus the neighbourhood size, for checkpointing.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut v: Vec<Tensor> = self.tensors().into_iter().cloned().collect();
        v.push(Tensor { name: K_NAME.into(), dims: vec![1], data: vec![self.k as f64] });
        v
    }

    pub fn from_tensors(tensors: &[Tensor]) -> Result<Self, NnError> {
        let get = |name: &str| {
            tensors.iter().find(|t| t.name == name).cloned().ok_or_else(|| NnError::MissingTensor(name.to_string()))
        };
        let kt = get(K_NAME)?;
        let k = match kt.data.as_slice() {
            [k] if *k >= 1.0 && k.fract() == 0.0 && *k <= u32::MAX as f64 => *k as usize,
            _ => return Err(NnError::Shape(format!("{K_NAME} must hold one positive integer"))),
        };
        let p = Self {
            k,
            mlp1_w: get(NAMES[0])?,
            mlp1_b: get(NAMES[1])?,
            mlp2_w: get(NAMES[2])?,
            mlp2_b: get(NAMES[3])?,
            post1_w: get(NAMES[4])?,
            post1_b: get(NAMES[5])?,
            post2_w: get(NAMES[6])?,
            post2_b: get(NAMES[7])?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let (h, p, d) = (POINT_HIDDEN, POST_HIDDEN, self.dim());
        let expect: [(&Tensor, Vec<usize>); 8] = [
            (&self.mlp1_w, vec![6, h]),
            (&self.mlp1_b, vec![h]),
            (&self.mlp2_w, vec![h, h]),
            (&self.mlp2_b, vec![h]),
            (&self.post1_w, vec![2 * h, p]),
            (&self.post1_b, vec![p]),
            (&self.post2_w, vec![p, d]),
            (&self.post2_b, vec![d]),
        ];
        for (t, dims) in expect {
            if t.dims != dims || t.data.len() != dims.iter().product::<usize>() {
                return Err(NnError::Shape(format!("{}: expected {:?}, got {:?}", t.name, dims, t.dims)));
            }
        }
        if self.k == 0 {
            return Err(NnError::Shape("k must be positive".into()));
        }
        if !self.all_finite() {
            return Err(NnError::Shape("non-finite 3D encoder weights".into()));
        }
        Ok(())
    }
}

impl ParamSet for EncoderParams3D {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.mlp1_w,
            &self.mlp1_b,
            &self.mlp2_w,
            &self.mlp2_b,
            &self.post1_w,
            &self.post1_b,
            &self.post2_w,
            &self.post2_b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.mlp1_w,
            &mut self.mlp1_b,
            &mut self.mlp2_w,
            &mut self.mlp2_b,
            &mut self.post1_w,
            &mut self.post1_b,
            &mut self.post2_w,
            &mut self.post2_b,
        ]
    }
}

/// `rows × dim` per-point encoder outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PointFeatureSet {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PointFeatureSet {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..][..self.dim]
    }
}

/// `out = b + x·W` for `W` stored `[in][out]`.
fn dense(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    out.copy_from_slice(b);
    let n_out = b.len();
    for (i, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            for (o, &wv) in out.iter_mut().zip(&w[i * n_out..][..n_out]) {
                *o += xv * wv;
            }
        }
    }
}

/// Accumulates `dW += xᵀ·g`, `db += g` and optionally `dx += g·Wᵀ`.
fn dense_backward(x: &[f64], w: &[f64], g: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let n_out = g.len();
    for (d, &gv) in db.iter_mut().zip(g) {
        *d += gv;
    }
    for (i, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            for (d, &gv) in dw[i * n_out..][..n_out].iter_mut().zip(g) {
                *d += xv * gv;
            }
        }
    }
    if let Some(dx) = dx {
        for (i, d) in dx.iter_mut().enumerate() {
            *d += w[i * n_out..][..n_out].iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

fn relu(x: &mut [f64]) {
    for v in x.iter_mut() {
        if !(*v > 0.0) {
            *v = 0.0;
        }
    }
}

fn mask(g: &mut [f64], act: &[f64]) {
    for (gv, &a) in g.iter_mut().zip(act) {
        if !(a > 0.0) {
            *gv = 0.0;
        }
    }
}

fn point_input(cloud: &PointCloud, i: usize) -> [f64; 6] {
    let (p, c) = (cloud.position(i), cloud.color(i));
    [p[0], p[1], p[2], c[0], c[1], c[2]]
}

/// Forward state for a subset of query points. Holds the per-point MLP activations of
/// every point in the union of the query neighbourhoods.
#[derive(Clone, Debug)]
pub struct Encoder3dTape {
    /// Cloud index of each support point, in first-use order.
    support: Vec<usize>,
    inputs: Vec<[f64; 6]>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    /// Per query: support slot of itself, and the support slot of the argmax neighbour
    /// for each aggregated channel.
    self_slot: Vec<usize>,
    argmax: Vec<usize>,
    concat: Vec<f64>,
    g1: Vec<f64>,
    /// `queries × D` outputs.
    pub features: Vec<f64>,
}

impl Encoder3dTape {
    pub fn forward_at(params: &EncoderParams3D, cloud: &PointCloud, queries: &[usize]) -> Result<Self, NnError> {
        if cloud.is_empty() {
            return Err(NnError::InputTooSmall("empty point cloud".into()));
        }
        if let Some(&q) = queries.iter().find(|&&q| q >= cloud.len()) {
            return Err(NnError::Shape(format!("query {q} outside cloud of {}", cloud.len())));
        }
        let neighbours = knn_canonical(cloud, queries, params.k);
        Ok(Self::forward_with(params, cloud, queries, &neighbours))
    }

    fn forward_with(params: &EncoderParams3D, cloud: &PointCloud, queries: &[usize], neighbours: &[Vec<usize>]) -> Self {
        let (h, p, d) = (POINT_HIDDEN, POST_HIDDEN, params.dim());
        let mut slot_of: HashMap<usize, usize> = HashMap::new();
        let mut support = Vec::new();
        let mut slot = |i: usize, support: &mut Vec<usize>| {
            *slot_of.entry(i).or_insert_with(|| {
                support.push(i);
                support.len() - 1
            })
        };
        let self_slot: Vec<usize> = queries.iter().map(|&q| slot(q, &mut support)).collect();
        let nb_slots: Vec<Vec<usize>> =
            neighbours.iter().map(|nb| nb.iter().map(|&j| slot(j, &mut support)).collect()).collect();

        let s = support.len();
        let inputs: Vec<[f64; 6]> = support.iter().map(|&i| point_input(cloud, i)).collect();
        let mut h1 = vec![0.0; s * h];
        let mut h2 = vec![0.0; s * h];
        for t in 0..s {
            let a = &mut h1[t * h..][..h];
            dense(&inputs[t], &params.mlp1_w.data, &params.mlp1_b.data, a);
            relu(a);
            let b = &mut h2[t * h..][..h];
            dense(&h1[t * h..][..h], &params.mlp2_w.data, &params.mlp2_b.data, b);
            relu(b);
        }

        let nq = queries.len();
        let mut argmax = vec![0; nq * h];
        let mut concat = vec![0.0; nq * 2 * h];
        let mut g1 = vec![0.0; nq * p];
        let mut features = vec![0.0; nq * d];
        for qi in 0..nq {
            let c = &mut concat[qi * 2 * h..][..2 * h];
            c[..h].copy_from_slice(&h2[self_slot[qi] * h..][..h]);
            for ch in 0..h {
                let mut best = (f64::NEG_INFINITY, 0);
                for &t in &nb_slots[qi] {
                    let v = h2[t * h + ch];
                    if v > best.0 {
                        best = (v, t);
                    }
                }
                c[h + ch] = best.0;
                argmax[qi * h + ch] = best.1;
            }
            let g = &mut g1[qi * p..][..p];
            dense(c, &params.post1_w.data, &params.post1_b.data, g);
            relu(g);
            dense(g, &params.post2_w.data, &params.post2_b.data, &mut features[qi * d..][..d]);
        }
        Self { support, inputs, h1, h2, self_slot, argmax, concat, g1, features }
    }

    pub fn len(&self) -> usize {
        self.self_slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.self_slot.is_empty()
    }

    /// Cloud indices touched by the forward pass.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn backward(&self, params: &EncoderParams3D, d_features: &[f64], grads: &mut EncoderParams3D) {
        let (h, p, d) = (POINT_HIDDEN, POST_HIDDEN, params.dim());
        let mut d_h2 = vec![0.0; self.support.len() * h];
        let mut d_g = vec![0.0; p];
        let mut d_c = vec![0.0; 2 * h];
        for qi in 0..self.len() {
            let gout = &d_features[qi * d..][..d];
            if gout.iter().all(|&x| x == 0.0) {
                continue;
            }
            let g = &self.g1[qi * p..][..p];
            d_g.iter_mut().for_each(|x| *x = 0.0);
            dense_backward(g, &params.post2_w.data, gout, &mut grads.post2_w.data, &mut grads.post2_b.data, Some(&mut d_g));
            mask(&mut d_g, g);
            d_c.iter_mut().for_each(|x| *x = 0.0);
            let c = &self.concat[qi * 2 * h..][..2 * h];
            dense_backward(c, &params.post1_w.data, &d_g, &mut grads.post1_w.data, &mut grads.post1_b.data, Some(&mut d_c));
            let own = self.self_slot[qi];
            for ch in 0..h {
                d_h2[own * h + ch] += d_c[ch];
                d_h2[self.argmax[qi * h + ch] * h + ch] += d_c[h + ch];
            }
        }
        let mut d_h1 = vec![0.0; h];
        for t in 0..self.support.len() {
            let g2 = &mut d_h2[t * h..][..h];
            mask(g2, &self.h2[t * h..][..h]);
            if g2.iter().all(|&x| x == 0.0) {
                continue;
            }
            let a1 = &self.h1[t * h..][..h];
            d_h1.iter_mut().for_each(|x| *x = 0.0);
            dense_backward(a1, &params.mlp2_w.data, g2, &mut grads.mlp2_w.data, &mut grads.mlp2_b.data, Some(&mut d_h1));
            mask(&mut d_h1, a1);
            dense_backward(&self.inputs[t], &params.mlp1_w.data, &d_h1, &mut grads.mlp1_w.data, &mut grads.mlp1_b.data, None);
        }
    }

    /// Hash of the ReLU patterns and max-pool winners; equal hashes mean the same
    /// differentiable piece.
    pub fn regime(&self) -> u64 {
        let mut hs = DefaultHasher::new();
        for a in self.h1.iter().chain(&self.h2).chain(&self.g1) {
            (*a > 0.0).hash(&mut hs);
        }
        self.argmax.hash(&mut hs);
        hs.finish()
    }
}

/// Encodes every point of the cloud.
pub fn encode_points(params: &EncoderParams3D, cloud: &PointCloud) -> Result<PointFeatureSet, NnError> {
    let all: Vec<usize> = (0..cloud.len()).collect();
    if cloud.is_empty() {
        return Err(NnError::InputTooSmall("empty point cloud".into()));
    }
    let mut data = Vec::with_capacity(cloud.len() * params.dim());
    // Chunked so the tape's support buffers stay small on large clouds.
    let neighbours = knn_canonical(cloud, &all, params.k);
    for (chunk, nb) in all.chunks(4096).zip(neighbours.chunks(4096)) {
        data.extend(Encoder3dTape::forward_with(params, cloud, chunk, nb).features);
    }
    Ok(PointFeatureSet { rows: cloud.len(), dim: params.dim(), data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: usize) -> PointCloud {
        let pos = (0..n).map(|i| {
            let t = i as f32;
            [(t * 0.37).sin(), (t * 0.71).cos(), (t * 0.13).sin() * 0.5]
        });
        let col = (0..n).map(|i| [((i * 3) % 7) as f32 / 7.0, ((i * 5) % 11) as f32 / 11.0, 0.5]);
        PointCloud::new(pos.collect(), col.collect(), None).unwrap()
    }

    /// Straight-line forward pass: brute-force neighbours, explicit loops.
    fn naive(params: &EncoderParams3D, cloud: &PointCloud) -> Vec<f64> {
        let (h, p, d) = (POINT_HIDDEN, POST_HIDDEN, params.dim());
        let n = cloud.len();
        let lin = |x: &[f64], w: &Tensor, b: &Tensor, relu_out: bool| -> Vec<f64> {
            let n_out = b.len();
            (0..n_out)
                .map(|o| {
                    let mut s = b.data[o];
                    for (i, xv) in x.iter().enumerate() {
                        s += xv * w.data[i * n_out + o];
                    }
                    if relu_out { s.max(0.0) } else { s }
                })
                .collect()
        };
        let f: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let a = lin(&point_input(cloud, i), &params.mlp1_w, &params.mlp1_b, true);
                lin(&a, &params.mlp2_w, &params.mlp2_b, true)
            })
            .collect();
        let nb = super::super::knn::knn_brute_force(cloud, &(0..n).collect::<Vec<_>>(), params.k);
        let mut out = Vec::new();
        for i in 0..n {
            let mut c = f[i].clone();
            for ch in 0..h {
                c.push(nb[i].iter().map(|&j| f[j][ch]).fold(f64::NEG_INFINITY, f64::max));
            }
            let g = lin(&c, &params.post1_w, &params.post1_b, true);
            assert_eq!(g.len(), p);
            out.extend(lin(&g, &params.post2_w, &params.post2_b, false));
        }
        assert_eq!(out.len(), n * d);
        out
    }

    #[test]
    fn matches_straight_line_forward() {
        let params = EncoderParams3D::new(16, DEFAULT_K, 42);
        let cloud = fixture(10);
        let got = encode_points(&params, &cloud).unwrap();
        let want = naive(&params, &cloud);
        for (a, b) in got.data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn single_point() {
        let params = EncoderParams3D::new(16, DEFAULT_K, 1);
        let f = encode_points(&params, &fixture(1)).unwrap();
        assert_eq!((f.rows, f.dim), (1, 16));
    }

    #[test]
    fn permutation_equivariant() {
        let params = EncoderParams3D::new(16, DEFAULT_K, 3);
        let cloud = fixture(40);
        let perm: Vec<usize> = (0..40).map(|i| (i * 17 + 5) % 40).collect();
        let permuted = cloud.select(&perm);
        let a = encode_points(&params, &cloud).unwrap();
        let b = encode_points(&params, &permuted).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(b.row(new), a.row(old));
        }
    }

    #[test]
    fn subset_tape_matches_full() {
        let params = EncoderParams3D::new(8, 4, 3);
        let cloud = fixture(30);
        let full = encode_points(&params, &cloud).unwrap();
        let q = [29, 3, 3, 17];
        let tape = Encoder3dTape::forward_at(&params, &cloud, &q).unwrap();
        for (k, &i) in q.iter().enumerate() {
            assert_eq!(&tape.features[k * 8..(k + 1) * 8], full.row(i));
        }
    }

    #[test]
    fn tensor_round_trip_keeps_k() {
        let params = EncoderParams3D::new(8, 5, 3);
        assert_eq!(EncoderParams3D::from_tensors(&params.to_tensors()).unwrap(), params);
    }
}
