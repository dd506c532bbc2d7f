/// `rows × dim` embeddings, row-major. Rows produced by the decoder are unit length.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl EmbeddingSet {
    pub const UNIT_TOL: f64 = 1e-6;

    /// Panics if `data.len()` is not a multiple of `dim`.
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "embedding data length {} vs dim {dim}", data.len());
        Self { rows: data.len() / dim, dim, data }
    }

    pub fn empty(dim: usize) -> Self {
        Self { rows: 0, dim, data: Vec::new() }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..][..self.dim]
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut out = Self::empty(self.dim);
        for &i in idx {
            out.push(self.row(i));
        }
        out
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest `|‖r‖ − 1|` over all rows (0 for an empty set).
    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.rows).map(|i| (self.norm(i) - 1.0).abs()).fold(0.0, f64::max)
    }

    /// First row whose norm deviates from 1 by at least `tol`.
    pub fn first_non_unit(&self, tol: f64) -> Option<usize> {
        (0..self.rows).find(|&i| !((self.norm(i) - 1.0).abs() < tol))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
