use std::collections::HashMap;

use super::{GeometryError, PointCloud};

/// Where each original point went: `Some(new_index)` or `None` if it was removed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IndexMap {
    to_new: Vec<Option<usize>>,
}

impl IndexMap {
    pub fn new(to_new: Vec<Option<usize>>) -> Self {
        Self { to_new }
    }

    pub fn identity(n: usize) -> Self {
        Self { to_new: (0..n).map(Some).collect() }
    }

    /// Number of original points.
    pub fn len(&self) -> usize {
        self.to_new.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_new.is_empty()
    }

    pub fn get(&self, original: usize) -> Option<usize> {
        self.to_new[original]
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.to_new
    }

    /// Original indices that survived, in original order.
    pub fn survivors(&self) -> Vec<usize> {
        self.to_new.iter().enumerate().filter_map(|(i, m)| m.map(|_| i)).collect()
    }

    /// `self` followed by `next` (which indexes the output of `self`).
    pub fn then(&self, next: &IndexMap) -> IndexMap {
        IndexMap { to_new: self.to_new.iter().map(|m| m.and_then(|j| next.get(j))).collect() }
    }
}

#[inline]
fn voxel_key(p: [f64; 3], size: f64) -> [i64; 3] {
    [(p[0] / size).floor() as i64, (p[1] / size).floor() as i64, (p[2] / size).floor() as i64]
}

struct Cell {
    count: usize,
    position: [f64; 3],
    color: [f64; 3],
    labels: Vec<(u32, usize)>,
}

/// One output point per occupied voxel, at the member centroid with mean color and the
/// majority label (ties to the lowest class id). Output order follows the first member
/// of each voxel in input order.
pub fn voxelize(cloud: &PointCloud, voxel_size: f64) -> Result<(PointCloud, IndexMap), GeometryError> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(GeometryError::InvalidVoxelSize(voxel_size));
    }
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut cells: Vec<Cell> = Vec::new();
    let mut to_new = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let p = cloud.position(i);
        let idx = *slots.entry(voxel_key(p, voxel_size)).or_insert_with(|| {
            cells.push(Cell { count: 0, position: [0.0; 3], color: [0.0; 3], labels: Vec::new() });
            cells.len() - 1
        });
        let cell = &mut cells[idx];
        cell.count += 1;
        let c = cloud.color(i);
        for k in 0..3 {
            cell.position[k] += p[k];
            cell.color[k] += c[k];
        }
        if let Some(label) = cloud.label(i) {
            match cell.labels.iter_mut().find(|(l, _)| *l == label) {
                Some((_, n)) => *n += 1,
                None => cell.labels.push((label, 1)),
            }
        }
        to_new.push(Some(idx));
    }

    let mut out = PointCloud {
        positions: Vec::with_capacity(cells.len()),
        colors: Vec::with_capacity(cells.len()),
        labels: cloud.labels.as_ref().map(|_| Vec::with_capacity(cells.len())),
    };
    for cell in &cells {
        let n = cell.count as f64;
        out.positions.push(cell.position.map(|x| (x / n) as f32));
        out.colors.push(cell.color.map(|x| ((x / n) as f32).clamp(0.0, 1.0)));
        if let Some(labels) = out.labels.as_mut() {
            let best = cell
                .labels
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|&(l, _)| l)
                .expect("every voxel has at least one member");
            labels.push(best);
        }
    }
    Ok((out, IndexMap { to_new }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[[f32; 3]], labels: Option<Vec<u32>>) -> PointCloud {
        PointCloud::new(points.to_vec(), vec![[0.5; 3]; points.len()], labels).unwrap()
    }

    #[test]
    fn same_voxel_collapses_to_centroid() {
        let c = cloud(&[[0.01, 0.01, 0.01], [0.04, 0.02, 0.03]], None);
        let (out, map) = voxelize(&c, 0.05).unwrap();
        assert_eq!(out.len(), 1);
        let p = out.position(0);
        for (a, b) in p.iter().zip([0.025, 0.015, 0.02]) {
            assert!((a - b).abs() < 1e-7, "{p:?}");
        }
        assert_eq!(map.as_slice(), &[Some(0), Some(0)]);
    }

    #[test]
    fn floor_convention_splits_at_boundary() {
        let c = cloud(&[[0.04, 0.0, 0.0], [0.06, 0.0, 0.0]], None);
        let (out, map) = voxelize(&c, 0.05).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(map.as_slice(), &[Some(0), Some(1)]);
    }

    #[test]
    fn majority_label_with_low_id_tiebreak() {
        let pts = [[0.01f32, 0.0, 0.0]; 5];
        let (out, _) = voxelize(&cloud(&pts, Some(vec![4, 2, 4, 2, 7])), 0.05).unwrap();
        assert_eq!(out.labels, Some(vec![2]));
        let (out, _) = voxelize(&cloud(&pts, Some(vec![4, 2, 4, 4, 7])), 0.05).unwrap();
        assert_eq!(out.labels, Some(vec![4]));
    }

    #[test]
    fn count_matches_hash_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f32; 3]> = (0..1000).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let c = cloud(&pts, None);
        let oracle: HashSet<(i64, i64, i64)> = pts
            .iter()
            .map(|p| {
                let f = |x: f32| (x as f64 / 0.05).floor() as i64;
                (f(p[0]), f(p[1]), f(p[2]))
            })
            .collect();
        let (out, map) = voxelize(&c, 0.05).unwrap();
        assert_eq!(out.len(), oracle.len());
        assert!(map.as_slice().iter().all(|m| m.unwrap() < out.len()));
    }

    #[test]
    fn rejects_bad_size() {
        assert!(voxelize(&PointCloud::default(), 0.0).is_err());
        assert!(voxelize(&PointCloud::default(), f64::NAN).is_err());
    }

    #[test]
    fn index_map_composition() {
        let a = IndexMap::new(vec![Some(0), None, Some(1)]);
        let b = IndexMap::new(vec![None, Some(0)]);
        assert_eq!(a.then(&b).as_slice(), &[None, None, Some(0)]);
        assert_eq!(a.survivors(), vec![0, 2]);
    }
}
