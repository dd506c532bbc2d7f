use std::cmp::Ordering;
use std::collections::HashMap;

use crate::geometry::PointCloud;

/// Total order on candidate neighbours of a query: squared distance, then position,
/// then colour, then index. Only exact duplicates (same position and colour) fall back
/// to the index, so the chosen neighbourhood is independent of input order up to points
/// with identical inputs.
fn cmp_candidates(cloud: &PointCloud, (da, a): (f64, usize), (db, b): (f64, usize)) -> Ordering {
    let key = |i: usize| {
        let p = cloud.positions[i];
        let c = cloud.colors[i];
        [p[0], p[1], p[2], c[0], c[1], c[2]]
    };
    da.total_cmp(&db)
        .then_with(|| {
            let (ka, kb) = (key(a), key(b));
            ka.iter().zip(&kb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        })
        .then(a.cmp(&b))
}

fn dist2(cloud: &PointCloud, i: usize, j: usize) -> f64 {
    let (p, q) = (cloud.position(i), cloud.position(j));
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
}

fn take_k(cloud: &PointCloud, mut cand: Vec<(f64, usize)>, k: usize) -> Vec<usize> {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| cmp_candidates(cloud, *a, *b);
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Reference implementation: scans every point.
pub fn knn_brute_force(cloud: &PointCloud, queries: &[usize], k: usize) -> Vec<Vec<usize>> {
    let k = k.min(cloud.len()).max(1);
    queries
        .iter()
        .map(|&q| take_k(cloud, (0..cloud.len()).map(|j| (dist2(cloud, q, j), j)).collect(), k))
        .collect()
}

/// The `k` nearest neighbours (self included) of each query point, nearest first, under
/// the canonical order described on [`cmp_candidates`]. Uses a uniform grid with exact
/// shell termination, so the result equals [`knn_brute_force`].
pub fn knn_canonical(cloud: &PointCloud, queries: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = cloud.len();
    if n == 0 {
        return vec![Vec::new(); queries.len()];
    }
    let k = k.min(n).max(1);
    if n <= 64 || queries.len() * 8 < k {
        return knn_brute_force(cloud, queries, k);
    }

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for i in 0..n {
        let p = cloud.position(i);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let vol = extent.iter().map(|e| e.max(1e-6)).product::<f64>();
    let mut h = 2.0 * (vol / n as f64).cbrt();
    if !(h > 0.0 && h.is_finite()) {
        h = 1.0;
    }
    let cell = |p: [f64; 3]| -> [i64; 3] { std::array::from_fn(|a| ((p[a] - lo[a]) / h).floor() as i64) };
    let max_cell: [i64; 3] = std::array::from_fn(|a| (extent[a] / h).floor() as i64);
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for i in 0..n {
        grid.entry(cell(cloud.position(i))).or_default().push(i);
    }
    let max_r = *max_cell.iter().max().expect("three axes") + 1;

    queries
        .iter()
        .map(|&q| {
            let c = cell(cloud.position(q));
            let mut cand: Vec<(f64, usize)> = Vec::new();
            let mut r: i64 = 0;
            loop {
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                                continue;
                            }
                            if let Some(pts) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                                cand.extend(pts.iter().map(|&j| (dist2(cloud, q, j), j)));
                            }
                        }
                    }
                }
                if r >= max_r {
                    break;
                }
                if cand.len() >= k {
                    let bound = r as f64 * h;
                    let mut d: Vec<f64> = cand.iter().map(|c| c.0).collect();
                    let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
                    if *kth < bound * bound * (1.0 - 1e-9) {
                        break;
                    }
                }
                r += 1;
            }
            take_k(cloud, cand, k)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = crate::seed::rng(seed);
        let pos = (0..n).map(|_| [rng.random::<f32>() * 3.0, rng.random::<f32>() * 3.0, rng.random::<f32>()]).collect();
        let col = (0..n).map(|_| [rng.random::<f32>(); 3]).collect();
        PointCloud::new(pos, col, None).unwrap()
    }

    #[test]
    fn grid_matches_brute_force() {
        for seed in 0..4 {
            let c = random_cloud(700, seed);
            let q: Vec<usize> = (0..700).step_by(3).collect();
            assert_eq!(knn_canonical(&c, &q, 8), knn_brute_force(&c, &q, 8));
        }
    }

    #[test]
    fn includes_self_first_and_caps_at_n() {
        let c = random_cloud(5, 1);
        let nn = knn_canonical(&c, &[0, 1, 2, 3, 4], 8);
        for (i, list) in nn.iter().enumerate() {
            assert_eq!(list.len(), 5);
            assert_eq!(list[0], i);
        }
    }

    #[test]
    fn duplicate_points_break_ties_by_index() {
        let c = PointCloud::new(vec![[0.0; 3]; 4], vec![[0.5; 3]; 4], None).unwrap();
        assert_eq!(knn_canonical(&c, &[2], 3), vec![vec![0, 1, 2]]);
    }
}
