//! Nearest-neighbour queries over fixed point sets.

use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;

/// k-d tree over a point set; items are indices into the original slice.
pub struct NearestIndex {
    tree: ImmutableKdTree<f64, 3>,
    len: usize,
}

impl NearestIndex {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self { tree: ImmutableKdTree::new_from_slice(&coords), len: points.len() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Index of the closest point and its squared distance.
    pub fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        let nn = self.tree.nearest_one::<SquaredEuclidean>(&[query.x, query.y, query.z]);
        (nn.item as usize, nn.distance)
    }

    /// Up to `k` closest points, nearest first, as (index, squared distance).
    pub fn nearest_k(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let Some(k) = NonZero::new(k.min(self.len)) else { return Vec::new() };
        self.tree
            .nearest_n::<SquaredEuclidean>(&[query.x, query.y, query.z], k)
            .into_iter()
            .map(|nn| (nn.item as usize, nn.distance))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_brute_force() {
        let pts: Vec<_> = (0..200)
            .map(|i| {
                let t = i as f64;
                Vector3::new((t * 0.37).sin(), (t * 0.91).cos(), (t * 0.13).sin() * 2.0)
            })
            .collect();
        let index = NearestIndex::new(&pts);
        for q in [Vector3::new(0.1, 0.2, 0.3), Vector3::new(-1.0, 0.5, 2.0)] {
            let (best, d) = index.nearest(&q);
            let brute = pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
            assert_eq!(d, brute);
            assert_eq!((pts[best] - q).norm_squared(), brute);
            let k = index.nearest_k(&q, 4);
            assert_eq!(k.len(), 4);
            assert!(k.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn handles_many_duplicates() {
        let pts = vec![Vector3::new(1.0, 1.0, 1.0); 500];
        let index = NearestIndex::new(&pts);
        assert_eq!(index.nearest(&Vector3::zeros()).1, 3.0);
    }
}
