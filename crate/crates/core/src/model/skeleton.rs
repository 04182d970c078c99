//! Fixed skeleton topologies and their normalized adjacency matrices.

use masa_autograd::Tensor;

use crate::posedata::{BODY_JOINTS, HAND_JOINTS};

/// Neck, then left/right shoulder, left/right elbow, left/right wrist.
pub const BODY_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 3), (2, 4), (3, 5), (4, 6)];

/// Wrist (0) followed by five finger chains of four joints each.
pub fn hand_edges() -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(20);
    for finger in 0..5 {
        let base = 1 + 4 * finger;
        edges.push((0, base));
        for j in base..base + 3 {
            edges.push((j, j + 1));
        }
    }
    edges
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonGraph {
    pub joints: usize,
    /// Symmetric 0/1 adjacency without self-loops.
    pub adjacency: Tensor,
    /// `D^-1 (A + I)`; every row sums to one.
    pub normalized: Tensor,
}

impl SkeletonGraph {
    pub fn from_edges(joints: usize, edges: &[(usize, usize)]) -> Self {
        let mut a = vec![0.0; joints * joints];
        for &(i, j) in edges {
            a[i * joints + j] = 1.0;
            a[j * joints + i] = 1.0;
        }
        let mut n = a.clone();
        for i in 0..joints {
            let row = &mut n[i * joints..(i + 1) * joints];
            row[i] = 1.0;
            let deg: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= deg);
        }
        Self {
            joints,
            adjacency: Tensor::matrix(joints, joints, a).expect("square"),
            normalized: Tensor::matrix(joints, joints, n).expect("square"),
        }
    }

    pub fn hand() -> Self {
        Self::from_edges(HAND_JOINTS, &hand_edges())
    }

    pub fn body() -> Self {
        Self::from_edges(BODY_JOINTS, &BODY_EDGES)
    }
}
