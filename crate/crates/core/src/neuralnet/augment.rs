use crate::dyncore::Vec2;
use crate::prelude::*;

/// Rotates every 2-vector by the same angle. Scalars such as distances and
/// embeddings are not passed in and therefore stay untouched.
pub fn rotate_batch(vectors: &[Vec2], angle: f64) -> Vec<Vec2> {
    vectors.iter().map(|v| v.rotated(angle)).collect()
}

/// In-place variant of [`rotate_batch`].
pub fn rotate_in_place(vectors: &mut [Vec2], angle: f64) {
    vectors.iter_mut().for_each(|v| *v = v.rotated(angle));
}
