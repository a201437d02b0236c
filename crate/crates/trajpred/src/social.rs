//! Social pooling: neighbors' previous-step hidden states, projected through
//! a shared linear+ReLU embedding, summed onto a target-centered 32x32 fine
//! grid and reduced by 8x8 non-overlapping sum pooling to the 4x4x64 social
//! tensor the predictor consumes.
//!
//! Since the pooling is a plain sum, the implementation accumulates straight
//! into the pooled cell a fine cell maps to; the tests hold it against the
//! literal fine-grid construction.

use crate::error::{Error, Result};
use crate::nn;
use crate::num::Scalar;
use crate::tensor::Matrix;

/// Fine grid resolution per axis.
pub const FINE_N: usize = 32;
/// Sum-pooling window per axis (no overlap).
pub const POOL_WIN: usize = 8;
/// Pooled grid resolution per axis.
pub const COARSE_N: usize = FINE_N / POOL_WIN;
/// Channels after the hidden-state projection.
pub const SOCIAL_CHANNELS: usize = 64;
/// Flattened social tensor width: 4 * 4 * 64.
pub const SOCIAL_LEN: usize = COARSE_N * COARSE_N * SOCIAL_CHANNELS;
/// Default side length of the pooled region, matching the local-map extent.
pub const DEFAULT_REGION_SIDE: f64 = 4.0;

/// Fine-grid cell for a neighbor relative to the target, or `None` when the
/// neighbor is outside the region. Half-open cells, floor indexing.
pub fn pool_cell_index<S: Scalar>(
    target_pos: [S; 2],
    neighbor_pos: [S; 2],
    region_side: f64,
) -> Option<(usize, usize)> {
    let half = S::of(region_side / 2.0);
    let cell = S::of(region_side / FINE_N as f64);
    let idx = |t: S, n: S| -> Option<usize> {
        let shifted = (n - t + half) / cell;
        if shifted < S::zero() {
            return None;
        }
        let i = shifted.floor().to_f64_c() as usize;
        (i < FINE_N).then_some(i)
    };
    Some((
        idx(target_pos[0], neighbor_pos[0])?,
        idx(target_pos[1], neighbor_pos[1])?,
    ))
}

/// Flat slot of a pooled cell's 64-channel block.
#[inline]
pub fn coarse_slot(fine_x: usize, fine_y: usize) -> usize {
    let cx = fine_x / POOL_WIN;
    let cy = fine_y / POOL_WIN;
    (cx * COARSE_N + cy) * SOCIAL_CHANNELS
}

/// Flattened 4x4x64 pooled tensor; the zero vector when the target has no
/// in-range neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialTensor<S> {
    pub values: Vec<S>,
}

impl<S: Scalar> SocialTensor<S> {
    pub fn zeros() -> Self {
        SocialTensor {
            values: vec![S::zero(); SOCIAL_LEN],
        }
    }
}

/// Per-neighbor bookkeeping for the backward pass.
#[derive(Debug, Clone)]
pub struct SocialCache<S> {
    /// `(neighbor index, flat slot, projection pre-activation)` for each
    /// in-range neighbor, in input order.
    pub contributions: Vec<(usize, usize, Vec<S>)>,
}

/// Builds the social tensor around a target. `neighbors` pairs each
/// neighbor's position at the current frame with its previous-step hidden
/// state (callers pass zeros at the first observed frame); the target itself
/// must not be listed. Neighbors are expected in ascending pedestrian id so
/// accumulation order is deterministic.
pub fn build_social_tensor<S: Scalar>(
    target_pos: [S; 2],
    neighbors: &[([S; 2], &[S])],
    w_proj: &Matrix<S>,
    b_proj: &[S],
    region_side: f64,
) -> Result<(SocialTensor<S>, SocialCache<S>)> {
    let mut tensor = SocialTensor::zeros();
    let mut cache = SocialCache {
        contributions: Vec::new(),
    };
    for (k, (pos, hidden)) in neighbors.iter().enumerate() {
        if hidden.len() != w_proj.rows() {
            return Err(Error::Dim(format!(
                "social pooling: hidden state width {} vs projection rows {}",
                hidden.len(),
                w_proj.rows()
            )));
        }
        let Some((fx, fy)) = pool_cell_index(target_pos, *pos, region_side) else {
            continue;
        };
        let pre = nn::linear_forward(hidden, w_proj, b_proj)?;
        let slot = coarse_slot(fx, fy);
        for (c, &p) in pre.iter().enumerate() {
            tensor.values[slot + c] += p.max(S::zero());
        }
        cache.contributions.push((k, slot, pre));
    }
    Ok((tensor, cache))
}

/// Routes the tensor gradient back through the projection embedding,
/// accumulating parameter gradients and per-neighbor hidden-state gradients
/// (`dh[neighbor index] += ...`).
pub fn social_tensor_backward<S: Scalar>(
    cache: &SocialCache<S>,
    neighbors: &[([S; 2], &[S])],
    w_proj: &Matrix<S>,
    d_tensor: &[S],
    dw_proj: &mut Matrix<S>,
    db_proj: &mut [S],
    dh: &mut [Vec<S>],
) {
    for (k, slot, pre) in &cache.contributions {
        let dy = &d_tensor[*slot..*slot + SOCIAL_CHANNELS];
        let mut dpre = vec![S::zero(); SOCIAL_CHANNELS];
        nn::relu_backward(pre, dy, &mut dpre);
        let mut dhid = vec![S::zero(); w_proj.rows()];
        nn::linear_backward(neighbors[*k].1, w_proj, &dpre, dw_proj, db_proj, &mut dhid);
        for (acc, d) in dh[*k].iter_mut().zip(dhid) {
            *acc += d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fine_cell_arithmetic() {
        // Neighbor at the target's position lands in the center cell.
        assert_eq!(pool_cell_index([0.0f64; 2], [0.0; 2], 4.0), Some((16, 16)));
        // Just past the region edge is out of range.
        assert_eq!(pool_cell_index([0.0f64; 2], [2.0, 0.0], 4.0), None);
        assert_eq!(pool_cell_index([0.0f64; 2], [0.0, 2.01], 4.0), None);
        // floor((-2 + 2) / 0.125) = 0.
        assert_eq!(pool_cell_index([0.0f64; 2], [-2.0, -2.0], 4.0), Some((0, 0)));
    }

    fn rand_proj(rng: &mut ChaCha8Rng, hidden: usize) -> (Matrix<f64>, Vec<f64>) {
        let w = Matrix::from_vec(
            hidden,
            SOCIAL_CHANNELS,
            (0..hidden * SOCIAL_CHANNELS)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
        )
        .unwrap();
        let b = (0..SOCIAL_CHANNELS).map(|_| rng.gen_range(-0.5..0.5)).collect();
        (w, b)
    }

    #[test]
    fn no_neighbors_gives_zero_tensor() {
        let w = Matrix::zeros(8, SOCIAL_CHANNELS);
        let b = vec![0.0; SOCIAL_CHANNELS];
        let (t, cache) = build_social_tensor([1.0, 1.0], &[], &w, &b, 4.0).unwrap();
        assert_eq!(t.values.len(), SOCIAL_LEN);
        assert!(t.values.iter().all(|&v| v == 0.0));
        assert!(cache.contributions.is_empty());
    }

    #[test]
    fn single_neighbor_occupies_one_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, b) = rand_proj(&mut rng, 8);
        let hidden: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pos = [0.3, -0.7];
        let (t, _) = build_social_tensor([0.0, 0.0], &[(pos, &hidden[..])], &w, &b, 4.0).unwrap();
        // Expected slot by hand: fine cell, pooled window, 64-wide block.
        let (fx, fy) = pool_cell_index([0.0f64; 2], pos, 4.0).unwrap();
        let slot = coarse_slot(fx, fy);
        let embedding: Vec<f64> = nn::relu(&nn::linear_forward(&hidden, &w, &b).unwrap());
        for (i, &v) in t.values.iter().enumerate() {
            if i >= slot && i < slot + SOCIAL_CHANNELS {
                assert_eq!(v, embedding[i - slot]);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn same_cell_neighbors_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (w, b) = rand_proj(&mut rng, 8);
        let h1: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h2: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Two distinct positions inside the same fine cell.
        let (t, _) = build_social_tensor(
            [0.0, 0.0],
            &[([0.30, 0.30], &h1[..]), ([0.33, 0.31], &h2[..])],
            &w,
            &b,
            4.0,
        )
        .unwrap();
        let e1 = nn::relu(&nn::linear_forward(&h1, &w, &b).unwrap());
        let e2 = nn::relu(&nn::linear_forward(&h2, &w, &b).unwrap());
        let slot = coarse_slot(18, 18);
        for c in 0..SOCIAL_CHANNELS {
            assert!((t.values[slot + c] - (e1[c] + e2[c])).abs() < 1e-15);
        }
    }

    /// Literal construction: materialize the 32x32x64 fine grid, then do the
    /// 8x8 sum pooling.
    fn brute_force_tensor(
        target: [f64; 2],
        neighbors: &[([f64; 2], &[f64])],
        w: &Matrix<f64>,
        b: &[f64],
        side: f64,
    ) -> Vec<f64> {
        let mut fine = vec![0.0; FINE_N * FINE_N * SOCIAL_CHANNELS];
        for (pos, hidden) in neighbors {
            let rel = [pos[0] - target[0], pos[1] - target[1]];
            let fx = ((rel[0] + side / 2.0) / (side / FINE_N as f64)).floor();
            let fy = ((rel[1] + side / 2.0) / (side / FINE_N as f64)).floor();
            if fx < 0.0 || fy < 0.0 || fx >= FINE_N as f64 || fy >= FINE_N as f64 {
                continue;
            }
            let mut e = vec![0.0; SOCIAL_CHANNELS];
            for c in 0..SOCIAL_CHANNELS {
                let mut acc = b[c];
                for (r, &h) in hidden.iter().enumerate() {
                    acc += h * w.get(r, c);
                }
                e[c] = acc.max(0.0);
            }
            let base = (fx as usize * FINE_N + fy as usize) * SOCIAL_CHANNELS;
            for c in 0..SOCIAL_CHANNELS {
                fine[base + c] += e[c];
            }
        }
        let mut pooled = vec![0.0; SOCIAL_LEN];
        for fx in 0..FINE_N {
            for fy in 0..FINE_N {
                let slot = ((fx / POOL_WIN) * COARSE_N + fy / POOL_WIN) * SOCIAL_CHANNELS;
                let base = (fx * FINE_N + fy) * SOCIAL_CHANNELS;
                for c in 0..SOCIAL_CHANNELS {
                    pooled[slot + c] += fine[base + c];
                }
            }
        }
        pooled
    }

    #[test]
    fn matches_brute_force_on_random_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (w, b) = rand_proj(&mut rng, 6);
        for _ in 0..300 {
            let target = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            let n = rng.gen_range(0..=10);
            let hiddens: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let neighbors: Vec<([f64; 2], &[f64])> = hiddens
                .iter()
                .map(|h| {
                    (
                        [
                            target[0] + rng.gen_range(-3.0..3.0),
                            target[1] + rng.gen_range(-3.0..3.0),
                        ],
                        h.as_slice(),
                    )
                })
                .collect();
            let (t, _) = build_social_tensor(target, &neighbors, &w, &b, 4.0).unwrap();
            let brute = brute_force_tensor(target, &neighbors, &w, &b, 4.0);
            for (a, bb) in t.values.iter().zip(&brute) {
                assert!((a - bb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn additive_over_prefix_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (w, b) = rand_proj(&mut rng, 6);
        let hiddens: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let neighbors: Vec<([f64; 2], &[f64])> = hiddens
            .iter()
            .map(|h| {
                (
                    [rng.gen_range(-1.9..1.9), rng.gen_range(-1.9..1.9)],
                    h.as_slice(),
                )
            })
            .collect();
        let (all, _) = build_social_tensor([0.0, 0.0], &neighbors, &w, &b, 4.0).unwrap();
        let (head, _) = build_social_tensor([0.0, 0.0], &neighbors[..3], &w, &b, 4.0).unwrap();
        let (tail, _) = build_social_tensor([0.0, 0.0], &neighbors[3..], &w, &b, 4.0).unwrap();
        for i in 0..SOCIAL_LEN {
            assert_eq!(all.values[i], head.values[i] + tail.values[i]);
        }
    }

    #[test]
    fn out_of_range_contributes_nothing() {
        let w = Matrix::identity(SOCIAL_CHANNELS);
        let b = vec![1.0; SOCIAL_CHANNELS];
        let h = vec![1.0; SOCIAL_CHANNELS];
        let (t, _) =
            build_social_tensor([0.0, 0.0], &[([10.0, 0.0], &h[..])], &w, &b, 4.0).unwrap();
        assert!(t.values.iter().all(|&v| v == 0.0));
    }
}
