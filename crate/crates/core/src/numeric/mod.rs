//! Differentiable numeric primitives shared by the encoder and the flow:
//! a matrix autodiff tape, Householder QR, scaled dot-product attention, and
//! finite-difference gradient verification.

pub mod check;
pub mod graph;
pub mod linalg;
pub mod params;

pub use check::{fd_grad, gradient_check, max_relative_error};
pub use graph::{Gradients, Graph, Mat, Var};
pub use params::{BoundParams, ParamId, ParamStore};

use crate::error::{Error, Result};

/// Scaled dot-product attention on the tape:
/// `softmax((Q·Kᵀ)/√C)·V`, with the softmax over rows. `C` is the column
/// count of `Q` (the projection-space width).
pub fn scaled_dot_attention_graph(g: &mut Graph, q: Var, k: Var, v: Var) -> Var {
    let c = g.value(q).ncols();
    assert_eq!(c, g.value(k).ncols(), "Q/K width mismatch");
    assert_eq!(
        g.value(k).nrows(),
        g.value(v).nrows(),
        "K/V row count mismatch"
    );
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt);
    let scaled = g.scale(scores, 1.0 / (c as f64).sqrt());
    let weights = g.softmax_rows(scaled);
    g.matmul(weights, v)
}

/// Value-level scaled dot-product attention with shape validation.
pub fn scaled_dot_attention(q: &Mat, k: &Mat, v: &Mat) -> Result<Mat> {
    if q.ncols() != k.ncols() {
        return Err(Error::Shape(format!(
            "Q has width {}, K has width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::Shape(format!(
            "K has {} rows, V has {}",
            k.nrows(),
            v.nrows()
        )));
    }
    if q.ncols() == 0 {
        return Err(Error::Shape("attention needs C ≥ 1".into()));
    }
    let mut g = Graph::new();
    let qv = g.leaf(q.clone());
    let kv = g.leaf(k.clone());
    let vv = g.leaf(v.clone());
    let out = scaled_dot_attention_graph(&mut g, qv, kv, vv);
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_mat(rng: &mut StdRng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn single_key_returns_the_single_value_row() {
        let q = array![[3.0, -1.0], [0.0, 0.0]];
        let k = array![[0.2, 0.4]];
        let v = array![[7.0, -2.0]];
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for row in out.rows() {
            assert_eq!(row[0], 7.0);
            assert_eq!(row[1], -2.0);
        }
    }

    #[test]
    fn identical_keys_average_the_values() {
        let q = array![[1.0, 2.0]];
        let k = array![[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]];
        let v = array![[3.0, 0.0], [0.0, 3.0], [3.0, 3.0]];
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        assert!((out[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((out[[0, 1]] - 2.0).abs() < 1e-12);
    }

    /// Hand-evaluated oracle: Q=[[1,0]], K=[[1,0],[0,1]], V=I, C=2.
    /// Logits are (1/√2, 0); the softmax weight on the first row is
    /// e^{1/√2} / (e^{1/√2} + 1), evaluated here with scalar math only.
    #[test]
    fn two_key_softmax_matches_hand_calculation() {
        let q = array![[1.0, 0.0]];
        let k = array![[1.0, 0.0], [0.0, 1.0]];
        let v = array![[1.0, 0.0], [0.0, 1.0]];
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        let e = (1.0f64 / 2.0f64.sqrt()).exp();
        let w1 = e / (e + 1.0);
        let w2 = 1.0 / (e + 1.0);
        assert!((out[[0, 0]] - w1).abs() < 1e-12, "{} vs {}", out[[0, 0]], w1);
        assert!((out[[0, 1]] - w2).abs() < 1e-12);
        // Matches the published decimal expansion to 4 places.
        assert!((out[[0, 0]] - 0.6698).abs() < 5e-5);
        assert!((out[[0, 1]] - 0.3302).abs() < 5e-5);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let q = array![[1.0, 0.0]];
        let k = array![[1.0, 0.0, 0.0]];
        let v = array![[1.0]];
        assert!(scaled_dot_attention(&q, &k, &v).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Output rows are convex combinations of V rows, hence inside the
        /// componentwise [min, max] envelope of each V column.
        #[test]
        fn outputs_stay_in_value_envelope(seed in 0u64..500) {
            let mut rng = StdRng::seed_from_u64(seed);
            let q = rand_mat(&mut rng, 4, 3);
            let k = rand_mat(&mut rng, 6, 3);
            let v = rand_mat(&mut rng, 6, 3);
            let out = scaled_dot_attention(&q, &k, &v).unwrap();
            for j in 0..v.ncols() {
                let lo = v.column(j).iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.column(j).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..out.nrows() {
                    prop_assert!(out[[i, j]] >= lo - 1e-9 && out[[i, j]] <= hi + 1e-9);
                }
            }
        }

        /// Permuting K and V rows together leaves the output unchanged.
        #[test]
        fn permutation_of_keys_and_values(seed in 0u64..500) {
            let mut rng = StdRng::seed_from_u64(seed);
            let q = rand_mat(&mut rng, 3, 3);
            let k = rand_mat(&mut rng, 5, 3);
            let v = rand_mat(&mut rng, 5, 3);
            let mut perm: Vec<usize> = (0..5).collect();
            for i in (1..5).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let kp = Mat::from_shape_fn(k.dim(), |(i, j)| k[[perm[i], j]]);
            let vp = Mat::from_shape_fn(v.dim(), |(i, j)| v[[perm[i], j]]);
            let a = scaled_dot_attention(&q, &k, &v).unwrap();
            let b = scaled_dot_attention(&q, &kp, &vp).unwrap();
            let max_diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max);
            prop_assert!(max_diff < 1e-9, "permutation drift {max_diff}");
        }

        /// Adding a constant to every logit in a row (realized by shifting all
        /// of K by a rank-1 update aligned with Q rows is messy; instead shift
        /// the logits directly through an equivalent V-preserving construction:
        /// appending the same constant column to Q and a ones column to K).
        #[test]
        fn logit_shift_invariance(seed in 0u64..500, shift in -50.0f64..50.0) {
            let mut rng = StdRng::seed_from_u64(seed);
            let q = rand_mat(&mut rng, 3, 2);
            let k = rand_mat(&mut rng, 4, 2);
            let v = rand_mat(&mut rng, 4, 2);
            // Baseline computed with C = 3 so both runs share the √C scale:
            // pad Q with a zero column and K with a ones column (logits
            // unchanged), then replace the zero column by `shift` (every
            // logit moves by shift/√3).
            let pad = |m: &Mat, fill: f64| {
                let mut out = Mat::zeros((m.nrows(), 3));
                out.slice_mut(ndarray::s![.., ..2]).assign(m);
                out.column_mut(2).fill(fill);
                out
            };
            let a = scaled_dot_attention(&pad(&q, 0.0), &pad(&k, 1.0), &v).unwrap();
            let b = scaled_dot_attention(&pad(&q, shift), &pad(&k, 1.0), &v).unwrap();
            let max_diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max);
            prop_assert!(max_diff < 1e-6, "shift drift {max_diff}");
        }
    }
}
