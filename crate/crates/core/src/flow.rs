//! Invertible flow with exact log-determinant and Gaussian NLL scoring.
//!
//! Each layer applies, in order: multiplication by the orthogonal factor of a
//! QR-factorized unconstrained weight, an elementwise positive scale (stored
//! as log-magnitude), a bias, and a PReLU (omitted on the last layer so the
//! latent support is all of R^d). The orthogonal factor contributes zero to
//! the log-determinant, the scale contributes Σ log scaleᵢ, and the PReLU
//! contributes log slopeᵢ on coordinates with negative pre-activation — so
//! the Jacobian term of the change-of-variables density is analytic and the
//! map is invertible for any parameter values.
//!
//! The negative log-likelihood under a standard-Gaussian latent is
//! `NLL(f) = d/2·ln(2π) + ‖s‖²/2 − logdet`, used directly as the anomaly
//! score (higher = more anomalous).

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::graph::{Graph, Mat, Var};
use crate::numeric::params::{self, BoundParams, ParamId, ParamStore};
use crate::numeric::linalg;

/// ln(2π).
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Lower clamp on PReLU slopes: keeps the nonlinearity strictly monotone and
/// bounds the conditioning of the inverse.
pub const MIN_SLOPE: f64 = 1e-3;

/// Default number of layers for the likelihood head.
pub const DEFAULT_LAYERS: usize = 10;

/// Parameter handles for one layer.
#[derive(Debug, Clone)]
struct LayerIds {
    weight: ParamId,
    log_scale: ParamId,
    bias: ParamId,
    /// Absent on the final layer (no PReLU there).
    slope: Option<ParamId>,
}

/// Parameter handles and dimensions of the whole flow. The actual values
/// live in the [`ParamStore`] the model was registered on.
#[derive(Debug, Clone)]
pub struct FlowModel {
    dim: usize,
    layers: Vec<LayerIds>,
}

impl FlowModel {
    /// Registers a randomly initialized flow. Weights start as Gaussian
    /// matrices (their orthogonal factors are then uniformly distributed
    /// rotations); scales start at 1, biases at 0 and PReLU slopes at 1, so
    /// the initial map is linear with zero log-determinant — a smooth
    /// starting point whose nonlinearity emerges as the slopes move.
    pub fn register(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        dim: usize,
        n_layers: usize,
        prefix: &str,
    ) -> Self {
        Self::register_with(store, dim, n_layers, prefix, |store, name, kind| match kind {
            Init::Weight => store.insert(name, params::normal(rng, dim, dim, 1.0 / (dim as f64).sqrt())),
            Init::LogScale | Init::Bias => store.insert(name, params::zeros(1, dim)),
            Init::Slope => store.insert(name, params::full(1, dim, 1.0)),
        })
    }

    /// Registers an identity-initialized flow: orthogonal factor I, scale 1,
    /// bias 0, slope 1 — the end-to-end identity map with zero log-det.
    pub fn register_identity(
        store: &mut ParamStore,
        dim: usize,
        n_layers: usize,
        prefix: &str,
    ) -> Self {
        Self::register_with(store, dim, n_layers, prefix, |store, name, kind| match kind {
            Init::Weight => store.insert(name, Mat::eye(dim)),
            Init::LogScale | Init::Bias => store.insert(name, params::zeros(1, dim)),
            Init::Slope => store.insert(name, params::full(1, dim, 1.0)),
        })
    }

    fn register_with(
        _store: &mut ParamStore,
        dim: usize,
        n_layers: usize,
        prefix: &str,
        mut mk: impl FnMut(&mut ParamStore, String, Init) -> ParamId,
    ) -> Self {
        assert!(dim >= 1 && n_layers >= 1, "flow needs dim ≥ 1 and ≥ 1 layer");
        let layers = (0..n_layers)
            .map(|l| {
                let last = l + 1 == n_layers;
                LayerIds {
                    weight: mk(_store, format!("{prefix}.layer{l:02}.weight"), Init::Weight),
                    log_scale: mk(_store, format!("{prefix}.layer{l:02}.log_scale"), Init::LogScale),
                    bias: mk(_store, format!("{prefix}.layer{l:02}.bias"), Init::Bias),
                    slope: (!last).then(|| mk(_store, format!("{prefix}.layer{l:02}.slope"), Init::Slope)),
                }
            })
            .collect();
        Self { dim, layers }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Tape forward: maps a batch (B×d) to the latent (B×d) and the per-row
    /// log-determinant (B×1).
    pub fn transform_graph(&self, g: &mut Graph, bound: &BoundParams, x: Var) -> (Var, Var) {
        assert_eq!(g.value(x).ncols(), self.dim, "flow input width mismatch");
        let rows = g.value(x).nrows();
        let mut z = x;
        let mut logdet = g.leaf(Mat::zeros((rows, 1)));
        for layer in &self.layers {
            let q = g.qr_orth(bound.var(layer.weight));
            let qt = g.transpose(q);
            z = g.matmul(z, qt);
            let scale = g.exp(bound.var(layer.log_scale));
            z = g.mul_row(z, scale);
            z = g.add_row(z, bound.var(layer.bias));
            let scale_term = g.sum_all(bound.var(layer.log_scale));
            logdet = g.add_scalar(logdet, scale_term);
            if let Some(slope) = layer.slope {
                // The negative-side indicator is a constant of the backward
                // pass (its own derivative is zero almost everywhere).
                let mask = g.value(z).mapv(|v| if v < 0.0 { 1.0 } else { 0.0 });
                let slope_c = g.clamp_min(bound.var(slope), MIN_SLOPE);
                z = g.prelu(z, slope_c);
                let ln_slope = g.ln(slope_c);
                let mask_leaf = g.leaf(mask);
                let masked = g.mul_row(mask_leaf, ln_slope);
                let slope_term = g.row_sums(masked);
                logdet = g.add(logdet, slope_term);
            }
        }
        (z, logdet)
    }

    /// Tape NLL per row (B×1): `d/2·ln(2π) + ‖s‖²/2 − logdet`.
    pub fn nll_graph(&self, g: &mut Graph, bound: &BoundParams, x: Var) -> Var {
        let (s, logdet) = self.transform_graph(g, bound, x);
        let sq = g.mul(s, s);
        let half_norm = g.row_sums(sq);
        let half_norm = g.scale(half_norm, 0.5);
        let centered = g.sub(half_norm, logdet);
        g.add_const(centered, self.dim as f64 / 2.0 * LN_2PI)
    }

    /// Snapshots current parameter values into a standalone evaluator for
    /// scoring, inversion and density work outside the tape.
    pub fn materialize(&self, store: &ParamStore) -> FlowTransform {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (q, _) = linalg::qr(store.value(l.weight));
                MaterializedLayer {
                    q,
                    scale: store.value(l.log_scale).mapv(f64::exp),
                    log_scale_sum: store.value(l.log_scale).sum(),
                    bias: store.value(l.bias).clone(),
                    slope: l
                        .slope
                        .map(|s| store.value(s).mapv(|v| v.max(MIN_SLOPE))),
                }
            })
            .collect();
        FlowTransform { dim: self.dim, layers }
    }
}

enum Init {
    Weight,
    LogScale,
    Bias,
    Slope,
}

struct MaterializedLayer {
    q: Mat,
    scale: Mat,
    log_scale_sum: f64,
    bias: Mat,
    slope: Option<Mat>,
}

/// Value-level flow evaluator with frozen parameters.
pub struct FlowTransform {
    dim: usize,
    layers: Vec<MaterializedLayer>,
}

impl FlowTransform {
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_width(&self, m: &Mat) -> Result<()> {
        if m.ncols() != self.dim {
            return Err(Error::Shape(format!(
                "flow expects width {}, got {}",
                self.dim,
                m.ncols()
            )));
        }
        Ok(())
    }

    /// Forward map of a batch (B×d) → (latent B×d, per-row logdet).
    pub fn forward(&self, x: &Mat) -> Result<(Mat, Vec<f64>)> {
        self.check_width(x)?;
        let mut z = x.clone();
        let mut logdet = vec![0.0f64; x.nrows()];
        for layer in &self.layers {
            z = z.dot(&layer.q.t());
            for mut row in z.rows_mut() {
                for (v, (s, b)) in row
                    .iter_mut()
                    .zip(layer.scale.row(0).iter().zip(layer.bias.row(0).iter()))
                {
                    *v = *v * s + b;
                }
            }
            for ld in logdet.iter_mut() {
                *ld += layer.log_scale_sum;
            }
            if let Some(slope) = &layer.slope {
                for (i, mut row) in z.rows_mut().into_iter().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        if *v < 0.0 {
                            let a = slope[[0, j]];
                            *v *= a;
                            logdet[i] += a.ln();
                        }
                    }
                }
            }
        }
        Ok((z, logdet))
    }

    /// Exact layer-by-layer inversion of [`FlowTransform::forward`].
    pub fn inverse(&self, s: &Mat) -> Result<Mat> {
        self.check_width(s)?;
        let mut z = s.clone();
        for layer in self.layers.iter().rev() {
            if let Some(slope) = &layer.slope {
                for mut row in z.rows_mut() {
                    for (j, v) in row.iter_mut().enumerate() {
                        // Positive slopes preserve sign, so the branch is
                        // recoverable from the output sign.
                        if *v < 0.0 {
                            *v /= slope[[0, j]];
                        }
                    }
                }
            }
            for mut row in z.rows_mut() {
                for (v, (sc, b)) in row
                    .iter_mut()
                    .zip(layer.scale.row(0).iter().zip(layer.bias.row(0).iter()))
                {
                    *v = (*v - b) / sc;
                }
            }
            z = z.dot(&layer.q);
        }
        Ok(z)
    }

    /// Per-row NLL of a batch: `d/2·ln(2π) + ‖s‖²/2 − logdet`.
    pub fn nll(&self, x: &Mat) -> Result<Vec<f64>> {
        let (s, logdet) = self.forward(x)?;
        let base = self.dim as f64 / 2.0 * LN_2PI;
        Ok(s
            .rows()
            .into_iter()
            .zip(logdet)
            .map(|(row, ld)| base + 0.5 * row.iter().map(|v| v * v).sum::<f64>() - ld)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::check;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;

    fn random_flow(seed: u64, dim: usize, layers: usize) -> (ParamStore, FlowModel) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = FlowModel::register(&mut store, &mut rng, dim, layers, "flow");
        (store, model)
    }

    fn random_batch(seed: u64, rows: usize, dim: usize) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_shape_fn((rows, dim), |_| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn identity_flow_is_the_identity_with_zero_logdet() {
        let mut store = ParamStore::new();
        let model = FlowModel::register_identity(&mut store, 4, 3, "flow");
        let f = model.materialize(&store);
        let x = random_batch(1, 5, 4);
        let (s, logdet) = f.forward(&x).unwrap();
        assert_eq!(s, x);
        assert!(logdet.iter().all(|v| *v == 0.0));
        assert_eq!(f.inverse(&x).unwrap(), x);
        // Zero maps to zero.
        let zero = Mat::zeros((1, 4));
        assert_eq!(f.forward(&zero).unwrap().0, zero);
    }

    #[test]
    fn identity_flow_nll_matches_gaussian_closed_forms() {
        let mut store = ParamStore::new();
        let model = FlowModel::register_identity(&mut store, 2, 1, "flow");
        let f = model.materialize(&store);
        // At the mode, NLL = d/2·ln(2π).
        let at_zero = f.nll(&Mat::zeros((1, 2))).unwrap()[0];
        assert!((at_zero - LN_2PI).abs() < 1e-12);

        let mut store1 = ParamStore::new();
        let model1 = FlowModel::register_identity(&mut store1, 1, 1, "flow");
        let f1 = model1.materialize(&store1);
        let at_one = f1.nll(&array![[1.0]]).unwrap()[0];
        assert!((at_one - (0.5 + 0.5 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn diagonal_scales_give_product_logdet() {
        // One linear-only layer (a single layer is the last layer, so no
        // PReLU) with scales (2, 3): logdet = ln 6 for every input.
        let mut store = ParamStore::new();
        let model = FlowModel::register_identity(&mut store, 2, 1, "flow");
        let id = store.id_of("flow.layer00.log_scale").unwrap();
        store
            .set_value(id, array![[2.0f64.ln(), 3.0f64.ln()]])
            .unwrap();
        let f = model.materialize(&store);
        let (_, logdet) = f.forward(&random_batch(2, 4, 2)).unwrap();
        for ld in logdet {
            assert!((ld - 6.0f64.ln()).abs() < 1e-12, "logdet {ld}");
        }
    }

    #[test]
    fn forward_inverse_round_trip() {
        for (seed, dim, layers) in [(1u64, 2usize, 3usize), (2, 8, 5), (3, 64, 10)] {
            let (store, model) = random_flow(seed, dim, layers);
            let f = model.materialize(&store);
            let x = random_batch(seed + 10, 50, dim);
            let (s, _) = f.forward(&x).unwrap();
            let back = f.inverse(&s).unwrap();
            let max_diff = x
                .iter()
                .zip(back.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff < 1e-5, "round-trip drift {max_diff} at d={dim}");
        }
    }

    /// Finite-difference Jacobian oracle: the analytic logdet must match
    /// ln |det J| of the numerically differentiated map.
    #[test]
    fn logdet_matches_numerical_jacobian() {
        let (store, model) = random_flow(7, 3, 3);
        let f = model.materialize(&store);
        let x = random_batch(8, 1, 3);
        let (_, logdet) = f.forward(&x).unwrap();
        let h = 1e-6;
        let mut jac = Mat::zeros((3, 3));
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[0, j]] += h;
            xm[[0, j]] -= h;
            let (sp, _) = f.forward(&xp).unwrap();
            let (sm, _) = f.forward(&xm).unwrap();
            for i in 0..3 {
                jac[[i, j]] = (sp[[0, i]] - sm[[0, i]]) / (2.0 * h);
            }
        }
        let fd_logdet = linalg::log_abs_det(&jac);
        assert!(
            (logdet[0] - fd_logdet).abs() < 1e-4,
            "analytic {} vs numerical {}",
            logdet[0],
            fd_logdet
        );
    }

    /// Quadrature oracle: exp(−NLL) must integrate to 1 over the plane.
    #[test]
    fn density_integrates_to_one_in_2d() {
        let (store, model) = random_flow(11, 2, 3);
        let f = model.materialize(&store);
        // Bound the integration box through the inverse image of a wide
        // latent box, then integrate on a uniform grid.
        let mut corners = Vec::new();
        let lim = 6.5;
        let steps = 9;
        for i in 0..=steps {
            for j in 0..=steps {
                let a = -lim + 2.0 * lim * i as f64 / steps as f64;
                let b = -lim + 2.0 * lim * j as f64 / steps as f64;
                corners.push([a, b]);
            }
        }
        let latent = Mat::from_shape_fn((corners.len(), 2), |(r, c)| corners[r][c]);
        let pre = f.inverse(&latent).unwrap();
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for row in pre.rows() {
            lo_x = lo_x.min(row[0]);
            hi_x = hi_x.max(row[0]);
            lo_y = lo_y.min(row[1]);
            hi_y = hi_y.max(row[1]);
        }
        let pad_x = 0.1 * (hi_x - lo_x);
        let pad_y = 0.1 * (hi_y - lo_y);
        let (lo_x, hi_x, lo_y, hi_y) = (lo_x - pad_x, hi_x + pad_x, lo_y - pad_y, hi_y + pad_y);
        let n = 400usize;
        let dx = (hi_x - lo_x) / n as f64;
        let dy = (hi_y - lo_y) / n as f64;
        let mut mass = 0.0f64;
        for i in 0..n {
            let x = lo_x + (i as f64 + 0.5) * dx;
            let grid = Mat::from_shape_fn((n, 2), |(j, c)| {
                if c == 0 { x } else { lo_y + (j as f64 + 0.5) * dy }
            });
            let nll = f.nll(&grid).unwrap();
            mass += nll.iter().map(|v| (-v).exp()).sum::<f64>() * dx * dy;
        }
        assert!((mass - 1.0).abs() < 0.01, "integrated mass {mass}");
    }

    #[test]
    fn graph_and_materialized_paths_agree() {
        let (store, model) = random_flow(13, 6, 4);
        let x = random_batch(14, 8, 6);
        let f = model.materialize(&store);
        let (s_val, logdet_val) = f.forward(&x).unwrap();
        let nll_val = f.nll(&x).unwrap();

        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let xv = g.leaf(x.clone());
        let (s_g, logdet_g) = model.transform_graph(&mut g, &bound, xv);
        let mut g2 = Graph::new();
        let bound2 = store.bind(&mut g2);
        let xv2 = g2.leaf(x.clone());
        let nll_g = model.nll_graph(&mut g2, &bound2, xv2);

        let diff_s = g
            .value(s_g)
            .iter()
            .zip(s_val.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff_s < 1e-12);
        for (i, ld) in logdet_val.iter().enumerate() {
            assert!((g.value(logdet_g)[[i, 0]] - ld).abs() < 1e-12);
        }
        for (i, v) in nll_val.iter().enumerate() {
            assert!((g2.value(nll_g)[[i, 0]] - v).abs() < 1e-12);
        }
    }

    /// End-to-end gradient of the mean NLL with respect to every flow
    /// parameter, against finite differences.
    #[test]
    fn flow_parameter_gradients_pass_fd_check() {
        let (store, model) = random_flow(17, 4, 3);
        let x = random_batch(18, 3, 4);

        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let xv = g.leaf(x.clone());
        let nll = model.nll_graph(&mut g, &bound, xv);
        let loss = g.mean_all(nll);
        let grads = g.backward(loss);

        for id in 0..store.len() {
            let pid = crate::numeric::ParamId(id);
            let analytic = grads.get_or_zeros(bound.var(pid), store.value(pid).dim());
            let f = |m: &Mat| {
                let mut probe = store.clone();
                probe.set_value(pid, m.clone()).unwrap();
                let mut g = Graph::new();
                let bound = probe.bind(&mut g);
                let xv = g.leaf(x.clone());
                let nll = model.nll_graph(&mut g, &bound, xv);
                let loss = g.mean_all(nll);
                g.value(loss)[[0, 0]]
            };
            let err = check::gradient_check(f, store.value(pid), &analytic, 1e-5).unwrap();
            assert!(
                err < 1e-4,
                "flow param '{}' gradient error {err}",
                store.name(pid)
            );
        }
    }

    /// Anomaly-direction sanity check: fit the flow on one Gaussian blob by
    /// plain gradient descent; fresh samples from that blob must then score
    /// lower (more likely) than samples from a far-away blob.
    #[test]
    fn trained_flow_orders_in_and_out_of_distribution() {
        let dim = 2;
        let (mut store, model) = random_flow(21, dim, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let dist = rand_distr::Normal::new(0.0f64, 0.5).unwrap();
        let train = Mat::from_shape_fn((128, dim), |(_, c)| {
            3.0 * (c == 0) as i32 as f64 + rand_distr::Distribution::sample(&dist, &mut rng)
        });
        let lr = 0.05;
        for _ in 0..300 {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let xv = g.leaf(train.clone());
            let nll = model.nll_graph(&mut g, &bound, xv);
            let loss = g.mean_all(nll);
            let grads = g.backward(loss);
            for id in 0..store.len() {
                let pid = crate::numeric::ParamId(id);
                let step = grads.get_or_zeros(bound.var(pid), store.value(pid).dim());
                let updated = store.value(pid) - &(step * lr);
                store.set_value(pid, updated).unwrap();
            }
        }
        let f = model.materialize(&store);
        let fresh = Mat::from_shape_fn((64, dim), |(_, c)| {
            3.0 * (c == 0) as i32 as f64 + rand_distr::Distribution::sample(&dist, &mut rng)
        });
        let far = Mat::from_shape_fn((64, dim), |(_, c)| {
            -6.0 * (c == 1) as i32 as f64 + rand_distr::Distribution::sample(&dist, &mut rng)
        });
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let nll_fresh = mean(f.nll(&fresh).unwrap());
        let nll_far = mean(f.nll(&far).unwrap());
        assert!(
            nll_fresh < nll_far,
            "in-distribution NLL {nll_fresh} should be below out-of-distribution {nll_far}"
        );
    }
}
