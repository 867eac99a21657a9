//! Three-output feedforward network trained with a weighted per-mode RMSE
//! loss.
//!
//! Architecture: five embedding layers and five prediction layers, all fully
//! connected with rectifier activations, then a linear three-unit output.
//! The batch loss is `sum_k w_k * RMSE_k` over the three outputs with
//! weights (1, 4, 2) by default. Training is plain mini-batch Adam with
//! early stopping on a validation split; everything is seeded and
//! single-threaded, so identical inputs give bitwise-identical models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::{derive_seed, Rng};
use crate::scalar::Real;

pub const N_OUTPUTS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FnnSpec<F> {
    pub input_dim: usize,
    pub embedding_widths: [usize; 5],
    pub prediction_widths: [usize; 5],
    /// Loss weights for (LLI, LAMpe, LAMne).
    pub loss_weights: [F; 3],
    pub learning_rate: F,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stopping patience, in epochs without validation improvement.
    pub patience: usize,
    /// Validation fraction used when no explicit split is provided.
    pub val_fraction: f64,
    pub seed: u64,
}

impl<F: Real> FnnSpec<F> {
    pub fn with_input_dim(input_dim: usize) -> Self {
        Self {
            input_dim,
            embedding_widths: [64; 5],
            prediction_widths: [64; 5],
            loss_weights: [F::one(), F::c(4.0), F::c(2.0)],
            learning_rate: F::c(1e-3),
            batch_size: 64,
            max_epochs: 500,
            patience: 25,
            val_fraction: 0.15,
            seed: 0,
        }
    }

    fn hidden_widths(&self) -> Vec<usize> {
        self.embedding_widths
            .iter()
            .chain(self.prediction_widths.iter())
            .copied()
            .collect()
    }
}

/// The Eq-style training loss: weighted sum of per-output RMSEs.
pub fn weighted_rmse_loss<F: Real>(per_output_rmse: &[F; 3], weights: &[F; 3]) -> F {
    per_output_rmse
        .iter()
        .zip(weights)
        .fold(F::zero(), |acc, (r, w)| acc + *r * *w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer<F> {
    /// (out x in) weights.
    w: Mat<F>,
    b: Vec<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnModel<F> {
    layers: Vec<Layer<F>>,
    pub loss_weights: [F; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FnnTrainReport<F> {
    pub epochs_run: usize,
    pub final_train_loss: F,
    pub best_val_loss: F,
}

impl<F: Real> FnnModel<F> {
    fn init(spec: &FnnSpec<F>, rng: &mut Rng) -> Self {
        let mut dims = vec![spec.input_dim];
        dims.extend(spec.hidden_widths());
        dims.push(N_OUTPUTS);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let mut w = Mat::zeros(fan_out, fan_in);
                for i in 0..fan_out {
                    for j in 0..fan_in {
                        w[(i, j)] = rng.normal(F::zero(), F::c(std));
                    }
                }
                Layer {
                    w,
                    b: vec![F::zero(); fan_out],
                }
            })
            .collect();
        Self {
            layers,
            loss_weights: spec.loss_weights,
        }
    }

    /// Forward pass keeping every activation (a[0] is the input batch).
    fn forward(&self, x: &Mat<F>) -> Vec<Mat<F>> {
        let n_layers = self.layers.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = &acts[l];
            let rows = prev.n_rows();
            let out_dim = layer.b.len();
            let mut next = Mat::zeros(rows, out_dim);
            let last = l + 1 == n_layers;
            for i in 0..rows {
                let input = prev.row(i);
                for o in 0..out_dim {
                    let mut z = layer.b[o];
                    let wrow = layer.w.row(o);
                    for (wv, xv) in wrow.iter().zip(input) {
                        z += *wv * *xv;
                    }
                    next[(i, o)] = if last { z } else { z.max(F::zero()) };
                }
            }
            acts.push(next);
        }
        acts
    }

    /// Raw predictions (no clamping).
    pub fn predict(&self, x: &Mat<F>) -> Vec<[F; 3]> {
        let out = self.forward(x).pop().expect("forward produces output");
        (0..out.n_rows())
            .map(|i| {
                let r = out.row(i);
                [r[0], r[1], r[2]]
            })
            .collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.n_rows() * l.w.n_cols() + l.b.len())
            .sum()
    }

    /// A freshly initialized (untrained) network from the spec's seed;
    /// exposed for gradient diagnostics.
    pub fn seeded_init(spec: &FnnSpec<F>) -> Self {
        let mut rng = Rng::new(derive_seed(spec.seed, "fnn.init"));
        Self::init(spec, &mut rng)
    }

    /// Every parameter's value, flattened layer by layer (weights
    /// row-major, then biases). Paired with [`FnnModel::set_parameter`] for
    /// finite-difference probing.
    pub fn parameter(&self, index: usize) -> F {
        let (l, k) = self.locate(index);
        let layer = &self.layers[l];
        let nw = layer.w.n_rows() * layer.w.n_cols();
        if k < nw {
            layer.w[(k / layer.w.n_cols(), k % layer.w.n_cols())]
        } else {
            layer.b[k - nw]
        }
    }

    pub fn set_parameter(&mut self, index: usize, value: F) {
        let (l, k) = self.locate(index);
        let layer = &mut self.layers[l];
        let cols = layer.w.n_cols();
        let nw = layer.w.n_rows() * cols;
        if k < nw {
            layer.w[(k / cols, k % cols)] = value;
        } else {
            layer.b[k - nw] = value;
        }
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            let here = layer.w.n_rows() * layer.w.n_cols() + layer.b.len();
            if index < here {
                return (l, index);
            }
            index -= here;
        }
        panic!("parameter index out of range");
    }
}

/// Clamp a raw output to [0, 1] for reporting.
pub fn clamp01<F: Real>(v: F) -> F {
    v.max(F::zero()).min(F::one())
}

/// Batch loss and gradients for every parameter, on the exact code path
/// training uses. Public so gradient checks can probe it; the flattened
/// gradient order matches [`FnnModel::parameter`].
#[allow(clippy::needless_range_loop)]
pub fn loss_and_grads<F: Real>(
    model: &FnnModel<F>,
    x: &Mat<F>,
    y: &Mat<F>,
) -> (F, Vec<Mat<F>>, Vec<Vec<F>>) {
    let batch = x.n_rows();
    let acts = model.forward(x);
    let pred = acts.last().expect("output activation");

    // Per-output RMSE and the loss.
    let bf = F::from_count(batch);
    let mut rmse = [F::zero(); N_OUTPUTS];
    for k in 0..N_OUTPUTS {
        let mut sq = F::zero();
        for i in 0..batch {
            let e = pred[(i, k)] - y[(i, k)];
            sq += e * e;
        }
        rmse[k] = (sq / bf).sqrt();
    }
    let loss = weighted_rmse_loss(&rmse, &model.loss_weights);

    // dL/dpred, then backprop.
    let mut delta = Mat::zeros(batch, N_OUTPUTS);
    for k in 0..N_OUTPUTS {
        if rmse[k] <= F::zero() {
            continue;
        }
        let scale = model.loss_weights[k] / (bf * rmse[k]);
        for i in 0..batch {
            delta[(i, k)] = scale * (pred[(i, k)] - y[(i, k)]);
        }
    }

    let mut grad_w: Vec<Mat<F>> = Vec::with_capacity(model.layers.len());
    let mut grad_b: Vec<Vec<F>> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        grad_w.push(Mat::zeros(layer.w.n_rows(), layer.w.n_cols()));
        grad_b.push(vec![F::zero(); layer.b.len()]);
    }

    let mut current = delta;
    for l in (0..model.layers.len()).rev() {
        let input = &acts[l];
        let out_dim = model.layers[l].b.len();
        let in_dim = model.layers[l].w.n_cols();
        for i in 0..x.n_rows() {
            let d = current.row(i);
            let a = input.row(i);
            for o in 0..out_dim {
                let dv = d[o];
                if dv == F::zero() {
                    continue;
                }
                let grow = grad_w[l].row_mut(o);
                for (g, av) in grow.iter_mut().zip(a) {
                    *g += dv * *av;
                }
                grad_b[l][o] += dv;
            }
        }
        if l > 0 {
            // delta_prev = (delta . W) gated by the rectifier's derivative.
            let mut prev = Mat::zeros(x.n_rows(), in_dim);
            for i in 0..x.n_rows() {
                let d = current.row(i);
                for o in 0..out_dim {
                    let dv = d[o];
                    if dv == F::zero() {
                        continue;
                    }
                    let wrow = model.layers[l].w.row(o);
                    let prow = prev.row_mut(i);
                    for (p, wv) in prow.iter_mut().zip(wrow) {
                        *p += dv * *wv;
                    }
                }
                let arow = input.row(i);
                let prow = prev.row_mut(i);
                for (p, av) in prow.iter_mut().zip(arow) {
                    if *av <= F::zero() {
                        *p = F::zero();
                    }
                }
            }
            current = prev;
        }
    }

    (loss, grad_w, grad_b)
}

struct Adam<F> {
    m_w: Vec<Mat<F>>,
    v_w: Vec<Mat<F>>,
    m_b: Vec<Vec<F>>,
    v_b: Vec<Vec<F>>,
    t: i32,
}

impl<F: Real> Adam<F> {
    fn new(model: &FnnModel<F>) -> Self {
        Self {
            m_w: model.layers.iter().map(|l| Mat::zeros(l.w.n_rows(), l.w.n_cols())).collect(),
            v_w: model.layers.iter().map(|l| Mat::zeros(l.w.n_rows(), l.w.n_cols())).collect(),
            m_b: model.layers.iter().map(|l| vec![F::zero(); l.b.len()]).collect(),
            v_b: model.layers.iter().map(|l| vec![F::zero(); l.b.len()]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut FnnModel<F>, grad_w: &[Mat<F>], grad_b: &[Vec<F>], lr: F) {
        let beta1 = F::c(0.9);
        let beta2 = F::c(0.999);
        let eps = F::c(1e-8);
        self.t += 1;
        let bc1 = F::one() - beta1.powi(self.t);
        let bc2 = F::one() - beta2.powi(self.t);
        for (l, layer) in model.layers.iter_mut().enumerate() {
            for o in 0..layer.w.n_rows() {
                for j in 0..layer.w.n_cols() {
                    let g = grad_w[l][(o, j)];
                    let m = &mut self.m_w[l][(o, j)];
                    *m = beta1 * *m + (F::one() - beta1) * g;
                    let v = &mut self.v_w[l][(o, j)];
                    *v = beta2 * *v + (F::one() - beta2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    layer.w[(o, j)] -= lr * update;
                }
                let g = grad_b[l][o];
                let m = &mut self.m_b[l][o];
                *m = beta1 * *m + (F::one() - beta1) * g;
                let v = &mut self.v_b[l][o];
                *v = beta2 * *v + (F::one() - beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                layer.b[o] -= lr * update;
            }
        }
    }
}

/// Train the network. `val_mask`, when given, marks validation rows (the
/// caller typically holds out whole cells); otherwise a seeded row split of
/// `val_fraction` is used.
pub fn fit_fnn<F: Real>(
    x: &Mat<F>,
    y: &Mat<F>,
    spec: &FnnSpec<F>,
    val_mask: Option<&[bool]>,
) -> Result<(FnnModel<F>, FnnTrainReport<F>)> {
    let n = x.n_rows();
    if x.n_cols() != spec.input_dim {
        return Err(Error::Parameter(format!(
            "input has {} columns but the spec declares {}",
            x.n_cols(),
            spec.input_dim
        )));
    }
    if y.n_cols() != N_OUTPUTS || y.n_rows() != n {
        return Err(Error::Parameter("labels must be n x 3".to_string()));
    }
    if spec.batch_size == 0 || spec.max_epochs == 0 {
        return Err(Error::Parameter("batch size and epoch budget must be positive".to_string()));
    }

    // Train/validation split.
    let mask: Vec<bool> = match val_mask {
        Some(m) => {
            if m.len() != n {
                return Err(Error::Parameter("validation mask length mismatch".to_string()));
            }
            m.to_vec()
        }
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = Rng::new(derive_seed(spec.seed, "fnn.valsplit"));
            rng.shuffle(&mut idx);
            let n_val = ((spec.val_fraction * n as f64).round() as usize).clamp(1, n - 1);
            let mut m = vec![false; n];
            for &i in idx.iter().take(n_val) {
                m[i] = true;
            }
            m
        }
    };
    let train_idx: Vec<usize> = (0..n).filter(|i| !mask[*i]).collect();
    let val_idx: Vec<usize> = (0..n).filter(|i| mask[*i]).collect();
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Parameter("both train and validation splits must be non-empty".to_string()));
    }

    let gather = |idx: &[usize], m: &Mat<F>| -> Mat<F> {
        Mat::from_rows(idx.iter().map(|&i| m.row(i).to_vec()).collect())
    };
    let val_x = gather(&val_idx, x);
    let val_y = gather(&val_idx, y);

    let mut rng = Rng::new(derive_seed(spec.seed, "fnn.init"));
    let mut model = FnnModel::init(spec, &mut rng);
    let mut adam = Adam::new(&model);
    let mut shuffle_rng = Rng::new(derive_seed(spec.seed, "fnn.batches"));

    let mut order = train_idx.clone();
    let mut best_val = F::infinity();
    let mut best_model = model.clone();
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;
    let mut last_train_loss = F::zero();

    for epoch in 0..spec.max_epochs {
        epochs_run = epoch + 1;
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = F::zero();
        let mut batches = 0usize;
        for chunk in order.chunks(spec.batch_size) {
            let bx = gather(chunk, x);
            let by = gather(chunk, y);
            let (loss, gw, gb) = loss_and_grads(&model, &bx, &by);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training loss diverged (epoch {epoch}, batch {batches}, step size {}, batch size {})",
                    spec.learning_rate, spec.batch_size
                )));
            }
            adam.step(&mut model, &gw, &gb, spec.learning_rate);
            epoch_loss += loss;
            batches += 1;
        }
        last_train_loss = epoch_loss / F::from_count(batches.max(1));

        let (val_loss, _, _) = loss_and_grads(&model, &val_x, &val_y);
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "validation loss diverged (epoch {epoch}, step size {})",
                spec.learning_rate
            )));
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_model = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > spec.patience {
                break;
            }
        }
    }

    Ok((
        best_model,
        FnnTrainReport {
            epochs_run,
            final_train_loss: last_train_loss,
            best_val_loss: best_val,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_arithmetic_matches_weights() {
        let rmse = [1.0, 1.0, 1.0];
        let weights = [1.0, 4.0, 2.0];
        assert_eq!(weighted_rmse_loss(&rmse, &weights), 7.0);
        assert_eq!(weighted_rmse_loss(&[0.0; 3], &weights), 0.0);
    }

    fn tiny_spec(input_dim: usize, seed: u64) -> FnnSpec<f64> {
        FnnSpec {
            embedding_widths: [8; 5],
            prediction_widths: [8; 5],
            ..FnnSpec::with_input_dim(input_dim)
        }
        .seeded(seed)
    }

    impl FnnSpec<f64> {
        fn seeded(mut self, seed: u64) -> Self {
            self.seed = seed;
            self
        }
    }

    fn batch_fixture(n: usize, d: usize, seed: u64) -> (Mat<f64>, Mat<f64>) {
        let mut rng = Rng::new(seed);
        let x = Mat::from_rows((0..n).map(|_| (0..d).map(|_| rng.next_f64()).collect()).collect());
        let y = Mat::from_rows(
            (0..n)
                .map(|i| {
                    let r = x.row(i);
                    let s: f64 = r.iter().sum::<f64>() / d as f64;
                    vec![0.3 * s, 0.5 * s * s, 0.2 + 0.1 * s]
                })
                .collect(),
        );
        (x, y)
    }

    /// Central finite differences against the analytic gradients on the
    /// exact training code path.
    fn gradcheck(model: &FnnModel<f64>, x: &Mat<f64>, y: &Mat<f64>) {
        let (_, gw, gb) = loss_and_grads(model, x, y);
        let h = 1e-5;
        let mut checked = 0usize;
        let mut probe = model.clone();
        for l in 0..model.layers.len() {
            let (rows, cols) = (model.layers[l].w.n_rows(), model.layers[l].w.n_cols());
            for o in 0..rows {
                for j in 0..cols {
                    let orig = probe.layers[l].w[(o, j)];
                    probe.layers[l].w[(o, j)] = orig + h;
                    let (lp, _, _) = loss_and_grads(&probe, x, y);
                    probe.layers[l].w[(o, j)] = orig - h;
                    let (lm, _, _) = loss_and_grads(&probe, x, y);
                    probe.layers[l].w[(o, j)] = orig;
                    let numeric = (lp - lm) / (2.0 * h);
                    let analytic = gw[l][(o, j)];
                    let denom = analytic.abs().max(numeric.abs());
                    if denom > 1e-8 {
                        let rel = (analytic - numeric).abs() / denom;
                        assert!(rel < 1e-4, "layer {l} w[{o},{j}]: {analytic} vs {numeric} (rel {rel})");
                        checked += 1;
                    }
                }
                let orig = probe.layers[l].b[o];
                probe.layers[l].b[o] = orig + h;
                let (lp, _, _) = loss_and_grads(&probe, x, y);
                probe.layers[l].b[o] = orig - h;
                let (lm, _, _) = loss_and_grads(&probe, x, y);
                probe.layers[l].b[o] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = gb[l][o];
                let denom: f64 = analytic.abs().max(numeric.abs());
                if denom > 1e-8 {
                    let rel = (analytic - numeric).abs() / denom;
                    assert!(rel < 1e-4, "layer {l} b[{o}]: {analytic} vs {numeric}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 100, "gradcheck exercised only {checked} parameters");
    }

    #[test]
    fn gradients_match_finite_differences_at_init_and_after_steps() {
        let spec = tiny_spec(4, 61);
        let (x, y) = batch_fixture(3, 4, 62);
        let mut rng = Rng::new(derive_seed(spec.seed, "fnn.init"));
        let mut model = FnnModel::init(&spec, &mut rng);
        gradcheck(&model, &x, &y);

        // Ten Adam steps, then check again.
        let mut adam = Adam::new(&model);
        for _ in 0..10 {
            let (_, gw, gb) = loss_and_grads(&model, &x, &y);
            adam.step(&mut model, &gw, &gb, 1e-3);
        }
        gradcheck(&model, &x, &y);
    }

    #[test]
    fn architecture_is_ten_hidden_plus_output() {
        let spec = tiny_spec(5, 63);
        let mut rng = Rng::new(1);
        let model = FnnModel::init(&spec, &mut rng);
        assert_eq!(model.layers.len(), 11);
        assert_eq!(model.layers.last().unwrap().b.len(), 3);
    }

    #[test]
    fn training_learns_a_simple_mapping() {
        let (x, y) = batch_fixture(400, 4, 64);
        let spec = FnnSpec {
            max_epochs: 300,
            patience: 40,
            ..tiny_spec(4, 65)
        };
        let (model, report) = fit_fnn(&x, &y, &spec, None).unwrap();
        // Constant-mean predictor loss as the no-skill baseline.
        let mut baseline_rmse = [0.0; 3];
        for k in 0..3 {
            let col: Vec<f64> = (0..y.n_rows()).map(|i| y[(i, k)]).collect();
            baseline_rmse[k] = crate::stats::std_dev(&col);
        }
        let baseline = weighted_rmse_loss(&baseline_rmse, &spec.loss_weights);
        assert!(
            report.best_val_loss < 0.5 * baseline,
            "val loss {} vs baseline {baseline}",
            report.best_val_loss
        );
        let preds = model.predict(&x);
        let mut sq = 0.0;
        for (p, i) in preds.iter().zip(0..x.n_rows()) {
            for k in 0..3 {
                sq += (p[k] - y[(i, k)]).powi(2);
            }
        }
        let rmse = (sq / (3.0 * x.n_rows() as f64)).sqrt();
        assert!(rmse < 0.12, "rmse {rmse}");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (x, y) = batch_fixture(120, 4, 66);
        let spec = FnnSpec {
            max_epochs: 20,
            ..tiny_spec(4, 67)
        };
        let (a, _) = fit_fnn(&x, &y, &spec, None).unwrap();
        let (b, _) = fit_fnn(&x, &y, &spec, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predict(&x), b.predict(&x));
    }

    #[test]
    fn divergence_aborts_with_diagnostics() {
        // Rectifier stacks overflow f64 once parameters reach ~1e30; an
        // absurd step size gets there in one update.
        let (x, y) = batch_fixture(100, 4, 68);
        let spec = FnnSpec {
            learning_rate: 1e200,
            max_epochs: 50,
            ..tiny_spec(4, 69)
        };
        match fit_fnn(&x, &y, &spec, None) {
            Err(Error::Numerical(msg)) => {
                assert!(msg.contains("step size"), "{msg}");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn explicit_validation_mask_is_respected() {
        let (x, y) = batch_fixture(50, 4, 70);
        let mut mask = vec![false; 50];
        for m in mask.iter_mut().take(10) {
            *m = true;
        }
        let spec = FnnSpec {
            max_epochs: 5,
            ..tiny_spec(4, 71)
        };
        assert!(fit_fnn(&x, &y, &spec, Some(&mask)).is_ok());
        let all = vec![true; 50];
        assert!(fit_fnn(&x, &y, &spec, Some(&all)).is_err());
    }

    #[test]
    fn clamping_is_a_reporting_concern() {
        assert_eq!(clamp01(-0.2), 0.0);
        assert_eq!(clamp01(0.5), 0.5);
        assert_eq!(clamp01(1.7), 1.0);
    }
}
