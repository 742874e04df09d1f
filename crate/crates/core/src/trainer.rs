//! Mini-batch Adam on mean squared error with L2 weight decay.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::pairs::PairExample;
use crate::error::{Error, Result};
use crate::model::{
    input_features, ArchitectureConfig, DemandModel, EncodedBatch, FeatureSchema, FeatureStats, StandardizationStats,
};
use crate::numeric::{ParamStore, Tape, Tensor2, Var};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Per-row chance that a categorical level is replaced by the unknown
    /// index during training.
    pub unknown_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 128,
            learning_rate: 0.01,
            l2_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            shuffle: true,
            unknown_rate: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_decay >= 0.0) || !self.l2_decay.is_finite() {
            return Err(Error::Config(format!("l2 decay must be >= 0, got {}", self.l2_decay)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
        }
        if !(0.0..1.0).contains(&self.unknown_rate) {
            return Err(Error::Config(format!(
                "unknown rate must be in [0, 1), got {}",
                self.unknown_rate
            )));
        }
        Ok(())
    }
}

fn column_stats(values: impl Iterator<Item = f64> + Clone) -> FeatureStats {
    let (mut n, mut sum, mut min, mut max) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for v in values.clone() {
        n += 1;
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    if min == max {
        return FeatureStats {
            mean: min,
            std: STD_FLOOR,
        };
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    FeatureStats {
        mean,
        std: var.sqrt().max(STD_FLOOR),
    }
}

fn targets(pairs: &[PairExample]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| {
            p.target.ok_or_else(|| {
                Error::Config(format!(
                    "pair {} {}->{} has no target",
                    p.item_id, p.lag_month, p.lead_month
                ))
            })
        })
        .collect()
}

/// Means and population standard deviations of every continuous and
/// monotone input and of the target, over `train` only. Statistics describe
/// values after the log transforms `config` enables.
pub fn fit_stats(
    schema: &FeatureSchema,
    config: &ArchitectureConfig,
    train: &[PairExample],
) -> Result<StandardizationStats> {
    if train.is_empty() {
        return Err(Error::Config(
            "cannot fit standardization on an empty training split".into(),
        ));
    }
    let inputs = input_features(schema, config, train, None)?;
    let cols = |t: &Tensor2| -> Vec<FeatureStats> {
        (0..t.cols())
            .map(|c| column_stats((0..t.rows()).map(move |r| t.get(r, c))))
            .collect()
    };
    let mut y = targets(train)?;
    if config.log_target {
        y.iter_mut().for_each(|v| *v = v.ln_1p());
    }
    Ok(StandardizationStats {
        continuous: cols(&inputs.continuous),
        monotone: cols(&inputs.monotone),
        target: column_stats(y.iter().copied()),
    })
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor2,
    pub v: Tensor2,
    pub step: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Tensor2::zeros(rows, cols),
            v: Tensor2::zeros(rows, cols),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor2, grad: &Tensor2, state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if param.shape() != grad.shape() || state.m.shape() != grad.shape() {
        return Err(Error::dim("adam_step", param.shape(), grad.shape()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let p = param.data_mut();
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (i, &g) in grad.data().iter().enumerate() {
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

/// Adam states keyed by parameter position in a store.
#[derive(Debug, Clone)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            states: store
                .iter()
                .map(|(_, p)| AdamState::new(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, config: &TrainConfig) -> Result<()> {
        for (p, s) in store.iter_mut().zip(&mut self.states) {
            adam_step(&mut p.value, &p.grad, s, config)?;
        }
        Ok(())
    }
}

/// Records `l2 · Σ‖W‖²` over every decaying parameter of `store`.
pub fn l2_penalty(tape: &mut Tape, store: &ParamStore, l2: f64) -> Result<Option<Var>> {
    if l2 == 0.0 {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for (id, p) in store.iter() {
        if !p.kind.decays() {
            continue;
        }
        let w = tape.param(store, id);
        let s = tape.sum_squares(w)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    total.map(|t| tape.scale(t, l2)).transpose()
}

/// Training objective on one encoded batch: MSE against `scaled_targets`
/// plus the L2 term. Returns `(objective, mse)`.
pub fn objective(
    tape: &mut Tape,
    model: &DemandModel,
    batch: &EncodedBatch,
    scaled_targets: &[f64],
    l2: f64,
) -> Result<(Var, Var)> {
    let pred = model.forward(tape, batch)?;
    let y = tape.input(Tensor2::column(scaled_targets));
    let mse = tape.mse(pred, y)?;
    let total = match l2_penalty(tape, &model.params, l2)? {
        Some(pen) => tape.add(mse, pen)?,
        None => mse,
    };
    Ok((total, mse))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Row-weighted mean batch MSE in scaled target units.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub stats_fingerprint: String,
    pub epochs: Vec<EpochRecord>,
    pub final_param_norms: BTreeMap<String, f64>,
    /// Excluded from serialization so reruns produce identical files.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn write_loss_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_loss", "validation_loss"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.validation_loss.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<loss csv>", e))?;
        Ok(())
    }
}

fn param_norms(store: &ParamStore) -> BTreeMap<String, f64> {
    store.iter().map(|(_, p)| (p.name.clone(), p.value.norm())).collect()
}

fn scaled(model: &DemandModel, y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| model.scale_target(v)).collect()
}

/// Scaled-target MSE of the model on pre-encoded rows.
fn evaluate_loss(model: &DemandModel, batch: &EncodedBatch, y: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    let rows: Vec<usize> = (0..batch.rows()).collect();
    for chunk in rows.chunks(1024) {
        let mut tape = Tape::new();
        let sub = batch.select(chunk);
        let pred = model.forward(&mut tape, &sub)?;
        let p = tape.value(pred).data();
        total += chunk.iter().zip(p).map(|(&i, v)| (v - y[i]) * (v - y[i])).sum::<f64>();
    }
    Ok(total / y.len() as f64)
}

pub fn train(
    model: DemandModel,
    train_rows: &[PairExample],
    validation_rows: &[PairExample],
    config: &TrainConfig,
) -> Result<(DemandModel, TrainReport)> {
    train_with_hook(model, train_rows, validation_rows, config, |_, _| Ok(()))
}

/// Fits standardization on `train_rows`, then runs `config.epochs` passes
/// of shuffled mini-batch Adam. `hook` runs after every epoch.
pub fn train_with_hook<H>(
    mut model: DemandModel,
    train_rows: &[PairExample],
    validation_rows: &[PairExample],
    config: &TrainConfig,
    mut hook: H,
) -> Result<(DemandModel, TrainReport)>
where
    H: FnMut(&EpochRecord, &DemandModel) -> Result<()>,
{
    config.validate()?;
    let started = Instant::now();
    model.stats = fit_stats(&model.schema, &model.config, train_rows)?;
    let y_train = scaled(&model, &targets(train_rows)?);
    let y_val = scaled(&model, &targets(validation_rows)?);
    let enc_train = model.encode(train_rows, None)?;
    let enc_val = model.encode(validation_rows, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model.params);
    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let mut batch = enc_train.select(idx);
            batch.mask_unknown(config.unknown_rate, &mut rng);
            let yb: Vec<f64> = idx.iter().map(|&i| y_train[i]).collect();

            let mut tape = Tape::new();
            let outcome = objective(&mut tape, &model, &batch, &yb, config.l2_decay);
            let diverged = |loss: f64, model: &DemandModel| Error::Diverged {
                epoch,
                batch: b + 1,
                loss,
                norms: format!("{:?}", param_norms(&model.params)),
            };
            let (total, mse) = match outcome {
                Ok(v) => v,
                Err(Error::Numeric { .. }) => return Err(diverged(f64::NAN, &model)),
                Err(e) => return Err(e),
            };
            let loss = tape.value(total).item();
            if !loss.is_finite() {
                return Err(diverged(loss, &model));
            }
            sum += tape.value(mse).item() * idx.len() as f64;
            let grads = tape.backward(total)?;
            model.params.zero_grad();
            grads.accumulate_into(&tape, &mut model.params)?;
            adam.step(&mut model.params, config)?;
        }
        let record = EpochRecord {
            epoch,
            train_loss: sum / train_rows.len() as f64,
            validation_loss: if validation_rows.is_empty() {
                None
            } else {
                Some(evaluate_loss(&model, &enc_val, &y_val)?)
            },
        };
        hook(&record, &model)?;
        records.push(record);
    }

    let report = TrainReport {
        config: config.clone(),
        train_rows: train_rows.len(),
        validation_rows: validation_rows.len(),
        stats_fingerprint: model.stats.fingerprint(),
        epochs: records,
        final_param_norms: param_norms(&model.params),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::features::{event_vocabulary, FeatureLayout};
    use crate::data::pairs::build_pairs;
    use crate::model::{build_model, ArchitectureConfig};
    use crate::numeric::{gradcheck, GradcheckConfig};
    use crate::synthetic::{generate, SyntheticWorld};
    use approx::assert_abs_diff_eq;

    fn setup(items: usize, sigma: f64) -> (DemandModel, Vec<PairExample>) {
        let data = generate(&SyntheticWorld {
            items,
            months: 10,
            noise_sigma: sigma,
            seed: 21,
            ..Default::default()
        })
        .unwrap();
        let pairs = build_pairs(&data.records);
        let layout = FeatureLayout::standard(&event_vocabulary(&pairs));
        let schema = FeatureSchema::from_pairs(&layout, &pairs, "h").unwrap();
        let config = ArchitectureConfig {
            trunk_widths: vec![16],
            injection_width: 16,
            post_widths: vec![8],
            ..Default::default()
        };
        (build_model(schema, config, 1).unwrap(), pairs)
    }

    #[test]
    fn population_std() {
        let s = column_stats([1.0, 2.0, 3.0].into_iter());
        assert_eq!(s.mean, 2.0);
        assert_abs_diff_eq!(s.std, (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.std, 0.8165, epsilon = 1e-4);
        let c = column_stats([0.1, 0.1, 0.1].into_iter());
        assert_eq!(c.std, STD_FLOOR);
        assert_eq!(c.apply(0.1), 0.0);
    }

    #[test]
    fn empty_split_is_rejected() {
        let (model, _) = setup(1, 0.1);
        assert!(matches!(
            fit_stats(&model.schema, &model.config, &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut p = Tensor2::scalar(0.5);
        let mut s = AdamState::new(1, 1);
        adam_step(&mut p, &Tensor2::scalar(1.0), &mut s, &cfg).unwrap();
        let expected = -0.01 * 1.0 / (1.0 + 1e-8);
        assert_abs_diff_eq!(p.item() - 0.5, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(p.item() - 0.5, -0.01, epsilon = 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let cfg = TrainConfig::default();
        let mut p = Tensor2::from_rows(&[[0.3, -0.7]]);
        let mut s = AdamState::new(1, 2);
        for _ in 0..10 {
            adam_step(&mut p, &Tensor2::zeros(1, 2), &mut s, &cfg).unwrap();
        }
        assert_eq!(p.data(), &[0.3, -0.7]);
    }

    #[test]
    fn equal_gradients_evolve_identically() {
        let cfg = TrainConfig::default();
        let mut p = Tensor2::from_rows(&[[0.2, 0.2]]);
        let mut s = AdamState::new(1, 2);
        for k in 0..20 {
            let g = (k as f64 * 0.7).sin();
            adam_step(&mut p, &Tensor2::from_rows(&[[g, g]]), &mut s, &cfg).unwrap();
        }
        assert_eq!(p.get(0, 0), p.get(0, 1));
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let (model, pairs) = setup(3, 0.1);
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            ..Default::default()
        };
        let before = model.params.clone();
        let (after, report) = train(model, &pairs[..40], &pairs[40..], &cfg).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(after.params.iter()) {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(report.epochs[0].validation_loss, report.epochs[1].validation_loss);
    }

    #[test]
    fn noiseless_training_loss_decreases() {
        let (model, pairs) = setup(20, 0.0);
        let cfg = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let (_, report) = train(model, &pairs, &[], &cfg).unwrap();
        let losses: Vec<f64> = report.epochs.iter().map(|e| e.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn same_seed_same_report() {
        let (model, pairs) = setup(3, 0.1);
        let cfg = TrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let (m1, r1) = train(model.clone(), &pairs[..50], &pairs[50..], &cfg).unwrap();
        let (m2, r2) = train(model, &pairs[..50], &pairs[50..], &cfg).unwrap();
        assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
        assert_eq!(m1.params, m2.params);
    }

    #[test]
    fn stats_come_from_training_rows_only() {
        let (model, pairs) = setup(3, 0.1);
        let (train_rows, val) = pairs.split_at(50);
        let expected = fit_stats(&model.schema, &model.config, train_rows)
            .unwrap()
            .fingerprint();
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let (trained, report) = train(model.clone(), train_rows, val, &cfg).unwrap();
        assert_eq!(report.stats_fingerprint, expected);
        assert_eq!(trained.stats.fingerprint(), expected);
        assert_ne!(
            fit_stats(&model.schema, &model.config, &pairs).unwrap().fingerprint(),
            expected
        );
    }

    #[test]
    fn objective_with_decay_passes_gradcheck() {
        let (mut model, pairs) = setup(3, 0.1);
        model.stats = fit_stats(&model.schema, &model.config, &pairs).unwrap();
        let rows = &pairs[..16];
        let batch = model.encode(rows, None).unwrap();
        let y: Vec<f64> = rows.iter().map(|p| model.scale_target(p.target.unwrap())).collect();
        let mut params = model.params.clone();
        let report = gradcheck(
            &mut params,
            |tape, store| {
                let mut m = model.clone();
                m.params = store.clone();
                Ok(objective(tape, &m, &batch, &y, 0.05)?.0)
            },
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-5, "{report:?}");
    }

    #[test]
    fn diverging_run_reports_position() {
        let (model, pairs) = setup(2, 0.1);
        let cfg = TrainConfig {
            learning_rate: 1e200,
            batch_size: 8,
            ..Default::default()
        };
        let err = train(model, &pairs, &[], &cfg).unwrap_err();
        assert!(
            matches!(err, Error::Diverged { epoch: 1, batch, .. } if batch > 1),
            "{err}"
        );
    }
}
