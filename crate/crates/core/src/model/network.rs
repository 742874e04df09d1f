use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schema::{ArchitectureConfig, FeatureSchema, StandardizationStats};
use crate::data::features::{monotone_inputs, Categorical, Continuous, LEAD_PRICE};
use crate::data::pairs::PairExample;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::monodense::{constrained_product, init_weights, MonoDenseLayer, Monotonicity, MonotonicityIndicator};
use crate::numeric::{ParamId, ParamKind, ParamStore, Tape, Tensor2, Var};

/// Rows per forward pass in batched prediction.
const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Layers {
    embeddings: Vec<ParamId>,
    encoder: Option<DenseLayer>,
    trunk: Vec<DenseLayer>,
    injection: MonoDenseLayer,
    post: Vec<MonoDenseLayer>,
    head: DenseLayer,
    head_indicator: MonotonicityIndicator,
}

/// Demand network: embeddings and continuous encoders feed a dense trunk;
/// the trunk output and the monotone price inputs enter a monodense stack
/// whose composition is non-increasing in price.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandModel {
    pub schema: FeatureSchema,
    pub config: ArchitectureConfig,
    pub stats: StandardizationStats,
    pub params: ParamStore,
    layers: Layers,
}

/// Model-ready view of a batch of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    /// One index vector per categorical feature.
    pub categorical: Vec<Vec<usize>>,
    /// Standardized continuous inputs.
    pub continuous: Tensor2,
    /// Standardized monotone inputs.
    pub monotone: Tensor2,
    /// Monotone inputs before standardization, after any price override.
    pub monotone_raw: Tensor2,
}

impl EncodedBatch {
    pub fn rows(&self) -> usize {
        self.monotone.rows()
    }

    /// Replaces a random fraction of categorical indices with the unknown
    /// index so its embedding row is trained.
    pub fn mask_unknown<R: Rng>(&mut self, rate: f64, rng: &mut R) {
        if rate <= 0.0 {
            return;
        }
        for ix in &mut self.categorical {
            for v in ix.iter_mut() {
                if rng.random_bool(rate) {
                    *v = super::schema::UNKNOWN_INDEX;
                }
            }
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            categorical: self
                .categorical
                .iter()
                .map(|ix| rows.iter().map(|&r| ix[r]).collect())
                .collect(),
            continuous: self.continuous.select_rows(rows),
            monotone: self.monotone.select_rows(rows),
            monotone_raw: self.monotone_raw.select_rows(rows),
        }
    }
}

fn dense(store: &mut ParamStore, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseLayer {
    DenseLayer {
        weight: store.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            init_weights(rng, rows, cols),
        ),
        bias: store.add(format!("{name}.bias"), ParamKind::Bias, Tensor2::zeros(1, cols)),
    }
}

/// Wires the network for `schema`. Parameters are initialised from `seed`.
pub fn build_model(schema: FeatureSchema, config: ArchitectureConfig, seed: u64) -> Result<DemandModel> {
    schema.validate()?;
    config.validate()?;
    if schema.categorical.is_empty() && schema.continuous.is_empty() {
        return Err(Error::Config(
            "model needs at least one categorical or continuous feature".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();

    let mut embeddings = Vec::new();
    let mut width = 0;
    for spec in &schema.categorical {
        let dim = config.embedding_dim(spec);
        let table = init_weights(&mut rng, spec.cardinality(), dim);
        embeddings.push(store.add(format!("embedding.{}", spec.name), ParamKind::Embedding, table));
        width += dim;
    }

    let encoder = if schema.continuous.is_empty() {
        None
    } else {
        let (c, k) = (schema.continuous.len(), config.continuous_width);
        let mut w = Tensor2::zeros(c, k);
        for f in 0..c {
            let row = init_weights(&mut rng, 1, k);
            w.row_mut(f).copy_from_slice(row.row(0));
        }
        width += c * k;
        Some(DenseLayer {
            weight: store.add("encoder.weight", ParamKind::Weight, w),
            bias: store.add("encoder.bias", ParamKind::Bias, Tensor2::zeros(c, k)),
        })
    };

    let mut trunk = Vec::new();
    for (i, &w) in config.trunk_widths.iter().enumerate() {
        trunk.push(dense(&mut store, &format!("trunk.{i}"), width, w, &mut rng));
        width = w;
    }

    let mut signs = vec![Monotonicity::Free; width];
    signs.extend(schema.monotone.iter().map(|m| m.direction));
    let injection = MonoDenseLayer::new(
        &mut store,
        "injection",
        MonotonicityIndicator::new(signs),
        config.injection_width,
        config.split,
        config.activation,
        &mut rng,
    )?;
    let mut width = config.injection_width;
    let mut post = Vec::new();
    for (i, &w) in config.post_widths.iter().enumerate() {
        post.push(MonoDenseLayer::new(
            &mut store,
            &format!("post.{i}"),
            MonotonicityIndicator::uniform(width, Monotonicity::Increasing),
            w,
            config.split,
            config.activation,
            &mut rng,
        )?);
        width = w;
    }
    let head = DenseLayer {
        weight: store.add(
            "head.weight",
            ParamKind::ConstrainedWeight,
            init_weights(&mut rng, width, 1),
        ),
        bias: store.add("head.bias", ParamKind::Bias, Tensor2::zeros(1, 1)),
    };

    let stats = StandardizationStats::identity(&schema);
    Ok(DemandModel {
        schema,
        config,
        stats,
        params: store,
        layers: Layers {
            embeddings,
            encoder,
            trunk,
            injection,
            post,
            head,
            head_indicator: MonotonicityIndicator::uniform(width, Monotonicity::Increasing),
        },
    })
}

/// Network inputs of a batch before standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct InputFeatures {
    /// Continuous inputs after any log transform.
    pub continuous: Tensor2,
    /// Monotone inputs after any log transform.
    pub monotone: Tensor2,
    /// Effective lead price and price change, untransformed.
    pub monotone_raw: Tensor2,
}

fn log_scaled(f: &Continuous) -> bool {
    use Continuous::*;
    matches!(
        f,
        LagPrice
            | LagUnits
            | LagInventory
            | LagOosDays
            | LeadOosDays
            | LagRatingCount
            | LeadRatingCount
            | LagDaysLaunched
            | LeadDaysLaunched
            | LagCompetitorPrice
            | LeadCompetitorPrice
    )
}

/// Continuous and monotone inputs of `pairs`, with row `i` evaluated at
/// lead price `overrides[i]` when given.
pub fn input_features(
    schema: &FeatureSchema,
    config: &ArchitectureConfig,
    pairs: &[PairExample],
    overrides: Option<&[f64]>,
) -> Result<InputFeatures> {
    if let Some(o) = overrides {
        if o.len() != pairs.len() {
            return Err(Error::dim("price overrides", (pairs.len(), 1), (o.len(), 1)));
        }
    }
    let cont: Vec<(Continuous, bool)> = schema
        .continuous
        .iter()
        .map(|n| {
            let f = Continuous::parse(n)?;
            let log = config.log_inputs && log_scaled(&f);
            Ok((f, log))
        })
        .collect::<Result<_>>()?;
    let mut continuous = Tensor2::zeros(pairs.len(), cont.len());
    let mut monotone = Tensor2::zeros(pairs.len(), schema.monotone.len());
    let mut monotone_raw = monotone.clone();
    for (r, p) in pairs.iter().enumerate() {
        for (c, (f, log)) in cont.iter().enumerate() {
            let v = f.value(p);
            continuous.set(r, c, if *log { v.ln_1p() } else { v });
        }
        let [price, pct] = monotone_inputs(p, overrides.map(|o| o[r]))?;
        for (c, m) in schema.monotone.iter().enumerate() {
            let (raw, logged) = if m.name == LEAD_PRICE {
                (price, price.ln())
            } else {
                (pct, pct.ln_1p())
            };
            monotone_raw.set(r, c, raw);
            monotone.set(r, c, if config.log_inputs { logged } else { raw });
        }
    }
    Ok(InputFeatures {
        continuous,
        monotone,
        monotone_raw,
    })
}

impl DemandModel {
    /// Encodes pairs for the network. With `overrides`, row `i` is evaluated
    /// at lead price `overrides[i]` and its price change is recomputed.
    pub fn encode(&self, pairs: &[PairExample], overrides: Option<&[f64]>) -> Result<EncodedBatch> {
        let categorical = self
            .schema
            .categorical
            .iter()
            .map(|spec| {
                let f = Categorical::parse(&spec.name)?;
                Ok(pairs.iter().map(|p| spec.index_of(&f.value(p))).collect())
            })
            .collect::<Result<Vec<Vec<usize>>>>()?;
        let inputs = input_features(&self.schema, &self.config, pairs, overrides)?;
        let standardize = |t: &Tensor2, stats: &[super::schema::FeatureStats]| {
            let mut out = t.clone();
            for r in 0..out.rows() {
                for (v, s) in out.row_mut(r).iter_mut().zip(stats) {
                    *v = s.apply(*v);
                }
            }
            out
        };
        Ok(EncodedBatch {
            categorical,
            continuous: standardize(&inputs.continuous, &self.stats.continuous),
            monotone: standardize(&inputs.monotone, &self.stats.monotone),
            monotone_raw: inputs.monotone_raw,
        })
    }

    /// Records the forward pass; returns the `n x 1` prediction in scaled
    /// target units.
    pub fn forward(&self, tape: &mut Tape, batch: &EncodedBatch) -> Result<Var> {
        let store = &self.params;
        let l = &self.layers;
        let mut parts = Vec::new();
        for (table, idx) in l.embeddings.iter().zip(&batch.categorical) {
            let t = tape.param(store, *table);
            parts.push(tape.embedding(t, idx)?);
        }
        if let Some(enc) = &l.encoder {
            let x = tape.input(batch.continuous.clone());
            let w = tape.param(store, enc.weight);
            let b = tape.param(store, enc.bias);
            let h = tape.feature_wise(x, w, b)?;
            parts.push(tape.relu(h)?);
        }
        let mut h = tape.concat(&parts)?;
        for layer in &l.trunk {
            let w = tape.param(store, layer.weight);
            let b = tape.param(store, layer.bias);
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = tape.relu(z)?;
        }
        let m = tape.input(batch.monotone.clone());
        let mut h = tape.concat(&[h, m])?;
        h = l.injection.forward(tape, store, h)?;
        for layer in &l.post {
            h = layer.forward(tape, store, h)?;
        }
        let z = constrained_product(tape, store, h, l.head.weight, &l.head_indicator)?;
        let b = tape.param(store, l.head.bias);
        tape.add_bias(z, b)
    }

    fn predict_encoded(&self, batch: &EncodedBatch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, batch)?;
        Ok(tape.value(y).data().iter().map(|&v| self.unscale_target(v)).collect())
    }

    /// Demand in units to the network's target space; increasing.
    pub fn scale_target(&self, units: f64) -> f64 {
        let v = if self.config.log_target { units.ln_1p() } else { units };
        self.stats.target.apply(v)
    }

    /// Inverse of [`scale_target`](Self::scale_target); increasing.
    pub fn unscale_target(&self, scaled: f64) -> f64 {
        let t = self.stats.target;
        let v = scaled * t.std + t.mean;
        if self.config.log_target {
            v.exp_m1()
        } else {
            v
        }
    }

    /// Predicted lead-month units, optionally at a counterfactual lead price.
    pub fn predict_demand(&self, example: &PairExample, override_lead_price: Option<f64>) -> Result<f64> {
        let overrides = override_lead_price.map(|p| [p]);
        let batch = self.encode(std::slice::from_ref(example), overrides.as_ref().map(|o| &o[..]))?;
        Ok(self.predict_encoded(&batch)?[0])
    }

    /// Batched [`predict_demand`](Self::predict_demand). Rows are
    /// independent, so the result does not depend on `exec` or chunking.
    pub fn predict_batch(&self, pairs: &[PairExample], overrides: Option<&[f64]>, exec: Exec) -> Result<Vec<f64>> {
        let chunks = pairs.len().div_ceil(PREDICT_CHUNK);
        let results = exec.map_range(chunks, |c| {
            let lo = c * PREDICT_CHUNK;
            let hi = (lo + PREDICT_CHUNK).min(pairs.len());
            let batch = self.encode(&pairs[lo..hi], overrides.map(|o| &o[lo..hi]))?;
            self.predict_encoded(&batch)
        });
        let mut out = Vec::with_capacity(pairs.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Fails unless the model was trained on data with `dataset_hash`.
    pub fn ensure_dataset(&self, dataset_hash: &str) -> Result<()> {
        if self.schema.dataset_hash != dataset_hash {
            return Err(Error::SchemaMismatch {
                expected: self.schema.dataset_hash.clone(),
                found: dataset_hash.to_owned(),
            });
        }
        Ok(())
    }

    /// Every monodense layer and the head obey their sign constraints.
    pub fn sign_contract_holds(&self) -> bool {
        let l = &self.layers;
        self.head_weights().iter().all(|&w| w >= 0.0)
            && l.injection.sign_contract_holds(&self.params)
            && l.post.iter().all(|m| m.sign_contract_holds(&self.params))
    }

    /// Effective (sign-constrained) weights of the monotone path, in order.
    pub fn monotone_layers(&self) -> Vec<&MonoDenseLayer> {
        std::iter::once(&self.layers.injection)
            .chain(&self.layers.post)
            .collect()
    }

    /// Effective head weights, `|w|`.
    pub fn head_weights(&self) -> Vec<f64> {
        self.params
            .value(self.layers.head.weight)
            .data()
            .iter()
            .map(|w| w.abs())
            .collect()
    }
}
