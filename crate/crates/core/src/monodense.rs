//! Monotonicity-constrained dense layer.
//!
//! Each input feature carries an indicator `t ∈ {-1, 0, +1}`. Raw weights are
//! stored unconstrained and mapped to effective weights at forward time
//! (`|w|` for `+1`, `-|w|` for `-1`, `w` for `0`), so the sign contract holds
//! after any optimizer update. Output neurons are split into three groups that
//! use a convex base activation `ρ`, its concave reflection `ρ̂(x) = -ρ(-x)`,
//! and a saturating combination `ρ̃` of the two. All three are monotone
//! increasing, so every output is monotone in each constrained input in the
//! direction of its indicator.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ElementwiseFn, ParamId, ParamKind, ParamStore, Tape, Tensor2, Var};

/// Required response direction of the output to one input feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Monotonicity {
    Decreasing,
    Free,
    Increasing,
}

impl From<Monotonicity> for i8 {
    fn from(m: Monotonicity) -> i8 {
        match m {
            Monotonicity::Decreasing => -1,
            Monotonicity::Free => 0,
            Monotonicity::Increasing => 1,
        }
    }
}

impl TryFrom<i8> for Monotonicity {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(Monotonicity::Decreasing),
            0 => Ok(Monotonicity::Free),
            1 => Ok(Monotonicity::Increasing),
            other => Err(Error::Config(format!(
                "monotonicity indicator entries must be -1, 0 or 1, got {other}"
            ))),
        }
    }
}

/// Indicator vector with one entry per layer input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonotonicityIndicator(Vec<Monotonicity>);

impl MonotonicityIndicator {
    pub fn new(entries: Vec<Monotonicity>) -> Self {
        Self(entries)
    }

    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        signs
            .iter()
            .map(|&s| Monotonicity::try_from(s))
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn uniform(len: usize, m: Monotonicity) -> Self {
        Self(vec![m; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[Monotonicity] {
        &self.0
    }

    pub fn get(&self, i: usize) -> Monotonicity {
        self.0[i]
    }
}

/// Zero-centred, monotone increasing base activation `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseActivation {
    #[default]
    Relu,
    Elu,
    Selu,
}

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

impl BaseActivation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            BaseActivation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            BaseActivation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            BaseActivation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            BaseActivation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            BaseActivation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            BaseActivation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
        }
    }
}

impl fmt::Display for BaseActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseActivation::Relu => "relu",
            BaseActivation::Elu => "elu",
            BaseActivation::Selu => "selu",
        })
    }
}

impl FromStr for BaseActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(BaseActivation::Relu),
            "elu" => Ok(BaseActivation::Elu),
            "selu" => Ok(BaseActivation::Selu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Effective weight for one raw weight under indicator `t`.
pub fn effective_weight(raw: f64, t: Monotonicity) -> f64 {
    match t {
        Monotonicity::Increasing => raw.abs(),
        Monotonicity::Decreasing => -raw.abs(),
        Monotonicity::Free => raw,
    }
}

/// `d effective_weight / d raw`; zero at `raw == 0` for constrained entries.
pub fn effective_weight_derivative(raw: f64, t: Monotonicity) -> f64 {
    let sign = if raw > 0.0 {
        1.0
    } else if raw < 0.0 {
        -1.0
    } else {
        0.0
    };
    match t {
        Monotonicity::Increasing => sign,
        Monotonicity::Decreasing => -sign,
        Monotonicity::Free => 1.0,
    }
}

/// `ρ̂(x) = -ρ(-x)`.
pub fn concave_activation(x: f64, rho: BaseActivation) -> f64 {
    -rho.apply(-x)
}

pub fn concave_derivative(x: f64, rho: BaseActivation) -> f64 {
    rho.derivative(-x)
}

/// Saturating activation: `ρ(x+1) - ρ(1)` below zero, `ρ̂(x-1) + ρ(1)` above.
pub fn bounded_activation(x: f64, rho: BaseActivation) -> f64 {
    if x < 0.0 {
        rho.apply(x + 1.0) - rho.apply(1.0)
    } else {
        concave_activation(x - 1.0, rho) + rho.apply(1.0)
    }
}

pub fn bounded_derivative(x: f64, rho: BaseActivation) -> f64 {
    if x < 0.0 {
        rho.derivative(x + 1.0)
    } else {
        concave_derivative(x - 1.0, rho)
    }
}

/// Which of the three activations a neuron uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Convex,
    Concave,
    Bounded,
}

impl ActivationKind {
    pub fn apply(self, x: f64, rho: BaseActivation) -> f64 {
        match self {
            ActivationKind::Convex => rho.apply(x),
            ActivationKind::Concave => concave_activation(x, rho),
            ActivationKind::Bounded => bounded_activation(x, rho),
        }
    }

    pub fn derivative(self, x: f64, rho: BaseActivation) -> f64 {
        match self {
            ActivationKind::Convex => rho.derivative(x),
            ActivationKind::Concave => concave_derivative(x, rho),
            ActivationKind::Bounded => bounded_derivative(x, rho),
        }
    }
}

/// Fractions of a layer's neurons assigned to each activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSplit {
    pub convex: f64,
    pub concave: f64,
    pub bounded: f64,
}

impl Default for ActivationSplit {
    fn default() -> Self {
        Self {
            convex: 7.0 / 16.0,
            concave: 7.0 / 16.0,
            bounded: 2.0 / 16.0,
        }
    }
}

impl ActivationSplit {
    pub fn new(convex: f64, concave: f64, bounded: f64) -> Result<Self> {
        let split = Self {
            convex,
            concave,
            bounded,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.convex, self.concave, self.bounded];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Config(format!(
                "activation fractions must be non-negative: {self:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("activation fractions must sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// `(convex, concave, bounded)` neuron counts for a layer of `width`.
    /// Concave and bounded get the floor of their share; convex takes the rest.
    pub fn sizes(&self, width: usize) -> (usize, usize, usize) {
        let concave = (self.concave * width as f64).floor() as usize;
        let bounded = (self.bounded * width as f64).floor() as usize;
        let bounded = bounded.min(width - concave.min(width));
        (width - concave - bounded, concave, bounded)
    }

    pub fn kinds(&self, width: usize) -> Vec<ActivationKind> {
        let (cv, cc, b) = self.sizes(width);
        let mut kinds = vec![ActivationKind::Convex; cv];
        kinds.extend(std::iter::repeat_n(ActivationKind::Concave, cc));
        kinds.extend(std::iter::repeat_n(ActivationKind::Bounded, b));
        kinds
    }
}

/// Row-wise sign reparameterization of a weight matrix.
pub(crate) struct SignConstraint {
    rows: Vec<Monotonicity>,
}

impl ElementwiseFn for SignConstraint {
    fn value(&self, row: usize, _col: usize, x: f64) -> f64 {
        effective_weight(x, self.rows[row])
    }

    fn derivative(&self, row: usize, _col: usize, x: f64) -> f64 {
        effective_weight_derivative(x, self.rows[row])
    }
}

/// Column-wise activation assignment.
pub(crate) struct SplitActivation {
    kinds: Vec<ActivationKind>,
    rho: BaseActivation,
}

impl ElementwiseFn for SplitActivation {
    fn value(&self, _row: usize, col: usize, x: f64) -> f64 {
        self.kinds[col].apply(x, self.rho)
    }

    fn derivative(&self, _row: usize, col: usize, x: f64) -> f64 {
        self.kinds[col].derivative(x, self.rho)
    }
}

/// Records `x · W_eff` on the tape, with `W_eff` the sign-constrained view of
/// the raw weight parameter.
pub(crate) fn constrained_product(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    weights: ParamId,
    indicator: &MonotonicityIndicator,
) -> Result<Var> {
    let raw = tape.param(store, weights);
    let w = if indicator.entries().iter().all(|&m| m == Monotonicity::Free) {
        raw
    } else {
        tape.map(
            raw,
            Arc::new(SignConstraint {
                rows: indicator.entries().to_vec(),
            }),
        )?
    };
    tape.matmul(x, w)
}

/// Glorot-uniform draw that never returns exactly zero.
pub(crate) fn init_weights<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor2 {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| loop {
            let v: f64 = rng.random_range(-a..a);
            if v != 0.0 {
                break v;
            }
        })
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("sized")
}

/// Dense layer with sign-constrained weights and split activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonoDenseLayer {
    pub weights: ParamId,
    pub bias: ParamId,
    pub indicator: MonotonicityIndicator,
    pub split: ActivationSplit,
    pub base: BaseActivation,
    pub in_width: usize,
    pub out_width: usize,
}

impl MonoDenseLayer {
    /// Registers a freshly initialised layer in `store`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        indicator: MonotonicityIndicator,
        out_width: usize,
        split: ActivationSplit,
        base: BaseActivation,
        rng: &mut R,
    ) -> Result<Self> {
        split.validate()?;
        let in_width = indicator.len();
        if in_width == 0 || out_width == 0 {
            return Err(Error::Config(format!(
                "monodense layer {name} needs positive widths, got {in_width}x{out_width}"
            )));
        }
        let weights = store.add(
            format!("{name}.weight"),
            ParamKind::ConstrainedWeight,
            init_weights(rng, in_width, out_width),
        );
        let bias = store.add(format!("{name}.bias"), ParamKind::Bias, Tensor2::zeros(1, out_width));
        Ok(Self {
            weights,
            bias,
            indicator,
            split,
            base,
            in_width,
            out_width,
        })
    }

    /// `act(x · W_eff + b)`, with activations assigned per output neuron.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let xv = tape.value(x);
        if xv.cols() != self.in_width {
            return Err(Error::dim(
                "monodense_forward",
                xv.shape(),
                (self.in_width, self.out_width),
            ));
        }
        let z = constrained_product(tape, store, x, self.weights, &self.indicator)?;
        let b = tape.param(store, self.bias);
        let z = tape.add_bias(z, b)?;
        tape.map(
            z,
            Arc::new(SplitActivation {
                kinds: self.split.kinds(self.out_width),
                rho: self.base,
            }),
        )
    }

    /// Forward pass on plain tensors.
    pub fn apply(&self, store: &ParamStore, x: &Tensor2) -> Result<Tensor2> {
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = self.forward(&mut tape, store, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Effective weight matrix as the forward pass sees it.
    pub fn effective_weights(&self, store: &ParamStore) -> Tensor2 {
        let raw = store.value(self.weights);
        let mut out = raw.clone();
        for r in 0..raw.rows() {
            let t = self.indicator.get(r);
            for v in out.row_mut(r) {
                *v = effective_weight(*v, t);
            }
        }
        out
    }

    /// True when every effective weight has the sign its indicator demands.
    pub fn sign_contract_holds(&self, store: &ParamStore) -> bool {
        let w = self.effective_weights(store);
        (0..w.rows()).all(|r| match self.indicator.get(r) {
            Monotonicity::Increasing => w.row(r).iter().all(|&v| v >= 0.0),
            Monotonicity::Decreasing => w.row(r).iter().all(|&v| v <= 0.0),
            Monotonicity::Free => true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{gradcheck, GradcheckConfig};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const RHOS: [BaseActivation; 3] = [BaseActivation::Relu, BaseActivation::Elu, BaseActivation::Selu];

    #[test]
    fn effective_weight_examples() {
        assert_eq!(effective_weight(-0.5, Monotonicity::Increasing), 0.5);
        assert_eq!(effective_weight(0.7, Monotonicity::Decreasing), -0.7);
        assert_eq!(effective_weight(0.3, Monotonicity::Free), 0.3);
        assert_eq!(effective_weight_derivative(0.0, Monotonicity::Increasing), 0.0);
    }

    #[test]
    fn concave_examples() {
        let r = BaseActivation::Relu;
        assert_eq!(concave_activation(2.0, r), 0.0);
        assert_eq!(concave_activation(-2.0, r), -2.0);
        for rho in RHOS {
            assert_eq!(concave_activation(0.0, rho), 0.0);
        }
    }

    #[test]
    fn bounded_examples_relu() {
        let r = BaseActivation::Relu;
        assert_eq!(bounded_activation(0.0, r), 0.0);
        assert_eq!(bounded_activation(-0.5, r), -0.5);
        assert_eq!(bounded_activation(-3.0, r), -1.0);
        assert_eq!(bounded_activation(2.0, r), 1.0);
    }

    #[test]
    fn bounded_is_continuous_and_monotone() {
        for rho in RHOS {
            let left = bounded_activation(-1e-300, rho);
            let right = bounded_activation(0.0, rho);
            assert!((left - right).abs() < 1e-12, "{rho}");
            let grid: Vec<f64> = (0..=20_000).map(|i| -10.0 + i as f64 * 1e-3).collect();
            for w in grid.windows(2) {
                assert!(
                    bounded_activation(w[1], rho) >= bounded_activation(w[0], rho),
                    "{rho} at {}",
                    w[0]
                );
            }
        }
    }

    #[test]
    fn split_sizes() {
        let s = ActivationSplit::default();
        assert_eq!(s.sizes(16), (7, 7, 2));
        assert_eq!(s.sizes(64), (28, 28, 8));
        // 7/16 * 10 = 4.375 -> 4, 2/16 * 10 = 1.25 -> 1, convex absorbs the rest
        assert_eq!(s.sizes(10), (5, 4, 1));
        assert_eq!(s.sizes(1), (1, 0, 0));
        assert!(ActivationSplit::new(0.5, 0.5, 0.5).is_err());
        assert!(ActivationSplit::new(1.2, -0.2, 0.0).is_err());
    }

    #[test]
    fn indicator_rejects_illegal_entries() {
        assert!(MonotonicityIndicator::from_signs(&[1, 0, -1]).is_ok());
        assert!(MonotonicityIndicator::from_signs(&[2]).is_err());
    }

    fn single(store: &mut ParamStore, t: i8, raw: f64) -> MonoDenseLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = MonoDenseLayer::new(
            store,
            "l",
            MonotonicityIndicator::from_signs(&[t]).unwrap(),
            1,
            ActivationSplit::new(1.0, 0.0, 0.0).unwrap(),
            BaseActivation::Relu,
            &mut rng,
        )
        .unwrap();
        store.get_mut(layer.weights).value.data_mut()[0] = raw;
        layer
    }

    #[test]
    fn decreasing_single_neuron() {
        let mut store = ParamStore::new();
        let layer = single(&mut store, -1, 2.0);
        let y = layer.apply(&store, &Tensor2::column(&[1.0, -1.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn free_indicator_is_plain_dense() {
        let mut store = ParamStore::new();
        let layer = single(&mut store, 0, -1.5);
        let y = layer.apply(&store, &Tensor2::column(&[1.0, -1.0, 2.0])).unwrap();
        let expected: Vec<f64> = [1.0, -1.0, 2.0].iter().map(|x: &f64| (x * -1.5).max(0.0)).collect();
        assert_eq!(y.data(), expected.as_slice());
    }

    #[test]
    fn width_mismatch() {
        let mut store = ParamStore::new();
        let layer = single(&mut store, 1, 1.0);
        assert!(matches!(
            layer.apply(&store, &Tensor2::zeros(2, 3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn increasing_feature_never_decreases_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let inw = rng.random_range(1..6);
            let outw = rng.random_range(1..12);
            let j = rng.random_range(0..inw);
            let mut signs: Vec<i8> = (0..inw).map(|_| rng.random_range(-1..=1)).collect();
            signs[j] = 1;
            let mut store = ParamStore::new();
            let layer = MonoDenseLayer::new(
                &mut store,
                "m",
                MonotonicityIndicator::from_signs(&signs).unwrap(),
                outw,
                ActivationSplit::default(),
                RHOS[trial % 3],
                &mut rng,
            )
            .unwrap();
            store.get_mut(layer.bias).value =
                Tensor2::from_vec(1, outw, (0..outw).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let x: Vec<f64> = (0..inw).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut bumped = x.clone();
            bumped[j] += rng.random_range(0.001..2.0);
            let y0 = layer.apply(&store, &Tensor2::from_rows(&[x])).unwrap();
            let y1 = layer.apply(&store, &Tensor2::from_rows(&[bumped])).unwrap();
            for (a, b) in y0.data().iter().zip(y1.data()) {
                assert!(b >= a, "trial {trial}: {b} < {a}");
            }
        }
    }

    #[test]
    fn monodense_gradients_all_subsets() {
        for rho in RHOS {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut store = ParamStore::new();
            let layer = MonoDenseLayer::new(
                &mut store,
                "m",
                MonotonicityIndicator::from_signs(&[1, -1, 0, 1]).unwrap(),
                16,
                ActivationSplit::default(),
                rho,
                &mut rng,
            )
            .unwrap();
            store.get_mut(layer.bias).value =
                Tensor2::from_vec(1, 16, (0..16).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
            let x = Tensor2::from_vec(5, 4, (0..20).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let y = Tensor2::from_vec(5, 16, (0..80).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let report = gradcheck(
                &mut store,
                |tape, s| {
                    let xv = tape.input(x.clone());
                    let out = layer.forward(tape, s, xv)?;
                    let t = tape.input(y.clone());
                    tape.mse(out, t)
                },
                &GradcheckConfig {
                    probes: 20,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(report.max_rel_error() < 1e-5, "{rho}: {report:?}");
        }
    }

    proptest! {
        #[test]
        fn concave_is_reflection(x in -50.0f64..50.0, k in 0usize..3) {
            let rho = RHOS[k];
            prop_assert_eq!(concave_activation(x, rho), -rho.apply(-x));
        }

        #[test]
        fn activations_monotone(a in -20.0f64..20.0, d in 0.0f64..5.0, k in 0usize..3) {
            let rho = RHOS[k];
            for kind in [ActivationKind::Convex, ActivationKind::Concave, ActivationKind::Bounded] {
                prop_assert!(kind.apply(a + d, rho) >= kind.apply(a, rho));
            }
        }
    }
}
