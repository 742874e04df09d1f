//! Central-difference validation of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::param::{ParamKind, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    /// Entries probed per parameter (fewer if the parameter is smaller).
    pub probes: usize,
    pub step: f64,
    /// Constrained weights closer than this to zero sit on the `|w|` kink and
    /// are not probed.
    pub kink_guard: f64,
    /// Gradients smaller than this are compared on an absolute scale, since
    /// the central difference cannot resolve them relative to the loss.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            probes: 8,
            step: 1e-5,
            kink_guard: 1e-3,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GradcheckReport {
    pub entries: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Relative error with an absolute floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of `loss_fn` against central differences
/// at randomly chosen entries of every parameter in `store`.
///
/// `loss_fn` must build a scalar loss on the supplied tape and be
/// deterministic for a fixed store. Parameter values are restored before
/// returning.
pub fn gradcheck<F>(store: &mut ParamStore, loss_fn: F, config: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut report = GradcheckReport::default();
    if store.is_empty() {
        return Ok(report);
    }

    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss)?.accumulate_into(&tape, store)?;

    let eval = |store: &ParamStore, name: &str| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, store).map_err(|e| match e {
            Error::Numeric { context } => Error::Numeric {
                context: format!("{context} while probing {name}"),
            },
            other => other,
        })?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::Numeric {
                context: format!("loss while probing {name}"),
            });
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (name, kind) = {
            let p = store.get(id);
            (p.name.clone(), p.kind)
        };
        if !store.get(id).grad.is_finite() {
            return Err(Error::Numeric {
                context: format!("analytic gradient of {name}"),
            });
        }
        let eligible: Vec<usize> = store
            .get(id)
            .value
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| kind != ParamKind::ConstrainedWeight || v.abs() > config.kink_guard)
            .map(|(i, _)| i)
            .collect();
        let count = config.probes.min(eligible.len());
        let picks = sample(&mut rng, eligible.len(), count);

        let mut worst: f64 = 0.0;
        for pick in picks.iter() {
            let idx = eligible[pick];
            let original = store.get(id).value.data()[idx];
            let analytic = store.get(id).grad.data()[idx];

            store.get_mut(id).value.data_mut()[idx] = original + config.step;
            let plus = eval(store, &name);
            store.get_mut(id).value.data_mut()[idx] = original - config.step;
            let minus = eval(store, &name);
            store.get_mut(id).value.data_mut()[idx] = original;

            let numeric = (plus? - minus?) / (2.0 * config.step);
            worst = worst.max(relative_error(analytic, numeric, config.abs_floor));
        }
        report.entries.push(ParamCheck {
            name,
            probes: count,
            max_rel_error: worst,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tensor::Tensor2;

    #[test]
    fn empty_store_gives_empty_report() {
        let mut store = ParamStore::new();
        let report = gradcheck(
            &mut store,
            |tape, _| {
                let x = tape.input(Tensor2::scalar(1.0));
                tape.sum_squares(x)
            },
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(report.is_empty());
    }

    #[test]
    fn matmul_sum_gradient() {
        let mut store = ParamStore::new();
        let a = store.add(
            "a",
            ParamKind::Weight,
            Tensor2::from_rows(&[[0.3, -1.2, 2.0], [0.7, 0.1, -0.4]]),
        );
        let b = store.add(
            "b",
            ParamKind::Weight,
            Tensor2::from_rows(&[[1.5, -0.5], [0.2, 0.9], [-1.1, 0.6]]),
        );
        let ones = Tensor2::filled(2, 1, 1.0);
        let report = gradcheck(
            &mut store,
            |tape, s| {
                let av = tape.param(s, a);
                let bv = tape.param(s, b);
                let c = tape.matmul(av, bv)?;
                // sum(c) = 1ᵀ c 1, built from matmuls so it stays a tape scalar
                let row = tape.input(Tensor2::filled(1, 2, 1.0));
                let col = tape.input(ones.clone());
                let left = tape.matmul(row, c)?;
                tape.matmul(left, col)
            },
            &GradcheckConfig {
                probes: 6,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn non_finite_parameter_is_reported() {
        let mut store = ParamStore::new();
        let w = store.add("bad", ParamKind::Weight, Tensor2::scalar(f64::MAX));
        let err = gradcheck(
            &mut store,
            |tape, s| {
                let v = tape.param(s, w);
                tape.sum_squares(v)
            },
            &GradcheckConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
    }
}
