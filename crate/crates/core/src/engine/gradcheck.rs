//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{EngineError, Tape, Value, Var};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Check at most this many coordinates per leaf (random subset).
    pub max_samples_per_leaf: Option<usize>,
    /// Seed for the coordinate subset.
    pub seed: u64,
    /// Lower bound of the relative-error denominator.
    pub denom_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_samples_per_leaf: None,
            seed: 0,
            denom_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LeafError {
    pub leaf: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub leaves: Vec<LeafError>,
    pub max_rel_error: f64,
    pub worst_leaf: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(builder: &F, leaves: &[Value]) -> Result<f64, EngineError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = leaves.iter().map(|v| tape.param(v.clone())).collect();
    let loss = builder(&tape, &vars);
    tape.check()?;
    loss.value()
        .as_scalar()
        .ok_or_else(|| EngineError::Contract("loss builder returned a field".into()))
}

/// Compares reverse-mode gradients of `builder` against central differences.
pub fn grad_check<F>(
    builder: F,
    leaves: &[Value],
    config: &GradCheckConfig,
) -> Result<GradReport, EngineError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let base = evaluate(&builder, leaves)?;
    let again = evaluate(&builder, leaves)?;
    if base.to_bits() != again.to_bits() {
        return Err(EngineError::Contract(format!(
            "loss builder is not deterministic: {base} vs {again}"
        )));
    }

    let analytic: Vec<Value> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = leaves.iter().map(|v| tape.param(v.clone())).collect();
        let loss = builder(&tape, &vars);
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradReport {
        leaves: Vec::with_capacity(leaves.len()),
        max_rel_error: 0.0,
        worst_leaf: 0,
    };
    let mut probe = leaves.to_vec();
    for (leaf, grad) in analytic.iter().enumerate() {
        let n = leaves[leaf].len();
        let coords: Vec<usize> = match config.max_samples_per_leaf {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut entry = LeafError {
            leaf,
            checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &i in &coords {
            let x = leaves[leaf].data()[i];
            probe[leaf].data_mut()[i] = x + config.eps;
            let plus = evaluate(&builder, &probe)?;
            probe[leaf].data_mut()[i] = x - config.eps;
            let minus = evaluate(&builder, &probe)?;
            probe[leaf].data_mut()[i] = x;
            let numeric = (plus - minus) / (2.0 * config.eps);
            let a = grad.data()[i];
            let err = relative_error(a, numeric, config.denom_floor);
            if err > entry.max_rel_error || (entry.max_rel_error == 0.0 && i == coords[0]) {
                entry.max_rel_error = err;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        if entry.max_rel_error > report.max_rel_error {
            report.max_rel_error = entry.max_rel_error;
            report.worst_leaf = leaf;
        }
        report.leaves.push(entry);
    }
    Ok(report)
}
