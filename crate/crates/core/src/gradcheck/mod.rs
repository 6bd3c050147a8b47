//! Central finite-difference gradient checking.
//!
//! The loss closure is re-run from scratch for every perturbed element, so it
//! must be deterministic (re-seed any dropout generator inside the closure).
//!
//! Central differences only estimate a derivative when `θ ± ε` stay on the
//! same smooth piece of the loss. The tape hashes every discrete choice made
//! by non-smooth ops (ReLU signs, pooling winners, loss clamping); when a
//! perturbation changes that hash the step is divided by ten and retried,
//! down to `min_eps`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};

pub mod suites;

pub use suites::{block_suite, tiny_model_suite};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub eps: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Parameters with more elements than this are checked on a random subset
    /// of exactly this many elements.
    pub max_elements: usize,
    /// Denominator floor, so near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Smallest step tried when `eps` straddles a kink.
    pub min_eps: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            max_elements: 128,
            floor: 1e-6,
            min_eps: 1e-9,
            seed: 0,
        }
    }
}

/// Result for one parameter tensor.
#[derive(Clone, Debug)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub numel: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Elements whose step had to shrink below `eps` to avoid a kink.
    pub reduced_steps: usize,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_loss<S, F>(store: &S, loss_fn: &mut F) -> Result<(f64, Option<u64>)>
where
    S: ParamStore<f64>,
    F: FnMut(&S, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.track_branches();
    let loss = loss_fn(store, &mut tape)?;
    Ok((tape.value(loss).to_scalar()?, tape.branch_signature()))
}

/// Compares tape gradients of every parameter in `store` against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`.
pub fn gradient_check<S, F>(store: &mut S, mut loss_fn: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    S: ParamStore<f64>,
    F: FnMut(&S, &mut Tape<f64>) -> Result<Var>,
{
    gradient_check_with(store, &mut loss_fn, opts, false)
}

/// Same as [`gradient_check`] with an optional deliberately broken backward.
#[doc(hidden)]
pub fn gradient_check_with<S, F>(
    store: &mut S,
    loss_fn: &mut F,
    opts: &GradCheckOptions,
    fault: bool,
) -> Result<GradCheckReport>
where
    S: ParamStore<f64>,
    F: FnMut(&S, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.inject_fault(fault);
    tape.track_branches();
    let loss = loss_fn(store, &mut tape)?;
    let base = tape.branch_signature();
    if !tape.shape(loss).is_scalar() {
        return Err(Error::Usage(format!(
            "gradient check needs a scalar loss, found {}",
            tape.shape(loss)
        )));
    }
    let grads = tape.backward(loss)?;
    drop(tape);

    let analytic: Vec<_> = store
        .parameters()
        .iter()
        .map(|p| {
            grads
                .param(p.id)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut groups = Vec::new();
    let count = analytic.len();
    for (pi, analytic) in analytic.into_iter().enumerate().take(count) {
        let (name, numel) = {
            let p = store.parameters()[pi];
            (p.name.clone(), p.numel())
        };
        let mut indices: Vec<usize> = if numel <= opts.max_elements {
            (0..numel).collect()
        } else {
            sample(&mut rng, numel, opts.max_elements).into_vec()
        };
        indices.sort_unstable();

        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let mut reduced = 0;
        for &i in &indices {
            let orig = store.parameters()[pi].value.data()[i];
            let mut eps = opts.eps;
            let numeric = loop {
                store.parameters_mut()[pi].value.data_mut()[i] = orig + eps;
                let (plus, sp) = eval_loss(store, loss_fn)?;
                store.parameters_mut()[pi].value.data_mut()[i] = orig - eps;
                let (minus, sm) = eval_loss(store, loss_fn)?;
                store.parameters_mut()[pi].value.data_mut()[i] = orig;
                let smooth = sp == base && sm == base;
                if smooth || eps / 10.0 < opts.min_eps {
                    break (plus - minus) / (2.0 * eps);
                }
                eps /= 10.0;
            };
            if eps < opts.eps {
                reduced += 1;
            }
            max_rel = max_rel.max(relative_error(analytic[i], numeric, opts.floor));
            max_abs = max_abs.max((analytic[i] - numeric).abs());
        }
        groups.push(GroupReport {
            name,
            checked: indices.len(),
            numel,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            reduced_steps: reduced,
            passed: max_rel <= opts.tol,
        });
    }
    Ok(GradCheckReport { groups, tol: opts.tol })
}
