//! Central finite-difference verification of the hand-written backward
//! passes. The loss closure must be deterministic (dropout in eval mode).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::num::Scalar;
use crate::optim::ParamStore;

/// Outcome of one [`grad_check`] run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub entries_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Relative error with a unit floor, so that near-zero gradient pairs are
/// compared absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Compares the analytic gradients already stored in `store` against central
/// differences `(f(theta+h) - f(theta-h)) / 2h` of `loss_fn` and returns the
/// worst relative error over the checked entries.
///
/// `max_entries_per_param` bounds the finite-difference work for large
/// models: when set, that many entries of each parameter tensor are chosen
/// by a seeded draw, so every tensor is still covered and the selection is
/// reproducible. `None` checks every entry.
pub fn grad_check<S, F>(
    loss_fn: F,
    store: &mut ParamStore<S>,
    h: f64,
    tol: f64,
    max_entries_per_param: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&ParamStore<S>) -> Result<S>,
{
    let ids = store.ids();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| store.grad(id).values().iter().map(|g| g.to_f64_c()).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hs = S::of(h);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        entries_checked: 0,
        tol,
    };

    for (pi, &id) in ids.iter().enumerate() {
        let n = store.value(id).len();
        if n == 0 {
            continue;
        }
        let picks: Vec<usize> = match max_entries_per_param {
            Some(cap) if cap < n => sample(&mut rng, n, cap).into_vec(),
            _ => (0..n).collect(),
        };
        for ei in picks {
            let orig = store.value(id).values()[ei];
            store.value_mut(id).values_mut()[ei] = orig + hs;
            let f_plus = loss_fn(store)?.to_f64_c();
            store.value_mut(id).values_mut()[ei] = orig - hs;
            let f_minus = loss_fn(store)?.to_f64_c();
            store.value_mut(id).values_mut()[ei] = orig;

            let fd = (f_plus - f_minus) / (2.0 * h);
            let err = rel_err(fd, analytic[pi][ei]);
            report.entries_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = format!("{}[{}]", store.name(id), ei);
            }
        }
    }
    Ok(report)
}
