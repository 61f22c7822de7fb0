//! Central finite-difference oracle for gradient verification.
//!
//! The oracle only evaluates the forward function; it never reads the
//! reverse sweep's internals.

use super::params::ParameterStore;

/// Step and tolerance used by the gradient checks.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub rel_tol: f64,
    pub denom_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-3,
            rel_tol: 1e-4,
            denom_floor: 1e-6,
        }
    }
}

/// Worst disagreement found by [`GradCheck::compare_store`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

impl GradCheck {
    pub fn relative_error(&self, analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.denom_floor)
    }

    /// Central difference of `loss` at `values[index]`.
    pub fn numeric(&self, values: &mut [f64], index: usize, mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
        let orig = values[index];
        values[index] = orig + self.step;
        let plus = loss(values);
        values[index] = orig - self.step;
        let minus = loss(values);
        values[index] = orig;
        (plus - minus) / (2.0 * self.step)
    }

    /// Compares `analytic[p]` (gradients aligned with store order) against
    /// central differences of `loss(store)` for every parameter entry.
    pub fn compare_store(
        &self,
        store: &ParameterStore,
        analytic: &[Vec<f64>],
        mut loss: impl FnMut(&ParameterStore) -> f64,
    ) -> GradCheckReport {
        let mut work = store.clone();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst_param: String::new(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        };
        for (p, grad) in analytic.iter().enumerate() {
            let id = work.id(&store.names()[p].clone()).unwrap();
            for i in 0..grad.len() {
                let orig = work.tensor(id).values()[i];
                work.tensor_mut(id).values_mut()[i] = orig + self.step;
                let plus = loss(&work);
                work.tensor_mut(id).values_mut()[i] = orig - self.step;
                let minus = loss(&work);
                work.tensor_mut(id).values_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                let err = self.relative_error(grad[i], numeric);
                report.checked += 1;
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst_param = store.names()[p].clone();
                    report.worst_index = i;
                    report.analytic = grad[i];
                    report.numeric = numeric;
                }
            }
        }
        report
    }
}
