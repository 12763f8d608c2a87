use super::{Tape, Var};
use crate::tensor::Matrix;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter, in input order.
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|&e| e < self.tol)
    }

    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares analytic gradients against central differences.
///
/// `f` must build a deterministic scalar loss from the parameter leaves it is
/// handed. The relative error of an entry is `|a − n| / max(|a| + |n|, 1e-6)`,
/// so gradients that are numerically zero are compared absolutely.
pub fn grad_check<F>(f: F, params: &[Matrix], step: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[Matrix]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|m| tape.param(m.clone())).collect();
    let root = f(&mut tape, &vars);
    let analytic: Vec<Matrix> = match tape.backward(root) {
        Ok(g) => vars.iter().map(|&v| g.wrt(v)).collect(),
        Err(_) => {
            return GradCheckReport {
                max_rel_error: vec![f64::INFINITY; params.len()],
                tol,
            }
        }
    };

    let mut work: Vec<Matrix> = params.to_vec();
    let mut max_rel_error = Vec::with_capacity(params.len());
    for (p, grad) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for e in 0..params[p].len() {
            let orig = work[p].as_slice()[e];
            work[p].as_mut_slice()[e] = orig + step;
            let plus = eval(&work);
            work[p].as_mut_slice()[e] = orig - step;
            let minus = eval(&work);
            work[p].as_mut_slice()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.as_slice()[e];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
        }
        max_rel_error.push(worst);
    }
    GradCheckReport { max_rel_error, tol }
}
