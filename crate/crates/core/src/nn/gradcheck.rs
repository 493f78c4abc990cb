//! Central finite differences, used as the independent oracle for every
//! hand-written backward rule.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Mat;
use crate::error::{Error, Result};

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate of `x`.
pub fn finite_difference_gradient<F>(mut f: F, x: &Mat, h: f64) -> Result<Mat>
where
    F: FnMut(&Mat) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::arg(format!("finite difference step must be > 0, got {h}")));
    }
    let mut probe = x.clone();
    let mut out = Mat::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "objective is not finite around coordinate {i}"
            )));
        }
        out.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over all entries.
pub fn max_relative_error(a: &Mat, b: &Mat, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Comparison of analytic and numeric gradients for one graph-built scalar.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over every parameter entry and input entry.
    pub max_rel_error: f64,
    /// Name of the tensor holding the worst entry.
    pub worst: String,
    pub checked_entries: usize,
}

/// Checks `build` (which must return a `1 x 1` node) against central
/// differences with respect to every parameter in `store` and every input.
pub fn check_graph_gradients<F>(
    store: &ParamStore,
    inputs: &[Mat],
    h: f64,
    floor: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var>,
{
    let eval = |s: &ParamStore, xs: &[Mat]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let loss = build(&mut g, s, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let loss = build(&mut g, &analytic_store, &vars)?;
    let grads = g.backward(loss, &mut analytic_store)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked_entries: 0,
    };
    let mut note = |name: &str, analytic: &Mat, numeric: &Mat| {
        let err = max_relative_error(analytic, numeric, floor);
        report.checked_entries += analytic.len();
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = name.to_string();
        }
    };

    for id in store.ids() {
        let mut probe = store.clone();
        let base = store.value(id).clone();
        let mut failure = None;
        let numeric = finite_difference_gradient(
            |m| {
                *probe.value_mut(id) = m.clone();
                match eval(&probe, inputs) {
                    Ok(v) => v,
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            },
            &base,
            h,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        note(&store.get(id).name, analytic_store.grad(id), &numeric?);
    }
    for (i, x) in inputs.iter().enumerate() {
        let zeros = Mat::zeros(x.rows(), x.cols());
        let analytic = grads.get(vars[i]).unwrap_or(&zeros).clone();
        let mut probe: Vec<Mat> = inputs.to_vec();
        let numeric = finite_difference_gradient(
            |m| {
                probe[i] = m.clone();
                eval(store, &probe).unwrap_or(f64::NAN)
            },
            x,
            h,
        )?;
        note(&format!("input{i}"), &analytic, &numeric);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Mat::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let g = finite_difference_gradient(|m| m.data().iter().map(|v| v * v).sum(), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function() {
        let x = Mat::filled(2, 3, 0.7);
        let g = finite_difference_gradient(|_| 3.5, &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_at_zero() {
        let x = Mat::zeros(1, 4);
        let g = finite_difference_gradient(|m| m.data().iter().map(|v| v.sin()).sum(), &x, 1e-5).unwrap();
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn non_finite_objective_and_bad_step() {
        let x = Mat::zeros(1, 1);
        assert!(matches!(
            finite_difference_gradient(|m| 1.0 / m.data()[0].abs().min(0.0), &x, 1e-5),
            Err(Error::Numeric(_))
        ));
        assert!(finite_difference_gradient(|_| 0.0, &x, 0.0).is_err());
    }
}
