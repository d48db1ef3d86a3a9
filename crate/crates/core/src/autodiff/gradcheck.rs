use serde::Serialize;

use super::graph::{Fault, Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Magnitude below which errors are measured in absolute terms.
    pub floor: f64,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares analytic parameter gradients of a scalar-valued `fragment`
/// against central differences, coordinate by coordinate.
///
/// The fragment must be a pure function of the parameter values: any
/// randomness (dropout) has to be reseeded inside it on every call.
pub fn gradient_check<F>(
    params: &ParamStore,
    options: GradCheckOptions,
    fragment: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut graph = Graph::new();
    if let Some(fault) = options.fault {
        graph.inject_fault(fault);
    }
    let out = fragment(&mut graph, params)?;
    let value = graph.value(out).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("fragment output {value}")));
    }
    graph.backward(out)?;
    let analytic: Vec<Option<Vec<f64>>> = {
        let mut all = vec![None; params.len()];
        for (id, g) in graph.param_grads() {
            all[id.0] = Some(g);
        }
        all
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = fragment(&mut g, store)?;
        let v = g.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("fragment output {v}")))
        }
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        tolerance: options.tolerance,
        passed: true,
    };
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for i in 0..params.get(id).len() {
            let original = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = original + options.step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = original - options.step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * options.step);
            let a = analytic[id.0].as_ref().map_or(0.0, |g| g[i]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(options.floor);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((params.name(id).to_string(), i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_relative_error < options.tolerance;
    Ok(report)
}
