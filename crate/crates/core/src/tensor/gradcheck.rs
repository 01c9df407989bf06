//! Central finite-difference checks of analytic gradients.

use super::{Graph, ParamStore, Tensor, TensorError, Var};

/// Denominator floor for the relative error, so entries whose true
/// gradient is ~0 are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(tensor label, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    fn record(&mut self, label: &str, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if self.worst.is_none() || err > self.max_rel_err {
            self.max_rel_err = err;
            self.worst = Some((label.to_string(), index));
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Checks the gradient of `f` with respect to each tensor in `inputs`.
pub fn check_inputs<E, F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var, E>,
{
    let eval = |vals: &[Tensor]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars = vals
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut g, &vars)?;
    g.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = g
            .grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            report.record(&format!("input{k}"), i, analytic.data()[i], (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Checks the gradient of `f` with respect to every parameter in `store`.
/// `max_per_param` bounds how many entries of each parameter are probed
/// (evenly strided); `None` probes all of them.
pub fn check_params<E, F>(
    store: &ParamStore,
    step: f64,
    max_per_param: Option<usize>,
    f: F,
) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: Fn(&mut Graph<'_>) -> Result<Var, E>,
{
    let analytic = {
        let mut g = Graph::with_params(store);
        let out = f(&mut g)?;
        g.backward(out)?;
        g.take_param_grads()
    };
    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::with_params(s);
        let out = f(&mut g)?;
        Ok(g.value(out).item())
    };

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for (id, p) in store.iter() {
        let n = p.value.len();
        let stride = match max_per_param {
            Some(m) if m < n => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let orig = p.value.data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            let a = analytic.get(id).map_or(0.0, |t| t.data()[i]);
            report.record(&p.name, i, a, (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}
