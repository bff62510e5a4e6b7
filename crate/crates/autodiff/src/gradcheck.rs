use crate::{AutodiffError, ParamStore, Result, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over all parameter entries of `|analytic - numeric| / max(1, |numeric|)`
    pub max_relative_error: f64,
    /// `name[flat index]` of the worst entry
    pub worst_entry: Option<String>,
    pub entries_checked: usize,
}

/// Compares backward gradients of `graph` against central differences.
///
/// `graph` builds a scalar on a fresh tape from the given store; it is
/// called once for the analytic pass and twice per parameter entry.
pub fn grad_check<F>(store: &ParamStore, eps: f64, graph: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(AutodiffError::InvalidArgument("grad_check eps must be in (0, 1e-2]"));
    }
    let mut tape = Tape::new();
    let out = graph(&mut tape, store)?;
    let grads = tape.backward(out)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let o = graph(&mut t, s)?;
        Ok(t.scalar(o))
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_entry: None,
        entries_checked: 0,
    };
    let mut probe = store.clone();
    for id in store.ids() {
        let analytic = grads.get_or_zeros(store, id);
        for j in 0..store.get(id).len() {
            let original = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = original + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = original - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            report.entries_checked += 1;
            if err > report.max_relative_error || report.worst_entry.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst_entry = Some(format!("{}[{j}]", store.name(id)));
            }
        }
    }
    Ok(report)
}
