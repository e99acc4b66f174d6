use super::{DiffError, Graph, ModelState, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over the compared entries.
    pub max_relative_error: f64,
    /// Entries where `max(|analytic|, |numeric|)` exceeded the floor.
    pub compared: usize,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Checks every parameter of `state` used by `build`, which must construct
/// a scalar loss on the supplied graph from the supplied state.
///
/// Relative error is `|a - n| / max(|a|, |n|)`, computed only where that
/// denominator exceeds `floor`.
pub fn gradcheck<F>(
    state: &ModelState,
    h: f64,
    floor: f64,
    build: F,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph, &ModelState) -> Result<Var, DiffError>,
{
    let mut graph = Graph::new();
    let root = build(&mut graph, state)?;
    graph.backward(root)?;
    let mut analytic = state.clone();
    analytic.collect_grads(&graph)?;

    let eval = |s: &ModelState| -> Result<f64, DiffError> {
        let mut g = Graph::new();
        let r = build(&mut g, s)?;
        Ok(g.value(r).item())
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        compared: 0,
        worst: None,
    };
    let names: Vec<String> = state.names().map(str::to_string).collect();
    for name in names {
        let n = state.value(&name)?.numel();
        let grad = analytic.grad(&name).map(|g| g.values().to_vec());
        let mut probe = state.clone();
        for k in 0..n {
            let orig = state.value(&name)?.values()[k];
            probe.value_mut(&name)?.values_mut()[k] = orig + h;
            let up = eval(&probe)?;
            probe.value_mut(&name)?.values_mut()[k] = orig - h;
            let down = eval(&probe)?;
            probe.value_mut(&name)?.values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.as_ref().map_or(0.0, |g| g[k]);
            let scale = a.abs().max(numeric.abs());
            if scale <= floor {
                continue;
            }
            report.compared += 1;
            let rel = (a - numeric).abs() / scale;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}
