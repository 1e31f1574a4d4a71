use super::graph::{Graph, OpKind, Var};
use super::tensor::Tensor;
use super::AgError;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Magnitude floor in the relative-error denominator, so that
    /// near-zero gradients are compared absolutely.
    pub floor: f64,
    /// Scale the adjoint of one op kind; used to prove the checker bites.
    pub fault: Option<(OpKind, f64)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-3, tol: 1e-4, floor: 1e-2, fault: None }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±step evaluations straddle a relu/max kink.
    pub skipped_kinks: usize,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    /// False when two evaluations at the same point disagreed.
    pub deterministic: bool,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.deterministic && self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

struct Eval {
    loss: f64,
    signature: Vec<usize>,
}

/// Compares reverse-mode gradients against central finite differences,
/// both evaluated in 64-bit arithmetic.
///
/// `builder` receives one leaf per entry of `params` (in order) and must
/// return a scalar loss.
pub fn grad_check<F, E>(
    mut builder: F,
    params: &[(String, Tensor<f64>)],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var, E>,
    E: From<AgError>,
{
    let mut run = |values: &[Tensor<f64>], with_backward: bool| -> Result<(Eval, Vec<Tensor<f64>>), E> {
        let mut g = Graph::<f64>::new();
        if let Some((kind, factor)) = opts.fault {
            g.inject_gradient_fault(kind, factor);
        }
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = builder(&mut g, &vars)?;
        let value = g.value(loss).item().ok_or_else(|| AgError::NonScalarLoss(g.value(loss).shape().to_vec()))?;
        let mut grads = Vec::new();
        if with_backward {
            g.backward(loss)?;
            grads = vars
                .iter()
                .zip(values)
                .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
        }
        Ok((Eval { loss: value, signature: g.kink_signature() }, grads))
    };

    let base: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let (first, analytic) = run(&base, true)?;
    let (second, _) = run(&base, false)?;
    let deterministic = first.loss.to_bits() == second.loss.to_bits() && first.signature == second.signature;
    if !deterministic {
        return Ok(GradCheckReport { params: Vec::new(), deterministic, tol: opts.tol });
    }

    let mut report = Vec::with_capacity(params.len());
    let mut values = base.clone();
    for (p, (name, tensor)) in params.iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        let mut checked = 0;
        let mut skipped = 0;
        for c in 0..tensor.len() {
            let orig = tensor.data()[c];
            values[p].data_mut()[c] = orig + opts.step;
            let (plus, _) = run(&values, false)?;
            values[p].data_mut()[c] = orig - opts.step;
            let (minus, _) = run(&values, false)?;
            values[p].data_mut()[c] = orig;

            if plus.signature != minus.signature || plus.signature != first.signature {
                skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * opts.step);
            let exact = analytic[p].data()[c];
            let denom = exact.abs().max(numeric.abs()).max(opts.floor);
            max_rel = max_rel.max((exact - numeric).abs() / denom);
            checked += 1;
        }
        report.push(ParamCheck {
            name: name.clone(),
            max_rel_error: max_rel,
            checked,
            skipped_kinks: skipped,
            passed: max_rel < opts.tol,
        });
    }
    Ok(GradCheckReport { params: report, deterministic, tol: opts.tol })
}
