//! Finite-difference checks for every op in the catalog.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, AgError, GradCheckOptions, GradCheckReport, Graph, OpKind, Tensor, Var};

/// One catalog entry's outcome.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub label: String,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so relu stays on one smooth piece.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

/// Distinct values with gaps well above any finite-difference step.
fn well_separated(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let data = order.iter().map(|&k| k as f64 * 0.1 - 0.5 + rng.random_range(0.0..0.02)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces `out` to a scalar through fixed random weights.
fn weighted_sum(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var, AgError> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    g.sum_all(prod)
}

/// Runs a gradient check for each catalog op on random tensors of at most
/// 4×6, plus the row-broadcast forms of add/subtract.
pub fn check_catalog(seed: u64, opts: &GradCheckOptions) -> Result<Vec<OpCheck>, AgError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();

    let mut cases: Vec<(String, OpKind, Vec<Tensor<f64>>)> = Vec::new();
    for kind in OpKind::CATALOG {
        let inputs = match kind {
            OpKind::MatMul => vec![uniform(&mut rng, &[3, 4]), uniform(&mut rng, &[4, 2])],
            OpKind::Add | OpKind::Subtract | OpKind::Multiply => {
                vec![uniform(&mut rng, &[3, 4]), uniform(&mut rng, &[3, 4])]
            }
            OpKind::Relu => vec![away_from_zero(&mut rng, &[4, 6])],
            OpKind::MaxOverAxis(_) => vec![well_separated(&mut rng, &[4, 5])],
            OpKind::MeanOverAxis(_) | OpKind::Transpose | OpKind::SumAll => vec![uniform(&mut rng, &[3, 4])],
            OpKind::ConcatRows => vec![uniform(&mut rng, &[2, 3]), uniform(&mut rng, &[3, 3])],
            OpKind::L2NormalizeRows | OpKind::LayerNormRows => vec![uniform(&mut rng, &[3, 5])],
            OpKind::ScaleByScalar => vec![uniform(&mut rng, &[3, 4]), uniform(&mut rng, &[1])],
            OpKind::ExpScalar => vec![uniform(&mut rng, &[1])],
            OpKind::LogSoftmaxRows => vec![uniform(&mut rng, &[4, 4])],
            OpKind::NllDiagonal => vec![uniform(&mut rng, &[4, 4])],
        };
        cases.push((kind.to_string(), kind, inputs));
    }
    for kind in [OpKind::Add, OpKind::Subtract] {
        let inputs = vec![uniform(&mut rng, &[4, 3]), uniform(&mut rng, &[1, 3])];
        cases.push((format!("{kind} (row broadcast)"), kind, inputs));
    }

    for (label, kind, inputs) in cases {
        // Output shape decides the reduction weights.
        let mut probe = Graph::<f64>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
        let out = probe.forward(kind, &vars)?;
        let out_shape = probe.value(out).shape().to_vec();
        let weights = uniform(&mut rng, &out_shape);

        let params: Vec<(String, Tensor<f64>)> =
            inputs.into_iter().enumerate().map(|(i, t)| (format!("{label}.in{i}"), t)).collect();
        let report = grad_check(
            |g: &mut Graph<f64>, vars: &[Var]| {
                let out = g.forward(kind, vars)?;
                weighted_sum(g, out, &weights)
            },
            &params,
            opts,
        )?;
        results.push(OpCheck { label, report });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for seed in 0..3 {
            for check in check_catalog(seed, &GradCheckOptions::default()).unwrap() {
                assert!(
                    check.report.passed(),
                    "{} failed: max rel err {:.3e}",
                    check.label,
                    check.report.max_rel_error()
                );
                assert!(check.report.params.iter().all(|p| p.skipped_kinks == 0), "{}", check.label);
            }
        }
    }

    #[test]
    fn injected_fault_is_detected() {
        for kind in OpKind::CATALOG {
            let opts = GradCheckOptions { fault: Some((kind, 1.01)), ..GradCheckOptions::default() };
            let checks = check_catalog(11, &opts).unwrap();
            let hit = checks.iter().find(|c| c.label == kind.to_string()).unwrap();
            assert!(!hit.report.passed(), "fault in {kind} went unnoticed");
        }
    }

    #[test]
    fn relu_kink_coordinate_is_skipped() {
        let x = Tensor::new(vec![4], vec![0.0, 0.5, -0.7, 1.2]).unwrap();
        let report = grad_check(
            |g: &mut Graph<f64>, v: &[Var]| {
                let r = g.relu(v[0])?;
                g.sum_all(r)
            },
            &[("x".to_string(), x)],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.params[0].skipped_kinks, 1);
        assert_eq!(report.params[0].checked, 3);
    }

    #[test]
    fn nondeterministic_builder_flagged() {
        let mut calls = 0u32;
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let report = grad_check(
            |g: &mut Graph<f64>, v: &[Var]| {
                calls += 1;
                let s = g.scale_const(v[0], f64::from(calls))?;
                g.sum_all(s)
            },
            &[("x".to_string(), x)],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.deterministic);
        assert!(!report.passed());
    }
}
