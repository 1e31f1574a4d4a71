use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::loss::{total_loss_node, LogitScale, LossWeights, Reduction};
use super::TrainError;
use crate::ag::{grad_check, GradCheckOptions, GradCheckReport, Tensor};
use crate::geometry::PointCloud;
use crate::model::{encode, init_params, EncoderConfig};

/// Finite-difference check of the full encode → total loss pipeline on a
/// tiny instance: 3 clouds of 4 points, D = 8, random biases, and unequal
/// modality weights. Covers every encoder tensor and the logit scale.
pub fn check_encode_loss(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport, TrainError> {
    let (b, d, n) = (3, 8, 4);
    let config = EncoderConfig {
        in_channels: 3,
        point_mlp_widths: vec![6, 5],
        head_widths: vec![7, d],
        embed_dim: d,
        layer_norm: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(&config, rng.random())?;
    for t in &mut params.tensors {
        if t.name.ends_with("bias") {
            t.tensor.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
    }
    let clouds = (0..b)
        .map(|_| PointCloud::new((0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(), None))
        .collect::<Result<Vec<_>, _>>()
        .expect("finite points");
    let mut unit_rows = || {
        let mut data = Vec::with_capacity(b * d);
        for _ in 0..b {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            data.extend(v.iter().map(|x| x / norm));
        }
        Tensor::matrix(b, d, data).expect("b×d")
    };
    let fi = unit_rows();
    let ft = unit_rows();
    let mut leaves: Vec<(String, Tensor<f64>)> =
        params.tensors.iter().map(|t| (t.name.clone(), t.tensor.cast())).collect();
    leaves.push(("logit_scale".into(), Tensor::scalar(f64::from(LogitScale::from_tau(0.07).s))));
    let weights = LossWeights { image: 1.0, text: 0.5 };
    grad_check(
        |g, vars| -> Result<_, TrainError> {
            let (enc, s) = vars.split_at(vars.len() - 1);
            let fp = encode(g, enc, &config, &clouds)?;
            let i = g.constant(fi.clone());
            let t = g.constant(ft.clone());
            Ok(total_loss_node(g, fp, i, t, s[0], weights, Reduction::Mean)?.0)
        },
        &leaves,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ag::OpKind;

    #[test]
    fn pipeline_passes_and_catches_a_faulty_adjoint() {
        let opts = GradCheckOptions::default();
        let report = check_encode_loss(3, &opts).unwrap();
        assert!(report.passed(), "max rel error {}", report.max_rel_error());
        assert_eq!(report.params.len(), 9);
        let broken = GradCheckOptions { fault: Some((OpKind::MaxOverAxis(0), 1.5)), ..opts };
        assert!(!check_encode_loss(3, &broken).unwrap().passed());
    }
}
