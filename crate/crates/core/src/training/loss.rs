use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::ag::{Element, Graph, Tensor, Var};
use crate::embedstore::NORM_TOLERANCE;

/// Learnable inverse temperature, stored as `s` with `τ = exp(-s)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitScale {
    pub s: f32,
}

impl LogitScale {
    pub fn from_tau(tau: f64) -> Self {
        Self { s: (1.0 / tau).ln() as f32 }
    }

    pub fn tau(self) -> f64 {
        (-f64::from(self.s)).exp()
    }

    /// Multiplier applied to cosine similarities, `exp(s)`.
    pub fn scale(self) -> f64 {
        f64::from(self.s).exp()
    }

    /// Caps `exp(s)` at `max_scale`, never rounding above it.
    pub fn clamp(&mut self, max_scale: f64) {
        let mut cap = max_scale.ln() as f32;
        while f64::from(cap).exp() > max_scale {
            cap = cap.next_down();
        }
        if self.s > cap {
            self.s = cap;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    /// Sum divided by the batch size.
    #[default]
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub image: f64,
    pub text: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { image: 1.0, text: 1.0 }
    }
}

/// Values of one evaluation of the tri-modal objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub p2i: f64,
    pub p2t: f64,
}

/// Symmetric InfoNCE between row-paired features `fp` and `fx` with logits
/// `exp(s) · fp fxᵀ`. `s` is a scalar node.
pub fn contrastive_loss_node<T: Element>(
    g: &mut Graph<T>,
    fp: Var,
    fx: Var,
    s: Var,
    reduction: Reduction,
) -> Result<Var, TrainError> {
    let batch = g.value(fp).rows();
    let fxt = g.transpose(fx)?;
    let sims = g.matmul(fp, fxt)?;
    let scale = g.exp_scalar(s)?;
    let logits = g.scale(sims, scale)?;
    let by_row = g.log_softmax_rows(logits)?;
    let row_term = g.nll_diagonal(by_row)?;
    let logits_t = g.transpose(logits)?;
    let by_col = g.log_softmax_rows(logits_t)?;
    let col_term = g.nll_diagonal(by_col)?;
    let both = g.add(row_term, col_term)?;
    let factor = match reduction {
        Reduction::Sum => 0.5,
        Reduction::Mean => 0.5 / batch as f64,
    };
    Ok(g.scale_const(both, factor)?)
}

/// `(total, p2i, p2t)` nodes of the weighted objective.
pub fn total_loss_node<T: Element>(
    g: &mut Graph<T>,
    fp: Var,
    fi: Var,
    ft: Var,
    s: Var,
    weights: LossWeights,
    reduction: Reduction,
) -> Result<(Var, Var, Var), TrainError> {
    let p2i = contrastive_loss_node(g, fp, fi, s, reduction)?;
    let p2t = contrastive_loss_node(g, fp, ft, s, reduction)?;
    let wi = g.scale_const(p2i, weights.image)?;
    let wt = g.scale_const(p2t, weights.text)?;
    let total = g.add(wi, wt)?;
    Ok((total, p2i, p2t))
}

pub(crate) fn check_unit_rows(which: &'static str, t: &Tensor<f32>) -> Result<(), TrainError> {
    for r in 0..t.rows() {
        let norm = t.row(r).iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(TrainError::NonUnitRow { which, row: r, norm });
        }
    }
    Ok(())
}

fn check_pair(fp: &Tensor<f32>, fx: &Tensor<f32>) -> Result<(), TrainError> {
    if fp.rank() != 2 || fp.shape() != fx.shape() {
        return Err(TrainError::FeatureShape(fp.shape().to_vec(), fx.shape().to_vec()));
    }
    Ok(())
}

/// Evaluates [`contrastive_loss_node`] in f64 on unit-row features.
pub fn contrastive_loss(
    fp: &Tensor<f32>,
    fx: &Tensor<f32>,
    scale: LogitScale,
    reduction: Reduction,
) -> Result<f64, TrainError> {
    check_pair(fp, fx)?;
    check_unit_rows("F_P", fp)?;
    check_unit_rows("F_X", fx)?;
    let mut g = Graph::<f64>::new();
    let p = g.constant(fp.cast());
    let x = g.constant(fx.cast());
    let s = g.scalar_constant(f64::from(scale.s));
    let loss = contrastive_loss_node(&mut g, p, x, s, reduction)?;
    Ok(g.value(loss).data()[0])
}

pub fn total_loss(
    fp: &Tensor<f32>,
    fi: &Tensor<f32>,
    ft: &Tensor<f32>,
    scale: LogitScale,
    weights: LossWeights,
    reduction: Reduction,
) -> Result<LossBreakdown, TrainError> {
    check_pair(fp, fi)?;
    check_pair(fp, ft)?;
    check_unit_rows("F_P", fp)?;
    check_unit_rows("F_I", fi)?;
    check_unit_rows("F_T", ft)?;
    let mut g = Graph::<f64>::new();
    let p = g.constant(fp.cast());
    let i = g.constant(fi.cast());
    let t = g.constant(ft.cast());
    let s = g.scalar_constant(f64::from(scale.s));
    let (total, p2i, p2t) = total_loss_node(&mut g, p, i, t, s, weights, reduction)?;
    let item = |v: Var| g.value(v).data()[0];
    Ok(LossBreakdown { total: item(total), p2i: item(p2i), p2t: item(p2t) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Index-by-index evaluation with explicit log-sum-exp loops.
    fn naive(fp: &Tensor<f32>, fx: &Tensor<f32>, s: f64, sum: bool) -> f64 {
        let b = fp.rows();
        let d = fp.cols();
        let logit = |i: usize, j: usize| {
            let mut dot = 0.0f64;
            for k in 0..d {
                dot += f64::from(fp.get(i, k)) * f64::from(fx.get(j, k));
            }
            dot * s.exp()
        };
        let mut total = 0.0;
        for i in 0..b {
            let row: f64 = (0..b).map(|j| logit(i, j).exp()).sum();
            let col: f64 = (0..b).map(|j| logit(j, i).exp()).sum();
            total += (logit(i, i) - row.ln()) + (logit(i, i) - col.ln());
        }
        let loss = -0.5 * total;
        if sum {
            loss
        } else {
            loss / b as f64
        }
    }

    fn unit_rows(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Tensor<f32> {
        let mut data = Vec::with_capacity(b * d);
        for _ in 0..b {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            data.extend(v.iter().map(|x| (x / n) as f32));
        }
        Tensor::matrix(b, d, data).unwrap()
    }

    fn tau1() -> LogitScale {
        LogitScale { s: 0.0 }
    }

    #[test]
    fn two_by_two_hand_value() {
        let f = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let loss = contrastive_loss(&f, &f, tau1(), Reduction::Sum).unwrap();
        let e = std::f64::consts::E;
        let expected = 4.0 * -(e / (e + 1.0)).ln() / 2.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.62652).abs() < 1e-5);
        let mean = contrastive_loss(&f, &f, tau1(), Reduction::Mean).unwrap();
        assert!((mean - expected / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_pair_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = unit_rows(&mut rng, 1, 5);
        let b = unit_rows(&mut rng, 1, 5);
        assert_eq!(contrastive_loss(&a, &b, LogitScale::from_tau(0.07), Reduction::Sum).unwrap(), 0.0);
    }

    #[test]
    fn non_unit_rows_rejected() {
        let a = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
        let b = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            contrastive_loss(&a, &b, tau1(), Reduction::Sum),
            Err(TrainError::NonUnitRow { which: "F_P", row: 0, .. })
        ));
    }

    #[test]
    fn orthogonal_sharp_limit() {
        let mut data = vec![0.0f32; 16];
        for i in 0..4 {
            data[i * 4 + i] = 1.0;
        }
        let f = Tensor::matrix(4, 4, data).unwrap();
        let loss = total_loss(&f, &f, &f, LogitScale::from_tau(0.01), LossWeights::default(), Reduction::Sum).unwrap();
        assert!(loss.total < 1e-3);
    }

    #[test]
    fn weights_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = unit_rows(&mut rng, 5, 8);
        let i = unit_rows(&mut rng, 5, 8);
        let t = unit_rows(&mut rng, 5, 8);
        let sc = LogitScale::from_tau(0.2);
        let l = |w: LossWeights, t: &Tensor<f32>| total_loss(&p, &i, t, sc, w, Reduction::Mean).unwrap();
        let same = l(LossWeights::default(), &i);
        let single = contrastive_loss(&p, &i, sc, Reduction::Mean).unwrap();
        assert!((same.total - 2.0 * single).abs() < 1e-12);
        let masked = l(LossWeights { image: 1.0, text: 0.0 }, &t);
        assert!((masked.total - single).abs() < 1e-12);
    }

    #[test]
    fn clamp_respects_bound() {
        let mut s = LogitScale { s: 10.0 };
        s.clamp(100.0);
        assert!(s.scale() <= 100.0);
        assert!(s.scale() > 99.99);
        let mut low = LogitScale::from_tau(0.07);
        let before = low;
        low.clamp(100.0);
        assert_eq!(low, before);
        assert!((LogitScale::from_tau(0.07).tau() - 0.07).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn matches_naive_oracle(seed in any::<u64>(), b in 1usize..=8, d in 1usize..=16, tau in 0.05f64..2.0, sum in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = unit_rows(&mut rng, b, d);
            let x = unit_rows(&mut rng, b, d);
            let sc = LogitScale::from_tau(tau);
            let red = if sum { Reduction::Sum } else { Reduction::Mean };
            let got = contrastive_loss(&p, &x, sc, red).unwrap();
            prop_assert!((got - naive(&p, &x, f64::from(sc.s), sum)).abs() < 1e-6);
            // swapping roles transposes the logits
            prop_assert!((got - contrastive_loss(&x, &p, sc, red).unwrap()).abs() < 1e-6);
        }

        #[test]
        fn permutation_equivariant(seed in any::<u64>(), b in 2usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, i, t) = (unit_rows(&mut rng, b, 6), unit_rows(&mut rng, b, 6), unit_rows(&mut rng, b, 6));
            let mut perm: Vec<usize> = (0..b).collect();
            perm.reverse();
            perm.rotate_left(seed as usize % b);
            let permute = |m: &Tensor<f32>| {
                Tensor::from_rows(&perm.iter().map(|&r| m.row(r).to_vec()).collect::<Vec<_>>()).unwrap()
            };
            let sc = LogitScale::from_tau(0.1);
            let w = LossWeights::default();
            let a = total_loss(&p, &i, &t, sc, w, Reduction::Mean).unwrap();
            let z = total_loss(&permute(&p), &permute(&i), &permute(&t), sc, w, Reduction::Mean).unwrap();
            prop_assert!((a.total - z.total).abs() < 1e-6);
            let recomposed = contrastive_loss(&p, &i, sc, Reduction::Mean).unwrap()
                + contrastive_loss(&p, &t, sc, Reduction::Mean).unwrap();
            prop_assert!((a.total - recomposed).abs() < 1e-6);
        }
    }
}
