use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GeometryError, PointCloud};

/// Train-time point-cloud augmentation. The default is a no-op.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub rotate_z: bool,
    pub scale_range: [f32; 2],
    pub jitter_sigma: f32,
    pub dropout_rate: f32,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self { rotate_z: false, scale_range: [1.0, 1.0], jitter_sigma: 0.0, dropout_rate: 0.0 }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let [lo, hi] = self.scale_range;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(GeometryError::InvalidAugment(format!("scale range [{lo}, {hi}]")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(GeometryError::InvalidAugment(format!("dropout rate {}", self.dropout_rate)));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(GeometryError::InvalidAugment(format!("jitter sigma {}", self.jitter_sigma)));
        }
        Ok(())
    }
}

/// Applies z-rotation, uniform scaling, Gaussian jitter and point dropout,
/// in that order. At least one point always survives dropout.
pub fn augment(pc: &PointCloud, spec: &AugmentSpec, seed: u64) -> Result<PointCloud, GeometryError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = pc.clone();

    if spec.rotate_z {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        for p in out.points_mut() {
            let (x, y) = (f64::from(p[0]), f64::from(p[1]));
            p[0] = (c * x - s * y) as f32;
            p[1] = (s * x + c * y) as f32;
        }
    }
    let [lo, hi] = spec.scale_range;
    let scale = if lo < hi { rng.random_range(lo..hi) } else { lo };
    if scale != 1.0 {
        for p in out.points_mut() {
            *p = p.map(|v| v * scale);
        }
    }
    if spec.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0f32, spec.jitter_sigma).expect("validated sigma");
        for p in out.points_mut() {
            for v in p.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    if spec.dropout_rate > 0.0 {
        let keep: Vec<usize> = (0..out.len()).filter(|_| rng.random::<f32>() >= spec.dropout_rate).collect();
        out = out.select(if keep.is_empty() { &[0] } else { &keep });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(), None).unwrap()
    }

    #[test]
    fn all_off_is_identity() {
        let pc = cloud(50, 1);
        assert_eq!(augment(&pc, &AugmentSpec::default(), 99).unwrap(), pc);
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let pc = cloud(40, 2);
        let spec = AugmentSpec { rotate_z: true, ..AugmentSpec::default() };
        let rot = augment(&pc, &spec, 3).unwrap();
        assert_ne!(rot, pc);
        let d = |c: &PointCloud, i: usize, j: usize| {
            let (a, b) = (c.points()[i], c.points()[j]);
            (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f32>().sqrt()
        };
        for i in 0..40 {
            for j in 0..40 {
                assert!((d(&pc, i, j) - d(&rot, i, j)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn dropout_keeps_binomial_share() {
        let pc = cloud(1000, 4);
        let spec = AugmentSpec { dropout_rate: 0.5, ..AugmentSpec::default() };
        for seed in 0..10 {
            let kept = augment(&pc, &spec, seed).unwrap().len();
            assert!((400..=600).contains(&kept), "seed {seed}: kept {kept}");
        }
    }

    #[test]
    fn dropout_never_empties() {
        let pc = cloud(1, 5);
        let spec = AugmentSpec { dropout_rate: 0.999, ..AugmentSpec::default() };
        for seed in 0..20 {
            assert_eq!(augment(&pc, &spec, seed).unwrap().len(), 1);
        }
    }

    #[test]
    fn seeded_and_validated() {
        let pc = cloud(64, 6);
        let spec = AugmentSpec { rotate_z: true, scale_range: [0.8, 1.2], jitter_sigma: 0.01, dropout_rate: 0.2 };
        assert_eq!(augment(&pc, &spec, 7).unwrap(), augment(&pc, &spec, 7).unwrap());
        let bad = AugmentSpec { scale_range: [1.2, 0.8], ..AugmentSpec::default() };
        assert!(augment(&pc, &bad, 0).is_err());
        let bad = AugmentSpec { dropout_rate: 1.0, ..AugmentSpec::default() };
        assert!(augment(&pc, &bad, 0).is_err());
    }
}
