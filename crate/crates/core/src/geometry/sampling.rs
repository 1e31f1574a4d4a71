use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GeometryError, Mesh, PointCloud};

/// Area-weighted uniform sampling of `n` points on the mesh surface.
///
/// Triangles are picked with probability proportional to area, then a
/// point is drawn uniformly inside the triangle with the square-root
/// barycentric construction. Vertex colors are interpolated when present.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud, GeometryError> {
    if n == 0 {
        return Err(GeometryError::CountOutOfRange { requested: 0, available: 0 });
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0f64;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(GeometryError::ZeroArea);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut colors = mesh.colors.as_ref().map(|_| Vec::with_capacity(n));
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        let t = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
        let s = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let w = [1.0 - s, s * (1.0 - r2), s * r2];
        let tri = mesh.triangles[t];
        let mix = |vals: &[[f32; 3]]| -> [f32; 3] {
            std::array::from_fn(|k| (0..3).map(|j| w[j] * f64::from(vals[tri[j]][k])).sum::<f64>() as f32)
        };
        points.push(mix(&mesh.vertices));
        if let (Some(out), Some(src)) = (colors.as_mut(), mesh.colors.as_ref()) {
            out.push(mix(src));
        }
    }
    PointCloud::new(points, colors)
}

fn dist2(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    (0..3).map(|k| (f64::from(a[k]) - f64::from(b[k])).powi(2)).sum()
}

/// Greedy max–min subsampling. The first index is `start`; each further
/// index maximizes the distance to the already selected set, with ties
/// going to the lowest index.
pub fn farthest_point_sample(pc: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>, GeometryError> {
    let pts = pc.points();
    let n = pts.len();
    if m == 0 || m > n {
        return Err(GeometryError::CountOutOfRange { requested: m, available: n });
    }
    if start >= n {
        return Err(GeometryError::StartOutOfRange { start, n });
    }
    let mut selected = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    selected.push(current);
    min_d[current] = f64::NEG_INFINITY;
    while selected.len() < m {
        let anchor = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            if min_d[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(p, &anchor);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
        min_d[current] = f64::NEG_INFINITY;
        selected.push(current);
    }
    Ok(selected)
}

/// Centers the cloud on its centroid and scales it so the farthest point
/// has norm 1. Colors are untouched.
pub fn normalize_unit_sphere(pc: &PointCloud) -> Result<PointCloud, GeometryError> {
    let c = pc.centroid();
    let centered: Vec<[f64; 3]> = pc.points().iter().map(|p| std::array::from_fn(|k| f64::from(p[k]) - c[k])).collect();
    let max = centered.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).fold(0.0, f64::max);
    if !(max > 1e-12) {
        return Err(GeometryError::DegenerateCloud);
    }
    let points = centered.iter().map(|p| p.map(|v| (v / max) as f32)).collect();
    PointCloud::new(points, pc.colors().map(<[_]>::to_vec))
}
