//! Canonical primitive meshes, roughly spanning `[-1, 1]³`, with outward
//! triangle winding.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::Mesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    Capsule,
    Ellipsoid,
}

impl Primitive {
    pub const ALL: [Primitive; 8] = [
        Primitive::Sphere,
        Primitive::Cube,
        Primitive::Cylinder,
        Primitive::Cone,
        Primitive::Torus,
        Primitive::Pyramid,
        Primitive::Capsule,
        Primitive::Ellipsoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Sphere => "sphere",
            Primitive::Cube => "cube",
            Primitive::Cylinder => "cylinder",
            Primitive::Cone => "cone",
            Primitive::Torus => "torus",
            Primitive::Pyramid => "pyramid",
            Primitive::Capsule => "capsule",
            Primitive::Ellipsoid => "ellipsoid",
        }
    }

    pub fn mesh(self) -> Mesh {
        let (v, t) = match self {
            Primitive::Sphere => icosphere(4),
            Primitive::Ellipsoid => {
                let (v, t) = icosphere(3);
                (v.into_iter().map(|p| [p[0], p[1] * 0.65, p[2] * 0.45]).collect(), t)
            }
            Primitive::Cube => cube(),
            Primitive::Pyramid => pyramid(),
            Primitive::Cylinder => revolve(
                &[
                    (0.0, -1.0),
                    (0.25, -1.0),
                    (0.5, -1.0),
                    (0.5, -0.5),
                    (0.5, 0.0),
                    (0.5, 0.5),
                    (0.5, 1.0),
                    (0.25, 1.0),
                    (0.0, 1.0),
                ],
                false,
            ),
            Primitive::Cone => revolve(
                &[(0.0, -1.0), (0.4, -1.0), (0.8, -1.0), (0.6, -0.5), (0.4, 0.0), (0.2, 0.5), (0.0, 1.0)],
                false,
            ),
            Primitive::Capsule => revolve(&capsule_profile(0.4, 0.6, 8), false),
            Primitive::Torus => {
                let profile: Vec<(f64, f64)> = (0..16)
                    .map(|i| {
                        let phi = std::f64::consts::TAU * i as f64 / 16.0;
                        (0.75 + 0.25 * phi.cos(), 0.25 * phi.sin())
                    })
                    .collect();
                revolve(&profile, true)
            }
        };
        Mesh::new(v, t).expect("primitive meshes are valid")
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Primitive::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown primitive `{s}`"))
    }
}

type Tris = Vec<[usize; 3]>;

/// Splits every triangle into four through edge midpoints, sharing midpoints
/// between neighbours. `project` maps each new midpoint.
fn subdivide(v: &mut Vec<[f32; 3]>, tris: Tris, project: impl Fn([f64; 3]) -> [f64; 3]) -> Tris {
    let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, v: &mut Vec<[f32; 3]>| {
        *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
            let m = std::array::from_fn(|k| (f64::from(v[a][k]) + f64::from(v[b][k])) / 2.0);
            v.push(project(m).map(|x| x as f32));
            v.len() - 1
        })
    };
    let mut out = Vec::with_capacity(tris.len() * 4);
    for [a, b, c] in tris {
        let ab = mid(a, b, v);
        let bc = mid(b, c, v);
        let ca = mid(c, a, v);
        out.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
    }
    out
}

fn unit(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    p.map(|x| x / n)
}

fn icosphere(levels: usize) -> (Vec<[f32; 3]>, Tris) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let base = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut v: Vec<[f32; 3]> = base.iter().map(|p| unit(*p).map(|x| x as f32)).collect();
    let mut tris: Tris = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        tris = subdivide(&mut v, tris, unit);
    }
    (v, tris)
}

fn cube() -> (Vec<[f32; 3]>, Tris) {
    let v: Vec<[f32; 3]> = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            ]
        })
        .collect();
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let tris = quads.iter().flat_map(|&[a, b, c, d]| [[a, b, c], [a, c, d]]).collect();
    flat_refined(v, tris, 3)
}

fn pyramid() -> (Vec<[f32; 3]>, Tris) {
    let v = vec![[-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [1.0, 1.0, -1.0], [-1.0, 1.0, -1.0], [0.0, 0.0, 1.0]];
    let tris = vec![[0, 2, 1], [0, 3, 2], [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
    flat_refined(v, tris, 3)
}

/// Refines a convex polyhedron and orients every face away from its centroid.
fn flat_refined(mut v: Vec<[f32; 3]>, mut tris: Tris, levels: usize) -> (Vec<[f32; 3]>, Tris) {
    for _ in 0..levels {
        tris = subdivide(&mut v, tris, |p| p);
    }
    let n = v.len() as f64;
    let center: [f64; 3] = std::array::from_fn(|k| v.iter().map(|p| f64::from(p[k])).sum::<f64>() / n);
    for t in &mut tris {
        let [a, b, c] = t.map(|i| v[i].map(f64::from));
        let normal = cross(sub(b, a), sub(c, a));
        let outward = sub(a, center);
        if dot(normal, outward) < 0.0 {
            t.swap(1, 2);
        }
    }
    (v, tris)
}

fn capsule_profile(radius: f64, half: f64, arc_steps: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 0..=arc_steps {
        let th = -std::f64::consts::FRAC_PI_2 + std::f64::consts::FRAC_PI_2 * i as f64 / arc_steps as f64;
        out.push((radius * th.cos(), -half + radius * th.sin()));
    }
    for i in 1..4 {
        out.push((radius, -half + 2.0 * half * i as f64 / 4.0));
    }
    for i in 0..=arc_steps {
        let th = std::f64::consts::FRAC_PI_2 * i as f64 / arc_steps as f64;
        out.push((radius * th.cos(), half + radius * th.sin()));
    }
    out[0].0 = 0.0;
    out.last_mut().unwrap().0 = 0.0;
    out
}

const SEGMENTS: usize = 48;

/// Surface of revolution about z of an `(r, z)` profile. Profile points with
/// `r = 0` become single pole vertices. `closed` joins the last profile point
/// back to the first.
fn revolve(profile: &[(f64, f64)], closed: bool) -> (Vec<[f32; 3]>, Tris) {
    let mut v = Vec::new();
    let mut rings: Vec<Vec<usize>> = Vec::new();
    for &(r, z) in profile {
        if r == 0.0 {
            v.push([0.0, 0.0, z as f32]);
            rings.push(vec![v.len() - 1; SEGMENTS]);
        } else {
            let ring = (0..SEGMENTS)
                .map(|i| {
                    let th = std::f64::consts::TAU * i as f64 / SEGMENTS as f64;
                    v.push([(r * th.cos()) as f32, (r * th.sin()) as f32, z as f32]);
                    v.len() - 1
                })
                .collect();
            rings.push(ring);
        }
    }
    let mut tris = Vec::new();
    let bands = if closed { rings.len() } else { rings.len() - 1 };
    for j in 0..bands {
        let (lo, hi) = (&rings[j], &rings[(j + 1) % rings.len()]);
        for i in 0..SEGMENTS {
            let n = (i + 1) % SEGMENTS;
            let (a, b, c, d) = (lo[i], lo[n], hi[n], hi[i]);
            if a != b {
                tris.push([a, b, c]);
            }
            if c != d {
                tris.push([a, c, d]);
            }
        }
    }
    (v, tris)
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
