use std::fs;
use std::path::Path;

use super::GeometryError;

/// Triangle mesh. Vertex colors come from the common `v x y z r g b`
/// extension and are kept only when every vertex carries them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f32; 3]>,
    pub colors: Option<Vec<[f32; 3]>>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f32; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        if triangles.is_empty() {
            return Err(GeometryError::NoTriangles);
        }
        if let Some(i) = vertices.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(GeometryError::NonFinitePoint(i));
        }
        if let Some(&bad) = triangles.iter().flatten().find(|&&i| i >= vertices.len()) {
            return Err(GeometryError::IndexOutOfRange { line: 0, index: bad as i64, count: vertices.len() });
        }
        Ok(Self { vertices, colors: None, triangles })
    }

    pub fn triangle(&self, t: usize) -> [[f32; 3]; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t).map(|v| v.map(f64::from));
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        0.5 * (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh, GeometryError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GeometryError::Io { path: path.to_path_buf(), source })?;
    parse_obj(&text)
}

/// Parses the `v` / `f` subset of Wavefront OBJ. Polygons are fan
/// triangulated from their first vertex; all other statements are ignored.
pub fn parse_obj(text: &str) -> Result<Mesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut tokens = raw.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let vals = tokens
                    .map(|t| t.parse::<f32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| GeometryError::Parse { line, msg: format!("bad vertex coordinate: {e}") })?;
                if vals.len() < 3 {
                    return Err(GeometryError::Parse { line, msg: "vertex needs 3 coordinates".into() });
                }
                if vals[..3].iter().any(|v| !v.is_finite()) {
                    return Err(GeometryError::Parse { line, msg: "non-finite vertex coordinate".into() });
                }
                vertices.push([vals[0], vals[1], vals[2]]);
                if vals.len() >= 6 {
                    colors.push([vals[3], vals[4], vals[5]]);
                }
            }
            Some("f") => {
                let idx = tokens
                    .map(|t| t.split('/').next().unwrap_or("").parse::<i64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| GeometryError::Parse { line, msg: format!("bad face index: {e}") })?;
                if idx.len() < 3 {
                    return Err(GeometryError::Parse { line, msg: "face needs at least 3 vertices".into() });
                }
                // Relative (negative) indices refer to vertices seen so far.
                let resolved = idx
                    .into_iter()
                    .map(|k| match k {
                        0 => Err(GeometryError::IndexOutOfRange { line, index: 0, count: vertices.len() }),
                        k if k < 0 => Ok(vertices.len() as i64 + k + 1),
                        k => Ok(k),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                faces.push((line, resolved));
            }
            _ => {}
        }
    }

    let mut triangles = Vec::new();
    for (line, face) in faces {
        if let Some(&bad) = face.iter().find(|&&k| k < 1 || k as usize > vertices.len()) {
            return Err(GeometryError::IndexOutOfRange { line, index: bad, count: vertices.len() });
        }
        let f: Vec<usize> = face.iter().map(|&k| k as usize - 1).collect();
        for k in 1..f.len() - 1 {
            triangles.push([f[0], f[k], f[k + 1]]);
        }
    }
    if triangles.is_empty() {
        return Err(GeometryError::NoTriangles);
    }
    let colors = (!colors.is_empty() && colors.len() == vertices.len()).then_some(colors);
    Ok(Mesh { vertices, colors, triangles })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRI: &str = "v 0 0 0\nv 1 0 0\nv 0 1 0\n";

    #[test]
    fn minimal_triangle() {
        let m = parse_obj(&format!("{TRI}f 1 2 3\n")).unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
        assert!(m.colors.is_none());
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn out_of_range_index_reports_line() {
        match parse_obj(&format!("{TRI}# comment\nf 1 2 9\n")) {
            Err(GeometryError::IndexOutOfRange { line, index, count }) => {
                assert_eq!((line, index, count), (5, 9, 3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn no_faces_is_an_error() {
        assert!(matches!(parse_obj(TRI), Err(GeometryError::NoTriangles)));
    }

    #[test]
    fn slashes_negatives_and_colors() {
        let m = parse_obj("v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nvn 0 0 1\nf -3/1/1 -2/2/1 -1/3/1\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
        assert_eq!(m.colors.unwrap()[2], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn malformed_vertex_reports_line() {
        assert!(matches!(parse_obj("v 0 0\n"), Err(GeometryError::Parse { line: 1, .. })));
        assert!(matches!(parse_obj("v 0 x 0\n"), Err(GeometryError::Parse { line: 1, .. })));
    }

    #[test]
    fn unreadable_file() {
        assert!(matches!(load_mesh("/definitely/not/here.obj"), Err(GeometryError::Io { .. })));
    }
}
