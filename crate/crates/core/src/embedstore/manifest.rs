use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingTable};
use crate::format::write_atomic;

/// One rendered view: its image-table row and its candidate caption rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub view_index: usize,
    pub image_row: usize,
    pub caption_rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeRecord {
    pub shape_id: String,
    /// UPC1 file, relative to the manifest's directory unless absolute.
    pub point_cloud_path: String,
    #[serde(default)]
    pub label: Option<usize>,
    pub views: Vec<ViewRecord>,
}

/// Links each shape's point cloud to its view image rows and caption rows.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletManifest {
    pub shapes: Vec<ShapeRecord>,
}

impl TripletManifest {
    /// Checks that every row reference resolves and no view list is empty.
    pub fn validate(&self, image: &EmbeddingTable, text: &EmbeddingTable) -> Result<(), EmbedError> {
        if image.dim() != text.dim() {
            return Err(EmbedError::DimMismatch { left: image.dim(), right: text.dim() });
        }
        for s in &self.shapes {
            if s.views.is_empty() {
                return Err(EmbedError::NoViews { shape_id: s.shape_id.clone() });
            }
            for v in &s.views {
                let dangling = |table, row, count| EmbedError::DanglingRow {
                    shape_id: s.shape_id.clone(),
                    view_index: v.view_index,
                    table,
                    row,
                    count,
                };
                if v.image_row >= image.count() {
                    return Err(dangling("image", v.image_row, image.count()));
                }
                if v.caption_rows.is_empty() {
                    return Err(EmbedError::EmptyCaptions { shape_id: s.shape_id.clone(), view_index: v.view_index });
                }
                if let Some(&r) = v.caption_rows.iter().find(|&&r| r >= text.count()) {
                    return Err(dangling("text", r, text.count()));
                }
            }
        }
        Ok(())
    }

    pub fn cloud_path(&self, base_dir: &Path, shape: &ShapeRecord) -> PathBuf {
        let p = Path::new(&shape.point_cloud_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<TripletManifest, EmbedError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EmbedError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| EmbedError::Json { path: path.to_path_buf(), source })
}

pub fn save_manifest(manifest: &TripletManifest, path: impl AsRef<Path>) -> Result<(), EmbedError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|source| EmbedError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|source| EmbedError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables() -> (EmbeddingTable, EmbeddingTable) {
        let image = EmbeddingTable::normalized(2, vec![1.0, 0.0, 0.0, 1.0], "img").unwrap();
        let text = EmbeddingTable::normalized(2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], "txt").unwrap();
        (image, text)
    }

    fn manifest() -> TripletManifest {
        TripletManifest {
            shapes: vec![ShapeRecord {
                shape_id: "s0".into(),
                point_cloud_path: "clouds/s0.upc".into(),
                label: Some(1),
                views: vec![ViewRecord { view_index: 0, image_row: 1, caption_rows: vec![0, 2] }],
            }],
        }
    }

    #[test]
    fn field_names_are_exact() {
        let json = serde_json::to_value(manifest()).unwrap();
        let shape = &json["shapes"][0];
        for key in ["shape_id", "point_cloud_path", "label", "views"] {
            assert!(shape.get(key).is_some(), "{key}");
        }
        for key in ["view_index", "image_row", "caption_rows"] {
            assert!(shape["views"][0].get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"shapes":[{"shape_id":"a","point_cloud_path":"a.upc","views":[],"extra":1}]}"#;
        assert!(serde_json::from_str::<TripletManifest>(text).is_err());
        let ok = r#"{"shapes":[{"shape_id":"a","point_cloud_path":"a.upc","views":[]}]}"#;
        assert_eq!(serde_json::from_str::<TripletManifest>(ok).unwrap().shapes[0].label, None);
    }

    #[test]
    fn validation_errors_name_the_shape() {
        let (image, text) = tables();
        manifest().validate(&image, &text).unwrap();

        let mut m = manifest();
        m.shapes[0].views[0].caption_rows.push(3);
        match m.validate(&image, &text) {
            Err(EmbedError::DanglingRow { shape_id, table, row, .. }) => {
                assert_eq!((shape_id.as_str(), table, row), ("s0", "text", 3));
            }
            other => panic!("{other:?}"),
        }

        let mut m = manifest();
        m.shapes[0].views[0].caption_rows.clear();
        assert!(matches!(m.validate(&image, &text), Err(EmbedError::EmptyCaptions { .. })));

        let mut m = manifest();
        m.shapes[0].views.clear();
        assert!(matches!(m.validate(&image, &text), Err(EmbedError::NoViews { .. })));
    }

    #[test]
    fn file_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_manifest(&manifest(), &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, manifest());
        assert_eq!(back.cloud_path(dir.path(), &back.shapes[0]), dir.path().join("clouds/s0.upc"));
    }
}
