use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::EmbedError;

/// One line of a caption text file: `shape_id<TAB>view_index<TAB>text`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionLine {
    pub shape_id: String,
    pub view_index: usize,
    pub text: String,
}

/// Parses caption lines. Blank lines are skipped; the text may itself
/// contain tabs.
pub fn parse_captions(input: &str) -> Result<Vec<CaptionLine>, EmbedError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| EmbedError::CaptionLine { line: i + 1, msg: msg.into() };
        let mut parts = line.splitn(3, '\t');
        let shape_id = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| bad("missing shape_id"))?;
        let view = parts.next().ok_or_else(|| bad("missing view_index"))?;
        let view_index =
            view.parse().map_err(|_| bad(&format!("view_index `{view}` is not a non-negative integer")))?;
        let text = parts.next().ok_or_else(|| bad("missing caption text"))?;
        out.push(CaptionLine { shape_id: shape_id.into(), view_index, text: text.into() });
    }
    Ok(out)
}

pub fn read_captions(path: impl AsRef<Path>) -> Result<Vec<CaptionLine>, EmbedError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EmbedError::Io { path: path.to_path_buf(), source })?;
    parse_captions(&text).map_err(|e| match e {
        EmbedError::CaptionLine { line, msg } => {
            EmbedError::CaptionLine { line, msg: format!("{}: {msg}", path.display()) }
        }
        other => other,
    })
}

pub fn format_captions(lines: &[CaptionLine]) -> String {
    lines.iter().map(|c| format!("{}\t{}\t{}\n", c.shape_id, c.view_index, c.text.replace('\n', " "))).collect()
}

/// Caption texts per `(shape_id, view_index)`, in file order. File order
/// lines up with a view's `caption_rows`.
pub fn group_captions(lines: &[CaptionLine]) -> BTreeMap<(String, usize), Vec<String>> {
    let mut map: BTreeMap<(String, usize), Vec<String>> = BTreeMap::new();
    for c in lines {
        map.entry((c.shape_id.clone(), c.view_index)).or_default().push(c.text.clone());
    }
    map
}
