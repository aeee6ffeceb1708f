//! Scene files: one cabinet per JSON document tagged `"format": "opend-scene/1"`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Cabinet;

pub const SCENE_FORMAT: &str = "opend-scene/1";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported scene format {0:?}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize)]
struct SceneOut<'a> {
    format: &'static str,
    cabinet: &'a Cabinet,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneIn {
    format: String,
    cabinet: Cabinet,
}

pub fn scene_to_string(c: &Cabinet) -> String {
    let mut s = serde_json::to_string_pretty(&SceneOut { format: SCENE_FORMAT, cabinet: c })
        .expect("cabinet serializes");
    s.push('\n');
    s
}

pub fn parse_scene(text: &str) -> Result<Cabinet, SceneError> {
    let doc: SceneIn = serde_json::from_str(text).map_err(|e| SceneError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if doc.format != SCENE_FORMAT {
        return Err(SceneError::Format(doc.format));
    }
    Ok(doc.cabinet)
}

pub fn save_scene(c: &Cabinet, path: impl AsRef<Path>) -> Result<(), SceneError> {
    fs::write(path, scene_to_string(c))?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Cabinet, SceneError> {
    parse_scene(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_cabinet, GenerationConstraints};

    #[test]
    fn round_trip_through_file() {
        let c = generate_cabinet(5, &GenerationConstraints::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        save_scene(&c, &path).unwrap();
        assert_eq!(load_scene(&path).unwrap(), c);
    }

    #[test]
    fn unknown_joint_kind_is_parse_error() {
        let c = generate_cabinet(5, &GenerationConstraints::single(crate::scene::PartKind::Drawer)).unwrap();
        let text = scene_to_string(&c).replace("\"prismatic\"", "\"helical\"");
        match parse_scene(&text) {
            Err(SceneError::Parse { line, message, .. }) => {
                assert!(line > 1);
                assert!(message.contains("helical"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn diagonal_posture_is_parse_error() {
        let c = generate_cabinet(5, &GenerationConstraints::single(crate::scene::PartKind::Drawer)).unwrap();
        let text = scene_to_string(&c).replace("\"horizontal\"", "\"diagonal\"");
        assert!(matches!(parse_scene(&text), Err(SceneError::Parse { .. })));
    }

    #[test]
    fn wrong_format_tag() {
        let c = generate_cabinet(5, &GenerationConstraints::default()).unwrap();
        let text = scene_to_string(&c).replace(SCENE_FORMAT, "opend-scene/9");
        assert!(matches!(parse_scene(&text), Err(SceneError::Format(_))));
    }
}
