use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetError, Identity};

/// Crop rectangle in source-frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bbox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameSource {
    /// Ordered image files, one per frame.
    Frames(Vec<PathBuf>),
    /// A precomputed embedding cache file.
    Embedding(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub identity: Identity,
    pub source: FrameSource,
    /// Per-frame crop boxes, aligned with `FrameSource::Frames`.
    pub bbox: Option<Vec<Bbox>>,
}

impl UtteranceRecord {
    pub fn with_embedding(identity: Identity, path: impl Into<PathBuf>) -> Self {
        Self { identity, source: FrameSource::Embedding(path.into()), bbox: None }
    }

    pub fn with_frames(identity: Identity, frames: Vec<PathBuf>) -> Self {
        Self { identity, source: FrameSource::Frames(frames), bbox: None }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    speaker: String,
    word: String,
    take: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<Vec<[u32; 4]>>,
}

/// Reads a line-delimited JSON manifest. Relative paths are resolved against
/// the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<UtteranceRecord>, DatasetError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let entry: ManifestLine = serde_json::from_str(raw)
            .map_err(|e| DatasetError::Malformed { line, message: e.to_string() })?;
        let identity = Identity::new(entry.speaker, entry.word, entry.take);
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let source = match (entry.frames, entry.embedding) {
            (Some(frames), None) => {
                if frames.is_empty() {
                    return Err(DatasetError::Malformed {
                        line,
                        message: "`frames` must not be empty".into(),
                    });
                }
                FrameSource::Frames(frames.into_iter().map(resolve).collect())
            }
            (None, Some(embedding)) => FrameSource::Embedding(resolve(embedding)),
            (Some(_), Some(_)) => {
                return Err(DatasetError::Malformed {
                    line,
                    message: "record has both `frames` and `embedding`".into(),
                })
            }
            (None, None) => {
                return Err(DatasetError::Malformed {
                    line,
                    message: "record needs `frames` or `embedding`".into(),
                })
            }
        };
        let bbox = match entry.bbox {
            None => None,
            Some(boxes) => {
                let FrameSource::Frames(frames) = &source else {
                    return Err(DatasetError::Malformed {
                        line,
                        message: "`bbox` only applies to `frames` records".into(),
                    });
                };
                if boxes.len() != frames.len() {
                    return Err(DatasetError::Malformed {
                        line,
                        message: format!(
                            "{} bounding boxes for {} frames",
                            boxes.len(),
                            frames.len()
                        ),
                    });
                }
                Some(boxes.into_iter().map(|[x, y, w, h]| Bbox { x, y, w, h }).collect())
            }
        };
        if !seen.insert(identity.clone()) {
            return Err(DatasetError::DuplicateKey(identity));
        }
        records.push(UtteranceRecord { identity, source, bbox });
    }
    Ok(records)
}

/// Writes records one JSON object per line, paths verbatim.
pub fn write_manifest(path: impl AsRef<Path>, records: &[UtteranceRecord]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let mut out = Vec::new();
    for record in records {
        let (frames, embedding) = match &record.source {
            FrameSource::Frames(f) => (Some(f.clone()), None),
            FrameSource::Embedding(e) => (None, Some(e.clone())),
        };
        let line = ManifestLine {
            speaker: record.identity.speaker.clone(),
            word: record.identity.word.clone(),
            take: record.identity.take,
            frames,
            embedding,
            bbox: record.bbox.as_ref().map(|b| b.iter().map(|b| [b.x, b.y, b.w, b.h]).collect()),
        };
        serde_json::to_writer(&mut out, &line).expect("manifest line serializes");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(s: &str, w: &str, t: u32) -> String {
        format!(r#"{{"speaker":"{s}","word":"{w}","take":{t},"embedding":"cache/{s}__{w}__{t}.emb"}}"#)
    }

    #[test]
    fn reads_three_distinct_takes() {
        let text = [line("s1", "w1", 0), line("s1", "w1", 1), line("s2", "w1", 0)].join("\n");
        let records = parse_manifest(&text, Path::new("/data")).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[2].identity, Identity::new("s2", "w1", 0));
        assert_eq!(
            records[0].source,
            FrameSource::Embedding(PathBuf::from("/data/cache/s1__w1__0.emb"))
        );
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let text = [line("s1", "w1", 0), line("s2", "w1", 0), line("s1", "w1", 0)].join("\n");
        let err = parse_manifest(&text, Path::new("")).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateKey(id) if id == Identity::new("s1", "w1", 0)));
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let text = format!("{}\n\n{{\"speaker\":\"s\",\"word\":\"w\"}}\n", line("s", "w", 0));
        match parse_manifest(&text, Path::new("")).unwrap_err() {
            DatasetError::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_frame_list_is_malformed() {
        let text = r#"{"speaker":"s","word":"w","take":0,"frames":[]}"#;
        assert!(matches!(
            parse_manifest(text, Path::new("")),
            Err(DatasetError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn bbox_count_must_match_frames() {
        let text = r#"{"speaker":"s","word":"w","take":0,"frames":["a.png","b.png"],"bbox":[[0,0,4,4]]}"#;
        assert!(matches!(
            parse_manifest(text, Path::new("")),
            Err(DatasetError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_manifest("/nonexistent/manifest.jsonl").unwrap_err();
        assert!(matches!(err, DatasetError::Io { .. }));
    }

    #[test]
    fn miracl_shaped_manifest_has_one_thousand_records() {
        let mut lines = Vec::new();
        for s in 0..10 {
            for w in 0..10 {
                for t in 0..10 {
                    lines.push(line(&format!("s{s}"), &format!("w{w}"), t));
                }
            }
        }
        let records = parse_manifest(&lines.join("\n"), Path::new("")).unwrap();
        assert_eq!(records.len(), 1000);
    }

    #[test]
    fn write_then_load_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut frames = UtteranceRecord::with_frames(
            Identity::new("a", "b", 2),
            vec![PathBuf::from("f0.png"), PathBuf::from("f1.png")],
        );
        frames.bbox = Some(vec![Bbox { x: 1, y: 2, w: 3, h: 4 }; 2]);
        let records = vec![
            UtteranceRecord::with_embedding(Identity::new("a", "b", 0), "e.emb"),
            frames,
        ];
        write_manifest(&path, &records).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded[0].source, FrameSource::Embedding(dir.path().join("e.emb")));
        assert_eq!(loaded[1].bbox, records[1].bbox);
    }
}
