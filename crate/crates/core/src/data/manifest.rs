//! Manifest and hypothesis TSV files.
//!
//! A manifest row is `utt_id ⇥ feature_path ⇥ transcript`, optionally
//! followed by `⇥ frames` which must match the feature file. Relative
//! feature paths resolve against the manifest's directory. A hypothesis
//! row is `utt_id ⇥ transcript`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::features::{read_features, write_features};
use super::{Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    /// 1-based line number.
    pub line: usize,
    pub id: String,
    pub feature_path: String,
    pub transcript: String,
    pub frames: Option<usize>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(char::is_whitespace)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |d: String| Error::format("manifest", format!("line {line}: {d}"));
        let fields: Vec<&str> = raw.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(bad(format!("expected 3 or 4 tab-separated fields, found {}", fields.len())));
        }
        let id = fields[0];
        if !valid_id(id) {
            return Err(bad(format!("invalid utterance id {id:?}")));
        }
        if fields[1].is_empty() {
            return Err(bad("empty feature path".into()));
        }
        let frames = match fields.get(3) {
            Some(f) => Some(
                f.trim()
                    .parse::<usize>()
                    .map_err(|_| bad(format!("bad frame count {f:?}")))?,
            ),
            None => None,
        };
        if !seen.insert(id.to_string()) {
            return Err(bad(format!("duplicate utterance id {id:?}")));
        }
        rows.push(ManifestRow {
            line,
            id: id.to_string(),
            feature_path: fields[1].to_string(),
            transcript: fields[2].to_string(),
            frames,
        });
    }
    Ok(rows)
}

/// Reads a manifest and every feature file it references without encoding
/// the transcripts. Every feature matrix must have the same width.
pub fn load_manifest_features(path: &Path) -> Result<Vec<(ManifestRow, Tensor)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rows = parse_manifest(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::with_capacity(rows.len());
    let mut width = None;
    for row in rows {
        let at = |e: Error| Error::Data(format!("{}:{} ({}): {e}", path.display(), row.line, row.id));
        let features = read_features(&resolve(base, &row.feature_path)).map_err(at)?;
        if let Some(f) = row.frames {
            if f != features.rows() {
                return Err(at(Error::format(
                    "manifest",
                    format!("row lists {f} frames, feature file has {}", features.rows()),
                )));
            }
        }
        match width {
            None => width = Some(features.cols()),
            Some(w) if w != features.cols() => {
                return Err(at(Error::format(
                    "manifest",
                    format!("feature width {} differs from {w}", features.cols()),
                )))
            }
            _ => {}
        }
        out.push((row, features));
    }
    Ok(out)
}

/// [`load_manifest_features`] plus transcripts encoded with `vocab`.
pub fn load_manifest(path: &Path, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    load_manifest_features(path)?
        .into_iter()
        .map(|(row, features)| {
            let transcript = vocab
                .encode(&row.transcript)
                .map_err(|e| Error::Data(format!("{}:{} ({}): {e}", path.display(), row.line, row.id)))?;
            Ok(Utterance {
                id: row.id,
                features,
                transcript,
            })
        })
        .collect()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Writes `utts` as feature files under `dir/feats/` plus `dir/{name}.tsv`.
/// Returns the manifest path.
pub fn write_dataset(dir: &Path, name: &str, utts: &[Utterance], vocab: &Vocabulary) -> Result<PathBuf> {
    let feats = dir.join("feats");
    std::fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
    let mut manifest = String::new();
    for u in utts {
        if !u.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || u.id.starts_with('.') {
            return Err(Error::Data(format!("utterance id {:?} is not a safe file name", u.id)));
        }
        let rel = format!("feats/{}.gicf", u.id);
        write_features(&dir.join(&rel), &u.features)?;
        let text = vocab.decode(&u.transcript)?;
        manifest.push_str(&format!("{}\t{rel}\t{text}\t{}\n", u.id, u.features.rows()));
    }
    let path = dir.join(format!("{name}.tsv"));
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn parse_hypotheses(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let bad = |d: String| Error::format("hypothesis file", format!("line {}: {d}", i + 1));
        let (id, hyp) = raw.split_once('\t').unwrap_or((raw, ""));
        if !valid_id(id) {
            return Err(bad(format!("invalid utterance id {id:?}")));
        }
        if hyp.contains('\t') {
            return Err(bad("more than two fields".into()));
        }
        if !seen.insert(id.to_string()) {
            return Err(bad(format!("duplicate utterance id {id:?}")));
        }
        out.push((id.to_string(), hyp.to_string()));
    }
    Ok(out)
}

pub fn format_hypotheses<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut s = String::new();
    for (id, hyp) in rows {
        s.push_str(id);
        s.push('\t');
        s.push_str(hyp);
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::TokenMode;
    use crate::tensor::Tensor;

    fn vocab() -> Vocabulary {
        Vocabulary::new(TokenMode::Char, ["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn parse_rows() {
        let rows = parse_manifest("u1\tf1.gicf\tab\n\nu2\t/abs/f2\t\t7\n").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].line, 3);
        assert_eq!(rows[1].frames, Some(7));
        assert_eq!(rows[1].transcript, "");
        assert!(parse_manifest("u1\tf\tab\nu1\tg\tba\n").is_err());
        assert!(parse_manifest("u1\tf\n").is_err());
        assert!(parse_manifest("u 1\tf\tab\n").is_err());
        assert!(parse_manifest("u1\tf\tab\tx\n").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let utts = vec![
            Utterance {
                id: "x1".into(),
                features: Tensor::matrix(3, 2, vec![0.5, 1.0, -2.0, 0.25, 0.0, 8.0]),
                transcript: vec![1, 2],
            },
            Utterance {
                id: "x2".into(),
                features: Tensor::matrix(1, 2, vec![1.0, 2.0]),
                transcript: vec![],
            },
        ];
        let path = write_dataset(dir.path(), "train", &utts, &vocab()).unwrap();
        assert_eq!(load_manifest(&path, &vocab()).unwrap(), utts);
    }

    #[test]
    fn load_errors_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(&path, "ok\tmissing.gicf\tab\n").unwrap();
        let err = load_manifest(&path, &vocab()).unwrap_err().to_string();
        assert!(err.contains(":1 (ok)"), "{err}");

        let f = dir.path().join("f.gicf");
        write_features(&f, &Tensor::matrix(2, 2, vec![0.0; 4])).unwrap();
        std::fs::write(&path, "u\tf.gicf\tab\t3\n").unwrap();
        assert!(load_manifest(&path, &vocab()).is_err());
        std::fs::write(&path, "u\tf.gicf\tabz\n").unwrap();
        assert!(load_manifest(&path, &vocab()).is_err());
        std::fs::write(&path, "u\tf.gicf\tab\t2\n").unwrap();
        assert!(load_manifest(&path, &vocab()).is_ok());
    }

    #[test]
    fn hypotheses() {
        let rows = parse_hypotheses("a\txy z\nb\t\nc\n").unwrap();
        assert_eq!(rows[0], ("a".to_string(), "xy z".to_string()));
        assert_eq!(rows[2].1, "");
        assert!(parse_hypotheses("a\tx\na\ty\n").is_err());
        let text = format_hypotheses(rows.iter().map(|(a, b)| (a.as_str(), b.as_str())));
        assert_eq!(parse_hypotheses(&text).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn parsers_never_panic(text in "[a-z\t\n 0-9./]{0,120}") {
            let _ = parse_manifest(&text);
            let _ = parse_hypotheses(&text);
        }
    }
}
