use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Register, SpeakerRole, Splits, Utterance};

/// On-disk manifest line. Unknown fields are ignored on read.
#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    register: Register,
    speaker_role: SpeakerRole,
    transcript: String,
    audio_path: String,
    duration_s: f64,
}

/// Parse a line-delimited JSON manifest. Blank lines are skipped.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Vec<Utterance>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_manifest_str(&text, &path.display().to_string())
}

/// Parse manifest text; `origin` names the source in error messages.
pub fn read_manifest_str(text: &str, origin: &str) -> Result<Vec<Utterance>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| CorpusError::Malformed {
            path: origin.to_string(),
            line: line_no,
            message,
        };
        let rec: Record = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if !rec.duration_s.is_finite() || rec.duration_s < 0.0 {
            return Err(malformed(format!("invalid duration_s {}", rec.duration_s)));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: origin.to_string(),
                line: line_no,
                id: rec.id,
            });
        }
        out.push(Utterance::new(
            rec.id,
            rec.register,
            rec.speaker_role,
            rec.transcript,
            rec.audio_path,
            rec.duration_s,
        ));
    }
    Ok(out)
}

pub(crate) fn manifest_string(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for u in utterances {
        let rec = Record {
            id: u.id.clone(),
            register: u.register,
            speaker_role: u.speaker_role,
            transcript: u.transcript.clone(),
            audio_path: u.audio_path.clone(),
            duration_s: u.duration_s,
        };
        out.push_str(&serde_json::to_string(&rec).expect("manifest record serialises"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: impl AsRef<Path>, utterances: &[Utterance]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(manifest_string(utterances).as_bytes()).map_err(io)
}

/// Write `<stem>.train`, `<stem>.val` and `<stem>.test` into `dir`.
pub fn write_split_manifests(dir: impl AsRef<Path>, stem: &str, splits: &Splits) -> Result<[PathBuf; 3], CorpusError> {
    let dir = dir.as_ref();
    let paths = [
        dir.join(format!("{stem}.train")),
        dir.join(format!("{stem}.val")),
        dir.join(format!("{stem}.test")),
    ];
    write_manifest(&paths[0], &splits.train)?;
    write_manifest(&paths[1], &splits.validation)?;
    write_manifest(&paths[2], &splits.test)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{"id":"u1","register":"cds","speaker_role":"caregiver","transcript":"Look at the doggy!","audio_path":"a/u1.wav","duration_s":1.5}
{"id":"u2","register":"ads","speaker_role":"experimenter","transcript":"So how old is she","audio_path":"a/u2.wav","duration_s":2.0,"extra":7}
"#;

    #[test]
    fn parses_records_in_order() {
        let utts = read_manifest_str(TWO, "m").unwrap();
        assert_eq!(utts.len(), 2);
        assert_eq!(utts[0].id, "u1");
        assert_eq!(utts[0].tokens, ["look", "at", "the", "doggy"]);
        assert_eq!(utts[1].register, Register::Ads);
        assert_eq!(utts[1].speaker_role, SpeakerRole::Experimenter);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let text = TWO.replace("\"u2\"", "\"u1\"");
        match read_manifest_str(&text, "m") {
            Err(CorpusError::DuplicateId { line, id, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(id, "u1");
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn missing_duration_names_the_line() {
        let text = TWO.replace(",\"duration_s\":2.0", "");
        match read_manifest_str(&text, "m") {
            Err(CorpusError::Malformed { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("duration_s"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn written_manifest_reads_back() {
        let utts = read_manifest_str(TWO, "m").unwrap();
        let text = manifest_string(&utts);
        assert_eq!(read_manifest_str(&text, "m").unwrap(), utts);
    }
}
