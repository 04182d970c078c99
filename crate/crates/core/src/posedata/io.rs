//! JSON-lines sequence files.
//!
//! One sequence per line:
//! `{"id": str, "label": int|null, "frames": [[[x, y, c] x 49] x T]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, PoseSequence, Split, NUM_JOINTS};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    label: Option<usize>,
    frames: Vec<Vec<[f64; 3]>>,
}

fn to_sequence(rec: Record) -> Result<PoseSequence> {
    let mut coords = Vec::with_capacity(rec.frames.len() * NUM_JOINTS);
    let mut conf = Vec::with_capacity(rec.frames.len() * NUM_JOINTS);
    for (t, frame) in rec.frames.iter().enumerate() {
        if frame.len() != NUM_JOINTS {
            return Err(Error::JointCount {
                id: rec.id,
                frame: t,
                found: frame.len(),
                expected: NUM_JOINTS,
            });
        }
        for &[x, y, c] in frame {
            coords.push([x, y]);
            conf.push(c);
        }
    }
    PoseSequence::new(rec.id, rec.label, coords, conf)
}

fn to_record(seq: &PoseSequence) -> Record {
    let frames = (0..seq.frames())
        .map(|t| {
            (0..NUM_JOINTS)
                .map(|j| {
                    let [x, y] = seq.coord(t, j);
                    [x, y, seq.confidence(t, j)]
                })
                .collect()
        })
        .collect();
    Record {
        id: seq.id().to_string(),
        label: seq.label(),
        frames,
    }
}

/// Parses sequences from any buffered reader.
pub fn read_sequences<R: BufRead>(reader: R, expect_labels: bool) -> Result<Vec<PoseSequence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let seq = to_sequence(rec)?;
        if expect_labels && seq.label().is_none() {
            return Err(Error::MissingLabel { id: seq.id().to_string() });
        }
        out.push(seq);
    }
    Ok(out)
}

pub fn write_sequences<W: Write>(mut writer: W, sequences: &[PoseSequence]) -> Result<()> {
    for seq in sequences {
        let line = serde_json::to_string(&to_record(seq)).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(writer, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    writer.flush().map_err(|e| Error::io("<writer>", e))
}

/// Loads a JSON-lines file. The class count is one past the largest label.
pub fn load_sequences(path: impl AsRef<Path>, expect_labels: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let sequences = read_sequences(BufReader::new(file), expect_labels)?;
    Ok(Dataset::from_sequences(sequences, Split::Train))
}

pub fn save_sequences(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_sequences(BufWriter::new(file), &dataset.sequences)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_line(joints: usize, frames: usize, label: &str) -> String {
        let frame = vec!["[0.0,0.0,1.0]"; joints].join(",");
        let frames = vec![format!("[{frame}]"); frames].join(",");
        format!(r#"{{"id":"a","label":{label},"frames":[{frames}]}}"#)
    }

    #[test]
    fn minimal_record() {
        let seqs = read_sequences(record_line(49, 2, "3").as_bytes(), true).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].frames(), 2);
        assert_eq!(seqs[0].label(), Some(3));
    }

    #[test]
    fn short_frame_rejected() {
        let err = read_sequences(record_line(48, 1, "0").as_bytes(), false).unwrap_err();
        assert!(err.to_string().contains("joint count mismatch"), "{err}");
    }

    #[test]
    fn key_order_is_free_and_null_label_allowed() {
        let frame = vec!["[1.5,-2.0,0.25]"; 49].join(",");
        let line = format!(r#"{{"frames":[[{frame}]],"label":null,"id":"z"}}"#);
        let seqs = read_sequences(line.as_bytes(), false).unwrap();
        assert_eq!(seqs[0].label(), None);
        assert!(matches!(
            read_sequences(line.as_bytes(), true),
            Err(Error::MissingLabel { .. })
        ));
    }

    #[test]
    fn malformed_and_out_of_range() {
        assert!(matches!(
            read_sequences("{not json".as_bytes(), false),
            Err(Error::Malformed { line: 1, .. })
        ));
        let frame = vec!["[0,0,1.2]"; 49].join(",");
        let line = format!(r#"{{"id":"c","label":1,"frames":[[{frame}]]}}"#);
        assert!(matches!(
            read_sequences(line.as_bytes(), false),
            Err(Error::Confidence { .. })
        ));
    }

    #[test]
    fn writer_emits_keys_in_order() {
        let seq = read_sequences(record_line(49, 1, "0").as_bytes(), true).unwrap();
        let mut buf = Vec::new();
        write_sequences(&mut buf, &seq).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let (i, l, f) = (text.find("\"id\""), text.find("\"label\""), text.find("\"frames\""));
        assert!(i < l && l < f);
    }
}
