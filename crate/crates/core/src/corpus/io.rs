use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{CorpusError, RoutingExample};

/// Parses line-delimited records, validating every invariant. Blank lines
/// are skipped; line numbers in errors are 1-based.
pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<RoutingExample>, CorpusError> {
    let mut out: Vec<RoutingExample> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let ex: RoutingExample = serde_path_to_error::deserialize(de).map_err(|e| CorpusError::Parse {
            line: lineno,
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        ex.check().map_err(|(field, message)| CorpusError::Parse {
            line: lineno,
            field: field.into(),
            message: format!("record {}: {message}", ex.id),
        })?;
        if let Some(first) = out.first() {
            if first.models() != ex.models() {
                return Err(CorpusError::InconsistentModels {
                    line: lineno,
                    expected: first.models(),
                    found: ex.models(),
                });
            }
        }
        if !seen.insert(ex.id.clone()) {
            return Err(CorpusError::Parse {
                line: lineno,
                field: "id".into(),
                message: format!("duplicate id {}", ex.id),
            });
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<RoutingExample>, CorpusError> {
    parse_corpus(BufReader::new(File::open(path)?))
}

/// Canonical encoding: one compact object per line, fixed field order.
pub fn write_corpus(mut w: impl Write, examples: &[RoutingExample]) -> Result<(), CorpusError> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex).map_err(|e| CorpusError::Parse {
            line: 0,
            field: "record".into(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, examples: &[RoutingExample]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_corpus(&mut w, examples)?;
    w.flush()?;
    Ok(())
}

/// Hex SHA-256 of the canonical encoding.
pub fn corpus_digest(examples: &[RoutingExample]) -> String {
    let mut buf = Vec::new();
    write_corpus(&mut buf, examples).expect("writing to memory cannot fail");
    hex::encode(Sha256::digest(&buf))
}
