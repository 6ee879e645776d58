//! JSONL ingest and the tokenized-corpus cache file.
//!
//! The cache file starts with `#sifd-tokenized v1\t<tokenizer fingerprint>`
//! followed by one line per sample: `id \t L \t T \t <L+T space-separated ids>`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;
use sifd_core::{Dataset, PromptTemplate, Sample, TokenizedSample, Tokenizer};

use crate::error::{Error, Result};

const TOKENIZED_MAGIC: &str = "#sifd-tokenized v1";

#[derive(Deserialize)]
struct RawLine {
    id: Option<String>,
    instruction: String,
    response: String,
}

/// Reads `{"id"?, "instruction", "response"}` objects, one per line. Blank
/// lines are skipped; a missing id becomes `line-<n>` (1-based).
pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(&line).map_err(|e| Error::parse(path, n, e))?;
        out.push(Sample {
            id: raw.id.unwrap_or_else(|| format!("line-{n}")),
            instruction: raw.instruction,
            response: raw.response,
        });
    }
    Ok(out)
}

pub fn ingest_jsonl(path: &Path, tokenizer: &dyn Tokenizer, template: &PromptTemplate) -> Result<Dataset> {
    let raw = read_samples(path)?;
    Ok(Dataset::from_samples(&raw, tokenizer, template)?)
}

pub fn write_tokenized<W: Write>(dataset: &Dataset, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TOKENIZED_MAGIC}\t{}", dataset.tokenizer_fingerprint())?;
    for s in dataset.samples() {
        write!(w, "{}\t{}\t{}\t", s.id, s.instr_len(), s.resp_len())?;
        for (i, t) in s.instr_tokens.iter().chain(&s.resp_tokens).enumerate() {
            if i > 0 {
                w.write_all(b" ")?;
            }
            write!(w, "{t}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_tokenized<R: BufRead>(r: R, origin: &Path) -> Result<Dataset> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .transpose()
        .map_err(Error::io(origin))?
        .ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
    let fingerprint = header
        .strip_prefix(TOKENIZED_MAGIC)
        .and_then(|rest| rest.strip_prefix('\t'))
        .ok_or_else(|| Error::parse(origin, 1, "not a tokenized corpus file"))?
        .to_string();
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(Error::io(origin))?;
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, l, t, toks] = fields[..] else {
            return Err(Error::parse(origin, n, "expected 4 tab-separated fields"));
        };
        let num = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(origin, n, e));
        let (l, t) = (num(l)?, num(t)?);
        let ids = toks
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u32>().map_err(|e| Error::parse(origin, n, e)))
            .collect::<Result<Vec<_>>>()?;
        if ids.len() != l + t {
            return Err(Error::parse(origin, n, format!("expected {} token ids, found {}", l + t, ids.len())));
        }
        let resp_tokens = ids[l..].to_vec();
        let mut instr_tokens = ids;
        instr_tokens.truncate(l);
        samples.push(TokenizedSample { id: id.to_string(), instr_tokens, resp_tokens });
    }
    Ok(Dataset::new(samples, fingerprint)?)
}

pub fn save_tokenized(dataset: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(Error::io(path))?;
    write_tokenized(dataset, BufWriter::new(f)).map_err(Error::io(path))
}

pub fn load_tokenized(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(Error::io(path))?;
    read_tokenized(BufReader::new(f), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sifd_core::WhitespaceByteTokenizer;

    fn jsonl(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn ingest_keeps_order_and_fills_ids() {
        let f = jsonl(&[
            r#"{"id":"z","instruction":"a","response":"b"}"#,
            r#"{"instruction":"c","response":"d"}"#,
            "",
            r#"{"id":"a","instruction":"","response":"f"}"#,
        ]);
        let ds = ingest_jsonl(f.path(), &WhitespaceByteTokenizer::new(), &PromptTemplate::default()).unwrap();
        let ids: Vec<_> = ds.samples().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["z", "line-2", "a"]);
    }

    #[test]
    fn ingest_errors() {
        let tok = WhitespaceByteTokenizer::new();
        let t = PromptTemplate::default();
        let bad = jsonl(&[r#"{"instruction":"a","response":"b"}"#, "{not json"]);
        let err = ingest_jsonl(bad.path(), &tok, &t).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let empty = jsonl(&[r#"{"instruction":"a","response":""}"#]);
        let err = ingest_jsonl(empty.path(), &tok, &t).unwrap_err();
        assert!(err.to_string().contains("empty response") && err.to_string().contains("line-1"));

        let dup = jsonl(&[
            r#"{"id":"x","instruction":"a","response":"b"}"#,
            r#"{"id":"x","instruction":"a","response":"c"}"#,
        ]);
        assert!(ingest_jsonl(dup.path(), &tok, &t).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn tokenized_round_trip() {
        let f = jsonl(&[
            r#"{"id":"q","instruction":"hello there","response":"general kenobi"}"#,
            r#"{"id":"r","instruction":"","response":"x"}"#,
        ]);
        let ds = ingest_jsonl(f.path(), &WhitespaceByteTokenizer::new(), &PromptTemplate::identity()).unwrap();
        let mut buf = Vec::new();
        write_tokenized(&ds, &mut buf).unwrap();
        let back = read_tokenized(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }

    #[test]
    fn tokenized_rejects_bad_counts() {
        let text = "#sifd-tokenized v1\tfp\na\t1\t2\t5 6\n";
        assert!(read_tokenized(text.as_bytes(), Path::new("mem")).is_err());
        assert!(read_tokenized("junk\n".as_bytes(), Path::new("mem")).is_err());
    }
}
