//! The log-prob cache file.
//!
//! ```text
//! #sifd-logprob-cache v1\t<tokenizer fingerprint>\t<model name>
//! <id>\tcond\t<T>\t<T space-separated natural-log probabilities>
//! <id>\tuncond\t<T>\t<...>
//! ```
//!
//! `cond` values are `log P(y_t | y_<t, x)` for the response tokens of the
//! conditional pass, `uncond` values are `log P(y_t | y_<t)`. Numbers are
//! written in shortest round-trip decimal form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sifd_core::{LogProbCache, PassKind};

use crate::error::{Error, Result};

const CACHE_MAGIC: &str = "#sifd-logprob-cache v1";

pub fn write_cache<W: Write>(cache: &LogProbCache, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CACHE_MAGIC}\t{}\t{}", cache.tokenizer_fingerprint(), cache.model_name_str())?;
    for (id, kind, lp) in cache.records() {
        write!(w, "{id}\t{}\t{}\t", kind.as_str(), lp.len())?;
        for (i, v) in lp.iter().enumerate() {
            if i > 0 {
                w.write_all(b" ")?;
            }
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_cache<R: BufRead>(r: R, origin: &Path) -> Result<LogProbCache> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .transpose()
        .map_err(Error::io(origin))?
        .ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
    let rest = header
        .strip_prefix(CACHE_MAGIC)
        .and_then(|r| r.strip_prefix('\t'))
        .ok_or_else(|| Error::parse(origin, 1, "not a log-prob cache file"))?;
    let (fingerprint, model) = rest
        .split_once('\t')
        .ok_or_else(|| Error::parse(origin, 1, "header needs tokenizer fingerprint and model name"))?;
    let mut cache = LogProbCache::new(fingerprint, model);
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(Error::io(origin))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, kind, t, values] = fields[..] else {
            return Err(Error::parse(origin, n, "expected 4 tab-separated fields"));
        };
        let kind = PassKind::parse(kind)
            .ok_or_else(|| Error::parse(origin, n, format!("unknown pass kind {kind:?}")))?;
        let t: usize = t.parse().map_err(|e| Error::parse(origin, n, e))?;
        let lp = values
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| Error::parse(origin, n, e)))
            .collect::<Result<Vec<_>>>()?;
        if lp.len() != t {
            return Err(Error::parse(origin, n, format!("length mismatch: T={t} but {} values", lp.len())));
        }
        cache.insert(id, kind, lp).map_err(|e| Error::parse(origin, n, e))?;
    }
    Ok(cache)
}

pub fn save_cache(cache: &LogProbCache, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(Error::io(path))?;
    write_cache(cache, BufWriter::new(f)).map_err(Error::io(path))
}

pub fn load_cache(path: &Path) -> Result<LogProbCache> {
    let f = File::open(path).map_err(Error::io(path))?;
    read_cache(BufReader::new(f), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_handwritten_cache() {
        let text = "#sifd-logprob-cache v1\tws-byte-v1\tgpt2\n\
                    a\tcond\t2\t-0.5 -1.5\n\
                    a\tuncond\t2\t-0.75 -2\n";
        let c = read_cache(text.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(c.model_name_str(), "gpt2");
        assert_eq!(c.get("a", PassKind::Unconditional), Some(&[-0.75, -2.0][..]));
        let mut out = Vec::new();
        write_cache(&c, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn rejects_malformed_records() {
        for body in ["a\tcond\t3\t-1 -2\n", "a\tboth\t1\t-1\n", "a\tcond\t1\t0.5\n", "a\tcond\n"] {
            let text = format!("#sifd-logprob-cache v1\tfp\tm\n{body}");
            assert!(matches!(read_cache(text.as_bytes(), Path::new("mem")), Err(Error::Parse { line: 2, .. })));
        }
    }
}
