//! Score table, delta-trace dump, selection output and audit sidecar.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use sifd_core::selection::AuditRow;
use sifd_core::{DeltaTrace, DiscardReason, Sample, ScoreRecord, SelectionResult};

use crate::error::{Error, Result};

pub const SCORE_COLUMNS: [&str; 12] = [
    "id",
    "L",
    "T",
    "ifd",
    "sifd",
    "selected_token_count",
    "mu_hat",
    "sigma2_hat",
    "M_effective",
    "undefined_count",
    "discarded",
    "reason",
];

/// A score table plus the provenance line written above its header.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub dataset_fingerprint: String,
    pub backend: String,
    pub records: Vec<ScoreRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::parse(path, line, e)
    }
}

/// CSV with a leading `# dataset=<fingerprint>\tbackend=<name>` comment.
pub fn write_scores<W: Write>(table: &ScoreTable, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# dataset={}\tbackend={}", table.dataset_fingerprint, table.backend)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(SCORE_COLUMNS)?;
    for r in &table.records {
        csv.write_record([
            r.sample_id.clone(),
            r.instr_len.to_string(),
            r.resp_len.to_string(),
            opt(r.ifd),
            opt(r.sifd),
            r.selected_token_count.to_string(),
            opt(r.mu_hat),
            opt(r.sigma2_hat),
            r.m_effective.to_string(),
            r.undefined_count.to_string(),
            r.discard.is_some().to_string(),
            r.discard.map(DiscardReason::as_str).unwrap_or_default().to_string(),
        ])?;
    }
    csv.flush()
}

pub fn read_scores<R: Read>(r: R, origin: &Path) -> Result<ScoreTable> {
    let mut r = BufReader::new(r);
    let mut first = String::new();
    r.read_line(&mut first).map_err(Error::io(origin))?;
    let meta = first
        .trim_end()
        .strip_prefix("# ")
        .ok_or_else(|| Error::parse(origin, 1, "missing provenance line"))?;
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for kv in meta.split('\t') {
        if let Some((k, v)) = kv.split_once('=') {
            fields.insert(k, v);
        }
    }
    let dataset_fingerprint = fields
        .get("dataset")
        .ok_or_else(|| Error::parse(origin, 1, "provenance line lacks dataset="))?
        .to_string();
    let backend = fields.get("backend").copied().unwrap_or_default().to_string();

    let mut csv = csv::Reader::from_reader(r);
    let header = csv.headers().map_err(csv_err(origin))?;
    if header.iter().collect::<Vec<_>>() != SCORE_COLUMNS {
        return Err(Error::parse(origin, 2, "unexpected score table columns"));
    }
    let mut records = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let line = i + 3;
        let row = row.map_err(csv_err(origin))?;
        let bad = |msg: String| Error::parse(origin, line, msg);
        let get = |c: usize| row.get(c).unwrap_or("");
        let int = |c: usize| get(c).parse::<usize>().map_err(|e| bad(format!("{}: {e}", SCORE_COLUMNS[c])));
        let float = |c: usize| -> Result<Option<f64>> {
            match get(c) {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|e| bad(format!("{}: {e}", SCORE_COLUMNS[c]))),
            }
        };
        let discard = match get(11) {
            "" => None,
            s => Some(DiscardReason::parse(s).ok_or_else(|| bad(format!("unknown reason {s:?}")))?),
        };
        if (get(10) == "true") != discard.is_some() {
            return Err(bad("discarded flag disagrees with reason".into()));
        }
        records.push(ScoreRecord {
            sample_id: get(0).to_string(),
            instr_len: int(1)?,
            resp_len: int(2)?,
            ifd: float(3)?,
            sifd: float(4)?,
            selected_token_count: int(5)?,
            mu_hat: float(6)?,
            sigma2_hat: float(7)?,
            m_effective: int(8)?,
            undefined_count: int(9)?,
            discard,
        });
    }
    Ok(ScoreTable { dataset_fingerprint, backend, records })
}

pub fn save_scores(table: &ScoreTable, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(Error::io(path))?;
    write_scores(table, BufWriter::new(f)).map_err(Error::io(path))
}

pub fn load_scores(path: &Path) -> Result<ScoreTable> {
    let f = File::open(path).map_err(Error::io(path))?;
    read_scores(f, path)
}

const TRACE_HEADER: &str = "id\tt\tlogp_cond\tlogp_uncond\tdelta";

/// One row per response token; `t` is 0-based.
pub fn write_traces<'a, W, I>(traces: I, mut w: W) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a DeltaTrace>,
{
    writeln!(w, "{TRACE_HEADER}")?;
    for tr in traces {
        for t in 0..tr.len() {
            writeln!(
                w,
                "{}\t{t}\t{}\t{}\t{}",
                tr.sample_id(),
                tr.logp_cond()[t],
                tr.logp_uncond()[t],
                tr.delta()[t]
            )?;
        }
    }
    w.flush()
}

/// Regroups consecutive rows by id. The stored delta column must equal the
/// recomputed difference bit for bit.
pub fn read_traces<R: BufRead>(r: R, origin: &Path) -> Result<Vec<DeltaTrace>> {
    let mut lines = r.lines();
    match lines.next().transpose().map_err(Error::io(origin))? {
        Some(h) if h == TRACE_HEADER => {}
        _ => return Err(Error::parse(origin, 1, "not a delta-trace dump")),
    }
    let mut out = Vec::new();
    let mut cur: Option<(String, Vec<f64>, Vec<f64>)> = None;
    let flush = |cur: &mut Option<(String, Vec<f64>, Vec<f64>)>, out: &mut Vec<DeltaTrace>| -> Result<()> {
        if let Some((id, c, u)) = cur.take() {
            out.push(DeltaTrace::new(id, c, u)?);
        }
        Ok(())
    };
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(Error::io(origin))?;
        let f: Vec<&str> = line.split('\t').collect();
        let [id, t, c, u, d] = f[..] else {
            return Err(Error::parse(origin, n, "expected 5 tab-separated fields"));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(origin, n, e));
        let (c, u, d) = (num(c)?, num(u)?, num(d)?);
        if (c - u).to_bits() != d.to_bits() {
            return Err(Error::parse(origin, n, "delta is not logp_cond - logp_uncond"));
        }
        if cur.as_ref().map_or(true, |(cid, _, _)| cid != id) {
            flush(&mut cur, &mut out)?;
            cur = Some((id.to_string(), Vec::new(), Vec::new()));
        }
        let (_, cv, uv) = cur.as_mut().expect("set above");
        let t: usize = t.parse().map_err(|e| Error::parse(origin, n, e))?;
        if t != cv.len() {
            return Err(Error::parse(origin, n, "token index out of sequence"));
        }
        cv.push(c);
        uv.push(u);
    }
    flush(&mut cur, &mut out)?;
    Ok(out)
}

pub fn load_traces(path: &Path) -> Result<Vec<DeltaTrace>> {
    let f = File::open(path).map_err(Error::io(path))?;
    read_traces(BufReader::new(f), path)
}

#[derive(Serialize)]
struct SelectedLine<'a> {
    id: &'a str,
    rank: usize,
    instruction: &'a str,
    response: &'a str,
}

/// Selected samples in rank order, with their original text.
pub fn write_selection<W: Write>(selected: &[String], raw: &[Sample], mut w: W) -> Result<()> {
    let by_id: HashMap<&str, &Sample> = raw.iter().map(|s| (s.id.as_str(), s)).collect();
    for (i, id) in selected.iter().enumerate() {
        let s = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("selected id {id} not present in the dataset")))?;
        let line = SelectedLine { id, rank: i + 1, instruction: &s.instruction, response: &s.response };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(Error::io("<selection>"))?;
    }
    w.flush().map_err(Error::io("<selection>"))
}

pub fn write_audit<W: Write>(result: &SelectionResult, w: W) -> std::io::Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["id", "mu_hat", "sigma2_hat", "sifd", "stage1_rank", "stage2_rank", "selected"])?;
    for AuditRow { sample_id, mu_hat, sigma2_hat, sifd, stage1_rank, stage2_rank } in &result.audit {
        csv.write_record([
            sample_id.clone(),
            opt(*mu_hat),
            opt(*sigma2_hat),
            opt(*sifd),
            stage1_rank.to_string(),
            stage2_rank.map(|r| r.to_string()).unwrap_or_default(),
            stage2_rank.is_some().to_string(),
        ])?;
    }
    csv.flush()
}
