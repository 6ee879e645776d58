use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::{PassKind, ScoringBackend};
use crate::corpus::{Dataset, TokenizedSample};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
struct Entry {
    cond: Option<Vec<f64>>,
    uncond: Option<Vec<f64>>,
}

/// Precomputed response log-probs, keyed by sample id and pass.
///
/// This backend has no embedding layer, so it can score clean samples but
/// cannot build noise neighborhoods.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogProbCache {
    tokenizer_fingerprint: String,
    model_name: String,
    entries: BTreeMap<String, Entry>,
    order: Vec<String>,
}

impl LogProbCache {
    pub fn new(tokenizer_fingerprint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            tokenizer_fingerprint: tokenizer_fingerprint.into(),
            model_name: model_name.into(),
            ..Default::default()
        }
    }

    /// Runs both passes of `backend` over every sample.
    pub fn from_backend(backend: &dyn ScoringBackend, dataset: &Dataset) -> Result<Self> {
        let mut cache = Self::new(dataset.tokenizer_fingerprint(), backend.model_name());
        for s in dataset.samples() {
            for kind in [PassKind::Conditional, PassKind::Unconditional] {
                let lp = backend.pass_logprobs(s, kind).map_err(|e| e.for_sample(&s.id))?;
                cache.insert(&s.id, kind, lp)?;
            }
        }
        Ok(cache)
    }

    pub fn tokenizer_fingerprint(&self) -> &str {
        &self.tokenizer_fingerprint
    }

    pub fn model_name_str(&self) -> &str {
        &self.model_name
    }

    /// Stores one pass. Values must be finite and non-positive.
    pub fn insert(&mut self, id: &str, kind: PassKind, logprobs: Vec<f64>) -> Result<()> {
        crate::corpus::validate_id(id)?;
        if let Some(&value) = logprobs.iter().find(|v| !v.is_finite() || **v > 0.0) {
            return Err(Error::InvalidLogProb { id: id.into(), value });
        }
        if !self.entries.contains_key(id) {
            self.order.push(id.into());
        }
        let entry = self.entries.entry(id.into()).or_default();
        match kind {
            PassKind::Conditional => entry.cond = Some(logprobs),
            PassKind::Unconditional => entry.uncond = Some(logprobs),
        }
        Ok(())
    }

    pub fn get(&self, id: &str, kind: PassKind) -> Option<&[f64]> {
        let e = self.entries.get(id)?;
        match kind {
            PassKind::Conditional => e.cond.as_deref(),
            PassKind::Unconditional => e.uncond.as_deref(),
        }
    }

    /// The stored vector, which must hold exactly `expected_len` entries.
    pub fn lookup(&self, id: &str, kind: PassKind, expected_len: usize) -> Result<&[f64]> {
        let lp = self.get(id, kind).ok_or_else(|| Error::MissingSample { id: id.into() })?;
        if lp.len() != expected_len {
            return Err(Error::LengthMismatch {
                id: id.into(),
                expected: expected_len,
                found: lp.len(),
            });
        }
        Ok(lp)
    }

    /// `(id, pass, log-probs)` in first-insertion order, conditional first.
    pub fn records(&self) -> impl Iterator<Item = (&str, PassKind, &[f64])> + '_ {
        self.order.iter().flat_map(move |id| {
            [PassKind::Conditional, PassKind::Unconditional]
                .into_iter()
                .filter_map(move |k| self.get(id, k).map(|lp| (id.as_str(), k, lp)))
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ScoringBackend for LogProbCache {
    fn model_name(&self) -> String {
        self.model_name.clone()
    }

    fn pass_logprobs(&self, sample: &TokenizedSample, kind: PassKind) -> Result<Vec<f64>> {
        self.lookup(&sample.id, kind, sample.resp_len()).map(<[f64]>::to_vec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample(id: &str, t: usize) -> TokenizedSample {
        TokenizedSample { id: id.into(), instr_tokens: vec![1, 2], resp_tokens: vec![3; t] }
    }

    #[test]
    fn stored_vector_comes_back_verbatim() {
        let mut c = LogProbCache::new("fp", "m");
        let v = vec![-0.5, -1.25, -3.0, -0.125];
        c.insert("a", PassKind::Conditional, v.clone()).unwrap();
        assert_eq!(c.pass_logprobs(&sample("a", 4), PassKind::Conditional).unwrap(), v);
        assert!(c.embedding_model().is_none());
    }

    #[test]
    fn lookup_errors() {
        let mut c = LogProbCache::new("fp", "m");
        c.insert("a", PassKind::Conditional, vec![-1.0; 3]).unwrap();
        assert_eq!(
            c.pass_logprobs(&sample("zz", 3), PassKind::Conditional),
            Err(Error::MissingSample { id: "zz".into() })
        );
        assert_eq!(
            c.pass_logprobs(&sample("a", 3), PassKind::Unconditional),
            Err(Error::MissingSample { id: "a".into() })
        );
        let err = c.pass_logprobs(&sample("a", 4), PassKind::Conditional).unwrap_err();
        assert!(alloc::string::ToString::to_string(&err).contains("length mismatch"));
        assert!(c.insert("b", PassKind::Conditional, vec![0.5]).is_err());
        assert!(c.insert("b", PassKind::Conditional, vec![f64::NAN]).is_err());
    }

    #[test]
    fn records_keep_insertion_order() {
        let mut c = LogProbCache::new("fp", "m");
        c.insert("z", PassKind::Unconditional, vec![-1.0]).unwrap();
        c.insert("a", PassKind::Conditional, vec![-2.0]).unwrap();
        c.insert("z", PassKind::Conditional, vec![-3.0]).unwrap();
        let got: Vec<_> = c.records().map(|(id, k, lp)| (id, k, lp[0])).collect();
        assert_eq!(
            got,
            [
                ("z", PassKind::Conditional, -3.0),
                ("z", PassKind::Unconditional, -1.0),
                ("a", PassKind::Conditional, -2.0)
            ]
        );
    }
}
