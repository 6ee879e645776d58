//! Samples, tokenized samples, datasets and prompt templates.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;
use sha2::{Digest, Sha256};

use crate::tokenizer::Tokenizer;
use crate::{Error, Result};

/// One raw instruction-response pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub instruction: String,
    pub response: String,
}

/// A sample after tokenization and templating. `instr_tokens` holds every
/// conditioning-side token (template text and separator included), so its
/// length is the `L` used for the noise scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSample {
    pub id: String,
    pub instr_tokens: Vec<u32>,
    pub resp_tokens: Vec<u32>,
}

impl TokenizedSample {
    pub fn instr_len(&self) -> usize {
        self.instr_tokens.len()
    }

    pub fn resp_len(&self) -> usize {
        self.resp_tokens.len()
    }

    /// `[instruction ‖ response]`, the input of the conditional pass.
    pub fn joined_tokens(&self) -> Vec<u32> {
        let mut v = Vec::with_capacity(self.instr_len() + self.resp_len());
        v.extend_from_slice(&self.instr_tokens);
        v.extend_from_slice(&self.resp_tokens);
        v
    }
}

pub(crate) fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::EmptyId);
    }
    if id.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidId { id: id.into() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Instruction,
}

/// A conditioning-side template. The only placeholder is `{instruction}`;
/// `{{` and `}}` are literal braces. With `separator` set, the tokenizer's
/// separator id is appended after the rendered instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pattern: String,
    segments: Vec<Segment>,
    separator: bool,
}

impl Default for PromptTemplate {
    /// Plain concatenation: the instruction, one separator token, the response.
    fn default() -> Self {
        Self::parse("{instruction}", true).expect("default template parses")
    }
}

impl PromptTemplate {
    pub fn identity() -> Self {
        Self::parse("{instruction}", false).expect("identity template parses")
    }

    pub fn parse(pattern: &str, separator: bool) -> Result<Self> {
        let mut segments = Vec::new();
        let mut lit = String::new();
        let mut chars = pattern.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    lit.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    lit.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some('{') | None => {
                                return Err(Error::MalformedTemplate { reason: "unclosed '{'" })
                            }
                            Some(c) => name.push(c),
                        }
                    }
                    if name != "instruction" {
                        return Err(Error::UnknownPlaceholder { name });
                    }
                    if !lit.is_empty() {
                        segments.push(Segment::Literal(core::mem::take(&mut lit)));
                    }
                    segments.push(Segment::Instruction);
                }
                '}' => return Err(Error::MalformedTemplate { reason: "unmatched '}'" }),
                c => lit.push(c),
            }
        }
        if !lit.is_empty() {
            segments.push(Segment::Literal(lit));
        }
        Ok(Self { pattern: pattern.into(), segments, separator })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn has_separator(&self) -> bool {
        self.separator
    }

    pub fn render(&self, instruction: &str) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Instruction => out.push_str(instruction),
            }
        }
        out
    }

    fn conditioning_tokens(&self, instruction: &str, tokenizer: &dyn Tokenizer) -> Vec<u32> {
        let mut toks = tokenizer.encode(&self.render(instruction));
        if self.separator {
            toks.push(tokenizer.separator_id());
        }
        toks
    }

    /// Re-renders the conditioning side of `sample` from its raw instruction.
    /// Response tokens are left untouched.
    pub fn apply(
        &self,
        sample: TokenizedSample,
        instruction: &str,
        tokenizer: &dyn Tokenizer,
    ) -> TokenizedSample {
        TokenizedSample {
            instr_tokens: self.conditioning_tokens(instruction, tokenizer),
            ..sample
        }
    }

    pub fn tokenize(&self, sample: &Sample, tokenizer: &dyn Tokenizer) -> Result<TokenizedSample> {
        validate_id(&sample.id)?;
        let resp_tokens = tokenizer.encode(&sample.response);
        if resp_tokens.is_empty() {
            return Err(Error::EmptyResponse { id: sample.id.clone() });
        }
        Ok(TokenizedSample {
            id: sample.id.clone(),
            instr_tokens: self.conditioning_tokens(&sample.instruction, tokenizer),
            resp_tokens,
        })
    }
}

/// An ordered, immutable collection of tokenized samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    samples: Vec<TokenizedSample>,
    tokenizer_fingerprint: String,
}

impl Dataset {
    pub fn new(samples: Vec<TokenizedSample>, tokenizer_fingerprint: String) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &samples {
            validate_id(&s.id)?;
            if s.resp_tokens.is_empty() {
                return Err(Error::EmptyResponse { id: s.id.clone() });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId { id: s.id.clone() });
            }
        }
        Ok(Self { samples, tokenizer_fingerprint })
    }

    pub fn from_samples(
        raw: &[Sample],
        tokenizer: &dyn Tokenizer,
        template: &PromptTemplate,
    ) -> Result<Self> {
        let samples = raw
            .iter()
            .map(|s| template.tokenize(s, tokenizer))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, tokenizer.fingerprint())
    }

    pub fn samples(&self) -> &[TokenizedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn tokenizer_fingerprint(&self) -> &str {
        &self.tokenizer_fingerprint
    }

    pub fn check_tokenizer(&self, fingerprint: &str) -> Result<()> {
        if fingerprint != self.tokenizer_fingerprint {
            return Err(Error::TokenizerMismatch {
                expected: self.tokenizer_fingerprint.clone(),
                found: fingerprint.into(),
            });
        }
        Ok(())
    }

    pub fn total_response_tokens(&self) -> usize {
        self.samples.iter().map(TokenizedSample::resp_len).sum()
    }

    /// SHA-256 over the tokenizer fingerprint and every sample's id and
    /// token sequences, in order, as lowercase hex.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.tokenizer_fingerprint.as_bytes());
        h.update([0u8]);
        for s in &self.samples {
            h.update((s.id.len() as u64).to_le_bytes());
            h.update(s.id.as_bytes());
            for part in [&s.instr_tokens, &s.resp_tokens] {
                h.update((part.len() as u64).to_le_bytes());
                for t in part.iter() {
                    h.update(t.to_le_bytes());
                }
            }
        }
        let mut hex = String::with_capacity(64);
        for b in h.finalize() {
            let _ = write!(hex, "{b:02x}");
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{WhitespaceByteTokenizer, SEPARATOR_ID};
    use alloc::vec;

    fn sample(id: &str, instruction: &str, response: &str) -> Sample {
        Sample { id: id.into(), instruction: instruction.into(), response: response.into() }
    }

    #[test]
    fn identity_template_leaves_tokens_unchanged() {
        let tok = WhitespaceByteTokenizer::new();
        let s = PromptTemplate::identity().tokenize(&sample("a", "add two", "four"), &tok).unwrap();
        assert_eq!(s.instr_tokens, tok.encode("add two"));
        let again = PromptTemplate::identity().apply(s.clone(), "add two", &tok);
        assert_eq!(again, s);
    }

    #[test]
    fn template_grows_conditioning_length() {
        let tok = WhitespaceByteTokenizer::new();
        let base = PromptTemplate::identity().tokenize(&sample("a", "hi", "yo"), &tok).unwrap();
        let t = PromptTemplate::parse("Q: {instruction}\nA:", false).unwrap();
        let out = t.apply(base.clone(), "hi", &tok);
        let expected = tok.encode("Q: hi\nA:").len();
        assert_eq!(out.instr_len(), expected);
        assert!(out.instr_len() > base.instr_len());
        assert_eq!(out.resp_tokens, base.resp_tokens);
    }

    #[test]
    fn empty_instruction_gives_zero_length() {
        let tok = WhitespaceByteTokenizer::new();
        let s = PromptTemplate::identity().tokenize(&sample("a", "", "yo"), &tok).unwrap();
        assert_eq!(s.instr_len(), 0);
        let with_sep = PromptTemplate::default().tokenize(&sample("a", "", "yo"), &tok).unwrap();
        assert_eq!(with_sep.instr_tokens, vec![SEPARATOR_ID]);
    }

    #[test]
    fn template_errors() {
        assert_eq!(
            PromptTemplate::parse("{input}", false),
            Err(Error::UnknownPlaceholder { name: "input".into() })
        );
        assert!(matches!(
            PromptTemplate::parse("{instruction", false),
            Err(Error::MalformedTemplate { .. })
        ));
        assert!(matches!(PromptTemplate::parse("a}", false), Err(Error::MalformedTemplate { .. })));
        let t = PromptTemplate::parse("{{x}} {instruction}", false).unwrap();
        assert_eq!(t.render("y"), "{x} y");
    }

    #[test]
    fn empty_response_is_rejected() {
        let tok = WhitespaceByteTokenizer::new();
        let err = PromptTemplate::default().tokenize(&sample("s9", "a", ""), &tok).unwrap_err();
        assert_eq!(err, Error::EmptyResponse { id: "s9".into() });
        assert!(alloc::string::ToString::to_string(&err).contains("empty response"));
    }

    #[test]
    fn dataset_rejects_duplicates_and_keeps_order() {
        let tok = WhitespaceByteTokenizer::new();
        let raw = [sample("b", "x", "y"), sample("a", "x", "z"), sample("c", "", "w")];
        let ds = Dataset::from_samples(&raw, &tok, &PromptTemplate::default()).unwrap();
        let ids: Vec<_> = ds.samples().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        let dup = [sample("a", "x", "y"), sample("a", "x", "z")];
        assert_eq!(
            Dataset::from_samples(&dup, &tok, &PromptTemplate::default()),
            Err(Error::DuplicateId { id: "a".into() })
        );
        assert!(ds.check_tokenizer("other").is_err());
        assert!(ds.check_tokenizer(&tok.fingerprint()).is_ok());
    }

    #[test]
    fn fingerprint_is_deterministic_and_order_sensitive() {
        let tok = WhitespaceByteTokenizer::new();
        let raw = [sample("a", "x", "y"), sample("b", "x", "z")];
        let t = PromptTemplate::default();
        let f1 = Dataset::from_samples(&raw, &tok, &t).unwrap().fingerprint();
        let f2 = Dataset::from_samples(&raw, &tok, &t).unwrap().fingerprint();
        assert_eq!(f1, f2);
        let rev = [raw[1].clone(), raw[0].clone()];
        assert_ne!(f1, Dataset::from_samples(&rev, &tok, &t).unwrap().fingerprint());
    }
}
