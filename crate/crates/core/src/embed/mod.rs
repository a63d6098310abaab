//! Embedding providers, masked variable embeddings and cosine similarity.

mod reference;
mod remote;

use serde::{Deserialize, Serialize};

pub use reference::{
    ReferenceEmbedder, DEFAULT_DIM, DEFAULT_MAX_TOKENS, MASK_TOKEN, REFERENCE_NAME, REFERENCE_VERSION,
};
pub use remote::{RemoteConfig, RemoteProvider};

use crate::code::{Function, Statement, VariableOccurrence};
use crate::error::{Error, Result};
use crate::slicer::kebab_enum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderInfo {
    pub name: String,
    pub version: String,
    pub dim: usize,
    pub max_tokens: usize,
    pub mask_token: String,
}

/// A token encoder. Implementations return one vector of `info().dim`
/// values per input token and must be deterministic.
pub trait EmbeddingProvider: Send + Sync {
    fn info(&self) -> &ProviderInfo;

    /// Encodes at most `max_tokens` tokens. `mask_positions` marks the
    /// mask tokens in the input.
    fn encode_raw(&self, tokens: &[String], mask_positions: &[usize]) -> Result<Vec<Vec<f32>>>;
}

/// Which tokens surround a masked occurrence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskContext {
    /// The occurrence's own statement.
    #[default]
    Statement,
    /// The whole function, windowed to the provider's token limit.
    Function,
}

kebab_enum!(MaskContext {
    Statement => "statement",
    Function => "function",
});

/// How a variable occurrence becomes a vector when pinpointing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PinpointEmbedding {
    /// The vector at a mask token replacing the occurrence.
    #[default]
    Mask,
    /// The sum of the occurrence's own token vectors.
    Aggregate,
}

kebab_enum!(PinpointEmbedding {
    Mask => "mask",
    Aggregate => "aggregate",
});

fn encode_with_masks(
    provider: &dyn EmbeddingProvider,
    tokens: &[String],
    masks: &[usize],
) -> Result<Vec<EmbeddingVector>> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    let info = provider.info();
    let tokens = &tokens[..tokens.len().min(info.max_tokens)];
    let masks: Vec<usize> = masks.iter().copied().filter(|&m| m < tokens.len()).collect();
    let raw = provider.encode_raw(tokens, &masks)?;
    if raw.len() != tokens.len() {
        return Err(Error::ProviderProtocol(format!(
            "{} vectors for {} tokens",
            raw.len(),
            tokens.len()
        )));
    }
    raw.into_iter()
        .map(|v| {
            if v.len() != info.dim {
                Err(Error::DimMismatch(info.dim, v.len()))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(Error::ProviderProtocol("non-finite vector value".into()))
            } else {
                Ok(EmbeddingVector(v))
            }
        })
        .collect()
}

/// One vector per token, truncating input beyond the provider's limit.
pub fn encode(provider: &dyn EmbeddingProvider, tokens: &[String]) -> Result<Vec<EmbeddingVector>> {
    encode_with_masks(provider, tokens, &[])
}

/// Mean of the token vectors.
pub fn sequence_embedding(provider: &dyn EmbeddingProvider, tokens: &[String]) -> Result<EmbeddingVector> {
    let vectors = encode(provider, tokens)?;
    Ok(mean(&vectors))
}

fn mean(vectors: &[EmbeddingVector]) -> EmbeddingVector {
    let dim = vectors[0].dim();
    let mut acc = vec![0.0f64; dim];
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(&v.0) {
            *a += f64::from(x);
        }
    }
    let n = vectors.len() as f64;
    EmbeddingVector(acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// Tokenizes free text (such as a rendered slice) and embeds it.
pub fn text_embedding(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector> {
    let tokens: Vec<String> = crate::code::lexer::tokenize(text).into_iter().map(|t| t.text).collect();
    sequence_embedding(provider, &tokens)
}

fn check_span(stmt: &Statement, occ: &VariableOccurrence) -> Result<()> {
    if occ.span.start > occ.span.end || occ.span.end >= stmt.tokens.len() {
        return Err(Error::SpanMismatch {
            start: occ.span.start,
            end: occ.span.end,
            len: stmt.tokens.len(),
        });
    }
    Ok(())
}

/// The statement's tokens with the occurrence replaced by one mask token.
pub fn mask_occurrence(stmt: &Statement, occ: &VariableOccurrence, mask_token: &str) -> Result<Vec<String>> {
    check_span(stmt, occ)?;
    let mut out = Vec::with_capacity(stmt.tokens.len() - occ.span.len() + 1);
    out.extend_from_slice(&stmt.tokens[..occ.span.start]);
    out.push(mask_token.to_string());
    out.extend_from_slice(&stmt.tokens[occ.span.end + 1..]);
    Ok(out)
}

/// Masked tokens plus the mask's position, in the requested context.
pub fn masked_input(
    func: &Function,
    stmt: &Statement,
    occ: &VariableOccurrence,
    context: MaskContext,
    mask_token: &str,
    max_tokens: usize,
) -> Result<(Vec<String>, usize)> {
    match context {
        MaskContext::Statement => Ok((mask_occurrence(stmt, occ, mask_token)?, occ.span.start)),
        MaskContext::Function => {
            check_span(stmt, occ)?;
            let start = stmt.func_token_start + occ.span.start;
            let end = stmt.func_token_start + occ.span.end;
            if end >= func.tokens.len() {
                return Err(Error::SpanMismatch {
                    start,
                    end,
                    len: func.tokens.len(),
                });
            }
            let mut tokens = Vec::with_capacity(func.tokens.len());
            tokens.extend_from_slice(&func.tokens[..start]);
            tokens.push(mask_token.to_string());
            tokens.extend_from_slice(&func.tokens[end + 1..]);
            if tokens.len() <= max_tokens {
                return Ok((tokens, start));
            }
            let lo = start.saturating_sub(max_tokens / 2).min(tokens.len() - max_tokens);
            Ok((tokens[lo..lo + max_tokens].to_vec(), start - lo))
        }
    }
}

/// The vector at the mask position after masking `occ`.
pub fn embed_variable_masked(
    provider: &dyn EmbeddingProvider,
    func: &Function,
    stmt: &Statement,
    occ: &VariableOccurrence,
    context: MaskContext,
) -> Result<EmbeddingVector> {
    let info = provider.info();
    let (tokens, pos) = masked_input(func, stmt, occ, context, &info.mask_token, info.max_tokens)?;
    let mut vectors = encode_with_masks(provider, &tokens, &[pos])?;
    if pos >= vectors.len() {
        return Err(Error::SpanMismatch {
            start: pos,
            end: pos,
            len: vectors.len(),
        });
    }
    Ok(vectors.swap_remove(pos))
}

/// Sum of the occurrence's token vectors encoded in its statement.
pub fn embed_variable_aggregated(
    provider: &dyn EmbeddingProvider,
    stmt: &Statement,
    occ: &VariableOccurrence,
) -> Result<EmbeddingVector> {
    check_span(stmt, occ)?;
    let vectors = encode(provider, &stmt.tokens)?;
    if occ.span.end >= vectors.len() {
        return Err(Error::SpanMismatch {
            start: occ.span.start,
            end: occ.span.end,
            len: vectors.len(),
        });
    }
    let mut acc = vec![0.0f32; vectors[0].dim()];
    for v in &vectors[occ.span.start..=occ.span.end] {
        for (a, &x) in acc.iter_mut().zip(&v.0) {
            *a += x;
        }
    }
    Ok(EmbeddingVector(acc))
}

/// Variable vector for pinpointing under the chosen method.
pub fn embed_variable(
    provider: &dyn EmbeddingProvider,
    func: &Function,
    stmt: &Statement,
    occ: &VariableOccurrence,
    method: PinpointEmbedding,
    context: MaskContext,
) -> Result<EmbeddingVector> {
    match method {
        PinpointEmbedding::Mask => embed_variable_masked(provider, func, stmt, occ, context),
        PinpointEmbedding::Aggregate => embed_variable_aggregated(provider, stmt, occ),
    }
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimMismatch(u.dim(), v.dim()));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.0.iter().zip(&v.0) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::{extract_functions, CodeConfig};

    fn v(x: &[f32]) -> EmbeddingVector {
        EmbeddingVector(x.to_vec())
    }

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    fn func(src: &str) -> Function {
        extract_functions(src, "t.c", &CodeConfig::default())
            .functions
            .remove(0)
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&v(&[1., 2., 2.]), &v(&[2., 1., 2.])).unwrap() - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1., 0.]), &v(&[0., 1.])).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&v(&[3., 4.]), &v(&[3., 4.])).unwrap(), 1.0);
        assert!(matches!(
            cosine_similarity(&v(&[0., 0.]), &v(&[1., 0.])),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            cosine_similarity(&v(&[1.]), &v(&[1., 0.])),
            Err(Error::DimMismatch(1, 2))
        ));
    }

    #[test]
    fn encode_length_and_truncation() {
        let e = ReferenceEmbedder::new(16, 8);
        assert_eq!(encode(&e, &toks("a b c d e")).unwrap().len(), 5);
        let long: Vec<String> = (0..18).map(|i| format!("t{i}")).collect();
        assert_eq!(encode(&e, &long).unwrap().len(), 8);
        assert!(matches!(encode(&e, &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn sequence_embedding_is_the_mean() {
        let e = ReferenceEmbedder::new(32, 64);
        let t = toks("x y");
        let per = encode(&e, &t).unwrap();
        let m = sequence_embedding(&e, &t).unwrap();
        for i in 0..32 {
            let want = ((f64::from(per[0].0[i]) + f64::from(per[1].0[i])) / 2.0) as f32;
            assert_eq!(m.0[i], want);
        }
        assert_eq!(
            sequence_embedding(&e, &toks("x")).unwrap(),
            encode(&e, &toks("x")).unwrap()[0]
        );
    }

    #[test]
    fn masking() {
        let f = func("void f(struct bus *bus) { err = device_register(&bus->dev); use(err); }");
        let s = &f.statements[0];
        let err = &s.occurrences[0];
        let masked = mask_occurrence(s, err, MASK_TOKEN).unwrap();
        assert_eq!(masked.join(" "), "[MASK] = device_register ( & bus -> dev ) ;");
        let chain = s.occurrences.iter().find(|o| o.key == "bus->dev").unwrap();
        let masked = mask_occurrence(s, chain, MASK_TOKEN).unwrap();
        assert_eq!(masked.len(), s.tokens.len() - 2);
        assert_eq!(masked.iter().filter(|t| *t == MASK_TOKEN).count(), 1);
    }

    #[test]
    fn two_occurrences_in_one_statement_differ() {
        let f = func("void f(int a) { g(a, a); }");
        let s = &f.statements[0];
        let e = ReferenceEmbedder::default();
        let v0 = embed_variable_masked(&e, &f, s, &s.occurrences[0], MaskContext::Statement).unwrap();
        let v1 = embed_variable_masked(&e, &f, s, &s.occurrences[1], MaskContext::Statement).unwrap();
        assert_ne!(v0, v1);
        let again = embed_variable_masked(&e, &f, s, &s.occurrences[0], MaskContext::Statement).unwrap();
        assert_eq!(v0, again);
    }

    #[test]
    fn aggregate_sums_span_vectors() {
        let f = func("void f(struct bus *bus) { put(bus->dev); put(x); }");
        let e = ReferenceEmbedder::new(24, 64);
        let s = &f.statements[0];
        let occ = &s.occurrences[0];
        let per = encode(&e, &s.tokens).unwrap();
        let got = embed_variable_aggregated(&e, s, occ).unwrap();
        for i in 0..24 {
            assert_eq!(got.0[i], per[2].0[i] + per[3].0[i] + per[4].0[i]);
        }
        let s1 = &f.statements[1];
        assert_eq!(
            embed_variable_aggregated(&e, s1, &s1.occurrences[0]).unwrap(),
            encode(&e, &s1.tokens).unwrap()[2]
        );
    }

    #[test]
    fn function_context_windows_long_functions() {
        let mut src = String::from("void f(int a) {\n");
        for i in 0..100 {
            src.push_str(&format!(" g{i}(a);\n"));
        }
        src.push_str("}\n");
        let f = func(&src);
        let s = &f.statements[60];
        let (tokens, pos) = masked_input(&f, s, &s.occurrences[0], MaskContext::Function, MASK_TOKEN, 64).unwrap();
        assert_eq!(tokens.len(), 64);
        assert_eq!(tokens[pos], MASK_TOKEN);
        assert_eq!(tokens[pos - 2], "g60");
        let e = ReferenceEmbedder::new(16, 64);
        let vf = embed_variable_masked(&e, &f, s, &s.occurrences[0], MaskContext::Function).unwrap();
        let vs = embed_variable_masked(&e, &f, s, &s.occurrences[0], MaskContext::Statement).unwrap();
        assert_ne!(vf, vs);
    }
}
