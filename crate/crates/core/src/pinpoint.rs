//! Finding the counterpart of a seed key variable in a target function: the
//! eligible occurrence whose masked vector is closest to the seed's.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::code::{Function, OccRef, StmtId};
use crate::embed::{
    cosine_similarity, embed_variable, EmbeddingProvider, EmbeddingVector, MaskContext, PinpointEmbedding,
};
use crate::error::{Error, Result};
use crate::seed::{SeedPair, SeedSignature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinpointResult {
    /// Statement index in the target function.
    pub stmt: usize,
    pub stmt_id: StmtId,
    /// Occurrence index within the statement.
    pub occ: usize,
    pub key: String,
    pub score: f64,
    /// Index of the seed pair this result answers.
    pub seed_pair: usize,
}

/// Non-declaration occurrences of variables that occur at least twice
/// outside declarations.
pub fn eligible_occurrences(func: &Function) -> Vec<OccRef> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in &func.statements {
        for o in s.occurrences.iter().filter(|o| !o.is_declaration) {
            *counts.entry(o.key.as_str()).or_insert(0) += 1;
        }
    }
    let mut out = Vec::new();
    for (si, s) in func.statements.iter().enumerate() {
        for (oi, o) in s.occurrences.iter().enumerate() {
            if !o.is_declaration && counts[o.key.as_str()] >= 2 {
                out.push(OccRef { stmt: si, occ: oi });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinpointConfig {
    pub method: PinpointEmbedding,
    pub context: MaskContext,
}

/// Vectors of every eligible occurrence of `func`.
pub fn candidate_vectors(
    provider: &dyn EmbeddingProvider,
    func: &Function,
    config: PinpointConfig,
) -> Result<Vec<(OccRef, EmbeddingVector)>> {
    eligible_occurrences(func)
        .into_iter()
        .map(|r| {
            let (s, o) = r.get(func);
            embed_variable(provider, func, s, o, config.method, config.context).map(|v| (r, v))
        })
        .collect()
}

/// The occurrence a seed pair stands for: the first non-declaration
/// occurrence of its key in its statement, else the first one.
pub fn seed_occurrence(func: &Function, pair: &SeedPair) -> Result<OccRef> {
    let s = &func.statements[pair.stmt];
    let pick = s
        .occurrences
        .iter()
        .position(|o| o.key == pair.key && !o.is_declaration)
        .or_else(|| s.occurrences.iter().position(|o| o.key == pair.key))
        .ok_or_else(|| Error::CriterionMismatch {
            key: pair.key.clone(),
            line: s.line,
        })?;
    Ok(OccRef {
        stmt: pair.stmt,
        occ: pick,
    })
}

/// One vector per seed pair, embedded the same way as candidates.
pub fn seed_vectors(
    provider: &dyn EmbeddingProvider,
    func: &Function,
    sig: &SeedSignature,
    config: PinpointConfig,
) -> Result<Vec<EmbeddingVector>> {
    sig.pairs
        .iter()
        .map(|p| {
            let r = seed_occurrence(func, p)?;
            let (s, o) = r.get(func);
            embed_variable(provider, func, s, o, config.method, config.context)
        })
        .collect()
}

/// Orders candidates best first: higher score, then earlier line, earlier
/// token, earlier statement, earlier occurrence.
fn better(func: &Function, a: (&OccRef, f64), b: (&OccRef, f64)) -> Ordering {
    let key = |r: &OccRef| {
        let (s, o) = r.get(func);
        (s.line, o.span.start, r.stmt, r.occ)
    };
    b.1.total_cmp(&a.1).then_with(|| key(a.0).cmp(&key(b.0)))
}

/// The eligible occurrence most similar to `seed`.
pub fn pinpoint_candidate(
    seed: &EmbeddingVector,
    func: &Function,
    candidates: &[(OccRef, EmbeddingVector)],
    seed_pair: usize,
) -> Result<PinpointResult> {
    let mut best: Option<(&OccRef, f64)> = None;
    for (r, v) in candidates {
        let score = cosine_similarity(seed, v)?;
        if best.is_none_or(|b| better(func, (r, score), b) == Ordering::Less) {
            best = Some((r, score));
        }
    }
    let (r, score) = best.ok_or_else(|| Error::NoEligibleOccurrence(func.id.to_string()))?;
    let (s, o) = r.get(func);
    Ok(PinpointResult {
        stmt: r.stmt,
        stmt_id: s.id,
        occ: r.occ,
        key: o.key.clone(),
        score,
        seed_pair,
    })
}

/// One result per seed vector.
pub fn pinpoint_all(
    seeds: &[EmbeddingVector],
    func: &Function,
    candidates: &[(OccRef, EmbeddingVector)],
) -> Result<Vec<PinpointResult>> {
    let mut out = Vec::new();
    for (i, seed) in seeds.iter().enumerate() {
        match pinpoint_candidate(seed, func, candidates, i) {
            Ok(r) => out.push(r),
            Err(Error::NoEligibleOccurrence(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::AllPairsFailed(func.id.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::{extract_functions, CodeConfig};
    use crate::embed::ReferenceEmbedder;

    fn func(src: &str) -> Function {
        extract_functions(src, "t.c", &CodeConfig::default())
            .functions
            .remove(0)
    }

    fn keys(f: &Function, refs: &[OccRef]) -> Vec<String> {
        refs.iter().map(|r| r.get(f).1.key.clone()).collect()
    }

    #[test]
    fn single_use_variables_are_not_eligible() {
        let f = func("void f(void) { int once; int twice; once = 1; twice = 2; use(twice); }");
        assert_eq!(keys(&f, &eligible_occurrences(&f)), ["twice", "twice"]);
    }

    #[test]
    fn registration_line_occurrences_are_eligible() {
        let f = func(
            "int f(struct bus *bus) {\n int err;\n err = device_register(&bus->dev);\n if (err)\n  put_device(&bus->dev);\n return err;\n}",
        );
        let el = eligible_occurrences(&f);
        let on_line: Vec<String> = el
            .iter()
            .filter(|r| r.get(&f).0.line == 3)
            .map(|r| r.get(&f).1.key.clone())
            .collect();
        assert_eq!(on_line, ["err", "bus->dev"]);
    }

    #[test]
    fn nothing_eligible() {
        let f = func("void f(void) { g(a); }");
        let e = ReferenceEmbedder::new(16, 64);
        let c = candidate_vectors(&e, &f, PinpointConfig::default()).unwrap();
        let seed = EmbeddingVector(vec![1.0; 16]);
        assert!(matches!(
            pinpoint_candidate(&seed, &f, &c, 0),
            Err(Error::NoEligibleOccurrence(_))
        ));
        assert!(matches!(pinpoint_all(&[seed], &f, &c), Err(Error::AllPairsFailed(_))));
    }

    #[test]
    fn singleton_wins_regardless_of_score() {
        let f = func("void f(void) { g(a); h(a); }");
        let seed = EmbeddingVector(vec![1.0, 0.0]);
        let c = vec![(OccRef { stmt: 1, occ: 0 }, EmbeddingVector(vec![-1.0, 0.0]))];
        let r = pinpoint_candidate(&seed, &f, &c, 0).unwrap();
        assert_eq!((r.stmt, r.score), (1, -1.0));
    }

    #[test]
    fn ties_go_to_the_earlier_line_then_token() {
        let f = func("void f(void) {\n g(a, b);\n h(b, a);\n}");
        let seed = EmbeddingVector(vec![1.0, 1.0]);
        let same = EmbeddingVector(vec![2.0, 2.0]);
        let c: Vec<_> = eligible_occurrences(&f)
            .into_iter()
            .rev()
            .map(|r| (r, same.clone()))
            .collect();
        let r = pinpoint_candidate(&seed, &f, &c, 0).unwrap();
        assert_eq!((r.stmt, r.occ, r.key.as_str()), (0, 0, "a"));
    }

    #[test]
    fn argmax_matches_exhaustive_search() {
        let f = func(
            "void f(struct s *p) {\n a = p->x;\n b = a + p->y;\n g(a, b);\n h(b, p->x);\n p->y = b;\n k(p->y, a);\n}",
        );
        let e = ReferenceEmbedder::default();
        let c = candidate_vectors(&e, &f, PinpointConfig::default()).unwrap();
        assert!(c.len() >= 10);
        let seed_fn = func("void s(struct d *dev) { kfree(dev->priv); }");
        let seed = embed_variable(
            &e,
            &seed_fn,
            &seed_fn.statements[0],
            &seed_fn.statements[0].occurrences[0],
            PinpointEmbedding::Mask,
            MaskContext::Statement,
        )
        .unwrap();
        let got = pinpoint_candidate(&seed, &f, &c, 0).unwrap();
        let max = c
            .iter()
            .map(|(_, v)| cosine_similarity(&seed, v).unwrap())
            .fold(f64::MIN, f64::max);
        assert_eq!(got.score, max);
    }

    #[test]
    fn two_pairs_may_land_on_the_same_occurrence() {
        let f = func("void f(void) { g(a); h(a); }");
        let c = vec![(OccRef { stmt: 0, occ: 0 }, EmbeddingVector(vec![1.0, 0.0]))];
        let seeds = vec![EmbeddingVector(vec![1.0, 0.5]), EmbeddingVector(vec![0.5, 1.0])];
        let rs = pinpoint_all(&seeds, &f, &c).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!((rs[0].stmt, rs[1].stmt), (0, 0));
        assert_eq!((rs[0].seed_pair, rs[1].seed_pair), (0, 1));
    }
}
