//! A full query: seed analysis, query slice, screening, pinpointing,
//! candidate slices, ranking and the report.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::code::{Function, FunctionId, OccRef, StmtId};
use crate::diag::Diagnostic;
use crate::embed::{cosine_similarity, sequence_embedding, text_embedding, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::graphs::build_cfg_and_ddg;
use crate::index::{screen_top_k, Index, MaskRecord, DEFAULT_SCREEN_TOP_K};
use crate::par::{self, ExecMode};
use crate::pinpoint::{candidate_vectors, pinpoint_all, seed_vectors, PinpointConfig, PinpointResult};
use crate::seed::{analyze_seed, SeedSignature};
use crate::slicer::{customized_slice, kebab_enum, merge_slices, Criterion, FeatureSlice, SliceConfig};

pub const DEFAULT_TOP_N: usize = 10;

/// Where a candidate's feature slice comes from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSlice {
    /// Customized slices of the pinpointed criteria, merged.
    #[default]
    Slice,
    /// Only the pinpointed statements themselves.
    DirectMaskMapping,
}

kebab_enum!(TargetSlice {
    Slice => "slice",
    DirectMaskMapping => "direct-mask-mapping",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryConfig {
    pub slice: SliceConfig,
    pub pinpoint: PinpointConfig,
    pub target_slice: TargetSlice,
    pub screen_top_k: usize,
    pub top_n: usize,
    pub exec: ExecMode,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            slice: SliceConfig::default(),
            pinpoint: PinpointConfig::default(),
            target_slice: TargetSlice::default(),
            screen_top_k: DEFAULT_SCREEN_TOP_K,
            top_n: DEFAULT_TOP_N,
            exec: ExecMode::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Query {
    pub seed_function: Function,
    pub signature: SeedSignature,
    /// One per seed pair.
    pub seed_vectors: Vec<EmbeddingVector>,
    pub query_slice: FeatureSlice,
    pub query_slice_vector: EmbeddingVector,
    pub seed_function_vector: EmbeddingVector,
    /// Canonical path of the seed's source file. A corpus function with the
    /// seed's name in this file is the seed itself and is not ranked.
    pub seed_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub rank: usize,
    pub function: FunctionId,
    pub name: String,
    pub file: String,
    pub start_line: u32,
    pub score: f64,
    pub pinpoints: Vec<PinpointResult>,
    pub slice: FeatureSlice,
}

#[derive(Debug, Clone, Default)]
pub struct QueryResult {
    pub ranked: Vec<RankedCandidate>,
    /// Screened functions that could not be ranked, with the reason.
    pub skipped: Vec<Diagnostic>,
}

/// Builds a query from a buggy/fixed pair.
pub fn prepare_query(
    provider: &dyn EmbeddingProvider,
    buggy: &Function,
    fixed: &Function,
    config: &QueryConfig,
) -> Result<Query> {
    let (_, signature) = analyze_seed(buggy, fixed).map_err(|e| match e {
        Error::EmptyResult | Error::NoRootStatement(_) => Error::SeedAnalysisFailed(e.to_string()),
        e => e,
    })?;
    prepare_query_with(provider, buggy, signature, config)
}

/// Builds a query from a given seed signature, skipping diff analysis.
pub fn prepare_query_with(
    provider: &dyn EmbeddingProvider,
    buggy: &Function,
    signature: SeedSignature,
    config: &QueryConfig,
) -> Result<Query> {
    if signature.is_empty() {
        return Err(Error::SeedAnalysisFailed("empty seed signature".into()));
    }
    let graphs = build_cfg_and_ddg(buggy);
    let slices = signature
        .pairs
        .iter()
        .map(|p| customized_slice(buggy, &graphs, p.stmt, &p.key, config.slice))
        .collect::<Result<Vec<_>>>()?;
    let query_slice = merge_slices(&slices)?;
    Ok(Query {
        seed_vectors: seed_vectors(provider, buggy, &signature, config.pinpoint)?,
        query_slice_vector: text_embedding(provider, &query_slice.text())?,
        seed_function_vector: sequence_embedding(provider, &buggy.tokens)?,
        query_slice,
        signature,
        seed_function: buggy.clone(),
        seed_file: None,
    })
}

fn is_seed(query: &Query, index: &Index, record: usize) -> bool {
    let Some(seed_file) = &query.seed_file else {
        return false;
    };
    index.records[record].name == query.seed_function.name
        && std::fs::canonicalize(index.source_path(record)).is_ok_and(|p| &p == seed_file)
}

fn mask_record<'a>(index: &'a Index, record: usize, r: &PinpointResult) -> Option<&'a MaskRecord> {
    index.records[record]
        .masks
        .iter()
        .find(|m| m.stmt_index == r.stmt && m.occ == r.occ)
}

/// Scores one screened function, or says why it cannot be ranked.
fn rank_one(
    query: &Query,
    index: &Index,
    record: usize,
    provider: &dyn EmbeddingProvider,
    config: &QueryConfig,
) -> Result<RankedCandidate> {
    let func = index.function(record)?;
    let settings = &index.manifest.settings;
    let stored_masks = config.pinpoint.method == crate::embed::PinpointEmbedding::Mask
        && config.pinpoint.context == settings.mask_context;
    let candidates = if stored_masks {
        index.records[record]
            .masks
            .iter()
            .map(|m| {
                let r = OccRef {
                    stmt: m.stmt_index,
                    occ: m.occ,
                };
                (r, index.mask_vector(m))
            })
            .collect()
    } else {
        candidate_vectors(provider, &func, config.pinpoint)?
    };
    let pinpoints = pinpoint_all(&query.seed_vectors, &func, &candidates)?;

    let criteria = |p: &PinpointResult| Criterion {
        stmt: p.stmt_id,
        key: p.key.clone(),
    };
    let stored_slices = settings.slicing == config.slice;
    let (slice, vector) = match config.target_slice {
        TargetSlice::DirectMaskMapping => {
            let slice = FeatureSlice::from_indices(
                &func,
                pinpoints.iter().map(criteria).collect(),
                pinpoints.iter().map(|p| p.stmt),
            );
            (slice, None)
        }
        TargetSlice::Slice => {
            let graphs = build_cfg_and_ddg(&func);
            let mut parts = Vec::with_capacity(pinpoints.len());
            let mut stored = BTreeSet::new();
            for p in &pinpoints {
                match mask_record(index, record, p).filter(|_| stored_slices) {
                    Some(m) => {
                        let idx: Vec<usize> = m
                            .slice
                            .iter()
                            .map(|id| func.statement_index(*id).ok_or_else(|| missing(&func, *id)))
                            .collect::<Result<_>>()?;
                        parts.push(FeatureSlice::from_indices(&func, vec![criteria(p)], idx));
                        stored.insert((m.slice.clone(), m.slice_vector));
                    }
                    None => {
                        parts.push(customized_slice(&func, &graphs, p.stmt, &p.key, config.slice)?);
                        stored.insert((Vec::new(), u64::MAX));
                    }
                }
            }
            let merged = merge_slices(&parts)?;
            // One stored slice covering every pair: its vector is exact.
            let vector = match stored.iter().next() {
                Some((ids, off)) if stored.len() == 1 && *off != u64::MAX && *ids == merged.ids() => {
                    let m = mask_record(index, record, &pinpoints[0]).expect("looked up above");
                    Some(index.slice_vector(m))
                }
                _ => None,
            };
            (merged, vector)
        }
    };
    let vector = match vector {
        Some(v) => v,
        None => text_embedding(provider, &slice.text())?,
    };
    let rec = &index.records[record];
    Ok(RankedCandidate {
        rank: 0,
        function: rec.id.clone(),
        name: rec.name.clone(),
        file: rec.file.clone(),
        start_line: rec.start_line,
        score: cosine_similarity(&query.query_slice_vector, &vector)?,
        pinpoints,
        slice,
    })
}

fn missing(func: &Function, id: StmtId) -> Error {
    Error::CorruptIndex(format!("stored slice of {} names unknown statement {id}", func.id))
}

/// Screens the index, pinpoints and slices every screened function, and
/// ranks them by slice similarity to the query.
pub fn run_query(
    query: &Query,
    index: &Index,
    provider: &dyn EmbeddingProvider,
    config: &QueryConfig,
) -> Result<QueryResult> {
    index.check_provider(provider.info())?;
    let screened: Vec<usize> = screen_top_k(index, &query.seed_function_vector, config.screen_top_k, config.exec)?
        .into_iter()
        .map(|(i, _)| i)
        .filter(|&i| !is_seed(query, index, i))
        .collect();
    let outcomes = par::map(config.exec, &screened, |&i| rank_one(query, index, i, provider, config));

    let mut result = QueryResult::default();
    for (&i, outcome) in screened.iter().zip(outcomes) {
        match outcome {
            Ok(c) => result.ranked.push(c),
            Err(e @ (Error::AllPairsFailed(_) | Error::NoEligibleOccurrence(_))) => {
                let r = &index.records[i];
                log::debug!("skipping {}: {e}", r.id);
                result
                    .skipped
                    .push(Diagnostic::warning(&r.file, r.start_line, format!("{}: {e}", r.name)));
            }
            Err(e) => return Err(e),
        }
    }
    result
        .ranked
        .sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.function.cmp(&b.function)));
    result.ranked.truncate(config.top_n);
    for (i, c) in result.ranked.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    #[default]
    Text,
    Json,
}

kebab_enum!(ReportFormat {
    Text => "text",
    Json => "json",
});

/// Renders a ranking for auditors.
pub fn render_report(ranked: &[RankedCandidate], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(ranked).expect("report data serializes");
            s.push('\n');
            s
        }
        ReportFormat::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "rank  score   function (file:line)");
            for c in ranked {
                let _ = writeln!(
                    s,
                    "{:>4}  {:.4}  {} ({}:{})",
                    c.rank, c.score, c.name, c.file, c.start_line
                );
                for p in &c.pinpoints {
                    let _ = writeln!(
                        s,
                        "      pinpoint {}:{} `{}` (seed pair {}, {:.4})",
                        c.file, p.stmt_id.line, p.key, p.seed_pair, p.score
                    );
                }
                for st in &c.slice.statements {
                    let _ = writeln!(s, "      {:>6}  {}", st.id.line, st.text);
                }
            }
            s
        }
    }
}
