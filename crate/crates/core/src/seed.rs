//! Seed analysis: align a buggy function with its fix, pick the key
//! variables by term frequency over the changed statements, and locate the
//! root statements they hang off.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::code::{Function, StmtId};
use crate::diag::Diagnostic;
use crate::error::{Error, Result};

/// Token-bigram Dice similarity at or above which an unequal statement pair
/// is a modification rather than a delete plus an insert.
pub const MODIFIED_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Equal(usize, usize),
    Delete(usize),
    Insert(usize),
    Modify(usize, usize),
}

/// Statement-level difference between a buggy function and its fix.
/// Indices refer to `buggy.statements` / `fixed.statements`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Patch {
    pub buggy: Function,
    pub fixed: Function,
    pub ops: Vec<EditOp>,
    pub deleted: Vec<usize>,
    pub inserted: Vec<usize>,
    pub modified: Vec<(usize, usize)>,
}

impl Patch {
    pub fn is_empty(&self) -> bool {
        self.deleted.is_empty() && self.inserted.is_empty() && self.modified.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPair {
    /// Index into the buggy function's statements.
    pub stmt: usize,
    pub stmt_id: StmtId,
    pub key: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSignature {
    pub pairs: Vec<SeedPair>,
    /// Key variables dropped because no root statement was found.
    pub dropped: Vec<String>,
    pub diagnostics: Vec<Diagnostic>,
}

impl SeedSignature {
    /// A signature given by hand as `(line, variable)` criteria.
    pub fn manual(func: &Function, criteria: &[(u32, String)]) -> Result<Self> {
        let mut pairs = Vec::new();
        for (line, key) in criteria {
            let (stmt, s) = func
                .statements_at(*line)
                .find(|(_, s)| s.mentions(key))
                .ok_or_else(|| Error::CriterionMismatch {
                    key: key.clone(),
                    line: *line,
                })?;
            pairs.push(SeedPair {
                stmt,
                stmt_id: s.id,
                key: key.clone(),
            });
        }
        pairs.dedup();
        Ok(Self {
            pairs,
            dropped: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn bigrams(tokens: &[String]) -> HashMap<(&str, &str), usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(2) {
        *m.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += 1;
    }
    m
}

/// Dice coefficient over token bigram multisets.
pub fn bigram_dice(a: &[String], b: &[String]) -> f64 {
    if a.len() < 2 || b.len() < 2 {
        return if a == b { 1.0 } else { 0.0 };
    }
    let (ba, bb) = (bigrams(a), bigrams(b));
    let common: usize = ba.iter().map(|(k, &n)| n.min(bb.get(k).copied().unwrap_or(0))).sum();
    2.0 * common as f64 / ((a.len() - 1) + (b.len() - 1)) as f64
}

/// Aligns statements by a longest common subsequence of their token
/// sequences; unequal statements between two anchors pair up as
/// modifications when similar enough.
pub fn compute_patch(buggy: &Function, fixed: &Function) -> Patch {
    let a: Vec<&[String]> = buggy.statements.iter().map(|s| s.tokens.as_slice()).collect();
    let b: Vec<&[String]> = fixed.statements.iter().map(|s| s.tokens.as_slice()).collect();
    let (n, m) = (a.len(), b.len());
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }

    let mut ops = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut gap_del = Vec::new();
    let mut gap_ins = Vec::new();
    let flush = |ops: &mut Vec<EditOp>, del: &mut Vec<usize>, ins: &mut Vec<usize>| {
        let mut next_ins = 0;
        let mut paired: Vec<Option<usize>> = vec![None; del.len()];
        for (k, &d) in del.iter().enumerate() {
            if let Some(off) = ins[next_ins..]
                .iter()
                .position(|&f| bigram_dice(a[d], b[f]) >= MODIFIED_THRESHOLD)
            {
                paired[k] = Some(next_ins + off);
                next_ins += off + 1;
            }
        }
        // emit in order: deletions and modifications by buggy position,
        // unpaired insertions after the modification they follow
        let mut ins_pos = 0;
        for (k, &d) in del.iter().enumerate() {
            match paired[k] {
                Some(p) => {
                    while ins_pos < p {
                        ops.push(EditOp::Insert(ins[ins_pos]));
                        ins_pos += 1;
                    }
                    ops.push(EditOp::Modify(d, ins[p]));
                    ins_pos = p + 1;
                }
                None => ops.push(EditOp::Delete(d)),
            }
        }
        while ins_pos < ins.len() {
            ops.push(EditOp::Insert(ins[ins_pos]));
            ins_pos += 1;
        }
        del.clear();
        ins.clear();
    };
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            flush(&mut ops, &mut gap_del, &mut gap_ins);
            ops.push(EditOp::Equal(i, j));
            i += 1;
            j += 1;
        } else if j >= m || (i < n && lcs[i + 1][j] >= lcs[i][j + 1]) {
            gap_del.push(i);
            i += 1;
        } else {
            gap_ins.push(j);
            j += 1;
        }
    }
    flush(&mut ops, &mut gap_del, &mut gap_ins);

    let mut patch = Patch {
        buggy: buggy.clone(),
        fixed: fixed.clone(),
        ops: Vec::new(),
        deleted: Vec::new(),
        inserted: Vec::new(),
        modified: Vec::new(),
    };
    for op in &ops {
        match *op {
            EditOp::Delete(d) => patch.deleted.push(d),
            EditOp::Insert(f) => patch.inserted.push(f),
            EditOp::Modify(d, f) => patch.modified.push((d, f)),
            EditOp::Equal(..) => {}
        }
    }
    patch.ops = ops;
    patch
}

/// Occurrence counts of every variable over the changed statements; both
/// sides of a modified pair count.
pub fn patch_frequencies(patch: &Patch) -> BTreeMap<String, usize> {
    let mut freq = BTreeMap::new();
    let mut count = |f: &Function, s: usize| {
        for o in &f.statements[s].occurrences {
            *freq.entry(o.key.clone()).or_insert(0) += 1;
        }
    };
    for &d in &patch.deleted {
        count(&patch.buggy, d);
    }
    for &i in &patch.inserted {
        count(&patch.fixed, i);
    }
    for &(d, i) in &patch.modified {
        count(&patch.buggy, d);
        count(&patch.fixed, i);
    }
    freq
}

fn returned_keys(f: &Function) -> BTreeSet<&str> {
    f.statements
        .iter()
        .filter(|s| s.is_return())
        .flat_map(|s| s.occurrences.iter().map(|o| o.key.as_str()))
        .collect()
}

/// Key variables: the most frequent patch variables that exist in the buggy
/// function and never appear in a `return` of either version. Ties are all
/// kept, ordered by first appearance in the patch.
pub fn identify_key_variables(patch: &Patch) -> Result<Vec<String>> {
    let freq = patch_frequencies(patch);
    let mut excluded = returned_keys(&patch.buggy);
    excluded.extend(returned_keys(&patch.fixed));
    let in_buggy: BTreeSet<&str> = patch.buggy.keys().into_iter().collect();

    let candidates: Vec<(&String, usize)> = freq
        .iter()
        .filter(|(k, _)| in_buggy.contains(k.as_str()) && !excluded.contains(k.as_str()))
        .map(|(k, &n)| (k, n))
        .collect();
    let Some(max) = candidates.iter().map(|&(_, n)| n).max() else {
        return Err(Error::EmptyResult);
    };
    let top: BTreeSet<&String> = candidates.iter().filter(|&&(_, n)| n == max).map(|&(k, _)| k).collect();

    let mut ordered = Vec::new();
    let mut note = |f: &Function, s: usize| {
        for o in &f.statements[s].occurrences {
            if top.contains(&o.key) && !ordered.contains(&o.key) {
                ordered.push(o.key.clone());
            }
        }
    };
    for op in &patch.ops {
        match *op {
            EditOp::Delete(d) => note(&patch.buggy, d),
            EditOp::Insert(i) => note(&patch.fixed, i),
            EditOp::Modify(d, i) => {
                note(&patch.buggy, d);
                note(&patch.fixed, i);
            }
            EditOp::Equal(..) => {}
        }
    }
    Ok(ordered)
}

/// Root statements for each key variable.
///
/// A deleted or modified buggy statement mentioning the variable is a root
/// statement directly. For an inserted statement mentioning it, the closest
/// buggy statement before the insertion point that mentions it is used.
pub fn screen_root_statements(patch: &Patch, key_vars: &[String]) -> Result<SeedSignature> {
    let buggy = &patch.buggy;
    let mut found: BTreeSet<(usize, String)> = BTreeSet::new();
    let mut dropped = Vec::new();
    let mut diagnostics = Vec::new();

    // buggy statements before each op (exclusive upper bound of the
    // insertion point: everything up to the next anchor)
    let mut bound_after = vec![0usize; patch.ops.len()];
    let mut bound = buggy.statements.len();
    for (k, op) in patch.ops.iter().enumerate().rev() {
        if let EditOp::Equal(b, _) = *op {
            bound = b;
        }
        bound_after[k] = bound;
    }

    for key in key_vars {
        let before = found.len();
        for (k, op) in patch.ops.iter().enumerate() {
            match *op {
                EditOp::Delete(d) | EditOp::Modify(d, _) if buggy.statements[d].mentions(key) => {
                    found.insert((d, key.clone()));
                }
                EditOp::Insert(f) | EditOp::Modify(_, f) if patch.fixed.statements[f].mentions(key) => {
                    let limit = bound_after[k];
                    if let Some(r) = (0..limit).rev().find(|&s| buggy.statements[s].mentions(key)) {
                        found.insert((r, key.clone()));
                    }
                }
                _ => {}
            }
        }
        if found.len() == before && !found.iter().any(|(_, k)| k == key) {
            dropped.push(key.clone());
            diagnostics.push(Diagnostic::warning(
                &buggy.file,
                buggy.start_line,
                format!("no root statement for key variable `{key}`; dropped"),
            ));
        }
    }

    if found.is_empty() {
        return Err(Error::NoRootStatement(dropped.first().cloned().unwrap_or_default()));
    }
    let pairs = found
        .into_iter()
        .map(|(stmt, key)| SeedPair {
            stmt,
            stmt_id: buggy.statements[stmt].id,
            key,
        })
        .collect();
    Ok(SeedSignature {
        pairs,
        dropped,
        diagnostics,
    })
}

/// Full seed analysis of a buggy/fixed pair.
pub fn analyze_seed(buggy: &Function, fixed: &Function) -> Result<(Patch, SeedSignature)> {
    let patch = compute_patch(buggy, fixed);
    let keys = identify_key_variables(&patch)?;
    let sig = screen_root_statements(&patch, &keys)?;
    Ok((patch, sig))
}

/// Reconstructs the fixed source by applying a unified diff to the buggy
/// source. For multi-file diffs the section whose target path ends with
/// `file_hint` is used, else the first one.
pub fn apply_unified_diff(buggy_source: &str, diff: &str, file_hint: Option<&str>) -> Result<String> {
    let sections = split_diff_sections(diff);
    let chosen = file_hint
        .and_then(|hint| {
            sections.iter().find(|s| {
                s.lines()
                    .find(|l| l.starts_with("+++ ") || l.starts_with("--- "))
                    .is_some_and(|l| l.trim_end().ends_with(hint))
            })
        })
        .or(sections.first())
        .ok_or_else(|| Error::Diff("no hunks found".into()))?;
    let patch = diffy::Patch::from_str(chosen).map_err(|e| Error::Diff(e.to_string()))?;
    diffy::apply(buggy_source, &patch).map_err(|e| Error::Diff(e.to_string()))
}

fn split_diff_sections(diff: &str) -> Vec<String> {
    let mut sections: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut in_hunks = false;
    for line in diff.split_inclusive('\n') {
        if line.starts_with("--- ") && in_hunks {
            sections.push(std::mem::take(&mut current));
            in_hunks = false;
        }
        if line.starts_with("diff ") || line.starts_with("index ") {
            continue;
        }
        if line.starts_with("@@") {
            in_hunks = true;
        }
        if line.starts_with("--- ") || line.starts_with("+++ ") || in_hunks {
            current.push_str(line);
        }
    }
    if in_hunks {
        sections.push(current);
    }
    sections
}
