//! Customized, depth-limited slicing around a (root statement, key variable)
//! criterion, followed by a max-coverage path filter.

use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::code::{Function, FunctionId, StmtId};
use crate::error::{Error, Result};
use crate::graphs::{BitSet, Cfg, Graphs};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlicingStrategy {
    /// Track the key variable plus one extra step through unary assignments.
    #[default]
    Default,
    /// Never follow unary assignments.
    StrictOneStep,
    /// Follow unary assignments without a depth limit.
    Unconstrained,
}

/// What the path filter maximizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageMetric {
    /// Retained collected statements.
    #[default]
    Statements,
    /// Distinct tracked variables mentioned by retained statements, then
    /// retained statements.
    Variables,
}

macro_rules! kebab_enum {
    ($ty:ty { $($v:ident => $s:literal),* $(,)? }) => {
        impl ::std::fmt::Display for $ty {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(match self { $(Self::$v => $s),* })
            }
        }

        impl ::std::str::FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($s => Ok(Self::$v),)*
                    _ => Err(format!("unknown value `{s}`, expected one of: {}", [$($s),*].join(", "))),
                }
            }
        }
    };
}
pub(crate) use kebab_enum;

kebab_enum!(SlicingStrategy {
    Default => "default",
    StrictOneStep => "strict-one-step",
    Unconstrained => "unconstrained",
});

kebab_enum!(CoverageMetric {
    Statements => "statements",
    Variables => "variables",
});

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceConfig {
    pub strategy: SlicingStrategy,
    pub coverage: CoverageMetric,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Criterion {
    pub stmt: StmtId,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceStatement {
    pub id: StmtId,
    pub text: String,
}

/// Ordered, deduplicated statements of one function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSlice {
    pub function: FunctionId,
    pub criteria: Vec<Criterion>,
    pub statements: Vec<SliceStatement>,
}

impl FeatureSlice {
    pub fn from_indices(func: &Function, criteria: Vec<Criterion>, stmts: impl IntoIterator<Item = usize>) -> Self {
        let set: BTreeSet<usize> = stmts.into_iter().collect();
        Self {
            function: func.id.clone(),
            criteria,
            statements: set
                .into_iter()
                .map(|i| SliceStatement {
                    id: func.statements[i].id,
                    text: func.statements[i].text.clone(),
                })
                .collect(),
        }
    }

    pub fn ids(&self) -> Vec<StmtId> {
        self.statements.iter().map(|s| s.id).collect()
    }

    pub fn contains(&self, id: StmtId) -> bool {
        self.statements.binary_search_by(|s| s.id.cmp(&id)).is_ok()
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// Statement texts joined by newlines, in line order. This is the text
    /// that gets embedded.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.statements.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&s.text);
        }
        out
    }
}

/// One worklist entry: a variable and the statement it was reached from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub key: String,
    pub context: usize,
    pub depth: u32,
    /// False when the depth limit skipped the entry.
    pub expanded: bool,
    /// Statements first collected while processing this entry.
    pub added: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceOutcome {
    pub slice: FeatureSlice,
    /// Everything collected before path filtering, ascending.
    pub collected: Vec<usize>,
    pub trace: Vec<TraceStep>,
}

fn check_criterion(func: &Function, stmt: usize, key: &str) -> Result<()> {
    let s = func.statements.get(stmt).ok_or(Error::UnknownNode(stmt))?;
    if s.occurrences.iter().any(|o| o.key == key) {
        Ok(())
    } else {
        Err(Error::CriterionMismatch {
            key: key.to_string(),
            line: s.line,
        })
    }
}

/// Definition statements of `key` as seen from `ctx`: the statement itself
/// when it assigns the key, else the reaching definitions.
fn definitions_at(func: &Function, graphs: &Graphs, ctx: usize, key: &str) -> Vec<usize> {
    if func.statements[ctx].defines(key) {
        vec![ctx]
    } else {
        graphs.ddg.reaching(ctx, key).stmts
    }
}

struct Worklist<'a> {
    func: &'a Function,
    collected: BTreeSet<usize>,
    queue: VecDeque<(String, usize, u32)>,
    seen: HashSet<(String, usize)>,
    follow: Follow,
}

#[derive(Clone, Copy, PartialEq)]
enum Follow {
    Nothing,
    Unary,
    AllOperands,
}

impl Worklist<'_> {
    fn push(&mut self, key: String, ctx: usize, depth: u32) {
        if self.seen.insert((key.clone(), ctx)) {
            self.queue.push_back((key, ctx, depth));
        }
    }

    fn collect_and_prepare(&mut self, var: &str, stmt: usize, depth: u32, added: &mut Vec<usize>) {
        let s = &self.func.statements[stmt];
        if !s.is_normal() {
            return;
        }
        if self.collected.insert(stmt) {
            added.push(stmt);
        }
        match self.follow {
            Follow::Nothing => {}
            Follow::Unary => {
                if let (Some(l), Some(r)) = (s.lhs_key(), s.unary_rhs_key()) {
                    if l == var {
                        self.push(r.to_string(), stmt, depth + 1);
                    } else if r == var {
                        self.push(l.to_string(), stmt, depth + 1);
                    }
                }
            }
            Follow::AllOperands => {
                let keys: BTreeSet<&str> = s.occurrences.iter().map(|o| o.key.as_str()).collect();
                for k in keys {
                    if k != var {
                        self.push(k.to_string(), stmt, depth + 1);
                    }
                }
            }
        }
    }
}

fn run_worklist(
    func: &Function,
    graphs: &Graphs,
    r_stmt: usize,
    key: &str,
    follow: Follow,
    max_depth: Option<u32>,
) -> (BTreeSet<usize>, Vec<TraceStep>) {
    let mut wl = Worklist {
        func,
        collected: BTreeSet::from([r_stmt]),
        queue: VecDeque::new(),
        seen: HashSet::new(),
        follow,
    };
    wl.push(key.to_string(), r_stmt, 0);
    let mut trace = Vec::new();
    while let Some((var, ctx, depth)) = wl.queue.pop_front() {
        if max_depth.is_some_and(|m| depth > m) {
            trace.push(TraceStep {
                key: var,
                context: ctx,
                depth,
                expanded: false,
                added: Vec::new(),
            });
            continue;
        }
        let mut added = Vec::new();
        for def in definitions_at(func, graphs, ctx, &var) {
            wl.collect_and_prepare(&var, def, depth, &mut added);
        }
        for &psi in graphs.ddg.get_all_uses(&var) {
            if graphs.cfg.reaches(psi, r_stmt) || graphs.cfg.reaches(r_stmt, psi) {
                wl.collect_and_prepare(&var, psi, depth, &mut added);
            }
        }
        trace.push(TraceStep {
            key: var,
            context: ctx,
            depth,
            expanded: true,
            added,
        });
    }
    (wl.collected, trace)
}

/// Slice of `func` around statement index `r_stmt` and variable `key`.
pub fn customized_slice(
    func: &Function,
    graphs: &Graphs,
    r_stmt: usize,
    key: &str,
    config: SliceConfig,
) -> Result<FeatureSlice> {
    customized_slice_traced(func, graphs, r_stmt, key, config).map(|o| o.slice)
}

pub fn customized_slice_traced(
    func: &Function,
    graphs: &Graphs,
    r_stmt: usize,
    key: &str,
    config: SliceConfig,
) -> Result<SliceOutcome> {
    check_criterion(func, r_stmt, key)?;
    let (follow, max_depth) = match config.strategy {
        SlicingStrategy::Default => (Follow::Unary, Some(1)),
        SlicingStrategy::StrictOneStep => (Follow::Nothing, Some(1)),
        SlicingStrategy::Unconstrained => (Follow::Unary, None),
    };
    let (collected, trace) = run_worklist(func, graphs, r_stmt, key, follow, max_depth);
    let tracked: BTreeSet<&str> = trace.iter().map(|t| t.key.as_str()).collect();
    let weights: Vec<u64> = match config.coverage {
        CoverageMetric::Statements => Vec::new(),
        CoverageMetric::Variables => {
            let tracked: Vec<&str> = tracked.into_iter().collect();
            (0..func.statements.len())
                .map(|i| {
                    let s = &func.statements[i];
                    tracked
                        .iter()
                        .enumerate()
                        .filter(|(_, k)| s.mentions(k))
                        .fold(0u64, |m, (b, _)| m | (1 << (b % 64)))
                })
                .collect()
        }
    };
    let kept = filter_by_max_coverage_path_with(&graphs.cfg, r_stmt, &collected, &weights);
    let criteria = vec![Criterion {
        stmt: func.statements[r_stmt].id,
        key: key.to_string(),
    }];
    Ok(SliceOutcome {
        slice: FeatureSlice::from_indices(func, criteria, kept),
        collected: collected.into_iter().collect(),
        trace,
    })
}

/// Dependency closure around the criterion with no depth limit, following
/// every operand of collected statements and skipping the path filter.
/// Every customized slice of the same criterion is a subset of it.
pub fn full_slice(func: &Function, graphs: &Graphs, r_stmt: usize, key: &str) -> Result<FeatureSlice> {
    check_criterion(func, r_stmt, key)?;
    let (collected, _) = run_worklist(func, graphs, r_stmt, key, Follow::AllOperands, None);
    let criteria = vec![Criterion {
        stmt: func.statements[r_stmt].id,
        key: key.to_string(),
    }];
    Ok(FeatureSlice::from_indices(func, criteria, collected))
}

/// Union of slices of one function.
pub fn merge_slices(slices: &[FeatureSlice]) -> Result<FeatureSlice> {
    let first = slices.first().ok_or(Error::EmptyInput)?;
    let mut criteria = Vec::new();
    let mut stmts: Vec<SliceStatement> = Vec::new();
    for s in slices {
        if s.function != first.function {
            return Err(Error::MixedFunctions(
                first.function.to_string(),
                s.function.to_string(),
            ));
        }
        criteria.extend(s.criteria.iter().cloned());
        stmts.extend(s.statements.iter().cloned());
    }
    stmts.sort_by_key(|s| s.id);
    stmts.dedup_by_key(|s| s.id);
    let mut seen = HashSet::new();
    criteria.retain(|c| seen.insert(c.clone()));
    Ok(FeatureSlice {
        function: first.function.clone(),
        criteria,
        statements: stmts,
    })
}

/// Keeps the collected statements lying on one entry-to-exit path through
/// `r_stmt` that retains the most of them. Paths may take each loop back
/// edge at most once; ties go to the smallest sorted index sequence. When
/// no such path exists only `r_stmt` is kept.
pub fn filter_by_max_coverage_path(cfg: &Cfg, r_stmt: usize, collected: &BTreeSet<usize>) -> BTreeSet<usize> {
    filter_by_max_coverage_path_with(cfg, r_stmt, collected, &[])
}

/// Above a few hundred thousand candidate chains the search keeps the best
/// one found so far.
const CHAIN_BUDGET: usize = 250_000;

fn filter_by_max_coverage_path_with(
    cfg: &Cfg,
    r_stmt: usize,
    collected: &BTreeSet<usize>,
    var_masks: &[u64],
) -> BTreeSet<usize> {
    let fallback = BTreeSet::from([r_stmt]);
    let unrolled = Unrolled::new(cfg);
    // nodes are (copy, stmt) pairs in topological order of the unrolled graph
    let mut nodes: Vec<(u8, usize)> = Vec::new();
    for copy in 0..2u8 {
        for &v in &unrolled.topo {
            if collected.contains(&v)
                && cfg.is_statement(v)
                && unrolled.reached_from_entry(copy, v)
                && unrolled.to_exit(copy, v)
            {
                nodes.push((copy, v));
            }
        }
    }
    let k = nodes.len();
    if !nodes.iter().any(|&(_, v)| v == r_stmt) {
        return fallback;
    }
    let reach = |a: usize, b: usize| a != b && unrolled.reaches(nodes[a], nodes[b]);
    let mut tight: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut has_pred = vec![false; k];
    for a in 0..k {
        for b in 0..k {
            if reach(a, b) {
                has_pred[b] = true;
                if !(0..k).any(|c| reach(a, c) && reach(c, b)) {
                    tight[a].push(b);
                }
            }
        }
    }

    let mut best: Option<(u32, usize, Vec<usize>)> = None;
    let mut budget = CHAIN_BUDGET;
    let mut chain: Vec<usize> = Vec::new();
    let mut consider = |chain: &[usize]| {
        if !chain.iter().any(|&c| nodes[c].1 == r_stmt) {
            return;
        }
        let set: BTreeSet<usize> = chain.iter().map(|&c| nodes[c].1).collect();
        let vars = if var_masks.is_empty() {
            0
        } else {
            set.iter().fold(0u64, |m, &s| m | var_masks[s]).count_ones()
        };
        let cand = (vars, set.len(), set.into_iter().collect::<Vec<_>>());
        let better = match &best {
            None => true,
            Some(b) => (cand.0, cand.1) > (b.0, b.1) || ((cand.0, cand.1) == (b.0, b.1) && cand.2 < b.2),
        };
        if better {
            best = Some(cand);
        }
    };
    fn walk(
        a: usize,
        tight: &[Vec<usize>],
        chain: &mut Vec<usize>,
        budget: &mut usize,
        consider: &mut dyn FnMut(&[usize]),
    ) {
        chain.push(a);
        if tight[a].is_empty() {
            if *budget > 0 {
                *budget -= 1;
                consider(chain);
            }
        } else {
            for &b in &tight[a] {
                if *budget == 0 {
                    break;
                }
                walk(b, tight, chain, budget, consider);
            }
        }
        chain.pop();
    }
    for a in 0..k {
        if !has_pred[a] {
            walk(a, &tight, &mut chain, &mut budget, &mut consider);
        }
    }
    if budget == 0 {
        log::warn!("max-coverage path search hit its budget; using best path found");
    }
    match best {
        Some((_, _, stmts)) => stmts.into_iter().collect(),
        None => fallback,
    }
}

/// The CFG without back edges (copy A) followed by a second copy (B)
/// entered through one back edge.
struct Unrolled<'a> {
    cfg: &'a Cfg,
    topo: Vec<usize>,
    /// Reflexive reachability in the forward graph.
    fwd: Vec<BitSet>,
}

impl<'a> Unrolled<'a> {
    fn new(cfg: &'a Cfg) -> Self {
        let n = cfg.node_count();
        let back: HashSet<(usize, usize)> = cfg.back_edges().iter().copied().collect();
        let back = &back;
        let fwd_succ = |u: usize| {
            cfg.successors(u)
                .iter()
                .copied()
                .filter(move |&v| !back.contains(&(u, v)))
        };
        // postorder DFS from the entry; unreachable nodes are left out
        let mut visited = vec![false; n];
        let mut post = Vec::new();
        let mut stack = vec![(cfg.entry(), 0usize)];
        visited[cfg.entry()] = true;
        while let Some(&mut (u, ref mut pos)) = stack.last_mut() {
            let next = fwd_succ(u).nth(*pos);
            *pos += 1;
            match next {
                Some(v) if !visited[v] => {
                    visited[v] = true;
                    stack.push((v, 0));
                }
                Some(_) => {}
                None => {
                    post.push(u);
                    stack.pop();
                }
            }
        }
        let mut fwd: Vec<BitSet> = (0..n).map(|_| BitSet::new(n)).collect();
        for &u in &post {
            fwd[u].insert(u);
            for v in fwd_succ(u) {
                if visited[v] {
                    let other = fwd[v].clone();
                    fwd[u].union_with(&other);
                }
            }
        }
        post.reverse();
        Self { cfg, topo: post, fwd }
    }

    fn reached_from_entry(&self, copy: u8, v: usize) -> bool {
        let entry = self.cfg.entry();
        match copy {
            0 => self.fwd[entry].contains(v),
            _ => self
                .cfg
                .back_edges()
                .iter()
                .any(|&(u, h)| self.fwd[entry].contains(u) && self.fwd[h].contains(v)),
        }
    }

    fn to_exit(&self, copy: u8, v: usize) -> bool {
        let exit = self.cfg.exit();
        self.fwd[v].contains(exit) || (copy == 0 && self.reaches((0, v), (1, exit)))
    }

    fn reaches(&self, (ca, a): (u8, usize), (cb, b): (u8, usize)) -> bool {
        match (ca, cb) {
            (0, 0) | (1, 1) => self.fwd[a].contains(b),
            (0, 1) => self
                .cfg
                .back_edges()
                .iter()
                .any(|&(u, h)| self.fwd[a].contains(u) && self.fwd[h].contains(b)),
            _ => false,
        }
    }
}
