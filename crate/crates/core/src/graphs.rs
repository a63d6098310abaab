//! Intraprocedural control-flow and data-dependence graphs.
//!
//! CFG nodes are statement indices `0..n`, plus a virtual entry `n` and exit
//! `n + 1`. Data dependence is keyed on variable text: member chains are
//! whole keys and there is no alias analysis.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::code::{Function, Jump, Node, OccRef, Role, StatementKind};
use crate::diag::Diagnostic;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Cfg {
    stmts: usize,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
    reach: Vec<BitSet>,
    back_edges: Vec<(usize, usize)>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Cfg {
    pub fn entry(&self) -> usize {
        self.stmts
    }

    pub fn exit(&self) -> usize {
        self.stmts + 1
    }

    pub fn node_count(&self) -> usize {
        self.stmts + 2
    }

    pub fn is_statement(&self, node: usize) -> bool {
        node < self.stmts
    }

    pub fn successors(&self, node: usize) -> &[usize] {
        &self.succ[node]
    }

    pub fn predecessors(&self, node: usize) -> &[usize] {
        &self.pred[node]
    }

    /// All edges, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.succ
            .iter()
            .enumerate()
            .flat_map(|(a, s)| s.iter().map(move |&b| (a, b)))
            .collect()
    }

    /// Edges closing a cycle in a depth-first walk from the entry that
    /// visits successors in ascending order.
    pub fn back_edges(&self) -> &[(usize, usize)] {
        &self.back_edges
    }

    /// Reflexive reachability.
    pub fn has_fwd_path(&self, from: usize, to: usize) -> Result<bool> {
        let n = self.node_count();
        if from >= n {
            return Err(Error::UnknownNode(from));
        }
        if to >= n {
            return Err(Error::UnknownNode(to));
        }
        Ok(self.reach[from].contains(to))
    }

    pub(crate) fn reaches(&self, from: usize, to: usize) -> bool {
        self.reach[from].contains(to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DefUse {
    pub def: usize,
    pub use_: usize,
    pub key: String,
}

/// Definitions of a variable reaching an occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Definitions {
    pub key: String,
    /// Defining statements, ascending.
    pub stmts: Vec<usize>,
    /// Some path from the function entry reaches the occurrence without an
    /// in-function definition (parameters, globals, uninitialised locals).
    pub from_entry: bool,
}

#[derive(Debug, Clone)]
pub struct Ddg {
    pub edges: Vec<DefUse>,
    /// Per statement: reaching definitions before it executes, for the keys
    /// the statement mentions.
    reaching_in: Vec<HashMap<String, Definitions>>,
    uses: BTreeMap<String, Vec<usize>>,
}

impl Ddg {
    /// Definition(s) reaching `occ`. An occurrence that is itself a
    /// definition resolves to its own statement.
    pub fn get_definition(&self, func: &Function, occ: OccRef) -> Definitions {
        let (stmt, o) = occ.get(func);
        if o.role == Role::Definition {
            return Definitions {
                key: o.key.clone(),
                stmts: vec![occ.stmt],
                from_entry: false,
            };
        }
        let _ = stmt;
        self.reaching(occ.stmt, &o.key)
    }

    /// Definitions of `key` reaching the point just before statement `stmt`.
    pub fn reaching(&self, stmt: usize, key: &str) -> Definitions {
        self.reaching_in[stmt].get(key).cloned().unwrap_or_else(|| Definitions {
            key: key.to_string(),
            stmts: Vec::new(),
            from_entry: true,
        })
    }

    /// Statements with a non-declaration occurrence of `key`, in order.
    pub fn get_all_uses(&self, key: &str) -> &[usize] {
        self.uses.get(key).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone)]
pub struct Graphs {
    pub cfg: Cfg,
    pub ddg: Ddg,
}

pub fn build_cfg_and_ddg(func: &Function) -> Graphs {
    let cfg = build_cfg(func);
    let ddg = build_ddg(func, &cfg);
    Graphs { cfg, ddg }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BitSet(Vec<u64>);

impl BitSet {
    pub(crate) fn new(bits: usize) -> Self {
        Self(vec![0; bits.div_ceil(64)])
    }

    pub(crate) fn insert(&mut self, i: usize) -> bool {
        let (w, b) = (i / 64, 1u64 << (i % 64));
        let fresh = self.0[w] & b == 0;
        self.0[w] |= b;
        fresh
    }

    pub(crate) fn contains(&self, i: usize) -> bool {
        self.0[i / 64] & (1u64 << (i % 64)) != 0
    }

    pub(crate) fn union_with(&mut self, other: &BitSet) -> bool {
        let mut changed = false;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            let merged = *a | *b;
            changed |= merged != *a;
            *a = merged;
        }
        changed
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &word)| {
            (0..64)
                .filter(move |b| word & (1u64 << b) != 0)
                .map(move |b| w * 64 + b)
        })
    }
}

struct Builder<'a> {
    func: &'a Function,
    succ: Vec<BTreeSet<usize>>,
    labels: HashMap<String, usize>,
    gotos: Vec<(usize, String)>,
    switches: Vec<Vec<(usize, bool)>>,
    diagnostics: Vec<Diagnostic>,
}

#[derive(Clone, Copy, Default)]
struct LoopCtx {
    brk: Option<usize>,
    cont: Option<usize>,
}

impl Builder<'_> {
    fn exit(&self) -> usize {
        self.func.statements.len() + 1
    }

    fn nop(&mut self) -> usize {
        self.succ.push(BTreeSet::new());
        self.succ.len() - 1
    }

    fn edge(&mut self, a: usize, b: usize) {
        self.succ[a].insert(b);
    }

    fn warn(&mut self, stmt: usize, msg: String) {
        let line = self.func.statements[stmt].line;
        self.diagnostics.push(Diagnostic::warning(&self.func.file, line, msg));
    }

    /// Lowers `node` so that it falls through to `next`; returns its entry.
    fn lower(&mut self, node: &Node, next: usize, ctx: LoopCtx) -> usize {
        match node {
            Node::Stmt(i) => {
                let i = *i;
                let stmt = &self.func.statements[i];
                match &stmt.jump {
                    Some(Jump::Goto(label)) => self.gotos.push((i, label.clone())),
                    Some(Jump::Break) => match ctx.brk {
                        Some(t) => self.edge(i, t),
                        None => self.warn(i, "`break` outside loop or switch".into()),
                    },
                    Some(Jump::Continue) => match ctx.cont {
                        Some(t) => self.edge(i, t),
                        None => self.warn(i, "`continue` outside loop".into()),
                    },
                    None if stmt.kind == StatementKind::Return => {
                        let exit = self.exit();
                        self.edge(i, exit);
                    }
                    None => self.edge(i, next),
                }
                i
            }
            Node::Block(items) => items.iter().rev().fold(next, |cur, item| self.lower(item, cur, ctx)),
            Node::If { cond, then, otherwise } => {
                let t = self.lower(then, next, ctx);
                let e = match otherwise {
                    Some(o) => self.lower(o, next, ctx),
                    None => next,
                };
                self.edge(*cond, t);
                self.edge(*cond, e);
                *cond
            }
            Node::While { cond, body } => {
                let inner = LoopCtx {
                    brk: Some(next),
                    cont: Some(*cond),
                };
                let b = self.lower(body, *cond, inner);
                self.edge(*cond, b);
                self.edge(*cond, next);
                *cond
            }
            Node::DoWhile { body, cond } => {
                let inner = LoopCtx {
                    brk: Some(next),
                    cont: Some(*cond),
                };
                let b = self.lower(body, *cond, inner);
                self.edge(*cond, b);
                self.edge(*cond, next);
                b
            }
            Node::For { init, cond, step, body } => {
                let head = self.nop();
                let cont = step.unwrap_or(head);
                if let Some(s) = step {
                    self.edge(*s, head);
                }
                let inner = LoopCtx {
                    brk: Some(next),
                    cont: Some(cont),
                };
                let b = self.lower(body, cont, inner);
                match cond {
                    Some(c) => {
                        self.edge(head, *c);
                        self.edge(*c, b);
                        self.edge(*c, next);
                    }
                    None => self.edge(head, b),
                }
                match init {
                    Some(i) => {
                        self.edge(*i, head);
                        *i
                    }
                    None => head,
                }
            }
            Node::Switch { cond, body } => {
                self.switches.push(Vec::new());
                let inner = LoopCtx {
                    brk: Some(next),
                    cont: ctx.cont,
                };
                self.lower(body, next, inner);
                let cases = self.switches.pop().unwrap_or_default();
                let has_default = cases.iter().any(|&(_, d)| d);
                for (entry, _) in cases {
                    self.edge(*cond, entry);
                }
                if !has_default {
                    self.edge(*cond, next);
                }
                *cond
            }
            Node::Label { name, inner } => {
                let e = self.lower(inner, next, ctx);
                self.labels.insert(name.clone(), e);
                e
            }
            Node::Case { default, inner } => {
                let e = self.lower(inner, next, ctx);
                if let Some(cases) = self.switches.last_mut() {
                    cases.push((e, *default));
                }
                e
            }
            Node::Empty => next,
        }
    }
}

fn build_cfg(func: &Function) -> Cfg {
    let n = func.statements.len();
    let mut b = Builder {
        func,
        succ: vec![BTreeSet::new(); n + 2],
        labels: HashMap::new(),
        gotos: Vec::new(),
        switches: Vec::new(),
        diagnostics: Vec::new(),
    };
    let first = b.lower(&func.body, n + 1, LoopCtx::default());
    b.edge(n, first);
    for (stmt, label) in std::mem::take(&mut b.gotos) {
        match b.labels.get(&label) {
            Some(&t) => b.edge(stmt, t),
            None => b.warn(stmt, format!("goto to unknown label `{label}`; edge omitted")),
        }
    }

    // contract the helper nodes
    let real = n + 2;
    let mut succ = vec![Vec::new(); real];
    for (u, out) in succ.iter_mut().enumerate() {
        let mut found = BTreeSet::new();
        let mut stack: Vec<usize> = b.succ[u].iter().copied().collect();
        let mut seen = BTreeSet::new();
        while let Some(v) = stack.pop() {
            if v < real {
                found.insert(v);
            } else if seen.insert(v) {
                stack.extend(b.succ[v].iter().copied());
            }
        }
        *out = found.into_iter().collect();
    }
    let mut pred = vec![Vec::new(); real];
    for (u, out) in succ.iter().enumerate() {
        for &v in out {
            pred[v].push(u);
        }
    }

    let reach = (0..real)
        .map(|s| {
            let mut set = BitSet::new(real);
            set.insert(s);
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &v in &succ[u] {
                    if set.insert(v) {
                        stack.push(v);
                    }
                }
            }
            set
        })
        .collect();

    let back_edges = find_back_edges(&succ, n);
    Cfg {
        stmts: n,
        succ,
        pred,
        reach,
        back_edges,
        diagnostics: b.diagnostics,
    }
}

fn find_back_edges(succ: &[Vec<usize>], entry: usize) -> Vec<(usize, usize)> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut mark = vec![Mark::New; succ.len()];
    let mut back = Vec::new();
    // (node, next successor position)
    let mut stack = vec![(entry, 0usize)];
    mark[entry] = Mark::Active;
    while let Some(&mut (u, ref mut pos)) = stack.last_mut() {
        if let Some(&v) = succ[u].get(*pos) {
            *pos += 1;
            match mark[v] {
                Mark::New => {
                    mark[v] = Mark::Active;
                    stack.push((v, 0));
                }
                Mark::Active => back.push((u, v)),
                Mark::Done => {}
            }
        } else {
            mark[u] = Mark::Done;
            stack.pop();
        }
    }
    back.sort_unstable();
    back
}

/// Whether an occurrence reads its variable's previous value.
fn reads(stmt: &crate::code::Statement, occ: &crate::code::VariableOccurrence) -> bool {
    if occ.is_declaration {
        return false;
    }
    occ.role != Role::Definition || stmt.assign.is_some_and(|a| a.compound)
}

fn build_ddg(func: &Function, cfg: &Cfg) -> Ddg {
    let n = func.statements.len();
    let mut uses: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut defs: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in func.statements.iter().enumerate() {
        for o in &s.occurrences {
            if !o.is_declaration {
                let u = uses.entry(o.key.clone()).or_default();
                if u.last() != Some(&i) {
                    u.push(i);
                }
            }
            if o.role == Role::Definition {
                let d = defs.entry(o.key.clone()).or_default();
                if d.last() != Some(&i) {
                    d.push(i);
                }
            }
        }
    }

    let order = reverse_postorder(cfg);
    let mut reaching_in: Vec<HashMap<String, Definitions>> = vec![HashMap::new(); n];
    let mut edges = Vec::new();

    for key in func.keys() {
        let key_defs = defs.get(key).map_or(&[][..], Vec::as_slice);
        // bit 0 is the entry pseudo-definition
        let bits = key_defs.len() + 1;
        let gen: HashMap<usize, usize> = key_defs.iter().enumerate().map(|(k, &s)| (s, k + 1)).collect();
        let mut out = vec![BitSet::new(bits); cfg.node_count()];
        out[cfg.entry()].insert(0);
        for (&s, &bit) in &gen {
            out[s].insert(bit);
        }
        let mut changed = true;
        while changed {
            changed = false;
            for &u in &order {
                if u == cfg.entry() || gen.contains_key(&u) {
                    continue;
                }
                let mut acc = BitSet::new(bits);
                for &p in cfg.predecessors(u) {
                    acc.union_with(&out[p]);
                }
                if acc != out[u] {
                    out[u] = acc;
                    changed = true;
                }
            }
        }

        for (i, s) in func.statements.iter().enumerate() {
            if !s.occurrences.iter().any(|o| o.key == key) {
                continue;
            }
            let mut acc = BitSet::new(bits);
            for &p in cfg.predecessors(i) {
                acc.union_with(&out[p]);
            }
            let from_entry = acc.contains(0);
            let stmts: Vec<usize> = acc.iter().filter(|&b| b > 0).map(|b| key_defs[b - 1]).collect();
            if s.occurrences.iter().any(|o| o.key == key && reads(s, o)) {
                for &d in &stmts {
                    edges.push(DefUse {
                        def: d,
                        use_: i,
                        key: key.to_string(),
                    });
                }
            }
            reaching_in[i].insert(
                key.to_string(),
                Definitions {
                    key: key.to_string(),
                    stmts,
                    from_entry,
                },
            );
        }
    }
    edges.sort();
    edges.dedup();
    Ddg {
        edges,
        reaching_in,
        uses,
    }
}

fn reverse_postorder(cfg: &Cfg) -> Vec<usize> {
    let mut seen = vec![false; cfg.node_count()];
    let mut post = Vec::new();
    let mut stack = vec![(cfg.entry(), 0usize)];
    seen[cfg.entry()] = true;
    while let Some(&mut (u, ref mut pos)) = stack.last_mut() {
        if let Some(&v) = cfg.successors(u).get(*pos) {
            *pos += 1;
            if !seen[v] {
                seen[v] = true;
                stack.push((v, 0));
            }
        } else {
            post.push(u);
            stack.pop();
        }
    }
    // unreachable statements still get a slot
    post.extend((0..cfg.node_count()).filter(|&v| !seen[v]));
    post.reverse();
    post
}

/// Graphviz rendering of the CFG (solid) and DDG (dashed) edges.
pub fn to_dot(func: &Function, graphs: &Graphs) -> String {
    let cfg = &graphs.cfg;
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", func.name);
    let _ = writeln!(out, "  node [shape=box, fontname=monospace];");
    let _ = writeln!(out, "  n{} [label=\"ENTRY\", shape=oval];", cfg.entry());
    let _ = writeln!(out, "  n{} [label=\"EXIT\", shape=oval];", cfg.exit());
    for (i, s) in func.statements.iter().enumerate() {
        let label = format!("{}: {}", s.id, s.text)
            .replace('\\', "\\\\")
            .replace('"', "\\\"");
        let _ = writeln!(out, "  n{i} [label=\"{label}\"];");
    }
    for (a, b) in cfg.edges() {
        let _ = writeln!(out, "  n{a} -> n{b};");
    }
    for e in &graphs.ddg.edges {
        let _ = writeln!(
            out,
            "  n{} -> n{} [style=dashed, color=blue, label=\"{}\"];",
            e.def, e.use_, e.key
        );
    }
    out.push_str("}\n");
    out
}
