//! Brute-force slicer: a literal worklist transcription with reaching
//! definitions and coverage paths found by explicit path search.

use std::collections::{BTreeSet, VecDeque};

use recurscan::code::Function;
use recurscan::graphs::Cfg;
use recurscan::slicer::SlicingStrategy;

fn path_exists(cfg: &Cfg, from: usize, to: usize) -> bool {
    let mut seen = vec![false; cfg.node_count()];
    let mut stack = vec![from];
    while let Some(u) = stack.pop() {
        if u == to {
            return true;
        }
        if !std::mem::replace(&mut seen[u], true) {
            stack.extend(cfg.successors(u));
        }
    }
    false
}

/// Definitions of `key` reaching statement `at`: some CFG path leaves the
/// definition and arrives at `at` without passing another definition.
fn reaching_definitions(func: &Function, cfg: &Cfg, at: usize, key: &str) -> Vec<usize> {
    let defines = |v: usize| cfg.is_statement(v) && func.statements[v].defines(key);
    (0..func.statements.len())
        .filter(|&d| defines(d))
        .filter(|&d| {
            let mut seen = vec![false; cfg.node_count()];
            let mut stack: Vec<usize> = cfg.successors(d).to_vec();
            while let Some(u) = stack.pop() {
                if u == at {
                    return true;
                }
                if defines(u) || std::mem::replace(&mut seen[u], true) {
                    continue;
                }
                stack.extend(cfg.successors(u));
            }
            false
        })
        .collect()
}

pub fn slice(func: &Function, cfg: &Cfg, r_stmt: usize, key: &str, strategy: SlicingStrategy) -> BTreeSet<usize> {
    let mut sigma: Vec<usize> = vec![r_stmt];
    let mut gamma: VecDeque<(String, usize, u32)> = VecDeque::from([(key.to_string(), r_stmt, 0)]);
    let mut processed: BTreeSet<(String, usize)> = BTreeSet::new();

    while let Some((var, ctx, depth)) = gamma.pop_front() {
        if strategy != SlicingStrategy::Unconstrained && depth > 1 {
            continue;
        }
        if strategy == SlicingStrategy::Unconstrained && !processed.insert((var.clone(), ctx)) {
            continue;
        }
        let defs = if func.statements[ctx].defines(&var) {
            vec![ctx]
        } else {
            reaching_definitions(func, cfg, ctx, &var)
        };
        let mut pending = Vec::new();
        for d in defs {
            collect(func, &var, d, depth, strategy, &mut sigma, &mut pending);
        }
        for (psi, s) in func.statements.iter().enumerate() {
            let used = s.occurrences.iter().any(|o| o.key == var && !o.is_declaration);
            if used && (path_exists(cfg, psi, r_stmt) || path_exists(cfg, r_stmt, psi)) {
                collect(func, &var, psi, depth, strategy, &mut sigma, &mut pending);
            }
        }
        gamma.extend(pending);
    }
    let collected: BTreeSet<usize> = sigma.into_iter().collect();
    max_coverage(cfg, r_stmt, &collected)
}

fn collect(
    func: &Function,
    var: &str,
    stmt: usize,
    depth: u32,
    strategy: SlicingStrategy,
    sigma: &mut Vec<usize>,
    gamma: &mut Vec<(String, usize, u32)>,
) {
    let s = &func.statements[stmt];
    if !s.is_normal() {
        return;
    }
    sigma.push(stmt);
    if strategy == SlicingStrategy::StrictOneStep {
        return;
    }
    if let (Some(l), Some(r)) = (s.lhs_key(), s.unary_rhs_key()) {
        if l == var {
            gamma.push((r.to_string(), stmt, depth + 1));
        } else if r == var {
            gamma.push((l.to_string(), stmt, depth + 1));
        }
    }
}

/// Enumerates every entry-to-exit path of the graph unrolled so that one
/// back edge may be taken once, and keeps the best one through `r_stmt`.
pub fn max_coverage(cfg: &Cfg, r_stmt: usize, collected: &BTreeSet<usize>) -> BTreeSet<usize> {
    let back = cfg.back_edges();
    let forward = |u: usize| -> Vec<usize> {
        cfg.successors(u)
            .iter()
            .copied()
            .filter(|&v| !back.contains(&(u, v)))
            .collect()
    };
    let mut best: Option<Vec<usize>> = None;
    let mut path: Vec<usize> = Vec::new();

    fn dfs(
        node: (bool, usize),
        cfg: &Cfg,
        forward: &dyn Fn(usize) -> Vec<usize>,
        path: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        let (second, v) = node;
        path.push(v);
        if v == cfg.exit() {
            visit(path);
        }
        for w in forward(v) {
            dfs((second, w), cfg, forward, path, visit);
        }
        if !second {
            for &(u, h) in cfg.back_edges() {
                if u == v {
                    dfs((true, h), cfg, forward, path, visit);
                }
            }
        }
        path.pop();
    }

    let mut visit = |p: &[usize]| {
        if !p.contains(&r_stmt) {
            return;
        }
        let kept: Vec<usize> = p
            .iter()
            .copied()
            .filter(|v| collected.contains(v))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let better = match &best {
            None => true,
            Some(b) => kept.len() > b.len() || (kept.len() == b.len() && kept < *b),
        };
        if better {
            best = Some(kept);
        }
    };
    dfs((false, cfg.entry()), cfg, &forward, &mut path, &mut visit);
    match best {
        Some(b) => b.into_iter().collect(),
        None => BTreeSet::from([r_stmt]),
    }
}
