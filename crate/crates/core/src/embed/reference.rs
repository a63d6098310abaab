//! Deterministic built-in embedder.
//!
//! A token's vector is a weighted blend of pseudo-random feature vectors:
//! the token itself, its identifier sub-words, its lexical class, its
//! neighbours within four positions (both by exact offset and as an
//! unordered bag per side) and its position. Every feature vector
//! is expanded from a 64-bit hash, so the same tokens always produce the
//! same vectors and a token's vector changes with its context.

use super::{EmbeddingProvider, ProviderInfo};
use crate::code::lexer::is_keyword;
use crate::error::Result;

pub const REFERENCE_NAME: &str = "reference";
pub const REFERENCE_VERSION: &str = "1";
pub const DEFAULT_DIM: usize = 768;
pub const DEFAULT_MAX_TOKENS: usize = 1024;
pub const MASK_TOKEN: &str = "[MASK]";

const WINDOW: usize = 4;
const W_IDENTITY: f32 = 1.0;
const W_SUBWORDS: f32 = 0.5;
const W_CLASS: f32 = 0.25;
const W_NEIGHBOUR: f32 = 0.5;
const W_WINDOW: f32 = 0.35;
const W_POSITION: f32 = 0.05;

#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    info: ProviderInfo,
}

impl Default for ReferenceEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM, DEFAULT_MAX_TOKENS)
    }
}

impl ReferenceEmbedder {
    pub fn new(dim: usize, max_tokens: usize) -> Self {
        Self {
            info: ProviderInfo {
                name: REFERENCE_NAME.into(),
                version: REFERENCE_VERSION.into(),
                dim,
                max_tokens,
                mask_token: MASK_TOKEN.into(),
            },
        }
    }

    fn token_vector(&self, tokens: &[String], i: usize, out: &mut [f32]) {
        let tok = tokens[i].as_str();
        let mut total = 0.0f32;
        let mut add = |feature: &str, w: f32| {
            add_feature(out, fnv1a(feature.as_bytes()), w);
            total += w;
        };
        add(&format!("tok:{tok}"), W_IDENTITY);
        let pieces = subwords(tok);
        if !pieces.is_empty() {
            let w = W_SUBWORDS / pieces.len() as f32;
            for p in &pieces {
                add(&format!("sub:{p}"), w);
            }
        }
        add(&format!("cls:{}", class(tok)), W_CLASS);
        for o in 1..=WINDOW {
            let w = W_NEIGHBOUR / o as f32;
            let bag = W_WINDOW / o as f32;
            if let Some(t) = i.checked_sub(o).map(|j| tokens[j].as_str()) {
                add(&format!("ctx:-{o}:{t}"), w);
                add(&format!("ctxc:-{o}:{}", class(t)), w / 2.0);
                add(&format!("win:L:{t}"), bag);
                for p in subwords(t) {
                    add(&format!("winsub:L:{p}"), bag / 2.0);
                }
            }
            if let Some(t) = tokens.get(i + o) {
                add(&format!("ctx:+{o}:{t}"), w);
                add(&format!("ctxc:+{o}:{}", class(t)), w / 2.0);
                add(&format!("win:R:{t}"), bag);
                for p in subwords(t) {
                    add(&format!("winsub:R:{p}"), bag / 2.0);
                }
            }
        }
        add(&format!("pos:{i}"), W_POSITION);
        for v in out.iter_mut() {
            *v /= total;
        }
    }
}

impl EmbeddingProvider for ReferenceEmbedder {
    fn info(&self) -> &ProviderInfo {
        &self.info
    }

    fn encode_raw(&self, tokens: &[String], _mask_positions: &[usize]) -> Result<Vec<Vec<f32>>> {
        Ok((0..tokens.len())
            .map(|i| {
                let mut v = vec![0.0f32; self.info.dim];
                self.token_vector(tokens, i, &mut v);
                v
            })
            .collect())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Adds `w` times the pseudo-random vector of `seed` (values in [-1, 1]).
fn add_feature(out: &mut [f32], seed: u64, w: f32) {
    let mut state = seed;
    for v in out.iter_mut() {
        let x = splitmix64(&mut state);
        let unit = (x >> 40) as f32 / (1u64 << 24) as f32;
        *v += w * (unit * 2.0 - 1.0);
    }
}

fn class(tok: &str) -> &'static str {
    let first = tok.chars().next().unwrap_or(' ');
    if tok == MASK_TOKEN {
        "mask"
    } else if first.is_ascii_digit() {
        "num"
    } else if first == '"' {
        "str"
    } else if first == '\'' {
        "chr"
    } else if first.is_alphabetic() || first == '_' {
        if is_keyword(tok) {
            "kw"
        } else {
            "id"
        }
    } else {
        "punct"
    }
}

/// Lower-cased pieces of an identifier split on `_`, case changes and
/// digit runs. Empty for non-identifiers.
fn subwords(tok: &str) -> Vec<String> {
    if class(tok) != "id" {
        return Vec::new();
    }
    let mut pieces = Vec::new();
    let mut cur = String::new();
    let mut prev: Option<char> = None;
    for c in tok.chars() {
        let boundary = match prev {
            _ if c == '_' => true,
            Some(p) => (p.is_lowercase() && c.is_uppercase()) || (p.is_ascii_digit() != c.is_ascii_digit()),
            None => false,
        };
        if boundary && !cur.is_empty() {
            pieces.push(std::mem::take(&mut cur).to_lowercase());
        }
        if c != '_' {
            cur.push(c);
        }
        prev = Some(c);
    }
    if !cur.is_empty() {
        pieces.push(cur.to_lowercase());
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn subword_split() {
        assert_eq!(subwords("device_register"), ["device", "register"]);
        assert_eq!(subwords("mcDev2x"), ["mc", "dev", "2", "x"]);
        assert!(subwords("->").is_empty());
        assert!(subwords("return").is_empty());
    }

    #[test]
    fn values_are_bounded_and_deterministic() {
        let e = ReferenceEmbedder::default();
        let t = toks("kfree ( client_dev ) ;");
        let a = e.encode_raw(&t, &[]).unwrap();
        let b = e.encode_raw(&t, &[]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.iter().flatten().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn context_changes_the_vector() {
        let e = ReferenceEmbedder::default();
        let a = e.encode_raw(&toks("kfree ( x ) ;"), &[]).unwrap();
        let b = e.encode_raw(&toks("put_device ( x ) ;"), &[]).unwrap();
        assert_ne!(a[2], b[2]);
    }
}
