#![allow(dead_code)]

pub mod oracle;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const VARS: &[&str] = &["a", "b", "c", "p", "q", "s->len", "s->buf"];

/// Random C function with at most `limit` statements.
pub fn random_function(rng: &mut ChaCha8Rng, name: &str, limit: usize) -> String {
    let mut g = Gen {
        rng,
        budget: limit.saturating_sub(3),
        uses_goto: false,
    };
    let mut body = String::new();
    body.push_str("\tint a = b;\n\tint t;\n");
    let mut block = String::new();
    g.block(&mut block, 1, 0);
    body.push_str(&block);
    if g.uses_goto {
        body.push_str("out:\n");
    }
    body.push_str("\treturn t;\n");
    format!("int {name}(int b, int c, struct st *s)\n{{\n{body}}}\n")
}

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    budget: usize,
    uses_goto: bool,
}

impl Gen<'_> {
    fn var(&mut self) -> &'static str {
        VARS.choose(self.rng).unwrap()
    }

    fn scalar(&mut self) -> &'static str {
        ["a", "b", "c", "p", "q", "t"].choose(self.rng).unwrap()
    }

    fn block(&mut self, out: &mut String, indent: usize, nesting: usize) {
        let n = self.rng.gen_range(1..=5);
        for _ in 0..n {
            if self.budget == 0 {
                break;
            }
            self.stmt(out, indent, nesting);
        }
    }

    fn stmt(&mut self, out: &mut String, indent: usize, nesting: usize) {
        let pad = "\t".repeat(indent);
        let roll = self.rng.gen_range(0..100);
        self.budget -= 1;
        match roll {
            0..=19 => {
                let (l, r) = (self.var(), self.var());
                out.push_str(&format!("{pad}{l} = {r};\n"));
            }
            20..=29 => {
                let (l, r) = (self.var(), self.var());
                out.push_str(&format!("{pad}{l} = &{r};\n"));
            }
            30..=39 => {
                let (l, r, x) = (self.scalar(), self.var(), self.var());
                out.push_str(&format!("{pad}{l} = {r} + {x};\n"));
            }
            40..=49 => {
                let (l, r) = (self.scalar(), self.var());
                out.push_str(&format!("{pad}{l} = get({r});\n"));
            }
            50..=61 => {
                let (x, y) = (self.var(), self.var());
                out.push_str(&format!("{pad}use({x}, {y});\n"));
            }
            62..=65 => {
                let x = self.scalar();
                out.push_str(&format!("{pad}{x}++;\n"));
            }
            66..=69 if nesting > 0 && self.budget > 0 => {
                let x = self.var();
                self.budget -= 1;
                self.uses_goto = true;
                out.push_str(&format!("{pad}if (!{x})\n{pad}\tgoto out;\n"));
            }
            70..=84 if nesting < 2 && self.budget > 1 => {
                let x = self.var();
                out.push_str(&format!("{pad}if ({x}) {{\n"));
                self.block(out, indent + 1, nesting + 1);
                if self.budget > 0 && self.rng.gen_bool(0.5) {
                    out.push_str(&format!("{pad}}} else {{\n"));
                    self.block(out, indent + 1, nesting + 1);
                }
                out.push_str(&format!("{pad}}}\n"));
            }
            85..=94 if nesting < 2 && self.budget > 1 => {
                let x = self.var();
                out.push_str(&format!("{pad}while ({x}) {{\n"));
                self.block(out, indent + 1, nesting + 1);
                out.push_str(&format!("{pad}}}\n"));
            }
            _ => {
                let x = self.var();
                out.push_str(&format!("{pad}release({x});\n"));
            }
        }
    }
}
