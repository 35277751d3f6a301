//! Symbol extraction from Lisp-style program outputs.
//!
//! Programs look like `(Yield :output (FindManager :recipient (me)))`. Every
//! bare atom that is not a number is a symbol; string literals are skipped.
//! `#` and `^` sigils attached to an opening parenthesis are ignored.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Lexeme<'a> {
    Open,
    Close,
    Str,
    Atom(&'a str),
}

fn lex(text: &str) -> Result<Vec<(usize, Lexeme<'_>)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'(' => {
                out.push((i, Lexeme::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Lexeme::Close));
                i += 1;
            }
            b'"' => {
                let start = i;
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => {
                            return Err(Error::Lisp {
                                position: start,
                                message: "unterminated string literal".into(),
                            })
                        }
                        Some(b'\\') => i += 2,
                        Some(b'"') => {
                            i += 1;
                            break;
                        }
                        Some(_) => i += 1,
                    }
                }
                out.push((start, Lexeme::Str));
            }
            _ if b.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && !matches!(bytes[i], b'(' | b')' | b'"') {
                    i += 1;
                }
                out.push((start, Lexeme::Atom(&text[start..i])));
            }
        }
    }
    Ok(out)
}

fn is_symbol_atom(atom: &str) -> bool {
    let trimmed = atom.trim_matches(|c| c == '#' || c == '^');
    !trimmed.is_empty() && trimmed.parse::<f64>().is_err()
}

/// Returns every identifier in `lisp`. Fails on unbalanced parentheses or an
/// unterminated string literal.
pub fn extract_symbols(lisp: &str) -> Result<BTreeSet<String>> {
    let mut depth_stack = Vec::new();
    let mut symbols = BTreeSet::new();
    for (pos, lexeme) in lex(lisp)? {
        match lexeme {
            Lexeme::Open => depth_stack.push(pos),
            Lexeme::Close => {
                if depth_stack.pop().is_none() {
                    return Err(Error::Lisp {
                        position: pos,
                        message: "unmatched `)`".into(),
                    });
                }
            }
            Lexeme::Str => {}
            Lexeme::Atom(atom) => {
                if is_symbol_atom(atom) {
                    symbols.insert(atom.trim_matches(|c| c == '#' || c == '^').to_string());
                }
            }
        }
    }
    if let Some(open) = depth_stack.pop() {
        return Err(Error::Lisp {
            position: open,
            message: "unclosed `(`".into(),
        });
    }
    Ok(symbols)
}
