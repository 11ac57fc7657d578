//! Indentation-aware tokenizer.

use crate::error::{DslError, Span};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Int(i64),
    Float(f64),
    Str(String),
    /// f-string body with escapes already processed; `{`/`}` kept raw
    /// except for doubled braces, which are preserved as `{{`/`}}`.
    FStr(String),
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

const OPS: [&str; 33] = [
    "**=", "//=", "==", "!=", "<=", ">=", "**", "//", "+=", "-=", "*=", "/=", "%=", "->", "+", "-",
    "*", "/", "%", "<", ">", "=", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";", "@",
];

pub fn tokenize(source: &str) -> Result<Vec<Token>, DslError> {
    Lexer::new(source).run()
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
    depth: usize,
    indents: Vec<usize>,
    out: Vec<Token>,
    _src: &'a str,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            col: 1,
            depth: 0,
            indents: vec![0],
            out: Vec::new(),
            _src: src,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.chars.get(self.pos + n).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn here(&self) -> Span {
        Span::new(self.line, self.col, self.line, self.col + 1)
    }

    fn push(&mut self, tok: Tok, line: usize, col: usize) {
        self.out.push(Token {
            tok,
            span: Span::new(line, col, self.line, self.col),
        });
    }

    fn last_is_line_break(&self) -> bool {
        matches!(
            self.out.last().map(|t| &t.tok),
            None | Some(Tok::Newline) | Some(Tok::Indent) | Some(Tok::Dedent)
        )
    }

    fn run(mut self) -> Result<Vec<Token>, DslError> {
        let mut at_line_start = true;
        loop {
            if at_line_start && self.depth == 0 {
                // measure indentation
                let mut width = 0;
                while let Some(c) = self.peek() {
                    match c {
                        ' ' => width += 1,
                        '\t' => width += 4 - (width % 4),
                        '\r' => {}
                        _ => break,
                    }
                    self.bump();
                }
                match self.peek() {
                    None => break,
                    Some('\n') => {
                        self.bump();
                        continue;
                    }
                    Some('#') => {
                        while !matches!(self.peek(), None | Some('\n')) {
                            self.bump();
                        }
                        continue;
                    }
                    _ => {}
                }
                let current = *self.indents.last().unwrap();
                if width > current {
                    self.indents.push(width);
                    self.push(Tok::Indent, self.line, 1);
                } else {
                    while width < *self.indents.last().unwrap() {
                        self.indents.pop();
                        self.push(Tok::Dedent, self.line, 1);
                    }
                    if width != *self.indents.last().unwrap() {
                        return Err(DslError::parse("inconsistent dedent", self.here()));
                    }
                }
                at_line_start = false;
            }
            let Some(c) = self.peek() else { break };
            let (line, col) = (self.line, self.col);
            match c {
                '\n' => {
                    self.bump();
                    if self.depth == 0 {
                        if !self.last_is_line_break() {
                            self.push(Tok::Newline, line, col);
                        }
                        at_line_start = true;
                    }
                }
                ' ' | '\t' | '\r' => {
                    self.bump();
                }
                '#' => {
                    while !matches!(self.peek(), None | Some('\n')) {
                        self.bump();
                    }
                }
                '\\' if self.peek_at(1) == Some('\n') => {
                    self.bump();
                    self.bump();
                }
                c if c.is_ascii_digit() || (c == '.' && self.peek_at(1).is_some_and(|d| d.is_ascii_digit())) => {
                    self.number(line, col)?;
                }
                c if c.is_alphabetic() || c == '_' => {
                    let mut name = String::new();
                    while let Some(d) = self.peek() {
                        if d.is_alphanumeric() || d == '_' {
                            name.push(d);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    let lower = name.to_ascii_lowercase();
                    let is_prefix = matches!(lower.as_str(), "f" | "r" | "rf" | "fr" | "b" | "rb" | "br" | "u");
                    if is_prefix && matches!(self.peek(), Some('"') | Some('\'')) {
                        self.string(line, col, lower.contains('f'), lower.contains('r'))?;
                    } else {
                        self.push(Tok::Name(name), line, col);
                    }
                }
                '"' | '\'' => self.string(line, col, false, false)?,
                _ => {
                    let rest: String = self.chars[self.pos..(self.pos + 3).min(self.chars.len())].iter().collect();
                    let op = OPS.iter().find(|op| rest.starts_with(**op));
                    match op {
                        Some(op) => {
                            for _ in 0..op.chars().count() {
                                self.bump();
                            }
                            match *op {
                                "(" | "[" | "{" => self.depth += 1,
                                ")" | "]" | "}" => self.depth = self.depth.saturating_sub(1),
                                _ => {}
                            }
                            self.push(Tok::Op(op), line, col);
                        }
                        None => {
                            return Err(DslError::parse(
                                format!("unexpected character `{c}`"),
                                Span::new(line, col, line, col + 1),
                            ))
                        }
                    }
                }
            }
        }
        if !self.last_is_line_break() {
            self.push(Tok::Newline, self.line, self.col);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(Tok::Dedent, self.line, self.col);
        }
        self.push(Tok::Eof, self.line, self.col);
        Ok(self.out)
    }

    fn number(&mut self, line: usize, col: usize) -> Result<(), DslError> {
        let mut text = String::new();
        let mut is_float = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == '_' {
                if c != '_' {
                    text.push(c);
                }
                self.bump();
            } else if c == '.' && !is_float && self.peek_at(1) != Some('.') {
                // `1.` followed by a name (method call) stays an int: `1 .real` is rare
                if self.peek_at(1).is_some_and(|d| d.is_alphabetic() || d == '_') {
                    break;
                }
                is_float = true;
                text.push(c);
                self.bump();
            } else if (c == 'e' || c == 'E')
                && (self.peek_at(1).is_some_and(|d| d.is_ascii_digit())
                    || (matches!(self.peek_at(1), Some('+') | Some('-'))
                        && self.peek_at(2).is_some_and(|d| d.is_ascii_digit())))
            {
                is_float = true;
                text.push(c);
                self.bump();
                if let Some(s) = self.peek().filter(|s| *s == '+' || *s == '-') {
                    text.push(s);
                    self.bump();
                }
            } else {
                break;
            }
        }
        if self.peek().is_some_and(|c| c.is_alphabetic() || c == '_') {
            return Err(DslError::parse("invalid number literal", self.here()));
        }
        let span = Span::new(line, col, self.line, self.col);
        let tok = if is_float {
            Tok::Float(text.parse().map_err(|_| DslError::parse("invalid float literal", span))?)
        } else {
            match text.parse::<i64>() {
                Ok(i) => Tok::Int(i),
                Err(_) => return Err(DslError::parse("integer literal too large", span)),
            }
        };
        self.push(tok, line, col);
        Ok(())
    }

    fn string(&mut self, line: usize, col: usize, fstring: bool, raw: bool) -> Result<(), DslError> {
        let quote = self.bump().unwrap();
        let triple = self.peek() == Some(quote) && self.peek_at(1) == Some(quote);
        if triple {
            self.bump();
            self.bump();
        }
        let mut out = String::new();
        loop {
            let Some(c) = self.peek() else {
                return Err(DslError::parse("unterminated string", Span::new(line, col, self.line, self.col)));
            };
            if c == quote {
                if !triple {
                    self.bump();
                    break;
                }
                if self.peek_at(1) == Some(quote) && self.peek_at(2) == Some(quote) {
                    self.bump();
                    self.bump();
                    self.bump();
                    break;
                }
            }
            if c == '\n' && !triple {
                return Err(DslError::parse("unterminated string", Span::new(line, col, self.line, self.col)));
            }
            self.bump();
            if c == '\\' {
                let Some(e) = self.bump() else {
                    return Err(DslError::parse("unterminated string", Span::new(line, col, self.line, self.col)));
                };
                if raw {
                    out.push('\\');
                    out.push(e);
                    continue;
                }
                match e {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    '0' => out.push('\0'),
                    '\\' => out.push('\\'),
                    '\'' => out.push('\''),
                    '"' => out.push('"'),
                    '\n' => {}
                    other => {
                        out.push('\\');
                        out.push(other);
                    }
                }
            } else {
                out.push(c);
            }
        }
        self.push(if fstring { Tok::FStr(out) } else { Tok::Str(out) }, line, col);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn indentation_blocks() {
        let t = toks("for x in y:\n    assert x\nassert 1\n");
        assert!(t.contains(&Tok::Indent));
        assert!(t.contains(&Tok::Dedent));
        assert_eq!(t.last(), Some(&Tok::Eof));
    }

    #[test]
    fn brackets_join_lines() {
        let t = toks("assert (1 ==\n   1)");
        assert_eq!(t.iter().filter(|t| **t == Tok::Newline).count(), 1);
        assert!(!t.contains(&Tok::Indent));
    }

    #[test]
    fn string_prefixes() {
        assert_eq!(toks("r'\\d+'")[0], Tok::Str("\\d+".into()));
        assert_eq!(toks("f\"a{b}\"")[0], Tok::FStr("a{b}".into()));
        assert_eq!(toks("'a\\nb'")[0], Tok::Str("a\nb".into()));
    }

    #[test]
    fn numbers() {
        assert_eq!(toks("12 1.5 2e3")[..3], [Tok::Int(12), Tok::Float(1.5), Tok::Float(2000.0)]);
        assert!(tokenize("99999999999999999999").is_err());
    }

    #[test]
    fn spans_are_one_based() {
        let t = tokenize("assert  x").unwrap();
        assert_eq!(t[1].span, Span::new(1, 9, 1, 10));
    }

    #[test]
    fn bad_dedent_is_parse_error() {
        assert!(tokenize("if x:\n    a = 1\n  b = 2\n").is_err());
    }
}
