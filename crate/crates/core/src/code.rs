//! Syntax helpers shared by the agent, the corrector and the MiniWorld
//! interpreter: fenced code blocks, a small Python-flavoured lexer, and
//! `apis.<app>.<endpoint>(...)` call-site scanning.
//!
//! Everything here is syntactic. Nothing evaluates code.

use std::ops::Range;

/// A fenced block (```` ```lang ... ``` ````) found in model output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock<'a> {
    pub lang: &'a str,
    pub body: &'a str,
}

/// Returns every closed fenced block in `text`, in order.
///
/// A fence opens on a line whose first non-blank characters are three
/// backticks and closes on the next line consisting of three backticks.
/// An opening fence without a matching close is ignored.
pub fn fenced_blocks(text: &str) -> Vec<CodeBlock<'_>> {
    let mut blocks = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let trimmed = line.trim();
        match open {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    if !info.contains('`') {
                        open = Some((info.trim(), offset));
                    }
                }
            }
            Some((lang, body_start)) => {
                if trimmed == "```" {
                    let body = &text[body_start..line_start];
                    let body = body.strip_suffix('\n').unwrap_or(body);
                    let body = body.strip_suffix('\r').unwrap_or(body);
                    blocks.push(CodeBlock { lang, body });
                    open = None;
                }
            }
        }
    }
    blocks
}

/// Wraps code in a single python fence.
pub fn fence(code: &str) -> String {
    format!("```python\n{}\n```", code.trim_end_matches('\n'))
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    /// String literal, already unescaped.
    Str(String),
    Int(i64),
    Float(f64),
    Punct(char),
    /// `==`, `!=`, `<=`, `>=`, `**`, `//`, `->`, `+=` and friends.
    Op(String),
    Newline,
    /// A string literal that ran to the end of the line.
    Unterminated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Range<usize>,
}

impl Token {
    pub fn is_punct(&self, c: char) -> bool {
        self.kind == TokenKind::Punct(c)
    }

    pub fn ident(&self) -> Option<&str> {
        match &self.kind {
            TokenKind::Ident(s) => Some(s),
            _ => None,
        }
    }
}

/// Lenient lexer. Comments are dropped, newlines inside brackets are
/// suppressed, and malformed literals become `Unterminated` tokens rather
/// than errors so that validators can still scan broken code.
pub fn lex(src: &str) -> Vec<Token> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut depth = 0i32;
    let mut i = 0;
    while i < bytes.len() {
        let c = src[i..].chars().next().unwrap_or('\0');
        let start = i;
        match c {
            '#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            '\n' => {
                i += 1;
                if depth <= 0 {
                    tokens.push(Token { kind: TokenKind::Newline, span: start..i });
                }
            }
            c if c.is_whitespace() => i += c.len_utf8(),
            '"' | '\'' => {
                let (kind, end) = lex_string(src, i);
                i = end;
                tokens.push(Token { kind, span: start..i });
            }
            c if c.is_ascii_digit() => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.' || bytes[i] == b'_') {
                    i += 1;
                }
                let text = src[start..i].replace('_', "");
                let kind = if let Ok(v) = text.parse::<i64>() {
                    TokenKind::Int(v)
                } else if let Ok(v) = text.parse::<f64>() {
                    TokenKind::Float(v)
                } else {
                    TokenKind::Unterminated
                };
                tokens.push(Token { kind, span: start..i });
            }
            c if c.is_alphabetic() || c == '_' => {
                while i < bytes.len() {
                    let ch = src[i..].chars().next().unwrap_or('\0');
                    if ch.is_alphanumeric() || ch == '_' {
                        i += ch.len_utf8();
                    } else {
                        break;
                    }
                }
                let word = &src[start..i];
                // string prefixes such as f"..." or r'...'
                if matches!(word, "f" | "r" | "b" | "rb" | "br" | "fr" | "rf" | "u")
                    && i < bytes.len()
                    && (bytes[i] == b'"' || bytes[i] == b'\'')
                {
                    let (kind, end) = lex_string(src, i);
                    i = end;
                    tokens.push(Token { kind, span: start..i });
                } else {
                    tokens.push(Token { kind: TokenKind::Ident(word.to_string()), span: start..i });
                }
            }
            _ => {
                let two = src.get(i..i + 2).unwrap_or("");
                const OPS: [&str; 13] = ["==", "!=", "<=", ">=", "**", "//", "->", "+=", "-=", "*=", "/=", ":=", "%="];
                if OPS.contains(&two) {
                    i += 2;
                    tokens.push(Token { kind: TokenKind::Op(two.to_string()), span: start..i });
                } else {
                    match c {
                        '(' | '[' | '{' => depth += 1,
                        ')' | ']' | '}' => depth -= 1,
                        _ => {}
                    }
                    i += c.len_utf8();
                    tokens.push(Token { kind: TokenKind::Punct(c), span: start..i });
                }
            }
        }
    }
    tokens
}

fn lex_string(src: &str, start: usize) -> (TokenKind, usize) {
    let bytes = src.as_bytes();
    let quote = bytes[start];
    let triple = src[start..].starts_with(if quote == b'"' { "\"\"\"" } else { "'''" });
    let mut i = start + if triple { 3 } else { 1 };
    let mut out = String::new();
    while i < bytes.len() {
        let c = src[i..].chars().next().unwrap_or('\0');
        if c == '\\' {
            let next = src[i + 1..].chars().next();
            match next {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('r') => out.push('\r'),
                Some('0') => out.push('\0'),
                Some('\\') => out.push('\\'),
                Some('\'') => out.push('\''),
                Some('"') => out.push('"'),
                Some('\n') => {}
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => return (TokenKind::Unterminated, bytes.len()),
            }
            i += 1 + next.map_or(0, char::len_utf8);
            continue;
        }
        if triple {
            if src.as_bytes()[i..].starts_with(&[quote, quote, quote]) {
                return (TokenKind::Str(out), i + 3);
            }
        } else if c as u32 == quote as u32 {
            return (TokenKind::Str(out), i + 1);
        } else if c == '\n' {
            return (TokenKind::Unterminated, i);
        }
        out.push(c);
        i += c.len_utf8();
    }
    (TokenKind::Unterminated, bytes.len())
}

/// One argument at a call site, as written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgSite {
    pub keyword: Option<String>,
    /// Source text of the value expression, trimmed.
    pub value: String,
}

/// A syntactic `apis.<app>.<endpoint>(...)` call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    pub app: String,
    pub endpoint: String,
    pub args: Vec<ArgSite>,
    pub span: Range<usize>,
}

impl CallSite {
    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|a| a.keyword.as_deref())
    }
}

/// Scans `code` for `apis.<app>.<endpoint>(` call sites, in source order.
/// Calls appearing inside string literals or comments are not reported.
pub fn call_sites(code: &str) -> Vec<CallSite> {
    let tokens = lex(code);
    let mut calls = Vec::new();
    let mut i = 0;
    while i + 5 < tokens.len() + 1 {
        if let Some(call) = match_call(code, &tokens, i) {
            calls.push(call);
        }
        i += 1;
    }
    calls
}

fn match_call(src: &str, tokens: &[Token], i: usize) -> Option<CallSite> {
    if tokens.get(i)?.ident()? != "apis" {
        return None;
    }
    // `x.apis.mail.f(` is not a top-level apis call
    if i > 0 && tokens[i - 1].is_punct('.') {
        return None;
    }
    if !tokens.get(i + 1)?.is_punct('.') {
        return None;
    }
    let app = tokens.get(i + 2)?.ident()?.to_string();
    if !tokens.get(i + 3)?.is_punct('.') {
        return None;
    }
    let endpoint = tokens.get(i + 4)?.ident()?.to_string();
    let open = tokens.get(i + 5)?;
    if !open.is_punct('(') {
        return None;
    }

    let mut args = Vec::new();
    let mut depth = 0i32;
    let mut arg_start: Option<usize> = None;
    let mut j = i + 5;
    let mut end = open.span.end;
    let push_arg = |from: usize, to: usize, args: &mut Vec<ArgSite>| {
        let slice = &tokens[from..to];
        if slice.is_empty() {
            return;
        }
        let text = src[slice[0].span.start..slice[slice.len() - 1].span.end].trim().to_string();
        let kw = match (slice.first(), slice.get(1)) {
            (Some(first), Some(eq)) if eq.is_punct('=') => first.ident().map(str::to_string),
            _ => None,
        };
        let value = match &kw {
            Some(_) if slice.len() > 2 => src[slice[2].span.start..slice[slice.len() - 1].span.end].trim().to_string(),
            Some(_) => String::new(),
            None => text,
        };
        args.push(ArgSite { keyword: kw, value });
    };
    while j < tokens.len() {
        let t = &tokens[j];
        match &t.kind {
            TokenKind::Punct('(' | '[' | '{') => {
                depth += 1;
                if depth == 1 {
                    arg_start = Some(j + 1);
                }
            }
            TokenKind::Punct(')' | ']' | '}') => {
                depth -= 1;
                if depth == 0 {
                    if let Some(s) = arg_start {
                        push_arg(s, j, &mut args);
                    }
                    end = t.span.end;
                    break;
                }
            }
            TokenKind::Punct(',') if depth == 1 => {
                if let Some(s) = arg_start {
                    push_arg(s, j, &mut args);
                }
                arg_start = Some(j + 1);
            }
            _ => {}
        }
        end = t.span.end;
        j += 1;
    }
    Some(CallSite { app, endpoint, args, span: tokens[i].span.start..end })
}
