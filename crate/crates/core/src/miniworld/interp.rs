//! A restricted interpreter for agent code blocks.
//!
//! Supported: `name = expr`, bare expressions (echoed), `print(...)`,
//! `len(...)`, `str(...)`, literals, lists, dicts, subscripts, `+`, and
//! `apis.<app>.<endpoint>(...)` calls. Variables persist across blocks
//! within an episode. The first error aborts the block.

use std::collections::BTreeMap;

use serde_json::{Map, Number, Value};

use crate::code::{lex, Token, TokenKind};
use crate::env::{ErrorKind, ExecutionResult, TraceEntry};

use super::apps::{self, templates, ApiError};
use super::state::WorldState;

/// Interpreter state that outlives a single block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Interpreter {
    vars: BTreeMap<String, Value>,
}

impl Interpreter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&self, name: &str) -> Option<&Value> {
        self.vars.get(name)
    }

    /// Runs one block against the world.
    pub fn run(&mut self, world: &mut WorldState, code: &str) -> ExecutionResult {
        let tokens = lex(code);
        let mut run = Run { world, vars: &mut self.vars, src: code, toks: &tokens, pos: 0, out: vec![], trace: vec![] };
        let result = run.block();
        let mut output = run.out.join("\n");
        let trace = std::mem::take(&mut run.trace);
        match result {
            Ok(()) => {
                if output.is_empty() {
                    output = "Execution successful (no output).".into();
                }
                ExecutionResult::success(output, trace)
            }
            Err(e) => {
                if !output.is_empty() {
                    output.push('\n');
                }
                output.push_str(&e.message);
                ExecutionResult::failure(e.kind, output, trace)
            }
        }
    }
}

/// Renders a value the way `print` shows it.
pub fn display(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "None".into(),
        Value::Bool(true) => "True".into(),
        Value::Bool(false) => "False".into(),
        other => other.to_string(),
    }
}

struct Run<'a> {
    world: &'a mut WorldState,
    vars: &'a mut BTreeMap<String, Value>,
    src: &'a str,
    toks: &'a [Token],
    pos: usize,
    out: Vec<String>,
    trace: Vec<TraceEntry>,
}

type R<T> = Result<T, ApiError>;

impl Run<'_> {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&Token> {
        self.toks.get(self.pos + n)
    }

    fn at_punct(&self, c: char) -> bool {
        self.peek().is_some_and(|t| t.is_punct(c))
    }

    fn at_end_of_stmt(&self) -> bool {
        match self.peek() {
            None => true,
            Some(t) => t.kind == TokenKind::Newline || t.is_punct(';'),
        }
    }

    fn line_of(&self, offset: usize) -> usize {
        self.src[..offset.min(self.src.len())].matches('\n').count() + 1
    }

    fn syntax(&self, what: &str) -> ApiError {
        match self.peek() {
            Some(t) => {
                let text = &self.src[t.span.clone()];
                templates::runtime(&format!("SyntaxError on line {}: {what} near `{}`", self.line_of(t.span.start), text.trim()))
            }
            None => templates::runtime(&format!("SyntaxError: {what} at end of input")),
        }
    }

    fn expect_punct(&mut self, c: char) -> R<()> {
        if self.at_punct(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{c}`")))
        }
    }

    fn block(&mut self) -> R<()> {
        while self.pos < self.toks.len() {
            if self.at_end_of_stmt() {
                self.pos += 1;
                continue;
            }
            self.statement()?;
            if !self.at_end_of_stmt() {
                return Err(self.syntax("unexpected token"));
            }
        }
        Ok(())
    }

    fn statement(&mut self) -> R<()> {
        let assign_to = match (self.peek(), self.peek_at(1)) {
            (Some(a), Some(b)) if b.is_punct('=') => a.ident().map(str::to_string),
            _ => None,
        };
        if let Some(name) = assign_to {
            if is_reserved(&name) {
                return Err(self.syntax("cannot assign to this name"));
            }
            self.pos += 2;
            let v = self.expr()?;
            self.vars.insert(name, v);
            return Ok(());
        }
        if let Some(Token { kind: TokenKind::Op(op), .. }) = self.peek_at(1) {
            if op.ends_with('=') && !matches!(op.as_str(), "==" | "!=" | "<=" | ">=") {
                return Err(self.syntax("augmented assignment is not supported"));
            }
        }
        let is_print = self.peek().and_then(Token::ident) == Some("print") && self.peek_at(1).is_some_and(|t| t.is_punct('('));
        let v = self.expr()?;
        if !is_print && !v.is_null() {
            self.out.push(display(&v));
        }
        Ok(())
    }

    fn expr(&mut self) -> R<Value> {
        let mut left = self.unary()?;
        while self.at_punct('+') || self.at_punct('-') {
            let plus = self.at_punct('+');
            self.pos += 1;
            let right = self.unary()?;
            left = arith(plus, left, right)?;
        }
        Ok(left)
    }

    fn unary(&mut self) -> R<Value> {
        if self.at_punct('-') {
            self.pos += 1;
            let v = self.unary()?;
            return match v {
                Value::Number(n) if n.is_i64() => Ok(Value::from(-n.as_i64().unwrap_or(0))),
                Value::Number(n) => Ok(float(-n.as_f64().unwrap_or(0.0))),
                _ => Err(templates::runtime("TypeError: bad operand type for unary -")),
            };
        }
        self.postfix()
    }

    fn postfix(&mut self) -> R<Value> {
        let mut v = self.primary()?;
        while self.at_punct('[') {
            self.pos += 1;
            let key = self.expr()?;
            self.expect_punct(']')?;
            v = subscript(&v, &key)?;
        }
        if self.at_punct('.') || self.at_punct('(') {
            return Err(self.syntax("unsupported attribute access or call"));
        }
        Ok(v)
    }

    fn primary(&mut self) -> R<Value> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.syntax("expected an expression"));
        };
        match tok.kind {
            TokenKind::Str(s) => {
                self.pos += 1;
                // implicit concatenation of adjacent literals
                let mut s = s;
                while let Some(Token { kind: TokenKind::Str(more), .. }) = self.peek() {
                    s.push_str(more);
                    self.pos += 1;
                }
                Ok(Value::String(s))
            }
            TokenKind::Int(i) => {
                self.pos += 1;
                Ok(Value::from(i))
            }
            TokenKind::Float(f) => {
                self.pos += 1;
                Ok(float(f))
            }
            TokenKind::Unterminated => Err(self.syntax("unterminated literal")),
            TokenKind::Punct('(') => {
                self.pos += 1;
                let v = self.expr()?;
                self.expect_punct(')')?;
                Ok(v)
            }
            TokenKind::Punct('[') => {
                self.pos += 1;
                let mut items = vec![];
                while !self.at_punct(']') {
                    items.push(self.expr()?);
                    if !self.at_punct(']') {
                        self.expect_punct(',')?;
                    }
                }
                self.pos += 1;
                Ok(Value::Array(items))
            }
            TokenKind::Punct('{') => {
                self.pos += 1;
                let mut map = Map::new();
                while !self.at_punct('}') {
                    let k = match self.expr()? {
                        Value::String(s) => s,
                        other => display(&other),
                    };
                    self.expect_punct(':')?;
                    let v = self.expr()?;
                    map.insert(k, v);
                    if !self.at_punct('}') {
                        self.expect_punct(',')?;
                    }
                }
                self.pos += 1;
                Ok(Value::Object(map))
            }
            TokenKind::Ident(name) => self.name(&name),
            _ => Err(self.syntax("expected an expression")),
        }
    }

    fn name(&mut self, name: &str) -> R<Value> {
        self.pos += 1;
        match name {
            "True" => return Ok(Value::Bool(true)),
            "False" => return Ok(Value::Bool(false)),
            "None" => return Ok(Value::Null),
            "apis" => return self.api_call(),
            "print" | "len" | "str" if self.at_punct('(') => return self.builtin(name),
            _ => {}
        }
        self.vars
            .get(name)
            .cloned()
            .ok_or_else(|| templates::runtime(&format!("NameError: name '{name}' is not defined")))
    }

    fn call_args(&mut self) -> R<Vec<(Option<String>, Value)>> {
        self.expect_punct('(')?;
        let mut args = vec![];
        while !self.at_punct(')') {
            let kw = match (self.peek(), self.peek_at(1)) {
                (Some(a), Some(b)) if b.is_punct('=') => a.ident().map(str::to_string),
                _ => None,
            };
            if kw.is_some() {
                self.pos += 2;
            }
            let v = self.expr()?;
            args.push((kw, v));
            if !self.at_punct(')') {
                self.expect_punct(',')?;
            }
        }
        self.pos += 1;
        Ok(args)
    }

    fn builtin(&mut self, name: &str) -> R<Value> {
        let args = self.call_args()?;
        if args.iter().any(|(k, _)| k.is_some()) {
            return Err(templates::runtime(&format!("TypeError: {name}() takes no keyword arguments here")));
        }
        let vals: Vec<Value> = args.into_iter().map(|(_, v)| v).collect();
        match name {
            "print" => {
                self.out.push(vals.iter().map(display).collect::<Vec<_>>().join(" "));
                Ok(Value::Null)
            }
            "len" => match vals.as_slice() {
                [Value::String(s)] => Ok(Value::from(s.chars().count())),
                [Value::Array(a)] => Ok(Value::from(a.len())),
                [Value::Object(o)] => Ok(Value::from(o.len())),
                _ => Err(templates::runtime("TypeError: len() takes one string, list or dict")),
            },
            _ => match vals.as_slice() {
                [v] => Ok(Value::String(display(v))),
                _ => Err(templates::runtime("TypeError: str() takes exactly one argument")),
            },
        }
    }

    fn api_call(&mut self) -> R<Value> {
        self.expect_punct('.')?;
        let app = self.peek().and_then(Token::ident).map(str::to_string).ok_or_else(|| self.syntax("expected an app name"))?;
        self.pos += 1;
        self.expect_punct('.')?;
        let endpoint =
            self.peek().and_then(Token::ident).map(str::to_string).ok_or_else(|| self.syntax("expected an endpoint name"))?;
        self.pos += 1;
        if !self.at_punct('(') {
            return Err(self.syntax("API endpoints must be called"));
        }
        let Some(spec) = apps::find(&app, &endpoint) else {
            // skip the argument list so the trace stays well-formed
            let err = templates::unknown_endpoint(&app, &endpoint);
            self.trace.push(TraceEntry { app, endpoint, status: ErrorKind::UnknownEndpoint.as_str().into() });
            return Err(err);
        };
        let args = self.call_args()?;
        let result = bind(&app, &endpoint, &spec.doc.parameters, args).and_then(|bound| apps::call(self.world, spec, &bound));
        let status = match &result {
            Ok(_) => "ok".to_string(),
            Err(e) => e.kind.as_str().to_string(),
        };
        self.trace.push(TraceEntry { app, endpoint, status });
        result
    }
}

fn is_reserved(name: &str) -> bool {
    matches!(name, "apis" | "True" | "False" | "None" | "print" | "len" | "str")
}

fn float(f: f64) -> Value {
    Number::from_f64(f).map(Value::Number).unwrap_or(Value::Null)
}

fn arith(plus: bool, a: Value, b: Value) -> R<Value> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            if let (Some(x), Some(y)) = (x.as_i64(), y.as_i64()) {
                Ok(Value::from(if plus { x + y } else { x - y }))
            } else {
                let (x, y) = (x.as_f64().unwrap_or(0.0), y.as_f64().unwrap_or(0.0));
                Ok(float(if plus { x + y } else { x - y }))
            }
        }
        (Value::String(x), Value::String(y)) if plus => Ok(Value::String(x + &y)),
        (Value::Array(mut x), Value::Array(y)) if plus => {
            x.extend(y);
            Ok(Value::Array(x))
        }
        _ => Err(templates::runtime("TypeError: unsupported operand types")),
    }
}

fn subscript(v: &Value, key: &Value) -> R<Value> {
    match (v, key) {
        (Value::Object(m), Value::String(k)) => {
            m.get(k).cloned().ok_or_else(|| templates::runtime(&format!("KeyError: '{k}'")))
        }
        (Value::Array(a), Value::Number(n)) if n.is_i64() => {
            let i = n.as_i64().unwrap_or(0);
            let idx = if i < 0 { a.len() as i64 + i } else { i };
            if idx < 0 || idx as usize >= a.len() {
                Err(templates::runtime(&format!("IndexError: list index {i} out of range")))
            } else {
                Ok(a[idx as usize].clone())
            }
        }
        (Value::Null, _) => Err(templates::runtime("TypeError: 'NoneType' object is not subscriptable")),
        _ => Err(templates::runtime("TypeError: invalid subscript")),
    }
}

/// Binds positional arguments to documented parameters in order.
fn bind(
    app: &str,
    endpoint: &str,
    params: &[crate::env::ApiParam],
    args: Vec<(Option<String>, Value)>,
) -> R<BTreeMap<String, Value>> {
    let mut bound = BTreeMap::new();
    let mut positional = 0;
    for (kw, v) in args {
        let name = match kw {
            Some(k) => k,
            None => {
                let Some(p) = params.get(positional) else {
                    return Err(templates::schema_mismatch(
                        app,
                        endpoint,
                        &format!("takes at most {} positional arguments", params.len()),
                    ));
                };
                positional += 1;
                p.name.clone()
            }
        };
        if bound.insert(name.clone(), v).is_some() {
            return Err(templates::schema_mismatch(app, endpoint, &format!("got multiple values for argument '{name}'")));
        }
    }
    Ok(bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> WorldState {
        let mut w = WorldState::new(3, None);
        w.profile.email = "ada@example.com".into();
        w.passwords.insert("mail".into(), "pw-mail".into());
        w
    }

    #[test]
    fn variables_persist_across_blocks() {
        let mut w = world();
        let mut i = Interpreter::new();
        let r = i.run(&mut w, "tok = apis.mail.login(username=\"ada@example.com\", password=\"pw-mail\")[\"access_token\"]");
        assert!(r.ok, "{}", r.output);
        let r = i.run(&mut w, "apis.mail.send(access_token=tok, to=\"bo@example.com\", body=\"hi\")");
        assert!(r.ok, "{}", r.output);
        assert_eq!(w.mail.sent.len(), 1);
    }

    #[test]
    fn missing_token_is_auth_required() {
        let mut w = world();
        let r = Interpreter::new().run(&mut w, "apis.mail.send(to=\"x\", body=\"y\")");
        assert_eq!(r.error_kind, Some(ErrorKind::AuthRequired));
        assert!(r.output.contains("access_token"));
        assert!(w.mail.sent.is_empty());
    }

    #[test]
    fn undocumented_kwarg_is_schema_mismatch() {
        let mut w = world();
        let r = Interpreter::new().run(&mut w, "apis.mail.send(access_token=\"t\", recipient=\"x\", body=\"y\")");
        assert_eq!(r.error_kind, Some(ErrorKind::SchemaMismatch));
        assert!(r.output.contains("'recipient'"));
    }

    #[test]
    fn docs_are_open() {
        let mut w = world();
        let r = Interpreter::new().run(&mut w, "apis.api_docs.show_api_doc(app_name=\"mail\", api_name=\"send\")");
        assert!(r.ok);
        let v: Value = serde_json::from_str(&r.output).unwrap();
        assert_eq!(v["endpoint"], "send");
    }

    #[test]
    fn positional_args_bind_in_doc_order() {
        let mut w = world();
        let r = Interpreter::new().run(&mut w, "apis.api_docs.show_api_doc(\"mail\", \"login\")");
        assert!(r.ok, "{}", r.output);
    }

    #[test]
    fn first_error_aborts_block() {
        let mut w = world();
        let r = Interpreter::new().run(&mut w, "print(\"before\")\napis.mail.nope()\nprint(\"after\")");
        assert_eq!(r.error_kind, Some(ErrorKind::UnknownEndpoint));
        assert!(r.output.starts_with("before\n"));
        assert!(!r.output.contains("after"));
        assert_eq!(r.api_trace.len(), 1);
    }

    #[test]
    fn syntax_and_name_errors_are_runtime() {
        let mut w = world();
        let mut i = Interpreter::new();
        assert_eq!(i.run(&mut w, "x = ").error_kind, Some(ErrorKind::Runtime));
        assert_eq!(i.run(&mut w, "print(undefined)").error_kind, Some(ErrorKind::Runtime));
        assert_eq!(i.run(&mut w, "for x in y: pass").error_kind, Some(ErrorKind::Runtime));
    }

    #[test]
    fn expressions() {
        let mut w = world();
        let mut i = Interpreter::new();
        let r = i.run(&mut w, "a = [1, 2, {\"k\": \"v\"}]\nprint(a[-1][\"k\"], len(a), 1 + 2.5, \"x\" + \"y\")");
        assert_eq!(r.output, "v 3 3.5 xy");
        assert_eq!(i.var("a").unwrap()[0], 1);
    }
}
