//! Pattern language: AST, field catalogue and parser.
//!
//! ```text
//! statement := PATTERN name WHEN expr EMIT name
//! expr      := WITHIN seconds expr
//!            | (SEQ | AND | OR) "(" expr ("," expr)+ ")"
//!            | kind "(" [pred ("," pred)*] ")"
//! pred      := field op literal
//! op        := "=" | "!=" | "<" | ">" | within_m
//! literal   := "string" | number | true | false
//! ```
//!
//! `kind` is an event root element name. `where within_m d` holds when the
//! constituent lies within `d` metres of every other location-bearing
//! constituent of the same match.

use std::fmt;

use thiserror::Error;

use crate::events::{Event, EventKind, GeoCoord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PatternError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("{kind} has no field `{field}`")]
    UnknownField { kind: EventKind, field: String },
    #[error("pattern `{0}` already exists")]
    DuplicateName(String),
    #[error("no pattern with id {0}")]
    UnknownPattern(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldType {
    Str,
    Num,
    Bool,
    Loc,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Num(f64),
    Bool(bool),
    Loc(GeoCoord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Gt,
    WithinM,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Eq => "=",
            Op::Ne => "!=",
            Op::Lt => "<",
            Op::Gt => ">",
            Op::WithinM => "within_m",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    Num(f64),
    Bool(bool),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    if c == '"' || c == '\\' {
                        f.write_str("\\")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("\"")
            }
            Literal::Num(n) => write!(f, "{n}"),
            Literal::Bool(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub field: String,
    pub op: Op,
    pub value: Literal,
}

impl Predicate {
    /// Local test against one event. `within_m` is relational and always
    /// passes here; the engine checks it across the whole match.
    pub fn test(&self, ev: &Event) -> bool {
        let Some(v) = field_value(ev, &self.field) else {
            return false;
        };
        match (self.op, &v, &self.value) {
            (Op::WithinM, Value::Loc(_), _) => true,
            (Op::Eq, Value::Str(a), Literal::Str(b)) => a == b,
            (Op::Ne, Value::Str(a), Literal::Str(b)) => a != b,
            (Op::Eq, Value::Bool(a), Literal::Bool(b)) => a == b,
            (Op::Ne, Value::Bool(a), Literal::Bool(b)) => a != b,
            (Op::Eq, Value::Num(a), Literal::Num(b)) => a == b,
            (Op::Ne, Value::Num(a), Literal::Num(b)) => a != b,
            (Op::Lt, Value::Num(a), Literal::Num(b)) => a < b,
            (Op::Gt, Value::Num(a), Literal::Num(b)) => a > b,
            _ => false,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.field, self.op, self.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Filter {
        kind: EventKind,
        preds: Vec<Predicate>,
    },
    Seq(Vec<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    /// Bound in seconds.
    Within(f64, Box<Expr>),
}

impl Expr {
    pub fn filter(kind: EventKind, preds: Vec<Predicate>) -> Self {
        Expr::Filter { kind, preds }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Filter { .. } => 1,
            Expr::Seq(c) | Expr::And(c) | Expr::Or(c) => {
                1 + c.iter().map(Expr::depth).max().unwrap_or(0)
            }
            Expr::Within(_, e) => 1 + e.depth(),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Expr::Filter { .. } => 1,
            Expr::Seq(c) | Expr::And(c) | Expr::Or(c) => c.iter().map(Expr::leaf_count).sum(),
            Expr::Within(_, e) => e.leaf_count(),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, op: &str, c: &[Expr]| {
            write!(f, "{op}(")?;
            for (i, e) in c.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{e}")?;
            }
            f.write_str(")")
        };
        match self {
            Expr::Filter { kind, preds } => {
                write!(f, "{kind}(")?;
                for (i, p) in preds.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{p}")?;
                }
                f.write_str(")")
            }
            Expr::Seq(c) => list(f, "SEQ", c),
            Expr::And(c) => list(f, "AND", c),
            Expr::Or(c) => list(f, "OR", c),
            Expr::Within(s, e) => write!(f, "WITHIN {s} {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    pub name: String,
    pub expr: Expr,
    pub emit: String,
}

impl PatternSpec {
    pub fn parse(text: &str) -> Result<Self, PatternError> {
        let mut p = Parser::new(text)?;
        let spec = p.statement()?;
        p.expect_end()?;
        Ok(spec)
    }
}

impl fmt::Display for PatternSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PATTERN {} WHEN {} EMIT {}",
            self.name, self.expr, self.emit
        )
    }
}

/// Parses a pattern file: one statement per line, `#` starts a comment.
pub fn parse_patterns(text: &str) -> Result<Vec<PatternSpec>, PatternError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = strip_comment(line);
        if !body.trim().is_empty() {
            out.push(PatternSpec::parse(body).map_err(|e| match e {
                PatternError::Syntax { pos, msg } => PatternError::Syntax {
                    pos: pos + offset,
                    msg,
                },
                other => other,
            })?);
        }
        offset += line.len();
    }
    Ok(out)
}

/// Cuts a trailing `#` comment, ignoring `#` inside string literals.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_str => escaped = true,
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Fields a predicate may name on `kind`.
pub fn field_type(kind: EventKind, field: &str) -> Option<FieldType> {
    use EventKind as K;
    use FieldType::*;
    let t = match (kind, field) {
        (K::Location, "id") => Str,
        (K::Location | K::HearsaySubmission | K::HearsayDelivery, "lat" | "lon") => Num,
        (K::RadarResponse | K::MapRequest | K::TrailSubmission, "lat" | "lon") => Num,
        (K::Location | K::HearsaySubmission | K::HearsayDelivery, "where") => Loc,
        (K::RadarResponse | K::MapRequest | K::TrailSubmission, "where") => Loc,
        (K::HearsayRequest | K::RadarRequest | K::TrailRequest | K::MapRequest, "id") => Str,
        (K::HearsayRequest | K::RadarRequest | K::TrailRequest, "activate") => Bool,
        (K::HearsaySubmission | K::HearsayDelivery, "sender" | "receiver" | "message") => Str,
        (K::HearsayDelivery | K::RadarResponse | K::TrailsResponse | K::MapResponse, "target") => {
            Str
        }
        (K::RadarResponse, "id") => Str,
        (K::TrailSubmission | K::TrailsResponse, "owner") => Str,
        (K::TrailSubmission | K::TrailsResponse, "length") => Num,
        (K::MapRequest | K::MapResponse, "zoom") => Num,
        (K::MapResponse, "url") => Str,
        _ => return None,
    };
    Some(t)
}

/// Extracts a named field; `None` when the kind lacks it.
pub fn field_value(ev: &Event, field: &str) -> Option<Value> {
    let s = |v: &str| Some(Value::Str(v.to_string()));
    let loc_fields = |c: GeoCoord| match field {
        "lat" => Some(Value::Num(c.latitude)),
        "lon" => Some(Value::Num(c.longitude)),
        "where" => Some(Value::Loc(c)),
        _ => None,
    };
    match (ev, field) {
        (Event::Location(e), "id") => s(e.id.as_str()),
        (Event::Location(e), _) => loc_fields(e.location),
        (Event::HearsayRequest(r), "id") => s(r.id.as_str()),
        (Event::HearsayRequest(r), "activate") => Some(Value::Bool(r.activate)),
        (Event::RadarRequest(r), "id") => s(r.id.as_str()),
        (Event::RadarRequest(r), "activate") => Some(Value::Bool(r.activate)),
        (Event::TrailRequest(r), "id") => s(r.id.as_str()),
        (Event::TrailRequest(r), "activate") => Some(Value::Bool(r.activate)),
        (Event::HearsaySubmission(h), "sender") => s(h.sender.id.as_str()),
        (Event::HearsaySubmission(h), "receiver") => s(h.receiver.id.as_str()),
        (Event::HearsaySubmission(h), "message") => s(&h.message),
        (Event::HearsaySubmission(h), _) => loc_fields(h.sender.location),
        (Event::HearsayDelivery(h), "target") => s(h.target.as_str()),
        (Event::HearsayDelivery(h), "sender") => s(h.sender.id.as_str()),
        (Event::HearsayDelivery(h), "receiver") => s(h.receiver.id.as_str()),
        (Event::HearsayDelivery(h), "message") => s(&h.message),
        (Event::HearsayDelivery(h), _) => loc_fields(h.receiver.location),
        (Event::RadarResponse(r), "target") => s(r.target.as_str()),
        (Event::RadarResponse(r), "id") => s(r.location.id.as_str()),
        (Event::RadarResponse(r), _) => loc_fields(r.location.location),
        (Event::TrailSubmission(t), "owner") => t.trail.first().and_then(|p| s(p.id.as_str())),
        (Event::TrailSubmission(t), "length") => Some(Value::Num(t.trail.len() as f64)),
        (Event::TrailSubmission(t), _) => t.trail.first().and_then(|p| loc_fields(p.location)),
        (Event::TrailsResponse(t), "target") => s(t.target.as_str()),
        (Event::TrailsResponse(t), "owner") => t.trail.first().and_then(|p| s(p.id.as_str())),
        (Event::TrailsResponse(t), "length") => Some(Value::Num(t.trail.len() as f64)),
        (Event::MapRequest(m), "id") => s(m.id.as_str()),
        (Event::MapRequest(m), "zoom") => Some(Value::Num(f64::from(m.zoom))),
        (Event::MapRequest(m), _) => loc_fields(m.coord),
        (Event::MapResponse(m), "target") => s(m.target.as_str()),
        (Event::MapResponse(m), "zoom") => Some(Value::Num(f64::from(m.view.zoom))),
        (Event::MapResponse(m), "url") => s(&m.view.url),
        _ => None,
    }
}

/// The coordinate used by `within_m`, if the event has one.
pub fn location_of(ev: &Event) -> Option<GeoCoord> {
    match field_value(ev, "where") {
        Some(Value::Loc(c)) => Some(c),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Eq,
    Ne,
    Lt,
    Gt,
    End,
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

fn syntax(pos: usize, msg: impl Into<String>) -> PatternError {
    PatternError::Syntax {
        pos,
        msg: msg.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, PatternError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'(' => out.push((start, Tok::LParen)),
            b')' => out.push((start, Tok::RParen)),
            b',' => out.push((start, Tok::Comma)),
            b'=' => out.push((start, Tok::Eq)),
            b'<' => out.push((start, Tok::Lt)),
            b'>' => out.push((start, Tok::Gt)),
            b'!' => {
                if bytes.get(i + 1) != Some(&b'=') {
                    return Err(syntax(start, "expected `!=`"));
                }
                i += 1;
                out.push((start, Tok::Ne));
            }
            b'"' => {
                let mut s = String::new();
                let mut chars = text[i + 1..].char_indices();
                loop {
                    match chars.next() {
                        None => return Err(syntax(start, "unterminated string")),
                        Some((j, '"')) => {
                            i += j + 1;
                            break;
                        }
                        Some((_, '\\')) => match chars.next() {
                            Some((_, e @ ('"' | '\\'))) => s.push(e),
                            _ => return Err(syntax(start, "bad escape in string")),
                        },
                        Some((_, ch)) => s.push(ch),
                    }
                }
                out.push((start, Tok::Str(s)));
            }
            b'-' | b'0'..=b'9' => {
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                let n: f64 = text[i..j]
                    .parse()
                    .map_err(|_| syntax(start, format!("bad number {:?}", &text[i..j])))?;
                out.push((start, Tok::Num(n)));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push((start, Tok::Ident(text[i..j].to_string())));
                i = j;
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character {ch:?}")));
            }
        }
        i += 1;
    }
    out.push((text.len(), Tok::End));
    Ok(out)
}

impl Parser {
    fn new(text: &str) -> Result<Self, PatternError> {
        Ok(Parser {
            toks: lex(text)?,
            at: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn pos(&self) -> usize {
        self.toks[self.at].0
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.at].1.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), PatternError> {
        let pos = self.pos();
        if self.next() == want {
            Ok(())
        } else {
            Err(syntax(pos, format!("expected {what}")))
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), PatternError> {
        let pos = self.pos();
        match self.next() {
            Tok::Ident(s) if s == kw => Ok(()),
            _ => Err(syntax(pos, format!("expected `{kw}`"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, PatternError> {
        let pos = self.pos();
        match self.next() {
            Tok::Ident(s) => Ok(s),
            _ => Err(syntax(pos, format!("expected {what}"))),
        }
    }

    fn expect_end(&mut self) -> Result<(), PatternError> {
        if *self.peek() == Tok::End {
            Ok(())
        } else {
            Err(syntax(self.pos(), "unexpected trailing input"))
        }
    }

    fn statement(&mut self) -> Result<PatternSpec, PatternError> {
        self.keyword("PATTERN")?;
        let name = self.ident("pattern name")?;
        self.keyword("WHEN")?;
        let expr = self.expr()?;
        self.keyword("EMIT")?;
        let emit = self.ident("complex event name")?;
        Ok(PatternSpec { name, expr, emit })
    }

    fn expr(&mut self) -> Result<Expr, PatternError> {
        let pos = self.pos();
        let head = self.ident("expression")?;
        match head.as_str() {
            "WITHIN" => {
                let npos = self.pos();
                let secs = match self.next() {
                    Tok::Num(n) if n > 0.0 && n.is_finite() => n,
                    _ => return Err(syntax(npos, "WITHIN needs a positive number of seconds")),
                };
                Ok(Expr::Within(secs, Box::new(self.expr()?)))
            }
            "SEQ" | "AND" | "OR" => {
                self.expect(Tok::LParen, "`(`")?;
                let mut items = vec![self.expr()?];
                while *self.peek() == Tok::Comma {
                    self.next();
                    items.push(self.expr()?);
                }
                self.expect(Tok::RParen, "`)` or `,`")?;
                if items.len() < 2 {
                    return Err(syntax(pos, format!("{head} needs at least two operands")));
                }
                Ok(match head.as_str() {
                    "SEQ" => Expr::Seq(items),
                    "AND" => Expr::And(items),
                    _ => Expr::Or(items),
                })
            }
            other => {
                let kind = EventKind::from_element(other)
                    .ok_or_else(|| syntax(pos, format!("unknown event kind `{other}`")))?;
                self.expect(Tok::LParen, "`(`")?;
                let mut preds = Vec::new();
                if *self.peek() != Tok::RParen {
                    preds.push(self.predicate(kind)?);
                    while *self.peek() == Tok::Comma {
                        self.next();
                        preds.push(self.predicate(kind)?);
                    }
                }
                self.expect(Tok::RParen, "`)` or `,`")?;
                Ok(Expr::Filter { kind, preds })
            }
        }
    }

    fn predicate(&mut self, kind: EventKind) -> Result<Predicate, PatternError> {
        let field = self.ident("field name")?;
        let ty = field_type(kind, &field).ok_or_else(|| PatternError::UnknownField {
            kind,
            field: field.clone(),
        })?;
        let opos = self.pos();
        let op = match self.next() {
            Tok::Eq => Op::Eq,
            Tok::Ne => Op::Ne,
            Tok::Lt => Op::Lt,
            Tok::Gt => Op::Gt,
            Tok::Ident(s) if s == "within_m" => Op::WithinM,
            _ => return Err(syntax(opos, "expected operator")),
        };
        let lpos = self.pos();
        let value = match self.next() {
            Tok::Str(s) => Literal::Str(s),
            Tok::Num(n) => Literal::Num(n),
            Tok::Ident(s) if s == "true" => Literal::Bool(true),
            Tok::Ident(s) if s == "false" => Literal::Bool(false),
            _ => return Err(syntax(lpos, "expected literal")),
        };
        let ok = match (ty, op, &value) {
            (FieldType::Loc, Op::WithinM, Literal::Num(n)) => *n >= 0.0,
            (FieldType::Str, Op::Eq | Op::Ne, Literal::Str(_)) => true,
            (FieldType::Bool, Op::Eq | Op::Ne, Literal::Bool(_)) => true,
            (FieldType::Num, Op::Eq | Op::Ne | Op::Lt | Op::Gt, Literal::Num(_)) => true,
            _ => false,
        };
        if !ok {
            return Err(syntax(
                opos,
                format!("`{field} {op} {value}` does not fit a {ty:?} field"),
            ));
        }
        Ok(Predicate { field, op, value })
    }
}
