//! Tokenizer and call-expression parser shared by the action language and the
//! whitelisted config commands. Only `name.name(literal, key=literal)` shapes
//! are recognised; everything else is a syntax error.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A literal argument value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Literal {
    pub fn type_name(&self) -> &'static str {
        match self {
            Literal::Bool(_) => "bool",
            Literal::Int(_) => "int",
            Literal::Float(_) => "float",
            Literal::Str(_) => "str",
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Literal::Int(i) => Some(*i as f64),
            Literal::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Literal::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Bool(true) => f.write_str("True"),
            Literal::Bool(false) => f.write_str("False"),
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => {
                if x.fract() == 0.0 && x.is_finite() {
                    write!(f, "{x:.1}")
                } else {
                    write!(f, "{x}")
                }
            }
            Literal::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\t' => f.write_str("\\t")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Ident(String),
    Dot,
    LParen,
    RParen,
    Comma,
    Equals,
    Lit(Literal),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LexError {
    pub column: usize,
    pub message: String,
}

fn err(column: usize, message: impl Into<String>) -> LexError {
    LexError {
        column,
        message: message.into(),
    }
}

/// Tokenizes one line. A `#` outside a string starts a comment that runs to
/// the end of the line.
pub(crate) fn tokenize(line: &str) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\r' => i += 1,
            '#' => break,
            '.' if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => {
                out.push(Token::Dot);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            ',' => {
                out.push(Token::Comma);
                i += 1;
            }
            '=' => {
                if chars.get(i + 1) == Some(&'=') {
                    return Err(err(i + 1, "comparison is not allowed"));
                }
                out.push(Token::Equals);
                i += 1;
            }
            '"' | '\'' => {
                let quote = c;
                let start = i;
                i += 1;
                let mut s = String::new();
                loop {
                    let Some(&ch) = chars.get(i) else {
                        return Err(err(start + 1, "unterminated string literal"));
                    };
                    i += 1;
                    if ch == quote {
                        break;
                    }
                    if ch == '\\' {
                        let Some(&esc) = chars.get(i) else {
                            return Err(err(start + 1, "unterminated string literal"));
                        };
                        i += 1;
                        match esc {
                            'n' => s.push('\n'),
                            't' => s.push('\t'),
                            '\\' => s.push('\\'),
                            '"' => s.push('"'),
                            '\'' => s.push('\''),
                            other => {
                                s.push('\\');
                                s.push(other);
                            }
                        }
                    } else {
                        s.push(ch);
                    }
                }
                out.push(Token::Lit(Literal::Str(s)));
            }
            c if c.is_ascii_digit() || c == '-' || c == '.' => {
                let start = i;
                if c == '-' {
                    i += 1;
                    if !chars.get(i).is_some_and(|d| d.is_ascii_digit() || *d == '.') {
                        return Err(err(start + 1, "arithmetic is not allowed"));
                    }
                }
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    i += 1;
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        i += 1;
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    return Err(err(i + 1, "malformed number"));
                }
                let text: String = chars[start..i].iter().collect();
                let lit = if text.contains(['.', 'e', 'E']) {
                    text.parse::<f64>()
                        .ok()
                        .filter(|f| f.is_finite())
                        .map(Literal::Float)
                } else {
                    text.parse::<i64>().ok().map(Literal::Int)
                };
                out.push(Token::Lit(lit.ok_or_else(|| err(start + 1, format!("malformed number `{text}`")))?));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(err(i + 1, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

/// A parsed `a.b.c(args)` expression.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CallExpr {
    pub path: Vec<String>,
    pub args: Vec<Literal>,
    pub kwargs: Vec<(String, Literal)>,
}

fn literal_from(tok: &Token) -> Option<Literal> {
    match tok {
        Token::Lit(l) => Some(l.clone()),
        Token::Ident(s) if s == "True" || s == "true" => Some(Literal::Bool(true)),
        Token::Ident(s) if s == "False" || s == "false" => Some(Literal::Bool(false)),
        _ => None,
    }
}

/// Parses a token stream that must form exactly one call expression.
pub(crate) fn parse_call(tokens: &[Token]) -> Result<CallExpr, String> {
    let mut pos = 0;
    let mut path = Vec::new();
    match tokens.first() {
        Some(Token::Ident(s)) => {
            path.push(s.clone());
            pos += 1;
        }
        Some(_) => return Err("statement must start with a function name".into()),
        None => return Err("empty statement".into()),
    }
    while tokens.get(pos) == Some(&Token::Dot) {
        match tokens.get(pos + 1) {
            Some(Token::Ident(s)) => path.push(s.clone()),
            _ => return Err("expected a name after `.`".into()),
        }
        pos += 2;
    }
    match tokens.get(pos) {
        Some(Token::LParen) => pos += 1,
        Some(Token::Equals) => return Err("assignment is not allowed".into()),
        Some(_) => return Err("expected `(` after the function name".into()),
        None => return Err("expected a call, found a bare name".into()),
    }
    let mut args = Vec::new();
    let mut kwargs: Vec<(String, Literal)> = Vec::new();
    loop {
        match tokens.get(pos) {
            Some(Token::RParen) => {
                pos += 1;
                break;
            }
            None => return Err("missing `)`".into()),
            _ => {}
        }
        let is_keyword = matches!(
            (tokens.get(pos), tokens.get(pos + 1)),
            (Some(Token::Ident(_)), Some(Token::Equals))
        );
        if is_keyword {
            let Some(Token::Ident(name)) = tokens.get(pos) else { unreachable!() };
            let value = tokens
                .get(pos + 2)
                .and_then(literal_from)
                .ok_or_else(|| format!("argument `{name}` must be a literal"))?;
            if kwargs.iter().any(|(k, _)| k == name) {
                return Err(format!("argument `{name}` given twice"));
            }
            kwargs.push((name.clone(), value));
            pos += 3;
        } else {
            if !kwargs.is_empty() {
                return Err("positional argument follows keyword argument".into());
            }
            let value = tokens
                .get(pos)
                .and_then(literal_from)
                .ok_or_else(|| "arguments must be literals".to_string())?;
            args.push(value);
            pos += 1;
        }
        match tokens.get(pos) {
            Some(Token::Comma) => pos += 1,
            Some(Token::RParen) => {}
            Some(Token::LParen) => return Err("nested calls are not allowed".into()),
            None => return Err("missing `)`".into()),
            Some(_) => return Err("expected `,` or `)`".into()),
        }
    }
    if pos != tokens.len() {
        return Err("unexpected tokens after the call".into());
    }
    Ok(CallExpr { path, args, kwargs })
}
