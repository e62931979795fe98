//! Model formula mini-language.
//!
//! A formula names the response on the left of `~` and lists coefficient
//! terms on the right:
//!
//! ```text
//! y ~ 0 + x + rw1(~ z, beta = c(0, 1), sigma = c(0, 1)) + rw2(~ 0 + w)
//! ```
//!
//! * plain identifiers are time-invariant coefficients,
//! * `0` drops the intercept, `1` keeps it (the default),
//! * `rw1(~ ...)` and `rw2(~ ...)` declare random-walk and integrated
//!   random-walk coefficient blocks. The inner formula has its own implicit
//!   intercept, which becomes a time-varying intercept.
//!
//! Priors are written `c(mean, sd)`. `beta` is the prior of the first time
//! point of every coefficient in the block, `sigma` the half-normal prior of
//! the block's noise standard deviations and, for `rw2` only, `nu` the prior
//! of the initial slope.
//!
//! Parsing does not look at any data; column names are resolved later by
//! [`crate::model::build_model`].

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Normal prior given by mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub mean: f64,
    pub sd: f64,
}

impl Prior {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }
}

/// Prior used for `beta`, `sigma` and `nu` when the formula omits them.
pub const DEFAULT_PRIOR: Prior = Prior::new(0.0, 10.0);

/// Name given to intercept columns.
pub const INTERCEPT: &str = "(Intercept)";

/// One `rw1(...)` or `rw2(...)` call.
#[derive(Debug, Clone, PartialEq)]
pub struct RwBlock {
    pub intercept: bool,
    pub terms: Vec<String>,
    pub beta_prior: Prior,
    pub sigma_prior: Prior,
    /// Initial slope prior. Only meaningful for `rw2` blocks; always the
    /// default for `rw1`.
    pub nu_prior: Prior,
}

impl RwBlock {
    /// Column names in design order, intercept first.
    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.intercept
            .then_some(INTERCEPT)
            .into_iter()
            .chain(self.terms.iter().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        usize::from(self.intercept) + self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormulaAst {
    pub response: String,
    pub intercept_fixed: bool,
    pub fixed_terms: Vec<String>,
    pub rw1_blocks: Vec<RwBlock>,
    pub rw2_blocks: Vec<RwBlock>,
}

impl FormulaAst {
    /// Time-invariant columns in design order.
    pub fn fixed_columns(&self) -> impl Iterator<Item = &str> {
        self.intercept_fixed
            .then_some(INTERCEPT)
            .into_iter()
            .chain(self.fixed_terms.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormulaError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("term `{name}` at position {position} appears more than once")]
    DuplicateTerm { name: String, position: usize },
    #[error("second intercept at position {position}; use `0 +` to drop one")]
    DoubleIntercept { position: usize },
    #[error("prior standard deviation at position {position} must be positive, got {sd}")]
    BadPrior { position: usize, sd: f64 },
}

impl FormulaError {
    /// Character offset of the offending input.
    pub fn position(&self) -> usize {
        match self {
            Self::Syntax { position, .. }
            | Self::DuplicateTerm { position, .. }
            | Self::DoubleIntercept { position }
            | Self::BadPrior { position, .. } => *position,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Tilde,
    Plus,
    LParen,
    RParen,
    Comma,
    Equals,
    Eof,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Ident(name) => format!("identifier `{name}`"),
            Token::Number(x) => format!("number `{x}`"),
            Token::Tilde => "`~`".into(),
            Token::Plus => "`+`".into(),
            Token::LParen => "`(`".into(),
            Token::RParen => "`)`".into(),
            Token::Comma => "`,`".into(),
            Token::Equals => "`=`".into(),
            Token::Eof => "end of input".into(),
        }
    }
}

fn syntax(position: usize, message: impl Into<String>) -> FormulaError {
    FormulaError::Syntax {
        position,
        message: message.into(),
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, FormulaError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        let single = match c {
            '~' => Some(Token::Tilde),
            '+' => Some(Token::Plus),
            '(' => Some(Token::LParen),
            ')' => Some(Token::RParen),
            ',' => Some(Token::Comma),
            '=' => Some(Token::Equals),
            _ => None,
        };
        if let Some(tok) = single {
            out.push((tok, start));
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if is_ident_start(c) {
            while i < chars.len() && is_ident_continue(chars[i]) {
                i += 1;
            }
            out.push((Token::Ident(chars[start..i].iter().collect()), start));
        } else if c.is_ascii_digit() || c == '.' || c == '-' {
            i = scan_number(&chars, i)?;
            let literal: String = chars[start..i].iter().collect();
            let value: f64 = literal
                .parse()
                .map_err(|_| syntax(start, format!("malformed number `{literal}`")))?;
            if !value.is_finite() {
                return Err(syntax(start, format!("number `{literal}` is out of range")));
            }
            out.push((Token::Number(value), start));
        } else {
            return Err(syntax(start, format!("unexpected character `{c}`")));
        }
    }
    out.push((Token::Eof, chars.len()));
    Ok(out)
}

/// Returns the end offset of the numeric literal starting at `i`.
fn scan_number(chars: &[char], mut i: usize) -> Result<usize, FormulaError> {
    let start = i;
    if chars[i] == '-' {
        i += 1;
    }
    let digits = |i: &mut usize| {
        let s = *i;
        while *i < chars.len() && chars[*i].is_ascii_digit() {
            *i += 1;
        }
        *i - s
    };
    let mut mantissa = digits(&mut i);
    if i < chars.len() && chars[i] == '.' {
        i += 1;
        mantissa += digits(&mut i);
    }
    if mantissa == 0 {
        return Err(syntax(start, "expected a number"));
    }
    if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
        let mut j = i + 1;
        if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
            j += 1;
        }
        if digits(&mut j) == 0 {
            return Err(syntax(i, "malformed exponent"));
        }
        i = j;
    }
    Ok(i)
}

#[derive(Clone, Copy, PartialEq)]
enum RwKind {
    Rw1,
    Rw2,
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

/// Terms of one right-hand side, before validation.
struct Rhs {
    intercept: bool,
    intercept_pos: Option<usize>,
    terms: Vec<(String, usize)>,
    rw: Vec<(RwKind, ParsedRw)>,
}

struct ParsedRw {
    intercept: bool,
    intercept_pos: usize,
    terms: Vec<(String, usize)>,
    beta: Prior,
    sigma: Prior,
    nu: Prior,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos].0
    }

    fn peek_at(&self, offset: usize) -> &Token {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].0
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> (Token, usize) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<usize, FormulaError> {
        if *self.peek() == want {
            Ok(self.bump().1)
        } else {
            Err(syntax(
                self.offset(),
                format!("expected {what}, found {}", self.peek().describe()),
            ))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), FormulaError> {
        match self.bump() {
            (Token::Ident(name), at) => Ok((name, at)),
            (tok, at) => Err(syntax(at, format!("expected {what}, found {}", tok.describe()))),
        }
    }

    fn number(&mut self) -> Result<(f64, usize), FormulaError> {
        match self.bump() {
            (Token::Number(x), at) => Ok((x, at)),
            (tok, at) => Err(syntax(at, format!("expected a number, found {}", tok.describe()))),
        }
    }

    fn rhs(&mut self, outer: bool) -> Result<Rhs, FormulaError> {
        let mut rhs = Rhs {
            intercept: true,
            intercept_pos: None,
            terms: Vec::new(),
            rw: Vec::new(),
        };
        let mut explicit: Option<(bool, usize)> = None;
        loop {
            let at = self.offset();
            match self.peek().clone() {
                Token::Number(x) if x == 0.0 || x == 1.0 => {
                    self.bump();
                    let keep = x == 1.0;
                    if let Some((prev, _)) = explicit {
                        if prev != keep {
                            return Err(syntax(at, "conflicting `0` and `1` intercept terms"));
                        }
                    }
                    explicit = Some((keep, at));
                }
                Token::Ident(name) if *self.peek_at(1) == Token::LParen => {
                    let kind = match name.as_str() {
                        "rw1" => RwKind::Rw1,
                        "rw2" => RwKind::Rw2,
                        other => {
                            return Err(syntax(at, format!("unsupported function `{other}`")));
                        }
                    };
                    if !outer {
                        return Err(syntax(at, format!("`{name}()` cannot be nested")));
                    }
                    self.bump();
                    let block = self.rw_call(kind, at)?;
                    rhs.rw.push((kind, block));
                }
                Token::Ident(name) => {
                    self.bump();
                    rhs.terms.push((name, at));
                }
                tok => {
                    return Err(syntax(at, format!("expected a term, found {}", tok.describe())));
                }
            }
            if *self.peek() == Token::Plus {
                self.bump();
            } else {
                break;
            }
        }
        if let Some((keep, at)) = explicit {
            rhs.intercept = keep;
            rhs.intercept_pos = Some(at);
        }
        Ok(rhs)
    }

    fn rw_call(&mut self, kind: RwKind, start: usize) -> Result<ParsedRw, FormulaError> {
        self.expect(Token::LParen, "`(`")?;
        self.expect(Token::Tilde, "`~` starting the inner formula")?;
        let inner = self.rhs(false)?;
        if !inner.intercept && inner.terms.is_empty() {
            return Err(syntax(start, "random-walk block has no terms"));
        }
        let mut priors: [Option<Prior>; 3] = [None; 3];
        while *self.peek() == Token::Comma {
            self.bump();
            let (name, at) = self.ident("a prior name")?;
            let slot = match (name.as_str(), kind) {
                ("beta", _) => 0,
                ("sigma", _) => 1,
                ("nu", RwKind::Rw2) => 2,
                ("nu", RwKind::Rw1) => {
                    return Err(syntax(at, "`nu` prior applies to rw2() only"));
                }
                _ => return Err(syntax(at, format!("unknown argument `{name}`"))),
            };
            if priors[slot].is_some() {
                return Err(syntax(at, format!("argument `{name}` given twice")));
            }
            self.expect(Token::Equals, "`=`")?;
            priors[slot] = Some(self.prior_literal()?);
        }
        self.expect(Token::RParen, "`,` or `)`")?;
        Ok(ParsedRw {
            intercept: inner.intercept,
            intercept_pos: inner.intercept_pos.unwrap_or(start),
            terms: inner.terms,
            beta: priors[0].unwrap_or(DEFAULT_PRIOR),
            sigma: priors[1].unwrap_or(DEFAULT_PRIOR),
            nu: priors[2].unwrap_or(DEFAULT_PRIOR),
        })
    }

    fn prior_literal(&mut self) -> Result<Prior, FormulaError> {
        let (name, at) = self.ident("`c`")?;
        if name != "c" {
            return Err(syntax(at, format!("expected `c(mean, sd)`, found `{name}`")));
        }
        self.expect(Token::LParen, "`(`")?;
        let (mean, _) = self.number()?;
        self.expect(Token::Comma, "`,`")?;
        let (sd, sd_at) = self.number()?;
        self.expect(Token::RParen, "`)`")?;
        if sd <= 0.0 {
            return Err(FormulaError::BadPrior { position: sd_at, sd });
        }
        Ok(Prior::new(mean, sd))
    }
}

/// Parses a model formula such as `y ~ 0 + x + rw1(~ z)`.
pub fn parse_formula(text: &str) -> Result<FormulaAst, FormulaError> {
    let mut p = Parser {
        tokens: tokenize(text)?,
        pos: 0,
    };
    let (response, _) = p.ident("the response name")?;
    p.expect(Token::Tilde, "`~`")?;
    let rhs = p.rhs(true)?;
    if *p.peek() != Token::Eof {
        return Err(syntax(
            p.offset(),
            format!("expected `+` or end of input, found {}", p.peek().describe()),
        ));
    }

    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut check = |name: &str, at: usize| -> Result<(), FormulaError> {
        if seen.insert(name.to_string(), at).is_some() {
            return Err(FormulaError::DuplicateTerm {
                name: name.to_string(),
                position: at,
            });
        }
        Ok(())
    };
    for (name, at) in &rhs.terms {
        check(name, *at)?;
    }
    for (_, block) in &rhs.rw {
        for (name, at) in &block.terms {
            check(name, *at)?;
        }
    }

    let mut intercepts = usize::from(rhs.intercept);
    for (_, block) in &rhs.rw {
        if block.intercept {
            intercepts += 1;
            if intercepts > 1 {
                return Err(FormulaError::DoubleIntercept {
                    position: block.intercept_pos,
                });
            }
        }
    }

    let mut ast = FormulaAst {
        response,
        intercept_fixed: rhs.intercept,
        fixed_terms: rhs.terms.into_iter().map(|(n, _)| n).collect(),
        rw1_blocks: Vec::new(),
        rw2_blocks: Vec::new(),
    };
    for (kind, block) in rhs.rw {
        let rw = RwBlock {
            intercept: block.intercept,
            terms: block.terms.into_iter().map(|(n, _)| n).collect(),
            beta_prior: block.beta,
            sigma_prior: block.sigma,
            nu_prior: if kind == RwKind::Rw2 { block.nu } else { DEFAULT_PRIOR },
        };
        match kind {
            RwKind::Rw1 => ast.rw1_blocks.push(rw),
            RwKind::Rw2 => ast.rw2_blocks.push(rw),
        }
    }
    Ok(ast)
}

fn write_block(f: &mut fmt::Formatter<'_>, name: &str, b: &RwBlock, nu: bool) -> fmt::Result {
    write!(f, " + {name}(~ {}", if b.intercept { "1" } else { "0" })?;
    for t in &b.terms {
        write!(f, " + {t}")?;
    }
    write!(
        f,
        ", beta = c({}, {}), sigma = c({}, {})",
        b.beta_prior.mean, b.beta_prior.sd, b.sigma_prior.mean, b.sigma_prior.sd
    )?;
    if nu {
        write!(f, ", nu = c({}, {})", b.nu_prior.mean, b.nu_prior.sd)?;
    }
    write!(f, ")")
}

/// Canonical form: explicit `0`/`1` intercepts and every prior spelled out.
/// Re-parsing the output yields an identical AST.
impl fmt::Display for FormulaAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ~ {}",
            self.response,
            if self.intercept_fixed { "1" } else { "0" }
        )?;
        for t in &self.fixed_terms {
            write!(f, " + {t}")?;
        }
        for b in &self.rw1_blocks {
            write_block(f, "rw1", b, false)?;
        }
        for b in &self.rw2_blocks {
            write_block(f, "rw2", b, true)?;
        }
        Ok(())
    }
}
