//! Infix rendering and parsing of template expressions.
//!
//! `+ - × ÷` are binary with the usual precedence, `÷` being the analytic
//! quotient; `2.718^x` is the exponential and `logP(x)` the protected log.

use thiserror::Error;

use super::{ExprTree, ScaledExpr, Symbol, LEAF_START, SLOTS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unexpected character {0:?} at {1}")]
    Char(char, usize),
    #[error("unexpected {0} at token {1}")]
    Token(String, usize),
    #[error("unknown feature {0:?}")]
    Feature(String),
    #[error("expression does not fit the height-2 template")]
    TooDeep,
    #[error("unexpected end of expression")]
    End,
}

const E_BASE: &str = "2.718";

fn prec(sym: Symbol) -> u8 {
    match sym {
        Symbol::Add | Symbol::Sub => 1,
        Symbol::Mul | Symbol::Aq => 2,
        _ => 3,
    }
}

struct Renderer<'a> {
    tree: &'a ExprTree,
    names: &'a [String],
    exact: bool,
}

impl Renderer<'_> {
    fn constant(&self, c: f64) -> String {
        if self.exact {
            format!("{c:?}")
        } else {
            format!("{c:.3}")
        }
    }

    fn slot(&self, s: usize) -> String {
        let sym = self.tree.slots[s];
        let child = |k: usize| 2 * s + k;
        let wrap = |k: usize, paren: bool| {
            let inner = self.slot(child(k));
            if paren {
                format!("({inner})")
            } else {
                inner
            }
        };
        let cprec = |k: usize| prec(self.tree.slots[child(k)]);
        match sym {
            Symbol::Var(i) => self.names.get(i).cloned().unwrap_or_else(|| format!("x{i}")),
            Symbol::Const(c) => self.constant(c),
            Symbol::Exp => {
                let arg = self.tree.slots[child(1)];
                let atomic = prec(arg) == 3 && !matches!(arg, Symbol::Const(c) if c.is_sign_negative());
                format!("{E_BASE}^{}", wrap(1, !atomic))
            }
            Symbol::Log => format!("logP({})", self.slot(child(1))),
            Symbol::Add | Symbol::Sub | Symbol::Mul | Symbol::Aq => {
                let p = prec(sym);
                let op = match sym {
                    Symbol::Add => "+",
                    Symbol::Sub => "-",
                    Symbol::Mul => "×",
                    _ => "÷",
                };
                // Display form drops parentheses of right-nested + and ×.
                let assoc = !self.exact && matches!(sym, Symbol::Add | Symbol::Mul) && self.tree.slots[child(2)] == sym;
                format!("{} {op} {}", wrap(1, cprec(1) < p), wrap(2, cprec(2) < p || (cprec(2) == p && !assoc)))
            }
        }
    }
}

/// Infix form with feature abbreviations and constants to 3 decimals; inert
/// slots are omitted.
pub fn expr_to_string(tree: &ExprTree, names: &[String]) -> String {
    Renderer { tree, names, exact: false }.slot(0)
}

/// Infix form whose constants round-trip exactly through [`parse_expr`].
pub fn expr_to_string_exact(tree: &ExprTree, names: &[String]) -> String {
    Renderer { tree, names, exact: true }.slot(0)
}

impl ScaledExpr {
    /// `slope × (expr) + intercept`, to 3 decimals; a zero intercept is dropped.
    pub fn render(&self, names: &[String]) -> String {
        let body = expr_to_string(&self.tree, names);
        let body = if prec(self.tree.slots[0]) < 2 { format!("({body})") } else { body };
        let mut out = format!("{:.3} × {body}", self.slope);
        let b = format!("{:.3}", self.intercept.abs());
        if b != "0.000" {
            out.push_str(if self.intercept < 0.0 { " - " } else { " + " });
            out.push_str(&b);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, String),
    Ident(String),
    Op(char),
}

fn tokenize(s: &str) -> Result<Vec<Tok>, ParseError> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                i += 1;
                if i < chars.len() && (chars[i] == '-' || chars[i] == '+') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse().map_err(|_| ParseError::Char(c, start))?;
            out.push(Tok::Num(v, text));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            let op = match c {
                '*' => '×',
                '/' => '÷',
                '+' | '-' | '×' | '÷' | '^' | '(' | ')' => c,
                _ => return Err(ParseError::Char(c, i)),
            };
            out.push(Tok::Op(op));
            i += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Ast {
    Leaf(Symbol),
    Node(Symbol, Vec<Ast>),
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    names: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn unexpected(&self) -> ParseError {
        match self.peek() {
            Some(t) => ParseError::Token(format!("{t:?}"), self.pos),
            None => ParseError::End,
        }
    }

    fn expect(&mut self, op: char) -> Result<(), ParseError> {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn expr(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            let sym = if op == '+' { Symbol::Add } else { Symbol::Sub };
            lhs = Ast::Node(sym, vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('×' | '÷'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            let sym = if op == '×' { Symbol::Mul } else { Symbol::Aq };
            lhs = Ast::Node(sym, vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Ast, ParseError> {
        if self.peek() == Some(&Tok::Op('-')) {
            self.pos += 1;
            return match self.peek().cloned() {
                Some(Tok::Num(v, _)) => {
                    self.pos += 1;
                    Ok(Ast::Leaf(Symbol::Const(-v)))
                }
                _ => Err(self.unexpected()),
            };
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast, ParseError> {
        if let Some(Tok::Num(_, text)) = self.peek().cloned() {
            if self.toks.get(self.pos + 1) == Some(&Tok::Op('^')) {
                if text != E_BASE {
                    return Err(ParseError::Token(text, self.pos));
                }
                self.pos += 2;
                let arg = self.unary()?;
                return Ok(Ast::Node(Symbol::Exp, vec![arg]));
            }
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Ast, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Num(v, _)) => {
                self.pos += 1;
                Ok(Ast::Leaf(Symbol::Const(v)))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if name == "logP" {
                    self.expect('(')?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Ast::Node(Symbol::Log, vec![arg]));
                }
                if let Some(i) = self.names.iter().position(|n| *n == name) {
                    return Ok(Ast::Leaf(Symbol::Var(i)));
                }
                match name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    Some(i) => Ok(Ast::Leaf(Symbol::Var(i))),
                    None => Err(ParseError::Feature(name)),
                }
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            _ => Err(self.unexpected()),
        }
    }
}

fn place(ast: &Ast, slot: usize, slots: &mut [Symbol; SLOTS]) -> Result<(), ParseError> {
    if slot >= SLOTS {
        return Err(ParseError::TooDeep);
    }
    match ast {
        Ast::Leaf(sym) => slots[slot] = *sym,
        Ast::Node(sym, args) => {
            if slot >= LEAF_START {
                return Err(ParseError::TooDeep);
            }
            slots[slot] = *sym;
            for (k, a) in args.iter().enumerate() {
                place(a, 2 * slot + 1 + k, slots)?;
            }
        }
    }
    Ok(())
}

/// Parses the infix form back into a template tree; inert slots hold zero
/// constants.
pub fn parse_expr(text: &str, names: &[String]) -> Result<ExprTree, ParseError> {
    let mut p = Parser { toks: tokenize(text)?, pos: 0, names };
    let ast = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.unexpected());
    }
    let mut slots = [Symbol::Const(0.0); SLOTS];
    place(&ast, 0, &mut slots)?;
    Ok(ExprTree { slots })
}
