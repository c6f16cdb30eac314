//! A small arithmetic grammar over the half-space variables, used to
//! describe coefficient entries in configs: numbers, `t`, `x1`..`x3` (and
//! `x` as an alias for `x1`), the imaginary unit `i`, `pi`, parentheses,
//! `+ - * / ^`, and the functions sin, cos, tan, tanh, exp, log, sqrt, abs.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(Complex64),
    T,
    X(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser {
            chars: src.chars().collect(),
            pos: 0,
            src,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(Error::ExprParse(format!(
                "trailing input at byte {} in `{}`",
                p.pos, src
            )));
        }
        Ok(e)
    }

    /// Evaluate at transverse coordinate `t` and boundary point `x`.
    pub fn eval(&self, t: f64, x: &[f64]) -> Complex64 {
        match self {
            Expr::Const(c) => *c,
            Expr::T => Complex64::new(t, 0.0),
            Expr::X(j) => Complex64::new(x.get(*j).copied().unwrap_or(0.0), 0.0),
            Expr::Neg(e) => -e.eval(t, x),
            Expr::Add(a, b) => a.eval(t, x) + b.eval(t, x),
            Expr::Sub(a, b) => a.eval(t, x) - b.eval(t, x),
            Expr::Mul(a, b) => a.eval(t, x) * b.eval(t, x),
            Expr::Div(a, b) => a.eval(t, x) / b.eval(t, x),
            Expr::Pow(a, b) => a.eval(t, x).powc(b.eval(t, x)),
            Expr::Call(f, e) => {
                let v = e.eval(t, x);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Tan => v.tan(),
                    Func::Tanh => v.tanh(),
                    Func::Exp => v.exp(),
                    Func::Log => v.ln(),
                    Func::Sqrt => v.sqrt(),
                    Func::Abs => Complex64::new(v.norm(), 0.0),
                }
            }
        }
    }

    /// True when the expression never reads `t`.
    pub fn t_independent(&self) -> bool {
        match self {
            Expr::T => false,
            Expr::Const(_) | Expr::X(_) => true,
            Expr::Neg(e) | Expr::Call(_, e) => e.t_independent(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.t_independent() && b.t_independent(),
        }
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some('-') => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some('*') => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some('/') => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('-') => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Some('+') => {
                self.bump();
                self.factor()
            }
            _ => {
                let base = self.atom()?;
                if self.peek() == Some('^') {
                    self.bump();
                    let exp = self.factor()?;
                    Ok(Expr::Pow(Box::new(base), Box::new(exp)))
                } else {
                    Ok(base)
                }
            }
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('(') => {
                self.bump();
                let e = self.expr()?;
                if self.bump() != Some(')') {
                    return Err(Error::ExprParse(format!("missing `)` in `{}`", self.src)));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            other => Err(Error::ExprParse(format!(
                "unexpected {:?} in `{}`",
                other, self.src
            ))),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            if c.is_ascii_digit() || c == '.' {
                self.pos += 1;
            } else if (c == 'e' || c == 'E')
                && self.pos > start
                && self
                    .chars
                    .get(self.pos + 1)
                    .is_some_and(|d| d.is_ascii_digit() || *d == '-' || *d == '+')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        let v: f64 = text
            .parse()
            .map_err(|_| Error::ExprParse(format!("bad number `{text}`")))?;
        Ok(Expr::Const(Complex64::new(v, 0.0)))
    }

    fn ident(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len()
            && (self.chars[self.pos].is_ascii_alphanumeric() || self.chars[self.pos] == '_')
        {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        let func = match name.as_str() {
            "t" => return Ok(Expr::T),
            "x" | "x1" => return Ok(Expr::X(0)),
            "x2" => return Ok(Expr::X(1)),
            "x3" => return Ok(Expr::X(2)),
            "i" => return Ok(Expr::Const(Complex64::new(0.0, 1.0))),
            "pi" => return Ok(Expr::Const(Complex64::new(std::f64::consts::PI, 0.0))),
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return Err(Error::ExprParse(format!("unknown identifier `{name}`"))),
        };
        if self.bump() != Some('(') {
            return Err(Error::ExprParse(format!("expected `(` after `{name}`")));
        }
        let arg = self.expr()?;
        if self.bump() != Some(')') {
            return Err(Error::ExprParse(format!("missing `)` after `{name}(..`")));
        }
        Ok(Expr::Call(func, Box::new(arg)))
    }
}
