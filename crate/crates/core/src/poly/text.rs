//! Text form of polynomials.
//!
//! Printing emits `coeff*var^e*...` terms in descending graded-lex order
//! joined by ` + ` / ` - `. Parsing accepts that form and, more generally,
//! any expression built from numbers, identifiers, `+ - * ^` and parentheses.

use thiserror::Error;

use super::Polynomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unexpected character `{0}` at offset {1}")]
    UnexpectedChar(char, usize),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected token at offset {0}")]
    UnexpectedToken(usize),
    #[error("invalid number `{0}`")]
    BadNumber(String),
    #[error("exponent must be a non-negative integer, got `{0}`")]
    BadExponent(String),
}

fn format_coeff(c: f64) -> String {
    // `{}` on f64 prints the shortest string that round-trips
    format!("{c}")
}

pub(super) fn format_polynomial(p: &Polynomial) -> String {
    if p.is_zero() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (k, (m, c)) in p.terms().enumerate() {
        let (sign, mag) = if c < 0.0 { ("-", -c) } else { ("+", c) };
        if k == 0 {
            if sign == "-" {
                out.push('-');
            }
        } else {
            out.push(' ');
            out.push_str(sign);
            out.push(' ');
        }
        let mut factors = Vec::new();
        for (i, &e) in m.exponents().iter().enumerate() {
            match e {
                0 => {}
                1 => factors.push(p.vars()[i].clone()),
                _ => factors.push(format!("{}^{}", p.vars()[i], e)),
            }
        }
        if factors.is_empty() {
            out.push_str(&format_coeff(mag));
        } else if mag == 1.0 {
            out.push_str(&factors.join("*"));
        } else {
            out.push_str(&format_coeff(mag));
            out.push('*');
            out.push_str(&factors.join("*"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    Op(char),
}

fn tokenize(s: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                let save = i;
                i += 1;
                if i < bytes.len() && (bytes[i] == '+' || bytes[i] == '-') {
                    i += 1;
                }
                if i < bytes.len() && bytes[i].is_ascii_digit() {
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            out.push((Tok::Num(bytes[start..i].iter().collect()), start));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_alphanumeric() || bytes[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(bytes[start..i].iter().collect()), start));
        } else if "+-*^()".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else {
            return Err(ParseError::UnexpectedChar(c, i));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(usize::MAX, |(_, o)| *o)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if c == '+' { acc.add_poly(&rhs) } else { acc.sub_poly(&rhs) };
        }
        Ok(acc)
    }

    // term := unary ('*' unary)*
    fn term(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.unary()?;
        while let Some(Tok::Op('*')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = acc.mul_poly(&rhs);
        }
        Ok(acc)
    }

    // unary := ('-' | '+') unary | power
    fn unary(&mut self) -> Result<Polynomial, ParseError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(self.unary()?.scale(-1.0))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // power := atom ('^' integer)?
    fn power(&mut self) -> Result<Polynomial, ParseError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            match self.next() {
                Some(Tok::Num(s)) => {
                    let e: u32 = s.parse().map_err(|_| ParseError::BadExponent(s.clone()))?;
                    Ok(base.pow(e))
                }
                Some(_) => Err(ParseError::UnexpectedToken(self.toks[self.pos - 1].1)),
                None => Err(ParseError::UnexpectedEnd),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Polynomial, ParseError> {
        let off = self.offset();
        match self.next() {
            Some(Tok::Num(s)) => {
                let v: f64 = s.parse().map_err(|_| ParseError::BadNumber(s.clone()))?;
                Ok(Polynomial::constant(v))
            }
            Some(Tok::Ident(name)) => Ok(Polynomial::var(&name)),
            Some(Tok::Op('(')) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Tok::Op(')')) => Ok(inner),
                    Some(_) => Err(ParseError::UnexpectedToken(self.toks[self.pos - 1].1)),
                    None => Err(ParseError::UnexpectedEnd),
                }
            }
            Some(_) => Err(ParseError::UnexpectedToken(off)),
            None => Err(ParseError::UnexpectedEnd),
        }
    }
}

pub(super) fn parse_polynomial(s: &str) -> Result<Polynomial, ParseError> {
    let toks = tokenize(s)?;
    let mut p = Parser { toks, pos: 0 };
    let out = p.expr()?;
    if p.pos < p.toks.len() {
        return Err(ParseError::UnexpectedToken(p.offset()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prints_in_graded_lex_order() {
        let p: Polynomial = "x*y + 1 + y + x^2 - 2.5*y^3".parse().unwrap();
        assert_eq!(p.to_string(), "-2.5*y^3 + x^2 + x*y + y + 1");
    }

    #[test]
    fn zero_and_constants() {
        assert_eq!(Polynomial::zero().to_string(), "0");
        assert_eq!(Polynomial::constant(-3.0).to_string(), "-3");
        let z: Polynomial = "0".parse().unwrap();
        assert!(z.is_zero());
    }

    #[test]
    fn parses_expressions() {
        let p: Polynomial = "-(beta + 1)*h".parse().unwrap();
        let q: Polynomial = "-beta*h - h".parse().unwrap();
        assert_eq!(p, q);
        let r: Polynomial = "(x+1)^3".parse().unwrap();
        assert_eq!(r.coefficient(&[("x", 2)]), 3.0);
        let s: Polynomial = "1e-3*x + 2E2".parse().unwrap();
        assert_eq!(s.coefficient(&[("x", 1)]), 1e-3);
        assert_eq!(s.constant_term(), 200.0);
    }

    #[test]
    fn rejects_malformed_text() {
        assert!("x +".parse::<Polynomial>().is_err());
        assert!("x ^ y".parse::<Polynomial>().is_err());
        assert!("x $ 2".parse::<Polynomial>().is_err());
        assert!("(x + 1".parse::<Polynomial>().is_err());
        assert!("x y".parse::<Polynomial>().is_err());
    }

    #[test]
    fn awkward_coefficients_round_trip() {
        for c in [0.1, 1.0 / 3.0, 1e-12, 123456.789, 2.0f64.sqrt()] {
            let p = Polynomial::var("t").scale(c).add_poly(&Polynomial::constant(-c));
            let back: Polynomial = p.to_string().parse().unwrap();
            assert_eq!(back, p, "{}", p);
        }
    }
}
