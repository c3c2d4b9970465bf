//! Infix expression parser.
//!
//! ```text
//! expr  = term (('+' | '-') term)*
//! term  = unary (('*' | '/') unary)*
//! unary = '-' unary | '+' unary | power
//! power = atom ('^' unary)?
//! atom  = number | ident | ident '(' args ')' | '(' expr ')'
//! ```
//!
//! `**` is accepted as a synonym for `^`. Decimal literals become exact
//! rationals.

use num_bigint::BigInt;
use num_rational::BigRational;

use super::expr::{Expr, UnaryOp};
use crate::error::ParseError;

pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { src, toks: lex(src)?, pos: 0 };
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(p.err_at(t.col, format!("unexpected `{}`", t.text(src))));
    }
    Ok(e)
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Num,
    Ident,
    Op(char),
}

#[derive(Clone, Debug)]
struct Tok {
    kind: Kind,
    col: usize,
    end: usize,
}

impl Tok {
    fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.col..self.end]
    }
}

fn lex(src: &str) -> Result<Vec<Tok>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            out.push(Tok { kind: Kind::Num, col: start, end: i });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Tok { kind: Kind::Ident, col: start, end: i });
        } else if c == '*' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            out.push(Tok { kind: Kind::Op('^'), col: start, end: i });
        } else if "+-*/^(),".contains(c) {
            i += 1;
            out.push(Tok { kind: Kind::Op(c), col: start, end: i });
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(ParseError { column: i + 1, message: format!("unexpected character `{ch}`") });
        }
    }
    Ok(out)
}

fn number(text: &str) -> Option<BigRational> {
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(k) => (&text[..k], text[k + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((a, b)) => (a, b),
        None => (mantissa, ""),
    };
    if frac_part.contains('.') {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut value = BigRational::from_integer(digits.parse::<BigInt>().ok()?);
    let shift = exp - frac_part.len() as i32;
    let ten = BigRational::from_integer(BigInt::from(10));
    for _ in 0..shift.unsigned_abs() {
        if shift > 0 {
            value *= &ten;
        } else {
            value /= &ten;
        }
    }
    Some(value)
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Tok { kind: Kind::Op(c), .. }) => Some(*c),
            _ => None,
        }
    }

    fn err_at(&self, byte: usize, message: String) -> ParseError {
        ParseError { column: byte + 1, message }
    }

    fn err_here(&self, message: &str) -> ParseError {
        let col = self.peek().map_or(self.src.len(), |t| t.col);
        self.err_at(col, message.to_string())
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek_op() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err_here(&format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if c == '+' { acc + rhs } else { acc - rhs };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = if c == '*' { acc * rhs } else { acc / rhs };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(base.pow(exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.err_here("unexpected end of expression"));
        };
        self.pos += 1;
        let text = tok.text(self.src);
        match tok.kind {
            Kind::Num => number(text)
                .map(Expr::rational)
                .ok_or_else(|| self.err_at(tok.col, format!("malformed number `{text}`"))),
            Kind::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Kind::Op(c) => Err(self.err_at(tok.col, format!("unexpected `{c}`"))),
            Kind::Ident => {
                if self.peek_op() != Some('(') {
                    return Ok(match text {
                        "pi" => Expr::pi(),
                        _ => Expr::var(text),
                    });
                }
                self.pos += 1;
                let mut args = vec![self.expr()?];
                while self.peek_op() == Some(',') {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(')')?;
                self.call(text, args, tok.col)
            }
        }
    }

    fn call(&self, name: &str, args: Vec<Expr>, col: usize) -> Result<Expr, ParseError> {
        let unary = match name {
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "tan" => Some(UnaryOp::Tan),
            "sqrt" => Some(UnaryOp::Sqrt),
            "exp" => Some(UnaryOp::Exp),
            "log" | "ln" => Some(UnaryOp::Log),
            _ => None,
        };
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(self.err_at(col, format!("`{name}` takes {n} argument(s), got {}", args.len())))
            }
        };
        if let Some(op) = unary {
            arity(1)?;
            return Ok(Expr::unary(op, args[0]));
        }
        match name {
            "atan2" => {
                arity(2)?;
                Ok(args[0].atan2(args[1]))
            }
            "cot" => {
                arity(1)?;
                Ok(args[0].cos() / args[0].sin())
            }
            "sec" => {
                arity(1)?;
                Ok(Expr::one() / args[0].cos())
            }
            "csc" => {
                arity(1)?;
                Ok(Expr::one() / args[0].sin())
            }
            _ => Err(self.err_at(col, format!("unknown function `{name}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_associativity() {
        let e = parse("a + b*c^2").unwrap();
        let (a, b, c) = (Expr::var("a"), Expr::var("b"), Expr::var("c"));
        assert_eq!(e, a + b * c.powi(2));
        assert_eq!(parse("a - b - c").unwrap(), (a - b) - c);
        assert_eq!(parse("a/b/c").unwrap(), (a / b) / c);
        assert_eq!(parse("a^b^c").unwrap(), a.pow(b.pow(c)));
        assert_eq!(parse("-a^2").unwrap(), -(a.powi(2)));
        assert_eq!(parse("a**2").unwrap(), a.powi(2));
    }

    #[test]
    fn decimals_are_exact() {
        assert_eq!(parse("0.25").unwrap(), Expr::ratio(1, 4));
        assert_eq!(parse("1.5e2").unwrap(), Expr::int(150));
        assert_eq!(parse("2e-1").unwrap(), Expr::ratio(1, 5));
    }

    #[test]
    fn functions() {
        let x = Expr::var("x");
        let y = Expr::var("y");
        assert_eq!(parse("atan2(y, x)").unwrap(), y.atan2(x));
        assert_eq!(parse("sin(x)*cos(x)").unwrap(), x.sin() * x.cos());
        assert_eq!(parse("pi - x").unwrap(), Expr::pi() - x);
    }

    #[test]
    fn errors_carry_columns() {
        let e = parse("x + * y").unwrap_err();
        assert_eq!(e.column, 5);
        let e = parse("foo(x)").unwrap_err();
        assert_eq!(e.column, 1);
        let e = parse("(x + y").unwrap_err();
        assert_eq!(e.column, 7);
        let e = parse("x $ y").unwrap_err();
        assert_eq!(e.column, 3);
        assert!(parse("atan2(x)").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn print_parse_roundtrip_samples() {
        for src in [
            "x + -2*y",
            "-(x*y) + x^-1",
            "(x^2)^3 - 3/2*x",
            "sin(x - y)/(x + y)",
            "atan2(-y, x) - pi",
            "x - 5",
            "(-2)^x + x^(1/2)",
            "a*(b/c) - -x",
        ] {
            let e = parse(src).unwrap();
            let printed = e.to_string();
            assert_eq!(parse(&printed).unwrap(), e, "{src} -> {printed}");
        }
    }
}
