//! Nested MIN / MAX / MED expressions over single digits.
//!
//! `[MAX 2 9 [MIN 4 7 ] 0 ]` is written as the token sequence
//! `MAX 2 9 MIN 4 7 ] 0 ]`: an operator token opens a list and `]` closes it.
//! MED is the lower median of the sorted arguments.

use crate::error::{Error, Result};
use crate::gumbel::GumbelRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Min,
    Max,
    Med,
}

impl Op {
    pub fn apply(self, args: &[u8]) -> u8 {
        match self {
            Op::Min => *args.iter().min().expect("non-empty list"),
            Op::Max => *args.iter().max().expect("non-empty list"),
            Op::Med => {
                let mut s = args.to_vec();
                s.sort_unstable();
                s[(s.len() - 1) / 2]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Digit(u8),
    Open(Op),
    Close,
}

/// Digits, three operators and the closing bracket.
pub const VOCAB: usize = 14;

impl Token {
    pub fn id(self) -> usize {
        match self {
            Token::Digit(d) => d as usize,
            Token::Open(Op::Min) => 10,
            Token::Open(Op::Max) => 11,
            Token::Open(Op::Med) => 12,
            Token::Close => 13,
        }
    }

    pub fn render(self) -> String {
        match self {
            Token::Digit(d) => d.to_string(),
            Token::Open(Op::Min) => "[MIN".into(),
            Token::Open(Op::Max) => "[MAX".into(),
            Token::Open(Op::Med) => "[MED".into(),
            Token::Close => "]".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Digit(u8),
    List(Op, Vec<Expr>),
}

impl Expr {
    pub fn eval(&self) -> u8 {
        match self {
            Expr::Digit(d) => *d,
            Expr::List(op, args) => op.apply(&args.iter().map(Expr::eval).collect::<Vec<_>>()),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Digit(_) => 0,
            Expr::List(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::new();
        self.write_tokens(&mut out);
        out
    }

    fn write_tokens(&self, out: &mut Vec<Token>) {
        match self {
            Expr::Digit(d) => out.push(Token::Digit(*d)),
            Expr::List(op, args) => {
                out.push(Token::Open(*op));
                for a in args {
                    a.write_tokens(out);
                }
                out.push(Token::Close);
            }
        }
    }

    /// Random expression with list nesting at most `max_depth` (at least 1).
    pub fn random(rng: &mut GumbelRng, max_depth: usize) -> Expr {
        let op = [Op::Min, Op::Max, Op::Med][rng.below(3)];
        let arity = 2 + rng.below(4);
        let args = (0..arity)
            .map(|_| {
                if max_depth > 1 && rng.bernoulli(0.3) {
                    Expr::random(rng, max_depth - 1)
                } else {
                    Expr::Digit(rng.below(10) as u8)
                }
            })
            .collect();
        Expr::List(op, args)
    }
}

/// Parses a token stream back into an expression.
pub fn parse(tokens: &[Token]) -> Result<Expr> {
    fn go(tokens: &[Token], pos: &mut usize) -> Result<Expr> {
        let bad = |m: &str| Error::Config(format!("listops: {m}"));
        match tokens.get(*pos) {
            Some(Token::Digit(d)) => {
                *pos += 1;
                Ok(Expr::Digit(*d))
            }
            Some(Token::Open(op)) => {
                *pos += 1;
                let mut args = Vec::new();
                while tokens.get(*pos) != Some(&Token::Close) {
                    if *pos >= tokens.len() {
                        return Err(bad("unclosed list"));
                    }
                    args.push(go(tokens, pos)?);
                }
                *pos += 1;
                if args.is_empty() {
                    return Err(bad("empty list"));
                }
                Ok(Expr::List(*op, args))
            }
            Some(Token::Close) => Err(bad("unexpected ]")),
            None => Err(bad("unexpected end")),
        }
    }
    let mut pos = 0;
    let e = go(tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(Error::Config("listops: trailing tokens".into()));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operators() {
        assert_eq!(Op::Min.apply(&[4, 2, 9]), 2);
        assert_eq!(Op::Max.apply(&[4, 2, 9]), 9);
        assert_eq!(Op::Med.apply(&[4, 2, 9]), 4);
        assert_eq!(Op::Med.apply(&[4, 2, 9, 7]), 4);
    }

    #[test]
    fn nested_example() {
        let e = Expr::List(
            Op::Max,
            vec![
                Expr::Digit(2),
                Expr::Digit(9),
                Expr::List(Op::Min, vec![Expr::Digit(4), Expr::Digit(7)]),
                Expr::Digit(0),
            ],
        );
        assert_eq!(e.eval(), 9);
        let rendered: Vec<String> = e.tokens().iter().map(|t| t.render()).collect();
        assert_eq!(rendered.join(" "), "[MAX 2 9 [MIN 4 7 ] 0 ]");
        assert_eq!(parse(&e.tokens()).unwrap(), e);
    }

    #[test]
    fn random_depth_bounded() {
        let mut rng = GumbelRng::new(4);
        for _ in 0..200 {
            let e = Expr::random(&mut rng, 3);
            assert!((1..=3).contains(&e.depth()));
            assert_eq!(parse(&e.tokens()).unwrap(), e);
        }
    }

    #[test]
    fn malformed_rejected() {
        assert!(parse(&[Token::Open(Op::Min), Token::Digit(1)]).is_err());
        assert!(parse(&[Token::Open(Op::Min), Token::Close]).is_err());
        assert!(parse(&[Token::Digit(1), Token::Digit(2)]).is_err());
    }
}
