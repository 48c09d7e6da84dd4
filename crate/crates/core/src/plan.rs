//! The sub-task plan language exchanged between planners and the controller.
//!
//! ```text
//! plan     = approach | move_to | done ;
//! approach = "move" "your" "arm" "close" "to" "the" block [ "." ] ;
//! move_to  = "move" "the" block "to" "position" "(" coord "," coord ")" [ "." ] ;
//! done     = "done" [ "." ] ;
//! block    = color shape ;
//! color    = "red" | "blue" | "green" | "yellow" ;
//! shape    = "cube" | "moon" | "pentagon" | "star" ;
//! coord    = digit { digit } "." digit [ digit [ digit ] ] ;   (* value in [0, 1] *)
//! ```
//!
//! Keywords are case-insensitive and tokens may be separated by any amount
//! of whitespace.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{BlockId, Color, Pose2D, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanAst {
    Approach { block: BlockId },
    MoveTo { block: BlockId, target: Pose2D },
    Done,
}

impl PlanAst {
    pub fn block(&self) -> Option<BlockId> {
        match *self {
            PlanAst::Approach { block } | PlanAst::MoveTo { block, .. } => Some(block),
            PlanAst::Done => None,
        }
    }
}

impl fmt::Display for PlanAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_plan(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("plan parse error at byte {position}: expected {expected}")]
pub struct ParseError {
    pub position: usize,
    pub expected: String,
}

/// Canonical surface form; coordinates are printed with two decimals.
pub fn render_plan(p: &PlanAst) -> String {
    match p {
        PlanAst::Approach { block } => format!("move your arm close to the {block}"),
        PlanAst::MoveTo { block, target } => format!(
            "move the {block} to position ({:.2}, {:.2})",
            target.x, target.y
        ),
        PlanAst::Done => "done".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Word(&'a str),
    Number(f64),
    LParen,
    RParen,
    Comma,
    Period,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Next token and its starting byte offset, or `None` at end of input.
    fn next(&mut self) -> Result<Option<(usize, Tok<'a>)>, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let Some(c) = rest.chars().next() else {
            return Ok(None);
        };
        let single = |t| Some((start, t));
        let tok = match c {
            '(' => single(Tok::LParen),
            ')' => single(Tok::RParen),
            ',' => single(Tok::Comma),
            '.' => single(Tok::Period),
            c if c.is_ascii_alphabetic() => {
                let len = rest
                    .find(|ch: char| !ch.is_ascii_alphabetic())
                    .unwrap_or(rest.len());
                self.pos += len;
                return Ok(Some((start, Tok::Word(&rest[..len]))));
            }
            c if c.is_ascii_digit() => {
                let int_len = rest.find(|ch: char| !ch.is_ascii_digit()).unwrap_or(rest.len());
                let after = &rest[int_len..];
                if !after.starts_with('.') {
                    return Err(ParseError {
                        position: start + int_len,
                        expected: "decimal point in coordinate".into(),
                    });
                }
                let frac = &after[1..];
                let frac_len = frac.find(|ch: char| !ch.is_ascii_digit()).unwrap_or(frac.len());
                if !(1..=3).contains(&frac_len) {
                    return Err(ParseError {
                        position: start + int_len + 1,
                        expected: "1 to 3 decimal places".into(),
                    });
                }
                let len = int_len + 1 + frac_len;
                let value: f64 = rest[..len].parse().map_err(|_| ParseError {
                    position: start,
                    expected: "coordinate".into(),
                })?;
                self.pos += len;
                return Ok(Some((start, Tok::Number(value))));
            }
            _ => {
                return Err(ParseError {
                    position: start,
                    expected: "word, number or punctuation".into(),
                })
            }
        };
        self.pos += c.len_utf8();
        Ok(tok)
    }
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    idx: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok<'a>> {
        self.toks.get(self.idx).map(|t| &t.1)
    }

    fn position(&self) -> usize {
        self.toks.get(self.idx).map_or(self.end, |t| t.0)
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(ParseError {
            position: self.position(),
            expected: expected.to_string(),
        })
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw) => {
                self.idx += 1;
                Ok(())
            }
            _ => self.fail(&format!("`{kw}`")),
        }
    }

    fn punct(&mut self, tok: Tok<'static>, name: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.idx += 1;
            Ok(())
        } else {
            self.fail(name)
        }
    }

    fn word<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, ParseError> {
        if let Some(Tok::Word(w)) = self.peek() {
            if let Ok(v) = w.parse() {
                self.idx += 1;
                return Ok(v);
            }
        }
        self.fail(what)
    }

    fn block(&mut self) -> Result<BlockId, ParseError> {
        let color: Color = self.word("a color (red, blue, green, yellow)")?;
        let shape: Shape = self.word("a shape (cube, moon, pentagon, star)")?;
        Ok(BlockId::new(color, shape))
    }

    fn coord(&mut self) -> Result<f64, ParseError> {
        match self.peek() {
            Some(&Tok::Number(v)) if (0.0..=1.0).contains(&v) => {
                self.idx += 1;
                Ok(v)
            }
            Some(Tok::Number(_)) => self.fail("coordinate in [0, 1]"),
            _ => self.fail("coordinate"),
        }
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        if self.peek() == Some(&Tok::Period) {
            self.idx += 1;
        }
        if self.idx == self.toks.len() {
            Ok(())
        } else {
            self.fail("end of plan")
        }
    }

    fn plan(&mut self) -> Result<PlanAst, ParseError> {
        match self.peek() {
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("done") => {
                self.idx += 1;
                self.finish()?;
                return Ok(PlanAst::Done);
            }
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("move") => self.idx += 1,
            _ => return self.fail("`move` or `done`"),
        }
        match self.peek() {
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("your") => {
                self.idx += 1;
                for kw in ["arm", "close", "to", "the"] {
                    self.keyword(kw)?;
                }
                let block = self.block()?;
                self.finish()?;
                Ok(PlanAst::Approach { block })
            }
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("the") => {
                self.idx += 1;
                let block = self.block()?;
                self.keyword("to")?;
                self.keyword("position")?;
                self.punct(Tok::LParen, "`(`")?;
                let x = self.coord()?;
                self.punct(Tok::Comma, "`,`")?;
                let y = self.coord()?;
                self.punct(Tok::RParen, "`)`")?;
                self.finish()?;
                Ok(PlanAst::MoveTo {
                    block,
                    target: Pose2D::new(x, y),
                })
            }
            _ => self.fail("`your` or `the`"),
        }
    }
}

/// Parses one plan. Errors carry the byte offset of the offending token.
pub fn parse_plan(text: &str) -> Result<PlanAst, ParseError> {
    let mut lexer = Lexer { src: text, pos: 0 };
    let mut toks = Vec::new();
    while let Some(t) = lexer.next()? {
        toks.push(t);
    }
    let mut parser = Parser {
        toks,
        idx: 0,
        end: text.len(),
    };
    parser.plan()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(c: Color, s: Shape) -> BlockId {
        BlockId::new(c, s)
    }

    #[test]
    fn quoted_plans() {
        assert_eq!(
            parse_plan("Move your arm close to the yellow pentagon."),
            Ok(PlanAst::Approach {
                block: id(Color::Yellow, Shape::Pentagon)
            })
        );
        assert_eq!(
            parse_plan("move the red moon to position (0.76, 0.17)"),
            Ok(PlanAst::MoveTo {
                block: id(Color::Red, Shape::Moon),
                target: Pose2D::new(0.76, 0.17)
            })
        );
    }

    #[test]
    fn rejects_unknown_forms() {
        let err = parse_plan("push the table northwards").unwrap_err();
        assert_eq!(err.position, 0);
        let err = parse_plan("move the purple moon to position (0.1, 0.2)").unwrap_err();
        assert_eq!(err.position, 9);
        assert!(parse_plan("").is_err());
        assert!(parse_plan("done done").is_err());
    }

    #[test]
    fn coordinate_rules() {
        assert!(parse_plan("move the red moon to position (0.9, 0.125)").is_ok());
        let e = parse_plan("move the red moon to position (1, 0.5)").unwrap_err();
        assert_eq!(e.expected, "decimal point in coordinate");
        let e = parse_plan("move the red moon to position (0.1234, 0.5)").unwrap_err();
        assert_eq!(e.expected, "1 to 3 decimal places");
        let e = parse_plan("move the red moon to position (1.50, 0.5)").unwrap_err();
        assert_eq!(e.expected, "coordinate in [0, 1]");
        assert_eq!(e.position, 31);
    }

    #[test]
    fn normalization() {
        let expect = PlanAst::Approach {
            block: id(Color::Blue, Shape::Cube),
        };
        for s in [
            "move your arm close to the blue cube",
            "Move your arm close to the blue cube",
            "MOVE YOUR ARM CLOSE TO THE BLUE CUBE.",
            "  move   your arm\tclose to the blue cube \n",
        ] {
            assert_eq!(parse_plan(s), Ok(expect), "{s:?}");
        }
        assert_eq!(parse_plan(" Done. "), Ok(PlanAst::Done));
        assert_eq!(
            parse_plan("move the green star to position(0.10,0.90)"),
            Ok(PlanAst::MoveTo {
                block: id(Color::Green, Shape::Star),
                target: Pose2D::new(0.1, 0.9)
            })
        );
    }

    #[test]
    fn render_forms() {
        assert_eq!(
            render_plan(&PlanAst::Approach {
                block: id(Color::Yellow, Shape::Pentagon)
            }),
            "move your arm close to the yellow pentagon"
        );
        assert_eq!(
            render_plan(&PlanAst::MoveTo {
                block: id(Color::Red, Shape::Moon),
                target: Pose2D::new(0.76, 0.17)
            }),
            "move the red moon to position (0.76, 0.17)"
        );
        assert_eq!(render_plan(&PlanAst::Done), "done");
    }

    #[test]
    fn non_ascii_input_does_not_panic() {
        for s in ["mové", "move the red moon to position (0.5\u{0301}, 0.5)", "é", "\u{FEFF}done"] {
            let _ = parse_plan(s);
        }
    }
}
