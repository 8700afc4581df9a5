//! Interleaved sequence grammar.
//!
//! ```text
//! sequence     := (text | obj_span | loc_group | scene | goal_span | action_chunk)*
//! obj_span     := <obj> text </obj> loc×6
//! loc_group    := loc×6
//! scene        := <scene></scene>
//! goal_span    := <image> inner </image> | <pcd> inner </pcd>     (no nested goal spans)
//! action_chunk := step (<ACT_SEP> step)*
//! step         := aloc×3 arot×3 gripper
//! ```
//!
//! Object names render padded by one space on each side (`<obj> apple </obj>`);
//! the parser strips exactly that padding.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codec::{steps_to_tokens, StepBins};
use super::vocab::{lex, join, Family, Special, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Pcd,
}

impl Modality {
    pub fn open(self) -> Special {
        match self {
            Modality::Image => Special::ImageOpen,
            Modality::Pcd => Special::PcdOpen,
        }
    }

    pub fn close(self) -> Special {
        match self {
            Modality::Image => Special::ImageClose,
            Modality::Pcd => Special::PcdClose,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Pcd => "pcd",
        }
    }
}

/// Parsed structure of a token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqNode {
    Text(String),
    Obj { name: String, bins: [u8; 6] },
    /// A bare six-token box, e.g. a localization answer.
    Location([u8; 6]),
    Scene,
    Goal { modality: Modality, children: Vec<SeqNode> },
    Actions(Vec<StepBins>),
}

impl SeqNode {
    pub fn text(s: impl Into<String>) -> Self {
        SeqNode::Text(s.into())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SeqNode::Text(_) => "text",
            SeqNode::Obj { .. } => "obj",
            SeqNode::Location(_) => "location",
            SeqNode::Scene => "scene",
            SeqNode::Goal { .. } => "goal",
            SeqNode::Actions(_) => "actions",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("loc arity {found} ≠ 6")]
    LocArity { found: usize },
    #[error("mismatched goal-span closer")]
    MismatchedGoalCloser,
    #[error("nested goal span")]
    NestedGoalSpan,
    #[error("unclosed goal span")]
    UnclosedGoalSpan,
    #[error("unexpected closer {0}")]
    UnexpectedCloser(String),
    #[error("unclosed object span")]
    UnclosedObjSpan,
    #[error("object span needs a non-empty name")]
    EmptyObjName,
    #[error("scene placeholder must be empty")]
    SceneNotEmpty,
    #[error("expected {expected} token, found {found}")]
    WrongFamily { expected: Family, found: String },
    #[error("<ACT_SEP> outside an action chunk")]
    DanglingActSep,
    #[error("action chunk has no steps")]
    EmptyActionChunk,
    #[error("unexpected token {0}")]
    Unexpected(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at index {index}")]
pub struct ParseError {
    /// Position in the token sequence; equals its length for end-of-input errors.
    pub index: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    pub fn new(index: usize, kind: ParseErrorKind) -> Self {
        Self { index, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("text node is empty")]
    EmptyText,
    #[error("text node contains an interaction token: {0:?}")]
    ReservedText(String),
    #[error("adjacent text nodes must be merged")]
    AdjacentText,
    #[error("object name {0:?} must be non-empty without surrounding whitespace")]
    BadObjName(String),
    #[error("goal spans cannot nest")]
    NestedGoal,
    #[error("action chunk has no steps")]
    EmptyActions,
    #[error("gripper bin {0} ∉ {{0,1}}")]
    BadGripper(u8),
}

/// Serializes an AST into tokens.
pub fn render(nodes: &[SeqNode]) -> Result<Vec<Token>, RenderError> {
    let mut out = Vec::new();
    render_into(nodes, false, &mut out)?;
    Ok(out)
}

/// [`render`] followed by [`join`].
pub fn render_string(nodes: &[SeqNode]) -> Result<String, RenderError> {
    Ok(join(&render(nodes)?))
}

fn check_text(s: &str) -> Result<(), RenderError> {
    if s.is_empty() {
        return Err(RenderError::EmptyText);
    }
    if lex(s).iter().any(|t| matches!(t, Token::Special(_))) {
        return Err(RenderError::ReservedText(s.to_string()));
    }
    Ok(())
}

fn render_into(nodes: &[SeqNode], in_goal: bool, out: &mut Vec<Token>) -> Result<(), RenderError> {
    let mut prev_text = false;
    for node in nodes {
        let is_text = matches!(node, SeqNode::Text(_));
        if is_text && prev_text {
            return Err(RenderError::AdjacentText);
        }
        prev_text = is_text;
        match node {
            SeqNode::Text(s) => {
                check_text(s)?;
                out.push(Token::Text(s.clone()));
            }
            SeqNode::Obj { name, bins } => {
                if name.is_empty() || name.trim() != name {
                    return Err(RenderError::BadObjName(name.clone()));
                }
                check_text(name)?;
                out.push(Special::ObjOpen.into());
                out.push(Token::Text(format!(" {name} ")));
                out.push(Special::ObjClose.into());
                out.extend(bins.iter().map(|b| Token::Special(Special::Loc(*b))));
            }
            SeqNode::Location(bins) => {
                out.extend(bins.iter().map(|b| Token::Special(Special::Loc(*b))));
            }
            SeqNode::Scene => {
                out.push(Special::SceneOpen.into());
                out.push(Special::SceneClose.into());
            }
            SeqNode::Goal { modality, children } => {
                if in_goal {
                    return Err(RenderError::NestedGoal);
                }
                out.push(modality.open().into());
                render_into(children, true, out)?;
                out.push(modality.close().into());
            }
            SeqNode::Actions(steps) => {
                if steps.is_empty() {
                    return Err(RenderError::EmptyActions);
                }
                if let Some(s) = steps.iter().find(|s| s.gripper > 1) {
                    return Err(RenderError::BadGripper(s.gripper));
                }
                out.extend(steps_to_tokens(steps).into_iter().map(Token::Special));
            }
        }
    }
    Ok(())
}

/// Parses a token sequence into its AST.
pub fn parse(tokens: &[Token]) -> Result<Vec<SeqNode>, ParseError> {
    let mut p = Parser::new(tokens);
    p.sequence(None)
}

/// Lexes then parses canonical token text.
pub fn parse_str(s: &str) -> Result<Vec<SeqNode>, ParseError> {
    parse(&lex(s))
}

pub(crate) struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Parser<'a> {
    pub(crate) fn new(tokens: &'a [Token]) -> Self {
        Self { tokens, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_special(&self) -> Option<Special> {
        self.peek().and_then(Token::special)
    }

    fn err<T>(&self, kind: ParseErrorKind) -> Result<T, ParseError> {
        Err(ParseError::new(self.pos, kind))
    }

    fn describe(&self) -> String {
        match self.peek() {
            Some(t) => t.as_text().into_owned(),
            None => "end of input".to_string(),
        }
    }

    fn sequence(&mut self, goal: Option<(Modality, usize)>) -> Result<Vec<SeqNode>, ParseError> {
        let mut nodes: Vec<SeqNode> = Vec::new();
        loop {
            let Some(tok) = self.peek() else {
                return match goal {
                    Some((_, open)) => Err(ParseError::new(open, ParseErrorKind::UnclosedGoalSpan)),
                    None => Ok(nodes),
                };
            };
            let sp = match tok {
                Token::Text(s) => {
                    self.pos += 1;
                    if s.is_empty() {
                        continue;
                    }
                    match nodes.last_mut() {
                        Some(SeqNode::Text(prev)) => prev.push_str(s),
                        _ => nodes.push(SeqNode::Text(s.clone())),
                    }
                    continue;
                }
                Token::Special(sp) => *sp,
            };
            match sp {
                Special::ObjOpen => nodes.push(self.obj_span()?),
                Special::SceneOpen => {
                    self.pos += 1;
                    if self.peek_special() != Some(Special::SceneClose) {
                        return self.err(ParseErrorKind::SceneNotEmpty);
                    }
                    self.pos += 1;
                    nodes.push(SeqNode::Scene);
                }
                Special::ImageOpen | Special::PcdOpen => {
                    if goal.is_some() {
                        return self.err(ParseErrorKind::NestedGoalSpan);
                    }
                    let modality = if sp == Special::ImageOpen {
                        Modality::Image
                    } else {
                        Modality::Pcd
                    };
                    let open = self.pos;
                    self.pos += 1;
                    let children = self.sequence(Some((modality, open)))?;
                    nodes.push(SeqNode::Goal { modality, children });
                }
                Special::ImageClose | Special::PcdClose => match goal {
                    Some((m, _)) if m.close() == sp => {
                        self.pos += 1;
                        return Ok(nodes);
                    }
                    Some(_) => return self.err(ParseErrorKind::MismatchedGoalCloser),
                    None => return self.err(ParseErrorKind::UnexpectedCloser(sp.text())),
                },
                Special::ObjClose | Special::SceneClose => {
                    return self.err(ParseErrorKind::UnexpectedCloser(sp.text()))
                }
                Special::ActSep => return self.err(ParseErrorKind::DanglingActSep),
                Special::Loc(_) => {
                    let bins = self.loc_group()?;
                    nodes.push(SeqNode::Location(bins));
                }
                Special::Aloc(_) => nodes.push(SeqNode::Actions(self.action_chunk()?)),
                Special::Arot(_) | Special::Gripper(_) => {
                    return self.err(ParseErrorKind::WrongFamily {
                        expected: Family::Aloc,
                        found: sp.text(),
                    })
                }
            }
        }
    }

    /// Reads exactly six `<loc>` tokens; reports the run length otherwise.
    fn loc_group(&mut self) -> Result<[u8; 6], ParseError> {
        let start = self.pos;
        let mut bins = [0u8; 6];
        let mut n = 0;
        while n < 6 {
            match self.peek_special() {
                Some(Special::Loc(b)) => {
                    bins[n] = b;
                    n += 1;
                    self.pos += 1;
                }
                _ => break,
            }
        }
        if n < 6 {
            return Err(ParseError::new(start, ParseErrorKind::LocArity { found: n }));
        }
        Ok(bins)
    }

    fn obj_span(&mut self) -> Result<SeqNode, ParseError> {
        let open = self.pos;
        self.pos += 1;
        let mut name = String::new();
        while let Some(Token::Text(s)) = self.peek() {
            name.push_str(s);
            self.pos += 1;
        }
        match self.peek_special() {
            Some(Special::ObjClose) => {}
            None if self.peek().is_none() => {
                return Err(ParseError::new(open, ParseErrorKind::UnclosedObjSpan))
            }
            _ => return self.err(ParseErrorKind::Unexpected(self.describe())),
        }
        let stripped = name.strip_prefix(' ').unwrap_or(&name);
        let stripped = stripped.strip_suffix(' ').unwrap_or(stripped);
        if stripped.trim().is_empty() {
            return Err(ParseError::new(open, ParseErrorKind::EmptyObjName));
        }
        let name = stripped.to_string();
        self.pos += 1;
        let bins = self.loc_group()?;
        Ok(SeqNode::Obj { name, bins })
    }

    fn expect_bin(&mut self, family: Family) -> Result<u8, ParseError> {
        let got = self.peek_special();
        let bin = match (family, got) {
            (Family::Aloc, Some(Special::Aloc(b)))
            | (Family::Arot, Some(Special::Arot(b)))
            | (Family::Gripper, Some(Special::Gripper(b))) => b,
            _ => {
                return self.err(ParseErrorKind::WrongFamily {
                    expected: family,
                    found: self.describe(),
                })
            }
        };
        self.pos += 1;
        Ok(bin)
    }

    fn step(&mut self) -> Result<StepBins, ParseError> {
        let mut aloc = [0u8; 3];
        let mut arot = [0u8; 3];
        for b in &mut aloc {
            *b = self.expect_bin(Family::Aloc)?;
        }
        for b in &mut arot {
            *b = self.expect_bin(Family::Arot)?;
        }
        let gripper = self.expect_bin(Family::Gripper)?;
        Ok(StepBins { aloc, arot, gripper })
    }

    pub(crate) fn action_chunk(&mut self) -> Result<Vec<StepBins>, ParseError> {
        let mut steps = vec![self.step()?];
        while self.peek_special() == Some(Special::ActSep) {
            self.pos += 1;
            steps.push(self.step()?);
        }
        Ok(steps)
    }
}

impl fmt::Display for SeqNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match render(std::slice::from_ref(self)) {
            Ok(toks) => f.write_str(&join(&toks)),
            Err(e) => write!(f, "<invalid: {e}>"),
        }
    }
}
