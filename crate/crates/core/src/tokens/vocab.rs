//! The interaction-token vocabulary and the text lexer.
//!
//! Ids are laid out as: 9 structural tokens, then `<loc0..255>`,
//! `<aloc0..255>`, `<arot0..255>`, `<gripper0>`, `<gripper1>`.
//! The layout is part of the exported `vocab.json` and must not change.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const BINS: usize = 256;
pub const STRUCTURAL_COUNT: usize = 9;
pub const VOCAB_SIZE: usize = STRUCTURAL_COUNT + 3 * BINS + 2;

const LOC_BASE: u32 = STRUCTURAL_COUNT as u32;
const ALOC_BASE: u32 = LOC_BASE + BINS as u32;
const AROT_BASE: u32 = ALOC_BASE + BINS as u32;
const GRIPPER_BASE: u32 = AROT_BASE + BINS as u32;

const STRUCTURAL: [(&str, Special); STRUCTURAL_COUNT] = [
    ("<obj>", Special::ObjOpen),
    ("</obj>", Special::ObjClose),
    ("<scene>", Special::SceneOpen),
    ("</scene>", Special::SceneClose),
    ("<image>", Special::ImageOpen),
    ("</image>", Special::ImageClose),
    ("<pcd>", Special::PcdOpen),
    ("</pcd>", Special::PcdClose),
    ("<ACT_SEP>", Special::ActSep),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Structural,
    Loc,
    Aloc,
    Arot,
    Gripper,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Structural => "structural",
            Family::Loc => "loc",
            Family::Aloc => "aloc",
            Family::Arot => "arot",
            Family::Gripper => "gripper",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Special {
    ObjOpen,
    ObjClose,
    SceneOpen,
    SceneClose,
    ImageOpen,
    ImageClose,
    PcdOpen,
    PcdClose,
    ActSep,
    Loc(u8),
    Aloc(u8),
    Arot(u8),
    /// Only 0 and 1 exist in the vocabulary.
    Gripper(u8),
}

impl Special {
    pub fn family(self) -> Family {
        match self {
            Special::Loc(_) => Family::Loc,
            Special::Aloc(_) => Family::Aloc,
            Special::Arot(_) => Family::Arot,
            Special::Gripper(_) => Family::Gripper,
            _ => Family::Structural,
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Special::ObjOpen => 0,
            Special::ObjClose => 1,
            Special::SceneOpen => 2,
            Special::SceneClose => 3,
            Special::ImageOpen => 4,
            Special::ImageClose => 5,
            Special::PcdOpen => 6,
            Special::PcdClose => 7,
            Special::ActSep => 8,
            Special::Loc(b) => LOC_BASE + b as u32,
            Special::Aloc(b) => ALOC_BASE + b as u32,
            Special::Arot(b) => AROT_BASE + b as u32,
            Special::Gripper(g) => GRIPPER_BASE + g.min(1) as u32,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0..LOC_BASE => Some(STRUCTURAL[id as usize].1),
            LOC_BASE..ALOC_BASE => Some(Special::Loc((id - LOC_BASE) as u8)),
            ALOC_BASE..AROT_BASE => Some(Special::Aloc((id - ALOC_BASE) as u8)),
            AROT_BASE..GRIPPER_BASE => Some(Special::Arot((id - AROT_BASE) as u8)),
            _ if id == GRIPPER_BASE || id == GRIPPER_BASE + 1 => {
                Some(Special::Gripper((id - GRIPPER_BASE) as u8))
            }
            _ => None,
        }
    }

    /// Parses the exact token text, e.g. `<loc17>`. Bin numbers must be canonical
    /// decimal (no sign, no leading zeros).
    pub fn from_text(s: &str) -> Option<Self> {
        if let Some((_, sp)) = STRUCTURAL.iter().find(|(text, _)| *text == s) {
            return Some(*sp);
        }
        let inner = s.strip_prefix('<')?.strip_suffix('>')?;
        let (family, digits) = ["aloc", "arot", "loc", "gripper"]
            .iter()
            .find_map(|f| inner.strip_prefix(f).map(|rest| (*f, rest)))?;
        if digits.is_empty()
            || !digits.bytes().all(|b| b.is_ascii_digit())
            || (digits.len() > 1 && digits.starts_with('0'))
            || digits.len() > 3
        {
            return None;
        }
        let n: u32 = digits.parse().ok()?;
        match family {
            "loc" if n < 256 => Some(Special::Loc(n as u8)),
            "aloc" if n < 256 => Some(Special::Aloc(n as u8)),
            "arot" if n < 256 => Some(Special::Arot(n as u8)),
            "gripper" if n < 2 => Some(Special::Gripper(n as u8)),
            _ => None,
        }
    }

    pub fn text(self) -> String {
        match self {
            Special::Loc(b) => format!("<loc{b}>"),
            Special::Aloc(b) => format!("<aloc{b}>"),
            Special::Arot(b) => format!("<arot{b}>"),
            Special::Gripper(g) => format!("<gripper{}>", g.min(1)),
            other => STRUCTURAL[other.id() as usize].0.to_string(),
        }
    }
}

impl fmt::Display for Special {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// Every vocabulary token in id order.
pub fn all_specials() -> impl Iterator<Item = Special> {
    (0..VOCAB_SIZE as u32).map(|id| Special::from_id(id).expect("id within vocabulary"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub token_string: String,
    pub id: u32,
    pub family: Family,
}

pub fn vocab_entries() -> Vec<VocabEntry> {
    all_specials()
        .map(|s| VocabEntry {
            token_string: s.text(),
            id: s.id(),
            family: s.family(),
        })
        .collect()
}

/// The `vocab.json` document: a pretty-printed array of entries plus a trailing newline.
pub fn vocab_json() -> String {
    let mut s = serde_json::to_string_pretty(&vocab_entries()).expect("vocab serializes");
    s.push('\n');
    s
}

/// A lexed element of a token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Special(Special),
    /// Verbatim text, whitespace included.
    Text(String),
}

impl Token {
    pub fn special(&self) -> Option<Special> {
        match self {
            Token::Special(s) => Some(*s),
            Token::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> std::borrow::Cow<'_, str> {
        match self {
            Token::Special(s) => s.text().into(),
            Token::Text(t) => t.as_str().into(),
        }
    }
}

impl From<Special> for Token {
    fn from(s: Special) -> Self {
        Token::Special(s)
    }
}

// Longest vocabulary string is `<gripper1>` / `<ACT_SEP>` at 10 bytes.
const MAX_TOKEN_LEN: usize = 10;

/// Splits text into vocabulary tokens and verbatim text runs.
///
/// Anything that is not exactly a vocabulary token (including `<foo>` or
/// `<loc007>`) stays text. Never produces empty or adjacent text tokens.
pub fn lex(s: &str) -> Vec<Token> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let end = bytes[i + 1..]
                .iter()
                .take(MAX_TOKEN_LEN)
                .position(|b| *b == b'>' || *b == b'<');
            if let Some(off) = end {
                let j = i + 1 + off;
                if bytes[j] == b'>' {
                    if let Some(sp) = Special::from_text(&s[i..=j]) {
                        if text_start < i {
                            out.push(Token::Text(s[text_start..i].to_string()));
                        }
                        out.push(Token::Special(sp));
                        i = j + 1;
                        text_start = i;
                        continue;
                    }
                }
            }
        }
        i += 1;
    }
    if text_start < bytes.len() {
        out.push(Token::Text(s[text_start..].to_string()));
    }
    out
}

/// Concatenates tokens into their canonical text form.
pub fn join(tokens: &[Token]) -> String {
    let mut out = String::new();
    for t in tokens {
        match t {
            Token::Special(s) => out.push_str(&s.text()),
            Token::Text(x) => out.push_str(x),
        }
    }
    out
}

pub fn join_specials(tokens: &[Special]) -> String {
    tokens.iter().map(|s| s.text()).collect()
}

/// True when `s` contains any vocabulary token.
pub fn contains_vocab_token(s: &str) -> bool {
    lex(s).iter().any(|t| matches!(t, Token::Special(_)))
}

/// The special tokens of `s`, in order.
pub fn specials_in(s: &str) -> Vec<Special> {
    lex(s).iter().filter_map(Token::special).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn vocabulary_counts() {
        let entries = vocab_entries();
        assert_eq!(entries.len(), 779);
        let count = |f: Family| entries.iter().filter(|e| e.family == f).count();
        assert_eq!(count(Family::Structural), 9);
        assert_eq!(count(Family::Loc), 256);
        assert_eq!(count(Family::Aloc), 256);
        assert_eq!(count(Family::Arot), 256);
        assert_eq!(count(Family::Gripper), 2);
    }

    #[test]
    fn string_id_mapping_is_bijective() {
        let mut texts = HashSet::new();
        for (i, s) in all_specials().enumerate() {
            assert_eq!(s.id() as usize, i);
            assert_eq!(Special::from_text(&s.text()), Some(s));
            assert!(texts.insert(s.text()));
        }
        assert_eq!(Special::from_id(VOCAB_SIZE as u32), None);
    }

    #[test]
    fn families_are_contiguous() {
        let entries = vocab_entries();
        for f in [Family::Loc, Family::Aloc, Family::Arot, Family::Gripper] {
            let ids: Vec<u32> = entries.iter().filter(|e| e.family == f).map(|e| e.id).collect();
            assert!(ids.windows(2).all(|w| w[1] == w[0] + 1), "{f} not contiguous");
        }
    }

    #[test]
    fn non_canonical_spellings_are_text() {
        for s in ["<loc256>", "<loc007>", "<loc>", "<gripper2>", "<Obj>", "<act_sep>", "<loc-1>"] {
            assert_eq!(Special::from_text(s), None, "{s}");
            assert_eq!(lex(s), vec![Token::Text(s.to_string())]);
        }
    }

    #[test]
    fn lexer_splits_text_and_tokens() {
        let toks = lex("is <scene></scene>. Locate: a<<obj>");
        assert_eq!(
            toks,
            vec![
                Token::Text("is ".into()),
                Token::Special(Special::SceneOpen),
                Token::Special(Special::SceneClose),
                Token::Text(". Locate: a<".into()),
                Token::Special(Special::ObjOpen),
            ]
        );
        assert_eq!(join(&toks), "is <scene></scene>. Locate: a<<obj>");
    }

    #[test]
    fn lexer_handles_multibyte_text() {
        let s = "déplacer <loc3> la tasse →";
        assert_eq!(join(&lex(s)), s);
        assert_eq!(specials_in(s), vec![Special::Loc(3)]);
    }
}
