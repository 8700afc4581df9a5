//! Rule-based noun chunking over a small built-in tag lexicon.
//!
//! A chunk is a maximal run of `determiner? adjective* noun+`. The lexicon
//! covers the vocabulary of tabletop manipulation instructions; unknown words
//! default to nouns (or adverbs when they end in `-ly`). Any other tagger can
//! be plugged in through [`PosTagger`].

use serde::{Deserialize, Serialize};

use super::AnnotateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosTag {
    Det,
    Adj,
    Noun,
    Verb,
    Adp,
    Pron,
    Conj,
    Adv,
    Num,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounChunk {
    pub text: String,
    /// Character offsets `[start, end)` into the instruction.
    pub span: (usize, usize),
}

/// A word of the instruction with its character span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word<'a> {
    pub text: &'a str,
    pub span: (usize, usize),
    byte_span: (usize, usize),
}

pub trait PosTagger {
    /// One tag per word.
    fn tag(&self, words: &[&str]) -> Vec<PosTag>;
}

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "some", "any", "each", "every", "another",
    "its", "my", "your", "their", "our", "his", "her", "all", "both",
];
const PRONOUNS: &[&str] = &["it", "them", "they", "you", "i", "we", "me", "him", "itself", "one"];
const CONJUNCTIONS: &[&str] = &["and", "or", "but", "then", "so", "while", "until", "before", "after"];
const ADPOSITIONS: &[&str] = &[
    "up", "down", "in", "into", "on", "onto", "to", "from", "of", "at", "off", "out", "over", "under",
    "with", "near", "next", "beside", "behind", "inside", "through", "toward", "towards", "across",
    "above", "below", "between", "around", "by", "for", "upon", "along", "away", "against", "within",
];
const ADVERBS: &[&str] = &[
    "again", "back", "forward", "here", "there", "together", "apart", "upright", "halfway", "now",
    "also", "just", "very", "not",
];
const VERBS: &[&str] = &[
    "pick", "place", "put", "move", "push", "pull", "open", "close", "turn", "rotate", "lift",
    "grasp", "grab", "take", "stack", "unstack", "slide", "wipe", "pour", "press", "drop", "insert",
    "remove", "go", "knock", "flip", "fold", "unfold", "sweep", "hang", "get", "bring", "set",
    "hold", "reach", "toggle", "switch", "lay", "shut", "release", "raise", "lower", "stir",
    "throw", "carry", "fetch", "tilt", "twist", "screw", "unscrew", "plug", "unplug", "water",
    "clean", "empty", "fill", "arrange", "sort", "cover", "uncover", "hand", "give", "store",
    "make", "use", "touch", "point", "tap", "shake", "roll", "spin", "drag", "separate", "stand",
    "is", "are", "be", "was", "were", "has", "have", "do", "does", "will", "can", "should",
];
const ADJECTIVES: &[&str] = &[
    "red", "blue", "green", "yellow", "black", "white", "orange", "purple", "pink", "brown", "gray",
    "grey", "silver", "gold", "small", "large", "big", "little", "tiny", "huge", "left", "right",
    "top", "bottom", "middle", "upper", "lower", "front", "rear", "empty", "full", "open", "closed",
    "wooden", "plastic", "metal", "metallic", "glass", "round", "square", "tall", "short", "long",
    "dark", "light", "near", "far", "farthest", "nearest", "closest", "first", "second", "third",
    "last", "other", "same", "different", "clean", "dirty", "new", "old", "striped", "soft", "hard",
    "leftmost", "rightmost", "center", "central",
];
const NOUNS: &[&str] = &[
    "cup", "mug", "apple", "banana", "orange", "lemon", "drawer", "cabinet", "door", "block",
    "cube", "bowl", "plate", "sponge", "can", "bottle", "box", "lid", "pot", "pan", "spoon", "fork",
    "knife", "towel", "cloth", "table", "shelf", "counter", "sink", "faucet", "microwave", "oven",
    "fridge", "switch", "button", "light", "lamp", "handle", "knob", "basket", "bin", "tray",
    "chocolate", "bar", "chip", "chips", "bag", "toy", "ball", "marker", "pen", "pencil", "book",
    "laptop", "phone", "remote", "plant", "vase", "jar", "carrot", "eggplant", "corn", "pepper",
    "potato", "tomato", "bread", "cheese", "coke", "water", "stove", "burner", "left", "right",
    "top", "side", "corner", "edge", "center", "middle", "front", "back", "rack", "dish", "glass",
    "kettle", "teapot", "cylinder", "star", "triangle", "block", "object", "item", "robot",
    "gripper", "slider", "tap", "cover", "container", "lego", "doll", "brush", "scissors",
    "tape", "cable", "charger", "wall", "floor", "chair", "paper", "napkin", "spatula", "ladle",
    "pear", "peach", "grape", "grapes", "strawberry", "fruit", "vegetable", "food", "cookie",
];

/// Tagger backed by the built-in lexicon.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexiconTagger;

impl LexiconTagger {
    fn candidates(word: &str) -> Vec<PosTag> {
        let w = word.to_ascii_lowercase();
        let w = w.as_str();
        let mut c = Vec::new();
        let table: [(&[&str], PosTag); 8] = [
            (VERBS, PosTag::Verb),
            (DETERMINERS, PosTag::Det),
            (PRONOUNS, PosTag::Pron),
            (CONJUNCTIONS, PosTag::Conj),
            (ADPOSITIONS, PosTag::Adp),
            (ADVERBS, PosTag::Adv),
            (ADJECTIVES, PosTag::Adj),
            (NOUNS, PosTag::Noun),
        ];
        for (words, tag) in table {
            if words.contains(&w) && !c.contains(&tag) {
                c.push(tag);
            }
        }
        if c.is_empty() {
            if w.chars().all(|ch| ch.is_ascii_digit()) {
                c.push(PosTag::Num);
            } else if w.len() > 3 && w.ends_with("ly") {
                c.push(PosTag::Adv);
            } else if let Some(stem) = w.strip_suffix('s').filter(|s| NOUNS.contains(s)) {
                let _ = stem;
                c.push(PosTag::Noun);
            } else {
                c.push(PosTag::Noun);
            }
        }
        c
    }
}

impl PosTagger for LexiconTagger {
    fn tag(&self, words: &[&str]) -> Vec<PosTag> {
        let cands: Vec<Vec<PosTag>> = words.iter().map(|w| Self::candidates(w)).collect();
        let mut tags: Vec<PosTag> = Vec::with_capacity(words.len());
        for (i, c) in cands.iter().enumerate() {
            let tag = if c.len() == 1 {
                c[0]
            } else {
                let prev = tags.last().copied();
                let clause_start = matches!(prev, None | Some(PosTag::Conj) | Some(PosTag::Adv))
                    || words[i - 1].eq_ignore_ascii_case("to");
                let next_nominal = cands
                    .get(i + 1)
                    .is_some_and(|n| n.contains(&PosTag::Noun) || n.contains(&PosTag::Adj));
                if c.contains(&PosTag::Verb) && clause_start {
                    PosTag::Verb
                } else if c.contains(&PosTag::Adj) && next_nominal {
                    PosTag::Adj
                } else if c.contains(&PosTag::Noun) {
                    PosTag::Noun
                } else if c.contains(&PosTag::Adj) && matches!(prev, Some(PosTag::Det)) {
                    PosTag::Adj
                } else {
                    c[0]
                }
            };
            tags.push(tag);
        }
        tags
    }
}

/// Splits text into words of `[A-Za-z0-9'-]` with character spans.
pub fn words(text: &str) -> Vec<Word<'_>> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    let is_word = |c: char| c.is_alphanumeric() || c == '\'' || c == '-';
    let mut char_idx = 0;
    for (byte_idx, ch) in text.char_indices() {
        match (is_word(ch), start) {
            (true, None) => start = Some((byte_idx, char_idx)),
            (false, Some((b, c))) => {
                out.push(Word {
                    text: &text[b..byte_idx],
                    span: (c, char_idx),
                    byte_span: (b, byte_idx),
                });
                start = None;
            }
            _ => {}
        }
        char_idx += 1;
    }
    if let Some((b, c)) = start {
        out.push(Word {
            text: &text[b..],
            span: (c, char_idx),
            byte_span: (b, text.len()),
        });
    }
    out
}

/// Noun chunks of `instruction` using the built-in lexicon.
pub fn extract_noun_chunks(instruction: &str) -> Result<Vec<NounChunk>, AnnotateError> {
    extract_noun_chunks_with(&LexiconTagger, instruction)
}

pub fn extract_noun_chunks_with(tagger: &dyn PosTagger, instruction: &str) -> Result<Vec<NounChunk>, AnnotateError> {
    if instruction.trim().is_empty() {
        return Err(AnnotateError::EmptyInstruction);
    }
    let ws = words(instruction);
    let texts: Vec<&str> = ws.iter().map(|w| w.text).collect();
    let tags = tagger.tag(&texts);
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < ws.len() {
        let mut j = i;
        if tags[j] == PosTag::Det {
            j += 1;
        }
        while j < ws.len() && matches!(tags[j], PosTag::Adj | PosTag::Num) {
            j += 1;
        }
        let noun_start = j;
        while j < ws.len() && tags[j] == PosTag::Noun {
            j += 1;
        }
        if j > noun_start {
            let (b0, b1) = (ws[i].byte_span.0, ws[j - 1].byte_span.1);
            chunks.push(NounChunk {
                text: instruction[b0..b1].to_string(),
                span: (ws[i].span.0, ws[j - 1].span.1),
            });
            i = j;
        } else {
            i += 1;
        }
    }
    Ok(chunks)
}

/// Drops a leading determiner from a chunk, e.g. `"the red cup"` → `"red cup"`.
pub fn strip_determiner(chunk: &str) -> &str {
    let trimmed = chunk.trim_start();
    if let Some((first, rest)) = trimmed.split_once(char::is_whitespace) {
        if DETERMINERS.contains(&first.to_ascii_lowercase().as_str()) {
            return rest.trim_start();
        }
    }
    trimmed
}

/// The chunk of `instruction` naming `label`: its last words equal the label's
/// words (case-insensitive), or failing that, the chunk contains them.
pub fn chunk_for_label(instruction: &str, label: &str) -> Option<NounChunk> {
    let chunks = extract_noun_chunks(instruction).ok()?;
    let label_words: Vec<String> = words(label).iter().map(|w| w.text.to_lowercase()).collect();
    if label_words.is_empty() {
        return None;
    }
    let chunk_words = |c: &NounChunk| -> Vec<String> { words(&c.text).iter().map(|w| w.text.to_lowercase()).collect() };
    let ends_with = |c: &NounChunk| chunk_words(c).ends_with(&label_words);
    let contains = |c: &NounChunk| {
        let cw = chunk_words(c);
        cw.windows(label_words.len()).any(|win| win == label_words.as_slice())
    };
    chunks
        .iter()
        .find(|c| ends_with(c))
        .or_else(|| chunks.iter().find(|c| contains(c)))
        .cloned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        extract_noun_chunks(s).unwrap().into_iter().map(|c| c.text).collect()
    }

    #[test]
    fn spec_examples() {
        assert_eq!(texts("pick up the red cup"), vec!["the red cup"]);
        assert_eq!(texts("open drawer"), vec!["drawer"]);
        assert!(texts("go").is_empty());
        assert_eq!(extract_noun_chunks("  ").unwrap_err(), AnnotateError::EmptyInstruction);
    }

    #[test]
    fn spans_are_character_offsets() {
        let s = "put the apple in the open drawer";
        let chunks = extract_noun_chunks(s).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text, "the apple");
        assert_eq!(chunks[0].span, (4, 13));
        assert_eq!(chunks[1].text, "the open drawer");
        let chars: Vec<char> = s.chars().collect();
        let (a, b) = chunks[1].span;
        assert_eq!(chars[a..b].iter().collect::<String>(), "the open drawer");
        assert!(chunks.windows(2).all(|w| w[0].span.1 <= w[1].span.0));
    }

    #[test]
    fn multibyte_offsets() {
        let s = "déplace the red cup";
        let c = extract_noun_chunks(s).unwrap();
        let last = c.last().unwrap();
        assert_eq!(last.text, "the red cup");
        assert_eq!(last.span, (8, 19));
    }

    #[test]
    fn unknown_words_and_ambiguity() {
        assert_eq!(texts("pick up the chocolate bar"), vec!["the chocolate bar"]);
        assert_eq!(texts("slowly close the top drawer"), vec!["the top drawer"]);
        assert_eq!(texts("turn on the light"), vec!["the light"]);
        assert_eq!(texts("move the block to the left"), vec!["the block", "the left"]);
    }

    #[test]
    fn label_matching() {
        let c = chunk_for_label("pick up the red cup and place it in the bowl", "cup").unwrap();
        assert_eq!(c.text, "the red cup");
        assert_eq!(strip_determiner(&c.text), "red cup");
        assert!(chunk_for_label("pick up the apple", "banana").is_none());
        assert_eq!(chunk_for_label("pick up the chocolate bar", "chocolate").unwrap().text, "the chocolate bar");
    }

    struct AllNouns;
    impl PosTagger for AllNouns {
        fn tag(&self, words: &[&str]) -> Vec<PosTag> {
            vec![PosTag::Noun; words.len()]
        }
    }

    #[test]
    fn pluggable_tagger() {
        let c = extract_noun_chunks_with(&AllNouns, "go now").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].text, "go now");
    }
}
