use std::collections::HashMap;
use std::fmt;
use std::sync::LazyLock;

use super::LangError;

/// Index of a surface string in the [`Vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const PAD: TokenId = TokenId(0);
    pub const BOS: TokenId = TokenId(1);
    pub const EOS: TokenId = TokenId(2);
    /// Code fence; separates the prompt from the code region.
    pub const FENCE: TokenId = TokenId(3);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Lexical class of a vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Pad,
    Bos,
    Eos,
    Fence,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Assign,
    Eq,
    Ne,
    Lt,
    Gt,
    Plus,
    Minus,
    If,
    Else,
    Repeat,
    Assert,
    GoTo,
    Pick,
    Place,
    Say,
    Loc,
    Var,
    Int(u8),
    Room,
    Object,
    Word,
    /// Instruction words that only occur in prompts.
    Prose,
}

impl TokenKind {
    pub fn is_special(self) -> bool {
        matches!(self, TokenKind::Pad | TokenKind::Bos | TokenKind::Eos)
    }

    /// Name literals: rooms, objects and sayable words.
    pub fn is_name(self) -> bool {
        matches!(self, TokenKind::Room | TokenKind::Object | TokenKind::Word)
    }

    pub fn is_action(self) -> bool {
        matches!(
            self,
            TokenKind::GoTo | TokenKind::Pick | TokenKind::Place | TokenKind::Say
        )
    }
}

pub const ROOMS: &[&str] = &[
    "kitchen", "office", "lab", "hall", "garage", "lobby", "bedroom", "library",
];
pub const OBJECTS: &[&str] = &[
    "cup", "plate", "book", "ball", "key", "pen", "box", "apple", "phone", "hat",
];
pub const WORDS: &[&str] = &["hello", "yes", "no", "done", "ok", "bye"];
pub const VARIABLES: &[&str] = &["x", "y", "z", "n"];
pub const PROSE: &[&str] = &[
    "the", "sum", "of", "and", "difference", "times", "where", "is", "up", "fetch", "from", "go",
    "to", "deliver", "drop", "then", "in", "it",
];
pub const MAX_INT: u8 = 32;

fn fixed_entries() -> Vec<(&'static str, TokenKind)> {
    use TokenKind::*;
    vec![
        ("<pad>", Pad),
        ("<bos>", Bos),
        ("<eos>", Eos),
        ("```", Fence),
        ("(", LParen),
        (")", RParen),
        ("{", LBrace),
        ("}", RBrace),
        ("=", Assign),
        ("==", Eq),
        ("!=", Ne),
        ("<", Lt),
        (">", Gt),
        ("+", Plus),
        ("-", Minus),
        ("if", If),
        ("else", Else),
        ("repeat", Repeat),
        ("assert", Assert),
        ("go_to", GoTo),
        ("pick", Pick),
        ("place", Place),
        ("say", Say),
        ("loc", Loc),
    ]
}

fn classify(surface: &str) -> Option<TokenKind> {
    if let Some((_, k)) = fixed_entries().into_iter().find(|(s, _)| *s == surface) {
        return Some(k);
    }
    if VARIABLES.contains(&surface) {
        return Some(TokenKind::Var);
    }
    if ROOMS.contains(&surface) {
        return Some(TokenKind::Room);
    }
    if OBJECTS.contains(&surface) {
        return Some(TokenKind::Object);
    }
    if WORDS.contains(&surface) {
        return Some(TokenKind::Word);
    }
    if PROSE.contains(&surface) {
        return Some(TokenKind::Prose);
    }
    match surface.parse::<u8>() {
        Ok(n) if n <= MAX_INT && n.to_string() == surface => Some(TokenKind::Int(n)),
        _ => None,
    }
}

/// Ordered, duplicate-free token inventory with a surface ↔ id bijection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
    ids: HashMap<String, TokenId>,
}

static STANDARD: LazyLock<Vocab> = LazyLock::new(|| {
    let mut surfaces: Vec<String> = fixed_entries().iter().map(|(s, _)| s.to_string()).collect();
    for group in [VARIABLES, ROOMS, OBJECTS, WORDS] {
        surfaces.extend(group.iter().map(|s| s.to_string()));
    }
    surfaces.extend((0..=MAX_INT).map(|n| n.to_string()));
    surfaces.extend(PROSE.iter().map(|s| s.to_string()));
    Vocab::from_surfaces(surfaces).expect("standard vocabulary is well formed")
});

impl Vocab {
    /// Upper bound on vocabulary size.
    pub const MAX_SIZE: usize = 128;

    /// The RoboLang vocabulary.
    pub fn standard() -> &'static Vocab {
        &STANDARD
    }

    fn from_surfaces(surfaces: Vec<String>) -> Result<Self, LangError> {
        if surfaces.len() > Self::MAX_SIZE {
            return Err(LangError::Vocab(format!(
                "{} tokens exceeds the limit of {}",
                surfaces.len(),
                Self::MAX_SIZE
            )));
        }
        let specials = [
            (TokenId::PAD, "<pad>"),
            (TokenId::BOS, "<bos>"),
            (TokenId::EOS, "<eos>"),
            (TokenId::FENCE, "```"),
        ];
        for (id, s) in specials {
            if surfaces.get(id.index()).map(String::as_str) != Some(s) {
                return Err(LangError::Vocab(format!("id {} must be {s:?}", id.0)));
            }
        }
        let mut ids = HashMap::new();
        let mut kinds = Vec::with_capacity(surfaces.len());
        for (i, s) in surfaces.iter().enumerate() {
            let kind = classify(s).ok_or_else(|| LangError::Vocab(format!("unknown token {s:?}")))?;
            if ids.insert(s.clone(), TokenId(i as u32)).is_some() {
                return Err(LangError::Vocab(format!("duplicate token {s:?}")));
            }
            kinds.push(kind);
        }
        Ok(Vocab {
            tokens: surfaces,
            kinds,
            ids,
        })
    }

    /// Parses the line-per-token format written by [`Vocab::to_text`].
    pub fn from_text(text: &str) -> Result<Self, LangError> {
        Self::from_surfaces(text.lines().map(str::to_string).collect())
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn kind(&self, id: TokenId) -> TokenKind {
        self.kinds[id.index()]
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.ids.get(surface).copied()
    }

    /// Like [`Vocab::id`] but panics on unknown surfaces; for literals in code.
    pub fn expect_id(&self, surface: &str) -> TokenId {
        self.id(surface)
            .unwrap_or_else(|| panic!("{surface:?} is not in the vocabulary"))
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len() as u32).map(TokenId)
    }

    pub fn surfaces(&self) -> &[String] {
        &self.tokens
    }
}
