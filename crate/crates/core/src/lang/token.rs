use super::vocab::{TokenId, Vocab};
use super::LangError;

/// A token sequence together with its rendering and the extracted code region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedProgram {
    pub ids: Vec<TokenId>,
    /// Byte offsets `(start, end)` of each token in the source text.
    pub char_spans: Vec<(usize, usize)>,
    /// True for tokens inside the fenced code region.
    pub code_mask: Vec<bool>,
}

impl TokenizedProgram {
    /// Renders `ids` with single-space separators and computes the fence mask.
    pub fn from_ids(vocab: &Vocab, ids: Vec<TokenId>) -> Self {
        let (_, char_spans) = render(vocab, &ids);
        let code_mask = fence_mask(&ids);
        TokenizedProgram {
            ids,
            char_spans,
            code_mask,
        }
    }

    /// Builds a program whose code region is given explicitly (e.g. a sampled
    /// response where every token before the terminator is code).
    pub fn with_mask(vocab: &Vocab, ids: Vec<TokenId>, code_mask: Vec<bool>) -> Self {
        assert_eq!(ids.len(), code_mask.len(), "mask length must match ids");
        let (_, char_spans) = render(vocab, &ids);
        TokenizedProgram {
            ids,
            char_spans,
            code_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The tokens of the code region, or an empty slice when there is none.
    pub fn code_ids(&self) -> &[TokenId] {
        match self.code_mask.iter().position(|&m| m) {
            Some(start) => {
                let len = self.code_mask[start..].iter().take_while(|&&m| m).count();
                &self.ids[start..start + len]
            }
            None => &[],
        }
    }
}

/// Canonical single-space rendering; returns the text and per-token byte spans.
pub fn render(vocab: &Vocab, ids: &[TokenId]) -> (String, Vec<(usize, usize)>) {
    let mut text = String::new();
    let mut spans = Vec::with_capacity(ids.len());
    for (i, &id) in ids.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        let start = text.len();
        text.push_str(vocab.surface(id));
        spans.push((start, text.len()));
    }
    (text, spans)
}

pub fn detokenize(vocab: &Vocab, ids: &[TokenId]) -> String {
    render(vocab, ids).0
}

/// Tokens strictly between the first fence and the next fence (or the end)
/// are code. Without a fence nothing is code.
fn fence_mask(ids: &[TokenId]) -> Vec<bool> {
    let mut mask = vec![false; ids.len()];
    if let Some(open) = ids.iter().position(|&t| t == TokenId::FENCE) {
        for (i, &t) in ids.iter().enumerate().skip(open + 1) {
            if t == TokenId::FENCE {
                break;
            }
            mask[i] = true;
        }
    }
    mask
}

/// Maximal-munch scan over the non-special vocabulary entries.
pub fn tokenize(vocab: &Vocab, source: &str) -> Result<TokenizedProgram, LangError> {
    let candidates: Vec<(TokenId, &str)> = vocab
        .ids()
        .filter(|&id| !vocab.kind(id).is_special())
        .map(|id| (id, vocab.surface(id)))
        .collect();
    let bytes = source.as_bytes();
    let mut ids = Vec::new();
    let mut char_spans = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos].is_ascii_whitespace() {
            pos += 1;
            continue;
        }
        let rest = &source[pos..];
        let best = candidates
            .iter()
            .filter(|(_, s)| rest.starts_with(s))
            .max_by_key(|(_, s)| s.len());
        match best {
            Some(&(id, s)) => {
                ids.push(id);
                char_spans.push((pos, pos + s.len()));
                pos += s.len();
            }
            None => return Err(LangError::UnknownToken { position: pos }),
        }
    }
    let code_mask = fence_mask(&ids);
    Ok(TokenizedProgram {
        ids,
        char_spans,
        code_mask,
    })
}
