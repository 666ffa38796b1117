use std::fmt;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const SPACE: usize = 3;
const FIRST_LETTER: usize = 4;
pub const VOCAB_SIZE: usize = FIRST_LETTER + 26;

pub const CLASS_WORDS: [&str; 16] = [
    "cat", "dog", "box", "cup", "hat", "pen", "car", "egg", "fan", "key", "bus", "owl", "jar",
    "map", "net", "toy",
];
pub const ATTR_WORDS: [&str; 10] = [
    "red", "tan", "big", "old", "wet", "hot", "dim", "new", "raw", "shy",
];
pub const MAX_GRID: usize = 8;
pub const CAPTION_TEMPLATES: usize = 5;

/// Printable symbol for every token id, in id order.
pub fn vocabulary() -> Vec<String> {
    let mut v = vec!["<pad>".to_string(), "<sos>".into(), "<eos>".into(), " ".into()];
    v.extend(('a'..='z').map(|c| c.to_string()));
    v
}

pub fn char_to_token(c: char) -> Option<usize> {
    match c {
        ' ' => Some(SPACE),
        'a'..='z' => Some(FIRST_LETTER + (c as usize - 'a' as usize)),
        _ => None,
    }
}

pub fn token_to_char(t: usize) -> Option<char> {
    match t {
        SPACE => Some(' '),
        t if (FIRST_LETTER..VOCAB_SIZE).contains(&t) => {
            Some((b'a' + (t - FIRST_LETTER) as u8) as char)
        }
        _ => None,
    }
}

/// Character-level token sequence terminated by exactly one `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TextSeq {
    tokens: Vec<usize>,
}

impl TextSeq {
    /// Validates a raw token list: one trailing `<eos>`, no special tokens
    /// before it, and at most `max_len` tokens.
    pub fn from_tokens(tokens: Vec<usize>, max_len: usize) -> Result<Self> {
        let Some((&last, body)) = tokens.split_last() else {
            return Err(Error::data("text sequence is empty"));
        };
        if last != EOS {
            return Err(Error::data("text sequence must end with <eos>"));
        }
        if let Some(bad) = body.iter().find(|&&t| token_to_char(t).is_none()) {
            return Err(Error::data(format!("token {bad} is not a character")));
        }
        if tokens.len() > max_len {
            return Err(Error::data(format!(
                "text of {} tokens exceeds the limit of {max_len}",
                tokens.len()
            )));
        }
        Ok(Self { tokens })
    }

    pub fn parse(text: &str, max_len: usize) -> Result<Self> {
        let mut tokens = text
            .chars()
            .map(|c| char_to_token(c).ok_or_else(|| Error::data(format!("unsupported character {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        tokens.push(EOS);
        Self::from_tokens(tokens, max_len)
    }

    /// Normalizes decoder output: keeps tokens up to the first `<eos>`, drops
    /// stray special tokens, and truncates to `max_len` including `<eos>`.
    pub fn from_decoded(tokens: &[usize], max_len: usize) -> Self {
        let mut out: Vec<usize> = tokens
            .iter()
            .copied()
            .take_while(|&t| t != EOS)
            .filter(|&t| token_to_char(t).is_some())
            .collect();
        out.truncate(max_len.saturating_sub(1));
        out.push(EOS);
        Self { tokens: out }
    }

    /// All tokens including the trailing `<eos>`.
    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    /// Character tokens without `<eos>`.
    pub fn chars(&self) -> &[usize] {
        &self.tokens[..self.tokens.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars().is_empty()
    }

    pub fn text(&self) -> String {
        self.chars().iter().filter_map(|&t| token_to_char(t)).collect()
    }

    pub fn words(&self) -> Vec<String> {
        self.text().split_whitespace().map(str::to_string).collect()
    }
}

impl fmt::Display for TextSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

pub(crate) fn row_word(row: usize) -> String {
    ((b'a' + row as u8) as char).to_string()
}

pub(crate) fn col_word(col: usize) -> String {
    ((b'p' + col as u8) as char).to_string()
}

/// Caption text for template `variant`. Word sets for attributes, classes,
/// rows and columns are pairwise disjoint, so every template is injective.
pub(crate) fn caption_text(class: usize, attr: usize, row: usize, col: usize, variant: usize) -> String {
    let (a, c, r, k) = (ATTR_WORDS[attr], CLASS_WORDS[class], row_word(row), col_word(col));
    match variant % CAPTION_TEMPLATES {
        0 => format!("{a} {c} {r} {k}"),
        1 => format!("{c} {a} {r} {k}"),
        2 => format!("{a} {c} {k} {r}"),
        3 => format!("{r} {k} {a} {c}"),
        _ => format!("{c} {r} {k} {a}"),
    }
}
