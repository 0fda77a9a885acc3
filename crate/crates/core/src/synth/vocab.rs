use crate::error::{Result, SpdnError};
use crate::synth::font;

/// Ordered symbol set; the end-of-sequence class is implicit at index `len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<char>,
}

impl Vocabulary {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        if symbols.is_empty() {
            return Err(SpdnError::Vocabulary("empty symbol set".into()));
        }
        for (i, &c) in symbols.iter().enumerate() {
            if symbols[..i].contains(&c) {
                return Err(SpdnError::Vocabulary(format!("duplicate symbol {c:?}")));
            }
            if font::glyph(c).is_none() {
                return Err(SpdnError::Vocabulary(format!("no glyph for {c:?}")));
            }
        }
        Ok(Vocabulary { symbols })
    }

    pub fn from_charset(charset: &str) -> Result<Self> {
        Self::new(charset.chars())
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn eos(&self) -> usize {
        self.symbols.len()
    }

    /// Number of classes, EOS included.
    pub fn size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn index(&self, c: char) -> Result<usize> {
        self.symbols
            .iter()
            .position(|&s| s == c)
            .ok_or_else(|| SpdnError::Vocabulary(format!("unknown character {c:?}")))
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.index(c)).collect()
    }

    /// Symbols up to (not including) the first EOS.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().take_while(|&&i| i < self.eos()).map(|&i| self.symbols[i]).collect()
    }

    /// `vocab.txt` body: one symbol per line.
    pub fn to_text(&self) -> String {
        self.symbols.iter().map(|c| format!("{c}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut symbols = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let mut chars = line.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => symbols.push(c),
                _ => return Err(SpdnError::Vocabulary(format!("bad vocab line {line:?}"))),
            }
        }
        Self::new(symbols)
    }
}
