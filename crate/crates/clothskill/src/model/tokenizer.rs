//! Word tokenizer over the grammar's closed instruction language.

use std::collections::BTreeMap;

use crate::grammar::{self, ClothType};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// A fixed-length token sequence: ids padded to the model's text length,
/// plus the true length so attention can mask the padding by position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: BTreeMap<String, u32>,
}

/// Lowercases and splits on whitespace, treating hyphens as separators (so
/// "T-shirt" contributes two tokens).
fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.to_lowercase()
        .replace('-', " ")
        .split_whitespace()
        .map(str::to_string)
        .collect::<Vec<_>>()
        .into_iter()
}

impl Tokenizer {
    /// Builds the vocabulary from every renderable instruction: template
    /// words, part labels, and cloth names. The instruction language is
    /// closed, so this covers every valid text with zero UNKs.
    pub fn from_grammar() -> Tokenizer {
        let mut vocab: Vec<String> = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut seen = std::collections::BTreeSet::new();
        for inst in grammar::all_instructions() {
            for w in words(&grammar::render_instruction(&inst)) {
                seen.insert(w);
            }
        }
        // Cloth aliases can appear in parsed text too; the canonical names
        // are already covered through render_instruction.
        for ct in ClothType::ALL {
            for w in words(ct.canonical_name()) {
                seen.insert(w);
            }
        }
        vocab.extend(seen);
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Tokenizer { vocab, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Encodes to exactly `max_len` ids: known words map to their id,
    /// unknown words to UNK, and the tail fills with PAD. Longer texts
    /// truncate.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenSeq {
        let mut ids = Vec::with_capacity(max_len);
        for w in words(text) {
            if ids.len() == max_len {
                break;
            }
            ids.push(self.index.get(&w).copied().unwrap_or(UNK_ID));
        }
        let len = ids.len();
        ids.resize(max_len, PAD_ID);
        TokenSeq { ids, len }
    }
}
