//! Plain-text corpus with a character vocabulary and a trailing test split.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    /// Token index of every character in the file.
    tokens: Vec<usize>,
    /// Characters in first-appearance order.
    vocab: Vec<char>,
    train: Range<usize>,
    test: Range<usize>,
}

pub fn load_corpus(path: impl AsRef<Path>, test_chars: usize) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?;
    Corpus::from_text(&text, test_chars)
}

impl Corpus {
    pub fn from_text(text: &str, test_chars: usize) -> Result<Self> {
        let mut index = HashMap::new();
        let mut vocab = Vec::new();
        let tokens: Vec<usize> = text
            .chars()
            .map(|c| {
                *index.entry(c).or_insert_with(|| {
                    vocab.push(c);
                    vocab.len() - 1
                })
            })
            .collect();
        if tokens.is_empty() {
            return Err(Error::Corpus("empty corpus".into()));
        }
        if test_chars >= tokens.len() {
            return Err(Error::Corpus(format!(
                "test split of {test_chars} characters leaves no training data in {}",
                tokens.len()
            )));
        }
        let split = tokens.len() - test_chars;
        Ok(Corpus {
            train: 0..split,
            test: split..tokens.len(),
            tokens,
            vocab,
        })
    }

    /// Fails unless the vocabulary matches `vocab` exactly, order included.
    pub fn check_vocab(&self, vocab: &[char]) -> Result<()> {
        if self.vocab.as_slice() != vocab {
            return Err(Error::Corpus(format!(
                "corpus vocabulary ({} characters) differs from the model's ({})",
                self.vocab.len(),
                vocab.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn vocab(&self) -> &[char] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn train_range(&self) -> Range<usize> {
        self.train.clone()
    }

    pub fn test_range(&self) -> Range<usize> {
        self.test.clone()
    }

    pub fn text(&self, range: Range<usize>) -> String {
        self.tokens[range].iter().map(|&t| self.vocab[t]).collect()
    }

    /// Consecutive non-overlapping `(inputs, targets)` windows of `bptt`
    /// characters; targets are the inputs shifted by one. A trailing partial
    /// window is dropped.
    pub fn windows(&self, range: Range<usize>, bptt: usize) -> Result<Windows<'_>> {
        if bptt == 0 {
            return Err(Error::config("training.bptt", "must be positive"));
        }
        if range.is_empty() || range.end > self.tokens.len() {
            return Err(Error::Corpus(format!(
                "range {range:?} is empty or outside the corpus of {}",
                self.tokens.len()
            )));
        }
        let count = (range.len() - 1) / bptt;
        Ok(Windows {
            tokens: &self.tokens[range],
            bptt,
            next: 0,
            count,
        })
    }

    pub fn window_count(&self, range: Range<usize>, bptt: usize) -> Result<usize> {
        Ok(self.windows(range, bptt)?.count)
    }
}

#[derive(Clone, Debug)]
pub struct Windows<'a> {
    tokens: &'a [usize],
    bptt: usize,
    next: usize,
    count: usize,
}

impl<'a> Iterator for Windows<'a> {
    type Item = (&'a [usize], &'a [usize]);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let start = self.next * self.bptt;
        self.next += 1;
        Some((
            &self.tokens[start..start + self.bptt],
            &self.tokens[start + 1..start + self.bptt + 1],
        ))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Windows<'_> {}
