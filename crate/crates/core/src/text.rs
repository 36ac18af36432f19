//! Text normalization and tokenization shared by every module that looks at
//! user or bot text.
//!
//! Normalization applies NFC, lowercases, folds the Arabic presentation of
//! yeh/kaf onto their Persian letters and drops the zero-width non-joiner, so
//! `نمی‌خواهم` and `نمیخواهم` compare equal. Tokens are maximal runs of
//! characters that are neither whitespace nor in a Unicode punctuation
//! category.

use unicode_normalization::UnicodeNormalization;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

const ZWNJ: char = '\u{200C}';

/// Canonical form used for keyword matching and hashing.
pub fn normalize(text: &str) -> String {
    text.nfc()
        .filter(|&c| c != ZWNJ)
        .map(|c| match c {
            'ي' | 'ى' => 'ی',
            'ك' => 'ک',
            other => other,
        })
        .flat_map(char::to_lowercase)
        .collect()
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || c.general_category_group() == GeneralCategoryGroup::Punctuation
}

/// Splits normalized text into tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text)
        .split(is_separator)
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Splits raw text on the same boundaries as [`tokenize`] but keeps the
/// original spelling of each token.
pub fn raw_tokens(text: &str) -> Vec<&str> {
    text.split(is_separator).filter(|t| !t.is_empty()).collect()
}

/// True when `text` has at least one non-whitespace character.
pub fn is_blank(text: &str) -> bool {
    text.trim().is_empty()
}
