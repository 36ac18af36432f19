use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ComprehensionError;
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub label: String,
    pub keywords: Vec<String>,
    #[serde(default)]
    pub priority: i32,
}

/// Token-initial patterns marking a negated verb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegationLexicon {
    pub prefixes: Vec<String>,
    #[serde(default)]
    pub exception_tokens: Vec<String>,
}

impl NegationLexicon {
    pub fn new(prefixes: Vec<String>, exception_tokens: Vec<String>) -> Result<Self, ComprehensionError> {
        let lex = NegationLexicon {
            prefixes,
            exception_tokens,
        };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<(), ComprehensionError> {
        if self.prefixes.iter().all(|p| text::normalize(p).trim().is_empty()) {
            return Err(ComprehensionError::Lexicon("negation lexicon needs at least one prefix".into()));
        }
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Self, ComprehensionError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ComprehensionError::io(path, e))?;
        let lex: NegationLexicon =
            toml::from_str(&raw).map_err(|e| ComprehensionError::Lexicon(format!("{}: {e}", path.display())))?;
        lex.validate()?;
        Ok(lex)
    }

    /// Whether a normalized token reads as a negated verb.
    pub fn is_negation(&self, token: &str) -> bool {
        if self.exception_tokens.iter().any(|e| text::normalize(e) == token) {
            return false;
        }
        self.prefixes.iter().any(|p| {
            let p = text::normalize(p);
            !p.is_empty() && token.starts_with(&p)
        })
    }
}

/// Keyword rules of one rule-based node plus the two labels negation swaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<KeywordRule>,
    /// Labels that negation maps onto each other, e.g. `["yes", "no"]`.
    pub polarity: [String; 2],
}

impl RuleSet {
    pub fn new(rules: Vec<KeywordRule>, polarity: [String; 2]) -> Result<Self, ComprehensionError> {
        let set = RuleSet { rules, polarity };
        set.validate()?;
        Ok(set)
    }

    pub fn yes_no(rules: Vec<KeywordRule>) -> Result<Self, ComprehensionError> {
        Self::new(rules, ["yes".into(), "no".into()])
    }

    pub fn validate(&self) -> Result<(), ComprehensionError> {
        let mut seen = HashSet::new();
        for r in &self.rules {
            if r.keywords.is_empty() || r.keywords.iter().all(|k| text::tokenize(k).is_empty()) {
                return Err(ComprehensionError::Lexicon(format!("rule {:?} has no keywords", r.label)));
            }
            if !seen.insert(r.label.as_str()) {
                return Err(ComprehensionError::Lexicon(format!("duplicate rule label {:?}", r.label)));
            }
        }
        for p in &self.polarity {
            if !seen.contains(p.as_str()) {
                return Err(ComprehensionError::Lexicon(format!("no rule for polarity label {p:?}")));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.label.as_str())
    }

    fn opposite(&self, label: &str) -> Option<&str> {
        match &self.polarity {
            [a, b] if a == label => Some(b),
            [a, b] if b == label => Some(a),
            _ => None,
        }
    }
}

/// Token-bounded view of normalized text: `" tok1 tok2 ... "`.
fn spaced(tokens: &[String]) -> String {
    let mut s = String::from(" ");
    for t in tokens {
        s.push_str(t);
        s.push(' ');
    }
    s
}

/// Whole-token match of a (possibly multi-word) keyword.
fn keyword_matches(haystack: &str, keyword: &str) -> bool {
    let needle = text::tokenize(keyword).join(" ");
    !needle.is_empty() && haystack.contains(&format!(" {needle} "))
}

/// Tokens with the negation marker cut from negated verbs, so that
/// "نمیخوام" can match the keyword "میخوام".
fn affirmative_view(tokens: &[String], negation: &NegationLexicon) -> Vec<String> {
    tokens
        .iter()
        .map(|t| match t.strip_prefix('ن') {
            Some(rest) if negation.is_negation(t) && !rest.is_empty() => rest.to_owned(),
            _ => t.clone(),
        })
        .collect()
}

/// Number of negated-verb tokens in `input`. Tokens that are themselves a
/// listed keyword count as that keyword, not as a negation.
pub fn negation_count(input: &str, rules: &RuleSet, negation: &NegationLexicon) -> usize {
    let keywords: HashSet<String> = rules
        .rules
        .iter()
        .flat_map(|r| r.keywords.iter().map(|k| text::tokenize(k).join(" ")))
        .collect();
    text::tokenize(input)
        .iter()
        .filter(|t| !keywords.contains(t.as_str()) && negation.is_negation(t))
        .count()
}

/// Keyword detection followed by utterance-level negation flipping.
///
/// Picks the highest-priority rule with a keyword occurring in the text as
/// whole tokens, either verbatim or inside a negated verb (ties go to the
/// lexicographically smaller label). An odd number of
/// negated verbs swaps the result across the polarity pair; an even number
/// leaves it.
pub fn classify_polar(input: &str, rules: &RuleSet, negation: &NegationLexicon) -> Option<String> {
    let tokens = text::tokenize(input);
    let haystack = spaced(&tokens);
    let affirmative = spaced(&affirmative_view(&tokens, negation));
    let best = rules
        .rules
        .iter()
        .filter(|r| {
            r.keywords
                .iter()
                .any(|k| keyword_matches(&haystack, k) || keyword_matches(&affirmative, k))
        })
        .max_by(|a, b| a.priority.cmp(&b.priority).then_with(|| b.label.cmp(&a.label)))?;

    let negated = negation_count(input, rules, negation) % 2 == 1;
    match (negated, rules.opposite(&best.label)) {
        (true, Some(opposite)) => Some(opposite.to_owned()),
        _ => Some(best.label.clone()),
    }
}

/// [`classify_polar`] over a `yes`/`no` rule set.
pub fn classify_yes_no(input: &str, rules: &[KeywordRule], negation: &NegationLexicon) -> Option<String> {
    let set = RuleSet {
        rules: rules.to_vec(),
        polarity: ["yes".into(), "no".into()],
    };
    classify_polar(input, &set, negation)
}
