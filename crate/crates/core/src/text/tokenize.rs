//! A small Moses-like tokenizer: NFC, entity unescaping, whitespace collapse,
//! and punctuation split off word edges.

use unicode_normalization::UnicodeNormalization;

const ENTITIES: [(&str, &str); 6] = [
    ("&amp;", "&"),
    ("&lt;", "<"),
    ("&gt;", ">"),
    ("&quot;", "\""),
    ("&apos;", "'"),
    ("&#39;", "'"),
];

fn unescape(text: &str) -> String {
    if !text.contains('&') {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    'outer: while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        for (entity, ch) in ENTITIES {
            if let Some(after) = rest.strip_prefix(entity) {
                out.push_str(ch);
                rest = after;
                continue 'outer;
            }
        }
        out.push('&');
        rest = &rest[1..];
    }
    out.push_str(rest);
    out
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = unescape(text).nfc().collect();
    let mut tokens = Vec::new();
    for chunk in normalized.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let start = chars.iter().position(|&c| !is_punct(c));
        let Some(start) = start else {
            tokens.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|&c| !is_punct(c)).unwrap() + 1;
        tokens.extend(chars[..start].iter().map(|c| c.to_string()));
        tokens.push(chars[start..end].iter().collect());
        tokens.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    tokens
}

/// Joins tokens with spaces, re-attaching common punctuation.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = false;
    for tok in tokens {
        let tok = tok.as_ref();
        let closing = matches!(tok, "." | "," | "!" | "?" | ";" | ":" | ")" | "]" | "}" | "%");
        if !out.is_empty() && !closing && !glue_next {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = matches!(tok, "(" | "[" | "{");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_edge_punctuation() {
        assert_eq!(tokenize("Hello, world!"), ["Hello", ",", "world", "!"]);
    }

    #[test]
    fn empty_and_whitespace() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t ").is_empty());
        assert_eq!(tokenize("a  b"), ["a", "b"]);
    }

    #[test]
    fn keeps_inner_punctuation() {
        assert_eq!(tokenize("don't stop 3.14"), ["don't", "stop", "3.14"]);
        assert_eq!(tokenize("(\"quoted\")"), ["(", "\"", "quoted", "\"", ")"]);
        assert_eq!(tokenize("..."), [".", ".", "."]);
    }

    #[test]
    fn unescapes_entities_and_normalizes() {
        assert_eq!(tokenize("fish &amp; chips"), ["fish", "&", "chips"]);
        assert_eq!(tokenize("a &bogus; b"), ["a", "&", "bogus", ";", "b"]);
        // "e" + combining acute composes to a single code point.
        assert_eq!(tokenize("cafe\u{301}"), ["caf\u{e9}"]);
    }

    #[test]
    fn detokenize_reattaches() {
        assert_eq!(detokenize(&tokenize("Hello, world!")), "Hello, world!");
        assert_eq!(detokenize(&["(", "a", ")"]), "(a)");
    }
}
