//! Line-oriented `key=value` text used for control payloads.
//!
//! Values escape `\` and newline; keys never contain `=` or newline.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KvError {
    #[error("line {0}: missing '='")]
    MissingEquals(usize),
    #[error("line {0}: bad escape")]
    BadEscape(usize),
    #[error("duplicate key {0}")]
    DuplicateKey(String),
}

/// Encodes pairs in the order given.
pub fn encode_kv(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        debug_assert!(!k.contains(['=', '\n']), "kv key {k:?}");
        out.push_str(k);
        out.push('=');
        for c in v.chars() {
            match c {
                '\\' => out.push_str("\\\\"),
                '\n' => out.push_str("\\n"),
                c => out.push(c),
            }
        }
        out.push('\n');
    }
    out
}

pub fn decode_kv(text: &str) -> Result<BTreeMap<String, String>, KvError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let (k, raw) = line.split_once('=').ok_or(KvError::MissingEquals(i + 1))?;
        let mut v = String::with_capacity(raw.len());
        let mut chars = raw.chars();
        while let Some(c) = chars.next() {
            if c != '\\' {
                v.push(c);
                continue;
            }
            match chars.next() {
                Some('\\') => v.push('\\'),
                Some('n') => v.push('\n'),
                _ => return Err(KvError::BadEscape(i + 1)),
            }
        }
        if map.insert(k.to_string(), v).is_some() {
            return Err(KvError::DuplicateKey(k.to_string()));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn pairs(p: &[(&str, &str)]) -> Vec<(String, String)> {
        p.iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn readable_encoding() {
        let text = encode_kv(&pairs(&[("type", "request"), ("arg.x", "a=b")]));
        assert_eq!(text, "type=request\narg.x=a=b\n");
        assert_eq!(decode_kv(&text).unwrap()["arg.x"], "a=b");
    }

    #[test]
    fn escapes() {
        let text = encode_kv(&pairs(&[("k", "two\nlines \\ slash")]));
        assert_eq!(text.lines().count(), 1);
        assert_eq!(decode_kv(&text).unwrap()["k"], "two\nlines \\ slash");
    }

    #[test]
    fn malformed() {
        assert_eq!(decode_kv("novalue\n"), Err(KvError::MissingEquals(1)));
        assert_eq!(decode_kv("a=1\nb=\\x\n"), Err(KvError::BadEscape(2)));
        assert_eq!(
            decode_kv("a=1\na=2"),
            Err(KvError::DuplicateKey("a".into()))
        );
        assert!(decode_kv("").unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn values_survive(v in any::<String>().prop_filter("no CR", |s| !s.contains('\r'))) {
            let text = encode_kv(&pairs(&[("k", &v)]));
            prop_assert_eq!(&decode_kv(&text).unwrap()["k"], &v);
        }
    }
}
