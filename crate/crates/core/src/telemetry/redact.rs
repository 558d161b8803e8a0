//! PII redaction for anything written to a sink.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;

/// Pattern kinds in application order.
pub const KINDS: [&str; 3] = ["email", "card", "phone"];

pub fn patterns() -> &'static [(&'static str, Regex); 3] {
    static P: OnceLock<[(&'static str, Regex); 3]> = OnceLock::new();
    P.get_or_init(|| {
        let re = |s: &str| Regex::new(s).expect("static pattern");
        [
            ("email", re(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}")),
            // 13 to 19 digits, optionally separated by single spaces or dashes.
            ("card", re(r"\b(?:\d[ -]?){12,18}\d\b")),
            ("phone", re(r"(?:\+\d{1,3}[ .-]?)?(?:\(\d{2,4}\)|\b\d{2,4})[ .-]?\d{3,4}[ .-]?\d{3,4}\b")),
        ]
    })
}

/// True when any pattern still matches.
pub fn has_pii(text: &str) -> bool {
    patterns().iter().any(|(_, re)| re.is_match(text))
}

/// Replaces emails, card-like numbers and phone numbers with
/// `[REDACTED:<kind>]`. Idempotent.
pub fn redact(text: &str) -> String {
    let mut out = text.to_string();
    loop {
        let mut changed = false;
        for (kind, re) in patterns() {
            if re.is_match(&out) {
                out = re.replace_all(&out, format!("[REDACTED:{kind}]").as_str()).into_owned();
                changed = true;
            }
        }
        if !changed {
            return out;
        }
    }
}

/// Redacts every string inside a JSON value, keys included.
pub fn redact_value(v: &mut Value) {
    match v {
        Value::String(s) => {
            if has_pii(s) {
                *s = redact(s);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(redact_value),
        Value::Object(map) => {
            let taken = std::mem::take(map);
            for (k, mut val) in taken {
                redact_value(&mut val);
                let k = if has_pii(&k) { redact(&k) } else { k };
                map.insert(k, val);
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(redact("mail a@b.com now"), "mail [REDACTED:email] now");
        assert_eq!(redact("nothing here 2025-01-01"), "nothing here 2025-01-01");
        assert_eq!(redact("card 4111 1111 1111 1111."), "card [REDACTED:card].");
        assert_eq!(redact("call +1 415-555-0132"), "call [REDACTED:phone]");
        let x = "x@y.org, 4111-1111-1111-1111, (415) 555 0132";
        assert_eq!(redact(&redact(x)), redact(x));
        assert!(!has_pii(&redact(x)));
    }

    #[test]
    fn identifiers_survive() {
        for id in ["a0000000000000001", "run-c4f1a2b3c4d5e6f7", "resp_001", "e123456789012345"] {
            assert_eq!(redact(id), id);
        }
    }

    #[test]
    fn json_values() {
        let mut v = serde_json::json!({"a": ["me@x.io", 4], "b": {"c": "ok"}});
        redact_value(&mut v);
        assert_eq!(v, serde_json::json!({"a": ["[REDACTED:email]", 4], "b": {"c": "ok"}}));
    }
}
