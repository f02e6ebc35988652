use std::sync::OnceLock;

use regex::Regex;

use super::ContractError;

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Fences only count when they open at the start of a line, so backticks
    // inside JSON string literals are never mistaken for one.
    RE.get_or_init(|| Regex::new(r"(?ms)^[ \t]*```[A-Za-z0-9_+-]*[ \t]*\r?\n(.*?)^[ \t]*```").unwrap())
}

/// End offset (exclusive) of the balanced object opening at `start`, if any.
/// Braces inside string literals (including escaped quotes) are ignored.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    debug_assert_eq!(bytes[start], b'{');
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn first_balanced_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(offset) = text[from..].find('{') {
        let start = from + offset;
        if let Some(end) = balanced_end(bytes, start) {
            return Some(&text[start..end]);
        }
        from = start + 1;
    }
    None
}

/// Returns the first outermost balanced `{...}` in a model reply.
///
/// Fenced code blocks are searched first; otherwise the whole text is scanned,
/// which drops any leading or trailing prose. Purely lexical: the result is
/// not parsed here.
pub fn extract_json_payload(model_text: &str) -> Result<&str, ContractError> {
    for caps in fence_re().captures_iter(model_text) {
        let body = caps.get(1).expect("fence body group").as_str();
        if let Some(obj) = first_balanced_object(body) {
            return Ok(obj);
        }
    }
    first_balanced_object(model_text).ok_or(ContractError::NoJsonFound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_fences() {
        assert_eq!(
            extract_json_payload("```json\n{\"0\": []}\n```").unwrap(),
            "{\"0\": []}"
        );
    }

    #[test]
    fn identity_on_bare_json() {
        assert_eq!(extract_json_payload("{\"0\": []}").unwrap(), "{\"0\": []}");
    }

    #[test]
    fn strips_prose() {
        let text = "Sure! Here are the results: {\"0\": [], \"1\": []} Hope this helps.";
        assert_eq!(extract_json_payload(text).unwrap(), "{\"0\": [], \"1\": []}");
    }

    #[test]
    fn braces_and_escaped_quotes_in_strings() {
        let obj = r#"{"a": "}{ \" }", "b": {"c": "\\"}}"#;
        let text = format!("prefix {obj} suffix }}");
        assert_eq!(extract_json_payload(&text).unwrap(), obj);
    }

    #[test]
    fn skips_unclosed_brace_before_object() {
        assert_eq!(
            extract_json_payload("{ oops {\"0\": []}").unwrap(),
            "{\"0\": []}"
        );
    }

    #[test]
    fn no_object_is_an_error() {
        for text in ["", "no json here", "[1, 2]", "{ never closed", "} {"] {
            assert!(
                matches!(extract_json_payload(text), Err(ContractError::NoJsonFound)),
                "{text:?}"
            );
        }
    }

    #[test]
    fn fence_preferred_over_earlier_braces() {
        let text = "Result for {frame}:\n```json\n{\"0\": []}\n```\n";
        assert_eq!(extract_json_payload(text).unwrap(), "{\"0\": []}");
    }

    fn json_leaf() -> impl Strategy<Value = serde_json::Value> {
        prop_oneof![
            Just(serde_json::Value::Null),
            any::<bool>().prop_map(serde_json::Value::from),
            any::<i32>().prop_map(serde_json::Value::from),
            "[ -~]{0,12}".prop_map(serde_json::Value::from),
            "[{}\"\\\\ a]{0,8}".prop_map(serde_json::Value::from),
        ]
    }

    fn json_object() -> impl Strategy<Value = serde_json::Value> {
        let value = json_leaf().prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(serde_json::Value::from),
                prop::collection::btree_map("[a-z{}]{1,5}", inner, 0..4)
                    .prop_map(|m| serde_json::Value::Object(m.into_iter().collect())),
            ]
        });
        prop::collection::btree_map("[a-z0-9{}\"]{1,6}", value, 0..5)
            .prop_map(|m| serde_json::Value::Object(m.into_iter().collect()))
    }

    proptest! {
        #[test]
        fn recovers_embedded_objects(
            obj in json_object(),
            pretty in any::<bool>(),
            prefix in "[^{`]{0,40}",
            suffix in "[^`]{0,40}",
            fenced in any::<bool>(),
        ) {
            let body = if pretty {
                serde_json::to_string_pretty(&obj).unwrap()
            } else {
                serde_json::to_string(&obj).unwrap()
            };
            let text = if fenced {
                format!("{prefix}\n```json\n{body}\n```\n{suffix}")
            } else {
                format!("{prefix}{body}{suffix}")
            };
            let got = extract_json_payload(&text).unwrap();
            let parsed: serde_json::Value = serde_json::from_str(got).unwrap();
            prop_assert_eq!(parsed, obj);
        }

        #[test]
        fn extraction_is_idempotent(text in "[ -~\n]{0,120}") {
            if let Ok(once) = extract_json_payload(&text) {
                prop_assert_eq!(extract_json_payload(once).unwrap(), once);
            }
        }
    }
}
