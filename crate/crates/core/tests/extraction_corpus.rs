use framelens_core::contract::{extract_json_payload, ContractError};
use serde::Deserialize;
use serde_json::Value;

#[derive(Deserialize)]
struct Fixture {
    name: String,
    text: String,
    expected: Option<Value>,
}

fn corpus() -> Vec<Fixture> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/extraction.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn corpus_shape() {
    let c = corpus();
    let positives = c.iter().filter(|f| f.expected.is_some()).count();
    assert!(positives >= 30, "{positives} positive fixtures");
    assert!(c.len() - positives >= 5);
}

#[test]
fn every_embedded_object_is_recovered() {
    for f in corpus() {
        let got = extract_json_payload(&f.text);
        match (&f.expected, got) {
            (Some(want), Ok(raw)) => {
                let parsed: Value = serde_json::from_str(raw)
                    .unwrap_or_else(|e| panic!("{}: extracted text does not parse: {e}\n{raw}", f.name));
                assert_eq!(&parsed, want, "{}", f.name);
            }
            (None, Err(ContractError::NoJsonFound)) => {}
            (want, got) => panic!("{}: expected {want:?}, got {got:?}", f.name),
        }
    }
}

#[test]
fn extraction_is_idempotent_on_corpus() {
    for f in corpus() {
        if let Ok(raw) = extract_json_payload(&f.text) {
            assert_eq!(extract_json_payload(raw).unwrap(), raw, "{}", f.name);
        }
    }
}
