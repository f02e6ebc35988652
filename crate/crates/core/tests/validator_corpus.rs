mod support {
    pub mod oracle;
}

use std::collections::{BTreeMap, BTreeSet};

use framelens_core::contract::{parse_batch_detections, AttributeSpec};
use framelens_core::validate::{validate_and_type, validate_geometric, GeometryPolicy};
use serde::Deserialize;
use serde_json::Value;
use support::oracle::reference_check;

#[derive(Deserialize)]
struct Fixture {
    name: String,
    attributes: Vec<String>,
    width: u32,
    height: u32,
    payload: Value,
    geometrically_invalid: bool,
}

fn corpus() -> Vec<Fixture> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/validator.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn library_check(f: &Fixture) -> (BTreeMap<u32, BTreeSet<String>>, BTreeMap<u32, Vec<framelens_core::detection::Detection>>) {
    let spec = AttributeSpec::parse_list(&f.attributes).unwrap();
    let expected: Vec<u32> = f
        .payload
        .as_object()
        .unwrap()
        .keys()
        .map(|k| k.parse().unwrap())
        .collect();
    let batch = parse_batch_detections(&f.payload.to_string(), &expected).unwrap();
    let (report, typed) = validate_and_type(&batch, &spec, 0);
    let mut out: BTreeMap<u32, BTreeSet<String>> = expected.iter().map(|&i| (i, BTreeSet::new())).collect();
    for e in &report.structural_errors {
        out.get_mut(&e.frame_index).unwrap().insert(e.summary());
    }
    (out, typed)
}

#[test]
fn corpus_is_large_enough() {
    let c = corpus();
    assert!(c.len() >= 50, "{} fixtures", c.len());
    assert!(c.iter().any(|f| f.geometrically_invalid));
}

#[test]
fn validator_agrees_with_reference_checker() {
    let mut disagreements = Vec::new();
    for f in corpus() {
        let oracle = reference_check(&f.payload, &f.attributes);
        let (ours, typed) = library_check(&f);
        if oracle != ours {
            disagreements.push(format!("{}: oracle {:?} vs validator {:?}", f.name, oracle, ours));
        }
        for (frame, errs) in &ours {
            assert_eq!(errs.is_empty(), typed.contains_key(frame), "{}: frame {frame}", f.name);
        }
    }
    assert!(disagreements.is_empty(), "{}", disagreements.join("\n"));
}

#[test]
fn geometry_is_outside_structural_scope() {
    for f in corpus().into_iter().filter(|f| f.geometrically_invalid) {
        let (ours, typed) = library_check(&f);
        assert!(ours.values().all(BTreeSet::is_empty), "{} should be structurally valid", f.name);
        let flagged = typed.iter().any(|(&i, dets)| {
            !validate_geometric(i, dets, f.width, f.height, GeometryPolicy::Warn)
                .warnings
                .is_empty()
        });
        assert!(flagged, "{} should carry geometric warnings", f.name);
    }
}

#[test]
fn valid_fixtures_have_no_geometric_warnings() {
    for f in corpus().into_iter().filter(|f| !f.geometrically_invalid && f.name.starts_with("valid_")) {
        let (ours, typed) = library_check(&f);
        assert!(ours.values().all(BTreeSet::is_empty), "{}: {ours:?}", f.name);
        for (&i, dets) in &typed {
            let w = validate_geometric(i, dets, f.width, f.height, GeometryPolicy::Warn).warnings;
            assert!(w.is_empty(), "{}: {w:?}", f.name);
        }
    }
}
