#[path = "support/nesting.rs"]
mod nesting;

use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Deserialize;
use toolcoder_core::analysis::{extract_call_sites, parse_scaffold};
use toolcoder_core::ScaffoldParam;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[derive(Deserialize)]
struct Mutations {
    valid: String,
    mutations: Vec<Mutation>,
}

#[derive(Deserialize)]
struct Mutation {
    file: String,
    error: String,
}

fn read(rel: &str) -> String {
    std::fs::read_to_string(fixtures().join(rel)).unwrap()
}

#[test]
fn valid_scaffold_fixture_parses() {
    let manifest: Mutations = serde_json::from_str(&read("scaffolds/mutations.json")).unwrap();
    let source = read(&format!("scaffolds/{}", manifest.valid));
    let s = parse_scaffold(&source).unwrap();
    assert_eq!(s.function_name, "get_directed_movie_count");
    assert_eq!(s.params, vec![ScaffoldParam { name: "director_name".into(), annotation: "str".into() }]);
    assert_eq!(s.return_annotation, "int");
    assert_eq!(s.render(), source);
}

#[test]
fn every_mutation_is_rejected_with_its_error() {
    let manifest: Mutations = serde_json::from_str(&read("scaffolds/mutations.json")).unwrap();
    assert_eq!(manifest.mutations.len(), 10);
    for m in manifest.mutations {
        let err = parse_scaffold(&read(&format!("scaffolds/{}", m.file))).unwrap_err();
        assert!(format!("{err:?}").starts_with(&m.error), "{}: expected {}, got {err:?}", m.file, m.error);
    }
}

#[test]
fn pseudo_program_call_sites_in_order() {
    let sites = extract_call_sites(&read("programs/director_count_pseudo.py")).unwrap();
    let paths: Vec<_> = sites.iter().map(|s| s.api_path.as_str()).collect();
    assert_eq!(paths, ["/3/search/person", "/3/person/{person_id}/movie_credits"]);
}

#[test]
fn nested_call_sites_match_the_generator() {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for case in 0..200 {
        let g = nesting::generate(&mut rng, 3);
        let sites = extract_call_sites(&g.source).unwrap();
        let got: Vec<_> = sites
            .iter()
            .map(|s| nesting::Expected { api_path: s.api_path.clone(), span: s.byte_span })
            .collect();
        assert_eq!(got, g.expected, "case {case}:\n{}", g.source);
    }
}
