//! The JSON files under `models/` are the canonical on-disk form of the
//! built-in fixtures; this test keeps them byte-identical to the code.

use mbpre_core::{fixtures, EnvModel};

#[test]
fn model_files_match_fixtures() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../models");
    for (name, model) in
        [("f1", fixtures::f1()), ("f2", fixtures::f2()), ("f3", fixtures::f3())]
    {
        let path = format!("{dir}/{name}.json");
        let text = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("cannot read {path}: {e}"));
        assert_eq!(
            text.trim_end(),
            model.to_json_string(),
            "{path} differs from the built-in fixture"
        );
        let parsed = EnvModel::from_json_file(&path).unwrap();
        assert_eq!(parsed.to_json_string(), model.to_json_string());
    }
}
