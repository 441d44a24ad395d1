use std::fs;
use std::path::PathBuf;

use aqua_core::icon_db::{build_from_sources, load_manifest, save_manifest, IconSource, MANIFEST_FILE};
use aqua_core::imaging::GrayF;
use aqua_core::vision::match_icon;

fn demo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

fn build() -> aqua_core::icon_db::BuiltManifest {
    build_from_sources(Some(&demo().join("help")), Some(&demo().join("commands")), "Fusion 360").unwrap()
}

#[test]
fn demo_sources_counts() {
    let built = build();
    let m = &built.manifest;
    // Six help icons and six command icons; Extrude is identical in both.
    assert_eq!(built.duplicates, 1);
    assert_eq!(m.len(), 11);
    assert_eq!(m.counts_by_source[&IconSource::Documentation], 6);
    assert_eq!(m.counts_by_source[&IconSource::CommandDump], 5);
    assert!(built.warnings.iter().any(|w| w.contains("no image")), "{:?}", built.warnings);
    let names: Vec<&str> = m.records.iter().map(|r| r.name.as_str()).collect();
    assert!(names.contains(&"Marking Menu") && names.contains(&"Create Sketch"));
}

#[test]
fn build_is_deterministic_and_save_idempotent() {
    let a = build().manifest;
    let b = build().manifest;
    assert_eq!(a, b);

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    save_manifest(&a, d1.path()).unwrap();
    save_manifest(&b, d2.path()).unwrap();
    let m1 = fs::read(d1.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(m1, fs::read(d2.path().join(MANIFEST_FILE)).unwrap());

    // Saving over an existing database yields the same bytes.
    save_manifest(&a, d1.path()).unwrap();
    assert_eq!(m1, fs::read(d1.path().join(MANIFEST_FILE)).unwrap());
}

#[test]
fn round_trip_preserves_matching() {
    let built = build().manifest;
    let dir = tempfile::tempdir().unwrap();
    save_manifest(&built, dir.path()).unwrap();
    let loaded = load_manifest(dir.path()).unwrap();
    assert_eq!(loaded, built);
    for r in &loaded.records {
        let m = match_icon(&r.gray(), &loaded).expect("every record matches itself");
        assert_eq!(m.icon_name, r.name);
        assert!(m.score >= 0.999);
    }
}

#[test]
fn menu_anchor_is_recognized() {
    let m = build().manifest;
    let img = image::open(demo().join("anchors/marking_menu.png")).unwrap();
    let hit = match_icon(&GrayF::from_image(&img), &m).unwrap();
    assert_eq!(hit.icon_name, "Marking Menu");
}
