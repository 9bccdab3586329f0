use std::path::Path;

use prospector::synth::{demo_corpus, write_demo_corpus};

const DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/corpus");

#[test]
fn bundled_corpus_matches_the_generator() {
    let dir = Path::new(DIR);
    if std::env::var_os("PROSPECTOR_REGEN_FIXTURES").is_some() {
        let _ = std::fs::remove_dir_all(dir);
        write_demo_corpus(dir).unwrap();
    }
    let mut on_disk: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    on_disk.sort();
    let files = demo_corpus();
    assert_eq!(on_disk, files.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());
    for (name, bytes) in files {
        assert_eq!(std::fs::read(dir.join(&name)).unwrap(), bytes, "{name} is stale");
    }
}
