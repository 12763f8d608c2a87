mod common;

use std::fs;
use std::path::Path;

use common::{random_permutation, rng, small_sbm, two_cliques};
use ppro::data::{edge_homophily, generate_sbm, load_dataset, load_dataset_with_stats, planetoid_split, random_split, read_meta, save_dataset, SbmSpec};
use ppro::nodes::Labels;
use ppro::Error;

#[test]
fn save_then_load_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = small_sbm(90, 1);
    save_dataset(&bundle, dir.path()).unwrap();
    let (back, stats) = load_dataset_with_stats(dir.path(), 0).unwrap();
    assert_eq!(back.graph, bundle.graph);
    assert_eq!(back.features, bundle.features);
    assert_eq!(back.labels, bundle.labels);
    assert_eq!(back.masks, bundle.masks);
    assert_eq!(back.name, bundle.name);
    assert!(!stats.masks_generated);
    assert_eq!(stats.edge_lines, bundle.graph.edge_count());
}

#[test]
fn homophily_of_block_models() {
    let mixed = generate_sbm(&SbmSpec {
        n: 2000,
        blocks: 4,
        p_in: 0.005,
        p_out: 0.005,
        seed: 3,
        ..SbmSpec::default()
    })
    .unwrap();
    let h = edge_homophily(&mixed.graph, &mixed.labels);
    assert!((h - 0.25).abs() < 0.05, "{h}");

    let pure = generate_sbm(&SbmSpec {
        n: 300,
        p_out: 0.0,
        seed: 4,
        ..SbmSpec::default()
    })
    .unwrap();
    assert_eq!(edge_homophily(&pure.graph, &pure.labels), 1.0);
}

#[test]
fn block_model_is_seeded() {
    let spec = SbmSpec {
        n: 200,
        seed: 5,
        ..SbmSpec::default()
    };
    assert_eq!(generate_sbm(&spec).unwrap(), generate_sbm(&spec).unwrap());
    let other = SbmSpec { seed: 6, ..spec.clone() };
    assert_ne!(generate_sbm(&spec).unwrap().graph, generate_sbm(&other).unwrap().graph);
    let bad = SbmSpec { p_in: 1.5, ..spec };
    assert!(generate_sbm(&bad).is_err());
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "features.csv", "1,0\n0,1\n1,1\n0,0\n");
    write(dir.path(), "labels.tsv", "0\n1\n0\n1\n");
    write(dir.path(), "edges.tsv", "0\t1\n1\t2\n2\t3\n");
    write(dir.path(), "masks.tsv", "1 0 0\n1 0 0\n0 1 0\n0 0 1\n");
    dir
}

fn input_error(result: ppro::Result<ppro::data::DatasetBundle>) -> (String, usize) {
    match result {
        Err(Error::Input { path, line, .. }) => (path.file_name().unwrap().to_string_lossy().into_owned(), line),
        other => panic!("expected an input error, got {other:?}"),
    }
}

#[test]
fn malformed_files_report_file_and_line() {
    let dir = tiny_dir();
    write(dir.path(), "features.csv", "1,0\n# comment\n0,1,5\n1,1\n0,0\n");
    assert_eq!(input_error(load_dataset(dir.path(), 0)), ("features.csv".into(), 3));

    let dir = tiny_dir();
    write(dir.path(), "features.csv", "1,0\n0,x\n1,1\n0,0\n");
    let err = load_dataset(dir.path(), 0).unwrap_err();
    assert!(err.to_string().contains("features.csv:2:"), "{err}");

    let dir = tiny_dir();
    write(dir.path(), "edges.tsv", "0\t1\n1\t9\n");
    assert_eq!(input_error(load_dataset(dir.path(), 0)), ("edges.tsv".into(), 2));

    let dir = tiny_dir();
    write(dir.path(), "labels.tsv", "0\n1\nzero\n1\n");
    assert_eq!(input_error(load_dataset(dir.path(), 0)), ("labels.tsv".into(), 3));

    let dir = tiny_dir();
    write(dir.path(), "masks.tsv", "1 0 0\n1 1 0\n0 1 0\n0 0 1\n");
    assert_eq!(input_error(load_dataset(dir.path(), 0)), ("masks.tsv".into(), 2));

    let dir = tiny_dir();
    write(dir.path(), "meta.txt", "classes = 3\n");
    assert_eq!(input_error(load_dataset(dir.path(), 0)).0, "labels.tsv");
}

#[test]
fn meta_names_and_declares_classes() {
    let dir = tiny_dir();
    write(dir.path(), "meta.txt", "# fixture\nname = tiny\nclasses = 2\n");
    assert_eq!(
        read_meta(&dir.path().join("meta.txt")).unwrap(),
        vec![("name".into(), "tiny".into()), ("classes".into(), "2".into())]
    );
    assert_eq!(load_dataset(dir.path(), 0).unwrap().name, "tiny");
    write(dir.path(), "meta.txt", "just words\n");
    assert_eq!(input_error(load_dataset(dir.path(), 0)), ("meta.txt".into(), 1));
}

#[test]
fn missing_masks_are_regenerated_and_noted() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&small_sbm(90, 2), dir.path()).unwrap();
    fs::remove_file(dir.path().join("masks.tsv")).unwrap();
    let (a, stats) = load_dataset_with_stats(dir.path(), 7).unwrap();
    assert!(stats.masks_generated);
    assert!(a.provenance.contains("regenerated") && a.provenance.contains("seed 7"), "{}", a.provenance);
    assert_eq!(load_dataset(dir.path(), 7).unwrap().masks, a.masks);
    assert_ne!(load_dataset(dir.path(), 8).unwrap().masks, a.masks);
}

#[test]
fn duplicate_and_reversed_edge_lines_collapse() {
    let dir = tiny_dir();
    write(dir.path(), "edges.tsv", "0\t1\n1\t0\n0\t1\n2\t3\n");
    let (bundle, stats) = load_dataset_with_stats(dir.path(), 0).unwrap();
    assert_eq!(stats.edge_lines, 4);
    assert_eq!(bundle.graph.edge_count(), 2);
}

#[test]
fn splits_are_disjoint_and_sized() {
    let labels = Labels::new((0..300).map(|i| i % 3).collect(), 3).unwrap();
    let m = random_split(&labels, 0.6, 0.2, 1).unwrap();
    assert_eq!((m.train_size(), m.val_indices().len(), m.test_indices().len()), (180, 60, 60));
    for i in 0..300 {
        assert!(u8::from(m.train[i]) + u8::from(m.val[i]) + u8::from(m.test[i]) == 1);
    }
    assert!(planetoid_split(&labels, 20, 500, 1000, 0).is_err());
}

#[test]
fn permuting_a_bundle_keeps_it_valid() {
    let bundle = two_cliques(5, 1);
    let perm = random_permutation(10, &mut rng(2));
    let moved = bundle.permute(&perm);
    moved.validate().unwrap();
    assert_eq!(moved.graph.edge_count(), bundle.graph.edge_count());
    assert_eq!(edge_homophily(&moved.graph, &moved.labels), edge_homophily(&bundle.graph, &bundle.labels));
}
