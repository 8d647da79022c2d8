//! The embedding file pair as an external producer writes it, built byte by
//! byte here rather than through `write_store`.

use std::fs;
use std::path::Path;

use labelsweep_core::embedding::{load_store, write_store, EmbeddingManifest};
use labelsweep_core::EmbeddingTable;
use serde_json::json;

fn write_raw(base: &Path, keys: &[&str], dim: usize, rows: &[Vec<f32>], normalized: bool) {
    let mut bin = Vec::new();
    for row in rows {
        for v in row {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(base.with_extension("bin"), bin).unwrap();
    let manifest = json!({ "dimension": dim, "count": keys.len(), "keys": keys, "normalized": normalized });
    fs::write(base.with_extension("manifest.json"), manifest.to_string()).unwrap();
}

#[test]
fn hand_built_pair_loads_in_file_order() {
    let dir = tempfile::tempdir().unwrap();
    let labels = ["zebra", "2\" wood screw", "Bike", "étagère"];
    let rows = vec![
        vec![3.0, 4.0, 0.0],
        vec![0.0, 0.0, 2.0],
        vec![1.0, 1.0, 1.0],
        vec![-1.0, 0.0, 0.0],
    ];
    write_raw(&dir.path().join("labels"), &labels, 3, &rows, false);
    write_raw(&dir.path().join("images"), &["img a", "img_b"], 3, &rows[..2], false);

    let table = EmbeddingTable::read(&dir.path().join("labels")).unwrap();
    assert_eq!(table.keys(), labels);
    assert!(!table.is_normalized());
    assert_eq!(table.get("zebra").unwrap(), [3.0, 4.0, 0.0]);

    let store = load_store(&dir.path().join("images"), &dir.path().join("labels")).unwrap();
    assert_eq!(store.dimension(), 3);
    assert_eq!(store.label("zebra").unwrap(), [0.6, 0.8, 0.0]);
    assert_eq!(store.label("2\" wood screw").unwrap(), [0.0, 0.0, 1.0]);
    assert_eq!(store.image("img a").unwrap(), [0.6, 0.8, 0.0]);
    let s = 1.0 / 3f32.sqrt();
    for (got, want) in store.label("Bike").unwrap().iter().zip([s, s, s]) {
        assert!((got - want).abs() < 1e-7);
    }
}

#[test]
fn written_pair_matches_producer_layout() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("labels");
    let rows = vec![("b".to_owned(), vec![1.5f32, -2.0]), ("a".to_owned(), vec![0.25, 8.0])];
    let (bin, manifest) = write_store(rows, 2, &base, false).unwrap();
    let expected: Vec<u8> = [1.5f32, -2.0, 0.25, 8.0].iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(fs::read(bin).unwrap(), expected);
    let m: EmbeddingManifest = serde_json::from_slice(&fs::read(manifest).unwrap()).unwrap();
    assert_eq!(
        m,
        EmbeddingManifest {
            dimension: 2,
            count: 2,
            normalized: false,
            keys: vec!["b".into(), "a".into()],
        }
    );
}

#[test]
fn full_vocabulary_store_size() {
    let dir = tempfile::tempdir().unwrap();
    let (count, dim) = (6426usize, 768usize);
    let rows = (0..count).map(|i| {
        let mut v = vec![0.0f32; dim];
        v[i % dim] = 1.0;
        v[(i * 7 + 1) % dim] += 0.5;
        (format!("label {i}"), v)
    });
    let (bin, _) = write_store(rows, dim, &dir.path().join("labels"), false).unwrap();
    let size = fs::metadata(&bin).unwrap().len();
    let expected: u64 = (0..count).map(|_| 768 * 4).sum();
    assert_eq!(size, expected);
    assert_eq!(size, 19_740_672);
    let table = EmbeddingTable::read(&dir.path().join("labels")).unwrap();
    assert_eq!(table.len(), count);
    assert_eq!(table.dimension(), dim);
}
