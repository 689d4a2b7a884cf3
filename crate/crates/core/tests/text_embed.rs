mod common;

use proptest::prelude::*;
use rand::distributions::Alphanumeric;
use rand::Rng;
use tabglm::data::{ColumnKind, ColumnSpec, TableSchema};
use tabglm::embed::{
    build_store, decode_tgem, hash_embed, load_embeddings, write_embeddings, Embedding,
    EmbeddingProvider, EmbeddingStore, FileEncoder, HashEncoder, TGEM_HEADER_LEN,
};
use tabglm::error::Error;
use tabglm::text::{read_corpus, serialize_dataset, serialize_row, write_corpus};

fn schema() -> TableSchema {
    TableSchema::new(
        vec![
            ColumnSpec {
                name: "age".into(),
                kind: ColumnKind::Numeric,
            },
            ColumnSpec {
                name: "city".into(),
                kind: ColumnKind::Categorical,
            },
        ],
        "y",
        vec!["0".into(), "1".into()],
    )
    .unwrap()
}

fn cell() -> impl Strategy<Value = Option<String>> {
    prop_oneof![
        1 => Just(None),
        4 => "[a-z]{1,6}".prop_map(Some),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn serialization_is_injective(
        age_a in prop::option::of(0u32..200),
        age_b in prop::option::of(0u32..200),
        city_a in cell(),
        city_b in cell(),
    ) {
        let s = schema();
        let a = vec![age_a.map(|v| v.to_string()), city_a];
        let b = vec![age_b.map(|v| v.to_string()), city_b];
        let ta = serialize_row(0, &a, &s).text;
        let tb = serialize_row(0, &b, &s).text;
        prop_assert_eq!(a == b, ta == tb);
    }

    #[test]
    fn hash_embedding_is_unit_norm_and_repeatable(text in "\\PC{1,60}", dim in 2usize..256) {
        let a = hash_embed(&text, dim);
        prop_assert_eq!(a.dim(), dim);
        prop_assert!((a.norm() - 1.0).abs() < 1e-6);
        prop_assert_eq!(a, hash_embed(&text, dim));
    }

    #[test]
    fn tgem_roundtrip(rows in prop::collection::btree_map(any::<u64>(), prop::collection::vec(-1e3f32..1e3, 5), 1..20)) {
        let mut store = EmbeddingStore::new(5, "file");
        for (id, v) in &rows {
            store.insert(*id, Embedding(v.clone())).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.tgem");
        write_embeddings(&store, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len();
        prop_assert_eq!(len, TGEM_HEADER_LEN + rows.len() as u64 * (8 + 4 * 5));
        let back = load_embeddings(&path).unwrap();
        prop_assert_eq!(back.dim(), 5);
        let pairs: Vec<(u64, Vec<f32>)> = back.iter().map(|(id, e)| (id, e.0.clone())).collect();
        let expected: Vec<(u64, Vec<f32>)> = rows.into_iter().collect();
        prop_assert_eq!(pairs, expected);
    }
}

#[test]
fn column_order_follows_schema_not_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "age,city,y\n30,oslo,1\n41,,0\n").unwrap();
    std::fs::write(&b, "city,y,age\noslo,1,30\n,0,41\n").unwrap();
    let s = schema();
    let da = tabglm::data::load_dataset(&a, &s).unwrap();
    let db = tabglm::data::load_dataset(&b, &s).unwrap();
    let ta: Vec<String> = serialize_dataset(&da).into_iter().map(|r| r.text).collect();
    let tb: Vec<String> = serialize_dataset(&db).into_iter().map(|r| r.text).collect();
    assert_eq!(ta, tb);
    assert_eq!(ta[0], "The age is 30. The city is oslo.");
    assert_eq!(ta[1], "The age is 41. The city is missing.");
}

#[test]
fn hash_embeddings_are_nearly_orthogonal() {
    let mut rng = common::rng(11);
    let mut texts = std::collections::BTreeSet::new();
    while texts.len() < 1000 {
        let len = rng.gen_range(8..40);
        texts.insert(
            (&mut rng)
                .sample_iter(Alphanumeric)
                .take(len)
                .map(char::from)
                .collect::<String>(),
        );
    }
    let embs: Vec<Embedding> = texts.iter().map(|t| hash_embed(t, 128)).collect();
    let (mut total, mut pairs) = (0.0, 0usize);
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            total += embs[i].cosine(&embs[j]).abs();
            pairs += 1;
        }
    }
    let mean = total / pairs as f64;
    assert!(mean < 0.2, "mean |cos| = {mean}");
}

#[test]
fn near_strings_differ() {
    assert!(hash_embed("abc", 128).cosine(&hash_embed("abd", 128)) < 1.0);
    assert!(hash_embed("", 16).0.iter().all(|&v| v == 0.0));
}

#[test]
fn providers_are_referentially_transparent() {
    let d = common::mixed_dataset(8, 12);
    let rows = serialize_dataset(&d);
    let store = build_store(&HashEncoder::default(), &rows).unwrap();
    let file = FileEncoder::new(store.clone());
    for r in &rows {
        let a = file.embed(r).unwrap();
        let b = file.embed(r).unwrap();
        assert_eq!(
            a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(&a, store.get(r.row_id).unwrap());
    }
}

#[test]
fn corpus_roundtrip_and_shape() {
    let d = common::mixed_dataset(9, 5);
    let rows = serialize_dataset(&d);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.jsonl");
    write_corpus(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    for (line, r) in text.lines().zip(&rows) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 2);
        assert_eq!(v["row_id"].as_u64(), Some(r.row_id));
        assert_eq!(v["text"].as_str(), Some(r.text.as_str()));
    }
    let back = read_corpus(&path).unwrap();
    assert_eq!(
        back.iter().map(|r| &r.text).collect::<Vec<_>>(),
        rows.iter().map(|r| &r.text).collect::<Vec<_>>()
    );
}

fn header(n: u64, d: u64) -> Vec<u8> {
    let mut b = b"TGEM".to_vec();
    b.extend(1u32.to_le_bytes());
    b.extend(n.to_le_bytes());
    b.extend(d.to_le_bytes());
    b
}

#[test]
fn tgem_rejects_malformed_files() {
    let mut bad = header(1, 1);
    bad[..4].copy_from_slice(b"XXXX");
    let err = decode_tgem(&bad).unwrap_err();
    assert!(matches!(err, Error::BadMagic));
    assert!(err.to_string().contains("bad magic"));

    let mut short = header(10, 4);
    short.extend(vec![0u8; 120]);
    assert!(matches!(decode_tgem(&short), Err(Error::Truncated { .. })));

    assert!(decode_tgem(&header(1, 0)).is_err());

    let mut dup = header(2, 1);
    for _ in 0..2 {
        dup.extend(7u64.to_le_bytes());
        dup.extend(0.5f32.to_le_bytes());
    }
    assert!(matches!(decode_tgem(&dup), Err(Error::DuplicateRowId(7))));
}
