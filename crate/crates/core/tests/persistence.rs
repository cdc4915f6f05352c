use std::fs;
use std::path::Path;

use convoscan::author::{FeatureVocab, ShallowModel};
use convoscan::lm::{LanguageModel, LmConfig};
use convoscan::math::{Rng, Tensor2};
use convoscan::preprocess::Vocabulary;
use convoscan::scd::{ConversationSequence, ScdConfig, ScdModel};
use convoscan::store::{self, load_any, AnyModel, Container, ModelKind, FORMAT_VERSION, MAGIC};
use convoscan::Error;

fn lm(bias: bool) -> LanguageModel<f32> {
    let vocab = Vocabulary::from_tokens(["hi", "there", "tab\there", "new\nline", "back\\slash"]);
    LanguageModel::new(
        vocab,
        &LmConfig {
            embed_dim: 4,
            hidden_dim: 5,
            bias,
        },
        &mut Rng::new(1),
    )
}

fn scd(masked: bool) -> ScdModel<f32> {
    let cfg = ScdConfig {
        hidden_dim: 3,
        chunk_len: 7,
        bias: true,
        masked,
    };
    ScdModel::new(5, &cfg, &mut Rng::new(2))
}

fn author(bigrams: bool) -> ShallowModel<f32> {
    let feats = vec!["a".to_string(), "b".to_string(), "a b".to_string()];
    ShallowModel::new(
        FeatureVocab::from_features(feats, bigrams).unwrap(),
        4,
        &mut Rng::new(3),
    )
}

fn vectors() -> Vec<ConversationSequence<f32>> {
    let mut rng = Rng::new(4);
    vec![
        ConversationSequence {
            id: "one".into(),
            vectors: Tensor2::uniform(3, 5, 1, &mut rng),
            label: Some(true),
        },
        ConversationSequence {
            id: "two".into(),
            vectors: Tensor2::uniform(1, 5, 1, &mut rng),
            label: Some(false),
        },
        ConversationSequence {
            id: "three".into(),
            vectors: Tensor2::uniform(2, 5, 1, &mut rng),
            label: None,
        },
    ]
}

fn round_trip<M: store::Persist + PartialEq + std::fmt::Debug>(model: &M, dir: &Path, name: &str) {
    let a = dir.join(format!("{name}.bin"));
    let b = dir.join(format!("{name}-again.bin"));
    store::save(model, &a).unwrap();
    let back: M = store::load(&a).unwrap();
    assert_eq!(&back, model, "{name}");
    store::save(&back, &b).unwrap();
    assert_eq!(
        fs::read(&a).unwrap(),
        fs::read(&b).unwrap(),
        "{name} re-save differs"
    );
}

#[test]
fn every_kind_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    round_trip(&lm(true), dir.path(), "lm");
    round_trip(&lm(false), dir.path(), "lm-nobias");
    round_trip(&scd(true), dir.path(), "scd");
    round_trip(&scd(false), dir.path(), "scd-unmasked");
    round_trip(&author(false), dir.path(), "author");
    round_trip(&author(true), dir.path(), "author-bigrams");
    round_trip(&vectors(), dir.path(), "vectors");
}

#[test]
fn load_any_dispatches_on_kind() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.bin");
    store::save(&scd(true), &p).unwrap();
    assert!(matches!(load_any(&p).unwrap(), AnyModel::Scd(_)));
    store::save(&author(false), &p).unwrap();
    assert!(matches!(load_any(&p).unwrap(), AnyModel::Author(_)));
    store::save(&lm(true), &p).unwrap();
    assert!(matches!(load_any(&p).unwrap(), AnyModel::Lm(_)));
}

#[test]
fn loading_the_wrong_kind_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("lm.bin");
    store::save(&lm(true), &p).unwrap();
    assert!(matches!(
        store::load::<ScdModel<f32>>(&p),
        Err(Error::Format(_))
    ));
}

#[test]
fn header_layout() {
    let bytes = Container::new(ModelKind::Scd).to_bytes();
    assert_eq!(&bytes[..8], &MAGIC);
    assert_eq!(
        u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
        FORMAT_VERSION
    );
    let mlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    assert_eq!(&bytes[16..16 + mlen], b"kind=scd\n");
    // Empty payload, then the CRC-32 of nothing.
    assert_eq!(bytes.len(), 16 + mlen + 4);
    assert_eq!(&bytes[16 + mlen..], &0u32.to_le_bytes());
}

#[test]
fn every_single_byte_payload_flip_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.bin");
    store::save(&author(false), &p).unwrap();
    let good = fs::read(&p).unwrap();
    let mlen = u32::from_le_bytes(good[12..16].try_into().unwrap()) as usize;
    for i in 16 + mlen..good.len() {
        let mut bad = good.clone();
        bad[i] ^= 0x20;
        fs::write(&p, &bad).unwrap();
        assert!(
            matches!(
                store::load::<ShallowModel<f32>>(&p),
                Err(Error::Corruption(_))
            ),
            "byte {i}"
        );
    }
}

#[test]
fn truncation_is_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("lm.bin");
    store::save(&lm(true), &p).unwrap();
    let good = fs::read(&p).unwrap();
    for cut in [12, 20, good.len() / 2, good.len() - 1] {
        fs::write(&p, &good[..cut]).unwrap();
        assert!(
            matches!(
                store::load::<LanguageModel<f32>>(&p),
                Err(Error::Corruption(_))
            ),
            "cut at {cut}"
        );
    }
}

#[test]
fn version_and_magic_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("lm.bin");
    store::save(&lm(true), &p).unwrap();
    let good = fs::read(&p).unwrap();

    let mut newer = good.clone();
    newer[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    fs::write(&p, &newer).unwrap();
    match store::load::<LanguageModel<f32>>(&p) {
        Err(Error::Version { found, supported }) => {
            assert_eq!((found, supported), (FORMAT_VERSION + 1, FORMAT_VERSION))
        }
        other => panic!("expected a version error, got {other:?}"),
    }

    let mut alien = good.clone();
    alien[..8].copy_from_slice(b"NOTMODEL");
    fs::write(&p, &alien).unwrap();
    assert!(matches!(
        store::load::<LanguageModel<f32>>(&p),
        Err(Error::Format(_))
    ));
}

#[test]
fn size_cap_is_enforced() {
    let c = {
        let mut c = Container::new(ModelKind::Vectors);
        c.push_tensor("x", Tensor2::zeros(10, 10));
        c.to_bytes()
    };
    assert!(matches!(
        Container::from_bytes(&c, 100),
        Err(Error::Format(_))
    ));
    assert!(Container::from_bytes(&c, c.len() as u64).is_ok());
}

#[test]
fn unwritable_and_missing_paths_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    fs::write(&file, "x").unwrap();
    // A regular file used as a directory cannot be written into, even as root.
    let under_file = file.join("model.bin");
    assert!(matches!(
        store::save(&lm(true), &under_file),
        Err(Error::Io { .. })
    ));
    assert!(matches!(
        store::load::<LanguageModel<f32>>(&dir.path().join("absent.bin")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn saves_replace_the_file_without_leftovers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.bin");
    store::save(&author(false), &p).unwrap();
    let before = fs::read(&p).unwrap();
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    store::save(&author(true), &p).unwrap();
    assert_ne!(fs::read(&p).unwrap(), before);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}
