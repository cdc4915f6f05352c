use convoscan::math::{Rng, Tensor2};
use convoscan::scd::{chunk_and_pad, ConversationSequence};
use proptest::prelude::*;

fn seq(n: usize, dim: usize) -> ConversationSequence<f32> {
    let data: Vec<f32> = (0..n * dim).map(|i| i as f32).collect();
    ConversationSequence {
        id: format!("c{n}"),
        vectors: Tensor2::from_vec(n, dim, data).unwrap(),
        label: Some(n.is_multiple_of(2)),
    }
}

#[test]
fn reference_lengths() {
    for (n, parts) in [(1, 1), (99, 1), (100, 1), (101, 2), (250, 3), (501, 6)] {
        let chunks = chunk_and_pad(&seq(n, 2), 100).unwrap();
        assert_eq!(chunks.len(), parts, "length {n}");
        let valid: Vec<usize> = chunks.iter().map(|c| c.valid_len()).collect();
        assert_eq!(valid.iter().sum::<usize>(), n);
        assert!(valid[..parts - 1].iter().all(|&v| v == 100));
    }
}

#[test]
fn padding_is_zero_rows_after_the_data() {
    let chunks = chunk_and_pad(&seq(250, 2), 100).unwrap();
    let last = chunks[2].matrix();
    assert_eq!(last.shape(), (100, 2));
    assert_eq!(last.row(0), &[400.0, 401.0]);
    assert_eq!(last.row(49), &[498.0, 499.0]);
    assert!((50..100).all(|r| last.row(r) == [0.0, 0.0]));
}

#[test]
fn chunks_inherit_id_and_label() {
    let chunks = chunk_and_pad(&seq(250, 1), 100).unwrap();
    for (i, c) in chunks.iter().enumerate() {
        assert_eq!(c.conversation, "c250");
        assert_eq!(c.part, i);
        assert_eq!(c.label, Some(true));
    }
}

#[test]
fn zero_chunk_length_is_rejected() {
    assert!(chunk_and_pad(&seq(3, 1), 0).is_err());
}

proptest! {
    #[test]
    fn concatenated_chunks_rebuild_the_sequence(n in 1usize..400, len in 1usize..120, seed in 0u64..100) {
        let mut rng = Rng::new(seed);
        let s = ConversationSequence {
            id: "x".into(),
            vectors: Tensor2::<f32>::uniform(n, 3, 1, &mut rng),
            label: None,
        };
        let chunks = chunk_and_pad(&s, len).unwrap();
        prop_assert_eq!(chunks.len(), n.div_ceil(len));
        let rebuilt: Vec<f32> = chunks.iter().flat_map(|c| c.rows.as_slice().to_vec()).collect();
        prop_assert_eq!(rebuilt.as_slice(), s.vectors.as_slice());
    }
}
