mod common;

use common::{brute_force_bleu, words};
use dastkit::eval::{bleu, bleu_stats};
use dastkit::Error;
use proptest::prelude::*;

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..9)
        .prop_map(|ws| ws.into_iter().map(String::from).collect())
}

fn corpus() -> impl Strategy<Value = (Vec<Vec<String>>, Vec<Vec<Vec<String>>>)> {
    prop::collection::vec((sentence(), prop::collection::vec(sentence(), 1..3)), 1..6)
        .prop_map(|pairs| pairs.into_iter().unzip())
}

proptest! {
    #[test]
    fn agrees_with_the_oracle_on_multi_reference_corpora((hyps, refs) in corpus()) {
        let got = bleu(&hyps, &refs).unwrap();
        prop_assert_eq!(got, brute_force_bleu(&hyps, &refs));
        prop_assert!((0.0..=100.0).contains(&got));
    }

    #[test]
    fn sentence_order_does_not_matter((hyps, refs) in corpus(), k in 0usize..6) {
        let mut h = hyps.clone();
        let mut r = refs.clone();
        let k = k % h.len();
        h.rotate_left(k);
        r.rotate_left(k);
        prop_assert_eq!(bleu_stats(&hyps, &refs).unwrap(), bleu_stats(&h, &r).unwrap());
    }
}

#[test]
fn a_corpus_scores_on_pooled_counts() {
    // short sentences only reach 4-grams through pooling across the corpus
    let hyps = vec![words("the cat sat on the mat"), words("a dog")];
    let refs = vec![vec![words("the cat sat on a mat")], vec![words("a dog barked")]];
    let got = bleu(&hyps, &refs).unwrap();
    assert_eq!(got, brute_force_bleu(&hyps, &refs));
    assert!(got > 0.0 && got < 100.0);
}

#[test]
fn closest_reference_length_breaks_ties_toward_the_shorter() {
    let hyps = vec![words("a b c d")];
    let refs = vec![vec![words("a b c d e"), words("a b c")]];
    assert_eq!(bleu_stats(&hyps, &refs).unwrap().ref_len, 3);
}

#[test]
fn empty_or_misaligned_input_is_rejected() {
    assert!(matches!(bleu(&[], &[]), Err(Error::InputMismatch(_))));
    let hyps = vec![words("a b")];
    assert!(matches!(bleu(&hyps, &[]), Err(Error::InputMismatch(_))));
    assert!(matches!(bleu(&hyps, &[vec![]]), Err(Error::InputMismatch(_))));
}

#[test]
fn empty_hypotheses_score_zero() {
    let got = bleu(&[vec![]], &[vec![words("a b c d")]]).unwrap();
    assert_eq!(got, 0.0);
}
