mod common;

use common::{ctx, frozen_classifier, tiny, tiny_model, Tiny};
use dastkit::corpus::{CorpusSplit, Domain, SplitName, Vocabulary};
use dastkit::nets::TransferModel;
use dastkit::objectives::{ae_loss_target, Tape};
use dastkit::training::{
    load_checkpoint, load_classifier, load_model, save_checkpoint, save_classifier, save_model,
    BestSnapshot, DevMetrics, Regime, TrainState,
};
use dastkit::Error;

fn snapped(t: &Tiny, seed: u64) -> TransferModel {
    let mut m = tiny_model(t.vocab.len(), true, seed);
    m.params_mut().snap_f32();
    m
}

fn probe_loss(t: &Tiny, model: &TransferModel) -> f64 {
    let batch: Vec<_> = t.target.iter().collect();
    let mut tape = Tape::frozen(model);
    let v = ae_loss_target(&mut tape, &ctx(t, 1.0, false), &batch).unwrap();
    tape.value(v)
}

fn other_vocab(t: &Tiny) -> Vocabulary {
    let c = CorpusSplit::new(SplitName::Train, Domain::Source, t.source.clone()).unwrap();
    Vocabulary::build(&[&c], 1, 100).unwrap()
}

#[test]
fn a_saved_model_reproduces_the_probe_loss() {
    let t = tiny();
    let model = snapped(&t, 1);
    let dir = tempfile::tempdir().unwrap();
    let regime: Regime = "dast".parse().unwrap();
    save_model(&model, &t.vocab, &t.styles, regime, &serde_json::json!({}), dir.path()).unwrap();
    let (back, vocab, manifest) = load_model(dir.path(), Some(&t.vocab)).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(vocab.hash(), t.vocab.hash());
    assert_eq!(manifest.styles, t.styles.names());
    assert!((probe_loss(&t, &back) - probe_loss(&t, &model)).abs() <= 1e-7);
}

#[test]
fn a_different_vocabulary_is_refused() {
    let t = tiny();
    let dir = tempfile::tempdir().unwrap();
    let regime: Regime = "baseline".parse().unwrap();
    save_model(&snapped(&t, 2), &t.vocab, &t.styles, regime, &serde_json::json!({}), dir.path())
        .unwrap();
    let err = load_model(dir.path(), Some(&other_vocab(&t))).unwrap_err();
    assert!(matches!(err, Error::IncompatibleCheckpoint(_)), "{err}");
}

#[test]
fn training_state_round_trips_and_inference_uses_the_best_snapshot() {
    let t = tiny();
    let regime: Regime = "dast".parse().unwrap();
    let mut state = TrainState::new(regime, snapped(&t, 3));
    state.step = 17;
    state.stalls = 2;
    state.running.insert("total".into(), 1.25);
    let best = snapped(&t, 4);
    state.best = Some(BestSnapshot {
        step: 10,
        metrics: DevMetrics { s_acc: 90.0, bleu: 30.0, g_score: 51.96, d_acc: Some(99.0) },
        params: best.params().clone(),
    });
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&state, &t.vocab, &t.styles, &serde_json::json!({"k": 1}), dir.path()).unwrap();

    let (back, manifest) = load_checkpoint(dir.path(), &t.vocab).unwrap();
    assert_eq!(back.step, 17);
    assert_eq!(back.stalls, 2);
    assert_eq!(back.running, state.running);
    assert_eq!(back.optimizer, state.optimizer);
    assert_eq!(back.model.params(), state.model.params());
    assert_eq!(back.best, state.best);
    assert_eq!(manifest.regime, "dast");

    let (served, _, _) = load_model(dir.path(), None).unwrap();
    assert_eq!(served.params(), best.params());
    assert_ne!(served.params(), state.model.params());
}

#[test]
fn classifiers_keep_their_parameters_and_freeze_flag() {
    let t = tiny();
    let c = frozen_classifier(t.vocab.len(), 5);
    let dir = tempfile::tempdir().unwrap();
    save_classifier(&c, &t.vocab, "style-target", 97.5, dir.path()).unwrap();
    let (back, manifest) = load_classifier(dir.path(), Some(&t.vocab)).unwrap();
    assert!(back.is_frozen());
    assert_eq!(back.labels(), c.labels());
    assert_eq!(manifest.role, "style-target");
    assert_eq!(manifest.dev_accuracy, 97.5);
    // the stored blobs are f32, so compare at that precision
    for ((_, a), (_, b)) in back.params().iter().zip(c.params().iter()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
    let err = load_classifier(dir.path(), Some(&other_vocab(&t))).unwrap_err();
    assert!(matches!(err, Error::IncompatibleCheckpoint(_)), "{err}");
}
