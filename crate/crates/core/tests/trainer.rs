//! Early stopping, checkpointing, determinism and the framework
//! equivalences that must hold by construction.

use rlmildat::autodiff::gradcheck::check_gradients;
use rlmildat::autodiff::Value;
use rlmildat::config::{Framework, TrainConfig};
use rlmildat::data::bags::PAD_LANG;
use rlmildat::data::{synth_dataset, DatasetSplit, LabelKind, SplitName, SynthSpec};
use rlmildat::model::{load_checkpoint, serialize_checkpoint};
use rlmildat::trainer::{batch_task_loss, evaluate, evaluate_all, Trainer};
use rlmildat::Error;

fn data(n_speakers: usize, seed: u64) -> DatasetSplit {
    let spec = SynthSpec {
        n_speakers,
        dim: 6,
        bag_min: 3,
        bag_max: 8,
        pool_size: 4,
        whole_bag_size: 10,
        ..SynthSpec::default()
    };
    synth_dataset(&spec, seed).unwrap().split
}

fn cfg(framework: Framework, seed: u64) -> TrainConfig {
    TrainConfig {
        framework,
        label: LabelKind::Gender,
        whole_bag_size: 10,
        bag_size: 3,
        pool_size: 4,
        encoder_hidden: 8,
        hdim: 8,
        hp: 6,
        attention_dim: 4,
        epochs: 6,
        early_stopping_patience: 6,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    }
}

fn fit(split: &DatasetSplit, c: TrainConfig) -> Trainer {
    let mut t = Trainer::new(c, &split.meta).unwrap();
    t.fit(split, None).unwrap();
    t
}

/// Epoch at which a patience-`p` rule stops, replayed from the validation
/// scores alone.
fn expected_stop(vals: &[f64], patience: usize) -> Option<usize> {
    let mut best = f64::NEG_INFINITY;
    let mut since = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v > best {
            best = v;
            since = 0;
        } else {
            since += 1;
            if since >= patience {
                return Some(i + 1);
            }
        }
    }
    None
}

#[test]
fn early_stopping_follows_patience() {
    let split = data(40, 5);
    let mut stops = 0;
    for seed in 0..6 {
        // a full run gives the validation curve the short runs must follow
        let full = fit(&split, TrainConfig { epochs: 8, early_stopping_patience: 8, ..cfg(Framework::Mil, seed) });
        assert_eq!(full.state.history.len(), 8);
        let vals: Vec<f64> = full.state.history.iter().map(|r| r.val_macro_f1).collect();
        for patience in [1, 2, 3] {
            let mut t = Trainer::new(TrainConfig { epochs: 8, early_stopping_patience: patience, ..cfg(Framework::Mil, seed) }, &split.meta).unwrap();
            let summary = t.fit(&split, None).unwrap();
            match expected_stop(&vals, patience) {
                Some(e) => {
                    assert!(summary.stopped_early);
                    assert_eq!(summary.epochs_run, e, "seed {seed} patience {patience}");
                    stops += 1;
                }
                None => assert_eq!(summary.epochs_run, 8),
            }
            assert_eq!(t.state.history, full.state.history[..summary.epochs_run]);
        }
    }
    assert!(stops > 0, "no run exercised early stopping");
}

#[test]
fn patience_one_stops_right_after_a_worse_second_epoch() {
    let split = data(40, 5);
    // hunt for a seed whose second epoch does not improve; then it must stop there
    let mut found = false;
    for seed in 0..40 {
        let t = fit(&split, TrainConfig { epochs: 2, early_stopping_patience: 2, ..cfg(Framework::Mil, seed) });
        let v = &t.state.history;
        if v[1].val_macro_f1 <= v[0].val_macro_f1 {
            let mut t = Trainer::new(TrainConfig { epochs: 10, early_stopping_patience: 1, ..cfg(Framework::Mil, seed) }, &split.meta).unwrap();
            let s = t.fit(&split, None).unwrap();
            assert_eq!(s.epochs_run, 2);
            assert!(s.stopped_early);
            assert_eq!(s.best_epoch, 1);
            found = true;
            break;
        }
    }
    assert!(found);
}

#[test]
fn patience_at_least_epochs_runs_everything() {
    let split = data(40, 2);
    for fw in Framework::ALL {
        let t = fit(&split, TrainConfig { epochs: 5, early_stopping_patience: 5, ..cfg(fw, 1) });
        assert_eq!(t.state.history.len(), 5, "{fw}");
        assert_eq!(t.state.history.iter().map(|r| r.epoch).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);
    }
}

#[test]
fn checkpoint_holds_the_best_validation_model() {
    let split = data(40, 9);
    let dir = tempfile::tempdir().unwrap();
    for fw in Framework::ALL {
        let path = dir.path().join(format!("{fw}.rmck"));
        let mut t = Trainer::new(TrainConfig { epochs: 7, early_stopping_patience: 7, ..cfg(fw, 3) }, &split.meta).unwrap();
        let s = t.fit(&split, Some(&path)).unwrap();
        let best = t.state.history.iter().map(|r| r.val_macro_f1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(s.best_val_macro_f1, best);
        // first epoch attaining the maximum
        let first = t.state.history.iter().position(|r| r.val_macro_f1 == best).unwrap() + 1;
        assert_eq!(s.best_epoch, first);
        let ck = load_checkpoint(&path).unwrap();
        let val = evaluate(&ck.model, &ck.config, &split.validation, &split.meta).unwrap().macro_f1;
        assert_eq!(val, best, "{fw}");
        // restore_best leaves the live model equal to the checkpoint
        assert_eq!(serialize_checkpoint(&t.config, &t.model), std::fs::read(&path).unwrap());
    }
}

#[test]
fn running_best_is_non_decreasing() {
    let split = data(40, 4);
    let t = fit(&split, TrainConfig { epochs: 8, early_stopping_patience: 8, ..cfg(Framework::RlmilDat, 0) });
    let mut best = f64::NEG_INFINITY;
    for r in &t.state.history {
        let next = best.max(r.val_macro_f1);
        assert!(next >= best);
        best = next;
    }
    assert_eq!(best, t.state.best_val);
}

#[test]
fn training_is_bitwise_deterministic() {
    let split = data(40, 6);
    let dir = tempfile::tempdir().unwrap();
    for fw in Framework::ALL {
        let run = |name: &str| {
            let path = dir.path().join(name);
            let mut t = Trainer::new(cfg(fw, 8), &split.meta).unwrap();
            t.fit(&split, Some(&path)).unwrap();
            (t.history_csv(), std::fs::read(&path).unwrap())
        };
        let a = run("a");
        assert_eq!(a, run("b"), "{fw}");
    }
}

#[test]
fn zero_reversal_weight_reproduces_rlmil() {
    let split = data(40, 1);
    for seed in 0..3 {
        let plain = fit(&split, cfg(Framework::Rlmil, seed));
        let dat = fit(&split, TrainConfig { grl_lambda: 0.0, ..cfg(Framework::RlmilDat, seed) });
        assert_eq!(plain.history_csv(), dat.history_csv(), "seed {seed}");
        let a = evaluate_all(&plain.model, &plain.config, &split).unwrap();
        let b = evaluate_all(&dat.model, &dat.config, &split).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn whole_bag_selection_reproduces_mil_task_path() {
    // with every instance forced into the subset the policy has nothing to
    // choose, so the task side sees exactly what MIL sees
    let split = data(40, 3);
    for seed in 0..3 {
        let base = TrainConfig { bag_size: 10, pool_size: 1, ..cfg(Framework::Mil, seed) };
        let mil = fit(&split, base.clone());
        let rl = fit(&split, TrainConfig { framework: Framework::Rlmil, ..base });
        for (m, r) in mil.state.history.iter().zip(&rl.state.history) {
            assert_eq!(m.l_task, r.l_task, "seed {seed} epoch {}", m.epoch);
            assert_eq!(m.val_macro_f1, r.val_macro_f1);
        }
        for name in SplitName::ALL {
            let a = evaluate(&mil.model, &mil.config, split.part(name), &split.meta).unwrap();
            let b = evaluate(&rl.model, &rl.config, split.part(name), &split.meta).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn total_loss_is_the_sum_of_its_parts() {
    let split = data(40, 2);
    for fw in [Framework::Rlmil, Framework::RlmilDat] {
        let t = fit(&split, TrainConfig { epochs: 2, early_stopping_patience: 2, ..cfg(fw, 4) });
        assert!(!t.state.trace.is_empty());
        for (_, id, l) in &t.state.trace {
            assert!((l.l_total - (l.l_p + l.l_reg + l.l_domain)).abs() <= 1e-12, "{fw} {id}");
            if fw == Framework::Rlmil {
                assert_eq!(l.l_domain, 0.0);
            }
        }
        for r in &t.state.history {
            assert!((r.l_total - (r.l_p + r.l_reg + r.l_domain)).abs() <= 1e-12);
        }
    }
}

#[test]
fn single_class_is_memorised() {
    let mut split = data(40, 7);
    for bag in split.train.iter_mut().chain(split.validation.iter_mut()).chain(split.test.iter_mut()) {
        bag.gender_label = 0;
    }
    let t = fit(&split, TrainConfig { epochs: 40, early_stopping_patience: 40, lr_task: 0.2, lr_encoder: 0.2, ..cfg(Framework::Mil, 0) });
    let last = t.state.history.last().unwrap();
    assert!(last.l_task < 0.01, "final task loss {}", last.l_task);
    assert!(t.state.history.windows(2).filter(|w| w[1].l_task < w[0].l_task).count() >= 35);
}

#[test]
fn one_epoch_reduces_task_loss_for_most_seeds() {
    let spec = SynthSpec { n_speakers: 64, pool_size: 4, ..SynthSpec::default() };
    let split = synth_dataset(&spec, 0).unwrap().split;
    let mut improved = 0;
    for seed in 0..5 {
        let c = TrainConfig { whole_bag_size: spec.whole_bag_size, pool_size: spec.pool_size, ..cfg(Framework::Mil, seed) };
        let mut t = Trainer::new(c, &split.meta).unwrap();
        let before = batch_task_loss(&t.model, &split.train, LabelKind::Gender).unwrap().item();
        t.train_epoch(&split.train, 0.0).unwrap();
        let after = batch_task_loss(&t.model, &split.train, LabelKind::Gender).unwrap().item();
        if after < before {
            improved += 1;
        }
    }
    assert!(improved >= 4, "only {improved}/5 seeds improved");
}

#[test]
fn batch_loss_gradients_match_finite_differences() {
    let split = data(40, 3);
    let t = Trainer::new(cfg(Framework::Mil, 1), &split.meta).unwrap();
    let batch = &split.train[..4];
    let params = t.model.parameters();
    let values: Vec<Value> = params.iter().map(|p| p.value.clone()).collect();
    let report = check_gradients(&values, || batch_task_loss(&t.model, batch, LabelKind::Gender), 1e-5).unwrap();
    assert!(report.checked > 100);
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn padded_rows_never_reach_the_domain_head() {
    let split = data(40, 3);
    let t = Trainer::new(cfg(Framework::RlmilDat, 1), &split.meta).unwrap();
    let domain = t.model.domain.as_ref().unwrap();
    let bag = split.train.iter().find(|b| b.n_real < b.embeddings.nrows()).unwrap();
    let all = Value::constant(bag.embeddings.mapv(f64::from));
    let h = t.model.encoder.encode(&all).unwrap();
    assert_eq!(bag.lang_ids[bag.n_real], PAD_LANG);
    assert!(matches!(domain.domain_logits(&h, &bag.lang_ids, 1.0), Err(Error::Contract(_))));
    let real = t.model.encoder.encode(&Value::constant(bag.real_instances())).unwrap();
    assert!(domain.domain_logits(&real, &bag.lang_ids[..bag.n_real], 1.0).is_ok());
}

#[test]
fn evaluation_is_repeatable() {
    let split = data(40, 8);
    let t = fit(&split, cfg(Framework::RlmilDat, 2));
    let a = evaluate_all(&t.model, &t.config, &split).unwrap();
    assert_eq!(a, evaluate_all(&t.model, &t.config, &split).unwrap());
}

#[test]
fn constant_predictor_scores_the_hand_computed_macro_f1() {
    let split = data(60, 4);
    let t = Trainer::new(TrainConfig { pooling: rlmildat::mil::PoolKind::Mean, ..cfg(Framework::Mil, 0) }, &split.meta).unwrap();
    let test = &split.test;
    let ones = test.iter().filter(|b| b.gender_label == 1).count();
    let majority = usize::from(2 * ones > test.len());
    // zero every head weight so the logits are the output bias alone
    for p in t.model.head.parameters() {
        let mut z = p.value.data().mapv(|_| 0.0);
        if p.name == "head.classifier.1.bias" {
            z[[0, majority]] = 1.0;
        }
        p.value.set_data(z).unwrap();
    }
    let m = evaluate(&t.model, &t.config, test, &split.meta).unwrap();
    // F1 of the majority class is 2p/(1+p), the other class scores 0
    let p = test.iter().filter(|b| usize::from(b.gender_label) == majority).count() as f64 / test.len() as f64;
    assert!((m.macro_f1 - p / (1.0 + p)).abs() < 1e-12, "{} vs {}", m.macro_f1, p / (1.0 + p));
    assert!((m.accuracy - p).abs() < 1e-12);
}
