//! Protocol-level properties of the evaluation scenarios.

use ladder_core::dataio::{generate_synthetic, Dataset, LabelVector, Split, SyntheticSpec, Trial};
use ladder_core::embedder::{AdamWConfig, ArchitectureSpec, LRSchedule, TrainSpec};
use ladder_core::losses::{builtin_config, BuiltinConfig};
use ladder_core::mining::{BatchSize, BatchSpec};
use ladder_core::rng::SplitMix64;
use ladder_core::scenarios::{
    few_shot_curve, mean_accuracy, run_complete_loso, run_partial_loso, run_scenario, ClassifierKind, Scenario, ScenarioSpec,
};

fn dataset(seed: u64, noise_sd: f64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        n_subjects: 3,
        n_classes: 2,
        trials_per_cell_train: 6,
        trials_per_cell_test: 4,
        time_steps: 16,
        channels: 3,
        class_separation: 3.0,
        subject_separation: 3.0,
        noise_sd,
        seed,
    })
    .unwrap()
}

fn spec(scenario: Scenario, seed: u64) -> ScenarioSpec {
    let train = TrainSpec {
        loss: builtin_config(BuiltinConfig::B),
        batch: BatchSpec {
            size: BatchSize::PerCombination(2),
            ..Default::default()
        },
        steps: 40,
        seed: 0,
        arch: ArchitectureSpec::linear(16, 3, 4),
        schedule: LRSchedule {
            max_lr: 1e-2,
            ..Default::default()
        },
        optimizer: AdamWConfig::default(),
    };
    ScenarioSpec::new(scenario, "b", train, ClassifierKind::LogReg, seed)
}

fn perturb_subject(ds: &Dataset, subject: u32, split: Split) -> Dataset {
    let mut rng = SplitMix64::new(77);
    let trials = (0..ds.len())
        .map(|i| {
            let t = ds.trial(i);
            if ds.label(i).subject() != subject || ds.split(i) != split {
                return t.clone();
            }
            let (tt, c) = t.shape();
            let samples = t.samples().iter().map(|v| v + 3.0 * rng.next_gaussian()).collect();
            Trial::new(samples, tt, c, t.trial_id, t.order_index).unwrap()
        })
        .collect();
    ds.with_trials(trials).unwrap()
}

#[test]
fn held_out_subject_never_reaches_its_embedder() {
    let ds = dataset(1, 0.3);
    let held_out = 2;
    for split in [Split::Train, Split::Test] {
        let changed = perturb_subject(&ds, held_out, split);
        for scenario in [Scenario::CompleteLoso, Scenario::PartialLoso] {
            let s = spec(scenario, 4);
            let before = run_scenario(&ds, &s, None).unwrap();
            let after = run_scenario(&changed, &s, None).unwrap();
            for (b, a) in before.iter().zip(&after) {
                let same = b.embedder_digest == a.embedder_digest;
                match (b.subject == held_out, split) {
                    (true, _) | (false, Split::Test) => assert!(same, "{scenario} subject {}", b.subject),
                    (false, Split::Train) => assert!(!same, "{scenario} subject {}", b.subject),
                }
            }
        }
    }
}

#[test]
fn complete_loso_ignores_held_out_labels() {
    let ds = dataset(2, 0.3);
    let mut labels: Vec<LabelVector> = ds.labels().to_vec();
    for (i, l) in labels.iter_mut().enumerate() {
        if l.subject() == 0 {
            l.0[1] = 1 - l.0[1];
            assert_eq!(ds.label(i).subject(), 0);
        }
    }
    let flipped = ds.with_labels(labels).unwrap();
    let s = spec(Scenario::CompleteLoso, 3);
    let a = run_complete_loso(&ds, &s).unwrap();
    let b = run_complete_loso(&flipped, &s).unwrap();
    assert_eq!(a[0].embedder_digest, b[0].embedder_digest);
    assert!((a[0].accuracy + b[0].accuracy - 1.0).abs() < 1e-12);
}

#[test]
fn full_calibration_is_not_worse_than_one_shot() {
    let mut full = Vec::new();
    let mut one = Vec::new();
    for seed in 0..5 {
        let ds = dataset(10 + seed, 1e-3);
        let curve = few_shot_curve(&ds, &spec(Scenario::PartialLoso, seed), &[1, 6]).unwrap();
        one.push(curve.points[0].mean);
        full.push(curve.points[1].mean);
    }
    let (one, full) = (one.iter().sum::<f64>() / 5.0, full.iter().sum::<f64>() / 5.0);
    assert!(full >= one - 0.05, "full {full} vs m=1 {one}");
}

#[test]
fn calibration_helps_when_subjects_dominate() {
    let ds = generate_synthetic(&SyntheticSpec {
        n_subjects: 4,
        n_classes: 2,
        trials_per_cell_train: 10,
        trials_per_cell_test: 5,
        time_steps: 16,
        channels: 3,
        class_separation: 1.0,
        subject_separation: 6.0,
        noise_sd: 0.1,
        seed: 21,
    })
    .unwrap();
    let complete = mean_accuracy(&run_complete_loso(&ds, &spec(Scenario::CompleteLoso, 0)).unwrap());
    let partial = mean_accuracy(&run_partial_loso(&ds, &spec(Scenario::PartialLoso, 0), None).unwrap());
    assert!(partial >= complete, "partial {partial} < complete {complete}");
}
