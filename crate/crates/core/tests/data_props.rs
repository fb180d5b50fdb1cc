use evifusion::config::RunConfig;
use evifusion::data::synthetic::{generate_synthetic, BlockConfig, SyntheticConfig, TextConfig};
use evifusion::data::{class_weights, split, Cell, Dataset, PreprocessState};
use evifusion::experiment::{load_data, prepare, run_seed};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn two_source(n: usize, positive_rate: f64, info: f64, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n,
        positive_rate,
        seed,
        blocks: vec![BlockConfig { name: "structured".into(), numerical: 4, categorical: 0, informativeness: info }],
        text: Some(TextConfig { name: "notes".into(), dim: 4, informativeness: info }),
        ..SyntheticConfig::default()
    }
}

fn run_config(synth: SyntheticConfig) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.synthetic = Some(synth);
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn class_weights_rebalance_counts(labels in prop::collection::vec(0usize..3, 3..400)) {
        let mut counts = [0usize; 3];
        labels.iter().for_each(|&y| counts[y] += 1);
        prop_assume!(counts.iter().all(|&c| c > 0));
        let w = class_weights(&labels, 3).unwrap();
        let weighted: f64 = w.iter().zip(counts).map(|(w, c)| w * c as f64).sum();
        prop_assert!((weighted - labels.len() as f64).abs() <= 1e-12 * labels.len() as f64);
    }

    #[test]
    fn split_is_a_partition(n in 10usize..2000, seed in any::<u64>()) {
        let s = split(n, seed).unwrap();
        prop_assert_eq!(s.train.len(), n * 3 / 5);
        prop_assert_eq!(s.val.len(), n / 5);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split(n, seed).unwrap(), s);
    }
}

#[test]
fn preprocessing_sees_only_the_training_split() {
    let synth = SyntheticConfig { n: 300, missing_rate: 0.1, ..SyntheticConfig::default() };
    let cfg = run_config(synth.clone());
    let dataset = generate_synthetic(&synth).unwrap();
    let prepared = prepare(&cfg, &dataset, 4).unwrap();

    let refit = PreprocessState::fit(dataset.schema(), &dataset.subset(&prepared.split.train)).unwrap();
    assert_eq!(refit, prepared.state);

    // Scrambling every held-out record must not move any statistic.
    let mut records = dataset.records().to_vec();
    for &i in prepared.split.val.iter().chain(&prepared.split.test) {
        for cell in &mut records[i].features {
            *cell = match cell {
                Cell::Num(v) => Cell::Num(*v * 100.0 + 7.0),
                Cell::Cat(_) => Cell::Cat("unseen".into()),
                Cell::Missing => Cell::Missing,
            };
        }
    }
    let scrambled = Dataset::new(dataset.schema().clone(), records).unwrap();
    let again = prepare(&cfg, &scrambled, 4).unwrap();
    assert_eq!(again.state, prepared.state);
    assert_eq!(again.class_weights, prepared.class_weights);
}

#[test]
fn positive_rate_within_binomial_bound() {
    let synth = SyntheticConfig { n: 5000, positive_rate: 0.118, seed: 7, ..SyntheticConfig::default() };
    let data = generate_synthetic(&synth).unwrap();
    let positives = data.labels().iter().filter(|&&y| y == 1).count() as f64;
    let n = synth.n as f64;
    let sigma = (n * 0.118 * (1.0 - 0.118)).sqrt();
    assert!((positives - n * 0.118).abs() <= 3.0 * sigma, "{positives} positives");
}

#[test]
fn uninformative_sources_give_chance_auroc() {
    let cfg = run_config(two_source(5000, 0.5, 0.0, 21));
    let data = load_data(&cfg).unwrap();
    let run = run_seed(&cfg, &data, 0).unwrap();
    let auroc = run.report.metrics.auroc;
    assert!((0.45..=0.55).contains(&auroc), "auroc {auroc}");
}

#[test]
fn fused_model_approaches_the_bayes_rule() {
    // Each source is an isotropic Gaussian pair whose means sit `delta` apart,
    // independent given the class. The log-likelihood ratio is a sum of
    // projections with mean gap and variance both equal to sum(delta^2), so
    // the Bayes AUROC is Phi(sqrt(sum(delta^2) / 2)).
    let delta: f64 = 1.5;
    let bayes = Normal::new(0.0, 1.0).unwrap().cdf((2.0 * delta * delta / 2.0).sqrt());
    let cfg = run_config(two_source(5000, 0.3, delta, 22));
    let data = load_data(&cfg).unwrap();
    let run = run_seed(&cfg, &data, 0).unwrap();
    let auroc = run.report.metrics.auroc;
    assert!((auroc - bayes).abs() <= 0.03, "auroc {auroc} vs bayes {bayes}");
}
