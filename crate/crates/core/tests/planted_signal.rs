use rand::seq::SliceRandom;

use stance_core::analysis::{lexicon_correlations, Dimension, Lexicon};
use stance_core::llm::{LlmClient, MockBackend, MockPolicy, TruthIndex};
use stance_core::pipeline::{labelled_users, predict_llm, Method, RunConfig};
use stance_core::seed;
use stance_core::synth::{generate, generate_with_lexicon, SynthConfig};
use stance_core::{StanceLabel, TargetSpec, UserRecord};

const TRUMP: &str = "donald_trump";

/// P(Binomial(n, p) > n / 2) for odd n.
fn majority_correct(n: u64, p: f64) -> f64 {
    let choose = |k: u64| (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64);
    ((n / 2 + 1)..=n)
        .map(|k| choose(k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32))
        .sum()
}

#[test]
fn binomial_helper_matches_hand_values() {
    assert!((majority_correct(5, 0.7) - 0.83692).abs() < 1e-12);
    assert!((majority_correct(1, 0.3) - 0.3).abs() < 1e-12);
}

#[test]
fn pooled_accuracy_matches_binomial_majority() {
    let corpus = generate(&SynthConfig {
        n_users: 2000,
        tweets_per_user: 9,
        specific_per_target: 0,
        keyword_rate: 0.0,
        seed: 21,
        ..SynthConfig::default()
    })
    .unwrap();
    let target = TargetSpec::canonical(TRUMP).unwrap();
    let users = labelled_users(&corpus.users, TRUMP, None);
    let client = LlmClient::new(
        MockBackend::new(MockPolicy::planted(0.7, 2), TruthIndex::from_users(&corpus.users), std::slice::from_ref(&target)).unwrap(),
    );
    for n in [1u64, 5, 9] {
        let rows = predict_llm(&client, &users, &target, &RunConfig::new(Method::LlmPooled, n as usize), 0.0);
        let correct = rows
            .iter()
            .zip(&users)
            .filter(|(r, u)| r.predicted.label() == u.stance(TRUMP))
            .count();
        let observed = correct as f64 / users.len() as f64;
        let expected = majority_correct(n, 0.7);
        let se = (expected * (1.0 - expected) / users.len() as f64).sqrt();
        assert!(
            (observed - expected).abs() < 3.0 * se,
            "n = {n}: observed {observed:.4}, binomial {expected:.4}"
        );
    }
    assert_eq!(client.network_calls(), 0);
}

#[test]
fn shuffled_labels_give_a_calibrated_null() {
    let lexicon = Lexicon::bundled();
    let corpus = generate_with_lexicon(
        &SynthConfig {
            n_users: 300,
            tweets_per_user: 30,
            specific_per_target: 0,
            keyword_rate: 0.0,
            lexicon_base_rate: 0.05,
            seed: 22,
            ..SynthConfig::default()
        },
        &lexicon,
    )
    .unwrap();
    let mut labels: Vec<StanceLabel> = corpus.users.iter().map(|u| u.stance(TRUMP).unwrap()).collect();
    let mut shuffled: Vec<UserRecord> = corpus.users.clone();
    let mut rng = seed::rng(22, &[b"shuffle"]);
    let mut significant = [0usize; 10];
    let rounds = 100;
    for _ in 0..rounds {
        labels.shuffle(&mut rng);
        for (user, label) in shuffled.iter_mut().zip(&labels) {
            user.stances.insert(TRUMP.into(), *label);
        }
        let refs: Vec<&UserRecord> = shuffled.iter().collect();
        let rows = lexicon_correlations(&refs, TRUMP, &lexicon).unwrap();
        assert_eq!(rows.len(), Dimension::ALL.len());
        for (i, row) in rows.iter().enumerate() {
            assert!(row.r.abs() < 0.3, "{}: r = {}", row.feature, row.r);
            significant[i] += row.significant as usize;
        }
    }
    // 5% expected; 12 of 100 is beyond the 0.999 quantile of Binomial(100, 0.05)
    for (dim, count) in Dimension::ALL.iter().zip(significant) {
        assert!(count <= 12, "{dim}: {count} of {rounds} shuffles significant");
    }
}
