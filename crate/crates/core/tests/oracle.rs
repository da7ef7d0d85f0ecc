use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use clicksim::clicklog::PermutationMode;
use clicksim::metrics::{generate_synthetic, reverse_forward_ppl, Surrogate};
use clicksim::oracle::{ctr_by_rank, OracleSpec};
use clicksim::seqnet::NetDims;
use clicksim::train::TrainConfig;

const EXAM: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];

/// Overall test-set PPL of the oracle on its own 50k sessions, evaluated once
/// and frozen; agrees with the closed-form entropy below to 0.5%.
const FLOOR_50K: f64 = 1.6050525331440622;

fn oracle() -> OracleSpec {
    OracleSpec::random_pbm(EXAM.to_vec(), 20, 10, 3, &mut ChaCha8Rng::seed_from_u64(0))
}

fn binary_entropy_bits(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

#[test]
fn rank_ctr_matches_closed_form() {
    let spec = oracle();
    let sessions = spec.generate(50_000, "s", &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let n_pairs = (spec.n_queries() * spec.docs_per_query()) as f64;
    let mean_attr: f64 = spec.attr.iter().flatten().sum::<f64>() / n_pairs;
    for (t, (ctr, e)) in ctr_by_rank(&sessions, 5).iter().zip(EXAM).enumerate() {
        assert!((ctr - e * mean_attr).abs() < 0.01, "rank {t}: {ctr} vs {}", e * mean_attr);
    }
}

#[test]
fn ppl_floor_is_frozen_and_near_closed_form() {
    let spec = oracle();
    let sessions = spec.generate(50_000, "s", &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (at, overall) = spec.ppl(&sessions).unwrap();
    assert!((overall - FLOOR_50K).abs() < 1e-12, "{overall:?}");

    // documents are equally likely at every rank, so the expected per-rank
    // PPL is 2^(mean binary entropy over all (query, doc) pairs)
    let n_pairs = (spec.n_queries() * spec.docs_per_query()) as f64;
    for (t, e) in EXAM.iter().enumerate() {
        let h: f64 = spec.attr.iter().flatten().map(|a| binary_entropy_bits(e * a)).sum::<f64>() / n_pairs;
        let expect = 2f64.powf(h);
        assert!((at[t] / expect - 1.0).abs() < 0.005, "rank {t}: {} vs {expect}", at[t]);
    }
}

#[test]
fn coverage_is_symmetric_for_identical_logs() {
    let spec = OracleSpec::random_pbm(vec![1.0, 0.6, 0.3], 5, 6, 2, &mut ChaCha8Rng::seed_from_u64(2));
    let ds = spec.dataset(300, 50, 200, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let cfg = TrainConfig {
        emb_size: 4,
        hidden_size: 4,
        surrogate_epochs: 2,
        ..TrainConfig::default()
    };
    let dims = NetDims::for_dataset(&ds, cfg.emb_size, cfg.hidden_size);
    for kind in [Surrogate::Ubm, Surrogate::Neural] {
        let (rev, fwd) = reverse_forward_ppl(&ds.test, &ds.test, kind, dims, &cfg).unwrap();
        assert_eq!(rev, fwd, "{kind}");
    }
}

#[test]
fn reverse_ppl_of_a_good_simulator_approaches_the_floor() {
    // a PBM fitted to oracle data simulates logs whose UBM surrogate scores
    // real logs close to the oracle's own PPL
    let spec = oracle();
    let ds = spec.dataset(3000, 10, 500, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let dims = NetDims::for_dataset(&ds, 4, 4);
    let cfg = TrainConfig::default();
    let (pgm, _) = clicksim::pgm::fit(clicksim::pgm::PgmKind::Pbm, &ds.train.records, &Default::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let same = generate_synthetic(&pgm, &ds.test, 3, PermutationMode::None, &mut rng);
    let (rev, _) = reverse_forward_ppl(&same, &ds.test, Surrogate::Ubm, dims, &cfg).unwrap();
    let (floor_at, floor) = spec.ppl(&ds.test.raw).unwrap();
    assert_eq!(floor_at.len(), 5);
    assert!(rev >= floor - 0.02 && rev < floor * 1.05, "{rev} vs floor {floor}");
}
