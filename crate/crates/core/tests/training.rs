mod common;

use rprm::corpus::{k_core_filter, time_split, SplitRatios};
use rprm::encoder::hash_encode;
use rprm::eval::Interactions;
use rprm::learn::{fit, EpochLog, LossConfig, PropLossKind, SamplerConfig, SamplerKind, Similarity};
use rprm::model::{ReviewInputs, Variant};
use rprm::props::{assemble, ScorerConfig};
use rprm::synth::{generate, SynthConfig};

fn strip_time(log: &[EpochLog]) -> Vec<EpochLog> {
    log.iter().map(|e| EpochLog { wall_time_secs: 0.0, ..e.clone() }).collect()
}

#[test]
fn bundled_fixture_matches_generator() {
    let f = tempfile::NamedTempFile::new().unwrap();
    rprm::synth::write_jsonl(f.path(), &generate(&SynthConfig::default()).unwrap()).unwrap();
    let fresh = std::fs::read(f.path()).unwrap();
    let bundled = std::fs::read(common::fixture_path()).unwrap();
    assert!(fresh == bundled, "fixture is stale, regenerate with `rprm gen-toy`");
}

#[test]
fn same_seed_reproduces_training() {
    let toy = common::load_toy();
    let cfg = common::desk_model(Variant::Full);
    let inputs = ReviewInputs::from_split(&toy.ds, &toy.split, &toy.embeds, &toy.props, &cfg).unwrap();
    let mut tc = common::desk_train(LossConfig { prop: PropLossKind::Ui, similarity: Similarity::InverseKl, alpha: 0.5 });
    tc.optimizer.max_epochs = 3;
    tc.sampler = SamplerConfig { kind: SamplerKind::PropSample, similarity: Similarity::InverseKl, pool_size: 10 };
    let run = |seed| fit(&cfg, common::EMBED_DIM, &toy.interactions, Some(&inputs), &tc, seed, |_| Ok(())).unwrap();
    let (a, b, c) = (run(3), run(3), run(4));
    assert_eq!(strip_time(&a.log), strip_time(&b.log));
    assert_eq!(a.model.params, b.model.params);
    assert_ne!(a.model.params, c.model.params);
}

#[test]
fn training_improves_validation_map_on_small_corpus() {
    let raw = generate(&SynthConfig { users: 20, ..SynthConfig::default() }).unwrap();
    let ds = k_core_filter(&raw, 3).unwrap();
    let split = time_split(&ds, SplitRatios::default()).unwrap();
    let props = assemble(&ds, &ScorerConfig::default()).unwrap();
    let embeds = hash_encode(&ds, common::EMBED_DIM, common::HASH_SEED).unwrap();
    let interactions = Interactions::new(&ds, &split);
    for variant in [Variant::Full, Variant::BprMf] {
        let cfg = common::desk_model(variant);
        let inputs = ReviewInputs::from_split(&ds, &split, &embeds, &props, &cfg).unwrap();
        let tc = common::desk_train(LossConfig::default());
        let mut epochs = 0;
        let out = fit(&cfg, common::EMBED_DIM, &interactions, Some(&inputs), &tc, 0, |_| {
            epochs += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(epochs, out.log.len());
        assert!(
            out.best_valid_map > out.initial_valid_map,
            "{}: {} vs {}",
            variant.label(),
            out.best_valid_map,
            out.initial_valid_map
        );
    }
}
