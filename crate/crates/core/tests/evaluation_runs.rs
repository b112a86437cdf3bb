use cloudburst_core::evaluation::benchmark::{batch_seeds, compare, run_benchmark, run_campaign};
use cloudburst_core::evaluation::pipeline::{Component, LearnedState, Mode, PipelineConfig};
use std::sync::Arc;

use cloudburst_core::evaluation::run::{lead_counts, run_event, EventRun, RunOptions, ScheduledDecision};
use cloudburst_core::runtime::OperatorDecision;
use cloudburst_core::world::generate_scenario;

const MODES: [Mode; 5] = [
    Mode::Mas,
    Mode::Baseline,
    Mode::Ablation(Component::Initiation),
    Mode::Ablation(Component::Downscaling),
    Mode::Ablation(Component::Learning),
];

#[test]
fn every_configuration_consumes_the_same_observations() {
    let config = PipelineConfig::default();
    let learned = LearnedState::initial(&config);
    for seed in 1..=3 {
        let sc = generate_scenario(&config.scenario, seed).unwrap();
        let hashes: Vec<String> = MODES
            .iter()
            .map(|&m| run_event(&sc, &config, m, &learned, &RunOptions::default()).unwrap().input_hash)
            .collect();
        assert!(hashes.windows(2).all(|w| w[0] == w[1]), "seed {seed}: {hashes:?}");
    }
}

#[test]
fn lead_categories_partition_the_labelled_events() {
    let config = PipelineConfig::default();
    let learned = LearnedState::initial(&config);
    for seed in 1..=8 {
        let sc = generate_scenario(&config.scenario, seed).unwrap();
        for mode in [Mode::Mas, Mode::Baseline] {
            let out = run_event(&sc, &config, mode, &learned, &RunOptions::default()).unwrap();
            let (w, l, m) = lead_counts(&out.metrics);
            assert_eq!(w + l + m, out.labels.len(), "seed {seed} {mode}");
            assert_eq!((out.table.warned, out.table.late, out.table.missed), (w, l, m));
        }
    }
}

#[test]
fn fault_free_alerts_arrive_one_cadence_after_ingestion() {
    let config = PipelineConfig::default();
    let sc = generate_scenario(&config.scenario, 1).unwrap();
    let out = run_event(&sc, &config, Mode::Mas, &LearnedState::initial(&config), &RunOptions::default()).unwrap();
    let direct: Vec<_> = out.trace().alerts.iter().filter(|a| a.issuer != "governance").collect();
    assert!(!direct.is_empty());
    assert!(direct.iter().all(|a| a.latency() == config.runtime.cadence));
}

#[test]
fn self_comparison_has_no_winner() {
    let config = PipelineConfig::default();
    let r = compare(&config, Mode::Mas, Mode::Mas, &batch_seeds(1, 3)).unwrap();
    assert_eq!(serde_json::to_value(&r.mas).unwrap(), serde_json::to_value(&r.baseline).unwrap());
    assert_eq!(r.crps_wins, (0, 0));
    assert!(!r.verdicts.is_empty());
    assert!(r.verdicts.values().all(|v| !v.win));
    assert!(!r.passed());
}

#[test]
fn empty_batch_has_no_verdicts() {
    let r = run_benchmark(&PipelineConfig::default(), &[]).unwrap();
    assert!(r.verdicts.is_empty());
    assert_eq!(r.mas.events, 0);
    assert_eq!(r.baseline.events, 0);
    assert!(!r.passed());
}

#[test]
fn campaigns_do_not_depend_on_worker_count() {
    let config = PipelineConfig::default();
    let seeds = batch_seeds(20, 4);
    let one = run_campaign(&config, Mode::Baseline, &seeds, 1).unwrap();
    let three = run_campaign(&config, Mode::Baseline, &seeds, 3).unwrap();
    assert_eq!(one, three);
    let bins = config.eval.reliability_bins;
    assert_eq!(serde_json::to_string(&one.table(bins)).unwrap(), serde_json::to_string(&three.table(bins)).unwrap());
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let mut config = PipelineConfig::default();
    config.runtime.governance.delta = 0.9;
    assert!(run_campaign(&config, Mode::Mas, &[1], 1).is_err());
}

#[test]
fn live_decisions_replay_from_the_recorded_timeline() {
    let mut config = PipelineConfig::default();
    config.runtime.governance.hitl_timeout = 20;
    let learned = LearnedState::initial(&config);
    let mut decided = 0;
    for seed in 1..=6 {
        let sc = Arc::new(generate_scenario(&config.scenario, seed).unwrap());
        let mut live = EventRun::new(Arc::clone(&sc), &config, Mode::Mas, &learned, &RunOptions::default()).unwrap();
        let mut flip = false;
        while live.tick().unwrap() {
            let pending: Vec<u64> = live.runtime().hitl().pending().iter().map(|it| it.id).collect();
            for id in pending {
                flip = !flip;
                let decision = if flip { OperatorDecision::Approve } else { OperatorDecision::Override };
                live.decide(id, decision).unwrap();
                assert!(live.decide(id, decision).is_err(), "second resolution of {id} accepted");
            }
        }
        let live = live.finish().unwrap();
        let operator: Vec<ScheduledDecision> = live
            .runtime
            .operator_timeline()
            .iter()
            .map(|r| ScheduledDecision { t: r.t, item: r.item, decision: r.decision })
            .collect();
        decided += operator.len();
        let replay = run_event(&sc, &config, Mode::Mas, &learned, &RunOptions { faults: vec![], operator }).unwrap();
        assert_eq!(live.audit().to_ndjson(), replay.audit().to_ndjson(), "seed {seed}");
        assert_eq!(live.trace().stream_ndjson(), replay.trace().stream_ndjson(), "seed {seed}");
        assert_eq!(serde_json::to_string(&live.table).unwrap(), serde_json::to_string(&replay.table).unwrap());
    }
    assert!(decided > 0);
}
