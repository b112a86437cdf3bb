//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any of them fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use cloudburst_core::evaluation::benchmark::{
    ablation_report, batch_seeds, benchmark_report, run_campaigns, Campaign, COMPARED, CRPS_EVENT_SHARE,
};
use cloudburst_core::evaluation::metrics::{contingency, crps, reliability_index};
use cloudburst_core::evaluation::pipeline::{Component, Mode, PipelineConfig};
use cloudburst_core::evaluation::run::{RunOptions, RunOutput, ScheduledDecision};
use cloudburst_core::grid::GridField;
use cloudburst_core::prediction::downscale::{block_mean_error, downscale, DownscaleParams};
use cloudburst_core::response::hydrology::{simulate_runoff, HydroParams, RunoffState};
use cloudburst_core::response::triage::CostModel;
use cloudburst_core::runtime::trace::StreamEvent;
use cloudburst_core::runtime::{FaultSpec, OperatorDecision};
use cloudburst_core::seed::stream;
use cloudburst_core::world::terrain::TerrainParams;
use cloudburst_core::world::Terrain;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_counts, crps_integral, expected_cost, peak_per_hour, run_mas};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn metric_oracles() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(1..=24);
        let members: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..80.0)).collect();
        let obs = rng.random_range(-5.0..80.0);
        let got = crps(&members, obs).map_err(|e| e.to_string())?;
        worst = worst.max((got - crps_integral(&members, obs)).abs());
    }
    let crps_s = started.elapsed().as_secs_f64();
    ensure(worst <= 1e-6, || format!("CRPS max error {worst:e}"))?;
    ensure(crps_s < 10.0, || format!("CRPS oracle took {crps_s:.2}s"))?;

    for case in 0..500 {
        let (nx, ny) = (rng.random_range(1..12), rng.random_range(1..12));
        let f: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(0.0..40.0)).collect();
        let o: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(0.0..40.0)).collect();
        let t = contingency(
            &GridField::from_vec(nx, ny, 1.0, 0, f.clone()).unwrap(),
            &GridField::from_vec(nx, ny, 1.0, 0, o.clone()).unwrap(),
            20.0,
            None,
        )
        .map_err(|e| e.to_string())?;
        let fb: Vec<bool> = f.iter().map(|&v| v >= 20.0).collect();
        let ob: Vec<bool> = o.iter().map(|&v| v >= 20.0).collect();
        let (h, m, fa, cn) = brute_counts(&fb, &ob);
        let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
        ensure(
            (t.hits, t.misses, t.false_alarms, t.correct_negatives) == (h, m, fa, cn)
                && t.csi() == ratio(h, h + m + fa)
                && t.pod() == ratio(h, h + m)
                && t.far() == ratio(fa, h + fa),
            || format!("contingency case {case} differs from brute force"),
        )?;
    }

    let hand = [
        (vec![(1.0, true), (0.0, false), (1.0, true)], 1.0),
        (vec![(0.5, true), (0.5, false)], 1.0),
        (vec![(1.0, false), (0.0, true)], 0.0),
        (vec![(1.0, false); 4], 0.0),
    ];
    for (pairs, want) in hand {
        let got = reliability_index(&pairs, 10);
        ensure(got == Some(want), || format!("reliability of {pairs:?} is {got:?}, want {want}"))?;
    }
    Ok(format!("CRPS max error {worst:.1e} in {crps_s:.2}s; 500 contingency grids exact; 4 reliability cases exact"))
}

fn table_orderings(config: &PipelineConfig, runs: &[Campaign], elapsed: f64) -> Check {
    let r = benchmark_report(config, &runs[0], &runs[1], elapsed);
    ensure(r.input_hashes_match, || "configurations saw different observations".into())?;
    let lost: Vec<String> = COMPARED
        .iter()
        .filter(|(name, _)| !r.verdicts[*name].win)
        .map(|(name, _)| {
            let v = &r.verdicts[*name];
            format!("{name} mas {:?} baseline {:?}", v.mas, v.baseline)
        })
        .collect();
    ensure(lost.is_empty(), || format!("orderings lost: {}", lost.join("; ")))?;
    let share = r.crps_wins.0 as f64 / r.seeds.len() as f64;
    ensure(share >= CRPS_EVENT_SHARE, || format!("MAS won CRPS on {share:.3} of events"))?;
    ensure(elapsed <= 600.0, || format!("batch took {elapsed:.0}s"))?;
    Ok(format!(
        "{} events, 7/7 orderings, CRPS event wins {}/{} ({:.0}%), {elapsed:.0}s",
        r.seeds.len(),
        r.crps_wins.0,
        r.seeds.len(),
        100.0 * share
    ))
}

fn ablation_signs(config: &PipelineConfig, seeds: &[u64], runs: &[Campaign]) -> Check {
    ensure(seeds.len() >= 30, || format!("only {} events", seeds.len()))?;
    let bins = config.eval.reliability_bins;
    let mut notes = Vec::new();
    for (i, component) in [Component::Initiation, Component::Downscaling, Component::Learning].into_iter().enumerate() {
        let r = ablation_report(component, seeds, runs[0].table(bins), runs[2 + i].table(bins), 0.0);
        let shown: Vec<String> = r.checks.keys().map(|m| format!("{m} {:+.4}", r.deltas[m].unwrap_or(f64::NAN))).collect();
        ensure(r.passed(), || format!("{}: {}", component.as_str(), shown.join(", ")))?;
        notes.push(format!("{}: {}", component.as_str(), shown.join(", ")));
    }
    Ok(notes.join("; "))
}

fn conservation(runs: &[Campaign]) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_block = 0.0f64;
    for _ in 0..300 {
        let factor = [2usize, 4, 8][rng.random_range(0..3)];
        let (cx, cy) = (32 / factor, 32 / factor);
        let wet = rng.random::<f64>();
        let coarse = GridField::from_fn(cx, cy, factor as f64, 0, |_, _| {
            if rng.random::<f64>() < wet { rng.random_range(0.0..150.0) } else { 0.0 }
        });
        let seed = rng.random();
        let terrain = Terrain::generate(32, 32, 1.0, (1.0, 0.3), &TerrainParams::default(), &mut stream(seed, "terrain", 0));
        let params = DownscaleParams { beta: rng.random_range(0.0..3.0), residual_sd: rng.random_range(0.0..0.8) };
        let fine = downscale(&coarse, factor, &terrain.uplift, &params, seed).map_err(|e| e.to_string())?;
        for by in 0..cy {
            for bx in 0..cx {
                let mut s = 0.0;
                for y in 0..factor {
                    for x in 0..factor {
                        s += fine.get(bx * factor + x, by * factor + y);
                    }
                }
                worst_block = worst_block.max((s / (factor * factor) as f64 - coarse.get(bx, by)).abs());
            }
        }
        worst_block = worst_block.max(block_mean_error(&fine, &coarse, factor));
    }
    ensure(worst_block <= 1e-9, || format!("block-mean error {worst_block:e}"))?;

    let mut worst_mass = 0.0f64;
    for seed in 0..100u64 {
        let terrain = Terrain::generate(32, 32, 1.0, (1.0, 0.3), &TerrainParams::default(), &mut stream(seed, "terrain", 0));
        let params = HydroParams::default();
        let s0 = RunoffState::dry(&terrain, &params, 0);
        let peak = rng.random_range(0.0..200.0);
        let rain: Vec<GridField> = (1..=rng.random_range(1..40))
            .map(|k| GridField::from_fn(32, 32, 1.0, k, |_, _| rng.random_range(0.0..=peak)))
            .collect();
        let states = simulate_runoff(&rain, &terrain, &s0, 5).map_err(|e| e.to_string())?;
        let mut fallen = vec![0.0; terrain.catchment_count];
        for r in &rain {
            for (i, &c) in terrain.catchment_id.iter().enumerate() {
                fallen[c as usize] += r.data[i] / 60_000.0 * 1e6 * 5.0;
            }
        }
        let last = states.last().unwrap();
        for c in 0..terrain.catchment_count {
            let err = (fallen[c] - last.storage[c] - last.outflow_total[c]).abs() / fallen[c].max(1.0);
            worst_mass = worst_mass.max(err);
        }
        worst_mass = states.iter().map(|s| s.mass_balance_error(&s0)).fold(worst_mass, f64::max);
    }
    let runs_worst = runs.iter().flat_map(|c| &c.events).map(|e| e.mass_balance_error).fold(0.0, f64::max);
    let events: usize = runs.iter().map(|c| c.events.len()).sum();
    ensure(worst_mass <= 1e-6 && runs_worst <= 1e-6, || format!("mass balance error {worst_mass:e}, in runs {runs_worst:e}"))?;
    Ok(format!(
        "block-mean error {worst_block:.1e} over 300 fields; mass balance {worst_mass:.1e} over 100 fields, {runs_worst:.1e} over {events} runs"
    ))
}

fn determinism() -> Check {
    let mut config = PipelineConfig::default();
    config.runtime.governance.hitl_timeout = 20;
    let faults = vec![
        FaultSpec::dropout("router", 40, 70),
        FaultSpec::delay("probability", 5, 30, 90),
        FaultSpec::loss("reach", 0.3, 0, 200),
    ];
    let mut decided = 0;
    for seed in 1..=8 {
        let discovery = run_mas(seed, &config, &RunOptions { faults: faults.clone(), operator: vec![] });
        let operator: Vec<ScheduledDecision> = discovery
            .runtime
            .hitl()
            .items()
            .map(|it| ScheduledDecision {
                t: (it.created_at / 5 + 1) * 5,
                item: it.id,
                decision: if it.id % 2 == 0 { OperatorDecision::Override } else { OperatorDecision::Approve },
            })
            .collect();
        let options = RunOptions { faults: faults.clone(), operator };
        let a = run_mas(seed, &config, &options);
        let b = run_mas(seed, &config, &options);
        decided += a.runtime.operator_timeline().len();
        ensure(a.audit().to_ndjson() == b.audit().to_ndjson(), || format!("seed {seed}: audit logs differ"))?;
        ensure(
            serde_json::to_string(&a.table).unwrap() == serde_json::to_string(&b.table).unwrap(),
            || format!("seed {seed}: metric tables differ"),
        )?;
        ensure(a.trace() == b.trace(), || format!("seed {seed}: traces differ"))?;
        a.audit().verify().map_err(|e| format!("seed {seed}: {e}"))?;
    }
    ensure(decided > 0, || "no operator decision was exercised".into())?;
    Ok(format!("8 seeds with faults, {decided} recorded operator decisions, audit logs and tables identical"))
}

fn resilience() -> Check {
    let config = PipelineConfig::default();
    let cap = config.runtime.governance.max_alert_rate.floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let agents = ["harmonizer", "initiation", "nowcaster", "downscaler", "hydrologist", "triage", "communicator", "router", "learner"];
    let cases: Vec<(u64, &str, u32, u32)> = (0..100)
        .map(|_| {
            let start = rng.random_range(0..150);
            (rng.random_range(1..=200), agents[rng.random_range(0..agents.len())], start, start + rng.random_range(1..=30))
        })
        .collect();
    let check = |out: &RunOutput, agent: &str| -> Result<usize, String> {
        ensure(out.trace().degraded.iter().any(|d| d.agent == agent && d.cause == "dropout"), || "no degraded span".into())?;
        ensure(
            out.trace().stream.iter().any(|e| matches!(e, StreamEvent::Tick { degraded: true, .. })),
            || "degraded flag never streamed".into(),
        )?;
        let peak = out.runtime.ledger().peak_hourly().max(peak_per_hour(out));
        ensure(peak <= cap, || format!("{peak} alerts in an hour against a cap of {cap}"))?;
        ensure(out.runtime.hitl().unresolved() == 0, || "unresolved review items".into())?;
        Ok(peak)
    };
    let mut worst = 0;
    for &(seed, agent, start, end) in &cases {
        let out = run_mas(seed, &config, &RunOptions { faults: vec![FaultSpec::dropout(agent, start, end)], operator: vec![] });
        worst = worst.max(check(&out, agent).map_err(|e| format!("seed {seed} {agent} [{start}, {end}): {e}"))?);
    }
    Ok(format!("100 dropout runs completed degraded; peak hourly alerts {worst} (cap {cap})"))
}

fn delay_latency() -> Check {
    let config = PipelineConfig::default();
    let mut compared = 0;
    for seed in 1..=6 {
        let base = run_mas(seed, &config, &RunOptions::default());
        let floor = base.trace().alerts.iter().map(|a| a.latency()).min().unwrap_or(0);
        // Alerts matched by district, tier and occurrence.
        let key = |out: &RunOutput| {
            let mut n: BTreeMap<(u32, u8), usize> = BTreeMap::new();
            out.trace()
                .alerts
                .iter()
                .map(|a| {
                    let k = (a.alert.district, a.alert.tier as u8);
                    let i = n.entry(k).or_default();
                    *i += 1;
                    ((k, *i), a.latency())
                })
                .collect::<BTreeMap<_, _>>()
        };
        let kb = key(&base);
        for d in [3, 5, 10] {
            let delayed = run_mas(seed, &config, &RunOptions { faults: vec![FaultSpec::delay("obs", d, 0, 10_000)], operator: vec![] });
            ensure(!delayed.trace().alerts.is_empty(), || format!("seed {seed} d {d}: no alerts"))?;
            for a in &delayed.trace().alerts {
                ensure(a.latency() >= floor + d, || format!("seed {seed} d {d}: latency {} < {floor} + {d}", a.latency()))?;
            }
            for (k, lat) in key(&delayed) {
                if let Some(b) = kb.get(&k) {
                    ensure(lat >= b + d, || format!("seed {seed} d {d} {k:?}: {lat} vs {b}"))?;
                    compared += 1;
                }
            }
        }
    }
    Ok(format!("delays 3, 5, 10 over 6 seeds; {compared} matched alerts all later by at least d"))
}

fn cost_loss() -> Check {
    let default = PipelineConfig::default().costs;
    let mut pairs = vec![(default.l_miss, default.l_false)];
    pairs.extend([(9.0, 1.0), (1.0, 1.0), (1.0, 4.0), (20.0, 3.0), (2.5, 7.5)]);
    for (l_miss, l_false) in pairs {
        let model = CostModel::new(l_miss, l_false).map_err(|e| e.to_string())?;
        let p_star = l_false / (l_false + l_miss);
        ensure(model.p_star() == p_star, || format!("p* {} vs {p_star}", model.p_star()))?;
        for i in 0..=20 {
            let p = i as f64 * 0.05;
            let rule = expected_cost(p, p >= p_star, l_miss, l_false);
            let (always, never) = (expected_cost(p, true, l_miss, l_false), expected_cost(p, false, l_miss, l_false));
            ensure(rule <= always && rule <= never, || format!("L=({l_miss}, {l_false}) p={p}: {rule} vs {always}/{never}"))?;
            ensure(
                model.expected_loss(p, true) == always && model.expected_loss(p, false) == never,
                || format!("L=({l_miss}, {l_false}) p={p}: library expected loss differs"),
            )?;
        }
    }
    Ok("6 cost pairs, 21 probabilities each, threshold rule never beaten".into())
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Check| {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    };

    report("metric oracles", &mut metric_oracles);
    report("cost-loss optimality", &mut cost_loss);

    let config = PipelineConfig::default();
    let seeds = batch_seeds(1, 48);
    let modes = [
        Mode::Mas,
        Mode::Baseline,
        Mode::Ablation(Component::Initiation),
        Mode::Ablation(Component::Downscaling),
        Mode::Ablation(Component::Learning),
    ];
    let started = Instant::now();
    let head = run_campaigns(&config, &modes[..2], &seeds);
    let head_s = started.elapsed().as_secs_f64();
    let tail = run_campaigns(&config, &modes[2..], &seeds);
    let runs: Result<Vec<Campaign>, String> = match (head, tail) {
        (Ok(mut a), Ok(b)) => {
            a.extend(b);
            Ok(a)
        }
        (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
    };
    match &runs {
        Ok(runs) => {
            report("MAS vs baseline orderings", &mut || table_orderings(&config, runs, head_s));
            report("ablation signs", &mut || ablation_signs(&config, &seeds, runs));
            report("conservation", &mut || conservation(runs));
        }
        Err(e) => {
            for name in ["MAS vs baseline orderings", "ablation signs", "conservation"] {
                report(name, &mut || Err(format!("batch failed: {e}")));
            }
        }
    }
    report("determinism", &mut determinism);
    report("resilience", &mut resilience);
    report("coordination latency", &mut delay_latency);

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
