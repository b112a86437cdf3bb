#![allow(dead_code)]

//! Independent reference implementations shared by the integration tests.

use cloudburst_core::evaluation::pipeline::{LearnedState, Mode, PipelineConfig};
use cloudburst_core::evaluation::run::{run_event, RunOptions, RunOutput};
use cloudburst_core::world::{generate_scenario, Scenario};

/// ∫ (F(z) − 1{z ≥ y})² dz by summing the step function's exact area
/// between consecutive breakpoints.
pub fn crps_integral(members: &[f64], obs: f64) -> f64 {
    let m = members.len() as f64;
    let mut pts: Vec<f64> = members.to_vec();
    pts.push(obs);
    pts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let f = members.iter().filter(|&&x| x <= mid).count() as f64 / m;
        let h = if mid >= obs { 1.0 } else { 0.0 };
        total += (f - h).powi(2) * (b - a);
    }
    total
}

/// (hits, misses, false alarms, correct negatives) counted cell by cell.
pub fn brute_counts(forecast: &[bool], observed: &[bool]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for i in 0..forecast.len() {
        if forecast[i] && observed[i] {
            c.0 += 1;
        } else if !forecast[i] && observed[i] {
            c.1 += 1;
        } else if forecast[i] && !observed[i] {
            c.2 += 1;
        } else {
            c.3 += 1;
        }
    }
    c
}

/// Expected cost of one alerting choice when the event has probability `p`.
pub fn expected_cost(p: f64, alert: bool, l_miss: f64, l_false: f64) -> f64 {
    if alert {
        (1.0 - p) * l_false
    } else {
        p * l_miss
    }
}

pub fn scenario(seed: u64) -> (PipelineConfig, Scenario) {
    let config = PipelineConfig::default();
    let sc = generate_scenario(&config.scenario, seed).expect("default scenario generates");
    (config, sc)
}

/// One MAS event from the initial learned state.
pub fn run_mas(seed: u64, config: &PipelineConfig, options: &RunOptions) -> RunOutput {
    let sc = generate_scenario(&config.scenario, seed).expect("scenario generates");
    run_event(&sc, config, Mode::Mas, &LearnedState::initial(config), options).expect("run completes")
}

/// Largest number of alerts any district got in a 60-minute window,
/// counted from the published alerts.
pub fn peak_per_hour(out: &RunOutput) -> usize {
    let times: Vec<(u32, u32)> = out.trace().alerts.iter().map(|a| (a.alert.district, a.published_at)).collect();
    let mut peak = 0;
    for &(d, t) in &times {
        let n = times.iter().filter(|&&(d2, t2)| d2 == d && t2 >= t && t2 < t + 60).count();
        peak = peak.max(n);
    }
    peak
}
