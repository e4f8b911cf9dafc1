//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (run with `--nocapture` to see
//! them; a failing criterion prints FAIL before the panic).
//!
//! Run with: `cargo test --test acceptance -- --nocapture`

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ratio_forge_core::diagnostics::{
    classify_token_states, low_frequency_ratio, paired_dynamics_report, power_spectrum,
    run_lengths, switch_frequency, variance_stats, window_offpolicy_frequency, BandMode,
    DynamicsConfig, SeriesRepresentation, TokenState,
};
use ratio_forge_core::filter::{
    filter_weights, kalman_filter_sequence, steady_state, KalmanParams,
};
use ratio_forge_core::objectives::{
    group_relative_advantage, kpo_objective, Aggregation, ClipConfig, KpoMode, RatioGroup,
};
use ratio_forge_core::sim::{
    finite_difference_check, recompute_logp, run_training, sample_group, BatchSnapshot,
    GradientMode, Method, ToyPolicy, ToyTask, TrainConfig, FD_DEFAULT_STEP,
};
use ratio_forge_core::trace::{LogRatioSeries, RatioSeries, TokenTrace};
use ratio_forge_core::SimError;

/// Prints FAIL on drop unless the criterion passed.
struct Criterion {
    number: usize,
    label: &'static str,
    armed: bool,
    started: Instant,
}

impl Criterion {
    fn start(number: usize, label: &'static str) -> Self {
        Self {
            number,
            label,
            armed: true,
            started: Instant::now(),
        }
    }

    fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    fn pass(mut self, detail: String) {
        self.armed = false;
        println!(
            "criterion {} ({}): PASS in {:.2?}: {}",
            self.number,
            self.label,
            self.started.elapsed(),
            detail
        );
    }
}

impl Drop for Criterion {
    fn drop(&mut self) {
        if self.armed {
            println!("criterion {} ({}): FAIL", self.number, self.label);
        }
    }
}

#[test]
fn criterion_1_kalman_oracle_equivalence() {
    let gate = Criterion::start(1, "filter matches unrolled linear-weight oracle");
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let q = 10f64.powf(rng.gen_range(-8.0..0.0));
        let v = 10f64.powf(rng.gen_range(-3.0..1.0));
        let p0 = rng.gen_range(0.0..10.0);
        let rho0 = rng.gen_range(-1.0..1.0);
        let params = KalmanParams::new(q, v, rho0, p0).unwrap();
        let len = rng.gen_range(0..=64);
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let mask: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.9)).collect();
        let z = LogRatioSeries::new(values, mask).unwrap();
        let recursion = kalman_filter_sequence(&z, &params).unwrap();
        let weights = filter_weights(z.len(), &params, z.mask()).unwrap();
        let unrolled = weights.apply(&z).unwrap();
        for (t, (&a, &b)) in unrolled.iter().zip(recursion.rho_post()).enumerate() {
            let err = (a - b).abs();
            worst = worst.max(err);
            assert!(err < 1e-10, "case {case}, position {t}: |{a} - {b}| = {err}");
        }
    }
    assert!(gate.elapsed() < Duration::from_secs(5), "runtime budget");
    gate.pass(format!("1000 randomized sequences, worst |diff| = {worst:.3e}"));
}

#[test]
fn criterion_2_steady_state_identities() {
    let gate = Criterion::start(2, "Riccati fixed-point identities");

    // Fixed-point iteration oracle on the posterior-variance map.
    let oracle = |q: f64, v: f64| -> (f64, f64) {
        let mut post = 0.0f64;
        for _ in 0..10_000_000 {
            let next = ((post + q) * v) / (post + q + v);
            if (next - post).abs() < 1e-18 {
                post = next;
                break;
            }
            post = next;
        }
        let p_pred = post + q;
        (p_pred, p_pred / (p_pred + v))
    };

    let golden = steady_state(&KalmanParams::new(1.0, 1.0, 0.0, 1.0).unwrap());
    let expected_gain = (5f64.sqrt() - 1.0) / 2.0;
    assert!((golden.gain - expected_gain).abs() < 1e-9, "golden-ratio gain");
    let (p_oracle, k_oracle) = oracle(1.0, 1.0);
    assert!((golden.p_pred - p_oracle).abs() < 1e-9);
    assert!((golden.gain - k_oracle).abs() < 1e-9);

    let default = steady_state(&KalmanParams::default());
    let (p_oracle, k_oracle) = oracle(1e-6, 1.0);
    assert!((default.p_pred - p_oracle).abs() < 1e-9, "prediction variance");
    assert!((default.gain - k_oracle).abs() < 1e-9, "gain");
    assert!((default.p_pred - 1.0005e-3).abs() < 1e-7, "P ~ 1.0005e-3");

    assert!(gate.elapsed() < Duration::from_secs(1), "runtime budget");
    gate.pass(format!(
        "K(1,1) = {:.12} = (sqrt(5)-1)/2; K(1e-6,1) = {:.6e} vs oracle {:.6e}",
        golden.gain, default.gain, k_oracle
    ));
}

fn on_policy_trace(id: usize, len: usize, score: f64) -> TokenTrace {
    let logp: Vec<f64> = (0..len).map(|t| -0.3 - 0.17 * (t % 7) as f64).collect();
    TokenTrace::new(
        format!("s{id}"),
        "g0".to_string(),
        (0..len as u32).collect(),
        logp.clone(),
        logp,
        vec![true; len],
        score,
    )
    .unwrap()
}

#[test]
fn criterion_3_on_policy_reduction() {
    let gate = Criterion::start(3, "on-policy inputs reduce to the advantage mean");
    let scores = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
    let traces: Vec<TokenTrace> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| on_policy_trace(i, 5 + i, s))
        .collect();
    let params = KalmanParams::default();
    let mut filtered: Vec<RatioSeries> = Vec::new();
    for trace in &traces {
        let series = kalman_filter_sequence(&trace.log_ratios(), &params).unwrap();
        let ratios = series.to_ratio_space().unwrap();
        for (_, r) in ratios.iter_valid() {
            assert_eq!(r, 1.0, "filtered ratio must be exactly 1 on-policy");
        }
        filtered.push(ratios);
    }
    let advantages = group_relative_advantage(&scores).unwrap();
    let advantage_mean: f64 =
        advantages.values().iter().sum::<f64>() / advantages.values().len() as f64;
    let groups = [RatioGroup {
        responses: &filtered,
        advantages: &advantages,
    }];
    let clip = ClipConfig::filtered_default();
    let mut losses = Vec::new();
    for mode in [KpoMode::Clipped, KpoMode::Unclipped] {
        let report =
            kpo_objective(&groups, mode, &clip, Aggregation::SequenceMeanTokenMean).unwrap();
        assert!(
            (report.loss - advantage_mean).abs() < 1e-12,
            "{mode:?}: {} vs {advantage_mean}",
            report.loss
        );
        losses.push(report.loss);
    }
    gate.pass(format!(
        "both objective modes = advantage mean {advantage_mean:.3e} (losses {:?})",
        losses
    ));
}

/// Off-policy fixed-seed batch: sample under one policy, nudge the policy,
/// recompute logp_new under the nudged policy.
fn fd_batch(seed: u64) -> (ToyPolicy, Vec<(u32, TokenTrace, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = ToyPolicy::random(6, 1, 0.5, &mut rng);
    let prompt = rng.gen_range(0..6u32);
    let task = ToyTask::mod_sum(6, prompt);
    let traces = sample_group(&sampler, &task, prompt, 4, 6, &mut rng);
    let scores: Vec<f64> = traces.iter().map(TokenTrace::score).collect();
    let advantages = match group_relative_advantage(&scores) {
        Ok(a) if !a.is_degenerate() => a.values().to_vec(),
        // Keep degenerate batches interesting with synthetic advantages.
        _ => vec![1.0, -0.5, 0.25, -0.75],
    };
    let mut current = sampler;
    for logit in current.logits_mut() {
        *logit += (rng.gen::<f64>() * 2.0 - 1.0) * 0.05;
    }
    let items = traces
        .into_iter()
        .zip(advantages)
        .map(|(mut trace, adv)| {
            let lp = recompute_logp(&current, prompt, &trace).unwrap();
            trace.set_logp_new(lp).unwrap();
            (prompt, trace, adv)
        })
        .collect();
    (current, items)
}

#[test]
fn criterion_4_gradient_verification() {
    let gate = Criterion::start(4, "analytic gradients match finite differences");
    let kalman = KalmanParams::default();
    // A band wide enough that batches mix clipped and unclipped tokens.
    let loose = ClipConfig::new(0.02, 0.025).unwrap();
    let mut worst: f64 = 0.0;
    let mut checks = 0usize;
    for (method, clip) in [
        (Method::Grpo, ClipConfig::grpo_default()),
        (Method::SeqLevel, loose),
        (Method::KpoClipped, loose),
        (Method::KpoUnclipped, loose),
    ] {
        for mode in [GradientMode::ThroughFilter, GradientMode::Detached] {
            let mut batches_checked = 0usize;
            let mut seed = 7_000;
            while batches_checked < 20 {
                let (policy, items) = fd_batch(seed);
                seed += 1;
                let refs: Vec<(u32, &TokenTrace, f64)> =
                    items.iter().map(|(p, t, a)| (*p, t, *a)).collect();
                let snapshot =
                    BatchSnapshot::build(&policy, &refs, method, mode, &kalman, &clip).unwrap();
                let mut fd_rng = ChaCha8Rng::seed_from_u64(1);
                match finite_difference_check(&policy, &snapshot, FD_DEFAULT_STEP, &mut fd_rng) {
                    Ok(err) => {
                        assert!(
                            err < 1e-4,
                            "{method:?} {mode:?} seed {seed}: relative error {err}"
                        );
                        worst = worst.max(err);
                        batches_checked += 1;
                        checks += 1;
                    }
                    // A token landed on a clip boundary: re-sample.
                    Err(SimError::BoundaryToken { .. }) => continue,
                    Err(other) => panic!("{method:?} {mode:?}: {other}"),
                }
            }
        }
    }
    assert!(gate.elapsed() < Duration::from_secs(30), "runtime budget");
    gate.pass(format!(
        "{checks} fixed-seed batches across 4 methods x 2 gradient modes, worst rel err {worst:.3e}"
    ));
}

/// Piecewise-constant latent drift plus white noise, sigma = 0.4.
fn drifting_log_ratios(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let segments = rng.gen_range(5..10usize);
    let mut bounds: Vec<usize> = (0..segments - 1)
        .map(|_| rng.gen_range(64..len - 64))
        .collect();
    bounds.sort_unstable();
    bounds.insert(0, 0);
    bounds.push(len);
    let mut z = vec![0.0; len];
    let mut sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    for pair in bounds.windows(2) {
        let level = sign * rng.gen_range(0.1..0.5);
        sign = -sign;
        for slot in &mut z[pair[0]..pair[1]] {
            *slot = level;
        }
    }
    for slot in &mut z {
        // Box-Muller Gaussian, sigma 0.4.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        *slot += 0.4 * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
    z
}

#[test]
fn criterion_5_filtering_dynamics_contrast() {
    let gate = Criterion::start(5, "synthetic before/after dynamics shift");
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let params = KalmanParams::default();
    let mut raw = Vec::with_capacity(100);
    let mut filtered = Vec::with_capacity(100);
    for _ in 0..100 {
        let z = LogRatioSeries::dense(drifting_log_ratios(&mut rng, 2048));
        let series = kalman_filter_sequence(&z, &params).unwrap();
        filtered.push(series.to_ratio_space().unwrap());
        raw.push(RatioSeries::dense(z.values().iter().map(|v| v.exp()).collect()));
    }
    let config = DynamicsConfig {
        band: BandMode::Band(ClipConfig::filtered_default()),
        window: 50,
        k_c: None,
        representation: SeriesRepresentation::LogRatio,
    };
    let (before, after) = paired_dynamics_report(&raw, &filtered, &config).unwrap();

    let switch_drop = before.switch_frequency / after.switch_frequency;
    assert!(
        switch_drop >= 10.0,
        "switch frequency {} -> {} (x{switch_drop:.1})",
        before.switch_frequency,
        after.switch_frequency
    );
    assert!(after.lfr >= 0.9, "post-filter LFR {}", after.lfr);
    let variance_drop = before.windowed_local_variance / after.windowed_local_variance;
    assert!(
        variance_drop >= 100.0,
        "windowed variance {} -> {} (x{variance_drop:.1})",
        before.windowed_local_variance,
        after.windowed_local_variance
    );
    assert!(gate.elapsed() < Duration::from_secs(30), "runtime budget");
    gate.pass(format!(
        "switch {:.3} -> {:.4} (x{:.0}); LFR {:.3} -> {:.3}; win var {:.3} -> {:.2e} (x{:.0})",
        before.switch_frequency,
        after.switch_frequency,
        switch_drop,
        before.lfr,
        after.lfr,
        before.windowed_local_variance,
        after.windowed_local_variance,
        variance_drop
    ));
}

#[test]
fn criterion_6_training_stability_contrast() {
    let gate = Criterion::start(6, "filtered updates are steadier than raw token ratios");
    let kpo = TrainConfig {
        steps: 300,
        seed: 42,
        ..TrainConfig::for_method(Method::KpoClipped)
    };
    let kpo_metrics = run_training(&kpo).expect("no divergence-guard trigger");
    let grpo = TrainConfig {
        steps: 300,
        seed: 42,
        ..TrainConfig::for_method(Method::Grpo)
    };
    let grpo_metrics = run_training(&grpo).expect("baseline run completes");

    let kpo_var = kpo_metrics.pg_loss_variance(50..300);
    let grpo_var = grpo_metrics.pg_loss_variance(50..300);
    assert!(
        kpo_var < grpo_var,
        "pg_loss variance: filtered {kpo_var:.3e} vs raw {grpo_var:.3e}"
    );
    assert!(gate.elapsed() < Duration::from_secs(300), "runtime budget");
    gate.pass(format!(
        "pg_loss step-variance over steps 50..300: filtered {kpo_var:.3e} < raw {grpo_var:.3e} (x{:.1})",
        grpo_var / kpo_var
    ));
}

#[test]
fn criterion_7_diagnostics_identities() {
    let gate = Criterion::start(7, "diagnostics unit identities and Parseval");
    use TokenState::{Down as D, On, Up as U};
    let band = BandMode::Band(ClipConfig::filtered_default());

    // Classification identities.
    let states = classify_token_states(&RatioSeries::dense(vec![1.0; 4]), band);
    assert!(states.states().iter().all(|&s| s == On));
    let states = classify_token_states(&RatioSeries::dense(vec![1.001, 0.999, 1.0]), band);
    assert_eq!(states.states(), &[U, D, On]);
    let states = classify_token_states(&RatioSeries::dense(vec![1.0 + 4e-4]), band);
    assert_eq!(states.states(), &[On]);

    // Window frequency identities.
    let mk = |labels: &[TokenState]| {
        let ratios: Vec<f64> = labels
            .iter()
            .map(|s| match s {
                U => 1.01,
                D => 0.99,
                On => 1.0,
            })
            .collect();
        classify_token_states(&RatioSeries::dense(ratios), band)
    };
    assert_eq!(window_offpolicy_frequency(&mk(&[On; 8]), 4).unwrap(), vec![0.0, 0.0]);
    assert_eq!(window_offpolicy_frequency(&mk(&[U; 8]), 4).unwrap(), vec![1.0, 1.0]);
    assert_eq!(
        window_offpolicy_frequency(&mk(&[U, On, On, D, On, On, On, On]), 4).unwrap(),
        vec![0.5, 0.0]
    );

    // Run-length identities.
    let runs = run_lengths(&mk(&[U, U, D, D, D, U]));
    assert_eq!((runs.up.clone(), runs.down.clone()), (vec![2, 1], vec![3]));
    assert_eq!(run_lengths(&mk(&[On; 7])).on, vec![7]);
    let runs = run_lengths(&mk(&[U, D, U, D]));
    assert_eq!((runs.up, runs.down), (vec![1, 1], vec![1, 1]));

    // Switch-frequency identities.
    assert_eq!(switch_frequency(&mk(&[U, D, U, D]), 50).unwrap(), 1.0);
    assert_eq!(switch_frequency(&mk(&[On; 20]), 4).unwrap(), 0.0);
    assert_eq!(switch_frequency(&mk(&[U]), 50).unwrap(), 0.0);

    // LFR identities.
    assert_eq!(low_frequency_ratio(&[3.25; 32], 4).unwrap(), 1.0);
    let lfr_full = low_frequency_ratio(&[0.3, -1.0, 2.0, 0.5, 0.1], 2).unwrap();
    assert!((lfr_full - 1.0).abs() < 1e-12);

    // Variance identities.
    let v = variance_stats(&[5.0; 12], 4).unwrap();
    assert_eq!((v.global, v.windowed_local), (0.0, 0.0));
    let v = variance_stats(&[0.0, 2.0], 50).unwrap();
    assert_eq!((v.global, v.windowed_local), (1.0, 1.0));
    let v = variance_stats(&[0.0, 2.0, 0.0, 2.0], 2).unwrap();
    assert_eq!((v.global, v.windowed_local), (1.0, 1.0));

    // Parseval against a direct O(T^2) DFT oracle.
    let mut worst_rel: f64 = 0.0;
    for len in [16usize, 64, 256] {
        let series: Vec<f64> = (0..len)
            .map(|t| {
                let x = t as f64;
                (0.41 * x).sin() + 0.3 * (1.7 * x).cos() + ((t * 2654435761) % 101) as f64 / 101.0
            })
            .collect();
        let fast = power_spectrum(&series);
        // Independent direct DFT.
        let mut direct = vec![0.0; len];
        for (k, slot) in direct.iter_mut().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &x) in series.iter().enumerate() {
                let angle = -2.0 * std::f64::consts::PI * (k * t) as f64 / len as f64;
                re += x * angle.cos();
                im += x * angle.sin();
            }
            *slot = re * re + im * im;
        }
        let energy_time: f64 = len as f64 * series.iter().map(|x| x * x).sum::<f64>();
        for (spectrum, name) in [(&fast, "fft"), (&direct, "dft")] {
            let energy_freq: f64 = spectrum.iter().sum();
            let rel = (energy_freq - energy_time).abs() / energy_time;
            worst_rel = worst_rel.max(rel);
            assert!(rel < 1e-9, "{name} Parseval at T = {len}: rel {rel}");
        }
        for (a, b) in fast.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "spectrum route mismatch");
        }
    }
    gate.pass(format!(
        "all label/window/run/switch/LFR/variance identities exact; Parseval worst rel {worst_rel:.2e}"
    ));
}

#[test]
fn criterion_8_io_round_trip_and_cli_determinism() {
    let gate = Criterion::start(8, "byte-exact IO round-trip and CLI determinism");
    use ratio_forge::record::{read_records, write_records, TraceRecordV1};

    // 1000 randomized records: write -> read -> write is byte-identical.
    let mut rng = ChaCha8Rng::seed_from_u64(0x10);
    let records: Vec<TraceRecordV1> = (0..1000)
        .map(|i| {
            let len = rng.gen_range(0..24usize);
            let logp_old: Vec<f64> = (0..len).map(|_| -rng.gen_range(0.0..30.0f64)).collect();
            let logp_new: Vec<f64> = (0..len).map(|_| -rng.gen_range(0.0..30.0f64)).collect();
            let with_filter = rng.gen_bool(0.5);
            let rho: Vec<f64> = (0..len).map(|_| rng.gen_range(-3.0..3.0f64)).collect();
            TraceRecordV1 {
                schema_version: 1,
                sample_id: format!("s{i}"),
                group_id: format!("g{}", i / 8),
                tokens: (0..len).map(|_| rng.gen_range(0..50_000u32)).collect(),
                logp_old,
                logp_new,
                mask: (0..len).map(|_| rng.gen_bool(0.9)).collect(),
                score: rng.gen_range(0.0..=1.0),
                rho_post: with_filter.then(|| rho.clone()),
                p_post: with_filter.then(|| vec![0.5; len]),
                gain: with_filter.then(|| vec![0.25; len]),
                filtered_ratio: with_filter.then(|| rho.iter().map(|r| r.exp()).collect()),
            }
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.jsonl");
    let second = dir.path().join("second.jsonl");
    write_records(&first, &records).unwrap();
    let loaded = read_records(&first).unwrap();
    assert_eq!(records, loaded);
    write_records(&second, &loaded).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    // Every CLI command is byte-deterministic under repeated runs and
    // across --threads settings.
    let bin = env!("CARGO_BIN_EXE_ratio-forge");
    let run = |args: &[&str]| {
        let output = std::process::Command::new(bin)
            .env_remove("RATIO_FORGE_CONFIG")
            .args(args)
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    };
    // Separate pool for the command pipeline: every trace keeps at least
    // one valid token so the objectives have something to aggregate.
    let cli_records: Vec<TraceRecordV1> = (0..64)
        .map(|i| {
            let len = rng.gen_range(2..24usize);
            let logp_old: Vec<f64> = (0..len).map(|_| -rng.gen_range(0.1..5.0f64)).collect();
            let logp_new: Vec<f64> = logp_old
                .iter()
                .map(|o| (o + rng.gen_range(-0.2..0.2)).min(0.0))
                .collect();
            let mut mask: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.9)).collect();
            mask[0] = true;
            TraceRecordV1 {
                schema_version: 1,
                sample_id: format!("s{i}"),
                group_id: format!("g{}", i / 8),
                tokens: (0..len).map(|_| rng.gen_range(0..8u32)).collect(),
                logp_old,
                logp_new,
                mask,
                score: f64::from(rng.gen_bool(0.5)),
                rho_post: None,
                p_post: None,
                gain: None,
                filtered_ratio: None,
            }
        })
        .collect();
    let traces = dir.path().join("traces.jsonl");
    write_records(&traces, &cli_records).unwrap();
    let mut variants: Vec<Vec<Vec<u8>>> = Vec::new();
    for (tag, threads) in [("t1", "1"), ("t4", "4"), ("t4b", "4")] {
        let filtered = dir.path().join(format!("filtered_{tag}.jsonl"));
        let dynamics = dir.path().join(format!("dyn_{tag}.csv"));
        let loss = dir.path().join(format!("loss_{tag}.csv"));
        let sim = dir.path().join(format!("sim_{tag}.csv"));
        let merged = dir.path().join(format!("merged_{tag}.csv"));
        run(&[
            "--threads", threads,
            "filter",
            "--input", traces.to_str().unwrap(),
            "--output", filtered.to_str().unwrap(),
        ]);
        run(&[
            "--threads", threads,
            "analyze",
            "--input", filtered.to_str().unwrap(),
            "--output", dynamics.to_str().unwrap(),
        ]);
        run(&[
            "--threads", threads,
            "loss",
            "--input", traces.to_str().unwrap(),
            "--output", loss.to_str().unwrap(),
            "--method", "kpo_clipped",
        ]);
        run(&[
            "--threads", threads,
            "simulate",
            "--output", sim.to_str().unwrap(),
            "--method", "kpo_clipped",
            "--steps", "5",
            "--seed", "42",
        ]);
        run(&[
            "--threads", threads,
            "report",
            "--input", dynamics.to_str().unwrap(),
            "--input", dynamics.to_str().unwrap(),
            "--label", "before",
            "--label", "after",
            "--output", merged.to_str().unwrap(),
        ]);
        variants.push(
            [filtered, dynamics, loss, sim, merged]
                .iter()
                .map(|p| std::fs::read(p).unwrap())
                .collect(),
        );
    }
    assert_eq!(variants[0], variants[1], "threads must not change bytes");
    assert_eq!(variants[1], variants[2], "repeat runs must not change bytes");

    gate.pass(format!(
        "1000-record round trip byte-identical; 5 commands x 3 runs byte-stable ({} bytes compared)",
        variants[0].iter().map(Vec::len).sum::<usize>()
    ));
}
