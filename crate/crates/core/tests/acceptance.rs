//! Acceptance suite. Every criterion writes one PASS/FAIL line to stderr
//! (uncaptured) and then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use chrono::{NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use marl_pricing::agents::common::{state_dim, N_BINS};
use marl_pricing::agents::maddpg::{MaddpgLearner, MaddpgParams};
use marl_pricing::agents::madqn::{DqnParams, QLearner};
use marl_pricing::agents::qmix::{QmixLearner, QmixMixer, QmixParams};
use marl_pricing::demand::transactions::{aggregate_weekly, Transaction, TransactionTable};
use marl_pricing::demand::{calibrate, default_sweep_grid, estimate_elasticity, DemandQuery, ReferenceDemandModel};
use marl_pricing::harness::{preset_config, run_experiment, simulate_run, wilcoxon_signed_rank, ExperimentSpec};
use marl_pricing::learn::{Action, DenseNet, ExplorationSchedule, ReplayBuffer, Transition};
use marl_pricing::metrics::{self, MetricsReport, ADJUSTMENT_THRESHOLD};
use marl_pricing::ProductSpec;

fn verdict(n: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    let line = format!(
        "criterion {n:>2} {} {name}: {detail} ({:.2?})\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- 1

#[test]
fn c01_metric_oracles() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut check = |what: &str, got: f64, want: f64| {
        if !close(got, want, 1e-12) {
            failures.push(format!("{what}: got {got}, want {want}"));
        }
    };

    // Oracles evaluated directly from the formulas.
    let jain = |r: &[f64]| {
        let s: f64 = r.iter().sum();
        s * s / (r.len() as f64 * r.iter().map(|x| x * x).sum::<f64>())
    };
    let gini = |r: &[f64]| {
        let mut acc = 0.0;
        for a in r {
            for b in r {
                acc += (a - b).abs();
            }
        }
        acc / (2.0 * r.len() as f64 * r.iter().sum::<f64>())
    };
    let revenue_sets: [&[f64]; 4] = [&[1.0, 1.0, 1.0, 1.0], &[1.0, 0.0, 0.0, 0.0], &[3.0, 1.0], &[1.0, 2.0, 3.0]];
    for r in revenue_sets {
        check("jain", metrics::jain_index(r), jain(r));
        check("gini", metrics::gini(r), gini(r));
        check("social_welfare", metrics::social_welfare(r), r.iter().sum::<f64>() * (1.0 - gini(r)));
    }
    check("jain [3,1]", metrics::jain_index(&[3.0, 1.0]), 0.8);
    check("jain [1,0,0,0]", metrics::jain_index(&[1.0, 0.0, 0.0, 0.0]), 0.25);
    check("gini [0,1]", metrics::gini(&[0.0, 1.0]), 0.5);
    check("gini [1,2,3]", metrics::gini(&[1.0, 2.0, 3.0]), 8.0 / 36.0);
    check("sw [1,1]", metrics::social_welfare(&[1.0, 1.0]), 2.0);
    check("sw [0,1]", metrics::social_welfare(&[0.0, 1.0]), 0.5);
    check("sw zeros", metrics::social_welfare(&[0.0, 0.0]), 0.0);

    let flat = vec![vec![5.0; 6]];
    check("nash frozen", metrics::nash_proximity(&flat, None), 1.0);
    let half = vec![vec![100.0, 105.0], vec![100.0, 95.0]];
    check("nash 0.05", metrics::nash_proximity(&half, None), 0.5);
    let big = vec![vec![100.0, 120.0, 100.0]];
    check("nash clamp", metrics::nash_proximity(&big, None), 0.0);

    let gap = |r: f64, m: f64| metrics::optimality_gap(r, m).unwrap_or(f64::NAN);
    check("gap equal", gap(200.0, 200.0), 0.0);
    check("gap zero", gap(0.0, 200.0), 1.0);
    check("gap 150/200", gap(150.0, 200.0), 0.25);

    let conv = |p: &[f64]| metrics::price_convergence(p).unwrap_or(f64::NAN);
    let pop_std = |p: &[f64]| {
        let m = p.iter().sum::<f64>() / p.len() as f64;
        (p.iter().map(|x| (x - m).powi(2)).sum::<f64>() / p.len() as f64).sqrt()
    };
    check("conv identical", conv(&[4.0, 4.0, 4.0]), 1.0);
    check("conv {1,3}", conv(&[1.0, 3.0]), 1.0 - 1.0 / 3.0);
    let tiny = [0.0001, 10.0];
    check("conv {1e-4,10}", conv(&tiny), 1.0 - pop_std(&tiny) / 10.0);

    check("mag constant", metrics::adjustment_magnitude(&[7.0, 7.0, 7.0]), 0.0);
    check("mag [10,10.2,10.2]", metrics::adjustment_magnitude(&[10.0, 10.2, 10.2]), (0.2 / 10.0) / 2.0);
    let p = [100.0, 110.0, 99.0];
    check("mag [100,110,99]", metrics::adjustment_magnitude(&p), (0.1 + 11.0 / 110.0) / 2.0);

    let freq = |p: &[f64]| metrics::adjustment_frequency(p, ADJUSTMENT_THRESHOLD);
    check("freq constant", freq(&[3.0, 3.0, 3.0]), 0.0);
    check("freq [100,100.5,102]", freq(&[100.0, 100.5, 102.0]), 0.5);
    check("freq [100,110,99,99]", freq(&[100.0, 110.0, 99.0, 99.0]), 2.0 / 3.0);

    let pass = failures.is_empty() && t.elapsed().as_secs_f64() < 1.0;
    let detail = if failures.is_empty() {
        "all metric examples match".to_string()
    } else {
        failures.join("; ")
    };
    verdict(1, "metric oracle suite", pass, &detail, t);
    assert!(pass, "{detail}");
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_elasticity_reproduction() {
    let t = Instant::now();
    let spec = ProductSpec {
        product_id: "P1".into(),
        cluster_id: 1,
        initial_price: 6.0,
        unit_cost: 3.6,
        baseline_demand: 100.0,
    };
    let model = ReferenceDemandModel::new(Default::default());
    let base = DemandQuery::neutral(&spec, 100.0);
    let eps = estimate_elasticity(&model, &base, &default_sweep_grid()).unwrap();
    let pass = close(eps, -0.072, 0.005) && t.elapsed().as_secs_f64() < 1.0;
    verdict(2, "elasticity reproduction", pass, &format!("estimated {eps:.5}, target -0.072 +/- 0.005"), t);
    assert!(pass);
}

// ---------------------------------------------------------------- 3

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Components smaller than this are below finite-difference resolution and
/// are compared on an absolute scale instead.
const GRAD_FLOOR: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

const FD_STEP: f64 = 1e-5;
const FD_SAMPLES: usize = 256;

/// Fourth-order central difference of `f` at offset 0.
fn central_diff(f: impl Fn(f64) -> f64) -> f64 {
    let h = FD_STEP;
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

/// Worst relative error between analytic and central-difference gradients
/// of `u·f(x)` over a random subset of parameters and every input.
fn dense_fd_error(net: &DenseNet, rng: &mut ChaCha8Rng) -> f64 {
    let x = gaussian(rng, net.input_dim());
    let u = gaussian(rng, net.output_dim());
    let loss = |n: &DenseNet, x: &[f64]| -> f64 { n.forward(x).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum() };
    let trace = net.forward_trace(&x).unwrap();
    let mut grads = vec![0.0; net.parameter_count()];
    let dx = net.backward_into(&trace, &u, &mut grads).unwrap();

    let mut worst: f64 = 0.0;
    let probe = net;
    for _ in 0..FD_SAMPLES {
        let j = rng.random_range(0..net.parameter_count());
        let orig = probe.params()[j];
        let fd = central_diff(|d| {
            let mut p = probe.clone();
            p.params_mut()[j] = orig + d;
            loss(&p, &x)
        });
        worst = worst.max(rel_err(grads[j], fd));
    }
    for i in 0..x.len() {
        let fd = central_diff(|d| {
            let mut xp = x.clone();
            xp[i] += d;
            loss(net, &xp)
        });
        worst = worst.max(rel_err(dx[i], fd));
    }
    worst
}

fn mixer_fd_error(mixer: &QmixMixer, rng: &mut ChaCha8Rng) -> f64 {
    let q = gaussian(rng, mixer.n_agents);
    // |W1| and |w2| are not differentiable at zero; sample away from the kink.
    let s = loop {
        let s = gaussian(rng, mixer.state_dim);
        let margin = [0, 2]
            .iter()
            .flat_map(|&k| mixer.hyper[k].forward(&s).unwrap())
            .fold(f64::INFINITY, |m, w| m.min(w.abs()));
        if margin > 1e-3 {
            break s;
        }
    };
    let (grads, dq) = mixer.gradient(&q, &s).unwrap();
    let flat = mixer.flat_params();
    let mut worst: f64 = 0.0;
    for _ in 0..FD_SAMPLES {
        let j = rng.random_range(0..flat.len());
        let fd = central_diff(|d| {
            let mut p = flat.clone();
            p[j] += d;
            let mut m = mixer.clone();
            m.set_flat_params(&p).unwrap();
            m.forward(&q, &s).unwrap()
        });
        worst = worst.max(rel_err(grads[j], fd));
    }
    for i in 0..q.len() {
        let fd = central_diff(|d| {
            let mut qp = q.clone();
            qp[i] += d;
            mixer.forward(&qp, &s).unwrap()
        });
        worst = worst.max(rel_err(dq[i], fd));
    }
    worst
}

#[test]
fn c03_gradient_correctness() {
    let t = Instant::now();
    let products = 5;
    let agents = 4;
    let s = state_dim(products);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for trial in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + trial);
        let dqn = QLearner::new(s, products, N_BINS, DqnParams::default(), &mut rng).unwrap();
        let ddpg = MaddpgLearner::new(agents, s, products, MaddpgParams::default(), &mut rng).unwrap();
        let qmix = QmixLearner::new(agents, s, products, N_BINS, QmixParams::default(), &mut rng).unwrap();
        let errs = [
            ("madqn", dense_fd_error(&dqn.online, &mut rng)),
            ("maddpg_actor", dense_fd_error(&ddpg.actors[0], &mut rng)),
            ("maddpg_critic", dense_fd_error(&ddpg.critics[0], &mut rng)),
            ("qmix_agent", dense_fd_error(&qmix.agents[0], &mut rng)),
            ("qmix_mixer", mixer_fd_error(&qmix.mixer, &mut rng)),
        ];
        for (k, e) in errs {
            let w = worst.entry(k).or_insert(0.0);
            *w = w.max(e);
        }
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let pass = max < 1e-4 && t.elapsed().as_secs_f64() < 30.0;
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(3, "gradient correctness", pass, &format!("max relative error: {detail}"), t);
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_qmix_monotonicity() {
    let t = Instant::now();
    let agents = 4;
    let s = agents * state_dim(5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut min_grad = f64::INFINITY;
    let mut mixer = QmixMixer::new(agents, s, 32, &mut rng).unwrap();
    for sample in 0..1000 {
        if sample % 10 == 0 {
            mixer = QmixMixer::new(agents, s, 32, &mut rng).unwrap();
        }
        let q: Vec<f64> = gaussian(&mut rng, agents).iter().map(|x| 5.0 * x).collect();
        let st = gaussian(&mut rng, s);
        for i in 0..agents {
            let mut qp = q.clone();
            qp[i] += 1e-5;
            let up = mixer.forward(&qp, &st).unwrap();
            qp[i] -= 2e-5;
            let down = mixer.forward(&qp, &st).unwrap();
            min_grad = min_grad.min((up - down) / 2e-5);
        }
    }
    let pass = min_grad >= -1e-8 && t.elapsed().as_secs_f64() < 10.0;
    verdict(4, "QMIX monotonicity", pass, &format!("min dQtot/dq_i = {min_grad:.3e} over 1000 samples"), t);
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn c05_rule_market_stability() {
    let t = Instant::now();
    let mut cfg = preset_config("A", 42).unwrap();
    cfg.episodes = 1;
    cfg.weeks_per_episode = 40;
    cfg.demand_params = cfg.demand_params.noiseless();
    let out = simulate_run(&cfg, |_, _| Ok(())).unwrap();
    let mv = out.report.market_share_volatility_pp.unwrap_or(f64::INFINITY);
    let jain = out.report.jain_index;
    let pass = mv < 0.5 && jain > 0.95 && t.elapsed().as_secs_f64() < 10.0;
    verdict(
        5,
        "rule-market stability",
        pass,
        &format!("market volatility {mv:.3} pp (< 0.5), jain {jain:.4} (> 0.95)"),
        t,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6, 7

const DESK_EPISODES: usize = 10;
const DESK_WEEKS: usize = 52;
const DESK_SEEDS: [u64; 3] = [1000, 1001, 1002];
/// Tolerance for "approximately equal" adjustment frequencies.
const FREQ_APPROX: f64 = 0.15;

/// Reports of configs A, B, C, F for each desk seed, computed once.
fn desk_runs() -> &'static BTreeMap<(&'static str, u64), MetricsReport> {
    static RUNS: OnceLock<BTreeMap<(&'static str, u64), MetricsReport>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let jobs: Vec<(&'static str, u64)> = ["A", "B", "C", "F"]
            .iter()
            .flat_map(|id| DESK_SEEDS.iter().map(move |s| (*id, *s)))
            .collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|&(id, seed)| {
                    scope.spawn(move || {
                        let mut cfg = preset_config(id, seed).unwrap();
                        cfg.episodes = DESK_EPISODES;
                        cfg.weeks_per_episode = DESK_WEEKS;
                        ((id, seed), simulate_run(&cfg, |_, _| Ok(())).unwrap().report)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    })
}

#[test]
fn c06_adaptability_ordering() {
    let t = Instant::now();
    let runs = desk_runs();
    let mut holds = 0;
    let mut lines = Vec::new();
    for seed in DESK_SEEDS {
        let kind_mean = |id: &str, kind: &str, f: fn(&metrics::AgentMetrics) -> f64| {
            runs[&(id, seed)].mean_by_kind(kind, f).unwrap()
        };
        let freq = |a: &metrics::AgentMetrics| a.adjustment_frequency;
        let mag = |a: &metrics::AgentMetrics| a.adjustment_magnitude;
        let f_dqn = kind_mean("C", "MADQN", freq);
        let f_qmix = kind_mean("F", "QMIX", freq);
        let f_ddpg = kind_mean("B", "MADDPG", freq);
        let f_rule = kind_mean("A", "Rule", freq);
        let m_dqn = kind_mean("C", "MADQN", mag);
        let m_ddpg = kind_mean("B", "MADDPG", mag);
        let ok = f_dqn > f_qmix
            && f_dqn > f_ddpg
            && (f_qmix - f_ddpg).abs() <= FREQ_APPROX
            && f_qmix.min(f_ddpg) > f_rule
            && m_dqn > m_ddpg;
        holds += ok as usize;
        lines.push(format!(
            "seed {seed} freq MADQN {f_dqn:.3} QMIX {f_qmix:.3} MADDPG {f_ddpg:.3} Rule {f_rule:.3}, mag MADQN {m_dqn:.4} MADDPG {m_ddpg:.4} -> {}",
            if ok { "holds" } else { "violated" }
        ));
    }
    let pass = holds >= 2 && t.elapsed().as_secs_f64() < 900.0;
    verdict(
        6,
        "adaptability ordering",
        pass,
        &format!("ordering holds in {holds}/3 runs [{}]", lines.join("; ")),
        t,
    );
    assert!(pass);
}

#[test]
fn c07_revenue_direction() {
    let t = Instant::now();
    let runs = desk_runs();
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in DESK_SEEDS {
        let c = runs[&("C", seed)].mean_return();
        let a = runs[&("A", seed)].mean_return();
        wins += (c > a) as usize;
        parts.push(format!("seed {seed}: C {c:.0} vs A {a:.0}"));
    }
    let pass = wins >= 2 && t.elapsed().as_secs_f64() < 900.0;
    verdict(7, "revenue direction", pass, &format!("C > A in {wins}/3 runs [{}]", parts.join("; ")), t);
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn c08_wilcoxon_exactness() {
    let t = Instant::now();
    let p4 = wilcoxon_signed_rank(&[3.0, 5.0, 4.0, 9.0], &[1.0, 2.0, 1.5, 2.0]).unwrap().p_value;
    let p5 = wilcoxon_signed_rank(&[3.0, 5.0, 4.0, 9.0, 7.0], &[1.0, 2.0, 1.5, 2.0, 1.0]).unwrap().p_value;
    // Exact null: only the all-positive and all-negative sign vectors are as
    // extreme, so p = 2 / 2^n.
    let pass = p4 == 2.0 / 16.0 && p5 == 2.0 / 32.0 && t.elapsed().as_secs_f64() < 1.0;
    verdict(8, "Wilcoxon exactness", pass, &format!("n=4 p={p4}, n=5 p={p5}"), t);
    assert!(pass);
}

// ---------------------------------------------------------------- 9

#[test]
fn c09_exploration_schedules() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for (schedule, start, decay, floor) in [
        (ExplorationSchedule::epsilon_greedy(), 1.0, 0.995, 0.05),
        (ExplorationSchedule::maddpg_noise(), 0.2, 0.9995, 0.05),
    ] {
        for e in [0u64, 1, 100, 1_000_000] {
            let want = f64::max(floor, start * f64::powi(decay, e as i32));
            worst = worst.max((schedule.value(e) - want).abs());
        }
    }
    let pass = worst <= 1e-12 && t.elapsed().as_secs_f64() < 1.0;
    verdict(9, "exploration schedules", pass, &format!("max deviation {worst:.1e}"), t);
    assert!(pass);
}

// ---------------------------------------------------------------- 10

#[test]
fn c10_replay_recency_bias() {
    let t = Instant::now();
    let mut buffer = ReplayBuffer::new(10, 0.9).unwrap();
    for i in 0..3u32 {
        buffer.push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draws = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        counts[buffer.sample_index(&mut rng).unwrap()] += 1;
    }
    // Index 2 is the newest entry (age 0).
    let z = 1.0 + 0.9 + 0.81;
    let analytic = [0.81 / z, 0.9 / z, 1.0 / z];
    let worst = (0..3)
        .map(|i| (counts[i] as f64 / draws as f64 - analytic[i]).abs() / analytic[i])
        .fold(0.0, f64::max);
    let pass = worst <= 0.02 && t.elapsed().as_secs_f64() < 5.0;
    verdict(10, "replay recency bias", pass, &format!("max relative deviation {:.2}%", worst * 100.0), t);
    assert!(pass);
}

// ---------------------------------------------------------------- 11

#[test]
fn c11_byte_reproducibility() {
    let t = Instant::now();
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for id in ["D", "H"] {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut outputs = Vec::new();
        for d in &dirs {
            let spec = ExperimentSpec::desk(id, 77, d.path()).unwrap();
            outputs.push(run_experiment(&spec, 2).unwrap());
        }
        for ((m0, _), (m1, _)) in outputs[0].iter().zip(&outputs[1]) {
            for name in ["history.csv", "metrics.json"] {
                let a = std::fs::read(dirs[0].path().join(&m0.run_id).join(name)).unwrap();
                let b = std::fs::read(dirs[1].path().join(&m1.run_id).join(name)).unwrap();
                compared += 1;
                if a != b {
                    mismatches.push(format!("{}/{name}", m0.run_id));
                }
            }
        }
    }
    let pass = mismatches.is_empty() && compared > 0 && t.elapsed().as_secs_f64() < 120.0;
    verdict(
        11,
        "byte reproducibility",
        pass,
        &format!("{compared} artifacts compared, {} differ {:?}", mismatches.len(), mismatches),
        t,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 12

#[test]
fn c12_calibration_recovery() {
    let t = Instant::now();
    let (elasticity, uplift, seasonal, lag): (f64, f64, f64, f64) = (-0.072, 1.35, 0.15, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut rows = Vec::new();
    let mut clusters = BTreeMap::new();
    for (pi, alpha) in [9.0, 9.5, 10.0].into_iter().enumerate() {
        let code = format!("SKU{pi}");
        clusters.insert(code.clone(), [1, 2, 3][pi]);
        let mut lag_log_q = alpha / (1.0 - lag);
        for year in [2010, 2011] {
            for week in 1..=52u32 {
                let price: f64 = rng.random_range(2.0..8.0);
                let holiday = if (47..=52).contains(&week) { 1.0 } else { 0.0 };
                let sin = (2.0 * std::f64::consts::PI * week as f64 / 52.0).sin();
                let log_q = alpha + elasticity * price.ln() + uplift.ln() * holiday + seasonal * sin + lag * lag_log_q;
                let quantity = log_q.exp().round() as i64;
                lag_log_q = (quantity as f64).ln();
                let day = NaiveDate::from_isoywd_opt(year, week, Weekday::Tue).unwrap();
                rows.push(Transaction {
                    invoice_no: format!("{pi}-{year}-{week}"),
                    stock_code: code.clone(),
                    description: String::new(),
                    quantity,
                    invoice_date: day.and_hms_opt(10, 0, 0).unwrap(),
                    unit_price: price,
                    customer_id: None,
                    country: "United Kingdom".into(),
                });
            }
        }
    }
    let weekly = aggregate_weekly(&TransactionTable { rows, errors: Vec::new() });
    let fit = calibrate(&weekly, &clusters).unwrap();
    let pass = close(fit.elasticity, elasticity, 0.01)
        && close(fit.holiday_uplift, uplift, 0.02)
        && t.elapsed().as_secs_f64() < 10.0;
    verdict(
        12,
        "calibration recovery",
        pass,
        &format!("elasticity {:.4} (true {elasticity}), holiday uplift {:.4} (true {uplift})", fit.elasticity, fit.holiday_uplift),
        t,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 13

/// Deterministic toy MDP: `next[s][a]`, `reward[s][a]`.
const NEXT: [[usize; 2]; 2] = [[0, 1], [0, 1]];
const REWARD: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 2.0]];

fn one_hot(s: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2];
    v[s] = 1.0;
    v
}

/// Enumerates all four deterministic policies, evaluates each exactly and
/// returns the one whose value dominates in every state.
fn tabular_optimal(gamma: f64) -> [usize; 2] {
    let mut best: Option<([usize; 2], [f64; 2])> = None;
    for a0 in 0..2 {
        for a1 in 0..2 {
            let pi = [a0, a1];
            let mut v = [0.0; 2];
            for _ in 0..5000 {
                v = [0, 1].map(|s| REWARD[s][pi[s]] + gamma * v[NEXT[s][pi[s]]]);
            }
            if best.is_none_or(|(_, bv)| v[0] >= bv[0] && v[1] >= bv[1]) {
                best = Some((pi, v));
            }
        }
    }
    best.unwrap().0
}

fn toy_run(seed: u64, optimal: [usize; 2], params: &DqnParams) -> Option<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut learner = QLearner::new(2, 1, 2, params.clone(), &mut rng).unwrap();
    let mut s = 0;
    let mut converged_at = None;
    for step in 1..=5000 {
        let a = learner.act(&one_hot(s), 0.2, &mut rng).unwrap()[0];
        let next = NEXT[s][a];
        let tr = Transition::new(one_hot(s), Action::Discrete(vec![a]), REWARD[s][a], one_hot(next), false).unwrap();
        learner.replay.push(tr);
        learner.learn(&mut rng).unwrap();
        s = next;
        let greedy = [0, 1].map(|st| learner.greedy(&one_hot(st)).unwrap()[0]);
        if greedy == optimal {
            converged_at.get_or_insert(step);
        } else {
            converged_at = None;
        }
    }
    converged_at
}

#[test]
fn c13_toy_mdp_learning() {
    let t = Instant::now();
    let params = DqnParams::default();
    let optimal = tabular_optimal(params.gamma);
    let results: Vec<Option<usize>> = std::thread::scope(|scope| {
        let hs: Vec<_> = [13u64, 14, 15]
            .iter()
            .map(|&seed| {
                let p = &params;
                scope.spawn(move || toy_run(seed, optimal, p))
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let ok = results.iter().filter(|r| r.is_some()).count();
    let pass = ok >= 2 && t.elapsed().as_secs_f64() < 60.0;
    verdict(
        13,
        "toy-MDP learning sanity",
        pass,
        &format!("optimal policy {optimal:?}; greedy policy settled on it in {ok}/3 seeds (from step {results:?})"),
        t,
    );
    assert!(pass);
}
