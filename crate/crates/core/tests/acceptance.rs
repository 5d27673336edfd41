//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fairk::analysis::{
    estimate_lg, estimate_lh, estimate_ltilde, theorem1_bound, BoundOptions, ConvergenceConstants,
    FederatedObjective, QuadraticObjective,
};
use fairk::aou_markov::{analyze, build_transition_matrix, simulate_exchange_process, ExchangeModel};
use fairk::channel::ChannelParams;
use fairk::harness::{self, default_mc_rounds, ExperimentConfig};
use fairk::rng::{stream, Stream};
use fairk::selection::{fair_k, max_staleness, round_robin, top_mask, AoUVector, PolicyConfig, PolicyKind};
use fairk::training::{
    build_clients, run_experiment, synthetic_classification, synthetic_regression, ClassificationSpec,
    RegressionSpec, Simulation, Task, TrainingSettings,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_staleness_law_vs_monte_carlo() -> Outcome {
    let t0 = Instant::now();
    let m = ExchangeModel::new(800, 80, 60, 15).map_err(|e| e.to_string())?;
    let (_, _, analytic) = analyze(&m).map_err(|e| e.to_string())?;
    let rounds = default_mc_rounds(&m);
    let mc = simulate_exchange_process(&m, rounds, 2024).map_err(|e| e.to_string())?;
    let tv = analytic.distribution.total_variation(&mc.distribution);
    let horizon = m.max_staleness().unwrap_or(0);
    let beyond = analytic.distribution.mass_beyond(37) + mc.distribution.mass_beyond(37);
    let secs = t0.elapsed().as_secs_f64();
    check(
        horizon == 37 && tv <= 0.02 && beyond == 0.0 && mc.refresh_events >= 1_000_000 && mc.max_age <= 37,
        format!(
            "TV = {tv:.4} (<= 0.02), T = {horizon}, mass beyond 37 = {beyond}, {} refresh events, {secs:.1} s",
            mc.refresh_events
        ),
    )
}

fn c2_staleness_cap() -> Outcome {
    let spec = RegressionSpec { train_samples: 500, test_samples: 50, ..RegressionSpec::default() };
    let d = spec.features;
    let (k, k_m) = (d / 10, 3 * d / 40);
    let cap = max_staleness(d, k_m, k - k_m).unwrap_or(0);
    let mut worst = 0;
    for seed in 0..10 {
        let (train, _) = synthetic_regression(&spec, &mut stream(seed, Stream::Data)).map_err(|e| e.to_string())?;
        let clients = build_clients(&train, 10, 0.3, 10, seed).map_err(|e| e.to_string())?;
        let policy = PolicyConfig::new(PolicyKind::FairK, k, k_m).map_err(|e| e.to_string())?;
        let mut s = TrainingSettings::new(policy, ChannelParams::default(), seed);
        s.local_steps = 1;
        s.eval_every = 0;
        let (metrics, _) = run_experiment(Task::quadratic(d), clients, None, s, 1000).map_err(|e| e.to_string())?;
        let late = metrics.iter().filter(|m| m.round >= cap as usize).map(|m| m.max_aou).max().unwrap_or(0);
        worst = worst.max(late);
    }
    check(worst <= cap, format!("max AoU after round {cap} = {worst} (cap {cap}), d = {d}, k = {k}, k_M = {k_m}, 10 seeds x 1000 rounds"))
}

fn c3_policy_reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let d = rng.random_range(1..=64);
        let k = rng.random_range(0..=d);
        // Coarse values so ties are common.
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-4i32..=4) as f64 * 0.5).collect();
        let aou = AoUVector::from_ages((0..d).map(|_| rng.random_range(0..6u64)).collect());
        let as_top = PolicyConfig::new(PolicyKind::FairK, k, k).map_err(|e| e.to_string())?;
        let as_rr = PolicyConfig::new(PolicyKind::FairK, k, 0).map_err(|e| e.to_string())?;
        let same_top = fair_k(&g, &aou, &as_top) == top_mask(&g, k);
        let same_rr = fair_k(&g, &aou, &as_rr) == round_robin(&aou, k);
        mismatches += usize::from(!same_top) + usize::from(!same_rr);
    }
    check(mismatches == 0, format!("{mismatches} mismatches over 10^4 instances"))
}

fn c4_fedsgd_collapse() -> Outcome {
    let spec = RegressionSpec { features: 40, train_samples: 800, test_samples: 50, ..RegressionSpec::default() };
    let (train, _) = synthetic_regression(&spec, &mut stream(4, Stream::Data)).map_err(|e| e.to_string())?;
    let clients = build_clients(&train, 8, 0.3, 16, 4).map_err(|e| e.to_string())?;
    let policy = PolicyConfig::new(PolicyKind::FairK, 40, 30).map_err(|e| e.to_string())?;
    let mut s = TrainingSettings::new(policy, ChannelParams::noiseless_unit(), 4);
    s.local_steps = 1;
    s.eval_every = 0;
    let mut sim = Simulation::new(Task::quadratic(40), clients, None, s).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        sim.step().map_err(|e| e.to_string())?;
        let grads = sim.client_gradients();
        let n = grads.len() as f64;
        let mean: Vec<f64> = (0..40).map(|i| grads.iter().map(|g| g[i]).sum::<f64>() / n).collect();
        let err: f64 = sim.gradient().iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(err / scale);
    }
    check(worst <= 1e-12, format!("max relative error {worst:.2e} over 50 rounds (<= 1e-12)"))
}

/// Two-sided sign test p-value for `wins` successes out of `n` trials.
fn sign_test(wins: usize, n: usize) -> f64 {
    let tail = wins.max(n - wins);
    let mut p = 0.0;
    for i in tail..=n {
        let mut c = 1.0;
        for j in 0..i {
            c *= (n - j) as f64 / (j + 1) as f64;
        }
        p += c * 0.5f64.powi(n as i32);
    }
    (2.0 * p).min(1.0)
}

fn c5_aou_ordering() -> Outcome {
    let spec = RegressionSpec::default();
    let d = spec.features;
    let (k, k_m) = (d / 10, 3 * d / 40);
    let (mut fair_lt_rand, mut rand_lt_top) = (0, 0);
    let mut means = [0.0; 3];
    for seed in 0..10 {
        let (train, _) = synthetic_regression(&spec, &mut stream(seed, Stream::Data)).map_err(|e| e.to_string())?;
        let mut avg = [0.0; 3];
        for (j, kind) in [PolicyKind::FairK, PolicyKind::TopRand, PolicyKind::TopK].into_iter().enumerate() {
            let clients = build_clients(&train, 50, 0.3, 50, seed).map_err(|e| e.to_string())?;
            let policy = PolicyConfig::new(kind, k, k_m).map_err(|e| e.to_string())?;
            let mut s = TrainingSettings::new(policy, ChannelParams::default(), seed);
            s.eval_every = 0;
            let (m, _) = run_experiment(Task::quadratic(d), clients, None, s, 300).map_err(|e| e.to_string())?;
            // Long-run average over the last two thirds of the run.
            avg[j] = m[100..].iter().map(|r| r.avg_aou).sum::<f64>() / (m.len() - 100) as f64;
            means[j] += avg[j] / 10.0;
        }
        fair_lt_rand += usize::from(avg[0] < avg[1]);
        rand_lt_top += usize::from(avg[1] < avg[2]);
    }
    let (p1, p2) = (sign_test(fair_lt_rand, 10), sign_test(rand_lt_top, 10));
    check(
        fair_lt_rand > 5 && rand_lt_top > 5 && p1 < 0.05 && p2 < 0.05,
        format!(
            "mean AoU FAIR-k {:.2} < TopRand {:.2} < Top-k {:.2}; wins {fair_lt_rand}/10 (p = {p1:.4}), {rand_lt_top}/10 (p = {p2:.4})",
            means[0], means[1], means[2]
        ),
    )
}

fn base_constants() -> ConvergenceConstants {
    ConvergenceConstants {
        l_g: 2.0,
        l_h: 1.5,
        l_tilde: 3.0,
        sigma_s2: 0.4,
        sigma_g2: 0.3,
        g2: 1.2,
        mu_c: 1.0,
        sigma_c2: 4.0 / std::f64::consts::PI - 1.0,
        sigma_z2: 0.5,
        d: 210,
        n: 50,
        h: 5,
        eta: 0.01,
        eta_l: 0.01,
        e_tau: 10.0,
        f_gap: 2.3,
        t_rounds: 500.0,
    }
}

fn c6_bound_evaluator() -> Outcome {
    let mut failures = Vec::new();
    for exact_constants in [false, true] {
        let opts = BoundOptions { exact_constants, strict: false };
        let vanishing = ConvergenceConstants {
            e_tau: 0.0,
            sigma_z2: 0.0,
            sigma_s2: 0.0,
            sigma_g2: 0.0,
            h: 1,
            t_rounds: f64::INFINITY,
            ..base_constants()
        };
        let r = theorem1_bound(&vanishing, opts).map_err(|e| e.to_string())?;
        if r.total != 0.0 {
            failures.push(format!("vanishing case gives {} (exact = {exact_constants})", r.total));
        }
        let one_step = ConvergenceConstants { h: 1, ..base_constants() };
        let r = theorem1_bound(&one_step, opts).map_err(|e| e.to_string())?;
        if r.terms.local_divergence != 0.0 || r.terms.local_variance != 0.0 {
            failures.push(format!("H = 1 local terms nonzero (exact = {exact_constants})"));
        }
        let mut prev = f64::NEG_INFINITY;
        for i in 0..20 {
            let c = ConvergenceConstants { e_tau: i as f64 * 2.0, ..base_constants() };
            let total = theorem1_bound(&c, opts).map_err(|e| e.to_string())?.total;
            if total <= prev {
                failures.push(format!("not increasing at E[tau] = {} (exact = {exact_constants})", c.e_tau));
            }
            prev = total;
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "vanishing case = 0, H = 1 local terms = 0, increasing over 20 E[tau] values (both constant sets)".into()
        } else {
            failures.join("; ")
        },
    )
}

fn lambda_max(h: &[f64], d: usize) -> f64 {
    let m = DMatrix::from_row_slice(d, d, h);
    SymmetricEigen::new(m).eigenvalues.max()
}

fn c7_lipschitz() -> Outcome {
    let d = 50;
    let rows = 80;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a: Vec<f64> = (0..rows * d).map(|_| rng.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
    let obj = QuadraticObjective::least_squares(&a, &b, d);
    let am = DMatrix::from_row_slice(rows, d, &a);
    let ata = am.transpose() * &am;
    let lmax = SymmetricEigen::new(ata.clone()).eigenvalues.max();
    let l_g = estimate_lg(&obj, &[], 10_000, 1.0, 7).map_err(|e| e.to_string())?;
    let ratio = l_g / lmax;
    let lg_ok = (0.9..=1.0 + 1e-12).contains(&ratio);

    // Identical clients: same Hessian and linear term.
    let h: Vec<f64> = ata.transpose().iter().copied().collect();
    let c: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let same = QuadraticObjective::new(d, vec![(h.clone(), c); 4]);
    let l_h = estimate_lh(&same, &[], 200, 1.0, 7).map_err(|e| e.to_string())?;
    let lh_ok = l_h <= 1e-12 * lmax;

    // L̃ on the desk classification task over three heterogeneity levels.
    let task = Task::logistic(20, 10);
    let mut ltilde = [0.0; 3];
    let mut dominates = true;
    let seeds = 3;
    for seed in 0..seeds {
        let spec = ClassificationSpec::default();
        let (train, _) = synthetic_classification(&spec, &mut stream(seed, Stream::Data)).map_err(|e| e.to_string())?;
        for (j, alpha) in [0.1, 0.3, 1.0].into_iter().enumerate() {
            let clients = build_clients(&train, 50, alpha, 50, seed).map_err(|e| e.to_string())?;
            let fed = FederatedObjective::from_clients(task, &clients, 50);
            let e = estimate_ltilde(&fed, &[], 200, 1.0, seed).map_err(|e| e.to_string())?;
            dominates &= e.l_tilde >= e.l_g;
            ltilde[j] += e.l_tilde / seeds as f64;
        }
    }
    // Clients with Hessians H/3, 2H/3, H: the exact L̃ is λ_max(H).
    let scaled = (1..=3)
        .map(|s| (h.iter().map(|x| x * s as f64 / 3.0).collect(), vec![0.0; d]))
        .collect();
    let het = QuadraticObjective::new(d, scaled);
    let quad = estimate_ltilde(&het, &[], 1000, 1.0, 7).map_err(|e| e.to_string())?;
    dominates &= quad.l_tilde >= quad.l_g;
    let het_lmax = lambda_max(&h, d);
    let order_ok = ltilde[0] > ltilde[1] && ltilde[1] > ltilde[2];
    check(
        lg_ok && lh_ok && dominates && order_ok,
        format!(
            "L_g/lambda_max = {ratio:.4} in [0.9, 1]; L_h (identical) = {l_h:.1e}; L~ >= L_g on every run: {dominates} \
             (quadratic L~ = {:.2}, max lambda = {het_lmax:.2}); mean L~ over {seeds} seeds at Dir 0.1/0.3/1.0 = {:.3}/{:.3}/{:.3}",
            quad.l_tilde, ltilde[0], ltilde[1], ltilde[2]
        ),
    )
}

fn c8_markov_numerics() -> Outcome {
    let mut worst_row: f64 = 0.0;
    let mut checked = 0;
    let mut persistence_violations = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut models = vec![ExchangeModel::new(800, 80, 60, 15).map_err(|e| e.to_string())?];
    while models.len() < 40 {
        let d = rng.random_range(20..400);
        let k = rng.random_range(2..=d / 2);
        let k_m = rng.random_range(2..=k);
        let k0 = rng.random_range(1..k_m);
        if let Ok(m) = ExchangeModel::new(d, k, k_m, k0) {
            if k_m < k {
                models.push(m);
            }
        }
    }
    for m in &models {
        let p = build_transition_matrix(m).map_err(|e| e.to_string())?;
        for i in 0..p.dim() {
            worst_row = worst_row.max((p.row_sum(i) - 1.0).abs());
        }
        if (m.k0 as f64) < (m.k_m * (m.d - m.k_m)) as f64 / m.d as f64 {
            checked += 1;
            if 1.0 - m.p1() <= m.p2() {
                persistence_violations += 1;
            }
        }
    }
    let (p, ss, _) = analyze(&models[0]).map_err(|e| e.to_string())?;
    let image = p.left_mul(&ss.pi);
    let residual: f64 = image.iter().zip(&ss.pi).map(|(a, b)| (a - b).abs()).sum();
    check(
        worst_row <= 1e-12 && residual < 1e-10 && persistence_violations == 0,
        format!(
            "max |row sum - 1| = {worst_row:.1e} over {} models; residual at d = 800: {residual:.1e}; \
             persistence held in {checked}/{checked} eligible models (violations {persistence_violations})",
            models.len()
        ),
    )
}

fn c9_training_sanity() -> Outcome {
    let mut acc = [0.0; 3];
    let seeds = 5;
    for seed in 0..seeds {
        let cfg = ExperimentConfig { seed, eval_every: 100, ..ExperimentConfig::default() };
        let prepared = harness::prepare(&cfg).map_err(|e| e.to_string())?;
        let d = prepared.task.dim();
        let budgeted = cfg.policy.resolve(PolicyKind::FairK, d).map_err(|e| e.to_string())?;
        let arms = [
            PolicyConfig::new(PolicyKind::FairK, d, d).map_err(|e| e.to_string())?,
            budgeted,
            cfg.policy.resolve(PolicyKind::TopK, d).map_err(|e| e.to_string())?,
        ];
        for (j, policy) in arms.into_iter().enumerate() {
            let clients = build_clients(&prepared.train, cfg.clients, cfg.dir_alpha, cfg.batch_size, seed)
                .map_err(|e| e.to_string())?;
            let s = harness::training_settings(&cfg, policy);
            let (m, _) = run_experiment(prepared.task, clients, prepared.test.clone(), s, cfg.rounds)
                .map_err(|e| e.to_string())?;
            acc[j] += m.last().and_then(|r| r.test_accuracy).unwrap_or(0.0) / seeds as f64;
        }
    }
    let ratio = acc[1] / acc[0];
    check(
        ratio >= 0.9 && acc[1] > acc[2],
        format!(
            "mean accuracy at round 500 over {seeds} seeds: uncompressed {:.4}, FAIR-k {:.4} (ratio {ratio:.4} >= 0.9), Top-k {:.4}",
            acc[0], acc[1], acc[2]
        ),
    )
}

fn c10_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str, workers: usize| -> Result<Vec<u8>, String> {
        let cfg = ExperimentConfig {
            seed: 10,
            rounds: 40,
            workers,
            out: dir.path().join(name),
            ..ExperimentConfig::default()
        };
        harness::run(&cfg).map_err(|e| e.to_string())?;
        std::fs::read(cfg.out.join("metrics.jsonl")).map_err(|e| e.to_string())
    };
    let a = run("a", 1)?;
    let b = run("b", 1)?;
    let c = run("c", 4)?;
    check(
        !a.is_empty() && a == b && a == c,
        format!("{} bytes; rerun identical: {}; 1 vs 4 workers identical: {}", a.len(), a == b, a == c),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("C1 staleness law vs Monte Carlo", c1_staleness_law_vs_monte_carlo),
        ("C2 staleness cap", c2_staleness_cap),
        ("C3 policy reductions", c3_policy_reductions),
        ("C4 FedSGD collapse", c4_fedsgd_collapse),
        ("C5 AoU ordering", c5_aou_ordering),
        ("C6 bound evaluator", c6_bound_evaluator),
        ("C7 Lipschitz estimators", c7_lipschitz),
        ("C8 Markov numerics", c8_markov_numerics),
        ("C9 training sanity", c9_training_sanity),
        ("C10 reproducibility", c10_reproducibility),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {name}: {detail} [{:.1} s]", t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
