//! End-to-end acceptance checks. Runs without the libtest harness so every
//! check prints its own PASS/FAIL line; exits nonzero if any check fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selab::agents::{
    train, validate_schedules, CriticParams, LearningRateSchedule, Mode, Schedules, TrainConfig, TrainOutcome,
};
use selab::density::{backprop, decoder_marginal, elbo, init, log_density, update_phi, DensitySample, LatentConfig};
use selab::dist::{acceptance_sample, empirical_discounted, entropy, exact_discounted, frequencies, EstimatorForm};
use selab::env::{build, sample_episode, sample_episodes, slits_layout, EnvName, EnvSpec};
use selab::exact_pg::{analytic_gradient, finite_diff_gradient, run_exact_pg, RegKind, DEFAULT_LR};
use selab::harness::{self, ExperimentConfig};
use selab::mdp::{value_iteration, FeatureMap, SoftmaxPolicy};

use common::{action_probs, iterated_q, random_mdp, random_policy, rel_inf_error, rng, series_occupancy, tv};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn all(parts: &[(bool, String)]) -> Outcome {
    outcome(
        parts.iter().all(|(ok, _)| *ok),
        parts.iter().map(|(_, d)| d.as_str()).collect::<Vec<_>>().join("; "),
    )
}

fn distribution_identity() -> Outcome {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let ns = r.gen_range(2..9);
        let na = r.gen_range(1..5);
        let gamma = r.gen_range(0.0..0.99);
        let mdp = random_mdp(&mut r, ns, na, gamma);
        let policy = random_policy(&mut r, ns, na, 3.0);
        let d = exact_discounted(&mdp, &policy, &FeatureMap::identity(ns)).unwrap();
        worst = worst.max((d.probs.iter().sum::<f64>() - 1.0).abs());
    }

    let env = build(&EnvSpec::new(EnvName::GridworldOpen).with("rows", 4.0).with("cols", 4.0)).unwrap();
    assert_eq!(env.mdp.gamma(), 0.9);
    let policy = SoftmaxPolicy::zeros(env.fmap.n_features(), env.mdp.n_actions());
    let d = exact_discounted(&env.mdp, &policy, &env.fmap).unwrap();
    let draws = acceptance_sample(&env.mdp, &policy, &env.fmap, 100_000, 3).unwrap();
    let dist = tv(&frequencies(&draws, env.mdp.n_states()), &d.probs);
    all(&[
        (worst <= 1e-9, format!("max |sum - 1| = {worst:.1e} over 100 random cases")),
        (dist < 0.01, format!("acceptance-sampling TV = {dist:.4}")),
    ])
}

fn estimator_consistency() -> Outcome {
    let mut r = rng(2);
    let mdp = random_mdp(&mut r, 5, 2, 0.9);
    let fmap = FeatureMap::identity(5);
    let policy = random_policy(&mut r, 5, 2, 1.0);
    let exact = series_occupancy(&mdp, &action_probs(&policy, &fmap, 5));
    let t = 100;
    let episodes = sample_episodes(&mdp, &policy, &fmap, t, 11, 10_000).unwrap();
    let est = empirical_discounted(&episodes, 5, 0.9, EstimatorForm::Consistent).unwrap();
    let dist = tv(&est.normalized(), &exact);
    let want_mass = 1.0 - 0.9f64.powi(t as i32 + 1);
    let mass_err = (est.mass - want_mass).abs();
    all(&[
        (dist < 0.02, format!("TV(renormalized, d) = {dist:.4}")),
        (mass_err < 1e-12, format!("|mass - (1 - gamma^(T+1))| = {mass_err:.1e}")),
    ])
}

fn gradient_exactness() -> Outcome {
    let mut r = rng(3);
    let mut worst_pg: f64 = 0.0;
    for _ in 0..20 {
        let gamma = r.gen_range(0.5..0.95);
        let mdp = random_mdp(&mut r, 5, 3, gamma);
        let fmap = FeatureMap::identity(5);
        let policy = random_policy(&mut r, 5, 3, 1.5);
        for lambda in [0.0, 0.1] {
            for kind in [RegKind::Discounted, RegKind::Stationary] {
                let g = analytic_gradient(&mdp, &policy, &fmap, lambda, kind).unwrap();
                let fd = finite_diff_gradient(&mdp, &policy, &fmap, lambda, kind, 1e-5).unwrap();
                worst_pg = worst_pg.max(rel_inf_error(&g, &fd, 1e-8));
            }
        }
    }

    let (mut worst_phi, mut worst_theta): (f64, f64) = (0.0, 0.0);
    let h = 1e-5;
    for fixture in 0..10u64 {
        let cfg = LatentConfig {
            z_dim: 2 + fixture as usize % 4,
            hidden_dim: 3 + fixture as usize % 5,
            n_z_samples: 1,
        };
        let (input_dim, n_states) = (4 + fixture as usize, 3 + fixture as usize % 6);
        let phi = init(cfg, input_dim, n_states, 100 + fixture).unwrap();
        let mut fr = rng(200 + fixture);
        let theta: Vec<f64> = (0..input_dim).map(|_| fr.gen_range(-2.0..2.0)).collect();
        let state = fixture as usize % n_states;
        let weight = 0.3 + 0.07 * fixture as f64;
        let f = |p: &selab::density::VaeParams, t: &[f64]| elbo(p, t, state, weight, fixture).unwrap().0;
        let (_, cache) = elbo(&phi, &theta, state, weight, fixture).unwrap();
        let (g_phi, g_theta) = backprop(&phi, &cache);
        let fd_phi: Vec<f64> = (0..phi.len())
            .map(|i| {
                let (mut up, mut dn) = (phi.clone(), phi.clone());
                up.data[i] += h;
                dn.data[i] -= h;
                (f(&up, &theta) - f(&dn, &theta)) / (2.0 * h)
            })
            .collect();
        let fd_theta: Vec<f64> = (0..theta.len())
            .map(|i| {
                let (mut up, mut dn) = (theta.clone(), theta.clone());
                up[i] += h;
                dn[i] -= h;
                (f(&phi, &up) - f(&phi, &dn)) / (2.0 * h)
            })
            .collect();
        worst_phi = worst_phi.max(rel_inf_error(&g_phi.data, &fd_phi, 1e-8));
        worst_theta = worst_theta.max(rel_inf_error(&g_theta, &fd_theta, 1e-8));
    }
    all(&[
        (worst_pg < 1e-4, format!("policy gradient rel err {worst_pg:.1e} (80 cases)")),
        (worst_phi < 1e-4, format!("density phi rel err {worst_phi:.1e}")),
        (worst_theta < 1e-4, format!("density theta-input rel err {worst_theta:.1e} (10 fixtures)")),
    ])
}

fn policy_gradient_theorem() -> Outcome {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (ns, na) = (r.gen_range(2..7), r.gen_range(2..5));
        let gamma = r.gen_range(0.3..0.95);
        let mdp = random_mdp(&mut r, ns, na, gamma);
        let fmap = FeatureMap::identity(ns);
        let policy = random_policy(&mut r, ns, na, 2.0);
        let pi = action_probs(&policy, &fmap, ns);
        let d = series_occupancy(&mdp, &pi);
        let q = iterated_q(&mdp, &pi);
        // ∂ log π(a|s) / ∂θ[s, b] = 1[a = b] − π(b|s) for tabular softmax.
        let mut want = vec![0.0; ns * na];
        for s in 0..ns {
            for b in 0..na {
                let mut acc = 0.0;
                for a in 0..na {
                    let score = f64::from(u8::from(a == b)) - pi[s][b];
                    acc += pi[s][a] * score * q[s][a];
                }
                want[s * na + b] = d[s] * acc / (1.0 - gamma);
            }
        }
        let got = analytic_gradient(&mdp, &policy, &fmap, 0.0, RegKind::Discounted).unwrap();
        worst = worst.max(got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    outcome(worst < 1e-8, format!("max abs diff {worst:.1e} over 20 random MDPs"))
}

fn iterations_to_optimum(spec: EnvSpec, lambda: f64, iters: usize) -> Option<usize> {
    let env = build(&spec).unwrap();
    let theta0 = SoftmaxPolicy::zeros(env.fmap.n_features(), env.mdp.n_actions());
    let optimum = value_iteration(&env.mdp, 1e-12).unwrap().start_value(&env.mdp);
    let trace = run_exact_pg(&env.mdp, &theta0, &env.fmap, lambda, DEFAULT_LR, iters, RegKind::Discounted).unwrap();
    trace.first_reaching(optimum - 0.02 * optimum.abs())
}

fn exact_pg_reproduction() -> Outcome {
    let mut parts = Vec::new();
    for (name, iters) in [(EnvName::TwoState, 20_000), (EnvName::GridworldOpen, 200_000)] {
        let base = iterations_to_optimum(EnvSpec::new(name), 0.0, iters);
        let budget = base.unwrap_or(iters);
        for lambda in [0.01, 0.1] {
            let hit = iterations_to_optimum(EnvSpec::new(name), lambda, budget + 1);
            let ok = match (hit, base) {
                (Some(h), Some(b)) => h <= b,
                (Some(_), None) => true,
                (None, _) => false,
            };
            parts.push((ok, format!("{} lambda {lambda}: {hit:?} vs {base:?}", name.as_str())));
        }
    }

    let env = build(&EnvSpec::new(EnvName::AliasedCounterexample)).unwrap();
    let theta0 = SoftmaxPolicy::zeros(env.fmap.n_features(), env.mdp.n_actions());
    let j = |lambda| {
        let trace = run_exact_pg(&env.mdp, &theta0, &env.fmap, lambda, DEFAULT_LR, 20_000, RegKind::Discounted).unwrap();
        trace.records.last().unwrap().j
    };
    let (j0, j1) = (j(0.0), j(0.1));
    println!("    aliased counterexample after 20000 iterations: J(lambda 0) = {j0:.4}, J(lambda 0.1) = {j1:.4}");
    all(&parts)
}

fn density_fidelity() -> Outcome {
    let env = build(&EnvSpec::new(EnvName::GridworldOpen).with("rows", 4.0).with("cols", 4.0)).unwrap();
    let ns = env.mdp.n_states();
    let policy = SoftmaxPolicy::zeros(env.fmap.n_features(), env.mdp.n_actions());
    let d = exact_discounted(&env.mdp, &policy, &env.fmap).unwrap();
    let h = entropy(&d).unwrap();
    let theta = policy.flat().to_vec();
    let (updates, batch, held_out) = (2000, 32, 10_000);
    let draws = acceptance_sample(&env.mdp, &policy, &env.fmap, updates * batch + held_out, 5).unwrap();
    let mut phi = init(LatentConfig::default(), theta.len(), ns, 0).unwrap();
    for k in 0..updates {
        let samples: Vec<DensitySample> = draws[k * batch..(k + 1) * batch]
            .iter()
            .map(|&state| DensitySample { theta: &theta, state, weight: 1.0 })
            .collect();
        phi = update_phi(&phi, &samples, 0.05, k as u64).unwrap();
    }
    let dist = tv(&decoder_marginal(&phi, 1000, 9), &d.probs);
    let test = &draws[updates * batch..];
    let neg_elbo = -test
        .iter()
        .enumerate()
        .map(|(i, &s)| log_density(&phi, &theta, s, 1 << 40 | i as u64).unwrap())
        .sum::<f64>()
        / test.len() as f64;
    let gap = (neg_elbo - h).abs();
    all(&[
        (dist < 0.1, format!("TV(decoder marginal, d) = {dist:.4}")),
        (gap < 0.3, format!("|-mean ELBO - H(d)| = {gap:.4} nats")),
    ])
}

fn timescale_contract() -> Outcome {
    let poly = LearningRateSchedule::polynomial;
    let ok = validate_schedules(&poly(0.5, 0.6), &poly(0.5, 0.6), &poly(0.1, 0.9));
    let summable = validate_schedules(&poly(0.5, 0.6), &poly(0.5, 0.6), &poly(0.1, 1.1));
    let fast = validate_schedules(&poly(0.5, 0.9), &poly(0.5, 0.6), &poly(0.1, 0.55));
    let names_ok = ok.is_ok()
        && summable.violations.contains(&"Σ c_k < ∞".to_string())
        && fast.violations.contains(&"c_k/a_k ↛ 0".to_string());

    let mut r = rng(7);
    let mdp = random_mdp(&mut r, 5, 2, 0.9);
    let fmap = FeatureMap::identity(5);
    let policy = random_policy(&mut r, 5, 2, 1.0);
    let pi = action_probs(&policy, &fmap, 5);
    let q = iterated_q(&mdp, &pi);
    let traj = sample_episode(&mdp, &policy, &fmap, 100_000, 17, 0).unwrap();
    let b = LearningRateSchedule::polynomial(1.0, 0.51);
    let mut psi = CriticParams::zeros(5, 2);
    for (k, step) in traj.steps.iter().enumerate() {
        psi.td_update(step, step.reward, &pi[step.next_state], mdp.gamma(), b.value(k));
    }
    let err = (0..5)
        .flat_map(|s| (0..2).map(move |a| (s, a)))
        .map(|(s, a)| (psi.get(s, a) - q[s][a]).abs())
        .fold(0.0, f64::max);
    all(&[
        (names_ok, format!("schedule report {:?} / {:?} / {:?}", ok.violations, summable.violations, fast.violations)),
        (err < 0.05, format!("critic |psi - Q|_inf = {err:.4} after {} transitions", traj.steps.len())),
    ])
}

fn tuned(env: EnvName, mode: Mode, lambda: f64, episodes: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(EnvSpec::new(env), episodes);
    cfg.mode = mode;
    cfg.lambda = lambda;
    cfg.update_period = 10;
    cfg.seed = seed;
    cfg.schedules = Schedules {
        a: LearningRateSchedule::polynomial(0.5, 0.51),
        b: LearningRateSchedule::polynomial(1.0, 0.51),
        c: LearningRateSchedule::polynomial(500.0, 0.55),
    };
    cfg
}

fn frozen_lake_reproduction() -> Outcome {
    let finals = |mode, lambda| -> Vec<f64> {
        (0..10)
            .map(|seed| train(&tuned(EnvName::FrozenLake, mode, lambda, 3000, seed)).unwrap().final_return(100))
            .collect()
    };
    let base = finals(Mode::Unregularized, 0.0);
    let reg = finals(Mode::RewardBonus, 0.1);
    let diffs: Vec<f64> = reg.iter().zip(&base).map(|(a, b)| a - b).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut boot = ChaCha8Rng::seed_from_u64(8);
    let mut means: Vec<f64> = (0..10_000)
        .map(|_| (0..diffs.len()).map(|_| diffs[boot.gen_range(0..diffs.len())]).sum::<f64>() / diffs.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let lower = means[means.len() / 10];
    println!("    baseline finals    {base:.3?}");
    println!("    regularized finals {reg:.3?}");
    all(&[
        (mean(&reg) >= mean(&base), format!("mean final {:.3} vs baseline {:.3}", mean(&reg), mean(&base))),
        (lower >= 0.0, format!("bootstrap 10% quantile of paired mean difference {lower:+.3}")),
    ])
}

fn slits_coverage(dir: &std::path::Path) -> Outcome {
    let layout = slits_layout();
    let run = |mode, seed| -> TrainOutcome {
        let mut cfg = tuned(EnvName::GridworldSlits, mode, 0.1, 1000, seed);
        cfg.max_steps = Some(1000);
        train(&cfg).unwrap()
    };
    let mut wins = 0;
    let mut both_sides = 0;
    let mut heatmaps = true;
    let (mut reg_counts, mut base_counts) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let reg = run(Mode::RewardBonus, seed);
        let base = run(Mode::PolicyEntropyBaseline, seed);
        assert!(reg.total_steps <= 1000 && base.total_steps <= 1000);
        if reg.distinct_states() > base.distinct_states() {
            wins += 1;
        }
        reg_counts.push(reg.distinct_states());
        base_counts.push(base.distinct_states());
        let visited = |side: &dyn Fn(usize) -> bool| (0..layout.n_cells()).any(|s| reg.visits[s] > 0 && side(layout.cell(s).1));
        if visited(&|c| c < 3) && visited(&|c| c > 3) {
            both_sides += 1;
        }
        for (label, out) in [("state_entropy", &reg), ("policy_entropy", &base)] {
            let counts: Vec<f64> = out.visits.iter().map(|&v| v as f64).collect();
            let map = harness::emit_heatmap(&counts, Some(&layout)).unwrap();
            let path = dir.join(format!("seed_{seed}_{label}.pgm"));
            harness::write_atomic(&path, map.pgm.as_deref().unwrap_or_default()).unwrap();
            heatmaps &= std::fs::metadata(&path).map(|m| m.len() > 0).unwrap_or(false);
        }
    }
    println!("    distinct states, state entropy:  {reg_counts:?}");
    println!("    distinct states, policy entropy: {base_counts:?}");
    all(&[
        (wins >= 7, format!("state entropy strictly ahead in {wins}/10 seeds")),
        (both_sides > 0, format!("regularized runs reaching both sides of wall 1: {both_sides}/10")),
        (heatmaps, "heatmaps written".to_string()),
    ])
}

fn determinism(dir: &std::path::Path) -> Outcome {
    let text = |out: &std::path::Path| {
        format!(
            r#"{{"env": {{"name": "frozen_lake"}},
               "method": {{"type": "train", "mode": "reward_bonus", "lambda": 0.1, "episodes": 150, "update_period": 10}},
               "seeds": [0, 1, 2], "output_dir": {:?}}}"#,
            out.to_str().unwrap()
        )
    };
    let (a, b) = (dir.join("a"), dir.join("b"));
    let sa = harness::run(&ExperimentConfig::from_json(&text(&a)).unwrap(), Some(1)).unwrap();
    let sb = harness::run(&ExperimentConfig::from_json(&text(&b)).unwrap(), Some(3)).unwrap();
    let mut identical = sa.config_hash == sb.config_hash;
    let mut finals = Vec::new();
    for seed in 0..3 {
        let ma = std::fs::read(a.join(format!("seed_{seed}/metrics.csv"))).unwrap();
        let mb = std::fs::read(b.join(format!("seed_{seed}/metrics.csv"))).unwrap();
        identical &= ma == mb;
        let returns: Vec<f64> = String::from_utf8(ma)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        let tail = &returns[returns.len().saturating_sub(harness::FINAL_WINDOW)..];
        finals.push(tail.iter().sum::<f64>() / tail.len() as f64);
    }
    let summary: harness::RunSummary =
        serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    let agg = &summary.aggregate["final_return"];
    let mean = finals.iter().sum::<f64>() / 3.0;
    let sd = (finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    let err = (agg.mean - mean).abs().max((agg.stderr - sd / 3f64.sqrt()).abs());
    all(&[
        (identical, format!("metrics bitwise identical across reruns: {identical}")),
        (err < 1e-9 && agg.n == 3, format!("aggregate vs recomputation {err:.1e}")),
    ])
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let heatmaps = scratch.path().join("heatmaps");
    let plumbing = scratch.path().join("plumbing");
    type Check<'a> = (&'a str, Duration, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        ("distribution identity", Duration::from_secs(60), Box::new(distribution_identity)),
        ("estimator consistency", Duration::from_secs(60), Box::new(estimator_consistency)),
        ("gradient exactness", Duration::from_secs(120), Box::new(gradient_exactness)),
        ("policy gradient theorem", Duration::from_secs(60), Box::new(policy_gradient_theorem)),
        ("exact PG reproduction", Duration::from_secs(300), Box::new(exact_pg_reproduction)),
        ("density estimator fidelity", Duration::from_secs(300), Box::new(density_fidelity)),
        ("three-timescale contract", Duration::from_secs(120), Box::new(timescale_contract)),
        ("FrozenLake reproduction", Duration::from_secs(900), Box::new(frozen_lake_reproduction)),
        ("slits coverage", Duration::from_secs(600), Box::new(|| slits_coverage(&heatmaps))),
        ("determinism and plumbing", Duration::from_secs(60), Box::new(|| determinism(&plumbing))),
    ];
    let mut results = BTreeMap::new();
    for (i, (name, budget, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let pass = out.pass && took <= *budget;
        println!(
            "criterion {:>2} {:<28} {}  ({:.1}s) {}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            out.detail
        );
        results.insert(i + 1, pass);
    }
    let failed: Vec<_> = results.iter().filter(|(_, p)| !**p).map(|(i, _)| *i).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
