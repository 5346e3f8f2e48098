//! Acceptance run: one PASS/FAIL line per criterion, with elapsed time.
//! A criterion passes only if its property holds and it finishes within
//! its time budget.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use window_rl_core::belief_grid::optimal_value_reference;
use window_rl_core::bounds::*;
use window_rl_core::ergodicity::{build_joint_chain, check_minorization, invariant_measure, mixing_rate};
use window_rl_core::features::{Domain, FeatureSet};
use window_rl_core::fixtures;
use window_rl_core::learners::{q_learn, run_seeds, td_evaluate, LearnerOptions, LearningRun, StepSchedule};
use window_rl_core::linear_fa::*;
use window_rl_core::model::tv_distance;
use window_rl_core::simulate::Simulator;
use window_rl_core::stability::{filter_stability_default, StabilityOptions};
use window_rl_core::window_mdp::{
    build_window_mdp, exact_optimal_q, exact_policy_value, greedy_residual, policy_residual, warmup_distribution,
};
use window_rl_core::{Belief, Exec, FinitePomdp, WindowPolicy, WindowSpace};

type Outcome = Result<(bool, String), String>;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn f1_space() -> WindowSpace {
    WindowSpace::new(2, 2, 1)
}

fn mu_init() -> Belief {
    Belief::new(vec![0.9, 0.1]).unwrap()
}

fn exploration(space: WindowSpace, base: &[usize]) -> WindowPolicy {
    WindowPolicy::latest_obs(space, base).unwrap().epsilon_uniform(0.3).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn bellman_residuals(model: &FinitePomdp, memory: usize) -> Result<(f64, f64), String> {
    let space = WindowSpace::new(model.n_obs, model.n_actions, memory);
    let mdp = build_window_mdp(model, &Belief::uniform(model.n_states), memory).map_err(e)?;
    let mut worst_policy = 0.0_f64;
    let n_det = (model.n_actions as u32).pow(space.len().min(8) as u32) as usize;
    let mut policies = vec![WindowPolicy::uniform(space)];
    for code in [0, 1, n_det / 3, n_det - 1] {
        let acts: Vec<usize> = (0..space.len()).map(|h| (code >> (h % 8)) & 1).collect();
        policies.push(WindowPolicy::deterministic(space, &acts).map_err(e)?);
    }
    for g in &policies {
        let j = exact_policy_value(&mdp, g).map_err(e)?;
        worst_policy = worst_policy.max(policy_residual(&mdp, g, &j));
    }
    let q = exact_optimal_q(&mdp).map_err(e)?;
    Ok((worst_policy, greedy_residual(&mdp, &q.q)))
}

fn criterion_1() -> Outcome {
    let (p1, q1) = bellman_residuals(&fixtures::f1(), 1)?;
    let (p2, q2) = bellman_residuals(&fixtures::f2(), 1)?;
    let worst = p1.max(q1).max(p2).max(q2);
    Ok((worst <= 1e-10, format!("max residual F1 policy {p1:.1e} optimal {q1:.1e}, F2 policy {p2:.1e} optimal {q2:.1e}")))
}

fn criterion_2() -> Outcome {
    let m = fixtures::f1();
    let space = f1_space();
    let g = WindowPolicy::uniform(space);
    let chain = build_joint_chain(&m, &g).map_err(e)?;
    let measure = invariant_measure(&chain).map_err(e)?;
    let mdp = build_window_mdp(&m, &Belief::new(measure.state.clone()).map_err(e)?, 1).map_err(e)?;
    let w = &measure.window;
    let sets = [
        fixtures::generic_window_features(space),
        FeatureSet::by_latest_obs(space, Domain::Window),
        FeatureSet::indicator_full(space, Domain::Window),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_ratio = 0.0_f64;
    let mut ok = true;
    for fs in &sets {
        for _ in 0..100 {
            let a = random_vec(&mut rng, 8, 10.0);
            let b = random_vec(&mut rng, 8, 10.0);
            let pa = project_function(&apply_t_gamma(&a, &mdp, &g), fs, w).map_err(e)?;
            let pb = project_function(&apply_t_gamma(&b, &mdp, &g), fs, w).map_err(e)?;
            let lhs = weighted_l2(&diff(&pa, &pb), w);
            let base = weighted_l2(&diff(&a, &b), w);
            ok &= lhs <= m.discount * base + 1e-10;
            worst_ratio = worst_ratio.max(lhs / base);
        }
    }
    Ok((ok, format!("300 pairs over 3 feature sets, max ratio {worst_ratio:.4} vs beta {}", m.discount)))
}

fn criterion_3() -> Outcome {
    let m = fixtures::f1();
    let g = WindowPolicy::uniform(f1_space());
    let f = fixtures::generic_window_features(f1_space());
    let chain = build_joint_chain(&m, &g).map_err(e)?;
    let measure = invariant_measure(&chain).map_err(e)?;
    let (a, _) = td_system(&f, &chain, &measure).map_err(e)?;
    let star = td_fixed_point_direct(&f, &chain, &measure).map_err(e)?.theta;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut largest = f64::NEG_INFINITY;
    for _ in 0..100 {
        let theta = random_vec(&mut rng, 3, 10.0);
        let v = nalgebra::DVector::from_vec(diff(&theta, &star));
        largest = largest.max(v.dot(&(&a * &v)));
    }
    Ok((largest < 0.0, format!("max quadratic form over 100 draws {largest:.3e}")))
}

fn traces(runs: &[LearningRun]) -> Vec<Vec<u8>> {
    runs.iter()
        .map(|r| {
            let mut buf = Vec::new();
            r.write_trace(&mut buf).unwrap();
            buf
        })
        .collect()
}

fn td_runs() -> Result<(Vec<LearningRun>, Vec<f64>), String> {
    let m = fixtures::f1();
    let g = WindowPolicy::uniform(f1_space());
    let f = fixtures::generic_window_features(f1_space());
    let chain = build_joint_chain(&m, &g).map_err(e)?;
    let measure = invariant_measure(&chain).map_err(e)?;
    let star = td_fixed_point_direct(&f, &chain, &measure).map_err(e)?.theta;
    let prior = Belief::new(measure.state.clone()).map_err(e)?;
    let opts = LearnerOptions { oracle: Some(star.clone()), ..Default::default() };
    let runs = run_seeds(Exec::default(), &SEEDS, |seed| {
        td_evaluate(&m, &g, &f, &StepSchedule::default(), 2_000_000, seed, &g, &prior, &opts)
    });
    Ok((runs.into_iter().collect::<Result<_, _>>().map_err(e)?, star))
}

fn criterion_4(store: &mut Vec<Vec<u8>>) -> Outcome {
    let (runs, star) = td_runs()?;
    let tol = 0.05 * l2(&star).max(1.0);
    let dists: Vec<f64> = runs.iter().map(|r| r.final_distance.unwrap()).collect();
    let worst = dists.iter().copied().fold(0.0, f64::max);
    *store = traces(&runs);
    Ok((worst <= tol, format!("5 seeds x 2e6 steps, max |theta - theta*| {worst:.4e} <= {tol:.4e}")))
}

fn q_runs() -> Result<(Vec<LearningRun>, Vec<f64>, f64), String> {
    let m = fixtures::f1();
    let ex = exploration(f1_space(), &[0, 1]);
    let chain = build_joint_chain(&m, &ex).map_err(e)?;
    let measure = invariant_measure(&chain).map_err(e)?;
    let prior = Belief::new(measure.state.clone()).map_err(e)?;
    let mdp = build_window_mdp(&m, &prior, 1).map_err(e)?;
    let q = exact_optimal_q(&mdp).map_err(e)?.q;
    let f = FeatureSet::indicator_full(f1_space(), Domain::WindowAction);
    let runs = run_seeds(Exec::default(), &SEEDS, |seed| {
        q_learn(&m, &ex, &f, &StepSchedule::default(), 5_000_000, seed, &ex, &prior, &LearnerOptions::default(), None)
            .map(|(r, _)| r)
    });
    let runs: Vec<LearningRun> = runs.into_iter().collect::<Result<_, _>>().map_err(e)?;
    let worst = runs
        .iter()
        .map(|r| sup_norm(&diff(&f.evaluate(&r.theta_final), &q)))
        .fold(0.0, f64::max);
    Ok((runs, q, worst))
}

fn criterion_5(store: &mut Vec<Vec<u8>>) -> Outcome {
    let m = fixtures::f1();
    let (runs, _, worst) = q_runs()?;
    let tol = 0.03 * m.cost_sup() / (1.0 - m.discount);
    *store = traces(&runs);
    Ok((worst <= tol, format!("5 seeds x 5e6 steps, max sup error {worst:.4e} <= {tol:.4e}")))
}

fn stability_opts() -> StabilityOptions {
    StabilityOptions { t_max: 50, cap: 1 << 20, samples: 20_000, seed: 6, exec: Exec::default(), ..StabilityOptions::default() }
}

fn discretization_report(
    model: &FinitePomdp,
    base: &[usize],
    discretization: ObservationDiscretization,
) -> Result<BoundReport, String> {
    let space = WindowSpace::new(model.n_obs, model.n_actions, 1);
    let ex = exploration(space, base);
    let f = FeatureSet::indicator_full(space, Domain::WindowAction);
    let learned = fixed_point_greedy_policy(model, &ex, &f).map_err(e)?;
    let chain = build_joint_chain(model, &ex).map_err(e)?;
    let pi = Belief::new(invariant_measure(&chain).map_err(e)?.state).map_err(e)?;
    let st = filter_stability_default(model, &pi, &mu_init(), &[learned.clone(), ex.clone()], &ex, &stability_opts())
        .map_err(e)?;
    let warm = warmup_distribution(model, &mu_init(), &ex, 1).map_err(e)?;
    let reference = optimal_value_reference(model, &warm, 1000).map_err(e)?;
    q_discretization_bound(model, &learned, &mu_init(), &ex, &st, &reference, discretization).map_err(e)
}

fn criterion_6() -> Outcome {
    let m = fixtures::f1();
    let g = WindowPolicy::uniform(f1_space());
    let ctx = EvaluationContext::new(&m, &g, &fixtures::generic_window_features(f1_space())).map_err(e)?;
    let st = filter_stability_default(&m, &ctx.prior, &mu_init(), std::slice::from_ref(&g), &g, &stability_opts()).map_err(e)?;
    let mut reports = vec![
        policy_approx_bound(&m, &g, &ctx.prior, &mu_init(), &g, &st).map_err(e)?,
        l2_projection_bound(&ctx).map_err(e)?,
        uniform_bound(&ctx).map_err(e)?,
        end_to_end_policy_bound(&ctx, &mu_init(), &g, &st).map_err(e)?,
        discretization_report(&m, &[0, 1], ObservationDiscretization::Native)?,
    ];
    let (demo, quantizer) = fixtures::gaussian_demo();
    let compiled = demo.compile(&quantizer).map_err(e)?;
    let quant = ObservationDiscretization::Quantized { alpha_y: Some(demo.lipschitz_constant()), l_y: quantizer.max_diameter() };
    let mut gaussian = discretization_report(&compiled, &[0, 0, 0, 0, 1, 1, 1, 1], quant)?;
    gaussian.name = "q_discretization (gaussian demo)".into();
    reports.push(gaussian);
    let ok = reports.iter().all(|r| r.satisfied);
    let detail = reports
        .iter()
        .map(|r| format!("{} {:.3e}<={:.3e}{}", r.name, r.lhs, r.rhs, if r.satisfied { "" } else { " VIOLATED" }))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((ok, detail))
}

fn criterion_7() -> Outcome {
    let m = fixtures::f1();
    let g = WindowPolicy::uniform(f1_space());
    let minor = check_minorization(&m, &g);
    let chain = build_joint_chain(&m, &g).map_err(e)?;
    let measure = invariant_measure(&chain).map_err(e)?;
    let nx = m.n_states;
    let mut counts = vec![0u64; chain.len()];
    let mut sim = Simulator::new(&m, &g, &mu_init(), &g, 7).map_err(e)?;
    let steps = 1_000_000;
    for _ in 0..steps {
        let tr = sim.step();
        counts[tr.next_h * nx + tr.next_x] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
    let tv = tv_distance(&freq, &measure.joint);
    let mix = mixing_rate(&chain, 30, Exec::default()).map_err(e)?;
    let dominated = mix.tv_decay.iter().enumerate().all(|(i, &d)| d <= mix.envelope(i + 1) + 1e-12);
    let ok = minor.satisfied && measure.residual <= 1e-10 && tv <= 0.02 && dominated;
    Ok((
        ok,
        format!(
            "minorization mass {:.2}, residual {:.1e}, empirical TV {tv:.4}, two-step mass {:.4}, envelope dominates: {dominated}",
            minor.state_mass, measure.residual, mix.block_minorization_mass
        ),
    ))
}

fn criterion_8() -> Outcome {
    let m = fixtures::f1();
    let space = f1_space();
    let g = WindowPolicy::uniform(space);
    let chain = build_joint_chain(&m, &g).map_err(e)?;
    let measure = invariant_measure(&chain).map_err(e)?;
    let w = &measure.window_action;
    let partitions = [
        FeatureSet::indicator_full(space, Domain::WindowAction),
        FeatureSet::by_latest_obs(space, Domain::WindowAction),
        FeatureSet::indicator(space, Domain::WindowAction, (0..16).map(|p| (p / 2) % 3).collect()).map_err(e)?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = true;
    for fs in &partitions {
        for _ in 0..100 {
            let f = random_vec(&mut rng, 16, 10.0);
            ok &= sup_norm(&project_function(&f, fs, w).map_err(e)?) <= sup_norm(&f);
        }
    }
    Ok((ok, "300 functions over 3 partitions, exact comparison".into()))
}

fn criterion_9() -> Outcome {
    let m = fixtures::f1();
    let space = f1_space();
    let g = WindowPolicy::uniform(space);
    let measure = invariant_measure(&build_joint_chain(&m, &g).map_err(e)?).map_err(e)?;
    let f = fixtures::generic_pair_features(space);
    let small = check_q_stability(&f, &measure, 0.05, 256, Exec::default()).map_err(e)?;
    let certified = matches!(small.verdict, QStabilityVerdict::Satisfied { policies: 256, .. });

    let hot = m.with_discount(0.99).map_err(e)?;
    let ex = WindowPolicy::from_rows(space, vec![vec![0.99, 0.01]; 8]).map_err(e)?;
    let measure = invariant_measure(&build_joint_chain(&hot, &ex).map_err(e)?).map_err(e)?;
    let ind = FeatureSet::indicator_full(space, Domain::WindowAction);
    let rep = check_q_stability(&ind, &measure, 0.99, 256, Exec::default()).map_err(e)?;
    let refuted = match &rep.verdict {
        QStabilityVerdict::Refuted { theta, greedy, margin } => {
            let sigma = gram(&ind, &measure.window_action);
            let st = sigma_policy(&ind, &measure.window, greedy);
            let recomputed = min_eigenvalue(&(sigma - st * (0.99 * 0.99)));
            greedy_actions(&ind, theta) == *greedy && recomputed <= Q_STABILITY_MARGIN && (recomputed - margin).abs() < 1e-12
        }
        _ => false,
    };
    Ok((certified && refuted, format!("beta=0.05 certified by enumeration: {certified}; counterexample refuted with verified witness: {refuted}")))
}

fn criterion_10(td: &[Vec<u8>], q: &[Vec<u8>]) -> Outcome {
    let (td_again, _) = td_runs()?;
    let (q_again, _, _) = q_runs()?;
    let same_td = !td.is_empty() && traces(&td_again) == td;
    let same_q = !q.is_empty() && traces(&q_again) == q;
    Ok((same_td && same_q, format!("TD traces identical: {same_td}; Q traces identical: {same_q}")))
}

fn run(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let (pass, detail) = match outcome {
        Ok((ok, detail)) => (ok && in_time, detail),
        Err(err) => (false, format!("error: {err}")),
    };
    let timing = format!("{:.2}s of {}s budget{}", elapsed.as_secs_f64(), budget.as_secs(), if in_time { "" } else { ", over budget" });
    println!("{} criterion {n}: {name} | {detail} | {timing}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut td_traces = Vec::new();
    let mut q_traces = Vec::new();
    let results = [
        run(1, "Bellman residuals of the exact oracles", secs(1), criterion_1),
        run(2, "L2 contraction of the projected policy operator", secs(5), criterion_2),
        run(3, "negative definiteness of A", secs(1), criterion_3),
        run(4, "TD(0) converges to the linear-solve fixed point", secs(120), || criterion_4(&mut td_traces)),
        run(5, "indicator-basis Q-learning reaches the optimal Q", secs(300), || criterion_5(&mut q_traces)),
        run(6, "bound reports satisfied", secs(600), criterion_6),
        run(7, "ergodicity machinery", secs(60), criterion_7),
        run(8, "sup-norm non-expansiveness of indicator projection", secs(1), criterion_8),
        run(9, "greedy closeness checker soundness", secs(10), criterion_9),
        run(10, "determinism of learning traces", secs(420), || criterion_10(&td_traces, &q_traces)),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
