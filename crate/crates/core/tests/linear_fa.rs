#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use window_rl_core::ergodicity::{build_joint_chain, invariant_measure, InvariantMeasure, JointChain};
use window_rl_core::features::{Domain, FeatureSet};
use window_rl_core::fixtures;
use window_rl_core::linear_fa::*;
use window_rl_core::simulate::Simulator;
use window_rl_core::window_mdp::{build_window_mdp, exact_optimal_q, exact_policy_value, ApproxWindowMdp};
use window_rl_core::{Belief, Error, Exec, FinitePomdp, WindowPolicy, WindowSpace};

struct Setup {
    mdp: ApproxWindowMdp,
    chain: JointChain,
    measure: InvariantMeasure,
}

/// Approximate MDP built with the stationary state marginal as design prior,
/// so the window marginal of the invariant measure is invariant for its kernel.
fn setup(model: &FinitePomdp, gamma: &WindowPolicy) -> Setup {
    let chain = build_joint_chain(model, gamma).unwrap();
    let measure = invariant_measure(&chain).unwrap();
    let pi = Belief::new(measure.state.clone()).unwrap();
    let mdp = build_window_mdp(model, &pi, gamma.space().memory).unwrap();
    Setup { mdp, chain, measure }
}

fn f1_space() -> WindowSpace {
    WindowSpace::new(2, 2, 1)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    sup_norm(&sub(a, b))
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn eliminate(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn uniform_f1() -> (FinitePomdp, WindowPolicy, Setup) {
    let m = fixtures::f1();
    let g = WindowPolicy::uniform(f1_space());
    let s = setup(&m, &g);
    (m, g, s)
}

#[test]
fn projection_recovers_span_members() {
    let (_, _, s) = uniform_f1();
    let f = fixtures::generic_window_features(f1_space());
    let theta = vec![0.7, -1.3, 2.1];
    let p = project(&f.evaluate(&theta), &f, &s.measure.window).unwrap();
    assert!(!p.degenerate);
    for (a, b) in p.theta.iter().zip(&theta) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn indicator_projection_is_conditional_average() {
    let (_, _, s) = uniform_f1();
    let space = f1_space();
    let f = FeatureSet::by_latest_obs(space, Domain::Window);
    let target: Vec<f64> = (0..8).map(|h| h as f64 * 0.3 - 1.0).collect();
    let p = project(&target, &f, &s.measure.window).unwrap();
    for cell in 0..2 {
        let (mut num, mut den) = (0.0, 0.0);
        for h in (0..8).filter(|&h| space.latest_obs(h) == cell) {
            num += s.measure.window[h] * target[h];
            den += s.measure.window[h];
        }
        assert!((p.theta[cell] - num / den).abs() < 1e-12);
    }
}

#[test]
fn null_weight_cells_get_zero_and_are_flagged() {
    let space = f1_space();
    let f = FeatureSet::by_latest_obs(space, Domain::Window);
    let weights: Vec<f64> = (0..8).map(|h| if space.latest_obs(h) == 0 { 0.25 } else { 0.0 }).collect();
    let p = project(&[5.0; 8], &f, &weights).unwrap();
    assert_eq!(p.theta, vec![5.0, 0.0]);
    assert_eq!(p.unreachable_cells, vec![1]);
    assert!(p.degenerate);
}

#[test]
fn projection_of_policy_value_matches_hand_elimination() {
    let (_, g, s) = uniform_f1();
    let f = fixtures::generic_window_features(f1_space());
    let j = exact_policy_value(&s.mdp, &g).unwrap();
    let w = &s.measure.window;
    let mut a = vec![vec![0.0; 3]; 3];
    let mut b = vec![0.0; 3];
    for h in 0..8 {
        let phi = f.phi(h);
        for i in 0..3 {
            b[i] += w[h] * phi[i] * j[h];
            for k in 0..3 {
                a[i][k] += w[h] * phi[i] * phi[k];
            }
        }
    }
    let oracle = eliminate(a.clone(), b.clone());
    let p = project(&j, &f, w).unwrap();
    for (x, y) in p.theta.iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-10);
    }
    // Normal equations.
    for i in 0..3 {
        let lhs: f64 = (0..3).map(|k| a[i][k] * p.theta[k]).sum();
        assert!((lhs - b[i]).abs() < 1e-10);
    }
}

#[test]
fn singular_gram_returns_minimum_norm_solution() {
    let space = f1_space();
    let rows = (0..8).map(|h| vec![1.0, 1.0, (h % 2) as f64]).collect();
    let f = FeatureSet::from_rows(space, Domain::Window, rows).unwrap();
    let target: Vec<f64> = (0..8).map(|h| 2.0 + 3.0 * (h % 2) as f64).collect();
    let p = project(&target, &f, &[0.125; 8]).unwrap();
    assert!(p.degenerate);
    assert!((p.theta[0] - 1.0).abs() < 1e-9 && (p.theta[1] - 1.0).abs() < 1e-9 && (p.theta[2] - 3.0).abs() < 1e-9);
}

#[test]
fn projection_is_idempotent_non_expansive_and_orthogonal() {
    let (_, _, s) = uniform_f1();
    let w = &s.measure.window;
    let f = fixtures::generic_window_features(f1_space());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let target = random_vec(&mut rng, 8, 5.0);
        let pf = project_function(&target, &f, w).unwrap();
        let ppf = project_function(&pf, &f, w).unwrap();
        assert!(sup_diff(&pf, &ppf) < 1e-10);
        assert!(weighted_l2(&pf, w) <= weighted_l2(&target, w) + 1e-12);
        let resid = sub(&target, &pf);
        for i in 0..3 {
            let inner: f64 = (0..8).map(|h| w[h] * f.phi(h)[i] * resid[h]).sum();
            assert!(inner.abs() < 1e-10);
        }
    }
}

#[test]
fn policy_operator_examples() {
    let (_, g, s) = uniform_f1();
    let zero = apply_t_gamma(&[0.0; 8], &s.mdp, &g);
    for h in 0..8 {
        let avg: f64 = (0..2).map(|u| g.prob(h, u) * s.mdp.cost_hat(h, u)).sum();
        assert!((zero[h] - avg).abs() < 1e-14);
    }
    let j = exact_policy_value(&s.mdp, &g).unwrap();
    assert!(sup_diff(&apply_t_gamma(&j, &s.mdp, &g), &j) < 1e-10);
}

#[test]
fn policy_operator_matches_matrix_form_from_the_model() {
    let m = fixtures::f1();
    let space = f1_space();
    let g = WindowPolicy::from_rows(space, (0..8).map(|h| vec![0.2 + 0.05 * h as f64, 0.8 - 0.05 * h as f64]).collect()).unwrap();
    let s = setup(&m, &g);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let f = random_vec(&mut rng, 8, 3.0);
        let got = apply_t_gamma(&f, &s.mdp, &g);
        for h in 0..8 {
            let post = s.mdp.posterior(h);
            let mut expected = 0.0;
            for u in 0..2 {
                let mut row = [0.0; 8];
                let mut cost = 0.0;
                for x in 0..2 {
                    cost += post[x] * m.cost[x][u];
                    for x2 in 0..2 {
                        for y in 0..2 {
                            row[space.shift(h, u, y)] += post[x] * m.transition[u][x][x2] * m.channel[x2][y];
                        }
                    }
                }
                let next: f64 = row.iter().zip(&f).map(|(p, v)| p * v).sum();
                expected += g.prob(h, u) * (cost + m.discount * next);
            }
            assert!((got[h] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn greedy_operator_examples() {
    let (_, _, s) = uniform_f1();
    let zero = apply_t_greedy(&[0.0; 16], &s.mdp);
    for p in 0..16 {
        assert!((zero[p] - s.mdp.cost_hat(p / 2, p % 2)).abs() < 1e-14);
    }
    let opt = exact_optimal_q(&s.mdp).unwrap();
    assert!(sup_diff(&apply_t_greedy(&opt.q, &s.mdp), &opt.q) < 1e-10);
}

fn single_action_model() -> FinitePomdp {
    FinitePomdp::new(
        vec![vec![vec![0.7, 0.3], vec![0.4, 0.6]]],
        vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        vec![vec![0.0], vec![1.0]],
        0.9,
    )
    .unwrap()
}

#[test]
fn single_action_greedy_operator_is_policy_operator() {
    let m = single_action_model();
    let space = WindowSpace::new(2, 1, 1);
    let g = WindowPolicy::uniform(space);
    let s = setup(&m, &g);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random_vec(&mut rng, 4, 2.0);
    assert!(sup_diff(&apply_t_greedy(&f, &s.mdp), &apply_t_gamma(&f, &s.mdp, &g)) < 1e-14);
}

#[test]
fn gram_examples() {
    let (_, _, s) = uniform_f1();
    let space = f1_space();
    let ind = FeatureSet::by_latest_obs(space, Domain::WindowAction);
    let gm = gram_matrices(&ind, &s.measure, &[]).unwrap();
    for i in 0..4 {
        let mass: f64 = (0..16).filter(|&p| ind.cells().unwrap()[p] == i).map(|p| s.measure.window_action[p]).sum();
        assert!((gm.sigma[i][i] - mass).abs() < 1e-12);
        for j in (0..4).filter(|&j| j != i) {
            assert_eq!(gm.sigma[i][j], 0.0);
        }
    }
    let one = FeatureSet::indicator(space, Domain::WindowAction, vec![0; 16]).unwrap();
    let gm = gram_matrices(&one, &s.measure, &[]).unwrap();
    assert!((gm.sigma[0][0] - 1.0).abs() < 1e-12 && (gm.sigma_min - 1.0).abs() < 1e-12);
}

#[test]
fn gram_matrices_are_symmetric_psd_and_track_greedy_policies() {
    let (_, _, s) = uniform_f1();
    let f = fixtures::generic_pair_features(f1_space());
    let thetas = vec![vec![0.0, 1.0, 0.0], vec![0.0, -1.0, 0.0]];
    let gm = gram_matrices(&f, &s.measure, &thetas).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((gm.sigma[i][j] - gm.sigma[j][i]).abs() < 1e-12);
        }
    }
    assert!(gm.sigma_min > -1e-10);
    assert_eq!(gm.per_theta[0].greedy, vec![0; 8]);
    assert_eq!(gm.per_theta[1].greedy, vec![1; 8]);
    // Greedy action 1 everywhere: Σ_θ has Φ(h,1) = [1, 1, 0.5].
    let expected = [1.0, 1.0, 0.5];
    for i in 0..3 {
        for j in 0..3 {
            assert!((gm.per_theta[1].sigma[i][j] - expected[i] * expected[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn gram_matches_stationary_simulation() {
    let (m, g, s) = uniform_f1();
    let f = fixtures::generic_pair_features(f1_space());
    let gm = gram_matrices(&f, &s.measure, &[]).unwrap();
    let mut sim = Simulator::new(&m, &g, &Belief::new(s.measure.state.clone()).unwrap(), &g, 21).unwrap();
    for _ in 0..1_000 {
        sim.step();
    }
    // Batch means over 100 batches of 10⁴ steps.
    let batches = 100;
    let mut means = vec![[[0.0; 3]; 3]; batches];
    for b in means.iter_mut() {
        for _ in 0..10_000 {
            let tr = sim.step();
            let phi = f.phi_pair(tr.h, tr.u);
            for i in 0..3 {
                for j in 0..3 {
                    b[i][j] += phi[i] * phi[j] / 1e4;
                }
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let avg = means.iter().map(|b| b[i][j]).sum::<f64>() / batches as f64;
            let var = means.iter().map(|b| (b[i][j] - avg).powi(2)).sum::<f64>() / (batches - 1) as f64;
            let se = (var / batches as f64).sqrt();
            assert!((avg - gm.sigma[i][j]).abs() <= 3.0 * se + 1e-12, "entry ({i},{j}): {avg} vs {}", gm.sigma[i][j]);
        }
    }
}

#[test]
fn l2_contraction_for_three_feature_sets() {
    let (_, g, s) = uniform_f1();
    let space = f1_space();
    let w = &s.measure.window;
    let beta = s.mdp.discount;
    let sets = [
        fixtures::generic_window_features(space),
        FeatureSet::by_latest_obs(space, Domain::Window),
        FeatureSet::indicator_full(space, Domain::Window),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for fs in &sets {
        for _ in 0..100 {
            let a = random_vec(&mut rng, 8, 10.0);
            let b = random_vec(&mut rng, 8, 10.0);
            let pa = project_function(&apply_t_gamma(&a, &s.mdp, &g), fs, w).unwrap();
            let pb = project_function(&apply_t_gamma(&b, &s.mdp, &g), fs, w).unwrap();
            assert!(weighted_l2(&sub(&pa, &pb), w) <= beta * weighted_l2(&sub(&a, &b), w) + 1e-10);
        }
    }
}

#[test]
fn indicator_projection_is_sup_norm_non_expansive() {
    let (_, _, s) = uniform_f1();
    let space = f1_space();
    let w = &s.measure.window_action;
    let partitions = [
        FeatureSet::indicator_full(space, Domain::WindowAction),
        FeatureSet::by_latest_obs(space, Domain::WindowAction),
        FeatureSet::indicator(space, Domain::WindowAction, (0..16).map(|p| (p / 2) % 3).collect()).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for fs in &partitions {
        for _ in 0..100 {
            let f = random_vec(&mut rng, 16, 10.0);
            assert!(sup_norm(&project_function(&f, fs, w).unwrap()) <= sup_norm(&f));
            let g = random_vec(&mut rng, 16, 10.0);
            let pa = project_function(&apply_t_greedy(&f, &s.mdp), fs, w).unwrap();
            let pb = project_function(&apply_t_greedy(&g, &s.mdp), fs, w).unwrap();
            assert!(sup_diff(&pa, &pb) <= s.mdp.discount * sup_diff(&f, &g) + 1e-12);
        }
    }
}

#[test]
fn td_fixed_point_direct_examples() {
    let (m, g, s) = uniform_f1();
    let space = f1_space();
    let generic = fixtures::generic_window_features(space);
    let fp = td_fixed_point_direct(&generic, &s.chain, &s.measure).unwrap();
    assert!(fp.residual <= 1e-8);
    let iterated = projected_policy_iteration(&generic, &s.mdp, &g, &s.measure.window, 200).unwrap();
    for (a, b) in fp.theta.iter().zip(&iterated) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    let full = FeatureSet::indicator_full(space, Domain::Window);
    let fp = td_fixed_point_direct(&full, &s.chain, &s.measure).unwrap();
    let j = exact_policy_value(&s.mdp, &g).unwrap();
    assert!(sup_diff(&full.evaluate(&fp.theta), &j) < 1e-8);

    let myopic = m.with_discount(1e-300).unwrap();
    let s0 = setup(&myopic, &g);
    let fp = td_fixed_point_direct(&generic, &s0.chain, &s0.measure).unwrap();
    let avg = apply_t_gamma(&[0.0; 8], &s0.mdp, &g);
    let oracle = project(&avg, &generic, &s0.measure.window).unwrap().theta;
    for (a, b) in fp.theta.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn td_matrix_is_negative_definite_around_the_fixed_point() {
    let (_, _, s) = uniform_f1();
    let f = fixtures::generic_window_features(f1_space());
    let (a, _) = td_system(&f, &s.chain, &s.measure).unwrap();
    let theta_star = td_fixed_point_direct(&f, &s.chain, &s.measure).unwrap().theta;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let theta = random_vec(&mut rng, 3, 10.0);
        let v = nalgebra::DVector::from_vec(sub(&theta, &theta_star));
        assert!(v.dot(&(&a * &v)) < 0.0);
    }
}

#[test]
fn td_fixed_point_rejects_dependent_features() {
    let (_, _, s) = uniform_f1();
    let rows = (0..8).map(|_| vec![1.0, 1.0]).collect();
    let f = FeatureSet::from_rows(f1_space(), Domain::Window, rows).unwrap();
    assert!(matches!(td_fixed_point_direct(&f, &s.chain, &s.measure), Err(Error::SingularA { .. })));
}

#[test]
fn q_fixed_point_full_indicator_is_optimal_q() {
    let (_, _, s) = uniform_f1();
    let f = FeatureSet::indicator_full(f1_space(), Domain::WindowAction);
    let fp = q_fixed_point_direct(&f, &s.mdp, &s.measure, None).unwrap();
    assert!(fp.residual <= 1e-8);
    let opt = exact_optimal_q(&s.mdp).unwrap();
    assert!(sup_diff(&f.evaluate(&fp.theta), &opt.q) < 1e-9);
}

#[test]
fn q_fixed_point_single_action_is_td_fixed_point() {
    let m = single_action_model();
    let space = WindowSpace::new(2, 1, 1);
    let g = WindowPolicy::uniform(space);
    let s = setup(&m, &g);
    let cells = vec![0, 1, 0, 1];
    let fq = FeatureSet::indicator(space, Domain::WindowAction, cells.clone()).unwrap();
    let fw = FeatureSet::indicator(space, Domain::Window, cells).unwrap();
    let q = q_fixed_point_direct(&fq, &s.mdp, &s.measure, None).unwrap();
    let td = td_fixed_point_direct(&fw, &s.chain, &s.measure).unwrap();
    for (a, b) in q.theta.iter().zip(&td.theta) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn coarse_partition_matches_aggregated_mdp() {
    let m = fixtures::f1();
    let space = f1_space();
    let exploration = WindowPolicy::latest_obs(space, &[0, 1]).unwrap().epsilon_uniform(0.3).unwrap();
    let s = setup(&m, &exploration);
    let f = FeatureSet::by_latest_obs(space, Domain::WindowAction);
    let fp = q_fixed_point_direct(&f, &s.mdp, &s.measure, None).unwrap();
    assert!(fp.residual <= 1e-8);

    // Aggregated MDP on (latest observation, action): cells are y·2 + u.
    let w = &s.measure.window_action;
    let beta = m.discount;
    let mut cost = [[0.0; 2]; 2];
    let mut kern = [[[0.0; 2]; 2]; 2];
    for y in 0..2 {
        for u in 0..2 {
            let mass: f64 = (0..8).filter(|&h| space.latest_obs(h) == y).map(|h| w[h * 2 + u]).sum();
            for h in (0..8).filter(|&h| space.latest_obs(h) == y) {
                let wt = w[h * 2 + u] / mass;
                cost[y][u] += wt * s.mdp.cost_hat(h, u);
                for &(h2, p) in s.mdp.kernel_row(h, u) {
                    kern[y][u][space.latest_obs(h2)] += wt * p;
                }
            }
        }
    }
    // Optimal value as the componentwise minimum over the four stationary policies.
    let mut v = [f64::INFINITY; 2];
    for code in 0..4 {
        let act = [code % 2, code / 2];
        let a = (0..2)
            .map(|y| (0..2).map(|z| (y == z) as u8 as f64 - beta * kern[y][act[y]][z]).collect())
            .collect();
        let b = (0..2).map(|y| cost[y][act[y]]).collect();
        let val = eliminate(a, b);
        for y in 0..2 {
            v[y] = v[y].min(val[y]);
        }
    }
    for y in 0..2 {
        for u in 0..2 {
            let q = cost[y][u] + beta * (0..2).map(|z| kern[y][u][z] * v[z]).sum::<f64>();
            assert!((fp.theta[y * 2 + u] - q).abs() < 1e-10, "cell ({y},{u})");
        }
    }
}

#[test]
fn q_fixed_point_needs_a_certificate_for_generic_features() {
    let (_, _, s) = uniform_f1();
    let f = fixtures::generic_pair_features(f1_space());
    assert!(matches!(q_fixed_point_direct(&f, &s.mdp, &s.measure, None), Err(Error::NoConvergenceCertificate)));
    let cert = check_q_stability(&f, &s.measure, 0.05, 1 << 10, Exec::Sequential).unwrap();
    assert!(cert.is_satisfied());
    let fp = q_fixed_point_direct(&f, &s.mdp, &s.measure, Some(&cert)).unwrap();
    assert!(fp.residual.is_finite());
}

#[test]
fn q_stability_small_discount_is_certified_by_enumeration() {
    let (_, _, s) = uniform_f1();
    let f = fixtures::generic_pair_features(f1_space());
    let rep = check_q_stability(&f, &s.measure, 0.05, 256, Exec::default()).unwrap();
    match rep.verdict {
        QStabilityVerdict::Satisfied { policies, min_margin, .. } => {
            assert_eq!(policies, 256);
            assert!(min_margin > Q_STABILITY_MARGIN);
        }
        other => panic!("expected certification, got {other:?}"),
    }
}

#[test]
fn q_stability_single_action_holds_for_any_discount_below_one() {
    let m = single_action_model();
    let space = WindowSpace::new(2, 1, 1);
    let g = WindowPolicy::uniform(space);
    let s = setup(&m, &g);
    let rows = (0..4).map(|h| vec![1.0, if h % 2 == 0 { 0.5 } else { -0.5 }]).collect();
    let f = FeatureSet::from_rows(space, Domain::WindowAction, rows).unwrap();
    assert!(check_q_stability(&f, &s.measure, 0.99, 16, Exec::Sequential).unwrap().is_satisfied());
}

#[test]
fn q_stability_uniform_exploration_enumerates_all_policies() {
    let (_, _, s) = uniform_f1();
    let f = fixtures::generic_pair_features(f1_space());
    let rep = check_q_stability(&f, &s.measure, 0.8, 256, Exec::default()).unwrap();
    match rep.verdict {
        QStabilityVerdict::Satisfied { policies, .. } => assert_eq!(policies, 256),
        QStabilityVerdict::Refuted { theta, greedy, margin } => {
            assert_eq!(greedy_actions(&f, &theta), greedy);
            assert!(margin <= Q_STABILITY_MARGIN);
        }
        other => panic!("enumeration expected, got {other:?}"),
    }
}

#[test]
fn q_stability_counterexample_is_refuted_with_a_witness() {
    let m = fixtures::f1().with_discount(0.99).unwrap();
    let space = f1_space();
    let exploration = WindowPolicy::from_rows(space, vec![vec![0.99, 0.01]; 8]).unwrap();
    let s = setup(&m, &exploration);
    let f = FeatureSet::indicator_full(space, Domain::WindowAction);
    let rep = check_q_stability(&f, &s.measure, 0.99, 256, Exec::default()).unwrap();
    match rep.verdict {
        QStabilityVerdict::Refuted { theta, greedy, margin } => {
            assert_eq!(greedy_actions(&f, &theta), greedy);
            assert!(greedy.contains(&1));
            let sigma = gram(&f, &s.measure.window_action);
            let st = sigma_policy(&f, &s.measure.window, &greedy);
            assert!((min_eigenvalue(&(sigma - st * 0.99 * 0.99)) - margin).abs() < 1e-12);
            assert!(margin < 0.0);
        }
        other => panic!("expected a refutation, got {other:?}"),
    }
}

#[test]
fn q_stability_large_spaces_are_only_sampled() {
    let m = fixtures::f2();
    let space = WindowSpace::new(3, 2, 1);
    let g = WindowPolicy::uniform(space);
    let s = setup(&m, &g);
    let rows = (0..space.pairs()).map(|p| vec![1.0, (p % 2) as f64]).collect();
    let f = FeatureSet::from_rows(space, Domain::WindowAction, rows).unwrap();
    let rep = check_q_stability(&f, &s.measure, 0.05, 16, Exec::default()).unwrap();
    assert!(matches!(rep.verdict, QStabilityVerdict::SampledOnly { samples: 10_000, .. }));
    assert!(!rep.is_satisfied());
}

#[test]
fn realize_greedy_finds_or_rules_out_policies() {
    let f = fixtures::generic_pair_features(f1_space());
    let all_one = realize_greedy(&f, &[1; 8]).unwrap().unwrap();
    assert_eq!(greedy_actions(&f, &all_one), vec![1; 8]);
    // Φ(h,u) depends on h only through the latest observation, so windows
    // sharing it cannot disagree.
    let mut mixed = vec![0; 8];
    mixed[0] = 1;
    assert!(realize_greedy(&f, &mixed).unwrap().is_none());
}

#[test]
fn minimax_examples() {
    let (_, _, s) = uniform_f1();
    let space = f1_space();
    let f = fixtures::generic_window_features(space);
    let target = f.evaluate(&[0.3, -0.2, 1.1]);
    let fit = minimax_fit(&target, &f).unwrap();
    assert!(fit.lambda < 1e-9);

    let one = FeatureSet::indicator(space, Domain::Window, vec![0; 8]).unwrap();
    let vals: Vec<f64> = (0..8).map(|h| ((h * 7) % 5) as f64 - 1.5).collect();
    let fit = minimax_fit(&vals, &one).unwrap();
    assert!((fit.lambda - 2.0).abs() < 1e-9);
    assert!((fit.theta[0] - 0.5).abs() < 1e-9);
    let _ = s;
}

#[test]
fn minimax_matches_grid_refinement() {
    let (_, g, s) = uniform_f1();
    let f = fixtures::generic_window_features(f1_space());
    let j = exact_policy_value(&s.mdp, &g).unwrap();
    let fit = minimax_fit(&j, &f).unwrap();
    let err = |t: &[f64]| (0..8).map(|h| (j[h] - f.value(t, h)).abs()).fold(0.0, f64::max);
    let mut centre = project(&j, &f, &s.measure.window).unwrap().theta;
    let mut best = err(&centre);
    let mut radius = 2.0;
    let n = 20i32;
    for _ in 0..12 {
        let c = centre.clone();
        for a in -n..=n {
            for b in -n..=n {
                for k in -n..=n {
                    let t = [
                        c[0] + radius * a as f64 / n as f64,
                        c[1] + radius * b as f64 / n as f64,
                        c[2] + radius * k as f64 / n as f64,
                    ];
                    let e = err(&t);
                    if e < best {
                        best = e;
                        centre = t.to_vec();
                    }
                }
            }
        }
        radius /= 4.0;
    }
    assert!(fit.lambda <= best + 1e-9, "LP {} above grid {best}", fit.lambda);
    assert!(best - fit.lambda < 1e-6, "grid {best} vs LP {}", fit.lambda);
}

proptest! {
    #[test]
    fn greedy_policy_is_scale_invariant(theta in prop::collection::vec(-5.0f64..5.0, 3), scale in 0.01f64..100.0) {
        let f = fixtures::generic_pair_features(f1_space());
        let scaled: Vec<f64> = theta.iter().map(|t| t * scale).collect();
        prop_assert_eq!(greedy_actions(&f, &theta), greedy_actions(&f, &scaled));
    }

    #[test]
    fn projection_never_grows_the_weighted_norm(vals in prop::collection::vec(-10.0f64..10.0, 8)) {
        let space = f1_space();
        let f = fixtures::generic_window_features(space);
        let w = [0.05, 0.1, 0.2, 0.05, 0.15, 0.15, 0.2, 0.1];
        let p = project_function(&vals, &f, &w).unwrap();
        prop_assert!(weighted_l2(&p, &w) <= weighted_l2(&vals, &w) + 1e-10);
    }

    #[test]
    fn indicator_projection_never_exceeds_the_sup_norm(
        vals in prop::collection::vec(-1e3f64..1e3, 16),
        raw in prop::collection::vec(0.0f64..1.0, 16),
    ) {
        let space = f1_space();
        let total: f64 = raw.iter().sum::<f64>() + 1e-12;
        let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let f = FeatureSet::indicator_full(space, Domain::WindowAction);
        prop_assert!(sup_norm(&project_function(&vals, &f, &w).unwrap()) <= sup_norm(&vals));
        let coarse = FeatureSet::by_latest_obs(space, Domain::WindowAction);
        prop_assert!(sup_norm(&project_function(&vals, &coarse, &w).unwrap()) <= sup_norm(&vals));
    }
}
