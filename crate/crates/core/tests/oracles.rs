//! Independent oracles: every implementation result here is checked against a
//! separate computation (nalgebra, direct sums, queue simulation, BFS, ...).

#![allow(clippy::needless_range_loop)]

use std::collections::VecDeque;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use nnm_core::agent::{compute_advantages, gae, AgentConfig, Rollout, RolloutStep};
use nnm_core::curiosity::{apt_reward, disagreement_reward, icm_reward, nnm_reward, rnd_reward, RewardMethod, RewardSpec};
use nnm_core::envs::{make_env, noise_wrap, EnvSpec, DOWN, LEFT, RIGHT, UP};
use nnm_core::matlin::{frobenius_norm, nuclear_norm, singular_values, svd};
use nnm_core::memory::{ReplayBuffer, Transition};
use nnm_core::worldmodel::{
    central_difference, gradient_check, state_action_input, DynamicsSample, Encoder, Ensemble, Mlp, ModelConfig,
};
use nnm_core::{DenseMatrix, StateMatrix};

fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal)).unwrap()
}

fn to_na(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.data())
}

/// Singular values from the eigenvalues of `Z Z^T`, descending.
fn eigen_oracle(z: &DenseMatrix) -> Vec<f64> {
    let a = to_na(z);
    let mut ev: Vec<f64> = (&a * a.transpose()).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev.truncate(z.rows().min(z.cols()));
    ev.into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

#[test]
fn singular_values_match_eigen_oracle() {
    let z = gaussian(4, 6, 11);
    for (s, o) in singular_values(&z).unwrap().iter().zip(eigen_oracle(&z)) {
        assert_relative_eq!(*s, o, max_relative = 1e-8);
    }
}

#[test]
fn nuclear_and_frobenius_match_oracles_on_wide_gaussian() {
    let z = gaussian(5, 128, 12);
    let nuc: f64 = eigen_oracle(&z).iter().sum();
    assert_relative_eq!(nuclear_norm(&z).unwrap(), nuc, max_relative = 1e-8);
    let fro = z.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert_relative_eq!(frobenius_norm(&z), fro, max_relative = 1e-12);
    let r = nnm_reward(&StateMatrix::new(z).unwrap()).unwrap();
    assert_relative_eq!(r, nuc / (fro * 128f64.sqrt()), max_relative = 1e-8);
}

#[test]
fn svd_agrees_with_nalgebra_on_rank_deficient_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for t in 0..50 {
        let (m, n) = (rng.random_range(2..=20), rng.random_range(2..=20));
        let r = rng.random_range(1..=m.min(n));
        let z = gaussian(m, r, 100 + t).matmul(&gaussian(r, n, 200 + t)).unwrap();
        let ours = svd(&z).unwrap();
        let mut theirs: Vec<f64> = to_na(&z).singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        let top = theirs[0];
        for (s, o) in ours.sigma.iter().zip(&theirs) {
            assert!((s - o).abs() <= 1e-10 * top, "{m}x{n} rank {r}: {s} vs {o}");
        }
        assert_eq!(ours.rank(), r);
        assert!(ours.reconstruct().sub(&z).unwrap().max_abs() <= 1e-9);
    }
}

#[test]
fn matmul_is_associative() {
    let (a, b, c) = (gaussian(3, 4, 1), gaussian(4, 2, 2), gaussian(2, 5, 3));
    let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
    let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
    assert!(left.sub(&right).unwrap().max_abs() <= 1e-12);
    let direct = to_na(&a) * to_na(&b) * to_na(&c);
    for i in 0..3 {
        for j in 0..5 {
            assert_relative_eq!(left.get(i, j), direct[(i, j)], epsilon = 1e-12);
        }
    }
}

#[test]
fn baseline_rewards_match_direct_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let preds: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mut oracle = 0.0;
    for d in 0..8 {
        let col: Vec<f64> = preds.iter().map(|p| p[d]).collect();
        let mean = col.iter().sum::<f64>() / 5.0;
        oracle += col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
    }
    assert_relative_eq!(disagreement_reward(&preds).unwrap(), oracle / 8.0, max_relative = 1e-12);

    let a: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
    let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    assert_relative_eq!(icm_reward(&a, &b).unwrap(), d2, max_relative = 1e-12);
    let a32: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
    let b32: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
    let d32: f64 = a32.iter().zip(&b32).map(|(x, y)| (x - y) * (x - y)).sum();
    assert_relative_eq!(rnd_reward(&a32, &b32).unwrap(), d32, max_relative = 1e-12);

    let state = &preds[0];
    let neighbors = &preds[1..];
    let apt: f64 = neighbors
        .iter()
        .map(|nb| (1.0 + nb.iter().zip(state).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).ln())
        .sum();
    assert_relative_eq!(apt_reward(state, neighbors).unwrap(), apt, max_relative = 1e-12);
}

#[test]
fn encoder_matches_replayed_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let enc = Encoder::new(10, 6, &mut rng).unwrap();
    let obs: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (w, b) = (enc.weights(), enc.bias());
    let replay: Vec<f64> = (0..6)
        .map(|i| ((0..10).map(|j| w.get(i, j) * obs[j]).sum::<f64>() + b[i]).tanh())
        .collect();
    let z = enc.encode(&obs).unwrap();
    for (a, o) in z.iter().zip(&replay) {
        assert_relative_eq!(*a, *o, epsilon = 1e-14);
    }
    let zero = enc.encode(&[0.0; 10]).unwrap();
    for (a, bi) in zero.iter().zip(b) {
        assert_eq!(*a, bi.tanh());
    }
}

#[test]
fn mlp_forward_matches_layer_by_layer_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let net = Mlp::new(&[5, 7, 6, 3], &mut rng).unwrap();
    let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut h = to_na_vec(&x);
    let last = net.weights().len() - 1;
    for (i, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
        let pre = to_na(w) * &h + nalgebra::DVector::from_column_slice(b);
        h = if i == last { pre } else { pre.map(f64::tanh) };
    }
    for (a, o) in net.forward(&x).unwrap().iter().zip(h.iter()) {
        assert_relative_eq!(*a, *o, epsilon = 1e-13);
    }
}

fn to_na_vec(x: &[f64]) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(x)
}

#[test]
fn tanh_net_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let net = Mlp::new(&[4, 8, 4], &mut rng).unwrap();
    let x = [0.3, -0.7, 0.2, 0.9];
    let t = [0.1, 0.0, -0.4, 0.5];
    assert!(gradient_check(&net, &x, &t).unwrap() <= 1e-4);
    let linear = Mlp::new(&[1, 1], &mut rng).unwrap();
    assert!(gradient_check(&linear, &[0.8], &[-0.3]).unwrap() <= 1e-8);
}

fn linear_config() -> ModelConfig {
    ModelConfig {
        hidden: Vec::new(),
        learning_rate: 0.05,
        clip_norm: 1e9,
        ..ModelConfig::new(2, 2)
    }
}

#[test]
fn sgd_step_matches_hand_derived_update() {
    // Members are linear maps from the 4-dim [z, one-hot(a)] input to 2 outputs.
    let cfg = linear_config();
    let w0 = DenseMatrix::from_rows(&[[0.5, -0.2, 0.1, 0.0], [0.3, 0.4, -0.1, 0.2]]).unwrap();
    let b0 = vec![0.05, -0.05];
    let member = Mlp::from_parts(vec![w0.clone()], vec![b0.clone()]).unwrap();
    let mut ens = Ensemble::from_members(vec![member.clone(), member], cfg.clone()).unwrap();
    let (z, next) = ([1.0, -2.0], [0.5, 0.5]);
    ens.train_step(&[DynamicsSample { z: &z, action: 1, next_z: &next }]).unwrap();

    // loss = |W x + b - y|^2, so dW = 2 e x^T and db = 2 e.
    let x = state_action_input(&z, 1, 2).unwrap();
    let pred: Vec<f64> = (0..2).map(|i| (0..4).map(|j| w0.get(i, j) * x[j]).sum::<f64>() + b0[i]).collect();
    let e: Vec<f64> = pred.iter().zip(&next).map(|(p, y)| p - y).collect();
    for m in ens.members() {
        for i in 0..2 {
            for j in 0..4 {
                assert_relative_eq!(m.weights()[0].get(i, j), w0.get(i, j) - 0.05 * 2.0 * e[i] * x[j], epsilon = 1e-14);
            }
            assert_relative_eq!(m.biases()[0][i], b0[i] - 0.05 * 2.0 * e[i], epsilon = 1e-14);
        }
    }
}

#[test]
fn batch_gradient_matches_finite_differences_of_batch_loss() {
    let cfg = ModelConfig {
        hidden: vec![5],
        learning_rate: 1e-3,
        clip_norm: 1e9,
        ..ModelConfig::new(3, 2)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let nets: Vec<Mlp> = (0..2).map(|_| Mlp::new(&[5, 5, 3], &mut rng).unwrap()).collect();
    let zs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let batch: Vec<DynamicsSample> = (0..4)
        .map(|i| DynamicsSample { z: &zs[i], action: i % 2, next_z: &ys[i] })
        .collect();
    let before = nets[0].params_flat();
    let mut ens = Ensemble::from_members(nets.clone(), cfg).unwrap();
    ens.train_step(&batch).unwrap();
    let after = ens.members().next().unwrap().params_flat();

    let loss = |p: &[f64]| {
        let mut n = nets[0].clone();
        n.set_params_flat(p).unwrap();
        batch
            .iter()
            .map(|s| {
                let out = n.forward(&state_action_input(s.z, s.action, 2).unwrap()).unwrap();
                out.iter().zip(s.next_z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum::<f64>()
            / batch.len() as f64
    };
    let g = central_difference(loss, &before, 1e-6);
    for ((b, a), gi) in before.iter().zip(&after).zip(&g) {
        assert!(((b - a) / 1e-3 - gi).abs() <= 1e-6 * gi.abs().max(1.0));
    }
}

#[test]
fn ensemble_columns_equal_member_forward_passes() {
    let cfg = ModelConfig::new(4, 3);
    let ens = Ensemble::new(5, cfg, 19).unwrap();
    let z = [0.2, -0.1, 0.7, 0.0];
    let m = ens.predict_matrix(&z, 2).unwrap();
    let x = state_action_input(&z, 2, 3).unwrap();
    for (j, net) in ens.members().enumerate() {
        assert_eq!(m.matrix().column(j), net.forward(&x).unwrap());
    }
}

fn step(r_ext: f64, r_int: f64, value_ext: f64, value_int: f64, done: bool) -> RolloutStep {
    RolloutStep {
        z: vec![0.0],
        action: 0,
        log_prob: 0.0,
        value_ext,
        value_int,
        r_ext,
        r_int,
        r_int_scaled: r_int,
        r_total: r_ext + r_int,
        done,
    }
}

/// Advantage as the explicit discounted sum of TD residuals, truncated at episode ends.
fn direct_gae(r: &[f64], v: &[f64], d: &[bool], last: f64, g: f64, l: f64, episodic: bool) -> Vec<f64> {
    let n = r.len();
    let next = |t: usize| if t + 1 < n { v[t + 1] } else { last };
    let cut = |t: usize| episodic && d[t];
    let delta: Vec<f64> = (0..n)
        .map(|t| r[t] + if cut(t) { 0.0 } else { g * next(t) } - v[t])
        .collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for k in t..n {
                sum += w * delta[k];
                if cut(k) {
                    break;
                }
                w *= g * l;
            }
            sum
        })
        .collect()
}

#[test]
fn gae_matches_direct_sum_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for episodic in [true, false] {
        let n = 64;
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let (adv, ret) = gae(&r, &v, &d, 0.3, 0.97, 0.9, episodic);
        let oracle = direct_gae(&r, &v, &d, 0.3, 0.97, 0.9, episodic);
        for t in 0..n {
            assert_relative_eq!(adv[t], oracle[t], epsilon = 1e-12);
            assert_relative_eq!(ret[t], oracle[t] + v[t], epsilon = 1e-12);
        }
    }
}

#[test]
fn combined_advantages_split_into_episodic_and_continuing_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let steps: Vec<RolloutStep> = (0..32)
        .map(|_| {
            step(
                f64::from(rng.random_bool(0.2) as u8),
                rng.random_range(0.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_bool(0.15),
            )
        })
        .collect();
    let rollout = Rollout { steps, last_value_ext: 0.4, last_value_int: -0.2, episodes: Vec::new() };
    let mut cfg = AgentConfig::new(RewardSpec::new(RewardMethod::Nnm));
    cfg.reward.alpha = 0.5;
    cfg.reward.beta = 2.0;
    let adv = compute_advantages(&rollout, &cfg);
    let col = |f: fn(&RolloutStep) -> f64| rollout.steps.iter().map(f).collect::<Vec<f64>>();
    let d: Vec<bool> = rollout.steps.iter().map(|s| s.done).collect();
    let re: Vec<f64> = col(|s| s.r_ext).iter().map(|r| 2.0 * r).collect();
    let ri: Vec<f64> = col(|s| s.r_int_scaled).iter().map(|r| 0.5 * r).collect();
    let e = direct_gae(&re, &col(|s| s.value_ext), &d, 0.4, cfg.gamma, cfg.gae_lambda, true);
    let i = direct_gae(&ri, &col(|s| s.value_int), &d, -0.2, cfg.gamma, cfg.gae_lambda, false);
    for t in 0..32 {
        assert_relative_eq!(adv.raw[t], e[t] + i[t], epsilon = 1e-12);
    }
    let mean = adv.advantages.iter().sum::<f64>() / 32.0;
    let var = adv.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 32.0;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
}

fn transition(i: usize, z: Vec<f64>) -> Transition {
    Transition {
        obs: vec![i as f64],
        action: i % 4,
        r_ext: 0.0,
        r_int: i as f64,
        done: false,
        next_obs: vec![i as f64 + 1.0],
        next_z: z.clone(),
        z,
    }
}

#[test]
fn replay_matches_queue_simulation() {
    let mut buf = ReplayBuffer::new(37);
    let mut queue = VecDeque::new();
    for i in 0..200 {
        let t = transition(i, vec![i as f64]);
        buf.push(t.clone());
        queue.push_back(t);
        if queue.len() > 37 {
            queue.pop_front();
        }
        assert!(buf.iter().eq(queue.iter()));
    }
}

#[test]
fn knn_matches_exhaustive_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut buf = ReplayBuffer::new(1000);
    let points: Vec<Vec<f64>> = (0..256).map(|_| (0..8).map(|_| rng.sample(StandardNormal)).collect()).collect();
    for (i, p) in points.iter().enumerate() {
        buf.push(transition(i, p.clone()));
    }
    for _ in 0..20 {
        let q: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        let mut all: Vec<(f64, &Vec<f64>)> = points
            .iter()
            .map(|p| (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), p))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let got = buf.knn_with_distances(&q, 5).unwrap();
        for ((z, d), (d2, p)) in got.iter().zip(&all) {
            assert_eq!(*z, p.as_slice());
            assert_relative_eq!(*d, d2.sqrt(), max_relative = 1e-12);
        }
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(10);
    for i in 0..10 {
        buf.push(transition(i, vec![i as f64]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut counts = [0usize; 10];
    for t in buf.sample(100_000, &mut rng).unwrap() {
        counts[t.r_int as usize] += 1;
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 10_000.0).powi(2) / 10_000.0).sum();
    // 99% critical value of chi-squared with 9 degrees of freedom.
    assert!(chi2 < 21.666, "chi2 = {chi2}");
}

#[test]
fn noise_wrap_has_requested_std() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let zero = [0.0; 4];
    let mut sums = [0.0; 4];
    let mut sq = [0.0; 4];
    let n = 100_000;
    for _ in 0..n {
        for (k, x) in noise_wrap(&zero, 0.25, &mut rng).unwrap().iter().enumerate() {
            sums[k] += x;
            sq[k] += x * x;
        }
    }
    for k in 0..4 {
        let mean = sums[k] / n as f64;
        let std = (sq[k] / n as f64 - mean * mean).sqrt();
        assert!((0.245..=0.255).contains(&std), "component {k}: std {std}");
    }
}

/// Shortest action sequence from (0, 0) to the goal by breadth-first search.
fn bfs_path(w: usize, h: usize, walls: &[(usize, usize)], goal: (usize, usize)) -> Option<Vec<usize>> {
    let mut prev: Vec<Option<(usize, (usize, usize))>> = vec![None; w * h];
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([(0usize, 0usize)]);
    seen[0] = true;
    while let Some((x, y)) = queue.pop_front() {
        if (x, y) == goal {
            let mut path = Vec::new();
            let mut at = y * w + x;
            while let Some((a, p)) = prev[at] {
                path.push(a);
                at = p.1 * w + p.0;
            }
            path.reverse();
            return Some(path);
        }
        let moves = [(UP, 0, -1), (DOWN, 0, 1), (LEFT, -1, 0), (RIGHT, 1, 0)];
        for (a, dx, dy) in moves {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            let i = ny * w + nx;
            if seen[i] || walls.contains(&(nx, ny)) {
                continue;
            }
            seen[i] = true;
            prev[i] = Some((a, (x, y)));
            queue.push_back((nx, ny));
        }
    }
    None
}

#[test]
fn shortest_goal_path_matches_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut checked = 0;
    for trial in 0..30 {
        let mut spec = EnvSpec::grid_world(20, 20);
        spec.max_steps = 1000;
        if trial > 0 {
            spec.walls = (0..rng.random_range(20..120))
                .map(|_| (rng.random_range(0..20), rng.random_range(0..20)))
                .filter(|&c| c != (0, 0) && c != (19, 19))
                .collect();
        }
        let Some(path) = bfs_path(20, 20, &spec.walls, (19, 19)) else {
            continue;
        };
        if trial == 0 {
            assert_eq!(path.len(), 38);
        }
        let mut env = make_env(&spec).unwrap();
        env.reset();
        for (i, &a) in path.iter().enumerate() {
            let s = env.step(a).unwrap();
            assert_eq!(s.done, i + 1 == path.len());
            assert_eq!(s.r_ext, if s.done { 1.0 } else { 0.0 });
        }
        checked += 1;
    }
    assert!(checked >= 10);
}
