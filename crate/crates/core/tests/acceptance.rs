//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Run with `cargo test -p rls-core --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rls_core::baseline::sweep_sequencer;
use rls_core::env::{enforce, EnvConfig, LeafAction, MlcEnv, MuAction};
use rls_core::fluence::{unit_fluence, FluenceGrid, LeafPair, MachineState, PlanSequence};
use rls_core::io::{gen_fluence, parse_fluence, parse_plan, read_fluence, read_plan, write_fluence, write_plan, SynthConfig};
use rls_core::metrics::{leaf_speed_stats, mnse, reconstruct};
use rls_core::nn::DenseNet;
use rls_core::normalize::{make_crop, map_pairs_back, merge_control_points, CropMode, Roi};
use rls_core::ppo::rollout::episode_rng;
use rls_core::ppo::{
    collect_rollouts, compute_gae, evaluate_batch, normalize_advantages, random_sequence, run_episode, sequence, train,
    ActionMode, PolicyParams, TrainConfig,
};
use rls_core::refine::{ridge_refine, solve_ridge, RidgeConfig};
use rls_core::rewards::RewardWeights;
use rls_core::Error;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ---------------------------------------------------------------------------
// 1. rewards against a literal transcription of the reference pseudo-code

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Unit edges bordering exactly one open cell.
fn edge_count_perimeter(pairs: &[LeafPair], cols: usize) -> f64 {
    let rows = pairs.len();
    let open = |x: i64, y: i64| {
        x >= 0 && y >= 0 && (x as usize) < rows && (y as usize) < cols && {
            let p = pairs[x as usize];
            p.a <= y && y < p.b
        }
    };
    let mut edges = 0;
    for x in -1..=rows as i64 {
        for y in -1..=cols as i64 {
            if open(x, y) != open(x + 1, y) {
                edges += 1;
            }
            if open(x, y) != open(x, y + 1) {
                edges += 1;
            }
        }
    }
    edges as f64
}

fn oracle_aperture(pairs: &[LeafPair], cols: usize) -> f64 {
    let area: i64 = pairs.iter().map(|p| p.b - p.a).sum();
    let peri = edge_count_perimeter(pairs, cols);
    if peri == 0.0 {
        0.0
    } else {
        area as f64 / peri
    }
}

/// Row-wise transcription: `rw1 = MU * sum((tar - cumu >= MU) * mask)`, then
/// `cumu += mask * MU`, `rw2 = -sum((tar - cumu < 0) * mask)`, `rw3` the sign of
/// front minus tail, `rw4 = 3 - sigmoid(|d_front|) - sigmoid(|d_tail|) - sigmoid(|d_MU|)`.
#[allow(clippy::too_many_arguments)]
fn oracle_row(
    tar: &[f64],
    cumu: &[f64],
    tail: i64,
    front: i64,
    intended_tail: i64,
    intended_front: i64,
    prev: LeafPair,
    mu: f64,
    prev_mu: f64,
    aperture: f64,
) -> [f64; 5] {
    let mask: Vec<f64> = (0..tar.len() as i64).map(|y| f64::from(u8::from(tail <= y && y < front))).collect();
    let mut rw1 = 0.0;
    for y in 0..tar.len() {
        rw1 += f64::from(u8::from(tar[y] - cumu[y] >= mu)) * mask[y];
    }
    rw1 *= mu;
    let cumu: Vec<f64> = cumu.iter().zip(&mask).map(|(c, m)| c + m * mu).collect();
    let mut rw2 = 0.0;
    for y in 0..tar.len() {
        rw2 -= f64::from(u8::from(tar[y] - cumu[y] < 0.0)) * mask[y];
    }
    let d = intended_front - intended_tail;
    let rw3 = f64::from(u8::from(d > 0)) - f64::from(u8::from(d < 0));
    let rw4 = 3.0
        - sigmoid((front - prev.b).abs() as f64)
        - sigmoid((tail - prev.a).abs() as f64)
        - sigmoid((mu - prev_mu).abs());
    [rw1, rw2, rw3, rw4, aperture]
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut rows_checked, mut max_real_err, mut exact_mismatch) = (0usize, 0.0f64, 0usize);
    while rows_checked < 1000 {
        let (nx, ny) = (rng.random_range(1..=3), rng.random_range(2..=16));
        // half-integer levels so the >= and < thresholds are hit exactly
        let values = (0..nx * ny)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { 0.5 * rng.random_range(1..=8) as f64 })
            .collect();
        let Ok(target) = FluenceGrid::new(nx, ny, values) else { continue };
        if !target.has_positive() {
            continue;
        }
        let cfg = EnvConfig {
            control_points: 3,
            max_step: 3,
            y_norm: 8,
            ..EnvConfig::default()
        };
        let mut env = MlcEnv::reset(target.clone(), cfg.clone()).unwrap();
        while !env.is_done() {
            let prev = env.state().machine.clone();
            let cumu_prev = env.state().cumulated.clone();
            let actions: Vec<LeafAction> = (0..nx)
                .map(|_| LeafAction::new(rng.random_range(-3..=3), rng.random_range(-3..=3)))
                .collect();
            let mu_raw = 0.5 * rng.random_range(0..=6) as f64;
            let out = env.step(&actions, MuAction(mu_raw)).unwrap();
            let now = env.state().machine.clone();
            let mu = mu_raw.clamp(cfg.mu_range.0, cfg.mu_range.1);
            let aperture = oracle_aperture(&now.pairs, ny);
            for x in 0..nx {
                let (p, q) = (prev.pairs[x], now.pairs[x]);
                let want = oracle_row(
                    target.row(x),
                    cumu_prev.row(x),
                    q.a,
                    q.b,
                    p.a + actions[x].da,
                    p.b + actions[x].db,
                    p,
                    mu,
                    prev.mu,
                    aperture,
                );
                let got = out.rewards[x].parts;
                if got[1] != want[1] || got[2] != want[2] {
                    exact_mismatch += 1;
                }
                for i in [0, 3, 4] {
                    max_real_err = max_real_err.max((got[i] - want[i]).abs());
                }
                rows_checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        exact_mismatch == 0 && max_real_err <= 1e-10 && within(elapsed, 5.0),
        format!(
            "{rows_checked} rows, exact mismatches {exact_mismatch}, max real error {max_real_err:.1e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. backward passes against central finite differences

/// Max relative error of parameter and input gradients of `w · net(x)` over
/// `points` random inputs.
fn network_fd_error(net: &DenseNet, points: usize, rng: &mut ChaCha8Rng) -> f64 {
    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let mut worst = 0.0f64;
    let mut net = net.clone();
    for _ in 0..points {
        let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let w: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |n: &DenseNet, x: &[f64]| n.forward(x).unwrap().0.iter().zip(&w).map(|(o, w)| o * w).sum::<f64>();
        let (_, tape) = net.forward(&x).unwrap();
        let g = Array2::from_shape_vec((1, w.len()), w.clone()).unwrap();
        let (grad, dx) = net.backward(&tape, g.view()).unwrap();

        for j in 0..x.len() {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (loss(&net, &up) - loss(&net, &down)) / (2.0 * h);
            worst = worst.max(rel(dx[[0, j]], fd));
        }
        let analytic: Vec<Vec<f64>> = grad.slices().iter().map(|s| s.to_vec()).collect();
        for (s, values) in analytic.iter().enumerate() {
            for _ in 0..8 {
                let j = rng.random_range(0..values.len());
                let orig = net.param_slices()[s][j];
                net.param_slices_mut()[s][j] = orig + h;
                let up = loss(&net, &x);
                net.param_slices_mut()[s][j] = orig - h;
                let down = loss(&net, &x);
                net.param_slices_mut()[s][j] = orig;
                worst = worst.max(rel(values[j], (up - down) / (2.0 * h)));
            }
        }
    }
    worst
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let env = EnvConfig {
        y_norm: 16,
        ..EnvConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let separate = PolicyParams::init(&env, false, &mut rng);
    let shared = PolicyParams::init(&env, true, &mut rng);
    let nets = [
        ("leaf", &separate.leaf),
        ("mu", &separate.mu),
        ("critic", separate.critic.as_ref().expect("separate critic")),
        ("leaf+value", &shared.leaf),
    ];
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for (name, net) in nets {
        let e = network_fd_error(net, 20, &mut rng);
        worst = worst.max(e);
        parts.push(format!("{name} {e:.1e}"));
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-4 && within(elapsed, 30.0),
        format!("max relative error {worst:.1e} ({}), {:.2}s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// 3. PPO invariants

fn gae_oracle(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| r[t] + if t + 1 < n { gamma * v[t + 1] } else { 0.0 } - v[t])
        .collect();
    (0..n)
        .map(|t| (t..n).map(|j| (gamma * lambda).powi((j - t) as i32) * delta[j]).sum())
        .collect()
}

fn small_corpus(n: usize, seed: u64) -> Vec<FluenceGrid> {
    let cfg = SynthConfig {
        shape: (4, 12),
        ..SynthConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| gen_fluence(&cfg, &mut rng).unwrap()).collect()
}

fn criterion_3() -> Verdict {
    let env_cfg = EnvConfig {
        control_points: 5,
        y_norm: 12,
        ..EnvConfig::default()
    };
    let tc = TrainConfig::default();
    let mut worst_ratio = 0.0f64;
    let mut worst_gae = 0.0f64;
    let mut worst_surrogate = 0.0f64;
    for shared in [false, true] {
        let params = PolicyParams::init(&env_cfg, shared, &mut ChaCha8Rng::seed_from_u64(303));
        let envs = small_corpus(6, 304)
            .into_iter()
            .map(|t| MlcEnv::reset(t, env_cfg.clone()).unwrap())
            .collect();
        let (mut buf, _) = collect_rollouts(&params, envs, ActionMode::Sample, tc.reward_scale, 305).unwrap();
        buf.compute_advantages(tc.gamma, tc.gae_lambda, false);
        for span in &buf.episodes {
            for x in 0..span.rows {
                let idx: Vec<usize> = (0..span.steps).map(|k| span.index(x, k)).collect();
                let r: Vec<f64> = idx.iter().map(|&i| buf.transitions[i].reward).collect();
                let v: Vec<f64> = idx.iter().map(|&i| buf.transitions[i].value).collect();
                for (j, o) in gae_oracle(&r, &v, tc.gamma, tc.gae_lambda).iter().enumerate() {
                    worst_gae = worst_gae.max((buf.advantages[idx[j]] - o).abs());
                }
            }
        }
        let batch: Vec<_> = buf.transitions.iter().collect();
        let mut adv = buf.advantages.clone();
        normalize_advantages(&mut adv);
        let eval = evaluate_batch(&params, &batch, &adv, &buf.returns, &tc).unwrap();
        worst_ratio = eval.ratios.iter().fold(worst_ratio, |m, r| m.max((r - 1.0).abs()));
        // with every ratio at 1 the clipped objective is the plain -mean(A)
        let unclipped = -adv.iter().sum::<f64>() / adv.len() as f64;
        worst_surrogate = worst_surrogate.max((eval.surrogate - unclipped).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(306);
    for _ in 0..500 {
        let n = rng.random_range(1..12);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut dones = vec![false; n];
        dones[n - 1] = true;
        let (gamma, lambda) = (rng.random_range(0.8..1.0), rng.random_range(0.0..1.0));
        let (adv, _) = compute_gae(&r, &v, &dones, gamma, lambda);
        for (a, o) in adv.iter().zip(gae_oracle(&r, &v, gamma, lambda)) {
            worst_gae = worst_gae.max((a - o).abs());
        }
    }
    verdict(
        worst_ratio <= 1e-9 && worst_gae <= 1e-10 && worst_surrogate <= 1e-12,
        format!("max |r-1| {worst_ratio:.1e}, max GAE error {worst_gae:.1e}, surrogate gap {worst_surrogate:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 4. environment invariants

fn plan_matches_cumulated(env: &MlcEnv) -> f64 {
    let recon = reconstruct(&env.plan().unwrap()).unwrap();
    recon
        .values()
        .iter()
        .zip(env.state().cumulated.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn pairs_valid(env: &MlcEnv) -> bool {
    let cols = env.cols() as i64;
    env.state().machine.pairs.iter().all(|p| 0 <= p.a && p.a <= p.b && p.b <= cols)
}

fn criterion_4() -> Verdict {
    let mut violations = 0usize;
    let mut worst_recon = 0.0f64;
    let mut steps = 0usize;

    // exhaustive: every nonzero binary row of width 2..=4, every pair of leaf actions over two control points
    let s = 2i64;
    for cols in 2..=4usize {
        for bits in 1u32..(1 << cols) {
            let row: Vec<f64> = (0..cols).map(|y| f64::from((bits >> y) & 1)).collect();
            let target = FluenceGrid::new(1, cols, row).unwrap();
            let cfg = EnvConfig {
                control_points: 2,
                max_step: s,
                y_norm: 8,
                ..EnvConfig::default()
            };
            for a1 in -s..=s {
                for b1 in -s..=s {
                    for a2 in -s..=s {
                        for b2 in -s..=s {
                            let mut env = MlcEnv::reset(target.clone(), cfg.clone()).unwrap();
                            for (da, db, mu) in [(a1, b1, 0.7), (a2, b2, 2.9)] {
                                env.step(&[LeafAction::new(da, db)], MuAction(mu)).unwrap();
                                steps += 1;
                                violations += usize::from(!pairs_valid(&env));
                            }
                            worst_recon = worst_recon.max(plan_matches_cumulated(&env));
                        }
                    }
                }
            }
        }
    }
    // enforce itself on every intended pair around small grids
    for cols in 0..=4usize {
        for a in -6..=10 {
            for b in -6..=10 {
                let p = enforce(LeafPair::new(a, b), cols);
                violations += usize::from(!(0 <= p.a && p.a <= p.b && p.b <= cols as i64));
            }
        }
    }

    // 10^4 random steps on random grids
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut random_steps = 0usize;
    while random_steps < 10_000 {
        let (nx, ny) = (rng.random_range(1..=6), rng.random_range(2..=20));
        let values = (0..nx * ny)
            .map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random_range(0.0..10.0) })
            .collect();
        let target = FluenceGrid::new(nx, ny, values).unwrap();
        if !target.has_positive() {
            continue;
        }
        let cfg = EnvConfig {
            control_points: rng.random_range(1..=10),
            max_step: rng.random_range(1..=6),
            y_norm: 8,
            ..EnvConfig::default()
        };
        let mut env = MlcEnv::reset(target, cfg.clone()).unwrap();
        while !env.is_done() {
            let actions: Vec<LeafAction> = (0..nx)
                .map(|_| LeafAction::new(rng.random_range(-cfg.max_step..=cfg.max_step), rng.random_range(-cfg.max_step..=cfg.max_step)))
                .collect();
            env.step(&actions, MuAction(rng.random_range(-1.0..4.0))).unwrap();
            random_steps += 1;
            violations += usize::from(!pairs_valid(&env));
        }
        worst_recon = worst_recon.max(plan_matches_cumulated(&env));
    }
    steps += random_steps;

    // bit-identical sampled trajectories under a fixed seed
    let env_cfg = EnvConfig {
        control_points: 6,
        y_norm: 12,
        ..EnvConfig::default()
    };
    let params = PolicyParams::init(&env_cfg, false, &mut ChaCha8Rng::seed_from_u64(405));
    let mut deterministic = true;
    for (i, target) in small_corpus(4, 406).into_iter().enumerate() {
        let run = || {
            let env = MlcEnv::reset(target.clone(), env_cfg.clone()).unwrap();
            run_episode(&params, env, ActionMode::Sample, 0.01, i, &mut episode_rng(407, i as u64)).unwrap()
        };
        let (a, b) = (run(), run());
        let bits = |t: &[rls_core::ppo::Transition]| {
            t.iter()
                .flat_map(|t| t.leaf_obs.iter().chain(&t.mu_obs).chain(&t.parts).chain([&t.mu_action, &t.reward]))
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        deterministic &= a.env.history() == b.env.history() && bits(&a.transitions) == bits(&b.transitions);
    }

    verdict(
        violations == 0 && worst_recon <= 1e-9 && deterministic,
        format!(
            "{steps} steps, bound violations {violations}, max |cumulated - reconstruction| {worst_recon:.1e}, deterministic {deterministic}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5-7. training on the seeded single-blob corpus

const TRAIN_ITERATIONS: usize = 200;

fn blob_corpus() -> &'static [FluenceGrid] {
    static CORPUS: OnceLock<Vec<FluenceGrid>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.shape, (8, 32));
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        (0..64).map(|_| gen_fluence(&cfg, &mut rng).unwrap()).collect()
    })
}

fn train_config() -> TrainConfig {
    TrainConfig {
        iterations: TRAIN_ITERATIONS,
        lr: 1e-3,
        seed: 0,
        ..TrainConfig::default()
    }
}

fn trained_with(weights: RewardWeights) -> (PolicyParams, EnvConfig) {
    let mut env = EnvConfig::default();
    env.rewards.weights = weights;
    let report = train(&train_config(), &env, blob_corpus(), &[], |_| {}).unwrap();
    assert!(report.aborted.is_none(), "training aborted: {:?}", report.aborted);
    (report.params, env)
}

fn default_policy() -> &'static (PolicyParams, EnvConfig) {
    static POLICY: OnceLock<(PolicyParams, EnvConfig)> = OnceLock::new();
    POLICY.get_or_init(|| trained_with(RewardWeights::default()))
}

fn corpus_mnse(params: &PolicyParams, env: &EnvConfig) -> f64 {
    let corpus = blob_corpus();
    let recon: Vec<FluenceGrid> = corpus
        .iter()
        .map(|f| reconstruct(&sequence(f, params, env, env.control_points).unwrap()).unwrap())
        .collect();
    mnse(corpus.iter().zip(&recon)).unwrap()
}

fn corpus_leaf_speed(params: &PolicyParams, env: &EnvConfig) -> f64 {
    let corpus = blob_corpus();
    let total: f64 = corpus
        .iter()
        .map(|f| leaf_speed_stats(&sequence(f, params, env, env.control_points).unwrap()).unwrap().mean_abs_delta)
        .sum();
    total / corpus.len() as f64
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let corpus = blob_corpus();
    let (params, env) = default_policy();
    let k = env.control_points;
    let trained = corpus_mnse(params, env);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let random: Vec<FluenceGrid> = corpus
        .iter()
        .map(|f| reconstruct(&random_sequence(f, params, env, k, &mut rng).unwrap()).unwrap())
        .collect();
    let random = mnse(corpus.iter().zip(&random)).unwrap();
    let baseline: Vec<FluenceGrid> = corpus
        .iter()
        .map(|f| reconstruct(&sweep_sequencer(f, k, env.mu_range, env.max_step).unwrap()).unwrap())
        .collect();
    let baseline = mnse(corpus.iter().zip(&baseline)).unwrap();

    let a = trained < 0.5 * random;
    let b = trained <= 1.1 * baseline;
    let elapsed = start.elapsed();
    verdict(
        a && b && within(elapsed, 1800.0),
        format!(
            "trained {trained:.4}; (a) < 0.5 x random {random:.4}: {}; (b) <= 1.1 x baseline {baseline:.4}: {}; {:.0}s",
            pass_word(a),
            pass_word(b),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let with_l4 = |l4: f64| {
        let mut w = RewardWeights::default();
        w.0[3] = l4;
        let (p, env) = trained_with(w);
        (corpus_leaf_speed(&p, &env), corpus_mnse(&p, &env))
    };
    let (speed_low, mnse_low) = with_l4(0.01);
    let (speed_high, mnse_high) = with_l4(5.0);
    let elapsed = start.elapsed();
    verdict(
        speed_high <= speed_low && mnse_high >= mnse_low - 0.02 && within(elapsed, 3600.0),
        format!(
            "mean_abs_delta {speed_high:.3} (lambda4=5) vs {speed_low:.3} (lambda4=0.01); MNSE {mnse_high:.4} vs {mnse_low:.4}; {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7() -> Verdict {
    let (p, env) = default_policy();
    let with_l2 = corpus_mnse(p, env);
    let mut w = RewardWeights::default();
    w.0[1] = 0.0;
    let (q, env0) = trained_with(w);
    let without = corpus_mnse(&q, &env0);
    verdict(without > with_l2, format!("MNSE lambda2=0 {without:.4} vs lambda2=2 {with_l2:.4}"))
}

// ---------------------------------------------------------------------------
// 8. ridge refinement

fn squared_error(target: &FluenceGrid, plan: &PlanSequence, mus: &[f64]) -> f64 {
    let mut recon = vec![0.0; target.values().len()];
    for (st, &m) in plan.states.iter().zip(mus) {
        let u = unit_fluence(st, target.shape()).unwrap();
        recon.iter_mut().zip(u.values()).for_each(|(r, v)| *r += m * v);
    }
    recon.iter().zip(target.values()).map(|(r, t)| (r - t).powi(2)).sum()
}

fn random_plan(rng: &mut ChaCha8Rng, k: usize, shape: (usize, usize)) -> PlanSequence {
    let states = (0..k)
        .map(|_| {
            let pairs = (0..shape.0)
                .map(|_| {
                    let a = rng.random_range(0..=shape.1 as i64);
                    LeafPair::new(a, rng.random_range(a..=shape.1 as i64))
                })
                .collect();
            MachineState::new(pairs, rng.random_range(0.5..2.5))
        })
        .collect();
    PlanSequence::new(states, shape).unwrap()
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut increases = 0usize;
    let mut refine_checked = 0usize;
    let mut worst_increase = 0.0f64;
    for _ in 0..100 {
        let shape = (rng.random_range(1..=5), rng.random_range(2..=10));
        let k = rng.random_range(1..=6);
        let plan = random_plan(&mut rng, k, shape);
        // a target reachable with positive weights plus noise keeps the clip inactive
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        let noise = (0..shape.0 * shape.1).map(|_| rng.random_range(0.0..0.1));
        let mut values: Vec<f64> = vec![0.0; shape.0 * shape.1];
        for (st, w) in plan.states.iter().zip(&weights) {
            let u = unit_fluence(st, shape).unwrap();
            values.iter_mut().zip(u.values()).for_each(|(v, u)| *v += w * u);
        }
        values.iter_mut().zip(noise).for_each(|(v, n)| *v += n);
        let target = FluenceGrid::new(shape.0, shape.1, values).unwrap();

        let before = squared_error(&target, &plan, &plan.mus());
        let m = solve_ridge(&target, &plan, 0.0).unwrap();
        let after = squared_error(&target, &plan, &m);
        if after > before + 1e-9 * before.max(1.0) {
            increases += 1;
            worst_increase = worst_increase.max(after - before);
        }
        let cap = 1e6;
        if m.iter().all(|&v| (0.0..=cap).contains(&v)) {
            let refined = ridge_refine(&target, &plan, &RidgeConfig { alpha: 0.0, max_mu: cap }).unwrap();
            let err = squared_error(&target, &refined, &refined.mus());
            if err > before + 1e-9 * before.max(1.0) {
                increases += 1;
            }
            refine_checked += 1;
        }
    }

    // K = 3 against a grid search over {0, 0.1, ..., 2.5}^3
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..20 {
        let shape = (rng.random_range(2..=4), rng.random_range(3..=8));
        let plan = random_plan(&mut rng, 3, shape);
        let values = (0..shape.0 * shape.1).map(|_| rng.random_range(0.0..4.0)).collect();
        let target = FluenceGrid::new(shape.0, shape.1, values).unwrap();
        let alpha = 1e-3;
        let objective = |m: &[f64]| squared_error(&target, &plan, m) + alpha * m.iter().map(|v| v * v).sum::<f64>();
        let m = solve_ridge(&target, &plan, alpha).unwrap();
        let mut best = f64::INFINITY;
        for i in 0..=25 {
            for j in 0..=25 {
                for l in 0..=25 {
                    best = best.min(objective(&[i as f64 * 0.1, j as f64 * 0.1, l as f64 * 0.1]));
                }
            }
        }
        worst_gap = worst_gap.max(objective(&m) - best);
    }
    verdict(
        increases == 0 && worst_gap <= 1e-6,
        format!(
            "100 plans ({refine_checked} also via ridge_refine), error increases {increases} (worst {worst_increase:.1e}); grid oracle gap {worst_gap:.1e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. normalization algebra

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let crop = make_crop(Roi { x1: 0, x2: 1, y1: 20, y2: 60 }, (1, 100), CropMode::Inference, &mut rng);
    let crop_ok = (crop.y1, crop.y2) == (10, 80);

    // p_{k-1} = 0 with steps d_k = d_{k+1} = 2: positions 2 and 4 merge to 3
    let plan = PlanSequence::new(
        vec![
            MachineState::new(vec![LeafPair::new(2, 9)], 1.0),
            MachineState::new(vec![LeafPair::new(4, 9)], 1.0),
        ],
        (1, 10),
    )
    .unwrap();
    let merged = merge_control_points(&plan, 1).unwrap();
    let merge_ok = merged.states[0].pairs[0].a == 3;

    let mut violations = 0usize;
    for _ in 0..10_000 {
        let cols = rng.random_range(2..=200);
        let y1 = rng.random_range(0..cols - 1);
        let y2 = rng.random_range(y1 + 1..=cols);
        let y_norm = rng.random_range(8..=128);
        let crop = rls_core::normalize::CropBox {
            x1: 0,
            x2: 1,
            y1,
            y2,
            original_shape: (1, cols),
        };
        let p = rng.random_range(0..=y_norm as i64);
        let q = rng.random_range(p..=y_norm as i64);
        let map = |pair: LeafPair| map_pairs_back(&[pair], &crop, y_norm).unwrap()[0];
        // both leaf edges, each with the other leaf parked out of the way
        let (ap, aq) = (map(LeafPair::new(p, y_norm as i64)).a, map(LeafPair::new(q, y_norm as i64)).a);
        let (bp, bq) = (map(LeafPair::new(0, p)).b, map(LeafPair::new(0, q)).b);
        violations += usize::from(ap > aq) + usize::from(bp > bq);
    }
    verdict(
        crop_ok && merge_ok && violations == 0,
        format!(
            "crop ({}, {}), merged position {}, monotonicity violations {violations} / 10000",
            crop.y1, crop.y2, merged.states[0].pairs[0].a
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. file format fuzzing

fn awkward_value(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..8) {
        0 => 0.0,
        1 => 0.1 + 0.2,
        2 => f64::MIN_POSITIVE * rng.random_range(0.0..1.0),
        3 => rng.random_range(0.0..1.0) * 1e300,
        4 => 1.0 / 3.0,
        _ => rng.random_range(0.0..20.0),
    }
}

fn random_grid(rng: &mut ChaCha8Rng) -> FluenceGrid {
    let (nx, ny) = (rng.random_range(1..=12), rng.random_range(2..=40));
    FluenceGrid::new(nx, ny, (0..nx * ny).map(|_| awkward_value(rng)).collect()).unwrap()
}

fn mutate_lines(text: &str, rng: &mut ChaCha8Rng, kind: usize, replacement: &str) -> String {
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let body = rng.random_range(1..lines.len());
    match kind {
        0 => lines[0] = lines[0].replacen(char::is_alphabetic, "Z", 1),
        1 => {
            lines.remove(body);
        }
        2 => lines[body].push_str(" 7"),
        3 => {
            let toks: Vec<&str> = lines[body].split_whitespace().collect();
            let i = rng.random_range(0..toks.len());
            let mut toks: Vec<String> = toks.into_iter().map(String::from).collect();
            toks[i] = replacement.to_string();
            lines[body] = toks.join(" ");
        }
        _ => lines.push(lines[lines.len() - 1].clone()),
    }
    lines.join("\n") + "\n"
}

fn criterion_10() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let max_mu = 2.5;
    let mut mismatches = 0usize;
    for i in 0..1000 {
        let grid = random_grid(&mut rng);
        let path = dir.path().join(format!("f{i}.txt"));
        write_fluence(&path, &grid).unwrap();
        let back = read_fluence(&path).unwrap();
        let same = back.shape() == grid.shape()
            && back.values().iter().zip(grid.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        mismatches += usize::from(!same);

        let shape = (rng.random_range(1..=8), rng.random_range(1..=40));
        let k = rng.random_range(1..=10);
        let mut plan = random_plan(&mut rng, k, shape);
        for st in &mut plan.states {
            st.mu = awkward_value(&mut rng).min(max_mu);
        }
        let path = dir.path().join(format!("p{i}.txt"));
        write_plan(&path, &plan).unwrap();
        let back = read_plan(&path, max_mu).unwrap();
        let same = back.grid_shape == plan.grid_shape
            && back.states.len() == plan.states.len()
            && back
                .states
                .iter()
                .zip(&plan.states)
                .all(|(a, b)| a.pairs == b.pairs && a.mu.to_bits() == b.mu.to_bits());
        mismatches += usize::from(!same);
    }

    let (mut rejected, mut crashed, mut total) = (0usize, 0usize, 0usize);
    let mut check = |outcome: std::thread::Result<bool>| {
        total += 1;
        match outcome {
            Ok(true) => rejected += 1,
            Ok(false) => {}
            Err(_) => crashed += 1,
        }
    };
    let is_parse = |e: &Error| matches!(e, Error::Parse { .. });
    for i in 0..100 {
        let text = rls_core::io::fluence_to_string(&random_grid(&mut rng));
        let bad = ["-1.5", "inf", "NaN", "1,5", "x"][rng.random_range(0..5)];
        let mutated = mutate_lines(&text, &mut rng, i % 5, bad);
        check(catch_unwind(|| parse_fluence(&mutated).err().is_some_and(|e| is_parse(&e))));

        let shape = (rng.random_range(1..=6), rng.random_range(1..=20));
        let k = rng.random_range(1..=6);
        let plan = random_plan(&mut rng, k, shape);
        let text = rls_core::io::plan_to_string(&plan);
        let bad = ["-1", "2.5.1", "99999", "b"][rng.random_range(0..4)];
        let mutated = mutate_lines(&text, &mut rng, i % 5, bad);
        check(catch_unwind(AssertUnwindSafe(|| {
            parse_plan(&mutated, max_mu).err().is_some_and(|e| is_parse(&e))
        })));
    }
    verdict(
        mismatches == 0 && rejected == total && crashed == 0,
        format!("2000 round trips, {mismatches} mismatches; {rejected}/{total} mutations rejected, {crashed} panics"),
    )
}

// ---------------------------------------------------------------------------

fn pass_word(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("reward oracle equivalence", criterion_1),
        ("gradient correctness", criterion_2),
        ("PPO invariants", criterion_3),
        ("environment invariants", criterion_4),
        ("learning signal", criterion_5),
        ("leaf-speed control", criterion_6),
        ("overdose-penalty ablation", criterion_7),
        ("ridge refinement", criterion_8),
        ("normalization algebra", criterion_9),
        ("file format fuzz", criterion_10),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let v = catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!("criterion {n:>2} {} {name}: {}", pass_word(v.pass), v.detail);
        if !v.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
