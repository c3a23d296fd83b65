//! Property tests against independent test-side oracles.

use proptest::prelude::*;

use ontrac::query::{decompress, partial_decompress, where_compressed};
use ontrac::roadnet::{load_network, pagerank, RoadNetwork, SegmentId};
use ontrac::spatial::{empirical_block_entropy, spatial_compress, spatial_decompress, spatial_training};
use ontrac::synth::{
    destination_ranking, destination_weights, generate, make_grid_network, GridLayout, SynthConfig, SynthMode,
};
use ontrac::trajmodel::{ObjectId, TrajPoint, Trajectory};
use ontrac::ttcomp::{compress_trajectory, temporal_compress_traced};
use ontrac::ttqp::{build_qp, solve_qp, GpsBlock, TravelTimeModel};

// ---------------------------------------------------------------------------
// Oracles

/// Negative log-likelihood of travel times `x`, dropping constants: segment
/// Gaussians, Gaussian speed-change smoothness and block sums.
fn neg_log_likelihood(model: &TravelTimeModel, blocks: &[GpsBlock], lengths: &[f64], x: &[f64]) -> f64 {
    let segs: Vec<SegmentId> = blocks.iter().flat_map(|b| b.segments.clone()).collect();
    let mut f = 0.0;
    for (k, s) in segs.iter().enumerate() {
        let (phi, om) = (model.phi[s.index()], model.omega[s.index()]);
        f += (x[k] - phi).powi(2) / (2.0 * om * om);
        if k > 0 {
            let dr = x[k] / lengths[s.index()] - x[k - 1] / lengths[segs[k - 1].index()];
            f += dr * dr / (2.0 * model.delta * model.delta);
        }
    }
    let mut k = 0;
    for b in blocks {
        let total: f64 = x[k..k + b.segments.len()].iter().sum();
        f += (total - b.observed_gap).powi(2) / (2.0 * b.sigma_j * b.sigma_j);
        k += b.segments.len();
    }
    f
}

/// Minimizes a convex function over the nonnegative orthant in at most three
/// dimensions by repeated grid refinement.
fn grid_minimize(f: impl Fn(&[f64]) -> f64, n: usize, bound: f64) -> Vec<f64> {
    let steps = 20;
    let mut lo = vec![0.0; n];
    let mut hi = vec![bound; n];
    let mut best = vec![0.0; n];
    for _ in 0..80 {
        let mut best_val = f64::INFINITY;
        let total = (steps + 1usize).pow(n as u32);
        for idx in 0..total {
            let mut rem = idx;
            let x: Vec<f64> = (0..n)
                .map(|d| {
                    let i = rem % (steps + 1);
                    rem /= steps + 1;
                    lo[d] + (hi[d] - lo[d]) * i as f64 / steps as f64
                })
                .collect();
            let v = f(&x);
            if v < best_val {
                best_val = v;
                best = x;
            }
        }
        for d in 0..n {
            let half = (hi[d] - lo[d]) / 4.0;
            lo[d] = (best[d] - half).max(0.0);
            hi[d] = best[d] + half;
        }
    }
    best
}

/// Stationary distribution of the damped random surfer by dense Gaussian
/// elimination on `(I - d P^T) pi = (1 - d)/n`, dangling rows uniform.
fn dense_pagerank(net: &RoadNetwork, d: f64) -> Vec<f64> {
    let n = net.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
        row[n] = (1.0 - d) / n as f64;
    }
    for s in net.segment_ids() {
        let succ = net.successors(s);
        if succ.is_empty() {
            for row in a.iter_mut() {
                row[s.index()] -= d / n as f64;
            }
        } else {
            for t in succ {
                a[t.index()][s.index()] -= d / succ.len() as f64;
            }
        }
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let x: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
    let s: f64 = x.iter().sum();
    x.iter().map(|v| v / s).collect()
}

// ---------------------------------------------------------------------------
// Generators

#[derive(Debug, Clone)]
struct QpCase {
    model: TravelTimeModel,
    lengths: Vec<f64>,
    blocks: Vec<GpsBlock>,
}

const SEGMENTS: usize = 6;

fn qp_case(max_vars: usize) -> impl Strategy<Value = QpCase> {
    (
        prop::collection::vec((1.0f64..60.0, 0.5f64..20.0, 20.0f64..500.0), SEGMENTS),
        0.005f64..1.0,
        prop::collection::vec(
            (prop::collection::vec(0..SEGMENTS as u32, 1..=3), 1.0f64..300.0, 0.5f64..30.0),
            1..=3,
        ),
    )
        .prop_map(move |(segs, delta, raw_blocks)| {
            let phi = segs.iter().map(|s| s.0).collect();
            let omega = segs.iter().map(|s| s.1).collect();
            let lengths = segs.iter().map(|s| s.2).collect();
            let mut blocks = Vec::new();
            let mut used = 0;
            for (ids, gap, sigma) in raw_blocks {
                let take = ids.len().min(max_vars - used);
                if take == 0 {
                    break;
                }
                used += take;
                blocks.push(GpsBlock {
                    segments: ids[..take].iter().map(|&i| SegmentId(i)).collect(),
                    observed_gap: gap,
                    sigma_j: sigma,
                });
            }
            QpCase { model: TravelTimeModel::new(phi, omega, delta, 5.0).unwrap(), lengths, blocks }
        })
}

fn grid_trajectories(seed: u64, mode: SynthMode, n: usize) -> (RoadNetwork, Vec<Trajectory>) {
    let net = make_grid_network(5, 5, 100.0, GridLayout::Bidirectional).unwrap();
    let config = SynthConfig { mode, n_trajectories: n, walk_length: 40, seed, gps_interval: 20.0, ..Default::default() };
    let (_, truth) = generate(&net, &config).unwrap();
    (net, truth.emitted())
}

// ---------------------------------------------------------------------------
// Properties

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qp_objective_is_neg_log_likelihood_plus_constant(
        case in qp_case(8),
        points in prop::collection::vec(prop::collection::vec(0.0f64..200.0, 8), 2..6),
    ) {
        let qp = build_qp(&case.model, &case.blocks, &case.lengths).unwrap();
        let n = qp.dim();
        let offsets: Vec<f64> = points
            .iter()
            .map(|p| qp.objective(&p[..n]) - neg_log_likelihood(&case.model, &case.blocks, &case.lengths, &p[..n]))
            .collect();
        for o in &offsets {
            prop_assert!((o - offsets[0]).abs() <= 1e-8 * (1.0 + offsets[0].abs()), "{offsets:?}");
        }
        prop_assert!(qp.q.cholesky().is_some());
        prop_assert!(qp.q.max_asymmetry() == 0.0);
    }

    #[test]
    fn solver_matches_grid_oracle(case in qp_case(3)) {
        let qp = build_qp(&case.model, &case.blocks, &case.lengths).unwrap();
        let sol = solve_qp(&qp, 1e-10, 100_000).unwrap();
        prop_assert!(sol.kkt_residual <= 1e-6);
        let bound = 2.0 * sol.x.iter().fold(1.0f64, |m, v| m.max(*v)) + 100.0;
        let oracle = grid_minimize(|x| qp.objective(x), qp.dim(), bound);
        for (a, b) in sol.x.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-3, "solver {:?} oracle {oracle:?}", sol.x);
        }
    }

    #[test]
    fn solution_beats_the_model_mean(case in qp_case(8)) {
        let qp = build_qp(&case.model, &case.blocks, &case.lengths).unwrap();
        let sol = solve_qp(&qp, 1e-10, 100_000).unwrap();
        let phi_point: Vec<f64> = qp.variable_map.iter().map(|v| case.model.phi[v.segment.index()]).collect();
        prop_assert!(sol.objective <= qp.objective(&phi_point) + 1e-9 * (1.0 + sol.objective.abs()));
        prop_assert!(sol.x.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn solution_scales_with_time_unit(case in qp_case(8), scale in 0.1f64..10.0) {
        let base = solve_qp(&build_qp(&case.model, &case.blocks, &case.lengths).unwrap(), 1e-12, 100_000).unwrap();
        let m = &case.model;
        let scaled_model = TravelTimeModel::new(
            m.phi.iter().map(|v| v * scale).collect(),
            m.omega.iter().map(|v| v * scale).collect(),
            m.delta * scale,
            m.sigma_star,
        ).unwrap();
        let scaled_blocks: Vec<GpsBlock> = case.blocks.iter().map(|b| GpsBlock {
            segments: b.segments.clone(),
            observed_gap: b.observed_gap * scale,
            sigma_j: b.sigma_j * scale,
        }).collect();
        let sol = solve_qp(&build_qp(&scaled_model, &scaled_blocks, &case.lengths).unwrap(), 1e-12, 100_000).unwrap();
        for (a, b) in sol.x.iter().zip(&base.x) {
            prop_assert!((a - b * scale).abs() <= 1e-6 * (1.0 + (b * scale).abs()), "{:?} vs {:?}", sol.x, base.x);
        }
    }

    #[test]
    fn pagerank_matches_dense_solve(
        edges in prop::collection::vec(prop::collection::btree_set(0usize..7, 0..4), 7),
        damping in 0.5f64..0.95,
    ) {
        let text: String = edges
            .iter()
            .enumerate()
            .map(|(i, succ)| {
                let s: Vec<String> = succ.iter().map(|j| format!("n{j}")).collect();
                format!("n{i},1,{}\n", s.join(";"))
            })
            .collect();
        let net = load_network(&text).unwrap();
        let pr = pagerank(&net, damping, 1e-13).unwrap();
        let oracle = dense_pagerank(&net, damping);
        for (a, b) in pr.pi.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-9, "{:?} vs {oracle:?}", pr.pi);
        }
    }

    #[test]
    fn spatial_roundtrip_and_accounting(seed in any::<u64>(), walk in any::<bool>(), k in 1usize..4) {
        let mode = if walk { SynthMode::RandomWalk } else { SynthMode::ShortestPath };
        let (net, trajs) = grid_trajectories(seed, mode, 40);
        let (train, test) = trajs.split_at(25);
        let model = spatial_training(&net, train, k).unwrap();
        let (mut suppressed, mut predictable) = (0usize, 0usize);
        for t in test {
            let comp = spatial_compress(&model, t).unwrap();
            prop_assert_eq!(spatial_decompress(&model, &comp, t.len()).unwrap(), t.segments());
            prop_assert_eq!(comp.kept[0].0, 0);
            prop_assert!(comp.kept.windows(2).all(|w| w[0].0 < w[1].0));
            suppressed += t.len() - comp.kept.len();
            predictable += t.len() - 1;
        }
        if predictable > 0 {
            let h = empirical_block_entropy(&model, test, k).unwrap();
            prop_assert!((1.0 - h - suppressed as f64 / predictable as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_recovery_stays_within_lambda(seed in any::<u64>(), lambda in 1.0f64..300.0) {
        let (net, trajs) = grid_trajectories(seed, SynthMode::ShortestPath, 30);
        let (train, test) = trajs.split_at(20);
        let sp = spatial_training(&net, train, 2).unwrap();
        let tt = TravelTimeModel::from_speed(&net, 12.0, 0.3, 0.05, 5.0).unwrap();
        for t in test {
            let comp = compress_trajectory(&sp, &tt, t, &net, lambda).unwrap();
            let (_, trace) = temporal_compress_traced(&tt, t, &net, lambda).unwrap();
            let full = decompress(&comp, &sp, &tt).unwrap();
            prop_assert!(full.times.windows(2).all(|w| w[0] <= w[1]));
            for obs in &trace {
                prop_assert!((full.times[obs.position] - obs.t_star).abs() <= lambda);
            }
            for a in &comp.temporal.kept {
                prop_assert_eq!(full.times[a.position], a.t);
            }
        }
    }

    #[test]
    fn partial_decompression_is_a_window(seed in any::<u64>(), fracs in prop::collection::vec(0.0f64..=1.0, 5)) {
        let (net, trajs) = grid_trajectories(seed, SynthMode::RandomWalk, 20);
        let (train, test) = trajs.split_at(12);
        let sp = spatial_training(&net, train, 2).unwrap();
        let tt = TravelTimeModel::from_speed(&net, 12.0, 0.3, 0.05, 5.0).unwrap();
        for t in test {
            let comp = compress_trajectory(&sp, &tt, t, &net, 30.0).unwrap();
            let full = decompress(&comp, &sp, &tt).unwrap();
            for f in &fracs {
                let q = full.start_time() + f * (full.end_time() - full.start_time());
                let part = partial_decompress(&comp, &sp, &tt, q).unwrap();
                let r = part.first_position..part.first_position + part.segments.len();
                prop_assert_eq!(&full.segments[r.clone()], &part.segments[..]);
                prop_assert_eq!(&full.times[r], &part.times[..]);
                let w = where_compressed(&comp, &sp, &tt, q).unwrap();
                let i = full.times.partition_point(|x| *x < q);
                prop_assert_eq!(w.position, i);
            }
        }
    }
}

#[test]
fn destination_frequencies_follow_rank_weights() {
    let net = make_grid_network(3, 3, 100.0, GridLayout::Bidirectional).unwrap();
    let n_traj = 20_000;
    let alpha = 0.5;
    let config = SynthConfig { n_trajectories: n_traj, alpha, seed: 11, ..Default::default() };
    let (_, truth) = generate(&net, &config).unwrap();
    let ranking = destination_ranking(&net, 11);
    let weights = destination_weights(net.len(), alpha);
    let mut counts = vec![0usize; net.len()];
    for t in &truth.trajectories {
        let dest = *t.segments.last().unwrap();
        counts[ranking.iter().position(|s| *s == dest).unwrap()] += 1;
    }
    // Start and destination are resampled when equal; with a uniform start
    // that leaves the destination law unchanged.
    for (rank, (&c, &w)) in counts.iter().zip(&weights).enumerate().take(6) {
        let expected = w * n_traj as f64;
        let sd = (n_traj as f64 * w * (1.0 - w)).sqrt();
        assert!((c as f64 - expected).abs() < 5.0 * sd + 1.0, "rank {rank}: {c} vs {expected:.1}");
    }
}

#[test]
fn walk_steps_are_uniform_over_successors() {
    let net = make_grid_network(3, 3, 100.0, GridLayout::Bidirectional).unwrap();
    let config = SynthConfig { mode: SynthMode::RandomWalk, n_trajectories: 400, walk_length: 60, seed: 5, ..Default::default() };
    let (_, truth) = generate(&net, &config).unwrap();
    let start = SegmentId(0);
    let succ = net.successors(start);
    let mut counts = vec![0usize; succ.len()];
    for t in &truth.trajectories {
        for w in t.segments.windows(2) {
            prop_assert_edge(&net, w[0], w[1]);
            if w[0] == start {
                counts[succ.iter().position(|s| *s == w[1]).unwrap()] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    let p = 1.0 / succ.len() as f64;
    for c in counts {
        let sd = (total as f64 * p * (1.0 - p)).sqrt();
        assert!((c as f64 - total as f64 * p).abs() < 5.0 * sd + 1.0);
    }
}

fn prop_assert_edge(net: &RoadNetwork, a: SegmentId, b: SegmentId) {
    assert!(net.has_edge(a, b), "{} -> {} is not an edge", net.name(a), net.name(b));
}

#[test]
fn single_point_trajectory_compresses_to_its_start() {
    let net = make_grid_network(2, 2, 100.0, GridLayout::Bidirectional).unwrap();
    let t = Trajectory::new(ObjectId::new("solo"), vec![TrajPoint::new(SegmentId(3), Some(42.0))]);
    let sp = spatial_training(&net, std::slice::from_ref(&t), 2).unwrap();
    let tt = TravelTimeModel::from_speed(&net, 10.0, 0.5, 0.05, 5.0).unwrap();
    let comp = compress_trajectory(&sp, &tt, &t, &net, 10.0).unwrap();
    assert_eq!(comp.spatial, vec![(0, SegmentId(3))]);
    let full = decompress(&comp, &sp, &tt).unwrap();
    assert_eq!(full.times, vec![42.0]);
}
