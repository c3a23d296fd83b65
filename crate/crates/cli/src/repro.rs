//! End-to-end pipeline on a synthetic grid: generate, train both models,
//! compress at several error bounds, query, measure entropy and benchmark
//! the store. Every step writes a CSV into the output directory.

use std::fmt::Write as _;
use std::fs;

use anyhow::{Context, Result};

use ontrac::query::{acceptable_positions, decompress, partial_decompress, where_compressed, where_full};
use ontrac::roadnet::{network_entropy, pagerank, RoadNetwork};
use ontrac::spatial::{empirical_block_entropy, spatial_training, SpatialModel};
use ontrac::store::{bench_ingest, query_bench, DecompressionStrategy, ModelFiles, Probe, Store, StoreMode};
use ontrac::synth::{generate, make_grid_network, GridLayout, SynthConfig, SynthMode, TravelTimeLaw};
use ontrac::trajmodel::{serialize_stream, split_train_test, Trajectory};
use ontrac::ttcomp::{compress_trajectory, temporal_compress_traced};
use ontrac::ttlearn::{estimate_delta, temporal_training, TrainingConfig, DEFAULT_DELTA};
use ontrac::ttqp::TravelTimeModel;

use crate::manifest::ManifestBuilder;
use crate::ReproArgs;

pub const LAMBDAS: [f64; 3] = [30.0, 60.0, 240.0];
const QUERY_LAMBDA: f64 = 60.0;
const PROBES_PER_TRAJECTORY: usize = 10;

struct Sizes {
    grid: usize,
    trajectories: usize,
    runs: usize,
}

/// `j`-th point of an additive golden-ratio sequence in `[0, 1)`.
fn unit(seed: u64, j: usize) -> f64 {
    let base = (seed % 1000) as f64 * 0.001_953_125;
    (base + (j + 1) as f64 * 0.618_033_988_749_894_8).fract()
}

pub fn run(a: &ReproArgs, argv: &[String]) -> Result<()> {
    let sizes = if a.quick {
        Sizes { grid: 8, trajectories: 300, runs: 3 }
    } else {
        Sizes { grid: 20, trajectories: 2000, runs: 3 }
    };
    let dir = &a.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let put = |name: &str, text: &str| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    let mut mb = ManifestBuilder::new("repro", argv);
    mb.seed(a.seed);

    let net = make_grid_network(sizes.grid, sizes.grid, 100.0, GridLayout::Bidirectional)?;
    let config = SynthConfig {
        mode: SynthMode::ShortestPath,
        n_trajectories: sizes.trajectories,
        alpha: 1.0,
        gps_interval: 30.0,
        seed: a.seed,
        law: TravelTimeLaw::SegmentGaussian { cv: 0.2 },
        ..SynthConfig::default()
    };
    let (stream, truth) = generate(&net, &config)?;
    put("network.txt", &net.to_text())?;
    put("stream.csv", &serialize_stream(&stream, &net))?;
    put("truth.csv", &truth.to_csv(&net))?;
    eprintln!("repro: {} trajectories, {} updates", truth.trajectories.len(), stream.update_count());

    let all = truth.emitted();
    let (train, test) = split_train_test(&all, 0.8, a.seed)?;
    let sp = spatial_training(&net, &train, 2)?;
    let delta = estimate_delta(&net, &train).unwrap_or(DEFAULT_DELTA);
    let tconf = TrainingConfig { workers: a.workers, ..TrainingConfig::default() };
    let (tt, report) = temporal_training(&net, &train, &tconf, 5.0, delta)?;
    put("spatial.txt", &sp.to_text(&net))?;
    put("tt.txt", &tt.to_text(&net))?;
    put("training.csv", &report.to_csv())?;

    let mut csv = String::from(
        "lambda,trajectories,updates,spatial_kept,observed,anchors,spatial_ratio,temporal_ratio,max_deviation,violations\n",
    );
    for lambda in LAMBDAS {
        let (mut updates, mut observed, mut spatial_kept, mut anchors, mut violations) = (0, 0, 0, 0, 0);
        let mut max_dev = 0.0f64;
        for t in &test {
            let comp = compress_trajectory(&sp, &tt, t, &net, lambda)?;
            let (_, trace) = temporal_compress_traced(&tt, t, &net, lambda)?;
            let full = decompress(&comp, &sp, &tt)?;
            for obs in &trace {
                let dev = (full.times[obs.position] - obs.t_star).abs();
                max_dev = max_dev.max(dev);
                violations += usize::from(dev > lambda);
            }
            updates += t.len();
            observed += t.observed_count();
            spatial_kept += comp.spatial.len();
            anchors += comp.temporal.kept.len();
        }
        writeln!(
            csv,
            "{lambda},{},{updates},{spatial_kept},{observed},{anchors},{},{},{max_dev},{violations}",
            test.len(),
            updates as f64 / spatial_kept as f64,
            observed as f64 / anchors as f64
        )?;
    }
    put("compression.csv", &csv)?;

    let (probes, window_mismatches, answer_mismatches) = check_queries(&test, &net, &sp, &tt, a.seed)?;
    put(
        "queries.csv",
        &format!("lambda,probes,window_mismatches,answer_mismatches\n{QUERY_LAMBDA},{probes},{window_mismatches},{answer_mismatches}\n"),
    )?;

    let pi = pagerank(&net, 0.85, 1e-12)?;
    let h_net = network_entropy(&net, &pi);
    let h_emp = empirical_block_entropy(&sp, &test, 2)?;
    put("entropy.csv", &format!("segments,damping,h_network,order,h_empirical\n{},0.85,{h_net},2,{h_emp}\n", net.len()))?;

    let files = ModelFiles { network: net.to_text(), spatial: sp.to_text(&net), tt: tt.to_text(&net) };
    let mut bench = String::new();
    let ing_full = bench_ingest(&dir.join("store_full"), &files, StoreMode::Full, None, &stream, sizes.runs)?;
    let ing_comp = bench_ingest(
        &dir.join("store_compressed"),
        &files,
        StoreMode::Compressed,
        Some(QUERY_LAMBDA),
        &stream,
        sizes.runs,
    )?;
    let store = Store::open(&dir.join("store_compressed"))?;
    let probes = store_probes(&store, a.seed);
    let q_full = query_bench(&store, &probes, DecompressionStrategy::FullReconstruct, sizes.runs);
    let q_part = query_bench(&store, &probes, DecompressionStrategy::Partial, sizes.runs);
    for (i, r) in [ing_full, ing_comp, q_full, q_part].iter().enumerate() {
        let text = r.to_csv();
        bench.push_str(if i == 0 { &text } else { text.lines().nth(1).unwrap_or_default() });
        if i > 0 {
            bench.push('\n');
        }
    }
    put("bench.csv", &bench)?;
    eprintln!("repro: wrote results to {}", dir.display());
    mb.write_beside(dir)
}

/// Probes each trajectory at several times; returns the probe count and the
/// number of partial windows and answers that disagree with full decompression.
fn check_queries(
    test: &[Trajectory],
    net: &RoadNetwork,
    sp: &SpatialModel,
    tt: &TravelTimeModel,
    seed: u64,
) -> Result<(usize, usize, usize)> {
    let (mut probes, mut window_bad, mut answer_bad) = (0, 0, 0);
    for traj in test {
        let comp = compress_trajectory(sp, tt, traj, net, QUERY_LAMBDA)?;
        let full = decompress(&comp, sp, tt)?;
        let (start, end) = (full.start_time(), full.end_time());
        for _ in 0..PROBES_PER_TRAJECTORY {
            let t = start + (end - start) * unit(seed, probes);
            probes += 1;
            let part = partial_decompress(&comp, sp, tt, t)?;
            let range = part.first_position..part.first_position + part.segments.len();
            if full.segments.get(range.clone()) != Some(&part.segments[..]) || full.times[range] != part.times[..] {
                window_bad += 1;
            }
            let got = where_compressed(&comp, sp, tt, t)?;
            let oracle = where_full(&full, t)?;
            let ok = acceptable_positions(&full.times, t, QUERY_LAMBDA).contains(&got.position)
                && got.segment == full.segments[got.position]
                && got.position == oracle.position;
            answer_bad += usize::from(!ok);
        }
    }
    Ok((probes, window_bad, answer_bad))
}

fn store_probes(store: &Store, seed: u64) -> Vec<Probe> {
    let mut out = Vec::new();
    let mut j = 0;
    for object in store.objects() {
        for trip in store.trips(object) {
            for _ in 0..PROBES_PER_TRAJECTORY {
                let t = trip.start_time + (trip.end_time - trip.start_time) * unit(seed, j);
                j += 1;
                out.push(Probe { object: object.clone(), t, accept: None });
            }
        }
    }
    out
}
