use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use ontrac::query::{decompress, QueryError};
use ontrac::roadnet::{load_network, network_entropy, pagerank, NetworkError, RoadNetwork};
use ontrac::spatial::{empirical_block_entropy, spatial_training, SpatialError, SpatialModel};
use ontrac::store::{
    bench_ingest, query_bench, BenchReport, DecompressionStrategy, ModelFiles, Models, Probe, Store, StoreError,
    StoreMode,
};
use ontrac::synth::{generate, make_grid_network, GridLayout, SynthConfig, SynthError, SynthMode, TravelTimeLaw};
use ontrac::trajmodel::{group_by_object, parse_stream, serialize_stream, ObjectId, StreamError, TrajectoryStream};
use ontrac::ttcomp::{compress_trajectory, read_compressed, write_compressed, TemporalError};
use ontrac::ttlearn::{estimate_delta, temporal_training, TrainError, TrainingConfig, DEFAULT_DELTA};
use ontrac::ttqp::{infer_travel_times, TravelTimeModel, TtError};

use crate::manifest::{read_input, ManifestBuilder};
use crate::{
    BenchCommand, Command, CompressArgs, DecompressArgs, EntropyArgs, Format, InferArgs, LayoutArg, ModeArg,
    ModelArgs, StoreModeArg, StrategyArg, SynthArgs, TrainSpatialArgs, TrainTemporalArgs, WhereArgs,
};

/// Module an error came from, for the `error[...]` prefix.
pub fn error_tag(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        let tag = if cause.is::<NetworkError>() {
            "roadnet"
        } else if cause.is::<StreamError>() {
            "trajmodel"
        } else if cause.is::<SpatialError>() {
            "spatial"
        } else if cause.is::<TtError>() {
            "ttqp"
        } else if cause.is::<TrainError>() {
            "ttlearn"
        } else if cause.is::<TemporalError>() {
            "ttcomp"
        } else if cause.is::<QueryError>() {
            "query"
        } else if cause.is::<SynthError>() {
            "synth"
        } else if cause.is::<StoreError>() {
            "store"
        } else if cause.is::<std::io::Error>() {
            "io"
        } else {
            continue;
        };
        return tag;
    }
    "cli"
}

pub fn run(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, argv),
        Command::TrainSpatial(a) => train_spatial(a, argv),
        Command::TrainTemporal(a) => train_temporal(a, argv),
        Command::Compress(a) => compress(a, argv),
        Command::Decompress(a) => decompress_cmd(a, argv),
        Command::Infer(a) => infer(a, argv),
        Command::Where(a) => where_cmd(a),
        Command::Entropy(a) => entropy(a),
        Command::Bench(BenchCommand::Ingest(a)) => {
            let mut mb = ManifestBuilder::new("bench ingest", argv);
            let files = read_models(&mut mb, &a.models)?;
            let net = Models::parse(&files)?.net;
            let stream = parse_stream(&read_input(&mut mb, &a.stream)?, &net)?;
            let mode = store_mode(a.mode);
            let lambda = (mode == StoreMode::Compressed).then_some(a.lambda);
            let report = bench_ingest(&a.store, &files, mode, lambda, &stream, a.runs)?;
            print!("{}", render_bench(&report, a.format)?);
            mb.write_beside(&a.store)
        }
        Command::Bench(BenchCommand::Query(a)) => {
            let store = Store::open(&a.store)?;
            let text = fs::read_to_string(&a.probes).with_context(|| format!("reading {}", a.probes.display()))?;
            let probes = parse_probes(&text)?;
            let report = query_bench(&store, &probes, strategy(a.strategy), a.runs);
            print!("{}", render_bench(&report, a.format)?);
            Ok(())
        }
        Command::Repro(a) => crate::repro::run(&a, argv),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn read_network(mb: &mut ManifestBuilder, path: &std::path::PathBuf) -> Result<RoadNetwork> {
    Ok(load_network(&read_input(mb, path)?).with_context(|| format!("network {}", path.display()))?)
}

fn read_models(mb: &mut ManifestBuilder, m: &ModelArgs) -> Result<ModelFiles> {
    Ok(ModelFiles {
        network: read_input(mb, &m.network)?,
        spatial: read_input(mb, &m.spatial_model)?,
        tt: read_input(mb, &m.tt_model)?,
    })
}

fn store_mode(m: StoreModeArg) -> StoreMode {
    match m {
        StoreModeArg::Full => StoreMode::Full,
        StoreModeArg::Compressed => StoreMode::Compressed,
    }
}

fn strategy(s: StrategyArg) -> DecompressionStrategy {
    match s {
        StrategyArg::Partial => DecompressionStrategy::Partial,
        StrategyArg::FullReconstruct => DecompressionStrategy::FullReconstruct,
    }
}

pub fn render_bench(report: &BenchReport, format: Format) -> Result<String> {
    Ok(match format {
        Format::Csv => report.to_csv(),
        Format::Json => serde_json::to_string_pretty(report)? + "\n",
    })
}

/// Parses `object,t[,accept]` lines; `accept` is `;`-separated positions or
/// `-` for a probe expected to fail.
pub fn parse_probes(text: &str) -> Result<Vec<Probe>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 3 {
            bail!("probes line {}: expected `object,t[,accept]`", idx + 1);
        }
        let Ok(t) = fields[1].parse::<f64>() else {
            if idx == 0 {
                continue;
            }
            bail!("probes line {}: bad time `{}`", idx + 1, fields[1]);
        };
        let accept = match fields.get(2) {
            None | Some(&"") => None,
            Some(&"-") => Some(Vec::new()),
            Some(list) => Some(
                list.split(';')
                    .map(|p| p.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| anyhow!("probes line {}: {e}", idx + 1))?,
            ),
        };
        out.push(Probe { object: ObjectId::new(fields[0]), t, accept });
    }
    Ok(out)
}

fn synth(a: SynthArgs, argv: &[String]) -> Result<()> {
    let mut mb = ManifestBuilder::new("synth", argv);
    mb.seed(a.seed);
    let (net, generated) = match &a.network {
        Some(p) => (read_network(&mut mb, p)?, false),
        None => {
            let layout = match a.layout {
                LayoutArg::Undirected => GridLayout::Undirected,
                LayoutArg::Bidirectional => GridLayout::Bidirectional,
            };
            (make_grid_network(a.rows, a.cols, a.segment_length, layout)?, true)
        }
    };
    let config = SynthConfig {
        mode: match a.mode {
            ModeArg::Walk => SynthMode::RandomWalk,
            ModeArg::Sp => SynthMode::ShortestPath,
        },
        n_trajectories: a.n,
        walk_length: a.walk_length,
        speed_mean: a.speed_mean,
        speed_std: a.speed_std,
        alpha: a.alpha,
        gps_interval: a.gps_interval,
        seed: a.seed,
        law: a.segment_cv.map_or(TravelTimeLaw::Speed, |cv| TravelTimeLaw::SegmentGaussian { cv }),
        start_window: a.start_window,
    };
    let (stream, truth) = generate(&net, &config)?;
    write(&a.out, &serialize_stream(&stream, &net))?;
    if let Some(p) = &a.truth {
        write(p, &truth.to_csv(&net))?;
    }
    if generated {
        let p = a.network_out.clone().unwrap_or_else(|| a.out.with_extension("net"));
        write(&p, &net.to_text())?;
    }
    eprintln!("synth: {} trajectories, {} updates", truth.trajectories.len(), stream.update_count());
    mb.write_beside(&a.out)
}

fn train_spatial(a: TrainSpatialArgs, argv: &[String]) -> Result<()> {
    let mut mb = ManifestBuilder::new("train-spatial", argv);
    let net = read_network(&mut mb, &a.network)?;
    let stream = parse_stream(&read_input(&mut mb, &a.stream)?, &net)?;
    let model = spatial_training(&net, &group_by_object(&stream), a.order)?;
    write(&a.out, &model.to_text(&net))?;
    eprintln!("train-spatial: order {}, {} trie nodes", model.order(), model.node_count());
    mb.write_beside(&a.out)
}

fn train_temporal(a: TrainTemporalArgs, argv: &[String]) -> Result<()> {
    let mut mb = ManifestBuilder::new("train-temporal", argv);
    let net = read_network(&mut mb, &a.network)?;
    let stream = parse_stream(&read_input(&mut mb, &a.stream)?, &net)?;
    let trajs = group_by_object(&stream);
    let delta = a.delta.or_else(|| estimate_delta(&net, &trajs)).unwrap_or(DEFAULT_DELTA);
    let config = TrainingConfig { iterations: a.iters, workers: a.workers, ..TrainingConfig::default() };
    let (model, report) = temporal_training(&net, &trajs, &config, a.sigma_star, delta)?;
    write(&a.out, &model.to_text(&net))?;
    let text = match a.format {
        Format::Csv => report.to_csv(),
        Format::Json => {
            serde_json::to_string_pretty(&json!({
                "delta": delta,
                "log_likelihood": report.log_likelihood,
                "seconds": report.seconds,
                "segments_with_data": report.segments_with_data,
                "segments_defaulted": report.segments_defaulted,
                "skipped": report.skipped,
                "trajectories_used": report.trajectories_used,
            }))? + "\n"
        }
    };
    emit(a.report.as_deref(), &text)?;
    mb.write_beside(&a.out)
}

fn load_models(mb: &mut ManifestBuilder, m: &ModelArgs) -> Result<(RoadNetwork, SpatialModel, TravelTimeModel)> {
    let files = read_models(mb, m)?;
    let models = Models::parse(&files)?;
    Ok((models.net, models.spatial, models.tt))
}

fn compress(a: CompressArgs, argv: &[String]) -> Result<()> {
    let mut mb = ManifestBuilder::new("compress", argv);
    let (net, sp, tt) = load_models(&mut mb, &a.models)?;
    let stream = parse_stream(&read_input(&mut mb, &a.stream)?, &net)?;
    let trajs = group_by_object(&stream);
    let mut comps = Vec::with_capacity(trajs.len());
    for t in &trajs {
        comps.push(compress_trajectory(&sp, &tt, t, &net, a.lambda).with_context(|| format!("object {}", t.object))?);
    }
    write(&a.out, &write_compressed(&comps, &net, a.lambda))?;
    let updates: usize = trajs.iter().map(|t| t.len()).sum();
    let observed: usize = trajs.iter().map(|t| t.observed_count()).sum();
    let spatial: usize = comps.iter().map(|c| c.spatial.len()).sum();
    let temporal: usize = comps.iter().map(|c| c.temporal.kept.len()).sum();
    eprintln!(
        "compress: {updates} updates -> {spatial} spatial ({:.3}x), {observed} timestamps -> {temporal} anchors ({:.3}x)",
        updates as f64 / spatial.max(1) as f64,
        observed as f64 / temporal.max(1) as f64
    );
    mb.write_beside(&a.out)
}

fn decompress_cmd(a: DecompressArgs, argv: &[String]) -> Result<()> {
    let mut mb = ManifestBuilder::new("decompress", argv);
    let (net, sp, tt) = load_models(&mut mb, &a.models)?;
    let comps = read_compressed(&read_input(&mut mb, &a.compressed)?, &net, &sp)?;
    let mut trajs = Vec::with_capacity(comps.len());
    for c in &comps {
        trajs.push(decompress(c, &sp, &tt).with_context(|| format!("object {}", c.object))?.to_trajectory());
    }
    write(&a.out, &serialize_stream(&TrajectoryStream::from_trajectories(&trajs), &net))?;
    mb.write_beside(&a.out)
}

fn infer(a: InferArgs, argv: &[String]) -> Result<()> {
    let mut mb = ManifestBuilder::new("infer", argv);
    let net = read_network(&mut mb, &a.network)?;
    let tt = TravelTimeModel::from_text(&read_input(&mut mb, &a.tt_model)?, &net)?;
    let stream = parse_stream(&read_input(&mut mb, &a.stream)?, &net)?;
    let mut rows = Vec::new();
    for t in group_by_object(&stream) {
        let inf = infer_travel_times(&tt, &t, &net).with_context(|| format!("object {}", t.object))?;
        let exits = inf.exit_times();
        for (i, tp) in inf.t_prime.iter().enumerate() {
            let pos = inf.first_position + i;
            rows.push((t.object.clone(), pos, net.name(t.points[pos].segment).to_string(), *tp, exits[pos]));
        }
    }
    let text = match a.format {
        Format::Csv => {
            let mut s = String::from("object,position,segment,travel_time,exit_time\n");
            for (o, p, seg, tp, e) in &rows {
                s.push_str(&format!("{o},{p},{seg},{tp},{e}\n"));
            }
            s
        }
        Format::Json => {
            let v: Vec<_> = rows
                .iter()
                .map(|(o, p, seg, tp, e)| {
                    json!({"object": o.as_str(), "position": p, "segment": seg, "travel_time": tp, "exit_time": e})
                })
                .collect();
            serde_json::to_string_pretty(&v)? + "\n"
        }
    };
    emit(a.out.as_deref(), &text)?;
    match &a.out {
        Some(p) => mb.write_beside(p),
        None => Ok(()),
    }
}

fn where_cmd(a: WhereArgs) -> Result<()> {
    let store = Store::open(&a.store)?;
    let net = &store.models().net;
    let strategy = strategy(a.strategy);
    let probes = match (&a.probes, &a.object, a.time) {
        (Some(p), _, _) => {
            parse_probes(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?
        }
        (None, Some(o), Some(t)) => {
            let r = store.where_query(&ObjectId::new(o.as_str()), t, strategy)?;
            let text = match a.format {
                Format::Csv => format!("segment,recovered_time\n{},{}\n", net.name(r.segment), r.recovered_time),
                Format::Json => {
                    serde_json::to_string_pretty(&json!({
                        "object": o,
                        "t": t,
                        "segment": net.name(r.segment),
                        "position": r.position,
                        "entered": r.entered,
                        "recovered_time": r.recovered_time,
                    }))? + "\n"
                }
            };
            print!("{text}");
            return Ok(());
        }
        _ => bail!("need --object and --time, or --probes"),
    };
    let mut csv = String::from("object,t,segment,position,recovered_time,error\n");
    let mut rows = Vec::new();
    for p in &probes {
        match store.where_query(&p.object, p.t, strategy) {
            Ok(r) => {
                csv.push_str(&format!(
                    "{},{},{},{},{},\n",
                    p.object,
                    p.t,
                    net.name(r.segment),
                    r.position,
                    r.recovered_time
                ));
                rows.push(json!({"object": p.object.as_str(), "t": p.t, "segment": net.name(r.segment),
                    "position": r.position, "recovered_time": r.recovered_time}));
            }
            Err(e) => {
                csv.push_str(&format!("{},{},,,,{}\n", p.object, p.t, e.to_string().replace(',', ";")));
                rows.push(json!({"object": p.object.as_str(), "t": p.t, "error": e.to_string()}));
            }
        }
    }
    match a.format {
        Format::Csv => print!("{csv}"),
        Format::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
    }
    Ok(())
}

fn entropy(a: EntropyArgs) -> Result<()> {
    let text = fs::read_to_string(&a.network).with_context(|| format!("reading {}", a.network.display()))?;
    let net = load_network(&text)?;
    let pi = pagerank(&net, a.damping, a.tol)?;
    let h = network_entropy(&net, &pi);
    let pi_min = pi.pi.iter().copied().fold(f64::INFINITY, f64::min);
    let pi_max = pi.pi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let empirical = match (&a.spatial_model, &a.stream) {
        (Some(m), Some(s)) => {
            let model = SpatialModel::from_text(
                &fs::read_to_string(m).with_context(|| format!("reading {}", m.display()))?,
                &net,
            )?;
            let stream =
                parse_stream(&fs::read_to_string(s).with_context(|| format!("reading {}", s.display()))?, &net)?;
            Some((model.order(), empirical_block_entropy(&model, &group_by_object(&stream), model.order())?))
        }
        _ => None,
    };
    match a.format {
        Format::Csv => {
            let mut head = String::from("segments,damping,iterations,residual,pi_min,pi_max,h_network");
            let mut row = format!(
                "{},{},{},{:e},{},{},{}",
                net.len(),
                a.damping,
                pi.iterations,
                pi.residual,
                pi_min,
                pi_max,
                h
            );
            if let Some((k, hk)) = empirical {
                head.push_str(",order,h_empirical");
                row.push_str(&format!(",{k},{hk}"));
            }
            println!("{head}\n{row}");
        }
        Format::Json => {
            let mut v = json!({
                "segments": net.len(),
                "damping": a.damping,
                "iterations": pi.iterations,
                "residual": pi.residual,
                "pi_min": pi_min,
                "pi_max": pi_max,
                "h_network": h,
            });
            if let Some((k, hk)) = empirical {
                v["order"] = json!(k);
                v["h_empirical"] = json!(hk);
            }
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
    }
    Ok(())
}
