use std::fs;
use std::path::Path;

use netrca::detect::{scan, AnomalyEvent};
use netrca::eval::{plot_data, run_benchmark, run_sweep};
use netrca::invariant::{fccg_cluster, InvariantGraph};
use netrca::panel::{
    impute_missing, load_panel, preprocess, preprocess_with, save_panel, ChannelStats, PreprocessConfig,
    TimeSeriesPanel,
};
use netrca::rca::{ig_rank, lbp_ig_rank, tcorca_analyze, threshold_rank, Method};
use netrca::synth::{generate_scenario, ScenarioSpec};
use netrca::{RcaError, FORMAT_VERSION};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

/// Everything `detect` and `rca` need from a fit: the graph plus the
/// preprocessing that produced its inputs.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub preprocess: PreprocessConfig,
    pub stats: ChannelStats,
    pub graph: InvariantGraph,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::missing(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn read_panel(path: &Path) -> Result<TimeSeriesPanel, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::missing(path, e))?;
    Ok(load_panel(std::io::BufReader::new(file))?)
}

fn read_model(path: &Path) -> Result<ModelFile, CliError> {
    let model: ModelFile = serde_json::from_str(&read_text(path)?).map_err(RcaError::from)?;
    if model.format_version != FORMAT_VERSION {
        return Err(RcaError::UnsupportedVersion { found: model.format_version, expected: FORMAT_VERSION }.into());
    }
    Ok(model)
}

fn read_spec(path: &Path) -> Result<ScenarioSpec, CliError> {
    let text = read_text(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| RcaError::InvalidSpec(format!("{}: {e}", path.display())).into())
}

pub fn synth(config: &RunConfig, seed_override: Option<u64>) -> Result<(), CliError> {
    let spec = match &config.paths.spec {
        Some(path) => {
            let mut spec = read_spec(path)?;
            if let Some(seed) = seed_override {
                spec.seed = seed;
            }
            spec
        }
        None => {
            let s = &config.synth;
            ScenarioSpec::random(s.channels, s.length, s.n_anomalies, &s.topology, config.seed)?
        }
    };
    let (panel, truth) = generate_scenario(&spec)?;

    let out = &config.paths.out_dir;
    let mut csv = Vec::new();
    save_panel(&panel, &mut csv)?;
    write_file(&out.join("panel.csv"), csv)?;
    write_file(&out.join("truth.json"), truth.to_json()?)?;
    write_file(&out.join("spec.json"), spec.to_json()?)?;

    println!("{} channels x {} samples written to {}", panel.n_channels(), panel.len(), out.display());
    for w in &truth.windows {
        let names: Vec<&str> = w.root_causes.iter().map(|&c| truth.channel_names[c].as_str()).collect();
        println!("anomaly window {}..{}: root causes {}", w.range.start, w.range.end, names.join(", "));
    }
    Ok(())
}

pub fn fit(config: &RunConfig) -> Result<(), CliError> {
    let panel = read_panel(&config.paths.panel())?;
    let train_end = config.fit.train_end.unwrap_or((panel.len() as f64 * config.fit.train_fraction) as usize);
    let (prepared, stats) = preprocess(&panel, &config.pipeline.preprocess, 0..train_end)?;
    let graph = fccg_cluster(&prepared, 0..train_end, &config.pipeline.fccg, config.seed)?;
    log::info!("{} pairwise ARX fits", graph.pair_fit_count());
    println!(
        "{} clusters, {} edges, {} pair fits over {} channels (training rows 0..{train_end})",
        graph.clusters.len(),
        graph.edges.len(),
        graph.pair_fit_count(),
        graph.n_channels()
    );
    let model = ModelFile { format_version: FORMAT_VERSION, preprocess: config.pipeline.preprocess.clone(), stats, graph };
    let text = serde_json::to_string_pretty(&model).map_err(RcaError::from)?;
    let path = config.paths.model();
    write_file(&path, text)?;
    println!("model written to {}", path.display());
    Ok(())
}

pub fn detect(config: &RunConfig) -> Result<(), CliError> {
    let model = read_model(&config.paths.model())?;
    let panel = read_panel(&config.paths.panel())?.select_channels(&model.graph.channel_names)?;
    let prepared = preprocess_with(&panel, &model.preprocess, &model.stats)?;
    let start = model.stats.train_range.end.max(model.graph.max_warm_up());
    let events = scan(&model.graph, &prepared, start..prepared.len(), config.detect.window, &config.pipeline.detect)?;

    let dir = config.paths.events_dir();
    if let Ok(entries) = fs::read_dir(&dir) {
        for entry in entries.flatten() {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with("event-") && name.ends_with(".json") {
                fs::remove_file(entry.path()).map_err(|e| CliError::Output(format!("{name}: {e}")))?;
            }
        }
    }
    for (i, event) in events.iter().enumerate() {
        write_file(&dir.join(format!("event-{i:03}.json")), event.to_json()?)?;
    }
    println!("{} events", events.len());
    for event in &events {
        println!(
            "window {}..{}: broken ratio {:.3}, anomalous {}",
            event.window.start,
            event.window.end,
            event.system_broken_ratio,
            event.anomalous_names.join(", ")
        );
    }
    Ok(())
}

pub fn rca(config: &RunConfig) -> Result<(), CliError> {
    let event = AnomalyEvent::from_json(&read_text(&config.paths.event())?)?;
    let model = read_model(&config.paths.model())?;
    let names = &model.graph.channel_names;
    let n = config.pipeline.top_n;
    let method = config.rca.method;
    let ranking = match method {
        Method::Tcorca => {
            let analysis = tcorca_analyze(&event, &config.pipeline.causal, n)?;
            if let Some(graph) = &analysis.graph {
                let local: Vec<String> = analysis.graph_channels.iter().map(|&c| names[c].clone()).collect();
                write_file(&config.paths.out_dir.join("causal-graph.dot"), graph.to_dot(&local))?;
            }
            analysis.ranking
        }
        Method::Ig => ig_rank(&event, &model.graph, n),
        Method::LbpIg => lbp_ig_rank(&event, &model.graph, &config.pipeline.lbp, n)?,
        Method::Threshold => {
            let panel = read_panel(&config.paths.panel())?.select_channels(names)?;
            let raw = impute_missing(&panel, model.preprocess.impute)?;
            let stats = ChannelStats::estimate(&raw, model.stats.train_range.clone())?;
            threshold_rank(&raw, &stats, event.window.clone(), config.pipeline.threshold_k_sigma, n)?
        }
    };
    write_file(&config.paths.out_dir.join(format!("ranking-{method}.json")), ranking.to_json(names)?)?;
    print!("{}", ranking.to_table(names));
    Ok(())
}

pub fn bench(config: &RunConfig, with_plot_data: bool) -> Result<(), CliError> {
    if config.bench.methods.is_empty() {
        return Err(CliError::Config("no benchmark methods selected".into()));
    }
    let suite_config = config.bench.suite(config.seed);
    let suite = suite_config.scenarios()?;
    let report = run_benchmark(&suite, &config.bench.methods, &config.pipeline)?;

    let out = &config.paths.out_dir;
    write_file(&out.join("report.json"), report.without_runtime().to_json()?)?;
    write_file(&out.join("runtime.json"), serde_json::to_string_pretty(&report.runtime).map_err(RcaError::from)?)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_file(&out.join("report.csv"), csv)?;

    println!("{:<10} {:>9} {:>9} {:>9}", "method", "precision", "recall", "f1");
    for s in &report.summaries {
        println!("{:<10} {:>9.3} {:>9.3} {:>9.3}", s.method.to_string(), s.precision_mean, s.recall_mean, s.f1_mean);
    }
    if report.partial {
        println!("{} of {} scenarios failed", report.failures.len(), suite.len());
    }
    if report.failures.len() == suite.len() {
        return Err(CliError::AllScenariosFailed(suite.len()));
    }

    if with_plot_data {
        let points = run_sweep(&suite_config, &config.bench.sweep, &config.bench.methods, &config.pipeline)?;
        let text = serde_json::to_string_pretty(&plot_data(&points)).map_err(RcaError::from)?;
        write_file(&out.join("plot-data.json"), text)?;
    }
    Ok(())
}
