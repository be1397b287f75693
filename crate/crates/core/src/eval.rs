//! Scoring and benchmark orchestration.
//!
//! [`run_pipeline`] takes one panel through preprocessing, graph fitting,
//! detection and every requested ranker. [`run_benchmark`] does that for a
//! suite of generated scenarios in parallel and pools the results into a
//! [`MetricReport`].

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::CausalConfig;
use crate::detect::{detect_anomaly, AnomalyEvent, DetectConfig};
use crate::error::{RcaError, Result};
use crate::invariant::{fccg_cluster, FccgConfig, InvariantGraph};
use crate::panel::{impute_missing, preprocess, ChannelStats, PreprocessConfig, TimeSeriesPanel};
use crate::rca::{ig_rank, lbp_ig_rank, tcorca_rank, threshold_rank, LbpParams, Method, RootCauseRanking};
use crate::synth::{generate_scenario, ScenarioSpec, TopologyParams};
use crate::FORMAT_VERSION;

/// Precision, recall and F1 of one ranking against one truth set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Prf {
    /// Metrics from raw counts; precision is 0 with nothing predicted.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Result<Self> {
        if tp + fn_ == 0 {
            return Err(RcaError::UndefinedMetric("recall over an empty truth set".into()));
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = tp as f64 / (tp + fn_) as f64;
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Ok(Self { precision, recall, f1, tp, fp, fn_ })
    }
}

/// Scores the top `min(n, len)` entries of `ranking` against `truth`.
pub fn precision_recall_f1(ranking: &RootCauseRanking, truth: &BTreeSet<usize>, n: usize) -> Result<Prf> {
    if n == 0 {
        return Err(RcaError::UndefinedMetric("N must be at least 1".into()));
    }
    let predicted: BTreeSet<usize> = ranking.channels().take(n).collect();
    let tp = predicted.intersection(truth).count();
    Prf::from_counts(tp, predicted.len() - tp, truth.len() - tp)
}

/// Every knob of the end-to-end pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub fccg: FccgConfig,
    pub detect: DetectConfig,
    pub causal: CausalConfig,
    pub lbp: LbpParams,
    /// Deviation, in training standard deviations, that the threshold
    /// baseline flags.
    pub threshold_k_sigma: f64,
    /// Samples of context added before the anomaly window for detection.
    pub detect_padding: usize,
    pub top_n: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            fccg: FccgConfig::default(),
            detect: DetectConfig::default(),
            causal: CausalConfig::default(),
            lbp: LbpParams::default(),
            threshold_k_sigma: 3.0,
            detect_padding: 0,
            top_n: 5,
        }
    }
}

/// Wall-clock seconds spent in each pipeline stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub generate: f64,
    pub preprocess: f64,
    pub fit: f64,
    pub detect: f64,
    pub rank: BTreeMap<Method, f64>,
}

impl StageTimes {
    fn add(&mut self, other: &StageTimes) {
        self.generate += other.generate;
        self.preprocess += other.preprocess;
        self.fit += other.fit;
        self.detect += other.detect;
        for (m, t) in &other.rank {
            *self.rank.entry(*m).or_insert(0.0) += t;
        }
    }
}

/// Output of [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub graph: InvariantGraph,
    pub stats: ChannelStats,
    pub event: Option<AnomalyEvent>,
    pub rankings: BTreeMap<Method, RootCauseRanking>,
    pub times: StageTimes,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Fits on `train`, evaluates `window` and ranks with each of `methods`.
/// Event-driven rankers return an empty ranking when no event fires.
pub fn run_pipeline(
    panel: &TimeSeriesPanel,
    train: Range<usize>,
    window: Range<usize>,
    methods: &[Method],
    config: &PipelineConfig,
    seed: u64,
) -> Result<PipelineRun> {
    let mut times = StageTimes::default();
    let (prepared, t) = timed(|| preprocess(panel, &config.preprocess, train.clone()));
    let (prepared, stats) = prepared?;
    times.preprocess = t;

    let (graph, t) = timed(|| fccg_cluster(&prepared, train, &config.fccg, seed));
    let graph = graph?;
    times.fit = t;

    let detect_window = window.start.saturating_sub(config.detect_padding).max(graph.max_warm_up())..window.end;
    let (event, t) = timed(|| detect_anomaly(&graph, &prepared, detect_window, &config.detect));
    let event = event?;
    times.detect = t;

    let mut rankings = BTreeMap::new();
    for &method in methods {
        let n = config.top_n;
        let (ranking, t) = timed(|| -> Result<RootCauseRanking> {
            match (method, &event) {
                (Method::Threshold, _) => {
                    let raw = impute_missing(panel, config.preprocess.impute)?;
                    let raw_stats = ChannelStats::estimate(&raw, stats.train_range.clone())?;
                    threshold_rank(&raw, &raw_stats, window.clone(), config.threshold_k_sigma, n)
                }
                (_, None) => Ok(RootCauseRanking::empty(method, n)),
                (Method::Tcorca, Some(e)) => tcorca_rank(e, &config.causal, n),
                (Method::Ig, Some(e)) => Ok(ig_rank(e, &graph, n)),
                (Method::LbpIg, Some(e)) => lbp_ig_rank(e, &graph, &config.lbp, n),
            }
        });
        rankings.insert(method, ranking?);
        times.rank.insert(method, t);
    }
    Ok(PipelineRun { graph, stats, event, rankings, times })
}

/// One scenario scored with one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: usize,
    pub seed: u64,
    pub n_anomalies: usize,
    pub method: Method,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ranked: Vec<usize>,
    pub event_raised: bool,
}

/// Mean and population standard deviation over scenarios, plus pooled
/// counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub scenarios: usize,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Metrics of the pooled counts.
    pub micro: Prf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFailure {
    pub scenario: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format_version: u32,
    pub top_n: usize,
    /// Hash of the suite and configuration; equal fingerprints mean equal
    /// inputs.
    pub fingerprint: String,
    pub summaries: Vec<MethodSummary>,
    pub rows: Vec<ScenarioRow>,
    pub failures: Vec<ScenarioFailure>,
    /// Some scenario failed; its rows are missing.
    pub partial: bool,
    pub runtime: StageTimes,
}

impl MetricReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The report without wall-clock fields, for reproducibility checks.
    pub fn without_runtime(&self) -> Self {
        Self { runtime: StageTimes::default(), ..self.clone() }
    }

    /// One row per method and scenario.
    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["scenario", "seed", "n_anomalies", "method", "tp", "fp", "fn", "precision", "recall", "f1"])?;
        for r in &self.rows {
            w.write_record([
                r.scenario.to_string(),
                r.seed.to_string(),
                r.n_anomalies.to_string(),
                r.method.to_string(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.fn_.to_string(),
                format!("{:?}", r.precision),
                format!("{:?}", r.recall),
                format!("{:?}", r.f1),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// FNV-1a over a byte string, rendered as hex.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, v.sqrt())
}

struct ScenarioOutcome {
    rows: Vec<ScenarioRow>,
    times: StageTimes,
}

fn run_scenario(index: usize, spec: &ScenarioSpec, methods: &[Method], config: &PipelineConfig) -> Result<ScenarioOutcome> {
    let ((panel, truth), t_gen) = {
        let (res, t) = timed(|| generate_scenario(spec));
        (res?, t)
    };
    let mut rows = Vec::new();
    let mut times = StageTimes { generate: t_gen, ..StageTimes::default() };
    for window in &truth.windows {
        let run = run_pipeline(&panel, 0..spec.clean_prefix, window.range.clone(), methods, config, spec.seed)?;
        times.add(&run.times);
        let roots: BTreeSet<usize> = window.root_causes.iter().copied().collect();
        for &method in methods {
            let ranking = &run.rankings[&method];
            let prf = precision_recall_f1(ranking, &roots, config.top_n)?;
            rows.push(ScenarioRow {
                scenario: index,
                seed: spec.seed,
                n_anomalies: roots.len(),
                method,
                tp: prf.tp,
                fp: prf.fp,
                fn_: prf.fn_,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                ranked: ranking.channels().collect(),
                event_raised: run.event.is_some(),
            });
        }
    }
    Ok(ScenarioOutcome { rows, times })
}

/// Runs every scenario (in parallel) and scores each method. A failing
/// scenario is recorded and the rest continue.
pub fn run_benchmark(suite: &[ScenarioSpec], methods: &[Method], config: &PipelineConfig) -> Result<MetricReport> {
    if suite.is_empty() {
        return Err(RcaError::EmptyInput);
    }
    let outcomes: Vec<Result<ScenarioOutcome>> =
        suite.par_iter().enumerate().map(|(i, spec)| run_scenario(i, spec, methods, config)).collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut runtime = StageTimes::default();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                runtime.add(&o.times);
                rows.extend(o.rows);
            }
            Err(e) => {
                log::warn!("scenario {i} (seed {}) failed: {e}", suite[i].seed);
                failures.push(ScenarioFailure { scenario: i, seed: suite[i].seed, error: e.to_string() });
            }
        }
    }

    let mut summaries = Vec::new();
    for &method in methods {
        let mine: Vec<&ScenarioRow> = rows.iter().filter(|r| r.method == method).collect();
        let (precision_mean, precision_std) = mean_std(&mine.iter().map(|r| r.precision).collect::<Vec<_>>());
        let (recall_mean, recall_std) = mean_std(&mine.iter().map(|r| r.recall).collect::<Vec<_>>());
        let (f1_mean, f1_std) = mean_std(&mine.iter().map(|r| r.f1).collect::<Vec<_>>());
        let tp = mine.iter().map(|r| r.tp).sum();
        let fp = mine.iter().map(|r| r.fp).sum();
        let fn_ = mine.iter().map(|r| r.fn_).sum();
        let micro = Prf::from_counts(tp, fp, fn_).unwrap_or(Prf { precision: 0.0, recall: 0.0, f1: 0.0, tp, fp, fn_ });
        summaries.push(MethodSummary {
            method,
            scenarios: mine.len(),
            precision_mean,
            precision_std,
            recall_mean,
            recall_std,
            f1_mean,
            f1_std,
            tp,
            fp,
            fn_,
            micro,
        });
    }

    let fingerprint_input = serde_json::to_vec(&(suite, methods, config))?;
    Ok(MetricReport {
        format_version: FORMAT_VERSION,
        top_n: config.top_n,
        fingerprint: fingerprint(&fingerprint_input),
        summaries,
        partial: !failures.is_empty(),
        failures,
        rows,
        runtime,
    })
}

/// Shape of a generated benchmark suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub channels: usize,
    pub length: usize,
    pub n_anomalies: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub topology: TopologyParams,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { channels: 30, length: 5000, n_anomalies: 5, seeds: 20, base_seed: 0, topology: TopologyParams::default() }
    }
}

impl SuiteConfig {
    /// One scenario per seed `base_seed..base_seed + seeds`.
    pub fn scenarios(&self) -> Result<Vec<ScenarioSpec>> {
        (0..self.seeds as u64)
            .map(|i| ScenarioSpec::random(self.channels, self.length, self.n_anomalies, &self.topology, self.base_seed + i))
            .collect()
    }
}

/// Anomaly counts of the default sweep.
pub const SWEEP_COUNTS: [usize; 4] = [2, 5, 8, 11];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_anomalies: usize,
    pub report: MetricReport,
}

/// One benchmark per anomaly count, all else equal.
pub fn run_sweep(suite: &SuiteConfig, counts: &[usize], methods: &[Method], config: &PipelineConfig) -> Result<Vec<SweepPoint>> {
    counts
        .iter()
        .map(|&n_anomalies| {
            let specs = SuiteConfig { n_anomalies, ..suite.clone() }.scenarios()?;
            Ok(SweepPoint { n_anomalies, report: run_benchmark(&specs, methods, config)? })
        })
        .collect()
}

/// Plot series: anomaly count on x, mean precision, recall and F1 per
/// method on y.
pub fn plot_data(points: &[SweepPoint]) -> serde_json::Value {
    let x: Vec<usize> = points.iter().map(|p| p.n_anomalies).collect();
    let mut series = serde_json::Map::new();
    let methods: BTreeSet<Method> = points.iter().flat_map(|p| p.report.summaries.iter().map(|s| s.method)).collect();
    for method in methods {
        let pick = |f: fn(&MethodSummary) -> f64| -> Vec<f64> {
            points.iter().map(|p| p.report.summary(method).map_or(0.0, f)).collect()
        };
        series.insert(
            method.to_string(),
            serde_json::json!({
                "precision": pick(|s| s.precision_mean),
                "recall": pick(|s| s.recall_mean),
                "f1": pick(|s| s.f1_mean),
            }),
        );
    }
    serde_json::json!({ "x_label": "injected anomalies", "x": x, "series": series })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{AnomalyKind, Dependency};
    use proptest::prelude::*;

    fn ranking(channels: &[usize]) -> RootCauseRanking {
        RootCauseRanking::from_scores(Method::Tcorca, channels.iter().enumerate().map(|(i, &c)| (c, 100.0 - i as f64)), 100)
    }

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn perfect_half_and_empty_cases() {
        let p = precision_recall_f1(&ranking(&[0, 1]), &set(&[0, 1]), 2).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = precision_recall_f1(&ranking(&[0, 2]), &set(&[0, 1]), 2).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
        let p = precision_recall_f1(&ranking(&[]), &set(&[0]), 5).unwrap();
        assert_eq!((p.precision, p.recall, p.f1, p.tp, p.fp, p.fn_), (0.0, 0.0, 0.0, 0, 0, 1));
    }

    #[test]
    fn undefined_inputs_are_errors() {
        assert!(matches!(precision_recall_f1(&ranking(&[1]), &set(&[]), 1), Err(RcaError::UndefinedMetric(_))));
        assert!(matches!(precision_recall_f1(&ranking(&[1]), &set(&[1]), 0), Err(RcaError::UndefinedMetric(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn recall_grows_with_n(
            order in Just((0..20usize).collect::<Vec<_>>()).prop_shuffle(),
            len in 0usize..20,
            truth in proptest::collection::btree_set(0usize..20, 1..8),
            n in 1usize..19,
        ) {
            let r = ranking(&order[..len]);
            let a = precision_recall_f1(&r, &truth, n).unwrap();
            let b = precision_recall_f1(&r, &truth, n + 1).unwrap();
            prop_assert!(b.recall >= a.recall);
            prop_assert_eq!(a.tp + a.fn_, truth.len());
            prop_assert_eq!(a.tp + a.fp, len.min(n));
            let f1 = if a.precision + a.recall > 0.0 { 2.0 * a.precision * a.recall / (a.precision + a.recall) } else { 0.0 };
            prop_assert!((a.f1 - f1).abs() < 1e-15);
        }

        #[test]
        fn only_the_top_set_matters(order in Just((0..10usize).collect::<Vec<_>>()).prop_shuffle(), n in 1usize..10) {
            let truth = set(&[1, 4, 7]);
            let mut head = order[..n].to_vec();
            head.reverse();
            let a = precision_recall_f1(&ranking(&order), &truth, n).unwrap();
            let b = precision_recall_f1(&ranking(&head), &truth, n).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    fn fork_spec(seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            channels: 3,
            length: 1500,
            n_sources: 1,
            dependencies: vec![
                Dependency { source: 0, target: 1, delay: 2, gain: 1.0 },
                Dependency { source: 0, target: 2, delay: 3, gain: -0.8 },
            ],
            noise_std: 0.05,
            n_anomalies: 1,
            anomaly_kinds: vec![AnomalyKind::LevelShift],
            anomaly_window: 100,
            onset_spread: 0.0,
            clean_prefix: 1000,
            propagate: false,
            seed,
        }
    }

    #[test]
    fn lone_fault_is_found_by_every_method() {
        let suite: Vec<ScenarioSpec> = (0..4).map(fork_spec).collect();
        let report = run_benchmark(&suite, &Method::ALL, &PipelineConfig::default()).unwrap();
        assert!(!report.partial);
        for s in &report.summaries {
            assert_eq!(s.recall_mean, 1.0, "{}", s.method);
        }
        assert_eq!(report.rows.len(), 4 * Method::ALL.len());
    }

    #[test]
    fn reports_do_not_depend_on_thread_count() {
        let suite: Vec<ScenarioSpec> = (0..3).map(fork_spec).collect();
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| run_benchmark(&suite, &Method::ALL, &PipelineConfig::default()).unwrap().without_runtime())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one.to_json().unwrap(), run(2).to_json().unwrap());
    }

    #[test]
    fn failures_are_recorded_and_the_suite_continues() {
        let mut bad = fork_spec(1);
        bad.dependencies[0].target = 7;
        let report = run_benchmark(&[fork_spec(0), bad], &[Method::Threshold], &PipelineConfig::default()).unwrap();
        assert!(report.partial);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].scenario, 1);
        assert_eq!(report.rows.len(), 1);
        assert!(run_benchmark(&[], &[Method::Ig], &PipelineConfig::default()).is_err());
    }

    #[test]
    fn csv_and_plot_layout() {
        let report = run_benchmark(&[fork_spec(0)], &[Method::Ig, Method::Threshold], &PipelineConfig::default()).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("scenario,seed,n_anomalies,method"));
        let plot = plot_data(&[SweepPoint { n_anomalies: 1, report }]);
        assert_eq!(plot["x"], serde_json::json!([1]));
        assert_eq!(plot["series"]["ig"]["recall"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn fingerprint_is_fnv1a() {
        assert_eq!(fingerprint(b""), "cbf29ce484222325");
        assert_eq!(fingerprint(b"a"), "af63dc4c8601ec8c");
    }
}
