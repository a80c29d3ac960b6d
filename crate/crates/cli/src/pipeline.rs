// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stage implementations. Each reads upstream artifacts from the store,
//! checks that they agree with the manifest and with each other, and writes
//! exactly one artifact plus a timing log.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use facade_core::attacks::attack_dataset;
use facade_core::circuitdisc::{
    ablated_forward, acdc_discover, build_graph, circuit_kl, compute_ablation_context, AblationContext, Circuit,
    ComputeGraph,
};
use facade_core::facade::{
    detect, run_lambda, score_edges, to_distribution, CircuitDistribution, DetectionModel, PipelineInputs, SweepConfig,
};
use facade_core::manifold::{delta_stats, stats_for_clustering};
use facade_core::metrics::roc_auc;
use facade_core::netcore::{accuracy, load_model, train_sgd, Activation, ActivationTrace, Dataset, Network, TrainConfig};
use facade_core::pseudoclass::{cluster_layer, Clustering};
use facade_core::synthdata::generate;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::artifacts::*;
use crate::error::{CliError, CliResult, InStage};
use crate::manifest::{ModelSource, RunManifest};
use crate::stage::Stage;
use crate::store::{check_consistent, input_hashes, sha256_file, Loaded, Provenance, Store};

/// Command line options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Options {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub stage_inputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub path: PathBuf,
    pub sha256: String,
}

/// Runs one stage.
pub fn run_stage(stage: Stage, opts: &Options) -> CliResult<StageOutcome> {
    let manifest = RunManifest::load(&opts.manifest, opts.seed)?;
    let store = Store::new(&opts.out, &opts.stage_inputs)?;
    execute(stage, &manifest, &store, opts.quiet)
}

/// Runs every stage in order; `sweep` only when the manifest has a grid.
pub fn run_all(opts: &Options) -> CliResult<Vec<StageOutcome>> {
    let manifest = RunManifest::load(&opts.manifest, opts.seed)?;
    let store = Store::new(&opts.out, &opts.stage_inputs)?;
    Stage::ALL
        .into_iter()
        .filter(|s| *s != Stage::Sweep || !manifest.lambda_grid.is_empty())
        .map(|s| execute(s, &manifest, &store, opts.quiet))
        .collect()
}

pub fn execute(stage: Stage, m: &RunManifest, store: &Store, quiet: bool) -> CliResult<StageOutcome> {
    let started = Instant::now();
    let sha256 = match stage {
        Stage::GenData => gen_data(m, store),
        Stage::Train => train(m, store),
        Stage::Trace => trace(m, store),
        Stage::Cluster => cluster(m, store),
        Stage::Discover => discover(m, store),
        Stage::Stats => stats(m, store),
        Stage::Score => score(m, store),
        Stage::Calibrate => calibrate(m, store),
        Stage::Detect => detect_stage(m, store),
        Stage::Sweep => sweep(m, store),
        Stage::Report => report(m, store),
    }?;
    let elapsed = started.elapsed();
    let path = store.output_path(stage);
    store.write_log(
        stage,
        &format!(
            "stage={stage}\nartifact={}\nsha256={sha256}\nelapsed_ms={:.3}\n",
            path.display(),
            elapsed.as_secs_f64() * 1e3
        ),
    )?;
    if !quiet {
        println!("{stage}: wrote {} ({:.2} s)", path.display(), elapsed.as_secs_f64());
    }
    Ok(StageOutcome { stage, path, sha256 })
}

fn need<T: DeserializeOwned>(m: &RunManifest, store: &Store, consumer: Stage, required: Stage) -> CliResult<Loaded<T>> {
    store.load(consumer, required, &m.params_for(required))
}

fn emit<T: Serialize>(m: &RunManifest, store: &Store, stage: Stage, prov: &[Provenance<'_>], data: &T) -> CliResult<String> {
    check_consistent(prov)?;
    store.write(stage, m.params_for(stage), input_hashes(prov), data)
}

fn verify_pinned(path: &std::path::Path, pinned: Option<&String>) -> CliResult<()> {
    if let Some(expected) = pinned {
        let actual = sha256_file(path)?;
        if &actual != expected {
            return Err(CliError::Stale {
                path: path.to_path_buf(),
                reason: format!("sha256 is {actual} but the manifest pins {expected}"),
            });
        }
    }
    Ok(())
}

fn gen_data(m: &RunManifest, store: &Store) -> CliResult<String> {
    let stage = Stage::GenData;
    let dataset = match (m.gen_spec(), m.dataset_file()) {
        (Some(spec), _) => generate(&spec).in_stage(stage)?,
        (None, Some(f)) => {
            verify_pinned(&f.path, f.sha256.as_ref())?;
            Dataset::load(&f.path).in_stage(stage)?
        }
        (None, None) => unreachable!("dataset source is either generated or a file"),
    };
    let splits = Splits::new(dataset.len(), m.split).ok_or_else(|| CliError::Manifest {
        path: PathBuf::from("split"),
        message: format!("{} samples are too few for non-empty train/val/test splits", dataset.len()),
    })?;
    emit(m, store, stage, &[], &DatasetData { dataset, splits })
}

fn train(m: &RunManifest, store: &Store) -> CliResult<String> {
    let stage = Stage::Train;
    let ds: Loaded<DatasetData> = need(m, store, stage, Stage::GenData)?;
    let data = ds.data();
    let train_split = data.split("train").in_stage(stage)?;
    let (source, network, epoch_losses) = match &m.model {
        ModelSource::Train(spec) => {
            let mut shape: Vec<(usize, Activation)> = spec.hidden.iter().map(|h| (h.width, h.activation)).collect();
            shape.push((data.dataset.num_classes(), Activation::Identity));
            let init = Network::random(data.dataset.dim(), &shape, m.init_seed()).in_stage(stage)?;
            let cfg = TrainConfig {
                lr: spec.lr,
                epochs: spec.epochs,
                batch_size: spec.batch_size,
                seed: m.shuffle_seed(),
            };
            let report = train_sgd(&init, &train_split, &cfg).in_stage(stage)?;
            ("trained", report.network, report.epoch_losses)
        }
        ModelSource::File(f) => {
            verify_pinned(&f.path, f.sha256.as_ref())?;
            ("file", load_model(&f.path).in_stage(stage)?, Vec::new())
        }
    };
    let acc = |which: &str| -> CliResult<f64> { accuracy(&network, &data.split(which).in_stage(stage)?).in_stage(stage) };
    let model = ModelData {
        source: source.into(),
        train_accuracy: acc("train")?,
        val_accuracy: acc("val")?,
        test_accuracy: acc("test")?,
        network,
        epoch_losses,
    };
    emit(m, store, stage, &[(&ds).into()], &model)
}

/// Activation traces of the training split, with dataset indices as ids.
fn train_traces(net: &Network, data: &DatasetData, stage: Stage) -> CliResult<Vec<ActivationTrace>> {
    let offset = data.splits.train[0];
    let mut traces = net.forward_batch(data.split("train").in_stage(stage)?.inputs()).in_stage(stage)?;
    for t in &mut traces {
        t.sample_id += offset;
    }
    Ok(traces)
}

fn trace(m: &RunManifest, store: &Store) -> CliResult<String> {
    let stage = Stage::Trace;
    let ds: Loaded<DatasetData> = need(m, store, stage, Stage::GenData)?;
    let model: Loaded<ModelData> = need(m, store, stage, Stage::Train)?;
    let traces = train_traces(&model.data().network, ds.data(), stage)?;
    let data = TracesData {
        split: "train".into(),
        traces,
    };
    emit(m, store, stage, &[(&ds).into(), (&model).into()], &data)
}

fn cluster(m: &RunManifest, store: &Store) -> CliResult<String> {
    let stage = Stage::Cluster;
    let traces: Loaded<TracesData> = need(m, store, stage, Stage::Trace)?;
    let model_hash = traces.envelope.inputs.get("model").cloned().unwrap_or_default();
    let cfg = m.cluster_config(m.lambda);
    let entries = m
        .layers
        .iter()
        .map(|&layer| {
            Ok(ClusteringEntry {
                model_hash: model_hash.clone(),
                layer,
                lambda: m.lambda,
                clustering: cluster_layer(&traces.data().traces, layer, &cfg).in_stage(stage)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    emit(m, store, stage, &[(&traces).into()], &ClusteringsData { entries })
}

fn discover(m: &RunManifest, store: &Store) -> CliResult<String> {
    let stage = Stage::Discover;
    let ds: Loaded<DatasetData> = need(m, store, stage, Stage::GenData)?;
    let model: Loaded<ModelData> = need(m, store, stage, Stage::Train)?;
    let net = &model.data().network;
    let calibration = ds.data().split("train").in_stage(stage)?;
    let graph = build_graph(net, m.g).in_stage(stage)?;
    let ctx = compute_ablation_context(net, &calibration, &graph).in_stage(stage)?;
    let tau = m.tau.unwrap_or(f64::INFINITY);
    let discovery = acdc_discover(net, &graph, &ctx, &calibration, tau, &model.sha256).in_stage(stage)?;
    let kl = circuit_kl(net, &graph, &discovery.circuit.removed_set(), &ctx, &calibration).in_stage(stage)?;
    let data = CircuitData {
        circuit: discovery.circuit,
        steps: discovery.steps,
        circuit_kl: kl,
        ablation: ctx,
    };
    emit(m, store, stage, &[(&ds).into(), (&model).into()], &data)
}

/// The clusterings this manifest asks for, in layer order.
fn select_clusterings(m: &RunManifest, set: &Loaded<ClusteringsData>, model_hash: &str) -> CliResult<Vec<Clustering>> {
    m.layers
        .iter()
        .map(|&layer| {
            set.data().find(model_hash, layer, m.lambda).cloned().ok_or_else(|| CliError::Stale {
                path: set.path.clone(),
                reason: format!(
                    "no clustering for model {model_hash}, layer {layer}, lambda {}; rerun `facade cluster`",
                    m.lambda
                ),
            })
        })
        .collect()
}

fn graph_of(net: &Network, circuit: &Circuit, stage: Stage) -> CliResult<ComputeGraph> {
    build_graph(net, circuit.group_size).in_stage(stage)
}

/// Full-model and circuit geometry of each clustering.
pub fn layer_stats(
    net: &Network,
    graph: &ComputeGraph,
    ctx: &AblationContext,
    circuit: &Circuit,
    traces: &[ActivationTrace],
    clusterings: &[Clustering],
) -> facade_core::Result<Vec<LayerStats>> {
    let removed: BTreeSet<_> = circuit.removed_set();
    let ablated = traces
        .iter()
        .map(|t| {
            let mut a = ablated_forward(net, graph, &removed, ctx, t.input())?;
            a.sample_id = t.sample_id;
            Ok(a)
        })
        .collect::<facade_core::Result<Vec<_>>>()?;
    clusterings
        .iter()
        .map(|c| {
            let full = stats_for_clustering(traces, c)?;
            let circ = stats_for_clustering(&ablated, c)?;
            let delta = full
                .iter()
                .zip(&circ)
                .map(|(a, b)| delta_stats(a, b))
                .collect::<facade_core::Result<Vec<_>>>()?;
            Ok(LayerStats {
                layer: c.layer_index,
                full,
                circuit: circ,
                delta,
            })
        })
        .collect()
}

fn stats(m: &RunManifest, store: &Store) -> CliResult<String> {
    let stage = Stage::Stats;
    let model: Loaded<ModelData> = need(m, store, stage, Stage::Train)?;
    let traces: Loaded<TracesData> = need(m, store, stage, Stage::Trace)?;
    let set: Loaded<ClusteringsData> = need(m, store, stage, Stage::Cluster)?;
    let circ: Loaded<CircuitData> = need(m, store, stage, Stage::Discover)?;
    let prov = [(&model).into(), (&traces).into(), (&set).into(), (&circ).into()];
    check_consistent(&prov)?;
    let net = &model.data().network;
    let clusterings = select_clusterings(m, &set, &model.sha256)?;
    let c = circ.data();
    let graph = graph_of(net, &c.circuit, stage)?;
    let layers = layer_stats(net, &graph, &c.ablation, &c.circuit, &traces.data().traces, &clusterings).in_stage(stage)?;
    emit(m, store, stage, &prov, &StatsData { lambda: m.lambda, layers })
}

fn score(m: &RunManifest, store: &Store) -> CliResult<String> {
    let stage = Stage::Score;
    let model: Loaded<ModelData> = need(m, store, stage, Stage::Train)?;
    let traces: Loaded<TracesData> = need(m, store, stage, Stage::Trace)?;
    let set: Loaded<ClusteringsData> = need(m, store, stage, Stage::Cluster)?;
    let circ: Loaded<CircuitData> = need(m, store, stage, Stage::Discover)?;
    let prov = [(&model).into(), (&traces).into(), (&set).into(), (&circ).into()];
    check_consistent(&prov)?;
    let net = &model.data().network;
    let clusterings = select_clusterings(m, &set, &model.sha256)?;
    let c = circ.data();
    let graph = graph_of(net, &c.circuit, stage)?;
    let scoring = score_edges(net, &graph, &c.ablation, &c.circuit, &clusterings, &traces.data().traces, m.w_radius)
        .in_stage(stage)?;
    let mut distribution = to_distribution(&scoring.scores, m.temperature).in_stage(stage)?;
    distribution.lambda = Some(m.lambda);
    distribution.layers = m.layers.clone();
    let data = DistributionData {
        distribution,
        warnings: scoring.warnings,
    };
    emit(m, store, stage, &prov, &data)
}

fn calibrate(m: &RunManifest, store: &Store) -> CliResult<String> {
    let stage = Stage::Calibrate;
    let ds: Loaded<DatasetData> = need(m, store, stage, Stage::GenData)?;
    let model: Loaded<ModelData> = need(m, store, stage, Stage::Train)?;
    let set: Loaded<ClusteringsData> = need(m, store, stage, Stage::Cluster)?;
    let prov = [(&ds).into(), (&model).into(), (&set).into()];
    check_consistent(&prov)?;
    let clusterings = select_clusterings(m, &set, &model.sha256)?;
    let val = ds.data().split("val").in_stage(stage)?;
    let detector = DetectionModel::calibrate(&model.data().network, clusterings, &val, m.q).in_stage(stage)?;
    let data = DetectorData {
        lambda: m.lambda,
        validation_size: val.len(),
        detector,
    };
    emit(m, store, stage, &prov, &data)
}

/// Scores the clean test split and its attacked copy.
#[allow(clippy::too_many_arguments)]
pub fn summarize_detection(
    detector: &DetectionModel,
    net: &Network,
    graph: &ComputeGraph,
    ctx: &AblationContext,
    distribution: &CircuitDistribution,
    test: &Dataset,
    test_offset: usize,
    adversarial: &Dataset,
) -> facade_core::Result<DetectionSummary> {
    let mut rows = Vec::with_capacity(2 * test.len());
    for (is_adv, set) in [(false, test), (true, adversarial)] {
        for (i, x) in set.inputs().iter().enumerate() {
            let report = detect(detector, net, graph, ctx, distribution, test_offset + i, x)?;
            rows.push(DetectionRow {
                adversarial: is_adv,
                report,
            });
        }
    }
    let scores = |adv: bool| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.adversarial == adv)
            .map(|r| r.report.combined_score)
            .collect()
    };
    let flagged = |adv: bool| rows.iter().filter(|r| r.adversarial == adv && r.report.is_anomalous).count();
    Ok(DetectionSummary {
        threshold: detector.threshold,
        auc: roc_auc(&scores(false), &scores(true)),
        clean_flagged: flagged(false),
        adversarial_flagged: flagged(true),
        rows,
    })
}

fn detect_stage(m: &RunManifest, store: &Store) -> CliResult<String> {
    let stage = Stage::Detect;
    let det: Loaded<DetectorData> = need(m, store, stage, Stage::Calibrate)?;
    let dist: Loaded<DistributionData> = need(m, store, stage, Stage::Score)?;
    let circ: Loaded<CircuitData> = need(m, store, stage, Stage::Discover)?;
    let model: Loaded<ModelData> = need(m, store, stage, Stage::Train)?;
    let ds: Loaded<DatasetData> = need(m, store, stage, Stage::GenData)?;
    let prov = [(&det).into(), (&dist).into(), (&circ).into(), (&model).into(), (&ds).into()];
    check_consistent(&prov)?;
    let net = &model.data().network;
    let c = circ.data();
    let graph = graph_of(net, &c.circuit, stage)?;
    let test = ds.data().split("test").in_stage(stage)?;
    let attack = m.attack_spec();
    let adversarial = attack_dataset(net, &test, &attack).in_stage(stage)?;
    let summary = summarize_detection(
        &det.data().detector,
        net,
        &graph,
        &c.ablation,
        &dist.data().distribution,
        &test,
        ds.data().splits.test[0],
        &adversarial,
    )
    .in_stage(stage)?;
    let data = DetectionsData {
        attack,
        adversarial,
        summary,
    };
    emit(m, store, stage, &prov, &data)
}

fn sweep(m: &RunManifest, store: &Store) -> CliResult<String> {
    let stage = Stage::Sweep;
    if m.lambda_grid.is_empty() {
        return Err(CliError::Manifest {
            path: PathBuf::from("lambda_grid"),
            message: "sweep needs a non-empty lambda_grid".into(),
        });
    }
    let ds: Loaded<DatasetData> = need(m, store, stage, Stage::GenData)?;
    let model: Loaded<ModelData> = need(m, store, stage, Stage::Train)?;
    let traces: Loaded<TracesData> = need(m, store, stage, Stage::Trace)?;
    let circ: Loaded<CircuitData> = need(m, store, stage, Stage::Discover)?;
    let prov = [(&ds).into(), (&model).into(), (&traces).into(), (&circ).into()];
    check_consistent(&prov)?;
    let net = &model.data().network;
    let c = circ.data();
    let graph = graph_of(net, &c.circuit, stage)?;
    let val = ds.data().split("val").in_stage(stage)?;
    let test = ds.data().split("test").in_stage(stage)?;
    let adversarial = attack_dataset(net, &test, &m.attack_spec()).in_stage(stage)?;
    let inputs = PipelineInputs {
        net,
        graph: &graph,
        ctx: &c.ablation,
        circuit: &c.circuit,
        traces: &traces.data().traces,
        layers: &m.layers,
    };
    let cfg = SweepConfig {
        max_iters: m.clustering.max_iters,
        tol: m.clustering.tol,
        standardize: m.clustering.standardize,
        w_radius: m.w_radius,
        temperature: m.temperature,
    };
    let one = |lambda: f64| -> facade_core::Result<LambdaResult> {
        let entry = run_lambda(&inputs, lambda, &cfg)?;
        let stats = layer_stats(net, &graph, &c.ablation, &c.circuit, inputs.traces, &entry.clusterings)?;
        let clusterings = entry.clusterings.iter().map(ClusterSummary::from).collect();
        let detector = DetectionModel::calibrate(net, entry.clusterings, &val, m.q)?;
        let detection = summarize_detection(
            &detector,
            net,
            &graph,
            &c.ablation,
            &entry.distribution,
            &test,
            ds.data().splits.test[0],
            &adversarial,
        )?;
        Ok(LambdaResult {
            lambda,
            clusterings,
            stats,
            distribution: entry.distribution,
            warnings: entry.warnings,
            detection,
        })
    };
    let entries = m
        .lambda_grid
        .iter()
        .map(|&lambda| match one(lambda) {
            Ok(r) => SweepRow {
                lambda,
                error: None,
                result: Some(r),
            },
            Err(e) => SweepRow {
                lambda,
                error: Some(e.to_string()),
                result: None,
            },
        })
        .collect();
    emit(m, store, stage, &prov, &SweepData { entries })
}

fn report(m: &RunManifest, store: &Store) -> CliResult<String> {
    let stage = Stage::Report;
    let ds: Loaded<DatasetData> = need(m, store, stage, Stage::GenData)?;
    let model: Loaded<ModelData> = need(m, store, stage, Stage::Train)?;
    let set: Loaded<ClusteringsData> = need(m, store, stage, Stage::Cluster)?;
    let circ: Loaded<CircuitData> = need(m, store, stage, Stage::Discover)?;
    let st: Loaded<StatsData> = need(m, store, stage, Stage::Stats)?;
    let dist: Loaded<DistributionData> = need(m, store, stage, Stage::Score)?;
    let det: Loaded<DetectorData> = need(m, store, stage, Stage::Calibrate)?;
    let dets: Loaded<DetectionsData> = need(m, store, stage, Stage::Detect)?;
    let sweep: Option<Loaded<SweepData>> = if store.exists(Stage::Sweep) {
        Some(need(m, store, stage, Stage::Sweep)?)
    } else {
        None
    };
    let mut prov: Vec<Provenance<'_>> = vec![
        (&ds).into(),
        (&model).into(),
        (&set).into(),
        (&circ).into(),
        (&st).into(),
        (&dist).into(),
        (&det).into(),
        (&dets).into(),
    ];
    if let Some(s) = &sweep {
        prov.push(s.into());
    }
    check_consistent(&prov)?;

    let clusterings = select_clusterings(m, &set, &model.sha256)?;
    let primary = LambdaResult {
        lambda: m.lambda,
        clusterings: clusterings.iter().map(ClusterSummary::from).collect(),
        stats: st.data().layers.clone(),
        distribution: dist.data().distribution.clone(),
        warnings: dist.data().warnings.clone(),
        detection: dets.data().summary.clone(),
    };
    let mut lambdas = vec![ReportEntry {
        source: "stages".into(),
        lambda: m.lambda,
        error: None,
        result: Some(primary),
    }];
    if let Some(s) = &sweep {
        lambdas.extend(s.data().entries.iter().cloned().map(|row| ReportEntry {
            source: "sweep".into(),
            lambda: row.lambda,
            error: row.error,
            result: row.result,
        }));
    }
    let md = model.data();
    let report = RunReport {
        schema_version: crate::store::SCHEMA_VERSION,
        manifest: serde_json::to_value(m).expect("manifest serializes"),
        artifacts: input_hashes(&prov),
        model: ModelSummary {
            source: md.source.clone(),
            widths: md.network.widths(),
            epochs: md.epoch_losses.len(),
            final_loss: md.epoch_losses.last().copied(),
            train_accuracy: md.train_accuracy,
            val_accuracy: md.val_accuracy,
            test_accuracy: md.test_accuracy,
        },
        circuit: CircuitSummary {
            circuit: circ.data().circuit.clone(),
            edge_count: graph_of(&md.network, &circ.data().circuit, stage)?.edge_count(),
            circuit_kl: circ.data().circuit_kl,
        },
        lambdas,
    };
    let problems = report.validate();
    if !problems.is_empty() {
        return Err(CliError::Artifact {
            path: store.output_path(stage),
            message: format!("run report failed validation: {}", problems.join("; ")),
        });
    }
    emit(m, store, stage, &prov, &report)
}
