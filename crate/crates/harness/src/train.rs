//! The layer-wise training loop: forward with the previous step's λ, loss,
//! backward, AGS update, parameter update.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use surge_core::models::beale::{beale_on_tape, distance_to_optimum};
use surge_core::models::classifier::{build_classifier, Architecture, Classifier};
use surge_core::models::data::{bars, two_moons, Dataset};
use surge_core::models::toy::{build_toy_model, ToyConfig};
use surge_core::nn::{Layer, Network};
use surge_core::tensor::Tensor;
use surge_core::theory::cosine_similarity;
use surge_core::{Mode, Tape};

use crate::checkpoint;
use crate::config::{ArchKind, DatasetKind, ExperimentConfig, Task};
use crate::error::{HarnessError, Result};

pub const METRICS_HEADER: [&str; 17] = [
    "step",
    "seed",
    "method",
    "loss",
    "dist_to_opt",
    "lambda_l1",
    "lambda_l2",
    "wb_norm_l1",
    "wb_norm_l2",
    "wa_norm_l1",
    "wa_norm_l2",
    "alpha_w_l1",
    "alpha_x_l1",
    "alpha_w_l2",
    "alpha_x_l2",
    "cos_w",
    "cos_x",
];

/// One logged step. Layer columns refer to the first two binarizable layers;
/// values a layer does not have are left empty.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub step: usize,
    pub seed: u64,
    pub method: Mode,
    pub loss: f64,
    pub dist_to_opt: Option<f64>,
    pub lambda: [Option<f64>; 2],
    pub wb_norm: [Option<f64>; 2],
    pub wa_norm: [Option<f64>; 2],
    pub alpha_w: [Option<f64>; 2],
    pub alpha_x: [Option<f64>; 2],
    pub cos_w: Option<f64>,
    pub cos_x: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricRow {
    pub fn record(&self) -> Vec<String> {
        let mut r = vec![
            self.step.to_string(),
            self.seed.to_string(),
            self.method.to_string(),
            self.loss.to_string(),
            cell(self.dist_to_opt),
        ];
        r.extend(self.lambda.iter().map(|&v| cell(v)));
        r.extend(self.wb_norm.iter().map(|&v| cell(v)));
        r.extend(self.wa_norm.iter().map(|&v| cell(v)));
        for i in 0..2 {
            r.push(cell(self.alpha_w[i]));
            r.push(cell(self.alpha_x[i]));
        }
        r.push(cell(self.cos_w));
        r.push(cell(self.cos_x));
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Forward,
    Loss,
    Backward,
    AgsUpdate,
    ParamUpdate,
}

/// Scale bookkeeping of one compensated layer at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AgsRecord {
    pub step: usize,
    /// 1-based index among the compensated layers.
    pub layer: usize,
    /// λ consumed by this step's forward pass.
    pub lambda_used: f64,
    pub norm_b: f64,
    pub norm_a: f64,
    /// λ produced from this step's gradients, consumed by the next step.
    pub lambda_next: f64,
    /// `‖λ_next · g_a‖₂`.
    pub compensator_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationGrads {
    /// 1-based binarizable layer.
    pub layer: usize,
    pub steps: Vec<(usize, Vec<f64>)>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub method: Mode,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    /// Loss at every step, whatever the logging interval.
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub final_point: Option<(f64, f64)>,
    pub final_dist: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub ags: Vec<AgsRecord>,
    pub events: Vec<(usize, Event)>,
    pub activations: Option<ActivationGrads>,
    pub network: Network,
}

enum Objective {
    Beale,
    Classify { train: Dataset, test: Dataset },
}

struct Setup {
    network: Network,
    input: Tensor,
    objective: Objective,
    /// Layer indices of the binarizable positions.
    slots: Vec<usize>,
}

/// Load `feature..., label` rows; labels must be integers.
pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let fmt = |msg: String| HarnessError::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| fmt(e.to_string()))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let vals: Vec<&str> = rec.iter().collect();
        if vals.len() < 2 || *width.get_or_insert(vals.len()) != vals.len() {
            return Err(fmt(format!(
                "row {}: expected a consistent `features..., label` row",
                i + 1
            )));
        }
        for v in &vals[..vals.len() - 1] {
            data.push(
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| fmt(format!("row {}: {e}", i + 1)))?,
            );
        }
        labels.push(
            vals[vals.len() - 1]
                .trim()
                .parse::<usize>()
                .map_err(|e| fmt(format!("row {}: label: {e}", i + 1)))?,
        );
    }
    let width = width.ok_or_else(|| fmt("no rows".into()))? - 1;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Dataset::new(
        Tensor::new(vec![labels.len(), width], data)?,
        labels,
        classes,
    )?)
}

fn classifier_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let c = &cfg.classifier;
    let data = match (&c.data_csv, c.dataset) {
        (Some(path), _) => load_csv_dataset(path)?,
        (None, DatasetKind::Moons) => two_moons(c.samples, c.noise, c.data_seed),
        (None, DatasetKind::Bars) => bars(c.samples, c.image_size, c.noise, c.data_seed),
    };
    Ok(data.split(c.test_fraction, c.data_seed.wrapping_add(1))?)
}

pub fn classifier_architecture(cfg: &ExperimentConfig, train: &Dataset) -> Architecture {
    let c = &cfg.classifier;
    match c.arch {
        ArchKind::Mlp => Architecture::Mlp { sizes: c.sizes.clone() },
        ArchKind::Cnn => {
            let s = train.features.shape();
            let dim = |i: usize| s.get(i).copied().unwrap_or(0);
            Architecture::Cnn {
                in_channels: dim(1),
                height: dim(2),
                width: dim(3),
                channels: c.channels.clone(),
                classes: train.classes,
            }
        }
    }
}

fn setup(cfg: &ExperimentConfig, method: Mode, seed: u64) -> Result<Setup> {
    let opts = cfg.surge_options();
    match cfg.task {
        Task::Beale => {
            let toy = ToyConfig {
                input_dim: cfg.input_dim,
                hidden: cfg.hidden,
            };
            let model = build_toy_model(&toy, [method; 2], &opts, seed)?;
            Ok(Setup {
                network: model.network,
                input: model.input,
                objective: Objective::Beale,
                slots: vec![0, 1],
            })
        }
        Task::Classifier => {
            let (train, test) = classifier_data(cfg)?;
            let arch = classifier_architecture(cfg, &train);
            let Classifier { network, .. } = build_classifier(&arch, method, &opts, seed)?;
            let n_layers = network.layers().count();
            Ok(Setup {
                network,
                input: train.features.clone(),
                objective: Objective::Classify { train, test },
                slots: (1..n_layers - 1).collect(),
            })
        }
        Task::Theory => Err(HarnessError::config(
            "task `theory` has no training loop; use the theory command",
        )),
    }
}

fn nonfinite(method: Mode, seed: u64, step: usize, detail: impl Into<String>) -> HarnessError {
    HarnessError::NonFinite {
        method: method.to_string(),
        seed,
        step,
        detail: detail.into(),
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-slot diagnostics of a layer's current parameters.
fn slot_stats(layer: &Layer) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    match layer {
        Layer::Dense(d) => (Some(d.weight.norm_l2()), None, None, None),
        Layer::Binarized { layer, .. } => (
            Some(layer.weight.norm_l2()),
            None,
            Some(layer.alpha_w.data()[0]),
            Some(layer.alpha_x.data()[0]),
        ),
        Layer::Dpgc(d) => (
            Some(d.main.weight.norm_l2()),
            Some(d.aux_weight.norm_l2()),
            Some(d.main.alpha_w.data()[0]),
            Some(d.main.alpha_x.data()[0]),
        ),
    }
}

/// Train one `(method, seed)` replica of the configured task.
pub fn run_training(cfg: &ExperimentConfig, method: Mode, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let Setup {
        mut network,
        input,
        objective,
        slots,
    } = setup(cfg, method, seed)?;
    if let Some(k) = cfg.instrument_layer {
        if k > slots.len() {
            return Err(HarnessError::config(format!(
                "instrument_layer {k} out of range; the model has {} binarizable layers",
                slots.len()
            )));
        }
    }
    let dpgc_ordinal: Vec<Option<usize>> = network
        .layers()
        .scan(0, |k, l| {
            Some(matches!(l, Layer::Dpgc(_)).then(|| {
                *k += 1;
                *k - 1
            }))
        })
        .collect();
    let mut optimizer = cfg.optimizer.build();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);

    let mut rows = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut ags = Vec::new();
    let mut events = Vec::with_capacity(5 * cfg.steps);
    let mut activations = cfg.instrument_layer.map(|layer| ActivationGrads {
        layer,
        steps: Vec::new(),
    });
    let mut last_point = None;
    let core_err = |step: usize| {
        move |e: surge_core::Error| match e {
            surge_core::Error::NonFinite { op } => nonfinite(method, seed, step, format!("in {op}")),
            other => HarnessError::Core(other),
        }
    };

    for step in 0..cfg.steps {
        let logged = step % cfg.log_every == 0 || step + 1 == cfg.steps;
        let mut tape = Tape::new();
        let binding = network.bind(&mut tape);
        let x = tape.leaf(input.clone());
        let trace = network
            .forward(&mut tape, x, &binding, Some(&mut noise_rng))
            .map_err(core_err(step))?;
        events.push((step, Event::Forward));

        let loss = match &objective {
            Objective::Beale => beale_on_tape(&mut tape, trace.output),
            Objective::Classify { train, .. } => tape.softmax_cross_entropy(trace.output, &train.labels),
        }
        .map_err(core_err(step))?;
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(nonfinite(method, seed, step, "loss"));
        }
        events.push((step, Event::Loss));
        losses.push(loss_value);
        if matches!(objective, Objective::Beale) {
            let out = tape.value(trace.output).data();
            last_point = Some((out[0], out[1]));
        }

        let grads = tape.backward(loss)?;
        events.push((step, Event::Backward));

        let split = network.dpgc_gradients(&tape, &grads, &trace)?;
        let lambdas_used: Vec<f64> = network.dpgc_layers().map(|d| d.ags.lambda).collect();
        for (i, (layer, g)) in network.dpgc_layers_mut().zip(&split).enumerate() {
            let next = layer.ags.update(&g.g_b, &g.g_a);
            let (norm_b, norm_a) = layer.ags.last_norms.expect("set by update");
            ags.push(AgsRecord {
                step,
                layer: i + 1,
                lambda_used: lambdas_used[i],
                norm_b,
                norm_a,
                lambda_next: next,
                compensator_norm: g.g_a.scale(next).norm_l2(),
            });
        }
        events.push((step, Event::AgsUpdate));

        if logged {
            if let Some(act) = activations.as_mut() {
                let id = trace.layers[slots[act.layer - 1]].input();
                act.steps.push((step, grads.get(id)?.data().to_vec()));
            }
            let layers: Vec<&Layer> = network.layers().collect();
            let mut row = MetricRow {
                step,
                seed,
                method,
                loss: loss_value,
                dist_to_opt: last_point.map(|(px, py)| distance_to_optimum(px, py)),
                lambda: [None; 2],
                wb_norm: [None; 2],
                wa_norm: [None; 2],
                alpha_w: [None; 2],
                alpha_x: [None; 2],
                cos_w: mean(
                    &split
                        .iter()
                        .filter_map(|g| cosine_similarity(g.g_wb.data(), g.g_wa.data()).ok())
                        .collect::<Vec<_>>(),
                ),
                cos_x: mean(
                    &split
                        .iter()
                        .filter_map(|g| cosine_similarity(g.g_b.data(), g.g_a.data()).ok())
                        .collect::<Vec<_>>(),
                ),
            };
            for (i, &li) in slots.iter().take(2).enumerate() {
                let (wb, wa, aw, ax) = slot_stats(layers[li]);
                row.wb_norm[i] = wb;
                row.wa_norm[i] = wa;
                row.alpha_w[i] = aw;
                row.alpha_x[i] = ax;
                row.lambda[i] = dpgc_ordinal[li].map(|k| lambdas_used[k]);
            }
            rows.push(row);
        }

        let param_grads = binding
            .params
            .iter()
            .map(|&id| grads.get(id).cloned())
            .collect::<surge_core::Result<Vec<_>>>()?;
        if param_grads.iter().any(|g| !g.all_finite()) {
            return Err(nonfinite(method, seed, step, "parameter gradient"));
        }
        optimizer.step(&mut network.params_mut(), &param_grads)?;
        network.clamp_scales();
        if network.params().iter().any(|p| !p.all_finite()) {
            return Err(nonfinite(method, seed, step, "parameter update"));
        }
        events.push((step, Event::ParamUpdate));
    }

    let (final_loss, final_point, test_accuracy) = match &objective {
        Objective::Beale => {
            let out = network.eval(&input)?;
            let (px, py) = (out.data()[0], out.data()[1]);
            (surge_core::models::beale::beale(px, py), Some((px, py)), None)
        }
        Objective::Classify { train, test } => {
            let mut tape = Tape::new();
            let logits = tape.leaf(network.eval(&train.features)?);
            let l = tape.softmax_cross_entropy(logits, &train.labels)?;
            let loss = tape.value(l).data()[0];
            let clf = Classifier {
                network: network.clone(),
                architecture: classifier_architecture(cfg, train),
            };
            let acc = if test.is_empty() {
                clf.accuracy(&train.features, &train.labels)?
            } else {
                clf.accuracy(&test.features, &test.labels)?
            };
            (loss, None, Some(acc))
        }
    };
    if !final_loss.is_finite() {
        return Err(nonfinite(method, seed, cfg.steps, "final loss"));
    }
    Ok(RunResult {
        method,
        seed,
        rows,
        losses,
        final_loss,
        final_dist: final_point.map(|(x, y)| distance_to_optimum(x, y)),
        final_point,
        test_accuracy,
        ags,
        events,
        activations,
        network,
    })
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r.record()).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(HarnessError::io(path))
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => HarnessError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => HarnessError::Format {
            path: path.to_path_buf(),
            msg: format!("{other:?}"),
        },
    }
}

fn write_ags(path: &Path, records: &[AgsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(HarnessError::io(path))
}

pub fn activations_file(layer: usize) -> String {
    format!("activations_l{layer}.csv")
}

fn write_activations(path: &Path, act: &ActivationGrads) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["step", "index", "value"])
        .map_err(|e| csv_err(path, e))?;
    for (step, vals) in &act.steps {
        for (i, v) in vals.iter().enumerate() {
            w.write_record([step.to_string(), i.to_string(), v.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(HarnessError::io(path))
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: String,
    method: Mode,
    seed: u64,
    steps: usize,
    package: &'static str,
    version: &'static str,
    final_loss: f64,
    final_point: Option<(f64, f64)>,
    final_dist: Option<f64>,
    test_accuracy: Option<f64>,
    has_auxiliary: bool,
    files: Vec<&'a str>,
}

pub fn run_dir(output_dir: &Path, method: Mode, seed: u64) -> PathBuf {
    output_dir.join(format!("{}-seed{seed}", method.slug()))
}

/// Write metrics, AGS log, manifest, checkpoint and recorded activations to `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &RunResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let act_name = run.activations.as_ref().map(|a| activations_file(a.layer));
    let mut files = vec!["metrics.csv", "ags.csv", "model.srge"];
    write_metrics(&dir.join("metrics.csv"), &run.rows)?;
    write_ags(&dir.join("ags.csv"), &run.ags)?;
    checkpoint::save(&dir.join("model.srge"), &run.network, false)?;
    if let (Some(act), Some(name)) = (&run.activations, &act_name) {
        write_activations(&dir.join(name), act)?;
        files.push(name);
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        method: run.method,
        seed: run.seed,
        steps: cfg.steps,
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        final_loss: run.final_loss,
        final_point: run.final_point,
        final_dist: run.final_dist,
        test_accuracy: run.test_accuracy,
        has_auxiliary: run.network.has_auxiliary(),
        files,
    };
    let path = dir.join("manifest.json");
    let mut f = fs::File::create(&path).map_err(HarnessError::io(&path))?;
    serde_json::to_writer_pretty(&mut f, &manifest).expect("manifest serializes");
    f.write_all(b"\n").map_err(HarnessError::io(&path))
}
