//! End-to-end acceptance checks, one test per criterion.
//!
//! Run with `cargo test -p surge-harness --test acceptance -- --nocapture`
//! to see the PASS/FAIL line each check prints.

use std::fs;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surge_core::dpgc::{dpgc_backward, dpgc_forward, scope_mask, DpgcGradients, DpgcLayer, Scope};
use surge_core::quant::{binary_forward, BinarizedLayer, Operator, SurrogateRule};
use surge_core::theory::{
    lambda_star_analytic, norm_ratio_approx, random_model, run_experiment, GradMomentModel, DEFAULT_RESOLUTION,
};
use surge_core::{Mode, NodeId, Tape, Tensor};
use surge_harness::checkpoint;
use surge_harness::compare::{eta_sweep, noise_contrast, run_all, summarize, MethodSummary, RunSummary, Summary};
use surge_harness::config::{SweepConfig, Task};
use surge_harness::histogram::gradient_histogram;
use surge_harness::train::{run_dir, run_training, write_run, RunResult};
use surge_harness::ExperimentConfig;

const EVAL_SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

fn report(id: usize, name: &str, pass: bool, detail: String, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "{verdict} [{id:2}] {name}: {detail} ({:.1}s)",
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "{name}: {detail}");
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

struct LayerCase {
    layer: DpgcLayer,
    input_shape: Vec<usize>,
}

/// A random compensated layer with a random auxiliary weight and λ.
fn random_case(rng: &mut ChaCha8Rng, index: usize, batch: usize) -> LayerCase {
    let conv = index % 2 == 1;
    let one_by_one = conv && index % 4 == 3;
    let rule = if index.is_multiple_of(3) {
        SurrogateRule::bireal()
    } else {
        SurrogateRule::ste()
    };
    let scope = [Scope::All, Scope::ClippedOnly, Scope::InRangeOnly][index % 3];
    let (weight, input_shape, op) = if conv {
        let (cin, cout, k) = (rng.gen_range(1..4), rng.gen_range(1..4), [1, 3, 5][index % 3]);
        let side = rng.gen_range(k.max(3)..7);
        (
            uniform(rng, &[cout, cin, k, k], -1.0, 1.0),
            vec![batch, cin, side, side],
            Operator::Conv2d,
        )
    } else {
        let (din, dout) = (rng.gen_range(1..20), rng.gen_range(1..12));
        (
            uniform(rng, &[dout, din], -1.0, 1.0),
            vec![batch, din],
            Operator::Linear,
        )
    };
    let main = BinarizedLayer::new(op, weight, rule).unwrap();
    let mut layer = DpgcLayer::new(main, 0.01, 1e-8, scope, one_by_one).unwrap();
    let aux_shape = layer.aux_weight.shape().to_vec();
    layer.aux_weight = uniform(rng, &aux_shape, -2.0, 2.0);
    layer.ags.lambda = rng.gen_range(0.0..3.0);
    LayerCase { layer, input_shape }
}

#[test]
fn forward_identity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    let mut kinds = (0, 0, 0);
    for i in 0..24 {
        let case = random_case(&mut rng, i, 10_000);
        match (case.layer.main.operator, case.layer.aux_weight.shape().get(2)) {
            (Operator::Linear, _) => kinds.0 += 1,
            (Operator::Conv2d, Some(1)) if case.layer.main.weight.shape()[2] != 1 => kinds.2 += 1,
            _ => kinds.1 += 1,
        }
        let x = uniform(&mut rng, &case.input_shape, -3.0, 3.0);
        let reference = case.layer.main.eval(&x).unwrap();
        let mut tape = Tape::new();
        let b = case.layer.bind(&mut tape);
        let xi = tape.leaf(x.clone());
        let (out, _) = dpgc_forward(&mut tape, xi, &case.layer, &b).unwrap();
        if !tape.value(out).bit_eq(&reference) {
            mismatches += 1;
        }
        if !case.layer.clone().strip().eval(&x).unwrap().bit_eq(&reference) {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0 && kinds.0 > 0 && kinds.1 > 0 && kinds.2 > 0;
    let detail = format!(
        "24 layers ({} linear, {} conv, {} conv with 1x1 auxiliary) x 10000 inputs, {mismatches} mismatches",
        kinds.0, kinds.1, kinds.2
    );
    report(1, "forward identity", pass, detail, started);
}

/// Weighted-sum loss through the compensated layer; returns the split gradients.
fn split_gradients(layer: &DpgcLayer, x: &Tensor, weights: &Tensor) -> DpgcGradients {
    let mut tape = Tape::new();
    let b = layer.bind(&mut tape);
    let xi = tape.leaf(x.clone());
    let (out, trace) = dpgc_forward(&mut tape, xi, layer, &b).unwrap();
    let loss = weighted_sum(&mut tape, out, weights);
    let grads = tape.backward(loss).unwrap();
    dpgc_backward(&tape, &grads, &trace, layer).unwrap()
}

fn weighted_sum(tape: &mut Tape, out: NodeId, weights: &Tensor) -> NodeId {
    let w = tape.leaf(weights.clone());
    let p = tape.mul(out, w).unwrap();
    tape.sum(p).unwrap()
}

#[test]
fn gradient_decomposition() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut worst_fd = 0.0f64;
    for i in 0..40 {
        let case = random_case(&mut rng, i, 3);
        let layer = &case.layer;
        let x = uniform(&mut rng, &case.input_shape, -2.5, 2.5);
        let out_shape = layer.main.eval(&x).unwrap().shape().to_vec();
        let weights = uniform(&mut rng, &out_shape, -1.0, 1.0);
        let split = split_gradients(layer, &x, &weights);

        // binary branch on its own tape
        let mut t = Tape::new();
        let bb = layer.main.bind(&mut t);
        let xb = t.leaf(x.clone());
        let ob = binary_forward(&mut t, xb, &layer.main, &bb).unwrap();
        let lb = weighted_sum(&mut t, ob, &weights);
        let g_b = t.backward(lb).unwrap().wrt(xb).clone();

        // auxiliary branch on its own tape, masked afterwards
        let mut t = Tape::new();
        let xa = t.leaf(x.clone());
        let wa = t.leaf(layer.aux_weight.clone());
        let oa = layer.main.operator.apply(&mut t, xa, wa).unwrap();
        let la = weighted_sum(&mut t, oa, &weights);
        let raw = t.backward(la).unwrap().wrt(xa).clone();
        let g_a = scope_mask(&raw, &x, layer.scope, layer.main.rule.clip_bound()).unwrap();

        let expected = g_b.add(&g_a.scale(layer.ags.lambda)).unwrap();
        worst = worst
            .max(split.total.sub(&expected).unwrap().max_abs())
            .max(split.g_b.sub(&g_b).unwrap().max_abs())
            .max(split.g_a.sub(&g_a).unwrap().max_abs());

        // central differences of the full-precision branch
        if layer.scope == Scope::All {
            let h = 1e-5;
            let f = |xv: &Tensor| {
                let o = layer.main.operator.eval(xv, &layer.aux_weight).unwrap();
                o.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut fd = vec![0.0; x.len()];
            for (j, slot) in fd.iter_mut().enumerate() {
                let mut p = x.clone();
                p.data_mut()[j] += h;
                let mut m = x.clone();
                m.data_mut()[j] -= h;
                *slot = (f(&p) - f(&m)) / (2.0 * h);
            }
            let diff: f64 = split
                .g_a
                .data()
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst_fd = worst_fd.max(diff / norm.max(1e-12));
        }
    }
    let pass = worst < 1e-12 && worst_fd < 1e-6;
    let detail = format!("max |total - (g_b + λ g_a)| = {worst:.2e}, auxiliary FD rel. err {worst_fd:.2e}");
    report(2, "gradient decomposition", pass, detail, started);
}

#[test]
fn surrogate_and_scope() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut leaks = 0usize;
    let mut outside = 0usize;
    let mut partition_errors = 0usize;
    for i in 0..30 {
        // straight-through activations
        let w = uniform(&mut rng, &[5, 12], -1.0, 1.0);
        let layer = BinarizedLayer::new(Operator::Linear, w, SurrogateRule::ste()).unwrap();
        let x = uniform(&mut rng, &[8, 12], -3.0, 3.0);
        let mut t = Tape::new();
        let b = layer.bind(&mut t);
        let xi = t.leaf(x.clone());
        let o = binary_forward(&mut t, xi, &layer, &b).unwrap();
        let weights = uniform(&mut rng, &[8, 5], -1.0, 1.0);
        let l = weighted_sum(&mut t, o, &weights);
        let g = t.backward(l).unwrap().wrt(xi).clone();
        for (gv, xv) in g.data().iter().zip(x.data()) {
            if xv.abs() > 1.0 {
                outside += 1;
                if *gv != 0.0 {
                    leaks += 1;
                }
            }
        }

        // scope partition on real compensator gradients
        let mut case = random_case(&mut rng, 3 * i + 1, 2);
        let x = uniform(&mut rng, &case.input_shape, -2.5, 2.5);
        let out_shape = case.layer.main.eval(&x).unwrap().shape().to_vec();
        let weights = uniform(&mut rng, &out_shape, -1.0, 1.0);
        let mut parts = Vec::new();
        for scope in [Scope::All, Scope::ClippedOnly, Scope::InRangeOnly] {
            case.layer.scope = scope;
            parts.push(split_gradients(&case.layer, &x, &weights).g_a);
        }
        if !parts[1].add(&parts[2]).unwrap().bit_eq(&parts[0]) {
            partition_errors += 1;
        }
    }
    let pass = leaks == 0 && outside > 0 && partition_errors == 0;
    let detail =
        format!("{leaks} nonzero of {outside} clipped activation gradients, {partition_errors} partition failures");
    report(3, "surrogate gradients and scope masks", pass, detail, started);
}

#[test]
fn ags_contract() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        steps: 500,
        seeds: vec![0],
        ..ExperimentConfig::default()
    };
    let run = run_training(&cfg, Mode::SteSurge, 0).unwrap();
    write_run(dir.path(), &cfg, &run).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("ags.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (c_step, c_layer, c_used, c_b, c_a, c_next, c_comp) = (
        col("step"),
        col("layer"),
        col("lambda_used"),
        col("norm_b"),
        col("norm_a"),
        col("lambda_next"),
        col("compensator_norm"),
    );
    let mut rows: Vec<[f64; 7]> = Vec::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let get = |c: usize| rec[c].parse::<f64>().unwrap();
        rows.push([
            get(c_step),
            get(c_layer),
            get(c_used),
            get(c_b),
            get(c_a),
            get(c_next),
            get(c_comp),
        ]);
    }
    let mut rule_err = 0.0f64;
    let mut lag_breaks = 0;
    let mut bound_breaks = 0;
    for layer in [1.0, 2.0] {
        let mine: Vec<_> = rows.iter().filter(|r| r[1] == layer).collect();
        assert_eq!(mine.len(), 500);
        for (k, r) in mine.iter().enumerate() {
            assert_eq!(r[0], k as f64);
            let expect = cfg.eta * r[3] / (r[4] + 1e-8);
            rule_err = rule_err.max((r[5] - expect).abs() / expect.abs().max(1e-300));
            if r[6] > cfg.eta * r[3] * (1.0 + 1e-12) {
                bound_breaks += 1;
            }
            if k + 1 < mine.len() && mine[k + 1][2] != r[5] {
                lag_breaks += 1;
            }
        }
    }
    let pass = rule_err < 1e-12 && lag_breaks == 0 && bound_breaks == 0;
    let detail = format!(
        "1000 logged updates, max rel. rule error {rule_err:.1e}, {lag_breaks} lag violations, {bound_breaks} bound violations"
    );
    report(4, "adaptive scale contract", pass, detail, started);
}

#[test]
fn optimal_scale_theorem() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_identity = 0.0f64;
    for i in 0..20u64 {
        let d = [8, 32, 128][i as usize % 3];
        let model = random_model(d, 1000 + i).unwrap();
        let r = run_experiment(&model, 100_000, i, DEFAULT_RESOLUTION).unwrap();
        worst = worst.max(r.relative_error);
        let exact = lambda_star_analytic(&model).unwrap();
        let approx = norm_ratio_approx(&model).unwrap().lambda_approx;
        worst_identity = worst_identity.max((approx - exact).abs() / exact.abs().max(1.0));
    }
    let mu_a: Vec<f64> = (0..16).map(|i| 0.2 + 0.1 * i as f64).collect();
    let aligned = GradMomentModel::isotropic(vec![0.5; 16], mu_a.clone(), mu_a, 0.0, 0.0).unwrap();
    let r = run_experiment(&aligned, 1000, 0, DEFAULT_RESOLUTION).unwrap();
    let aligned_err = (r.lambda_star_analytic - 1.0)
        .abs()
        .max((r.lambda_star_oracle - 1.0).abs());
    let pass = worst < 0.05 && aligned_err < 1e-9 && worst_identity < 1e-12;
    let detail = format!(
        "20 models: max rel. error {worst:.4}; aligned noiseless |λ*-1| = {aligned_err:.1e}; norm-ratio identity {worst_identity:.1e}"
    );
    report(5, "optimal scale theorem", pass, detail, started);
}

fn beale_config(methods: Vec<Mode>) -> ExperimentConfig {
    ExperimentConfig {
        task: Task::Beale,
        methods,
        seeds: EVAL_SEEDS.to_vec(),
        ..ExperimentConfig::default()
    }
}

fn run_summary(cfg: &ExperimentConfig) -> (Summary, Vec<RunResult>) {
    let runs: Vec<RunResult> = run_all(cfg).into_iter().map(|r| r.unwrap()).collect();
    let summaries: Vec<RunSummary> = runs.iter().map(RunSummary::of).collect();
    (summarize(&cfg.methods, &cfg.seeds, &summaries).unwrap(), runs)
}

fn method(summary: &Summary, m: Mode) -> &MethodSummary {
    summary.methods.iter().find(|s| s.method == m).unwrap()
}

/// Standard deviation over mean; a constant series counts as 0.
fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        0.0
    } else {
        var.sqrt() / mean.abs()
    }
}

#[test]
fn toy_beale_study() {
    let started = Instant::now();
    let cfg = beale_config(vec![
        Mode::Fp,
        Mode::Ste,
        Mode::SteSurge,
        Mode::BiReal,
        Mode::BiRealSurge,
    ]);
    let (summary, runs) = run_summary(&cfg);
    let loss = |m| method(&summary, m).median_final_loss;
    let dist = |m| method(&summary, m).median_final_dist.unwrap();
    let mut worst_cv = 0.0f64;
    for run in runs.iter().filter(|r| r.method.uses_surge()) {
        for layer in [1, 2] {
            let lambdas: Vec<f64> = run
                .ags
                .iter()
                .filter(|a| a.layer == layer && a.step >= cfg.steps / 2)
                .map(|a| a.lambda_used)
                .collect();
            worst_cv = worst_cv.max(coefficient_of_variation(&lambdas));
        }
    }
    let checks = [
        ("STE+SURGE loss <= STE", loss(Mode::SteSurge) <= loss(Mode::Ste)),
        ("STE+SURGE distance <= STE", dist(Mode::SteSurge) <= dist(Mode::Ste)),
        (
            "BiReal+SURGE loss <= BiReal",
            loss(Mode::BiRealSurge) <= loss(Mode::BiReal),
        ),
        (
            "BiReal+SURGE distance <= BiReal",
            dist(Mode::BiRealSurge) <= dist(Mode::BiReal),
        ),
        ("max λ CV < 0.25", worst_cv < 0.25),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = format!(
        "median loss / distance: FP {:.4}/{:.4}, STE {:.4}/{:.4}, STE+SURGE {:.4}/{:.4}, BiReal {:.4}/{:.4}, BiReal+SURGE {:.4}/{:.4}; max λ CV {worst_cv:.3}; failed: {failed:?}",
        loss(Mode::Fp),
        dist(Mode::Fp),
        loss(Mode::Ste),
        dist(Mode::Ste),
        loss(Mode::SteSurge),
        dist(Mode::SteSurge),
        loss(Mode::BiReal),
        dist(Mode::BiReal),
        loss(Mode::BiRealSurge),
        dist(Mode::BiRealSurge),
    );
    report(6, "toy Beale study", failed.is_empty(), detail, started);
}

#[test]
fn noise_contrast_study() {
    let started = Instant::now();
    let cfg = beale_config(vec![Mode::Ste, Mode::SteNoise, Mode::SteSurge]);
    let (summary, _) = run_summary(&cfg);
    let nc = noise_contrast(&summary).unwrap();
    let detail = format!(
        "trajectory std noise {:.4} vs SURGE {:.4}; median loss SURGE {:.4} vs noise {:.4}",
        nc.noise.median_trajectory_std,
        nc.surge.median_trajectory_std,
        nc.surge.median_final_loss,
        nc.noise.median_final_loss
    );
    report(
        7,
        "noise contrast",
        nc.noise_more_volatile && nc.surge_beats_noise,
        detail,
        started,
    );
}

#[test]
fn gradient_distribution() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        instrument_layer: Some(2),
        output_dir: dir.path().to_path_buf(),
        ..beale_config(vec![Mode::Ste, Mode::SteSurge])
    };
    let seed = EVAL_SEEDS[0];
    let mut lambdas = Vec::new();
    for m in [Mode::Ste, Mode::SteSurge] {
        let run = run_training(&cfg, m, seed).unwrap();
        lambdas.extend(run.ags.iter().filter(|a| a.layer == 2).map(|a| a.lambda_used));
        write_run(&run_dir(dir.path(), m, seed), &cfg, &run).unwrap();
    }
    let surge = run_dir(dir.path(), Mode::SteSurge, seed);
    let ste = run_dir(dir.path(), Mode::Ste, seed);
    let h = gradient_histogram(&surge, Some(&ste), 2, 50).unwrap();
    let base = h.baseline.unwrap();
    let mean_lambda = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
    let active = lambdas.iter().filter(|&&l| l > 0.0).count() as f64 / lambdas.len() as f64;
    let pass = mean_lambda > 0.0 && h.run.zero_fraction <= base.zero_fraction;
    let detail = format!(
        "zero fraction SURGE {:.4} vs STE {:.4} over {} values; mean λ {mean_lambda:.2e}, positive on {:.0}% of steps",
        h.run.zero_fraction,
        base.zero_fraction,
        h.run.count,
        100.0 * active
    );
    report(8, "activation gradient zeros", pass, detail, started);
}

fn classifier_config(methods: Vec<Mode>, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        task: Task::Classifier,
        methods,
        seeds,
        steps: 1000,
        log_every: 100,
        ..ExperimentConfig::default()
    }
}

#[test]
fn synthetic_classifier() {
    let started = Instant::now();
    let cfg = classifier_config(vec![Mode::Ste, Mode::SteSurge], EVAL_SEEDS.to_vec());
    assert_eq!(cfg.classifier.samples, 1000);
    let (summary, _) = run_summary(&cfg);
    let ste = method(&summary, Mode::Ste).mean_test_accuracy.unwrap();
    let surge = method(&summary, Mode::SteSurge).mean_test_accuracy.unwrap();
    let detail = format!("mean test accuracy over 10 seeds: STE+SURGE {surge:.4} vs STE {ste:.4}");
    report(9, "synthetic classifier", surge >= ste, detail, started);
}

#[test]
fn eta_sweep_table() {
    let started = Instant::now();
    let sweep = SweepConfig::default();
    let cfg = ExperimentConfig {
        sweep: Some(sweep.clone()),
        ..classifier_config(vec![Mode::Ste, Mode::SteSurge], vec![0, 1, 2])
    };
    let entries = eta_sweep(&cfg).unwrap();
    let surge: Vec<_> = entries.iter().filter(|e| e.method == Mode::SteSurge).collect();
    let complete = entries
        .iter()
        .all(|e| e.completed + e.failures.len() == cfg.seeds.len())
        && sweep.etas.iter().all(|&eta| surge.iter().any(|e| e.eta == Some(eta)))
        && sweep
            .fixed_lambdas
            .iter()
            .all(|&l| surge.iter().any(|e| e.fixed_lambda == Some(l)))
        && entries.iter().any(|e| e.method == Mode::Ste);
    let (lo, hi) = (sweep.etas[0], sweep.etas[sweep.etas.len() - 1]);
    let interior_failures: usize = surge
        .iter()
        .filter(|e| e.eta.is_some_and(|x| x > lo && x < hi))
        .map(|e| e.failures.len())
        .sum();
    let table: Vec<String> = surge
        .iter()
        .map(|e| {
            let label = match (e.eta, e.fixed_lambda) {
                (Some(x), _) => format!("η={x}"),
                (_, Some(l)) => format!("λ={l}"),
                _ => unreachable!(),
            };
            format!(
                "{label}:{}",
                e.mean_test_accuracy.map_or("-".into(), |a| format!("{a:.3}"))
            )
        })
        .collect();
    let detail = format!(
        "{} rows, complete={complete}, interior aborts {interior_failures}; {}",
        entries.len(),
        table.join(" ")
    );
    report(10, "eta sweep", complete && interior_failures == 0, detail, started);
}

#[test]
fn determinism_and_checkpoint() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut exact = true;
    for (task, m) in [
        (Task::Beale, Mode::BiRealSurge),
        (Task::Classifier, Mode::SteSurge),
        (Task::Beale, Mode::SteNoise),
    ] {
        let cfg = ExperimentConfig {
            task,
            steps: 200,
            instrument_layer: Some(1),
            ..ExperimentConfig::default()
        };
        let a = run_training(&cfg, m, 7).unwrap();
        let b = run_training(&cfg, m, 7).unwrap();
        let (da, db) = (dir.path().join("a"), dir.path().join("b"));
        write_run(&da, &cfg, &a).unwrap();
        write_run(&db, &cfg, &b).unwrap();
        for f in [
            "metrics.csv",
            "ags.csv",
            "model.srge",
            "activations_l1.csv",
            "manifest.json",
        ] {
            identical &= fs::read(da.join(f)).unwrap() == fs::read(db.join(f)).unwrap();
        }
        let (_, net) = checkpoint::load(&da.join("model.srge")).unwrap();
        let lean_path = dir.path().join("lean.srge");
        let lean = checkpoint::strip_file(&da.join("model.srge"), &lean_path).unwrap();
        let (_, lean_back) = checkpoint::load(&lean_path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = match task {
            Task::Beale => Tensor::ones(&[1, cfg.input_dim]),
            _ => uniform(&mut rng, &[256, 2], -2.0, 2.0),
        };
        let want = a.network.eval(&x).unwrap();
        exact &= net == a.network && lean == lean_back;
        exact &= net.eval(&x).unwrap().bit_eq(&want) && lean_back.eval(&x).unwrap().bit_eq(&want);
    }
    let detail = format!("identical run files: {identical}; checkpoint and stripped checkpoint forward-exact: {exact}");
    report(11, "determinism and checkpoint", identical && exact, detail, started);
}
