//! Acceptance suite. Each test prints one PASS/FAIL line to stderr and runs
//! alone, so the reported runtimes are not shared with other criteria.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::Rng;

use comfort::datapipe::blob::Reader;
use comfort::datapipe::{
    chronological_split, ctrl_clean, group_by_subject, CtrlConfig, Dataset, PcaModel, SensorSequence,
};
use comfort::encoder::{
    encoder_forward, EncoderConfig, EncoderWeights, PositionalKind, Projection, TargetId,
};
use comfort::library::{
    bundle_load, bundle_save, decode_bundle, encode_bundle, kib, memory_report, AdapterLibrary,
};
use comfort::numerics::rng::seeded;
use comfort::numerics::{finite_diff_grad_check, Adam, AdamState, GradCheckConfig, Matrix};
use comfort::peft::{
    adapter_init, cola_advance_stage, effective_weight, encoder_forward_composed, AdapterBundle, AdapterSpec,
    LowRank, Method, TargetAdapter,
};
use comfort::synth::{healthy_corpus, make_synthetic_task, reference_healthy_model, GmmModel, SyntheticTaskSpec};
use comfort::trainer::{
    evaluate, finetune, mdm_batch, mdm_eval_loss, mdm_loss, mdm_mask, predict_proba, task_loss_and_grad,
    LossScope, MdmObjective, Pretrainer, StrategyRegistry, TaskObjective, TrainConfig,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Collects failed sub-checks and reports the criterion once.
struct Criterion {
    id: u32,
    name: &'static str,
    started: Instant,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Criterion {
    fn new(id: u32, name: &'static str) -> Self {
        Criterion {
            id,
            name,
            started: Instant::now(),
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    /// Prints the verdict and fails the test when any check failed.
    fn finish(mut self, budget: Duration, offset: Duration) {
        let elapsed = self.started.elapsed() + offset;
        if elapsed > budget {
            self.failures
                .push(format!("runtime {:.1}s exceeds {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64()));
        }
        let verdict = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        let mut detail = self.notes.join("; ");
        if !self.failures.is_empty() {
            detail = format!("{} | failed: {}", detail, self.failures.join("; "));
        }
        let line = format!(
            "criterion {} {verdict}: {} ({:.1}s) {detail}\n",
            self.id,
            self.name,
            elapsed.as_secs_f64()
        );
        // Written straight to the process stderr so it survives output capture.
        let _ = std::io::stderr().write_all(line.as_bytes());
        assert!(self.failures.is_empty(), "{line}");
    }
}

fn default_spec(method: Method) -> AdapterSpec {
    AdapterSpec::new(method)
}

fn perturb(b: &mut AdapterBundle, scale: f64, seed: u64) {
    let mut rng = seeded(seed);
    for t in &mut b.targets {
        for st in &mut t.stages {
            for v in st.b.data_mut().iter_mut().chain(st.a.data_mut().iter_mut()) {
                *v += scale * rng.gen_range(-1.0..1.0);
            }
        }
        if let Some(m) = &mut t.magnitude {
            m.iter_mut().for_each(|v| *v *= rng.gen_range(0.5..1.5));
        }
    }
    for p in b.trainable_mut() {
        p.iter_mut().for_each(|v| *v += scale * rng.gen_range(-1.0..1.0));
    }
}

fn bits(w: &EncoderWeights) -> Vec<u64> {
    w.named_params().iter().flat_map(|(_, p)| p.iter().map(|v| v.to_bits())).collect()
}

// ---------------------------------------------------------------------------
// 1. Adapter algebra

#[test]
fn criterion_1_adapter_algebra() {
    let _g = serial();
    let mut c = Criterion::new(1, "adapter algebra");
    let (mut worst_compose, mut worst_norm, mut worst_dora_id) = (0.0f64, 0.0f64, 0.0f64);
    let id = TargetId::new(0, Projection::Query);
    for inst in 0..50u64 {
        let mut rng = seeded(10_000 + inst);
        let r = [1, 4, 8][rng.gen_range(0..3)];
        let d = rng.gen_range(r.max(2)..=128);
        let k = rng.gen_range(r.max(2)..=128);
        let w0 = Matrix::gaussian(d, k, 1.0 / (d as f64).sqrt(), &mut rng);
        let stage = LowRank {
            b: Matrix::gaussian(d, r, 0.1, &mut rng),
            a: Matrix::gaussian(r, k, 0.1, &mut rng),
        };
        let s = rng.gen_range(0.5..4.0);

        // CoLA with a single stage is LoRA.
        let lora = TargetAdapter {
            target: id,
            magnitude: None,
            stages: vec![stage.clone()],
        };
        let e_lora = effective_weight(&w0, &lora, s).unwrap();
        let e_cola = effective_weight(&w0, &lora.clone(), s).unwrap();
        c.check(e_lora == e_cola, || format!("instance {inst}: CoLA l=1 differs from LoRA"));
        let mut oracle = w0.clone();
        for i in 0..d {
            for j in 0..k {
                let mut acc = 0.0;
                for q in 0..r {
                    acc += stage.b.get(i, q) * stage.a.get(q, j);
                }
                oracle.set(i, j, oracle.get(i, j) + s * acc);
            }
        }
        let e = e_lora.max_abs_diff(&oracle);
        c.check(e <= 1e-12, || format!("instance {inst}: LoRA vs loop oracle {e:e}"));

        // DoRA column-norm law.
        let m: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..3.0)).collect();
        let dora = TargetAdapter {
            target: id,
            magnitude: Some(m.clone()),
            stages: vec![stage.clone()],
        };
        let e_dora = effective_weight(&w0, &dora, s).unwrap();
        for (j, n) in e_dora.column_norms().unwrap().iter().enumerate() {
            worst_norm = worst_norm.max((n - m[j]).abs());
        }

        // Zero-initialised adapters.
        let zero = LowRank {
            b: Matrix::zeros(d, r),
            a: stage.a.clone(),
        };
        let z_lora = TargetAdapter {
            target: id,
            magnitude: None,
            stages: vec![zero.clone()],
        };
        c.check(effective_weight(&w0, &z_lora, s).unwrap() == w0, || {
            format!("instance {inst}: zero-B LoRA is not exactly W0")
        });
        let z_dora = TargetAdapter {
            target: id,
            magnitude: Some(w0.column_norms().unwrap()),
            stages: vec![zero],
        };
        worst_dora_id = worst_dora_id.max(effective_weight(&w0, &z_dora, s).unwrap().max_abs_diff(&w0));

        // Merged vs composed forward through a whole encoder.
        let hidden = [16, 32, 64, 128][rng.gen_range(0..4)];
        let cfg = EncoderConfig {
            hidden,
            ffn: 2 * hidden,
            ..EncoderConfig::default()
        };
        let enc = EncoderWeights::xavier(cfg, false, &mut rng).unwrap();
        let method = [Method::Lora, Method::Dora, Method::Cola][rng.gen_range(0..3)];
        let spec = AdapterSpec {
            rank: r,
            alpha: rng.gen_range(1.0..16.0),
            chain_length: 3,
            ..AdapterSpec::new(method)
        };
        let seq = SensorSequence::new(Matrix::gaussian(15, hidden, 1.0, &mut rng), 0, None);
        let plain = encoder_forward(&enc, None, &seq).unwrap();
        let mut b = adapter_init("t", &spec, &enc, 3, inst).unwrap();
        let fresh = encoder_forward(&enc, Some(&b), &seq).unwrap();
        if method == Method::Dora {
            worst_dora_id = worst_dora_id.max(fresh.max_abs_diff(&plain));
        } else {
            c.check(fresh == plain, || format!("instance {inst}: fresh {method} adapter changed the output"));
        }
        if method == Method::Cola {
            for _ in 0..rng.gen_range(0..3) {
                cola_advance_stage(&mut b).unwrap();
            }
        }
        perturb(&mut b, 0.05, inst);
        let merged = encoder_forward(&enc, Some(&b), &seq).unwrap();
        let composed = encoder_forward_composed(&enc, &b, &seq).unwrap();
        worst_compose = worst_compose.max(merged.max_abs_diff(&composed));
    }
    c.check(worst_compose <= 1e-5, || format!("merged vs composed {worst_compose:e}"));
    c.check(worst_norm <= 1e-6, || format!("DoRA norm law {worst_norm:e}"));
    c.check(worst_dora_id <= 1e-6, || format!("zero-init DoRA identity {worst_dora_id:e}"));
    c.note(format!(
        "50 instances; merged/composed {worst_compose:.1e}, DoRA norms {worst_norm:.1e}, DoRA zero-init {worst_dora_id:.1e}"
    ));
    c.finish(Duration::from_secs(10), Duration::ZERO);
}

// ---------------------------------------------------------------------------
// 2. Gradients

#[test]
fn criterion_2_gradients() {
    let _g = serial();
    let mut c = Criterion::new(2, "analytic gradients");
    let cfg = EncoderConfig::default();
    let w0 = EncoderWeights::xavier(cfg, false, &mut seeded(1)).unwrap();
    let w0_bits = bits(&w0);
    let mut rng = seeded(2);
    let x = Matrix::gaussian(30, cfg.hidden, 1.0, &mut rng);
    let labels = vec![0, 2];
    let reg = StrategyRegistry::default();
    let check_cfg = GradCheckConfig {
        probes: 256,
        ..GradCheckConfig::default()
    };
    let mut worst = Vec::new();
    for name in reg.names() {
        let s = reg.get(name).unwrap();
        let spec = AdapterSpec {
            chain_length: 3,
            ..default_spec(s.method())
        };
        // A point away from zero-B and from ReLU kinks within reach of h.
        let mut obj = (0..)
            .map(|seed| {
                let mut b = s.init("t", &spec, &w0, 3, 7).unwrap();
                if s.method() == Method::Cola {
                    cola_advance_stage(&mut b).unwrap();
                }
                perturb(&mut b, 0.02, 100 + seed);
                TaskObjective::new(w0.clone(), b, x.clone(), labels.clone(), s.grad_scope())
            })
            .find(|o| o.relu_margin().unwrap() > 1e-3)
            .unwrap();
        let r = finite_diff_grad_check(&mut obj, check_cfg).unwrap();
        c.check(r.max_relative_error <= 1e-3, || {
            format!("{name}: {:.2e} at {}", r.max_relative_error, r.worst_parameter)
        });
        worst.push(format!("{name} {:.1e}", r.max_relative_error));

        // The gradient covers the trainable set and nothing of W0.
        let (_, g) = task_loss_and_grad(&w0, &obj.bundle, &x, &labels, s.grad_scope()).unwrap();
        let glen: usize = g.iter().map(Vec::len).sum();
        c.check(glen == obj.bundle.trainable_count(), || format!("{name}: gradient length {glen}"));
        if s.method().is_low_rank() {
            let expected: usize = obj
                .bundle
                .targets
                .iter()
                .map(|t| {
                    let st = t.stages.last().unwrap();
                    st.b.len() + st.a.len() + t.magnitude.as_ref().map_or(0, Vec::len)
                })
                .sum::<usize>()
                + obj.bundle.classifier_params();
            c.check(glen == expected, || format!("{name}: gradient reaches beyond adapters"));
        }
    }

    let mdm_w = EncoderWeights::xavier(
        EncoderConfig {
            positional: PositionalKind::Learned,
            ..cfg
        },
        true,
        &mut seeded(3),
    )
    .unwrap();
    let seqs: Vec<SensorSequence> = (0..2)
        .map(|i| SensorSequence::new(x.slice_rows(15 * i, 15 * (i + 1)), 0, None))
        .collect();
    let batch = mdm_batch(&seqs, &[0, 1], LossScope::Masked, &mut seeded(4)).unwrap();
    let r = finite_diff_grad_check(&mut MdmObjective::new(mdm_w, batch), check_cfg).unwrap();
    c.check(r.max_relative_error <= 1e-3, || format!("mdm: {:.2e}", r.max_relative_error));
    worst.push(format!("mdm {:.1e}", r.max_relative_error));

    // Optimiser steps under PEFT leave W0 and frozen CoLA stages bit-identical.
    for name in ["lora", "dora", "cola"] {
        let s = reg.get(name).unwrap();
        let mut b = s.init("t", &default_spec(s.method()), &w0, 3, 9).unwrap();
        if s.method() == Method::Cola {
            perturb(&mut b, 0.02, 5);
            cola_advance_stage(&mut b).unwrap();
        }
        let frozen: Vec<LowRank> = b
            .targets
            .iter()
            .flat_map(|t| t.stages[..t.stages.len() - 1].iter().cloned())
            .collect();
        let adam = Adam::with_lr(0.005);
        let mut st = AdamState::new(b.trainable_mut().iter().map(|p| p.len()));
        for _ in 0..3 {
            let (_, g) = task_loss_and_grad(&w0, &b, &x, &labels, s.grad_scope()).unwrap();
            adam.update(&mut b.trainable_mut(), &g, &mut st).unwrap();
        }
        let after: Vec<LowRank> = b
            .targets
            .iter()
            .flat_map(|t| t.stages[..t.stages.len() - 1].iter().cloned())
            .collect();
        c.check(after == frozen, || format!("{name}: a frozen stage moved"));
        let moved = b.targets.iter().any(|t| t.stages.last().unwrap().b.data().iter().any(|&v| v != 0.0));
        c.check(moved, || format!("{name}: the trainable stage did not move"));
    }
    c.check(bits(&w0) == w0_bits, || "W0 changed".into());
    c.note(format!("max relative error {}; W0 and frozen stages bit-identical", worst.join(", ")));
    c.finish(Duration::from_secs(60), Duration::ZERO);
}

// ---------------------------------------------------------------------------
// 3. Masked data modeling

#[test]
fn criterion_3_mdm_contract() {
    let _g = serial();
    let mut c = Criterion::new(3, "masked data modeling");
    let seq = SensorSequence::new(Matrix::gaussian(15, 128, 1.0, &mut seeded(1)), 0, None);
    let mut bad = 0;
    for seed in 0..1000u64 {
        let (masked, spec) = mdm_mask(&seq, &mut seeded(seed)).unwrap();
        let mut windows = spec.windows.clone();
        windows.dedup();
        let mut ok = windows.len() == 5 && spec.features.iter().all(|f| f.len() == 19) && spec.masked_count() == 95;
        let positions: std::collections::HashSet<(usize, usize)> = spec.positions().collect();
        ok &= positions.len() == 95;
        for i in 0..15 {
            for j in 0..128 {
                if !positions.contains(&(i, j)) {
                    ok &= masked.tokens.get(i, j).to_bits() == seq.tokens.get(i, j).to_bits();
                }
            }
        }
        if !ok {
            bad += 1;
        }
    }
    c.check(bad == 0, || format!("{bad} of 1000 maskings broke the 5×19 contract"));

    let w = EncoderWeights::xavier(EncoderConfig::default(), true, &mut seeded(2)).unwrap();
    let seqs: Vec<SensorSequence> = (0..4)
        .map(|i| SensorSequence::new(Matrix::gaussian(15, 128, 1.0, &mut seeded(20 + i)), 0, None))
        .collect();
    let mut batch = mdm_batch(&seqs, &[0, 1, 2, 3], LossScope::Masked, &mut seeded(3)).unwrap();
    let base = mdm_loss(&w, &batch).unwrap();
    let mut rng = seeded(4);
    for i in 0..batch.target.len() {
        if batch.weight.data()[i] == 0.0 {
            batch.target.data_mut()[i] += rng.gen_range(-5.0..5.0);
        }
    }
    c.check(mdm_loss(&w, &batch).unwrap() == base, || "loss moved with an unmasked target".into());
    let masked_at = batch.weight.data().iter().position(|&v| v == 1.0).unwrap();
    batch.target.data_mut()[masked_at] += 1.0;
    c.check(mdm_loss(&w, &batch).unwrap() != base, || "loss ignores a masked target".into());

    let g = reference_healthy_model(128, 8, 11).unwrap();
    let corpus = healthy_corpus(&g, 15_000, 12).unwrap();
    c.check(corpus.len() == 1000, || format!("corpus has {} sequences", corpus.len()));
    let cfg = TrainConfig::default();
    let mut p = Pretrainer::new(&cfg, EncoderConfig::default(), &corpus).unwrap();
    let init = mdm_eval_loss(p.weights(), &corpus, LossScope::Masked, 128, 99).unwrap();
    let mut best = init;
    while p.epochs_run() < 200 {
        p.run_epoch().unwrap();
        if p.epochs_run() % 10 == 0 {
            best = best.min(mdm_eval_loss(p.weights(), &corpus, LossScope::Masked, 128, 99).unwrap());
            if init / best >= 10.0 {
                break;
            }
        }
    }
    let ratio = init / best;
    c.check(ratio >= 10.0, || format!("masked MSE fell only {ratio:.2}× in 200 epochs"));
    c.note(format!(
        "1000 maskings exact; masked MSE {init:.4} -> {best:.4} ({ratio:.1}×) after {} epochs",
        p.epochs_run()
    ));
    c.finish(Duration::from_secs(600), Duration::ZERO);
}

// ---------------------------------------------------------------------------
// Shared pre-trained foundation for criteria 4 and 6.

struct Foundation {
    healthy: GmmModel,
    w0: EncoderWeights,
    pretrain_time: Duration,
    epochs: usize,
    final_loss: f64,
}

/// Desk-scale pre-training on the 10,000-instance corpus.
const DESK_PRETRAIN_EPOCHS: usize = 60;
/// At 0.005 this corpus stalls on the predict-the-mean plateau.
const DESK_PRETRAIN_LR: f64 = 0.001;

fn foundation() -> &'static Foundation {
    static F: OnceLock<Foundation> = OnceLock::new();
    F.get_or_init(|| {
        let t = Instant::now();
        let healthy = reference_healthy_model(128, 8, 21).unwrap();
        let corpus = healthy_corpus(&healthy, 10_000, 22).unwrap();
        let cfg = TrainConfig {
            lr: DESK_PRETRAIN_LR,
            pretrain_epochs: DESK_PRETRAIN_EPOCHS,
            seed: 23,
            ..TrainConfig::default()
        };
        let out = comfort::trainer::pretrain(&cfg, EncoderConfig::default(), &corpus).unwrap();
        Foundation {
            healthy,
            epochs: out.losses.len(),
            final_loss: *out.losses.last().unwrap(),
            w0: out.weights.without_head(),
            pretrain_time: t.elapsed(),
        }
    })
}

/// Pre-training time to add when another test already paid for it.
fn foundation_offset(started: Instant, f: &Foundation) -> Duration {
    if started.elapsed() >= f.pretrain_time {
        Duration::ZERO
    } else {
        f.pretrain_time
    }
}

fn synthetic(f: &Foundation, task: u32, classes: usize, sep: f64, per_class: usize, seed: u64) -> (Dataset, f64) {
    let spec = SyntheticTaskSpec::separated(task, &f.healthy, classes, sep, per_class, seed).unwrap();
    let bayes = spec.nominal_bayes_accuracy;
    (make_synthetic_task(&spec).unwrap(), bayes)
}

fn prob_bits(p: &Matrix) -> Vec<u64> {
    p.data().iter().map(|v| v.to_bits()).collect()
}

// ---------------------------------------------------------------------------
// 4. Continual scenario

#[test]
fn criterion_4_continual_scenario() {
    let _g = serial();
    let started = Instant::now();
    let f = foundation();
    let offset = foundation_offset(started, f);
    let mut c = Criterion::new(4, "continual scenario");
    c.started = started;
    let (task_a, bayes_a) = synthetic(f, 1, 3, 3.0, 60, 31);
    let (task_b, bayes_b) = synthetic(f, 2, 4, 3.0, 60, 32);
    c.check(bayes_a >= 0.99 && bayes_b >= 0.99, || format!("nominal Bayes {bayes_a:.4}/{bayes_b:.4}"));
    let reg = StrategyRegistry::default();
    let cfg = TrainConfig {
        seed: 5,
        ..TrainConfig::default()
    };
    let w0_bits = bits(&f.w0);
    let mut notes = Vec::new();
    for name in ["lora", "dora", "cola"] {
        let dir = tempfile::tempdir().unwrap();
        let lib = AdapterLibrary::open(dir.path()).unwrap();
        let s = reg.get(name).unwrap();
        let spec = default_spec(s.method());

        let a = finetune(&f.w0, &task_a, s, &spec, "task-a", &cfg).unwrap();
        lib.add(&a.bundle, false).unwrap();
        let stored_a = lib.get("task-a").unwrap();
        let acc_a = evaluate(&f.w0, &stored_a, &task_a.splits.test, 0).unwrap().accuracy;
        let before = predict_proba(&f.w0, &stored_a, &task_a.splits.test).unwrap();

        let b = finetune(&f.w0, &task_b, s, &spec, "task-b", &cfg).unwrap();
        lib.add(&b.bundle, false).unwrap();
        let acc_b = evaluate(&f.w0, &lib.get("task-b").unwrap(), &task_b.splits.test, 0).unwrap().accuracy;
        let after = predict_proba(&f.w0, &lib.get("task-a").unwrap(), &task_a.splits.test).unwrap();

        c.check(acc_a >= 0.90, || format!("{name}: task A accuracy {acc_a:.3}"));
        c.check(acc_b >= 0.90, || format!("{name}: task B accuracy {acc_b:.3}"));
        c.check(prob_bits(&before) == prob_bits(&after), || {
            format!("{name}: task A predictions changed after learning B")
        });
        notes.push(format!("{name} A {acc_a:.3} B {acc_b:.3}"));
    }
    c.check(bits(&f.w0) == w0_bits, || "W0 changed".into());
    c.note(format!(
        "pretrain {} epochs to loss {:.4}; {}; task A predictions bit-identical after B",
        f.epochs,
        f.final_loss,
        notes.join(", ")
    ));
    c.finish(Duration::from_secs(1800), offset);
}

// ---------------------------------------------------------------------------
// 5. Memory accounting

#[test]
fn criterion_5_memory() {
    let _g = serial();
    let mut c = Criterion::new(5, "memory accounting");
    let cfg = EncoderConfig::default();
    let w0 = EncoderWeights::xavier(cfg, false, &mut seeded(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let lib = AdapterLibrary::open(dir.path()).unwrap();
    for (task, classes) in [("task-a", 3), ("task-b", 4)] {
        let mut b = adapter_init(task, &default_spec(Method::Lora), &w0, classes, 7).unwrap();
        perturb(&mut b, 0.01, classes as u64);
        b.round_to_f32();
        lib.add(&b, false).unwrap();
    }
    let bundles = lib.bundles().unwrap();
    let r = memory_report(&w0, &bundles);

    let w0_kib = kib(r.foundation_params);
    let dev = (w0_kib - 1600.0).abs() / 1600.0;
    c.check(dev <= 0.08, || format!("W0 {w0_kib:.1} KB is {:.1}% from 1600", 100.0 * dev));
    c.check(r.ratio_vs_scratch() <= 0.66, || format!("library/scratch {:.3}", r.ratio_vs_scratch()));
    c.check(r.ratio_vs_full() <= 0.48, || format!("library/full {:.3}", r.ratio_vs_full()));

    // Brute force: walk every tensor of W0 and of the bundles read back from disk.
    let mut bytes = 0usize;
    for (name, p) in w0.named_params() {
        if !name.starts_with("head") {
            bytes += 4 * p.len();
        }
    }
    let mut per_task_model = 0usize;
    for b in &bundles {
        for t in &b.targets {
            bytes += 4 * t.magnitude.as_ref().map_or(0, Vec::len);
            for st in &t.stages {
                bytes += 4 * (st.b.rows() * st.b.cols() + st.a.rows() * st.a.cols());
            }
        }
        let mut clf = 0;
        for l in &b.classifier.layers {
            clf += l.weight.rows() * l.weight.cols() + l.bias.len();
        }
        bytes += 4 * clf;
        per_task_model += 4 * (cfg.encoder_params() + clf);
    }
    c.check(bytes == 4 * r.library_params, || format!("walk {bytes} B vs report {} B", 4 * r.library_params));
    c.check(per_task_model == 4 * r.scratch_params, || "scratch total disagrees with the walk".into());
    c.check(per_task_model + 4 * cfg.encoder_params() == 4 * r.full_params, || {
        "full fine-tune total disagrees with the walk".into()
    });

    let bundle_mean = bundles.iter().map(|b| b.stored_params() as f64).sum::<f64>() / 2.0;
    let model_mean = r.scratch_params as f64 / 2.0;
    let mut prev = r.project(1).unwrap();
    for n in 2..=10 {
        let cur = r.project(n).unwrap();
        c.check(cur.0 > prev.0 && cur.1 > prev.1 && cur.2 > prev.2, || format!("projection not monotone at {n}"));
        c.check((cur.0 - prev.0 - bundle_mean).abs() < 1e-6, || format!("library step at {n}"));
        c.check((cur.1 - prev.1 - model_mean).abs() < 1e-6, || format!("scratch step at {n}"));
        c.check((cur.2 - prev.2 - model_mean).abs() < 1e-6, || format!("full step at {n}"));
        c.check(cur.0 < cur.1 && cur.1 < cur.2, || format!("ordering at {n} tasks"));
        prev = cur;
    }
    c.note(format!(
        "W0 {w0_kib:.0} KB; library {:.0} KB, scratch {:.0} KB, full {:.0} KB; ratios {:.3}/{:.3}; 10 tasks {:.0}/{:.0}/{:.0} KB",
        r.library_kib(),
        r.scratch_kib(),
        r.full_kib(),
        r.ratio_vs_scratch(),
        r.ratio_vs_full(),
        kib(prev.0 as usize),
        kib(prev.1 as usize),
        kib(prev.2 as usize)
    ));
    c.finish(Duration::from_secs(60), Duration::ZERO);
}

// ---------------------------------------------------------------------------
// 6. Data fraction

#[test]
fn criterion_6_data_fraction() {
    let _g = serial();
    let started = Instant::now();
    let f = foundation();
    let offset = foundation_offset(started, f);
    let mut c = Criterion::new(6, "data fraction");
    c.started = started;
    let (task, _) = synthetic(f, 1, 3, C6_SEPARATION, C6_PER_CLASS, 41);
    let reg = StrategyRegistry::default();
    let run = |name: &str, fraction: f64| {
        let s = reg.get(name).unwrap();
        let cfg = TrainConfig {
            fraction,
            seed: 6,
            ..TrainConfig::default()
        };
        finetune(&f.w0, &task, s, &default_spec(s.method()), "task-a", &cfg).unwrap().test.accuracy
    };
    let lora_full = run("lora", 1.0);
    let lora_70 = run("lora", 0.7);
    let scratch_full = run("scratch", 1.0);
    let scratch_70 = run("scratch", 0.7);
    c.check(lora_70 >= lora_full - 0.01, || {
        format!("LoRA at 70% {lora_70:.3} vs 100% {lora_full:.3}")
    });
    c.check(scratch_70 < lora_70 || scratch_70 < scratch_full - 0.01, || {
        format!("scratch at 70% {scratch_70:.3} matches LoRA {lora_70:.3} and its own 100% {scratch_full:.3}")
    });
    c.note(format!(
        "LoRA 100% {lora_full:.3} 70% {lora_70:.3}; scratch 100% {scratch_full:.3} 70% {scratch_70:.3}"
    ));
    c.finish(Duration::from_secs(3600), offset);
}

/// Task A's shape (3 classes, 3σ) with more sequences per class.
const C6_SEPARATION: f64 = 3.0;
const C6_PER_CLASS: usize = 100;

// ---------------------------------------------------------------------------
// 7. Preprocessing

#[test]
fn criterion_7_preprocessing() {
    let _g = serial();
    let mut c = Criterion::new(7, "preprocessing oracles");

    // PCA: explained variance equals the mass of the score variances.
    let mut rng = seeded(1);
    let d = 12;
    let z = Matrix::gaussian(600, d, 1.0, &mut rng);
    let mix = Matrix::gaussian(d, d, 1.0, &mut rng);
    let x = z.matmul(&mix).unwrap();
    let (n, nf) = (x.rows(), x.rows() as f64);
    let mut std_x = Matrix::zeros(n, d);
    for j in 0..d {
        let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / nf;
        let sd = ((0..n).map(|i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / nf).sqrt();
        for i in 0..n {
            std_x.set(i, j, (x.get(i, j) - mean) / sd);
        }
    }
    let trace: f64 = (0..d).map(|j| (0..n).map(|i| std_x.get(i, j).powi(2)).sum::<f64>() / nf).sum();
    let full = PcaModel::fit_matrix(&x, d).unwrap();
    let scores = std_x.matmul(&full.projection).unwrap();
    let score_var: Vec<f64> = (0..d).map(|j| (0..n).map(|i| scores.get(i, j).powi(2)).sum::<f64>() / nf).collect();
    let mut worst_ev = 0.0f64;
    for k in 1..=d {
        let m = PcaModel::fit_matrix(&x, k).unwrap();
        let oracle = score_var[..k].iter().sum::<f64>() / trace;
        worst_ev = worst_ev.max((m.explained_variance_ratio - oracle).abs());
    }
    c.check(worst_ev <= 1e-9, || format!("explained variance off by {worst_ev:e}"));
    let back = full.reconstruct_standardised(&full.transform(&x).unwrap()).unwrap();
    let rec = back.max_abs_diff(&std_x);
    c.check(rec <= 1e-5, || format!("k=D reconstruction error {rec:e}"));

    // CTRL on planted label flips.
    let mut recovered = Vec::new();
    for seed in 0..3u64 {
        let base = reference_healthy_model(16, 4, seed).unwrap();
        let spec = SyntheticTaskSpec::separated(1, &base, 3, 3.0, 300, seed).unwrap();
        let mut ds = make_synthetic_task(&spec).unwrap();
        let n = ds.splits.train.len();
        let mut rng = seeded(100 + seed);
        let planted = sample(&mut rng, n, n / 10).into_vec();
        for &i in &planted {
            let y = ds.splits.train[i].label.unwrap();
            ds.splits.train[i].label = Some((y + rng.gen_range(1..3)) % 3);
        }
        let out = ctrl_clean(&ds.splits.train, 3, &CtrlConfig::default(), seed).unwrap();
        let hit = planted.iter().filter(|i| out.rejected.contains(i)).count();
        let share = hit as f64 / planted.len() as f64;
        c.check(share >= 0.8, || format!("CTRL seed {seed} recovered {share:.2}"));
        recovered.push(format!("{share:.2}"));
    }

    // Split counts on random rosters against integer arithmetic.
    let mut rng = seeded(7);
    let mut split_errors = 0;
    for _ in 0..200 {
        let subjects = rng.gen_range(1..25u32);
        let mut seqs = Vec::new();
        let mut counts = Vec::new();
        for s in 0..subjects {
            let k = rng.gen_range(1..60usize);
            counts.push(k);
            for i in 0..k {
                seqs.push(SensorSequence::new(Matrix::from_fn(15, 1, |_, _| i as f64), s, Some(0)));
            }
        }
        seqs.reverse();
        seqs.sort_by_key(|s| s.subject);
        for group in seqs.chunk_by_mut(|a, b| a.subject == b.subject) {
            group.reverse();
        }
        let split = chronological_split(group_by_subject(seqs), 0.7, 0.1).unwrap();
        for (s, &k) in counts.iter().enumerate() {
            let (tr, va) = (7 * k / 10, k / 10);
            let pick = |v: &[SensorSequence]| -> Vec<f64> {
                v.iter().filter(|q| q.subject == s as u32).map(|q| q.tokens.get(0, 0)).collect()
            };
            let want = |r: std::ops::Range<usize>| -> Vec<f64> { r.map(|i| i as f64).collect() };
            if pick(&split.train) != want(0..tr)
                || pick(&split.validation) != want(tr..tr + va)
                || pick(&split.test) != want(tr + va..k)
            {
                split_errors += 1;
            }
        }
    }
    c.check(split_errors == 0, || format!("{split_errors} subjects split wrongly"));
    c.note(format!(
        "explained variance {worst_ev:.1e}; reconstruction {rec:.1e}; CTRL recovery {}; 200 rosters exact",
        recovered.join("/")
    ));
    c.finish(Duration::from_secs(600), Duration::ZERO);
}

// ---------------------------------------------------------------------------
// 8. Serialization

fn random_bundle(method: Method, rng: &mut impl Rng, seed: u64) -> (EncoderWeights, AdapterBundle) {
    let heads = [1, 2][rng.gen_range(0..2)];
    let hidden = heads * rng.gen_range(2..8);
    let cfg = EncoderConfig {
        layers: rng.gen_range(1..3),
        hidden,
        heads,
        ffn: rng.gen_range(2..20),
        positional: if rng.gen_bool(0.5) { PositionalKind::Learned } else { PositionalKind::Sinusoidal },
        ..EncoderConfig::default()
    };
    let w0 = EncoderWeights::xavier(cfg, false, rng).unwrap();
    let mut targets = w0.all_targets();
    targets.retain(|_| rng.gen_bool(0.6));
    if targets.is_empty() {
        targets.push(w0.all_targets()[0]);
    }
    let spec = AdapterSpec {
        method,
        rank: rng.gen_range(1..=hidden.min(4)),
        alpha: rng.gen_range(0.5..32.0),
        chain_length: rng.gen_range(1..4),
        targets: Some(targets),
    };
    let classes = rng.gen_range(2..6);
    let mut b = adapter_init(&format!("task-{seed}"), &spec, &w0, classes, seed).unwrap();
    if method == Method::Cola {
        for _ in 0..rng.gen_range(0..spec.chain_length) {
            cola_advance_stage(&mut b).unwrap();
        }
    }
    perturb(&mut b, 0.1, seed);
    b.meta.class_names = (0..classes).map(|i| format!("class {i}")).collect();
    b.meta.healthy_class = rng.gen_range(0..classes);
    b.meta.dataset_fingerprint = format!("{:016x}", rng.gen::<u64>());
    (w0, b)
}

#[test]
fn criterion_8_serialization() {
    let _g = serial();
    let mut c = Criterion::new(8, "serialization");
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded(8);
    let mut truncations = 0usize;
    let mut round_trips = 0usize;
    for method in Method::ALL {
        for i in 0..100u64 {
            let (_, b) = random_bundle(method, &mut rng, i);
            let p1 = dir.path().join("a.cmfb");
            let p2 = dir.path().join("b.cmfb");
            bundle_save(&p1, &b).unwrap();
            let loaded = bundle_load(&p1).unwrap();
            bundle_save(&p2, &loaded).unwrap();
            let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
            c.check(b1 == b2, || format!("{method} bundle {i} changed across save/load/save"));
            round_trips += 1;

            if i < 3 {
                let mut buf = Vec::new();
                encode_bundle(&b, &mut buf).unwrap();
                c.check(buf == b1, || format!("{method} bundle {i}: file differs from encoding"));
                for cut in 0..buf.len() {
                    let mut r = Reader::new(&buf[..cut]);
                    let ok = decode_bundle(&mut r).and_then(|b| r.finish().map(|_| b)).is_ok();
                    c.check(!ok, || format!("{method} bundle {i}: {cut}-byte prefix accepted"));
                    truncations += 1;
                }
            }
        }
    }

    // A truncated library file fails to load and leaves the rest usable.
    let lib_dir = dir.path().join("lib");
    let lib = AdapterLibrary::open(&lib_dir).unwrap();
    let (_, a) = random_bundle(Method::Lora, &mut rng, 500);
    let (_, b) = random_bundle(Method::Dora, &mut rng, 501);
    lib.add(&a, false).unwrap();
    lib.add(&b, false).unwrap();
    let listed = lib.list().unwrap();
    let path = lib_dir.join(format!("{}.cmfb", a.task));
    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 3, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        c.check(lib.get(&a.task).is_err(), || format!("library loaded a {cut}-byte prefix"));
        c.check(lib.list().unwrap() == listed, || "library index changed".into());
        c.check(lib.get(&b.task).unwrap() == lib.get(&b.task).unwrap(), || "other task unreadable".into());
    }
    std::fs::write(&path, &bytes).unwrap();
    c.check(lib.get(&a.task).is_ok(), || "restored file unreadable".into());

    c.note(format!("{round_trips} byte-identical round trips; {truncations} truncations rejected"));
    c.finish(Duration::from_secs(600), Duration::ZERO);
}
