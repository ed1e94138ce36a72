//! The nine subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use asc_core::compress::{
    self, compress_model, init_rng, kib_display, magnitude_prune, quantize_sym,
    write_pack_file, PruneScope, QuantScheme, SizeReport,
};
use asc_core::data::{write_metadata_csv, MetaRow};
use asc_core::devicesim::{
    apply_device_waveform, build_benchmark, clip_rng, device_profiles, make_splits, scene_specs,
    separability_audit, split_rng, synth_clip, validate_scene_set, Benchmark, SplitSpec,
    SEPARABILITY_DB, SEPARABILITY_FRAC,
};
use asc_core::dsp::{features_from_clip, log_mel, write_lmel};
use asc_core::error::Error;
use asc_core::model::{receptive_field, Model};
use asc_core::scalar::Scalar;
use asc_core::train::{evaluate, train, EvalReport, TrainOpts};
use asc_core::wav::read_wav_file;

use crate::config::{self, Config};
use crate::dataset::{data_dir, ensure_dir, load_checkpoint, load_corpus, load_model, LoadedModel};
use crate::fail::Fail;
use crate::manifest::{JsonlWriter, Manifest};

fn eval_json(e: &EvalReport) -> serde_json::Value {
    json!({
        "overall_accuracy": e.overall_accuracy,
        "log_loss": e.log_loss,
        "accuracy_variance": e.accuracy_variance,
        "per_device": e.per_device,
        "missing_devices": e.missing_devices,
    })
}

fn print_eval(tag: &str, e: &EvalReport) {
    let devices = e
        .per_device
        .iter()
        .map(|(d, a)| format!("{d} {:.1}%", 100.0 * a))
        .collect::<Vec<_>>()
        .join(", ");
    println!(
        "{tag}: accuracy {:.1}%, log loss {:.4} ({devices})",
        100.0 * e.overall_accuracy,
        e.log_loss
    );
}

/// Flattens a clip path into a collision-free feature file name.
fn lmel_name(filename: &str) -> String {
    let flat = filename.replace(['/', '\\'], "_");
    let stem = flat.strip_suffix(".wav").unwrap_or(&flat);
    format!("{stem}.lmel")
}

pub fn cmd_features(
    input: Option<PathBuf>,
    out: &Path,
    mut cfg: Config,
) -> Result<(), Fail> {
    let input = data_dir(input)?;
    let feat = config::feature_config(&mut cfg);
    let resolved = cfg.finish()?;

    let meta_path = input.join("meta.csv");
    if !meta_path.exists() {
        return Err(Fail::validation(format!(
            "no clips: {} has no meta.csv",
            input.display()
        )));
    }
    let rows = asc_core::data::read_metadata_csv(&meta_path).map_err(|e| match e {
        Error::Data(d) if d.contains("no clips") => Fail::validation(format!("no clips: {d}")),
        other => Fail::from(other),
    })?;

    ensure_dir(out)?;
    let mut index = Vec::new();
    let mut failures = 0usize;
    for r in &rows {
        let wav_path = input.join(&r.filename);
        let outcome = read_wav_file(&wav_path)
            .and_then(|clip| features_from_clip::<f32>(&clip, &feat))
            .and_then(|features| {
                let name = lmel_name(&r.filename);
                write_lmel(&out.join(&name), &features)?;
                Ok(name)
            });
        match outcome {
            Ok(name) => index.push(MetaRow {
                filename: name,
                scene_label: r.scene_label.clone(),
                device_id: r.device_id.clone(),
            }),
            Err(e) => {
                eprintln!("skipping {}: {e}", r.filename);
                failures += 1;
            }
        }
    }

    if !index.is_empty() {
        write_metadata_csv(&out.join("features.csv"), &index)?;
    }
    let mut manifest = Manifest::new("features", resolved);
    manifest.input("audio", &input);
    manifest.output("features", out);
    manifest.write(out)?;

    println!(
        "featurized {} of {} clips into {}",
        index.len(),
        rows.len(),
        out.display()
    );
    if failures > 0 {
        return Err(Fail::partial(format!(
            "{failures} of {} clips failed; see log above",
            rows.len()
        )));
    }
    Ok(())
}

pub fn cmd_synth_data(out: &Path, mut cfg: Config) -> Result<(), Fail> {
    let seed = config::seed(&mut cfg, asc_core::devicesim::SimConfig::default().seed);
    let sim = config::sim_config(&mut cfg, seed);
    let split = config::split_spec(&mut cfg);
    let feat = config::feature_config(&mut cfg);
    let format = cfg.get_str("format", "lmel");
    if format != "lmel" && format != "wav" {
        cfg.push_error(format!("format: `{format}` is neither lmel nor wav"));
    }
    let resolved = cfg.finish()?;

    ensure_dir(&out.join("train"))?;
    ensure_dir(&out.join("test"))?;

    let mut report = JsonlWriter::new(out.join("synth-data.jsonl"));
    let (train_rows, test_rows, audit_frac) = if format == "lmel" {
        synth_lmel(out, &sim, &split, &feat, &mut report)?
    } else {
        synth_wav(out, &sim, &split, &feat, &mut report)?
    };

    write_metadata_csv(&out.join("train.csv"), &train_rows)?;
    write_metadata_csv(&out.join("test.csv"), &test_rows)?;
    report.write()?;

    let mut manifest = Manifest::new("synth-data", resolved);
    manifest.output("train", out.join("train.csv"));
    manifest.output("test", out.join("test.csv"));
    manifest.output("report", report.path());
    manifest.write(out)?;

    println!(
        "synthesized {} train + {} test clips ({format}) into {} (audit worst-pair fraction {:.2})",
        train_rows.len(),
        test_rows.len(),
        out.display(),
        audit_frac
    );
    Ok(())
}

type SynthRows = (Vec<MetaRow>, Vec<MetaRow>, f64);

fn synth_lmel(
    out: &Path,
    sim: &asc_core::devicesim::SimConfig,
    split: &SplitSpec,
    feat: &asc_core::dsp::FeatureConfig,
    report: &mut JsonlWriter,
) -> Result<SynthRows, Fail> {
    let b: Benchmark<f32> = build_benchmark(sim, split, feat)?;
    let emit = |dir: &str,
                    corpus: &asc_core::data::Corpus<f32>,
                    assignments: &[asc_core::devicesim::Assignment]|
     -> Result<Vec<MetaRow>, Fail> {
        let mut rows = Vec::new();
        for (i, a) in assignments.iter().enumerate() {
            let name = format!("{dir}/clip{:04}_{}.lmel", a.clip, a.device);
            write_lmel(&out.join(&name), &corpus.features[i])?;
            rows.push(MetaRow {
                filename: name,
                scene_label: format!("scene{:02}", corpus.labels[i]),
                device_id: a.device.clone(),
            });
        }
        Ok(rows)
    };
    let train_rows = emit("train", &b.train, &b.splits.train)?;
    let test_rows = emit("test", &b.test, &b.splits.test)?;

    report.push(json!({"split": "train", "clips": train_rows.len()}));
    report.push(json!({"split": "test", "clips": test_rows.len()}));
    report.push(json!({
        "audit_worst_frac": b.audit.worst_frac(),
        "audit_threshold_db": b.audit.threshold_db,
    }));
    Ok((train_rows, test_rows, b.audit.worst_frac()))
}

/// Waveform route: device coloring through the FIR-style filter, clips
/// written as WAVs. Clips are regenerated per assignment from their streams
/// so nothing is held in memory.
fn synth_wav(
    out: &Path,
    sim: &asc_core::devicesim::SimConfig,
    split: &SplitSpec,
    feat: &asc_core::dsp::FeatureConfig,
    report: &mut JsonlWriter,
) -> Result<SynthRows, Fail> {
    let specs = scene_specs(sim.n_classes, sim.clip_secs, sim.seed);
    validate_scene_set(&specs)?;
    let n_per_class = split.needed_per_class();

    // Separability audit on a per-class sample before writing anything.
    let sample = n_per_class.min(4);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        for i in 0..sample {
            let clip = synth_clip(spec, sim.sample_rate, &mut clip_rng(sim.seed, k * n_per_class + i));
            feats.push(log_mel::<f32>(&clip, feat)?);
            labels.push(k);
        }
    }
    let audit = separability_audit(&feats, &labels, sim.n_classes, SEPARABILITY_DB, SEPARABILITY_FRAC)?;
    if !audit.pass() {
        return Err(Fail::validation(format!(
            "class separability audit failed: worst pair fraction {:.3}, need {:.2}",
            audit.worst_frac(),
            SEPARABILITY_FRAC
        )));
    }

    let all_labels: Vec<usize> = (0..sim.n_classes)
        .flat_map(|k| std::iter::repeat(k).take(n_per_class))
        .collect();
    let profiles = device_profiles(split, feat.mel_bins, sim);
    let splits = make_splits(&all_labels, split, &mut split_rng(sim.seed))?;

    let emit = |dir: &str, assignments: &[asc_core::devicesim::Assignment]| -> Result<Vec<MetaRow>, Fail> {
        let mut rows = Vec::new();
        for a in assignments {
            let k = all_labels[a.clip];
            let clip = synth_clip(&specs[k], sim.sample_rate, &mut clip_rng(sim.seed, a.clip));
            let profile = profiles
                .iter()
                .find(|p| p.device_id == a.device)
                .expect("assignment devices come from the split");
            let colored = apply_device_waveform(&clip, profile, feat)?;
            let name = format!("{dir}/clip{:04}_{}.wav", a.clip, a.device);
            asc_core::wav::write_wav_file(
                &out.join(&name),
                &colored,
                asc_core::wav::WavEncoding::Pcm16,
            )?;
            rows.push(MetaRow {
                filename: name,
                scene_label: format!("scene{k:02}"),
                device_id: a.device.clone(),
            });
        }
        Ok(rows)
    };
    let train_rows = emit("train", &splits.train)?;
    let test_rows = emit("test", &splits.test)?;

    report.push(json!({"split": "train", "clips": train_rows.len()}));
    report.push(json!({"split": "test", "clips": test_rows.len()}));
    report.push(json!({
        "audit_worst_frac": audit.worst_frac(),
        "audit_threshold_db": audit.threshold_db,
    }));
    Ok((train_rows, test_rows, audit.worst_frac()))
}

pub fn cmd_train(data: Option<PathBuf>, out: &Path, mut cfg: Config) -> Result<(), Fail> {
    let data = data_dir(data)?;
    let (corpus, classes) = load_corpus(&data, "train.csv")?;
    let fs = corpus.feature_shape();

    let seed = config::seed(&mut cfg, 0);
    let model_cfg = config::model_config(&mut cfg, fs.f, classes.len());
    let train_cfg = config::train_config(&mut cfg, seed);
    let eval_during = cfg.get("eval_during", false);
    if model_cfg.num_classes != classes.len() {
        cfg.push_error(format!(
            "num_classes: {} but train.csv has {} scene labels",
            model_cfg.num_classes,
            classes.len()
        ));
    }
    let resolved = cfg.finish()?;

    let test_path = data.join("test.csv");
    let eval_set = if test_path.exists() {
        Some(load_corpus(&data, "test.csv")?.0)
    } else {
        None
    };

    let model = Model::build(model_cfg, &mut init_rng(seed))?;
    let outcome = train(
        model,
        &corpus,
        if eval_during { eval_set.as_ref() } else { None },
        &train_cfg,
        TrainOpts::default(),
    )?;

    ensure_dir(out)?;
    let ckpt = out.join("model.bcrm");
    asc_core::checkpoint::write_model_file(&ckpt, &outcome.model)?;

    let mut report = JsonlWriter::new(out.join("train.jsonl"));
    for r in &outcome.history {
        let mut line = json!({
            "epoch": r.epoch,
            "lr": r.lr,
            "train_loss": r.train_loss,
        });
        if let Some(e) = &r.eval {
            line["eval"] = eval_json(e);
        }
        report.push(line);
    }
    let final_eval = match &eval_set {
        Some(set) => {
            let e = evaluate(&outcome.model, set)?;
            report.push(json!({"final": true, "eval": eval_json(&e)}));
            Some(e)
        }
        None => None,
    };
    report.write()?;

    let mut manifest = Manifest::new("train", resolved);
    manifest.input("data", &data);
    manifest.output("checkpoint", &ckpt);
    manifest.output("report", report.path());
    manifest.write(out)?;

    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs (final loss {:.4}) -> {}",
        outcome.history.len(),
        last.train_loss,
        ckpt.display()
    );
    if let Some(e) = &final_eval {
        print_eval("test", e);
    }
    Ok(())
}

pub fn cmd_eval(
    model_path: &Path,
    data: Option<PathBuf>,
    csv: &str,
    out: &Path,
    cfg: Config,
) -> Result<(), Fail> {
    let data = data_dir(data)?;
    let resolved = cfg.finish()?;
    let loaded = load_model(model_path)?;
    let (corpus, _) = load_corpus(&data, csv)?;
    let e = evaluate(loaded.model(), &corpus)?;

    ensure_dir(out)?;
    let mut report = JsonlWriter::new(out.join("eval.jsonl"));
    let mut line = eval_json(&e);
    line["model"] = json!(model_path.display().to_string());
    line["format"] = json!(loaded.format());
    report.push(line);
    report.write()?;

    let mut manifest = Manifest::new("eval", resolved);
    manifest.input("model", model_path);
    manifest.input("data", &data);
    manifest.output("report", report.path());
    manifest.write(out)?;

    print_eval("eval", &e);
    Ok(())
}

pub fn cmd_prune(model_path: &Path, out: &Path, mut cfg: Config) -> Result<(), Fail> {
    let ratio = cfg.get("prune_ratio", 0.89);
    let scope = cfg.get_with("prune_scope", PruneScope::Global, |s| {
        PruneScope::parse(s).map_err(|e| e.to_string())
    });
    let resolved = cfg.finish()?;

    let mut model = load_checkpoint(model_path)?;
    let mask = magnitude_prune(&model, ratio, scope)?;
    mask.apply(&mut model);

    ensure_dir(out)?;
    let ckpt = out.join("model.bcrm");
    asc_core::checkpoint::write_model_file(&ckpt, &model)?;

    let layers: BTreeMap<String, serde_json::Value> = mask
        .masks()
        .iter()
        .map(|(name, m)| {
            let kept = m.iter().filter(|&&k| k).count();
            (name.clone(), json!({"total": m.len(), "kept": kept}))
        })
        .collect();
    let mut report = JsonlWriter::new(out.join("prune.jsonl"));
    report.push(json!({
        "ratio": ratio,
        "scope": scope.name(),
        "total": mask.total(),
        "kept": mask.kept(),
        "sparsity": mask.sparsity(),
        "layers": layers,
    }));
    report.write()?;

    let mut manifest = Manifest::new("prune", resolved);
    manifest.input("model", model_path);
    manifest.output("checkpoint", &ckpt);
    manifest.output("report", report.path());
    manifest.write(out)?;

    println!(
        "pruned to {:.2}% sparsity ({} of {} conv weights kept) -> {}",
        100.0 * mask.sparsity(),
        mask.kept(),
        mask.total(),
        ckpt.display()
    );
    Ok(())
}

pub fn cmd_quantize(model_path: &Path, out: &Path, mut cfg: Config) -> Result<(), Fail> {
    let scheme = cfg.get_with("quant_scheme", QuantScheme::int8(), |s| {
        QuantScheme::parse(s).map_err(|e| e.to_string())
    });
    let resolved = cfg.finish()?;

    let model = load_checkpoint(model_path)?;
    let quantized = compress_model(&model, None, scheme)?;

    ensure_dir(out)?;
    let ckpt = out.join("model.bcrm");
    asc_core::checkpoint::write_model_file(&ckpt, &quantized)?;

    let scales: BTreeMap<String, f64> = model
        .conv_weights()
        .iter()
        .map(|(name, w)| {
            let (_, scale) = quantize_sym(w.data());
            (name.clone(), Scalar::to_f64(scale))
        })
        .collect();
    let mut report = JsonlWriter::new(out.join("quantize.jsonl"));
    report.push(json!({"scheme": scheme.name(), "conv_scales": scales}));
    report.write()?;

    let mut manifest = Manifest::new("quantize", resolved);
    manifest.input("model", model_path);
    manifest.output("checkpoint", &ckpt);
    manifest.output("report", report.path());
    manifest.write(out)?;

    println!(
        "quantized ({}) {} conv layers -> {}",
        scheme.name(),
        scales.len(),
        ckpt.display()
    );
    Ok(())
}

pub fn cmd_distill(
    teacher_path: &Path,
    data: Option<PathBuf>,
    out: &Path,
    mut cfg: Config,
) -> Result<(), Fail> {
    let data = data_dir(data)?;
    let teacher = load_checkpoint(teacher_path)?;
    let (corpus, classes) = load_corpus(&data, "train.csv")?;
    if !data.join("test.csv").exists() {
        return Err(Fail::validation(format!(
            "{}: distillation needs test.csv to bracket the compression",
            data.display()
        )));
    }
    let (eval_set, _) = load_corpus(&data, "test.csv")?;

    let fs = corpus.feature_shape();
    let seed = config::seed(&mut cfg, 0);
    let student_cfg = config::model_config(&mut cfg, fs.f, classes.len());
    let compress_cfg = config::compress_config(&mut cfg, seed);
    let resolved = cfg.finish()?;

    let outcome = compress::distill_compress(&teacher, &student_cfg, &corpus, &eval_set, &compress_cfg)?;

    ensure_dir(out)?;
    let student = out.join("student.bcrm");
    let finetuned = out.join("finetuned.bcrm");
    let packed = out.join("packed.bcrq");
    asc_core::checkpoint::write_model_file(&student, &outcome.student)?;
    asc_core::checkpoint::write_model_file(&finetuned, &outcome.finetuned)?;
    std::fs::write(&packed, &outcome.bytes)
        .map_err(|e| Fail::internal(format!("{}: {e}", packed.display())))?;

    let mut report = JsonlWriter::new(out.join("distill.jsonl"));
    let mut dense = json!({"phase": "dense"});
    dense["eval"] = eval_json(&outcome.dense_eval);
    report.push(dense);
    let mut comp = json!({"phase": "compressed"});
    comp["eval"] = eval_json(&outcome.compressed_eval);
    report.push(comp);
    report.push(json!({
        "phase": "pack",
        "payload_bytes": outcome.report.payload_bytes,
        "index_bytes": outcome.report.index_bytes,
        "container_bytes": outcome.report.container_bytes,
        "payload_kb": kib_display(outcome.report.payload_kib()),
        "sparsity": outcome.mask.sparsity(),
        "kept": outcome.mask.kept(),
        "total": outcome.mask.total(),
    }));
    report.write()?;

    let mut manifest = Manifest::new("distill", resolved);
    manifest.input("teacher", teacher_path);
    manifest.input("data", &data);
    manifest.output("student", &student);
    manifest.output("finetuned", &finetuned);
    manifest.output("packed", &packed);
    manifest.output("report", report.path());
    manifest.write(out)?;

    print_eval("dense student", &outcome.dense_eval);
    print_eval("compressed", &outcome.compressed_eval);
    print!("{}", outcome.report.render());
    println!("artifacts in {}", out.display());
    Ok(())
}

/// `name encoding values` lines, `#` comments. Encodings match the packed
/// container's: dense16, sparse8, sparse16.
fn read_counts_manifest(path: &Path) -> Result<SizeReport, Fail> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Fail::validation(format!("{}: {e}", path.display())))?;
    let mut report = SizeReport::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| {
            Fail::validation(format!(
                "{} line {}: `{raw}` {what}",
                path.display(),
                i + 1
            ))
        };
        if fields.len() != 3 {
            return Err(bad("is not `name encoding values`"));
        }
        let encoding = match fields[1] {
            "dense16" => "dense16",
            "sparse8" => "sparse8",
            "sparse16" => "sparse16",
            _ => return Err(bad("has an unknown encoding")),
        };
        let values: usize = fields[2]
            .parse()
            .map_err(|_| bad("has a non-numeric count"))?;
        report.add_counts(fields[0], encoding, values)?;
    }
    if report.layers.is_empty() {
        return Err(Fail::validation(format!(
            "{}: no layer lines",
            path.display()
        )));
    }
    Ok(report)
}

pub fn cmd_pack(
    model_path: Option<PathBuf>,
    counts: Option<PathBuf>,
    out: &Path,
    mut cfg: Config,
) -> Result<(), Fail> {
    let scheme = cfg.get_with("quant_scheme", QuantScheme::int8(), |s| {
        QuantScheme::parse(s).map_err(|e| e.to_string())
    });
    let resolved = cfg.finish()?;
    ensure_dir(out)?;

    let mut manifest = Manifest::new("pack", resolved);
    let report = match (&model_path, &counts) {
        (Some(model_path), None) => {
            let model = load_checkpoint(model_path)?;
            let packed = out.join("packed.bcrq");
            let report = write_pack_file(&packed, &model, None, scheme)?;
            manifest.input("model", model_path);
            manifest.output("packed", &packed);
            println!("packed -> {}", packed.display());
            report
        }
        (None, Some(counts_path)) => {
            let report = read_counts_manifest(counts_path)?;
            manifest.input("counts", counts_path);
            report
        }
        _ => {
            return Err(Fail::validation(
                "pack needs exactly one of --model or --counts",
            ))
        }
    };

    let mut jsonl = JsonlWriter::new(out.join("pack.jsonl"));
    jsonl.push(json!({
        "scheme": scheme.name(),
        "payload_bytes": report.payload_bytes,
        "index_bytes": report.index_bytes,
        "container_bytes": report.container_bytes,
        "payload_kb": kib_display(report.payload_kib()),
    }));
    jsonl.write()?;
    manifest.output("report", jsonl.path());
    manifest.write(out)?;

    print!("{}", report.render());
    println!("report: {}KB payload", kib_display(report.payload_kib()));
    Ok(())
}

pub fn cmd_info(model_path: &Path, as_json: bool, cfg: Config) -> Result<(), Fail> {
    cfg.finish()?;
    let loaded = load_model(model_path)?;
    let model = loaded.model();
    let file_bytes = std::fs::metadata(model_path)
        .map_err(|e| Fail::validation(format!("{}: {e}", model_path.display())))?
        .len() as usize;

    let mut rows: Vec<(String, String, usize, usize)> = Vec::new();
    let mut total = 0usize;
    let mut nonzero = 0usize;
    for (name, t) in model.named_params() {
        let n = t.numel();
        let nz = t.data().iter().filter(|v| **v != 0.0).count();
        rows.push((name, format!("{}", t.shape()), n, nz));
        total += n;
        nonzero += nz;
    }
    let rf = receptive_field();
    let scheme = match &loaded {
        LoadedModel::Checkpoint(_) => "dense".to_string(),
        LoadedModel::Packed(_, s) => s.name().to_string(),
    };

    if as_json {
        let layers: Vec<serde_json::Value> = rows
            .iter()
            .map(|(name, shape, n, nz)| json!({"name": name, "shape": shape, "params": n, "nonzero": nz}))
            .collect();
        let doc = json!({
            "format": loaded.format(),
            "scheme": scheme,
            "base_channels": model.cfg.base_channels,
            "num_classes": model.cfg.num_classes,
            "input_freq_bins": model.cfg.input_freq_bins,
            "norm_mode": model.cfg.norm_mode.name(),
            "params_total": total,
            "params_nonzero": nonzero,
            "file_kib": compress::kib(file_bytes),
            "rf_freq": rf.rf_freq,
            "rf_time": rf.rf_time,
            "rf_conv_only_freq": rf.rf_conv_only_freq,
            "rf_conv_only_time": rf.rf_conv_only_time,
            "layers": layers,
        });
        println!("{doc}");
        return Ok(());
    }

    println!("{} ({}, {} scheme)", model_path.display(), loaded.format(), scheme);
    println!(
        "config: c={} classes={} bins={} norm={} lambda={} dropout={}",
        model.cfg.base_channels,
        model.cfg.num_classes,
        model.cfg.input_freq_bins,
        model.cfg.norm_mode.name(),
        model.cfg.lambda,
        model.cfg.dropout
    );
    println!("{:<26} {:>18} {:>9} {:>9}", "layer", "shape", "params", "nonzero");
    for (name, shape, n, nz) in &rows {
        println!("{name:<26} {shape:>18} {n:>9} {nz:>9}");
    }
    println!("params: {total} total / {nonzero} nonzero");
    println!(
        "file: {}KB; receptive field {}x{} (pools as kernels; {}x{} conv-only), jumps ({}, {})",
        kib_display(compress::kib(file_bytes)),
        rf.rf_freq,
        rf.rf_time,
        rf.rf_conv_only_freq,
        rf.rf_conv_only_time,
        rf.jump_freq,
        rf.jump_time
    );
    Ok(())
}
