use std::path::Path;

use hybridcnn::checkpoint::load_checkpoint;
use hybridcnn::data::{load_folder, load_image, prepare, synthetic_color_dataset, write_manifest, Label, LabeledDataset};
use hybridcnn::gradcam::{gradcam, write_overlay, CamLayer};
use hybridcnn::gradcheck::{model_check, operator_suite, CheckReport};
use hybridcnn::metrics::{roc_csv, RocPoint};
use hybridcnn::ml::{cross_validate, evaluate_downstream, extract_features, ClassifierSpec, FeatureTable, NOT_IMPLEMENTED};
use hybridcnn::model::{accounting_table, count_params_and_flops, render_accounting, Branch, HybridModel, HybridModelConfig, REFERENCE_TOTALS};
use hybridcnn::nn::Mode;
use hybridcnn::train::{evaluate, train, with_suffix, EvalReport};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::*;

type Outcome = Result<(), Failure>;

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Extract(a) => extract_cmd(a),
        Command::FitMl(a) => fit_ml_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Gradcam(a) => gradcam_cmd(a),
        Command::Count(a) => count_cmd(a),
        Command::Manifest(a) => manifest_cmd(a),
    }
}

/// First line of every run's stdout.
fn announce(command: &str, seed: u64, config: &impl Serialize) {
    println!("{}", json!({ "command": command, "seed": seed, "config": config }));
}

/// `<artifact>.run.json`: everything needed to repeat the run.
fn write_run_sidecar(artifact: &Path, command: &str, seed: u64, config: &impl Serialize) -> Outcome {
    let meta = json!({
        "command": command,
        "seed": seed,
        "config": config,
        "tool_version": env!("CARGO_PKG_VERSION"),
    });
    let path = with_suffix(artifact, ".run.json");
    write_text(&path, &(serde_json::to_string_pretty(&meta).expect("json value") + "\n"))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::path(path, e))
}

fn write_json(path: &Path, v: &impl Serialize) -> Outcome {
    write_text(path, &(serde_json::to_string_pretty(v).expect("serializable") + "\n"))
}

fn source_json(d: &DataSource) -> Value {
    json!({ "data_dir": d.data_dir, "synthetic": d.synthetic })
}

fn load_data(d: &DataSource, size: usize, seed: u64) -> Result<LabeledDataset, Failure> {
    match (&d.data_dir, d.synthetic) {
        (Some(dir), _) => {
            let r = load_folder(dir, size)?;
            if !r.skipped.is_empty() {
                eprintln!("skipped {} unreadable file(s)", r.skipped.len());
            }
            Ok(r.dataset)
        }
        (None, Some(n)) => Ok(synthetic_color_dataset(n, size, seed)),
        (None, None) => Err(Failure::usage("one of --data-dir or --synthetic is required")),
    }
}

fn apply_prepare_flags(c: &mut RunConfig, p: &PrepareFlags) {
    if p.augment_target.is_some() {
        c.data.augment_per_class = p.augment_target;
    }
    if p.subsample_normal.is_some() {
        c.data.subsample_normal = p.subsample_normal;
    }
    if let Some(v) = p.validation_fraction {
        c.data.validation_fraction = v;
    }
}

fn write_roc(path: &Path, roc: &Option<Vec<RocPoint>>) -> Outcome {
    match roc {
        Some(pts) => write_text(path, &roc_csv(pts)),
        None => {
            eprintln!("single-class set: no ROC curve written");
            Ok(())
        }
    }
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let mut c = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        c.set_seed(s);
    }
    if let Some(v) = a.epochs {
        c.train.epochs = v;
    }
    if let Some(v) = a.lr {
        c.train.learning_rate = v;
    }
    if let Some(v) = a.batch {
        c.train.batch_size = v;
    }
    if let Some(v) = a.input_size {
        c.model.input_size = v;
    }
    c.model.use_attention &= !a.no_attention;
    c.model.use_cnc_branch &= !a.no_cnc;
    c.model.use_dsc_branch &= !a.no_dsc;
    c.model.use_mfe_branch &= !a.no_mfe;
    apply_prepare_flags(&mut c, &a.prepare);
    c.validate()?;
    let seed = c.effective_seed();
    let resolved = json!({ "run": c, "data_source": source_json(&a.data), "out": a.out });
    announce("train", seed, &resolved);

    let d = load_data(&a.data, c.model.input_size, seed)?;
    let p = prepare(&d, &c.data)?;
    write_manifest(&with_suffix(&a.out, ".manifest.csv"), &p.manifest())?;
    let model = HybridModel::<f32>::new(c.model.clone())?;
    let (model, records, _) = train(model, p.train, p.validation, &c.train, Some(&a.out))?;
    let (mut report, roc) = evaluate(&model, &p.test, c.train.batch_size)?;
    report.curves = Some(records);
    write_json(&with_suffix(&a.out, ".report.json"), &report)?;
    write_roc(&with_suffix(&a.out, ".roc.csv"), &roc)?;
    write_run_sidecar(&a.out, "train", seed, &resolved)?;
    print!("{}", report.table());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Outcome {
    let model: HybridModel<f32> = load_checkpoint(&a.model)?;
    let resolved = json!({
        "model_path": a.model,
        "model": model.config(),
        "data_source": source_json(&a.data),
        "batch": a.batch,
        "report": a.report,
    });
    announce("eval", a.seed, &resolved);
    let d = load_data(&a.data, model.config().input_size, a.seed)?;
    let (report, roc) = evaluate(&model, &d, a.batch)?;
    write_json(&a.report, &report)?;
    if let Some(p) = &a.roc {
        write_roc(p, &roc)?;
    }
    write_run_sidecar(&a.report, "eval", a.seed, &resolved)?;
    print!("{}", report.table());
    Ok(())
}

fn extract_cmd(a: ExtractArgs) -> Outcome {
    let model: HybridModel<f32> = load_checkpoint(&a.model)?;
    let resolved = json!({
        "model_path": a.model,
        "model": model.config(),
        "data_source": source_json(&a.data),
        "batch": a.batch,
        "out": a.out,
    });
    announce("extract", a.seed, &resolved);
    let d = load_data(&a.data, model.config().input_size, a.seed)?;
    let t = extract_features(&model, &d, a.batch)?;
    t.write(&a.out)?;
    write_run_sidecar(&a.out, "extract", a.seed, &resolved)?;
    println!("wrote {} rows to {}", t.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct MlReport<'a> {
    classifier: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
    not_implemented: [&'static str; 3],
}

fn fit_ml_cmd(a: FitMlArgs) -> Outcome {
    let mut c = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        c.set_seed(s);
    }
    if let Some(k) = a.folds {
        c.ml.folds = k;
    }
    let spec = match a.algo {
        Algo::Rf => ClassifierSpec::RandomForest(c.ml.forest.clone()),
        Algo::Knn => ClassifierSpec::Knn(c.ml.knn.clone()),
        Algo::Hinge => ClassifierSpec::LinearHinge(c.ml.hinge.clone()),
    };
    let seed = c.ml.seed;
    let resolved = json!({
        "classifier": spec,
        "folds": c.ml.folds,
        "features": a.features,
        "test_features": a.test_features,
        "out": a.out,
        "report": a.report,
    });
    announce("fit-ml", seed, &resolved);
    let t = FeatureTable::read(&a.features)?;
    let report = if c.ml.folds >= 2 {
        cross_validate(&spec, &t, c.ml.folds, seed)?
    } else {
        let test_path = a
            .test_features
            .as_ref()
            .ok_or_else(|| Failure::usage("--test-features is required when --folds is below 2"))?;
        let model = spec.fit(&t)?;
        if let Some(out) = &a.out {
            model.save(out)?;
            write_run_sidecar(out, "fit-ml", seed, &resolved)?;
        }
        evaluate_downstream(&model, &FeatureTable::read(test_path)?)?
    };
    write_json(&a.report, &MlReport { classifier: spec.name(), report: &report, not_implemented: NOT_IMPLEMENTED })?;
    write_run_sidecar(&a.report, "fit-ml", seed, &resolved)?;
    println!("classifier {}", spec.name());
    print!("{}", report.table());
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Outcome {
    let toy = HybridModelConfig {
        input_size: 16,
        channel_widths: [4, 6, 8, 8],
        attention_width: 4,
        seed: a.seed,
        ..HybridModelConfig::default()
    };
    let scope = match a.scope {
        Scope::Op => "op",
        Scope::Model => "model",
    };
    announce("gradcheck", a.seed, &json!({ "scope": scope, "samples": a.samples, "model": toy }));
    let reports: Vec<CheckReport> = match a.scope {
        Scope::Op => operator_suite(a.seed)?,
        Scope::Model => [Mode::Train, Mode::Eval]
            .into_iter()
            .map(|m| model_check(&toy, m, 3, Some(a.samples), a.seed))
            .collect::<Result<_, _>>()?,
    };
    for r in &reports {
        println!(
            "{:<6} {:<40} max rel err {:.3e} (tolerance {:.0e})",
            if r.passed() { "PASS" } else { "FAIL" },
            r.label,
            r.max_rel_err(),
            r.tolerance
        );
    }
    if let Some(p) = &a.report {
        write_json(p, &reports)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.label.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::verification(format!("failed: {}", failed.join(", "))))
    }
}

fn gradcam_cmd(a: GradcamArgs) -> Outcome {
    let model: HybridModel<f32> = load_checkpoint(&a.model)?;
    let layer = match a.branch {
        CamBranch::All => CamLayer::Concat,
        CamBranch::Cnc => CamLayer::Branch(Branch::Cnc),
        CamBranch::Dsc => CamLayer::Branch(Branch::Dsc),
        CamBranch::Mfe => CamLayer::Branch(Branch::Mfe),
    };
    let size = model.config().input_size;
    let image = load_image(&a.image, size)?;
    let p_abnormal = model.predict_proba(&image.reshape(&[1, 3, size, size])?)?[0];
    let target = match a.target {
        CamTarget::Normal => Label::Normal,
        CamTarget::Abnormal => Label::Abnormal,
        CamTarget::Predicted if p_abnormal >= hybridcnn::metrics::THRESHOLD => Label::Abnormal,
        CamTarget::Predicted => Label::Normal,
    };
    let resolved = json!({
        "model_path": a.model,
        "image": a.image,
        "layer": format!("{layer:?}"),
        "target": target,
        "out": a.out,
    });
    announce("gradcam", model.config().seed, &resolved);
    let cam = gradcam(&model, &image, target, layer)?;
    write_overlay(&a.out, &image, &cam.heatmap)?;
    write_run_sidecar(&a.out, "gradcam", model.config().seed, &resolved)?;
    println!("{}", json!({ "p_abnormal": p_abnormal, "target": target, "degenerate": cam.degenerate, "out": a.out }));
    Ok(())
}

fn count_cmd(a: CountArgs) -> Outcome {
    let mut c = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.input_size {
        c.model.input_size = s;
    }
    c.model.validate()?;
    announce("count", c.effective_seed(), &c.model);
    let rows = accounting_table(&c.model);
    let ours = count_params_and_flops(&c.model);
    if a.json {
        println!("{}", json!({ "model": ours, "ablation": rows }));
        return Ok(());
    }
    print!("{}", render_accounting(&rows));
    let (ref_p, ref_f) = REFERENCE_TOTALS[0];
    println!(
        "configured model: {:.3} M params, {:.3} GFLOPs (published full model: {ref_p:.2} M, {ref_f:.1} G; widths are not published, so equality is not expected)",
        ours.params as f64 / 1e6,
        ours.flops as f64 / 1e9,
    );
    Ok(())
}

fn manifest_cmd(a: ManifestArgs) -> Outcome {
    let mut c = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        c.set_seed(s);
    }
    if let Some(s) = a.input_size {
        c.model.input_size = s;
    }
    apply_prepare_flags(&mut c, &a.prepare);
    c.validate()?;
    let seed = c.effective_seed();
    let resolved = json!({ "data": c.data, "input_size": c.model.input_size, "data_source": source_json(&a.data), "out": a.out });
    announce("manifest", seed, &resolved);
    let d = load_data(&a.data, c.model.input_size, seed)?;
    let p = prepare(&d, &c.data)?;
    let rows = p.manifest();
    write_manifest(&a.out, &rows)?;
    write_run_sidecar(&a.out, "manifest", seed, &resolved)?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

