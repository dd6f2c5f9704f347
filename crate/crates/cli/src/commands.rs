use std::fmt::Write as _;
use std::path::Path;

use tnf_autograd::Tensor;
use tnf_core::data::tabular_means;
use tnf_core::explain::{grad_cam_3d, masked_tabular_accuracy, select_top_k, shapley_importance, SHAPLEY_MAX_ATTRS};
use tnf_core::formats::checkpoint::Checkpoint;
use tnf_core::formats::heatmap::write_heatmap;
use tnf_core::formats::manifest::write_dataset;
use tnf_core::formats::runconfig::DataSource;
use tnf_core::grouping::{group_volume, max_likelihood_select};
use tnf_core::metrics::{decide, ensemble_predict, points_csv, BranchLikelihoods, MetricsReport};
use tnf_core::synth::inconsistency_stats;
use tnf_core::train::{log_csv, predict_cases, score_predictions, train_pipeline, CasePrediction, Modality, Scoring};
use tnf_core::{Branch, Error, Result, TnfModel};

use crate::context::{load_config, load_data, out_dir, resolve, set_data_path, write, Run, CHECKPOINT_FILE, CONFIG_FILE};
use crate::{EvalArgs, GenDataArgs, GradcamArgs, RocArgs, ShapleyArgs, TrainArgs};

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let DataSource::Synth(mut synth) = cfg.data_source() else {
        return Err(Error::Config("gen-data needs a [data.synth] table, not data.path".into()));
    };
    if let Some(seed) = a.seed {
        synth.seed = seed;
    }
    cfg.data.synth = Some(synth.clone());
    let dir = out_dir(a.out.as_deref(), &cfg, "data");
    cfg.output.dir = Some(dir.to_string_lossy().into_owned());
    cfg.validate()?;
    let dir = resolve(&dir);
    let splits = tnf_core::synth::gen_synthetic(&synth)?;
    let manifest = write_dataset(&dir, &splits, Some(&synth))?;
    let stats = inconsistency_stats(splits.all(), synth.group_size, synth.min_positive);
    write(&dir.join("inconsistency.txt"), stats.to_text())?;
    write(&dir.join(CONFIG_FILE), cfg.resolved_toml())?;
    for (name, s) in &manifest.splits {
        println!("{name}: {} cases", s.count);
    }
    print!("{}", stats.to_text());
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(d) = &a.data {
        set_data_path(&mut cfg, d)?;
    }
    let dir = out_dir(a.out.as_deref(), &cfg, "run");
    cfg.output.dir = Some(dir.to_string_lossy().into_owned());
    cfg.validate()?;
    let dir = resolve(&dir);
    let splits = load_data(&cfg)?;
    let tc = cfg.train_config();
    let mut model = TnfModel::<f32>::new(&cfg.model, tc.seed)?;
    write(&dir.join(CONFIG_FILE), cfg.resolved_toml())?;
    let every = tc.checkpoint_every;
    let report = train_pipeline(&mut model, &splits.train, &splits.val, &tc, |log, m, opt| {
        println!(
            "epoch {:>3}  lr {:.3e}  loss {:.5}  val acc {:.4}  mcc {:.4}",
            log.epoch, log.lr, log.train_loss, log.val_acc, log.val_mcc
        );
        if every > 0 && log.epoch % every == 0 {
            let ck = Checkpoint::from_model(m, log.val_acc, Some(opt));
            write(&dir.join(format!("epoch{:03}.tnfc", log.epoch)), ck.encode())?;
        }
        Ok(())
    })?;
    if let Some(p) = &report.pretrain {
        write(&dir.join("pretrain_log.csv"), log_csv(&p.log))?;
        println!("pretraining: best epoch {} (val acc {:.4})", p.best_epoch, p.best_val_acc);
    }
    let main = &report.main;
    write(&dir.join("train_log.csv"), log_csv(&main.log))?;
    let ck = Checkpoint::from_model(&model, main.best_val_acc, Some(&main.optimizer));
    write(&dir.join(CHECKPOINT_FILE), ck.encode())?;
    println!("best epoch {} (val acc {:.4}); wrote {}", main.best_epoch, main.best_val_acc, dir.display());
    Ok(())
}

fn drop_suffix(drop: Option<Modality>) -> &'static str {
    match drop {
        None => "",
        Some(Modality::Image) => "_no_image",
        Some(Modality::Tabular) => "_no_tabular",
    }
}

fn predictions(run: &Run, a: &EvalArgs) -> Result<Vec<CasePrediction>> {
    let cases = run.cases(a.run.split)?;
    let d = &run.config.data;
    predict_cases(&run.model, cases, d.group_size, d.pad_value, a.drop_modality)
}

fn open(a: &crate::RunArgs) -> Result<Run> {
    Run::open(&a.run, a.checkpoint.as_deref(), a.data.as_deref(), a.out.as_deref())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let run = open(&a.run)?;
    let preds = predictions(&run, &a)?;
    let theta = run.config.eval.theta;
    let classes = run.model.classes();
    let ens = score_predictions(&preds, Scoring::Ensemble, theta, classes)?;
    let mut csv = format!("scoring,{}\n", MetricsReport::CSV_HEADER);
    let _ = writeln!(csv, "ensemble,{}", ens.csv_row());
    for b in Branch::ALL {
        if preds[0].probs.get(b).is_some() {
            let r = score_predictions(&preds, Scoring::Branch(b), theta, classes)?;
            let _ = writeln!(csv, "{},{}", b.name(), r.csv_row());
        }
    }
    let stem = format!("metrics_{}{}", a.run.split.name(), drop_suffix(a.drop_modality));
    write(&run.out.join(format!("{stem}.txt")), ens.to_kv())?;
    write(&run.out.join(format!("{stem}.csv")), &csv)?;
    print!("{}", ens.to_kv());
    print!("{csv}");
    Ok(())
}

fn probs_cols(v: Option<&[f64]>, classes: usize) -> String {
    match v {
        Some(p) => p.iter().map(|x| format!("{x:.9}")).collect::<Vec<_>>().join(","),
        None => vec![""; classes].join(","),
    }
}

pub fn infer(a: EvalArgs) -> Result<()> {
    let run = open(&a.run)?;
    let preds = predictions(&run, &a)?;
    let theta = run.config.eval.theta;
    let c = run.model.classes();
    let mut header = String::from("case_id,label,group,pred");
    for name in ["ensemble", "image", "tabular", "fusion"] {
        for k in 0..c {
            let _ = write!(header, ",{name}_p{k}");
        }
    }
    let mut csv = header + "\n";
    for p in &preds {
        let b = &p.probs;
        let e = ensemble_predict(
            &BranchLikelihoods {
                z_i: b.image.as_deref(),
                z_t: b.tabular.as_deref(),
                z_f: b.fusion.as_deref(),
            },
            theta,
        )?;
        let group = p.group.map(|g| g.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{group},{},{},{},{},{}",
            p.case_id,
            p.label,
            e.label,
            probs_cols(Some(&e.scores), c),
            probs_cols(b.image.as_deref(), c),
            probs_cols(b.tabular.as_deref(), c),
            probs_cols(b.fusion.as_deref(), c),
        );
    }
    let name = format!("predictions_{}{}.csv", a.run.split.name(), drop_suffix(a.drop_modality));
    let path = run.out.join(name);
    write(&path, &csv)?;
    println!("{} predictions; wrote {}", preds.len(), path.display());
    Ok(())
}

pub fn gradcam(a: GradcamArgs) -> Result<()> {
    let branch: Branch = a.branch.parse()?;
    if branch == Branch::Tabular {
        return Err(Error::Config("the tabular branch has no image input to explain".into()));
    }
    let run = open(&a.run)?;
    let case = run
        .cases(a.run.split)?
        .iter()
        .find(|c| c.id == a.case)
        .ok_or_else(|| Error::Validation(format!("case {} is not in the {} split", a.case, a.run.split.name())))?;
    let model: TnfModel<f64> = run.checkpoint.to_model()?;
    let d = &run.config.data;
    let grouping = group_volume(&case.volume.cast::<f64>(), d.group_size, d.pad_value)?;
    let (group, slab) = max_likelihood_select(&model, &grouping)?;
    let mut shape = vec![1];
    shape.extend_from_slice(slab.shape());
    let image = slab.reshape(shape)?;
    let tab = Tensor::new(
        [1, case.tabular.len()],
        case.tabular.iter().map(|&v| f64::from(v)).collect(),
    )?;
    let class = match a.class {
        Some(c) => c,
        None => {
            let p = model.predict(Some(&image), Some(&tab))?;
            decide(p.get(branch).expect("both inputs present"), run.config.eval.theta)?
        }
    };
    let h = grad_cam_3d(&model, &image, Some(&tab), branch, class, a.layer)?;
    std::fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    let stem = run.out.join(format!("gradcam_case{}_{}", case.id, branch.name()));
    let (raw, hdr) = write_heatmap(&stem, &h)?;
    let total: f64 = h.upsampled.data().iter().sum();
    println!(
        "case {} group {group} class {class} layer {}: heatmap mass {total:.6}; wrote {} and {}",
        case.id,
        h.layer,
        raw.display(),
        hdr.display()
    );
    Ok(())
}

pub fn shapley(a: ShapleyArgs) -> Result<()> {
    let run = open(&a.run)?;
    let n_attr = run.config.model.tabular.n_attr;
    let attrs = a.attrs.clone().unwrap_or_else(|| (0..n_attr).collect());
    if let Some(&bad) = attrs.iter().find(|&&i| i >= n_attr) {
        return Err(Error::Config(format!("attribute {bad} out of {n_attr}")));
    }
    if attrs.len() > SHAPLEY_MAX_ATTRS {
        return Err(Error::Config(format!(
            "{} attributes exceed the exact-enumeration cap of {SHAPLEY_MAX_ATTRS}; pass --attrs with a subset",
            attrs.len()
        )));
    }
    let cases = run.cases(a.run.split)?;
    let means = tabular_means(run.cases(tnf_core::data::Split::Train)?);
    let rows: Vec<Vec<f32>> = cases.iter().map(|c| c.tabular.clone()).collect();
    let labels: Vec<usize> = cases.iter().map(|c| c.label as usize).collect();
    let outside: u32 = (0..n_attr).filter(|i| !attrs.contains(i)).fold(0, |m, i| m | 1 << i);
    let theta = run.config.eval.theta;
    let report = shapley_importance(
        attrs.len(),
        |coalition| {
            let mut mask = outside;
            for (k, &id) in attrs.iter().enumerate() {
                if coalition >> k & 1 == 1 {
                    mask |= 1 << id;
                }
            }
            masked_tabular_accuracy(&run.model, &rows, &labels, &means, mask, theta)
        },
        "tabular-branch accuracy with absent attributes set to their training mean",
    )?;
    let mut rank = vec![0; attrs.len()];
    for (r, &k) in report.ranking.iter().enumerate() {
        rank[k] = r + 1;
    }
    let mut csv = String::from("attr,phi,rank\n");
    for (k, &id) in attrs.iter().enumerate() {
        let _ = writeln!(csv, "{id},{:.12},{}", report.phi[k], rank[k]);
    }
    let path = run.out.join(format!("shapley_{}.csv", a.run.split.name()));
    write(&path, &csv)?;
    println!(
        "value({{}}) = {:.6}, value(all) = {:.6}; wrote {}",
        report.value_empty,
        report.value_full,
        path.display()
    );
    if let Some(k) = a.top_k {
        let top: Vec<String> = select_top_k(&report, k)?.iter().map(|&i| attrs[i].to_string()).collect();
        println!("top {k}: {}", top.join(","));
    }
    Ok(())
}

pub fn roc(a: RocArgs) -> Result<()> {
    let scoring = match a.branch.as_str() {
        "ensemble" => Scoring::Ensemble,
        other => Scoring::Branch(other.parse()?),
    };
    let run = open(&a.run)?;
    if run.model.classes() != 2 {
        return Err(Error::Config("ROC and PR curves need a binary model".into()));
    }
    let cases = run.cases(a.run.split)?;
    let d = &run.config.data;
    let preds = predict_cases(&run.model, cases, d.group_size, d.pad_value, None)?;
    let rep = score_predictions(&preds, scoring, run.config.eval.theta, 2)?;
    if rep.roc_points.is_empty() {
        return Err(Error::Data(format!("the {} split lacks one of the classes", a.run.split.name())));
    }
    let stem = format!("{}_{}", a.branch, a.run.split.name());
    write_points(&run.out, &format!("roc_{stem}.csv"), "fpr,tpr", &rep.roc_points)?;
    write_points(&run.out, &format!("pr_{stem}.csv"), "recall,precision", &rep.pr_points)?;
    let fmt = |v: Option<f64>| v.map_or("undefined".into(), |x| format!("{x:.6}"));
    println!("auroc = {}\nauprc = {}", fmt(rep.auroc), fmt(rep.auprc));
    Ok(())
}

fn write_points(dir: &Path, name: &str, header: &str, pts: &[(f64, f64)]) -> Result<()> {
    write(&dir.join(name), points_csv(header, pts))
}
