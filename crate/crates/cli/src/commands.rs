//! The subcommands. Each one writes its files plus a single manifest into
//! its output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use superot_core::data::{
    load_clones, load_expression, load_labels, synth_branching, write_clones, write_expression, write_labels, Fate,
    MatrixFormat, Timepoint,
};
use superot_core::evalstats::{accuracy_csv, export_embedding_2d, precision_recall, AccuracyRow};
use superot_core::math::Tensor;
use superot_core::nets::{history_to_csv, Checkpoint, Method, NetError, Trainer};
use superot_core::pipeline::{de_over_runs, prepare, Dataset, Prepared};
use superot_core::preprocess::Preprocessor;
use superot_core::sinkhorn::write_coupling_csv;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::{file_digest, read_manifest, sha256_hex, ManifestBuilder, RunManifest};

pub const DAY2_FILE: &str = "day2.csv";
pub const DAY46_FILE: &str = "day46.csv";
pub const CLONES_FILE: &str = "clones.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const PLANTED_FILE: &str = "planted_de_genes.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.lotc";
pub const PREPROCESSOR_FILE: &str = "preprocessor.lpre";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// A dataset plus the planted DE genes when they are known.
pub struct Loaded {
    pub ds: Dataset,
    pub planted: Option<BTreeSet<String>>,
}

/// Reads the dataset directory named in the config, or synthesizes one.
/// Input digests go into the manifest either way.
pub fn load_dataset(cfg: &ExperimentConfig, m: &mut ManifestBuilder) -> Result<Loaded, CliError> {
    let Some(dir) = &cfg.data.dir else {
        let s = synth_branching(&cfg.data.synth)?;
        let json = serde_json::to_vec(&cfg.data.synth).expect("synth config serializes");
        m.input("synthetic", sha256_hex(&json));
        m.note("dataset synthesized in memory from data.synth");
        let planted = Some(s.planted_de_genes.clone());
        return Ok(Loaded { ds: s.into(), planted });
    };
    let path = |name: &str| dir.join(name);
    for name in [DAY2_FILE, DAY46_FILE, CLONES_FILE, LABELS_FILE] {
        m.input(name, file_digest(&path(name))?);
    }
    let day2 = load_expression(&path(DAY2_FILE), MatrixFormat::Csv, Timepoint::Day2)?;
    let day46 = load_expression(&path(DAY46_FILE), MatrixFormat::Csv, Timepoint::Day4_6)?;
    let clones = load_clones(&path(CLONES_FILE))?;
    let day46_labels = load_labels(&path(LABELS_FILE))?;
    let planted = match std::fs::read_to_string(path(PLANTED_FILE)) {
        Ok(text) => {
            m.input(PLANTED_FILE, sha256_hex(text.as_bytes()));
            Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
        }
        Err(_) => None,
    };
    Ok(Loaded { ds: Dataset { day2, day46, clones, day46_labels }, planted })
}

fn prepare_seed(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<Prepared, CliError> {
    Ok(prepare(ds, &cfg.preprocess, &cfg.eval.classifier, seed)?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn tmp_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!(".{name}.tmp"))
}

pub fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest, CliError> {
    create_dir(out)?;
    let mut m = ManifestBuilder::new("synth", cfg, vec![cfg.data.synth.seed]);
    let s = synth_branching(&cfg.data.synth)?;
    write_expression(&out.join(DAY2_FILE), &s.day2, MatrixFormat::Csv)?;
    write_expression(&out.join(DAY46_FILE), &s.day46, MatrixFormat::Csv)?;
    write_clones(&out.join(CLONES_FILE), &s.clones)?;
    write_labels(&out.join(LABELS_FILE), &s.day46_labels)?;
    write_labels(&out.join("day2_planted_fates.csv"), &s.day2_planted)?;
    for name in [DAY2_FILE, DAY46_FILE, CLONES_FILE, LABELS_FILE, "day2_planted_fates.csv"] {
        m.record(out, name)?;
    }
    let planted: String = s.planted_de_genes.iter().map(|g| format!("{g}\n")).collect();
    m.write(out, PLANTED_FILE, planted.as_bytes())?;
    m.meta("n_day2", s.day2.n_cells());
    m.meta("n_day46", s.day46.n_cells());
    m.meta("n_genes", s.day2.n_genes());
    m.meta("n_clones", s.clones.n_clones());
    m.finish(out)
}

fn model_space_csv(z: &Tensor, cell_ids: &[String]) -> String {
    let mut s = String::from("cell_id");
    for j in 0..z.cols() {
        let _ = write!(s, ",pc{}", j + 1);
    }
    s.push('\n');
    for (i, id) in cell_ids.iter().enumerate() {
        s.push_str(id);
        for v in z.row_slice(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn preprocess(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<RunManifest, CliError> {
    create_dir(out)?;
    let mut m = ManifestBuilder::new("preprocess", cfg, vec![seed]);
    let Loaded { ds, .. } = load_dataset(cfg, &mut m)?;
    let p = prepare_seed(cfg, &ds, seed)?;
    m.write(out, PREPROCESSOR_FILE, &p.preprocessor.to_bytes())?;
    m.write(out, "day2_pca.csv", model_space_csv(&p.z2, &ds.day2.cell_ids).as_bytes())?;
    m.write(out, "day46_pca.csv", model_space_csv(&p.z46, &ds.day46.cell_ids).as_bytes())?;
    let mut split = String::from("cell_id,timepoint,split\n");
    for (ids, tp, sp) in [(&ds.day2.cell_ids, "day2", &p.split2), (&ds.day46.cell_ids, "day46", &p.split46)] {
        for (rows, name) in [(&sp.train, "train"), (&sp.test, "test")] {
            for &i in rows {
                let _ = writeln!(split, "{},{tp},{name}", ids[i]);
            }
        }
    }
    m.write(out, "split.csv", split.as_bytes())?;
    let clf = serde_json::to_string_pretty(&p.classifier).expect("classifier serializes");
    m.write(out, "classifier.json", clf.as_bytes())?;
    m.meta("preprocessor_digest", p.preprocessor.digest());
    m.meta("k", p.preprocessor.pca.k());
    m.meta("n_eligible_pairs", p.n_eligible());
    m.finish(out)
}

pub struct TrainArgs<'a> {
    pub method: Method,
    pub pairs: Option<usize>,
    pub seed: u64,
    pub epochs: Option<usize>,
    pub resume: Option<&'a Path>,
    pub preprocessed: Option<&'a Path>,
    pub checkpoint_every: usize,
}

pub fn method_name(method: Method) -> &'static str {
    match method {
        Method::SuperOt => "super_ot",
        Method::Cgan => "cgan",
        Method::GanOt => "gan_ot",
        Method::Supervised => "supervised",
    }
}

fn checkpoint_bytes(trainer: &Trainer, meta: &BTreeMap<String, String>) -> Vec<u8> {
    Checkpoint { trainer: trainer.clone(), meta: meta.clone() }.to_bytes()
}

fn save_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = tmp_path(dir, name);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    let dst = dir.join(name);
    std::fs::rename(&tmp, &dst).map_err(|e| CliError::io(&dst, e))
}

pub fn train(cfg: &ExperimentConfig, args: &TrainArgs<'_>, out: &Path) -> Result<RunManifest, CliError> {
    create_dir(out)?;
    let mut m = ManifestBuilder::new("train", cfg, vec![args.seed]);
    let Loaded { ds, .. } = load_dataset(cfg, &mut m)?;
    let p = prepare_seed(cfg, &ds, args.seed)?;
    let digest = p.preprocessor.digest();
    match args.preprocessed {
        Some(dir) => {
            let path = dir.join(PREPROCESSOR_FILE);
            let given = Preprocessor::load(&path)?;
            if given.digest() != digest {
                return Err(CliError::Data(format!(
                    "{} does not match the preprocessing for this config and seed",
                    path.display()
                )));
            }
            m.input(PREPROCESSOR_FILE, given.digest());
        }
        None => m.note("preprocessing fitted for this run"),
    }

    let mut base = cfg.train.clone();
    if let Some(e) = args.epochs {
        base.max_epochs = e;
    }
    let n_pairs = args.pairs.unwrap_or(base.n_pairs);
    let (tcfg, pairs) = p.learned_config(args.method, &base, n_pairs)?;
    let data = p.train_data(&tcfg, &pairs.pairs);
    let meta = BTreeMap::from([
        ("method".to_string(), method_name(args.method).to_string()),
        ("n_pairs".to_string(), tcfg.n_pairs.to_string()),
        ("seed".to_string(), args.seed.to_string()),
        ("preprocessor_digest".to_string(), digest.clone()),
    ]);

    let mut trainer = match args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            m.input("resume_checkpoint", file_digest(path)?);
            if ck.meta.get("preprocessor_digest") != Some(&digest) {
                return Err(CliError::Data(format!("{} was trained on a different preprocessing", path.display())));
            }
            let mut t = ck.trainer;
            let mut expect = tcfg.clone();
            expect.max_epochs = t.cfg.max_epochs;
            if t.method != args.method || t.cfg != expect {
                return Err(CliError::Usage(format!(
                    "{} was written with a different method or training config",
                    path.display()
                )));
            }
            t.cfg.max_epochs = tcfg.max_epochs;
            m.note(format!("resumed at epoch {}", t.epoch()));
            t
        }
        None => Trainer::new(args.method, &tcfg, data.day2.cols())?,
    };

    let every = args.checkpoint_every.max(1);
    let mut save_err = None;
    let result = trainer.train(&data, |t| {
        if t.epoch() % every == 0 {
            if let Err(e) = save_atomic(out, CHECKPOINT_FILE, &checkpoint_bytes(t, &meta)) {
                save_err = Some(e);
                return Err(NetError::Io("periodic checkpoint failed".into()));
            }
        }
        Ok(())
    });
    if let Some(e) = save_err {
        return Err(e);
    }
    let failure = match result {
        Ok(()) => None,
        Err(NetError::Diverged { epoch, detail, .. }) => {
            m.note(format!("diverged at epoch {epoch}: {detail}; checkpoint holds the last finite state"));
            Some(CliError::Numerical(format!("training diverged at epoch {epoch}: {detail}")))
        }
        Err(e) => return Err(e.into()),
    };

    m.write(out, CHECKPOINT_FILE, &checkpoint_bytes(&trainer, &meta))?;
    m.write(out, "history.csv", history_to_csv(&trainer.history).as_bytes())?;
    m.write(out, PREPROCESSOR_FILE, &p.preprocessor.to_bytes())?;
    let mut pair_csv = String::from("day2_id,day46_id\n");
    for &(i, j) in &pairs.pairs {
        let _ = writeln!(pair_csv, "{},{}", ds.day2.cell_ids[i], ds.day46.cell_ids[j]);
    }
    m.write(out, "pairs.csv", pair_csv.as_bytes())?;
    for (k, v) in &meta {
        m.meta(k, v);
    }
    m.meta("epochs", trainer.epoch());
    m.meta("converged", trainer.converged);
    m.meta("status", if failure.is_some() { "diverged" } else { "ok" });
    m.finish(out)?;
    match failure {
        Some(e) => Err(e),
        None => read_manifest(out),
    }
}

pub fn sinkhorn(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<RunManifest, CliError> {
    create_dir(out)?;
    let mut m = ManifestBuilder::new("sinkhorn", cfg, vec![seed]);
    let Loaded { ds, .. } = load_dataset(cfg, &mut m)?;
    let p = prepare_seed(cfg, &ds, seed)?;
    let run = p.run_sinkhorn(&cfg.sinkhorn)?;
    if !run.coupling.converged {
        return Err(CliError::Numerical(format!(
            "Sinkhorn did not reach tol {} within {} sweeps (epsilon {}); try a larger epsilon or epsilon_scale",
            cfg.sinkhorn.tol, cfg.sinkhorn.max_iter, run.coupling.epsilon
        )));
    }
    let src: Vec<String> = p.eval_rows.iter().map(|&i| ds.day2.cell_ids[i].clone()).collect();
    let dst: Vec<String> = run.target_rows.iter().map(|&j| ds.day46.cell_ids[j].clone()).collect();
    let tmp = tmp_path(out, "coupling.csv");
    write_coupling_csv(&tmp, &run.coupling, &src, &dst, 0.0)?;
    let bytes = std::fs::read(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    let _ = std::fs::remove_file(&tmp);
    m.write(out, "coupling.csv", &bytes)?;

    let mut pred = String::from("cell_id,assigned,real_labels,predicted_labels\n");
    for (k, id) in src.iter().enumerate() {
        let _ = writeln!(
            pred,
            "{id},{},{},{}",
            p.eval_labels[k], run.real_predictions[k], run.predicted_predictions[k]
        );
    }
    m.write(out, PREDICTIONS_FILE, pred.as_bytes())?;
    let rows = [
        AccuracyRow { method: "sinkhorn_real".into(), n_pairs: 0, seed, accuracy: run.real_accuracy },
        AccuracyRow { method: "sinkhorn_predicted".into(), n_pairs: 0, seed, accuracy: run.predicted_accuracy },
    ];
    m.write(out, "accuracy.csv", accuracy_csv(&rows).as_bytes())?;
    let summary = serde_json::json!({
        "coupling": run.coupling.summary(None),
        "transport_cost": run.transport_cost,
        "real_accuracy": run.real_accuracy,
        "predicted_accuracy": run.predicted_accuracy,
    });
    m.write(out, "summary.json", serde_json::to_string_pretty(&summary).expect("json").as_bytes())?;
    m.meta("seed", seed);
    m.meta("preprocessor_digest", p.preprocessor.digest());
    m.meta("marginal_error", run.coupling.marginal_error);
    m.finish(out)
}

fn parse_fate(s: &str, path: &Path) -> Result<Fate, CliError> {
    s.parse().map_err(|e: String| CliError::Data(format!("{}: {e}", path.display())))
}

/// Prepared state per seed, checked against the digest an artifact recorded.
struct SeedCache<'a> {
    cfg: &'a ExperimentConfig,
    ds: &'a Dataset,
    by_seed: BTreeMap<u64, Prepared>,
}

impl SeedCache<'_> {
    fn get(&mut self, seed: u64, digest: Option<&String>, what: &Path) -> Result<&Prepared, CliError> {
        if !self.by_seed.contains_key(&seed) {
            let p = prepare_seed(self.cfg, self.ds, seed)?;
            self.by_seed.insert(seed, p);
        }
        let p = &self.by_seed[&seed];
        if let Some(d) = digest {
            if *d != p.preprocessor.digest() {
                return Err(CliError::Data(format!(
                    "{}: PCA model mismatch; the artifact was produced with different data or preprocessing",
                    what.display()
                )));
            }
        }
        Ok(p)
    }
}

fn meta_u64(man: &RunManifest, key: &str, dir: &Path) -> Result<u64, CliError> {
    man.meta
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Data(format!("{}: manifest lacks `{key}`", dir.display())))
}

pub fn eval(cfg: &ExperimentConfig, artifacts: &[PathBuf], identity: bool, out: &Path) -> Result<RunManifest, CliError> {
    if artifacts.is_empty() && !identity {
        return Err(CliError::Usage("eval needs at least one artifact directory or --identity".into()));
    }
    create_dir(out)?;
    let mut m = ManifestBuilder::new("eval", cfg, Vec::new());
    let Loaded { ds, planted } = load_dataset(cfg, &mut m)?;
    let mut cache = SeedCache { cfg, ds: &ds, by_seed: BTreeMap::new() };
    let mut rows = Vec::new();
    let mut learned: Vec<(u64, String, Tensor)> = Vec::new();

    for (idx, dir) in artifacts.iter().enumerate() {
        let man = read_manifest(dir)?;
        let seed = meta_u64(&man, "seed", dir)?;
        match man.command.as_str() {
            "train" => {
                let path = dir.join(CHECKPOINT_FILE);
                m.input(format!("artifact{idx}/{CHECKPOINT_FILE}"), file_digest(&path)?);
                let ck = Checkpoint::load(&path)?;
                let p = cache.get(seed, ck.meta.get("preprocessor_digest"), &path)?;
                let ev = p.evaluate_net(&ck.trainer.transport)?;
                let method = ck.meta.get("method").cloned().unwrap_or_else(|| method_name(ck.trainer.method).into());
                rows.push(AccuracyRow { method: method.clone(), n_pairs: ck.trainer.cfg.n_pairs, seed, accuracy: ev.accuracy });
                learned.push((seed, method, ev.transported));
            }
            "sinkhorn" => {
                let path = dir.join(PREDICTIONS_FILE);
                m.input(format!("artifact{idx}/{PREDICTIONS_FILE}"), file_digest(&path)?);
                let p = cache.get(seed, man.meta.get("preprocessor_digest"), &path)?;
                let want: BTreeMap<&str, Fate> =
                    p.eval_rows.iter().zip(&p.eval_labels).map(|(&i, &f)| (ds.day2.cell_ids[i].as_str(), f)).collect();
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                let (mut n, mut real_ok, mut pred_ok) = (0usize, 0usize, 0usize);
                for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
                    let f: Vec<&str> = line.split(',').collect();
                    if f.len() != 4 {
                        return Err(CliError::Data(format!("{}: malformed row `{line}`", path.display())));
                    }
                    let truth = *want.get(f[0]).ok_or_else(|| {
                        CliError::Data(format!("{}: cell {} is not a labeled test cell", path.display(), f[0]))
                    })?;
                    n += 1;
                    real_ok += usize::from(parse_fate(f[2], &path)? == truth);
                    pred_ok += usize::from(parse_fate(f[3], &path)? == truth);
                }
                if n != want.len() {
                    return Err(CliError::Data(format!("{}: expected {} cells, found {n}", path.display(), want.len())));
                }
                for (name, ok) in [("sinkhorn_real", real_ok), ("sinkhorn_predicted", pred_ok)] {
                    rows.push(AccuracyRow { method: name.into(), n_pairs: 0, seed, accuracy: ok as f64 / n as f64 });
                }
            }
            other => return Err(CliError::Usage(format!("{}: cannot evaluate a `{other}` output", dir.display()))),
        }
    }

    if identity {
        let mut seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
        if seeds.is_empty() {
            seeds.extend(&cfg.eval.seeds);
        }
        for seed in seeds {
            let p = cache.get(seed, None, out)?;
            let ev = p.evaluate_identity()?;
            rows.push(AccuracyRow { method: "identity".into(), n_pairs: 0, seed, accuracy: ev.accuracy });
        }
    }
    m.write(out, "accuracy.csv", accuracy_csv(&rows).as_bytes())?;

    if !learned.is_empty() {
        let runs: Vec<(&Prepared, &Tensor)> = learned.iter().map(|(s, _, t)| (&cache.by_seed[s], t)).collect();
        let report = de_over_runs(&ds, &runs, cfg.eval.p_threshold, cfg.eval.welch)?;
        for r in 0..report.n_runs {
            m.write(out, &format!("de_run{r}.csv"), report.run_csv(r).as_bytes())?;
        }
        let mut summary = serde_json::to_value(report.summary()).expect("summary serializes");
        if let Some(planted) = &planted {
            let (pp, pr) = precision_recall(&report.predicted, planted);
            summary["planted_precision"] = serde_json::json!(pp);
            summary["planted_recall"] = serde_json::json!(pr);
            summary["n_planted"] = serde_json::json!(planted.len());
        }
        m.write(out, "de_summary.json", serde_json::to_string_pretty(&summary).expect("json").as_bytes())?;

        let (seed, name, transported) = &learned[0];
        let p = &cache.by_seed[seed];
        let by_fate = |f: Fate| -> Vec<usize> { (0..p.fates46.len()).filter(|&j| p.fates46[j] == Some(f)).collect() };
        let sets = vec![
            ("day2_test".to_string(), p.eval_inputs()),
            ("day46_monocyte".to_string(), p.z46.select_rows(&by_fate(Fate::Monocyte))),
            ("day46_neutrophil".to_string(), p.z46.select_rows(&by_fate(Fate::Neutrophil))),
            (format!("transported_{name}"), transported.clone()),
        ];
        let emb = export_embedding_2d(&sets)?;
        m.write(out, "embedding.csv", emb.to_csv().as_bytes())?;
        m.write(out, "embedding.svg", emb.to_svg().as_bytes())?;
    }
    m.finish(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationCell {
    pub n_pairs: usize,
    pub use_transport_cost: bool,
    pub seed: u64,
    pub accuracy: f64,
}

pub fn ablation_means(cells: &[AblationCell]) -> Vec<(usize, bool, f64)> {
    let mut acc: BTreeMap<(usize, bool), Vec<f64>> = BTreeMap::new();
    for c in cells {
        acc.entry((c.n_pairs, !c.use_transport_cost)).or_default().push(c.accuracy);
    }
    acc.into_iter().map(|((n, off), v)| (n, !off, v.iter().sum::<f64>() / v.len() as f64)).collect()
}

pub fn ablate(cfg: &ExperimentConfig, seeds: &[u64], threads: usize, out: &Path) -> Result<RunManifest, CliError> {
    create_dir(out)?;
    let mut m = ManifestBuilder::new("ablate", cfg, seeds.to_vec());
    let Loaded { ds, .. } = load_dataset(cfg, &mut m)?;
    let prepared: Vec<Prepared> = seeds.iter().map(|&s| prepare_seed(cfg, &ds, s)).collect::<Result<_, _>>()?;
    let eligible = prepared.iter().map(Prepared::n_eligible).min().unwrap_or(0);
    let counts = cfg.eval.pair_counts_for(eligible);
    m.meta("n_eligible_pairs", eligible);
    m.meta("pair_counts", format!("{counts:?}"));

    let mut jobs = Vec::new();
    for &n in &counts {
        for flag in [true, false] {
            for k in 0..prepared.len() {
                jobs.push((n, flag, k));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<AblationCell, CliError>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(n, flag, k)) = jobs.get(i) else { break };
                let base = superot_core::nets::TrainConfig { use_transport_cost: flag, ..cfg.train.clone() };
                let p = &prepared[k];
                let r = p
                    .run_learned(Method::SuperOt, &base, n)
                    .map(|run| AblationCell { n_pairs: n, use_transport_cost: flag, seed: p.seed, accuracy: run.evaluation.accuracy })
                    .map_err(CliError::from);
                results.lock().expect("no poisoned jobs")[i] = Some(r);
            });
        }
    });
    let cells: Vec<AblationCell> = results
        .into_inner()
        .expect("no poisoned jobs")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<_, _>>()?;

    let mut runs = String::from("n_pairs,use_transport_cost,seed,accuracy\n");
    for c in &cells {
        let _ = writeln!(runs, "{},{},{},{}", c.n_pairs, c.use_transport_cost, c.seed, c.accuracy);
    }
    m.write(out, "ablation_runs.csv", runs.as_bytes())?;
    let mut means = String::from("n_pairs,use_transport_cost,mean_accuracy\n");
    for (n, flag, mean) in ablation_means(&cells) {
        let _ = writeln!(means, "{n},{flag},{mean}");
    }
    m.write(out, "ablation.csv", means.as_bytes())?;
    m.finish(out)
}
