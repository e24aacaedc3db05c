use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use htdetect_core::dataset::{
    load_graph_jsonl, load_multimodal_jsonl, load_tabular_csv, merge_modalities, synth_generate,
    write_graph_jsonl, write_multimodal_jsonl, write_tabular_csv, ClassLabel, GraphLine,
};
use htdetect_core::features::{build_dataflow_graph, extract_branching_features, TABULAR_SLOTS};
use htdetect_core::metrics::{roc_points, write_roc_csv};
use htdetect_core::pipeline::{
    detect, prepare_dataset, run_all, AugmentConfig, ModelBundle, PipelineConfig,
};
use htdetect_core::rtl::{parse, ParseMode};
use htdetect_core::seed::sha256_hex;

use crate::config::{resolve_seed, RunConfig, RunInfo};
use crate::error::{self, CliError, CliResult};

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| error::io(path, e))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn hash_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&read(path)?))
}

fn mode(tolerant: bool) -> ParseMode {
    if tolerant {
        ParseMode::Tolerant
    } else {
        ParseMode::Strict
    }
}

fn design_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// `design_id,label` manifest; `?` leaves a design unlabeled.
fn load_labels(path: &Path) -> CliResult<BTreeMap<String, Option<ClassLabel>>> {
    let bytes = read(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let headers = rdr
        .headers()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::data(format!("{}: no `{name}` column", path.display())))
    };
    let (id_col, label_col) = (col("design_id")?, col("label")?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let cell = rec[label_col].trim();
        let label = if cell == "?" {
            None
        } else {
            Some(
                cell.parse::<ClassLabel>()
                    .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?,
            )
        };
        out.insert(rec[id_col].trim().to_string(), label);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct FeaturizeOptions<'a> {
    rtl: &'a Path,
    labels: Option<&'a Path>,
    mode: ParseMode,
}

#[derive(Serialize)]
struct FeaturizeReport {
    #[serde(flatten)]
    info: RunInfo,
    designs: usize,
    unlabeled: usize,
    skipped: Vec<String>,
}

pub fn featurize(
    rtl: &Path,
    out_tabular: &Path,
    out_graphs: &Path,
    labels: Option<&Path>,
    tolerant: bool,
) -> CliResult<i32> {
    if !rtl.is_dir() {
        return Err(CliError::config(format!("{} is not a directory", rtl.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(rtl)
        .map_err(|e| error::io(rtl, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "v"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::config(format!("no .v files in {}", rtl.display())));
    }
    let manifest = labels.map(load_labels).transpose()?;
    let mut info = RunInfo::new(
        "featurize",
        &FeaturizeOptions {
            rtl,
            labels,
            mode: mode(tolerant),
        },
    );
    if let Some(p) = labels {
        info.input_hashes.insert("labels".into(), hash_file(p)?);
    }
    let parsed: Vec<_> = files
        .par_iter()
        .map(|p| -> CliResult<_> {
            let bytes = read(p)?;
            let src = String::from_utf8_lossy(&bytes);
            let ast = parse(&src, mode(tolerant));
            Ok((p, sha256_hex(&bytes), ast))
        })
        .collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    let mut graphs = Vec::new();
    let mut skipped = Vec::new();
    for (path, hash, ast) in parsed {
        let ast = match ast {
            Ok(a) => a,
            Err(e) if tolerant => {
                eprintln!("warning: {}: skipped: {e}", path.display());
                skipped.push(path.display().to_string());
                continue;
            }
            Err(e) => return Err(CliError::from(e).context(path.display())),
        };
        for w in &ast.warnings {
            eprintln!("warning: {}:{w}", path.display());
        }
        let id = design_id(path);
        let label = manifest.as_ref().and_then(|m| m.get(&id).copied().flatten());
        let (g, diags) = build_dataflow_graph(&ast);
        for w in &diags {
            eprintln!("warning: {}: {w}", path.display());
        }
        rows.push((id.clone(), label, extract_branching_features(&ast).to_vec()));
        graphs.push(GraphLine::from_graph(&id, &g, label));
        let name = path.file_name().map_or_else(|| id.clone(), |n| n.to_string_lossy().into_owned());
        info.input_hashes.insert(name, hash);
    }
    let mut csv_bytes = Vec::new();
    write_tabular_csv(&mut csv_bytes, &TABULAR_SLOTS, &rows)?;
    let mut jsonl = Vec::new();
    write_graph_jsonl(&mut jsonl, &graphs)?;
    write(out_tabular, &csv_bytes)?;
    write(out_graphs, &jsonl)?;
    print!(
        "{}",
        json(&FeaturizeReport {
            info,
            designs: rows.len(),
            unlabeled: rows.iter().filter(|r| r.1.is_none()).count(),
            skipped,
        })
    );
    Ok(error::OK)
}

#[derive(Serialize)]
struct DatasetReport {
    #[serde(flatten)]
    info: RunInfo,
    samples: usize,
    class_counts: BTreeMap<ClassLabel, usize>,
    missing_modalities: usize,
}

fn counts(d: &htdetect_core::dataset::Dataset) -> BTreeMap<ClassLabel, usize> {
    let c = d.class_counts();
    ClassLabel::ALL.into_iter().map(|l| (l, c[l.index()])).collect()
}

pub fn merge(tabular: &Path, graphs: &Path, out: &Path) -> CliResult<i32> {
    let a = load_tabular_csv(tabular).map_err(|e| CliError::from(e).context(tabular.display()))?;
    let b = load_graph_jsonl(graphs).map_err(|e| CliError::from(e).context(graphs.display()))?;
    let d = merge_modalities(&a, &b)?;
    let mut bytes = Vec::new();
    write_multimodal_jsonl(&mut bytes, &d)?;
    write(out, &bytes)?;
    let mut info = RunInfo::new("merge", &(tabular, graphs));
    info.input_hashes.insert("tabular".into(), hash_file(tabular)?);
    info.input_hashes.insert("graphs".into(), hash_file(graphs)?);
    print!(
        "{}",
        json(&DatasetReport {
            info,
            samples: d.len(),
            class_counts: counts(&d),
            missing_modalities: d.missing_count(),
        })
    );
    Ok(error::OK)
}

pub struct AugmentArgs<'a> {
    pub input: &'a Path,
    pub out: &'a Path,
    pub target: usize,
    pub balance: f64,
    pub seed: Option<u64>,
    pub config: Option<&'a Path>,
}

pub fn augment(a: AugmentArgs) -> CliResult<i32> {
    let (file_cfg, cfg_hash) = match a.config {
        Some(p) => {
            let (c, h) = RunConfig::load(p)?;
            (c, Some(h))
        }
        None => (RunConfig::default(), None),
    };
    let seed = resolve_seed(a.seed, file_cfg.seed)?;
    let d = load_multimodal_jsonl(a.input).map_err(|e| CliError::from(e).context(a.input.display()))?;
    if a.target < d.len() {
        return Err(CliError::config(format!(
            "target {} is below the current size {}",
            a.target,
            d.len()
        )));
    }
    let aug = AugmentConfig {
        target_total: a.target,
        balance: a.balance,
        gan: file_cfg.augmentation.map(|x| x.gan).unwrap_or_default(),
    };
    aug.gan.validate()?;
    let cfg = PipelineConfig {
        seed,
        augmentation: Some(aug.clone()),
        ..PipelineConfig::default()
    };
    let out = prepare_dataset(&d, &cfg)?;
    let mut bytes = Vec::new();
    write_multimodal_jsonl(&mut bytes, &out)?;
    write(a.out, &bytes)?;
    let mut info = RunInfo::new("augment", &aug);
    info.seeds = cfg.seeds().into_iter().filter(|(k, _)| k == "root" || k == "gan").collect();
    info.input_hashes.insert("data".into(), hash_file(a.input)?);
    if let Some(h) = cfg_hash {
        info.input_hashes.insert("config".into(), h);
    }
    print!(
        "{}",
        json(&DatasetReport {
            info,
            samples: out.len(),
            class_counts: counts(&out),
            missing_modalities: out.missing_count(),
        })
    );
    Ok(error::OK)
}

pub struct TrainEvalArgs<'a> {
    pub config: Option<&'a Path>,
    pub data: Option<&'a Path>,
    pub out_dir: Option<&'a Path>,
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct ArmReport<'a> {
    #[serde(flatten)]
    info: RunInfo,
    result: &'a htdetect_core::pipeline::FusionResult,
}

pub fn train_eval(a: TrainEvalArgs) -> CliResult<i32> {
    let (file_cfg, cfg_hash) = match a.config {
        Some(p) => {
            let (c, h) = RunConfig::load(p)?;
            (c, Some(h))
        }
        None => (RunConfig::default(), None),
    };
    let data = a
        .data
        .map(Path::to_path_buf)
        .or_else(|| file_cfg.data.clone())
        .ok_or_else(|| CliError::config("no dataset: pass --data or set `data` in the config"))?;
    let out_dir = a
        .out_dir
        .map(Path::to_path_buf)
        .or_else(|| file_cfg.out_dir.clone())
        .ok_or_else(|| CliError::config("no output directory: pass --out-dir or set `out_dir` in the config"))?;
    let seed = resolve_seed(a.seed, file_cfg.seed)?;
    let cfg = file_cfg.pipeline(seed)?;
    let d = load_multimodal_jsonl(&data).map_err(|e| CliError::from(e).context(data.display()))?;
    let outcome = run_all(&d, &cfg)?;
    let mut inputs = BTreeMap::from([("data".to_string(), hash_file(&data)?)]);
    if let Some(h) = cfg_hash {
        inputs.insert("config".into(), h);
    }
    let mut report = outcome.report;
    report.input_hashes = inputs.clone();
    fs::create_dir_all(&out_dir).map_err(|e| error::io(&out_dir, e))?;
    for (arm, r) in &outcome.results {
        let info = RunInfo {
            seeds: report.seeds.clone(),
            input_hashes: inputs.clone(),
            config_hash: report.config_hash.clone(),
            ..RunInfo::new("train-eval", &cfg)
        };
        write(&out_dir.join(format!("metrics_{arm}.json")), json(&ArmReport { info, result: r }).as_bytes())?;
        let mut cal = Vec::new();
        r.metrics
            .calibration
            .write_csv(&mut cal)
            .map_err(|e| error::io(&out_dir, e))?;
        write(&out_dir.join(format!("calibration_{arm}.csv")), &cal)?;
        let mut roc = Vec::new();
        let points = roc_points(&r.forecast()).unwrap_or_default();
        write_roc_csv(&points, &mut roc).map_err(|e| error::io(&out_dir, e))?;
        write(&out_dir.join(format!("roc_{arm}.csv")), &roc)?;
    }
    write(&out_dir.join("bundle.json"), outcome.bundle.to_json().as_bytes())?;
    let text = json(&report);
    write(&out_dir.join("winner.json"), text.as_bytes())?;
    print!("{text}");
    Ok(error::OK)
}

pub fn detect_file(bundle: &Path, confidence: f64, file: &Path) -> CliResult<i32> {
    let text = fs::read_to_string(bundle).map_err(|e| CliError::config(format!("{}: {e}", bundle.display())))?;
    let b = ModelBundle::from_json(&text)?;
    let src = String::from_utf8_lossy(&read(file)?).into_owned();
    let report = detect(&b, &design_id(file), &src, confidence)
        .map_err(|e| CliError::from(e).context(file.display()))?;
    print!("{}", json(&report));
    Ok(if report.empty || report.uncertain {
        error::DETECT_UNSURE
    } else if report.point_prediction == ClassLabel::TI {
        error::DETECT_TI
    } else {
        error::OK
    })
}

pub fn ast(file: &Path, tolerant: bool) -> CliResult<i32> {
    let src = String::from_utf8_lossy(&read(file)?).into_owned();
    let ast = parse(&src, mode(tolerant)).map_err(|e| CliError::from(e).context(file.display()))?;
    for w in &ast.warnings {
        eprintln!("warning: {}:{w}", file.display());
    }
    println!("{}", ast.to_json());
    Ok(error::OK)
}

#[derive(Serialize)]
struct SynthReport {
    #[serde(flatten)]
    info: RunInfo,
    designs: usize,
    class_counts: BTreeMap<ClassLabel, usize>,
}

#[derive(Serialize)]
struct SynthOptions {
    n: usize,
    trojan_rate: f64,
}

pub fn synth(n: usize, trojan_rate: f64, seed: Option<u64>, out_dir: &Path, dataset: Option<&Path>) -> CliResult<i32> {
    if n < 2 || !(trojan_rate > 0.0 && trojan_rate < 1.0) {
        return Err(CliError::config("need --n >= 2 and --trojan-rate in (0, 1)"));
    }
    let seed = resolve_seed(seed, None)?;
    let (designs, d) = synth_generate(n, trojan_rate, seed);
    let mut labels = String::from("design_id,label\n");
    for s in &designs {
        write(&out_dir.join(format!("{}.v", s.design_id)), s.source.as_bytes())?;
        labels.push_str(&format!("{},{}\n", s.design_id, s.label));
    }
    write(&out_dir.join("labels.csv"), labels.as_bytes())?;
    if let Some(p) = dataset {
        let mut bytes = Vec::new();
        write_multimodal_jsonl(&mut bytes, &d)?;
        write(p, &bytes)?;
    }
    let mut info = RunInfo::new("synth", &SynthOptions { n, trojan_rate });
    info.seeds.insert("root".into(), seed);
    print!(
        "{}",
        json(&SynthReport {
            info,
            designs: designs.len(),
            class_counts: counts(&d),
        })
    );
    Ok(error::OK)
}
