//! Operator-facing command surface. Every command is deterministic given its
//! resolved configuration and seeds; each output directory receives that
//! resolved configuration so reruns reproduce outputs byte for byte.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 infeasible
//! component tuning.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::circuit::{tune_components, CircuitParams, ResistorLadder, TuneConstraints};
use crate::cmmformer::{
    evaluate, load_params, save_params, train, Ablation, CmmModel, ModelConfig, SpeciesData,
    TrainConfig,
};
use crate::config::RunConfig;
use crate::curation::{build_dataset, CuratedDataset, DatasetManifest};
use crate::dropsim::{
    simulate_campaign, synth_event, DeviceConfig, DeviceIndividuality, DropEvent, Scenario,
    SpeciesClass, SpeciesProfile,
};
use crate::features::{
    counting_train, CountingFeatures, CountingNet, CountingTrainConfig, COUNTING_CLASSES,
};
use crate::metrics::{classification_metrics, counts_to_millivolts, eta, ConfusionMatrix};
use crate::optics::{coverage_map, Layout};
use crate::{io, Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;

const SPECIES_NAMES: [&str; 5] = ["Sz", "Rd", "Tc", "Os", "Cp"];

/// Entry point used by the binary: parse, dispatch, map errors to exit codes.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_CONFIG,
                Error::Infeasible(_) => EXIT_INFEASIBLE,
                _ => EXIT_DATA,
            }
        }
    }
}

fn dispatch(args: &[String]) -> Result<()> {
    let Some(cmd) = args.first() else {
        return Err(Error::Config(usage()));
    };
    let flags = Flags::parse(&args[1..])?;
    match cmd.as_str() {
        "simulate" => cmd_simulate(&flags.require("--config")?, &flags.require("--out")?),
        "curate" => cmd_curate(
            &flags.require("--in")?,
            &flags.require("--out")?,
            flags.has("--paper-order"),
        ),
        "bench-layout" => cmd_bench_layout(&flags.require("--config")?),
        "train" => cmd_train(
            &flags.require("--task")?,
            &flags.require("--data")?,
            &flags.require("--out")?,
            flags.get("--ablate"),
        ),
        "eval" => cmd_eval(
            &flags.require("--task")?,
            &flags.require("--data")?,
            &flags.require("--model")?,
            flags.get("--out"),
            flags.has("--per-device"),
            flags.get("--ablate"),
        ),
        "report" => cmd_report(&flags.require("--in")?, &flags.require("--out")?),
        other => Err(Error::Config(format!("unknown command {other:?}\n{}", usage()))),
    }
}

fn usage() -> String {
    "usage: pestsim <command> [flags]\n\
     commands:\n\
     \x20 simulate     --config FILE --out DIR\n\
     \x20 curate       --in DIR --out DIR\n\
     \x20 bench-layout --config FILE\n\
     \x20 train        --task counting|species --data DIR --out DIR [--ablate NAME]\n\
     \x20 eval         --task counting|species --data DIR --model DIR [--out DIR] [--per-device] [--ablate NAME]\n\
     \x20 report       --in DIR --out DIR\n\
     PESTSIM_SEED overrides the config seed."
        .to_string()
}

struct Flags {
    values: BTreeMap<String, String>,
    switches: Vec<String>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut switches = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let flag = &args[i];
            if !flag.starts_with("--") {
                return Err(Error::Config(format!("unexpected argument {flag:?}\n{}", usage())));
            }
            if flag == "--per-device" || flag == "--paper-order" {
                switches.push(flag.clone());
                i += 1;
                continue;
            }
            let Some(value) = args.get(i + 1) else {
                return Err(Error::Config(format!("flag {flag} needs a value")));
            };
            if values.insert(flag.clone(), value.clone()).is_some() {
                return Err(Error::Config(format!("flag {flag} given twice")));
            }
            i += 2;
        }
        Ok(Self { values, switches })
    }

    fn require(&self, flag: &str) -> Result<String> {
        self.values
            .get(flag)
            .cloned()
            .ok_or_else(|| Error::Config(format!("missing required flag {flag}\n{}", usage())))
    }

    fn get(&self, flag: &str) -> Option<String> {
        self.values.get(flag).cloned()
    }

    fn has(&self, flag: &str) -> bool {
        self.switches.iter().any(|s| s == flag)
    }
}

fn load_config(path: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(Path::new(path))?;
    cfg.apply_env_seed()?;
    Ok(cfg)
}

fn load_run_dir_config(dir: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&dir.join("resolved.config"))?;
    cfg.apply_env_seed()?;
    Ok(cfg)
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> Result<()> {
    Ok(std::fs::write(dir.join("resolved.config"), cfg.to_text())?)
}

fn cmd_simulate(config_path: &str, out_dir: &str) -> Result<()> {
    let cfg = load_config(config_path)?;
    let out = PathBuf::from(out_dir);
    std::fs::create_dir_all(&out)?;
    let campaign = cfg.campaign();
    let result = simulate_campaign(&campaign)?;
    io::write_records_jsonl(&out.join("records.jsonl"), &result.records)?;
    io::write_records_binary(&out.join("records.pstw"), &result.records)?;
    io::write_truth_csv(&out.join("truth.csv"), &result.truth)?;
    write_resolved(&out, &cfg)?;
    let n_ref = result
        .records
        .iter()
        .filter(|r| r.truth.as_ref().is_some_and(|t| t.reference))
        .count();
    println!(
        "simulate: {} events on {} devices -> {} records ({} reference) in {}",
        result.truth.len(),
        campaign.n_devices,
        result.records.len(),
        n_ref,
        out.display()
    );
    Ok(())
}

fn cmd_curate(in_dir: &str, out_dir: &str, paper_order: bool) -> Result<()> {
    let input = PathBuf::from(in_dir);
    let mut cfg = load_run_dir_config(&input)?;
    if paper_order {
        // Compatibility mode: oversample before splitting, accepting the
        // duplicate leakage across splits that order implies.
        cfg.paper_order = true;
    }
    let records = io::read_records_jsonl(&input.join("records.jsonl"))?;
    let dataset = build_dataset(records, &cfg.curation())?;
    let out = PathBuf::from(out_dir);
    std::fs::create_dir_all(&out)?;
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&dataset.manifest())?,
    )?;
    let mut disp = String::from("disposition,count\n");
    for (name, count) in dataset.disposition_counts() {
        disp.push_str(&format!("{name},{count}\n"));
    }
    std::fs::write(out.join("dispositions.csv"), disp)?;
    let all: Vec<_> = dataset.records.values().cloned().collect();
    io::write_records_jsonl(&out.join("records.jsonl"), &all)?;
    write_resolved(&out, &cfg)?;
    println!(
        "curate: {} entries ({} counting train after oversampling, {} species train) in {}",
        dataset.entries.len(),
        dataset.counting.train.len(),
        dataset.species.train.len(),
        out.display()
    );
    for (name, count) in dataset.disposition_counts() {
        println!("  {name}: {count}");
    }
    Ok(())
}

/// One row of the layout/circuit sensitivity bench.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchRow {
    pub combination: String,
    pub device: String,
    pub mean_eta_mv: f64,
    pub sd_eta_mv: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// (combination, mean over devices, sd over all drops)
    pub averages: Vec<(String, f64, f64)>,
}

/// Simulate the three layout/circuit combinations on the hardest species and
/// report the per-device sensitivity. Drop geometry and device individuality
/// are paired across combinations.
pub fn bench_layout(cfg: &RunConfig) -> Result<BenchReport> {
    let base_circuit = cfg.circuit();
    let ladder = ResistorLadder::e12(50.0, 1_000_000.0);
    let cons = TuneConstraints {
        max_response_time: cfg.bench_max_response_time_s,
        linearity_margin: cfg.bench_linearity_margin_v,
    };
    let (tail_rr, tail_re) = tune_components(&base_circuit, &cons, &ladder)?;
    let conventional = CircuitParams { r_r: cfg.bench_conv_r_r, r_e: cfg.bench_conv_r_e, ..base_circuit };
    let tailored = CircuitParams { r_r: tail_rr, r_e: tail_re, ..base_circuit };

    let combos: [(&str, Layout, CircuitParams); 3] = [
        ("symmetric+conventional", Layout::Symmetric, conventional),
        ("asymmetric+conventional", Layout::AsymmetricOrthogonal, conventional),
        ("asymmetric+tailored", Layout::AsymmetricOrthogonal, tailored),
    ];

    let profile = SpeciesProfile::standard(SpeciesClass::Cp);
    let mut rows = Vec::new();
    let mut averages = Vec::new();
    for (name, layout, circuit) in combos {
        let mut geometry = cfg.geometry();
        geometry.layout = layout;
        geometry.validate()?;
        let mut combo_etas: Vec<f64> = Vec::new();
        for d in 0..cfg.bench_devices {
            let device = DeviceConfig::new(
                format!("pm{:02}", d + 1),
                splitmix(cfg.seed, 0xBE ^ d as u64),
                geometry,
                circuit,
                cfg.trigger(),
                cfg.noise(),
                &DeviceIndividuality { gain_sigma: cfg.gain_sigma, offset_sd_v: cfg.offset_sd_v },
            );
            let mut etas = Vec::with_capacity(cfg.bench_drops);
            for k in 0..cfg.bench_drops {
                // Same entry/speed draws for every combination: paired drops.
                let drop_seed = splitmix(cfg.seed, 0xD0_0000 ^ (d * 1000 + k) as u64);
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
                    splitmix(drop_seed, 3),
                );
                let (t, r) = sample_disc(&mut rng, geometry.dropzone_radius);
                let speed = (profile.fall_speed_mean
                    + profile.fall_speed_sd * standard_normal_from(&mut rng))
                .clamp(0.5, 2.0);
                let event = DropEvent {
                    profile,
                    entry_t: t,
                    entry_r: r,
                    speed,
                    scenario: Scenario::NormalSingle,
                    seed: drop_seed,
                };
                let synth = synth_event(&event, &device)?;
                let dv = |ch: &[u16]| -> f64 {
                    let mut sorted = ch.to_vec();
                    sorted.sort_unstable();
                    let med = sorted[sorted.len() / 2] as f64;
                    let peak = ch.iter().map(|&c| (c as f64 - med).abs()).fold(0.0, f64::max);
                    counts_to_millivolts(peak, circuit.vcc, circuit.adc_bits)
                };
                etas.push(eta(dv(&synth.ch1), dv(&synth.ch2))?);
            }
            let mean = etas.iter().sum::<f64>() / etas.len() as f64;
            let var =
                etas.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / etas.len() as f64;
            rows.push(BenchRow {
                combination: name.to_string(),
                device: format!("pm{:02}", d + 1),
                mean_eta_mv: mean,
                sd_eta_mv: var.sqrt(),
            });
            combo_etas.extend(etas);
        }
        let mean = combo_etas.iter().sum::<f64>() / combo_etas.len() as f64;
        let var = combo_etas.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
            / combo_etas.len() as f64;
        averages.push((name.to_string(), mean, var.sqrt()));
    }
    Ok(BenchReport { rows, averages })
}

fn cmd_bench_layout(config_path: &str) -> Result<()> {
    let cfg = load_config(config_path)?;
    let report = bench_layout(&cfg)?;
    println!("combination,device,mean_eta_mv,sd_eta_mv");
    for row in &report.rows {
        println!(
            "{},{},{:.2},{:.2}",
            row.combination, row.device, row.mean_eta_mv, row.sd_eta_mv
        );
    }
    for (name, mean, sd) in &report.averages {
        println!("{name},average,{mean:.2},{sd:.2}");
    }
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<(RunConfig, CuratedDataset)> {
    let cfg = load_run_dir_config(dir)?;
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let records = io::read_records_jsonl(&dir.join("records.jsonl"))?;
    Ok((cfg, CuratedDataset::from_manifest(manifest, records)?))
}

/// Serialized description of a trained counting head.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct CountingManifest {
    in_dim: usize,
    hidden: usize,
    bins: usize,
    feat_center: Vec<f64>,
    feat_scale: Vec<f64>,
}

fn counting_examples(
    ds: &CuratedDataset,
    ids: &[String],
    bins: usize,
) -> Result<Vec<(Vec<f64>, usize)>> {
    ids.iter()
        .map(|id| {
            let rec = ds.record(id)?;
            let label = ds
                .entry(id)
                .and_then(|e| e.counting_label)
                .ok_or_else(|| Error::Data(format!("record {id} has no counting label")))?;
            Ok((CountingFeatures::from_record(rec, bins)?.to_vec(), label as usize))
        })
        .collect()
}

fn parse_ablation(flag: Option<String>) -> Result<Ablation> {
    match flag {
        None => Ok(Ablation::None),
        Some(s) => Ablation::parse(&s),
    }
}

fn cmd_train(task: &str, data_dir: &str, out_dir: &str, ablate: Option<String>) -> Result<()> {
    let data = PathBuf::from(data_dir);
    let (cfg, ds) = load_dataset(&data)?;
    let out = PathBuf::from(out_dir);
    std::fs::create_dir_all(&out)?;
    let ablation = parse_ablation(ablate)?;
    match task {
        "counting" => {
            let train_set = counting_examples(&ds, &ds.counting.train, cfg.counting_bins)?;
            let tc = CountingTrainConfig {
                hidden: cfg.counting_hidden,
                lr: cfg.lr,
                batch_size: cfg.batch_size,
                epochs: cfg.counting_epochs,
                seed: cfg.seed,
            };
            let (net, history) = counting_train(&train_set, &tc)?;
            save_params(&out.join("counting.pstm"), &net.params)?;
            std::fs::write(
                out.join("counting_model.json"),
                serde_json::to_string_pretty(&CountingManifest {
                    in_dim: net.in_dim,
                    hidden: net.hidden,
                    bins: cfg.counting_bins,
                    feat_center: net.feat_center.clone(),
                    feat_scale: net.feat_scale.clone(),
                })?,
            )?;
            std::fs::write(out.join("history.json"), serde_json::to_string_pretty(&history)?)?;
            write_resolved(&out, &cfg)?;
            println!(
                "train counting: {} examples, final train accuracy {:.4}",
                train_set.len(),
                history.train_accuracy
            );
        }
        "species" => {
            let species = SpeciesData::from_dataset(&ds)?;
            let tc = TrainConfig {
                model: cfg.model(),
                lr: cfg.lr,
                batch_size: cfg.batch_size,
                max_epochs: cfg.max_epochs,
                patience: cfg.patience,
                seed: cfg.seed,
                ablation,
            };
            let (model, history) = train(&species, &tc)?;
            save_params(&out.join("species.pstm"), &model.params)?;
            std::fs::write(out.join("model.json"), serde_json::to_string_pretty(&model.cfg)?)?;
            std::fs::write(out.join("history.json"), serde_json::to_string_pretty(&history)?)?;
            write_resolved(&out, &cfg)?;
            let last = history.epochs.last().map(|e| e.val_accuracy).unwrap_or(0.0);
            println!(
                "train species: {} examples, best epoch {}, val accuracy {:.4}",
                species.train.len(),
                history.best_epoch,
                last
            );
        }
        other => return Err(Error::Config(format!("unknown task {other:?} (counting | species)"))),
    }
    Ok(())
}

fn print_metrics_block(label: &str, cm: &ConfusionMatrix) -> Result<()> {
    let m = classification_metrics(cm)?;
    println!(
        "{label}: kappa {:.4}  recall {:.4}  precision {:.4}  f1 {:.4}  accuracy {:.4}",
        m.kappa, m.macro_recall, m.macro_precision, m.macro_f1, m.accuracy
    );
    Ok(())
}

fn write_metrics(out: &Path, name: &str, cm: &ConfusionMatrix) -> Result<()> {
    let m = classification_metrics(cm)?;
    std::fs::write(out.join(format!("{name}_metrics.json")), serde_json::to_string_pretty(&m)?)?;
    let mut csv = String::from(crate::metrics::ClassificationMetrics::CSV_HEADER);
    csv.push('\n');
    csv.push_str(&m.to_csv_row());
    csv.push('\n');
    std::fs::write(out.join(format!("{name}_metrics.csv")), csv)?;
    std::fs::write(out.join(format!("{name}_confusion.csv")), cm.to_csv())?;
    Ok(())
}

fn cmd_eval(
    task: &str,
    data_dir: &str,
    model_dir: &str,
    out_dir: Option<String>,
    per_device: bool,
    ablate: Option<String>,
) -> Result<()> {
    let data = PathBuf::from(data_dir);
    let model_path = PathBuf::from(model_dir);
    let (cfg, ds) = load_dataset(&data)?;
    let ablation = parse_ablation(ablate)?;
    let out = out_dir.map(PathBuf::from);
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir)?;
    }
    match task {
        "counting" => {
            let manifest: CountingManifest = serde_json::from_str(&std::fs::read_to_string(
                model_path.join("counting_model.json"),
            )?)?;
            let params = load_params(&model_path.join("counting.pstm"))?;
            let mut net = CountingNet::with_params(manifest.in_dim, manifest.hidden, params)?;
            net.set_normalizer(manifest.feat_center.clone(), manifest.feat_scale.clone())?;
            let test = counting_examples(&ds, &ds.counting.test, manifest.bins)?;
            let train_set = counting_examples(&ds, &ds.counting.train, manifest.bins)?;
            let mut cm = ConfusionMatrix::new(
                (0..COUNTING_CLASSES).map(|c| c.to_string()).collect(),
            );
            for (x, label) in &test {
                cm.record(*label, net.predict(x)?);
            }
            // Majority-class baseline from the training labels.
            let mut class_counts = [0usize; COUNTING_CLASSES];
            for (_, label) in &train_set {
                class_counts[*label] += 1;
            }
            let majority =
                class_counts.iter().enumerate().max_by_key(|(_, c)| **c).map(|(i, _)| i).unwrap();
            let baseline = test.iter().filter(|(_, l)| *l == majority).count() as f64
                / test.len().max(1) as f64;
            print_metrics_block("counting", &cm)?;
            println!("counting majority-class baseline accuracy: {baseline:.4}");
            if let Some(dir) = &out {
                write_metrics(dir, "counting", &cm)?;
                write_resolved(dir, &cfg)?;
            }
        }
        "species" => {
            let model_cfg: ModelConfig =
                serde_json::from_str(&std::fs::read_to_string(model_path.join("model.json"))?)?;
            let params = load_params(&model_path.join("species.pstm"))?;
            let model = CmmModel::from_params(model_cfg, params)?;
            let species = SpeciesData::from_dataset(&ds)?;
            let pairs = evaluate(&model, &species.test, &species.pools, cfg.seed, ablation)?;
            let mut cm =
                ConfusionMatrix::new(SPECIES_NAMES.iter().map(|s| s.to_string()).collect());
            for (t, p) in &pairs {
                cm.record(*t, *p);
            }
            print_metrics_block("species", &cm)?;
            if let Some(dir) = &out {
                write_metrics(dir, "species", &cm)?;
                write_resolved(dir, &cfg)?;
            }
            if per_device {
                let mut by_device: BTreeMap<String, Vec<crate::cmmformer::SpeciesExample>> =
                    BTreeMap::new();
                for ex in &species.test {
                    by_device.entry(ex.device_id.clone()).or_default().push(ex.clone());
                }
                let mut csv = String::from("device,");
                csv.push_str(crate::metrics::ClassificationMetrics::CSV_HEADER);
                csv.push('\n');
                for (device, examples) in by_device {
                    let pairs =
                        evaluate(&model, &examples, &species.pools, cfg.seed, ablation)?;
                    let mut cm = ConfusionMatrix::new(
                        SPECIES_NAMES.iter().map(|s| s.to_string()).collect(),
                    );
                    for (t, p) in &pairs {
                        cm.record(*t, *p);
                    }
                    let m = classification_metrics(&cm)?;
                    println!(
                        "species[{device}]: kappa {:.4}  recall {:.4}  precision {:.4}  f1 {:.4}  accuracy {:.4}",
                        m.kappa, m.macro_recall, m.macro_precision, m.macro_f1, m.accuracy
                    );
                    csv.push_str(&format!("{device},{}\n", m.to_csv_row()));
                }
                if let Some(dir) = &out {
                    std::fs::write(dir.join("species_per_device.csv"), csv)?;
                }
            }
        }
        other => return Err(Error::Config(format!("unknown task {other:?} (counting | species)"))),
    }
    Ok(())
}

fn cmd_report(in_dir: &str, out_dir: &str) -> Result<()> {
    let input = PathBuf::from(in_dir);
    let out = PathBuf::from(out_dir);
    std::fs::create_dir_all(&out)?;
    let mut wrote_any = false;

    let records_path = input.join("records.jsonl");
    if records_path.exists() {
        let records = io::read_records_jsonl(&records_path)?;
        let mut csv = String::from("record_id,device_id,species,count,duration,peak,energy\n");
        for rec in &records {
            let (duration, peak, energy) = crate::curation::shape_features(rec, 5);
            let (species, count) = rec
                .truth
                .as_ref()
                .map(|t| (t.species.map_or("none", |s| s.as_str()), t.count))
                .unwrap_or(("none", 0));
            csv.push_str(&format!(
                "{},{},{},{},{},{:.1},{:.1}\n",
                rec.record_id(),
                rec.device_id,
                species,
                count,
                duration,
                peak,
                energy
            ));
        }
        std::fs::write(out.join("features_hist.csv"), csv)?;
        wrote_any = true;
    }

    let config_path = input.join("resolved.config");
    if config_path.exists() {
        let cfg = RunConfig::load(&config_path)?;
        let mut csv = String::from("layout,both_pairs,one_pair,blind\n");
        for layout in [Layout::Symmetric, Layout::AsymmetricOrthogonal] {
            let mut geom = cfg.geometry();
            geom.layout = layout;
            let rep = coverage_map(&geom, 0.05)?;
            let name = match layout {
                Layout::Symmetric => "symmetric",
                Layout::AsymmetricOrthogonal => "asymmetric_orthogonal",
            };
            csv.push_str(&format!(
                "{name},{:.6},{:.6},{:.6}\n",
                rep.both_pairs, rep.one_pair, rep.blind
            ));
        }
        std::fs::write(out.join("coverage.csv"), csv)?;
        wrote_any = true;
    }

    // Aggregate any metric reports found in the input directory.
    let mut metric_files: Vec<PathBuf> = std::fs::read_dir(&input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with("_metrics.json"))
        })
        .collect();
    metric_files.sort();
    if !metric_files.is_empty() {
        let mut csv = String::from("source,");
        csv.push_str(crate::metrics::ClassificationMetrics::CSV_HEADER);
        csv.push('\n');
        for path in metric_files {
            let m: crate::metrics::ClassificationMetrics =
                serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            let name = path.file_stem().unwrap().to_string_lossy().into_owned();
            csv.push_str(&format!("{name},{}\n", m.to_csv_row()));
        }
        std::fs::write(out.join("metrics_table.csv"), csv)?;
        wrote_any = true;
    }

    if !wrote_any {
        return Err(Error::Data(format!(
            "nothing to report: {} has no records.jsonl, resolved.config or *_metrics.json",
            input.display()
        )));
    }
    println!("report: wrote plot-ready tables to {}", out.display());
    Ok(())
}

fn splitmix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_disc(rng: &mut rand_chacha::ChaCha8Rng, radius: f64) -> (f64, f64) {
    use rand::Rng;
    let r = radius * rng.gen_range(0.0f64..1.0).sqrt();
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    (r * phi.cos(), r * phi.sin())
}

fn standard_normal_from(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
