use std::path::{Path, PathBuf};
use std::time::Instant;

use mcsd_core::data::{load_csv_with_classes, metadata_path, save_csv, save_metadata, Dataset, IdentityWorld, Standardizer};
use mcsd_core::metrics::{calibration_report, entropy_cdf, entropy_cdf_csv, reliability_csv, DEFAULT_BINS};
use mcsd_core::resnet::DropoutMasks;
use mcsd_core::rng::{self, Domain};
use mcsd_core::stochastic::{pass_gates, DEFAULT_PASSES};
use mcsd_core::train::{self as trainer, grad_check_loss, search_drop_rate, LossInputs, SearchRow};
use mcsd_core::verify::{calibrate, morph_sweep, Calibration, MorphPoint, DEFAULT_FAR};
use mcsd_core::{
    mc_predict, CalibrationReport, Checkpoint, DepthSchedule, GateConvention, GateMask, Matrix, McConfig, NetworkSpec,
    PredictionSet, Regime, ResidualNet, TrainConfig, TrainReport, VerificationConfig,
};
use rand::Rng;
use serde::Serialize;

use crate::config::{
    self, check_version, resolve, DataFiles, DataSource, EvalConfig, GenDataConfig, GradCheckConfig, McRunConfig,
    OodConfig, SyntheticPairs, TrainRunConfig, VerifyConfig,
};
use crate::output::{envelope, warn, CliError, OutDir};
use crate::{EvalArgs, GenDataArgs, GradCheckArgs, McFlags, OodArgs, TrainArgs, VerifyArgs};

type Result<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct DatasetEntry {
    name: String,
    file: String,
    n: usize,
    d: usize,
    num_classes: usize,
}

/// Writes `{name}.csv` plus its metadata sidecar for every set.
fn write_sets(out: &OutDir, sets: &[(&str, &Dataset)]) -> Result<Vec<DatasetEntry>> {
    let mut entries = Vec::with_capacity(sets.len());
    for (name, ds) in sets {
        let file = format!("{name}.csv");
        let path = out.path(&file);
        save_csv(ds, &path)?;
        save_metadata(ds, &path)?;
        out.note(&file);
        eprintln!("wrote {}", metadata_path(&path).display());
        entries.push(DatasetEntry {
            name: name.to_string(),
            file,
            n: ds.len(),
            d: ds.dim(),
            num_classes: ds.num_classes,
        });
    }
    Ok(entries)
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let (mut cfg, _) = config::load::<GenDataConfig>(args.common.config.as_deref())?;
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    let generated = cfg.generate()?;
    let out = OutDir::create(&args.common.out)?;
    let sets: Vec<(&str, &Dataset)> = generated.sets.iter().map(|(n, d)| (*n, d)).collect();
    let entries = write_sets(&out, &sets)?;

    #[derive(Serialize)]
    struct Payload {
        datasets: Vec<DatasetEntry>,
    }
    out.json("gen_data.json", &envelope("gen-data", &cfg, Payload { datasets: entries }))?;
    Ok(())
}

struct TrainData {
    train: Dataset,
    val: Option<Dataset>,
    test: Option<Dataset>,
}

fn non_empty(ds: Option<Dataset>) -> Option<Dataset> {
    ds.filter(|d| !d.is_empty())
}

fn load_train_data(cfg: &mut TrainRunConfig, base: &Path, out: &OutDir) -> Result<TrainData> {
    match &mut cfg.data {
        DataSource::Files(files) => {
            let DataFiles {
                train,
                val,
                test,
                num_classes,
            } = files;
            *train = resolve(base, train);
            let train_set = load_csv_with_classes(&*train, *num_classes)?;
            let classes = Some(train_set.num_classes);
            let load_opt = |p: &mut Option<PathBuf>| -> Result<Option<Dataset>> {
                match p {
                    Some(path) => {
                        *path = resolve(base, path);
                        Ok(Some(load_csv_with_classes(&*path, classes)?))
                    }
                    None => Ok(None),
                }
            };
            let val = load_opt(val)?;
            let test = load_opt(test)?;
            Ok(TrainData {
                train: train_set,
                val: non_empty(val),
                test: non_empty(test),
            })
        }
        DataSource::Generate(g) => {
            let generated = g.generate()?;
            let sets: Vec<(&str, &Dataset)> = generated.sets.iter().map(|(n, d)| (*n, d)).collect();
            write_sets(out, &sets)?;
            let train = generated
                .get("train")
                .or_else(|| generated.get("data"))
                .cloned()
                .ok_or_else(|| CliError::input("generated data has no training split"))?;
            Ok(TrainData {
                train,
                val: non_empty(generated.get("val").cloned()),
                test: non_empty(generated.get("test").cloned()),
            })
        }
    }
}

#[derive(Serialize)]
struct SearchOut {
    best: f64,
    table: Vec<SearchRow>,
}

#[derive(Serialize)]
struct TrainPayload<'a> {
    network: NetworkSpec,
    train: &'a TrainReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    search: Option<SearchOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<CalibrationReport>,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let (mut cfg, base) = config::load::<TrainRunConfig>(args.common.config.as_deref())?;
    check_version(cfg.format_version)?;
    if let Some(seed) = args.common.seed {
        cfg.training.seed = seed;
    }
    if let Some(regime) = args.regime {
        cfg.training.regime = regime;
    }
    if cfg.eval_passes == 0 {
        return Err(CliError::input("eval_passes must be >= 1"));
    }
    if let Some(search) = &cfg.search {
        if cfg.training.regime == Regime::Det {
            return Err(CliError::input("search needs regime MCSD or MCDO"));
        }
        if search.candidates.is_empty() || search.passes == 0 {
            return Err(CliError::input("search needs at least one candidate and passes >= 1"));
        }
    }

    let out = OutDir::create(&args.common.out)?;
    let mut data = load_train_data(&mut cfg, &base, &out)?;
    let spec = NetworkSpec {
        input_dim: data.train.dim(),
        hidden_dim: cfg.network.hidden_dim,
        num_blocks: cfg.network.num_blocks,
        num_classes: data.train.num_classes,
        use_batchnorm: cfg.network.use_batchnorm,
    };
    spec.validate()?;
    cfg.training.validate(&spec)?;
    if let Some(s) = &cfg.search {
        for &c in &s.candidates {
            let mut probe = cfg.training.clone();
            match probe.regime {
                Regime::Mcsd => probe.q_final = c,
                _ => probe.dropout_rate = c,
            }
            probe.validate(&spec)?;
        }
    }

    let standardizer = if cfg.standardize {
        let s = Standardizer::fit(&data.train.features)?;
        data.train = data.train.standardized(&s)?;
        data.val = data.val.map(|d| d.standardized(&s)).transpose()?;
        data.test = data.test.map(|d| d.standardized(&s)).transpose()?;
        Some(s)
    } else {
        None
    };

    let started = Instant::now();
    let progress = args.progress;
    let (net, mut report, search) = match &cfg.search {
        Some(s) => {
            let val = data
                .val
                .as_ref()
                .ok_or_else(|| CliError::input("search needs a non-empty validation split"))?;
            let found = search_drop_rate(spec, &data.train, val, &s.candidates, &cfg.training, s.passes)?;
            match cfg.training.regime {
                Regime::Mcsd => cfg.training.q_final = found.best,
                _ => cfg.training.dropout_rate = found.best,
            }
            let out = SearchOut {
                best: found.best,
                table: found.table,
            };
            (found.best_net, found.best_report, Some(out))
        }
        None => {
            let mut net = ResidualNet::new(spec, cfg.training.seed)?;
            let report = trainer::train(&mut net, &data.train, data.val.as_ref(), &cfg.training, |ev| {
                if progress {
                    if let Ok(line) = serde_json::to_string(ev) {
                        println!("{line}");
                    }
                }
            })?;
            (net, report, None)
        }
    };
    eprintln!("trained in {:.2}s", started.elapsed().as_secs_f64());

    let mut ckpt = Checkpoint::from_net(&net).with_training(cfg.training.training_meta());
    if let Some(s) = standardizer {
        ckpt = ckpt.with_standardizer(s);
    }
    ckpt.save(out.path("checkpoint.json"))?;
    out.note("checkpoint.json");
    report.checkpoint = Some("checkpoint.json".into());

    let test = match &data.test {
        Some(test) => {
            let schedule = cfg.training.schedule(net.num_blocks())?;
            let rate = if cfg.training.regime == Regime::Mcdo {
                cfg.training.dropout_rate
            } else {
                0.0
            };
            let mc = McConfig::new(cfg.training.regime, cfg.eval_passes, cfg.training.seed).with_dropout(rate);
            let summary = mc_predict(&net, &test.features, &schedule, &mc)?;
            let preds = PredictionSet::new(summary.mean_probs, test.labels.clone())?;
            Some(calibration_report(&preds, DEFAULT_BINS, cfg.eval_passes)?)
        }
        None => None,
    };
    let payload = TrainPayload {
        network: spec,
        train: &report,
        search,
        test,
    };
    out.json("report.json", &envelope("train", &cfg, payload))?;
    Ok(())
}

/// Network plus the Monte Carlo settings resolved from flags, config and
/// the checkpoint's training metadata.
struct McSetup {
    ckpt: Checkpoint,
    net: ResidualNet,
    schedule: DepthSchedule,
    mc: McConfig,
    resolved: McRunConfig,
    warnings: Vec<String>,
}

fn mc_setup(ckpt_path: &Path, cfg: &McRunConfig, flags: &McFlags, seed: Option<u64>) -> Result<McSetup> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let net = ckpt.to_net()?;
    let meta = ckpt.training;
    let defaults = TrainConfig::default();
    let mut warnings = Vec::new();

    let regime = flags
        .regime
        .or(cfg.regime)
        .or(meta.map(|m| m.regime))
        .unwrap_or(Regime::Det);
    let passes = flags.passes.or(cfg.passes).unwrap_or(DEFAULT_PASSES);
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let trained_q = meta.filter(|m| m.regime == Regime::Mcsd).map(|m| m.q_final);
    let trained_rate = meta
        .filter(|m| m.regime == Regime::Mcdo && m.dropout_rate > 0.0)
        .map(|m| m.dropout_rate);
    let q_final = flags.q_final.or(cfg.q_final).or(trained_q).unwrap_or(defaults.q_final);
    let dropout_rate = flags
        .dropout_rate
        .or(cfg.dropout_rate)
        .or(trained_rate)
        .unwrap_or(defaults.dropout_rate);

    let trained_as = match meta {
        Some(m) => format!("trained as {}", m.regime),
        None => "without training metadata".to_string(),
    };
    match regime {
        Regime::Mcsd if trained_q.is_none() => warn(
            &mut warnings,
            format!("MCSD requested but the checkpoint was {trained_as}; its blocks never saw stochastic depth"),
        ),
        Regime::Mcdo if trained_rate.is_none() => warn(
            &mut warnings,
            format!("MCDO requested but the checkpoint was {trained_as}, without dropout"),
        ),
        _ => {}
    }

    let schedule = match regime {
        Regime::Mcsd => DepthSchedule::linear_decay(net.num_blocks(), q_final)?,
        _ => DepthSchedule::all_survive(net.num_blocks()),
    };
    let rate = if regime == Regime::Mcdo { dropout_rate } else { 0.0 };
    let mc = McConfig::new(regime, passes, seed).with_dropout(rate);
    mc.validate()?;
    let resolved = McRunConfig {
        regime: Some(regime),
        passes: Some(passes),
        seed: Some(seed),
        q_final: (regime == Regime::Mcsd).then_some(q_final),
        dropout_rate: (regime == Regime::Mcdo).then_some(dropout_rate),
    };
    Ok(McSetup {
        ckpt,
        net,
        schedule,
        mc,
        resolved,
        warnings,
    })
}

fn required(flag: Option<&PathBuf>, from_config: Option<&PathBuf>, base: &Path, name: &str) -> Result<PathBuf> {
    flag.cloned()
        .or_else(|| from_config.map(|p| resolve(base, p)))
        .ok_or_else(|| CliError::input(format!("--{name} is required")))
}

/// Loads a labelled CSV for the network and applies its standardizer.
fn load_inputs(setup: &McSetup, path: &Path) -> Result<(Dataset, Matrix)> {
    let spec = setup.net.spec();
    let ds = load_csv_with_classes(path, Some(spec.num_classes))?;
    if ds.dim() != spec.input_dim {
        return Err(CliError::input(format!(
            "{} has {} features but the network expects {}",
            path.display(),
            ds.dim(),
            spec.input_dim
        )));
    }
    let x = setup.ckpt.prepare_inputs(&ds.features)?;
    Ok((ds, x))
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let (cfg, base) = config::load::<EvalConfig>(args.common.config.as_deref())?;
    check_version(cfg.format_version)?;
    let ckpt_path = required(args.checkpoint.as_ref(), cfg.checkpoint.as_ref(), &base, "checkpoint")?;
    let data_path = required(args.data.as_ref(), cfg.data.as_ref(), &base, "data")?;
    let bins = args.bins.or(cfg.bins).unwrap_or(DEFAULT_BINS);
    if bins == 0 {
        return Err(CliError::input("bins must be >= 1"));
    }
    let setup = mc_setup(&ckpt_path, &cfg.mc, &args.mc, args.common.seed)?;
    let (ds, x) = load_inputs(&setup, &data_path)?;
    let summary = mc_predict(&setup.net, &x, &setup.schedule, &setup.mc)?;
    let preds = PredictionSet::new(summary.mean_probs, ds.labels)?;
    let report = calibration_report(&preds, bins, setup.mc.passes)?;

    let resolved = EvalConfig {
        format_version: cfg.format_version,
        checkpoint: Some(ckpt_path),
        data: Some(data_path),
        bins: Some(bins),
        mc: setup.resolved.clone(),
    };
    #[derive(Serialize)]
    struct Payload<'a> {
        warnings: &'a [String],
        report: &'a CalibrationReport,
    }
    let out = OutDir::create(&args.common.out)?;
    out.json(
        "report.json",
        &envelope(
            "eval",
            &resolved,
            Payload {
                warnings: &setup.warnings,
                report: &report,
            },
        ),
    )?;
    out.text("reliability.csv", &reliability_csv(&report.bins))?;
    Ok(())
}

#[derive(Serialize)]
struct EntropyStats {
    n: usize,
    mean_entropy: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn ood(args: &OodArgs) -> Result<()> {
    let (cfg, base) = config::load::<OodConfig>(args.common.config.as_deref())?;
    check_version(cfg.format_version)?;
    let ckpt_path = required(args.checkpoint.as_ref(), cfg.checkpoint.as_ref(), &base, "checkpoint")?;
    let in_path = required(args.data.as_ref(), cfg.data.as_ref(), &base, "data")?;
    let ood_path = required(args.ood_data.as_ref(), cfg.ood_data.as_ref(), &base, "ood-data")?;
    let setup = mc_setup(&ckpt_path, &cfg.mc, &args.mc, args.common.seed)?;

    let spec = setup.net.spec();
    let in_ds = load_csv_with_classes(&in_path, None)?;
    let ood_ds = load_csv_with_classes(&ood_path, None)?;
    if in_ds.dim() != ood_ds.dim() {
        return Err(CliError::input(format!(
            "dimension mismatch: in-distribution data has {} features, OOD data has {}",
            in_ds.dim(),
            ood_ds.dim()
        )));
    }
    if in_ds.dim() != spec.input_dim {
        return Err(CliError::input(format!(
            "data has {} features but the network expects {}",
            in_ds.dim(),
            spec.input_dim
        )));
    }
    let entropies = |ds: &Dataset| -> Result<Vec<f64>> {
        let x = setup.ckpt.prepare_inputs(&ds.features)?;
        Ok(mc_predict(&setup.net, &x, &setup.schedule, &setup.mc)?.entropy)
    };
    let h_in = entropies(&in_ds)?;
    let h_ood = entropies(&ood_ds)?;
    let cdf_in = entropy_cdf(&h_in)?;
    let cdf_ood = entropy_cdf(&h_ood)?;

    let resolved = OodConfig {
        format_version: cfg.format_version,
        checkpoint: Some(ckpt_path),
        data: Some(in_path),
        ood_data: Some(ood_path),
        mc: setup.resolved.clone(),
    };
    #[derive(Serialize)]
    struct Payload<'a> {
        warnings: &'a [String],
        in_distribution: EntropyStats,
        out_of_distribution: EntropyStats,
    }
    let out = OutDir::create(&args.common.out)?;
    out.text("in_cdf.csv", &entropy_cdf_csv(&cdf_in))?;
    out.text("ood_cdf.csv", &entropy_cdf_csv(&cdf_ood))?;
    let payload = Payload {
        warnings: &setup.warnings,
        in_distribution: EntropyStats {
            n: h_in.len(),
            mean_entropy: mean(&h_in),
        },
        out_of_distribution: EntropyStats {
            n: h_ood.len(),
            mean_entropy: mean(&h_ood),
        },
    };
    out.json("summary.json", &envelope("ood", &resolved, payload))?;
    Ok(())
}

/// Reads a pairs CSV whose header is `a0..a{d-1},b0..b{d-1}`.
fn read_pairs(path: &Path) -> Result<(Matrix, Matrix)> {
    let fail = |msg: String| CliError::input(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let header = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let width = header.len();
    if width == 0 || width % 2 != 0 {
        return Err(fail(format!("expected an even number of columns, found {width}")));
    }
    let d = width / 2;
    let expected: Vec<String> = (0..d).map(|i| format!("a{i}")).chain((0..d).map(|i| format!("b{i}"))).collect();
    if header.iter().zip(&expected).any(|(h, e)| h.trim() != e) {
        return Err(fail(format!("header must be {}", expected.join(","))));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| fail(format!("line {}: {field:?} is not a number", i + 2)))?;
            if !v.is_finite() {
                return Err(fail(format!("line {}: non-finite value", i + 2)));
            }
            if j < d {
                a.push(v);
            } else {
                b.push(v);
            }
        }
    }
    let rows = a.len() / d;
    Ok((Matrix::new(rows, d, a)?, Matrix::new(rows, d, b)?))
}

fn default_alphas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn verify(args: &VerifyArgs) -> Result<()> {
    let (cfg, base) = config::load::<VerifyConfig>(args.common.config.as_deref())?;
    check_version(cfg.format_version)?;
    let ckpt_path = required(args.checkpoint.as_ref(), cfg.checkpoint.as_ref(), &base, "checkpoint")?;
    let alphas = args.alphas.clone().or_else(|| cfg.alphas.clone()).unwrap_or_else(default_alphas);
    let far_target = args.far.or(cfg.far_target).unwrap_or(DEFAULT_FAR);
    let streams = cfg.streams.unwrap_or_default();
    let setup = mc_setup(&ckpt_path, &cfg.mc, &args.mc, args.common.seed)?;
    if setup.mc.regime == Regime::Mcdo {
        return Err(CliError::input("verify supports the DET and MCSD regimes"));
    }
    let seed = setup.mc.base_seed;

    let synthetic = (args.synthetic || cfg.synthetic.is_some()).then(|| cfg.synthetic.clone().unwrap_or_default());
    let (pairs_path, impostors_path, (ia, ib), (pa, pb)) = match &synthetic {
        Some(SyntheticPairs {
            world,
            world_seed,
            impostor_pairs,
            morph_pairs,
        }) => {
            if *impostor_pairs == 0 {
                return Err(CliError::input("impostor set is empty"));
            }
            let world = IdentityWorld::new(world, *world_seed)?;
            let imp = world.impostor_pairs(*impostor_pairs, seed);
            let morph = world.mirror_pairs(*morph_pairs, seed.wrapping_add(1));
            (None, None, imp, morph)
        }
        None => {
            let pairs = required(args.pairs.as_ref(), cfg.pairs.as_ref(), &base, "pairs")?;
            let impostors = required(args.impostors.as_ref(), cfg.impostors.as_ref(), &base, "impostors")?;
            let imp = read_pairs(&impostors)?;
            if imp.0.rows() == 0 {
                return Err(CliError::input("impostor set is empty"));
            }
            let morph = read_pairs(&pairs)?;
            (Some(pairs), Some(impostors), imp, morph)
        }
    };
    let input_dim = setup.net.spec().input_dim;
    if ia.cols() != input_dim || pa.cols() != input_dim {
        return Err(CliError::input(format!(
            "pairs have {} features but the network expects {input_dim}",
            if ia.cols() != input_dim { ia.cols() } else { pa.cols() }
        )));
    }
    // Standardization is affine, so blending before or after it agrees.
    let prep = |m: &Matrix| setup.ckpt.prepare_inputs(m);
    let (ia, ib, pa, pb) = (prep(&ia)?, prep(&ib)?, prep(&pa)?, prep(&pb)?);

    let mut vcfg = VerificationConfig::new(setup.mc.passes, 0.0, seed);
    vcfg.far_target = far_target;
    vcfg.streams = streams;
    vcfg.validate()?;
    let calibration = calibrate(&setup.net, &ia, &ib, &setup.schedule, &vcfg)?;
    vcfg.threshold = calibration.threshold;
    let sweep = morph_sweep(&setup.net, &pa, &pb, &alphas, &setup.schedule, &vcfg)?;

    let resolved = VerifyConfig {
        format_version: cfg.format_version,
        checkpoint: Some(ckpt_path),
        synthetic,
        pairs: pairs_path,
        impostors: impostors_path,
        alphas: Some(alphas),
        far_target: Some(far_target),
        streams: Some(streams),
        mc: setup.resolved.clone(),
    };
    #[derive(Serialize)]
    struct Payload<'a> {
        warnings: &'a [String],
        calibration: Calibration,
        morph_pairs: usize,
        points: &'a [MorphPoint],
        mean_entropy: f64,
    }
    let out = OutDir::create(&args.common.out)?;
    out.text("morph_sweep.csv", &sweep.to_csv())?;
    out.text("trials.jsonl", &sweep.trials_jsonl()?)?;
    let payload = Payload {
        warnings: &setup.warnings,
        calibration,
        morph_pairs: pa.rows(),
        points: &sweep.points,
        mean_entropy: sweep.mean_entropy(),
    };
    out.json("summary.json", &envelope("verify", &resolved, payload))?;
    Ok(())
}

#[derive(Serialize)]
struct GradTrial {
    trial: usize,
    seed: u64,
    active_blocks: usize,
    max_rel_error: f64,
}

pub fn grad_check(args: &GradCheckArgs) -> Result<()> {
    let (mut cfg, _) = config::load::<GradCheckConfig>(args.common.config.as_deref())?;
    check_version(cfg.format_version)?;
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    if cfg.trials == 0 || cfg.batch == 0 {
        return Err(CliError::input("trials and batch must be >= 1"));
    }
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(CliError::input("step must be a positive number"));
    }
    let spec = NetworkSpec {
        input_dim: cfg.input_dim,
        hidden_dim: cfg.hidden_dim,
        num_blocks: cfg.num_blocks,
        num_classes: cfg.num_classes,
        use_batchnorm: cfg.use_batchnorm,
    };
    spec.validate()?;
    let schedule = DepthSchedule::linear_decay(spec.num_blocks, cfg.q_final)?;

    let mut trials = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let seed = cfg.seed.wrapping_add(t as u64);
        let mut net = ResidualNet::new(spec, seed)?;
        let mut rng = rng::stream(seed, Domain::Data, 1, 0);
        let data = (0..cfg.batch * spec.input_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let x = Matrix::new(cfg.batch, spec.input_dim, data)?;
        let labels: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..spec.num_classes)).collect();
        let mut mask = pass_gates(&schedule, seed, 0, GateConvention::Unscaled);
        if mask.active_count() == 0 {
            mask = GateMask::all_on(spec.num_blocks);
        }
        let dropout = DropoutMasks::sample(spec.num_blocks, cfg.batch, spec.hidden_dim, cfg.dropout_rate, |l| {
            rng::stream(seed, Domain::TrainDropout, 0, l as u64)
        })?;
        let inputs = LossInputs {
            x: &x,
            labels: &labels,
            mask: &mask,
            dropout: Some(&dropout),
            weight_decay: cfg.weight_decay,
            schedule: &schedule,
            convention: TrainConfig::default().decay_convention,
        };
        let err = grad_check_loss(&mut net, inputs, cfg.step)?;
        trials.push(GradTrial {
            trial: t,
            seed,
            active_blocks: mask.active_count(),
            max_rel_error: err,
        });
    }
    let worst = trials.iter().map(|t| t.max_rel_error).fold(0.0f64, f64::max);
    let passed = worst < cfg.tolerance;

    #[derive(Serialize)]
    struct Payload {
        trials: Vec<GradTrial>,
        max_rel_error: f64,
        passed: bool,
    }
    let out = OutDir::create(&args.common.out)?;
    let payload = Payload {
        trials,
        max_rel_error: worst,
        passed,
    };
    out.json("grad_check.json", &envelope("grad-check", &cfg, payload))?;
    if passed {
        Ok(())
    } else {
        Err(CliError::numerical(format!(
            "gradient check failed: max relative error {worst:.3e} >= {}",
            cfg.tolerance
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_csv_round_trip_and_header_check() {
        let dir = std::env::temp_dir().join(format!("mcsd-pairs-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let good = dir.join("good.csv");
        std::fs::write(&good, "a0,a1,b0,b1\n1,2,3,4\n5,6,7,8\n").unwrap();
        let (a, b) = read_pairs(&good).unwrap();
        assert_eq!(a.to_rows(), vec![vec![1.0, 2.0], vec![5.0, 6.0]]);
        assert_eq!(b.to_rows(), vec![vec![3.0, 4.0], vec![7.0, 8.0]]);

        let bad = dir.join("bad.csv");
        std::fs::write(&bad, "x,y,z\n1,2,3\n").unwrap();
        assert!(read_pairs(&bad).is_err());
        std::fs::write(&bad, "a0,b0\n1,nope\n").unwrap();
        assert!(read_pairs(&bad).unwrap_err().to_string().contains("line 2"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn default_alphas_hit_both_ends() {
        let a = default_alphas();
        assert_eq!(a.len(), 11);
        assert_eq!(a[0], 0.0);
        assert_eq!(a[5], 0.5);
        assert_eq!(a[10], 1.0);
    }

    #[test]
    fn mean_of_entropies() {
        assert_eq!(mean(&[0.5, 1.5]), 1.0);
    }
}
