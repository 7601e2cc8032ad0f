//! `expertplan` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 no feasible
//! plan, 4 internal invariant breach.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use expertplan::comm::CommOptions;
use expertplan::config::{hardware_preset, hardware_preset_names, load_hardware, load_model, model_preset};
use expertplan::cost::{
    mean_relative_error, read_dataset, synthetic_oracle, train_forest, CostModels, EfficiencyModel, OracleParams,
    SampleKind, TrainParams,
};
use expertplan::model::{HardwareProfile, InferenceScenario, ModelSpec};
use expertplan::planner::{baseline_indices, PlanOptions, Problem};
use expertplan::simulator::{compare, PlanIndices};
use expertplan::strategy::memory_feasible;
use expertplan::transition::{cosine_similarity, dequantize, quantize_int4, DequantTimeTable, OverlapMode};
use expertplan::Error;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "expertplan", version, about = "Hybrid-parallel layout planner and latency simulator for MoE inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the best attention / prefill-expert / decode-expert layouts.
    Plan(PlanArgs),
    /// Latency breakdown of one explicit layout triple.
    Simulate(SimulateArgs),
    /// Optimum against one or more baseline layouts.
    Compare(CompareArgs),
    /// List the strategy catalog and memory feasibility.
    Enumerate(EnumerateArgs),
    /// Train an efficiency model from a calibration CSV.
    Calibrate(CalibrateArgs),
    /// Write a synthetic calibration dataset.
    Dataset(DatasetArgs),
    /// INT4 round-trip cosine similarity on random normal tensors.
    QuantBench(QuantBenchArgs),
}

#[derive(Args, Clone)]
struct Setup {
    /// Bundled model preset.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    preset: Option<String>,
    /// Model TOML file with a [model] section.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Hardware preset name or TOML file with a [hardware] section.
    #[arg(long, default_value = "a6000-pcie")]
    hw: String,
    /// Override the device count of the hardware profile.
    #[arg(long)]
    devices: Option<u32>,
    #[arg(long, default_value_t = 256)]
    input: u32,
    #[arg(long = "output-len", visible_alias = "output", default_value_t = 64)]
    output_len: u32,
    #[arg(long, default_value_t = 8)]
    batch: u32,
}

#[derive(Args, Clone)]
struct Modeling {
    /// Trained compute-efficiency model (JSON); roofline when absent.
    #[arg(long)]
    eta_model: Option<PathBuf>,
    /// Trained communication-efficiency model (JSON); roofline when absent.
    #[arg(long)]
    rho_model: Option<PathBuf>,
    /// Train both models on the built-in synthetic oracle (uses --seed).
    #[arg(long, conflicts_with_all = ["eta_model", "rho_model"])]
    default_oracle: bool,
    /// Compute multiplier applied to layouts with expert parallelism.
    #[arg(long, default_value_t = expertplan::planner::DEFAULT_GAMMA)]
    gamma: f64,
    /// Admit expert layouts that replicate experts across devices.
    #[arg(long)]
    allow_expert_dp: bool,
    /// Use only one layer of prefill as the upload overlap budget.
    #[arg(long)]
    literal_eq6: bool,
    /// Charge the DP-to-expert boundary collectives for every DP attention layout.
    #[arg(long)]
    literal_boundary: bool,
    /// Dequantization time table (CSV `n_gpus,v_dequant,seconds`).
    #[arg(long)]
    dequant_table: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct Output {
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    setup: Setup,
    #[command(flatten)]
    modeling: Modeling,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    setup: Setup,
    #[command(flatten)]
    modeling: Modeling,
    /// `tp`, `ep`, `dp-ep`, or an explicit `attention/prefill/decode` triple like `dp4/ep4/tp4`.
    #[arg(long)]
    layout: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    setup: Setup,
    #[command(flatten)]
    modeling: Modeling,
    /// Baseline layouts, same syntax as `simulate --layout`.
    #[arg(long = "baseline", default_values_t = ["tp".to_string(), "ep".to_string()])]
    baselines: Vec<String>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct EnumerateArgs {
    #[command(flatten)]
    setup: Setup,
    #[arg(long)]
    allow_expert_dp: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Target {
    Eta,
    Rho,
}

impl Target {
    fn kind(self) -> SampleKind {
        match self {
            Target::Eta => SampleKind::Compute,
            Target::Rho => SampleKind::Communication,
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// Calibration CSV.
    #[arg(long)]
    data: PathBuf,
    /// Which factor to fit; inferred when the dataset holds one kind only.
    #[arg(long, value_enum)]
    target: Option<Target>,
    /// Trailing fraction of the records held out for testing.
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 8)]
    max_depth: usize,
    #[arg(long, default_value_t = 2)]
    min_leaf: usize,
    #[arg(long, default_value_t = 2)]
    degree: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination of the trained model JSON.
    #[arg(long)]
    model_out: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long, value_enum)]
    target: Target,
    #[arg(long, default_value_t = 700)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuantBenchArgs {
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 128)]
    group: u32,
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    /// First seed; runs use `seed..seed + seeds`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

/// Everything needed to repeat a run.
#[derive(Serialize, Default)]
struct RunManifest {
    tool_version: &'static str,
    command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hardware_preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hardware_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    devices: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<InferenceScenario>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta_model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho_model: Option<PathBuf>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    default_oracle: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    dequant_table: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    options: Option<PlanOptions>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver_wall_time_s: Option<f64>,
}

impl RunManifest {
    fn new(command: &'static str, seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            ..Default::default()
        }
    }
}

/// Resolved inputs shared by the planning commands.
struct Context {
    model: ModelSpec,
    hw: HardwareProfile,
    scenario: InferenceScenario,
    models: CostModels,
    table: DequantTimeTable,
    options: PlanOptions,
    manifest: RunManifest,
}

fn looks_like_path(s: &str) -> bool {
    s.contains('/') || s.contains('\\') || s.ends_with(".toml") || Path::new(s).exists()
}

fn resolve_setup(setup: &Setup, manifest: &mut RunManifest) -> expertplan::Result<(ModelSpec, HardwareProfile, InferenceScenario)> {
    let model = match (&setup.preset, &setup.model) {
        (Some(name), _) => {
            manifest.model_preset = Some(name.clone());
            model_preset(name)?
        }
        (None, Some(path)) => {
            manifest.model_path = Some(path.clone());
            load_model(path)?
        }
        (None, None) => return Err(Error::InvalidInput("one of --preset or --model is required".into())),
    };
    let mut hw = if hardware_preset_names().any(|n| n == setup.hw) || !looks_like_path(&setup.hw) {
        manifest.hardware_preset = Some(setup.hw.clone());
        hardware_preset(&setup.hw)?
    } else {
        let path = PathBuf::from(&setup.hw);
        manifest.hardware_path = Some(path.clone());
        load_hardware(&path)?
    };
    if let Some(n) = setup.devices {
        hw = hw.with_devices(n);
        hw.validate()?;
    }
    let scenario = InferenceScenario::new(setup.batch, setup.input, setup.output_len);
    scenario.validate()?;
    manifest.devices = Some(hw.n_devices);
    manifest.scenario = Some(scenario);
    Ok((model, hw, scenario))
}

fn read_efficiency_model(path: &Path) -> expertplan::Result<EfficiencyModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    EfficiencyModel::from_json(&text).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn context(command: &'static str, setup: &Setup, modeling: &Modeling) -> expertplan::Result<Context> {
    let mut manifest = RunManifest::new(command, modeling.seed);
    let (model, hw, scenario) = resolve_setup(setup, &mut manifest)?;
    let models = if modeling.default_oracle {
        manifest.default_oracle = true;
        CostModels::from_default_oracle(500, modeling.seed)?
    } else {
        let eta = modeling.eta_model.as_deref().map(read_efficiency_model).transpose()?;
        let rho = modeling.rho_model.as_deref().map(read_efficiency_model).transpose()?;
        manifest.eta_model = modeling.eta_model.clone();
        manifest.rho_model = modeling.rho_model.clone();
        CostModels::new(eta, rho)?
    };
    let table = match &modeling.dequant_table {
        Some(path) => {
            manifest.dequant_table = Some(path.clone());
            let file = File::open(path).map_err(|e| Error::Config {
                path: path.clone(),
                message: e.to_string(),
            })?;
            DequantTimeTable::read_csv(BufReader::new(file))?
        }
        None => DequantTimeTable::synthetic_default(),
    };
    let options = PlanOptions {
        allow_expert_dp: modeling.allow_expert_dp,
        gamma: modeling.gamma,
        overlap: if modeling.literal_eq6 {
            OverlapMode::PerLayer
        } else {
            OverlapMode::WholePrefill
        },
        comm: CommOptions {
            fused_boundary: !modeling.literal_boundary,
        },
        ..Default::default()
    };
    manifest.options = Some(options);
    Ok(Context {
        model,
        hw,
        scenario,
        models,
        table,
        options,
        manifest,
    })
}

impl Context {
    fn problem(&self) -> expertplan::Result<Problem<'_>> {
        Problem::build(&self.model, &self.hw, &self.scenario, &self.models, &self.table, &self.options)
    }
}

/// Writes `bytes` to `path` through a sibling temp file so a failure never
/// leaves a partial file behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> expertplan::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn emit(output: &Output, manifest: &RunManifest, json: serde_json::Value, csv: impl FnOnce() -> expertplan::Result<Vec<u8>>) -> expertplan::Result<()> {
    let (body, sidecar) = match output.format {
        Format::Json => {
            let mut doc = serde_json::Map::new();
            doc.insert("manifest".into(), serde_json::to_value(manifest)?);
            if let serde_json::Value::Object(fields) = json {
                doc.extend(fields);
            }
            let mut text = serde_json::to_vec_pretty(&serde_json::Value::Object(doc))?;
            text.push(b'\n');
            (text, None)
        }
        Format::Csv => {
            let mut text = serde_json::to_vec_pretty(manifest)?;
            text.push(b'\n');
            (csv()?, Some(text))
        }
    };
    match &output.out {
        Some(path) => {
            if let Some(m) = sidecar {
                let mut name = path.as_os_str().to_owned();
                name.push(".manifest.json");
                write_atomic(Path::new(&name), &m)?;
            }
            write_atomic(path, &body)
        }
        None => {
            if let Some(m) = sidecar {
                std::io::stderr().write_all(&m)?;
            }
            std::io::stdout().write_all(&body)?;
            Ok(())
        }
    }
}

fn csv_rows<const N: usize>(header: [&str; N], rows: Vec<[String; N]>) -> expertplan::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let map = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(map)?;
    for r in rows {
        w.write_record(&r).map_err(map)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn cmd_plan(args: PlanArgs) -> expertplan::Result<()> {
    let mut ctx = context("plan", &args.setup, &args.modeling)?;
    let mut manifest = std::mem::take(&mut ctx.manifest);
    let problem = ctx.problem()?;
    let sol = problem.solve()?;
    let plan = problem.describe(sol.k, sol.i, sol.j, Some(sol.stats.clone()))?;
    let horizon = problem.horizon;
    manifest.solver_wall_time_s = Some(sol.stats.wall_time_s);
    emit(&args.output, &manifest, serde_json::json!({ "plan": plan }), || {
        let mut buf = Vec::new();
        plan.breakdown.write_csv(&mut buf, &horizon)?;
        Ok(buf)
    })
}

fn cmd_simulate(args: SimulateArgs) -> expertplan::Result<()> {
    let ctx = context("simulate", &args.setup, &args.modeling)?;
    let problem = ctx.problem()?;
    let (k, i, j) = baseline_indices(&problem.catalog, &args.layout)?;
    let plan = problem.describe(k, i, j, None)?;
    emit(&args.output, &ctx.manifest, serde_json::json!({ "layout": args.layout, "plan": plan }), || {
        let mut buf = Vec::new();
        plan.breakdown.write_csv(&mut buf, &problem.horizon)?;
        Ok(buf)
    })
}

#[derive(Serialize)]
struct CompareRow {
    name: String,
    attention: String,
    expert_prefill: String,
    expert_decode: String,
    total_s: f64,
    /// How many times faster the optimum is than this layout.
    optimum_speedup: f64,
}

fn cmd_compare(args: CompareArgs) -> expertplan::Result<()> {
    let mut ctx = context("compare", &args.setup, &args.modeling)?;
    let mut manifest = std::mem::take(&mut ctx.manifest);
    let problem = ctx.problem()?;
    let sol = problem.solve()?;
    manifest.solver_wall_time_s = Some(sol.stats.wall_time_s);
    let mut plans = vec![("optimum".to_string(), PlanIndices { k: sol.k, i: sol.i, j: sol.j })];
    for b in &args.baselines {
        let (k, i, j) = baseline_indices(&problem.catalog, b)?;
        plans.push((b.clone(), PlanIndices { k, i, j }));
    }
    let comparison = compare(&plans, &problem.tensors, &problem.horizon)?;
    let cat = &problem.catalog;
    let rows: Vec<CompareRow> = comparison
        .entries
        .iter()
        .map(|e| CompareRow {
            name: e.name.clone(),
            attention: cat.attention[e.indices.k].to_string(),
            expert_prefill: cat.expert[e.indices.i].to_string(),
            expert_decode: cat.expert[e.indices.j].to_string(),
            total_s: e.breakdown.total_s,
            optimum_speedup: 1.0 / e.speedup_vs_first,
        })
        .collect();
    let json = serde_json::json!({ "rows": rows, "comparison": comparison });
    emit(&args.output, &manifest, json, || {
        csv_rows(
            ["name", "attention", "expert_prefill", "expert_decode", "total_s", "optimum_speedup"],
            rows.iter()
                .map(|r| {
                    [
                        r.name.clone(),
                        r.attention.clone(),
                        r.expert_prefill.clone(),
                        r.expert_decode.clone(),
                        r.total_s.to_string(),
                        r.optimum_speedup.to_string(),
                    ]
                })
                .collect(),
        )
    })
}

#[derive(Serialize)]
struct PairFeasibility {
    attention: String,
    expert: String,
    memory_feasible: bool,
}

fn cmd_enumerate(args: EnumerateArgs) -> expertplan::Result<()> {
    let mut manifest = RunManifest::new("enumerate", 0);
    let (model, hw, scenario) = resolve_setup(&args.setup, &mut manifest)?;
    let catalog = expertplan::strategy::StrategyCatalog::build(&model, &hw, args.allow_expert_dp)?;
    let options = PlanOptions {
        allow_expert_dp: args.allow_expert_dp,
        ..Default::default()
    };
    manifest.options = Some(options);
    let memory = expertplan::model::memory_footprint_with(&model, &scenario, options.act_factor)?;
    let mut pairs = Vec::new();
    for a in &catalog.attention {
        for e in &catalog.expert {
            pairs.push(PairFeasibility {
                attention: a.to_string(),
                expert: e.to_string(),
                memory_feasible: memory_feasible(a, e, &memory, &hw),
            });
        }
    }
    let json = serde_json::json!({ "catalog": catalog, "memory": memory, "pairs": pairs });
    emit(&args.output, &manifest, json, || {
        let mut rows = Vec::new();
        for (idx, a) in catalog.attention.iter().enumerate() {
            rows.push(["attention".into(), idx.to_string(), a.to_string(), a.tp_degree.to_string(), "1".into(), a.dp_degree.to_string()]);
        }
        for (idx, e) in catalog.expert.iter().enumerate() {
            rows.push(["expert".into(), idx.to_string(), e.to_string(), e.tp_degree.to_string(), e.ep_degree.to_string(), e.dp_degree.to_string()]);
        }
        csv_rows(["module", "index", "strategy", "tp", "ep", "dp"], rows)
    })
}

fn cmd_calibrate(args: CalibrateArgs) -> expertplan::Result<()> {
    let mut manifest = RunManifest::new("calibrate", args.seed);
    manifest.data = Some(args.data.clone());
    let file = File::open(&args.data).map_err(|e| Error::Config {
        path: args.data.clone(),
        message: e.to_string(),
    })?;
    let samples = read_dataset(BufReader::new(file))?;
    if samples.is_empty() {
        return Err(Error::Dataset {
            record: 0,
            message: "dataset has no records".into(),
        });
    }
    let kind = match args.target {
        Some(t) => t.kind(),
        None => {
            let first = samples[0].kind();
            if samples.iter().any(|s| s.kind() != first) {
                return Err(Error::InvalidInput(
                    "dataset mixes compute and communication records; pass --target".into(),
                ));
            }
            first
        }
    };
    let chosen: Vec<_> = samples.into_iter().filter(|s| s.kind() == kind).collect();
    if !(0.0..1.0).contains(&args.holdout) {
        return Err(Error::InvalidInput(format!("--holdout must be in [0, 1), got {}", args.holdout)));
    }
    let n_test = (chosen.len() as f64 * args.holdout).round() as usize;
    let (train, test) = chosen.split_at(chosen.len() - n_test);
    if train.is_empty() {
        return Err(Error::InvalidInput(format!("no {} records left for training", kind.as_str())));
    }
    let params = TrainParams {
        forest: expertplan::cost::forest::ForestParams {
            n_trees: args.trees,
            max_depth: args.max_depth,
            min_leaf: args.min_leaf,
            seed: args.seed,
        },
        degree: args.degree,
    };
    let model = train_forest(train, &params)?;
    let train_mre = mean_relative_error(&model, train)?;
    let test_mre = if test.is_empty() {
        None
    } else {
        Some(mean_relative_error(&model, test)?)
    };
    let mut text = model.to_json()?.into_bytes();
    text.push(b'\n');
    write_atomic(&args.model_out, &text)?;
    let target = model.target.as_str();
    let json = serde_json::json!({
        "target": target,
        "model_out": args.model_out,
        "n_train": train.len(),
        "n_test": test.len(),
        "train_mre": train_mre,
        "test_mre": test_mre,
    });
    emit(&args.output, &manifest, json, || {
        csv_rows(
            ["target", "n_train", "n_test", "train_mre", "test_mre"],
            vec![[
                target.to_string(),
                train.len().to_string(),
                test.len().to_string(),
                train_mre.to_string(),
                test_mre.map(|v| v.to_string()).unwrap_or_default(),
            ]],
        )
    })
}

fn cmd_dataset(args: DatasetArgs) -> expertplan::Result<()> {
    let kind = args.target.kind();
    let params = match kind {
        SampleKind::Compute => OracleParams::default_compute(args.n),
        SampleKind::Communication => OracleParams::default_communication(args.n),
    };
    let samples = synthetic_oracle(kind, &params, args.seed)?;
    let mut buf = Vec::new();
    expertplan::cost::write_dataset(&mut buf, &samples)?;
    match &args.out {
        Some(path) => write_atomic(path, &buf),
        None => Ok(std::io::stdout().write_all(&buf)?),
    }
}

fn cmd_quant_bench(args: QuantBenchArgs) -> expertplan::Result<()> {
    if args.n == 0 || args.seeds == 0 {
        return Err(Error::InvalidInput("--n and --seeds must be positive".into()));
    }
    let manifest = RunManifest::new("quant-bench", args.seed);
    let mut per_seed = Vec::new();
    for seed in args.seed..args.seed + args.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f32> = (0..args.n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = dequantize(&quantize_int4(&x, args.group)?)?;
        per_seed.push((seed, cosine_similarity(&x, &y)));
    }
    let cos: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
    let min = cos.iter().copied().fold(f64::INFINITY, f64::min);
    let max = cos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = cos.iter().sum::<f64>() / cos.len() as f64;
    let above = cos.iter().filter(|&&c| c > 0.995).count();
    let json = serde_json::json!({
        "n": args.n,
        "group_size": args.group,
        "seeds": args.seeds,
        "min_cosine": min,
        "mean_cosine": mean,
        "max_cosine": max,
        "seeds_above_0_995": above,
        "per_seed": per_seed.iter().map(|(s, c)| serde_json::json!({ "seed": s, "cosine": c })).collect::<Vec<_>>(),
    });
    emit(&args.output, &manifest, json, || {
        csv_rows(["seed", "cosine"], per_seed.iter().map(|(s, c)| [s.to_string(), c.to_string()]).collect())
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) | Error::NoStrategy { .. } => 3,
        Error::Invariant(_) | Error::Overflow(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Enumerate(a) => cmd_enumerate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::QuantBench(a) => cmd_quant_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
