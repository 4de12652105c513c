mod failure;
mod settings;

use clap::{Args, Parser, Subcommand, ValueEnum};
use failure::{Failure, IO, TOO_SHORT, USAGE};
use hfbm::dwt::{build_filters, default_octaves, min_length};
use hfbm::estimate::{analyze, regression_weights, ScalingEstimate, Weighting};
use hfbm::fctest::{hfbm_test, wcf_test, TestReport};
use hfbm::io::{encode_binary, read_path_bytes, write_csv};
use hfbm::mc::{plot_script, run_study, summary_tables, write_ledger, McStudyConfig, ModelSpec, StudyKind};
use hfbm::synth::synthesize_with;
use hfbm::varmodel::{
    estimator_covariance, first_order, plugin_covariance, var_delta, FirstOrder, OctaveLayout, PluginCovariance,
    WaveletCorrelation,
};
use hfbm::{HfBmModel, MultiPath, SynthOptions};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hfbm", version, about = "Synthesis, wavelet analysis and connectivity testing of multivariate fBm")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "HFBM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a path of a model
    Synth(SynthCmd),
    /// Estimate exponents, their covariance and pairwise tests on a path
    Analyze(AnalyzeCmd),
    /// Evaluate the estimator covariance approximation for given parameters
    Varcalc(VarcalcCmd),
    /// Run the connectivity tests on a path
    Fctest(FctestCmd),
    /// Run a Monte Carlo study
    Mc(McCmd),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum PathFormatArg {
    Csv,
    Binary,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum WeightArg {
    Uniform,
    Count,
}

impl WeightArg {
    fn weighting(self) -> Weighting {
        match self {
            WeightArg::Uniform => Weighting::Uniform,
            WeightArg::Count => Weighting::ByCountAuto,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Hfbm,
    Wcf,
    Both,
}

/// Options shared by every command that reads or writes files.
#[derive(Args)]
struct Common {
    /// JSON config file (a manifest from an earlier run also works)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file, `-` for stdout
    #[arg(short, long)]
    output: Option<String>,
    /// Manifest path (default: <output>.manifest.json)
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Model JSON file
    #[arg(long, conflicts_with = "params")]
    model: Option<PathBuf>,
    /// Bivariate ideal model as alpha11,alpha22,delta,rho
    #[arg(long, allow_hyphen_values = true)]
    params: Option<String>,
}

#[derive(Args)]
struct SynthCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    flags: SynthFlags,
}

#[derive(Args, Serialize)]
struct SynthFlags {
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<PathFormatArg>,
    /// Fail on a non-PSD embedding instead of clipping eigenvalues
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    strict_psd: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_format")]
    format: PathFormatArg,
    #[serde(default)]
    strict_psd: bool,
}

fn default_n() -> usize {
    1024
}

fn default_format() -> PathFormatArg {
    PathFormatArg::Csv
}

fn default_weighting() -> WeightArg {
    WeightArg::Count
}

fn default_level() -> f64 {
    0.95
}

fn default_significance() -> f64 {
    0.1
}

fn default_method() -> MethodArg {
    MethodArg::Both
}

#[derive(Args)]
struct InputArgs {
    /// Path file (CSV or HFBM binary), `-` for stdin
    #[arg(short, long)]
    input: String,
}

#[derive(Args, Serialize)]
struct AnalysisFlags {
    #[arg(long)]
    j1: Option<usize>,
    #[arg(long)]
    j2: Option<usize>,
    #[arg(long, value_enum)]
    weighting: Option<WeightArg>,
    /// Significance level s of the tests
    #[arg(short, long)]
    significance: Option<f64>,
}

#[derive(Args)]
struct AnalyzeCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    flags: AnalysisFlags,
    /// Confidence level of the intervals
    #[arg(long)]
    level: Option<f64>,
    /// Also run the coherence (WCF) test on every pair
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    wcf: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeConfig {
    j1: Option<usize>,
    j2: Option<usize>,
    #[serde(default = "default_weighting")]
    weighting: WeightArg,
    #[serde(default = "default_significance")]
    significance: f64,
    #[serde(default = "default_level")]
    level: f64,
    #[serde(default)]
    wcf: bool,
}

#[derive(Args)]
struct FctestCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    flags: AnalysisFlags,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// 1-based component pair `a,b`; repeatable (default: all pairs)
    #[arg(long = "pair")]
    pairs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FctestConfig {
    j1: Option<usize>,
    j2: Option<usize>,
    #[serde(default = "default_weighting")]
    weighting: WeightArg,
    #[serde(default = "default_significance")]
    significance: f64,
    #[serde(default = "default_method")]
    method: MethodArg,
    #[serde(default)]
    pairs: Vec<[usize; 2]>,
}

#[derive(Args)]
struct VarcalcCmd {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(long)]
    j1: Option<usize>,
    #[arg(long)]
    j2: Option<usize>,
    #[arg(long, value_enum)]
    weighting: Option<WeightArg>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VarcalcConfig {
    #[serde(default = "default_n")]
    n: usize,
    j1: Option<usize>,
    j2: Option<usize>,
    #[serde(default = "default_weighting")]
    weighting: WeightArg,
}

#[derive(Args)]
struct McCmd {
    /// Study config JSON
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving summary, tables, plot script, ledger and manifest
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum)]
    study: Option<StudyArg>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Series lengths, comma separated
    #[arg(short, long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Model alpha11,alpha22,delta,rho; repeatable
    #[arg(long = "params", allow_hyphen_values = true)]
    params: Vec<String>,
    #[arg(long)]
    j1: Option<usize>,
    #[arg(long)]
    j2_offset: Option<usize>,
    #[arg(long, value_enum)]
    weighting: Option<WeightArg>,
    #[arg(short, long)]
    significance: Option<f64>,
    /// Alternatives of a power study, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    deltas: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
enum StudyArg {
    Estimation,
    CiQuality,
    Significance,
    Power,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hfbm: error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::new(USAGE, "--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::new(USAGE, e.to_string()))?;
    }
    match cli.command {
        Command::Synth(c) => cmd_synth(c),
        Command::Analyze(c) => cmd_analyze(c),
        Command::Varcalc(c) => cmd_varcalc(c),
        Command::Fctest(c) => cmd_fctest(c),
        Command::Mc(c) => cmd_mc(c, cli.threads),
    }
}

fn write_target(target: &str, bytes: &[u8]) -> Result<(), Failure> {
    if target == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| Failure::new(IO, format!("stdout: {e}")))
    } else {
        std::fs::write(target, bytes).map_err(|e| Failure::io(Path::new(target), e))
    }
}

fn read_source(source: &str) -> Result<Vec<u8>, Failure> {
    if source == "-" {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf).map_err(|e| Failure::new(IO, format!("stdin: {e}")))?;
        Ok(buf)
    } else {
        std::fs::read(source).map_err(|e| Failure::io(Path::new(source), e))
    }
}

fn pretty(v: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

/// Writes the sidecar manifest next to `output` unless the data went to
/// stdout and no explicit manifest path was given.
fn write_manifest(
    common: &Common,
    command: &str,
    output: &str,
    mut config: Map<String, Value>,
    extra: Value,
) -> Result<(), Failure> {
    let path = match (&common.manifest, output) {
        (Some(p), _) => p.clone(),
        (None, "-") => return Ok(()),
        (None, out) => PathBuf::from(format!("{out}.manifest.json")),
    };
    config.remove("config");
    let mut doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "output": output,
        "config": config,
    });
    if let (Value::Object(d), Value::Object(e)) = (&mut doc, extra) {
        d.extend(e);
    }
    std::fs::write(&path, pretty(&doc)).map_err(|e| Failure::io(&path, e))
}

fn output_of(common: &Common, required: bool) -> Result<String, Failure> {
    match &common.output {
        Some(o) => Ok(o.clone()),
        None if required => Err(Failure::new(USAGE, "an output file is required (-o PATH, or -o - for stdout)".into())),
        None => Ok("-".into()),
    }
}

fn to_map(v: impl Serialize) -> Map<String, Value> {
    match serde_json::to_value(v).expect("config serializes") {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

fn cmd_synth(c: SynthCmd) -> Result<(), Failure> {
    let output = output_of(&c.common, true)?;
    let mut layers = settings::load_config(c.common.config.as_deref())?;
    let model = settings::resolve_model(c.model.model.as_deref(), c.model.params.as_deref(), &mut layers)?;
    settings::overlay(&mut layers, &c.flags)?;
    let cfg: SynthConfig = settings::resolve(layers)?;
    let opts = SynthOptions { clip_negative: !cfg.strict_psd };
    let path = synthesize_with(&model, cfg.n, cfg.seed, opts)?;
    let bytes = match cfg.format {
        PathFormatArg::Csv => {
            let mut buf = Vec::new();
            write_csv(&path, &mut buf)?;
            buf
        }
        PathFormatArg::Binary => encode_binary(&path),
    };
    write_target(&output, &bytes)?;
    let mut effective = to_map(&cfg);
    effective.insert("model".into(), serde_json::to_value(&model).expect("model serializes"));
    write_manifest(&c.common, "synth", &output, effective, json!({ "seed": cfg.seed, "model": model }))
}

fn load_path(source: &str) -> Result<MultiPath, Failure> {
    Ok(read_path_bytes(&read_source(source)?)?)
}

/// Octave range from the settings, defaulting to (3, ⌊log2 n⌋ − 2), and
/// checked against the series length.
fn octave_range(n: usize, j1: Option<usize>, j2: Option<usize>) -> Result<(usize, usize), Failure> {
    let (d1, d2) = default_octaves(n);
    let (j1, j2) = (j1.unwrap_or(d1), j2.unwrap_or(d2));
    if j1 == 0 {
        return Err(Failure::new(USAGE, "j1 must be at least 1".into()));
    }
    let need = min_length(&build_filters(2).expect("db2"), j2.max(j1 + 1));
    if j2 <= j1 || n < need {
        return Err(Failure::new(
            TOO_SHORT,
            format!(
                "series of length {n} too short for octaves {j1}..{j2} (need at least two octaves and n >= {need})"
            ),
        ));
    }
    Ok((j1, j2))
}

fn all_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect()
}

#[derive(Serialize)]
struct AnalysisReport<'a> {
    n: usize,
    m: usize,
    estimate: &'a ScalingEstimate,
    weights: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    covariance: Option<PluginCovariance>,
    tests: Vec<TestReport>,
    notes: Vec<String>,
}

fn cmd_analyze(c: AnalyzeCmd) -> Result<(), Failure> {
    let output = output_of(&c.common, false)?;
    let mut layers = settings::load_config(c.common.config.as_deref())?;
    settings::overlay(&mut layers, &c.flags)?;
    settings::overlay(&mut layers, json!({ "level": c.level, "wcf": c.wcf }))?;
    let mut cfg: AnalyzeConfig = settings::resolve(layers)?;
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Failure::new(USAGE, format!("confidence level {} outside (0, 1)", cfg.level)));
    }
    let path = load_path(&c.input.input)?;
    let (j1, j2) = octave_range(path.n, cfg.j1, cfg.j2)?;
    (cfg.j1, cfg.j2) = (Some(j1), Some(j2));
    let weights = regression_weights(j1, j2, cfg.weighting.weighting().resolve(path.n))?;
    let (est, pyr) = analyze(&path, j1, j2, cfg.weighting.weighting())?;
    let layout = OctaveLayout::pyramid(path.n, j1, j2)?;

    let mut notes = Vec::new();
    let covariance = match plugin_covariance(&est, &layout, &weights, cfg.level) {
        Ok(c) => Some(c),
        Err(e @ hfbm::varmodel::VarError::InfiniteVariance { .. }) => {
            notes.push(format!("covariance not available: {e}"));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let mut tests = Vec::new();
    for pair in all_pairs(path.m) {
        if let Some(cov) = &covariance {
            let v = var_delta(&cov.cov, pair)?;
            match hfbm_test(pair, est.delta.get(pair.0, pair.1), v, cfg.significance) {
                Ok(r) => tests.push(r),
                Err(e) => notes.push(format!("hfbm test on ({}, {}) skipped: {e}", pair.0 + 1, pair.1 + 1)),
            }
        }
        if cfg.wcf {
            match wcf_test(&pyr, pair, cfg.significance) {
                Ok(r) => tests.push(r),
                Err(e) => notes.push(format!("wcf test on ({}, {}) skipped: {e}", pair.0 + 1, pair.1 + 1)),
            }
        }
    }
    for n in &notes {
        log::warn!("{n}");
    }
    let report = AnalysisReport { n: path.n, m: path.m, estimate: &est, weights: weights.w, covariance, tests, notes };
    write_target(&output, &pretty(&report))?;
    write_manifest(&c.common, "analyze", &output, to_map(&cfg), json!({ "input": c.input.input }))
}

fn parse_pair(text: &str, m: usize) -> Result<(usize, usize), Failure> {
    let bad = || Failure::new(USAGE, format!("pair {text:?} must be two distinct 1-based indices up to {m}"));
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(bad());
    }
    let a: usize = parts[0].trim().parse().map_err(|_| bad())?;
    let b: usize = parts[1].trim().parse().map_err(|_| bad())?;
    check_pair([a, b], m).ok_or_else(bad)
}

fn check_pair(p: [usize; 2], m: usize) -> Option<(usize, usize)> {
    let [a, b] = p;
    (a >= 1 && b >= 1 && a <= m && b <= m && a != b).then(|| (a.min(b) - 1, a.max(b) - 1))
}

fn cmd_fctest(c: FctestCmd) -> Result<(), Failure> {
    let output = output_of(&c.common, false)?;
    let path = load_path(&c.input.input)?;
    if path.m < 2 {
        return Err(Failure::new(USAGE, "connectivity tests need at least two components".into()));
    }
    let mut layers = settings::load_config(c.common.config.as_deref())?;
    settings::overlay(&mut layers, &c.flags)?;
    let flag_pairs: Vec<[usize; 2]> =
        c.pairs.iter().map(|p| parse_pair(p, path.m).map(|(a, b)| [a + 1, b + 1])).collect::<Result<_, _>>()?;
    let pairs_flag = (!flag_pairs.is_empty()).then_some(flag_pairs);
    settings::overlay(&mut layers, json!({ "method": c.method, "pairs": pairs_flag }))?;
    let mut cfg: FctestConfig = settings::resolve(layers)?;
    let (j1, j2) = octave_range(path.n, cfg.j1, cfg.j2)?;
    (cfg.j1, cfg.j2) = (Some(j1), Some(j2));
    let pairs: Vec<(usize, usize)> = if cfg.pairs.is_empty() {
        all_pairs(path.m)
    } else {
        cfg.pairs
            .iter()
            .map(|&p| check_pair(p, path.m).ok_or_else(|| Failure::new(USAGE, format!("invalid pair {p:?}"))))
            .collect::<Result<_, _>>()?
    };
    let (est, pyr) = analyze(&path, j1, j2, cfg.weighting.weighting())?;
    let mut tests = Vec::new();
    if matches!(cfg.method, MethodArg::Hfbm | MethodArg::Both) {
        let weights = regression_weights(j1, j2, cfg.weighting.weighting().resolve(path.n))?;
        let layout = OctaveLayout::pyramid(path.n, j1, j2)?;
        let cov = plugin_covariance(&est, &layout, &weights, 0.95)?;
        for &pair in &pairs {
            let v = var_delta(&cov.cov, pair)?;
            tests.push(hfbm_test(pair, est.delta.get(pair.0, pair.1), v, cfg.significance)?);
        }
    }
    if matches!(cfg.method, MethodArg::Wcf | MethodArg::Both) {
        for &pair in &pairs {
            tests.push(wcf_test(&pyr, pair, cfg.significance)?);
        }
    }
    write_target(&output, &pretty(&json!({ "n": path.n, "j1": j1, "j2": j2, "tests": tests })))?;
    write_manifest(&c.common, "fctest", &output, to_map(&cfg), json!({ "input": c.input.input }))
}

#[derive(Serialize)]
struct FirstOrderRow {
    form: FirstOrder,
    value: f64,
}

fn first_order_forms(m: usize) -> Vec<FirstOrder> {
    let mut out: Vec<FirstOrder> = (0..m).map(FirstOrder::VarAuto).collect();
    for (a, b) in all_pairs(m) {
        out.extend([
            FirstOrder::VarCross(a, b),
            FirstOrder::CovAutoAuto(a, b),
            FirstOrder::CovAutoCross(a, b),
            FirstOrder::VarDelta(a, b),
        ]);
    }
    out
}

fn cmd_varcalc(c: VarcalcCmd) -> Result<(), Failure> {
    let output = output_of(&c.common, false)?;
    let mut layers = settings::load_config(c.common.config.as_deref())?;
    let model: HfBmModel = settings::resolve_model(c.model.model.as_deref(), c.model.params.as_deref(), &mut layers)?;
    settings::overlay(&mut layers, json!({ "n": c.n, "j1": c.j1, "j2": c.j2, "weighting": c.weighting }))?;
    let mut cfg: VarcalcConfig = settings::resolve(layers)?;
    let (j1, j2) = octave_range(cfg.n, cfg.j1, cfg.j2)?;
    (cfg.j1, cfg.j2) = (Some(j1), Some(j2));
    let weights = regression_weights(j1, j2, cfg.weighting.weighting().resolve(cfg.n))?;
    let layout = OctaveLayout::pyramid(cfg.n, j1, j2)?;
    let wc = WaveletCorrelation::new(&model.alpha_matrix(), &model.rho, &layout)?;
    let cov = estimator_covariance(&wc, &weights, true)?;
    let first: Vec<FirstOrderRow> = first_order_forms(model.m)
        .into_iter()
        .map(|form| first_order(&wc, &weights, form).map(|value| FirstOrderRow { form, value }))
        .collect::<Result<_, _>>()?;
    let report = json!({
        "n": cfg.n,
        "layout": layout,
        "weights": weights.w,
        "covariance": cov,
        "first_order": first,
    });
    write_target(&output, &pretty(&report))?;
    let mut effective = to_map(&cfg);
    effective.insert("model".into(), serde_json::to_value(&model).expect("model serializes"));
    write_manifest(&c.common, "varcalc", &output, effective, json!({ "model": model }))
}

fn study_defaults() -> Map<String, Value> {
    to_map(McStudyConfig::new(StudyKind::Estimation, vec![ModelSpec::new(0.4, 0.8, 0.0, 0.6)], vec![1024], 500))
}

fn cmd_mc(c: McCmd, threads: Option<usize>) -> Result<(), Failure> {
    let mut layers = study_defaults();
    settings::overlay(&mut layers, settings::load_config(c.config.as_deref())?)?;
    let models: Vec<ModelSpec> = c
        .params
        .iter()
        .map(|p| {
            let v: Vec<f64> = p.split(',').filter_map(|s| s.trim().parse().ok()).collect();
            match v[..] {
                [a, b, d, r] => Ok(ModelSpec::new(a, b, d, r)),
                _ => Err(Failure::new(USAGE, format!("--params expects alpha11,alpha22,delta,rho; got {p:?}"))),
            }
        })
        .collect::<Result<_, _>>()?;
    let mut octaves = layers.get("octaves").cloned().unwrap_or(Value::Null);
    if let Value::Object(o) = &mut octaves {
        if let Some(j1) = c.j1 {
            o.insert("j1".into(), j1.into());
        }
        if let Some(off) = c.j2_offset {
            o.insert("j2_offset".into(), off.into());
        }
    }
    settings::overlay(
        &mut layers,
        json!({
            "kind": c.study,
            "reps": c.reps,
            "seed": c.seed,
            "n_grid": c.n,
            "models": (!models.is_empty()).then_some(models),
            "octaves": octaves,
            "weighting": c.weighting.map(WeightArg::weighting),
            "significance": c.significance,
            "deltas": c.deltas,
            "threads": threads,
        }),
    )?;
    let cfg = McStudyConfig::from_json(&Value::Object(layers).to_string())?;

    std::fs::create_dir_all(&c.out_dir).map_err(|e| Failure::io(&c.out_dir, e))?;
    let out = run_study(&cfg)?;
    log::info!(
        "{} replications in {:.1} s on {} threads",
        out.summary.replications,
        out.run.wall_seconds,
        out.run.threads
    );
    let file = |name: &str| c.out_dir.join(name);
    let save = |name: &str, bytes: &[u8]| {
        let p = file(name);
        std::fs::write(&p, bytes).map_err(|e| Failure::io(&p, e))
    };
    save("summary.json", &pretty(&out.summary))?;
    let mut outputs = vec!["summary.json".to_string()];
    for (stem, csv) in summary_tables(&out.summary)? {
        let name = format!("{stem}.csv");
        save(&name, csv.as_bytes())?;
        outputs.push(name);
    }
    save("plot.gp", plot_script(&out.summary).as_bytes())?;
    let mut ledger = Vec::new();
    write_ledger(&cfg, &out.records, &mut ledger)?;
    save("ledger.csv", &ledger)?;
    outputs.extend(["plot.gp".into(), "ledger.csv".into()]);
    let manifest = json!({
        "command": "mc",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": cfg,
        "outputs": outputs,
    });
    save("manifest.json", &pretty(&manifest))
}
