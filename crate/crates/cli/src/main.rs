//! `foldscope` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use foldscope::analysis::{
    clustering_sensitivity_sweep, heatmap_matrix, ClusterMode, Sampling, SensitivityConfig,
    DEFAULT_KMEANS_ITERS,
};
use foldscope::cantornet::{build_cantornet, fig3_fixture, fig4_fixture, tessellation_csv};
use foldscope::convexity::{run_equivalence_trials, TrialConfig, MAX_HYPERPLANES};
use foldscope::dataset::{load_mnist_split, resolve_data_dir, LabeledDataset, Split};
use foldscope::folding::{folding_with_layer_mask, refine_path, sample_segment, PathStat};
use foldscope::trainer::{self, model_file_name, parse_architecture, TrainConfig};
use foldscope::{load_network, save_network, LayerMask, MlpNetwork};

#[derive(Parser, Debug, Serialize)]
#[command(name = "foldscope", version, about = "Space folding analysis of ReLU networks")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (default: all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Train MLP classifiers on MNIST.
    Train(TrainArgs),
    /// Folding profile of a single straight path.
    Fold(FoldArgs),
    /// Folding heatmap over class pairs.
    Pairs(PairsArgs),
    /// Folding between two classes as a function of the cluster count.
    Sensitivity(SensitivityArgs),
    /// Build, export and check CantorNet.
    Cantornet(CantornetArgs),
    /// Randomized comparison of Euclidean and Hamming convexity.
    VerifyConvexity(ConvexityArgs),
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// Directory with the MNIST IDX files (default: $FOLDSCOPE_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// Architecture `LxW`, e.g. `2x30`.
    #[arg(long, conflicts_with = "suite", required_unless_present = "suite")]
    arch: Option<String>,
    /// Preset suite: `small` or `large`.
    #[arg(long)]
    suite: Option<String>,
    /// Seeds to train (default: the global seed).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Use only the first N training images.
    #[arg(long)]
    train_limit: Option<usize>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct FoldArgs {
    /// Model file or `cantornet:k=K`.
    #[arg(long)]
    model: String,
    /// Start point: comma-separated coordinates or `idx:N` (test image N).
    #[arg(long, allow_hyphen_values = true)]
    a: String,
    /// End point, same forms as `--a`.
    #[arg(long, allow_hyphen_values = true)]
    b: String,
    #[arg(long, default_value_t = 60)]
    steps: usize,
    /// Bisect until every region crossed by the segment is visited.
    #[arg(long)]
    refine: bool,
    #[arg(long, default_value_t = 4096)]
    max_points: usize,
    /// Layers contributing bits; the output layer has index = hidden layer count.
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
enum StatArg {
    Final,
    PrefixMax,
}

impl From<StatArg> for PathStat {
    fn from(s: StatArg) -> Self {
        match s {
            StatArg::Final => PathStat::Final,
            StatArg::PrefixMax => PathStat::PrefixMax,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct PairsArgs {
    #[arg(long)]
    model: String,
    /// `all` or a comma-separated list of digits.
    #[arg(long, default_value = "all")]
    classes: String,
    /// Samples per class.
    #[arg(long, default_value_t = 100, conflicts_with_all = ["cluster", "full"])]
    limit: usize,
    /// Use K k-means centroids per class instead of samples.
    #[arg(long, conflicts_with = "full")]
    cluster: Option<usize>,
    /// Use every sample of each class.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = DEFAULT_KMEANS_ITERS)]
    kmeans_iters: usize,
    /// Samples per path (default: the number of hidden neurons).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum, default_value_t = StatArg::PrefixMax)]
    stat: StatArg,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
enum ModeArg {
    OneClass,
    BothClasses,
}

#[derive(Args, Debug, Serialize)]
struct SensitivityArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    class_a: u8,
    #[arg(long)]
    class_b: u8,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50,100")]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::BothClasses)]
    mode: ModeArg,
    /// Raw samples per class used for clustering and for the reference.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = DEFAULT_KMEANS_ITERS)]
    kmeans_iters: usize,
    /// Samples per path (default: the number of hidden neurons).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum, default_value_t = StatArg::PrefixMax)]
    stat: StatArg,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
enum Fixture {
    Fig3,
    Fig4,
}

#[derive(Args, Debug, Serialize)]
struct CantornetArgs {
    /// Recursion depth.
    #[arg(long)]
    k: usize,
    /// Write the weights file.
    #[arg(long)]
    export: bool,
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
    /// Write a tessellation raster with this many samples per side.
    #[arg(long)]
    raster: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ConvexityArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 5)]
    max_hyperplanes: usize,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    /// Random segments per convexity check.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Failure classes mapped to exit codes 2 and 1.
enum Failure {
    Usage(anyhow::Error),
    Compute(anyhow::Error),
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

trait OrCompute<T> {
    fn compute(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrCompute<T> for std::result::Result<T, E> {
    fn compute(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Compute(e.into()))
    }
}

/// Records what a run did; written next to its outputs.
struct Run {
    subcommand: &'static str,
    out_dir: PathBuf,
    outputs: Vec<PathBuf>,
    inputs: Vec<String>,
    started: Instant,
}

impl Run {
    fn new(subcommand: &'static str, out_dir: &Path) -> CmdResult<Self> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))
            .compute()?;
        Ok(Self {
            subcommand,
            out_dir: out_dir.to_path_buf(),
            outputs: Vec::new(),
            inputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> CmdResult<PathBuf> {
        let path = self.out_dir.join(name);
        let mut text = contents.to_string();
        if !text.ends_with('\n') {
            text.push('\n');
        }
        fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))
            .compute()?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn finish(mut self, cli: &Cli, extra: serde_json::Value) -> CmdResult<()> {
        let manifest = json!({
            "subcommand": self.subcommand,
            "version": env!("CARGO_PKG_VERSION"),
            "config": cli,
            "seed": cli.seed,
            "threads": rayon::current_num_threads(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "results": extra,
            "wall_time_s": self.started.elapsed().as_secs_f64(),
        });
        let text = serde_json::to_string_pretty(&manifest).compute()?;
        let name = format!("{}.manifest.json", self.subcommand);
        self.write(&name, &text)?;
        Ok(())
    }
}

/// A network plus the layer mask used when none is requested.
fn load_model(source: &str, run: &mut Run) -> CmdResult<(MlpNetwork, LayerMask)> {
    run.inputs.push(source.to_string());
    if let Some(rest) = source.strip_prefix("cantornet:") {
        let k: usize = rest
            .strip_prefix("k=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| usage(format!("bad model source `{source}`, expected cantornet:k=K")))?;
        if k == 0 {
            return Err(usage("CantorNet depth must be at least 1"));
        }
        let net = build_cantornet(k).compute()?;
        let mask = LayerMask::hidden_and_output(&net);
        return Ok((net, mask));
    }
    let path = Path::new(source);
    if !path.is_file() {
        return Err(usage(format!("model file `{source}` not found")));
    }
    let net = load_network(path).compute()?;
    let mask = LayerMask::hidden(&net);
    Ok((net, mask))
}

fn load_split(data: &DataArgs, split: Split, run: &mut Run) -> CmdResult<LabeledDataset> {
    let dir = resolve_data_dir(data.data_dir.as_deref()).map_err(|e| Failure::Usage(e.into()))?;
    run.inputs.push(dir.display().to_string());
    load_mnist_split(&dir, split)
        .with_context(|| format!("loading MNIST from {}", dir.display()))
        .compute()
}

fn parse_point(spec: &str, data: &DataArgs, run: &mut Run) -> CmdResult<Vec<f64>> {
    if let Some(idx) = spec.strip_prefix("idx:") {
        let i: usize = idx.parse().map_err(|_| usage(format!("bad image index `{spec}`")))?;
        let test = load_split(data, Split::Test, run)?;
        if i >= test.len() {
            return Err(usage(format!("image index {i} out of range (test split has {})", test.len())));
        }
        return Ok(test.image(i).to_vec());
    }
    spec.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| usage(format!("bad coordinate list `{spec}`"))))
        .collect()
}

fn path_steps(requested: Option<usize>, net: &MlpNetwork) -> CmdResult<usize> {
    let steps = requested.unwrap_or_else(|| net.hidden_neuron_count().max(2));
    if steps < 2 {
        return Err(usage("--steps must be at least 2"));
    }
    Ok(steps)
}

fn parse_classes(spec: &str) -> CmdResult<Vec<u8>> {
    if spec.trim() == "all" {
        return Ok((0..10).collect());
    }
    let classes = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| match s.trim().parse::<u8>() {
            Ok(c) if c < 10 => Ok(c),
            _ => Err(usage(format!("bad class `{s}`"))),
        })
        .collect::<CmdResult<Vec<u8>>>()?;
    if classes.is_empty() {
        return Err(usage("class filter selects no classes"));
    }
    Ok(classes)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> CmdResult<()> {
    let architectures = match (&args.arch, &args.suite) {
        (Some(a), _) => vec![parse_architecture(a).map_err(|e| Failure::Usage(e.into()))?],
        (None, Some(s)) => trainer::suite(s).map_err(|e| Failure::Usage(e.into()))?,
        (None, None) => return Err(usage("either --arch or --suite is required")),
    };
    if args.batch == 0 || !(args.lr > 0.0) {
        return Err(usage("batch size and learning rate must be positive"));
    }
    let seeds = if args.seeds.is_empty() { vec![cli.seed] } else { args.seeds.clone() };
    let mut run = Run::new("train", &args.out_dir)?;
    let mut train_set = load_split(&args.data, Split::Train, &mut run)?;
    if let Some(n) = args.train_limit {
        train_set = train_set.head(n);
    }
    let val_set = load_split(&args.data, Split::Test, &mut run)?;
    let mut results = Vec::new();
    for hidden in &architectures {
        for &seed in &seeds {
            let config = TrainConfig {
                epochs: args.epochs,
                learning_rate: args.lr,
                batch_size: args.batch,
                ..TrainConfig::new(hidden.clone(), seed)
            };
            let (net, history) = trainer::train(&config, &train_set, &val_set).compute()?;
            let name = model_file_name(hidden, seed);
            let model_path = run.out_dir.join(&name);
            save_network(&net, &model_path).compute()?;
            run.outputs.push(model_path);
            let stem = name.trim_end_matches(".json");
            run.write(&format!("{stem}.history.csv"), &history.to_csv())?;
            println!(
                "{stem}: val_accuracy={:.4}{}",
                history.final_accuracy(),
                if history.is_low_accuracy() { " (low-accuracy)" } else { "" }
            );
            results.push(json!({
                "model": name,
                "seed": seed,
                "init": history.init,
                "final_accuracy": history.final_accuracy(),
                "low_accuracy": history.is_low_accuracy(),
            }));
        }
    }
    run.finish(cli, json!(results))
}

fn cmd_fold(cli: &Cli, args: &FoldArgs) -> CmdResult<()> {
    let mut run = Run::new("fold", &args.out_dir)?;
    let (net, default_mask) = load_model(&args.model, &mut run)?;
    let mask = if args.layers.is_empty() {
        default_mask
    } else {
        LayerMask::new(&net, &args.layers).map_err(|e| Failure::Usage(e.into()))?
    };
    let a = parse_point(&args.a, &args.data, &mut run)?;
    let b = parse_point(&args.b, &args.data, &mut run)?;
    if a.len() != net.input_dim() || b.len() != net.input_dim() {
        return Err(usage(format!("endpoints must have {} coordinates", net.input_dim())));
    }
    let mut path = sample_segment(&a, &b, args.steps).map_err(|e| Failure::Usage(e.into()))?;
    let mut refinement = None;
    if args.refine {
        let refined = refine_path(&net, &path, args.max_points, &mask).compute()?;
        path = refined.path;
        refinement = Some((refined.budget_exhausted, refined.unresolved));
    }
    let profile = folding_with_layer_mask(&net, &path, &mask).compute()?;
    run.write("fold_profile.csv", &profile.to_csv())?;
    println!(
        "r1={} r2={} distinct={} chi_final={} chi_prefix_max={} degenerate={} samples={}{}",
        profile.r1(),
        profile.r2(),
        profile.distinct_count(),
        profile.chi_final,
        profile.chi_prefix_max(),
        profile.degenerate,
        path.len(),
        match refinement {
            Some((true, _)) => " (refinement budget exhausted)".to_string(),
            Some((false, n)) if n > 0 => format!(" ({n} simultaneous multi-unit transitions)"),
            _ => String::new(),
        }
    );
    run.finish(
        cli,
        json!({
            "r1": profile.r1(),
            "r2": profile.r2(),
            "distinct": profile.distinct_count(),
            "chi_final": profile.chi_final,
            "chi_prefix_max": profile.chi_prefix_max(),
            "degenerate": profile.degenerate,
            "samples": path.len(),
            "budget_exhausted": refinement.map(|r| r.0),
            "unresolved_transitions": refinement.map(|r| r.1),
            "layers": mask.layers(),
        }),
    )
}

fn cmd_pairs(cli: &Cli, args: &PairsArgs) -> CmdResult<()> {
    let classes = parse_classes(&args.classes)?;
    let sampling = match (args.cluster, args.full) {
        (Some(0), _) => return Err(usage("--cluster must be at least 1")),
        (Some(k), _) => Sampling::Cluster { k, max_iters: args.kmeans_iters },
        (None, true) => Sampling::Limit(None),
        (None, false) if args.limit == 0 => return Err(usage("--limit must be at least 1")),
        (None, false) => Sampling::Limit(Some(args.limit)),
    };
    let mut run = Run::new("pairs", &args.out_dir)?;
    let (net, _) = load_model(&args.model, &mut run)?;
    let steps = path_steps(args.steps, &net)?;
    let data = load_split(&args.data, Split::Test, &mut run)?;
    let heatmap = heatmap_matrix(&net, &data, &classes, &sampling, steps, args.stat.into(), cli.seed)
        .compute()?;
    run.write("heatmap.csv", &heatmap.to_csv())?;
    let aggregate = heatmap.aggregate();
    println!(
        "{} cells, median of cell medians = {}",
        heatmap.cells.len(),
        aggregate.map_or("n/a".to_string(), |v| format!("{v:.4}"))
    );
    run.finish(cli, json!({ "sampling": sampling, "steps": steps, "aggregate": aggregate }))
}

fn cmd_sensitivity(cli: &Cli, args: &SensitivityArgs) -> CmdResult<()> {
    if args.class_a > 9 || args.class_b > 9 {
        return Err(usage("classes must be digits 0..=9"));
    }
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(usage("--k values must be at least 1"));
    }
    let mut run = Run::new("sensitivity", &args.out_dir)?;
    let (net, _) = load_model(&args.model, &mut run)?;
    let steps = path_steps(args.steps, &net)?;
    let data = load_split(&args.data, Split::Test, &mut run)?;
    let mode = match args.mode {
        ModeArg::OneClass => ClusterMode::OneClass,
        ModeArg::BothClasses => ClusterMode::BothClasses,
    };
    let config = SensitivityConfig {
        n_steps: steps,
        stat: args.stat.into(),
        seed: cli.seed,
        per_class: Some(args.per_class),
        max_iters: args.kmeans_iters,
    };
    let report = clustering_sensitivity_sweep(&net, &data, args.class_a, args.class_b, &args.k, mode, &config)
        .compute()?;
    let csv = report.to_csv();
    run.write("sensitivity.csv", &csv)?;
    print!("{csv}");
    run.finish(cli, serde_json::to_value(&report).compute()?)
}

fn cmd_cantornet(cli: &Cli, args: &CantornetArgs) -> CmdResult<()> {
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let mut run = Run::new("cantornet", &args.out_dir)?;
    let net = build_cantornet(args.k).compute()?;
    println!("CantorNet k={}: {} hidden neurons", args.k, net.hidden_neuron_count());
    if args.export {
        run.write(&format!("cantornet_k{}.json", args.k), &net.to_json())?;
    }
    if let Some(res) = args.raster {
        let csv = tessellation_csv(args.k, res, true).map_err(|e| Failure::Usage(e.into()))?;
        run.write(&format!("cantornet_k{}_tessellation.csv", args.k), &csv)?;
    }
    let mut report = json!({});
    match args.fixture {
        Some(Fixture::Fig3) => {
            if args.k != 1 {
                return Err(usage("the fig3 fixture is defined for --k 1"));
            }
            let r = fig3_fixture().compute()?;
            let line = format!(
                "fig3: regions={} first_layer_chi={} all_layers_chi={} {}",
                r.regions.len(),
                r.first_layer_chi,
                r.all_layers_chi,
                if r.passed() { "PASS" } else { "FAIL" }
            );
            println!("{line}");
            report = json!({
                "fixture": "fig3",
                "regions": r.regions.len(),
                "first_layer_chi": r.first_layer_chi,
                "hidden_chi": r.hidden_chi,
                "all_layers_chi": r.all_layers_chi,
                "passed": r.passed(),
            });
            run.write("fixture_fig3.json", &report.to_string())?;
            if !r.passed() {
                run.finish(cli, report)?;
                return Err(Failure::Compute(anyhow!("fig3 fixture failed")));
            }
        }
        Some(Fixture::Fig4) => {
            if args.k != 2 {
                return Err(usage("the fig4 fixture is defined for --k 2"));
            }
            let r = fig4_fixture().compute()?;
            println!(
                "fig4: r1={} r2={} chi_final={} samples={} {}",
                r.r1(),
                r.profile.r2(),
                r.chi_final(),
                r.samples,
                if r.passed() { "PASS" } else { "FAIL" }
            );
            report = json!({
                "fixture": "fig4",
                "r1": r.r1(),
                "r2": r.profile.r2(),
                "chi_final": r.chi_final(),
                "samples": r.samples,
                "passed": r.passed(),
            });
            run.write("fixture_fig4.json", &report.to_string())?;
            run.write("fixture_fig4_profile.csv", &r.profile.to_csv())?;
            if !r.passed() {
                run.finish(cli, report)?;
                return Err(Failure::Compute(anyhow!("fig4 fixture failed")));
            }
        }
        None => {}
    }
    run.finish(cli, report)
}

fn cmd_verify_convexity(cli: &Cli, args: &ConvexityArgs) -> CmdResult<()> {
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    if args.max_hyperplanes == 0 || args.max_hyperplanes > MAX_HYPERPLANES {
        return Err(usage(format!("--max-hyperplanes must be in 1..={MAX_HYPERPLANES}")));
    }
    if args.grid < 64 {
        return Err(usage("--grid must be at least 64"));
    }
    let mut run = Run::new("verify-convexity", &args.out_dir)?;
    let report = run_equivalence_trials(&TrialConfig {
        trials: args.trials,
        max_hyperplanes: args.max_hyperplanes,
        grid_resolution: args.grid,
        samples: args.samples,
        seed: cli.seed,
    })
    .compute()?;
    println!(
        "{} trials, {} agreements, {} counterexamples ({} convex subsets)",
        report.trials,
        report.agreements,
        report.counterexamples.len(),
        report.convex_subsets
    );
    run.write("convexity_report.json", &serde_json::to_string_pretty(&report).compute()?)?;
    run.finish(
        cli,
        json!({ "agreements": report.agreements, "counterexamples": report.counterexamples.len() }),
    )
}

fn run(cli: &Cli) -> CmdResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().compute()?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(cli, a),
        Command::Fold(a) => cmd_fold(cli, a),
        Command::Pairs(a) => cmd_pairs(cli, a),
        Command::Sensitivity(a) => cmd_sensitivity(cli, a),
        Command::Cantornet(a) => cmd_cantornet(cli, a),
        Command::VerifyConvexity(a) => cmd_verify_convexity(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
