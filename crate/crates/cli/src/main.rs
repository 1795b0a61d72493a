use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spectral_order::experiments::{
    cloud_orders, invariance_suite, scaling_bench, BenchConfig, InvarianceConfig, OrderParams,
    BENCH_CSV_HEADER, INVARIANCE_CSV_HEADER,
};
use spectral_order::geometry::xyz::read_xyz;
use spectral_order::geometry::{PointCloud, ShapeKind};
use spectral_order::pipeline::{
    load_checkpoint, prepare_all, pretrain_mae, save_checkpoint, train_classifier, Dataset, EmbedMode,
    Manifest, Model, OrderingMode, PosMode, TarMode, TrainConfig,
};
use spectral_order::traversal::{Axis, OrderRecord, ThresholdMode};
use spectral_order::Error;

#[derive(Parser)]
#[command(name = "spectral-order", version, about = "Spectral serialization of point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset: shape_<i>.xyz files plus manifest.json.
    Gen(GenArgs),
    /// Export the traversal orders of one cloud as JSON.
    Order(OrderArgs),
    /// Measure how often orders survive random rigid motions.
    Invariance(InvarianceArgs),
    /// Masked-autoencoder pretraining on a dataset directory.
    Pretrain(PretrainArgs),
    /// Train the classifier, optionally from a pretrained checkpoint.
    Train(TrainArgs),
    /// Time the ordering preprocessing over growing token counts.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Comma-separated shape kinds; labels follow this order.
    #[arg(long, value_delimiter = ',', default_value = "sphere,torus,box")]
    kinds: Vec<ShapeKind>,
    #[arg(long, default_value_t = 1024)]
    n_points: usize,
    /// Total number of clouds, cycling through the kinds.
    #[arg(long, default_value_t = 30)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Apply a random rotation and scale to every cloud.
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderMode {
    Sast,
    Hlt,
    Axis,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    X,
    Y,
    Z,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::X => Axis::X,
            AxisArg::Y => Axis::Y,
            AxisArg::Z => Axis::Z,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdArg {
    SubgroupMean,
    GlobalMean,
}

impl From<ThresholdArg> for ThresholdMode {
    fn from(t: ThresholdArg) -> Self {
        match t {
            ThresholdArg::SubgroupMean => ThresholdMode::SubgroupMean,
            ThresholdArg::GlobalMean => ThresholdMode::GlobalMean,
        }
    }
}

#[derive(Args)]
struct OrderOpts {
    /// Patch centers (FPS from point 0).
    #[arg(long, default_value_t = 128)]
    n_centers: usize,
    /// Eigenvectors used.
    #[arg(long, default_value_t = 4)]
    s: usize,
    /// Neighbors per center in the patch graph.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Sort axis of the axis baseline.
    #[arg(long, value_enum, default_value = "x")]
    axis: AxisArg,
    /// HLT split threshold.
    #[arg(long, value_enum, default_value = "subgroup-mean")]
    threshold: ThresholdArg,
}

impl OrderOpts {
    fn params(&self, seed: u64) -> OrderParams {
        OrderParams {
            n_centers: self.n_centers,
            s: self.s,
            k_neighbors: self.k,
            hlt_threshold: self.threshold.into(),
            axis: self.axis.into(),
            seed,
        }
    }
}

#[derive(Args)]
struct OrderArgs {
    /// Input cloud, one `x y z` per line.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "sast")]
    mode: OrderMode,
    #[command(flatten)]
    opts: OrderOpts,
    /// Output JSON file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InvarianceArgs {
    /// `.xyz` files or dataset directories containing manifest.json.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 200)]
    transforms: usize,
    /// Comma-separated ordering modes.
    #[arg(long, value_delimiter = ',', default_value = "sast,axis")]
    mode: Vec<OrderingMode>,
    /// Translations are drawn from [-t, t]^3.
    #[arg(long, default_value_t = 5.0)]
    max_translation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    opts: OrderOpts,
    /// Output CSV file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Training flags; anything omitted keeps the library default.
#[derive(Args)]
struct TrainOpts {
    /// Dataset directory with manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Fraction of clouds held out for testing.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    ordering: Option<OrderingMode>,
    #[arg(long)]
    s: Option<usize>,
    /// Neighbors per center in the patch graph.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[arg(long)]
    n_centers: Option<usize>,
    /// Points per patch.
    #[arg(long)]
    n_neighbors: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    state_size: Option<usize>,
    #[arg(long)]
    embed: Option<EmbedMode>,
    #[arg(long)]
    pos: Option<PosMode>,
    #[arg(long)]
    tar: Option<TarMode>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Metrics CSV (stdout when omitted).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Where to write the trained model.
    #[arg(long)]
    checkpoint: PathBuf,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            seed: self.seed.unwrap_or(d.seed),
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            s: self.s.unwrap_or(d.s),
            k_neighbors: self.k.unwrap_or(d.k_neighbors),
            mask_ratio: self.mask_ratio.unwrap_or(d.mask_ratio),
            ordering: self.ordering.unwrap_or(d.ordering),
            n_centers: self.n_centers.unwrap_or(d.n_centers),
            n_neighbors: self.n_neighbors.unwrap_or(d.n_neighbors),
            d_model: self.d_model.unwrap_or(d.d_model),
            n_blocks: self.blocks.unwrap_or(d.n_blocks),
            state_size: self.state_size.unwrap_or(d.state_size),
            embed_mode: self.embed.unwrap_or(d.embed_mode),
            pos_mode: self.pos.unwrap_or(d.pos_mode),
            tar_mode: self.tar.unwrap_or(d.tar_mode),
            hlt_threshold: d.hlt_threshold,
            grad_clip: match self.grad_clip {
                Some(c) if c > 0.0 => Some(c),
                Some(_) => None,
                None => d.grad_clip,
            },
        }
    }
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    train: TrainOpts,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    train: TrainOpts,
    /// Start from this checkpoint (its classifier head is used only if the shapes match).
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Token counts: `a..b` doubles from a to b, or a comma-separated list.
    #[arg(long, default_value = "128..4096", value_parser = parse_tokens)]
    tokens: TokenList,
    #[arg(long, default_value_t = 3)]
    repeat: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    s: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone)]
struct TokenList(Vec<usize>);

fn parse_tokens(s: &str) -> Result<TokenList, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}"));
    let tokens = if let Some((a, b)) = s.split_once("..") {
        let (mut t, end) = (num(a)?, num(b)?);
        if t == 0 || t > end {
            return Err(format!("range '{s}' must satisfy 0 < start <= end"));
        }
        let mut out = Vec::new();
        while t <= end {
            out.push(t);
            t *= 2;
        }
        out
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if tokens.windows(2).any(|w| w[0] >= w[1]) {
        return Err("token counts must be strictly ascending".into());
    }
    Ok(TokenList(tokens))
}

/// Runtime failure: taxonomy name plus message.
struct Failure {
    kind: &'static str,
    message: String,
    hint: Option<&'static str>,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let hint = matches!(e, Error::IsolatedNode { .. }).then_some("raise --k");
        Failure {
            kind: e.kind_name(),
            message: e.to_string(),
            hint,
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        kind: "io",
        message: format!("{}: {e}", path.display()),
        hint: None,
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| io_failure(p, e))?),
        None => Box::new(io::stdout()),
    })
}

fn write_csv<T: Serialize>(path: Option<&Path>, header: &[&str], rows: &[T]) -> CliResult {
    let name = path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(output(path)?);
    w.write_record(header).map_err(|e| io_failure(&name, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_failure(&name, e))?;
    }
    w.flush().map_err(|e| io_failure(&name, e))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult {
    let name = path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    output(path)?
        .write_all(text.as_bytes())
        .map_err(|e| io_failure(&name, e))
}

fn cmd_gen(args: &GenArgs) -> CliResult {
    let data = Dataset::synthetic(&args.kinds, args.count, args.n_points, args.seed, args.augment)?;
    let manifest = data.save_dir(&args.out_dir, args.seed)?;
    eprintln!("wrote {} clouds to {}", manifest.entries.len(), args.out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct OrderFile {
    mode: &'static str,
    n_centers: usize,
    k_neighbors: usize,
    s: usize,
    /// Cloud index of each token.
    center_indices: Vec<usize>,
    orders: Vec<OrderRecord>,
}

fn cmd_order(args: &OrderArgs) -> CliResult {
    let cloud = read_xyz(&args.input)?;
    let (mode, name) = match args.mode {
        OrderMode::Sast => (OrderingMode::Sast, "sast"),
        OrderMode::Hlt => (OrderingMode::Hlt, "hlt"),
        OrderMode::Axis => (OrderingMode::Axis, "axis"),
    };
    let params = args.opts.params(0);
    let result = cloud_orders(&cloud, mode, &params)?;
    let orders = result
        .orders
        .iter()
        .map(|o| match &result.codes {
            Some(codes) => codes.record(o),
            None => o.to_record(),
        })
        .collect();
    let file = OrderFile {
        mode: name,
        n_centers: params.n_centers,
        k_neighbors: params.k_neighbors,
        s: params.s,
        center_indices: result.center_indices,
        orders,
    };
    write_json(args.out.as_deref(), &file)
}

fn load_named_clouds(inputs: &[PathBuf]) -> CliResult<Vec<(String, PointCloud)>> {
    let mut clouds = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let path = input.join("manifest.json");
            let text = fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
            let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Failure {
                kind: "parse",
                message: format!("{}: {e}", path.display()),
                hint: None,
            })?;
            for entry in &manifest.entries {
                let name = entry.file.trim_end_matches(".xyz").to_string();
                clouds.push((name, read_xyz(input.join(&entry.file))?));
            }
        } else {
            let name = input
                .file_stem()
                .map_or_else(|| input.display().to_string(), |s| s.to_string_lossy().into_owned());
            clouds.push((name, read_xyz(input)?));
        }
    }
    Ok(clouds)
}

fn cmd_invariance(args: &InvarianceArgs) -> CliResult {
    let clouds = load_named_clouds(&args.inputs)?;
    let config = InvarianceConfig {
        transforms: args.transforms,
        max_translation: args.max_translation,
        seed: args.seed,
        modes: args.mode.clone(),
        params: args.opts.params(args.seed),
    };
    let rows = invariance_suite(&clouds, &config)?;
    write_csv(args.out.as_deref(), &INVARIANCE_CSV_HEADER, &rows)
}

const METRICS_HEADER: [&str; 4] = ["epoch", "split", "loss", "accuracy"];

fn load_split(opts: &TrainOpts, config: &TrainConfig) -> CliResult<(Dataset, Dataset)> {
    let data = Dataset::load_dir(&opts.data)?;
    Ok(data.split(opts.test_fraction, config.seed)?)
}

fn cmd_pretrain(args: &PretrainArgs) -> CliResult {
    let opts = &args.train;
    let config = opts.config();
    config.validate()?;
    let (train, _) = load_split(opts, &config)?;
    let prepared = prepare_all(&train, &config)?;
    let report = pretrain_mae(&prepared, &config, train.n_classes(), None)?;
    save_checkpoint(&opts.checkpoint, &report.model, Some(&config))?;
    write_csv(opts.metrics.as_deref(), &METRICS_HEADER, &report.metrics)?;
    if let (Some(first), Some(last)) = (report.metrics.first(), report.metrics.last()) {
        eprintln!("reconstruction loss {:.5} -> {:.5}", first.loss, last.loss);
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> CliResult {
    let opts = &args.train;
    let config = opts.config();
    config.validate()?;
    let (train, test) = load_split(opts, &config)?;
    let n_classes = train.n_classes();
    let init = match &args.init {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let mut model = Model::new(&config.model_config(n_classes), config.seed)?;
            ckpt.load_into(&mut model, &["head."])?;
            Some(model)
        }
        None => None,
    };
    let train = prepare_all(&train, &config)?;
    let test = prepare_all(&test, &config)?;
    let report = train_classifier(&train, &test, n_classes, &config, init)?;
    save_checkpoint(&opts.checkpoint, &report.model, Some(&config))?;
    write_csv(opts.metrics.as_deref(), &METRICS_HEADER, &report.metrics)?;
    eprintln!(
        "train accuracy {:.4}, test accuracy {:.4}",
        report.train_accuracy, report.test_accuracy
    );
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> CliResult {
    let config = BenchConfig {
        tokens: args.tokens.0.clone(),
        repeat: args.repeat,
        k_neighbors: args.k,
        s: args.s,
        seed: args.seed,
    };
    let rows = scaling_bench(&config)?;
    write_csv(args.out.as_deref(), &BENCH_CSV_HEADER, &rows)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Order(a) => cmd_order(a),
        Command::Invariance(a) => cmd_invariance(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.kind, f.message);
            if let Some(hint) = f.hint {
                eprintln!("hint: {hint}");
            }
            ExitCode::from(1)
        }
    }
}
