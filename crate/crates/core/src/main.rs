use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use covband::channel::{self, InitialBuffer};
use covband::ekfgen::{self, VehicleModel, DEFAULT_TRACK_CAP};
use covband::learn::{self, LearnConfig, TriggerKind};
use covband::metrics::{self, RunOptions, StepMetrics};
use covband::triggers::PlanDocument;
use covband::{Error, Result, SymMatrix, TriggerPlan, TriggerSpec};

#[derive(Parser)]
#[command(name = "covband", version, about = "Conservative event-triggered covariance transmission")]
struct Cli {
    /// Seed for all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a covariance-sequence dataset with the vehicle EKF.
    Generate(GenerateArgs),
    /// Send one sequence, writing frames and per-step metrics.
    Transmit(TransmitArgs),
    /// Run a whole dataset and write per-sequence summaries.
    Run(RunArgs),
    /// Grid-search the shared threshold.
    Learn(LearnArgs),
    /// Summarize step metrics written by `run --steps`.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Track table with trackId, xCenter and yCenter columns; synthetic tracks otherwise.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Drop ingested tracks longer than this.
    #[arg(long, default_value_t = DEFAULT_TRACK_CAP)]
    cap: usize,
    /// Number of synthetic tracks.
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Steps per synthetic track.
    #[arg(long, default_value_t = 300)]
    length: usize,
    /// Output dataset (packed binary).
    #[arg(long, short)]
    out: PathBuf,
    /// Also write each sequence as text into this directory.
    #[arg(long)]
    text_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TriggerArgs {
    /// Trigger shorthand: abs:T, rel:T, nmost:N[:rel], combined:T:N, always.
    #[arg(long, conflicts_with = "trigger_file")]
    trigger: Option<String>,
    /// TOML trigger plan.
    #[arg(long)]
    trigger_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = InitArg::Zero)]
    init: InitArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Zero,
    Identity,
}

impl TriggerArgs {
    fn plan(&self, n: usize) -> Result<TriggerPlan> {
        match (&self.trigger, &self.trigger_file) {
            (Some(s), None) => TriggerPlan::new(&s.parse::<TriggerSpec>()?, n),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::from(e).context(path.display().to_string()))?;
                let specs = PlanDocument::parse(&text)?.to_specs()?;
                TriggerPlan::from_rules(&specs, n)
            }
            _ => Err(Error::Parse("give --trigger or --trigger-file".into())),
        }
    }

    fn init(&self) -> InitialBuffer {
        match self.init {
            InitArg::Zero => InitialBuffer::Zero,
            InitArg::Identity => InitialBuffer::Identity,
        }
    }
}

#[derive(Args)]
struct TransmitArgs {
    #[arg(long, short)]
    dataset: PathBuf,
    /// Zero-based sequence index.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[command(flatten)]
    trigger: TriggerArgs,
    /// Write the encoded frame stream here.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Per-step metrics CSV; stdout if omitted.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    dataset: PathBuf,
    #[command(flatten)]
    trigger: TriggerArgs,
    /// Per-sequence summary CSV; stdout if omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Per-step metrics CSV.
    #[arg(long)]
    steps: Option<PathBuf>,
    /// Write the step table in long format (sequence, step, metric, value).
    #[arg(long, requires = "steps")]
    long: bool,
    /// Check that every bound dominates its input.
    #[arg(long)]
    check_psd: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Abs,
    Rel,
    Combined,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long, short)]
    dataset: PathBuf,
    /// Tradeoff parameters.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 1e-6)]
    grid_min: f64,
    #[arg(long, default_value_t = 1e-1)]
    grid_max: f64,
    #[arg(long, default_value_t = 25)]
    per_decade: usize,
    #[arg(long, value_enum, default_value_t = KindArg::Abs)]
    kind: KindArg,
    /// N for the combined trigger.
    #[arg(long, default_value_t = 7)]
    n_most: usize,
    /// Scale the conservativeness term by n(n+1)/2.
    #[arg(long)]
    triangle_sum: bool,
    /// Curve CSV; stdout if omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Step CSV files written by `run --steps`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Matrix dimension of the runs.
    #[arg(long, default_value_t = 5)]
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct StepRow {
    sequence: usize,
    k: u32,
    sent: usize,
    rc: f64,
    bytes: usize,
}

#[derive(Serialize)]
struct LongRow<'a> {
    sequence: usize,
    step: u32,
    metric: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct CurveRow {
    lambda: f64,
    threshold: f64,
    total: f64,
    data_term: f64,
    cons_term: f64,
}

#[derive(Serialize)]
struct StatRow<'a> {
    source: String,
    metric: &'a str,
    median: f64,
    q1: f64,
    q3: f64,
    whisker_low: f64,
    whisker_high: f64,
    outliers: usize,
}

type Column = fn(&metrics::SequenceSummary) -> f64;

fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::from(e).context(p.display().to_string()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn load_dataset(path: &Path) -> Result<Vec<Vec<SymMatrix>>> {
    let file = File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    let data = ekfgen::read_dataset(BufReader::new(file)).map_err(|e| e.context(path.display().to_string()))?;
    if data.is_empty() || data.iter().all(Vec::is_empty) {
        return Err(Error::Parse(format!("{}: dataset is empty", path.display())));
    }
    Ok(data)
}

fn dimension(data: &[Vec<SymMatrix>]) -> usize {
    data.iter().find_map(|s| s.first().map(SymMatrix::n)).unwrap_or(0)
}

fn generate(args: GenerateArgs, seed: u64) -> Result<()> {
    let tracks = match &args.csv {
        Some(path) => ekfgen::ingest_csv(path, args.cap)?,
        None => ekfgen::synth_trajectories(args.count, args.length, seed),
    };
    let data = ekfgen::generate_dataset(&tracks, &VehicleModel::default(), seed)?;
    let file = File::create(&args.out).map_err(|e| Error::from(e).context(args.out.display().to_string()))?;
    ekfgen::write_dataset(BufWriter::new(file), &data)?;
    if let Some(dir) = &args.text_dir {
        std::fs::create_dir_all(dir)?;
        for (track, seq) in tracks.iter().zip(&data) {
            let path = dir.join(format!("{}.txt", track.track_id()));
            ekfgen::write_text(BufWriter::new(File::create(path)?), seq)?;
        }
    }
    let steps: usize = data.iter().map(Vec::len).sum();
    eprintln!("wrote {} sequences, {steps} steps, to {}", data.len(), args.out.display());
    Ok(())
}

fn transmit(args: TransmitArgs) -> Result<()> {
    let data = load_dataset(&args.dataset)?;
    let seq = data
        .get(args.index)
        .ok_or_else(|| Error::Parse(format!("no sequence {} in dataset of {}", args.index, data.len())))?;
    let plan = args.trigger.plan(dimension(&data))?;
    let init = args.trigger.init();
    let steps = metrics::run_sequence(seq, &plan, &init, RunOptions { check_psd: true })?;
    if let Some(path) = &args.frames {
        let mut out = BufWriter::new(File::create(path)?);
        let mut tx = channel::Transmitter::new(plan, &init)?;
        for p in seq {
            channel::write_frame(&mut out, &tx.step(p)?)?;
        }
        out.flush()?;
    }
    let mut w = csv_writer(args.metrics.as_deref())?;
    for s in &steps {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let data = load_dataset(&args.dataset)?;
    let n = dimension(&data);
    let plan = args.trigger.plan(n)?;
    let runs = metrics::run_experiment(&data, &plan, &args.trigger.init(), RunOptions { check_psd: args.check_psd })?;
    if let Some(path) = &args.steps {
        let mut w = csv_writer(Some(path))?;
        for (s, steps) in runs.iter().enumerate() {
            for m in steps {
                if args.long {
                    for (metric, value) in [("sent", m.sent as f64), ("rc", m.rc), ("bytes", m.bytes as f64)] {
                        w.serialize(LongRow { sequence: s, step: m.k, metric, value })?;
                    }
                } else {
                    w.serialize(StepRow { sequence: s, k: m.k, sent: m.sent, rc: m.rc, bytes: m.bytes })?;
                }
            }
        }
        w.flush()?;
    }
    let summaries = runs
        .iter()
        .enumerate()
        .filter(|(_, steps)| !steps.is_empty())
        .map(|(s, steps)| metrics::summarize_sequence(s, n, steps))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv_writer(args.out.as_deref())?;
    for s in &summaries {
        w.serialize(s)?;
    }
    w.flush()?;
    let reduction = metrics::summarize(&summaries.iter().map(|s| s.reduction).collect::<Vec<_>>())?;
    let rc = metrics::summarize(&summaries.iter().map(|s| s.median_rc).collect::<Vec<_>>())?;
    eprintln!(
        "median data reduction {:.2}%, median relative conservativeness {:.3}%",
        100.0 * reduction.median,
        100.0 * rc.median
    );
    Ok(())
}

fn learn_cmd(args: LearnArgs) -> Result<()> {
    let data = load_dataset(&args.dataset)?;
    let trigger = match args.kind {
        KindArg::Abs => TriggerKind::AbsoluteChange,
        KindArg::Rel => TriggerKind::RelativeChange,
        KindArg::Combined => TriggerKind::CombinedAbsNMost(args.n_most),
    };
    let grid = learn::log_grid(args.grid_min, args.grid_max, args.per_decade)?;
    let mut cfg = LearnConfig::new(0.0, grid, trigger, &data);
    cfg.triangle_sum = args.triangle_sum;
    for &lambda in &args.lambda {
        LearnConfig { lambda, ..cfg.clone() }.validate()?;
    }
    let curve = learn::evaluate_grid(&cfg)?;
    let mut w = csv_writer(args.out.as_deref())?;
    for &lambda in &args.lambda {
        for (t, o) in &curve {
            let o = o.with_lambda(lambda);
            w.serialize(CurveRow {
                lambda,
                threshold: *t,
                total: o.total,
                data_term: o.data_term,
                cons_term: o.cons_term,
            })?;
        }
        let t_star = learn::argmin(&curve, lambda).expect("grid is nonempty");
        eprintln!("lambda {lambda}: T* = {t_star:e}");
    }
    w.flush()?;
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut w = csv_writer(None)?;
    for path in &args.inputs {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let rows = rdr
            .deserialize::<StepRow>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let mut by_seq: std::collections::BTreeMap<usize, Vec<StepMetrics>> = Default::default();
        for r in rows {
            by_seq.entry(r.sequence).or_default().push(StepMetrics {
                k: r.k,
                sent: r.sent,
                rc: r.rc,
                bytes: r.bytes,
            });
        }
        let summaries = by_seq
            .iter()
            .map(|(&s, steps)| metrics::summarize_sequence(s, args.n, steps))
            .collect::<Result<Vec<_>>>()?;
        let columns: [(&str, Column); 3] = [
            ("reduction", |s| s.reduction),
            ("median_rc", |s| s.median_rc),
            ("mean_rc", |s| s.mean_rc),
        ];
        for (metric, get) in columns {
            let st = metrics::summarize(&summaries.iter().map(get).collect::<Vec<_>>())
                .map_err(|e| e.context(path.display().to_string()))?;
            w.serialize(StatRow {
                source: path.display().to_string(),
                metric,
                median: st.median,
                q1: st.q1,
                q3: st.q3,
                whisker_low: st.whisker_low,
                whisker_high: st.whisker_high,
                outliers: st.outliers.len(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Invariant(_) | Error::BufferMismatch { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a, cli.seed),
        Command::Transmit(a) => transmit(a),
        Command::Run(a) => run(a),
        Command::Learn(a) => learn_cmd(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
