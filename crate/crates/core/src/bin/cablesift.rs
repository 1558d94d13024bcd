use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use cablesift::analytics::{self, GroupBy, MissingDefinition, Order, PercentStyle, RankingFilter, SecrecyRanking};
use cablesift::corpus::{self, Cable, CableKind, ClassificationLevel};
use cablesift::eval::{self, EvalReport, Misclassified, ModelArtifact, PipelineConfig, Scenario};
use cablesift::features::FieldConfig;
use cablesift::models::EnsembleConfig;
use cablesift::seed::DEFAULT_SEED;
use cablesift::syntheticgen::{self, SynthSpec};
use cablesift::xml;
use cablesift::{Error, Result};

#[derive(Parser)]
#[command(name = "cablesift", version, about = "Classify diplomatic cables by sensitivity and analyse their metadata")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Leave the timestamp out of report headers.
    #[arg(long, global = true)]
    no_timestamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert XML exports to a JSONL corpus and print the exclusion tally.
    Ingest {
        /// XML file or directory of XML files.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the tally as JSON.
        #[arg(long)]
        tally: Option<PathBuf>,
    },
    /// Fit the ensemble on the whole trainable corpus and write model.json.
    Train(PipelineArgs),
    /// k-fold cross-validation; writes report.json, roc.csv and pr.csv.
    Evaluate(EvaluateArgs),
    /// Score a corpus with a fitted model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Secrecy rankings, time series, gaps and country statistics.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic corpus.
    Synthgen {
        /// JSON generator spec (defaults otherwise).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n_docs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Markdown summary of an evaluation report.
    Report {
        #[arg(long)]
        report: PathBuf,
        /// Defaults to report.md next to the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// U_vs_LCS, UL_vs_CS, ULC_vs_S or U_vs_CS.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// JSON list of per-field vectorizer settings.
    #[arg(long)]
    features: Option<PathBuf>,
    /// JSON ensemble settings.
    #[arg(long)]
    ensemble: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Replacement stopword list, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Extra multi-word place names, one per line.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    k: Option<usize>,
    /// Build vocabularies once over the whole corpus instead of per fold.
    #[arg(long)]
    global_vocab: bool,
    /// FPR ceiling for the reported operating point.
    #[arg(long)]
    max_fpr: Option<f64>,
    /// Misclassified documents listed per direction.
    #[arg(long)]
    top_n: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Table {
    Senders,
    Concepts,
    ConceptsLow,
    Tags,
    Kinds,
    Monthly,
    Missing,
    Gaps,
    Cotag,
    Regions,
    Freedom,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Highest,
    Lowest,
}

#[derive(Clone, Copy, ValueEnum)]
enum PercentArg {
    TwoDecimals,
    Whole,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    table: Table,
    /// Write one CSV per table here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    min_secret: Option<u64>,
    #[arg(long)]
    min_total: Option<u64>,
    /// Keep only rows strictly below this percentage.
    #[arg(long)]
    max_percent: Option<f64>,
    #[arg(long)]
    order: Option<OrderArg>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long, value_enum)]
    percent_format: Option<PercentArg>,
    /// `tag,country,region` CSV (default: bundled Latin America and Middle
    /// East lists).
    #[arg(long)]
    regions: Option<PathBuf>,
    /// `country_tag,year,score` CSV.
    #[arg(long)]
    freedom_house: Option<PathBuf>,
    #[arg(long, default_value = "SHUM")]
    marker: String,
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long)]
    end: Option<NaiveDate>,
    #[arg(long, default_value_t = 3)]
    gap_min_run: usize,
    #[arg(long, default_value_t = 0.95)]
    gap_quantile: f64,
    /// Records counted in the monthly series.
    #[arg(long, value_enum, default_value = "all")]
    population: Population,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Population {
    /// Every record, including withheld and pouch records.
    All,
    /// Fully released cables only.
    Full,
}

/// Values a `--config` file may set. Flags win over these.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    corpus: Option<PathBuf>,
    features: Option<PathBuf>,
    ensemble: Option<PathBuf>,
    stopwords: Option<PathBuf>,
    gazetteer: Option<PathBuf>,
    scenario: Option<Scenario>,
    k: Option<usize>,
    seed: Option<u64>,
    threshold: Option<f64>,
    out_dir: Option<PathBuf>,
    global_vocab: Option<bool>,
    max_fpr: Option<f64>,
    top_n: Option<usize>,
}

struct Ctx {
    config: RunConfig,
    /// Seed from a flag or the config file, if any.
    explicit_seed: Option<u64>,
    seed: u64,
    timestamp: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            eprint!("error[usage]: {}", text.strip_prefix("error: ").unwrap_or(&text));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Internal(e.to_string()))?;
    }
    let config: RunConfig = match &cli.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    let explicit_seed = cli.seed.or(config.seed);
    let seed = explicit_seed.unwrap_or(DEFAULT_SEED);
    let ctx = Ctx { config, explicit_seed, seed, timestamp: !cli.no_timestamp };
    match cli.command {
        Command::Ingest { input, out, tally } => ingest(&input, &out, tally.as_deref()),
        Command::Train(args) => train(&ctx, &args),
        Command::Evaluate(args) => evaluate(&ctx, &args),
        Command::Predict { model, corpus, out } => predict(&ctx, &model, corpus, &out),
        Command::Analyze(args) => analyze(&ctx, &args),
        Command::Synthgen { spec, n_docs, out } => synthgen(&ctx, spec.as_deref(), n_docs, &out),
        Command::Report { report, out } => write_report(&ctx, &report, out),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::config(format!("{} does not exist", path.display())))
    }
}

/// Reads a JSON settings file; any problem with it is a usage error.
fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require(path)?;
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let mut w = create(path)?;
    if pretty {
        serde_json::to_writer_pretty(&mut w, value)?;
    } else {
        serde_json::to_writer(&mut w, value)?;
    }
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Vec<Cable>> {
    require(path)?;
    let (cables, rejected) = corpus::read_jsonl(BufReader::new(File::open(path)?))?;
    if !rejected.is_empty() {
        eprintln!("warning: skipped {} record(s) without a doc_id", rejected.len());
    }
    Ok(cables)
}

fn corpus_path(ctx: &Ctx, flag: &Option<PathBuf>) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| ctx.config.corpus.clone())
        .ok_or_else(|| Error::config("no corpus given (--corpus or the config file)"))
}

fn timestamp() -> String {
    chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn ingest(input: &Path, out: &Path, tally_path: Option<&Path>) -> Result<()> {
    require(input)?;
    let records = if input.is_dir() {
        xml::read_xml_dir(input)?
    } else {
        xml::parse_xml_records(&fs::read_to_string(input)?)?
    };
    let mut cables = Vec::with_capacity(records.len());
    let mut rejected = 0usize;
    for r in &records {
        match corpus::parse_cable_record(r) {
            Ok(c) => cables.push(c),
            Err(_) => rejected += 1,
        }
    }
    let mut w = create(out)?;
    corpus::write_jsonl(&mut w, &cables)?;
    w.flush()?;
    let (_, tally) = corpus::select_trainable(&cables);
    if let Some(p) = tally_path {
        write_json(p, &tally, true)?;
    }
    println!("{} record(s) read, {} written, {} rejected", records.len(), cables.len(), rejected);
    print!("{}", tally.render_table());
    Ok(())
}

fn pipeline_config(ctx: &Ctx, args: &PipelineArgs) -> Result<PipelineConfig> {
    let c = &ctx.config;
    let mut p = PipelineConfig::with_seed(ctx.seed);
    if let Some(path) = args.features.as_ref().or(c.features.as_ref()) {
        p.fields = read_config::<Vec<FieldConfig>>(path)?;
    }
    if let Some(path) = args.ensemble.as_ref().or(c.ensemble.as_ref()) {
        p.ensemble = read_config::<EnsembleConfig>(path)?;
    }
    if let Some(path) = args.stopwords.as_ref().or(c.stopwords.as_ref()) {
        require(path)?;
        p.tokenizer = p.tokenizer.with_stopwords_file(path)?;
    }
    if let Some(path) = args.gazetteer.as_ref().or(c.gazetteer.as_ref()) {
        require(path)?;
        p.tokenizer = p.tokenizer.with_gazetteer_file(path)?;
    }
    if let Some(t) = args.threshold.or(c.threshold) {
        p.ensemble.threshold = t;
    }
    Ok(p)
}

fn scenario(ctx: &Ctx, flag: Option<Scenario>) -> Scenario {
    flag.or(ctx.config.scenario).unwrap_or(Scenario::UVsCs)
}

fn out_dir(ctx: &Ctx, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone().or_else(|| ctx.config.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."))
}

fn trainable(ctx: &Ctx, args: &PipelineArgs) -> Result<Vec<Cable>> {
    let cables = load_corpus(&corpus_path(ctx, &args.corpus)?)?;
    let (kept, tally) = corpus::select_trainable(&cables);
    eprintln!("{} of {} cables retained for training", kept.len(), tally.input);
    Ok(kept)
}

fn train(ctx: &Ctx, args: &PipelineArgs) -> Result<()> {
    let p = pipeline_config(ctx, args)?;
    p.validate()?;
    let cables = trainable(ctx, args)?;
    let s = scenario(ctx, args.scenario);
    let model = ModelArtifact::train(&cables, s, &p)?;
    let path = out_dir(ctx, &args.out_dir).join("model.json");
    write_json(&path, &model, false)?;
    println!("model for {s} on {} cables ({} features) -> {}", model.n_train, model.feature_space.width, path.display());
    Ok(())
}

fn evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<()> {
    let c = &ctx.config;
    let mut p = pipeline_config(ctx, &args.pipeline)?;
    if let Some(k) = args.k.or(c.k) {
        p.k = k;
    }
    p.global_vocab = args.global_vocab || c.global_vocab.unwrap_or(false);
    if let Some(m) = args.max_fpr.or(c.max_fpr) {
        p.max_fpr = m;
    }
    if let Some(n) = args.top_n.or(c.top_n) {
        p.top_n = n;
    }
    p.validate()?;
    let cables = trainable(ctx, &args.pipeline)?;
    let s = scenario(ctx, args.pipeline.scenario);
    let report = eval::cross_validate(&cables, s, &p)?;
    let dir = out_dir(ctx, &args.pipeline.out_dir);

    let mut value = serde_json::to_value(&report)?;
    if ctx.timestamp {
        if let Value::Object(m) = &mut value {
            m.insert("generated_at".into(), Value::String(timestamp()));
        }
    }
    write_json(&dir.join("report.json"), &value, true)?;
    write_curve(&dir.join("roc.csv"), ["fpr", "tpr", "threshold"], &report.curves.roc)?;
    write_curve(&dir.join("pr.csv"), ["recall", "precision", "threshold"], &report.curves.pr)?;
    let op = &report.pooled.operating_point;
    println!(
        "{s}: {} docs, pooled AUC {:.4}, accuracy {:.4}, recall {:.4} at FPR {:.4}",
        report.n_docs, report.pooled.roc_auc, report.pooled.metrics.accuracy, op.tpr, op.fpr
    );
    println!("wrote {}", dir.join("report.json").display());
    Ok(())
}

fn write_curve(path: &Path, header: [&str; 3], points: &[(f64, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for (a, b, t) in points {
        w.write_record([a.to_string(), b.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Prediction<'a> {
    doc_id: &'a str,
    score: f64,
    predicted: &'a str,
    seed: u64,
}

fn predict(ctx: &Ctx, model_path: &Path, corpus: Option<PathBuf>, out: &Path) -> Result<()> {
    let model: ModelArtifact = {
        require(model_path)?;
        serde_json::from_reader(BufReader::new(File::open(model_path)?))?
    };
    let cables = load_corpus(&corpus_path(ctx, &corpus)?)?;
    let scored = model.score(&cables)?;
    let mut w = create(out)?;
    for (c, (score, group)) in cables.iter().zip(&scored) {
        let row = Prediction { doc_id: &c.doc_id, score: *score, predicted: group, seed: model.seed };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("scored {} cables -> {}", scored.len(), out.display());
    Ok(())
}

fn synthgen(ctx: &Ctx, spec_path: Option<&Path>, n_docs: Option<usize>, out: &Path) -> Result<()> {
    let mut spec: SynthSpec = match spec_path {
        Some(p) => read_config(p)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = ctx.explicit_seed {
        spec.seed = seed;
    }
    if let Some(n) = n_docs {
        spec.n_docs = n;
    }
    let cables = syntheticgen::generate(&spec)?;
    let mut w = create(out)?;
    corpus::write_jsonl(&mut w, &cables)?;
    w.flush()?;
    println!("generated {} cables (seed {}) -> {}", cables.len(), spec.seed, out.display());
    Ok(())
}

struct RankingTable {
    table: Table,
    file: &'static str,
    title: &'static str,
    by: GroupBy,
    filter: RankingFilter,
    style: PercentStyle,
}

fn ranking_tables(args: &AnalyzeArgs) -> Vec<RankingTable> {
    let base = [
        (
            Table::Senders,
            "senders.csv",
            "Sender/recipient pairs with the highest share of SECRET cables",
            GroupBy::SenderRecipient,
            RankingFilter { min_secret: 100, ..Default::default() },
            PercentStyle::TwoDecimals,
        ),
        (
            Table::Concepts,
            "concepts.csv",
            "Concepts with the highest share of SECRET cables",
            GroupBy::Concept,
            RankingFilter { min_total: 1000, ..Default::default() },
            PercentStyle::WholeTwoDecimals,
        ),
        (
            Table::ConceptsLow,
            "concepts_low.csv",
            "Concepts with the lowest share of SECRET cables (under 1%)",
            GroupBy::Concept,
            RankingFilter { min_total: 1000, max_percent: Some(1.0), order: Order::Lowest, ..Default::default() },
            PercentStyle::TwoDecimals,
        ),
        (
            Table::Tags,
            "tags.csv",
            "TAGS with the highest share of SECRET cables",
            GroupBy::Tag,
            RankingFilter { min_total: 1000, ..Default::default() },
            PercentStyle::TwoDecimals,
        ),
    ];
    base.into_iter()
        .map(|(table, file, title, by, mut filter, mut style)| {
            if let Some(v) = args.min_secret {
                filter.min_secret = v;
            }
            if let Some(v) = args.min_total {
                filter.min_total = v;
            }
            if let Some(v) = args.max_percent {
                filter.max_percent = Some(v);
            }
            if let Some(o) = args.order {
                filter.order = match o {
                    OrderArg::Highest => Order::Highest,
                    OrderArg::Lowest => Order::Lowest,
                };
            }
            if let Some(n) = args.top_n {
                filter.top_n = n;
            }
            if let Some(f) = args.percent_format {
                style = match f {
                    PercentArg::TwoDecimals => PercentStyle::TwoDecimals,
                    PercentArg::Whole => PercentStyle::WholeTwoDecimals,
                };
            }
            RankingTable { table, file, title, by, filter, style }
        })
        .collect()
}

fn opt_pct(p: Option<f64>) -> String {
    p.map_or_else(String::new, |p| format!("{p:.2}"))
}

/// Prints a titled tab-separated table and, with `--out-dir`, writes it as
/// CSV.
fn emit(args: &AnalyzeArgs, file: &str, title: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    println!("# {title}");
    println!("{}", header.join("\t"));
    for r in rows {
        println!("{}", r.join("\t"));
    }
    println!();
    if let Some(dir) = &args.out_dir {
        let mut w = csv::Writer::from_writer(create(&dir.join(file))?);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn ranking_rows(rows: &[SecrecyRanking], style: PercentStyle) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            let mut out = r.key.clone();
            out.extend([
                r.secret.to_string(),
                r.total.to_string(),
                r.percent_secret.to_string(),
                analytics::format_percent(r.percent_secret, style),
            ]);
            out
        })
        .collect()
}

fn date_range(cables: &[Cable], args: &AnalyzeArgs) -> Option<(NaiveDate, NaiveDate)> {
    let dates = cables.iter().filter_map(|c| c.date);
    let start = args.start.or_else(|| dates.clone().min())?;
    let end = args.end.or_else(|| dates.max())?;
    Some((start, end))
}

fn analyze(ctx: &Ctx, args: &AnalyzeArgs) -> Result<()> {
    let cables = load_corpus(&corpus_path(ctx, &args.corpus)?)?;
    let want = |t: Table| args.table == t || args.table == Table::All;
    if args.table == Table::Freedom && args.freedom_house.is_none() {
        return Err(Error::config("--table freedom needs --freedom-house"));
    }

    for t in ranking_tables(args).into_iter().filter(|t| want(t.table)) {
        let rows = analytics::rank_percent_secret(&cables, t.by, &t.filter);
        let mut header = match t.by {
            GroupBy::SenderRecipient => vec!["from", "to"],
            GroupBy::Concept => vec!["concept"],
            GroupBy::Tag => vec!["tag"],
        };
        header.extend(["secret", "total", "percent_secret", "display"]);
        emit(args, t.file, t.title, &header, &ranking_rows(&rows, t.style))?;
    }

    if want(Table::Kinds) {
        let rows: Vec<Vec<String>> = analytics::secrecy_share_by_kind(&cables)
            .iter()
            .map(|k| vec![k.kind.as_str().to_string(), k.secret.to_string(), k.total.to_string(), opt_pct(k.percent_secret)])
            .collect();
        emit(args, "kinds.csv", "SECRET share by record kind", &["kind", "secret", "total", "percent_secret"], &rows)?;
    }

    let range = date_range(&cables, args);
    if want(Table::Monthly) {
        if let Some((start, end)) = range {
            let pool = cables.iter().filter(|c| args.population == Population::All || c.kind == CableKind::Full);
            let rows: Vec<Vec<String>> = analytics::monthly_secret_proportion(pool, start, end)
                .into_iter()
                .map(|p| {
                    vec![p.period, p.secret.to_string(), p.total.to_string(), p.proportion.map_or_else(String::new, |v| v.to_string())]
                })
                .collect();
            emit(args, "monthly.csv", "Monthly proportion of SECRET cables", &["month", "secret", "total", "proportion"], &rows)?;
        }
    }

    if want(Table::Missing) || want(Table::Gaps) {
        if let Some((start, end)) = range {
            let series = analytics::daily_missing_counts(&cables, start, end);
            if want(Table::Missing) {
                let rows: Vec<Vec<String>> =
                    series.iter().map(|p| vec![p.date.to_string(), p.count.to_string()]).collect();
                emit(args, "missing_daily.csv", "Daily cables with an error message instead of text", &["date", "missing"], &rows)?;
            }
            if want(Table::Gaps) {
                let gaps = analytics::gap_detect(&series, args.gap_min_run, args.gap_quantile)?;
                let rows: Vec<Vec<String>> = gaps.iter().map(|(a, b)| vec![a.to_string(), b.to_string()]).collect();
                emit(args, "gaps.csv", "Runs of unusually many missing texts", &["start", "end"], &rows)?;
            }
        }
        if want(Table::Missing) {
            use ClassificationLevel::*;
            let rows: Vec<Vec<String>> = [vec![Secret], vec![Unclassified, LimitedOfficialUse]]
                .iter()
                .map(|levels| {
                    let r = analytics::missing_rate(&cables, levels, MissingDefinition::Error);
                    let names: Vec<&str> = levels.iter().map(|l| l.short()).collect();
                    vec![names.join("+"), r.missing.to_string(), r.total.to_string(), opt_pct(r.percent_missing)]
                })
                .collect();
            emit(args, "missing_rate.csv", "Missing-text rate by classification", &["levels", "missing", "total", "percent_missing"], &rows)?;
        }
    }

    if want(Table::Cotag) || want(Table::Regions) {
        let regions = match &args.regions {
            Some(p) => {
                require(p)?;
                analytics::load_regions(File::open(p)?)?
            }
            None => analytics::default_regions(),
        };
        let groups = analytics::region_groups(&regions);
        if want(Table::Cotag) {
            let mut rows = Vec::new();
            for (region, members) in &groups {
                let share = analytics::cotag_share(&cables, &args.marker, members);
                for r in share.rows.iter().chain([&share.pooled]) {
                    rows.push(vec![
                        region.clone(),
                        r.country.clone(),
                        r.with_marker.to_string(),
                        r.total.to_string(),
                        opt_pct(r.percent),
                    ]);
                }
            }
            let title = format!("Country TAGS co-tagged {}", args.marker);
            emit(args, "cotag.csv", &title, &["region", "country", "with_marker", "total", "percent"], &rows)?;
        }
        if want(Table::Regions) {
            let rows: Vec<Vec<String>> = analytics::secret_share_by_country_group(&cables, &groups)
                .into_iter()
                .map(|g| vec![g.group, g.secret.to_string(), g.total.to_string(), opt_pct(g.percent_secret)])
                .collect();
            emit(args, "region_secrecy.csv", "SECRET share by region", &["region", "secret", "total", "percent_secret"], &rows)?;
        }
    }

    if want(Table::Freedom) {
        if let Some(p) = &args.freedom_house {
            require(p)?;
            let scores = analytics::load_freedom_scores(File::open(p)?)?;
            let corr = analytics::cotag_score_correlation(&cables, &args.marker, &scores)?;
            let mut rows: Vec<Vec<String>> =
                corr.points.iter().map(|(c, s, f)| vec![c.clone(), s.to_string(), f.to_string()]).collect();
            rows.push(vec!["r".into(), corr.r.to_string(), String::new()]);
            emit(args, "freedom_house.csv", "Co-tag share against Freedom House score", &["country", "percent_marker", "mean_score"], &rows)?;
        }
    }
    Ok(())
}

fn level_name(l: Option<ClassificationLevel>) -> &'static str {
    l.map_or("-", |l| l.marking())
}

fn misclassified_table(out: &mut String, title: &str, rows: &[Misclassified]) {
    out.push_str(&format!("\n## {title}\n\n"));
    if rows.is_empty() {
        out.push_str("None.\n");
        return;
    }
    out.push_str("| doc_id | score | metadata level | embedded marking | flag |\n|---|---|---|---|---|\n");
    for m in rows {
        let flag = match (m.embedded_marker, m.metadata_level) {
            (Some(e), Some(l)) if e != l => "marking disagrees",
            _ => "",
        };
        out.push_str(&format!(
            "| {} | {:.4} | {} | {} | {} |\n",
            m.doc_id,
            m.score,
            level_name(m.metadata_level),
            level_name(m.embedded_marker),
            flag
        ));
    }
}

fn render_report(r: &EvalReport, generated_at: Option<&str>) -> String {
    let mut s = format!("# Evaluation report: {}\n\n", r.scenario);
    if let Some(t) = generated_at {
        s.push_str(&format!("Generated: {t}\n\n"));
    }
    let (neg, pos) = r.scenario.group_names();
    s.push_str(&format!(
        "{} documents ({} {pos}, {} {neg}), {}-fold, seed {}, threshold {}.\n\n",
        r.n_docs,
        r.n_positive,
        r.n_docs - r.n_positive,
        r.k,
        r.seed,
        r.threshold
    ));
    let m = &r.pooled.metrics;
    let f = &r.mean_of_folds;
    s.push_str("| metric | pooled | mean of folds |\n|---|---|---|\n");
    s.push_str(&format!("| ROC AUC | {:.4} | {:.4} |\n", r.pooled.roc_auc, f.roc_auc));
    s.push_str(&format!("| accuracy | {:.4} | {:.4} |\n", m.accuracy, f.accuracy));
    for (i, name) in [neg, pos].iter().enumerate() {
        s.push_str(&format!("| precision {name} | {:.4} | {:.4} |\n", m.precision[i], f.precision[i]));
        s.push_str(&format!("| recall {name} | {:.4} | {:.4} |\n", m.recall[i], f.recall[i]));
        s.push_str(&format!("| F1 {name} | {:.4} | {:.4} |\n", m.f1[i], f.f1[i]));
    }
    s.push_str(&format!("| macro F1 | {:.4} | {:.4} |\n", m.macro_f1, f.macro_f1));
    s.push_str(&format!("| weighted F1 | {:.4} | {:.4} |\n", m.weighted_f1, f.weighted_f1));
    let op = &r.pooled.operating_point;
    s.push_str(&format!(
        "\nBest operating point: recall {:.4} at false-positive rate {:.4} (score >= {}).\n",
        op.tpr, op.fpr, op.threshold
    ));
    s.push_str("\n## Ensemble members\n\n| member | ROC AUC |\n|---|---|\n");
    for (k, v) in &r.pooled.member_roc_auc {
        s.push_str(&format!("| {k} | {v:.4} |\n"));
    }
    s.push_str("\n## Folds\n\n| fold | train | test | features | accuracy | ROC AUC |\n|---|---|---|---|---|---|\n");
    for fr in &r.folds {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} | {:.4} |\n",
            fr.fold, fr.n_train, fr.n_test, fr.feature_width, fr.metrics.accuracy, fr.roc_auc
        ));
    }
    misclassified_table(&mut s, &format!("Top false positives (predicted {pos})"), &r.top_false_positives);
    misclassified_table(&mut s, &format!("Top false negatives (predicted {neg})"), &r.top_false_negatives);
    s
}

fn write_report(ctx: &Ctx, path: &Path, out: Option<PathBuf>) -> Result<()> {
    require(path)?;
    let value: Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let generated_at = value.get("generated_at").and_then(Value::as_str).map(str::to_string);
    let r: EvalReport = serde_json::from_value(value)?;
    let stamp = if ctx.timestamp { Some(generated_at.unwrap_or_else(timestamp)) } else { None };
    let text = render_report(&r, stamp.as_deref());
    let out = out.unwrap_or_else(|| path.with_file_name("report.md"));
    let mut w = create(&out)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    io::stdout().write_all(text.as_bytes())?;
    Ok(())
}
