//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{difference_table, pairwise_contrasts, rank_by_pvalue, summarize, ContrastOptions};
use crate::datagen::{ScenarioSpec, TweakConfig};
use crate::engine::{
    compute_required_replications, estimate_worst_case_variance_detailed, failure_summary, run_study, RunOptions,
    SOFTWARE_VERSION,
};
use crate::error::{domain, Error, Result};
use crate::filter::ScenarioFilter;
use crate::models::MethodId;
use crate::protocol::{parse_protocol, StudyProtocol};
use crate::qrp::{
    apply_alter_dgp, apply_remove_competitor, apply_selective_report, default_seed_objective, optional_stopping_trace,
    seed_hunt, Audited, StoppingObjective,
};
use crate::records::{
    metadata_lines, read_ndjson, write_csv, write_ndjson, Estimand, Measure, MemorySink, NdjsonSink, RecordSink,
    ReplicationRecord, RunHeader,
};

#[derive(Parser, Debug)]
#[command(name = "qrpsim", version, about = "Monte Carlo benchmarking of binary prediction methods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct StudyArgs {
    /// Protocol file (TOML); the bundled full-size protocol when omitted.
    #[arg(long)]
    protocol: Option<PathBuf>,
    /// Master seed, overriding the protocol.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenario predicate, e.g. `rho=0.95,prev=0.05`.
    #[arg(long)]
    scenarios: Option<String>,
    /// Replications per scenario, overriding the protocol plan.
    #[arg(long)]
    replications: Option<usize>,
    /// Test-set size, overriding the protocol grid.
    #[arg(long = "n-test")]
    n_test: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the scenario grid and the replication count.
    Plan {
        #[command(flatten)]
        study: StudyArgs,
        /// Worst-case variance bound to size B with.
        #[arg(long)]
        variance: Option<f64>,
        /// List every scenario.
        #[arg(long)]
        list: bool,
    },
    /// Run the pilot replications and report V and the implied B.
    Pilot {
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute the study and write records as NDJSON.
    Run {
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Store per-method wall times (records are then no longer reproducible byte for byte).
        #[arg(long)]
        timing: bool,
    },
    /// Summaries, contrasts and rankings as CSV.
    Analyze {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also analyse the oracle-corrected estimands.
        #[arg(long)]
        corrected: bool,
        /// Monte Carlo draws for the multiplicity adjustment.
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Apply questionable research practices, with an audit trail.
    Qrp {
        #[command(flatten)]
        study: StudyArgs,
        /// Existing record file to manipulate.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, default_value = "qrp_out")]
        out: PathBuf,
        /// Methods to remove, comma separated.
        #[arg(long, value_delimiter = ',')]
        remove: Vec<String>,
        /// Report only scenarios satisfying this predicate.
        #[arg(long)]
        filter: Option<String>,
        /// `canonical`, or `SPARSITY,NONLINEAR[,SCALE]` such as `0.1,true,1.0`.
        #[arg(long = "alter-dgp")]
        alter_dgp: Option<String>,
        /// Candidate seeds, comma separated.
        #[arg(long = "seed-hunt", value_delimiter = ',')]
        seed_hunt: Vec<u64>,
        /// `STEP,MAX_B`.
        #[arg(long = "optional-stopping")]
        optional_stopping: Option<String>,
        /// Scenario id for seed hunting and optional stopping.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Difference plot data (Brier, baseline minus competitor) as CSV.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "rho=0.95,prev=0.05")]
        condition: String,
        /// Competitors, comma separated; all non-baseline methods when omitted.
        #[arg(long, value_delimiter = ',')]
        competitors: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        draws: Option<usize>,
    },
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn load_protocol(path: Option<&Path>) -> Result<StudyProtocol> {
    match path {
        Some(p) => parse_protocol(p),
        None => Ok(StudyProtocol::bundled()),
    }
}

struct Prepared {
    protocol: StudyProtocol,
    file_hash: String,
    overrides: BTreeMap<String, String>,
    filter: Option<ScenarioFilter>,
    workers: Option<usize>,
}

fn prepare(args: &StudyArgs) -> CliResult<Prepared> {
    let mut protocol = load_protocol(args.protocol.as_deref())?;
    let file_hash = protocol.hash();
    let mut overrides = BTreeMap::new();
    if let Some(s) = args.seed {
        protocol.seed = s;
        overrides.insert("seed".to_string(), s.to_string());
    }
    if let Some(b) = args.replications {
        if b == 0 {
            return Err(usage("--replications must be positive"));
        }
        protocol.plan.replications = Some(b);
        overrides.insert("replications".to_string(), b.to_string());
    }
    if let Some(n) = args.n_test {
        if n == 0 {
            return Err(usage("--n-test must be positive"));
        }
        protocol.grid.n_test = n;
        overrides.insert("n_test".to_string(), n.to_string());
    }
    let filter = match &args.scenarios {
        Some(f) => {
            let parsed: ScenarioFilter = f.parse().map_err(|e: Error| usage(e.to_string()))?;
            overrides.insert("scenarios".to_string(), parsed.to_string());
            Some(parsed)
        }
        None => None,
    };
    if args.workers == Some(0) {
        return Err(usage("--workers must be positive"));
    }
    protocol.validate()?;
    Ok(Prepared {
        protocol,
        file_hash,
        overrides,
        filter,
        workers: args.workers,
    })
}

impl Prepared {
    fn header(&self) -> RunHeader {
        RunHeader {
            protocol_hash: self.file_hash.clone(),
            master_seed: self.protocol.seed,
            overrides: self.overrides.clone(),
            software_version: SOFTWARE_VERSION.to_string(),
            tweak: self.protocol.tweak,
            audit: Vec::new(),
        }
    }

    fn run_options(&self) -> RunOptions {
        RunOptions {
            workers: self.workers,
            scenarios: self.filter.clone(),
            timing: false,
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Plan { study, variance, list } => cmd_plan(&study, variance, list),
        Command::Pilot { study, out } => cmd_pilot(&study, out.as_deref()),
        Command::Run { study, out, timing } => cmd_run(&study, &out, timing),
        Command::Analyze {
            records,
            protocol,
            out,
            corrected,
            draws,
        } => cmd_analyze(&records, protocol.as_deref(), out.as_deref(), corrected, draws),
        Command::Qrp {
            study,
            records,
            out,
            remove,
            filter,
            alter_dgp,
            seed_hunt,
            optional_stopping,
            scenario,
        } => cmd_qrp(QrpArgs {
            study,
            records,
            out,
            remove,
            filter,
            alter_dgp,
            seed_hunt,
            optional_stopping,
            scenario,
        }),
        Command::Report {
            records,
            condition,
            competitors,
            out,
            draws,
        } => cmd_report(&records, &condition, competitors, out.as_deref(), draws),
    }
}

fn cmd_plan(study: &StudyArgs, variance: Option<f64>, list: bool) -> CliResult<()> {
    let prep = prepare(study)?;
    let p = &prep.protocol;
    let scenarios = crate::engine::selected_scenarios(p, prep.filter.as_ref())?;
    let v = variance.unwrap_or(p.plan.worst_case_variance);
    let b = match (variance, p.plan.replications) {
        (None, Some(b)) => b,
        _ => compute_required_replications(v, p.grid.n_test, p.plan.target_mcse)?,
    };
    let pmin = scenarios.iter().map(|s| s.p).min().unwrap_or(0);
    let pmax = scenarios.iter().map(|s| s.p).max().unwrap_or(0);
    println!("protocol hash {}", prep.file_hash);
    println!("{} scenarios", scenarios.len());
    println!("p ranges from {pmin} to {pmax}");
    println!("n_test = {}", p.grid.n_test);
    println!("V = {v}, target MCSE = {}", p.plan.target_mcse);
    println!("B = {b}");
    println!(
        "methods: {}",
        p.methods.roster.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", ")
    );
    if list {
        for s in &scenarios {
            println!("{s}");
        }
    }
    Ok(())
}

fn cmd_pilot(study: &StudyArgs, out: Option<&Path>) -> CliResult<()> {
    let mut prep = prepare(study)?;
    let pilot_b = study.replications.unwrap_or(prep.protocol.plan.pilot_replications);
    prep.protocol.plan.replications = Some(pilot_b);
    prep.overrides.insert("pilot_replications".to_string(), pilot_b.to_string());
    let sink = MemorySink::new();
    let result = run_study(&prep.protocol, &sink, &prep.run_options())?;
    let records = sink.into_records();
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_ndjson(&dir.join("pilot.ndjson"), &prep.header(), &records)?;
    }
    let est = estimate_worst_case_variance_detailed(&records)?;
    let b = compute_required_replications(est.v, prep.protocol.grid.n_test, prep.protocol.plan.target_mcse)?;
    println!("pilot: {} scenarios x {} replications", result.scenarios.len(), pilot_b);
    println!("largest per-record variance {:.6}", est.raw_max);
    if !est.skipped_groups.is_empty() {
        println!("{} (scenario, method) groups skipped (fewer than two converged records)", est.skipped_groups.len());
    }
    println!("V = {}", est.v);
    println!("B = {b}");
    Ok(())
}

fn cmd_run(study: &StudyArgs, out: &Path, timing: bool) -> CliResult<()> {
    let prep = prepare(study)?;
    ensure_dir(out)?;
    let header = prep.header();
    let sink = NdjsonSink::create(&out.join("records.ndjson"), &header)?;
    let mut opts = prep.run_options();
    opts.timing = timing;
    let result = run_study(&prep.protocol, &sink, &opts)?;
    sink.flush()?;
    write_json(
        &out.join("run_meta.json"),
        &serde_json::json!({ "header": header, "study": &result }),
    )?;
    write_csv(&out.join("failures.csv"), &metadata_lines(&header), &result.failures)?;
    println!(
        "{} records from {} scenarios x {} replications written to {}",
        result.records,
        result.scenarios.len(),
        result.replications,
        out.join("records.ndjson").display()
    );
    for f in result.flagged() {
        println!(
            "FLAG {} {}: {:.1}% of replications failed",
            f.scenario_id,
            f.method,
            100.0 * f.proportion
        );
    }
    Ok(())
}

fn contrast_options(header: Option<&RunHeader>, protocol: &StudyProtocol, draws: Option<usize>) -> ContrastOptions {
    ContrastOptions {
        baseline: protocol.report.baseline.as_str().to_string(),
        draws: draws.unwrap_or(protocol.report.adjustment_draws),
        seed: header.map_or(protocol.seed, |h| h.master_seed),
        level: 1.0 - protocol.report.significance_level,
    }
}

fn analyze_into(
    dir: &Path,
    header: &RunHeader,
    records: &[ReplicationRecord],
    protocol: &StudyProtocol,
    corrected: bool,
    draws: Option<usize>,
) -> Result<usize> {
    let meta = metadata_lines(header);
    let opts = contrast_options(Some(header), protocol, draws);
    let mut measures: Vec<Measure> = protocol.report.estimands.iter().map(|e| Measure::raw(*e)).collect();
    if corrected {
        measures.extend(protocol.report.estimands.iter().map(|e| Measure::corrected(*e)));
    }
    let mut summary = Vec::new();
    let mut contrasts = Vec::new();
    for m in &measures {
        summary.extend(summarize(records, *m));
        contrasts.extend(pairwise_contrasts(records, *m, &opts));
    }
    let ranking = rank_by_pvalue(&contrasts, protocol.report.significance_level);
    write_csv(&dir.join("summary.csv"), &meta, &summary)?;
    write_csv(&dir.join("contrasts.csv"), &meta, &contrasts)?;
    write_csv(&dir.join("ranking.csv"), &meta, &ranking)?;
    write_csv(&dir.join("failures.csv"), &meta, &failure_summary(records))?;
    Ok(contrasts.len())
}

fn read_records(path: &Path) -> Result<(RunHeader, Vec<ReplicationRecord>)> {
    let (header, records) = read_ndjson(path)?;
    if records.is_empty() {
        return Err(domain(format!("{} contains no records", path.display())));
    }
    Ok((header.unwrap_or_default(), records))
}

fn cmd_analyze(
    records: &Path,
    protocol: Option<&Path>,
    out: Option<&Path>,
    corrected: bool,
    draws: Option<usize>,
) -> CliResult<()> {
    let protocol = load_protocol(protocol)?;
    let (header, recs) = read_records(records)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| parent_dir(records));
    ensure_dir(&dir)?;
    let n = analyze_into(&dir, &header, &recs, &protocol, corrected, draws)?;
    println!("{} records analysed; {n} contrasts written to {}", recs.len(), dir.display());
    Ok(())
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

struct QrpArgs {
    study: StudyArgs,
    records: Option<PathBuf>,
    out: PathBuf,
    remove: Vec<String>,
    filter: Option<String>,
    alter_dgp: Option<String>,
    seed_hunt: Vec<u64>,
    optional_stopping: Option<String>,
    scenario: Option<String>,
}

fn parse_tweak(text: &str) -> CliResult<TweakConfig> {
    if text.trim().eq_ignore_ascii_case("canonical") {
        return Ok(TweakConfig::CANONICAL);
    }
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || usage(format!("--alter-dgp expects `canonical` or `SPARSITY,NONLINEAR[,SCALE]`, got `{text}`"));
    if parts.len() < 2 || parts.len() > 3 {
        return Err(bad());
    }
    Ok(TweakConfig {
        sparsity: parts[0].parse().map_err(|_| bad())?,
        nonlinear: parts[1].parse().map_err(|_| bad())?,
        nonlinear_scale: parts.get(2).map_or(Ok(1.0), |s| s.parse()).map_err(|_| bad())?,
    })
}

fn qrp_scenario(id: Option<&str>) -> CliResult<ScenarioSpec> {
    let id = id.ok_or_else(|| usage("--scenario is required for seed hunting and optional stopping"))?;
    ScenarioSpec::from_id(id).map_err(|e| usage(e.to_string()))
}

fn cmd_qrp(a: QrpArgs) -> CliResult<()> {
    let record_actions = !a.remove.is_empty() || a.filter.is_some() || a.alter_dgp.is_some();
    if !record_actions && a.seed_hunt.is_empty() && a.optional_stopping.is_none() {
        return Err(usage(
            "no action given: use --alter-dgp, --remove, --filter, --seed-hunt or --optional-stopping",
        ));
    }
    if a.alter_dgp.is_some() && a.records.is_some() {
        return Err(usage("--alter-dgp reruns the study and cannot be combined with --records"));
    }
    let predicate = match &a.filter {
        Some(f) => Some(f.parse::<ScenarioFilter>().map_err(|e| usage(e.to_string()))?),
        None => None,
    };
    let tweak = a.alter_dgp.as_deref().map(parse_tweak).transpose()?;
    ensure_dir(&a.out)?;
    let mut audit_all = Vec::new();

    if record_actions {
        let (header, set, protocol) = if let Some(tweak) = tweak {
            let prep = prepare(&a.study)?;
            let tweaked = apply_alter_dgp(&Audited::clean(prep.protocol.clone()), tweak)?;
            let mut header = prep.header();
            header.protocol_hash = tweaked.value.hash();
            header.tweak = tweaked.value.tweak;
            header.audit = tweaked.audit.clone();
            let sink = NdjsonSink::create(&a.out.join("records.ndjson"), &header)?;
            let mem = MemorySink::new();
            let both = Tee(&sink, &mem);
            let result = run_study(&tweaked.value, &both, &prep.run_options())?;
            sink.flush()?;
            println!(
                "altered study: {} records from {} scenarios",
                result.records,
                result.scenarios.len()
            );
            let set = Audited {
                value: mem.into_records(),
                audit: tweaked.audit,
            };
            (header, set, tweaked.value)
        } else {
            let path = a
                .records
                .as_deref()
                .ok_or_else(|| usage("--records is required unless --alter-dgp reruns the study"))?;
            let (header, records) = read_records(path)?;
            let protocol = load_protocol(a.study.protocol.as_deref())?;
            let audit = header.audit.clone();
            (header, Audited { value: records, audit }, protocol)
        };
        let baseline = protocol.report.baseline.as_str();
        let mut set = set;
        if !a.remove.is_empty() {
            set = apply_remove_competitor(&set, &a.remove, baseline)?;
        }
        if let Some(p) = &predicate {
            set = apply_selective_report(&set, p)?;
        }
        let mut h = header.clone();
        h.audit = set.audit.clone();
        write_ndjson(&a.out.join("qrp_records.ndjson"), &h, &set.value)?;
        let n = analyze_into(&a.out, &h, &set.value, &protocol, false, None)?;
        println!("{} records reported after manipulation; {n} contrasts", set.value.len());
        audit_all = set.audit;
    }

    if !a.seed_hunt.is_empty() {
        let prep = prepare(&a.study)?;
        let scenario = qrp_scenario(a.scenario.as_deref())?;
        let small_b = a.study.replications.unwrap_or(10);
        let hunt = seed_hunt(&scenario, &prep.protocol, small_b, &a.seed_hunt, &default_seed_objective)?;
        let mut meta = metadata_lines(&prep.header());
        meta.push(("practice".into(), "E8 seed hunting (biased practice)".into()));
        write_csv(&a.out.join("seed_hunt.csv"), &meta, &hunt.trace)?;
        match hunt.best_seed {
            Some(s) => println!("seed hunt: best seed {s} over {} candidates", hunt.trace.len()),
            None => println!("seed hunt: no candidate produced a value"),
        }
        audit_all.extend(hunt.audit);
    }

    if let Some(spec) = &a.optional_stopping {
        let prep = prepare(&a.study)?;
        let scenario = qrp_scenario(a.scenario.as_deref())?;
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let (step, max_b) = match parts.as_slice() {
            [s, m] => (
                s.parse::<usize>().map_err(|_| usage("--optional-stopping expects STEP,MAX_B"))?,
                m.parse::<usize>().map_err(|_| usage("--optional-stopping expects STEP,MAX_B"))?,
            ),
            _ => return Err(usage("--optional-stopping expects STEP,MAX_B")),
        };
        let objective = StoppingObjective::PairedDifference {
            measure: Measure::raw(Estimand::Brier),
            minuend: MethodId::Ainet,
            subtrahend: MethodId::En,
        };
        let trace = optional_stopping_trace(&scenario, &prep.protocol, step, max_b, &objective)?;
        let mut meta = metadata_lines(&prep.header());
        meta.push(("practice".into(), trace.note.clone()));
        write_csv(&a.out.join("optional_stopping.csv"), &meta, &trace.trace)?;
        println!("{}", trace.note);
        match trace.b_stop {
            Some(b) => println!("optional stopping: interval first excluded zero at B = {b}"),
            None => println!("optional stopping: interval never excluded zero up to B = {max_b}"),
        }
        audit_all.extend(trace.audit);
    }

    write_json(&a.out.join("audit.json"), &audit_all)?;
    for e in &audit_all {
        println!("audit {} {}: {}", e.code, e.kind, e.description);
    }
    Ok(())
}

/// Sends every record to two sinks.
struct Tee<'a>(&'a dyn RecordSink, &'a dyn RecordSink);

impl RecordSink for Tee<'_> {
    fn append(&self, record: &ReplicationRecord) -> Result<()> {
        self.0.append(record)?;
        self.1.append(record)
    }

    fn flush(&self) -> Result<()> {
        self.0.flush()?;
        self.1.flush()
    }
}

fn cmd_report(
    records: &Path,
    condition: &str,
    competitors: Vec<String>,
    out: Option<&Path>,
    draws: Option<usize>,
) -> CliResult<()> {
    let filter: ScenarioFilter = condition.parse().map_err(|e: Error| usage(e.to_string()))?;
    let (header, recs) = read_records(records)?;
    let protocol = StudyProtocol::default();
    let opts = contrast_options(Some(&header), &protocol, draws);
    let competitors = if competitors.is_empty() {
        let mut names: Vec<String> = recs
            .iter()
            .map(|r| r.method.clone())
            .filter(|m| *m != opts.baseline)
            .collect();
        names.sort_by_key(|m| m.parse::<MethodId>().map_or(usize::MAX, |id| id as usize));
        names.dedup();
        names
    } else {
        competitors
    };
    let rows = difference_table(&recs, &filter, &competitors, &opts)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| parent_dir(records));
    ensure_dir(&dir)?;
    let mut meta = metadata_lines(&header);
    meta.push(("condition".into(), filter.to_string()));
    meta.push(("estimand".into(), "bs, baseline minus competitor".into()));
    let path = dir.join("differences.csv");
    write_csv(&path, &meta, &rows)?;
    for r in &rows {
        let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:+.5}"));
        println!(
            "{:<22} {:<6} {} [{}, {}]",
            r.label,
            r.competitor,
            f(r.mean_diff),
            f(r.ci_low),
            f(r.ci_high)
        );
    }
    println!("{} rows written to {}", rows.len(), path.display());
    Ok(())
}
