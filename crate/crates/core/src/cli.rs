//! Command-line front end: `analyze`, `gsv`, `subsets`, `simulate`, `compare`.
//!
//! Settings come from an optional TOML file (`--config`) and are overridden
//! by flags. Every output carries a provenance header with the crate
//! version, the seed and a SHA-256 of the resolved configuration.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::closed::{subset_search, SubsetSearchConfig};
use crate::design::{load_design_csv, save_design_csv, MatchedDesign, OutcomeKind, OutcomeMatrix};
use crate::error::{Error, Result};
use crate::report::{analyze_subset, gsv_table, AnalysisOptions, FdpReport};
use crate::scores::{build_scores, ScoreMatrix, Statistic};
use crate::sim::{
    default_subset_family, gen_matched_pairs, run_coverage_study, run_runtime_study,
    run_screening_study, run_selector_study, run_table2, runtime_settings, selector_confounding,
    svg_grouped_bars, BarSeries, ExperimentSpec, Method, TauKind,
};
use crate::worst_case::GAMMA_TOL;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(
    name = "fdpsens",
    version,
    about = "FDP sensitivity sets for matched observational studies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// v*, FDP sensitivity sets and generalized sensitivity values per subset and Gamma (JSON)
    Analyze(AnalysisArgs),
    /// Generalized sensitivity values Gamma*(R, r) per subset (CSV)
    Gsv(AnalysisArgs),
    /// Rank every subset of a given size by Gamma*(R, r) (CSV)
    Subsets(AnalysisArgs),
    /// Run a simulation study
    Simulate(SimulateArgs),
    /// Exact against naive: v*, GSV tables and the dominance check (JSON)
    Compare(AnalysisArgs),
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// TOML configuration file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Family-wise level [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Random seed (simulations)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (directory for `simulate`); stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct AnalysisArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Design CSV with header stratum_id,unit_id,treated,<outcomes...>
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Bias bound Gamma [default: 1]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Comma-separated Gamma values (overrides --gamma)
    #[arg(long, value_delimiter = ',')]
    pub gamma_grid: Option<Vec<f64>>,
    /// Outcome indices or names, comma-separated; repeat for several subsets [default: all outcomes]
    #[arg(long)]
    pub subset: Vec<String>,
    /// Subset size for `subsets`
    #[arg(long)]
    pub subset_size: Option<usize>,
    /// r in Gamma*(R, r): the number of true nulls tolerated [default: all r for gsv, 1 for subsets]
    #[arg(long)]
    pub r_tolerance: Option<usize>,
    /// Statistic per outcome: auto, mh, raw, huber, huber:<trim>; one value applies to all [default: auto]
    #[arg(long, value_delimiter = ',')]
    pub statistic: Option<Vec<String>>,
    /// Outcomes (indices or names) to treat as continuous even if 0/1 valued
    #[arg(long, value_delimiter = ',')]
    pub continuous: Option<Vec<String>>,
    /// Upper end of the Gamma search [default: 10]
    #[arg(long)]
    pub gamma_hi: Option<f64>,
    /// Bisection tolerance on Gamma [default: 0.001]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Restrict `subsets` to these outcomes (indices or names)
    #[arg(long, value_delimiter = ',')]
    pub prefilter: Option<Vec<String>>,
    /// Maximum number of candidate subsets [default: 5000]
    #[arg(long)]
    pub cap: Option<u64>,
    /// Skip the GSV table in `analyze`
    #[arg(long)]
    pub no_gsv: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Distribution of v*([K]) for the exact and naive procedures
    Table2,
    /// How often screening leaves outcomes undecided, by Gamma and B
    Screening,
    /// Naive smallest-p selector against the Gamma*(R, 1) selector
    Selector,
    /// Branch-and-bound against enumeration, wall time
    Runtime,
    /// Simultaneous coverage of the sensitivity sets
    Coverage,
    /// Write one synthetic design CSV
    Dataset,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    pub experiment: Experiment,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Number of matched pairs B
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Number of outcomes K
    #[arg(long)]
    pub outcomes: Option<usize>,
    /// Comma-separated Gamma values
    #[arg(long, value_delimiter = ',')]
    pub gamma_grid: Option<Vec<f64>>,
    /// Use the replicate counts and grids of the published experiments (slow)
    #[arg(long)]
    pub paper_scale: bool,
}

/// File-level configuration. Every field is optional; flags win.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma_grid: Option<Vec<f64>>,
    /// Each entry is a comma-separated list of indices or names.
    pub subsets: Option<Vec<String>>,
    pub subset_size: Option<usize>,
    pub r_tolerance: Option<usize>,
    pub statistic: Option<Vec<String>>,
    pub continuous: Option<Vec<String>>,
    pub gamma_hi: Option<f64>,
    pub tol: Option<f64>,
    pub prefilter: Option<Vec<String>>,
    pub cap: Option<u64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub replicates: Option<usize>,
    pub paper_scale: Option<bool>,
    /// Simulation recipe; unspecified fields take their defaults.
    pub experiment: Option<ExperimentSpec>,
    /// Pair counts for the screening study.
    pub pair_grid: Option<Vec<usize>>,
    /// Correlations between the affected outcomes in the selector study.
    pub selector_rhos: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn load(path: Option<&Path>) -> Result<Self> {
        path.map(Self::from_toml_file)
            .transpose()
            .map(Option::unwrap_or_default)
    }

    fn apply_common(&mut self, c: &CommonArgs) {
        over(&mut self.alpha, c.alpha);
        over(&mut self.seed, c.seed);
        over(&mut self.out, c.out.clone());
    }

    fn apply_analysis(&mut self, a: &AnalysisArgs) {
        self.apply_common(&a.common);
        over(&mut self.input, a.input.clone());
        over(&mut self.gamma, a.gamma);
        over(&mut self.gamma_grid, a.gamma_grid.clone());
        if !a.subset.is_empty() {
            self.subsets = Some(a.subset.clone());
        }
        over(&mut self.subset_size, a.subset_size);
        over(&mut self.r_tolerance, a.r_tolerance);
        over(&mut self.statistic, a.statistic.clone());
        over(&mut self.continuous, a.continuous.clone());
        over(&mut self.gamma_hi, a.gamma_hi);
        over(&mut self.tol, a.tol);
        over(&mut self.prefilter, a.prefilter.clone());
        over(&mut self.cap, a.cap);
    }

    fn alpha(&self) -> Result<f64> {
        let a = self.alpha.unwrap_or(0.05);
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {a}")));
        }
        Ok(a)
    }

    fn gammas(&self) -> Result<Vec<f64>> {
        let g = match (&self.gamma_grid, self.gamma) {
            (Some(grid), _) if !grid.is_empty() => grid.clone(),
            (_, Some(g)) => vec![g],
            _ => vec![1.0],
        };
        if let Some(bad) = g.iter().find(|v| !(**v >= 1.0 && v.is_finite())) {
            return Err(Error::Config(format!(
                "Gamma values must be >= 1, got {bad}"
            )));
        }
        Ok(g)
    }

    fn analysis_options(&self, gsv: bool, compare: bool) -> Result<AnalysisOptions> {
        Ok(AnalysisOptions {
            alpha: self.alpha()?,
            gsv,
            compare,
            gamma_hi: self.gamma_hi.unwrap_or(10.0),
            tol: self.tol.unwrap_or(GAMMA_TOL),
        })
    }

    /// SHA-256 of the resolved configuration, excluding the output location.
    pub fn hash(&self, command: &str) -> String {
        let cfg = RunConfig {
            out: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&(command, &cfg)).unwrap_or_default();
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn over<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl Provenance {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            tool: "fdpsens".into(),
            version: VERSION.into(),
            command: command.into(),
            config_sha256: cfg.hash(command),
            seed: cfg.seed,
        }
    }

    fn csv_header(&self) -> String {
        format!(
            "# {} {} {} config_sha256={} seed={}\n",
            self.tool,
            self.version,
            self.command,
            self.config_sha256,
            self.seed.map_or("none".into(), |s| s.to_string())
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisDocument {
    pub provenance: Provenance,
    pub input: Option<PathBuf>,
    pub outcomes: Vec<String>,
    pub statistics: Vec<String>,
    pub reports: Vec<FdpReport>,
}

/// Process exit code for an error: 2 for bad input or configuration, 3 for
/// a failed internal consistency check, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Csv { .. }
        | Error::Validation(_)
        | Error::OutcomeIndex { .. }
        | Error::NotBinary { .. }
        | Error::DegenerateScale { .. }
        | Error::DegenerateOutcome { .. }
        | Error::ShapeMismatch(_)
        | Error::Capacity { .. }
        | Error::Config(_) => 2,
        Error::Invariant(_) => 3,
        _ => 1,
    }
}

/// Parse `std::env::args`, run, and return the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("fdpsens: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(a) => cmd_analyze(&a, false),
        Command::Compare(a) => cmd_analyze(&a, true),
        Command::Gsv(a) => cmd_gsv(&a),
        Command::Subsets(a) => cmd_subsets(&a),
        Command::Simulate(s) => cmd_simulate(&s),
    }
}

struct Loaded {
    design: MatchedDesign,
    outcomes: OutcomeMatrix,
    scores: ScoreMatrix,
}

fn resolve_outcomes(items: &[String], names: &[String]) -> Result<Vec<usize>> {
    items
        .iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|tok| {
            if let Some(k) = names.iter().position(|n| n == tok) {
                return Ok(k);
            }
            let k: usize = tok
                .parse()
                .map_err(|_| Error::Config(format!("unknown outcome `{tok}`")))?;
            if k >= names.len() {
                return Err(Error::OutcomeIndex {
                    index: k,
                    count: names.len(),
                });
            }
            Ok(k)
        })
        .collect()
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("an input design CSV is required (--input)".into()))?;
    let (design, mut outcomes) = load_design_csv(path)?;
    if let Some(cont) = &cfg.continuous {
        for k in resolve_outcomes(cont, outcomes.names())? {
            outcomes.set_kind(k, OutcomeKind::Continuous)?;
        }
    }
    let stats: Vec<Statistic> = match &cfg.statistic {
        Some(v) if !v.is_empty() => v.iter().map(|s| s.parse()).collect::<Result<_>>()?,
        _ => vec![Statistic::Auto],
    };
    let scores = build_scores(&design, &outcomes, &stats)?;
    Ok(Loaded {
        design,
        outcomes,
        scores,
    })
}

fn subsets_of(cfg: &RunConfig, names: &[String]) -> Result<Vec<Vec<usize>>> {
    match &cfg.subsets {
        Some(list) if !list.is_empty() => list
            .iter()
            .map(|s| resolve_outcomes(std::slice::from_ref(s), names))
            .collect(),
        _ => Ok(vec![(0..names.len()).collect()]),
    }
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, body)?;
        }
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(body.as_bytes())?;
        }
    }
    Ok(())
}

pub fn cmd_analyze(args: &AnalysisArgs, compare: bool) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    cfg.apply_analysis(args);
    let command = if compare { "compare" } else { "analyze" };
    let data = load(&cfg)?;
    let names = data.outcomes.names().to_vec();
    let opts = cfg.analysis_options(compare || !args.no_gsv, compare)?;
    let gammas = cfg.gammas()?;
    let mut reports = Vec::new();
    for subset in subsets_of(&cfg, &names)? {
        reports.extend(analyze_subset(
            &data.design,
            &data.scores,
            &names,
            &subset,
            &gammas,
            &opts,
        )?);
    }
    if compare {
        for r in &reports {
            eprintln!(
                "R = {:?}  Gamma = {}  v* = {}  naive v = {}",
                r.subset_names,
                r.gamma,
                r.v_star,
                r.naive_v.map_or("-".into(), |v| v.to_string())
            );
        }
    }
    let doc = AnalysisDocument {
        provenance: Provenance::new(command, &cfg),
        input: cfg.input.clone(),
        outcomes: names,
        statistics: data.scores.labels().to_vec(),
        reports,
    };
    let mut body = serde_json::to_string_pretty(&doc)?;
    body.push('\n');
    emit(cfg.out.as_deref(), &body)
}

pub fn cmd_gsv(args: &AnalysisArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    cfg.apply_analysis(args);
    let data = load(&cfg)?;
    let names = data.outcomes.names().to_vec();
    let opts = cfg.analysis_options(true, false)?;
    let mut body = Provenance::new("gsv", &cfg).csv_header();
    body.push_str("subset,r,gsv,lower,upper,saturated\n");
    for subset in subsets_of(&cfg, &names)? {
        let tab = gsv_table(&data.design, &data.scores, &subset, &opts, false)?;
        let label = subset_label(&subset, &names);
        for (r, g) in tab {
            if cfg.r_tolerance.is_some_and(|want| want != r) {
                continue;
            }
            let _ = writeln!(
                body,
                "{label},{r},{:.3},{:.6},{:.6},{}",
                g.gamma, g.lower, g.upper, g.saturated
            );
        }
    }
    emit(cfg.out.as_deref(), &body)
}

fn subset_label(subset: &[usize], names: &[String]) -> String {
    subset
        .iter()
        .map(|&k| names[k].as_str())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn cmd_subsets(args: &AnalysisArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    cfg.apply_analysis(args);
    let data = load(&cfg)?;
    let names = data.outcomes.names().to_vec();
    let size = cfg
        .subset_size
        .ok_or_else(|| Error::Config("`subsets` needs --subset-size".into()))?;
    let r = cfg.r_tolerance.unwrap_or(1);
    let search = SubsetSearchConfig {
        alpha: cfg.alpha()?,
        gamma_hi: cfg.gamma_hi.unwrap_or(10.0),
        tol: cfg.tol.unwrap_or(GAMMA_TOL),
        cap: cfg.cap.unwrap_or(SubsetSearchConfig::default().cap),
        prefilter: cfg
            .prefilter
            .as_ref()
            .map(|p| resolve_outcomes(p, &names))
            .transpose()?,
    };
    let ranked = subset_search(&data.design, &data.scores, size, r, &search)?;
    let mut body = Provenance::new("subsets", &cfg).csv_header();
    body.push_str("rank,subset,indices,gsv,lower,upper,saturated\n");
    for (i, rs) in ranked.iter().enumerate() {
        let idx = rs
            .subset
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            body,
            "{},{},{idx},{:.3},{:.6},{:.6},{}",
            i + 1,
            subset_label(&rs.subset, &names),
            rs.gsv.gamma,
            rs.gsv.lower,
            rs.gsv.upper,
            rs.gsv.saturated
        );
    }
    emit(cfg.out.as_deref(), &body)
}

fn sim_spec(cfg: &RunConfig, args: &SimulateArgs) -> ExperimentSpec {
    let mut spec = cfg.experiment.clone().unwrap_or_default();
    if let Some(a) = cfg.alpha {
        spec.alpha = a;
    }
    if let Some(s) = cfg.seed {
        spec.seed = s;
    }
    if args.paper_scale {
        spec.replicates = 1000;
    }
    if let Some(r) = cfg.replicates {
        spec.replicates = r;
    }
    if let Some(b) = args.pairs {
        spec.pairs = b;
    }
    if let Some(k) = args.outcomes {
        spec.outcomes = k;
    }
    if let Some(g) = &args.gamma_grid {
        spec.gamma_grid = g.clone();
    }
    spec
}

/// Files written by one simulation.
struct SimOutput {
    csv: String,
    json: serde_json::Value,
    svg: Option<String>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    cfg.apply_common(&args.common);
    over(&mut cfg.replicates, args.replicates);
    if args.paper_scale {
        cfg.paper_scale = Some(true);
    }
    let spec = sim_spec(&cfg, args);
    cfg.seed = Some(spec.seed);
    let name = format!("{:?}", args.experiment).to_lowercase();
    let command = format!("simulate {name}");
    let prov = Provenance::new(&command, &cfg);
    let out = match args.experiment {
        Experiment::Table2 => sim_table2(&spec)?,
        Experiment::Screening => sim_screening(&spec, &cfg, args)?,
        Experiment::Selector => sim_selector(&spec, &cfg)?,
        Experiment::Runtime => sim_runtime(&spec, args)?,
        Experiment::Coverage => sim_coverage(&spec, args)?,
        Experiment::Dataset => {
            let data = gen_matched_pairs(&spec, 0)?;
            let path = cfg
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("synthetic.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            save_design_csv(&path, &data.design, &data.outcomes)?;
            eprintln!(
                "wrote {} ({} pairs, {} outcomes, affected: {:?})",
                path.display(),
                spec.pairs,
                spec.outcomes,
                data.truth
            );
            return Ok(());
        }
    };
    let summary = serde_json::json!({
        "provenance": prov,
        "spec": spec,
        "results": out.json,
    });
    match &cfg.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(
                dir.join(format!("{name}.csv")),
                format!("{}{}", prov.csv_header(), out.csv),
            )?;
            std::fs::write(
                dir.join(format!("{name}.json")),
                serde_json::to_string_pretty(&summary)? + "\n",
            )?;
            if let Some(svg) = out.svg {
                std::fs::write(dir.join(format!("{name}.svg")), svg)?;
            }
            eprintln!("wrote {name}.csv, {name}.json to {}", dir.display());
        }
        None => emit(None, &format!("{}{}", prov.csv_header(), out.csv))?,
    }
    Ok(())
}

fn sim_table2(spec: &ExperimentSpec) -> Result<SimOutput> {
    let res = run_table2(spec)?;
    for (g, vals) in res.values.iter().enumerate() {
        let gamma = spec.gamma_grid[g];
        for (rep, pv) in vals.iter().enumerate() {
            if pv.exact > pv.naive {
                return Err(Error::Invariant(format!(
                    "replicate {rep}, Gamma {gamma}: exact v* {} above naive {}",
                    pv.exact, pv.naive
                )));
            }
            if gamma == 1.0 && pv.exact != pv.naive {
                return Err(Error::Invariant(format!(
                    "replicate {rep}: exact and naive differ at Gamma = 1"
                )));
            }
        }
    }
    let k = spec.outcomes;
    let mut csv = String::from("gamma,method");
    for v in 0..=k {
        let _ = write!(csv, ",v{v}");
    }
    csv.push('\n');
    for row in &res.rows {
        let _ = write!(csv, "{},{}", row.gamma, method_label(row.method));
        for p in &row.proportions {
            let _ = write!(csv, ",{p:.3}");
        }
        csv.push('\n');
    }
    // bars: share with v* = K per Gamma and method
    let cats: Vec<String> = spec
        .gamma_grid
        .iter()
        .map(|g| format!("Gamma {g}"))
        .collect();
    let series = [Method::Exact, Method::Naive]
        .iter()
        .map(|&m| BarSeries {
            name: method_label(m).into(),
            values: res
                .rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.proportions[k])
                .collect(),
        })
        .collect::<Vec<_>>();
    let svg = svg_grouped_bars(
        &format!("Share of replicates with v* = {k}"),
        &cats,
        &series,
        "share",
    );
    Ok(SimOutput {
        csv,
        json: serde_json::to_value(&res.rows)?,
        svg: Some(svg),
    })
}

fn method_label(m: Method) -> &'static str {
    match m {
        Method::Exact => "exact",
        Method::Naive => "naive",
    }
}

fn sim_screening(spec: &ExperimentSpec, cfg: &RunConfig, args: &SimulateArgs) -> Result<SimOutput> {
    let mut s = spec.clone();
    if cfg.experiment.is_none() {
        // the published screening design: K = 10, half the outcomes affected
        s.outcomes = args.outcomes.unwrap_or(10);
        s.tau = TauKind::half();
        if args.gamma_grid.is_none() {
            s.gamma_grid = vec![1.25, 1.5, 1.75, 2.0];
        }
    }
    let grid = match (&cfg.pair_grid, args.paper_scale) {
        (Some(g), _) => g.clone(),
        (None, true) => vec![500, 1000, 2000, 5000, 10000],
        (None, false) => vec![500, 1000, 2000],
    };
    let rows = run_screening_study(&s, &grid)?;
    let mut csv = String::from("gamma,pairs,called_at_least_once,average_frequency\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{:.3},{:.3}",
            r.gamma, r.pairs, r.called_at_least_once, r.average_frequency
        );
    }
    let cats: Vec<String> = s.gamma_grid.iter().map(|g| format!("Gamma {g}")).collect();
    let series: Vec<BarSeries> = grid
        .iter()
        .map(|&b| BarSeries {
            name: format!("B = {b}"),
            values: rows
                .iter()
                .filter(|r| r.pairs == b)
                .map(|r| r.called_at_least_once)
                .collect(),
        })
        .collect();
    let svg = svg_grouped_bars(
        "Share of datasets needing the search",
        &cats,
        &series,
        "share",
    );
    Ok(SimOutput {
        csv,
        json: serde_json::to_value(&rows)?,
        svg: Some(svg),
    })
}

fn sim_selector(spec: &ExperimentSpec, cfg: &RunConfig) -> Result<SimOutput> {
    let rhos = cfg
        .selector_rhos
        .clone()
        .unwrap_or_else(|| vec![-0.2, 0.0, 0.2]);
    let rows = run_selector_study(spec, &selector_confounding(), &rhos)?;
    let mut csv = String::from("rho,naive_selector,gsv_selector,effect,replicates\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{:.3},{:.3},{:.4},{}",
            r.rho, r.naive, r.gsv_selector, r.effect, r.replicates
        );
    }
    let cats: Vec<String> = rows.iter().map(|r| format!("rho {}", r.rho)).collect();
    let series = vec![
        BarSeries {
            name: "naive".into(),
            values: rows.iter().map(|r| r.naive).collect(),
        },
        BarSeries {
            name: "Gamma*(R,1)".into(),
            values: rows.iter().map(|r| r.gsv_selector).collect(),
        },
    ];
    let svg = svg_grouped_bars("Successful selections", &cats, &series, "share");
    Ok(SimOutput {
        csv,
        json: serde_json::to_value(&rows)?,
        svg: Some(svg),
    })
}

fn sim_runtime(spec: &ExperimentSpec, args: &SimulateArgs) -> Result<SimOutput> {
    let mut s = spec.clone();
    s.outcomes = args.outcomes.unwrap_or(10);
    if args.replicates.is_none()
        && !args.paper_scale
        && spec.replicates == ExperimentSpec::default().replicates
    {
        // enumeration is expensive; keep the default run short
        s.replicates = 10;
    }
    let rows = run_runtime_study(&s, &runtime_settings())?;
    if let Some(bad) = rows.iter().find(|r| !r.agree) {
        return Err(Error::Invariant(format!(
            "branch-and-bound and enumeration disagree in setting {}",
            bad.setting
        )));
    }
    let mut csv = String::from(
        "setting,tau,sigma,gamma,replicates,indecisive,mean_v_star_secs,mean_oracle_secs,median_speedup,min_speedup\n",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{:.6},{:.6},{:.2},{:.2}",
            r.setting,
            r.tau,
            r.sigma,
            r.gamma,
            r.replicates,
            r.indecisive,
            r.mean_v_star_secs,
            r.mean_oracle_secs,
            r.median_speedup,
            r.min_speedup
        );
    }
    let cats: Vec<String> = rows.iter().map(|r| r.setting.to_string()).collect();
    let series = vec![
        BarSeries {
            name: "branch-and-bound".into(),
            values: rows.iter().map(|r| r.mean_v_star_secs).collect(),
        },
        BarSeries {
            name: "enumeration".into(),
            values: rows.iter().map(|r| r.mean_oracle_secs).collect(),
        },
    ];
    let svg = svg_grouped_bars("Mean wall time per dataset", &cats, &series, "seconds");
    Ok(SimOutput {
        csv,
        json: serde_json::to_value(&rows)?,
        svg: Some(svg),
    })
}

fn sim_coverage(spec: &ExperimentSpec, args: &SimulateArgs) -> Result<SimOutput> {
    let mut s = spec.clone();
    if args.replicates.is_none() && !args.paper_scale {
        s.replicates = s.replicates.max(500);
    }
    let fam = default_subset_family(s.outcomes);
    let mut csv = String::from("gamma,subset,coverage\n");
    let mut results = Vec::new();
    for &g in &s.gamma_grid {
        let res = run_coverage_study(&s, &fam, g, None)?;
        for (sub, c) in res.subsets.iter().zip(&res.per_subset) {
            let idx = sub
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(";");
            let _ = writeln!(csv, "{g},{idx},{c:.3}");
        }
        let _ = writeln!(csv, "{g},simultaneous,{:.3}", res.simultaneous);
        results.push(res);
    }
    Ok(SimOutput {
        csv,
        json: serde_json::to_value(&results)?,
        svg: None,
    })
}
