//! `cbf`: large-system dual, two-cell analysis, rate regions and
//! Monte-Carlo experiments from JSON scenario files.
//!
//! Exit codes: 0 success, 1 solver failure, 2 invalid or missing input,
//! 3 infeasible targets, 4 two-cell analysis on a system with `L != 2`.

mod error;
mod output;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cbf::finite::experiments::{run_avg_rate_region, run_convergence, run_rate_cdf, RegionMode};
use cbf::finite::users_for;
use cbf::power::nested_solve;
use cbf::rate_region::{sweep_boundary, RateProfile};
use cbf::two_cell::{solve_two_cell, two_cell_curves, zf_optimality_check};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use error::CliError;
use output::{emit, Cell, Manifest, Table};
use scenario::{Experiment, Scenario};

#[derive(Parser, Debug)]
#[command(
    name = "cbf",
    version,
    about = "Min-max fair coordinated beamforming solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the large-system dual and the nested power allocation.
    SolveDual(SolveDualArgs),
    /// Closed-form two-cell solution and its rho-curves.
    TwoCell(TwoCellArgs),
    /// Large-system rate-region boundary.
    RateRegion(RateRegionArgs),
    /// Finite-system Monte-Carlo experiment.
    MonteCarlo(MonteCarloArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario or configuration JSON file.
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest path; defaults to `<out>.manifest.json`, or stderr.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveDualArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct TwoCellArgs {
    #[command(flatten)]
    common: Common,
    /// Solution JSON path; without it the JSON goes to stdout when the
    /// CSV has a file, else to stderr.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Points of the rho grid.
    #[arg(long, default_value_t = 201)]
    rho_points: usize,
}

#[derive(Args, Debug)]
struct RateRegionArgs {
    #[command(flatten)]
    common: Common,
    /// Points of the alpha grid; scenario value or 21
    #[arg(long)]
    alpha_points: Option<usize>,
    /// Relative tolerance of the rate bisection.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    #[value(name = "finite_opt")]
    FiniteOpt,
    Ls,
    Pc,
}

impl From<ModeArg> for RegionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::FiniteOpt => RegionMode::FiniteOpt,
            ModeArg::Ls => RegionMode::Ls,
            ModeArg::Pc => RegionMode::Pc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ExperimentArg {
    Region,
    Cdf,
    Convergence,
}

#[derive(Args, Debug)]
struct MonteCarloArgs {
    #[command(flatten)]
    common: Common,
    /// Experiment; defaults to the scenario's, else `region`.
    #[arg(long, value_enum)]
    experiment: Option<ExperimentArg>,
    /// Points of the alpha grid (region); scenario value or 11
    #[arg(long)]
    alpha_points: Option<usize>,
    /// Antenna counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    nt: Option<Vec<usize>>,
    /// Channel draws; scenario value or 100
    #[arg(long)]
    draws: Option<usize>,
    /// RNG seed; scenario value or 1
    #[arg(long)]
    seed: Option<u64>,
    /// Region mode; scenario value or finite_opt
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SolveDual(a) => cmd_solve_dual(&a),
        Command::TwoCell(a) => cmd_two_cell(&a),
        Command::RateRegion(a) => cmd_rate_region(&a),
        Command::MonteCarlo(a) => cmd_monte_carlo(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn finish(mut manifest: Manifest, common: &Common) -> Result<(), CliError> {
    manifest.outputs.extend(common.out.clone());
    manifest.write(common.manifest.as_deref())
}

fn cmd_solve_dual(a: &SolveDualArgs) -> Result<(), CliError> {
    let (sc, raw) = scenario::load(&a.common.config)?;
    let cfg = &sc.config;
    cfg.validated()?;
    let nested = nested_solve(cfg)?;
    let top = nested.top();
    let doc = json!({ "dual": top.dual, "nested": nested });
    let text = serde_json::to_string_pretty(&doc).expect("solution serializes") + "\n";
    emit(a.common.out.as_deref(), &text)?;
    let partition: Vec<&Vec<usize>> = nested.levels.iter().map(|l| &l.selfish).collect();
    eprintln!(
        "objective {} phi {} partition {:?}",
        top.dual.objective, nested.phi, partition
    );
    finish(
        Manifest::new("solve-dual", cfg, None, json!({}), &raw),
        &a.common,
    )
}

fn cmd_two_cell(a: &TwoCellArgs) -> Result<(), CliError> {
    let (sc, raw) = scenario::load(&a.common.config)?;
    let cfg = &sc.config;
    if cfg.cells != 2 {
        return Err(CliError::NotTwoCell(cfg.cells));
    }
    cfg.validated()?;
    if a.rho_points < 2 {
        return Err(CliError::Usage("--rho-points must be at least 2".into()));
    }
    let sol = solve_two_cell(cfg)?;
    let curves = two_cell_curves(cfg)?;
    let zf: Vec<_> = (0..2)
        .map(|k| zf_optimality_check(cfg, k))
        .collect::<Result<_, _>>()?;
    let doc = json!({ "solution": sol, "curves": curves, "zf_conditions": zf });
    let text = serde_json::to_string_pretty(&doc).expect("solution serializes") + "\n";

    let (lo, hi) = (curves.rho_lo, curves.plot_upper(sol.rho_star));
    let mut table = Table::new(["rho", "g1", "g2", "h"]);
    for i in 0..a.rho_points {
        let rho = lo + (hi - lo) * i as f64 / (a.rho_points - 1) as f64;
        table.push(vec![
            Cell::Float(rho),
            Cell::Float(curves.g1(rho)),
            Cell::Float(curves.g2(rho)),
            Cell::Float(curves.h(rho)),
        ]);
    }
    match (&a.json, &a.common.out) {
        (Some(p), _) => emit(Some(p), &text)?,
        (None, Some(_)) => emit(None, &text)?,
        // The CSV owns stdout.
        (None, None) => eprint!("{text}"),
    }
    emit(a.common.out.as_deref(), &table.to_csv())?;
    eprintln!("case {:?} rho* {}", sol.case, sol.rho_star);
    let mut manifest = Manifest::new(
        "two-cell",
        cfg,
        None,
        json!({ "rho_points": a.rho_points }),
        &raw,
    );
    manifest.outputs.extend(a.common.out.clone());
    manifest.outputs.extend(a.json.clone());
    manifest.write(a.common.manifest.as_deref())
}

fn cmd_rate_region(a: &RateRegionArgs) -> Result<(), CliError> {
    let (sc, raw) = scenario::load(&a.common.config)?;
    let cfg = &sc.config;
    let points = a.alpha_points.or(sc.alpha_points).unwrap_or(21);
    let boundary = sweep_boundary(cfg, points, a.tol)?;
    let l = cfg.cells;
    let header: Vec<String> = (1..=l)
        .map(|k| format!("alpha_{k}"))
        .chain(std::iter::once("r_star".to_string()))
        .chain((1..=l).map(|k| format!("rate_{k}")))
        .collect();
    let mut table = Table::new(header);
    for p in &boundary {
        let mut row: Vec<Cell> = p.alpha.iter().map(|&x| Cell::Float(x)).collect();
        row.push(Cell::Float(p.r_star));
        row.extend(p.rates.iter().map(|&x| Cell::Float(x)));
        table.push(row);
    }
    emit(a.common.out.as_deref(), &table.to_csv())?;
    let settings = json!({ "alpha_points": points, "tol": a.tol });
    finish(
        Manifest::new("rate-region", cfg, None, settings, &raw),
        &a.common,
    )
}

fn resolve_experiment(a: &MonteCarloArgs, sc: &Scenario) -> Experiment {
    match a.experiment {
        Some(ExperimentArg::Region) => Experiment::Region,
        Some(ExperimentArg::Cdf) => Experiment::Cdf,
        Some(ExperimentArg::Convergence) => Experiment::Convergence,
        None => sc.experiment,
    }
}

fn cmd_monte_carlo(a: &MonteCarloArgs) -> Result<(), CliError> {
    let (sc, raw) = scenario::load(&a.common.config)?;
    let cfg = &sc.config;
    let experiment = resolve_experiment(a, &sc);
    let draws = a.draws.or(sc.draws).unwrap_or(100);
    let seed = a.seed.or(sc.seed).unwrap_or(1);
    let nts =
        a.nt.clone()
            .or_else(|| sc.nt.clone())
            .unwrap_or_else(|| vec![4]);
    if nts.is_empty() || nts.contains(&0) {
        return Err(CliError::Usage("--nt needs positive antenna counts".into()));
    }
    if draws == 0 {
        eprintln!("warning: --draws 0, emitting an empty table");
    }
    let (table, settings) = match experiment {
        Experiment::Region => {
            let mode: RegionMode = a
                .mode
                .map(Into::into)
                .or(sc.mode)
                .unwrap_or(RegionMode::FiniteOpt);
            let points = a.alpha_points.or(sc.alpha_points).unwrap_or(11);
            let nt = nts[0];
            if nts.len() > 1 {
                return Err(CliError::Usage(
                    "the region experiment takes a single --nt".into(),
                ));
            }
            let users = match &sc.users {
                Some(u) => u.clone(),
                None => users_for(cfg, nt)?,
            };
            let rows = run_avg_rate_region(cfg, nt, &users, draws, points, mode, seed)?;
            let l = cfg.cells;
            let header: Vec<String> = std::iter::once("alpha_1".to_string())
                .chain((1..=l).map(|k| format!("mean_rate_{k}")))
                .collect();
            let mut table = Table::new(header);
            for r in &rows {
                let mut row = vec![Cell::Float(r.alpha[0])];
                row.extend(r.mean_rates.iter().map(|&x| Cell::Float(x)));
                table.push(row);
            }
            let settings = json!({
                "experiment": "region", "mode": mode.name(), "nt": nt, "users": users,
                "draws": draws, "alpha_points": points,
            });
            (vec![(None, table)], settings)
        }
        Experiment::Cdf => {
            let alpha = match &sc.alpha {
                Some(v) => RateProfile::new(v.clone())?,
                None => RateProfile::pair(0.5)?,
            };
            let tables = run_rate_cdf(cfg, &alpha, &nts, draws, seed)?;
            let out: Vec<(Option<usize>, Table)> = tables
                .iter()
                .map(|t| {
                    let mut table = Table::new(["rate", "prob"]);
                    for (r, p) in t.points() {
                        table.push(vec![Cell::Float(r), Cell::Float(p)]);
                    }
                    (Some(t.nt), table)
                })
                .collect();
            for t in &tables {
                eprintln!(
                    "Nt {}: median {:?} large-system rate {}",
                    t.nt,
                    t.median(),
                    t.ls_rate
                );
            }
            let settings = json!({
                "experiment": "cdf", "nt": nts, "alpha": alpha.alpha, "draws": draws,
                "tracked_user": { "cell": 0, "user": 0 },
            });
            (out, settings)
        }
        Experiment::Convergence => {
            let rows = run_convergence(cfg, &nts, draws, seed)?;
            let mut table = Table::new(["Nt", "mean_sinr_err", "mean_power_err"]);
            for r in &rows {
                table.push(vec![
                    Cell::Int(r.nt as u64),
                    Cell::Float(r.mean_sinr_err),
                    Cell::Float(r.mean_power_err),
                ]);
                eprintln!(
                    "Nt {}: altruistic noise error {:?}, zero-forcing leakage {:e}",
                    r.nt, r.mean_noise_err, r.max_zf_leakage
                );
            }
            let settings = json!({ "experiment": "convergence", "nt": nts, "draws": draws });
            (vec![(None, table)], settings)
        }
    };

    let mut manifest = Manifest::new("monte-carlo", cfg, Some(seed), settings, &raw);
    let several = table.len() > 1;
    for (nt, t) in &table {
        let path = match (&a.common.out, nt) {
            (Some(p), Some(n)) if several => Some(per_nt_path(p, *n)),
            (p, _) => p.clone(),
        };
        emit(path.as_deref(), &t.to_csv())?;
        manifest.outputs.extend(path);
    }
    let target = a
        .common
        .manifest
        .clone()
        .or_else(|| a.common.out.as_deref().map(output::sidecar));
    manifest.write(target.as_deref())
}

/// `dir/stem_nt<N>.ext` for one of several CDF tables.
fn per_nt_path(p: &Path, nt: usize) -> PathBuf {
    let stem = p
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match p.extension() {
        Some(ext) => format!("{stem}_nt{nt}.{}", ext.to_string_lossy()),
        None => format!("{stem}_nt{nt}"),
    };
    p.with_file_name(name)
}
