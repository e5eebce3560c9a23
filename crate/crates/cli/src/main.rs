use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context as _};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gridflex::grid::{BusInjection, DerKind, GridError, InjectionProfile, Network};
use gridflex::powerflow::solve_pf;
use gridflex::scenario::{run_case, CaseKind, Evaluator, LoadingScenario, ScenarioConfig, ScenarioError};
use gridflex::sensitivity::{analytical_sensitivities, estimate_sensitivities, excitation_window, ExcitationSpec};

/// Two-stage LV/MV flexibility planning on radial distribution grids.
#[derive(Debug, Parser)]
#[command(name = "gridflex", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a network file and print its size and radial structure.
    Validate {
        #[arg(long)]
        network: PathBuf,
    },
    /// Solve the merged-grid power flow at one timestep.
    Pf(StepArgs),
    /// Analytical and estimated sensitivities of one LV grid.
    Sens {
        #[command(flatten)]
        step: StepArgs,
        /// LV grid id.
        #[arg(long)]
        grid: String,
    },
    /// P-Q flexibility polygon of one LV grid.
    Flex {
        #[command(flatten)]
        step: StepArgs,
        /// LV grid id.
        #[arg(long)]
        grid: String,
        /// Number of optimisation directions.
        #[arg(long)]
        directions: Option<usize>,
    },
    /// Decide one timestep with the MV OPF.
    Opf(StepArgs),
    /// Evaluate a case over the configured horizon.
    Run {
        #[command(flatten)]
        inputs: Inputs,
        /// Worker threads across timesteps; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Tabulate the KPIs of every report in a directory.
    Report {
        /// Directory holding `report_*.json` files.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Inputs {
    /// Network JSON; overrides the config.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Profile CSV; overrides the config.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Scenario TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Information available to the MV operator; overrides the config.
    #[arg(long, value_enum)]
    case: Option<CaseArg>,
    /// Loading scenario; overrides the config.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed of the measurement noise and probing; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct StepArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Timestep index into the profiles.
    #[arg(long, default_value_t = 0)]
    timestep: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CaseArg {
    Base,
    Monitoring,
    Control,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScenarioArg {
    Current,
    Future,
}

/// Input problems exit with 2, failures of the computation itself with 1.
enum Failure {
    Input(anyhow::Error),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<GridError> for Failure {
    fn from(e: GridError) -> Self {
        Failure::Input(e.into())
    }
}

fn classify(e: ScenarioError) -> Failure {
    match e {
        ScenarioError::Config(_) | ScenarioError::Grid(_) | ScenarioError::ShortProfiles { .. } => Failure::Input(e.into()),
        other => Failure::Domain(other.into()),
    }
}

fn domain(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Domain(e.into())
}

struct Loaded {
    config: ScenarioConfig,
    network: Network,
    profiles: InjectionProfile,
}

impl Inputs {
    fn load(&self) -> Result<Loaded, Failure> {
        let mut config = match &self.config {
            Some(path) => ScenarioConfig::load(path).map_err(classify)?,
            None => ScenarioConfig::default(),
        };
        if let Some(c) = self.case {
            config.case = match c {
                CaseArg::Base => CaseKind::Base,
                CaseArg::Monitoring => CaseKind::Monitoring,
                CaseArg::Control => CaseKind::Control,
            };
        }
        if let Some(s) = self.scenario {
            config.scenario = match s {
                ScenarioArg::Current => LoadingScenario::Current,
                ScenarioArg::Future => LoadingScenario::Future,
            };
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        let network_path = self
            .network
            .clone()
            .or_else(|| config.network.clone())
            .ok_or_else(|| anyhow!("no network given; pass --network or set it in the config"))?;
        let network = Network::load(&network_path)?;
        let profiles = match self.profiles.clone().or_else(|| config.profiles.clone()) {
            Some(path) => InjectionProfile::load(path)?,
            None => {
                // Single step with every PV at its rating and no load.
                config.horizon_hours = config.step_minutes / 60.0;
                rated_pv_profile(&network)?
            }
        };
        config.validate().map_err(classify)?;
        Ok(Loaded {
            config,
            network,
            profiles,
        })
    }
}

fn rated_pv_profile(network: &Network) -> Result<InjectionProfile, GridError> {
    let bus_ids = network.merged().bus_ids();
    let row = bus_ids
        .iter()
        .map(|b| BusInjection {
            p_gen_kw: network
                .ders()
                .filter(|d| d.kind == DerKind::Pv && &d.bus == b)
                .map(|d| d.p_rating_kw)
                .sum(),
            ..BusInjection::default()
        })
        .collect();
    let t0 = chrono::DateTime::parse_from_rfc3339("2000-01-01T12:00:00+00:00").expect("constant timestamp");
    InjectionProfile::new(vec![t0], bus_ids, vec![row])
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serialises");
    s.push('\n');
    s
}

fn check_timestep(l: &Loaded, t: usize) -> Result<(), Failure> {
    if t >= l.config.steps() {
        return Err(Failure::Input(anyhow!("timestep {t} outside the horizon of {} steps", l.config.steps())));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { network } => {
            let net = Network::load(&network)?;
            let report = net.validate_radial();
            println!(
                "network {}: {} buses, {} branches, {} LV grids, {} DERs ({} kWp PV)",
                network.display(),
                net.n_buses(),
                net.n_branches(),
                net.lv_grids.len(),
                net.ders().count(),
                net.installed_pv_kwp()
            );
            let deepest = report.depth.values().max().copied().unwrap_or(0);
            println!("radial: slack {}, depth {deepest}", net.slack_bus());
        }
        Command::Pf(step) => {
            let l = step.inputs.load()?;
            check_timestep(&l, step.timestep)?;
            let eval = Evaluator::new(&l.network, &l.profiles, &l.config).map_err(classify)?;
            let grid = l.network.merged();
            let sol = solve_pf(grid, &eval.true_injections(step.timestep), l.config.measured_slack_v).map_err(domain)?;
            let s_base = l.network.s_base_kva;
            let doc = serde_json::json!({
                "timestamp": l.profiles.timestamps[step.timestep].to_rfc3339(),
                "buses": grid.buses().iter().zip(sol.v_mag()).map(|(b, v)| serde_json::json!({"id": b.id, "v_pu": v})).collect::<Vec<_>>(),
                "branches": grid.branches().iter().enumerate().map(|(e, b)| serde_json::json!({
                    "id": b.id, "i_pu": sol.current[e].norm(), "p_kw": sol.p_send[e] * s_base, "q_kvar": sol.q_send[e] * s_base,
                })).collect::<Vec<_>>(),
                "losses_kw": sol.losses_pu() * s_base,
                "slack": {"p_kw": sol.slack_injection.re * s_base, "q_kvar": sol.slack_injection.im * s_base},
                "iterations": sol.iterations,
            });
            let path = step.inputs.out.join(format!("pf_t{}.json", step.timestep));
            write(&path, &pretty(&doc))?;
            println!("pf converged in {} iterations, losses {:.3} kW -> {}", sol.iterations, sol.losses_pu() * s_base, path.display());
        }
        Command::Sens { step, grid } => {
            let l = step.inputs.load()?;
            check_timestep(&l, step.timestep)?;
            let lv = l.network.lv_grid(&grid).ok_or_else(|| anyhow!("unknown LV grid '{grid}'"))?;
            let eval = Evaluator::new(&l.network, &l.profiles, &l.config).map_err(classify)?;
            let (operating, root_v) = eval.lv_operating_point(step.timestep, &grid).map_err(classify)?;
            let exact = analytical_sensitivities(&lv.grid, &operating, root_v).map_err(domain)?;
            let spec = ExcitationSpec {
                samples: l.config.window_samples,
                amplitude: l.config.excitation_pu,
                noise_sigma: l.config.noise_sigma,
                seed: l.config.seed,
            };
            let window = excitation_window(&lv.grid, &operating, root_v, spec).map_err(domain)?;
            let est = estimate_sensitivities(&lv.grid, &window).map_err(domain)?;
            for (name, m) in [("analytical", &exact), ("estimated", &est.matrix)] {
                let mut buf = Vec::new();
                m.write_csv(&mut buf).context("formatting sensitivities")?;
                write(&step.inputs.out.join(format!("sens_{grid}_{name}.csv")), &String::from_utf8(buf).expect("CSV is UTF-8"))?;
            }
            println!(
                "{grid}: validity radius {:.4} pu, estimate condition {:.3e}, relative Frobenius error {:.4}",
                exact.validity_radius,
                est.condition_number,
                est.matrix.relative_frobenius_error(&exact)
            );
        }
        Command::Flex { step, grid, directions } => {
            let mut l = step.inputs.load()?;
            check_timestep(&l, step.timestep)?;
            if let Some(n) = directions {
                l.config.flex_directions = n;
                l.config.validate().map_err(classify)?;
            }
            let eval = Evaluator::new(&l.network, &l.profiles, &l.config).map_err(classify)?;
            let area = eval.flex_area_at(step.timestep, &grid).map_err(classify)?;
            let path = step.inputs.out.join(format!("flex_{grid}.json"));
            write(&path, &pretty(&area.to_json()))?;
            println!("{grid}: {} vertices, area {:.3} kW*kvar -> {}", area.vertices.len(), area.area(), path.display());
        }
        Command::Opf(step) => {
            let l = step.inputs.load()?;
            check_timestep(&l, step.timestep)?;
            let eval = Evaluator::new(&l.network, &l.profiles, &l.config).map_err(classify)?;
            let outcome = eval.step(step.timestep, 1.0).map_err(classify)?;
            let path = step.inputs.out.join(format!("opf_{}_t{}.json", l.config.case.name(), step.timestep));
            write(&path, &pretty(&outcome.opf.to_json()))?;
            println!(
                "slack voltage {:.5} pu, objective {:.6}, scored violation {:.6} CHF -> {}",
                outcome.opf.slack_voltage(),
                outcome.opf.objective.total,
                outcome.record.violation_chf,
                path.display()
            );
        }
        Command::Run { inputs, jobs } => {
            let l = inputs.load()?;
            let report = run_case(&l.config, &l.network, &l.profiles, jobs).map_err(classify)?;
            let stem = format!("report_{}_{}", l.config.case.name(), l.config.scenario.name());
            let json = inputs.out.join(format!("{stem}.json"));
            let mut text = report.to_json_string();
            text.push('\n');
            write(&json, &text)?;
            let mut buf = Vec::new();
            report.write_csv(&mut buf).context("formatting report CSV")?;
            write(&inputs.out.join(format!("{stem}.csv")), &String::from_utf8(buf).expect("CSV is UTF-8"))?;
            let t = &report.totals;
            println!(
                "{} / {}: losses {:.3} kWh, violations {:.6} CHF -> {}",
                l.config.case.name(),
                l.config.scenario.name(),
                t.losses_kwh,
                t.violation_chf,
                json.display()
            );
        }
        Command::Report { out } => {
            let mut rows = Vec::new();
            let mut paths: Vec<PathBuf> = fs::read_dir(&out)
                .with_context(|| format!("reading {}", out.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension().is_some_and(|x| x == "json")
                        && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("report_"))
                })
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Failure::Input(anyhow!("no report_*.json files in {}", out.display())));
            }
            for p in &paths {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let doc: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                let totals = &doc["totals"];
                let field = |v: &serde_json::Value| match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                rows.push(format!(
                    "{},{},{},{},{},{}",
                    field(&doc["case"]),
                    field(&doc["scenario"]),
                    field(&totals["losses_kwh"]),
                    field(&totals["violation_chf"]),
                    field(&totals["flex_mv_lv_kw"]),
                    field(&totals["hosting_capacity_kwp"]),
                ));
            }
            let mut table = String::from("case,scenario,losses_kwh,violation_chf,flex_mv_lv_kw,hosting_capacity_kwp\n");
            for r in &rows {
                table.push_str(r);
                table.push('\n');
            }
            write(&out.join("kpis.csv"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
