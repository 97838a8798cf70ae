//! `conewave`: experiment runner for the cone-wave toolkit.
//!
//! Exit codes: 0 on success, 1 when an acceptance criterion fails, 2 for
//! configuration or input errors.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use conewave_core::bilinear::{
    cone_energy_check, doublecone_l1_check, empirical_a_ratio, k_scaling_experiment,
    low_dispersion_l2_check,
};
use conewave_core::domain::TorusDomain;
use conewave_core::experiment::{random_wave_family, ResultRow};
use conewave_core::geometry::{Cube, Disk};
use conewave_core::localization::{cutoff_report, project_disk, LocalizeParams};
use conewave_core::nullform::{check_exponent_conditions, toy_scan, ExponentTuple};
use conewave_core::packets::{tube_decompose, PacketParams};
use conewave_core::wave::Wave;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "conewave", version, about = "cone-wave toolkit experiment runner")]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master random seed; overrides the config seed when given.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Quadrature grid points per axis, where a command takes one.
    #[arg(long, global = true)]
    quad_res: Option<usize>,
    /// CSV output path.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// JSON output path.
    #[arg(long, global = true)]
    json: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project a wave onto a spacetime disk and report localization ratios.
    Localize(LocalizeArgs),
    /// Decompose a wave into tube packets over a cube.
    Packets(PacketsArgs),
    /// Run a bilinear-norm experiment from a TOML config.
    Bilinear(BilinearArgs),
    /// Exponent admissibility checks and the multiplier toy scan.
    Nullform(NullformArgs),
    /// Run the full acceptance suite.
    Accept,
}

#[derive(Args)]
struct LocalizeArgs {
    /// Input wave JSON.
    #[arg(long)]
    wave: PathBuf,
    /// Disk as "x=<c1>:<c2>,t=<t>,r=<radius>".
    #[arg(long)]
    disk: String,
    /// Output path for the projected wave JSON.
    #[arg(long)]
    out: PathBuf,
    /// Output path for the localization report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PacketsArgs {
    /// Input wave JSON.
    #[arg(long)]
    wave: PathBuf,
    /// Cube as "x=<c1>:<c2>,t=<t>,side=<side>".
    #[arg(long)]
    cube: String,
    /// Direction separation parameter, in (0, 1/4].
    #[arg(long)]
    c: f64,
    /// Output directory: one JSON per energy-significant tube plus index.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BilinearArgs {
    /// One of: mock, bluecone, doublecone, kscaling, aratio.  Overrides the
    /// `experiment` key of the config when given.
    #[arg(long)]
    experiment: Option<String>,
}

#[derive(Args)]
struct NullformArgs {
    /// Check an exponent tuple (JSON file) against the admissibility
    /// conditions and print the per-condition report.
    #[arg(long)]
    check_exponents: Option<PathBuf>,
    /// Run the rescaling/band toy scan and write a ratio table.
    #[arg(long)]
    toy_scan: bool,
    /// Inclusive rescaling range for the toy scan, as "a..b".
    #[arg(long, default_value = "0..2")]
    l: String,
    /// Inclusive band range for the toy scan, as "a..b".
    #[arg(long, default_value = "0..2")]
    k: String,
}

/// Any failure before the experiment proper runs: bad flags, bad config,
/// unreadable input.  Mapped to exit code 2.
struct ConfigError(String);

impl<E: std::fmt::Display> From<E> for ConfigError {
    fn from(e: E) -> ConfigError {
        ConfigError(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("config error: --threads must be positive");
            return ExitCode::from(2);
        }
        // Results are deterministic regardless; this only caps parallelism.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let outcome = match &cli.command {
        Command::Localize(args) => cmd_localize(&cli, args),
        Command::Packets(args) => cmd_packets(&cli, args),
        Command::Bilinear(args) => cmd_bilinear(&cli, args),
        Command::Nullform(args) => cmd_nullform(&cli, args),
        Command::Accept => return cmd_accept(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(ConfigError(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Parse "x=<c1>:<c2>,t=<t>,<last_key>=<v>" region strings.
fn parse_region(text: &str, last_key: &str) -> Result<(Vec<f64>, f64, f64), ConfigError> {
    let mut x = None;
    let mut t = None;
    let mut last = None;
    for part in text.split(',') {
        let (key, val) = part
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("expected key=value, got `{part}`")))?;
        match key.trim() {
            "x" => {
                let coords: Result<Vec<f64>, _> =
                    val.split(':').map(|c| c.trim().parse::<f64>()).collect();
                x = Some(coords.map_err(|e| ConfigError(format!("bad x coordinate: {e}")))?);
            }
            "t" => t = Some(val.trim().parse::<f64>()?),
            k if k == last_key => last = Some(val.trim().parse::<f64>()?),
            other => return Err(ConfigError(format!("unknown region key `{other}`"))),
        }
    }
    Ok((
        x.ok_or(ConfigError("missing x=".into()))?,
        t.ok_or(ConfigError("missing t=".into()))?,
        last.ok_or_else(|| ConfigError(format!("missing {last_key}=")))?,
    ))
}

fn read_wave(path: &Path) -> Result<Wave, ConfigError> {
    Ok(Wave::from_json(&fs::read_to_string(path)?)?)
}

fn cmd_localize(cli: &Cli, args: &LocalizeArgs) -> Result<(), ConfigError> {
    let wave = read_wave(&args.wave)?;
    let (x, t, r) = parse_region(&args.disk, "r")?;
    let disk = Disk::new(x, t, r)?;
    let mut params = LocalizeParams::default();
    if let Some(g) = cli.quad_res {
        params.min_grid = g;
    }
    let projection = project_disk(&wave, &disk, &params)?;
    let report = cutoff_report(&wave, &disk, &params)?;
    fs::write(&args.out, projection.projected.to_json())?;
    let report_json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = args.report.as_ref().or(cli.json.as_ref()) {
        fs::write(path, &report_json)?;
    } else {
        println!("{report_json}");
    }
    Ok(())
}

fn cmd_packets(cli: &Cli, args: &PacketsArgs) -> Result<(), ConfigError> {
    let wave = read_wave(&args.wave)?;
    let (x, t, side) = parse_region(&args.cube, "side")?;
    let cube = Cube::new(x, t, side)?;
    let mut params = PacketParams::default();
    if let Some(g) = cli.quad_res {
        params.quad_grid = g;
    }
    let decomp = tube_decompose(&wave, &cube, args.c, &params)?;
    fs::create_dir_all(&args.out)?;
    let total = wave.energy();
    let floor = 1e-9 * total;
    let mut index_rows = Vec::new();
    for (i, packet) in decomp.packets.iter().enumerate() {
        let e = packet.wave.energy();
        let mut entry = serde_json::json!({
            "tube": i,
            "dir_index": packet.dir_index,
            "base_x": packet.tube.base,
            "energy": e,
        });
        if e >= floor {
            let name = format!("tube_{i:05}.json");
            fs::write(args.out.join(&name), packet.wave.to_json())?;
            entry["file"] = serde_json::json!(name);
        }
        index_rows.push(entry);
    }
    let index = serde_json::json!({
        "c": decomp.c,
        "r": decomp.r,
        "big_r": decomp.big_r,
        "source_energy": total,
        "reconstruction_residual": decomp.reconstruction_residual(),
        "tubes": index_rows,
    });
    fs::write(args.out.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    println!(
        "{} tubes, reconstruction residual {:.3e}",
        decomp.packets.len(),
        decomp.reconstruction_residual()
    );
    Ok(())
}

fn write_csv(path: Option<&PathBuf>, rows: &[ResultRow]) -> Result<(), ConfigError> {
    let mut text = String::from(ResultRow::csv_header());
    text.push('\n');
    for row in rows {
        text.push_str(&row.csv_line());
        text.push('\n');
    }
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_bilinear(cli: &Cli, args: &BilinearArgs) -> Result<(), ConfigError> {
    let path = cli
        .config
        .as_ref()
        .ok_or(ConfigError("bilinear requires --config".into()))?;
    let mut cfg = ExperimentConfig::parse(&fs::read_to_string(path)?)?;
    if let Some(name) = &args.experiment {
        cfg.experiment = name.clone();
    }
    // Re-validate after an --experiment override swapped the section.
    cfg.validate()?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let dom = cfg.domain.clone().unwrap_or_default();
    let domain = TorusDomain::new(dom.n, dom.period, dom.grid_points)?;
    let name = cfg.experiment.clone();
    let mut rows = Vec::new();
    let row = |params: Vec<(String, String)>, value: f64, err: f64| ResultRow {
        experiment: name.clone(),
        params,
        value,
        err_est: err,
        seed,
    };
    match cfg.experiment.as_str() {
        "mock" => {
            let s = cfg.mock.as_ref().unwrap();
            let g = cli.quad_res.unwrap_or(s.g);
            let (fit, ratios) = low_dispersion_l2_check(&domain, &s.r_list, s.trials, seed, g, s.slices)?;
            for (i, &r) in s.r_list.iter().enumerate() {
                rows.push(row(
                    vec![("r".into(), format!("{r}"))],
                    fit.log_y[i].exp(),
                    fit.residual,
                ));
                rows.push(row(
                    vec![("r".into(), format!("{r}")), ("quantity".into(), "local_ratio".into())],
                    ratios[i],
                    0.0,
                ));
            }
            rows.push(row(vec![("quantity".into(), "slope".into())], fit.slope, fit.residual));
        }
        "bluecone" => {
            let s = cfg.bluecone.as_ref().unwrap();
            let family = random_wave_family(&s.family, seed)?;
            let vertex = vec![dom.period / 2.0; dom.n];
            for (i, w) in family.iter().enumerate() {
                let fit = cone_energy_check(w, &vertex, 0.0, &s.big_r_list, s.resolution)?;
                rows.push(row(
                    vec![("wave".into(), format!("{i}")), ("quantity".into(), "slope".into())],
                    fit.slope,
                    fit.residual,
                ));
            }
        }
        "doublecone" => {
            let s = cfg.doublecone.as_ref().unwrap();
            let family = random_wave_family(&s.family, seed)?;
            let vertex = vec![dom.period / 2.0; dom.n];
            let q = Cube::new(vertex.clone(), 0.0, s.cube_side)?;
            for pair in family.chunks_exact(2) {
                let phi = &pair[0];
                let psi = pair[1].time_reverse();
                for &r in &s.r_list {
                    let (rep, ratio) =
                        doublecone_l1_check(phi, &psi, &vertex, 0.0, r, &q, s.resolution)?;
                    rows.push(row(vec![("r".into(), format!("{r}"))], rep.value, rep.err_est));
                    rows.push(row(
                        vec![("r".into(), format!("{r}")), ("quantity".into(), "ratio".into())],
                        ratio,
                        0.0,
                    ));
                }
            }
        }
        "kscaling" => {
            let s = cfg.kscaling.as_ref().unwrap();
            let g = cli.quad_res.unwrap_or(s.g);
            let fit = k_scaling_experiment(&domain, &s.k_list, s.p, g, s.slices)?;
            for (i, &k) in s.k_list.iter().enumerate() {
                rows.push(row(
                    vec![("k".into(), format!("{k}")), ("p".into(), format!("{}", s.p))],
                    fit.log_y[i].exp(),
                    fit.residual,
                ));
            }
            rows.push(row(vec![("quantity".into(), "slope".into())], fit.slope, fit.residual));
        }
        "aratio" => {
            let s = cfg.aratio.as_ref().unwrap();
            let g = cli.quad_res.unwrap_or(s.g);
            let family = random_wave_family(&s.family, seed)?;
            let pairs: Vec<(Wave, Wave)> = family
                .chunks_exact(2)
                .take(s.pairs)
                .map(|pair| (pair[0].normalized(), pair[1].time_reverse().normalized()))
                .collect();
            if pairs.is_empty() {
                return Err(ConfigError("aratio family too small to form a pair".into()));
            }
            for &big_r in &s.big_r_list {
                let q = Cube::new(vec![dom.period / 2.0; dom.n], 0.0, big_r)?;
                let v = empirical_a_ratio(&pairs, &q, s.p, g, s.slices)?;
                rows.push(row(
                    vec![("R".into(), format!("{big_r}")), ("p".into(), format!("{}", s.p))],
                    v,
                    0.0,
                ));
            }
        }
        _ => unreachable!("validated"),
    }
    write_csv(cli.csv.as_ref(), &rows)
}

fn parse_range(text: &str) -> Result<Vec<i64>, ConfigError> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| ConfigError(format!("expected a..b range, got `{text}`")))?;
    let a: i64 = a.trim().parse()?;
    let b: i64 = b.trim().parse()?;
    if b < a {
        return Err(ConfigError(format!("empty range `{text}`")));
    }
    Ok((a..=b).collect())
}

fn cmd_nullform(cli: &Cli, args: &NullformArgs) -> Result<(), ConfigError> {
    if let Some(path) = &args.check_exponents {
        let tuple: ExponentTuple = serde_json::from_str(&fs::read_to_string(path)?)?;
        let report = check_exponent_conditions(&tuple, true);
        let text = serde_json::to_string_pretty(&report)?;
        if let Some(out) = &cli.json {
            fs::write(out, &text)?;
        } else {
            println!("{text}");
        }
        return Ok(());
    }
    if args.toy_scan {
        let l_list = parse_range(&args.l)?;
        let k_list: Vec<u32> = parse_range(&args.k)?
            .into_iter()
            .map(|k| u32::try_from(k).map_err(|_| ConfigError("k must be >= 0".into())))
            .collect::<Result<_, _>>()?;
        let l_list: Vec<u32> = l_list
            .into_iter()
            .map(|l| u32::try_from(l).map_err(|_| ConfigError("l must be >= 0".into())))
            .collect::<Result<_, _>>()?;
        let domain = TorusDomain::new(2, 32.0, 128)?;
        let g = cli.quad_res.unwrap_or(24);
        let scan = toy_scan(&domain, &l_list, &k_list, 0.5, 5.0 / 3.0, 0.1, g, 6)?;
        let seed = cli.seed.unwrap_or(0);
        let rows: Vec<ResultRow> = scan
            .iter()
            .map(|r| ResultRow {
                experiment: "toy_scan".into(),
                params: vec![
                    ("l".into(), format!("{}", r.l)),
                    ("k".into(), format!("{}", r.k)),
                    ("normalizer".into(), format!("{:.6e}", r.normalizer)),
                ],
                value: r.ratio,
                err_est: 0.0,
                seed,
            })
            .collect();
        return write_csv(cli.csv.as_ref(), &rows);
    }
    Err(ConfigError(
        "nullform needs --check-exponents <tuple.json> or --toy-scan".into(),
    ))
}

fn cmd_accept() -> ExitCode {
    let results = conewave_core::acceptance::run_all();
    let mut all_ok = true;
    for c in &results {
        let tag = if c.passed { "pass" } else { "FAIL" };
        println!(
            "[{tag}] {:>2}. {:<32} {:>7.1}s  {}",
            c.index, c.name, c.seconds, c.detail
        );
        all_ok &= c.passed;
    }
    if all_ok {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::from(1)
    }
}
