//! Command-line driver: distances, family dumps, CZ decompositions, weak
//! (1,1) campaigns and the counterexample table.
//!
//! Exit codes: 0 success, 2 configuration error, 3 resource limit (window
//! exhausted), 4 failed certificate.

mod config;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use flowcz::counterexample::{counterexample_table, write_counterexample_csv, CounterexampleParams};
use flowcz::cz::{
    converse_instance, cz_decompose, random_simple_function, weak11_campaign, write_campaign_csv, CampaignConfig,
    CatalogConfig,
};
use flowcz::family::DyadicFamily;
use flowcz::{GroupPoint, GroupSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use config::{ExperimentConfig, Overrides};
use output::{fmt_sig, write_atomic};

#[derive(Parser)]
#[command(name = "flowcz", version, about = "Flow cylinders, Calderón–Zygmund decompositions and maximal functions")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    #[value(name = "dN")]
    DN,
    #[value(name = "dG")]
    DG,
    #[value(name = "dZ")]
    DZ,
}

#[derive(Subcommand)]
enum Command {
    /// Distance between two points given as `n₁,…,n_d,a`.
    Distance {
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        y: String,
        #[arg(long, value_enum, default_value = "dG")]
        metric: Metric,
    },
    /// Build the dyadic family and write it as JSON lines.
    Partition {
        /// Generations above zero.
        #[arg(long)]
        up: Option<usize>,
        /// Generations below zero.
        #[arg(long)]
        down: Option<usize>,
    },
    /// CZ decomposition of a random simple function, or of the converse instance.
    Czdecomp {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 6)]
        terms: usize,
        /// Family generations the terms are drawn from, as `lo:hi`.
        #[arg(long, default_value = "0:5")]
        term_generations: String,
        /// Use `f = χ_S` for a son `S` of the chain cylinder at generation 0.
        #[arg(long)]
        converse: bool,
    },
    /// Weak type (1,1) campaign for the admissible maximal operator.
    Weak11 {
        #[arg(long, default_value_t = 10)]
        functions: usize,
        #[arg(long, default_value_t = 10)]
        alphas: usize,
        #[arg(long, default_value_t = 5)]
        terms: usize,
        #[arg(long, default_value = "0:6")]
        term_generations: String,
        #[arg(long)]
        points_per_decade: Option<usize>,
    },
    /// Log-space bookkeeping of the construction on the extended Heisenberg group.
    Counterexample {
        #[arg(long, default_value_t = 4)]
        ell_max: u32,
        #[arg(long, default_value_t = std::f64::consts::E * std::f64::consts::E)]
        r0: f64,
        /// Comma-separated multipliers `K`.
        #[arg(long, default_value = "1")]
        k: String,
        /// Cube constants; measured from a net on ℍ¹ when omitted.
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        c1: Option<f64>,
    },
}

/// An error carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn certificate(message: impl Into<String>) -> Self {
        Failure { code: 4, message: message.into() }
    }
}

impl From<flowcz::Error> for Failure {
    fn from(e: flowcz::Error) -> Self {
        use flowcz::Error::*;
        let code = match e {
            WindowExhausted(_) | OutsideWindow | Uncovered => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 3, message: format!("I/O error: {e}") }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("flowcz: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let cfg = ExperimentConfig::resolve(&cli.overrides).map_err(Failure::config)?;
    match cli.command {
        Command::Distance { x, y, metric } => distance(&cfg, &x, &y, metric),
        Command::Partition { up, down } => partition(&cfg, up, down),
        Command::Czdecomp {
            alpha,
            terms,
            term_generations,
            converse,
        } => czdecomp(&cfg, alpha, terms, &term_generations, converse),
        Command::Weak11 {
            functions,
            alphas,
            terms,
            term_generations,
            points_per_decade,
        } => weak11(&cfg, functions, alphas, terms, &term_generations, points_per_decade),
        Command::Counterexample { ell_max, r0, k, c, c1 } => counterexample(&cfg, ell_max, r0, &k, c, c1),
    }
}

fn parse_point(spec: GroupSpec, s: &str) -> Result<GroupPoint, Failure> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::config(format!("malformed point {s:?}: {e}")))?;
    let d = spec.base_dim();
    if vals.len() != d + 1 {
        return Err(Failure::config(format!(
            "malformed point {s:?}: expected {} coordinates ({d} for N and a), got {}",
            d + 1,
            vals.len()
        )));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Failure::config(format!("malformed point {s:?}: coordinates must be finite")));
    }
    Ok(GroupPoint::new(flowcz::BasePoint::new(&vals[..d]), vals[d])?)
}

fn distance(cfg: &ExperimentConfig, x: &str, y: &str, metric: Metric) -> Outcome {
    let spec = cfg.group;
    let z = cfg.field()?;
    let (x, y) = (parse_point(spec, x)?, parse_point(spec, y)?);
    let d = match metric {
        Metric::DN => spec.dist_n(&x.n, &y.n),
        Metric::DG => spec.dist_g(&x, &y),
        Metric::DZ => spec.dist_z(&x, &y, &z),
    };
    println!("{}", fmt_sig(d));
    Ok(())
}

fn parse_range(s: &str) -> Result<(i32, i32), Failure> {
    let bad = || Failure::config(format!("malformed generation range {s:?}, expected lo:hi"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let (a, b) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

fn build_family(cfg: &ExperimentConfig, up: Option<usize>, down: Option<usize>) -> Result<DyadicFamily, Failure> {
    let space = cfg.space()?;
    let mut fc = cfg.family.clone();
    if let Some(u) = up {
        fc.up = u;
    }
    if let Some(d) = down {
        fc.down = d;
    }
    Ok(DyadicFamily::build(space, fc)?)
}

fn constants(cfg: &ExperimentConfig, fam: &DyadicFamily) -> Result<serde_json::Value, Failure> {
    let fs = &fam.space;
    let d = cfg.doubling(fs)?;
    Ok(json!({
        "delta": fs.delta(),
        "c": fs.cubes.params().c,
        "C1": fs.c1(),
        "C2": fs.c2(),
        "C_star": fs.c_star(),
        "doubling_ratio": fs.c4_ratio(),
        "D": d,
        "C4": fs.c4(d),
    }))
}

fn partition(cfg: &ExperimentConfig, up: Option<usize>, down: Option<usize>) -> Outcome {
    let fam = build_family(cfg, up, down)?;
    let out = cfg.out_or("partition.jsonl");
    let mut buf = Vec::new();
    fam.dump_jsonl(&mut buf)?;
    write_atomic(&out, &buf)?;

    let (top, bottom) = fam.generation_range();
    let c1 = fam.space.c1();
    let mut generations = Vec::new();
    for g in top..=bottom {
        let ids = fam.generation(g)?;
        generations.push(json!({
            "generation": g,
            "count": ids.len(),
            "complete": ids.iter().filter(|&&i| fam.is_complete(i)).count(),
        }));
    }
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    let mut violations = 0;
    for node in fam.nodes() {
        if node.full_children as f64 > c1 {
            violations += 1;
        }
        if let Some(p) = node.parent {
            let ratio = fam.node(p).mu / node.mu;
            if ratio > c1 * (1.0 + 1e-12) {
                violations += 1;
            }
            *histogram.entry(fmt_sig(ratio)).or_default() += 1;
        }
    }
    let summary = json!({
        "config": cfg,
        "family": fam.header.config,
        "constants": constants(cfg, &fam)?,
        "ascent_steps": fam.header.steps,
        "nodes": fam.nodes().len(),
        "generations": generations,
        "parent_measure_ratio_histogram": histogram,
        "violations": violations,
        "dump": out,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    if violations > 0 {
        return Err(Failure::certificate(format!("{violations} children-count or measure-ratio violations")));
    }
    Ok(())
}

fn czdecomp(cfg: &ExperimentConfig, alpha: Option<f64>, terms: usize, gens: &str, converse: bool) -> Outcome {
    let fam = build_family(cfg, None, None)?;
    let consts = constants(cfg, &fam)?;
    let d = consts["D"].as_f64().expect("doubling constant");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (f, alpha, expect_single) = if converse {
        let x = fam.space.center_point(&fam.header.chain[0])?;
        let p0 = fam.locate(&x, 0)?;
        let (f, a) = converse_instance(&fam, p0)?;
        (f, alpha.unwrap_or(a), alpha.is_none().then_some(p0))
    } else {
        let f = random_simple_function(&fam, terms, parse_range(gens)?, &mut rng)?;
        let a = alpha.unwrap_or_else(|| f.sup_abs(&fam) / 2.0);
        (f, a, None)
    };
    if !(alpha > 0.0) {
        return Err(Failure::config(format!("α must be positive, got {alpha}")));
    }
    let rep = cz_decompose(&fam, &f, alpha, d)?;
    let single = expect_single.map(|p0| rep.stopping.len() == 1 && rep.stopping[0].node == p0);
    let report = json!({
        "config": cfg,
        "constants": consts,
        "function": f,
        "alpha": alpha,
        "stopping": rep.stopping,
        "bounds": rep.bounds,
        "certificates": rep.certificates,
        "converse_single_stop": single,
    });
    let out = cfg.out_or("czdecomp.json");
    write_atomic(&out, serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
    println!(
        "{} stopping cylinders at α = {}; certificates {}",
        rep.stopping.len(),
        fmt_sig(alpha),
        if rep.certificates.all() { "hold" } else { "FAIL" }
    );
    if !rep.certificates.all() || single == Some(false) {
        return Err(Failure::certificate("a decomposition certificate failed"));
    }
    Ok(())
}

fn weak11(
    cfg: &ExperimentConfig,
    functions: usize,
    alphas: usize,
    terms: usize,
    gens: &str,
    ppd: Option<usize>,
) -> Outcome {
    let fam = build_family(cfg, None, None)?;
    let mut catalog = CatalogConfig::for_family(&fam);
    if let Some(p) = ppd {
        if p == 0 {
            return Err(Failure::config("points per decade must be positive"));
        }
        catalog.points_per_decade = p;
    }
    let camp = CampaignConfig {
        functions,
        alphas_per_function: alphas,
        terms,
        term_generations: parse_range(gens)?,
        samples: cfg.samples,
        catalog,
        seed: cfg.seed,
    };
    let rows = weak11_campaign(&fam, &camp)?;
    let out = cfg.out_or("weak11.csv");
    let mut buf = Vec::new();
    write_campaign_csv(&rows, &mut buf)?;
    write_atomic(&out, &buf)?;
    let violations = rows.iter().filter(|r| !r.holds()).count();
    let meta = json!({
        "config": cfg,
        "constants": constants(cfg, &fam)?,
        "campaign": camp,
        "rows": rows.len(),
        "violations": violations,
    });
    write_atomic(&meta_path(&out), serde_json::to_string_pretty(&meta).expect("meta serializes").as_bytes())?;
    println!("{} rows, {violations} violations of µ(M f > α) ≤ C₂‖f‖₁/α", rows.len());
    if violations > 0 {
        return Err(Failure::certificate(format!("{violations} weak-type violations")));
    }
    Ok(())
}

fn counterexample(cfg: &ExperimentConfig, ell_max: u32, r0: f64, ks: &str, c: Option<f64>, c1: Option<f64>) -> Outcome {
    let ks: Vec<f64> = ks
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::config(format!("malformed K list: {e}")))?;
    let (c, c1, source) = match (c, c1) {
        (Some(c), Some(c1)) => (c, c1, "given"),
        (None, None) => {
            let net = cfg.heisenberg_net()?;
            use flowcz::cubes::CubeSystem;
            (net.params().c, net.params().c1, "net")
        }
        _ => return Err(Failure::config("give both --c and --c1 or neither")),
    };
    let adm = cfg.admissibility();
    let out = cfg.out_or("counterexample.csv");
    let mut tables = Vec::new();
    let mut failures = Vec::new();
    for (i, &k) in ks.iter().enumerate() {
        let params = CounterexampleParams { r0, c, c1, lambda: adm.lambda, gamma: adm.gamma, k };
        let rows = counterexample_table(&params, ell_max)?;
        if !rows.iter().all(|r| r.chain_holds()) {
            failures.push(format!("K = {k}: a diameter chain link fails"));
        }
        if !rows.windows(2).all(|w| w[1].log_ratio_lb > w[0].log_ratio_lb) {
            failures.push(format!("K = {k}: the log-ratio column is not increasing"));
        }
        let path = if i == 0 { out.clone() } else { suffixed(&out, &format!("K{k}")) };
        let mut buf = Vec::new();
        write_counterexample_csv(&rows, &mut buf)?;
        write_atomic(&path, &buf)?;
        tables.push(json!({ "K": k, "path": path, "rows": rows }));
    }
    let meta = json!({
        "config": cfg,
        "constants": { "r0": r0, "c": c, "C1": c1, "cube_constants": source, "lambda": adm.lambda, "gamma": adm.gamma },
        "tables": tables,
        "failures": failures,
    });
    write_atomic(&meta_path(&out), serde_json::to_string_pretty(&meta).expect("meta serializes").as_bytes())?;
    println!("wrote {} table(s) for ℓ = 0..{ell_max}", ks.len());
    if !failures.is_empty() {
        return Err(Failure::certificate(failures.join("; ")));
    }
    Ok(())
}

fn meta_path(out: &std::path::Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn suffixed(out: &std::path::Path, tag: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    out.with_file_name(format!("{stem}-{tag}{ext}"))
}
