use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

use serde_json::{json, Map, Value};
use smallball::discrepancy::{discrepancy_report, van_der_corput, PointSet};
use smallball::extremal::{sup_norm_branch_bound, sup_norm_exhaustive, DEFAULT_GRID_LIMIT};
use smallball::prob::run_lemma_suites;
use smallball::witness2d::greedy_witness_2d;
use smallball::witness3d::{calibrate_tau, conditional_witness_search, identity_sweep, orlicz_scan, BlockDecomposition, SearchParams};
use smallball::{BitIndex, Dyadic, ExplicitSigns, GridPoint, HaarField, SignOracle};

use crate::output::{emit, Outcome, RunConfig};
use crate::{Command, Common, Method, DEFAULT_SEED, EXIT_GUARD, EXIT_INTERNAL, EXIT_NO_INPUT, EXIT_USAGE};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Guard(String),
    NoInput(String),
    Internal(String),
}

impl CliError {
    pub fn internal(e: impl std::fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Guard(_) => EXIT_GUARD,
            CliError::NoInput(_) => EXIT_NO_INPUT,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Guard(m) => write!(f, "refused: {m}"),
            CliError::NoInput(m) => write!(f, "{m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<smallball::Error> for CliError {
    fn from(e: smallball::Error) -> Self {
        use smallball::Error as E;
        match e {
            E::GuardExceeded { .. } => CliError::Guard(e.to_string()),
            E::InvalidParameter(_)
            | E::DimensionMismatch { .. }
            | E::ResolutionTooCoarse { .. }
            | E::LevelTooLarge { .. }
            | E::IndexOutOfRange { .. }
            | E::AmbiguousPoint(_)
            | E::MissingShape(_)
            | E::Parse { .. } => CliError::Usage(e.to_string()),
            E::Precondition(_) => CliError::Internal(e.to_string()),
        }
    }
}

type Res<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> Res<T> {
    Err(CliError::Usage(msg.into()))
}

/// Sign oracle from `--signs`; a sign file also supplies `n` and `d`.
struct Signs {
    oracle: SignOracle,
    label: String,
    file_shape: Option<(u32, usize)>,
}

fn parse_signs(arg: Option<&str>, seed: u64) -> Res<Signs> {
    let arg = arg.map(str::to_owned).unwrap_or_else(|| format!("seed:{seed}"));
    if arg == "all-plus" {
        return Ok(Signs { oracle: SignOracle::AllPlus, label: arg, file_shape: None });
    }
    if let Some(k) = arg.strip_prefix("seed:") {
        let k: u64 = k.parse().map_err(|_| CliError::Usage(format!("bad sign seed in {arg:?}")))?;
        return Ok(Signs { oracle: SignOracle::Seeded(k), label: arg, file_shape: None });
    }
    if let Some(path) = arg.strip_prefix("file:") {
        let file = File::open(path).map_err(|e| CliError::NoInput(format!("cannot read sign file {path}: {e}")))?;
        let table = ExplicitSigns::from_text(BufReader::new(file))
            .map_err(|e| CliError::NoInput(format!("cannot read sign file {path}: {e}")))?;
        let shape = (table.order(), table.dim());
        return Ok(Signs { oracle: SignOracle::Explicit(table), label: arg, file_shape: Some(shape) });
    }
    usage(format!("--signs must be all-plus, seed:K or file:PATH, got {arg:?}"))
}

struct Setup {
    seed: u64,
    signs: Signs,
    n: u32,
    d: usize,
}

fn setup(common: &Common, default_n: u32, default_d: usize) -> Res<Setup> {
    let seed = common.seed.unwrap_or(DEFAULT_SEED);
    let signs = parse_signs(common.signs.as_deref(), seed)?;
    let (file_n, file_d) = signs.file_shape.map_or((None, None), |(n, d)| (Some(n), Some(d)));
    let n = common.n.or(file_n).unwrap_or(default_n);
    let d = common.d.or(file_d).unwrap_or(default_d);
    Ok(Setup { seed, signs, n, d })
}

fn config(command: &str, s: &Setup) -> RunConfig {
    RunConfig {
        command: command.into(),
        n: Some(s.n),
        d: Some(s.d),
        seed: s.seed,
        signs: Some(s.signs.label.clone()),
        ..Default::default()
    }
}

fn parse_tau(tau: Option<&str>) -> Res<Option<f64>> {
    match tau {
        None => Ok(Some(0.1)),
        Some("auto") => Ok(None),
        Some(t) => match t.parse::<f64>() {
            Ok(v) if v > 0.0 && v < 1.0 => Ok(Some(v)),
            _ => usage(format!("--tau must be a number in (0,1) or auto, got {t:?}")),
        },
    }
}

pub fn run(command: &Command, common: &Common) -> Res<()> {
    let start = Instant::now();
    let (config, outcome) = match command {
        Command::Eval { point, resolution } => eval(common, point, *resolution)?,
        Command::Supnorm { method } => supnorm(common, *method)?,
        Command::Witness2d { x2 } => witness2d(common, x2.as_deref())?,
        Command::Witness3d { pilot } => witness3d(common, *pilot)?,
        Command::IdentityCheck { t } => identity_check(common, *t)?,
        Command::Lemmas => lemmas(common)?,
        Command::OrliczScan { ns, t, alpha } => orlicz(common, ns, *t, *alpha)?,
        Command::Discrepancy { vdc, points, random, bits } => discrepancy(common, *vdc, points.as_deref(), *random, *bits)?,
    };
    emit(common, &config, outcome, start.elapsed().as_millis())
}

fn eval(common: &Common, point: &str, resolution: Option<u32>) -> Res<(RunConfig, Outcome)> {
    let s = setup(common, 4, 2)?;
    let xs = point
        .split(',')
        .map(|c| c.parse::<Dyadic>())
        .collect::<Result<Vec<_>, _>>()?;
    if xs.len() != s.d {
        return usage(format!("--point has {} coordinates, expected d = {}", xs.len(), s.d));
    }
    let m = resolution.unwrap_or(s.n + 1);
    let field = HaarField::hyperbolic(s.n, s.d, s.signs.oracle.clone())?;
    let cell = GridPoint::containing(m, &xs)?;
    let value = field.eval(&cell)?;
    let mut cfg = config("eval", &s);
    cfg.extra.insert("point".into(), json!(point));
    cfg.extra.insert("resolution".into(), json!(m));
    let result = json!({
        "value": value,
        "resolution": m,
        "cell_indices": cell.coords().iter().map(BitIndex::to_hex).collect::<Vec<_>>(),
        "terms": field.len(),
    });
    Ok((cfg, Outcome::scalar(result)?))
}

fn supnorm(common: &Common, method: Method) -> Res<(RunConfig, Outcome)> {
    let s = setup(common, 2, 2)?;
    let field = HaarField::hyperbolic(s.n, s.d, s.signs.oracle.clone())?;
    let grid = (s.n + 1) * s.d as u32;
    let exhaustive = match method {
        Method::Exhaustive => true,
        Method::BranchBound => false,
        Method::Auto => grid <= DEFAULT_GRID_LIMIT,
    };
    let result = if exhaustive { sup_norm_exhaustive(&field, DEFAULT_GRID_LIMIT)? } else { sup_norm_branch_bound(&field)? };
    let mut cfg = config("supnorm", &s);
    cfg.extra.insert(
        "method".into(),
        json!(match method {
            Method::Auto => "auto",
            Method::Exhaustive => "exhaustive",
            Method::BranchBound => "branch-bound",
        }),
    );
    let mut value = serde_json::to_value(&result).map_err(CliError::internal)?;
    if let Value::Object(map) = &mut value {
        // measured growth against n^{d/2}; undefined at n = 0
        let scale = (s.n as f64).powf(s.d as f64 / 2.0);
        map.insert("ratio".into(), if s.n == 0 { Value::Null } else { json!(result.value as f64 / scale) });
    }
    Ok((cfg, Outcome::scalar(value)?))
}

fn witness2d(common: &Common, x2: Option<&str>) -> Res<(RunConfig, Outcome)> {
    let s = setup(common, 8, 2)?;
    if s.d != 2 {
        return usage("witness2d needs d = 2");
    }
    let x2 = x2.map(BitIndex::from_hex).transpose()?;
    let w = greedy_witness_2d(s.n, &s.signs.oracle, x2)?;
    let mut cfg = config("witness2d", &s);
    if let Some(x2) = &w.point.coords().get(1) {
        cfg.extra.insert("x2".into(), json!(x2.to_hex()));
    }
    let report = w.report(&s.signs.oracle);
    let rows = report
        .bit_trace
        .chars()
        .enumerate()
        .map(|(k, b)| json!({"k": k, "shape": format!("({},{})", k, s.n as usize - k), "digit": b.to_string()}))
        .collect();
    Ok((cfg, Outcome::with_rows(report, rows)?))
}

fn witness3d(common: &Common, pilot: u32) -> Res<(RunConfig, Outcome)> {
    let s = setup(common, 16, 3)?;
    let q = common.q.unwrap_or(2);
    let tau = parse_tau(common.tau.as_deref())?;
    let mut params = SearchParams::new(s.n, s.d, q);
    params.seed = s.seed;
    params.restart_budget = common.restarts.unwrap_or(200);
    let calibration = match tau {
        Some(t) => {
            params.tau = t;
            None
        }
        None => {
            let c = calibrate_tau(&params, &s.signs.oracle, pilot)?;
            params.tau = c.tau;
            Some(c)
        }
    };
    let report = conditional_witness_search(&params, &s.signs.oracle)?;
    let mut cfg = config("witness3d", &s);
    cfg.q = Some(q);
    cfg.tau = Some(match tau {
        Some(t) => json!(t),
        None => json!("auto"),
    });
    cfg.restarts = Some(params.restart_budget);
    if tau.is_none() {
        cfg.extra.insert("pilot".into(), json!(pilot));
    }
    let rows = report.trace.iter().map(|r| serde_json::to_value(r).unwrap_or(Value::Null)).collect();
    let mut result = serde_json::to_value(&report).map_err(CliError::internal)?;
    if let (Some(c), Value::Object(map)) = (calibration, &mut result) {
        map.insert("calibrated_tau".into(), json!(c.tau));
    }
    Ok((cfg, Outcome::with_rows(result, rows)?))
}

fn identity_check(common: &Common, t: Option<u32>) -> Res<(RunConfig, Outcome)> {
    let s = setup(common, 8, 3)?;
    let q = common.q.unwrap_or(4);
    let dec = BlockDecomposition::new(s.n, s.d, q, s.signs.oracle.clone())?;
    let blocks: Vec<u32> = match t {
        Some(t) => vec![t],
        None => (1..=q / 2).collect(),
    };
    let reports = blocks.iter().map(|&t| identity_sweep(&dec, t)).collect::<Result<Vec<_>, _>>()?;
    let violations: u128 = reports.iter().map(|r| r.violations).sum();
    let mut cfg = config("identity-check", &s);
    cfg.q = Some(q);
    if let Some(t) = t {
        cfg.extra.insert("t".into(), json!(t));
    }
    let rows = reports
        .iter()
        .map(|r| {
            json!({"t": r.t, "sigma_sq": r.sigma_sq, "cells": r.cells.to_string(), "leaves": r.leaves,
                   "violations": r.violations.to_string(), "max_defect": r.max_defect, "holds": r.holds()})
        })
        .collect();
    let result = json!({
        "holds": violations == 0,
        "violations": violations.to_string(),
        "blocks": reports,
    });
    Ok((cfg, Outcome::with_rows(result, rows)?))
}

fn lemmas(common: &Common) -> Res<(RunConfig, Outcome)> {
    let seed = common.seed.unwrap_or(DEFAULT_SEED);
    let budget = common.budget.unwrap_or(10_000);
    if budget == 0 {
        return usage("--budget must be at least 1");
    }
    let report = run_lemma_suites(budget, seed);
    let cfg = RunConfig { command: "lemmas".into(), seed, budget: Some(budget), ..Default::default() };
    let rows = report.results.iter().map(|r| serde_json::to_value(r).unwrap_or(Value::Null)).collect();
    let mut result = serde_json::to_value(&report).map_err(CliError::internal)?;
    if let Value::Object(map) = &mut result {
        map.insert("clean".into(), json!(report.clean()));
    }
    Ok((cfg, Outcome::with_rows(result, rows)?))
}

fn orlicz(common: &Common, ns: &str, t: u32, alpha: f64) -> Res<(RunConfig, Outcome)> {
    let s = setup(common, 0, 3)?;
    let ns: Vec<u32> = match common.n {
        Some(n) => vec![n],
        None => ns
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| CliError::Usage(format!("bad order {v:?} in --ns"))))
            .collect::<Res<_>>()?,
    };
    let q = common.q.unwrap_or(2);
    let budget = common.budget.unwrap_or(10_000);
    let scan = orlicz_scan(&ns, s.d, q, t, alpha, budget, s.seed, &s.signs.oracle)?;
    let mut cfg = config("orlicz-scan", &s);
    cfg.n = None;
    cfg.q = Some(q);
    cfg.budget = Some(budget);
    let mut extra = Map::new();
    extra.insert("ns".into(), json!(ns));
    extra.insert("t".into(), json!(t));
    extra.insert("alpha".into(), json!(alpha));
    cfg.extra = extra;
    let rows = scan.rows.iter().map(|r| serde_json::to_value(r).unwrap_or(Value::Null)).collect();
    Ok((cfg, Outcome::with_rows(scan, rows)?))
}

fn discrepancy(
    common: &Common,
    vdc: Option<u32>,
    points: Option<&std::path::Path>,
    random: Option<usize>,
    bits: u32,
) -> Res<(RunConfig, Outcome)> {
    let seed = common.seed.unwrap_or(DEFAULT_SEED);
    let budget = common.budget.unwrap_or(10_000);
    let (set, source) = match (vdc, points, random) {
        (Some(k), _, _) => (van_der_corput(k)?, json!({"vdc": k})),
        (_, Some(path), _) => {
            let file = File::open(path)
                .map_err(|e| CliError::NoInput(format!("cannot read point file {}: {e}", path.display())))?;
            (PointSet::read(BufReader::new(file))?, json!({"points": path.display().to_string()}))
        }
        (_, _, Some(n)) => {
            let d = common.d.unwrap_or(2);
            (PointSet::random(d, n, bits, seed)?, json!({"random": n, "bits": bits}))
        }
        _ => return usage("discrepancy needs --vdc K, --points FILE or --random N"),
    };
    let report = discrepancy_report(&set, budget, seed)?;
    let mut cfg = RunConfig {
        command: "discrepancy".into(),
        d: Some(set.dim()),
        seed,
        budget: Some(budget),
        ..Default::default()
    };
    cfg.extra.insert("source".into(), source);
    let row = json!({
        "points": report.points, "d": report.d, "sup": report.sup.value, "sup_exact": report.sup.exact,
        "l2": report.l2.norm, "l2_stderr": report.l2.stderr, "log_n": report.log_n,
        "sup_ratio": report.sup_ratio, "l2_ratio": report.l2_ratio, "consistent": report.consistent,
    });
    Ok((cfg, Outcome::with_rows(report, vec![row])?))
}
