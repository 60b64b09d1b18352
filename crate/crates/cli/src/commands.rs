use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use safeflow_core::certificates::certify;
use safeflow_core::env::{fit_gmm_target, generate_dataset, Environment, KMeansParams, PathDataset};
use safeflow_core::experiment::{aggregate, ExperimentPlan};
use safeflow_core::fields::{field_distance, interpolant_probes, train_cfm, TrainParams};
use safeflow_core::integrators::{plan_with, CorrectionTrace, PlanContext};
use safeflow_core::metrics::{write_table, AggregateRow, RunRecord};
use safeflow_core::store;
use safeflow_core::trajectory::rng::{stream_rng, streams};
use safeflow_core::trajectory::{FieldSpec, RunConfig};
use safeflow_core::Error;

use crate::args::{
    parse_seeds, GenerateArgs, Global, PlanArgs, PlanOverrides, ReportArgs, SweepArgs, TrainArgs,
    VerifyArgs,
};

pub enum Failure {
    Error(Error),
    /// The report was printed; the exit status carries the verdict.
    Certificate,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Certificate => 2,
            Failure::Error(e) => error_code(e),
        }
    }
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Phase { source, .. } | Error::Integration { source, .. } => error_code(source),
        _ => 1,
    }
}

type CmdResult = Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Error(Error::InvalidParameter(msg.into()))
}

fn open(path: &Path) -> Result<File, Error> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> safeflow_core::Result<()>) -> Result<Vec<u8>, Error> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

/// Defaults, then the config file, then `--seed`.
fn base_config(global: &Global) -> Result<RunConfig, Error> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, o: &PlanOverrides) {
    if let Some(m) = o.method {
        cfg.method = m;
    }
    if let Some(v) = o.t_pred {
        cfg.t_pred = v;
    }
    if let Some(v) = o.t_corr {
        cfg.t_corr = v;
    }
    if let Some(v) = o.alpha {
        cfg.alpha = v;
    }
    if let Some(e) = &o.environment {
        cfg.environment = e.clone();
    }
    if let Some(d) = &o.dataset {
        cfg.dataset.file = Some(d.clone());
    }
    if let Some(c) = &o.checkpoint {
        cfg.field = FieldSpec::Mlp { checkpoint: c.clone() };
    }
    if o.no_safety {
        cfg.safety = false;
    }
}

fn load_environment(name: &str) -> Result<Environment, Error> {
    Environment::builtin(name).or_else(|e| {
        let p = Path::new(name);
        if p.exists() {
            Environment::load(p)
        } else {
            Err(e)
        }
    })
}

pub fn generate(global: &Global, args: &GenerateArgs) -> CmdResult {
    let cfg = base_config(global)?;
    let mut env = load_environment(&args.environment)?;
    env.dataset.waypoints = cfg.horizon + 1;
    env.validate(cfg.cbf.delta)?;
    let seed = global.seed.unwrap_or(cfg.dataset.seed);
    let env_path = global.out.join("environments").join(format!("{}.json", env.name));
    let ds_path = global.out.join("datasets").join(format!("{}.json", env.name));
    store::check_overwrite(&env_path, global.force)?;
    store::check_overwrite(&ds_path, global.force)?;
    let dataset = generate_dataset(&env, args.n, seed)?;
    env.save(&env_path)?;
    dataset.save(&ds_path)?;
    println!(
        "wrote {} paths to {} (median spacing {:.4})",
        dataset.paths.len(),
        ds_path.display(),
        dataset.median_spacing()
    );
    Ok(())
}

pub fn train(global: &Global, args: &TrainArgs) -> CmdResult {
    if args.probes == 0 || args.eval_every == 0 {
        return Err(invalid("--probes and --eval-every must be positive"));
    }
    let dataset = PathDataset::load(&args.dataset)?;
    let gmm = fit_gmm_target(
        &dataset,
        &KMeansParams {
            components: args.components,
            seed: dataset.seed,
            ..Default::default()
        },
    )?;
    let params = TrainParams {
        hidden: args.hidden.clone(),
        steps: args.steps,
        batch_size: args.batch,
        learning_rate: args.lr,
        seed: global.seed.unwrap_or(0),
    };
    let dir = global.out.join("checkpoints");
    let ck_path = dir.join(format!("{}.json", args.name));
    let log_path = dir.join(format!("{}_log.csv", args.name));
    store::check_overwrite(&ck_path, global.force)?;
    store::check_overwrite(&log_path, global.force)?;

    let probes = interpolant_probes(&gmm, args.probes, 0.99, &mut stream_rng(params.seed, streams::PROBES));
    let initial = field_distance(&params.init_field(gmm.dim(), gmm.horizon())?, &gmm, &probes)?;
    let mut log = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidParameter(format!("training log: {e}"));
    log.write_record(["step", "loss", "field_distance"]).map_err(csv_err)?;
    log.write_record(["0".into(), String::new(), initial.to_string()]).map_err(csv_err)?;
    let mut last = initial;
    let outcome = train_cfm(&gmm, &params, |step, loss, field| {
        let distance = if step % args.eval_every == 0 || step == params.steps {
            last = field_distance(field, &gmm, &probes)?;
            last.to_string()
        } else {
            String::new()
        };
        log.write_record([step.to_string(), loss.value.to_string(), distance]).map_err(csv_err)
    })?;
    let log = log.into_inner().map_err(|e| Error::InvalidParameter(format!("training log: {e}")))?;
    store::save_json(&ck_path, &outcome.checkpoint())?;
    store::write_atomic(&log_path, &log)?;
    println!(
        "field distance to the exact mixture field: initial {initial:.6}, final {last:.6} (ratio {:.4})",
        last / initial
    );
    println!("wrote {}", ck_path.display());
    Ok(())
}

pub fn plan(global: &Global, args: &PlanArgs) -> CmdResult {
    let mut cfg = base_config(global)?;
    apply_overrides(&mut cfg, &args.overrides);
    cfg.validate()?;
    let ctx = PlanContext::from_config(&cfg)?;
    cfg.cbf.zeta = Some(ctx.zeta);
    let id = args
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}-seed{}-{}", cfg.method, cfg.seed, &cfg.hash()[..8]));
    if id.is_empty() || id.contains(['/', '\\']) {
        return Err(invalid(format!("bad run id {id:?}")));
    }
    let dir = global.out.join("runs").join(&id);
    let files = ["config.json", "trace.csv", "report.json", "record.csv"].map(|f| dir.join(f));
    for f in &files {
        store::check_overwrite(f, global.force)?;
    }
    let out = plan_with(&cfg, &ctx, args.timing)?;
    let report = certify(&out.trace, &cfg.cbf, ctx.zeta)?;
    cfg.save(&files[0])?;
    store::write_atomic(&files[1], &csv_bytes(|b| out.trace.write_csv(b))?)?;
    store::save_json(&files[2], &report)?;
    store::write_atomic(&files[3], &csv_bytes(|b| RunRecord::write_csv(std::slice::from_ref(&out.record), b))?)?;
    let r = &out.record;
    println!("run {}", dir.display());
    println!(
        "certificate {}, min barrier {:?}, trap {}, score {:.4}",
        if report.passed() { "passed" } else { "FAILED" },
        r.min_barrier,
        r.trap,
        r.score
    );
    Ok(())
}

pub fn sweep(global: &Global, args: &SweepArgs) -> CmdResult {
    let mut base = base_config(global)?;
    let mut xp = match &args.plan {
        Some(p) => ExperimentPlan::load(p)?,
        None => ExperimentPlan {
            environment: base.environment.clone(),
            field: base.field.clone(),
            ..Default::default()
        },
    };
    if let Some(m) = &args.methods {
        xp.methods = m.clone();
    }
    if let Some(v) = &args.t_pred {
        xp.t_pred = v.clone();
    }
    if let Some(v) = &args.alpha {
        xp.alpha = v.clone();
    }
    if let Some(s) = &args.seeds {
        xp.seeds = parse_seeds(s).map_err(invalid)?;
    }
    if let Some(e) = &args.environment {
        xp.environment = e.clone();
    }
    if let Some(c) = &args.checkpoint {
        xp.field = FieldSpec::Mlp { checkpoint: c.clone() };
    }
    xp.validate()?;
    let ctx = PlanContext::from_config(&xp.context_config(&base))?;
    base.cbf.zeta = Some(ctx.zeta);
    let cells = xp.cells(&base)?;

    let dir = global.out.join("sweeps");
    let files = ["_plan.json", ".csv", "_runs.csv"].map(|s| dir.join(format!("{}{s}", args.name)));
    for f in &files {
        store::check_overwrite(f, global.force)?;
    }
    let jobs: Vec<&RunConfig> = cells.iter().flat_map(|c| &c.configs).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(global.jobs.unwrap_or(0))
        .build()
        .map_err(|e| invalid(format!("worker pool: {e}")))?;
    let records = pool.install(|| {
        jobs.par_iter()
            .map(|cfg| plan_with(cfg, &ctx, false).map(|o| o.record))
            .collect::<Result<Vec<_>, Error>>()
    })?;
    let rows = aggregate(&cells, &records)?;
    store::save_json(&files[0], &xp)?;
    store::write_atomic(&files[1], &csv_bytes(|b| write_table(&rows, b))?)?;
    store::write_atomic(&files[2], &csv_bytes(|b| RunRecord::write_csv(&records, b))?)?;
    for row in &rows {
        println!(
            "{}: runs {}, BS {:?}, trap rate {:.3}, score {:.4}",
            row.label, row.runs, row.bs, row.trap_rate, row.score_mean
        );
    }
    println!("wrote {}", files[1].display());
    Ok(())
}

pub fn verify(_global: &Global, args: &VerifyArgs) -> CmdResult {
    let cfg = RunConfig::load(&args.run_dir.join("config.json"))?;
    let trace_path = args.run_dir.join("trace.csv");
    let trace = CorrectionTrace::read_csv(open(&trace_path)?).map_err(|reason| Error::Malformed {
        path: trace_path.clone(),
        reason,
    })?;
    let report = match cfg.cbf.zeta {
        Some(zeta) => certify(&trace, &cfg.cbf, zeta)?,
        None => safeflow_core::certificates::verify_invariance(&trace, &cfg.cbf)?,
    };
    let json = store::to_versioned_json(&report)?;
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(json.as_bytes())
        .map_err(|source| Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })?;
    if report.passed() {
        Ok(())
    } else {
        eprintln!("certificate violated: {} violation(s)", report.violations.len());
        Err(Failure::Certificate)
    }
}

fn run_dirs(roots: &[PathBuf]) -> Result<Vec<PathBuf>, Error> {
    let mut dirs = Vec::new();
    for root in roots {
        if root.join("record.csv").exists() {
            dirs.push(root.clone());
            continue;
        }
        let entries = std::fs::read_dir(root).map_err(|source| Error::Io {
            path: root.clone(),
            source,
        })?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("record.csv").exists())
            .collect();
        found.sort();
        dirs.extend(found);
    }
    Ok(dirs)
}

pub fn report(global: &Global, args: &ReportArgs) -> CmdResult {
    let dirs = run_dirs(&args.runs)?;
    if dirs.is_empty() {
        return Err(invalid("no run directories with record.csv found"));
    }
    let mut groups: Vec<(String, Vec<RunRecord>)> = Vec::new();
    for dir in &dirs {
        let cfg = RunConfig::load(&dir.join("config.json"))?;
        let path = dir.join("record.csv");
        let records = RunRecord::read_csv(open(&path)?).map_err(|reason| Error::Malformed {
            path: path.clone(),
            reason,
        })?;
        let label = format!("{} T_pred={} alpha={}", cfg.method, cfg.t_pred, cfg.alpha);
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, rs)) => rs.extend(records),
            None => groups.push((label, records)),
        }
    }
    let rows = groups
        .iter()
        .map(|(label, rs)| AggregateRow::from_records(label.clone(), rs))
        .collect::<Result<Vec<_>, Error>>()?;
    let table = csv_bytes(|b| write_table(&rows, b))?;
    match &args.output {
        Some(p) => {
            store::check_overwrite(p, global.force)?;
            store::write_atomic(p, &table)?;
        }
        None => std::io::stdout().write_all(&table).map_err(|source| Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        })?,
    }
    Ok(())
}
