use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde_json::json;
use sortflow::agents::{BridgeEndpoint, BridgePolicy, GreedyBottleneck, NoReallocation, Policy};
use sortflow::corpus::{generate_corpus, CorpusSpec};
use sortflow::eval::{calibrate, compare_logs, evaluate, replay, CalibParam, SearchSpace};
use sortflow::learn::{metrics_csv, train, Checkpoint, Method, SampledPolicy};
use sortflow::prefgen::{
    dataset_file_name, iterate_preferences, states_from_logs, PolicyProposals, PrefParams, ProposalSource,
};
use sortflow::seed;
use sortflow::sim::{read_shift_logs, write_shift_logs, ShiftLog};
use sortflow_service::{ServiceConfig, PORT_ENV};

use crate::manifest::ManifestBuilder;
use crate::{
    CalibrateArgs, Cli, CliError, Command, EvaluateArgs, GenerateArgs, PrefgenArgs, RunConfig, ServeArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const CALIBRATED_CONFIG_FILE: &str = "calibrated_config.json";
pub const CALIBRATION_REPORT_FILE: &str = "calibration_report.json";
pub const SCATTER_FILE: &str = "scatter.csv";

pub fn dispatch(cli: &Cli, config: &RunConfig) -> Result<()> {
    if !matches!(cli.command, Command::Serve(_)) {
        std::fs::create_dir_all(&cli.out)?;
    }
    let manifest = |name: &str| ManifestBuilder::new(name, format!("{:?}", cli.command), config, cli.seed, cli.threads);
    match &cli.command {
        Command::Generate(a) => generate(cli, config, a, manifest("generate")),
        Command::Train(a) => train_cmd(cli, config, a, manifest("train")),
        Command::Evaluate(a) => evaluate_cmd(cli, config, a, manifest("evaluate")),
        Command::Prefgen(a) => prefgen(cli, config, a, manifest("prefgen")),
        Command::Calibrate(a) => calibrate_cmd(cli, config, a, manifest("calibrate")),
        Command::Serve(a) => serve(config, a),
    }
}

fn read_corpus(path: &Path) -> Result<Vec<ShiftLog>> {
    let f = File::open(path).map_err(|e| sortflow::Error::Data(format!("{}: {e}", path.display())))?;
    let logs = read_shift_logs(BufReader::new(f))?;
    if logs.is_empty() {
        return Err(sortflow::Error::EmptyCorpus.into());
    }
    Ok(logs)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn generate(cli: &Cli, config: &RunConfig, a: &GenerateArgs, mut m: ManifestBuilder) -> Result<()> {
    let spec = CorpusSpec {
        config: config.sim.clone(),
        scenario: config.scenario.clone(),
        manager: config.manager.clone(),
        prefix: a.prefix.clone(),
    };
    let logs = generate_corpus(&spec, a.shifts, cli.seed)?;
    let path = cli.out.join(CORPUS_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    write_shift_logs(&logs, &mut w)?;
    w.flush()?;
    m.output(&path);
    m.details(json!({"shifts": logs.len(), "prefix": a.prefix}));
    m.write(&cli.out)?;
    println!("wrote {} shifts to {}", logs.len(), path.display());
    Ok(())
}

fn train_cmd(cli: &Cli, config: &RunConfig, a: &TrainArgs, mut m: ManifestBuilder) -> Result<()> {
    let method: Method = a.method.into();
    let logs = read_corpus(&a.corpus)?;
    m.input(&a.corpus);
    let outcome = train(method, &logs, &config.train, cli.seed)?;
    let ckpt = Checkpoint {
        method,
        policy: outcome.policy,
        value: outcome.value,
        train_config: Some(config.train.clone()),
    };
    let ckpt_path = cli.out.join(CHECKPOINT_FILE);
    ckpt.save(&ckpt_path)?;
    let metrics_path = cli.out.join(METRICS_FILE);
    write_text(&metrics_path, &metrics_csv(&outcome.metrics))?;
    m.output(&ckpt_path);
    m.output(&metrics_path);
    m.details(json!({
        "method": method,
        "epochs_run": outcome.metrics.len(),
        "early_stop_epoch": outcome.early_stop_epoch,
    }));
    m.write(&cli.out)?;
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

fn method_label(method: Method) -> &'static str {
    match method {
        Method::Bc => "bc",
        Method::Bcft => "bc_ft",
        Method::Ac => "offline_ac",
    }
}

fn evaluate_cmd(cli: &Cli, config: &RunConfig, a: &EvaluateArgs, mut m: ManifestBuilder) -> Result<()> {
    let logs = read_corpus(&a.corpus)?;
    m.input(&a.corpus);
    let mut owned: Vec<(String, Box<dyn Policy>)> = Vec::new();
    for p in &a.checkpoints {
        let ckpt = Checkpoint::load(p)?;
        m.input(p);
        let mut name = method_label(ckpt.method).to_owned();
        if owned.iter().any(|(n, _)| *n == name) {
            name = format!("{name}:{}", p.display());
        }
        owned.push((name, Box::new(ckpt.policy)));
    }
    if !a.no_baseline {
        owned.push(("no_reallocation".into(), Box::new(NoReallocation)));
    }
    if a.greedy {
        owned.push(("greedy_bottleneck".into(), Box::new(GreedyBottleneck::default())));
    }
    if owned.is_empty() && !a.include_replay {
        return Err(CliError::Usage(
            "nothing to evaluate: pass --checkpoint or drop --no-baseline".into(),
        ));
    }
    let policies: Vec<(String, &dyn Policy)> = owned
        .iter()
        .map(|(n, p)| (n.clone(), p.as_ref() as &dyn Policy))
        .collect();
    let resamples = config.eval.bootstrap_resamples;
    let mut report = evaluate(&logs, &policies, resamples, cli.seed)?;
    if a.include_replay {
        let replayed: Vec<ShiftLog> = logs
            .iter()
            .map(|l| replay(l, &l.config))
            .collect::<sortflow::Result<_>>()?;
        report
            .methods
            .insert(0, compare_logs("replay", &replayed, &replayed, resamples, cli.seed)?);
    }
    let path = cli.out.join(EVAL_REPORT_FILE);
    write_json(&path, &report)?;
    m.output(&path);
    m.write(&cli.out)?;
    println!("{}", report.table());
    Ok(())
}

fn prefgen(cli: &Cli, config: &RunConfig, a: &PrefgenArgs, mut m: ManifestBuilder) -> Result<()> {
    let logs = read_corpus(&a.corpus)?;
    m.input(&a.corpus);
    if a.rounds == 0 {
        return Err(CliError::Usage("--rounds must be at least 1".into()));
    }
    let pc = &config.prefgen;
    let states = states_from_logs(&logs, pc.stride);
    let trained = match &a.checkpoint {
        Some(p) => {
            m.input(p);
            Some(Checkpoint::load(p)?.policy)
        }
        None => None,
    };
    let bridge: Option<Arc<dyn Policy>> = a
        .bridge
        .as_deref()
        .map(|spec| Arc::new(BridgePolicy::new(BridgeEndpoint::parse(spec))) as Arc<dyn Policy>);
    let root = cli.seed;
    let random_moves = pc.random_moves;
    let source_for_round = |round: u32| -> sortflow::Result<Box<dyn ProposalSource>> {
        let mut policies: Vec<Arc<dyn Policy>> = Vec::new();
        if let Some(p) = &trained {
            policies.push(Arc::new(SampledPolicy {
                policy: p.clone(),
                seed: seed::derive(root, "prefgen_round", round as u64),
            }));
        }
        if let Some(b) = &bridge {
            policies.push(b.clone());
        }
        policies.push(Arc::new(GreedyBottleneck::default()));
        Ok(Box::new(
            PolicyProposals::new(policies).with_perturbations(random_moves),
        ))
    };
    let params = PrefParams {
        horizon: pc.horizon,
        margin: pc.margin,
        continuation: pc.continuation,
        iteration: 0,
        seed: root,
    };
    let datasets = iterate_preferences(&states, source_for_round, a.rounds, &params)?;
    let mut counts = Vec::new();
    for (r, ds) in datasets.iter().enumerate() {
        let path = cli.out.join(dataset_file_name(r as u32));
        let mut w = BufWriter::new(File::create(&path)?);
        ds.write_jsonl(&mut w)?;
        w.flush()?;
        m.output(&path);
        counts.push(json!({"pairs": ds.pairs.len(), "dropped_candidates": ds.dropped.len()}));
        println!("wrote {} pairs to {}", ds.pairs.len(), path.display());
    }
    m.details(json!({"states": states.len(), "rounds": counts}));
    m.write(&cli.out)?;
    Ok(())
}

fn calibrate_cmd(cli: &Cli, config: &RunConfig, a: &CalibrateArgs, mut m: ManifestBuilder) -> Result<()> {
    let logs = read_corpus(&a.corpus)?;
    m.input(&a.corpus);
    let space = match &a.space {
        Some(p) => {
            m.input(p);
            serde_json::from_str::<SearchSpace>(&std::fs::read_to_string(p)?)?
        }
        None => {
            let c = &config.calibrate;
            let mut s = SearchSpace::around(&config.sim, &CalibParam::ALL, c.rel_step, c.steps);
            s.max_sweeps = c.max_sweeps;
            s
        }
    };
    let (fitted, report) = calibrate(&logs, &config.sim, &space)?;
    let cfg_path = cli.out.join(CALIBRATED_CONFIG_FILE);
    let rep_path = cli.out.join(CALIBRATION_REPORT_FILE);
    let scatter_path = cli.out.join(SCATTER_FILE);
    write_json(&cfg_path, &fitted)?;
    write_json(&rep_path, &report)?;
    write_text(&scatter_path, &report.scatter.to_csv())?;
    for p in [&cfg_path, &rep_path, &scatter_path] {
        m.output(p);
    }
    m.details(json!({"sweeps": report.sweeps, "evaluations": report.evaluations, "unchanged": fitted == config.sim}));
    m.write(&cli.out)?;
    println!("{}", report.table());
    Ok(())
}

fn serve(config: &RunConfig, a: &ServeArgs) -> Result<()> {
    let mut sc: ServiceConfig = config.service.clone();
    sc.sim = config.sim.clone();
    sc.scenario = config.scenario.clone();
    if let Some(p) = a.port {
        sc.port = p;
    }
    let port = sc.resolved_port(std::env::var(PORT_ENV).ok().as_deref());
    eprintln!("serving on {}:{port}", sc.host);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(sortflow_service::serve(sc))?;
    Ok(())
}
