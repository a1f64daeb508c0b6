//! Implementations behind the `gtsp` subcommands.

use crate::render::render_route;
use crate::report::{EvalReport, MethodCosts};
use crate::CliError;
use gtsp_core::baselines::{
    exact_solve, export_ilp_string, local_search, nearest_neighbor_solve, random_tour,
    SearchBudget,
};
use gtsp_core::instance::{
    generate_dataset, read_dataset_file, read_instance, read_tour, write_dataset, write_tour,
    Family, GeneratorSpec, GtspInstance, Tour, TourDoc,
};
use gtsp_core::policy::Policy;
use gtsp_core::training::{train, TrainConfig, TrainError};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| runtime(format!("writing {}: {e}", path.display())))
}

fn family_uses_m(family: Family) -> bool {
    !matches!(family, Family::Small | Family::Large | Family::Mixed)
}

fn parse_family(name: &str) -> Result<Family, CliError> {
    Family::from_str(name).map_err(|e| CliError::Usage(format!("--family: {e}")))
}

pub struct GenerateOpts {
    pub family: String,
    pub n: usize,
    pub m: usize,
    pub count: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// `gtsp generate`: writes a dataset of `count` instances with substream
/// seeds `seed + 0 .. seed + count`.
pub fn run_generate(opts: &GenerateOpts) -> Result<(), CliError> {
    let family = parse_family(&opts.family)?;
    if opts.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    if family_uses_m(family) && opts.m < 2 {
        return Err(CliError::Usage(format!(
            "--m must be at least 2 for the {family} family, got {}",
            opts.m
        )));
    }
    let spec = GeneratorSpec::new(family, opts.n, opts.m, opts.seed);
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let instances = generate_dataset(&spec, opts.count).map_err(runtime)?;
    let mut buf = Vec::new();
    write_dataset(&instances, &mut buf).map_err(runtime)?;
    write_file(&opts.out, &buf)?;
    println!(
        "wrote {} {family} instances (n={}, seeds {}..{}) to {}",
        opts.count,
        opts.n,
        opts.seed,
        opts.seed + opts.count as u64 - 1,
        opts.out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    NearestNeighbor,
    LocalSearch,
    Random,
    Mmfl,
}

impl Method {
    pub fn parse(name: &str) -> Result<Method, CliError> {
        match name {
            "exact" => Ok(Method::Exact),
            "nn" => Ok(Method::NearestNeighbor),
            "local" => Ok(Method::LocalSearch),
            "random" => Ok(Method::Random),
            "mmfl" => Ok(Method::Mmfl),
            other => Err(CliError::Usage(format!(
                "unknown method `{other}`; expected exact, nn, local, random, or mmfl"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::NearestNeighbor => "nn",
            Method::LocalSearch => "local",
            Method::Random => "random",
            Method::Mmfl => "mmfl",
        }
    }
}

fn solve_with(
    method: Method,
    instance: &GtspInstance,
    policy: Option<&Policy>,
) -> Result<Tour, CliError> {
    match method {
        Method::Exact => exact_solve(instance, &SearchBudget::default()).map_err(runtime),
        Method::NearestNeighbor => Ok(nearest_neighbor_solve(instance)),
        Method::LocalSearch => {
            let initial = nearest_neighbor_solve(instance);
            let budget = SearchBudget {
                seed: instance.seed,
                ..SearchBudget::default()
            };
            Ok(local_search(instance, &initial, &budget))
        }
        Method::Random => Ok(random_tour(instance, instance.seed)),
        Method::Mmfl => {
            let policy = policy.expect("checkpoint presence checked at parse time");
            policy.greedy_solve(instance).map_err(runtime)
        }
    }
}

pub struct EvalOpts {
    pub dataset: PathBuf,
    pub methods: String,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// `gtsp eval`: runs each method over the dataset and prints an aligned
/// Obj/Gap/Time table; optionally writes detail and summary CSVs.
pub fn run_eval(opts: &EvalOpts) -> Result<(), CliError> {
    let started = Instant::now();
    let methods: Vec<Method> = opts
        .methods
        .split(',')
        .filter(|s| !s.is_empty())
        .map(Method::parse)
        .collect::<Result<_, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage("--methods is empty".into()));
    }
    let policy = if methods.contains(&Method::Mmfl) {
        let path = opts.checkpoint.as_ref().ok_or_else(|| {
            CliError::Usage("--checkpoint is required when mmfl is among --methods".into())
        })?;
        Some(Policy::load(path).map_err(runtime)?.0)
    } else {
        None
    };
    let instances = read_dataset_file(&opts.dataset).map_err(runtime)?;
    if instances.is_empty() {
        return Err(CliError::Runtime(format!(
            "dataset {} is empty",
            opts.dataset.display()
        )));
    }

    let mut per_method = Vec::with_capacity(methods.len());
    for &method in &methods {
        let solve_started = Instant::now();
        let costs: Result<Vec<f64>, CliError> = instances
            .iter()
            .map(|inst| solve_with(method, inst, policy.as_ref()).map(|t| t.cost()))
            .collect();
        per_method.push(MethodCosts {
            method: method.name().to_string(),
            costs: costs?,
            solve_seconds: solve_started.elapsed().as_secs_f64(),
        });
    }

    let keyed: Vec<(u64, Family)> = instances.iter().map(|i| (i.seed, i.family)).collect();
    let report = EvalReport::build(&keyed, per_method);
    print!("{}", report.table());
    println!(
        "total {:.2}s end-to-end (including i/o and setup)",
        started.elapsed().as_secs_f64()
    );
    if let Some(out) = &opts.out {
        write_file(out, report.detail_csv().as_bytes())?;
        let summary_path = out.with_extension("summary.csv");
        write_file(&summary_path, report.summary_csv().as_bytes())?;
        println!(
            "wrote {} and {}",
            out.display(),
            summary_path.display()
        );
    }
    Ok(())
}

pub struct TrainOpts {
    pub preset: String,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub instances_per_epoch: Option<usize>,
    pub batch_size: Option<usize>,
    pub rollouts: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub clip_norm: Option<f64>,
    pub family: Option<String>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub eval_seed: Option<u64>,
    pub eval_count: Option<usize>,
    pub deterministic: bool,
    pub resume: bool,
    pub disable_image: bool,
    pub disable_fusion: bool,
}

/// `gtsp train`: builds the config from a preset plus overrides and runs the
/// training loop, writing per-epoch checkpoints and the convergence CSV.
pub fn run_train(opts: &TrainOpts) -> Result<(), CliError> {
    let mut config = match opts.preset.as_str() {
        "desk" => TrainConfig::desk(opts.seed),
        "paper" => TrainConfig::paper(opts.seed),
        other => {
            return Err(CliError::Usage(format!(
                "unknown preset `{other}`; expected desk or paper"
            )))
        }
    };
    if let Some(e) = opts.epochs {
        config.epochs = e;
    }
    if let Some(v) = opts.instances_per_epoch {
        config.instances_per_epoch = v;
    }
    if let Some(v) = opts.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = opts.rollouts {
        config.rollouts = v;
    }
    if let Some(v) = opts.lr {
        config.base_lr = v;
    }
    if let Some(v) = opts.weight_decay {
        config.weight_decay = v;
    }
    if let Some(v) = opts.clip_norm {
        config.clip_norm = v;
    }
    if let Some(name) = &opts.family {
        config.gen.family = parse_family(name)?;
    }
    if let Some(v) = opts.n {
        config.gen.n = v;
    }
    if let Some(v) = opts.m {
        config.gen.m = v;
    }
    if let Some(v) = opts.eval_seed {
        config.eval_seed = v;
    }
    if let Some(v) = opts.eval_count {
        config.eval_count = v;
    }
    config.deterministic = opts.deterministic;
    config.resume = opts.resume;
    config.policy.disable_image = opts.disable_image;
    config.policy.disable_fusion = opts.disable_fusion;
    config.out_dir = opts.out_dir.clone();

    if config.epochs == 0 {
        return Err(CliError::Usage("--epochs must be at least 1".into()));
    }
    config.validate().map_err(|e| match e {
        TrainError::Config(msg) => CliError::Usage(msg),
        other => runtime(other),
    })?;

    if opts.preset == "paper" {
        eprintln!(
            "warning: the paper preset trains {} epochs x {} instances at batch {}; \
             expect days of CPU time",
            config.epochs, config.instances_per_epoch, config.batch_size
        );
    }
    println!(
        "training: preset={} epochs={} instances_per_epoch={} batch={} k={} \
         lr={:e} weight_decay={:e} clip={} family={} n={} m={} seed={}",
        opts.preset,
        config.epochs,
        config.instances_per_epoch,
        config.batch_size,
        config.rollouts,
        config.base_lr,
        config.weight_decay,
        config.clip_norm,
        config.gen.family,
        config.gen.n,
        config.gen.m,
        config.seed
    );

    let outcome = train(&config).map_err(runtime)?;
    for r in &outcome.log.records {
        println!(
            "epoch {:3}  val {:.4}  train_reward {:.4}  lr {:.3e}  {:.1}s",
            r.epoch, r.val_cost, r.train_reward, r.lr, r.seconds
        );
    }
    if config.out_dir.is_none() {
        log::warn!("no --out-dir given: checkpoints and the convergence CSV were not saved");
    }
    Ok(())
}

pub struct SolveOpts {
    pub instance: PathBuf,
    pub method: String,
    pub checkpoint: Option<PathBuf>,
    pub render: Option<PathBuf>,
    pub tour_out: Option<PathBuf>,
}

fn read_instance_file(path: &Path) -> Result<GtspInstance, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| runtime(format!("opening {}: {e}", path.display())))?;
    read_instance(std::io::BufReader::new(file)).map_err(runtime)
}

/// `gtsp solve`: solves one instance, prints the tour and cost, optionally
/// writes the tour document and an SVG.
pub fn run_solve(opts: &SolveOpts) -> Result<(), CliError> {
    let method = Method::parse(&opts.method)?;
    let policy = if method == Method::Mmfl {
        let path = opts.checkpoint.as_ref().ok_or_else(|| {
            CliError::Usage("--checkpoint is required for the mmfl method".into())
        })?;
        Some(Policy::load(path).map_err(runtime)?.0)
    } else {
        None
    };
    let instance = read_instance_file(&opts.instance)?;
    let tour = solve_with(method, &instance, policy.as_ref())?;
    println!(
        "method {}  cost {:.6}  nodes {:?}",
        method.name(),
        tour.cost(),
        tour.nodes()
    );
    if let Some(path) = &opts.tour_out {
        let doc = TourDoc::from_tour(&instance, &tour);
        let mut buf = Vec::new();
        write_tour(&doc, &mut buf).map_err(runtime)?;
        write_file(path, &buf)?;
    }
    if let Some(path) = &opts.render {
        let svg = render_route(&instance, &tour).map_err(runtime)?;
        write_file(path, svg.as_bytes())?;
    }
    Ok(())
}

pub struct ExportIlpOpts {
    pub instance: PathBuf,
    pub out: PathBuf,
}

/// `gtsp export-ilp`: writes the LP-format model of one instance.
pub fn run_export_ilp(opts: &ExportIlpOpts) -> Result<(), CliError> {
    let instance = read_instance_file(&opts.instance)?;
    let text = export_ilp_string(&instance);
    write_file(&opts.out, text.as_bytes())?;
    println!(
        "wrote LP model ({} variables) to {}",
        instance.n * (instance.n - 1) + 2 * instance.n,
        opts.out.display()
    );
    Ok(())
}

pub struct RenderOpts {
    pub instance: PathBuf,
    pub tour: PathBuf,
    pub out: PathBuf,
}

/// `gtsp render`: renders a stored tour document over its instance.
pub fn run_render(opts: &RenderOpts) -> Result<(), CliError> {
    let instance = read_instance_file(&opts.instance)?;
    let file = std::fs::File::open(&opts.tour)
        .map_err(|e| runtime(format!("opening {}: {e}", opts.tour.display())))?;
    let doc: TourDoc = read_tour(std::io::BufReader::new(file)).map_err(runtime)?;
    if doc.instance_seed != instance.seed || doc.family != instance.family {
        return Err(CliError::Runtime(format!(
            "tour was solved on ({}, seed {}), not on this instance ({}, seed {})",
            doc.family, doc.instance_seed, instance.family, instance.seed
        )));
    }
    let tour = Tour::new(&instance, doc.nodes).map_err(runtime)?;
    let svg = render_route(&instance, &tour).map_err(runtime)?;
    write_file(&opts.out, svg.as_bytes())?;
    println!("wrote {}", opts.out.display());
    Ok(())
}
