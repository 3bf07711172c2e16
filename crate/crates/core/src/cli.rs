//! Command-line entry points. Every command except `serve` writes a
//! manifest that `replay` can repeat.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::index::sample;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{Config, ProblemKind};
use crate::error::{Error, Result};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::network::{SiteId, StreamNetwork};
use crate::problem::{Evaluator, Neighbourhood, ReefProblem, ReefSearch, ReefWindows, RiverProblem, RiverSearch, RiverWindows};
use crate::rng::{self, label};
use crate::search::{coordinate_exchange, AcceptRule, Acceptance, Cached, DesignUtility, SearchResult};
use crate::service::{ServiceState, SurfaceFile, SURFACE_FILE};
use crate::synth::{synth_reef, synth_river};
use crate::transect::{Bounds, ReefSurface, Transect};
use crate::utility::{PosteriorMethod, Summary};
use crate::windows::{
    build_utility_grid, efficiency_surface, fit_gp, grid_seed, product_grid, Window, WindowKind, WindowSpace, WindowUtility, ZetaGrid,
};

pub const PORT_ENV: &str = "SPATIAL_DESIGN_PORT";

#[derive(Debug, Parser)]
#[command(name = "spatial-design", version, about = "Bayesian spatial sampling designs and sampling windows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic river network or reef depth field.
    Synth(RunArgs),
    /// Coordinate-exchange design search.
    Search(SearchArgs),
    /// Sampling-window efficiency surface around a current design.
    Windows(RunArgs),
    /// Compare Laplace and Metropolis-Hastings utilities on random designs.
    Validate(RunArgs),
    /// Serve an efficiency surface over HTTP.
    Serve(ServeArgs),
    /// Repeat a run from its manifest and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SearchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// wilcoxon or ace
    #[arg(long, value_parser = parse_enum::<Acceptance>)]
    pub acceptance: Option<Acceptance>,
    /// mean or median
    #[arg(long, value_parser = parse_enum::<Summary>)]
    pub summary: Option<Summary>,
    /// stochastic or threshold
    #[arg(long, value_parser = parse_enum::<AcceptRule>)]
    pub rule: Option<AcceptRule>,
    #[arg(short = 'K', long)]
    pub k: Option<usize>,
    #[arg(short = 'T', long)]
    pub t: Option<usize>,
    #[arg(short = 'M', long)]
    pub m: Option<usize>,
    #[arg(short = 'B', long)]
    pub b: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Surface file written by `windows`.
    #[arg(long)]
    pub surface: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Design written by `search` and read back by `windows`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignFile {
    /// Full river design, existing sites included.
    pub sites: Vec<SiteId>,
    pub existing: Vec<SiteId>,
    pub transects: Vec<Transect>,
    pub summary: f64,
    pub std_error: f64,
    pub exchange_evaluations: usize,
}

impl DesignFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Exit code for an error: 2 for missing files, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingFile(_) => 2,
        _ => 1,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => execute("synth", &a, &serde_json::to_value(&a)?, |ctx| cmd_synth(ctx)).map(drop),
        Command::Search(a) => execute("search", &a.run, &serde_json::to_value(&a)?, |ctx| cmd_search(ctx, &a)).map(drop),
        Command::Windows(a) => execute("windows", &a, &serde_json::to_value(&a)?, |ctx| cmd_windows(ctx)).map(drop),
        Command::Validate(a) => execute("validate", &a, &serde_json::to_value(&a)?, |ctx| cmd_validate(ctx)).map(drop),
        Command::Serve(a) => cmd_serve(&a),
        Command::Replay(a) => replay(&a.manifest, &a.out),
    }
}

/// What a command needs: the parsed config, effective seed and output
/// directory, plus bookkeeping of the files it touches.
pub struct Context {
    pub cfg: Config,
    pub seed: u64,
    pub out: PathBuf,
    pub config_digest: String,
    inputs: Vec<PathBuf>,
    written: Vec<PathBuf>,
}

impl Context {
    /// Resolved path of a required data file, recorded as an input.
    fn input(&mut self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        let p = self.cfg.data_file(field, value)?;
        self.inputs.push(p.clone());
        Ok(p)
    }

    /// Path of an output file, recorded for the manifest.
    fn output(&mut self, name: &str) -> PathBuf {
        self.written.push(PathBuf::from(name));
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.output(name);
        std::fs::write(&p, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(&p, e))
    }

    fn evaluator(&self, method: PosteriorMethod) -> Result<Evaluator> {
        Ok(Evaluator::new(self.cfg.model_spec()?, method, self.cfg.search.summary, self.seed))
    }

    fn network(&mut self) -> Result<StreamNetwork> {
        let edges = self.input("edges", &self.cfg.data.edges.clone())?;
        let sites = self.input("sites", &self.cfg.data.sites.clone())?;
        StreamNetwork::from_csv_paths(&edges, &sites)
    }

    fn reef(&mut self, method: PosteriorMethod) -> Result<ReefProblem> {
        let path = self.input("reef", &self.cfg.data.reef.clone())?;
        let g = self.cfg.reef.grid;
        ReefProblem::new(ReefSurface::read_csv(&path)?, (g[0], g[1]), self.evaluator(method)?)
    }
}

/// Sets `key` at the top level of recorded options or under `run`.
fn set_run_field(options: &mut serde_json::Value, key: &str, value: serde_json::Value) -> bool {
    let slot = if options.get(key).is_some() { options.get_mut(key) } else { options.get_mut("run").and_then(|r| r.get_mut(key)) };
    match slot {
        Some(s) => {
            *s = value;
            true
        }
        None => false,
    }
}

fn execute<F>(command: &str, args: &RunArgs, options: &serde_json::Value, body: F) -> Result<RunManifest>
where
    F: FnOnce(&mut Context) -> Result<()>,
{
    let (cfg, bytes) = Config::load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut manifest = RunManifest::new(command, &args.config, &bytes, seed);
    let mut options = options.clone();
    set_run_field(&mut options, "config", serde_json::to_value(&manifest.config)?);
    manifest.options = options;
    let mut ctx = Context { cfg, seed, out: args.out.clone(), config_digest: manifest.config_digest.clone(), inputs: Vec::new(), written: Vec::new() };
    log::info!("{command}: seed {seed}, output in {}", args.out.display());
    body(&mut ctx)?;
    for p in &ctx.inputs {
        manifest.add_input(p)?;
    }
    manifest.finish(&ctx.out, &ctx.written)?;
    manifest.write(&ctx.out)?;
    Ok(manifest)
}

fn cmd_synth(ctx: &mut Context) -> Result<()> {
    match ctx.cfg.problem {
        ProblemKind::River => {
            let r = synth_river(&ctx.cfg.synth.river, ctx.seed)?;
            let edges = ctx.output("edges.csv");
            r.network.write_edges_csv(std::fs::File::create(&edges).map_err(|e| Error::io(&edges, e))?)?;
            let sites = ctx.output("sites.csv");
            r.network.write_sites_csv(std::fs::File::create(&sites).map_err(|e| Error::io(&sites, e))?)?;
            Neighbourhood::write_csv(&r.neighbourhoods, &ctx.output("neighbourhoods.csv"))?;
        }
        ProblemKind::Reef => {
            let surface = synth_reef(&ctx.cfg.synth.reef, ctx.seed)?;
            surface.write_csv(&ctx.output("reef.csv"))?;
        }
    }
    Ok(())
}

/// Candidate transects: midpoints on an even grid kept half a transect
/// from the edges where the reef allows, crossed with the angles.
pub fn reef_candidates(cfg: &Config, b: &Bounds) -> Vec<Transect> {
    let r = &cfg.reef;
    let axis = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        let margin = (r.length / 2.0).min((hi - lo) / 2.0);
        let (a, z) = (lo + margin, hi - margin);
        (0..n).map(|i| if n == 1 { 0.5 * (a + z) } else { a + (z - a) * i as f64 / (n - 1) as f64 }).collect()
    };
    let es = axis(b.min_e, b.max_e, r.midpoint_grid[0]);
    let ns = axis(b.min_n, b.max_n, r.midpoint_grid[1]);
    let mut out = Vec::new();
    for &n in &ns {
        for &e in &es {
            for &angle in &r.angles {
                out.push(Transect { midpoint: (e, n), angle, length: r.length, radius: 0.0, spacing: r.spacing });
            }
        }
    }
    out
}

/// River candidates with the existing sites first; returns the ids and the
/// indices of the existing ones.
fn river_candidates(cfg: &Config, net: &StreamNetwork) -> Result<(Vec<SiteId>, Vec<usize>)> {
    let existing: Vec<SiteId> = cfg.search.existing.clone();
    for &s in &existing {
        net.site(s)?;
    }
    let mut ids = existing.clone();
    let pool: Vec<SiteId> = match &cfg.search.candidates {
        Some(c) => c.clone(),
        None => net.sites().iter().map(|s| s.id).collect(),
    };
    for s in pool {
        net.site(s)?;
        if !ids.contains(&s) {
            ids.push(s);
        }
    }
    Ok((ids, (0..existing.len()).collect()))
}

fn write_starts(ctx: &mut Context, res: &SearchResult, label_of: impl Fn(usize) -> String) -> Result<()> {
    let mut body = String::from("start,design,summary,std_error\n");
    for s in &res.starts {
        let d: Vec<String> = s.design.iter().map(|&i| label_of(i)).collect();
        body.push_str(&format!("{},{},{},{}\n", s.start, d.join(";"), s.summary, s.std_error));
    }
    let p = ctx.output("starts.csv");
    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
}

fn cmd_search(ctx: &mut Context, a: &SearchArgs) -> Result<()> {
    let s = &mut ctx.cfg.search;
    s.acceptance = a.acceptance.unwrap_or(s.acceptance);
    s.summary = a.summary.unwrap_or(s.summary);
    s.rule = a.rule.unwrap_or(s.rule);
    s.k = a.k.unwrap_or(s.k);
    s.t = a.t.unwrap_or(s.t);
    s.m = a.m.unwrap_or(s.m);
    s.b = a.b.unwrap_or(s.b);
    s.b_final = s.b_final.max(s.b);
    ctx.cfg.validate()?;
    let sc = ctx.cfg.search.search_config(ctx.seed);
    let gamma = ctx.cfg.search.gamma;
    let method = ctx.cfg.model.method;
    let (res, design) = match ctx.cfg.problem {
        ProblemKind::River => {
            let net = ctx.network()?;
            let (ids, fixed) = river_candidates(&ctx.cfg, &net)?;
            let problem = RiverProblem::new(net, ctx.evaluator(method)?)?;
            let u = Cached::new(RiverSearch { problem: &problem, sites: ids.clone() });
            let res = coordinate_exchange(&u, ids.len(), gamma, &fixed, &sc)?;
            let mut sites: Vec<SiteId> = fixed.iter().chain(&res.best.design).map(|&i| ids[i]).collect();
            sites.sort_unstable();
            let design = DesignFile { sites, existing: ctx.cfg.search.existing.clone(), ..Default::default() };
            write_starts(ctx, &res, |i| ids[i].to_string())?;
            (res, design)
        }
        ProblemKind::Reef => {
            let problem = ctx.reef(method)?;
            let cands = reef_candidates(&ctx.cfg, &problem.bounds);
            let u = Cached::new(ReefSearch { problem: &problem, candidates: cands.clone() });
            let res = coordinate_exchange(&u, cands.len(), gamma, &[], &sc)?;
            let design = DesignFile { transects: res.best.design.iter().map(|&i| cands[i]).collect(), ..Default::default() };
            let mut body = String::from("index,easting,northing,angle,length\n");
            for (i, t) in cands.iter().enumerate() {
                body.push_str(&format!("{i},{},{},{},{}\n", t.midpoint.0, t.midpoint.1, t.angle, t.length));
            }
            let p = ctx.output("candidates.csv");
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            write_starts(ctx, &res, |i| i.to_string())?;
            (res, design)
        }
    };
    log::info!("best summary {:.4} after {} exchange evaluations", res.best.summary, res.exchange_evaluations);
    let design = DesignFile { summary: res.best.summary, std_error: res.best.std_error, exchange_evaluations: res.exchange_evaluations, ..design };
    ctx.write_json("best_design.json", &design)?;
    res.write_trace_csv(&ctx.output("trace.csv"))
}

fn current_design(ctx: &mut Context) -> Result<DesignFile> {
    match ctx.cfg.data.current_design.clone() {
        Some(_) => {
            let p = ctx.input("current_design", &ctx.cfg.data.current_design.clone())?;
            DesignFile::read(&p)
        }
        None => Ok(DesignFile { sites: ctx.cfg.search.existing.clone(), ..Default::default() }),
    }
}

fn space_for(ctx: &Context, windows: Vec<Window>) -> Result<WindowSpace> {
    let w = &ctx.cfg.windows;
    let q = windows.len();
    WindowSpace::new(windows, vec![w.train_levels; q], vec![w.predict_levels; q])
}

fn cmd_windows(ctx: &mut Context) -> Result<()> {
    let method = ctx.cfg.model.method;
    let current = current_design(ctx)?;
    let (m, seed) = (ctx.cfg.windows.m, ctx.seed);
    match ctx.cfg.problem {
        ProblemKind::River => {
            let net = ctx.network()?;
            let path = ctx.input("neighbourhoods", &ctx.cfg.data.neighbourhoods.clone())?;
            let mut nbs = Neighbourhood::read_csv(&path)?;
            let names = &ctx.cfg.windows.windows;
            if !names.is_empty() {
                nbs = names
                    .iter()
                    .map(|n| nbs.iter().find(|b| &b.name == n).cloned().ok_or_else(|| Error::UnknownWindow(n.clone())))
                    .collect::<Result<_>>()?;
            }
            let windows = nbs
                .iter()
                .map(|b| Ok(Window { name: b.name.clone(), kind: WindowKind::Arc, lo: 0.0, hi: b.length(&net)? }))
                .collect::<Result<Vec<_>>>()?;
            let space = space_for(ctx, windows)?;
            let problem = RiverProblem::new(net, ctx.evaluator(method)?)?;
            let baseline = || -> Result<f64> { Ok(problem.sample(&current.sites, m, grid_seed(seed))?.summary()) };
            let u = RiverWindows { problem: &problem, neighbourhoods: nbs, current: current.sites.clone() };
            window_outputs(ctx, &u, &space, baseline)
        }
        ProblemKind::Reef => {
            if current.transects.is_empty() {
                return Err(Error::InvalidDesign("reef windows need transects in data.current_design".into()));
            }
            let problem = ctx.reef(method)?;
            let names = &ctx.cfg.windows.windows;
            if !names.is_empty() && names.len() != current.transects.len() {
                return Err(Error::Config(format!("{} window names for {} transects", names.len(), current.transects.len())));
            }
            let windows = (0..current.transects.len())
                .map(|i| Window {
                    name: names.get(i).cloned().unwrap_or_else(|| format!("r{}", i + 1)),
                    kind: WindowKind::Interval,
                    lo: 0.0,
                    hi: ctx.cfg.windows.r_max,
                })
                .collect();
            let space = space_for(ctx, windows)?;
            let u = ReefWindows { problem: &problem, transects: current.transects.clone(), replicates: ctx.cfg.windows.replicates };
            let zeros = vec![0.0; current.transects.len()];
            let baseline = || u.summary(&zeros, m, grid_seed(seed));
            window_outputs(ctx, &u, &space, baseline)
        }
    }
}

#[derive(Serialize)]
struct Hyperparams<'a> {
    nugget: f64,
    inv_scales: &'a [f64],
    cv_score: f64,
    grid: &'a ZetaGrid,
}

fn window_outputs<U: WindowUtility>(ctx: &mut Context, u: &U, space: &WindowSpace, baseline: impl FnOnce() -> Result<f64>) -> Result<()> {
    let w = ctx.cfg.windows.clone();
    let x = space.training_points();
    let y = build_utility_grid(u, space, w.m, ctx.seed)?;
    let mut body: String = (1..=space.q()).map(|j| format!("coord_{j},")).collect();
    body.push_str("utility\n");
    for (p, v) in x.iter().zip(&y) {
        let coords: Vec<String> = p.iter().map(f64::to_string).collect();
        body.push_str(&format!("{},{v}\n", coords.join(",")));
    }
    let p = ctx.output("utility_grid.csv");
    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;

    let grid = ZetaGrid::default_for(&x, &y, w.zeta_levels)?;
    let em = fit_gp(x, y, &grid)?;
    ctx.write_json("hyperparams.json", &Hyperparams { nugget: em.hyper.nugget, inv_scales: &em.hyper.inv_scales, cv_score: em.cv_score, grid: &grid })?;

    let base = match (w.normalisation, w.baseline) {
        (crate::config::NormalisationMode::Baseline, None) => baseline()?,
        (_, b) => b.unwrap_or(1.0),
    };
    let surface = efficiency_surface(&em, space, w.normalisation(base), &w.thresholds)?;
    debug_assert_eq!(surface.points, product_grid(&space.prediction_levels()));
    surface.write_csv(&ctx.output("surface.csv"))?;
    surface.write_contours(&ctx.output("contours.csv"))?;
    for p in crate::plot::render_all(&surface, &w.thresholds, &ctx.out)? {
        ctx.written.push(PathBuf::from(p.file_name().expect("plot file name")));
    }
    let file = SurfaceFile { config_digest: ctx.config_digest.clone(), surface };
    file.write(&ctx.output(SURFACE_FILE))
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub design: usize,
    pub members: Vec<String>,
    pub laplace: f64,
    pub mh: f64,
}

/// Utilities of random designs under both posterior approximations.
pub fn validate_designs<A, B>(laplace: &A, mh: &B, n: usize, size: usize, designs: usize, m: usize, seed: u64) -> Result<Vec<ValidationRow>>
where
    A: DesignUtility + ?Sized,
    B: DesignUtility + ?Sized,
{
    if size > n {
        return Err(Error::InvalidDesign(format!("designs of {size} from {n} candidates")));
    }
    let useed = rng::derive(seed, &[label::VALIDATE, u64::MAX]);
    (0..designs)
        .map(|i| {
            let mut r = rng::stream(seed, &[label::VALIDATE, i as u64]);
            let mut d = sample(&mut r, n, size).into_vec();
            d.sort_unstable();
            let lap = crate::utility::summarize(&laplace.draws(&d, m, useed)?, Summary::Median);
            let mhv = crate::utility::summarize(&mh.draws(&d, m, useed)?, Summary::Median);
            Ok(ValidationRow { design: i, members: d.iter().map(|v| v.to_string()).collect(), laplace: lap, mh: mhv })
        })
        .collect()
}

fn cmd_validate(ctx: &mut Context) -> Result<()> {
    let v = ctx.cfg.validate.clone();
    let mh = PosteriorMethod::Mh { iterations: v.mh_iterations };
    let rows = match ctx.cfg.problem {
        ProblemKind::River => {
            let net = ctx.network()?;
            let ids: Vec<SiteId> = net.sites().iter().map(|s| s.id).collect();
            let lap = RiverProblem::new(net.clone(), ctx.evaluator(PosteriorMethod::Laplace)?)?;
            let mcmc = RiverProblem::new(net, ctx.evaluator(mh)?)?;
            let a = RiverSearch { problem: &lap, sites: ids.clone() };
            let b = RiverSearch { problem: &mcmc, sites: ids.clone() };
            let mut rows = validate_designs(&a, &b, ids.len(), v.design_size, v.designs, v.m, ctx.seed)?;
            for r in &mut rows {
                r.members = r.members.iter().map(|i| ids[i.parse::<usize>().expect("index")].to_string()).collect();
            }
            rows
        }
        ProblemKind::Reef => {
            let lap = ctx.reef(PosteriorMethod::Laplace)?;
            let mcmc = ctx.reef(mh)?;
            let cands = reef_candidates(&ctx.cfg, &lap.bounds);
            let a = ReefSearch { problem: &lap, candidates: cands.clone() };
            let b = ReefSearch { problem: &mcmc, candidates: cands.clone() };
            validate_designs(&a, &b, cands.len(), v.design_size, v.designs, v.m, ctx.seed)?
        }
    };
    let mut body = String::from("design,members,laplace,mh\n");
    for r in &rows {
        body.push_str(&format!("{},{},{},{}\n", r.design, r.members.join(";"), r.laplace, r.mh));
    }
    let p = ctx.output("validation.csv");
    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r.laplace, r.mh)).unzip();
    let r = pearson(&x, &y);
    log::info!("Laplace vs MH correlation {r:.4} over {} designs", rows.len());
    ctx.write_json("validation.json", &serde_json::json!({ "designs": rows.len(), "pearson": r }))
}

fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let cfg = a.config.as_ref().map(|p| Config::load(p).map(|c| c.0)).transpose()?;
    let surface = match (&a.surface, &cfg) {
        (Some(s), _) => s.clone(),
        (None, Some(c)) => c.serve.surface.as_ref().map(|p| c.resolve(p)).ok_or_else(|| Error::Config("serve.surface is not set".into()))?,
        (None, None) => return Err(Error::Config("give --surface or --config".into())),
    };
    if !surface.exists() {
        return Err(Error::MissingFile(surface));
    }
    let env_port = std::env::var(PORT_ENV).ok().and_then(|v| v.parse().ok());
    let port = a.port.or(env_port).or(cfg.map(|c| c.serve.port)).unwrap_or(8080);
    let state = ServiceState::load(&surface)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| Error::Config(e.to_string()))?;
    rt.block_on(crate::service::serve(state, SocketAddr::new(a.host, port)))
}

/// Repeats the run recorded in `manifest` into `out` and checks that every
/// output matches byte for byte.
pub fn replay(manifest: &Path, out: &Path) -> Result<()> {
    let old = RunManifest::read(manifest)?;
    let bytes = std::fs::read(&old.config).map_err(|e| Error::io(&old.config, e))?;
    if crate::manifest::digest(&bytes) != old.config_digest {
        return Err(Error::Config(format!("{} has changed since the recorded run", old.config.display())));
    }
    let stale = old.stale_inputs();
    if !stale.is_empty() {
        return Err(Error::Config(format!("inputs differ from the recorded run:\n  {}", stale.join("\n  "))));
    }
    let mut options = old.options.clone();
    let out_value = serde_json::to_value(out)?;
    if !set_run_field(&mut options, "out", out_value) {
        return Err(Error::Config("manifest has no recorded options".into()));
    }
    let command = match old.command.as_str() {
        "synth" => Command::Synth(from_options(options)?),
        "search" => Command::Search(from_options(options)?),
        "windows" => Command::Windows(from_options(options)?),
        "validate" => Command::Validate(from_options(options)?),
        other => return Err(Error::Config(format!("cannot replay `{other}`"))),
    };
    run(command)?;
    let new = RunManifest::read(&out.join(MANIFEST_FILE))?;
    let diffs = old.output_differences(&new);
    if diffs.is_empty() {
        log::info!("replay matched {} outputs", new.outputs.len());
        Ok(())
    } else {
        Err(Error::Config(format!("replay differs:\n  {}", diffs.join("\n  "))))
    }
}

fn from_options<T: DeserializeOwned>(v: serde_json::Value) -> Result<T> {
    Ok(serde_json::from_value(v)?)
}
