use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use regionshop::eval::{self, ExperimentConfig, ExperimentData};
use regionshop::factorize::{self, Hyperparams, ModelDocument, RegularizerSpec, Variant};
use regionshop::gravity::{self, CombinedWeightMatrix, InteractionMatrix, TransportMode};
use regionshop::grid::RegionGrid;
use regionshop::nmf::{self, NmfOptions, PatternBasis};
use regionshop::patterns::{self, MobilityPatternMatrix, ShoppingPatternMatrix};
use regionshop::seed::{child_seed, named_seed};
use regionshop::synth;
use serde::Serialize;

use crate::config::{InputPaths, RunConfig, OUTPUT_DIR_ENV};
use crate::error::{CliError, Stage};
use crate::heatmap::Heatmap;
use crate::io;
use crate::{
    Cli, Command, EvaluateArgs, ExportArgs, ExtractArgs, FitGravityArgs, HyperArgs, PredictArgs, SynthArgs,
    TrainArgs,
};

pub const P_S: &str = "p_s.csv";
pub const P_M: &str = "p_m.csv";
pub const R_S: &str = "r_s.csv";
pub const R_S_MASK: &str = "r_s_mask.csv";
pub const R_M: &str = "r_m.csv";
pub const TOWER_COEFFICIENTS: &str = "tower_coefficients.csv";
pub const USER_COEFFICIENTS: &str = "user_coefficients.csv";
pub const TOP_SHOPPING: &str = "top_shopping.csv";
pub const TOP_MOBILITY: &str = "top_mobility.csv";
pub const W_INTERACTION: &str = "w_interaction.csv";
pub const MODEL: &str = "model.json";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const HEATMAPS: &str = "heatmaps";
pub const LIFESTYLE_TOP: &str = "lifestyle_top_categories.csv";
pub const SYNTH_CONFIG: &str = "run_config.json";
pub const TRUTH: &str = "truth.json";

const TOP_K: usize = 10;

pub fn gravity_file(mode: TransportMode) -> String {
    format!("gravity_{mode}.json")
}

pub fn interaction_file(mode: TransportMode) -> String {
    format!("q_{mode}.csv")
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    seed: Option<u64>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn grid(&self) -> Result<RegionGrid, CliError> {
        RegionGrid::from_spec(&self.cfg.grid).stage("grid")
    }

    fn require_seed(&self, command: &str) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage(format!("{command} requires --seed")))
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone());
    let ctx = Ctx {
        seed: cli.seed,
        cfg,
        out,
    };
    match cli.command {
        Command::Extract(a) => extract(ctx, a),
        Command::FitGravity(a) => fit_gravity(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Evaluate(a) => evaluate(ctx, a),
        Command::Predict(a) => predict(ctx, a),
        Command::Synth(a) => synthesize(ctx, a),
        Command::ExportHeatmap(a) => export_heatmap(ctx, a),
    }
}

fn input(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let p = flag.or_else(|| configured.clone()).ok_or_else(|| {
        CliError::Input(format!(
            "no {name} input given (flag --{name} or config inputs.{name})"
        ))
    })?;
    if !p.exists() {
        return Err(CliError::Input(format!(
            "{name} input {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}

fn write_top_table(path: &Path, basis: &PatternBasis, label: &str) -> Result<(), CliError> {
    let mut out = format!("{label},rank,category,weight\n");
    for k in 0..basis.n_patterns() {
        for (rank, (cat, w)) in nmf::top_categories(basis, k, TOP_K)?.into_iter().enumerate() {
            let _ = writeln!(out, "{k},{},{cat},{w}", rank + 1);
        }
    }
    io::write_atomic(path, out.as_bytes())
}

fn extract(ctx: Ctx, a: ExtractArgs) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let browsing_path = input(a.browsing, &cfg.inputs.browsing, "browsing")?;
    let towers_path = input(a.towers, &cfg.inputs.towers, "towers")?;
    let checkins_path = input(a.checkins, &cfg.inputs.checkins, "checkins")?;
    let n = a.n.unwrap_or(cfg.n);
    let m = a.m.unwrap_or(cfg.m);
    let grid = ctx.grid()?;
    let stream = named_seed(ctx.seed.or(cfg.seed).unwrap_or(0), "extract");
    let opts = |k: u64| NmfOptions {
        max_iters: a.nmf_iters.unwrap_or(cfg.nmf.max_iters),
        tol: cfg.nmf.tol,
        seed: child_seed(stream, &[k]),
    };

    let browsing = io::read_browsing(&browsing_path)?;
    let towers = io::read_towers(&towers_path)?;
    let counts = patterns::build_count_matrix(
        browsing
            .iter()
            .map(|b| (b.location_id.as_str(), b.product_category_id)),
        cfg.n_product_categories,
    )
    .stage(&format!("extract ({})", browsing_path.display()))?;
    if let Some(id) = counts.row_keys.iter().find(|k| !towers.contains_key(*k)) {
        return Err(CliError::Input(format!(
            "extract: location_id `{id}` in {} has no entry in {}",
            browsing_path.display(),
            towers_path.display()
        )));
    }
    let shop_fit = nmf::nmf(&counts.values, n, &opts(0)).stage("extract (shopping patterns)")?;
    let shop = patterns::aggregate_shopping(&shop_fit.coefficients, &counts.row_keys, &towers, &grid)
        .stage("extract (shopping aggregation)")?;

    let checkins = io::read_checkins(&checkins_path)?;
    let user_counts = patterns::build_count_matrix(
        checkins.iter().map(|c| (c.user_id.as_str(), c.poi_category_id)),
        cfg.n_poi_categories,
    )
    .stage(&format!("extract ({})", checkins_path.display()))?;
    let mob_fit = nmf::nmf(&user_counts.values, m, &opts(1)).stage("extract (mobility patterns)")?;
    let shares = patterns::activity_shares(&checkins, &grid);
    let user_coef = patterns::align_rows(&mob_fit.coefficients, &user_counts.row_keys, &shares.user_ids)
        .stage("extract (mobility aggregation)")?;
    let mob = patterns::aggregate_mobility(&shares, &user_coef).stage("extract (mobility aggregation)")?;

    io::write_matrix(&ctx.path(P_S), "pattern", None, &shop_fit.basis.0)?;
    io::write_matrix(&ctx.path(P_M), "pattern", None, &mob_fit.basis.0)?;
    io::write_matrix(
        &ctx.path(TOWER_COEFFICIENTS),
        "location_id",
        Some(&counts.row_keys),
        &shop_fit.coefficients.0,
    )?;
    io::write_matrix(
        &ctx.path(USER_COEFFICIENTS),
        "user_id",
        Some(&user_counts.row_keys),
        &mob_fit.coefficients.0,
    )?;
    io::write_matrix(&ctx.path(R_S), "region", None, &shop.values)?;
    io::write_matrix(&ctx.path(R_S_MASK), "region", None, &shop.mask)?;
    io::write_matrix(&ctx.path(R_M), "region", None, &mob.0)?;
    write_top_table(&ctx.path(TOP_SHOPPING), &shop_fit.basis, "pattern")?;
    write_top_table(&ctx.path(TOP_MOBILITY), &mob_fit.basis, "pattern")?;
    println!(
        "extract: {} towers -> {} observed regions, {} users -> {} regions with activity",
        counts.n_rows(),
        shop.non_empty_rows().len(),
        user_counts.n_rows(),
        mob.0
            .rows()
            .into_iter()
            .filter(|r| r.iter().any(|&v| v > 0.0))
            .count()
    );
    Ok(())
}

fn fit_gravity(ctx: Ctx, a: FitGravityArgs) -> Result<(), CliError> {
    let trips_path = input(a.trips, &ctx.cfg.inputs.trips, "trips")?;
    let trips = io::read_trips(&trips_path)?;
    let grid = ctx.grid()?;
    let dis = grid.center_distance();
    let r = grid.len();
    let mut q = Vec::new();
    for mode in [TransportMode::Taxi, TransportMode::Bus] {
        let flows = gravity::build_flows(&trips, &grid, mode);
        if flows.total() == 0.0 {
            eprintln!("fit-gravity: no in-grid {mode} trips; {mode} contributes no interaction");
            q.push(InteractionMatrix(Array2::zeros((r, r))));
            continue;
        }
        let params = gravity::fit_gravity(&flows, &dis, mode).stage(&format!("fit-gravity ({mode})"))?;
        let qm =
            gravity::interaction_matrix(&params, &flows, &dis).stage(&format!("fit-gravity ({mode})"))?;
        io::write_json(&ctx.path(&gravity_file(mode)), &params)?;
        io::write_matrix(&ctx.path(&interaction_file(mode)), "origin", None, &qm.0)?;
        println!(
            "fit-gravity {mode}: a = {:.4}, b = {:.4}, g = {:.4}/km, ln c = {:.4} ({} pairs)",
            params.a, params.b, params.g, params.ln_c, params.n_pairs_used
        );
        q.push(qm);
    }
    if q.iter().all(|m| m.0.iter().all(|&v| v == 0.0)) {
        return Err(CliError::Input(format!(
            "fit-gravity: no trips in {} fall inside the grid",
            trips_path.display()
        )));
    }
    let w = gravity::combined_weights(&q[0], &q[1], &grid).stage("fit-gravity (combined weights)")?;
    io::write_matrix(&ctx.path(W_INTERACTION), "region", None, &w.0)
}

fn load_region_matrix(path: &Path, rows: usize) -> Result<Array2<f64>, CliError> {
    let (_, m) = io::read_matrix(path)?;
    if m.nrows() != rows {
        return Err(CliError::Input(format!(
            "{}: {} rows, but the grid has {rows} regions",
            path.display(),
            m.nrows()
        )));
    }
    Ok(m)
}

fn load_shop(ctx: &Ctx, r: usize) -> Result<ShoppingPatternMatrix, CliError> {
    let values = load_region_matrix(&ctx.path(R_S), r)?;
    let mask = load_region_matrix(&ctx.path(R_S_MASK), r)?;
    ShoppingPatternMatrix::new(values, mask).stage("load shopping matrix")
}

fn load_data(ctx: &Ctx, grid: &RegionGrid, variants: &[Variant]) -> Result<ExperimentData, CliError> {
    let r = grid.len();
    let shop = load_shop(ctx, r)?;
    let mob =
        MobilityPatternMatrix::new(load_region_matrix(&ctx.path(R_M), r)?).stage("load mobility matrix")?;
    let neighbor = if variants.contains(&Variant::CmfN) {
        Some(gravity::neighbor_weights(grid).stage("neighbor weights")?)
    } else {
        None
    };
    let interaction = if variants.contains(&Variant::CmfI) {
        let p = ctx.path(W_INTERACTION);
        if !p.exists() {
            return Err(CliError::Input(format!(
                "{} is missing; run fit-gravity before using cmf-i",
                p.display()
            )));
        }
        let w = load_region_matrix(&p, r)?;
        if w.ncols() != r {
            return Err(CliError::Input(format!("{}: expected {r} columns", p.display())));
        }
        Some(CombinedWeightMatrix(w))
    } else {
        None
    };
    Ok(ExperimentData {
        shop,
        mob,
        neighbor,
        interaction,
    })
}

fn hyperparams(base: &Hyperparams, a: &HyperArgs) -> Hyperparams {
    let mut h = base.clone();
    if let Some(v) = a.l {
        h.l = v;
    }
    if let Some(v) = a.lambda1 {
        h.lambda1 = v;
    }
    if let Some(v) = a.lambda2 {
        h.lambda2 = v;
    }
    if let Some(v) = a.alpha {
        h.alpha = v;
    }
    if let Some(v) = a.max_iters {
        h.max_iters = v;
    }
    if let Some(v) = a.epsilon {
        h.epsilon = v;
    }
    if let Some(v) = a.gradient_mode {
        h.gradient_mode = v;
    }
    h
}

fn regularizer(data: &ExperimentData, variant: Variant) -> Result<RegularizerSpec, CliError> {
    let spec = match variant {
        Variant::Mf | Variant::Cmf => RegularizerSpec::none(),
        Variant::CmfN => RegularizerSpec::neighbor(data.neighbor.clone().expect("loaded for cmf-n"))?,
        Variant::CmfI => RegularizerSpec::interaction(data.interaction.clone().expect("loaded for cmf-i"))?,
    };
    Ok(spec)
}

fn train(ctx: Ctx, a: TrainArgs) -> Result<(), CliError> {
    let seed = ctx.require_seed("train")?;
    let variant = a.variant.unwrap_or(ctx.cfg.variant);
    let mut h = hyperparams(&ctx.cfg.hyperparams, &a.hyper);
    h.seed = named_seed(seed, "train");
    let grid = ctx.grid()?;
    let data = load_data(&ctx, &grid, &[variant])?;
    let reg = regularizer(&data, variant).stage("train")?;
    let out = factorize::train(&data.shop, &data.mob, &reg, &h, variant).stage("train")?;

    let mut trace = String::from("iter,loss,gamma\n");
    for e in out.trace.entries() {
        let _ = writeln!(trace, "{},{},{}", e.iteration, e.loss, e.gamma);
    }
    io::write_json(&ctx.path(MODEL), &ModelDocument::from_outcome(&out))?;
    io::write_atomic(&ctx.path(LOSS_TRACE), trace.as_bytes())?;
    println!(
        "train {}: {} accepted steps, objective {:.6e} -> {:.6e} ({:?})",
        variant.label(),
        out.trace.accepted_steps(),
        out.trace.initial(),
        out.trace.last(),
        out.stop
    );
    Ok(())
}

fn evaluate(ctx: Ctx, a: EvaluateArgs) -> Result<(), CliError> {
    let seed = ctx.require_seed("evaluate")?;
    let settings = &ctx.cfg.evaluation;
    let variants = a.variants.unwrap_or_else(|| settings.variants.clone());
    let mut seen = HashSet::new();
    if variants.is_empty() || !variants.iter().all(|v| seen.insert(*v)) {
        return Err(CliError::Usage(
            "evaluate: variants must be non-empty and distinct".into(),
        ));
    }
    let cfg = ExperimentConfig {
        variants,
        fractions: a.fractions.unwrap_or_else(|| settings.fractions.clone()),
        repeats: a.repeats.unwrap_or(settings.repeats),
        hyperparams: hyperparams(&ctx.cfg.hyperparams, &a.hyper),
        seed: named_seed(seed, "evaluate"),
    };
    let grid = ctx.grid()?;
    let data = load_data(&ctx, &grid, &cfg.variants)?;
    let report = eval::run_experiment(&data, &cfg).stage("evaluate")?;
    let table = eval::render_table(&report);
    io::write_json(&ctx.path(REPORT_JSON), &report)?;
    io::write_atomic(&ctx.path(REPORT_TXT), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn predict(ctx: Ctx, a: PredictArgs) -> Result<(), CliError> {
    let model_path = a.model.unwrap_or_else(|| ctx.path(MODEL));
    let doc: ModelDocument = io::read_json(&model_path)?;
    let model = doc
        .to_model()
        .stage(&format!("predict ({})", model_path.display()))?;
    let grid = ctx.grid()?;
    let (r, n, _, l) = model.dims();
    if r != grid.len() {
        return Err(CliError::Input(format!(
            "predict: model has {r} regions, grid has {}",
            grid.len()
        )));
    }
    let shop = load_shop(&ctx, r)?;
    if shop.n_patterns() != n {
        return Err(CliError::Input(format!(
            "predict: model has {n} shopping patterns, {R_S} has {}",
            shop.n_patterns()
        )));
    }
    let pred = factorize::predict(&model);
    let dir = ctx.path(HEATMAPS);
    for j in 0..n {
        let values = (0..r)
            .map(|i| {
                if shop.mask[[i, j]] != 0.0 {
                    shop.values[[i, j]]
                } else {
                    pred[[i, j]]
                }
            })
            .collect();
        Heatmap::new(format!("shopping_pattern_{j:02}"), values, &grid)?.write(&dir, &grid, a.pgm)?;
    }

    let basis_path = ctx.path(P_S);
    if basis_path.exists() {
        let (_, p_s) = io::read_matrix(&basis_path)?;
        if p_s.nrows() == n {
            // category weights of each lifestyle through the shopping view
            let lifestyle = model.v1.t().dot(&p_s);
            write_top_table(&ctx.path(LIFESTYLE_TOP), &PatternBasis(lifestyle), "lifestyle")?;
        }
    }
    println!(
        "predict: {n} heatmaps of {r} regions ({l} lifestyles) in {}",
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TruthDocument<'a> {
    grid: regionshop::grid::GridSpec,
    truth: &'a synth::SynthTruth,
    p_s: &'a Array2<f64>,
    p_m: &'a Array2<f64>,
}

fn synthesize(ctx: Ctx, a: SynthArgs) -> Result<(), CliError> {
    let mut settings = ctx.cfg.synth.clone();
    if let Some(v) = a.rows {
        settings.city.grid.n_rows = v;
    }
    if let Some(v) = a.cols {
        settings.city.grid.n_cols = v;
    }
    if let Some(v) = a.trips_per_mode {
        for t in &mut settings.city.gravity {
            t.n_trips = v;
        }
    }
    let seed = ctx.seed.or(ctx.cfg.seed).unwrap_or(0);
    let stream = named_seed(seed, "synth");
    settings.city.seed = stream;
    let city = synth::generate(&settings.city).stage("synth")?;
    let rec = synth::emit_records(&city, &settings.records, child_seed(stream, &[1])).stage("synth")?;

    let files = InputPaths {
        browsing: Some("browsing.csv".into()),
        towers: Some("towers.csv".into()),
        checkins: Some("checkins.csv".into()),
        trips: Some("trips.csv".into()),
    };
    let name = |p: &Option<PathBuf>| ctx.path(p.as_ref().unwrap().to_str().unwrap());
    io::write_browsing(&name(&files.browsing), &rec.browsing)?;
    io::write_towers(&name(&files.towers), &rec.towers)?;
    io::write_checkins(&name(&files.checkins), &rec.checkins)?;
    io::write_trips(&name(&files.trips), &city.trips)?;
    io::write_json(
        &ctx.path(TRUTH),
        &TruthDocument {
            grid: city.grid.spec(),
            truth: &city.truth,
            p_s: &rec.p_s,
            p_m: &rec.p_m,
        },
    )?;
    let run = RunConfig {
        grid: city.grid.spec(),
        n: settings.city.n,
        m: settings.city.m,
        n_product_categories: settings.records.c_s,
        n_poi_categories: settings.records.c_m,
        hyperparams: Hyperparams {
            l: settings.city.l,
            ..ctx.cfg.hyperparams.clone()
        },
        inputs: files,
        output_dir: PathBuf::from("."),
        seed: Some(seed),
        synth: settings,
        ..ctx.cfg.clone()
    };
    io::write_atomic(&ctx.path(SYNTH_CONFIG), (run.to_json() + "\n").as_bytes())?;
    println!(
        "synth: {} regions ({} observed), {} browsing events, {} check-ins, {} trips -> {}",
        city.grid.len(),
        city.shop.non_empty_rows().len(),
        rec.browsing.len(),
        rec.checkins.len(),
        city.trips.len(),
        ctx.out.display()
    );
    Ok(())
}

fn export_heatmap(ctx: Ctx, a: ExportArgs) -> Result<(), CliError> {
    let grid = ctx.grid()?;
    let m = load_region_matrix(&a.matrix, grid.len())?;
    let columns = a.columns.unwrap_or_else(|| (0..m.ncols()).collect());
    let dir = ctx.path(HEATMAPS);
    for &j in &columns {
        if j >= m.ncols() {
            return Err(CliError::Input(format!(
                "export-heatmap: column {j} out of range for {} columns",
                m.ncols()
            )));
        }
        Heatmap::new(format!("{}_{j:02}", a.prefix), m.column(j).to_vec(), &grid)?
            .write(&dir, &grid, a.pgm)?;
    }
    println!("export-heatmap: {} heatmaps in {}", columns.len(), dir.display());
    Ok(())
}
