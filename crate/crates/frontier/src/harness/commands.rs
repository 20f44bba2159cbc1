//! The five CLI entry points: train, eval, verify, compare, sweep.
//!
//! Exit-code contract (mapped in the binary): 0 success, 1 failed
//! verification checks, 2 invalid input or config, 3 divergence with the
//! last-good checkpoint retained.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{self, checkpoint, TrainConfig};
use crate::boxworld::{trajectory_csv_row, Transition, TRAJECTORY_CSV_HEADER};
use crate::diagnostics::{
    concentration_bound_report, flatten, median, no_sticking_value, off_manifold_mass,
    scripted_reference_run, BandSpec, ConcentrationReport, DiagnosticsReport,
    ReferenceController, VisitationGrid,
};
use crate::harness::config::{
    canonical_toml, config_hash, load_config, parse_override_value, path_is_scalar, set_path,
    short_hash, RunConfig, ShapingSpec,
};
use crate::harness::record::{
    out_root, MetricsWriter, RunMeta, RunPaths, SeedDiagnostics,
};
use crate::oracle::{curvature_bound, psi, Region, ScalarField, UncertaintyField};
use crate::sampling::{stream, stream_rng};
use crate::shaping::{
    alpha, beta, circle_loop, closed_loop_integrals, decomposition_residual, ShapingConfig,
};
use crate::{linalg, Error, Result};

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cli_train(config_path: &Path, sets: &[String]) -> Result<PathBuf> {
    let (cfg, canonical, hash) = load_config(config_path, sets)?;
    cfg.validate()?;
    run_experiment(&cfg, &canonical, &hash, &out_root(&cfg))
}

/// Train every seed of a validated config and write the full run record.
/// Returns the run directory; divergence aborts the remaining seeds after
/// recording the status.
pub fn run_experiment(
    cfg: &RunConfig,
    canonical: &str,
    hash: &str,
    root: &Path,
) -> Result<PathBuf> {
    let field = cfg.build_field()?;
    let shaping = cfg.build_shaping()?;
    let band = cfg.band_for(&field, &shaping)?;
    let paths = RunPaths::new(root, &cfg.experiment, hash);
    std::fs::create_dir_all(&paths.run_dir)?;
    std::fs::write(paths.config_file(), canonical)?;
    let mut meta = RunMeta::new(hash, &cfg.seeds);
    meta.write(&paths.meta_file())?;

    // Curvature is a property of the field alone; a fixed stream keeps it
    // identical across seeds and reruns.
    let region = Region::unit_box(cfg.field.dim).inflate(0.1);
    let curvature = curvature_bound(
        &field,
        shaping.u_mid,
        &region,
        cfg.diagnostics.curvature_samples,
        &mut stream_rng(0, stream::CURVATURE),
    )?;
    println!(
        "run {} ({} seed{}), curvature bound {curvature:.3}",
        paths.run_dir.display(),
        cfg.seeds.len(),
        if cfg.seeds.len() == 1 { "" } else { "s" }
    );

    for &seed in &cfg.seeds {
        let started = std::time::Instant::now();
        match run_seed(cfg, &field, &shaping, &band, curvature, hash, &paths, seed) {
            Ok(line) => {
                meta.seed_status.insert(seed.to_string(), "ok".into());
                meta.write(&paths.meta_file())?;
                println!("  seed {seed}: {line} [{:.1}s]", started.elapsed().as_secs_f64());
            }
            Err(e @ Error::Divergence(_)) => {
                meta.seed_status.insert(seed.to_string(), "diverged".into());
                meta.write(&paths.meta_file())?;
                eprintln!(
                    "  seed {seed}: diverged; last-good checkpoint kept at {}",
                    paths.last_good_file(seed).display()
                );
                return Err(e);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(paths.run_dir)
}

#[allow(clippy::too_many_arguments)]
fn run_seed(
    cfg: &RunConfig,
    field: &UncertaintyField,
    shaping: &ShapingConfig,
    band: &BandSpec,
    curvature: f64,
    hash: &str,
    paths: &RunPaths,
    seed: u64,
) -> Result<String> {
    let seed_dir = paths.seed_dir(seed);
    std::fs::create_dir_all(&seed_dir)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let writer = RefCell::new(Some(MetricsWriter::create(
        &paths.metrics_file(seed),
        hash,
        seed,
    )?));
    let io_err: RefCell<Option<Error>> = RefCell::new(None);
    let last_good = paths.last_good_file(seed);

    let outcome = agent::train(
        &cfg.env,
        field,
        shaping,
        &train_cfg,
        cfg.reward_mode,
        |trained, rec| {
            if io_err.borrow().is_some() {
                return;
            }
            let res = writer
                .borrow_mut()
                .as_mut()
                .map(|w| w.append(rec))
                .unwrap_or(Ok(()))
                .and_then(|()| checkpoint::save(trained, &last_good, Some(hash)));
            if let Err(e) = res {
                *io_err.borrow_mut() = Some(e);
            }
        },
    );
    // Flush whatever was written even when training diverged: the partial
    // metrics plus the last-good checkpoint are the record of the failure.
    if let Some(w) = writer.borrow_mut().take() {
        w.finish()?;
    }
    if let Some(e) = io_err.into_inner() {
        return Err(e);
    }
    let (trained, _records) = outcome?;

    checkpoint::save(&trained, &paths.checkpoint_file(seed), Some(hash))?;
    let episodes = agent::evaluate(
        &trained,
        &cfg.env,
        field,
        shaping,
        cfg.reward_mode,
        cfg.diagnostics.eval_episodes,
        seed.wrapping_add(cfg.diagnostics.eval_seed_offset),
        cfg.train.eval_deterministic,
    )?;
    let diag = write_episode_artifacts(cfg, field, shaping, band, curvature, hash, seed, &seed_dir, &episodes)?;
    Ok(format!(
        "goal_rate {:.2}, coverage {}, off_mass {:.3}, tangential {:.4}",
        diag.report.goal_rate,
        diag.report
            .angular_coverage
            .map_or_else(|| "n/a".into(), |c| format!("{c:.2}")),
        diag.report.off_manifold_mass,
        diag.report.tangential_speed,
    ))
}

/// Diagnostics + trajectories + visitation grid for a set of evaluation
/// episodes; shared by the train and eval commands.
#[allow(clippy::too_many_arguments)]
fn write_episode_artifacts(
    cfg: &RunConfig,
    field: &UncertaintyField,
    shaping: &ShapingConfig,
    band: &BandSpec,
    curvature: f64,
    hash: &str,
    seed: u64,
    dir: &Path,
    episodes: &[Vec<Transition>],
) -> Result<SeedDiagnostics> {
    let report =
        DiagnosticsReport::compute(field, shaping, band, episodes, cfg.diagnostics.grid_resolution)?;

    let n_traj = cfg.diagnostics.trajectory_episodes.min(episodes.len());
    for (idx, ep) in episodes.iter().enumerate().skip(episodes.len() - n_traj) {
        let mut text =
            format!("# config_hash: {hash} seed: {seed} episode: {idx}\n{TRAJECTORY_CSV_HEADER}\n");
        for tr in ep {
            text.push_str(&trajectory_csv_row(tr));
            text.push('\n');
        }
        std::fs::write(dir.join(format!("trajectory_{idx:03}.csv")), text)?;
    }

    std::fs::write(
        dir.join("visitation.txt"),
        report
            .visitation
            .to_text(&format!("config_hash: {hash} seed: {seed}")),
    )?;

    let concentration = maybe_concentration(cfg, field, shaping, band, curvature, episodes, seed)?;
    let diag = SeedDiagnostics {
        config_hash: hash.to_string(),
        seed,
        curvature,
        report,
        concentration,
    };
    diag.write(&dir.join("diagnostics.json"))?;
    Ok(diag)
}

/// True when the level set {U = u_mid} is a circle of a single bump, i.e.
/// the scripted reference controller is defined.
fn reference_is_defined(field: &UncertaintyField, shaping: &ShapingConfig) -> bool {
    field.dim() == 2
        && field.bumps().len() == 1
        && shaping.u_mid > 0.0
        && shaping.u_mid < field.bumps()[0].amplitude
}

fn maybe_concentration(
    cfg: &RunConfig,
    field: &UncertaintyField,
    shaping: &ShapingConfig,
    band: &BandSpec,
    curvature: f64,
    policy_episodes: &[Vec<Transition>],
    seed: u64,
) -> Result<Option<ConcentrationReport>> {
    if !reference_is_defined(field, shaping)
        || cfg.diagnostics.reference_episodes == 0
        || policy_episodes.iter().all(|ep| ep.is_empty())
    {
        return Ok(None);
    }
    let reference = scripted_reference_run(
        &cfg.env,
        field,
        shaping,
        &ReferenceController::default(),
        cfg.diagnostics.reference_episodes,
        seed,
    )?;
    let rep = concentration_bound_report(
        field,
        shaping,
        band,
        curvature,
        &flatten(policy_episodes),
        &flatten(&reference),
        cfg.concentration_eps(band),
    )?;
    Ok(Some(rep))
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Roll out a frozen checkpoint; everything under the run directory is
/// read-only except the new `eval-*` output directory.
pub fn cli_eval(
    run_dir: &Path,
    checkpoint_path: &Path,
    n_episodes: usize,
    seed: u64,
    deterministic: bool,
) -> Result<PathBuf> {
    let (cfg, _canonical, hash) = load_config(&run_dir.join("config.toml"), &[])?;
    cfg.validate()?;
    let field = cfg.build_field()?;
    let shaping = cfg.build_shaping()?;
    let band = cfg.band_for(&field, &shaping)?;

    let ck = if checkpoint_path.is_absolute() {
        checkpoint_path.to_path_buf()
    } else {
        run_dir.join(checkpoint_path)
    };
    if !ck.is_file() {
        return Err(Error::Checkpoint(format!(
            "checkpoint {} does not exist",
            ck.display()
        )));
    }
    let (trained, provenance) = checkpoint::load_full(&ck)?;
    if let Some(p) = &provenance {
        if *p != hash {
            eprintln!(
                "warning: checkpoint provenance {} does not match run config hash {}",
                short_hash(p),
                short_hash(&hash)
            );
        }
    }

    let episodes = agent::evaluate(
        &trained,
        &cfg.env,
        &field,
        &shaping,
        cfg.reward_mode,
        n_episodes,
        seed,
        deterministic,
    )?;

    let stem = ck
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let out_dir = run_dir.join(format!("eval-{stem}-s{seed}"));
    std::fs::create_dir_all(&out_dir)?;
    let region = Region::unit_box(cfg.field.dim).inflate(0.1);
    let curvature = curvature_bound(
        &field,
        shaping.u_mid,
        &region,
        cfg.diagnostics.curvature_samples,
        &mut stream_rng(0, stream::CURVATURE),
    )?;
    let diag = write_episode_artifacts(
        &cfg, &field, &shaping, &band, curvature, &hash, seed, &out_dir, &episodes,
    )?;
    println!(
        "eval {}: {} episodes, goal_rate {:.2}, off_mass {:.3}",
        out_dir.display(),
        episodes.len(),
        diag.report.goal_rate,
        diag.report.off_manifold_mass
    );
    Ok(out_dir)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    /// True when the check holds trivially (e.g. a field with no bumps has an
    /// identically-zero gradient).
    pub vacuous: bool,
    pub details: String,
}

impl CheckLine {
    fn pass(name: &'static str, details: String) -> Self {
        Self { name, passed: true, vacuous: false, details }
    }

    fn vacuous(name: &'static str, details: String) -> Self {
        Self { name, passed: true, vacuous: true, details }
    }

    fn fail(name: &'static str, details: String) -> Self {
        Self { name, passed: false, vacuous: false, details }
    }

    fn of(name: &'static str, passed: bool, details: String) -> Self {
        if passed {
            Self::pass(name, details)
        } else {
            Self::fail(name, details)
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifySummary {
    pub checks: Vec<CheckLine>,
}

impl VerifySummary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Run the analytic check suite against a config and print one PASS/FAIL
/// line per check with the measured values.
pub fn cli_verify(config_path: &Path, sets: &[String]) -> Result<VerifySummary> {
    let (cfg, _canonical, _hash) = load_config(config_path, sets)?;
    cfg.validate_lenient()?;
    let field = cfg.build_field()?;
    let shaping = cfg.build_shaping()?;

    let checks = vec![
        check_skew_orthogonality(&field, &shaping),
        check_alpha_beta_symmetry(&shaping),
        check_psi_telescoping(&field, &shaping),
        check_decomposition_bound(&field, &shaping)?,
        check_closed_loop_refinement(&cfg, &field, &shaping)?,
        check_reference_witness(&cfg, &field, &shaping)?,
    ];
    let summary = VerifySummary { checks };
    for c in &summary.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        let vac = if c.vacuous { " (vacuous)" } else { "" };
        println!("{verdict} {}{vac}: {}", c.name, c.details);
    }
    Ok(summary)
}

/// |<W grad U, grad U>| must vanish at machine precision everywhere; a
/// tampered (non-skew) W breaks this at order ||grad U||^2.
fn check_skew_orthogonality(field: &UncertaintyField, shaping: &ShapingConfig) -> CheckLine {
    const NAME: &str = "skew_orthogonality";
    if field.bumps().is_empty() {
        return CheckLine::vacuous(NAME, "field has no bumps; the gradient vanishes identically".into());
    }
    let region = Region::unit_box(field.dim());
    let mut rng = stream_rng(0, stream::VERIFY);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let s = region.sample(&mut rng);
        let g = match field.gradient(&s) {
            Ok(g) => g,
            Err(e) => return CheckLine::fail(NAME, format!("gradient failed: {e}")),
        };
        let wg = match shaping.w.apply(&g) {
            Ok(wg) => wg,
            Err(e) => return CheckLine::fail(NAME, format!("W apply failed: {e}")),
        };
        worst = worst.max(linalg::dot(&wg, &g).abs());
    }
    CheckLine::of(
        NAME,
        worst < 1e-12,
        format!(
            "max |<W grad U, grad U>| = {worst:.3e} over 1000 states (skew defect {:.3e}, threshold 1e-12)",
            shaping.w.skew_defect()
        ),
    )
}

/// alpha must be exactly antisymmetric and beta exactly even about u_mid.
/// Offsets are snapped to dyadic rationals around a dyadic-rounded center so
/// the symmetric pairs are exactly representable and the claim is exact in
/// floating point, whatever u_mid the config picked.
fn check_alpha_beta_symmetry(shaping: &ShapingConfig) -> CheckLine {
    const NAME: &str = "alpha_beta_symmetry";
    let center = (shaping.u_mid * 65536.0).round() / 65536.0;
    let probe = ShapingConfig {
        u_mid: center,
        ..shaping.clone()
    };
    let mut exact = true;
    for k in 1..=1024_i64 {
        let d = k as f64 / 1024.0;
        let (hi, lo) = (center + d, center - d);
        if alpha(&probe, hi) != -alpha(&probe, lo) || beta(&probe, hi) != beta(&probe, lo) {
            exact = false;
            break;
        }
    }
    let centered = alpha(&probe, center) == 0.0 && beta(&probe, center) == 1.0;
    let mut rng = stream_rng(0, stream::VERIFY);
    let mut ranges = true;
    for _ in 0..1000 {
        let u: f64 = shaping.u_mid + 8.0 * (rng.gen::<f64>() - 0.5);
        let a = alpha(shaping, u);
        let b = beta(shaping, u);
        if !(a.abs() < 1.0 && b > 0.0 && b <= 1.0) {
            ranges = false;
            break;
        }
    }
    CheckLine::of(
        NAME,
        exact && centered && ranges,
        format!(
            "antisymmetry/evenness exact on 1024 dyadic offsets: {exact}; \
             alpha(u_mid)=0 and beta(u_mid)=1: {centered}; |alpha|<1 and 0<beta<=1 on 1000 draws: {ranges}"
        ),
    )
}

/// Summing one-step potential differences along a trajectory must telescope
/// to the endpoint difference.
fn check_psi_telescoping(field: &UncertaintyField, shaping: &ShapingConfig) -> CheckLine {
    const NAME: &str = "psi_telescoping";
    let mut rng = stream_rng(1, stream::VERIFY);
    let region = Region::unit_box(field.dim());
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let mut s = region.sample(&mut rng);
        let first = s.clone();
        let mut sum = 0.0;
        for _ in 0..60 {
            let step: Vec<f64> = (0..field.dim())
                .map(|_| 0.2 * (rng.gen::<f64>() - 0.5))
                .collect();
            let s_next: Vec<f64> = s.iter().zip(&step).map(|(a, b)| a + b).collect();
            let (pa, pb) = match (psi(field, shaping.u_mid, &s), psi(field, shaping.u_mid, &s_next)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => return CheckLine::fail(NAME, "potential evaluation failed".into()),
            };
            sum += pa - pb;
            s = s_next;
        }
        let direct = psi(field, shaping.u_mid, &first).unwrap_or(f64::NAN)
            - psi(field, shaping.u_mid, &s).unwrap_or(f64::NAN);
        worst = worst.max((sum - direct).abs());
    }
    let vacuous = field.bumps().is_empty();
    let details = format!(
        "max |telescoped - direct| = {worst:.3e} over 100 trajectories of 60 steps (threshold 1e-9)"
    );
    if vacuous && worst < 1e-9 {
        CheckLine::vacuous(NAME, format!("{details}; field has no bumps, potential is constant"))
    } else {
        CheckLine::of(NAME, worst < 1e-9, details)
    }
}

/// Second-order remainder of the potential identity stays under the sampled
/// curvature bound for every small transition.
fn check_decomposition_bound(
    field: &UncertaintyField,
    shaping: &ShapingConfig,
) -> Result<CheckLine> {
    const NAME: &str = "decomposition_bound";
    let region = Region::unit_box(field.dim()).inflate(0.1);
    let curvature = curvature_bound(
        field,
        shaping.u_mid,
        &region,
        100_000,
        &mut stream_rng(0, stream::CURVATURE),
    )?;
    let inner = Region::unit_box(field.dim());
    let mut rng = stream_rng(2, stream::VERIFY);
    // Componentwise steps of at most 0.1/sqrt(dim) keep ||step|| <= 0.1.
    let half = 0.1 / (field.dim() as f64).sqrt();
    let mut violations = 0usize;
    let mut worst_ratio = 0.0_f64;
    for _ in 0..10_000 {
        let s = inner.sample(&mut rng);
        let s_next: Vec<f64> = s
            .iter()
            .map(|x| x + 2.0 * half * (rng.gen::<f64>() - 0.5))
            .collect();
        let d = linalg::sub(&s_next, &s);
        let allowed = 0.5 * curvature * linalg::dot(&d, &d);
        let residual = decomposition_residual(shaping, field, &s, &s_next)?.abs();
        if residual > allowed {
            violations += 1;
        }
        if allowed > 0.0 {
            worst_ratio = worst_ratio.max(residual / allowed);
        }
    }
    let vacuous = field.bumps().is_empty();
    let details = format!(
        "{violations} of 10000 transitions exceed (curvature/2)||step||^2 \
         (curvature {curvature:.3}, worst ratio {worst_ratio:.3})"
    );
    Ok(if vacuous && violations == 0 {
        CheckLine::vacuous(NAME, format!("{details}; zero field has zero residual"))
    } else {
        CheckLine::of(NAME, violations == 0, details)
    })
}

/// On a level-set loop the gradient term vanishes under refinement while the
/// rotational term keeps a sign tied to the orientation of W.
fn check_closed_loop_refinement(
    cfg: &RunConfig,
    field: &UncertaintyField,
    shaping: &ShapingConfig,
) -> Result<CheckLine> {
    const NAME: &str = "closed_loop_refinement";
    if !reference_is_defined(field, shaping) {
        return Ok(CheckLine::vacuous(
            NAME,
            "needs a single 2-d bump whose amplitude straddles u_mid; skipped".into(),
        ));
    }
    let bump = &field.bumps()[0];
    let radius =
        crate::diagnostics::level_radius(bump.amplitude, bump.sigma, shaping.u_mid)? * 1.01;
    let center = [bump.center[0], bump.center[1]];
    let (g90, _) = closed_loop_integrals(shaping, field, &circle_loop(&center, radius, 90))?;
    let (g720, r720) = closed_loop_integrals(shaping, field, &circle_loop(&center, radius, 720))?;

    let reversed = ShapingSpec {
        w_orientation: -cfg.shaping.w_orientation,
        w_upper: cfg.shaping.w_upper.iter().map(|x| -x).collect(),
        ..cfg.shaping.clone()
    }
    .build(cfg.field.dim)?;
    let (_, r720_rev) = closed_loop_integrals(&reversed, field, &circle_loop(&center, radius, 720))?;

    let refines = g720.abs() < g90.abs();
    let dominated = g720.abs() < 0.05 * r720.abs();
    let flips = (r720 > 0.0) != (r720_rev > 0.0) && r720_rev != 0.0 && r720 != 0.0;
    Ok(CheckLine::of(
        NAME,
        refines && dominated && flips,
        format!(
            "|grad loop sum| {:.3e} (n=90) -> {:.3e} (n=720), rot sum {r720:.4}, \
             reversed {r720_rev:.4}; refinement {refines}, dominance {dominated}, sign flip {flips}",
            g90.abs(),
            g720.abs()
        ),
    ))
}

/// The scripted tangent-following controller must hold the band and make
/// strictly positive rotational progress, witnessing that the shaping target
/// is achievable in this environment.
fn check_reference_witness(
    cfg: &RunConfig,
    field: &UncertaintyField,
    shaping: &ShapingConfig,
) -> Result<CheckLine> {
    const NAME: &str = "reference_witness";
    if !reference_is_defined(field, shaping) {
        return Ok(CheckLine::vacuous(
            NAME,
            "needs a single 2-d bump whose amplitude straddles u_mid; skipped".into(),
        ));
    }
    let band = cfg.band_for(field, shaping)?;
    let episodes = scripted_reference_run(
        &cfg.env,
        field,
        shaping,
        &ReferenceController::default(),
        10,
        0,
    )?;
    // Short burn-in: the witness is about steady-state band-keeping.
    let settled: Vec<Vec<f64>> = episodes
        .iter()
        .flat_map(|ep| ep.iter().skip(5))
        .map(|tr| tr.s_next.clone())
        .collect();
    let mass = off_manifold_mass(field, &band, &settled, band.delta_band)?;
    let v0 = no_sticking_value(field, shaping, &flatten(&episodes))?;
    Ok(CheckLine::of(
        NAME,
        mass < 0.05 && v0.value > 0.0,
        format!(
            "off-band mass {mass:.4} after burn-in (threshold 0.05), \
             rotational progress {:.5} over {} transitions (must be > 0)",
            v0.value, v0.n_total
        ),
    ))
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricPair {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonDoc {
    pub config_hash_a: String,
    pub config_hash_b: String,
    pub field_configs_match: bool,
    /// Median over seeds, per metric.
    pub metrics: BTreeMap<String, MetricPair>,
}

struct LoadedRun {
    hash: String,
    field_section: String,
    seeds: Vec<SeedDiagnostics>,
    grid: Option<VisitationGrid>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let meta = RunMeta::read(&dir.join("run.json")).map_err(|e| {
        Error::InvalidInput(format!("{} is not a run directory: {e}", dir.display()))
    })?;
    let canonical = std::fs::read_to_string(dir.join("config.toml"))?;
    let value: toml::Value = toml::from_str(&canonical)?;
    let field_section = value
        .as_table()
        .and_then(|t| t.get("field"))
        .map(|v| toml::to_string(v).unwrap_or_default())
        .unwrap_or_default();
    let mut seeds = Vec::new();
    let mut grid: Option<VisitationGrid> = None;
    for &seed in &meta.seeds {
        let diag = SeedDiagnostics::read(&dir.join(format!("seed_{seed}/diagnostics.json")))?;
        if diag.config_hash != meta.config_hash {
            eprintln!(
                "warning: {} seed {seed} diagnostics were written under config {}, run records {}",
                dir.display(),
                short_hash(&diag.config_hash),
                short_hash(&meta.config_hash)
            );
        }
        match &mut grid {
            None => grid = Some(diag.report.visitation.clone()),
            Some(g) => g.merge(&diag.report.visitation)?,
        }
        seeds.push(diag);
    }
    if seeds.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} has no seed diagnostics to compare",
            dir.display()
        )));
    }
    Ok(LoadedRun {
        hash: meta.config_hash,
        field_section,
        seeds,
        grid,
    })
}

fn median_of(seeds: &[SeedDiagnostics], f: impl Fn(&SeedDiagnostics) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = seeds.iter().filter_map(&f).collect();
    if v.is_empty() {
        None
    } else {
        Some(median(&v))
    }
}

/// Side-by-side medians of the run-level diagnostics, written as JSON plus
/// merged visitation grids for plotting.
pub fn cli_compare(dir_a: &Path, dir_b: &Path) -> Result<PathBuf> {
    let a = load_run(dir_a)?;
    let b = load_run(dir_b)?;
    let field_configs_match = a.field_section == b.field_section;
    if !field_configs_match {
        eprintln!("warning: the two runs use different field configurations; comparison proceeds");
    }

    let accessors: [(&str, fn(&SeedDiagnostics) -> Option<f64>); 6] = [
        ("tangential_speed", |d| Some(d.report.tangential_speed)),
        ("unsafe_rate", |d| Some(d.report.unsafe_rate)),
        ("angular_coverage", |d| d.report.angular_coverage),
        ("off_manifold_mass", |d| Some(d.report.off_manifold_mass)),
        ("no_sticking_value", |d| Some(d.report.no_sticking_value)),
        ("goal_rate", |d| Some(d.report.goal_rate)),
    ];
    let mut metrics = BTreeMap::new();
    println!(
        "{:<20} {:>12} {:>12} {:>12}",
        "metric",
        short_hash(&a.hash),
        short_hash(&b.hash),
        "delta"
    );
    for (name, f) in accessors {
        let (ma, mb) = (median_of(&a.seeds, f), median_of(&b.seeds, f));
        let delta = match (ma, mb) {
            (Some(x), Some(y)) => Some(x - y),
            _ => None,
        };
        let show = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"));
        println!(
            "{name:<20} {:>12} {:>12} {:>12}",
            show(ma),
            show(mb),
            show(delta)
        );
        metrics.insert(name.to_string(), MetricPair { a: ma, b: mb, delta });
    }

    let parent = dir_a
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let out_dir = parent.join(format!(
        "compare-{}-{}",
        short_hash(&a.hash),
        short_hash(&b.hash)
    ));
    std::fs::create_dir_all(&out_dir)?;
    let doc = ComparisonDoc {
        config_hash_a: a.hash.clone(),
        config_hash_b: b.hash.clone(),
        field_configs_match,
        metrics,
    };
    let mut json = serde_json::to_string_pretty(&doc)?;
    json.push('\n');
    std::fs::write(out_dir.join("comparison.json"), json)?;
    for (grid, hash, name) in [(&a.grid, &a.hash, "grid_a.txt"), (&b.grid, &b.hash, "grid_b.txt")] {
        if let Some(g) = grid {
            std::fs::write(
                out_dir.join(name),
                g.to_text(&format!("config_hash: {hash} merged over seeds")),
            )?;
        }
    }
    println!("comparison written to {}", out_dir.display());
    Ok(out_dir)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// One full run per value along a single scalar config axis; the seed list
/// and every other knob stay shared.
pub fn cli_sweep(
    config_path: &Path,
    axis: &str,
    values: &[String],
    sets: &[String],
) -> Result<Vec<PathBuf>> {
    let (base_cfg, _canonical, _hash) = load_config(config_path, sets)?;
    if values.is_empty() {
        println!("sweep over {axis:?}: no values given, nothing to run");
        return Ok(Vec::new());
    }
    let base = toml::Value::try_from(&base_cfg)?;
    if !path_is_scalar(&base, axis) {
        return Err(Error::InvalidConfig(format!(
            "sweep axis {axis:?} does not name a scalar config field"
        )));
    }
    let mut dirs = Vec::new();
    let mut rows = Vec::new();
    for raw in values {
        let val = parse_override_value(raw);
        if matches!(val, toml::Value::Table(_) | toml::Value::Array(_)) {
            return Err(Error::InvalidConfig(format!(
                "sweep value {raw:?} is not a scalar"
            )));
        }
        let mut v = base.clone();
        set_path(&mut v, axis, val)?;
        let cfg: RunConfig = v.try_into()?;
        cfg.validate()?;
        let canonical = canonical_toml(&cfg)?;
        let hash = config_hash(&canonical);
        println!("sweep {axis} = {raw}");
        let dir = run_experiment(&cfg, &canonical, &hash, &out_root(&cfg))?;
        let run = load_run(&dir)?;
        rows.push((
            raw.clone(),
            short_hash(&hash).to_string(),
            median_of(&run.seeds, |d| Some(d.report.goal_rate)),
            median_of(&run.seeds, |d| d.report.angular_coverage),
            median_of(&run.seeds, |d| Some(d.report.off_manifold_mass)),
        ));
        dirs.push(dir);
    }
    println!(
        "{:<14} {:<14} {:>10} {:>10} {:>10}",
        axis, "run", "goal_rate", "coverage", "off_mass"
    );
    let show = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"));
    for (value, hash, goal, cov, mass) in rows {
        println!(
            "{value:<14} {hash:<14} {:>10} {:>10} {:>10}",
            show(goal),
            show(cov),
            show(mass)
        );
    }
    Ok(dirs)
}
