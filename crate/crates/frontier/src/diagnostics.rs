//! Trajectory statistics that make "orbiting the frontier" measurable:
//! tangential speed in the band, unsafe rate, angular coverage, off-manifold
//! mass, the no-sticking value, and an empirical-surrogate evaluation of the
//! near-manifold concentration bound. Also hosts the scripted reference
//! controller that witnesses the existence of a band-following policy.
//!
//! All statistics recompute field values from positions rather than trusting
//! whatever a producer recorded, so they are usable on synthetic transitions.

use serde::{Deserialize, Serialize};

use crate::boxworld::{make_transition, observe, step, EnvConfig, EnvState, RewardMode, Transition};
use crate::linalg::{dot, norm, sub};
use crate::oracle::{ScalarField, UncertaintyField};
use crate::sampling::{stream, stream_rng};
use crate::shaping::{beta, ShapingConfig};
use crate::{Error, Result};

/// Gradient norms below this are treated as degenerate (no usable tangent).
pub const DEGENERATE_GRAD_NORM: f64 = 1e-12;

/// The manifold band and safety threshold used by all diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub u_mid: f64,
    /// Band half-width in uncertainty units: in-band means |U - u_mid| < this.
    pub delta_band: f64,
    /// Unsafe means U(s_next) > u_mid + eps_unsafe.
    pub eps_unsafe: f64,
}

impl BandSpec {
    pub fn new(u_mid: f64, delta_band: f64, eps_unsafe: f64) -> Result<Self> {
        if !(delta_band > 0.0) || !delta_band.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "band.delta_band must be finite and > 0, got {delta_band}"
            )));
        }
        if !u_mid.is_finite() || !eps_unsafe.is_finite() || eps_unsafe < 0.0 {
            return Err(Error::InvalidConfig(
                "band.u_mid must be finite and band.eps_unsafe finite and >= 0".into(),
            ));
        }
        Ok(Self {
            u_mid,
            delta_band,
            eps_unsafe,
        })
    }

    /// Copy levels from a shaping config; default half-width is 0.1 times the
    /// largest bump amplitude.
    pub fn from_shaping(
        shaping: &ShapingConfig,
        field: &UncertaintyField,
        delta_band: Option<f64>,
    ) -> Result<Self> {
        let delta = match delta_band {
            Some(d) => d,
            None => {
                let a = field.bumps().iter().map(|b| b.amplitude).fold(0.0, f64::max);
                if a <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "cannot derive a default band width from a field with no bumps".into(),
                    ));
                }
                0.1 * a
            }
        };
        Self::new(shaping.u_mid, delta, shaping.eps_unsafe)
    }

    pub fn in_band(&self, u: f64) -> bool {
        (u - self.u_mid).abs() < self.delta_band
    }
}

/// A scalar statistic plus the counts behind it; `flagged` marks degenerate
/// inputs (empty set) where the value defaulted to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub value: f64,
    pub n_used: usize,
    pub n_total: usize,
    /// In-band states skipped because the rotational field vanished there.
    pub n_degenerate: usize,
    pub flagged: bool,
}

impl Stat {
    fn empty() -> Self {
        Stat {
            value: 0.0,
            n_used: 0,
            n_total: 0,
            n_degenerate: 0,
            flagged: true,
        }
    }
}

/// Mean over in-band transitions of the step projected on the unit tangent
/// t = W grad U / |W grad U|. Positive means motion along the W orientation.
/// In-band states with a vanishing rotational field are excluded and counted
/// in `n_degenerate`.
pub fn tangential_speed(
    field: &UncertaintyField,
    shaping: &ShapingConfig,
    band: &BandSpec,
    transitions: &[Transition],
) -> Result<Stat> {
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut degenerate = 0usize;
    for tr in transitions {
        let u = field.value(&tr.s)?;
        if !band.in_band(u) {
            continue;
        }
        let g = field.gradient(&tr.s)?;
        let t = shaping.w.apply(&g)?;
        let t_norm = norm(&t);
        if t_norm < DEGENERATE_GRAD_NORM {
            degenerate += 1;
            continue;
        }
        let delta = sub(&tr.s_next, &tr.s);
        sum += dot(&delta, &t) / t_norm;
        used += 1;
    }
    Ok(Stat {
        value: if used > 0 { sum / used as f64 } else { 0.0 },
        n_used: used,
        n_total: transitions.len(),
        n_degenerate: degenerate,
        flagged: used == 0,
    })
}

/// Fraction of transitions landing above the safety level:
/// U(s_next) > u_mid + eps_unsafe.
pub fn unsafe_rate(
    field: &UncertaintyField,
    band: &BandSpec,
    transitions: &[Transition],
) -> Result<Stat> {
    if transitions.is_empty() {
        return Ok(Stat::empty());
    }
    let mut hits = 0usize;
    for tr in transitions {
        if field.value(&tr.s_next)? > band.u_mid + band.eps_unsafe {
            hits += 1;
        }
    }
    Ok(Stat {
        value: hits as f64 / transitions.len() as f64,
        n_used: transitions.len(),
        n_total: transitions.len(),
        n_degenerate: 0,
        flagged: false,
    })
}

/// Angular coverage about an explicit center: restrict to in-band states,
/// bin their angles about `center` into `n_bins` equal sectors, and return
/// occupied bins / n_bins.
pub fn angular_coverage_about(
    field: &UncertaintyField,
    band: &BandSpec,
    center: &[f64],
    states: &[Vec<f64>],
    n_bins: usize,
) -> Result<Stat> {
    if n_bins < 2 {
        return Err(Error::InvalidInput(format!(
            "angular coverage needs n_bins >= 2, got {n_bins}"
        )));
    }
    if center.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: center.len(),
            context: "angular coverage center (angles are 2-d only)".into(),
        });
    }
    let mut occupied = vec![false; n_bins];
    let mut used = 0usize;
    for s in states {
        if !band.in_band(field.value(s)?) {
            continue;
        }
        let angle = (s[1] - center[1]).atan2(s[0] - center[0]);
        let frac = (angle + std::f64::consts::PI) / std::f64::consts::TAU;
        let bin = ((frac * n_bins as f64) as usize).min(n_bins - 1);
        occupied[bin] = true;
        used += 1;
    }
    Ok(Stat {
        value: occupied.iter().filter(|b| **b).count() as f64 / n_bins as f64,
        n_used: used,
        n_total: states.len(),
        n_degenerate: 0,
        flagged: used == 0,
    })
}

/// Coverage of the single bump's circular band. Multi-bump fields are an
/// error here; use [`angular_coverage_about`] per bump instead.
pub fn angular_coverage(
    field: &UncertaintyField,
    band: &BandSpec,
    states: &[Vec<f64>],
    n_bins: usize,
) -> Result<Stat> {
    if field.bumps().len() != 1 {
        return Err(Error::InvalidInput(format!(
            "angular coverage is defined per bump; field has {} bumps (pick a center and call angular_coverage_about)",
            field.bumps().len()
        )));
    }
    let center = field.bumps()[0].center.clone();
    angular_coverage_about(field, band, &center, states, n_bins)
}

/// Fraction of states with |U - u_mid| >= eps (the eps-off-manifold region).
pub fn off_manifold_mass(
    field: &UncertaintyField,
    band: &BandSpec,
    states: &[Vec<f64>],
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!(
            "off_manifold_mass needs eps > 0, got {eps}"
        )));
    }
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for s in states {
        if (field.value(s)? - band.u_mid).abs() >= eps {
            hits += 1;
        }
    }
    Ok(hits as f64 / states.len() as f64)
}

/// Mean over all transitions of beta(U(s)) <W grad U(s), step>; the empirical
/// rotational return. Zero for pure self-loops, strictly positive for motion
/// along the W orientation, and exactly negated when every step reverses.
pub fn no_sticking_value(
    field: &UncertaintyField,
    shaping: &ShapingConfig,
    transitions: &[Transition],
) -> Result<Stat> {
    if transitions.is_empty() {
        return Ok(Stat::empty());
    }
    let mut sum = 0.0;
    for tr in transitions {
        let u = field.value(&tr.s)?;
        let wg = shaping.w.apply(&field.gradient(&tr.s)?)?;
        let delta = sub(&tr.s_next, &tr.s);
        sum += beta(shaping, u) * dot(&wg, &delta);
    }
    Ok(Stat {
        value: sum / transitions.len() as f64,
        n_used: transitions.len(),
        n_total: transitions.len(),
        n_degenerate: 0,
        flagged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcentrationStatus {
    Pass,
    Fail,
    /// The reference run violated its own precondition (v_hat_0 <= 0), so the
    /// bound's hypotheses are unmet and no conclusion is drawn.
    Inconclusive,
}

/// Both sides of the near-manifold concentration inequality, evaluated with
/// empirical surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub eps: f64,
    /// b_eps = 1 - tanh(eps): the tangential-damping floor off the band.
    pub b_eps: f64,
    /// In-band mean rotational reward of the reference run (surrogate v_0).
    pub v_hat_0: f64,
    /// Max observed |<W grad U, step>| over both runs (surrogate v_max).
    pub v_hat_max: f64,
    /// Mean base reward per step of the policy under test.
    pub rho_r_policy: f64,
    /// Mean base reward per step of the reference run.
    pub rho_r_reference: f64,
    /// Taylor-error bounds (curvature/2 * mean squared step) per run.
    pub taylor_err_policy: f64,
    pub taylor_err_reference: f64,
    /// Off-manifold mass of the policy's post-step states at this eps.
    pub measured_mass: f64,
    /// Right-hand side of the bound; may exceed 1 for small eps, and is
    /// f64::MAX when undefined (zero tangential motion in both runs).
    pub bound: f64,
    /// True when the bound is >= 1 or non-finite, i.e. it constrains nothing.
    pub vacuous: bool,
    pub status: ConcentrationStatus,
}

fn mean_sq_step(transitions: &[Transition]) -> f64 {
    if transitions.is_empty() {
        return 0.0;
    }
    transitions
        .iter()
        .map(|tr| {
            let d = sub(&tr.s_next, &tr.s);
            dot(&d, &d)
        })
        .sum::<f64>()
        / transitions.len() as f64
}

fn mean_base_reward(transitions: &[Transition]) -> f64 {
    if transitions.is_empty() {
        return 0.0;
    }
    transitions.iter().map(|tr| tr.base_reward).sum::<f64>() / transitions.len() as f64
}

/// Evaluate the concentration bound
///   mass(N_eps) <= (rho_gap + (v_max - v_0) + err_policy + err_ref)
///                  / ((1 - b_eps) * v_max)
/// with surrogates measured from a policy run and a manifold-following
/// reference run over the same field and shaping. `curvature` is the sampled
/// operator-norm bound on the potential's Hessian.
pub fn concentration_bound_report(
    field: &UncertaintyField,
    shaping: &ShapingConfig,
    band: &BandSpec,
    curvature: f64,
    run_policy: &[Transition],
    run_reference: &[Transition],
    eps: f64,
) -> Result<ConcentrationReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!(
            "concentration bound needs eps > 0, got {eps}"
        )));
    }
    let b_eps = 1.0 - eps.tanh();

    // v_hat_0: in-band mean of beta <W grad U, step> over the reference run.
    let mut v0_sum = 0.0;
    let mut v0_n = 0usize;
    for tr in run_reference {
        let u = field.value(&tr.s)?;
        if !band.in_band(u) {
            continue;
        }
        let wg = shaping.w.apply(&field.gradient(&tr.s)?)?;
        v0_sum += beta(shaping, u) * dot(&wg, &sub(&tr.s_next, &tr.s));
        v0_n += 1;
    }
    let v_hat_0 = if v0_n > 0 { v0_sum / v0_n as f64 } else { 0.0 };

    let mut v_hat_max = 0.0_f64;
    for tr in run_policy.iter().chain(run_reference) {
        let wg = shaping.w.apply(&field.gradient(&tr.s)?)?;
        v_hat_max = v_hat_max.max(dot(&wg, &sub(&tr.s_next, &tr.s)).abs());
    }

    let rho_r_policy = mean_base_reward(run_policy);
    let rho_r_reference = mean_base_reward(run_reference);
    let taylor_err_policy = 0.5 * curvature * mean_sq_step(run_policy);
    let taylor_err_reference = 0.5 * curvature * mean_sq_step(run_reference);

    let post_states: Vec<Vec<f64>> = run_policy.iter().map(|tr| tr.s_next.clone()).collect();
    let measured_mass = off_manifold_mass(field, band, &post_states, eps)?;

    let numerator = (rho_r_policy - rho_r_reference)
        + (v_hat_max - v_hat_0)
        + taylor_err_policy
        + taylor_err_reference;
    let denominator = (1.0 - b_eps) * v_hat_max;
    // A zero denominator (no tangential motion anywhere) leaves the bound
    // undefined; store MAX rather than inf so reports stay JSON-round-trippable.
    let bound = if denominator > 0.0 {
        numerator / denominator
    } else {
        f64::MAX
    };
    let vacuous = !(bound < 1.0) || !bound.is_finite();
    let status = if v_hat_0 <= 0.0 {
        ConcentrationStatus::Inconclusive
    } else if measured_mass <= bound {
        ConcentrationStatus::Pass
    } else {
        ConcentrationStatus::Fail
    };
    Ok(ConcentrationReport {
        eps,
        b_eps,
        v_hat_0,
        v_hat_max,
        rho_r_policy,
        rho_r_reference,
        taylor_err_policy,
        taylor_err_reference,
        measured_mass,
        bound,
        vacuous,
        status,
    })
}

/// Counts of visited states over [0,1]^2, row-major with row = y bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitationGrid {
    pub resolution: usize,
    pub counts: Vec<u64>,
}

impl VisitationGrid {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidInput(format!(
                "visitation grid needs resolution >= 2, got {resolution}"
            )));
        }
        Ok(Self {
            resolution,
            counts: vec![0; resolution * resolution],
        })
    }

    fn bin(&self, coord: f64) -> usize {
        ((coord * self.resolution as f64) as usize).min(self.resolution - 1)
    }

    pub fn add(&mut self, state: &[f64]) {
        let (x, y) = (self.bin(state[0]), self.bin(state[1]));
        self.counts[y * self.resolution + x] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Merge another grid of the same resolution (accumulation is
    /// associative, so shards can be combined in any order).
    pub fn merge(&mut self, other: &VisitationGrid) -> Result<()> {
        if other.resolution != self.resolution {
            return Err(Error::DimensionMismatch {
                expected: self.resolution,
                got: other.resolution,
                context: "visitation grid merge".into(),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Plain-text form: header lines, then one row of counts per line
    /// (row 0 = y in [0, 1/resolution)).
    pub fn to_text(&self, header_comment: &str) -> String {
        let mut out = String::new();
        if !header_comment.is_empty() {
            out.push_str("# ");
            out.push_str(header_comment);
            out.push('\n');
        }
        out.push_str(&format!("{}\n", self.resolution));
        for row in self.counts.chunks(self.resolution) {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

pub fn visitation_grid(states: &[Vec<f64>], resolution: usize) -> Result<VisitationGrid> {
    let mut grid = VisitationGrid::new(resolution)?;
    for s in states {
        grid.add(s);
    }
    Ok(grid)
}

/// Every state touched by the episodes: each transition's start state plus
/// each episode's final landing state.
pub fn visited_states(episodes: &[Vec<Transition>]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for ep in episodes {
        for tr in ep {
            out.push(tr.s.clone());
        }
        if let Some(last) = ep.last() {
            out.push(last.s_next.clone());
        }
    }
    out
}

pub fn flatten(episodes: &[Vec<Transition>]) -> Vec<Transition> {
    episodes.iter().flatten().cloned().collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN metric values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Scripted reference controller
// ---------------------------------------------------------------------------

/// Tangent-following controller with a first-order pullback onto the level
/// set: a = v_t * What + gain * (u_mid - U) grad U / |grad U|^2, clamped to
/// the action box. The constructive witness that a band-following policy
/// with positive tangential motion exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceController {
    /// Desired step length along the unit tangent.
    pub tangential_step: f64,
    /// Scale on the level-set pullback; 1 is the plain first-order step.
    pub gain: f64,
}

impl Default for ReferenceController {
    fn default() -> Self {
        Self {
            tangential_step: 0.08,
            gain: 1.0,
        }
    }
}

pub fn reference_action(
    ctrl: &ReferenceController,
    field: &UncertaintyField,
    shaping: &ShapingConfig,
    pos: &[f64],
    action_limit: f64,
) -> Result<Vec<f64>> {
    let g = field.gradient(pos)?;
    let wg = shaping.w.apply(&g)?;
    let wg_norm = norm(&wg);
    let mut a = vec![0.0; pos.len()];
    if wg_norm >= DEGENERATE_GRAD_NORM {
        for (ai, wi) in a.iter_mut().zip(&wg) {
            *ai = ctrl.tangential_step * wi / wg_norm;
        }
    }
    // Correct at the tangential lookahead point, not the current one: the
    // tangent of a curved level set drifts outward by ~v^2/2r per step, and
    // correcting the pre-step deviation would leave exactly that drift as a
    // persistent bias.
    let ahead: Vec<f64> = pos.iter().zip(&a).map(|(p, ai)| p + ai).collect();
    let u_ahead = field.value(&ahead)?;
    let g_ahead = field.gradient(&ahead)?;
    let g2 = dot(&g_ahead, &g_ahead);
    if g2 >= DEGENERATE_GRAD_NORM {
        let c = ctrl.gain * (shaping.u_mid - u_ahead) / g2;
        for (ai, gi) in a.iter_mut().zip(&g_ahead) {
            *ai += c * gi;
        }
    }
    // The controller works in physical displacements; the environment expects
    // normalized actions and applies `action_limit` itself, so convert here.
    for ai in &mut a {
        *ai = (*ai / action_limit).clamp(-1.0, 1.0);
    }
    Ok(a)
}

/// Radius at which a single bump crosses the level u_mid.
pub fn level_radius(amplitude: f64, sigma: f64, u_mid: f64) -> Result<f64> {
    if !(u_mid > 0.0 && u_mid < amplitude) {
        return Err(Error::InvalidInput(format!(
            "level u_mid={u_mid} does not intersect a bump of amplitude {amplitude}"
        )));
    }
    Ok(sigma * (2.0 * (amplitude / u_mid).ln()).sqrt())
}

/// Roll out the reference controller for `n_episodes`, starting each episode
/// on the single bump's level circle at a random angle. Uses the environment
/// dynamics (clip, noise, clamp) but ignores its start box, since the witness
/// concerns a policy already supported on the manifold.
pub fn scripted_reference_run(
    env: &EnvConfig,
    field: &UncertaintyField,
    shaping: &ShapingConfig,
    ctrl: &ReferenceController,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Vec<Transition>>> {
    if field.bumps().len() != 1 {
        return Err(Error::InvalidInput(format!(
            "the scripted reference run needs a single-bump field, got {} bumps",
            field.bumps().len()
        )));
    }
    let bump = &field.bumps()[0];
    let radius = level_radius(bump.amplitude, bump.sigma, shaping.u_mid)?;
    let unit = crate::oracle::Region::unit_box(2);
    let mut rng = stream_rng(seed, stream::VERIFY);
    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let theta = rand::Rng::gen::<f64>(&mut rng) * std::f64::consts::TAU;
        let start = unit.clamp(&[
            bump.center[0] + radius * theta.cos(),
            bump.center[1] + radius * theta.sin(),
        ]);
        let mut state = EnvState {
            pos: start,
            t: 0,
            finished: false,
        };
        let mut ep = Vec::with_capacity(env.horizon as usize);
        loop {
            let obs = observe(env, &state);
            let a = reference_action(ctrl, field, shaping, &state.pos, env.action_limit)?;
            let res = step(env, &state, &a, &mut rng)?;
            ep.push(make_transition(
                env,
                field,
                shaping,
                RewardMode::Vf,
                &state,
                &obs,
                &a,
                &res,
            )?);
            state = res.state;
            if state.finished {
                break;
            }
        }
        episodes.push(ep);
    }
    Ok(episodes)
}

// ---------------------------------------------------------------------------
// Aggregate report
// ---------------------------------------------------------------------------

/// One point of the band-width sensitivity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSweepPoint {
    pub delta_band: f64,
    pub tangential_speed: f64,
    pub off_manifold_mass: f64,
    pub angular_coverage: Option<f64>,
}

/// Everything the harness persists about an evaluated set of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub band: BandSpec,
    pub n_episodes: usize,
    pub n_transitions: usize,
    pub tangential_speed: f64,
    pub tangential_in_band_count: usize,
    pub n_degenerate_excluded: usize,
    pub unsafe_rate: f64,
    /// Present only for single-bump fields; per-bump values below otherwise.
    pub angular_coverage: Option<f64>,
    pub per_bump_angular_coverage: Vec<f64>,
    pub off_manifold_mass: f64,
    pub no_sticking_value: f64,
    pub goal_rate: f64,
    pub mean_base_return: f64,
    pub mean_shaped_return: f64,
    pub mean_episode_len: f64,
    /// In-band step counts before goal contact, one entry per episode.
    pub pre_goal_in_band_steps: Vec<u32>,
    pub band_sweep: Vec<BandSweepPoint>,
    pub warnings: Vec<String>,
    pub visitation: VisitationGrid,
}

pub const COVERAGE_BINS: usize = 16;

impl DiagnosticsReport {
    pub fn compute(
        field: &UncertaintyField,
        shaping: &ShapingConfig,
        band: &BandSpec,
        episodes: &[Vec<Transition>],
        grid_resolution: usize,
    ) -> Result<Self> {
        let all = flatten(episodes);
        let states = visited_states(episodes);
        let mut warnings = Vec::new();

        let tang = tangential_speed(field, shaping, band, &all)?;
        if tang.n_degenerate > 0 {
            warnings.push(format!(
                "{} in-band states had a vanishing rotational field and were excluded from tangential speed",
                tang.n_degenerate
            ));
        }
        if tang.flagged {
            warnings.push("no in-band transitions; tangential speed defaulted to 0".into());
        }
        let unsafe_stat = unsafe_rate(field, band, &all)?;
        if unsafe_stat.flagged {
            warnings.push("no transitions; unsafe rate defaulted to 0".into());
        }
        let per_bump: Vec<f64> = field
            .bumps()
            .iter()
            .map(|b| {
                angular_coverage_about(field, band, &b.center, &states, COVERAGE_BINS)
                    .map(|s| s.value)
            })
            .collect::<Result<_>>()?;
        let coverage = if field.bumps().len() == 1 {
            Some(per_bump[0])
        } else {
            None
        };
        let off_mass = if states.is_empty() {
            0.0
        } else {
            off_manifold_mass(field, band, &states, band.delta_band)?
        };
        let sticking = no_sticking_value(field, shaping, &all)?;
        if sticking.flagged {
            warnings.push("no transitions; no-sticking value defaulted to 0".into());
        }

        let n_episodes = episodes.len();
        let goal_hits = episodes
            .iter()
            .filter(|ep| ep.iter().any(|tr| tr.goal_reached))
            .count();
        let mut pre_goal_in_band_steps = Vec::with_capacity(n_episodes);
        for ep in episodes {
            let mut count = 0u32;
            for tr in ep {
                if band.in_band(field.value(&tr.s)?) {
                    count += 1;
                }
                if tr.goal_reached {
                    break;
                }
            }
            pre_goal_in_band_steps.push(count);
        }

        let per_ep = |f: fn(&Transition) -> f64| -> f64 {
            if n_episodes == 0 {
                return 0.0;
            }
            episodes
                .iter()
                .map(|ep| ep.iter().map(&f).sum::<f64>())
                .sum::<f64>()
                / n_episodes as f64
        };

        // Band-width sensitivity: half, nominal, double.
        let mut band_sweep = Vec::with_capacity(3);
        for factor in [0.5, 1.0, 2.0] {
            let swept = BandSpec::new(band.u_mid, band.delta_band * factor, band.eps_unsafe)?;
            let ts = tangential_speed(field, shaping, &swept, &all)?.value;
            let om = if states.is_empty() {
                0.0
            } else {
                off_manifold_mass(field, &swept, &states, swept.delta_band)?
            };
            let cov = if field.bumps().len() == 1 {
                Some(angular_coverage(field, &swept, &states, COVERAGE_BINS)?.value)
            } else {
                None
            };
            band_sweep.push(BandSweepPoint {
                delta_band: swept.delta_band,
                tangential_speed: ts,
                off_manifold_mass: om,
                angular_coverage: cov,
            });
        }

        Ok(DiagnosticsReport {
            band: *band,
            n_episodes,
            n_transitions: all.len(),
            tangential_speed: tang.value,
            tangential_in_band_count: tang.n_used,
            n_degenerate_excluded: tang.n_degenerate,
            unsafe_rate: unsafe_stat.value,
            angular_coverage: coverage,
            per_bump_angular_coverage: per_bump,
            off_manifold_mass: off_mass,
            no_sticking_value: sticking.value,
            goal_rate: if n_episodes > 0 {
                goal_hits as f64 / n_episodes as f64
            } else {
                0.0
            },
            mean_base_return: per_ep(|tr| tr.base_reward),
            mean_shaped_return: per_ep(|tr| tr.shaped_reward),
            mean_episode_len: if n_episodes > 0 {
                all.len() as f64 / n_episodes as f64
            } else {
                0.0
            },
            pre_goal_in_band_steps,
            band_sweep,
            warnings,
            visitation: visitation_grid(&states, grid_resolution)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::GaussianBump;
    use proptest::prelude::*;
    use rand::Rng;

    fn bump_field() -> UncertaintyField {
        UncertaintyField::new(
            2,
            vec![GaussianBump {
                amplitude: 1.0,
                center: vec![0.5, 0.5],
                sigma: 0.15,
            }],
        )
        .unwrap()
    }

    fn two_bump_field() -> UncertaintyField {
        UncertaintyField::new(
            2,
            vec![
                GaussianBump {
                    amplitude: 1.0,
                    center: vec![0.3, 0.3],
                    sigma: 0.1,
                },
                GaussianBump {
                    amplitude: 1.0,
                    center: vec![0.7, 0.7],
                    sigma: 0.1,
                },
            ],
        )
        .unwrap()
    }

    fn band() -> BandSpec {
        BandSpec::new(0.5, 0.1, 0.1).unwrap()
    }

    /// Transition with only the fields diagnostics read (positions and base
    /// reward); everything else zeroed.
    fn tr(s: [f64; 2], s_next: [f64; 2]) -> Transition {
        Transition {
            t: 0,
            s: s.to_vec(),
            obs: s.to_vec(),
            a: vec![0.0, 0.0],
            s_next: s_next.to_vec(),
            obs_next: s_next.to_vec(),
            base_reward: 0.0,
            shaped_reward: 0.0,
            grad_term: 0.0,
            rot_term: 0.0,
            done: false,
            goal_reached: false,
            u_s: 0.0,
            u_s_next: 0.0,
        }
    }

    /// A point on the level circle of the default bump at angle theta.
    fn on_ring(theta: f64) -> [f64; 2] {
        let r = level_radius(1.0, 0.15, 0.5).unwrap();
        [0.5 + r * theta.cos(), 0.5 + r * theta.sin()]
    }

    fn unit_tangent(field: &UncertaintyField, shaping: &ShapingConfig, s: &[f64]) -> Vec<f64> {
        let wg = shaping.w.apply(&field.gradient(s).unwrap()).unwrap();
        let n = norm(&wg);
        wg.iter().map(|v| v / n).collect()
    }

    #[test]
    fn tangential_speed_of_unit_projection_steps() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        let b = band();
        let mut trs = Vec::new();
        for k in 0..8 {
            let s = on_ring(k as f64 * 0.7);
            let t = unit_tangent(&field, &shaping, &s);
            trs.push(tr(s, [s[0] + 0.05 * t[0], s[1] + 0.05 * t[1]]));
        }
        let stat = tangential_speed(&field, &shaping, &b, &trs).unwrap();
        assert_eq!(stat.n_used, 8);
        assert!((stat.value - 0.05).abs() < 1e-12, "got {}", stat.value);
    }

    #[test]
    fn tangential_speed_ignores_gradient_aligned_steps() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        let s = on_ring(0.3);
        let g = field.gradient(&s).unwrap();
        let gn = norm(&g);
        let trs = vec![tr(s, [s[0] + 0.05 * g[0] / gn, s[1] + 0.05 * g[1] / gn])];
        let stat = tangential_speed(&field, &shaping, &band(), &trs).unwrap();
        assert!(stat.value.abs() < 1e-12, "got {}", stat.value);
    }

    #[test]
    fn tangential_speed_is_negative_against_the_orientation() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        let s = on_ring(1.1);
        let t = unit_tangent(&field, &shaping, &s);
        let trs = vec![tr(s, [s[0] - 0.07 * t[0], s[1] - 0.07 * t[1]])];
        let stat = tangential_speed(&field, &shaping, &band(), &trs).unwrap();
        assert!((stat.value + 0.07).abs() < 1e-12, "got {}", stat.value);
    }

    #[test]
    fn tangential_speed_flags_empty_band_and_counts_degenerates() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        // Far corner: U ~ 0, out of band.
        let stat =
            tangential_speed(&field, &shaping, &band(), &[tr([0.02, 0.02], [0.03, 0.02])])
                .unwrap();
        assert!(stat.flagged);
        assert_eq!(stat.value, 0.0);
        // Exact center: in-band would require |1 - 0.5| < 0.1, false; use a
        // band wide enough to include the peak where the gradient vanishes.
        let wide = BandSpec::new(0.5, 0.6, 0.1).unwrap();
        let stat = tangential_speed(&field, &shaping, &wide, &[tr([0.5, 0.5], [0.5, 0.5])])
            .unwrap();
        assert_eq!(stat.n_degenerate, 1);
        assert_eq!(stat.n_used, 0);
    }

    #[test]
    fn unsafe_rate_counts_landings_above_the_level() {
        let field = bump_field();
        let b = band();
        let deep = [0.5, 0.52]; // U near 1 > 0.6
        let far = [0.05, 0.05]; // U near 0
        assert_eq!(
            unsafe_rate(&field, &b, &[tr(far, deep), tr(far, deep)]).unwrap().value,
            1.0
        );
        assert_eq!(
            unsafe_rate(&field, &b, &[tr(deep, far), tr(deep, far)]).unwrap().value,
            0.0
        );
        assert_eq!(
            unsafe_rate(&field, &b, &[tr(far, deep), tr(far, far)]).unwrap().value,
            0.5
        );
        assert!(unsafe_rate(&field, &b, &[]).unwrap().flagged);
    }

    #[test]
    fn coverage_is_full_at_all_bin_centers_and_one_sixteenth_in_one_sector() {
        let field = bump_field();
        let b = band();
        let full: Vec<Vec<f64>> = (0..16)
            .map(|k| {
                let theta = (k as f64 + 0.5) / 16.0 * std::f64::consts::TAU - std::f64::consts::PI;
                on_ring(theta).to_vec()
            })
            .collect();
        assert_eq!(angular_coverage(&field, &b, &full, 16).unwrap().value, 1.0);

        let clustered: Vec<Vec<f64>> =
            (0..40).map(|k| on_ring(0.01 + 1e-4 * k as f64).to_vec()).collect();
        let stat = angular_coverage(&field, &b, &clustered, 16).unwrap();
        assert_eq!(stat.value, 1.0 / 16.0);

        let empty = angular_coverage(&field, &b, &[vec![0.02, 0.02]], 16).unwrap();
        assert_eq!(empty.value, 0.0);
        assert!(empty.flagged);
    }

    #[test]
    fn coverage_rejects_multi_bump_fields_but_supports_per_bump_centers() {
        let field = two_bump_field();
        let b = band();
        let err = angular_coverage(&field, &b, &[], 16).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        let r = level_radius(1.0, 0.1, 0.5).unwrap();
        let states: Vec<Vec<f64>> = (0..32)
            .map(|k| {
                let theta = k as f64 / 32.0 * std::f64::consts::TAU;
                vec![0.3 + r * theta.cos(), 0.3 + r * theta.sin()]
            })
            .collect();
        let stat = angular_coverage_about(&field, &b, &[0.3, 0.3], &states, 16).unwrap();
        assert!(stat.value > 0.9, "got {}", stat.value);
    }

    #[test]
    fn off_manifold_mass_matches_counting() {
        let field = bump_field();
        let b = band();
        let ring: Vec<Vec<f64>> = (0..10).map(|k| on_ring(k as f64).to_vec()).collect();
        assert_eq!(off_manifold_mass(&field, &b, &ring, 0.05).unwrap(), 0.0);
        let far: Vec<Vec<f64>> = vec![vec![0.01, 0.01]; 10];
        assert_eq!(off_manifold_mass(&field, &b, &far, 0.3).unwrap(), 1.0);
        let mixed: Vec<Vec<f64>> = ring.iter().take(5).chain(far.iter().take(5)).cloned().collect();
        assert_eq!(off_manifold_mass(&field, &b, &mixed, 0.05).unwrap(), 0.5);
        assert!(off_manifold_mass(&field, &b, &ring, 0.0).is_err());
    }

    #[test]
    fn no_sticking_is_zero_for_self_loops_positive_along_tangent_and_odd() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        let loops: Vec<Transition> = (0..6).map(|k| tr(on_ring(k as f64), on_ring(k as f64))).collect();
        assert_eq!(no_sticking_value(&field, &shaping, &loops).unwrap().value, 0.0);

        let mut fwd = Vec::new();
        let mut rev = Vec::new();
        for k in 0..6 {
            let s = on_ring(k as f64);
            let t = unit_tangent(&field, &shaping, &s);
            fwd.push(tr(s, [s[0] + 0.05 * t[0], s[1] + 0.05 * t[1]]));
            rev.push(tr(s, [s[0] - 0.05 * t[0], s[1] - 0.05 * t[1]]));
        }
        let v_fwd = no_sticking_value(&field, &shaping, &fwd).unwrap().value;
        let v_rev = no_sticking_value(&field, &shaping, &rev).unwrap().value;
        assert!(v_fwd > 0.0);
        assert!((v_fwd + v_rev).abs() < 1e-12, "{v_fwd} vs {v_rev}");
        assert!(no_sticking_value(&field, &shaping, &[]).unwrap().flagged);
    }

    #[test]
    fn monotonicity_in_eps_and_eps_unsafe() {
        let field = bump_field();
        let b = band();
        let mut rng = stream_rng(77, stream::VERIFY);
        let states: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let transitions: Vec<Transition> = states
            .windows(2)
            .map(|w| tr([w[0][0], w[0][1]], [w[1][0], w[1][1]]))
            .collect();
        let mut prev_mass = f64::INFINITY;
        let mut prev_unsafe = f64::INFINITY;
        for eps in [0.02, 0.05, 0.1, 0.2, 0.4] {
            let mass = off_manifold_mass(&field, &b, &states, eps).unwrap();
            assert!(mass <= prev_mass);
            prev_mass = mass;
            let bu = BandSpec::new(b.u_mid, b.delta_band, eps).unwrap();
            let ur = unsafe_rate(&field, &bu, &transitions).unwrap().value;
            assert!(ur <= prev_unsafe);
            prev_unsafe = ur;
        }
    }

    #[test]
    fn speed_and_sticking_scale_exactly_with_step_doubling() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        let b = band();
        let mut rng = stream_rng(78, stream::VERIFY);
        let base: Vec<Transition> = (0..50)
            .map(|_| {
                let s = on_ring(rng.gen::<f64>() * std::f64::consts::TAU);
                let d = [0.01 * (rng.gen::<f64>() - 0.5), 0.01 * (rng.gen::<f64>() - 0.5)];
                tr(s, [s[0] + d[0], s[1] + d[1]])
            })
            .collect();
        // Doubled steps: s_next' = s + 2 (s_next - s); exact in fp.
        let doubled: Vec<Transition> = base
            .iter()
            .map(|t0| {
                let d = sub(&t0.s_next, &t0.s);
                tr(
                    [t0.s[0], t0.s[1]],
                    [t0.s[0] + 2.0 * d[0], t0.s[1] + 2.0 * d[1]],
                )
            })
            .collect();
        let v1 = tangential_speed(&field, &shaping, &b, &base).unwrap().value;
        let v2 = tangential_speed(&field, &shaping, &b, &doubled).unwrap().value;
        assert_eq!(v2, 2.0 * v1);
        let n1 = no_sticking_value(&field, &shaping, &base).unwrap().value;
        let n2 = no_sticking_value(&field, &shaping, &doubled).unwrap().value;
        assert_eq!(n2, 2.0 * n1);
    }

    #[test]
    fn visitation_grid_counts_and_merge() {
        let g = visitation_grid(&[vec![0.31, 0.74]], 10).unwrap();
        assert_eq!(g.total(), 1);
        assert_eq!(g.counts[7 * 10 + 3], 1);

        let g = visitation_grid(&vec![vec![0.99, 0.99]; 5], 4).unwrap();
        assert_eq!(g.counts[3 * 4 + 3], 5);
        assert_eq!(g.total(), 5);

        let mut a = visitation_grid(&[vec![0.1, 0.1]], 4).unwrap();
        let b = visitation_grid(&[vec![0.1, 0.1], vec![0.9, 0.9]], 4).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.total(), 3);
        assert_eq!(a.counts[0], 2);
        assert!(visitation_grid(&[], 1).is_err());
    }

    #[test]
    fn uniform_visitation_is_statistically_flat() {
        let mut rng = stream_rng(79, stream::VERIFY);
        let states: Vec<Vec<f64>> = (0..100_000).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let g = visitation_grid(&states, 10).unwrap();
        assert_eq!(g.total(), 100_000);
        // Binomial per cell: mean 1000, sigma = sqrt(n p (1-p)) ~ 31.5.
        let sigma = (100_000.0_f64 * 0.01 * 0.99).sqrt();
        for &c in &g.counts {
            assert!(
                (c as f64 - 1000.0).abs() < 5.0 * sigma,
                "cell count {c} too far from 1000"
            );
        }
    }

    #[test]
    fn grid_text_has_header_and_rows() {
        let g = visitation_grid(&[vec![0.1, 0.9]], 3).unwrap();
        let text = g.to_text("config_hash: deadbeef");
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config_hash: deadbeef");
        assert_eq!(lines[1], "3");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "1 0 0");
    }

    #[test]
    fn reference_controller_holds_the_band_and_circulates() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        let b = band();
        let env = EnvConfig::default();
        let ctrl = ReferenceController::default();
        let eps = scripted_reference_run(&env, &field, &shaping, &ctrl, 10, 123).unwrap();
        assert_eq!(eps.len(), 10);
        assert!(eps.iter().all(|ep| ep.len() == 60));
        let states = visited_states(&eps);
        let mass = off_manifold_mass(&field, &b, &states, b.delta_band).unwrap();
        assert!(mass < 0.05, "off-band mass {mass}");
        let all = flatten(&eps);
        let v0 = no_sticking_value(&field, &shaping, &all).unwrap().value;
        assert!(v0 > 0.0, "no-sticking {v0}");
        let speed = tangential_speed(&field, &shaping, &b, &all).unwrap().value;
        assert!(
            speed > 0.5 * ctrl.tangential_step,
            "tangential speed {speed}"
        );
    }

    #[test]
    fn reference_run_requires_single_bump_and_crossing_level() {
        let shaping = ShapingConfig::standard(0.5);
        let env = EnvConfig::default();
        let ctrl = ReferenceController::default();
        let err = scripted_reference_run(&env, &two_bump_field(), &shaping, &ctrl, 1, 0)
            .map(|_| ())
            .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        assert!(level_radius(1.0, 0.15, 1.5).is_err());
        assert!(level_radius(1.0, 0.15, 0.0).is_err());
    }

    #[test]
    fn concentration_passes_on_matched_on_manifold_runs() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        let b = band();
        let env = EnvConfig {
            noise_scale: 0.0,
            ..EnvConfig::default()
        };
        let ctrl = ReferenceController::default();
        let eps = scripted_reference_run(&env, &field, &shaping, &ctrl, 5, 9).unwrap();
        let run = flatten(&eps);
        let rep = concentration_bound_report(
            &field, &shaping, &b, 60.0, &run, &run, b.delta_band,
        )
        .unwrap();
        assert_eq!(rep.status, ConcentrationStatus::Pass);
        assert_eq!(rep.measured_mass, 0.0);
        assert!(rep.v_hat_0 > 0.0);
        assert!(rep.v_hat_max >= rep.v_hat_0);
    }

    #[test]
    fn concentration_is_vacuous_as_eps_vanishes() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        let b = band();
        let env = EnvConfig::default();
        let ctrl = ReferenceController::default();
        let eps = scripted_reference_run(&env, &field, &shaping, &ctrl, 3, 10).unwrap();
        let run = flatten(&eps);
        let rep =
            concentration_bound_report(&field, &shaping, &b, 60.0, &run, &run, 1e-9).unwrap();
        assert!(rep.vacuous, "bound {} should be vacuous", rep.bound);
        assert!(rep.bound > 1.0);
        assert!(concentration_bound_report(&field, &shaping, &b, 60.0, &run, &run, 0.0).is_err());
    }

    #[test]
    fn concentration_is_inconclusive_without_positive_reference_motion() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        let b = band();
        // Reference run of pure self-loops: v_hat_0 = 0.
        let loops: Vec<Transition> = (0..20).map(|k| {
            let s = on_ring(k as f64 * 0.3);
            tr(s, s)
        }).collect();
        let rep = concentration_bound_report(
            &field, &shaping, &b, 60.0, &loops, &loops, b.delta_band,
        )
        .unwrap();
        assert_eq!(rep.status, ConcentrationStatus::Inconclusive);
    }

    #[test]
    fn report_aggregates_reference_run() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        let b = band();
        let env = EnvConfig::default();
        let eps = scripted_reference_run(
            &env,
            &field,
            &shaping,
            &ReferenceController::default(),
            6,
            11,
        )
        .unwrap();
        let rep = DiagnosticsReport::compute(&field, &shaping, &b, &eps, 25).unwrap();
        assert_eq!(rep.n_episodes, 6);
        assert_eq!(rep.n_transitions, 360);
        assert!(rep.tangential_speed > 0.0);
        assert!(rep.no_sticking_value > 0.0);
        assert!(rep.unsafe_rate <= 0.05);
        assert!(rep.off_manifold_mass < 0.05);
        assert!(rep.angular_coverage.unwrap() > 0.5);
        assert_eq!(rep.visitation.total() as usize, 360 * 1 + 6);
        assert_eq!(rep.band_sweep.len(), 3);
        assert!(rep.band_sweep[0].delta_band < rep.band_sweep[2].delta_band);
        assert_eq!(rep.goal_rate, 0.0);
        // Report serializes cleanly.
        let json = serde_json::to_string(&rep).unwrap();
        let back: DiagnosticsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn band_spec_defaults_and_validation() {
        let field = bump_field();
        let shaping = ShapingConfig::standard(0.5);
        let b = BandSpec::from_shaping(&shaping, &field, None).unwrap();
        assert!((b.delta_band - 0.1).abs() < 1e-15);
        assert_eq!(b.u_mid, 0.5);
        assert_eq!(b.eps_unsafe, 0.1);
        assert!(BandSpec::new(0.5, 0.0, 0.1).is_err());
        assert!(BandSpec::new(0.5, -0.1, 0.1).is_err());
        assert!(BandSpec::new(0.5, 0.1, -0.1).is_err());
    }

    #[test]
    fn median_of_odd_and_even_sets() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    proptest! {
        #[test]
        fn coverage_is_invariant_under_bin_rotations(
            offsets in proptest::collection::vec((0usize..16, -0.4f64..0.4), 1..40),
            shift in 1usize..16,
        ) {
            let field = bump_field();
            let b = band();
            let width = std::f64::consts::TAU / 16.0;
            let angle_of = |bin: usize, off: f64| (bin as f64 + 0.5 + off) * width - std::f64::consts::PI;
            let states: Vec<Vec<f64>> = offsets
                .iter()
                .map(|&(bin, off)| on_ring(angle_of(bin, off)).to_vec())
                .collect();
            let rotated: Vec<Vec<f64>> = offsets
                .iter()
                .map(|&(bin, off)| on_ring(angle_of((bin + shift) % 16, off)).to_vec())
                .collect();
            let c0 = angular_coverage(&field, &b, &states, 16).unwrap().value;
            let c1 = angular_coverage(&field, &b, &rotated, 16).unwrap().value;
            prop_assert_eq!(c0, c1);
        }

        #[test]
        fn off_manifold_mass_stays_in_unit_interval(
            pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..60),
            eps in 1e-3f64..0.5,
        ) {
            let field = bump_field();
            let b = band();
            let states: Vec<Vec<f64>> = pts.iter().map(|&(x, y)| vec![x, y]).collect();
            let m = off_manifold_mass(&field, &b, &states, eps).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }
}
