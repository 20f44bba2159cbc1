//! Continuous 2-D box navigation: point mass in [0,1]^2 with clipped actions,
//! small Gaussian background noise, dense goal-progress reward, and a fixed
//! horizon. Reward assembly is pluggable so the same dynamics serve pure
//! exploration, baseline, and goal-directed experiments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::oracle::{Region, ScalarField, UncertaintyField};
use crate::sampling::randn;
use crate::shaping::{baseline_reward, shaping_reward, ShapingConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeEmbedding {
    /// Observation is the raw position (x, y).
    None,
    /// Observation is (x, y, remaining/horizon).
    NormalizedRemaining,
}

/// How the per-step training reward is assembled from the base (task) reward
/// and the intrinsic terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Vector-field shaping only; task reward recorded but excluded.
    Vf,
    /// Scalar uncertainty baseline with safety penalty only.
    Baseline,
    /// Task reward only.
    TaskOnly,
    /// Task reward plus vector-field shaping.
    VfPlusTask,
    /// Task reward plus scalar baseline.
    BaselinePlusTask,
}

impl RewardMode {
    pub fn uses_shaping(self) -> bool {
        matches!(self, RewardMode::Vf | RewardMode::VfPlusTask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub goal_center: Vec<f64>,
    pub goal_radius: f64,
    /// Standard deviation of the per-component Gaussian background noise.
    pub noise_scale: f64,
    pub horizon: u32,
    pub start_box: Region,
    pub step_penalty: f64,
    pub distance_reward_scale: f64,
    pub goal_bonus: f64,
    pub action_limit: f64,
    pub time_embedding: TimeEmbedding,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            goal_center: vec![0.9, 0.9],
            goal_radius: 0.05,
            noise_scale: 0.01,
            horizon: 60,
            start_box: Region {
                lo: vec![0.05, 0.05],
                hi: vec![0.2, 0.2],
            },
            step_penalty: 0.01,
            distance_reward_scale: 10.0,
            goal_bonus: 20.0,
            action_limit: 0.1,
            time_embedding: TimeEmbedding::None,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.goal_center.len() != 2 {
            return Err(Error::InvalidConfig(
                "env.goal_center must be 2-dimensional".into(),
            ));
        }
        if !(self.goal_radius > 0.0) {
            return Err(Error::InvalidConfig("env.goal_radius must be > 0".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("env.horizon must be >= 1".into()));
        }
        if !(self.action_limit > 0.0) {
            return Err(Error::InvalidConfig("env.action_limit must be > 0".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidConfig("env.noise_scale must be >= 0".into()));
        }
        if self.start_box.dim() != 2 {
            return Err(Error::InvalidConfig("env.start_box must be 2-dimensional".into()));
        }
        let unit = Region::unit_box(2);
        if !unit.contains(&self.start_box.lo) || !unit.contains(&self.start_box.hi) {
            return Err(Error::InvalidConfig(
                "env.start_box must lie inside [0,1]^2".into(),
            ));
        }
        for (name, v) in [
            ("step_penalty", self.step_penalty),
            ("distance_reward_scale", self.distance_reward_scale),
            ("goal_bonus", self.goal_bonus),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("env.{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        match self.time_embedding {
            TimeEmbedding::None => 2,
            TimeEmbedding::NormalizedRemaining => 3,
        }
    }

    pub fn act_dim(&self) -> usize {
        2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub pos: Vec<f64>,
    pub t: u32,
    /// Set once the episode ended (goal or horizon); stepping then is an error.
    pub finished: bool,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: EnvState,
    pub base_reward: f64,
    pub done: bool,
    pub goal_reached: bool,
}

/// Everything recorded about one environment step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub t: u32,
    pub s: Vec<f64>,
    pub obs: Vec<f64>,
    /// Normalized action in [-1, 1]^2 as emitted by the policy; the physical
    /// displacement is action_limit times this (plus noise, then clamping).
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub obs_next: Vec<f64>,
    pub base_reward: f64,
    /// Training reward after reward-mode assembly.
    pub shaped_reward: f64,
    pub grad_term: f64,
    pub rot_term: f64,
    pub done: bool,
    /// True only for goal terminations; horizon cuts keep bootstrapping.
    pub goal_reached: bool,
    pub u_s: f64,
    pub u_s_next: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn reset(cfg: &EnvConfig, rng: &mut impl Rng) -> EnvState {
    EnvState {
        pos: cfg.start_box.sample(rng),
        t: 0,
        finished: false,
    }
}

/// One dynamics step. Clips the normalized action componentwise, scales it
/// by action_limit, adds Gaussian noise (drawn even when noise_scale is 0,
/// keeping rng streams aligned across noise settings), clamps to the unit
/// box, and scores goal progress.
pub fn step(
    cfg: &EnvConfig,
    state: &EnvState,
    action: &[f64],
    rng: &mut impl Rng,
) -> Result<StepResult> {
    if state.finished || state.t >= cfg.horizon {
        return Err(Error::EpisodeFinished);
    }
    if action.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: action.len(),
            context: "env action".into(),
        });
    }
    // Actions arrive on the normalized box [-1, 1]^2; the env owns the
    // physical scale. Policies that worked in physical units would carry a
    // -ln(action_limit) offset in every log-density, which turns the SAC
    // entropy term into a large per-step penalty for surviving.
    let a_clipped: Vec<f64> = action
        .iter()
        .map(|a| a.clamp(-1.0, 1.0) * cfg.action_limit)
        .collect();
    let noise: Vec<f64> = (0..2).map(|_| cfg.noise_scale * randn(rng)).collect();
    let unit = Region::unit_box(2);
    let raw: Vec<f64> = (0..2)
        .map(|i| state.pos[i] + a_clipped[i] + noise[i])
        .collect();
    let pos_next = unit.clamp(&raw);

    let d_before = dist(&state.pos, &cfg.goal_center);
    let d_after = dist(&pos_next, &cfg.goal_center);
    let mut base_reward = cfg.distance_reward_scale * (d_before - d_after) - cfg.step_penalty;
    let goal_reached = d_after <= cfg.goal_radius;
    if goal_reached {
        base_reward += cfg.goal_bonus;
    }
    let t_next = state.t + 1;
    let done = goal_reached || t_next == cfg.horizon;
    Ok(StepResult {
        state: EnvState {
            pos: pos_next,
            t: t_next,
            finished: done,
        },
        base_reward,
        done,
        goal_reached,
    })
}

pub fn observe(cfg: &EnvConfig, state: &EnvState) -> Vec<f64> {
    match cfg.time_embedding {
        TimeEmbedding::None => state.pos.clone(),
        TimeEmbedding::NormalizedRemaining => {
            let remaining = (cfg.horizon - state.t.min(cfg.horizon)) as f64 / cfg.horizon as f64;
            vec![state.pos[0], state.pos[1], remaining]
        }
    }
}

/// Assemble the training reward for one transition under a mode.
pub fn assemble_reward(mode: RewardMode, base: f64, shaping_total: f64, baseline: f64) -> f64 {
    match mode {
        RewardMode::Vf => shaping_total,
        RewardMode::Baseline => baseline,
        RewardMode::TaskOnly => base,
        RewardMode::VfPlusTask => base + shaping_total,
        RewardMode::BaselinePlusTask => base + baseline,
    }
}

/// Roll out one episode. `act` maps an observation to an action; it may
/// carry its own rng. Env noise draws come from `rng`.
pub fn run_episode<R: Rng, F: FnMut(&[f64]) -> Result<Vec<f64>>>(
    cfg: &EnvConfig,
    field: &UncertaintyField,
    shaping_cfg: &ShapingConfig,
    reward_mode: RewardMode,
    rng: &mut R,
    mut act: F,
) -> Result<Vec<Transition>> {
    let mut state = reset(cfg, rng);
    let mut out = Vec::with_capacity(cfg.horizon as usize);
    loop {
        let obs = observe(cfg, &state);
        let a = act(&obs)?;
        let res = step(cfg, &state, &a, rng)?;
        out.push(make_transition(
            cfg,
            field,
            shaping_cfg,
            reward_mode,
            &state,
            &obs,
            &a,
            &res,
        )?);
        state = res.state;
        if state.finished {
            return Ok(out);
        }
    }
}

/// Score a realized step under the field and mode; shared by the training
/// loop and run_episode so both record identical quantities.
#[allow(clippy::too_many_arguments)]
pub fn make_transition(
    cfg: &EnvConfig,
    field: &UncertaintyField,
    shaping_cfg: &ShapingConfig,
    reward_mode: RewardMode,
    state: &EnvState,
    obs: &[f64],
    action: &[f64],
    res: &StepResult,
) -> Result<Transition> {
    let terms = shaping_reward(shaping_cfg, field, &state.pos, &res.state.pos)?;
    let u_s = field.value(&state.pos)?;
    let u_s_next = field.value(&res.state.pos)?;
    let bl = baseline_reward(shaping_cfg, field, &res.state.pos)?;
    let shaped = assemble_reward(reward_mode, res.base_reward, terms.total, bl);
    Ok(Transition {
        t: state.t,
        s: state.pos.clone(),
        obs: obs.to_vec(),
        a: action.to_vec(),
        s_next: res.state.pos.clone(),
        obs_next: observe(cfg, &res.state),
        base_reward: res.base_reward,
        shaped_reward: shaped,
        grad_term: terms.grad_term,
        rot_term: terms.rot_term,
        done: res.done,
        goal_reached: res.goal_reached,
        u_s,
        u_s_next,
    })
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,x,y,ax,ay,x_next,y_next,base_r,grad_term,rot_term,u_s,done";

/// One CSV row in the pinned trajectory format.
pub fn trajectory_csv_row(tr: &Transition) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        tr.t,
        tr.s[0],
        tr.s[1],
        tr.a[0],
        tr.a[1],
        tr.s_next[0],
        tr.s_next[1],
        tr.base_reward,
        tr.grad_term,
        tr.rot_term,
        tr.u_s,
        u8::from(tr.done)
    )
}
