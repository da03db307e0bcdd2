//! The four continuous cooperative tasks on the particle world.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::physics::{add, dot, norm, scale, sub};
use super::{overlap, ActionSpace, Entity, MarkovGame, Physics, Spring, Step, Vec2, World};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Spread,
    Bounce,
    Compromise,
    Chase,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Spread, Task::Bounce, Task::Compromise, Task::Chase];

    pub fn name(self) -> &'static str {
        match self {
            Task::Spread => "spread",
            Task::Bounce => "bounce",
            Task::Compromise => "compromise",
            Task::Chase => "chase",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringParams {
    pub rest_length: f64,
    pub stiffness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BounceParams {
    pub ball_height: f64,
    pub ball_speed: f64,
    pub ball_radius: f64,
    pub target_height: f64,
    pub target_radius: f64,
    /// Ball and target abscissas are drawn from `[-range, range]`.
    pub horizontal_range: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaseParams {
    pub predator_radius: f64,
    pub predator_accel: f64,
    pub predator_max_speed: f64,
    pub prey_radius: f64,
    pub prey_accel: f64,
    pub prey_max_speed: f64,
    pub predator_gain: f64,
    pub wall_gain: f64,
    /// The flight direction from each predator is rotated by this angle
    /// (radians) so the prey slides out of corners instead of stalling.
    pub evasion_angle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: Task,
    pub n_agents: usize,
    pub max_steps: usize,
    pub physics: Physics,
    pub agent_radius: f64,
    pub agent_accel: f64,
    pub agent_max_speed: f64,
    pub landmark_radius: f64,
    pub spring: SpringParams,
    pub bounce: BounceParams,
    pub chase: ChaseParams,
}

impl TaskConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            n_agents: if task == Task::Spread { 3 } else { 2 },
            max_steps: 100,
            physics: Physics::default(),
            agent_radius: 0.05,
            agent_accel: 5.0,
            agent_max_speed: 1.0,
            landmark_radius: 0.08,
            spring: SpringParams { rest_length: 0.5, stiffness: 5.0 },
            bounce: BounceParams {
                ball_height: 0.9,
                ball_speed: 1.0,
                ball_radius: 0.03,
                target_height: 0.6,
                target_radius: 0.15,
                horizontal_range: 0.8,
            },
            chase: ChaseParams {
                predator_radius: 0.075,
                predator_accel: 3.0,
                predator_max_speed: 1.0,
                prey_radius: 0.05,
                prey_accel: 4.0,
                prey_max_speed: 1.3,
                predator_gain: 0.1,
                wall_gain: 0.01,
                evasion_angle: 0.3,
            },
        }
    }

    pub fn with_agents(mut self, n: usize) -> Self {
        self.n_agents = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let agents_ok = match self.task {
            Task::Spread => (2..=6).contains(&self.n_agents),
            Task::Bounce | Task::Compromise => self.n_agents == 2,
            Task::Chase => (1..=2).contains(&self.n_agents),
        };
        if !agents_ok {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} does not support {} agents",
                self.task, self.n_agents
            )));
        }
        let p = &self.physics;
        let positive = [
            p.dt,
            p.contact_force,
            p.contact_margin,
            self.agent_radius,
            self.agent_accel,
            self.agent_max_speed,
            self.landmark_radius,
            self.spring.rest_length,
            self.spring.stiffness,
            self.bounce.ball_speed,
            self.bounce.ball_radius,
            self.bounce.target_radius,
            self.chase.predator_radius,
            self.chase.predator_accel,
            self.chase.predator_max_speed,
            self.chase.prey_radius,
            self.chase.prey_accel,
            self.chase.prey_max_speed,
        ];
        if self.max_steps == 0 || positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("task constants must be positive".into()));
        }
        if !(0.0..1.0).contains(&p.damping) {
            return Err(Error::InvalidArgument("damping must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        let others = match self.task {
            Task::Spread => 2 * self.n_agents - 1,
            Task::Bounce | Task::Compromise => 3,
            Task::Chase => self.n_agents,
        };
        4 + 2 * others
    }
}

/// Scripted prey drive: `gain / d^2` repulsion from each predator and each
/// wall, norm clamped to 1.
pub fn prey_repulsion(prey: Vec2, predators: &[Vec2], params: &ChaseParams) -> Vec2 {
    let (sin, cos) = (libm::sin(params.evasion_angle), libm::cos(params.evasion_angle));
    let mut f = [0.0; 2];
    for &p in predators {
        let d = sub(prey, p);
        let dist = norm(d).max(1e-3);
        let away = [cos * d[0] - sin * d[1], sin * d[0] + cos * d[1]];
        f = add(f, scale(away, params.predator_gain / (dist * dist * dist)));
    }
    let wall_gain = params.wall_gain;
    for k in 0..2 {
        let lo = (prey[k] + 1.0).max(1e-3);
        let hi = (1.0 - prey[k]).max(1e-3);
        f[k] += wall_gain * (1.0 / (lo * lo) - 1.0 / (hi * hi));
    }
    let n = norm(f);
    if n > 1.0 {
        scale(f, 1.0 / n)
    } else {
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BallPhase {
    Waiting,
    Falling,
    Bounced,
    Lost,
}

#[derive(Clone, Debug, PartialEq)]
struct Ball {
    pos: Vec2,
    vel: Vec2,
    phase: BallPhase,
}

/// Intersection of segments `p0p1` and `q0q1`, as the point on `p0p1`.
fn segment_intersection(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> Option<Vec2> {
    let r = sub(p1, p0);
    let s = sub(q1, q0);
    let denom = r[0] * s[1] - r[1] * s[0];
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = sub(q0, p0);
    let t = (qp[0] * s[1] - qp[1] * s[0]) / denom;
    let u = (qp[0] * r[1] - qp[1] * r[0]) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| add(p0, scale(r, t)))
}

/// Mirrors `v` about the line through `a` and `b`.
fn reflect(v: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let d = sub(b, a);
    let len = norm(d);
    let n = [-d[1] / len, d[0] / len];
    sub(v, scale(n, 2.0 * dot(v, n)))
}

/// Reward for a ball leaving `origin` along `dir`: 10 through the target
/// disc, 0.2 out of the top edge, 0.1 otherwise.
fn classify_bounce(origin: Vec2, dir: Vec2, target: Vec2, target_radius: f64) -> f64 {
    let len = norm(dir);
    let d = scale(dir, 1.0 / len);
    let w = sub(target, origin);
    let along = dot(w, d);
    let closest_sq = if along <= 0.0 { dot(w, w) } else { dot(w, w) - along * along };
    if closest_sq < target_radius * target_radius {
        return 10.0;
    }
    let mut exit_t = f64::INFINITY;
    let mut top = false;
    for k in 0..2 {
        if d[k] != 0.0 {
            let bound = if d[k] > 0.0 { 1.0 } else { -1.0 };
            let t = (bound - origin[k]) / d[k];
            if t < exit_t {
                exit_t = t;
                top = k == 1 && d[k] > 0.0;
            }
        }
    }
    if top {
        0.2
    } else {
        0.1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnv {
    cfg: TaskConfig,
    world: World,
    t: usize,
    ball: Ball,
    target: Vec2,
}

impl ParticleEnv {
    pub fn new(cfg: TaskConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_agents;
        let mut world = World::new(cfg.physics);
        match cfg.task {
            Task::Spread => {
                world.entities.extend((0..n).map(|_| Entity::agent(cfg.agent_radius, cfg.agent_max_speed)));
                world.entities.extend((0..n).map(|_| Entity::landmark(cfg.landmark_radius)));
            }
            Task::Bounce | Task::Compromise => {
                world.entities.extend((0..2).map(|_| Entity::agent(cfg.agent_radius, cfg.agent_max_speed)));
                if cfg.task == Task::Compromise {
                    world.entities.extend((0..2).map(|_| Entity::landmark(cfg.landmark_radius)));
                }
                world.springs.push(Spring {
                    a: 0,
                    b: 1,
                    rest_length: cfg.spring.rest_length,
                    stiffness: cfg.spring.stiffness,
                });
            }
            Task::Chase => {
                let c = &cfg.chase;
                world.entities.extend((0..n).map(|_| Entity::agent(c.predator_radius, c.predator_max_speed)));
                world.entities.push(Entity::agent(c.prey_radius, c.prey_max_speed));
            }
        }
        Ok(Self {
            cfg,
            world,
            t: 0,
            ball: Ball { pos: [0.0; 2], vel: [0.0; 2], phase: BallPhase::Waiting },
            target: [0.0; 2],
        })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn timestep(&self) -> usize {
        self.t
    }

    fn uniform_in_arena(rng: &mut dyn RngCore, radius: f64) -> Vec2 {
        let lim = 1.0 - radius;
        [rng.random_range(-lim..=lim), rng.random_range(-lim..=lim)]
    }

    fn ball_release_step(&self) -> usize {
        self.cfg.max_steps / 2
    }

    /// Entity positions observed by `agent` after its own pos/vel.
    fn others(&self, agent: usize) -> Vec<Vec2> {
        let n = self.cfg.n_agents;
        let e = &self.world.entities;
        let mates = (0..n).filter(|&j| j != agent).map(|j| e[j].pos);
        match self.cfg.task {
            Task::Spread => mates.chain(e[n..].iter().map(|l| l.pos)).collect(),
            Task::Bounce => mates.chain([self.ball.pos, self.target]).collect(),
            Task::Compromise => mates.chain([e[2 + agent].pos, e[3 - agent].pos]).collect(),
            Task::Chase => mates.chain([e[n].pos]).collect(),
        }
    }

    pub fn observe(&self, agent: usize) -> Vec<f64> {
        let me = &self.world.entities[agent];
        let mut o = Vec::with_capacity(self.cfg.obs_dim());
        o.extend_from_slice(&me.pos);
        o.extend_from_slice(&me.vel);
        for p in self.others(agent) {
            o.extend_from_slice(&sub(p, me.pos));
        }
        o
    }

    fn observe_all(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_agents).map(|i| self.observe(i)).collect()
    }

    fn spread_reward(&self) -> f64 {
        let n = self.cfg.n_agents;
        let e = &self.world.entities;
        let covered = e[n..]
            .iter()
            .filter(|l| e[..n].iter().any(|a| overlap(a.pos, a.radius, l.pos, l.radius)))
            .count();
        let mut collisions = 0;
        for i in 0..n {
            for j in i + 1..n {
                collisions += usize::from(overlap(e[i].pos, e[i].radius, e[j].pos, e[j].radius));
            }
        }
        covered as f64 - collisions as f64
    }

    /// Advances the ball against the spring segment; returns the bounce
    /// reward if it bounced this step.
    fn bounce_ball(&mut self) -> Option<f64> {
        if self.ball.phase == BallPhase::Waiting && self.t >= self.ball_release_step() {
            self.ball.phase = BallPhase::Falling;
            self.ball.vel = [0.0, -self.cfg.bounce.ball_speed];
        }
        if self.ball.phase != BallPhase::Falling {
            return None;
        }
        let next = add(self.ball.pos, scale(self.ball.vel, self.cfg.physics.dt));
        let (a, b) = (self.world.entities[0].pos, self.world.entities[1].pos);
        if norm(sub(b, a)) > 1e-9 {
            if let Some(hit) = segment_intersection(self.ball.pos, next, a, b) {
                let v = reflect(self.ball.vel, a, b);
                self.ball.pos = hit;
                self.ball.vel = v;
                self.ball.phase = BallPhase::Bounced;
                return Some(classify_bounce(hit, v, self.target, self.cfg.bounce.target_radius));
            }
        }
        self.ball.pos = next;
        if next[1] < -1.0 {
            self.ball.phase = BallPhase::Lost;
        }
        None
    }

    fn compromise_rewards(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut r = vec![0.0; 2];
        for (i, ri) in r.iter_mut().enumerate() {
            let (a, l) = (&self.world.entities[i], &self.world.entities[2 + i]);
            if overlap(a.pos, a.radius, l.pos, l.radius) {
                *ri = 10.0;
                let radius = l.radius;
                self.world.entities[2 + i].pos = Self::uniform_in_arena(rng, radius);
            }
        }
        r
    }

    fn chase_reward(&self) -> f64 {
        let n = self.cfg.n_agents;
        let e = &self.world.entities;
        e[..n].iter().filter(|p| overlap(p.pos, p.radius, e[n].pos, e[n].radius)).count() as f64
    }
}

impl MarkovGame for ParticleEnv {
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn obs_dim(&self, _agent: usize) -> usize {
        self.cfg.obs_dim()
    }

    fn action_space(&self, _agent: usize) -> ActionSpace {
        ActionSpace::Continuous(2)
    }

    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        self.t = 0;
        for e in &mut self.world.entities {
            e.pos = Self::uniform_in_arena(rng, e.radius);
            e.vel = [0.0; 2];
        }
        if self.cfg.task == Task::Bounce {
            let b = self.cfg.bounce;
            let x_ball = rng.random_range(-b.horizontal_range..=b.horizontal_range);
            let x_target = rng.random_range(-b.horizontal_range..=b.horizontal_range);
            self.ball = Ball { pos: [x_ball, b.ball_height], vel: [0.0; 2], phase: BallPhase::Waiting };
            self.target = [x_target, b.target_height];
        }
        self.observe_all()
    }

    fn step(&mut self, actions: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<Step> {
        let n = self.cfg.n_agents;
        if actions.len() != n {
            return Err(Error::shape("joint action", n, actions.len()));
        }
        let accel = if self.cfg.task == Task::Chase { self.cfg.chase.predator_accel } else { self.cfg.agent_accel };
        let mut control = self.world.zero_control();
        for (i, a) in actions.iter().enumerate() {
            if a.len() != 2 {
                return Err(Error::shape("agent action", 2, a.len()));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("action"));
            }
            control[i] = [a[0].clamp(-1.0, 1.0) * accel, a[1].clamp(-1.0, 1.0) * accel];
        }
        if self.cfg.task == Task::Chase {
            let c = self.cfg.chase;
            let predators: Vec<Vec2> = self.world.entities[..n].iter().map(|e| e.pos).collect();
            let drive = prey_repulsion(self.world.entities[n].pos, &predators, &c);
            control[n] = scale(drive, c.prey_accel);
        }
        self.world.integrate(&control);

        let mut terminal = false;
        let rewards = match self.cfg.task {
            Task::Spread => vec![self.spread_reward(); n],
            Task::Bounce => {
                let r = self.bounce_ball();
                terminal = r.is_some();
                vec![r.unwrap_or(0.0); n]
            }
            Task::Compromise => self.compromise_rewards(rng),
            Task::Chase => vec![self.chase_reward(); n],
        };
        self.t += 1;
        Ok(Step { obs: self.observe_all(), rewards, done: terminal || self.t >= self.cfg.max_steps, terminal })
    }
}

/// Names of the entities in observation order, for recordings.
pub fn observation_layout(cfg: &TaskConfig, agent: usize) -> Vec<String> {
    let mut names: Vec<String> = ["pos_x", "pos_y", "vel_x", "vel_y"].iter().map(|s| String::from(*s)).collect();
    let n = cfg.n_agents;
    let mates = (0..n).filter(|&j| j != agent).map(|j| alloc::format!("agent{j}"));
    let others: Vec<String> = match cfg.task {
        Task::Spread => mates.chain((0..n).map(|l| alloc::format!("landmark{l}"))).collect(),
        Task::Bounce => mates.chain(["ball".into(), "target".into()]).collect(),
        Task::Compromise => mates.chain(["own_landmark".into(), "other_landmark".into()]).collect(),
        Task::Chase => mates.chain(["prey".into()]).collect(),
    };
    for o in others {
        names.push(alloc::format!("{o}_dx"));
        names.push(alloc::format!("{o}_dy"));
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn env(task: Task) -> (ParticleEnv, seed::Rng) {
        let mut rng = seed::stream(11, seed::labels::ENV);
        let mut e = ParticleEnv::new(TaskConfig::new(task)).unwrap();
        e.reset(&mut rng);
        (e, rng)
    }

    fn random_actions(rng: &mut seed::Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]).collect()
    }

    #[test]
    fn observation_lengths() {
        for (task, len) in [(Task::Spread, 14), (Task::Bounce, 10), (Task::Compromise, 10), (Task::Chase, 8)] {
            let (mut e, mut rng) = env(task);
            let o = e.reset(&mut rng);
            assert!(o.iter().all(|v| v.len() == len), "{task}");
            assert_eq!(observation_layout(e.config(), 0).len(), len);
            let s = e.step(&random_actions(&mut rng, e.n_agents()), &mut rng).unwrap();
            assert!(s.obs.iter().all(|v| v.len() == len));
        }
        assert_eq!(TaskConfig::new(Task::Spread).with_agents(6).obs_dim(), 4 + 2 * 11);
    }

    #[test]
    fn observation_is_relative() {
        let (mut e, _) = env(Task::Spread);
        for ent in &mut e.world.entities {
            ent.pos = [0.0; 2];
            ent.vel = [0.0; 2];
        }
        assert!(e.observe(0).iter().all(|&v| v == 0.0));

        let (mut e, _) = env(Task::Spread);
        let before = e.observe(1);
        for ent in &mut e.world.entities {
            ent.pos = add(ent.pos, [0.1, -0.2]);
        }
        let after = e.observe(1);
        assert!((after[0] - before[0] - 0.1).abs() < 1e-12);
        assert!((after[1] - before[1] + 0.2).abs() < 1e-12);
        for k in 2..before.len() {
            assert!((after[k] - before[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn spread_reward_cases() {
        let (mut e, _) = env(Task::Spread);
        let spots = [[-0.5, -0.5], [0.0, 0.5], [0.5, -0.5]];
        for (k, p) in spots.iter().enumerate() {
            e.world.entities[k].pos = *p;
            e.world.entities[3 + k].pos = *p;
        }
        assert_eq!(e.spread_reward(), 3.0);
        for k in 0..3 {
            e.world.entities[k].pos = spots[0];
        }
        assert_eq!(e.spread_reward(), 1.0 - 3.0);
        let far = [[-0.9, 0.9], [0.0, 0.9], [0.9, 0.9]];
        for k in 0..3 {
            e.world.entities[k].pos = far[k];
        }
        assert_eq!(e.spread_reward(), 0.0);
    }

    #[test]
    fn spread_reward_within_codomain() {
        let (mut e, mut rng) = env(Task::Spread);
        for _ in 0..300 {
            let s = e.step(&random_actions(&mut rng, 3), &mut rng).unwrap();
            assert!((-3.0..=3.0).contains(&s.rewards[0]));
            assert_eq!(s.rewards[0].fract(), 0.0);
            if s.done {
                e.reset(&mut rng);
            }
        }
    }

    #[test]
    fn bounce_classification() {
        let target = [0.3, 0.6];
        assert_eq!(classify_bounce([0.0, 0.0], [0.3, 0.6], target, 0.15), 10.0);
        assert_eq!(classify_bounce([0.0, 0.0], [-0.1, 1.0], target, 0.15), 0.2);
        assert_eq!(classify_bounce([0.0, 0.0], [1.0, 0.1], target, 0.15), 0.1);
        assert_eq!(classify_bounce([0.0, 0.0], [0.2, -1.0], target, 0.15), 0.1);
    }

    #[test]
    fn bounce_toward_target_center_pays_ten() {
        let (mut e, mut rng) = env(Task::Bounce);
        // A spring tilted 22.5 degrees sends a vertical ball 45 degrees
        // off vertical.
        let hit = [0.0, -0.3];
        let angle = core::f64::consts::PI / 8.0;
        let half = [0.2 * libm::cos(angle), 0.2 * libm::sin(angle)];
        e.ball = Ball { pos: [0.0, 0.9], vel: [0.0; 2], phase: BallPhase::Waiting };
        let reflected = reflect([0.0, -1.0], sub(hit, half), add(hit, half));
        e.target = add(hit, scale(reflected, 0.6));
        let mut total = 0.0;
        for _ in 0..100 {
            e.world.entities[0].pos = sub(hit, half);
            e.world.entities[1].pos = add(hit, half);
            for ent in &mut e.world.entities {
                ent.vel = [0.0; 2];
            }
            let s = e.step(&[vec![0.0; 2], vec![0.0; 2]], &mut rng).unwrap();
            total += s.rewards[0];
            if s.done {
                assert!(s.terminal);
                break;
            }
        }
        assert_eq!(total, 10.0);
    }

    /// Drives the agents under the ball with a random tilt so episodes
    /// actually bounce.
    fn scripted(e: &ParticleEnv, tilt: f64, height: f64) -> Vec<Vec<f64>> {
        let bx = e.ball.pos[0];
        let goals = [[bx - 0.25, height - tilt], [bx + 0.25, height + tilt]];
        (0..2)
            .map(|i| {
                let d = sub(goals[i], e.world.entities[i].pos);
                vec![(4.0 * d[0]).clamp(-1.0, 1.0), (4.0 * d[1]).clamp(-1.0, 1.0)]
            })
            .collect()
    }

    #[test]
    fn bounce_episode_rewards_are_single_events() {
        let (mut e, mut rng) = env(Task::Bounce);
        let mut seen = std::collections::BTreeSet::new();
        for episode in 0..400 {
            e.reset(&mut rng);
            let tilt = rng.random_range(-0.3..=0.3);
            let height = rng.random_range(-0.6..=0.2);
            let mut events = std::vec::Vec::new();
            loop {
                let a = if episode % 4 == 0 { random_actions(&mut rng, 2) } else { scripted(&e, tilt, height) };
                let s = e.step(&a, &mut rng).unwrap();
                assert_eq!(s.rewards[0], s.rewards[1]);
                if s.rewards[0] != 0.0 {
                    events.push(s.rewards[0]);
                }
                if s.done {
                    break;
                }
            }
            assert!(events.len() <= 1);
            let total: f64 = events.iter().sum();
            assert!([0.0, 0.1, 0.2, 10.0].contains(&total), "{total}");
            seen.insert((total * 10.0) as i64);
        }
        assert!(seen.len() >= 3, "scripted episodes should cover several outcomes: {seen:?}");
    }

    #[test]
    fn no_bounce_means_zero_return() {
        let (mut e, mut rng) = env(Task::Bounce);
        let mut total = 0.0;
        loop {
            // Park both agents in the bottom-left corner, away from the ball.
            let s = e.step(&[vec![-1.0, -1.0], vec![-1.0, -1.0]], &mut rng).unwrap();
            total += s.rewards[0];
            if s.done {
                assert!(!s.terminal || total > 0.0);
                break;
            }
        }
        let bx = e.ball.pos[0];
        if bx > -0.5 {
            assert_eq!(total, 0.0);
        }
    }

    #[test]
    fn compromise_individual_reward_and_relocation() {
        let (mut e, mut rng) = env(Task::Compromise);
        e.world.entities[0].pos = [0.2, 0.2];
        e.world.entities[2].pos = [0.2, 0.2];
        e.world.entities[1].pos = [-0.2, -0.2];
        e.world.entities[3].pos = [0.8, -0.8];
        e.world.entities[0].vel = [0.0; 2];
        e.world.entities[1].vel = [0.0; 2];
        let s = e.step(&[vec![0.0; 2], vec![0.0; 2]], &mut rng).unwrap();
        assert_eq!(s.rewards, vec![10.0, 0.0]);
        for _ in 0..500 {
            e.world.entities[2].pos = e.world.entities[0].pos;
            let r = e.compromise_rewards(&mut rng);
            assert_eq!(r[0], 10.0);
            let l = &e.world.entities[2];
            assert!(l.pos.iter().all(|c| c.abs() <= 1.0 - l.radius));
        }
    }

    #[test]
    fn stretched_spring_forces_are_opposite() {
        let (e, _) = env(Task::Compromise);
        let s = e.world.springs[0];
        let (a, b) = ([-0.6, 0.1], [0.5, -0.3]);
        let f = s.force(a, b);
        let g = s.force(b, a);
        assert!(norm(f) > 0.0);
        assert!((f[0] + g[0]).abs() < 1e-15 && (f[1] + g[1]).abs() < 1e-15);
        assert!(dot(f, sub(b, a)) > 0.0);
    }

    #[test]
    fn chase_reward_counts_touching_predators() {
        let (mut e, _) = env(Task::Chase);
        e.world.entities[2].pos = [0.0, 0.0];
        e.world.entities[0].pos = [0.1, 0.0];
        e.world.entities[1].pos = [-0.1, 0.0];
        assert_eq!(e.chase_reward(), 2.0);
        e.world.entities[1].pos = [-0.5, 0.0];
        assert_eq!(e.chase_reward(), 1.0);
    }

    #[test]
    fn centered_prey_feels_no_net_push_from_symmetric_predators() {
        let params = TaskConfig::new(Task::Chase).chase;
        let f = prey_repulsion([0.0, 0.0], &[[0.4, 0.1], [-0.4, -0.1]], &params);
        assert!(norm(f) < 1e-15);
    }

    #[test]
    fn prey_speed_never_exceeds_cap() {
        let (mut e, mut rng) = env(Task::Chase);
        let cap = e.cfg.chase.prey_max_speed;
        for _ in 0..2000 {
            let s = e.step(&random_actions(&mut rng, 2), &mut rng).unwrap();
            assert!(e.world.entities[2].speed() <= cap + 1e-12);
            assert!((0.0..=2.0).contains(&s.rewards[0]));
            if s.done {
                e.reset(&mut rng);
            }
        }
    }

    #[test]
    fn replaying_actions_reproduces_states() {
        for task in Task::ALL {
            let run = || {
                let (mut e, mut rng) = env(task);
                let mut act_rng = seed::stream(3, "actions");
                let mut trace = std::vec::Vec::new();
                for _ in 0..150 {
                    let s = e.step(&random_actions(&mut act_rng, e.n_agents()), &mut rng).unwrap();
                    trace.push((e.world.clone(), s.rewards.clone()));
                    if s.done {
                        e.reset(&mut rng);
                    }
                }
                trace
            };
            assert_eq!(run(), run());
        }
    }

    fn pursuit(e: &ParticleEnv, lead: f64) -> Vec<Vec<f64>> {
        let n = e.cfg.n_agents;
        let prey = &e.world.entities[n];
        (0..n)
            .map(|i| {
                let d = sub(add(prey.pos, scale(prey.vel, lead)), e.world.entities[i].pos);
                let l = norm(d).max(1e-9);
                vec![d[0] / l, d[1] / l]
            })
            .collect()
    }

    /// (touching predators per step, longest run of consecutive contact steps)
    fn pursuit_stats(n: usize, lead: f64) -> (f64, usize) {
        let mut e = ParticleEnv::new(TaskConfig::new(Task::Chase).with_agents(n)).unwrap();
        let mut rng = seed::stream(1, "pursuit");
        let (mut touch, mut steps, mut streak, mut longest) = (0.0, 0.0, 0, 0);
        for _ in 0..100 {
            e.reset(&mut rng);
            loop {
                let s = e.step(&pursuit(&e, lead), &mut rng).unwrap();
                touch += s.rewards[0];
                steps += 1.0;
                streak = if s.rewards[0] > 0.0 { streak + 1 } else { 0 };
                longest = longest.max(streak);
                if s.done {
                    streak = 0;
                    break;
                }
            }
        }
        (touch / steps, longest)
    }

    #[test]
    fn lone_predator_rarely_touches_the_prey() {
        let mut lone = 0.0f64;
        for lead in [0.0, 0.3] {
            let (rate, _) = pursuit_stats(1, lead);
            lone = lone.max(rate);
        }
        assert!(lone < 0.05, "{lone}");
        let (pair, _) = pursuit_stats(2, 0.3);
        assert!(pair > 5.0 * lone, "pair {pair} vs lone {lone}");
    }
}
