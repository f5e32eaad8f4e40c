//! Deep Q-learning over simulated episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::demo::{demo_action, DemoConfig, DemoInputs};
use super::features::{featurize, CandidateSet, FeatureConfig};
use super::network::{apply_gradient, train_step, Adam, QNetwork};
use super::replay::{ReplayBuffer, Transition};
use super::{argmax, reward, PolicyError, QPolicy, RewardWeights};
use crate::baselines::obstacle_points;
use crate::lvd::{LvdConfig, LvdController};
use crate::memory::{AugmentedMemory, MemoryEntry};
use crate::sim::trial::derive_seed;
use crate::sim::{ControlContext, Scenario, World};
use crate::vehicle::ControlInput;
use crate::vision::SceneDynamics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateGrid {
    pub k_c: usize,
    pub c_max: f64,
    pub k_w: usize,
}

impl Default for CandidateGrid {
    fn default() -> Self {
        Self {
            k_c: 9,
            c_max: 0.5,
            k_w: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub episodes: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly; defaults to 60% of
    /// `episodes`.
    pub epsilon_decay_episodes: Option<usize>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Environment steps between target-network copies.
    pub target_sync_every: usize,
    /// Environment steps between gradient steps.
    pub train_every: usize,
    /// Transitions collected before the first gradient step.
    pub learning_starts: usize,
    pub max_grad_norm: Option<f64>,
    pub hidden: Vec<usize>,
    pub candidates: CandidateGrid,
    pub reward: RewardWeights,
    pub lvd: LvdConfig,
    /// Overrides each scenario's time limit during training, seconds.
    pub episode_time_limit_s: Option<f64>,
    /// Episodes driven by the scripted demonstrator before Q-learning.
    pub demo_episodes: usize,
    /// Gradient steps of the warm start on demonstrated states.
    pub pretrain_steps: usize,
    /// Learning rate of the warm start; defaults to `learning_rate`.
    pub pretrain_learning_rate: Option<f64>,
    /// Margin by which demonstrated actions should beat the others.
    pub demo_margin: f64,
    /// Weight of the large-margin loss next to the TD loss.
    pub demo_weight: f64,
    /// Share of exploratory actions taken from the demonstrator.
    pub demo_exploration: f64,
    pub demo: DemoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 300,
            gamma: 0.95,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: None,
            batch_size: 64,
            replay_capacity: 50_000,
            target_sync_every: 250,
            train_every: 1,
            learning_starts: 500,
            max_grad_norm: Some(10.0),
            hidden: vec![128, 64],
            candidates: CandidateGrid::default(),
            reward: RewardWeights::default(),
            lvd: LvdConfig::default(),
            episode_time_limit_s: None,
            demo_episodes: 0,
            pretrain_steps: 0,
            pretrain_learning_rate: None,
            demo_margin: 0.8,
            demo_weight: 1.0,
            demo_exploration: 0.0,
            demo: DemoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon values must be in [0, 1]");
        }
        if !(self.learning_rate >= 0.0) || self.pretrain_learning_rate.is_some_and(|r| !(r >= 0.0)) {
            return bad("learning_rate must be non-negative");
        }
        if self.batch_size == 0 || self.train_every == 0 || self.target_sync_every == 0 {
            return bad("batch_size, train_every and target_sync_every must be positive");
        }
        if self.candidates.k_c == 0 || self.candidates.k_w == 0 {
            return bad("candidate grid must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.demo_exploration) || !(self.demo_margin >= 0.0) || !(self.demo_weight >= 0.0) {
            return bad("demo_exploration must be in [0, 1], demo_margin and demo_weight non-negative");
        }
        if self.lvd.horizon == 0 || self.lvd.history == 0 {
            return bad("horizon and history must be positive");
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let decay = self
            .epsilon_decay_episodes
            .unwrap_or((0.6 * self.episodes as f64).round() as usize);
        if decay == 0 || episode >= decay {
            return self.epsilon_end;
        }
        let f = episode as f64 / decay as f64;
        self.epsilon_start + f * (self.epsilon_end - self.epsilon_start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// `demo` for demonstrator-driven episodes, `q` for epsilon-greedy ones.
    pub phase: String,
    pub scenario: String,
    pub epsilon: f64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub steps: usize,
    /// `crash`, `goal`, `timeout` or `aborted`.
    pub status: String,
    pub mean_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeRecord>,
}

impl TrainLog {
    /// Returns of the epsilon-greedy episodes, in order.
    pub fn q_returns(&self) -> Vec<f64> {
        self.episodes.iter().filter(|e| e.phase == "q").map(|e| e.ret).collect()
    }

    /// Mean return of the epsilon-greedy episodes with indices in `range`
    /// (counted among those episodes only).
    pub fn mean_return(&self, range: std::ops::Range<usize>) -> f64 {
        let xs = &self.q_returns()[range];
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.episodes {
            w.serialize(e)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

enum Driver {
    Demo,
    Q { epsilon: f64 },
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    candidates: CandidateSet,
    features: FeatureConfig,
    rng: ChaCha8Rng,
    net: QNetwork,
    target: QNetwork,
    opt: Adam,
    replay: ReplayBuffer,
    /// Transitions from demonstrator-driven episodes.
    demos: Vec<Transition>,
    total_steps: usize,
}

impl Trainer<'_> {
    fn pick(&mut self, driver: &Driver, s: &[f64], ctx: &ControlContext) -> Result<usize, PolicyError> {
        let demo = |ctx: &ControlContext, cands: &CandidateSet, cfg: &DemoConfig| {
            let sc = ctx.scenario;
            let points = obstacle_points(ctx.observation, &ctx.state, &sc.sensor);
            let inp = DemoInputs {
                state: ctx.state,
                obstacles: &points,
                route: &sc.route.centerline,
                half_width: sc.route.half_width,
                radius: sc.vehicle.radius,
            };
            demo_action(&inp, cands, cfg)
        };
        Ok(match *driver {
            Driver::Demo => demo(ctx, &self.candidates, &self.cfg.demo),
            Driver::Q { epsilon } => {
                if self.rng.random::<f64>() < epsilon {
                    if self.cfg.demo_exploration > 0.0 && self.rng.random::<f64>() < self.cfg.demo_exploration {
                        demo(ctx, &self.candidates, &self.cfg.demo)
                    } else {
                        self.rng.random_range(0..self.candidates.len())
                    }
                } else {
                    argmax(&self.net.predict(s)?)
                }
            }
        })
    }

    fn episode(&mut self, scenario: &Scenario, index: usize, driver: Driver) -> Result<EpisodeRecord, PolicyError> {
        let cfg = self.cfg;
        let time_limit = cfg.episode_time_limit_s.unwrap_or(scenario.time_limit);
        let mut world = World::new(scenario, derive_seed(&[cfg.seed, scenario.seed, index as u64]));
        let mut memory = AugmentedMemory::new(cfg.lvd.history);
        let mut controller = LvdController::fixed(cfg.lvd, SceneDynamics::default());
        crate::sim::Controller::reset(&mut controller, scenario);

        let (phase, epsilon) = match driver {
            Driver::Demo => ("demo", 0.0),
            Driver::Q { epsilon } => ("q", epsilon),
        };
        let mut record = EpisodeRecord {
            episode: index,
            phase: phase.into(),
            scenario: scenario.name.clone(),
            epsilon,
            ret: 0.0,
            steps: 0,
            status: "timeout".into(),
            mean_loss: None,
            error: None,
        };
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);

        let mut last = ControlInput::ZERO;
        let observe = |world: &World, memory: &mut AugmentedMemory, last: &ControlInput| {
            let obs = world.sense();
            memory
                .push(MemoryEntry::new(obs.clone(), world.vehicle, last.v_cmd))
                .expect("simulation clock is strictly increasing");
            obs
        };
        let mut obs = observe(&world, &mut memory, &last);
        let mut slice = controller.slice(scenario, &world.vehicle);
        let mut s = featurize(
            &memory.window(cfg.lvd.history),
            &controller.feature_slice(scenario, &world.vehicle),
            &self.features,
        )?;

        if world.collided() {
            record.status = "crash".into();
        } else if world.reached_goal() {
            record.status = "goal".into();
        } else {
            while world.time() < time_limit {
                let ctx = ControlContext {
                    scenario,
                    time: world.time(),
                    state: world.vehicle,
                    observation: &obs,
                    memory: &memory,
                    last_control: last,
                };
                let action = self.pick(&driver, &s, &ctx)?;
                let u = match controller.plan(&ctx, self.candidates.get(action), &slice) {
                    Ok(dec) => dec.control,
                    Err(e) => {
                        record.status = "aborted".into();
                        record.error = Some(e.to_string());
                        break;
                    }
                };
                let prev = world.vehicle;
                world.step(&u);
                last = u;
                record.steps += 1;
                self.total_steps += 1;

                let crashed = world.collided();
                let reached = !crashed && world.reached_goal();
                let r = reward(&prev, &world.vehicle, &scenario.route.centerline, crashed, reached, &cfg.reward);
                record.ret += r;

                obs = observe(&world, &mut memory, &last);
                slice = controller.slice(scenario, &world.vehicle);
                let next = featurize(
                    &memory.window(cfg.lvd.history),
                    &controller.feature_slice(scenario, &world.vehicle),
                    &self.features,
                )?;
                let t = Transition {
                    state: std::mem::take(&mut s),
                    action,
                    reward: r,
                    next: next.clone(),
                    terminal: crashed || reached,
                };
                if matches!(driver, Driver::Demo) {
                    self.demos.push(t.clone());
                }
                self.replay.push(t);
                s = next;

                if matches!(driver, Driver::Q { .. })
                    && self.replay.len() >= cfg.learning_starts.max(1)
                    && self.total_steps % cfg.train_every == 0
                {
                    let loss = self.learn(false)?;
                    loss_sum += loss;
                    loss_n += 1;
                }
                if self.total_steps % cfg.target_sync_every == 0 {
                    self.target = self.net.clone();
                }

                if crashed {
                    record.status = "crash".into();
                    break;
                }
                if reached {
                    record.status = "goal".into();
                    break;
                }
            }
        }
        if loss_n > 0 {
            record.mean_loss = Some(loss_sum / loss_n as f64);
        }
        Ok(record)
    }

    /// One gradient step: the TD loss on a replay batch (or a
    /// demonstration batch when `from_demos`), plus the weighted
    /// large-margin loss on demonstrated actions when demonstrations exist.
    fn learn(&mut self, from_demos: bool) -> Result<f64, PolicyError> {
        let cfg = self.cfg;
        let lr = if from_demos {
            cfg.pretrain_learning_rate.unwrap_or(cfg.learning_rate)
        } else {
            cfg.learning_rate
        };
        if self.demos.is_empty() || cfg.demo_weight == 0.0 {
            let batch = self.replay.sample(cfg.batch_size, &mut self.rng);
            return Ok(train_step(
                &mut self.net,
                &self.target,
                &batch,
                cfg.gamma,
                lr,
                cfg.max_grad_norm,
                &mut self.opt,
            )?);
        }
        let n = cfg.batch_size.min(self.demos.len());
        let picks = rand::seq::index::sample(&mut self.rng, self.demos.len(), n);
        let demo_batch: Vec<&Transition> = picks.iter().map(|i| &self.demos[i]).collect();
        let batch = if from_demos {
            demo_batch.clone()
        } else {
            self.replay.sample(cfg.batch_size, &mut self.rng)
        };
        let y = QNetwork::targets(&self.target, &batch, cfg.gamma)?;
        let (td, mut grad) = self.net.loss_and_grad(&batch, &y)?;
        let states: Vec<&[f64]> = demo_batch.iter().map(|t| t.state.as_slice()).collect();
        let expert: Vec<usize> = demo_batch.iter().map(|t| t.action).collect();
        let (m, gm) = self.net.margin_loss_and_grad(&states, &expert, cfg.demo_margin)?;
        grad.iter_mut().zip(&gm).for_each(|(g, h)| *g += cfg.demo_weight * h);
        Ok(apply_gradient(
            &mut self.net,
            td + cfg.demo_weight * m,
            grad,
            lr,
            cfg.max_grad_norm,
            &mut self.opt,
        )?)
    }

    /// Warm start on the demonstrations alone.
    fn pretrain(&mut self) -> Result<Option<f64>, PolicyError> {
        if self.demos.is_empty() || self.cfg.pretrain_steps == 0 {
            return Ok(None);
        }
        let mut loss_sum = 0.0;
        for step in 1..=self.cfg.pretrain_steps {
            loss_sum += self.learn(true)?;
            if step % self.cfg.target_sync_every == 0 {
                self.target = self.net.clone();
            }
        }
        self.target = self.net.clone();
        Ok(Some(loss_sum / self.cfg.pretrain_steps as f64))
    }
}

/// Train an estimator: optional demonstration episodes and warm start,
/// then epsilon-greedy episodes cycling through `scenarios`. Fully
/// determined by `cfg.seed`.
pub fn train(scenarios: &[Scenario], cfg: &TrainConfig) -> Result<(QPolicy, TrainLog), PolicyError> {
    cfg.validate()?;
    let Some(first) = scenarios.first() else {
        return Err(PolicyError::NoScenarios);
    };
    let features = cfg.lvd.features(first);
    if scenarios.iter().any(|s| cfg.lvd.features(s) != features) {
        return Err(PolicyError::Config(
            "training scenarios must share sensor layout and v_max".into(),
        ));
    }
    let candidates = CandidateSet::grid(cfg.candidates.k_c, cfg.candidates.c_max, cfg.candidates.k_w);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![features.len()];
    sizes.extend(&cfg.hidden);
    sizes.push(candidates.len());
    let net = QNetwork::new(&sizes, &mut rng)?;
    let mut t = Trainer {
        cfg,
        candidates,
        features,
        rng,
        target: net.clone(),
        opt: Adam::new(net.params().len()),
        net,
        replay: ReplayBuffer::new(cfg.replay_capacity),
        demos: Vec::new(),
        total_steps: 0,
    };
    let mut log = TrainLog::default();

    for i in 0..cfg.demo_episodes {
        let scenario = &scenarios[i % scenarios.len()];
        log.episodes.push(t.episode(scenario, i, Driver::Demo)?);
    }
    if let Some(loss) = t.pretrain()? {
        if let Some(last) = log.episodes.last_mut() {
            last.mean_loss = Some(loss);
        }
    }
    for episode in 0..cfg.episodes {
        let scenario = &scenarios[episode % scenarios.len()];
        let epsilon = cfg.epsilon(episode);
        let index = cfg.demo_episodes + episode;
        log.episodes.push(t.episode(scenario, index, Driver::Q { epsilon })?);
    }

    Ok((QPolicy::new(t.net, t.candidates, t.features, cfg.lvd), log))
}
