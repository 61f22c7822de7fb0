use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scenario::placement_band;
use super::{check_actions, EnvError, EnvSpec, EnvStepResult, Environment, OpponentPolicy, ScenarioConfig, StepInfo, UnitSpec};
use crate::graph::{AgentClassId, HeterogeneousAgentGraph};
use crate::policy::ActionMask;

pub const NO_OP: usize = 0;
pub const STOP: usize = 1;
const MOVE_BASE: usize = 2;
const ATTACK_BASE: usize = 6;
const DIRECTIONS: [(i64, i64); 4] = [(0, -1), (0, 1), (1, 0), (-1, 0)];
/// Per-unit observation block: visible flag, dx, dy, hp fraction.
const UNIT_FEATURES: usize = 4;
/// Own features: hp fraction, x, y, cooldown flag.
const OWN_FEATURES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Act {
    NoOp,
    Stop,
    Move(usize),
    Attack(usize),
    Heal(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitState {
    /// Index into the scenario's unit-class table.
    pub unit_class: usize,
    pub ally: bool,
    pub x: i64,
    pub y: i64,
    pub hp: f64,
    pub cooldown: u32,
}

impl UnitState {
    pub fn alive(&self) -> bool {
        self.hp > 0.0
    }
}

/// Full simulator state. Allies come first, then enemies.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub units: Vec<UnitState>,
    pub step: usize,
}

fn chebyshev(a: &UnitState, b: &UnitState) -> u32 {
    (a.x - b.x).abs().max((a.y - b.y).abs()) as u32
}

pub struct BattleEnv {
    scenario: ScenarioConfig,
    spec: EnvSpec,
    unit_specs: Vec<UnitSpec>,
    /// Unit-class index of every unit, allies first.
    roster: Vec<usize>,
    num_allies: usize,
    heal_slots: bool,
    enemy_hp_total: f64,
    world: WorldState,
    done: bool,
}

impl BattleEnv {
    pub fn new(scenario: ScenarioConfig) -> Result<Self, EnvError> {
        scenario.validate()?;
        let allies = ScenarioConfig::parse_roster(&scenario.allies)?;
        let enemies = ScenarioConfig::parse_roster(&scenario.enemies)?;
        let mut class_names: Vec<String> = Vec::new();
        let mut roster = Vec::new();
        for (name, count) in allies.iter().chain(&enemies) {
            let idx = match class_names.iter().position(|c| c == name) {
                Some(i) => i,
                None => {
                    class_names.push(name.clone());
                    class_names.len() - 1
                }
            };
            roster.extend(std::iter::repeat_n(idx, *count));
        }
        let unit_specs = class_names
            .iter()
            .map(|c| scenario.unit_spec(c))
            .collect::<Result<Vec<_>, _>>()?;
        let num_allies: usize = allies.iter().map(|e| e.1).sum();
        let num_enemies = roster.len() - num_allies;

        // Agent classes are the distinct ally unit classes, in roster order.
        let mut agent_class_of_unit: Vec<usize> = Vec::new();
        for &u in &roster[..num_allies] {
            if !agent_class_of_unit.contains(&u) {
                agent_class_of_unit.push(u);
            }
        }
        let agent_classes = roster[..num_allies]
            .iter()
            .map(|u| AgentClassId(agent_class_of_unit.iter().position(|c| c == u).unwrap()))
            .collect();

        let heal_slots = roster[..num_allies].iter().any(|&u| unit_specs[u].heals());
        let obs_width = OWN_FEATURES + (roster.len() - 1) * (UNIT_FEATURES + unit_specs.len());
        let enemy_hp_total = roster[num_allies..].iter().map(|&u| unit_specs[u].max_hp).sum();
        let spec = EnvSpec {
            name: scenario.name.clone(),
            num_agents: num_allies,
            num_classes: agent_class_of_unit.len(),
            agent_classes,
            obs_width,
            num_actions: ATTACK_BASE + num_enemies + if heal_slots { num_allies } else { 0 },
            max_steps: scenario.max_steps,
            num_enemies,
        };
        let mut env = Self {
            scenario,
            spec,
            unit_specs,
            roster,
            num_allies,
            heal_slots,
            enemy_hp_total,
            world: WorldState {
                units: Vec::new(),
                step: 0,
            },
            done: true,
        };
        env.world = env.initial_world(0);
        Ok(env)
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn unit_specs(&self) -> &[UnitSpec] {
        &self.unit_specs
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    /// Replace the state wholesale and reopen the episode.
    pub fn set_world(&mut self, world: WorldState) -> Result<EnvStepResult, EnvError> {
        if world.units.len() != self.roster.len()
            || world.units.iter().zip(&self.roster).any(|(u, &c)| u.unit_class != c)
            || world.units.iter().enumerate().any(|(i, u)| u.ally != (i < self.num_allies))
        {
            return Err(EnvError::InvalidScenario("world does not match the roster".into()));
        }
        self.world = world;
        self.done = false;
        Ok(self.observe(0.0, false))
    }

    fn initial_world(&self, seed: u64) -> WorldState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ self.scenario.seed.rotate_left(32));
        let (w, h) = (self.scenario.width, self.scenario.height);
        let mut units = Vec::with_capacity(self.roster.len());
        for (ally, team) in [(true, &self.roster[..self.num_allies]), (false, &self.roster[self.num_allies..])] {
            let (lo, hi, band) = placement_band(team.len(), h);
            let xs: Vec<usize> = if ally { (0..band).collect() } else { (w - band..w).collect() };
            let mut cells: Vec<(usize, usize)> = xs.iter().flat_map(|&x| (lo..hi).map(move |y| (x, y))).collect();
            cells.shuffle(&mut rng);
            for (&c, &(x, y)) in team.iter().zip(&cells) {
                units.push(UnitState {
                    unit_class: c,
                    ally,
                    x: x as i64,
                    y: y as i64,
                    hp: self.unit_specs[c].max_hp,
                    cooldown: 0,
                });
            }
        }
        WorldState { units, step: 0 }
    }

    fn spec_of(&self, unit: usize) -> &UnitSpec {
        &self.unit_specs[self.world.units[unit].unit_class]
    }

    fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.scenario.width && (y as usize) < self.scenario.height
    }

    fn occupied(&self, x: i64, y: i64) -> bool {
        self.world.units.iter().any(|u| u.alive() && u.x == x && u.y == y)
    }

    fn cell_free(&self, x: i64, y: i64) -> bool {
        self.in_bounds(x, y) && !self.occupied(x, y)
    }

    fn enemy_range(&self) -> std::ops::Range<usize> {
        self.num_allies..self.world.units.len()
    }

    fn can_attack(&self, actor: usize, target: usize) -> bool {
        let (a, t) = (&self.world.units[actor], &self.world.units[target]);
        let spec = self.spec_of(actor);
        spec.attacks() && a.cooldown == 0 && t.alive() && a.ally != t.ally && chebyshev(a, t) <= spec.range
    }

    fn can_heal(&self, actor: usize, target: usize) -> bool {
        let (a, t) = (&self.world.units[actor], &self.world.units[target]);
        let spec = self.spec_of(actor);
        spec.heals()
            && a.cooldown == 0
            && actor != target
            && t.alive()
            && a.ally == t.ally
            && t.hp < self.spec_of(target).max_hp
            && chebyshev(a, t) <= spec.range
    }

    fn mask(&self, agent: usize) -> ActionMask {
        let n = self.spec.num_actions;
        let me = &self.world.units[agent];
        if !me.alive() {
            return ActionMask::only(n, NO_OP);
        }
        let mut legal = vec![false; n];
        legal[NO_OP] = true;
        legal[STOP] = true;
        for (d, (dx, dy)) in DIRECTIONS.iter().enumerate() {
            legal[MOVE_BASE + d] = self.cell_free(me.x + dx, me.y + dy);
        }
        for (k, e) in self.enemy_range().enumerate() {
            legal[ATTACK_BASE + k] = self.can_attack(agent, e);
        }
        if self.heal_slots {
            let base = ATTACK_BASE + self.spec.num_enemies;
            for k in 0..self.num_allies {
                legal[base + k] = self.can_heal(agent, k);
            }
        }
        ActionMask::new(legal)
    }

    fn decode(&self, action: usize) -> Act {
        match action {
            NO_OP => Act::NoOp,
            STOP => Act::Stop,
            a if a < ATTACK_BASE => Act::Move(a - MOVE_BASE),
            a if a < ATTACK_BASE + self.spec.num_enemies => Act::Attack(self.num_allies + a - ATTACK_BASE),
            a => Act::Heal(a - ATTACK_BASE - self.spec.num_enemies),
        }
    }

    fn step_toward(&self, unit: usize, target: usize) -> Act {
        let (u, t) = (&self.world.units[unit], &self.world.units[target]);
        let (dx, dy) = (t.x - u.x, t.y - u.y);
        let horizontal = if dx > 0 { Some(2) } else if dx < 0 { Some(3) } else { None };
        let vertical = if dy > 0 { Some(1) } else if dy < 0 { Some(0) } else { None };
        let order = if dx.abs() >= dy.abs() { [horizontal, vertical] } else { [vertical, horizontal] };
        for d in order.into_iter().flatten() {
            let (mx, my) = DIRECTIONS[d];
            if self.cell_free(u.x + mx, u.y + my) {
                return Act::Move(d);
            }
        }
        Act::Stop
    }

    fn nearest(&self, unit: usize, candidates: impl Iterator<Item = usize>) -> Option<usize> {
        let u = &self.world.units[unit];
        candidates
            .filter(|&c| c != unit && self.world.units[c].alive())
            .min_by_key(|&c| (chebyshev(u, &self.world.units[c]), c))
    }

    fn weakest(&self, candidates: impl Iterator<Item = usize>) -> Option<usize> {
        candidates.min_by(|&a, &b| {
            let fa = self.world.units[a].hp / self.spec_of(a).max_hp;
            let fb = self.world.units[b].hp / self.spec_of(b).max_hp;
            fa.total_cmp(&fb).then(a.cmp(&b))
        })
    }

    fn scripted(&self, unit: usize) -> Act {
        if !self.world.units[unit].alive() {
            return Act::NoOp;
        }
        if self.scenario.opponent == OpponentPolicy::Passive {
            return Act::Stop;
        }
        let spec = self.spec_of(unit);
        if spec.heals() {
            if let Some(t) = self.weakest(self.enemy_range().filter(|&t| self.can_heal(unit, t))) {
                return Act::Heal(t);
            }
            return match self.nearest(unit, self.enemy_range()) {
                Some(t) if chebyshev(&self.world.units[unit], &self.world.units[t]) > 1 => self.step_toward(unit, t),
                _ => Act::Stop,
            };
        }
        let me = &self.world.units[unit];
        let mut in_range = (0..self.num_allies)
            .filter(|&t| self.world.units[t].alive() && chebyshev(me, &self.world.units[t]) <= spec.range)
            .peekable();
        if in_range.peek().is_some() {
            if me.cooldown > 0 {
                return Act::Stop;
            }
            return Act::Attack(self.weakest(in_range).unwrap());
        }
        match self.nearest(unit, 0..self.num_allies) {
            Some(t) => self.step_toward(unit, t),
            None => Act::Stop,
        }
    }

    fn resolve(&mut self, acts: &[Act]) -> (f64, f64) {
        // Moves in unit order; a cell taken earlier blocks later movers.
        for (u, act) in acts.iter().enumerate() {
            if let Act::Move(d) = *act {
                let (mx, my) = DIRECTIONS[d];
                for _ in 0..self.spec_of(u).speed {
                    let (nx, ny) = (self.world.units[u].x + mx, self.world.units[u].y + my);
                    if !self.cell_free(nx, ny) {
                        break;
                    }
                    self.world.units[u].x = nx;
                    self.world.units[u].y = ny;
                }
            }
        }
        // Attacks and heals land simultaneously at post-move positions.
        let n = self.world.units.len();
        let mut damage = vec![0.0; n];
        let mut healing = vec![0.0; n];
        let mut acted = vec![false; n];
        for (u, act) in acts.iter().enumerate() {
            let me = &self.world.units[u];
            if !me.alive() {
                continue;
            }
            let spec = self.spec_of(u);
            match *act {
                Act::Attack(t) if self.world.units[t].alive() && chebyshev(me, &self.world.units[t]) <= spec.range => {
                    damage[t] += spec.damage;
                    acted[u] = true;
                }
                Act::Heal(t) if self.world.units[t].alive() && chebyshev(me, &self.world.units[t]) <= spec.range => {
                    healing[t] += spec.heal;
                    acted[u] = true;
                }
                _ => {}
            }
        }
        let (mut dealt, mut healed) = (0.0, 0.0);
        for t in 0..n {
            let max_hp = self.spec_of(t).max_hp;
            let cooldown = self.spec_of(t).cooldown;
            let unit = &mut self.world.units[t];
            let before = unit.hp;
            unit.hp = (unit.hp - damage[t]).max(0.0);
            if !unit.ally {
                dealt += before - unit.hp;
            }
            if unit.hp > 0.0 && healing[t] > 0.0 {
                let after = (unit.hp + healing[t]).min(max_hp);
                if unit.ally {
                    healed += after - unit.hp;
                }
                unit.hp = after;
            }
            unit.cooldown = if acted[t] { cooldown } else { unit.cooldown.saturating_sub(1) };
        }
        (dealt, healed)
    }

    fn observation(&self, agent: usize) -> Vec<f64> {
        let mut obs = vec![0.0; self.spec.obs_width];
        let me = &self.world.units[agent];
        if !me.alive() {
            return obs;
        }
        let spec = self.spec_of(agent);
        let (w, h) = (self.scenario.width.max(2) - 1, self.scenario.height.max(2) - 1);
        obs[0] = me.hp / spec.max_hp;
        obs[1] = me.x as f64 / w as f64;
        obs[2] = me.y as f64 / h as f64;
        obs[3] = if me.cooldown > 0 { 1.0 } else { 0.0 };
        let block = UNIT_FEATURES + self.unit_specs.len();
        let sight = spec.sight.max(1) as f64;
        for (slot, other) in (0..self.world.units.len()).filter(|&o| o != agent).enumerate() {
            let u = &self.world.units[other];
            if !u.alive() || chebyshev(me, u) > spec.sight {
                continue;
            }
            let base = OWN_FEATURES + slot * block;
            obs[base] = 1.0;
            obs[base + 1] = (u.x - me.x) as f64 / sight;
            obs[base + 2] = (u.y - me.y) as f64 / sight;
            obs[base + 3] = u.hp / self.spec_of(other).max_hp;
            obs[base + UNIT_FEATURES + u.unit_class] = 1.0;
        }
        obs
    }

    /// Arc `a -> b` iff both allies are alive and `b` is within the comm range
    /// of `a`'s class.
    pub fn comm_graph(&self) -> HeterogeneousAgentGraph {
        let mut arcs = Vec::new();
        for a in 0..self.num_allies {
            let ua = &self.world.units[a];
            if !ua.alive() {
                continue;
            }
            let range = self.spec_of(a).comm_range;
            for b in 0..self.num_allies {
                let ub = &self.world.units[b];
                if a != b && ub.alive() && chebyshev(ua, ub) <= range {
                    arcs.push((a, b));
                }
            }
        }
        HeterogeneousAgentGraph::build(self.spec.num_classes, self.spec.agent_classes.clone(), arcs)
            .expect("comm graph arcs are valid by construction")
    }

    fn defeated(&self) -> usize {
        self.world.units[self.num_allies..].iter().filter(|u| !u.alive()).count()
    }

    fn observe(&self, reward: f64, done: bool) -> EnvStepResult {
        let defeated = self.defeated();
        EnvStepResult {
            observations: (0..self.num_allies).map(|a| self.observation(a)).collect(),
            graph: self.comm_graph(),
            masks: (0..self.num_allies).map(|a| self.mask(a)).collect(),
            alive: self.world.units[..self.num_allies].iter().map(UnitState::alive).collect(),
            reward,
            done,
            info: StepInfo {
                won: defeated == self.spec.num_enemies,
                defeated_enemies: defeated,
            },
        }
    }
}

impl Environment for BattleEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<EnvStepResult, EnvError> {
        self.world = self.initial_world(seed);
        self.done = false;
        Ok(self.observe(0.0, false))
    }

    fn step(&mut self, actions: &[usize]) -> Result<EnvStepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let masks: Vec<ActionMask> = (0..self.num_allies).map(|a| self.mask(a)).collect();
        check_actions(&masks, actions)?;
        let mut acts: Vec<Act> = actions.iter().map(|&a| self.decode(a)).collect();
        acts.extend(self.enemy_range().map(|e| self.scripted(e)));
        let (dealt, healed) = self.resolve(&acts);
        self.world.step += 1;

        let won = self.defeated() == self.spec.num_enemies;
        let lost = self.world.units[..self.num_allies].iter().all(|u| !u.alive());
        let weights = &self.scenario.reward;
        let mut reward = (dealt + weights.heal_weight * healed) / self.enemy_hp_total;
        if won {
            reward += weights.win_bonus;
        }
        self.done = won || lost || self.world.step >= self.scenario.max_steps;
        Ok(self.observe(reward, self.done))
    }

    fn trace_line(&self) -> String {
        let mut line = format!("step {}", self.world.step);
        for (i, u) in self.world.units.iter().enumerate() {
            let side = if u.ally { 'a' } else { 'e' };
            let _ = write!(
                line,
                " {side}{i}:{}@{},{}:{}",
                self.unit_specs[u.unit_class].name,
                u.x,
                u.y,
                u.hp
            );
        }
        line
    }
}
