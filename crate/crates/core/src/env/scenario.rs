use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EnvError;

/// Combat statistics of a unit class. Distances are Chebyshev cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSpec {
    pub name: String,
    pub max_hp: f64,
    pub damage: f64,
    pub heal: f64,
    pub range: u32,
    pub sight: u32,
    pub comm_range: u32,
    pub speed: u32,
    pub cooldown: u32,
}

impl UnitSpec {
    fn new(name: &str, max_hp: f64, damage: f64, heal: f64, range: u32, sight: u32, comm_range: u32, cooldown: u32) -> Self {
        Self {
            name: name.into(),
            max_hp,
            damage,
            heal,
            range,
            sight,
            comm_range,
            speed: 1,
            cooldown,
        }
    }

    pub fn heals(&self) -> bool {
        self.heal > 0.0
    }

    pub fn attacks(&self) -> bool {
        self.damage > 0.0
    }

    /// Shipped stat table.
    pub fn builtin(name: &str) -> Option<Self> {
        Some(match name {
            "fighter" => Self::new("fighter", 45.0, 6.0, 0.0, 1, 4, 2, 0),
            "ranged" => Self::new("ranged", 40.0, 8.0, 0.0, 4, 5, 4, 0),
            "heavy" => Self::new("heavy", 80.0, 10.0, 0.0, 1, 4, 3, 0),
            "healer" => Self::new("healer", 50.0, 0.0, 8.0, 3, 5, 5, 0),
            "artillery" => Self::new("artillery", 30.0, 12.0, 0.0, 6, 7, 8, 1),
            _ => return None,
        })
    }

    fn validate(&self) -> Result<(), EnvError> {
        let bad = |why: &str| Err(EnvError::InvalidScenario(format!("unit {}: {why}", self.name)));
        if !(self.max_hp > 0.0) {
            return bad("max_hp must be positive");
        }
        if self.damage < 0.0 || self.heal < 0.0 {
            return bad("damage and heal must be non-negative");
        }
        if self.attacks() && self.heals() {
            return bad("a class either attacks or heals, not both");
        }
        Ok(())
    }
}

/// Partial stat override applied on top of the shipped table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitOverride {
    pub max_hp: Option<f64>,
    pub damage: Option<f64>,
    pub heal: Option<f64>,
    pub range: Option<u32>,
    pub sight: Option<u32>,
    pub comm_range: Option<u32>,
    pub speed: Option<u32>,
    pub cooldown: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpponentPolicy {
    /// Attack the weakest ally in range, otherwise close in on the nearest.
    FocusFireNearest,
    /// Stand still.
    Passive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub win_bonus: f64,
    pub heal_weight: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            win_bonus: 10.0,
            heal_weight: 0.5,
        }
    }
}

fn default_seed() -> u64 {
    0
}

/// Declarative scenario. Rosters are `"class:count"` entries; the order of
/// first appearance fixes class indices and unit order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub allies: Vec<String>,
    pub enemies: Vec<String>,
    pub opponent: OpponentPolicy,
    pub max_steps: usize,
    #[serde(default)]
    pub reward: RewardWeights,
    #[serde(default)]
    pub units: BTreeMap<String, UnitOverride>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

pub const BUILTIN_SCENARIOS: &[&str] = &["m3", "m3_passive", "s3z5", "c1s3z5", "mmm", "mmm2"];

impl ScenarioConfig {
    fn shipped(name: &str, size: usize, allies: &[&str], enemies: &[&str], opponent: OpponentPolicy, max_steps: usize) -> Self {
        Self {
            name: name.into(),
            width: size,
            height: size,
            allies: allies.iter().map(|s| s.to_string()).collect(),
            enemies: enemies.iter().map(|s| s.to_string()).collect(),
            opponent,
            max_steps,
            reward: RewardWeights::default(),
            units: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn builtin(name: &str) -> Result<Self, EnvError> {
        use OpponentPolicy::*;
        let mmm = ["healer:1", "heavy:2", "ranged:7"];
        Ok(match name {
            "m3" => Self::shipped(name, 10, &["ranged:3"], &["ranged:3"], FocusFireNearest, 60),
            "m3_passive" => Self::shipped(name, 8, &["ranged:3"], &["ranged:3"], Passive, 40),
            "s3z5" => Self::shipped(name, 12, &["ranged:3", "fighter:5"], &["ranged:3", "fighter:5"], FocusFireNearest, 60),
            "c1s3z5" => Self::shipped(
                name,
                14,
                &["artillery:1", "ranged:3", "fighter:5"],
                &["artillery:1", "ranged:3", "fighter:5"],
                FocusFireNearest,
                80,
            ),
            "mmm" => Self::shipped(name, 14, &mmm, &mmm, FocusFireNearest, 80),
            "mmm2" => Self::shipped(name, 14, &mmm, &["healer:1", "heavy:3", "ranged:8"], FocusFireNearest, 100),
            other => return Err(EnvError::UnknownScenario(other.into())),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, EnvError> {
        let cfg: Self = toml::from_str(text).map_err(|e| EnvError::InvalidScenario(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub(crate) fn parse_roster(entries: &[String]) -> Result<Vec<(String, usize)>, EnvError> {
        entries
            .iter()
            .map(|e| {
                let (class, count) = e
                    .split_once(':')
                    .ok_or_else(|| EnvError::InvalidScenario(format!("roster entry {e:?} is not class:count")))?;
                let count: usize = count
                    .trim()
                    .parse()
                    .map_err(|_| EnvError::InvalidScenario(format!("bad count in {e:?}")))?;
                Ok((class.trim().to_string(), count))
            })
            .collect()
    }

    /// Stats of `class` after overrides.
    pub fn unit_spec(&self, class: &str) -> Result<UnitSpec, EnvError> {
        let mut spec = UnitSpec::builtin(class).ok_or_else(|| EnvError::InvalidScenario(format!("unknown unit class {class:?}")))?;
        if let Some(o) = self.units.get(class) {
            spec.max_hp = o.max_hp.unwrap_or(spec.max_hp);
            spec.damage = o.damage.unwrap_or(spec.damage);
            spec.heal = o.heal.unwrap_or(spec.heal);
            spec.range = o.range.unwrap_or(spec.range);
            spec.sight = o.sight.unwrap_or(spec.sight);
            spec.comm_range = o.comm_range.unwrap_or(spec.comm_range);
            spec.speed = o.speed.unwrap_or(spec.speed);
            spec.cooldown = o.cooldown.unwrap_or(spec.cooldown);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let allies = Self::parse_roster(&self.allies)?;
        let enemies = Self::parse_roster(&self.enemies)?;
        let count = |r: &[(String, usize)]| r.iter().map(|e| e.1).sum::<usize>();
        if count(&allies) == 0 || count(&enemies) == 0 {
            return Err(EnvError::InvalidScenario("rosters must be non-empty".into()));
        }
        if self.width < 2 || self.height < 2 || self.max_steps == 0 {
            return Err(EnvError::InvalidScenario("grid needs at least 2x2 cells and a positive step cap".into()));
        }
        for (class, _) in allies.iter().chain(&enemies) {
            self.unit_spec(class)?;
        }
        for name in self.units.keys() {
            if UnitSpec::builtin(name).is_none() {
                return Err(EnvError::InvalidScenario(format!("override for unknown class {name:?}")));
            }
        }
        let side = placement_band(count(&allies).max(count(&enemies)), self.height).2;
        if 2 * side + 1 > self.width {
            return Err(EnvError::InvalidScenario("grid too small for the rosters".into()));
        }
        Ok(())
    }
}

/// Starting rows `[lo, hi)` and column band width for a team of `n` units.
pub(crate) fn placement_band(n: usize, height: usize) -> (usize, usize, usize) {
    let rows = height.min(n + 2);
    let lo = (height - rows) / 2;
    (lo, lo + rows, n.div_ceil(rows))
}
