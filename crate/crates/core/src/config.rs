//! Mission configuration: TOML sections with `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::collision::SafetyConfig;
use crate::error::{Error, Result};
use crate::mapping::{FusionParams, SensorModelParams};
use crate::motion::{ModelKind, ModelParams};
use crate::planner::PlannerConfig;
use crate::sim::{builtin_world, DriftSpec, SensorKind, SensorSpec, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionSection {
    /// Built-in world name, ignored when `world_file` is set.
    pub world: String,
    pub world_file: Option<PathBuf>,
    /// Scale factor for generated worlds that support it.
    pub scale: f64,
    pub seed: u64,
    /// Simulated time limit in seconds.
    pub max_time: f64,
    /// Consecutive failed iterations before the contingency plan.
    pub n_cp: usize,
    /// Robot bounding radius.
    pub r_body: f64,
    /// Extra space around map, start and goal that the planner may sample.
    pub bounds_margin: f64,
    /// Fraction of the collision budget held back when planning, so that plans survive
    /// small map changes when they are re-checked against the full budget.
    pub plan_margin: f64,
    /// Optional override of the whole-cycle budget; must equal the sum of
    /// the planner budgets when given.
    pub delta_t_mp: Option<f64>,
    pub start: Option<Vec<f64>>,
    /// Where the contingency plan returns to; defaults to the start.
    pub home: Option<Vec<f64>>,
    pub goal_lo: Option<Vec<f64>>,
    pub goal_hi: Option<Vec<f64>>,
}

impl Default for MissionSection {
    fn default() -> Self {
        MissionSection {
            world: "open2d".into(),
            world_file: None,
            scale: 0.3,
            seed: 0,
            max_time: 240.0,
            n_cp: 10,
            r_body: 0.3,
            bounds_margin: 4.0,
            plan_margin: 0.25,
            delta_t_mp: None,
            start: None,
            home: None,
            goal_lo: None,
            goal_hi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub resolution: f64,
    /// Seconds of scans per local submap.
    pub submap_period: f64,
    pub sensor_model: SensorModelParams,
    pub fusion: FusionParams,
}

impl Default for MapSection {
    fn default() -> Self {
        MapSection {
            resolution: 0.5,
            submap_period: 10.0,
            sensor_model: SensorModelParams::default(),
            fusion: FusionParams::default(),
        }
    }
}

/// Everything needed to run one mission.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    pub mission: MissionSection,
    pub safety: SafetyConfig,
    pub planner: PlannerConfig,
    pub model: ModelParams,
    pub sensor: SensorSpec,
    pub map: MapSection,
    pub drift: DriftSpec,
}

/// Set `path` (dot separated) in a TOML table, creating sections.
fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("bad key '{path}'")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("'{p}' in '{path}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parse the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl MissionConfig {
    /// Parse TOML text and apply `section.key=value` overrides.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' must look like section.key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: MissionConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn delta_t_mp(&self) -> f64 {
        self.planner.total_budget()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mission;
        if m.n_cp == 0 {
            return Err(Error::Config("mission.n_cp must be at least 1".into()));
        }
        if !(m.max_time > 0.0 && m.r_body >= 0.0 && m.bounds_margin >= 0.0 && m.scale > 0.0 && (0.0..1.0).contains(&m.plan_margin)) {
            return Err(Error::Config("mission limits must be positive".into()));
        }
        if let Some(d) = m.delta_t_mp {
            if (d - self.delta_t_mp()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "mission.delta_t_mp = {d} differs from budget_lead + budget_constrained = {}",
                    self.delta_t_mp()
                )));
            }
        }
        self.safety.validate()?;
        self.planner.validate()?;
        self.model.validate()?;
        self.sensor.validate()?;
        self.map.sensor_model.validate()?;
        if !(self.map.resolution > 0.0 && self.map.submap_period > 0.0) {
            return Err(Error::Config("map resolution and submap period must be positive".into()));
        }
        let f = &self.map.fusion;
        if !(f.alpha > 0.0 && f.alpha < 1.0) || !(0.0..1.0).contains(&f.occupancy_floor) || !(0.0..=1.0).contains(&f.unknown_value) {
            return Err(Error::Config("map.fusion parameters out of range".into()));
        }
        if self.drift.noise_scale < 0.0 {
            return Err(Error::Config("drift.noise_scale must be non-negative".into()));
        }
        let want = match self.model.kind {
            ModelKind::Unicycle => SensorKind::Rotating2d,
            ModelKind::FixedWing => SensorKind::Lidar3d,
        };
        if self.sensor.kind != want {
            return Err(Error::Config(format!("sensor kind {:?} does not match model {:?}", self.sensor.kind, self.model.kind)));
        }
        Ok(())
    }

    /// The world with start/goal overrides applied, checked against the model.
    pub fn world(&self) -> Result<World> {
        let m = &self.mission;
        let mut w = match &m.world_file {
            Some(p) => World::load(p)?,
            None => builtin_world(&m.world, m.scale).map_err(|e| Error::Config(e.to_string()))?,
        };
        if let Some(s) = &m.start {
            w.start = s.clone();
        }
        if let Some(g) = &m.goal_lo {
            w.goal_lo = g.clone();
        }
        if let Some(g) = &m.goal_hi {
            w.goal_hi = g.clone();
        }
        w.validate()?;
        if w.dim != self.model.kind.workspace_dim() {
            return Err(Error::Config(format!("world '{}' is {}-D but the model moves in {}-D", w.name, w.dim, self.model.kind.workspace_dim())));
        }
        Ok(w)
    }

    /// Sensor-model parameters with the range taken from the sensor.
    pub fn sensor_model(&self) -> SensorModelParams {
        SensorModelParams { max_range: self.sensor.max_range, ..self.map.sensor_model.clone() }
    }

    /// Default configuration for a 3-D fixed-wing mission.
    pub fn fixed_wing() -> Self {
        let mut c = MissionConfig::default();
        c.model = ModelParams::fixed_wing();
        c.sensor.kind = SensorKind::Lidar3d;
        c.map.resolution = 0.2;
        c.mission.world = "corridor3d".into();
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = MissionConfig::default();
        c.validate().unwrap();
        assert!((c.delta_t_mp() - 1.5).abs() < 1e-12);
        let back = MissionConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        MissionConfig::fixed_wing().validate().unwrap();
    }

    #[test]
    fn overrides_apply() {
        let text = "[mission]\nworld = 'breakwater2d'\n[safety]\np_safe = 0.9\n";
        let c = MissionConfig::from_toml_with(
            text,
            &["mission.seed=7".into(), "planner.lift.kind=rigid".into(), "planner.lift.d=1.5".into(), "mission.world=canyon2d".into()],
        )
        .unwrap();
        assert_eq!(c.mission.seed, 7);
        assert_eq!(c.mission.world, "canyon2d");
        assert_eq!(c.safety.p_safe, 0.9);
        assert_eq!(c.planner.lift.d, 1.5);
        assert_eq!(c.planner.lift.kind, crate::planner::LiftKind::Rigid);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            "[mission]\nn_cp = 0\n",
            "[safety]\np_safe = 0.995\n",
            "[mission]\nunknown_key = 1\n",
            "[mission]\ndelta_t_mp = 2.0\n",
            "[planner]\nbudget_lead = -1.0\n",
            "[sensor]\nkind = 'lidar3d'\n",
            "not toml at all [",
        ] {
            assert!(matches!(MissionConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
        }
        assert!(MissionConfig::from_toml_with("", &["noequals".into()]).is_err());
        let c = MissionConfig::from_toml("[mission]\nworld = 'nowhere'\n").unwrap();
        assert!(c.world().is_err());
        let c = MissionConfig::from_toml("[mission]\nworld = 'corridor3d'\n").unwrap();
        assert!(c.world().is_err());
    }
}
