//! Declarative inventory of simulator assets: maps, weather presets, static
//! props, actor blueprints, and behavior primitives.
//!
//! The catalog drives two things: pruning the scenario tree down to what the
//! simulator can actually stage, and validating scene configurations before a
//! run. Satisfiability is tag-subset matching: a node or config is satisfiable
//! when every tag it requires appears somewhere in [`AssetCatalog::tag_universe`].

use crate::validation::Violation;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::Path;

pub const CATALOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetCatalog {
    pub schema_version: u32,
    pub simulator_name: String,
    #[serde(default)]
    pub maps: Vec<MapAsset>,
    #[serde(default)]
    pub weather_presets: Vec<WeatherPreset>,
    #[serde(default)]
    pub static_props: Vec<StaticProp>,
    #[serde(default)]
    pub actor_blueprints: Vec<ActorBlueprint>,
    #[serde(default)]
    pub behavior_primitives: Vec<BehaviorPrimitive>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapAsset {
    pub id: String,
    /// Lane counts of the drivable sections; the widest section bounds the
    /// lane indices a scenario config may use.
    pub lane_counts: Vec<u32>,
    #[serde(default)]
    pub road_kinds: Vec<String>,
}

impl MapAsset {
    /// Lane count of the widest section; zero for a degenerate map.
    pub fn max_lane_count(&self) -> u32 {
        self.lane_counts.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherPreset {
    pub id: String,
    /// Normalized parameter values in [0, 1] (sun_altitude in [-1, 1]).
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticProp {
    pub id: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub length_m: f64,
    pub width_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Vehicle,
    Pedestrian,
    Animal,
}

impl ActorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActorKind::Vehicle => "vehicle",
            ActorKind::Pedestrian => "pedestrian",
            ActorKind::Animal => "animal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorBlueprint {
    pub id: String,
    pub kind: ActorKind,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPrimitive {
    pub id: String,
    #[serde(default)]
    pub parameters: Vec<ParamSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(default)]
    pub required: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported catalog schema_version {0}")]
    SchemaVersion(u32),
}

impl AssetCatalog {
    pub fn empty(simulator_name: impl Into<String>) -> Self {
        Self {
            schema_version: CATALOG_SCHEMA_VERSION,
            simulator_name: simulator_name.into(),
            maps: Vec::new(),
            weather_presets: Vec::new(),
            static_props: Vec::new(),
            actor_blueprints: Vec::new(),
            behavior_primitives: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let catalog: AssetCatalog = serde_json::from_str(text)?;
        if catalog.schema_version != CATALOG_SCHEMA_VERSION {
            return Err(CatalogError::SchemaVersion(catalog.schema_version));
        }
        Ok(catalog)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Every tag the catalog can satisfy: section ids, explicit tags, actor
    /// kinds, and map road kinds.
    pub fn tag_universe(&self) -> BTreeSet<String> {
        let mut tags = BTreeSet::new();
        for m in &self.maps {
            tags.insert(m.id.clone());
            tags.extend(m.road_kinds.iter().cloned());
        }
        for w in &self.weather_presets {
            tags.insert(w.id.clone());
        }
        for p in &self.static_props {
            tags.insert(p.id.clone());
            tags.extend(p.tags.iter().cloned());
        }
        for a in &self.actor_blueprints {
            tags.insert(a.id.clone());
            tags.insert(a.kind.as_str().to_string());
            tags.extend(a.tags.iter().cloned());
        }
        for b in &self.behavior_primitives {
            tags.insert(b.id.clone());
        }
        tags
    }

    /// True when the required tags are all present in the catalog.
    pub fn satisfies(&self, required: &[String]) -> bool {
        let universe = self.tag_universe();
        required.iter().all(|t| universe.contains(t))
    }

    pub fn map(&self, id: &str) -> Option<&MapAsset> {
        self.maps.iter().find(|m| m.id == id)
    }

    pub fn weather_preset(&self, id: &str) -> Option<&WeatherPreset> {
        self.weather_presets.iter().find(|w| w.id == id)
    }

    pub fn static_prop(&self, id: &str) -> Option<&StaticProp> {
        self.static_props.iter().find(|p| p.id == id)
    }

    pub fn actor_blueprint(&self, id: &str) -> Option<&ActorBlueprint> {
        self.actor_blueprints.iter().find(|a| a.id == id)
    }

    pub fn behavior(&self, id: &str) -> Option<&BehaviorPrimitive> {
        self.behavior_primitives.iter().find(|b| b.id == id)
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        let mut check_unique = |section: &str, ids: Vec<&String>| {
            let mut seen = BTreeSet::new();
            for id in ids {
                if !seen.insert(id.clone()) {
                    violations.push(Violation::new(
                        format!("{section}.{id}"),
                        "duplicate id within section",
                    ));
                }
            }
        };
        check_unique("maps", self.maps.iter().map(|m| &m.id).collect());
        check_unique(
            "weather_presets",
            self.weather_presets.iter().map(|w| &w.id).collect(),
        );
        check_unique(
            "static_props",
            self.static_props.iter().map(|p| &p.id).collect(),
        );
        check_unique(
            "actor_blueprints",
            self.actor_blueprints.iter().map(|a| &a.id).collect(),
        );
        check_unique(
            "behavior_primitives",
            self.behavior_primitives.iter().map(|b| &b.id).collect(),
        );
        for p in &self.static_props {
            if !(p.length_m > 0.0 && p.width_m > 0.0) {
                violations.push(Violation::new(
                    format!("static_props.{}", p.id),
                    "footprint must be strictly positive",
                ));
            }
        }
        violations
    }
}
