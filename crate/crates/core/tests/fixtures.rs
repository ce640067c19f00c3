//! Committed-fixture construction and drift checks.
//!
//! `regenerate_all_fixtures` is ignored by default: it rebuilds everything
//! under `fixtures/` from the tables below and prints the metric values the
//! acceptance suite freezes. Run it with
//! `cargo test -p oodgen-core --test fixtures -- --ignored` and commit the
//! output. The remaining tests guard the committed files against drift.

use oodgen_core::catalog::{
    ActorBlueprint, ActorKind, AssetCatalog, BehaviorPrimitive, MapAsset, ParamSpec, StaticProp,
    WeatherPreset,
};
use oodgen_core::corpus::CorpusItem;
use oodgen_core::gateway::{
    ChatProvider, Embedder, Gateway, HashEmbedder, MockProvider, MockReplySpec, MockScript,
    MockScriptEntry, MockWhen, Role, MOCK_SCRIPT_SCHEMA_VERSION,
};
use oodgen_core::generation::{CreatedBy, IterationOutcome, ScenarioRecord};
use oodgen_core::sim::{
    ActorSpec, BehaviorSpec, EgoSpec, EntityKind, ScenarioConfig, SpawnSpec, Trigger, WeatherSpec,
    CONFIG_SCHEMA_VERSION,
};
use oodgen_core::tree::{
    Category, NodeId, NodePatch, ScenarioTree, TreeEdit, TreeNode, TreePath,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

const REDTEAM_ITERATIONS: usize = 100;
const REDTEAM_SEED: u64 = 11;
const SCENARIOS_PER_LEAF: usize = 10;
const GOLDEN_SEED: u64 = 7;

fn fixture_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

// ---------------------------------------------------------------- catalog

fn behavior_specs(id: &str) -> Vec<ParamSpec> {
    let p = |name: &str, required| ParamSpec { name: name.into(), required };
    match id {
        "constant_velocity" | "wrong_way" => vec![p("speed_mps", true)],
        "sudden_brake" => vec![p("speed_mps", true), p("decel_mps2", false)],
        "cut_in" => vec![p("speed_mps", true), p("lane_offset", true), p("duration_s", false)],
        "cross_road" => vec![p("walk_speed_mps", true)],
        "queue_of_agents" => vec![p("count", true), p("spacing_m", false)],
        _ => vec![],
    }
}

fn build_catalog() -> AssetCatalog {
    let mut c = AssetCatalog::empty("microsim");
    c.maps.push(MapAsset {
        id: "straight-2".into(),
        lane_counts: vec![2],
        road_kinds: vec!["straight".into()],
    });
    c.maps.push(MapAsset {
        id: "straight-3".into(),
        lane_counts: vec![3],
        road_kinds: vec!["straight".into()],
    });
    let preset = |id: &str, params: &[(&str, f64)]| WeatherPreset {
        id: id.into(),
        parameters: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    };
    c.weather_presets.push(preset("clear-day", &[("sun_altitude", 0.7)]));
    c.weather_presets.push(preset("clear-night", &[("sun_altitude", -0.4)]));
    c.weather_presets
        .push(preset("thick-fog", &[("fog_density", 0.9), ("sun_altitude", 0.3)]));
    c.weather_presets.push(preset(
        "heavy-rain",
        &[("precipitation", 0.9), ("fog_density", 0.2), ("sun_altitude", 0.5)],
    ));
    let prop = |id: &str, tags: &[&str], l: f64, w: f64| StaticProp {
        id: id.into(),
        tags: tags.iter().map(|t| t.to_string()).collect(),
        length_m: l,
        width_m: w,
    };
    c.static_props.push(prop("cardboard-box", &["debris", "box"], 1.2, 1.0));
    c.static_props.push(prop("plant-pot", &["obstacle"], 0.8, 0.8));
    c.static_props.push(prop("overturned-truck", &["crash", "blocking"], 4.5, 2.0));
    c.static_props.push(prop("traffic-cone", &["construction"], 0.4, 0.4));
    c.static_props.push(prop("barrier", &["construction", "blocking"], 2.5, 0.8));
    let bp = |id: &str, kind: ActorKind, tags: &[&str]| ActorBlueprint {
        id: id.into(),
        kind,
        tags: tags.iter().map(|t| t.to_string()).collect(),
    };
    c.actor_blueprints.push(bp("sedan", ActorKind::Vehicle, &["car"]));
    c.actor_blueprints.push(bp("suv", ActorKind::Vehicle, &["car"]));
    c.actor_blueprints.push(bp("pedestrian-adult", ActorKind::Pedestrian, &["crowd"]));
    c.actor_blueprints.push(bp("deer", ActorKind::Animal, &["wild"]));
    c.actor_blueprints.push(bp("dog", ActorKind::Animal, &["pet"]));
    for id in oodgen_core::sim::SUPPORTED_PRIMITIVES {
        c.behavior_primitives
            .push(BehaviorPrimitive { id: id.to_string(), parameters: behavior_specs(id) });
    }
    assert!(c.validate().is_empty(), "fixture catalog must validate");
    c
}

// ------------------------------------------------------------ initial tree

/// (parent, id, label, dimension, requirements). Requirement tags that the
/// catalog cannot satisfy mark branches destined to be pruned away.
const INITIAL_NODES: &[(&str, &str, &str, &str, &[&str])] = &[
    // environmental groups
    ("environmental", "weather-conditions", "Degraded weather", "weather", &[]),
    ("environmental", "lighting-conditions", "Poor lighting", "time-of-day", &[]),
    ("environmental", "road-obstructions", "Obstructions on the roadway", "static-object", &[]),
    ("environmental", "road-layout-changes", "Unexpected road layout", "road-layout", &[]),
    ("environmental", "road-surface", "Degraded road surface", "road-layout", &[]),
    // weather leaves
    ("weather-conditions", "dense-fog", "Dense fog", "weather", &["thick-fog"]),
    ("weather-conditions", "heavy-rain", "Heavy rain", "weather", &["heavy-rain"]),
    ("weather-conditions", "heavy-snow", "Heavy snowfall", "weather", &["deep-snow"]),
    ("weather-conditions", "sandstorm", "Sandstorm", "weather", &["sand-cloud"]),
    ("weather-conditions", "freezing-fog", "Freezing fog", "weather", &["rime-ice"]),
    // lighting leaves
    ("lighting-conditions", "night-driving", "Unlit road at night", "time-of-day", &["clear-night"]),
    ("lighting-conditions", "blinding-sun-glare", "Blinding sun glare", "time-of-day", &["glare-filter"]),
    ("lighting-conditions", "tunnel-blackout", "Tunnel lighting failure", "time-of-day", &["tunnel"]),
    ("lighting-conditions", "unlit-road-at-dusk", "Streetlight outage at dusk", "time-of-day", &["broken-streetlights"]),
    // obstruction leaves
    ("road-obstructions", "road-debris", "Debris on the road", "static-object", &["cardboard-box"]),
    ("road-obstructions", "fallen-tree", "Fallen tree", "static-object", &["tree-trunk"]),
    ("road-obstructions", "rockslide", "Rockslide across lanes", "static-object", &["boulder"]),
    ("road-obstructions", "lost-cargo-mattress", "Lost cargo: mattress", "static-object", &["mattress"]),
    // layout leaves
    ("road-layout-changes", "lane-closure", "Temporary lane closure", "road-layout", &["traffic-cone", "barrier"]),
    ("road-layout-changes", "missing-lane-markings", "Missing lane markings", "road-layout", &["erased-markings"]),
    // surface leaves (none satisfiable: the whole group prunes away)
    ("road-surface", "flooded-road", "Flooded roadway", "road-layout", &["standing-water"]),
    ("road-surface", "icy-patch", "Black ice patch", "road-layout", &["black-ice"]),
    ("road-surface", "fresh-oil-spill", "Fresh oil spill", "road-layout", &["oil-slick"]),
    // interactional groups
    ("interactional", "vulnerable-road-users", "Vulnerable road users", "dynamic-actor", &[]),
    ("interactional", "erratic-vehicles", "Erratic vehicle behavior", "actor-behavior", &[]),
    ("interactional", "unusual-road-users", "Unusual road users", "dynamic-actor", &[]),
    // vulnerable leaves
    ("vulnerable-road-users", "jaywalking-pedestrian", "Jaywalking pedestrian", "dynamic-actor", &["pedestrian", "cross_road"]),
    ("vulnerable-road-users", "animal-crossing", "Animal crossing", "dynamic-actor", &["deer", "cross_road"]),
    ("vulnerable-road-users", "stroller-rollaway", "Runaway stroller", "dynamic-actor", &["stroller"]),
    ("vulnerable-road-users", "wheelchair-user-on-road", "Wheelchair user on carriageway", "dynamic-actor", &["wheelchair"]),
    // erratic leaves
    ("erratic-vehicles", "wrong-way-driver", "Wrong-way driver", "actor-behavior", &["vehicle", "wrong_way"]),
    ("erratic-vehicles", "sudden-brake", "Sudden braking ahead", "actor-behavior", &["vehicle", "sudden_brake"]),
    ("erratic-vehicles", "swerving-drunk-driver", "Swerving impaired driver", "actor-behavior", &["swerve-path"]),
    ("erratic-vehicles", "brake-checking-truck", "Brake-checking truck", "actor-behavior", &["truck-trailer"]),
    // unusual leaves (none satisfiable)
    ("unusual-road-users", "horse-carriage", "Horse-drawn carriage", "dynamic-actor", &["horse"]),
    ("unusual-road-users", "street-racer-pack", "Street racer pack", "dynamic-actor", &["race-pack"]),
    ("unusual-road-users", "tractor-convoy", "Tractor convoy", "dynamic-actor", &["tractor"]),
];

fn build_initial_tree() -> ScenarioTree {
    let mut tree = ScenarioTree::skeleton();
    for (parent, id, label, dim, reqs) in INITIAL_NODES {
        let node = TreeNode::new(*id, *label)
            .with_dimension(*dim)
            .with_requirements(reqs.iter().copied());
        let parent_id = NodeId::from(*parent);
        tree.nodes[&parent_id].children.push(node.id.clone());
        tree.nodes.insert(node.id.clone(), node);
    }
    tree.ensure_valid().expect("initial fixture tree is valid");
    assert_eq!(tree.node_count(), 40);
    assert_eq!(tree.version, 0);
    tree
}

// ------------------------------------------------------------ red-team log

/// (parent, id, label, dimension, requirements) for every add the scripted
/// red team lands. Four of them survive pruning; the rest request assets the
/// catalog does not carry.
const REDTEAM_ADDS: &[(&str, &str, &str, &str, &[&str])] = &[
    ("road-obstructions", "overturned-vehicle", "Overturned vehicle blocking lanes", "static-object", &["overturned-truck"]),
    ("road-obstructions", "random-object-on-road", "Random household object on the road", "static-object", &["plant-pot"]),
    ("vulnerable-road-users", "crowd-on-road", "Crowd occupying the carriageway", "dynamic-actor", &["crowd", "queue_of_agents"]),
    ("erratic-vehicles", "sudden-lane-change", "Sudden lane change into ego", "actor-behavior", &["vehicle", "cut_in"]),
    ("weather-conditions", "hailstorm", "Hailstorm", "weather", &["hail"]),
    ("weather-conditions", "white-out-blizzard", "White-out blizzard", "weather", &["blizzard"]),
    ("weather-conditions", "volcanic-ash-cloud", "Volcanic ash cloud", "weather", &["ash-plume"]),
    ("weather-conditions", "wildfire-smoke", "Wildfire smoke bank", "weather", &["smoke-plume"]),
    ("weather-conditions", "dust-devil", "Dust devil crossing", "weather", &["dust-column"]),
    ("lighting-conditions", "aurora-distraction", "Aurora display distraction", "time-of-day", &["aurora"]),
    ("lighting-conditions", "mirror-facade-glare", "Glare from mirrored facade", "time-of-day", &["mirror-facade"]),
    ("lighting-conditions", "floodlight-outage", "Stadium floodlight outage", "time-of-day", &["floodlights"]),
    ("road-obstructions", "sinkhole-opens", "Sinkhole opens in lane", "static-object", &["sinkhole"]),
    ("road-obstructions", "meteor-debris", "Meteorite debris field", "static-object", &["meteorite"]),
    ("road-obstructions", "power-line-down", "Downed power line", "static-object", &["live-wire"]),
    ("road-obstructions", "furniture-on-highway", "Furniture dropped on highway", "static-object", &["sofa"]),
    ("road-obstructions", "billboard-collapse", "Collapsed billboard", "static-object", &["billboard"]),
    ("road-obstructions", "car-carrier-spill", "Car-carrier load spill", "static-object", &["car-stack"]),
    ("road-obstructions", "runaway-tire", "Runaway truck tire", "static-object", &["loose-tire"]),
    ("road-obstructions", "jackknifed-trailer", "Jackknifed trailer", "static-object", &["jackknife"]),
    ("road-layout-changes", "marathon-detour", "Marathon course detour", "road-layout", &["race-barrier"]),
    ("road-layout-changes", "movie-set-closure", "Film crew street closure", "road-layout", &["film-crew"]),
    ("road-layout-changes", "pop-up-bike-lane", "Overnight pop-up bike lane", "road-layout", &["paint-crew"]),
    ("road-surface", "cement-spill", "Wet cement spill", "road-layout", &["wet-cement"]),
    ("road-surface", "burst-water-main", "Burst water main flooding", "road-layout", &["burst-main"]),
    ("road-surface", "molasses-spill", "Molasses tanker spill", "road-layout", &["molasses"]),
    ("vulnerable-road-users", "flash-mob", "Flash mob in intersection", "dynamic-actor", &["flash-mob-crowd"]),
    ("vulnerable-road-users", "escaped-cattle", "Escaped cattle herd", "dynamic-actor", &["cattle"]),
    ("vulnerable-road-users", "ball-bounces-out", "Ball bounces into street", "dynamic-actor", &["ball"]),
    ("vulnerable-road-users", "cyclist-peloton", "Racing cyclist peloton", "dynamic-actor", &["peloton"]),
    ("vulnerable-road-users", "segway-tour", "Segway tour group", "dynamic-actor", &["segway"]),
    ("erratic-vehicles", "drone-landing", "Drone emergency landing", "actor-behavior", &["drone"]),
    ("erratic-vehicles", "low-flying-aircraft", "Low-flying aircraft", "actor-behavior", &["aircraft"]),
    ("erratic-vehicles", "hot-air-balloon", "Runaway hot-air balloon", "actor-behavior", &["balloon"]),
    ("erratic-vehicles", "stalled-test-mule", "Stalled prototype test mule", "actor-behavior", &["prototype-shell"]),
    ("unusual-road-users", "escaped-zoo-lion", "Escaped zoo lion", "dynamic-actor", &["lion"]),
    ("unusual-road-users", "parade-float-stall", "Stalled parade float", "dynamic-actor", &["parade-float"]),
];

/// Nodes whose descriptions the scripted red team tightens up.
const REDTEAM_MODIFIES: &[(&str, &str)] = &[
    ("weather-conditions", "Ambient weather that degrades sensing or traction."),
    ("lighting-conditions", "Lighting that starves cameras of usable contrast."),
    ("road-obstructions", "Static objects blocking part of the carriageway."),
    ("road-layout-changes", "Road geometry that differs from the map."),
    ("vulnerable-road-users", "People and animals exposed in the roadway."),
    ("erratic-vehicles", "Other vehicles moving against expectation."),
    ("dense-fog", "Fog thick enough to hide a vehicle two lengths ahead."),
    ("night-driving", "No street lighting; only headlight cones."),
    ("road-debris", "Cargo or litter sitting in the travel lane."),
    ("lane-closure", "Cones and barriers squeezing traffic over."),
    ("jaywalking-pedestrian", "A person stepping out mid-block without warning."),
    ("wrong-way-driver", "Oncoming vehicle in ego's own lane."),
    ("sudden-brake", "Lead vehicle braking far harder than traffic flow."),
];

/// Leaves of the initial tree the scripted red team re-proposes; the tree
/// model answers that an existing path already covers them.
const REDTEAM_MATCHES: &[&str] = &[
    "dense-fog",
    "heavy-rain",
    "night-driving",
    "road-debris",
    "fallen-tree",
    "lane-closure",
    "flooded-road",
    "jaywalking-pedestrian",
    "animal-crossing",
    "wrong-way-driver",
    "sudden-brake",
    "horse-carriage",
    "missing-lane-markings",
];

fn match_path(initial: &ScenarioTree, leaf: &str) -> Vec<NodeId> {
    let paths = initial.enumerate_paths().expect("initial tree enumerates");
    paths
        .into_iter()
        .find(|p| p.leaf_id().as_str() == leaf)
        .unwrap_or_else(|| panic!("no initial path ends at {leaf}"))
        .node_ids
}

/// The full scripted red-team session: per iteration, one proposal string
/// (red model) and one edit document (tree model), interleaved by a fixed
/// shuffle so adds, modifies and no-ops mix the way a real log would.
fn redteam_session(initial: &ScenarioTree) -> Vec<(String, TreeEdit)> {
    let mut kinds: Vec<u8> = Vec::new();
    kinds.extend(std::iter::repeat(0u8).take(REDTEAM_ADDS.len()));
    kinds.extend(std::iter::repeat(1u8).take(REDTEAM_MODIFIES.len()));
    kinds.extend(std::iter::repeat(2u8).take(REDTEAM_ITERATIONS - kinds.len()));
    assert_eq!(kinds.len() - REDTEAM_ADDS.len() - REDTEAM_MODIFIES.len(), 50);
    kinds.shuffle(&mut ChaCha8Rng::seed_from_u64(0x0D15_EA5E));

    let mut adds = REDTEAM_ADDS.iter();
    let mut modifies = REDTEAM_MODIFIES.iter();
    let mut matches = REDTEAM_MATCHES.iter().cycle();
    kinds
        .into_iter()
        .map(|kind| match kind {
            0 => {
                let (parent, id, label, dim, reqs) = adds.next().expect("add pool sized");
                let proposal = format!(
                    "What if the ego vehicle runs into {}? That does not look covered yet.",
                    label.to_lowercase()
                );
                let edit = TreeEdit::AddNode {
                    parent: NodeId::from(*parent),
                    node: NodePatch {
                        id: Some(NodeId::from(*id)),
                        label: Some((*label).to_string()),
                        dimension: Some((*dim).to_string()),
                        description: None,
                        asset_requirements: Some(reqs.iter().map(|t| t.to_string()).collect()),
                    },
                };
                (proposal, edit)
            }
            1 => {
                let (id, desc) = modifies.next().expect("modify pool sized");
                let proposal = format!(
                    "The `{id}` branch reads too vaguely; tighten what it is supposed to cover."
                );
                let edit = TreeEdit::ModifyNode {
                    id: NodeId::from(*id),
                    node: NodePatch {
                        id: None,
                        label: None,
                        dimension: None,
                        description: Some((*desc).to_string()),
                        asset_requirements: None,
                    },
                };
                (proposal, edit)
            }
            _ => {
                let leaf = matches.next().expect("cycle never ends");
                let proposal = format!(
                    "Consider a situation much like `{leaf}` but phrased differently; is it new?"
                );
                (proposal, TreeEdit::NoneMatched { matched: match_path(initial, leaf) })
            }
        })
        .collect()
}

fn redteam_script(session: &[(String, TreeEdit)]) -> MockScript {
    let mut entries = Vec::with_capacity(session.len() * 2);
    for (proposal, edit) in session {
        entries.push(MockScriptEntry {
            role: Some(Role::RedLlm),
            when: MockWhen::Queue,
            reply: MockReplySpec::Text { text: proposal.clone() },
        });
        entries.push(MockScriptEntry {
            role: Some(Role::TreeLlm),
            when: MockWhen::Queue,
            reply: MockReplySpec::Text {
                text: serde_json::to_string(edit).expect("edits serialize"),
            },
        });
    }
    MockScript {
        schema_version: MOCK_SCRIPT_SCHEMA_VERSION,
        model_id: "scripted-redteam-v1".into(),
        entries,
    }
}

// --------------------------------------------------------- scenario corpus

const ROADS: [&str; 10] = [
    "two-lane coastal road",
    "three-lane bypass",
    "suburban arterial",
    "rural route between fields",
    "mountain pass",
    "industrial access road",
    "tree-lined boulevard",
    "elevated expressway",
    "ring road around the old town",
    "service road beside the rail line",
];

const TIMES: [&str; 10] = [
    "just after dawn",
    "at midday",
    "in the late afternoon",
    "at dusk",
    "shortly after midnight",
    "during the morning rush",
    "on a quiet sunday morning",
    "late in the evening",
    "before sunrise",
    "under a low winter sun",
];

/// One topic clause per leaf, reused across its ten variants.
fn leaf_event(leaf: &str) -> &'static str {
    match leaf {
        "dense-fog" => "a dense fog bank swallows the road ahead",
        "heavy-rain" => "a cloudburst turns the windshield into running water",
        "night-driving" => "the last streetlight drops away and the road goes completely dark",
        "road-debris" => "a large cardboard box sits squarely in the travel lane",
        "overturned-vehicle" => "an overturned truck lies across the lanes on its side",
        "random-object-on-road" => "a heavy ceramic plant pot stands improbably in the middle of the lane",
        "lane-closure" => "a wall of cones and portable barriers squeezes traffic out of the lane",
        "jaywalking-pedestrian" => "a pedestrian steps off the curb mid-block and walks into traffic",
        "crowd-on-road" => "a dense crowd of people on foot fills the carriageway from edge to edge",
        "animal-crossing" => "a deer bolts from the verge and cuts across the lanes",
        "wrong-way-driver" => "a car appears head-on, driving the wrong way in ego's lane",
        "sudden-lane-change" => "the car in the next lane swerves over into ego's lane without indicating",
        "sudden-brake" => "the lead vehicle slams on its brakes for no visible reason",
        other => panic!("no event clause for leaf {other}"),
    }
}

/// Ten leaf-specific follow-on details, one per variant.
fn leaf_tails(leaf: &str) -> [&'static str; 10] {
    match leaf {
        "dense-fog" => [
            "the lane markings vanish a car length beyond the hood",
            "taillights ahead fade in and out of the murk",
            "oncoming headlamps appear only as faint halos",
            "the road edge becomes a guess",
            "a slower vehicle ahead is audible before it is visible",
            "ego's own high beams reflect straight back off the mist",
            "an exit sign emerges from the white at the last moment",
            "spray from a truck thickens the whiteout further",
            "the fog pools deepest in a dip between two rises",
            "visibility collapses to roughly two car lengths",
        ],
        "heavy-rain" => [
            "the wipers cannot keep up even on their fastest setting",
            "standing water tugs at the steering",
            "brake lights ahead smear into long red streaks",
            "spray from surrounding traffic hides whole vehicles",
            "the lane paint disappears under a moving film of water",
            "a curtain of rain crosses the road like a wall",
            "puddles conceal the edge of the pavement",
            "thunder masks the sound of nearby engines",
            "the downpour overwhelms the drainage within minutes",
            "every surface throws back glare from the clouds",
        ],
        "night-driving" => [
            "the headlight cones are the only geometry left",
            "retroreflectors float in the black with nothing between them",
            "an unlit parked car materializes at the lane edge",
            "the horizon and the road merge into one dark mass",
            "animals' eyes flash at the limit of the beams",
            "a curve arrives with no streetlight to announce it",
            "the dashboard is brighter than the road",
            "oncoming high beams leave long blind afterimages",
            "distance becomes impossible to judge against the dark",
            "the verge and the ditch read as the same shadow",
        ],
        "road-debris" => [
            "its flaps move in the wind as if something were inside",
            "it is too late to tell whether the box is empty",
            "cars ahead straddle it at the last second",
            "strapping tape glints around its middle",
            "it sits exactly where a following driver cannot see it",
            "a second, flattened box lies a little further on",
            "it rocks slightly every time a vehicle passes",
            "the box is large enough to hide an appliance",
            "skid marks curve around it from earlier traffic",
            "nobody is stopping to drag it clear",
        ],
        "overturned-vehicle" => [
            "its wheels are still turning slowly in the air",
            "the cab blocks one lane and the trailer the next",
            "cargo has spilled in a fan across the asphalt",
            "other drivers brake hard and thread the gap",
            "hazard lights blink somewhere underneath it",
            "a thin line of fuel creeps toward the gutter",
            "the roof faces oncoming traffic like a wall",
            "no emergency services have arrived yet",
            "glass glitters for thirty meters around it",
            "the undercarriage faces ego like a shelf of pipes",
        ],
        "random-object-on-road" => [
            "soil spills from its rim across the lane",
            "it is exactly the size that hides in a blind spot",
            "it must have fallen from a landscaping truck",
            "drivers ahead change lanes around it late",
            "a trail of smaller pots leads to the shoulder",
            "it stands upright as if placed there deliberately",
            "its glaze catches the light like a bollard",
            "leaves from the plant scatter downwind of it",
            "it is heavy enough to wreck a wheel on impact",
            "nobody behind it can see it until the car ahead swerves",
        ],
        "lane-closure" => [
            "the taper starts far later than the signage implies",
            "a flashing arrow board points into moving traffic",
            "cones lie knocked over across the remaining lane",
            "merging traffic zippers with visible reluctance",
            "a worker waves vehicles through a single gap",
            "fresh asphalt steams behind the barriers",
            "the closure swaps sides after a hundred meters",
            "temporary paint disagrees with the old markings",
            "a barrier has drifted half a lane out of line",
            "the detour sign points somewhere that no longer exists",
        ],
        "jaywalking-pedestrian" => [
            "their eyes are on a phone, not on traffic",
            "they emerge from between two parked vans",
            "a dropped bag scatters across the lane as they go",
            "they wave an apology but do not speed up",
            "headphones make them deaf to the horn",
            "they misjudge the gap and freeze mid-lane",
            "a second person follows without looking either",
            "they cross diagonally, staying in the lane longer",
            "the low sun hides them until the last moment",
            "they step out exactly as the light turns green",
        ],
        "crowd-on-road" => [
            "banners stretch from one curb to the other",
            "marshals in vests wave traffic to a stop",
            "the rear of the crowd keeps feeding forward",
            "music and drums drown out any horn",
            "children dart along the edges of the group",
            "the procession moves slower than walking pace",
            "there is no visible end to the column of people",
            "a few marchers drum on car hoods as they pass",
            "police have not yet closed the road behind them",
            "the crowd parts briefly and closes again",
        ],
        "animal-crossing" => [
            "it stops broadside in the lane, staring into the lights",
            "a second animal follows the first out of the dark",
            "it changes direction mid-crossing",
            "hooves skitter on the asphalt as it panics",
            "it clears one lane and hesitates in the next",
            "the verge is high grass; more could follow",
            "it jumps the barrier from the median strip",
            "its eyes flash in the beams long before its body shows",
            "it doubles back just as the gap looks safe",
            "fresh tracks cross the mud on both shoulders",
        ],
        "wrong-way-driver" => [
            "its high beams flash as if ego were the one mistaken",
            "it holds the lane center with no sign of correcting",
            "other cars peel away onto the shoulder ahead",
            "it is accelerating, not slowing",
            "the closing speed leaves almost no reaction time",
            "its driver seems unaware of any problem",
            "a horn duet does nothing to change its course",
            "it drifts between both lanes unpredictably",
            "ego's lane is the only one it seems interested in",
            "the median barrier rules out an easy escape",
        ],
        "sudden-lane-change" => [
            "there is no indicator and no head check",
            "its mirror nearly clips ego's fender",
            "it brakes the moment it completes the merge",
            "a missed exit seems to be the reason",
            "it straddles the lane line for a long moment",
            "the swerve forces the car behind into the shoulder",
            "it corrects halfway and then swerves again",
            "its driver is arguing with a passenger",
            "the gap it aims for is shorter than its own body",
            "loose cargo shifts audibly as it cuts across",
        ],
        "sudden-brake" => [
            "its nose dives and smoke curls off the tires",
            "there is no brake light warning before the stop",
            "the gap ahead collapses in under a second",
            "whatever it braked for is invisible from behind",
            "it comes to a complete stop in the travel lane",
            "the car behind ego is far too close for this",
            "its hazards come on only after the stop",
            "a dropped phone seems to be the whole reason",
            "it stops just past the crest where nobody can see it",
            "anti-lock chatter carries over the traffic noise",
        ],
        other => panic!("no tail bank for leaf {other}"),
    }
}

/// Ten sentence skeletons; `{road}`, `{time}`, `{event}`, `{tail}` slots.
fn scenario_text(leaf: &str, leaf_idx: usize, i: usize) -> String {
    let road = ROADS[(i + 3 * leaf_idx) % ROADS.len()];
    let time = TIMES[(i + 7 * leaf_idx) % TIMES.len()];
    let event = leaf_event(leaf);
    let tail = leaf_tails(leaf)[i];
    match i {
        0 => format!("Ego is driving along a {road} {time} when {event}; {tail}."),
        1 => format!("On a {road} {time}, {event}, and {tail}."),
        2 => format!("While ego cruises down a {road} {time}, {event} — {tail}."),
        3 => format!("{time}, halfway along a {road}, {event}. Worse, {tail}."),
        4 => format!("Traffic on the {road} is light {time} until {event}, at which point {tail}."),
        5 => format!("Without any warning, {event} on the {road} {time}, and {tail}."),
        6 => format!("Ego's route follows a {road} {time}. Suddenly {event}, while {tail}."),
        7 => format!("Moments after joining the {road} {time}, ego finds that {event} and that {tail}."),
        8 => format!("It is {time} on a {road} when {event}; to make matters worse, {tail}."),
        9 => format!("The drive {time} seems routine until, on the {road}, {event} — and {tail}."),
        _ => unreachable!("ten variants per leaf"),
    }
}

fn build_scenarios(simulatable: &ScenarioTree) -> Vec<ScenarioRecord> {
    let paths = simulatable.enumerate_paths().expect("pruned tree enumerates");
    let mut records = Vec::new();
    for (leaf_idx, path) in paths.iter().enumerate() {
        let leaf = path.leaf_id().as_str().to_string();
        let category = simulatable.path_category(path).expect("paths hit a category");
        for i in 0..SCENARIOS_PER_LEAF {
            records.push(ScenarioRecord {
                id: format!("{leaf}-{:02}", i + 1),
                text: scenario_text(&leaf, leaf_idx, i),
                path: Some(path.clone()),
                category,
                created_by: CreatedBy { role: Role::TreeLlm, model_id: "fixture-author-v1".into() },
                tree_version: simulatable.version,
            });
        }
    }
    records
}

// --------------------------------------------------------- baseline corpus

/// Mundane drive-log captions in the style of perception datasets: short,
/// seen-it-every-day content with heavy template reuse.
fn baseline_captions() -> Vec<CorpusItem> {
    let colors = ["black", "white", "silver", "red", "blue", "gray", "green", "yellow"];
    let vehicles = ["sedan", "suv", "hatchback", "pickup truck", "van"];
    let positions = [
        "directly ahead",
        "to the front left",
        "to the front right",
        "in the adjacent lane",
        "two car lengths ahead",
    ];
    let actions = [
        "driving at a steady speed",
        "waiting at a red light",
        "slowing down for traffic",
        "merging onto the highway",
        "keeping a safe following distance",
        "passing a slower vehicle",
        "approaching an intersection",
        "leaving a parking lot",
        "following the lane markings",
        "maintaining its lane",
    ];
    let roads = [
        "city street",
        "highway",
        "residential road",
        "four-lane avenue",
        "downtown boulevard",
        "freeway on-ramp",
    ];
    let weathers = ["clear weather", "light clouds", "a sunny afternoon", "mild overcast"];
    let walkers = [
        "waiting on the sidewalk",
        "crossing at the crosswalk",
        "standing at the corner",
        "walking along the sidewalk",
        "waiting for the signal",
    ];

    let mut texts = Vec::new();
    for c in colors {
        for v in vehicles {
            for p in positions {
                texts.push(format!("There is a {c} {v} {p} of the ego vehicle."));
            }
        }
    }
    for c in colors {
        for v in vehicles {
            for p in positions {
                texts.push(format!("A {c} {v} is parked {p} of the ego vehicle."));
            }
        }
    }
    for a in actions {
        for r in roads {
            texts.push(format!("The ego vehicle is {a} on a {r}."));
        }
    }
    for w in weathers {
        for r in roads {
            texts.push(format!("The ego vehicle drives on a {r} in {w}."));
        }
    }
    for p in positions {
        for s in walkers {
            texts.push(format!("A pedestrian is {s} {p} of the ego vehicle."));
        }
    }
    texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| CorpusItem { id: format!("cap-{:04}", i + 1), text })
        .collect()
}

// ------------------------------------------------------------ golden configs

fn actor(
    id: &str,
    blueprint: &str,
    kind: EntityKind,
    lane_offset: i32,
    longitudinal: f64,
    primitive: &str,
    params: &[(&str, f64)],
    trigger: Trigger,
) -> ActorSpec {
    ActorSpec {
        id: id.into(),
        blueprint: blueprint.into(),
        kind,
        spawn: SpawnSpec { lane_offset, longitudinal_offset_m: longitudinal },
        behavior: BehaviorSpec {
            primitive: primitive.into(),
            parameters: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        },
        trigger,
    }
}

fn config(
    id: &str,
    map_id: &str,
    preset: &str,
    time_of_day: &str,
    ego: EgoSpec,
    actors: Vec<ActorSpec>,
    horizon_s: f64,
    ood_label: &str,
) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        id: id.into(),
        map_id: map_id.into(),
        weather: WeatherSpec { preset: preset.into(), overrides: Default::default() },
        time_of_day: time_of_day.into(),
        ego,
        actors,
        horizon_s,
        ood_label: ood_label.into(),
    }
}

fn golden_configs() -> Vec<ScenarioConfig> {
    let t0 = Trigger::Time { at: 0.0 };
    vec![
        config(
            "golden-fog-lead",
            "straight-2",
            "thick-fog",
            "day",
            EgoSpec { lane: 0, position_m: 0.0, speed_mps: 10.0 },
            vec![actor(
                "lead",
                "sedan",
                EntityKind::Vehicle,
                0,
                40.0,
                "constant_velocity",
                &[("speed_mps", 4.0)],
                t0.clone(),
            )],
            10.0,
            "dense-fog",
        ),
        // closed-form check: contact at (50 - 2.25 - 2.25) / 10 = 4.55 s,
        // so the engine must flag the collision at t = 4.6
        config(
            "golden-overturned-truck",
            "straight-2",
            "clear-day",
            "day",
            EgoSpec { lane: 0, position_m: 0.0, speed_mps: 10.0 },
            vec![actor(
                "wreck",
                "overturned-truck",
                EntityKind::Static,
                0,
                50.0,
                "stationary",
                &[],
                t0.clone(),
            )],
            10.0,
            "overturned-vehicle",
        ),
        config(
            "golden-crowd",
            "straight-2",
            "clear-day",
            "day",
            EgoSpec { lane: 0, position_m: 0.0, speed_mps: 8.0 },
            vec![actor(
                "crowd",
                "pedestrian-adult",
                EntityKind::Pedestrian,
                0,
                30.0,
                "queue_of_agents",
                &[("count", 4.0), ("spacing_m", 1.0)],
                t0.clone(),
            )],
            10.0,
            "crowd-on-road",
        ),
        config(
            "golden-wrong-way",
            "straight-3",
            "clear-night",
            "night",
            EgoSpec { lane: 1, position_m: 0.0, speed_mps: 8.0 },
            vec![actor(
                "oncoming",
                "suv",
                EntityKind::Vehicle,
                0,
                60.0,
                "wrong_way",
                &[("speed_mps", 8.0)],
                t0.clone(),
            )],
            10.0,
            "wrong-way-driver",
        ),
        config(
            "golden-cut-in",
            "straight-2",
            "heavy-rain",
            "day",
            EgoSpec { lane: 0, position_m: 0.0, speed_mps: 12.0 },
            vec![actor(
                "cutter",
                "sedan",
                EntityKind::Vehicle,
                1,
                10.0,
                "cut_in",
                &[("speed_mps", 10.0), ("lane_offset", -1.0), ("duration_s", 2.0)],
                Trigger::EgoDistance { within_m: 15.0 },
            )],
            10.0,
            "sudden-lane-change",
        ),
    ]
}

// ---------------------------------------------------------- pipeline script

fn pipeline_initial_tree() -> ScenarioTree {
    let mut tree = ScenarioTree::skeleton();
    let rows: &[(&str, &str, &str, &str, &[&str])] = &[
        ("environmental", "weather-conditions", "Degraded weather", "weather", &[]),
        ("weather-conditions", "dense-fog", "Dense fog", "weather", &["thick-fog"]),
        ("interactional", "erratic-vehicles", "Erratic vehicle behavior", "actor-behavior", &[]),
        ("erratic-vehicles", "sudden-brake", "Sudden braking ahead", "actor-behavior", &["vehicle", "sudden_brake"]),
    ];
    for (parent, id, label, dim, reqs) in rows {
        let node = TreeNode::new(*id, *label)
            .with_dimension(*dim)
            .with_requirements(reqs.iter().copied());
        let parent_id = NodeId::from(*parent);
        tree.nodes[&parent_id].children.push(node.id.clone());
        tree.nodes.insert(node.id.clone(), node);
    }
    tree.ensure_valid().expect("pipeline seed tree is valid");
    tree
}

fn pipeline_configs() -> Vec<ScenarioConfig> {
    let t0 = Trigger::Time { at: 0.0 };
    let lead = |id: &str, bp: &str, off: f64, speed: f64| {
        actor(id, bp, EntityKind::Vehicle, 0, off, "constant_velocity", &[("speed_mps", speed)], t0.clone())
    };
    let braker = |id: &str, off: f64, speed: f64, decel: f64, at: f64| {
        actor(
            id,
            "sedan",
            EntityKind::Vehicle,
            0,
            off,
            "sudden_brake",
            &[("speed_mps", speed), ("decel_mps2", decel)],
            Trigger::Time { at },
        )
    };
    vec![
        config("dense-fog-01", "straight-2", "thick-fog", "day",
            EgoSpec { lane: 0, position_m: 0.0, speed_mps: 10.0 },
            vec![lead("lead", "sedan", 40.0, 4.0)], 10.0, "dense-fog"),
        config("dense-fog-02", "straight-2", "thick-fog", "dusk",
            EgoSpec { lane: 0, position_m: 0.0, speed_mps: 8.0 },
            vec![lead("lead", "suv", 45.0, 3.0)], 10.0, "dense-fog"),
        config("heavy-rain-01", "straight-2", "heavy-rain", "day",
            EgoSpec { lane: 0, position_m: 0.0, speed_mps: 9.0 },
            vec![lead("lead", "suv", 35.0, 3.0)], 10.0, "heavy-rain"),
        config("heavy-rain-02", "straight-2", "heavy-rain", "day",
            EgoSpec { lane: 0, position_m: 0.0, speed_mps: 10.0 },
            vec![lead("lead", "sedan", 50.0, 4.0)], 10.0, "heavy-rain"),
        config("sudden-brake-01", "straight-2", "clear-day", "day",
            EgoSpec { lane: 0, position_m: 0.0, speed_mps: 10.0 },
            vec![braker("lead", 30.0, 10.0, 6.0, 2.0)], 10.0, "sudden-brake"),
        config("sudden-brake-02", "straight-2", "clear-day", "day",
            EgoSpec { lane: 0, position_m: 0.0, speed_mps: 12.0 },
            vec![braker("lead", 25.0, 12.0, 8.0, 1.5)], 10.0, "sudden-brake"),
    ]
}

fn pipeline_scenario_batches() -> [Vec<&'static str>; 3] {
    [
        vec![
            "Ego follows a two-lane road at dusk when a fog bank erases everything beyond the hood; somewhere inside it a slower car is holding the lane.",
            "Dense fog sits in the valley road and ego's headlights only make the white wall brighter, while a dim pair of taillights drifts in and out of view.",
        ],
        vec![
            "A sudden downpour floods the windshield faster than the wipers clear it, and the spray of a slow vehicle ahead is the only hint of its position.",
            "Heavy rain hammers the bypass; sheets of water hide the lane paint and a slower car looms out of the spray with little warning.",
        ],
        vec![
            "The lead car on the commuter road brakes to a dead stop without any visible reason, its nose diving while the gap collapses.",
            "Without brake lights or warning, the vehicle ahead of ego stands on its brakes mid-block and stops squarely in the travel lane.",
        ],
    ]
}

fn vlm_text(value: serde_json::Value) -> MockScriptEntry {
    MockScriptEntry {
        role: Some(Role::Vlm),
        when: MockWhen::Queue,
        reply: MockReplySpec::Text { text: value.to_string() },
    }
}

/// Every provider reply one full pipeline run consumes, in order.
fn pipeline_script() -> MockScript {
    let mut entries: Vec<MockScriptEntry> = Vec::new();
    let queue = |role: Role, text: String| MockScriptEntry {
        role: Some(role),
        when: MockWhen::Queue,
        reply: MockReplySpec::Text { text },
    };

    // tree stage: brainstorm, classification, then the emitted document
    entries.push(queue(
        Role::TreeLlm,
        "Out-of-distribution driving splits into what the world throws at the \
         sensors and what other agents do: weather, lighting, obstructions on \
         one side; pedestrians and erratic vehicles on the other."
            .into(),
    ));
    entries.push(queue(
        Role::TreeLlm,
        "Weather and lighting are environmental; braking and crossing actors \
         are interactional."
            .into(),
    ));
    entries.push(queue(
        Role::TreeLlm,
        oodgen_core::tree::serialize_tree(&pipeline_initial_tree()),
    ));

    // red-team stage: three iterations (add, modify, already-covered)
    let redteam: Vec<(String, TreeEdit)> = vec![
        (
            "What about rain heavy enough to blind the cameras?".into(),
            TreeEdit::AddNode {
                parent: NodeId::from("weather-conditions"),
                node: NodePatch {
                    id: Some(NodeId::from("heavy-rain")),
                    label: Some("Heavy rain".into()),
                    dimension: Some("weather".into()),
                    description: None,
                    asset_requirements: Some(vec!["heavy-rain".into()]),
                },
            },
        ),
        (
            "The fog leaf should say how thick the fog actually is.".into(),
            TreeEdit::ModifyNode {
                id: NodeId::from("dense-fog"),
                node: NodePatch {
                    id: None,
                    label: None,
                    dimension: None,
                    description: Some("Fog thick enough to hide a vehicle two lengths ahead.".into()),
                    asset_requirements: None,
                },
            },
        ),
        (
            "Suppose visibility drops to nothing in ground-level cloud.".into(),
            TreeEdit::NoneMatched {
                matched: vec![
                    NodeId::from("root"),
                    NodeId::from("environmental"),
                    NodeId::from("weather-conditions"),
                    NodeId::from("dense-fog"),
                ],
            },
        ),
    ];
    for (proposal, edit) in &redteam {
        entries.push(queue(Role::RedLlm, proposal.clone()));
        entries.push(queue(Role::TreeLlm, serde_json::to_string(edit).expect("edit serializes")));
    }

    // generation stage: one reply per path, two texts each
    for batch in pipeline_scenario_batches() {
        entries.push(queue(
            Role::TreeLlm,
            serde_json::json!({ "scenarios": batch }).to_string(),
        ));
    }

    // simulation stage: one executable config per scenario record
    for cfg in pipeline_configs() {
        entries.push(queue(Role::AugmenterLlm, cfg.to_json()));
    }

    // evaluation stage: three frame descriptions, one verdict, one action pick
    let descriptions: [&str; 3] = [
        "A straight road; another vehicle is visible ahead in the same lane.",
        "The gap to the vehicle ahead has closed noticeably.",
        "The vehicle ahead is very close now; the scene looks hazardous.",
    ];
    let verdicts = [true, true, true, false, true, true];
    let picks = ["change_left", "brake_stop", "keep_lane", "emergency_stop", "brake_stop", "change_right"];
    for (verdict, pick) in verdicts.iter().zip(picks) {
        for d in descriptions {
            entries.push(vlm_text(serde_json::json!({ "description": d })));
        }
        entries.push(vlm_text(serde_json::json!({
            "is_ood": verdict,
            "rationale": "the configuration is far outside everyday driving"
        })));
        entries.push(vlm_text(serde_json::json!({
            "action": pick,
            "rationale": "chosen to maximize clearance from the hazard"
        })));
    }

    MockScript {
        schema_version: MOCK_SCRIPT_SCHEMA_VERSION,
        model_id: "scripted-pipeline-v1".into(),
        entries,
    }
}

const PIPELINE_CONFIG_TOML: &str = r#"# End-to-end run configuration: offline providers, pinned clock and seeds.
schema_version = 1

[run]
seed = 7
fixed_time = 1700000000

[providers]
mode = "mock"
script = "mock_script.json"

[embedding]
backend = "hash"
dims = 64

[assets]
catalog = "../catalog.json"
baseline = "../baseline_captions.jsonl"

[redteam]
iterations = 3

[generate]
per_path = 2

[metrics]
convention = "negated_max"
reference_batch = 100
reference_repeats = 10

[eval]
payload = "text"
"#;

// ------------------------------------------------------------ construction

struct Fixtures {
    catalog: AssetCatalog,
    initial: ScenarioTree,
    diverse: ScenarioTree,
    simulatable: ScenarioTree,
    session: Vec<(String, TreeEdit)>,
    scenarios: Vec<ScenarioRecord>,
    captions: Vec<CorpusItem>,
}

fn build_all() -> Fixtures {
    let catalog = build_catalog();
    let initial = build_initial_tree();
    let session = redteam_session(&initial);

    // replay the scripted session through the real refinement loop
    let provider = Arc::new(
        MockProvider::from_script(&redteam_script(&session)).expect("script loads"),
    );
    let gateway = Gateway::new(provider);
    let prompts = oodgen_core::generation::PromptSet::default();
    let (diverse, logs) = oodgen_core::generation::run_redteam_loop(
        &initial,
        REDTEAM_ITERATIONS,
        &prompts,
        &gateway,
        REDTEAM_SEED,
    )
    .expect("scripted red-team session applies cleanly");
    assert_eq!(diverse.node_count(), 77, "diverse tree size");
    assert_eq!(diverse.version, 50, "37 adds + 13 modifies");
    let applied = logs
        .iter()
        .filter(|l| matches!(l.outcome, IterationOutcome::AppliedEdit { .. }))
        .count();
    let matched = logs
        .iter()
        .filter(|l| matches!(l.outcome, IterationOutcome::MatchedPath { .. }))
        .count();
    assert_eq!((applied, matched), (50, 50));

    let simulatable =
        oodgen_core::tree::prune_to_catalog(&diverse, &catalog).expect("prune succeeds");
    assert_eq!(simulatable.node_count(), 22, "simulatable tree size");
    assert_eq!(simulatable.enumerate_paths().expect("valid").len(), 13, "simulatable paths");
    assert_eq!(simulatable.version, diverse.version, "pruning is not an edit");

    let scenarios = build_scenarios(&simulatable);
    assert_eq!(scenarios.len(), 130);
    for r in &scenarios {
        r.validate(&simulatable).expect("scenario record validates");
    }
    let captions = baseline_captions();
    assert!(captions.len() >= 500, "baseline needs at least 500 captions");

    Fixtures { catalog, initial, diverse, simulatable, session, scenarios, captions }
}

// ---------------------------------------------------------------- metrics

struct FrozenMetrics {
    scenario_oodness: f64,
    reference_oodness: f64,
    scenario_diversity: f64,
    baseline_sample_diversity: f64,
}

fn compute_metrics(fx: &Fixtures) -> FrozenMetrics {
    use oodgen_core::metrics::{
        baseline_reference_oodness, dataset_diversity, dataset_oodness, Convention,
        EmbeddedDataset,
    };
    let embedder = HashEmbedder::default();
    let embed = |items: Vec<(String, String)>| {
        let texts: Vec<String> = items.iter().map(|(_, t)| t.clone()).collect();
        let vectors = oodgen_core::gateway::embed(&texts, &embedder).expect("hash embed");
        EmbeddedDataset::from_embeddings(embedder.model_id().to_string(), items, vectors)
            .expect("dataset builds")
    };
    let ours = embed(fx.scenarios.iter().map(|r| (r.id.clone(), r.text.clone())).collect());
    let baseline = embed(fx.captions.iter().map(|c| (c.id.clone(), c.text.clone())).collect());
    let baseline_sample =
        embed(fx.captions[..130].iter().map(|c| (c.id.clone(), c.text.clone())).collect());

    let oodness = dataset_oodness(&ours, &baseline, Convention::NegatedMax).expect("oodness");
    let reference = baseline_reference_oodness(&baseline, 100, 10, 13, Convention::NegatedMax)
        .expect("reference");
    let ours_div = dataset_diversity(&ours).expect("diversity");
    let sample_div = dataset_diversity(&baseline_sample).expect("diversity");
    FrozenMetrics {
        scenario_oodness: oodness.aggregate,
        reference_oodness: reference.value,
        scenario_diversity: ours_div.aggregate,
        baseline_sample_diversity: sample_div.aggregate,
    }
}

// -------------------------------------------------------------- generator

#[test]
#[ignore = "rewrites the committed fixtures; run explicitly"]
fn regenerate_all_fixtures() {
    let root = fixture_root();
    let fx = build_all();

    std::fs::create_dir_all(root.join("trees")).expect("mkdir trees");
    std::fs::create_dir_all(root.join("sim/configs")).expect("mkdir configs");
    std::fs::create_dir_all(root.join("sim/traces")).expect("mkdir traces");
    std::fs::create_dir_all(root.join("pipeline")).expect("mkdir pipeline");

    std::fs::write(root.join("catalog.json"), fx.catalog.to_json()).expect("write catalog");
    oodgen_core::tree::write_tree(root.join("trees/initial_40.json"), &fx.initial)
        .expect("write initial tree");
    oodgen_core::tree::write_tree(root.join("trees/diverse_77.json"), &fx.diverse)
        .expect("write diverse tree");
    oodgen_core::tree::write_tree(root.join("trees/simulatable_22.json"), &fx.simulatable)
        .expect("write simulatable tree");
    std::fs::write(
        root.join("trees/redteam_script.json"),
        serde_json::to_string_pretty(&redteam_script(&fx.session)).expect("script serializes"),
    )
    .expect("write red-team script");

    oodgen_core::generation::write_records(root.join("scenarios_130.jsonl"), &fx.scenarios)
        .expect("write scenarios");
    let caption_lines: Vec<String> = fx
        .captions
        .iter()
        .map(|c| serde_json::to_string(c).expect("caption serializes"))
        .collect();
    std::fs::write(root.join("baseline_captions.jsonl"), caption_lines.join("\n") + "\n")
        .expect("write captions");

    for cfg in golden_configs() {
        let violations = oodgen_core::sim::validate_config(&cfg, &fx.catalog);
        assert!(violations.is_empty(), "{}: {violations:?}", cfg.id);
        cfg.save(root.join(format!("sim/configs/{}.json", cfg.id))).expect("write config");
        let trace = oodgen_core::sim::simulate(&cfg, &fx.catalog, GOLDEN_SEED, &[])
            .expect("golden config simulates");
        trace
            .save(root.join(format!("sim/traces/{}.jsonl", cfg.id)))
            .expect("write trace");
        println!(
            "golden {}: frames={} collisions={}",
            cfg.id,
            trace.frames.len(),
            trace.collisions().count()
        );
    }

    std::fs::write(
        root.join("pipeline/mock_script.json"),
        serde_json::to_string_pretty(&pipeline_script()).expect("script serializes"),
    )
    .expect("write pipeline script");
    std::fs::write(root.join("pipeline/config.toml"), PIPELINE_CONFIG_TOML)
        .expect("write pipeline config");

    let m = compute_metrics(&fx);
    println!("frozen metrics:");
    println!("  scenario_oodness          = {:.6}", m.scenario_oodness);
    println!("  reference_oodness         = {:.6}", m.reference_oodness);
    println!("  gap                       = {:.6}", m.scenario_oodness - m.reference_oodness);
    println!("  scenario_diversity        = {:.6}", m.scenario_diversity);
    println!("  baseline_sample_diversity = {:.6}", m.baseline_sample_diversity);
    assert!(
        m.scenario_oodness - m.reference_oodness >= 0.1,
        "generated corpus must clear the reference by a wide margin"
    );
    assert!(m.scenario_diversity > m.baseline_sample_diversity);
}

// ------------------------------------------------------------ drift checks

#[test]
fn committed_trees_match_generator() {
    let root = fixture_root();
    let fx = build_all();
    let initial =
        oodgen_core::tree::read_tree(root.join("trees/initial_40.json")).expect("initial loads");
    let diverse =
        oodgen_core::tree::read_tree(root.join("trees/diverse_77.json")).expect("diverse loads");
    let simulatable = oodgen_core::tree::read_tree(root.join("trees/simulatable_22.json"))
        .expect("simulatable loads");
    assert_eq!(initial, fx.initial);
    assert_eq!(diverse, fx.diverse);
    assert_eq!(simulatable, fx.simulatable);
}

#[test]
fn committed_redteam_script_replays_onto_initial_tree() {
    let root = fixture_root();
    let initial =
        oodgen_core::tree::read_tree(root.join("trees/initial_40.json")).expect("initial loads");
    let diverse =
        oodgen_core::tree::read_tree(root.join("trees/diverse_77.json")).expect("diverse loads");
    let provider =
        Arc::new(MockProvider::load(root.join("trees/redteam_script.json")).expect("script"));
    let gateway = Gateway::new(provider);
    let prompts = oodgen_core::generation::PromptSet::default();
    let (replayed, logs) = oodgen_core::generation::run_redteam_loop(
        &initial,
        REDTEAM_ITERATIONS,
        &prompts,
        &gateway,
        REDTEAM_SEED,
    )
    .expect("replay succeeds");
    assert_eq!(replayed, diverse);
    assert_eq!(logs.len(), REDTEAM_ITERATIONS);
    assert!(logs.iter().all(|l| !matches!(l.outcome, IterationOutcome::Failed { .. })));
}

#[test]
fn committed_catalog_prunes_diverse_to_simulatable() {
    let root = fixture_root();
    let catalog = AssetCatalog::load(root.join("catalog.json")).expect("catalog loads");
    let diverse =
        oodgen_core::tree::read_tree(root.join("trees/diverse_77.json")).expect("diverse loads");
    let simulatable = oodgen_core::tree::read_tree(root.join("trees/simulatable_22.json"))
        .expect("simulatable loads");
    let pruned = oodgen_core::tree::prune_to_catalog(&diverse, &catalog).expect("prune");
    assert_eq!(pruned, simulatable);
    assert_eq!(pruned.node_count(), 22);
    assert_eq!(pruned.enumerate_paths().expect("valid").len(), 13);
}

#[test]
fn committed_scenarios_cover_every_path_ten_times() {
    let root = fixture_root();
    let records = oodgen_core::generation::read_records(root.join("scenarios_130.jsonl"))
        .expect("records load");
    let simulatable = oodgen_core::tree::read_tree(root.join("trees/simulatable_22.json"))
        .expect("simulatable loads");
    assert_eq!(records.len(), 130);

    let mut per_leaf: BTreeMap<&str, usize> = BTreeMap::new();
    let mut texts = std::collections::BTreeSet::new();
    for r in &records {
        r.validate(&simulatable).expect("record validates");
        let path = r.path.as_ref().expect("fixture records carry their path");
        assert!(simulatable.contains_path(&path.node_ids), "stale path in {}", r.id);
        let expected: Category = simulatable.path_category(path).expect("category");
        assert_eq!(r.category, expected, "category mismatch in {}", r.id);
        *per_leaf.entry(path.leaf_id().as_str()).or_default() += 1;
        assert!(texts.insert(r.text.as_str()), "duplicate text in {}", r.id);
    }
    assert_eq!(per_leaf.len(), 13);
    assert!(per_leaf.values().all(|&n| n == SCENARIOS_PER_LEAF));
}

#[test]
fn committed_baseline_is_large_and_distinct() {
    let root = fixture_root();
    let corpus = oodgen_core::corpus::load_corpus(
        root.join("baseline_captions.jsonl"),
        oodgen_core::corpus::CorpusFormat::Jsonl,
    )
    .expect("baseline loads");
    assert!(corpus.len() >= 500, "got {}", corpus.len());
    let texts: std::collections::BTreeSet<&str> =
        corpus.items.iter().map(|i| i.text.as_str()).collect();
    assert_eq!(texts.len(), corpus.len(), "captions must be distinct");
}

#[test]
fn committed_golden_configs_validate_against_catalog() {
    let root = fixture_root();
    let catalog = AssetCatalog::load(root.join("catalog.json")).expect("catalog loads");
    for cfg in golden_configs() {
        let committed =
            ScenarioConfig::load(root.join(format!("sim/configs/{}.json", cfg.id)))
                .expect("config loads");
        assert_eq!(committed, cfg, "generator drifted from committed {}", cfg.id);
        assert!(oodgen_core::sim::validate_config(&committed, &catalog).is_empty());
    }
}

#[test]
fn committed_pipeline_script_parses() {
    let root = fixture_root();
    let provider =
        MockProvider::load(root.join("pipeline/mock_script.json")).expect("script loads");
    assert_eq!(provider.model_id(), "scripted-pipeline-v1");
    // 3 tree + 3 edits = 6 TreeLlm entries before generation adds 3 more
    assert_eq!(provider.queued(Role::TreeLlm), 9);
    assert_eq!(provider.queued(Role::RedLlm), 3);
    assert_eq!(provider.queued(Role::AugmenterLlm), 6);
    assert_eq!(provider.queued(Role::Vlm), 30);
}

#[test]
fn scenario_paths_use_fixture_tree_shape() {
    // belt-and-braces: every leaf the corpus references sits at depth four
    let fx = build_all();
    let paths = fx.simulatable.enumerate_paths().expect("valid");
    assert!(paths.iter().all(|p: &TreePath| p.node_ids.len() == 4));
}
