use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FgttError, Result};

pub const NUM_CLASSES: usize = 3;

/// Manner of collision, the classification target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CrashType {
    RearEnd,
    Sideswipe,
    Angle,
}

impl CrashType {
    pub const ALL: [CrashType; NUM_CLASSES] = [CrashType::RearEnd, CrashType::Sideswipe, CrashType::Angle];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CrashType::RearEnd => "Rear-end",
            CrashType::Sideswipe => "Sideswipe",
            CrashType::Angle => "Angle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s.trim()))
    }
}

/// Semantic feature groups; each becomes one token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureGroup {
    Event,
    Traffic,
    Environment,
    Pavement,
    Driver,
    Contextual,
    Geometric,
    Vehicle,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 8] = [
        FeatureGroup::Event,
        FeatureGroup::Traffic,
        FeatureGroup::Environment,
        FeatureGroup::Pavement,
        FeatureGroup::Driver,
        FeatureGroup::Contextual,
        FeatureGroup::Geometric,
        FeatureGroup::Vehicle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Event => "Event",
            FeatureGroup::Traffic => "Traffic",
            FeatureGroup::Environment => "Environment",
            FeatureGroup::Pavement => "Pavement",
            FeatureGroup::Driver => "Driver",
            FeatureGroup::Contextual => "Contextual",
            FeatureGroup::Geometric => "Geometric",
            FeatureGroup::Vehicle => "Vehicle",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    pub group: FeatureGroup,
}

impl FeatureSpec {
    pub fn numeric(name: &str, group: FeatureGroup) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Numeric,
            categories: Vec::new(),
            group,
        }
    }

    pub fn categorical(name: &str, categories: &[&str], group: FeatureGroup) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: categories.iter().map(|c| c.to_string()).collect(),
            group,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == FeatureKind::Numeric
    }

    pub fn category_index(&self, value: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == value)
    }
}

fn default_label() -> String {
    "Crash_type".into()
}

/// Declared features, ingestion-only auxiliary columns and the label column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    /// Columns read from input files but never encoded (grouping keys for
    /// imputation).
    #[serde(default)]
    pub auxiliary: Vec<String>,
    #[serde(default = "default_label")]
    pub label: String,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, auxiliary: Vec<String>) -> Result<Self> {
        let s = FeatureSchema {
            features,
            auxiliary,
            label: default_label(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for name in self
            .features
            .iter()
            .map(|f| f.name.as_str())
            .chain(self.auxiliary.iter().map(String::as_str))
            .chain(std::iter::once(self.label.as_str()))
        {
            if !seen.insert(name) {
                return Err(FgttError::Config(format!("duplicate column name {name:?}")));
            }
        }
        for f in &self.features {
            match f.kind {
                FeatureKind::Categorical => {
                    if f.categories.len() < 2 {
                        return Err(FgttError::Config(format!(
                            "categorical feature {} needs at least 2 categories",
                            f.name
                        )));
                    }
                    let distinct: HashSet<&String> = f.categories.iter().collect();
                    if distinct.len() != f.categories.len() {
                        return Err(FgttError::Config(format!("duplicate category in {}", f.name)));
                    }
                }
                FeatureKind::Numeric => {
                    if !f.categories.is_empty() {
                        return Err(FgttError::Config(format!(
                            "numeric feature {} declares categories",
                            f.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn numeric_count(&self) -> usize {
        self.features.iter().filter(|f| f.is_numeric()).count()
    }

    pub fn categorical_count(&self) -> usize {
        self.features.len() - self.numeric_count()
    }

    /// Width of the encoded matrix: one column per numeric feature plus one
    /// per declared category.
    pub fn encoded_width(&self) -> usize {
        self.features
            .iter()
            .map(|f| if f.is_numeric() { 1 } else { f.categories.len() })
            .sum()
    }

    /// Hex SHA-256 of the canonical JSON form; checkpoints pin it.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FgttError::io(path, e))?;
        let schema: FeatureSchema = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| FgttError::Config(e.to_string()))?
        };
        schema.validate()?;
        Ok(schema)
    }

    /// The 33-feature crash schema: 14 numeric and 19 categorical features,
    /// each assigned to one of the eight groups, plus the `Date_element`
    /// per-day key used only for precipitation imputation.
    pub fn crash_default() -> Self {
        use FeatureGroup::*;
        let safety = ["Lap/Shoulder Belt/Helmet Used", "Unknown", "None Used"];
        let vehicle = [
            "Passenger Car/Pickup/Van/SUV",
            "Truck/Trailer",
            "Unknown",
            "Other",
            "Motorcycle/Bicycle/ATV",
        ];
        let ages = ["Under 25", "25-34", "35-44", "45-54", "55 and up"];
        let features = vec![
            FeatureSpec::categorical(
                "City",
                &["Atlanta", "Metro Area Outside of Atlanta", "Unincorporated"],
                Contextual,
            ),
            FeatureSpec::categorical(
                "Crash_location",
                &[
                    "On Roadway - Non-Intersection",
                    "On Roadway - Crossing/Intersection/Crosswalk/Roundabout",
                    "Entrance/Exit Ramp",
                    "Private Property/Off Roadway",
                    "Shoulder/Median/Gore",
                ],
                Event,
            ),
            FeatureSpec::categorical(
                "Lighting",
                &["Daylight", "Dark-Lighted", "Dark-Not Lighted", "Dawn", "Dusk"],
                Environment,
            ),
            FeatureSpec::categorical("Surface", &["Dry", "Wet/Snow/Ice"], Pavement),
            FeatureSpec::categorical("Driver1_safety_equip", &safety, Driver),
            FeatureSpec::categorical("Driver2_safety_equip", &safety, Driver),
            FeatureSpec::categorical("Veh1_type", &vehicle, Vehicle),
            FeatureSpec::categorical("Veh2_type", &vehicle, Vehicle),
            FeatureSpec::categorical(
                "Veh1_maneuver",
                &[
                    "Straight",
                    "Changing Lanes/Passing",
                    "Negotiating a Curve",
                    "Turning (left, right, u-turn)",
                    "Other",
                    "Backing",
                    "Stopped/Parked",
                    "Entering/Leaving Parking/Driveway",
                ],
                Event,
            ),
            FeatureSpec::categorical("Road_composition", &["Black Top", "Concrete/Other"], Pavement),
            FeatureSpec::categorical(
                "Trafficway_layout",
                &[
                    "Two-Way Trafficway With A Physical Barrier/Separation",
                    "One-Way Trafficway",
                    "Two-Way Trafficway With No Physical Barrier/Separation",
                    "Continuous Turning Lane",
                ],
                Geometric,
            ),
            FeatureSpec::numeric("Wind_speed", Environment),
            FeatureSpec::numeric("Gust", Environment),
            FeatureSpec::numeric("Precip_rate", Environment),
            FeatureSpec::numeric("Precip_accum", Environment),
            FeatureSpec::numeric("Hourly_truck_ratio", Traffic),
            FeatureSpec::numeric("Hourly_volume", Traffic),
            FeatureSpec::numeric("Hourly_avg_speed", Traffic),
            FeatureSpec::numeric("IRI_avg", Pavement),
            FeatureSpec::numeric("Rut_avg", Pavement),
            FeatureSpec::numeric("Faulting_avg_3d", Pavement),
            FeatureSpec::numeric("Heading_angle", Geometric),
            FeatureSpec::numeric("Percent_grade", Pavement),
            FeatureSpec::numeric("Cross_section_slope", Pavement),
            FeatureSpec::numeric("Crack_percentage", Pavement),
            FeatureSpec::categorical(
                "Day_of_week",
                &[
                    "Monday",
                    "Tuesday",
                    "Wednesday",
                    "Thursday",
                    "Friday",
                    "Saturday",
                    "Sunday",
                ],
                Contextual,
            ),
            FeatureSpec::categorical("Driver1_agerange", &ages, Driver),
            FeatureSpec::categorical("Driver2_agerange", &ages, Driver),
            FeatureSpec::categorical("Curvature", &["A", "B", "C or more"], Geometric),
            FeatureSpec::categorical(
                "Facility_type",
                &[
                    "Interstate",
                    "Principal Arterial - Other",
                    "Minor Arterial",
                    "Principal Arterial - Other Freeways and Expressways",
                ],
                Geometric,
            ),
            FeatureSpec::categorical("Area_type", &["Urban", "Rural"], Geometric),
            FeatureSpec::categorical("Num_lanes", &["2", "3", "4", "5", "6", "7"], Geometric),
            FeatureSpec::categorical(
                "Time_of_day",
                &[
                    "Early morning",
                    "Peak morning",
                    "Midday",
                    "Peak afternoon",
                    "Late evening",
                ],
                Contextual,
            ),
        ];
        FeatureSchema {
            features,
            auxiliary: vec!["Date_element".into()],
            label: default_label(),
        }
    }
}

/// Grouping keys used by the default imputation rules.
pub const PRECIP_GROUPING: [&str; 2] = ["City", "Date_element"];
pub const SPEED_GROUPING: [&str; 5] = ["Num_lanes", "Day_of_week", "Facility_type", "Area_type", "Time_of_day"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_shape() {
        let s = FeatureSchema::crash_default();
        s.validate().unwrap();
        assert_eq!(s.features.len(), 33);
        assert_eq!(s.numeric_count(), 14);
        assert_eq!(s.categorical_count(), 19);
        assert_eq!(s.encoded_width(), 96);
    }

    #[test]
    fn default_groups_match_table() {
        let s = FeatureSchema::crash_default();
        let members = |g: FeatureGroup| -> Vec<&str> {
            let mut v: Vec<&str> = s
                .features
                .iter()
                .filter(|f| f.group == g)
                .map(|f| f.name.as_str())
                .collect();
            v.sort();
            v
        };
        assert_eq!(members(FeatureGroup::Event), ["Crash_location", "Veh1_maneuver"]);
        assert_eq!(
            members(FeatureGroup::Traffic),
            ["Hourly_avg_speed", "Hourly_truck_ratio", "Hourly_volume"]
        );
        assert_eq!(
            members(FeatureGroup::Environment),
            ["Gust", "Lighting", "Precip_accum", "Precip_rate", "Wind_speed"]
        );
        assert_eq!(members(FeatureGroup::Pavement).len(), 8);
        assert_eq!(members(FeatureGroup::Driver).len(), 4);
        assert_eq!(
            members(FeatureGroup::Contextual),
            ["City", "Day_of_week", "Time_of_day"]
        );
        assert_eq!(members(FeatureGroup::Geometric).len(), 6);
        assert_eq!(members(FeatureGroup::Vehicle), ["Veh1_type", "Veh2_type"]);
    }

    #[test]
    fn validation_rejects_bad_schemas() {
        let dup = FeatureSchema::new(
            vec![
                FeatureSpec::numeric("a", FeatureGroup::Event),
                FeatureSpec::numeric("a", FeatureGroup::Event),
            ],
            vec![],
        );
        assert!(dup.is_err());
        let one_cat = FeatureSchema::new(
            vec![FeatureSpec::categorical("c", &["only"], FeatureGroup::Event)],
            vec![],
        );
        assert!(one_cat.is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = FeatureSchema::crash_default();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.features[0].categories.swap(0, 1);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn toml_round_trip() {
        let s = FeatureSchema::crash_default();
        let text = toml::to_string(&s).unwrap();
        let back: FeatureSchema = toml::from_str(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn crash_type_names() {
        for c in CrashType::ALL {
            assert_eq!(CrashType::parse(c.name()), Some(c));
            assert_eq!(CrashType::from_id(c.id()), Some(c));
        }
        assert_eq!(CrashType::parse("head-on"), None);
    }
}
