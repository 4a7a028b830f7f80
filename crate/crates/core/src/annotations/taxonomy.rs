//! The 11-class hard-drive component taxonomy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_json};

pub const PLATTER: u8 = 0;
pub const SPINDLE_MOTOR_HUB: u8 = 1;
pub const TOP_PLATE: u8 = 2;
pub const READ_WRITE_HEAD: u8 = 3;
pub const BEARING: u8 = 4;
pub const LANDING_TRAY: u8 = 5;
pub const PCB: u8 = 6;
pub const MAGNET: u8 = 7;
pub const SATA_CONNECTOR: u8 = 8;
pub const SATA_POWER_CONNECTOR: u8 = 9;
pub const SCREW: u8 = 10;

pub const NUM_CLASSES: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "Mechanical & Moving")]
    MechanicalMoving,
    #[serde(rename = "Electronics & Interfaces")]
    ElectronicsInterfaces,
    #[serde(rename = "Fasteners")]
    Fasteners,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyClass {
    pub id: u8,
    pub name: String,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    classes: Vec<TaxonomyClass>,
}

const HDD_CLASSES: [(&str, Category); NUM_CLASSES] = [
    ("Platter", Category::MechanicalMoving),
    ("Spindle Motor Hub", Category::MechanicalMoving),
    ("Top Plate", Category::MechanicalMoving),
    ("Read-Write-Head", Category::MechanicalMoving),
    ("Bearing", Category::MechanicalMoving),
    ("Landing Tray", Category::MechanicalMoving),
    ("PCB", Category::ElectronicsInterfaces),
    ("Magnet", Category::ElectronicsInterfaces),
    ("SATA Connector", Category::ElectronicsInterfaces),
    ("SATA Power Connector", Category::ElectronicsInterfaces),
    ("Screw", Category::Fasteners),
];

impl Default for Taxonomy {
    fn default() -> Self {
        Self::hdd()
    }
}

impl Taxonomy {
    pub fn hdd() -> Self {
        Self {
            classes: HDD_CLASSES
                .iter()
                .enumerate()
                .map(|(id, (name, category))| TaxonomyClass {
                    id: id as u8,
                    name: name.to_string(),
                    category: *category,
                })
                .collect(),
        }
    }

    /// Validates dense, unique ids starting at zero.
    pub fn new(mut classes: Vec<TaxonomyClass>) -> Result<Self> {
        classes.sort_by_key(|c| c.id);
        for (i, c) in classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::Validation(format!(
                    "taxonomy ids must be dense and unique from 0; found {} at position {i}",
                    c.id
                )));
            }
        }
        if classes.is_empty() || classes.len() > 255 {
            return Err(Error::Validation("taxonomy must have 1..=255 classes".into()));
        }
        Ok(Self { classes })
    }

    pub fn classes(&self) -> &[TaxonomyClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.classes.get(id as usize).map(|c| c.name.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn platter(&self) -> Option<u8> {
        self.id_of("Platter")
    }

    pub fn screw(&self) -> Option<u8> {
        self.id_of("Screw")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let classes: Vec<TaxonomyClass> = serde_json::from_str(&text).map_err(|e| {
            Error::format(path.display().to_string(), Some(format!("line {}", e.line())), e.to_string())
        })?;
        Self::new(classes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.classes)
    }
}

/// Display color per class id; unlabeled points are gray.
pub fn class_color(id: u8) -> [u8; 3] {
    const PALETTE: [[u8; 3]; NUM_CLASSES] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
        [0, 128, 128],
    ];
    PALETTE.get(id as usize).copied().unwrap_or([128, 128, 128])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hdd_taxonomy_matches_table() {
        let t = Taxonomy::hdd();
        assert_eq!(t.len(), 11);
        assert_eq!(t.name(PLATTER), Some("Platter"));
        assert_eq!(t.name(SCREW), Some("Screw"));
        assert_eq!(t.name(PCB), Some("PCB"));
        assert_eq!(t.id_of("SATA Power Connector"), Some(SATA_POWER_CONNECTOR));
        let fasteners: Vec<_> = t.classes().iter().filter(|c| c.category == Category::Fasteners).collect();
        assert_eq!(fasteners.len(), 1);
        let mech = t.classes().iter().filter(|c| c.category == Category::MechanicalMoving).count();
        assert_eq!(mech, 6);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("taxonomy.json");
        Taxonomy::hdd().save(&p).unwrap();
        assert_eq!(Taxonomy::load(&p).unwrap(), Taxonomy::hdd());
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"Mechanical & Moving\""));
    }

    #[test]
    fn sparse_ids_rejected() {
        let classes = vec![
            TaxonomyClass { id: 0, name: "a".into(), category: Category::Fasteners },
            TaxonomyClass { id: 2, name: "b".into(), category: Category::Fasteners },
        ];
        assert!(Taxonomy::new(classes).is_err());
    }
}
