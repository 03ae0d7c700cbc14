use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Annotation dimension, coarsest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Type,
    Brand,
    Logo,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Type, Level::Brand, Level::Logo];

    pub fn name(self) -> &'static str {
        match self {
            Level::Type => "type",
            Level::Brand => "brand",
            Level::Logo => "logo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelTriple {
    pub type_id: u32,
    pub brand_id: u32,
    pub logo_id: u32,
}

impl LabelTriple {
    pub fn new(type_id: u32, brand_id: u32, logo_id: u32) -> Self {
        Self {
            type_id,
            brand_id,
            logo_id,
        }
    }

    pub fn at(&self, level: Level) -> u32 {
        match level {
            Level::Type => self.type_id,
            Level::Brand => self.brand_id,
            Level::Logo => self.logo_id,
        }
    }
}

/// Tree mapping each logo to one brand and each brand to one type.
///
/// The two maps are the only structure, so every logo has exactly one parent
/// chain and the graph is a forest by construction. File format: one logo
/// per line, `logo_id,brand_id,type_id[,logo_name[,brand_name[,type_name]]]`,
/// `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    logo_to_brand: BTreeMap<u32, u32>,
    brand_to_type: BTreeMap<u32, u32>,
    logo_names: BTreeMap<u32, String>,
    brand_names: BTreeMap<u32, String>,
    type_names: BTreeMap<u32, String>,
}

impl Taxonomy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_brand(&mut self, brand_id: u32, type_id: u32) -> Result<()> {
        match self.brand_to_type.get(&brand_id) {
            Some(&t) if t != type_id => Err(Error::Taxonomy(format!(
                "brand {brand_id} already belongs to type {t}, cannot move to type {type_id}"
            ))),
            _ => {
                self.brand_to_type.insert(brand_id, type_id);
                Ok(())
            }
        }
    }

    /// The brand must already be registered.
    pub fn insert_logo(&mut self, logo_id: u32, brand_id: u32) -> Result<()> {
        if !self.brand_to_type.contains_key(&brand_id) {
            return Err(Error::Taxonomy(format!(
                "logo {logo_id} refers to unknown brand {brand_id}"
            )));
        }
        match self.logo_to_brand.get(&logo_id) {
            Some(&b) if b != brand_id => Err(Error::Taxonomy(format!(
                "logo {logo_id} already belongs to brand {b}, cannot move to brand {brand_id}"
            ))),
            _ => {
                self.logo_to_brand.insert(logo_id, brand_id);
                Ok(())
            }
        }
    }

    pub fn insert(&mut self, label: LabelTriple) -> Result<()> {
        self.insert_brand(label.brand_id, label.type_id)?;
        self.insert_logo(label.logo_id, label.brand_id)
    }

    pub fn set_name(&mut self, level: Level, id: u32, name: impl Into<String>) {
        let map = match level {
            Level::Type => &mut self.type_names,
            Level::Brand => &mut self.brand_names,
            Level::Logo => &mut self.logo_names,
        };
        map.insert(id, name.into());
    }

    pub fn name(&self, level: Level, id: u32) -> Option<&str> {
        match level {
            Level::Type => self.type_names.get(&id),
            Level::Brand => self.brand_names.get(&id),
            Level::Logo => self.logo_names.get(&id),
        }
        .map(String::as_str)
    }

    pub fn brand_of(&self, logo_id: u32) -> Option<u32> {
        self.logo_to_brand.get(&logo_id).copied()
    }

    pub fn type_of(&self, brand_id: u32) -> Option<u32> {
        self.brand_to_type.get(&brand_id).copied()
    }

    /// Full label chain for a logo.
    pub fn resolve(&self, logo_id: u32) -> Option<LabelTriple> {
        let brand_id = self.brand_of(logo_id)?;
        let type_id = self.type_of(brand_id)?;
        Some(LabelTriple::new(type_id, brand_id, logo_id))
    }

    pub fn check(&self, label: &LabelTriple) -> Result<()> {
        match self.resolve(label.logo_id) {
            None => Err(Error::Taxonomy(format!("unknown logo {}", label.logo_id))),
            Some(expected) if expected != *label => Err(Error::Taxonomy(format!(
                "label (type {}, brand {}, logo {}) disagrees with taxonomy (type {}, brand {})",
                label.type_id,
                label.brand_id,
                label.logo_id,
                expected.type_id,
                expected.brand_id
            ))),
            Some(_) => Ok(()),
        }
    }

    /// Adds every entry of `other`; on conflict `self` is left untouched.
    pub fn merge(&mut self, other: &Taxonomy) -> Result<()> {
        let mut merged = self.clone();
        for (&brand, &ty) in &other.brand_to_type {
            merged.insert_brand(brand, ty)?;
        }
        for (&logo, &brand) in &other.logo_to_brand {
            merged.insert_logo(logo, brand)?;
        }
        for (level, map) in [
            (Level::Type, &other.type_names),
            (Level::Brand, &other.brand_names),
            (Level::Logo, &other.logo_names),
        ] {
            for (&id, name) in map {
                merged.set_name(level, id, name.clone());
            }
        }
        *self = merged;
        Ok(())
    }

    pub fn logos(&self) -> impl Iterator<Item = u32> + '_ {
        self.logo_to_brand.keys().copied()
    }

    pub fn num_logos(&self) -> usize {
        self.logo_to_brand.len()
    }

    pub fn num_brands(&self) -> usize {
        self.brand_to_type.len()
    }

    pub fn num_types(&self) -> usize {
        let mut types: Vec<u32> = self.brand_to_type.values().copied().collect();
        types.sort_unstable();
        types.dedup();
        types.len()
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut tax = Taxonomy::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                message,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 3 || fields.len() > 6 {
                return Err(parse_err(format!(
                    "expected 3 to 6 comma-separated fields, found {}",
                    fields.len()
                )));
            }
            let mut ids = [0u32; 3];
            for (slot, field) in ids.iter_mut().zip(&fields) {
                *slot = field
                    .parse()
                    .map_err(|_| parse_err(format!("`{field}` is not a non-negative integer")))?;
            }
            let [logo, brand, ty] = ids;
            tax.insert(LabelTriple::new(ty, brand, logo))
                .map_err(|e| parse_err(e.to_string()))?;
            for (field, (level, id)) in fields[3..]
                .iter()
                .zip([(Level::Logo, logo), (Level::Brand, brand), (Level::Type, ty)])
            {
                if !field.is_empty() {
                    tax.set_name(level, id, *field);
                }
            }
        }
        Ok(tax)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# logo_id,brand_id,type_id,logo_name,brand_name,type_name\n");
        for (&logo, &brand) in &self.logo_to_brand {
            let ty = self.brand_to_type[&brand];
            let _ = write!(out, "{logo},{brand},{ty}");
            let names = [
                self.name(Level::Logo, logo),
                self.name(Level::Brand, brand),
                self.name(Level::Type, ty),
            ];
            if names.iter().any(Option::is_some) {
                for n in names {
                    let _ = write!(out, ",{}", n.unwrap_or(""));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
