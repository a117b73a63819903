use std::collections::HashSet;

use crate::{Error, Result};

/// Label value meaning "no annotation".
pub const IGNORE_ID: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub id: u8,
    pub name: String,
    pub color: [u8; 3],
}

/// Ordered land-cover class list. Ids are contiguous from zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSchema {
    name: String,
    classes: Vec<ClassInfo>,
}

const OEM_CLASSES: [(&str, [u8; 3]); 8] = [
    ("bareland", [128, 0, 0]),
    ("rangeland", [0, 255, 36]),
    ("developed space", [148, 148, 148]),
    ("road", [255, 255, 255]),
    ("tree", [34, 97, 38]),
    ("water", [0, 69, 255]),
    ("agricultural land", [75, 181, 73]),
    ("building", [222, 31, 7]),
];

impl ClassSchema {
    pub fn new(name: impl Into<String>, classes: Vec<(String, [u8; 3])>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::Schema("at least two classes are required".into()));
        }
        if classes.len() > IGNORE_ID as usize {
            return Err(Error::Schema(format!(
                "{} classes exceed the u8 id space",
                classes.len()
            )));
        }
        let mut seen = HashSet::new();
        for (n, _) in &classes {
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate class name {n:?}")));
            }
        }
        let classes = classes
            .into_iter()
            .enumerate()
            .map(|(i, (name, color))| ClassInfo {
                id: i as u8,
                name,
                color,
            })
            .collect();
        Ok(Self {
            name: name.into(),
            classes,
        })
    }

    /// The eight OpenEarthMap classes.
    pub fn oem8() -> Self {
        let classes = OEM_CLASSES
            .iter()
            .map(|(n, c)| (n.to_string(), *c))
            .collect();
        Self::new("oem8", classes).expect("static schema is valid")
    }

    /// OpenEarthMap classes plus a trailing "others" class.
    pub fn oem9() -> Self {
        let mut classes: Vec<_> = OEM_CLASSES
            .iter()
            .map(|(n, c)| (n.to_string(), *c))
            .collect();
        classes.push(("others".to_string(), [255, 255, 0]));
        Self::new("oem9", classes).expect("static schema is valid")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "oem8" => Ok(Self::oem8()),
            "oem9" => Ok(Self::oem9()),
            other => Err(Error::Schema(format!("unknown schema {other:?}"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of classes.
    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn ignore_id(&self) -> u8 {
        IGNORE_ID
    }

    pub fn contains(&self, id: u8) -> bool {
        (id as usize) < self.classes.len()
    }

    pub fn check(&self, id: u8) -> Result<u8> {
        if self.contains(id) {
            Ok(id)
        } else {
            Err(Error::InvalidClass(id))
        }
    }

    pub fn class(&self, id: u8) -> Option<&ClassInfo> {
        self.classes.get(id as usize)
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oem8_order_and_ids() {
        let s = ClassSchema::oem8();
        assert_eq!(s.k(), 8);
        assert_eq!(s.class(0).unwrap().name, "bareland");
        assert_eq!(s.id_of("building"), Some(7));
        assert_eq!(s.id_of("water"), Some(5));
        assert!(!s.contains(IGNORE_ID));
        assert_eq!(ClassSchema::oem9().id_of("others"), Some(8));
    }

    #[test]
    fn rejects_bad_schemas() {
        assert!(ClassSchema::new("x", vec![("a".into(), [0; 3])]).is_err());
        assert!(ClassSchema::new("x", vec![("a".into(), [0; 3]), ("a".into(), [1; 3])]).is_err());
        assert!(ClassSchema::by_name("nope").is_err());
    }
}
