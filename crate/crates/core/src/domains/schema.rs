use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
}

/// Ordered environmental attributes and their allowed values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

pub const TIME: &str = "time";
pub const WEATHER: &str = "weather";
pub const SCENE: &str = "scene";

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        for (i, a) in attributes.iter().enumerate() {
            if a.values.is_empty() {
                return Err(Error::InvalidArgument(format!("attribute {:?} has no values", a.name)));
            }
            if attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::InvalidArgument(format!("duplicate attribute {:?}", a.name)));
            }
            for (j, v) in a.values.iter().enumerate() {
                if a.values[..j].contains(v) {
                    return Err(Error::InvalidArgument(format!("duplicate value {v:?} in {:?}", a.name)));
                }
            }
        }
        Ok(Self { attributes })
    }

    /// time ∈ {day, night}, weather ∈ {clear, fog, rain}, scene ∈ {plain, textured}.
    pub fn driving() -> Self {
        let attr = |name: &str, values: &[&str]| Attribute {
            name: name.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        };
        Self::new(vec![
            attr(TIME, &["day", "night"]),
            attr(WEATHER, &["clear", "fog", "rain"]),
            attr(SCENE, &["plain", "textured"]),
        ])
        .expect("static schema is valid")
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.attributes.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn value_index(&self, attr: usize, value: &str) -> Result<usize> {
        self.attributes[attr]
            .values
            .iter()
            .position(|v| v == value)
            .ok_or_else(|| Error::InvalidArgument(format!("{value:?} is not a value of {:?}", self.attributes[attr].name)))
    }

    pub fn value_name(&self, attr: usize, value: usize) -> &str {
        &self.attributes[attr].values[value]
    }

    /// Number of attribute tuples: the product of every value-set cardinality.
    pub fn domain_count(&self) -> usize {
        self.attributes.iter().map(|a| a.values.len()).product()
    }

    /// Every value-index tuple in lexicographic order.
    pub fn all_tuples(&self) -> Vec<Vec<usize>> {
        self.attributes.iter().fold(vec![Vec::new()], |acc, a| {
            acc.into_iter()
                .flat_map(|prefix| {
                    (0..a.values.len()).map(move |v| {
                        let mut t = prefix.clone();
                        t.push(v);
                        t
                    })
                })
                .collect()
        })
    }

    pub fn resolve_keys<S: AsRef<str>>(&self, keys: &[S]) -> Result<Vec<usize>> {
        let mut idx = Vec::with_capacity(keys.len());
        for k in keys {
            let i = self.index_of(k.as_ref())?;
            if idx.contains(&i) {
                return Err(Error::InvalidArgument(format!("attribute {:?} listed twice", k.as_ref())));
            }
            idx.push(i);
        }
        Ok(idx)
    }

    pub fn check_attrs(&self, attrs: &[usize]) -> Result<()> {
        if attrs.len() != self.attributes.len() {
            return Err(Error::shape("attribute tuple", self.attributes.len(), attrs.len()));
        }
        for (a, &v) in self.attributes.iter().zip(attrs) {
            if v >= a.values.len() {
                return Err(Error::InvalidArgument(format!("value index {v} out of range for {:?}", a.name)));
            }
        }
        Ok(())
    }
}
