use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}

/// A feature vector with an optional class label and a domain tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub features: Vec<T>,
    pub label: Option<usize>,
    pub domain: Domain,
}

impl<T: Scalar> Sample<T> {
    pub fn labeled(features: Vec<T>, label: usize, domain: Domain) -> Self {
        Self { features, label: Some(label), domain }
    }

    pub fn unlabeled(features: Vec<T>, domain: Domain) -> Self {
        Self { features, label: None, domain }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Checks the sample against a model's input dimension and class count.
    pub fn validate(&self, dim: usize, classes: usize) -> Result<()> {
        if self.features.len() != dim {
            return Err(Error::Shape { expected: dim, got: self.features.len() });
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("sample features must be finite".into()));
        }
        if let Some(y) = self.label {
            if y >= classes {
                return Err(Error::Contract(format!("label {y} out of range for {classes} classes")));
            }
        }
        Ok(())
    }

    /// The label, or a contract error when the sample carries none.
    pub fn require_label(&self) -> Result<usize> {
        self.label.ok_or_else(|| Error::Contract("labeled sample required".into()))
    }

    /// Same features and domain, label stripped.
    pub fn without_label(&self) -> Self {
        Self { features: self.features.clone(), label: None, domain: self.domain }
    }
}
