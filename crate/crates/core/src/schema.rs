//! Declarative description of the human-defined attributes and the target.
//!
//! Every attribute is either *ordinal* (an integer rating range such as 1 to 5,
//! regressed as a scalar) or *nominal* (an unordered class list, predicted as
//! logits). The same [`Scale`] type describes the target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scale {
    Ordinal { lo: i32, hi: i32 },
    Nominal { classes: Vec<String> },
}

impl Scale {
    pub fn ordinal(lo: i32, hi: i32) -> Self {
        Scale::Ordinal { lo, hi }
    }

    pub fn nominal<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Self {
        Scale::Nominal {
            classes: classes.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_ordinal(&self) -> bool {
        matches!(self, Scale::Ordinal { .. })
    }

    /// Width of the scoring head: one scalar for ordinal, one logit per class for nominal.
    pub fn head_width(&self) -> usize {
        match self {
            Scale::Ordinal { .. } => 1,
            Scale::Nominal { classes } => classes.len(),
        }
    }

    /// Number of distinct attribute values (prototype classes).
    pub fn num_values(&self) -> usize {
        match self {
            Scale::Ordinal { lo, hi } => (hi - lo + 1) as usize,
            Scale::Nominal { classes } => classes.len(),
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            Scale::Ordinal { lo, hi } if lo >= hi => Err(Error::Config(format!(
                "ordinal range requires lo < hi, got {lo}..{hi}"
            ))),
            Scale::Nominal { classes } if classes.len() < 2 => Err(Error::Config(format!(
                "nominal scale needs at least 2 classes, got {}",
                classes.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Checks a label: ordinal labels are reals inside `[lo, hi]` (annotator
    /// means are allowed), nominal labels are integral class ids.
    pub fn validate(&self, label: f64) -> Result<()> {
        match self {
            Scale::Ordinal { lo, hi } => {
                if label.is_finite() && label >= *lo as f64 && label <= *hi as f64 {
                    Ok(())
                } else {
                    Err(Error::Label(format!(
                        "ordinal label {label} outside range {lo}..{hi}"
                    )))
                }
            }
            Scale::Nominal { classes } => {
                if label.fract() == 0.0 && label >= 0.0 && (label as usize) < classes.len() {
                    Ok(())
                } else {
                    Err(Error::Label(format!(
                        "nominal label {label} is not a class id in 0..{}",
                        classes.len()
                    )))
                }
            }
        }
    }

    /// Index `0..num_values()` of the value a label belongs to. Ordinal
    /// labels are rounded to the nearest rating.
    pub fn value_index(&self, label: f64) -> Result<usize> {
        self.validate(label)?;
        Ok(match self {
            Scale::Ordinal { lo, .. } => (label.round() as i32 - lo) as usize,
            Scale::Nominal { .. } => label as usize,
        })
    }

    /// Inverse of [`Scale::value_index`].
    pub fn value_of_index(&self, index: usize) -> f64 {
        match self {
            Scale::Ordinal { lo, .. } => (*lo + index as i32) as f64,
            Scale::Nominal { .. } => index as f64,
        }
    }

    /// Human-readable value: the rating for ordinal, the class name for nominal.
    pub fn display_value(&self, label: f64) -> String {
        match self {
            Scale::Ordinal { .. } => format!("{label:.2}"),
            Scale::Nominal { classes } => classes
                .get(label as usize)
                .cloned()
                .unwrap_or_else(|| format!("#{label}")),
        }
    }

    /// Resolves a class name (nominal) to its id.
    pub fn class_id(&self, name: &str) -> Option<usize> {
        match self {
            Scale::Nominal { classes } => classes.iter().position(|c| c == name),
            Scale::Ordinal { .. } => None,
        }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        match self {
            Scale::Ordinal { lo, hi } => value.clamp(*lo as f64, *hi as f64),
            Scale::Nominal { .. } => value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(flatten)]
    pub scale: Scale,
}

impl Attribute {
    pub fn new(name: impl Into<String>, scale: Scale) -> Self {
        Self {
            name: name.into(),
            scale,
        }
    }
}

/// Ordered list of attributes; the order fixes the attribute index `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct AttributeSchema {
    pub attributes: Vec<Attribute>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let schema = Self { attributes };
        schema.check()?;
        Ok(schema)
    }

    pub fn check(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::Config("attribute schema is empty".into()));
        }
        for (i, attr) in self.attributes.iter().enumerate() {
            if self.attributes[..i].iter().any(|o| o.name == attr.name) {
                return Err(Error::Config(format!(
                    "duplicate attribute name '{}'",
                    attr.name
                )));
            }
            attr.scale
                .check()
                .map_err(|e| Error::Config(format!("attribute '{}': {e}", attr.name)))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Attribute> {
        self.attributes.iter()
    }

    /// The eight LIDC-IDRI appearance ratings.
    pub fn lidc() -> Self {
        let ranges = [
            ("subtlety", 1, 5),
            ("internal_structure", 1, 4),
            ("calcification", 1, 6),
            ("sphericity", 1, 5),
            ("margin", 1, 5),
            ("lobulation", 1, 5),
            ("spiculation", 1, 5),
            ("texture", 1, 5),
        ];
        Self {
            attributes: ranges
                .iter()
                .map(|&(n, lo, hi)| Attribute::new(n, Scale::ordinal(lo, hi)))
                .collect(),
        }
    }

    /// The seven dermoscopic criteria with their native multi-class labels.
    pub fn derm7pt() -> Self {
        let attrs: [(&str, &[&str]); 7] = [
            ("pigment_network", &["absent", "typical", "atypical"]),
            ("blue_whitish_veil", &["absent", "present"]),
            (
                "vascular_structures",
                &[
                    "absent",
                    "arborizing",
                    "comma",
                    "hairpin",
                    "within_regression",
                    "dotted",
                    "linear_irregular",
                ],
            ),
            (
                "pigmentation",
                &[
                    "absent",
                    "diffuse_regular",
                    "localized_regular",
                    "diffuse_irregular",
                    "localized_irregular",
                ],
            ),
            ("streaks", &["absent", "regular", "irregular"]),
            ("dots_and_globules", &["absent", "regular", "irregular"]),
            (
                "regression_structures",
                &["absent", "blue_areas", "white_areas", "combinations"],
            ),
        ];
        Self {
            attributes: attrs
                .iter()
                .map(|(n, c)| Attribute::new(*n, Scale::nominal(c.iter().copied())))
                .collect(),
        }
    }

    /// Generating factors of the synthetic blob dataset.
    pub fn synthetic() -> Self {
        Self {
            attributes: ["roundness", "spike_count", "lobe_count", "texture_noise"]
                .iter()
                .map(|n| Attribute::new(*n, Scale::ordinal(1, 5)))
                .collect(),
        }
    }
}

/// The prediction target and its scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    #[serde(flatten)]
    pub scale: Scale,
}

impl TargetSpec {
    pub fn new(name: impl Into<String>, scale: Scale) -> Self {
        Self {
            name: name.into(),
            scale,
        }
    }

    pub fn malignancy() -> Self {
        Self::new("malignancy", Scale::ordinal(1, 5))
    }

    pub fn diagnosis() -> Self {
        Self::new(
            "diagnosis",
            Scale::nominal([
                "nevus",
                "seborrheic_keratosis",
                "miscellaneous",
                "basal_cell_carcinoma",
                "melanoma",
            ]),
        )
    }
}
