use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Hard-coded map from adversarial labels to disjoint, non-empty sets of
/// host labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct LabelMap {
    assignments: Vec<Vec<usize>>,
}

impl LabelMap {
    pub fn new(assignments: Vec<Vec<usize>>) -> Result<Self> {
        if assignments.is_empty() {
            return Err(Error::LabelMap("no adversarial labels".into()));
        }
        let mut seen = BTreeSet::new();
        for (y, set) in assignments.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::LabelMap(format!("adversarial label {y} has no host labels")));
            }
            for &h in set {
                if !seen.insert(h) {
                    return Err(Error::LabelMap(format!(
                        "host label {h} assigned more than once (again for adversarial label {y})"
                    )));
                }
            }
        }
        Ok(LabelMap { assignments })
    }

    /// `y -> {y}` for the first `classes` host labels.
    pub fn identity(classes: usize) -> Self {
        LabelMap {
            assignments: (0..classes).map(|y| vec![y]).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.assignments.len()
    }

    pub fn host_labels(&self, y_adv: usize) -> Result<&[usize]> {
        self.assignments.get(y_adv).map(Vec::as_slice).ok_or(Error::LabelRange {
            label: y_adv,
            classes: self.assignments.len(),
        })
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// Checks every referenced host label is below `num_labels`.
    pub fn validate_for(&self, num_labels: usize) -> Result<()> {
        match self.assignments.iter().flatten().find(|&&h| h >= num_labels) {
            Some(&h) => Err(Error::LabelMap(format!(
                "host label {h} out of range for a model with {num_labels} labels"
            ))),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<Vec<usize>>> for LabelMap {
    type Error = Error;

    fn try_from(value: Vec<Vec<usize>>) -> Result<Self> {
        LabelMap::new(value)
    }
}

impl From<LabelMap> for Vec<Vec<usize>> {
    fn from(map: LabelMap) -> Self {
        map.assignments
    }
}

/// Text form: one group per adversarial label, groups separated by `,`,
/// host labels inside a group by `+`. `"0,1,2+5"` maps 2 to {2, 5}.
impl FromStr for LabelMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let groups = s
            .split(',')
            .map(|group| {
                group
                    .split('+')
                    .map(|h| {
                        h.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::LabelMap(format!("bad host label `{h}` in `{s}`")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        LabelMap::new(groups)
    }
}

impl fmt::Display for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let groups: Vec<String> = self
            .assignments
            .iter()
            .map(|set| set.iter().map(usize::to_string).collect::<Vec<_>>().join("+"))
            .collect();
        f.write_str(&groups.join(","))
    }
}

/// Total host probability assigned to `y_adv`'s host labels.
pub fn mapped_probability<T: Real>(probs: &Tensor<T>, map: &LabelMap, y_adv: usize) -> Result<f64> {
    let set = map.host_labels(y_adv)?;
    let probs = probs.data();
    set.iter()
        .map(|&h| {
            probs.get(h).map(|p| p.as_f64()).ok_or(Error::LabelRange {
                label: h,
                classes: probs.len(),
            })
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjointness_enforced() {
        assert!(LabelMap::new(vec![vec![0], vec![1, 0]]).is_err());
        assert!(LabelMap::new(vec![vec![0], vec![]]).is_err());
        assert!(LabelMap::new(vec![]).is_err());
        assert!("0,1+0".parse::<LabelMap>().is_err());
        assert!(serde_json::from_str::<LabelMap>("[[0],[0]]").is_err());
    }

    #[test]
    fn text_round_trip() {
        let map: LabelMap = "3,1+7,0".parse().unwrap();
        assert_eq!(map.assignments(), &[vec![3], vec![1, 7], vec![0]]);
        assert_eq!(map.to_string(), "3,1+7,0");
        assert!(map.validate_for(8).is_ok());
        assert!(map.validate_for(7).is_err());
    }

    #[test]
    fn mapped_probability_cases() {
        let uniform = Tensor::full(vec![10], 0.1f64);
        let id = LabelMap::identity(10);
        for y in 0..10 {
            assert!((mapped_probability(&uniform, &id, y).unwrap() - 0.1).abs() < 1e-15);
        }
        assert!(matches!(
            mapped_probability(&uniform, &id, 10),
            Err(Error::LabelRange { label: 10, .. })
        ));

        let mut onehot = Tensor::zeros(vec![10]);
        onehot.data_mut()[5] = 1.0f64;
        let map = LabelMap::new(vec![vec![2, 5], vec![0]]).unwrap();
        assert_eq!(mapped_probability(&onehot, &map, 0).unwrap(), 1.0);

        let probs = Tensor::new(vec![5], vec![0.2f64, 0.3, 0.1, 0.25, 0.15]).unwrap();
        let map = LabelMap::new(vec![vec![0, 1, 2], vec![3, 4]]).unwrap();
        assert!((mapped_probability(&probs, &map, 0).unwrap() - 0.6).abs() < 1e-12);
    }
}
