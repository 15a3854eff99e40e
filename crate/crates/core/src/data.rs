use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{standardize, Standardized};

/// Scalar observations on high-resolution units (customers), each nested in
/// exactly one low-resolution unit (group).
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelDataset {
    values: Vec<f64>,
    group_of: Vec<usize>,
    unit_ids: Vec<String>,
    group_ids: Vec<String>,
    customers_of_group: Vec<Vec<usize>>,
    /// Unit areas (km²) when the values are densities.
    pub areas: Option<Vec<f64>>,
    /// Raw counts behind the densities.
    pub counts: Option<Vec<f64>>,
    /// Set when `values` are z-scores of the original observations.
    pub transform: Option<Transform>,
}

/// Affine map from the modelled scale back to the original scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub mean: f64,
    pub sd: f64,
}

impl Transform {
    pub fn to_original(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

impl TwoLevelDataset {
    pub fn new(
        values: Vec<f64>,
        group_of: Vec<usize>,
        unit_ids: Vec<String>,
        group_ids: Vec<String>,
    ) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Dataset("no units".into()));
        }
        if group_of.len() != n || unit_ids.len() != n {
            return Err(Error::Dataset(format!(
                "length mismatch: {} values, {} group links, {} unit ids",
                n,
                group_of.len(),
                unit_ids.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!(
                "non-finite value for unit {}",
                unit_ids[i]
            )));
        }
        let mut customers_of_group = vec![Vec::new(); group_ids.len()];
        for (c, &g) in group_of.iter().enumerate() {
            let Some(members) = customers_of_group.get_mut(g) else {
                return Err(Error::Dataset(format!(
                    "unit {} points to missing group index {g}",
                    unit_ids[c]
                )));
            };
            members.push(c);
        }
        if let Some(g) = customers_of_group.iter().position(Vec::is_empty) {
            return Err(Error::Dataset(format!("group {} has no units", group_ids[g])));
        }
        Ok(TwoLevelDataset {
            values,
            group_of,
            unit_ids,
            group_ids,
            customers_of_group,
            areas: None,
            counts: None,
            transform: None,
        })
    }

    /// Dataset with generated ids (`g{l}`, `g{l}_u{h}`) from per-group values.
    pub fn from_groups(groups: &[Vec<f64>]) -> Result<Self> {
        let mut values = Vec::new();
        let mut group_of = Vec::new();
        let mut unit_ids = Vec::new();
        for (g, ys) in groups.iter().enumerate() {
            for (h, &y) in ys.iter().enumerate() {
                values.push(y);
                group_of.push(g);
                unit_ids.push(format!("g{g}_u{h}"));
            }
        }
        let group_ids = (0..groups.len()).map(|g| format!("g{g}")).collect();
        Self::new(values, group_of, unit_ids, group_ids)
    }

    pub fn n_customers(&self) -> usize {
        self.values.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_ids.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn customers_of(&self, group: usize) -> &[usize] {
        &self.customers_of_group[group]
    }

    /// Low-resolution data: the average of each group's high-resolution values.
    pub fn group_means(&self) -> Vec<f64> {
        self.customers_of_group
            .iter()
            .map(|cs| cs.iter().map(|&c| self.values[c]).sum::<f64>() / cs.len() as f64)
            .collect()
    }

    /// Values on the original scale (identity when not standardized).
    pub fn original_values(&self) -> Vec<f64> {
        match self.transform {
            Some(t) => self.values.iter().map(|&z| t.to_original(z)).collect(),
            None => self.values.clone(),
        }
    }

    /// Copy of the dataset with z-scored values and the transform recorded.
    pub fn standardized(&self) -> Result<TwoLevelDataset> {
        let Standardized { values, mean, sd } = standardize(&self.original_values())?;
        let mut out = self.clone();
        out.values = values;
        out.transform = Some(Transform { mean, sd });
        Ok(out)
    }

    /// Same structure with different values (e.g. a holdout replicate).
    pub fn with_values(&self, values: Vec<f64>) -> Result<TwoLevelDataset> {
        if values.len() != self.values.len() {
            return Err(Error::LengthMismatch(values.len(), self.values.len()));
        }
        let mut out = self.clone();
        out.values = values;
        out.transform = None;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_group_and_bad_links() {
        let err = TwoLevelDataset::new(
            vec![1.0, 2.0],
            vec![0, 0],
            vec!["a".into(), "b".into()],
            vec!["G".into(), "H".into()],
        );
        assert!(err.is_err());
        let err = TwoLevelDataset::new(
            vec![1.0],
            vec![3],
            vec!["a".into()],
            vec!["G".into()],
        );
        assert!(err.is_err());
        let err = TwoLevelDataset::new(
            vec![f64::NAN],
            vec![0],
            vec!["a".into()],
            vec!["G".into()],
        );
        assert!(err.is_err());
    }

    #[test]
    fn group_means_average_members() {
        let d = TwoLevelDataset::from_groups(&[vec![1.0, 3.0], vec![5.0]]).unwrap();
        assert_eq!(d.group_means(), vec![2.0, 5.0]);
        assert_eq!(d.customers_of(0), &[0, 1]);
    }

    #[test]
    fn standardized_round_trips() {
        let d = TwoLevelDataset::from_groups(&[vec![10.0, 30.0], vec![50.0, 20.0]]).unwrap();
        let s = d.standardized().unwrap();
        for (a, b) in s.original_values().iter().zip(d.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        let flat = TwoLevelDataset::from_groups(&[vec![1.0, 1.0], vec![1.0]]).unwrap();
        assert!(flat.standardized().is_err());
    }
}
