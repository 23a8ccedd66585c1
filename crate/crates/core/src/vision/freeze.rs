//! Prefix freezing over ordered parameter groups.
//!
//! The freeze fraction counts feature-extractor parameters, not layers: the
//! frozen set is the longest prefix of feature-extractor groups whose
//! cumulative size stays within `fraction * total`. Head groups are never
//! frozen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRole {
    FeatureExtractor,
    Head,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub name: String,
    pub params: usize,
    pub role: GroupRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezePlan {
    pub requested_fraction: f64,
    /// Per group, in model order.
    pub frozen: Vec<bool>,
    pub frozen_groups: Vec<String>,
    pub frozen_params: usize,
    pub feature_params: usize,
    pub total_params: usize,
    /// `frozen_params / feature_params`.
    pub achieved_fraction: f64,
}

impl FreezePlan {
    pub fn trainable_params(&self) -> usize {
        self.total_params - self.frozen_params
    }

    pub fn trainable_feature_fraction(&self) -> f64 {
        if self.feature_params == 0 {
            0.0
        } else {
            (self.feature_params - self.frozen_params) as f64 / self.feature_params as f64
        }
    }
}

pub fn plan_freeze(groups: &[GroupInfo], fraction: f64) -> Result<FreezePlan> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("freeze fraction {fraction} not in [0, 1]")));
    }
    if !groups.iter().any(|g| g.role == GroupRole::Head) {
        return Err(Error::InvalidConfig(
            "model has no separable classifier head; cannot freeze".into(),
        ));
    }
    let feature_params: usize = groups
        .iter()
        .filter(|g| g.role == GroupRole::FeatureExtractor)
        .map(|g| g.params)
        .sum();
    let budget = fraction * feature_params as f64;
    let mut frozen = vec![false; groups.len()];
    let mut cumulative = 0usize;
    for (i, g) in groups.iter().enumerate() {
        if g.role != GroupRole::FeatureExtractor {
            continue;
        }
        if (cumulative + g.params) as f64 <= budget + 1e-9 {
            cumulative += g.params;
            frozen[i] = true;
        } else {
            break;
        }
    }
    Ok(FreezePlan {
        requested_fraction: fraction,
        frozen_groups: groups
            .iter()
            .zip(&frozen)
            .filter(|(_, &f)| f)
            .map(|(g, _)| g.name.clone())
            .collect(),
        frozen,
        frozen_params: cumulative,
        feature_params,
        total_params: groups.iter().map(|g| g.params).sum(),
        achieved_fraction: if feature_params == 0 {
            0.0
        } else {
            cumulative as f64 / feature_params as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(sizes: &[usize]) -> Vec<GroupInfo> {
        let mut g: Vec<GroupInfo> = sizes
            .iter()
            .enumerate()
            .map(|(i, &p)| GroupInfo {
                name: format!("g{i}"),
                params: p,
                role: GroupRole::FeatureExtractor,
            })
            .collect();
        g.push(GroupInfo {
            name: "head".into(),
            params: 50,
            role: GroupRole::Head,
        });
        g
    }

    #[test]
    fn three_quarters_of_hundred_to_four_hundred() {
        let plan = plan_freeze(&groups(&[100, 200, 300, 400]), 0.75).unwrap();
        assert_eq!(plan.frozen, vec![true, true, true, false, false]);
        assert_eq!(plan.frozen_params, 600);
        assert!((plan.achieved_fraction - 0.6).abs() < 1e-12);
    }

    #[test]
    fn full_and_zero() {
        let all = plan_freeze(&groups(&[100, 200]), 1.0).unwrap();
        assert_eq!(all.frozen, vec![true, true, false]);
        assert_eq!(all.trainable_params(), 50);
        let none = plan_freeze(&groups(&[100, 200]), 0.0).unwrap();
        assert!(none.frozen.iter().all(|f| !f));
        assert_eq!(none.trainable_params(), 350);
    }

    #[test]
    fn headless_model_rejected() {
        let g = vec![GroupInfo {
            name: "x".into(),
            params: 3,
            role: GroupRole::FeatureExtractor,
        }];
        assert!(plan_freeze(&g, 0.5).is_err());
        assert!(plan_freeze(&groups(&[1]), 1.5).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn trainable_fraction_within_granularity(sizes in proptest::collection::vec(1usize..500, 1..8), f in 0.0f64..=1.0) {
                let g = groups(&sizes);
                let plan = plan_freeze(&g, f).unwrap();
                let total: usize = sizes.iter().sum();
                let largest = *sizes.iter().max().unwrap() as f64 / total as f64;
                let trainable = plan.trainable_feature_fraction();
                // frozen share never exceeds f, and stops short of it by less than one group
                prop_assert!(trainable >= 1.0 - f - 1e-9);
                prop_assert!(trainable <= 1.0 - f + largest + 1e-9);
                prop_assert!(!*plan.frozen.last().unwrap());
            }
        }
    }
}
