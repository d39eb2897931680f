use super::AppliedSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LossModel, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Consistent { max_diff: f64 },
    Inconsistent { max_diff: f64 },
}

impl Verdict {
    pub fn max_diff(&self) -> f64 {
        match *self {
            Verdict::Consistent { max_diff } | Verdict::Inconsistent { max_diff } => max_diff,
        }
    }

    pub fn is_consistent(&self) -> bool {
        matches!(self, Verdict::Consistent { .. })
    }

    pub fn label(&self) -> &'static str {
        if self.is_consistent() {
            "consistent"
        } else {
            "inconsistent"
        }
    }
}

pub fn applied_sets_equal(sets: &[AppliedSet]) -> bool {
    sets.windows(2).all(|w| w[0] == w[1])
}

/// Consistent iff every pair of replicas is within `tolerance` in the max
/// norm and, when `applied` is given, every replica reflects the same
/// multiset of updates. Only meaningful once the network has been drained.
pub fn check_consistency(
    replicas: &[ParamVector],
    applied: Option<&[AppliedSet]>,
    tolerance: f64,
) -> Verdict {
    let mut max_diff: f64 = 0.0;
    for (i, a) in replicas.iter().enumerate() {
        for b in &replicas[i + 1..] {
            max_diff = max_diff.max(a.max_abs_diff(b));
        }
    }
    let sets_agree = applied.is_none_or(applied_sets_equal);
    if max_diff <= tolerance && sets_agree {
        Verdict::Consistent { max_diff }
    } else {
        Verdict::Inconsistent { max_diff }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPolicy {
    Average,
    Worker0,
    /// Lowest full-dataset loss; ties go to the lower worker id.
    BestTrainLoss,
}

impl SelectionPolicy {
    pub const ALL: [SelectionPolicy; 3] = [
        SelectionPolicy::Average,
        SelectionPolicy::Worker0,
        SelectionPolicy::BestTrainLoss,
    ];
}

/// Picks the representative model at the end of training.
pub fn select_final_model(
    replicas: &[ParamVector],
    policy: SelectionPolicy,
    model: &LossModel,
    dataset: &Dataset,
) -> Result<ParamVector> {
    let first = replicas
        .first()
        .ok_or_else(|| Error::Usage("no replicas to select from".into()))?;
    match policy {
        SelectionPolicy::Worker0 => Ok(first.clone()),
        SelectionPolicy::Average => {
            let mut sum = vec![0.0; first.len()];
            for r in replicas {
                for (s, v) in sum.iter_mut().zip(r.iter()) {
                    *s += v;
                }
            }
            let n = replicas.len() as f64;
            ParamVector::new(sum.into_iter().map(|s| s / n).collect())
        }
        SelectionPolicy::BestTrainLoss => {
            let mut best = (f64::INFINITY, 0);
            for (i, r) in replicas.iter().enumerate() {
                let loss = model.mean_loss(r, dataset.samples())?;
                if loss < best.0 {
                    best = (loss, i);
                }
            }
            Ok(replicas[best.1].clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::strategies::UpdateId;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn bowl_data() -> Dataset {
        Dataset::from_samples(vec![
            Sample {
                features: vec![1.0, 1.0],
                target: 0.0,
            },
            Sample {
                features: vec![3.0, 3.0],
                target: 0.0,
            },
        ])
        .unwrap()
    }

    #[test]
    fn identical_replicas_under_every_policy() {
        let r = vec![pv(&[0.5, -1.0]); 3];
        let model = LossModel::quadratic_bowl(2);
        for policy in SelectionPolicy::ALL {
            assert_eq!(
                select_final_model(&r, policy, &model, &bowl_data()).unwrap(),
                r[0]
            );
        }
    }

    #[test]
    fn average_policy() {
        let r = vec![pv(&[0.0, 0.0]), pv(&[2.0, 2.0])];
        let avg = select_final_model(
            &r,
            SelectionPolicy::Average,
            &LossModel::quadratic_bowl(2),
            &bowl_data(),
        )
        .unwrap();
        assert_eq!(avg.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn best_policy_matches_brute_force() {
        let model = LossModel::quadratic_bowl(2);
        let data = bowl_data();
        let r = vec![pv(&[0.0, 0.0]), pv(&[2.5, 1.5]), pv(&[-4.0, 9.0])];
        let losses: Vec<f64> = r
            .iter()
            .map(|w| {
                data.samples()
                    .iter()
                    .map(|x| {
                        0.5 * w
                            .iter()
                            .zip(&x.features)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    / 2.0
            })
            .collect();
        let expected = (0..3)
            .min_by(|&a, &b| losses[a].total_cmp(&losses[b]))
            .unwrap();
        let best = select_final_model(&r, SelectionPolicy::BestTrainLoss, &model, &data).unwrap();
        assert_eq!(best, r[expected]);
        assert_eq!(expected, 1);
    }

    #[test]
    fn empty_replicas_rejected() {
        assert!(select_final_model(
            &[],
            SelectionPolicy::Worker0,
            &LossModel::quadratic_bowl(2),
            &bowl_data()
        )
        .is_err());
    }

    #[test]
    fn verdicts() {
        let same = vec![pv(&[1.0, 2.0]); 3];
        assert_eq!(
            check_consistency(&same, None, 0.0),
            Verdict::Consistent { max_diff: 0.0 }
        );

        let apart = vec![pv(&[1.0, 2.0]), pv(&[1.0, 2.5])];
        assert_eq!(
            check_consistency(&apart, None, 1e-9),
            Verdict::Inconsistent { max_diff: 0.5 }
        );
        assert!(check_consistency(&apart, None, 0.5).is_consistent());

        let id = |producer, step| UpdateId { producer, step };
        let sets = vec![
            [id(0, 1), id(1, 1)].into_iter().collect::<AppliedSet>(),
            [id(0, 1)].into_iter().collect::<AppliedSet>(),
        ];
        let v = check_consistency(&same[..2], Some(&sets), 1e-9);
        assert!(!v.is_consistent());
        assert_eq!(v.max_diff(), 0.0);
    }
}
