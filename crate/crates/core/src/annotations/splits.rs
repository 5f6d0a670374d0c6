use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How videos are divided into training and evaluation sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitPlan {
    /// `k` shuffled, near-equal folds; each round evaluates one fold.
    CrossValidation {
        k: usize,
        #[serde(default)]
        seed: u64,
    },
    /// The first `train` videos (in the given order) train, the rest evaluate.
    Fixed { train: usize },
}

/// One train/evaluate assignment. Both lists keep the input order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Round {
    pub index: usize,
    pub train: Vec<String>,
    pub eval: Vec<String>,
}

impl SplitPlan {
    /// The same plan with its shuffle seed replaced.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            SplitPlan::CrossValidation { k, .. } => SplitPlan::CrossValidation { k, seed },
            fixed => fixed,
        }
    }
}

pub fn make_splits(ids: &[String], plan: &SplitPlan) -> Result<Vec<Round>> {
    let n = ids.len();
    match *plan {
        SplitPlan::Fixed { train } => {
            if train == 0 || train >= n {
                return Err(Error::Split(format!(
                    "fixed split needs 0 < train < {n} videos, got {train}"
                )));
            }
            Ok(vec![Round {
                index: 0,
                train: ids[..train].to_vec(),
                eval: ids[train..].to_vec(),
            }])
        }
        SplitPlan::CrossValidation { k, seed } => {
            if k < 2 || k > n {
                return Err(Error::Split(format!("{k} folds over {n} videos")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut fold = vec![0usize; n];
            // Fold f takes positions [f·n/k, (f+1)·n/k) of the shuffled order.
            for f in 0..k {
                for &v in &order[f * n / k..(f + 1) * n / k] {
                    fold[v] = f;
                }
            }
            Ok((0..k)
                .map(|f| {
                    let (eval, train): (Vec<_>, Vec<_>) = (0..n).partition(|&v| fold[v] == f);
                    Round {
                        index: f,
                        train: train.into_iter().map(|v| ids[v].clone()).collect(),
                        eval: eval.into_iter().map(|v| ids[v].clone()).collect(),
                    }
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i:02}")).collect()
    }

    #[test]
    fn fixed_first_n() {
        let r = make_splits(&ids(27), &SplitPlan::Fixed { train: 18 }).unwrap();
        assert_eq!((r[0].train.len(), r[0].eval.len()), (18, 9));
        assert_eq!(r[0].eval[0], "v18");
        let r = make_splits(&ids(80), &SplitPlan::Fixed { train: 40 }).unwrap();
        assert_eq!((r[0].train.len(), r[0].eval.len()), (40, 40));
        assert!(make_splits(&ids(5), &SplitPlan::Fixed { train: 5 }).is_err());
    }

    #[test]
    fn five_fold_of_ten() {
        let plan = SplitPlan::CrossValidation { k: 5, seed: 3 };
        let a = make_splits(&ids(10), &plan).unwrap();
        assert_eq!(a, make_splits(&ids(10), &plan).unwrap());
        assert!(a.iter().all(|r| r.eval.len() == 2 && r.train.len() == 8));
        let mut all: Vec<_> = a.iter().flat_map(|r| r.eval.clone()).collect();
        all.sort();
        assert_eq!(all, ids(10));
        assert!(make_splits(&ids(3), &SplitPlan::CrossValidation { k: 4, seed: 0 }).is_err());
    }
}
