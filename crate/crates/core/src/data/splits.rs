//! Leave-one-group-out subject splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_GROUPS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Test,
    TeacherTrain,
    StudentTrain,
}

/// Group indices used by one fold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub test: usize,
    pub teacher_train: [usize; 2],
    pub student_train: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub groups: Vec<Vec<u32>>,
    pub folds: Vec<FoldAssignment>,
}

/// Shuffles subjects by seed and deals them into five near-equal groups;
/// fold `f` tests on group `f`, pre-trains the teacher on the next two
/// groups, and trains the student on the remaining two.
pub fn make_logo_splits<R: Rng + ?Sized>(subject_ids: &[u32], rng: &mut R) -> Result<SplitPlan> {
    let mut subjects: Vec<u32> = subject_ids
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if subjects.len() < NUM_GROUPS {
        return Err(Error::Data(format!(
            "need at least {NUM_GROUPS} subjects for group splits, got {}",
            subjects.len()
        )));
    }
    subjects.shuffle(rng);
    let base = subjects.len() / NUM_GROUPS;
    let extra = subjects.len() % NUM_GROUPS;
    let mut groups = Vec::with_capacity(NUM_GROUPS);
    let mut it = subjects.into_iter();
    for g in 0..NUM_GROUPS {
        let size = base + usize::from(g < extra);
        let mut grp: Vec<u32> = it.by_ref().take(size).collect();
        grp.sort_unstable();
        groups.push(grp);
    }
    let folds = (0..NUM_GROUPS)
        .map(|f| FoldAssignment {
            test: f,
            teacher_train: [(f + 1) % NUM_GROUPS, (f + 2) % NUM_GROUPS],
            student_train: [(f + 3) % NUM_GROUPS, (f + 4) % NUM_GROUPS],
        })
        .collect();
    Ok(SplitPlan { groups, folds })
}

impl SplitPlan {
    pub fn num_folds(&self) -> usize {
        self.folds.len()
    }

    pub fn subjects(&self, fold: usize, role: Role) -> Result<Vec<u32>> {
        let a = self
            .folds
            .get(fold)
            .ok_or_else(|| Error::invalid("fold", format!("fold {fold} out of range 0..{}", self.folds.len())))?;
        let idx: Vec<usize> = match role {
            Role::Test => vec![a.test],
            Role::TeacherTrain => a.teacher_train.to_vec(),
            Role::StudentTrain => a.student_train.to_vec(),
        };
        let mut out: Vec<u32> = idx.iter().flat_map(|&g| self.groups[g].iter().copied()).collect();
        out.sort_unstable();
        Ok(out)
    }

    pub fn role_of(&self, fold: usize, subject: u32) -> Option<Role> {
        [Role::Test, Role::TeacherTrain, Role::StudentTrain]
            .into_iter()
            .find(|&r| self.subjects(fold, r).map(|s| s.contains(&subject)).unwrap_or(false))
    }
}
