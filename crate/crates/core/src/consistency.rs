//! Cross-consistency: one generation per correct-rate branch, each branch
//! with its own knowledge base, and a vote over execution results.

use log::warn;
use serde::Serialize;

use crate::embedding::EncoderConfig;
use crate::llm::CompletionProvider;
use crate::notebook::{DemonstrationPlan, KnowledgeBase, NotebookError};
use crate::pipeline::{
    answer, rethink_update, BranchOutcome, PipelineConfig, PipelineError, Rethink, TaskItem,
};
use crate::sql::{outcomes_equal, ExecOutcome};

pub const CANONICAL_RATES: [f64; 3] = [1.0, 0.5, 0.0];

/// Tie-break order over correct rates; rates not listed rank after these,
/// ascending.
pub const RATE_PRIORITY: [f64; 3] = [0.5, 1.0, 0.0];

fn priority(rate: f64) -> (usize, u64) {
    match RATE_PRIORITY.iter().position(|r| *r == rate) {
        Some(i) => (i, 0),
        None => (RATE_PRIORITY.len(), rate.to_bits()),
    }
}

/// Plans paired with knowledge bases. Several plans may point at one base
/// (the shared-base ablation); the default gives each plan its own.
#[derive(Clone, Debug)]
pub struct BranchSet {
    plans: Vec<DemonstrationPlan>,
    kbs: Vec<KnowledgeBase>,
    kb_of: Vec<usize>,
}

impl BranchSet {
    pub fn per_branch(branches: Vec<(DemonstrationPlan, KnowledgeBase)>) -> Result<Self, NotebookError> {
        let (plans, kbs): (Vec<_>, Vec<_>) = branches.into_iter().unzip();
        let kb_of = (0..plans.len()).collect();
        Self::checked(plans, kbs, kb_of)
    }

    pub fn shared(plans: Vec<DemonstrationPlan>, kb: KnowledgeBase) -> Result<Self, NotebookError> {
        let kb_of = vec![0; plans.len()];
        Self::checked(plans, vec![kb], kb_of)
    }

    /// Rates 1, 0.5 and 0 with three empty, disjoint stores.
    pub fn canonical(k: usize, encoder: &EncoderConfig) -> Result<Self, NotebookError> {
        let branches = CANONICAL_RATES
            .iter()
            .map(|r| Ok((DemonstrationPlan::new(k, *r)?, KnowledgeBase::new(encoder.clone())?)))
            .collect::<Result<Vec<_>, NotebookError>>()?;
        Self::per_branch(branches)
    }

    fn checked(plans: Vec<DemonstrationPlan>, kbs: Vec<KnowledgeBase>, kb_of: Vec<usize>) -> Result<Self, NotebookError> {
        if plans.is_empty() {
            return Err(NotebookError::InvalidPlan("at least one branch is required".into()));
        }
        for (i, p) in plans.iter().enumerate() {
            if plans[..i].iter().any(|q| q.correct_rate == p.correct_rate) {
                return Err(NotebookError::InvalidPlan(format!(
                    "correct rate {} appears twice",
                    p.correct_rate
                )));
            }
        }
        Ok(BranchSet { plans, kbs, kb_of })
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    pub fn plans(&self) -> &[DemonstrationPlan] {
        &self.plans
    }

    pub fn kb(&self, branch: usize) -> &KnowledgeBase {
        &self.kbs[self.kb_of[branch]]
    }

    pub fn kb_mut(&mut self, branch: usize) -> &mut KnowledgeBase {
        &mut self.kbs[self.kb_of[branch]]
    }

    /// Distinct stores, in creation order.
    pub fn knowledge_bases(&self) -> &[KnowledgeBase] {
        &self.kbs
    }

    pub fn is_shared(&self) -> bool {
        self.kbs.len() == 1 && self.plans.len() > 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Vote {
    pub chosen: usize,
    /// Sizes of the agreement groups among row results, largest first.
    pub group_sizes: Vec<usize>,
}

/// Picks the candidate whose rows agree with the most others.
///
/// Failures and timeouts never join a group. Ties between groups, and the
/// pick within the winning group, follow [`RATE_PRIORITY`]. With no row
/// results at all the same order picks among every candidate.
pub fn vote_on(candidates: &[(f64, &ExecOutcome)]) -> Vote {
    assert!(!candidates.is_empty(), "vote needs at least one candidate");
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, (_, exec)) in candidates.iter().enumerate() {
        if exec.rows().is_none() {
            continue;
        }
        match groups
            .iter_mut()
            .find(|g| outcomes_equal(candidates[g[0]].1, exec))
        {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    let best_member = |members: &[usize]| {
        *members
            .iter()
            .min_by_key(|&&i| (priority(candidates[i].0), i))
            .expect("non-empty group")
    };
    let mut ranked: Vec<(usize, usize)> = groups
        .iter()
        .map(|g| (g.len(), best_member(g)))
        .collect();
    ranked.sort_by_key(|&(size, rep)| (std::cmp::Reverse(size), priority(candidates[rep].0), rep));
    let group_sizes = ranked.iter().map(|(s, _)| *s).collect();
    let chosen = match ranked.first() {
        Some(&(_, rep)) => rep,
        None => best_member(&(0..candidates.len()).collect::<Vec<_>>()),
    };
    Vote {
        chosen,
        group_sizes,
    }
}

pub fn vote(outcomes: &[BranchOutcome]) -> Vote {
    let candidates: Vec<(f64, &ExecOutcome)> = outcomes
        .iter()
        .map(|o| (o.correct_rate, &o.final_exec))
        .collect();
    vote_on(&candidates)
}

#[derive(Clone, Debug)]
pub struct FinalAnswer {
    pub chosen_sql: String,
    pub chosen_rate: f64,
    pub chosen_index: usize,
    pub branch_outcomes: Vec<BranchOutcome>,
    pub vote_group_sizes: Vec<usize>,
    /// Per branch: the provider failure that aborted it, if any.
    pub aborted: Vec<Option<String>>,
}

impl FinalAnswer {
    pub fn final_exec(&self) -> &ExecOutcome {
        &self.branch_outcomes[self.chosen_index].final_exec
    }

    fn assemble(branch_outcomes: Vec<BranchOutcome>, aborted: Vec<Option<String>>) -> Self {
        let v = vote(&branch_outcomes);
        let chosen = &branch_outcomes[v.chosen];
        FinalAnswer {
            chosen_sql: chosen.final_sql.clone(),
            chosen_rate: chosen.correct_rate,
            chosen_index: v.chosen,
            vote_group_sizes: v.group_sizes,
            branch_outcomes,
            aborted,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CrossRun {
    pub answer: FinalAnswer,
    /// `None` for aborted branches.
    pub rethinks: Vec<Option<Rethink>>,
}

fn answer_branch(
    item: &TaskItem,
    branches: &BranchSet,
    i: usize,
    provider: &dyn CompletionProvider,
    schema_text: &str,
    cfg: &PipelineConfig,
) -> Result<(BranchOutcome, Option<String>), PipelineError> {
    let plan = &branches.plans[i];
    match answer(item, branches.kb(i), plan, provider, schema_text, cfg) {
        Ok(o) => Ok((o, None)),
        Err(PipelineError::Provider(e)) => {
            warn!(
                "{} branch {}: aborted after provider failure: {e}",
                item.question_id, plan.correct_rate
            );
            let reason = e.to_string();
            Ok((BranchOutcome::aborted(plan.correct_rate, &reason), Some(reason)))
        }
        Err(e) => Err(e),
    }
}

/// Every branch answers and then learns from its own prediction; the vote
/// only decides what is returned.
pub fn run(
    item: &TaskItem,
    branches: &mut BranchSet,
    provider: &dyn CompletionProvider,
    schema_text: &str,
    cfg: &PipelineConfig,
) -> Result<CrossRun, PipelineError> {
    let mut outcomes = Vec::with_capacity(branches.len());
    let mut aborted = Vec::with_capacity(branches.len());
    let mut rethinks = Vec::with_capacity(branches.len());
    for i in 0..branches.len() {
        let (outcome, abort) = answer_branch(item, branches, i, provider, schema_text, cfg)?;
        let rethink = if abort.is_none() {
            Some(rethink_update(&outcome, item, branches.kb_mut(i), provider, schema_text, cfg)?)
        } else {
            None
        };
        outcomes.push(outcome);
        aborted.push(abort);
        rethinks.push(rethink);
    }
    Ok(CrossRun {
        answer: FinalAnswer::assemble(outcomes, aborted),
        rethinks,
    })
}

/// Answers without a gold query and without touching the notebooks.
pub fn ask(
    item: &TaskItem,
    branches: &BranchSet,
    provider: &dyn CompletionProvider,
    schema_text: &str,
    cfg: &PipelineConfig,
) -> Result<FinalAnswer, PipelineError> {
    let mut outcomes = Vec::with_capacity(branches.len());
    let mut aborted = Vec::with_capacity(branches.len());
    for i in 0..branches.len() {
        let (outcome, abort) = answer_branch(item, branches, i, provider, schema_text, cfg)?;
        outcomes.push(outcome);
        aborted.push(abort);
    }
    Ok(FinalAnswer::assemble(outcomes, aborted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{CanonicalValue, RowSet};

    fn rows(v: i64) -> ExecOutcome {
        ExecOutcome::Rows(RowSet::new(1, [vec![CanonicalValue::Integer(v)]]))
    }

    #[test]
    fn strict_majority_picks_half_rate_member() {
        let (a, b) = (rows(1), rows(2));
        let v = vote_on(&[(1.0, &a), (0.5, &a), (0.0, &b)]);
        assert_eq!(v.chosen, 1);
        assert_eq!(v.group_sizes, vec![2, 1]);
    }

    #[test]
    fn all_distinct_ties_to_half_rate() {
        let (a, b, c) = (rows(1), rows(2), rows(3));
        let v = vote_on(&[(1.0, &a), (0.5, &b), (0.0, &c)]);
        assert_eq!(v.chosen, 1);
        assert_eq!(v.group_sizes, vec![1, 1, 1]);
    }

    #[test]
    fn failures_are_excluded() {
        let f = ExecOutcome::failure("boom");
        let a = rows(1);
        let v = vote_on(&[(1.0, &f), (0.5, &a), (0.0, &a)]);
        assert_eq!(v.chosen, 1);
        assert_eq!(v.group_sizes, vec![2]);
    }

    #[test]
    fn all_failures_fall_back_to_priority() {
        let f = ExecOutcome::failure("boom");
        let t = ExecOutcome::Timeout;
        let v = vote_on(&[(1.0, &f), (0.0, &t)]);
        assert_eq!(v.chosen, 0);
        assert!(v.group_sizes.is_empty());
    }

    #[test]
    fn order_of_candidates_does_not_matter() {
        let (a, b) = (rows(1), rows(2));
        let v1 = vote_on(&[(1.0, &a), (0.0, &b)]);
        let v2 = vote_on(&[(0.0, &b), (1.0, &a)]);
        assert_eq!(v1.chosen, 0);
        assert_eq!(v2.chosen, 1);
    }

    #[test]
    fn duplicate_rates_rejected() {
        let enc = EncoderConfig::hashed(8);
        let kb = || KnowledgeBase::new(enc.clone()).unwrap();
        let p = DemonstrationPlan::new(4, 0.5).unwrap();
        assert!(BranchSet::per_branch(vec![(p, kb()), (p, kb())]).is_err());
        assert!(BranchSet::per_branch(Vec::new()).is_err());
        let shared = BranchSet::shared(vec![p, DemonstrationPlan::new(4, 1.0).unwrap()], kb()).unwrap();
        assert!(shared.is_shared());
    }
}
