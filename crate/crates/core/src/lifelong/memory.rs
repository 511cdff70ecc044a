//! Fixed-capacity episodic memory and the rehearsal selection policies.
//!
//! Budgets are counted in input feature frames. Selection ranks a task's
//! utterances by policy and keeps the longest prefix of the ranking whose
//! frames fit the budget; it stops at the first utterance that does not fit.
//! Because of that prefix rule, shrinking a slot to a smaller budget gives
//! exactly what a fresh selection at that budget would.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::lm::NGramLM;
use crate::model::Utterance;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    Random,
    MinPerplexity,
    MedianLength,
}

impl SelectionPolicy {
    pub fn name(self) -> &'static str {
        match self {
            SelectionPolicy::Random => "random",
            SelectionPolicy::MinPerplexity => "min_perplexity",
            SelectionPolicy::MedianLength => "median_length",
        }
    }
}

impl std::str::FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SelectionPolicy::Random),
            "min_perplexity" | "pp" => Ok(SelectionPolicy::MinPerplexity),
            "median_length" | "len" => Ok(SelectionPolicy::MedianLength),
            other => Err(Error::InvalidConfig(format!("unknown selection policy `{other}`"))),
        }
    }
}

/// Median of the utterance frame counts (mean of the middle pair for even sizes).
pub fn median_length(dataset: &TaskDataset) -> f64 {
    let mut lens: Vec<usize> = dataset.utterances.iter().map(Utterance::frames).collect();
    lens.sort_unstable();
    match lens.len() {
        0 => 0.0,
        n if n % 2 == 1 => lens[n / 2] as f64,
        n => (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0,
    }
}

/// Indices of `dataset.utterances` in selection order for `policy`.
pub fn rank_for_memory(
    dataset: &TaskDataset,
    policy: SelectionPolicy,
    lm: Option<&NGramLM>,
    seed: u64,
) -> Result<Vec<usize>> {
    let utts = &dataset.utterances;
    let mut order: Vec<usize> = (0..utts.len()).collect();
    order.sort_by(|&a, &b| utts[a].id.cmp(&utts[b].id));
    match policy {
        SelectionPolicy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
        SelectionPolicy::MinPerplexity => {
            let lm = lm.ok_or_else(|| {
                Error::InvalidConfig("min-perplexity selection needs a language model".into())
            })?;
            let ppl: Vec<f64> = utts.iter().map(|u| lm.perplexity(&u.labels)).collect::<Result<_>>()?;
            // stable sort keeps id order among equal perplexities
            order.sort_by(|&a, &b| ppl[a].total_cmp(&ppl[b]));
        }
        SelectionPolicy::MedianLength => {
            let median = median_length(dataset);
            let dist = |i: usize| (utts[i].frames() as f64 - median).abs();
            order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)));
        }
    }
    Ok(order)
}

/// Longest prefix of `ranked` whose total frames stay within `budget_frames`.
fn fill_prefix<'a>(ranked: impl IntoIterator<Item = &'a Utterance>, budget_frames: usize) -> Vec<Utterance> {
    let mut used = 0;
    let mut out = Vec::new();
    for u in ranked {
        if used + u.frames() > budget_frames {
            break;
        }
        used += u.frames();
        out.push(u.clone());
    }
    out
}

/// Picks utterances for the memory under a frame budget, in selection order.
pub fn select_for_memory(
    dataset: &TaskDataset,
    policy: SelectionPolicy,
    budget_frames: usize,
    lm: Option<&NGramLM>,
    seed: u64,
) -> Result<Vec<Utterance>> {
    let order = rank_for_memory(dataset, policy, lm, seed)?;
    Ok(fill_prefix(order.iter().map(|&i| &dataset.utterances[i]), budget_frames))
}

/// Rehearsal store shared evenly by all finished tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicMemory {
    capacity_frames: usize,
    policy: SelectionPolicy,
    seed: u64,
    /// Task id → stored utterances in selection order.
    slots: BTreeMap<usize, Vec<Utterance>>,
}

impl EpisodicMemory {
    pub fn new(capacity_frames: usize, policy: SelectionPolicy, seed: u64) -> Self {
        Self {
            capacity_frames,
            policy,
            seed,
            slots: BTreeMap::new(),
        }
    }

    pub fn capacity_frames(&self) -> usize {
        self.capacity_frames
    }

    pub fn policy(&self) -> SelectionPolicy {
        self.policy
    }

    pub fn num_tasks(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, task_id: usize) -> Option<&[Utterance]> {
        self.slots.get(&task_id).map(Vec::as_slice)
    }

    pub fn task_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.values().all(Vec::is_empty)
    }

    pub fn total_frames(&self) -> usize {
        self.iter().map(Utterance::frames).sum()
    }

    pub fn slot_frames(&self, task_id: usize) -> usize {
        self.slots.get(&task_id).map_or(0, |s| s.iter().map(Utterance::frames).sum())
    }

    /// All stored utterances, by task id then selection order.
    pub fn iter(&self) -> impl Iterator<Item = &Utterance> {
        self.slots.values().flatten()
    }

    /// Equal share of the capacity for each of `tasks` tasks. Rounded down so
    /// the shares never sum past the capacity.
    pub fn per_task_budget(&self, tasks: usize) -> usize {
        self.capacity_frames.checked_div(tasks).unwrap_or(self.capacity_frames)
    }

    /// Admits a finished task: every existing slot shrinks to its ranked
    /// prefix within the new per-task share, then the new task's slot is filled
    /// by [`select_for_memory`] under the same share.
    pub fn rebalance(&mut self, finished: &TaskDataset, lm: Option<&NGramLM>) -> Result<()> {
        let tasks = self.slots.len() + usize::from(!self.slots.contains_key(&finished.task_id));
        let budget = self.per_task_budget(tasks);
        let task_seed = seed::indexed(self.seed, finished.task_id as u64);
        let fresh = select_for_memory(finished, self.policy, budget, lm, task_seed)?;
        for slot in self.slots.values_mut() {
            *slot = fill_prefix(slot.iter(), budget);
        }
        self.slots.insert(finished.task_id, fresh);
        Ok(())
    }

    /// One dataset per stored task, for inspection or replay.
    pub fn export(&self, vocab_size: usize, input_dim: usize) -> Vec<TaskDataset> {
        self.slots
            .iter()
            .map(|(&task_id, utts)| TaskDataset {
                task_id,
                vocab_size,
                input_dim,
                utterances: utts.clone(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::RealArray;
    use proptest::prelude::*;

    fn utt(id: &str, frames: usize, labels: Vec<u32>, task: usize) -> Utterance {
        Utterance {
            id: id.into(),
            features: RealArray::zeros(&[frames, 1]),
            labels,
            source_task: task,
        }
    }

    fn dataset(task_id: usize, lens: &[usize]) -> TaskDataset {
        TaskDataset {
            task_id,
            vocab_size: 2,
            input_dim: 1,
            utterances: lens
                .iter()
                .enumerate()
                .map(|(i, &n)| utt(&format!("t{task_id}-{i:03}"), n, vec![1], task_id))
                .collect(),
        }
    }

    #[test]
    fn median_length_picks_the_median_utterance() {
        let ds = dataset(0, &[3, 9, 5]);
        let got = select_for_memory(&ds, SelectionPolicy::MedianLength, 5, None, 0).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].frames(), 5);
    }

    #[test]
    fn large_budget_keeps_everything() {
        let ds = dataset(0, &[3, 9, 5, 2]);
        let lm = NGramLM::train(&ds.label_corpus(), 2, 1, 0.1).unwrap();
        for policy in [SelectionPolicy::Random, SelectionPolicy::MinPerplexity, SelectionPolicy::MedianLength] {
            let got = select_for_memory(&ds, policy, 19, Some(&lm), 5).unwrap();
            assert_eq!(got.len(), 4, "{policy:?}");
        }
    }

    #[test]
    fn min_perplexity_prefers_in_domain_labels() {
        let lm = NGramLM::train(&[vec![1]], 2, 1, 0.1).unwrap();
        let ds = TaskDataset {
            task_id: 0,
            vocab_size: 2,
            input_dim: 1,
            utterances: vec![utt("ab", 2, vec![1, 2], 0), utt("aa", 2, vec![1, 1], 0)],
        };
        let pa = lm.perplexity(&[1, 1]).unwrap();
        let pb = lm.perplexity(&[1, 2]).unwrap();
        assert!(pa < pb);
        let got = select_for_memory(&ds, SelectionPolicy::MinPerplexity, 2, Some(&lm), 0).unwrap();
        assert_eq!(got[0].labels, vec![1, 1]);
    }

    #[test]
    fn min_perplexity_without_lm_is_an_error() {
        let ds = dataset(0, &[3]);
        assert!(select_for_memory(&ds, SelectionPolicy::MinPerplexity, 10, None, 0).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let ds = TaskDataset {
            task_id: 0,
            vocab_size: 2,
            input_dim: 1,
            utterances: vec![utt("c", 4, vec![1], 0), utt("a", 4, vec![1], 0), utt("b", 4, vec![1], 0)],
        };
        let got = select_for_memory(&ds, SelectionPolicy::MedianLength, 8, None, 0).unwrap();
        let ids: Vec<&str> = got.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn single_task_owns_the_whole_budget() {
        let mut mem = EpisodicMemory::new(20, SelectionPolicy::MedianLength, 1);
        mem.rebalance(&dataset(0, &[5; 10]), None).unwrap();
        assert_eq!(mem.slot_frames(0), 20);
    }

    #[test]
    fn two_tasks_split_the_budget() {
        let mut mem = EpisodicMemory::new(100, SelectionPolicy::Random, 1);
        mem.rebalance(&dataset(0, &[10; 20]), None).unwrap();
        mem.rebalance(&dataset(1, &[10; 20]), None).unwrap();
        assert!(mem.slot_frames(0) <= 50);
        assert!(mem.slot_frames(1) <= 50);
        assert_eq!(mem.total_frames(), 100);
    }

    #[test]
    fn shrinking_equals_fresh_selection() {
        let lens = [3, 7, 4, 4, 9, 2, 6, 5, 5, 8, 1];
        let first = dataset(0, &lens);
        let lm = NGramLM::train(&first.label_corpus(), 2, 1, 0.1).unwrap();
        for policy in [SelectionPolicy::Random, SelectionPolicy::MedianLength] {
            let mut mem = EpisodicMemory::new(30, policy, 9);
            mem.rebalance(&first, Some(&lm)).unwrap();
            mem.rebalance(&dataset(1, &lens), Some(&lm)).unwrap();
            let fresh = select_for_memory(&first, policy, 15, Some(&lm), seed::indexed(9, 0)).unwrap();
            assert_eq!(mem.slot(0).unwrap(), fresh.as_slice(), "{policy:?}");
        }
    }

    #[test]
    fn selection_is_deterministic_and_median_ignores_seed() {
        let ds = dataset(0, &[3, 7, 4, 4, 9, 2, 6]);
        let a = select_for_memory(&ds, SelectionPolicy::Random, 15, None, 3).unwrap();
        let b = select_for_memory(&ds, SelectionPolicy::Random, 15, None, 3).unwrap();
        assert_eq!(a, b);
        let c = select_for_memory(&ds, SelectionPolicy::MedianLength, 15, None, 3).unwrap();
        let d = select_for_memory(&ds, SelectionPolicy::MedianLength, 15, None, 4).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn export_round_trips_through_the_dataset_format() {
        let mut mem = EpisodicMemory::new(12, SelectionPolicy::MedianLength, 0);
        mem.rebalance(&dataset(0, &[3, 4, 5]), None).unwrap();
        let exported = mem.export(2, 1);
        let back = TaskDataset::from_text(&exported[0].to_text()).unwrap();
        assert_eq!(back.utterances, mem.slot(0).unwrap());
    }

    proptest! {
        #[test]
        fn never_exceeds_capacity(capacity in 0usize..200,
                                  tasks in prop::collection::vec(prop::collection::vec(1usize..30, 0..25), 1..6),
                                  policy in prop_oneof![Just(SelectionPolicy::Random), Just(SelectionPolicy::MedianLength)]) {
            let mut mem = EpisodicMemory::new(capacity, policy, 0);
            for (k, lens) in tasks.iter().enumerate() {
                mem.rebalance(&dataset(k, lens), None).unwrap();
                prop_assert!(mem.total_frames() <= capacity);
                let share = capacity.div_ceil(mem.num_tasks());
                for id in mem.task_ids() {
                    prop_assert!(mem.slot_frames(id) <= share);
                }
            }
        }
    }
}
