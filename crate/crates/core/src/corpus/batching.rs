use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{CorpusSplit, SentenceRecord};
use crate::error::{Error, Result};
use crate::rng;

/// One step's worth of source and target records.
#[derive(Clone, Debug)]
pub struct MixedBatch<'a> {
    pub source_records: Vec<&'a SentenceRecord>,
    pub target_records: Vec<&'a SentenceRecord>,
    pub batch_index: usize,
}

/// Balanced source/target batches: every batch holds `batch_size / 2`
/// records from each domain. A pass walks a fresh permutation of the larger
/// corpus; the smaller one is drawn with replacement.
#[derive(Clone, Debug)]
pub struct BalancedBatcher<'a> {
    source: &'a CorpusSplit,
    target: &'a CorpusSplit,
    half: usize,
    seed: u64,
}

impl<'a> BalancedBatcher<'a> {
    pub fn new(
        source: &'a CorpusSplit,
        target: &'a CorpusSplit,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 || batch_size % 2 != 0 {
            return Err(Error::Config(format!(
                "balanced batching needs an even, positive batch size (got {batch_size})"
            )));
        }
        if source.is_empty() || target.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self {
            source,
            target,
            half: batch_size / 2,
            seed,
        })
    }

    /// Batches per pass over the larger corpus.
    pub fn pass_len(&self) -> usize {
        self.source.len().max(self.target.len()).div_ceil(self.half)
    }

    /// All batches of pass `epoch`; `batch_index` counts from the start of
    /// pass 0.
    pub fn pass(&self, epoch: u64) -> Vec<MixedBatch<'a>> {
        let mut rng = rng::seeded(self.seed, rng::tag("balanced") ^ epoch);
        let source_larger = self.source.len() >= self.target.len();
        let (large, small) = if source_larger {
            (self.source, self.target)
        } else {
            (self.target, self.source)
        };
        let mut order: Vec<usize> = (0..large.len()).collect();
        order.shuffle(&mut rng);
        let n = self.pass_len();
        let mut out = Vec::with_capacity(n);
        for b in 0..n {
            let mut large_part: Vec<&SentenceRecord> = order
                .iter()
                .skip(b * self.half)
                .take(self.half)
                .map(|&i| &large.records()[i])
                .collect();
            while large_part.len() < self.half {
                large_part.push(&large.records()[rng.gen_range(0..large.len())]);
            }
            let small_part: Vec<&SentenceRecord> = (0..self.half)
                .map(|_| &small.records()[rng.gen_range(0..small.len())])
                .collect();
            let (source_records, target_records) = if source_larger {
                (large_part, small_part)
            } else {
                (small_part, large_part)
            };
            out.push(MixedBatch {
                source_records,
                target_records,
                batch_index: epoch as usize * n + b,
            });
        }
        out
    }

    /// Endless stream of passes 0, 1, 2, ...
    pub fn stream(&self) -> impl Iterator<Item = MixedBatch<'a>> + '_ {
        (0u64..).flat_map(move |epoch| self.pass(epoch))
    }
}

/// Shuffled fixed-size batches over a single corpus. The last batch of an
/// epoch may be short.
#[derive(Clone, Debug)]
pub struct SingleBatcher<'a> {
    corpus: &'a CorpusSplit,
    batch_size: usize,
    seed: u64,
}

impl<'a> SingleBatcher<'a> {
    pub fn new(corpus: &'a CorpusSplit, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self {
            corpus,
            batch_size,
            seed,
        })
    }

    pub fn epoch_len(&self) -> usize {
        self.corpus.len().div_ceil(self.batch_size)
    }

    pub fn epoch(&self, epoch: u64) -> Vec<Vec<&'a SentenceRecord>> {
        let mut rng = rng::seeded(self.seed, rng::tag("single") ^ epoch);
        let mut order: Vec<usize> = (0..self.corpus.len()).collect();
        order.shuffle(&mut rng);
        order
            .chunks(self.batch_size)
            .map(|chunk| chunk.iter().map(|&i| &self.corpus.records()[i]).collect())
            .collect()
    }

    pub fn stream(&self) -> impl Iterator<Item = Vec<&'a SentenceRecord>> + '_ {
        (0u64..).flat_map(move |epoch| self.epoch(epoch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Domain, SplitName, Style};
    use proptest::prelude::*;

    fn corpus(domain: Domain, n: usize) -> CorpusSplit {
        let records = (0..n)
            .map(|i| {
                SentenceRecord::from_text(&format!("w{i}"), Style::known("p"), domain).unwrap()
            })
            .collect();
        CorpusSplit::new(SplitName::Train, domain, records).unwrap()
    }

    #[test]
    fn halves_are_equal() {
        let s = corpus(Domain::Source, 100);
        let t = corpus(Domain::Target, 10);
        let b = BalancedBatcher::new(&s, &t, 64, 1).unwrap();
        for batch in b.pass(0) {
            assert_eq!(batch.source_records.len(), 32);
            assert_eq!(batch.target_records.len(), 32);
        }
    }

    #[test]
    fn odd_batch_size_is_a_config_error() {
        let s = corpus(Domain::Source, 4);
        let t = corpus(Domain::Target, 4);
        assert!(matches!(BalancedBatcher::new(&s, &t, 7, 1), Err(Error::Config(_))));
    }

    #[test]
    fn pass_covers_the_larger_corpus_and_recycles_the_smaller() {
        let s = corpus(Domain::Source, 3440);
        let t = corpus(Domain::Target, 400);
        let b = BalancedBatcher::new(&s, &t, 64, 9).unwrap();
        let pass = b.pass(0);
        assert_eq!(pass.len(), 3440usize.div_ceil(32));
        let mut seen = std::collections::HashSet::new();
        for batch in &pass {
            for r in &batch.source_records {
                seen.insert(r.text());
            }
        }
        assert_eq!(seen.len(), 3440);
        let target_draws: usize = pass.iter().map(|b| b.target_records.len()).sum();
        assert!(target_draws > 400);
    }

    #[test]
    fn same_seed_same_batches() {
        let s = corpus(Domain::Source, 50);
        let t = corpus(Domain::Target, 7);
        let texts = |seed| {
            let b = BalancedBatcher::new(&s, &t, 8, seed).unwrap();
            b.stream()
                .take(20)
                .map(|m| {
                    let src: Vec<String> = m.source_records.iter().map(|r| r.text()).collect();
                    let tgt: Vec<String> = m.target_records.iter().map(|r| r.text()).collect();
                    (src, tgt)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(texts(3), texts(3));
        assert_ne!(texts(3), texts(4));
    }

    #[test]
    fn single_batcher_covers_each_epoch_once() {
        let t = corpus(Domain::Target, 10);
        let b = SingleBatcher::new(&t, 4, 0).unwrap();
        let epoch = b.epoch(0);
        assert_eq!(epoch.len(), 3);
        assert_eq!(epoch.iter().map(Vec::len).sum::<usize>(), 10);
    }

    proptest! {
        #[test]
        fn every_batch_is_balanced(ns in 1usize..200, nt in 1usize..200, half in 1usize..20, seed in any::<u64>()) {
            let s = corpus(Domain::Source, ns);
            let t = corpus(Domain::Target, nt);
            let b = BalancedBatcher::new(&s, &t, half * 2, seed).unwrap();
            for batch in b.stream().take(2 * b.pass_len()) {
                prop_assert_eq!(batch.source_records.len(), batch.target_records.len());
                prop_assert_eq!(batch.source_records.len(), half);
            }
        }
    }
}
