use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::EssayRecord;
use crate::error::{Error, Result};

/// Assigns stratified folds: each prompt's essays are shuffled and dealt
/// round-robin, so per-prompt fold sizes differ by at most one.
pub fn make_folds(corpus: &mut [EssayRecord], k: usize, seed: u64) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be at least 2, got {k}")));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    let mut by_prompt: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in corpus.iter().enumerate() {
        by_prompt.entry(r.prompt_id).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in by_prompt.values_mut() {
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            corpus[i].fold = Some(pos % k);
        }
    }
    Ok(())
}

/// Essay-id partition for one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: BTreeSet<u64>,
    pub dev: BTreeSet<u64>,
    pub test: BTreeSet<u64>,
}

impl FoldSplit {
    /// Test fold `fold`, dev fold `fold + 1 (mod k)`, training on the rest.
    pub fn new(corpus: &[EssayRecord], fold: usize, k: usize) -> Result<Self> {
        let dev_fold = (fold + 1) % k;
        let mut split = FoldSplit {
            fold,
            train: BTreeSet::new(),
            dev: BTreeSet::new(),
            test: BTreeSet::new(),
        };
        for r in corpus {
            let f = r
                .fold
                .ok_or_else(|| Error::Validation(format!("essay {} has no fold", r.essay_id)))?;
            if f == fold {
                split.test.insert(r.essay_id);
            } else if f == dev_fold {
                split.dev.insert(r.essay_id);
            } else {
                split.train.insert(r.essay_id);
            }
        }
        Ok(split)
    }

    pub fn is_leak_free(&self) -> bool {
        self.train.is_disjoint(&self.test)
            && self.dev.is_disjoint(&self.test)
            && self.train.is_disjoint(&self.dev)
    }

    pub fn select<'a>(corpus: &'a [EssayRecord], ids: &BTreeSet<u64>) -> Vec<&'a EssayRecord> {
        corpus.iter().filter(|r| ids.contains(&r.essay_id)).collect()
    }
}

/// Hash of the (essay id, fold) assignment, for checking shared splits.
pub fn split_hash(corpus: &[EssayRecord]) -> String {
    let mut pairs: Vec<(u64, Option<usize>)> = corpus.iter().map(|r| (r.essay_id, r.fold)).collect();
    pairs.sort();
    let mut h = Sha256::new();
    for (id, fold) in pairs {
        h.update(id.to_le_bytes());
        h.update((fold.map_or(u64::MAX, |f| f as u64)).to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, load_prompt_schema, CorpusConfig};

    fn corpus(n: usize) -> Vec<EssayRecord> {
        let cfg = CorpusConfig { essays_per_prompt: n, ..CorpusConfig::default() };
        generate_corpus(&load_prompt_schema(), &cfg).unwrap()
    }

    #[test]
    fn even_division_per_prompt() {
        let mut c = corpus(100);
        make_folds(&mut c, 5, 1).unwrap();
        for p in 1..=8 {
            for f in 0..5 {
                let n = c.iter().filter(|r| r.prompt_id == p && r.fold == Some(f)).count();
                assert_eq!(n, 20);
            }
        }
    }

    #[test]
    fn uneven_sizes_differ_by_at_most_one() {
        let mut c = corpus(23);
        make_folds(&mut c, 5, 9).unwrap();
        for p in 1..=8 {
            let sizes: Vec<usize> = (0..5)
                .map(|f| c.iter().filter(|r| r.prompt_id == p && r.fold == Some(f)).count())
                .collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn deterministic_and_partitioning() {
        let mut a = corpus(20);
        let mut b = corpus(20);
        make_folds(&mut a, 5, 3).unwrap();
        make_folds(&mut b, 5, 3).unwrap();
        assert_eq!(split_hash(&a), split_hash(&b));
        let mut seen = BTreeSet::new();
        for f in 0..5 {
            let s = FoldSplit::new(&a, f, 5).unwrap();
            assert!(s.is_leak_free());
            assert_eq!(s.train.len() + s.dev.len() + s.test.len(), a.len());
            for id in &s.test {
                assert!(seen.insert(*id));
            }
        }
        assert_eq!(seen.len(), a.len());
    }

    #[test]
    fn rejects_bad_k() {
        let mut c = corpus(10);
        assert!(make_folds(&mut c, 1, 0).is_err());
        assert!(make_folds(&mut [], 5, 0).is_err());
    }
}
