use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::corpus::{Corpus, StanceExample};

/// Assigns every example to one of `k` folds. With `stratify`, each stance
/// class is shuffled and dealt round-robin so class shares stay even.
pub fn fold_assignment(
    corpus: &Corpus,
    k: usize,
    seed: u64,
    stratify: bool,
) -> Result<Vec<usize>, EvalError> {
    let n = corpus.size();
    if k < 2 || n < k {
        return Err(EvalError::BadFolds { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0usize; n];
    if stratify {
        let mut dealt = 0usize;
        for label in crate::corpus::StanceLabel::ALL {
            let mut members: Vec<usize> = (0..n)
                .filter(|&i| corpus.examples()[i].stance == label)
                .collect();
            members.shuffle(&mut rng);
            for i in members {
                fold[i] = dealt % k;
                dealt += 1;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

/// `k` (train, test) pairs whose test parts partition the corpus. Both halves
/// keep the input order.
pub fn kfold(
    corpus: &Corpus,
    k: usize,
    seed: u64,
    stratify: bool,
) -> Result<Vec<(Corpus, Corpus)>, EvalError> {
    let fold = fold_assignment(corpus, k, seed, stratify)?;
    (0..k)
        .map(|f| {
            let (mut train, mut test): (Vec<StanceExample>, Vec<StanceExample>) =
                (Vec::new(), Vec::new());
            for (ex, &g) in corpus.iter().zip(&fold) {
                if g == f {
                    test.push(ex.clone());
                } else {
                    train.push(ex.clone());
                }
            }
            Ok((
                Corpus::new(corpus.domain_id(), train)?,
                Corpus::new(corpus.domain_id(), test)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Lang, StanceLabel};

    fn corpus(n: usize) -> Corpus {
        let ex = (0..n)
            .map(|i| StanceExample {
                id: format!("e{i}"),
                target: "t".into(),
                text: format!("text {i}"),
                stance: StanceLabel::ALL[i % 3],
                language: Lang::new("en").unwrap(),
                provenance: vec![],
            })
            .collect();
        Corpus::new("en-x", ex).unwrap()
    }

    #[test]
    fn ten_into_five() {
        let folds = kfold(&corpus(10), 5, 1, false).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen: Vec<String> = Vec::new();
        for (train, test) in &folds {
            assert_eq!(test.size(), 2);
            assert_eq!(train.size(), 8);
            seen.extend(test.iter().map(|e| e.id.clone()));
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn bad_k() {
        assert!(matches!(
            kfold(&corpus(10), 1, 0, false),
            Err(EvalError::BadFolds { .. })
        ));
        assert!(matches!(
            kfold(&corpus(3), 4, 0, true),
            Err(EvalError::BadFolds { .. })
        ));
    }

    #[test]
    fn stratified_balances_classes() {
        let folds = kfold(&corpus(30), 10, 7, true).unwrap();
        for (_, test) in folds {
            let c = crate::corpus::label_counts(&test);
            assert_eq!(c, [1, 1, 1]);
        }
    }
}
