//! Repeated k-fold cross-validation.
//!
//! Each repeat shuffles the library positions with its own seeded ChaCha
//! stream and cuts the permutation into `folds` contiguous chunks whose sizes
//! differ by at most one. Every chunk is held out once; the responder is
//! trained from scratch on the remaining positions (kept in library order).

use std::fmt;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::responders::{train, ResponderKind};
use super::validator::{Reason, Validator};
use super::HarnessError;
use crate::emulator::{find_symmetric_fields, transform_response};
use crate::par::Exec;
use crate::protomodel::{BuildOptions, PairwiseCache};
use crate::trace::TransactionLibrary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossValidation {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Scheduling of the (repeat, fold) tasks.
    pub exec: Exec,
}

impl Default for CrossValidation {
    fn default() -> Self {
        Self {
            folds: 10,
            repeats: 10,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub total: usize,
    pub valid: usize,
    pub parse_failures: usize,
    pub wrong_operation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub responder: String,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub total: usize,
    pub valid: usize,
    pub accuracy: f64,
    pub parse_failures: usize,
    pub wrong_operation: usize,
    pub per_fold: Vec<FoldResult>,
}

impl AccuracyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

impl fmt::Display for AccuracyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "responder {}  folds {}  repeats {}  seed {}",
            self.responder, self.folds, self.repeats, self.seed
        )?;
        writeln!(f, "{:>6} {:>4} {:>6} {:>6} {:>6} {:>6}", "repeat", "fold", "total", "valid", "parse", "wrongop")?;
        for r in &self.per_fold {
            writeln!(
                f,
                "{:>6} {:>4} {:>6} {:>6} {:>6} {:>6}",
                r.repeat, r.fold, r.total, r.valid, r.parse_failures, r.wrong_operation
            )?;
        }
        write!(
            f,
            "accuracy {:.4}% ({}/{}), parse failures {}, wrong operation {}",
            100.0 * self.accuracy,
            self.valid,
            self.total,
            self.parse_failures,
            self.wrong_operation
        )
    }
}

/// Held-out position sets for one repeat.
pub fn fold_assignment(n: usize, folds: usize, seed: u64, repeat: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    (0..folds)
        .map(|f| {
            let mut held = perm[f * n / folds..(f + 1) * n / folds].to_vec();
            held.sort_unstable();
            held
        })
        .collect()
}

pub fn cross_validate(
    library: &TransactionLibrary,
    kind: ResponderKind,
    opts: &BuildOptions,
    cv: &CrossValidation,
    validator: &dyn Validator,
) -> Result<AccuracyReport, HarnessError> {
    if cv.folds < 2 || cv.repeats == 0 {
        return Err(HarnessError::InvalidSettings(
            "cross-validation needs at least 2 folds and 1 repeat".into(),
        ));
    }
    if library.len() < cv.folds {
        return Err(HarnessError::TooFewTransactions {
            n: library.len(),
            folds: cv.folds,
        });
    }
    let n = library.len();
    let cache = match kind {
        ResponderKind::Hash => None,
        _ => Some(PairwiseCache::compute(library, &opts.scoring, opts.exec)?),
    };
    let txs = library.transactions();

    let tasks: Vec<(usize, usize, Vec<usize>)> = (0..cv.repeats)
        .flat_map(|r| {
            fold_assignment(n, cv.folds, cv.seed, r)
                .into_iter()
                .enumerate()
                .map(move |(f, held)| (r, f, held))
        })
        .collect();

    let results = cv.exec.map(&tasks, |(repeat, fold, held)| -> Result<FoldResult, HarnessError> {
        let mut is_held = vec![false; n];
        held.iter().for_each(|&p| is_held[p] = true);
        let training: Vec<usize> = (0..n).filter(|&p| !is_held[p]).collect();

        let answers: Vec<Option<Vec<u8>>> = match kind {
            ResponderKind::WholeLibrary => {
                // Nearest training request straight from the cached matrix.
                let requests = &cache.as_ref().expect("computed above").requests;
                held.iter()
                    .map(|&h| {
                        let best = training
                            .iter()
                            .copied()
                            .min_by(|&a, &b| {
                                requests
                                    .get(h, a)
                                    .total_cmp(&requests.get(h, b))
                                    .then(txs[a].index.cmp(&txs[b].index))
                            })
                            .expect("training set is non-empty");
                        let t = &txs[best];
                        let fields = find_symmetric_fields(&t.request, &t.response, opts.min_field_len as usize);
                        Some(transform_response(
                            &t.request,
                            &t.response,
                            &fields,
                            &txs[h].request,
                            &opts.scoring,
                        ))
                    })
                    .collect()
            }
            _ => {
                let train_lib = library.subset(&training);
                let sub = cache.as_ref().map(|c| c.subset(&training));
                let responder = train(kind, &train_lib, opts, sub.as_ref())?;
                held.iter().map(|&h| responder.respond(&txs[h].request)).collect()
            }
        };

        let mut res = FoldResult {
            repeat: *repeat,
            fold: *fold,
            total: held.len(),
            valid: 0,
            parse_failures: 0,
            wrong_operation: 0,
        };
        for (&h, answer) in held.iter().zip(&answers) {
            let outcome = validator.validate(&txs[h].response, answer.as_deref());
            match outcome.reason {
                Reason::None => res.valid += 1,
                Reason::ParseFailure => res.parse_failures += 1,
                Reason::WrongOperation => res.wrong_operation += 1,
            }
        }
        debug!("repeat {repeat} fold {fold}: {}/{} valid", res.valid, res.total);
        Ok(res)
    });

    let per_fold = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let sum = |f: fn(&FoldResult) -> usize| per_fold.iter().map(f).sum::<usize>();
    let total = sum(|r| r.total);
    let valid = sum(|r| r.valid);
    Ok(AccuracyReport {
        responder: kind.name().to_string(),
        folds: cv.folds,
        repeats: cv.repeats,
        seed: cv.seed,
        total,
        valid,
        accuracy: valid as f64 / total as f64,
        parse_failures: sum(|r| r.parse_failures),
        wrong_operation: sum(|r| r.wrong_operation),
        per_fold,
    })
}
