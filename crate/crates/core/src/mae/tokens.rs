use super::MaskPlan;
use crate::error::{invalid, Result};
use crate::traversal::TraversalOrder;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Visible,
    Learnable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenEntry<T> {
    pub payload: T,
    pub kind: TokenKind,
    pub original_index: usize,
}

/// Token stream in traversal order.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<T> {
    entries: Vec<TokenEntry<T>>,
}

/// A removed token: where it sat in the sequence and which token it was.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Recorded {
    pub position: usize,
    pub original_index: usize,
}

impl<T> TokenSequence<T> {
    pub fn new(entries: Vec<TokenEntry<T>>) -> Result<Self> {
        let max = entries.iter().map(|e| e.original_index).max().map_or(0, |m| m + 1);
        let mut seen = vec![false; max];
        for e in &entries {
            if std::mem::replace(&mut seen[e.original_index], true) {
                return Err(invalid(format!(
                    "token sequence: duplicate original index {}",
                    e.original_index
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[TokenEntry<T>] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<TokenEntry<T>> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn original_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.original_index).collect()
    }

    pub fn kinds(&self) -> Vec<TokenKind> {
        self.entries.iter().map(|e| e.kind).collect()
    }

    /// Replaces payloads position by position, e.g. with encoder outputs.
    pub fn with_payloads<U>(self, payloads: Vec<U>) -> Result<TokenSequence<U>> {
        if payloads.len() != self.entries.len() {
            return Err(invalid("token sequence: payload count mismatch"));
        }
        Ok(TokenSequence {
            entries: self
                .entries
                .into_iter()
                .zip(payloads)
                .map(|(e, payload)| TokenEntry {
                    payload,
                    kind: e.kind,
                    original_index: e.original_index,
                })
                .collect(),
        })
    }
}

impl<T: Clone> TokenSequence<T> {
    /// All-visible sequence of `payloads[t]` visited in `order`.
    pub fn from_order(order: &TraversalOrder, payloads: &[T]) -> Result<Self> {
        if order.len() != payloads.len() {
            return Err(invalid(format!(
                "token sequence: order has {} tokens, {} payloads given",
                order.len(),
                payloads.len()
            )));
        }
        Ok(Self {
            entries: order
                .permutation()
                .iter()
                .map(|&t| TokenEntry {
                    payload: payloads[t].clone(),
                    kind: TokenKind::Visible,
                    original_index: t,
                })
                .collect(),
        })
    }
}

/// Drops the masked tokens, keeping the rest in order, and records the
/// sequence positions the masked tokens occupied.
pub fn tar_remove<T>(
    tokens: TokenSequence<T>,
    plan: &MaskPlan,
) -> Result<(TokenSequence<T>, Vec<Recorded>)> {
    if tokens.len() != plan.n_tokens {
        return Err(invalid(format!(
            "tar_remove: sequence has {} tokens, mask plan {}",
            tokens.len(),
            plan.n_tokens
        )));
    }
    if tokens.entries.iter().any(|e| e.kind != TokenKind::Visible) {
        return Err(invalid("tar_remove: sequence already contains learnable tokens"));
    }
    let flags = plan.mask_flags();
    let mut visible = Vec::with_capacity(tokens.len() - plan.n_masked());
    let mut recorded = Vec::with_capacity(plan.n_masked());
    for (position, e) in tokens.entries.into_iter().enumerate() {
        if e.original_index >= flags.len() {
            return Err(invalid(format!(
                "tar_remove: token {} outside the mask plan",
                e.original_index
            )));
        }
        if flags[e.original_index] {
            recorded.push(Recorded {
                position,
                original_index: e.original_index,
            });
        } else {
            visible.push(e);
        }
    }
    Ok((TokenSequence { entries: visible }, recorded))
}

fn check_recorded(n_visible: usize, recorded: &[Recorded]) -> Result<Vec<bool>> {
    let total = n_visible + recorded.len();
    let mut taken = vec![false; total];
    for r in recorded {
        if r.position >= total {
            return Err(invalid(format!(
                "tar_restore: recorded position {} out of range (length {total})",
                r.position
            )));
        }
        if std::mem::replace(&mut taken[r.position], true) {
            return Err(invalid(format!(
                "tar_restore: recorded position {} duplicated",
                r.position
            )));
        }
    }
    Ok(taken)
}

/// Reinserts one learnable token at each recorded position; visible entries
/// fill the remaining positions in their existing order.
pub fn tar_restore<T: Clone>(
    encoded_visible: TokenSequence<T>,
    learnable: &T,
    recorded: &[Recorded],
) -> Result<TokenSequence<T>> {
    let taken = check_recorded(encoded_visible.len(), recorded)?;
    let mut by_position: Vec<Option<usize>> = vec![None; taken.len()];
    for r in recorded {
        by_position[r.position] = Some(r.original_index);
    }
    let mut visible = encoded_visible.entries.into_iter();
    let entries = by_position
        .into_iter()
        .map(|slot| match slot {
            Some(original_index) => TokenEntry {
                payload: learnable.clone(),
                kind: TokenKind::Learnable,
                original_index,
            },
            None => visible.next().expect("visible count checked"),
        })
        .collect();
    TokenSequence::new(entries)
}

/// Ablation: learnable tokens appended after all visible ones, in recorded order.
pub fn tar_append<T: Clone>(
    encoded_visible: TokenSequence<T>,
    learnable: &T,
    recorded: &[Recorded],
) -> Result<TokenSequence<T>> {
    check_recorded(encoded_visible.len(), recorded)?;
    let mut entries = encoded_visible.entries;
    entries.extend(recorded.iter().map(|r| TokenEntry {
        payload: learnable.clone(),
        kind: TokenKind::Learnable,
        original_index: r.original_index,
    }));
    TokenSequence::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mae::make_mask;
    use crate::traversal::{random_order, Direction, OrderSource};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_seq(payloads: &[char]) -> TokenSequence<char> {
        let order = TraversalOrder::new(
            (0..payloads.len()).collect(),
            Direction::Forward,
            OrderSource::Hlt,
        )
        .unwrap();
        TokenSequence::from_order(&order, payloads).unwrap()
    }

    #[test]
    fn remove_then_restore_example() {
        let seq = identity_seq(&['A', 'B', 'C', 'D', 'E']);
        let plan = MaskPlan::from_masked(5, 0.4, vec![3, 1]).unwrap();
        let (vis, rec) = tar_remove(seq, &plan).unwrap();
        let payload: String = vis.entries().iter().map(|e| e.payload).collect();
        assert_eq!(payload, "ACE");
        assert_eq!(rec.iter().map(|r| r.position).collect::<Vec<_>>(), vec![1, 3]);
        let back = tar_restore(vis.clone(), &'L', &rec).unwrap();
        let payload: String = back.entries().iter().map(|e| e.payload).collect();
        assert_eq!(payload, "ALCLE");
        assert_eq!(back.original_indices(), vec![0, 1, 2, 3, 4]);
        let app = tar_append(vis, &'L', &rec).unwrap();
        let payload: String = app.entries().iter().map(|e| e.payload).collect();
        assert_eq!(payload, "ACELL");
    }

    #[test]
    fn empty_mask_is_identity() {
        let seq = identity_seq(&['x', 'y', 'z']);
        let plan = make_mask(3, 0.0, 0).unwrap();
        let (vis, rec) = tar_remove(seq.clone(), &plan).unwrap();
        assert!(rec.is_empty());
        assert_eq!(vis, seq);
    }

    #[test]
    fn errors() {
        let seq = identity_seq(&['x', 'y', 'z']);
        let plan = make_mask(4, 0.5, 0).unwrap();
        assert!(tar_remove(seq.clone(), &plan).is_err());
        let bad = [Recorded {
            position: 5,
            original_index: 9,
        }];
        assert!(tar_restore(seq.clone(), &'L', &bad).is_err());
        let dup = [
            Recorded {
                position: 1,
                original_index: 7,
            },
            Recorded {
                position: 1,
                original_index: 8,
            },
        ];
        assert!(tar_restore(seq, &'L', &dup).is_err());
    }

    #[test]
    fn randomized_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..1000u64 {
            let n = rng.random_range(1..=256);
            let ratio = rng.random_range(0.0..=0.9);
            let order = random_order(n, trial);
            let payloads: Vec<usize> = (0..n).map(|t| 1000 + t).collect();
            let seq = TokenSequence::from_order(&order, &payloads).unwrap();
            let plan = make_mask(n, ratio, trial).unwrap();
            let (vis, rec) = tar_remove(seq.clone(), &plan).unwrap();
            assert_eq!(vis.len() + rec.len(), n);
            let back = tar_restore(vis, &usize::MAX, &rec).unwrap();
            assert_eq!(back.original_indices(), seq.original_indices());
            let flags = plan.mask_flags();
            for (e, orig) in back.entries().iter().zip(seq.entries()) {
                if flags[e.original_index] {
                    assert_eq!(e.kind, TokenKind::Learnable);
                    assert_eq!(e.payload, usize::MAX);
                } else {
                    assert_eq!(e.kind, TokenKind::Visible);
                    assert_eq!(e.payload, orig.payload);
                }
            }
        }
    }

    #[test]
    fn one_mask_shared_across_orders() {
        let n = 30;
        let plan = make_mask(n, 0.6, 4).unwrap();
        let payloads: Vec<usize> = (0..n).collect();
        for seed in 0..5 {
            let seq = TokenSequence::from_order(&random_order(n, seed), &payloads).unwrap();
            let (_, rec) = tar_remove(seq, &plan).unwrap();
            let mut ids: Vec<usize> = rec.iter().map(|r| r.original_index).collect();
            ids.sort_unstable();
            assert_eq!(ids, plan.masked);
        }
    }
}
