use rand::seq::index::sample;
use rand::Rng;

use crate::datagen::ImpressionRecord;
use crate::error::{KeepError, Result};
use crate::extractor::Task;

/// `(pos, neg)` indices into the session slice the batch was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub user: u64,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Pair each positive of `session` (for `task`) with up to `cap` negatives
/// drawn without replacement. All records must share user and session.
pub fn build_triplets<R: Rng>(session: &[&ImpressionRecord], task: Task, cap: usize, rng: &mut R) -> Result<TripletBatch> {
    let Some(first) = session.first() else {
        return Ok(TripletBatch::default());
    };
    if session
        .iter()
        .any(|r| r.user_id != first.user_id || r.session_id != first.session_id)
    {
        return Err(KeepError::State(format!(
            "triplet session mixes users or sessions (user {}, session {})",
            first.user_id, first.session_id
        )));
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..session.len()).partition(|&k| task.label(session[k]) == 1);
    let mut out = TripletBatch::default();
    if pos.is_empty() || neg.is_empty() || cap == 0 {
        return Ok(out);
    }
    let take = cap.min(neg.len());
    for &p in &pos {
        for k in sample(rng, neg.len(), take) {
            out.triplets.push(Triplet {
                user: first.user_id,
                pos: p,
                neg: neg[k],
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Domain;
    use crate::nncore::seeded_rng;

    fn rec(click: u8) -> ImpressionRecord {
        ImpressionRecord {
            domain: Domain::Super,
            day: 0,
            session_id: 4,
            user_id: 9,
            item_id: 1,
            shop_id: 1,
            category_id: 1,
            behavior_seq: vec![],
            click,
            conversion: 0,
            cart: 0,
        }
    }

    #[test]
    fn pos_neg_gives_one() {
        let (a, b) = (rec(1), rec(0));
        let t = build_triplets(&[&a, &b], Task::Click, 3, &mut seeded_rng(0)).unwrap();
        assert_eq!(t.triplets, vec![Triplet { user: 9, pos: 0, neg: 1 }]);
    }

    #[test]
    fn no_negative_gives_none() {
        let (a, b) = (rec(1), rec(1));
        assert!(build_triplets(&[&a, &b], Task::Click, 3, &mut seeded_rng(0)).unwrap().is_empty());
    }

    #[test]
    fn mixed_session_rejected() {
        let a = rec(1);
        let mut b = rec(0);
        b.session_id = 5;
        assert!(build_triplets(&[&a, &b], Task::Click, 3, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn cap_limits_negatives_per_positive() {
        let recs = [rec(1), rec(0), rec(1), rec(0), rec(0)];
        let refs: Vec<&ImpressionRecord> = recs.iter().collect();
        let a = build_triplets(&refs, Task::Click, 2, &mut seeded_rng(11)).unwrap();
        let b = build_triplets(&refs, Task::Click, 2, &mut seeded_rng(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for t in &a.triplets {
            assert!(t.pos == 0 || t.pos == 2);
            assert!([1, 3, 4].contains(&t.neg));
        }
        for p in [0, 2] {
            let mut negs: Vec<usize> = a.triplets.iter().filter(|t| t.pos == p).map(|t| t.neg).collect();
            negs.dedup();
            assert_eq!(negs.len(), 2);
        }
    }
}
