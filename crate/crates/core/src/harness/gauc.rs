use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{KeepError, Result};

/// Lower bounds of the user-activity groups, in clicks.
pub const GROUP_BOUNDS: [u64; 4] = [0, 50, 150, 300];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaucStatus {
    Ok,
    /// No user had both a positive and a negative impression.
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupGauc {
    pub lower: u64,
    pub upper: Option<u64>,
    pub gauc: Option<f64>,
    pub users: usize,
    pub impressions: usize,
}

impl GroupGauc {
    pub fn label(&self) -> String {
        match self.upper {
            Some(u) => format!("[{}, {})", self.lower, u),
            None => format!("{}+", self.lower),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaucReport {
    pub status: GaucStatus,
    pub gauc: Option<f64>,
    pub groups: Vec<GroupGauc>,
    pub users: usize,
    pub excluded_users: usize,
    /// Impressions of eligible users (the denominator).
    pub impressions: usize,
    pub total_impressions: usize,
}

impl GaucReport {
    /// Overall GAUC, or a state error for an empty report.
    pub fn value(&self) -> Result<f64> {
        self.gauc
            .ok_or_else(|| KeepError::State("GAUC undefined: no user has both labels".into()))
    }
}

/// AUC by pair counting with half credit for ties; `None` if one class is
/// absent.
pub fn auc(scores: &[f32], labels: &[u8]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // walk tie blocks in ascending score order
    let mut credit = 0.0f64;
    let mut neg_below = 0usize;
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end < idx.len() && scores[idx[end]] == scores[idx[k]] {
            end += 1;
        }
        let (mut p, mut n) = (0usize, 0usize);
        for &j in &idx[k..end] {
            if labels[j] == 1 {
                p += 1;
            } else {
                n += 1;
            }
        }
        credit += p as f64 * neg_below as f64 + 0.5 * p as f64 * n as f64;
        neg_below += n;
        k = end;
    }
    Some(credit / (n_pos as f64 * n_neg as f64))
}

fn group_of(clicks: u64) -> usize {
    GROUP_BOUNDS.iter().rposition(|&b| clicks >= b).unwrap_or(0)
}

/// Impression-weighted mean of per-user AUC. Users are grouped by
/// `user_clicks` (missing users count as 0 clicks).
pub fn gauc_grouped(impressions: &[(u64, f32, u8)], user_clicks: &HashMap<u64, u64>) -> Result<GaucReport> {
    let mut per_user: BTreeMap<u64, (Vec<f32>, Vec<u8>)> = BTreeMap::new();
    for &(u, s, l) in impressions {
        if l > 1 {
            return Err(KeepError::InvalidLabel(l as f32));
        }
        if !s.is_finite() {
            return Err(KeepError::Numeric { param: "score".into() });
        }
        let e = per_user.entry(u).or_default();
        e.0.push(s);
        e.1.push(l);
    }
    let mut num = [0.0f64; 4];
    let mut den = [0usize; 4];
    let mut users = [0usize; 4];
    let mut excluded = 0;
    for (u, (s, l)) in &per_user {
        match auc(s, l) {
            Some(a) => {
                let g = group_of(user_clicks.get(u).copied().unwrap_or(0));
                num[g] += s.len() as f64 * a;
                den[g] += s.len();
                users[g] += 1;
            }
            None => excluded += 1,
        }
    }
    let total_den: usize = den.iter().sum();
    let groups = (0..4)
        .map(|g| GroupGauc {
            lower: GROUP_BOUNDS[g],
            upper: GROUP_BOUNDS.get(g + 1).copied(),
            gauc: (den[g] > 0).then(|| num[g] / den[g] as f64),
            users: users[g],
            impressions: den[g],
        })
        .collect();
    Ok(GaucReport {
        status: if total_den > 0 { GaucStatus::Ok } else { GaucStatus::Empty },
        gauc: (total_den > 0).then(|| num.iter().sum::<f64>() / total_den as f64),
        groups,
        users: users.iter().sum(),
        excluded_users: excluded,
        impressions: total_den,
        total_impressions: impressions.len(),
    })
}

/// GAUC with every user grouped by their clicks among `impressions`.
pub fn gauc(impressions: &[(u64, f32, u8)]) -> Result<GaucReport> {
    let mut clicks: HashMap<u64, u64> = HashMap::new();
    for &(u, _, l) in impressions {
        *clicks.entry(u).or_default() += l as u64;
    }
    gauc_grouped(impressions, &clicks)
}
