use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Most correlated partner of every item under inverse user frequency:
/// `corr(i, j) = |N(i) & N(j)| / sqrt(|N(i)| |N(j)|)` where `N(i)` is the set
/// of users who consumed `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionTable {
    partners: Vec<usize>,
}

impl SubstitutionTable {
    pub fn from_partners(partners: Vec<usize>) -> Self {
        Self { partners }
    }

    pub fn partner(&self, item: usize) -> usize {
        self.partners[item]
    }

    pub fn partners(&self) -> &[usize] {
        &self.partners
    }

    pub fn len(&self) -> usize {
        self.partners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partners.is_empty()
    }
}

/// Per-item user counts and pairwise co-occurrence counts.
struct Cooccurrence {
    users: Vec<u32>,
    pairs: Vec<HashMap<usize, u32>>,
}

fn cooccurrence(num_items: usize, sequences: &[Vec<usize>]) -> Cooccurrence {
    let mut users = vec![0u32; num_items];
    let mut pairs = vec![HashMap::new(); num_items];
    for seq in sequences {
        let mut distinct = seq.clone();
        distinct.sort_unstable();
        distinct.dedup();
        for (a, &i) in distinct.iter().enumerate() {
            users[i] += 1;
            for &j in &distinct[a + 1..] {
                *pairs[i].entry(j).or_insert(0) += 1;
                *pairs[j].entry(i).or_insert(0) += 1;
            }
        }
    }
    Cooccurrence { users, pairs }
}

/// Inverse-user-frequency correlation of two items given per-user sequences.
pub fn item_correlation(sequences: &[Vec<usize>], i: usize, j: usize) -> f64 {
    let (mut ni, mut nj, mut both) = (0u32, 0u32, 0u32);
    for seq in sequences {
        let (hi, hj) = (seq.contains(&i), seq.contains(&j));
        ni += u32::from(hi);
        nj += u32::from(hj);
        both += u32::from(hi && hj);
    }
    if ni == 0 || nj == 0 {
        0.0
    } else {
        f64::from(both) / (f64::from(ni) * f64::from(nj)).sqrt()
    }
}

/// Builds the table from per-user training sequences. Ties go to the
/// smaller item index; items without any co-occurring partner map to
/// themselves.
pub fn build_substitution_table(num_items: usize, sequences: &[Vec<usize>]) -> SubstitutionTable {
    let co = cooccurrence(num_items, sequences);
    let partners = (0..num_items)
        .map(|i| {
            let mut best: Option<(f64, usize)> = None;
            for (&j, &n) in &co.pairs[i] {
                let corr = f64::from(n) / (f64::from(co.users[i]) * f64::from(co.users[j])).sqrt();
                let better = match best {
                    None => true,
                    Some((c, b)) => corr > c || (corr == c && j < b),
                };
                if better {
                    best = Some((corr, j));
                }
            }
            best.map_or(i, |(_, j)| j)
        })
        .collect();
    SubstitutionTable { partners }
}
