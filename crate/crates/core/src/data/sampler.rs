use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::records::{Dataset, RangeTag};

/// The exact (identity, domain, record) composition of one mini-batch:
/// P identities, K/N_D records per identity per domain.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    /// (identity, domain, record index), grouped by identity then domain.
    pub entries: Vec<(usize, usize, usize)>,
    pub p: usize,
    pub k_batch: usize,
    pub n_d: usize,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Draw one domain-balanced PK batch. Identities are drawn without
/// replacement; a cell short on images is resampled with replacement.
/// With `range_pairing`, each per-domain pick alternates short/long range.
pub fn sample_batch(
    ds: &Dataset,
    p: usize,
    k_batch: usize,
    n_d: usize,
    range_pairing: bool,
    rng: &mut ChaCha8Rng,
) -> Result<BatchPlan> {
    if n_d == 0 || k_batch % n_d != 0 {
        return Err(Error::Sampler(format!(
            "k_batch {k_batch} must be divisible by n_d {n_d}"
        )));
    }
    if n_d > ds.n_domains {
        return Err(Error::Sampler(format!(
            "n_d {n_d} exceeds dataset domain count {}",
            ds.n_domains
        )));
    }
    let k_pd = k_batch / n_d;
    if range_pairing && k_pd % 2 != 0 {
        return Err(Error::Sampler(format!(
            "range pairing needs an even per-domain count, got {k_pd}"
        )));
    }

    // identities usable for this batch: at least one record in every domain
    let eligible: Vec<usize> = (0..ds.n_ids)
        .filter(|&id| (0..n_d).all(|d| ds.records.iter().any(|r| r.identity == id && r.domain == d)))
        .collect();
    if p > eligible.len() {
        return Err(Error::Sampler(format!(
            "requested {p} identities but only {} are eligible",
            eligible.len()
        )));
    }
    let mut ids = eligible;
    ids.shuffle(rng);
    ids.truncate(p);

    let mut entries = Vec::with_capacity(p * k_batch);
    for &id in &ids {
        for domain in 0..n_d {
            let cell = ds.cell(id, domain);
            let picks = if range_pairing {
                let short: Vec<usize> = cell
                    .iter()
                    .copied()
                    .filter(|&i| ds.records[i].range_tag == RangeTag::Short)
                    .collect();
                let long: Vec<usize> = cell
                    .iter()
                    .copied()
                    .filter(|&i| ds.records[i].range_tag == RangeTag::Long)
                    .collect();
                if short.is_empty() || long.is_empty() {
                    return Err(Error::Sampler(format!(
                        "identity {id} domain {domain} lacks both range conditions"
                    )));
                }
                let mut picks = Vec::with_capacity(k_pd);
                for _ in 0..k_pd / 2 {
                    picks.push(draw(&short, 1, rng)[0]);
                    picks.push(draw(&long, 1, rng)[0]);
                }
                picks
            } else {
                draw(&cell, k_pd, rng)
            };
            for rec in picks {
                entries.push((id, domain, rec));
            }
        }
    }
    Ok(BatchPlan {
        entries,
        p,
        k_batch,
        n_d,
    })
}

/// n picks from a cell: without replacement when it is large enough,
/// with replacement otherwise.
fn draw(cell: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(!cell.is_empty(), "draw from an empty cell");
    if cell.len() >= n {
        let mut shuffled = cell.to_vec();
        shuffled.shuffle(rng);
        shuffled.truncate(n);
        shuffled
    } else {
        (0..n).map(|_| cell[rng.random_range(0..cell.len())]).collect()
    }
}
