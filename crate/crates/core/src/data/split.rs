use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Splits instance indices into (train, validation) with `val_fraction` of
/// the data held out and per-class validation counts differing by at most
/// one. Classes too small to supply their share give what they have.
pub fn balanced_split(
    labels: &[usize],
    classes: usize,
    val_fraction: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::config(
            "val_fraction",
            format!("{val_fraction} is outside [0, 1)"),
        ));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::contract(format!("label {l} out of range")));
        }
        by_class[l].push(i);
    }
    for members in &mut by_class {
        members.shuffle(rng);
    }
    let total = (labels.len() as f64 * val_fraction).round() as usize;
    let base = total / classes;
    let extra = total % classes;
    // Which classes take the remainder is itself shuffled so no class is favoured.
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(rng);
    let mut quota = vec![base; classes];
    for &c in order.iter().take(extra) {
        quota[c] += 1;
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        let k = quota[c].min(members.len());
        val.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}
