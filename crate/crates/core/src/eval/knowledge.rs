//! Taxonomic compliance, readout centrality, and rank correlation.

use crate::error::{Error, Result};
use crate::net::InstanceTrace;

/// Among instances misclassified at step `t`, the fraction whose predicted
/// fine class still falls in the true coarse class. `None` when nothing is
/// misclassified.
pub fn taxonomic_compliance(
    traces: &[InstanceTrace],
    fine_labels: &[usize],
    coarse_map: &[usize],
    t: usize,
) -> Result<Option<f64>> {
    if traces.len() != fine_labels.len() {
        return Err(Error::contract("one label per trace"));
    }
    let (mut wrong, mut compliant) = (0usize, 0usize);
    for (tr, &y) in traces.iter().zip(fine_labels) {
        if t == 0 || t > tr.steps() {
            return Err(Error::contract(format!(
                "step {t} outside a {}-step trace",
                tr.steps()
            )));
        }
        let p = tr.predicted(t);
        if tr.classes() > coarse_map.len() || y >= coarse_map.len() {
            return Err(Error::contract("coarse map does not cover every class"));
        }
        if p != y {
            wrong += 1;
            compliant += usize::from(coarse_map[p] == coarse_map[y]);
        }
    }
    Ok((wrong > 0).then(|| compliant as f64 / wrong as f64))
}

pub const COMPLIANCE_HEADER: &str = "t,compliance";

/// Compliance at every step; undefined steps leave the field empty.
pub fn compliance_csv(values: &[Option<f64>]) -> String {
    let mut s = format!("{COMPLIANCE_HEADER}\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!(
            "{},{}\n",
            i + 1,
            v.map(|x| x.to_string()).unwrap_or_default()
        ));
    }
    s
}

/// Cosine similarity of an embedding and a readout weight vector.
pub fn centrality(embedding: &[f64], weight_row: &[f64]) -> Result<f64> {
    if embedding.len() != weight_row.len() {
        return Err(Error::shape(
            "centrality",
            &[weight_row.len()],
            &[embedding.len()],
        ));
    }
    let dot: f64 = embedding.iter().zip(weight_row).map(|(a, b)| a * b).sum();
    let na = embedding.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = weight_row.iter().map(|b| b * b).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Spearman rank correlation; `None` if either input is constant or there
/// are fewer than two pairs.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::shape("spearman_rho", &[x.len()], &[y.len()]));
    }
    if x.len() < 2 {
        return Ok(None);
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn spearman_trivial() {
        let x = [1.0, 4.0, 2.0, 8.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman_rho(&x, &x).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman_rho(&x, &neg).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(spearman_rho(&x, &[1.0; 4]).unwrap(), None);
    }

    #[test]
    fn centrality_trivial() {
        assert!((centrality(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(centrality(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn compliance_hand_case() {
        let tr = |c: usize| {
            let mut p = vec![0.1; 4];
            p[c] = 0.7;
            InstanceTrace::from_probs(vec![p]).unwrap()
        };
        // Coarse groups {0,1} and {2,3}.
        let map = [0, 0, 1, 1];
        let traces = [tr(0), tr(1), tr(2), tr(3), tr(0), tr(2)];
        let labels = [0, 0, 3, 0, 1, 2];
        // Errors: #1 (1 for 0, compliant), #2 (2 for 3, compliant),
        // #3 (3 for 0, not), #4 (0 for 1, compliant).
        assert_eq!(
            taxonomic_compliance(&traces, &labels, &map, 1).unwrap(),
            Some(0.75)
        );
        assert_eq!(
            taxonomic_compliance(&traces[..1], &labels[..1], &map, 1).unwrap(),
            None
        );
        assert_eq!(
            compliance_csv(&[Some(0.75), None]),
            "t,compliance\n1,0.75\n2,\n"
        );
    }
}
