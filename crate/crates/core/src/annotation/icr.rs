//! Inter-coder reliability: Cohen's κ for coder pairs, Fleiss' κ across all
//! coders.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AnnotationRecord, CoderKind};
use crate::taxonomy::normalize_label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IcrError {
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no units to compare")]
    EmptyInput,
    #[error("rows of the count table do not all have {expected} categories summing to {coders} coders (row {row})")]
    RaggedRows { row: usize, expected: usize, coders: u64 },
    #[error("agreement needs at least two coders, found {0}")]
    FewerThanTwoCoders(usize),
    #[error("records span several templates: {0:?}")]
    MixedTemplates(Vec<String>),
    #[error("coder {coder} labeled unit {unit} more than once")]
    DuplicateRecord { coder: String, unit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohenResult {
    pub kappa: f64,
    pub observed: f64,
    pub expected: f64,
    pub n_units: usize,
    /// Chance agreement is 1, so κ is defined by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleissResult {
    pub kappa: f64,
    pub observed: f64,
    pub expected: f64,
    pub n_units: usize,
    pub n_coders: usize,
    pub n_categories: usize,
    pub degenerate: bool,
}

fn kappa_from(observed: f64, expected: f64, degenerate: bool) -> f64 {
    if degenerate {
        if observed == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (observed - expected) / (1.0 - expected)
    }
}

/// Cohen's κ for two coders labeling the same units in the same order.
pub fn cohen_kappa<S: AsRef<str>>(a: &[S], b: &[S]) -> Result<CohenResult, IcrError> {
    if a.len() != b.len() {
        return Err(IcrError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(IcrError::EmptyInput);
    }
    let n = a.len() as u64;
    let mut matches = 0u64;
    let mut marginals: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.as_ref(), y.as_ref());
        if x == y {
            matches += 1;
        }
        marginals.entry(x).or_default().0 += 1;
        marginals.entry(y).or_default().1 += 1;
    }
    let chance: u64 = marginals.values().map(|(ca, cb)| ca * cb).sum();
    let observed = matches as f64 / n as f64;
    let expected = chance as f64 / (n * n) as f64;
    let degenerate = chance == n * n;
    Ok(CohenResult {
        kappa: kappa_from(observed, expected, degenerate),
        observed,
        expected,
        n_units: a.len(),
        degenerate,
    })
}

/// Fleiss' κ over a units × categories table of label counts. Every row must
/// sum to the same number of coders.
pub fn fleiss_kappa(counts: &[Vec<u64>]) -> Result<FleissResult, IcrError> {
    let first = counts.first().ok_or(IcrError::EmptyInput)?;
    let k = first.len();
    let n: u64 = first.iter().sum();
    for (row, r) in counts.iter().enumerate() {
        if r.len() != k || r.iter().sum::<u64>() != n {
            return Err(IcrError::RaggedRows { row, expected: k, coders: n });
        }
    }
    if n < 2 {
        return Err(IcrError::FewerThanTwoCoders(n as usize));
    }
    let units = counts.len() as u64;
    let mut columns = vec![0u64; k];
    let mut agreeing_pairs = 0u64;
    for r in counts {
        for (c, &v) in r.iter().enumerate() {
            columns[c] += v;
            agreeing_pairs += v * v.saturating_sub(1);
        }
    }
    let total = units * n;
    let observed = agreeing_pairs as f64 / (units * n * (n - 1)) as f64;
    let square_sum: u64 = columns.iter().map(|c| c * c).sum();
    let expected = square_sum as f64 / (total * total) as f64;
    let degenerate = square_sum == total * total;
    Ok(FleissResult {
        kappa: kappa_from(observed, expected, degenerate),
        observed,
        expected,
        n_units: counts.len(),
        n_coders: n as usize,
        n_categories: columns.iter().filter(|&&c| c > 0).count(),
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairKind {
    HumanHuman,
    HumanLlm,
    LlmLlm,
}

impl PairKind {
    fn of(a: CoderKind, b: CoderKind) -> Self {
        match (a, b) {
            (CoderKind::Human, CoderKind::Human) => PairKind::HumanHuman,
            (CoderKind::Llm, CoderKind::Llm) => PairKind::LlmLlm,
            _ => PairKind::HumanLlm,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairKind::HumanHuman => "human-human",
            PairKind::HumanLlm => "human-LLM",
            PairKind::LlmLlm => "LLM-LLM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseEntry {
    pub coder_a: String,
    pub coder_b: String,
    pub kind: PairKind,
    pub kappa: f64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub n_units: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub template_id: String,
    pub coder_ids: Vec<String>,
    pub pairwise: Vec<PairwiseEntry>,
    pub pooled: FleissResult,
    /// Units that some coder did not label; they are left out of every statistic.
    pub dropped_units: usize,
}

impl AgreementReport {
    /// The entry for a coder pair, in either order.
    pub fn pair(&self, a: &str, b: &str) -> Option<&PairwiseEntry> {
        self.pairwise
            .iter()
            .find(|e| (e.coder_a == a && e.coder_b == b) || (e.coder_a == b && e.coder_b == a))
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "template {}: {} coders, {} units ({} dropped)\n",
            self.template_id,
            self.coder_ids.len(),
            self.pooled.n_units,
            self.dropped_units
        );
        for e in &self.pairwise {
            out.push_str(&format!(
                "{} ~ {} ({}): κ = {:.3}, p_o = {:.3}, p_e = {:.3}, n = {}{}\n",
                e.coder_a,
                e.coder_b,
                e.kind.as_str(),
                e.kappa,
                e.observed_agreement,
                e.expected_agreement,
                e.n_units,
                if e.degenerate { " (degenerate)" } else { "" }
            ));
        }
        out.push_str(&format!(
            "pooled Fleiss κ = {:.3} over {} units, {} coders, {} categories{}\n",
            self.pooled.kappa,
            self.pooled.n_units,
            self.pooled.n_coders,
            self.pooled.n_categories,
            if self.pooled.degenerate { " (degenerate)" } else { "" }
        ));
        out
    }
}

/// Pairwise and pooled agreement over the units every coder labeled. Labels
/// are compared after normalization.
pub fn agreement_report(records: &[AnnotationRecord]) -> Result<AgreementReport, IcrError> {
    let templates: BTreeSet<&str> = records.iter().map(|r| r.template_id.as_str()).collect();
    if templates.len() > 1 {
        return Err(IcrError::MixedTemplates(templates.into_iter().map(String::from).collect()));
    }
    let mut coders: BTreeMap<&str, (CoderKind, BTreeMap<usize, String>)> = BTreeMap::new();
    for r in records {
        let entry = coders.entry(&r.coder_id).or_insert_with(|| (r.coder_kind, BTreeMap::new()));
        if entry.1.insert(r.unit_index, normalize_label(&r.label)).is_some() {
            return Err(IcrError::DuplicateRecord {
                coder: r.coder_id.clone(),
                unit: r.unit_index,
            });
        }
    }
    if coders.len() < 2 {
        return Err(IcrError::FewerThanTwoCoders(coders.len()));
    }
    let all_units: BTreeSet<usize> = coders.values().flat_map(|(_, m)| m.keys().copied()).collect();
    let common: Vec<usize> = all_units
        .iter()
        .copied()
        .filter(|u| coders.values().all(|(_, m)| m.contains_key(u)))
        .collect();
    if common.is_empty() {
        return Err(IcrError::EmptyInput);
    }
    let ids: Vec<&str> = coders.keys().copied().collect();
    let column = |id: &str| -> Vec<&str> { common.iter().map(|u| coders[id].1[u].as_str()).collect() };

    let mut pairwise = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            let c = cohen_kappa(&column(a), &column(b))?;
            pairwise.push(PairwiseEntry {
                coder_a: a.to_string(),
                coder_b: b.to_string(),
                kind: PairKind::of(coders[a].0, coders[b].0),
                kappa: c.kappa,
                observed_agreement: c.observed,
                expected_agreement: c.expected,
                n_units: c.n_units,
                degenerate: c.degenerate,
            });
        }
    }

    let categories: BTreeSet<&str> = coders.values().flat_map(|(_, m)| common.iter().map(move |u| m[u].as_str())).collect();
    let index: BTreeMap<&str, usize> = categories.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let table: Vec<Vec<u64>> = common
        .iter()
        .map(|u| {
            let mut row = vec![0u64; categories.len()];
            for (_, m) in coders.values() {
                row[index[m[u].as_str()]] += 1;
            }
            row
        })
        .collect();
    let pooled = fleiss_kappa(&table)?;

    Ok(AgreementReport {
        template_id: templates.into_iter().next().unwrap_or_default().to_string(),
        coder_ids: ids.iter().map(|s| s.to_string()).collect(),
        pairwise,
        pooled,
        dropped_units: all_units.len() - common.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(spec: &[(&'static str, usize)]) -> Vec<&'static str> {
        spec.iter().flat_map(|(l, n)| std::iter::repeat_n(*l, *n)).collect()
    }

    #[test]
    fn cohen_reference_cases() {
        let same = labels(&[("A", 4), ("B", 6)]);
        assert_eq!(cohen_kappa(&same, &same).unwrap().kappa, 1.0);

        // rows: coder a, columns: coder b
        let a = labels(&[("Y", 20), ("Y", 5), ("N", 10), ("N", 15)]);
        let b = labels(&[("Y", 20), ("N", 5), ("Y", 10), ("N", 15)]);
        let c = cohen_kappa(&a, &b).unwrap();
        assert!((c.observed - 0.7).abs() < 1e-12);
        assert!((c.expected - 0.5).abs() < 1e-12);
        assert!((c.kappa - 0.4).abs() < 1e-12);

        let a = labels(&[("X", 50)]);
        let b = labels(&[("X", 25), ("Y", 25)]);
        let c = cohen_kappa(&a, &b).unwrap();
        assert_eq!((c.observed, c.expected, c.kappa), (0.5, 0.5, 0.0));

        assert_eq!(cohen_kappa(&["A"], &["A", "B"]), Err(IcrError::LengthMismatch(1, 2)));
        assert_eq!(cohen_kappa::<&str>(&[], &[]), Err(IcrError::EmptyInput));
        let d = cohen_kappa(&["A", "A"], &["A", "A"]).unwrap();
        assert!(d.degenerate && d.kappa == 1.0);
    }

    #[test]
    fn fleiss_reference_cases() {
        let f = fleiss_kappa(&[vec![2, 0], vec![1, 1]]).unwrap();
        assert!((f.observed - 0.5).abs() < 1e-12);
        assert!((f.expected - 0.625).abs() < 1e-12);
        assert!((f.kappa + 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(fleiss_kappa(&[vec![3, 0], vec![0, 3]]).unwrap().kappa, 1.0);
        let d = fleiss_kappa(&[vec![3], vec![3]]).unwrap();
        assert!(d.degenerate && d.kappa == 1.0);
        assert!(matches!(fleiss_kappa(&[vec![2, 0], vec![1, 2]]), Err(IcrError::RaggedRows { row: 1, .. })));
        assert!(matches!(fleiss_kappa(&[vec![1, 0]]), Err(IcrError::FewerThanTwoCoders(1))));
        assert!(matches!(fleiss_kappa(&[]), Err(IcrError::EmptyInput)));
    }

    fn rec(coder: &str, kind: CoderKind, unit: usize, label: &str) -> AnnotationRecord {
        AnnotationRecord {
            coder_id: coder.into(),
            coder_kind: kind,
            template_id: "t1".into(),
            unit_index: unit,
            label: label.into(),
            note: None,
        }
    }

    #[test]
    fn report_pairs_and_drops() {
        let mut recs = Vec::new();
        for u in 0..4 {
            let l = if u % 2 == 0 { "Clarity" } else { "Tone" };
            recs.push(rec("alice", CoderKind::Human, u, l));
            recs.push(rec("bob", CoderKind::Human, u, &l.to_lowercase()));
            if u != 3 {
                recs.push(rec("gpt", CoderKind::Llm, u, l));
            }
        }
        let r = agreement_report(&recs).unwrap();
        assert_eq!(r.pairwise.len(), 3);
        assert_eq!(r.dropped_units, 1);
        assert_eq!(r.pooled.n_units, 3);
        assert_eq!(r.pooled.kappa, 1.0);
        assert_eq!(r.pair("gpt", "alice").unwrap().kind, PairKind::HumanLlm);
        assert_eq!(r.pair("bob", "alice").unwrap().kappa, 1.0);
        assert!(r.render_table().contains("κ = 1.000"));
    }

    #[test]
    fn report_errors() {
        let one = vec![rec("a", CoderKind::Human, 0, "X")];
        assert_eq!(agreement_report(&one), Err(IcrError::FewerThanTwoCoders(1)));
        let mut dup = one.clone();
        dup.push(rec("a", CoderKind::Human, 0, "Y"));
        assert!(matches!(agreement_report(&dup), Err(IcrError::DuplicateRecord { .. })));
        let mut mixed = one;
        let mut other = rec("b", CoderKind::Human, 0, "X");
        other.template_id = "t2".into();
        mixed.push(other);
        assert!(matches!(agreement_report(&mixed), Err(IcrError::MixedTemplates(_))));
    }

    fn oracle_cohen(a: &[u8], b: &[u8]) -> f64 {
        let n = a.len() as f64;
        let po = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
        let mut pe = 0.0;
        for c in 0..5u8 {
            let pa = a.iter().filter(|&&x| x == c).count() as f64 / n;
            let pb = b.iter().filter(|&&x| x == c).count() as f64 / n;
            pe += pa * pb;
        }
        if pe == 1.0 {
            return if po == 1.0 { 1.0 } else { 0.0 };
        }
        (po - pe) / (1.0 - pe)
    }

    proptest! {
        #[test]
        fn cohen_matches_oracle_and_is_symmetric(pairs in prop::collection::vec((0u8..5, 0u8..5), 1..50)) {
            let a: Vec<String> = pairs.iter().map(|p| p.0.to_string()).collect();
            let b: Vec<String> = pairs.iter().map(|p| p.1.to_string()).collect();
            let ab = cohen_kappa(&a, &b).unwrap();
            let ba = cohen_kappa(&b, &a).unwrap();
            let raw_a: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let raw_b: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            prop_assert!((ab.kappa - oracle_cohen(&raw_a, &raw_b)).abs() < 1e-12);
            prop_assert_eq!(ab.kappa, ba.kappa);
            let renamed = |v: &[String]| v.iter().map(|s| format!("cat-{}", 9 - s.parse::<u8>().unwrap())).collect::<Vec<_>>();
            prop_assert!((cohen_kappa(&renamed(&a), &renamed(&b)).unwrap().kappa - ab.kappa).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab.kappa));
        }
    }
}
