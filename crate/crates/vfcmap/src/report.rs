//! Metrics report assembly from a store snapshot and a verdict history.
//!
//! Precision figures use consensus decisions over candidates present in the
//! store; per-annotator tallies and pairwise agreement are reported next to
//! them. Every percentage carries its numerator and denominator.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use vfcmap_core::candidate::SourceKind;
use vfcmap_core::metrics::{self, Percent};
use vfcmap_core::review::{self, AgreementTable, Decision, LiveTally, Verdict};
use vfcmap_core::{CandidateStore, Category, OverlapReport};

/// Figures for one source, or for the whole store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFigures {
    pub records: u64,
    pub vfcs: u64,
    pub coverage: Option<Percent>,
    pub tally: LiveTally,
    pub precision_records: Option<Percent>,
    pub precision_vfcs: Option<Percent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySample {
    pub population: u64,
    pub sample_size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub annotators: [String; 2],
    pub table: AgreementTable,
    pub observed_agreement: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub generated_at: DateTime<Utc>,
    pub seed: Option<u64>,
    pub total_records: u64,
    pub candidates: u64,
    pub overall: SourceFigures,
    pub per_source: BTreeMap<SourceKind, SourceFigures>,
    /// Records with at least one identified fix over records sampled, for
    /// manual studies whose counts are supplied from outside the store.
    pub success_rate: Option<Percent>,
    pub sample_sizes: BTreeMap<Category, CategorySample>,
    pub overlap: OverlapReport,
    pub annotators: BTreeMap<String, LiveTally>,
    pub agreement: Vec<PairAgreement>,
    pub disagreements: u64,
    pub unsure: u64,
    /// Verdicts naming candidates absent from the store.
    pub unknown_candidates: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub total_records: u64,
    pub seed: Option<u64>,
    /// `(identified, sampled)` from a manual study.
    pub manual_study: Option<(u64, u64)>,
}

fn figures(
    store: &CandidateStore,
    kind: Option<SourceKind>,
    decided: &BTreeMap<String, Decision>,
    ids: &BTreeMap<String, BTreeSet<SourceKind>>,
    total_records: u64,
) -> SourceFigures {
    let (records, vfcs) = match kind {
        Some(k) => (store.records_from(k).len() as u64, store.vfcs_from(k).len() as u64),
        None => (store.records().len() as u64, store.len() as u64),
    };
    let tally = review::tally_decisions(
        decided
            .iter()
            .filter(|(id, _)| ids.get(id.as_str()).is_some_and(|ks| kind.is_none_or(|k| ks.contains(&k))))
            .map(|(id, d)| (id.as_str(), *d)),
    );
    // Either precision may be undefined on its own (e.g. only Unsure verdicts).
    let precision_records = Percent::new(tally.tally.true_records, tally.tally.sampled_records).ok();
    let precision_vfcs = Percent::new(tally.tally.true_vfcs, tally.tally.candidate_vfcs).ok();
    SourceFigures {
        records,
        vfcs,
        coverage: metrics::coverage(records, total_records).ok(),
        tally,
        precision_records,
        precision_vfcs,
    }
}

/// Pure function of its inputs: identical arguments give identical reports.
pub fn assemble(
    store: &CandidateStore,
    verdicts: &[Verdict],
    inputs: &ReportInputs,
    generated_at: DateTime<Utc>,
) -> MetricsReport {
    let ids: BTreeMap<String, BTreeSet<SourceKind>> = store.iter().map(|c| (c.id(), c.source_kinds())).collect();
    let by_annotator = review::latest_by_annotator(verdicts);
    let (agreed, disagreements) = review::consensus(&by_annotator);
    let decided: BTreeMap<String, Decision> =
        agreed.into_iter().filter(|(id, _)| ids.contains_key(id)).collect();

    let overall = figures(store, None, &decided, &ids, inputs.total_records);
    let per_source = SourceKind::ALL
        .iter()
        .map(|k| (*k, figures(store, Some(*k), &decided, &ids, inputs.total_records)))
        .collect();

    let mut populations: BTreeMap<Category, BTreeSet<&str>> = BTreeMap::new();
    for c in store.iter() {
        populations.entry(c.category).or_default().insert(c.cve_id.as_str());
    }
    let sample_sizes = populations
        .into_iter()
        .map(|(cat, recs)| {
            let population = recs.len() as u64;
            let n = metrics::default_sample_size(population).unwrap_or(0);
            (cat, CategorySample { population, sample_size: n.min(population) })
        })
        .collect();

    let annotators: BTreeMap<String, LiveTally> = by_annotator
        .iter()
        .map(|(a, ds)| {
            let known = ds.iter().filter(|(id, _)| ids.contains_key(id.as_str()));
            (a.clone(), review::tally_decisions(known.map(|(id, d)| (id.as_str(), *d))))
        })
        .collect();
    let names: Vec<&String> = by_annotator.keys().collect();
    let mut agreement = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let table = review::agreement_table(&by_annotator[names[i]], &by_annotator[names[j]]);
            agreement.push(PairAgreement {
                annotators: [names[i].clone(), names[j].clone()],
                table,
                observed_agreement: (table.total() > 0).then(|| table.observed_agreement()),
                kappa: table.kappa().ok(),
            });
        }
    }
    let unknown_candidates = verdicts
        .iter()
        .map(|v| v.candidate_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|id| !ids.contains_key(*id))
        .count() as u64;

    MetricsReport {
        generated_at,
        seed: inputs.seed,
        total_records: inputs.total_records,
        candidates: store.len() as u64,
        unsure: overall.tally.unsure,
        overall,
        per_source,
        success_rate: inputs.manual_study.and_then(|(i, s)| metrics::success_rate(i, s).ok()),
        sample_sizes,
        overlap: store.overlap(&SourceKind::ALL.into_iter().collect()),
        annotators,
        agreement,
        disagreements,
        unknown_candidates,
    }
}
