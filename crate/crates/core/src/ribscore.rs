//! Six-criterion RibScore from a patient's classified fractures.
//!
//! | flag | criterion |
//! |------|-----------|
//! | A | six or more fractures |
//! | B | fractures on both sides |
//! | C | flail chest |
//! | D | three or more severely displaced fractures |
//! | E | a first-rib fracture |
//! | F | fractures in all of anterior, lateral and posterior areas |
//!
//! Flail chest is taken from the annotations' flail flags. When no fracture
//! carries the flag, it is derived instead: three or more consecutive ribs on
//! one side, each fractured at least twice.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::annotation::{Displacement, FractureAnnotation, Location, Side};

pub const CRITERIA: [char; 6] = ['A', 'B', 'C', 'D', 'E', 'F'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RibScoreReport {
    pub patient_id: String,
    /// Flags A through F.
    pub flags: [bool; 6],
    pub score: u8,
    /// Serials supporting each flag; empty exactly when the flag is false.
    pub evidence: [Vec<u32>; 6],
}

impl RibScoreReport {
    pub fn flag(&self, criterion: char) -> bool {
        CRITERIA
            .iter()
            .position(|&c| c == criterion)
            .is_some_and(|i| self.flags[i])
    }
}

fn serials<'a>(it: impl Iterator<Item = &'a FractureAnnotation>) -> Vec<u32> {
    let mut v: Vec<u32> = it.map(|f| f.fracture_serial).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Fractures forming a derived flail segment, if any.
fn derived_flail(fractures: &[FractureAnnotation]) -> Vec<u32> {
    let mut per_rib: BTreeMap<(Side, u8), Vec<&FractureAnnotation>> = BTreeMap::new();
    for f in fractures {
        per_rib.entry((f.rib_side, f.rib_number)).or_default().push(f);
    }
    let mut out = BTreeSet::new();
    for side in Side::ALL {
        let mut run: Vec<u8> = Vec::new();
        let mut flush = |run: &mut Vec<u8>| {
            if run.len() >= 3 {
                for rib in run.iter() {
                    out.extend(per_rib[&(*side, *rib)].iter().map(|f| f.fracture_serial));
                }
            }
            run.clear();
        };
        for rib in 1..=12u8 {
            if per_rib.get(&(*side, rib)).is_some_and(|v| v.len() >= 2) {
                run.push(rib);
            } else {
                flush(&mut run);
            }
        }
        flush(&mut run);
    }
    out.into_iter().collect()
}

pub fn compute_ribscore(patient_id: &str, fractures: &[FractureAnnotation]) -> RibScoreReport {
    let mut evidence: [Vec<u32>; 6] = Default::default();

    if fractures.len() >= 6 {
        evidence[0] = serials(fractures.iter());
    }
    let has_side = |s: Side| fractures.iter().any(|f| f.rib_side == s);
    if has_side(Side::Left) && has_side(Side::Right) {
        evidence[1] = serials(fractures.iter());
    }
    let flagged = serials(fractures.iter().filter(|f| f.flail_contributor));
    evidence[2] = if flagged.is_empty() { derived_flail(fractures) } else { flagged };
    let severe = serials(
        fractures
            .iter()
            .filter(|f| f.displacement == Displacement::SeverelyDisplaced),
    );
    if severe.len() >= 3 {
        evidence[3] = severe;
    }
    evidence[4] = serials(fractures.iter().filter(|f| f.rib_number == 1));
    if Location::ALL
        .iter()
        .all(|l| fractures.iter().any(|f| f.location == *l))
    {
        evidence[5] = serials(fractures.iter());
    }

    let flags = [0, 1, 2, 3, 4, 5].map(|i| !evidence[i].is_empty());
    RibScoreReport {
        patient_id: patient_id.to_string(),
        flags,
        score: flags.iter().filter(|&&f| f).count() as u8,
        evidence,
    }
}
