//! Hand-scored expectations for the 25-subtask evaluation mini-set in
//! `tests/fixtures/eval`. Every per-question outcome below was decided by
//! reading the fixture. Caption BLEU comes from the brute-force text oracle.
//! Fingerprint similarities (TOMG quality and novelty) are looked up with
//! the fingerprint primitives, which have their own oracle tests; the
//! success, validity and aggregation decisions are all made here.

use std::collections::BTreeMap;
use std::path::PathBuf;

use protochem::chemsim::{fingerprint, tanimoto, FingerprintKind};
use protochem::molgraph::parse_smiles;

use super::text_oracle;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/eval")
}

/// Reference set used for MolCustom novelty, as in `reference.smi`.
const REFERENCE: &[&str] = &["CCO", "c1ccccc1", "CC(=O)O"];

enum Quality {
    One,
    Sim(&'static str, &'static str),
    Novelty(&'static str),
}

enum Hand {
    Score(f64),
    Caption(&'static str, &'static str),
    Tomg { success: bool, quality: Option<Quality> },
}

fn sim(a: &str, b: &str) -> f64 {
    let kind = FingerprintKind::Morgan { radius: 2, nbits: 2048 };
    let fa = fingerprint(&parse_smiles(a).unwrap(), kind).unwrap();
    let fb = fingerprint(&parse_smiles(b).unwrap(), kind).unwrap();
    tanimoto(&fa, &fb).unwrap()
}

fn novelty(s: &str) -> f64 {
    1.0 - REFERENCE.iter().map(|r| sim(s, r)).sum::<f64>() / REFERENCE.len() as f64
}

fn value(q: &Quality) -> f64 {
    match q {
        Quality::One => 1.0,
        Quality::Sim(a, b) => sim(a, b),
        Quality::Novelty(s) => novelty(s),
    }
}

fn table() -> Vec<(&'static str, Vec<Hand>)> {
    use Hand::*;
    use Quality::*;
    let t = |success, q| Tomg { success, quality: q };
    vec![
        // "Ethanol" equals "ethanol" after case folding; propan-1-ol is a different name.
        ("name.smiles2iupac", vec![Score(1.0), Score(0.0)]),
        // OCC is ethanol; the second output has no answer tags.
        ("name.iupac2smiles", vec![Score(1.0), Score(0.0)]),
        ("prop.bace", vec![Score(1.0), Score(0.0)]),
        ("prop.bbbp", vec![Score(1.0), Score(1.0)]),
        // "Probably no" is not a bare Yes/No.
        ("prop.clintox", vec![Score(0.0), Score(0.0)]),
        ("prop.hiv", vec![Score(1.0)]),
        // The last answer span of t2 is blank.
        ("prop.tox21", vec![Score(1.0), Score(0.0), Score(1.0)]),
        // OC(C)=O is acetic acid; aniline is not phenol.
        ("design.chebi20", vec![Score(1.0), Score(0.0)]),
        (
            "caption.chebi20",
            vec![
                Caption(
                    "the molecule is a primary alcohol found in wine",
                    "the molecule is a primary alcohol found in wine",
                ),
                Caption(
                    "the molecule is a primary amine derived from ethane",
                    "the molecule is a primary amine that is ethane substituted by an amino group",
                ),
            ],
        ),
        // Butanol has one more hydroxyl than butane; benzene is unchanged; C1CC is an open ring.
        (
            "tomg.moledit.add",
            vec![t(true, Some(Sim("CCCC", "OCCCC"))), t(false, Some(One)), t(false, None)],
        ),
        // Butanol has one hydroxyl fewer than butanediol; the second answer is the source.
        ("tomg.moledit.del", vec![t(true, Some(Sim("OCCCCO", "OCCCC"))), t(false, Some(One))]),
        // Chlorobenzene to phenol swaps the halide for a hydroxyl; NCCCBr keeps the bromide.
        (
            "tomg.moledit.sub",
            vec![
                t(true, Some(Sim("Clc1ccccc1", "Oc1ccccc1"))),
                t(false, Some(Sim("BrCCC", "NCCCBr"))),
            ],
        ),
        // An extra CH2 adds C.sp3 + 2 H.carbon = +0.3901 to LogP, so the
        // increase succeeds and the requested decrease fails.
        (
            "tomg.molopt.logp",
            vec![
                t(true, Some(Sim("CCCO", "CCCCO"))),
                t(false, Some(Sim("CCCCCC", "CCCCCCC"))),
            ],
        ),
        // An extra CH2 adds 2.503 + 2 x 1.057 MR; Br (8.927) exceeds Cl (5.853).
        (
            "tomg.molopt.mr",
            vec![t(true, Some(Sim("CCO", "CCCO"))), t(false, Some(Sim("CCCl", "CCBr")))],
        ),
        // Table values: CCO 0.41 -> phenol 0.47 rises; acetic acid 0.43 -> methyl acetate 0.38 falls.
        (
            "tomg.molopt.qed",
            vec![
                t(true, Some(Sim("CCO", "Oc1ccccc1"))),
                t(false, Some(Sim("CC(=O)O", "CC(=O)OC"))),
            ],
        ),
        // CCCO has 3 C and 1 O; pentane has 5 heavy atoms, not 6.
        (
            "tomg.molcustom.atomnum",
            vec![t(true, Some(Novelty("CCCO"))), t(false, Some(Novelty("CCCCC")))],
        ),
        // Acetone: two C-C single bonds and one C=O; propene has no triple bond.
        (
            "tomg.molcustom.bondnum",
            vec![t(true, Some(Novelty("CC(C)=O"))), t(false, Some(Novelty("CC=C")))],
        ),
        // Benzoic acid has one carboxylic acid; ethylene glycol has two alcohols.
        (
            "tomg.molcustom.fg",
            vec![t(true, Some(Novelty("OC(=O)c1ccccc1"))), t(true, Some(Novelty("OCCO")))],
        ),
        // 85.2 > 70 is Yes; 70 is not above the threshold, so the gold is No.
        ("yield.buchwald_hartwig", vec![Score(1.0), Score(0.0)]),
        // 45 > 40 (record threshold) is Yes.
        ("yield.suzuki", vec![Score(1.0), Score(1.0)]),
        ("reagent.reactant", vec![Score(1.0), Score(0.0)]),
        // C(Cl)Cl is dichloromethane; "DMF" is neither a SMILES nor the gold text.
        ("reagent.solvent", vec![Score(1.0), Score(0.0)]),
        // XPhos is third of three; BINAP is sixth, outside the top 5.
        ("reagent.ligand", vec![Score(1.0), Score(0.0)]),
        // Component order does not matter; an extra water does.
        ("reaction.uspto_mixed", vec![Score(1.0), Score(1.0), Score(0.0)]),
        ("retro.uspto_50k", vec![Score(1.0), Score(0.0)]),
    ]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Expected primary score per subtask under the product-of-means WSR form.
pub fn expected_primaries() -> BTreeMap<String, f64> {
    table()
        .into_iter()
        .map(|(task, hands)| {
            let tomg: Vec<(bool, Option<f64>)> = hands
                .iter()
                .filter_map(|h| match h {
                    Hand::Tomg { success, quality } => Some((*success, quality.as_ref().map(value))),
                    _ => None,
                })
                .collect();
            let primary = if !tomg.is_empty() {
                let sr = tomg.iter().filter(|(s, _)| *s).count() as f64 / tomg.len() as f64;
                let valid: Vec<f64> = tomg.iter().filter_map(|(_, q)| *q).collect();
                let q = if valid.is_empty() { 0.0 } else { mean(&valid) };
                sr * q
            } else {
                let scores: Vec<f64> = hands
                    .iter()
                    .map(|h| match h {
                        Hand::Score(s) => *s,
                        Hand::Caption(c, r) => text_oracle::bleu(
                            &text_oracle::tokens(c),
                            &[text_oracle::tokens(r)],
                            4,
                        ),
                        Hand::Tomg { .. } => unreachable!(),
                    })
                    .collect();
                mean(&scores)
            };
            (task.to_string(), primary)
        })
        .collect()
}

/// Expected macro score per family column name, from the subtask primaries.
pub fn expected_macros() -> BTreeMap<&'static str, f64> {
    let p = expected_primaries();
    let family = |prefix: &str| -> f64 {
        let v: Vec<f64> = p
            .iter()
            .filter(|(k, _)| k.split('.').next() == Some(prefix))
            .map(|(_, v)| *v)
            .collect();
        mean(&v)
    };
    BTreeMap::from([
        ("Name", family("name")),
        ("Prop.", family("prop")),
        ("Design", family("design")),
        ("Capt.", family("caption")),
        ("TOMG", family("tomg")),
        ("Yield", family("yield")),
        ("Reag.", family("reagent")),
        ("React.", family("reaction")),
        ("Retro", family("retro")),
    ])
}
