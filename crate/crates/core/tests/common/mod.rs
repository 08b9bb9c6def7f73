//! Independent reference implementations shared by the integration tests.
//! They are deliberately naive and share no code with the library, except
//! that the evaluation oracle looks up fingerprint similarities.

#![allow(dead_code)]

pub mod eval_oracle;
pub mod grpo_configs;
pub mod graph_oracle;
pub mod grpo_oracle;
pub mod teacher;
pub mod text_oracle;

/// Candidate/reference pairs for the metric golden suite.
pub const GOLDEN_PAIRS: &[(&str, &str)] = &[
    ("a b c", "a b c d"),
    ("a b c", "a c"),
    ("a c b", "a b c"),
    ("the molecule is an acid.", "the molecule is an acid."),
    ("the molecule is a base.", "the molecule is an acid."),
    ("the cat sat on the mat", "the cat is on the mat"),
    ("the the the the", "the cat"),
    ("a b a b a b", "a b b a"),
    ("x y z", "a b c"),
    ("it is a member of triazoles", "it is a member of triazoles and a tertiary alcohol"),
    ("an organic compound with an ester group", "an ester and an amide"),
    ("methyl ethyl ketone", "ethyl methyl ketone"),
    ("one two three four five six", "six five four three two one"),
    ("a b c d e f g", "a b x d e y g"),
    ("the molecule is a cyclopentanol carrying a triazolylmethyl group",
     "the molecule is a member of the class of cyclopentanols carrying 1,2,4-triazol-1-ylmethyl"),
    ("N-carbamoyl-amino acid", "n - carbamoyl amino acid"),
    ("a", "a"),
    ("a", "b"),
    ("q r s t u", "r s t"),
    ("aromatic amine , primary", "primary aromatic amine"),
    ("C C O", "O C C"),
    ("it is a conjugate acid of an anion", "it is a conjugate base of an acid"),
];
