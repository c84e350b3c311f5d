//! Reference routines used by the test suites to cross-check the production
//! crates. Everything here favors obviousness over speed, is written from
//! the definitions rather than from the code under test, and must never end
//! up in a runtime dependency graph.

pub mod auroc;
pub mod chords;
pub mod ctc;
pub mod editdist;
pub mod gradcheck;
pub mod softfloat;
