//! Numerical certificates for the landscape conditions behind global
//! convergence: finite-difference gradient checks, KL-ratio scans, the
//! sequence lemma and its extremal instances, and sequential-decomposition
//! spot checks.

mod decomp;
mod fd;
mod kl;
mod sequence;

pub use decomp::{seq_decomp_spot_check, DecompReference, DecompStatus, SeqDecompReport};
pub use fd::{crn_fd_check, fd_gradient_check, CrnFdCheck, CrnFdEntry, FdCheck, FdEntry};
pub use kl::{kl_scan, KlSample, KlScanOptions, KlScanReport};
pub use sequence::{
    appendix_hard_instance, appendix_ratio_target, greedy_hard_instance, random_premise_instance,
    sequence_bound_factor, sequence_lemma_check, sequence_lemma_search, weak_lemma_instance, SequenceCheck,
    SequenceInstance, SequenceSearch, WeakLemmaReport,
};
