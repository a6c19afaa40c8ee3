//! Attention error proxies, speaker-embedding PCA and the text sets used
//! to exercise them.

mod attention;
mod challenge;
mod pca;

pub use attention::{attention_diagnostics, ErrorReport, ErrorThresholds};
pub use challenge::{challenge_set, read_sentence_slot, ChallengeKind};
pub use pca::{pca_csv, speaker_embeddings, speaker_pca, two_means_purity, Pca};
