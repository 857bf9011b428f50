//! Label-denoising preprocessing: batch-norm statistic re-estimation on the
//! target domain, pseudo-label generation, over-clustered k-means and
//! within-cluster probability aggregation.

mod adabn;
mod kmeans;
mod pseudo;

pub use adabn::{adabn_update, adabn_update_batches};
pub use kmeans::{kmeans, ClusterModel, KMeansOptions};
pub use pseudo::{dtc_refine, extract_features, overcluster_k, pregenerate_labels, PseudoLabelSet};
