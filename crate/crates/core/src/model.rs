use rand::RngCore;

use crate::clicklog::SerpRecord;

/// Common surface of every click model the metrics consume.
pub trait ClickModel {
    /// Click probability at each rank conditioned on the record's observed
    /// clicks at earlier ranks.
    fn click_probs(&self, record: &SerpRecord) -> Vec<f64>;

    /// Clicks sampled rank by rank, each conditioned on the sampled prefix.
    fn sample_clicks(&self, record: &SerpRecord, rng: &mut dyn RngCore) -> Vec<u8>;

    /// Position-free relevance score used to rank documents for NDCG.
    fn relevance(&self, query: u32, doc: u32, vertical: u32) -> f64;
}
