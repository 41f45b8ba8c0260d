use drpn_core::toy::dataset::{generate_dataset, DatasetConfig};

// Bucket counts of the log-uniform sizes against the closed-form CDF
// P(s < b) = ln(b / s_min) / ln((s_max + 1) / s_min), within 3 sigma.
#[test]
fn bucket_frequencies_follow_log_uniform_cdf() {
    let (lo, hi) = (3usize, 47usize);
    let edges = [3usize, 8, 20, 48];
    let cfg = DatasetConfig {
        count: 10_000,
        height: 48,
        width: 48,
        size_range: (lo, hi),
        bucket_edges: edges.to_vec(),
        noise_sigma: 0.0,
        seed: 2024,
    };
    let data = generate_dataset(&cfg).unwrap();
    let mut counts = [0usize; 3];
    for s in &data {
        counts[s.size_class] += 1;
    }
    let cdf = |b: usize| (b as f64 / lo as f64).ln() / ((hi + 1) as f64 / lo as f64).ln();
    let n = data.len() as f64;
    for (k, e) in edges.windows(2).enumerate() {
        let p = cdf(e[1]) - cdf(e[0]);
        let sigma = (n * p * (1.0 - p)).sqrt();
        let dev = (counts[k] as f64 - n * p).abs();
        assert!(
            dev <= 3.0 * sigma,
            "bucket {k}: {} vs expected {:.1} (3 sigma = {:.1})",
            counts[k],
            n * p,
            3.0 * sigma
        );
    }
}
