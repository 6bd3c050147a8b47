//! Scores a few hand-made predictions and prints the per-fold table and the
//! CSV that `eval` writes.

use euisnet::metrics::{
    aggregate_folds, compute_metrics, confusion_from_masks, MetricsReport, SampleMetrics, THRESHOLD,
};

fn disc(size: usize, cx: f64, cy: f64, r: f64) -> Vec<f64> {
    (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
            if (x - cx).powi(2) + (y - cy).powi(2) <= r * r {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

fn main() -> euisnet::Result<()> {
    let size = 64;
    let gt = disc(size, 32.0, 32.0, 12.0);
    let mut folds = Vec::new();
    for (fold, shift) in [(0usize, 0.0), (1, 3.0), (2, 6.0)] {
        let mut samples = Vec::new();
        for (k, r) in [10.0, 12.0, 14.0].into_iter().enumerate() {
            let pred = disc(size, 32.0 + shift, 32.0, r);
            let counts = confusion_from_masks(&pred, &gt, THRESHOLD)?;
            let metrics = compute_metrics(&counts);
            let (j, d) = (metrics.jaccard, metrics.dice);
            println!(
                "fold {fold} disc r={r}: J {j:.4}  D {d:.4}  2J/(1+J) {:.4}",
                2.0 * j / (1.0 + j)
            );
            samples.push(SampleMetrics {
                fold,
                sample_id: format!("disc_{k}"),
                counts,
                metrics,
            });
        }
        folds.push(MetricsReport::from_samples(fold, samples)?);
    }
    let report = aggregate_folds(&folds)?;
    print!("\n{}", report.summary_table());
    print!("\n{}", report.to_csv());
    Ok(())
}
