//! Single-crop inference latency.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stallwatch_core::dataset::synth_crop;
use stallwatch_core::detector::{Model, ModelError};
use stallwatch_core::Label;

pub const DEFAULT_STALLS: usize = 300;

pub const CSV_HEADER: &str = "kind,machine,n,mean_s,p50_s,p95_s,stalls,projected_refresh_s";

/// Per-crop latencies on other hardware, shown next to the measurement for context.
pub const REFERENCE_ROWS: [(&str, f64); 3] = [
    ("desktop GPU", 3.56e-4),
    ("desktop CPU", 0.0126),
    ("embedded CPU", 0.22),
];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub machine: String,
    pub samples_s: Vec<f64>,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub stall_count: usize,
    pub projected_lot_refresh_s: f64,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl BenchReport {
    pub fn from_samples(
        machine: impl Into<String>,
        samples_s: Vec<f64>,
        stall_count: usize,
    ) -> Self {
        assert!(!samples_s.is_empty(), "bench needs at least one sample");
        let mut sorted = samples_s.clone();
        sorted.sort_by(f64::total_cmp);
        let mean_s = samples_s.iter().sum::<f64>() / samples_s.len() as f64;
        BenchReport {
            machine: machine.into(),
            mean_s,
            p50_s: percentile(&sorted, 0.50),
            p95_s: percentile(&sorted, 0.95),
            stall_count,
            projected_lot_refresh_s: mean_s * stall_count as f64,
            samples_s,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CSV_HEADER}").unwrap();
        writeln!(
            out,
            "measured,{},{},{:e},{:e},{:e},{},{:e}",
            self.machine.replace(',', " "),
            self.samples_s.len(),
            self.mean_s,
            self.p50_s,
            self.p95_s,
            self.stall_count,
            self.projected_lot_refresh_s
        )
        .unwrap();
        for (name, mean) in REFERENCE_ROWS {
            writeln!(
                out,
                "reference,{name},,{mean:e},,,{},{:e}",
                self.stall_count,
                mean * self.stall_count as f64
            )
            .unwrap();
        }
        out
    }
}

pub fn machine_label() -> String {
    format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Runs `n` warmup predictions, then times `n` more, one crop at a time.
pub fn bench(
    model: &Model,
    n: usize,
    stall_count: usize,
    seed: u64,
) -> Result<BenchReport, ModelError> {
    let n = n.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let crops: Vec<_> = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 {
                Label::Occupied
            } else {
                Label::Vacant
            };
            synth_crop(label, &mut rng)
        })
        .collect();
    for crop in &crops {
        model.predict_image(crop)?;
    }
    let mut samples = Vec::with_capacity(n);
    for crop in &crops {
        let t = Instant::now();
        std::hint::black_box(model.predict_image(crop)?);
        samples.push(t.elapsed().as_secs_f64());
    }
    Ok(BenchReport::from_samples(
        machine_label(),
        samples,
        stall_count,
    ))
}
