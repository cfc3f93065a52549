//! Response-generation timing for the three responders.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::responders::{HashLookup, Responder, ResponderKind, WholeLibrary};
use super::HarnessError;
use crate::emulator::Emulator;
use crate::protomodel::OpaqueServiceModel;
use crate::trace::TransactionLibrary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponderTiming {
    pub responder: String,
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    /// Responses that came back empty-handed (hash misses).
    pub misses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub library_size: usize,
    pub request_count: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub timings: Vec<ResponderTiming>,
}

impl BenchmarkReport {
    pub fn timing(&self, kind: ResponderKind) -> Option<&ResponderTiming> {
        self.timings.iter().find(|t| t.responder == kind.name())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

impl fmt::Display for BenchmarkReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "library {} transactions, {} requests x {} repetitions (warmup {})",
            self.library_size, self.request_count, self.repetitions, self.warmup
        )?;
        writeln!(f, "{:<14} {:>8} {:>12} {:>12} {:>12}", "responder", "samples", "mean ms", "median ms", "p99 ms")?;
        for t in &self.timings {
            writeln!(
                f,
                "{:<14} {:>8} {:>12.6} {:>12.6} {:>12.6}",
                t.responder, t.samples, t.mean_ms, t.median_ms, t.p99_ms
            )?;
        }
        Ok(())
    }
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn time_responder(
    kind: ResponderKind,
    responder: &dyn Responder,
    requests: &[Vec<u8>],
    repetitions: usize,
    warmup: usize,
) -> ResponderTiming {
    for r in requests.iter().cycle().take(warmup) {
        std::hint::black_box(responder.respond(r));
    }
    let mut times = Vec::with_capacity(requests.len() * repetitions);
    let mut misses = 0;
    for _ in 0..repetitions {
        for r in requests {
            let start = Instant::now();
            let out = responder.respond(std::hint::black_box(r));
            times.push(start.elapsed().as_secs_f64() * 1e3);
            misses += usize::from(out.is_none());
        }
    }
    times.sort_by(f64::total_cmp);
    let mean = if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 };
    ResponderTiming {
        responder: kind.name().to_string(),
        samples: times.len(),
        mean_ms: mean,
        median_ms: percentile(&times, 50.0),
        p99_ms: percentile(&times, 99.0),
        misses,
    }
}

/// Times every responder over the same request sequence. `model` should have
/// been built from `library`.
pub fn benchmark(
    library: &TransactionLibrary,
    model: &OpaqueServiceModel,
    requests: &[Vec<u8>],
    repetitions: usize,
    warmup: usize,
) -> Result<BenchmarkReport, HarnessError> {
    let hash = HashLookup::new(library);
    let whole = WholeLibrary::new(library.clone(), model.scoring, model.min_field_len as usize)?;
    let proto = Emulator::new(model.clone())?;
    let responders: [(ResponderKind, &dyn Responder); 3] = [
        (ResponderKind::Hash, &hash),
        (ResponderKind::WholeLibrary, &whole),
        (ResponderKind::Prototype, &proto),
    ];
    Ok(BenchmarkReport {
        library_size: library.len(),
        request_count: requests.len(),
        repetitions,
        warmup,
        timings: responders
            .iter()
            .map(|&(k, r)| time_responder(k, r, requests, repetitions, warmup))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }
}
