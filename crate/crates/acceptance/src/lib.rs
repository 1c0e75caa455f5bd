//! Shared pieces of the acceptance suite: a tiny pass/fail runner and the
//! all-pairs reference correlator.

use std::time::{Duration, Instant};

/// Result of one criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Runs criteria in order and prints one line each.
#[derive(Default)]
pub struct Runner {
    failures: Vec<String>,
    count: usize,
}

impl Runner {
    /// Run `check`; a panic or a runtime above `budget` counts as failure.
    pub fn criterion(
        &mut self,
        id: &str,
        title: &str,
        budget: Option<Duration>,
        check: impl FnOnce() -> Outcome + std::panic::UnwindSafe,
    ) {
        self.count += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| elapsed <= b);
        let pass = outcome.pass && in_time;
        let timing = match budget {
            Some(b) => format!("{:.1} s of {:.0} s", elapsed.as_secs_f64(), b.as_secs_f64()),
            None => format!("{:.1} s", elapsed.as_secs_f64()),
        };
        println!(
            "{} criterion {id}: {title} ({timing}) {}",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
        if !pass {
            self.failures.push(id.to_string());
        }
    }

    /// Summary line; true when every criterion passed.
    pub fn finish(self) -> bool {
        println!(
            "acceptance: {} of {} criteria passed{}",
            self.count - self.failures.len(),
            self.count,
            if self.failures.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", self.failures.join(", "))
            }
        );
        self.failures.is_empty()
    }
}

/// Every pair `(t1, t2)` with `−n w ≤ t2 − t1 < n w`, binned by
/// `floor((t2 − t1)/w)`; storage index shifted by `n`.
pub fn all_pairs_histogram(s1: &[u64], s2: &[u64], width_ps: u64, bins_per_side: usize) -> Vec<u64> {
    let w = i128::from(width_ps);
    let n = bins_per_side as i128;
    let mut counts = vec![0u64; 2 * bins_per_side];
    for &a in s1 {
        for &b in s2 {
            let d = i128::from(b) - i128::from(a);
            let k = d.div_euclid(w);
            if (-n..n).contains(&k) {
                counts[(k + n) as usize] += 1;
            }
        }
    }
    counts
}
