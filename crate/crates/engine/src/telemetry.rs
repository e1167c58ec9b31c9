//! Counters, latency sums and logging setup. Nothing recorded here carries
//! query or answer text.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::Mutex;

#[derive(Debug, Default)]
pub struct Telemetry {
    counters: Mutex<BTreeMap<String, u64>>,
    latencies: Mutex<BTreeMap<String, (u64, u64)>>,
}

fn key(name: &str, label: Option<(&str, &str)>) -> String {
    match label {
        None => name.to_string(),
        Some((k, v)) => format!("{name}{{{k}=\"{v}\"}}"),
    }
}

impl Telemetry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn incr(&self, name: &str, label: Option<(&str, &str)>) {
        self.add(name, label, 1);
    }

    pub fn add(&self, name: &str, label: Option<(&str, &str)>, by: u64) {
        let mut c = self.counters.lock().unwrap_or_else(|e| e.into_inner());
        *c.entry(key(name, label)).or_default() += by;
    }

    pub fn get(&self, name: &str, label: Option<(&str, &str)>) -> u64 {
        let c = self.counters.lock().unwrap_or_else(|e| e.into_inner());
        c.get(&key(name, label)).copied().unwrap_or(0)
    }

    pub fn observe_latency(&self, stage: &str, micros: u64) {
        let mut l = self.latencies.lock().unwrap_or_else(|e| e.into_inner());
        let e = l.entry(stage.to_string()).or_default();
        e.0 += 1;
        e.1 += micros;
    }

    /// One `name value` pair per line, sorted by name.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.counters.lock().unwrap_or_else(|e| e.into_inner()).iter() {
            let _ = writeln!(out, "{k} {v}");
        }
        for (stage, (n, sum)) in self.latencies.lock().unwrap_or_else(|e| e.into_inner()).iter() {
            let _ = writeln!(out, "guardqa_latency_us_count{{stage=\"{stage}\"}} {n}");
            let _ = writeln!(out, "guardqa_latency_us_sum{{stage=\"{stage}\"}} {sum}");
        }
        out
    }
}

/// Install a global subscriber writing to stderr. `RUST_LOG` controls the
/// filter; default `info`.
pub fn init_tracing(json: bool) {
    use tracing_subscriber::EnvFilter;
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    let _ = if json {
        builder.json().try_init()
    } else {
        builder.try_init()
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counters_render_line_per_key() {
        let t = Telemetry::new();
        t.incr("guardqa_asks_total", None);
        t.incr("guardqa_route_total", Some(("route", "retrieval")));
        t.incr("guardqa_route_total", Some(("route", "retrieval")));
        t.observe_latency("llm", 120);
        let text = t.render();
        assert!(text.contains("guardqa_asks_total 1\n"));
        assert!(text.contains("guardqa_route_total{route=\"retrieval\"} 2\n"));
        assert!(text.contains("guardqa_latency_us_sum{stage=\"llm\"} 120\n"));
        assert_eq!(t.get("guardqa_route_total", Some(("route", "retrieval"))), 2);
    }
}
