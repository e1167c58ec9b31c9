#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use guardqa::config::ServiceConfig;
use guardqa::pipeline::Engine;
use guardqa::providers::ProviderSet;
use guardqa_core::generation::MockLlm;
use guardqa_core::sanitizer::PiiKind;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn injection_cases() -> Vec<String> {
    read_fixture("injection.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[derive(serde::Deserialize)]
pub struct PiiQuery {
    pub query: String,
    pub pii: Vec<String>,
}

pub fn pii_queries() -> Vec<PiiQuery> {
    read_fixture("pii_queries.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Mock-everything config rooted at `store`.
pub fn config(store: &Path) -> ServiceConfig {
    ServiceConfig {
        store_dir: store.to_path_buf(),
        asr_fixtures_path: Some(fixture("asr_fixtures.json")),
        embedding_dimension: 256,
        ..ServiceConfig::default()
    }
}

/// In-memory engine over the five-record fixture, plus a handle on its LLM.
pub fn engine_with_corpus() -> (Engine, Arc<MockLlm>) {
    let cfg = ServiceConfig {
        embedding_dimension: 256,
        asr_fixtures_path: Some(fixture("asr_fixtures.json")),
        ..ServiceConfig::default()
    };
    let llm = Arc::new(MockLlm::new());
    let mut providers = ProviderSet::from_config(&cfg).unwrap();
    providers.llm = llm.clone();
    let engine = Engine::in_memory(&cfg, providers).unwrap().with_sleep(guardqa::langbridge::no_sleep());
    let text = read_fixture("corpus5.jsonl");
    let report = engine
        .write(|s| s.ingest_str(&text, chrono::Utc::now()))
        .unwrap()
        .unwrap();
    assert_eq!(report.accepted, 5);
    (engine, llm)
}

const TEMPLATES: &[&str] = &[
    "{} kya periods late hona normal hai",
    "mujhe batao {} condom kaise use kare",
    "{}",
    "pimples ke bare mein sawal hai {} please",
];

fn wrap(rng: &mut ChaCha8Rng, inner: &str) -> String {
    TEMPLATES.choose(rng).unwrap().replace("{}", inner)
}

fn digits(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect()
}

const NAMES: &[&str] = &["sita", "radha", "priya", "neha", "rahul", "amit", "ramesh", "sanjay", "deepak", "anita"];
const INVENTED: &[&str] = &["Kiranjot", "Bhavleen", "Tasneem", "Ojaswi", "Yashvir", "Zoravar", "Ishnoor", "Mehrunisa"];
const PLACES: &[&str] = &["delhi", "patna", "lucknow", "jaipur", "ranchi", "varanasi", "bhopal", "gorakhpur", "uttar pradesh", "new delhi"];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// `n` texts each carrying one `kind` surface, with that surface. Seeded.
pub fn pii_cases(kind: PiiKind, n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (phrase, surface) = match kind {
                PiiKind::Phone => {
                    let first = char::from(b'6' + rng.random_range(0..4u8));
                    let rest = digits(&mut rng, 9);
                    let body = format!("{first}{rest}");
                    let number = match rng.random_range(0..5) {
                        0 => body.clone(),
                        1 => format!("+91 {body}"),
                        2 => format!("0{body}"),
                        3 => format!("{} {}", &body[..5], &body[5..]),
                        _ => format!("{}-{}-{}", &body[..3], &body[3..6], &body[6..]),
                    };
                    (format!("mera number {number} hai"), number)
                }
                PiiKind::Age => {
                    let age = rng.random_range(5..=99u32).to_string();
                    match rng.random_range(0..4) {
                        0 => (format!("meri umar {age} saal hai"), format!("{age} saal")),
                        1 => (format!("I am {age} years old"), format!("{age} years")),
                        2 => (format!("age {age} hai meri"), format!("age {age}")),
                        _ => (format!("main {age} yrs ki hoon"), format!("{age} yrs")),
                    }
                }
                PiiKind::Name => {
                    let name = if rng.random_bool(0.5) {
                        capitalize(NAMES.choose(&mut rng).unwrap())
                    } else {
                        INVENTED.choose(&mut rng).unwrap().to_string()
                    };
                    let cue = ["my name is", "mera naam", "mera naam hai"].choose(&mut rng).unwrap();
                    (format!("{cue} {name}"), name)
                }
                PiiKind::Place => {
                    let p = PLACES.choose(&mut rng).unwrap();
                    let place = if rng.random_bool(0.5) { capitalize(p) } else { p.to_string() };
                    (format!("main {place} se hoon"), place)
                }
                PiiKind::IdNumber => {
                    let d = digits(&mut rng, 12);
                    let id = match rng.random_range(0..3) {
                        0 => d.clone(),
                        1 => format!("{} {} {}", &d[..4], &d[4..8], &d[8..]),
                        _ => format!("{}-{}-{}", &d[..4], &d[4..8], &d[8..]),
                    };
                    (format!("mera aadhaar {id} hai"), id)
                }
            };
            (wrap(&mut rng, &phrase), surface)
        })
        .collect()
}
