//! Seeded synthetic corpus in the QA record schema: paraphrase groups built
//! from topic × aspect × modifier combinations. Each group has one base
//! question; its paraphrases are seeded lexical perturbations of that base
//! (filler, a synonym swap, a dropped word, an adjacent swap, a typo).

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use guardqa_core::corpus::{group_id_for, QARecord, RecordSource, RecordStatus};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 20_240_917;

struct Topic {
    key: &'static str,
    forms: &'static [&'static str],
}

const TOPICS: &[Topic] = &[
    Topic { key: "periods", forms: &["periods", "mahina", "mc", "menstruation"] },
    Topic { key: "condom", forms: &["condom", "nirodh"] },
    Topic { key: "pregnancy", forms: &["pregnancy", "garbh", "pregnant hona"] },
    Topic { key: "masturbation", forms: &["masturbation", "hastmaithun"] },
    Topic { key: "acne", forms: &["acne", "pimples", "muhase"] },
    Topic { key: "puberty", forms: &["puberty", "kishoravastha"] },
    Topic { key: "contraceptive pill", forms: &["contraceptive pill", "birth control goli"] },
    Topic { key: "hiv", forms: &["hiv", "aids"] },
    Topic { key: "sti", forms: &["sti", "yon sankraman"] },
    Topic { key: "breast growth", forms: &["breast growth", "stan ka vikas"] },
    Topic { key: "testicle pain", forms: &["testicle pain", "andkosh dard"] },
    Topic { key: "night fall", forms: &["night fall", "swapnadosh", "wet dreams"] },
    Topic { key: "consent", forms: &["consent", "sahmati"] },
    Topic { key: "hymen", forms: &["hymen", "jhilli"] },
    Topic { key: "pcos", forms: &["pcos", "pcod"] },
    Topic { key: "period cramps", forms: &["period cramps", "pet dard periods mein"] },
    Topic { key: "white discharge", forms: &["white discharge", "safed pani"] },
    Topic { key: "erection", forms: &["erection", "ling ka khada hona"] },
    Topic { key: "emergency pill", forms: &["emergency pill", "i pill", "morning after goli"] },
    Topic { key: "copper t", forms: &["copper t", "iud"] },
    Topic { key: "body hair", forms: &["body hair", "sharir ke baal"] },
    Topic { key: "voice change", forms: &["voice change", "awaaz badalna"] },
    Topic { key: "body odour", forms: &["body odour", "pasine ki badboo"] },
    Topic { key: "infertility", forms: &["infertility", "baanjhpan"] },
    Topic { key: "abortion", forms: &["abortion", "garbhpat"] },
    Topic { key: "hpv vaccine", forms: &["hpv vaccine", "hpv teeka"] },
    Topic { key: "anaemia", forms: &["anaemia", "khoon ki kami"] },
    Topic { key: "penis size", forms: &["penis size", "ling ka size"] },
    Topic { key: "sexual orientation", forms: &["sexual orientation", "gay hona"] },
    Topic { key: "vaginal itching", forms: &["vaginal itching", "yoni mein khujli"] },
];

struct Aspect {
    key: &'static str,
    templates: &'static [&'static str],
}

const ASPECTS: &[Aspect] = &[
    Aspect {
        key: "cause",
        templates: &["{t} kyon hota hai", "{t} ka kaaran kya hai", "why does {t} happen", "{t} hone ki wajah kya hai"],
    },
    Aspect {
        key: "safety",
        templates: &["kya {t} safe hai", "{t} se koi khatra hai kya", "is {t} safe", "{t} surakshit hai ya nahi"],
    },
    Aspect {
        key: "method",
        templates: &["{t} ka sahi tarika kya hai", "{t} kaise kare", "how to deal with {t}", "{t} ke liye kya karna chahiye"],
    },
    Aspect {
        key: "symptoms",
        templates: &["{t} ke lakshan kya hain", "{t} ke symptoms kya hote hain", "signs of {t}", "kaise pata chale ki {t} hai"],
    },
    Aspect {
        key: "side effects",
        templates: &["{t} ke side effects kya hain", "{t} se nuksan kya hota hai", "side effects of {t}", "{t} ka bura asar"],
    },
    Aspect {
        key: "normal",
        templates: &["kya {t} normal hai", "{t} aam baat hai kya", "is {t} normal", "{t} sabko hota hai kya"],
    },
    Aspect {
        key: "doctor",
        templates: &["{t} ke liye doctor kab dikhaye", "{t} mein doctor ke paas kab jana chahiye", "when to see a doctor for {t}", "{t} ka ilaj kahan milega"],
    },
    Aspect {
        key: "myths",
        templates: &["{t} ke bare mein myths kya hain", "{t} ki galat baatein kaun si hain", "myths about {t}", "{t} ke bare mein afwah sach hai kya"],
    },
];

const MODIFIERS: &[(&str, &[&str])] = &[
    ("first time", &["pehli baar", "first time"]),
    ("after marriage", &["shaadi ke baad", "after marriage"]),
    ("during exercise", &["exercise ke time", "during exercise"]),
    ("at night", &["raat ko", "at night"]),
    ("at school", &["school mein", "at school"]),
    ("while travelling", &["safar mein", "while travelling"]),
    ("in winter", &["sardi mein", "in winter"]),
    ("in summer", &["garmi mein", "in summer"]),
    ("with diabetes", &["sugar ki bimari ke saath", "with diabetes"]),
    ("after surgery", &["operation ke baad", "after surgery"]),
    ("during fasting", &["vrat ke dauran", "during fasting"]),
    ("after delivery", &["delivery ke baad", "after delivery"]),
    ("during exams", &["exam ke time", "during exams"]),
    ("while breastfeeding", &["doodh pilate samay", "while breastfeeding"]),
];

const PREFIXES: &[&str] = &["hello", "namaste", "didi", "sir"];

const SUFFIXES: &[&str] = &["please", "batao", "ji"];

const ASPECT_ADVICE: &[&str] = &[
    "It usually comes from normal changes in the body.",
    "Used correctly it is safe for most people.",
    "Follow the steps a health worker shows you and keep things clean.",
    "Watch for pain, fever or unusual changes.",
    "Most side effects are mild and pass in a few days.",
    "This is common and nothing to be ashamed of.",
    "See a doctor if it lasts more than a week or gets worse.",
    "Many things people say about it are not true.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub groups: usize,
    pub min_paraphrases: usize,
    pub max_paraphrases: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            groups: 240,
            min_paraphrases: 2,
            max_paraphrases: 4,
            seed: DEFAULT_SEED,
        }
    }
}

impl SyntheticSpec {
    /// Enough groups for roughly `docs` records.
    pub fn for_size(docs: usize, seed: u64) -> Self {
        let per = 3;
        Self {
            groups: docs.div_ceil(per).min(max_groups()),
            min_paraphrases: per,
            max_paraphrases: per,
            seed,
        }
    }
}

pub fn max_groups() -> usize {
    TOPICS.len() * ASPECTS.len() * (MODIFIERS.len() + 1)
}

fn combo(i: usize) -> (usize, usize, Option<usize>) {
    let base = TOPICS.len() * ASPECTS.len();
    let layer = i / base;
    let within = i % base;
    let modifier = if layer == 0 { None } else { Some(layer - 1) };
    (within / ASPECTS.len(), within % ASPECTS.len(), modifier)
}

/// The base question of group `g`, derived from the corpus seed and group index
/// so that [`generate`] and [`probe_queries`] agree. Returns the base and the
/// topic form it uses.
fn base_question(seed: u64, g: usize, t: &Topic, a: &Aspect, m: Option<usize>) -> (String, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (g as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let form = rng.random_range(0..t.forms.len());
    let template = a.templates.choose(&mut rng).expect("aspect templates");
    let mut q = template.replace("{t}", "\u{1}");
    if let Some(m) = m {
        let phrase = MODIFIERS[m].1.choose(&mut rng).expect("modifier forms");
        q = if rng.random_bool(0.5) {
            format!("{phrase} {q}")
        } else {
            format!("{q} {phrase}")
        };
    }
    (q, form)
}

fn typo(rng: &mut ChaCha8Rng, word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() < 4 {
        return word.to_string();
    }
    let i = rng.random_range(1..chars.len() - 1);
    let mut out = chars.clone();
    match rng.random_range(0..3) {
        0 => {
            out.remove(i);
        }
        1 => out.swap(i, i + 1),
        _ => out.insert(i, chars[i]),
    }
    out.into_iter().collect()
}

fn paraphrase(rng: &mut ChaCha8Rng, base: &(String, usize), t: &Topic) -> String {
    let form = if t.forms.len() > 1 && rng.random_bool(0.05) {
        t.forms[(base.1 + rng.random_range(1..t.forms.len())) % t.forms.len()]
    } else {
        t.forms[base.1]
    };
    // topic stays one slot while the rest is perturbed
    let mut words: Vec<String> = base.0.split(' ').map(str::to_string).collect();
    let slot = words.iter().position(|w| w == "\u{1}").expect("topic slot");
    let others: Vec<usize> = (0..words.len()).filter(|&i| i != slot).collect();
    if others.len() > 2 && rng.random_bool(0.2) {
        let i = *others.choose(rng).expect("non-topic words");
        words[i].clear();
    }
    if words.len() > 2 && rng.random_bool(0.2) {
        let i = rng.random_range(0..words.len() - 1);
        words.swap(i, i + 1);
    }
    if rng.random_bool(0.2) {
        let i = *others.choose(rng).expect("non-topic words");
        words[i] = typo(rng, &words[i]);
    }
    let core = words
        .iter()
        .filter(|w| !w.is_empty())
        .map(|w| if w == "\u{1}" { form } else { w.as_str() })
        .collect::<Vec<_>>()
        .join(" ");
    let mut parts = Vec::new();
    if rng.random_bool(0.4) {
        parts.push(*PREFIXES.choose(rng).expect("prefixes"));
    }
    parts.push(&core);
    if rng.random_bool(0.3) {
        parts.push(*SUFFIXES.choose(rng).expect("suffixes"));
    }
    parts.join(" ")
}

/// Generate the corpus. Same spec, same records, bit for bit.
pub fn generate(spec: &SyntheticSpec) -> Vec<QARecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let created: DateTime<Utc> = DateTime::UNIX_EPOCH;
    let lo = spec.min_paraphrases.max(1);
    let hi = spec.max_paraphrases.max(lo);
    let mut out = Vec::new();
    for g in 0..spec.groups.min(max_groups()) {
        let (ti, ai, m) = combo(g);
        let (t, a) = (&TOPICS[ti], &ASPECTS[ai]);
        let modifier = m.map(|m| MODIFIERS[m].0);
        let answer = match modifier {
            Some(md) => format!("About {} ({}, {md}): {}", t.key, a.key, ASPECT_ADVICE[ai]),
            None => format!("About {} ({}): {}", t.key, a.key, ASPECT_ADVICE[ai]),
        };
        let group_id = group_id_for(&answer);
        let base = base_question(spec.seed, g, t, a, m);
        let want = rng.random_range(lo..=hi);
        let mut seen = BTreeSet::new();
        let mut tries = 0;
        while seen.len() < want && tries < want * 20 {
            tries += 1;
            let q = paraphrase(&mut rng, &base, t);
            if !seen.insert(q.clone()) {
                continue;
            }
            out.push(QARecord {
                id: format!("syn-{g:05}-{}", seen.len()),
                group_id: group_id.clone(),
                caller_query_transcription: q.clone(),
                relevant_question: q.clone(),
                sanitized_question: q,
                answer: answer.clone(),
                theme: t.key.to_string(),
                sub_theme: a.key.to_string(),
                language: "hi".into(),
                status: RecordStatus::Published,
                created_at: created,
                source: RecordSource::Ingest,
            });
        }
    }
    out
}

/// Fresh paraphrases of existing groups, for probing an index built from
/// [`generate`]. Returns `(query, group_id)` pairs.
pub fn probe_queries(spec: &SyntheticSpec, n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = spec.groups.min(max_groups()).max(1);
    (0..n)
        .map(|_| {
            let g = rng.random_range(0..groups);
            let (ti, ai, m) = combo(g);
            let base = base_question(spec.seed, g, &TOPICS[ti], &ASPECTS[ai], m);
            let q = paraphrase(&mut rng, &base, &TOPICS[ti]);
            let answer = match m {
                Some(mi) => format!(
                    "About {} ({}, {}): {}",
                    TOPICS[ti].key, ASPECTS[ai].key, MODIFIERS[mi].0, ASPECT_ADVICE[ai]
                ),
                None => format!("About {} ({}): {}", TOPICS[ti].key, ASPECTS[ai].key, ASPECT_ADVICE[ai]),
            };
            (q, group_id_for(&answer))
        })
        .collect()
}

/// One JSON record per line.
pub fn to_jsonl(records: &[QARecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use guardqa_core::sanitizer::Sanitizer;
    use std::collections::BTreeMap;

    #[test]
    fn deterministic_for_a_seed() {
        let spec = SyntheticSpec::default();
        assert_eq!(generate(&spec), generate(&spec));
        let other = SyntheticSpec { seed: 7, ..spec };
        assert_ne!(generate(&spec), generate(&other));
    }

    #[test]
    fn default_fixture_shape() {
        let records = generate(&SyntheticSpec::default());
        let mut groups: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &records {
            *groups.entry(&r.group_id).or_default() += 1;
        }
        assert!(groups.len() >= 200);
        assert!(groups.values().all(|n| (2..=4).contains(n)));
    }

    #[test]
    fn every_record_is_valid_and_unique() {
        let s = Sanitizer::default();
        let records = generate(&SyntheticSpec::for_size(3000, 1));
        let ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids.len(), records.len());
        for r in &records {
            r.validate(&s).unwrap_or_else(|e| panic!("{}: {e}: {}", r.id, r.sanitized_question));
        }
    }

    #[test]
    fn large_sizes_reach_ten_thousand() {
        assert!(max_groups() * 3 >= 10_000);
        assert_eq!(generate(&SyntheticSpec::for_size(10_000, 3)).len(), 10_002);
    }

    #[test]
    fn probes_point_at_real_groups() {
        let spec = SyntheticSpec::default();
        let groups: BTreeSet<String> = generate(&spec).into_iter().map(|r| r.group_id).collect();
        for (_, g) in probe_queries(&spec, 50, 9) {
            assert!(groups.contains(&g));
        }
    }
}
