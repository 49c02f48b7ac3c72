//! Synthetic BIO corpus for desk-scale simulations.
//!
//! Four entity types (PER, LOC, ORG, EVT). About 40% of the sentences are
//! entity-free chatter and a quarter use a handful of frequent names in a few
//! fixed frames. The rest mention rare coined names, often bare or
//! lowercased, between a type-specific word on each side. Those cue words
//! follow a Zipf distribution, so many of them are seen only a few times. A model learns the frequent cases from a few
//! examples; the rare cases are where additional labels pay off.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::column::parse_column_str;
use super::Corpus;
use crate::error::Result;

/// Seed of the bundled corpus.
pub const DESK_SEED: u64 = 20_240_601;
/// Sentence count of the bundled corpus.
pub const DESK_SIZE: usize = 2_000;
/// The bundled corpus, as written by [`desk_corpus_text`] with the defaults above.
pub const BUNDLED_DESK_CORPUS: &str = include_str!("../../data/desk_corpus.conll");

const FILLER_SUBJECTS: &[&str] = &["the weather", "the meeting", "our team", "the report", "the market", "the river", "the crowd", "the schedule", "the committee", "the road"];
const FILLER_VERBS: &[&str] = &["was", "seemed", "remained", "became", "looked", "stayed", "felt"];
const FILLER_ADJS: &[&str] = &["quiet", "busy", "calm", "late", "unusual", "uncertain", "slow", "crowded", "mild", "steady"];
/// Capitalized words that are never entities.
const FILLER_OPENERS: &[&str] = &["Monday ,", "Overall ,", "Meanwhile", "However ,", "Government sources say", "Internet users noticed", "Eventually", "Sunday"];
const FILLER_TAILS: &[&str] = &["today", "again", "this week", "all morning", "for a while", "as expected", "after lunch", "last night"];

const COMMON_PER: &[&str] = &["Anna Smith", "John Miller", "Maria Lopez", "David Chen", "Sara Khan", "Tom Brown"];
const COMMON_LOC: &[&str] = &["Paris", "Berlin", "Tokyo", "Cairo", "Lima", "Oslo"];
const COMMON_ORG: &[&str] = &["Google", "Reuters", "UNESCO", "Siemens"];
const COMMON_EVT: &[&str] = &["the Olympics", "the World Cup"];

const SYLLABLES: &[&str] = &["ka", "lo", "mi", "ren", "tu", "sa", "vel", "or", "ban", "dri", "ne", "qua", "zor", "pe", "li", "mar", "tho", "gan", "fi", "os"];
const ORG_SUFFIX: &[&str] = &["Corp", "Institute", "Group", "Bank", "Labs", "Union"];
const LOC_PREFIX: &[&str] = &["Port", "New", "North", "Lake", "San"];
const EVT_SUFFIX: &[&str] = &["Summit", "Festival", "Games", "Conference", "Marathon"];

/// A token sequence with one tag per token.
type Tagged = Vec<(String, String)>;

fn plain(text: &str) -> Tagged {
    text.split_whitespace().map(|w| (w.to_string(), "O".to_string())).collect()
}

fn entity(text: &str, label: &str) -> Tagged {
    text.split_whitespace()
        .enumerate()
        .map(|(i, w)| {
            let tag = if w == "the" && i == 0 {
                "O".to_string()
            } else if i == 0 || (i == 1 && text.starts_with("the ")) {
                format!("B-{label}")
            } else {
                format!("I-{label}")
            };
            (w.to_string(), tag)
        })
        .collect()
}

fn coined(rng: &mut ChaCha8Rng) -> String {
    let parts = rng.random_range(2..=3);
    let mut word: String = (0..parts).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
    word[..1].make_ascii_uppercase();
    word
}

fn rare_entity(rng: &mut ChaCha8Rng, label: &str) -> String {
    match label {
        "PER" => format!("{} {}", coined(rng), coined(rng)),
        "LOC" if rng.random_bool(0.4) => format!("{} {}", LOC_PREFIX.choose(rng).expect("non-empty"), coined(rng)),
        "LOC" => coined(rng),
        "ORG" => format!("{} {}", coined(rng), ORG_SUFFIX.choose(rng).expect("non-empty")),
        _ => format!("the {} {}", coined(rng), EVT_SUFFIX.choose(rng).expect("non-empty")),
    }
}

fn filler(rng: &mut ChaCha8Rng) -> Tagged {
    let mut out = Tagged::new();
    if rng.random_bool(0.4) {
        out.extend(plain(FILLER_OPENERS.choose(rng).expect("non-empty")));
    }
    out.extend(plain(FILLER_SUBJECTS.choose(rng).expect("non-empty")));
    out.extend(plain(FILLER_VERBS.choose(rng).expect("non-empty")));
    out.extend(plain(FILLER_ADJS.choose(rng).expect("non-empty")));
    out.extend(plain(FILLER_TAILS.choose(rng).expect("non-empty")));
    out.extend(plain("."));
    out
}

fn frequent(rng: &mut ChaCha8Rng) -> Tagged {
    let per = *COMMON_PER.choose(rng).expect("non-empty");
    let loc = *COMMON_LOC.choose(rng).expect("non-empty");
    let org = *COMMON_ORG.choose(rng).expect("non-empty");
    let evt = *COMMON_EVT.choose(rng).expect("non-empty");
    let mut out = Tagged::new();
    match rng.random_range(0..4) {
        0 => {
            out.extend(entity(per, "PER"));
            out.extend(plain("visited"));
            out.extend(entity(loc, "LOC"));
        }
        1 => {
            out.extend(entity(per, "PER"));
            out.extend(plain("works for"));
            out.extend(entity(org, "ORG"));
        }
        2 => {
            out.extend(entity(org, "ORG"));
            out.extend(plain("opened an office in"));
            out.extend(entity(loc, "LOC"));
        }
        _ => {
            out.extend(entity(loc, "LOC"));
            out.extend(plain("will host"));
            out.extend(entity(evt, "EVT"));
        }
    }
    out.extend(plain("."));
    out
}

/// Type-specific words placed immediately before and after a rare name.
/// Each list is drawn Zipf-style, so late entries are seldom seen.
const CUES: &[(&str, &[&str], &[&str])] = &[
    (
        "PER",
        &["coach", "senator", "actress", "minister", "uncle", "professor", "captain", "judge", "singer", "doctor",
          "pilot", "nurse", "chef", "poet", "sheriff", "bishop", "lawyer", "farmer", "dancer", "economist",
          "general", "astronaut", "detective", "baker", "referee", "novelist", "violinist", "sculptor", "surgeon", "cousin"],
        &["said", "smiled", "resigned", "laughed", "testified", "insisted", "replied", "whispered", "apologized", "confessed",
          "shouted", "wrote", "argued", "nodded", "sighed", "wept", "shrugged", "joked", "blushed", "frowned",
          "hesitated", "winked", "stammered", "grinned", "yawned", "protested", "remarked", "murmured", "giggled", "objected"],
    ),
    (
        "LOC",
        &["in", "near", "across", "outside", "toward", "beyond", "around", "inside", "via", "throughout",
          "northwards", "overlooking", "downstream", "upriver", "encircling", "amid", "surrounding", "bordering", "traversing", "above",
          "circling", "skirting", "fortifying", "besieging", "annexing", "flooding", "mapping", "evacuating", "irrigating", "colonizing"],
        &["harbour", "province", "skyline", "outskirts", "suburbs", "coastline", "highlands", "valley", "district", "lowlands",
          "waterfront", "plateau", "peninsula", "marshes", "foothills", "archipelago", "delta", "uplands", "steppe", "canyon",
          "lagoon", "estuary", "fjords", "glacier", "tundra", "savanna", "badlands", "oasis", "moorland", "heath"],
    ),
    (
        "ORG",
        &["retailer", "lender", "insurer", "broadcaster", "regulator", "startup", "conglomerate", "carrier", "automaker", "publisher",
          "brewer", "miner", "chipmaker", "shipbuilder", "utility", "airline", "bank", "distributor", "wholesaler", "franchise",
          "exporter", "refiner", "telecom", "pharmacy", "cooperative", "syndicate", "consortium", "charity", "foundation", "union"],
        &["reported", "hired", "merged", "listed", "invested", "downsized", "outsourced", "rebranded", "audited", "subsidized",
          "relocated", "diversified", "restructured", "liquidated", "recalled", "lobbied", "franchised", "securitized", "underwrote", "divested",
          "consolidated", "delisted", "recapitalized", "unionized", "automated", "privatized", "nationalized", "incorporated", "leveraged", "hedged"],
    ),
    (
        "EVT",
        &["attended", "during", "before", "postponed", "boycotted", "televised", "celebrated", "after", "until", "cancelled",
          "rescheduled", "hosted", "livestreamed", "picketed", "organized", "headlined", "judged", "officiated", "sponsoring", "commemorating",
          "relocating", "opening", "closing", "disrupting", "crashing", "reviewing", "previewing", "auditing", "staffing", "insuring"],
        &["opened", "concluded", "drew", "ended", "featured", "resumed", "began", "closed", "overran", "sold",
          "premiered", "flopped", "expanded", "shrank", "relocated", "rebooted", "peaked", "faltered", "triumphed", "stalled",
          "reconvened", "adjourned", "climaxed", "fizzled", "escalated", "dwindled", "rallied", "rebounded", "intensified", "waned"],
    ),
];

const LOWERCASE_RATE: f64 = 0.6;

const CONNECTORS: &[&str] = &["and", ";", "while", "but", "after", "so", "because", "although"];

fn zipf_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let total: f64 = (1..=n).map(|r| 1.0 / r as f64).sum();
    let mut target = rng.random::<f64>() * total;
    for r in 0..n {
        target -= 1.0 / (r + 1) as f64;
        if target <= 0.0 {
            return r;
        }
    }
    n - 1
}

/// A rare entity: usually a bare coined name whose type only the context
/// reveals, sometimes with a type cue, occasionally lowercased.
fn rare_surface(rng: &mut ChaCha8Rng, label: &str) -> String {
    let surface = if rng.random_bool(0.6) {
        match label {
            "PER" if rng.random_bool(0.5) => format!("{} {}", coined(rng), coined(rng)),
            _ => coined(rng),
        }
    } else {
        match rare_entity(rng, label) {
            evt if label == "EVT" => evt.trim_start_matches("the ").to_string(),
            other => other,
        }
    };
    if rng.random_bool(LOWERCASE_RATE) {
        surface.to_lowercase()
    } else {
        surface
    }
}

/// Cue vocabulary per type: the word lists above followed by
/// `EXTRA_CUES` coined words per side, unique across all lists.
struct CueVocab {
    label: &'static str,
    left: Vec<String>,
    right: Vec<String>,
}

const EXTRA_CUES: usize = 120;
const CUE_SEED: u64 = 0x5eed_c0de;

fn cue_vocab() -> Vec<CueVocab> {
    let mut rng = ChaCha8Rng::seed_from_u64(CUE_SEED);
    let mut used: std::collections::HashSet<String> =
        CUES.iter().flat_map(|(_, l, r)| l.iter().chain(r.iter()).map(|w| w.to_string())).collect();
    let mut extend = |base: &[&str], rng: &mut ChaCha8Rng| {
        let mut words: Vec<String> = base.iter().map(|w| w.to_string()).collect();
        while words.len() < base.len() + EXTRA_CUES {
            let w = coined(rng).to_lowercase();
            if used.insert(w.clone()) {
                words.push(w);
            }
        }
        words
    };
    CUES.iter()
        .map(|(label, left, right)| CueVocab { label, left: extend(left, &mut rng), right: extend(right, &mut rng) })
        .collect()
}

fn mention(rng: &mut ChaCha8Rng, cues: &[CueVocab]) -> Tagged {
    let cue = &cues[rng.random_range(0..cues.len())];
    let mut out = plain(&cue.left[zipf_index(rng, cue.left.len())]);
    out.extend(entity(&rare_surface(rng, cue.label), cue.label));
    out.extend(plain(&cue.right[zipf_index(rng, cue.right.len())]));
    out
}

fn rare(rng: &mut ChaCha8Rng, cues: &[CueVocab]) -> Tagged {
    let mut out = mention(rng, cues);
    if rng.random_bool(0.5) {
        out.extend(plain(CONNECTORS.choose(rng).expect("non-empty")));
        out.extend(mention(rng, cues));
    }
    out.extend(plain("."));
    out
}

/// Column-format text of a synthetic corpus of `size` sentences.
pub fn desk_corpus_text(seed: u64, size: usize) -> String {
    let cues = cue_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..size {
        let roll: f64 = rng.random();
        let sentence = if roll < 0.4 {
            filler(&mut rng)
        } else if roll < 0.55 {
            frequent(&mut rng)
        } else {
            rare(&mut rng, &cues)
        };
        if i > 0 {
            out.push('\n');
        }
        for (token, tag) in sentence {
            out.push_str(&token);
            out.push('\t');
            out.push_str(&tag);
            out.push('\n');
        }
    }
    out
}

pub fn desk_corpus(seed: u64, size: usize) -> Result<Corpus> {
    parse_column_str(&desk_corpus_text(seed, size), true, None)
}

/// The bundled desk corpus, parsed.
pub fn bundled_desk_corpus() -> Result<Corpus> {
    parse_column_str(BUNDLED_DESK_CORPUS, true, None)
}
