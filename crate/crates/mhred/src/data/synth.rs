//! Seeded synthetic shopping-dialogue corpora.
//!
//! Two styles with opposite information structure: `TextDriven` hides the
//! response-determining signal in a context turn four steps before the
//! target, readable by any text model with enough context; `ImageDriven`
//! encodes it only in image feature vectors, so text-only models cannot
//! recover it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DialogueTranscript, FeatureStore, Speaker, Turn};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusStyle {
    TextDriven,
    ImageDriven,
}

pub(crate) const CATEGORIES: [(&str, &str); 8] = [
    ("shirt", "our shirts come in cotton and linen"),
    ("jeans", "the denim rack has slim and relaxed fits"),
    ("dress", "evening gowns and sundresses arrive on friday"),
    ("jacket", "bomber jackets pair well with dark boots"),
    ("skirt", "pleated skirts are popular this season"),
    ("sweater", "chunky knits keep you warm outdoors"),
    ("hat", "wide brim hats block harsh sunlight"),
    ("scarf", "silk scarves add color to plain outfits"),
];

const GREETINGS: [&str; 4] = ["hi there", "hello", "good morning", "hey"];
const BUDGETS: [&str; 4] = [
    "my budget is around 50",
    "my budget is around 100",
    "my budget is around 150",
    "my budget is around 200",
];
const FILLERS: [&str; 4] = [
    "i prefer something comfortable",
    "it should look classy",
    "this is for a weekend trip",
    "nothing too flashy please",
];
const ASKS: [&str; 4] = [
    "could you recommend something",
    "what would you suggest",
    "any recommendations for me",
    "please show me your picks",
];

pub(crate) const MATERIALS: [(&str, &str); 6] = [
    ("velvet", "these are crafted from pure velvet"),
    ("leather", "this set is genuine leather"),
    ("cotton", "soft cotton weave throughout"),
    ("denim", "classic denim construction here"),
    ("silk", "smooth silk fabric as requested"),
    ("wool", "warm wool blend for winter"),
];

const IMAGE_PROMPT: &str = "show me some options please";
const IMAGE_QUESTION: &str = "which material are these ones";

/// Generates `n_sessions` templated dialogues plus their feature store
/// (empty for the text style). A fixed seed reproduces the corpus bitwise.
pub fn synthesize_corpus(
    seed: u64,
    n_sessions: usize,
    style: CorpusStyle,
    img_dim: usize,
) -> Result<(Vec<DialogueTranscript>, FeatureStore)> {
    if n_sessions == 0 {
        return Err(Error::Contract("n_sessions must be at least 1".into()));
    }
    if img_dim == 0 {
        return Err(Error::Contract("img_dim must be positive".into()));
    }
    if style == CorpusStyle::ImageDriven && img_dim < MATERIALS.len() {
        return Err(Error::Contract(format!(
            "image_driven features need img_dim >= {}, got {img_dim}",
            MATERIALS.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = FeatureStore::new(img_dim);
    let mut transcripts = Vec::with_capacity(n_sessions);
    for i in 0..n_sessions {
        let session_id = format!("synth{i:05}");
        let turns = match style {
            CorpusStyle::TextDriven => text_driven_turns(&mut rng),
            CorpusStyle::ImageDriven => {
                image_driven_turns(&mut rng, &session_id, img_dim, &mut store)?
            }
        };
        transcripts.push(DialogueTranscript { session_id, turns });
    }
    Ok((transcripts, store))
}

fn user(text: &str) -> Turn {
    Turn {
        speaker: Speaker::User,
        text: text.to_string(),
        image_ids: Vec::new(),
    }
}

/// Six turns; the category named in turn 2 (four steps before the target)
/// fully determines the agent response, everything else is pooled filler.
fn text_driven_turns(rng: &mut ChaCha8Rng) -> Vec<Turn> {
    let (category, response) = CATEGORIES[rng.random_range(0..CATEGORIES.len())];
    let greeting = GREETINGS[rng.random_range(0..GREETINGS.len())];
    let budget = BUDGETS[rng.random_range(0..BUDGETS.len())];
    let filler = FILLERS[rng.random_range(0..FILLERS.len())];
    let ask = ASKS[rng.random_range(0..ASKS.len())];
    vec![
        user(greeting),
        user(&format!("i am looking for a {category}")),
        user(budget),
        user(filler),
        user(ask),
        Turn {
            speaker: Speaker::Agent,
            text: response.to_string(),
            image_ids: Vec::new(),
        },
    ]
}

/// Four turns with constant text; the latent material sits only in the
/// image features of turn 2 as a scaled one-hot block over the first
/// `MATERIALS.len()` dimensions, noise everywhere else.
fn image_driven_turns(
    rng: &mut ChaCha8Rng,
    session_id: &str,
    img_dim: usize,
    store: &mut FeatureStore,
) -> Result<Vec<Turn>> {
    let material = rng.random_range(0..MATERIALS.len());
    let n_images = rng.random_range(2..=5);
    let mut image_ids = Vec::with_capacity(n_images);
    for j in 0..n_images {
        let id = format!("{session_id}_img{j}");
        let mut features = vec![0.0; img_dim];
        for (d, f) in features.iter_mut().enumerate() {
            *f = if d == material {
                2.0 + rng.random_range(-0.1..0.1)
            } else {
                rng.random_range(-0.3..0.3)
            };
        }
        store.insert(id.clone(), features)?;
        image_ids.push(id);
    }
    Ok(vec![
        user(IMAGE_PROMPT),
        Turn {
            speaker: Speaker::Agent,
            text: String::new(),
            image_ids,
        },
        user(IMAGE_QUESTION),
        Turn {
            speaker: Speaker::Agent,
            text: MATERIALS[material].1.to_string(),
            image_ids: Vec::new(),
        },
    ])
}
