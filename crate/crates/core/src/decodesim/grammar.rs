//! Template grammars for the in-domain (assistant command) and chatter
//! (conversational) corpora.

use rand::Rng;

pub const TRIGGER: [&str; 2] = ["hey", "device"];

/// Tokens one or two edits away from a trigger word. Never produced by either
/// grammar; only injected into near-miss false triggers. The first
/// `NEAR_HEY` entries stand in for `hey`, the rest for `device`.
pub const NEAR_TRIGGER: &[&str] = &["hay", "hi", "they", "devise", "advice", "decide", "divide", "revise"];
const NEAR_HEY: usize = 3;

const IN_DOMAIN: &[&str] = &[
    "play {genre}",
    "play some {genre} music",
    "play {artist}",
    "play the next song",
    "play my {genre} playlist",
    "what is the weather in {city}",
    "what is the weather {day}",
    "will it rain in {city} {day}",
    "set a timer for {number} minutes",
    "set an alarm for {number} {ampm}",
    "call {contact}",
    "send a message to {contact}",
    "turn on the {appliance}",
    "turn off the {appliance} in the {room}",
    "turn the {appliance} off",
    "what time is it",
    "what time is it in {city}",
    "stop",
    "pause the music",
    "turn it up",
    "turn the volume down",
    "add {item} to my shopping list",
    "remind me to buy {item} {day}",
    "how far is {city}",
    "tell me a joke",
    "what is on my calendar {day}",
    "read my messages",
    "skip this song",
];

const CHATTER: &[&str] = &[
    "hey {name} how are you",
    "hey {name} can you pass the {food}",
    "hey {name} come look at this",
    "i think we should go to the {place} {day}",
    "did you see the game last night",
    "what are we having for dinner {day}",
    "i told {name} about the {thing}",
    "let me know when you are ready",
    "that movie was so {adj}",
    "can you believe what {name} said",
    "we need to buy more {item}",
    "my {family} is coming over {day}",
    "i am so tired {day}",
    "do you want to play a game",
    "the {food} is in the {room}",
    "i will call you {day}",
    "it is so {adj} outside",
    "where did you put the {thing}",
    "she said the weather was {adj}",
    "you have to listen to this song",
    "he does not like {genre}",
    "we should visit {city} {day}",
    "what time does the {place} open",
    "i have a {thing} for {name}",
    "{name} is at the {place} with my {family}",
    "turn around and look at the {thing}",
    "are you coming to the {place} {day}",
    "that is a {adj} idea",
    "hey {name} turn on the {appliance}",
    "hey {name} what time is it",
    "hey {name} play that song again",
    "can you play some {genre} music",
    "did you turn off the {appliance}",
    "what is the weather like in {city}",
    "remind me to call {contact} {day}",
    "i set an alarm for {number} {ampm}",
    "{name} played some {genre} music",
    "{name} plays the next song",
    "we set a time for {number} minutes",
    "i turned off the {appliance} in the {room}",
    "she called {contact} {day}",
    "he turned the volume down",
];

fn slot(name: &str) -> &'static [&'static str] {
    match name {
        "genre" => &["jazz", "rock", "pop", "classical", "country", "blues", "reggae", "metal"],
        "artist" => &["adele", "drake", "queen", "coldplay", "madonna", "prince", "beyonce", "nirvana"],
        "city" => &["paris", "london", "boston", "denver", "austin", "seattle", "tokyo", "berlin"],
        "day" => &["today", "tomorrow", "tonight", "monday", "friday", "this weekend"],
        "number" => &["one", "two", "three", "four", "five", "ten", "fifteen", "twenty", "thirty"],
        "ampm" => &["am", "pm"],
        "contact" => &["mom", "dad", "alex", "sarah", "john", "emma", "mike", "grandma"],
        "appliance" => &["lights", "fan", "heater", "tv", "radio", "lamp", "oven"],
        "room" => &["kitchen", "bedroom", "garage", "office", "hallway"],
        "item" => &["milk", "eggs", "bread", "apples", "coffee", "butter", "cheese"],
        "name" => &["devin", "denise", "david", "kevin", "jessica", "ryan", "olivia", "steve"],
        "food" => &["salt", "pepper", "pizza", "pasta", "salad", "soup", "rice"],
        "place" => &["park", "mall", "beach", "gym", "store", "library", "office"],
        "thing" => &["car", "phone", "keys", "book", "dog", "gift", "plan", "letter", "ticket"],
        "adj" => &["good", "bad", "funny", "cold", "hot", "boring", "weird", "nice"],
        "family" => &["sister", "brother", "aunt", "uncle", "cousin", "mother", "father"],
        other => panic!("unknown grammar slot `{other}`"),
    }
}

fn expand<R: Rng>(rng: &mut R, template: &str) -> Vec<String> {
    let mut out = Vec::new();
    for tok in template.split_whitespace() {
        if let Some(name) = tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
            let choices = slot(name);
            let pick = choices[rng.random_range(0..choices.len())];
            out.extend(pick.split_whitespace().map(String::from));
        } else {
            out.push(tok.to_string());
        }
    }
    out
}

/// `hey device <command>`.
pub fn in_domain_sentence<R: Rng>(rng: &mut R) -> Vec<String> {
    let mut s: Vec<String> = TRIGGER.iter().map(|t| t.to_string()).collect();
    let t = IN_DOMAIN[rng.random_range(0..IN_DOMAIN.len())];
    s.extend(expand(rng, t));
    s
}

pub fn chatter_sentence<R: Rng>(rng: &mut R) -> Vec<String> {
    let t = CHATTER[rng.random_range(0..CHATTER.len())];
    expand(rng, t)
}

/// Trigger-like opening of a near-miss false trigger: one of the two trigger
/// tokens swapped for a near-trigger token.
pub fn near_miss_prefix<R: Rng>(rng: &mut R) -> Vec<String> {
    let k = rng.random_range(0..NEAR_TRIGGER.len());
    let near = NEAR_TRIGGER[k].to_string();
    if k < NEAR_HEY {
        vec![near, TRIGGER[1].to_string()]
    } else {
        vec![TRIGGER[0].to_string(), near]
    }
}

/// Every token either grammar can emit, plus the near-trigger tokens, sorted.
pub fn pooled_vocab() -> Vec<String> {
    let mut words: Vec<String> = TRIGGER.iter().chain(NEAR_TRIGGER).map(|s| s.to_string()).collect();
    for t in IN_DOMAIN.iter().chain(CHATTER) {
        for tok in t.split_whitespace() {
            if let Some(name) = tok.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
                for v in slot(name) {
                    words.extend(v.split_whitespace().map(String::from));
                }
            } else {
                words.push(tok.to_string());
            }
        }
    }
    words.sort();
    words.dedup();
    words
}

/// True when `words` contains the trigger phrase as a contiguous subsequence.
pub fn contains_trigger<S: AsRef<str>>(words: &[S]) -> bool {
    words.windows(2).any(|w| w[0].as_ref() == TRIGGER[0] && w[1].as_ref() == TRIGGER[1])
}
