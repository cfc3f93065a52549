//! Synthetic directory-service traffic.
//!
//! Messages are brace-delimited `key:value` lists in the style of a small
//! LDAP-like directory protocol. Templates use `$NAME` placeholders:
//!
//! | placeholder | value |
//! |---|---|
//! | `$ID` | transaction id (also the trace index) |
//! | `$SN` | surname |
//! | `$GN` | given name |
//! | `$MOBILE` | 7 or 8 digits |
//! | `$PC` | 5-digit postcode |
//! | `$BOOL` | `True` or `False` |
//!
//! Placeholders shared between a request and its response carry the same
//! value within one transaction.

use std::collections::{BTreeMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::trace::{Transaction, TransactionLibrary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationSpec {
    pub name: String,
    pub request: String,
    pub response: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdPolicy {
    /// Distinct ids drawn uniformly from `1..=max` (widened if too small).
    UniqueRandom { max: u64 },
    /// `start, start + 1, ...`
    Sequential { start: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProtocolSpec {
    pub operations: Vec<OperationSpec>,
    pub id_policy: IdPolicy,
    /// Fraction of transactions whose payload values are copied from an
    /// earlier transaction of a different operation.
    pub confusion: f64,
}

fn op(name: &str, request: &str, response: &str, weight: f64) -> OperationSpec {
    OperationSpec {
        name: name.into(),
        request: request.into(),
        response: response.into(),
        weight,
    }
}

impl SyntheticProtocolSpec {
    /// Five-operation directory protocol: search and add plus delete, update
    /// and compare.
    pub fn directory() -> Self {
        Self {
            operations: vec![
                op(
                    "search",
                    "{id:$ID,op:S,sn:$SN}",
                    "{id:$ID,op:SearchRsp,result:Ok,gn:$GN,sn:$SN,mobile:$MOBILE}",
                    0.3,
                ),
                op("add", "{id:$ID,op:A,sn:$SN,mobile:$MOBILE}", "{id:$ID,op:AddRsp,result:Ok}", 0.2),
                op("delete", "{id:$ID,op:D,sn:$SN}", "{id:$ID,op:DeleteRsp,result:Ok,deleted:1}", 0.15),
                op(
                    "update",
                    "{id:$ID,op:U,sn:$SN,mobile:$MOBILE}",
                    "{id:$ID,op:ModifyRsp,result:Ok,changed:mobile}",
                    0.2,
                ),
                op(
                    "compare",
                    "{id:$ID,op:C,sn:$SN,gn:$GN}",
                    "{id:$ID,op:CompareRsp,result:$BOOL}",
                    0.15,
                ),
            ],
            id_policy: IdPolicy::UniqueRandom { max: 9999 },
            confusion: 0.0,
        }
    }

    /// The directory protocol with a share of cross-operation look-alike
    /// payloads.
    pub fn directory_with_confusion(confusion: f64) -> Self {
        Self {
            confusion,
            ..Self::directory()
        }
    }

    /// Checks that operation names are distinct, weights usable and that every
    /// template renders into a message the directory validator accepts.
    pub fn validate(&self) -> Result<(), String> {
        if self.operations.is_empty() {
            return Err("no operations".into());
        }
        let mut names = HashSet::new();
        for o in &self.operations {
            if !names.insert(o.name.as_str()) {
                return Err(format!("duplicate operation {}", o.name));
            }
            if !(o.weight.is_finite() && o.weight >= 0.0) {
                return Err(format!("bad weight for {}", o.name));
            }
            let values = Payload::fixed();
            for t in [&o.request, &o.response] {
                let rendered = render(t, 1, &values);
                if super::validator::parse_message(&rendered).is_none() {
                    return Err(format!("template {t:?} does not render a valid message"));
                }
            }
        }
        if self.operations.iter().all(|o| o.weight == 0.0) {
            return Err("all weights are zero".into());
        }
        if !(0.0..=1.0).contains(&self.confusion) {
            return Err("confusion must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// A library together with the operation each transaction was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledLibrary {
    pub library: TransactionLibrary,
    /// Index into `operations`, one per transaction.
    pub labels: Vec<usize>,
    pub operation_names: Vec<String>,
    /// Positions whose payload was copied from another operation's request.
    pub planted: Vec<usize>,
}

impl LabelledLibrary {
    pub fn label_histogram(&self) -> BTreeMap<String, usize> {
        let mut h = BTreeMap::new();
        for &l in &self.labels {
            *h.entry(self.operation_names[l].clone()).or_insert(0) += 1;
        }
        h
    }
}

#[derive(Debug, Clone)]
struct Payload {
    sn: String,
    gn: String,
    mobile: String,
    pc: String,
    boolean: &'static str,
}

impl Payload {
    fn fixed() -> Self {
        Self {
            sn: "Du".into(),
            gn: "Miao".into(),
            mobile: "5362634".into(),
            pc: "33589".into(),
            boolean: "True",
        }
    }
}

fn render(template: &str, id: u64, p: &Payload) -> Vec<u8> {
    template
        .replace("$ID", &id.to_string())
        .replace("$SN", &p.sn)
        .replace("$GN", &p.gn)
        .replace("$MOBILE", &p.mobile)
        .replace("$PC", &p.pc)
        .replace("$BOOL", p.boolean)
        .into_bytes()
}

const ONSETS: &[&str] = &[
    "b", "br", "c", "ch", "d", "f", "g", "gr", "h", "j", "k", "l", "m", "n", "p", "r", "s", "sch", "st",
    "t", "v", "w", "z",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ei", "au", "ie", "y"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "nd", "ck", "tt", "m"];

fn name<R: Rng>(rng: &mut R, min_syl: usize, max_syl: usize) -> String {
    let syllables = rng.gen_range(min_syl..=max_syl);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(ONSETS.choose(rng).unwrap());
        s.push_str(NUCLEI.choose(rng).unwrap());
        s.push_str(CODAS.choose(rng).unwrap());
    }
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => s,
    }
}

fn digits<R: Rng>(rng: &mut R, n: usize) -> String {
    let mut s = String::with_capacity(n);
    s.push(char::from(b'1' + rng.gen_range(0..9u8)));
    for _ in 1..n {
        s.push(char::from(b'0' + rng.gen_range(0..10u8)));
    }
    s
}

fn random_payload<R: Rng>(rng: &mut R) -> Payload {
    let mobile_len = rng.gen_range(7..=8);
    Payload {
        sn: name(rng, 1, 3),
        gn: name(rng, 1, 2),
        mobile: digits(rng, mobile_len),
        pc: digits(rng, 5),
        boolean: if rng.gen_bool(0.5) { "True" } else { "False" },
    }
}

fn placeholders(template: &str) -> Vec<&'static str> {
    ["$SN", "$GN", "$MOBILE", "$PC"]
        .into_iter()
        .filter(|p| template.contains(p))
        .collect()
}

fn ids<R: Rng>(rng: &mut R, policy: IdPolicy, n: usize) -> Vec<u64> {
    match policy {
        IdPolicy::Sequential { start } => (0..n as u64).map(|i| start + i).collect(),
        IdPolicy::UniqueRandom { max } => {
            let max = max.max(2 * n as u64);
            rand::seq::index::sample(rng, max as usize, n)
                .into_iter()
                .map(|i| i as u64 + 1)
                .collect()
        }
    }
}

/// Draws `n` transactions. Deterministic for a given `(spec, n, seed)`.
pub fn synthetic_library(spec: &SyntheticProtocolSpec, n: usize, seed: u64) -> LabelledLibrary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = WeightedIndex::new(spec.operations.iter().map(|o| o.weight))
        .expect("operation weights must be non-negative with a positive sum");
    let ids = ids(&mut rng, spec.id_policy, n);
    let slots: Vec<Vec<&str>> = spec.operations.iter().map(|o| placeholders(&o.request)).collect();

    let mut txs = Vec::with_capacity(n);
    let mut labels: Vec<usize> = Vec::with_capacity(n);
    let mut payloads: Vec<Payload> = Vec::with_capacity(n);
    let mut planted = Vec::new();
    // Donors and planted transactions are never reused as donors.
    let mut used: Vec<bool> = Vec::with_capacity(n);
    for (pos, &id) in ids.iter().enumerate() {
        let label = weights.sample(&mut rng);
        let mut payload = random_payload(&mut rng);
        let mut planted_here = false;
        if spec.confusion > 0.0 && rng.gen_bool(spec.confusion) {
            // Copy from an earlier transaction of another operation, preferring
            // one whose request carries the same payload fields.
            let others: Vec<usize> = (0..pos).filter(|&p| labels[p] != label && !used[p]).collect();
            let same_shape: Vec<usize> = others
                .iter()
                .copied()
                .filter(|&p| slots[labels[p]] == slots[label])
                .collect();
            let pool = if same_shape.is_empty() { &others } else { &same_shape };
            if let Some(&donor) = pool.choose(&mut rng) {
                // A surname nobody else carries, so the pair is the only match.
                let planted_sn = loop {
                    let candidate = name(&mut rng, 1, 3);
                    if payloads.iter().all(|p| p.sn != candidate) {
                        break candidate;
                    }
                };
                payloads[donor].sn = planted_sn.clone();
                let d = &payloads[donor];
                txs[donor] = Transaction::new(
                    ids[donor],
                    render(&spec.operations[labels[donor]].request, ids[donor], d),
                    render(&spec.operations[labels[donor]].response, ids[donor], d),
                );
                payload = Payload {
                    boolean: payload.boolean,
                    ..d.clone()
                };
                planted.push(pos);
                used[donor] = true;
                planted_here = true;
            }
        }
        let o = &spec.operations[label];
        txs.push(Transaction::new(
            id,
            render(&o.request, id, &payload),
            render(&o.response, id, &payload),
        ));
        labels.push(label);
        payloads.push(payload);
        used.push(planted_here);
    }
    LabelledLibrary {
        library: TransactionLibrary::new(txs).expect("generated ids are unique"),
        labels,
        operation_names: spec.operations.iter().map(|o| o.name.clone()).collect(),
        planted,
    }
}

/// The eight-transaction directory example, byte for byte.
pub fn directory_example_library() -> TransactionLibrary {
    let rows: [(u64, &str, &str); 8] = [
        (1, "{id:1,op:S,sn:Du}", "{id:1,op:SearchRsp,result:Ok,gn:Miao,sn:Du,mobile:5362634}"),
        (
            13,
            "{id:13,op:S,sn:Versteeg}",
            "{id:13,op:SearchRsp,result:Ok,gn:Steve,sn:Versteeg,mobile:9374723}",
        ),
        (24, "{id:24,op:A,sn:Schneider,mobile:123456}", "{id:24,op:AddRsp,result:Ok}"),
        (275, "{id:275,op:S,sn:Han}", "{id:275,op:SearchRsp,result:Ok,gn:Jun,sn:Han,mobile:33333333}"),
        (
            490,
            "{id:490,op:S,sn:Grundy}",
            "{id:490,op:SearchRsp,result:Ok,gn:John,sn:Grundy,mobile:44444444}",
        ),
        (
            2273,
            "{id:2273,op:S,sn:Schneider}",
            "{id:2273,op:SearchRsp,result:Ok,sn:Schneider,mobile:123456}",
        ),
        (2487, "{id:2487,op:A,sn:Will}", "{id:2487,op:AddRsp,result:Ok}"),
        (3106, "{id:3106,op:A,sn:Hine,gn:Cam,Postcode:33589}", "{id:3106,op:AddRsp,result:Ok}"),
    ];
    TransactionLibrary::new(
        rows.iter()
            .map(|&(i, q, r)| Transaction::new(i, q.as_bytes(), r.as_bytes()))
            .collect(),
    )
    .expect("example rows are valid")
}

/// Operation labels of [`directory_example_library`]: 0 = search, 1 = add.
pub fn directory_example_labels() -> Vec<usize> {
    vec![0, 0, 1, 0, 0, 0, 1, 1]
}
