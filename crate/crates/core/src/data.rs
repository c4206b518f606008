//! HotpotQA-format ingest, the JSON-lines evidence corpus, chunking of
//! contexts into evidence, and the synthetic multi-hop generator.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{byte_offset, CorpusMode, Granularity};
use crate::error::{Error, Result};
use crate::train::TrainSample;
use crate::vocab::{Vocabulary, EOS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextParagraph {
    pub title: String,
    pub sentences: Vec<String>,
}

impl ContextParagraph {
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportingFact {
    pub title: String,
    pub sentence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QASample {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub context: Vec<ContextParagraph>,
    pub supporting_facts: Vec<SupportingFact>,
}

impl QASample {
    /// Question and answer nonempty, every supporting-fact title present in
    /// the context.
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("question", &self.question), ("answer", &self.answer)] {
            if v.trim().is_empty() {
                return Err(Error::Schema {
                    record: self.id.clone(),
                    message: format!("field {field:?} is empty"),
                });
            }
        }
        for f in &self.supporting_facts {
            if !self.context.iter().any(|p| p.title == f.title) {
                return Err(Error::DanglingSupportingFact {
                    record: self.id.clone(),
                    title: f.title.clone(),
                });
            }
        }
        Ok(())
    }
}

fn schema(record: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        record: record.to_string(),
        message: message.into(),
    }
}

fn str_field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str, record: &str) -> Result<&'a str> {
    match obj.get(key) {
        None => Err(schema(record, format!("missing field {key:?}"))),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(schema(record, format!("field {key:?} is not a string"))),
    }
}

fn array_field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str, record: &str) -> Result<&'a Vec<Value>> {
    match obj.get(key) {
        None => Err(schema(record, format!("missing field {key:?}"))),
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(schema(record, format!("field {key:?} is not an array"))),
    }
}

fn parse_record(value: &Value, position: usize) -> Result<QASample> {
    let fallback = format!("#{position}");
    let obj = value
        .as_object()
        .ok_or_else(|| schema(&fallback, "record is not an object"))?;
    let id = match obj.get("_id") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(schema(&fallback, "field \"_id\" is not a string")),
        None => return Err(schema(&fallback, "missing field \"_id\"")),
    };
    let question = str_field(obj, "question", &id)?.to_string();
    let answer = str_field(obj, "answer", &id)?.to_string();

    let mut supporting_facts = Vec::new();
    for f in array_field(obj, "supporting_facts", &id)? {
        match f.as_array().map(Vec::as_slice) {
            Some([Value::String(t), Value::Number(n)]) if n.as_u64().is_some() => {
                supporting_facts.push(SupportingFact {
                    title: t.clone(),
                    sentence: n.as_u64().unwrap() as usize,
                });
            }
            _ => return Err(schema(&id, "supporting fact is not [title, sentence index]")),
        }
    }

    let mut context = Vec::new();
    for p in array_field(obj, "context", &id)? {
        match p.as_array().map(Vec::as_slice) {
            Some([Value::String(t), Value::Array(sents)]) => {
                let sentences = sents
                    .iter()
                    .map(|s| {
                        s.as_str()
                            .map(str::to_string)
                            .ok_or_else(|| schema(&id, "context sentence is not a string"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                context.push(ContextParagraph {
                    title: t.clone(),
                    sentences,
                });
            }
            _ => return Err(schema(&id, "context entry is not [title, [sentences]]")),
        }
    }

    let sample = QASample {
        id,
        question,
        answer,
        context,
        supporting_facts,
    };
    sample.validate()?;
    Ok(sample)
}

/// Parse HotpotQA JSON text (an array of records).
pub fn parse_hotpotqa(text: &str, path: &Path) -> Result<Vec<QASample>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let records = root.as_array().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        message: "top-level value is not an array".into(),
    })?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| parse_record(r, i))
        .collect()
}

pub fn load_hotpotqa(path: &Path) -> Result<Vec<QASample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hotpotqa(&text, path)
}

pub fn hotpotqa_json(samples: &[QASample]) -> String {
    let records: Vec<Value> = samples
        .iter()
        .map(|s| {
            json!({
                "_id": s.id,
                "question": s.question,
                "answer": s.answer,
                "supporting_facts": s
                    .supporting_facts
                    .iter()
                    .map(|f| json!([f.title, f.sentence]))
                    .collect::<Vec<_>>(),
                "context": s
                    .context
                    .iter()
                    .map(|p| json!([p.title, p.sentences]))
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&records).expect("records serialize");
    out.push('\n');
    out
}

pub fn write_hotpotqa(path: &Path, samples: &[QASample]) -> Result<()> {
    fs::write(path, hotpotqa_json(samples)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: u64,
    pub text: String,
}

/// Evidence texts keyed by id; serialized as JSON lines.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn pairs(&self) -> Vec<(u64, String)> {
        self.entries.iter().map(|e| (e.id, e.text.clone())).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (n, line) in text.split_inclusive('\n').enumerate() {
            let body = line.trim_end_matches(['\n', '\r']);
            if !body.trim().is_empty() {
                let entry: CorpusEntry = serde_json::from_str(body).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    offset: offset + e.column().saturating_sub(1),
                    message: format!("line {}: {e}", n + 1),
                })?;
                entries.push(entry);
            }
            offset += line.len();
        }
        Ok(Corpus { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Where each sample's evidence lives in the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleLinks {
    /// The sample's own context chunks.
    pub chunks: Vec<u64>,
    /// Chunks named by the supporting facts.
    pub gold: Vec<u64>,
}

/// Samples with their contexts cut into evidence chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<QASample>,
    pub corpus: Corpus,
    pub links: Vec<SampleLinks>,
}

impl Dataset {
    /// One chunk per paragraph (or per sentence), ids assigned in order.
    pub fn from_samples(samples: Vec<QASample>, granularity: Granularity, prepend_title: bool) -> Self {
        let mut entries = Vec::new();
        let mut links = Vec::with_capacity(samples.len());
        for s in &samples {
            let mut l = SampleLinks {
                chunks: Vec::new(),
                gold: Vec::new(),
            };
            for p in &s.context {
                let units: Vec<(Option<usize>, String)> = match granularity {
                    Granularity::Paragraph => vec![(None, p.text())],
                    Granularity::Sentence => p
                        .sentences
                        .iter()
                        .enumerate()
                        .map(|(i, t)| (Some(i), t.clone()))
                        .collect(),
                };
                for (sent, body) in units {
                    let id = entries.len() as u64;
                    let text = if prepend_title {
                        format!("{} {}", p.title, body)
                    } else {
                        body
                    };
                    let is_gold = s.supporting_facts.iter().any(|f| {
                        f.title == p.title && sent.is_none_or(|i| i == f.sentence)
                    });
                    l.chunks.push(id);
                    if is_gold {
                        l.gold.push(id);
                    }
                    entries.push(CorpusEntry { id, text });
                }
            }
            links.push(l);
        }
        Dataset {
            samples,
            corpus: Corpus { entries },
            links,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Chunk ids sample `i` may retrieve from.
    pub fn candidates(&self, i: usize, mode: CorpusMode) -> Vec<u64> {
        match mode {
            CorpusMode::PerQuestion => self.links[i].chunks.clone(),
            CorpusMode::Pooled => self.corpus.entries.iter().map(|e| e.id).collect(),
        }
    }

    /// Every text a vocabulary should cover: questions, answers, chunks.
    pub fn texts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.samples {
            out.push(&s.question);
            out.push(&s.answer);
        }
        out.extend(self.corpus.entries.iter().map(|e| e.text.as_str()));
        out
    }

    /// Tokenized training samples. Chunks that tokenize to nothing are
    /// left out of the candidate pool.
    pub fn train_samples(&self, vocab: &Vocabulary, mode: CorpusMode) -> Vec<TrainSample> {
        let tokenized: Vec<Vec<u32>> = self
            .corpus
            .entries
            .iter()
            .map(|e| vocab.tokenize(&e.text))
            .collect();
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut target = vocab.tokenize(&s.answer);
                target.push(EOS);
                let candidates = self
                    .candidates(i, mode)
                    .into_iter()
                    .filter(|id| !tokenized[*id as usize].is_empty())
                    .map(|id| (id, tokenized[id as usize].clone()))
                    .collect();
                TrainSample {
                    id: s.id.clone(),
                    question: vocab.tokenize(&s.question),
                    target,
                    candidates,
                    gold: self.links[i].gold.clone(),
                }
            })
            .collect()
    }
}

/// Knobs of the synthetic multi-hop generator.
///
/// Each sample has a question of `question_len` topic words. Gold chunk 1
/// holds every topic word, a bridge word and the first answer word; with two
/// gold chunks it also holds a decoy drawn from the second answer pool, and
/// gold chunk 2 holds `gold2_overlap` topic words, the bridge word and the
/// second answer word `answer_repeat` times. Distractors copy a
/// `distractor_similarity` fraction of their gold chunk's tokens (non-topic
/// tokens first), swap each answer word for a confuser shared by all
/// distractors of that gold chunk, and fill up with fresh words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_samples: usize,
    /// Size of the synthetic word inventory.
    pub vocab_size: usize,
    pub n_gold_evidence: usize,
    pub n_distractors: usize,
    pub distractor_similarity: f64,
    pub question_len: usize,
    pub gold2_overlap: usize,
    /// Filler words per gold chunk.
    pub filler_len: usize,
    pub answer_repeat: usize,
    pub decoy: bool,
    /// Distinct questions to draw from; 0 gives every sample a fresh one.
    /// A small pool forces answers to come from the evidence.
    pub n_questions: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            n_samples: 64,
            vocab_size: 256,
            n_gold_evidence: 2,
            n_distractors: 8,
            distractor_similarity: 0.5,
            question_len: 4,
            gold2_overlap: 2,
            filler_len: 8,
            answer_repeat: 2,
            decoy: true,
            n_questions: 0,
        }
    }
}

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "mi", "tu", "ze", "ro", "fa", "ni", "lu", "pe", "so", "gi", "du", "ve", "ha", "jo",
];

/// Deterministic pseudo-word for inventory slot `i`; distinct for distinct
/// `i` and never an article.
pub fn synthetic_word(i: usize) -> String {
    let mut n = i;
    let mut w = String::new();
    for _ in 0..3 {
        w.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    w
}

struct Inventory {
    pool_a: Vec<String>,
    pool_b: Vec<String>,
    bridge: Vec<String>,
    topic: Vec<String>,
    filler: Vec<String>,
}

impl Inventory {
    fn new(size: usize) -> Self {
        let words: Vec<String> = (0..size).map(synthetic_word).collect();
        let p = size / 8;
        let t = size / 4;
        Inventory {
            pool_a: words[..p].to_vec(),
            pool_b: words[p..2 * p].to_vec(),
            bridge: words[2 * p..3 * p].to_vec(),
            topic: words[3 * p..3 * p + t].to_vec(),
            filler: words[3 * p + t..].to_vec(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_samples == 0 || self.question_len == 0 || self.answer_repeat == 0 {
            return bad("n_samples, question_len and answer_repeat must be positive".into());
        }
        if !(1..=2).contains(&self.n_gold_evidence) {
            return bad(format!("n_gold_evidence must be 1 or 2, got {}", self.n_gold_evidence));
        }
        if !(0.0..=1.0).contains(&self.distractor_similarity) {
            return bad(format!(
                "distractor_similarity must lie in [0, 1], got {}",
                self.distractor_similarity
            ));
        }
        if self.vocab_size < 64 || self.vocab_size > SYLLABLES.len().pow(3) {
            return bad(format!("vocab_size must lie in [64, 4096], got {}", self.vocab_size));
        }
        if self.gold2_overlap > self.question_len {
            return bad("gold2_overlap exceeds question_len".into());
        }
        let inv = Inventory::new(self.vocab_size);
        if self.question_len > inv.topic.len() {
            return bad("question_len exceeds the topic inventory".into());
        }
        // Two gold chunks' fillers plus one distractor's fresh words must fit.
        let longest = self.filler_len + self.question_len + self.answer_repeat + 3;
        if 2 * self.filler_len + longest > inv.filler.len() {
            return bad("filler_len too large for vocab_size".into());
        }
        Ok(())
    }
}

fn pick<'a, R: Rng>(pool: &'a [String], rng: &mut R, exclude: &[&str]) -> &'a str {
    loop {
        let w = &pool[rng.gen_range(0..pool.len())];
        if !exclude.contains(&w.as_str()) {
            return w;
        }
    }
}

fn distractor<R: Rng>(
    gold: &[String],
    answers: &[&str],
    question: &[String],
    confuser: &str,
    spec: &SyntheticSpec,
    inv: &Inventory,
    used: &HashSet<String>,
    rng: &mut R,
) -> Vec<String> {
    let len = gold.len();
    let n_answer = gold.iter().filter(|w| answers.contains(&w.as_str())).count();
    let mut rest: Vec<&String> = gold.iter().filter(|w| !answers.contains(&w.as_str())).collect();
    rest.shuffle(rng);
    rest.sort_by_key(|w| question.contains(w));
    let keep = ((spec.distractor_similarity * len as f64).round() as usize).min(rest.len());
    let mut out: Vec<String> = rest[..keep].iter().map(|w| (*w).clone()).collect();
    if !confuser.is_empty() {
        out.extend(std::iter::repeat_n(confuser.to_string(), n_answer));
    }
    let mut fresh: Vec<&String> = inv.filler.iter().filter(|w| !used.contains(*w)).collect();
    fresh.shuffle(rng);
    out.extend(fresh.into_iter().take(len.saturating_sub(out.len())).cloned());
    out.shuffle(rng);
    out
}

/// Generate a synthetic dataset; identical specs give identical datasets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let inv = Inventory::new(spec.vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5359_4e54_4845_5449);
    let two = spec.n_gold_evidence == 2;
    let fresh_question = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let mut q: Vec<String> = inv.topic.choose_multiple(rng, spec.question_len).cloned().collect();
        q.shuffle(rng);
        q
    };
    let questions: Vec<Vec<String>> = (0..spec.n_questions).map(|_| fresh_question(&mut rng)).collect();
    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let question = if questions.is_empty() {
            fresh_question(&mut rng)
        } else {
            questions[rng.gen_range(0..questions.len())].clone()
        };
        let bridge = inv.bridge[rng.gen_range(0..inv.bridge.len())].clone();
        let a1 = inv.pool_a[rng.gen_range(0..inv.pool_a.len())].clone();
        let a2 = inv.pool_b[rng.gen_range(0..inv.pool_b.len())].clone();
        let decoy = if two && spec.decoy {
            Some(pick(&inv.pool_b, &mut rng, &[&a2]).to_string())
        } else {
            None
        };
        let c1 = pick(&inv.pool_a, &mut rng, &[&a1]).to_string();
        let mut excl = vec![a2.as_str()];
        if let Some(d) = &decoy {
            excl.push(d);
        }
        let c2 = pick(&inv.pool_b, &mut rng, &excl).to_string();

        let mut fillers: Vec<String> = inv
            .filler
            .choose_multiple(&mut rng, 2 * spec.filler_len)
            .cloned()
            .collect();
        fillers.shuffle(&mut rng);
        let mut g1: Vec<String> = question.clone();
        g1.push(bridge.clone());
        g1.push(a1.clone());
        g1.extend(decoy.iter().cloned());
        g1.extend(fillers[..spec.filler_len].iter().cloned());
        g1.shuffle(&mut rng);
        let mut golds = vec![(g1, vec![a1.clone()], c1.clone())];
        if two {
            let mut g2: Vec<String> = question[..spec.gold2_overlap].to_vec();
            g2.push(bridge.clone());
            g2.extend(std::iter::repeat_n(a2.clone(), spec.answer_repeat));
            g2.extend(fillers[spec.filler_len..].iter().cloned());
            g2.shuffle(&mut rng);
            let mut g1_answers = vec![a1.clone()];
            g1_answers.extend(decoy.iter().cloned());
            golds[0].1 = g1_answers;
            golds.push((g2, vec![a2.clone()], c2.clone()));
        }

        let used: HashSet<String> = golds.iter().flat_map(|g| g.0.iter().cloned()).collect();
        let mut context = Vec::with_capacity(golds.len() + spec.n_distractors);
        let mut supporting_facts = Vec::new();
        for (g, (tokens, _, _)) in golds.iter().enumerate() {
            let title = format!("s{i}-gold{}", g + 1);
            supporting_facts.push(SupportingFact {
                title: title.clone(),
                sentence: 0,
            });
            context.push(ContextParagraph {
                title,
                sentences: vec![tokens.join(" ")],
            });
        }
        for j in 0..spec.n_distractors {
            let (tokens, answers, confuser) = &golds[j % golds.len()];
            let answer_refs: Vec<&str> = answers.iter().map(String::as_str).collect();
            // The decoy is dropped, not confused: only the true answer word
            // gets a same-pool stand-in.
            let d = distractor(tokens, &answer_refs[..1], &question, confuser, spec, &inv, &used, &mut rng);
            let d: Vec<String> = if answer_refs.len() > 1 {
                let mut d: Vec<String> = d.into_iter().filter(|w| !answer_refs[1..].contains(&w.as_str())).collect();
                let mut fresh: Vec<&String> = inv
                    .filler
                    .iter()
                    .filter(|w| !used.contains(*w) && !d.contains(w))
                    .collect();
                fresh.shuffle(&mut rng);
                let missing = tokens.len().saturating_sub(d.len());
                d.extend(fresh.into_iter().take(missing).cloned());
                d.shuffle(&mut rng);
                d
            } else {
                d
            };
            context.push(ContextParagraph {
                title: format!("s{i}-d{j}"),
                sentences: vec![d.join(" ")],
            });
        }
        let answer = if two { format!("{a1} {a2}") } else { a1.clone() };
        samples.push(QASample {
            id: format!("syn{}-{i}", spec.seed),
            question: question.join(" "),
            answer,
            context,
            supporting_facts,
        });
    }
    Ok(Dataset::from_samples(samples, Granularity::Paragraph, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"[{"_id": "q1", "question": "Where?", "answer": "Paris",
        "supporting_facts": [["France", 0]],
        "context": [["France", ["Paris is the capital.", "It is big."]], ["Spain", ["Madrid."]]]}]"#;

    #[test]
    fn parses_minimal_record() {
        let s = parse_hotpotqa(ONE, Path::new("x.json")).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].id, "q1");
        assert_eq!(s[0].answer, "Paris");
        assert_eq!(s[0].context[0].sentences.len(), 2);
        assert_eq!(s[0].supporting_facts[0].title, "France");
    }

    #[test]
    fn missing_answer_names_record() {
        let text = ONE.replace(r#""answer": "Paris","#, "");
        match parse_hotpotqa(&text, Path::new("x.json")) {
            Err(Error::Schema { record, message }) => {
                assert_eq!(record, "q1");
                assert!(message.contains("answer"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dangling_fact_is_rejected() {
        let text = ONE.replace(r#"[["France", 0]]"#, r#"[["Italy", 0]]"#);
        assert!(matches!(
            parse_hotpotqa(&text, Path::new("x.json")),
            Err(Error::DanglingSupportingFact { title, .. }) if title == "Italy"
        ));
    }

    #[test]
    fn parse_error_reports_offset() {
        let text = "[{\"_id\": }]";
        match parse_hotpotqa(text, Path::new("x.json")) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn chunking_marks_gold() {
        let s = parse_hotpotqa(ONE, Path::new("x.json")).unwrap();
        let d = Dataset::from_samples(s.clone(), Granularity::Paragraph, true);
        assert_eq!(d.corpus.entries.len(), 2);
        assert_eq!(d.corpus.entries[0].text, "France Paris is the capital. It is big.");
        assert_eq!(d.links[0].gold, vec![0]);
        let d = Dataset::from_samples(s, Granularity::Sentence, false);
        assert_eq!(d.corpus.entries.len(), 3);
        assert_eq!(d.links[0].gold, vec![0]);
        assert_eq!(d.corpus.entries[1].text, "It is big.");
    }

    #[test]
    fn corpus_jsonl_round_trip() {
        let c = Corpus {
            entries: vec![
                CorpusEntry { id: 3, text: "a \"b\"".into() },
                CorpusEntry { id: 7, text: "ünï".into() },
            ],
        };
        let text = c.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(Corpus::from_jsonl(&text, Path::new("c")).unwrap(), c);
    }

    #[test]
    fn synthetic_words_are_distinct() {
        let words: HashSet<String> = (0..4096).map(synthetic_word).collect();
        assert_eq!(words.len(), 4096);
        assert!(!words.contains("an") && !words.contains("the"));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::default();
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn zero_similarity_shares_nothing() {
        let spec = SyntheticSpec {
            distractor_similarity: 0.0,
            ..SyntheticSpec::default()
        };
        let d = generate_synthetic(&spec).unwrap();
        for (s, l) in d.samples.iter().zip(&d.links) {
            let gold: HashSet<String> = l
                .gold
                .iter()
                .flat_map(|id| crate::vocab::split_words(&d.corpus.entries[*id as usize].text))
                .collect();
            for id in l.chunks.iter().filter(|c| !l.gold.contains(c)) {
                for w in crate::vocab::split_words(&d.corpus.entries[*id as usize].text) {
                    assert!(!gold.contains(&w), "{} shares {w}", s.id);
                }
            }
        }
    }

    #[test]
    fn two_gold_chunks_split_the_answer() {
        let d = generate_synthetic(&SyntheticSpec::default()).unwrap();
        for (s, l) in d.samples.iter().zip(&d.links) {
            assert_eq!(l.gold.len(), 2);
            for id in &l.gold {
                assert!(!d.corpus.entries[*id as usize].text.contains(&s.answer));
            }
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let spec = SyntheticSpec {
            n_gold_evidence: 3,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::InvalidSpec(_))));
    }
}
