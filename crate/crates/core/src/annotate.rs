//! Three-stage annotation: prompt construction, structured output parsing,
//! multi-judge scoring and consistency filtering.
//!
//! Generated text carries three tagged sections, in order:
//!
//! ```text
//! [CAPTION]
//! ...
//! [REASONING]
//! 1. first step
//! 2. second step
//! [CONCLUSION]
//! ...
//! ```

use std::time::Duration;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{fnv1a, CoTAnnotation, Triplet};
use crate::error::{Error, Result};

pub const CAPTION: &str = "[CAPTION]";
pub const REASONING: &str = "[REASONING]";
pub const CONCLUSION: &str = "[CONCLUSION]";

pub const DEFAULT_MEAN_THRESHOLD: f64 = 4.0;
pub const DEFAULT_MAX_RANGE: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePrompt {
    pub pair_id: String,
    pub prompt_text: String,
}

const REFERENCE_LINE: &str = "Reference image: ";
const MODIFICATION_LINE: &str = "Modification: ";

/// Builds the single-pass annotation prompt for one triplet.
pub fn build_annotation_prompt(t: &Triplet, reference_descriptor: &str) -> Result<StagePrompt> {
    if t.modification_text.trim().is_empty() {
        return Err(Error::InvalidArgument(format!(
            "pair {}: empty modification text",
            t.pair_id
        )));
    }
    let one_line = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    let prompt_text = format!(
        "You are annotating a composed image retrieval query.\n\
         {REFERENCE_LINE}{}\n\
         {MODIFICATION_LINE}{}\n\
         \n\
         Write exactly three sections, each starting with its tag on its own line, in this order.\n\
         \n\
         {CAPTION}\n\
         Describe the reference image in detail: every visible object, its attributes and the surrounding context.\n\
         \n\
         {REASONING}\n\
         Reason step by step, one numbered step per line:\n\
         1. Comprehend the instruction: state what must be added, removed or changed.\n\
         2. Align it with the reference image: point to the objects, attributes and spatial relations it affects.\n\
         3. Determine the concrete visual adjustments: addition, removal, repositioning or attribute change, and the entities involved.\n\
         4. Form the reasoning chain: explain how these adjustments turn the reference into the target and why each one is needed.\n\
         \n\
         {CONCLUSION}\n\
         Describe the target image that results from applying the instruction, clearly and completely.\n",
        one_line(reference_descriptor),
        one_line(&t.modification_text),
    );
    Ok(StagePrompt {
        pair_id: t.pair_id.clone(),
        prompt_text,
    })
}

fn strip_bullet(line: &str) -> &str {
    let line = line.trim();
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    for b in ["- ", "* ", "\u{2022} "] {
        if let Some(r) = line.strip_prefix(b) {
            return r.trim_start();
        }
    }
    line
}

/// Parses generator output into an annotation (not yet judged).
pub fn parse_structured_output(pair_id: &str, raw: &str) -> Result<CoTAnnotation> {
    let find = |tag: &'static str| -> Result<usize> {
        let at = raw.find(tag).ok_or(Error::MissingSection(tag))?;
        if raw[at + tag.len()..].contains(tag) {
            return Err(Error::InvalidArgument(format!("section {tag} appears twice")));
        }
        Ok(at)
    };
    let (c, r, k) = (find(CAPTION)?, find(REASONING)?, find(CONCLUSION)?);
    if !(c < r && r < k) {
        return Err(Error::SectionOrder);
    }
    let caption = raw[c + CAPTION.len()..r].trim();
    let reasoning = &raw[r + REASONING.len()..k];
    let conclusion = raw[k + CONCLUSION.len()..].trim();
    if caption.is_empty() {
        return Err(Error::EmptySection(CAPTION));
    }
    if conclusion.is_empty() {
        return Err(Error::EmptySection(CONCLUSION));
    }
    let reasoning_steps: Vec<String> = reasoning
        .lines()
        .map(strip_bullet)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if reasoning_steps.is_empty() {
        return Err(Error::EmptySection(REASONING));
    }
    Ok(CoTAnnotation {
        pair_id: pair_id.to_string(),
        caption: caption.to_string(),
        reasoning_steps,
        conclusion: conclusion.to_string(),
        judge_scores: Vec::new(),
        accepted: false,
    })
}

/// Canonical text form of an annotation; parses back to the same sections.
pub fn format_structured(a: &CoTAnnotation) -> String {
    let mut s = format!("{CAPTION}\n{}\n{REASONING}\n", a.caption);
    for (i, step) in a.reasoning_steps.iter().enumerate() {
        s.push_str(&format!("{}. {step}\n", i + 1));
    }
    s.push_str(&format!("{CONCLUSION}\n{}\n", a.conclusion));
    s
}

pub trait GeneratorClient {
    fn generate(&self, prompt: &str) -> Result<String>;
}

pub trait JudgeClient {
    /// Consistency of `conclusion` with the target, on a 1 to 5 scale.
    fn score(&self, conclusion: &str, target_descriptor: &str) -> Result<u8>;
}

fn words(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn opposite(a: &str, b: &str) -> bool {
    a.strip_prefix("non") == Some(b) || b.strip_prefix("non") == Some(a)
}

fn flip(word: &str) -> String {
    match word.strip_prefix("non") {
        Some(rest) if !rest.is_empty() => rest.to_string(),
        _ => format!("non{word}"),
    }
}

const SYLLABLES: [&str; 32] = [
    "ba", "ce", "di", "fo", "gu", "ha", "je", "ki", "lo", "mu", "na", "pe", "qi", "ro", "su", "ta",
    "ve", "wi", "xo", "yu", "za", "be", "co", "du", "fa", "ge", "hi", "jo", "ku", "la", "me", "ni",
];
const MOCK_HALLUCINATION_RATE: f64 = 0.1;

/// Deterministic stand-in for the annotation model.
///
/// Reads the reference and modification lines from the prompt, replaces
/// each descriptor word the modification contradicts (`x` vs `nonx`), and
/// writes the three sections. A hash of `(prompt, seed)` picks the word
/// order, a finish word, and, one time in ten, flips an unrelated attribute
/// to imitate a hallucinated conclusion.
pub fn mock_generate(prompt: &str, seed: u64) -> String {
    let mut key = prompt.as_bytes().to_vec();
    key.extend_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&key));

    let line = |prefix: &str| {
        prompt
            .lines()
            .find_map(|l| l.strip_prefix(prefix))
            .map(str::trim)
            .unwrap_or("")
            .to_string()
    };
    let reference = line(REFERENCE_LINE);
    let modification = line(MODIFICATION_LINE);
    let mut attrs = words(&reference);
    if attrs.is_empty() {
        attrs = vec!["plain".to_string()];
    }
    let requested: Vec<String> = words(&modification)
        .into_iter()
        .filter(|w| attrs.iter().any(|a| opposite(a, w)))
        .collect();

    let mut target = attrs.clone();
    for w in &requested {
        for a in target.iter_mut() {
            if opposite(a, w) {
                *a = w.clone();
            }
        }
    }
    let untouched: Vec<usize> = (0..target.len())
        .filter(|&i| !requested.contains(&target[i]))
        .collect();
    if rng.random::<f64>() < MOCK_HALLUCINATION_RATE {
        if let Some(&i) = untouched.choose(&mut rng) {
            target[i] = flip(&target[i]);
        }
    }
    target.shuffle(&mut rng);
    let finish: String = (0..5)
        .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
        .collect();

    let asked = if requested.is_empty() {
        modification.clone()
    } else {
        requested.join(" and ")
    };
    let before: Vec<String> = requested.iter().map(|w| flip(w)).collect();
    format!(
        "{CAPTION}\nThe reference shows an item that is {}.\n\
         {REASONING}\n\
         1. The instruction asks for {asked}.\n\
         2. In the reference these attributes are {}.\n\
         3. Each change is an attribute modification of the same item.\n\
         4. Replacing {} with {asked} turns the reference into the target.\n\
         {CONCLUSION}\nThe target is {}, with a {finish} finish.\n",
        attrs.join(" "),
        if before.is_empty() { "unchanged".to_string() } else { before.join(" and ") },
        if before.is_empty() { "nothing".to_string() } else { before.join(" and ") },
        target.join(" "),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockGenerator {
    pub seed: u64,
}

impl GeneratorClient for MockGenerator {
    fn generate(&self, prompt: &str) -> Result<String> {
        Ok(mock_generate(prompt, self.seed))
    }
}

/// Deterministic judge: starts from 5, loses 2 points per target word the
/// conclusion misses, then applies a hashed jitter of -1, 0 or +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockJudge {
    pub id: u64,
    pub seed: u64,
}

impl JudgeClient for MockJudge {
    fn score(&self, conclusion: &str, target_descriptor: &str) -> Result<u8> {
        let have = words(conclusion);
        let missing = words(target_descriptor)
            .iter()
            .filter(|w| !have.contains(w))
            .count() as i64;
        let key = format!("{}|{}|{conclusion}|{target_descriptor}", self.id, self.seed);
        let jitter = match fnv1a(key.as_bytes()) % 5 {
            0 => -1,
            1 => 1,
            _ => 0,
        };
        Ok((5 - 2 * missing + jitter).clamp(1, 5) as u8)
    }
}

/// Judge that always returns the same score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstJudge(pub u8);

impl JudgeClient for ConstJudge {
    fn score(&self, _: &str, _: &str) -> Result<u8> {
        Ok(self.0)
    }
}

pub fn mock_judges(n: usize, seed: u64) -> Vec<MockJudge> {
    (0..n as u64).map(|id| MockJudge { id, seed }).collect()
}

/// Scores one annotation with every judge, in judge order.
pub fn judge_annotation<J: JudgeClient + ?Sized>(
    a: &CoTAnnotation,
    target_descriptor: &str,
    judges: &[&J],
) -> Result<Vec<u8>> {
    if judges.is_empty() {
        return Err(Error::InvalidArgument("at least one judge is required".into()));
    }
    judges
        .iter()
        .enumerate()
        .map(|(index, j)| {
            let s = j
                .score(&a.conclusion, target_descriptor)
                .map_err(|e| Error::Judge {
                    index,
                    message: e.to_string(),
                })?;
            if (1..=5).contains(&s) {
                Ok(s)
            } else {
                Err(Error::Judge {
                    index,
                    message: format!("score {s} outside 1..=5"),
                })
            }
        })
        .collect()
}

/// Acceptance rule: `mean(scores) >= mean_threshold` and
/// `max(scores) - min(scores) <= max_range`.
pub fn accepts(scores: &[u8], mean_threshold: f64, max_range: u8) -> Result<bool> {
    let (Some(&lo), Some(&hi)) = (scores.iter().min(), scores.iter().max()) else {
        return Err(Error::InvalidArgument("empty score list".into()));
    };
    let mean = scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64;
    Ok(mean >= mean_threshold && hi - lo <= max_range)
}

/// Splits judged annotations into `(accepted, rejected)`, recording each
/// record's scores and verdict. Input order is kept within each side.
pub fn filter_annotations(
    records: Vec<(CoTAnnotation, Vec<u8>)>,
    mean_threshold: f64,
    max_range: u8,
) -> Result<(Vec<CoTAnnotation>, Vec<CoTAnnotation>)> {
    if !(1.0..=5.0).contains(&mean_threshold) {
        return Err(Error::InvalidArgument(format!(
            "mean threshold {mean_threshold} outside [1, 5]"
        )));
    }
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (mut a, scores) in records {
        if scores.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "annotation {} has no judge scores",
                a.pair_id
            )));
        }
        a.accepted = accepts(&scores, mean_threshold, max_range)?;
        a.judge_scores = scores;
        if a.accepted {
            accepted.push(a);
        } else {
            rejected.push(a);
        }
    }
    Ok((accepted, rejected))
}

/// Outcome of annotating a triplet list.
#[derive(Debug, Clone, Default)]
pub struct AnnotationRun {
    /// Parsed and judged annotations (verdict not yet applied).
    pub annotations: Vec<CoTAnnotation>,
    /// `(pair_id, reason)` for generator outputs that failed to parse.
    pub unparseable: Vec<(String, String)>,
}

/// Runs generate, parse and judge for every triplet in order. Generator and
/// judge failures abort the run; unparseable outputs are collected.
pub fn annotate_triplets<G, J>(triplets: &[Triplet], generator: &G, judges: &[&J]) -> Result<AnnotationRun>
where
    G: GeneratorClient + ?Sized,
    J: JudgeClient + ?Sized,
{
    let mut run = AnnotationRun::default();
    for t in triplets {
        let reference = t.reference_descriptor.as_deref().unwrap_or(&t.reference_id);
        let target = t.target_descriptor.as_deref().unwrap_or(&t.target_id);
        let prompt = build_annotation_prompt(t, reference)?;
        let raw = generator.generate(&prompt.prompt_text)?;
        match parse_structured_output(&t.pair_id, &raw) {
            Ok(mut a) => {
                a.judge_scores = judge_annotation(&a, target, judges)?;
                run.annotations.push(a);
            }
            Err(e) => run.unparseable.push((t.pair_id.clone(), e.to_string())),
        }
    }
    Ok(run)
}

/// Timeout and retry policy for the HTTP clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpPolicy {
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for HttpPolicy {
    fn default() -> Self {
        Self {
            timeout_secs: 60,
            retries: 2,
        }
    }
}

fn post_json<B: Serialize, R: for<'de> Deserialize<'de>>(
    url: &str,
    body: &B,
    policy: HttpPolicy,
) -> std::result::Result<R, String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(policy.timeout_secs)))
        .build()
        .into();
    let mut last = String::new();
    for _ in 0..=policy.retries {
        match agent.post(url).send_json(body) {
            Ok(mut resp) => match resp.body_mut().read_json::<R>() {
                Ok(r) => return Ok(r),
                Err(e) => last = format!("bad response body: {e}"),
            },
            Err(e) => last = e.to_string(),
        }
    }
    Err(last)
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Serialize)]
struct JudgeRequest<'a> {
    conclusion: &'a str,
    target: &'a str,
}

#[derive(Deserialize)]
struct JudgeResponse {
    score: i64,
}

/// `POST {"prompt"}` and read back `{"text"}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpGenerator {
    pub url: String,
    pub policy: HttpPolicy,
}

impl GeneratorClient for HttpGenerator {
    fn generate(&self, prompt: &str) -> Result<String> {
        post_json::<_, GenerateResponse>(&self.url, &GenerateRequest { prompt }, self.policy)
            .map(|r| r.text)
            .map_err(Error::Generator)
    }
}

/// `POST {"conclusion", "target"}` and read back `{"score"}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpJudge {
    pub url: String,
    pub policy: HttpPolicy,
}

impl JudgeClient for HttpJudge {
    fn score(&self, conclusion: &str, target: &str) -> Result<u8> {
        let r: JudgeResponse = post_json(&self.url, &JudgeRequest { conclusion, target }, self.policy)
            .map_err(|message| Error::Judge { index: 0, message })?;
        u8::try_from(r.score)
            .ok()
            .filter(|s| (1..=5).contains(s))
            .ok_or_else(|| Error::Judge {
                index: 0,
                message: format!("score {} outside 1..=5", r.score),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triplet() -> Triplet {
        Triplet {
            pair_id: "p1".into(),
            reference_id: "a".into(),
            modification_text: "make it red and nonhooded".into(),
            target_id: "b".into(),
            subset_ids: None,
            gt_ids: None,
            reference_descriptor: Some("striped hooded nonred long".into()),
            target_descriptor: Some("striped nonhooded red long".into()),
        }
    }

    fn annotation(scores: Vec<u8>) -> (CoTAnnotation, Vec<u8>) {
        let a = parse_structured_output("x", "[CAPTION] c [REASONING] s [CONCLUSION] d").unwrap();
        (a, scores)
    }

    #[test]
    fn prompt_has_each_marker_once() {
        let p = build_annotation_prompt(&triplet(), "striped hooded").unwrap();
        for m in [CAPTION, REASONING, CONCLUSION] {
            assert_eq!(p.prompt_text.matches(m).count(), 1, "{m}");
        }
        assert!(p.prompt_text.contains("make it red and nonhooded"));
        assert!(p.prompt_text.contains("striped hooded"));
        assert_eq!(p, build_annotation_prompt(&triplet(), "striped hooded").unwrap());
        let mut t = triplet();
        t.modification_text = "  ".into();
        assert!(build_annotation_prompt(&t, "x").is_err());
    }

    #[test]
    fn parse_sections() {
        let raw = "[CAPTION]\n a shirt \n[REASONING]\n1. first\n2) second\n- third\n\n[CONCLUSION]\nred shirt\n";
        let a = parse_structured_output("p", raw).unwrap();
        assert_eq!(a.caption, "a shirt");
        assert_eq!(a.reasoning_steps, vec!["first", "second", "third"]);
        assert_eq!(a.conclusion, "red shirt");
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_structured_output("p", "[CAPTION] a [REASONING] b").unwrap_err(),
            Error::MissingSection(CONCLUSION)
        ));
        assert!(matches!(
            parse_structured_output("p", "[REASONING] b [CAPTION] a [CONCLUSION] c").unwrap_err(),
            Error::SectionOrder
        ));
        assert!(matches!(
            parse_structured_output("p", "[CAPTION] a [REASONING] b [CONCLUSION]  ").unwrap_err(),
            Error::EmptySection(CONCLUSION)
        ));
    }

    #[test]
    fn mock_output_parses_and_is_deterministic() {
        let p = build_annotation_prompt(&triplet(), "striped hooded nonred long").unwrap();
        let a = mock_generate(&p.prompt_text, 3);
        assert_eq!(a, mock_generate(&p.prompt_text, 3));
        let parsed = parse_structured_output("p1", &a).unwrap();
        assert_eq!(parsed.reasoning_steps.len(), 4);
        assert!(parse_structured_output("x", &mock_generate("anything at all", 0)).is_ok());
        assert!(parse_structured_output("x", &mock_generate("", 0)).is_ok());
    }

    #[test]
    fn mock_conclusions_differ_across_seeds() {
        let p = build_annotation_prompt(&triplet(), "striped hooded nonred long").unwrap();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..1000 {
            let a = parse_structured_output("p", &mock_generate(&p.prompt_text, seed)).unwrap();
            seen.insert(a.conclusion);
        }
        assert_eq!(seen.len(), 1000);
    }

    #[test]
    fn judges_score_in_range_and_deterministically() {
        let judges = mock_judges(3, 0);
        let refs: Vec<&MockJudge> = judges.iter().collect();
        let (a, _) = annotation(vec![]);
        let s = judge_annotation(&a, "striped red", &refs).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| (1..=5).contains(x)));
        assert_eq!(s, judge_annotation(&a, "striped red", &refs).unwrap());
        let none: Vec<&MockJudge> = Vec::new();
        assert!(judge_annotation(&a, "t", &none).is_err());
    }

    #[test]
    fn bad_judge_reports_its_index() {
        struct Broken;
        impl JudgeClient for Broken {
            fn score(&self, _: &str, _: &str) -> Result<u8> {
                Ok(9)
            }
        }
        let (a, _) = annotation(vec![]);
        let ok = ConstJudge(3);
        let judges: Vec<&dyn JudgeClient> = vec![&ok, &Broken];
        match judge_annotation(&a, "t", &judges).unwrap_err() {
            Error::Judge { index, .. } => assert_eq!(index, 1),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn filter_rule_examples() {
        let (acc, rej) = filter_annotations(
            vec![annotation(vec![5, 5, 4]), annotation(vec![5, 5, 1]), annotation(vec![4, 4, 4])],
            4.0,
            2,
        )
        .unwrap();
        assert_eq!(acc.len(), 2);
        assert_eq!(rej.len(), 1);
        assert_eq!(rej[0].judge_scores, vec![5, 5, 1]);
        assert!(acc.iter().all(|a| a.accepted));
        assert!(filter_annotations(vec![annotation(vec![])], 4.0, 2).is_err());
        assert!(filter_annotations(vec![], 0.5, 2).is_err());
    }

    #[test]
    fn faithful_mock_conclusions_pass_the_filter() {
        let t = triplet();
        let judges = mock_judges(3, 7);
        let refs: Vec<&MockJudge> = judges.iter().collect();
        let mut accepted = 0;
        for seed in 0..50 {
            let run = annotate_triplets(std::slice::from_ref(&t), &MockGenerator { seed }, &refs).unwrap();
            let a = run.annotations[0].clone();
            let scores = a.judge_scores.clone();
            let faithful = words(&a.conclusion)
                .iter()
                .filter(|w| ["striped", "nonhooded", "red", "long"].contains(&w.as_str()))
                .count()
                == 4;
            let ok = accepts(&scores, 4.0, 2).unwrap();
            assert_eq!(ok, faithful, "seed {seed}: {} {:?}", a.conclusion, scores);
            accepted += usize::from(ok);
        }
        assert!(accepted >= 40);
    }

    fn arb_line() -> impl Strategy<Value = String> {
        "[a-z][a-z ,']{0,30}[a-z]".prop_map(|s| s)
    }

    proptest! {
        #[test]
        fn parse_format_roundtrip(
            caption in arb_line(),
            steps in prop::collection::vec(arb_line(), 1..6),
            conclusion in arb_line(),
        ) {
            let a = CoTAnnotation {
                pair_id: "p".into(),
                caption,
                reasoning_steps: steps,
                conclusion,
                judge_scores: vec![],
                accepted: false,
            };
            let text = format_structured(&a);
            let back = parse_structured_output("p", &text).unwrap();
            prop_assert_eq!(&back, &a);
            prop_assert_eq!(format_structured(&back), text);
        }

        #[test]
        fn filter_partitions(scores in prop::collection::vec(prop::collection::vec(1u8..=5, 1..5), 0..20)) {
            let n = scores.len();
            let records: Vec<_> = scores.into_iter().map(annotation).collect();
            let (a, r) = filter_annotations(records, 4.0, 2).unwrap();
            prop_assert_eq!(a.len() + r.len(), n);
        }

        #[test]
        fn raising_a_score_never_rejects(
            scores in prop::collection::vec(1u8..=5, 1..6),
            idx in 0usize..6,
        ) {
            let i = idx % scores.len();
            prop_assume!(scores[i] < 5);
            let mut raised = scores.clone();
            raised[i] += 1;
            let range = |s: &[u8]| s.iter().max().unwrap() - s.iter().min().unwrap();
            prop_assume!(range(&raised) <= range(&scores));
            if accepts(&scores, 4.0, 2).unwrap() {
                prop_assert!(accepts(&raised, 4.0, 2).unwrap());
            }
        }
    }
}
