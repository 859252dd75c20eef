//! Paraphrase diversity: sentence BLEU, Self-BLEU, greedy low-Self-BLEU
//! subset selection, and paraphrase-pool generation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{Message, PromptBundle, Role};
use crate::provider::{ChatProvider, ProviderError};

#[derive(Debug, Error)]
pub enum RobustnessError {
    #[error("need at least 2 strings, got {0}")]
    TooFew(usize),
    #[error("self-BLEU against an empty set")]
    EmptySet,
    #[error("pool of {pool} cannot yield a selection of {k} (need pool >= k >= 2)")]
    PoolTooSmall { pool: usize, k: usize },
    #[error("calls and per_call must both be at least 1")]
    BadCounts,
    #[error("no numbered items in response to call {call}")]
    UnparseableList { call: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self { max_n: 4 }
    }
}

/// Lowercased words; each punctuation character is its own token.
pub fn bleu_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// N-gram counts of one text, reusable across many comparisons.
#[derive(Debug, Clone)]
pub struct Prepared {
    len: usize,
    grams: Vec<HashMap<Vec<String>, usize>>,
}

impl Prepared {
    pub fn new(text: &str, cfg: &BleuConfig) -> Self {
        let tokens = bleu_tokens(text);
        let grams = (1..=cfg.max_n.max(1))
            .map(|n| {
                let mut m = HashMap::new();
                for w in tokens.windows(n) {
                    *m.entry(w.to_vec()).or_insert(0) += 1;
                }
                m
            })
            .collect();
        Self {
            len: tokens.len(),
            grams,
        }
    }
}

pub fn bleu_prepared(h: &Prepared, r: &Prepared) -> f64 {
    if h.len == 0 {
        return 0.0;
    }
    let max_n = h.grams.len();
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let total: usize = h.grams[n].values().sum();
        let matched: usize = h.grams[n]
            .iter()
            .map(|(g, c)| (*c).min(r.grams[n].get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 0 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let bp = (1.0 - r.len as f64 / h.len as f64).exp().min(1.0);
    let score = bp * (log_sum / max_n as f64).exp();
    score.clamp(0.0, 1.0)
}

/// Sentence BLEU of `hypothesis` against one reference.
pub fn bleu(hypothesis: &str, reference: &str, cfg: &BleuConfig) -> f64 {
    bleu_prepared(&Prepared::new(hypothesis, cfg), &Prepared::new(reference, cfg))
}

/// Mean BLEU over all ordered pairs of distinct positions.
pub fn avg_pairwise_bleu(set: &[String], cfg: &BleuConfig) -> Result<f64, RobustnessError> {
    if set.len() < 2 {
        return Err(RobustnessError::TooFew(set.len()));
    }
    let prepared: Vec<Prepared> = set.iter().map(|s| Prepared::new(s, cfg)).collect();
    let mut sum = 0.0;
    for (i, x) in prepared.iter().enumerate() {
        for (j, y) in prepared.iter().enumerate() {
            if i != j {
                sum += bleu_prepared(x, y);
            }
        }
    }
    Ok(sum / (set.len() * (set.len() - 1)) as f64)
}

/// Mean over `set` of the two-direction average BLEU with `candidate`.
pub fn self_bleu(candidate: &str, set: &[String], cfg: &BleuConfig) -> Result<f64, RobustnessError> {
    if set.is_empty() {
        return Err(RobustnessError::EmptySet);
    }
    let c = Prepared::new(candidate, cfg);
    let pairs: Vec<(f64, f64)> = set
        .iter()
        .map(|s| {
            let s = Prepared::new(s, cfg);
            (bleu_prepared(&c, &s), bleu_prepared(&s, &c))
        })
        .collect();
    Ok(mean_symmetric(&pairs))
}

fn mean_symmetric(pairs: &[(f64, f64)]) -> f64 {
    let sum: f64 = pairs.iter().map(|(a, b)| (a + b) / 2.0).sum();
    sum / pairs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolCandidate {
    pub text: String,
    pub call: usize,
    pub item: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphrasePool {
    pub original: String,
    pub candidates: Vec<PoolCandidate>,
}

impl ParaphrasePool {
    /// Pool with provenance (0, i) for each text.
    pub fn from_texts(original: impl Into<String>, texts: impl IntoIterator<Item = String>) -> Self {
        Self {
            original: original.into(),
            candidates: texts
                .into_iter()
                .enumerate()
                .map(|(i, text)| PoolCandidate { text, call: 0, item: i })
                .collect(),
        }
    }

    pub fn texts(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.text.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    /// Pool index of the chosen candidate.
    pub index: usize,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub k: usize,
    pub selected: Vec<String>,
    pub objective: f64,
    pub steps: Vec<SelectionStep>,
}

/// Pairwise BLEU matrix, `m[i][j] = bleu(c_i, c_j)`, rows split across
/// worker threads.
pub fn bleu_matrix(texts: &[String], cfg: &BleuConfig, workers: usize) -> Vec<Vec<f64>> {
    let prepared: Vec<Prepared> = texts.iter().map(|t| Prepared::new(t, cfg)).collect();
    let n = texts.len();
    let mut rows = vec![Vec::new(); n];
    let chunk = n.div_ceil(workers.max(1)).max(1);
    std::thread::scope(|s| {
        for (ci, out) in rows.chunks_mut(chunk).enumerate() {
            let prepared = &prepared;
            s.spawn(move || {
                for (k, row) in out.iter_mut().enumerate() {
                    let i = ci * chunk + k;
                    *row = prepared.iter().map(|r| bleu_prepared(&prepared[i], r)).collect();
                }
            });
        }
    });
    rows
}

/// Start from the most mutually diverse pair, then repeatedly add the
/// candidate with the lowest Self-BLEU against the selection. Ties go to
/// the lowest pool index.
pub fn greedy_select(pool: &ParaphrasePool, k: usize, cfg: &BleuConfig) -> Result<SelectionResult, RobustnessError> {
    let n = pool.candidates.len();
    if k < 2 || n < k {
        return Err(RobustnessError::PoolTooSmall { pool: n, k });
    }
    let texts = pool.texts();
    let workers = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1);
    let m = bleu_matrix(&texts, cfg, workers);

    let mut best: Option<(f64, usize, usize)> = None;
    for (i, row) in m.iter().enumerate() {
        for j in i + 1..n {
            let s = mean_symmetric(&[(row[j], m[j][i])]);
            if best.is_none_or(|(b, _, _)| s < b) {
                best = Some((s, i, j));
            }
        }
    }
    let (pair_score, a, b) = best.expect("pool has at least two candidates");
    let mut chosen = vec![a, b];
    let mut steps = vec![
        SelectionStep {
            index: a,
            text: texts[a].clone(),
            score: pair_score,
        },
        SelectionStep {
            index: b,
            text: texts[b].clone(),
            score: pair_score,
        },
    ];
    let mut used = vec![false; n];
    used[a] = true;
    used[b] = true;

    while chosen.len() < k {
        let mut pick: Option<(f64, usize)> = None;
        for c in (0..n).filter(|&c| !used[c]) {
            let pairs: Vec<(f64, f64)> = chosen.iter().map(|&s| (m[c][s], m[s][c])).collect();
            let score = mean_symmetric(&pairs);
            if pick.is_none_or(|(b, _)| score < b) {
                pick = Some((score, c));
            }
        }
        let (score, c) = pick.expect("pool larger than selection");
        used[c] = true;
        chosen.push(c);
        steps.push(SelectionStep {
            index: c,
            text: texts[c].clone(),
            score,
        });
    }

    let mut sum = 0.0;
    for &i in &chosen {
        for &j in &chosen {
            if i != j {
                sum += m[i][j];
            }
        }
    }
    Ok(SelectionResult {
        k,
        selected: chosen.iter().map(|&i| texts[i].clone()).collect(),
        objective: sum / (k * (k - 1)) as f64,
        steps,
    })
}

pub fn bundled_paraphrase_template() -> &'static str {
    include_str!("../assets/paraphrase.prompt")
}

pub fn build_paraphrase_prompt(template: &str, description: &str, count: usize, call: usize) -> PromptBundle {
    let text = template
        .replace("{count}", &count.to_string())
        .replace("{call}", &(call + 1).to_string())
        .replace("{description}", description.trim_end());
    let mut bundle = PromptBundle::default();
    bundle.push_component(1, "Paraphrase Request", Message::new(Role::User, text));
    bundle
}

/// Items of a numbered list (`1.` or `1)`), in order.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim();
            let digits = line.find(|c: char| !c.is_ascii_digit())?;
            if digits == 0 {
                return None;
            }
            let rest = line[digits..].strip_prefix(['.', ')'])?.trim();
            let rest = rest.trim_matches('"').trim();
            (!rest.is_empty()).then(|| rest.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedPool {
    pub pool: ParaphrasePool,
    pub warnings: Vec<String>,
}

/// Ask the provider `calls` times for `per_call` paraphrases each. Calls
/// run `concurrency` at a time; results keep call order either way.
pub fn generate_paraphrases(
    provider: &dyn ChatProvider,
    template: &str,
    description: &str,
    calls: usize,
    per_call: usize,
    concurrency: usize,
) -> Result<GeneratedPool, RobustnessError> {
    if calls == 0 || per_call == 0 {
        return Err(RobustnessError::BadCounts);
    }
    let prompts: Vec<PromptBundle> = (0..calls)
        .map(|c| build_paraphrase_prompt(template, description, per_call, c))
        .collect();
    let mut responses: Vec<Option<Result<String, ProviderError>>> = (0..calls).map(|_| None).collect();
    for (batch_start, batch) in prompts
        .chunks(concurrency.max(1))
        .enumerate()
        .map(|(i, b)| (i * concurrency.max(1), b))
    {
        let results: Vec<Result<String, ProviderError>> = if batch.len() == 1 {
            vec![provider.complete(&batch[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = batch.iter().map(|p| s.spawn(move || provider.complete(p))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("provider call panicked"))
                    .collect()
            })
        };
        for (i, r) in results.into_iter().enumerate() {
            responses[batch_start + i] = Some(r);
        }
    }

    let mut candidates = Vec::new();
    let mut warnings = Vec::new();
    for (call, r) in responses.into_iter().enumerate() {
        let text = r.expect("every call answered")?;
        let mut items = parse_numbered_list(&text);
        if items.is_empty() {
            return Err(RobustnessError::UnparseableList { call });
        }
        if items.len() < per_call {
            warnings.push(format!(
                "call {call}: expected {per_call} paraphrases, got {}",
                items.len()
            ));
        } else if items.len() > per_call {
            warnings.push(format!(
                "call {call}: {} paraphrases, kept the first {per_call}",
                items.len()
            ));
            items.truncate(per_call);
        }
        candidates.extend(
            items
                .into_iter()
                .enumerate()
                .map(|(item, text)| PoolCandidate { text, call, item }),
        );
    }
    Ok(GeneratedPool {
        pool: ParaphrasePool {
            original: description.to_string(),
            candidates,
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::MockProvider;
    use std::collections::BTreeMap;

    const CFG: BleuConfig = BleuConfig { max_n: 4 };

    #[test]
    fn identity_and_disjoint() {
        for s in ["a", "Open the menu!", "x y", "click the undo button"] {
            assert!((bleu(s, s, &CFG) - 1.0).abs() < 1e-12, "{s}");
        }
        assert_eq!(bleu("red green blue", "one two three", &CFG), 0.0);
        assert_eq!(bleu("", "anything", &CFG), 0.0);
    }

    #[test]
    fn regression_constant() {
        // Unigrams 3/6, bigrams 1/5, trigrams smoothed 1/5, 4-grams
        // smoothed 1/4, equal lengths.
        let want = (0.5f64 * 0.2 * 0.2 * 0.25).powf(0.25);
        let got = bleu(
            "open the settings page and wait",
            "open the menu settings then exit",
            &CFG,
        );
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn brevity_penalty() {
        let got = bleu("open settings", "open settings now please", &CFG);
        // p1 = 1, p2 = 1, p3 and p4 smoothed to 1/1 with no n-grams.
        assert!((got - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn tokens() {
        assert_eq!(
            bleu_tokens("Tap 'OK', then back."),
            ["tap", "'", "ok", "'", ",", "then", "back", "."]
        );
    }

    #[test]
    fn averages_compose() {
        let s: Vec<String> = ["open the menu", "tap the menu button", "press back"]
            .map(String::from)
            .to_vec();
        let mut direct = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    direct += bleu(&s[i], &s[j], &CFG);
                }
            }
        }
        assert!((avg_pairwise_bleu(&s, &CFG).unwrap() - direct / 6.0).abs() < 1e-12);
        assert!(matches!(
            avg_pairwise_bleu(&s[..1], &CFG),
            Err(RobustnessError::TooFew(1))
        ));

        let c = "open the settings";
        let direct = ((bleu(c, &s[0], &CFG) + bleu(&s[0], c, &CFG)) / 2.0
            + (bleu(c, &s[1], &CFG) + bleu(&s[1], c, &CFG)) / 2.0)
            / 2.0;
        assert!((self_bleu(c, &s[..2], &CFG).unwrap() - direct).abs() < 1e-12);
        assert!(self_bleu(&s[0], &s, &CFG).unwrap() >= 1.0 / 3.0);
        assert_eq!(self_bleu("zzz", &s, &CFG).unwrap(), 0.0);
        assert!(matches!(self_bleu(c, &[], &CFG), Err(RobustnessError::EmptySet)));
    }

    #[test]
    fn disjoint_strings_beat_duplicates() {
        let disjoint = ["alpha beta", "gamma delta", "epsilon zeta", "eta theta"];
        // The duplicate is also disjoint from the others, so ties are broken
        // by pool order: disjoint strings come first.
        let mut texts: Vec<String> = disjoint.iter().map(|s| s.to_string()).collect();
        texts.extend(vec!["same words here".to_string(); 4]);
        let pool = ParaphrasePool::from_texts("o", texts);
        let r = greedy_select(&pool, 4, &CFG).unwrap();
        let mut got = r.selected.clone();
        got.sort();
        let mut want: Vec<String> = disjoint.iter().map(|s| s.to_string()).collect();
        want.sort();
        assert_eq!(got, want);
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.steps.len(), 4);
    }

    #[test]
    fn forced_selection_and_errors() {
        let pool = ParaphrasePool::from_texts("o", ["a b", "a c", "d e"].map(String::from));
        let r = greedy_select(&pool, 3, &CFG).unwrap();
        assert_eq!(r.selected.len(), 3);
        assert!(matches!(
            greedy_select(&pool, 4, &CFG),
            Err(RobustnessError::PoolTooSmall { .. })
        ));
        assert!(matches!(
            greedy_select(&pool, 1, &CFG),
            Err(RobustnessError::PoolTooSmall { .. })
        ));
    }

    #[test]
    fn numbered_lists() {
        let items = parse_numbered_list("Here you go:\n1. first one\n2) \"second\"\n\n3.third\n10. tenth\nnot 4. this");
        assert_eq!(items, ["first one", "second", "third", "tenth"]);
    }

    fn mock_for(desc: &str, per_call: usize, replies: &[String]) -> MockProvider {
        let t = bundled_paraphrase_template();
        let mut map = BTreeMap::new();
        for (c, r) in replies.iter().enumerate() {
            map.insert(build_paraphrase_prompt(t, desc, per_call, c).sha256(), r.clone());
        }
        MockProvider::new(map)
    }

    fn numbered(n: usize, tag: &str) -> String {
        (1..=n).map(|i| format!("{i}. {tag} variant {i}\n")).collect()
    }

    #[test]
    fn generation_with_provenance() {
        let desc = "open the menu";
        let replies: Vec<String> = (0..3).map(|c| numbered(10, &format!("batch{c}"))).collect();
        let mock = mock_for(desc, 10, &replies);
        let g = generate_paraphrases(&mock, bundled_paraphrase_template(), desc, 3, 10, 1).unwrap();
        assert_eq!(g.pool.candidates.len(), 30);
        assert!(g.warnings.is_empty());
        assert_eq!(
            g.pool.candidates[13],
            PoolCandidate {
                text: "batch1 variant 4".into(),
                call: 1,
                item: 3
            }
        );
        let par = generate_paraphrases(&mock, bundled_paraphrase_template(), desc, 3, 10, 3).unwrap();
        assert_eq!(par, g);
    }

    #[test]
    fn underfilled_and_unparseable() {
        let desc = "open the menu";
        let mock = mock_for(desc, 10, &[numbered(7, "x")]);
        let g = generate_paraphrases(&mock, bundled_paraphrase_template(), desc, 1, 10, 1).unwrap();
        assert_eq!(g.pool.candidates.len(), 7);
        assert_eq!(g.warnings.len(), 1);

        let mock = mock_for(desc, 10, &["I cannot help with that.".to_string()]);
        let err = generate_paraphrases(&mock, bundled_paraphrase_template(), desc, 1, 10, 1).unwrap_err();
        assert!(matches!(err, RobustnessError::UnparseableList { call: 0 }));
    }

    #[test]
    fn pool_json_shape() {
        let pool = ParaphrasePool::from_texts("o", ["a".to_string()]);
        let v = serde_json::to_value(&pool).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"original": "o", "candidates": [{"text": "a", "call": 0, "item": 0}]})
        );
    }
}
