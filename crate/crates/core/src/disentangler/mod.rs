//! Splits an interleaved chat log into dialogs: score every (utterance,
//! earlier utterance) pair within a window, keep the best antecedent for each
//! utterance, then take connected components of the resulting reply graph.

mod features;
mod link_model;

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{ChatLog, Dialog, ReplyLink};
use crate::error::{Error, Result};
use crate::nn::{derive_seed, seeded};

pub use features::{featurize_pair, jaccard, looks_like_opener, mentions, WordVectors, HANDCRAFTED};
pub use link_model::{LinkModel, LinkTrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisentangleConfig {
    /// How many preceding utterances are considered as antecedents.
    pub window: usize,
    /// Width of the static word vectors.
    pub word_dim: usize,
    pub link: LinkTrainConfig,
}

impl Default for DisentangleConfig {
    fn default() -> Self {
        Self {
            window: 50,
            word_dim: 100,
            link: LinkTrainConfig::default(),
        }
    }
}

/// A candidate "replier answers replied" pair with its features.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplyCandidate {
    pub replier: usize,
    pub replied: usize,
    pub features: Vec<f64>,
}

impl ReplyCandidate {
    pub fn is_self(&self) -> bool {
        self.replier == self.replied
    }
}

/// Scores of all options for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    pub replier: usize,
    /// Score of "this utterance opens a new thread".
    pub self_score: f64,
    /// `(earlier utterance index, score)`.
    pub antecedents: Vec<(usize, f64)>,
}

pub fn score_reply_to(model: &LinkModel, candidate: &ReplyCandidate) -> Result<f64> {
    Ok(model.score_batch(std::slice::from_ref(&candidate.features))?[0])
}

/// All candidates for utterance `i`: the self option plus up to `window`
/// preceding utterances.
pub fn candidates_for(log: &ChatLog, i: usize, vectors: &WordVectors, window: usize) -> Result<Vec<ReplyCandidate>> {
    let start = i.saturating_sub(window);
    (start..=i)
        .map(|j| {
            Ok(ReplyCandidate {
                replier: i,
                replied: j,
                features: featurize_pair(i, j, log, vectors, window)?,
            })
        })
        .collect()
}

/// Picks the best option per utterance. Ties go to the most recent option,
/// and the self option counts as the most recent. Returns
/// `(replier, replied)` index pairs for utterances that did not open a thread.
pub fn link_decisions(scores: &[CandidateScores]) -> Vec<(usize, usize)> {
    let mut links = Vec::new();
    for s in scores {
        let mut best = (s.self_score, s.replier);
        for &(j, score) in &s.antecedents {
            if j >= s.replier {
                continue;
            }
            if score > best.0 || (score == best.0 && j > best.1) {
                best = (score, j);
            }
        }
        if best.1 != s.replier {
            links.push((s.replier, best.1));
        }
    }
    links
}

/// Scores every utterance of `log` and returns the predicted reply links.
pub fn predict_links(log: &ChatLog, model: &LinkModel, vectors: &WordVectors, window: usize) -> Result<Vec<ReplyLink>> {
    let mut scores = Vec::with_capacity(log.len());
    for i in 0..log.len() {
        let cands = candidates_for(log, i, vectors, window)?;
        let feats: Vec<Vec<f64>> = cands.iter().map(|c| c.features.clone()).collect();
        let probs = model.score_batch(&feats)?;
        let mut s = CandidateScores {
            replier: i,
            self_score: f64::NEG_INFINITY,
            antecedents: Vec::with_capacity(cands.len()),
        };
        for (c, p) in cands.iter().zip(probs) {
            if c.is_self() {
                s.self_score = p;
            } else {
                s.antecedents.push((c.replied, p));
            }
        }
        scores.push(s);
    }
    Ok(link_decisions(&scores)
        .into_iter()
        .map(|(a, b)| ReplyLink::new(&log.utterances[a].id, &log.utterances[b].id))
        .collect())
}

/// Builds link-model training pairs from gold links. An utterance without a
/// gold antecedent in the window is a positive example of the self option.
pub fn training_pairs(
    log: &ChatLog,
    gold: &[ReplyLink],
    vectors: &WordVectors,
    window: usize,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let index = log.index_map();
    let mut antecedents: HashMap<usize, HashSet<usize>> = HashMap::new();
    for l in gold {
        let (Some(&a), Some(&b)) = (index.get(l.replier_id.as_str()), index.get(l.replied_id.as_str())) else {
            return Err(Error::Validation(format!(
                "gold link {} -> {} references an unknown utterance",
                l.replier_id, l.replied_id
            )));
        };
        if b < a && a - b <= window {
            antecedents.entry(a).or_default().insert(b);
        }
    }
    let mut rng = seeded(derive_seed(seed, "link.negatives"));
    let (mut feats, mut labels) = (Vec::new(), Vec::new());
    for i in 0..log.len() {
        let positives: HashSet<usize> = antecedents.get(&i).cloned().unwrap_or_else(|| HashSet::from([i]));
        let start = i.saturating_sub(window);
        let mut negatives: Vec<usize> = (start..=i).filter(|j| !positives.contains(j)).collect();
        negatives.shuffle(&mut rng);
        negatives.truncate(negatives_per_positive * positives.len());
        let mut pos: Vec<usize> = positives.into_iter().collect();
        pos.sort_unstable();
        for (j, y) in pos.into_iter().map(|j| (j, true)).chain(negatives.into_iter().map(|j| (j, false))) {
            feats.push(featurize_pair(i, j, log, vectors, window)?);
            labels.push(y);
        }
    }
    Ok((feats, labels))
}

pub fn train_link_model(
    log: &ChatLog,
    gold: &[ReplyLink],
    vectors: &WordVectors,
    cfg: &DisentangleConfig,
    seed: u64,
) -> Result<LinkModel> {
    if log.is_empty() {
        return Err(Error::EmptyDataset("chat log is empty".into()));
    }
    let (feats, labels) = training_pairs(log, gold, vectors, cfg.window, cfg.link.negatives_per_positive, seed)?;
    let mut model = LinkModel::new(2 * vectors.dim() + HANDCRAFTED, cfg.link.hidden, seed, candle_core::DType::F32)?;
    let history = model.fit(&feats, &labels, &cfg.link, seed)?;
    tracing::info!(pairs = feats.len(), final_loss = history.last().copied(), "trained link model");
    Ok(model)
}

/// Reply links declared inline through `reply_to_ids`.
pub fn inline_links(log: &ChatLog) -> Vec<ReplyLink> {
    log.utterances
        .iter()
        .flat_map(|u| u.reply_to_ids.iter().map(move |r| ReplyLink::new(&u.id, r)))
        .collect()
}

/// Reads gold reply links, one JSON object per line.
pub fn load_gold_links<R: BufRead>(reader: R) -> Result<Vec<ReplyLink>> {
    let mut links = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        links.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(links)
}

/// Groups utterances into dialogs: one dialog per connected component of the
/// undirected reply graph. Dialogs are ordered by their first utterance and
/// named after it.
pub fn cluster_dialogs(log: &ChatLog, links: &[ReplyLink]) -> Result<Vec<Dialog>> {
    let index = log.index_map();
    let n = log.len();
    let mut adj = vec![Vec::new(); n];
    for l in links {
        let (Some(&a), Some(&b)) = (index.get(l.replier_id.as_str()), index.get(l.replied_id.as_str())) else {
            return Err(Error::Validation(format!(
                "link {} -> {} references an utterance outside the log",
                l.replier_id, l.replied_id
            )));
        };
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut component = vec![usize::MAX; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let c = members.len();
        let mut group = Vec::new();
        let mut stack = vec![start];
        component[start] = c;
        while let Some(v) = stack.pop() {
            group.push(v);
            for &w in &adj[v] {
                if component[w] == usize::MAX {
                    component[w] = c;
                    stack.push(w);
                }
            }
        }
        group.sort_unstable();
        members.push(group);
    }
    let mut component_links: Vec<Vec<ReplyLink>> = vec![Vec::new(); members.len()];
    for l in links {
        component_links[component[index[l.replier_id.as_str()]]].push(l.clone());
    }
    members
        .into_iter()
        .zip(component_links)
        .map(|(group, links)| {
            let utterances: Vec<_> = group.iter().map(|&i| log.utterances[i].clone()).collect();
            Dialog::new(format!("d-{}", utterances[0].id), utterances, links)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn log(n: usize) -> ChatLog {
        ChatLog::new(
            (0..n)
                .map(|i| Utterance::new(format!("u{i}"), Utc.timestamp_opt(i as i64, 0).unwrap(), format!("p{}", i % 3), "text"))
                .collect(),
        )
        .unwrap()
    }

    fn uf_find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }

    /// Partition from a union-find over the same links.
    fn union_find_partition(n: usize, pairs: &[(usize, usize)]) -> Vec<Vec<usize>> {
        let mut p: Vec<usize> = (0..n).collect();
        for &(a, b) in pairs {
            let (ra, rb) = (uf_find(&mut p, a), uf_find(&mut p, b));
            p[ra] = rb;
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..n {
            let r = uf_find(&mut p, i);
            groups.entry(r).or_default().push(i);
        }
        let mut out: Vec<_> = groups.into_values().collect();
        out.sort();
        out
    }

    /// Partition from a Warshall transitive closure.
    fn closure_partition(n: usize, pairs: &[(usize, usize)]) -> Vec<Vec<usize>> {
        let mut r = vec![vec![false; n]; n];
        for (i, row) in r.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(a, b) in pairs {
            r[a][b] = true;
            r[b][a] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if r[i][k] && r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
        let mut out: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| r[i][j]).collect()).collect();
        out.sort();
        out.dedup();
        out
    }

    fn partition_of(log: &ChatLog, dialogs: &[Dialog]) -> Vec<Vec<usize>> {
        let index = log.index_map();
        let mut out: Vec<Vec<usize>> = dialogs
            .iter()
            .map(|d| {
                let mut g: Vec<usize> = d.utterances.iter().map(|u| index[u.id.as_str()]).collect();
                g.sort_unstable();
                g
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn spec_example_clusters() {
        let l = log(5);
        let links = vec![ReplyLink::new("u1", "u0"), ReplyLink::new("u3", "u2"), ReplyLink::new("u4", "u1")];
        let dialogs = cluster_dialogs(&l, &links).unwrap();
        assert_eq!(partition_of(&l, &dialogs), vec![vec![0, 1, 4], vec![2, 3]]);
        assert_eq!(dialogs[0].id, "d-u0");
    }

    #[test]
    fn no_links_gives_singletons() {
        let l = log(4);
        let dialogs = cluster_dialogs(&l, &[]).unwrap();
        assert_eq!(dialogs.len(), 4);
        assert!(dialogs.iter().all(|d| d.utterances.len() == 1));
    }

    #[test]
    fn dangling_link_is_rejected() {
        let l = log(2);
        assert!(matches!(
            cluster_dialogs(&l, &[ReplyLink::new("u1", "zz")]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn decisions_prefer_recent_on_ties_and_honor_self() {
        let s = vec![
            CandidateScores { replier: 0, self_score: 0.1, antecedents: vec![] },
            CandidateScores { replier: 1, self_score: 0.2, antecedents: vec![(0, 0.9)] },
            CandidateScores { replier: 2, self_score: 0.1, antecedents: vec![(0, 0.7), (1, 0.7)] },
            CandidateScores { replier: 3, self_score: 0.95, antecedents: vec![(2, 0.9)] },
        ];
        assert_eq!(link_decisions(&s), vec![(1, 0), (2, 1)]);
    }

    #[test]
    fn training_pairs_respect_negative_ratio() {
        let l = log(12);
        let gold: Vec<_> = (1..12).map(|i| ReplyLink::new(format!("u{i}"), format!("u{}", i - 1))).collect();
        let (f, y) = training_pairs(&l, &gold, &WordVectors::hashed(4, 0), 50, 5, 0).unwrap();
        assert_eq!(f.len(), y.len());
        let pos = y.iter().filter(|&&b| b).count();
        assert_eq!(pos, 12);
        assert!(y.len() - pos <= 5 * pos);
    }

    #[test]
    fn gold_links_parse_with_line_numbers() {
        let ok = "{\"replier_id\":\"b\",\"replied_id\":\"a\"}\n\n";
        assert_eq!(load_gold_links(ok.as_bytes()).unwrap(), vec![ReplyLink::new("b", "a")]);
        let bad = "{\"replier_id\":\"b\",\"replied_id\":\"a\"}\n{oops}\n";
        assert!(matches!(load_gold_links(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn clustering_matches_independent_oracles(
            n in 1usize..25,
            raw in proptest::collection::vec((0usize..1000, 0usize..1000), 0..40)
        ) {
            let l = log(n);
            let pairs: Vec<(usize, usize)> = raw
                .into_iter()
                .filter_map(|(a, b)| {
                    let (a, b) = (a % n, b % n);
                    (a != b).then(|| (a.max(b), a.min(b)))
                })
                .collect();
            let links: Vec<_> = pairs.iter().map(|&(a, b)| ReplyLink::new(format!("u{a}"), format!("u{b}"))).collect();
            let dialogs = cluster_dialogs(&l, &links).unwrap();
            let got = partition_of(&l, &dialogs);
            prop_assert_eq!(&got, &union_find_partition(n, &pairs));
            prop_assert_eq!(&got, &closure_partition(n, &pairs));
            // every utterance lands in exactly one dialog
            let total: usize = dialogs.iter().map(|d| d.utterances.len()).sum();
            prop_assert_eq!(total, n);
            // no link crosses dialogs
            let link_total: usize = dialogs.iter().map(|d| d.reply_links.len()).sum();
            let mut uniq = pairs.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(link_total, uniq.len());
        }
    }
}
