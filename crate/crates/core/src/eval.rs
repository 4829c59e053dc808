//! Closed-set recall metrics, frequency splits and attribute accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::inference::{EmbeddingTable, PredictedSceneGraph, Ranked};
use crate::scene::InstanceId;
use crate::selection::{pair_key, parse_pair_key};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0}: no ground-truth items")]
    EmptyGroundTruth(&'static str),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("class `{0}` is missing from the frequency file")]
    UnassignedClass(String),
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
    #[error("ground truth: {0}")]
    Invalid(String),
}

fn file_err(path: &Path, reason: impl ToString) -> EvalError {
    EvalError::File {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawGroundTruth {
    objects: BTreeMap<InstanceId, String>,
    #[serde(default)]
    predicates: BTreeMap<String, Vec<String>>,
    object_classes: Vec<String>,
    predicate_classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attributes: Option<BTreeMap<InstanceId, String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub objects: BTreeMap<InstanceId, String>,
    /// True predicates per ordered pair (multi-label).
    pub predicates: BTreeMap<(InstanceId, InstanceId), Vec<String>>,
    pub object_classes: Vec<String>,
    pub predicate_classes: Vec<String>,
    pub attributes: Option<BTreeMap<InstanceId, String>>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<(), EvalError> {
        let oc: BTreeSet<&String> = self.object_classes.iter().collect();
        let pc: BTreeSet<&String> = self.predicate_classes.iter().collect();
        for (id, l) in &self.objects {
            if !oc.contains(l) {
                return Err(EvalError::Invalid(format!("object {id} has undeclared class `{l}`")));
            }
        }
        for (&(i, j), ls) in &self.predicates {
            for end in [i, j] {
                if !self.objects.contains_key(&end) {
                    return Err(EvalError::Invalid(format!("edge {} refers to unknown object {end}", pair_key(i, j))));
                }
            }
            if let Some(l) = ls.iter().find(|l| !pc.contains(l)) {
                return Err(EvalError::Invalid(format!("edge {} has undeclared predicate `{l}`", pair_key(i, j))));
            }
        }
        if let Some(attrs) = &self.attributes {
            if let Some(id) = attrs.keys().find(|id| !self.objects.contains_key(id)) {
                return Err(EvalError::Invalid(format!("attribute for unknown object {id}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let raw: RawGroundTruth = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut predicates = BTreeMap::new();
        for (k, v) in raw.predicates {
            let pair = parse_pair_key(&k).ok_or_else(|| format!("predicates: bad pair key `{k}`"))?;
            predicates.insert(pair, v);
        }
        Ok(Self {
            objects: raw.objects,
            predicates,
            object_classes: raw.object_classes,
            predicate_classes: raw.predicate_classes,
            attributes: raw.attributes,
        })
    }

    pub fn to_json(&self) -> String {
        let raw = RawGroundTruth {
            objects: self.objects.clone(),
            predicates: self.predicates.iter().map(|(&(i, j), v)| (pair_key(i, j), v.clone())).collect(),
            object_classes: self.object_classes.clone(),
            predicate_classes: self.predicate_classes.clone(),
            attributes: self.attributes.clone(),
        };
        serde_json::to_string_pretty(&raw).expect("ground truth serialises")
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
        let gt = Self::from_json(&text).map_err(|e| file_err(path, e))?;
        gt.validate()?;
        Ok(gt)
    }
}

/// 1-based position of `label` in `ranked`.
pub fn rank_of(ranked: &[(String, f64)], label: &str) -> Option<usize> {
    ranked.iter().position(|(l, _)| l == label).map(|p| p + 1)
}

fn in_top_k(ranked: &[(String, f64)], label: &str, k: usize) -> bool {
    rank_of(ranked, label).is_some_and(|r| r <= k)
}

/// A ranked prediction and its true labels (one for objects, several for
/// multi-label edges).
#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub ranked: Ranked,
    pub truth: Vec<String>,
}

/// Fraction of items with any true label in the top `k`.
pub fn recall_at_k(items: &[RankedItem], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if items.is_empty() {
        return Err(EvalError::EmptyGroundTruth("recall"));
    }
    let hits = items
        .iter()
        .filter(|it| it.truth.iter().any(|t| in_top_k(&it.ranked, t, k)))
        .count();
    Ok(hits as f64 / items.len() as f64)
}

/// Recall of every class with at least one instance: an instance of class
/// `c` is a hit when `c` itself is in the top `k`.
pub fn per_class_recall(items: &[RankedItem], k: usize) -> Result<BTreeMap<String, f64>, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for it in items {
        for t in &it.truth {
            let e = counts.entry(t.clone()).or_default();
            e.1 += 1;
            if in_top_k(&it.ranked, t, k) {
                e.0 += 1;
            }
        }
    }
    Ok(counts.into_iter().map(|(c, (h, n))| (c, h as f64 / n as f64)).collect())
}

pub fn mean_recall(per_class: &BTreeMap<String, f64>) -> Result<f64, EvalError> {
    if per_class.is_empty() {
        return Err(EvalError::EmptyGroundTruth("mean recall"));
    }
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

/// Cosine score mapped into `[0, 1]` before multiplying triplet components.
pub fn unit_score(s: f64) -> f64 {
    (1.0 + s) / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletItem {
    pub subject: Ranked,
    pub predicate: Ranked,
    pub object: Ranked,
    /// `(subject, predicate, object)` labels.
    pub truth: (String, String, String),
}

/// Rank of the true triple among all label combinations of the edge, scored
/// by the product of unit scores; equal scores order lexically by triple.
pub fn triplet_rank(item: &TripletItem) -> Option<usize> {
    let find = |r: &Ranked, l: &str| r.iter().find(|(x, _)| x == l).map(|(_, s)| unit_score(*s));
    let (ts, tp, to) = (&item.truth.0, &item.truth.1, &item.truth.2);
    let target = find(&item.subject, ts)? * find(&item.predicate, tp)? * find(&item.object, to)?;
    let key = (ts.as_str(), tp.as_str(), to.as_str());
    let mut better = 0usize;
    for (s, ss) in &item.subject {
        for (p, ps) in &item.predicate {
            for (o, os) in &item.object {
                let score = unit_score(*ss) * unit_score(*ps) * unit_score(*os);
                if score > target || (score == target && (s.as_str(), p.as_str(), o.as_str()) < key) {
                    better += 1;
                }
            }
        }
    }
    Some(better + 1)
}

pub fn triplet_recall_at_k(items: &[TripletItem], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if items.is_empty() {
        return Err(EvalError::EmptyGroundTruth("triplet recall"));
    }
    let hits = items.iter().filter(|it| triplet_rank(it).is_some_and(|r| r <= k)).count();
    Ok(hits as f64 / items.len() as f64)
}

/// Triplet recall per predicate class.
pub fn triplet_per_class_recall(items: &[TripletItem], k: usize) -> Result<BTreeMap<String, f64>, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for it in items {
        let e = counts.entry(it.truth.1.clone()).or_default();
        e.1 += 1;
        if triplet_rank(it).is_some_and(|r| r <= k) {
            e.0 += 1;
        }
    }
    Ok(counts.into_iter().map(|(c, (h, n))| (c, h as f64 / n as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Head,
    Body,
    Tail,
}

/// Class → frequency bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySplit {
    pub buckets: BTreeMap<String, Bucket>,
}

impl FrequencySplit {
    /// Terciles of the classes sorted by count (descending, then label);
    /// leftover classes go to the earlier buckets.
    pub fn from_counts(counts: &BTreeMap<String, u64>) -> Self {
        let mut classes: Vec<(&String, u64)> = counts.iter().map(|(l, &c)| (l, c)).collect();
        classes.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let n = classes.len();
        let base = n / 3;
        let rem = n % 3;
        let head = base + usize::from(rem > 0);
        let body = base + usize::from(rem > 1);
        let buckets = classes
            .into_iter()
            .enumerate()
            .map(|(k, (l, _))| {
                let b = if k < head {
                    Bucket::Head
                } else if k < head + body {
                    Bucket::Body
                } else {
                    Bucket::Tail
                };
                (l.clone(), b)
            })
            .collect();
        Self { buckets }
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        Ok(Self::from_counts(&read_counts(path)?))
    }

    /// Terciles over `classes` only; classes absent from `counts` count zero.
    pub fn for_classes<'a>(counts: &BTreeMap<String, u64>, classes: impl IntoIterator<Item = &'a String>) -> Self {
        let restricted = classes.into_iter().map(|c| (c.clone(), counts.get(c).copied().unwrap_or(0))).collect();
        Self::from_counts(&restricted)
    }
}

/// Class frequency file: a JSON object of label to count.
pub fn read_counts(path: &Path) -> Result<BTreeMap<String, u64>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| file_err(path, e))
}

impl FrequencySplit {
}

/// Bucket-wise mean recall; `None` marks an empty bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRow {
    pub head: Option<f64>,
    pub body: Option<f64>,
    pub tail: Option<f64>,
}

pub fn split_report(per_class: &BTreeMap<String, f64>, split: &FrequencySplit) -> Result<SplitRow, EvalError> {
    let mut sums: BTreeMap<Bucket, (f64, usize)> = BTreeMap::new();
    for (c, &r) in per_class {
        let b = split.buckets.get(c).ok_or_else(|| EvalError::UnassignedClass(c.clone()))?;
        let e = sums.entry(*b).or_default();
        e.0 += r;
        e.1 += 1;
    }
    let mean = |b| sums.get(&b).map(|&(s, n)| s / n as f64);
    Ok(SplitRow {
        head: mean(Bucket::Head),
        body: mean(Bucket::Body),
        tail: mean(Bucket::Tail),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeAccuracy {
    pub per_class: BTreeMap<String, f64>,
    pub mean: f64,
}

/// Per-instance top-1 accuracy grouped by true class, plus the class mean.
pub fn attribute_top1(items: &[(Ranked, String)]) -> Result<AttributeAccuracy, EvalError> {
    let ranked: Vec<RankedItem> = items
        .iter()
        .map(|(r, t)| RankedItem {
            ranked: r.clone(),
            truth: vec![t.clone()],
        })
        .collect();
    let per_class = per_class_recall(&ranked, 1)?;
    let mean = mean_recall(&per_class)?;
    Ok(AttributeAccuracy { per_class, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub object_k: Vec<usize>,
    pub predicate_k: Vec<usize>,
    pub triplet_k: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            object_k: vec![1, 3, 5, 10],
            predicate_k: vec![1, 3, 5],
            triplet_k: vec![50, 100],
        }
    }
}

/// Everything the metrics consume, pooled over any number of scenes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalItems {
    pub objects: Vec<RankedItem>,
    pub predicates: Vec<RankedItem>,
    pub triplets: Vec<TripletItem>,
    pub attributes: Vec<(Ranked, String)>,
}

impl EvalItems {
    pub fn extend(&mut self, other: EvalItems) {
        self.objects.extend(other.objects);
        self.predicates.extend(other.predicates);
        self.triplets.extend(other.triplets);
        self.attributes.extend(other.attributes);
    }
}

/// Pairs a predicted graph with its ground truth. Edge rankings keep only
/// labels from the predicate class list; missing predictions rank nothing.
pub fn collect_items(graph: &PredictedSceneGraph, gt: &GroundTruth, attributes: Option<&EmbeddingTable>) -> EvalItems {
    let classes: BTreeSet<&str> = gt.predicate_classes.iter().map(String::as_str).collect();
    let node_rank = |id| graph.node(id).map(|n| n.labels.clone()).unwrap_or_default();
    let mut items = EvalItems::default();
    for (&id, label) in &gt.objects {
        items.objects.push(RankedItem {
            ranked: node_rank(id),
            truth: vec![label.clone()],
        });
    }
    for (&(i, j), preds) in &gt.predicates {
        if preds.is_empty() {
            continue;
        }
        let ranked: Ranked = graph
            .edge(i, j)
            .map(|e| e.mapped.iter().filter(|(l, _)| classes.contains(l.as_str())).cloned().collect())
            .unwrap_or_default();
        for p in preds {
            items.triplets.push(TripletItem {
                subject: node_rank(i),
                predicate: ranked.clone(),
                object: node_rank(j),
                truth: (gt.objects[&i].clone(), p.clone(), gt.objects[&j].clone()),
            });
        }
        items.predicates.push(RankedItem {
            ranked,
            truth: preds.clone(),
        });
    }
    if let (Some(table), Some(attrs)) = (attributes, &gt.attributes) {
        for (&id, label) in attrs {
            let ranked = graph
                .node(id)
                .and_then(|n| crate::inference::query_attribute(&n.feature, table, table.len()).ok())
                .unwrap_or_default();
            items.attributes.push((ranked, label.clone()));
        }
    }
    items
}

fn opt_value(v: Option<f64>) -> Value {
    v.map_or_else(|| Value::String("n/a".into()), Value::from)
}

fn metric_block(
    name: &'static str,
    ks: &[usize],
    recall: &dyn Fn(usize) -> Result<f64, EvalError>,
    per_class: &dyn Fn(usize) -> Result<BTreeMap<String, f64>, EvalError>,
    counts: Option<&BTreeMap<String, u64>>,
    splits: &mut Map<String, Value>,
) -> Result<Value, EvalError> {
    let mut block = Map::new();
    let mut table = Map::new();
    for &k in ks {
        block.insert(format!("R@{k}"), recall(k)?.into());
        let pc = per_class(k)?;
        block.insert(format!("mR@{k}"), mean_recall(&pc)?.into());
        if let Some(counts) = counts {
            let split = FrequencySplit::for_classes(counts, pc.keys());
            let row = split_report(&pc, &split)?;
            table.insert(
                format!("mR@{k}"),
                json!({"head": opt_value(row.head), "body": opt_value(row.body), "tail": opt_value(row.tail)}),
            );
        }
    }
    if counts.is_some() {
        splits.insert(name.to_string(), Value::Object(table));
    }
    Ok(Value::Object(block))
}

/// Full report as JSON. Sections without ground truth are omitted. With
/// class counts, each section gets a head/body/tail table whose terciles are
/// taken over that section's own classes.
pub fn report(items: &EvalItems, cfg: &EvalConfig, counts: Option<&BTreeMap<String, u64>>) -> Result<Value, EvalError> {
    let mut out = Map::new();
    let mut splits = Map::new();
    if items.objects.is_empty() {
        return Err(EvalError::EmptyGroundTruth("objects"));
    }
    out.insert(
        "objects".into(),
        metric_block(
            "objects",
            &cfg.object_k,
            &|k| recall_at_k(&items.objects, k),
            &|k| per_class_recall(&items.objects, k),
            counts,
            &mut splits,
        )?,
    );
    if !items.predicates.is_empty() {
        out.insert(
            "predicates".into(),
            metric_block(
                "predicates",
                &cfg.predicate_k,
                &|k| recall_at_k(&items.predicates, k),
                &|k| per_class_recall(&items.predicates, k),
                counts,
                &mut splits,
            )?,
        );
        let mut trip = Map::new();
        for &k in &cfg.triplet_k {
            trip.insert(format!("R@{k}"), triplet_recall_at_k(&items.triplets, k)?.into());
            trip.insert(format!("mR@{k}"), mean_recall(&triplet_per_class_recall(&items.triplets, k)?)?.into());
        }
        out.insert("triplets".into(), Value::Object(trip));
    }
    if !items.attributes.is_empty() {
        let acc = attribute_top1(&items.attributes)?;
        let per: Map<String, Value> = acc.per_class.into_iter().map(|(c, v)| (c, v.into())).collect();
        out.insert("attributes".into(), json!({"top1": per, "mean": acc.mean}));
    }
    if counts.is_some() {
        out.insert("splits".into(), Value::Object(splits));
    }
    out.insert(
        "counts".into(),
        json!({"objects": items.objects.len(), "edges": items.predicates.len(), "triplets": items.triplets.len()}),
    );
    Ok(Value::Object(out))
}

/// Flattens a report into `metric,value` rows with dotted metric paths.
pub fn report_csv(report: &Value) -> String {
    fn walk(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&p, v, rows);
                }
            }
            Value::String(s) => rows.push((prefix.to_string(), s.clone())),
            other => rows.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    walk("", report, &mut rows);
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(labels: &[(&str, f64)]) -> Ranked {
        labels.iter().map(|(l, s)| (l.to_string(), *s)).collect()
    }

    fn item(labels: &[(&str, f64)], truth: &[&str]) -> RankedItem {
        RankedItem {
            ranked: r(labels),
            truth: truth.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn recall_examples() {
        let one = [item(&[("chair", 0.9)], &["chair"])];
        assert_eq!(recall_at_k(&one, 1).unwrap(), 1.0);
        let two = [item(&[("table", 0.9), ("chair", 0.5)], &["chair"])];
        assert_eq!(recall_at_k(&two, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&two, 2).unwrap(), 1.0);
        assert!(matches!(recall_at_k(&[], 1), Err(EvalError::EmptyGroundTruth(_))));
        assert!(matches!(recall_at_k(&two, 0), Err(EvalError::InvalidK)));
    }

    #[test]
    fn multi_label_hit_rules() {
        let items = [item(&[("above", 0.9), ("near", 0.8)], &["near", "above"])];
        assert_eq!(recall_at_k(&items, 1).unwrap(), 1.0);
        let pc = per_class_recall(&items, 1).unwrap();
        assert_eq!(pc["above"], 1.0);
        assert_eq!(pc["near"], 0.0);
        assert_eq!(mean_recall(&pc).unwrap(), 0.5);
    }

    #[test]
    fn triplet_second_rank() {
        let it = TripletItem {
            subject: r(&[("chair", 1.0)]),
            predicate: r(&[("left of", 0.9), ("above", 0.1)]),
            object: r(&[("table", 1.0)]),
            truth: ("chair".into(), "above".into(), "table".into()),
        };
        assert_eq!(triplet_rank(&it), Some(2));
        assert_eq!(triplet_recall_at_k(std::slice::from_ref(&it), 1).unwrap(), 0.0);
        assert_eq!(triplet_recall_at_k(&[it], 2).unwrap(), 1.0);
    }

    #[test]
    fn triplet_ties_break_lexically() {
        let it = TripletItem {
            subject: r(&[("a", 0.5), ("b", 0.5)]),
            predicate: r(&[("p", 1.0)]),
            object: r(&[("c", 1.0)]),
            truth: ("b".into(), "p".into(), "c".into()),
        };
        assert_eq!(triplet_rank(&it), Some(2));
    }

    #[test]
    fn terciles_over_nine_classes() {
        let counts: BTreeMap<String, u64> = (0..9u64).map(|i| (format!("c{i}"), 100 - i * 10)).collect();
        let split = FrequencySplit::from_counts(&counts);
        assert_eq!(split.buckets["c0"], Bucket::Head);
        assert_eq!(split.buckets["c2"], Bucket::Head);
        assert_eq!(split.buckets["c3"], Bucket::Body);
        assert_eq!(split.buckets["c8"], Bucket::Tail);
        let pc: BTreeMap<String, f64> = (0..9).map(|i| (format!("c{i}"), i as f64 / 8.0)).collect();
        let row = split_report(&pc, &split).unwrap();
        assert!((row.head.unwrap() - 1.0 / 8.0).abs() < 1e-12);
        assert!((row.body.unwrap() - 4.0 / 8.0).abs() < 1e-12);
        assert!((row.tail.unwrap() - 7.0 / 8.0).abs() < 1e-12);

        let four: BTreeMap<String, u64> = [("a", 1), ("b", 1), ("c", 1), ("d", 1)].iter().map(|(l, c)| (l.to_string(), *c)).collect();
        let s4 = FrequencySplit::from_counts(&four);
        assert_eq!((s4.buckets["a"], s4.buckets["b"], s4.buckets["c"], s4.buckets["d"]), (Bucket::Head, Bucket::Head, Bucket::Body, Bucket::Tail));
    }

    #[test]
    fn empty_bucket_is_not_applicable() {
        let counts: BTreeMap<String, u64> = [("x".to_string(), 5), ("y".to_string(), 1), ("z".to_string(), 0)].into();
        let split = FrequencySplit::from_counts(&counts);
        let pc: BTreeMap<String, f64> = [("x".to_string(), 1.0)].into();
        let row = split_report(&pc, &split).unwrap();
        assert_eq!(row, SplitRow { head: Some(1.0), body: None, tail: None });
        assert_eq!(opt_value(row.body), Value::String("n/a".into()));
    }

    #[test]
    fn ground_truth_json_roundtrip() {
        let text = r#"{"objects":{"1":"chair","2":"table"},"predicates":{"1,2":["left of"]},"object_classes":["chair","table"],"predicate_classes":["left of"]}"#;
        let gt = GroundTruth::from_json(text).unwrap();
        gt.validate().unwrap();
        assert_eq!(gt.predicates[&(1, 2)], vec!["left of".to_string()]);
        assert_eq!(GroundTruth::from_json(&gt.to_json()).unwrap(), gt);
        let mut bad = gt.clone();
        bad.predicates.insert((1, 9), vec!["left of".into()]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_flattens() {
        let v = json!({"objects": {"R@1": 1.0}, "splits": {"objects": {"mR@1": {"head": "n/a"}}}});
        let csv = report_csv(&v);
        assert!(csv.contains("objects.R@1,1.0\n"));
        assert!(csv.contains("splits.objects.mR@1.head,n/a\n"));
    }
}
