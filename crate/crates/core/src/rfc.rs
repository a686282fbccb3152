//! Random-forest baseline on per-channel window statistics.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dataset::LabeledWindow;
use crate::par::Exec;
use crate::rng;

/// Mean block, then variance block, then L2-norm block, each in channel
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: usize,
    pub participant_id: std::sync::Arc<str>,
}

/// Mean, population variance and Euclidean norm of every channel.
pub fn stat_features(w: &LabeledWindow) -> FeatureVector {
    let s = w.channels;
    let mut values = vec![0.0; 3 * s];
    for c in 0..s {
        let xs = || w.data.iter().skip(c).step_by(s).map(|&x| x as f64);
        let n = w.len as f64;
        let mean = xs().sum::<f64>() / n;
        let var = xs().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let norm = xs().map(|x| x * x).sum::<f64>().sqrt();
        values[c] = mean;
        values[s + c] = var;
        values[2 * s + c] = norm;
    }
    FeatureVector {
        values,
        label: w.label.index(),
        participant_id: w.participant_id.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfcConfig {
    pub trees: usize,
    /// `None` grows until leaves are pure or `min_leaf` stops the split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for RfcConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: None,
            min_leaf: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RfcError {
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("feature vectors have inconsistent lengths")]
    Ragged,
    #[error("bad forest dump, line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub num_classes: usize,
    pub num_features: usize,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &k) in counts.iter().enumerate() {
        if k > counts[best] {
            best = c;
        }
    }
    best
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    classes: usize,
    mtry: usize,
    cfg: &'a RfcConfig,
    nodes: Vec<Node>,
    rng: rng::Rng,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best split on one feature: (weighted child impurity, threshold).
    fn best_on(&self, idx: &mut [usize], f: usize) -> Option<(f64, f64)> {
        idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
        let n = idx.len();
        let total = self.counts(idx);
        let mut left = vec![0usize; self.classes];
        let mut best: Option<(f64, f64)> = None;
        let min_leaf = self.cfg.min_leaf.max(1);
        for k in 0..n - 1 {
            left[self.y[idx[k]]] += 1;
            let (a, b) = (self.x[idx[k]][f], self.x[idx[k + 1]][f]);
            let nl = k + 1;
            if a == b || nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let imp = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
            if best.is_none_or(|(bi, _)| imp < bi) {
                let mid = a + (b - a) / 2.0;
                // guard against the midpoint rounding onto the upper value
                let thr = if mid < b { mid } else { a };
                best = Some((imp, thr));
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let counts = self.counts(idx);
        self.nodes.push(Node::Leaf(majority(&counts)));
        let n = idx.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || n < 2 * self.cfg.min_leaf.max(1) || self.cfg.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let mut features: Vec<usize> = (0..self.x[0].len()).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<(f64, usize, f64)> = None;
        for (tried, &f) in features.iter().enumerate() {
            // keep drawing past mtry until some feature can split
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some((imp, thr)) = self.best_on(idx, f) {
                if best.is_none_or(|(bi, _, _)| imp < bi) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let mut k = 0;
        for j in 0..n {
            if self.x[idx[j]][feature] <= threshold {
                idx.swap(j, k);
                k += 1;
            }
        }
        let (l, r) = idx.split_at_mut(k);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Bootstrap-aggregated CART trees with sqrt(features) candidates per split
/// and Gini impurity. Trees are grown independently from derived seeds, so
/// the result does not depend on `exec`.
pub fn train_rfc(features: &[FeatureVector], num_classes: usize, cfg: &RfcConfig, exec: Exec) -> Result<Forest, RfcError> {
    if features.is_empty() {
        return Err(RfcError::EmptyTrainSet);
    }
    let f = features[0].values.len();
    if features.iter().any(|v| v.values.len() != f) {
        return Err(RfcError::Ragged);
    }
    let x: Vec<Vec<f64>> = features.iter().map(|v| v.values.clone()).collect();
    let y: Vec<usize> = features.iter().map(|v| v.label).collect();
    let classes = num_classes.max(y.iter().max().map_or(0, |m| m + 1));
    let mtry = ((f as f64).sqrt().round() as usize).clamp(1, f.max(1));
    let trees = exec.map_range(cfg.trees, |t| {
        let mut r = rng::sub_rng(cfg.seed, &format!("tree-{t}"));
        let n = x.len();
        let mut idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
        let mut b = Builder {
            x: &x,
            y: &y,
            classes,
            mtry,
            cfg,
            nodes: Vec::new(),
            rng: r,
        };
        if f == 0 {
            let c = majority(&b.counts(&idx));
            return Tree { nodes: vec![Node::Leaf(c)] };
        }
        b.grow(&mut idx, 0);
        Tree { nodes: b.nodes }
    });
    Ok(Forest {
        trees,
        num_classes: classes,
        num_features: f,
    })
}

impl Forest {
    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut v = vec![0; self.num_classes];
        for t in &self.trees {
            v[t.predict(x)] += 1;
        }
        v
    }

    /// Plurality vote; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        majority(&self.votes(x))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "lfi-har-rfc 1").unwrap();
        writeln!(s, "classes {} features {} trees {}", self.num_classes, self.num_features, self.trees.len()).unwrap();
        for t in &self.trees {
            writeln!(s, "tree {}", t.nodes.len()).unwrap();
            for n in &t.nodes {
                match n {
                    Node::Leaf(c) => writeln!(s, "L {c}").unwrap(),
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => writeln!(s, "S {feature} {threshold:?} {left} {right}").unwrap(),
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, RfcError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()));
        let err = |line: usize, m: &str| RfcError::Format {
            line,
            message: m.to_string(),
        };
        let num = |line: usize, s: Option<&&str>| -> Result<usize, RfcError> {
            s.and_then(|s| s.parse().ok()).ok_or_else(|| err(line, "expected an integer"))
        };
        match lines.next() {
            Some((_, h)) if h == ["lfi-har-rfc", "1"] => {}
            _ => return Err(err(1, "missing `lfi-har-rfc 1` header")),
        }
        let (ln, h) = lines.next().ok_or_else(|| err(2, "missing sizes"))?;
        let (num_classes, num_features, count) = (num(ln, h.get(1))?, num(ln, h.get(3))?, num(ln, h.get(5))?);
        let mut trees = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, h) = lines.next().ok_or_else(|| err(0, "truncated"))?;
            let len = num(ln, h.get(1))?;
            let mut nodes = Vec::with_capacity(len);
            for _ in 0..len {
                let (ln, t) = lines.next().ok_or_else(|| err(ln, "truncated tree"))?;
                let node = match t.first() {
                    Some(&"L") => Node::Leaf(num(ln, t.get(1))?),
                    Some(&"S") => Node::Split {
                        feature: num(ln, t.get(1))?,
                        threshold: t.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| err(ln, "bad threshold"))?,
                        left: num(ln, t.get(3))?,
                        right: num(ln, t.get(4))?,
                    },
                    _ => return Err(err(ln, "expected a node")),
                };
                nodes.push(node);
            }
            trees.push(Tree { nodes });
        }
        Ok(Self {
            trees,
            num_classes,
            num_features,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::Activity;
    use rand_distr::{Distribution, StandardNormal};

    fn window(channels: Vec<Vec<f32>>) -> LabeledWindow {
        let len = channels[0].len();
        let s = channels.len();
        let data: Vec<f32> = (0..len).flat_map(|t| channels.iter().map(move |c| c[t])).collect();
        LabeledWindow {
            data: data.into(),
            len,
            channels: s,
            label: Activity::Talk,
            participant_id: "p".into(),
            window_index: 0,
        }
    }

    #[test]
    fn feature_examples() {
        let f = stat_features(&window(vec![vec![0.0; 3], vec![1.0, 2.0, 3.0], vec![-2.0; 3]]));
        let v = &f.values;
        assert_eq!((v[0], v[3], v[6]), (0.0, 0.0, 0.0));
        assert!((v[1] - 2.0).abs() < 1e-12);
        assert!((v[4] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v[7] - 14f64.sqrt()).abs() < 1e-12);
        assert_eq!((v[2], v[5]), (-2.0, 0.0));
        assert!((v[8] - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    fn blobs(n: usize, seed: u64) -> Vec<FeatureVector> {
        let mut r = rng::rng(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let c = if label == 0 { -2.0 } else { 2.0 };
                let values = (0..4).map(|_| c + 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut r)).collect();
                FeatureVector {
                    values,
                    label,
                    participant_id: "p".into(),
                }
            })
            .collect()
    }

    #[test]
    fn separable_blobs_fit() {
        let data = blobs(200, 1);
        let cfg = RfcConfig {
            seed: 3,
            ..Default::default()
        };
        let forest = train_rfc(&data, 2, &cfg, Exec::Parallel).unwrap();
        let acc = data.iter().filter(|v| forest.predict(&v.values) == v.label).count() as f64 / 200.0;
        assert!(acc >= 0.99, "{acc}");
    }

    #[test]
    fn deterministic_and_serializable() {
        let data = blobs(60, 2);
        let cfg = RfcConfig {
            trees: 10,
            seed: 4,
            ..Default::default()
        };
        let a = train_rfc(&data, 2, &cfg, Exec::Sequential).unwrap();
        let b = train_rfc(&data, 2, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(Forest::from_text(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn single_class_and_errors() {
        let mut data = blobs(20, 3);
        data.iter_mut().for_each(|v| v.label = 1);
        let f = train_rfc(&data, 3, &RfcConfig::default(), Exec::Sequential).unwrap();
        assert!(blobs(10, 9).iter().all(|v| f.predict(&v.values) == 1));
        assert_eq!(train_rfc(&[], 2, &RfcConfig::default(), Exec::Sequential), Err(RfcError::EmptyTrainSet));
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let forest = Forest {
            trees: vec![Tree { nodes: vec![Node::Leaf(2)] }, Tree { nodes: vec![Node::Leaf(1)] }],
            num_classes: 3,
            num_features: 1,
        };
        assert_eq!(forest.predict(&[0.0]), 1);
    }
}
