//! Linear probe for node classification on frozen embeddings.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            iterations: 300,
            lr: 0.05,
            l2: 1e-3,
        }
    }
}

/// Per class, shuffle and put `train_fraction` of the rows (at least one
/// row on each side when the class has two or more) into the training side.
pub fn stratified_split(labels: &BTreeMap<usize, String>, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (&row, c) in labels {
        by_class.entry(c.as_str()).or_default().push(row);
    }
    let mut rng = SeedTree::new(seed).stream("probe.split", 0);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for rows in by_class.values_mut() {
        rows.shuffle(&mut rng);
        let mut k = (train_fraction * rows.len() as f64).round() as usize;
        if rows.len() >= 2 {
            k = k.clamp(1, rows.len() - 1);
        }
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    (train, test)
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Micro-F1 of a multinomial logistic regression fit on the training rows
/// of `embeddings` and scored on the test rows. `labels` maps row to class.
pub fn node_classification_f1(embeddings: &Array2<f64>, labels: &BTreeMap<usize, String>, config: &ProbeConfig, seed: u64) -> Result<f64> {
    if let Some((&r, _)) = labels.iter().find(|(&r, _)| r >= embeddings.nrows()) {
        return Err(Error::Argument(format!("label for row {r} of a {}-row embedding", embeddings.nrows())));
    }
    let classes: Vec<&str> = {
        let mut c: Vec<&str> = labels.values().map(String::as_str).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    if classes.len() < 2 {
        return Err(Error::DegenerateTask(format!("{} label class(es); need at least two", classes.len())));
    }
    if embeddings.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite embedding".into()));
    }
    let class_of = |row: usize| classes.binary_search(&labels[&row].as_str()).expect("known class");
    let (train, test) = stratified_split(labels, config.train_fraction, seed);
    if test.is_empty() {
        return Err(Error::DegenerateTask("no test rows".into()));
    }

    let x_train = embeddings.select(Axis(0), &train);
    let mean = x_train.mean_axis(Axis(0)).expect("nonempty");
    let std = x_train.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let standardize = |x: Array2<f64>| (x - &mean) / &std;
    let x_train = standardize(x_train);
    let x_test = standardize(embeddings.select(Axis(0), &test));

    let (d, k, n) = (embeddings.ncols(), classes.len(), train.len());
    let mut onehot = Array2::<f64>::zeros((n, k));
    for (i, &r) in train.iter().enumerate() {
        onehot[[i, class_of(r)]] = 1.0;
    }
    let mut w = Array2::<f64>::zeros((d, k));
    let mut b = Array1::<f64>::zeros(k);
    let mut opt = Adam::new(config.lr, config.l2);
    for _ in 0..config.iterations {
        let mut p = x_train.dot(&w) + &b;
        softmax_rows(&mut p);
        let delta = (p - &onehot) / n as f64;
        let gw = x_train.t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        opt.step(
            vec![w.as_slice_mut().expect("contiguous"), b.as_slice_mut().expect("contiguous")],
            vec![gw.as_slice().expect("contiguous"), gb.as_slice().expect("contiguous")],
        );
    }
    let scores = x_test.dot(&w) + &b;
    let correct = test
        .iter()
        .enumerate()
        .filter(|&(i, &r)| {
            let row = scores.row(i);
            let pred = (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            pred == class_of(r)
        })
        .count();
    // Single-label multi-class: micro-F1 equals accuracy.
    Ok(correct as f64 / test.len() as f64)
}
