//! A deliberately plain re-simulation of synchronous ring rounds, used as
//! an oracle for the engine. Judgments are 0/1, confidences follow the
//! pooled margin.

#![allow(dead_code)]

pub const EPS: f64 = 1e-9;

/// In-neighbors of node `i` on an `n`-ring with `m` neighbors: alternate
/// +1, -1, +2, -2, ... until `m` are taken.
pub fn ring_in_neighbors(n: usize, m: usize, i: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut step = 1;
    while out.len() < m {
        out.push((i + step) % n);
        if out.len() < m {
            out.push((i + n - step % n) % n);
        }
        step += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaiveState {
    pub y: Vec<u8>,
    pub p: Vec<f64>,
}

/// All states from round 0 until the first unanimous round or `t_max`.
pub fn naive_run(y0: &[u8], p0: &[f64], m: usize, alpha: f64, t_max: usize) -> Vec<NaiveState> {
    let n = y0.len();
    let mut states = vec![NaiveState {
        y: y0.to_vec(),
        p: p0.to_vec(),
    }];
    for _ in 0..t_max {
        let cur = states.last().unwrap().clone();
        if cur.y.iter().all(|&v| v == cur.y[0]) {
            break;
        }
        let mut next = NaiveState {
            y: vec![0; n],
            p: vec![0.0; n],
        };
        for i in 0..n {
            let mut votes = 0.0;
            let mut mass = 0.0;
            for j in ring_in_neighbors(n, m, i) {
                votes += cur.p[j] * cur.y[j] as f64;
                mass += cur.p[j];
            }
            let num = alpha * cur.p[i] * cur.y[i] as f64 + (1.0 - alpha) * votes;
            let den = alpha * cur.p[i] + (1.0 - alpha) * mass + EPS;
            let s = num / den;
            next.y[i] = if s >= 0.5 { 1 } else { 0 };
            next.p[i] = if s > 1.0 - s { s } else { 1.0 - s };
        }
        states.push(next);
    }
    states
}
