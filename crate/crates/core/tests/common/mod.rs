//! Independent oracles shared by the integration suites. None of these call
//! the solver's enumeration or continuation code.
#![allow(dead_code)]

use qre_core::{logit_response, Game, RationalityVector, StrategyProfile};

pub fn betas(b: &[f64]) -> RationalityVector {
    RationalityVector::new(b.to_vec()).unwrap()
}

pub fn mixed2(p: f64, c: f64) -> StrategyProfile {
    StrategyProfile::new(vec![vec![p, 1.0 - p], vec![c, 1.0 - c]]).unwrap()
}

/// Joint logit response built from the per-player public API.
pub fn response(game: &Game, q: &StrategyProfile, b: &RationalityVector) -> StrategyProfile {
    let mix = (0..game.num_players())
        .map(|i| logit_response(game, q, i, b.as_slice()[i]).unwrap())
        .collect();
    StrategyProfile::new(mix).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Utility advantage of strategy 0 over strategy 1 for `player` in a 2×2
/// game when the opponent plays strategy 0 with probability `other`.
fn gap(game: &Game, player: usize, other: f64) -> f64 {
    let u = |own: usize, opp: usize| {
        let pure = if player == 0 { [own, opp] } else { [opp, own] };
        game.utility(player, &pure)
    };
    other * (u(0, 0) - u(1, 0)) + (1.0 - other) * (u(0, 1) - u(1, 1))
}

/// All logit equilibria of a 2×2 game as `(q_row(s1), q_col(s1))`, found by
/// bracketing the roots of `p ↦ σ(β_r·gap_r(σ(β_c·gap_c(p)))) − p` on a fine
/// grid and bisecting each sign change.
pub fn roots_2x2(game: &Game, b: &[f64]) -> Vec<(f64, f64)> {
    let col = |p: f64| sigmoid(b[1] * gap(game, 1, p));
    let h = |p: f64| sigmoid(b[0] * gap(game, 0, col(p))) - p;
    const N: usize = 20_000;
    let mut out = Vec::new();
    let mut prev = (0.0, h(0.0));
    for k in 1..=N {
        let x = k as f64 / N as f64;
        let cur = (x, h(x));
        if cur.1 == 0.0 {
            out.push(x);
        } else if prev.1 * cur.1 < 0.0 {
            let (mut lo, mut hi) = (prev.0, cur.0);
            let flo = prev.1;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if (h(mid) < 0.0) == (flo < 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        prev = cur;
    }
    out.into_iter().map(|p| (p, col(p))).collect()
}

/// End points of undamped best-response iteration from an `n × n` grid of
/// starts, deduplicated within `radius`.
pub fn iteration_attractors(game: &Game, b: &RationalityVector, n: usize, radius: f64) -> Vec<StrategyProfile> {
    let mut found: Vec<StrategyProfile> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let mut q = mixed2((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
            for _ in 0..20_000 {
                let r = response(game, &q, b);
                let d = r.sup_distance(&q);
                q = r;
                if d < 1e-14 {
                    break;
                }
            }
            let r = response(game, &q, b);
            if r.sup_distance(&q) < 1e-10 && found.iter().all(|f| f.sup_distance(&q) > radius) {
                found.push(q);
            }
        }
    }
    found
}

/// `det(M − Id)` for a two-player game with the response Jacobian taken by
/// central differences of `logit_response` in reduced coordinates.
pub fn fd_fold_indicator(game: &Game, q: &StrategyProfile, b: &RationalityVector) -> f64 {
    let counts = game.strategy_counts().to_vec();
    let block = |i: usize, j: usize| -> Vec<Vec<f64>> {
        let (ni, nj) = (counts[i] - 1, counts[j] - 1);
        let mut out = vec![vec![0.0; nj]; ni];
        for m in 0..nj {
            let h = 1e-6f64.min(0.5 * q.mixture(j)[m].min(q.mixture(j)[counts[j] - 1]));
            let shift = |s: f64| {
                let mut mix = q.mixtures().to_vec();
                mix[j][m] += s;
                mix[j][counts[j] - 1] -= s;
                response(game, &StrategyProfile::new(mix).unwrap(), b)
            };
            let (up, dn) = (shift(h), shift(-h));
            for k in 0..ni {
                out[k][m] = (up.mixture(i)[k] - dn.mixture(i)[k]) / (2.0 * h);
            }
        }
        out
    };
    let a = block(0, 1);
    let c = block(1, 0);
    let n = a.len();
    let mut m = vec![vec![0.0; n]; n];
    for r in 0..n {
        for s in 0..n {
            m[r][s] = (0..c.len()).map(|k| a[r][k] * c[k][s]).sum::<f64>() - if r == s { 1.0 } else { 0.0 };
        }
    }
    determinant(m)
}

fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}
