//! Independent oracles shared by the integration tests. None of these call
//! the library code they are used to check.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::f64::consts::PI;

/// Composite Simpson rule with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Risk-neutral expectation `e^{-rT} E[(S_T - K)^+]` integrated over the
/// standard normal driver, restricted to the exercise region.
pub fn bsm_call_quadrature(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> f64 {
    let sd = sigma * t.sqrt();
    let drift = (r - 0.5 * sigma * sigma) * t;
    let z_star = ((k / s).ln() - drift) / sd;
    let lo = z_star.max(-14.0);
    let hi = sd + 14.0;
    if lo >= hi {
        return 0.0;
    }
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    let integrand = |z: f64| (s * (drift + sd * z).exp() - k).max(0.0) * phi(z);
    (-r * t).exp() * simpson(integrand, lo, hi, 4000)
}

/// `sqrt((1/tau) * integral_0^tau E[v(s)] ds)` with `dm/ds = kappa (theta - m)`,
/// integrated jointly with its running integral by classical RK4.
pub fn heston_rho_ode(kappa: f64, theta: f64, v0: f64, tau: f64, steps: usize) -> f64 {
    let h = tau / steps as f64;
    let f = |m: f64| kappa * (theta - m);
    let (mut m, mut integral) = (v0, 0.0);
    for _ in 0..steps {
        let k1 = f(m);
        let k2 = f(m + 0.5 * h * k1);
        let k3 = f(m + 0.5 * h * k2);
        let k4 = f(m + h * k3);
        // augmented system: the running integral has derivative m
        let i1 = m;
        let i2 = m + 0.5 * h * k1;
        let i3 = m + 0.5 * h * k2;
        let i4 = m + h * k3;
        integral += h / 6.0 * (i1 + 2.0 * i2 + 2.0 * i3 + i4);
        m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    (integral / tau).sqrt()
}

/// Textbook insertion sort.
pub fn insertion_sort(v: &mut [f64]) {
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
}

/// Exact rational `num / den` with `den > 0`, compared by cross multiplication.
#[derive(Debug, Clone, Copy)]
pub struct Ratio {
    pub num: i128,
    pub den: i128,
}

impl Ratio {
    pub fn cmp(&self, o: &Ratio) -> Ordering {
        (self.num * o.den).cmp(&(o.num * self.den))
    }
}

/// Brute-force regression tree on integer targets.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleTree {
    Leaf { mean: f64 },
    Split { feature: usize, threshold: f64, left: Box<OracleTree>, right: Box<OracleTree> },
}

impl OracleTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            OracleTree::Leaf { mean } => *mean,
            OracleTree::Split { feature, threshold, left, right } => {
                if x[*feature] < *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

pub struct BruteOutcome {
    pub tree: OracleTree,
    /// True when two different row partitions tie exactly for the best score
    /// at some node; the float implementation cannot be expected to agree then.
    pub ambiguous: bool,
}

/// Exhaustive search at every node over all (feature, threshold) pairs,
/// scoring `sum_l^2/n_l + sum_r^2/n_r` exactly. Ties go to the lowest feature,
/// then the lowest threshold. A split needs a strictly positive gain and at
/// least `mcw` rows on each side.
pub fn brute_force_tree(x: &[Vec<f64>], y: &[i64], rows: &[usize], depth: usize, mcw: usize) -> BruteOutcome {
    let sum: i128 = rows.iter().map(|&i| y[i] as i128).sum();
    let n = rows.len() as i128;
    let leaf = OracleTree::Leaf {
        mean: sum as f64 / n as f64,
    };
    if depth == 0 || rows.len() < 2 {
        return BruteOutcome { tree: leaf, ambiguous: false };
    }
    let parent = Ratio { num: sum * sum, den: n };
    let n_feat = x[0].len();
    // (score, feature, threshold, left rows)
    let mut best: Option<(Ratio, usize, f64, Vec<usize>)> = None;
    // whether a different partition ties the current best exactly
    let mut ambiguous = false;
    for f in 0..n_feat {
        let mut values: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let left: Vec<usize> = rows.iter().copied().filter(|&i| x[i][f] < thr).collect();
            let (lc, rc) = (left.len(), rows.len() - left.len());
            if lc < mcw || rc < mcw {
                continue;
            }
            let ls: i128 = left.iter().map(|&i| y[i] as i128).sum();
            let rs = sum - ls;
            let score = Ratio {
                num: ls * ls * rc as i128 + rs * rs * lc as i128,
                den: lc as i128 * rc as i128,
            };
            if score.cmp(&parent) != Ordering::Greater {
                continue;
            }
            match &best {
                Some((b, _, _, bl)) => match score.cmp(b) {
                    Ordering::Greater => {
                        best = Some((score, f, thr, left));
                        ambiguous = false;
                    }
                    Ordering::Equal => {
                        // the same split seen from the other side is not a real tie
                        let right: Vec<usize> = rows.iter().copied().filter(|i| !left.contains(i)).collect();
                        if &left != bl && &right != bl {
                            ambiguous = true;
                        }
                    }
                    Ordering::Less => {}
                },
                None => best = Some((score, f, thr, left)),
            }
        }
    }
    let Some((_, feature, threshold, left_rows)) = best else {
        return BruteOutcome { tree: leaf, ambiguous };
    };
    let right_rows: Vec<usize> = rows.iter().copied().filter(|i| !left_rows.contains(i)).collect();
    let l = brute_force_tree(x, y, &left_rows, depth - 1, mcw);
    let r = brute_force_tree(x, y, &right_rows, depth - 1, mcw);
    BruteOutcome {
        tree: OracleTree::Split {
            feature,
            threshold,
            left: Box::new(l.tree),
            right: Box::new(r.tree),
        },
        ambiguous: ambiguous || l.ambiguous || r.ambiguous,
    }
}

/// Compares a fitted single tree with the oracle node by node.
pub fn same_structure(tree: &optshift::gbt::Tree, idx: usize, oracle: &OracleTree) -> bool {
    use optshift::gbt::Node;
    match (&tree.nodes[idx], oracle) {
        (Node::Leaf { .. }, OracleTree::Leaf { .. }) => true,
        (
            Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            },
            OracleTree::Split {
                feature: f,
                threshold: t,
                left: l,
                right: r,
            },
        ) => feature == f && threshold == t && same_structure(tree, *left, l) && same_structure(tree, *right, r),
        _ => false,
    }
}

/// Draws `n` integers from a small range, then shifts the last one so the sum
/// is divisible by `n`; the mean is then an integer and all residual sums exact.
pub fn integer_targets_with_integer_mean(raw: &[i64]) -> Vec<i64> {
    let mut y = raw.to_vec();
    let n = y.len() as i64;
    let s: i64 = y.iter().sum();
    let last = y.len() - 1;
    y[last] -= s.rem_euclid(n);
    y
}

/// Writes a synthetic option chain in the NSE bhavcopy layout: three
/// symbols, business days from 2019-01-01 to 2020-04-30, two monthly
/// expiries, seven strikes per expiry, calls and puts. Volatility jumps from
/// `calm_vol` to `stressed_vol` on 2020-01-01. Prices are BSM values rounded
/// to a 0.05 tick; a few cells are blanked with `-` as in real files.
pub fn write_nse_chain(path: &std::path::Path, seed: u64, calm_vol: f64, stressed_vol: f64) {
    use chrono::{Datelike, Days, NaiveDate, Weekday};
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    let rate = 0.06;
    let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(2020, 4, 30).unwrap();
    let stress_from = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let mut days = Vec::new();
    let mut d = start;
    while d <= end {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            days.push(d);
        }
        d = d + Days::new(1);
    }
    let last_thursday = |y: i32, m: u32| {
        let first_next = if m == 12 {
            NaiveDate::from_ymd_opt(y + 1, 1, 1).unwrap()
        } else {
            NaiveDate::from_ymd_opt(y, m + 1, 1).unwrap()
        };
        let mut e = first_next - Days::new(1);
        while e.weekday() != Weekday::Thu {
            e = e - Days::new(1);
        }
        e
    };
    let expiries_after = |d: NaiveDate| {
        let mut out = Vec::new();
        let (mut y, mut m) = (d.year(), d.month());
        while out.len() < 2 {
            let e = last_thursday(y, m);
            if e > d {
                out.push(e);
            }
            if m == 12 {
                y += 1;
                m = 1;
            } else {
                m += 1;
            }
        }
        out
    };
    let tick = |v: f64| (v / 0.05).round() * 0.05;
    let fmt = |d: NaiveDate| d.format("%d-%b-%Y").to_string();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record([
        "Symbol",
        "Date",
        "Expiry",
        "Option Type",
        "Strike Price",
        "Open",
        "High",
        "Low",
        "Close",
        "LTP",
        "Settle Price",
        "No. of contracts",
        "Turnover in Lacs",
        "Premium Turnover in Lacs",
        "Open Int",
        "Change in OI",
        "Underlying Value",
    ])
    .unwrap();
    for (sym, s0, step) in [("ALPHA", 1000.0, 10.0), ("BETA", 250.0, 2.5), ("GAMMA", 4000.0, 50.0)] {
        let mut s: f64 = s0;
        for (i, &day) in days.iter().enumerate() {
            let vol = if day >= stress_from { stressed_vol } else { calm_vol };
            if i > 0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                let dt = 1.0 / 255.0;
                s *= ((0.08 - 0.5 * vol * vol) * dt + vol * dt.sqrt() * z).exp();
            }
            let atm = (s / step).round() * step;
            for expiry in expiries_after(day) {
                let t = (expiry - day).num_days() as f64 / 365.0;
                for k in -3..=3 {
                    let strike = atm + k as f64 * step;
                    let call = bsm_call_quadrature(s, strike, rate, vol, t);
                    let put = call - s + strike * (-rate * t).exp();
                    for (kind, price) in [("CE", call), ("PE", put)] {
                        let close = tick(price.max(0.0));
                        let open = tick(close * (1.0 + 0.02 * (rng.random::<f64>() - 0.5)));
                        let underlying = if rng.random::<f64>() < 0.002 {
                            "-".to_string()
                        } else {
                            format!("{s:.2}")
                        };
                        w.write_record([
                            sym.to_string(),
                            fmt(day),
                            fmt(expiry),
                            kind.to_string(),
                            format!("{strike:.2}"),
                            format!("{open:.2}"),
                            format!("{:.2}", open.max(close)),
                            format!("{:.2}", open.min(close)),
                            format!("{close:.2}"),
                            format!("{close:.2}"),
                            format!("{close:.2}"),
                            "100".into(),
                            "1,234.50".into(),
                            "12.30".into(),
                            "5000".into(),
                            "-".into(),
                            underlying,
                        ])
                        .unwrap();
                    }
                }
            }
        }
    }
    w.flush().unwrap();
}
