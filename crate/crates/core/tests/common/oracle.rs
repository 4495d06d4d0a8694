//! Naive reference implementations. They enumerate pairs and risk tables
//! directly and share no code with the library.

#![allow(dead_code)]

/// Product-limit survival at `t`, recounting the risk set at every event time.
pub fn km_at(times: &[f64], events: &[bool], t: f64) -> f64 {
    let mut distinct: Vec<f64> = Vec::new();
    for (i, &ti) in times.iter().enumerate() {
        if events[i] && ti <= t && !distinct.contains(&ti) {
            distinct.push(ti);
        }
    }
    let mut s = 1.0;
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for tj in distinct {
        let n = times.iter().filter(|&&x| x >= tj).count() as f64;
        let d = times
            .iter()
            .zip(events)
            .filter(|(x, e)| **x == tj && **e)
            .count() as f64;
        s *= 1.0 - d / n;
    }
    s
}

pub fn concordance(risk: &[f64], times: &[f64], events: &[bool]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..risk.len() {
        for j in 0..risk.len() {
            if events[i] && times[i] < times[j] {
                den += 1.0;
                if risk[i] > risk[j] {
                    num += 1.0;
                }
            }
        }
    }
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

fn curve_at(grid: &[f64], row: &[f64], u: f64) -> f64 {
    let mut v = 1.0;
    for (g, s) in grid.iter().zip(row) {
        if *g <= u {
            v = *s;
        }
    }
    v
}

pub fn ibs(
    surv: &[Vec<f64>],
    grid: &[f64],
    times: &[f64],
    events: &[bool],
    train_times: &[f64],
    train_events: &[bool],
    tau: f64,
) -> f64 {
    let cens: Vec<bool> = train_events.iter().map(|e| !e).collect();
    let g = |t: f64| km_at(train_times, &cens, t).max(0.05);
    let mut nodes = vec![0.0];
    for &x in grid {
        if x > 0.0 && x < tau {
            nodes.push(x);
        }
    }
    nodes.push(tau);
    let bs = |u: f64| {
        let mut acc = 0.0;
        for i in 0..times.len() {
            let s = curve_at(grid, &surv[i], u);
            if times[i] <= u && events[i] {
                acc += s * s / g(times[i]);
            }
            if times[i] > u {
                acc += (1.0 - s) * (1.0 - s) / g(u);
            }
        }
        acc / times.len() as f64
    };
    let mut area = 0.0;
    for k in 1..nodes.len() {
        area += (nodes[k] - nodes[k - 1]) * (bs(nodes[k]) + bs(nodes[k - 1])) / 2.0;
    }
    area / tau
}

pub fn dcal(s: &[f64], events: &[bool]) -> f64 {
    let mut bins = [0.0; 10];
    for i in 0..s.len() {
        if events[i] {
            let mut placed = false;
            for (b, m) in bins.iter_mut().enumerate() {
                let lo = b as f64 / 10.0;
                let hi = (b + 1) as f64 / 10.0;
                if s[i] >= lo && (s[i] < hi || b == 9) && !placed {
                    *m += 1.0;
                    placed = true;
                }
            }
        } else if s[i] == 0.0 {
            bins[0] += 1.0;
        } else {
            for (b, m) in bins.iter_mut().enumerate() {
                let lo = b as f64 / 10.0;
                let hi = (b + 1) as f64 / 10.0;
                let top = if s[i] < hi { s[i] } else { hi };
                if top > lo {
                    *m += (top - lo) / s[i];
                }
            }
        }
    }
    let e = s.len() as f64 / 10.0;
    bins.iter().map(|o| (o - e) * (o - e) / e).sum()
}

/// Restricted mean of the KM curve up to `tau` by summing rectangles
/// between consecutive distinct observed times.
fn restricted_mean(times: &[f64], events: &[bool], tau: f64) -> f64 {
    let mut pts: Vec<f64> = times.iter().copied().filter(|&t| t < tau).collect();
    pts.push(0.0);
    pts.push(tau);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let mut area = 0.0;
    for k in 1..pts.len() {
        area += km_at(times, events, pts[k - 1]) * (pts[k] - pts[k - 1]);
    }
    area
}

pub fn mae_po(pred: &[f64], times: &[f64], events: &[bool]) -> Option<f64> {
    let n = times.len();
    let tau = times.iter().cloned().fold(0.0, f64::max);
    let full = restricted_mean(times, events, tau);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        if events[i] {
            num += (pred[i] - times[i]).abs();
            den += 1.0;
        } else {
            let t: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| times[j]).collect();
            let e: Vec<bool> = (0..n).filter(|&j| j != i).map(|j| events[j]).collect();
            let pv = n as f64 * full - (n - 1) as f64 * restricted_mean(&t, &e, tau);
            let w = 1.0 - km_at(times, events, times[i]);
            num += w * (pred[i] - pv).abs();
            den += w;
        }
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

pub fn log_rank(t1: &[f64], e1: &[bool], t2: &[f64]) -> f64 {
    let mut event_times: Vec<f64> = Vec::new();
    for (t, e) in t1.iter().zip(e1) {
        if *e {
            event_times.push(*t);
        }
    }
    event_times.extend_from_slice(t2);
    event_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    event_times.dedup();
    let (mut oe, mut v) = (0.0, 0.0);
    for t in event_times {
        let n1 = t1.iter().filter(|&&x| x >= t).count() as f64;
        let n2 = t2.iter().filter(|&&x| x >= t).count() as f64;
        let d1 = t1.iter().zip(e1).filter(|(x, e)| **x == t && **e).count() as f64;
        let d2 = t2.iter().filter(|&&x| x == t).count() as f64;
        let (n, d) = (n1 + n2, d1 + d2);
        oe += d1 - d * n1 / n;
        if n > 1.0 {
            v += d * n1 * n2 * (n - d) / (n * n * (n - 1.0));
        }
    }
    if v > 0.0 {
        oe * oe / v
    } else {
        0.0
    }
}
