//! Extends tracking past the model window by chaining overlapping windows.

use super::{PointTracker, Track, TrackSet, TrackerError};
use crate::probmodel::TrackDistribution;
use crate::sampling::Query;
use nalgebra::DMatrix;

/// Windows of length `s` at stride `s − 1` covering `start .. start + len`;
/// the last one may be shorter.
pub fn window_starts(start: usize, len: usize, s: usize) -> Vec<(usize, usize)> {
    assert!(s >= 2 || len <= s, "chaining needs windows of at least 2 frames");
    let end = start + len;
    let mut out = Vec::new();
    let mut ws = start;
    loop {
        let we = (ws + s).min(end);
        out.push((ws, we - ws));
        if we == end {
            return out;
        }
        ws = we - 1;
    }
}

/// Tracks `queries` across `start .. start + len` frames, which may exceed
/// the tracker window.
///
/// Each query is tracked in the first window holding its frame; the tracks
/// are then re-queried at the shared frame of each neighbouring window, in
/// both directions. A frame's position, visibility, features and scale
/// entries come from the first window that produced it.
pub fn chain_windows(
    tracker: &mut dyn PointTracker,
    start: usize,
    len: usize,
    queries: &[Query],
) -> Result<TrackSet, TrackerError> {
    if len <= tracker.window() {
        return tracker.track(start, len, queries);
    }
    super::check_window(len, tracker.n_frames(), start, len, queries)?;
    let windows = window_starts(start, len, tracker.window());
    let host_of = |f: usize| windows.iter().position(|&(ws, wl)| f >= ws && f < ws + wl).expect("frame inside chain");

    let mut out: Vec<Option<Track>> = vec![None; queries.len()];
    for h in 0..windows.len() {
        let members: Vec<usize> = (0..queries.len()).filter(|&i| host_of(queries[i].frame) == h).collect();
        if members.is_empty() {
            continue;
        }
        let group: Vec<Query> = members.iter().map(|&i| queries[i]).collect();
        let host = tracker.track(windows[h].0, windows[h].1, &group)?;

        let mut parts: Vec<TrackSet> = vec![host.clone()];
        for order in [(h + 1..windows.len()).collect::<Vec<_>>(), (0..h).rev().collect()] {
            let mut prev = host.clone();
            for w in order {
                let (ws, wl) = windows[w];
                let shared = if ws >= prev.start { ws } else { ws + wl - 1 };
                let s = prev.local(shared).expect("neighbouring windows share a frame");
                let requeries: Vec<Query> = prev
                    .tracks
                    .iter()
                    .map(|t| Query {
                        frame: shared,
                        pixel: t.positions[s],
                        point: t.query.point,
                    })
                    .collect();
                let next = tracker.track(ws, wl, &requeries)?;
                parts.push(next.clone());
                prev = next;
            }
        }

        // first producer of each frame wins; `parts` is in processing order
        let owner: Vec<(usize, usize)> = (start..start + len)
            .map(|f| {
                let p = parts.iter().position(|ts| ts.local(f).is_some()).expect("frame covered");
                (p, parts[p].local(f).unwrap())
            })
            .collect();
        for (k, &qi) in members.iter().enumerate() {
            out[qi] = Some(merge(&parts, &owner, k, queries[qi]));
        }
    }
    Ok(TrackSet {
        start,
        len,
        tracks: out.into_iter().map(|t| t.expect("every query hosted")).collect(),
    })
}

fn merge(parts: &[TrackSet], owner: &[(usize, usize)], k: usize, query: Query) -> Track {
    let n = owner.len();
    let pick = |f: usize| &parts[owner[f].0].tracks[k];
    let positions: Vec<_> = (0..n).map(|f| pick(f).positions[owner[f].1]).collect();
    let visibility = (0..n).map(|f| pick(f).visibility[owner[f].1]).collect();
    let dim = parts[0].tracks[k].features.ncols();
    let features = DMatrix::from_fn(n, dim, |f, d| pick(f).features[(owner[f].1, d)]);
    // scale entries only couple frames that came from the same window
    let block = |m: fn(&TrackDistribution) -> &DMatrix<f64>| {
        DMatrix::from_fn(n, n, |i, j| {
            if owner[i].0 == owner[j].0 {
                m(&pick(i).dist)[(owner[i].1, owner[j].1)]
            } else {
                0.0
            }
        })
    };
    let sigma_a = block(|d| &d.sigma_a);
    let sigma_b = block(|d| &d.sigma_b);
    let host = &parts[0].tracks[k];
    Track {
        query: Query {
            point: host.query.point,
            ..query
        },
        dist: TrackDistribution {
            mu_a: positions.iter().map(|p| p.x).collect::<Vec<_>>().into(),
            mu_b: positions.iter().map(|p| p.y).collect::<Vec<_>>().into(),
            sigma_a,
            sigma_b,
        },
        positions,
        visibility,
        features,
        dyn_score: 0.0,
        gt_dynamic: host.gt_dynamic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneConfig};
    use crate::tracker::{OracleConfig, OracleTracker};

    #[test]
    fn window_layout() {
        assert_eq!(window_starts(0, 12, 8), vec![(0, 8), (7, 5)]);
        assert_eq!(window_starts(3, 8, 8), vec![(3, 8)]);
        assert_eq!(window_starts(0, 20, 8), vec![(0, 8), (7, 8), (14, 6)]);
        assert_eq!(window_starts(0, 15, 8), vec![(0, 8), (7, 8)]);
    }

    fn oracle(sigma: f64) -> OracleTracker {
        let scene = generate_scene(
            &SceneConfig {
                n_frames: 14,
                n_static: 300,
                ..SceneConfig::default()
            },
            5,
        )
        .unwrap();
        OracleTracker::new(
            scene,
            OracleConfig {
                sigma_px: sigma,
                ..OracleConfig::default()
            },
        )
    }

    #[test]
    fn short_chain_equals_single_window() {
        let mut t = oracle(0.3);
        let q = t.keypoints(3, 64, 4).unwrap();
        assert_eq!(chain_windows(&mut t, 0, 8, &q).unwrap(), t.track(0, 8, &q).unwrap());
    }

    #[test]
    fn chained_oracle_matches_ground_truth() {
        let mut t = oracle(0.0);
        for host in [0, 7, 10] {
            let q = t.keypoints(host, 64, 4).unwrap();
            let ts = chain_windows(&mut t, 0, 12, &q).unwrap();
            assert_eq!((ts.start, ts.len), (0, 12));
            for tr in &ts.tracks {
                let id = tr.query.point.unwrap();
                assert_eq!(tr.positions[host], tr.query.pixel);
                for f in 0..12 {
                    assert!((tr.positions[f] - t.ground_truth().projections[id][f]).norm() < 1e-9);
                }
                assert!(nalgebra::Cholesky::new(tr.dist.sigma_a.clone()).is_some());
            }
        }
    }

    #[test]
    fn chained_noisy_oracle_stays_within_noise() {
        let mut t = oracle(0.25);
        let q = t.keypoints(2, 64, 4).unwrap();
        let ts = chain_windows(&mut t, 0, 12, &q).unwrap();
        let (mut sum, mut n) = (0.0, 0);
        for tr in &ts.tracks {
            let id = tr.query.point.unwrap();
            for f in 0..12 {
                sum += (tr.positions[f] - t.ground_truth().projections[id][f]).norm_squared();
                n += 2;
            }
        }
        assert!((sum / n as f64).sqrt() < 0.25 * 1.2);
    }
}
