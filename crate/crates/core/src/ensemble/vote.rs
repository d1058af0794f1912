use ndarray::Axis;

use super::PosteriorSet;
use crate::corpus::{argmax, NUM_CLASSES};

/// Majority over member argmaxes; ties go to the larger summed posterior,
/// then to the lowest class index.
pub fn hard_vote(ps: &PosteriorSet) -> Vec<usize> {
    ps.posteriors
        .axis_iter(Axis(0))
        .map(|members| {
            let mut votes = [0usize; NUM_CLASSES];
            let mut mass = [0.0f64; NUM_CLASSES];
            for row in members.axis_iter(Axis(0)) {
                let row = row.to_vec();
                votes[argmax(&row)] += 1;
                for c in 0..NUM_CLASSES {
                    mass[c] += row[c];
                }
            }
            let top = *votes.iter().max().unwrap();
            let mut best: Option<usize> = None;
            for c in (0..NUM_CLASSES).filter(|&c| votes[c] == top) {
                if best.is_none_or(|b| mass[c] > mass[b]) {
                    best = Some(c);
                }
            }
            best.unwrap()
        })
        .collect()
}

/// Argmax of the mean posterior, lowest index on ties.
pub fn soft_vote(ps: &PosteriorSet) -> Vec<usize> {
    let mean = ps
        .posteriors
        .mean_axis(Axis(1))
        .expect("at least one member");
    mean.rows()
        .into_iter()
        .map(|r| argmax(&r.to_vec()))
        .collect()
}
