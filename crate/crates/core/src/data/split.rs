use std::collections::BTreeSet;

use crate::data::scene::{Scene, Split};
use crate::error::{Error, Result};

/// Distinct video ids in `scenes`, sorted.
pub fn videos(scenes: &[Scene]) -> Vec<String> {
    scenes.iter().map(|s| s.video.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Holds out every scene of `held_out` for testing and trains on the rest.
pub fn leave_one_out(scenes: Vec<Scene>, held_out: &str) -> Result<(Vec<Scene>, Vec<Scene>)> {
    let vids = videos(&scenes);
    if vids.len() < 2 {
        return Err(Error::Data(format!("leave-one-out needs at least 2 videos, got {}", vids.len())));
    }
    if !vids.iter().any(|v| v == held_out) {
        return Err(Error::Data(format!("unknown video `{held_out}` (have {})", vids.join(", "))));
    }
    let (mut test, mut train): (Vec<Scene>, Vec<Scene>) = scenes.into_iter().partition(|s| s.video == held_out);
    test.iter_mut().for_each(|s| s.split = Split::Test);
    train.iter_mut().for_each(|s| s.split = Split::Train);
    Ok((train, test))
}

/// Deterministic split of a single collection: every `k`-th scene (offset
/// `k − 1`) goes to the test side.
pub fn every_kth(scenes: Vec<Scene>, k: usize) -> (Vec<Scene>, Vec<Scene>) {
    let k = k.max(2);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, mut s) in scenes.into_iter().enumerate() {
        if i % k == k - 1 {
            s.split = Split::Test;
            test.push(s);
        } else {
            s.split = Split::Train;
            train.push(s);
        }
    }
    (train, test)
}
