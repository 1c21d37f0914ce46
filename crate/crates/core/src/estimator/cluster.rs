//! Sequential distance-based clustering of per-pose position estimates.
//!
//! Reliable estimates of the true user position concentrate in one dense
//! cluster; estimates from poses that saw little or no signal scatter into
//! small ones. The refinement stage keeps only the largest cluster.

use nalgebra::Vector3;

use crate::estimator::{CoarseEstimate, EstimatorError};

/// One cluster: member indices (into the estimate list, i.e. measurement
/// order) and the mean of the members' Cartesian estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub members: Vec<usize>,
    pub center: Vector3<f64>,
}

/// Result of the single-pass clustering sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    clusters: Vec<Cluster>,
    threshold: f64,
}

impl ClusterState {
    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.members.len()).collect()
    }
}

/// Single-pass sequential clustering: the first estimate seeds the first
/// cluster; each subsequent estimate joins the nearest cluster center if it
/// is within `epsilon`, updating that center to the member mean, and opens
/// a new cluster otherwise.
pub fn cluster_estimates(
    estimates: &[CoarseEstimate],
    epsilon: f64,
) -> Result<ClusterState, EstimatorError> {
    if estimates.is_empty() {
        return Err(EstimatorError::NoEstimates);
    }
    if !(epsilon > 0.0) {
        return Err(EstimatorError::InvalidThreshold(epsilon));
    }
    let mut clusters = vec![Cluster {
        members: vec![0],
        center: estimates[0].cartesian,
    }];
    for (m, estimate) in estimates.iter().enumerate().skip(1) {
        let point = estimate.cartesian;
        let (best, distance) = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (i, (point - c.center).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one cluster exists");
        if distance <= epsilon {
            let cluster = &mut clusters[best];
            cluster.members.push(m);
            // Center is the mean of the members, recomputed per update.
            let sum: Vector3<f64> = cluster
                .members
                .iter()
                .map(|&j| estimates[j].cartesian)
                .sum();
            cluster.center = sum / cluster.members.len() as f64;
        } else {
            clusters.push(Cluster {
                members: vec![m],
                center: point,
            });
        }
    }
    Ok(ClusterState {
        clusters,
        threshold: epsilon,
    })
}

/// The cluster with the most members; cardinality ties go to the earliest
/// created cluster.
pub fn select_largest_cluster(state: &ClusterState) -> (&Cluster, usize) {
    let mut best = 0;
    for (i, cluster) in state.clusters.iter().enumerate() {
        if cluster.members.len() > state.clusters[best].members.len() {
            best = i;
        }
    }
    (&state.clusters[best], best)
}
