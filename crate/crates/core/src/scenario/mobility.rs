//! Sub-network placement and movement.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::config::{DeploymentConfig, MobilityModel};
use crate::error::{Error, Result};

pub type Point = [f64; 2];

const PLACEMENT_DRAWS_PER_SN: usize = 20_000;

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// A closed polyline traversed at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub vertices: Vec<Point>,
}

impl Lane {
    pub fn length(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| distance(self.vertices[i], self.vertices[(i + 1) % n]))
            .sum()
    }

    /// Position at arc length `s`, wrapping at the end of the loop.
    pub fn point_at(&self, s: f64) -> Point {
        let total = self.length();
        let mut s = s.rem_euclid(total);
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let seg = distance(a, b);
            if s <= seg || i == n - 1 {
                let f = if seg > 0.0 { (s / seg).min(1.0) } else { 0.0 };
                return [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
            }
            s -= seg;
        }
        self.vertices[0]
    }
}

/// Alleys around the blocks of a 4×2 grid laid into the area; each block
/// perimeter is one lane.
pub fn alley_lanes(area: [f64; 2]) -> Vec<Lane> {
    let (nx, ny) = (4usize, 2usize);
    let margin = 0.05 * area[0].min(area[1]);
    let xs: Vec<f64> = (0..=nx)
        .map(|i| margin + (area[0] - 2.0 * margin) * i as f64 / nx as f64)
        .collect();
    let ys: Vec<f64> = (0..=ny)
        .map(|j| margin + (area[1] - 2.0 * margin) * j as f64 / ny as f64)
        .collect();
    let mut lanes = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            lanes.push(Lane {
                vertices: vec![
                    [xs[i], ys[j]],
                    [xs[i + 1], ys[j]],
                    [xs[i + 1], ys[j + 1]],
                    [xs[i], ys[j + 1]],
                ],
            });
        }
    }
    lanes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePosition {
    pub lane: usize,
    pub arc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityState {
    pub area: [f64; 2],
    pub speed: f64,
    pub min_distance: f64,
    pub positions: Vec<Point>,
    pub headings: Vec<f64>,
    /// Per sub-network, per SA pair offset from the sub-network center.
    pub sa_offsets: Vec<Vec<Point>>,
    pub lanes: Vec<Lane>,
    pub lane_positions: Vec<LanePosition>,
}

fn disc_point<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Point {
    // Uniform on the disc: radius ∝ sqrt(U).
    let rho = radius * rng.random::<f64>().sqrt();
    let phi = rng.random::<f64>() * TAU;
    [rho * phi.cos(), rho * phi.sin()]
}

fn sample_offsets<R: Rng + ?Sized>(rng: &mut R, cfg: &DeploymentConfig) -> Vec<Vec<Point>> {
    (0..cfg.n_subnetworks)
        .map(|_| {
            (0..cfg.sa_pairs_per_sn)
                .map(|_| disc_point(rng, cfg.sn_radius))
                .collect()
        })
        .collect()
}

/// Place sub-network centers uniformly in the area with pairwise distance at
/// least `min_distance`, then draw SA offsets as a binomial point process on
/// each sub-network disc.
pub fn deploy<R: Rng + ?Sized>(cfg: &DeploymentConfig, rng: &mut R) -> Result<MobilityState> {
    cfg.validate()?;
    let mut positions: Vec<Point> = Vec::with_capacity(cfg.n_subnetworks);
    for _ in 0..cfg.n_subnetworks {
        let mut placed = false;
        for _ in 0..PLACEMENT_DRAWS_PER_SN {
            let p = [
                rng.random::<f64>() * cfg.area[0],
                rng.random::<f64>() * cfg.area[1],
            ];
            if positions
                .iter()
                .all(|&q| distance(p, q) >= cfg.min_distance)
            {
                positions.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement {
                requested: cfg.n_subnetworks,
                placed: positions.len(),
                min_distance: cfg.min_distance,
                attempts: PLACEMENT_DRAWS_PER_SN,
            });
        }
    }
    let headings = (0..cfg.n_subnetworks)
        .map(|_| rng.random::<f64>() * TAU)
        .collect();
    let sa_offsets = sample_offsets(rng, cfg);
    Ok(MobilityState {
        area: cfg.area,
        speed: cfg.speed,
        min_distance: cfg.min_distance,
        positions,
        headings,
        sa_offsets,
        lanes: Vec::new(),
        lane_positions: Vec::new(),
    })
}

/// Place sub-networks on alley lanes, assigned round-robin and spread evenly
/// along each lane.
pub fn deploy_on_alleys<R: Rng + ?Sized>(
    cfg: &DeploymentConfig,
    rng: &mut R,
) -> Result<MobilityState> {
    cfg.validate()?;
    let lanes = alley_lanes(cfg.area);
    let n = cfg.n_subnetworks;
    let per_lane: Vec<usize> = (0..lanes.len())
        .map(|l| (n + lanes.len() - 1 - l) / lanes.len())
        .collect();
    let mut lane_positions = Vec::with_capacity(n);
    let mut rank = vec![0usize; lanes.len()];
    for i in 0..n {
        let lane = i % lanes.len();
        let len = lanes[lane].length();
        let arc = len * rank[lane] as f64 / per_lane[lane].max(1) as f64;
        rank[lane] += 1;
        lane_positions.push(LanePosition { lane, arc });
    }
    let positions = lane_positions
        .iter()
        .map(|lp| lanes[lp.lane].point_at(lp.arc))
        .collect();
    let sa_offsets = sample_offsets(rng, cfg);
    Ok(MobilityState {
        area: cfg.area,
        speed: cfg.speed,
        min_distance: cfg.min_distance,
        positions,
        headings: vec![0.0; n],
        sa_offsets,
        lanes,
        lane_positions,
    })
}

impl MobilityState {
    /// Position of SA pair `sa` of sub-network `sn`.
    pub fn sa_position(&self, sn: usize, sa: usize) -> Point {
        let c = self.positions[sn];
        let o = self.sa_offsets[sn][sa];
        [c[0] + o[0], c[1] + o[1]]
    }

    fn in_area(&self, p: Point) -> bool {
        p[0] >= 0.0 && p[0] <= self.area[0] && p[1] >= 0.0 && p[1] <= self.area[1]
    }

    fn clear_of_others(&self, i: usize, p: Point) -> bool {
        self.positions
            .iter()
            .enumerate()
            .all(|(j, &q)| j == i || distance(p, q) >= self.min_distance)
    }

    /// Advance every sub-network by `speed·dt`.
    pub fn step<R: Rng + ?Sized>(&mut self, model: MobilityModel, dt: f64, rng: &mut R) {
        assert!(dt > 0.0, "mobility step needs dt > 0");
        let step = self.speed * dt;
        if step == 0.0 {
            return;
        }
        match model {
            MobilityModel::Rdmm => self.step_rdmm(step, rng),
            MobilityModel::Alley => self.step_alley(step),
        }
    }

    fn step_rdmm<R: Rng + ?Sized>(&mut self, step: f64, rng: &mut R) {
        for i in 0..self.positions.len() {
            let p = self.positions[i];
            let mut th = self.headings[i];
            let mut next = [p[0] + step * th.cos(), p[1] + step * th.sin()];
            if next[0] < 0.0 || next[0] > self.area[0] {
                th = std::f64::consts::PI - th;
            }
            if next[1] < 0.0 || next[1] > self.area[1] {
                th = -th;
            }
            th = th.rem_euclid(TAU);
            if th != self.headings[i] {
                next = [p[0] + step * th.cos(), p[1] + step * th.sin()];
            }
            if self.in_area(next) && self.clear_of_others(i, next) {
                self.positions[i] = next;
                self.headings[i] = th;
            } else {
                // Blocked by a neighbour (or a corner): hold and turn.
                self.headings[i] = rng.random::<f64>() * TAU;
            }
        }
    }

    fn step_alley(&mut self, step: f64) {
        for (i, lp) in self.lane_positions.iter_mut().enumerate() {
            let lane = &self.lanes[lp.lane];
            lp.arc = (lp.arc + step).rem_euclid(lane.length());
            self.positions[i] = lane.point_at(lp.arc);
        }
    }
}
