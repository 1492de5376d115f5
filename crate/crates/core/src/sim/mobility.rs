//! Random-direction node mobility with boundary reflection.
//!
//! A node repeatedly performs *travels*: it draws a heading, a speed and
//! an exponentially distributed duration, then moves in a straight line,
//! mirroring off the walls of its current region. At the end of each
//! travel it decides whether to change mode: local nodes leave their
//! community with probability `P_r`; roaming nodes head for a community
//! with probability `P_l`, choosing it by `P_sel` and crossing over in a
//! straight transitional run at `v_trans` (or switching on the spot when
//! the travel already ended inside the chosen community).

use std::f64::consts::TAU;

use rand::Rng;

use crate::config::NetworkConfig;

/// Default integration step for contact detection: at `v_max = 15 m/s`
/// the per-step displacement stays well below the contact range.
pub const DEFAULT_DT: f64 = 0.1;

/// Movement mode of a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Free movement in the whole common area.
    Roaming,
    /// Movement confined to one community's square.
    Local(usize),
    /// Straight run toward a target point inside the chosen community.
    Transitional { target: (f64, f64), community: usize },
}

/// Kinematic state of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub pos: (f64, f64),
    pub mode: Mode,
    /// Heading in radians, in `[0, 2π)`.
    pub heading: f64,
    pub speed: f64,
    /// Absolute time at which the current travel ends.
    pub travel_end: f64,
    pub infected: bool,
}

/// Axis-aligned movement region.
#[derive(Clone, Copy, Debug)]
struct Region {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Region {
    fn common(cfg: &NetworkConfig) -> Self {
        Region { x0: 0.0, y0: 0.0, x1: cfg.l, y1: cfg.l }
    }

    fn community(cfg: &NetworkConfig, i: usize) -> Self {
        let (x0, y0, x1, y1) = cfg.community_box(i);
        Region { x0, y0, x1, y1 }
    }

    fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x0 && p.0 <= self.x1 && p.1 >= self.y0 && p.1 <= self.y1
    }
}

/// Reflects an unbounded coordinate into `[lo, hi]` by repeated
/// mirroring; returns the folded coordinate and whether the direction of
/// travel ends up reversed.
fn fold(x: f64, lo: f64, hi: f64) -> (f64, bool) {
    let w = hi - lo;
    let mut y = (x - lo) % (2.0 * w);
    if y < 0.0 {
        y += 2.0 * w;
    }
    if y <= w {
        (lo + y, false)
    } else {
        (lo + 2.0 * w - y, true)
    }
}

/// Straight motion for `dur` seconds inside `region`, mirror-reflecting
/// off the walls; updates position and heading.
fn move_reflecting(node: &mut NodeState, region: Region, dur: f64) {
    let (dx, dy) = (node.heading.cos(), node.heading.sin());
    let (x, flip_x) = fold(node.pos.0 + dx * node.speed * dur, region.x0, region.x1);
    let (y, flip_y) = fold(node.pos.1 + dy * node.speed * dur, region.y0, region.y1);
    node.pos = (x, y);
    if flip_x || flip_y {
        let fx = if flip_x { -dx } else { dx };
        let fy = if flip_y { -dy } else { dy };
        node.heading = fy.atan2(fx).rem_euclid(TAU);
    }
}

/// Uniform heading in `[0, 2π)`.
pub fn draw_heading(rng: &mut impl Rng) -> f64 {
    rng.gen::<f64>() * TAU
}

/// Speed uniform on `(v_min, v_max]`.
pub fn draw_speed(cfg: &NetworkConfig, rng: &mut impl Rng) -> f64 {
    cfg.v_max - rng.gen::<f64>() * (cfg.v_max - cfg.v_min)
}

/// Exponential travel duration with the given rate, bounded away from
/// zero so travel ends always advance time.
pub fn draw_duration(rate: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen();
    (-(1.0 - u).ln() / rate).max(1e-12)
}

/// Community index drawn from the selection distribution.
pub fn draw_community(cfg: &NetworkConfig, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (j, &p) in cfg.p_sel.iter().enumerate() {
        cum += p;
        if u < cum {
            return j;
        }
    }
    cfg.n - 1
}

/// Uniform point in a region.
fn draw_point(region: Region, rng: &mut impl Rng) -> (f64, f64) {
    (
        region.x0 + rng.gen::<f64>() * (region.x1 - region.x0),
        region.y0 + rng.gen::<f64>() * (region.y1 - region.y0),
    )
}

/// Uniform position in the common area.
pub fn draw_position(cfg: &NetworkConfig, rng: &mut impl Rng) -> (f64, f64) {
    draw_point(Region::common(cfg), rng)
}

/// Uniform position inside community `i`.
pub fn draw_position_in_community(
    cfg: &NetworkConfig,
    i: usize,
    rng: &mut impl Rng,
) -> (f64, f64) {
    draw_point(Region::community(cfg, i), rng)
}

/// Starts a fresh local travel in community `i` from the current position.
fn begin_local_travel(node: &mut NodeState, cfg: &NetworkConfig, now: f64, rng: &mut impl Rng) {
    node.heading = draw_heading(rng);
    node.speed = draw_speed(cfg, rng);
    node.travel_end = now + draw_duration(cfg.alpha, rng);
    debug_assert!(matches!(node.mode, Mode::Local(_)));
}

/// Starts a fresh roaming travel from the current position.
fn begin_roaming_travel(node: &mut NodeState, cfg: &NetworkConfig, now: f64, rng: &mut impl Rng) {
    node.mode = Mode::Roaming;
    node.heading = draw_heading(rng);
    node.speed = draw_speed(cfg, rng);
    node.travel_end = now + draw_duration(cfg.beta, rng);
}

/// Creates a roaming node at `pos` with a fresh travel starting at `now`.
pub fn spawn_roaming(
    cfg: &NetworkConfig,
    pos: (f64, f64),
    now: f64,
    infected: bool,
    rng: &mut impl Rng,
) -> NodeState {
    let mut node = NodeState {
        pos,
        mode: Mode::Roaming,
        heading: 0.0,
        speed: cfg.v_max,
        travel_end: now,
        infected,
    };
    begin_roaming_travel(&mut node, cfg, now, rng);
    node
}

/// Creates a local node in community `i` at `pos` with a fresh travel.
pub fn spawn_local(
    cfg: &NetworkConfig,
    i: usize,
    pos: (f64, f64),
    now: f64,
    infected: bool,
    rng: &mut impl Rng,
) -> NodeState {
    let mut node = NodeState {
        pos,
        mode: Mode::Local(i),
        heading: 0.0,
        speed: cfg.v_max,
        travel_end: now,
        infected,
    };
    begin_local_travel(&mut node, cfg, now, rng);
    node
}

/// Travel-end decision: mode switching and the draws for the next travel.
fn on_travel_end(node: &mut NodeState, cfg: &NetworkConfig, now: f64, rng: &mut impl Rng) {
    match node.mode {
        Mode::Local(i) => {
            if rng.gen::<f64>() < cfg.p_r {
                begin_roaming_travel(node, cfg, now, rng);
            } else {
                node.mode = Mode::Local(i);
                begin_local_travel(node, cfg, now, rng);
            }
        }
        Mode::Roaming => {
            if rng.gen::<f64>() < cfg.p_l {
                let j = draw_community(cfg, rng);
                let region = Region::community(cfg, j);
                let target = draw_point(region, rng);
                if region.contains(node.pos) {
                    // Travel ended inside the chosen community: the mode
                    // switches on the spot, no transitional run.
                    node.mode = Mode::Local(j);
                    begin_local_travel(node, cfg, now, rng);
                } else {
                    let dist = ((target.0 - node.pos.0).powi(2)
                        + (target.1 - node.pos.1).powi(2))
                    .sqrt();
                    node.mode = Mode::Transitional { target, community: j };
                    node.heading =
                        (target.1 - node.pos.1).atan2(target.0 - node.pos.0).rem_euclid(TAU);
                    node.speed = cfg.v_trans;
                    node.travel_end = now + dist / cfg.v_trans;
                }
            } else {
                begin_roaming_travel(node, cfg, now, rng);
            }
        }
        Mode::Transitional { target, community } => {
            node.pos = target;
            node.mode = Mode::Local(community);
            begin_local_travel(node, cfg, now, rng);
        }
    }
}

/// Advances one node by `dt` seconds starting from absolute time `now`,
/// handling every travel end that falls inside the step at its exact
/// time.
pub fn advance(node: &mut NodeState, cfg: &NetworkConfig, now: f64, dt: f64, rng: &mut impl Rng) {
    debug_assert!(dt > 0.0);
    let mut t = now;
    let step_end = now + dt;
    // Bounded loop: every travel has strictly positive duration, and the
    // bound is generous enough for any realistic parameterization.
    for _ in 0..100_000 {
        if node.travel_end >= step_end {
            // Current travel outlives the step: plain movement.
            let dur = step_end - t;
            if dur > 0.0 {
                move_within_mode(node, cfg, dur);
            }
            return;
        }
        // Move up to the travel end, then decide.
        let dur = node.travel_end - t;
        if dur > 0.0 {
            move_within_mode(node, cfg, dur);
        }
        t = node.travel_end;
        on_travel_end(node, cfg, t, rng);
    }
    panic!("advance: runaway travel-end loop (dt = {dt}, now = {now})");
}

fn move_within_mode(node: &mut NodeState, cfg: &NetworkConfig, dur: f64) {
    match node.mode {
        Mode::Roaming => move_reflecting(node, Region::common(cfg), dur),
        Mode::Local(i) => move_reflecting(node, Region::community(cfg, i), dur),
        Mode::Transitional { target, .. } => {
            // Straight run: both endpoints lie in the convex common area,
            // so no reflection can occur.
            let (dx, dy) = (node.heading.cos(), node.heading.sin());
            let max_dist =
                ((target.0 - node.pos.0).powi(2) + (target.1 - node.pos.1).powi(2)).sqrt();
            let dist = (node.speed * dur).min(max_dist);
            node.pos = (node.pos.0 + dx * dist, node.pos.1 + dy * dist);
        }
    }
}

/// True when the node's position and speed satisfy the mode's region and
/// speed constraints (used by tests).
pub fn invariants_hold(node: &NodeState, cfg: &NetworkConfig) -> bool {
    let eps = 1e-9;
    let in_region = match node.mode {
        Mode::Roaming | Mode::Transitional { .. } => Region::common(cfg).contains(node.pos),
        Mode::Local(i) => {
            let r = Region::community(cfg, i);
            node.pos.0 >= r.x0 - eps
                && node.pos.0 <= r.x1 + eps
                && node.pos.1 >= r.y0 - eps
                && node.pos.1 <= r.y1 + eps
        }
    };
    let speed_ok = match node.mode {
        Mode::Transitional { .. } => (node.speed - cfg.v_trans).abs() < eps,
        _ => node.speed > cfg.v_min && node.speed <= cfg.v_max + eps,
    };
    in_region && speed_ok
}

/// Squared distance between two nodes.
pub fn dist2(a: &NodeState, b: &NodeState) -> f64 {
    (a.pos.0 - b.pos.0).powi(2) + (a.pos.1 - b.pos.1).powi(2)
}
