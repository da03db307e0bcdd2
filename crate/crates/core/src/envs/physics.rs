//! Damped double-integrator particles with soft contacts and springs.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub type Vec2 = [f64; 2];

pub(crate) fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub(crate) fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

pub(crate) fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn norm(a: Vec2) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Center distance strictly less than the sum of radii.
pub fn overlap(a: Vec2, ra: f64, b: Vec2, rb: f64) -> bool {
    norm(sub(a, b)) < ra + rb
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub dt: f64,
    pub damping: f64,
    pub contact_force: f64,
    pub contact_margin: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self { dt: 0.1, damping: 0.25, contact_force: 100.0, contact_margin: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entity {
    pub pos: Vec2,
    pub vel: Vec2,
    pub radius: f64,
    pub max_speed: f64,
    pub movable: bool,
    pub collide: bool,
}

impl Entity {
    pub fn agent(radius: f64, max_speed: f64) -> Self {
        Self { pos: [0.0; 2], vel: [0.0; 2], radius, max_speed, movable: true, collide: true }
    }

    pub fn landmark(radius: f64) -> Self {
        Self { pos: [0.0; 2], vel: [0.0; 2], radius, max_speed: 0.0, movable: false, collide: false }
    }

    pub fn speed(&self) -> f64 {
        norm(self.vel)
    }
}

/// Pulls `a` and `b` together when stretched beyond `rest_length`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest_length: f64,
    pub stiffness: f64,
}

impl Spring {
    /// Force on `a`; `b` receives the negation.
    pub fn force(&self, pa: Vec2, pb: Vec2) -> Vec2 {
        let d = sub(pb, pa);
        let len = norm(d);
        if len <= self.rest_length {
            return [0.0; 2];
        }
        scale(d, self.stiffness * (len - self.rest_length) / len)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub entities: Vec<Entity>,
    pub springs: Vec<Spring>,
    pub physics: Physics,
}

impl World {
    pub fn new(physics: Physics) -> Self {
        Self { entities: Vec::new(), springs: Vec::new(), physics }
    }

    /// Penalty force on `i` from overlapping `j`.
    fn contact(&self, i: usize, j: usize) -> Vec2 {
        let (a, b) = (&self.entities[i], &self.entities[j]);
        let delta = sub(a.pos, b.pos);
        let dist = norm(delta);
        if dist == 0.0 {
            return [0.0; 2];
        }
        let k = self.physics.contact_margin;
        let penetration = k * softplus(-(dist - a.radius - b.radius) / k);
        scale(delta, self.physics.contact_force * penetration / dist)
    }

    /// Applies `control` (one force per entity, ignored for static ones)
    /// plus contact and spring forces, then advances one `dt`.
    pub fn integrate(&mut self, control: &[Vec2]) {
        assert_eq!(control.len(), self.entities.len(), "one control force per entity");
        let n = self.entities.len();
        let mut force: Vec<Vec2> = control.to_vec();
        for i in 0..n {
            for j in i + 1..n {
                if self.entities[i].collide && self.entities[j].collide {
                    let f = self.contact(i, j);
                    force[i] = add(force[i], f);
                    force[j] = sub(force[j], f);
                }
            }
        }
        for s in &self.springs {
            let f = s.force(self.entities[s.a].pos, self.entities[s.b].pos);
            force[s.a] = add(force[s.a], f);
            force[s.b] = sub(force[s.b], f);
        }
        let Physics { dt, damping, .. } = self.physics;
        for (e, f) in self.entities.iter_mut().zip(force) {
            if !e.movable {
                continue;
            }
            e.vel = add(scale(e.vel, 1.0 - damping), scale(f, dt));
            let speed = e.speed();
            if speed > e.max_speed {
                e.vel = scale(e.vel, e.max_speed / speed);
            }
            e.pos = add(e.pos, scale(e.vel, dt));
            let lim = 1.0 - e.radius;
            for k in 0..2 {
                if e.pos[k] > lim {
                    e.pos[k] = lim;
                    e.vel[k] = e.vel[k].min(0.0);
                } else if e.pos[k] < -lim {
                    e.pos[k] = -lim;
                    e.vel[k] = e.vel[k].max(0.0);
                }
            }
        }
    }

    pub fn zero_control(&self) -> Vec<Vec2> {
        vec![[0.0; 2]; self.entities.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(e: Entity) -> World {
        let mut w = World::new(Physics::default());
        w.entities.push(e);
        w
    }

    #[test]
    fn rest_stays_at_rest() {
        let mut w = single(Entity::agent(0.05, 1.0));
        w.entities[0].pos = [0.3, -0.2];
        w.integrate(&[[0.0; 2]]);
        assert_eq!(w.entities[0].pos, [0.3, -0.2]);
    }

    #[test]
    fn constant_force_reaches_terminal_speed() {
        // v_{n+1} = (1 - d) v_n + f dt  ->  v* = f dt / d
        let mut w = single(Entity::agent(0.05, f64::INFINITY));
        let f = 0.5;
        let mut prev = 0.0;
        for _ in 0..200 {
            w.entities[0].pos = [0.0; 2];
            w.integrate(&[[f, 0.0]]);
            let v = w.entities[0].vel[0];
            assert!(v >= prev);
            prev = v;
        }
        let p = Physics::default();
        assert!((prev - f * p.dt / p.damping).abs() < 1e-12);
    }

    #[test]
    fn walls_keep_entities_inside() {
        let mut w = single(Entity::agent(0.05, 1.0));
        w.entities[0].pos = [0.94, -0.94];
        w.entities[0].vel = [1.0, -1.0];
        for _ in 0..5 {
            w.integrate(&[[5.0, -5.0]]);
            let e = &w.entities[0];
            assert!(e.pos[0] <= 0.95 && e.pos[1] >= -0.95);
            assert!(e.vel[0] <= 0.0 && e.vel[1] >= 0.0);
        }
    }

    #[test]
    fn damping_strictly_slows_free_particles() {
        let mut w = single(Entity::agent(0.05, 2.0));
        w.entities[0].vel = [0.3, 0.4];
        let mut speed = w.entities[0].speed();
        for _ in 0..20 {
            w.integrate(&[[0.0; 2]]);
            let s = w.entities[0].speed();
            assert!(s < speed);
            speed = s;
        }
    }

    #[test]
    fn contacts_push_apart_symmetrically() {
        let mut w = World::new(Physics::default());
        w.entities.push(Entity::agent(0.05, 10.0));
        w.entities.push(Entity::agent(0.05, 10.0));
        w.entities[0].pos = [-0.02, 0.0];
        w.entities[1].pos = [0.02, 0.0];
        w.integrate(&w.zero_control());
        let (a, b) = (&w.entities[0], &w.entities[1]);
        assert!(a.vel[0] < 0.0 && b.vel[0] > 0.0);
        assert!((a.vel[0] + b.vel[0]).abs() < 1e-12);
    }

    #[test]
    fn spring_is_slack_then_hookean() {
        let s = Spring { a: 0, b: 1, rest_length: 0.5, stiffness: 2.0 };
        assert_eq!(s.force([0.0, 0.0], [0.4, 0.0]), [0.0, 0.0]);
        let f = s.force([0.0, 0.0], [0.8, 0.0]);
        assert!((f[0] - 0.6).abs() < 1e-12 && f[1] == 0.0);
    }
}
