//! Circular-arc centerline.

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: V3) -> V3 {
    scale(a, 1.0 / norm(a))
}

/// Arc from `start` to `end` whose midpoint is displaced by `sagitta` from
/// the chord. The bulge direction is the y axis made orthogonal to the chord
/// (the x axis if the chord runs along y). A zero sagitta gives a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    start: V3,
    end: V3,
    kind: ArcKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ArcKind {
    Segment { dir: V3, len: f64 },
    Circle { center: V3, radius: f64, e1: V3, e2: V3, angle: f64 },
}

/// Closest centerline point to a query and the unit tangent there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub distance: f64,
    pub tangent: V3,
}

impl Arc {
    /// `None` when start and end coincide.
    pub fn new(start: V3, end: V3, sagitta: f64) -> Option<Arc> {
        let chord = sub(end, start);
        let len = norm(chord);
        if !(len > 1e-9) {
            return None;
        }
        let dir = scale(chord, 1.0 / len);
        if sagitta.abs() < 1e-9 {
            return Some(Arc {
                start,
                end,
                kind: ArcKind::Segment { dir, len },
            });
        }
        let axis = if dir[1].abs() > 0.99 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let u = unit(sub(axis, scale(dir, dot(axis, dir))));
        let half = len / 2.0;
        let radius = (half * half + sagitta * sagitta) / (2.0 * sagitta.abs());
        let mid = scale(add(start, end), 0.5);
        let center = add(mid, scale(u, sagitta - sagitta.signum() * radius));
        let bulge = add(mid, scale(u, sagitta));
        let e1 = unit(sub(start, center));
        let m = sub(bulge, center);
        let e2 = unit(sub(m, scale(e1, dot(m, e1))));
        let half_angle = dot(m, e2).atan2(dot(m, e1));
        Some(Arc {
            start,
            end,
            kind: ArcKind::Circle {
                center,
                radius,
                e1,
                e2,
                angle: 2.0 * half_angle,
            },
        })
    }

    pub fn start(&self) -> V3 {
        self.start
    }

    pub fn end(&self) -> V3 {
        self.end
    }

    pub fn length(&self) -> f64 {
        match self.kind {
            ArcKind::Segment { len, .. } => len,
            ArcKind::Circle { radius, angle, .. } => radius * angle,
        }
    }

    /// Point at arc-length fraction `s ∈ [0, 1]`.
    pub fn point(&self, s: f64) -> V3 {
        match self.kind {
            ArcKind::Segment { dir, len } => add(self.start, scale(dir, s * len)),
            ArcKind::Circle {
                center,
                radius,
                e1,
                e2,
                angle,
            } => {
                let phi = s * angle;
                add(center, add(scale(e1, radius * phi.cos()), scale(e2, radius * phi.sin())))
            }
        }
    }

    fn tangent_at(&self, s: f64) -> V3 {
        match self.kind {
            ArcKind::Segment { dir, .. } => dir,
            ArcKind::Circle { e1, e2, angle, .. } => {
                let phi = s * angle;
                add(scale(e1, -phi.sin()), scale(e2, phi.cos()))
            }
        }
    }

    /// Exact distance from `p` to the arc and the tangent at the foot point.
    pub fn nearest(&self, p: V3) -> Nearest {
        let s = match self.kind {
            ArcKind::Segment { dir, len } => (dot(sub(p, self.start), dir) / len).clamp(0.0, 1.0),
            ArcKind::Circle { center, e1, e2, angle, .. } => {
                let q = sub(p, center);
                let (a, b) = (dot(q, e1), dot(q, e2));
                let mut phi = b.atan2(a);
                if phi < 0.0 {
                    phi += 2.0 * std::f64::consts::PI;
                }
                if a == 0.0 && b == 0.0 {
                    // On the axis every arc point is equally near.
                    0.0
                } else if phi <= angle {
                    phi / angle
                } else {
                    let ds = norm(sub(p, self.start));
                    let de = norm(sub(p, self.end));
                    if ds <= de {
                        0.0
                    } else {
                        1.0
                    }
                }
            }
        };
        Nearest {
            distance: norm(sub(p, self.point(s))),
            tangent: self.tangent_at(s),
        }
    }
}
