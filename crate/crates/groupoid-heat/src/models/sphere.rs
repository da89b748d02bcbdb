//! Closed forms for the stereographic sphere model.
//!
//! The interior M0 = S^2 \ {N} is identified with the plane by stereographic
//! projection from the north pole N = (0, 0, 1):
//!
//!   xi(P) = (X, Y) / (1 - Z),    P(xi) = (2 xi_1, 2 xi_2, s - 1) / (s + 1),
//!
//! with s = |xi|^2. The two model sections push the plane translations
//! d/dxi_1, d/dxi_2 forward to vector fields V_1, V_2 on the sphere. In
//! ambient coordinates, with c = 1 - Z,
//!
//!   V_1 = (c - X^2, -XY, Xc),    V_2 = (-XY, c - Y^2, Yc),
//!
//! orthogonal, tangent, and of round norm |V_i| = c = 2 sin^2(r/2) where r
//! is the polar angle from N. Both vanish exactly at N.

/// Stereographic coordinates of an interior point.
pub fn xi(p: [f64; 3]) -> [f64; 2] {
    let c = 1.0 - p[2];
    [p[0] / c, p[1] / c]
}

/// Point on the sphere with the given stereographic coordinates.
pub fn from_xi(xi: [f64; 2]) -> [f64; 3] {
    let s = xi[0] * xi[0] + xi[1] * xi[1];
    [2.0 * xi[0] / (s + 1.0), 2.0 * xi[1] / (s + 1.0), (s - 1.0) / (s + 1.0)]
}

/// Translate P by v in stereographic coordinates; N is fixed exactly.
pub fn translate(p: [f64; 3], v: [f64; 2]) -> [f64; 3] {
    let c = 1.0 - p[2];
    if c == 0.0 || (v[0] == 0.0 && v[1] == 0.0) {
        return p;
    }
    from_xi([p[0] / c + v[0], p[1] / c + v[1]])
}

/// The translation anchor fields [V_1, V_2] at P, in ambient coordinates.
pub fn anchor_fields(p: [f64; 3]) -> [[f64; 3]; 2] {
    let c = 1.0 - p[2];
    [
        [c - p[0] * p[0], -p[0] * p[1], p[0] * c],
        [-p[0] * p[1], c - p[1] * p[1], p[1] * c],
    ]
}

/// Great circle distance.
pub fn distance(p: [f64; 3], q: [f64; 3]) -> f64 {
    let dot = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
    let cross = [
        p[1] * q[2] - p[2] * q[1],
        p[2] * q[0] - p[0] * q[2],
        p[0] * q[1] - p[1] * q[0],
    ];
    let norm = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    norm.atan2(dot)
}

/// Polar angle from the north pole.
pub fn polar_angle(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1]).sqrt().atan2(p[2])
}

/// Unit tangent at P pointing away from N along the meridian. Undefined at
/// the poles themselves; returns zero there.
pub fn polar_direction(p: [f64; 3]) -> [f64; 3] {
    let sin_r = (p[0] * p[0] + p[1] * p[1]).sqrt();
    if sin_r < 1e-300 {
        return [0.0, 0.0, 0.0];
    }
    let w = [p[0] / sin_r, p[1] / sin_r];
    let cos_r = p[2];
    [cos_r * w[0], cos_r * w[1], -sin_r]
}

/// Point at polar angle r and azimuth az.
pub fn from_polar(r: f64, az: f64) -> [f64; 3] {
    [r.sin() * az.cos(), r.sin() * az.sin(), r.cos()]
}

/// Project back onto the unit sphere, guarding against drift.
pub fn renormalize(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

/// A deterministic orthonormal tangent basis at P.
pub fn tangent_basis(p: [f64; 3]) -> [[f64; 3]; 2] {
    // Start from whichever coordinate axis is least aligned with P.
    let seed = if p[0].abs() <= p[1].abs() && p[0].abs() <= p[2].abs() {
        [1.0, 0.0, 0.0]
    } else if p[1].abs() <= p[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let dot = seed[0] * p[0] + seed[1] * p[1] + seed[2] * p[2];
    let mut e1 = [seed[0] - dot * p[0], seed[1] - dot * p[1], seed[2] - dot * p[2]];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    for v in &mut e1 {
        *v /= n1;
    }
    let e2 = [
        p[1] * e1[2] - p[2] * e1[1],
        p[2] * e1[0] - p[0] * e1[2],
        p[0] * e1[1] - p[1] * e1[0],
    ];
    [e1, e2]
}
