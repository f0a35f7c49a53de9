//! Oracle equivalence for the engagement metrics: an independent
//! implementation built only on `atan2` over dot and cross products must
//! agree with the library to within 1e-9 degrees.

use aircombat_sim::geometry::{
    angle_off, antenna_train_angle, aspect_angle, distance, Pose2D,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Angle between two vectors via atan2(|cross|, dot); [0, 180] degrees.
fn vec_angle(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let dot = ax * bx + ay * by;
    let cross = ax * by - ay * bx;
    cross.abs().atan2(dot).to_degrees()
}

fn heading_vec(heading_deg: f64) -> (f64, f64) {
    let r = heading_deg.to_radians();
    (r.sin(), r.cos())
}

fn oracle_ata(this: &Pose2D, other: (f64, f64)) -> f64 {
    let (nx, ny) = heading_vec(this.heading);
    vec_angle(nx, ny, other.0 - this.x, other.1 - this.y)
}

fn oracle_aspect(this: &Pose2D, other: &Pose2D) -> f64 {
    // Tail vector of `other` against the line of sight other -> this.
    let (nx, ny) = heading_vec(other.heading);
    vec_angle(-nx, -ny, this.x - other.x, this.y - other.y)
}

fn oracle_angle_off(ha: f64, hb: f64) -> f64 {
    let (ax, ay) = heading_vec(ha);
    let (bx, by) = heading_vec(hb);
    vec_angle(ax, ay, bx, by)
}

#[test]
fn metrics_match_trig_oracle_over_10k_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let started = std::time::Instant::now();
    for i in 0..10_000 {
        let a = Pose2D::new(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(0.0..360.0),
        )
        .unwrap();
        let b = Pose2D::new(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(0.0..360.0),
        )
        .unwrap();
        if distance(a.position(), b.position()) < 1e-6 {
            continue;
        }

        let ata = antenna_train_angle(&a, b.position()).unwrap();
        assert!(
            (ata - oracle_ata(&a, b.position())).abs() < 1e-9,
            "pair {i}: ata {ata} vs oracle {}",
            oracle_ata(&a, b.position())
        );

        let aspect = aspect_angle(&a, &b).unwrap();
        assert!(
            (aspect - oracle_aspect(&a, &b)).abs() < 1e-9,
            "pair {i}: aspect {aspect} vs oracle {}",
            oracle_aspect(&a, &b)
        );

        let off = angle_off(a.heading, b.heading).unwrap();
        assert!(
            (off - oracle_angle_off(a.heading, b.heading)).abs() < 1e-9,
            "pair {i}: angle_off {off} vs oracle {}",
            oracle_angle_off(a.heading, b.heading)
        );

        let d = distance(a.position(), b.position());
        let oracle_d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
        assert!((d - oracle_d).abs() < 1e-12);

        // Tail/nose duality through the line of sight, exact.
        let back = antenna_train_angle(&b, a.position()).unwrap();
        assert_eq!(aspect, 180.0 - back);
    }
    assert!(started.elapsed().as_secs_f64() < 5.0);
}
