//! Ground-truth geometry and the channel-parameter measurement models.
//!
//! Angle convention: azimuth is `atan2(y, x)` in (-pi, pi], elevation is
//! `asin(z / r)` in [-pi/2, pi/2]. The UE frame is the global frame rotated
//! by the UE heading about the z axis, so only azimuths of arrival depend on
//! the heading. Times are in seconds and distances in meters.

use std::f64::consts::PI;

use nalgebra::{Matrix2x3, Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const MIN_DISTANCE: f64 = 1e-9;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UEState {
    pub position: Vector3<f64>,
    /// Counterclockwise rotation about z, radians.
    pub heading: f64,
    /// Clock bias with respect to the BS, seconds.
    pub clock_bias: f64,
}

impl UEState {
    pub fn new(position: Vector3<f64>, heading: f64, clock_bias: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            clock_bias,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LandmarkKind {
    Bs,
    Va,
    Sp,
    Ip,
    UeTrack,
}

impl LandmarkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LandmarkKind::Bs => "BS",
            LandmarkKind::Va => "VA",
            LandmarkKind::Sp => "SP",
            LandmarkKind::Ip => "IP",
            LandmarkKind::UeTrack => "UE_TRACK",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "BS" => Some(LandmarkKind::Bs),
            "VA" => Some(LandmarkKind::Va),
            "SP" => Some(LandmarkKind::Sp),
            "IP" => Some(LandmarkKind::Ip),
            "UE_TRACK" => Some(LandmarkKind::UeTrack),
            _ => None,
        }
    }
}

impl std::fmt::Display for LandmarkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub kind: LandmarkKind,
    pub location: Vector3<f64>,
}

impl Landmark {
    pub fn new(kind: LandmarkKind, location: Vector3<f64>) -> Self {
        Self { kind, location }
    }
}

/// A planar reflector given by its unit normal and any point on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface {
    normal: Vector3<f64>,
    point: Vector3<f64>,
}

impl Surface {
    pub fn new(normal: Vector3<f64>, point: Vector3<f64>) -> Result<Self> {
        if (normal.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!(
                "surface normal must be unit length, |n| = {}",
                normal.norm()
            )));
        }
        Ok(Self { normal, point })
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    pub fn point(&self) -> &Vector3<f64> {
        &self.point
    }
}

/// Mirror image of the BS across `surface`: `(I - 2nn^T) bs + 2 (mu^T n) n`.
pub fn reflect_bs(surface: &Surface, bs: &Vector3<f64>) -> Vector3<f64> {
    let n = surface.normal;
    bs - 2.0 * n * n.dot(bs) + 2.0 * surface.point.dot(&n) * n
}

pub fn va_from_ip(ip: &Vector3<f64>, bs: &Vector3<f64>) -> Vector3<f64> {
    2.0 * ip - bs
}

pub fn ip_from_va(va: &Vector3<f64>, bs: &Vector3<f64>) -> Vector3<f64> {
    (va + bs) / 2.0
}

/// Point where the segment from `va` to `ue` crosses the mirror plane, i.e.
/// the perpendicular bisector of `bs` and `va`.
pub fn ip_on_surface_from_va(
    va: &Vector3<f64>,
    ue: &Vector3<f64>,
    bs: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let g = va - bs;
    let n = g.norm();
    if n < MIN_DISTANCE {
        return Err(Error::DegenerateGeometry(
            "virtual anchor coincides with BS",
        ));
    }
    let ray = ue - va;
    if ray.norm() < MIN_DISTANCE {
        return Err(Error::DegenerateGeometry(
            "UE coincides with virtual anchor",
        ));
    }
    let nu = g / n;
    let mid = (va + bs) / 2.0;
    let denom = nu.dot(&ray);
    if denom.abs() < 1e-12 * ray.norm() {
        return Err(Error::NoIntersection);
    }
    let t = nu.dot(&(mid - va)) / denom;
    if !(-1e-12..=1.0 + 1e-12).contains(&t) {
        return Err(Error::NoIntersection);
    }
    Ok(va + t * ray)
}

/// Azimuth and elevation of a direction vector.
pub fn direction_angles(d: &Vector3<f64>) -> Result<(f64, f64)> {
    let r = d.norm();
    if r < MIN_DISTANCE {
        return Err(Error::DegenerateGeometry("zero-length direction"));
    }
    let az = wrap_angle(d.y.atan2(d.x));
    let el = (d.z / r).clamp(-1.0, 1.0).asin();
    Ok((az, el))
}

/// Jacobian of `(azimuth, elevation)` with respect to the direction vector.
fn angles_jacobian(d: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
    let rho2 = d.x * d.x + d.y * d.y;
    let rho = rho2.sqrt();
    let r2 = rho2 + d.z * d.z;
    if rho < MIN_DISTANCE {
        return Err(Error::DegenerateGeometry("azimuth undefined on the z axis"));
    }
    Ok(Matrix2x3::new(
        -d.y / rho2,
        d.x / rho2,
        0.0,
        -d.x * d.z / (r2 * rho),
        -d.y * d.z / (r2 * rho),
        rho / r2,
    ))
}

fn unit(d: &Vector3<f64>, what: &'static str) -> Result<(Vector3<f64>, f64)> {
    let n = d.norm();
    if n < MIN_DISTANCE {
        return Err(Error::DegenerateGeometry(what));
    }
    Ok((d / n, n))
}

/// Channel parameters of one downlink path as seen by the UE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BistaticMeasurement {
    pub toa: f64,
    pub aoa_az: f64,
    pub aoa_el: f64,
    pub aod_az: f64,
    pub aod_el: f64,
}

impl BistaticMeasurement {
    pub fn to_vector(&self) -> SVector<f64, 5> {
        SVector::<f64, 5>::new(self.toa, self.aoa_az, self.aoa_el, self.aod_az, self.aod_el)
    }

    pub fn from_vector(v: &SVector<f64, 5>) -> Self {
        Self {
            toa: v[0],
            aoa_az: v[1],
            aoa_el: v[2],
            aod_az: v[3],
            aod_el: v[4],
        }
    }
}

/// Round-trip channel parameters of one path as seen by the BS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonostaticMeasurement {
    pub toa: f64,
    pub aoa_az: f64,
    pub aoa_el: f64,
}

impl MonostaticMeasurement {
    pub fn to_vector(&self) -> SVector<f64, 3> {
        SVector::<f64, 3>::new(self.toa, self.aoa_az, self.aoa_el)
    }

    pub fn from_vector(v: &SVector<f64, 3>) -> Self {
        Self {
            toa: v[0],
            aoa_az: v[1],
            aoa_el: v[2],
        }
    }
}

/// Reflection matrix `I - 2 nu nu^T` of the mirror plane between `bs` and `va`.
fn mirror(va: &Vector3<f64>, bs: &Vector3<f64>) -> Result<(Matrix3<f64>, Vector3<f64>, f64)> {
    let (nu, n) = unit(&(va - bs), "virtual anchor coincides with BS")?;
    Ok((Matrix3::identity() - 2.0 * nu * nu.transpose(), nu, n))
}

/// Bistatic measurement function for a path through `landmark` (BS = LoS, VA or SP).
///
/// For a VA the departure direction is the BS-to-incidence-point direction,
/// which equals the mirrored UE-to-VA direction `M (x_UE - x_VA)`.
pub fn h_bistatic(
    landmark: &Landmark,
    s: &UEState,
    bs: &Vector3<f64>,
) -> Result<BistaticMeasurement> {
    let u = s.position;
    let l = landmark.location;
    let (dist, aod_dir, aoa_dir) = match landmark.kind {
        LandmarkKind::Bs => {
            let (_, d) = unit(&(u - l), "UE coincides with BS")?;
            (d, u - l, l - u)
        }
        LandmarkKind::Sp => {
            let (_, d1) = unit(&(u - l), "UE coincides with scattering point")?;
            let (_, d2) = unit(&(bs - l), "BS coincides with scattering point")?;
            (d1 + d2, l - bs, l - u)
        }
        LandmarkKind::Va => {
            let (_, d) = unit(&(u - l), "UE coincides with virtual anchor")?;
            let (m, _, _) = mirror(&l, bs)?;
            (d, m * (u - l), l - u)
        }
        other => {
            return Err(Error::contract(format!(
                "bistatic measurement undefined for landmark kind {other}"
            )))
        }
    };
    let (aod_az, aod_el) = direction_angles(&aod_dir)?;
    let (az, aoa_el) = direction_angles(&aoa_dir)?;
    Ok(BistaticMeasurement {
        toa: dist / SPEED_OF_LIGHT + s.clock_bias,
        aoa_az: wrap_angle(az - s.heading),
        aoa_el,
        aod_az,
        aod_el,
    })
}

/// Jacobian of [`h_bistatic`] with respect to `[landmark location (3); x, y, z, heading, clock_bias]`.
pub fn jac_h_bistatic(
    landmark: &Landmark,
    s: &UEState,
    bs: &Vector3<f64>,
) -> Result<SMatrix<f64, 5, 8>> {
    let u = s.position;
    let l = landmark.location;
    let c = SPEED_OF_LIGHT;
    let mut j = SMatrix::<f64, 5, 8>::zeros();

    // Arrival direction is l - u for every path kind.
    let aoa_dir = l - u;
    let g_aoa = angles_jacobian(&aoa_dir)?;

    let (toa_dl, toa_du, aod_dl, aod_du): (
        Vector3<f64>,
        Vector3<f64>,
        Matrix2x3<f64>,
        Matrix2x3<f64>,
    ) = match landmark.kind {
        LandmarkKind::Bs => {
            let (e, _) = unit(&(u - l), "UE coincides with BS")?;
            let g = angles_jacobian(&(u - l))?;
            (-e / c, e / c, -g, g)
        }
        LandmarkKind::Sp => {
            let (e1, _) = unit(&(l - u), "UE coincides with scattering point")?;
            let (e2, _) = unit(&(l - bs), "BS coincides with scattering point")?;
            let g = angles_jacobian(&(l - bs))?;
            ((e1 + e2) / c, -e1 / c, g, Matrix2x3::zeros())
        }
        LandmarkKind::Va => {
            let (e, _) = unit(&(u - l), "UE coincides with virtual anchor")?;
            let (m, nu, n) = mirror(&l, bs)?;
            let w = u - l;
            let d = m * w;
            let g = angles_jacobian(&d)?;
            let proj = Matrix3::identity() - nu * nu.transpose();
            let dd_dl = -m - (2.0 / n) * (nu.dot(&w) * proj + nu * (w.transpose() * proj));
            (-e / c, e / c, g * dd_dl, g * m)
        }
        other => {
            return Err(Error::contract(format!(
                "bistatic measurement undefined for landmark kind {other}"
            )))
        }
    };

    j.fixed_view_mut::<1, 3>(0, 0)
        .copy_from(&toa_dl.transpose());
    j.fixed_view_mut::<1, 3>(0, 3)
        .copy_from(&toa_du.transpose());
    j[(0, 7)] = 1.0;
    j.fixed_view_mut::<2, 3>(1, 0).copy_from(&g_aoa);
    j.fixed_view_mut::<2, 3>(1, 3).copy_from(&(-g_aoa));
    j[(1, 6)] = -1.0;
    j.fixed_view_mut::<2, 3>(3, 0).copy_from(&aod_dl);
    j.fixed_view_mut::<2, 3>(3, 3).copy_from(&aod_du);
    Ok(j)
}

/// Monostatic measurement of an incidence point: `toa = 2 |ip - bs| / c`,
/// angles of `ip - bs` in the global frame.
pub fn h_monostatic(ip: &Vector3<f64>, bs: &Vector3<f64>) -> Result<MonostaticMeasurement> {
    let d = ip - bs;
    let (_, r) = unit(&d, "incidence point coincides with BS")?;
    let (aoa_az, aoa_el) = direction_angles(&d)?;
    Ok(MonostaticMeasurement {
        toa: 2.0 * r / SPEED_OF_LIGHT,
        aoa_az,
        aoa_el,
    })
}

pub fn jac_h_monostatic(ip: &Vector3<f64>, bs: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let d = ip - bs;
    let (e, _) = unit(&d, "incidence point coincides with BS")?;
    let g = angles_jacobian(&d)?;
    let mut j = Matrix3::zeros();
    j.fixed_view_mut::<1, 3>(0, 0)
        .copy_from(&(2.0 * e.transpose() / SPEED_OF_LIGHT));
    j.fixed_view_mut::<2, 3>(1, 0).copy_from(&g);
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn reflect_axis_aligned() {
        let s = Surface::new(v(1.0, 0.0, 0.0), v(5.0, 0.0, 0.0)).unwrap();
        assert_eq!(reflect_bs(&s, &v(0.0, 0.0, 0.0)), v(10.0, 0.0, 0.0));
        let s = Surface::new(v(0.0, 1.0, 0.0), v(0.0, -3.0, 0.0)).unwrap();
        assert_eq!(reflect_bs(&s, &v(1.0, 2.0, 7.0)), v(1.0, -8.0, 7.0));
    }

    #[test]
    fn non_unit_normal_rejected() {
        assert!(matches!(
            Surface::new(v(2.0, 0.0, 0.0), v(0.0, 0.0, 0.0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn va_ip_conversions() {
        let o = v(0.0, 0.0, 0.0);
        assert_eq!(va_from_ip(&v(5.0, 0.0, 0.0), &o), v(10.0, 0.0, 0.0));
        assert_eq!(ip_from_va(&v(10.0, 0.0, 0.0), &o), v(5.0, 0.0, 0.0));
        let p = v(1.0, 1.0, 1.0);
        assert_eq!(va_from_ip(&p, &p), p);
    }

    #[test]
    fn incidence_point_examples() {
        let o = v(0.0, 0.0, 0.0);
        assert!(matches!(
            ip_on_surface_from_va(&v(10.0, 0.0, 0.0), &v(10.0, 8.0, 0.0), &o),
            Err(Error::NoIntersection)
        ));
        let ip = ip_on_surface_from_va(&v(10.0, 0.0, 0.0), &v(0.0, 8.0, 0.0), &o).unwrap();
        assert!((ip - v(5.0, 4.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn los_example() {
        let s = UEState::new(v(30.0, 0.0, 0.0), 0.0, 10e-9);
        let bs = v(0.0, 0.0, 0.0);
        let z = h_bistatic(&Landmark::new(LandmarkKind::Bs, bs), &s, &bs).unwrap();
        assert!(close(z.toa, 30.0 / SPEED_OF_LIGHT + 1e-8, 1e-20));
        assert!(close(z.toa, 1.1007e-7, 1e-11));
        assert_eq!(z.aod_az, 0.0);
        assert!(close(z.aoa_az, PI, 1e-15));
    }

    #[test]
    fn sp_collinear_example() {
        let s = UEState::new(v(20.0, 0.0, 0.0), 0.0, 0.0);
        let bs = v(0.0, 0.0, 0.0);
        let z = h_bistatic(&Landmark::new(LandmarkKind::Sp, v(10.0, 0.0, 0.0)), &s, &bs).unwrap();
        assert!(close(z.toa, 20.0 / SPEED_OF_LIGHT, 1e-22));
        assert_eq!(z.aod_az, 0.0);
        assert!(close(z.aoa_az, PI, 1e-15));
        assert_eq!(z.aoa_el, 0.0);
        assert_eq!(z.aod_el, 0.0);
    }

    #[test]
    fn va_path_matches_incidence_point() {
        let bs = v(0.0, 0.0, 10.0);
        let wall = Surface::new(v(1.0, 0.0, 0.0), v(50.0, 0.0, 0.0)).unwrap();
        let va = reflect_bs(&wall, &bs);
        let s = UEState::new(v(12.0, 15.0, 0.0), 0.4, 3e-9);
        let z = h_bistatic(&Landmark::new(LandmarkKind::Va, va), &s, &bs).unwrap();
        let ip = ip_on_surface_from_va(&va, &s.position, &bs).unwrap();
        let len = (bs - ip).norm() + (ip - s.position).norm();
        assert!(close(z.toa, len / SPEED_OF_LIGHT + s.clock_bias, 1e-20));
        let (az, el) = direction_angles(&(ip - bs)).unwrap();
        assert!(close(z.aod_az, az, 1e-12));
        assert!(close(z.aod_el, el, 1e-12));
    }

    #[test]
    fn monostatic_examples() {
        let o = v(0.0, 0.0, 0.0);
        let z = h_monostatic(&v(15.0, 0.0, 0.0), &o).unwrap();
        assert!(close(z.toa, 30.0 / SPEED_OF_LIGHT, 1e-22));
        assert!(close(z.toa, 1.0007e-7, 1e-11));
        assert_eq!((z.aoa_az, z.aoa_el), (0.0, 0.0));
        assert!(close(
            h_monostatic(&v(0.0, 0.0, 10.0), &o).unwrap().aoa_el,
            PI / 2.0,
            1e-15
        ));
        assert!(close(
            h_monostatic(&v(-5.0, 0.0, 0.0), &o).unwrap().aoa_az,
            PI,
            1e-15
        ));
        assert!(matches!(
            h_monostatic(&o, &o),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn closed_form_jacobian_entries() {
        let bs = v(0.0, 0.0, 10.0);
        let s = UEState::new(v(20.0, 3.0, 0.0), 1.0, 1e-8);
        for l in [
            Landmark::new(LandmarkKind::Bs, bs),
            Landmark::new(LandmarkKind::Sp, v(25.0, 25.0, 1.0)),
            Landmark::new(LandmarkKind::Va, v(100.0, 0.0, 10.0)),
        ] {
            let j = jac_h_bistatic(&l, &s, &bs).unwrap();
            assert_eq!(j[(0, 7)], 1.0);
            assert_eq!(j[(1, 6)], -1.0);
        }
        let ip = v(3.0, -4.0, 12.0);
        let j = jac_h_monostatic(&ip, &bs).unwrap();
        let d = ip - bs;
        let expect = 2.0 * d.transpose() / (SPEED_OF_LIGHT * d.norm());
        for k in 0..3 {
            assert!(close(j[(0, k)], expect[k], 1e-24));
        }
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!(close(wrap_angle(3.0 * PI), PI, 1e-12));
        assert!(close(
            wrap_angle(359f64.to_radians()),
            -1f64.to_radians(),
            1e-12
        ));
    }

    #[test]
    fn jacobians_match_finite_differences() {
        use crate::oracle::{
            fd_jacobian_bistatic, fd_jacobian_monostatic, random_bistatic_geometry,
            row_relative_error,
        };
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let (bs, s, marks) = random_bistatic_geometry(&mut rng);
            for l in &marks {
                let a = jac_h_bistatic(l, &s, &bs).unwrap();
                let n = fd_jacobian_bistatic(l, &s, &bs, 1e-6).unwrap();
                assert!(row_relative_error(&a, &n) <= 1e-5, "{:?}", l.kind);
            }
            let ip = marks[2].location;
            let a = jac_h_monostatic(&ip, &bs).unwrap();
            let n = fd_jacobian_monostatic(&ip, &bs, 1e-6).unwrap();
            assert!(row_relative_error(&a, &n) <= 1e-5);
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
            prop::array::uniform3(-r..r).prop_map(Vector3::from)
        }

        proptest! {
            #[test]
            fn reflection_is_involution(n in vec3(1.0), mu in vec3(50.0), bs in vec3(50.0)) {
                prop_assume!(n.norm() > 0.1);
                let s = Surface::new(n.normalize(), mu).unwrap();
                let back = reflect_bs(&s, &reflect_bs(&s, &bs));
                prop_assert!((back - bs).norm() <= 1e-12 * (1.0 + bs.norm() + mu.norm()) * 10.0);
            }

            #[test]
            fn va_ip_round_trip(ip in vec3(100.0), bs in vec3(100.0)) {
                let back = ip_from_va(&va_from_ip(&ip, &bs), &bs);
                prop_assert!((back - ip).norm() <= 1e-12 * (1.0 + ip.norm() + bs.norm()));
            }

            #[test]
            fn mirror_path_length(seed in any::<u64>()) {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let (bs, s, marks) = crate::oracle::random_bistatic_geometry(&mut rng);
                let va = marks[1].location;
                let ip = ip_on_surface_from_va(&va, &s.position, &bs).unwrap();
                let direct = (s.position - va).norm();
                let bent = (bs - ip).norm() + (ip - s.position).norm();
                prop_assert!((direct - bent).abs() <= 1e-9 * direct);
            }

            #[test]
            fn heading_and_bias_shifts(seed in any::<u64>(), delta in -3.0f64..3.0, db in -1e-7f64..1e-7) {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let (bs, s, marks) = crate::oracle::random_bistatic_geometry(&mut rng);
                for l in &marks {
                    let z0 = h_bistatic(l, &s, &bs).unwrap();
                    let rotated = UEState::new(s.position, s.heading + delta, s.clock_bias);
                    let z1 = h_bistatic(l, &rotated, &bs).unwrap();
                    prop_assert!(wrap_angle(z1.aoa_az - (z0.aoa_az - delta)).abs() < 1e-9);
                    prop_assert_eq!(z1.toa, z0.toa);
                    prop_assert_eq!((z1.aoa_el, z1.aod_az, z1.aod_el), (z0.aoa_el, z0.aod_az, z0.aod_el));
                    let biased = UEState::new(s.position, s.heading, s.clock_bias + db);
                    let z2 = h_bistatic(l, &biased, &bs).unwrap();
                    prop_assert!((z2.toa - z0.toa - db).abs() < 1e-21);
                    prop_assert_eq!((z2.aoa_az, z2.aoa_el, z2.aod_az, z2.aod_el), (z0.aoa_az, z0.aoa_el, z0.aod_az, z0.aod_el));
                }
            }
        }
    }
}
