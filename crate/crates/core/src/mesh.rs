//! Axisymmetric (r, z) finite-volume grid over the cylindrical tissue
//! domain, with face areas carrying the 2*pi*r weight, boundary tagging,
//! and the discrete divergence/gradient operators.

use thiserror::Error;

use crate::params::{Compartment, Geometry};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh dimensions: {0}")]
    InvalidDimensions(String),
    #[error("face value count mismatch: expected {expected} {axis}-faces, got {got}")]
    SizeMismatch {
        axis: &'static str,
        expected: usize,
        got: usize,
    },
}

/// How the exterior of the domain is treated for the extracellular
/// compartment. Cellular compartments are sealed everywhere regardless.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryMode {
    /// Lateral surface and both end disks exchange with the bath.
    #[default]
    Bath,
    /// Fully sealed; used by conservation tests. The potential gauge is
    /// then pinned at one cell instead of at the bath.
    Sealed,
}

/// Classification of a face for one compartment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceTag {
    Interior,
    Sealed,
    Bath,
}

/// Whether a compartment transports along both axes or only axially.
/// The axon compartment carries flux in z only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisPolicy {
    Full,
    AxialOnly,
}

impl AxisPolicy {
    pub fn for_compartment(comp: Compartment) -> AxisPolicy {
        match comp {
            Compartment::Ax => AxisPolicy::AxialOnly,
            Compartment::Gl | Compartment::Ex => AxisPolicy::Full,
        }
    }
}

/// Values attached to every face of the grid, oriented toward +r / +z.
/// r-faces are indexed `iz * (nr + 1) + ir_face`; z-faces
/// `iz_face * nr + ir`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceValues {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
}

impl FaceValues {
    pub fn zeros(mesh: &Mesh) -> FaceValues {
        FaceValues {
            r: vec![0.0; (mesh.nr + 1) * mesh.nz],
            z: vec![0.0; mesh.nr * (mesh.nz + 1)],
        }
    }
}

/// Uniform tensor-product grid on the cylinder of radius R and length L.
/// Cells are indexed `iz * nr + ir`; identical inputs build bit-identical
/// meshes.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nr: usize,
    pub nz: usize,
    pub radius: f64,
    pub length: f64,
    pub dr: f64,
    pub dz: f64,
    pub boundary: BoundaryMode,
    /// Cell volume per radial ring (m^3); independent of iz.
    ring_volume: Vec<f64>,
    /// Area of the r-face at each radial face position (m^2), per axial slab.
    r_face_area: Vec<f64>,
    /// Annular area of a z-face per radial ring (m^2).
    z_face_area: Vec<f64>,
}

impl Mesh {
    pub fn n_cells(&self) -> usize {
        self.nr * self.nz
    }

    pub fn cell_index(&self, ir: usize, iz: usize) -> usize {
        debug_assert!(ir < self.nr && iz < self.nz);
        iz * self.nr + ir
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nr, cell / self.nr)
    }

    /// Cell-center radius of ring ir.
    pub fn r_center(&self, ir: usize) -> f64 {
        (ir as f64 + 0.5) * self.dr
    }

    /// Cell-center z of slab iz.
    pub fn z_center(&self, iz: usize) -> f64 {
        (iz as f64 + 0.5) * self.dz
    }

    pub fn cell_volume(&self, cell: usize) -> f64 {
        self.ring_volume[cell % self.nr]
    }

    /// Area of the radial face at face position ir_face (0..=nr) for one
    /// axial slab.
    pub fn r_face_area(&self, ir_face: usize) -> f64 {
        self.r_face_area[ir_face]
    }

    /// Area of the axial face for ring ir.
    pub fn z_face_area(&self, ir: usize) -> f64 {
        self.z_face_area[ir]
    }

    /// Cell containing the sample point (r, z); clamps to the domain.
    pub fn locate(&self, r: f64, z: f64) -> usize {
        let ir = ((r / self.dr) as usize).min(self.nr - 1);
        let iz = ((z / self.dz) as usize).min(self.nz - 1);
        self.cell_index(ir, iz)
    }

    /// Tag of an r-face for a compartment.
    pub fn r_face_tag(&self, comp: Compartment, ir_face: usize) -> FaceTag {
        if ir_face == 0 {
            // Symmetry axis; zero area, never carries flux.
            return FaceTag::Sealed;
        }
        if ir_face < self.nr {
            return FaceTag::Interior;
        }
        self.exterior_tag(comp)
    }

    /// Tag of a z-face for a compartment.
    pub fn z_face_tag(&self, comp: Compartment, iz_face: usize) -> FaceTag {
        if iz_face > 0 && iz_face < self.nz {
            return FaceTag::Interior;
        }
        self.exterior_tag(comp)
    }

    fn exterior_tag(&self, comp: Compartment) -> FaceTag {
        match (self.boundary, comp) {
            (BoundaryMode::Bath, Compartment::Ex) => FaceTag::Bath,
            _ => FaceTag::Sealed,
        }
    }

    /// Finite-volume divergence: per cell, (sum of outward flux * area)
    /// divided by volume. Face values are flux densities oriented toward
    /// +r/+z. Under `AxialOnly` the radial faces do not contribute.
    pub fn divergence(&self, flux: &FaceValues, policy: AxisPolicy) -> Result<Vec<f64>, MeshError> {
        let nr = self.nr;
        let nz = self.nz;
        if flux.r.len() != (nr + 1) * nz {
            return Err(MeshError::SizeMismatch {
                axis: "r",
                expected: (nr + 1) * nz,
                got: flux.r.len(),
            });
        }
        if flux.z.len() != nr * (nz + 1) {
            return Err(MeshError::SizeMismatch {
                axis: "z",
                expected: nr * (nz + 1),
                got: flux.z.len(),
            });
        }
        let mut div = vec![0.0; self.n_cells()];
        for iz in 0..nz {
            for ir in 0..nr {
                let cell = self.cell_index(ir, iz);
                let mut net = 0.0;
                if policy == AxisPolicy::Full {
                    let f_in = flux.r[iz * (nr + 1) + ir] * self.r_face_area[ir];
                    let f_out = flux.r[iz * (nr + 1) + ir + 1] * self.r_face_area[ir + 1];
                    net += f_out - f_in;
                }
                let f_lo = flux.z[iz * nr + ir] * self.z_face_area[ir];
                let f_hi = flux.z[(iz + 1) * nr + ir] * self.z_face_area[ir];
                net += f_hi - f_lo;
                div[cell] = net / self.ring_volume[ir];
            }
        }
        Ok(div)
    }

    /// Two-point gradient on faces: (u_right - u_left) / distance.
    /// Exterior faces tagged bath difference against `bath_value` over the
    /// half-cell distance; sealed faces get zero.
    pub fn gradient_along_faces(
        &self,
        field: &[f64],
        comp: Compartment,
        bath_value: f64,
    ) -> FaceValues {
        let nr = self.nr;
        let nz = self.nz;
        debug_assert_eq!(field.len(), self.n_cells());
        let mut out = FaceValues::zeros(self);
        for iz in 0..nz {
            for irf in 0..=nr {
                let idx = iz * (nr + 1) + irf;
                out.r[idx] = match self.r_face_tag(comp, irf) {
                    FaceTag::Interior => {
                        (field[self.cell_index(irf, iz)] - field[self.cell_index(irf - 1, iz)])
                            / self.dr
                    }
                    FaceTag::Bath => {
                        (bath_value - field[self.cell_index(nr - 1, iz)]) / (0.5 * self.dr)
                    }
                    FaceTag::Sealed => 0.0,
                };
            }
        }
        for izf in 0..=nz {
            for ir in 0..nr {
                let idx = izf * nr + ir;
                out.z[idx] = match self.z_face_tag(comp, izf) {
                    FaceTag::Interior => {
                        (field[self.cell_index(ir, izf)] - field[self.cell_index(ir, izf - 1)])
                            / self.dz
                    }
                    FaceTag::Bath => {
                        if izf == 0 {
                            (field[self.cell_index(ir, 0)] - bath_value) / (0.5 * self.dz)
                        } else {
                            (bath_value - field[self.cell_index(ir, nz - 1)]) / (0.5 * self.dz)
                        }
                    }
                    FaceTag::Sealed => 0.0,
                };
            }
        }
        out
    }
}

/// Builds the uniform axisymmetric grid. Volumes carry the exact annular
/// weight pi (r_out^2 - r_in^2) dz, so they telescope to pi R^2 L.
pub fn build_mesh(geometry: &Geometry, boundary: BoundaryMode) -> Result<Mesh, MeshError> {
    let Geometry {
        radius,
        length,
        nr,
        nz,
    } = *geometry;
    if nr < 1 {
        return Err(MeshError::InvalidDimensions(format!(
            "need at least one radial cell, got Nr = {nr}"
        )));
    }
    if nz < 2 {
        return Err(MeshError::InvalidDimensions(format!(
            "need at least two axial cells, got Nz = {nz}"
        )));
    }
    if !(radius > 0.0) || !(length > 0.0) {
        return Err(MeshError::InvalidDimensions(format!(
            "domain must have positive extent, got R = {radius}, L = {length}"
        )));
    }
    Ok(raw_mesh(radius, length, nr, nz, boundary))
}

/// A single sealed cell spanning the whole cylinder; used by the 0-D
/// membrane oracles (RC relaxation, current balance). Bypasses the
/// Nz >= 2 requirement of [`build_mesh`] on purpose.
pub fn single_cell_mesh(radius: f64, length: f64) -> Mesh {
    raw_mesh(radius, length, 1, 1, BoundaryMode::Sealed)
}

fn raw_mesh(radius: f64, length: f64, nr: usize, nz: usize, boundary: BoundaryMode) -> Mesh {
    let dr = radius / nr as f64;
    let dz = length / nz as f64;
    let mut ring_volume = Vec::with_capacity(nr);
    let mut z_face_area = Vec::with_capacity(nr);
    for ir in 0..nr {
        let r_in = ir as f64 * dr;
        let r_out = (ir + 1) as f64 * dr;
        let annulus = std::f64::consts::PI * (r_out * r_out - r_in * r_in);
        z_face_area.push(annulus);
        ring_volume.push(annulus * dz);
    }
    let r_face_area = (0..=nr)
        .map(|irf| 2.0 * std::f64::consts::PI * (irf as f64 * dr) * dz)
        .collect();
    Mesh {
        nr,
        nz,
        radius,
        length,
        dr,
        dz,
        boundary,
        ring_volume,
        r_face_area,
        z_face_area,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn geometry(nr: usize, nz: usize) -> Geometry {
        Geometry {
            radius: 1.5e-4,
            length: 3e-3,
            nr,
            nz,
        }
    }

    #[test]
    fn two_cell_mesh_volumes() {
        let m = build_mesh(&geometry(1, 2), BoundaryMode::Bath).unwrap();
        assert_eq!(m.n_cells(), 2);
        let expect = PI * 1.5e-4_f64.powi(2) * 3e-3 / 2.0;
        for cell in 0..2 {
            assert!((m.cell_volume(cell) - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn volumes_telescope_to_cylinder() {
        for (nr, nz) in [(1, 2), (3, 5), (8, 32), (13, 7)] {
            let m = build_mesh(&geometry(nr, nz), BoundaryMode::Bath).unwrap();
            let total: f64 = (0..m.n_cells()).map(|c| m.cell_volume(c)).sum();
            let expect = PI * m.radius * m.radius * m.length;
            assert!(
                (total - expect).abs() < 1e-12 * expect,
                "{nr}x{nz}: {total} vs {expect}"
            );
        }
    }

    #[test]
    fn lateral_face_area_is_cylinder_surface() {
        let m = build_mesh(&geometry(4, 6), BoundaryMode::Bath).unwrap();
        let expect = 2.0 * PI * m.radius * m.dz;
        assert!((m.r_face_area(4) - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(build_mesh(&geometry(0, 4), BoundaryMode::Bath).is_err());
        assert!(build_mesh(&geometry(2, 1), BoundaryMode::Bath).is_err());
        let mut g = geometry(2, 4);
        g.radius = 0.0;
        assert!(build_mesh(&g, BoundaryMode::Bath).is_err());
    }

    #[test]
    fn mesh_build_is_deterministic() {
        let a = build_mesh(&geometry(5, 9), BoundaryMode::Bath).unwrap();
        let b = build_mesh(&geometry(5, 9), BoundaryMode::Bath).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn boundary_tags() {
        let m = build_mesh(&geometry(3, 4), BoundaryMode::Bath).unwrap();
        assert_eq!(m.r_face_tag(Compartment::Ex, 3), FaceTag::Bath);
        assert_eq!(m.z_face_tag(Compartment::Ex, 0), FaceTag::Bath);
        assert_eq!(m.z_face_tag(Compartment::Ex, 4), FaceTag::Bath);
        assert_eq!(m.r_face_tag(Compartment::Ax, 3), FaceTag::Sealed);
        assert_eq!(m.r_face_tag(Compartment::Gl, 3), FaceTag::Sealed);
        assert_eq!(m.z_face_tag(Compartment::Gl, 0), FaceTag::Sealed);
        assert_eq!(m.r_face_tag(Compartment::Ex, 1), FaceTag::Interior);
        let sealed = build_mesh(&geometry(3, 4), BoundaryMode::Sealed).unwrap();
        assert_eq!(sealed.r_face_tag(Compartment::Ex, 3), FaceTag::Sealed);
    }

    #[test]
    fn uniform_axial_flux_has_zero_interior_divergence() {
        let m = build_mesh(&geometry(3, 6), BoundaryMode::Bath).unwrap();
        let mut flux = FaceValues::zeros(&m);
        for v in flux.z.iter_mut() {
            *v = 2.5;
        }
        let div = m.divergence(&flux, AxisPolicy::AxialOnly).unwrap();
        for iz in 0..m.nz {
            for ir in 0..m.nr {
                let d = div[m.cell_index(ir, iz)];
                assert!(d.abs() < 1e-9, "cell ({ir},{iz}): {d}");
            }
        }
    }

    #[test]
    fn discrete_divergence_theorem() {
        // sum of div * volume telescopes to the net boundary flux, exactly.
        let m = build_mesh(&geometry(4, 5), BoundaryMode::Bath).unwrap();
        let mut flux = FaceValues::zeros(&m);
        // Deterministic pseudo-random face values.
        let mut s = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for v in flux.r.iter_mut().chain(flux.z.iter_mut()) {
            *v = next();
        }
        let div = m.divergence(&flux, AxisPolicy::Full).unwrap();
        let total: f64 = (0..m.n_cells()).map(|c| div[c] * m.cell_volume(c)).sum();
        let mut boundary = 0.0;
        for iz in 0..m.nz {
            boundary += flux.r[iz * (m.nr + 1) + m.nr] * m.r_face_area(m.nr);
            // axis face has zero area
        }
        for ir in 0..m.nr {
            boundary += flux.z[m.nz * m.nr + ir] * m.z_face_area(ir);
            boundary -= flux.z[ir] * m.z_face_area(ir);
        }
        let scale: f64 = flux.r.iter().map(|v| v.abs()).sum::<f64>() * m.r_face_area(m.nr);
        assert!(
            (total - boundary).abs() <= 1e-12 * scale.max(boundary.abs()),
            "{total} vs {boundary}"
        );
    }

    #[test]
    fn inverse_radius_flux_is_divergence_free() {
        // f_r = a / r integrates to a constant across every annulus, so the
        // finite-volume divergence vanishes away from the axis ring.
        let m = build_mesh(&geometry(6, 4), BoundaryMode::Bath).unwrap();
        let a = 3.7;
        let mut flux = FaceValues::zeros(&m);
        for iz in 0..m.nz {
            for irf in 1..=m.nr {
                let r = irf as f64 * m.dr;
                flux.r[iz * (m.nr + 1) + irf] = a / r;
            }
        }
        let div = m.divergence(&flux, AxisPolicy::Full).unwrap();
        let scale = a / m.dr / m.dz; // magnitude of one face term / volume
        for iz in 0..m.nz {
            for ir in 1..m.nr {
                let d = div[m.cell_index(ir, iz)];
                assert!(d.abs() <= 1e-12 * scale, "ring {ir}: {d}");
            }
        }
    }

    #[test]
    fn gradient_exact_for_linear_fields() {
        let m = build_mesh(&geometry(4, 6), BoundaryMode::Sealed).unwrap();
        let constant: Vec<f64> = vec![4.2; m.n_cells()];
        let g = m.gradient_along_faces(&constant, Compartment::Gl, 0.0);
        assert!(g.r.iter().chain(g.z.iter()).all(|v| *v == 0.0));

        let linear: Vec<f64> = (0..m.n_cells())
            .map(|c| {
                let (_, iz) = m.cell_coords(c);
                m.z_center(iz)
            })
            .collect();
        let g = m.gradient_along_faces(&linear, Compartment::Gl, 0.0);
        for izf in 1..m.nz {
            for ir in 0..m.nr {
                let v = g.z[izf * m.nr + ir];
                assert!((v - 1.0).abs() < 1e-9, "{v}");
            }
        }
    }

    #[test]
    fn divergence_gradient_adjoint_identity() {
        // <div F, u> over volumes = boundary terms - <F, grad u> over faces.
        // With a sealed compartment the boundary terms vanish.
        let m = build_mesh(&geometry(3, 4), BoundaryMode::Sealed).unwrap();
        let mut s = 0x2545f4914f6cdd1du64;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let u: Vec<f64> = (0..m.n_cells()).map(|_| next()).collect();
        let mut flux = FaceValues::zeros(&m);
        // Interior faces only; sealed exterior carries no flux.
        for iz in 0..m.nz {
            for irf in 1..m.nr {
                flux.r[iz * (m.nr + 1) + irf] = next();
            }
        }
        for izf in 1..m.nz {
            for ir in 0..m.nr {
                flux.z[izf * m.nr + ir] = next();
            }
        }
        let div = m.divergence(&flux, AxisPolicy::Full).unwrap();
        let lhs: f64 = (0..m.n_cells())
            .map(|c| div[c] * u[c] * m.cell_volume(c))
            .sum();
        let grad = m.gradient_along_faces(&u, Compartment::Gl, 0.0);
        let mut rhs = 0.0;
        for iz in 0..m.nz {
            for irf in 1..m.nr {
                let idx = iz * (m.nr + 1) + irf;
                rhs -= flux.r[idx] * grad.r[idx] * m.r_face_area(irf) * m.dr;
            }
        }
        for izf in 1..m.nz {
            for ir in 0..m.nr {
                let idx = izf * m.nr + ir;
                rhs -= flux.z[idx] * grad.z[idx] * m.z_face_area(ir) * m.dz;
            }
        }
        assert!(
            (lhs - rhs).abs() < 1e-12 * lhs.abs().max(rhs.abs()).max(1e-9),
            "{lhs} vs {rhs}"
        );
    }

    #[test]
    fn laplacian_consistency_second_order() {
        // div(grad u) for a smooth manufactured u converges at order >= 2
        // on interior cells under refinement.
        let u_exact = |r: f64, z: f64| (PI * z / 3e-3).cos() * (1.0 + r * r / 1.5e-4 / 1.5e-4);
        let lap_exact = |r: f64, z: f64| {
            let k = PI / 3e-3;
            let a = 1.0 / (1.5e-4_f64 * 1.5e-4);
            // (1/r)(r u_r)_r + u_zz
            (k * z).cos() * (4.0 * a) - k * k * (k * z).cos() * (1.0 + a * r * r)
        };
        let mut errs = Vec::new();
        for lvl in 0..3 {
            let nr = 16 << lvl;
            let nz = 32 << lvl;
            let m = build_mesh(&geometry(nr, nz), BoundaryMode::Sealed).unwrap();
            let u: Vec<f64> = (0..m.n_cells())
                .map(|c| {
                    let (ir, iz) = m.cell_coords(c);
                    u_exact(m.r_center(ir), m.z_center(iz))
                })
                .collect();
            let grad = m.gradient_along_faces(&u, Compartment::Gl, 0.0);
            let lap = m.divergence(&grad, AxisPolicy::Full).unwrap();
            let mut max_err = 0.0f64;
            for iz in 2..m.nz - 2 {
                for ir in 1..m.nr - 1 {
                    let c = m.cell_index(ir, iz);
                    let e = (lap[c] - lap_exact(m.r_center(ir), m.z_center(iz))).abs();
                    max_err = max_err.max(e);
                }
            }
            errs.push(max_err);
        }
        let order1 = (errs[0] / errs[1]).log2();
        let order2 = (errs[1] / errs[2]).log2();
        assert!(
            order1 > 1.7 && order2 > 1.85,
            "observed orders {order1:.2}, {order2:.2} ({errs:?})"
        );
    }
}
