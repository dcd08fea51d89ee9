//! Room geometry, access-point layouts and channel synthesis.
//!
//! Every scalar channel is the free-space line-of-sight term plus one
//! specular image per active reflector, weighted by the reflector gain.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot_t, norm_sqr, pow_db, CMat, CVec, C64};
use crate::partitioning::Partition;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point3(pub [f64; 3]);

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self([x, y, z])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let d: f64 = (0..3).map(|i| (self.0[i] - other.0[i]).powi(2)).sum();
        d.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApId(pub u32);

impl std::fmt::Display for ApId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One of the six planar reflectors bounding the room.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reflector {
    WallX0,
    WallXMax,
    WallY0,
    WallYMax,
    Floor,
    Ceiling,
}

impl Reflector {
    pub const ALL: [Reflector; 6] = [
        Reflector::WallX0,
        Reflector::WallXMax,
        Reflector::WallY0,
        Reflector::WallYMax,
        Reflector::Floor,
        Reflector::Ceiling,
    ];

    fn mirror(&self, dims: &[f64; 3], p: &Point3) -> Point3 {
        let mut q = p.0;
        match self {
            Reflector::WallX0 => q[0] = -q[0],
            Reflector::WallXMax => q[0] = 2.0 * dims[0] - q[0],
            Reflector::WallY0 => q[1] = -q[1],
            Reflector::WallYMax => q[1] = 2.0 * dims[1] - q[1],
            Reflector::Floor => q[2] = -q[2],
            Reflector::Ceiling => q[2] = 2.0 * dims[2] - q[2],
        }
        Point3(q)
    }
}

fn all_reflectors() -> Vec<Reflector> {
    Reflector::ALL.to_vec()
}

fn default_g_smc() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomGeometry {
    #[serde(rename = "dims_m")]
    pub dims: [f64; 3],
    #[serde(default = "default_g_smc")]
    pub g_smc: f64,
    #[serde(default = "all_reflectors")]
    pub reflectors: Vec<Reflector>,
}

impl Default for RoomGeometry {
    fn default() -> Self {
        Self {
            dims: [20.0, 10.0, 4.0],
            g_smc: 0.5,
            reflectors: all_reflectors(),
        }
    }
}

impl RoomGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return invalid(format!("room dimensions must be positive, got {:?}", self.dims));
        }
        if !(0.0..=1.0).contains(&self.g_smc) {
            return invalid(format!("reflector gain must lie in [0, 1], got {}", self.g_smc));
        }
        if self.g_smc > 0.0 && self.reflectors.is_empty() {
            return invalid("reflector gain is positive but no reflector is active");
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p.0[i] > 0.0 && p.0[i] < self.dims[i])
    }
}

/// Mirror images of `p` across every active reflector of the room.
pub fn image_points(room: &RoomGeometry, p: &Point3) -> Result<Vec<Point3>> {
    if !room.contains(p) {
        return invalid(format!("point {:?} is not strictly inside the room", p.0));
    }
    Ok(room.reflectors.iter().map(|r| r.mirror(&room.dims, p)).collect())
}

/// Free-space amplitude `lambda / (4 pi d) * exp(-j 2 pi d / lambda)`.
pub fn los_gain(d: f64, wavelength: f64) -> Result<C64> {
    if !(d > 0.0) {
        return invalid(format!("path length must be positive, got {d}"));
    }
    Ok(C64::from_polar(wavelength / (4.0 * PI * d), -2.0 * PI * d / wavelength))
}

/// Channel coefficient between two points: direct path plus first-order
/// images of `b`.
pub fn channel_coefficient(room: &RoomGeometry, wavelength: f64, a: &Point3, b: &Point3) -> Result<C64> {
    let d = a.distance(b);
    if d < 1e-9 {
        return invalid(format!("coincident endpoints at {:?}", a.0));
    }
    let mut h = los_gain(d, wavelength)?;
    if room.g_smc > 0.0 {
        for r in &room.reflectors {
            let img = r.mirror(&room.dims, b);
            h += los_gain(a.distance(&img), wavelength)? * room.g_smc;
        }
    }
    Ok(h)
}

fn default_rows() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApSpec {
    pub id: ApId,
    #[serde(rename = "center_m")]
    pub center: Point3,
    /// Antenna count along z.
    #[serde(default = "default_rows")]
    pub rows: usize,
    /// Antenna count along x.
    #[serde(default = "default_rows")]
    pub cols: usize,
    /// Inter-antenna distance; half a wavelength when omitted.
    #[serde(rename = "spacing_m", default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    pub adc_bits: u32,
    #[serde(default)]
    pub is_ref: bool,
}

impl ApSpec {
    pub fn antennas(&self) -> usize {
        self.rows * self.cols
    }
}

/// Antenna grid of an AP in the x-z plane, row-major with z varying slowest.
pub fn antenna_positions(ap: &ApSpec, wavelength: f64) -> Vec<Point3> {
    let s = ap.spacing.unwrap_or(0.5 * wavelength);
    let c = ap.center;
    let mut out = Vec::with_capacity(ap.antennas());
    for r in 0..ap.rows {
        let dz = (r as f64 - (ap.rows as f64 - 1.0) / 2.0) * s;
        for k in 0..ap.cols {
            let dx = (k as f64 - (ap.cols as f64 - 1.0) / 2.0) * s;
            out.push(Point3::new(c.x() + dx, c.y(), c.z() + dz));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bde {
    #[serde(rename = "position_m")]
    pub position: Point3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub room: RoomGeometry,
    #[serde(rename = "wavelength_m")]
    pub wavelength: f64,
    pub aps: Vec<ApSpec>,
    pub bdes: Vec<Bde>,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_p_max() -> f64 {
    1.0
}

impl Scene {
    /// Eleven-AP reference layout: ten 4x4 arrays on the two long walls and a
    /// single-antenna 16-bit reference AP in the middle of the room.
    pub fn reference(adc_bits: u32) -> Self {
        let mut aps = Vec::new();
        let mut id = 1;
        for (y, xs) in [(1.0, [2.0, 5.0, 8.0, 11.0, 14.0]), (9.0, [5.0, 8.0, 11.0, 14.0, 17.0])] {
            for x in xs {
                aps.push(ApSpec {
                    id: ApId(id),
                    center: Point3::new(x, y, 2.0),
                    rows: 4,
                    cols: 4,
                    spacing: None,
                    adc_bits,
                    is_ref: false,
                });
                id += 1;
            }
        }
        aps.push(ApSpec {
            id: ApId(11),
            center: Point3::new(10.0, 5.0, 2.0),
            rows: 1,
            cols: 1,
            spacing: None,
            adc_bits: 16,
            is_ref: true,
        });
        Self {
            room: RoomGeometry::default(),
            wavelength: 0.1,
            aps,
            bdes: vec![Bde { position: Point3::new(4.0, 4.0, 2.0) }],
            p_max: 1.0,
            rng_seed: 1,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let scene: Scene = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        if !(self.wavelength > 0.0) {
            return invalid("wavelength must be positive");
        }
        if self.aps.len() < 2 {
            return invalid("a scene needs at least two APs");
        }
        if self.bdes.is_empty() {
            return invalid("a scene needs at least one BDE");
        }
        if !(self.p_max > 0.0) {
            return invalid("p_max must be positive");
        }
        let refs = self.aps.iter().filter(|a| a.is_ref).count();
        if refs != 1 {
            return invalid(format!("exactly one reference AP required, found {refs}"));
        }
        let mut ids: Vec<ApId> = self.aps.iter().map(|a| a.id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.aps.len() {
            return invalid("AP ids must be unique");
        }
        for ap in &self.aps {
            if ap.antennas() == 0 {
                return invalid(format!("AP {} has no antennas", ap.id));
            }
            if ap.adc_bits == 0 {
                return invalid(format!("AP {} must have at least one ADC bit", ap.id));
            }
            for p in antenna_positions(ap, self.wavelength) {
                if !self.room.contains(&p) {
                    return invalid(format!("AP {} antenna {:?} lies outside the room", ap.id, p.0));
                }
            }
        }
        for b in &self.bdes {
            if !self.room.contains(&b.position) {
                return invalid(format!("BDE {:?} lies outside the room", b.position.0));
            }
        }
        Ok(())
    }

    pub fn ref_id(&self) -> ApId {
        self.aps.iter().find(|a| a.is_ref).map(|a| a.id).expect("validated scene has a reference AP")
    }

    pub fn ap_ids(&self) -> Vec<ApId> {
        self.aps.iter().map(|a| a.id).collect()
    }

    pub fn ap(&self, id: ApId) -> Option<&ApSpec> {
        self.aps.iter().find(|a| a.id == id)
    }

    pub fn with_bdes(&self, positions: &[Point3]) -> Self {
        let mut s = self.clone();
        s.bdes = positions.iter().map(|p| Bde { position: *p }).collect();
        s
    }

    /// Same scene with the reference AP resized to a `rows x cols` array.
    pub fn with_ref_array(&self, rows: usize, cols: usize) -> Self {
        let mut s = self.clone();
        for ap in s.aps.iter_mut().filter(|a| a.is_ref) {
            ap.rows = rows;
            ap.cols = cols;
        }
        s
    }

    pub fn with_adc_bits(&self, bits: u32) -> Self {
        let mut s = self.clone();
        for ap in s.aps.iter_mut().filter(|a| !a.is_ref) {
            ap.adc_bits = bits;
        }
        s
    }
}

#[derive(Clone, Debug)]
struct ApBlock {
    id: ApId,
    offset: usize,
    len: usize,
    bits: u32,
    is_ref: bool,
}

/// All channels of a scene before any role assignment: per-BDE AP vectors
/// and the full antenna-to-antenna direct-link matrix.
#[derive(Clone, Debug)]
pub struct SceneChannels {
    blocks: Vec<ApBlock>,
    links: Vec<Vec<CVec>>,
    direct: CMat,
}

impl SceneChannels {
    pub fn synthesize(scene: &Scene) -> Result<Self> {
        scene.validate()?;
        let mut blocks = Vec::new();
        let mut positions = Vec::new();
        for ap in &scene.aps {
            let p = antenna_positions(ap, scene.wavelength);
            blocks.push(ApBlock {
                id: ap.id,
                offset: positions.len(),
                len: p.len(),
                bits: ap.adc_bits,
                is_ref: ap.is_ref,
            });
            positions.extend(p);
        }
        let mut links = Vec::with_capacity(scene.bdes.len());
        for bde in &scene.bdes {
            let mut per_ap = Vec::with_capacity(blocks.len());
            for b in &blocks {
                let v: Result<Vec<C64>> = positions[b.offset..b.offset + b.len]
                    .iter()
                    .map(|a| channel_coefficient(&scene.room, scene.wavelength, a, &bde.position))
                    .collect();
                per_ap.push(CVec::from_vec(v?));
            }
            links.push(per_ap);
        }
        let n = positions.len();
        let mut owner = vec![0usize; n];
        for (i, b) in blocks.iter().enumerate() {
            owner[b.offset..b.offset + b.len].iter_mut().for_each(|o| *o = i);
        }
        let mut direct = CMat::zeros(n, n);
        for r in 0..n {
            for k in (r + 1)..n {
                if owner[r] == owner[k] {
                    continue;
                }
                let h = channel_coefficient(&scene.room, scene.wavelength, &positions[r], &positions[k])?;
                direct[(r, k)] = h;
                direct[(k, r)] = h;
            }
        }
        Ok(Self { blocks, links, direct })
    }

    pub fn num_bdes(&self) -> usize {
        self.links.len()
    }

    pub fn ap_ids(&self) -> Vec<ApId> {
        self.blocks.iter().map(|b| b.id).collect()
    }

    pub fn ref_id(&self) -> ApId {
        self.blocks.iter().find(|b| b.is_ref).map(|b| b.id).expect("reference AP present")
    }

    fn block(&self, id: ApId) -> Result<&ApBlock> {
        self.blocks
            .iter()
            .find(|b| b.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown AP id {id}")))
    }

    pub fn antennas(&self, id: ApId) -> Result<usize> {
        Ok(self.block(id)?.len)
    }

    pub fn adc_bits(&self, id: ApId) -> Result<u32> {
        Ok(self.block(id)?.bits)
    }

    /// Channel between AP `id` and BDE `bde`.
    pub fn link(&self, bde: usize, id: ApId) -> Result<&CVec> {
        let i = self.blocks.iter().position(|b| b.id == id).ok_or_else(|| Error::InvalidInput(format!("unknown AP id {id}")))?;
        self.links
            .get(bde)
            .map(|v| &v[i])
            .ok_or_else(|| Error::InvalidInput(format!("unknown BDE index {bde}")))
    }

    /// Per-AP channel energies `||h_l||^2` for BDE `bde`, in AP order.
    pub fn link_gains(&self, bde: usize) -> Result<Vec<(ApId, f64)>> {
        self.blocks.iter().map(|b| Ok((b.id, norm_sqr(self.link(bde, b.id)?)))).collect()
    }

    /// Copy with the AP channels of BDE `bde` replaced, e.g. by estimates.
    pub fn with_links(&self, bde: usize, links: Vec<(ApId, CVec)>) -> Result<Self> {
        let mut out = self.clone();
        for (id, v) in links {
            let i = self.blocks.iter().position(|b| b.id == id).ok_or_else(|| Error::InvalidInput(format!("unknown AP id {id}")))?;
            if v.len() != self.blocks[i].len {
                return invalid(format!("channel for AP {id} has wrong length"));
            }
            out.links[bde][i] = v;
        }
        Ok(out)
    }

    /// Copy with every non-reference AP switched to `bits` ADC bits.
    pub fn with_adc_bits(&self, bits: u32) -> Self {
        let mut out = self.clone();
        for b in out.blocks.iter_mut().filter(|b| !b.is_ref) {
            b.bits = bits;
        }
        out
    }

    /// Assembles the partition-specific channels for one BDE.
    pub fn for_partition(&self, partition: &Partition, bde: usize) -> Result<ChannelSet> {
        if bde >= self.links.len() {
            return invalid(format!("unknown BDE index {bde}"));
        }
        if partition.ref_id() != self.ref_id() {
            return invalid("partition reference AP differs from the scene reference AP");
        }
        let mut all: Vec<ApId> = partition.ce().iter().chain(partition.readers()).cloned().collect();
        all.sort();
        if all != {
            let mut ids = self.ap_ids();
            ids.sort();
            ids
        } {
            return invalid("partition does not cover the scene APs exactly");
        }
        self.for_partial(partition, bde)
    }

    /// Like `for_partition` but APs missing from the partition are left out,
    /// as if switched off.
    pub fn for_partial(&self, partition: &Partition, bde: usize) -> Result<ChannelSet> {
        if bde >= self.links.len() {
            return invalid(format!("unknown BDE index {bde}"));
        }
        if partition.ref_id() != self.ref_id() {
            return invalid("partition reference AP differs from the scene reference AP");
        }
        let gather = |ids: &[ApId]| -> Result<(CVec, Vec<usize>)> {
            let mut vals = Vec::new();
            let mut rows = Vec::new();
            for id in ids {
                let b = self.block(*id)?;
                vals.extend(self.link(bde, *id)?.iter().cloned());
                rows.extend(b.offset..b.offset + b.len);
            }
            Ok((CVec::from_vec(vals), rows))
        };
        let (h_c, ce_rows) = gather(partition.ce())?;
        let (h_r, r_rows) = gather(partition.readers())?;
        let h_dl = CMat::from_fn(r_rows.len(), ce_rows.len(), |r, k| self.direct[(r_rows[r], ce_rows[k])]);
        let mut ref_rows = Vec::new();
        let mut reader_bits = Vec::new();
        let mut pos = 0;
        for id in partition.readers() {
            let b = self.block(*id)?;
            for _ in 0..b.len {
                if b.is_ref {
                    ref_rows.push(pos);
                }
                reader_bits.push(b.bits);
                pos += 1;
            }
        }
        Ok(ChannelSet {
            partition: partition.clone(),
            h_c,
            h_r,
            h_dl,
            ref_rows,
            reader_bits,
        })
    }

    /// Channel sets of every BDE for one partition.
    pub fn for_partition_all(&self, partition: &Partition) -> Result<Vec<ChannelSet>> {
        (0..self.links.len()).map(|k| self.for_partition(partition, k)).collect()
    }
}

/// Channels of one BDE under a fixed partition.
#[derive(Clone, Debug)]
pub struct ChannelSet {
    pub partition: Partition,
    /// CE antennas to BDE.
    pub h_c: CVec,
    /// Reader antennas to BDE.
    pub h_r: CVec,
    /// CE antennas to reader antennas (readers index rows).
    pub h_dl: CMat,
    /// Reader rows that belong to the reference AP.
    pub ref_rows: Vec<usize>,
    pub reader_bits: Vec<u32>,
}

impl ChannelSet {
    pub fn n_c(&self) -> usize {
        self.h_c.len()
    }

    pub fn n_r(&self) -> usize {
        self.h_r.len()
    }

    pub fn h_bl(&self) -> CMat {
        &self.h_r * self.h_c.transpose()
    }

    pub fn non_ref_rows(&self) -> Vec<usize> {
        (0..self.n_r()).filter(|r| !self.ref_rows.contains(r)).collect()
    }

    /// Direct-link matrix with the reference-AP rows removed.
    pub fn h_dl_prime(&self) -> CMat {
        let rows = self.non_ref_rows();
        CMat::from_fn(rows.len(), self.n_c(), |r, k| self.h_dl[(rows[r], k)])
    }

    /// Replaces the BDE links, keeping geometry-dependent fields.
    pub fn with_links(&self, h_c: CVec, h_r: CVec) -> Result<Self> {
        if h_c.len() != self.n_c() || h_r.len() != self.n_r() {
            return invalid("replacement channel dimensions do not match");
        }
        Ok(Self { h_c, h_r, ..self.clone() })
    }
}

/// Convenience wrapper: synthesize a scene and assemble the channels of its
/// first BDE for `partition`.
pub fn synth_channels(scene: &Scene, partition: &Partition) -> Result<ChannelSet> {
    SceneChannels::synthesize(scene)?.for_partition(partition, 0)
}

/// Received-to-transmitted energy ratio `|h^T x|^2 / ||x||^2`.
pub fn path_gain(x: &CVec, h: &CVec) -> Result<f64> {
    if x.len() != h.len() {
        return invalid("path gain dimension mismatch");
    }
    let p = norm_sqr(x);
    if !(p > 0.0) {
        return invalid("path gain of an all-zero beamformer is undefined");
    }
    Ok(dot_t(h, x).norm_sqr() / p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub ny: usize,
    pub z: f64,
}

impl GridSpec {
    /// Cell-centred grid covering the whole floor plan at height `z`.
    pub fn covering(room: &RoomGeometry, nx: usize, ny: usize, z: f64) -> Self {
        Self { x_min: 0.0, x_max: room.dims[0], nx, y_min: 0.0, y_max: room.dims[1], ny, z }
    }

    pub fn points(&self) -> Vec<Point3> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        let dx = (self.x_max - self.x_min) / self.nx as f64;
        let dy = (self.y_max - self.y_min) / self.ny as f64;
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(Point3::new(
                    self.x_min + (i as f64 + 0.5) * dx,
                    self.y_min + (j as f64 + 0.5) * dy,
                    self.z,
                ));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgSample {
    pub x: f64,
    pub y: f64,
    pub pg: f64,
}

impl PgSample {
    pub fn pg_db(&self) -> f64 {
        pow_db(self.pg)
    }
}

/// Channel from the CE antennas of `partition` to an arbitrary probe point.
pub fn probe_channel(scene: &Scene, partition: &Partition, probe: &Point3) -> Result<CVec> {
    let mut vals = Vec::new();
    for id in partition.ce() {
        let ap = scene.ap(*id).ok_or_else(|| Error::InvalidInput(format!("unknown AP id {id}")))?;
        for a in antenna_positions(ap, scene.wavelength) {
            vals.push(channel_coefficient(&scene.room, scene.wavelength, &a, probe)?);
        }
    }
    Ok(CVec::from_vec(vals))
}

/// Path gain of beamformer `x` sampled on a horizontal grid. Grid points that
/// coincide with an antenna are skipped.
pub fn pg_map(scene: &Scene, partition: &Partition, x: &CVec, grid: &GridSpec) -> Result<Vec<PgSample>> {
    if norm_sqr(x) == 0.0 {
        return invalid("path-gain map of an all-zero beamformer is undefined");
    }
    let mut out = Vec::new();
    for p in grid.points() {
        if !scene.room.contains(&p) {
            return invalid(format!("grid point {:?} outside the room", p.0));
        }
        match probe_channel(scene, partition, &p) {
            Ok(h) => out.push(PgSample { x: p.x(), y: p.y(), pg: path_gain(x, &h)? }),
            Err(Error::InvalidInput(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
