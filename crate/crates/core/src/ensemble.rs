//! Multi-D2 state: coefficients, coherent-state displacements, overlaps and
//! the bookkeeping of merged (connected) coherent states.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::c64;

/// Overlap of two normalized multi-mode coherent states,
/// `exp(-|a|^2/2 - |b|^2/2 + a^* . b)`.
pub fn overlap(alpha_l: ArrayView1<c64>, alpha_k: ArrayView1<c64>) -> Result<c64> {
    check_dim("overlap", alpha_l.len(), alpha_k.len())?;
    Ok(overlap_unchecked(alpha_l, alpha_k))
}

pub(crate) fn overlap_unchecked(alpha_l: ArrayView1<c64>, alpha_k: ArrayView1<c64>) -> c64 {
    let mut exponent = c64::new(0.0, 0.0);
    for (a, b) in alpha_l.iter().zip(alpha_k.iter()) {
        exponent += a.conj() * b - 0.5 * a.norm_sqr() - 0.5 * b.norm_sqr();
    }
    exponent.exp()
}

/// Euclidean distance on `C^N`.
pub fn distance(alpha_l: ArrayView1<c64>, alpha_k: ArrayView1<c64>) -> Result<f64> {
    check_dim("distance", alpha_l.len(), alpha_k.len())?;
    Ok(distance_unchecked(alpha_l, alpha_k))
}

pub(crate) fn distance_unchecked(alpha_l: ArrayView1<c64>, alpha_k: ArrayView1<c64>) -> f64 {
    alpha_l
        .iter()
        .zip(alpha_k.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Overlap matrix `S_lk` for the rows of `displacements`. The lower triangle
/// is the conjugate of the upper one, so the result is Hermitian bit for bit.
pub fn overlap_matrix(displacements: &Array2<c64>) -> Array2<c64> {
    let m = displacements.nrows();
    let mut s = Array2::from_elem((m, m), c64::new(1.0, 0.0));
    for l in 0..m {
        for k in (l + 1)..m {
            let v = overlap_unchecked(displacements.row(l), displacements.row(k));
            s[[l, k]] = v;
            s[[k, l]] = v.conj();
        }
    }
    s
}

/// `rho_lk = sum_n A*_nl A_nk`, Hermitian by construction.
pub fn coefficient_gram(coefficients: &Array2<c64>) -> Array2<c64> {
    let m = coefficients.ncols();
    let mut rho = Array2::zeros((m, m));
    for l in 0..m {
        for k in l..m {
            let v: c64 = coefficients
                .column(l)
                .iter()
                .zip(coefficients.column(k).iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            rho[[l, k]] = v;
            rho[[k, l]] = v.conj();
        }
    }
    for l in 0..m {
        rho[[l, l]].im = 0.0;
    }
    rho
}

/// A coherent state tied rigidly to its group's representative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub index: usize,
    /// Frozen displacement offset relative to the representative.
    pub offset: Vec<c64>,
}

/// A connected component of merged coherent states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub representative: usize,
    /// Non-representative members, sorted by index.
    pub members: Vec<Member>,
}

impl Group {
    pub fn singleton(index: usize) -> Self {
        Group {
            representative: index,
            members: Vec::new(),
        }
    }

    /// Representative followed by the members in index order.
    pub fn indices(&self) -> Vec<usize> {
        let mut v = vec![self.representative];
        v.extend(self.members.iter().map(|m| m.index));
        v
    }

    pub fn len(&self) -> usize {
        1 + self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub pair: (usize, usize),
    pub distance: f64,
}

/// One apoptosis event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub time: f64,
    /// All indices of the resulting group, sorted.
    pub indices: Vec<usize>,
    pub representative: usize,
    pub distances: Vec<PairDistance>,
    /// True when the merge was triggered by a singular solve inside a step.
    #[serde(default)]
    pub forced: bool,
}

/// Partition of the coherent-state labels into rigidly co-moving groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityPartition {
    size: usize,
    groups: Vec<Group>,
    events: Vec<MergeEvent>,
}

impl ConnectivityPartition {
    pub fn trivial(size: usize) -> Self {
        ConnectivityPartition {
            size,
            groups: (0..size).map(Group::singleton).collect(),
            events: Vec::new(),
        }
    }

    /// Builds a partition from explicit groups; groups are re-sorted by
    /// representative and validated.
    pub fn from_groups(size: usize, mut groups: Vec<Group>, events: Vec<MergeEvent>) -> Result<Self> {
        for g in &mut groups {
            g.members.sort_by_key(|m| m.index);
        }
        groups.sort_by_key(|g| g.representative);
        let p = ConnectivityPartition {
            size,
            groups,
            events,
        };
        p.validate_labels()?;
        Ok(p)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn events(&self) -> &[MergeEvent] {
        &self.events
    }

    pub fn is_trivial(&self) -> bool {
        self.groups.len() == self.size
    }

    pub fn representatives(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.representative).collect()
    }

    /// Group position of every coherent-state label.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![usize::MAX; self.size];
        for (gi, g) in self.groups.iter().enumerate() {
            labels[g.representative] = gi;
            for m in &g.members {
                labels[m.index] = gi;
            }
        }
        labels
    }

    /// Free displacement parameters for `modes` bath modes.
    pub fn free_parameter_count(&self, modes: usize) -> usize {
        modes * self.groups.len()
    }

    pub(crate) fn push_event(&mut self, event: MergeEvent) {
        self.events.push(event);
    }

    pub(crate) fn replace_groups(&mut self, groups: Vec<Group>) -> Result<()> {
        let events = std::mem::take(&mut self.events);
        *self = ConnectivityPartition::from_groups(self.size, groups, events)?;
        Ok(())
    }

    fn validate_labels(&self) -> Result<()> {
        let mut seen = vec![false; self.size];
        let mut mark = |i: usize| -> Result<()> {
            if i >= self.size {
                return Err(Error::Partition(format!("index {i} out of range {}", self.size)));
            }
            if seen[i] {
                return Err(Error::Partition(format!("index {i} appears twice")));
            }
            seen[i] = true;
            Ok(())
        };
        for g in &self.groups {
            mark(g.representative)?;
            for m in &g.members {
                mark(m.index)?;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Partition(format!("index {i} belongs to no group")));
        }
        Ok(())
    }

    /// Checks the partition property and offset lengths against `modes`.
    pub fn validate(&self, modes: usize) -> Result<()> {
        self.validate_labels()?;
        for g in &self.groups {
            for m in &g.members {
                check_dim("member offset", modes, m.offset.len())?;
            }
        }
        Ok(())
    }
}

/// The variational state at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleState {
    /// `N_S x M` coefficients.
    pub coefficients: Array2<c64>,
    /// `M x N` displacements.
    pub displacements: Array2<c64>,
    pub partition: ConnectivityPartition,
    pub time: f64,
}

impl EnsembleState {
    /// A state with the trivial partition.
    pub fn new(coefficients: Array2<c64>, displacements: Array2<c64>, time: f64) -> Result<Self> {
        let m = displacements.nrows();
        let state = EnsembleState {
            coefficients,
            displacements,
            partition: ConnectivityPartition::trivial(m),
            time,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn system_dim(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn multiplicity(&self) -> usize {
        self.displacements.nrows()
    }

    pub fn mode_count(&self) -> usize {
        self.displacements.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, m) = self.coefficients.dim();
        let (m2, n) = self.displacements.dim();
        if ns == 0 || m == 0 || n == 0 {
            return Err(Error::Config("empty ensemble dimensions".into()));
        }
        check_dim("coefficient columns vs displacement rows", m, m2)?;
        check_dim("partition size", m, self.partition.size())?;
        self.partition.validate(n)?;
        let finite = self.coefficients.iter().chain(self.displacements.iter()).all(|z| z.re.is_finite() && z.im.is_finite());
        if !finite || !self.time.is_finite() {
            return Err(Error::Contract("non-finite entry in ensemble state".into()));
        }
        Ok(())
    }

    pub fn overlap_matrix(&self) -> Array2<c64> {
        overlap_matrix(&self.displacements)
    }

    /// `<Psi|Psi> = sum_lk rho_lk S_lk`.
    pub fn norm_squared(&self) -> f64 {
        let s = self.overlap_matrix();
        let rho = coefficient_gram(&self.coefficients);
        rho.iter().zip(s.iter()).map(|(r, s)| (r * s).re).sum()
    }

    /// Rewrites each member row as representative row plus frozen offset.
    pub fn sync_members(&mut self) {
        for g in self.partition.groups() {
            let rep = self.displacements.row(g.representative).to_owned();
            for m in &g.members {
                for (j, c) in m.offset.iter().enumerate() {
                    self.displacements[[m.index, j]] = rep[j] + c;
                }
            }
        }
    }

    /// Largest deviation of a member row from representative plus offset.
    pub fn member_sync_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for g in self.partition.groups() {
            for m in &g.members {
                for (j, c) in m.offset.iter().enumerate() {
                    let expect = self.displacements[[g.representative, j]] + c;
                    let scale = expect.norm().max(1.0);
                    worst = worst.max((self.displacements[[m.index, j]] - expect).norm() / scale);
                }
            }
        }
        worst
    }

    /// Closest pair of distinct groups, measured over all their members and
    /// reported by representatives.
    pub fn closest_free_pair(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (a, b, d) in self.group_distances() {
            if best.is_none_or(|(_, _, bd)| d < bd) {
                best = Some((a, b, d));
            }
        }
        best
    }

    /// Smallest member-to-member distance for every pair of groups, keyed by
    /// representatives (`a < b`).
    pub fn group_distances(&self) -> Vec<(usize, usize, f64)> {
        let labels = self.partition.labels();
        let reps = self.partition.representatives();
        let g = reps.len();
        let mut dist = vec![f64::INFINITY; g * g];
        let m = self.multiplicity();
        for a in 0..m {
            for b in a + 1..m {
                let (ga, gb) = (labels[a].min(labels[b]), labels[a].max(labels[b]));
                if ga == gb {
                    continue;
                }
                let d = distance_unchecked(self.displacements.row(a), self.displacements.row(b));
                let slot = &mut dist[ga * g + gb];
                if d < *slot {
                    *slot = d;
                }
            }
        }
        let mut out = Vec::with_capacity(g * (g.max(1) - 1) / 2);
        for ga in 0..g {
            for gb in ga + 1..g {
                let (ra, rb) = (reps[ga], reps[gb]);
                out.push((ra.min(rb), ra.max(rb), dist[ga * g + gb]));
            }
        }
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let rows = |a: &Array2<c64>| a.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        Checkpoint {
            version: Checkpoint::VERSION,
            time: self.time,
            coefficients: rows(&self.coefficients),
            displacements: rows(&self.displacements),
            partition: self.partition.clone(),
        }
    }
}

/// Serializable snapshot of an [`EnsembleState`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub time: f64,
    pub coefficients: Vec<Vec<c64>>,
    pub displacements: Vec<Vec<c64>>,
    pub partition: ConnectivityPartition,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn into_state(self) -> Result<EnsembleState> {
        if self.version != Self::VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", self.version)));
        }
        let to_array = |rows: Vec<Vec<c64>>, what: &'static str| -> Result<Array2<c64>> {
            let nr = rows.len();
            let nc = rows.first().map_or(0, |r| r.len());
            for r in &rows {
                check_dim(what, nc, r.len())?;
            }
            let flat: Vec<c64> = rows.into_iter().flatten().collect();
            Array2::from_shape_vec((nr, nc), flat).map_err(|e| Error::Config(e.to_string()))
        };
        let state = EnsembleState {
            coefficients: to_array(self.coefficients, "checkpoint coefficients")?,
            displacements: to_array(self.displacements, "checkpoint displacements")?,
            partition: self.partition,
            time: self.time,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Physical initial condition supplied by a model.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialCondition {
    pub system: Array1<c64>,
    pub displacement: Array1<c64>,
    /// Mode directions used for lattice offsets, most important first.
    pub embedding: Vec<usize>,
    /// Mode permutation of a reflection symmetry, if the model has one.
    pub mode_mirror: Option<Vec<usize>>,
    /// Matching permutation of the system states.
    pub system_mirror: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialSettings {
    pub multiplicity: usize,
    pub noise: f64,
    pub grid_spacing: f64,
    pub seed: u64,
    /// Pairwise distances must exceed this value.
    pub min_distance: f64,
}

impl Default for InitialSettings {
    fn default() -> Self {
        InitialSettings {
            multiplicity: 1,
            noise: 1e-6,
            grid_spacing: 1.0,
            seed: 0,
            min_distance: 0.05,
        }
    }
}

/// Rank of a point of the square lattice along an outward square spiral.
pub fn spiral_rank(x: i64, y: i64) -> u64 {
    let r = x.abs().max(y.abs());
    if r == 0 {
        return 0;
    }
    let base = (2 * r - 1) * (2 * r - 1);
    let off = if x == r && y > -r {
        y + r - 1
    } else if y == r {
        2 * r - 1 + (r - x)
    } else if x == -r {
        4 * r - 1 + (r - y)
    } else {
        6 * r - 1 + (x + r)
    };
    (base + off) as u64
}

/// Nonzero points of `Z^(2 planes)` with squared norm at most `bound`, in
/// placement order: squared norm, then per-plane spiral ranks compared from
/// the last plane down.
pub fn lattice_points(planes: usize, bound: i64) -> Vec<Vec<(i64, i64)>> {
    let r = (bound as f64).sqrt().floor() as i64;
    let mut out = Vec::new();
    let mut cur = vec![0i64; 2 * planes];
    fn rec(pos: usize, rem: i64, r: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in -r..=r {
            if v * v <= rem {
                cur[pos] = v;
                rec(pos + 1, rem - v * v, r, cur, out);
            }
        }
        cur[pos] = 0;
    }
    let mut flat = Vec::new();
    rec(0, bound, r, &mut cur, &mut flat);
    for p in flat {
        if p.iter().all(|&v| v == 0) {
            continue;
        }
        out.push(p.chunks(2).map(|c| (c[0], c[1])).collect::<Vec<_>>());
    }
    out.sort_by_key(|p: &Vec<(i64, i64)>| {
        let n2: i64 = p.iter().map(|(x, y)| x * x + y * y).sum();
        let ranks: Vec<u64> = p.iter().rev().map(|&(x, y)| spiral_rank(x, y)).collect();
        (n2, ranks)
    });
    out
}

/// Integer offsets for the unpopulated coherent states, as `(mode, x, y)`
/// triples; symmetric models receive mirror-closed sets.
fn lattice_offsets(
    count: usize,
    modes: usize,
    embedding: &[usize],
    mirror: Option<&[usize]>,
) -> Result<Vec<Vec<(i64, i64)>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let needed = count + 1;
    let planes = ((needed as f64).log2().ceil() as usize).clamp(1, embedding.len().min(modes));
    let dirs = &embedding[..planes];
    let mut bound = 1;
    loop {
        let mut chosen: Vec<Vec<(i64, i64)>> = Vec::new();
        let mut taken: BTreeSet<Vec<(i64, i64)>> = BTreeSet::new();
        for p in lattice_points(planes, bound) {
            if chosen.len() == count {
                break;
            }
            let mut full = vec![(0i64, 0i64); modes];
            for (d, &mode) in dirs.iter().enumerate() {
                full[mode] = p[d];
            }
            if taken.contains(&full) {
                continue;
            }
            match mirror {
                None => {
                    taken.insert(full.clone());
                    chosen.push(full);
                }
                Some(sigma) => {
                    let image: Vec<(i64, i64)> = (0..modes).map(|j| full[sigma[j]]).collect();
                    if image == full {
                        taken.insert(full.clone());
                        chosen.push(full);
                    } else if count - chosen.len() >= 2 && !taken.contains(&image) {
                        taken.insert(full.clone());
                        taken.insert(image.clone());
                        chosen.push(full);
                        chosen.push(image);
                    }
                }
            }
        }
        if chosen.len() == count {
            return Ok(chosen);
        }
        bound += 1;
        if bound > 64 {
            return Err(Error::Config(format!("lattice cannot host {needed} coherent states")));
        }
    }
}

/// Places CS #0 at the physical initial condition and the remaining
/// `M - 1` coherent states on lattice offsets around it, each carrying
/// a small coefficient of magnitude `noise` with a seeded phase.
pub fn build_initial_state(initial: &InitialCondition, settings: &InitialSettings) -> Result<EnsembleState> {
    let m = settings.multiplicity;
    let ns = initial.system.len();
    let n = initial.displacement.len();
    if m == 0 || ns == 0 || n == 0 {
        return Err(Error::Config("multiplicity, system and mode counts must be positive".into()));
    }
    if !(settings.noise >= 0.0) || !(settings.grid_spacing > 0.0) {
        return Err(Error::Config("noise must be >= 0 and grid spacing > 0".into()));
    }
    if let Some(sigma) = &initial.mode_mirror {
        check_dim("mode mirror", n, sigma.len())?;
    }
    if let Some(sigma) = &initial.system_mirror {
        check_dim("system mirror", ns, sigma.len())?;
    }
    let offsets = lattice_offsets(m - 1, n, &initial.embedding, initial.mode_mirror.as_deref())?;

    let mut f = Array2::zeros((m, n));
    f.row_mut(0).assign(&initial.displacement);
    for (k, off) in offsets.iter().enumerate() {
        for j in 0..n {
            let (x, y) = off[j];
            f[[k + 1, j]] = initial.displacement[j] + settings.grid_spacing * c64::new(x as f64, y as f64);
        }
    }

    let mut a = Array2::zeros((ns, m));
    a.column_mut(0).assign(&initial.system);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let two_pi = 2.0 * std::f64::consts::PI;
    match (&initial.mode_mirror, &initial.system_mirror) {
        (Some(sigma), Some(_)) => {
            // One phase per column, shared by mirror partners, so the seeded
            // state keeps the reflection symmetry.
            let mut phase = vec![None::<f64>; m];
            for k in 1..m {
                if phase[k].is_some() {
                    continue;
                }
                let ph = rng.random::<f64>() * two_pi;
                phase[k] = Some(ph);
                let image: Vec<(i64, i64)> = (0..n).map(|j| offsets[k - 1][sigma[j]]).collect();
                if let Some(p) = offsets.iter().position(|o| *o == image) {
                    phase[p + 1] = Some(ph);
                }
            }
            for k in 1..m {
                let z = c64::from_polar(settings.noise, phase[k].unwrap_or(0.0));
                a.column_mut(k).fill(z);
            }
        }
        _ => {
            for k in 1..m {
                for nn in 0..ns {
                    a[[nn, k]] = c64::from_polar(settings.noise, rng.random::<f64>() * two_pi);
                }
            }
        }
    }

    let mut state = EnsembleState::new(a, f, 0.0)?;
    if let Some((i, j, d)) = state.closest_free_pair() {
        if d <= settings.min_distance {
            return Err(Error::Config(format!(
                "initial coherent states {i} and {j} are only {d:.3e} apart"
            )));
        }
    }
    let norm = state.norm_squared();
    if !(norm > 0.0) {
        return Err(Error::Config("initial state has zero norm".into()));
    }
    state.coefficients.mapv_inplace(|z| z / norm.sqrt());
    Ok(state)
}
