//! Non-uniform clamped B-splines in matrix form.
//!
//! A trajectory is stored as `(degree, control points, spans, t_start)`. The full
//! knot vector is derived on demand: `t_start` and `t_end` each appear with
//! multiplicity `degree + 1`, interior knots are the running sums of the spans.
//! Segment `j` covers `[t_start + Σ_{l<j} Δt_l, t_start + Σ_{l≤j} Δt_l]` and is
//! shaped by control points `Q_j ..= Q_{j+p}`.
//!
//! Per-segment evaluation uses the basic matrix `M` of the segment:
//! `C(u) = [1, u, …, u^p] · M · [Q_j; …; Q_{j+p}]` with `u ∈ [0, 1]`.

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};

/// Spans shorter than this are rejected when constructing a trajectory.
pub const MIN_SPAN: f64 = 1e-9;

pub type Point = Vector3<f64>;

/// Clamped knot vector for the given spans: boundary values repeated `degree + 1` times.
pub fn clamped_knots(spans: &[f64], degree: usize, t_start: f64) -> Result<Vec<f64>> {
    if spans.is_empty() {
        return Err(Error::DegenerateTrajectory("empty span list".into()));
    }
    if let Some(idx) = spans.iter().position(|s| !(*s >= 0.0)) {
        return Err(Error::NegativeSpan(idx));
    }
    let mut knots = Vec::with_capacity(spans.len() + 2 * degree + 1);
    knots.extend(std::iter::repeat(t_start).take(degree + 1));
    let mut acc = t_start;
    for (idx, span) in spans.iter().enumerate() {
        acc += span;
        if idx + 1 < spans.len() {
            knots.push(acc);
        }
    }
    knots.extend(std::iter::repeat(acc).take(degree + 1));
    Ok(knots)
}

fn ratio(num: f64, den: f64) -> f64 {
    // 0/0 = 0; a zero denominator only occurs inside repeated boundary knots.
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Basic matrix of the segment starting at knot index `i` (`knots[i] ≤ t < knots[i+1]`).
///
/// Built with the recursion `M^{k+1} = [M^k; 0]·D0 + [0; M^k]·D1` starting from
/// `M^1 = [1]`, where row `r` of `D0` holds `(1 − d⁰_j, d⁰_j)` and row `r` of `D1`
/// holds `(−d¹_j, d¹_j)` for `j = i − k + 1 + r`, with
/// `d⁰_j = (t_i − t_j)/(t_{j+k} − t_j)` and `d¹_j = (t_{i+1} − t_i)/(t_{j+k} − t_j)`.
/// Rows of the result index powers of `u`, columns index the `degree + 1` control points.
pub fn basic_matrix(degree: usize, knots: &[f64], i: usize) -> Result<DMatrix<f64>> {
    if i < degree || i + degree >= knots.len() {
        return Err(Error::DimensionMismatch(format!(
            "knot index {i} has no full window for degree {degree} in {} knots",
            knots.len()
        )));
    }
    for idx in (i + 1 - degree)..(i + degree) {
        if knots[idx + 1] < knots[idx] {
            return Err(Error::NegativeSpan(idx));
        }
    }
    let ti = knots[i];
    let span = knots[i + 1] - ti;
    let mut m = DMatrix::<f64>::from_element(1, 1, 1.0);
    for k in 1..=degree {
        // m is k×k; build (k+1)×(k+1).
        let mut next = DMatrix::<f64>::zeros(k + 1, k + 1);
        for r in 0..k {
            let j = i + 1 + r - k;
            let den = knots[j + k] - knots[j];
            let d0 = ratio(ti - knots[j], den);
            let d1 = ratio(span, den);
            for row in 0..k {
                let v = m[(row, r)];
                if v == 0.0 {
                    continue;
                }
                // [M; 0]·D0
                next[(row, r)] += v * (1.0 - d0);
                next[(row, r + 1)] += v * d0;
                // [0; M]·D1
                next[(row + 1, r)] -= v * d1;
                next[(row + 1, r + 1)] += v * d1;
            }
        }
        m = next;
    }
    Ok(m)
}

/// Row vector of the `order`-th derivative of `[1, u, …, u^degree]` w.r.t. `u`.
pub(crate) fn power_row(degree: usize, u: f64, order: usize) -> Vec<f64> {
    let mut row = vec![0.0; degree + 1];
    for (r, slot) in row.iter_mut().enumerate().skip(order) {
        let mut coeff = 1.0;
        for f in 0..order {
            coeff *= (r - f) as f64;
        }
        *slot = coeff * u.powi((r - order) as i32);
    }
    row
}

/// Sum of spans `Δt_{lo} + … + Δt_{hi}` with out-of-range indices contributing zero.
pub fn window_sum(spans: &[f64], lo: isize, hi: isize) -> f64 {
    let m = spans.len() as isize - 1;
    let lo = lo.max(0);
    let hi = hi.min(m);
    if lo > hi {
        return 0.0;
    }
    spans[lo as usize..=hi as usize].iter().sum()
}

/// Denominator of the derivative control point `i` of a degree-`degree` spline:
/// `Δt_{i−degree+1} + … + Δt_i`.
pub fn derivative_denominator(spans: &[f64], degree: usize, i: usize) -> f64 {
    window_sum(spans, i as isize + 1 - degree as isize, i as isize)
}

/// Control points of the derivative of a degree-`degree` spline over `spans`.
pub fn differentiate_points(points: &[Point], degree: usize, spans: &[f64]) -> Result<Vec<Point>> {
    if degree == 0 || points.len() < 2 {
        return Ok(Vec::new());
    }
    let scale = degree as f64;
    (0..points.len() - 1)
        .map(|i| {
            let den = derivative_denominator(spans, degree, i);
            if den <= 0.0 {
                return Err(Error::DegenerateKnotWindow(i));
            }
            Ok((points[i + 1] - points[i]) * (scale / den))
        })
        .collect()
}

/// Velocity, acceleration and jerk control points of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeControlPoints {
    pub velocity: Vec<Point>,
    pub acceleration: Vec<Point>,
    pub jerk: Vec<Point>,
}

/// Clamped non-uniform B-spline trajectory in 3D.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineTrajectory {
    degree: usize,
    control_points: Vec<Point>,
    spans: Vec<f64>,
    t_start: f64,
    /// Segment boundary times, `spans.len() + 1` entries.
    breaks: Vec<f64>,
}

impl SplineTrajectory {
    pub fn new(degree: usize, control_points: Vec<Point>, spans: Vec<f64>, t_start: f64) -> Result<Self> {
        if spans.is_empty() {
            return Err(Error::DegenerateTrajectory("empty span list".into()));
        }
        if control_points.len() != spans.len() + degree {
            return Err(Error::DimensionMismatch(format!(
                "{} control points for {} spans of degree {degree} (expected {})",
                control_points.len(),
                spans.len(),
                spans.len() + degree
            )));
        }
        if let Some(idx) = spans.iter().position(|s| !(*s >= MIN_SPAN) || !s.is_finite()) {
            if spans[idx] < 0.0 {
                return Err(Error::NegativeSpan(idx));
            }
            return Err(Error::DegenerateTrajectory(format!("span {idx} = {} is below {MIN_SPAN}", spans[idx])));
        }
        if !t_start.is_finite() || control_points.iter().any(|q| !q.iter().all(|c| c.is_finite())) {
            return Err(Error::DegenerateTrajectory("non-finite input".into()));
        }
        let mut breaks = Vec::with_capacity(spans.len() + 1);
        let mut acc = t_start;
        breaks.push(acc);
        for s in &spans {
            acc += s;
            breaks.push(acc);
        }
        Ok(Self { degree, control_points, spans, t_start, breaks })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn control_points(&self) -> &[Point] {
        &self.control_points
    }

    pub fn spans(&self) -> &[f64] {
        &self.spans
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        *self.breaks.last().expect("at least one span")
    }

    pub fn duration(&self) -> f64 {
        self.spans.iter().sum()
    }

    /// Number of polynomial segments, `n − p + 1`.
    pub fn num_segments(&self) -> usize {
        self.spans.len()
    }

    /// Index `n` of the last control point.
    pub fn last_index(&self) -> usize {
        self.control_points.len() - 1
    }

    pub fn knots(&self) -> Vec<f64> {
        clamped_knots(&self.spans, self.degree, self.t_start).expect("validated at construction")
    }

    pub fn with_spans(&self, spans: Vec<f64>) -> Result<Self> {
        Self::new(self.degree, self.control_points.clone(), spans, self.t_start)
    }

    pub fn with_control_points(&self, control_points: Vec<Point>) -> Result<Self> {
        Self::new(self.degree, control_points, self.spans.clone(), self.t_start)
    }

    /// Segment index and normalized time for `t`. Right-continuous inside the
    /// domain; `t_end` maps to the last segment with `u = 1`. Times within rounding
    /// of either end (e.g. `t_start + duration()`) are clamped onto it.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (start, end) = (self.t_start, self.t_end());
        let slack = 4.0 * f64::EPSILON * start.abs().max(end.abs()).max(1.0);
        if !(t >= start - slack && t <= end + slack) {
            return Err(Error::OutOfDomain { t, start, end });
        }
        let t = t.clamp(start, end);
        let last = self.spans.len() - 1;
        // first break strictly greater than t, minus one
        let seg = match self.breaks[1..].partition_point(|b| *b <= t) {
            s if s > last => last,
            s => s,
        };
        let u = ((t - self.breaks[seg]) / self.spans[seg]).clamp(0.0, 1.0);
        Ok((seg, u))
    }

    /// Basic matrix of segment `seg`.
    pub fn segment_matrix(&self, seg: usize) -> Result<DMatrix<f64>> {
        if seg >= self.spans.len() {
            return Err(Error::DimensionMismatch(format!("segment {seg} of {}", self.spans.len())));
        }
        basic_matrix(self.degree, &self.knots(), self.degree + seg)
    }

    /// Basis weights of the `degree + 1` control points of segment `seg` at `u`,
    /// for the `order`-th time derivative.
    pub fn segment_weights(&self, seg: usize, u: f64, order: usize) -> Result<Vec<f64>> {
        if order > self.degree {
            return Err(Error::InvalidOrder { order, degree: self.degree });
        }
        let m = self.segment_matrix(seg)?;
        Ok(Self::weights_from_matrix(&m, self.degree, u, order, self.spans[seg]))
    }

    fn weights_from_matrix(m: &DMatrix<f64>, degree: usize, u: f64, order: usize, span: f64) -> Vec<f64> {
        let row = power_row(degree, u, order);
        let scale = span.powi(-(order as i32));
        (0..=degree)
            .map(|c| (0..=degree).map(|r| row[r] * m[(r, c)]).sum::<f64>() * scale)
            .collect()
    }

    /// Position (`order = 0`) or time derivative of order `1..=degree` at `t`.
    pub fn evaluate(&self, t: f64, order: usize) -> Result<Point> {
        if order > self.degree {
            return Err(Error::InvalidOrder { order, degree: self.degree });
        }
        let (seg, u) = self.locate(t)?;
        self.evaluate_segment(seg, u, order)
    }

    /// Evaluate inside segment `seg` at normalized time `u ∈ [0, 1]`.
    pub fn evaluate_segment(&self, seg: usize, u: f64, order: usize) -> Result<Point> {
        let w = self.segment_weights(seg, u, order)?;
        Ok(w.iter()
            .enumerate()
            .fold(Point::zeros(), |acc, (c, wc)| acc + self.control_points[seg + c] * *wc))
    }

    /// Evaluate position and the first three derivatives at `t` in one pass.
    pub fn evaluate_all(&self, t: f64) -> Result<[Point; 4]> {
        let (seg, u) = self.locate(t)?;
        let m = self.segment_matrix(seg)?;
        let mut out = [Point::zeros(); 4];
        for (order, slot) in out.iter_mut().enumerate() {
            if order > self.degree {
                break;
            }
            let w = Self::weights_from_matrix(&m, self.degree, u, order, self.spans[seg]);
            *slot = w
                .iter()
                .enumerate()
                .fold(Point::zeros(), |acc, (c, wc)| acc + self.control_points[seg + c] * *wc);
        }
        Ok(out)
    }

    pub fn derivative_control_points(&self) -> Result<DerivativeControlPoints> {
        let p = self.degree;
        let velocity = differentiate_points(&self.control_points, p, &self.spans)?;
        let acceleration = if p >= 2 { differentiate_points(&velocity, p - 1, &self.spans)? } else { Vec::new() };
        let jerk = if p >= 3 { differentiate_points(&acceleration, p - 2, &self.spans)? } else { Vec::new() };
        Ok(DerivativeControlPoints { velocity, acceleration, jerk })
    }

    /// The degree-`(p − order)` spline of the `order`-th derivative, built on the
    /// derivative control points over the same spans.
    pub fn derivative_spline(&self, order: usize) -> Result<SplineTrajectory> {
        if order > self.degree {
            return Err(Error::InvalidOrder { order, degree: self.degree });
        }
        let mut points = self.control_points.clone();
        for k in 0..order {
            points = differentiate_points(&points, self.degree - k, &self.spans)?;
        }
        SplineTrajectory::new(self.degree - order, points, self.spans.clone(), self.t_start)
    }
}

/// Local difference operator of a degree-`degree` spline: maps `count + 1` consecutive
/// points starting at global index `first` to their `count` derivative points.
fn local_difference(spans: &[f64], degree: usize, first: usize, count: usize) -> Result<DMatrix<f64>> {
    let mut d = DMatrix::zeros(count, count + 1);
    for r in 0..count {
        let den = derivative_denominator(spans, degree, first + r);
        if den <= 0.0 {
            return Err(Error::DegenerateKnotWindow(first + r));
        }
        let s = degree as f64 / den;
        d[(r, r)] = -s;
        d[(r, r + 1)] = s;
    }
    Ok(d)
}

/// Jerk-energy quadratic form of one segment.
#[derive(Debug, Clone)]
pub struct SegmentEnergy {
    /// `(p+1)×(p+1)` symmetric PSD matrix `W = Lᵀ P L`.
    pub w: DMatrix<f64>,
    /// `(p−2)×(p+1)` map from local control points to local jerk control points.
    pub l: DMatrix<f64>,
    /// `(p−2)×(p−2)` Gram matrix of the jerk basis over `u ∈ [0, 1]`.
    pub p: DMatrix<f64>,
}

/// `W_j` and `L` for segment `seg` such that the segment's `∫‖jerk‖² dt`
/// equals `Σ_axis Q_axisᵀ W Q_axis · Δt_seg`.
pub fn segment_energy_matrix(traj: &SplineTrajectory, seg: usize) -> Result<SegmentEnergy> {
    let p = traj.degree();
    if p < 3 {
        return Err(Error::InvalidOrder { order: 3, degree: p });
    }
    if seg >= traj.num_segments() {
        return Err(Error::DimensionMismatch(format!("segment {seg} of {}", traj.num_segments())));
    }
    let spans = traj.spans();
    let dv = local_difference(spans, p, seg, p)?;
    let da = local_difference(spans, p - 1, seg, p - 1)?;
    let dj = local_difference(spans, p - 2, seg, p - 2)?;
    let l = &dj * (&da * &dv);

    // Basic matrix of the degree-(p−3) jerk spline for the same segment.
    let jd = p - 3;
    let jerk_knots = clamped_knots(spans, jd, traj.t_start())?;
    let mj = basic_matrix(jd, &jerk_knots, jd + seg)?;
    let hilbert = DMatrix::from_fn(jd + 1, jd + 1, |a, b| 1.0 / (a + b + 1) as f64);
    let gram = mj.transpose() * hilbert * &mj;
    let gram = (&gram + gram.transpose()) * 0.5;
    let w = l.transpose() * &gram * &l;
    let w = (&w + w.transpose()) * 0.5;
    Ok(SegmentEnergy { w, l, p: gram })
}

/// Jerk energy of a single segment, `Σ_axis Q_axisᵀ W Q_axis · Δt`.
pub fn segment_energy(traj: &SplineTrajectory, seg: usize, energy: &SegmentEnergy) -> f64 {
    let p = traj.degree();
    let q = &traj.control_points()[seg..=seg + p];
    let mut total = 0.0;
    for axis in 0..3 {
        for a in 0..=p {
            for b in 0..=p {
                total += q[a][axis] * energy.w[(a, b)] * q[b][axis];
            }
        }
    }
    total * traj.spans()[seg]
}

/// `∫_{t_s}^{t_f} ‖jerk‖² dt` over the whole trajectory.
pub fn total_jerk_energy(traj: &SplineTrajectory) -> Result<f64> {
    let mut total = 0.0;
    for seg in 0..traj.num_segments() {
        let e = segment_energy_matrix(traj, seg)?;
        total += segment_energy(traj, seg, &e);
    }
    Ok(total.max(0.0))
}
