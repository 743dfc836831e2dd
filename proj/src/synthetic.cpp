#include "degan/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <stdexcept>

namespace degan {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Factor ranges. Base values sit at the centers of n equal bins, jitter stays
// within 15% of the bin-to-bin gap, so bins never overlap.
constexpr double kAspectLo = 0.68, kAspectHi = 1.12;
constexpr double kSpacingLo = 0.30, kSpacingHi = 0.55;
constexpr double kToneLo = 0.40, kToneHi = 0.80;
constexpr double kMouthLo = -0.90, kMouthHi = 0.90;
constexpr double kBrowLo = -0.50, kBrowHi = 0.50;
constexpr double kEyeLo = 0.35, kEyeHi = 1.00;
constexpr double kJitterFrac = 0.15;

std::vector<double> bin_centers(double lo, double hi, int n) {
    if (n < 1) throw std::invalid_argument("bin_centers: n must be >= 1");
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = lo + (hi - lo) * (i + 0.5) / n;
    return v;
}

double bin_gap(double lo, double hi, int n) { return (hi - lo) / n; }

int nearest_index(const std::vector<double>& bases, double value) {
    int best = 0;
    double best_d = std::abs(value - bases[0]);
    for (int i = 1; i < static_cast<int>(bases.size()); ++i) {
        double d = std::abs(value - bases[i]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

double coverage(double signed_dist_px) { return std::clamp(signed_dist_px + 0.5, 0.0, 1.0); }

double mix(double base, double ink, double alpha) { return base + (ink - base) * alpha; }

// Approximate pixel distance inside an ellipse boundary (positive inside).
double ellipse_dist(double dx, double dy, double rx, double ry) {
    double q = std::sqrt((dx / rx) * (dx / rx) + (dy / ry) * (dy / ry));
    return (1.0 - q) * std::min(rx, ry);
}

// Distance inside a thick segment: |perp| with end caps, thickness w.
double capsule_dist(double along_overshoot, double perp, double w) {
    return w - std::sqrt(along_overshoot * along_overshoot + perp * perp);
}

}  // namespace

std::vector<double> identity_base_aspect(int n) { return bin_centers(kAspectLo, kAspectHi, n); }
std::vector<double> identity_base_spacing(int n) { return bin_centers(kSpacingLo, kSpacingHi, n); }
std::vector<double> identity_base_tone(int n) { return bin_centers(kToneLo, kToneHi, n); }
std::vector<double> expression_base_mouth(int n) { return bin_centers(kMouthLo, kMouthHi, n); }
std::vector<double> expression_base_brow(int n) { return bin_centers(kBrowLo, kBrowHi, n); }
std::vector<double> expression_base_eye(int n) { return bin_centers(kEyeLo, kEyeHi, n); }

SyntheticFaceSpec sample_face_spec(int identity_label, int n_identities,
                                   int expr_label, int n_expressions, Rng& rng) {
    if (identity_label < 0 || identity_label >= n_identities)
        throw std::invalid_argument("sample_face_spec: identity label out of range");
    if (expr_label < 0 || expr_label >= n_expressions)
        throw std::invalid_argument("sample_face_spec: expression label out of range");
    SyntheticFaceSpec s;
    auto jitter = [&](double lo, double hi, int n) {
        return rng.uniform(-kJitterFrac, kJitterFrac) * bin_gap(lo, hi, n);
    };
    s.aspect_ratio = identity_base_aspect(n_identities)[identity_label] +
                     jitter(kAspectLo, kAspectHi, n_identities);
    s.eye_spacing = identity_base_spacing(n_identities)[identity_label] +
                    jitter(kSpacingLo, kSpacingHi, n_identities);
    s.skin_tone = identity_base_tone(n_identities)[identity_label] +
                  jitter(kToneLo, kToneHi, n_identities);
    s.mouth_curve = expression_base_mouth(n_expressions)[expr_label] +
                    jitter(kMouthLo, kMouthHi, n_expressions);
    s.brow_angle = expression_base_brow(n_expressions)[expr_label] +
                   jitter(kBrowLo, kBrowHi, n_expressions);
    s.eye_openness = expression_base_eye(n_expressions)[expr_label] +
                     jitter(kEyeLo, kEyeHi, n_expressions);
    s.illumination = rng.uniform(0.75, 1.25);
    s.shift_x = rng.uniform(-2.0, 2.0);
    s.shift_y = rng.uniform(-2.0, 2.0);
    return s;
}

int identity_label_of(const SyntheticFaceSpec& spec, int n_identities) {
    return nearest_index(identity_base_aspect(n_identities), spec.aspect_ratio);
}

int expression_label_of(const SyntheticFaceSpec& spec, int n_expressions) {
    return nearest_index(expression_base_mouth(n_expressions), spec.mouth_curve);
}

Tensor render_face(const SyntheticFaceSpec& spec, int resolution) {
    if (resolution < 16) throw std::invalid_argument("render_face: resolution too small");
    const double u = resolution / 48.0;
    const double cy = (resolution - 1) / 2.0 + spec.shift_y * u;
    const double cx = (resolution - 1) / 2.0 + spec.shift_x * u;
    const double ry = 19.0 * u;
    const double rx = ry * spec.aspect_ratio;
    const double ink = 0.10;

    const double eye_y = cy - 5.0 * u;
    const double eye_rx = 3.0 * u;
    const double eye_ry = std::max(0.6 * u, 3.2 * u * spec.eye_openness);
    const double brow_y = cy - 12.0 * u;
    const double brow_len = 3.2 * u;
    const double brow_w = 0.9 * u;
    const double mouth_y = cy + 10.0 * u;
    const double mouth_hw = 5.5 * u;
    const double mouth_depth = 4.0 * u;
    const double mouth_w = 1.1 * u;

    Tensor img({1, resolution, resolution});
    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            double g = 0.02;
            g = mix(g, spec.skin_tone, coverage(ellipse_dist(x - cx, y - cy, rx, ry)));
            for (int side = -1; side <= 1; side += 2) {
                const double ex = cx + side * spec.eye_spacing * rx;
                g = mix(g, ink, coverage(ellipse_dist(x - ex, y - eye_y, eye_rx, eye_ry)));
                // Brow: height varies linearly with distance toward the face
                // center so the drawing is mirror symmetric in the two sides.
                const double t = (x - ex) * static_cast<double>(-side);
                const double line_y = brow_y - spec.brow_angle * t;
                const double over = std::max(0.0, std::abs(x - ex) - brow_len);
                g = mix(g, ink, coverage(capsule_dist(over, y - line_y, brow_w)));
            }
            const double sx = (x - cx) / mouth_hw;
            const double curve_y = mouth_y - spec.mouth_curve * mouth_depth * (sx * sx - 0.5);
            const double over = std::max(0.0, std::abs(x - cx) - mouth_hw);
            g = mix(g, ink, coverage(capsule_dist(over, y - curve_y, mouth_w)));

            img.at(0, 0, y, x) = std::clamp(g * spec.illumination, 0.0, 1.0) * 2.0 - 1.0;
        }
    }
    return img;
}

std::vector<SyntheticFaceSpec> synthetic_specs(int n_identities, int n_expressions,
                                               int per_pair, std::uint64_t seed) {
    if (n_identities < 2 || n_expressions < 2 || per_pair < 1)
        throw std::invalid_argument("synthetic_specs: need >= 2 identities, >= 2 expressions, >= 1 per pair");
    Rng root(seed);
    std::vector<SyntheticFaceSpec> specs;
    specs.reserve(static_cast<size_t>(n_identities) * n_expressions * per_pair);
    std::uint64_t index = 0;
    for (int id = 0; id < n_identities; ++id)
        for (int e = 0; e < n_expressions; ++e)
            for (int k = 0; k < per_pair; ++k) {
                Rng r = root.split(index++);
                specs.push_back(sample_face_spec(id, n_identities, e, n_expressions, r));
            }
    return specs;
}

std::vector<LabeledImage> generate_synthetic_dataset(int n_identities, int n_expressions,
                                                     int per_pair, std::uint64_t seed,
                                                     int resolution) {
    const std::vector<SyntheticFaceSpec> specs =
        synthetic_specs(n_identities, n_expressions, per_pair, seed);
    std::vector<LabeledImage> out;
    out.reserve(specs.size());
    size_t i = 0;
    for (int id = 0; id < n_identities; ++id) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "s%02d", id);
        for (int e = 0; e < n_expressions; ++e)
            for (int k = 0; k < per_pair; ++k) {
                LabeledImage sample;
                sample.pixels = render_face(specs[i++], resolution);
                sample.expr_label = e;
                sample.identity_label = id;
                sample.subject_id = buf;
                out.push_back(std::move(sample));
            }
    }
    return out;
}

void save_synthetic_dataset(const std::vector<LabeledImage>& dataset, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::map<std::pair<std::string, int>, int> counters;
    for (const auto& sample : dataset) {
        const fs::path dir = fs::path(out_dir) / sample.subject_id / std::to_string(sample.expr_label);
        fs::create_directories(dir);
        int& n = counters[{sample.subject_id, sample.expr_label}];
        char name[16];
        std::snprintf(name, sizeof(name), "%04d.png", n++);
        write_png((dir / name).string(), tensor_to_image(sample.pixels));
    }
}

// ---------------------------------------------------------------------------
// Geometric read-back
// ---------------------------------------------------------------------------

MeasuredFactors measure_factors(const Tensor& image) {
    if (image.ndim() != 3) throw std::invalid_argument("measure_factors: want (C,H,W)");
    const int c_n = static_cast<int>(image.dim(0));
    const int h = static_cast<int>(image.dim(1));
    const int w = static_cast<int>(image.dim(2));
    // Gray in [0,1], channel-averaged.
    std::vector<double> g(static_cast<size_t>(h) * w, 0.0);
    for (int c = 0; c < c_n; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                g[static_cast<size_t>(y) * w + x] += (image.at(0, c, y, x) + 1.0) * 0.5 / c_n;

    MeasuredFactors m;
    // Face region: brighter than both background and ink features.
    int ymin = h, ymax = -1, xmin = w, xmax = -1, face_count = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (g[static_cast<size_t>(y) * w + x] > 0.22) {
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ++face_count;
            }
    if (face_count < 16 || ymax <= ymin || xmax <= xmin) return m;

    const double cy = 0.5 * (ymin + ymax), cx = 0.5 * (xmin + xmax);
    const double ry = 0.5 * (ymax - ymin), rx = 0.5 * (xmax - xmin);
    const double u = ry / 19.0;
    m.aspect_ratio = rx / ry;
    m.center_x = cx;
    m.center_y = cy;

    // Feature pixels: dark and well inside the face ellipse.
    struct Px {
        int x, y;
    };
    std::vector<Px> brow, eye, mouth;
    double tone_sum = 0;
    int tone_count = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double q = ((x - cx) / (rx * 0.93)) * ((x - cx) / (rx * 0.93)) +
                             ((y - cy) / (ry * 0.93)) * ((y - cy) / (ry * 0.93));
            if (q >= 1.0) continue;
            const double v = g[static_cast<size_t>(y) * w + x];
            if (v >= 0.22) {
                tone_sum += v;
                ++tone_count;
            }
            if (v >= 0.18) continue;
            const double rel = y - cy;
            if (rel < -9.5 * u)
                brow.push_back({x, y});
            else if (rel < -1.5 * u)
                eye.push_back({x, y});
            else if (rel >= 3.5 * u)
                mouth.push_back({x, y});
        }
    if (tone_count > 0) m.face_tone = tone_sum / tone_count;

    // Eye spacing and openness from the eye-band blobs.
    if (!eye.empty()) {
        double lx = 0, rxs = 0;
        int ln = 0, rn = 0;
        for (const Px& p : eye)
            (p.x < cx ? (lx += p.x, ++ln) : (rxs += p.x, ++rn));
        if (ln > 0 && rn > 0) {
            m.eye_spacing = ((rxs / rn) - (lx / ln)) * 0.5 / rx;
            const double area_per_eye = 0.5 * static_cast<double>(eye.size());
            m.eye_openness = area_per_eye / (kPi * 3.0 * u) / (3.2 * u);
        }
    }

    // Brow angle from per-side least-squares slopes.
    auto slope = [](const std::vector<Px>& pts) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (const Px& p : pts) {
            sx += p.x;
            sy += p.y;
            sxx += static_cast<double>(p.x) * p.x;
            sxy += static_cast<double>(p.x) * p.y;
        }
        const double n = static_cast<double>(pts.size());
        const double den = n * sxx - sx * sx;
        return den > 1e-9 ? (n * sxy - sx * sy) / den : 0.0;
    };
    std::vector<Px> brow_l, brow_r;
    for (const Px& p : brow) (p.x < cx ? brow_l : brow_r).push_back(p);
    if (brow_l.size() >= 3 && brow_r.size() >= 3)
        m.brow_angle = 0.5 * (slope(brow_r) - slope(brow_l));

    // Mouth curvature from a quadratic fit of per-column centroids.
    if (!mouth.empty()) {
        std::map<int, std::pair<double, int>> columns;  // x -> (sum y, count)
        for (const Px& p : mouth) {
            auto& e = columns[p.x];
            e.first += p.y;
            e.second += 1;
        }
        if (columns.size() >= 5) {
            // Fit y = a + b s + c s^2, s = (x - cx) / (5.5 u).
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, t0 = 0, t1 = 0, t2 = 0;
            for (const auto& [x, e] : columns) {
                const double s = (x - cx) / (5.5 * u);
                const double yc = e.first / e.second;
                const double ss = s * s;
                s0 += 1;
                s1 += s;
                s2 += ss;
                s3 += ss * s;
                s4 += ss * ss;
                t0 += yc;
                t1 += s * yc;
                t2 += ss * yc;
            }
            // Cramer's rule on the 3x3 normal equations.
            const double det = s0 * (s2 * s4 - s3 * s3) - s1 * (s1 * s4 - s2 * s3) +
                               s2 * (s1 * s3 - s2 * s2);
            if (std::abs(det) > 1e-9) {
                const double det_c = s0 * (s2 * t2 - s3 * t1) - s1 * (s1 * t2 - s2 * t1) +
                                     t0 * (s1 * s3 - s2 * s2);
                const double c = det_c / det;
                m.mouth_curve = -c / (4.0 * u);
            }
        }
    }
    m.valid = true;
    return m;
}

// ---------------------------------------------------------------------------
// Prototype oracle
// ---------------------------------------------------------------------------

namespace {

Tensor zscore_gray(const Tensor& image) {
    const int c_n = static_cast<int>(image.dim(0));
    const int h = static_cast<int>(image.dim(1));
    const int w = static_cast<int>(image.dim(2));
    Tensor g({1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 0;
            for (int c = 0; c < c_n; ++c) v += image.at(0, c, y, x);
            g.at(0, 0, y, x) = v / c_n;
        }
    double mean = 0;
    for (long i = 0; i < g.numel(); ++i) mean += g.data()[i];
    mean /= static_cast<double>(g.numel());
    double var = 0;
    for (long i = 0; i < g.numel(); ++i) {
        const double d = g.data()[i] - mean;
        var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(g.numel()));
    const double inv = 1.0 / std::max(sd, 1e-12);
    for (long i = 0; i < g.numel(); ++i) g.data()[i] = (g.data()[i] - mean) * inv;
    return g;
}

Tensor translate_replicate(const Tensor& g, int dy, int dx) {
    const int h = static_cast<int>(g.dim(1));
    const int w = static_cast<int>(g.dim(2));
    Tensor out({1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int sy = std::clamp(y - dy, 0, h - 1);
            const int sx = std::clamp(x - dx, 0, w - 1);
            out.at(0, 0, y, x) = g.at(0, 0, sy, sx);
        }
    return out;
}

}  // namespace

FactorOracle::FactorOracle(int n_identities, int n_expressions, int resolution)
    : n_identities_(n_identities), n_expressions_(n_expressions), resolution_(resolution) {
    if (n_identities < 2 || n_expressions < 2)
        throw std::invalid_argument("FactorOracle: need >= 2 identities and expressions");
    const auto ar = identity_base_aspect(n_identities);
    const auto es = identity_base_spacing(n_identities);
    const auto st = identity_base_tone(n_identities);
    const auto mc = expression_base_mouth(n_expressions);
    const auto ba = expression_base_brow(n_expressions);
    const auto eo = expression_base_eye(n_expressions);
    prototypes_.reserve(static_cast<size_t>(n_identities) * n_expressions);
    for (int id = 0; id < n_identities; ++id)
        for (int e = 0; e < n_expressions; ++e) {
            SyntheticFaceSpec s;
            s.aspect_ratio = ar[id];
            s.eye_spacing = es[id];
            s.skin_tone = st[id];
            s.mouth_curve = mc[e];
            s.brow_angle = ba[e];
            s.eye_openness = eo[e];
            s.illumination = 1.0;
            s.shift_x = s.shift_y = 0.0;
            prototypes_.push_back(zscore_gray(render_face(s, resolution)));
        }
}

std::pair<int, int> FactorOracle::classify(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(1) != resolution_ || image.dim(2) != resolution_)
        throw std::invalid_argument("FactorOracle: image resolution mismatch, got " + image.shape_str());
    const Tensor base = zscore_gray(image);
    double best = std::numeric_limits<double>::infinity();
    int best_proto = 0;
    for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
            const Tensor q = zscore_gray(translate_replicate(base, dy, dx));
            for (size_t p = 0; p < prototypes_.size(); ++p) {
                double d = 0;
                const double* a = q.data();
                const double* b = prototypes_[p].data();
                for (long i = 0; i < q.numel(); ++i) {
                    const double diff = a[i] - b[i];
                    d += diff * diff;
                }
                if (d < best) {
                    best = d;
                    best_proto = static_cast<int>(p);
                }
            }
        }
    return {best_proto % n_expressions_, best_proto / n_expressions_};
}

}  // namespace degan
