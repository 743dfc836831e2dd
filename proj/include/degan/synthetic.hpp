#pragma once

#include <cstdint>
#include <vector>

#include "degan/data.hpp"
#include "degan/rng.hpp"
#include "degan/tensor.hpp"

namespace degan {

/// Generative factors of one synthetic face. Identity factors (face aspect
/// ratio, eye spacing, skin tone) and expression factors (mouth curve, brow
/// angle, eye openness) are drawn from per-label disjoint ranges; nuisance
/// factors (illumination, shift) vary freely.
struct SyntheticFaceSpec {
    double aspect_ratio = 0.9;   // face half-width / half-height
    double eye_spacing = 0.42;   // eye center offset as fraction of half-width
    double skin_tone = 0.6;      // base gray of the face region
    double mouth_curve = 0.0;    // + = corners up
    double brow_angle = 0.0;     // + = inner ends up
    double eye_openness = 0.7;   // vertical eye extent, 0..1
    double illumination = 1.0;   // global gain in [0.75, 1.25]
    double shift_x = 0.0;        // px at 48-px scale
    double shift_y = 0.0;
};

/// Per-label base factor values, evenly spread over fixed ranges. Sampled
/// factors jitter at most 15% of the inter-label gap around the base, so
/// label ranges never overlap and every label is recoverable from factors.
std::vector<double> identity_base_aspect(int n_identities);
std::vector<double> identity_base_spacing(int n_identities);
std::vector<double> identity_base_tone(int n_identities);
std::vector<double> expression_base_mouth(int n_expressions);
std::vector<double> expression_base_brow(int n_expressions);
std::vector<double> expression_base_eye(int n_expressions);

/// Draw one spec for (identity, expression); consumes exactly the rng stream.
SyntheticFaceSpec sample_face_spec(int identity_label, int n_identities,
                                   int expr_label, int n_expressions, Rng& rng);

/// Nearest-base-factor label recovery (exact on sampled specs by construction).
int identity_label_of(const SyntheticFaceSpec& spec, int n_identities);
int expression_label_of(const SyntheticFaceSpec& spec, int n_expressions);

/// Render to a (1, res, res) grayscale tensor in [-1, 1]. Antialiased,
/// deterministic, every shape scales with res/48.
Tensor render_face(const SyntheticFaceSpec& spec, int resolution);

/// Specs for the full dataset in the exact order generate_synthetic_dataset
/// uses: outer identity, then expression, then sample index. Image i depends
/// only on (seed, i), never on how many other images are generated.
std::vector<SyntheticFaceSpec> synthetic_specs(int n_identities, int n_expressions,
                                               int per_pair, std::uint64_t seed);

/// n_identities * n_expressions * per_pair rendered faces; subject ids are
/// "s00".."sNN" and labels follow the spec order above.
std::vector<LabeledImage> generate_synthetic_dataset(int n_identities, int n_expressions,
                                                     int per_pair, std::uint64_t seed,
                                                     int resolution = 48);

/// Write the dataset as <out>/<subject>/<expr>/<index>.png.
void save_synthetic_dataset(const std::vector<LabeledImage>& dataset, const std::string& out_dir);

// ---------------------------------------------------------------------------
// Geometric read-back of factors from a rendered image
// ---------------------------------------------------------------------------

struct MeasuredFactors {
    double aspect_ratio = 0;
    double eye_spacing = 0;
    double face_tone = 0;  // skin tone * illumination; ambiguous by design
    double mouth_curve = 0;
    double brow_angle = 0;
    double eye_openness = 0;
    double center_x = 0;  // face center, px
    double center_y = 0;
    bool valid = false;  // false when no face-like region was found
};

/// Measure factors from a (1, H, W) or (3, H, W) image by thresholding and
/// region statistics. Intended for clean renders; tolerant of small noise.
MeasuredFactors measure_factors(const Tensor& image);

// ---------------------------------------------------------------------------
// Prototype oracle: classify arbitrary (e.g. generated) images by nearest
// canonical render under z-scoring and a small translation search.
// ---------------------------------------------------------------------------

class FactorOracle {
public:
    FactorOracle(int n_identities, int n_expressions, int resolution);

    int n_identities() const { return n_identities_; }
    int n_expressions() const { return n_expressions_; }

    /// (expression, identity) of the nearest prototype.
    std::pair<int, int> classify(const Tensor& image) const;
    int classify_expression(const Tensor& image) const { return classify(image).first; }
    int classify_identity(const Tensor& image) const { return classify(image).second; }

private:
    int n_identities_;
    int n_expressions_;
    int resolution_;
    std::vector<Tensor> prototypes_;  // z-scored, index = id * n_expr + expr
};

}  // namespace degan
