#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "degan/png_io.hpp"
#include "degan/tensor.hpp"

namespace degan {

/// One training/evaluation sample. `pixels` is (C, H, W) with values in
/// [-1, 1]; `subject_id` groups all images of one person for fold splitting.
struct LabeledImage {
    Tensor pixels;
    int expr_label = 0;
    int identity_label = 0;
    std::string subject_id;
};

// ---------------------------------------------------------------------------
// Pixel conversions
// ---------------------------------------------------------------------------

/// 8-bit image -> (C, H, W) tensor in [-1, 1].
Tensor image_to_tensor(const Image8& img);

/// (C, H, W) tensor in [-1, 1] -> 8-bit image (clamped, rounded).
Image8 tensor_to_image(const Tensor& chw);

/// Tile (C, H, W) tensors into one image, `cols` per row, 2 px separators.
Image8 tile_grid(const std::vector<Tensor>& images, int cols);

// ---------------------------------------------------------------------------
// Geometric primitives (all deterministic; used by the augmenter)
// ---------------------------------------------------------------------------

Tensor crop(const Tensor& chw, int top, int left, int size);
Tensor hflip(const Tensor& chw);

/// Rotate about the image center by `angle_deg` (counterclockwise, y down),
/// bilinear resampling, edge replication. Sample coordinates are quantized
/// to 2^-20 px so that mirrored inputs produce exactly mirrored outputs.
Tensor rotate(const Tensor& chw, double angle_deg);

// ---------------------------------------------------------------------------
// Augmentation: 5 crops x 11 rotation variants x {identity, hflip} = 110
// ---------------------------------------------------------------------------

struct AugmentVariant {
    int crop_index;    // 0 center, 1 TL, 2 TR, 3 BL, 4 BR
    double angle_deg;  // 0 or one of +-3, +-6, +-9, +-12, +-15
    bool flipped;
};

/// The 110 variants in output order. Entry 2k+1 is the horizontal flip of
/// entry 2k.
const std::vector<AugmentVariant>& augment_plan();

/// Deterministic 110-way expansion of one image; labels copied unchanged.
/// Throws std::invalid_argument if the image is smaller than the crop window.
std::vector<LabeledImage> augment(const LabeledImage& image, int crop_size);

// ---------------------------------------------------------------------------
// Subject-disjoint folds
// ---------------------------------------------------------------------------

struct FoldSpec {
    int k = 0;
    std::map<std::string, int> assignments;  // subject_id -> fold index

    std::vector<std::vector<std::string>> subjects_per_fold() const;
    /// Plain-text audit table: one "subject_id<TAB>fold" line per subject.
    void save_text(const std::string& path) const;
    static FoldSpec load_text(const std::string& path);
};

/// Partition subjects into k folds of near-equal size (|size_i - size_j| <= 1),
/// deterministically for a fixed seed.
FoldSpec make_folds(const std::vector<LabeledImage>& dataset, int k, std::uint64_t seed);

/// Indices of `dataset` whose subject is / is not in fold `fold_index`.
std::vector<size_t> fold_test_indices(const std::vector<LabeledImage>& dataset,
                                      const FoldSpec& folds, int fold_index);
std::vector<size_t> fold_train_indices(const std::vector<LabeledImage>& dataset,
                                       const FoldSpec& folds, int fold_index);

// ---------------------------------------------------------------------------
// Directory ingestion: <root>/<subject_id>/<expr_label>/<image>.png
// ---------------------------------------------------------------------------

struct IngestOptions {
    /// Keep only the last N files (by name order) of each <subject>/<expr>
    /// directory; 0 keeps all. Sequences are assumed to be one directory.
    int last_n_frames = 0;
};

std::vector<LabeledImage> load_image_dataset(const std::string& root,
                                             const IngestOptions& options = {});

/// Number of distinct expression / identity labels present.
int count_expressions(const std::vector<LabeledImage>& dataset);
int count_identities(const std::vector<LabeledImage>& dataset);

}  // namespace degan
