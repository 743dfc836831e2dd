#include "degan/data.hpp"

#include "degan/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

namespace degan {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Pixel conversions
// ---------------------------------------------------------------------------

Tensor image_to_tensor(const Image8& img) {
    Tensor t({img.channels, img.height, img.width});
    double* p = t.data();
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                *p++ = img.at(y, x, c) / 255.0 * 2.0 - 1.0;
    return t;
}

Image8 tensor_to_image(const Tensor& chw) {
    if (chw.ndim() != 3) throw std::invalid_argument("tensor_to_image: want (C,H,W), got " + chw.shape_str());
    const int c_n = static_cast<int>(chw.dim(0));
    const int h = static_cast<int>(chw.dim(1));
    const int w = static_cast<int>(chw.dim(2));
    if (c_n != 1 && c_n != 3) throw std::invalid_argument("tensor_to_image: channels must be 1 or 3");
    Image8 img;
    img.width = w;
    img.height = h;
    img.channels = c_n;
    img.pixels.resize(static_cast<size_t>(w) * h * c_n);
    const double* p = chw.data();
    for (int c = 0; c < c_n; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double v = (*p++ + 1.0) * 0.5 * 255.0;
                v = std::clamp(v, 0.0, 255.0);
                img.pixels[(static_cast<size_t>(y) * w + x) * c_n + c] =
                    static_cast<unsigned char>(std::lround(v));
            }
    return img;
}

Image8 tile_grid(const std::vector<Tensor>& images, int cols) {
    if (images.empty() || cols <= 0) throw std::invalid_argument("tile_grid: empty input or cols <= 0");
    const int pad = 2;
    const int c_n = static_cast<int>(images[0].dim(0));
    const int h = static_cast<int>(images[0].dim(1));
    const int w = static_cast<int>(images[0].dim(2));
    const int n = static_cast<int>(images.size());
    const int rows = (n + cols - 1) / cols;
    Image8 canvas;
    canvas.channels = c_n;
    canvas.width = cols * w + (cols + 1) * pad;
    canvas.height = rows * h + (rows + 1) * pad;
    canvas.pixels.assign(static_cast<size_t>(canvas.width) * canvas.height * c_n, 96);
    for (int i = 0; i < n; ++i) {
        if (!images[i].same_shape(images[0]))
            throw std::invalid_argument("tile_grid: images must share one shape");
        Image8 tile = tensor_to_image(images[i]);
        const int oy = pad + (i / cols) * (h + pad);
        const int ox = pad + (i % cols) * (w + pad);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < c_n; ++c)
                    canvas.pixels[(static_cast<size_t>(oy + y) * canvas.width + ox + x) * c_n + c] =
                        tile.at(y, x, c);
    }
    return canvas;
}

// ---------------------------------------------------------------------------
// Geometric primitives
// ---------------------------------------------------------------------------

Tensor crop(const Tensor& chw, int top, int left, int size) {
    if (chw.ndim() != 3) throw std::invalid_argument("crop: want (C,H,W)");
    const long c_n = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    if (size <= 0 || top < 0 || left < 0 || top + size > h || left + size > w)
        throw std::invalid_argument("crop: window out of bounds");
    Tensor out({c_n, size, size});
    for (long c = 0; c < c_n; ++c)
        for (long y = 0; y < size; ++y)
            for (long x = 0; x < size; ++x)
                out.at(0, c, y, x) = chw.at(0, c, top + y, left + x);
    return out;
}

Tensor hflip(const Tensor& chw) {
    if (chw.ndim() != 3) throw std::invalid_argument("hflip: want (C,H,W)");
    const long c_n = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    Tensor out(chw.shape());
    for (long c = 0; c < c_n; ++c)
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x)
                out.at(0, c, y, x) = chw.at(0, c, y, w - 1 - x);
    return out;
}

// Sampling offsets from the image center are rounded to multiples of 2^-20 px
// and carried in 64-bit fixed point. The center in fixed point is
// (W-1)*2^19, an even integer, so the mirror map x -> (W-1)-x is exact and
// rotate() commutes bit-for-bit with hflip(): rotate(hflip(i), -a) ==
// hflip(rotate(i, a)).
Tensor rotate(const Tensor& chw, double angle_deg) {
    if (chw.ndim() != 3) throw std::invalid_argument("rotate: want (C,H,W)");
    const long c_n = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    constexpr double kFix = 1048576.0;  // 2^20
    constexpr long long kFixI = 1048576;
    const double rad = angle_deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const long long cfy = (h - 1) * (kFixI / 2);
    const long long cfx = (w - 1) * (kFixI / 2);
    const double cy0 = (h - 1) / 2.0, cx0 = (w - 1) / 2.0;

    Tensor out(chw.shape());
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            const double dx = x - cx0, dy = y - cy0;
            const long long sx = cfx + std::llrint((cs * dx + sn * dy) * kFix);
            const long long sy = cfy + std::llrint((cs * dy - sn * dx) * kFix);
            const long long x0 = sx >> 20, y0 = sy >> 20;
            const double fx = static_cast<double>(sx & (kFixI - 1)) / kFix;
            const double fy = static_cast<double>(sy & (kFixI - 1)) / kFix;
            const long xi0 = static_cast<long>(std::clamp<long long>(x0, 0, w - 1));
            const long xi1 = static_cast<long>(std::clamp<long long>(x0 + 1, 0, w - 1));
            const long yi0 = static_cast<long>(std::clamp<long long>(y0, 0, h - 1));
            const long yi1 = static_cast<long>(std::clamp<long long>(y0 + 1, 0, h - 1));
            for (long c = 0; c < c_n; ++c) {
                const double r0 = (1.0 - fx) * chw.at(0, c, yi0, xi0) + fx * chw.at(0, c, yi0, xi1);
                const double r1 = (1.0 - fx) * chw.at(0, c, yi1, xi0) + fx * chw.at(0, c, yi1, xi1);
                out.at(0, c, y, x) = (1.0 - fy) * r0 + fy * r1;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

const std::vector<AugmentVariant>& augment_plan() {
    static const std::vector<AugmentVariant> plan = [] {
        const double angles[11] = {0, -15, -12, -9, -6, -3, 3, 6, 9, 12, 15};
        std::vector<AugmentVariant> p;
        p.reserve(110);
        for (int ci = 0; ci < 5; ++ci)
            for (int ai = 0; ai < 11; ++ai)
                for (int fi = 0; fi < 2; ++fi)
                    p.push_back({ci, angles[ai], fi == 1});
        return p;
    }();
    return plan;
}

std::vector<LabeledImage> augment(const LabeledImage& image, int crop_size) {
    const Tensor& px = image.pixels;
    if (px.ndim() != 3) throw std::invalid_argument("augment: want (C,H,W) pixels");
    const long h = px.dim(1), w = px.dim(2);
    if (crop_size <= 0 || crop_size > h || crop_size > w)
        throw std::invalid_argument("augment: crop_size " + std::to_string(crop_size) +
                                    " does not fit " + px.shape_str());
    const int ct = static_cast<int>((h - crop_size) / 2);
    const int cl = static_cast<int>((w - crop_size) / 2);
    const int bt = static_cast<int>(h - crop_size);
    const int bl = static_cast<int>(w - crop_size);
    // center, top-left, top-right, bottom-left, bottom-right
    const int tops[5] = {ct, 0, 0, bt, bt};
    const int lefts[5] = {cl, 0, bl, 0, bl};

    std::vector<LabeledImage> out;
    out.reserve(110);
    for (int ci = 0; ci < 5; ++ci) {
        const Tensor cropped = crop(px, tops[ci], lefts[ci], crop_size);
        const double angles[11] = {0, -15, -12, -9, -6, -3, 3, 6, 9, 12, 15};
        for (double a : angles) {
            Tensor rot = rotate(cropped, a);
            LabeledImage v{rot, image.expr_label, image.identity_label, image.subject_id};
            LabeledImage f{hflip(rot), image.expr_label, image.identity_label, image.subject_id};
            out.push_back(std::move(v));
            out.push_back(std::move(f));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> FoldSpec::subjects_per_fold() const {
    std::vector<std::vector<std::string>> out(k);
    for (const auto& [subject, fold] : assignments) {
        if (fold < 0 || fold >= k) throw std::runtime_error("FoldSpec: fold index out of range");
        out[fold].push_back(subject);
    }
    return out;
}

void FoldSpec::save_text(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("FoldSpec: cannot write " + path);
    f << "k " << k << "\n";
    for (const auto& [subject, fold] : assignments) f << subject << "\t" << fold << "\n";
}

FoldSpec FoldSpec::load_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("FoldSpec: cannot read " + path);
    FoldSpec spec;
    std::string tag;
    if (!(f >> tag >> spec.k) || tag != "k") throw std::runtime_error("FoldSpec: bad header in " + path);
    std::string subject;
    int fold;
    while (f >> subject >> fold) spec.assignments[subject] = fold;
    return spec;
}

FoldSpec make_folds(const std::vector<LabeledImage>& dataset, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("make_folds: k must be >= 2");
    std::set<std::string> distinct;
    for (const auto& s : dataset) distinct.insert(s.subject_id);
    if (static_cast<int>(distinct.size()) < k)
        throw std::invalid_argument("make_folds: fewer subjects than folds");
    std::vector<std::string> subjects(distinct.begin(), distinct.end());
    Rng rng(seed);
    for (size_t i = subjects.size() - 1; i > 0; --i) {
        size_t j = static_cast<size_t>(rng.uniform_int(static_cast<long>(i) + 1));
        std::swap(subjects[i], subjects[j]);
    }
    FoldSpec spec;
    spec.k = k;
    for (size_t i = 0; i < subjects.size(); ++i)
        spec.assignments[subjects[i]] = static_cast<int>(i % k);
    return spec;
}

std::vector<size_t> fold_test_indices(const std::vector<LabeledImage>& dataset,
                                      const FoldSpec& folds, int fold_index) {
    std::vector<size_t> out;
    for (size_t i = 0; i < dataset.size(); ++i) {
        auto it = folds.assignments.find(dataset[i].subject_id);
        if (it == folds.assignments.end())
            throw std::runtime_error("fold_test_indices: subject missing from folds: " + dataset[i].subject_id);
        if (it->second == fold_index) out.push_back(i);
    }
    return out;
}

std::vector<size_t> fold_train_indices(const std::vector<LabeledImage>& dataset,
                                       const FoldSpec& folds, int fold_index) {
    std::vector<size_t> out;
    for (size_t i = 0; i < dataset.size(); ++i) {
        auto it = folds.assignments.find(dataset[i].subject_id);
        if (it == folds.assignments.end())
            throw std::runtime_error("fold_train_indices: subject missing from folds: " + dataset[i].subject_id);
        if (it->second != fold_index) out.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

namespace {

int parse_label_dir(const std::string& name) {
    int value = 0;
    auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), value);
    if (ec != std::errc() || ptr != name.data() + name.size() || value < 0)
        throw std::invalid_argument("dataset: expression directory is not a nonnegative integer: " + name);
    return value;
}

std::vector<std::string> sorted_dir_names(const fs::path& dir, bool want_dirs) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (want_dirs ? e.is_directory() : e.is_regular_file())
            names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace

std::vector<LabeledImage> load_image_dataset(const std::string& root, const IngestOptions& options) {
    if (!fs::is_directory(root)) throw std::invalid_argument("dataset: not a directory: " + root);
    const std::vector<std::string> subjects = sorted_dir_names(root, true);
    if (subjects.empty()) throw std::invalid_argument("dataset: no subject directories in " + root);

    // First pass: collect raw expression labels so they can be remapped to a
    // contiguous [0, N_e) range across the whole dataset.
    std::set<int> raw_labels;
    for (const auto& subject : subjects)
        for (const auto& expr : sorted_dir_names(fs::path(root) / subject, true))
            raw_labels.insert(parse_label_dir(expr));
    if (raw_labels.empty()) throw std::invalid_argument("dataset: no expression directories under " + root);
    std::map<int, int> remap;
    for (int raw : raw_labels) remap.emplace(raw, static_cast<int>(remap.size()));

    std::vector<LabeledImage> out;
    for (size_t si = 0; si < subjects.size(); ++si) {
        const fs::path sdir = fs::path(root) / subjects[si];
        for (const auto& expr : sorted_dir_names(sdir, true)) {
            const int label = remap.at(parse_label_dir(expr));
            std::vector<std::string> files = sorted_dir_names(sdir / expr, false);
            std::erase_if(files, [](const std::string& f) { return !f.ends_with(".png"); });
            if (options.last_n_frames > 0 && static_cast<int>(files.size()) > options.last_n_frames)
                files.erase(files.begin(), files.end() - options.last_n_frames);
            for (const auto& file : files) {
                LabeledImage sample;
                sample.pixels = image_to_tensor(read_png((sdir / expr / file).string()));
                sample.expr_label = label;
                sample.identity_label = static_cast<int>(si);
                sample.subject_id = subjects[si];
                out.push_back(std::move(sample));
            }
        }
    }
    if (out.empty()) throw std::invalid_argument("dataset: no .png files under " + root);
    return out;
}

int count_expressions(const std::vector<LabeledImage>& dataset) {
    std::set<int> s;
    for (const auto& d : dataset) s.insert(d.expr_label);
    return static_cast<int>(s.size());
}

int count_identities(const std::vector<LabeledImage>& dataset) {
    std::set<int> s;
    for (const auto& d : dataset) s.insert(d.identity_label);
    return static_cast<int>(s.size());
}

}  // namespace degan
